use nalgebra::{Matrix2, Vector2, Vector3, Vector4, Vector6};
use rayon::prelude::*;

use super::project::{project_backward, project_state, ProjectionState};
use super::{sigmoid, GaussianScene};
use crate::error::{Error, Result};
use crate::geometry::{CameraIntrinsics, Image, Mask, PoseSE3};

/// Upper bound on the per-pixel opacity of a single Gaussian.
pub const ALPHA_CLAMP: f64 = 0.99;
/// Compositing of a pixel stops once its transmittance drops below this.
pub const TRANSMITTANCE_CUTOFF: f64 = 1e-4;
/// Screen-space footprint half-width in standard deviations.
const EXTENT_SIGMAS: f64 = 3.0;
const TILE: usize = 8;

/// Rendered image plus per-pixel coverage.
#[derive(Debug, Clone)]
pub struct RenderOutput {
    pub color: Image,
    /// Accumulated opacity `1 - T` per pixel.
    pub alpha: Vec<f64>,
    /// Number of pixels each Gaussian contributed to (0 when culled).
    pub touched: Vec<u32>,
}

/// Gradients of a scalar loss with respect to every Gaussian field and the
/// view transform.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneGradients {
    pub means: Vec<Vector3<f64>>,
    pub log_scales: Vec<Vector3<f64>>,
    pub rotations: Vec<Vector4<f64>>,
    pub opacity_logits: Vec<f64>,
    pub colors: Vec<Vector3<f64>>,
    /// `[omega; v]` for the perturbation `view <- exp(delta) * view`.
    pub view: Vector6<f64>,
}

impl SceneGradients {
    pub fn zeros(n: usize) -> Self {
        Self {
            means: vec![Vector3::zeros(); n],
            log_scales: vec![Vector3::zeros(); n],
            rotations: vec![Vector4::zeros(); n],
            opacity_logits: vec![0.0; n],
            colors: vec![Vector3::zeros(); n],
            view: Vector6::zeros(),
        }
    }
}

#[derive(Debug, Clone)]
struct Splat {
    index: usize,
    mean: Vector2<f64>,
    /// Inverse 2D covariance `[a, b, c]` for `[[a, b], [b, c]]`.
    conic: [f64; 3],
    opacity: f64,
    color: Vector3<f64>,
    /// Inclusive pixel-center bounds `[x0, x1, y0, y1]`.
    bounds: [f64; 4],
}

impl Splat {
    #[inline]
    fn covers(&self, x: f64, y: f64) -> bool {
        x >= self.bounds[0] && x <= self.bounds[1] && y >= self.bounds[2] && y <= self.bounds[3]
    }
}

/// Per-splat screen-space gradient accumulator:
/// `[d mean.x, d mean.y, d a, d b, d c, d opacity_logit, d r, d g, d b]`.
type SplatGrad = [f64; 9];

#[derive(Clone, Copy)]
struct Contribution {
    slot: usize,
    alpha: f64,
    transmittance: f64,
    density: f64,
    dx: f64,
    dy: f64,
    clamped: bool,
}

/// A scene prepared for one view: projected, culled, distance-sorted and
/// binned into screen tiles. Forward and backward passes share it.
pub struct Rasterizer<'a> {
    scene: &'a GaussianScene,
    view: PoseSE3,
    intrinsics: CameraIntrinsics,
    states: Vec<Option<ProjectionState>>,
    splats: Vec<Splat>,
    tiles_x: usize,
    tiles: Vec<Vec<u32>>,
}

impl<'a> Rasterizer<'a> {
    /// `view` maps world points into the camera frame (the inverse of the
    /// camera pose).
    pub fn new(scene: &'a GaussianScene, view: &PoseSE3, intrinsics: &CameraIntrinsics) -> Self {
        let k = *intrinsics;
        let states: Vec<Option<ProjectionState>> = scene
            .gaussians
            .par_iter()
            .map(|g| project_state(g, view, &k))
            .collect();
        let w_max = k.width as f64 - 1.0;
        let h_max = k.height as f64 - 1.0;
        let mut splats: Vec<(f64, Splat)> = states
            .iter()
            .enumerate()
            .filter_map(|(index, s)| {
                let s = s.as_ref()?;
                let p = &s.proj;
                let det = p.cov2d.determinant();
                if !(det > 0.0) {
                    return None;
                }
                let (a, b, c) = (p.cov2d[(0, 0)], p.cov2d[(0, 1)], p.cov2d[(1, 1)]);
                let mid = 0.5 * (a + c);
                let lambda_max = mid + (mid * mid - det).max(0.0).sqrt();
                let radius = EXTENT_SIGMAS * lambda_max.sqrt();
                let bounds = [
                    (p.mean2d.x - radius).max(0.0).ceil(),
                    (p.mean2d.x + radius).min(w_max).floor(),
                    (p.mean2d.y - radius).max(0.0).ceil(),
                    (p.mean2d.y + radius).min(h_max).floor(),
                ];
                if !(bounds[0] <= bounds[1] && bounds[2] <= bounds[3]) {
                    return None;
                }
                let g = &scene.gaussians[index];
                // Distance, not z: equal-z rows (walls, floors) would swap
                // order under arbitrarily small rotations.
                Some((
                    s.cam.norm(),
                    Splat {
                        index,
                        mean: p.mean2d,
                        conic: [c / det, -b / det, a / det],
                        opacity: sigmoid(g.opacity_logit),
                        color: g.color,
                        bounds,
                    },
                ))
            })
            .collect();
        splats.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.index.cmp(&b.1.index)));
        let splats: Vec<Splat> = splats.into_iter().map(|(_, s)| s).collect();

        let tiles_x = k.width.div_ceil(TILE);
        let tiles_y = k.height.div_ceil(TILE);
        let mut tiles = vec![Vec::new(); tiles_x * tiles_y];
        for (i, s) in splats.iter().enumerate() {
            let tx0 = s.bounds[0] as usize / TILE;
            let tx1 = s.bounds[1] as usize / TILE;
            let ty0 = s.bounds[2] as usize / TILE;
            let ty1 = s.bounds[3] as usize / TILE;
            for ty in ty0..=ty1 {
                for tx in tx0..=tx1 {
                    tiles[ty * tiles_x + tx].push(i as u32);
                }
            }
        }
        Self {
            scene,
            view: *view,
            intrinsics: k,
            states,
            splats,
            tiles_x,
            tiles,
        }
    }

    fn tile_pixels(&self, tile: usize) -> impl Iterator<Item = (usize, usize)> {
        let tx = tile % self.tiles_x;
        let ty = tile / self.tiles_x;
        let x0 = tx * TILE;
        let y0 = ty * TILE;
        let x1 = (x0 + TILE).min(self.intrinsics.width);
        let y1 = (y0 + TILE).min(self.intrinsics.height);
        (y0..y1).flat_map(move |y| (x0..x1).map(move |x| (x, y)))
    }

    /// Front-to-back compositing of one pixel; fills `out` with the
    /// contributions in order and returns the color and final transmittance.
    fn composite(
        &self,
        list: &[u32],
        x: usize,
        y: usize,
        mut out: Option<&mut Vec<Contribution>>,
    ) -> (Vector3<f64>, f64) {
        let (px, py) = (x as f64, y as f64);
        let mut color = Vector3::zeros();
        let mut t = 1.0;
        for (slot, &si) in list.iter().enumerate() {
            let s = &self.splats[si as usize];
            if !s.covers(px, py) {
                continue;
            }
            let dx = px - s.mean.x;
            let dy = py - s.mean.y;
            let [a, b, c] = s.conic;
            let power = -0.5 * (a * dx * dx + 2.0 * b * dx * dy + c * dy * dy);
            let density = power.exp();
            let raw = s.opacity * density;
            let clamped = raw > ALPHA_CLAMP;
            let alpha = if clamped { ALPHA_CLAMP } else { raw };
            color += s.color * (t * alpha);
            if let Some(out) = out.as_deref_mut() {
                out.push(Contribution {
                    slot,
                    alpha,
                    transmittance: t,
                    density,
                    dx,
                    dy,
                    clamped,
                });
            }
            t *= 1.0 - alpha;
            if t < TRANSMITTANCE_CUTOFF {
                break;
            }
        }
        (color, t)
    }

    pub fn forward(&self) -> RenderOutput {
        let k = &self.intrinsics;
        let per_tile: Vec<(Vec<(usize, Vector3<f64>, f64)>, Vec<u32>)> = (0..self.tiles.len())
            .into_par_iter()
            .map(|tile| {
                let list = &self.tiles[tile];
                let mut touched = vec![0u32; list.len()];
                let mut contribs = Vec::new();
                let mut pixels = Vec::with_capacity(TILE * TILE);
                for (x, y) in self.tile_pixels(tile) {
                    contribs.clear();
                    let (c, t) = self.composite(list, x, y, Some(&mut contribs));
                    for ct in &contribs {
                        touched[ct.slot] += 1;
                    }
                    pixels.push((y * k.width + x, c, t));
                }
                (pixels, touched)
            })
            .collect();

        let mut color = Image::new(k.width, k.height);
        let mut alpha = vec![0.0; k.pixel_count()];
        let mut touched = vec![0u32; self.scene.len()];
        for (tile, (pixels, counts)) in per_tile.into_iter().enumerate() {
            for (i, c, t) in pixels {
                color.data[3 * i..3 * i + 3].copy_from_slice(c.as_slice());
                alpha[i] = 1.0 - t;
            }
            for (slot, n) in counts.into_iter().enumerate() {
                touched[self.splats[self.tiles[tile][slot] as usize].index] += n;
            }
        }
        RenderOutput {
            color,
            alpha,
            touched,
        }
    }

    /// Reverse-mode pass for `d_color = dL/d(rendered color)`. Pixels set in
    /// `mask` are skipped and contribute nothing.
    pub fn backward(&self, d_color: &Image, mask: Option<&Mask>) -> Result<SceneGradients> {
        let k = &self.intrinsics;
        if d_color.width != k.width || d_color.height != k.height {
            return Err(Error::dims(
                format!("{}x{}", k.width, k.height),
                format!("{}x{}", d_color.width, d_color.height),
            ));
        }
        if let Some(m) = mask {
            if m.width != k.width || m.height != k.height {
                return Err(Error::dims(
                    format!("{}x{}", k.width, k.height),
                    format!("{}x{} mask", m.width, m.height),
                ));
            }
        }

        let per_tile: Vec<Vec<SplatGrad>> = (0..self.tiles.len())
            .into_par_iter()
            .map(|tile| {
                let list = &self.tiles[tile];
                let mut grads = vec![[0.0; 9]; list.len()];
                let mut contribs = Vec::new();
                for (x, y) in self.tile_pixels(tile) {
                    if mask.is_some_and(|m| m.get(x, y)) {
                        continue;
                    }
                    let i = 3 * (y * k.width + x);
                    let g = Vector3::new(d_color.data[i], d_color.data[i + 1], d_color.data[i + 2]);
                    if g == Vector3::zeros() {
                        continue;
                    }
                    contribs.clear();
                    self.composite(list, x, y, Some(&mut contribs));
                    self.pixel_backward(list, &contribs, &g, &mut grads);
                }
                grads
            })
            .collect();

        let mut splat_grads = vec![[0.0; 9]; self.splats.len()];
        for (tile, grads) in per_tile.into_iter().enumerate() {
            for (slot, gr) in grads.into_iter().enumerate() {
                let acc = &mut splat_grads[self.tiles[tile][slot] as usize];
                for (a, v) in acc.iter_mut().zip(gr) {
                    *a += v;
                }
            }
        }

        let n = self.scene.len();
        let per_splat: Vec<(usize, super::project::ProjectionGrad, f64, Vector3<f64>)> = self
            .splats
            .par_iter()
            .zip(splat_grads.par_iter())
            .map(|(s, sg)| {
                let state = self.states[s.index].as_ref().expect("visible splats were projected");
                let [a, b, c] = s.conic;
                let conic = Matrix2::new(a, b, b, c);
                let d_conic = Matrix2::new(sg[2], 0.5 * sg[3], 0.5 * sg[3], sg[4]);
                let d_cov2d = -(conic * d_conic * conic);
                let pg = project_backward(
                    &self.scene.gaussians[s.index],
                    &self.view,
                    &self.intrinsics,
                    state,
                    &Vector2::new(sg[0], sg[1]),
                    &d_cov2d,
                );
                (s.index, pg, sg[5], Vector3::new(sg[6], sg[7], sg[8]))
            })
            .collect();

        let mut out = SceneGradients::zeros(n);
        let mut d_omega = Vector3::zeros();
        let mut d_v = Vector3::zeros();
        for (index, pg, d_logit, d_rgb) in per_splat {
            out.means[index] = pg.mean;
            out.log_scales[index] = pg.log_scale;
            out.rotations[index] = pg.rotation;
            out.opacity_logits[index] = d_logit;
            out.colors[index] = d_rgb;
            d_omega += pg.view_omega;
            d_v += pg.view_v;
        }
        out.view.fixed_rows_mut::<3>(0).copy_from(&d_omega);
        out.view.fixed_rows_mut::<3>(3).copy_from(&d_v);
        Ok(out)
    }

    fn pixel_backward(
        &self,
        list: &[u32],
        contribs: &[Contribution],
        g: &Vector3<f64>,
        grads: &mut [SplatGrad],
    ) {
        // Color still to come behind the current Gaussian.
        let mut behind = Vector3::zeros();
        for ct in contribs.iter().rev() {
            let s = &self.splats[list[ct.slot] as usize];
            let acc = &mut grads[ct.slot];
            let weight = ct.alpha * ct.transmittance;
            acc[6] += g.x * weight;
            acc[7] += g.y * weight;
            acc[8] += g.z * weight;
            let d_alpha = g.dot(&(s.color * ct.transmittance - behind / (1.0 - ct.alpha)));
            behind += s.color * weight;
            if ct.clamped {
                continue;
            }
            acc[5] += d_alpha * ct.density * s.opacity * (1.0 - s.opacity);
            let d_power = d_alpha * s.opacity * ct.density;
            let [a, b, c] = s.conic;
            acc[0] += d_power * (a * ct.dx + b * ct.dy);
            acc[1] += d_power * (b * ct.dx + c * ct.dy);
            acc[2] += d_power * (-0.5 * ct.dx * ct.dx);
            acc[3] += d_power * (-ct.dx * ct.dy);
            acc[4] += d_power * (-0.5 * ct.dy * ct.dy);
        }
    }
}

/// Render `scene` through the world-to-camera transform `view`.
pub fn render(scene: &GaussianScene, view: &PoseSE3, k: &CameraIntrinsics) -> RenderOutput {
    Rasterizer::new(scene, view, k).forward()
}

/// Gradients of a loss whose image gradient is `d_color`.
pub fn render_backward(
    scene: &GaussianScene,
    view: &PoseSE3,
    k: &CameraIntrinsics,
    d_color: &Image,
    mask: Option<&Mask>,
) -> Result<SceneGradients> {
    Rasterizer::new(scene, view, k).backward(d_color, mask)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::splat::{logit, Gaussian};

    fn k16() -> CameraIntrinsics {
        CameraIntrinsics::new(20.0, 20.0, 7.0, 7.0, 16, 16).unwrap()
    }

    #[test]
    fn empty_scene_is_black() {
        let out = render(&GaussianScene::default(), &PoseSE3::identity(), &k16());
        assert!(out.color.data.iter().all(|&v| v == 0.0));
        assert!(out.alpha.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn single_opaque_gaussian() {
        let g = Gaussian::isotropic(Vector3::new(0.0, 0.0, 2.0), 1.0, 0.8, Vector3::new(1.0, 0.0, 0.0));
        let out = render(&GaussianScene::new(vec![g]), &PoseSE3::identity(), &k16());
        let c = out.color.get(7, 7);
        assert!((c[0] - 0.8).abs() < 1e-12);
        assert_eq!((c[1], c[2]), (0.0, 0.0));
        assert!((out.alpha[7 * 16 + 7] - 0.8).abs() < 1e-12);

        let mut opaque = g;
        opaque.opacity_logit = logit(0.999);
        let out = render(&GaussianScene::new(vec![opaque]), &PoseSE3::identity(), &k16());
        assert!((out.color.get(7, 7)[0] - ALPHA_CLAMP).abs() < 1e-12);
    }

    #[test]
    fn two_layer_compositing() {
        let front = Gaussian::isotropic(Vector3::new(0.0, 0.0, 2.0), 10.0, 0.5, Vector3::new(1.0, 1.0, 1.0));
        let back = Gaussian::isotropic(Vector3::new(0.0, 0.0, 3.0), 10.0, 0.5, Vector3::zeros());
        let out = render(&GaussianScene::new(vec![back, front]), &PoseSE3::identity(), &k16());
        let c = out.color.get(7, 7);
        assert!((c[0] - 0.5).abs() < 1e-9);
        assert!((out.alpha[7 * 16 + 7] - 0.75).abs() < 1e-9);
    }

    #[test]
    fn zero_gradient_in_zero_gradient_out() {
        let g = Gaussian::isotropic(Vector3::new(0.1, 0.0, 2.0), 0.2, 0.6, Vector3::new(0.3, 0.5, 0.2));
        let scene = GaussianScene::new(vec![g]);
        let grads =
            render_backward(&scene, &PoseSE3::identity(), &k16(), &Image::new(16, 16), None).unwrap();
        assert_eq!(grads, SceneGradients::zeros(1));
    }

    #[test]
    fn backward_rejects_wrong_size() {
        let scene = GaussianScene::default();
        assert!(render_backward(&scene, &PoseSE3::identity(), &k16(), &Image::new(8, 8), None).is_err());
    }
}
