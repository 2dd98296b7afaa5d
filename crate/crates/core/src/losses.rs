//! Photometric losses with gradients with respect to the rendered image.

use crate::error::{Error, Result};
use crate::geometry::{Image, Mask};

/// SSIM window side.
pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
const C1: f64 = 0.01 * 0.01;
const C2: f64 = 0.03 * 0.03;

/// A scalar loss and its gradient with respect to the first image.
#[derive(Debug, Clone, PartialEq)]
pub struct LossValue {
    pub value: f64,
    pub gradient: Image,
}

fn check_mask(a: &Image, mask: Option<&Mask>) -> Result<()> {
    match mask {
        Some(m) if m.width != a.width || m.height != a.height => Err(Error::dims(
            format!("{}x{}", a.width, a.height),
            format!("{}x{} mask", m.width, m.height),
        )),
        _ => Ok(()),
    }
}

/// Mean absolute difference over unmasked pixels and channels. Pixels set
/// in `mask` are excluded.
pub fn l1_loss(a: &Image, b: &Image, mask: Option<&Mask>) -> Result<LossValue> {
    a.same_shape(b)?;
    check_mask(a, mask)?;
    let kept = a.width * a.height - mask.map_or(0, Mask::count);
    if kept == 0 {
        return Err(Error::DegenerateMask);
    }
    let n = (kept * 3) as f64;
    let mut gradient = Image::new(a.width, a.height);
    let mut sum = 0.0;
    for p in 0..a.width * a.height {
        if mask.is_some_and(|m| m.data[p]) {
            continue;
        }
        for c in 3 * p..3 * p + 3 {
            let d = a.data[c] - b.data[c];
            sum += d.abs();
            gradient.data[c] = if d > 0.0 {
                1.0 / n
            } else if d < 0.0 {
                -1.0 / n
            } else {
                0.0
            };
        }
    }
    Ok(LossValue {
        value: sum / n,
        gradient,
    })
}

fn gaussian_window() -> [f64; SSIM_WINDOW] {
    let mut w = [0.0; SSIM_WINDOW];
    let half = (SSIM_WINDOW / 2) as f64;
    for (i, v) in w.iter_mut().enumerate() {
        let d = i as f64 - half;
        *v = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let s: f64 = w.iter().sum();
    w.map(|v| v / s)
}

/// Single-channel plane.
struct Plane {
    w: usize,
    h: usize,
    data: Vec<f64>,
}

impl Plane {
    fn channel(img: &Image, c: usize) -> Self {
        Self {
            w: img.width,
            h: img.height,
            data: img.data.iter().skip(c).step_by(3).copied().collect(),
        }
    }

    fn map2(&self, other: &Plane, f: impl Fn(f64, f64) -> f64) -> Plane {
        Plane {
            w: self.w,
            h: self.h,
            data: self.data.iter().zip(&other.data).map(|(&x, &y)| f(x, y)).collect(),
        }
    }

    /// Windowed weighted mean at every position where the window fits.
    fn filter_valid(&self, win: &[f64; SSIM_WINDOW]) -> Plane {
        let ow = self.w + 1 - SSIM_WINDOW;
        let oh = self.h + 1 - SSIM_WINDOW;
        let mut rows = vec![0.0; self.h * ow];
        for y in 0..self.h {
            let src = &self.data[y * self.w..(y + 1) * self.w];
            for x in 0..ow {
                rows[y * ow + x] = win.iter().zip(&src[x..]).map(|(k, v)| k * v).sum();
            }
        }
        let mut data = vec![0.0; oh * ow];
        for y in 0..oh {
            for (k, wk) in win.iter().enumerate() {
                let src = &rows[(y + k) * ow..(y + k + 1) * ow];
                for (d, s) in data[y * ow..(y + 1) * ow].iter_mut().zip(src) {
                    *d += wk * s;
                }
            }
        }
        Plane { w: ow, h: oh, data }
    }

    /// Adjoint of [`Plane::filter_valid`] back onto a `w x h` plane.
    fn scatter_full(&self, win: &[f64; SSIM_WINDOW], w: usize, h: usize) -> Plane {
        let mut cols = vec![0.0; h * self.w];
        for y in 0..self.h {
            for (k, wk) in win.iter().enumerate() {
                let dst = &mut cols[(y + k) * self.w..(y + k + 1) * self.w];
                for (d, s) in dst.iter_mut().zip(&self.data[y * self.w..(y + 1) * self.w]) {
                    *d += wk * s;
                }
            }
        }
        let mut data = vec![0.0; h * w];
        for y in 0..h {
            for x in 0..self.w {
                let v = cols[y * self.w + x];
                for (k, wk) in win.iter().enumerate() {
                    data[y * w + x + k] += wk * v;
                }
            }
        }
        Plane { w, h, data }
    }
}

/// Mean SSIM over channels and valid window positions, with the gradient
/// of that mean with respect to `a` when requested.
fn ssim_kernel(a: &Image, b: &Image, want_grad: bool) -> Result<(f64, Option<Image>)> {
    a.same_shape(b)?;
    if a.width < SSIM_WINDOW || a.height < SSIM_WINDOW {
        return Err(Error::invalid(format!(
            "image {}x{} is smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} SSIM window",
            a.width, a.height
        )));
    }
    let win = gaussian_window();
    let positions = (a.width + 1 - SSIM_WINDOW) * (a.height + 1 - SSIM_WINDOW);
    let norm = 1.0 / (3 * positions) as f64;
    let mut total = 0.0;
    let mut grad = want_grad.then(|| Image::new(a.width, a.height));
    for c in 0..3 {
        let x = Plane::channel(a, c);
        let y = Plane::channel(b, c);
        let mu_x = x.filter_valid(&win);
        let mu_y = y.filter_valid(&win);
        let m_xx = x.map2(&x, |p, q| p * q).filter_valid(&win);
        let m_yy = y.map2(&y, |p, q| p * q).filter_valid(&win);
        let m_xy = x.map2(&y, |p, q| p * q).filter_valid(&win);
        let n = mu_x.data.len();
        let mut d_mu = vec![0.0; n];
        let mut d_xx = vec![0.0; n];
        let mut d_xy = vec![0.0; n];
        for i in 0..n {
            let (mx, my) = (mu_x.data[i], mu_y.data[i]);
            let a1 = 2.0 * mx * my + C1;
            let a2 = 2.0 * (m_xy.data[i] - mx * my) + C2;
            let b1 = mx * mx + my * my + C1;
            let b2 = (m_xx.data[i] - mx * mx) + (m_yy.data[i] - my * my) + C2;
            total += a1 * a2 / (b1 * b2);
            if want_grad {
                let bb = b1 * b2;
                d_xy[i] = norm * 2.0 * a1 / bb;
                d_xx[i] = -norm * a1 * a2 / (bb * b2);
                d_mu[i] = norm
                    * (2.0 * my * (a2 - a1) / bb
                        - 2.0 * mx * a1 * a2 * (1.0 / (b1 * bb) - 1.0 / (bb * b2)));
            }
        }
        if let Some(g) = grad.as_mut() {
            let wrap = |data| Plane {
                w: mu_x.w,
                h: mu_x.h,
                data,
            };
            let g_mu = wrap(d_mu).scatter_full(&win, a.width, a.height);
            let g_xx = wrap(d_xx).scatter_full(&win, a.width, a.height);
            let g_xy = wrap(d_xy).scatter_full(&win, a.width, a.height);
            for p in 0..a.width * a.height {
                g.data[3 * p + c] =
                    g_mu.data[p] + 2.0 * x.data[p] * g_xx.data[p] + y.data[p] * g_xy.data[p];
            }
        }
    }
    Ok((total * norm, grad))
}

/// Mean structural similarity of two images.
pub(crate) fn ssim_index(a: &Image, b: &Image) -> Result<f64> {
    Ok(ssim_kernel(a, b, false)?.0)
}

/// `1 - SSIM(a, b)` and its gradient with respect to `a`.
pub fn dssim_loss(a: &Image, b: &Image) -> Result<LossValue> {
    let (s, g) = ssim_kernel(a, b, true)?;
    let mut gradient = g.expect("gradient requested");
    gradient.data.iter_mut().for_each(|v| *v = -*v);
    Ok(LossValue {
        value: 1.0 - s,
        gradient,
    })
}

/// `(1 - lambda) * L1 + lambda * D-SSIM`.
///
/// The mask applies to the L1 term. For the D-SSIM term masked pixels of
/// `a` are replaced by those of `b` and receive no gradient.
pub fn rgb_loss(a: &Image, b: &Image, lambda: f64, mask: Option<&Mask>) -> Result<LossValue> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::invalid(format!("lambda {lambda} outside [0, 1]")));
    }
    let mut out = l1_loss(a, b, mask)?;
    if lambda == 0.0 {
        return Ok(out);
    }
    let d = match mask {
        None => dssim_loss(a, b)?,
        Some(m) => {
            let mut filled = a.clone();
            for (p, _) in m.data.iter().enumerate().filter(|(_, &v)| v) {
                filled.data[3 * p..3 * p + 3].copy_from_slice(&b.data[3 * p..3 * p + 3]);
            }
            let mut d = dssim_loss(&filled, b)?;
            for (p, _) in m.data.iter().enumerate().filter(|(_, &v)| v) {
                d.gradient.data[3 * p..3 * p + 3].fill(0.0);
            }
            d
        }
    };
    out.value = (1.0 - lambda) * out.value + lambda * d.value;
    for (g, dg) in out.gradient.data.iter_mut().zip(&d.gradient.data) {
        *g = (1.0 - lambda) * *g + lambda * dg;
    }
    Ok(out)
}
