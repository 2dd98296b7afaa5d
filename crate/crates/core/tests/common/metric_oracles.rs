//! Direct-formula oracles for the trajectory and image metrics, written
//! without sharing code paths with the library.

use gsfree::geometry::{exp_map, Image, PoseSE3, Twist};
use nalgebra::{Matrix3, Matrix4, Quaternion, Rotation3, SymmetricEigen, UnitQuaternion, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Left-to-right product of homogeneous matrices: entry `i` is the product
/// of the first `i` relatives.
pub fn chain_oracle(relatives: &[PoseSE3]) -> Vec<Matrix4<f64>> {
    let mut out = vec![Matrix4::identity()];
    for r in relatives {
        let next = out.last().unwrap() * r.to_homogeneous();
        out.push(next);
    }
    out
}

/// Similarity `(s, R, t)` minimizing `sum |g - (s R e + t)|^2` over camera
/// centers, by the unit-quaternion eigenvector method.
pub fn align_oracle(est: &[PoseSE3], gt: &[PoseSE3]) -> (f64, Matrix3<f64>, Vector3<f64>) {
    let n = est.len() as f64;
    let mut ce = Vector3::zeros();
    let mut cg = Vector3::zeros();
    for i in 0..est.len() {
        ce += est[i].translation / n;
        cg += gt[i].translation / n;
    }
    let mut s = Matrix3::<f64>::zeros();
    for i in 0..est.len() {
        let e = est[i].translation - ce;
        let g = gt[i].translation - cg;
        for a in 0..3 {
            for b in 0..3 {
                s[(a, b)] += e[a] * g[b];
            }
        }
    }
    let (xx, xy, xz) = (s[(0, 0)], s[(0, 1)], s[(0, 2)]);
    let (yx, yy, yz) = (s[(1, 0)], s[(1, 1)], s[(1, 2)]);
    let (zx, zy, zz) = (s[(2, 0)], s[(2, 1)], s[(2, 2)]);
    #[rustfmt::skip]
    let nmat = Matrix4::new(
        xx + yy + zz, yz - zy,       zx - xz,       xy - yx,
        yz - zy,      xx - yy - zz,  xy + yx,       zx + xz,
        zx - xz,      xy + yx,       -xx + yy - zz, yz + zy,
        xy - yx,      zx + xz,       yz + zy,       -xx - yy + zz,
    );
    let eig = SymmetricEigen::new(nmat);
    let q = eig.eigenvectors.column(eig.eigenvalues.imax()).into_owned();
    let r = UnitQuaternion::from_quaternion(Quaternion::new(q[0], q[1], q[2], q[3]))
        .to_rotation_matrix()
        .into_inner();
    let (mut num, mut den) = (0.0, 0.0);
    for i in 0..est.len() {
        let e = est[i].translation - ce;
        num += (gt[i].translation - cg).dot(&(r * e));
        den += e.norm_squared();
    }
    let scale = num / den;
    (scale, r, cg - scale * r * ce)
}

pub fn ate_oracle(est: &[PoseSE3], gt: &[PoseSE3]) -> f64 {
    let (s, r, t) = align_oracle(est, gt);
    let mut sum = 0.0;
    for i in 0..est.len() {
        sum += (s * r * est[i].translation + t - gt[i].translation).norm_squared();
    }
    (sum / est.len() as f64).sqrt()
}

/// Rotation angle through the quaternion's half-angle, away from the
/// trace formula the library uses.
pub fn angle_oracle(r: &Matrix3<f64>) -> f64 {
    let q = UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(*r));
    2.0 * q.imag().norm().atan2(q.w.abs())
}

pub fn rpe_oracle(est: &[PoseSE3], gt: &[PoseSE3], delta: usize) -> (f64, f64) {
    let s = align_oracle(est, gt).0;
    let h = |p: &PoseSE3, scale: f64| {
        let mut m = p.to_homogeneous();
        for row in 0..3 {
            m[(row, 3)] *= scale;
        }
        m
    };
    let (mut st, mut sr, mut n) = (0.0, 0.0, 0.0);
    for i in 0..est.len() - delta {
        let rel_gt = h(&gt[i], 1.0).try_inverse().unwrap() * h(&gt[i + delta], 1.0);
        let rel_est = h(&est[i], s).try_inverse().unwrap() * h(&est[i + delta], s);
        let e = rel_gt.try_inverse().unwrap() * rel_est;
        st += e.fixed_view::<3, 1>(0, 3).norm_squared();
        sr += angle_oracle(&e.fixed_view::<3, 3>(0, 0).into_owned()).to_degrees().powi(2);
        n += 1.0;
    }
    ((st / n).sqrt(), (sr / n).sqrt())
}

pub fn psnr_oracle(a: &Image, b: &Image) -> f64 {
    let mut sum = 0.0;
    for y in 0..a.height {
        for x in 0..a.width {
            let (p, q) = (a.get(x, y), b.get(x, y));
            for c in 0..3 {
                sum += (p[c] - q[c]).powi(2);
            }
        }
    }
    let mse = sum / (a.width * a.height * 3) as f64;
    10.0 * (1.0 / mse).log10()
}

/// SSIM with an explicit 11x11 Gaussian window (sigma 1.5) summed in
/// place at every position where it fits, centered moments.
pub fn ssim_oracle(a: &Image, b: &Image) -> f64 {
    const W: usize = 11;
    let (c1, c2) = (0.01f64.powi(2), 0.03f64.powi(2));
    let mut w = [[0.0; W]; W];
    let mut total = 0.0;
    for i in 0..W {
        for j in 0..W {
            let (di, dj) = (i as f64 - 5.0, j as f64 - 5.0);
            w[i][j] = (-(di * di + dj * dj) / (2.0 * 1.5 * 1.5)).exp();
            total += w[i][j];
        }
    }
    let mut sum = 0.0;
    let mut count = 0.0;
    for c in 0..3 {
        for y0 in 0..=a.height - W {
            for x0 in 0..=a.width - W {
                let (mut ma, mut mb) = (0.0, 0.0);
                for i in 0..W {
                    for j in 0..W {
                        let k = w[i][j] / total;
                        ma += k * a.get(x0 + j, y0 + i)[c];
                        mb += k * b.get(x0 + j, y0 + i)[c];
                    }
                }
                let (mut va, mut vb, mut cov) = (0.0, 0.0, 0.0);
                for i in 0..W {
                    for j in 0..W {
                        let k = w[i][j] / total;
                        let da = a.get(x0 + j, y0 + i)[c] - ma;
                        let db = b.get(x0 + j, y0 + i)[c] - mb;
                        va += k * da * da;
                        vb += k * db * db;
                        cov += k * da * db;
                    }
                }
                sum += (2.0 * ma * mb + c1) * (2.0 * cov + c2) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
                count += 1.0;
            }
        }
    }
    sum / count
}

pub fn random_pose(rng: &mut impl Rng, rot: f64, trans: f64) -> PoseSE3 {
    let mut t = Twist::zero();
    for i in 0..3 {
        t.omega[i] = rng.random_range(-rot..rot);
        t.v[i] = rng.random_range(-trans..trans);
    }
    exp_map(&t).unwrap()
}

/// A random walk of `n` camera poses.
pub fn random_trajectory(rng: &mut impl Rng, n: usize) -> Vec<PoseSE3> {
    let mut out = vec![random_pose(rng, 1.0, 2.0)];
    for _ in 1..n {
        let step = random_pose(rng, 0.3, 1.0);
        out.push(*out.last().unwrap() * step);
    }
    out
}

/// `gt` with every pose perturbed, so alignment leaves residuals.
pub fn noisy_copy(rng: &mut impl Rng, gt: &[PoseSE3], level: f64) -> Vec<PoseSE3> {
    gt.iter().map(|p| *p * random_pose(rng, 0.1 * level, level)).collect()
}

pub fn random_image(seed: u64, w: usize, h: usize) -> Image {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Image::from_vec(w, h, (0..w * h * 3).map(|_| rng.random()).collect()).unwrap()
}

/// `img` moved toward noise, the same pattern scaled by `amplitude`.
pub fn blend(img: &Image, noise: &Image, amplitude: f64) -> Image {
    let data = img.data.iter().zip(&noise.data).map(|(a, n)| a + amplitude * (n - 0.5)).collect();
    Image::from_vec(img.width, img.height, data).unwrap()
}
