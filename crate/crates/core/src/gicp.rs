//! Generalized-ICP (plane-to-plane) registration.
//!
//! Every point carries a covariance built from its neighbourhood, flattened
//! to `diag(1, 1, plane_epsilon)` in its local eigenbasis. The alignment
//! cost of a correspondence `(s, q)` under transform `T` is
//! `d^T (C_q + R C_s R^T)^-1 d` with `d = q - T s`, minimized over a
//! left-multiplied twist increment by damped Gauss-Newton.

use nalgebra::{Matrix3, Matrix6, SymmetricEigen, Vector3, Vector6};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::{exp_map_unchecked, skew, PointCloud, PoseSE3, Twist};
use crate::kdtree::KdTree;

/// Condition number of the normal matrix above which damping is always on.
const ILL_CONDITIONED: f64 = 1e8;
const MAX_DAMPING_TRIES: usize = 12;

#[derive(Debug, Clone, PartialEq)]
pub struct GicpConfig {
    /// Neighbourhood size for covariance estimation (at least 4).
    pub k_neighbors: usize,
    pub max_iterations: usize,
    /// Convergence threshold on the rotation part of an update (radians).
    pub rotation_epsilon: f64,
    /// Convergence threshold on the translation part of an update.
    pub translation_epsilon: f64,
    /// Correspondence gate. `None` uses 20% of the target's bounding-box
    /// diagonal.
    pub max_correspondence_distance: Option<f64>,
    pub plane_epsilon: f64,
    /// The source is subsampled by a uniform stride down to this many points.
    pub max_source_points: usize,
}

impl Default for GicpConfig {
    fn default() -> Self {
        Self {
            k_neighbors: 20,
            max_iterations: 50,
            rotation_epsilon: 1e-4,
            translation_epsilon: 1e-4,
            max_correspondence_distance: None,
            plane_epsilon: 1e-3,
            max_source_points: 20_000,
        }
    }
}

impl GicpConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k_neighbors < 4 {
            return Err(Error::invalid("k_neighbors must be at least 4"));
        }
        if self.max_iterations == 0 {
            return Err(Error::invalid("max_iterations must be positive"));
        }
        if !(self.rotation_epsilon > 0.0 && self.translation_epsilon > 0.0 && self.plane_epsilon > 0.0) {
            return Err(Error::invalid("epsilons must be positive"));
        }
        if self.max_correspondence_distance.is_some_and(|d| !(d > 0.0)) {
            return Err(Error::invalid("max_correspondence_distance must be positive"));
        }
        if self.max_source_points == 0 {
            return Err(Error::invalid("max_source_points must be positive"));
        }
        Ok(())
    }
}

/// One Gauss-Newton iteration: the cost under that iteration's
/// correspondences before and after the accepted step.
#[derive(Debug, Clone, PartialEq)]
pub struct IterationRecord {
    pub correspondences: usize,
    pub cost_before: f64,
    pub cost_after: f64,
    /// Damping used for the accepted (or last rejected) step; 0 for a plain
    /// Gauss-Newton step.
    pub damping: f64,
    pub step_accepted: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegistrationResult {
    /// Maps source coordinates into target coordinates.
    pub transform: PoseSE3,
    pub converged: bool,
    pub iterations: usize,
    /// Mean per-correspondence cost at the returned transform.
    pub final_cost: f64,
    pub inlier_fraction: f64,
    pub history: Vec<IterationRecord>,
}

/// Plane-regularized covariance for every point from its `k` nearest
/// neighbours (the point itself included).
pub fn estimate_covariances(
    pcd: &PointCloud,
    k: usize,
    plane_epsilon: f64,
) -> Result<Vec<Matrix3<f64>>> {
    let tree = KdTree::build(&pcd.points);
    covariances_with_tree(&pcd.points, &tree, k, plane_epsilon)
}

fn covariances_with_tree(
    points: &[Vector3<f64>],
    tree: &KdTree,
    k: usize,
    plane_epsilon: f64,
) -> Result<Vec<Matrix3<f64>>> {
    if k == 0 || points.len() < k {
        return Err(Error::InsufficientPoints {
            needed: k.max(1),
            got: points.len(),
        });
    }
    Ok(points
        .par_iter()
        .map(|p| {
            let nn = tree.knn(p, k);
            let mean = nn.iter().map(|&(i, _)| points[i]).sum::<Vector3<f64>>() / k as f64;
            let cov = nn.iter().fold(Matrix3::zeros(), |acc, &(i, _)| {
                let d = points[i] - mean;
                acc + d * d.transpose()
            }) / k as f64;
            regularize(&cov, plane_epsilon)
        })
        .collect())
}

fn regularize(cov: &Matrix3<f64>, plane_epsilon: f64) -> Matrix3<f64> {
    let eig = SymmetricEigen::new(*cov);
    let mut idx = [0usize, 1, 2];
    idx.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let weights = [1.0, 1.0, plane_epsilon];
    let mut out = Matrix3::zeros();
    for (w, &i) in weights.iter().zip(&idx) {
        let e = eig.eigenvectors.column(i);
        out += e * e.transpose() * *w;
    }
    out
}

struct Correspondence {
    source: usize,
    target: usize,
    /// Inverse of the combined covariance, fixed for one iteration.
    information: Matrix3<f64>,
}

struct Problem<'a> {
    source: &'a [Vector3<f64>],
    source_cov: &'a [Matrix3<f64>],
    target: &'a [Vector3<f64>],
    target_cov: &'a [Matrix3<f64>],
    tree: &'a KdTree,
    max_dist2: f64,
}

impl Problem<'_> {
    fn correspond(&self, t: &PoseSE3) -> Vec<Correspondence> {
        let found: Vec<Option<Correspondence>> = (0..self.source.len())
            .into_par_iter()
            .map(|i| {
                let p = t.transform_point(&self.source[i]);
                let (j, d2) = self.tree.nearest(&p)?;
                if d2 > self.max_dist2 {
                    return None;
                }
                let combined = self.target_cov[j]
                    + t.rotation * self.source_cov[i] * t.rotation.transpose();
                let information = combined.try_inverse()?;
                Some(Correspondence {
                    source: i,
                    target: j,
                    information,
                })
            })
            .collect();
        found.into_iter().flatten().collect()
    }

    fn cost(&self, corr: &[Correspondence], t: &PoseSE3) -> f64 {
        let terms: Vec<f64> = corr
            .par_iter()
            .map(|c| {
                let d = self.target[c.target] - t.transform_point(&self.source[c.source]);
                d.dot(&(c.information * d))
            })
            .collect();
        terms.iter().sum()
    }

    fn normal_equations(&self, corr: &[Correspondence], t: &PoseSE3) -> (Matrix6<f64>, Vector6<f64>) {
        let terms: Vec<(Matrix6<f64>, Vector6<f64>)> = corr
            .par_iter()
            .map(|c| {
                let p = t.transform_point(&self.source[c.source]);
                let d = self.target[c.target] - p;
                // d(delta) ~ d + [p]x omega - v
                let mut j = nalgebra::Matrix3x6::zeros();
                j.fixed_view_mut::<3, 3>(0, 0).copy_from(&skew(&p));
                j.fixed_view_mut::<3, 3>(0, 3).copy_from(&(-Matrix3::identity()));
                let jt_info = j.transpose() * c.information;
                (jt_info * j, jt_info * d)
            })
            .collect();
        terms
            .iter()
            .fold((Matrix6::zeros(), Vector6::zeros()), |(h, g), (dh, dg)| (h + dh, g + dg))
    }
}

fn subsample(points: &[Vector3<f64>], max: usize) -> Vec<Vector3<f64>> {
    let stride = points.len().div_ceil(max).max(1);
    points.iter().step_by(stride).copied().collect()
}

fn condition_number(h: &Matrix6<f64>) -> f64 {
    let eig = SymmetricEigen::new(*h);
    let max = eig.eigenvalues.max();
    let min = eig.eigenvalues.min();
    if min <= 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

/// Align `source` onto `target` starting from `init`.
///
/// Returns the latest estimate whether or not the update norms fell below
/// the configured epsilons; `converged` tells which.
pub fn register(
    source: &PointCloud,
    target: &PointCloud,
    config: &GicpConfig,
    init: &PoseSE3,
) -> Result<RegistrationResult> {
    config.validate()?;
    let k = config.k_neighbors;
    if source.len() < k || target.len() < k {
        return Err(Error::InsufficientPoints {
            needed: k,
            got: source.len().min(target.len()),
        });
    }
    let src = subsample(&source.points, config.max_source_points.max(k));
    let src_tree = KdTree::build(&src);
    let tgt_tree = KdTree::build(&target.points);
    let src_cov = covariances_with_tree(&src, &src_tree, k, config.plane_epsilon)?;
    let tgt_cov = covariances_with_tree(&target.points, &tgt_tree, k, config.plane_epsilon)?;
    let max_dist = config
        .max_correspondence_distance
        .unwrap_or_else(|| 0.2 * target.bounding_diagonal());
    let problem = Problem {
        source: &src,
        source_cov: &src_cov,
        target: &target.points,
        target_cov: &tgt_cov,
        tree: &tgt_tree,
        max_dist2: max_dist * max_dist,
    };

    let mut estimate = *init;
    let mut history = Vec::new();
    let mut converged = false;
    let mut damping = 0.0_f64;
    for iteration in 0..config.max_iterations {
        let corr = problem.correspond(&estimate);
        if corr.is_empty() {
            return Err(Error::RegistrationFailed {
                iteration,
                last_estimate: Box::new(estimate),
            });
        }
        let cost_before = problem.cost(&corr, &estimate);
        let (h, g) = problem.normal_equations(&corr, &estimate);
        let scale = h.trace() / 6.0;
        if condition_number(&h) > ILL_CONDITIONED {
            damping = damping.max(1e-6);
        }

        let mut record = IterationRecord {
            correspondences: corr.len(),
            cost_before,
            cost_after: cost_before,
            damping,
            step_accepted: false,
        };
        let mut step = None;
        for _ in 0..MAX_DAMPING_TRIES {
            let lhs = h + Matrix6::identity() * (damping * scale);
            let Some(delta) = lhs.cholesky().map(|c| -c.solve(&g)) else {
                damping = if damping == 0.0 { 1e-6 } else { damping * 10.0 };
                continue;
            };
            let twist = Twist::from_vector(&delta);
            let candidate = exp_map_unchecked(&twist).compose(&estimate).orthonormalized();
            let cost_after = problem.cost(&corr, &candidate);
            record.damping = damping;
            if cost_after <= cost_before {
                record.cost_after = cost_after;
                record.step_accepted = true;
                step = Some((twist, candidate));
                damping *= 0.1;
                if damping < 1e-9 {
                    damping = 0.0;
                }
                break;
            }
            damping = if damping == 0.0 { 1e-6 } else { damping * 10.0 };
        }
        history.push(record);

        match step {
            Some((twist, candidate)) => {
                estimate = candidate;
                if twist.omega.norm() < config.rotation_epsilon
                    && twist.v.norm() < config.translation_epsilon
                {
                    converged = true;
                    break;
                }
            }
            None => {
                // No descent direction left for these correspondences.
                converged = true;
                break;
            }
        }
    }

    let corr = problem.correspond(&estimate);
    let (final_cost, inlier_fraction) = if corr.is_empty() {
        (f64::INFINITY, 0.0)
    } else {
        (
            problem.cost(&corr, &estimate) / corr.len() as f64,
            corr.len() as f64 / src.len() as f64,
        )
    };
    Ok(RegistrationResult {
        transform: estimate,
        converged,
        iterations: history.len(),
        final_cost,
        inlier_fraction,
        history,
    })
}
