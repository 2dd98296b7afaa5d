//! The `eval` report: trajectory errors and image metrics, as key: value
//! text or JSON.

use std::fmt::Write as _;
use std::path::Path;

use anyhow::{bail, Context, Result};
use gsfree::geometry::PoseSE3;
use gsfree::io::{self, TimedPose};
use gsfree::metrics;
use serde_json::{json, Value};

/// Timestamps closer than this are taken as the same frame.
const TIME_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Default)]
pub struct Report {
    pub trajectory: Option<TrajectoryReport>,
    pub images: Option<ImageReport>,
}

#[derive(Debug)]
pub struct TrajectoryReport {
    pub timestamps: Vec<f64>,
    pub ate: f64,
    pub rpe_t: f64,
    pub rpe_r_deg: f64,
    /// Aligned camera-center error per frame; empty below three frames.
    pub position_errors: Vec<f64>,
    /// `(translation, rotation in degrees)` of the step ending at each frame
    /// after the first.
    pub step_errors: Vec<(f64, f64)>,
}

#[derive(Debug)]
pub struct ImageReport {
    pub names: Vec<String>,
    pub psnr: Vec<f64>,
    pub ssim: Vec<f64>,
}

impl ImageReport {
    pub fn mean_psnr(&self) -> f64 {
        mean(&self.psnr)
    }

    pub fn mean_ssim(&self) -> f64 {
        mean(&self.ssim)
    }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Pair estimated and reference samples with matching timestamps.
pub fn associate(est: &[TimedPose], gt: &[TimedPose]) -> (Vec<f64>, Vec<PoseSE3>, Vec<PoseSE3>) {
    let mut out = (Vec::new(), Vec::new(), Vec::new());
    for e in est {
        if let Some(g) = gt.iter().find(|g| (g.timestamp - e.timestamp).abs() <= TIME_TOLERANCE) {
            out.0.push(e.timestamp);
            out.1.push(e.pose);
            out.2.push(g.pose);
        }
    }
    out
}

pub fn trajectory_report(est_path: &Path, gt_path: &Path, delta: usize) -> Result<TrajectoryReport> {
    let est = io::read_tum(est_path)?;
    let gt = io::read_tum(gt_path)?;
    let (timestamps, est, gt) = associate(&est, &gt);
    if est.len() < 2 {
        bail!(
            "only {} timestamps of {} match {}; need at least 2",
            est.len(),
            est_path.display(),
            gt_path.display()
        );
    }
    let ate = metrics::ate(&est, &gt)?;
    let (rpe_t, rpe_r_deg) = metrics::rpe(&est, &gt, delta)?;
    let (scale, position_errors) = if est.len() >= 3 {
        let (s, t) = metrics::align_trajectories(&est, &gt)?;
        let errors = est
            .iter()
            .zip(&gt)
            .map(|(e, g)| (s * (t.rotation * e.translation) + t.translation - g.translation).norm())
            .collect();
        (s, errors)
    } else {
        (1.0, Vec::new())
    };
    let step_errors = (1..est.len())
        .map(|i| {
            let scaled = |p: &PoseSE3| PoseSE3::new(p.rotation, p.translation * scale);
            let rel_est = scaled(&est[i - 1]).inverse() * scaled(&est[i]);
            let rel_gt = gt[i - 1].inverse() * gt[i];
            let e = rel_gt.inverse() * rel_est;
            (e.translation.norm(), e.rotation_angle().to_degrees())
        })
        .collect();
    Ok(TrajectoryReport {
        timestamps,
        ate,
        rpe_t,
        rpe_r_deg,
        position_errors,
        step_errors,
    })
}

/// Compare every PNG in `renders` against the same file name in `images`.
pub fn image_report(renders: &Path, images: &Path) -> Result<ImageReport> {
    let mut names: Vec<String> = std::fs::read_dir(renders)
        .with_context(|| format!("reading {}", renders.display()))?
        .filter_map(|e| e.ok())
        .map(|e| e.file_name().to_string_lossy().into_owned())
        .filter(|n| n.ends_with(".png"))
        .collect();
    names.sort();
    if names.is_empty() {
        bail!("no PNG renders in {}", renders.display());
    }
    let mut report = ImageReport {
        names: Vec::new(),
        psnr: Vec::new(),
        ssim: Vec::new(),
    };
    for name in names {
        let a = io::read_png(renders.join(&name))?;
        let b = io::read_png(images.join(&name))?;
        let ctx = || format!("comparing {name}");
        report.psnr.push(metrics::psnr(&a, &b).with_context(ctx)?);
        report.ssim.push(metrics::ssim(&a, &b).with_context(ctx)?);
        report.names.push(name);
    }
    Ok(report)
}

/// Finite values as numbers, infinities as the string `inf`.
fn number(v: f64) -> Value {
    if v.is_finite() {
        json!(v)
    } else {
        json!(fmt(v))
    }
}

fn fmt(v: f64) -> String {
    if v == f64::INFINITY {
        "inf".into()
    } else if v.is_finite() {
        format!("{v:.6}")
    } else {
        v.to_string()
    }
}

impl Report {
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        if let Some(t) = &self.trajectory {
            writeln!(s, "[trajectory]").unwrap();
            writeln!(s, "frames: {}", t.timestamps.len()).unwrap();
            writeln!(s, "ate: {}", fmt(t.ate)).unwrap();
            writeln!(s, "rpe_t: {}", fmt(t.rpe_t)).unwrap();
            writeln!(s, "rpe_r_deg: {}", fmt(t.rpe_r_deg)).unwrap();
            for (i, ts) in t.timestamps.iter().enumerate() {
                write!(s, "frame {ts}:").unwrap();
                if let Some(e) = t.position_errors.get(i) {
                    write!(s, " position_error: {}", fmt(*e)).unwrap();
                }
                if let Some((et, er)) = i.checked_sub(1).and_then(|j| t.step_errors.get(j)) {
                    write!(s, " step_t: {} step_r_deg: {}", fmt(*et), fmt(*er)).unwrap();
                }
                writeln!(s).unwrap();
            }
        }
        if let Some(im) = &self.images {
            writeln!(s, "[images]").unwrap();
            writeln!(s, "count: {}", im.names.len()).unwrap();
            writeln!(s, "psnr: {}", fmt(im.mean_psnr())).unwrap();
            writeln!(s, "ssim: {}", fmt(im.mean_ssim())).unwrap();
            for i in 0..im.names.len() {
                writeln!(s, "{}: psnr: {} ssim: {}", im.names[i], fmt(im.psnr[i]), fmt(im.ssim[i])).unwrap();
            }
        }
        s
    }

    pub fn to_json(&self) -> Value {
        let mut root = serde_json::Map::new();
        if let Some(t) = &self.trajectory {
            let frames: Vec<Value> = t
                .timestamps
                .iter()
                .enumerate()
                .map(|(i, ts)| {
                    let step = i.checked_sub(1).and_then(|j| t.step_errors.get(j));
                    json!({
                        "timestamp": ts,
                        "position_error": t.position_errors.get(i).copied().map(number),
                        "step_t": step.map(|s| number(s.0)),
                        "step_r_deg": step.map(|s| number(s.1)),
                    })
                })
                .collect();
            root.insert(
                "trajectory".into(),
                json!({
                    "ate": number(t.ate),
                    "rpe_t": number(t.rpe_t),
                    "rpe_r_deg": number(t.rpe_r_deg),
                    "frames": frames,
                }),
            );
        }
        if let Some(im) = &self.images {
            let per: Vec<Value> = (0..im.names.len())
                .map(|i| json!({"name": im.names[i], "psnr": number(im.psnr[i]), "ssim": number(im.ssim[i])}))
                .collect();
            root.insert(
                "images".into(),
                json!({"psnr": number(im.mean_psnr()), "ssim": number(im.mean_ssim()), "frames": per}),
            );
        }
        Value::Object(root)
    }
}
