//! `gsfree`: generate synthetic datasets, track camera poses, reconstruct
//! scenes, render them and evaluate the results.

mod dataset;
mod report;

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use gsfree::geometry::PoseSE3;
use gsfree::io::{self, TimedPose};
use gsfree::pose_opt::track_sequence_with;
use gsfree::reconstruct::{reconstruct, ReconstructConfig};
use gsfree::splat::render;
use gsfree::synth::{self, SceneKind, TrajectoryKind};
use gsfree::config;

#[derive(Parser)]
#[command(name = "gsfree", version, about = "Pose-free Gaussian splatting on the CPU")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic dataset: frames, depth maps, intrinsics and the
    /// ground-truth trajectory.
    SynthGen(SynthArgs),
    /// Estimate camera poses for a dataset.
    Track(TrackArgs),
    /// Build a Gaussian scene and render the held-out frames.
    Reconstruct(ReconstructArgs),
    /// Render a scene at every pose of a trajectory.
    Render(RenderArgs),
    /// Report trajectory and image metrics.
    Eval(EvalArgs),
}

/// Settings shared by the commands that run the optimizer.
#[derive(Args)]
struct Tuning {
    /// key = value configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one configuration key (repeatable), e.g. `--set fit_iterations=100`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Print the effective configuration to standard error.
    #[arg(long)]
    show_config: bool,
}

impl Tuning {
    fn load(&self) -> Result<ReconstructConfig> {
        let mut cfg = match &self.config {
            Some(path) => config::load(path)?,
            None => ReconstructConfig::default(),
        };
        for o in &self.overrides {
            config::apply_override(&mut cfg, o)?;
        }
        Ok(cfg)
    }
}

#[derive(Args)]
struct SynthArgs {
    /// planes, box_room or street.
    #[arg(long)]
    kind: String,
    #[arg(long, default_value_t = 10)]
    frames: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// orbit, line_large_steps or arc; defaults to line_large_steps for
    /// street and orbit otherwise.
    #[arg(long)]
    trajectory: Option<String>,
    /// Orbit: total angle in degrees. Line and arc: step length.
    #[arg(long)]
    magnitude: Option<f64>,
    #[arg(long, default_value_t = 64)]
    width: usize,
    #[arg(long, default_value_t = 64)]
    height: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrackArgs {
    /// Dataset directory.
    #[arg(long)]
    data: PathBuf,
    /// Output trajectory [default: <data>/est_traj.tum].
    #[arg(long)]
    out: Option<PathBuf>,
    /// Per-pair diagnostics [default: next to the trajectory, .log].
    #[arg(long)]
    diagnostics: Option<PathBuf>,
    /// Start refinement from the identity instead of G-ICP.
    #[arg(long)]
    no_gicp: bool,
    /// Keep sky pixels in the pose loss and registration.
    #[arg(long)]
    no_sky_mask: bool,
    #[command(flatten)]
    tuning: Tuning,
}

#[derive(Args)]
struct ReconstructArgs {
    #[arg(long)]
    data: PathBuf,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Camera-to-world poses for every frame, stamped with frame indices;
    /// tracked when omitted.
    #[arg(long)]
    traj: Option<PathBuf>,
    #[arg(long)]
    no_voxel_densify: bool,
    #[arg(long)]
    no_gicp: bool,
    #[arg(long)]
    no_sky_mask: bool,
    /// Hold out every N-th frame (0 keeps all frames for training).
    #[arg(long)]
    test_every: Option<usize>,
    #[command(flatten)]
    tuning: Tuning,
}

#[derive(Args)]
struct RenderArgs {
    /// Scene PLY written by `reconstruct`.
    #[arg(long)]
    scene: PathBuf,
    /// Camera-to-world poses.
    #[arg(long)]
    traj: PathBuf,
    #[arg(long)]
    intrinsics: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    /// Estimated trajectory.
    #[arg(long, requires = "gt")]
    est: Option<PathBuf>,
    /// Reference trajectory.
    #[arg(long, requires = "est")]
    gt: Option<PathBuf>,
    /// Directory of rendered PNGs.
    #[arg(long, requires = "images")]
    renders: Option<PathBuf>,
    /// Directory holding reference PNGs with the same names.
    #[arg(long, requires = "renders")]
    images: Option<PathBuf>,
    /// Frame step for the relative pose error.
    #[arg(long, default_value_t = 1)]
    delta: usize,
    /// Also write the report as JSON.
    #[arg(long)]
    json: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::SynthGen(a) => synth_gen(a),
        Command::Track(a) => track(a),
        Command::Reconstruct(a) => run_reconstruct(a),
        Command::Render(a) => run_render(a),
        Command::Eval(a) => eval(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", message(&e));
            ExitCode::FAILURE
        }
    }
}

/// The error and its causes, skipping causes already quoted by their parent.
fn message(e: &anyhow::Error) -> String {
    let mut out = e.to_string();
    let mut last = out.clone();
    for cause in e.chain().skip(1) {
        let text = cause.to_string();
        if !last.contains(&text) {
            out += ": ";
            out += &text;
        }
        last = text;
    }
    out
}

fn synth_gen(a: SynthArgs) -> Result<()> {
    let kind: SceneKind = a.kind.parse()?;
    let trajectory: TrajectoryKind = match &a.trajectory {
        Some(t) => t.parse()?,
        None if kind == SceneKind::Street => TrajectoryKind::LineLargeSteps,
        None => TrajectoryKind::Orbit,
    };
    let magnitude = a.magnitude.unwrap_or(match trajectory {
        TrajectoryKind::Orbit => 60.0,
        TrajectoryKind::LineLargeSteps | TrajectoryKind::Arc => 0.5,
    });
    let k = synth::default_intrinsics(a.width, a.height)?;
    let scene = synth::make_scene(kind, a.seed);
    if a.frames == 0 {
        bail!("--frames must be at least 1");
    }
    // Trajectories need two poses; a one-frame dataset keeps the first.
    let mut poses = synth::make_trajectory(trajectory, a.frames.max(2), magnitude)?;
    poses.truncate(a.frames);
    let frames = poses
        .iter()
        .map(|p| synth::render_ground_truth(&scene, p, &k))
        .collect::<gsfree::Result<Vec<_>>>()?;
    dataset::save(&a.out, &k, &frames)?;
    io::write_tum(a.out.join(dataset::GT_TRAJECTORY_FILE), &io::indexed(&poses))?;
    eprintln!(
        "wrote {} {kind} frames ({trajectory}, magnitude {magnitude}) to {}",
        frames.len(),
        a.out.display()
    );
    Ok(())
}

fn show(tuning: &Tuning, cfg: &ReconstructConfig) {
    if tuning.show_config {
        eprint!("{}", config::render(cfg));
    }
}

fn track(a: TrackArgs) -> Result<()> {
    let mut cfg = a.tuning.load()?;
    if a.no_gicp {
        cfg.optimizer.use_gicp = false;
    }
    if a.no_sky_mask {
        cfg.optimizer.use_sky_mask = false;
    }
    cfg.validate()?;
    show(&a.tuning, &cfg);
    let data = dataset::load(&a.data)?;
    let out = a.out.unwrap_or_else(|| a.data.join("est_traj.tum"));
    let diag_path = a.diagnostics.unwrap_or_else(|| out.with_extension("log"));
    let diag_file = File::create(&diag_path).with_context(|| format!("creating {}", diag_path.display()))?;
    let mut diag = BufWriter::new(diag_file);
    let mut write_err = None;
    let tracking = track_sequence_with(&data.frames, &data.intrinsics, &cfg.optimizer, |d| {
        eprintln!("frame {}: loss {:.5} -> {:.5}", d.frame, d.initial_loss, d.final_loss);
        if let Err(e) = writeln!(diag, "{d}") {
            write_err.get_or_insert(e);
        }
    })?;
    if let Some(e) = write_err {
        return Err(e).with_context(|| format!("writing {}", diag_path.display()));
    }
    diag.flush().with_context(|| format!("writing {}", diag_path.display()))?;
    io::write_tum(&out, &io::indexed(&tracking.poses))?;
    eprintln!("wrote {} and {}", out.display(), diag_path.display());
    Ok(())
}

/// Poses for frames `0..n` from a trajectory stamped with frame indices.
fn poses_by_index(path: &Path, n: usize) -> Result<Vec<PoseSE3>> {
    let samples = io::read_tum(path)?;
    (0..n)
        .map(|i| {
            samples
                .iter()
                .find(|s| s.timestamp == i as f64)
                .map(|s| s.pose)
                .with_context(|| format!("{}: no pose for frame {i}", path.display()))
        })
        .collect()
}

fn run_reconstruct(a: ReconstructArgs) -> Result<()> {
    let mut cfg = a.tuning.load()?;
    if a.no_voxel_densify {
        cfg.voxel_densify = false;
    }
    if a.no_gicp {
        cfg.optimizer.use_gicp = false;
    }
    if a.no_sky_mask {
        cfg.optimizer.use_sky_mask = false;
    }
    if let Some(n) = a.test_every {
        cfg.test_every = n;
    }
    cfg.validate()?;
    show(&a.tuning, &cfg);
    let data = dataset::load(&a.data)?;
    let poses = a
        .traj
        .as_deref()
        .map(|p| poses_by_index(p, data.frames.len()))
        .transpose()?;
    let rec = reconstruct(&data.frames, &data.intrinsics, poses.as_deref(), &cfg)?;

    let held_dir = a.out.join("heldout");
    std::fs::create_dir_all(&held_dir).with_context(|| format!("creating {}", held_dir.display()))?;
    io::write_scene(a.out.join("scene.ply"), &rec.scene)?;
    let stamp = |i: usize, pose: PoseSE3| TimedPose {
        timestamp: i as f64,
        pose,
    };
    let train: Vec<TimedPose> = rec
        .train_indices
        .iter()
        .zip(&rec.train_poses)
        .map(|(&i, p)| stamp(i, *p))
        .collect();
    io::write_tum(a.out.join("train_traj.tum"), &train)?;
    let held: Vec<TimedPose> = rec.held_out.iter().map(|v| stamp(v.index, v.pose)).collect();
    io::write_tum(a.out.join("heldout_traj.tum"), &held)?;
    for v in &rec.held_out {
        io::write_png(dataset::image_path(&held_dir, v.index), &v.render)?;
        eprintln!("held-out frame {}: psnr {:.3} ssim {:.4}", v.index, v.psnr, v.ssim);
    }
    if let Some(t) = &rec.tracking {
        let mut log = String::new();
        for d in &t.diagnostics {
            log += &format!("{d}\n");
        }
        std::fs::write(a.out.join("train_traj.log"), log).context("writing tracking diagnostics")?;
    }
    let growth: usize = rec.growth.iter().sum();
    eprintln!(
        "scene: {} gaussians ({growth} grown), {} training frames",
        rec.scene.len(),
        rec.train_indices.len()
    );
    if let Some(p) = rec.mean_psnr() {
        eprintln!("mean held-out psnr {p:.3}");
    }
    Ok(())
}

fn run_render(a: RenderArgs) -> Result<()> {
    let scene = io::read_scene(&a.scene)?;
    let k = io::read_intrinsics(&a.intrinsics)?;
    let poses = io::read_tum(&a.traj)?;
    std::fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    for (n, s) in poses.iter().enumerate() {
        // Integral timestamps name the frame; anything else falls back to
        // the position in the file.
        let index = if s.timestamp >= 0.0 && s.timestamp.fract() == 0.0 {
            s.timestamp as usize
        } else {
            n
        };
        let out = render(&scene, &s.pose.inverse(), &k);
        io::write_png(dataset::image_path(&a.out, index), &out.color)?;
    }
    eprintln!("rendered {} views to {}", poses.len(), a.out.display());
    Ok(())
}

fn eval(a: EvalArgs) -> Result<()> {
    let mut rep = report::Report::default();
    if let (Some(est), Some(gt)) = (&a.est, &a.gt) {
        rep.trajectory = Some(report::trajectory_report(est, gt, a.delta)?);
    }
    if let (Some(r), Some(i)) = (&a.renders, &a.images) {
        rep.images = Some(report::image_report(r, i)?);
    }
    if rep.trajectory.is_none() && rep.images.is_none() {
        bail!("nothing to evaluate: pass --est/--gt and/or --renders/--images");
    }
    print!("{}", rep.to_text());
    if let Some(path) = &a.json {
        let text = serde_json::to_string_pretty(&rep.to_json())?;
        std::fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(())
}
