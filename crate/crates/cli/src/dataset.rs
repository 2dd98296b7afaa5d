//! On-disk dataset layout: `NNNN.png`, `NNNN.depth`, `intrinsics.txt` and
//! optionally `gt_traj.tum`, all in one directory.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use gsfree::geometry::{CameraIntrinsics, DepthMap, Image};
use gsfree::io;

pub const INTRINSICS_FILE: &str = "intrinsics.txt";
pub const GT_TRAJECTORY_FILE: &str = "gt_traj.tum";

pub fn image_path(dir: &Path, index: usize) -> PathBuf {
    dir.join(format!("{index:04}.png"))
}

pub fn depth_path(dir: &Path, index: usize) -> PathBuf {
    dir.join(format!("{index:04}.depth"))
}

pub struct Dataset {
    pub intrinsics: CameraIntrinsics,
    pub frames: Vec<(Image, DepthMap)>,
}

/// Frame indices present as `NNNN.png`, which must run 0, 1, 2, ...
fn frame_count(dir: &Path) -> Result<usize> {
    let mut indices = Vec::new();
    let entries = std::fs::read_dir(dir).with_context(|| format!("reading dataset directory {}", dir.display()))?;
    for entry in entries {
        let name = entry?.file_name();
        let name = name.to_string_lossy();
        if let Some(stem) = name.strip_suffix(".png") {
            if stem.len() == 4 {
                if let Ok(i) = stem.parse::<usize>() {
                    indices.push(i);
                }
            }
        }
    }
    indices.sort_unstable();
    if let Some((pos, _)) = indices.iter().enumerate().find(|(pos, i)| pos != *i) {
        bail!("{} is missing", image_path(dir, pos).display());
    }
    if indices.is_empty() {
        bail!("no NNNN.png frames in {}", dir.display());
    }
    Ok(indices.len())
}

pub fn load(dir: &Path) -> Result<Dataset> {
    let intrinsics = io::read_intrinsics(dir.join(INTRINSICS_FILE))?;
    let n = frame_count(dir)?;
    let mut frames = Vec::with_capacity(n);
    for i in 0..n {
        let path = image_path(dir, i);
        let image = io::read_png(&path)?;
        if (image.width, image.height) != (intrinsics.width, intrinsics.height) {
            bail!(
                "{}: image is {}x{} but intrinsics are {}x{}",
                path.display(),
                image.width,
                image.height,
                intrinsics.width,
                intrinsics.height
            );
        }
        let depth = io::read_depth(depth_path(dir, i), &intrinsics)?;
        frames.push((image, depth));
    }
    Ok(Dataset { intrinsics, frames })
}

pub fn save(dir: &Path, intrinsics: &CameraIntrinsics, frames: &[(Image, DepthMap)]) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    io::write_intrinsics(dir.join(INTRINSICS_FILE), intrinsics)?;
    for (i, (image, depth)) in frames.iter().enumerate() {
        io::write_png(image_path(dir, i), image)?;
        io::write_depth(depth_path(dir, i), depth)?;
    }
    Ok(())
}
