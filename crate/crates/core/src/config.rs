//! Plain-text `key = value` configuration covering every tunable default.
//!
//! Blank lines and lines starting with `#` are ignored. Later assignments
//! win, so command-line overrides can simply be applied after the file.

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::reconstruct::ReconstructConfig;

trait Value: Sized {
    fn parse_value(s: &str) -> Option<Self>;
    fn show(&self) -> String;
}

macro_rules! plain_value {
    ($($t:ty),*) => {$(
        impl Value for $t {
            fn parse_value(s: &str) -> Option<Self> {
                <$t>::from_str(s).ok()
            }
            fn show(&self) -> String {
                self.to_string()
            }
        }
    )*};
}
plain_value!(f64, usize, bool);

/// `none` stands for an unset optional value.
impl<T: Value> Value for Option<T> {
    fn parse_value(s: &str) -> Option<Self> {
        if s == "none" {
            Some(None)
        } else {
            T::parse_value(s).map(Some)
        }
    }
    fn show(&self) -> String {
        self.as_ref().map_or_else(|| "none".to_string(), T::show)
    }
}

macro_rules! keys {
    ($($key:literal => $($field:ident).+;)*) => {
        /// Every recognised key, in file order.
        pub const KEYS: &[&str] = &[$($key),*];

        fn set(cfg: &mut ReconstructConfig, key: &str, value: &str) -> std::result::Result<(), String> {
            match key {
                $($key => {
                    cfg.$($field).+ = Value::parse_value(value)
                        .ok_or_else(|| format!("bad value '{value}' for '{key}'"))?;
                })*
                _ => return Err(format!("unknown key '{key}'")),
            }
            Ok(())
        }

        fn get(cfg: &ReconstructConfig, key: &str) -> Option<String> {
            match key {
                $($key => Some(cfg.$($field).+.show()),)*
                _ => None,
            }
        }
    };
}

keys! {
    "lr.means" => optimizer.lr.means;
    "lr.log_scales" => optimizer.lr.log_scales;
    "lr.rotations" => optimizer.lr.rotations;
    "lr.opacities" => optimizer.lr.opacities;
    "lr.colors" => optimizer.lr.colors;
    "lr.twist_rotation" => optimizer.lr.twist_rotation;
    "lr.twist_translation" => optimizer.lr.twist_translation;
    "fit_iterations" => optimizer.fit_iterations;
    "refine_iterations" => optimizer.refine_iterations;
    "adam.beta1" => optimizer.beta1;
    "adam.beta2" => optimizer.beta2;
    "adam.epsilon" => optimizer.epsilon;
    "translation_decay_at" => optimizer.translation_decay_at;
    "translation_decay" => optimizer.translation_decay;
    "convergence_window" => optimizer.convergence_window;
    "convergence_tolerance" => optimizer.convergence_tolerance;
    "lift_stride" => optimizer.lift_stride;
    "gicp_stride" => optimizer.gicp_stride;
    "init_scale_factor" => optimizer.init_scale_factor;
    "ssim_lambda" => optimizer.ssim_lambda;
    "min_coverage" => optimizer.min_coverage;
    "use_gicp" => optimizer.use_gicp;
    "use_sky_mask" => optimizer.use_sky_mask;
    "sky_epsilon" => optimizer.sky_epsilon;
    "gicp.k_neighbors" => optimizer.gicp.k_neighbors;
    "gicp.max_iterations" => optimizer.gicp.max_iterations;
    "gicp.rotation_epsilon" => optimizer.gicp.rotation_epsilon;
    "gicp.translation_epsilon" => optimizer.gicp.translation_epsilon;
    "gicp.max_correspondence_distance" => optimizer.gicp.max_correspondence_distance;
    "gicp.plane_epsilon" => optimizer.gicp.plane_epsilon;
    "gicp.max_source_points" => optimizer.gicp.max_source_points;
    "test_every" => test_every;
    "voxel_densify" => voxel_densify;
    "voxel_fraction" => voxel_fraction;
    "density_ratio_threshold" => density_ratio_threshold;
    "max_points_per_voxel" => max_points_per_voxel;
    "densify_stride" => densify_stride;
    "window_frames" => window_frames;
    "window_iterations" => window_iterations;
    "final_iterations" => final_iterations;
    "prune_opacity" => prune_opacity;
}

/// Apply one `key=value` assignment.
pub fn apply_override(cfg: &mut ReconstructConfig, assignment: &str) -> Result<()> {
    let (k, v) = assignment
        .split_once('=')
        .ok_or_else(|| Error::invalid(format!("expected key=value, got '{assignment}'")))?;
    set(cfg, k.trim(), v.trim()).map_err(Error::InvalidArgument)
}

/// Apply every assignment in `text` on top of `cfg`. `path` labels errors.
pub fn apply_text(cfg: &mut ReconstructConfig, text: &str, path: &Path) -> Result<()> {
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let parse = |message: String| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message,
        };
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| parse(format!("expected key = value, got '{line}'")))?;
        set(cfg, k.trim(), v.trim()).map_err(parse)?;
    }
    Ok(())
}

pub fn load(path: impl AsRef<Path>) -> Result<ReconstructConfig> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut cfg = ReconstructConfig::default();
    apply_text(&mut cfg, &text, path)?;
    cfg.validate()?;
    Ok(cfg)
}

/// Every key with its current value, one per line.
pub fn render(cfg: &ReconstructConfig) -> String {
    let mut s = String::new();
    for key in KEYS {
        let v = get(cfg, key).expect("listed key");
        writeln!(s, "{key} = {v}").expect("writing to a string");
    }
    s
}
