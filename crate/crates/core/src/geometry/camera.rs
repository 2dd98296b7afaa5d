use nalgebra::{Vector2, Vector3};

use super::cloud::PointCloud;
use super::pose::PoseSE3;
use crate::error::{Error, Result};

/// Pinhole intrinsics. Pixel `(u, v)` has its center at continuous
/// coordinate `(u, v)`; `u` grows rightwards, `v` downwards and the camera
/// looks along `+z`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: usize, height: usize) -> Result<Self> {
        let k = Self {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        };
        k.validate()?;
        Ok(k)
    }

    /// Square pixels, principal point at the image center.
    pub fn centered(focal: f64, width: usize, height: usize) -> Result<Self> {
        Self::new(
            focal,
            focal,
            (width as f64 - 1.0) / 2.0,
            (height as f64 - 1.0) / 2.0,
            width,
            height,
        )
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.fx > 0.0
            && self.fy > 0.0
            && self.width > 0
            && self.height > 0
            && self.cx >= 0.0
            && self.cx < self.width as f64
            && self.cy >= 0.0
            && self.cy < self.height as f64;
        if ok {
            Ok(())
        } else {
            Err(Error::invalid(format!("invalid intrinsics {self:?}")))
        }
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }

    /// Camera-frame point to pixel coordinates.
    pub fn project(&self, p: &Vector3<f64>) -> Vector2<f64> {
        Vector2::new(
            self.fx * p.x / p.z + self.cx,
            self.fy * p.y / p.z + self.cy,
        )
    }

    /// Pixel coordinates and z-depth to a camera-frame point.
    pub fn unproject(&self, u: f64, v: f64, depth: f64) -> Vector3<f64> {
        Vector3::new(
            (u - self.cx) * depth / self.fx,
            (v - self.cy) * depth / self.fy,
            depth,
        )
    }

    /// Intrinsics for the same camera at a different resolution.
    pub fn scaled(&self, factor: f64) -> Result<Self> {
        let width = ((self.width as f64) * factor).round().max(1.0) as usize;
        let height = ((self.height as f64) * factor).round().max(1.0) as usize;
        Self::new(
            self.fx * factor,
            self.fy * factor,
            (self.cx + 0.5) * factor - 0.5,
            (self.cy + 0.5) * factor - 0.5,
            width,
            height,
        )
    }
}

/// Row-major RGB image with channels in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    /// `height * width * 3` values.
    pub data: Vec<f64>,
}

impl Image {
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![0.0; width * height * 3],
        }
    }

    pub fn filled(width: usize, height: usize, rgb: [f64; 3]) -> Self {
        let mut img = Self::new(width, height);
        for px in img.data.chunks_exact_mut(3) {
            px.copy_from_slice(&rgb);
        }
        img
    }

    pub fn from_vec(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != width * height * 3 {
            return Err(Error::dims(width * height * 3, data.len()));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn get(&self, x: usize, y: usize) -> [f64; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn set(&mut self, x: usize, y: usize, rgb: [f64; 3]) {
        let i = (y * self.width + x) * 3;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    pub fn same_shape(&self, other: &Image) -> Result<()> {
        if self.width == other.width && self.height == other.height {
            Ok(())
        } else {
            Err(Error::dims(
                format!("{}x{}", self.width, self.height),
                format!("{}x{}", other.width, other.height),
            ))
        }
    }
}

/// Per-pixel boolean mask, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    pub width: usize,
    pub height: usize,
    pub data: Vec<bool>,
}

impl Mask {
    pub fn new(width: usize, height: usize, value: bool) -> Self {
        Self {
            width,
            height,
            data: vec![value; width * height],
        }
    }

    pub fn get(&self, x: usize, y: usize) -> bool {
        self.data[y * self.width + x]
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }
}

/// Z-depth per pixel, paired with the intrinsics that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthMap {
    pub values: Vec<f64>,
    pub intrinsics: CameraIntrinsics,
}

impl DepthMap {
    pub fn new(values: Vec<f64>, intrinsics: CameraIntrinsics) -> Result<Self> {
        let d = Self { values, intrinsics };
        d.validate()?;
        Ok(d)
    }

    pub fn validate(&self) -> Result<()> {
        self.intrinsics.validate()?;
        if self.values.len() != self.intrinsics.pixel_count() {
            return Err(Error::dims(
                self.intrinsics.pixel_count(),
                self.values.len(),
            ));
        }
        if let Some(bad) = self.values.iter().find(|v| !(v.is_finite() && **v > 0.0)) {
            return Err(Error::invalid(format!("depth value {bad} is not finite and positive")));
        }
        Ok(())
    }

    pub fn width(&self) -> usize {
        self.intrinsics.width
    }

    pub fn height(&self) -> usize {
        self.intrinsics.height
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.values[y * self.intrinsics.width + x]
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Back-project every `stride`-th pixel (in both directions) to 3D and
/// transform it by `pose`. Colors are copied from `image` when given; pixels
/// set in `exclude` are skipped.
pub fn lift_depth(
    depth: &DepthMap,
    pose: &PoseSE3,
    stride: usize,
    image: Option<&Image>,
    exclude: Option<&Mask>,
) -> Result<PointCloud> {
    if stride == 0 {
        return Err(Error::invalid("stride must be at least 1"));
    }
    depth.validate()?;
    let k = &depth.intrinsics;
    if let Some(img) = image {
        if img.width != k.width || img.height != k.height {
            return Err(Error::dims(
                format!("{}x{}", k.width, k.height),
                format!("{}x{}", img.width, img.height),
            ));
        }
    }
    if let Some(m) = exclude {
        if m.width != k.width || m.height != k.height {
            return Err(Error::dims(
                format!("{}x{}", k.width, k.height),
                format!("{}x{} mask", m.width, m.height),
            ));
        }
    }
    let mut points = Vec::new();
    let mut colors = image.map(|_| Vec::new());
    let mut pixels = Vec::new();
    for v in (0..k.height).step_by(stride) {
        for u in (0..k.width).step_by(stride) {
            if exclude.is_some_and(|m| m.get(u, v)) {
                continue;
            }
            let cam = k.unproject(u as f64, v as f64, depth.get(u, v));
            points.push(pose.transform_point(&cam));
            if let (Some(cols), Some(img)) = (colors.as_mut(), image) {
                let c = img.get(u, v);
                cols.push(Vector3::new(c[0], c[1], c[2]));
            }
            pixels.push([u as f64, v as f64]);
        }
    }
    Ok(PointCloud {
        points,
        colors,
        source_pixels: Some(pixels),
    })
}

/// Pixels whose depth reaches the map's maximum (within a relative
/// tolerance `epsilon`). `true` marks a pixel excluded from pose
/// optimization.
pub fn compute_sky_mask(depth: &DepthMap, epsilon: f64) -> Mask {
    let max = depth.max();
    let cutoff = max - epsilon * max.abs();
    Mask {
        width: depth.width(),
        height: depth.height(),
        data: depth.values.iter().map(|&d| d >= cutoff).collect(),
    }
}

/// Relative tolerance used by the pipeline when detecting saturated depth.
pub const DEFAULT_SKY_EPSILON: f64 = 1e-6;
