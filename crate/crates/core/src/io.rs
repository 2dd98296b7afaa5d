//! File formats: TUM trajectories, binary PLY clouds and scenes, DPTH depth
//! maps, 8-bit PNG images and plain-text intrinsics.

use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use nalgebra::{Vector3, Vector4};

use crate::error::{Error, Result};
use crate::geometry::{CameraIntrinsics, DepthMap, Image, PointCloud, PoseSE3};
use crate::splat::{Gaussian, GaussianScene};

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn parse_error(path: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

/// Non-empty, non-comment lines with their 1-based line numbers.
fn data_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
}

fn parse_fields<const N: usize>(path: &Path, line: usize, text: &str) -> Result<[f64; N]> {
    let parts: Vec<&str> = text.split_whitespace().collect();
    if parts.len() != N {
        return Err(parse_error(path, line, format!("expected {N} fields, found {}", parts.len())));
    }
    let mut out = [0.0f64; N];
    for (o, p) in out.iter_mut().zip(&parts) {
        *o = p
            .parse()
            .map_err(|_| parse_error(path, line, format!("'{p}' is not a number")))?;
        if !o.is_finite() {
            return Err(parse_error(path, line, format!("'{p}' is not finite")));
        }
    }
    Ok(out)
}

/// One trajectory sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimedPose {
    pub timestamp: f64,
    /// Camera to world.
    pub pose: PoseSE3,
}

/// Parse `timestamp tx ty tz qx qy qz qw` lines. `path` only labels errors.
pub fn parse_tum(text: &str, path: &Path) -> Result<Vec<TimedPose>> {
    data_lines(text)
        .map(|(n, l)| {
            let [ts, tx, ty, tz, qx, qy, qz, qw] = parse_fields::<8>(path, n, l)?;
            let norm = (qx * qx + qy * qy + qz * qz + qw * qw).sqrt();
            if !(norm > 1e-12) {
                return Err(parse_error(path, n, "zero quaternion"));
            }
            Ok(TimedPose {
                timestamp: ts,
                pose: PoseSE3::from_quaternion([qx, qy, qz, qw], Vector3::new(tx, ty, tz)),
            })
        })
        .collect()
}

pub fn read_tum(path: impl AsRef<Path>) -> Result<Vec<TimedPose>> {
    let path = path.as_ref();
    parse_tum(&read_text(path)?, path)
}

pub fn format_tum(poses: &[TimedPose]) -> String {
    let mut s = String::from("# timestamp tx ty tz qx qy qz qw\n");
    for p in poses {
        let t = p.pose.translation;
        let [qx, qy, qz, qw] = p.pose.quaternion_xyzw();
        s += &format!(
            "{} {:.17e} {:.17e} {:.17e} {:.17e} {:.17e} {:.17e} {:.17e}\n",
            p.timestamp, t.x, t.y, t.z, qx, qy, qz, qw
        );
    }
    s
}

pub fn write_tum(path: impl AsRef<Path>, poses: &[TimedPose]) -> Result<()> {
    write_bytes(path.as_ref(), format_tum(poses).as_bytes())
}

/// Poses stamped with their frame index.
pub fn indexed(poses: &[PoseSE3]) -> Vec<TimedPose> {
    poses
        .iter()
        .enumerate()
        .map(|(i, p)| TimedPose {
            timestamp: i as f64,
            pose: *p,
        })
        .collect()
}

/// `fx fy cx cy width height` on one line; `#` starts a comment line.
pub fn parse_intrinsics(text: &str, path: &Path) -> Result<CameraIntrinsics> {
    let mut lines = data_lines(text);
    let (n, l) = lines.next().ok_or_else(|| parse_error(path, 1, "no intrinsics line"))?;
    let [fx, fy, cx, cy, w, h] = parse_fields::<6>(path, n, l)?;
    if w.fract() != 0.0 || h.fract() != 0.0 || w < 1.0 || h < 1.0 {
        return Err(parse_error(path, n, "width and height must be positive integers"));
    }
    if let Some((n, _)) = lines.next() {
        return Err(parse_error(path, n, "unexpected extra line"));
    }
    CameraIntrinsics::new(fx, fy, cx, cy, w as usize, h as usize).map_err(|e| parse_error(path, n, e.to_string()))
}

pub fn read_intrinsics(path: impl AsRef<Path>) -> Result<CameraIntrinsics> {
    let path = path.as_ref();
    parse_intrinsics(&read_text(path)?, path)
}

pub fn write_intrinsics(path: impl AsRef<Path>, k: &CameraIntrinsics) -> Result<()> {
    let text = format!(
        "# fx fy cx cy width height\n{} {} {} {} {} {}\n",
        k.fx, k.fy, k.cx, k.cy, k.width, k.height
    );
    write_bytes(path.as_ref(), text.as_bytes())
}

const DEPTH_MAGIC: &[u8; 4] = b"DPTH";

/// `DPTH`, little-endian `u32` width and height, then row-major `f32`
/// values.
pub fn encode_depth(depth: &DepthMap) -> Vec<u8> {
    let mut out = Vec::with_capacity(12 + 4 * depth.values.len());
    out.extend_from_slice(DEPTH_MAGIC);
    out.extend_from_slice(&(depth.width() as u32).to_le_bytes());
    out.extend_from_slice(&(depth.height() as u32).to_le_bytes());
    for v in &depth.values {
        out.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    out
}

/// Decode depth values; the result is shaped `width x height`.
pub fn decode_depth(bytes: &[u8], path: &Path) -> Result<(usize, usize, Vec<f64>)> {
    if bytes.len() < 12 || &bytes[..4] != DEPTH_MAGIC {
        return Err(Error::format(path, "missing DPTH header"));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().expect("four bytes")) as usize;
    let (w, h) = (word(4), word(8));
    let expected = w.checked_mul(h).and_then(|n| n.checked_mul(4)).and_then(|n| n.checked_add(12));
    if expected != Some(bytes.len()) {
        return Err(Error::format(
            path,
            format!("{w}x{h} depth needs {} bytes, file has {}", 12 + 4 * w * h, bytes.len()),
        ));
    }
    let values = bytes[12..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("four bytes")) as f64)
        .collect();
    Ok((w, h, values))
}

/// Read a depth map and attach `k`, whose size must match the file.
pub fn read_depth(path: impl AsRef<Path>, k: &CameraIntrinsics) -> Result<DepthMap> {
    let path = path.as_ref();
    let (w, h, values) = decode_depth(&read_bytes(path)?, path)?;
    if (w, h) != (k.width, k.height) {
        return Err(Error::format(
            path,
            format!("depth is {w}x{h} but intrinsics are {}x{}", k.width, k.height),
        ));
    }
    DepthMap::new(values, *k).map_err(|e| Error::format(path, e.to_string()))
}

pub fn write_depth(path: impl AsRef<Path>, depth: &DepthMap) -> Result<()> {
    write_bytes(path.as_ref(), &encode_depth(depth))
}

/// Unit-range value to an 8-bit level, rounding half up.
pub fn quantize(v: f64) -> u8 {
    (v * 255.0 + 0.5).floor().clamp(0.0, 255.0) as u8
}

pub fn write_png(path: impl AsRef<Path>, img: &Image) -> Result<()> {
    let path = path.as_ref();
    let bytes: Vec<u8> = img.data.iter().map(|&v| quantize(v)).collect();
    let buf = image::RgbImage::from_raw(img.width as u32, img.height as u32, bytes)
        .ok_or_else(|| Error::format(path, "image buffer size mismatch"))?;
    buf.save_with_format(path, image::ImageFormat::Png)
        .map_err(|e| Error::format(path, e.to_string()))
}

pub fn read_png(path: impl AsRef<Path>) -> Result<Image> {
    let path = path.as_ref();
    let bytes = read_bytes(path)?;
    let img = image::load_from_memory_with_format(&bytes, image::ImageFormat::Png)
        .map_err(|e| Error::format(path, e.to_string()))?
        .to_rgb8();
    let (w, h) = img.dimensions();
    let data = img.into_raw().into_iter().map(|b| b as f64 / 255.0).collect();
    Image::from_vec(w as usize, h as usize, data)
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum PlyType {
    U8,
    F32,
    F64,
}

impl PlyType {
    fn parse(s: &str) -> Option<Self> {
        match s {
            "uchar" | "uint8" => Some(Self::U8),
            "float" | "float32" => Some(Self::F32),
            "double" | "float64" => Some(Self::F64),
            _ => None,
        }
    }

    fn name(self) -> &'static str {
        match self {
            Self::U8 => "uchar",
            Self::F32 => "float",
            Self::F64 => "double",
        }
    }

    fn size(self) -> usize {
        match self {
            Self::U8 => 1,
            Self::F32 => 4,
            Self::F64 => 8,
        }
    }

    fn read(self, b: &[u8]) -> f64 {
        match self {
            Self::U8 => b[0] as f64,
            Self::F32 => f32::from_le_bytes(b.try_into().expect("four bytes")) as f64,
            Self::F64 => f64::from_le_bytes(b.try_into().expect("eight bytes")),
        }
    }

    fn write(self, v: f64, out: &mut Vec<u8>) {
        match self {
            Self::U8 => out.push((v + 0.5).floor().clamp(0.0, 255.0) as u8),
            Self::F32 => out.extend_from_slice(&(v as f32).to_le_bytes()),
            Self::F64 => out.extend_from_slice(&v.to_le_bytes()),
        }
    }
}

/// Vertex table of a binary little-endian PLY file.
struct PlyTable {
    names: Vec<String>,
    rows: Vec<Vec<f64>>,
}

impl PlyTable {
    fn column(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    fn require(&self, name: &str, path: &Path) -> Result<usize> {
        self.column(name)
            .ok_or_else(|| Error::format(path, format!("missing vertex property '{name}'")))
    }
}

fn write_ply(path: &Path, props: &[(&str, PlyType)], rows: usize, row: impl Fn(usize, &mut Vec<u8>)) -> Result<()> {
    let mut out = format!("ply\nformat binary_little_endian 1.0\nelement vertex {rows}\n").into_bytes();
    for (name, ty) in props {
        out.extend_from_slice(format!("property {} {name}\n", ty.name()).as_bytes());
    }
    out.extend_from_slice(b"end_header\n");
    for i in 0..rows {
        row(i, &mut out);
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&out).map_err(|e| Error::io(path, e))
}

fn read_ply(path: &Path) -> Result<PlyTable> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = BufReader::new(file);
    let mut line = String::new();
    let mut header_line = 0;
    let mut next = |reader: &mut BufReader<fs::File>, line: &mut String| -> Result<usize> {
        line.clear();
        header_line += 1;
        let n = reader.read_line(line).map_err(|e| Error::io(path, e))?;
        if n == 0 {
            return Err(Error::format(path, "header ends before end_header"));
        }
        Ok(header_line)
    };
    next(&mut reader, &mut line)?;
    if line.trim_end() != "ply" {
        return Err(Error::format(path, "not a PLY file"));
    }
    let mut vertices = None;
    let mut in_vertex = false;
    let mut props: Vec<(String, PlyType)> = Vec::new();
    loop {
        let n = next(&mut reader, &mut line)?;
        let words: Vec<&str> = line.split_whitespace().collect();
        match words.as_slice() {
            ["end_header"] => break,
            ["format", "binary_little_endian", _] => {}
            ["format", other, ..] => {
                return Err(parse_error(path, n, format!("unsupported PLY format '{other}'")));
            }
            ["comment", ..] | ["obj_info", ..] => {}
            ["element", name, count] => {
                in_vertex = *name == "vertex";
                if in_vertex {
                    vertices = Some(
                        count
                            .parse::<usize>()
                            .map_err(|_| parse_error(path, n, "bad vertex count"))?,
                    );
                } else if vertices.is_some() || count.parse::<usize>() != Ok(0) {
                    return Err(parse_error(path, n, format!("unsupported element '{name}'")));
                }
            }
            ["property", ty, name] if in_vertex => {
                let ty = PlyType::parse(ty).ok_or_else(|| parse_error(path, n, format!("unsupported type '{ty}'")))?;
                props.push((name.to_string(), ty));
            }
            _ => return Err(parse_error(path, n, format!("unexpected header line '{}'", line.trim_end()))),
        }
    }
    let count = vertices.ok_or_else(|| Error::format(path, "no vertex element"))?;
    let stride: usize = props.iter().map(|(_, t)| t.size()).sum();
    let mut body = Vec::new();
    reader.read_to_end(&mut body).map_err(|e| Error::io(path, e))?;
    if Some(body.len()) != count.checked_mul(stride) {
        return Err(Error::format(
            path,
            format!("{count} vertices need {} bytes, found {}", count * stride, body.len()),
        ));
    }
    let rows = body
        .chunks_exact(stride.max(1))
        .take(count)
        .map(|chunk| {
            let mut at = 0;
            props
                .iter()
                .map(|(_, t)| {
                    let v = t.read(&chunk[at..at + t.size()]);
                    at += t.size();
                    v
                })
                .collect()
        })
        .collect();
    Ok(PlyTable {
        names: props.into_iter().map(|(n, _)| n).collect(),
        rows,
    })
}

/// `x y z` as `float`, plus `red green blue` as `uchar` when colored.
pub fn write_ply_cloud(path: impl AsRef<Path>, cloud: &PointCloud) -> Result<()> {
    let mut props = vec![("x", PlyType::F32), ("y", PlyType::F32), ("z", PlyType::F32)];
    if cloud.colors.is_some() {
        props.extend([("red", PlyType::U8), ("green", PlyType::U8), ("blue", PlyType::U8)]);
    }
    write_ply(path.as_ref(), &props, cloud.len(), |i, out| {
        for v in cloud.points[i].iter() {
            PlyType::F32.write(*v, out);
        }
        if let Some(c) = &cloud.colors {
            for v in c[i].iter() {
                PlyType::U8.write(v * 255.0, out);
            }
        }
    })
}

pub fn read_ply_cloud(path: impl AsRef<Path>) -> Result<PointCloud> {
    let path = path.as_ref();
    let t = read_ply(path)?;
    let xyz = [t.require("x", path)?, t.require("y", path)?, t.require("z", path)?];
    let rgb = match (t.column("red"), t.column("green"), t.column("blue")) {
        (Some(r), Some(g), Some(b)) => Some([r, g, b]),
        _ => None,
    };
    let points = t.rows.iter().map(|r| Vector3::new(r[xyz[0]], r[xyz[1]], r[xyz[2]])).collect();
    let mut cloud = PointCloud::from_points(points);
    cloud.colors = rgb.map(|c| {
        t.rows
            .iter()
            .map(|r| Vector3::new(r[c[0]], r[c[1]], r[c[2]]) / 255.0)
            .collect()
    });
    Ok(cloud)
}

/// Property names of a scene dump, all stored as `double`: the center,
/// log scales, rotation quaternion `(w, x, y, z)`, opacity logit and RGB.
pub const SCENE_PROPERTIES: [&str; 14] = [
    "x",
    "y",
    "z",
    "log_scale_0",
    "log_scale_1",
    "log_scale_2",
    "rot_w",
    "rot_x",
    "rot_y",
    "rot_z",
    "opacity_logit",
    "color_r",
    "color_g",
    "color_b",
];

fn gaussian_row(g: &Gaussian) -> [f64; 14] {
    let (m, s, q, c) = (g.mean, g.log_scale, g.rotation, g.color);
    [m.x, m.y, m.z, s.x, s.y, s.z, q[0], q[1], q[2], q[3], g.opacity_logit, c.x, c.y, c.z]
}

pub fn write_scene(path: impl AsRef<Path>, scene: &GaussianScene) -> Result<()> {
    let props: Vec<_> = SCENE_PROPERTIES.iter().map(|n| (*n, PlyType::F64)).collect();
    write_ply(path.as_ref(), &props, scene.len(), |i, out| {
        for v in gaussian_row(&scene.gaussians[i]) {
            PlyType::F64.write(v, out);
        }
    })
}

pub fn read_scene(path: impl AsRef<Path>) -> Result<GaussianScene> {
    let path = path.as_ref();
    let t = read_ply(path)?;
    let cols = SCENE_PROPERTIES
        .iter()
        .map(|n| t.require(n, path))
        .collect::<Result<Vec<_>>>()?;
    let gaussians = t
        .rows
        .iter()
        .map(|r| {
            let v = |i: usize| r[cols[i]];
            Gaussian {
                mean: Vector3::new(v(0), v(1), v(2)),
                log_scale: Vector3::new(v(3), v(4), v(5)),
                rotation: Vector4::new(v(6), v(7), v(8), v(9)),
                opacity_logit: v(10),
                color: Vector3::new(v(11), v(12), v(13)),
            }
        })
        .collect();
    Ok(GaussianScene::new(gaussians))
}
