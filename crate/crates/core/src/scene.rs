//! Multi-view datasets: NeRF-synthetic style on-disk format, PNG I/O and a
//! procedural scene generator.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};

use nalgebra::{Matrix3, Matrix4, Vector3};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gaussian::CameraPose;
use crate::raster::Image;
use crate::rng;

/// One training view.
#[derive(Debug, Clone, PartialEq)]
pub struct View {
    pub image: Image,
    pub pose: CameraPose,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub name: String,
    pub views: Vec<View>,
    /// Radius of the bounding sphere of the camera centers.
    pub scene_extent: f64,
}

impl Dataset {
    pub fn new(name: impl Into<String>, views: Vec<View>) -> Result<Self> {
        if views.is_empty() {
            return Err(Error::EmptyDataset);
        }
        for (k, v) in views.iter().enumerate() {
            v.pose.validate()?;
            if v.image.width != v.pose.width || v.image.height != v.pose.height {
                return Err(Error::DimensionMismatch {
                    expected: format!("view {k}: {}x{}", v.pose.width, v.pose.height),
                    actual: format!("{}x{}", v.image.width, v.image.height),
                });
            }
        }
        let centers: Vec<Vector3<f64>> = views.iter().map(|v| v.pose.center()).collect();
        let centroid = centers.iter().sum::<Vector3<f64>>() / centers.len() as f64;
        let scene_extent = centers.iter().map(|c| (c - centroid).norm()).fold(0.0, f64::max);
        Ok(Dataset { name: name.into(), views, scene_extent })
    }

    pub fn len(&self) -> usize {
        self.views.len()
    }

    pub fn is_empty(&self) -> bool {
        self.views.is_empty()
    }

    pub fn poses(&self) -> Vec<CameraPose> {
        self.views.iter().map(|v| v.pose.clone()).collect()
    }

    /// Point closest (least squares) to every camera's optical axis; falls back
    /// to the camera centroid when the axes are near parallel.
    pub fn look_at_center(&self) -> Vector3<f64> {
        let mut a = Matrix3::zeros();
        let mut b = Vector3::zeros();
        let mut centroid = Vector3::zeros();
        for v in &self.views {
            let d = v.pose.forward();
            let c = v.pose.center();
            let p = Matrix3::identity() - d * d.transpose();
            a += p;
            b += p * c;
            centroid += c;
        }
        centroid /= self.views.len() as f64;
        if a.determinant().abs() > 1e-6 * self.views.len().pow(3) as f64 {
            if let Some(inv) = a.try_inverse() {
                return inv * b;
            }
        }
        centroid
    }

    /// Axis-aligned cube used for random initialization: centered on the
    /// look-at point with half-size `scene_extent / 3`.
    pub fn init_bounds(&self) -> (Vector3<f64>, Vector3<f64>) {
        let c = self.look_at_center();
        let half = Vector3::repeat((self.scene_extent / 3.0).max(1e-3));
        (c - half, c + half)
    }

    /// Mean total-variation score of the view images.
    pub fn mean_tv(&self) -> f64 {
        self.views.iter().map(|v| crate::attack::tv_score(&v.image)).sum::<f64>() / self.len() as f64
    }
}

// ---------------------------------------------------------------------------
// transforms.json

#[derive(Debug, Serialize, Deserialize)]
struct TransformsFile {
    camera_angle_x: f64,
    frames: Vec<FrameEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
struct FrameEntry {
    file_path: String,
    transform_matrix: [[f64; 4]; 4],
}

/// Echo of the attack parameters written next to a poisoned dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackSidecar {
    /// `None` means unbounded.
    pub epsilon: Option<f64>,
    pub eta: f64,
    #[serde(rename = "T")]
    pub outer_iterations: usize,
    #[serde(rename = "T_tilde")]
    pub inner_steps: usize,
    pub seed: u64,
}

pub const TRANSFORMS_FILE: &str = "transforms.json";
pub const ATTACK_SIDECAR_FILE: &str = "attack.json";

/// Flip between OpenGL (y up, looking −z) and the internal (y down, looking +z) camera axes.
fn axis_flip() -> Matrix4<f64> {
    Matrix4::from_diagonal(&nalgebra::Vector4::new(1.0, -1.0, -1.0, 1.0))
}

fn rigid_inverse(m: &Matrix4<f64>) -> Matrix4<f64> {
    let r = m.fixed_view::<3, 3>(0, 0).transpose();
    let t = -(r * m.fixed_view::<3, 1>(0, 3));
    let mut out = Matrix4::identity();
    out.fixed_view_mut::<3, 3>(0, 0).copy_from(&r);
    out.fixed_view_mut::<3, 1>(0, 3).copy_from(&t);
    out
}

/// Loads a dataset, compositing alpha images over white.
pub fn load_dataset(path: impl AsRef<Path>) -> Result<Dataset> {
    load_dataset_with_background(path, [1.0; 3])
}

pub fn load_dataset_with_background(path: impl AsRef<Path>, background: [f64; 3]) -> Result<Dataset> {
    let dir = path.as_ref();
    let transforms_path = dir.join(TRANSFORMS_FILE);
    if !transforms_path.is_file() {
        return Err(Error::DatasetNotFound(dir.to_path_buf()));
    }
    let text = fs::read_to_string(&transforms_path)?;
    let parsed: TransformsFile =
        serde_json::from_str(&text).map_err(|e| Error::MalformedDataset(format!("{}: {e}", transforms_path.display())))?;
    if parsed.frames.is_empty() {
        return Err(Error::MalformedDataset("transforms.json has no frames".into()));
    }
    if !(parsed.camera_angle_x > 0.0 && parsed.camera_angle_x < std::f64::consts::PI) {
        return Err(Error::MalformedDataset(format!("camera_angle_x {} out of range", parsed.camera_angle_x)));
    }
    let mut views = Vec::with_capacity(parsed.frames.len());
    for frame in &parsed.frames {
        let image = read_png(&resolve_image_path(dir, &frame.file_path), background)?;
        let rows = &frame.transform_matrix;
        let c2w_gl = Matrix4::from_fn(|r, c| rows[r][c]);
        let c2w = c2w_gl * axis_flip();
        let rot = c2w.fixed_view::<3, 3>(0, 0).into_owned();
        if c2w.iter().any(|v| !v.is_finite())
            || (rot * rot.transpose() - Matrix3::identity()).abs().max() >= 1e-5
            || (c2w.row(3) - nalgebra::RowVector4::new(0.0, 0.0, 0.0, 1.0)).abs().max() > 1e-9
        {
            return Err(Error::MalformedDataset(format!(
                "transform_matrix for {} is not an invertible rigid transform",
                frame.file_path
            )));
        }
        let fx = 0.5 * image.width as f64 / (0.5 * parsed.camera_angle_x).tan();
        let pose = CameraPose {
            world_to_camera: rigid_inverse(&c2w),
            fx,
            fy: fx,
            cx: image.width as f64 / 2.0,
            cy: image.height as f64 / 2.0,
            width: image.width,
            height: image.height,
        };
        views.push(View { image, pose });
    }
    let name = dir.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_else(|| "dataset".into());
    Dataset::new(name, views)
}

fn resolve_image_path(dir: &Path, file_path: &str) -> PathBuf {
    let rel = file_path.strip_prefix("./").unwrap_or(file_path);
    let p = dir.join(rel);
    if p.extension().is_some_and(|e| e.eq_ignore_ascii_case("png")) {
        p
    } else {
        dir.join(format!("{rel}.png"))
    }
}

/// Writes `transforms.json` and one 8-bit RGB PNG per view under `train/`.
pub fn save_dataset(dataset: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let dir = path.as_ref();
    fs::create_dir_all(dir.join("train"))?;
    let first = &dataset.views[0].pose;
    let camera_angle_x = 2.0 * (0.5 * first.width as f64 / first.fx).atan();
    let mut frames = Vec::with_capacity(dataset.len());
    for (k, view) in dataset.views.iter().enumerate() {
        let file_path = format!("./train/r_{k:03}");
        write_png(&dir.join(format!("train/r_{k:03}.png")), &view.image)?;
        let c2w_gl = rigid_inverse(&view.pose.world_to_camera) * axis_flip();
        let transform_matrix = std::array::from_fn(|r| std::array::from_fn(|c| c2w_gl[(r, c)]));
        frames.push(FrameEntry { file_path, transform_matrix });
    }
    let file = TransformsFile { camera_angle_x, frames };
    fs::write(dir.join(TRANSFORMS_FILE), serde_json::to_string_pretty(&file)?)?;
    Ok(())
}

/// Writes `dataset`'s images over the file layout of the dataset at `source`,
/// copying its `transforms.json` byte for byte so poses stay bit-identical.
pub fn save_like(dataset: &Dataset, source: impl AsRef<Path>, path: impl AsRef<Path>) -> Result<()> {
    let (source, dir) = (source.as_ref(), path.as_ref());
    let text = fs::read_to_string(source.join(TRANSFORMS_FILE)).map_err(|_| Error::DatasetNotFound(source.to_path_buf()))?;
    let parsed: TransformsFile = serde_json::from_str(&text).map_err(|e| Error::MalformedDataset(e.to_string()))?;
    if parsed.frames.len() != dataset.len() {
        return Err(Error::dims(parsed.frames.len(), dataset.len()));
    }
    for (frame, view) in parsed.frames.iter().zip(&dataset.views) {
        let out = resolve_image_path(dir, &frame.file_path);
        if let Some(parent) = out.parent() {
            fs::create_dir_all(parent)?;
        }
        write_png(&out, &view.image)?;
    }
    fs::create_dir_all(dir)?;
    fs::write(dir.join(TRANSFORMS_FILE), text)?;
    Ok(())
}

pub fn write_attack_sidecar(path: impl AsRef<Path>, sidecar: &AttackSidecar) -> Result<()> {
    fs::write(path.as_ref().join(ATTACK_SIDECAR_FILE), serde_json::to_string_pretty(sidecar)?)?;
    Ok(())
}

pub fn read_attack_sidecar(path: impl AsRef<Path>) -> Result<Option<AttackSidecar>> {
    let p = path.as_ref().join(ATTACK_SIDECAR_FILE);
    if !p.is_file() {
        return Ok(None);
    }
    Ok(Some(serde_json::from_str(&fs::read_to_string(p)?)?))
}

pub fn write_png(path: &Path, image: &Image) -> Result<()> {
    let err = |e: png::EncodingError| Error::Image { path: path.to_path_buf(), message: e.to_string() };
    let file = BufWriter::new(File::create(path)?);
    let mut enc = png::Encoder::new(file, image.width as u32, image.height as u32);
    enc.set_color(png::ColorType::Rgb);
    enc.set_depth(png::BitDepth::Eight);
    let mut writer = enc.write_header().map_err(err)?;
    writer.write_image_data(&image.to_bytes()).map_err(err)?;
    writer.finish().map_err(err)?;
    Ok(())
}

/// Reads an 8-bit (or 16-bit, stripped) PNG; alpha is composited over `background`.
pub fn read_png(path: &Path, background: [f64; 3]) -> Result<Image> {
    let img_err = |m: String| Error::Image { path: path.to_path_buf(), message: m };
    let file = File::open(path).map_err(|e| img_err(e.to_string()))?;
    let mut dec = png::Decoder::new(BufReader::new(file));
    dec.set_transformations(png::Transformations::normalize_to_color8());
    let mut reader = dec.read_info().map_err(|e| img_err(e.to_string()))?;
    let size = reader.output_buffer_size().ok_or_else(|| img_err("image too large".into()))?;
    let mut buf = vec![0u8; size];
    let info = reader.next_frame(&mut buf).map_err(|e| img_err(e.to_string()))?;
    let (w, h) = (info.width as usize, info.height as usize);
    let channels = match info.color_type {
        png::ColorType::Grayscale => 1,
        png::ColorType::GrayscaleAlpha => 2,
        png::ColorType::Rgb => 3,
        png::ColorType::Rgba => 4,
        png::ColorType::Indexed => return Err(img_err("unexpanded palette image".into())),
    };
    let mut data = Vec::with_capacity(w * h * 3);
    for y in 0..h {
        let row = &buf[y * info.line_size..y * info.line_size + w * channels];
        for px in row.chunks_exact(channels) {
            let (rgb, alpha) = match channels {
                1 => ([px[0]; 3], 255),
                2 => ([px[0]; 3], px[1]),
                3 => ([px[0], px[1], px[2]], 255),
                _ => ([px[0], px[1], px[2]], px[3]),
            };
            if alpha == 255 {
                data.extend(rgb.map(|v| f64::from(v) / 255.0));
            } else {
                let a = f64::from(alpha) / 255.0;
                for (c, bg) in rgb.iter().zip(background) {
                    data.push(f64::from(*c) / 255.0 * a + bg * (1.0 - a));
                }
            }
        }
    }
    Image::from_data(w, h, data)
}

// ---------------------------------------------------------------------------
// procedural scenes

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PrimitiveKind {
    Sphere,
    Box,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Primitive {
    pub kind: PrimitiveKind,
    pub center: [f64; 3],
    /// Sphere: `size[0]` is the radius. Box: half extents.
    pub size: [f64; 3],
    pub color: [f64; 3],
    /// Angular frequency (radians per scene unit) of the sinusoidal texture; 0 is flat.
    pub texture_frequency: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub primitives: Vec<Primitive>,
    pub n_views: usize,
    /// Square image side in pixels.
    pub resolution: usize,
    /// Horizontal distance of the cameras from the vertical axis through the origin.
    pub camera_radius: f64,
    #[serde(default = "default_camera_height")]
    pub camera_height: f64,
    #[serde(default = "default_fov")]
    pub fov_degrees: f64,
    #[serde(default)]
    pub background: [f64; 3],
    pub seed: u64,
}

fn default_camera_height() -> f64 {
    1.2
}

fn default_fov() -> f64 {
    40.0
}

impl SceneSpec {
    /// Three textured primitives seen from 20 views at 64×64.
    pub fn standard(texture_frequency: f64) -> Self {
        let prim = |kind, center, size, color| Primitive { kind, center, size, color, texture_frequency };
        SceneSpec {
            primitives: vec![
                prim(PrimitiveKind::Sphere, [0.0, 0.1, 0.0], [0.6; 3], [0.85, 0.3, 0.25]),
                prim(PrimitiveKind::Box, [0.75, -0.35, 0.35], [0.3; 3], [0.25, 0.55, 0.85]),
                prim(PrimitiveKind::Sphere, [-0.7, -0.3, -0.4], [0.4; 3], [0.3, 0.8, 0.35]),
            ],
            n_views: 20,
            resolution: 64,
            camera_radius: 3.5,
            camera_height: default_camera_height(),
            fov_degrees: default_fov(),
            background: [0.0; 3],
            seed: 0,
        }
    }

    pub fn with_texture_frequency(mut self, f: f64) -> Self {
        for p in &mut self.primitives {
            p.texture_frequency = f;
        }
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_views == 0 {
            return Err(Error::InvalidConfig("n_views must be at least 1".into()));
        }
        if self.resolution < 16 {
            return Err(Error::InvalidConfig("resolution must be at least 16".into()));
        }
        if self.primitives.iter().any(|p| !(p.texture_frequency >= 0.0)) {
            return Err(Error::InvalidConfig("texture_frequency must be non-negative".into()));
        }
        if !(self.fov_degrees > 0.0 && self.fov_degrees < 180.0) {
            return Err(Error::InvalidConfig("fov_degrees must be in (0, 180)".into()));
        }
        Ok(())
    }
}

/// Standard textured scene used throughout the experiments.
pub const STANDARD_TEXTURE_FREQUENCY: f64 = 10.0;

struct Shaded<'a> {
    prim: &'a Primitive,
    phase: [f64; 3],
}

impl Shaded<'_> {
    /// Distance along the ray and surface normal of the nearest hit.
    fn intersect(&self, origin: &Vector3<f64>, dir: &Vector3<f64>) -> Option<(f64, Vector3<f64>)> {
        let c = Vector3::from(self.prim.center);
        match self.prim.kind {
            PrimitiveKind::Sphere => {
                let r = self.prim.size[0];
                let oc = origin - c;
                let b = oc.dot(dir);
                let disc = b * b - (oc.norm_squared() - r * r);
                if disc < 0.0 {
                    return None;
                }
                let s = disc.sqrt();
                let t = if -b - s > 1e-9 { -b - s } else { -b + s };
                (t > 1e-9).then(|| (t, (origin + dir * t - c) / r))
            }
            PrimitiveKind::Box => {
                let half = Vector3::from(self.prim.size);
                let (mut tmin, mut tmax) = (f64::NEG_INFINITY, f64::INFINITY);
                let mut axis = 0;
                for i in 0..3 {
                    let inv = 1.0 / dir[i];
                    let mut t0 = (c[i] - half[i] - origin[i]) * inv;
                    let mut t1 = (c[i] + half[i] - origin[i]) * inv;
                    if t0 > t1 {
                        std::mem::swap(&mut t0, &mut t1);
                    }
                    if t0 > tmin {
                        tmin = t0;
                        axis = i;
                    }
                    tmax = tmax.min(t1);
                }
                if tmin > tmax || tmin <= 1e-9 {
                    return None;
                }
                let mut n = Vector3::zeros();
                n[axis] = if dir[axis] > 0.0 { -1.0 } else { 1.0 };
                Some((tmin, n))
            }
        }
    }

    fn color(&self, p: &Vector3<f64>, n: &Vector3<f64>) -> [f64; 3] {
        let f = self.prim.texture_frequency;
        let local = p - Vector3::from(self.prim.center);
        let pattern = (f * local.x + self.phase[0]).sin() * (f * local.y + self.phase[1]).sin() * (f * local.z + self.phase[2]).sin();
        let texture = if f > 0.0 { 0.6 + 0.4 * pattern } else { 0.6 };
        let light = Vector3::new(0.4, 0.8, 0.45).normalize();
        let shade = 0.6 + 0.4 * n.dot(&light).max(0.0);
        self.prim.color.map(|c| (c * texture * shade).clamp(0.0, 1.0))
    }
}

/// Renders the spec's primitives from a ring of cameras looking at the origin.
/// Images are 2×2 supersampled and quantized to 8 bits.
pub fn gen_scene(spec: &SceneSpec) -> Result<Dataset> {
    spec.validate()?;
    let mut rng = rng::stream(spec.seed, "scene");
    let shaded: Vec<Shaded> = spec
        .primitives
        .iter()
        .map(|prim| Shaded {
            prim,
            phase: std::array::from_fn(|_| rng.random_range(0.0..std::f64::consts::TAU)),
        })
        .collect();
    let res = spec.resolution;
    let focal = 0.5 * res as f64 / (0.5 * spec.fov_degrees.to_radians()).tan();
    let mut views = Vec::with_capacity(spec.n_views);
    for k in 0..spec.n_views {
        let theta = std::f64::consts::TAU * k as f64 / spec.n_views as f64;
        let eye = Vector3::new(spec.camera_radius * theta.cos(), spec.camera_height, spec.camera_radius * theta.sin());
        let pose = CameraPose::look_at(eye, Vector3::zeros(), Vector3::new(0.0, 1.0, 0.0), focal, res, res);
        let cam_to_world = pose.rotation().transpose();
        let mut image = Image::new(res, res);
        for y in 0..res {
            for x in 0..res {
                let mut acc = [0.0; 3];
                for (sx, sy) in [(-0.25, -0.25), (0.25, -0.25), (-0.25, 0.25), (0.25, 0.25)] {
                    let d_cam = Vector3::new(
                        (x as f64 + sx - pose.cx) / pose.fx,
                        (y as f64 + sy - pose.cy) / pose.fy,
                        1.0,
                    );
                    let dir = (cam_to_world * d_cam).normalize();
                    let hit = shaded
                        .iter()
                        .filter_map(|s| s.intersect(&eye, &dir).map(|(t, n)| (t, n, s)))
                        .min_by(|a, b| a.0.total_cmp(&b.0));
                    let rgb = match hit {
                        Some((t, n, s)) => s.color(&(eye + dir * t), &n),
                        None => spec.background,
                    };
                    for c in 0..3 {
                        acc[c] += rgb[c] / 4.0;
                    }
                }
                for c in 0..3 {
                    image.set(x, y, c, acc[c]);
                }
            }
        }
        image.quantize_8bit();
        views.push(View { image, pose });
    }
    Dataset::new(format!("generated-{}", spec.seed), views)
}
