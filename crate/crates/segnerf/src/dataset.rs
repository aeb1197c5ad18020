//! Scene-directory IO.
//!
//! Layout under a dataset root:
//!
//! ```text
//! transforms.json             intrinsics, scene box, per-frame poses
//! rgb/{stem}.png              8-bit RGB
//! depth/{stem}.png            16-bit grayscale, millimeters, 0 = invalid
//! depth_gt/{stem}.png         optional ground-truth depth, same encoding
//! masks/{stem}_chan{k}.png    8-bit, nonzero = on
//! instances/{stem}_obj{i}.png optional raw instance masks
//! ```
//!
//! Depth is metric: millimeters in storage, meters in memory.

use crate::error::{Error, Result};
use crate::math::{Aabb, Grid2, Vec3};
use crate::render::CameraModel;
use image::{DynamicImage, ImageBuffer, Luma, Rgb};
use serde::{Deserialize, Serialize};
use std::fs;
use std::path::{Path, PathBuf};

pub const TRANSFORMS_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl Intrinsics {
    pub fn camera(&self, camera_to_world: [[f64; 4]; 4]) -> CameraModel {
        CameraModel {
            fx: self.fx,
            fy: self.fy,
            cx: self.cx,
            cy: self.cy,
            width: self.width,
            height: self.height,
            camera_to_world,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FrameMeta {
    pub stem: String,
    /// Row-major camera-to-world rigid transform.
    pub camera_to_world: [[f64; 4]; 4],
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TransformsFile {
    pub version: u32,
    pub intrinsics: Intrinsics,
    pub aabb: Aabb,
    pub frames: Vec<FrameMeta>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train_split: Option<Vec<String>>,
}

/// One posed frame held in memory.
#[derive(Clone, Debug)]
pub struct Frame {
    pub stem: String,
    pub camera_to_world: [[f64; 4]; 4],
    pub rgb: Grid2<Vec3>,
    /// Sensor-style depth in meters; 0 marks invalid pixels.
    pub depth: Grid2<f64>,
    /// Oracle ground-truth depth, when the dataset provides it.
    pub depth_gt: Option<Grid2<f64>>,
    /// Semantic channel masks as 0/1 values.
    pub masks: Vec<Grid2<f64>>,
}

#[derive(Clone, Debug)]
pub struct SceneDataset {
    pub root: PathBuf,
    pub intrinsics: Intrinsics,
    pub aabb: Aabb,
    pub frames: Vec<Frame>,
}

impl SceneDataset {
    pub fn camera(&self, frame: &Frame) -> CameraModel {
        self.intrinsics.camera(frame.camera_to_world)
    }

    pub fn channels(&self) -> usize {
        self.frames.first().map_or(0, |f| f.masks.len())
    }

    /// Dataset restricted to the given frame indices.
    pub fn subset(&self, indices: &[usize]) -> SceneDataset {
        SceneDataset {
            root: self.root.clone(),
            intrinsics: self.intrinsics,
            aabb: self.aabb,
            frames: indices.iter().map(|&i| self.frames[i].clone()).collect(),
        }
    }

    pub fn load(root: &Path) -> Result<SceneDataset> {
        let tf: TransformsFile =
            serde_json::from_str(&fs::read_to_string(root.join("transforms.json"))?)?;
        if tf.version != TRANSFORMS_VERSION {
            return Err(Error::format(format!(
                "transforms.json version {} unsupported (expected {TRANSFORMS_VERSION})",
                tf.version
            )));
        }
        let mut frames = Vec::new();
        for meta in &tf.frames {
            if let Some(split) = &tf.train_split {
                if !split.contains(&meta.stem) {
                    continue;
                }
            }
            let rgb = load_rgb8(&root.join("rgb").join(format!("{}.png", meta.stem)))?;
            let depth = load_depth_mm(&root.join("depth").join(format!("{}.png", meta.stem)))?;
            let gt_path = root.join("depth_gt").join(format!("{}.png", meta.stem));
            let depth_gt = if gt_path.exists() { Some(load_depth_mm(&gt_path)?) } else { None };
            let mut masks = Vec::new();
            loop {
                let p = root.join("masks").join(format!("{}_chan{}.png", meta.stem, masks.len()));
                if !p.exists() {
                    break;
                }
                masks.push(load_mask(&p)?);
            }
            if rgb.width != tf.intrinsics.width || rgb.height != tf.intrinsics.height {
                return Err(Error::format(format!(
                    "frame {} has size {}x{}, intrinsics say {}x{}",
                    meta.stem, rgb.width, rgb.height, tf.intrinsics.width, tf.intrinsics.height
                )));
            }
            if !depth.same_shape(&rgb) {
                return Err(Error::format(format!("frame {} depth size mismatch", meta.stem)));
            }
            frames.push(Frame {
                stem: meta.stem.clone(),
                camera_to_world: meta.camera_to_world,
                rgb,
                depth,
                depth_gt,
                masks,
            });
        }
        if frames.is_empty() {
            return Err(Error::format(format!("no frames found under {}", root.display())));
        }
        Ok(SceneDataset { root: root.to_path_buf(), intrinsics: tf.intrinsics, aabb: tf.aabb, frames })
    }

    /// Writes the dataset to `root` (creates subdirectories as needed).
    pub fn save(&self, root: &Path) -> Result<()> {
        for sub in ["rgb", "depth", "masks"] {
            fs::create_dir_all(root.join(sub))?;
        }
        if self.frames.iter().any(|f| f.depth_gt.is_some()) {
            fs::create_dir_all(root.join("depth_gt"))?;
        }
        let tf = TransformsFile {
            version: TRANSFORMS_VERSION,
            intrinsics: self.intrinsics,
            aabb: self.aabb,
            frames: self
                .frames
                .iter()
                .map(|f| FrameMeta { stem: f.stem.clone(), camera_to_world: f.camera_to_world })
                .collect(),
            train_split: None,
        };
        fs::write(root.join("transforms.json"), serde_json::to_string_pretty(&tf)?)?;
        for f in &self.frames {
            save_rgb8(&root.join("rgb").join(format!("{}.png", f.stem)), &f.rgb)?;
            save_depth_mm(&root.join("depth").join(format!("{}.png", f.stem)), &f.depth)?;
            if let Some(gt) = &f.depth_gt {
                save_depth_mm(&root.join("depth_gt").join(format!("{}.png", f.stem)), gt)?;
            }
            for (k, m) in f.masks.iter().enumerate() {
                save_mask(&root.join("masks").join(format!("{}_chan{k}.png", f.stem)), m)?;
            }
        }
        Ok(())
    }
}

pub fn save_rgb8(path: &Path, img: &Grid2<Vec3>) -> Result<()> {
    let mut buf = ImageBuffer::new(img.width as u32, img.height as u32);
    for (y, row) in img.data.chunks(img.width).enumerate() {
        for (x, px) in row.iter().enumerate() {
            let to8 = |v: f64| (v.clamp(0.0, 1.0) * 255.0).round() as u8;
            buf.put_pixel(x as u32, y as u32, Rgb([to8(px.x), to8(px.y), to8(px.z)]));
        }
    }
    buf.save(path)?;
    Ok(())
}

pub fn load_rgb8(path: &Path) -> Result<Grid2<Vec3>> {
    let img = image::open(path)?.to_rgb8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let mut out = Grid2::filled(w, h, Vec3::ZERO);
    for (x, y, px) in img.enumerate_pixels() {
        out.set(
            x as usize,
            y as usize,
            Vec3::new(px[0] as f64 / 255.0, px[1] as f64 / 255.0, px[2] as f64 / 255.0),
        );
    }
    Ok(out)
}

/// Depth raster in meters to 16-bit millimeter PNG; 0 encodes invalid.
pub fn save_depth_mm(path: &Path, depth: &Grid2<f64>) -> Result<()> {
    let mut buf: ImageBuffer<Luma<u16>, Vec<u16>> =
        ImageBuffer::new(depth.width as u32, depth.height as u32);
    for (y, row) in depth.data.chunks(depth.width).enumerate() {
        for (x, &d) in row.iter().enumerate() {
            let mm = (d * 1000.0).round().clamp(0.0, u16::MAX as f64) as u16;
            buf.put_pixel(x as u32, y as u32, Luma([mm]));
        }
    }
    buf.save(path)?;
    Ok(())
}

pub fn load_depth_mm(path: &Path) -> Result<Grid2<f64>> {
    let img = image::open(path)?;
    let img = match img {
        DynamicImage::ImageLuma16(b) => b,
        other => other.to_luma16(),
    };
    let (w, h) = (img.width() as usize, img.height() as usize);
    let mut out = Grid2::filled(w, h, 0.0);
    for (x, y, px) in img.enumerate_pixels() {
        out.set(x as usize, y as usize, px[0] as f64 / 1000.0);
    }
    Ok(out)
}

/// Binary mask to 8-bit PNG (0 / 255) with a 0.5 on-threshold.
pub fn save_mask(path: &Path, mask: &Grid2<f64>) -> Result<()> {
    let mut buf: ImageBuffer<Luma<u8>, Vec<u8>> =
        ImageBuffer::new(mask.width as u32, mask.height as u32);
    for (y, row) in mask.data.chunks(mask.width).enumerate() {
        for (x, &v) in row.iter().enumerate() {
            buf.put_pixel(x as u32, y as u32, Luma([if v >= 0.5 { 255 } else { 0 }]));
        }
    }
    buf.save(path)?;
    Ok(())
}

/// Nonzero pixels are on.
pub fn load_mask(path: &Path) -> Result<Grid2<f64>> {
    let img = image::open(path)?.to_luma8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let mut out = Grid2::filled(w, h, 0.0);
    for (x, y, px) in img.enumerate_pixels() {
        out.set(x as usize, y as usize, if px[0] > 0 { 1.0 } else { 0.0 });
    }
    Ok(out)
}

/// Raw float sidecar: row-major little-endian f32, no header; the paired
/// PNG carries the dimensions.
pub fn save_f32_sidecar(path: &Path, grid: &Grid2<f64>) -> Result<()> {
    let mut bytes = Vec::with_capacity(grid.data.len() * 4);
    for v in &grid.data {
        bytes.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    fs::write(path, bytes)?;
    Ok(())
}

pub fn load_f32_sidecar(path: &Path, width: usize, height: usize) -> Result<Grid2<f64>> {
    let bytes = fs::read(path)?;
    if bytes.len() != width * height * 4 {
        return Err(Error::format(format!(
            "sidecar {} holds {} bytes, expected {}",
            path.display(),
            bytes.len(),
            width * height * 4
        )));
    }
    let data = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    Ok(Grid2::from_vec(width, height, data))
}
