//! Synthetic transparent-scene oracle: analytic primitives, a single
//! directional light, and a hemisphere camera trajectory. Produces posed
//! RGB, ground-truth metric depth, sensor-style corrupted depth (holes or
//! background depth on transparent surfaces), and per-object instance
//! masks.

mod trace;

pub use trace::{hits_along, intersect, trace_frame, trace_ray, FrameTrace, Hit, PixelTrace};

use crate::dataset::{Frame, Intrinsics, SceneDataset};
use crate::error::{Error, Result};
use crate::maskhier::{build_hierarchy, rasterize_channels, InstanceMask, DEFAULT_MIN_AREA};
use crate::math::{seed_stream, Aabb, Grid2, Vec3};
use crate::render::CameraModel;
use serde::{Deserialize, Serialize};
use std::path::Path;

pub const SCENE_SCHEMA_VERSION: u32 = 1;

const STREAM_HOLES: u64 = 0x484f4c45;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Shape {
    Sphere { center: Vec3, radius: f64 },
    Cuboid { center: Vec3, half_extent: Vec3 },
    Cylinder { center: Vec3, radius: f64, half_height: f64 },
    Plane { point: Vec3, normal: Vec3 },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Material {
    Opaque { albedo: Vec3 },
    Transparent { alpha: f64, tint: Vec3 },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Primitive {
    pub shape: Shape,
    pub material: Material,
}

/// Hemisphere trajectory around `target`: golden-angle azimuths, elevations
/// swept over the upper hemisphere, radii cycling through the band.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectorySpec {
    pub target: Vec3,
    pub radius_min: f64,
    pub radius_max: f64,
    pub fov_deg: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticScene {
    pub version: u32,
    pub primitives: Vec<Primitive>,
    pub light_dir: Vec3,
    pub ambient: f64,
    pub specular_strength: f64,
    pub specular_exponent: f64,
    pub background: Vec3,
    pub trajectory: TrajectorySpec,
    pub aabb: Aabb,
}

impl SyntheticScene {
    /// The default desk scene: a transparent sphere resting on an opaque
    /// table slab, with a small opaque distractor block.
    pub fn transparent_sphere_on_table() -> SyntheticScene {
        SyntheticScene {
            version: SCENE_SCHEMA_VERSION,
            primitives: vec![
                Primitive {
                    shape: Shape::Cuboid {
                        center: Vec3::new(0.0, -0.03, 0.0),
                        half_extent: Vec3::new(0.28, 0.03, 0.28),
                    },
                    material: Material::Opaque { albedo: Vec3::new(0.75, 0.74, 0.72) },
                },
                Primitive {
                    shape: Shape::Sphere { center: Vec3::new(0.0, 0.06, 0.0), radius: 0.06 },
                    material: Material::Transparent {
                        alpha: 0.2,
                        tint: Vec3::new(0.85, 0.9, 0.95),
                    },
                },
                Primitive {
                    shape: Shape::Cuboid {
                        center: Vec3::new(0.14, 0.03, 0.1),
                        half_extent: Vec3::new(0.03, 0.03, 0.03),
                    },
                    material: Material::Opaque { albedo: Vec3::new(0.6, 0.25, 0.2) },
                },
            ],
            light_dir: Vec3::new(-0.35, 0.9, 0.25).normalized(),
            ambient: 0.3,
            specular_strength: 0.5,
            specular_exponent: 24.0,
            background: Vec3::ZERO,
            trajectory: TrajectorySpec {
                target: Vec3::new(0.0, 0.04, 0.0),
                radius_min: 0.4,
                radius_max: 0.6,
                fov_deg: 55.0,
            },
            aabb: Aabb::new(Vec3::new(-0.32, -0.07, -0.32), Vec3::new(0.32, 0.25, 0.32)),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != SCENE_SCHEMA_VERSION {
            return Err(Error::format(format!(
                "scene schema version {} unsupported (expected {SCENE_SCHEMA_VERSION})",
                self.version
            )));
        }
        for (i, p) in self.primitives.iter().enumerate() {
            match p.material {
                Material::Transparent { alpha, .. } => {
                    if !(0.0..=1.0).contains(&alpha) {
                        return Err(Error::domain(format!("primitive {i}: alpha outside [0,1]")));
                    }
                    // a realizable failure mode needs an opaque surface below
                    let center = match p.shape {
                        Shape::Sphere { center, .. } => center,
                        Shape::Cuboid { center, .. } => center,
                        Shape::Cylinder { center, .. } => center,
                        Shape::Plane { point, .. } => point,
                    };
                    let down = Vec3::new(0.0, -1.0, 0.0);
                    let opaque_below = hits_along(self, center, down).iter().any(|h| {
                        matches!(self.primitives[h.prim].material, Material::Opaque { .. })
                    });
                    if !opaque_below {
                        return Err(Error::domain(format!(
                            "transparent primitive {i} has no opaque surface below it"
                        )));
                    }
                }
                Material::Opaque { .. } => {}
            }
            let sizes_ok = match p.shape {
                Shape::Sphere { radius, .. } => radius > 0.0,
                Shape::Cuboid { half_extent, .. } => {
                    half_extent.x > 0.0 && half_extent.y > 0.0 && half_extent.z > 0.0
                }
                Shape::Cylinder { radius, half_height, .. } => radius > 0.0 && half_height > 0.0,
                Shape::Plane { normal, .. } => normal.norm() > 0.0,
            };
            if !sizes_ok {
                return Err(Error::domain(format!("primitive {i} has a non-positive size")));
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<SyntheticScene> {
        let scene: SyntheticScene = serde_json::from_str(s)?;
        scene.validate()?;
        Ok(scene)
    }

    pub fn intrinsics(&self, width: usize, height: usize) -> Intrinsics {
        let f = 0.5 * width as f64 / (0.5 * self.trajectory.fov_deg.to_radians()).tan();
        Intrinsics {
            fx: f,
            fy: f,
            cx: width as f64 / 2.0,
            cy: height as f64 / 2.0,
            width,
            height,
        }
    }

    /// Hemisphere pose `i` of `n`: deterministic golden-angle placement
    /// with the radius cycling through [radius_min, radius_max].
    pub fn camera_pose(&self, i: usize, n: usize) -> [[f64; 4]; 4] {
        let tr = &self.trajectory;
        let u = (i as f64 + 0.5) / n as f64;
        let y = 0.35 + 0.57 * u; // elevation band, clear of grazing angles
        let azimuth = i as f64 * 2.399_963_229_728_653;
        let horiz = (1.0 - y * y).sqrt();
        let dir = Vec3::new(horiz * azimuth.cos(), y, horiz * azimuth.sin());
        let radius =
            tr.radius_min + (tr.radius_max - tr.radius_min) * ((i as f64 * 0.618_033_988_749_894_9) % 1.0);
        let eye = tr.target + dir * radius;
        CameraModel::look_at(eye, tr.target, Vec3::new(0.0, 1.0, 0.0))
    }
}

/// Traces `n_views` hemisphere frames, groups the per-primitive masks into
/// `channels` hierarchy channels, writes the scene-directory format under
/// `root` (with ground-truth depth and raw instance masks), and returns the
/// in-memory dataset.
pub fn generate_dataset(
    scene: &SyntheticScene,
    n_views: usize,
    width: usize,
    height: usize,
    channels: usize,
    seed: u64,
    root: &Path,
) -> Result<SceneDataset> {
    if n_views < 1 {
        return Err(Error::domain("need at least one view"));
    }
    scene.validate()?;
    let intr = scene.intrinsics(width, height);
    let mut frames = Vec::with_capacity(n_views);
    std::fs::create_dir_all(root.join("instances"))?;
    for i in 0..n_views {
        let pose = scene.camera_pose(i, n_views);
        let cam = intr.camera(pose);
        let stem = format!("frame_{i:04}");
        let traced = trace_frame(scene, &cam, seed_stream(seed, STREAM_HOLES, i as u64));

        let mut instances = Vec::new();
        for (pi, m) in traced.instance_masks.iter().enumerate() {
            crate::dataset::save_mask(
                &root.join("instances").join(format!("{stem}_obj{pi}.png")),
                &Grid2::from_vec(
                    m.width,
                    m.height,
                    m.data.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect(),
                ),
            )?;
            if m.data.iter().any(|&b| b) {
                instances.push(InstanceMask::from_raster(m.clone())?);
            }
        }
        let hierarchy = build_hierarchy(instances, channels, DEFAULT_MIN_AREA)?;
        let masks = rasterize_channels(&hierarchy, width, height)?;

        frames.push(Frame {
            stem,
            camera_to_world: pose,
            rgb: traced.rgb,
            depth: traced.sensor_depth,
            depth_gt: Some(traced.true_depth),
            masks,
        });
    }
    let ds = SceneDataset {
        root: root.to_path_buf(),
        intrinsics: intr,
        aabb: scene.aabb,
        frames,
    };
    ds.save(root)?;
    std::fs::write(root.join("scene.json"), scene.to_json()?)?;
    Ok(ds)
}
