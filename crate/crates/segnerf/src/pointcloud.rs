//! Point-cloud assembly from depth rasters and ASCII PLY export.
//!
//! Depth rasters hold distance along the pixel ray (meters), matching the
//! renderer's expected-depth convention, so unprojection is
//! `origin + dir * depth`.

use crate::error::{Error, Result};
use crate::math::{Grid2, Vec3};
use crate::render::CameraModel;
use std::collections::HashMap;
use std::io::Write;
use std::path::Path;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ColoredPoint {
    pub pos: Vec3,
    pub rgb: [u8; 3],
}

/// Unprojects every pixel with positive depth (and `valid` on, when given)
/// into world space with its color.
pub fn unproject_view(
    cam: &CameraModel,
    depth: &Grid2<f64>,
    rgb: &Grid2<Vec3>,
    valid: Option<&Grid2<bool>>,
) -> Result<Vec<ColoredPoint>> {
    cam.validate()?;
    if !depth.same_shape(rgb) {
        return Err(Error::domain("depth and color rasters must share dimensions"));
    }
    let mut points = Vec::new();
    for v in 0..depth.height {
        for u in 0..depth.width {
            let d = *depth.get(u, v);
            if d <= 0.0 {
                continue;
            }
            if let Some(m) = valid {
                if !*m.get(u, v) {
                    continue;
                }
            }
            let (o, dir) = cam.ray_through(u as f64 + 0.5, v as f64 + 0.5);
            let c = rgb.get(u, v);
            let to8 = |x: f64| (x.clamp(0.0, 1.0) * 255.0).round() as u8;
            points.push(ColoredPoint {
                pos: o + dir * d,
                rgb: [to8(c.x), to8(c.y), to8(c.z)],
            });
        }
    }
    Ok(points)
}

/// Keeps points with at least `min_neighbors` others within `radius`;
/// hash-grid buckets keep this near-linear.
pub fn radius_outlier_filter(
    points: &[ColoredPoint],
    radius: f64,
    min_neighbors: usize,
) -> Vec<ColoredPoint> {
    if radius <= 0.0 || min_neighbors == 0 {
        return points.to_vec();
    }
    let cell = radius;
    let key = |p: Vec3| -> (i64, i64, i64) {
        ((p.x / cell).floor() as i64, (p.y / cell).floor() as i64, (p.z / cell).floor() as i64)
    };
    let mut buckets: HashMap<(i64, i64, i64), Vec<usize>> = HashMap::new();
    for (i, p) in points.iter().enumerate() {
        buckets.entry(key(p.pos)).or_default().push(i);
    }
    let r2 = radius * radius;
    points
        .iter()
        .filter(|p| {
            let (kx, ky, kz) = key(p.pos);
            let mut neighbors = 0usize;
            'scan: for dz in -1..=1 {
                for dy in -1..=1 {
                    for dx in -1..=1 {
                        if let Some(b) = buckets.get(&(kx + dx, ky + dy, kz + dz)) {
                            for &j in b {
                                let q = points[j].pos;
                                let d = q - p.pos;
                                if d.dot(d) <= r2 {
                                    neighbors += 1; // includes the point itself
                                    if neighbors > min_neighbors {
                                        break 'scan;
                                    }
                                }
                            }
                        }
                    }
                }
            }
            neighbors > min_neighbors
        })
        .copied()
        .collect()
}

/// ASCII PLY with x y z (float) and red green blue (uchar) per vertex.
pub fn write_ply(path: &Path, points: &[ColoredPoint]) -> Result<()> {
    if points.is_empty() {
        return Err(Error::domain(
            "no valid points to export; every pixel was invalid or below the opacity threshold",
        ));
    }
    let file = std::fs::File::create(path)?;
    let mut w = std::io::BufWriter::new(file);
    writeln!(w, "ply")?;
    writeln!(w, "format ascii 1.0")?;
    writeln!(w, "element vertex {}", points.len())?;
    writeln!(w, "property float x")?;
    writeln!(w, "property float y")?;
    writeln!(w, "property float z")?;
    writeln!(w, "property uchar red")?;
    writeln!(w, "property uchar green")?;
    writeln!(w, "property uchar blue")?;
    writeln!(w, "end_header")?;
    for p in points {
        writeln!(
            w,
            "{} {} {} {} {} {}",
            p.pos.x as f32, p.pos.y as f32, p.pos.z as f32, p.rgb[0], p.rgb[1], p.rgb[2]
        )?;
    }
    w.flush()?;
    Ok(())
}
