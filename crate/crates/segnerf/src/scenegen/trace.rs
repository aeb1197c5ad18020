//! First-hit analytic intersections and shading for the synthetic scenes.

use super::{Material, Shape, SyntheticScene};
use crate::math::{mix_seed, Grid2, Vec3};
use crate::render::CameraModel;

const T_EPS: f64 = 1e-9;

#[derive(Clone, Copy, Debug)]
pub struct Hit {
    pub t: f64,
    pub normal: Vec3,
    pub prim: usize,
}

/// First boundary crossing of the ray with the shape, if any.
pub fn intersect(shape: &Shape, o: Vec3, d: Vec3) -> Option<(f64, Vec3)> {
    match *shape {
        Shape::Sphere { center, radius } => {
            let oc = o - center;
            let b = oc.dot(d);
            let c = oc.dot(oc) - radius * radius;
            let disc = b * b - c;
            if disc < 0.0 {
                return None;
            }
            let sq = disc.sqrt();
            let t = if -b - sq > T_EPS { -b - sq } else { -b + sq };
            if t <= T_EPS {
                return None;
            }
            let n = (o + d * t - center) / radius;
            Some((t, n))
        }
        Shape::Cuboid { center, half_extent } => {
            let lo = center - half_extent;
            let hi = center + half_extent;
            let mut t0 = f64::NEG_INFINITY;
            let mut t1 = f64::INFINITY;
            let mut axis0 = 0usize;
            let ov = o.to_array();
            let dv = d.to_array();
            let lov = lo.to_array();
            let hiv = hi.to_array();
            for k in 0..3 {
                if dv[k].abs() < 1e-300 {
                    if ov[k] < lov[k] || ov[k] > hiv[k] {
                        return None;
                    }
                    continue;
                }
                let inv = 1.0 / dv[k];
                let mut a = (lov[k] - ov[k]) * inv;
                let mut b = (hiv[k] - ov[k]) * inv;
                let mut flipped = false;
                if a > b {
                    std::mem::swap(&mut a, &mut b);
                    flipped = true;
                }
                if a > t0 {
                    t0 = a;
                    axis0 = k * 2 + usize::from(flipped);
                }
                t1 = t1.min(b);
            }
            if t0 > t1 {
                return None;
            }
            let t = if t0 > T_EPS { t0 } else { t1 };
            if t <= T_EPS || !t.is_finite() {
                return None;
            }
            let mut n = [0.0; 3];
            n[axis0 / 2] = if axis0 % 2 == 0 { -1.0 } else { 1.0 };
            let mut normal = Vec3::from(n);
            if t0 <= T_EPS {
                // exiting from inside: face normal of the exit point
                let p = (o + d * t - center).to_array();
                let scaled: Vec<f64> =
                    (0..3).map(|k| (p[k] / half_extent.to_array()[k]).abs()).collect();
                let k = (0..3).max_by(|&a, &b| scaled[a].partial_cmp(&scaled[b]).unwrap()).unwrap();
                let mut m = [0.0; 3];
                m[k] = p[k].signum();
                normal = Vec3::from(m);
            }
            Some((t, normal))
        }
        Shape::Cylinder { center, radius, half_height } => {
            // y-axis aligned: lateral surface plus the two caps
            let mut best: Option<(f64, Vec3)> = None;
            let oc = o - center;
            let a = d.x * d.x + d.z * d.z;
            if a > 1e-300 {
                let b = oc.x * d.x + oc.z * d.z;
                let c = oc.x * oc.x + oc.z * oc.z - radius * radius;
                let disc = b * b - a * c;
                if disc >= 0.0 {
                    let sq = disc.sqrt();
                    for t in [(-b - sq) / a, (-b + sq) / a] {
                        if t > T_EPS {
                            let y = oc.y + d.y * t;
                            if y.abs() <= half_height {
                                let p = oc + d * t;
                                let n = Vec3::new(p.x / radius, 0.0, p.z / radius);
                                if best.map_or(true, |(bt, _)| t < bt) {
                                    best = Some((t, n));
                                }
                            }
                        }
                    }
                }
            }
            if d.y.abs() > 1e-300 {
                for (cap_y, n) in
                    [(half_height, Vec3::new(0.0, 1.0, 0.0)), (-half_height, Vec3::new(0.0, -1.0, 0.0))]
                {
                    let t = (cap_y - oc.y) / d.y;
                    if t > T_EPS {
                        let p = oc + d * t;
                        if p.x * p.x + p.z * p.z <= radius * radius
                            && best.map_or(true, |(bt, _)| t < bt)
                        {
                            best = Some((t, n));
                        }
                    }
                }
            }
            best
        }
        Shape::Plane { point, normal } => {
            let denom = d.dot(normal);
            if denom.abs() < 1e-12 {
                return None;
            }
            let t = (point - o).dot(normal) / denom;
            if t <= T_EPS {
                return None;
            }
            Some((t, normal))
        }
    }
}

/// All per-primitive first hits along the ray, ascending in t.
pub fn hits_along(scene: &SyntheticScene, o: Vec3, d: Vec3) -> Vec<Hit> {
    let mut hits: Vec<Hit> = scene
        .primitives
        .iter()
        .enumerate()
        .filter_map(|(i, p)| {
            intersect(&p.shape, o, d).map(|(t, mut n)| {
                if n.dot(d) > 0.0 {
                    n = -n;
                }
                Hit { t, normal: n, prim: i }
            })
        })
        .collect();
    hits.sort_by(|a, b| a.t.partial_cmp(&b.t).unwrap());
    hits
}

fn lambert(scene: &SyntheticScene, albedo: Vec3, n: Vec3) -> Vec3 {
    let diff = n.dot(scene.light_dir).max(0.0);
    albedo * (scene.ambient + (1.0 - scene.ambient) * diff)
}

fn specular_lobe(scene: &SyntheticScene, n: Vec3, d: Vec3) -> f64 {
    let l = scene.light_dir;
    let r = n * (2.0 * n.dot(l)) - l;
    let v = -d;
    scene.specular_strength * r.dot(v).max(0.0).powf(scene.specular_exponent)
}

pub struct PixelTrace {
    pub rgb: Vec3,
    pub true_t: f64,
    pub sensor_t: f64,
    pub first_prim: Option<usize>,
}

/// Traces one ray: transparent layers blend over the eventual opaque hit,
/// true depth records the first surface of any kind, and sensor depth
/// emulates an RGB-D failure on transparent first hits (hole or background
/// depth, a seeded coin flip per pixel).
pub fn trace_ray(scene: &SyntheticScene, o: Vec3, d: Vec3, pixel_noise: u64) -> PixelTrace {
    let hits = hits_along(scene, o, d);
    if hits.is_empty() {
        return PixelTrace { rgb: scene.background, true_t: 0.0, sensor_t: 0.0, first_prim: None };
    }
    let mut rgb = Vec3::ZERO;
    let mut throughput = 1.0;
    for h in &hits {
        match scene.primitives[h.prim].material {
            Material::Transparent { alpha, tint } => {
                let shaded = lambert(scene, tint, h.normal) * alpha
                    + Vec3::splat(specular_lobe(scene, h.normal, d));
                rgb += shaded * throughput;
                throughput *= 1.0 - alpha;
            }
            Material::Opaque { albedo } => {
                rgb += lambert(scene, albedo, h.normal) * throughput;
                throughput = 0.0;
                break;
            }
        }
    }
    rgb += scene.background * throughput;

    let first = hits[0];
    let transparent_first =
        matches!(scene.primitives[first.prim].material, Material::Transparent { .. });
    let sensor_t = if transparent_first {
        let background =
            hits.iter().find(|h| matches!(scene.primitives[h.prim].material, Material::Opaque { .. }));
        if mix_seed(pixel_noise) & 1 == 0 {
            0.0 // hole
        } else {
            background.map_or(0.0, |h| h.t)
        }
    } else {
        first.t
    };
    PixelTrace { rgb: rgb.clamp01(), true_t: first.t, sensor_t, first_prim: Some(first.prim) }
}

/// Full-frame trace: RGB, true depth, corrupted sensor depth, and one
/// binary first-hit mask per primitive.
pub struct FrameTrace {
    pub rgb: Grid2<Vec3>,
    pub true_depth: Grid2<f64>,
    pub sensor_depth: Grid2<f64>,
    pub instance_masks: Vec<Grid2<bool>>,
}

pub fn trace_frame(scene: &SyntheticScene, cam: &CameraModel, noise_seed: u64) -> FrameTrace {
    let (w, h) = (cam.width, cam.height);
    let mut out = FrameTrace {
        rgb: Grid2::filled(w, h, Vec3::ZERO),
        true_depth: Grid2::filled(w, h, 0.0),
        sensor_depth: Grid2::filled(w, h, 0.0),
        instance_masks: vec![Grid2::filled(w, h, false); scene.primitives.len()],
    };
    for v in 0..h {
        for u in 0..w {
            let (o, d) = cam.ray_through(u as f64 + 0.5, v as f64 + 0.5);
            let pix = v * w + u;
            let px = trace_ray(scene, o, d, noise_seed ^ (pix as u64).wrapping_mul(0x9e3779b97f4a7c15));
            out.rgb.set(u, v, px.rgb);
            out.true_depth.set(u, v, px.true_t);
            out.sensor_depth.set(u, v, px.sensor_t);
            if let Some(p) = px.first_prim {
                out.instance_masks[p].set(u, v, true);
            }
        }
    }
    out
}
