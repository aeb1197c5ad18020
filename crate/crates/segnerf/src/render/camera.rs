//! Pinhole camera with a right-handed convention: the camera looks down
//! -z with y up; pixel u grows along +x, pixel v along -y.

use crate::error::{Error, Result};
use crate::math::Vec3;
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CameraModel {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
    /// Row-major rigid transform mapping camera coordinates to world.
    pub camera_to_world: [[f64; 4]; 4],
}

impl CameraModel {
    pub fn validate(&self) -> Result<()> {
        if self.fx <= 0.0 || self.fy <= 0.0 {
            return Err(Error::domain("focal lengths must be positive"));
        }
        let m = &self.camera_to_world;
        for i in 0..3 {
            for j in 0..3 {
                let mut dot = 0.0;
                for k in 0..3 {
                    dot += m[k][i] * m[k][j];
                }
                let expect = if i == j { 1.0 } else { 0.0 };
                if (dot - expect).abs() > 1e-6 {
                    return Err(Error::domain("camera rotation block is not orthonormal"));
                }
            }
        }
        Ok(())
    }

    pub fn position(&self) -> Vec3 {
        let m = &self.camera_to_world;
        Vec3::new(m[0][3], m[1][3], m[2][3])
    }

    pub fn rotate_to_world(&self, v: Vec3) -> Vec3 {
        let m = &self.camera_to_world;
        Vec3::new(
            m[0][0] * v.x + m[0][1] * v.y + m[0][2] * v.z,
            m[1][0] * v.x + m[1][1] * v.y + m[1][2] * v.z,
            m[2][0] * v.x + m[2][1] * v.y + m[2][2] * v.z,
        )
    }

    pub fn world_to_camera(&self, p: Vec3) -> Vec3 {
        let m = &self.camera_to_world;
        let d = p - self.position();
        // rigid inverse: R^T
        Vec3::new(
            m[0][0] * d.x + m[1][0] * d.y + m[2][0] * d.z,
            m[0][1] * d.x + m[1][1] * d.y + m[2][1] * d.z,
            m[0][2] * d.x + m[1][2] * d.y + m[2][2] * d.z,
        )
    }

    /// World-space ray through continuous pixel coordinates (px, py);
    /// integer pixel (u, v) maps to its center at (u + 0.5, v + 0.5).
    pub fn ray_through(&self, px: f64, py: f64) -> (Vec3, Vec3) {
        let dir_cam = Vec3::new((px - self.cx) / self.fx, -(py - self.cy) / self.fy, -1.0);
        (self.position(), self.rotate_to_world(dir_cam).normalized())
    }

    /// Projects a world point to continuous pixel coordinates; `None` when
    /// the point is not in front of the camera.
    pub fn project(&self, p: Vec3) -> Option<(f64, f64)> {
        let c = self.world_to_camera(p);
        if c.z >= -1e-12 {
            return None;
        }
        let inv = -1.0 / c.z;
        Some((self.cx + self.fx * c.x * inv, self.cy - self.fy * c.y * inv))
    }

    /// Builds a pose at `eye` looking at `target` with approximate `up`.
    pub fn look_at(eye: Vec3, target: Vec3, up: Vec3) -> [[f64; 4]; 4] {
        let backward = (eye - target).normalized(); // camera +z
        let right = up.cross(backward).normalized();
        let true_up = backward.cross(right);
        [
            [right.x, true_up.x, backward.x, eye.x],
            [right.y, true_up.y, backward.y, eye.y],
            [right.z, true_up.z, backward.z, eye.z],
            [0.0, 0.0, 0.0, 1.0],
        ]
    }
}

/// Rays with per-ray bounds and pixel provenance (`v * width + u`).
#[derive(Clone, Debug, Default)]
pub struct RayBatch {
    pub origins: Vec<Vec3>,
    pub directions: Vec<Vec3>,
    pub t_near: Vec<f64>,
    pub t_far: Vec<f64>,
    pub pixel_ids: Vec<usize>,
}

impl RayBatch {
    pub fn len(&self) -> usize {
        self.origins.len()
    }

    pub fn is_empty(&self) -> bool {
        self.origins.is_empty()
    }
}

/// Back-projects the listed pixels through their centers.
pub fn generate_rays(
    cam: &CameraModel,
    pixels: &[(usize, usize)],
    t_near: f64,
    t_far: f64,
) -> Result<RayBatch> {
    cam.validate()?;
    if t_near >= t_far {
        return Err(Error::domain("t_near must be below t_far"));
    }
    let mut batch = RayBatch::default();
    for &(u, v) in pixels {
        if u >= cam.width || v >= cam.height {
            return Err(Error::domain(format!(
                "pixel ({u}, {v}) outside {}x{} image",
                cam.width, cam.height
            )));
        }
        let (o, d) = cam.ray_through(u as f64 + 0.5, v as f64 + 0.5);
        batch.origins.push(o);
        batch.directions.push(d);
        batch.t_near.push(t_near);
        batch.t_far.push(t_far);
        batch.pixel_ids.push(v * cam.width + u);
    }
    Ok(batch)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const IDENTITY: [[f64; 4]; 4] = [
        [1.0, 0.0, 0.0, 0.0],
        [0.0, 1.0, 0.0, 0.0],
        [0.0, 0.0, 1.0, 0.0],
        [0.0, 0.0, 0.0, 1.0],
    ];

    fn cam(pose: [[f64; 4]; 4]) -> CameraModel {
        CameraModel {
            fx: 80.0,
            fy: 80.0,
            cx: 32.0,
            cy: 24.0,
            width: 64,
            height: 48,
            camera_to_world: pose,
        }
    }

    #[test]
    fn principal_ray_points_down_negative_z() {
        let c = cam(IDENTITY);
        // pixel whose center is the principal point
        let (o, d) = c.ray_through(c.cx, c.cy);
        assert_eq!(o, Vec3::ZERO);
        assert!((d - Vec3::new(0.0, 0.0, -1.0)).norm() < 1e-12);
    }

    #[test]
    fn translation_shifts_origins_not_directions() {
        let mut pose = IDENTITY;
        pose[0][3] = 1.5;
        pose[2][3] = -2.0;
        let a = generate_rays(&cam(IDENTITY), &[(3, 7), (40, 20)], 0.1, 5.0).unwrap();
        let b = generate_rays(&cam(pose), &[(3, 7), (40, 20)], 0.1, 5.0).unwrap();
        for i in 0..2 {
            assert_eq!(a.directions[i], b.directions[i]);
            assert_eq!(b.origins[i], Vec3::new(1.5, 0.0, -2.0));
        }
    }

    #[test]
    fn out_of_bounds_pixel_is_domain_error() {
        let r = generate_rays(&cam(IDENTITY), &[(64, 0)], 0.1, 5.0);
        assert!(matches!(r, Err(Error::Domain(_))));
    }

    #[test]
    fn backproject_reproject_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        for _ in 0..50 {
            let eye = Vec3::new(
                rng.gen_range(-1.0..1.0),
                rng.gen_range(0.2..1.0),
                rng.gen_range(-1.0..1.0),
            );
            let pose = CameraModel::look_at(eye, Vec3::ZERO, Vec3::new(0.0, 1.0, 0.0));
            let c = cam(pose);
            c.validate().unwrap();
            let u = rng.gen_range(0..c.width);
            let v = rng.gen_range(0..c.height);
            let batch = generate_rays(&c, &[(u, v)], 0.1, 10.0).unwrap();
            let t = rng.gen_range(0.5..5.0);
            let p = batch.origins[0] + batch.directions[0] * t;
            let (pu, pv) = c.project(p).expect("in front");
            assert!((pu - (u as f64 + 0.5)).abs() < 1e-9, "u: {pu} vs {}", u as f64 + 0.5);
            assert!((pv - (v as f64 + 0.5)).abs() < 1e-9, "v: {pv} vs {}", v as f64 + 0.5);
        }
    }

    #[test]
    fn point_behind_camera_does_not_project() {
        let c = cam(IDENTITY);
        assert!(c.project(Vec3::new(0.0, 0.0, 1.0)).is_none());
    }

    #[test]
    fn skewed_rotation_rejected() {
        let mut pose = IDENTITY;
        pose[0][1] = 0.01;
        assert!(cam(pose).validate().is_err());
    }
}
