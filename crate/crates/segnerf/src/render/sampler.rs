//! Sample placement along rays: plain stratified bins, or importance
//! placement inside the cells of a maintained occupancy grid.

use crate::error::Result;
use crate::field::{Field, FieldScratch};
use crate::math::{mix_seed, Aabb, Vec3};
use rand::Rng;

/// Binary occupancy over a lattice inside the scene box, refreshed from the
/// field's density on a cadence and decayed so stale cells switch off.
#[derive(Clone, Debug)]
pub struct OccupancyGrid {
    pub res: usize,
    pub aabb: Aabb,
    pub threshold: f64,
    pub decay: f64,
    values: Vec<f64>,
    occupied: Vec<bool>,
    any_on: bool,
}

impl OccupancyGrid {
    pub fn new(res: usize, aabb: Aabb, threshold: f64, decay: f64) -> Self {
        assert!(res >= 1);
        OccupancyGrid {
            res,
            aabb,
            threshold,
            decay,
            values: vec![0.0; res * res * res],
            occupied: vec![false; res * res * res],
            any_on: false,
        }
    }

    pub fn any_occupied(&self) -> bool {
        self.any_on
    }

    #[inline]
    fn cell_index(&self, p: Vec3) -> Option<usize> {
        let u = self.aabb.to_unit(p);
        if !(0.0..1.0 + 1e-12).contains(&u.x)
            || !(0.0..1.0 + 1e-12).contains(&u.y)
            || !(0.0..1.0 + 1e-12).contains(&u.z)
        {
            return None;
        }
        let r = self.res;
        let ix = ((u.x * r as f64) as usize).min(r - 1);
        let iy = ((u.y * r as f64) as usize).min(r - 1);
        let iz = ((u.z * r as f64) as usize).min(r - 1);
        Some((iz * r + iy) * r + ix)
    }

    pub fn is_occupied_at(&self, p: Vec3) -> bool {
        self.cell_index(p).map(|i| self.occupied[i]).unwrap_or(false)
    }

    /// Test hook: force a region on.
    pub fn set_occupied_box(&mut self, b: Aabb) {
        let r = self.res;
        for iz in 0..r {
            for iy in 0..r {
                for ix in 0..r {
                    let c = self.cell_center(ix, iy, iz);
                    if b.contains(c) {
                        self.occupied[(iz * r + iy) * r + ix] = true;
                        self.any_on = true;
                    }
                }
            }
        }
    }

    fn cell_center(&self, ix: usize, iy: usize, iz: usize) -> Vec3 {
        let e = self.aabb.extent();
        let r = self.res as f64;
        Vec3::new(
            self.aabb.min.x + (ix as f64 + 0.5) / r * e.x,
            self.aabb.min.y + (iy as f64 + 0.5) / r * e.y,
            self.aabb.min.z + (iz as f64 + 0.5) / r * e.z,
        )
    }

    /// Re-evaluates the field at one jittered point per cell:
    /// `v = max(decay * v, sigma)`, occupied when `v > threshold`.
    pub fn update(
        &mut self,
        field: &Field,
        values: &[f64],
        step_seed: u64,
        scratch: &mut FieldScratch,
    ) -> Result<()> {
        let r = self.res;
        let e = self.aabb.extent();
        let mut any = false;
        for iz in 0..r {
            for iy in 0..r {
                for ix in 0..r {
                    let i = (iz * r + iy) * r + ix;
                    // deterministic jitter in the cell
                    let h = mix_seed(step_seed ^ (i as u64).wrapping_mul(0x9e3779b97f4a7c15));
                    let jx = ((h & 0xffff) as f64 + 0.5) / 65536.0;
                    let jy = (((h >> 16) & 0xffff) as f64 + 0.5) / 65536.0;
                    let jz = (((h >> 32) & 0xffff) as f64 + 0.5) / 65536.0;
                    let p = Vec3::new(
                        self.aabb.min.x + (ix as f64 + jx) / r as f64 * e.x,
                        self.aabb.min.y + (iy as f64 + jy) / r as f64 * e.y,
                        self.aabb.min.z + (iz as f64 + jz) / r as f64 * e.z,
                    );
                    let x = self.aabb.to_unit(p).clamp01();
                    let sigma = field.density(x, values, scratch)?;
                    self.values[i] = (self.values[i] * self.decay).max(sigma);
                    self.occupied[i] = self.values[i] > self.threshold;
                    any |= self.occupied[i];
                }
            }
        }
        self.any_on = any;
        Ok(())
    }
}

#[derive(Clone, Copy, Debug)]
pub enum SampleStrategy<'a> {
    Stratified,
    OccupancyImportance(&'a OccupancyGrid),
}

/// Places `n_samples` strictly increasing positions in [t_near, t_far] and
/// their forward gaps; the last gap uses the fixed cap
/// `(t_far - t_near) / n_samples`.
pub fn sample_ray(
    origin: Vec3,
    dir: Vec3,
    t_near: f64,
    t_far: f64,
    strategy: SampleStrategy,
    n_samples: usize,
    rng: &mut impl Rng,
    ts: &mut Vec<f64>,
    deltas: &mut Vec<f64>,
) {
    assert!(n_samples >= 2, "need at least two samples per ray");
    ts.clear();
    match strategy {
        SampleStrategy::Stratified => {
            stratified_into(t_near, t_far, n_samples, rng, ts);
        }
        SampleStrategy::OccupancyImportance(grid) => {
            let spans = occupied_spans(grid, origin, dir, t_near, t_far);
            if spans.is_empty() {
                stratified_into(t_near, t_far, n_samples, rng, ts);
            } else {
                let total: f64 = spans.iter().map(|(a, b)| b - a).sum();
                let h = total / n_samples as f64;
                for i in 0..n_samples {
                    let s = (i as f64 + rng.gen::<f64>()) * h;
                    ts.push(span_lookup(&spans, s));
                }
            }
        }
    }
    fill_deltas(ts, deltas, (t_far - t_near) / n_samples as f64);
}

fn stratified_into(t_near: f64, t_far: f64, n: usize, rng: &mut impl Rng, ts: &mut Vec<f64>) {
    let h = (t_far - t_near) / n as f64;
    for i in 0..n {
        ts.push(t_near + (i as f64 + rng.gen::<f64>()) * h);
    }
}

/// Maximal sub-intervals of [t_near, t_far] whose midpoint-marched cells
/// are occupied.
fn occupied_spans(
    grid: &OccupancyGrid,
    origin: Vec3,
    dir: Vec3,
    t_near: f64,
    t_far: f64,
) -> Vec<(f64, f64)> {
    if !grid.any_occupied() {
        return Vec::new();
    }
    let cell = grid.aabb.extent().x.min(grid.aabb.extent().y).min(grid.aabb.extent().z)
        / grid.res as f64;
    let step = (cell * 0.5).max((t_far - t_near) / 4096.0);
    let n = (((t_far - t_near) / step).ceil() as usize).max(1);
    let h = (t_far - t_near) / n as f64;
    let mut spans: Vec<(f64, f64)> = Vec::new();
    for i in 0..n {
        let a = t_near + i as f64 * h;
        let b = a + h;
        let mid = origin + dir * (0.5 * (a + b));
        if grid.is_occupied_at(mid) {
            match spans.last_mut() {
                Some(last) if (last.1 - a).abs() < 1e-12 => last.1 = b,
                _ => spans.push((a, b)),
            }
        }
    }
    spans
}

/// Maps an arc-length coordinate along the concatenated spans back to t.
fn span_lookup(spans: &[(f64, f64)], mut s: f64) -> f64 {
    for &(a, b) in spans {
        let len = b - a;
        if s <= len {
            return a + s;
        }
        s -= len;
    }
    spans.last().map(|&(_, b)| b).unwrap_or(0.0)
}

fn fill_deltas(ts: &[f64], deltas: &mut Vec<f64>, last_cap: f64) {
    deltas.clear();
    for i in 0..ts.len() {
        if i + 1 < ts.len() {
            deltas.push(ts[i + 1] - ts[i]);
        } else {
            deltas.push(last_cap);
        }
    }
}
