//! Multiresolution hash-grid encoding. Each level owns a hash table of
//! learned feature vectors; a position is encoded per level by trilinearly
//! interpolating the eight cell corners, looked up through a spatial hash.

use crate::error::{Error, Result};
use crate::math::Vec3;
use serde::{Deserialize, Serialize};

// Per-dimension multipliers of the spatial hash (Instant-NGP lineage).
const HASH_PRIMES: [u64; 3] = [1, 2_654_435_761, 805_459_861];

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HashGridConfig {
    pub levels: usize,
    pub features_per_level: usize,
    pub table_size_log2: u32,
    pub base_resolution: usize,
    pub growth_factor: f64,
    pub hash_seed: u64,
}

impl Default for HashGridConfig {
    fn default() -> Self {
        // Desk-scale grid: ~0.5M table entries, trains on a CPU in seconds.
        HashGridConfig {
            levels: 8,
            features_per_level: 2,
            table_size_log2: 15,
            base_resolution: 16,
            growth_factor: 1.38,
            hash_seed: 0x5eed,
        }
    }
}

impl HashGridConfig {
    pub fn validate(&self) -> Result<()> {
        if self.levels < 1 {
            return Err(Error::domain("hash grid needs at least one level"));
        }
        if !(10..=24).contains(&self.table_size_log2) {
            return Err(Error::domain(format!(
                "table_size_log2 {} outside [10, 24]",
                self.table_size_log2
            )));
        }
        if self.growth_factor <= 1.0 {
            return Err(Error::domain("growth_factor must exceed 1"));
        }
        if self.features_per_level < 1 || self.base_resolution < 1 {
            return Err(Error::domain("features_per_level and base_resolution must be positive"));
        }
        Ok(())
    }

    pub fn table_size(&self) -> usize {
        1usize << self.table_size_log2
    }

    /// Grid resolution (cells per axis) of `level`.
    pub fn level_resolution(&self, level: usize) -> usize {
        (self.base_resolution as f64 * self.growth_factor.powi(level as i32)).floor() as usize
    }

    pub fn output_dim(&self) -> usize {
        self.levels * self.features_per_level
    }

    /// Total number of trainable scalars across all level tables.
    pub fn param_count(&self) -> usize {
        self.levels * self.table_size() * self.features_per_level
    }

    #[inline]
    fn hash(&self, ix: u64, iy: u64, iz: u64) -> usize {
        let h = ix
            .wrapping_mul(HASH_PRIMES[0])
            ^ iy.wrapping_mul(HASH_PRIMES[1])
            ^ iz.wrapping_mul(HASH_PRIMES[2])
            ^ self.hash_seed;
        (h & (self.table_size() as u64 - 1)) as usize
    }
}

#[inline]
fn cell_of(x: Vec3, res: usize) -> ([u64; 3], [f64; 3]) {
    let scaled = [x.x * res as f64, x.y * res as f64, x.z * res as f64];
    let mut corner = [0u64; 3];
    let mut frac = [0f64; 3];
    for k in 0..3 {
        // x = 1.0 falls into the last cell so weights stay in [0,1].
        let c = scaled[k].floor().min(res as f64 - 1.0).max(0.0);
        corner[k] = c as u64;
        frac[k] = scaled[k] - c;
    }
    (corner, frac)
}

fn check_domain(x: Vec3) -> Result<()> {
    let in_cube = (0.0..=1.0).contains(&x.x) && (0.0..=1.0).contains(&x.y) && (0.0..=1.0).contains(&x.z);
    if !in_cube {
        return Err(Error::domain(format!(
            "position ({}, {}, {}) outside the unit cube",
            x.x, x.y, x.z
        )));
    }
    Ok(())
}

/// Encodes a unit-cube position against the level tables stored in `table`
/// (layout: level-major, then hash slot, then feature).
pub fn hash_encode(x: Vec3, cfg: &HashGridConfig, table: &[f64], out: &mut Vec<f64>) -> Result<()> {
    check_domain(x)?;
    debug_assert_eq!(table.len(), cfg.param_count());
    let f = cfg.features_per_level;
    out.clear();
    out.resize(cfg.output_dim(), 0.0);
    let level_stride = cfg.table_size() * f;
    for level in 0..cfg.levels {
        let res = cfg.level_resolution(level);
        let (c, w) = cell_of(x, res);
        let base = level * level_stride;
        let out_base = level * f;
        for dz in 0..2u64 {
            let wz = if dz == 1 { w[2] } else { 1.0 - w[2] };
            for dy in 0..2u64 {
                let wy = if dy == 1 { w[1] } else { 1.0 - w[1] };
                for dx in 0..2u64 {
                    let wx = if dx == 1 { w[0] } else { 1.0 - w[0] };
                    let weight = wx * wy * wz;
                    let slot = cfg.hash(c[0] + dx, c[1] + dy, c[2] + dz);
                    let entry = base + slot * f;
                    for j in 0..f {
                        out[out_base + j] += weight * table[entry + j];
                    }
                }
            }
        }
    }
    Ok(())
}

/// Reverse mode of [`hash_encode`]: accumulates `upstream` into table
/// gradients, and optionally the gradient w.r.t. the position itself.
pub fn hash_encode_backward(
    x: Vec3,
    cfg: &HashGridConfig,
    table: &[f64],
    upstream: &[f64],
    grad_table: &mut [f64],
    mut grad_x: Option<&mut Vec3>,
) -> Result<()> {
    check_domain(x)?;
    debug_assert_eq!(upstream.len(), cfg.output_dim());
    debug_assert_eq!(grad_table.len(), cfg.param_count());
    let f = cfg.features_per_level;
    let level_stride = cfg.table_size() * f;
    for level in 0..cfg.levels {
        let res = cfg.level_resolution(level);
        let (c, w) = cell_of(x, res);
        let base = level * level_stride;
        let up = &upstream[level * f..(level + 1) * f];
        for dz in 0..2u64 {
            let wz = if dz == 1 { w[2] } else { 1.0 - w[2] };
            let sz = if dz == 1 { 1.0 } else { -1.0 };
            for dy in 0..2u64 {
                let wy = if dy == 1 { w[1] } else { 1.0 - w[1] };
                let sy = if dy == 1 { 1.0 } else { -1.0 };
                for dx in 0..2u64 {
                    let wx = if dx == 1 { w[0] } else { 1.0 - w[0] };
                    let sx = if dx == 1 { 1.0 } else { -1.0 };
                    let weight = wx * wy * wz;
                    let slot = cfg.hash(c[0] + dx, c[1] + dy, c[2] + dz);
                    let entry = base + slot * f;
                    let mut dot = 0.0;
                    for j in 0..f {
                        grad_table[entry + j] += weight * up[j];
                        dot += up[j] * table[entry + j];
                    }
                    if let Some(gx) = grad_x.as_deref_mut() {
                        // d weight / d x, chain-ruled through the res scaling.
                        let r = res as f64;
                        gx.x += dot * sx * wy * wz * r;
                        gx.y += dot * wx * sy * wz * r;
                        gx.z += dot * wx * wy * sz * r;
                    }
                }
            }
        }
    }
    Ok(())
}
