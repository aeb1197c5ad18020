//! Real spherical-harmonics basis for unit view directions, hard-coded up
//! to degree 4 (graphics sign convention: band-1 values are positive
//! multiples of (y, z, x)).

use crate::error::{Error, Result};
use crate::math::Vec3;
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShConfig {
    /// Maximum degree, inclusive. Output width is (degree + 1)^2.
    pub degree: usize,
}

impl Default for ShConfig {
    fn default() -> Self {
        ShConfig { degree: 2 }
    }
}

impl ShConfig {
    pub fn validate(&self) -> Result<()> {
        if self.degree > 4 {
            return Err(Error::domain(format!("SH degree {} exceeds 4", self.degree)));
        }
        Ok(())
    }

    pub fn output_dim(&self) -> usize {
        (self.degree + 1) * (self.degree + 1)
    }
}

pub fn sh_encode(d: Vec3, cfg: &ShConfig, out: &mut Vec<f64>) -> Result<()> {
    cfg.validate()?;
    if (d.norm() - 1.0).abs() > 1e-6 {
        return Err(Error::domain(format!("view direction has norm {}, expected 1", d.norm())));
    }
    let (x, y, z) = (d.x, d.y, d.z);
    out.clear();
    out.reserve(cfg.output_dim());

    out.push(0.282_094_791_773_878_14);
    if cfg.degree < 1 {
        return Ok(());
    }
    out.push(0.488_602_511_902_919_9 * y);
    out.push(0.488_602_511_902_919_9 * z);
    out.push(0.488_602_511_902_919_9 * x);
    if cfg.degree < 2 {
        return Ok(());
    }
    let (xx, yy, zz) = (x * x, y * y, z * z);
    out.push(1.092_548_430_592_079_2 * x * y);
    out.push(1.092_548_430_592_079_2 * y * z);
    out.push(0.315_391_565_252_520_05 * (3.0 * zz - 1.0));
    out.push(1.092_548_430_592_079_2 * x * z);
    out.push(0.546_274_215_296_039_6 * (xx - yy));
    if cfg.degree < 3 {
        return Ok(());
    }
    out.push(0.590_043_589_926_643_5 * y * (3.0 * xx - yy));
    out.push(2.890_611_442_640_554 * x * y * z);
    out.push(0.457_045_799_464_465_8 * y * (5.0 * zz - 1.0));
    out.push(0.373_176_332_590_115_4 * z * (5.0 * zz - 3.0));
    out.push(0.457_045_799_464_465_8 * x * (5.0 * zz - 1.0));
    out.push(1.445_305_721_320_277 * z * (xx - yy));
    out.push(0.590_043_589_926_643_5 * x * (xx - 3.0 * yy));
    if cfg.degree < 4 {
        return Ok(());
    }
    out.push(2.503_342_941_796_704_6 * x * y * (xx - yy));
    out.push(1.770_130_769_779_930_4 * y * z * (3.0 * xx - yy));
    out.push(0.946_174_695_757_560_1 * x * y * (7.0 * zz - 1.0));
    out.push(0.669_046_543_557_289_2 * y * z * (7.0 * zz - 3.0));
    out.push(0.105_785_546_915_204_31 * (35.0 * zz * zz - 30.0 * zz + 3.0));
    out.push(0.669_046_543_557_289_2 * x * z * (7.0 * zz - 3.0));
    out.push(0.473_087_347_878_780_04 * (xx - yy) * (7.0 * zz - 1.0));
    out.push(1.770_130_769_779_930_4 * x * z * (xx - 3.0 * yy));
    out.push(0.625_835_735_449_176_1 * (xx * xx - 6.0 * xx * yy + yy * yy));
    Ok(())
}
