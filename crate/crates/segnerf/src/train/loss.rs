//! The four-term ray loss: L1 on clamped color, binary cross-entropy on
//! rendered semantics, squared error on expected depth where the sensor
//! had a reading, and the small L2 penalty on the specular term.

use crate::error::{Error, Result};
use crate::math::Vec3;
use crate::render::{CompositeGrads, RenderOutput};
use serde::{Deserialize, Serialize};

const BCE_CLAMP: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub w_rgb: f64,
    pub w_sem: f64,
    pub w_depth: f64,
    pub w_spec: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights { w_rgb: 1.0, w_sem: 0.1, w_depth: 0.1, w_spec: 1e-3 }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("w_rgb", self.w_rgb),
            ("w_sem", self.w_sem),
            ("w_depth", self.w_depth),
            ("w_spec", self.w_spec),
        ] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::domain(format!("{name} must be finite and nonnegative")));
            }
        }
        if self.w_rgb <= 0.0 {
            return Err(Error::domain("w_rgb must be positive"));
        }
        Ok(())
    }
}

/// Ground truth for one ray/pixel.
#[derive(Clone, Debug, Default)]
pub struct BatchTarget {
    pub gt_color: Vec3,
    /// One binary value per semantic channel.
    pub gt_sem: Vec<f64>,
    /// Meters; meaningful only when `depth_valid`.
    pub gt_depth: f64,
    pub depth_valid: bool,
}

/// Weighted loss terms for one ray (or means over a batch).
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossTerms {
    pub rgb: f64,
    pub sem: f64,
    pub depth: f64,
    pub spec: f64,
}

impl LossTerms {
    pub fn total(&self) -> f64 {
        self.rgb + self.sem + self.depth + self.spec
    }

    pub fn add(&mut self, o: &LossTerms) {
        self.rgb += o.rgb;
        self.sem += o.sem;
        self.depth += o.depth;
        self.spec += o.spec;
    }

    pub fn scale(&mut self, k: f64) {
        self.rgb *= k;
        self.sem *= k;
        self.depth *= k;
        self.spec *= k;
    }
}

/// Per-ray loss and exact upstream gradients w.r.t. the render outputs.
/// Terms come back already multiplied by their weights; the caller owns
/// batch averaging.
pub fn compute_loss(
    pred: &RenderOutput,
    target: &BatchTarget,
    w: &LossWeights,
    upstream: &mut CompositeGrads,
) -> Result<LossTerms> {
    let channels = pred.semantics.len();
    debug_assert_eq!(target.gt_sem.len(), channels);
    if upstream.d_semantics.len() != channels {
        upstream.d_semantics.resize(channels, 0.0);
    }
    upstream.clear();
    let mut terms = LossTerms::default();

    // L1 on the clamped color; the clamp gradient vanishes outside [0,1].
    let pc = pred.color.to_array();
    let gc = target.gt_color.to_array();
    let mut d_color = [0.0; 3];
    for k in 0..3 {
        let clamped = pc[k].clamp(0.0, 1.0);
        let e = clamped - gc[k];
        terms.rgb += e.abs() / 3.0;
        if (0.0..=1.0).contains(&pc[k]) {
            d_color[k] = e.signum() / 3.0;
        }
    }
    terms.rgb *= w.w_rgb;
    upstream.d_color = Vec3::from(d_color) * w.w_rgb;

    // BCE on rendered semantic opacities, mean over channels.
    for k in 0..channels {
        let s = pred.semantics[k];
        if !s.is_finite() || !(-1e-9..=1.0 + 1e-9).contains(&s) {
            return Err(Error::numeric(format!(
                "rendered semantic channel {k} is {s}, outside [0, 1]"
            )));
        }
        let g = target.gt_sem[k];
        let p = s.clamp(BCE_CLAMP, 1.0 - BCE_CLAMP);
        terms.sem += -(g * p.ln() + (1.0 - g) * (1.0 - p).ln()) / channels as f64;
        if (BCE_CLAMP..=1.0 - BCE_CLAMP).contains(&s) {
            upstream.d_semantics[k] = w.w_sem * (p - g) / (p * (1.0 - p)) / channels as f64;
        }
    }
    terms.sem *= w.w_sem;

    // Squared depth error, masked by sensor validity.
    if target.depth_valid {
        let e = pred.depth - target.gt_depth;
        terms.depth = w.w_depth * e * e;
        upstream.d_depth = w.w_depth * 2.0 * e;
    }

    // Specular energy penalty.
    terms.spec = w.w_spec * pred.spec_l2;
    upstream.d_spec_l2 = w.w_spec;

    Ok(terms)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn pred(color: Vec3, sem: Vec<f64>, depth: f64, spec: f64) -> RenderOutput {
        RenderOutput {
            color,
            semantics: sem,
            depth,
            opacity: 0.9,
            spec_l2: spec,
            weights: vec![],
        }
    }

    #[test]
    fn exact_match_gives_zero_loss() {
        let w = LossWeights::default();
        let p = pred(Vec3::new(0.2, 0.5, 0.9), vec![BCE_CLAMP, 1.0 - BCE_CLAMP], 1.2, 0.0);
        let t = BatchTarget {
            gt_color: Vec3::new(0.2, 0.5, 0.9),
            gt_sem: vec![0.0, 1.0],
            gt_depth: 1.2,
            depth_valid: true,
        };
        let mut up = CompositeGrads::zeroed(2);
        let terms = compute_loss(&p, &t, &w, &mut up).unwrap();
        assert!(terms.rgb.abs() < 1e-12);
        assert!(terms.depth.abs() < 1e-12);
        assert!(terms.spec.abs() < 1e-12);
        // BCE at the clamp edge is the floor entropy, effectively zero
        assert!(terms.sem < 1e-5);
    }

    #[test]
    fn invalid_depth_contributes_exactly_nothing() {
        let w = LossWeights::default();
        let p = pred(Vec3::splat(0.4), vec![0.5], 3.0, 0.01);
        let mut t = BatchTarget {
            gt_color: Vec3::splat(0.1),
            gt_sem: vec![1.0],
            gt_depth: 0.7,
            depth_valid: false,
        };
        let mut up = CompositeGrads::zeroed(1);
        let a = compute_loss(&p, &t, &w, &mut up).unwrap();
        let up_a = up.clone();
        t.gt_depth = 55.5; // perturbing masked gt must change nothing, bitwise
        let b = compute_loss(&p, &t, &w, &mut up).unwrap();
        assert_eq!(a.total().to_bits(), b.total().to_bits());
        assert_eq!(up_a.d_depth.to_bits(), up.d_depth.to_bits());
        assert_eq!(a.depth, 0.0);
        assert_eq!(up.d_depth, 0.0);
    }

    #[test]
    fn matches_scalar_re_implementation() {
        let mut rng = ChaCha8Rng::seed_from_u64(55);
        let w = LossWeights { w_rgb: 0.9, w_sem: 0.3, w_depth: 0.2, w_spec: 0.01 };
        for _ in 0..50 {
            let channels = 3;
            let p = pred(
                Vec3::new(rng.gen_range(-0.2..1.2), rng.gen(), rng.gen()),
                (0..channels).map(|_| rng.gen_range(0.01..0.99)).collect(),
                rng.gen_range(0.3..2.0),
                rng.gen_range(0.0..0.5),
            );
            let t = BatchTarget {
                gt_color: Vec3::new(rng.gen(), rng.gen(), rng.gen()),
                gt_sem: (0..channels).map(|_| f64::from(rng.gen_bool(0.5))).collect(),
                gt_depth: rng.gen_range(0.3..2.0),
                depth_valid: rng.gen_bool(0.7),
            };
            let mut up = CompositeGrads::zeroed(channels);
            let terms = compute_loss(&p, &t, &w, &mut up).unwrap();

            // direct scalar recomputation
            let mut rgb = 0.0;
            for k in 0..3 {
                rgb += (p.color.to_array()[k].clamp(0.0, 1.0) - t.gt_color.to_array()[k]).abs();
            }
            rgb = w.w_rgb * rgb / 3.0;
            let mut sem = 0.0;
            for k in 0..channels {
                let pk = p.semantics[k].clamp(1e-6, 1.0 - 1e-6);
                sem -= t.gt_sem[k] * pk.ln() + (1.0 - t.gt_sem[k]) * (1.0 - pk).ln();
            }
            sem = w.w_sem * sem / channels as f64;
            let depth = if t.depth_valid {
                w.w_depth * (p.depth - t.gt_depth).powi(2)
            } else {
                0.0
            };
            let spec = w.w_spec * p.spec_l2;
            assert!((terms.rgb - rgb).abs() < 1e-12);
            assert!((terms.sem - sem).abs() < 1e-12);
            assert!((terms.depth - depth).abs() < 1e-12);
            assert!((terms.spec - spec).abs() < 1e-12);
            assert!((terms.total() - (rgb + sem + depth + spec)).abs() < 1e-12);
        }
    }

    #[test]
    fn upstream_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(56);
        let w = LossWeights { w_rgb: 1.0, w_sem: 0.4, w_depth: 0.25, w_spec: 0.02 };
        let channels = 2;
        let base = pred(
            Vec3::new(0.3, 0.7, 0.45),
            vec![0.3, 0.8],
            1.1,
            0.2,
        );
        let t = BatchTarget {
            gt_color: Vec3::new(rng.gen(), rng.gen(), rng.gen()),
            gt_sem: vec![1.0, 0.0],
            gt_depth: 0.9,
            depth_valid: true,
        };
        let mut up = CompositeGrads::zeroed(channels);
        compute_loss(&base, &t, &w, &mut up).unwrap();
        let eval = |p: &RenderOutput| {
            let mut u = CompositeGrads::zeroed(channels);
            compute_loss(p, &t, &w, &mut u).unwrap().total()
        };
        let eps = 1e-6;

        let mut p2 = base.clone();
        p2.color.x = base.color.x + eps;
        let up_fd = (eval(&p2) - {
            p2.color.x = base.color.x - eps;
            eval(&p2)
        }) / (2.0 * eps);
        assert!((up_fd - up.d_color.x).abs() < 1e-6);

        let mut p2 = base.clone();
        p2.semantics[1] = base.semantics[1] + eps;
        let hi = eval(&p2);
        p2.semantics[1] = base.semantics[1] - eps;
        let fd = (hi - eval(&p2)) / (2.0 * eps);
        assert!((fd - up.d_semantics[1]).abs() < 1e-6);

        let mut p2 = base.clone();
        p2.depth = base.depth + eps;
        let hi = eval(&p2);
        p2.depth = base.depth - eps;
        let fd = (hi - eval(&p2)) / (2.0 * eps);
        assert!((fd - up.d_depth).abs() < 1e-6);

        let mut p2 = base.clone();
        p2.spec_l2 = base.spec_l2 + eps;
        let hi = eval(&p2);
        p2.spec_l2 = base.spec_l2 - eps;
        let fd = (hi - eval(&p2)) / (2.0 * eps);
        assert!((fd - up.d_spec_l2).abs() < 1e-6);
    }
}
