//! Sinusoidal frequency embedding in the unnormalized convention: bands at
//! 2^k * pi for k in [0, num_bands).

use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrequencyConfig {
    pub num_bands: usize,
    pub include_input: bool,
}

impl Default for FrequencyConfig {
    fn default() -> Self {
        FrequencyConfig { num_bands: 4, include_input: true }
    }
}

impl FrequencyConfig {
    pub fn output_dim(&self, input_dim: usize) -> usize {
        input_dim * (2 * self.num_bands + usize::from(self.include_input))
    }
}

/// Layout: optional raw input first, then per band k the interleaved pairs
/// (sin(2^k pi x_i), cos(2^k pi x_i)) over input components i.
pub fn frequency_encode(x: &[f64], cfg: &FrequencyConfig, out: &mut Vec<f64>) {
    out.clear();
    out.reserve(cfg.output_dim(x.len()));
    if cfg.include_input {
        out.extend_from_slice(x);
    }
    for k in 0..cfg.num_bands {
        let freq = (1u64 << k) as f64 * PI;
        for &xi in x {
            let (s, c) = (freq * xi).sin_cos();
            out.push(s);
            out.push(c);
        }
    }
}

/// Accumulates d(upstream . encode(x))/dx into `grad_x`.
pub fn frequency_encode_backward(
    x: &[f64],
    cfg: &FrequencyConfig,
    upstream: &[f64],
    grad_x: &mut [f64],
) {
    debug_assert_eq!(upstream.len(), cfg.output_dim(x.len()));
    debug_assert_eq!(grad_x.len(), x.len());
    let mut pos = 0;
    if cfg.include_input {
        for i in 0..x.len() {
            grad_x[i] += upstream[pos + i];
        }
        pos += x.len();
    }
    for k in 0..cfg.num_bands {
        let freq = (1u64 << k) as f64 * PI;
        for (i, &xi) in x.iter().enumerate() {
            let (s, c) = (freq * xi).sin_cos();
            grad_x[i] += upstream[pos] * freq * c;
            grad_x[i] -= upstream[pos + 1] * freq * s;
            let _ = i;
            pos += 2;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn encode(x: &[f64], cfg: &FrequencyConfig) -> Vec<f64> {
        let mut out = Vec::new();
        frequency_encode(x, cfg, &mut out);
        out
    }

    #[test]
    fn zero_vector_gives_sin_zero_cos_one() {
        let cfg = FrequencyConfig { num_bands: 3, include_input: false };
        let out = encode(&[0.0, 0.0], &cfg);
        for pair in out.chunks(2) {
            assert_eq!(pair[0], 0.0);
            assert_eq!(pair[1], 1.0);
        }
    }

    #[test]
    fn analytic_band_zero() {
        let cfg = FrequencyConfig { num_bands: 1, include_input: false };
        let out = encode(&[1.0], &cfg);
        assert!((out[0] - 0.0).abs() < 1e-15); // sin(pi)
        assert!((out[1] + 1.0).abs() < 1e-15); // cos(pi)
    }

    #[test]
    fn matches_direct_formula() {
        let cfg = FrequencyConfig { num_bands: 4, include_input: true };
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..20 {
            let x: Vec<f64> = (0..3).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let out = encode(&x, &cfg);
            assert_eq!(out.len(), cfg.output_dim(3));
            let mut expect = x.clone();
            for k in 0..4 {
                for &xi in &x {
                    expect.push((2f64.powi(k) * PI * xi).sin());
                    expect.push((2f64.powi(k) * PI * xi).cos());
                }
            }
            for (a, b) in out.iter().zip(expect.iter()) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn components_bounded_when_input_excluded() {
        let cfg = FrequencyConfig { num_bands: 6, include_input: false };
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..100 {
            let x: Vec<f64> = (0..3).map(|_| rng.gen_range(-10.0..10.0)).collect();
            assert!(encode(&x, &cfg).iter().all(|v| (-1.0..=1.0).contains(v)));
        }
    }

    #[test]
    fn backward_matches_finite_differences() {
        let cfg = FrequencyConfig { num_bands: 3, include_input: true };
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x: Vec<f64> = (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let upstream: Vec<f64> =
            (0..cfg.output_dim(3)).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mut grad = vec![0.0; 3];
        frequency_encode_backward(&x, &cfg, &upstream, &mut grad);
        let loss =
            |x: &[f64]| encode(x, &cfg).iter().zip(upstream.iter()).map(|(a, b)| a * b).sum::<f64>();
        let eps = 1e-6;
        for i in 0..3 {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[i] += eps;
            xm[i] -= eps;
            let fd = (loss(&xp) - loss(&xm)) / (2.0 * eps);
            assert!((fd - grad[i]).abs() < 1e-7, "axis {i}: {fd} vs {}", grad[i]);
        }
    }
}
