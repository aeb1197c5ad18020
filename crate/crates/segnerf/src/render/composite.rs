//! Alpha compositing of field samples along a ray, and its exact reverse
//! mode through the transmittance recurrence.
//!
//! Per sample: `alpha_i = 1 - exp(-sigma_i delta_i)`, `T_i = prod_{j<i}
//! (1 - alpha_j)`, `w_i = T_i alpha_i`. The ray accumulates color
//! `sum w_i (c_d + c_s)`, semantics `sum w_i sigmoid(s_i)`, expected depth
//! `sum w_i t_i`, opacity `sum w_i`, and the specular energy
//! `sum w_i |c_s|^2` that the loss penalizes.

use crate::error::{Error, Result};
use crate::field::{sigmoid, FieldGrads, FieldSample};
use crate::math::Vec3;

#[derive(Clone, Debug, Default)]
pub struct RenderOutput {
    pub color: Vec3,
    /// Per-channel semantic opacity in [0, 1].
    pub semantics: Vec<f64>,
    /// Expected depth `sum w_i t_i` (unnormalized).
    pub depth: f64,
    pub opacity: f64,
    /// Weight-accumulated squared specular magnitude.
    pub spec_l2: f64,
    /// Per-sample compositing weights, retained for backprop.
    pub weights: Vec<f64>,
}

impl RenderOutput {
    /// Depth normalized by opacity; the surface estimate used for exports.
    pub fn surface_depth(&self) -> f64 {
        if self.opacity > 0.0 {
            self.depth / self.opacity
        } else {
            0.0
        }
    }
}

/// Upstream gradients w.r.t. the ray-level outputs.
#[derive(Clone, Debug, Default)]
pub struct CompositeGrads {
    pub d_color: Vec3,
    pub d_semantics: Vec<f64>,
    pub d_depth: f64,
    pub d_opacity: f64,
    pub d_spec_l2: f64,
}

impl CompositeGrads {
    pub fn zeroed(channels: usize) -> Self {
        CompositeGrads {
            d_color: Vec3::ZERO,
            d_semantics: vec![0.0; channels],
            d_depth: 0.0,
            d_opacity: 0.0,
            d_spec_l2: 0.0,
        }
    }

    pub fn clear(&mut self) {
        self.d_color = Vec3::ZERO;
        self.d_semantics.iter_mut().for_each(|v| *v = 0.0);
        self.d_depth = 0.0;
        self.d_opacity = 0.0;
        self.d_spec_l2 = 0.0;
    }

    pub fn scale(&mut self, k: f64) {
        self.d_color = self.d_color * k;
        self.d_semantics.iter_mut().for_each(|v| *v *= k);
        self.d_depth *= k;
        self.d_opacity *= k;
        self.d_spec_l2 *= k;
    }
}

pub fn composite(
    samples: &[FieldSample],
    ts: &[f64],
    deltas: &[f64],
    channels: usize,
    out: &mut RenderOutput,
) -> Result<()> {
    debug_assert_eq!(samples.len(), ts.len());
    debug_assert_eq!(samples.len(), deltas.len());
    out.color = Vec3::ZERO;
    out.semantics.clear();
    out.semantics.resize(channels, 0.0);
    out.depth = 0.0;
    out.opacity = 0.0;
    out.spec_l2 = 0.0;
    out.weights.clear();

    let mut transmittance = 1.0f64;
    for (i, s) in samples.iter().enumerate() {
        if !s.sigma.is_finite() {
            return Err(Error::numeric(format!("non-finite density at sample {i}")));
        }
        let alpha = -(-s.sigma * deltas[i]).exp_m1();
        let w = transmittance * alpha;
        out.color += s.color() * w;
        for (k, acc) in out.semantics.iter_mut().enumerate() {
            *acc += w * sigmoid(s.sem[k]);
        }
        out.depth += w * ts[i];
        out.opacity += w;
        out.spec_l2 += w * s.c_s.dot(s.c_s);
        out.weights.push(w);
        transmittance *= (-s.sigma * deltas[i]).exp();
    }
    Ok(())
}

/// Reverse mode of [`composite`]; writes per-sample gradients (density,
/// colors, semantic logits) into `per_sample`, which must have one slot per
/// sample. Requires the weights cached by the forward pass.
pub fn composite_backward(
    upstream: &CompositeGrads,
    samples: &[FieldSample],
    ts: &[f64],
    deltas: &[f64],
    cached: &RenderOutput,
    per_sample: &mut [FieldGrads],
) -> Result<()> {
    let n = samples.len();
    if cached.weights.len() != n {
        return Err(Error::contract(
            "composite backward requires the forward pass's cached weights",
        ));
    }
    debug_assert_eq!(per_sample.len(), n);

    // dL/dw_i and the per-sample output grads that do not touch sigma.
    for i in 0..n {
        let s = &samples[i];
        let w = cached.weights[i];
        let g = &mut per_sample[i];
        g.clear();

        let d_c = upstream.d_color * w;
        g.d_c_d += d_c;
        g.d_c_s += d_c + s.c_s * (2.0 * w * upstream.d_spec_l2);
        for (k, up) in upstream.d_semantics.iter().enumerate() {
            let sg = sigmoid(s.sem[k]);
            g.d_sem[k] += up * w * sg * (1.0 - sg);
        }
    }

    // dL/dsigma_j = delta_j * (A_j T_j exp(-sigma_j delta_j) - sum_{i>j} A_i w_i)
    // where A_i = dL/dw_i.
    let mut suffix = 0.0f64;
    let mut a = vec![0.0f64; n];
    for i in 0..n {
        let s = &samples[i];
        let mut dw = upstream.d_color.dot(s.color()) + upstream.d_depth * ts[i] + upstream.d_opacity;
        for (k, up) in upstream.d_semantics.iter().enumerate() {
            dw += up * sigmoid(s.sem[k]);
        }
        dw += upstream.d_spec_l2 * s.c_s.dot(s.c_s);
        a[i] = dw;
    }
    let mut transmittance = vec![0.0f64; n];
    let mut t_run = 1.0;
    for i in 0..n {
        transmittance[i] = t_run;
        t_run *= (-samples[i].sigma * deltas[i]).exp();
    }
    for j in (0..n).rev() {
        let decay = (-samples[j].sigma * deltas[j]).exp();
        per_sample[j].d_sigma = deltas[j] * (a[j] * transmittance[j] * decay - suffix);
        suffix += a[j] * cached.weights[j];
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn sample(sigma: f64, c_d: Vec3, c_s: Vec3, sem: Vec<f64>) -> FieldSample {
        FieldSample::from_outputs(sigma, c_d, c_s, sem)
    }

    fn random_ray(
        rng: &mut ChaCha8Rng,
        n: usize,
        channels: usize,
    ) -> (Vec<FieldSample>, Vec<f64>, Vec<f64>) {
        let mut ts = Vec::new();
        let mut t = rng.gen_range(0.1..0.5);
        for _ in 0..n {
            t += rng.gen_range(0.01..0.2);
            ts.push(t);
        }
        let deltas: Vec<f64> = (0..n)
            .map(|i| if i + 1 < n { ts[i + 1] - ts[i] } else { 0.1 })
            .collect();
        let samples: Vec<FieldSample> = (0..n)
            .map(|_| {
                sample(
                    rng.gen_range(0.0..8.0),
                    Vec3::new(rng.gen(), rng.gen(), rng.gen()),
                    Vec3::new(
                        rng.gen_range(-0.3..0.3),
                        rng.gen_range(-0.3..0.3),
                        rng.gen_range(-0.3..0.3),
                    ),
                    (0..channels).map(|_| rng.gen_range(-2.0..2.0)).collect(),
                )
            })
            .collect();
        (samples, ts, deltas)
    }

    #[test]
    fn zero_density_renders_nothing() {
        let samples = vec![
            sample(0.0, Vec3::splat(0.8), Vec3::ZERO, vec![1.0]),
            sample(0.0, Vec3::splat(0.2), Vec3::ZERO, vec![-1.0]),
        ];
        let mut out = RenderOutput::default();
        composite(&samples, &[1.0, 2.0], &[1.0, 0.5], 1, &mut out).unwrap();
        assert_eq!(out.color, Vec3::ZERO);
        assert_eq!(out.depth, 0.0);
        assert_eq!(out.opacity, 0.0);
        assert!(out.weights.iter().all(|&w| w == 0.0));
    }

    #[test]
    fn single_sample_ln2_gives_half_weight() {
        let sigma_delta = std::f64::consts::LN_2;
        let samples = vec![sample(sigma_delta / 0.25, Vec3::splat(1.0), Vec3::ZERO, vec![0.0])];
        let mut out = RenderOutput::default();
        composite(&samples, &[0.8], &[0.25], 1, &mut out).unwrap();
        assert!((out.weights[0] - 0.5).abs() < 1e-12);
        assert!((out.depth - 0.4).abs() < 1e-12);
    }

    #[test]
    fn weight_sum_matches_telescoping_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..500 {
            let n = rng.gen_range(1..24);
            let (samples, ts, deltas) = random_ray(&mut rng, n, 2);
            let mut out = RenderOutput::default();
            composite(&samples, &ts, &deltas, 2, &mut out).unwrap();
            let sum_sd: f64 = samples.iter().zip(deltas.iter()).map(|(s, d)| s.sigma * d).sum();
            let expect = 1.0 - (-sum_sd).exp();
            assert!((out.opacity - expect).abs() < 1e-10);
            assert!(out.weights.iter().all(|&w| (0.0..=1.0).contains(&w)));
            // transmittance monotone: running sums of weights never decrease
            // and opacity stays in [0,1]
            assert!((0.0..=1.0).contains(&out.opacity));
            if out.opacity > 0.0 {
                let d = out.depth / out.opacity;
                assert!(d >= ts[0] - 1e-12 && d <= *ts.last().unwrap() + 1e-12);
            }
        }
    }

    #[test]
    fn semantics_recomputable_from_weights() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let (samples, ts, deltas) = random_ray(&mut rng, 12, 3);
        let mut out = RenderOutput::default();
        composite(&samples, &ts, &deltas, 3, &mut out).unwrap();
        for k in 0..3 {
            let recomputed: f64 = samples
                .iter()
                .zip(out.weights.iter())
                .map(|(s, w)| w * sigmoid(s.sem[k]))
                .sum();
            assert!((recomputed - out.semantics[k]).abs() < 1e-15);
        }
    }

    #[test]
    fn nonfinite_sigma_is_numeric_fault() {
        let samples = vec![sample(f64::NAN, Vec3::ZERO, Vec3::ZERO, vec![0.0])];
        let mut out = RenderOutput::default();
        let r = composite(&samples, &[1.0], &[0.1], 1, &mut out);
        assert!(matches!(r, Err(Error::Numeric(_))));
    }

    #[test]
    fn single_sample_depth_gradient_closed_form() {
        let sigma = 3.0;
        let delta = 0.2;
        let t1 = 1.5;
        let samples = vec![sample(sigma, Vec3::ZERO, Vec3::ZERO, vec![0.0])];
        let mut out = RenderOutput::default();
        composite(&samples, &[t1], &[delta], 1, &mut out).unwrap();
        let mut up = CompositeGrads::zeroed(1);
        up.d_depth = 1.0;
        let mut grads = vec![FieldGrads::zeroed(1)];
        composite_backward(&up, &samples, &[t1], &[delta], &out, &mut grads).unwrap();
        let expect = t1 * delta * (-sigma * delta).exp();
        assert!((grads[0].d_sigma - expect).abs() < 1e-10);
    }

    #[test]
    fn zero_upstream_gives_zero_grads() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let (samples, ts, deltas) = random_ray(&mut rng, 8, 2);
        let mut out = RenderOutput::default();
        composite(&samples, &ts, &deltas, 2, &mut out).unwrap();
        let up = CompositeGrads::zeroed(2);
        let mut grads = vec![FieldGrads::zeroed(2); 8];
        composite_backward(&up, &samples, &ts, &deltas, &out, &mut grads).unwrap();
        for g in &grads {
            assert_eq!(g.d_sigma, 0.0);
            assert_eq!(g.d_c_d, Vec3::ZERO);
            assert_eq!(g.d_c_s, Vec3::ZERO);
            assert!(g.d_sem.iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn backward_without_cache_is_contract_violation() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let (samples, ts, deltas) = random_ray(&mut rng, 4, 1);
        let out = RenderOutput::default(); // no weights cached
        let up = CompositeGrads::zeroed(1);
        let mut grads = vec![FieldGrads::zeroed(1); 4];
        let r = composite_backward(&up, &samples, &ts, &deltas, &out, &mut grads);
        assert!(matches!(r, Err(Error::Contract(_))));
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let (mut samples, ts, deltas) = random_ray(&mut rng, 16, 2);
        let channels = 2;
        let up = CompositeGrads {
            d_color: Vec3::new(0.4, -0.3, 0.7),
            d_semantics: vec![0.5, -0.6],
            d_depth: 0.9,
            d_opacity: -0.2,
            d_spec_l2: 0.8,
        };
        let loss = |samples: &[FieldSample]| {
            let mut out = RenderOutput::default();
            composite(samples, &ts, &deltas, channels, &mut out).unwrap();
            up.d_color.dot(out.color)
                + up.d_semantics.iter().zip(out.semantics.iter()).map(|(a, b)| a * b).sum::<f64>()
                + up.d_depth * out.depth
                + up.d_opacity * out.opacity
                + up.d_spec_l2 * out.spec_l2
        };

        let mut out = RenderOutput::default();
        composite(&samples, &ts, &deltas, channels, &mut out).unwrap();
        let mut grads = vec![FieldGrads::zeroed(channels); 16];
        composite_backward(&up, &samples, &ts, &deltas, &out, &mut grads).unwrap();

        let eps = 1e-5;
        for i in 0..16 {
            // sigma
            let orig = samples[i].sigma;
            samples[i].sigma = orig + eps;
            let lp = loss(&samples);
            samples[i].sigma = orig - eps;
            let lm = loss(&samples);
            samples[i].sigma = orig;
            let fd = (lp - lm) / (2.0 * eps);
            let an = grads[i].d_sigma;
            let rel = (fd - an).abs() / fd.abs().max(an.abs()).max(1e-12);
            assert!(rel < 1e-5, "sigma[{i}]: fd {fd} vs {an}");

            // diffuse color (x component)
            let orig = samples[i].c_d.x;
            samples[i].c_d.x = orig + eps;
            let lp = loss(&samples);
            samples[i].c_d.x = orig - eps;
            let lm = loss(&samples);
            samples[i].c_d.x = orig;
            let fd = (lp - lm) / (2.0 * eps);
            assert!((fd - grads[i].d_c_d.x).abs() < 1e-8, "c_d[{i}]: {fd} vs {}", grads[i].d_c_d.x);

            // specular color (y component; includes the spec_l2 path)
            let orig = samples[i].c_s.y;
            samples[i].c_s.y = orig + eps;
            let lp = loss(&samples);
            samples[i].c_s.y = orig - eps;
            let lm = loss(&samples);
            samples[i].c_s.y = orig;
            let fd = (lp - lm) / (2.0 * eps);
            assert!((fd - grads[i].d_c_s.y).abs() < 1e-8, "c_s[{i}]: {fd} vs {}", grads[i].d_c_s.y);

            // semantic logit
            let orig = samples[i].sem[1];
            samples[i].sem[1] = orig + eps;
            let lp = loss(&samples);
            samples[i].sem[1] = orig - eps;
            let lm = loss(&samples);
            samples[i].sem[1] = orig;
            let fd = (lp - lm) / (2.0 * eps);
            assert!((fd - grads[i].d_sem[1]).abs() < 1e-8, "sem[{i}]: {fd} vs {}", grads[i].d_sem[1]);
        }
    }

    /// Doubling the sample count on a smooth analytic density converges
    /// toward a dense quadrature reference.
    #[test]
    fn refinement_consistency_on_smooth_field() {
        let sigma_fn = |t: f64| 2.5 * (-((t - 2.0) * (t - 2.0)) / 0.5).exp();
        let color_fn = |t: f64| Vec3::new(0.5 + 0.3 * (t * 0.7).sin(), 0.4, 0.6);
        let render = |n: usize| {
            let h = 3.0 / n as f64;
            let ts: Vec<f64> = (0..n).map(|i| 0.5 + (i as f64 + 0.5) * h).collect();
            let deltas: Vec<f64> = (0..n).map(|i| if i + 1 < n { ts[i + 1] - ts[i] } else { h }).collect();
            let samples: Vec<FieldSample> =
                ts.iter().map(|&t| sample(sigma_fn(t), color_fn(t), Vec3::ZERO, vec![0.0])).collect();
            let mut out = RenderOutput::default();
            composite(&samples, &ts, &deltas, 1, &mut out).unwrap();
            (out.color, out.depth)
        };
        let (c_ref, d_ref) = render(10_000);
        let mut prev_err = f64::INFINITY;
        for n in [8, 16, 32, 64, 128] {
            let (c, d) = render(n);
            let err = (c - c_ref).norm() + (d - d_ref).abs();
            assert!(err < prev_err, "error did not shrink at n={n}: {err} vs {prev_err}");
            prev_err = err;
        }
    }
}
