//! The radiance/semantic field: a hash-grid + frequency encoded trunk that
//! emits density and a geometry feature, with semantic logits and diffuse
//! color read from the geometry feature before the view direction enters,
//! and a specular offset conditioned on the SH-encoded view direction.

mod mlp;
mod params;

pub use mlp::{sigmoid, softplus, Activation, Mlp, MlpActs};
pub use params::{config_digest, ParameterStore, Segment, Span, CHECKPOINT_MAGIC};

use crate::encodings::{
    frequency_encode, hash_encode, hash_encode_backward, sh_encode, FrequencyConfig,
    HashGridConfig, ShConfig,
};
use crate::error::{Error, Result};
use crate::math::Vec3;
use mlp::layer_dims;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Hidden-layer count (weight matrices) and width of one MLP head.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MlpShape {
    pub layers: usize,
    pub width: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FieldConfig {
    pub grid: HashGridConfig,
    pub freq: FrequencyConfig,
    pub sh: ShConfig,
    /// Concatenate the (MLP-projected) frequency embedding with the hash
    /// features. Disabling removes the whole pathway.
    pub use_frequency: bool,
    /// Split color into a view-independent diffuse head plus a specular
    /// head; when off, a single view-dependent color head is used.
    pub spec_split: bool,
    pub semantic_channels: usize,
    pub geo_feature_dim: usize,
    pub pos_mlp: MlpShape,
    pub trunk: MlpShape,
    pub seg_mlp: MlpShape,
    pub color_mlp: MlpShape,
    pub init_seed: u64,
}

impl Default for FieldConfig {
    fn default() -> Self {
        FieldConfig {
            grid: HashGridConfig::default(),
            freq: FrequencyConfig::default(),
            sh: ShConfig::default(),
            use_frequency: true,
            spec_split: true,
            semantic_channels: 3,
            geo_feature_dim: 15,
            pos_mlp: MlpShape { layers: 1, width: 16 },
            trunk: MlpShape { layers: 2, width: 64 },
            seg_mlp: MlpShape { layers: 2, width: 32 },
            color_mlp: MlpShape { layers: 2, width: 32 },
            init_seed: 71,
        }
    }
}

impl FieldConfig {
    pub fn validate(&self) -> Result<()> {
        self.grid.validate()?;
        self.sh.validate()?;
        if self.semantic_channels < 1 {
            return Err(Error::domain("semantic_channels must be >= 1"));
        }
        for (name, shape) in [
            ("pos_mlp", self.pos_mlp),
            ("trunk", self.trunk),
            ("seg_mlp", self.seg_mlp),
            ("color_mlp", self.color_mlp),
        ] {
            if shape.layers < 1 || shape.width < 1 {
                return Err(Error::domain(format!("{name} must have layers >= 1, width >= 1")));
            }
        }
        if self.geo_feature_dim < 1 {
            return Err(Error::domain("geo_feature_dim must be >= 1"));
        }
        Ok(())
    }

    /// Digest over the canonical JSON encoding; pairs checkpoints with the
    /// architecture that produced them.
    pub fn digest(&self) -> u64 {
        config_digest(&serde_json::to_string(self).expect("config serializes"))
    }
}

/// Per-point field outputs plus the cached activations backward needs.
#[derive(Clone, Debug, Default)]
pub struct FieldSample {
    pub sigma: f64,
    pub c_d: Vec3,
    pub c_s: Vec3,
    /// Semantic logits, length `semantic_channels`.
    pub sem: Vec<f64>,
    cache: SampleCache,
}

#[derive(Clone, Debug, Default)]
struct SampleCache {
    x: Vec3,
    d: Vec3,
    enc_hash: Vec<f64>,
    enc_freq: Vec<f64>,
    sh: Vec<f64>,
    trunk_in: Vec<f64>,
    view_in: Vec<f64>,
    pos_acts: MlpActs,
    trunk_acts: MlpActs,
    sem_acts: MlpActs,
    diff_acts: MlpActs,
    spec_acts: MlpActs,
    sigma_pre: f64,
    cached: bool,
}

impl FieldSample {
    /// Total pre-clamp color at this point.
    pub fn color(&self) -> Vec3 {
        self.c_d + self.c_s
    }

    /// Bare sample from outputs alone (no backprop cache); used by analytic
    /// oracles and tests that only need the compositing side.
    pub fn from_outputs(sigma: f64, c_d: Vec3, c_s: Vec3, sem: Vec<f64>) -> Self {
        FieldSample { sigma, c_d, c_s, sem, cache: SampleCache::default() }
    }
}

/// Upstream gradients w.r.t. the sample outputs.
#[derive(Clone, Debug, Default)]
pub struct FieldGrads {
    pub d_sigma: f64,
    pub d_c_d: Vec3,
    pub d_c_s: Vec3,
    /// Gradient w.r.t. the semantic logits.
    pub d_sem: Vec<f64>,
}

impl FieldGrads {
    pub fn zeroed(channels: usize) -> Self {
        FieldGrads { d_sigma: 0.0, d_c_d: Vec3::ZERO, d_c_s: Vec3::ZERO, d_sem: vec![0.0; channels] }
    }

    pub fn clear(&mut self) {
        self.d_sigma = 0.0;
        self.d_c_d = Vec3::ZERO;
        self.d_c_s = Vec3::ZERO;
        self.d_sem.iter_mut().for_each(|v| *v = 0.0);
    }
}

/// Reusable backward buffers; one per worker.
#[derive(Clone, Debug, Default)]
pub struct FieldScratch {
    d_geo: Vec<f64>,
    d_head_in: Vec<f64>,
    d_trunk_out: Vec<f64>,
    d_trunk_in: Vec<f64>,
    d_pos_out: Vec<f64>,
    d_enc: Vec<f64>,
    mlp_scratch: Vec<f64>,
    up3: Vec<f64>,
}

/// Architecture plus the parameter layout it induces.
#[derive(Clone, Debug)]
pub struct Field {
    pub cfg: FieldConfig,
    hash_span: Span,
    pos_mlp: Option<Mlp>,
    trunk: Mlp,
    sem_mlp: Mlp,
    diffuse: Option<Mlp>,
    specular: Option<Mlp>,
    color: Option<Mlp>,
    segments: Vec<Segment>,
}

impl Field {
    pub fn new(cfg: FieldConfig) -> Result<Field> {
        cfg.validate()?;
        let mut segments = Vec::new();
        let mut offset = 0usize;
        let mut push = |name: String, len: usize, offset: &mut usize| -> Span {
            let span = Span { offset: *offset, len };
            segments.push(Segment { name, span });
            *offset += len;
            span
        };

        let hash_span = push("hash_table".into(), cfg.grid.param_count(), &mut offset);

        let mut build_mlp = |name: &str,
                             in_dim: usize,
                             shape: MlpShape,
                             out_dim: usize,
                             out_act: Activation,
                             offset: &mut usize| {
            let dims = layer_dims(in_dim, shape.layers, shape.width, out_dim);
            let mut layers = Vec::new();
            for (i, &(di, dout)) in dims.iter().enumerate() {
                let w = push(format!("{name}.w{i}"), di * dout, offset);
                let b = push(format!("{name}.b{i}"), dout, offset);
                let act = if i + 1 == dims.len() { out_act } else { Activation::Relu };
                layers.push(mlp::Layer { w, b, in_dim: di, out_dim: dout, act });
            }
            Mlp { layers, in_dim, out_dim }
        };

        let pos_mlp = if cfg.use_frequency {
            Some(build_mlp(
                "pos_mlp",
                cfg.freq.output_dim(3),
                cfg.pos_mlp,
                cfg.pos_mlp.width,
                Activation::Relu,
                &mut offset,
            ))
        } else {
            None
        };
        let trunk_in = cfg.grid.output_dim() + pos_mlp.as_ref().map_or(0, |m| m.out_dim);
        let trunk = build_mlp(
            "trunk",
            trunk_in,
            cfg.trunk,
            1 + cfg.geo_feature_dim,
            Activation::Linear,
            &mut offset,
        );
        let sem_mlp = build_mlp(
            "seg_mlp",
            cfg.geo_feature_dim,
            cfg.seg_mlp,
            cfg.semantic_channels,
            Activation::Linear,
            &mut offset,
        );
        let view_dim = cfg.geo_feature_dim + cfg.sh.output_dim();
        let (diffuse, specular, color) = if cfg.spec_split {
            let d = build_mlp(
                "diffuse",
                cfg.geo_feature_dim,
                cfg.color_mlp,
                3,
                Activation::Sigmoid,
                &mut offset,
            );
            let s = build_mlp("specular", view_dim, cfg.color_mlp, 3, Activation::Linear, &mut offset);
            (Some(d), Some(s), None)
        } else {
            let c = build_mlp("color", view_dim, cfg.color_mlp, 3, Activation::Sigmoid, &mut offset);
            (None, None, Some(c))
        };

        Ok(Field { cfg, hash_span, pos_mlp, trunk, sem_mlp, diffuse, specular, color, segments })
    }

    pub fn param_count(&self) -> usize {
        self.segments.last().map_or(0, |s| s.span.offset + s.span.len)
    }

    /// Fresh store with He-style uniform MLP weights, zero biases, and hash
    /// tables uniform in [-1e-4, 1e-4], all from the config seed.
    pub fn init_params(&self) -> ParameterStore {
        let mut store = ParameterStore::from_layout(self.segments.clone());
        let mut rng = ChaCha8Rng::seed_from_u64(self.cfg.init_seed);
        for seg in self.segments.clone() {
            let vals = seg.span.slice_mut(&mut store.values);
            if seg.name == "hash_table" {
                for v in vals.iter_mut() {
                    *v = rng.gen_range(-1e-4..1e-4);
                }
            } else if seg.name.contains(".w") {
                let in_dim = self.layer_in_dim(&seg.name);
                let limit = (6.0 / in_dim as f64).sqrt();
                for v in vals.iter_mut() {
                    *v = rng.gen_range(-limit..limit);
                }
            }
            // biases stay zero
        }
        store
    }

    fn layer_in_dim(&self, weight_name: &str) -> usize {
        let all = [
            self.pos_mlp.as_ref(),
            Some(&self.trunk),
            Some(&self.sem_mlp),
            self.diffuse.as_ref(),
            self.specular.as_ref(),
            self.color.as_ref(),
        ];
        for mlp in all.into_iter().flatten() {
            for layer in &mlp.layers {
                if self
                    .segments
                    .iter()
                    .any(|s| s.name == weight_name && s.span == layer.w)
                {
                    return layer.in_dim;
                }
            }
        }
        unreachable!("unknown weight segment {weight_name}")
    }

    /// Evaluates the field at `x` (unit cube) viewed from direction `d`
    /// (unit norm), caching activations for a later backward pass.
    pub fn forward(
        &self,
        x: Vec3,
        d: Vec3,
        values: &[f64],
        sample: &mut FieldSample,
    ) -> Result<()> {
        let cache = &mut sample.cache;
        cache.x = x;
        cache.d = d;
        hash_encode(x, &self.cfg.grid, self.hash_span.slice(values), &mut cache.enc_hash)?;
        sh_encode(d, &self.cfg.sh, &mut cache.sh)?;

        cache.trunk_in.clear();
        cache.trunk_in.extend_from_slice(&cache.enc_hash);
        if let Some(pos_mlp) = &self.pos_mlp {
            frequency_encode(&x.to_array(), &self.cfg.freq, &mut cache.enc_freq);
            pos_mlp.forward(values, &cache.enc_freq, &mut cache.pos_acts);
            cache.trunk_in.extend_from_slice(cache.pos_acts.acts.last().unwrap());
        }
        self.trunk.forward(values, &cache.trunk_in, &mut cache.trunk_acts);
        let trunk_out = cache.trunk_acts.acts.last().unwrap();
        cache.sigma_pre = trunk_out[0];
        sample.sigma = softplus(cache.sigma_pre - 1.0);
        let geo = &trunk_out[1..];

        self.sem_mlp.forward(values, geo, &mut cache.sem_acts);
        sample.sem.clear();
        sample.sem.extend_from_slice(cache.sem_acts.acts.last().unwrap());

        cache.view_in.clear();
        cache.view_in.extend_from_slice(geo);
        cache.view_in.extend_from_slice(&cache.sh);
        if let (Some(diffuse), Some(specular)) = (&self.diffuse, &self.specular) {
            diffuse.forward(values, geo, &mut cache.diff_acts);
            let cd = cache.diff_acts.acts.last().unwrap();
            sample.c_d = Vec3::new(cd[0], cd[1], cd[2]);
            specular.forward(values, &cache.view_in, &mut cache.spec_acts);
            let cs = cache.spec_acts.acts.last().unwrap();
            sample.c_s = Vec3::new(cs[0], cs[1], cs[2]);
        } else {
            let color = self.color.as_ref().expect("color head when split disabled");
            color.forward(values, &cache.view_in, &mut cache.diff_acts);
            let c = cache.diff_acts.acts.last().unwrap();
            sample.c_d = Vec3::new(c[0], c[1], c[2]);
            sample.c_s = Vec3::ZERO;
        }
        cache.cached = true;

        if !sample.sigma.is_finite() || !sample.c_d.is_finite() || !sample.c_s.is_finite() {
            return Err(self.diagnose_nonfinite(values));
        }
        Ok(())
    }

    /// Density-only evaluation; no heads, no caching. Used by the occupancy
    /// grid refresh.
    pub fn density(&self, x: Vec3, values: &[f64], scratch: &mut FieldScratch) -> Result<f64> {
        let mut enc = std::mem::take(&mut scratch.d_enc);
        hash_encode(x, &self.cfg.grid, self.hash_span.slice(values), &mut enc)?;
        let mut trunk_in = std::mem::take(&mut scratch.d_trunk_in);
        trunk_in.clear();
        trunk_in.extend_from_slice(&enc);
        let mut pos_acts = MlpActs::default();
        if let Some(pos_mlp) = &self.pos_mlp {
            let mut freq = std::mem::take(&mut scratch.d_pos_out);
            frequency_encode(&x.to_array(), &self.cfg.freq, &mut freq);
            pos_mlp.forward(values, &freq, &mut pos_acts);
            trunk_in.extend_from_slice(pos_acts.acts.last().unwrap());
            scratch.d_pos_out = freq;
        }
        let mut trunk_acts = MlpActs::default();
        self.trunk.forward(values, &trunk_in, &mut trunk_acts);
        let sigma = softplus(trunk_acts.acts.last().unwrap()[0] - 1.0);
        scratch.d_enc = enc;
        scratch.d_trunk_in = trunk_in;
        Ok(sigma)
    }

    fn diagnose_nonfinite(&self, values: &[f64]) -> Error {
        for seg in &self.segments {
            if seg.span.slice(values).iter().any(|v| !v.is_finite()) {
                return Error::numeric(format!("non-finite parameter in segment {}", seg.name));
            }
        }
        Error::numeric("non-finite field output with finite parameters")
    }

    /// Reverse mode through every head down to the hash tables; accumulates
    /// into `grads` (same length as the parameter array).
    pub fn backward(
        &self,
        upstream: &FieldGrads,
        sample: &FieldSample,
        values: &[f64],
        grads: &mut [f64],
        scratch: &mut FieldScratch,
    ) -> Result<()> {
        let cache = &sample.cache;
        if !cache.cached {
            return Err(Error::contract("field backward without a cached forward"));
        }
        let geo_dim = self.cfg.geo_feature_dim;
        let trunk_out = cache.trunk_acts.acts.last().unwrap();
        let geo = &trunk_out[1..];

        scratch.d_geo.clear();
        scratch.d_geo.resize(geo_dim, 0.0);

        // Color heads.
        if let (Some(diffuse), Some(specular)) = (&self.diffuse, &self.specular) {
            scratch.up3.clear();
            scratch.up3.extend_from_slice(&upstream.d_c_s.to_array());
            specular.backward(
                values,
                &cache.view_in,
                &cache.spec_acts,
                &scratch.up3,
                grads,
                &mut scratch.d_head_in,
                &mut scratch.mlp_scratch,
            );
            for (g, d) in scratch.d_geo.iter_mut().zip(scratch.d_head_in.iter()) {
                *g += d;
            }
            scratch.up3.clear();
            scratch.up3.extend_from_slice(&upstream.d_c_d.to_array());
            diffuse.backward(
                values,
                geo,
                &cache.diff_acts,
                &scratch.up3,
                grads,
                &mut scratch.d_head_in,
                &mut scratch.mlp_scratch,
            );
            for (g, d) in scratch.d_geo.iter_mut().zip(scratch.d_head_in.iter()) {
                *g += d;
            }
        } else {
            let color = self.color.as_ref().expect("color head when split disabled");
            scratch.up3.clear();
            scratch.up3.extend_from_slice(&upstream.d_c_d.to_array());
            color.backward(
                values,
                &cache.view_in,
                &cache.diff_acts,
                &scratch.up3,
                grads,
                &mut scratch.d_head_in,
                &mut scratch.mlp_scratch,
            );
            for (g, d) in scratch.d_geo.iter_mut().zip(scratch.d_head_in.iter()) {
                *g += d;
            }
        }

        // Semantic head.
        self.sem_mlp.backward(
            values,
            geo,
            &cache.sem_acts,
            &upstream.d_sem,
            grads,
            &mut scratch.d_head_in,
            &mut scratch.mlp_scratch,
        );
        for (g, d) in scratch.d_geo.iter_mut().zip(scratch.d_head_in.iter()) {
            *g += d;
        }

        // Trunk: slot 0 is the density logit, the rest the geometry feature.
        scratch.d_trunk_out.clear();
        scratch.d_trunk_out.push(upstream.d_sigma * sigmoid(cache.sigma_pre - 1.0));
        scratch.d_trunk_out.extend_from_slice(&scratch.d_geo);
        self.trunk.backward(
            values,
            &cache.trunk_in,
            &cache.trunk_acts,
            &scratch.d_trunk_out,
            grads,
            &mut scratch.d_trunk_in,
            &mut scratch.mlp_scratch,
        );

        let hash_dim = self.cfg.grid.output_dim();
        hash_encode_backward(
            cache.x,
            &self.cfg.grid,
            self.hash_span.slice(values),
            &scratch.d_trunk_in[..hash_dim],
            self.hash_span.slice_mut(grads),
            None,
        )?;
        if let Some(pos_mlp) = &self.pos_mlp {
            scratch.d_pos_out.clear();
            scratch.d_pos_out.extend_from_slice(&scratch.d_trunk_in[hash_dim..]);
            pos_mlp.backward(
                values,
                &cache.enc_freq,
                &cache.pos_acts,
                &scratch.d_pos_out,
                grads,
                &mut scratch.d_enc,
                &mut scratch.mlp_scratch,
            );
            // gradient w.r.t. the frequency encoding ends here; positions
            // are not trainable.
        }
        Ok(())
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }
}

/// Spec-shaped wrappers operating on a whole [`ParameterStore`].
pub fn field_forward(
    x: Vec3,
    d: Vec3,
    params: &ParameterStore,
    field: &Field,
    sample: &mut FieldSample,
) -> Result<()> {
    field.forward(x, d, &params.values, sample)
}

pub fn field_backward(
    upstream: &FieldGrads,
    sample: &FieldSample,
    params: &mut ParameterStore,
    field: &Field,
    scratch: &mut FieldScratch,
) -> Result<()> {
    let values = std::mem::take(&mut params.values);
    let r = field.backward(upstream, sample, &values, &mut params.grads, scratch);
    params.values = values;
    r
}
