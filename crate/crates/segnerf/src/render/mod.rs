//! Ray generation, sampling, and differentiable compositing.

mod camera;
mod composite;
mod sampler;

pub use camera::{generate_rays, CameraModel, RayBatch};
pub use composite::{composite, composite_backward, CompositeGrads, RenderOutput};
pub use sampler::{sample_ray, OccupancyGrid, SampleStrategy};

use crate::error::Result;
use crate::field::{Field, FieldSample};
use crate::math::{seed_stream, Aabb, Grid2, Vec3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// RNG stream tags; keep pixel and batch streams disjoint.
const STREAM_PIXEL: u64 = 0x50495845;

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct RenderConfig {
    pub t_near: f64,
    pub t_far: f64,
    pub n_samples: usize,
    /// Rays with accumulated opacity below this are invalid in exports.
    pub tau_opacity: f64,
    /// Forward early-stop once transmittance drops below this; 0 disables.
    pub transmittance_cutoff: f64,
}

impl Default for RenderConfig {
    fn default() -> Self {
        RenderConfig {
            t_near: 0.05,
            t_far: 1.5,
            n_samples: 32,
            tau_opacity: 0.5,
            transmittance_cutoff: 1e-4,
        }
    }
}

/// Reusable per-worker buffers for one ray's forward (and backward) pass.
#[derive(Clone, Debug, Default)]
pub struct RayContext {
    pub ts: Vec<f64>,
    pub deltas: Vec<f64>,
    pub samples: Vec<FieldSample>,
    pub out: RenderOutput,
    /// Number of samples actually evaluated (post early-stop).
    pub n_evaluated: usize,
}

/// Samples, evaluates the field, and composites one ray. Returns false if
/// the ray misses the scene box entirely (output is the empty render).
#[allow(clippy::too_many_arguments)]
pub fn render_ray(
    field: &Field,
    values: &[f64],
    aabb: &Aabb,
    origin: Vec3,
    dir: Vec3,
    cfg: &RenderConfig,
    strategy: SampleStrategy,
    rng: &mut ChaCha8Rng,
    ctx: &mut RayContext,
) -> Result<bool> {
    let channels = field.cfg.semantic_channels;
    let clip = aabb.clip_ray(origin, dir);
    let (t0, t1) = match clip {
        Some((a, b)) => (a.max(cfg.t_near), b.min(cfg.t_far)),
        None => {
            composite(&[], &[], &[], channels, &mut ctx.out)?;
            ctx.n_evaluated = 0;
            return Ok(false);
        }
    };
    if t0 + 1e-9 >= t1 {
        composite(&[], &[], &[], channels, &mut ctx.out)?;
        ctx.n_evaluated = 0;
        return Ok(false);
    }
    sample_ray(origin, dir, t0, t1, strategy, cfg.n_samples, rng, &mut ctx.ts, &mut ctx.deltas);

    if ctx.samples.len() < ctx.ts.len() {
        ctx.samples.resize(ctx.ts.len(), FieldSample::default());
    }
    let mut transmittance = 1.0f64;
    let mut evaluated = 0;
    for i in 0..ctx.ts.len() {
        let x = aabb.to_unit(origin + dir * ctx.ts[i]).clamp01();
        field.forward(x, dir, values, &mut ctx.samples[i])?;
        evaluated += 1;
        transmittance *= (-ctx.samples[i].sigma * ctx.deltas[i]).exp();
        if cfg.transmittance_cutoff > 0.0 && transmittance < cfg.transmittance_cutoff {
            break;
        }
    }
    ctx.n_evaluated = evaluated;
    composite(
        &ctx.samples[..evaluated],
        &ctx.ts[..evaluated],
        &ctx.deltas[..evaluated],
        channels,
        &mut ctx.out,
    )?;
    Ok(true)
}

/// Full-frame rasters produced by [`render_image`].
#[derive(Clone, Debug)]
pub struct FrameRenders {
    pub color: Grid2<Vec3>,
    /// Raw per-channel semantic opacities.
    pub semantics: Vec<Grid2<f64>>,
    /// Opacity-normalized depth; 0 where opacity < tau.
    pub depth: Grid2<f64>,
    pub opacity: Grid2<f64>,
}

/// Renders every pixel of `cam`, row-major, deterministically for a given
/// seed regardless of tiling or thread count.
pub fn render_image(
    cam: &CameraModel,
    field: &Field,
    values: &[f64],
    aabb: &Aabb,
    cfg: &RenderConfig,
    occupancy: Option<&OccupancyGrid>,
    seed: u64,
    parallel: bool,
) -> Result<FrameRenders> {
    cam.validate()?;
    let channels = field.cfg.semantic_channels;
    let (w, h) = (cam.width, cam.height);

    let render_pixel = |pixel: usize, ctx: &mut RayContext| -> Result<(Vec3, Vec<f64>, f64, f64)> {
        let (u, v) = (pixel % w, pixel / w);
        let (o, d) = cam.ray_through(u as f64 + 0.5, v as f64 + 0.5);
        let mut rng = ChaCha8Rng::seed_from_u64(seed_stream(seed, STREAM_PIXEL, pixel as u64));
        let strategy = match occupancy {
            Some(g) => SampleStrategy::OccupancyImportance(g),
            None => SampleStrategy::Stratified,
        };
        render_ray(field, values, aabb, o, d, cfg, strategy, &mut rng, ctx)?;
        let out = &ctx.out;
        let depth = if out.opacity >= cfg.tau_opacity { out.surface_depth() } else { 0.0 };
        Ok((out.color.clamp01(), out.semantics.clone(), depth, out.opacity))
    };

    let results: Result<Vec<(Vec3, Vec<f64>, f64, f64)>> = if parallel {
        (0..w * h)
            .into_par_iter()
            .map_init(RayContext::default, |ctx, p| render_pixel(p, ctx))
            .collect()
    } else {
        let mut ctx = RayContext::default();
        (0..w * h).map(|p| render_pixel(p, &mut ctx)).collect()
    };
    let results = results?;

    let mut frame = FrameRenders {
        color: Grid2::filled(w, h, Vec3::ZERO),
        semantics: vec![Grid2::filled(w, h, 0.0); channels],
        depth: Grid2::filled(w, h, 0.0),
        opacity: Grid2::filled(w, h, 0.0),
    };
    for (p, (color, sem, depth, opacity)) in results.into_iter().enumerate() {
        frame.color.data[p] = color;
        for (k, s) in sem.into_iter().enumerate() {
            frame.semantics[k].data[p] = s;
        }
        frame.depth.data[p] = depth;
        frame.opacity.data[p] = opacity;
    }
    Ok(frame)
}
