//! Time-capped training: Adam over the field parameters, driven by the
//! four-term loss on ray batches drawn from all training views, with a
//! periodically refreshed occupancy grid steering the sampler.
//!
//! Determinism contract: per-ray RNG streams are derived from (seed, step,
//! batch slot) and gradients accumulate into a fixed number of chunk
//! buffers reduced in chunk order, so serial and parallel runs produce
//! bit-identical parameters.

mod adam;
mod loss;

pub use adam::Adam;
pub use loss::{compute_loss, BatchTarget, LossTerms, LossWeights};

use crate::dataset::SceneDataset;
use crate::error::{Error, Result};
use crate::field::{Field, FieldConfig, FieldGrads, FieldScratch, ParameterStore};
use crate::math::{seed_stream, Grid2};
use crate::metrics::{aggregate_metrics, compute_metrics, DepthMetrics};
use crate::render::{
    composite_backward, render_image, render_ray, CameraModel, CompositeGrads, OccupancyGrid,
    RayContext, RenderConfig, SampleStrategy,
};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::time::Instant;

const STREAM_PERM: u64 = 0x5045524d;
const STREAM_RAY: u64 = 0x52415953;
const STREAM_OCC: u64 = 0x4f434355;
const STREAM_EVAL: u64 = 0x4556414c;

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct TrainConfig {
    pub time_limit_s: f64,
    /// Optional hard step cap on top of the time cap (tests, ablations).
    pub max_steps: Option<usize>,
    pub rays_per_batch: usize,
    pub lr: f64,
    /// lr multiplier reached after `lr_decay_steps` steps (exponential).
    pub lr_decay: f64,
    pub lr_decay_steps: f64,
    pub seed: u64,
    pub render: RenderConfig,
    /// Occupancy-grid refresh cadence in steps.
    pub occupancy_every: usize,
    pub occupancy_res: usize,
    pub occupancy_threshold: f64,
    pub occupancy_decay: f64,
    pub parallel: bool,
    /// Fixed gradient-buffer count; the reduction order, not the thread
    /// count, defines the result.
    pub grad_chunks: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            time_limit_s: 60.0,
            max_steps: None,
            rays_per_batch: 512,
            lr: 1e-2,
            lr_decay: 0.1,
            lr_decay_steps: 1500.0,
            seed: 7,
            render: RenderConfig::default(),
            occupancy_every: 24,
            occupancy_res: 24,
            occupancy_threshold: 2.0,
            occupancy_decay: 0.9,
            parallel: true,
            grad_chunks: 4,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.time_limit_s <= 0.0 {
            return Err(Error::domain("time_limit_s must be positive"));
        }
        if self.rays_per_batch < 1 {
            return Err(Error::domain("rays_per_batch must be at least 1"));
        }
        if self.grad_chunks < 1 {
            return Err(Error::domain("grad_chunks must be at least 1"));
        }
        Ok(())
    }
}

/// One NDJSON log record per optimizer step.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub wall_ms: f64,
    pub l_rgb: f64,
    pub l_sem: f64,
    pub l_depth: f64,
    pub l_spec: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub params: ParameterStore,
    pub log: Vec<StepRecord>,
    pub occupancy: OccupancyGrid,
    pub steps: usize,
    pub wall_s: f64,
    /// True when training stopped on a non-finite loss; `params` then holds
    /// the last finite-step parameters.
    pub aborted_nan: bool,
}

/// Fixed-seed permutation stream over all (view, pixel) slots, reshuffled
/// on exhaustion.
struct PixelStream {
    perm: Vec<u32>,
    cursor: usize,
    rng: ChaCha8Rng,
}

impl PixelStream {
    fn new(total: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut perm: Vec<u32> = (0..total as u32).collect();
        perm.shuffle(&mut rng);
        PixelStream { perm, cursor: 0, rng }
    }

    fn next(&mut self) -> u32 {
        if self.cursor == self.perm.len() {
            self.perm.shuffle(&mut self.rng);
            self.cursor = 0;
        }
        let v = self.perm[self.cursor];
        self.cursor += 1;
        v
    }
}

struct RayWork<'a> {
    field: &'a Field,
    ds: &'a SceneDataset,
    cams: &'a [CameraModel],
    cfg: &'a TrainConfig,
    weights: &'a LossWeights,
    channels: usize,
}

impl RayWork<'_> {
    /// Forward, loss, and backward for the rays of one chunk; accumulates
    /// into the chunk-private gradient buffer.
    fn process(
        &self,
        values: &[f64],
        occupancy: &OccupancyGrid,
        step: usize,
        batch: &[u32],
        slot_offset: usize,
        grads: &mut [f64],
        terms_out: &mut LossTerms,
    ) -> Result<()> {
        let mut ctx = RayContext::default();
        let mut scratch = FieldScratch::default();
        let mut upstream = CompositeGrads::zeroed(self.channels);
        let mut per_sample: Vec<FieldGrads> = Vec::new();
        let mut target = BatchTarget { gt_sem: vec![0.0; self.channels], ..Default::default() };
        let (w, h) = (self.ds.intrinsics.width, self.ds.intrinsics.height);
        let inv_batch = 1.0 / self.cfg.rays_per_batch as f64;

        for (i, &slot) in batch.iter().enumerate() {
            let frame_idx = slot as usize / (w * h);
            let pix = slot as usize % (w * h);
            let frame = &self.ds.frames[frame_idx];
            let cam = &self.cams[frame_idx];
            let (u, v) = (pix % w, pix / w);
            let (o, d) = cam.ray_through(u as f64 + 0.5, v as f64 + 0.5);
            let mut rng = ChaCha8Rng::seed_from_u64(seed_stream(
                self.cfg.seed ^ STREAM_RAY,
                step as u64,
                (slot_offset + i) as u64,
            ));
            let strategy = if occupancy.any_occupied() {
                SampleStrategy::OccupancyImportance(occupancy)
            } else {
                SampleStrategy::Stratified
            };
            render_ray(
                self.field,
                values,
                &self.ds.aabb,
                o,
                d,
                &self.cfg.render,
                strategy,
                &mut rng,
                &mut ctx,
            )?;

            target.gt_color = *frame.rgb.get(u, v);
            for k in 0..self.channels {
                target.gt_sem[k] = frame.masks.get(k).map_or(0.0, |m| *m.get(u, v));
            }
            let depth = *frame.depth.get(u, v);
            target.gt_depth = depth;
            target.depth_valid = depth > 0.0;

            let ray_terms = compute_loss(&ctx.out, &target, self.weights, &mut upstream)?;
            let mut scaled = ray_terms;
            scaled.scale(inv_batch);
            terms_out.add(&scaled);
            upstream.scale(inv_batch);

            let n = ctx.n_evaluated;
            if per_sample.len() < n {
                per_sample.resize(n, FieldGrads::zeroed(self.channels));
            }
            composite_backward(
                &upstream,
                &ctx.samples[..n],
                &ctx.ts[..n],
                &ctx.deltas[..n],
                &ctx.out,
                &mut per_sample[..n],
            )?;
            for s in 0..n {
                self.field.backward(&per_sample[s], &ctx.samples[s], values, grads, &mut scratch)?;
            }
        }
        Ok(())
    }
}

/// Runs the optimization until the time budget (and optional step cap) is
/// reached. At least one step always executes.
pub fn train(
    ds: &SceneDataset,
    field: &Field,
    cfg: &TrainConfig,
    weights: &LossWeights,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    weights.validate()?;
    if ds.frames.is_empty() {
        return Err(Error::domain("dataset has no frames"));
    }
    let channels = field.cfg.semantic_channels;
    if weights.w_sem > 0.0 && ds.channels() != channels && ds.channels() != 0 {
        return Err(Error::domain(format!(
            "dataset provides {} mask channels, field expects {channels}",
            ds.channels()
        )));
    }
    let cams: Vec<CameraModel> = ds.frames.iter().map(|f| ds.camera(f)).collect();
    for cam in &cams {
        cam.validate()?;
    }

    let mut params = field.init_params();
    let mut opt = Adam::new(params.len(), 0.9, 0.99, 1e-15);
    let mut occupancy = OccupancyGrid::new(
        cfg.occupancy_res,
        ds.aabb,
        cfg.occupancy_threshold,
        cfg.occupancy_decay,
    );
    let (w, h) = (ds.intrinsics.width, ds.intrinsics.height);
    let mut stream = PixelStream::new(ds.frames.len() * w * h, cfg.seed ^ STREAM_PERM);

    let chunks = cfg.grad_chunks;
    let mut chunk_grads: Vec<Vec<f64>> = vec![vec![0.0; params.len()]; chunks];
    let mut last_good = params.values.clone();
    let mut log = Vec::new();
    let mut aborted_nan = false;
    let work = RayWork { field, ds, cams: &cams, cfg, weights, channels };

    let start = Instant::now();
    let mut step = 0usize;
    loop {
        if step > 0 && start.elapsed().as_secs_f64() >= cfg.time_limit_s {
            break;
        }
        if let Some(max) = cfg.max_steps {
            if step >= max {
                break;
            }
        }
        let step_start = Instant::now();

        if step > 0 && cfg.occupancy_every > 0 && step % cfg.occupancy_every == 0 {
            let mut scratch = FieldScratch::default();
            occupancy.update(
                field,
                &params.values,
                seed_stream(cfg.seed ^ STREAM_OCC, step as u64, 0),
                &mut scratch,
            )?;
        }

        let batch: Vec<u32> = (0..cfg.rays_per_batch).map(|_| stream.next()).collect();
        let chunk_size = batch.len().div_ceil(chunks);
        let jobs: Vec<(usize, &[u32])> = batch
            .chunks(chunk_size.max(1))
            .enumerate()
            .map(|(ci, slice)| (ci * chunk_size.max(1), slice))
            .collect();

        let values = &params.values;
        let occ = &occupancy;
        let run_chunk = |(buf, &(offset, slice)): (&mut Vec<f64>, &(usize, &[u32]))| {
            buf.iter_mut().for_each(|g| *g = 0.0);
            let mut terms = LossTerms::default();
            work.process(values, occ, step, slice, offset, buf, &mut terms)?;
            Ok::<LossTerms, Error>(terms)
        };
        let results: Result<Vec<LossTerms>> = if cfg.parallel {
            chunk_grads[..jobs.len()]
                .par_iter_mut()
                .zip(jobs.par_iter())
                .map(run_chunk)
                .collect()
        } else {
            chunk_grads[..jobs.len()].iter_mut().zip(jobs.iter()).map(run_chunk).collect()
        };
        let chunk_terms = match results {
            Ok(t) => t,
            Err(Error::Numeric(_)) => {
                // poisoned parameters from an earlier update
                params.values.copy_from_slice(&last_good);
                aborted_nan = true;
                break;
            }
            Err(e) => return Err(e),
        };

        let mut terms = LossTerms::default();
        for t in &chunk_terms {
            terms.add(t);
        }
        if !terms.total().is_finite() {
            params.values.copy_from_slice(&last_good);
            aborted_nan = true;
            break;
        }

        params.zero_grads();
        for buf in chunk_grads[..jobs.len()].iter() {
            for (g, b) in params.grads.iter_mut().zip(buf.iter()) {
                *g += b;
            }
        }

        let lr = cfg.lr * cfg.lr_decay.powf(step as f64 / cfg.lr_decay_steps);
        opt.step(&mut params.values, &params.grads, lr);
        if params.values.iter().any(|v| !v.is_finite()) {
            params.values.copy_from_slice(&last_good);
            aborted_nan = true;
            break;
        }
        last_good.copy_from_slice(&params.values);

        log.push(StepRecord {
            step,
            wall_ms: step_start.elapsed().as_secs_f64() * 1e3,
            l_rgb: terms.rgb,
            l_sem: terms.sem,
            l_depth: terms.depth,
            l_spec: terms.spec,
        });
        step += 1;
    }

    Ok(TrainOutcome {
        params,
        log,
        occupancy,
        steps: step,
        wall_s: start.elapsed().as_secs_f64(),
        aborted_nan,
    })
}

/// Renders every frame and scores predicted depth against the dataset's
/// ground truth (falling back to sensor depth when no ground truth is
/// stored), averaging metrics across frames. `region` optionally restricts
/// scoring to per-frame masks.
pub fn evaluate_dataset(
    field: &Field,
    params: &ParameterStore,
    ds: &SceneDataset,
    render_cfg: &RenderConfig,
    occupancy: Option<&OccupancyGrid>,
    seed: u64,
    parallel: bool,
    region: Option<&[Grid2<bool>]>,
) -> Result<DepthMetrics> {
    let mut per_frame = Vec::new();
    for (fi, frame) in ds.frames.iter().enumerate() {
        let cam = ds.camera(frame);
        let rendered = render_image(
            &cam,
            field,
            &params.values,
            &ds.aabb,
            render_cfg,
            occupancy,
            seed_stream(seed ^ STREAM_EVAL, fi as u64, 0),
            parallel,
        )?;
        let gt = frame.depth_gt.as_ref().unwrap_or(&frame.depth);
        let mut valid = Grid2::filled(gt.width, gt.height, false);
        for i in 0..gt.data.len() {
            let mut ok = gt.data[i] > 0.0;
            if let Some(masks) = region {
                ok = ok && masks[fi].data[i];
            }
            valid.data[i] = ok;
        }
        match compute_metrics(&rendered.depth, gt, &valid) {
            Ok(m) => per_frame.push(m),
            Err(Error::Domain(_)) => continue, // frame without valid pixels
            Err(e) => return Err(e),
        }
    }
    aggregate_metrics(&per_frame)
}

/// Component toggles for ablation runs; `true` keeps the component.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AblationToggles {
    pub semantic: bool,
    pub freq_enc: bool,
    pub depth_sup: bool,
    pub spec_split: bool,
}

impl AblationToggles {
    pub fn all_on() -> Self {
        AblationToggles { semantic: true, freq_enc: true, depth_sup: true, spec_split: true }
    }

    pub fn label(&self) -> String {
        let mut removed = Vec::new();
        if !self.semantic {
            removed.push("semantic");
        }
        if !self.freq_enc {
            removed.push("freq-enc");
        }
        if !self.depth_sup {
            removed.push("depth-sup");
        }
        if !self.spec_split {
            removed.push("spec-split");
        }
        if removed.is_empty() {
            "full".to_string()
        } else {
            format!("w/o {}", removed.join("+"))
        }
    }

    pub fn apply(&self, field_cfg: &FieldConfig, weights: &LossWeights) -> (FieldConfig, LossWeights) {
        let mut fc = field_cfg.clone();
        let mut w = *weights;
        if !self.semantic {
            w.w_sem = 0.0;
        }
        if !self.depth_sup {
            w.w_depth = 0.0;
        }
        if !self.freq_enc {
            fc.use_frequency = false;
        }
        if !self.spec_split {
            fc.spec_split = false;
            w.w_spec = 0.0;
        }
        (fc, w)
    }
}

#[derive(Clone, Debug)]
pub struct AblationRow {
    pub label: String,
    pub toggles: AblationToggles,
    pub metrics: DepthMetrics,
}

/// Trains once per requested toggle combination and scores each run on the
/// dataset's ground truth.
pub fn ablate(
    ds: &SceneDataset,
    base_field: &FieldConfig,
    cfg: &TrainConfig,
    weights: &LossWeights,
    combos: &[AblationToggles],
) -> Result<Vec<AblationRow>> {
    let mut rows = Vec::new();
    for toggles in combos {
        let (fc, w) = toggles.apply(base_field, weights);
        let field = Field::new(fc)?;
        let outcome = train(ds, &field, cfg, &w)?;
        let metrics = evaluate_dataset(
            &field,
            &outcome.params,
            ds,
            &cfg.render,
            Some(&outcome.occupancy),
            cfg.seed,
            cfg.parallel,
            None,
        )?;
        rows.push(AblationRow { label: toggles.label(), toggles: *toggles, metrics });
    }
    Ok(rows)
}
