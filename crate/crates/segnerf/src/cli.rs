//! Command-line surface: dataset synthesis, mask grouping, training,
//! rendering, evaluation, and point-cloud export.

use crate::dataset::{
    load_depth_mm, load_mask, save_depth_mm, save_f32_sidecar, save_mask, save_rgb8, SceneDataset,
};
use crate::error::Error;
use crate::field::{Field, FieldConfig, ParameterStore};
use crate::maskhier::{build_hierarchy, rasterize_channels, InstanceMask, DEFAULT_MIN_AREA};
use crate::math::Grid2;
use crate::metrics::{aggregate_metrics, compute_metrics, DepthMetrics};
use crate::pointcloud::{radius_outlier_filter, unproject_view, write_ply, ColoredPoint};
use crate::render::render_image;
use crate::scenegen::{generate_dataset, SyntheticScene};
use crate::train::{evaluate_dataset, train, AblationToggles, LossWeights, TrainConfig};
use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

/// Bundled run configuration; any subset may appear in a --config file.
#[derive(Clone, Debug, Default, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub field: FieldConfig,
    pub train: TrainConfig,
    pub weights: LossWeights,
}

#[derive(Parser, Debug)]
#[command(
    name = "segnerf",
    about = "Segmentation-aided radiance fields for transparent-object depth completion",
    version
)]
struct Cli {
    /// RNG seed override.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// JSON run configuration (field / train / weights).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Training wall-clock budget override, seconds.
    #[arg(long, global = true)]
    time_limit_s: Option<f64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic scene dataset (RGB, depth, masks, poses).
    Synth(SynthArgs),
    /// Group instance masks into hierarchical non-overlapping channels.
    Maskgroup(MaskgroupArgs),
    /// Fit the field to a dataset under a wall-clock budget.
    Train(TrainArgs),
    /// Render color/depth/semantic rasters from a checkpoint.
    Render(RenderArgs),
    /// Depth metrics between predicted and ground-truth rasters.
    Eval(EvalArgs),
    /// Export a colored point cloud as ASCII PLY.
    ExportPly(ExportArgs),
}

#[derive(Args, Debug)]
struct SynthArgs {
    /// Scene description JSON; the built-in sphere-on-table scene when omitted.
    #[arg(long)]
    scene: Option<PathBuf>,
    #[arg(long, default_value_t = 16)]
    views: usize,
    #[arg(long, default_value_t = 64)]
    width: usize,
    #[arg(long, default_value_t = 64)]
    height: usize,
    #[arg(long, default_value_t = 3)]
    channels: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct MaskgroupArgs {
    /// Directory of per-instance PNG masks (nonzero = on).
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long, default_value_t = 3)]
    channels: usize,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = DEFAULT_MIN_AREA)]
    min_area: usize,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    /// Checkpoint output path.
    #[arg(long)]
    out: PathBuf,
    /// Newline-delimited JSON step log.
    #[arg(long)]
    log: Option<PathBuf>,
    /// Train on an evenly spaced subset of views.
    #[arg(long)]
    views: Option<usize>,
    /// Print depth metrics against the dataset ground truth after training.
    #[arg(long, default_value_t = false)]
    eval: bool,
    /// Restrict --eval to pixels of one semantic channel.
    #[arg(long)]
    mask_only: Option<usize>,
    #[arg(long, default_value_t = false)]
    no_semantic: bool,
    #[arg(long, default_value_t = false)]
    no_freq: bool,
    #[arg(long, default_value_t = false)]
    no_depth: bool,
    #[arg(long, default_value_t = false)]
    no_spec: bool,
    /// Disable the parallel ray workers.
    #[arg(long, default_value_t = false)]
    serial: bool,
}

#[derive(Args, Debug)]
struct RenderArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    ckpt: PathBuf,
    /// Frame index whose pose is rendered.
    #[arg(long, default_value_t = 0)]
    view: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct EvalArgs {
    /// Predicted depth: a 16-bit millimeter PNG or a directory of them.
    #[arg(long)]
    pred: PathBuf,
    /// Ground-truth depth raster(s), same encoding.
    #[arg(long)]
    gt: PathBuf,
    /// Optional mask raster(s); metrics restricted to nonzero pixels.
    #[arg(long)]
    mask: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct ExportArgs {
    #[arg(long)]
    data: PathBuf,
    /// Render depth from this checkpoint instead of using stored rasters.
    #[arg(long)]
    ckpt: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Opacity validity threshold for rendered depth.
    #[arg(long, default_value_t = 0.5)]
    tau_op: f64,
    /// Radius outlier filter; 0 disables.
    #[arg(long, default_value_t = 0.0)]
    filter_radius: f64,
    #[arg(long, default_value_t = 8)]
    filter_neighbors: usize,
}

/// Parses and runs; returns the process exit code (0 ok, 1 runtime error,
/// 2 usage error).
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            // clap reports usage problems on stderr with exit code 2 and
            // --help/--version on stdout with exit code 0
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match dispatch(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e:#}");
            1
        }
    }
}

fn load_run_config(cli: &Cli) -> Result<RunConfig> {
    let mut rc: RunConfig = match &cli.config {
        Some(path) => serde_json::from_str(
            &fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?,
        )
        .with_context(|| format!("parsing {}", path.display()))?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        rc.train.seed = seed;
        rc.field.init_seed = seed.wrapping_add(1);
    }
    if let Some(t) = cli.time_limit_s {
        rc.train.time_limit_s = t;
    }
    Ok(rc)
}

fn dispatch(cli: Cli) -> Result<()> {
    let rc = load_run_config(&cli)?;
    match &cli.command {
        Command::Synth(a) => cmd_synth(a, &rc),
        Command::Maskgroup(a) => cmd_maskgroup(a),
        Command::Train(a) => cmd_train(a, &rc),
        Command::Render(a) => cmd_render(a, &rc),
        Command::Eval(a) => cmd_eval(a),
        Command::ExportPly(a) => cmd_export(a, &rc),
    }
}

fn cmd_synth(a: &SynthArgs, rc: &RunConfig) -> Result<()> {
    let scene = match &a.scene {
        Some(path) => SyntheticScene::from_json(&fs::read_to_string(path)?)?,
        None => SyntheticScene::transparent_sphere_on_table(),
    };
    let ds = generate_dataset(
        &scene,
        a.views,
        a.width,
        a.height,
        a.channels,
        rc.train.seed,
        &a.out,
    )?;
    println!(
        "wrote {} views ({}x{}, {} channels) to {}",
        ds.frames.len(),
        a.width,
        a.height,
        a.channels,
        a.out.display()
    );
    Ok(())
}

fn cmd_maskgroup(a: &MaskgroupArgs) -> Result<()> {
    let mut entries: Vec<PathBuf> = fs::read_dir(&a.input)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().map_or(false, |x| x == "png"))
        .collect();
    entries.sort();
    if entries.is_empty() {
        bail!("no PNG masks under {}", a.input.display());
    }
    let mut masks = Vec::new();
    let mut dims = None;
    for path in &entries {
        let gray = load_mask(path)?;
        dims.get_or_insert((gray.width, gray.height));
        let raster = Grid2::from_vec(
            gray.width,
            gray.height,
            gray.data.iter().map(|&v| v >= 0.5).collect(),
        );
        if raster.data.iter().any(|&b| b) {
            masks.push(InstanceMask::from_raster(raster)?);
        }
    }
    let (w, h) = dims.unwrap();
    let hier = build_hierarchy(masks, a.channels, a.min_area)?;
    let channels = rasterize_channels(&hier, w, h)?;
    fs::create_dir_all(&a.out)?;
    for (k, c) in channels.iter().enumerate() {
        save_mask(&a.out.join(format!("channel_{k}.png")), c)?;
    }
    println!(
        "grouped {} masks into {} sets ({} channels) under {}",
        hier.masks.len(),
        hier.sets.len(),
        a.channels,
        a.out.display()
    );
    Ok(())
}

fn subset_indices(total: usize, wanted: usize) -> Vec<usize> {
    let wanted = wanted.min(total).max(1);
    (0..wanted).map(|i| i * total / wanted).collect()
}

fn cmd_train(a: &TrainArgs, rc: &RunConfig) -> Result<()> {
    let mut ds = SceneDataset::load(&a.data)?;
    if let Some(k) = a.views {
        ds = ds.subset(&subset_indices(ds.frames.len(), k));
    }
    let toggles = AblationToggles {
        semantic: !a.no_semantic,
        freq_enc: !a.no_freq,
        depth_sup: !a.no_depth,
        spec_split: !a.no_spec,
    };
    let (field_cfg, weights) = toggles.apply(&rc.field, &rc.weights);
    let mut cfg = rc.train;
    if a.serial {
        cfg.parallel = false;
    }
    let field = Field::new(field_cfg.clone())?;
    let outcome = train(&ds, &field, &cfg, &weights)?;

    outcome.params.save(&a.out, field_cfg.digest())?;
    let sidecar = RunConfig { field: field_cfg.clone(), train: cfg, weights };
    fs::write(
        a.out.with_extension("config.json"),
        serde_json::to_string_pretty(&sidecar)?,
    )?;
    if let Some(log_path) = &a.log {
        let mut f = std::io::BufWriter::new(fs::File::create(log_path)?);
        for rec in &outcome.log {
            writeln!(f, "{}", serde_json::to_string(rec)?)?;
        }
    }
    println!(
        "trained {} steps in {:.2}s ({} views); checkpoint {}{}",
        outcome.steps,
        outcome.wall_s,
        ds.frames.len(),
        a.out.display(),
        if outcome.aborted_nan { " [aborted on non-finite loss]" } else { "" }
    );
    if a.eval {
        let region = a.mask_only.map(|chan| {
            ds.frames
                .iter()
                .map(|f| {
                    let m = &f.masks[chan];
                    Grid2::from_vec(m.width, m.height, m.data.iter().map(|&v| v >= 0.5).collect())
                })
                .collect::<Vec<_>>()
        });
        let metrics = evaluate_dataset(
            &field,
            &outcome.params,
            &ds,
            &cfg.render,
            Some(&outcome.occupancy),
            cfg.seed,
            cfg.parallel,
            region.as_deref(),
        )?;
        println!("{}", serde_json::to_string(&metrics)?);
    }
    Ok(())
}

fn load_checkpoint(ckpt: &Path, rc: &RunConfig) -> Result<(Field, ParameterStore, RunConfig)> {
    // prefer the sidecar written at training time
    let sidecar = ckpt.with_extension("config.json");
    let rc = if sidecar.exists() {
        serde_json::from_str(&fs::read_to_string(&sidecar)?)?
    } else {
        rc.clone()
    };
    let field = Field::new(rc.field.clone())?;
    let mut params = field.init_params();
    params.load_into(ckpt, rc.field.digest())?;
    Ok((field, params, rc))
}

fn cmd_render(a: &RenderArgs, rc: &RunConfig) -> Result<()> {
    let ds = SceneDataset::load(&a.data)?;
    let (field, params, rc) = load_checkpoint(&a.ckpt, rc)?;
    let frame = ds
        .frames
        .get(a.view)
        .ok_or_else(|| Error::domain(format!("view {} out of range", a.view)))?;
    let cam = ds.camera(frame);
    let rendered = render_image(
        &cam,
        &field,
        &params.values,
        &ds.aabb,
        &rc.train.render,
        None,
        rc.train.seed,
        rc.train.parallel,
    )?;
    fs::create_dir_all(&a.out)?;
    save_rgb8(&a.out.join("color.png"), &rendered.color)?;
    save_depth_mm(&a.out.join("depth.png"), &rendered.depth)?;
    for (k, sem) in rendered.semantics.iter().enumerate() {
        save_mask(&a.out.join(format!("sem_chan{k}.png")), sem)?;
        save_f32_sidecar(&a.out.join(format!("sem_chan{k}.bin")), sem)?;
    }
    println!("rendered view {} to {}", a.view, a.out.display());
    Ok(())
}

fn collect_rasters(path: &Path) -> Result<Vec<PathBuf>> {
    if path.is_dir() {
        let mut v: Vec<PathBuf> = fs::read_dir(path)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().map_or(false, |x| x == "png"))
            .collect();
        v.sort();
        if v.is_empty() {
            bail!("no PNG rasters under {}", path.display());
        }
        Ok(v)
    } else {
        Ok(vec![path.to_path_buf()])
    }
}

fn cmd_eval(a: &EvalArgs) -> Result<()> {
    let preds = collect_rasters(&a.pred)?;
    let gts = collect_rasters(&a.gt)?;
    if preds.len() != gts.len() {
        bail!("{} predicted rasters vs {} ground-truth rasters", preds.len(), gts.len());
    }
    let masks = match &a.mask {
        Some(m) => Some(collect_rasters(m)?),
        None => None,
    };
    let mut per_frame: Vec<DepthMetrics> = Vec::new();
    for (i, (p, g)) in preds.iter().zip(gts.iter()).enumerate() {
        let pred = load_depth_mm(p)?;
        let gt = load_depth_mm(g)?;
        let mut valid = Grid2::from_vec(
            gt.width,
            gt.height,
            gt.data.iter().map(|&d| d > 0.0).collect(),
        );
        if let Some(masks) = &masks {
            let m = load_mask(&masks[i.min(masks.len() - 1)])?;
            for (v, on) in valid.data.iter_mut().zip(m.data.iter()) {
                *v = *v && *on >= 0.5;
            }
        }
        per_frame.push(compute_metrics(&pred, &gt, &valid)?);
    }
    let m = aggregate_metrics(&per_frame)?;
    println!("{}", serde_json::to_string(&m)?);
    println!("{m}");
    Ok(())
}

fn cmd_export(a: &ExportArgs, rc: &RunConfig) -> Result<()> {
    let ds = SceneDataset::load(&a.data)?;
    let mut points: Vec<ColoredPoint> = Vec::new();
    match &a.ckpt {
        Some(ckpt) => {
            let (field, params, rc) = load_checkpoint(ckpt, rc)?;
            let mut render_cfg = rc.train.render;
            render_cfg.tau_opacity = a.tau_op;
            for (fi, frame) in ds.frames.iter().enumerate() {
                let cam = ds.camera(frame);
                let rendered = render_image(
                    &cam,
                    &field,
                    &params.values,
                    &ds.aabb,
                    &render_cfg,
                    None,
                    rc.train.seed.wrapping_add(fi as u64),
                    rc.train.parallel,
                )?;
                points.extend(unproject_view(&cam, &rendered.depth, &rendered.color, None)?);
            }
        }
        None => {
            for frame in &ds.frames {
                let cam = ds.camera(frame);
                let depth = frame.depth_gt.as_ref().unwrap_or(&frame.depth);
                points.extend(unproject_view(&cam, depth, &frame.rgb, None)?);
            }
        }
    }
    if a.filter_radius > 0.0 {
        points = radius_outlier_filter(&points, a.filter_radius, a.filter_neighbors);
    }
    let n = points.len();
    write_ply(&a.out, &points)?;
    println!("wrote {} points to {}", n, a.out.display());
    Ok(())
}
