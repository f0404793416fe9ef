//! Command-line workflows: fit silhouette bundles, render and export
//! compositions, evaluate against ground truth, generate synthetic scenes,
//! and sweep hyperparameters.

use anyhow::{anyhow, Context, Result};
use clap::{Args, Parser, Subcommand};
use isco::assets::{
    export_mesh, load_bundle, load_composition, save_bundle, save_composition, save_grid,
    SceneBundle,
};
use isco::fitter::{fit_isco, fit_sco, FitConfig, FitError, ProgressEvent};
use isco::metrics::{chamfer_l1, eval_bounds, iou, sample_surface, voxelize};
use isco::render::{render_image_indexed, RenderConfig};
use isco::seeder::{descent_field, eval_grid_density, gaussian_smooth, VoxelGrid};
use isco::sqcore::Composition;
use isco::synthgen::{gen_bundle, GenSpec, ViewPolicy};
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

const EXIT_INVALID_INPUT: u8 = 2;
const EXIT_NUMERIC: u8 = 3;

#[derive(Parser)]
#[command(
    name = "isco",
    about = "Recompose 3D objects as superquadric sets from multi-view silhouettes",
    version
)]
struct Cli {
    /// Worker threads (fallback: ISCO_THREADS, then all cores)
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit a superquadric composition to a scene bundle
    Fit(FitArgs),
    /// Render a composition's silhouettes for the views of a bundle
    Render(RenderArgs),
    /// Evaluate a composition against a ground-truth composition
    Eval(EvalArgs),
    /// Generate a synthetic scene bundle with ground truth
    Gen(GenArgs),
    /// Fit repeatedly while sweeping one hyperparameter, emitting CSV
    Sweep(SweepArgs),
}

#[derive(Args)]
struct FitShared {
    /// Maximum number of superquadrics (paper default 10)
    #[arg(long, default_value_t = 10)]
    k: usize,
    /// Optimization steps per added superquadric (paper default 250)
    #[arg(long, default_value_t = 250)]
    steps: usize,
    /// Rays sampled per view per step (paper default 500)
    #[arg(long, default_value_t = 500)]
    rays: usize,
    /// Ray-march samples per ray
    #[arg(long, default_value_t = 96)]
    samples: usize,
    /// Inside/outside weighting; outside rays weigh lambda (paper default 0.6)
    #[arg(long, default_value_t = 0.6)]
    lambda: f64,
    /// Density slope during optimization
    #[arg(long, default_value_t = 20.0)]
    gamma_opt: f64,
    /// Density slope for final/evaluation renders
    #[arg(long, default_value_t = 150.0)]
    gamma_eval: f64,
    /// Error-grid resolution per axis (paper default 64)
    #[arg(long, default_value_t = 64)]
    grid_n: usize,
    /// Gaussian smoothing of the placement field, in voxels
    #[arg(long, default_value_t = 1.5)]
    smoothing_sigma: f64,
    /// Cosine schedule start (paper default 0.01); scaled by
    /// sqrt(rays/500) when the ray budget changes
    #[arg(long, default_value_t = 0.01)]
    lr_start: f64,
    /// Cosine schedule end (paper default 0.001)
    #[arg(long, default_value_t = 0.001)]
    lr_end: f64,
    /// Stop adding superquadrics when the smoothed placement peak falls
    /// below this (0 disables)
    #[arg(long, default_value_t = 0.0)]
    early_stop: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

impl FitShared {
    fn config(&self) -> FitConfig {
        // learning rates are calibrated to the 500-ray budget; Adam is
        // insensitive to gradient scale but not to gradient noise, so scale
        // with the square root of the batch change
        let lr_scale = (self.rays as f64 / 500.0).sqrt();
        FitConfig {
            max_superquadrics: self.k,
            steps_per_iter: self.steps,
            rays_per_view: self.rays,
            samples_per_ray: self.samples,
            lambda: self.lambda,
            gamma_opt: self.gamma_opt,
            gamma_eval: self.gamma_eval,
            grid_n: self.grid_n,
            smoothing_sigma: self.smoothing_sigma,
            lr_start: self.lr_start * lr_scale,
            lr_end: self.lr_end * lr_scale,
            early_stop_threshold: self.early_stop,
            seed: self.seed,
            ..FitConfig::default()
        }
    }
}

#[derive(Args)]
struct FitArgs {
    /// Bundle directory containing scene.json
    bundle: PathBuf,
    /// Output directory for composition, snapshots, and trace
    #[arg(long)]
    out: PathBuf,
    /// Use the non-iterative baseline (all superquadrics at once)
    #[arg(long)]
    sco: bool,
    /// Dump placement/density voxel grids for external visualization
    #[arg(long)]
    dump_grids: bool,
    #[command(flatten)]
    shared: FitShared,
}

#[derive(Args)]
struct RenderArgs {
    /// Composition file to render
    composition: PathBuf,
    /// Bundle directory providing cameras (masks are ignored)
    bundle: PathBuf,
    /// Output directory for PNG renders
    #[arg(long)]
    out: PathBuf,
    /// Also export an OBJ mesh next to the images
    #[arg(long)]
    mesh: bool,
    /// Tessellation density for --mesh
    #[arg(long, default_value_t = 32)]
    mesh_density: usize,
    #[arg(long, default_value_t = 150.0)]
    gamma: f64,
    #[arg(long, default_value_t = 192)]
    samples: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct EvalArgs {
    /// Fitted composition file
    composition: PathBuf,
    /// Ground-truth composition file
    ground_truth: PathBuf,
    /// Occupancy-grid resolution per axis
    #[arg(long, default_value_t = 64)]
    m: usize,
    /// Surface points per shape for the Chamfer distance (paper: 100k)
    #[arg(long, default_value_t = 100_000)]
    points: usize,
    /// Scene radius defining the evaluation volume
    #[arg(long, default_value_t = 1.0)]
    radius: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Report file (JSON); also printed to stdout
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct GenArgs {
    /// Output bundle directory
    #[arg(long)]
    out: PathBuf,
    /// Number of views (paper presets: 4, 8, 16)
    #[arg(long, default_value_t = 16)]
    views: usize,
    /// Number of primitives (fixed count)
    #[arg(long, default_value_t = 3)]
    count: usize,
    /// Restrict viewpoints to a spherical cap of this polar angle (degrees)
    #[arg(long)]
    cap_deg: Option<f64>,
    /// Per-pixel mask flip probability
    #[arg(long, default_value_t = 0.0)]
    noise: f64,
    /// Square image size in pixels
    #[arg(long, default_value_t = 128)]
    size: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct SweepArgs {
    /// Bundle directory (with gt_composition.json for metrics)
    bundle: PathBuf,
    /// Hyperparameter to sweep
    #[arg(long, value_parser = ["lambda", "views", "k"])]
    param: String,
    /// Comma-separated values
    #[arg(long, value_delimiter = ',')]
    values: Vec<f64>,
    /// Output CSV path
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    shared: FitShared,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let threads = cli.threads.or_else(|| {
        std::env::var("ISCO_THREADS").ok().and_then(|v| v.parse().ok())
    });
    if let Some(n) = threads {
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    let result = match cli.command {
        Command::Fit(args) => cmd_fit(args),
        Command::Render(args) => cmd_render(args),
        Command::Eval(args) => cmd_eval(args),
        Command::Gen(args) => cmd_gen(args),
        Command::Sweep(args) => cmd_sweep(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {:#}", e.error);
            ExitCode::from(e.code)
        }
    }
}

struct CliError {
    code: u8,
    error: anyhow::Error,
}

type CliResult = std::result::Result<(), CliError>;

fn invalid_input(error: anyhow::Error) -> CliError {
    CliError { code: EXIT_INVALID_INPUT, error }
}

trait InputExt<T> {
    fn or_invalid(self) -> std::result::Result<T, CliError>;
}

impl<T, E: Into<anyhow::Error>> InputExt<T> for std::result::Result<T, E> {
    fn or_invalid(self) -> std::result::Result<T, CliError> {
        self.map_err(|e| invalid_input(e.into()))
    }
}

fn classify_fit_error(e: FitError) -> CliError {
    match e {
        FitError::Gradient(_) => CliError { code: EXIT_NUMERIC, error: e.into() },
        _ => invalid_input(e.into()),
    }
}

fn run_fit(
    bundle: &SceneBundle,
    cfg: &FitConfig,
    sco: bool,
    trace_path: Option<&Path>,
) -> std::result::Result<(Composition, isco::fitter::FitTrace), CliError> {
    let mut trace_file = match trace_path {
        Some(p) => Some(BufWriter::new(
            File::create(p).with_context(|| format!("creating {}", p.display())).or_invalid()?,
        )),
        None => None,
    };
    let total_steps = cfg.max_superquadrics * cfg.steps_per_iter;
    let mut done = 0usize;
    let started = Instant::now();
    let mut on_progress = |ev: &ProgressEvent| {
        if let Some(f) = trace_file.as_mut() {
            let line = serde_json::to_string(ev).expect("events serialize");
            let _ = writeln!(f, "{line}");
        }
        done += 1;
        if done % 250 == 0 || done == total_steps {
            eprintln!(
                "[{:6.1?}] iter {} step {:4} loss {:10.3} lr {:.5}",
                started.elapsed(),
                ev.iter,
                ev.step,
                ev.loss,
                ev.lr
            );
        }
    };
    let out = if sco {
        fit_sco(bundle, cfg, &mut on_progress)
    } else {
        fit_isco(bundle, cfg, &mut on_progress)
    };
    out.map_err(classify_fit_error)
}

fn cmd_fit(args: FitArgs) -> CliResult {
    let bundle = load_bundle(&args.bundle).or_invalid()?;
    let cfg = args.shared.config();
    fs::create_dir_all(&args.out).or_invalid()?;

    if args.dump_grids {
        let grid = VoxelGrid::enclosing(&bundle.bounds, cfg.grid_n);
        let empty = eval_grid_density(&Composition::new(), grid, cfg.gamma_opt);
        save_grid(&empty, &args.out.join("grid_empty_density")).or_invalid()?;
    }

    let (comp, trace) =
        run_fit(&bundle, &cfg, args.sco, Some(&args.out.join("trace.jsonl")))?;
    save_composition(&comp, &args.out.join("composition.json")).or_invalid()?;
    for (i, it) in trace.iterations.iter().enumerate() {
        let path = args.out.join(format!("snapshot_{:02}.json", i + 1));
        save_composition(&it.snapshot, &path).or_invalid()?;
    }
    if args.dump_grids {
        let grid = VoxelGrid::enclosing(&bundle.bounds, cfg.grid_n);
        let density = eval_grid_density(&comp, grid, cfg.gamma_eval);
        save_grid(&density, &args.out.join("grid_final_density")).or_invalid()?;
        let smoothed = gaussian_smooth(&descent_field(&density), cfg.smoothing_sigma);
        save_grid(&smoothed, &args.out.join("grid_final_placement")).or_invalid()?;
    }
    eprintln!(
        "fit complete: {} superquadrics ({} iterations{})",
        comp.len(),
        trace.iterations.len(),
        if trace.stopped_early { ", stopped early" } else { "" }
    );
    Ok(())
}

fn cmd_render(args: RenderArgs) -> CliResult {
    let comp = load_composition(&args.composition).or_invalid()?;
    let bundle = load_bundle(&args.bundle).or_invalid()?;
    fs::create_dir_all(&args.out).or_invalid()?;
    let cfg = RenderConfig { gamma: args.gamma, samples_per_ray: args.samples, seed: args.seed };
    for (vi, view) in bundle.views.iter().enumerate() {
        let raster = render_image_indexed(view, vi as u32, &comp, &cfg, &bundle.bounds);
        let mut img = image_from_raster(&raster, view.width, view.height);
        let path = args.out.join(format!("render_{vi:03}.png"));
        img.save_path(&path).or_invalid()?;
    }
    if args.mesh {
        if comp.is_empty() {
            return Err(invalid_input(anyhow!("--mesh requires a non-empty composition")));
        }
        export_mesh(&comp, &args.out.join("composition.obj"), args.mesh_density).or_invalid()?;
    }
    Ok(())
}

// Minimal 8-bit grayscale PNG writer facade over the image crate used by
// the assets module, kept here so the CLI does not need its own image dep.
struct Gray8 {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

impl Gray8 {
    fn save_path(&mut self, path: &Path) -> Result<()> {
        isco::assets::save_gray8(&self.data, self.width, self.height, path)
            .map_err(|e| anyhow!("{e}"))
    }
}

fn image_from_raster(raster: &[f64], width: usize, height: usize) -> Gray8 {
    Gray8 {
        width,
        height,
        data: raster.iter().map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8).collect(),
    }
}

#[derive(serde::Serialize)]
struct EvalReport {
    iou: f64,
    chamfer_l1: Option<f64>,
    per_primitive_count: usize,
}

fn cmd_eval(args: EvalArgs) -> CliResult {
    let fit = load_composition(&args.composition).or_invalid()?;
    let truth = load_composition(&args.ground_truth).or_invalid()?;
    let scene = isco::camrays::SceneBounds { center: [0.0; 3], radius: args.radius };
    let (center, half) = eval_bounds(&scene);
    let a = voxelize(&fit, args.m, center, half);
    let b = voxelize(&truth, args.m, center, half);
    let iou_score = iou(&a, &b).or_invalid()?;
    let chamfer = if fit.is_empty() || truth.is_empty() {
        None
    } else {
        let mut rng = rand_seeded(args.seed);
        let pa = sample_surface(&fit, args.points, &mut rng).or_invalid()?;
        let pb = sample_surface(&truth, args.points, &mut rng).or_invalid()?;
        Some(chamfer_l1(&pa, &pb).or_invalid()?)
    };
    let report = EvalReport {
        iou: iou_score,
        chamfer_l1: chamfer,
        per_primitive_count: fit.len(),
    };
    let text = serde_json::to_string_pretty(&report).expect("report serializes");
    println!("{text}");
    if let Some(out) = &args.out {
        fs::write(out, &text).or_invalid()?;
    }
    Ok(())
}

fn rand_seeded(seed: u64) -> rand_chacha::ChaCha8Rng {
    use rand_chacha::rand_core::SeedableRng;
    rand_chacha::ChaCha8Rng::seed_from_u64(seed)
}

fn gen_spec_from(args: &GenArgs) -> GenSpec {
    GenSpec {
        count_min: args.count,
        count_max: args.count,
        view_count: args.views,
        policy: match args.cap_deg {
            Some(deg) => ViewPolicy::Cap { theta_cap_deg: deg },
            None => ViewPolicy::UniformSphere,
        },
        mask_noise: args.noise,
        image_size: args.size,
        seed: args.seed,
        ..GenSpec::default()
    }
}

fn cmd_gen(args: GenArgs) -> CliResult {
    let spec = gen_spec_from(&args);
    spec.validate().map_err(|m| invalid_input(anyhow!(m))).and_then(|()| {
        let (bundle, truth) = gen_bundle(&spec).or_invalid()?;
        save_bundle(&bundle, &args.out).or_invalid()?;
        save_composition(&truth, &args.out.join("gt_composition.json")).or_invalid()?;
        eprintln!(
            "generated {} views of {} primitives into {}",
            bundle.views.len(),
            truth.len(),
            args.out.display()
        );
        Ok(())
    })
}

fn cmd_sweep(args: SweepArgs) -> CliResult {
    let bundle = load_bundle(&args.bundle).or_invalid()?;
    if args.values.is_empty() {
        return Err(invalid_input(anyhow!("--values must not be empty")));
    }
    let gt_path = args.bundle.join("gt_composition.json");
    let truth = if gt_path.exists() {
        Some(load_composition(&gt_path).or_invalid()?)
    } else {
        None
    };
    let mut csv = String::from("value,iou,chamfer,wall_time\n");
    for &value in &args.values {
        let mut cfg = args.shared.config();
        let mut fit_bundle = bundle.clone();
        match args.param.as_str() {
            "lambda" => cfg.lambda = value,
            "k" => cfg.max_superquadrics = value as usize,
            "views" => {
                let v = value as usize;
                if v == 0 || v > bundle.views.len() {
                    return Err(invalid_input(anyhow!(
                        "view count {v} outside 1..={}",
                        bundle.views.len()
                    )));
                }
                fit_bundle.views.truncate(v);
            }
            _ => unreachable!("clap validates the parameter name"),
        }
        let started = Instant::now();
        let (comp, _) = run_fit(&fit_bundle, &cfg, false, None)?;
        let wall = started.elapsed().as_secs_f64();
        let (iou_s, chamfer_s) = match &truth {
            Some(t) => {
                let (center, half) = eval_bounds(&bundle.bounds);
                let a = voxelize(&comp, 64, center, half);
                let b = voxelize(t, 64, center, half);
                let i = iou(&a, &b).or_invalid()?;
                let c = if comp.is_empty() {
                    f64::NAN
                } else {
                    let mut rng = rand_seeded(cfg.seed);
                    let pa = sample_surface(&comp, 20_000, &mut rng).or_invalid()?;
                    let pb = sample_surface(t, 20_000, &mut rng).or_invalid()?;
                    chamfer_l1(&pa, &pb).or_invalid()?
                };
                (format!("{i:.6}"), format!("{c:.6}"))
            }
            None => (String::new(), String::new()),
        };
        csv.push_str(&format!("{value},{iou_s},{chamfer_s},{wall:.2}\n"));
        eprintln!("sweep {}={value}: iou {iou_s} wall {wall:.1}s", args.param);
    }
    fs::write(&args.out, csv).or_invalid()?;
    Ok(())
}
