//! The outer fitting loops: iterative (one primitive per iteration) and
//! joint (all primitives at once), with Adam and a cosine learning-rate
//! schedule spanning the whole run.
//!
//! Each iteration bakes the current composition into a voxel grid, estimates
//! where density is missing by propagating silhouette errors onto the grid,
//! seeds a sphere at the strongest smoothed peak, and then jointly refines
//! every parameter of every primitive against freshly importance-sampled ray
//! batches. Adam moments of existing primitives survive across iterations;
//! a new primitive starts with zero moments.

use crate::assets::SceneBundle;
use crate::grad::{loss_and_grad_detailed, GradError, ParamGradient};
use crate::objective::{RaySampler, MASK_EPS};
use crate::render::RenderConfig;
use crate::seeder::{
    eval_grid_density, grid_error_gradient, inside_rays, smoothed_descent_peak, sphere_at_peak,
    top_peaks, VoxelGrid,
};
use crate::sqcore::{Composition, SqBounds, SuperquadricParams, RAW_LEN};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum FitError {
    #[error("invalid fit configuration: {0}")]
    InvalidConfig(String),
    #[error("no view contains any silhouette-interior pixel")]
    EmptySilhouettes,
    #[error(transparent)]
    Gradient(#[from] GradError),
}

/// All hyperparameters of a fit. Defaults reproduce the reference
/// configuration: 128x128 images, 500 rays per view, 250 steps per
/// iteration, at most 10 superquadrics, lambda 0.6, grid resolution 64,
/// cosine schedule from 0.01 to 0.001.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitConfig {
    pub max_superquadrics: usize,
    pub steps_per_iter: usize,
    pub rays_per_view: usize,
    pub samples_per_ray: usize,
    pub image_size: usize,
    pub lambda: f64,
    pub gamma_opt: f64,
    pub gamma_eval: f64,
    pub grid_n: usize,
    pub smoothing_sigma: f64,
    pub lr_start: f64,
    pub lr_end: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub early_stop_threshold: f64,
    /// Fraction of ray draws reserved for uniform exploration; the rest
    /// follow the importance table.
    pub uniform_frac: f64,
    pub seed: u64,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            max_superquadrics: 10,
            steps_per_iter: 250,
            rays_per_view: 500,
            samples_per_ray: 96,
            image_size: 128,
            lambda: 0.6,
            gamma_opt: 20.0,
            gamma_eval: 150.0,
            grid_n: 64,
            smoothing_sigma: 1.5,
            lr_start: 0.01,
            lr_end: 0.001,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            early_stop_threshold: 0.0,
            uniform_frac: 0.25,
            seed: 0,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<(), FitError> {
        let fail = |m: &str| Err(FitError::InvalidConfig(m.into()));
        if self.max_superquadrics < 1 {
            return fail("max_superquadrics must be at least 1");
        }
        if !(self.lr_start >= self.lr_end && self.lr_end > 0.0) {
            return fail("learning rates must satisfy lr_start >= lr_end > 0");
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return fail("lambda must be in [0, 1]");
        }
        if self.steps_per_iter < 1 || self.rays_per_view < 1 {
            return fail("step and ray budgets must be at least 1");
        }
        if self.samples_per_ray < 2 {
            return fail("samples_per_ray must be at least 2");
        }
        if self.grid_n < 2 {
            return fail("grid_n must be at least 2");
        }
        if !(self.gamma_opt > 0.0 && self.gamma_eval > 0.0) {
            return fail("gamma values must be positive");
        }
        Ok(())
    }
}

/// Cosine anneal from `lr_start` (step 0) to `lr_end` (step = total_steps).
pub fn cosine_lr(step: usize, total_steps: usize, lr_start: f64, lr_end: f64) -> f64 {
    debug_assert!(step <= total_steps);
    let phase = std::f64::consts::PI * step as f64 / total_steps as f64;
    lr_end + 0.5 * (lr_start - lr_end) * (1.0 + phase.cos())
}

/// Adam with bias correction over per-primitive raw vectors. State rows are
/// aligned with composition order; `extend` adds zeroed moments for a newly
/// appended primitive.
#[derive(Debug, Clone)]
pub struct AdamState {
    m: Vec<[f64; RAW_LEN]>,
    v: Vec<[f64; RAW_LEN]>,
    t: u64,
    beta1: f64,
    beta2: f64,
    eps: f64,
}

impl AdamState {
    pub fn new(beta1: f64, beta2: f64, eps: f64) -> Self {
        Self { m: Vec::new(), v: Vec::new(), t: 0, beta1, beta2, eps }
    }

    pub fn from_config(cfg: &FitConfig) -> Self {
        Self::new(cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps)
    }

    /// Zeroed moments for one more primitive.
    pub fn extend(&mut self) {
        self.m.push([0.0; RAW_LEN]);
        self.v.push([0.0; RAW_LEN]);
    }

    /// One update over raw parameter rows.
    pub fn step_raw(&mut self, raws: &mut [[f64; RAW_LEN]], grads: &[[f64; RAW_LEN]], lr: f64) {
        assert_eq!(raws.len(), self.m.len(), "state rows must match parameters");
        assert_eq!(grads.len(), raws.len());
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for ((raw, grad), (m, v)) in raws
            .iter_mut()
            .zip(grads.iter())
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            for i in 0..RAW_LEN {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * grad[i];
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * grad[i] * grad[i];
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                raw[i] -= lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
    }

    /// One update applied directly to a composition.
    pub fn step(&mut self, comp: &mut Composition, grad: &ParamGradient, lr: f64) {
        let mut raws: Vec<[f64; RAW_LEN]> = comp.iter().map(|p| p.raw).collect();
        self.step_raw(&mut raws, &grad.per_primitive, lr);
        for (p, raw) in comp.items.iter_mut().zip(raws) {
            p.raw = raw;
        }
    }
}

/// One completed iteration: the composition snapshot after its optimization
/// block, the per-step losses, and the peak of the smoothed placement field
/// measured at initialization time.
#[derive(Debug, Clone)]
pub struct IterationTrace {
    pub snapshot: Composition,
    pub step_losses: Vec<f64>,
    pub error_peak: f64,
}

/// Fit history. For the iterative loop, snapshot `k` holds exactly `k + 1`
/// primitives and earlier primitives keep their identity and order; the
/// joint baseline snapshots the full set after every optimization block.
#[derive(Debug, Clone, Default)]
pub struct FitTrace {
    pub iterations: Vec<IterationTrace>,
    /// True when the loop stopped because the placement field fell below
    /// the early-stop threshold (or vanished entirely).
    pub stopped_early: bool,
}

/// Progress record emitted once per optimization step.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct ProgressEvent {
    pub iter: usize,
    pub step: usize,
    pub loss: f64,
    pub lr: f64,
}

const TAG_GRID: u64 = 0x67726964; // distinct seed streams per purpose
const TAG_RAYS: u64 = 0x72617973;
const TAG_RENDER: u64 = 0x726e6472;

fn derive_seed(master: u64, tag: u64, index: u64) -> u64 {
    fn mix(mut z: u64) -> u64 {
        z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^ (z >> 31)
    }
    mix(mix(master ^ mix(tag)) ^ index)
}

fn check_silhouettes(bundle: &SceneBundle) -> Result<(), FitError> {
    let any_inside = bundle
        .views
        .iter()
        .any(|v| v.silhouette.iter().any(|&p| p >= MASK_EPS));
    if any_inside {
        Ok(())
    } else {
        Err(FitError::EmptySilhouettes)
    }
}

/// Smoothed placement field from the current composition's rendering errors.
fn placement_field(
    bundle: &SceneBundle,
    comp: &Composition,
    cfg: &FitConfig,
    iteration: u64,
) -> (VoxelGrid, f64) {
    let grid = VoxelGrid::enclosing(&bundle.bounds, cfg.grid_n);
    let grid = eval_grid_density(comp, grid, cfg.gamma_opt);
    let seed = derive_seed(cfg.seed, TAG_GRID, iteration);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rays = inside_rays(&bundle.views, cfg.rays_per_view, &bundle.bounds, &mut rng);
    let err = grid_error_gradient(&grid, &rays, cfg.samples_per_ray, seed);
    smoothed_descent_peak(&err, cfg.smoothing_sigma)
}

/// Density slope at a step of one optimization block: log-linear ramp from
/// `gamma_opt` to `gamma_eval`. Smooth early gradients let primitives
/// travel and grow; the sharp end removes the soft-halo bias that would
/// otherwise shrink fitted surfaces relative to binary masks.
fn gamma_at(cfg: &FitConfig, step: usize, steps: usize) -> f64 {
    if steps <= 1 {
        return cfg.gamma_opt;
    }
    let p = step as f64 / (steps - 1) as f64;
    (cfg.gamma_opt.ln() + p * (cfg.gamma_eval.ln() - cfg.gamma_opt.ln())).exp()
}

/// Shared inner loop: `steps` Adam updates of all current parameters against
/// importance-sampled ray batches, starting at global step `step_offset` of
/// a `total_steps`-long schedule.
#[allow(clippy::too_many_arguments)]
fn optimize_block(
    bundle: &SceneBundle,
    comp: &mut Composition,
    adam: &mut AdamState,
    sampler: &mut RaySampler,
    ray_rng: &mut ChaCha8Rng,
    cfg: &FitConfig,
    iter_label: usize,
    step_offset: usize,
    steps: usize,
    total_steps: usize,
    on_progress: &mut dyn FnMut(&ProgressEvent),
) -> Result<Vec<f64>, FitError> {
    let mut losses = Vec::with_capacity(steps);
    for step in 0..steps {
        let gstep = step_offset + step;
        let lr = cosine_lr(gstep, total_steps, cfg.lr_start, cfg.lr_end);
        let batch = sampler.sample_rays(&bundle.views, cfg.rays_per_view, &bundle.bounds, ray_rng);
        let render_cfg = RenderConfig {
            gamma: gamma_at(cfg, step, steps),
            samples_per_ray: cfg.samples_per_ray,
            seed: derive_seed(cfg.seed, TAG_RENDER, gstep as u64),
        };
        let (loss, grad, errs) = loss_and_grad_detailed(&batch, comp, &render_cfg, cfg.lambda)?;
        adam.step(comp, &grad, lr);
        sampler.record_losses(&batch, &errs);
        on_progress(&ProgressEvent { iter: iter_label, step, loss, lr });
        losses.push(loss);
    }
    Ok(losses)
}

/// Iterative fit: up to `max_superquadrics` iterations of
/// initialize-then-optimize, refining all parameters jointly each step.
pub fn fit_isco(
    bundle: &SceneBundle,
    cfg: &FitConfig,
    on_progress: &mut dyn FnMut(&ProgressEvent),
) -> Result<(Composition, FitTrace), FitError> {
    cfg.validate()?;
    check_silhouettes(bundle)?;
    let sq_bounds = SqBounds::for_scene_radius(bundle.bounds.radius);
    let mut comp = Composition::new();
    let mut adam = AdamState::from_config(cfg);
    let mut sampler = RaySampler::new(&bundle.views).with_uniform_frac(cfg.uniform_frac);
    let mut ray_rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, TAG_RAYS, 0));
    let total_steps = cfg.max_superquadrics * cfg.steps_per_iter;
    let mut trace = FitTrace::default();

    for k in 1..=cfg.max_superquadrics {
        let (field, peak) = placement_field(bundle, &comp, cfg, k as u64);
        if peak <= cfg.early_stop_threshold.max(1e-12) {
            trace.stopped_early = true;
            break;
        }
        match sphere_at_peak(&field, bundle.bounds.radius, sq_bounds) {
            Ok(p) => {
                comp.push(p);
                adam.extend();
            }
            Err(_) => {
                trace.stopped_early = true;
                break;
            }
        }
        let losses = optimize_block(
            bundle,
            &mut comp,
            &mut adam,
            &mut sampler,
            &mut ray_rng,
            cfg,
            k,
            (k - 1) * cfg.steps_per_iter,
            cfg.steps_per_iter,
            total_steps,
            on_progress,
        )?;
        trace.iterations.push(IterationTrace {
            snapshot: comp.clone(),
            step_losses: losses,
            error_peak: peak,
        });
    }
    Ok((comp, trace))
}

/// Joint baseline: all primitives placed at once from the empty-scene error
/// field (greatest smoothed peaks with non-maximum suppression of radius
/// `2 * smoothing_sigma` voxels), then optimized together for the same total
/// step budget.
pub fn fit_sco(
    bundle: &SceneBundle,
    cfg: &FitConfig,
    on_progress: &mut dyn FnMut(&ProgressEvent),
) -> Result<(Composition, FitTrace), FitError> {
    cfg.validate()?;
    check_silhouettes(bundle)?;
    let sq_bounds = SqBounds::for_scene_radius(bundle.bounds.radius);
    let (field, peak) = placement_field(bundle, &Composition::new(), cfg, 1);
    let mut trace = FitTrace::default();
    if peak <= cfg.early_stop_threshold.max(1e-12) {
        trace.stopped_early = true;
        return Ok((Composition::new(), trace));
    }
    let centers = top_peaks(&field, cfg.max_superquadrics, 2.0 * cfg.smoothing_sigma);
    let mut comp: Composition = centers
        .into_iter()
        .map(|c| {
            SuperquadricParams::sphere(c, 0.1 * bundle.bounds.radius, sq_bounds)
                .expect("seed radius is above alpha_min")
        })
        .collect();
    let mut adam = AdamState::from_config(cfg);
    for _ in 0..comp.len() {
        adam.extend();
    }
    let mut sampler = RaySampler::new(&bundle.views).with_uniform_frac(cfg.uniform_frac);
    let mut ray_rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, TAG_RAYS, 0));
    let total_steps = cfg.max_superquadrics * cfg.steps_per_iter;
    for k in 1..=cfg.max_superquadrics {
        let losses = optimize_block(
            bundle,
            &mut comp,
            &mut adam,
            &mut sampler,
            &mut ray_rng,
            cfg,
            k,
            (k - 1) * cfg.steps_per_iter,
            cfg.steps_per_iter,
            total_steps,
            on_progress,
        )?;
        trace.iterations.push(IterationTrace {
            snapshot: comp.clone(),
            step_losses: losses,
            error_peak: peak,
        });
    }
    Ok((comp, trace))
}
