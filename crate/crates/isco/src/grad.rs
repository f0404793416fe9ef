//! Exact gradients of the batch loss with respect to every unconstrained
//! superquadric parameter, plus a finite-difference oracle.
//!
//! Each primitive's render depends only on its own 11 raw parameters, so an
//! 11-lane forward-mode pass per (ray, primitive) carries the full exact
//! derivative of the discretized estimator — including the stratified
//! sampling, the reference-width normalization and the density cutoff, which
//! are all part of the function being differentiated. The min-clamp of the
//! composition takes sub-gradient 0 on the clamped branch and 1 otherwise;
//! an exact tie uses the unclamped branch.

use crate::dual::Dual11;
use crate::objective::{ray_weight, weighted_loss, RayBatch};
use crate::render::{march_primitive, ray_jitter, ray_rng, RenderConfig};
use crate::sqcore::{density_cutoff_ratio, Composition, Geometry, RAW_LEN};
use rayon::prelude::*;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum GradError {
    #[error("non-finite gradient entry (primitive {primitive}, raw index {index})")]
    NonFiniteGradient { primitive: usize, index: usize },
}

/// Per-primitive loss gradients, aligned with composition order.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamGradient {
    pub per_primitive: Vec<[f64; RAW_LEN]>,
}

impl ParamGradient {
    pub fn zeros(n: usize) -> Self {
        Self { per_primitive: vec![[0.0; RAW_LEN]; n] }
    }

    pub fn len(&self) -> usize {
        self.per_primitive.len()
    }

    pub fn is_empty(&self) -> bool {
        self.per_primitive.is_empty()
    }

    /// Largest absolute entry.
    pub fn max_abs(&self) -> f64 {
        self.per_primitive
            .iter()
            .flat_map(|g| g.iter())
            .fold(0.0_f64, |m, &v| m.max(v.abs()))
    }

    fn add_assign(&mut self, other: &ParamGradient) {
        for (a, b) in self.per_primitive.iter_mut().zip(other.per_primitive.iter()) {
            for i in 0..RAW_LEN {
                a[i] += b[i];
            }
        }
    }

    fn check_finite(&self) -> Result<(), GradError> {
        for (primitive, g) in self.per_primitive.iter().enumerate() {
            for (index, v) in g.iter().enumerate() {
                if !v.is_finite() {
                    return Err(GradError::NonFiniteGradient { primitive, index });
                }
            }
        }
        Ok(())
    }
}

/// Loss plus gradient plus per-ray squared errors (the latter feed the
/// importance sampler).
pub(crate) fn loss_and_grad_detailed(
    batch: &RayBatch,
    s: &Composition,
    cfg: &RenderConfig,
    lambda: f64,
) -> Result<(f64, ParamGradient, Vec<f64>), GradError> {
    let n_prims = s.len();
    if batch.is_empty() || n_prims == 0 {
        return Ok((
            weighted_loss(batch, s, cfg, lambda),
            ParamGradient::zeros(n_prims),
            vec![0.0; batch.len()],
        ));
    }

    // One seeded-tangent geometry per primitive, shared across all rays.
    let geoms: Vec<(Geometry<Dual11>, f64)> = s
        .iter()
        .map(|p| {
            (
                Geometry::<Dual11>::prepare_seeded(p),
                density_cutoff_ratio(cfg.gamma, p.bounds),
            )
        })
        .collect();

    // Chunked so work parallelizes while the final reduction stays in a
    // fixed order (bit-identical results regardless of scheduling).
    const CHUNK: usize = 64;
    let partials: Vec<(ParamGradient, Vec<f64>)> = batch
        .rays
        .par_chunks(CHUNK)
        .map(|chunk| {
            let mut grad = ParamGradient::zeros(n_prims);
            let mut errs = Vec::with_capacity(chunk.len());
            let mut duals: Vec<Dual11> = Vec::with_capacity(n_prims);
            for br in chunk {
                let mut rng = ray_rng(cfg.seed, br.key());
                let jitter = ray_jitter(&br.ray, cfg.samples_per_ray, &mut rng);
                duals.clear();
                let mut sum = 0.0;
                for (geom, cutoff) in &geoms {
                    let d = march_primitive(&br.ray, &jitter, geom, *cutoff, cfg.gamma);
                    sum += d.v;
                    duals.push(d);
                }
                let clamped = sum > 1.0;
                let d_total = if clamped { 1.0 } else { sum };
                let resid = d_total - br.target;
                errs.push(resid * resid);
                if !clamped {
                    let scale = 2.0 * ray_weight(br.target, lambda) * br.importance * resid;
                    for (g, d) in grad.per_primitive.iter_mut().zip(duals.iter()) {
                        for i in 0..RAW_LEN {
                            g[i] += scale * d.d[i];
                        }
                    }
                }
            }
            (grad, errs)
        })
        .collect();

    let mut grad = ParamGradient::zeros(n_prims);
    let mut errs = Vec::with_capacity(batch.len());
    for (g, e) in partials {
        grad.add_assign(&g);
        errs.extend(e);
    }
    // per-ray accumulation in batch order, the exact float sequence of
    // objective::weighted_loss
    let loss = batch
        .rays
        .iter()
        .zip(errs.iter())
        .map(|(br, &r2)| (ray_weight(br.target, lambda) * br.importance) * r2)
        .sum();
    grad.check_finite()?;
    Ok((loss, grad, errs))
}

/// Weighted loss over the batch and its exact gradient with respect to all
/// raw parameters of all primitives.
pub fn loss_and_grad(
    batch: &RayBatch,
    s: &Composition,
    cfg: &RenderConfig,
    lambda: f64,
) -> Result<(f64, ParamGradient), GradError> {
    loss_and_grad_detailed(batch, s, cfg, lambda).map(|(l, g, _)| (l, g))
}

/// Compare the analytic gradient against finite differences of the forward
/// loss. Returns the maximum relative error over entries large enough for
/// the difference quotient to resolve; an empty batch is 0.
///
/// The oracle is a Richardson-extrapolated central difference,
/// `(4 D(h/2) - D(h)) / 3`, anchored at the given step: gradient entries
/// can nearly cancel across rays, which amplifies the plain O(h^2)
/// truncation of each ray's contribution beyond the comparison tolerance
/// even for an exact gradient. Entries near the quotient's rounding floor
/// `eps * |loss| / h` carry no signal at the 1e-4 scale and are skipped
/// (the cutoff never drops below the absolute floor of 1e-8).
pub fn fd_check(
    s: &Composition,
    batch: &RayBatch,
    cfg: &RenderConfig,
    lambda: f64,
    h: f64,
) -> Result<f64, GradError> {
    assert!(h > 0.0);
    if batch.is_empty() {
        return Ok(0.0);
    }
    let (loss, analytic) = loss_and_grad(batch, s, cfg, lambda)?;
    let noise_floor = f64::EPSILON * loss.abs().max(1.0) / (2.0 * h);
    let skip_below = (noise_floor / 1e-4 * 8.0).max(1e-8);
    let mut max_rel = 0.0_f64;
    let mut eval = |pi: usize, i: usize, step: f64| {
        let mut plus = s.clone();
        plus.items[pi].raw[i] += step;
        let mut minus = s.clone();
        minus.items[pi].raw[i] -= step;
        (weighted_loss(batch, &plus, cfg, lambda) - weighted_loss(batch, &minus, cfg, lambda))
            / (2.0 * step)
    };
    for (pi, _) in s.iter().enumerate() {
        for i in 0..RAW_LEN {
            let coarse = eval(pi, i, h);
            let fine = eval(pi, i, h / 2.0);
            let fd = (4.0 * fine - coarse) / 3.0;
            let a = analytic.per_primitive[pi][i];
            if a.abs() + fd.abs() > skip_below {
                max_rel = max_rel.max((a - fd).abs() / (a.abs() + fd.abs()));
            }
        }
    }
    Ok(max_rel)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::camrays::{pixel_center_ray, CameraView, SceneBounds};
    use crate::objective::BatchRay;
    use crate::render::render_composition_keyed;
    use crate::sqcore::{SqBounds, SuperquadricParams};
    use nalgebra::{Matrix4, Point3, Vector3};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn look_at_view(pos: Point3<f64>, w: usize, h: usize) -> CameraView {
        let zc = (Point3::origin() - pos).normalize();
        let up = if zc.z.abs() > 0.999 { Vector3::x() } else { Vector3::z() };
        let xc = zc.cross(&up).normalize();
        let yc = zc.cross(&xc);
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 1>(0, 0).copy_from(&xc);
        m.fixed_view_mut::<3, 1>(0, 1).copy_from(&yc);
        m.fixed_view_mut::<3, 1>(0, 2).copy_from(&zc);
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&pos.coords);
        CameraView {
            fx: 1.2 * w as f64,
            fy: 1.2 * w as f64,
            cx: w as f64 / 2.0,
            cy: h as f64 / 2.0,
            width: w,
            height: h,
            cam_to_world: m,
            silhouette: vec![0.0; w * h],
        }
    }

    /// Rays from a few directions with targets rendered from `truth`.
    fn batch_from_truth(
        truth: &Composition,
        rays_per_view: usize,
        cfg: &RenderConfig,
        rng: &mut ChaCha8Rng,
    ) -> RayBatch {
        let scene = SceneBounds::unit();
        let positions = [
            Point3::new(3.0, 0.0, 0.2),
            Point3::new(-2.4, 1.8, 0.4),
            Point3::new(0.3, -2.9, 0.8),
            Point3::new(0.5, 1.0, 2.8),
        ];
        let mut rays = Vec::new();
        for (vi, &pos) in positions.iter().enumerate() {
            let view = look_at_view(pos, 32, 32);
            for _ in 0..rays_per_view {
                let pixel = rng.gen_range(0..view.pixel_count());
                let (x, y) = (pixel % view.width, pixel / view.width);
                let ray = pixel_center_ray(&view, x, y, &scene).unwrap();
                let key = crate::render::RayKey { view: vi as u32, pixel: pixel as u32 };
                let target = render_composition_keyed(&ray, key, truth, cfg);
                rays.push(BatchRay { view: vi as u32, pixel: pixel as u32, ray, target, importance: 1.0 });
            }
        }
        RayBatch { rays }
    }

    fn random_scene(n: usize, rng: &mut ChaCha8Rng) -> Composition {
        let b = SqBounds::default();
        (0..n)
            .map(|_| {
                SuperquadricParams::from_constrained(
                    [
                        rng.gen_range(0.12..0.45),
                        rng.gen_range(0.12..0.45),
                        rng.gen_range(0.12..0.45),
                    ],
                    [rng.gen_range(0.4..1.6), rng.gen_range(0.4..1.6)],
                    [
                        rng.gen_range(-3.0..3.0),
                        rng.gen_range(-1.5..1.5),
                        rng.gen_range(-3.0..3.0),
                    ],
                    [
                        rng.gen_range(-0.45..0.45),
                        rng.gen_range(-0.45..0.45),
                        rng.gen_range(-0.45..0.45),
                    ],
                    b,
                )
                .unwrap()
            })
            .collect()
    }

    #[test]
    fn perfect_reconstruction_has_zero_loss_and_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let cfg = RenderConfig::new(20.0, 48, 77);
        let s = random_scene(1, &mut rng);
        let batch = batch_from_truth(&s, 24, &cfg, &mut rng);
        let (loss, grad) = loss_and_grad(&batch, &s, &cfg, 0.6).unwrap();
        assert!(loss < 1e-20, "loss at the optimum: {loss}");
        assert!(grad.max_abs() < 1e-6, "gradient at the optimum: {}", grad.max_abs());
    }

    #[test]
    fn analytic_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let cfg = RenderConfig::new(20.0, 32, 5);
        for trial in 0..10 {
            let truth = random_scene(1 + trial % 2, &mut rng);
            let mut fitted = random_scene(1 + trial % 3, &mut rng);
            // nudge so the scene is not at an optimum
            for p in fitted.items.iter_mut() {
                p.raw[0] += 0.05;
            }
            let batch = batch_from_truth(&truth, 16, &cfg, &mut rng);
            let err = fd_check(&fitted, &batch, &cfg, 0.6, 1e-4).unwrap();
            assert!(err < 1e-4, "trial {trial}: fd mismatch {err}");
        }
    }

    #[test]
    fn larger_fd_step_is_worse() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let cfg = RenderConfig::new(20.0, 32, 5);
        let truth = random_scene(1, &mut rng);
        let fitted = random_scene(1, &mut rng);
        let batch = batch_from_truth(&truth, 32, &cfg, &mut rng);
        let fine = fd_check(&fitted, &batch, &cfg, 0.6, 1e-4).unwrap();
        let coarse = fd_check(&fitted, &batch, &cfg, 0.6, 1e-1).unwrap();
        assert!(
            coarse > fine,
            "truncation should dominate at h=0.1: fine={fine} coarse={coarse}"
        );
    }

    #[test]
    fn empty_batch_fd_check_is_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let s = random_scene(1, &mut rng);
        let cfg = RenderConfig::default();
        let err = fd_check(&s, &RayBatch::default(), &cfg, 0.6, 1e-4).unwrap();
        assert_eq!(err, 0.0);
    }

    #[test]
    fn outside_rays_shrink_overlapping_primitive() {
        // all-background targets with lambda = 1: the loss only penalizes
        // rendered density, so scale raws must get positive gradients
        // (descent shrinks the primitive)
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let cfg = RenderConfig::new(20.0, 48, 3);
        let s: Composition =
            [SuperquadricParams::sphere([0.0; 3], 0.4, SqBounds::default()).unwrap()]
                .into_iter()
                .collect();
        let empty = Composition::new();
        let mut batch = batch_from_truth(&empty, 32, &cfg, &mut rng);
        for br in batch.rays.iter_mut() {
            br.target = 0.0;
        }
        let (_, grad) = loss_and_grad(&batch, &s, &cfg, 1.0).unwrap();
        for i in 0..3 {
            assert!(
                grad.per_primitive[0][i] > 0.0,
                "alpha raw {i} gradient should push scales down, got {}",
                grad.per_primitive[0][i]
            );
        }
    }

    #[test]
    fn gradient_is_additive_over_batches() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let cfg = RenderConfig::new(20.0, 32, 9);
        let truth = random_scene(2, &mut rng);
        let fitted = random_scene(2, &mut rng);
        let b1 = batch_from_truth(&truth, 8, &cfg, &mut rng);
        let b2 = batch_from_truth(&truth, 8, &cfg, &mut rng);
        let mut joined = b1.clone();
        joined.rays.extend(b2.rays.iter().cloned());
        let (l1, g1) = loss_and_grad(&b1, &fitted, &cfg, 0.6).unwrap();
        let (l2, g2) = loss_and_grad(&b2, &fitted, &cfg, 0.6).unwrap();
        let (lj, gj) = loss_and_grad(&joined, &fitted, &cfg, 0.6).unwrap();
        assert!((lj - (l1 + l2)).abs() < 1e-10 * (1.0 + lj.abs()));
        for pi in 0..2 {
            for i in 0..RAW_LEN {
                let a = g1.per_primitive[pi][i] + g2.per_primitive[pi][i];
                let b = gj.per_primitive[pi][i];
                assert!((a - b).abs() < 1e-10 * (1.0 + b.abs()), "entry ({pi},{i})");
            }
        }
    }

    #[test]
    fn saturated_primitive_gets_exact_zero_gradient() {
        // two big spheres each rendering ~1 on every ray: the sum is ~2,
        // the clamp is active with slack, so gradients vanish identically
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let cfg = RenderConfig::new(150.0, 64, 21);
        let b = SqBounds::default();
        let s: Composition = [
            SuperquadricParams::sphere([0.0; 3], 0.6, b).unwrap(),
            SuperquadricParams::sphere([0.0; 3], 0.55, b).unwrap(),
        ]
        .into_iter()
        .collect();
        let scene = SceneBounds::unit();
        let view = look_at_view(Point3::new(3.0, 0.0, 0.0), 16, 16);
        // central pixels only: every ray crosses both spheres
        let mut rays = Vec::new();
        for (x, y) in [(8usize, 8usize), (7, 8), (8, 7), (7, 7)] {
            let pixel = y * 16 + x;
            rays.push(BatchRay {
                view: 0,
                pixel: pixel as u32,
                ray: pixel_center_ray(&view, x, y, &scene).unwrap(),
                target: 1.0,
                importance: 1.0,
            });
        }
        let batch = RayBatch { rays };
        // confirm the clamp slack on every ray
        for br in &batch.rays {
            let d1 = crate::render::render_primitive_keyed(&br.ray, br.key(), &s.items[0], &cfg);
            let d2 = crate::render::render_primitive_keyed(&br.ray, br.key(), &s.items[1], &cfg);
            assert!(d1 + d2 > 1.05, "test setup: expected saturation, got {}", d1 + d2);
        }
        let (_, grad) = loss_and_grad(&batch, &s, &cfg, 0.6).unwrap();
        assert_eq!(grad.max_abs(), 0.0);
        let _ = rng.gen::<f64>();
    }

    #[test]
    fn loss_and_grad_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(16);
        let cfg = RenderConfig::new(20.0, 48, 33);
        let truth = random_scene(2, &mut rng);
        let fitted = random_scene(2, &mut rng);
        let batch = batch_from_truth(&truth, 32, &cfg, &mut rng);
        let (l1, g1) = loss_and_grad(&batch, &fitted, &cfg, 0.6).unwrap();
        let (l2, g2) = loss_and_grad(&batch, &fitted, &cfg, 0.6).unwrap();
        assert_eq!(l1.to_bits(), l2.to_bits(), "loss must be bit-identical");
        assert_eq!(g1, g2, "gradient must be bit-identical");
    }

    #[test]
    fn loss_equals_forward_weighted_loss() {
        let mut rng = ChaCha8Rng::seed_from_u64(18);
        let cfg = RenderConfig::new(20.0, 32, 45);
        let truth = random_scene(2, &mut rng);
        let fitted = random_scene(3, &mut rng);
        let batch = batch_from_truth(&truth, 24, &cfg, &mut rng);
        let (l, _) = loss_and_grad(&batch, &fitted, &cfg, 0.6).unwrap();
        let fwd = weighted_loss(&batch, &fitted, &cfg, 0.6);
        assert_eq!(l.to_bits(), fwd.to_bits(), "dual primal lane must equal f64 path");
    }
}
