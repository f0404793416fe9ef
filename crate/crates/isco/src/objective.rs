//! Silhouette reconstruction loss and the importance-based ray sampler.
//!
//! The loss is a sum of weighted squared residuals over a sampled ray batch.
//! A ray counts as "outside" when its target is below one 8-bit quantization
//! level; outside rays are weighted by `lambda`, inside rays by `1 - lambda`.

use crate::camrays::{pixel_center_ray, CameraView, Ray, SceneBounds};
use crate::render::{render_composition_keyed, RayKey, RenderConfig};
use crate::sqcore::Composition;
use rand::distributions::{Distribution, WeightedIndex};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Targets below this count as background; real masks are 8-bit and
/// anti-aliased, so "zero" means below one quantization level.
pub const MASK_EPS: f64 = 1.0 / 255.0;

/// Weight applied to a ray with the given target value.
#[inline]
pub fn ray_weight(target: f64, lambda: f64) -> f64 {
    if target < MASK_EPS {
        lambda
    } else {
        1.0 - lambda
    }
}

/// One sampled ray with its provenance and supervision target.
///
/// `importance` is the sampling correction `1 / (pixel_count * p_select)`;
/// it is exactly 1 for uniformly drawn rays and makes batch losses unbiased
/// estimates of the full-image loss when pixels are drawn non-uniformly.
#[derive(Debug, Clone)]
pub struct BatchRay {
    pub view: u32,
    pub pixel: u32,
    pub ray: Ray,
    pub target: f64,
    pub importance: f64,
}

impl BatchRay {
    pub fn key(&self) -> RayKey {
        RayKey { view: self.view, pixel: self.pixel }
    }
}

/// A batch of rays drawn across views.
#[derive(Debug, Clone, Default)]
pub struct RayBatch {
    pub rays: Vec<BatchRay>,
}

impl RayBatch {
    pub fn len(&self) -> usize {
        self.rays.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rays.is_empty()
    }
}

/// Sum of squared residuals over the batch (no inside/outside weighting;
/// each term carries its ray's sampling correction).
pub fn unweighted_loss(batch: &RayBatch, s: &Composition, cfg: &RenderConfig) -> f64 {
    batch
        .rays
        .iter()
        .map(|br| {
            let d = render_composition_keyed(&br.ray, br.key(), s, cfg);
            br.importance * ((d - br.target) * (d - br.target))
        })
        .sum()
}

/// Weighted sum of squared residuals: `lambda` outside, `1 - lambda`
/// inside, times each ray's sampling correction. Terms are accumulated in
/// batch order (the gradient path reproduces the identical floating-point
/// sequence).
pub fn weighted_loss(batch: &RayBatch, s: &Composition, cfg: &RenderConfig, lambda: f64) -> f64 {
    batch
        .rays
        .iter()
        .map(|br| {
            let d = render_composition_keyed(&br.ray, br.key(), s, cfg);
            let r2 = (d - br.target) * (d - br.target);
            (ray_weight(br.target, lambda) * br.importance) * r2
        })
        .sum()
}

/// Per-view importance tables driving pixel selection.
///
/// Selection probability is proportional to `weight + floor`. The floor is
/// sized so a fixed fraction of the probability mass stays uniform: pure
/// proportional sampling locks onto the pixels seen in the first batches
/// and never observes the rest of the image, which stalls fitting. Weights
/// track realized squared errors with an exponential moving average.
#[derive(Debug, Clone)]
pub struct RaySampler {
    weights: Vec<Vec<f64>>,
    ema_decay: f64,
    uniform_frac: f64,
}

impl RaySampler {
    pub fn new(views: &[CameraView]) -> Self {
        Self {
            weights: views.iter().map(|v| vec![0.0; v.pixel_count()]).collect(),
            ema_decay: 0.9,
            uniform_frac: 0.25,
        }
    }

    /// Fraction of the selection mass reserved for uniform exploration
    /// (1.0 disables importance sampling entirely).
    pub fn with_uniform_frac(mut self, frac: f64) -> Self {
        assert!((0.0..=1.0).contains(&frac));
        self.uniform_frac = frac;
        self
    }

    /// Current weight table of a view (exposed for diagnostics and tests).
    pub fn view_weights(&self, view: usize) -> &[f64] {
        &self.weights[view]
    }

    /// Floor added to every pixel of a view's table: allocates
    /// `uniform_frac` of the selection mass to uniform exploration.
    fn floor_for(&self, total: f64, pixels: usize) -> f64 {
        self.uniform_frac / (1.0 - self.uniform_frac) * total / pixels as f64
    }

    /// Draw `n_per_view` pixels per view with probability proportional to
    /// `weight + floor`; an all-zero table (the first iteration) degenerates
    /// to uniform sampling.
    pub fn sample_rays(
        &self,
        views: &[CameraView],
        n_per_view: usize,
        scene: &SceneBounds,
        rng: &mut ChaCha8Rng,
    ) -> RayBatch {
        assert!(n_per_view >= 1);
        let mut rays = Vec::with_capacity(n_per_view * views.len());
        for (vi, view) in views.iter().enumerate() {
            let table = &self.weights[vi];
            let total: f64 = table.iter().sum();
            let pixels = table.len() as f64;
            let picks: Vec<(usize, f64)> = if total <= 0.0 || self.uniform_frac >= 1.0 {
                (0..n_per_view)
                    .map(|_| (rng.gen_range(0..table.len()), 1.0))
                    .collect()
            } else {
                let floor = self.floor_for(total, table.len());
                let adjusted_total = total + floor * pixels;
                let dist = WeightedIndex::new(table.iter().map(|w| w + floor))
                    .expect("weights are non-negative with a positive floor");
                (0..n_per_view)
                    .map(|_| {
                        let pixel = dist.sample(rng);
                        let p_select = (table[pixel] + floor) / adjusted_total;
                        (pixel, 1.0 / (pixels * p_select))
                    })
                    .collect()
            };
            for (pixel, importance) in picks {
                let (x, y) = (pixel % view.width, pixel / view.width);
                let ray = pixel_center_ray(view, x, y, scene)
                    .expect("intrinsics validated on load");
                rays.push(BatchRay {
                    view: vi as u32,
                    pixel: pixel as u32,
                    ray,
                    target: view.target(pixel),
                    importance,
                });
            }
        }
        RayBatch { rays }
    }

    /// Fold the batch's realized per-ray squared errors into the tables.
    /// Pixels drawn several times in one batch are updated once with their
    /// mean error.
    pub fn record_losses(&mut self, batch: &RayBatch, sq_errors: &[f64]) {
        assert_eq!(batch.len(), sq_errors.len());
        use std::collections::HashMap;
        let mut per_pixel: HashMap<(u32, u32), (f64, usize)> = HashMap::new();
        for (br, &e) in batch.rays.iter().zip(sq_errors.iter()) {
            let entry = per_pixel.entry((br.view, br.pixel)).or_insert((0.0, 0));
            entry.0 += e;
            entry.1 += 1;
        }
        for ((view, pixel), (sum, count)) in per_pixel {
            let w = &mut self.weights[view as usize][pixel as usize];
            *w = self.ema_decay * *w + (1.0 - self.ema_decay) * sum / count as f64;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sqcore::{SqBounds, SuperquadricParams};
    use nalgebra::{Matrix4, Point3, Vector3};
    use rand::SeedableRng;

    fn look_at_view(pos: Point3<f64>, w: usize, h: usize) -> CameraView {
        let zc = (Point3::origin() - pos).normalize();
        let up = Vector3::z();
        let xc = zc.cross(&up).normalize();
        let yc = zc.cross(&xc);
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 1>(0, 0).copy_from(&xc);
        m.fixed_view_mut::<3, 1>(0, 1).copy_from(&yc);
        m.fixed_view_mut::<3, 1>(0, 2).copy_from(&zc);
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&pos.coords);
        CameraView {
            fx: w as f64,
            fy: w as f64,
            cx: w as f64 / 2.0,
            cy: h as f64 / 2.0,
            width: w,
            height: h,
            cam_to_world: m,
            silhouette: vec![0.0; w * h],
        }
    }

    /// Batch over pixels near the image center so rays cross the test
    /// primitives instead of grazing past them.
    fn batch_with_targets(targets: &[f64]) -> RayBatch {
        let view = look_at_view(Point3::new(3.0, 0.0, 0.0), 8, 8);
        let scene = SceneBounds::unit();
        let rays = targets
            .iter()
            .enumerate()
            .map(|(i, &t)| {
                let (x, y) = (3 + i % 2, 3 + (i / 2) % 2);
                BatchRay {
                    view: 0,
                    pixel: (y * 8 + x) as u32,
                    ray: pixel_center_ray(&view, x, y, &scene).unwrap(),
                    target: t,
                    importance: 1.0,
                }
            })
            .collect();
        RayBatch { rays }
    }

    #[test]
    fn empty_scene_loss_values() {
        let cfg = RenderConfig::default();
        let empty = Composition::new();
        let b1 = batch_with_targets(&[1.0]);
        assert!((unweighted_loss(&b1, &empty, &cfg) - 1.0).abs() < 1e-12);
        let b3 = batch_with_targets(&[1.0, 0.5, 0.0]);
        assert!((unweighted_loss(&b3, &empty, &cfg) - 1.25).abs() < 1e-12);
    }

    #[test]
    fn lambda_half_is_exactly_half_unweighted() {
        let cfg = RenderConfig::new(20.0, 32, 5);
        let p = SuperquadricParams::sphere([0.0; 3], 0.4, SqBounds::default()).unwrap();
        let s: Composition = [p].into_iter().collect();
        let b = batch_with_targets(&[1.0, 0.25, 0.0, 0.7, 0.0]);
        let full = unweighted_loss(&b, &s, &cfg);
        let half = weighted_loss(&b, &s, &cfg, 0.5);
        assert_eq!(half, 0.5 * full, "power-of-two weighting must be exact");
    }

    #[test]
    fn lambda_zero_ignores_background_rays() {
        let cfg = RenderConfig::default();
        // target 0 but an opaque sphere in front: huge residual, weight 0
        let p = SuperquadricParams::sphere([0.0; 3], 0.9, SqBounds::default()).unwrap();
        let s: Composition = [p].into_iter().collect();
        let b = batch_with_targets(&[0.0]);
        assert_eq!(weighted_loss(&b, &s, &cfg, 0.0), 0.0);
    }

    #[test]
    fn lambda_weighting_examples() {
        // outside ray with D = 1 under lambda = 0.6 contributes 0.6,
        // inside ray (I = 1) with D = 0 contributes 0.4
        let cfg = RenderConfig::default();
        let p = SuperquadricParams::sphere([0.0; 3], 0.95, SqBounds::default()).unwrap();
        let s: Composition = [p].into_iter().collect();
        let outside = batch_with_targets(&[0.0]);
        let l_out = weighted_loss(&outside, &s, &cfg, 0.6);
        assert!((l_out - 0.6).abs() < 1e-3, "outside contribution {l_out}");
        let inside = batch_with_targets(&[1.0]);
        let l_in = weighted_loss(&inside, &Composition::new(), &cfg, 0.6);
        assert!((l_in - 0.4).abs() < 1e-12, "inside contribution {l_in}");
    }

    #[test]
    fn uniform_sampling_frequencies_within_3_sigma() {
        let views = vec![look_at_view(Point3::new(3.0, 0.0, 0.0), 10, 10)];
        let sampler = RaySampler::new(&views);
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let mut counts = vec![0usize; 100];
        let draws = 100_000;
        let batch = sampler.sample_rays(&views, draws, &SceneBounds::unit(), &mut rng);
        for br in &batch.rays {
            counts[br.pixel as usize] += 1;
        }
        let p = 1.0 / 100.0;
        let mean = draws as f64 * p;
        let sigma = (draws as f64 * p * (1.0 - p)).sqrt();
        for (i, &c) in counts.iter().enumerate() {
            assert!(
                (c as f64 - mean).abs() < 3.0 * sigma + 1.0,
                "pixel {i} drawn {c} times, expected {mean} +- {sigma}"
            );
        }
    }

    #[test]
    fn heavy_pixel_drawn_about_ten_times_more() {
        let views = vec![look_at_view(Point3::new(3.0, 0.0, 0.0), 10, 10)];
        let mut sampler = RaySampler::new(&views);
        // weights chosen so (w + floor) for the hot pixel is 10x a cold one:
        // with 25% uniform mass, floor = W/300 and w_hot = 13.375 solves it
        sampler.weights[0] = vec![1.0; 100];
        sampler.weights[0][37] = 13.375;
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let batch = sampler.sample_rays(&views, 200_000, &SceneBounds::unit(), &mut rng);
        let hits = batch.rays.iter().filter(|br| br.pixel == 37).count() as f64;
        let others = (batch.len() as f64 - hits) / 99.0;
        let ratio = hits / others;
        assert!(
            (9.0..11.0).contains(&ratio),
            "expected ~10x oversampling, got {ratio:.2}"
        );
    }

    #[test]
    fn floor_keeps_every_pixel_reachable() {
        let views = vec![look_at_view(Point3::new(3.0, 0.0, 0.0), 4, 4)];
        let mut sampler = RaySampler::new(&views);
        sampler.weights[0] = vec![0.0; 16];
        sampler.weights[0][0] = 1000.0;
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let batch = sampler.sample_rays(&views, 100_000, &SceneBounds::unit(), &mut rng);
        let mut seen = vec![false; 16];
        for br in &batch.rays {
            seen[br.pixel as usize] = true;
        }
        // the floor is 1e-3 of the mean, so cold pixels appear within 1e5 draws
        assert!(seen.iter().filter(|&&s| s).count() >= 10, "cold pixels starved");
    }

    #[test]
    fn ema_update_moves_weights_toward_errors() {
        let views = vec![look_at_view(Point3::new(3.0, 0.0, 0.0), 4, 4)];
        let mut sampler = RaySampler::new(&views);
        let scene = SceneBounds::unit();
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let batch = sampler.sample_rays(&views, 32, &scene, &mut rng);
        let errs: Vec<f64> = (0..batch.len()).map(|i| i as f64 / 10.0).collect();
        sampler.record_losses(&batch, &errs);
        let sum: f64 = sampler.view_weights(0).iter().sum();
        assert!(sum > 0.0, "weights should pick up observed errors");
    }
}
