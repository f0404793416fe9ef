//! Differentiable silhouette rendering along rays.
//!
//! Each primitive is rendered independently by ray marching its density with
//! stratified jittered samples; a composition sums the per-primitive results
//! and clamps at 1. The optical depth of one sample is `sigma * delta / dbar`
//! where `dbar` is the bin width the ray would have at [`REF_SAMPLES`]
//! samples. Normalizing against that fixed reference makes the opacity of a
//! chord independent of the configured sample count (the estimator converges
//! as samples increase) while still letting short chords saturate to 1, which
//! is what silhouette supervision expects from a [0,1]-bounded density.

use crate::camrays::{pixel_center_ray, CameraView, Ray, SceneBounds};
use crate::dual::Real;
use crate::sqcore::{density_cutoff_ratio, Composition, Geometry, SuperquadricParams};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Reference sample count defining the opacity normalization `dbar`.
/// Equals the default `samples_per_ray`, so at the default configuration the
/// normalizer is exactly the mean bin width of the ray.
pub const REF_SAMPLES: f64 = 96.0;

/// Rendering knobs; `seed` keys the per-ray stratified jitter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RenderConfig {
    pub gamma: f64,
    pub samples_per_ray: usize,
    pub seed: u64,
}

impl RenderConfig {
    pub fn new(gamma: f64, samples_per_ray: usize, seed: u64) -> Self {
        assert!(gamma > 0.0, "gamma must be positive");
        assert!(samples_per_ray >= 2, "need at least 2 samples per ray");
        Self { gamma, samples_per_ray, seed }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }
}

impl Default for RenderConfig {
    fn default() -> Self {
        Self { gamma: 150.0, samples_per_ray: 96, seed: 0 }
    }
}

/// Identifies the pixel a ray came from so its jitter stream is independent
/// of every other ray and of scheduling order.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct RayKey {
    pub view: u32,
    pub pixel: u32,
}

#[inline]
fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Deterministic per-ray RNG keyed by (seed, view, pixel).
pub(crate) fn ray_rng(seed: u64, key: RayKey) -> ChaCha8Rng {
    let h = mix64(mix64(mix64(seed) ^ u64::from(key.view)) ^ u64::from(key.pixel));
    ChaCha8Rng::seed_from_u64(h)
}

/// Stratified jittered depths over the full ray interval plus the
/// per-sample quadrature weight `bin width / dbar = REF_SAMPLES / n`; used
/// by the voxel-grid render, whose field spans the whole scene.
/// Empty when the ray interval is empty.
pub(crate) struct MarchSamples {
    pub ts: Vec<f64>,
    pub weight: f64,
}

pub(crate) fn stratified_samples(r: &Ray, n: usize, rng: &mut ChaCha8Rng) -> MarchSamples {
    let span = r.t_far - r.t_near;
    if span <= 0.0 {
        return MarchSamples { ts: Vec::new(), weight: 0.0 };
    }
    let h = span / n as f64;
    let mut ts = Vec::with_capacity(n);
    for i in 0..n {
        let u: f64 = rng.gen();
        ts.push(r.t_near + (i as f64 + u) * h);
    }
    MarchSamples { ts, weight: REF_SAMPLES / n as f64 }
}

/// Per-ray stratification pattern, independent of any primitive so a
/// composition render is invariant to primitive order and count.
pub(crate) struct RayJitter {
    /// Node fractions `(i + u_i) / n`, strictly increasing in (0, 1).
    pub fractions: Vec<f64>,
    /// Opacity normalizer: the bin width this ray would have at
    /// [`REF_SAMPLES`] samples.
    pub dbar: f64,
}

pub(crate) fn ray_jitter(r: &Ray, n: usize, rng: &mut ChaCha8Rng) -> RayJitter {
    let span = r.t_far - r.t_near;
    if span <= 0.0 {
        return RayJitter { fractions: Vec::new(), dbar: 0.0 };
    }
    let fractions = (0..n)
        .map(|i| (i as f64 + rng.gen::<f64>()) / n as f64)
        .collect();
    RayJitter { fractions, dbar: span / REF_SAMPLES }
}

/// March one primitive along the ray; generic over the scalar so the same
/// code yields values or values-with-parameter-tangents.
///
/// Samples are stratified over the primitive's support interval (the ray's
/// intersection with the cutoff box, where all non-negligible density
/// lives), the density integral is taken over the piecewise-linear
/// interpolant through the jittered nodes, and the expected density
/// telescopes to `D = 1 - exp(-integral / dbar)`. Concentrating the fixed
/// sample budget on the support keeps coarse sample counts accurate for
/// primitives much smaller than the scene. The support bounds carry
/// parameter tangents, so the derivative of the estimator is exact.
pub(crate) fn march_primitive<S: Real>(
    r: &Ray,
    jitter: &RayJitter,
    geom: &Geometry<S>,
    cutoff: f64,
    gamma: f64,
) -> S {
    if jitter.fractions.is_empty() {
        return S::constant(0.0);
    }
    let (lo, hi) = match geom.support_interval(
        [r.origin.x, r.origin.y, r.origin.z],
        [r.direction.x, r.direction.y, r.direction.z],
        cutoff,
        r.t_near,
        r.t_far,
    ) {
        Some(interval) => interval,
        None => return S::constant(0.0),
    };
    let length = hi - lo;
    let fr = &jitter.fractions;
    let n = fr.len();
    // trapezoid over the interpolant with rectangle end caps, accumulated
    // as sum(c_i sigma_i) with scalar coefficients before scaling by the
    // interval length
    let mut acc = S::constant(0.0);
    let mut prev_sigma = S::constant(0.0);
    for (i, &a) in fr.iter().enumerate() {
        let t = lo + length.scale(a);
        let x = [
            S::constant(r.origin.x) + t.scale(r.direction.x),
            S::constant(r.origin.y) + t.scale(r.direction.y),
            S::constant(r.origin.z) + t.scale(r.direction.z),
        ];
        let sigma = geom.density_pt(x, gamma);
        if i == 0 {
            acc = sigma.scale(a);
        } else {
            acc = acc + (sigma + prev_sigma).scale(0.5 * (a - fr[i - 1]));
        }
        prev_sigma = sigma;
    }
    acc = acc + prev_sigma.scale(1.0 - fr[n - 1]);
    let tau = (acc * length).scale(1.0 / jitter.dbar);
    S::constant(1.0) - (-tau).exp()
}

/// Expected density of a single primitive along the ray, in [0, 1].
pub fn render_primitive(r: &Ray, p: &SuperquadricParams, cfg: &RenderConfig) -> f64 {
    render_primitive_keyed(r, RayKey::default(), p, cfg)
}

pub fn render_primitive_keyed(
    r: &Ray,
    key: RayKey,
    p: &SuperquadricParams,
    cfg: &RenderConfig,
) -> f64 {
    if r.is_empty() {
        return 0.0;
    }
    let mut rng = ray_rng(cfg.seed, key);
    let jitter = ray_jitter(r, cfg.samples_per_ray, &mut rng);
    let geom = Geometry::<f64>::prepare(p);
    let cutoff = density_cutoff_ratio(cfg.gamma, p.bounds);
    march_primitive(r, &jitter, &geom, cutoff, cfg.gamma).clamp(0.0, 1.0)
}

/// Composition render: per-primitive densities summed, then clamped at 1.
pub fn render_composition(r: &Ray, s: &Composition, cfg: &RenderConfig) -> f64 {
    render_composition_keyed(r, RayKey::default(), s, cfg)
}

pub fn render_composition_keyed(
    r: &Ray,
    key: RayKey,
    s: &Composition,
    cfg: &RenderConfig,
) -> f64 {
    if r.is_empty() || s.is_empty() {
        return 0.0;
    }
    let mut rng = ray_rng(cfg.seed, key);
    let jitter = ray_jitter(r, cfg.samples_per_ray, &mut rng);
    let mut sum = 0.0;
    for p in s.iter() {
        let geom = Geometry::<f64>::prepare(p);
        let cutoff = density_cutoff_ratio(cfg.gamma, p.bounds);
        sum += march_primitive(r, &jitter, &geom, cutoff, cfg.gamma);
    }
    sum.min(1.0)
}

/// Composition render over prepared geometries and a shared jitter pattern;
/// used by the loss/gradient path.
pub(crate) fn composition_over_jitter(
    r: &Ray,
    jitter: &RayJitter,
    geoms: &[(Geometry<f64>, f64)],
    gamma: f64,
) -> f64 {
    let mut sum = 0.0;
    for (geom, cutoff) in geoms {
        sum += march_primitive(r, jitter, geom, *cutoff, gamma);
    }
    sum.min(1.0)
}

/// Render every pixel of a view. Deterministic for a given seed regardless
/// of thread scheduling: each pixel has its own jitter stream and results
/// are written by position.
pub fn render_image(view: &CameraView, s: &Composition, cfg: &RenderConfig) -> Vec<f64> {
    render_image_indexed(view, 0, s, cfg, &SceneBounds::unit())
}

/// Same as [`render_image`] with an explicit view id and scene bounds.
pub fn render_image_indexed(
    view: &CameraView,
    view_id: u32,
    s: &Composition,
    cfg: &RenderConfig,
    scene: &SceneBounds,
) -> Vec<f64> {
    let geoms: Vec<(Geometry<f64>, f64)> = s
        .iter()
        .map(|p| (Geometry::<f64>::prepare(p), density_cutoff_ratio(cfg.gamma, p.bounds)))
        .collect();
    let w = view.width;
    (0..view.height)
        .into_par_iter()
        .flat_map_iter(|y| {
            let geoms = &geoms;
            (0..w).map(move |x| {
                let ray = pixel_center_ray(view, x, y, scene)
                    .expect("intrinsics validated on load");
                if ray.is_empty() || geoms.is_empty() {
                    return 0.0;
                }
                let key = RayKey { view: view_id, pixel: (y * w + x) as u32 };
                let mut rng = ray_rng(cfg.seed, key);
                let jitter = ray_jitter(&ray, cfg.samples_per_ray, &mut rng);
                composition_over_jitter(&ray, &jitter, geoms, cfg.gamma)
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sqcore::SqBounds;
    use nalgebra::{Point3, Vector3};
    use rand::Rng;

    fn unit_sphere() -> SuperquadricParams {
        SuperquadricParams::sphere([0.0; 3], 1.0, SqBounds::default()).unwrap()
    }

    fn ray_through(origin: Point3<f64>, dir: Vector3<f64>, scene: &SceneBounds) -> Ray {
        let d = dir.normalize();
        let oc = origin - scene.center_point();
        let b = oc.dot(&d);
        let c = oc.norm_squared() - scene.radius * scene.radius;
        let disc = b * b - c;
        let (t0, t1) = if disc > 0.0 {
            let s = disc.sqrt();
            (((-b - s).max(0.0)) * 0.95, (-b + s) * 1.05)
        } else {
            ((-b).max(0.0), (-b).max(0.0))
        };
        Ray { origin, direction: d, t_near: t0, t_far: t1 }
    }

    /// Independent dense-quadrature oracle: midpoint rule on the density
    /// integral, then the closed-form opacity `1 - exp(-integral / dbar)`.
    fn oracle_density(r: &Ray, p: &SuperquadricParams, gamma: f64, n: usize) -> f64 {
        let span = r.t_far - r.t_near;
        if span <= 0.0 {
            return 0.0;
        }
        let h = span / n as f64;
        let mut integral = 0.0;
        for i in 0..n {
            let t = r.t_near + (i as f64 + 0.5) * h;
            let q = r.origin + t * r.direction;
            integral += crate::sqcore::density([q.x, q.y, q.z], p, gamma) * h;
        }
        1.0 - (-integral / (span / REF_SAMPLES)).exp()
    }

    #[test]
    fn empty_interval_renders_zero() {
        let r = Ray {
            origin: Point3::new(3.0, 0.0, 0.0),
            direction: Vector3::new(-1.0, 0.0, 0.0),
            t_near: 2.0,
            t_far: 2.0,
        };
        let cfg = RenderConfig::new(150.0, 64, 1);
        assert_eq!(render_primitive(&r, &unit_sphere(), &cfg), 0.0);
    }

    #[test]
    fn central_ray_saturates_and_matches_oracle() {
        let scene = SceneBounds::unit();
        let r = ray_through(Point3::new(3.0, 0.0, 0.0), Vector3::new(-1.0, 0.0, 0.0), &scene);
        let p = unit_sphere();
        let cfg = RenderConfig::new(150.0, 256, 42);
        let d = render_primitive(&r, &p, &cfg);
        assert!((0.99..=1.0).contains(&d), "central ray D = {d}");
        let oracle = oracle_density(&r, &p, 150.0, 100_000);
        assert!((d - oracle).abs() < 1e-3, "estimator {d} vs oracle {oracle}");
    }

    #[test]
    fn distant_ray_is_dark() {
        let scene = SceneBounds { center: [0.0; 3], radius: 4.0 };
        // passes at distance 2 from the unit sphere's center
        let r = ray_through(Point3::new(8.0, 2.0, 0.0), Vector3::new(-1.0, 0.0, 0.0), &scene);
        let cfg = RenderConfig::new(150.0, 128, 3);
        let d = render_primitive(&r, &unit_sphere(), &cfg);
        assert!(d < 1e-6, "grazing-miss D = {d}");
        assert!(oracle_density(&r, &unit_sphere(), 150.0, 100_000) < 1e-6);
    }

    #[test]
    fn empty_composition_renders_zero() {
        let scene = SceneBounds::unit();
        let r = ray_through(Point3::new(3.0, 0.0, 0.0), Vector3::new(-1.0, 0.0, 0.0), &scene);
        let cfg = RenderConfig::default();
        assert_eq!(render_composition(&r, &Composition::new(), &cfg), 0.0);
    }

    #[test]
    fn two_opaque_spheres_clamp_to_one() {
        let scene = SceneBounds::unit();
        let r = ray_through(Point3::new(3.0, 0.0, 0.0), Vector3::new(-1.0, 0.0, 0.0), &scene);
        let p = SuperquadricParams::sphere([0.0; 3], 0.8, SqBounds::default()).unwrap();
        let s: Composition = [p, p].into_iter().collect();
        let cfg = RenderConfig::new(150.0, 128, 7);
        let d = render_composition(&r, &s, &cfg);
        assert_eq!(d, 1.0);
    }

    #[test]
    fn partial_plus_distant_is_partial() {
        let scene = SceneBounds::unit();
        // clip the very edge of a small sphere for a partial density
        let r = ray_through(
            Point3::new(3.0, 0.2495, 0.0),
            Vector3::new(-1.0, 0.0, 0.0),
            &scene,
        );
        let near = SuperquadricParams::sphere([0.0, 0.0, 0.0], 0.25, SqBounds::default()).unwrap();
        let far = SuperquadricParams::sphere([0.0, -0.7, 0.0], 0.05, SqBounds::default()).unwrap();
        let cfg = RenderConfig::new(20.0, 96, 11);
        let single = render_primitive(&r, &near, &cfg);
        assert!(single > 0.05 && single < 0.95, "want partial density, got {single}");
        let s: Composition = [near, far].into_iter().collect();
        let both = render_composition(&r, &s, &cfg);
        assert!((both - single).abs() < 1e-6, "{both} vs {single}");
    }

    #[test]
    fn output_always_in_unit_range() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let scene = SceneBounds::unit();
        let cfg = RenderConfig::new(50.0, 48, 5);
        for _ in 0..200 {
            let origin = Point3::new(
                rng.gen_range(2.0..4.0),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
            );
            let target = Point3::new(
                rng.gen_range(-0.5..0.5),
                rng.gen_range(-0.5..0.5),
                rng.gen_range(-0.5..0.5),
            );
            let r = ray_through(origin, target - origin, &scene);
            let p = SuperquadricParams::sphere(
                [rng.gen_range(-0.4..0.4), rng.gen_range(-0.4..0.4), 0.0],
                rng.gen_range(0.1..0.5),
                SqBounds::default(),
            )
            .unwrap();
            let s: Composition = [p, p].into_iter().collect();
            let d = render_composition(&r, &s, &cfg);
            assert!((0.0..=1.0).contains(&d), "D out of range: {d}");
        }
    }

    #[test]
    fn composition_is_permutation_invariant() {
        let scene = SceneBounds::unit();
        let r = ray_through(Point3::new(3.0, 0.1, 0.05), Vector3::new(-1.0, 0.0, 0.0), &scene);
        let b = SqBounds::default();
        let p1 = SuperquadricParams::sphere([0.0, 0.0, 0.0], 0.3, b).unwrap();
        let p2 = SuperquadricParams::sphere([0.2, 0.1, 0.0], 0.2, b).unwrap();
        let p3 = SuperquadricParams::sphere([-0.3, 0.0, 0.1], 0.25, b).unwrap();
        let cfg = RenderConfig::new(20.0, 64, 9);
        let fwd: Composition = [p1, p2, p3].into_iter().collect();
        let rev: Composition = [p3, p1, p2].into_iter().collect();
        let a = render_composition(&r, &fwd, &cfg);
        let b2 = render_composition(&r, &rev, &cfg);
        assert!((a - b2).abs() < 1e-12, "{a} vs {b2}");
    }

    #[test]
    fn interior_ray_monotone_in_gamma() {
        let scene = SceneBounds::unit();
        let r = ray_through(Point3::new(3.0, 0.0, 0.0), Vector3::new(-1.0, 0.0, 0.0), &scene);
        let p = unit_sphere();
        let mut last = 0.0;
        for &gamma in &[10.0, 50.0, 150.0] {
            let cfg = RenderConfig::new(gamma, 128, 13);
            let d = render_primitive(&r, &p, &cfg);
            assert!(d >= last - 1e-12, "D not monotone in gamma: {d} < {last}");
            last = d;
        }
    }

    #[test]
    fn sample_count_convergence() {
        // random primitive x random pixel ray, the population the renderer
        // actually sees during fitting
        let pairs = crate::test_support::random_ray_primitive_pairs(0, 100);
        for (case, (ray, p)) in pairs.iter().enumerate() {
            let coarse = render_primitive(ray, p, &RenderConfig::new(50.0, 64, case as u64));
            let fine = render_primitive(ray, p, &RenderConfig::new(50.0, 1024, case as u64));
            assert!(
                (coarse - fine).abs() < 0.01,
                "case {case}: |{coarse} - {fine}| >= 0.01"
            );
        }
    }
}
