//! Synthetic ground-truth scenes and calibrated views for round-trip
//! verification and ablations.
//!
//! Cameras sit on a sphere of 3x the scene radius looking at its center with
//! a 60-degree vertical field of view, so a unit object fills roughly half
//! the frame. Viewpoints are drawn uniformly over the full sphere or from a
//! spherical cap around the +z pole.

use crate::assets::SceneBundle;
use crate::camrays::{CameraView, SceneBounds};
use crate::render::{render_image_indexed, RenderConfig};
use crate::sqcore::{canonical_to_world, is_inside, Composition, SqBounds, SuperquadricParams};
use nalgebra::{Matrix4, Point3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum GenError {
    #[error("scene generation exhausted {0} rejection attempts")]
    GenerationExhausted(usize),
}

/// Where viewpoints may come from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum ViewPolicy {
    /// Uniform over the whole sphere of directions.
    UniformSphere,
    /// Polar angle at most `theta_cap_deg` from the +z pole.
    Cap { theta_cap_deg: f64 },
}

/// Knobs of the synthetic generator.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GenSpec {
    pub count_min: usize,
    pub count_max: usize,
    /// Per-axis scale range as a fraction of the scene radius.
    pub alpha_range: (f64, f64),
    pub eps_range: (f64, f64),
    /// Translation magnitude cap as a fraction of the scene radius
    /// (further limited so primitives stay inside the bounds).
    pub center_range: f64,
    pub view_count: usize,
    pub policy: ViewPolicy,
    /// Per-pixel flip probability applied to the binary masks.
    pub mask_noise: f64,
    pub image_size: usize,
    pub seed: u64,
    pub bounds: SceneBounds,
}

impl Default for GenSpec {
    fn default() -> Self {
        Self {
            count_min: 1,
            count_max: 3,
            alpha_range: (0.12, 0.35),
            eps_range: (0.4, 1.6),
            center_range: 0.55,
            view_count: 16,
            policy: ViewPolicy::UniformSphere,
            mask_noise: 0.0,
            image_size: 128,
            seed: 0,
            bounds: SceneBounds::unit(),
        }
    }
}

impl GenSpec {
    pub fn validate(&self) -> Result<(), String> {
        if self.view_count < 1 {
            return Err("view_count must be at least 1".into());
        }
        if self.count_min < 1 || self.count_max < self.count_min {
            return Err("primitive count range is empty".into());
        }
        if let ViewPolicy::Cap { theta_cap_deg } = self.policy {
            if !(theta_cap_deg > 0.0 && theta_cap_deg <= 90.0) {
                return Err(format!("theta_cap must be in (0, 90] degrees, got {theta_cap_deg}"));
            }
        }
        if !(0.0..=1.0).contains(&self.mask_noise) {
            return Err("mask_noise must be in [0, 1]".into());
        }
        Ok(())
    }
}

/// 26 probe points on a primitive's surface (the 3^3 - 1 sign patterns of
/// the parametric angles), used for the containment audit.
fn probe_points(p: &SuperquadricParams) -> Vec<[f64; 3]> {
    let sp = |v: f64, e: f64| v.signum() * v.abs().powf(e);
    let alpha = p.alpha();
    let eps = p.epsilon();
    let etas = [-std::f64::consts::FRAC_PI_4, 0.0, std::f64::consts::FRAC_PI_4];
    let mut pts = Vec::with_capacity(26);
    for (i, &eta) in etas.iter().enumerate() {
        for j in 0..8 {
            if i == 1 && j % 2 == 1 {
                continue; // thin out the equator to keep 26 points
            }
            let omega = -std::f64::consts::PI + std::f64::consts::FRAC_PI_4 * j as f64;
            let (se, ce) = eta.sin_cos();
            let (so, co) = omega.sin_cos();
            pts.push(canonical_to_world(
                [
                    alpha[0] * sp(ce, eps[0]) * sp(co, eps[1]),
                    alpha[1] * sp(ce, eps[0]) * sp(so, eps[1]),
                    alpha[2] * sp(se, eps[0]),
                ],
                p,
            ));
        }
    }
    // poles
    pts.push(canonical_to_world([0.0, 0.0, alpha[2]], p));
    pts.push(canonical_to_world([0.0, 0.0, -alpha[2]], p));
    pts
}

fn fully_contained(inner: &SuperquadricParams, outer: &SuperquadricParams) -> bool {
    probe_points(inner).iter().all(|&x| is_inside(x, outer))
}

/// Random ground-truth composition: every primitive inside the scene bounds,
/// no primitive fully contained in another (rejection resampling).
pub fn gen_scene(spec: &GenSpec, rng: &mut ChaCha8Rng) -> Result<Composition, GenError> {
    const MAX_REJECTIONS: usize = 10_000;
    let bounds = SqBounds::for_scene_radius(spec.bounds.radius);
    let count = rng.gen_range(spec.count_min..=spec.count_max);
    let r = spec.bounds.radius;
    let mut items: Vec<SuperquadricParams> = Vec::with_capacity(count);
    let mut rejections = 0;
    while items.len() < count {
        if rejections >= MAX_REJECTIONS {
            return Err(GenError::GenerationExhausted(rejections));
        }
        let alpha = [
            r * rng.gen_range(spec.alpha_range.0..spec.alpha_range.1),
            r * rng.gen_range(spec.alpha_range.0..spec.alpha_range.1),
            r * rng.gen_range(spec.alpha_range.0..spec.alpha_range.1),
        ];
        let eps = [
            rng.gen_range(spec.eps_range.0..spec.eps_range.1),
            rng.gen_range(spec.eps_range.0..spec.eps_range.1),
        ];
        let euler = [
            rng.gen_range(-std::f64::consts::PI..std::f64::consts::PI),
            rng.gen_range(-std::f64::consts::FRAC_PI_2..std::f64::consts::FRAC_PI_2),
            rng.gen_range(-std::f64::consts::PI..std::f64::consts::PI),
        ];
        // the primitive fits in the ball of radius |alpha|, so keep its
        // center close enough that it stays inside the scene sphere
        let alpha_ball = (alpha[0] * alpha[0] + alpha[1] * alpha[1] + alpha[2] * alpha[2]).sqrt();
        let max_center = (r - alpha_ball).min(spec.center_range * r);
        if max_center <= 0.0 {
            rejections += 1;
            continue;
        }
        let dir = random_unit(rng);
        let dist = rng.gen_range(0.0..max_center);
        let center = [
            spec.bounds.center[0] + dist * dir[0],
            spec.bounds.center[1] + dist * dir[1],
            spec.bounds.center[2] + dist * dir[2],
        ];
        let candidate =
            SuperquadricParams::from_constrained(alpha, eps, euler, center, bounds).expect("ranges respect bounds");
        let contained = items.iter().any(|other| {
            fully_contained(&candidate, other) || fully_contained(other, &candidate)
        });
        if contained {
            rejections += 1;
        } else {
            items.push(candidate);
        }
    }
    Ok(items.into_iter().collect())
}

fn random_unit(rng: &mut ChaCha8Rng) -> [f64; 3] {
    let z: f64 = rng.gen_range(-1.0..1.0);
    let phi: f64 = rng.gen_range(0.0..2.0 * std::f64::consts::PI);
    let s = (1.0 - z * z).sqrt();
    [s * phi.cos(), s * phi.sin(), z]
}

/// Direction with the polar angle constrained to the cap (measured from +z).
fn cap_direction(rng: &mut ChaCha8Rng, theta_cap_rad: f64) -> [f64; 3] {
    // uniform over the cap: cos(theta) uniform in [cos(cap), 1]
    let z: f64 = rng.gen_range(theta_cap_rad.cos()..=1.0);
    let phi: f64 = rng.gen_range(0.0..2.0 * std::f64::consts::PI);
    let s = (1.0 - z * z).sqrt();
    [s * phi.cos(), s * phi.sin(), z]
}

/// Look-at pose: camera z points at the scene center, y is image-down.
/// World +z disambiguates the roll unless the view direction is within one
/// degree of a pole, then +x takes over.
fn look_at_pose(pos: Point3<f64>, center: Point3<f64>) -> Matrix4<f64> {
    let zc = (center - pos).normalize();
    let up = if zc.z.abs() > (1.0_f64).to_radians().cos() {
        Vector3::x()
    } else {
        Vector3::z()
    };
    let xc = zc.cross(&up).normalize();
    let yc = zc.cross(&xc);
    let mut m = Matrix4::identity();
    m.fixed_view_mut::<3, 1>(0, 0).copy_from(&xc);
    m.fixed_view_mut::<3, 1>(0, 1).copy_from(&yc);
    m.fixed_view_mut::<3, 1>(0, 2).copy_from(&zc);
    m.fixed_view_mut::<3, 1>(0, 3).copy_from(&pos.coords);
    m
}

/// Cameras only (empty silhouettes), per the spec's viewpoint policy.
pub fn gen_views(spec: &GenSpec, rng: &mut ChaCha8Rng) -> Vec<CameraView> {
    let size = spec.image_size;
    // 60 degree vertical fov
    let fy = (size as f64 / 2.0) / (30.0_f64).to_radians().tan();
    let center = spec.bounds.center_point();
    (0..spec.view_count)
        .map(|_| {
            let dir = match spec.policy {
                ViewPolicy::UniformSphere => random_unit(rng),
                ViewPolicy::Cap { theta_cap_deg } => {
                    cap_direction(rng, theta_cap_deg.to_radians())
                }
            };
            let pos = center + 3.0 * spec.bounds.radius * Vector3::new(dir[0], dir[1], dir[2]);
            CameraView {
                fx: fy,
                fy,
                cx: size as f64 / 2.0,
                cy: size as f64 / 2.0,
                width: size,
                height: size,
                cam_to_world: look_at_pose(pos, center),
                silhouette: vec![0.0; size * size],
            }
        })
        .collect()
}

/// Full synthetic input: ground-truth composition, rendered binary masks
/// (dense sampling at the evaluation gamma, thresholded at 0.5, optional
/// per-pixel flip noise), packed as a scene bundle.
pub fn gen_bundle(spec: &GenSpec) -> Result<(SceneBundle, Composition), GenError> {
    spec.validate().expect("caller validates the spec");
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let truth = gen_scene(spec, &mut rng)?;
    let mut views = gen_views(spec, &mut rng);
    let cfg = RenderConfig { gamma: 150.0, samples_per_ray: 192, seed: spec.seed };
    for (vi, view) in views.iter_mut().enumerate() {
        let raster = render_image_indexed(view, vi as u32, &truth, &cfg, &spec.bounds);
        view.silhouette = raster
            .into_iter()
            .map(|v| {
                let mut bit = if v >= 0.5 { 1.0 } else { 0.0 };
                if spec.mask_noise > 0.0 && rng.gen::<f64>() < spec.mask_noise {
                    bit = 1.0 - bit;
                }
                bit
            })
            .collect();
    }
    Ok((
        SceneBundle {
            views,
            bounds: spec.bounds,
            name: format!("synthetic_{}", spec.seed),
            seed: spec.seed,
        },
        truth,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::{eval_bounds, iou, voxelize};

    #[test]
    fn single_ellipsoid_when_count_one() {
        let spec = GenSpec { count_min: 1, count_max: 1, eps_range: (0.99, 1.01), ..GenSpec::default() };
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let s = gen_scene(&spec, &mut rng).unwrap();
        assert_eq!(s.len(), 1);
        let e = s.items[0].epsilon();
        assert!((e[0] - 1.0).abs() < 0.011 && (e[1] - 1.0).abs() < 0.011);
    }

    #[test]
    fn generated_primitives_fit_scene_and_respect_invariants() {
        let spec = GenSpec { count_min: 2, count_max: 4, ..GenSpec::default() };
        for seed in 0..10 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let s = gen_scene(&spec, &mut rng).unwrap();
            for p in s.iter() {
                for a in p.alpha() {
                    assert!(a > 0.0);
                }
                let t = p.translation();
                let norm = (t[0] * t[0] + t[1] * t[1] + t[2] * t[2]).sqrt();
                assert!(norm < 1.0, "center outside scene sphere: {norm}");
            }
            // containment audit: some probe point of each primitive must
            // escape every other primitive
            for (i, p) in s.iter().enumerate() {
                for (j, q) in s.iter().enumerate() {
                    if i != j {
                        assert!(!fully_contained(p, q), "primitive {i} swallowed by {j}");
                    }
                }
            }
        }
    }

    #[test]
    fn uniform_viewpoints_match_sin_theta_density() {
        // Kolmogorov-Smirnov test of cos(theta) ~ U(-1, 1) over 10^4 draws
        let spec = GenSpec { view_count: 10_000, ..GenSpec::default() };
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let views = gen_views(&spec, &mut rng);
        let mut zs: Vec<f64> = views
            .iter()
            .map(|v| {
                let p = v.position();
                p.z / p.coords.norm()
            })
            .collect();
        zs.sort_by(f64::total_cmp);
        let n = zs.len() as f64;
        let mut d = 0.0_f64;
        for (i, &z) in zs.iter().enumerate() {
            let cdf = (z + 1.0) / 2.0;
            let emp_hi = (i + 1) as f64 / n;
            let emp_lo = i as f64 / n;
            d = d.max((cdf - emp_lo).abs()).max((emp_hi - cdf).abs());
        }
        // alpha = 0.001 critical value: 1.95 / sqrt(n)
        assert!(d < 1.95 / n.sqrt(), "KS statistic {d} too large");
    }

    #[test]
    fn cap_policy_limits_polar_angle() {
        let spec = GenSpec {
            view_count: 500,
            policy: ViewPolicy::Cap { theta_cap_deg: 22.5 },
            ..GenSpec::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for v in gen_views(&spec, &mut rng) {
            let p = v.position();
            let polar = (p.z / p.coords.norm()).acos().to_degrees();
            assert!(polar <= 22.5 + 1e-9, "polar angle {polar} beyond the cap");
        }
    }

    #[test]
    fn optical_axis_passes_through_scene_center() {
        let spec = GenSpec { view_count: 64, ..GenSpec::default() };
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for v in gen_views(&spec, &mut rng) {
            let axis = v.rotation() * Vector3::z();
            let to_center = Point3::origin() - v.position();
            let miss = to_center.cross(&axis).norm() / to_center.norm();
            assert!(miss < 1e-9, "optical axis misses center by {miss}");
        }
    }

    #[test]
    fn bundles_are_bit_reproducible() {
        let spec = GenSpec { view_count: 2, image_size: 48, seed: 11, ..GenSpec::default() };
        let (b1, t1) = gen_bundle(&spec).unwrap();
        let (b2, t2) = gen_bundle(&spec).unwrap();
        assert_eq!(t1, t2);
        for (v1, v2) in b1.views.iter().zip(b2.views.iter()) {
            assert_eq!(v1.silhouette, v2.silhouette);
            assert_eq!(v1.cam_to_world, v2.cam_to_world);
        }
    }

    #[test]
    fn noise_flips_about_the_requested_fraction() {
        let clean = GenSpec { view_count: 2, image_size: 64, seed: 13, ..GenSpec::default() };
        let noisy = GenSpec { mask_noise: 0.01, ..clean.clone() };
        let (cb, _) = gen_bundle(&clean).unwrap();
        let (nb, _) = gen_bundle(&noisy).unwrap();
        let mut flips = 0usize;
        let mut total = 0usize;
        for (cv, nv) in cb.views.iter().zip(nb.views.iter()) {
            for (a, b) in cv.silhouette.iter().zip(nv.silhouette.iter()) {
                flips += usize::from(a != b);
                total += 1;
            }
        }
        let rate = flips as f64 / total as f64;
        assert!((0.005..0.02).contains(&rate), "flip rate {rate} not near 1%");
    }

    #[test]
    fn truth_composition_consistent_with_bundle_pipeline() {
        let spec = GenSpec { view_count: 4, image_size: 64, seed: 17, ..GenSpec::default() };
        let (bundle, truth) = gen_bundle(&spec).unwrap();
        // round-trip through disk, then voxelize both and compare
        let dir = tempfile::tempdir().unwrap();
        crate::assets::save_bundle(&bundle, dir.path()).unwrap();
        let comp_path = dir.path().join("gt_composition.json");
        crate::assets::save_composition(&truth, &comp_path).unwrap();
        let loaded_bundle = crate::assets::load_bundle(dir.path()).unwrap();
        let loaded_truth = crate::assets::load_composition(&comp_path).unwrap();
        let (center, half) = eval_bounds(&loaded_bundle.bounds);
        let a = voxelize(&truth, 48, center, half);
        let b = voxelize(&loaded_truth, 48, center, half);
        let score = iou(&a, &b).unwrap();
        assert!(score >= 0.98, "self-consistency IoU {score}");
    }

    #[test]
    fn generated_bundles_pass_load_validation() {
        let spec = GenSpec { view_count: 3, image_size: 32, seed: 19, ..GenSpec::default() };
        let (bundle, _) = gen_bundle(&spec).unwrap();
        let dir = tempfile::tempdir().unwrap();
        crate::assets::save_bundle(&bundle, dir.path()).unwrap();
        assert!(crate::assets::load_bundle(dir.path()).is_ok());
    }
}
