//! Voxel-grid error gradients and placement of new superquadrics.
//!
//! The composition's density is baked into a dense grid, silhouettes are
//! re-rendered by trilinearly resampling that grid along rays, and the loss
//! gradient with respect to every voxel value is accumulated through the
//! interpolation weights. Voxels whose density increase would reduce the
//! loss mark unexplained object regions; the next primitive is seeded as a
//! sphere at the strongest such voxel after Gaussian smoothing.

use crate::camrays::{pixel_center_ray, CameraView, Ray, SceneBounds};
use crate::objective::MASK_EPS;
use crate::render::{ray_rng, stratified_samples, RayKey};
use crate::sqcore::{density_cutoff_ratio, Composition, Geometry, SqBounds, SuperquadricParams};
use rayon::prelude::*;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SeedError {
    #[error("error field is uniformly ~0 (max = {max:.3e}); nothing left to explain")]
    DegenerateErrorField { max: f64 },
}

/// Cubic lattice of scalars with world placement.
///
/// Voxel `(i, j, k)` has its center at `center + (idx - (n-1)/2) * spacing`
/// per axis; the lattice extent is `(n - 1) * spacing`.
#[derive(Debug, Clone, PartialEq)]
pub struct VoxelGrid {
    pub n: usize,
    pub center: [f64; 3],
    pub spacing: f64,
    pub values: Vec<f64>,
}

impl VoxelGrid {
    /// Zero-filled grid sized to enclose the scene sphere with 5% margin,
    /// i.e. extent `2.1 * radius` per axis.
    pub fn enclosing(scene: &SceneBounds, n: usize) -> Self {
        assert!(n >= 2);
        let spacing = 2.1 * scene.radius / (n - 1) as f64;
        Self { n, center: scene.center, spacing, values: vec![0.0; n * n * n] }
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        (i * self.n + j) * self.n + k
    }

    #[inline]
    pub fn voxel_center(&self, i: usize, j: usize, k: usize) -> [f64; 3] {
        let half = (self.n - 1) as f64 / 2.0;
        [
            self.center[0] + (i as f64 - half) * self.spacing,
            self.center[1] + (j as f64 - half) * self.spacing,
            self.center[2] + (k as f64 - half) * self.spacing,
        ]
    }

    /// First lattice coordinate (center of voxel (0,0,0)).
    fn origin(&self) -> [f64; 3] {
        self.voxel_center(0, 0, 0)
    }

    pub fn max_value(&self) -> f64 {
        self.values.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v))
    }

    pub fn argmax(&self) -> (usize, usize, usize) {
        let mut best = (0, 0, 0);
        let mut best_v = f64::NEG_INFINITY;
        for i in 0..self.n {
            for j in 0..self.n {
                for k in 0..self.n {
                    let v = self.values[self.index(i, j, k)];
                    if v > best_v {
                        best_v = v;
                        best = (i, j, k);
                    }
                }
            }
        }
        best
    }
}

/// Bake the composition's density (summed per primitive, clamped at 1) at
/// every voxel center.
pub fn eval_grid_density(s: &Composition, mut grid: VoxelGrid, gamma: f64) -> VoxelGrid {
    let geoms: Vec<(Geometry<f64>, f64)> = s
        .iter()
        .map(|p| (Geometry::<f64>::prepare(p), density_cutoff_ratio(gamma, p.bounds)))
        .collect();
    let n = grid.n;
    let centers: Vec<[f64; 3]> = (0..n * n * n)
        .map(|idx| {
            let k = idx % n;
            let j = (idx / n) % n;
            let i = idx / (n * n);
            grid.voxel_center(i, j, k)
        })
        .collect();
    grid.values = centers
        .par_iter()
        .map(|&x| {
            let mut sum = 0.0;
            for (geom, cutoff) in &geoms {
                if geom.beyond_cutoff(x, *cutoff) {
                    continue;
                }
                sum += geom.density(x, gamma);
            }
            sum.min(1.0)
        })
        .collect();
    grid
}

/// Trilinear reconstruction of the grid at a world point; zero outside the
/// kernel's support (one spacing beyond the outermost voxel centers).
pub fn trilinear_sample(grid: &VoxelGrid, x: [f64; 3]) -> f64 {
    let (corner, weights) = match cell_of(grid, x) {
        Some(c) => c,
        None => return 0.0,
    };
    let mut out = 0.0;
    for (di, dj, dk, w) in corner_weights(&weights) {
        if let Some(idx) = voxel_index(grid, corner, di, dj, dk) {
            out += grid.values[idx] * w;
        }
    }
    out
}

/// Lattice cell containing `x`: lower corner (may be -1 at the low boundary)
/// and fractional offsets per axis. `None` when the point is outside the
/// kernel support entirely.
fn cell_of(grid: &VoxelGrid, x: [f64; 3]) -> Option<([i64; 3], [f64; 3])> {
    let origin = grid.origin();
    let mut corner = [0i64; 3];
    let mut frac = [0.0; 3];
    for a in 0..3 {
        let u = (x[a] - origin[a]) / grid.spacing;
        let f = u.floor();
        if u < -1.0 || u > grid.n as f64 {
            return None;
        }
        corner[a] = f as i64;
        frac[a] = u - f;
    }
    Some((corner, frac))
}

/// The 8 corner offsets with their trilinear weights.
fn corner_weights(frac: &[f64; 3]) -> [(i64, i64, i64, f64); 8] {
    let (fx, fy, fz) = (frac[0], frac[1], frac[2]);
    [
        (0, 0, 0, (1.0 - fx) * (1.0 - fy) * (1.0 - fz)),
        (0, 0, 1, (1.0 - fx) * (1.0 - fy) * fz),
        (0, 1, 0, (1.0 - fx) * fy * (1.0 - fz)),
        (0, 1, 1, (1.0 - fx) * fy * fz),
        (1, 0, 0, fx * (1.0 - fy) * (1.0 - fz)),
        (1, 0, 1, fx * (1.0 - fy) * fz),
        (1, 1, 0, fx * fy * (1.0 - fz)),
        (1, 1, 1, fx * fy * fz),
    ]
}

fn voxel_index(grid: &VoxelGrid, corner: [i64; 3], di: i64, dj: i64, dk: i64) -> Option<usize> {
    let i = corner[0] + di;
    let j = corner[1] + dj;
    let k = corner[2] + dk;
    let n = grid.n as i64;
    if i < 0 || j < 0 || k < 0 || i >= n || j >= n || k >= n {
        None
    } else {
        Some(grid.index(i as usize, j as usize, k as usize))
    }
}

/// Rays used for the grid passes: the configured budget per view, drawn
/// uniformly over silhouette-interior pixels (the lambda = 0 loss gives
/// background rays zero weight, so they carry no gradient).
pub(crate) fn inside_rays(
    views: &[CameraView],
    rays_per_view: usize,
    scene: &SceneBounds,
    rng: &mut rand_chacha::ChaCha8Rng,
) -> Vec<(RayKey, Ray, f64)> {
    use rand::Rng;
    let mut out = Vec::with_capacity(rays_per_view * views.len());
    for (vi, view) in views.iter().enumerate() {
        let inside: Vec<usize> = (0..view.pixel_count())
            .filter(|&p| view.target(p) >= MASK_EPS)
            .collect();
        if inside.is_empty() {
            continue;
        }
        for _ in 0..rays_per_view {
            let pixel = inside[rng.gen_range(0..inside.len())];
            let (x, y) = (pixel % view.width, pixel / view.width);
            let ray = pixel_center_ray(view, x, y, scene).expect("validated intrinsics");
            out.push((
                RayKey { view: vi as u32, pixel: pixel as u32 },
                ray,
                view.target(pixel),
            ));
        }
    }
    out
}

/// Loss of the grid-resampled render over the given rays with the
/// lambda = 0 weighting (only silhouette-interior rays contribute).
///
/// Exposed so the finite-difference oracle can evaluate the exact same
/// forward path the gradient is derived from.
pub fn grid_render_loss(
    grid: &VoxelGrid,
    rays: &[(RayKey, Ray, f64)],
    samples_per_ray: usize,
    seed: u64,
) -> f64 {
    rays.iter()
        .map(|(key, ray, target)| {
            if *target < MASK_EPS {
                return 0.0;
            }
            let mut rng = ray_rng(seed, *key);
            let samples = stratified_samples(ray, samples_per_ray, &mut rng);
            let mut tau = 0.0;
            for t in samples.ts.iter() {
                let p = ray.origin + *t * ray.direction;
                tau += trilinear_sample(grid, [p.x, p.y, p.z]) * samples.weight;
            }
            let d = 1.0 - (-tau).exp();
            (d - target) * (d - target)
        })
        .sum()
}

/// Gradient of [`grid_render_loss`] with respect to every voxel value.
///
/// The march estimator telescopes to `D = 1 - exp(-sum_j sigma_j w)`, so
/// `dD/dsigma_j = (1 - D) * w`; that factor is distributed onto the 8
/// voxels around each sample through the trilinear weights.
pub fn grid_error_gradient(
    grid: &VoxelGrid,
    rays: &[(RayKey, Ray, f64)],
    samples_per_ray: usize,
    seed: u64,
) -> VoxelGrid {
    let n = grid.n;
    let chunks: Vec<Vec<f64>> = rays
        .par_chunks(256)
        .map(|chunk| {
            let mut acc = vec![0.0; n * n * n];
            for (key, ray, target) in chunk {
                if *target < MASK_EPS {
                    continue;
                }
                let mut rng = ray_rng(seed, *key);
                let samples = stratified_samples(ray, samples_per_ray, &mut rng);
                if samples.ts.is_empty() {
                    continue;
                }
                let mut tau = 0.0;
                for t in samples.ts.iter() {
                    let p = ray.origin + *t * ray.direction;
                    tau += trilinear_sample(grid, [p.x, p.y, p.z]) * samples.weight;
                }
                let trans = (-tau).exp();
                let d = 1.0 - trans;
                let scale = 2.0 * (d - target) * trans * samples.weight;
                for t in samples.ts.iter() {
                    let p = ray.origin + *t * ray.direction;
                    if let Some((corner, frac)) = cell_of(grid, [p.x, p.y, p.z]) {
                        for (di, dj, dk, w) in corner_weights(&frac) {
                            if let Some(idx) = voxel_index(grid, corner, di, dj, dk) {
                                acc[idx] += scale * w;
                            }
                        }
                    }
                }
            }
            acc
        })
        .collect();

    let mut out = VoxelGrid {
        n,
        center: grid.center,
        spacing: grid.spacing,
        values: vec![0.0; n * n * n],
    };
    for chunk in chunks {
        for (o, c) in out.values.iter_mut().zip(chunk.iter()) {
            *o += c;
        }
    }
    out
}

/// Separable Gaussian blur with kernel radius `ceil(3 sigma)`, zero padding.
pub fn gaussian_smooth(grid: &VoxelGrid, sigma_voxels: f64) -> VoxelGrid {
    if sigma_voxels <= 0.0 {
        return grid.clone();
    }
    let radius = (3.0 * sigma_voxels).ceil() as i64;
    let mut kernel = Vec::with_capacity((2 * radius + 1) as usize);
    for o in -radius..=radius {
        kernel.push((-(o as f64).powi(2) / (2.0 * sigma_voxels * sigma_voxels)).exp());
    }
    let norm: f64 = kernel.iter().sum();
    for k in kernel.iter_mut() {
        *k /= norm;
    }

    let n = grid.n as i64;
    let mut src = grid.values.clone();
    let mut dst = vec![0.0; src.len()];
    // strides for axes (i, j, k) in the flat layout
    let strides = [(grid.n * grid.n) as i64, grid.n as i64, 1i64];
    for axis in 0..3 {
        let stride = strides[axis];
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    let coord = [i, j, k][axis];
                    let flat = (i * strides[0] + j * strides[1] + k) as usize;
                    let mut acc = 0.0;
                    for (ki, w) in kernel.iter().enumerate() {
                        let o = ki as i64 - radius;
                        let c = coord + o;
                        if c < 0 || c >= n {
                            continue;
                        }
                        acc += w * src[(flat as i64 + o * stride) as usize];
                    }
                    dst[flat] = acc;
                }
            }
        }
        std::mem::swap(&mut src, &mut dst);
    }
    VoxelGrid { n: grid.n, center: grid.center, spacing: grid.spacing, values: src }
}

/// Positive part of the descent direction: voxels where adding density
/// lowers the loss have negative gradient, so the placement field is
/// `max(-gradient, 0)`.
pub fn descent_field(error_grid: &VoxelGrid) -> VoxelGrid {
    VoxelGrid {
        n: error_grid.n,
        center: error_grid.center,
        spacing: error_grid.spacing,
        values: error_grid.values.iter().map(|&g| (-g).max(0.0)).collect(),
    }
}

/// Propose the next primitive: a sphere at the argmax of the Gaussian-
/// smoothed descent field.
pub fn propose_init(
    error_grid: &VoxelGrid,
    smoothing_sigma: f64,
    scene_radius: f64,
    bounds: SqBounds,
) -> Result<SuperquadricParams, SeedError> {
    let smoothed = gaussian_smooth(&descent_field(error_grid), smoothing_sigma);
    sphere_at_peak(&smoothed, scene_radius, bounds)
}

/// Sphere (radius 0.1x the scene radius, identity rotation) at the argmax
/// of an already-smoothed placement field.
pub fn sphere_at_peak(
    smoothed: &VoxelGrid,
    scene_radius: f64,
    bounds: SqBounds,
) -> Result<SuperquadricParams, SeedError> {
    let max = smoothed.max_value();
    if !(max > 1e-12) {
        return Err(SeedError::DegenerateErrorField { max });
    }
    let (i, j, k) = smoothed.argmax();
    let center = smoothed.voxel_center(i, j, k);
    SuperquadricParams::sphere(center, 0.1 * scene_radius, bounds)
        .map_err(|_| SeedError::DegenerateErrorField { max })
}

/// Smoothed descent field and its peak value; the fit loop reads the peak
/// for early stopping.
pub fn smoothed_descent_peak(error_grid: &VoxelGrid, smoothing_sigma: f64) -> (VoxelGrid, f64) {
    let smoothed = gaussian_smooth(&descent_field(error_grid), smoothing_sigma);
    let max = smoothed.max_value();
    (smoothed, max)
}

/// Greatest-first local maxima of the field with a minimum separation
/// (non-maximum suppression); used by the joint baseline to place all
/// primitives at once. Falls back to the highest remaining voxels when
/// fewer than `count` separated peaks exist.
pub fn top_peaks(field: &VoxelGrid, count: usize, nms_radius_voxels: f64) -> Vec<[f64; 3]> {
    let n = field.n;
    let mut order: Vec<usize> = (0..n * n * n).collect();
    order.sort_by(|&a, &b| field.values[b].total_cmp(&field.values[a]));
    let coords = |idx: usize| {
        let k = idx % n;
        let j = (idx / n) % n;
        let i = idx / (n * n);
        (i as f64, j as f64, k as f64)
    };
    let mut picked: Vec<usize> = Vec::with_capacity(count);
    let r2 = nms_radius_voxels * nms_radius_voxels;
    for &idx in &order {
        if picked.len() == count {
            break;
        }
        if field.values[idx] <= 0.0 {
            break;
        }
        let (i, j, k) = coords(idx);
        let far_enough = picked.iter().all(|&p| {
            let (pi, pj, pk) = coords(p);
            (i - pi).powi(2) + (j - pj).powi(2) + (k - pk).powi(2) >= r2
        });
        if far_enough {
            picked.push(idx);
        }
    }
    // not enough separated peaks: top up with the best unused voxels
    for &idx in &order {
        if picked.len() == count {
            break;
        }
        if !picked.contains(&idx) {
            picked.push(idx);
        }
    }
    picked
        .into_iter()
        .map(|idx| {
            let k = idx % n;
            let j = (idx / n) % n;
            let i = idx / (n * n);
            field.voxel_center(i, j, k)
        })
        .collect()
}
