//! Volumetric IoU and Chamfer-L1 between a composition and a reference.
//!
//! Occupancy is a hard inside test on the exact implicit function (no gamma
//! smoothing). Chamfer is `0.5 * (mean_A min||a-b|| + mean_B min||b-a||)`
//! with Euclidean point distances; nearest neighbors come from a kd-tree
//! whose results are exact (verified against brute force).

use crate::camrays::SceneBounds;
use crate::sqcore::{canonical_to_world, implicit_value, is_inside, Composition, SuperquadricParams};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("occupancy grids have different geometry")]
    GridMismatch,
    #[error("composition has no primitives")]
    EmptyComposition,
    #[error("point set is empty")]
    EmptyPointSet,
}

/// Cell-centered boolean occupancy over a cube.
#[derive(Debug, Clone, PartialEq)]
pub struct OccupancyGrid {
    pub m: usize,
    pub center: [f64; 3],
    pub half_extent: f64,
    pub occupied: Vec<bool>,
}

impl OccupancyGrid {
    fn cell_center(&self, i: usize, j: usize, k: usize) -> [f64; 3] {
        let step = 2.0 * self.half_extent / self.m as f64;
        let lo = |c: f64| c - self.half_extent + step / 2.0;
        [
            lo(self.center[0]) + i as f64 * step,
            lo(self.center[1]) + j as f64 * step,
            lo(self.center[2]) + k as f64 * step,
        ]
    }

    pub fn count(&self) -> usize {
        self.occupied.iter().filter(|&&o| o).count()
    }

    pub fn occupied_fraction(&self) -> f64 {
        self.count() as f64 / self.occupied.len() as f64
    }

    fn same_geometry(&self, other: &Self) -> bool {
        self.m == other.m
            && self.center == other.center
            && self.half_extent == other.half_extent
    }
}

/// Default evaluation cube: half-extent 1.2x the scene radius.
pub fn eval_bounds(scene: &SceneBounds) -> ([f64; 3], f64) {
    (scene.center, 1.2 * scene.radius)
}

/// Voxelize the composition at resolution `m` over the given cube: a cell is
/// occupied iff its center lies strictly inside at least one primitive.
pub fn voxelize(s: &Composition, m: usize, center: [f64; 3], half_extent: f64) -> OccupancyGrid {
    assert!(m >= 2);
    let mut grid = OccupancyGrid { m, center, half_extent, occupied: vec![false; m * m * m] };
    let prims: Vec<&SuperquadricParams> = s.iter().collect();
    let cells: Vec<bool> = (0..m * m * m)
        .into_par_iter()
        .map(|idx| {
            let k = idx % m;
            let j = (idx / m) % m;
            let i = idx / (m * m);
            let x = grid.cell_center(i, j, k);
            prims.iter().any(|p| is_inside(x, p))
        })
        .collect();
    grid.occupied = cells;
    grid
}

/// Intersection over union of two occupancy grids on identical geometry.
/// Two empty grids have IoU 1.
pub fn iou(a: &OccupancyGrid, b: &OccupancyGrid) -> Result<f64, MetricsError> {
    if !a.same_geometry(b) {
        return Err(MetricsError::GridMismatch);
    }
    let mut inter = 0usize;
    let mut union = 0usize;
    for (&x, &y) in a.occupied.iter().zip(b.occupied.iter()) {
        inter += usize::from(x && y);
        union += usize::from(x || y);
    }
    Ok(if union == 0 { 1.0 } else { inter as f64 / union as f64 })
}

/// Surface point of the canonical superquadric at angles `(eta, omega)`.
///
/// The signed-power parameterization satisfies `f(x) = 1` identically:
/// `x = (a1 c_eta^e1 c_om^e2, a2 c_eta^e1 s_om^e2, a3 s_eta^e1)` with
/// `c^e = sign(c) |c|^e`.
fn parametric_point(p: &SuperquadricParams, eta: f64, omega: f64) -> [f64; 3] {
    let alpha = p.alpha();
    let eps = p.epsilon();
    let sp = |v: f64, e: f64| v.signum() * v.abs().powf(e);
    let (se, ce) = eta.sin_cos();
    let (so, co) = omega.sin_cos();
    [
        alpha[0] * sp(ce, eps[0]) * sp(co, eps[1]),
        alpha[1] * sp(ce, eps[0]) * sp(so, eps[1]),
        alpha[2] * sp(se, eps[0]),
    ]
}

/// Local surface area element `|dP/deta x dP/domega|`, by central
/// differences of the parameterization (metrics only, never differentiated).
fn area_element(p: &SuperquadricParams, eta: f64, omega: f64) -> f64 {
    let h = 1e-5;
    let a = parametric_point(p, eta + h, omega);
    let b = parametric_point(p, eta - h, omega);
    let c = parametric_point(p, eta, omega + h);
    let d = parametric_point(p, eta, omega - h);
    let de = [(a[0] - b[0]) / (2.0 * h), (a[1] - b[1]) / (2.0 * h), (a[2] - b[2]) / (2.0 * h)];
    let do_ = [(c[0] - d[0]) / (2.0 * h), (c[1] - d[1]) / (2.0 * h), (c[2] - d[2]) / (2.0 * h)];
    let cx = de[1] * do_[2] - de[2] * do_[1];
    let cy = de[2] * do_[0] - de[0] * do_[2];
    let cz = de[0] * do_[1] - de[1] * do_[0];
    (cx * cx + cy * cy + cz * cz).sqrt()
}

/// Area scan over the (eta, omega) domain: total area estimate and the peak
/// area element (for rejection sampling).
fn area_scan(p: &SuperquadricParams) -> (f64, f64) {
    let ne = 24;
    let no = 48;
    let de = std::f64::consts::PI / ne as f64;
    let dom = 2.0 * std::f64::consts::PI / no as f64;
    let mut total = 0.0;
    let mut peak = 0.0_f64;
    for i in 0..ne {
        let eta = -std::f64::consts::FRAC_PI_2 + (i as f64 + 0.5) * de;
        for j in 0..no {
            let omega = -std::f64::consts::PI + (j as f64 + 0.5) * dom;
            let a = area_element(p, eta, omega);
            total += a * de * dom;
            peak = peak.max(a);
        }
    }
    (total, peak)
}

/// Sample `n` points on the union surface: primitives are chosen with
/// probability proportional to their estimated area, points are drawn
/// area-uniformly on each primitive by rejection, and points strictly inside
/// any other primitive are discarded.
pub fn sample_surface(
    s: &Composition,
    n: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<[f64; 3]>, MetricsError> {
    assert!(n >= 1);
    if s.is_empty() {
        return Err(MetricsError::EmptyComposition);
    }
    let scans: Vec<(f64, f64)> = s.iter().map(area_scan).collect();
    let total_area: f64 = scans.iter().map(|(a, _)| a).sum();
    let mut points = Vec::with_capacity(n);
    let max_attempts = n.saturating_mul(1000);
    let mut attempts = 0usize;
    while points.len() < n && attempts < max_attempts {
        attempts += 1;
        // area-proportional primitive choice
        let mut pick = rng.gen_range(0.0..total_area);
        let mut pi = 0;
        for (i, (a, _)) in scans.iter().enumerate() {
            if pick < *a {
                pi = i;
                break;
            }
            pick -= a;
            pi = i;
        }
        let p = &s.items[pi];
        let eta = rng.gen_range(-std::f64::consts::FRAC_PI_2..std::f64::consts::FRAC_PI_2);
        let omega = rng.gen_range(-std::f64::consts::PI..std::f64::consts::PI);
        // area-uniform rejection; 1.2 headroom over the scanned peak
        let a = area_element(p, eta, omega);
        if rng.gen_range(0.0..scans[pi].1 * 1.2) > a {
            continue;
        }
        let world = canonical_to_world(parametric_point(p, eta, omega), p);
        let hidden = s.iter().enumerate().any(|(qi, q)| {
            qi != pi && implicit_value(crate::sqcore::world_to_canonical(world, q), q) < 1.0 - 1e-6
        });
        if !hidden {
            points.push(world);
        }
    }
    if points.is_empty() {
        return Err(MetricsError::EmptyPointSet);
    }
    Ok(points)
}

// --- exact nearest neighbors -------------------------------------------

/// Compact 3D kd-tree over an owned point slice; queries are exact.
struct KdTree<'a> {
    points: &'a [[f64; 3]],
    /// index permutation arranged as a balanced implicit tree
    nodes: Vec<u32>,
    /// split axis per node in `nodes` order
    axes: Vec<u8>,
}

impl<'a> KdTree<'a> {
    fn build(points: &'a [[f64; 3]]) -> Self {
        let mut idx: Vec<u32> = (0..points.len() as u32).collect();
        let mut nodes = vec![0u32; points.len()];
        let mut axes = vec![0u8; points.len()];
        fn split(
            points: &[[f64; 3]],
            idx: &mut [u32],
            nodes: &mut [u32],
            axes: &mut [u8],
            node: usize,
            depth: u8,
        ) {
            if idx.is_empty() {
                return;
            }
            let axis = (depth % 3) as usize;
            let mid = idx.len() / 2;
            idx.select_nth_unstable_by(mid, |&a, &b| {
                points[a as usize][axis].total_cmp(&points[b as usize][axis])
            });
            nodes[node] = idx[mid];
            axes[node] = axis as u8;
            let (lo, rest) = idx.split_at_mut(mid);
            let hi = &mut rest[1..];
            split(points, lo, nodes, axes, 2 * node + 1, depth + 1);
            split(points, hi, nodes, axes, 2 * node + 2, depth + 1);
        }
        // implicit layout needs padded capacity for unbalanced borders
        let cap = points.len().next_power_of_two() * 2;
        nodes.resize(cap, u32::MAX);
        axes.resize(cap, 0);
        split(points, &mut idx, &mut nodes, &mut axes, 0, 0);
        Self { points, nodes, axes }
    }

    fn nearest_sq(&self, q: [f64; 3]) -> f64 {
        let mut best = f64::INFINITY;
        self.search(0, q, &mut best);
        best
    }

    fn search(&self, node: usize, q: [f64; 3], best: &mut f64) {
        if node >= self.nodes.len() || self.nodes[node] == u32::MAX {
            return;
        }
        let p = self.points[self.nodes[node] as usize];
        let d2 = (p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2) + (p[2] - q[2]).powi(2);
        if d2 < *best {
            *best = d2;
        }
        let axis = self.axes[node] as usize;
        let diff = q[axis] - p[axis];
        let (near, far) = if diff < 0.0 {
            (2 * node + 1, 2 * node + 2)
        } else {
            (2 * node + 2, 2 * node + 1)
        };
        self.search(near, q, best);
        if diff * diff < *best {
            self.search(far, q, best);
        }
    }
}

/// Symmetric Chamfer distance with L2 point norms:
/// `0.5 * (mean_A min||a - b|| + mean_B min||b - a||)`.
pub fn chamfer_l1(a: &[[f64; 3]], b: &[[f64; 3]]) -> Result<f64, MetricsError> {
    if a.is_empty() || b.is_empty() {
        return Err(MetricsError::EmptyPointSet);
    }
    let one_sided = |from: &[[f64; 3]], to: &[[f64; 3]]| -> f64 {
        let tree = KdTree::build(to);
        let sum: f64 = from.par_iter().map(|&q| tree.nearest_sq(q).sqrt()).sum();
        sum / from.len() as f64
    };
    Ok(0.5 * (one_sided(a, b) + one_sided(b, a)))
}
