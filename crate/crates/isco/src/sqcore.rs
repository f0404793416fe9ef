//! Superquadric parameterization, implicit surface, rigid transform, density.
//!
//! A primitive is stored as 11 unconstrained reals ("raw" parameters) from
//! which the constrained quantities are derived smoothly:
//!
//! - `alpha[i] = alpha_min + softplus(raw[i])` (per-axis scale, i = 0..3)
//! - `epsilon[j] = eps_min + (eps_max - eps_min) * logistic(raw[3 + j])`
//! - `euler = raw[5..8]` (intrinsic Z-Y-X rotation, radians, unconstrained)
//! - `translation = raw[8..11]` (unconstrained)
//!
//! Optimizers only ever see raw vectors, so the scale/shape constraints hold
//! by construction for any parameter values they produce.

use crate::dual::{logistic, logit, softplus, softplus_inv, Dual11, Real};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Raw-vector layout: scales, shape exponents, rotation, translation.
pub const RAW_ALPHA: usize = 0;
pub const RAW_EPSILON: usize = 3;
pub const RAW_EULER: usize = 5;
pub const RAW_TRANSLATION: usize = 8;
/// Number of unconstrained parameters per superquadric.
pub const RAW_LEN: usize = 11;

/// Ratios `|x_i| / alpha_i` are clamped below this before fractional
/// exponentiation; exponents `2/epsilon` may exceed 2 and `0^negative`
/// would poison gradients on the axis planes.
pub const RATIO_FLOOR: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum SqError {
    #[error("constrained parameter out of range: {0}")]
    OutOfRange(String),
}

/// Bounds of the constrained reparameterization.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SqBounds {
    pub alpha_min: f64,
    pub eps_min: f64,
    pub eps_max: f64,
}

impl SqBounds {
    /// Bounds for a scene with the given bounding radius:
    /// `alpha_min` is 1e-3 of the radius, shape exponents span [0.1, 1.9].
    pub fn for_scene_radius(radius: f64) -> Self {
        Self {
            alpha_min: 1e-3 * radius,
            eps_min: 0.1,
            eps_max: 1.9,
        }
    }
}

impl Default for SqBounds {
    fn default() -> Self {
        Self::for_scene_radius(1.0)
    }
}

/// One superquadric: 11 raw parameters plus the bounds that interpret them.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SuperquadricParams {
    pub raw: [f64; RAW_LEN],
    pub bounds: SqBounds,
}

impl SuperquadricParams {
    pub fn from_raw(raw: [f64; RAW_LEN], bounds: SqBounds) -> Self {
        Self { raw, bounds }
    }

    /// Build from constrained values, inverting the reparameterization.
    ///
    /// Fails if a scale is not strictly above `alpha_min` or a shape
    /// exponent is not strictly inside `(eps_min, eps_max)`.
    pub fn from_constrained(
        alpha: [f64; 3],
        epsilon: [f64; 2],
        euler: [f64; 3],
        translation: [f64; 3],
        bounds: SqBounds,
    ) -> Result<Self, SqError> {
        let mut raw = [0.0; RAW_LEN];
        for i in 0..3 {
            if alpha[i] <= bounds.alpha_min {
                return Err(SqError::OutOfRange(format!(
                    "alpha[{i}] = {} must exceed alpha_min = {}",
                    alpha[i], bounds.alpha_min
                )));
            }
            raw[RAW_ALPHA + i] = softplus_inv(alpha[i] - bounds.alpha_min);
        }
        for j in 0..2 {
            if epsilon[j] <= bounds.eps_min || epsilon[j] >= bounds.eps_max {
                return Err(SqError::OutOfRange(format!(
                    "epsilon[{j}] = {} must lie strictly in ({}, {})",
                    epsilon[j], bounds.eps_min, bounds.eps_max
                )));
            }
            let u = (epsilon[j] - bounds.eps_min) / (bounds.eps_max - bounds.eps_min);
            raw[RAW_EPSILON + j] = logit(u);
        }
        raw[RAW_EULER..RAW_EULER + 3].copy_from_slice(&euler);
        raw[RAW_TRANSLATION..RAW_TRANSLATION + 3].copy_from_slice(&translation);
        Ok(Self { raw, bounds })
    }

    /// A sphere of the given radius centered at `center`, identity rotation.
    pub fn sphere(center: [f64; 3], radius: f64, bounds: SqBounds) -> Result<Self, SqError> {
        Self::from_constrained([radius; 3], [1.0, 1.0], [0.0; 3], center, bounds)
    }

    pub fn alpha(&self) -> [f64; 3] {
        let mut a = [0.0; 3];
        for i in 0..3 {
            a[i] = self.bounds.alpha_min + softplus(self.raw[RAW_ALPHA + i]);
        }
        a
    }

    pub fn epsilon(&self) -> [f64; 2] {
        let span = self.bounds.eps_max - self.bounds.eps_min;
        let mut e = [0.0; 2];
        for j in 0..2 {
            e[j] = self.bounds.eps_min + span * logistic(self.raw[RAW_EPSILON + j]);
        }
        e
    }

    pub fn euler(&self) -> [f64; 3] {
        [self.raw[RAW_EULER], self.raw[RAW_EULER + 1], self.raw[RAW_EULER + 2]]
    }

    pub fn translation(&self) -> [f64; 3] {
        [
            self.raw[RAW_TRANSLATION],
            self.raw[RAW_TRANSLATION + 1],
            self.raw[RAW_TRANSLATION + 2],
        ]
    }

    /// Rotation matrix (row-major) of the intrinsic Z-Y-X Euler angles.
    pub fn rotation(&self) -> [[f64; 3]; 3] {
        let g = Geometry::<f64>::prepare(self);
        g.rot
    }
}

/// Ordered set of superquadrics; index equals insertion iteration.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Composition {
    pub items: Vec<SuperquadricParams>,
}

impl Composition {
    pub fn new() -> Self {
        Self { items: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn push(&mut self, p: SuperquadricParams) {
        self.items.push(p);
    }

    pub fn iter(&self) -> std::slice::Iter<'_, SuperquadricParams> {
        self.items.iter()
    }
}

impl FromIterator<SuperquadricParams> for Composition {
    fn from_iter<T: IntoIterator<Item = SuperquadricParams>>(iter: T) -> Self {
        Self { items: iter.into_iter().collect() }
    }
}

/// Constrained parameters and rotation derived once, generic over the scalar
/// so the same code produces values (`f64`) or values-with-tangents
/// ([`Dual11`] seeded per raw parameter).
pub struct Geometry<S: Real> {
    pub alpha: [S; 3],
    pub exp_outer: [S; 2], // [2/eps1, eps2/eps1]
    pub exp_inner: S,      // 2/eps2
    /// Rotation matrix rows (world -> canonical uses its transpose).
    pub rot: [[S; 3]; 3],
    pub translation: [S; 3],
}

impl Geometry<f64> {
    pub fn prepare(p: &SuperquadricParams) -> Self {
        Self::build(|i| p.raw[i], p.bounds)
    }
}

impl Geometry<Dual11> {
    /// Tangent lane `i` follows raw parameter `i`.
    pub fn prepare_seeded(p: &SuperquadricParams) -> Self {
        Self::build(|i| Dual11::variable(p.raw[i], i), p.bounds)
    }
}

impl<S: Real> Geometry<S> {
    fn build(raw: impl Fn(usize) -> S, bounds: SqBounds) -> Self {
        let alpha = [
            softplus(raw(RAW_ALPHA)) + S::constant(bounds.alpha_min),
            softplus(raw(RAW_ALPHA + 1)) + S::constant(bounds.alpha_min),
            softplus(raw(RAW_ALPHA + 2)) + S::constant(bounds.alpha_min),
        ];
        let span = bounds.eps_max - bounds.eps_min;
        let eps1 = logistic(raw(RAW_EPSILON)).scale(span) + S::constant(bounds.eps_min);
        let eps2 = logistic(raw(RAW_EPSILON + 1)).scale(span) + S::constant(bounds.eps_min);
        let two = S::constant(2.0);

        let (sa, ca) = {
            let a = raw(RAW_EULER);
            (a.sin(), a.cos())
        };
        let (sb, cb) = {
            let b = raw(RAW_EULER + 1);
            (b.sin(), b.cos())
        };
        let (sc, cc) = {
            let c = raw(RAW_EULER + 2);
            (c.sin(), c.cos())
        };
        // R = Rz(a) * Ry(b) * Rx(c)
        let rot = [
            [ca * cb, ca * sb * sc - sa * cc, ca * sb * cc + sa * sc],
            [sa * cb, sa * sb * sc + ca * cc, sa * sb * cc - ca * sc],
            [-sb, cb * sc, cb * cc],
        ];
        let translation = [
            raw(RAW_TRANSLATION),
            raw(RAW_TRANSLATION + 1),
            raw(RAW_TRANSLATION + 2),
        ];
        Self {
            alpha,
            exp_outer: [two / eps1, eps2 / eps1],
            exp_inner: two / eps2,
            rot,
            translation,
        }
    }

    /// Map a world point into the canonical frame: `R^T (x - t)`.
    #[inline]
    pub fn world_to_canonical(&self, x: [f64; 3]) -> [S; 3] {
        self.world_to_canonical_pt([S::constant(x[0]), S::constant(x[1]), S::constant(x[2])])
    }

    /// Canonical-frame map of a point that itself carries tangents (sample
    /// positions of the support-adaptive march depend on the parameters).
    #[inline]
    pub fn world_to_canonical_pt(&self, x: [S; 3]) -> [S; 3] {
        self.rotate_transpose([
            x[0] - self.translation[0],
            x[1] - self.translation[1],
            x[2] - self.translation[2],
        ])
    }

    /// `R^T v` (columns of R are rows of R^T).
    #[inline]
    fn rotate_transpose(&self, v: [S; 3]) -> [S; 3] {
        [
            self.rot[0][0] * v[0] + self.rot[1][0] * v[1] + self.rot[2][0] * v[2],
            self.rot[0][1] * v[0] + self.rot[1][1] * v[1] + self.rot[2][1] * v[2],
            self.rot[0][2] * v[0] + self.rot[1][2] * v[1] + self.rot[2][2] * v[2],
        ]
    }

    /// Implicit surface value of the canonical-frame point.
    #[inline]
    pub fn implicit(&self, xc: [S; 3]) -> S {
        let r0 = (xc[0] / self.alpha[0]).abs().max_const(RATIO_FLOOR);
        let r1 = (xc[1] / self.alpha[1]).abs().max_const(RATIO_FLOOR);
        let r2 = (xc[2] / self.alpha[2]).abs().max_const(RATIO_FLOOR);
        let inner = r0.powf(self.exp_inner) + r1.powf(self.exp_inner);
        inner.powf(self.exp_outer[1]) + r2.powf(self.exp_outer[0])
    }

    /// Density `logistic(gamma * (1 - f))` of a world point.
    #[inline]
    pub fn density(&self, x_world: [f64; 3], gamma: f64) -> S {
        let f = self.implicit(self.world_to_canonical(x_world));
        logistic((S::constant(1.0) - f).scale(gamma))
    }

    /// Density of a point with tangents.
    #[inline]
    pub fn density_pt(&self, x: [S; 3], gamma: f64) -> S {
        let f = self.implicit(self.world_to_canonical_pt(x));
        logistic((S::constant(1.0) - f).scale(gamma))
    }

    /// Intersection of the ray `o + t d` (clipped to `[t_lo, t_hi]`) with
    /// the canonical-frame box `|x_a| <= cutoff * alpha_a`, outside of which
    /// the density is below `logistic(-50)` and treated as zero. The bounds
    /// carry tangents because they move with the parameters. `None` means
    /// the whole clipped ray is in the treated-as-zero region.
    pub fn support_interval(
        &self,
        origin: [f64; 3],
        direction: [f64; 3],
        cutoff: f64,
        t_lo: f64,
        t_hi: f64,
    ) -> Option<(S, S)> {
        if t_hi <= t_lo {
            return None;
        }
        let o_c = self.world_to_canonical(origin);
        let d_c = self.rotate_transpose([
            S::constant(direction[0]),
            S::constant(direction[1]),
            S::constant(direction[2]),
        ]);
        let mut lo = S::constant(t_lo);
        let mut hi = S::constant(t_hi);
        for a in 0..3 {
            let half = self.alpha[a].scale(cutoff);
            if d_c[a].value().abs() < 1e-12 {
                if o_c[a].value().abs() > half.value() {
                    return None; // parallel to the slab and outside it
                }
                continue;
            }
            let t1 = (-half - o_c[a]) / d_c[a];
            let t2 = (half - o_c[a]) / d_c[a];
            let (enter, exit) = if t1.value() <= t2.value() { (t1, t2) } else { (t2, t1) };
            if enter.value() > lo.value() {
                lo = enter;
            }
            if exit.value() < hi.value() {
                hi = exit;
            }
            if hi.value() <= lo.value() {
                return None;
            }
        }
        Some((lo, hi))
    }

    /// Cheap lower-bound test: when every ratio `|x_i|/alpha_i` that exceeds
    /// `cutoff` forces `gamma * (f - 1) > 50`, the density is below ~2e-22
    /// and is treated as exactly zero (with zero tangent). The threshold is
    /// part of the implemented estimator, so finite differences of the same
    /// code agree with the analytic derivative.
    #[inline]
    pub fn beyond_cutoff(&self, x_world: [f64; 3], cutoff: f64) -> bool {
        let dx = x_world[0] - self.translation[0].value();
        let dy = x_world[1] - self.translation[1].value();
        let dz = x_world[2] - self.translation[2].value();
        let r = self.rotdot_value(dx, dy, dz);
        let a = [
            self.alpha[0].value(),
            self.alpha[1].value(),
            self.alpha[2].value(),
        ];
        r[0].abs() > cutoff * a[0] || r[1].abs() > cutoff * a[1] || r[2].abs() > cutoff * a[2]
    }

    #[inline]
    fn rotdot_value(&self, dx: f64, dy: f64, dz: f64) -> [f64; 3] {
        let m = |i: usize, j: usize| self.rot[i][j].value();
        [
            m(0, 0) * dx + m(1, 0) * dy + m(2, 0) * dz,
            m(0, 1) * dx + m(1, 1) * dy + m(2, 1) * dz,
            m(0, 2) * dx + m(1, 2) * dy + m(2, 2) * dz,
        ]
    }
}

/// Ratio cutoff such that a point with any canonical ratio above it has
/// `gamma * (f - 1) > margin`, i.e. a density below `logistic(-margin)`.
pub fn density_cutoff_ratio(gamma: f64, bounds: SqBounds) -> f64 {
    let margin = 50.0;
    let f_needed = 1.0 + margin / gamma;
    // f >= ratio^(2/eps_max) for the dominant axis, so invert that bound
    f_needed.powf(bounds.eps_max / 2.0).max(2.0)
}

/// Implicit surface value `f(x; theta)` of a canonical-frame point.
///
/// `f < 1` inside, `= 1` on the surface, `> 1` outside.
pub fn implicit_value(x: [f64; 3], p: &SuperquadricParams) -> f64 {
    let g = Geometry::<f64>::prepare(p);
    g.implicit([x[0], x[1], x[2]])
}

/// World point into the primitive's canonical frame.
pub fn world_to_canonical(x_world: [f64; 3], p: &SuperquadricParams) -> [f64; 3] {
    let g = Geometry::<f64>::prepare(p);
    g.world_to_canonical(x_world)
}

/// Canonical point back to world: `R x + t` (the forward rigid map).
pub fn canonical_to_world(x_canon: [f64; 3], p: &SuperquadricParams) -> [f64; 3] {
    let g = Geometry::<f64>::prepare(p);
    let r = g.rot;
    [
        r[0][0] * x_canon[0] + r[0][1] * x_canon[1] + r[0][2] * x_canon[2] + g.translation[0],
        r[1][0] * x_canon[0] + r[1][1] * x_canon[1] + r[1][2] * x_canon[2] + g.translation[1],
        r[2][0] * x_canon[0] + r[2][1] * x_canon[1] + r[2][2] * x_canon[2] + g.translation[2],
    ]
}

/// Soft occupancy in (0, 1): `logistic(gamma * (1 - f(x)))` after the rigid
/// transform. Strictly decreasing in `f`.
pub fn density(x_world: [f64; 3], p: &SuperquadricParams, gamma: f64) -> f64 {
    let g = Geometry::<f64>::prepare(p);
    g.density(x_world, gamma)
}

/// Hard inside test used by occupancy metrics: `f(x) < 1` for the exact
/// implicit function, independent of any gamma smoothing.
pub fn is_inside(x_world: [f64; 3], p: &SuperquadricParams) -> bool {
    let g = Geometry::<f64>::prepare(p);
    g.implicit(g.world_to_canonical(x_world)) < 1.0
}
