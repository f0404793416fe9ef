//! Reconstruct a 3D object as an ordered composition of superquadrics from
//! multi-view 2D silhouettes with known camera poses.
//!
//! The pipeline fits one primitive at a time: a voxel grid of loss gradients
//! locates the region worst explained by the current composition, a sphere is
//! seeded there, and all parameters are jointly refined through a
//! differentiable ray-marched silhouette renderer against the input masks.
//!
//! Module map:
//!
//! - [`sqcore`] — superquadric parameterization, implicit surface, density
//! - [`camrays`] — pinhole cameras, per-pixel rays, near/far bounds
//! - [`render`] — stratified ray marching of primitives and compositions
//! - [`objective`] — weighted silhouette loss and importance ray sampling
//! - [`grad`] — exact parameter gradients plus a finite-difference oracle
//! - [`seeder`] — voxel-grid error gradients and new-primitive placement
//! - [`fitter`] — the iterative outer loop, joint baseline, Adam, schedule
//! - [`metrics`] — volumetric IoU and Chamfer distance
//! - [`assets`] — scene bundles, composition files, mesh export
//! - [`synthgen`] — synthetic ground-truth scenes and views

pub mod assets;
pub mod camrays;
pub mod dual;
pub mod fitter;
pub mod grad;
pub mod metrics;
pub mod objective;
pub mod render;
pub mod seeder;
pub mod sqcore;
pub mod synthgen;
#[doc(hidden)]
pub mod test_support;

pub use camrays::{CameraView, Ray, SceneBounds};
pub use fitter::{fit_isco, fit_sco, FitConfig, FitTrace};
pub use render::RenderConfig;
pub use sqcore::{Composition, SqBounds, SuperquadricParams};
