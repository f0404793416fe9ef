//! File formats: scene bundles (masks + poses), composition files, mesh
//! export, and voxel-grid debug dumps.
//!
//! A bundle directory holds one `scene.json` manifest plus one 8-bit
//! grayscale PNG mask per view:
//!
//! ```json
//! {
//!   "views": [{"mask": "v000.png", "fx": .., "fy": .., "cx": .., "cy": ..,
//!              "width": .., "height": .., "cam_to_world": [16 row-major]}],
//!   "bounds": {"center": [0,0,0], "radius": 1.0},
//!   "name": "scene", "seed": 7
//! }
//! ```
//!
//! Compositions are JSON with a schema version, shared parameter bounds, and
//! per-primitive constrained values alongside the raw vector (the raw vector
//! is authoritative; constrained fields are validated on load).

use crate::camrays::{CameraView, SceneBounds};
use crate::seeder::VoxelGrid;
use crate::sqcore::{Composition, SqBounds, SuperquadricParams, RAW_LEN};
use nalgebra::Matrix4;
use serde::{Deserialize, Serialize};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use thiserror::Error;

pub const COMPOSITION_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum AssetError {
    #[error("manifest error at {path}: {message}")]
    ManifestParse { path: PathBuf, message: String },
    #[error("failed to decode image {path}: {message}")]
    ImageDecode { path: PathBuf, message: String },
    #[error("view {view}: mask is {got_w}x{got_h} but the manifest declares {want_w}x{want_h}")]
    DimensionMismatch { view: usize, got_w: u32, got_h: u32, want_w: u32, want_h: u32 },
    #[error("view {view}: camera pose is not a rigid transform ({message})")]
    NonRigidPose { view: usize, message: String },
    #[error("composition schema version {got} unsupported (expected {want})")]
    SchemaVersionMismatch { got: u32, want: u32 },
    #[error("composition validation failed: {0}")]
    Validation(String),
    #[error("composition has no primitives")]
    EmptyComposition,
    #[error("io error at {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> AssetError + '_ {
    move |source| AssetError::Io { path: path.to_path_buf(), source }
}

/// The full multi-view input: views with silhouettes, scene bounds, metadata.
#[derive(Debug, Clone)]
pub struct SceneBundle {
    pub views: Vec<CameraView>,
    pub bounds: SceneBounds,
    pub name: String,
    pub seed: u64,
}

#[derive(Debug, Serialize, Deserialize)]
struct ViewRecord {
    mask: String,
    fx: f64,
    fy: f64,
    cx: f64,
    cy: f64,
    width: u32,
    height: u32,
    cam_to_world: Vec<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
struct BundleManifest {
    views: Vec<ViewRecord>,
    bounds: SceneBounds,
    name: String,
    seed: u64,
}

fn check_rigid(m: &Matrix4<f64>, view: usize) -> Result<(), AssetError> {
    let r = m.fixed_view::<3, 3>(0, 0);
    let rtr = r.transpose() * r;
    let mut max_dev = 0.0_f64;
    for i in 0..3 {
        for j in 0..3 {
            let expect = if i == j { 1.0 } else { 0.0 };
            max_dev = max_dev.max((rtr[(i, j)] - expect).abs());
        }
    }
    if max_dev > 1e-6 {
        return Err(AssetError::NonRigidPose {
            view,
            message: format!("R^T R deviates from identity by {max_dev:.3e}"),
        });
    }
    if r.determinant() < 0.0 {
        return Err(AssetError::NonRigidPose {
            view,
            message: "rotation block has determinant -1 (reflection)".into(),
        });
    }
    let last = [m[(3, 0)], m[(3, 1)], m[(3, 2)], m[(3, 3)]];
    if last[0].abs() > 1e-9 || last[1].abs() > 1e-9 || last[2].abs() > 1e-9
        || (last[3] - 1.0).abs() > 1e-9
    {
        return Err(AssetError::NonRigidPose {
            view,
            message: format!("last row is {last:?}, expected [0,0,0,1]"),
        });
    }
    Ok(())
}

/// Load a bundle from its directory (expects `scene.json` inside).
pub fn load_bundle(dir: &Path) -> Result<SceneBundle, AssetError> {
    let manifest_path = dir.join("scene.json");
    let text = fs::read_to_string(&manifest_path).map_err(|e| AssetError::ManifestParse {
        path: manifest_path.clone(),
        message: e.to_string(),
    })?;
    let manifest: BundleManifest =
        serde_json::from_str(&text).map_err(|e| AssetError::ManifestParse {
            path: manifest_path.clone(),
            message: e.to_string(),
        })?;
    if manifest.views.is_empty() {
        return Err(AssetError::ManifestParse {
            path: manifest_path.clone(),
            message: "bundle has no views".into(),
        });
    }
    let mut views = Vec::with_capacity(manifest.views.len());
    for (vi, rec) in manifest.views.iter().enumerate() {
        if rec.cam_to_world.len() != 16 {
            return Err(AssetError::ManifestParse {
                path: manifest_path.clone(),
                message: format!("view {vi}: cam_to_world must have 16 entries"),
            });
        }
        let m = Matrix4::from_row_slice(&rec.cam_to_world);
        check_rigid(&m, vi)?;
        let mask_path = dir.join(&rec.mask);
        let img = image::open(&mask_path).map_err(|e| AssetError::ImageDecode {
            path: mask_path.clone(),
            message: e.to_string(),
        })?;
        let gray = img.to_luma8();
        if gray.width() != rec.width || gray.height() != rec.height {
            return Err(AssetError::DimensionMismatch {
                view: vi,
                got_w: gray.width(),
                got_h: gray.height(),
                want_w: rec.width,
                want_h: rec.height,
            });
        }
        let silhouette: Vec<f64> = gray.pixels().map(|p| p.0[0] as f64 / 255.0).collect();
        views.push(CameraView {
            fx: rec.fx,
            fy: rec.fy,
            cx: rec.cx,
            cy: rec.cy,
            width: rec.width as usize,
            height: rec.height as usize,
            cam_to_world: m,
            silhouette,
        });
    }
    Ok(SceneBundle { views, bounds: manifest.bounds, name: manifest.name, seed: manifest.seed })
}

/// Write an 8-bit grayscale PNG.
pub fn save_gray8(data: &[u8], width: usize, height: usize, path: &Path) -> Result<(), AssetError> {
    let mut img = image::GrayImage::new(width as u32, height as u32);
    for (i, px) in img.pixels_mut().enumerate() {
        px.0[0] = data[i];
    }
    img.save(path).map_err(|e| AssetError::ImageDecode {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

/// Write a bundle: `scene.json` plus one `v###.png` mask per view.
pub fn save_bundle(bundle: &SceneBundle, dir: &Path) -> Result<(), AssetError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let mut records = Vec::with_capacity(bundle.views.len());
    for (vi, view) in bundle.views.iter().enumerate() {
        let mask_name = format!("v{vi:03}.png");
        let data: Vec<u8> = view
            .silhouette
            .iter()
            .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
            .collect();
        let mask_path = dir.join(&mask_name);
        save_gray8(&data, view.width, view.height, &mask_path)?;
        records.push(ViewRecord {
            mask: mask_name,
            fx: view.fx,
            fy: view.fy,
            cx: view.cx,
            cy: view.cy,
            width: view.width as u32,
            height: view.height as u32,
            cam_to_world: view.cam_to_world.transpose().as_slice().to_vec(),
        });
    }
    let manifest = BundleManifest {
        views: records,
        bounds: bundle.bounds,
        name: bundle.name.clone(),
        seed: bundle.seed,
    };
    let path = dir.join("scene.json");
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    fs::write(&path, text).map_err(io_err(&path))?;
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
struct PrimitiveRecord {
    alpha: [f64; 3],
    epsilon: [f64; 2],
    euler: [f64; 3],
    translation: [f64; 3],
    raw: [f64; RAW_LEN],
}

#[derive(Debug, Serialize, Deserialize)]
struct CompositionFile {
    schema_version: u32,
    bounds: SqBounds,
    primitives: Vec<PrimitiveRecord>,
}

/// Save a composition; insertion order is preserved.
pub fn save_composition(s: &Composition, path: &Path) -> Result<(), AssetError> {
    let bounds = s.items.first().map(|p| p.bounds).unwrap_or_default();
    for p in s.iter() {
        if p.bounds != bounds {
            return Err(AssetError::Validation(
                "all primitives in a composition file must share parameter bounds".into(),
            ));
        }
    }
    let file = CompositionFile {
        schema_version: COMPOSITION_SCHEMA_VERSION,
        bounds,
        primitives: s
            .iter()
            .map(|p| PrimitiveRecord {
                alpha: p.alpha(),
                epsilon: p.epsilon(),
                euler: p.euler(),
                translation: p.translation(),
                raw: p.raw,
            })
            .collect(),
    };
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(io_err(parent))?;
        }
    }
    let text = serde_json::to_string_pretty(&file).expect("composition serializes");
    fs::write(path, text).map_err(io_err(path))?;
    Ok(())
}

/// Load a composition, validating schema version, parameter bounds, and
/// agreement between stored constrained values and the raw vector.
pub fn load_composition(path: &Path) -> Result<Composition, AssetError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let file: CompositionFile =
        serde_json::from_str(&text).map_err(|e| AssetError::Validation(e.to_string()))?;
    if file.schema_version != COMPOSITION_SCHEMA_VERSION {
        return Err(AssetError::SchemaVersionMismatch {
            got: file.schema_version,
            want: COMPOSITION_SCHEMA_VERSION,
        });
    }
    let mut out = Composition::new();
    for (i, rec) in file.primitives.iter().enumerate() {
        for (j, &e) in rec.epsilon.iter().enumerate() {
            if e < file.bounds.eps_min || e > file.bounds.eps_max {
                return Err(AssetError::Validation(format!(
                    "primitive {i}: epsilon[{j}] = {e} outside [{}, {}]",
                    file.bounds.eps_min, file.bounds.eps_max
                )));
            }
        }
        let p = SuperquadricParams::from_raw(rec.raw, file.bounds);
        let derived_alpha = p.alpha();
        let derived_eps = p.epsilon();
        for a in 0..3 {
            if (derived_alpha[a] - rec.alpha[a]).abs() > 1e-6 * (1.0 + rec.alpha[a].abs()) {
                return Err(AssetError::Validation(format!(
                    "primitive {i}: stored alpha[{a}] = {} disagrees with raw-derived {}",
                    rec.alpha[a], derived_alpha[a]
                )));
            }
        }
        for j in 0..2 {
            if (derived_eps[j] - rec.epsilon[j]).abs() > 1e-6 {
                return Err(AssetError::Validation(format!(
                    "primitive {i}: stored epsilon[{j}] = {} disagrees with raw-derived {}",
                    rec.epsilon[j], derived_eps[j]
                )));
            }
        }
        out.push(p);
    }
    Ok(out)
}

/// Tessellated OBJ export: one named group per primitive, lat-long grid with
/// pole fans, outward winding.
///
/// `density` controls the grid: `density` latitude divisions and
/// `2 * density` longitude divisions per primitive.
pub fn export_mesh(s: &Composition, path: &Path, density: usize) -> Result<(), AssetError> {
    if s.is_empty() {
        return Err(AssetError::EmptyComposition);
    }
    let density = density.max(3);
    let mut obj = String::from("# superquadric composition\n");
    let mut base = 1usize; // OBJ indices are 1-based
    for (pi, p) in s.iter().enumerate() {
        let (vertices, faces) = tessellate(p, density);
        obj.push_str(&format!("g primitive_{pi:03}\n"));
        for v in &vertices {
            obj.push_str(&format!("v {} {} {}\n", v[0], v[1], v[2]));
        }
        for f in &faces {
            obj.push_str(&format!("f {} {} {}\n", base + f[0], base + f[1], base + f[2]));
        }
        base += vertices.len();
    }
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(io_err(parent))?;
        }
    }
    let mut f = fs::File::create(path).map_err(io_err(path))?;
    f.write_all(obj.as_bytes()).map_err(io_err(path))?;
    Ok(())
}

/// Lat-long tessellation of one superquadric in world coordinates.
/// Returns vertices and triangle index triples (0-based, outward winding).
pub fn tessellate(p: &SuperquadricParams, density: usize) -> (Vec<[f64; 3]>, Vec<[usize; 3]>) {
    use crate::sqcore::canonical_to_world;
    let stacks = density; // latitude divisions
    let slices = 2 * density;
    let mut vertices = Vec::new();
    let sp = |v: f64, e: f64| v.signum() * v.abs().powf(e);
    let alpha = p.alpha();
    let eps = p.epsilon();
    let surf = |eta: f64, omega: f64| -> [f64; 3] {
        let (se, ce) = eta.sin_cos();
        let (so, co) = omega.sin_cos();
        canonical_to_world(
            [
                alpha[0] * sp(ce, eps[0]) * sp(co, eps[1]),
                alpha[1] * sp(ce, eps[0]) * sp(so, eps[1]),
                alpha[2] * sp(se, eps[0]),
            ],
            p,
        )
    };
    // index 0: south pole, index 1: north pole, then rings bottom-up
    vertices.push(surf(-std::f64::consts::FRAC_PI_2, 0.0));
    vertices.push(surf(std::f64::consts::FRAC_PI_2, 0.0));
    let ring_index = |ring: usize, j: usize| 2 + ring * slices + (j % slices);
    for ring in 0..stacks - 1 {
        let eta = -std::f64::consts::FRAC_PI_2
            + std::f64::consts::PI * (ring + 1) as f64 / stacks as f64;
        for j in 0..slices {
            let omega = -std::f64::consts::PI + 2.0 * std::f64::consts::PI * j as f64 / slices as f64;
            vertices.push(surf(eta, omega));
        }
    }
    let mut faces = Vec::new();
    for j in 0..slices {
        // south fan: omega increases counterclockwise seen from -z
        faces.push([0, ring_index(0, j + 1), ring_index(0, j)]);
    }
    for ring in 0..stacks - 2 {
        for j in 0..slices {
            let a = ring_index(ring, j);
            let b = ring_index(ring, j + 1);
            let c = ring_index(ring + 1, j + 1);
            let d = ring_index(ring + 1, j);
            faces.push([a, b, c]);
            faces.push([a, c, d]);
        }
    }
    for j in 0..slices {
        faces.push([1, ring_index(stacks - 2, j), ring_index(stacks - 2, j + 1)]);
    }
    (vertices, faces)
}

#[derive(Debug, Serialize, Deserialize)]
struct GridHeader {
    n: usize,
    center: [f64; 3],
    spacing: f64,
}

/// Debug dump: `<prefix>.raw` holds n^3 little-endian f32 values in
/// (i, j, k) row-major order, `<prefix>.json` the geometry header.
pub fn save_grid(grid: &VoxelGrid, prefix: &Path) -> Result<(), AssetError> {
    let raw_path = prefix.with_extension("raw");
    let mut bytes = Vec::with_capacity(grid.values.len() * 4);
    for &v in &grid.values {
        bytes.extend_from_slice(&(v as f32).to_le_bytes());
    }
    fs::write(&raw_path, bytes).map_err(io_err(&raw_path))?;
    let header = GridHeader { n: grid.n, center: grid.center, spacing: grid.spacing };
    let json_path = prefix.with_extension("json");
    fs::write(&json_path, serde_json::to_string_pretty(&header).expect("header serializes"))
        .map_err(io_err(&json_path))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sqcore::SqBounds;
    use nalgebra::{Matrix4, Point3, Vector3};
    use std::collections::HashMap;
    use tempfile::tempdir;

    fn tiny_bundle() -> SceneBundle {
        let pos = Point3::new(3.0, 0.4, 0.2);
        let zc = (Point3::origin() - pos).normalize();
        let up = Vector3::z();
        let xc = zc.cross(&up).normalize();
        let yc = zc.cross(&xc);
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 1>(0, 0).copy_from(&xc);
        m.fixed_view_mut::<3, 1>(0, 1).copy_from(&yc);
        m.fixed_view_mut::<3, 1>(0, 2).copy_from(&zc);
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&pos.coords);
        let mut silhouette = vec![0.0; 16 * 12];
        silhouette[5 * 16 + 7] = 1.0;
        silhouette[5 * 16 + 8] = 128.0 / 255.0;
        SceneBundle {
            views: vec![CameraView {
                fx: 20.0,
                fy: 20.0,
                cx: 8.0,
                cy: 6.0,
                width: 16,
                height: 12,
                cam_to_world: m,
                silhouette,
            }],
            bounds: SceneBounds::unit(),
            name: "tiny".into(),
            seed: 7,
        }
    }

    #[test]
    fn bundle_roundtrip_preserves_everything() {
        let dir = tempdir().unwrap();
        let bundle = tiny_bundle();
        save_bundle(&bundle, dir.path()).unwrap();
        let loaded = load_bundle(dir.path()).unwrap();
        assert_eq!(loaded.name, bundle.name);
        assert_eq!(loaded.seed, bundle.seed);
        assert_eq!(loaded.views.len(), 1);
        let (a, b) = (&bundle.views[0], &loaded.views[0]);
        assert_eq!(a.fx, b.fx);
        assert_eq!(a.cam_to_world, b.cam_to_world);
        assert_eq!(a.silhouette, b.silhouette, "8-bit masks roundtrip exactly");
    }

    #[test]
    fn missing_mask_reports_offending_path() {
        let dir = tempdir().unwrap();
        let bundle = tiny_bundle();
        save_bundle(&bundle, dir.path()).unwrap();
        fs::remove_file(dir.path().join("v000.png")).unwrap();
        match load_bundle(dir.path()) {
            Err(AssetError::ImageDecode { path, .. }) => {
                assert!(path.to_string_lossy().contains("v000.png"));
            }
            other => panic!("expected ImageDecode, got {other:?}"),
        }
    }

    #[test]
    fn reflection_pose_rejected() {
        let dir = tempdir().unwrap();
        let mut bundle = tiny_bundle();
        // negate one basis vector: still orthonormal, determinant -1
        let col = bundle.views[0].cam_to_world.fixed_view::<3, 1>(0, 0) * -1.0;
        bundle.views[0].cam_to_world.fixed_view_mut::<3, 1>(0, 0).copy_from(&col);
        save_bundle(&bundle, dir.path()).unwrap();
        assert!(matches!(load_bundle(dir.path()), Err(AssetError::NonRigidPose { .. })));
    }

    #[test]
    fn dimension_mismatch_detected() {
        let dir = tempdir().unwrap();
        let bundle = tiny_bundle();
        save_bundle(&bundle, dir.path()).unwrap();
        // overwrite the mask with a wrong-size image
        let img = image::GrayImage::new(4, 4);
        img.save(dir.path().join("v000.png")).unwrap();
        assert!(matches!(
            load_bundle(dir.path()),
            Err(AssetError::DimensionMismatch { .. })
        ));
    }

    fn sample_composition() -> Composition {
        let b = SqBounds::default();
        [
            SuperquadricParams::from_constrained(
                [0.3, 0.2, 0.25],
                [0.8, 1.2],
                [0.3, -0.4, 1.1],
                [0.1, -0.2, 0.05],
                b,
            )
            .unwrap(),
            SuperquadricParams::sphere([-0.3, 0.2, 0.0], 0.15, b).unwrap(),
        ]
        .into_iter()
        .collect()
    }

    #[test]
    fn composition_roundtrip_is_byte_identical() {
        let dir = tempdir().unwrap();
        let s = sample_composition();
        let p1 = dir.path().join("a.json");
        let p2 = dir.path().join("b.json");
        save_composition(&s, &p1).unwrap();
        let loaded = load_composition(&p1).unwrap();
        assert_eq!(loaded, s);
        save_composition(&loaded, &p2).unwrap();
        assert_eq!(fs::read(&p1).unwrap(), fs::read(&p2).unwrap());
    }

    #[test]
    fn empty_composition_roundtrips() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("empty.json");
        save_composition(&Composition::new(), &path).unwrap();
        assert!(load_composition(&path).unwrap().is_empty());
    }

    #[test]
    fn epsilon_out_of_bounds_rejected() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("bad.json");
        save_composition(&sample_composition(), &path).unwrap();
        let mut v: serde_json::Value =
            serde_json::from_str(&fs::read_to_string(&path).unwrap()).unwrap();
        v["primitives"][0]["epsilon"][0] = serde_json::json!(2.5);
        fs::write(&path, serde_json::to_string_pretty(&v).unwrap()).unwrap();
        assert!(matches!(load_composition(&path), Err(AssetError::Validation(_))));
    }

    #[test]
    fn wrong_schema_version_rejected() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("v999.json");
        save_composition(&sample_composition(), &path).unwrap();
        let mut v: serde_json::Value =
            serde_json::from_str(&fs::read_to_string(&path).unwrap()).unwrap();
        v["schema_version"] = serde_json::json!(999);
        fs::write(&path, serde_json::to_string_pretty(&v).unwrap()).unwrap();
        assert!(matches!(
            load_composition(&path),
            Err(AssetError::SchemaVersionMismatch { got: 999, .. })
        ));
    }

    #[test]
    fn unit_sphere_mesh_vertices_on_radius_one() {
        let p = SuperquadricParams::sphere([0.0; 3], 1.0, SqBounds::default()).unwrap();
        let (vertices, _) = tessellate(&p, 64);
        for v in &vertices {
            let r = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
            assert!((r - 1.0).abs() < 1e-3, "vertex at radius {r}");
        }
    }

    #[test]
    fn mesh_is_watertight_and_outward() {
        let p = SuperquadricParams::from_constrained(
            [0.3, 0.2, 0.4],
            [0.7, 1.4],
            [0.5, 0.3, -0.2],
            [0.05, 0.1, 0.0],
            SqBounds::default(),
        )
        .unwrap();
        let (vertices, faces) = tessellate(&p, 12);
        // every undirected edge must be shared by exactly two triangles
        let mut edges: HashMap<(usize, usize), usize> = HashMap::new();
        for f in &faces {
            for e in [(f[0], f[1]), (f[1], f[2]), (f[2], f[0])] {
                let key = (e.0.min(e.1), e.0.max(e.1));
                *edges.entry(key).or_insert(0) += 1;
            }
        }
        for (edge, count) in &edges {
            assert_eq!(*count, 2, "edge {edge:?} shared by {count} triangles");
        }
        // positive signed volume means outward winding
        let mut vol = 0.0;
        for f in &faces {
            let (a, b, c) = (vertices[f[0]], vertices[f[1]], vertices[f[2]]);
            vol += a[0] * (b[1] * c[2] - b[2] * c[1]) - a[1] * (b[0] * c[2] - b[2] * c[0])
                + a[2] * (b[0] * c[1] - b[1] * c[0]);
        }
        assert!(vol > 0.0, "signed volume {vol} indicates inward winding");
    }

    #[test]
    fn obj_has_one_group_per_primitive() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("mesh.obj");
        export_mesh(&sample_composition(), &path, 8).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        assert_eq!(text.matches("g primitive_").count(), 2);
        assert!(export_mesh(&Composition::new(), &path, 8).is_err());
    }

    #[test]
    fn grid_dump_writes_header_and_payload() {
        let dir = tempdir().unwrap();
        let mut grid = VoxelGrid::enclosing(&SceneBounds::unit(), 4);
        grid.values[5] = 0.5;
        let prefix = dir.path().join("grid_000");
        save_grid(&grid, &prefix).unwrap();
        let raw = fs::read(dir.path().join("grid_000.raw")).unwrap();
        assert_eq!(raw.len(), 4 * 4 * 4 * 4);
        let v = f32::from_le_bytes([raw[20], raw[21], raw[22], raw[23]]);
        assert_eq!(v, 0.5);
        let header: serde_json::Value =
            serde_json::from_str(&fs::read_to_string(dir.path().join("grid_000.json")).unwrap())
                .unwrap();
        assert_eq!(header["n"], 4);
    }
}
