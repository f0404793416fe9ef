//! Shared generators for unit and acceptance tests.

use crate::camrays::{pixel_center_ray, Ray, SceneBounds};
use crate::sqcore::SuperquadricParams;
use crate::synthgen::{gen_scene, gen_views, GenSpec};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Random (pixel ray, primitive) pairs drawn the way the fitting pipeline
/// produces them: a generated primitive observed through a random pixel of
/// a random synthetic camera.
pub fn random_ray_primitive_pairs(master_seed: u64, count: usize) -> Vec<(Ray, SuperquadricParams)> {
    let scene = SceneBounds::unit();
    let spec = GenSpec {
        count_min: 1,
        count_max: 1,
        view_count: 1,
        image_size: 96,
        ..GenSpec::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    (0..count)
        .map(|_| {
            let comp = gen_scene(&spec, &mut rng).expect("generator ranges are safe");
            let views = gen_views(&spec, &mut rng);
            let x = rng.gen_range(0..views[0].width);
            let y = rng.gen_range(0..views[0].height);
            let ray = pixel_center_ray(&views[0], x, y, &scene).expect("valid intrinsics");
            (ray, comp.items[0])
        })
        .collect()
}
