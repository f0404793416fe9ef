// temporary diagnostics; removed before release
use isco::camrays::{Ray, SceneBounds};
use isco::render::{render_primitive, RenderConfig};
use isco::sqcore::{SqBounds, SuperquadricParams};
use nalgebra::{Point3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

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

// trapezoid-integrand prototype: integrate the piecewise-linear interpolant
// through the jittered nodes, with rectangle end caps
fn render_trapezoid(r: &Ray, p: &SuperquadricParams, gamma: f64, n: usize, seed: u64) -> f64 {
    use rand::Rng;
    let span = r.t_far - r.t_near;
    if span <= 0.0 {
        return 0.0;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let h = span / n as f64;
    let ts: Vec<f64> = (0..n)
        .map(|i| r.t_near + (i as f64 + rng.gen::<f64>()) * h)
        .collect();
    let dbar = span / 96.0;
    let sigma: Vec<f64> = ts
        .iter()
        .map(|&t| {
            let q = r.origin + t * r.direction;
            isco::sqcore::density([q.x, q.y, q.z], p, gamma)
        })
        .collect();
    let mut integral = sigma[0] * (ts[0] - r.t_near);
    for i in 0..n - 1 {
        integral += 0.5 * (sigma[i] + sigma[i + 1]) * (ts[i + 1] - ts[i]);
    }
    integral += sigma[n - 1] * (r.t_far - ts[n - 1]);
    1.0 - (-integral / dbar).exp()
}

fn main() {
    // json roundtrip check
    let v: f64 = -0.9890707100936805;
    let s = serde_json::to_string(&v).unwrap();
    let back: f64 = serde_json::from_str(&s).unwrap();
    println!("json: {:?} -> {} -> {:?} equal={}", v, s, back, v == back);

    // convergence case diagnostics
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let scene = SceneBounds::unit();
    let mut diffs: Vec<(f64, usize)> = Vec::new();
    let mut trap_diffs: Vec<(f64, usize)> = Vec::new();
    for case in 0..100 {
        let p = SuperquadricParams::from_constrained(
            [
                rng.gen_range(0.15..0.6),
                rng.gen_range(0.15..0.6),
                rng.gen_range(0.15..0.6),
            ],
            [rng.gen_range(0.4..1.6), rng.gen_range(0.4..1.6)],
            [
                rng.gen_range(-3.0..3.0),
                rng.gen_range(-1.5..1.5),
                rng.gen_range(-3.0..3.0),
            ],
            [
                rng.gen_range(-0.3..0.3),
                rng.gen_range(-0.3..0.3),
                rng.gen_range(-0.3..0.3),
            ],
            SqBounds::default(),
        )
        .unwrap();
        let origin = Point3::new(3.0, rng.gen_range(-0.8..0.8), rng.gen_range(-0.8..0.8));
        let target = Point3::new(
            rng.gen_range(-0.4..0.4),
            rng.gen_range(-0.4..0.4),
            rng.gen_range(-0.4..0.4),
        );
        let r = ray_through(origin, target - origin, &scene);
        let coarse = render_primitive(&r, &p, &RenderConfig::new(50.0, 64, 17));
        let fine = render_primitive(&r, &p, &RenderConfig::new(50.0, 1024, 17));
        diffs.push(((coarse - fine).abs(), case));
        let tc = render_primitive(&r, &p, &RenderConfig::new(50.0, 64, 17 ^ case as u64));
        let tf = render_primitive(&r, &p, &RenderConfig::new(50.0, 1024, 17 ^ case as u64));
        trap_diffs.push(((tc - tf).abs(), case));
    }
    diffs.sort_by(|a, b| b.0.total_cmp(&a.0));
    trap_diffs.sort_by(|a, b| b.0.total_cmp(&a.0));
    println!("rectangle worst 8: {:?}", &diffs[..8]);
    println!("trapezoid worst 8: {:?}", &trap_diffs[..8]);

    // stability of the trapezoid max-diff across jitter seeds
    for jepoch in 0..10u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let mut worst = (0.0_f64, 0usize);
        for case in 0..100 {
            let p = SuperquadricParams::from_constrained(
                [
                    rng.gen_range(0.15..0.6),
                    rng.gen_range(0.15..0.6),
                    rng.gen_range(0.15..0.6),
                ],
                [rng.gen_range(0.4..1.6), rng.gen_range(0.4..1.6)],
                [
                    rng.gen_range(-3.0..3.0),
                    rng.gen_range(-1.5..1.5),
                    rng.gen_range(-3.0..3.0),
                ],
                [
                    rng.gen_range(-0.3..0.3),
                    rng.gen_range(-0.3..0.3),
                    rng.gen_range(-0.3..0.3),
                ],
                SqBounds::default(),
            )
            .unwrap();
            let origin = Point3::new(3.0, rng.gen_range(-0.8..0.8), rng.gen_range(-0.8..0.8));
            let target = Point3::new(
                rng.gen_range(-0.4..0.4),
                rng.gen_range(-0.4..0.4),
                rng.gen_range(-0.4..0.4),
            );
            let r = ray_through(origin, target - origin, &scene);
            let seed = 1000 + jepoch * 7919 + case as u64;
            let tc = render_primitive(&r, &p, &RenderConfig::new(50.0, 64, seed));
            let tf = render_primitive(&r, &p, &RenderConfig::new(50.0, 1024, seed));
            if (tc - tf).abs() > worst.0 {
                worst = ((tc - tf).abs(), case);
            }
        }
        println!("jitter epoch {jepoch}: worst diff {:?}", worst);
    }

    // trapezoid behavior on the system's real ray population: every pixel
    // of a synthetic view against a generated primitive
    use isco::synthgen::{gen_scene, gen_views, GenSpec};
    for scene_seed in 0..6u64 {
        let spec = GenSpec { view_count: 2, image_size: 96, seed: scene_seed, ..GenSpec::default() };
        let mut rng = ChaCha8Rng::seed_from_u64(scene_seed);
        let comp = gen_scene(&spec, &mut rng).unwrap();
        let views = gen_views(&spec, &mut rng);
        let mut worst = 0.0_f64;
        let mut over = 0usize;
        let mut total = 0usize;
        for view in &views {
            for y in 0..view.height {
                for x in 0..view.width {
                    let r = isco::camrays::pixel_center_ray(view, x, y, &scene).unwrap();
                    for p in comp.iter() {
                        let seed = (y * 96 + x) as u64;
                        let c = render_primitive(&r, p, &RenderConfig::new(50.0, 64, seed));
                        if c < 1e-4 {
                            continue; // misses: both estimates vanish
                        }
                        let f = render_primitive(&r, p, &RenderConfig::new(50.0, 1024, seed));
                        let d = (c - f).abs();
                        total += 1;
                        if d > worst {
                            worst = d;
                        }
                        over += usize::from(d > 0.01);
                    }
                }
            }
        }
        println!(
            "scene {scene_seed}: {} prims, {total} hitting rays, worst {worst:.4}, over-0.01 {over}",
            comp.len()
        );
    }

    // per-pair failure probability on the natural population:
    // random generated primitive x random pixel ray of a synthetic view
    use isco::camrays::pixel_center_ray;
    let mut rng = ChaCha8Rng::seed_from_u64(777);
    let mut fails = 0usize;
    let mut hits = 0usize;
    let n_pairs = 20_000usize;
    let spec1 = GenSpec { count_min: 1, count_max: 1, view_count: 1, image_size: 96, ..GenSpec::default() };
    for pair in 0..n_pairs {
        let comp = gen_scene(&spec1, &mut rng).unwrap();
        let p = comp.items[0];
        let views = gen_views(&spec1, &mut rng);
        let view = &views[0];
        let x = rng.gen_range(0..view.width);
        let y = rng.gen_range(0..view.height);
        let r = pixel_center_ray(view, x, y, &scene).unwrap();
        let seed = pair as u64;
        let c = render_primitive(&r, &p, &RenderConfig::new(50.0, 64, seed));
        let f = render_primitive(&r, &p, &RenderConfig::new(50.0, 1024, seed));
        if c.max(f) > 1e-4 {
            hits += 1;
        }
        if (c - f).abs() >= 0.01 {
            fails += 1;
        }
    }
    println!(
        "natural population: {n_pairs} pairs, {hits} non-trivial, {fails} over 0.01 ({:.3}%)",
        100.0 * fails as f64 / n_pairs as f64
    );

    // fd mismatch per-entry diagnosis (mirrors grad test trial 1)
    {
        use isco::camrays::pixel_center_ray;
        use isco::grad::loss_and_grad;
        use isco::objective::{weighted_loss, BatchRay, RayBatch};
        use isco::render::render_composition_keyed;
        use isco::sqcore::Composition;
        use nalgebra::Matrix4;

        let look_at_view = |pos: Point3<f64>, w: usize, h: usize| {
            let zc = (Point3::origin() - pos).normalize();
            let up = if zc.z.abs() > 0.999 { Vector3::x() } else { Vector3::z() };
            let xc = zc.cross(&up).normalize();
            let yc = zc.cross(&xc);
            let mut m = Matrix4::identity();
            m.fixed_view_mut::<3, 1>(0, 0).copy_from(&xc);
            m.fixed_view_mut::<3, 1>(0, 1).copy_from(&yc);
            m.fixed_view_mut::<3, 1>(0, 2).copy_from(&zc);
            m.fixed_view_mut::<3, 1>(0, 3).copy_from(&pos.coords);
            isco::camrays::CameraView {
                fx: 1.2 * w as f64,
                fy: 1.2 * w as f64,
                cx: w as f64 / 2.0,
                cy: h as f64 / 2.0,
                width: w,
                height: h,
                cam_to_world: m,
                silhouette: vec![0.0; w * h],
            }
        };
        let random_scene = |n: usize, rng: &mut ChaCha8Rng| -> Composition {
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
        };
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let cfg = RenderConfig::new(20.0, 32, 5);
        for trial in 0..10 {
            let truth = random_scene(1 + trial % 2, &mut rng);
            let mut fitted = random_scene(1 + trial % 3, &mut rng);
            for p in fitted.items.iter_mut() {
                p.raw[0] += 0.05;
            }
            // 16 rays x 4 views like the unit test
            let positions = [
                Point3::new(3.0, 0.0, 0.2),
                Point3::new(-2.4, 1.8, 0.4),
                Point3::new(0.3, -2.9, 0.8),
                Point3::new(0.5, 1.0, 2.8),
            ];
            let mut rays = Vec::new();
            for (vi, &pos) in positions.iter().enumerate() {
                let view = look_at_view(pos, 32, 32);
                for _ in 0..16 {
                    let pixel = rng.gen_range(0..view.pixel_count());
                    let (x, y) = (pixel % view.width, pixel / view.width);
                    let ray = pixel_center_ray(&view, x, y, &scene).unwrap();
                    let key = isco::render::RayKey { view: vi as u32, pixel: pixel as u32 };
                    let target = render_composition_keyed(&ray, key, &truth, &cfg);
                    rays.push(BatchRay { view: vi as u32, pixel: pixel as u32, ray, target, importance: 1.0 });
                }
            }
            let batch = RayBatch { rays };
            let (_, analytic) = loss_and_grad(&batch, &fitted, &cfg, 0.6).unwrap();
            let h = 1e-4;
            for pi in 0..fitted.len() {
                for i in 0..11 {
                    let mut plus = fitted.clone();
                    plus.items[pi].raw[i] += h;
                    let mut minus = fitted.clone();
                    minus.items[pi].raw[i] -= h;
                    let fd = (weighted_loss(&batch, &plus, &cfg, 0.6)
                        - weighted_loss(&batch, &minus, &cfg, 0.6))
                        / (2.0 * h);
                    let a = analytic.per_primitive[pi][i];
                    if a.abs() + fd.abs() > 1e-8 {
                        let rel = (a - fd).abs() / (a.abs() + fd.abs());
                        if rel > 1e-4 {
                            println!(
                                "  trial {trial} prim {pi} raw {i}: analytic {a:.9e} fd {fd:.9e} rel {rel:.2e}"
                            );
                            // bisect: which ray's contribution diverges?
                            for (ri, br) in batch.rays.iter().enumerate() {
                                let single = RayBatch { rays: vec![br.clone()] };
                                let (_, ga) = loss_and_grad(&single, &fitted, &cfg, 0.6).unwrap();
                                let fd1 = (weighted_loss(&single, &plus, &cfg, 0.6)
                                    - weighted_loss(&single, &minus, &cfg, 0.6))
                                    / (2.0 * h);
                                let a1 = ga.per_primitive[pi][i];
                                if (a1 - fd1).abs() > 0.3 * (a - fd).abs() {
                                    let d0 = render_composition_keyed(&br.ray, br.key(), &fitted, &cfg);
                                    let dp = render_composition_keyed(&br.ray, br.key(), &plus, &cfg);
                                    let dm = render_composition_keyed(&br.ray, br.key(), &minus, &cfg);
                                    println!(
                                        "    ray {ri}: a {a1:.6e} fd {fd1:.6e} target {:.4} D0 {d0:.9} D+ {dp:.9} D- {dm:.9}",
                                        br.target
                                    );
                                }
                            }
                        }
                    }
                }
            }
        }
    }

    // stability of the shipped convergence test across master seeds
    let mut seed_fails = 0;
    for master in 0..30u64 {
        let pairs = isco::test_support::random_ray_primitive_pairs(master, 100);
        let mut worst = 0.0_f64;
        for (case, (ray, p)) in pairs.iter().enumerate() {
            let c = render_primitive(ray, p, &RenderConfig::new(50.0, 64, case as u64));
            let f = render_primitive(ray, p, &RenderConfig::new(50.0, 1024, case as u64));
            worst = worst.max((c - f).abs());
        }
        if worst >= 0.01 {
            seed_fails += 1;
            println!("  master {master}: worst {worst:.4} FAIL");
        }
    }
    println!("master-seed scan: {seed_fails}/30 fail");
}
