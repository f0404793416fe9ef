// temporary diagnostics; removed before release
use isco::fitter::{fit_isco, FitConfig};
use isco::objective::{weighted_loss, RaySampler};
use isco::render::RenderConfig;
use isco::sqcore::Composition;
use isco::synthgen::{gen_bundle, GenSpec};
use rand_chacha::rand_core::SeedableRng;

fn main() {
    let seed = 1u64;
    let spec = GenSpec {
        view_count: 16,
        image_size: 128,
        seed,
        count_min: 1,
        count_max: 1,
        ..GenSpec::default()
    };
    let (bundle, truth) = gen_bundle(&spec).unwrap();
    let steps: usize = std::env::var("STEPS").ok().and_then(|v| v.parse().ok()).unwrap_or(250);
    let lr: f64 = std::env::var("LR").ok().and_then(|v| v.parse().ok()).unwrap_or(0.01);
    let gamma_opt: f64 = std::env::var("GOPT").ok().and_then(|v| v.parse().ok()).unwrap_or(20.0);
    let uf: f64 = std::env::var("UF").ok().and_then(|v| v.parse().ok()).unwrap_or(0.25);
    let cfg = FitConfig { max_superquadrics: 1, steps_per_iter: steps, lr_start: lr, gamma_opt, uniform_frac: uf, seed, ..FitConfig::default() };

    // reference: what loss does the ground truth itself incur on uniform
    // batches at the optimization gamma?
    let sampler = RaySampler::new(&bundle.views);
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4242);
    let batch = sampler.sample_rays(&bundle.views, 500, &bundle.bounds, &mut rng);
    for gamma in [20.0, 50.0, 150.0] {
        let rc = RenderConfig { gamma, samples_per_ray: 96, seed: 7 };
        let l_truth = weighted_loss(&batch, &truth, &rc, cfg.lambda);
        let l_empty = weighted_loss(&batch, &Composition::new(), &rc, cfg.lambda);
        println!("gamma {gamma}: loss(truth) {l_truth:.2} loss(empty) {l_empty:.2}");
    }

    let mut step = 0usize;
    let (fit, _) = fit_isco(&bundle, &cfg, &mut |ev| {
        if step % (cfg.steps_per_iter / 10).max(1) == 0 {
            println!("step {:3} loss {:9.2} lr {:.5}", ev.step, ev.loss, ev.lr);
        }
        step += 1;
    })
    .unwrap();
    let rc = RenderConfig { gamma: 20.0, samples_per_ray: 96, seed: 7 };
    println!(
        "final: loss(fit on uniform batch) {:.2}",
        weighted_loss(&batch, &fit, &rc, cfg.lambda)
    );
    println!("truth: alpha {:?} eps {:?} t {:?} euler {:?}", truth.items[0].alpha(), truth.items[0].epsilon(), truth.items[0].translation(), truth.items[0].euler());
    println!("  fit: alpha {:?} eps {:?} t {:?} euler {:?}", fit.items[0].alpha(), fit.items[0].epsilon(), fit.items[0].translation(), fit.items[0].euler());
}
// appended: budget experiment entry point is env-driven
