// temporary diagnostics; removed before release
use isco::fitter::{fit_isco, FitConfig};
use isco::metrics::{eval_bounds, iou, voxelize};
use isco::synthgen::{gen_bundle, GenSpec};
use std::time::Instant;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let seeds: u64 = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(3);
    let gamma_opt: f64 = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(20.0);
    for seed in 0..seeds {
        let spec = GenSpec { view_count: 16, image_size: 128, seed, ..GenSpec::default() };
        let spec = GenSpec { count_min: 1, count_max: 1, ..spec };
        let t0 = Instant::now();
        let (bundle, truth) = gen_bundle(&spec).unwrap();
        let t_gen = t0.elapsed();
        let cfg = FitConfig { max_superquadrics: 1, seed, gamma_opt, ..FitConfig::default() };
        let t1 = Instant::now();
        let mut last_loss = 0.0;
        let (fit, _trace) = fit_isco(&bundle, &cfg, &mut |ev| last_loss = ev.loss).unwrap();
        let t_fit = t1.elapsed();
        let (center, half) = eval_bounds(&bundle.bounds);
        let a = voxelize(&truth, 64, center, half);
        let b = voxelize(&fit, 64, center, half);
        let score = iou(&a, &b).unwrap();
        let gt = truth.items[0];
        let ft = fit.items[0];
        println!(
            "seed {seed}: IoU {score:.3}  gen {t_gen:.1?} fit {t_fit:.1?} last_loss {last_loss:.3}"
        );
        println!(
            "   gt alpha {:?} eps {:?} t {:?}",
            gt.alpha().map(|v| (v * 1000.0).round() / 1000.0),
            gt.epsilon().map(|v| (v * 100.0).round() / 100.0),
            gt.translation().map(|v| (v * 1000.0).round() / 1000.0)
        );
        println!(
            "  fit alpha {:?} eps {:?} t {:?}",
            ft.alpha().map(|v| (v * 1000.0).round() / 1000.0),
            ft.epsilon().map(|v| (v * 100.0).round() / 100.0),
            ft.translation().map(|v| (v * 1000.0).round() / 1000.0)
        );
    }
}
