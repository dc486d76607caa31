//! Throwaway measurement probe for threshold calibration.

use grasp_cli::theory_suite::ratio_fixture;
use grasp_core::data::{synthetic_dataset, SyntheticKind};
use grasp_core::poison::{grasp_poison, NoiseKind, PoisonPlan, Trigger, Corner};
use grasp_core::rng::derive_seed;
use grasp_core::stats::spearman;
use grasp_core::theory::{pl_convergence_check, random_pwl_spec, simulate_pwl_gd, weight_gradient_ratio, QuadraticSpec};
use rand::Rng;

fn main() {
    // C8 landscape sweep.
    let t0 = std::time::Instant::now();
    let widths = [0.05f64, 0.1, 0.2, 0.4];
    let mut probs = Vec::new();
    for (wi, &w) in widths.iter().enumerate() {
        let mut total = 0.0;
        for l in 0..3u64 {
            let spec_seed = derive_seed(8, (wi as u64) * 131 + l);
            let spec = random_pwl_spec(w, spec_seed).unwrap();
            total += simulate_pwl_gd(&spec, 1000, 250, 0.004, derive_seed(spec_seed, 1)).unwrap();
        }
        probs.push(total / 3.0);
    }
    let rho = spearman(&widths, &probs).unwrap();
    println!("C8 probs {probs:?} rho {rho:.3} ({:.1}s)", t0.elapsed().as_secs_f64());

    // C6: 100 PSD quadratics + the diagonal hand case.
    let t0 = std::time::Instant::now();
    let mut all = true;
    for inst in 0..100u64 {
        let mut rng = grasp_core::rng::stream(derive_seed(6, inst), 0);
        let d = 5;
        let m: Vec<f64> = (0..d * d).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mut a = vec![0.0f64; d * d];
        for i in 0..d {
            for j in 0..d {
                let mut dot = 0.0;
                for k in 0..d {
                    dot += m[k * d + i] * m[k * d + j];
                }
                a[i * d + j] = dot + if i == j { 0.1 } else { 0.0 };
            }
        }
        let offset: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
        let x0: Vec<f64> = (0..d).map(|_| rng.random_range(-2.0..2.0)).collect();
        let spec = QuadraticSpec::new(a, offset).unwrap();
        let rep = pl_convergence_check(&spec, &x0, 50).unwrap();
        all &= rep.all_hold;
    }
    let diag = QuadraticSpec::new(vec![1.0, 0.0, 0.0, 4.0], vec![0.0, 0.0]).unwrap();
    let rep = pl_convergence_check(&diag, &[1.0, 1.0], 1).unwrap();
    println!("C6 all_hold {all} F(x1) {} ({:.1}s)", rep.steps[1].gap, t0.elapsed().as_secs_f64());

    // C7: 50 valid ratio fixtures.
    let t0 = std::time::Instant::now();
    let mut ok = 0;
    let mut seed = 0u64;
    let mut worst: f64 = 0.0;
    let mut hidden_all = true;
    while ok < 50 && seed < 200 {
        let (model, x, trigger, noise) = ratio_fixture(seed).unwrap();
        seed += 1;
        if let Ok(r) = weight_gradient_ratio(&model, &x, 0.0, &trigger, 1.0, &noise) {
            ok += 1;
            worst = worst.max((r.last_layer_ratio - 2.0).abs());
            hidden_all &= r.hidden_inequality_holds;
        }
    }
    println!("C7 ok {ok} (seeds used {seed}) worst {worst:.2e} hidden {hidden_all} ({:.1}s)", t0.elapsed().as_secs_f64());

    // C1 timing: count grid on stripes datasets.
    let t0 = std::time::Instant::now();
    let grid = [(1000usize, 0.06f64, 0.05f64), (997, 0.06, 0.05), (500, 0.25, 0.5), (200, 0.1, 0.25), (64, 0.5, 0.9), (1000, 0.1, 0.0)];
    let mut all1 = true;
    for &(n, alpha, beta) in &grid {
        let data = synthetic_dataset(SyntheticKind::Stripes, n, 42).unwrap();
        let trigger = Trigger::patch(data.item_shape(), 2, Corner::BottomRight, 1.0).unwrap();
        let plan = PoisonPlan { alpha, beta, noise_scale: 0.1, noise: NoiseKind::Normal, target: 0, seed: 9 };
        let out = grasp_poison(&data, &trigger, &plan).unwrap();
        let mut noisy = 0usize;
        let mut trig = 0usize;
        for i in 0..n {
            if (i as f64) < alpha * beta * n as f64 { noisy += 1; }
            if (i as f64) < alpha * n as f64 { trig += 1; }
        }
        all1 &= out.counts.noisy_source == noisy && out.counts.trigger_target == trig
            && out.dataset.len() == n + noisy + trig;
    }
    println!("C1 all {all1} ({:.3}s)", t0.elapsed().as_secs_f64());
}
