//! Closed-form oracle for the flip-radius search on linear binary
//! classifiers.
//!
//! For logits `[0, w.x + b]` the decision boundary is the hyperplane
//! `w.x + b = 0`, and the minimal L2 perturbation restricted to a mask M
//! that crosses it from a point with margin `s = w.x + b` has norm
//! `|s| / ||w restricted to M||`. The searched radius must land within
//! twice the bisection tolerance of that distance.

use grasp_core::nn::{Layer, LayerSpec, Model};
use grasp_core::robustness::{obstructed_robustness, trigger_robustness, RobustnessQuery};
use grasp_core::rng::{self, tags};
use grasp_core::tensor::Tensor;
use rand::Rng;

fn linear_model(w: &[f32], b: f32) -> Model {
    let d = w.len();
    let spec = LayerSpec::Dense {
        in_dim: d,
        out_dim: 2,
    };
    let mut layer = Layer::zeroed(spec);
    for (i, &wi) in w.iter().enumerate() {
        layer.weight[d + i] = wi;
    }
    layer.bias[1] = b;
    Model::from_layers(&[d], 2, vec![layer]).unwrap()
}

fn closed_form_radius(w: &[f32], b: f32, x: &[f32], mask: &[f32]) -> f64 {
    let mut s = b as f64;
    let mut wm_sq = 0.0f64;
    for i in 0..w.len() {
        s += w[i] as f64 * x[i] as f64;
        if mask[i] > 0.5 {
            wm_sq += (w[i] as f64) * (w[i] as f64);
        }
    }
    s.abs() / wm_sq.sqrt()
}

#[test]
fn measured_radii_match_the_point_to_plane_distance() {
    let mut rng = rng::stream(71, tags::ROBUSTNESS_DIRS);
    let mut checked = 0u32;
    while checked < 50 {
        let d = rng.random_range(4..=12);
        let w: Vec<f32> = (0..d).map(|_| rng.random_range(-1.0f32..1.0)).collect();
        let b: f32 = rng.random_range(-0.5..0.5);
        let x: Vec<f32> = (0..d).map(|_| rng.random_range(0.0f32..1.0)).collect();
        // Random nonempty mask; roughly half the coordinates.
        let mask: Vec<f32> = (0..d)
            .map(|_| if rng.random_range(0.0..1.0) < 0.5 { 1.0 } else { 0.0 })
            .collect();
        if mask.iter().sum::<f32>() == 0.0 {
            continue;
        }
        let expected = closed_form_radius(&w, b, &x, &mask);
        // Degenerate margins or unreachable planes make the bracket
        // ill-conditioned in f32; keep the oracle in a well-posed band.
        if !(0.05..=8.0).contains(&expected) {
            continue;
        }

        let model = linear_model(&w, b);
        let xt = Tensor::from_vec(&[d], x.clone()).unwrap();
        let mt = Tensor::from_vec(&[d], mask.clone()).unwrap();
        let y_base = model.predict_one(&xt).unwrap();
        let q = RobustnessQuery {
            r_max: 32.0,
            directions: 4,
            bisect_tol: 1e-3,
            seed: checked as u64,
        };
        let r = obstructed_robustness(&model, &xt, y_base, &mt, &q)
            .unwrap()
            .found()
            .expect("radius must exist inside r_max");
        assert!(
            (r - expected).abs() <= 2.0 * q.bisect_tol,
            "instance {checked}: measured {r} vs closed form {expected}"
        );
        checked += 1;
    }
}

#[test]
fn trigger_side_search_obeys_the_same_oracle() {
    // The trigger-radius entry point measures from an already-amended point
    // toward losing the target class; on a linear model that is the same
    // point-to-plane distance from that point.
    let mut rng = rng::stream(1234, tags::ROBUSTNESS_DIRS);
    let mut checked = 0u32;
    while checked < 10 {
        let d = 6usize;
        let w: Vec<f32> = (0..d).map(|_| rng.random_range(-1.0f32..1.0)).collect();
        let b: f32 = rng.random_range(-0.25..0.25);
        let x_prime: Vec<f32> = (0..d).map(|_| rng.random_range(0.0f32..1.0)).collect();
        let mask: Vec<f32> = (0..d)
            .map(|i| if i % 2 == 0 { 1.0 } else { 0.0 })
            .collect();
        let expected = closed_form_radius(&w, b, &x_prime, &mask);
        if !(0.05..=8.0).contains(&expected) {
            continue;
        }
        let model = linear_model(&w, b);
        let xt = Tensor::from_vec(&[d], x_prime.clone()).unwrap();
        let mt = Tensor::from_vec(&[d], mask.clone()).unwrap();
        let y_t = model.predict_one(&xt).unwrap();
        let q = RobustnessQuery {
            r_max: 32.0,
            directions: 4,
            bisect_tol: 1e-3,
            seed: 100 + checked as u64,
        };
        let r = trigger_robustness(&model, &xt, &mt, y_t, &q)
            .unwrap()
            .found()
            .expect("radius must exist inside r_max");
        assert!(
            (r - expected).abs() <= 2.0 * q.bisect_tol,
            "instance {checked}: measured {r} vs closed form {expected}"
        );
        checked += 1;
    }
}
