//! Oracle checks of the dual loss: the closed form against a coordinate
//! ascent maximizer working on the raw sums, and the analytic gradient
//! against central finite differences.

use ndarray::{Array1, Array2};
use qopl_core::dgp::{generate_iv_dataset, DgpConfig};
use qopl_core::features::{DesignMatrix, TestBasis};
use qopl_core::loss::{
    empirical_loss, inner_maximize, loss_gradient, LossConfig, LossMode, ResidualMode,
    ResidualVector, Ridge,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// Maximizes (1/n)·Σ w_i·θ_i − (1/(2n))·Σ θ_i² over θ = M·b by cyclic
/// coordinate ascent on b, evaluating the objective through the raw sums.
fn coordinate_ascent_loss(m: &Array2<f64>, w: &Array1<f64>, sweeps: usize) -> f64 {
    let n = m.nrows();
    let d = m.ncols();
    let mut b = Array1::<f64>::zeros(d);
    for _ in 0..sweeps {
        for k in 0..d {
            // Exact 1-D maximization in coordinate k.
            let mut num = 0.0;
            let mut den = 0.0;
            for i in 0..n {
                let theta_rest: f64 = (0..d)
                    .filter(|j| *j != k)
                    .map(|j| m[[i, j]] * b[j])
                    .sum();
                num += m[[i, k]] * (w[i] - theta_rest);
                den += m[[i, k]] * m[[i, k]];
            }
            b[k] = if den > 0.0 { num / den } else { 0.0 };
        }
    }
    let mut linear = 0.0;
    let mut quad = 0.0;
    for i in 0..n {
        let theta: f64 = (0..d).map(|j| m[[i, j]] * b[j]).sum();
        linear += w[i] * theta;
        quad += theta * theta;
    }
    (linear - 0.5 * quad) / n as f64
}

#[test]
fn closed_form_matches_coordinate_ascent_on_random_instances() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for trial in 0..100 {
        let n = rng.gen_range(3..=20);
        let d = rng.gen_range(1..=3);
        let m = Array2::from_shape_fn((n, d), |_| rng.sample::<f64, _>(StandardNormal));
        let w = Array1::from_shape_fn(n, |_| rng.sample::<f64, _>(StandardNormal) * 0.5);
        let dm = DesignMatrix::from_array(m.clone()).unwrap();
        let sol = inner_maximize(
            &ResidualVector {
                w: w.clone(),
                mode: ResidualMode::Hard,
            },
            &dm,
            &Ridge::Exact,
        )
        .unwrap();
        let oracle = coordinate_ascent_loss(&m, &w, 600);
        assert!(
            (sol.loss_value - oracle).abs() < 1e-6,
            "trial {trial}: closed form {} vs oracle {oracle}",
            sol.loss_value
        );
    }
}

#[test]
fn gradient_matches_central_finite_differences() {
    let basis = TestBasis::Main13;
    let cfg = LossConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    for trial in 0..20 {
        let ds = generate_iv_dataset(&DgpConfig {
            n: 200,
            seed: 1000 + trial,
            ..DgpConfig::default()
        })
        .unwrap();
        let beta: Vec<f64> = (0..4)
            .map(|_| rng.sample::<f64, _>(StandardNormal) * 1.5)
            .collect();
        let analytic = loss_gradient(&ds, &beta, 0.2, &basis, &cfg).unwrap();

        let h = 1e-5;
        let mut fd = vec![0.0; 4];
        for j in 0..4 {
            let mut plus = beta.clone();
            plus[j] += h;
            let mut minus = beta.clone();
            minus[j] -= h;
            let lp = empirical_loss(&ds, &plus, 0.2, &basis, &cfg).unwrap();
            let lm = empirical_loss(&ds, &minus, 0.2, &basis, &cfg).unwrap();
            fd[j] = (lp - lm) / (2.0 * h);
        }
        let diff: f64 = analytic
            .iter()
            .zip(&fd)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        let scale: f64 = fd.iter().map(|g| g * g).sum::<f64>().sqrt().max(1e-10);
        assert!(
            diff / scale < 1e-4,
            "trial {trial}: relative gradient error {}",
            diff / scale
        );
    }
}

#[test]
fn hard_loss_at_truth_scales_as_one_over_n() {
    let basis = TestBasis::Main13;
    let cfg = LossConfig::hard();
    let beta = [1.0, 1.0, 3.0, 2.0];
    let n = 100_000;
    let ds = generate_iv_dataset(&DgpConfig {
        n,
        alpha: 0.2,
        seed: 50,
        ..DgpConfig::default()
    })
    .unwrap();
    let loss = empirical_loss(&ds, &beta, 0.2, &basis, &cfg).unwrap();
    assert!(loss >= -1e-12);
    assert!(
        loss <= 10.0 * 13.0 / n as f64,
        "loss at truth {loss} exceeds the O(d/n) budget"
    );
}

#[test]
fn loss_at_truth_decreases_with_sample_size() {
    let basis = TestBasis::Main13;
    let cfg = LossConfig::hard();
    let beta = [1.0, 1.0, 3.0, 2.0];
    let mut means = Vec::new();
    for &n in &[500usize, 1500, 3000] {
        let mut total = 0.0;
        for rep in 0..20u64 {
            let ds = generate_iv_dataset(&DgpConfig {
                n,
                alpha: 0.2,
                seed: 900 + rep,
                ..DgpConfig::default()
            })
            .unwrap();
            total += empirical_loss(&ds, &beta, 0.2, &basis, &cfg).unwrap();
        }
        means.push(total / 20.0);
    }
    assert!(means[0] > means[1] && means[1] > means[2], "means {means:?}");
}

#[test]
fn smoothed_mode_is_the_default_and_hard_is_opt_in() {
    let cfg = LossConfig::default();
    assert_eq!(cfg.mode, LossMode::Smoothed);
    assert_eq!(cfg.smoothing_temperature, 5.0);
    assert_eq!(LossConfig::hard().mode, LossMode::Hard);
}
