mod common;

use nalgebra::{DMatrix, SymmetricEigen};
use purchase_survival::concordance_index;
use purchase_survival::ksvm::{comparable_pairs, fit_ksvm, kernel_matrix, predict_rank_score, KernelSpec, KsvmOptions};
use rand::Rng;

#[test]
fn separable_line_is_ranked_perfectly() {
    // smaller x always purchases first
    let xs: Vec<f64> = (0..30).map(|i| i as f64 / 10.0).collect();
    let rows: Vec<Vec<f64>> = xs.iter().map(|&x| vec![x]).collect();
    let times: Vec<f64> = xs.iter().map(|x| 1.0 + x).collect();
    let d = common::design(&rows, &times, &[true; 30]);
    let m = fit_ksvm(&d, &KernelSpec::Linear, &KsvmOptions { c: 10.0, ..Default::default() }).unwrap();
    let scores: Vec<f64> = d.rows().map(|x| predict_rank_score(&m, x).unwrap()).collect();
    assert!(scores.windows(2).all(|w| w[1] < w[0]));
    assert_eq!(concordance_index(d.times(), d.events(), &scores).unwrap().c_index, 1.0);
}

#[test]
fn kernels_are_positive_semidefinite() {
    let mut r = common::rng(1);
    let kernels = [
        KernelSpec::Linear,
        KernelSpec::Rbf { gamma: 0.5 },
        KernelSpec::Polynomial { degree: 3, coef0: 1.0 },
    ];
    for kernel in kernels {
        for _ in 0..5 {
            let rows: Vec<Vec<f64>> = (0..25).map(|_| (0..4).map(|_| r.random::<f64>() * 2.0 - 1.0).collect()).collect();
            let d = common::design(&rows, &[1.0; 25], &[true; 25]);
            let k = DMatrix::from_row_slice(25, 25, &kernel_matrix(&kernel, &d));
            assert_eq!(k, k.transpose());
            let min = SymmetricEigen::new(k).eigenvalues.min();
            assert!(min >= -1e-8, "{kernel:?}: min eigenvalue {min}");
        }
    }
}

#[test]
fn tiny_c_gives_near_zero_scores() {
    let mut r = common::rng(2);
    let rows: Vec<Vec<f64>> = (0..80).map(|_| vec![r.random::<f64>(), r.random::<f64>()]).collect();
    let times: Vec<f64> = (0..80).map(|_| r.random::<f64>()).collect();
    let events: Vec<bool> = (0..80).map(|_| r.random::<f64>() < 0.6).collect();
    let d = common::design(&rows, &times, &events);
    let m = fit_ksvm(&d, &KernelSpec::Rbf { gamma: 0.5 }, &KsvmOptions { c: 1e-8, ..Default::default() }).unwrap();
    let scores: Vec<f64> = d.rows().map(|x| predict_rank_score(&m, x).unwrap()).collect();
    assert!(scores.iter().all(|s| s.abs() < 1e-4));
    assert!(m.dual_coefficients.iter().all(|&a| (0.0..=1e-8).contains(&a)));
}

#[test]
fn linear_scores_are_a_dot_product() {
    let d = common::random_design(&mut common::rng(3), 60, &[1.0, -0.5, 0.2], 0.3);
    let m = fit_ksvm(&d, &KernelSpec::Linear, &KsvmOptions::default()).unwrap();
    let w = m.linear_weights().unwrap();
    for x in d.rows() {
        let dot: f64 = w.iter().zip(x).map(|(a, b)| a * b).sum();
        assert!((predict_rank_score(&m, x).unwrap() - dot).abs() < 1e-10);
    }
    assert!(fit_ksvm(&d, &KernelSpec::Rbf { gamma: 1.0 }, &KsvmOptions::default()).unwrap().linear_weights().is_none());
}

#[test]
fn dual_feasible_and_monotone() {
    let d = common::random_design(&mut common::rng(4), 100, &[1.0, -1.0], 0.4);
    let c = 0.5;
    let m = fit_ksvm(&d, &KernelSpec::Rbf { gamma: 0.5 }, &KsvmOptions { c, ..Default::default() }).unwrap();
    assert!(m.converged);
    assert!(m.dual_coefficients.iter().all(|&a| a > 0.0 && a <= c));
    for w in m.dual_objective_trace.windows(2) {
        assert!(w[1] >= w[0] - 1e-9 * w[0].abs().max(1.0));
    }
}

#[test]
fn pair_subsampling_is_seeded() {
    let d = common::random_design(&mut common::rng(5), 120, &[1.0, 0.3], 0.2);
    let n_pairs = comparable_pairs(d.times(), d.events()).len();
    let opts = KsvmOptions { max_pairs: n_pairs / 3, seed: 11, ..Default::default() };
    let a = fit_ksvm(&d, &KernelSpec::Linear, &opts).unwrap();
    let b = fit_ksvm(&d, &KernelSpec::Linear, &opts).unwrap();
    assert_eq!(a, b);
    let other = fit_ksvm(&d, &KernelSpec::Linear, &KsvmOptions { seed: 12, ..opts }).unwrap();
    assert_ne!(a.pairs, other.pairs);
    assert!(a.pairs.len() <= n_pairs / 3);
}

#[test]
fn learns_the_risk_direction() {
    let train = common::random_design(&mut common::rng(6), 300, &[1.5, -1.0], 0.3);
    let test = common::random_design(&mut common::rng(7), 300, &[1.5, -1.0], 0.3);
    let m = fit_ksvm(&train, &KernelSpec::Rbf { gamma: 0.5 }, &KsvmOptions::default()).unwrap();
    let s: Vec<f64> = test.rows().map(|x| predict_rank_score(&m, x).unwrap()).collect();
    assert!(concordance_index(test.times(), test.events(), &s).unwrap().c_index > 0.65);
}
