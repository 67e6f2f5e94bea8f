mod common;

use std::collections::HashMap;

use purchase_survival::cox::{fit_cox, predict_risk, CoxOptions};
use purchase_survival::nonparametric::{nelson_aalen_from_outcomes, StepFunction};
use purchase_survival::rsf::{fit_forest, logrank_score, mortality_score, predict_chf, Forest, Node, RsfOptions};
use purchase_survival::{concordance_index, DesignMatrix};
use rand::Rng;

/// Textbook two-sample log-rank statistic, counting risk sets directly at
/// every distinct event time.
fn logrank_oracle(times: &[f64], events: &[bool], left: &[bool]) -> f64 {
    let mut event_times: Vec<f64> = times.iter().zip(events).filter(|(_, &e)| e).map(|(&t, _)| t).collect();
    event_times.sort_by(f64::total_cmp);
    event_times.dedup();
    let (mut o, mut e, mut v) = (0.0, 0.0, 0.0);
    for t in event_times {
        let at = |pred: &dyn Fn(usize) -> bool| (0..times.len()).filter(|&i| pred(i)).count() as f64;
        let y = at(&|i| times[i] >= t);
        let y1 = at(&|i| times[i] >= t && left[i]);
        let d = at(&|i| times[i] == t && events[i]);
        let d1 = at(&|i| times[i] == t && events[i] && left[i]);
        o += d1;
        e += d * y1 / y;
        if y > 1.0 {
            v += d * (y1 / y) * (1.0 - y1 / y) * (y - d) / (y - 1.0);
        }
    }
    (o - e).abs() / v.sqrt()
}

#[test]
fn logrank_four_record_fixture() {
    // left = {1, 3}, right = {2, 4}, all events:
    // O - E = 2 - (1/2 + 1/3 + 1/2) = 2/3, V = 1/4 + 2/9 + 1/4 = 13/18
    let d = common::design(&[vec![0.0], vec![1.0], vec![0.0], vec![1.0]], &[1.0, 2.0, 3.0, 4.0], &[true; 4]);
    let s = logrank_score(&d, &[0, 1, 2, 3], 0, 0.5).unwrap();
    let expect = (2.0 / 3.0) / (13.0f64 / 18.0).sqrt();
    assert!((s - expect).abs() < 1e-12);
}

#[test]
fn logrank_matches_oracle_on_twenty_record_fixtures() {
    let mut r = common::rng(1);
    let mut tested = 0;
    for _ in 0..200 {
        let n = 20;
        let rows: Vec<Vec<f64>> = (0..n).map(|_| vec![r.random_range(0..6) as f64]).collect();
        let times: Vec<f64> = (0..n).map(|_| r.random_range(1..9) as f64).collect();
        let events: Vec<bool> = (0..n).map(|_| r.random::<f64>() < 0.7).collect();
        let d = common::design(&rows, &times, &events);
        let threshold = r.random_range(0..5) as f64 + 0.5;
        let left: Vec<bool> = rows.iter().map(|x| x[0] <= threshold).collect();
        let sample: Vec<usize> = (0..n).collect();
        let Some(score) = logrank_score(&d, &sample, 0, threshold) else {
            continue;
        };
        let oracle = logrank_oracle(&times, &events, &left);
        assert!((score - oracle).abs() < 1e-10, "{score} vs {oracle}");
        // swapping sides leaves the statistic unchanged
        let flipped: Vec<Vec<f64>> = rows.iter().map(|x| vec![-x[0]]).collect();
        let df = common::design(&flipped, &times, &events);
        let s2 = logrank_score(&df, &sample, 0, -threshold - 1e-9).unwrap();
        assert!((score - s2).abs() < 1e-10);
        tested += 1;
    }
    assert!(tested > 150);
}

#[test]
fn logrank_null_split_is_zero() {
    // both sides carry identical outcomes
    let d = common::design(&[vec![0.0], vec![1.0], vec![0.0], vec![1.0]], &[1.0, 1.0, 2.0, 2.0], &[true; 4]);
    assert!(logrank_score(&d, &[0, 1, 2, 3], 0, 0.5).unwrap().abs() < 1e-12);
}

fn small_design(seed: u64, n: usize) -> DesignMatrix {
    common::random_design(&mut common::rng(seed), n, &[1.0, -1.0, 0.5], 0.3)
}

#[test]
fn unsplit_tree_is_nelson_aalen_of_its_bootstrap() {
    let d = small_design(2, 60);
    let f = fit_forest(&d, &RsfOptions { n_trees: 1, min_leaf: 60, ..Default::default() }).unwrap();
    let tree = &f.trees[0];
    assert_eq!(tree.n_leaves(), 1);
    let times: Vec<f64> = tree.in_bag.iter().map(|&i| d.times()[i]).collect();
    let events: Vec<bool> = tree.in_bag.iter().map(|&i| d.events()[i]).collect();
    let na = nelson_aalen_from_outcomes(&times, &events);
    assert_eq!(predict_chf(&f, d.row(0)).unwrap(), na);
    let s0 = mortality_score(&f, d.row(0)).unwrap();
    assert!(d.rows().all(|x| mortality_score(&f, x).unwrap() == s0));
}

#[test]
fn deterministic_and_bag_bookkeeping() {
    let d = small_design(3, 120);
    let opts = RsfOptions { n_trees: 20, min_leaf: 5, seed: 9, ..Default::default() };
    let f = fit_forest(&d, &opts).unwrap();
    assert_eq!(fit_forest(&d, &opts).unwrap(), f);
    for t in &f.trees {
        assert_eq!(t.in_bag.len(), d.n_rows());
        assert!(t.out_of_bag.iter().all(|i| t.in_bag.binary_search(i).is_err()));
        let distinct_in: std::collections::BTreeSet<_> = t.in_bag.iter().collect();
        assert_eq!(distinct_in.len() + t.out_of_bag.len(), d.n_rows());
    }
}

#[test]
fn leaves_partition_the_bootstrap_and_respect_min_leaf() {
    let d = small_design(4, 200);
    let min_leaf = 8;
    let f = fit_forest(&d, &RsfOptions { n_trees: 10, min_leaf, ..Default::default() }).unwrap();
    for t in &f.trees {
        let mut routed: HashMap<*const Node, usize> = HashMap::new();
        for &i in &t.in_bag {
            *routed.entry(t.leaf_for(d.row(i)) as *const Node).or_default() += 1;
        }
        let mut total = 0;
        for node in &t.nodes {
            if let Node::Leaf { size, .. } = node {
                assert!(*size >= min_leaf);
                assert_eq!(routed.get(&(node as *const Node)).copied().unwrap_or(0), *size);
                total += size;
            }
        }
        assert_eq!(total, d.n_rows());
    }
}

#[test]
fn tree_order_does_not_matter() {
    let d = small_design(5, 100);
    let f = fit_forest(&d, &RsfOptions { n_trees: 15, min_leaf: 5, ..Default::default() }).unwrap();
    let mut rev: Forest = f.clone();
    rev.trees.reverse();
    for x in d.rows().take(20) {
        let a = predict_chf(&f, x).unwrap();
        let b = predict_chf(&rev, x).unwrap();
        assert_eq!(a.knots(), b.knots());
        for (u, v) in a.values().iter().zip(b.values()) {
            assert!((u - v).abs() <= 1e-12 * u.abs().max(1.0));
        }
    }
}

#[test]
fn monotone_transform_keeps_the_partition() {
    let d = small_design(6, 150);
    let rows: Vec<Vec<f64>> = d.rows().map(|x| vec![x[0].exp(), x[1], x[2]]).collect();
    let d2 = DesignMatrix::from_rows(&rows, d.column_names().to_vec(), d.times().to_vec(), d.events().to_vec()).unwrap();
    let opts = RsfOptions { n_trees: 10, min_leaf: 6, seed: 4, ..Default::default() };
    let f1 = fit_forest(&d, &opts).unwrap();
    let f2 = fit_forest(&d2, &opts).unwrap();
    for (t1, t2) in f1.trees.iter().zip(&f2.trees) {
        assert_eq!(t1.nodes.len(), t2.nodes.len());
        for i in 0..d.n_rows() {
            assert_eq!(t1.leaf_chf(d.row(i)), t2.leaf_chf(d2.row(i)));
        }
    }
}

#[test]
fn mean_of_two_step_functions() {
    let a = StepFunction::new(vec![1.0, 3.0], vec![0.5, 1.0], 0.0).unwrap();
    let b = StepFunction::new(vec![2.0], vec![2.0], 0.0).unwrap();
    let m = StepFunction::mean(&[&a, &b]).unwrap();
    assert_eq!(m.knots(), &[1.0, 2.0, 3.0]);
    assert_eq!(m.values(), &[0.25, 1.25, 1.5]);
    assert!(m.final_value().is_finite());
}

#[test]
fn score_is_the_chf_sum_over_event_times() {
    let d = small_design(7, 100);
    let f = fit_forest(&d, &RsfOptions { n_trees: 12, min_leaf: 5, ..Default::default() }).unwrap();
    let mut grid: Vec<f64> = d.times().iter().zip(d.events()).filter(|(_, &e)| e).map(|(&t, _)| t).collect();
    grid.sort_by(f64::total_cmp);
    grid.dedup();
    let rows: Vec<&[f64]> = d.rows().take(10).collect();
    for x in &rows {
        let chf = predict_chf(&f, x).unwrap();
        let direct: f64 = grid.iter().map(|&t| chf.eval(t)).sum();
        assert_eq!(mortality_score(&f, x).unwrap(), direct);
    }
    for a in &rows {
        for b in &rows {
            let (ca, cb) = (predict_chf(&f, a).unwrap(), predict_chf(&f, b).unwrap());
            if grid.iter().all(|&t| ca.eval(t) <= cb.eval(t)) {
                assert!(mortality_score(&f, a).unwrap() <= mortality_score(&f, b).unwrap());
            }
        }
    }
}

/// Log hazard `2 x1 x2`: invisible to a linear model.
fn interaction_design(seed: u64, n: usize) -> DesignMatrix {
    let mut r = common::rng(seed);
    let mut rows = Vec::new();
    let mut times = Vec::new();
    let mut events = Vec::new();
    for _ in 0..n {
        // unit-variance uniforms
        let x: Vec<f64> = (0..3).map(|_| (r.random::<f64>() * 2.0 - 1.0) * 3f64.sqrt()).collect();
        let t = -(1.0 - r.random::<f64>()).ln() / (2.0 * x[0] * x[1]).exp();
        let c = -(1.0 - r.random::<f64>()).ln() * 1.5;
        times.push(t.min(c));
        events.push(t <= c);
        rows.push(x);
    }
    common::design(&rows, &times, &events)
}

#[test]
fn beats_cox_on_an_interaction_hazard() {
    let train = interaction_design(8, 1000);
    let test = interaction_design(9, 500);
    let f = fit_forest(&train, &RsfOptions { seed: 1, ..Default::default() }).unwrap();
    let rsf_scores: Vec<f64> = test.rows().map(|x| mortality_score(&f, x).unwrap()).collect();
    let rsf_c = concordance_index(test.times(), test.events(), &rsf_scores).unwrap().c_index;
    let cox = fit_cox(&train, &CoxOptions::default()).unwrap();
    let cox_c = concordance_index(test.times(), test.events(), &predict_risk(&cox, &test).unwrap()).unwrap().c_index;
    assert!(rsf_c >= cox_c + 0.05, "rsf {rsf_c} cox {cox_c}");
}
