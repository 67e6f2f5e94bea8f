mod common;

use proptest::prelude::*;
use purchase_survival::data::{Column, SurvivalRecord, Value};
use purchase_survival::nonparametric::{
    fit_km, fit_km_grouped, km_from_outcomes, nelson_aalen_from_outcomes, StepFunction,
};
use purchase_survival::{Cohort, CovariateSchema, SurvError};
use rand::Rng;

/// Product-limit estimate at `t` by direct counting.
fn km_oracle(times: &[f64], events: &[bool], t: f64) -> f64 {
    let mut distinct: Vec<f64> = times.iter().zip(events).filter(|(_, &e)| e).map(|(&s, _)| s).collect();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();
    let mut s = 1.0;
    for &u in distinct.iter().filter(|&&u| u <= t) {
        let n = times.iter().filter(|&&x| x >= u).count() as f64;
        let d = times.iter().zip(events).filter(|(&x, &e)| x == u && e).count() as f64;
        s *= 1.0 - d / n;
    }
    s
}

fn na_oracle(times: &[f64], events: &[bool], t: f64) -> f64 {
    let mut distinct: Vec<f64> = times.iter().zip(events).filter(|(_, &e)| e).map(|(&s, _)| s).collect();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();
    distinct
        .iter()
        .filter(|&&u| u <= t)
        .map(|&u| {
            let n = times.iter().filter(|&&x| x >= u).count() as f64;
            let d = times.iter().zip(events).filter(|(&x, &e)| x == u && e).count() as f64;
            d / n
        })
        .sum()
}

#[test]
fn first_two_events_among_395() {
    let mut times = vec![1.0, 2.0];
    let mut events = vec![true, true];
    times.extend(std::iter::repeat_n(10.0, 393));
    events.extend(std::iter::repeat_n(false, 393));
    let km = km_from_outcomes(&times, &events);
    assert!((km.survival.eval(1.0) - 0.997468).abs() < 1e-5);
    assert!((km.survival.eval(2.0) - 0.994937).abs() < 1e-5);
    assert_eq!(km.table.n_at_risk[..2], [395, 394]);
}

#[test]
fn thirteen_prior_events_then_one_at_382() {
    let mut times: Vec<f64> = (1..=14).map(f64::from).collect();
    let mut events = vec![true; 14];
    times.extend(std::iter::repeat_n(50.0, 395 - 14));
    events.extend(std::iter::repeat_n(false, 395 - 14));
    let km = km_from_outcomes(&times, &events);
    assert_eq!(km.table.n_at_risk[13], 382);
    let s = km.survival.eval(14.0);
    assert!((s - 381.0 / 395.0).abs() < 1e-14);
    assert!((s - 0.96456).abs() < 5e-4);
}

#[test]
fn eighteen_tied_events_among_682() {
    let mut times = vec![3.0; 18];
    let mut events = vec![true; 18];
    times.extend(std::iter::repeat_n(9.0, 664));
    events.extend(std::iter::repeat_n(false, 664));
    let km = km_from_outcomes(&times, &events);
    assert!((km.survival.eval(3.0) - 664.0 / 682.0).abs() < 1e-15);
    assert!((km.survival.eval(3.0) - 0.97361).abs() < 1e-5);
}

#[test]
fn censoring_tied_with_event_stays_at_risk() {
    let km = km_from_outcomes(&[1.0, 1.0, 2.0], &[true, false, true]);
    assert_eq!(km.table.n_at_risk, vec![3, 1]);
    assert!((km.survival.eval(1.0) - 2.0 / 3.0).abs() < 1e-15);
    assert_eq!(km.survival.eval(2.0), 0.0);
}

#[test]
fn all_censored_is_flat() {
    let km = km_from_outcomes(&[1.0, 2.0, 3.0], &[false; 3]);
    assert!(km.survival.knots().is_empty());
    assert_eq!(km.survival.eval(100.0), 1.0);
}

#[test]
fn exponential_median() {
    let mut r = common::rng(11);
    let times: Vec<f64> = (0..20_000).map(|_| -(1.0 - r.random::<f64>()).ln()).collect();
    let km = km_from_outcomes(&times, &vec![true; times.len()]);
    let s = km.survival.eval(std::f64::consts::LN_2);
    assert!((s - 0.5).abs() < 0.01, "S(ln 2) = {s}");
}

#[test]
fn nelson_aalen_tracks_km_on_large_risk_sets() {
    let mut r = common::rng(12);
    let n = 5000;
    let times: Vec<f64> = (0..n).map(|_| -(1.0 - r.random::<f64>()).ln()).collect();
    let events: Vec<bool> = (0..n).map(|_| r.random::<f64>() < 0.7).collect();
    let km = km_from_outcomes(&times, &events);
    let na = nelson_aalen_from_outcomes(&times, &events);
    for &t in &[0.1, 0.5, 1.0] {
        assert!((km.survival.eval(t) - (-na.eval(t)).exp()).abs() < 0.005);
    }
}

fn two_group_cohort() -> Cohort {
    let schema = CovariateSchema::new(vec![Column::categorical("Gender", &["Female", "Male"]), Column::numeric("Age")]).unwrap();
    let recs = (0..20)
        .map(|i| SurvivalRecord {
            covariates: vec![Value::Level(i % 2), Value::Numeric(20.0 + i as f64)],
            time: 1.0 + i as f64,
            event: i % 3 != 0,
        })
        .collect();
    Cohort::new(schema, recs).unwrap()
}

#[test]
fn grouped_curves_match_subsets() {
    let cohort = two_group_cohort();
    let groups = fit_km_grouped(&cohort, &["Gender"]).unwrap();
    assert_eq!(groups.len(), 2);
    let female: Vec<usize> = (0..20).filter(|i| i % 2 == 0).collect();
    let direct = fit_km(&cohort.subset(&female)).unwrap();
    assert_eq!(groups["Gender=Female"], direct);
}

#[test]
fn grouping_errors() {
    let cohort = two_group_cohort();
    assert!(matches!(fit_km_grouped(&cohort, &["Nope"]), Err(SurvError::Schema(_))));
    assert!(matches!(fit_km_grouped(&cohort, &["Age"]), Err(SurvError::Schema(_))));
}

#[test]
fn step_function_is_right_continuous() {
    let f = StepFunction::new(vec![1.0, 2.0], vec![0.5, 0.25], 1.0).unwrap();
    assert_eq!(f.eval(0.999), 1.0);
    assert_eq!(f.eval(1.0), 0.5);
    assert_eq!(f.eval(2.0), 0.25);
    assert!(StepFunction::new(vec![2.0, 1.0], vec![0.5, 0.25], 1.0).is_err());
}

fn outcomes() -> impl Strategy<Value = (Vec<f64>, Vec<bool>)> {
    (1usize..60).prop_flat_map(|n| {
        (proptest::collection::vec(1u8..20, n), proptest::collection::vec(any::<bool>(), n))
            .prop_map(|(t, e)| (t.into_iter().map(f64::from).collect(), e))
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(500))]

    #[test]
    fn km_and_na_are_monotone((times, events) in outcomes()) {
        let km = km_from_outcomes(&times, &events);
        let na = nelson_aalen_from_outcomes(&times, &events);
        let mut prev = 1.0;
        for &v in km.survival.values() {
            prop_assert!(v <= prev && (0.0..=1.0).contains(&v));
            prev = v;
        }
        let mut prev = 0.0;
        for &v in na.values() {
            prop_assert!(v >= prev);
            prev = v;
        }
    }

    #[test]
    fn estimators_match_direct_counting((times, events) in outcomes()) {
        let km = km_from_outcomes(&times, &events);
        let na = nelson_aalen_from_outcomes(&times, &events);
        for t in 0..21 {
            let t = t as f64 + 0.5 * (t % 2) as f64;
            prop_assert!((km.survival.eval(t) - km_oracle(&times, &events, t)).abs() < 1e-12);
            prop_assert!((na.eval(t) - na_oracle(&times, &events, t)).abs() < 1e-12);
        }
    }

    #[test]
    fn exp_of_minus_na_bounds_km((times, events) in outcomes()) {
        let km = km_from_outcomes(&times, &events);
        let na = nelson_aalen_from_outcomes(&times, &events);
        for &t in km.survival.knots() {
            prop_assert!((-na.eval(t)).exp() >= km.survival.eval(t) - 1e-12);
        }
    }
}
