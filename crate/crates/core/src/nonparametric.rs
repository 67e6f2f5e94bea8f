//! Kaplan-Meier and Nelson-Aalen estimators.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::data::{Cohort, ColumnKind, Value};
use crate::error::{Result, SurvError};

/// Right-continuous step function: `initial_value` on `[0, knots[0])`, then
/// `values[k]` on `[knots[k], knots[k+1])`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepFunction {
    knots: Vec<f64>,
    values: Vec<f64>,
    initial_value: f64,
}

impl StepFunction {
    pub fn new(knots: Vec<f64>, values: Vec<f64>, initial_value: f64) -> Result<Self> {
        if knots.len() != values.len() {
            return Err(SurvError::InvalidInput("knots and values differ in length".into()));
        }
        if knots.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(SurvError::InvalidInput("knots must be strictly increasing".into()));
        }
        Ok(StepFunction { knots, values, initial_value })
    }

    pub fn constant(value: f64) -> Self {
        StepFunction { knots: Vec::new(), values: Vec::new(), initial_value: value }
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn initial_value(&self) -> f64 {
        self.initial_value
    }

    pub fn eval(&self, t: f64) -> f64 {
        // number of knots <= t
        let k = self.knots.partition_point(|&x| x <= t);
        if k == 0 {
            self.initial_value
        } else {
            self.values[k - 1]
        }
    }

    /// Value after the last knot.
    pub fn final_value(&self) -> f64 {
        self.values.last().copied().unwrap_or(self.initial_value)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> StepFunction {
        StepFunction {
            knots: self.knots.clone(),
            values: self.values.iter().map(|&v| f(v)).collect(),
            initial_value: f(self.initial_value),
        }
    }

    /// Pointwise arithmetic mean of several step functions on the union of
    /// their knots. Terms are summed in slice order.
    pub fn mean(functions: &[&StepFunction]) -> Result<StepFunction> {
        if functions.is_empty() {
            return Err(SurvError::InvalidInput("cannot average zero step functions".into()));
        }
        let mut knots: Vec<f64> = functions.iter().flat_map(|f| f.knots.iter().copied()).collect();
        knots.sort_by(|a, b| a.total_cmp(b));
        knots.dedup();
        let m = functions.len() as f64;
        let initial_value = functions.iter().map(|f| f.initial_value).sum::<f64>() / m;
        let mut cursors = vec![0usize; functions.len()];
        let mut values = Vec::with_capacity(knots.len());
        for &t in &knots {
            let mut sum = 0.0;
            for (f, c) in functions.iter().zip(cursors.iter_mut()) {
                while *c < f.knots.len() && f.knots[*c] <= t {
                    *c += 1;
                }
                sum += if *c == 0 { f.initial_value } else { f.values[*c - 1] };
            }
            values.push(sum / m);
        }
        Ok(StepFunction { knots, values, initial_value })
    }

    /// Two-column `time,value` CSV, starting with the value at time 0.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("time,value\n");
        if self.knots.first().is_none_or(|&k| k > 0.0) {
            s.push_str(&format!("0,{}\n", crate::report::fmt6(self.initial_value)));
        }
        for (t, v) in self.knots.iter().zip(&self.values) {
            s.push_str(&format!("{},{}\n", crate::report::fmt6(*t), crate::report::fmt6(*v)));
        }
        s
    }
}

/// Distinct event times with the number at risk and number of events.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RiskTable {
    pub event_times: Vec<f64>,
    pub n_at_risk: Vec<usize>,
    pub n_events: Vec<usize>,
}

impl RiskTable {
    /// Events and censorings at the same time: the censored records are
    /// still counted in the risk set at that time.
    pub fn from_outcomes(times: &[f64], events: &[bool]) -> RiskTable {
        let mut order: Vec<usize> = (0..times.len()).collect();
        order.sort_by(|&a, &b| times[a].total_cmp(&times[b]));
        let mut table = RiskTable::default();
        let mut at_risk = times.len();
        let mut i = 0;
        while i < order.len() {
            let t = times[order[i]];
            let mut j = i;
            let mut d = 0;
            while j < order.len() && times[order[j]] == t {
                d += events[order[j]] as usize;
                j += 1;
            }
            if d > 0 {
                table.event_times.push(t);
                table.n_at_risk.push(at_risk);
                table.n_events.push(d);
            }
            at_risk -= j - i;
            i = j;
        }
        table
    }

    pub fn is_empty(&self) -> bool {
        self.event_times.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KmFit {
    pub survival: StepFunction,
    pub table: RiskTable,
}

/// Product-limit survival curve from raw outcomes.
pub fn km_from_outcomes(times: &[f64], events: &[bool]) -> KmFit {
    let table = RiskTable::from_outcomes(times, events);
    let mut s = 1.0;
    let values = table
        .n_at_risk
        .iter()
        .zip(&table.n_events)
        .map(|(&n, &d)| {
            s *= 1.0 - d as f64 / n as f64;
            s
        })
        .collect();
    KmFit {
        survival: StepFunction { knots: table.event_times.clone(), values, initial_value: 1.0 },
        table,
    }
}

pub fn fit_km(cohort: &Cohort) -> Result<KmFit> {
    if cohort.is_empty() {
        return Err(SurvError::InvalidInput("cohort is empty".into()));
    }
    Ok(km_from_outcomes(&cohort.times(), &cohort.events()))
}

/// Kaplan-Meier curves for every nonempty combination of levels of the given
/// categorical columns. Keys read `Gender=Female, Interests=Sports`.
pub fn fit_km_grouped(cohort: &Cohort, group_by: &[&str]) -> Result<BTreeMap<String, KmFit>> {
    if cohort.is_empty() {
        return Err(SurvError::InvalidInput("cohort is empty".into()));
    }
    let schema = cohort.schema();
    let mut cols = Vec::new();
    for name in group_by {
        let idx = schema
            .index_of(name)
            .ok_or_else(|| SurvError::Schema(format!("unknown column `{name}`")))?;
        match &schema.columns()[idx].kind {
            ColumnKind::Categorical { levels } => cols.push((idx, *name, levels)),
            ColumnKind::Numeric => {
                return Err(SurvError::Schema(format!("cannot group by numeric column `{name}`")))
            }
        }
    }
    let mut groups: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for (i, r) in cohort.records().iter().enumerate() {
        let key = cols
            .iter()
            .map(|(idx, name, levels)| match r.covariates[*idx] {
                Value::Level(l) => format!("{name}={}", levels[l]),
                Value::Numeric(x) => format!("{name}={x}"),
            })
            .collect::<Vec<_>>()
            .join(", ");
        groups.entry(key).or_default().push(i);
    }
    Ok(groups
        .into_iter()
        .map(|(k, idx)| {
            let times: Vec<f64> = idx.iter().map(|&i| cohort.records()[i].time).collect();
            let events: Vec<bool> = idx.iter().map(|&i| cohort.records()[i].event).collect();
            (k, km_from_outcomes(&times, &events))
        })
        .collect())
}

/// Nelson-Aalen cumulative hazard from raw outcomes.
pub fn nelson_aalen_from_outcomes(times: &[f64], events: &[bool]) -> StepFunction {
    let table = RiskTable::from_outcomes(times, events);
    let mut h = 0.0;
    let values = table
        .n_at_risk
        .iter()
        .zip(&table.n_events)
        .map(|(&n, &d)| {
            h += d as f64 / n as f64;
            h
        })
        .collect();
    StepFunction { knots: table.event_times, values, initial_value: 0.0 }
}

pub fn fit_nelson_aalen(cohort: &Cohort) -> Result<StepFunction> {
    if cohort.is_empty() {
        return Err(SurvError::InvalidInput("cohort is empty".into()));
    }
    Ok(nelson_aalen_from_outcomes(&cohort.times(), &cohort.events()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn step_eval_is_right_continuous() {
        let f = StepFunction::new(vec![1.0, 2.0], vec![0.5, 0.25], 1.0).unwrap();
        assert_eq!(f.eval(0.0), 1.0);
        assert_eq!(f.eval(0.999), 1.0);
        assert_eq!(f.eval(1.0), 0.5);
        assert_eq!(f.eval(1.5), 0.5);
        assert_eq!(f.eval(2.0), 0.25);
        assert_eq!(f.eval(1e9), 0.25);
        assert!(StepFunction::new(vec![1.0, 1.0], vec![0.5, 0.2], 1.0).is_err());
    }

    #[test]
    fn mean_of_two_step_functions() {
        let a = StepFunction::new(vec![1.0, 3.0], vec![0.2, 0.6], 0.0).unwrap();
        let b = StepFunction::new(vec![2.0, 3.0], vec![0.4, 1.0], 0.0).unwrap();
        let m = StepFunction::mean(&[&a, &b]).unwrap();
        assert_eq!(m.knots(), &[1.0, 2.0, 3.0]);
        // hand-computed: t=1 -> (0.2+0)/2, t=2 -> (0.2+0.4)/2, t=3 -> (0.6+1.0)/2
        let expect = [0.1, 0.3, 0.8];
        for (v, e) in m.values().iter().zip(expect) {
            assert!((v - e).abs() < 1e-15);
        }
    }

    #[test]
    fn km_censoring_changes_risk_set_only() {
        let times = [1.0, 2.0, 2.0, 3.0, 4.0];
        let events = [true, false, true, false, true];
        let fit = km_from_outcomes(&times, &events);
        assert_eq!(fit.table.event_times, vec![1.0, 2.0, 4.0]);
        assert_eq!(fit.table.n_at_risk, vec![5, 4, 1]);
        assert_eq!(fit.table.n_events, vec![1, 1, 1]);
        let s = fit.survival.values();
        assert!((s[0] - 0.8).abs() < 1e-15);
        assert!((s[1] - 0.8 * 0.75).abs() < 1e-15);
        assert_eq!(s[2], 0.0);
    }

    #[test]
    fn all_censored_is_constant_one() {
        let fit = km_from_outcomes(&[1.0, 2.0], &[false, false]);
        assert!(fit.table.is_empty());
        assert_eq!(fit.survival.eval(10.0), 1.0);
        let na = nelson_aalen_from_outcomes(&[1.0, 2.0], &[false, false]);
        assert_eq!(na.eval(10.0), 0.0);
    }

    #[test]
    fn single_event_na() {
        let na = nelson_aalen_from_outcomes(&[1.0], &[true]);
        assert_eq!(na.eval(1.0), 1.0);
        assert_eq!(na.eval(0.5), 0.0);
    }
}
