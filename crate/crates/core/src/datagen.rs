//! Synthetic purchase cohorts with a known hazard.
//!
//! Each record draws ten covariates, an exponential purchase time with rate
//! `baseline_rate * exp(risk(x))` and a censoring time
//! `min(censor_horizon, Exp(censor_rate))`.
//!
//! Randomness comes from ChaCha8 seeded through `seed_from_u64`. Uniforms
//! use the top 53 bits of `next_u64` (`(u >> 11) * 2^-53`), normals use the
//! cosine branch of Box-Muller on two consecutive uniforms, categoricals take
//! `floor(u * levels)`, and exponentials `-ln(1 - u) / rate`. Per record the
//! draw order is the schema order followed by the event-time uniform and the
//! censoring uniform, so a port that follows these rules reproduces cohorts
//! bit for bit.

use std::io::Write;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Cohort, Column, CovariateSchema, SurvivalRecord, Value};
use crate::error::{Result, SurvError};

pub const TIME_COL: &str = "time";
pub const EVENT_COL: &str = "event";

const AGE_RANGE: (f64, f64) = (18.0, 75.0);
const LOG_INCOME_MEAN: f64 = 10.5;
const LOG_INCOME_SD: f64 = 0.4;

/// Horizon giving ~48% censoring under the default nonlinear hazard, found
/// with [`calibrate_censoring`] on a 10,000-record pilot.
pub const DEFAULT_CENSOR_HORIZON: f64 = 62.17;

/// The ten covariates of the purchase cohort, in generation order.
pub fn purchase_schema() -> CovariateSchema {
    CovariateSchema::new(vec![
        Column::numeric("Age"),
        Column::categorical("Gender", &["Female", "Male"]),
        Column::numeric("Income"),
        Column::categorical("MaritalStatus", &["Single", "Married", "Divorced", "Widowed"]),
        Column::categorical("Location", &["Urban", "Suburban", "Rural"]),
        Column::numeric("PurchaseHistory"),
        Column::numeric("OnlineBehavior"),
        Column::categorical("Interests", &["Technology", "Fashion", "Sports", "Home"]),
        Column::numeric("PromotionsDiscounts"),
        Column::numeric("CustomerExperience"),
    ])
    .expect("static schema is valid")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HazardTerm {
    pub column: String,
    /// For categorical columns: the level whose indicator is multiplied.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub level: Option<String>,
    pub coefficient: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NonlinearForm {
    /// `2 z(PurchaseHistory) z(PromotionsDiscounts) + z(CustomerExperience)^2`
    InteractionSquare,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum HazardKind {
    /// `risk = sum coefficient * z(column)` (or the level indicator).
    Proportional { terms: Vec<HazardTerm> },
    Nonlinear { form: NonlinearForm },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GeneratorConfig {
    pub n: usize,
    pub seed: u64,
    pub hazard: HazardKind,
    pub baseline_rate: f64,
    /// Administrative end of observation.
    pub censor_horizon: f64,
    /// Rate of independent exponential censoring; `0` disables it.
    pub censor_rate: f64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            n: 1000,
            seed: 2024,
            hazard: HazardKind::Nonlinear { form: NonlinearForm::InteractionSquare },
            baseline_rate: 0.005,
            censor_horizon: DEFAULT_CENSOR_HORIZON,
            censor_rate: 0.001,
        }
    }
}

impl GeneratorConfig {
    pub fn proportional(terms: &[(&str, f64)]) -> Self {
        GeneratorConfig {
            hazard: HazardKind::Proportional {
                terms: terms
                    .iter()
                    .map(|(c, b)| HazardTerm { column: c.to_string(), level: None, coefficient: *b })
                    .collect(),
            },
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(SurvError::Config("n must be at least 1".into()));
        }
        if !(self.baseline_rate > 0.0) || !(self.censor_horizon > 0.0) || !(self.censor_rate >= 0.0) {
            return Err(SurvError::Config("baseline_rate and censor_horizon must be > 0, censor_rate >= 0".into()));
        }
        if let HazardKind::Proportional { terms } = &self.hazard {
            let schema = purchase_schema();
            for t in terms {
                let col = schema
                    .column(&t.column)
                    .ok_or_else(|| SurvError::Config(format!("unknown hazard column `{}`", t.column)))?;
                match (col.levels(), &t.level) {
                    (None, None) => {}
                    (Some(levels), Some(l)) if levels.contains(l) => {}
                    _ => return Err(SurvError::Config(format!("bad level for hazard column `{}`", t.column))),
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    /// Purchase times before censoring.
    pub true_times: Vec<f64>,
    /// Independent exponential censoring draws (before the horizon cap).
    pub random_censor_times: Vec<f64>,
    pub true_risks: Vec<f64>,
}

impl GroundTruth {
    /// `record_id,true_time,true_risk` CSV.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["record_id", "true_time", "true_risk"])?;
        for (i, (t, r)) in self.true_times.iter().zip(&self.true_risks).enumerate() {
            w.write_record([i.to_string(), format!("{t}"), format!("{r}")])?;
        }
        w.flush()?;
        Ok(())
    }
}

struct Stream(ChaCha8Rng);

impl Stream {
    fn uniform(&mut self) -> f64 {
        (self.0.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    fn normal(&mut self) -> f64 {
        let u1 = 1.0 - self.uniform();
        let u2 = self.uniform();
        (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
    }

    fn level(&mut self, n_levels: usize) -> usize {
        ((self.uniform() * n_levels as f64) as usize).min(n_levels - 1)
    }

    fn exponential(&mut self, rate: f64) -> f64 {
        -(1.0 - self.uniform()).ln() / rate
    }
}

/// Population-standardized value of a numeric covariate.
fn z_value(column: &str, x: f64) -> f64 {
    match column {
        "Age" => {
            let (lo, hi) = AGE_RANGE;
            (x - 0.5 * (lo + hi)) / ((hi - lo) / 12f64.sqrt())
        }
        "Income" => (x.ln() - LOG_INCOME_MEAN) / LOG_INCOME_SD,
        _ => x,
    }
}

fn risk(schema: &CovariateSchema, hazard: &HazardKind, covariates: &[Value]) -> f64 {
    let z = |name: &str| {
        let idx = schema.index_of(name).expect("hazard column in schema");
        z_value(name, covariates[idx].as_f64())
    };
    match hazard {
        HazardKind::Proportional { terms } => terms
            .iter()
            .map(|t| {
                let idx = schema.index_of(&t.column).expect("validated column");
                let col = &schema.columns()[idx];
                let x = match (&t.level, col.levels(), covariates[idx]) {
                    (Some(level), Some(levels), Value::Level(l)) => (levels[l] == *level) as u8 as f64,
                    _ => z(&t.column),
                };
                t.coefficient * x
            })
            .sum(),
        HazardKind::Nonlinear { form: NonlinearForm::InteractionSquare } => {
            2.0 * z("PurchaseHistory") * z("PromotionsDiscounts") + z("CustomerExperience").powi(2)
        }
    }
}

pub fn generate(config: &GeneratorConfig) -> Result<(Cohort, GroundTruth)> {
    config.validate()?;
    let schema = purchase_schema();
    let mut rng = Stream(ChaCha8Rng::seed_from_u64(config.seed));
    let mut records = Vec::with_capacity(config.n);
    let mut truth = GroundTruth {
        true_times: Vec::with_capacity(config.n),
        random_censor_times: Vec::with_capacity(config.n),
        true_risks: Vec::with_capacity(config.n),
    };
    for _ in 0..config.n {
        let covariates: Vec<Value> = schema
            .columns()
            .iter()
            .map(|c| match (c.name.as_str(), c.levels()) {
                (_, Some(levels)) => Value::Level(rng.level(levels.len())),
                ("Age", None) => {
                    let (lo, hi) = AGE_RANGE;
                    Value::Numeric(lo + (hi - lo) * rng.uniform())
                }
                ("Income", None) => Value::Numeric((LOG_INCOME_MEAN + LOG_INCOME_SD * rng.normal()).exp()),
                (_, None) => Value::Numeric(rng.normal()),
            })
            .collect();
        let r = risk(&schema, &config.hazard, &covariates);
        let true_time = rng.exponential(config.baseline_rate * r.exp());
        let random_censor = if config.censor_rate > 0.0 { rng.exponential(config.censor_rate) } else { f64::INFINITY };
        let censor = random_censor.min(config.censor_horizon);
        let event = true_time <= censor;
        records.push(SurvivalRecord { covariates, time: true_time.min(censor), event });
        truth.true_times.push(true_time);
        truth.random_censor_times.push(random_censor);
        truth.true_risks.push(r);
    }
    Ok((Cohort::new(schema, records)?, truth))
}

const PILOT_SIZE: usize = 10_000;

fn censored_fraction(truth: &GroundTruth, horizon: f64) -> f64 {
    let censored = truth
        .true_times
        .iter()
        .zip(&truth.random_censor_times)
        .filter(|(&t, &c)| t > c.min(horizon))
        .count();
    censored as f64 / truth.true_times.len() as f64
}

/// Adjusts `censor_horizon` by bisection so that a 10,000-record pilot draw
/// (same seed) is censored at the `target` rate to within 0.01.
pub fn calibrate_censoring(config: &GeneratorConfig, target: f64) -> Result<GeneratorConfig> {
    if !(target > 0.0 && target < 1.0) {
        return Err(SurvError::Config(format!("censoring target must lie in (0,1), got {target}")));
    }
    let pilot = GeneratorConfig { n: PILOT_SIZE, censor_horizon: f64::MAX, ..config.clone() };
    let (_, truth) = generate(&pilot)?;
    let max_time = truth.true_times.iter().copied().fold(0.0_f64, f64::max);
    let floor = censored_fraction(&truth, f64::INFINITY);
    if floor > target + 0.01 {
        return Err(SurvError::Config(format!(
            "censoring target {target} unattainable: random censoring alone censors {floor:.3}"
        )));
    }
    // fraction is nonincreasing in the horizon
    let (mut lo, mut hi) = (max_time * 1e-12, max_time * 2.0);
    for _ in 0..200 {
        let mid = (lo * hi).sqrt();
        if censored_fraction(&truth, mid) > target {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi / lo < 1.0 + 1e-12 {
            break;
        }
    }
    let horizon = hi;
    let achieved = censored_fraction(&truth, horizon);
    if (achieved - target).abs() > 0.01 {
        return Err(SurvError::Config(format!("censoring target {target} unattainable (closest {achieved:.4})")));
    }
    Ok(GeneratorConfig { censor_horizon: horizon, ..config.clone() })
}
