//! Benchmark harness: fit the five models on a seeded split, score both
//! partitions with the C-index and write the comparison report, plus the
//! Kaplan-Meier and MTLR weight figures.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cox::{fit_cox, CoxModel, CoxOptions};
use crate::data::{self, Cohort, CohortSummary, Column, ColumnKind, CovariateSchema, Encoder, SurvivalRecord, Value};
use crate::datagen::{self, GeneratorConfig};
use crate::deepsurv::{fit_deepsurv, Activation, DeepSurvModel, DeepSurvOptions, MlpSpec};
use crate::error::{Result, SurvError};
use crate::ksvm::{fit_ksvm, predict_rank_score, KernelSpec, KsvmModel, KsvmOptions};
use crate::metrics::concordance_index;
use crate::mtlr::{feature_weights, feature_weights_csv, fit_mtlr, make_grid, MtlrModel, MtlrOptions};
use crate::nonparametric::{fit_km, fit_km_grouped, KmFit};
use crate::report::{bar_chart_svg, fmt6, step_plot_svg, write_atomic};
use crate::rsf::{derive_seed, fit_forest, mortality_score, Forest, RsfOptions};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Cox,
    Mtlr,
    Rsf,
    #[serde(alias = "deepsurv")]
    DeepSurv,
    Ksvm,
}

impl ModelKind {
    pub const ALL: [ModelKind; 5] = [ModelKind::Cox, ModelKind::Mtlr, ModelKind::Rsf, ModelKind::DeepSurv, ModelKind::Ksvm];

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Cox => "cox",
            ModelKind::Mtlr => "mtlr",
            ModelKind::Rsf => "rsf",
            ModelKind::DeepSurv => "deep_surv",
            ModelKind::Ksvm => "ksvm",
        }
    }

    pub fn parse(s: &str) -> Result<ModelKind> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "cox" | "coxph" => Ok(ModelKind::Cox),
            "mtlr" => Ok(ModelKind::Mtlr),
            "rsf" | "random_forest" => Ok(ModelKind::Rsf),
            "deepsurv" | "deep_surv" => Ok(ModelKind::DeepSurv),
            "ksvm" | "kernel_svm" => Ok(ModelKind::Ksvm),
            other => Err(SurvError::Config(format!("unknown model `{other}`"))),
        }
    }

    /// Trees are fitted on raw covariates, everything else on standardized ones.
    pub fn standardize(self) -> bool {
        !matches!(self, ModelKind::Rsf)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InputSource {
    Csv {
        path: PathBuf,
        /// Defaults to the ten-covariate purchase schema.
        #[serde(default)]
        schema: Option<CovariateSchema>,
        #[serde(default = "default_time_col")]
        time_col: String,
        #[serde(default = "default_event_col")]
        event_col: String,
    },
    Generator(GeneratorConfig),
}

fn default_time_col() -> String {
    datagen::TIME_COL.to_string()
}

fn default_event_col() -> String {
    datagen::EVENT_COL.to_string()
}

impl InputSource {
    pub fn load(&self) -> Result<Cohort> {
        match self {
            InputSource::Csv { path, schema, time_col, event_col } => {
                let schema = schema.clone().unwrap_or_else(datagen::purchase_schema);
                data::ingest_csv(path, &schema, time_col, event_col)
            }
            InputSource::Generator(cfg) => Ok(datagen::generate(cfg)?.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MtlrConfig {
    /// Number of grid boundaries.
    pub k: usize,
    #[serde(flatten)]
    pub options: MtlrOptions,
}

impl Default for MtlrConfig {
    fn default() -> Self {
        MtlrConfig { k: 10, options: MtlrOptions::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DeepSurvConfig {
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub dropout_rate: f64,
    #[serde(flatten)]
    pub options: DeepSurvOptions,
}

impl Default for DeepSurvConfig {
    fn default() -> Self {
        DeepSurvConfig { hidden: vec![32], activation: Activation::Relu, dropout_rate: 0.0, options: DeepSurvOptions::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
#[derive(Default)]
pub struct KsvmConfig {
    /// Defaults to an rbf kernel with `gamma = 1/p`.
    pub kernel: Option<KernelSpec>,
    #[serde(flatten)]
    pub options: KsvmOptions,
}


/// Benchmark configuration; the JSON config file mirrors this struct.
/// Per-model random seeds are derived from `seed`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BenchConfig {
    pub input: InputSource,
    pub test_fraction: f64,
    pub seed: u64,
    pub models: Vec<ModelKind>,
    pub cox: CoxOptions,
    pub mtlr: MtlrConfig,
    pub rsf: RsfOptions,
    pub deepsurv: DeepSurvConfig,
    pub ksvm: KsvmConfig,
    pub output_dir: Option<PathBuf>,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            input: InputSource::Generator(GeneratorConfig::default()),
            test_fraction: 0.3,
            seed: 2024,
            models: ModelKind::ALL.to_vec(),
            cox: CoxOptions::default(),
            mtlr: MtlrConfig::default(),
            rsf: RsfOptions::default(),
            deepsurv: DeepSurvConfig::default(),
            ksvm: KsvmConfig::default(),
            output_dir: None,
        }
    }
}

impl BenchConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            return Err(SurvError::Config(format!("test fraction must lie in (0,1), got {}", self.test_fraction)));
        }
        if self.models.is_empty() {
            return Err(SurvError::Config("no models requested".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum FittedModel {
    Cox(CoxModel),
    Mtlr(MtlrModel),
    Rsf(Forest),
    DeepSurv(DeepSurvModel),
    Ksvm(KsvmModel),
}

impl FittedModel {
    pub fn kind(&self) -> ModelKind {
        match self {
            FittedModel::Cox(_) => ModelKind::Cox,
            FittedModel::Mtlr(_) => ModelKind::Mtlr,
            FittedModel::Rsf(_) => ModelKind::Rsf,
            FittedModel::DeepSurv(_) => ModelKind::DeepSurv,
            FittedModel::Ksvm(_) => ModelKind::Ksvm,
        }
    }

    pub fn converged(&self) -> bool {
        match self {
            FittedModel::Cox(m) => m.convergence.converged,
            FittedModel::Mtlr(m) => m.convergence.converged,
            FittedModel::Rsf(_) => true,
            FittedModel::DeepSurv(m) => m.training_log.iter().all(|l| l.is_finite()),
            FittedModel::Ksvm(m) => m.converged,
        }
    }

    /// Risk score of one encoded row; higher means an earlier purchase.
    pub fn risk_score(&self, x: &[f64]) -> Result<f64> {
        match self {
            FittedModel::Cox(m) => m.risk(x),
            FittedModel::Mtlr(m) => m.risk_score(x),
            FittedModel::Rsf(f) => mortality_score(f, x),
            FittedModel::DeepSurv(m) => m.forward_log_risk(x),
            FittedModel::Ksvm(m) => predict_rank_score(m, x),
        }
    }
}

/// A fitted model together with the encoder that produced its design.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SavedModel {
    pub encoder: Encoder,
    pub model: FittedModel,
}

impl SavedModel {
    pub fn risk_scores(&self, cohort: &Cohort) -> Result<Vec<f64>> {
        let design = self.encoder.transform(cohort)?;
        design.rows().map(|x| self.model.risk_score(x)).collect()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

/// Fits one model family on `train` with the hyperparameters of `config`.
pub fn fit_model(kind: ModelKind, train: &Cohort, config: &BenchConfig) -> Result<SavedModel> {
    train.require_events()?;
    let encoder = Encoder::fit(train, kind.standardize())?;
    let design = encoder.transform(train)?;
    let p = design.n_cols();
    let model = match kind {
        ModelKind::Cox => FittedModel::Cox(fit_cox(&design, &config.cox)?),
        ModelKind::Mtlr => {
            let grid = make_grid(design.times(), design.events(), config.mtlr.k)?;
            FittedModel::Mtlr(fit_mtlr(&design, &grid, &config.mtlr.options)?)
        }
        ModelKind::Rsf => {
            let options = RsfOptions { seed: derive_seed(config.seed, 1), ..config.rsf };
            FittedModel::Rsf(fit_forest(&design, &options)?)
        }
        ModelKind::DeepSurv => {
            let mut widths = vec![p];
            widths.extend(&config.deepsurv.hidden);
            widths.push(1);
            let spec = MlpSpec::new(widths, config.deepsurv.activation, config.deepsurv.dropout_rate, derive_seed(config.seed, 2))?;
            let options = DeepSurvOptions { seed: derive_seed(config.seed, 3), ..config.deepsurv.options };
            FittedModel::DeepSurv(fit_deepsurv(&design, &spec, &options)?)
        }
        ModelKind::Ksvm => {
            let kernel = config.ksvm.kernel.unwrap_or(KernelSpec::Rbf { gamma: 1.0 / p.max(1) as f64 });
            let options = KsvmOptions { seed: derive_seed(config.seed, 4), ..config.ksvm.options };
            FittedModel::Ksvm(fit_ksvm(&design, &kernel, &options)?)
        }
    };
    Ok(SavedModel { encoder, model })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelRow {
    pub model: ModelKind,
    pub train_c_index: Option<f64>,
    pub test_c_index: Option<f64>,
    pub converged: bool,
    pub error: Option<String>,
    /// Wall time of the fit in milliseconds; not part of the written report.
    #[serde(skip)]
    pub fit_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub seed: u64,
    pub test_fraction: f64,
    pub cohort: CohortSummary,
    pub train: CohortSummary,
    pub test: CohortSummary,
    pub rows: Vec<ModelRow>,
}

impl BenchReport {
    pub fn all_converged(&self) -> bool {
        self.rows.iter().all(|r| r.converged && r.error.is_none())
    }

    pub fn row(&self, kind: ModelKind) -> Option<&ModelRow> {
        self.rows.iter().find(|r| r.model == kind)
    }

    pub fn to_csv(&self) -> String {
        let opt = |v: Option<f64>| v.map_or_else(|| "NA".to_string(), fmt6);
        let mut s = String::from("model,train_c_index,test_c_index,converged,error\n");
        for r in &self.rows {
            let err = r.error.as_deref().unwrap_or("").replace(['"', ','], ";");
            s.push_str(&format!(
                "{},{},{},{},{}\n",
                r.model.name(),
                opt(r.train_c_index),
                opt(r.test_c_index),
                r.converged,
                err
            ));
        }
        s
    }

    /// JSON form with every real rounded to six significant digits.
    pub fn to_json(&self) -> Result<String> {
        let r6 = |x: f64| fmt6(x).parse::<f64>().unwrap_or(x);
        let round_summary = |s: &CohortSummary| CohortSummary { censoring_rate: r6(s.censoring_rate), ..*s };
        let rounded = BenchReport {
            cohort: round_summary(&self.cohort),
            train: round_summary(&self.train),
            test: round_summary(&self.test),
            rows: self
                .rows
                .iter()
                .map(|r| ModelRow { train_c_index: r.train_c_index.map(r6), test_c_index: r.test_c_index.map(r6), ..r.clone() })
                .collect(),
            ..self.clone()
        };
        Ok(serde_json::to_string_pretty(&rounded)? + "\n")
    }

    pub fn timings_csv(&self) -> String {
        let mut s = String::from("model,fit_ms\n");
        for r in &self.rows {
            s.push_str(&format!("{},{}\n", r.model.name(), r.fit_ms));
        }
        s
    }

    /// Test C-index bars sorted from best to worst.
    pub fn to_svg(&self) -> String {
        let mut bars: Vec<(String, f64)> = self
            .rows
            .iter()
            .filter_map(|r| r.test_c_index.map(|c| (r.model.name().to_string(), c)))
            .collect();
        bars.sort_by(|a, b| b.1.total_cmp(&a.1));
        bar_chart_svg("Test C-index by model", &bars)
    }
}

/// Per-record scores of one model, persisted for audit.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreTable {
    pub model: ModelKind,
    pub partition: Vec<&'static str>,
    pub times: Vec<f64>,
    pub events: Vec<bool>,
    pub scores: Vec<f64>,
}

impl ScoreTable {
    /// Scores are written in shortest round-trip form so the C-index can be
    /// recomputed exactly.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("record,partition,time,event,risk_score\n");
        for i in 0..self.scores.len() {
            s.push_str(&format!(
                "{},{},{},{},{}\n",
                i,
                self.partition[i],
                self.times[i],
                self.events[i] as u8,
                self.scores[i]
            ));
        }
        s
    }

    pub fn parse_csv(text: &str) -> Result<Vec<(String, f64, bool, f64)>> {
        let mut rdr = csv::Reader::from_reader(text.as_bytes());
        let mut out = Vec::new();
        for (i, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let perr = |m: &str| SurvError::Parse { row: i + 1, message: m.to_string() };
            let time: f64 = rec.get(2).and_then(|v| v.parse().ok()).ok_or_else(|| perr("bad time"))?;
            let event = rec.get(3).map(|v| v == "1").ok_or_else(|| perr("bad event"))?;
            let score: f64 = rec.get(4).and_then(|v| v.parse().ok()).ok_or_else(|| perr("bad score"))?;
            out.push((rec.get(1).unwrap_or("").to_string(), time, event, score));
        }
        Ok(out)
    }
}

pub struct BenchRun {
    pub report: BenchReport,
    pub scores: Vec<ScoreTable>,
    pub models: BTreeMap<ModelKind, SavedModel>,
}

fn evaluate(model: &SavedModel, cohort: &Cohort) -> Result<(Vec<f64>, f64)> {
    let scores = model.risk_scores(cohort)?;
    let c = concordance_index(&cohort.times(), &cohort.events(), &scores)?;
    Ok((scores, c.c_index))
}

/// A fitted model with its train scores and C-index, then the same on test.
type Evaluated = (SavedModel, Vec<f64>, f64, Vec<f64>, f64);

/// Runs the benchmark; when `output_dir` is set, writes `report.csv`,
/// `report.json`, `report.svg`, `timings.csv` and `scores_<model>.csv`.
pub fn run_benchmark(config: &BenchConfig) -> Result<BenchRun> {
    config.validate()?;
    let cohort = config.input.load()?;
    let (train, test) = data::split(&cohort, config.test_fraction, config.seed)?;

    let mut kinds = config.models.clone();
    kinds.dedup();
    let results: Vec<(ModelKind, u64, Result<Evaluated>)> = kinds
        .par_iter()
        .map(|&kind| {
            let start = Instant::now();
            let fitted = fit_model(kind, &train, config);
            let ms = start.elapsed().as_millis() as u64;
            let out = fitted.and_then(|m| {
                let (train_scores, train_c) = evaluate(&m, &train)?;
                let (test_scores, test_c) = evaluate(&m, &test)?;
                Ok((m, train_scores, train_c, test_scores, test_c))
            });
            (kind, ms, out)
        })
        .collect();

    let mut rows = Vec::new();
    let mut scores = Vec::new();
    let mut models = BTreeMap::new();
    for (kind, ms, out) in results {
        match out {
            Ok((m, train_scores, train_c, test_scores, test_c)) => {
                rows.push(ModelRow {
                    model: kind,
                    train_c_index: Some(train_c),
                    test_c_index: Some(test_c),
                    converged: m.model.converged(),
                    error: None,
                    fit_ms: ms,
                });
                let mut partition = vec!["train"; train.len()];
                partition.extend(vec!["test"; test.len()]);
                scores.push(ScoreTable {
                    model: kind,
                    partition,
                    times: train.times().into_iter().chain(test.times()).collect(),
                    events: train.events().into_iter().chain(test.events()).collect(),
                    scores: train_scores.into_iter().chain(test_scores).collect(),
                });
                models.insert(kind, m);
            }
            Err(e) => {
                log::warn!("{} failed: {e}", kind.name());
                rows.push(ModelRow {
                    model: kind,
                    train_c_index: None,
                    test_c_index: None,
                    converged: false,
                    error: Some(e.to_string()),
                    fit_ms: ms,
                });
            }
        }
    }
    let report = BenchReport {
        seed: config.seed,
        test_fraction: config.test_fraction,
        cohort: cohort.summary(),
        train: train.summary(),
        test: test.summary(),
        rows,
    };
    if let Some(dir) = &config.output_dir {
        write_atomic(dir.join("report.csv"), report.to_csv().as_bytes())?;
        write_atomic(dir.join("report.json"), report.to_json()?.as_bytes())?;
        write_atomic(dir.join("report.svg"), report.to_svg().as_bytes())?;
        write_atomic(dir.join("timings.csv"), report.timings_csv().as_bytes())?;
        for s in &scores {
            write_atomic(dir.join(format!("scores_{}.csv", s.model.name())), s.to_csv().as_bytes())?;
        }
    }
    Ok(BenchRun { report, scores, models })
}

/// Replaces numeric grouping columns by a two-level `<= median` / `> median`
/// categorical. Returns the rewritten cohort and the medians used.
pub fn bin_numeric_at_median(cohort: &Cohort, columns: &[&str]) -> Result<(Cohort, BTreeMap<String, f64>)> {
    let schema = cohort.schema();
    let mut medians = BTreeMap::new();
    let mut new_cols = schema.columns().to_vec();
    for name in columns {
        let idx = schema
            .index_of(name)
            .ok_or_else(|| SurvError::Schema(format!("unknown column `{name}`")))?;
        if let ColumnKind::Numeric = schema.columns()[idx].kind {
            let mut xs: Vec<f64> = cohort.records().iter().map(|r| r.covariates[idx].as_f64()).collect();
            xs.sort_by(|a, b| a.total_cmp(b));
            let m = xs.len();
            let median = if m % 2 == 1 { xs[m / 2] } else { 0.5 * (xs[m / 2 - 1] + xs[m / 2]) };
            medians.insert(name.to_string(), median);
            let lo = format!("<=median({})", fmt6(median));
            let hi = format!(">median({})", fmt6(median));
            new_cols[idx] = Column::categorical(name, &[lo.as_str(), hi.as_str()]);
        }
    }
    if medians.is_empty() {
        return Ok((cohort.clone(), medians));
    }
    let new_schema = CovariateSchema::new(new_cols)?;
    let records = cohort
        .records()
        .iter()
        .map(|r| {
            let covariates = r
                .covariates
                .iter()
                .zip(schema.columns())
                .map(|(v, c)| match medians.get(&c.name) {
                    Some(&m) => Value::Level((v.as_f64() > m) as usize),
                    None => *v,
                })
                .collect();
            SurvivalRecord { covariates, time: r.time, event: r.event }
        })
        .collect();
    Ok((Cohort::new(new_schema, records)?, medians))
}

fn group_key(cohort: &Cohort, r: &SurvivalRecord, cols: &[&str]) -> String {
    let schema = cohort.schema();
    cols.iter()
        .map(|c| {
            let idx = schema.index_of(c).expect("validated column");
            match (r.covariates[idx], schema.columns()[idx].levels()) {
                (Value::Level(l), Some(levels)) => format!("{c}={}", levels[l]),
                (v, _) => format!("{c}={}", v.as_f64()),
            }
        })
        .collect::<Vec<_>>()
        .join(", ")
}

fn km_long_csv(curves: &[(String, &KmFit, usize)]) -> String {
    let mut s = String::from("group,time,survival,n_at_risk,n_events\n");
    for (name, fit, n) in curves {
        let label = if name.contains(',') { format!("\"{name}\"") } else { name.clone() };
        s.push_str(&format!("{label},0,1,{n},0\n"));
        let t = &fit.table;
        for (k, (&time, &v)) in fit.survival.knots().iter().zip(fit.survival.values()).enumerate() {
            s.push_str(&format!("{label},{},{},{},{}\n", fmt6(time), fmt6(v), t.n_at_risk[k], t.n_events[k]));
        }
    }
    s
}

/// Writes `km_overall.{csv,svg}` and one `km_<cols>.{csv,svg}` pair per group
/// spec. Numeric grouping columns are binned at their median; the bin labels
/// carry the median.
pub fn emit_km_figures(cohort: &Cohort, group_specs: &[Vec<String>], out_dir: &Path) -> Result<Vec<PathBuf>> {
    let mut written = Vec::new();
    let overall = fit_km(cohort)?;
    let csv = km_long_csv(&[("all".to_string(), &overall, cohort.len())]);
    let svg = step_plot_svg("Kaplan-Meier survival", &[("all".to_string(), &overall.survival)], "probability of not yet purchasing");
    for (name, body) in [("km_overall.csv", csv), ("km_overall.svg", svg)] {
        let p = out_dir.join(name);
        write_atomic(&p, body.as_bytes())?;
        written.push(p);
    }
    for spec in group_specs {
        let cols: Vec<&str> = spec.iter().map(String::as_str).collect();
        let (binned, _) = bin_numeric_at_median(cohort, &cols)?;
        let groups = fit_km_grouped(&binned, &cols)?;
        let mut counts: BTreeMap<String, usize> = BTreeMap::new();
        for r in binned.records() {
            *counts.entry(group_key(&binned, r, &cols)).or_default() += 1;
        }
        let curves: Vec<(String, &KmFit, usize)> = groups.iter().map(|(k, f)| (k.clone(), f, counts.get(k).copied().unwrap_or(0))).collect();
        let series: Vec<(String, &crate::nonparametric::StepFunction)> = groups.iter().map(|(k, f)| (k.clone(), &f.survival)).collect();
        let stem = format!("km_{}", cols.join("_"));
        let title = format!("Kaplan-Meier survival by {}", cols.join(" and "));
        let p_csv = out_dir.join(format!("{stem}.csv"));
        let p_svg = out_dir.join(format!("{stem}.svg"));
        write_atomic(&p_csv, km_long_csv(&curves).as_bytes())?;
        write_atomic(&p_svg, step_plot_svg(&title, &series, "probability of not yet purchasing").as_bytes())?;
        written.push(p_csv);
        written.push(p_svg);
    }
    Ok(written)
}

/// Writes `weights.csv` and `weights.svg` (bars sorted by |aggregate weight|).
pub fn emit_weight_figure(model: &MtlrModel, out_dir: &Path) -> Result<Vec<PathBuf>> {
    let weights = feature_weights(model);
    let bars: Vec<(String, f64)> = weights.iter().map(|w| (w.variable.clone(), w.aggregate)).collect();
    let p_csv = out_dir.join("weights.csv");
    let p_svg = out_dir.join("weights.svg");
    write_atomic(&p_csv, feature_weights_csv(&weights).as_bytes())?;
    write_atomic(&p_svg, bar_chart_svg("Relative weight of each variable (MTLR)", &bars).as_bytes())?;
    Ok(vec![p_csv, p_svg])
}
