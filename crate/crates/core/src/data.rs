//! Right-censored cohorts: schema, records, CSV ingestion, design-matrix
//! encoding and seeded train/test splitting.

use std::collections::HashSet;
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SurvError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ColumnKind {
    Numeric,
    Categorical { levels: Vec<String> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Column {
    pub name: String,
    #[serde(flatten)]
    pub kind: ColumnKind,
}

impl Column {
    pub fn numeric(name: &str) -> Self {
        Column { name: name.to_string(), kind: ColumnKind::Numeric }
    }

    pub fn categorical(name: &str, levels: &[&str]) -> Self {
        Column {
            name: name.to_string(),
            kind: ColumnKind::Categorical { levels: levels.iter().map(|s| s.to_string()).collect() },
        }
    }

    pub fn is_categorical(&self) -> bool {
        matches!(self.kind, ColumnKind::Categorical { .. })
    }

    pub fn levels(&self) -> Option<&[String]> {
        match &self.kind {
            ColumnKind::Categorical { levels } => Some(levels),
            ColumnKind::Numeric => None,
        }
    }
}

/// Ordered covariate columns. Names are unique; categoricals carry at least
/// two levels, the first of which is the reference level when encoding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Column>", into = "Vec<Column>")]
pub struct CovariateSchema {
    columns: Vec<Column>,
}

impl TryFrom<Vec<Column>> for CovariateSchema {
    type Error = SurvError;
    fn try_from(columns: Vec<Column>) -> Result<Self> {
        CovariateSchema::new(columns)
    }
}

impl From<CovariateSchema> for Vec<Column> {
    fn from(schema: CovariateSchema) -> Self {
        schema.columns
    }
}

impl CovariateSchema {
    pub fn new(columns: Vec<Column>) -> Result<Self> {
        let mut seen = HashSet::new();
        for c in &columns {
            if c.name.trim().is_empty() {
                return Err(SurvError::Schema("column names must be non-empty".into()));
            }
            if !seen.insert(c.name.as_str()) {
                return Err(SurvError::Schema(format!("duplicate column `{}`", c.name)));
            }
            if let ColumnKind::Categorical { levels } = &c.kind {
                if levels.len() < 2 {
                    return Err(SurvError::Schema(format!(
                        "categorical column `{}` needs at least 2 levels",
                        c.name
                    )));
                }
                let distinct: HashSet<_> = levels.iter().collect();
                if distinct.len() != levels.len() {
                    return Err(SurvError::Schema(format!(
                        "categorical column `{}` has duplicate levels",
                        c.name
                    )));
                }
            }
        }
        Ok(CovariateSchema { columns })
    }

    pub fn columns(&self) -> &[Column] {
        &self.columns
    }

    pub fn len(&self) -> usize {
        self.columns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.columns.is_empty()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c.name == name)
    }

    pub fn column(&self, name: &str) -> Option<&Column> {
        self.columns.iter().find(|c| c.name == name)
    }
}

/// One covariate value. Categorical values are stored as an index into the
/// column's level list.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Value {
    Numeric(f64),
    Level(usize),
}

impl Value {
    pub fn as_f64(&self) -> f64 {
        match *self {
            Value::Numeric(x) => x,
            Value::Level(l) => l as f64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurvivalRecord {
    pub covariates: Vec<Value>,
    pub time: f64,
    /// `true` when the purchase was observed, `false` when right-censored.
    pub event: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CohortSummary {
    pub n: usize,
    pub n_events: usize,
    pub n_censored: usize,
    pub censoring_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cohort {
    schema: CovariateSchema,
    records: Vec<SurvivalRecord>,
}

impl Cohort {
    /// Validates every record against the schema.
    pub fn new(schema: CovariateSchema, records: Vec<SurvivalRecord>) -> Result<Self> {
        for (i, r) in records.iter().enumerate() {
            validate_record(&schema, r).map_err(|message| SurvError::Parse { row: i + 1, message })?;
        }
        Ok(Cohort { schema, records })
    }

    pub fn schema(&self) -> &CovariateSchema {
        &self.schema
    }

    pub fn records(&self) -> &[SurvivalRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn times(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.time).collect()
    }

    pub fn events(&self) -> Vec<bool> {
        self.records.iter().map(|r| r.event).collect()
    }

    pub fn n_events(&self) -> usize {
        self.records.iter().filter(|r| r.event).count()
    }

    pub fn censoring_rate(&self) -> f64 {
        if self.records.is_empty() {
            return 0.0;
        }
        (self.len() - self.n_events()) as f64 / self.len() as f64
    }

    pub fn summary(&self) -> CohortSummary {
        let n_events = self.n_events();
        CohortSummary {
            n: self.len(),
            n_events,
            n_censored: self.len() - n_events,
            censoring_rate: self.censoring_rate(),
        }
    }

    /// Sub-cohort made of the given record indices, in the given order.
    pub fn subset(&self, indices: &[usize]) -> Cohort {
        Cohort {
            schema: self.schema.clone(),
            records: indices.iter().map(|&i| self.records[i].clone()).collect(),
        }
    }

    pub fn require_events(&self) -> Result<()> {
        if self.is_empty() {
            return Err(SurvError::InvalidInput("cohort is empty".into()));
        }
        if self.n_events() == 0 {
            return Err(SurvError::NoEvents);
        }
        Ok(())
    }
}

fn validate_record(schema: &CovariateSchema, r: &SurvivalRecord) -> std::result::Result<(), String> {
    if !r.time.is_finite() || r.time < 0.0 {
        return Err(format!("time must be finite and nonnegative, got {}", r.time));
    }
    if r.covariates.len() != schema.len() {
        return Err(format!("expected {} covariates, got {}", schema.len(), r.covariates.len()));
    }
    for (col, v) in schema.columns().iter().zip(&r.covariates) {
        match (&col.kind, v) {
            (ColumnKind::Numeric, Value::Numeric(x)) if x.is_finite() => {}
            (ColumnKind::Categorical { levels }, Value::Level(l)) if *l < levels.len() => {}
            _ => return Err(format!("invalid value {v:?} for column `{}`", col.name)),
        }
    }
    Ok(())
}

fn parse_event(raw: &str) -> Option<bool> {
    match raw.trim().to_ascii_lowercase().as_str() {
        "1" | "true" => Some(true),
        "0" | "false" => Some(false),
        _ => None,
    }
}

/// Reads a cohort from a header-first CSV file. The header must consist of
/// exactly the schema columns plus `time_col` and `event_col`, in any order.
pub fn ingest_csv(path: impl AsRef<Path>, schema: &CovariateSchema, time_col: &str, event_col: &str) -> Result<Cohort> {
    let mut text = String::new();
    File::open(path)?.read_to_string(&mut text)?;
    ingest_csv_str(&text, schema, time_col, event_col)
}

pub fn ingest_csv_str(text: &str, schema: &CovariateSchema, time_col: &str, event_col: &str) -> Result<Cohort> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(text.as_bytes());
    let headers: Vec<String> = reader.headers()?.iter().map(|h| h.trim().to_string()).collect();

    let find = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| SurvError::Schema(format!("missing column `{name}`")))
    };
    let time_idx = find(time_col)?;
    let event_idx = find(event_col)?;
    let col_idx: Vec<usize> = schema.columns().iter().map(|c| find(&c.name)).collect::<Result<_>>()?;
    if headers.len() != schema.len() + 2 {
        let known: HashSet<&str> = schema
            .columns()
            .iter()
            .map(|c| c.name.as_str())
            .chain([time_col, event_col])
            .collect();
        let extra: Vec<&str> = headers.iter().map(|h| h.as_str()).filter(|h| !known.contains(h)).collect();
        return Err(SurvError::Schema(format!("unexpected columns {extra:?}")));
    }

    let mut records = Vec::new();
    for (i, row) in reader.records().enumerate() {
        let row_no = i + 1;
        let row = row?;
        let field = |idx: usize| row.get(idx).map(str::trim).unwrap_or("");
        let perr = |message: String| SurvError::Parse { row: row_no, message };

        let raw_time = field(time_idx);
        let time: f64 = raw_time
            .parse()
            .map_err(|_| perr(format!("time `{raw_time}` is not a number")))?;
        if !time.is_finite() || time < 0.0 {
            return Err(perr(format!("time must be finite and nonnegative, got `{raw_time}`")));
        }
        let raw_event = field(event_idx);
        let event = parse_event(raw_event).ok_or_else(|| perr(format!("event `{raw_event}` is not one of 0/1/true/false")))?;

        let mut covariates = Vec::with_capacity(schema.len());
        for (col, &idx) in schema.columns().iter().zip(&col_idx) {
            let raw = field(idx);
            if raw.is_empty() {
                return Err(perr(format!("missing value for `{}`", col.name)));
            }
            let v = match &col.kind {
                ColumnKind::Numeric => {
                    let x: f64 = raw
                        .parse()
                        .map_err(|_| perr(format!("`{}` value `{raw}` is not a number", col.name)))?;
                    if !x.is_finite() {
                        return Err(perr(format!("`{}` value `{raw}` is not finite", col.name)));
                    }
                    Value::Numeric(x)
                }
                ColumnKind::Categorical { levels } => {
                    let l = levels
                        .iter()
                        .position(|lv| lv == raw)
                        .ok_or_else(|| perr(format!("unknown level `{raw}` for `{}`", col.name)))?;
                    Value::Level(l)
                }
            };
            covariates.push(v);
        }
        records.push(SurvivalRecord { covariates, time, event });
    }
    Ok(Cohort { schema: schema.clone(), records })
}

/// Writes a cohort in the format read by [`ingest_csv`]. Numbers are written
/// in shortest round-trip form so that a write/read cycle is lossless.
pub fn write_csv<W: Write>(cohort: &Cohort, out: W, time_col: &str, event_col: &str) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header: Vec<&str> = cohort.schema().columns().iter().map(|c| c.name.as_str()).collect();
    header.push(time_col);
    header.push(event_col);
    w.write_record(&header)?;
    for r in cohort.records() {
        let mut row: Vec<String> = cohort
            .schema()
            .columns()
            .iter()
            .zip(&r.covariates)
            .map(|(c, v)| match (v, c.levels()) {
                (Value::Level(l), Some(levels)) => levels[*l].clone(),
                (v, _) => format!("{}", v.as_f64()),
            })
            .collect();
        row.push(format!("{}", r.time));
        row.push(if r.event { "1".into() } else { "0".into() });
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Mean and sample standard deviation of a standardized design column.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ColumnScaling {
    pub mean: f64,
    pub sd: f64,
}

/// Dense row-major design matrix with the survival outcome attached.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignMatrix {
    n_rows: usize,
    n_cols: usize,
    values: Vec<f64>,
    column_names: Vec<String>,
    times: Vec<f64>,
    events: Vec<bool>,
    /// `Some` for numeric columns that were standardized.
    scaling: Vec<Option<ColumnScaling>>,
}

impl DesignMatrix {
    /// Builds a design directly from row-major values (no scaling recorded).
    pub fn from_rows(rows: &[Vec<f64>], column_names: Vec<String>, times: Vec<f64>, events: Vec<bool>) -> Result<Self> {
        let n_cols = column_names.len();
        if rows.len() != times.len() || rows.len() != events.len() {
            return Err(SurvError::InvalidInput("rows, times and events differ in length".into()));
        }
        let mut values = Vec::with_capacity(rows.len() * n_cols);
        for r in rows {
            if r.len() != n_cols {
                return Err(SurvError::Arity { expected: n_cols, got: r.len() });
            }
            values.extend_from_slice(r);
        }
        if times.iter().any(|t| !t.is_finite() || *t < 0.0) {
            return Err(SurvError::InvalidInput("times must be finite and nonnegative".into()));
        }
        Ok(DesignMatrix {
            n_rows: rows.len(),
            n_cols,
            values,
            scaling: vec![None; n_cols],
            column_names,
            times,
            events,
        })
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.n_cols..(i + 1) * self.n_cols]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.values.chunks(self.n_cols.max(1)).take(self.n_rows)
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.n_cols + j]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.n_rows).map(|i| self.get(i, j)).collect()
    }

    pub fn column_names(&self) -> &[String] {
        &self.column_names
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn events(&self) -> &[bool] {
        &self.events
    }

    pub fn scaling(&self) -> &[Option<ColumnScaling>] {
        &self.scaling
    }

    pub fn n_events(&self) -> usize {
        self.events.iter().filter(|&&e| e).count()
    }

    /// Original (unstandardized) values of row `i`.
    pub fn unstandardized_row(&self, i: usize) -> Vec<f64> {
        self.row(i)
            .iter()
            .zip(&self.scaling)
            .map(|(&z, s)| match s {
                Some(s) => z * s.sd + s.mean,
                None => z,
            })
            .collect()
    }

    pub fn subset_rows(&self, indices: &[usize]) -> DesignMatrix {
        let mut values = Vec::with_capacity(indices.len() * self.n_cols);
        for &i in indices {
            values.extend_from_slice(self.row(i));
        }
        DesignMatrix {
            n_rows: indices.len(),
            n_cols: self.n_cols,
            values,
            column_names: self.column_names.clone(),
            times: indices.iter().map(|&i| self.times[i]).collect(),
            events: indices.iter().map(|&i| self.events[i]).collect(),
            scaling: self.scaling.clone(),
        }
    }

    pub fn select_columns(&self, names: &[&str]) -> Result<DesignMatrix> {
        let idx: Vec<usize> = names
            .iter()
            .map(|n| {
                self.column_names
                    .iter()
                    .position(|c| c == n)
                    .ok_or_else(|| SurvError::Schema(format!("unknown design column `{n}`")))
            })
            .collect::<Result<_>>()?;
        let mut values = Vec::with_capacity(self.n_rows * idx.len());
        for i in 0..self.n_rows {
            values.extend(idx.iter().map(|&j| self.get(i, j)));
        }
        Ok(DesignMatrix {
            n_rows: self.n_rows,
            n_cols: idx.len(),
            values,
            column_names: idx.iter().map(|&j| self.column_names[j].clone()).collect(),
            times: self.times.clone(),
            events: self.events.clone(),
            scaling: idx.iter().map(|&j| self.scaling[j]).collect(),
        })
    }

    /// Indices of columns whose values are all equal.
    pub fn constant_columns(&self) -> Vec<usize> {
        (0..self.n_cols)
            .filter(|&j| {
                let first = self.get(0, j);
                (1..self.n_rows).all(|i| self.get(i, j) == first)
            })
            .collect()
    }
}

/// Column encoding learned from a cohort: one-hot with the first level
/// dropped for categoricals, optional standardization for numerics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Encoder {
    schema: CovariateSchema,
    column_names: Vec<String>,
    scaling: Vec<Option<ColumnScaling>>,
}

impl Encoder {
    pub fn fit(cohort: &Cohort, standardize: bool) -> Result<Encoder> {
        if cohort.is_empty() {
            return Err(SurvError::InvalidInput("cannot encode an empty cohort".into()));
        }
        let schema = cohort.schema().clone();
        let mut column_names = Vec::new();
        let mut scaling = Vec::new();
        for (j, col) in schema.columns().iter().enumerate() {
            match &col.kind {
                ColumnKind::Numeric => {
                    column_names.push(col.name.clone());
                    if standardize {
                        let xs: Vec<f64> = cohort.records().iter().map(|r| r.covariates[j].as_f64()).collect();
                        let n = xs.len() as f64;
                        let mean = xs.iter().sum::<f64>() / n;
                        let var = if xs.len() > 1 {
                            xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
                        } else {
                            0.0
                        };
                        let sd = var.sqrt();
                        if !(sd > 0.0) || xs.iter().all(|&x| x == xs[0]) {
                            return Err(SurvError::DegenerateColumn(col.name.clone()));
                        }
                        scaling.push(Some(ColumnScaling { mean, sd }));
                    } else {
                        scaling.push(None);
                    }
                }
                ColumnKind::Categorical { levels } => {
                    for level in &levels[1..] {
                        column_names.push(format!("{}={}", col.name, level));
                        scaling.push(None);
                    }
                }
            }
        }
        Ok(Encoder { schema, column_names, scaling })
    }

    pub fn column_names(&self) -> &[String] {
        &self.column_names
    }

    pub fn schema(&self) -> &CovariateSchema {
        &self.schema
    }

    pub fn encode_row(&self, covariates: &[Value]) -> Result<Vec<f64>> {
        if covariates.len() != self.schema.len() {
            return Err(SurvError::Arity { expected: self.schema.len(), got: covariates.len() });
        }
        let mut out = Vec::with_capacity(self.column_names.len());
        for (col, v) in self.schema.columns().iter().zip(covariates) {
            match (&col.kind, v) {
                (ColumnKind::Numeric, Value::Numeric(x)) => {
                    let j = out.len();
                    out.push(match self.scaling[j] {
                        Some(s) => (x - s.mean) / s.sd,
                        None => *x,
                    });
                }
                (ColumnKind::Categorical { levels }, Value::Level(l)) => {
                    for k in 1..levels.len() {
                        out.push(if *l == k { 1.0 } else { 0.0 });
                    }
                }
                _ => return Err(SurvError::InvalidInput(format!("value type mismatch for `{}`", col.name))),
            }
        }
        Ok(out)
    }

    pub fn transform(&self, cohort: &Cohort) -> Result<DesignMatrix> {
        if cohort.schema() != &self.schema {
            return Err(SurvError::Schema("cohort schema differs from the encoder's".into()));
        }
        let n_cols = self.column_names.len();
        let mut values = Vec::with_capacity(cohort.len() * n_cols);
        for r in cohort.records() {
            values.extend(self.encode_row(&r.covariates)?);
        }
        Ok(DesignMatrix {
            n_rows: cohort.len(),
            n_cols,
            values,
            column_names: self.column_names.clone(),
            times: cohort.times(),
            events: cohort.events(),
            scaling: self.scaling.clone(),
        })
    }
}

/// Encodes a cohort with an encoder fitted on the same cohort.
pub fn encode(cohort: &Cohort, standardize: bool) -> Result<DesignMatrix> {
    Encoder::fit(cohort, standardize)?.transform(cohort)
}

/// Seeded split stratified by event status. Returns `(train, test)`; record
/// order inside each partition follows the input order.
pub fn split(cohort: &Cohort, test_fraction: f64, seed: u64) -> Result<(Cohort, Cohort)> {
    let (train, test) = split_indices(cohort, test_fraction, seed)?;
    Ok((cohort.subset(&train), cohort.subset(&test)))
}

pub fn split_indices(cohort: &Cohort, test_fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(SurvError::Config(format!("test fraction must lie in (0,1), got {test_fraction}")));
    }
    let n = cohort.len();
    if n < 2 {
        return Err(SurvError::Split("need at least 2 records".into()));
    }
    let mut events: Vec<usize> = (0..n).filter(|&i| cohort.records[i].event).collect();
    let mut censored: Vec<usize> = (0..n).filter(|&i| !cohort.records[i].event).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    events.shuffle(&mut rng);
    censored.shuffle(&mut rng);

    let n_test = ((test_fraction * n as f64).round() as usize).clamp(1, n - 1);
    let mut ev_test = ((test_fraction * events.len() as f64).round() as usize).min(events.len()).min(n_test);
    if n_test - ev_test > censored.len() {
        ev_test = n_test - censored.len();
    }
    let cens_test = n_test - ev_test;

    let mut in_test = vec![false; n];
    for &i in events[..ev_test].iter().chain(&censored[..cens_test]) {
        in_test[i] = true;
    }
    let test: Vec<usize> = (0..n).filter(|&i| in_test[i]).collect();
    let train: Vec<usize> = (0..n).filter(|&i| !in_test[i]).collect();
    if ev_test == 0 || ev_test == events.len() {
        return Err(SurvError::Split(format!(
            "split leaves a partition without events ({} events in cohort, {} in test)",
            events.len(),
            ev_test
        )));
    }
    Ok((train, test))
}
