use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use purchase_survival::bench::{
    emit_km_figures, emit_weight_figure, fit_model, run_benchmark, BenchConfig, FittedModel, InputSource, ModelKind,
    SavedModel,
};
use purchase_survival::data::{ingest_csv, write_csv, Encoder};
use purchase_survival::datagen::{self, purchase_schema, GeneratorConfig, EVENT_COL, TIME_COL};
use purchase_survival::mtlr::{fit_mtlr, make_grid};
use purchase_survival::report::{fmt6, write_atomic};
use purchase_survival::{concordance_index, Cohort, CovariateSchema};

#[derive(Parser, Debug)]
#[command(name = "survbench", version, about = "Fit and compare time-to-purchase survival models")]
struct Cli {
    /// Master seed; overrides the seed in the config file.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output file or directory, depending on the subcommand.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// JSON config file mirroring the benchmark configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic purchase cohort as CSV.
    Datagen(DatagenArgs),
    /// Fit one model and save it as JSON.
    Fit(FitArgs),
    /// Score a saved model on a cohort and print its C-index.
    Eval(EvalArgs),
    /// Fit all requested models on a train/test split and write the report.
    Bench(BenchArgs),
    /// Kaplan-Meier curves, overall and per group.
    Km(KmArgs),
    /// MTLR variable weights as CSV and bar chart.
    Weights(WeightsArgs),
}

#[derive(Args, Debug, Clone)]
struct DataArgs {
    /// Cohort CSV with covariate, time and event columns.
    #[arg(long)]
    data: PathBuf,
    /// Covariate schema JSON; defaults to the purchase schema.
    #[arg(long)]
    schema: Option<PathBuf>,
    #[arg(long, default_value = TIME_COL)]
    time_col: String,
    #[arg(long, default_value = EVENT_COL)]
    event_col: String,
}

impl DataArgs {
    fn load(&self) -> Result<Cohort> {
        let schema = load_schema(self.schema.as_deref())?;
        ingest_csv(&self.data, &schema, &self.time_col, &self.event_col)
            .with_context(|| format!("reading {}", self.data.display()))
    }
}

#[derive(Copy, Clone, Debug, ValueEnum)]
enum HazardArg {
    Nonlinear,
    Proportional,
}

#[derive(Args, Debug)]
struct DatagenArgs {
    #[arg(long)]
    n: Option<usize>,
    #[arg(long, value_enum)]
    hazard: Option<HazardArg>,
    /// Proportional-hazard terms as `Column=coef` (numeric columns) or
    /// `Column:Level=coef`.
    #[arg(long = "term")]
    terms: Vec<String>,
    #[arg(long)]
    censor_horizon: Option<f64>,
    /// Calibrate the censoring horizon to this censored fraction first.
    #[arg(long)]
    target_censoring: Option<f64>,
    /// Also write per-record ground truth to this CSV.
    #[arg(long)]
    truth: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct FitArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    model: String,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Saved model JSON written by `fit`.
    #[arg(long)]
    model_file: PathBuf,
}

#[derive(Args, Debug)]
struct BenchArgs {
    /// Use this CSV instead of the input named in the config.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    schema: Option<PathBuf>,
    /// Comma-separated model list, e.g. `cox,rsf`.
    #[arg(long, value_delimiter = ',')]
    models: Vec<String>,
    #[arg(long)]
    test_fraction: Option<f64>,
}

#[derive(Args, Debug)]
struct KmArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Grouping spec, comma-separated columns; repeat for several figures.
    #[arg(long = "group")]
    groups: Vec<String>,
}

#[derive(Args, Debug)]
struct WeightsArgs {
    /// Fit MTLR on this cohort ...
    #[command(flatten)]
    data: Option<DataArgs>,
    /// ... or read a saved MTLR model.
    #[arg(long, conflicts_with = "data")]
    model_file: Option<PathBuf>,
}

fn load_schema(path: Option<&Path>) -> Result<CovariateSchema> {
    match path {
        None => Ok(purchase_schema()),
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            Ok(serde_json::from_str(&text).with_context(|| format!("parsing schema {}", p.display()))?)
        }
    }
}

fn load_config(cli: &Cli) -> Result<BenchConfig> {
    let mut config = match &cli.config {
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            serde_json::from_str(&text).with_context(|| format!("parsing config {}", p.display()))?
        }
        None => BenchConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config.seed = seed;
        if let InputSource::Generator(g) = &mut config.input {
            g.seed = seed;
        }
    }
    Ok(config)
}

fn out_dir(cli: &Cli) -> PathBuf {
    cli.out.clone().unwrap_or_else(|| PathBuf::from("."))
}

fn parse_term(spec: &str) -> Result<datagen::HazardTerm> {
    let (lhs, coef) = spec.split_once('=').context("term must look like Column=coef")?;
    let coefficient: f64 = coef.trim().parse().with_context(|| format!("bad coefficient in `{spec}`"))?;
    let (column, level) = match lhs.split_once(':') {
        Some((c, l)) => (c.trim().to_string(), Some(l.trim().to_string())),
        None => (lhs.trim().to_string(), None),
    };
    Ok(datagen::HazardTerm { column, level, coefficient })
}

fn cmd_datagen(cli: &Cli, args: &DatagenArgs) -> Result<bool> {
    let mut config = match &cli.config {
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            serde_json::from_str::<GeneratorConfig>(&text).with_context(|| format!("parsing {}", p.display()))?
        }
        None => GeneratorConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    if let Some(n) = args.n {
        config.n = n;
    }
    if let Some(h) = args.censor_horizon {
        config.censor_horizon = h;
    }
    match args.hazard {
        Some(HazardArg::Proportional) => {
            let terms = args.terms.iter().map(|t| parse_term(t)).collect::<Result<Vec<_>>>()?;
            if terms.is_empty() {
                bail!("--hazard proportional needs at least one --term");
            }
            config.hazard = datagen::HazardKind::Proportional { terms };
        }
        Some(HazardArg::Nonlinear) => config.hazard = GeneratorConfig::default().hazard,
        None if !args.terms.is_empty() => bail!("--term requires --hazard proportional"),
        None => {}
    }
    if let Some(target) = args.target_censoring {
        config = datagen::calibrate_censoring(&config, target)?;
        log::info!("calibrated censor horizon: {}", config.censor_horizon);
    }
    let (cohort, truth) = datagen::generate(&config)?;
    let mut buf = Vec::new();
    write_csv(&cohort, &mut buf, TIME_COL, EVENT_COL)?;
    match &cli.out {
        Some(p) => write_atomic(p, &buf)?,
        None => print!("{}", String::from_utf8(buf)?),
    }
    if let Some(p) = &args.truth {
        let mut tb = Vec::new();
        truth.write_csv(&mut tb)?;
        write_atomic(p, &tb)?;
    }
    let s = cohort.summary();
    eprintln!("records: {}  events: {}  censored: {}", s.n, s.n_events, fmt6(s.censoring_rate));
    Ok(true)
}

fn cmd_fit(cli: &Cli, args: &FitArgs) -> Result<bool> {
    let config = load_config(cli)?;
    let kind = ModelKind::parse(&args.model)?;
    let cohort = args.data.load()?;
    let saved = fit_model(kind, &cohort, &config)?;
    let path = cli.out.clone().unwrap_or_else(|| PathBuf::from(format!("{}.json", kind.name())));
    write_atomic(&path, saved.to_json()?.as_bytes())?;
    let converged = saved.model.converged();
    eprintln!("{} fitted (converged: {converged}) -> {}", kind.name(), path.display());
    Ok(converged)
}

fn cmd_eval(cli: &Cli, args: &EvalArgs) -> Result<bool> {
    let text = fs::read_to_string(&args.model_file).with_context(|| format!("reading {}", args.model_file.display()))?;
    let saved = SavedModel::from_json(&text)?;
    let cohort = args.data.load()?;
    let scores = saved.risk_scores(&cohort)?;
    let c = concordance_index(&cohort.times(), &cohort.events(), &scores)?;
    println!("model,c_index,concordant,discordant,tied_risk,comparable");
    println!(
        "{},{},{},{},{},{}",
        saved.model.kind().name(),
        fmt6(c.c_index),
        c.concordant,
        c.discordant,
        c.tied_risk,
        c.comparable
    );
    if let Some(p) = &cli.out {
        let mut s = String::from("record,time,event,risk_score\n");
        for (i, ((t, e), r)) in cohort.times().iter().zip(cohort.events()).zip(&scores).enumerate() {
            s.push_str(&format!("{i},{t},{},{r}\n", e as u8));
        }
        write_atomic(p, s.as_bytes())?;
    }
    Ok(true)
}

fn cmd_bench(cli: &Cli, args: &BenchArgs) -> Result<bool> {
    let mut config = load_config(cli)?;
    if let Some(data) = &args.data {
        let schema = match &args.schema {
            Some(p) => Some(load_schema(Some(p))?),
            None => None,
        };
        config.input = InputSource::Csv {
            path: data.clone(),
            schema,
            time_col: TIME_COL.to_string(),
            event_col: EVENT_COL.to_string(),
        };
    }
    if !args.models.is_empty() {
        config.models = args.models.iter().map(|m| ModelKind::parse(m)).collect::<Result<_, _>>()?;
    }
    if let Some(f) = args.test_fraction {
        config.test_fraction = f;
    }
    config.output_dir = Some(out_dir(cli));
    let run = run_benchmark(&config)?;
    if let Some(FittedModel::Mtlr(m)) = run.models.get(&ModelKind::Mtlr).map(|s| &s.model) {
        emit_weight_figure(m, &out_dir(cli))?;
    }
    print!("{}", run.report.to_csv());
    for r in &run.report.rows {
        log::info!("{} fit in {} ms", r.model.name(), r.fit_ms);
    }
    Ok(run.report.all_converged())
}

fn cmd_km(cli: &Cli, args: &KmArgs) -> Result<bool> {
    let cohort = args.data.load()?;
    let specs: Vec<Vec<String>> = args
        .groups
        .iter()
        .map(|g| g.split(',').map(|c| c.trim().to_string()).filter(|c| !c.is_empty()).collect())
        .collect();
    for p in emit_km_figures(&cohort, &specs, &out_dir(cli))? {
        println!("{}", p.display());
    }
    Ok(true)
}

fn cmd_weights(cli: &Cli, args: &WeightsArgs) -> Result<bool> {
    let model = match (&args.model_file, &args.data) {
        (Some(p), _) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            match SavedModel::from_json(&text)?.model {
                FittedModel::Mtlr(m) => m,
                other => bail!("{} is a {} model, expected mtlr", p.display(), other.kind().name()),
            }
        }
        (None, Some(data)) => {
            let config = load_config(cli)?;
            let cohort = data.load()?;
            let design = Encoder::fit(&cohort, true)?.transform(&cohort)?;
            let grid = make_grid(design.times(), design.events(), config.mtlr.k)?;
            fit_mtlr(&design, &grid, &config.mtlr.options)?
        }
        (None, None) => bail!("weights needs --data or --model-file"),
    };
    for p in emit_weight_figure(&model, &out_dir(cli))? {
        println!("{}", p.display());
    }
    Ok(model.convergence.converged)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Datagen(a) => cmd_datagen(&cli, a),
        Command::Fit(a) => cmd_fit(&cli, a),
        Command::Eval(a) => cmd_eval(&cli, a),
        Command::Bench(a) => cmd_bench(&cli, a),
        Command::Km(a) => cmd_km(&cli, a),
        Command::Weights(a) => cmd_weights(&cli, a),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("warning: not every model converged");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
