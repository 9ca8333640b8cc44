//! Command-line front end: simulation, fitting, goodness of fit and the
//! replication studies.
//!
//! Every subcommand reads a TOML file given by `--config`; the schema is
//! described in `docs/config.md`. Exit codes: 0 success, 2 invalid input or
//! configuration, 3 numerical failure, 4 experiment finished with failed
//! replications.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use hawkes_renewal::baseline::default_standard_init;
use hawkes_renewal::em_complete::default_init;
use hawkes_renewal::experiments::{self as exp, Algorithm, FitOptions};
use hawkes_renewal::gof::{mc_gof, GofOptions};
use hawkes_renewal::model::{EventSeries, KernelFamily, ModelSpec};
use hawkes_renewal::report::FitReport;
use hawkes_renewal::simulate::{simulate_hawkes_renewal_with, simulate_n_events, SimulationOptions};
use hawkes_renewal::HawkesError;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

#[derive(Debug, Parser)]
#[command(name = "hawkes-renewal", version, about = "Hawkes processes with renewal immigration")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// TOML configuration file.
    #[arg(long)]
    config: PathBuf,
    /// Overrides the seed in the configuration.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory, created if missing.
    #[arg(long, default_value = ".")]
    out: PathBuf,
    /// Worker threads; defaults to the number of available cores.
    #[arg(long)]
    jobs: Option<usize>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate an event series.
    Simulate(Common),
    /// Fit a model to an event series.
    Fit(Common),
    /// Monte Carlo likelihood and residual tests for a fitted model.
    Gof(Common),
    /// Run a replication study.
    Experiment {
        #[command(flatten)]
        common: Common,
        /// Start from the full published grids instead of the desk-scale ones.
        #[arg(long)]
        full_scale: bool,
        /// Recompute the summaries from an existing records file instead of
        /// running replications.
        #[arg(long)]
        from_records: Option<PathBuf>,
    },
}

#[derive(Debug)]
enum CliError {
    Core(HawkesError),
    Input(String),
    PartialFailure(usize),
}

impl From<HawkesError> for CliError {
    fn from(e: HawkesError) -> Self {
        CliError::Core(e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Input(e.to_string())
    }
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Core(e) if !e.is_validation() && !matches!(e, HawkesError::Io(_)) => 3,
            CliError::Core(_) | CliError::Input(_) => 2,
            CliError::PartialFailure(_) => 4,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Core(e) => write!(f, "{e}"),
            CliError::Input(m) => write!(f, "{m}"),
            CliError::PartialFailure(n) => write!(f, "{n} replications failed; see the records file"),
        }
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

fn read_toml(path: &Path) -> CliResult<toml::Value> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Input(format!("cannot read {}: {e}", path.display())))?;
    toml::from_str(&text).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}

fn parse<T: DeserializeOwned>(value: toml::Value, path: &Path) -> CliResult<T> {
    value
        .try_into()
        .map_err(|e: toml::de::Error| CliError::Input(format!("{}: {e}", path.display())))
}

/// Overlays `top` onto `base`, merging tables key by key.
fn merge(base: &mut toml::Value, top: toml::Value) {
    match (base, top) {
        (toml::Value::Table(b), toml::Value::Table(t)) => {
            for (k, v) in t {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

fn output(dir: &Path, name: &str) -> CliResult<BufWriter<File>> {
    fs::create_dir_all(dir)
        .map_err(|e| CliError::Input(format!("cannot create {}: {e}", dir.display())))?;
    let path = dir.join(name);
    let f = File::create(&path).map_err(|e| CliError::Input(format!("cannot write {}: {e}", path.display())))?;
    Ok(BufWriter::new(f))
}

fn read_events(path: &Path) -> CliResult<EventSeries> {
    let f = File::open(path).map_err(|e| CliError::Input(format!("cannot read {}: {e}", path.display())))?;
    Ok(EventSeries::read_text(BufReader::new(f), None)?)
}

fn write_json<T: Serialize>(dir: &Path, name: &str, value: &T) -> CliResult<()> {
    let mut w = output(dir, name)?;
    serde_json::to_writer_pretty(&mut w, value).map_err(|e| CliError::Input(e.to_string()))?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

fn jobs(common: &Common) -> usize {
    common
        .jobs
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
        .max(1)
}

// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SimulateConfig {
    model: ModelSpec,
    /// Simulate on `(0, horizon]`.
    horizon: Option<f64>,
    /// Simulate exactly this many events instead.
    n_events: Option<usize>,
    #[serde(default = "default_max_points")]
    max_points: usize,
    #[serde(default)]
    burn_in: f64,
    #[serde(default)]
    seed: u64,
}

fn default_max_points() -> usize {
    SimulationOptions::default().max_points
}

fn cmd_simulate(common: &Common) -> CliResult<()> {
    let mut cfg: SimulateConfig = parse(read_toml(&common.config)?, &common.config)?;
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    cfg.model.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let sim = match (cfg.horizon, cfg.n_events) {
        (Some(r), None) => {
            if !(r > 0.0 && r.is_finite()) {
                return Err(CliError::Input("horizon must be positive".into()));
            }
            let opts = SimulationOptions {
                max_points: cfg.max_points,
                burn_in: cfg.burn_in,
            };
            simulate_hawkes_renewal_with(&cfg.model, r, &opts, &mut rng)?
        }
        (None, Some(n)) => simulate_n_events(&cfg.model, n, &mut rng)?,
        _ => return Err(CliError::Input("set exactly one of `horizon` and `n_events`".into())),
    };
    let meta = exp::metadata("simulate", &cfg, cfg.seed)?;
    let mut w = output(&common.out, "events.csv")?;
    sim.write_text(&mut w, &meta)?;
    w.flush()?;
    println!(
        "simulated {} events ({} immigrants) on (0, {}]",
        sim.events.len(),
        sim.events.len() - sim.offspring_count(),
        sim.events.stopping_time()
    );
    Ok(())
}

// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FitConfig {
    /// Event file, relative to the configuration file.
    data: PathBuf,
    algorithm: String,
    /// Kernel family for the default starting point.
    #[serde(default = "default_family")]
    family: KernelFamily,
    init: Option<ModelSpec>,
    #[serde(default)]
    options: FitOptions,
    #[serde(default)]
    seed: u64,
}

fn default_family() -> KernelFamily {
    KernelFamily::Exponential
}

fn relative_to(config: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        config.parent().unwrap_or(Path::new(".")).join(p)
    }
}

fn print_fit(fit: &FitReport) {
    let params: Vec<String> = fit
        .param_names
        .iter()
        .zip(fit.params())
        .map(|(n, v)| format!("{n}={v:.6}"))
        .collect();
    println!(
        "{}: {} iterations, converged={}, {}",
        fit.algorithm,
        fit.iterations,
        fit.converged,
        params.join(" ")
    );
    if let (Some(l), Some(aic)) = (fit.loglik, fit.aic) {
        println!("loglik={:.6} aic={aic:.6} k={}", l.value, fit.k);
    }
    for w in &fit.warnings {
        println!("warning: {w}");
    }
}

fn cmd_fit(common: &Common) -> CliResult<()> {
    let mut cfg: FitConfig = parse(read_toml(&common.config)?, &common.config)?;
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    let algorithm: Algorithm = cfg.algorithm.parse()?;
    let events = read_events(&relative_to(&common.config, &cfg.data))?;
    let init = match &cfg.init {
        Some(m) => {
            m.validate()?;
            m.clone()
        }
        None => match algorithm {
            Algorithm::EmComplete => default_init(&events, cfg.family)?,
            Algorithm::EmSemicomplete if cfg.options.immigration_mode.is_none() => {
                default_init(&events, cfg.family)?
            }
            _ => default_standard_init(&events, cfg.family)?,
        },
    };
    let mut opts = cfg.options.clone();
    opts.em.seed = cfg.seed;
    opts.semi.seed = cfg.seed;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs(common))
        .build()
        .map_err(|e| CliError::Input(e.to_string()))?;
    let fit = pool.install(|| exp::fit_model(algorithm, &events, &init, &opts))?;
    write_json(&common.out, "fit_report.json", &fit)?;
    let mut w = output(&common.out, "fit_trace.csv")?;
    for line in exp::metadata("fit", &cfg, cfg.seed)? {
        writeln!(w, "# {line}")?;
    }
    fit.write_trace(&mut w)?;
    w.flush()?;
    print_fit(&fit);
    Ok(())
}

// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GofConfig {
    data: PathBuf,
    /// Model to test; alternatively `report`, a `fit_report.json`.
    model: Option<ModelSpec>,
    report: Option<PathBuf>,
    #[serde(default)]
    mc_samples: Option<usize>,
    #[serde(default)]
    ks_level: Option<f64>,
    #[serde(default)]
    seed: u64,
}

fn cmd_gof(common: &Common) -> CliResult<()> {
    let mut cfg: GofConfig = parse(read_toml(&common.config)?, &common.config)?;
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    let events = read_events(&relative_to(&common.config, &cfg.data))?;
    let model = match (&cfg.model, &cfg.report) {
        (Some(m), None) => m.clone(),
        (None, Some(p)) => {
            let path = relative_to(&common.config, p);
            let text = fs::read_to_string(&path)
                .map_err(|e| CliError::Input(format!("cannot read {}: {e}", path.display())))?;
            let fit: FitReport = serde_json::from_str(&text)
                .map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
            if fit.data_fingerprint != events.fingerprint() {
                return Err(HawkesError::Mismatch("the report was fitted to different data".into()).into());
            }
            fit.model
        }
        _ => return Err(CliError::Input("set exactly one of `model` and `report`".into())),
    };
    model.validate()?;
    let defaults = GofOptions::default();
    let opts = GofOptions {
        mc_samples: cfg.mc_samples.unwrap_or(defaults.mc_samples),
        ks_level: cfg.ks_level.unwrap_or(defaults.ks_level),
        seed: cfg.seed,
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs(common))
        .build()
        .map_err(|e| CliError::Input(e.to_string()))?;
    let report = pool.install(|| mc_gof(&model, &events, &opts))?;
    write_json(&common.out, "gof_report.json", &report)?;
    let mut w = output(&common.out, "gof_samples.csv")?;
    for line in exp::metadata("gof", &cfg, cfg.seed)? {
        writeln!(w, "# {line}")?;
    }
    report.write_samples(&mut w)?;
    w.flush()?;
    println!("{}", report.summary_line());
    Ok(())
}

// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "experiment", rename_all = "snake_case")]
enum ExperimentConfig {
    Table1(exp::Table1Config),
    Table2(exp::Table2Config),
    Fig3(exp::Fig3Config),
    Fig45(exp::Fig45Config),
    Custom(exp::CustomConfig),
}

impl ExperimentConfig {
    fn name(&self) -> &'static str {
        match self {
            ExperimentConfig::Table1(_) => "table1",
            ExperimentConfig::Table2(_) => "table2",
            ExperimentConfig::Fig3(_) => "fig3",
            ExperimentConfig::Fig45(_) => "fig45",
            ExperimentConfig::Custom(_) => "custom",
        }
    }

    fn full_scale(name: &str) -> CliResult<Self> {
        Ok(match name {
            "table1" => ExperimentConfig::Table1(exp::Table1Config::full_scale()),
            "table2" => ExperimentConfig::Table2(exp::Table2Config::full_scale()),
            "fig3" => ExperimentConfig::Fig3(exp::Fig3Config::full_scale()),
            "fig45" => ExperimentConfig::Fig45(exp::Fig45Config::full_scale()),
            "custom" => ExperimentConfig::Custom(exp::CustomConfig::default()),
            other => return Err(CliError::Input(format!("unknown experiment `{other}`"))),
        })
    }

    fn set_seed(&mut self, seed: u64) {
        match self {
            ExperimentConfig::Table1(c) => c.seed = seed,
            ExperimentConfig::Table2(c) => c.seed = seed,
            ExperimentConfig::Fig3(c) => c.seed = seed,
            ExperimentConfig::Fig45(c) => c.seed = seed,
            ExperimentConfig::Custom(c) => c.seed = seed,
        }
    }

    fn seed(&self) -> u64 {
        match self {
            ExperimentConfig::Table1(c) => c.seed,
            ExperimentConfig::Table2(c) => c.seed,
            ExperimentConfig::Fig3(c) => c.seed,
            ExperimentConfig::Fig45(c) => c.seed,
            ExperimentConfig::Custom(c) => c.seed,
        }
    }
}

fn load_experiment(common: &Common, full_scale: bool) -> CliResult<ExperimentConfig> {
    let user = read_toml(&common.config)?;
    let name = user
        .get("experiment")
        .and_then(|v| v.as_str())
        .ok_or_else(|| CliError::Input("missing `experiment` key".into()))?
        .to_string();
    let value = if full_scale {
        let mut base = toml::Value::try_from(ExperimentConfig::full_scale(&name)?)
            .map_err(|e| CliError::Input(e.to_string()))?;
        merge(&mut base, user);
        base
    } else {
        user
    };
    let mut cfg: ExperimentConfig = parse(value, &common.config)?;
    if let Some(s) = common.seed {
        cfg.set_seed(s);
    }
    Ok(cfg)
}

fn write_table<T: Serialize>(dir: &Path, name: &str, meta: &[String], rows: &[T]) -> CliResult<()> {
    let mut w = output(dir, name)?;
    exp::write_csv(&mut w, meta, rows)?;
    w.flush()?;
    Ok(())
}

fn read_records<T: DeserializeOwned>(path: &Path) -> CliResult<Vec<T>> {
    let f = File::open(path).map_err(|e| CliError::Input(format!("cannot read {}: {e}", path.display())))?;
    Ok(exp::read_csv(BufReader::new(f))?)
}

fn count_failed<'a>(errors: impl Iterator<Item = &'a Option<String>>) -> usize {
    errors.filter(|e| e.is_some()).count()
}

fn cmd_experiment(common: &Common, full_scale: bool, from_records: Option<&Path>) -> CliResult<()> {
    let cfg = load_experiment(common, full_scale)?;
    let name = cfg.name();
    let meta = exp::metadata(name, &cfg, cfg.seed())?;
    let jobs = jobs(common);
    let out = &common.out;
    let records_name = format!("{name}_records.csv");
    let summary_name = format!("{name}_summary.csv");
    let failed = match &cfg {
        ExperimentConfig::Table1(c) => {
            let records: Vec<exp::Table1Record> = match from_records {
                Some(p) => read_records(p)?,
                None => exp::run_table1(c, jobs)?,
            };
            let summary = exp::summarize_table1(c, &records);
            for s in &summary {
                println!(
                    "kappa={} eta={} ok={} bias kappa={:.3}({:.3}) beta={:.3}({:.3}) eta={:.3}({:.3}) tau0={:.3}({:.3})",
                    s.kappa, s.eta, s.n_ok, s.bias_kappa, s.sd_kappa, s.bias_beta, s.sd_beta,
                    s.bias_eta, s.sd_eta, s.bias_tau0, s.sd_tau0
                );
            }
            if from_records.is_none() {
                write_table(out, &records_name, &meta, &records)?;
            }
            write_table(out, &summary_name, &meta, &summary)?;
            count_failed(records.iter().map(|r| &r.error))
        }
        ExperimentConfig::Table2(c) => {
            let records: Vec<exp::Table2Record> = match from_records {
                Some(p) => read_records(p)?,
                None => exp::run_table2(c, jobs)?,
            };
            let summary = exp::summarize_table2(c, &records);
            for s in &summary {
                println!(
                    "kappa={} n={} ok={} aic={:.2} wilks={:.2} ks={:.2}",
                    s.kappa, s.n_events, s.n_ok, s.aic_fraction, s.wilks_rejection, s.ks_rejection
                );
            }
            if from_records.is_none() {
                write_table(out, &records_name, &meta, &records)?;
            }
            write_table(out, &summary_name, &meta, &summary)?;
            count_failed(records.iter().map(|r| &r.error))
        }
        ExperimentConfig::Fig3(c) => {
            let records: Vec<exp::Fig3Record> = match from_records {
                Some(p) => read_records(p)?,
                None => exp::run_fig3(c, jobs)?,
            };
            let summary = exp::summarize_fig3(c, &records);
            for s in &summary {
                println!(
                    "kappa={} ok={} median eta bias exponential={:.3} omori={:.3}",
                    s.kappa, s.n_ok, s.exponential_median, s.omori_median
                );
            }
            if from_records.is_none() {
                write_table(out, &records_name, &meta, &records)?;
            }
            write_table(out, &summary_name, &meta, &summary)?;
            count_failed(records.iter().map(|r| &r.error))
        }
        ExperimentConfig::Fig45(c) => {
            let grid_name = "fig45_grid.csv";
            let (records, grid): (Vec<exp::Fig45Record>, Vec<exp::Fig45GridPoint>) = match from_records {
                Some(p) => {
                    let grid_path = p.with_file_name(grid_name);
                    (read_records(p)?, read_records(&grid_path)?)
                }
                None => {
                    let o = exp::run_fig45(c, jobs)?;
                    (o.records, o.grid)
                }
            };
            let summary = exp::summarize_fig45_eta(c, &records);
            for s in &summary {
                println!(
                    "eta={} model={} ok={} median eta bias={:.3}",
                    s.eta, s.model, s.n_ok, s.median
                );
            }
            let bands = exp::summarize_fig45_bands(c, &grid)?;
            if from_records.is_none() {
                write_table(out, &records_name, &meta, &records)?;
                write_table(out, grid_name, &meta, &grid)?;
            }
            write_table(out, &summary_name, &meta, &summary)?;
            write_table(out, "fig45_bands.csv", &meta, &bands)?;
            count_failed(records.iter().map(|r| &r.error))
        }
        ExperimentConfig::Custom(c) => {
            c.model.validate()?;
            let records: Vec<exp::CustomRecord> = match from_records {
                Some(p) => read_records(p)?,
                None => exp::run_custom(c, jobs)?,
            };
            let summary = exp::summarize_custom(c, &records);
            for s in &summary {
                println!(
                    "{}: truth={} mean={:.4} sd={:.4} ok={}",
                    s.parameter, s.truth, s.mean, s.sd, s.n_ok
                );
            }
            if from_records.is_none() {
                write_table(out, &records_name, &meta, &records)?;
            }
            write_table(out, &summary_name, &meta, &summary)?;
            count_failed(records.iter().map(|r| &r.error))
        }
    };
    if failed > 0 {
        return Err(CliError::PartialFailure(failed));
    }
    Ok(())
}

fn run(cli: Cli) -> CliResult<()> {
    match &cli.command {
        Command::Simulate(c) => cmd_simulate(c),
        Command::Fit(c) => cmd_fit(c),
        Command::Gof(c) => cmd_gof(c),
        Command::Experiment {
            common,
            full_scale,
            from_records,
        } => cmd_experiment(common, *full_scale, from_records.as_deref()),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
