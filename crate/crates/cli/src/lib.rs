//! The `tri` command line: gradient checks, training, evaluation, ablation
//! sweeps and a kernel benchmark, all driven by one JSON run config.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::Rng;
use serde::{Deserialize, Serialize};

use triangle_core::data::Dataset;
use triangle_core::eval::{evaluate, EvalConfig, EvalSummary};
use triangle_core::experiment::{DataSource, Experiment, RunResult};
use triangle_core::gradcheck::{run_suite, GradcheckConfig};
use triangle_core::nn::{load_checkpoint, save_checkpoint};
use triangle_core::{geometry, rng, Error, LossConfig, ModelConfig, OptimConfig};

pub const ENV_SEED: &str = "TRI_SEED";
pub const ENV_OUT: &str = "TRI_OUT";

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Core(#[from] Error),
    #[error("verification failed: {0}")]
    Verification(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Core(Error::NonFinite { .. }) => 2,
            CliError::Core(_) => 1,
            CliError::Verification(_) => 3,
        }
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

fn io_err(path: &Path, e: std::io::Error) -> CliError {
    CliError::Core(Error::io(path, e))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    pub dir: PathBuf,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self { dir: PathBuf::from("tri-out") }
    }
}

/// The JSON document every subcommand reads. Missing sections take their
/// defaults; unknown keys are rejected.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub data: DataSource,
    pub model: ModelConfig,
    pub loss: LossConfig,
    pub optim: OptimConfig,
    pub eval: EvalConfig,
    pub output: OutputConfig,
    pub gradcheck: GradcheckConfig,
}

impl RunConfig {
    /// Parses a config file. A relative manifest path is resolved against
    /// the config's directory and must exist.
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
        let mut config: RunConfig =
            serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
        if let DataSource::Manifest(m) = &mut config.data {
            if m.is_relative() {
                *m = path.parent().unwrap_or(Path::new(".")).join(&*m);
            }
            if !m.exists() {
                return Err(CliError::Usage(format!("manifest {} does not exist", m.display())));
            }
        }
        Ok(config)
    }

    /// Precedence: flag, then environment, then file, then defaults.
    pub fn resolve(path: Option<&Path>, seed_flag: Option<u64>, out_flag: Option<PathBuf>) -> CliResult<Self> {
        let mut config = match path {
            Some(p) => Self::load(p)?,
            None => Self::default(),
        };
        let env_seed = match std::env::var(ENV_SEED) {
            Ok(s) => Some(
                s.trim()
                    .parse::<u64>()
                    .map_err(|_| CliError::Usage(format!("{ENV_SEED}={s:?} is not an unsigned integer")))?,
            ),
            Err(_) => None,
        };
        if let Some(seed) = seed_flag.or(env_seed) {
            config = config.with_seed(seed);
        }
        if let Some(dir) = out_flag.or_else(|| std::env::var_os(ENV_OUT).map(PathBuf::from)) {
            config.output.dir = dir;
        }
        Ok(config)
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        let e = self.experiment().with_seed(seed);
        self.data = e.data;
        self.optim = e.optim;
        self.gradcheck.seed = seed;
        self
    }

    pub fn experiment(&self) -> Experiment {
        Experiment {
            data: self.data.clone(),
            model: self.model.clone(),
            loss: self.loss.clone(),
            optim: self.optim.clone(),
            eval: self.eval.clone(),
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "tri", version, about = "Tri-modal alignment by triangle area")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// JSON run config; defaults are used when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Overrides every seed in the config (and TRI_SEED).
    #[arg(long)]
    pub seed: Option<u64>,
    /// Overrides the output directory (and TRI_OUT).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

impl Common {
    fn resolve(&self) -> CliResult<RunConfig> {
        RunConfig::resolve(self.config.as_deref(), self.seed, self.out.clone())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SweepParam {
    Alpha,
    Lambda,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Finite-difference check of every analytic gradient.
    Gradcheck {
        #[command(flatten)]
        common: Common,
    },
    /// Train, writing run_log.jsonl, checkpoint.tri, report.json and curve.csv.
    Train {
        #[command(flatten)]
        common: Common,
    },
    /// Evaluate a checkpoint on the test split.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        ckpt: PathBuf,
    },
    /// One train and eval per value of alpha or lambda, into sweep.csv.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum)]
        param: SweepParam,
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<f64>,
        /// Run the values on separate threads.
        #[arg(long)]
        parallel: bool,
    },
    /// Time batched triangle area against batched cosine.
    Bench {
        #[arg(long, default_value_t = 2048)]
        dim: usize,
        #[arg(long, default_value_t = 256)]
        batch: usize,
        #[arg(long, default_value_t = 100)]
        repeats: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Also write the JSON report here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

pub fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Gradcheck { common } => cmd_gradcheck(&common.resolve()?),
        Command::Train { common } => cmd_train(&common.resolve()?).map(|_| ()),
        Command::Eval { common, ckpt } => cmd_eval(&common.resolve()?, &ckpt).map(|_| ()),
        Command::Sweep {
            common,
            param,
            values,
            parallel,
        } => cmd_sweep(&common.resolve()?, param, &values, parallel).map(|_| ()),
        Command::Bench {
            dim,
            batch,
            repeats,
            seed,
            out,
        } => {
            let report = cmd_bench(dim, batch, repeats, seed)?;
            let json = serde_json::to_string_pretty(&report).map_err(Error::from)?;
            println!("{json}");
            if let Some(path) = out {
                write_file(&path, json.as_bytes())?;
            }
            Ok(())
        }
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> CliResult<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| io_err(parent, e))?;
    }
    fs::write(path, bytes).map_err(|e| io_err(path, e))
}

fn csv_bytes<R: Serialize>(rows: &[R]) -> CliResult<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).map_err(|e| CliError::Usage(format!("csv: {e}")))?;
    }
    w.into_inner().map_err(|e| CliError::Usage(format!("csv: {e}")))
}

#[derive(Debug, Serialize, Deserialize)]
pub struct GradcheckRow {
    pub check: String,
    pub configurations: usize,
    pub skipped: usize,
    pub max_rel_error: f64,
    pub tolerance: f64,
    pub passed: bool,
}

pub fn cmd_gradcheck(config: &RunConfig) -> CliResult<()> {
    let report = run_suite(&config.gradcheck).map_err(CliError::Usage)?;
    if report.results.is_empty() {
        eprintln!("warning: empty check list, nothing verified");
    }
    let rows: Vec<GradcheckRow> = report
        .results
        .iter()
        .map(|r| GradcheckRow {
            check: r.name.clone(),
            configurations: r.configurations,
            skipped: r.skipped,
            max_rel_error: r.max_rel_error,
            tolerance: r.tolerance,
            passed: r.passed,
        })
        .collect();
    for r in &rows {
        println!(
            "{:<20} {} max_rel_error={:.3e} ({} configs, {} skipped)",
            r.check,
            if r.passed { "ok  " } else { "FAIL" },
            r.max_rel_error,
            r.configurations,
            r.skipped
        );
    }
    write_file(&config.output.dir.join("gradcheck.csv"), &csv_bytes(&rows)?)?;
    match report.worst() {
        Some(w) if !report.passed() => Err(CliError::Verification(format!(
            "worst offender {} with relative error {:.3e} (tolerance {:.1e})",
            w.name, w.max_rel_error, w.tolerance
        ))),
        _ => Ok(()),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub r1: f64,
    pub r5: f64,
    pub r10: f64,
    pub r1_t2d: f64,
    pub r1_d2t: f64,
    pub mean_positive_area: f64,
}

impl From<&EvalSummary> for Metrics {
    fn from(s: &EvalSummary) -> Self {
        Self {
            r1: s.mean_recall(1),
            r5: s.mean_recall(5),
            r10: s.mean_recall(10),
            r1_t2d: s.t2d.recall(1),
            r1_d2t: s.d2t.recall(1),
            mean_positive_area: s.area.mean,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub objective: String,
    pub seed: u64,
    pub steps: usize,
    pub best_step: usize,
    pub best_r1: f64,
    /// Metrics of the parameters after the last step.
    pub final_metrics: Metrics,
    pub final_loss: Option<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct CurveRow {
    pub step: usize,
    pub objective: String,
    pub seed: u64,
    pub metric: String,
    pub value: f64,
}

fn curve_rows(config: &RunConfig, result: &RunResult) -> Vec<CurveRow> {
    let objective = config.loss.objective.to_string();
    let seed = config.optim.seed;
    let mut rows = Vec::new();
    let mut push = |step, metric: &str, value| {
        rows.push(CurveRow {
            step,
            objective: objective.clone(),
            seed,
            metric: metric.to_string(),
            value,
        })
    };
    for s in result.outcome.log.steps() {
        push(s.step, "loss", s.loss);
    }
    for e in result.outcome.log.evals() {
        push(e.step, "r1", e.r1);
        push(e.step, "r5", e.r5);
        push(e.step, "r10", e.r10);
        push(e.step, "r1_t2d", e.r1_t2d);
        push(e.step, "r1_d2t", e.r1_d2t);
        push(e.step, "mean_positive_area", e.mean_positive_area);
    }
    rows
}

/// Trains into `dir`, returning the run and its report.
fn train_into(config: &RunConfig, dir: &Path) -> CliResult<(RunResult, TrainReport)> {
    let result = config.experiment().run()?;
    let report = TrainReport {
        objective: config.loss.objective.to_string(),
        seed: config.optim.seed,
        steps: config.optim.steps,
        best_step: result.outcome.best_step,
        best_r1: result.outcome.best_r1,
        final_metrics: Metrics::from(&result.final_eval),
        final_loss: result.outcome.log.steps().last().map(|s| s.loss),
    };
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    write_file(&dir.join("run_log.jsonl"), result.outcome.log.to_jsonl().as_bytes())?;
    save_checkpoint(&result.outcome.best, dir.join("checkpoint.tri"))?;
    let json = serde_json::to_string_pretty(&report).map_err(Error::from)?;
    write_file(&dir.join("report.json"), json.as_bytes())?;
    write_file(&dir.join("curve.csv"), &csv_bytes(&curve_rows(config, &result))?)?;
    Ok((result, report))
}

pub fn cmd_train(config: &RunConfig) -> CliResult<TrainReport> {
    let (_, report) = train_into(config, &config.output.dir)?;
    let m = &report.final_metrics;
    println!(
        "{} seed {}: final R@1 {:.4} (t2d {:.4}, d2t {:.4}), best R@1 {:.4} at step {}",
        report.objective, report.seed, m.r1, m.r1_t2d, m.r1_d2t, report.best_r1, report.best_step
    );
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub direction: String,
    pub k: usize,
    pub recall: f64,
}

pub fn cmd_eval(config: &RunConfig, ckpt: &Path) -> CliResult<EvalSummary> {
    if !ckpt.exists() {
        return Err(CliError::Usage(format!("checkpoint {} does not exist", ckpt.display())));
    }
    let stack = load_checkpoint(ckpt)?;
    let split = config.data.load()?;
    check_dims(&split.test, &stack)?;
    let loss = &config.loss;
    let summary = evaluate(
        &stack,
        &split.test,
        loss.objective,
        loss.alpha_t2d,
        loss.alpha_d2t,
        loss.anchor,
        &config.eval.ks,
    )?;
    let mut rows = Vec::new();
    for (name, rep) in [("t2d", &summary.t2d), ("d2t", &summary.d2t)] {
        for (&k, &recall) in &rep.recall_at {
            rows.push(EvalRow {
                direction: name.to_string(),
                k,
                recall,
            });
            println!("{name} R@{k} = {recall:.4}");
        }
    }
    let dir = &config.output.dir;
    let json = serde_json::to_string_pretty(&summary).map_err(Error::from)?;
    write_file(&dir.join("eval.json"), json.as_bytes())?;
    write_file(&dir.join("eval.csv"), &csv_bytes(&rows)?)?;
    Ok(summary)
}

fn check_dims(ds: &Dataset, stack: &triangle_core::EncoderStack) -> CliResult<()> {
    use triangle_core::Modality;
    let (t, v, a) = ds.dims();
    let want = (
        stack.encoder(Modality::Text).input_dim(),
        stack.encoder(Modality::Video).input_dim(),
        stack.encoder(Modality::Audio).input_dim(),
    );
    if (t, v, a) != want {
        return Err(CliError::Usage(format!(
            "checkpoint expects input dims {want:?}, data has {:?}",
            (t, v, a)
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub param: String,
    pub value: f64,
    /// `ok`, or `failed: <reason>`.
    pub status: String,
    pub r1: Option<f64>,
    pub r5: Option<f64>,
    pub r10: Option<f64>,
    pub r1_t2d: Option<f64>,
    pub r1_d2t: Option<f64>,
    pub mean_positive_area: Option<f64>,
    pub best_step: Option<usize>,
    pub final_loss: Option<f64>,
}

fn value_label(param: SweepParam, v: f64) -> String {
    match param {
        SweepParam::Alpha => format!("alpha={v}"),
        SweepParam::Lambda => format!("lambda={v}"),
    }
}

fn sweep_one(config: &RunConfig, param: SweepParam, value: f64) -> SweepRow {
    let mut c = config.clone();
    match param {
        SweepParam::Alpha => {
            c.loss.alpha_t2d = value;
            c.loss.alpha_d2t = value;
        }
        SweepParam::Lambda => c.loss.lambda = value,
    }
    let name = match param {
        SweepParam::Alpha => "alpha",
        SweepParam::Lambda => "lambda",
    };
    let dir = config.output.dir.join("sweep").join(value_label(param, value));
    let outcome = c.experiment().validate().map_err(CliError::from).and_then(|_| train_into(&c, &dir));
    match outcome {
        Ok((_, report)) => {
            let m = report.final_metrics;
            SweepRow {
                param: name.into(),
                value,
                status: "ok".into(),
                r1: Some(m.r1),
                r5: Some(m.r5),
                r10: Some(m.r10),
                r1_t2d: Some(m.r1_t2d),
                r1_d2t: Some(m.r1_d2t),
                mean_positive_area: Some(m.mean_positive_area),
                best_step: Some(report.best_step),
                final_loss: report.final_loss,
            }
        }
        Err(e) => SweepRow {
            param: name.into(),
            value,
            status: format!("failed: {e}"),
            r1: None,
            r5: None,
            r10: None,
            r1_t2d: None,
            r1_d2t: None,
            mean_positive_area: None,
            best_step: None,
            final_loss: None,
        },
    }
}

/// One row per value, in input order. Failed runs are recorded in their row
/// and do not stop the sweep.
pub fn cmd_sweep(config: &RunConfig, param: SweepParam, values: &[f64], parallel: bool) -> CliResult<Vec<SweepRow>> {
    if values.is_empty() {
        return Err(CliError::Usage("sweep needs at least one value".into()));
    }
    let rows: Vec<SweepRow> = if parallel {
        std::thread::scope(|s| {
            let handles: Vec<_> = values
                .iter()
                .map(|&v| s.spawn(move || sweep_one(config, param, v)))
                .collect();
            handles.into_iter().map(|h| h.join().expect("sweep worker panicked")).collect()
        })
    } else {
        values.iter().map(|&v| sweep_one(config, param, v)).collect()
    };
    for r in &rows {
        match r.r1 {
            Some(r1) => println!("{}={} R@1 {:.4}", r.param, r.value, r1),
            None => println!("{}={} {}", r.param, r.value, r.status),
        }
    }
    write_file(&config.output.dir.join("sweep.csv"), &csv_bytes(&rows)?)?;
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub dim: usize,
    pub batch: usize,
    pub repeats: usize,
    /// Median seconds to score `batch` triples by area.
    pub area_median_s: f64,
    /// Median seconds to score `batch` pairs by cosine.
    pub cosine_median_s: f64,
    pub ratio: f64,
}

fn median_secs(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        0.5 * (xs[n / 2 - 1] + xs[n / 2])
    }
}

pub fn cmd_bench(dim: usize, batch: usize, repeats: usize, seed: u64) -> CliResult<BenchReport> {
    if repeats == 0 || dim == 0 || batch == 0 {
        return Err(CliError::Usage("dim, batch and repeats must all be >= 1".into()));
    }
    let mut r = rng::stream(seed, 0);
    let mut unit = || {
        let v: Vec<f64> = (0..dim).map(|_| r.random_range(-1.0..1.0)).collect();
        let n = geometry::norm(&v).max(f64::MIN_POSITIVE);
        v.into_iter().map(|x| x / n).collect::<Vec<f64>>()
    };
    let triples: Vec<[Vec<f64>; 3]> = (0..batch).map(|_| [unit(), unit(), unit()]).collect();
    let mut sink = 0.0;
    let mut area_t = Vec::with_capacity(repeats);
    let mut cos_t = Vec::with_capacity(repeats);
    for _ in 0..repeats {
        let t0 = Instant::now();
        for [x, y, z] in &triples {
            sink += geometry::triangle_area(x, y, z, 0.0);
        }
        area_t.push(t0.elapsed().as_secs_f64());
        let t0 = Instant::now();
        for [x, y, _] in &triples {
            sink += geometry::cosine(x, y)?;
        }
        cos_t.push(t0.elapsed().as_secs_f64());
    }
    std::hint::black_box(sink);
    let area_median_s = median_secs(area_t);
    let cosine_median_s = median_secs(cos_t);
    Ok(BenchReport {
        dim,
        batch,
        repeats,
        area_median_s,
        cosine_median_s,
        ratio: area_median_s / cosine_median_s,
    })
}
