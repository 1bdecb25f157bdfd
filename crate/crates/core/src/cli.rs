//! Command-line front end.
//!
//! Settings resolve in three layers: built-in defaults, then the JSON file
//! given by `--config`, then individual flags.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::data::{
    generate_synthetic, load_dataset, load_teacher, save_csv, save_grid, save_teacher,
    teacher_path, AugmentMode, DataFormat, Dataset, SyntheticSpec, TeacherRecord,
};
use crate::error::{Error, Result};
use crate::evaluation::{lambda_sweep, run_fold, test_metrics, Fold};
use crate::gradcheck::{run_gradcheck, GradcheckOptions};
use crate::losses::GateSignal;
use crate::models::{Checkpoint, CheckpointMeta, ModelPair};
use crate::training::{
    alignment_errors, stratified_split, train, Branches, EpochRecord, TrainConfig, TrainOutcome,
};

/// Environment variable capping worker threads.
pub const THREADS_ENV: &str = "MGEC_THREADS";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSettings {
    pub grid: Vec<f64>,
    pub seeds: Vec<u64>,
    pub ablations: Vec<Branches>,
}

impl Default for SweepSettings {
    fn default() -> Self {
        Self {
            grid: vec![0.0, 0.25, 0.5, 0.75, 1.0],
            seeds: (0..5).collect(),
            ablations: Branches::ALL.to_vec(),
        }
    }
}

/// Everything a command can be configured with. The canonical JSON of
/// the resolved value is written next to each run's outputs.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub data: SyntheticSpec,
    pub train: TrainConfig,
    pub sweep: SweepSettings,
    pub gradcheck: GradcheckOptions,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::json(path, e))
    }

    pub fn canonical_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes") + "\n"
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "mgec",
    version,
    about = "Shared/routed expert co-training on synthetic domain-shift data"
)]
pub struct Cli {
    /// JSON config file; flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Worker threads for folds and sweep cells (capped by MGEC_THREADS).
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    /// Repeat for more log output.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset and its teacher record.
    Gen(GenArgs),
    /// Train a model pair on a dataset.
    Train(TrainArgs),
    /// Score a checkpoint on a dataset.
    Eval(EvalArgs),
    /// Run the lambda sweep over leave-one-domain-out folds.
    Sweep(SweepArgs),
    /// Finite-difference check of every training objective.
    Gradcheck(GradcheckArgs),
}

#[derive(Debug, Args)]
pub struct GenArgs {
    /// Output dataset path (`.csv`, or `.bin` for grid binary).
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum)]
    pub format: Option<DataFormat>,
    /// Data seed.
    #[arg(long)]
    pub seed: Option<u64>,
    #[command(flatten)]
    pub spec: SpecFlags,
}

#[derive(Debug, Args)]
pub struct SpecFlags {
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Comma-separated domain counts, one per group.
    #[arg(long, value_delimiter = ',')]
    pub domains_per_group: Option<Vec<usize>>,
    #[arg(long)]
    pub samples_per_domain: Option<usize>,
    #[arg(long)]
    pub dim: Option<usize>,
    #[arg(long)]
    pub classes: Option<usize>,
    #[arg(long)]
    pub sigma_group: Option<f64>,
    #[arg(long)]
    pub sigma_domain: Option<f64>,
    #[arg(long)]
    pub sigma_sample: Option<f64>,
    #[arg(long)]
    pub sigma_w_base: Option<f64>,
    #[arg(long)]
    pub sigma_w_group: Option<f64>,
    #[arg(long)]
    pub sigma_w_domain: Option<f64>,
}

#[derive(Debug, Args)]
pub struct TrainFlags {
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub max_epochs: Option<usize>,
    #[arg(long)]
    pub patience: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub weight_decay: Option<f64>,
    #[arg(long)]
    pub warmup_epochs: Option<usize>,
    #[arg(long)]
    pub experts: Option<usize>,
    #[arg(long)]
    pub top_k: Option<usize>,
    #[arg(long)]
    pub gate_dim: Option<usize>,
    /// Comma-separated extractor widths.
    #[arg(long, value_delimiter = ',')]
    pub hidden: Option<Vec<usize>>,
    #[arg(long)]
    pub rho: Option<f64>,
    #[arg(long, value_enum)]
    pub augment: Option<AugmentMode>,
    /// Routing signal read by the specialization and balance losses.
    #[arg(long, value_enum)]
    pub gate: Option<GateSignal>,
    #[arg(long)]
    pub no_jel: bool,
    #[arg(long)]
    pub no_sl: bool,
    #[arg(long)]
    pub no_bl: bool,
    #[arg(long)]
    pub val_fraction: Option<f64>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Dataset file written by `gen` (or any file in the same format).
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_enum)]
    pub format: Option<DataFormat>,
    /// Run directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Hold these domains out as a test split and report on them.
    #[arg(long, value_delimiter = ',')]
    pub test_domains: Option<Vec<u32>>,
    #[arg(long, value_enum)]
    pub ablation: Option<Branches>,
    /// Training seed.
    #[arg(long)]
    pub seed: Option<u64>,
    #[command(flatten)]
    pub train: TrainFlags,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_enum)]
    pub format: Option<DataFormat>,
    /// Domains to score; all by default.
    #[arg(long, value_delimiter = ',')]
    pub domains: Option<Vec<u32>>,
    /// Also write the report here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_delimiter = ',')]
    pub grid: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    pub seeds: Option<Vec<u64>>,
    #[arg(long, value_delimiter = ',', value_enum)]
    pub ablations: Option<Vec<Branches>>,
    #[command(flatten)]
    pub spec: SpecFlags,
    #[command(flatten)]
    pub train: TrainFlags,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[arg(long)]
    pub seed: Option<u64>,
    /// Plant a 1% gradient error; the check must then fail.
    #[arg(long)]
    pub corrupt: bool,
    #[arg(long)]
    pub probes: Option<usize>,
    #[arg(long)]
    pub tol: Option<f64>,
    /// Also write the JSON report here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

impl SpecFlags {
    fn apply(self, spec: &mut SyntheticSpec) {
        set(&mut spec.lambda, self.lambda);
        set(&mut spec.domains_per_group, self.domains_per_group);
        set(&mut spec.samples_per_domain, self.samples_per_domain);
        set(&mut spec.dim, self.dim);
        set(&mut spec.class_count, self.classes);
        set(&mut spec.sigma_group, self.sigma_group);
        set(&mut spec.sigma_domain, self.sigma_domain);
        set(&mut spec.sigma_sample, self.sigma_sample);
        set(&mut spec.sigma_w_base, self.sigma_w_base);
        set(&mut spec.sigma_w_group, self.sigma_w_group);
        set(&mut spec.sigma_w_domain, self.sigma_w_domain);
    }
}

impl TrainFlags {
    fn apply(self, c: &mut TrainConfig) {
        set(&mut c.batch_size, self.batch_size);
        set(&mut c.max_epochs, self.max_epochs);
        set(&mut c.patience, self.patience);
        set(&mut c.lr, self.lr);
        set(&mut c.weight_decay, self.weight_decay);
        set(&mut c.warmup_epochs, self.warmup_epochs);
        set(&mut c.experts, self.experts);
        set(&mut c.top_k, self.top_k);
        set(&mut c.gate_dim, self.gate_dim);
        set(&mut c.hidden, self.hidden);
        set(&mut c.augment.rho, self.rho);
        set(&mut c.augment.mode, self.augment);
        set(&mut c.regularizers.gate, self.gate);
        set(&mut c.val_fraction, self.val_fraction);
        c.regularizers.jel &= !self.no_jel;
        c.regularizers.sl &= !self.no_sl;
        c.regularizers.bl &= !self.no_bl;
    }
}

fn spec_path(data: &Path) -> PathBuf {
    data.with_extension("spec.json")
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn to_json<S: Serialize>(value: &S) -> String {
    serde_json::to_string_pretty(value).expect("reports serialize") + "\n"
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn load_optional<T>(path: &Path, load: impl FnOnce(&Path) -> Result<T>) -> Result<Option<T>> {
    if path.exists() {
        load(path).map(Some)
    } else {
        Ok(None)
    }
}

/// Worker count from `--jobs`, capped by [`THREADS_ENV`].
pub fn thread_budget(jobs: Option<usize>, env: Option<&str>) -> Result<usize> {
    let cap = match env {
        Some(v) => Some(
            v.trim()
                .parse::<usize>()
                .ok()
                .filter(|&n| n > 0)
                .ok_or_else(|| {
                    Error::config(format!(
                        "{THREADS_ENV} must be a positive integer, got {v:?}"
                    ))
                })?,
        ),
        None => None,
    };
    if jobs == Some(0) {
        return Err(Error::config("--jobs must be positive"));
    }
    let wanted =
        jobs.unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    Ok(cap.map_or(wanted, |c| wanted.min(c)))
}

fn cmd_gen(args: GenArgs, mut config: RunConfig) -> Result<()> {
    set(&mut config.data.seed, args.seed);
    args.spec.apply(&mut config.data);
    let spec = &config.data;
    let (dataset, teacher) = generate_synthetic(spec)?;
    if let Some(dir) = args.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(dir)?;
    }
    match args
        .format
        .unwrap_or_else(|| DataFormat::from_path(&args.out))
    {
        DataFormat::Csv => save_csv(&dataset, &args.out)?,
        DataFormat::GridBinary => save_grid(&dataset, &args.out)?,
    }
    save_teacher(&teacher, &teacher_path(&args.out))?;
    write_text(&spec_path(&args.out), &to_json(spec))?;

    let summary = serde_json::json!({
        "path": args.out,
        "samples": dataset.len(),
        "dim": dataset.dim(),
        "domains": dataset.domains(),
        "class_fractions": dataset.class_fractions(),
        "regenerations": teacher.regenerations,
    });
    println!("{}", to_json(&summary).trim_end());
    Ok(())
}

struct RunWriter {
    dir: PathBuf,
    epochs: BufWriter<File>,
    spec: Option<SyntheticSpec>,
    config: TrainConfig,
}

impl RunWriter {
    fn new(dir: &Path, spec: Option<SyntheticSpec>, config: &TrainConfig) -> Result<Self> {
        let path = dir.join("epochs.jsonl");
        let file = File::create(&path).map_err(|e| Error::io(&path, e))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            epochs: BufWriter::new(file),
            spec,
            config: config.clone(),
        })
    }

    fn checkpoint(&self, models: &ModelPair<f64>, meta: CheckpointMeta) -> Checkpoint<f64> {
        Checkpoint {
            spec: self.spec.clone(),
            config: self.config.clone(),
            models: models.clone(),
            meta,
            seed: self.config.seed,
        }
    }

    /// Streams the record; a new best is checkpointed at once so an abort
    /// leaves the last good parameters on disk.
    fn observe(&mut self, record: &EpochRecord, best: Option<&ModelPair<f64>>) -> Result<()> {
        let path = self.dir.join("epochs.jsonl");
        self.epochs
            .write_all(record.to_json_line().as_bytes())
            .and_then(|_| self.epochs.flush())
            .map_err(|e| Error::io(&path, e))?;
        if let Some(models) = best {
            let meta = CheckpointMeta {
                best_epoch: record.epoch,
                epochs_run: record.epoch,
                best_metric: record.monitored,
            };
            self.checkpoint(models, meta)
                .save(&self.dir.join("checkpoint.json"))?;
        }
        Ok(())
    }

    fn finish(&self, outcome: &TrainOutcome<f64>) -> Result<()> {
        let meta = CheckpointMeta {
            best_epoch: outcome.best_epoch,
            epochs_run: outcome.history.len(),
            best_metric: outcome.best_metric,
        };
        self.checkpoint(&outcome.models, meta)
            .save(&self.dir.join("checkpoint.json"))
    }
}

fn load_inputs(
    data: &Path,
    format: Option<DataFormat>,
) -> Result<(Dataset, Option<TeacherRecord>, Option<SyntheticSpec>)> {
    let dataset = load_dataset(data, format.unwrap_or_else(|| DataFormat::from_path(data)))?;
    let teacher = load_optional(&teacher_path(data), load_teacher)?;
    let spec = load_optional(&spec_path(data), |p| {
        let text = fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
        serde_json::from_str(&text).map_err(|e| Error::json(p, e))
    })?;
    Ok((dataset, teacher, spec))
}

fn cmd_train(args: TrainArgs, mut config: RunConfig) -> Result<()> {
    set(&mut config.train.seed, args.seed);
    set(&mut config.train.branches, args.ablation);
    args.train.apply(&mut config.train);
    config.train.validate()?;
    if !config.train.mutual_phase_reached() && config.train.branches == Branches::Full {
        log::warn!(
            "warmup_epochs {} ≥ max_epochs {}: the run is warm-up only",
            config.train.warmup_epochs,
            config.train.max_epochs
        );
    }
    if !config.train.early_stopping_active() {
        log::warn!(
            "patience {} ≥ max_epochs {}: early stopping is inactive",
            config.train.patience,
            config.train.max_epochs
        );
    }
    let (dataset, teacher, spec) = load_inputs(&args.data, args.format)?;
    if let Some(t) = &teacher {
        if t.class_count != dataset.class_count() {
            return Err(Error::config(
                "teacher record does not match the dataset's class count",
            ));
        }
    }

    create_dir(&args.out)?;
    write_text(&args.out.join("config.json"), &config.canonical_json())?;
    let mut writer = RunWriter::new(&args.out, spec, &config.train)?;
    let observer = |r: &EpochRecord, best: Option<&ModelPair<f64>>| writer.observe(r, best);

    let summary = match &args.test_domains {
        Some(test) => {
            let known = dataset.domains();
            if let Some(d) = test.iter().find(|d| !known.contains(d)) {
                return Err(Error::config(format!(
                    "test domain {d} is not in the dataset"
                )));
            }
            let fold = Fold {
                id: 0,
                train_domains: known
                    .iter()
                    .copied()
                    .filter(|d| !test.contains(d))
                    .collect(),
                test_domains: test.clone(),
            };
            let ablation = config.train.branches;
            let (report, outcome) = run_fold(
                &dataset,
                &fold,
                &config.train,
                ablation,
                teacher.as_ref(),
                observer,
            )?;
            writer.finish(&outcome)?;
            let mut report = report;
            report.history.clear();
            write_text(&args.out.join("fold_report.json"), &to_json(&report))?;
            serde_json::to_value(&report).expect("serializes")
        }
        None => {
            let (train_set, val) =
                stratified_split(&dataset, config.train.val_fraction, config.train.seed)?;
            let outcome =
                train::<f64, _>(&train_set, &val, &config.train, teacher.as_ref(), observer)?;
            writer.finish(&outcome)?;
            serde_json::json!({
                "best_epoch": outcome.best_epoch,
                "epochs_run": outcome.history.len(),
                "best_validation_accuracy": outcome.best_metric,
            })
        }
    };
    println!("{}", to_json(&summary).trim_end());
    Ok(())
}

fn cmd_eval(args: EvalArgs) -> Result<()> {
    let checkpoint: Checkpoint<f64> = Checkpoint::load(&args.checkpoint)?;
    let (dataset, teacher, _) = load_inputs(&args.data, args.format)?;
    let dataset = match &args.domains {
        Some(d) => dataset.filter_domains(d),
        None => dataset,
    };
    if dataset.is_empty() {
        return Err(Error::config("no samples in the selected domains"));
    }
    if dataset.dim() != checkpoint.models.shared.extractor.input_width() {
        return Err(Error::config("dataset width does not match the checkpoint"));
    }
    let ablation = checkpoint.config.branches;
    let (heads, primary) = test_metrics(&checkpoint.models, &dataset, ablation)?;
    let alignment = match (&teacher, ablation) {
        (Some(t), Branches::Full) => Some(alignment_errors(&checkpoint.models, &dataset, t)?),
        _ => None,
    };
    let report = serde_json::json!({
        "domains": dataset.domains(),
        "samples": dataset.len(),
        "ablation": ablation,
        "heads": heads,
        "primary": primary,
        "alignment": alignment.map(|(s, r)| serde_json::json!({"eps_shared": s, "eps_routed": r})),
    });
    let text = to_json(&report);
    if let Some(out) = &args.out {
        write_text(out, &text)?;
    }
    print!("{text}");
    Ok(())
}

fn cmd_sweep(args: SweepArgs, mut config: RunConfig) -> Result<()> {
    set(&mut config.sweep.grid, args.grid);
    set(&mut config.sweep.seeds, args.seeds);
    set(&mut config.sweep.ablations, args.ablations);
    args.spec.apply(&mut config.data);
    args.train.apply(&mut config.train);
    config.data.validate()?;
    create_dir(&args.out)?;
    write_text(&args.out.join("config.json"), &config.canonical_json())?;
    let s = &config.sweep;
    let report = lambda_sweep(&config.data, &s.grid, &s.seeds, &config.train, &s.ablations)?;
    report.save_json(&args.out.join("sweep.json"))?;
    report.write_csv(&args.out.join("sweep.csv"))?;
    println!(
        "lambda,ablation,mean_accuracy,std_accuracy,mean_balanced_accuracy,std_balanced_accuracy"
    );
    for c in &report.cells {
        println!(
            "{},{},{:.4},{:.4},{:.4},{:.4}",
            c.lambda,
            c.ablation.label(),
            c.mean_accuracy,
            c.std_accuracy,
            c.mean_balanced_accuracy,
            c.std_balanced_accuracy
        );
    }
    Ok(())
}

fn cmd_gradcheck(args: GradcheckArgs, mut config: RunConfig) -> Result<bool> {
    let opts = &mut config.gradcheck;
    set(&mut opts.seed, args.seed);
    set(&mut opts.fd.n_probes, args.probes);
    set(&mut opts.fd.tol, args.tol);
    opts.corrupt |= args.corrupt;
    let checks = run_gradcheck(opts)?;
    for c in &checks {
        println!(
            "{:<28} max_rel_err {:.3e}  probed {:>3}  {}",
            c.name,
            c.report.max_rel_err,
            c.report.probed,
            if c.report.pass { "pass" } else { "FAIL" }
        );
    }
    if let Some(out) = &args.out {
        write_text(out, &to_json(&checks))?;
    }
    Ok(checks.iter().all(|c| c.report.pass))
}

fn init_logging(verbose: u8) {
    let level = match verbose {
        0 => "warn",
        1 => "info",
        2 => "debug",
        _ => "trace",
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .try_init();
}

/// Runs a parsed command. `Ok(false)` means the command ran but its check
/// failed.
pub fn run(cli: Cli) -> Result<bool> {
    let config = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    let threads = thread_budget(cli.jobs, std::env::var(THREADS_ENV).ok().as_deref())?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::config(format!("thread pool: {e}")))?;
    pool.install(|| match cli.command {
        Command::Gen(a) => cmd_gen(a, config).map(|_| true),
        Command::Train(a) => cmd_train(a, config).map(|_| true),
        Command::Eval(a) => cmd_eval(a).map(|_| true),
        Command::Sweep(a) => cmd_sweep(a, config).map(|_| true),
        Command::Gradcheck(a) => cmd_gradcheck(a, config),
    })
}

/// Process entry point: 0 success, 1 validation error, 2 runtime failure.
pub fn main_entry() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    init_logging(cli.verbose);
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("error: gradient check failed");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
