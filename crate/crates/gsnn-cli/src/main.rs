//! Command-line front end: train, eval, profile, and sweep, driven by a
//! TOML experiment config. Flags override config fields; every output is
//! written under a run directory that must be fresh unless --force is
//! given. All randomness comes from seeds in the config, so re-running a
//! command reproduces its outputs byte for byte.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use gsnn::data::{self, standard_split, Dataset, DatasetManifest};
use gsnn::network::model_forward;
use gsnn::profile::{self, op_report, OpReport};
use gsnn::train::{train, EvalMetrics, RunConfig, SplitKind, TrainOutcome};
use gsnn::Checkpoint;

#[derive(Parser)]
#[command(name = "gsnn", version, about = "Spiking graph networks on citation data")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one model per seed and write histories, checkpoints, and a summary.
    Train(RunArgs),
    /// Evaluate a checkpoint on all splits.
    Eval(EvalArgs),
    /// Count transform operations for a trained checkpoint.
    Profile(EvalArgs),
    /// Train over a grid of time windows and/or STFN settings.
    Sweep(RunArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Experiment config (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides [output].dir from the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Replace the config's seed list (repeatable).
    #[arg(long = "seed")]
    seeds: Vec<u64>,
    /// Write into a non-empty output directory.
    #[arg(long)]
    force: bool,
    /// Worker threads for independent runs.
    #[arg(long, default_value_t = 1)]
    threads: usize,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    config: PathBuf,
    /// Trained checkpoint (JSON) produced by `gsnn train`.
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    force: bool,
}

/// Exit codes: 2 for configuration/input problems, 1 for runtime failures.
const EXIT_CONFIG: u8 = 2;
const EXIT_RUNTIME: u8 = 1;

struct CliError {
    code: u8,
    message: String,
}

impl CliError {
    fn config(message: impl Into<String>) -> Self {
        CliError {
            code: EXIT_CONFIG,
            message: message.into(),
        }
    }

    fn runtime(message: impl Into<String>) -> Self {
        CliError {
            code: EXIT_RUNTIME,
            message: message.into(),
        }
    }
}

type CliResult<T> = Result<T, CliError>;

#[derive(Debug, Clone, Serialize, Deserialize)]
struct DatasetSection {
    /// Either content+cites paths, or a JSON manifest naming them.
    #[serde(default)]
    content: Option<PathBuf>,
    #[serde(default)]
    cites: Option<PathBuf>,
    #[serde(default)]
    manifest: Option<PathBuf>,
    /// Fixed split file (JSON id lists); the seeded standard split is used
    /// when absent.
    #[serde(default)]
    split: Option<PathBuf>,
    #[serde(default)]
    expected_nodes: Option<usize>,
    #[serde(default)]
    expected_features: Option<usize>,
    #[serde(default)]
    expected_classes: Option<usize>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
struct OutputSection {
    #[serde(default)]
    dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
struct SweepSection {
    #[serde(default)]
    time_windows: Vec<usize>,
    /// STFN on/off cells; empty keeps the run config's setting.
    #[serde(default)]
    stfn: Vec<bool>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum AccountingMode {
    /// Dense GNN features in every layer.
    #[default]
    Dense,
    /// Charge the GNN first layer only for set input bits.
    SparseInput,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
struct ProfileSection {
    #[serde(default)]
    accounting: AccountingMode,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ExperimentConfig {
    dataset: DatasetSection,
    #[serde(default)]
    run: RunConfig,
    #[serde(default)]
    output: OutputSection,
    #[serde(default)]
    sweep: Option<SweepSection>,
    #[serde(default)]
    profile: Option<ProfileSection>,
}

impl ExperimentConfig {
    fn load(path: &Path) -> CliResult<Self> {
        if !path.is_file() {
            return Err(CliError::config(format!(
                "config file not found: {}",
                path.display()
            )));
        }
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg: ExperimentConfig = toml::from_str(&text)
            .map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
        // resolve dataset paths relative to the config file so the echoed
        // effective config reproduces the run from anywhere
        let base = path.parent().unwrap_or(Path::new("."));
        let absolutize = |p: &mut Option<PathBuf>| {
            if let Some(rel) = p.as_ref() {
                if rel.is_relative() {
                    *p = Some(base.join(rel));
                }
            }
        };
        absolutize(&mut cfg.dataset.content);
        absolutize(&mut cfg.dataset.cites);
        absolutize(&mut cfg.dataset.manifest);
        absolutize(&mut cfg.dataset.split);
        absolutize(&mut cfg.output.dir);
        cfg.run
            .validate()
            .map_err(|e| CliError::config(e.to_string()))?;
        Ok(cfg)
    }

    fn load_dataset(&self) -> CliResult<Dataset> {
        let (m, base) = if let Some(manifest_path) = &self.dataset.manifest {
            if !manifest_path.is_file() {
                return Err(CliError::config(format!(
                    "dataset manifest not found: {}",
                    manifest_path.display()
                )));
            }
            let m = DatasetManifest::from_file(manifest_path)
                .map_err(|e| CliError::config(e.to_string()))?;
            let base = manifest_path.parent().unwrap_or(Path::new(".")).to_path_buf();
            (m, base)
        } else {
            let content = self.dataset.content.as_ref().ok_or_else(|| {
                CliError::config("dataset section needs either `manifest` or `content` + `cites`")
            })?;
            let cites = self
                .dataset
                .cites
                .as_ref()
                .ok_or_else(|| CliError::config("dataset section is missing `cites`"))?;
            (
                DatasetManifest {
                    content: content.display().to_string(),
                    cites: cites.display().to_string(),
                    expected_nodes: self.dataset.expected_nodes,
                    expected_features: self.dataset.expected_features,
                    expected_classes: self.dataset.expected_classes,
                },
                PathBuf::new(),
            )
        };
        let content_path = base.join(&m.content);
        if !content_path.is_file() {
            return Err(CliError::config(format!(
                "dataset file not found: {}",
                content_path.display()
            )));
        }
        let cites_path = base.join(&m.cites);
        if !cites_path.is_file() {
            return Err(CliError::config(format!(
                "dataset file not found: {}",
                cites_path.display()
            )));
        }
        let mut d = data::load_from_manifest(&m, &base)
            .map_err(|e| CliError::config(e.to_string()))?;
        d.split = match &self.dataset.split {
            Some(split_path) => {
                if !split_path.is_file() {
                    return Err(CliError::config(format!(
                        "split file not found: {}",
                        split_path.display()
                    )));
                }
                data::load_split_file(&d, split_path)
                    .map_err(|e| CliError::config(e.to_string()))?
            }
            None => standard_split(&d, self.run.split_seed)
                .map_err(|e| CliError::config(e.to_string()))?,
        };
        Ok(d)
    }
}

fn prepare_out_dir(dir: &Path, force: bool) -> CliResult<()> {
    if dir.exists() {
        let occupied = fs::read_dir(dir)
            .map_err(|e| CliError::config(format!("cannot read {}: {e}", dir.display())))?
            .next()
            .is_some();
        if occupied && !force {
            return Err(CliError::config(format!(
                "output directory {} is not empty; pass --force to overwrite",
                dir.display()
            )));
        }
    } else {
        fs::create_dir_all(dir)
            .map_err(|e| CliError::config(format!("cannot create {}: {e}", dir.display())))?;
    }
    Ok(())
}

fn resolve_out_dir(cfg: &ExperimentConfig, cli_out: &Option<PathBuf>) -> CliResult<PathBuf> {
    cli_out
        .clone()
        .or_else(|| cfg.output.dir.clone())
        .ok_or_else(|| CliError::config("no output directory: set [output].dir or pass --out"))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let text = serde_json::to_string_pretty(value)
        .map_err(|e| CliError::runtime(format!("serialize {}: {e}", path.display())))?;
    fs::write(path, text)
        .map_err(|e| CliError::runtime(format!("write {}: {e}", path.display())))
}

fn echo_config(cfg: &ExperimentConfig, out_dir: &Path) -> CliResult<()> {
    let text = toml::to_string_pretty(cfg)
        .map_err(|e| CliError::runtime(format!("serialize config: {e}")))?;
    fs::write(out_dir.join("config.toml"), text)
        .map_err(|e| CliError::runtime(format!("write config echo: {e}")))
}

fn write_history(path: &Path, outcome: &TrainOutcome) -> CliResult<()> {
    let layer_count = outcome
        .history
        .first()
        .map_or(0, |e| e.firing_rates.len());
    let mut csv = String::from("epoch,train_loss,val_acc,test_acc");
    for i in 1..=layer_count {
        csv.push_str(&format!(",fr_layer{i}"));
    }
    csv.push('\n');
    for row in &outcome.history {
        csv.push_str(&format!(
            "{},{},{},{}",
            row.epoch, row.train_loss, row.val_acc, row.test_acc
        ));
        for fr in &row.firing_rates {
            csv.push_str(&format!(",{fr}"));
        }
        csv.push('\n');
    }
    fs::write(path, csv).map_err(|e| CliError::runtime(format!("write {}: {e}", path.display())))
}

#[derive(Debug, Serialize)]
struct SeedResult {
    seed: u64,
    test_acc: f64,
    val_acc: f64,
    best_epoch: usize,
    epochs_run: usize,
}

#[derive(Debug, Serialize)]
struct TrainSummary {
    dataset_nodes: usize,
    dataset_classes: usize,
    seeds: Vec<u64>,
    per_seed: Vec<SeedResult>,
    mean_test_acc: f64,
    std_test_acc: f64,
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let m = xs.iter().sum::<f64>() / xs.len() as f64;
    let var = xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / xs.len() as f64;
    (m, var.sqrt())
}

type Job<'a, T> = Box<dyn Fn() -> T + Send + Sync + 'a>;

/// Run `jobs` closures on up to `threads` workers and collect results in
/// job order. Jobs are independent, so scheduling cannot change results.
fn run_parallel<T: Send>(threads: usize, jobs: Vec<Job<'_, T>>) -> Vec<T> {
    let total = jobs.len();
    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<Option<T>>> = Mutex::new((0..total).map(|_| None).collect());
    let workers = threads.max(1).min(total.max(1));
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let idx = next.fetch_add(1, Ordering::SeqCst);
                if idx >= total {
                    break;
                }
                let value = jobs[idx]();
                results.lock().unwrap()[idx] = Some(value);
            });
        }
    });
    results
        .into_inner()
        .unwrap()
        .into_iter()
        .map(|v| v.expect("every job ran"))
        .collect()
}

fn cmd_train(args: &RunArgs) -> CliResult<()> {
    let mut cfg = ExperimentConfig::load(&args.config)?;
    if !args.seeds.is_empty() {
        cfg.run.seeds = args.seeds.clone();
    }
    let out_dir = resolve_out_dir(&cfg, &args.out)?;
    prepare_out_dir(&out_dir, args.force)?;
    let dataset = cfg.load_dataset()?;
    echo_config(&cfg, &out_dir)?;

    let seeds = cfg.run.seeds.clone();
    let jobs: Vec<Job<Result<(u64, TrainOutcome), String>>> = seeds
        .iter()
        .map(|&seed| {
            let dataset = &dataset;
            let run = &cfg.run;
            Box::new(move || {
                train(dataset, run, seed)
                    .map(|o| (seed, o))
                    .map_err(|e| format!("seed {seed}: {e}"))
            }) as Job<Result<(u64, TrainOutcome), String>>
        })
        .collect();
    let outcomes = run_parallel(args.threads, jobs);

    let mut per_seed = Vec::new();
    for outcome in outcomes {
        let (seed, outcome) = outcome.map_err(CliError::runtime)?;
        write_history(&out_dir.join(format!("history-seed{seed}.csv")), &outcome)?;
        let ckpt = Checkpoint::new(cfg.run.clone(), seed, outcome.model.clone());
        ckpt.save(&out_dir.join(format!("checkpoint-seed{seed}.json")))
            .map_err(|e| CliError::runtime(e.to_string()))?;
        per_seed.push(SeedResult {
            seed,
            test_acc: outcome.test_acc,
            val_acc: outcome.best_val_acc,
            best_epoch: outcome.best_epoch,
            epochs_run: outcome.history.len(),
        });
    }
    let accs: Vec<f64> = per_seed.iter().map(|r| r.test_acc).collect();
    let (mean, std) = mean_std(&accs);
    let summary = TrainSummary {
        dataset_nodes: dataset.num_nodes(),
        dataset_classes: dataset.class_count,
        seeds,
        per_seed,
        mean_test_acc: mean,
        std_test_acc: std,
    };
    write_json(&out_dir.join("summary.json"), &summary)?;
    println!(
        "trained {} seed(s): test accuracy {:.4} +/- {:.4} -> {}",
        summary.seeds.len(),
        mean,
        std,
        out_dir.display()
    );
    Ok(())
}

fn load_checkpoint_for(dataset: &Dataset, path: &Path) -> CliResult<Checkpoint> {
    if !path.is_file() {
        return Err(CliError::config(format!(
            "checkpoint not found: {}",
            path.display()
        )));
    }
    let ckpt = Checkpoint::load(path).map_err(|e| CliError::runtime(e.to_string()))?;
    let first = &ckpt.model.layers[0];
    if first.in_dim != dataset.feature_dim {
        return Err(CliError::runtime(format!(
            "checkpoint expects {} input features, dataset has {}",
            first.in_dim, dataset.feature_dim
        )));
    }
    if first.stfn.lambda.rows != dataset.num_nodes() {
        return Err(CliError::runtime(format!(
            "checkpoint was trained on {} nodes, dataset has {}",
            first.stfn.lambda.rows,
            dataset.num_nodes()
        )));
    }
    if ckpt.model.output_dim() != dataset.class_count {
        return Err(CliError::runtime(format!(
            "checkpoint emits {} classes, dataset has {}",
            ckpt.model.output_dim(),
            dataset.class_count
        )));
    }
    Ok(ckpt)
}

#[derive(Debug, Serialize)]
struct EvalReport {
    train: Option<EvalMetrics>,
    val: Option<EvalMetrics>,
    test: Option<EvalMetrics>,
    firing: Vec<profile::FiringStats>,
}

fn cmd_eval(args: &EvalArgs) -> CliResult<()> {
    let cfg = ExperimentConfig::load(&args.config)?;
    let out_dir = resolve_out_dir(&cfg, &args.out)?;
    prepare_out_dir(&out_dir, args.force)?;
    let dataset = cfg.load_dataset()?;
    let ckpt = load_checkpoint_for(&dataset, &args.checkpoint)?;

    // one deterministic forward with the training seed's encoding, so the
    // reported numbers match the training-time history exactly
    let encoded = data::encode(
        &dataset,
        ckpt.config.encoder,
        ckpt.config.time_window,
        ckpt.seed,
    )
    .map_err(|e| CliError::runtime(e.to_string()))?;
    let trace = model_forward(&dataset.graph, &encoded, &ckpt.model, false, 0)
        .map_err(|e| CliError::runtime(e.to_string()))?;
    let firing_rates = trace.firing_rates();
    let metrics_for = |kind: SplitKind, nodes: &[usize]| -> CliResult<Option<EvalMetrics>> {
        if nodes.is_empty() {
            eprintln!("warning: empty {kind:?} split, skipping");
            return Ok(None);
        }
        let acc = gsnn::accuracy(&trace.logits, &dataset.labels, nodes)
            .map_err(|e| CliError::runtime(e.to_string()))?;
        let (loss_sum, _) = gsnn::masked_cross_entropy(&trace.logits, &dataset.labels, nodes)
            .map_err(|e| CliError::runtime(e.to_string()))?;
        Ok(Some(EvalMetrics {
            accuracy: acc,
            loss: loss_sum / nodes.len() as f64,
            firing_rates: firing_rates.clone(),
        }))
    };
    let report = EvalReport {
        train: metrics_for(SplitKind::Train, &dataset.split.train)?,
        val: metrics_for(SplitKind::Val, &dataset.split.val)?,
        test: metrics_for(SplitKind::Test, &dataset.split.test)?,
        firing: profile::firing_stats(&trace),
    };
    write_json(&out_dir.join("metrics.json"), &report)?;
    if let Some(test) = &report.test {
        println!("test accuracy {:.4} -> {}", test.accuracy, out_dir.display());
    } else {
        println!("evaluated -> {}", out_dir.display());
    }
    Ok(())
}

/// Rows of the plot-ready ratio-vs-depth CSV: cumulative transform counts
/// over layer prefixes.
fn ratio_csv(report: &OpReport) -> String {
    let mut csv = String::from("layers,gnn_mults,snn_adds,ratio\n");
    let mut gnn = 0u64;
    let mut snn = 0u64;
    for i in 0..report.gnn.per_layer_mults.len() {
        gnn += report.gnn.per_layer_mults[i];
        snn += report.snn.per_layer_adds[i];
        let ratio = if snn == 0 {
            "inf".to_string()
        } else {
            format!("{}", gnn as f64 / snn as f64)
        };
        csv.push_str(&format!("{},{gnn},{snn},{ratio}\n", i + 1));
    }
    csv
}

fn cmd_profile(args: &EvalArgs) -> CliResult<()> {
    let cfg = ExperimentConfig::load(&args.config)?;
    let out_dir = resolve_out_dir(&cfg, &args.out)?;
    prepare_out_dir(&out_dir, args.force)?;
    let dataset = cfg.load_dataset()?;
    let ckpt = load_checkpoint_for(&dataset, &args.checkpoint)?;
    let accounting = cfg.profile.clone().unwrap_or_default().accounting;

    let encoded = data::encode(
        &dataset,
        ckpt.config.encoder,
        ckpt.config.time_window,
        ckpt.seed,
    )
    .map_err(|e| CliError::runtime(e.to_string()))?;
    let trace = model_forward(&dataset.graph, &encoded, &ckpt.model, false, 0)
        .map_err(|e| CliError::runtime(e.to_string()))?;
    let dims: Vec<usize> = std::iter::once(ckpt.model.layers[0].in_dim)
        .chain(ckpt.model.layers.iter().map(|l| l.out_dim))
        .collect();
    let mut report = op_report(
        &trace,
        &dims,
        dataset.num_nodes(),
        dataset.graph.nnz(),
        ckpt.config.time_window,
    );
    if accounting == AccountingMode::SparseInput {
        let gnn_ops = report.gnn_sparse_input.total_mults;
        let snn_ops = report.snn.total_adds;
        report.compression_ratio = if snn_ops == 0 {
            f64::INFINITY
        } else {
            gnn_ops as f64 / snn_ops as f64
        };
        report.accounting = format!("{} [ratio uses sparse-input GNN counts]", report.accounting);
    }
    write_json(&out_dir.join("opreport.json"), &report)?;
    fs::write(out_dir.join("opreport.csv"), ratio_csv(&report))
        .map_err(|e| CliError::runtime(format!("write opreport.csv: {e}")))?;
    let ratio = if report.compression_ratio.is_finite() {
        format!("{:.2}x", report.compression_ratio)
    } else {
        "inf".to_string()
    };
    println!(
        "GNN {} transform mults vs SNN {} adds: compression {ratio} -> {}",
        report.gnn.total_mults,
        report.snn.total_adds,
        out_dir.display()
    );
    Ok(())
}

#[derive(Debug, Clone, Serialize)]
struct SweepCell {
    time_window: usize,
    stfn: bool,
    status: String,
    mean_test_acc: Option<f64>,
    std_test_acc: Option<f64>,
    mean_best_epoch: Option<f64>,
}

fn cmd_sweep(args: &RunArgs) -> CliResult<()> {
    let mut cfg = ExperimentConfig::load(&args.config)?;
    if !args.seeds.is_empty() {
        cfg.run.seeds = args.seeds.clone();
    }
    let sweep = cfg
        .sweep
        .clone()
        .ok_or_else(|| CliError::config("sweep requires a [sweep] section"))?;
    if sweep.time_windows.is_empty() && sweep.stfn.is_empty() {
        return Err(CliError::config(
            "sweep grid is empty: set time_windows and/or stfn in [sweep]",
        ));
    }
    let t_values = if sweep.time_windows.is_empty() {
        vec![cfg.run.time_window]
    } else {
        sweep.time_windows.clone()
    };
    let stfn_values = if sweep.stfn.is_empty() {
        vec![cfg.run.stfn_enabled]
    } else {
        sweep.stfn.clone()
    };
    let out_dir = resolve_out_dir(&cfg, &args.out)?;
    prepare_out_dir(&out_dir, args.force)?;
    let dataset = cfg.load_dataset()?;
    echo_config(&cfg, &out_dir)?;

    let mut cells = Vec::new();
    for &t in &t_values {
        for &stfn in &stfn_values {
            cells.push((t, stfn));
        }
    }
    let seeds = cfg.run.seeds.clone();
    let mut jobs: Vec<Job<Result<TrainOutcome, String>>> = Vec::new();
    for &(t, stfn) in &cells {
        for &seed in &seeds {
            let dataset = &dataset;
            let base = &cfg.run;
            jobs.push(Box::new(move || {
                let run = RunConfig {
                    time_window: t,
                    stfn_enabled: stfn,
                    ..base.clone()
                };
                train(dataset, &run, seed).map_err(|e| e.to_string())
            }));
        }
    }
    let results = run_parallel(args.threads, jobs);

    let mut rows = Vec::new();
    for (cell_idx, &(t, stfn)) in cells.iter().enumerate() {
        let cell_results = &results[cell_idx * seeds.len()..(cell_idx + 1) * seeds.len()];
        let failures: Vec<&String> = cell_results.iter().filter_map(|r| r.as_ref().err()).collect();
        let cell = if failures.is_empty() {
            let accs: Vec<f64> = cell_results
                .iter()
                .map(|r| r.as_ref().unwrap().test_acc)
                .collect();
            let epochs: Vec<f64> = cell_results
                .iter()
                .map(|r| r.as_ref().unwrap().best_epoch as f64)
                .collect();
            let (mean, std) = mean_std(&accs);
            let (mean_epoch, _) = mean_std(&epochs);
            SweepCell {
                time_window: t,
                stfn,
                status: "ok".into(),
                mean_test_acc: Some(mean),
                std_test_acc: Some(std),
                mean_best_epoch: Some(mean_epoch),
            }
        } else {
            // a diverged cell is recorded and the sweep continues
            SweepCell {
                time_window: t,
                stfn,
                status: format!("failed: {}", failures[0]),
                mean_test_acc: None,
                std_test_acc: None,
                mean_best_epoch: None,
            }
        };
        write_json(
            &out_dir.join(format!(
                "summary-T{t}-stfn_{}.json",
                if stfn { "on" } else { "off" }
            )),
            &cell,
        )?;
        rows.push(cell);
    }

    let mut csv =
        String::from("time_window,stfn,status,mean_test_acc,std_test_acc,mean_best_epoch\n");
    for cell in &rows {
        csv.push_str(&format!(
            "{},{},{},{},{},{}\n",
            cell.time_window,
            cell.stfn,
            cell.status,
            cell.mean_test_acc.map_or(String::new(), |v| v.to_string()),
            cell.std_test_acc.map_or(String::new(), |v| v.to_string()),
            cell.mean_best_epoch.map_or(String::new(), |v| v.to_string()),
        ));
    }
    fs::write(out_dir.join("sweep.csv"), csv)
        .map_err(|e| CliError::runtime(format!("write sweep.csv: {e}")))?;
    println!("swept {} cell(s) -> {}", rows.len(), out_dir.display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Train(args) => cmd_train(args),
        Command::Eval(args) => cmd_eval(args),
        Command::Profile(args) => cmd_profile(args),
        Command::Sweep(args) => cmd_sweep(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message);
            ExitCode::from(e.code)
        }
    }
}
