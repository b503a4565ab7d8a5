//! `lwdinv`: forward simulation, data generation, training, evaluation and
//! inversion from the command line.

mod config;
mod textio;

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use lwdinv::dataset::{generate, Dataset, DatasetError};
use lwdinv::em::EmError;
use lwdinv::formation::{EarthModel, SamplerConfig};
use lwdinv::instrument::{normalize_sets, simulate_log, ChannelSet, InstrumentError, Instruments};
use lwdinv::pipeline::{
    evaluate_crossplot, invert, misfit_report, train, write_inversion_jsonl, write_jsonl, CrossplotReport,
    PipelineError, TrainConfig, TrainedModel,
};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use toml::Table;

use crate::textio::TextTable;

const RUN_FILE: &str = "run.toml";

#[derive(Parser)]
#[command(name = "lwdinv", version, about = "LWD resistivity forward modelling and neural-network inversion")]
struct Cli {
    /// Worker threads for parallel stages.
    #[arg(long, global = true, env = "LWDINV_THREADS")]
    threads: Option<usize>,
    /// Replace an existing output directory.
    #[arg(long, global = true)]
    force: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML run configuration.
    #[arg(long, short)]
    config: Option<PathBuf>,
    /// Override a configuration field, e.g. `--set train.max_epochs=20`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate tool channels along a trajectory through a layered earth.
    Forward(Common),
    /// Generate a synthetic training dataset.
    Generate(Common),
    /// Train the inversion network on a dataset.
    Train(Common),
    /// Crossplot a trained model against a dataset split.
    Evaluate(Common),
    /// Invert a measured log with a trained model.
    Invert(Common),
    /// Convert a crossplot report into plain-text tables.
    CrossplotExport(Common),
}

fn all_sets() -> Vec<ChannelSet> {
    ChannelSet::ALL.to_vec()
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ForwardConfig {
    /// TOML earth model: `beds`, `boundaries` (TVD at horizontal 0), `dip`.
    earth: PathBuf,
    trajectory: PathBuf,
    output: PathBuf,
    #[serde(default = "all_sets")]
    channel_sets: Vec<ChannelSet>,
    #[serde(default)]
    instruments: Instruments,
}

fn default_split() -> [f64; 3] {
    [0.8, 0.1, 0.1]
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GenerateConfig {
    output: PathBuf,
    samples: usize,
    #[serde(default = "all_sets")]
    channel_sets: Vec<ChannelSet>,
    #[serde(default = "default_split")]
    split: [f64; 3],
    /// Defaults to the sampler seed.
    split_seed: Option<u64>,
    #[serde(default)]
    sampler: SamplerConfig,
    #[serde(default)]
    instruments: Instruments,
    /// Also write `samples.jsonl`, one record per sample.
    #[serde(default)]
    export_text: bool,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TrainRunConfig {
    dataset: PathBuf,
    output: PathBuf,
    /// Subset of the dataset's channel sets; all of them when absent.
    channel_sets: Option<Vec<ChannelSet>>,
    #[serde(default)]
    train: TrainConfig,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "lowercase")]
enum SplitName {
    Train,
    Val,
    Test,
    All,
}

fn default_bins() -> usize {
    20
}

fn default_split_name() -> SplitName {
    SplitName::Test
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct EvaluateConfig {
    model: PathBuf,
    dataset: PathBuf,
    output: PathBuf,
    #[serde(default = "default_split_name")]
    split: SplitName,
    #[serde(default = "default_bins")]
    bins: usize,
}

fn yes() -> bool {
    true
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct InvertConfig {
    model: PathBuf,
    /// Table with trajectory and channel columns.
    log: PathBuf,
    output: PathBuf,
    #[serde(default = "yes")]
    misfit: bool,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ExportConfig {
    /// `crossplot.json` written by `evaluate`.
    report: PathBuf,
    output: PathBuf,
}

/// Output directory built under a temporary name and moved into place on
/// success; dropped uncommitted, it is removed.
struct Staged {
    target: PathBuf,
    temp: PathBuf,
    committed: bool,
}

impl Staged {
    fn new(target: &Path, force: bool) -> Result<Self> {
        if target.exists() && !force {
            bail!("output {} already exists (use --force to replace it)", target.display());
        }
        let name = target
            .file_name()
            .ok_or_else(|| anyhow!("output path {} has no file name", target.display()))?;
        let temp = target.with_file_name(format!("{}.partial-{}", name.to_string_lossy(), std::process::id()));
        if temp.exists() {
            fs::remove_dir_all(&temp).with_context(|| format!("clearing {}", temp.display()))?;
        }
        fs::create_dir_all(&temp).with_context(|| format!("creating {}", temp.display()))?;
        Ok(Self {
            target: target.to_path_buf(),
            temp,
            committed: false,
        })
    }

    fn path(&self) -> &Path {
        &self.temp
    }

    /// Writes the run record and moves the directory into place.
    fn commit(mut self, command: &str, config: &Table, seed: Option<u64>) -> Result<PathBuf> {
        write_run_record(&self.temp, command, config, seed)?;
        if self.target.exists() {
            fs::remove_dir_all(&self.target).with_context(|| format!("replacing {}", self.target.display()))?;
        }
        fs::rename(&self.temp, &self.target).with_context(|| format!("moving output to {}", self.target.display()))?;
        self.committed = true;
        Ok(self.target.clone())
    }
}

impl Drop for Staged {
    fn drop(&mut self) {
        if !self.committed {
            let _ = fs::remove_dir_all(&self.temp);
        }
    }
}

#[derive(Serialize)]
struct RunRecord<'a> {
    command: &'a str,
    toolkit_version: &'a str,
    #[serde(skip_serializing_if = "Option::is_none")]
    seed: Option<u64>,
    config: &'a Table,
    checksums: BTreeMap<String, String>,
}

fn checksums(dir: &Path) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for entry in fs::read_dir(dir).with_context(|| format!("listing {}", dir.display()))? {
        let path = entry?.path();
        if path.is_file() {
            let name = path.file_name().unwrap().to_string_lossy().to_string();
            if name != RUN_FILE {
                let bytes = fs::read(&path).with_context(|| format!("reading {}", path.display()))?;
                out.insert(name, hex::encode(Sha256::digest(&bytes)));
            }
        }
    }
    Ok(out)
}

fn write_run_record(dir: &Path, command: &str, config: &Table, seed: Option<u64>) -> Result<()> {
    let record = RunRecord {
        command,
        toolkit_version: env!("CARGO_PKG_VERSION"),
        seed,
        config,
        checksums: checksums(dir)?,
    };
    let path = dir.join(RUN_FILE);
    fs::write(&path, toml::to_string_pretty(&record)?).with_context(|| format!("writing {}", path.display()))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)? + "\n").with_context(|| format!("writing {}", path.display()))
}

fn sets_or_usage(sets: &[ChannelSet]) -> Result<Vec<ChannelSet>> {
    normalize_sets(sets).map_err(|e| anyhow!(e))
}

fn summary(value: serde_json::Value) {
    println!("{value}");
}

fn cmd_forward(c: &Common, force: bool) -> Result<()> {
    let (cfg, table) = config::resolve::<ForwardConfig>(c.config.as_deref(), &c.overrides)?;
    let sets = sets_or_usage(&cfg.channel_sets)?;
    let earth_text =
        fs::read_to_string(&cfg.earth).with_context(|| format!("reading earth model {}", cfg.earth.display()))?;
    let earth: EarthModel =
        toml::from_str(&earth_text).map_err(|e| anyhow!("{}: {e}", cfg.earth.display()))?;
    let model = earth.local_model().with_context(|| format!("earth model {}", cfg.earth.display()))?;
    let trajectory = TextTable::read(&cfg.trajectory)?.trajectory(&cfg.trajectory.display().to_string())?;
    if trajectory.is_empty() {
        bail!("{}: trajectory has no positions", cfg.trajectory.display());
    }
    let staged = Staged::new(&cfg.output, force)?;
    let log = simulate_log(&cfg.instruments, &model, &trajectory, &sets)?;
    let path = staged.path().join("log.txt");
    fs::write(&path, TextTable::from_log(&trajectory, &log).render())
        .with_context(|| format!("writing {}", path.display()))?;
    let out = staged.commit("forward", &table, None)?;
    summary(serde_json::json!({
        "command": "forward",
        "output": out,
        "positions": log.len(),
        "channels": log.channel_names(),
    }));
    Ok(())
}

fn cmd_generate(c: &Common, force: bool) -> Result<()> {
    let (cfg, table) = config::resolve::<GenerateConfig>(c.config.as_deref(), &c.overrides)?;
    let sets = sets_or_usage(&cfg.channel_sets)?;
    let staged = Staged::new(&cfg.output, force)?;
    let mut ds = generate(cfg.samples, &cfg.sampler, &sets, &cfg.instruments)?;
    let split_seed = cfg.split_seed.unwrap_or(cfg.sampler.seed);
    ds.split_and_normalize(cfg.split, split_seed)?;
    ds.save(staged.path())?;
    if cfg.export_text {
        ds.export_text(&staged.path().join("samples.jsonl"))?;
    }
    let ds = Dataset::load(staged.path())?;
    let out = staged.commit("generate", &table, Some(cfg.sampler.seed))?;
    let files: BTreeMap<&String, &String> = ds.manifest.files.iter().map(|(k, v)| (k, &v.sha256)).collect();
    summary(serde_json::json!({
        "command": "generate",
        "output": out,
        "samples": ds.len(),
        "skipped": ds.manifest.skipped.len(),
        "split": ds.manifest.split,
        "sha256": files,
    }));
    Ok(())
}

fn cmd_train(c: &Common, force: bool) -> Result<()> {
    let (cfg, table) = config::resolve::<TrainRunConfig>(c.config.as_deref(), &c.overrides)?;
    let mut ds = Dataset::load(&cfg.dataset)?;
    if let Some(sets) = &cfg.channel_sets {
        ds = ds.select_channels(&sets_or_usage(sets)?)?;
    }
    let staged = Staged::new(&cfg.output, force)?;
    let model = train(&cfg.train, &ds)?;
    model.save(staged.path())?;
    write_jsonl(&staged.path().join("history.jsonl"), &model.meta.history.epochs)?;
    let out = staged.commit("train", &table, Some(cfg.train.seed))?;
    let h = &model.meta.history;
    summary(serde_json::json!({
        "command": "train",
        "output": out,
        "channel_sets": model.meta.channel_sets,
        "epochs": h.epochs.len() - 1,
        "best_epoch": h.best_epoch,
        "initial_val_loss": h.initial_val_loss(),
        "best_val_loss": h.best().map(|e| e.val_loss),
        "stopped_early": h.stopped_early,
    }));
    Ok(())
}

fn split_indices(ds: &Dataset, which: SplitName) -> Result<Vec<usize>> {
    if which == SplitName::All {
        return Ok((0..ds.len()).collect());
    }
    let s = ds
        .split
        .as_ref()
        .ok_or_else(|| anyhow!("dataset has no split"))?;
    Ok(match which {
        SplitName::Train => s.train.clone(),
        SplitName::Val => s.val.clone(),
        SplitName::Test => s.test.clone(),
        SplitName::All => unreachable!(),
    })
}

fn cmd_evaluate(c: &Common, force: bool) -> Result<()> {
    let (cfg, table) = config::resolve::<EvaluateConfig>(c.config.as_deref(), &c.overrides)?;
    let mut model = TrainedModel::load(&cfg.model)?;
    let ds = Dataset::load(&cfg.dataset)?;
    let idx = split_indices(&ds, cfg.split)?;
    let report = evaluate_crossplot(&mut model, &ds, &idx, cfg.bins)?;
    let staged = Staged::new(&cfg.output, force)?;
    write_json(&staged.path().join("crossplot.json"), &report)?;
    report.write_jsonl(
        &staged.path().join("crossplot_points.jsonl"),
        &staged.path().join("crossplot_bins.jsonl"),
    )?;
    let errors: BTreeMap<&str, serde_json::Value> = report
        .parameters
        .iter()
        .map(|p| (p.name.as_str(), serde_json::json!({ "mae": p.mae, "rmse": p.rmse })))
        .collect();
    write_json(&staged.path().join("summary.json"), &errors)?;
    let out = staged.commit("evaluate", &table, None)?;
    summary(serde_json::json!({
        "command": "evaluate",
        "output": out,
        "samples": report.n_samples,
        "errors": errors,
    }));
    Ok(())
}

fn cmd_invert(c: &Common, force: bool) -> Result<()> {
    let (cfg, table) = config::resolve::<InvertConfig>(c.config.as_deref(), &c.overrides)?;
    let mut model = TrainedModel::load(&cfg.model)?;
    let source = cfg.log.display().to_string();
    let text = TextTable::read(&cfg.log)?;
    let trajectory = text.trajectory(&source)?;
    let log = text.measurement_log(&source)?;
    let result = invert(&mut model, &log, &trajectory)?;
    let misfit = if cfg.misfit {
        Some(misfit_report(
            &model.meta.instruments,
            &result.predictions,
            &log,
            &model.meta.channel_sets,
        )?)
    } else {
        None
    };
    let staged = Staged::new(&cfg.output, force)?;
    write_inversion_jsonl(&staged.path().join("inversion.jsonl"), &result, misfit.as_ref())?;
    if let Some(m) = &misfit {
        write_json(
            &staged.path().join("misfit.json"),
            &serde_json::json!({ "channel_names": m.channel_names, "channels": m.channels, "sets": m.sets }),
        )?;
    }
    let out = staged.commit("invert", &table, None)?;
    summary(serde_json::json!({
        "command": "invert",
        "output": out,
        "positions": log.len(),
        "predictions": result.predictions.len(),
        "misfit": misfit.as_ref().map(|m| &m.sets),
    }));
    Ok(())
}

fn cmd_crossplot_export(c: &Common, force: bool) -> Result<()> {
    let (cfg, table) = config::resolve::<ExportConfig>(c.config.as_deref(), &c.overrides)?;
    let text = fs::read_to_string(&cfg.report).with_context(|| format!("reading {}", cfg.report.display()))?;
    let report: CrossplotReport =
        serde_json::from_str(&text).map_err(|e| anyhow!("{}: {e}", cfg.report.display()))?;
    let staged = Staged::new(&cfg.output, force)?;
    for p in &report.parameters {
        let points = TextTable {
            names: vec!["truth".into(), "prediction".into()],
            rows: p.truth.iter().zip(&p.prediction).map(|(&t, &q)| vec![t, q]).collect(),
        };
        let bins = TextTable {
            names: ["lo", "hi", "count", "p10", "p50", "p90", "merged"].map(String::from).to_vec(),
            rows: p
                .bins
                .iter()
                .map(|b| vec![b.lo, b.hi, b.count as f64, b.p10, b.p50, b.p90, b.merged as u8 as f64])
                .collect(),
        };
        for (suffix, t) in [("points", points), ("bins", bins)] {
            let path = staged.path().join(format!("{}_{suffix}.txt", p.name));
            fs::write(&path, t.render()).with_context(|| format!("writing {}", path.display()))?;
        }
    }
    let out = staged.commit("crossplot-export", &table, None)?;
    summary(serde_json::json!({
        "command": "crossplot-export",
        "output": out,
        "parameters": report.parameters.iter().map(|p| &p.name).collect::<Vec<_>>(),
    }));
    Ok(())
}

/// 3 for numerical failures, 2 for everything else that went wrong after
/// the command line was understood.
fn exit_code(err: &anyhow::Error) -> u8 {
    let numerical = err.chain().any(|cause| {
        matches!(cause.downcast_ref::<EmError>(), Some(EmError::Quadrature { .. }))
            || matches!(cause.downcast_ref::<InstrumentError>(), Some(InstrumentError::SingularField(_)))
            || matches!(cause.downcast_ref::<DatasetError>(), Some(DatasetError::TooManySkips { .. }))
            || matches!(cause.downcast_ref::<PipelineError>(), Some(PipelineError::Divergence { .. }))
    });
    if numerical {
        3
    } else {
        2
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("error: --threads must be at least 1");
            return ExitCode::from(1);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    }
    let result = match &cli.command {
        Command::Forward(c) => cmd_forward(c, cli.force),
        Command::Generate(c) => cmd_generate(c, cli.force),
        Command::Train(c) => cmd_train(c, cli.force),
        Command::Evaluate(c) => cmd_evaluate(c, cli.force),
        Command::Invert(c) => cmd_invert(c, cli.force),
        Command::CrossplotExport(c) => cmd_crossplot_export(c, cli.force),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
