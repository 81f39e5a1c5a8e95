//! The train / eval / synth / export workflows behind the binary.

use std::fs::{self, File};
use std::io::Write;
use std::path::{Path, PathBuf};

use flownet_core::data::{
    load_dataset, make_windows, split_dataset, synth_generate, write_coordinates, write_observations, GeometryKind,
    NormStats, SeriesDataset, SplitPart, SplitSpec, Splits, SynthSpec, WindowSet,
};
use flownet_core::diff::Tensor;
use flownet_core::flow::ModelConfig;
use flownet_core::stack::FlowNet;
use flownet_core::train::{evaluate, fit, FitReport, StopReason};
use flownet_core::{DType, Scalar};
use log::info;
use serde::Serialize;

use crate::checkpoint::{checkpoint_dtype, load_checkpoint, save_checkpoint, save_tensors, Checkpoint};
use crate::config::RunConfig;
use crate::error::{CliError, Result};
use crate::export;
use crate::stamp::Stamp;

pub const CHECKPOINT_FILE: &str = "best.json";
pub const REPORT_FILE: &str = "fit_report.jsonl";
pub const STAMP_FILE: &str = "stamp.json";
const EVAL_BATCH: usize = 64;

/// A dataset split and normalized with training-split statistics.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub dataset: SeriesDataset,
    pub dist: Tensor<f64>,
    pub splits: Splits,
    pub stats: NormStats,
}

impl Prepared {
    /// `stats` reuses existing normalization instead of refitting on the training split.
    pub fn new(dataset: SeriesDataset, config: &ModelConfig, split: &SplitSpec, stats: Option<NormStats>) -> Result<Self> {
        let dist = dataset.distances(config.distance_metric)?;
        let splits = split_dataset(&dataset.observations, split)?;
        let stats = match stats {
            Some(s) => s,
            None => NormStats::fit(&splits.train)?,
        };
        if stats.nodes() != dataset.nodes() {
            return Err(CliError::Config(format!(
                "normalization covers {} nodes, data has {}",
                stats.nodes(),
                dataset.nodes()
            )));
        }
        Ok(Self { dataset, dist, splits, stats })
    }

    /// Training windows slide by one step; evaluation windows by the horizon.
    pub fn windows(&self, part: SplitPart, config: &ModelConfig) -> Result<WindowSet> {
        let stride = if part == SplitPart::Train { 1 } else { config.horizon };
        let normalized = self.stats.apply(self.splits.part(part), 1)?;
        Ok(make_windows(&normalized, config.input_len, config.horizon, stride)?)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct TrainSummary {
    pub checkpoint: PathBuf,
    pub epochs: usize,
    pub best_epoch: usize,
    pub best_val_mae: f64,
    pub stop_reason: StopReason,
    pub test_mae: f64,
    pub test_rmse: f64,
}

fn write_report(path: &Path, report: &FitReport) -> Result<()> {
    let mut f = File::create(path)?;
    for e in &report.epochs {
        writeln!(f, "{}", serde_json::to_string(e)?)?;
    }
    Ok(())
}

fn train_typed<T: Scalar>(cfg: &RunConfig, data: Prepared, out: &Path) -> Result<TrainSummary> {
    let model = &cfg.model;
    let net = FlowNet::<T>::new(model.clone(), &data.dist)?;
    let train = data.windows(SplitPart::Train, model)?;
    let val = data.windows(SplitPart::Val, model)?;
    let test = data.windows(SplitPart::Test, model)?;
    info!("{} train / {} val / {} test windows", train.len(), val.len(), test.len());
    let (params, report) = match fit(&net, net.init_params(), &train, &val, &cfg.train, &data.stats) {
        Ok(r) => r,
        Err(flownet_core::Error::Diverged { epoch, reason, report }) => {
            write_report(&out.join(REPORT_FILE), &report)?;
            return Err(flownet_core::Error::Diverged { epoch, reason, report }.into());
        }
        Err(e) => return Err(e.into()),
    };
    write_report(&out.join(REPORT_FILE), &report)?;
    let checkpoint = out.join(CHECKPOINT_FILE);
    let ckpt = Checkpoint {
        config: model.clone(),
        nodes: net.nodes(),
        norm: Some(data.stats.clone()),
        split: Some(cfg.data.split),
        params,
    };
    save_checkpoint(&checkpoint, &ckpt)?;
    let test_metrics = evaluate(&net, &ckpt.params, &test, &data.stats, EVAL_BATCH)?;
    Ok(TrainSummary {
        checkpoint,
        epochs: report.epochs.len(),
        best_epoch: report.best_epoch,
        best_val_mae: report.best_val_mae,
        stop_reason: report.stop_reason,
        test_mae: test_metrics.mae,
        test_rmse: test_metrics.rmse,
    })
}

/// Fits a model from a config file and writes the best checkpoint, the
/// per-epoch report and a stamp into `out`.
pub fn train(config_path: &Path, out: &Path) -> Result<TrainSummary> {
    train_seeded(config_path, out, None)
}

/// As [`train`], with `seed` replacing both the model and the training seed.
pub fn train_seeded(config_path: &Path, out: &Path, seed: Option<u64>) -> Result<TrainSummary> {
    let bytes = fs::read(config_path).map_err(|e| CliError::Missing(format!("{}: {e}", config_path.display())))?;
    let mut cfg = RunConfig::load(config_path)?;
    if let Some(s) = seed {
        cfg.model.seed = s;
        cfg.train.seed = s;
    }
    let dataset = load_dataset(&cfg.data.observations, &cfg.data.geometry, cfg.data.geometry_kind)?;
    let data = Prepared::new(dataset, &cfg.model, &cfg.data.split, None)?;
    fs::create_dir_all(out)?;
    Stamp::new("train", &bytes, Some(cfg.model.seed)).write(&out.join(STAMP_FILE))?;
    fs::write(out.join("config.json"), serde_json::to_string_pretty(&cfg)? + "\n")?;
    match cfg.model.dtype {
        DType::Fp32 => train_typed::<f32>(&cfg, data, out),
        DType::Fp64 => train_typed::<f64>(&cfg, data, out),
    }
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

impl MeanStd {
    fn of(xs: impl Iterator<Item = f64> + Clone) -> Self {
        let n = xs.clone().count() as f64;
        let mean = xs.clone().sum::<f64>() / n;
        let var = xs.map(|x| (x - mean).powi(2)).sum::<f64>() / n;
        Self { mean, std: var.sqrt() }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepSummary {
    pub seeds: Vec<u64>,
    pub runs: Vec<TrainSummary>,
    pub best_val_mae: MeanStd,
    pub test_mae: MeanStd,
    pub test_rmse: MeanStd,
}

/// One training run per seed, each in `out/seed_<s>`.
pub fn train_sweep(config_path: &Path, out: &Path, seeds: &[u64]) -> Result<SweepSummary> {
    if seeds.is_empty() {
        return Err(CliError::Config("empty seed list".into()));
    }
    let mut runs = Vec::with_capacity(seeds.len());
    for &s in seeds {
        info!("seed {s}");
        runs.push(train_seeded(config_path, &out.join(format!("seed_{s}")), Some(s))?);
    }
    Ok(SweepSummary {
        seeds: seeds.to_vec(),
        best_val_mae: MeanStd::of(runs.iter().map(|r| r.best_val_mae)),
        test_mae: MeanStd::of(runs.iter().map(|r| r.test_mae)),
        test_rmse: MeanStd::of(runs.iter().map(|r| r.test_rmse)),
        runs,
    })
}

/// Observation and geometry files to run a checkpoint against.
#[derive(Debug, Clone)]
pub struct DataArgs {
    pub observations: PathBuf,
    pub geometry: PathBuf,
    pub geometry_kind: GeometryKind,
    pub split: SplitPart,
}

struct Loaded<T> {
    net: FlowNet<T>,
    ckpt: Checkpoint<T>,
    data: Prepared,
}

fn load_run<T: Scalar>(ckpt_path: &Path, args: &DataArgs) -> Result<Loaded<T>> {
    let ckpt = load_checkpoint::<T>(ckpt_path)?;
    let dataset = load_dataset(&args.observations, &args.geometry, args.geometry_kind)?;
    if dataset.nodes() != ckpt.nodes {
        return Err(CliError::Config(format!("checkpoint has {} nodes, data has {}", ckpt.nodes, dataset.nodes())));
    }
    let split = ckpt.split.unwrap_or_default();
    let data = Prepared::new(dataset, &ckpt.config, &split, ckpt.norm.clone())?;
    let net = FlowNet::<T>::new(ckpt.config.clone(), &data.dist)?;
    net.check_params(&ckpt.params)?;
    Ok(Loaded { net, ckpt, data })
}

fn manifest_stamp(command: &str, ckpt_path: &Path, seed: u64) -> Result<Stamp> {
    Ok(Stamp::new(command, &fs::read(ckpt_path)?, Some(seed)))
}

#[derive(Debug, Clone, Serialize)]
pub struct EvalOutput {
    pub split: SplitPart,
    pub windows: usize,
    pub mae: f64,
    pub rmse: f64,
    pub stamp: Stamp,
}

fn eval_typed<T: Scalar>(ckpt_path: &Path, args: &DataArgs) -> Result<EvalOutput> {
    let run = load_run::<T>(ckpt_path, args)?;
    let windows = run.data.windows(args.split, &run.ckpt.config)?;
    let m = evaluate(&run.net, &run.ckpt.params, &windows, &run.data.stats, EVAL_BATCH)?;
    Ok(EvalOutput {
        split: args.split,
        windows: windows.len(),
        mae: m.mae,
        rmse: m.rmse,
        stamp: manifest_stamp("eval", ckpt_path, run.ckpt.config.seed)?,
    })
}

/// Denormalized MAE and RMSE of a checkpoint on one split of `args`.
pub fn eval(ckpt_path: &Path, args: &DataArgs) -> Result<EvalOutput> {
    match checkpoint_dtype(ckpt_path)? {
        DType::Fp32 => eval_typed::<f32>(ckpt_path, args),
        DType::Fp64 => eval_typed::<f64>(ckpt_path, args),
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SynthSummary {
    pub observations: PathBuf,
    pub coordinates: PathBuf,
    pub transfers: Option<PathBuf>,
    pub steps: usize,
    pub nodes: usize,
}

/// Generates a synthetic system from a JSON spec into `out`.
pub fn synth(spec_path: &Path, out: &Path, with_transfers: bool) -> Result<SynthSummary> {
    let bytes = fs::read(spec_path).map_err(|e| CliError::Missing(format!("{}: {e}", spec_path.display())))?;
    let spec: SynthSpec = serde_json::from_slice(&bytes).map_err(|e| CliError::Config(e.to_string()))?;
    let gen = synth_generate(&spec)?;
    fs::create_dir_all(out)?;
    let ds = &gen.dataset;
    let observations = out.join("observations.csv");
    let coordinates = out.join("coords.csv");
    write_observations(&observations, &ds.node_ids, &ds.observations)?;
    write_coordinates(&coordinates, &ds.node_ids, ds.coordinates().expect("synthetic data has coordinates"))?;
    let transfers = if with_transfers {
        let p = out.join("transfers.json");
        save_tensors(&p, &[("transfers", &gen.transfers), ("masses", &gen.masses)])?;
        Some(p)
    } else {
        None
    };
    Stamp::new("synth", &bytes, Some(spec.seed)).write(&out.join(STAMP_FILE))?;
    Ok(SynthSummary { observations, coordinates, transfers, steps: ds.steps(), nodes: ds.nodes() })
}

fn stamp_path(out: &Path) -> PathBuf {
    let mut name = out.file_name().unwrap_or_default().to_os_string();
    name.push(".stamp.json");
    out.with_file_name(name)
}

#[derive(Debug, Clone, Serialize)]
pub struct ExportSummary {
    pub out: PathBuf,
    pub rows: usize,
    pub cols: usize,
}

fn mask_stats_typed<T: Scalar>(ckpt_path: &Path, args: &DataArgs, out: &Path) -> Result<ExportSummary> {
    let run = load_run::<T>(ckpt_path, args)?;
    let windows = run.data.windows(args.split, &run.ckpt.config)?;
    let rows = export::mask_stats(&run.net, &run.ckpt.params, &windows, &run.data.dataset.node_ids)?;
    export::write_mask_stats(out, &rows)?;
    manifest_stamp("export mask-stats", ckpt_path, run.ckpt.config.seed)?.write(&stamp_path(out))?;
    Ok(ExportSummary { out: out.to_owned(), rows: rows.len(), cols: 4 })
}

/// Per-node, per-patch radius and out-degree CSV.
pub fn export_mask_stats(ckpt_path: &Path, args: &DataArgs, out: &Path) -> Result<ExportSummary> {
    match checkpoint_dtype(ckpt_path)? {
        DType::Fp32 => mask_stats_typed::<f32>(ckpt_path, args, out),
        DType::Fp64 => mask_stats_typed::<f64>(ckpt_path, args, out),
    }
}

fn allocation_typed<T: Scalar>(ckpt_path: &Path, args: &DataArgs, layer: Option<usize>, out: &Path) -> Result<ExportSummary> {
    let run = load_run::<T>(ckpt_path, args)?;
    let windows = run.data.windows(args.split, &run.ckpt.config)?;
    let m = export::allocation_average(&run.net, &run.ckpt.params, &windows, layer, EVAL_BATCH)?;
    export::write_matrix(out, &m)?;
    manifest_stamp("export allocation", ckpt_path, run.ckpt.config.seed)?.write(&stamp_path(out))?;
    Ok(ExportSummary { out: out.to_owned(), rows: m.shape()[0], cols: m.shape()[1] })
}

/// Averaged `N × N` allocation matrix CSV; `layer` restricts it to one flow layer.
pub fn export_allocation(ckpt_path: &Path, args: &DataArgs, layer: Option<usize>, out: &Path) -> Result<ExportSummary> {
    match checkpoint_dtype(ckpt_path)? {
        DType::Fp32 => allocation_typed::<f32>(ckpt_path, args, layer, out),
        DType::Fp64 => allocation_typed::<f64>(ckpt_path, args, layer, out),
    }
}
