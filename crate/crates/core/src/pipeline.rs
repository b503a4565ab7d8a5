//! End-to-end workflow: network assembly, training with early stopping,
//! crossplot evaluation, sliding-window inversion and misfit reports.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dataset::{
    feature_rows, model_from_raw, Dataset, DatasetError, Normalization, TargetScaler, N_TARGETS, TARGET_NAMES,
};
use crate::formation::{local_three_layer, FormationModel, Range, TrajectoryPoint};
use crate::instrument::{simulate_sets, wrap_degrees, ChannelSet, InstrumentError, Instruments, MeasurementLog};
use crate::nn::{l2_loss, Init, LayerSpec, Network, NetworkSpec, NnError, Optimizer, OptimizerConfig, Padding, Tensor};

pub const MODEL_FILE: &str = "model.toml";
const EVAL_BATCH: usize = 512;

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("the {0} split is empty")]
    EmptySplit(&'static str),
    #[error("training diverged: non-finite loss in epoch {epoch}, batch {batch}")]
    Divergence { epoch: usize, batch: usize },
    #[error("channel mismatch: {0}")]
    ChannelMismatch(String),
    #[error("{0}")]
    Input(String),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error("forward simulation at position {position}: {source}")]
    Forward {
        position: usize,
        #[source]
        source: InstrumentError,
    },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed {file}: {reason}")]
    Format { file: String, reason: String },
}

pub type Result<T> = std::result::Result<T, PipelineError>;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> PipelineError {
    let path = path.to_path_buf();
    move |source| PipelineError::Io { path, source }
}

/// Hyperparameters of the LSTM + residual Conv1D network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkConfig {
    pub recurrent_output_size: usize,
    pub nb_filter: usize,
    pub pool_length: usize,
    pub kernel_size: usize,
    pub num_outputs: usize,
    /// `(positions, channels)`; taken from the dataset when absent.
    pub input_shape: Option<[usize; 2]>,
    pub optimizer: OptimizerConfig,
    pub patience: usize,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self {
            recurrent_output_size: 64,
            nb_filter: 32,
            pool_length: 2,
            kernel_size: 3,
            num_outputs: N_TARGETS,
            input_shape: None,
            optimizer: OptimizerConfig::default(),
            patience: 5,
        }
    }
}

impl NetworkConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(PipelineError::Config(m));
        if self.recurrent_output_size == 0 || self.nb_filter == 0 || self.pool_length == 0 || self.num_outputs == 0 {
            return bad("network sizes must be positive".into());
        }
        if self.recurrent_output_size % self.pool_length.pow(3) != 0 {
            return bad(format!(
                "recurrent_output_size {} is not divisible by pool_length^3 = {}",
                self.recurrent_output_size,
                self.pool_length.pow(3)
            ));
        }
        if self.kernel_size % 2 == 0 {
            return bad(format!("kernel_size {} must be odd", self.kernel_size));
        }
        if let Some([t, c]) = self.input_shape {
            if t == 0 || c == 0 {
                return bad("input_shape must be positive".into());
            }
        }
        self.optimizer.validate()?;
        Ok(())
    }

    fn conv(&self) -> LayerSpec {
        LayerSpec::Conv1d {
            filters: self.nb_filter,
            kernel_size: self.kernel_size,
            padding: Padding::Same,
            bias: true,
            init: Init::GlorotNormal,
        }
    }

    /// LSTM, reshape, three residual conv blocks with max pooling, flatten
    /// and a sigmoid dense output.
    pub fn layers(&self) -> Vec<LayerSpec> {
        let mut layers = vec![
            LayerSpec::Lstm {
                units: self.recurrent_output_size,
                return_sequences: false,
            },
            LayerSpec::Reshape {
                shape: vec![self.recurrent_output_size, 1],
            },
        ];
        for _ in 0..3 {
            layers.push(LayerSpec::Residual {
                body: vec![self.conv(), LayerSpec::Relu, self.conv(), LayerSpec::Relu],
            });
            layers.push(LayerSpec::MaxPool1d { pool: self.pool_length });
        }
        layers.extend([
            LayerSpec::Flatten,
            LayerSpec::Dense {
                units: self.num_outputs,
                init: Init::GlorotUniform,
            },
            LayerSpec::Sigmoid,
        ]);
        layers
    }

    pub fn spec(&self, seed: u64) -> Result<NetworkSpec> {
        self.validate()?;
        let [t, c] = self
            .input_shape
            .ok_or_else(|| PipelineError::Config("input_shape is not set".into()))?;
        let spec = NetworkSpec {
            input: vec![t, c],
            seed,
            layers: self.layers(),
        };
        spec.output_shape()?;
        Ok(spec)
    }
}

pub fn build_network(cfg: &NetworkConfig, seed: u64) -> Result<Network<f32>> {
    Ok(Network::new(cfg.spec(seed)?)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub network: NetworkConfig,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Seeds both initialization and the per-epoch shuffles.
    pub seed: u64,
    /// Stop as soon as the epoch's training loss falls below this value.
    pub target_loss: Option<f64>,
    pub lr_decay: Option<LrDecay>,
}

/// Multiplies the learning rate by `factor` whenever the validation loss
/// has not improved for `patience` epochs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LrDecay {
    pub factor: f64,
    pub patience: usize,
    pub min_lr: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            network: NetworkConfig::default(),
            batch_size: 128,
            max_epochs: 100,
            seed: 0,
            target_loss: None,
            lr_decay: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.max_epochs == 0 {
            return Err(PipelineError::Config("batch_size and max_epochs must be positive".into()));
        }
        if let Some(d) = self.lr_decay {
            if !(d.factor > 0.0 && d.factor < 1.0) || d.min_lr < 0.0 {
                return Err(PipelineError::Config(format!("invalid learning-rate decay {d:?}")));
            }
        }
        self.network.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean batch loss during the epoch; for epoch 0 the loss of the
    /// untrained network on the training split.
    pub train_loss: f64,
    pub val_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct History {
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub stopped_early: bool,
}

impl History {
    pub fn best(&self) -> Option<&EpochRecord> {
        self.epochs.iter().find(|e| e.epoch == self.best_epoch)
    }

    pub fn initial_val_loss(&self) -> Option<f64> {
        self.epochs.first().map(|e| e.val_loss)
    }
}

/// Everything needed to apply a trained network to new data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelMetadata {
    pub toolkit_version: String,
    pub train: TrainConfig,
    pub channel_sets: Vec<ChannelSet>,
    pub channel_names: Vec<String>,
    pub positions: usize,
    pub normalization: Normalization,
    pub scaler: TargetScaler,
    /// Tools the training data was simulated with.
    pub instruments: Instruments,
    /// SHA-256 over the training dataset's features and targets.
    pub dataset_fingerprint: String,
    pub history: History,
}

pub struct TrainedModel {
    pub meta: ModelMetadata,
    pub network: Network<f32>,
}

impl TrainedModel {
    pub fn save(&self, dir: &Path) -> Result<()> {
        self.network.save(dir)?;
        let text = toml::to_string_pretty(&self.meta).map_err(|e| PipelineError::Format {
            file: MODEL_FILE.into(),
            reason: e.to_string(),
        })?;
        let path = dir.join(MODEL_FILE);
        fs::write(&path, text).map_err(io_err(&path))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(MODEL_FILE);
        let text = fs::read_to_string(&path).map_err(io_err(&path))?;
        let meta: ModelMetadata = toml::from_str(&text).map_err(|e| PipelineError::Format {
            file: MODEL_FILE.into(),
            reason: e.to_string(),
        })?;
        let network = Network::load(dir)?;
        let model = Self { meta, network };
        model.check_consistency()?;
        Ok(model)
    }

    fn check_consistency(&self) -> Result<()> {
        let c = self.meta.channel_names.len();
        let ok = self.network.spec.input == [self.meta.positions, c]
            && self.meta.normalization.mean.len() == c
            && self.meta.normalization.std.len() == c;
        if ok {
            Ok(())
        } else {
            Err(PipelineError::Format {
                file: MODEL_FILE.into(),
                reason: "metadata does not match the network input".into(),
            })
        }
    }

    pub fn channels(&self) -> usize {
        self.meta.channel_names.len()
    }

    /// Scaled predictions in `[0, 1]` for already normalized windows
    /// `[n, T, C]`.
    pub fn predict_normalized(&mut self, features: Vec<f32>) -> Result<Vec<[f64; N_TARGETS]>> {
        let (t, c) = (self.meta.positions, self.channels());
        let n = features.len() / (t * c);
        let x = Tensor::new(vec![n, t, c], features)?;
        let y = self.network.predict(&x, EVAL_BATCH)?;
        let k = y.data.len() / n.max(1);
        if k != N_TARGETS {
            return Err(PipelineError::Config(format!("network emits {k} outputs, expected {N_TARGETS}")));
        }
        Ok(y
            .data
            .chunks_exact(N_TARGETS)
            .map(|r| std::array::from_fn(|j| r[j] as f64))
            .collect())
    }

    /// Physical-unit targets (log10 values and degrees) for raw windows.
    pub fn predict_raw(&mut self, mut features: Vec<f32>) -> Result<Vec<[f64; N_TARGETS]>> {
        self.meta.normalization.apply(&mut features);
        let scaled = self.predict_normalized(features)?;
        scaled
            .iter()
            .map(|s| self.meta.scaler.unscale_raw(s).map_err(PipelineError::from))
            .collect()
    }

    fn require_channels(&self, sets: &[ChannelSet], what: &str) -> Result<()> {
        if sets != self.meta.channel_sets.as_slice() {
            return Err(PipelineError::ChannelMismatch(format!(
                "model was trained on {:?} but the {what} holds {:?}",
                self.meta.channel_sets, sets
            )));
        }
        Ok(())
    }
}

pub fn dataset_fingerprint(ds: &Dataset) -> String {
    let mut h = Sha256::new();
    for v in ds.features.iter().chain(&ds.targets) {
        h.update(v.to_le_bytes());
    }
    hex::encode(h.finalize())
}

fn gather(ds_norm: &[f32], per: usize, idx: &[usize]) -> Vec<f32> {
    let mut out = Vec::with_capacity(idx.len() * per);
    for &i in idx {
        out.extend_from_slice(&ds_norm[i * per..(i + 1) * per]);
    }
    out
}

struct Batches<'a> {
    features: &'a [f32],
    targets: &'a [f32],
    per: usize,
    shape: [usize; 2],
}

impl Batches<'_> {
    fn tensors(&self, idx: &[usize]) -> Result<(Tensor<f32>, Tensor<f32>)> {
        let x = Tensor::new(vec![idx.len(), self.shape[0], self.shape[1]], gather(self.features, self.per, idx))?;
        let y = Tensor::new(vec![idx.len(), N_TARGETS], gather(self.targets, N_TARGETS, idx))?;
        Ok((x, y))
    }

    /// Mean per-sample loss over `idx`.
    fn loss(&self, net: &mut Network<f32>, idx: &[usize]) -> Result<f64> {
        let mut total = 0.0;
        for chunk in idx.chunks(EVAL_BATCH) {
            let (x, y) = self.tensors(chunk)?;
            let (l, _) = l2_loss(&net.forward(&x)?, &y)?;
            total += l as f64 * chunk.len() as f64;
        }
        Ok(total / idx.len() as f64)
    }
}

/// Trains on the dataset's own split.
pub fn train(cfg: &TrainConfig, ds: &Dataset) -> Result<TrainedModel> {
    let split = ds
        .split
        .as_ref()
        .ok_or_else(|| PipelineError::Config("dataset has no split; split it before training".into()))?;
    train_on(cfg, ds, &split.train, &split.val)
}

/// Mini-batch training on explicit index sets. Validation loss is tracked
/// per epoch and the parameters of the best epoch are returned.
pub fn train_on(cfg: &TrainConfig, ds: &Dataset, train_idx: &[usize], val_idx: &[usize]) -> Result<TrainedModel> {
    cfg.validate()?;
    if train_idx.is_empty() {
        return Err(PipelineError::EmptySplit("training"));
    }
    if val_idx.is_empty() {
        return Err(PipelineError::EmptySplit("validation"));
    }
    let (t, c) = (ds.positions(), ds.channels());
    let mut net_cfg = cfg.network.clone();
    match net_cfg.input_shape {
        Some(s) if s != [t, c] => {
            return Err(PipelineError::ChannelMismatch(format!(
                "network input_shape {s:?} but dataset windows are [{t}, {c}]"
            )))
        }
        _ => net_cfg.input_shape = Some([t, c]),
    }
    let normalization = ds.normalization()?.clone();
    let mut features = ds.features.clone();
    normalization.apply(&mut features);
    let batches = Batches {
        features: &features,
        targets: &ds.targets,
        per: t * c,
        shape: [t, c],
    };

    let mut net = build_network(&net_cfg, cfg.seed)?;
    let mut opt = Optimizer::new(net_cfg.optimizer)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order = train_idx.to_vec();

    let mut history = History::default();
    let val0 = batches.loss(&mut net, val_idx)?;
    history.epochs.push(EpochRecord {
        epoch: 0,
        train_loss: batches.loss(&mut net, train_idx)?,
        val_loss: val0,
    });
    let mut best = (val0, net.flat_params());
    let mut wait = 0;
    let mut stall = 0;
    for epoch in 1..=cfg.max_epochs {
        order.shuffle(&mut rng);
        let mut sum = 0.0;
        for (bi, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let (x, y) = batches.tensors(chunk)?;
            net.zero_grad();
            let pred = net.forward(&x)?;
            let (loss, grad) = l2_loss(&pred, &y)?;
            if !loss.is_finite() {
                return Err(PipelineError::Divergence { epoch, batch: bi });
            }
            net.backward(&grad)?;
            opt.step(net.params_mut())?;
            sum += loss as f64 * chunk.len() as f64;
        }
        let val = batches.loss(&mut net, val_idx)?;
        if !val.is_finite() {
            return Err(PipelineError::Divergence {
                epoch,
                batch: order.len().div_ceil(cfg.batch_size),
            });
        }
        let rec = EpochRecord {
            epoch,
            train_loss: sum / order.len() as f64,
            val_loss: val,
        };
        log::info!(
            "epoch {epoch}: train {:.5} val {:.5}",
            rec.train_loss,
            rec.val_loss
        );
        history.epochs.push(rec);
        if val < best.0 {
            best = (val, net.flat_params());
            history.best_epoch = epoch;
            wait = 0;
            stall = 0;
        } else {
            stall += 1;
            if let Some(d) = cfg.lr_decay {
                if stall >= d.patience {
                    let lr = (opt.learning_rate() * d.factor).max(d.min_lr);
                    log::debug!("epoch {epoch}: learning rate {lr:e}");
                    opt.set_learning_rate(lr);
                    stall = 0;
                }
            }
            wait += 1;
            if wait > net_cfg.patience {
                history.stopped_early = true;
                break;
            }
        }
        if cfg.target_loss.is_some_and(|target| rec.train_loss < target) {
            break;
        }
    }
    net.set_flat_params(&best.1)?;
    let mut train_cfg = cfg.clone();
    train_cfg.network = net_cfg;
    Ok(TrainedModel {
        meta: ModelMetadata {
            toolkit_version: env!("CARGO_PKG_VERSION").into(),
            train: train_cfg,
            channel_sets: ds.manifest.channel_sets.clone(),
            channel_names: ds.manifest.channel_names.clone(),
            positions: t,
            normalization,
            scaler: ds.manifest.scaler.clone(),
            instruments: ds.manifest.instruments.clone(),
            dataset_fingerprint: dataset_fingerprint(ds),
            history,
        },
        network: net,
    })
}

/// Empirical percentile with linear interpolation between order
/// statistics. `sorted` must be ascending and non-empty.
pub fn percentile(sorted: &[f64], q: f64) -> f64 {
    let pos = q / 100.0 * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossplotBin {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
    pub p10: f64,
    pub p50: f64,
    pub p90: f64,
    /// Set when the bin absorbed neighbours holding fewer than two samples.
    pub merged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterCrossplot {
    pub name: String,
    pub range: Range,
    pub truth: Vec<f64>,
    pub prediction: Vec<f64>,
    pub mae: f64,
    pub rmse: f64,
    pub bins: Vec<CrossplotBin>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossplotReport {
    pub channel_sets: Vec<ChannelSet>,
    pub n_samples: usize,
    pub parameters: Vec<ParameterCrossplot>,
}

impl CrossplotReport {
    pub fn parameter(&self, name: &str) -> Option<&ParameterCrossplot> {
        self.parameters.iter().find(|p| p.name == name)
    }

    /// One JSON record per scatter point and per bin.
    pub fn write_jsonl(&self, points: &Path, bins: &Path) -> Result<()> {
        #[derive(Serialize)]
        struct Point<'a> {
            parameter: &'a str,
            truth: f64,
            prediction: f64,
        }
        #[derive(Serialize)]
        struct Bin<'a> {
            parameter: &'a str,
            #[serde(flatten)]
            bin: &'a CrossplotBin,
        }
        write_jsonl(
            points,
            self.parameters.iter().flat_map(|p| {
                p.truth.iter().zip(&p.prediction).map(|(&truth, &prediction)| Point {
                    parameter: &p.name,
                    truth,
                    prediction,
                })
            }),
        )?;
        write_jsonl(
            bins,
            self.parameters
                .iter()
                .flat_map(|p| p.bins.iter().map(|bin| Bin { parameter: &p.name, bin })),
        )
    }
}

/// Bins `truth` into `bins` equal-width intervals over `range` and takes
/// percentiles of the matching predictions. Runs of bins with fewer than
/// two samples are merged into the following bin (the last run into the
/// preceding one).
pub fn crossplot_bins(range: Range, truth: &[f64], prediction: &[f64], bins: usize) -> Result<Vec<CrossplotBin>> {
    if bins == 0 {
        return Err(PipelineError::Config("crossplot needs at least one bin".into()));
    }
    if truth.len() < 2 || truth.len() != prediction.len() {
        return Err(PipelineError::Input(format!(
            "crossplot needs at least two paired samples, got {} truths and {} predictions",
            truth.len(),
            prediction.len()
        )));
    }
    let width = range.width() / bins as f64;
    let mut members: Vec<Vec<f64>> = vec![Vec::new(); bins];
    for (&t, &p) in truth.iter().zip(prediction) {
        let k = if width > 0.0 {
            (((t - range.min) / width).floor().max(0.0) as usize).min(bins - 1)
        } else {
            0
        };
        members[k].push(p);
    }
    let edge = |k: usize| range.min + width * k as f64;
    // (first bin, one past last bin, predictions)
    let mut groups: Vec<(usize, usize, Vec<f64>)> = Vec::new();
    let mut pending: Option<(usize, Vec<f64>)> = None;
    for (k, m) in members.into_iter().enumerate() {
        let (start, mut acc) = pending.take().unwrap_or((k, Vec::new()));
        acc.extend(m);
        if acc.len() >= 2 {
            groups.push((start, k + 1, acc));
        } else {
            pending = Some((start, acc));
        }
    }
    if let Some((_, rest)) = pending {
        let last = groups.last_mut().expect("at least two samples exist");
        last.1 = bins;
        last.2.extend(rest);
    }
    Ok(groups
        .into_iter()
        .map(|(a, b, mut v)| {
            v.sort_by(f64::total_cmp);
            CrossplotBin {
                lo: edge(a),
                hi: edge(b),
                count: v.len(),
                p10: percentile(&v, 10.0),
                p50: percentile(&v, 50.0),
                p90: percentile(&v, 90.0),
                merged: b - a > 1,
            }
        })
        .collect())
}

pub fn parameter_crossplot(
    name: &str,
    range: Range,
    truth: Vec<f64>,
    prediction: Vec<f64>,
    bins: usize,
) -> Result<ParameterCrossplot> {
    let bins = crossplot_bins(range, &truth, &prediction, bins)?;
    let n = truth.len() as f64;
    let mae = truth.iter().zip(&prediction).map(|(a, b)| (a - b).abs()).sum::<f64>() / n;
    let rmse = (truth.iter().zip(&prediction).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / n).sqrt();
    Ok(ParameterCrossplot {
        name: name.into(),
        range,
        truth,
        prediction,
        mae,
        rmse,
        bins,
    })
}

/// Predicts the given samples and compares with their true parameters in
/// physical units.
pub fn evaluate_crossplot(model: &mut TrainedModel, ds: &Dataset, indices: &[usize], bins: usize) -> Result<CrossplotReport> {
    model.require_channels(&ds.manifest.channel_sets, "dataset")?;
    if ds.positions() != model.meta.positions {
        return Err(PipelineError::ChannelMismatch(format!(
            "model windows have {} positions, dataset {}",
            model.meta.positions,
            ds.positions()
        )));
    }
    if indices.is_empty() {
        return Err(PipelineError::EmptySplit("test"));
    }
    let per = ds.positions() * ds.channels();
    let feats = gather(&ds.features, per, indices);
    let preds = model.predict_raw(feats)?;
    let parameters = (0..N_TARGETS)
        .map(|k| {
            let truth = indices.iter().map(|&i| ds.raw_targets(i)[k] as f64).collect();
            let pred = preds.iter().map(|p| p[k]).collect();
            parameter_crossplot(TARGET_NAMES[k], model.meta.scaler.ranges[k], truth, pred, bins)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(CrossplotReport {
        channel_sets: model.meta.channel_sets.clone(),
        n_samples: indices.len(),
        parameters,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InversionRecord {
    /// Index of the first log position in the window.
    pub window_start: usize,
    /// Index of the position the prediction is anchored at (window end).
    pub anchor_index: usize,
    pub anchor: TrajectoryPoint,
    /// Log10 resistivities, log10 anisotropy, log10 distances, dip.
    pub raw: [f64; N_TARGETS],
    pub formation: FormationModel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InversionResult {
    pub window: usize,
    pub channel_sets: Vec<ChannelSet>,
    pub predictions: Vec<InversionRecord>,
}

/// Slides a window of the model's length along the log with stride one and
/// predicts one local formation per window, anchored at its last position.
pub fn invert(model: &mut TrainedModel, log: &MeasurementLog, trajectory: &[TrajectoryPoint]) -> Result<InversionResult> {
    let sets = model.meta.channel_sets.clone();
    let missing: Vec<String> = sets
        .iter()
        .filter(|s| !log.channel_sets.contains(s))
        .map(|s| s.to_string())
        .collect();
    if !missing.is_empty() {
        return Err(PipelineError::ChannelMismatch(format!(
            "log lacks channel sets required by the model: {}",
            missing.join(", ")
        )));
    }
    let log = log.select(&sets).expect("presence checked above");
    let t = model.meta.positions;
    if log.len() != trajectory.len() {
        return Err(PipelineError::Input(format!(
            "log has {} rows but the trajectory {} positions",
            log.len(),
            trajectory.len()
        )));
    }
    if log.len() < t {
        return Err(PipelineError::Input(format!("log has {} positions, the model needs at least {t}", log.len())));
    }
    let windows = log.len() - t + 1;
    let mut feats = Vec::with_capacity(windows * t * model.channels());
    for s in 0..windows {
        let origin = trajectory[s];
        let local: Vec<TrajectoryPoint> = trajectory[s..s + t]
            .iter()
            .map(|p| TrajectoryPoint {
                horizontal: p.horizontal - origin.horizontal,
                tvd: p.tvd - origin.tvd,
                dip: p.dip,
            })
            .collect();
        feats.extend(feature_rows(&log.rows[s..s + t], &local));
    }
    let raw = model.predict_raw(feats)?;
    let predictions = raw
        .into_iter()
        .enumerate()
        .map(|(s, raw)| InversionRecord {
            window_start: s,
            anchor_index: s + t - 1,
            anchor: trajectory[s + t - 1],
            raw,
            formation: model_from_raw(&raw),
        })
        .collect();
    Ok(InversionResult {
        window: t,
        channel_sets: sets,
        predictions,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MisfitRow {
    pub anchor_index: usize,
    pub exact: Vec<f64>,
    pub predicted: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelMisfit {
    pub channel: String,
    pub rms: f64,
    pub max_abs: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SetMisfit {
    pub channel_set: ChannelSet,
    pub attenuation_rms_db: f64,
    pub phase_rms_deg: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MisfitReport {
    pub channel_names: Vec<String>,
    pub rows: Vec<MisfitRow>,
    pub channels: Vec<ChannelMisfit>,
    pub sets: Vec<SetMisfit>,
}

pub fn rms(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    (values.iter().map(|v| v * v).sum::<f64>() / values.len() as f64).sqrt()
}

/// Re-simulates every predicted formation at its anchor and compares with
/// the measured log. Phase residuals are wrapped to (−180°, 180°].
pub fn misfit_report(
    instruments: &Instruments,
    predictions: &[InversionRecord],
    log: &MeasurementLog,
    sets: &[ChannelSet],
) -> Result<MisfitReport> {
    let missing: Vec<String> = sets
        .iter()
        .filter(|s| !log.channel_sets.contains(s))
        .map(|s| s.to_string())
        .collect();
    if !missing.is_empty() {
        return Err(PipelineError::ChannelMismatch(format!("log lacks {}", missing.join(", "))));
    }
    let log = log.select(sets).expect("presence checked above");
    let rows = predictions
        .par_iter()
        .map(|p| {
            let exact = log
                .rows
                .get(p.anchor_index)
                .ok_or_else(|| PipelineError::Input(format!("prediction anchored past the log end at {}", p.anchor_index)))?
                .clone();
            let local = local_three_layer(&p.formation, (p.anchor.horizontal, p.anchor.tvd)).map_err(|e| {
                PipelineError::Forward {
                    position: p.anchor_index,
                    source: InstrumentError::Formation(e),
                }
            })?;
            let samples = simulate_sets(instruments, &local, &p.anchor, sets).map_err(|source| PipelineError::Forward {
                position: p.anchor_index,
                source,
            })?;
            Ok(MisfitRow {
                anchor_index: p.anchor_index,
                exact,
                predicted: samples.iter().flat_map(|s| [s.attenuation, s.phase_difference]).collect(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let names = log.channel_names();
    let residual = |row: &MisfitRow, j: usize| {
        let d = row.predicted[j] - row.exact[j];
        if j % 2 == 1 {
            wrap_degrees(d)
        } else {
            d
        }
    };
    let per_channel: Vec<Vec<f64>> = (0..names.len())
        .map(|j| rows.iter().map(|r| residual(r, j)).collect())
        .collect();
    let channels = names
        .iter()
        .zip(&per_channel)
        .map(|(n, r)| ChannelMisfit {
            channel: n.clone(),
            rms: rms(r),
            max_abs: r.iter().fold(0.0, |m, v| m.max(v.abs())),
        })
        .collect();
    let set_rows = sets
        .iter()
        .enumerate()
        .map(|(k, &set)| SetMisfit {
            channel_set: set,
            attenuation_rms_db: rms(&per_channel[2 * k]),
            phase_rms_deg: rms(&per_channel[2 * k + 1]),
        })
        .collect();
    Ok(MisfitReport {
        channel_names: names,
        rows,
        channels,
        sets: set_rows,
    })
}

/// One inversion record per line, with the re-simulated channels when a
/// misfit report is given.
pub fn write_inversion_jsonl(path: &Path, result: &InversionResult, misfit: Option<&MisfitReport>) -> Result<()> {
    #[derive(Serialize)]
    struct Line<'a> {
        #[serde(flatten)]
        record: &'a InversionRecord,
        #[serde(skip_serializing_if = "Option::is_none")]
        exact: Option<&'a [f64]>,
        #[serde(skip_serializing_if = "Option::is_none")]
        predicted: Option<&'a [f64]>,
    }
    write_jsonl(
        path,
        result.predictions.iter().enumerate().map(|(i, record)| {
            let row = misfit.and_then(|m| m.rows.get(i));
            Line {
                record,
                exact: row.map(|r| r.exact.as_slice()),
                predicted: row.map(|r| r.predicted.as_slice()),
            }
        }),
    )
}

pub fn write_jsonl<T: Serialize>(path: &Path, items: impl IntoIterator<Item = T>) -> Result<()> {
    let file = fs::File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(file);
    for item in items {
        let line = serde_json::to_string(&item).map_err(|e| PipelineError::Format {
            file: path.display().to_string(),
            reason: e.to_string(),
        })?;
        writeln!(w, "{line}").map_err(io_err(path))?;
    }
    w.flush().map_err(io_err(path))
}
