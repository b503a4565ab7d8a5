//! Supervised pairs (measurements + trajectory → seven scaled parameters):
//! generation, splitting, target scaling, normalization and storage.
//!
//! On disk a dataset is a directory holding `manifest.toml` and one raw
//! little-endian array per field, each listed in the manifest with its
//! shape and SHA-256.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};

use rand::seq::SliceRandom;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::em::EmError;
use crate::formation::{
    sample_formation, sample_trajectory, FormationError, FormationModel, Range, SamplerConfig, TrajectoryPoint,
};
use crate::instrument::{channel_names, normalize_sets, simulate_window, ChannelSet, InstrumentError, Instruments};

pub const SCHEMA_VERSION: u32 = 1;
pub const N_TARGETS: usize = 7;
/// Trajectory columns appended to the measurement channels.
pub const TRAJECTORY_CHANNELS: [&str; 3] = ["horizontal_m", "tvd_m", "dip_deg"];
pub const TARGET_NAMES: [&str; N_TARGETS] = [
    "log10_rho_h",
    "log10_anisotropy",
    "log10_rho_u",
    "log10_rho_l",
    "log10_d_u",
    "log10_d_l",
    "beta_deg",
];
/// Largest tolerated fraction of skipped samples.
pub const MAX_SKIP_FRACTION: f64 = 0.01;
const NUDGE_ATTEMPTS: usize = 3;
const NUDGE_STEP: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("invalid request: {0}")]
    Invalid(String),
    #[error(transparent)]
    Formation(#[from] FormationError),
    #[error("{skipped} of {requested} samples failed to simulate (limit {:.0}%); first failure: {first}", MAX_SKIP_FRACTION * 100.0)]
    TooManySkips {
        skipped: usize,
        requested: usize,
        first: String,
    },
    #[error("{name} = {value} outside its range [{min}, {max}]")]
    Range {
        name: &'static str,
        value: f64,
        min: f64,
        max: f64,
    },
    #[error("split error: {0}")]
    Split(String),
    #[error("channel mismatch: {0}")]
    ChannelMismatch(String),
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("checksum mismatch in {file}")]
    Checksum { file: String },
    #[error("{file} is truncated or oversized: expected {expected} bytes, found {found}")]
    Truncated {
        file: String,
        expected: usize,
        found: usize,
    },
    #[error("unsupported dataset schema version {found} (expected {expected})")]
    Schema { found: u32, expected: u32 },
    #[error("malformed manifest: {0}")]
    Manifest(String),
    #[error("dataset invariant violated: {0}")]
    Corrupt(String),
}

pub type Result<T> = std::result::Result<T, DatasetError>;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DatasetError + '_ {
    move |source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Min-max scaling of the seven parameters on their log/angle scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetScaler {
    pub ranges: [Range; N_TARGETS],
}

impl Default for TargetScaler {
    fn default() -> Self {
        Self::from_config(&SamplerConfig::default())
    }
}

impl TargetScaler {
    pub fn from_config(cfg: &SamplerConfig) -> Self {
        Self {
            ranges: [
                cfg.log_rho_h_bounds(),
                cfg.log_anisotropy,
                cfg.log_rho_u,
                cfg.log_rho_l,
                cfg.log_d_u,
                cfg.log_d_l,
                cfg.beta,
            ],
        }
    }

    /// Unscaled targets: log10 resistivities, log10 anisotropy, log10
    /// distances and dip in degrees.
    pub fn raw(p: &FormationModel) -> [f64; N_TARGETS] {
        [
            p.rho_h.log10(),
            p.anisotropy().log10(),
            p.rho_u.log10(),
            p.rho_l.log10(),
            p.d_u.log10(),
            p.d_l.log10(),
            p.beta,
        ]
    }

    pub fn scale(&self, p: &FormationModel) -> Result<[f64; N_TARGETS]> {
        self.scale_raw(&Self::raw(p))
    }

    pub fn scale_raw(&self, raw: &[f64; N_TARGETS]) -> Result<[f64; N_TARGETS]> {
        let mut out = [0.0; N_TARGETS];
        for (k, r) in self.ranges.iter().enumerate() {
            if !r.contains_with_slack(raw[k], 1e-9) || !raw[k].is_finite() {
                return Err(DatasetError::Range {
                    name: TARGET_NAMES[k],
                    value: raw[k],
                    min: r.min,
                    max: r.max,
                });
            }
            out[k] = if r.width() > 0.0 {
                ((raw[k] - r.min) / r.width()).clamp(0.0, 1.0)
            } else {
                0.0
            };
        }
        Ok(out)
    }

    pub fn unscale_raw(&self, v: &[f64]) -> Result<[f64; N_TARGETS]> {
        if v.len() != N_TARGETS {
            return Err(DatasetError::Invalid(format!("expected {N_TARGETS} targets, got {}", v.len())));
        }
        let mut raw = [0.0; N_TARGETS];
        for (k, r) in self.ranges.iter().enumerate() {
            if !(v[k] >= -1e-9 && v[k] <= 1.0 + 1e-9) {
                return Err(DatasetError::Range {
                    name: TARGET_NAMES[k],
                    value: v[k],
                    min: 0.0,
                    max: 1.0,
                });
            }
            raw[k] = r.min + v[k].clamp(0.0, 1.0) * r.width();
        }
        Ok(raw)
    }

    pub fn unscale(&self, v: &[f64]) -> Result<FormationModel> {
        Ok(model_from_raw(&self.unscale_raw(v)?))
    }
}

pub fn model_from_raw(raw: &[f64; N_TARGETS]) -> FormationModel {
    let rho_h = 10f64.powf(raw[0]);
    FormationModel {
        rho_h,
        rho_v: rho_h * 10f64.powf(raw[1]),
        rho_u: 10f64.powf(raw[2]),
        rho_l: 10f64.powf(raw[3]),
        d_u: 10f64.powf(raw[4]),
        d_l: 10f64.powf(raw[5]),
        beta: raw[6],
    }
}

/// Per-channel z-score statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Normalization {
    /// Statistics over every position of the given samples.
    pub fn fit(ds: &Dataset, indices: &[usize]) -> Result<Self> {
        let c = ds.channels();
        if indices.is_empty() {
            return Err(DatasetError::Invalid("normalization needs at least one sample".into()));
        }
        let mut sum = vec![0.0f64; c];
        let mut sq = vec![0.0f64; c];
        let mut count = 0usize;
        for &i in indices {
            for row in ds.features(i).chunks_exact(c) {
                for (k, &v) in row.iter().enumerate() {
                    sum[k] += v as f64;
                }
                count += 1;
            }
        }
        let mean: Vec<f64> = sum.iter().map(|s| s / count as f64).collect();
        for &i in indices {
            for row in ds.features(i).chunks_exact(c) {
                for (k, &v) in row.iter().enumerate() {
                    let d = v as f64 - mean[k];
                    sq[k] += d * d;
                }
            }
        }
        let std = sq
            .iter()
            .map(|s| {
                let v = (s / count as f64).sqrt();
                if v > 1e-12 {
                    v
                } else {
                    1.0
                }
            })
            .collect();
        Ok(Self { mean, std })
    }

    pub fn apply(&self, row: &mut [f32]) {
        let c = self.mean.len();
        for chunk in row.chunks_exact_mut(c) {
            for (k, v) in chunk.iter_mut().enumerate() {
                *v = ((*v as f64 - self.mean[k]) / self.std[k]) as f32;
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub seed: u64,
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

/// Random disjoint split. Validation and test sizes are `floor(n·f)`; the
/// remainder goes to training.
pub fn split(n: usize, fractions: [f64; 3], seed: u64) -> Result<Split> {
    if n < 3 {
        return Err(DatasetError::Split(format!("need at least 3 samples, have {n}")));
    }
    if fractions.iter().any(|f| !(0.0..=1.0).contains(f)) || (fractions.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(DatasetError::Split(format!("fractions {fractions:?} must be in [0,1] and sum to 1")));
    }
    let n_val = (n as f64 * fractions[1] + 1e-9).floor() as usize;
    let n_test = (n as f64 * fractions[2] + 1e-9).floor() as usize;
    let n_train = n - n_val - n_test;
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut train = idx[..n_train].to_vec();
    let mut val = idx[n_train..n_train + n_val].to_vec();
    let mut test = idx[n_train + n_val..].to_vec();
    train.sort_unstable();
    val.sort_unstable();
    test.sort_unstable();
    Ok(Split { seed, train, val, test })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileEntry {
    pub file: String,
    pub dtype: String,
    pub shape: Vec<usize>,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub schema_version: u32,
    pub n_samples: usize,
    pub positions: usize,
    pub channel_sets: Vec<ChannelSet>,
    pub channel_names: Vec<String>,
    pub target_names: Vec<String>,
    pub scaler: TargetScaler,
    pub sampler: SamplerConfig,
    pub instruments: Instruments,
    pub requested: usize,
    pub skipped: Vec<u64>,
    #[serde(default)]
    pub split: Option<SplitInfo>,
    #[serde(default)]
    pub normalization: Option<Normalization>,
    #[serde(default)]
    pub files: BTreeMap<String, FileEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitInfo {
    pub seed: u64,
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

impl Manifest {
    pub fn channels(&self) -> usize {
        self.channel_names.len()
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("manifest serializes")
    }
}

/// One sample's features `[T × C]`, scaled and raw targets.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub features: Vec<f32>,
    pub targets: [f32; N_TARGETS],
    pub raw_targets: [f32; N_TARGETS],
}

/// In-memory dataset, features stored unnormalized.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub manifest: Manifest,
    /// `[n, T, C]` row-major.
    pub features: Vec<f32>,
    /// `[n, 7]` in `[0, 1]`.
    pub targets: Vec<f32>,
    /// `[n, 7]` in log/angle units.
    pub raw_targets: Vec<f32>,
    /// Generator index of every stored sample.
    pub sample_index: Vec<u64>,
    pub split: Option<Split>,
}

/// Assembles `[channels..., horizontal, tvd, dip]` rows.
pub fn feature_rows(measurements: &[Vec<f64>], positions: &[TrajectoryPoint]) -> Vec<f32> {
    measurements
        .iter()
        .zip(positions)
        .flat_map(|(m, p)| {
            m.iter()
                .copied()
                .chain([p.horizontal, p.tvd, p.dip])
                .map(|v| v as f32)
                .collect::<Vec<_>>()
        })
        .collect()
}

/// Simulates generator index `index`: the formation and trajectory drawn
/// from its own random stream, then the window. Boundary collisions are
/// retried with the trajectory nudged down by a micrometre.
pub fn simulate_sample(
    index: u64,
    cfg: &SamplerConfig,
    instruments: &Instruments,
    sets: &[ChannelSet],
) -> std::result::Result<(FormationModel, Vec<TrajectoryPoint>, Vec<f32>), InstrumentError> {
    let mut rng = cfg.rng_for(index);
    let formation = sample_formation(cfg, &mut rng);
    let trajectory = sample_trajectory(cfg, &mut rng);
    let mut positions = trajectory.positions.clone();
    let anchor = *positions.last().expect("non-empty trajectory");
    let mut attempt = 0;
    loop {
        let result = if attempt == 0 {
            simulate_window(instruments, &formation, &positions, sets, cfg.anchor)
        } else {
            // keep the anchor where it was sampled, move the tool
            crate::instrument::simulate_window_anchored(instruments, &formation, &positions, sets, cfg.anchor, anchor)
        };
        match result {
            Ok(log) => {
                let feats = feature_rows(&log.rows, &trajectory.positions);
                if !feats.iter().all(|v| v.is_finite()) {
                    return Err(InstrumentError::SingularField(format!("non-finite channel in sample {index}")));
                }
                return Ok((formation, trajectory.positions, feats));
            }
            Err(InstrumentError::Forward {
                source: EmError::BoundaryCollision { .. },
                ..
            }) if attempt < NUDGE_ATTEMPTS => {
                attempt += 1;
                for p in positions.iter_mut() {
                    p.tvd += NUDGE_STEP;
                }
            }
            Err(e) => return Err(e),
        }
    }
}

/// Generates `n` samples in parallel. Sample `k` depends only on the seed
/// and `k`. Failing samples are skipped; more than 1% aborts.
pub fn generate(n: usize, cfg: &SamplerConfig, sets: &[ChannelSet], instruments: &Instruments) -> Result<Dataset> {
    if n == 0 {
        return Err(DatasetError::Invalid("sample count must be at least 1".into()));
    }
    cfg.validate()?;
    let sets = normalize_sets(sets).map_err(|e| DatasetError::Invalid(e.into()))?;
    let scaler = TargetScaler::from_config(cfg);
    let done = AtomicUsize::new(0);
    let tick = (n / 20).max(1);
    let results: Vec<_> = (0..n as u64)
        .into_par_iter()
        .map(|k| {
            let r = simulate_sample(k, cfg, instruments, &sets);
            let d = done.fetch_add(1, Ordering::Relaxed) + 1;
            if d % tick == 0 {
                log::info!("generated {d}/{n} samples");
            }
            r
        })
        .collect();

    let t = cfg.positions;
    let c = 2 * sets.len() + TRAJECTORY_CHANNELS.len();
    let mut features = Vec::with_capacity(n * t * c);
    let mut targets = Vec::with_capacity(n * N_TARGETS);
    let mut raw_targets = Vec::with_capacity(n * N_TARGETS);
    let mut sample_index = Vec::with_capacity(n);
    let mut skipped = Vec::new();
    let mut first_failure = None;
    for (k, r) in results.into_iter().enumerate() {
        match r {
            Ok((formation, _, feats)) => {
                let raw = TargetScaler::raw(&formation);
                let scaled = scaler.scale_raw(&raw)?;
                features.extend_from_slice(&feats);
                targets.extend(scaled.iter().map(|&v| v as f32));
                raw_targets.extend(raw.iter().map(|&v| v as f32));
                sample_index.push(k as u64);
            }
            Err(e) => {
                log::warn!("sample {k} skipped: {e}");
                first_failure.get_or_insert_with(|| e.to_string());
                skipped.push(k as u64);
            }
        }
    }
    if skipped.len() as f64 > MAX_SKIP_FRACTION * n as f64 {
        return Err(DatasetError::TooManySkips {
            skipped: skipped.len(),
            requested: n,
            first: first_failure.unwrap_or_default(),
        });
    }
    if !skipped.is_empty() {
        log::warn!("{} of {n} samples skipped", skipped.len());
    }
    let mut names = channel_names(&sets);
    names.extend(TRAJECTORY_CHANNELS.iter().map(|s| s.to_string()));
    let manifest = Manifest {
        schema_version: SCHEMA_VERSION,
        n_samples: sample_index.len(),
        positions: t,
        channel_sets: sets,
        channel_names: names,
        target_names: TARGET_NAMES.iter().map(|s| s.to_string()).collect(),
        scaler,
        sampler: cfg.clone(),
        instruments: instruments.clone(),
        requested: n,
        skipped,
        split: None,
        normalization: None,
        files: BTreeMap::new(),
    };
    Ok(Dataset {
        manifest,
        features,
        targets,
        raw_targets,
        sample_index,
        split: None,
    })
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.manifest.n_samples
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn positions(&self) -> usize {
        self.manifest.positions
    }

    pub fn channels(&self) -> usize {
        self.manifest.channels()
    }

    pub fn features(&self, i: usize) -> &[f32] {
        let w = self.positions() * self.channels();
        &self.features[i * w..(i + 1) * w]
    }

    pub fn targets(&self, i: usize) -> &[f32] {
        &self.targets[i * N_TARGETS..(i + 1) * N_TARGETS]
    }

    pub fn raw_targets(&self, i: usize) -> &[f32] {
        &self.raw_targets[i * N_TARGETS..(i + 1) * N_TARGETS]
    }

    pub fn sample(&self, i: usize) -> Sample {
        let mut targets = [0.0; N_TARGETS];
        let mut raw = [0.0; N_TARGETS];
        targets.copy_from_slice(self.targets(i));
        raw.copy_from_slice(self.raw_targets(i));
        Sample {
            features: self.features(i).to_vec(),
            targets,
            raw_targets: raw,
        }
    }

    /// Splits with the given fractions and fits normalization statistics
    /// on the training part.
    pub fn split_and_normalize(&mut self, fractions: [f64; 3], seed: u64) -> Result<()> {
        let s = split(self.len(), fractions, seed)?;
        let norm = Normalization::fit(self, &s.train)?;
        self.manifest.split = Some(SplitInfo {
            seed,
            train: s.train.len(),
            val: s.val.len(),
            test: s.test.len(),
        });
        self.manifest.normalization = Some(norm);
        self.split = Some(s);
        Ok(())
    }

    pub fn normalization(&self) -> Result<&Normalization> {
        self.manifest
            .normalization
            .as_ref()
            .ok_or_else(|| DatasetError::Invalid("dataset has no normalization statistics; split it first".into()))
    }

    /// Normalized features of sample `i`.
    pub fn normalized_features(&self, i: usize) -> Result<Vec<f32>> {
        let mut f = self.features(i).to_vec();
        self.normalization()?.apply(&mut f);
        Ok(f)
    }

    /// Keeps only the measurement columns of `sets` (plus the trajectory).
    /// Split and normalization statistics are carried over column-wise.
    pub fn select_channels(&self, sets: &[ChannelSet]) -> Result<Dataset> {
        let sets = normalize_sets(sets).map_err(|e| DatasetError::Invalid(e.into()))?;
        let mut cols = Vec::new();
        for set in &sets {
            let k = self
                .manifest
                .channel_sets
                .iter()
                .position(|s| s == set)
                .ok_or_else(|| {
                    DatasetError::ChannelMismatch(format!(
                        "{set} requested but dataset holds {:?}",
                        self.manifest.channel_sets
                    ))
                })?;
            cols.extend([2 * k, 2 * k + 1]);
        }
        let base = 2 * self.manifest.channel_sets.len();
        cols.extend(base..base + TRAJECTORY_CHANNELS.len());
        let c = self.channels();
        let features = self
            .features
            .chunks_exact(c)
            .flat_map(|row| cols.iter().map(move |&j| row[j]))
            .collect();
        let mut manifest = self.manifest.clone();
        manifest.channel_names = cols.iter().map(|&j| self.manifest.channel_names[j].clone()).collect();
        manifest.channel_sets = sets;
        manifest.files.clear();
        if let Some(n) = &self.manifest.normalization {
            manifest.normalization = Some(Normalization {
                mean: cols.iter().map(|&j| n.mean[j]).collect(),
                std: cols.iter().map(|&j| n.std[j]).collect(),
            });
        }
        Ok(Dataset {
            manifest,
            features,
            targets: self.targets.clone(),
            raw_targets: self.raw_targets.clone(),
            sample_index: self.sample_index.clone(),
            split: self.split.clone(),
        })
    }

    /// Checks shapes, target ranges and physical consistency.
    pub fn validate(&self) -> Result<()> {
        let n = self.len();
        let m = &self.manifest;
        if m.channel_names.len() != 2 * m.channel_sets.len() + TRAJECTORY_CHANNELS.len() {
            return Err(DatasetError::Corrupt("channel layout does not match channel sets".into()));
        }
        if self.features.len() != n * m.positions * m.channels()
            || self.targets.len() != n * N_TARGETS
            || self.raw_targets.len() != n * N_TARGETS
            || self.sample_index.len() != n
        {
            return Err(DatasetError::Corrupt("array sizes do not match the manifest".into()));
        }
        if !self.features.iter().all(|v| v.is_finite()) {
            return Err(DatasetError::Corrupt("non-finite feature".into()));
        }
        for i in 0..n {
            let t: Vec<f64> = self.targets(i).iter().map(|&v| v as f64).collect();
            let model = m.scaler.unscale(&t)?;
            model
                .validate()
                .map_err(|e| DatasetError::Corrupt(format!("sample {i}: {e}")))?;
        }
        if let Some(s) = &self.split {
            let mut all: Vec<usize> = s.train.iter().chain(&s.val).chain(&s.test).copied().collect();
            all.sort_unstable();
            if all != (0..n).collect::<Vec<_>>() {
                return Err(DatasetError::Corrupt("split is not a partition of the samples".into()));
            }
        }
        Ok(())
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
        let n = self.len();
        let (t, c) = (self.positions(), self.channels());
        let mut files = BTreeMap::new();
        let mut put = |key: &str, file: &str, dtype: &str, shape: Vec<usize>, bytes: Vec<u8>| -> Result<()> {
            let path = dir.join(file);
            fs::write(&path, &bytes).map_err(io_err(&path))?;
            files.insert(
                key.to_string(),
                FileEntry {
                    file: file.into(),
                    dtype: dtype.into(),
                    shape,
                    sha256: hex::encode(Sha256::digest(&bytes)),
                },
            );
            Ok(())
        };
        put("features", "features.f32", "f32le", vec![n, t, c], f32_bytes(&self.features))?;
        put("targets", "targets.f32", "f32le", vec![n, N_TARGETS], f32_bytes(&self.targets))?;
        put("raw_targets", "raw_targets.f32", "f32le", vec![n, N_TARGETS], f32_bytes(&self.raw_targets))?;
        put(
            "sample_index",
            "sample_index.u64",
            "u64le",
            vec![n],
            self.sample_index.iter().flat_map(|v| v.to_le_bytes()).collect(),
        )?;
        if let Some(s) = &self.split {
            for (key, idx) in [("split_train", &s.train), ("split_val", &s.val), ("split_test", &s.test)] {
                let bytes = idx.iter().flat_map(|&v| (v as u64).to_le_bytes()).collect();
                put(key, &format!("{key}.u64"), "u64le", vec![idx.len()], bytes)?;
            }
        }
        let mut manifest = self.manifest.clone();
        manifest.files = files;
        let path = dir.join("manifest.toml");
        fs::write(&path, manifest.to_toml()).map_err(io_err(&path))?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Dataset> {
        let path = dir.join("manifest.toml");
        let text = fs::read_to_string(&path).map_err(io_err(&path))?;
        let version: toml::Value = toml::from_str(&text).map_err(|e| DatasetError::Manifest(e.to_string()))?;
        let found = version
            .get("schema_version")
            .and_then(|v| v.as_integer())
            .ok_or_else(|| DatasetError::Manifest("missing schema_version".into()))?;
        if found != SCHEMA_VERSION as i64 {
            return Err(DatasetError::Schema {
                found: found as u32,
                expected: SCHEMA_VERSION,
            });
        }
        let manifest: Manifest = toml::from_str(&text).map_err(|e| DatasetError::Manifest(e.to_string()))?;
        let read = |key: &str, width: usize| -> Result<Vec<u8>> {
            let entry = manifest
                .files
                .get(key)
                .ok_or_else(|| DatasetError::Manifest(format!("missing file entry {key}")))?;
            let path = dir.join(&entry.file);
            let bytes = fs::read(&path).map_err(io_err(&path))?;
            let expected = entry.shape.iter().product::<usize>() * width;
            if bytes.len() != expected {
                return Err(DatasetError::Truncated {
                    file: entry.file.clone(),
                    expected,
                    found: bytes.len(),
                });
            }
            if hex::encode(Sha256::digest(&bytes)) != entry.sha256 {
                return Err(DatasetError::Checksum {
                    file: entry.file.clone(),
                });
            }
            Ok(bytes)
        };
        let features = f32_from_bytes(&read("features", 4)?);
        let targets = f32_from_bytes(&read("targets", 4)?);
        let raw_targets = f32_from_bytes(&read("raw_targets", 4)?);
        let sample_index = u64_from_bytes(&read("sample_index", 8)?);
        let split = match &manifest.split {
            Some(info) => {
                let idx = |key| -> Result<Vec<usize>> {
                    Ok(u64_from_bytes(&read(key, 8)?).into_iter().map(|v| v as usize).collect())
                };
                Some(Split {
                    seed: info.seed,
                    train: idx("split_train")?,
                    val: idx("split_val")?,
                    test: idx("split_test")?,
                })
            }
            None => None,
        };
        let ds = Dataset {
            manifest,
            features,
            targets,
            raw_targets,
            sample_index,
            split,
        };
        ds.validate()?;
        Ok(ds)
    }

    /// Lossless text export: one JSON record per line.
    pub fn export_text(&self, path: &Path) -> Result<()> {
        let file = fs::File::create(path).map_err(io_err(path))?;
        let mut w = BufWriter::new(file);
        let c = self.channels();
        for i in 0..self.len() {
            let record = serde_json::json!({
                "index": self.sample_index[i],
                "features": self.features(i).chunks_exact(c).collect::<Vec<_>>(),
                "targets": self.targets(i),
                "raw_targets": self.raw_targets(i),
            });
            writeln!(w, "{record}").map_err(io_err(path))?;
        }
        w.flush().map_err(io_err(path))
    }
}

fn f32_bytes(v: &[f32]) -> Vec<u8> {
    v.iter().flat_map(|x| x.to_le_bytes()).collect()
}

fn f32_from_bytes(b: &[u8]) -> Vec<f32> {
    b.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect()
}

fn u64_from_bytes(b: &[u8]) -> Vec<u64> {
    b.chunks_exact(8).map(|c| u64::from_le_bytes(c.try_into().unwrap())).collect()
}
