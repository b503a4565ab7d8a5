//! Logging tools and the conversion of couplings into attenuation, phase
//! difference and geosignal channels.

use std::fmt;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::em::{layered_coupling, rotate_coupling, CouplingTensor, EmError, FrequencyConfig};
use crate::formation::{local_three_layer, AnchorMode, FormationError, FormationModel, LocalModel, TrajectoryPoint};

/// `20·log10(e)`: nepers to decibels.
pub const DB_PER_NEPER: f64 = 8.685_889_638_065_037;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum InstrumentError {
    #[error("singular field: {0}")]
    SingularField(String),
    #[error("unsupported tool layout for {0}")]
    UnsupportedLayout(String),
    #[error("tool {tool} does not provide channel set {set}")]
    MissingChannelSet { tool: String, set: ChannelSet },
    #[error("forward model failed at position (x={horizontal:.4}, tvd={tvd:.4}, dip={dip:.3}): {source}")]
    Forward {
        horizontal: f64,
        tvd: f64,
        dip: f64,
        #[source]
        source: EmError,
    },
    #[error(transparent)]
    Formation(#[from] FormationError),
}

pub type Result<T> = std::result::Result<T, InstrumentError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ChannelSet {
    M1,
    M2,
    M3,
}

impl ChannelSet {
    pub const ALL: [ChannelSet; 3] = [ChannelSet::M1, ChannelSet::M2, ChannelSet::M3];

    pub fn parse_list(text: &str) -> std::result::Result<Vec<ChannelSet>, String> {
        let mut sets = Vec::new();
        for part in text.split([',', '+']).map(str::trim).filter(|s| !s.is_empty()) {
            let set = match part.to_ascii_uppercase().as_str() {
                "M1" => ChannelSet::M1,
                "M2" => ChannelSet::M2,
                "M3" => ChannelSet::M3,
                other => return Err(format!("unknown channel set {other:?}")),
            };
            sets.push(set);
        }
        normalize_sets(&sets).map_err(|e| e.to_string())
    }
}

impl fmt::Display for ChannelSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self:?}")
    }
}

/// Sorted, de-duplicated, non-empty.
pub fn normalize_sets(sets: &[ChannelSet]) -> std::result::Result<Vec<ChannelSet>, &'static str> {
    let mut v = sets.to_vec();
    v.sort();
    v.dedup();
    if v.is_empty() {
        Err("at least one channel set is required")
    } else {
        Ok(v)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeasurementSample {
    /// dB.
    pub attenuation: f64,
    /// Degrees in (−180, 180].
    pub phase_difference: f64,
    pub channel_set: ChannelSet,
}

impl MeasurementSample {
    fn from_ratio(ratio: Complex64, channel_set: ChannelSet) -> Self {
        Self {
            attenuation: DB_PER_NEPER * ratio.norm().ln(),
            phase_difference: wrap_degrees(ratio.arg().to_degrees()),
            channel_set,
        }
    }
}

/// Wraps to (−180, 180].
pub fn wrap_degrees(deg: f64) -> f64 {
    let w = deg - 360.0 * (deg / 360.0).round();
    if w <= -180.0 {
        w + 360.0
    } else if w > 180.0 {
        w - 360.0
    } else {
        w
    }
}

fn nonzero(h: Complex64, what: &str) -> Result<()> {
    if h.norm() > 0.0 && h.is_finite() {
        Ok(())
    } else {
        Err(InstrumentError::SingularField(format!("{what} = {h}")))
    }
}

pub fn attenuation_db(h1: Complex64, h2: Complex64) -> Result<f64> {
    nonzero(h1, "h1")?;
    nonzero(h2, "h2")?;
    Ok(DB_PER_NEPER * (h1.norm().ln() - h2.norm().ln()))
}

pub fn phase_diff_deg(h1: Complex64, h2: Complex64) -> Result<f64> {
    nonzero(h1, "h1")?;
    nonzero(h2, "h2")?;
    Ok(wrap_degrees((h1.arg() - h2.arg()).to_degrees()))
}

/// `ln((Hzz − Hzx)/(Hzz + Hzx))` split into dB and degrees.
pub fn geosignal(hzz: Complex64, hzx: Complex64) -> Result<MeasurementSample> {
    let num = hzz - hzx;
    let den = hzz + hzx;
    nonzero(num, "hzz - hzx")?;
    nonzero(den, "hzz + hzx")?;
    Ok(MeasurementSample {
        attenuation: attenuation_db(num, den)?,
        phase_difference: phase_diff_deg(num, den)?,
        channel_set: ChannelSet::M3,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolSpec {
    pub name: String,
    /// Hz.
    pub frequency: f64,
    /// Signed axial offsets from the tool center, m; positive is ahead
    /// along the trajectory.
    pub transmitters: Vec<f64>,
    pub receivers: Vec<f64>,
}

impl ToolSpec {
    /// Conventional co-axial propagation tool.
    pub fn coaxial_lwd() -> Self {
        Self {
            name: "coaxial_lwd".into(),
            frequency: 500e3,
            transmitters: vec![-0.9, 0.9],
            receivers: vec![-0.2, 0.2],
        }
    }

    /// Short-spacing deep azimuthal tool.
    pub fn deep_azimuthal() -> Self {
        Self {
            name: "deep_azimuthal".into(),
            frequency: 10e3,
            transmitters: vec![-6.0],
            receivers: vec![6.0],
        }
    }

    /// Channel sets this layout yields.
    pub fn channel_sets(&self) -> Vec<ChannelSet> {
        match (self.transmitters.len(), self.receivers.len()) {
            (t, 2) if t >= 1 => vec![ChannelSet::M1],
            (1, 1) => vec![ChannelSet::M2, ChannelSet::M3],
            _ => Vec::new(),
        }
    }
}

/// The pair of tools used for the measurement sets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Instruments {
    pub coaxial: ToolSpec,
    pub deep: ToolSpec,
}

impl Default for Instruments {
    fn default() -> Self {
        Self {
            coaxial: ToolSpec::coaxial_lwd(),
            deep: ToolSpec::deep_azimuthal(),
        }
    }
}

/// Tool-frame coupling between two points on the tool axis.
fn tool_coupling(
    model: &LocalModel,
    state: &TrajectoryPoint,
    tx: f64,
    rx: f64,
    freq: &FrequencyConfig,
) -> Result<CouplingTensor> {
    let (s, c) = state.dip.to_radians().sin_cos();
    let point = |o: f64| model.to_bedding_frame(state.horizontal + o * s, state.tvd + o * c);
    let h = layered_coupling(&model.medium, point(tx), point(rx), freq).map_err(|source| {
        InstrumentError::Forward {
            horizontal: state.horizontal,
            tvd: state.tvd,
            dip: state.dip,
            source,
        }
    })?;
    Ok(rotate_coupling(&h, model.tool_angle(state.dip)))
}

/// Measurements of one tool at one position. A two-receiver layout yields
/// M1: for every transmitter the near/far receiver ratio, attenuation and
/// phase averaged over transmitters. A single transmitter-receiver pair
/// yields M2 (`Hzz` against a unit reference) and M3 (geosignal).
pub fn simulate_position(
    tool: &ToolSpec,
    model: &LocalModel,
    state: &TrajectoryPoint,
    frequency: Option<f64>,
) -> Result<Vec<MeasurementSample>> {
    let freq = FrequencyConfig::new(frequency.unwrap_or(tool.frequency));
    let sets = tool.channel_sets();
    if sets.is_empty() {
        return Err(InstrumentError::UnsupportedLayout(tool.name.clone()));
    }
    if sets == [ChannelSet::M1] {
        let (mut att, mut ph) = (0.0, 0.0);
        for &tx in &tool.transmitters {
            let (near, far) = if (tool.receivers[0] - tx).abs() <= (tool.receivers[1] - tx).abs() {
                (tool.receivers[0], tool.receivers[1])
            } else {
                (tool.receivers[1], tool.receivers[0])
            };
            let h_near = tool_coupling(model, state, tx, near, &freq)?.hzz();
            let h_far = tool_coupling(model, state, tx, far, &freq)?.hzz();
            att += attenuation_db(h_near, h_far)?;
            ph += phase_diff_deg(h_near, h_far)?;
        }
        let n = tool.transmitters.len() as f64;
        return Ok(vec![MeasurementSample {
            attenuation: att / n,
            phase_difference: wrap_degrees(ph / n),
            channel_set: ChannelSet::M1,
        }]);
    }
    let h = tool_coupling(model, state, tool.transmitters[0], tool.receivers[0], &freq)?;
    let hzz = h.hzz();
    nonzero(hzz, "hzz")?;
    Ok(vec![
        MeasurementSample::from_ratio(hzz, ChannelSet::M2),
        geosignal(hzz, h.hzx())?,
    ])
}

/// Requested channel sets at one position, in `sets` order.
pub fn simulate_sets(
    instruments: &Instruments,
    model: &LocalModel,
    state: &TrajectoryPoint,
    sets: &[ChannelSet],
) -> Result<Vec<MeasurementSample>> {
    let mut out = Vec::with_capacity(sets.len());
    let mut deep: Option<Vec<MeasurementSample>> = None;
    for &set in sets {
        let sample = match set {
            ChannelSet::M1 => simulate_position(&instruments.coaxial, model, state, None)?[0],
            ChannelSet::M2 | ChannelSet::M3 => {
                if deep.is_none() {
                    deep = Some(simulate_position(&instruments.deep, model, state, None)?);
                }
                *deep
                    .as_ref()
                    .and_then(|d| d.iter().find(|s| s.channel_set == set))
                    .ok_or_else(|| InstrumentError::MissingChannelSet {
                        tool: instruments.deep.name.clone(),
                        set,
                    })?
            }
        };
        out.push(sample);
    }
    Ok(out)
}

/// Per-position channels for a set of measurement sets: two columns
/// (attenuation, phase) per set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasurementLog {
    pub channel_sets: Vec<ChannelSet>,
    pub rows: Vec<Vec<f64>>,
}

impl MeasurementLog {
    pub fn channel_names(&self) -> Vec<String> {
        channel_names(&self.channel_sets)
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn is_finite(&self) -> bool {
        self.rows.iter().flatten().all(|v| v.is_finite())
    }

    /// Columns of `wanted` pulled out of this log.
    pub fn select(&self, wanted: &[ChannelSet]) -> Option<MeasurementLog> {
        let mut cols = Vec::new();
        for set in wanted {
            let k = self.channel_sets.iter().position(|s| s == set)?;
            cols.extend([2 * k, 2 * k + 1]);
        }
        Some(MeasurementLog {
            channel_sets: wanted.to_vec(),
            rows: self.rows.iter().map(|r| cols.iter().map(|&c| r[c]).collect()).collect(),
        })
    }
}

pub fn channel_names(sets: &[ChannelSet]) -> Vec<String> {
    sets.iter()
        .flat_map(|s| [format!("{s}_attenuation_db"), format!("{s}_phase_deg")])
        .collect()
}

fn flatten(samples: &[MeasurementSample]) -> Vec<f64> {
    samples.iter().flat_map(|s| [s.attenuation, s.phase_difference]).collect()
}

/// Simulates a window of positions for one local formation, anchored per
/// `anchor` (at the last position for [`AnchorMode::WindowEnd`]).
pub fn simulate_window(
    instruments: &Instruments,
    formation: &FormationModel,
    positions: &[TrajectoryPoint],
    sets: &[ChannelSet],
    anchor: AnchorMode,
) -> Result<MeasurementLog> {
    let last = *positions
        .last()
        .ok_or_else(|| InstrumentError::UnsupportedLayout("empty window".into()))?;
    simulate_window_anchored(instruments, formation, positions, sets, anchor, last)
}

/// As [`simulate_window`] with an explicit window-end anchor.
pub fn simulate_window_anchored(
    instruments: &Instruments,
    formation: &FormationModel,
    positions: &[TrajectoryPoint],
    sets: &[ChannelSet],
    anchor: AnchorMode,
    end: TrajectoryPoint,
) -> Result<MeasurementLog> {
    let fixed = local_three_layer(formation, (end.horizontal, end.tvd))?;
    let mut rows = Vec::with_capacity(positions.len());
    for p in positions {
        let row = match anchor {
            AnchorMode::WindowEnd => simulate_sets(instruments, &fixed, p, sets)?,
            AnchorMode::FollowTool => {
                let m = local_three_layer(formation, (p.horizontal, p.tvd))?;
                simulate_sets(instruments, &m, p, sets)?
            }
        };
        rows.push(flatten(&row));
    }
    Ok(MeasurementLog {
        channel_sets: sets.to_vec(),
        rows,
    })
}

/// Simulates every position of a trajectory through one (possibly
/// many-layered) bedding model.
pub fn simulate_log(
    instruments: &Instruments,
    model: &LocalModel,
    positions: &[TrajectoryPoint],
    sets: &[ChannelSet],
) -> Result<MeasurementLog> {
    let rows = positions
        .iter()
        .map(|p| simulate_sets(instruments, model, p, sets).map(|s| flatten(&s)))
        .collect::<Result<Vec<_>>>()?;
    Ok(MeasurementLog {
        channel_sets: sets.to_vec(),
        rows,
    })
}
