//! Whitespace-delimited tables: a header line naming the columns, then one
//! record per position. Lines starting with `#` are comments.

use std::fmt::Write as _;
use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use lwdinv::dataset::TRAJECTORY_CHANNELS;
use lwdinv::formation::TrajectoryPoint;
use lwdinv::instrument::{channel_names, ChannelSet, MeasurementLog};

#[derive(Debug, Clone, PartialEq)]
pub struct TextTable {
    pub names: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl TextTable {
    pub fn parse(text: &str, source: &str) -> Result<Self> {
        let mut names: Option<Vec<String>> = None;
        let mut rows = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = line.split_whitespace().collect();
            match &names {
                None => names = Some(fields.iter().map(|s| s.to_string()).collect()),
                Some(n) => {
                    if fields.len() != n.len() {
                        bail!("{source}:{}: expected {} fields, found {}", i + 1, n.len(), fields.len());
                    }
                    let row = fields
                        .iter()
                        .map(|f| {
                            f.parse::<f64>()
                                .ok()
                                .filter(|v| v.is_finite())
                                .ok_or_else(|| anyhow!("{source}:{}: {f:?} is not a finite number", i + 1))
                        })
                        .collect::<Result<Vec<_>>>()?;
                    rows.push(row);
                }
            }
        }
        let names = names.ok_or_else(|| anyhow!("{source}: missing header line"))?;
        Ok(Self { names, rows })
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Self::parse(&text, &path.display().to_string())
    }

    pub fn render(&self) -> String {
        let mut out = self.names.join(" ");
        out.push('\n');
        for row in &self.rows {
            let mut first = true;
            for v in row {
                if !first {
                    out.push(' ');
                }
                first = false;
                write!(out, "{v}").expect("writing to a string");
            }
            out.push('\n');
        }
        out
    }

    pub fn column(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    fn require(&self, name: &str, source: &str) -> Result<usize> {
        self.column(name)
            .ok_or_else(|| anyhow!("{source}: header lacks column {name:?}"))
    }

    pub fn trajectory(&self, source: &str) -> Result<Vec<TrajectoryPoint>> {
        let [h, z, d] = TRAJECTORY_CHANNELS.map(|n| self.require(n, source));
        let (h, z, d) = (h?, z?, d?);
        Ok(self
            .rows
            .iter()
            .map(|r| TrajectoryPoint {
                horizontal: r[h],
                tvd: r[z],
                dip: r[d],
            })
            .collect())
    }

    /// Channel sets whose two columns are both present, with their values.
    pub fn measurement_log(&self, source: &str) -> Result<MeasurementLog> {
        let mut sets = Vec::new();
        let mut cols = Vec::new();
        for set in ChannelSet::ALL {
            let names = channel_names(&[set]);
            match (self.column(&names[0]), self.column(&names[1])) {
                (Some(a), Some(p)) => {
                    sets.push(set);
                    cols.extend([a, p]);
                }
                (None, None) => {}
                _ => bail!("{source}: {set} needs both {} and {}", names[0], names[1]),
            }
        }
        if sets.is_empty() {
            bail!("{source}: no measurement channels in header");
        }
        Ok(MeasurementLog {
            channel_sets: sets,
            rows: self.rows.iter().map(|r| cols.iter().map(|&c| r[c]).collect()).collect(),
        })
    }

    pub fn from_log(positions: &[TrajectoryPoint], log: &MeasurementLog) -> Self {
        let mut names: Vec<String> = TRAJECTORY_CHANNELS.iter().map(|s| s.to_string()).collect();
        names.extend(log.channel_names());
        let rows = positions
            .iter()
            .zip(&log.rows)
            .map(|(p, r)| {
                let mut row = vec![p.horizontal, p.tvd, p.dip];
                row.extend(r);
                row
            })
            .collect();
        Self { names, rows }
    }
}
