//! Local seven-parameter formation model, trajectory parameterization and
//! the constrained random sampling of both.
//!
//! Global frame: `x` horizontal along the (zero-azimuth) trajectory, `z` true
//! vertical depth pointing down. Dip angles are measured from vertical, so
//! 90° is a horizontal well. Bed boundaries are planes tilted by `beta`;
//! positive `beta` makes the beds shallower as `x` grows, which makes the
//! tool axis parallel to bedding when `alpha - 90° - beta = 0`.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::em::{EmError, LayeredMedium, MediumProperties};

/// Positions per training window.
pub const DEFAULT_WINDOW: usize = 65;
/// One foot, in metres.
pub const DEFAULT_STEP: f64 = 0.3048;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FormationError {
    #[error("position index {index} outside 1..={len}")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("invalid formation parameter {name} = {value}: {reason}")]
    InvalidParameter {
        name: &'static str,
        value: f64,
        reason: String,
    },
    #[error("invalid sampler configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Em(#[from] EmError),
}

pub type Result<T> = std::result::Result<T, FormationError>;

/// The seven local parameters describing the three-layer neighbourhood of a
/// logging position.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FormationModel {
    /// Horizontal resistivity of the host layer, Ω·m.
    pub rho_h: f64,
    /// Vertical resistivity of the host layer, Ω·m.
    pub rho_v: f64,
    /// Resistivity of the layer above, Ω·m.
    pub rho_u: f64,
    /// Resistivity of the layer below, Ω·m.
    pub rho_l: f64,
    /// Vertical distance to the upper boundary, m.
    pub d_u: f64,
    /// Vertical distance to the lower boundary, m.
    pub d_l: f64,
    /// Formation dip, degrees.
    pub beta: f64,
}

impl FormationModel {
    /// `rho_v / rho_h`.
    pub fn anisotropy(&self) -> f64 {
        self.rho_v / self.rho_h
    }

    /// Depth-mirrored counterpart: upper and lower half-spaces swap.
    pub fn mirrored(&self) -> Self {
        Self {
            rho_u: self.rho_l,
            rho_l: self.rho_u,
            d_u: self.d_l,
            d_l: self.d_u,
            beta: -self.beta,
            ..*self
        }
    }

    /// Checks physical consistency: positive finite values, `rho_h <= rho_v <=
    /// 10 rho_h`, and finite dip.
    pub fn validate(&self) -> Result<()> {
        let named = [
            ("rho_h", self.rho_h),
            ("rho_v", self.rho_v),
            ("rho_u", self.rho_u),
            ("rho_l", self.rho_l),
            ("d_u", self.d_u),
            ("d_l", self.d_l),
        ];
        for (name, value) in named {
            if !(value.is_finite() && value > 0.0) {
                return Err(FormationError::InvalidParameter {
                    name,
                    value,
                    reason: "must be positive and finite".into(),
                });
            }
        }
        if !self.beta.is_finite() || self.beta.abs() >= 90.0 {
            return Err(FormationError::InvalidParameter {
                name: "beta",
                value: self.beta,
                reason: "must lie strictly between -90 and 90 degrees".into(),
            });
        }
        // relative slack for values that went through log10/pow10
        let slack = 1e-12;
        let a = self.anisotropy();
        if a < 1.0 - slack || a > 10.0 * (1.0 + slack) {
            return Err(FormationError::InvalidParameter {
                name: "rho_v",
                value: self.rho_v,
                reason: format!("anisotropy rho_v/rho_h = {a} outside [1, 10]"),
            });
        }
        Ok(())
    }

    /// Checks the sampler's box constraints on top of [`Self::validate`].
    pub fn validate_ranges(&self, cfg: &SamplerConfig) -> Result<()> {
        self.validate()?;
        let checks = [
            ("rho_u", self.rho_u.log10(), cfg.log_rho_u),
            ("rho_l", self.rho_l.log10(), cfg.log_rho_l),
            ("rho_h", self.rho_h.log10(), cfg.log_rho_h_bounds()),
            ("d_u", self.d_u.log10(), cfg.log_d_u),
            ("d_l", self.d_l.log10(), cfg.log_d_l),
            ("beta", self.beta, cfg.beta),
        ];
        for (name, value, range) in checks {
            if !range.contains_with_slack(value, 1e-9) {
                return Err(FormationError::InvalidParameter {
                    name,
                    value,
                    reason: format!("outside sampling range [{}, {}]", range.min, range.max),
                });
            }
        }
        Ok(())
    }
}

/// Closed interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Range {
    pub min: f64,
    pub max: f64,
}

impl Range {
    pub const fn new(min: f64, max: f64) -> Self {
        Self { min, max }
    }

    pub fn width(&self) -> f64 {
        self.max - self.min
    }

    pub fn contains_with_slack(&self, v: f64, slack: f64) -> bool {
        v >= self.min - slack && v <= self.max + slack
    }

    fn sample(&self, rng: &mut impl Rng) -> f64 {
        if self.width() == 0.0 {
            self.min
        } else {
            rng.gen_range(self.min..=self.max)
        }
    }

    fn check(&self, name: &str) -> Result<()> {
        if self.min.is_finite() && self.max.is_finite() && self.min <= self.max {
            Ok(())
        } else {
            Err(FormationError::InvalidConfig(format!(
                "{name}: bad range [{}, {}]",
                self.min, self.max
            )))
        }
    }
}

/// Where the seven-parameter model sits relative to a simulated window.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnchorMode {
    /// Anchored at the last window position and held fixed for the window.
    #[default]
    WindowEnd,
    /// Re-anchored at every tool position.
    FollowTool,
}

/// Sampling ranges for synthetic formations and trajectories. Resistivities
/// and distances are sampled on a log10 scale, angles in degrees.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplerConfig {
    pub seed: u64,
    pub log_rho_u: Range,
    pub log_rho_l: Range,
    /// log10 of the anisotropy factor `rho_v / rho_h`.
    pub log_anisotropy: Range,
    /// Bounds on log10 `rho_v`; `log rho_h` is drawn in
    /// `[min, max - log a]` so that `rho_v` stays below the upper bound.
    pub log_rho_v: Range,
    pub log_d_u: Range,
    pub log_d_l: Range,
    pub beta: Range,
    pub alpha_ini: Range,
    pub alpha_v: Range,
    pub positions: usize,
    pub step: f64,
    #[serde(default)]
    pub anchor: AnchorMode,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            log_rho_u: Range::new(0.0, 3.0),
            log_rho_l: Range::new(0.0, 3.0),
            log_anisotropy: Range::new(0.0, 1.0),
            log_rho_v: Range::new(0.0, 3.0),
            log_d_u: Range::new(-2.0, 1.0),
            log_d_l: Range::new(-2.0, 1.0),
            beta: Range::new(-10.0, 10.0),
            alpha_ini: Range::new(83.0, 97.0),
            alpha_v: Range::new(-0.045, 0.045),
            positions: DEFAULT_WINDOW,
            step: DEFAULT_STEP,
            anchor: AnchorMode::WindowEnd,
        }
    }
}

impl SamplerConfig {
    pub fn with_seed(seed: u64) -> Self {
        Self {
            seed,
            ..Self::default()
        }
    }

    /// Marginal range of log10 `rho_h`.
    pub fn log_rho_h_bounds(&self) -> Range {
        Range::new(self.log_rho_v.min, self.log_rho_v.max - self.log_anisotropy.min)
    }

    pub fn validate(&self) -> Result<()> {
        self.log_rho_u.check("log_rho_u")?;
        self.log_rho_l.check("log_rho_l")?;
        self.log_anisotropy.check("log_anisotropy")?;
        self.log_rho_v.check("log_rho_v")?;
        self.log_d_u.check("log_d_u")?;
        self.log_d_l.check("log_d_l")?;
        self.beta.check("beta")?;
        self.alpha_ini.check("alpha_ini")?;
        self.alpha_v.check("alpha_v")?;
        if self.log_anisotropy.min < 0.0 || self.log_anisotropy.max > 1.0 {
            return Err(FormationError::InvalidConfig(
                "log_anisotropy must stay within [0, 1]".into(),
            ));
        }
        if self.log_rho_v.max - self.log_anisotropy.max < self.log_rho_v.min {
            return Err(FormationError::InvalidConfig(
                "log_rho_v range too narrow for the anisotropy range".into(),
            ));
        }
        if self.positions == 0 || !(self.step.is_finite() && self.step > 0.0) {
            return Err(FormationError::InvalidConfig(format!(
                "positions must be >= 1 and step > 0 (positions={}, step={})",
                self.positions, self.step
            )));
        }
        Ok(())
    }

    pub fn from_toml(text: &str) -> std::result::Result<Self, toml::de::Error> {
        toml::from_str(text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("sampler config serializes")
    }

    /// Independent random stream for sample `index`; identical for any
    /// worker count or generation order.
    pub fn rng_for(&self, index: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(index);
        rng
    }
}

/// Draws one formation; every draw satisfies `rho_h <= rho_v <= 10 rho_h`.
pub fn sample_formation(cfg: &SamplerConfig, rng: &mut impl Rng) -> FormationModel {
    let log_rho_u = cfg.log_rho_u.sample(rng);
    let log_rho_l = cfg.log_rho_l.sample(rng);
    let log_a = cfg.log_anisotropy.sample(rng);
    let log_rho_h = Range::new(cfg.log_rho_v.min, cfg.log_rho_v.max - log_a).sample(rng);
    let log_d_u = cfg.log_d_u.sample(rng);
    let log_d_l = cfg.log_d_l.sample(rng);
    let beta = cfg.beta.sample(rng);
    let rho_h = 10f64.powf(log_rho_h);
    FormationModel {
        rho_h,
        rho_v: rho_h * 10f64.powf(log_a),
        rho_u: 10f64.powf(log_rho_u),
        rho_l: 10f64.powf(log_rho_l),
        d_u: 10f64.powf(log_d_u),
        d_l: 10f64.powf(log_d_l),
        beta,
    }
}

pub fn sample_trajectory(cfg: &SamplerConfig, rng: &mut impl Rng) -> Trajectory {
    let alpha_ini = cfg.alpha_ini.sample(rng);
    let alpha_v = cfg.alpha_v.sample(rng);
    build_trajectory(alpha_ini, alpha_v, cfg.positions, cfg.step)
}

/// One logging position.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryPoint {
    /// Horizontal coordinate, m.
    pub horizontal: f64,
    /// True vertical depth, m.
    pub tvd: f64,
    /// Dip from vertical, degrees.
    pub dip: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub alpha_ini: f64,
    pub alpha_v: f64,
    pub step: f64,
    pub positions: Vec<TrajectoryPoint>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn last(&self) -> Option<&TrajectoryPoint> {
        self.positions.last()
    }

    /// Sum of segment lengths.
    pub fn path_length(&self) -> f64 {
        self.positions
            .windows(2)
            .map(|w| (w[1].horizontal - w[0].horizontal).hypot(w[1].tvd - w[0].tvd))
            .sum()
    }

    /// Builds a trajectory from explicit points (e.g. a field survey).
    pub fn from_points(points: Vec<TrajectoryPoint>) -> Self {
        let step = if points.len() > 1 {
            (points[1].horizontal - points[0].horizontal).hypot(points[1].tvd - points[0].tvd)
        } else {
            DEFAULT_STEP
        };
        let alpha_ini = points.first().map_or(90.0, |p| p.dip);
        let alpha_v = if points.len() > 1 {
            points[1].dip - points[0].dip
        } else {
            0.0
        };
        Self {
            alpha_ini,
            alpha_v,
            step,
            positions: points,
        }
    }

    /// Points `start..start+len` shifted so the first one is the origin.
    pub fn window(&self, start: usize, len: usize) -> Vec<TrajectoryPoint> {
        let origin = self.positions[start];
        self.positions[start..start + len]
            .iter()
            .map(|p| TrajectoryPoint {
                horizontal: p.horizontal - origin.horizontal,
                tvd: p.tvd - origin.tvd,
                dip: p.dip,
            })
            .collect()
    }
}

/// Dip at 1-based position `i` of a `len`-point trajectory.
pub fn trajectory_dip(alpha_ini: f64, alpha_v: f64, i: usize, len: usize) -> Result<f64> {
    if i == 0 || i > len {
        return Err(FormationError::IndexOutOfRange { index: i, len });
    }
    Ok(alpha_ini + (i - 1) as f64 * alpha_v)
}

/// Integrates the dip profile: each step advances `step` metres along the
/// dip of the position it leaves. Position 1 is the origin.
pub fn build_trajectory(alpha_ini: f64, alpha_v: f64, len: usize, step: f64) -> Trajectory {
    let mut positions = Vec::with_capacity(len);
    let (mut x, mut z) = (0.0, 0.0);
    for i in 0..len {
        let dip = alpha_ini + i as f64 * alpha_v;
        positions.push(TrajectoryPoint {
            horizontal: x,
            tvd: z,
            dip,
        });
        let (s, c) = dip.to_radians().sin_cos();
        x += step * s;
        z += step * c;
    }
    Trajectory {
        alpha_ini,
        alpha_v,
        step,
        positions,
    }
}

/// Three-layer medium in the bedding-aligned frame together with the map
/// from global coordinates into that frame.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalModel {
    pub medium: LayeredMedium,
    /// Formation dip, degrees.
    pub beta: f64,
    /// Global `(horizontal, tvd)` of the anchor position.
    pub anchor: (f64, f64),
}

impl LocalModel {
    /// Maps a global `(horizontal, tvd)` point into the bedding frame. The
    /// frame is rotated about the anchor and keeps the anchor's depth, so
    /// for `beta = 0` it is the global frame.
    pub fn to_bedding_frame(&self, horizontal: f64, tvd: f64) -> [f64; 3] {
        let (s, c) = self.beta.to_radians().sin_cos();
        let dx = horizontal - self.anchor.0;
        let dz = tvd - self.anchor.1;
        [dx * c - dz * s, 0.0, dx * s + dz * c + self.anchor.1]
    }

    /// Angle between a tool with dip `alpha` and the bedding normal.
    pub fn tool_angle(&self, alpha: f64) -> f64 {
        alpha - self.beta
    }
}

/// Relative dip between tool axis and bedding plane, degrees.
pub fn relative_dip(alpha: f64, beta: f64) -> f64 {
    (alpha - 90.0) - beta
}

/// Upper isotropic `rho_u` / TI host / lower isotropic `rho_l`, with the
/// boundaries `d_u` above and `d_l` below the anchor measured vertically.
pub fn local_three_layer(formation: &FormationModel, anchor: (f64, f64)) -> Result<LocalModel> {
    formation.validate()?;
    let cb = formation.beta.to_radians().cos();
    let top = anchor.1 - formation.d_u * cb;
    let bottom = anchor.1 + formation.d_l * cb;
    let medium = LayeredMedium::new(
        vec![
            MediumProperties::isotropic(formation.rho_u),
            MediumProperties::anisotropic(formation.rho_h, formation.rho_v),
            MediumProperties::isotropic(formation.rho_l),
        ],
        vec![top, bottom],
    )?;
    Ok(LocalModel {
        medium,
        beta: formation.beta,
        anchor,
    })
}

/// One bed of an [`EarthModel`]; isotropic when `rho_v` is absent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Bed {
    pub rho_h: f64,
    #[serde(default)]
    pub rho_v: Option<f64>,
}

/// Planar beds, top to bottom, whose boundaries cross `horizontal = 0` at
/// the given depths and dip by `dip` degrees.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EarthModel {
    pub beds: Vec<Bed>,
    #[serde(default)]
    pub boundaries: Vec<f64>,
    #[serde(default)]
    pub dip: f64,
}

impl EarthModel {
    pub fn local_model(&self) -> Result<LocalModel> {
        if !(self.dip.is_finite() && self.dip.abs() < 90.0) {
            return Err(FormationError::InvalidParameter {
                name: "dip",
                value: self.dip,
                reason: "must lie in (-90, 90) degrees".into(),
            });
        }
        let cb = self.dip.to_radians().cos();
        let layers = self
            .beds
            .iter()
            .map(|b| MediumProperties::anisotropic(b.rho_h, b.rho_v.unwrap_or(b.rho_h)))
            .collect();
        let medium = LayeredMedium::new(layers, self.boundaries.iter().map(|z| z * cb).collect())?;
        Ok(LocalModel {
            medium,
            beta: self.dip,
            anchor: (0.0, 0.0),
        })
    }
}
