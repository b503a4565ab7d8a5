//! Magnetic-dipole couplings in homogeneous and planarly layered
//! transversely-isotropic (TI) media.
//!
//! Coordinates are formation-aligned: `z` is the symmetry axis of the
//! conductivity tensor and points down, layer boundaries are planes of
//! constant `z`. All couplings are per unit dipole moment (1 A·m²) and use
//! the `exp(-iωt)` time dependence unless [`TimeConvention::PositiveIOmegaT`]
//! is requested, in which case every entry is conjugated.
//!
//! The layered solution splits the field into TE and TM modes of the
//! horizontal wavenumber spectrum. Each mode is an equivalent transmission
//! line through the stack; generalized reflection coefficients close the
//! source layer and the spectral kernels are returned to space by a
//! 201-point digital Hankel filter. Near-vertical offsets, where the filter
//! loses accuracy, fall back to adaptive Gauss-Kronrod quadrature.

mod filter_key201;
mod fullspace;
mod hankel;
mod layered;

use std::f64::consts::PI;
use std::ops::{Add, Index, IndexMut, Mul, Sub};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use fullspace::full_space_coupling;
pub use layered::{layered_coupling, layered_coupling_with, QuadratureRule};

/// Vacuum permeability, H/m.
pub const MU_0: f64 = 4.0e-7 * PI;
/// Vacuum permittivity, F/m.
pub const EPSILON_0: f64 = 8.854_187_812_8e-12;

/// Distance below which a point is considered to sit on a layer boundary.
pub const BOUNDARY_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EmError {
    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(String),
    #[error("invalid input: {0}")]
    Validation(String),
    #[error("point at depth {depth} m lies on the layer boundary at {boundary} m")]
    BoundaryCollision { depth: f64, boundary: f64 },
    #[error(
        "quadrature did not converge for {entry}: estimate {estimate:e}, error {error:e} after {evaluations} evaluations"
    )]
    Quadrature {
        entry: &'static str,
        estimate: f64,
        error: f64,
        evaluations: usize,
    },
}

pub type Result<T> = std::result::Result<T, EmError>;

/// Electrical properties of one homogeneous TI region.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MediumProperties {
    /// Horizontal resistivity, Ω·m.
    pub rho_h: f64,
    /// Vertical resistivity, Ω·m.
    pub rho_v: f64,
    /// Dielectric permittivity, F/m.
    #[serde(default = "default_permittivity")]
    pub permittivity: f64,
    /// Magnetic permeability, H/m.
    #[serde(default = "default_permeability")]
    pub permeability: f64,
}

fn default_permittivity() -> f64 {
    EPSILON_0
}

fn default_permeability() -> f64 {
    MU_0
}

impl MediumProperties {
    pub fn isotropic(rho: f64) -> Self {
        Self::anisotropic(rho, rho)
    }

    pub fn anisotropic(rho_h: f64, rho_v: f64) -> Self {
        Self {
            rho_h,
            rho_v,
            permittivity: EPSILON_0,
            permeability: MU_0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let all_finite = [self.rho_h, self.rho_v, self.permittivity, self.permeability]
            .iter()
            .all(|v| v.is_finite());
        if !all_finite {
            return Err(EmError::Validation(format!("non-finite medium {self:?}")));
        }
        if self.rho_h <= 0.0 || self.rho_v <= 0.0 {
            return Err(EmError::Validation(format!(
                "resistivities must be positive (rho_h={}, rho_v={})",
                self.rho_h, self.rho_v
            )));
        }
        if self.permittivity < 0.0 || self.permeability <= 0.0 {
            return Err(EmError::Validation(format!(
                "permittivity must be >= 0 and permeability > 0 (eps={}, mu={})",
                self.permittivity, self.permeability
            )));
        }
        Ok(())
    }

    /// `rho_v / rho_h`.
    pub fn anisotropy(&self) -> f64 {
        self.rho_v / self.rho_h
    }

    /// Complex horizontal conductivity `σ_h - iωε` (exp(-iωt) convention).
    pub fn sigma_h(&self, omega: f64) -> Complex64 {
        Complex64::new(1.0 / self.rho_h, -omega * self.permittivity)
    }

    /// Complex vertical conductivity `σ_v - iωε`.
    pub fn sigma_v(&self, omega: f64) -> Complex64 {
        Complex64::new(1.0 / self.rho_v, -omega * self.permittivity)
    }

    /// Horizontal wavenumber `k_h` with `k_h² = iωμσ̃_h` and `Im k_h > 0`.
    pub fn k_h(&self, omega: f64) -> Complex64 {
        wavenumber(Complex64::i() * omega * self.permeability * self.sigma_h(omega))
    }

    /// Vertical wavenumber `k_v` with `k_v² = iωμσ̃_v` and `Im k_v > 0`.
    pub fn k_v(&self, omega: f64) -> Complex64 {
        wavenumber(Complex64::i() * omega * self.permeability * self.sigma_v(omega))
    }
}

fn wavenumber(k2: Complex64) -> Complex64 {
    let k = k2.sqrt();
    if k.im < 0.0 {
        -k
    } else {
        k
    }
}

/// Horizontally stratified medium, layers ordered top to bottom.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayeredMedium {
    pub layers: Vec<MediumProperties>,
    /// Interface depths in metres, strictly increasing, `layers.len() - 1` of them.
    pub boundaries: Vec<f64>,
}

impl LayeredMedium {
    pub fn new(layers: Vec<MediumProperties>, boundaries: Vec<f64>) -> Result<Self> {
        let medium = Self { layers, boundaries };
        medium.validate()?;
        Ok(medium)
    }

    pub fn homogeneous(medium: MediumProperties) -> Self {
        Self {
            layers: vec![medium],
            boundaries: Vec::new(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(EmError::Validation("layered medium has no layers".into()));
        }
        if self.boundaries.len() + 1 != self.layers.len() {
            return Err(EmError::Validation(format!(
                "{} layers need {} boundaries, got {}",
                self.layers.len(),
                self.layers.len() - 1,
                self.boundaries.len()
            )));
        }
        if self.boundaries.iter().any(|b| !b.is_finite()) {
            return Err(EmError::Validation("non-finite boundary depth".into()));
        }
        if self.boundaries.windows(2).any(|w| w[1] <= w[0]) {
            return Err(EmError::Validation(format!(
                "boundaries must be strictly increasing: {:?}",
                self.boundaries
            )));
        }
        self.layers.iter().try_for_each(MediumProperties::validate)
    }

    /// Index of the layer containing depth `z`.
    pub fn layer_index(&self, z: f64) -> Result<usize> {
        for (i, &b) in self.boundaries.iter().enumerate() {
            if (z - b).abs() < BOUNDARY_TOLERANCE {
                return Err(EmError::BoundaryCollision { depth: z, boundary: b });
            }
            if z < b {
                return Ok(i);
            }
        }
        Ok(self.boundaries.len())
    }
}

/// Sign of the harmonic time dependence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TimeConvention {
    /// `exp(-iωt)`: fields decay as `exp(ikr)` with `Im k > 0`.
    #[default]
    NegativeIOmegaT,
    /// `exp(+iωt)`: complex conjugate of the above.
    PositiveIOmegaT,
}

impl TimeConvention {
    pub fn flipped(self) -> Self {
        match self {
            Self::NegativeIOmegaT => Self::PositiveIOmegaT,
            Self::PositiveIOmegaT => Self::NegativeIOmegaT,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrequencyConfig {
    pub frequency: f64,
    #[serde(default)]
    pub time_convention: TimeConvention,
}

impl FrequencyConfig {
    pub fn new(frequency: f64) -> Self {
        Self {
            frequency,
            time_convention: TimeConvention::default(),
        }
    }

    pub fn with_convention(mut self, time_convention: TimeConvention) -> Self {
        self.time_convention = time_convention;
        self
    }

    pub fn angular_frequency(&self) -> f64 {
        2.0 * PI * self.frequency
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.frequency.is_finite() && self.frequency > 0.0) {
            return Err(EmError::Validation(format!(
                "frequency must be positive and finite, got {}",
                self.frequency
            )));
        }
        Ok(())
    }
}

/// 3×3 magnetic coupling, A/m per A·m². `h[i][j]` is the receiver component
/// `i` produced by a transmitter oriented along `j`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CouplingTensor {
    pub h: [[Complex64; 3]; 3],
}

pub const X: usize = 0;
pub const Y: usize = 1;
pub const Z: usize = 2;

impl CouplingTensor {
    pub fn zeros() -> Self {
        Self {
            h: [[Complex64::new(0.0, 0.0); 3]; 3],
        }
    }

    pub fn transpose(&self) -> Self {
        let mut out = Self::zeros();
        for i in 0..3 {
            for j in 0..3 {
                out.h[i][j] = self.h[j][i];
            }
        }
        out
    }

    pub fn conj(&self) -> Self {
        let mut out = *self;
        out.h.iter_mut().flatten().for_each(|v| *v = v.conj());
        out
    }

    pub fn is_finite(&self) -> bool {
        self.h.iter().flatten().all(|v| v.is_finite())
    }

    /// Largest entry magnitude.
    pub fn norm_max(&self) -> f64 {
        self.h.iter().flatten().map(|v| v.norm()).fold(0.0, f64::max)
    }

    /// `R · H · Rᵀ` for a real 3×3 matrix `R`.
    pub fn similarity(&self, r: &[[f64; 3]; 3]) -> Self {
        let mut tmp = Self::zeros();
        for i in 0..3 {
            for j in 0..3 {
                tmp.h[i][j] = (0..3).map(|k| self.h[i][k] * r[j][k]).sum();
            }
        }
        let mut out = Self::zeros();
        for i in 0..3 {
            for j in 0..3 {
                out.h[i][j] = (0..3).map(|k| tmp.h[k][j] * r[i][k]).sum();
            }
        }
        out
    }

    pub fn hzz(&self) -> Complex64 {
        self.h[Z][Z]
    }

    /// Receiver `x` component of a `z`-oriented transmitter.
    pub fn hzx(&self) -> Complex64 {
        self.h[X][Z]
    }

    pub(crate) fn apply_convention(self, convention: TimeConvention) -> Self {
        match convention {
            TimeConvention::NegativeIOmegaT => self,
            TimeConvention::PositiveIOmegaT => self.conj(),
        }
    }
}

impl Index<(usize, usize)> for CouplingTensor {
    type Output = Complex64;
    fn index(&self, (i, j): (usize, usize)) -> &Complex64 {
        &self.h[i][j]
    }
}

impl IndexMut<(usize, usize)> for CouplingTensor {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut Complex64 {
        &mut self.h[i][j]
    }
}

impl Add for CouplingTensor {
    type Output = Self;
    fn add(mut self, rhs: Self) -> Self {
        for i in 0..3 {
            for j in 0..3 {
                self.h[i][j] += rhs.h[i][j];
            }
        }
        self
    }
}

impl Sub for CouplingTensor {
    type Output = Self;
    fn sub(mut self, rhs: Self) -> Self {
        for i in 0..3 {
            for j in 0..3 {
                self.h[i][j] -= rhs.h[i][j];
            }
        }
        self
    }
}

impl Mul<f64> for CouplingTensor {
    type Output = Self;
    fn mul(mut self, rhs: f64) -> Self {
        self.h.iter_mut().flatten().for_each(|v| *v *= rhs);
        self
    }
}

/// Rotation about the strike (`y`) axis taking formation-frame axes to tool
/// axes: the tool axis makes angle `angle_deg` with the formation `z` axis
/// inside the `x`-`z` plane. Rows are the tool `x`, `y`, `z` axes.
pub fn strike_rotation(angle_deg: f64) -> [[f64; 3]; 3] {
    let (s, c) = angle_deg.to_radians().sin_cos();
    [[c, 0.0, -s], [0.0, 1.0, 0.0], [s, 0.0, c]]
}

/// Similarity transform `R·H·Rᵀ` with `R` the strike-axis rotation by
/// `relative_dip` degrees.
pub fn rotate_coupling(t: &CouplingTensor, relative_dip: f64) -> CouplingTensor {
    t.similarity(&strike_rotation(relative_dip))
}

pub(crate) fn check_point(p: &[f64; 3], what: &str) -> Result<()> {
    if p.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(EmError::Validation(format!("non-finite {what} position {p:?}")))
    }
}
