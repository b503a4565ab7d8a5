//! Spectral-domain solution for dipoles in a stack of TI layers.
//!
//! For a horizontal wavenumber `κ` the fields split into
//!
//! * TE (E horizontal): `Γ = sqrt(κ² - k_h²)`, series impedance `iωμ`,
//!   characteristic admittance `Y₀ = Γ/(iωμ)`;
//! * TM (H horizontal): `Γ = sqrt(λ²κ² - k_h²)` with `λ² = σ_h/σ_v`,
//!   shunt admittance `σ_h`, `Y₀ = σ_h/Γ`.
//!
//! A magnetic dipole `M` drives the TE line with a series voltage
//! `-iωμ M_u` and a shunt current `-iκ M_z`, and the TM line with a series
//! voltage `iωμ M_v` (`u` along `κ`, `v = ẑ × u`).

use std::f64::consts::PI;

use num_complex::Complex64;
use smallvec::SmallVec;

use super::fullspace::{norm3, ti_primary};
use super::hankel::{adaptive, filter_transform, AdaptiveOptions};
use super::{check_point, CouplingTensor, EmError, FrequencyConfig, LayeredMedium, Result};

/// Which route evaluates the wavenumber integrals.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum QuadratureRule {
    /// Digital filter, adaptive quadrature for near-vertical offsets.
    #[default]
    Auto,
    Filter,
    Adaptive,
}

/// Horizontal offset below which (relative to the vertical decay length of
/// the spectral kernels) the filter is abandoned for direct quadrature.
const FILTER_MIN_RATIO: f64 = 0.01;

/// Coupling between a unit magnetic dipole at `tx_pos` and a receiver at
/// `rx_pos` inside a layered TI medium.
pub fn layered_coupling(
    medium: &LayeredMedium,
    tx_pos: [f64; 3],
    rx_pos: [f64; 3],
    freq: &FrequencyConfig,
) -> Result<CouplingTensor> {
    layered_coupling_with(medium, tx_pos, rx_pos, freq, QuadratureRule::Auto)
}

pub fn layered_coupling_with(
    medium: &LayeredMedium,
    tx_pos: [f64; 3],
    rx_pos: [f64; 3],
    freq: &FrequencyConfig,
    rule: QuadratureRule,
) -> Result<CouplingTensor> {
    medium.validate()?;
    freq.validate()?;
    check_point(&tx_pos, "transmitter")?;
    check_point(&rx_pos, "receiver")?;
    let offset = [rx_pos[0] - tx_pos[0], rx_pos[1] - tx_pos[1], rx_pos[2] - tx_pos[2]];
    if norm3(&offset) == 0.0 {
        return Err(EmError::DegenerateGeometry(
            "transmitter and receiver coincide".into(),
        ));
    }
    let src = medium.layer_index(tx_pos[2])?;
    let rcv = medium.layer_index(rx_pos[2])?;
    let omega = freq.angular_frequency();

    let same_layer = src == rcv;
    let mut total = if same_layer {
        ti_primary(&medium.layers[src], offset, omega)
    } else {
        CouplingTensor::zeros()
    };
    if medium.layers.len() > 1 {
        let stack = Stack::new(medium, omega);
        let geom = Geometry {
            src,
            z_s: tx_pos[2],
            rcv,
            z_r: rx_pos[2],
            boundaries: &medium.boundaries,
        };
        total = total + spectral_part(&stack, &geom, offset, rule)?;
    }
    Ok(total.apply_convention(freq.time_convention))
}

/// Per-layer quantities that do not depend on `κ`.
struct Stack {
    omega: f64,
    mu: Vec<f64>,
    kh2: Vec<Complex64>,
    lambda2: Vec<Complex64>,
    sigma_h: Vec<Complex64>,
    thickness: Vec<f64>,
    max_k: f64,
}

impl Stack {
    fn new(medium: &LayeredMedium, omega: f64) -> Self {
        let n = medium.layers.len();
        let mut thickness = vec![f64::INFINITY; n];
        for i in 1..n.saturating_sub(1) {
            thickness[i] = medium.boundaries[i] - medium.boundaries[i - 1];
        }
        let kh2: Vec<_> = medium
            .layers
            .iter()
            .map(|l| Complex64::i() * omega * l.permeability * l.sigma_h(omega))
            .collect();
        let max_k = medium
            .layers
            .iter()
            .map(|l| l.k_h(omega).norm().max(l.k_v(omega).norm()))
            .fold(0.0, f64::max);
        Self {
            omega,
            mu: medium.layers.iter().map(|l| l.permeability).collect(),
            kh2,
            lambda2: medium
                .layers
                .iter()
                .map(|l| l.sigma_h(omega) / l.sigma_v(omega))
                .collect(),
            sigma_h: medium.layers.iter().map(|l| l.sigma_h(omega)).collect(),
            thickness,
            max_k,
        }
    }

    fn len(&self) -> usize {
        self.mu.len()
    }

    fn line(&self, kappa: f64, mode: Mode) -> Line {
        let n = self.len();
        let k2 = kappa * kappa;
        let zero = Complex64::new(0.0, 0.0);
        let mut gamma = Layers::with_capacity(n);
        let mut y0 = Layers::with_capacity(n);
        let mut expo = Layers::with_capacity(n);
        for i in 0..n {
            let g = match mode {
                Mode::Te => csqrt(Complex64::from(k2) - self.kh2[i]),
                Mode::Tm => csqrt(self.lambda2[i] * k2 - self.kh2[i]),
            };
            gamma.push(g);
            y0.push(match mode {
                Mode::Te => g / (Complex64::i() * self.omega * self.mu[i]),
                Mode::Tm => self.sigma_h[i] / g,
            });
            expo.push(if self.thickness[i].is_finite() {
                (-g * self.thickness[i]).exp()
            } else {
                zero
            });
        }
        let mut down = Layers::from_elem(zero, n);
        for i in (0..n - 1).rev() {
            let t = down[i + 1] * expo[i + 1] * expo[i + 1];
            let y_in = y0[i + 1] * (1.0 - t) / (1.0 + t);
            down[i] = (y0[i] - y_in) / (y0[i] + y_in);
        }
        let mut up = Layers::from_elem(zero, n);
        for i in 1..n {
            let t = up[i - 1] * expo[i - 1] * expo[i - 1];
            let y_in = y0[i - 1] * (1.0 - t) / (1.0 + t);
            up[i] = (y0[i] - y_in) / (y0[i] + y_in);
        }
        Line {
            gamma,
            y0,
            expo,
            down,
            up,
        }
    }
}

type Layers = SmallVec<[Complex64; 5]>;

/// Principal square root without the polar round trip.
fn csqrt(z: Complex64) -> Complex64 {
    let (a, b) = (z.re, z.im);
    if a == 0.0 && b == 0.0 {
        return Complex64::new(0.0, b);
    }
    let t = ((z.norm() + a.abs()) * 0.5).sqrt();
    if a >= 0.0 {
        Complex64::new(t, b / (2.0 * t))
    } else {
        Complex64::new(b.abs() / (2.0 * t), t.copysign(b))
    }
}

#[derive(Clone, Copy)]
enum Mode {
    Te,
    Tm,
}

/// One mode's equivalent transmission line at a fixed `κ`.
struct Line {
    gamma: Layers,
    y0: Layers,
    /// `exp(-Γ h)` per layer, zero for the half-spaces.
    expo: Layers,
    /// Reflection coefficient at the bottom of each layer, looking down.
    down: Layers,
    /// Reflection coefficient at the top of each layer, looking up.
    up: Layers,
}

struct Geometry<'a> {
    src: usize,
    z_s: f64,
    rcv: usize,
    z_r: f64,
    boundaries: &'a [f64],
}

impl Geometry<'_> {
    fn top(&self, layer: usize) -> Option<f64> {
        (layer > 0).then(|| self.boundaries[layer - 1])
    }

    fn bottom(&self, layer: usize) -> Option<f64> {
        self.boundaries.get(layer).copied()
    }

    /// Vertical distance governing the exponential decay of the spectral
    /// kernels (image distance for same-layer secondary fields).
    fn decay_length(&self) -> f64 {
        if self.src != self.rcv {
            return (self.z_r - self.z_s).abs();
        }
        let mut h = f64::INFINITY;
        if let Some(t) = self.top(self.src) {
            h = h.min((self.z_s - t) + (self.z_r - t));
        }
        if let Some(b) = self.bottom(self.src) {
            h = h.min((b - self.z_s) + (b - self.z_r));
        }
        h
    }
}

/// Voltage and current at the receiver for each `(series voltage, shunt
/// current)` source pair. Same-layer responses omit the direct wave.
fn response<const N: usize>(
    line: &Line,
    g: &Geometry,
    sources: [(Complex64, Complex64); N],
) -> [(Complex64, Complex64); N] {
    let zero = Complex64::new(0.0, 0.0);
    let s = g.src;
    let gam = line.gamma[s];
    let y0 = line.y0[s];

    let (rd, p) = match g.bottom(s) {
        Some(zb) => (line.down[s], (-gam * (zb - g.z_s)).exp()),
        None => (zero, zero),
    };
    let (ru, q) = match g.top(s) {
        Some(zt) => (line.up[s], (-gam * (g.z_s - zt)).exp()),
        None => (zero, zero),
    };
    let e = line.expo[s];
    let den = 1.0 - rd * ru * e * e;
    // down-going `a` and up-going `b` at z_s; up-going amplitude referenced
    // at the bottom, down-going at the top
    let amplitudes = sources.map(|(v, i)| {
        let a = (v + i / y0) * 0.5;
        let b = (-v + i / y0) * 0.5;
        let c_up = rd * (a * p + ru * e * b * q) / den;
        let c_down = ru * (b * q + c_up * e);
        (a, b, c_up, c_down)
    });

    if g.rcv == s {
        let wt = g.top(s).map_or(zero, |zt| (-gam * (g.z_r - zt)).exp());
        let wb = g.bottom(s).map_or(zero, |zb| (-gam * (zb - g.z_r)).exp());
        return amplitudes.map(|(_, _, c_up, c_down)| {
            let (d, u) = (c_down * wt, c_up * wb);
            (d + u, y0 * (d - u))
        });
    }

    // transfer from the total voltage leaving the source layer to the
    // receiver, identical for every source
    let (vt, it) = if g.rcv > s {
        let mut t = Complex64::new(1.0, 0.0);
        let mut m = s + 1;
        loop {
            let gm = line.gamma[m];
            let zt = g.boundaries[m - 1];
            let (r, em) = (line.down[m], line.expo[m]);
            let d = t / (1.0 + r * em * em);
            if m == g.rcv {
                let dn = (-gm * (g.z_r - zt)).exp();
                let upw = match g.bottom(m) {
                    Some(zb) => r * em * (-gm * (zb - g.z_r)).exp(),
                    None => zero,
                };
                break (d * (dn + upw), line.y0[m] * d * (dn - upw));
            }
            t = d * em * (1.0 + r);
            m += 1;
        }
    } else {
        let mut t = Complex64::new(1.0, 0.0);
        let mut m = s - 1;
        loop {
            let gm = line.gamma[m];
            let zb = g.boundaries[m];
            let (r, em) = (line.up[m], line.expo[m]);
            let u = t / (1.0 + r * em * em);
            if m == g.rcv {
                let upw = (-gm * (zb - g.z_r)).exp();
                let dn = match g.top(m) {
                    Some(zt) => r * em * (-gm * (g.z_r - zt)).exp(),
                    None => zero,
                };
                break (u * (upw + dn), -line.y0[m] * u * (upw - dn));
            }
            t = u * em * (1.0 + r);
            m -= 1;
        }
    };
    let down = g.rcv > s;
    amplitudes.map(|(a, b, c_up, c_down)| {
        let v = if down {
            a * p + c_down * e + c_up
        } else {
            b * q + c_down + c_up * e
        };
        (v * vt, v * it)
    })
}

/// Spectral integrands at `κ`:
/// J0 kernels `[xx, yy, zz]` and J1 kernels `[xx/yy shared, zx, xz]`.
fn kernels(stack: &Stack, g: &Geometry, kappa: f64) -> ([Complex64; 3], [Complex64; 3]) {
    let one = Complex64::new(1.0, 0.0);
    let zero = Complex64::new(0.0, 0.0);
    let te = stack.line(kappa, Mode::Te);
    let tm = stack.line(kappa, Mode::Tm);
    let [(v_ev, i_ev), (v_ei, i_ei)] = response(&te, g, [(one, zero), (zero, one)]);
    let [(_, i_mv)] = response(&tm, g, [(one, zero)]);
    let iwmu_s = Complex64::i() * stack.omega * stack.mu[g.src];
    let wmu_r = stack.omega * stack.mu[g.rcv];
    let k2 = kappa * kappa;
    (
        [
            -iwmu_s * i_ev * kappa,
            iwmu_s * i_mv * kappa,
            -Complex64::i() * k2 * kappa * v_ei / wmu_r,
        ],
        [
            iwmu_s * (i_ev + i_mv),
            k2 * v_ev * (stack.mu[g.src] / stack.mu[g.rcv]),
            k2 * i_ei,
        ],
    )
}

/// Spectral (or, across layers, total) coupling rotated back from the
/// offset-aligned frame.
fn spectral_part(
    stack: &Stack,
    g: &Geometry,
    offset: [f64; 3],
    rule: QuadratureRule,
) -> Result<CouplingTensor> {
    let rho = offset[0].hypot(offset[1]);
    let h = g.decay_length();
    let use_filter = match rule {
        QuadratureRule::Filter => true,
        QuadratureRule::Adaptive => false,
        QuadratureRule::Auto => rho >= FILTER_MIN_RATIO * h,
    };
    if use_filter && rho == 0.0 {
        return Err(EmError::DegenerateGeometry(
            "digital filter needs a nonzero horizontal offset".into(),
        ));
    }
    // entries: xx, yy, zz, zx (row z, col x), xz
    let e = if use_filter {
        // kernels decay like exp(-κh) once κ exceeds every |k|
        let k_max = 60.0 / h + 4.0 * stack.max_k;
        let (j0, j1) = filter_transform::<3>(rho, k_max, |k| kernels(stack, g, k));
        [
            j0[0] + j1[0] / rho,
            j0[1] - j1[0] / rho,
            j0[2],
            j1[1],
            j1[2],
        ]
    } else {
        if !h.is_finite() || h <= 0.0 {
            return Err(EmError::DegenerateGeometry(format!(
                "no decay length for direct quadrature (rho={rho}, h={h})"
            )));
        }
        let upper = 60.0 / h + 4.0 * stack.max_k;
        adaptive::<5>(0.0, upper, &AdaptiveOptions::default(), "layered kernel", |k| {
            let (f0, f1) = kernels(stack, g, k);
            let x = k * rho;
            let j0 = puruspe::bessel::Jn(0, x);
            let j1 = puruspe::bessel::Jn(1, x);
            // J1(kρ)/ρ → k/2 as ρ → 0
            let j1_over_rho = if x < 1e-8 { 0.5 * k } else { j1 / rho };
            [
                f0[0] * j0 + f1[0] * j1_over_rho,
                f0[1] * j0 - f1[0] * j1_over_rho,
                f0[2] * j0,
                f1[1] * j1,
                f1[2] * j1,
            ]
        })?
    };
    let scale = 1.0 / (2.0 * PI);
    let mut local = CouplingTensor::zeros();
    local.h[0][0] = e[0] * scale;
    local.h[1][1] = e[1] * scale;
    local.h[2][2] = e[2] * scale;
    local.h[2][0] = e[3] * scale;
    local.h[0][2] = e[4] * scale;
    if rho == 0.0 {
        return Ok(local);
    }
    let (c, s) = (offset[0] / rho, offset[1] / rho);
    // rows of R are the global axes expressed in the offset-aligned frame
    let r = [[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]];
    Ok(local.similarity(&r))
}
