//! Closed-form couplings in an unbounded TI medium.

use std::f64::consts::PI;

use num_complex::Complex64;

use super::{check_point, CouplingTensor, EmError, FrequencyConfig, MediumProperties, Result};

/// Coupling between a unit magnetic dipole and a receiver displaced by
/// `offset` (receiver minus transmitter) in a homogeneous TI medium.
pub fn full_space_coupling(
    medium: &MediumProperties,
    offset: [f64; 3],
    freq: &FrequencyConfig,
) -> Result<CouplingTensor> {
    medium.validate()?;
    freq.validate()?;
    check_point(&offset, "offset")?;
    let r = norm3(&offset);
    if r == 0.0 {
        return Err(EmError::DegenerateGeometry(
            "transmitter and receiver coincide".into(),
        ));
    }
    Ok(ti_primary(medium, offset, freq.angular_frequency()).apply_convention(freq.time_convention))
}

pub(crate) fn norm3(v: &[f64; 3]) -> f64 {
    (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt()
}

/// exp(-iωt) full-space TI coupling; `offset` must be nonzero.
///
/// The TE part only sees `σ_h`, so the tensor is the isotropic dipole field
/// at `k_h` plus a TM correction acting on the horizontal `ρ̂ρ̂` and `φ̂φ̂`
/// projectors.
pub(crate) fn ti_primary(medium: &MediumProperties, offset: [f64; 3], omega: f64) -> CouplingTensor {
    let kh = medium.k_h(omega);
    let mut t = isotropic_tensor(kh, offset);
    if medium.rho_h == medium.rho_v {
        return t;
    }
    let kv = medium.k_v(omega);
    let lambda = kh / kv;
    let [dx, dy, dz] = offset;
    let rho2 = dx * dx + dy * dy;
    let rho = rho2.sqrt();
    let r = norm3(&offset);
    let s = (Complex64::from(rho2) + lambda * lambda * dz * dz).sqrt();
    let i = Complex64::i();

    // P = (exp(i k_v s) - exp(i k_h r)) / ρ², evaluated without cancellation.
    let one_minus_l2 = Complex64::from(1.0) - lambda * lambda;
    let denom = s + lambda * r;
    let delta = kv * rho2 * one_minus_l2 / denom;
    let p = (i * kh * r).exp() * i * kv * one_minus_l2 / denom * expm1_over(i * delta);

    let four_pi = 4.0 * PI;
    let d_xx = kh * p / (four_pi * i);
    let d_yy = (kh * kv * (i * kv * s).exp() / s - kh * kh * (i * kh * r).exp() / r) / four_pi - d_xx;

    if rho > 0.0 {
        let (c, sn) = (dx / rho, dy / rho);
        // ρ̂ = (c, s), φ̂ = (-s, c)
        t.h[0][0] += d_xx * c * c + d_yy * sn * sn;
        t.h[1][1] += d_xx * sn * sn + d_yy * c * c;
        let xy = (d_xx - d_yy) * c * sn;
        t.h[0][1] += xy;
        t.h[1][0] += xy;
    } else {
        t.h[0][0] += d_xx;
        t.h[1][1] += d_yy;
    }
    t
}

/// Textbook isotropic magnetic-dipole tensor
/// `e^{ikr}/(4πr³) [r̂r̂ᵀ(3 - 3ikr - k²r²) - I(1 - ikr - k²r²)]`.
pub(crate) fn isotropic_tensor(k: Complex64, offset: [f64; 3]) -> CouplingTensor {
    let r = norm3(&offset);
    let u = [offset[0] / r, offset[1] / r, offset[2] / r];
    let ikr = Complex64::i() * k * r;
    let k2r2 = k * k * r * r;
    let pref = ikr.exp() / (4.0 * PI * r * r * r);
    let a = pref * (3.0 - 3.0 * ikr - k2r2);
    let b = pref * (1.0 - ikr - k2r2);
    let mut t = CouplingTensor::zeros();
    for i in 0..3 {
        for j in 0..3 {
            t.h[i][j] = a * u[i] * u[j];
        }
        t.h[i][i] -= b;
    }
    t
}

/// `(e^w - 1) / w`, accurate for small `|w|`.
fn expm1_over(w: Complex64) -> Complex64 {
    if w.norm() < 1e-3 {
        1.0 + w / 2.0 + w * w / 6.0 + w * w * w / 24.0 + w * w * w * w / 120.0
    } else {
        (w.exp() - 1.0) / w
    }
}
