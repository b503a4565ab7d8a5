//! Hankel transforms: fixed digital filter plus an adaptive quadrature
//! fallback for geometries the filter cannot resolve.

use num_complex::Complex64;

use super::filter_key201::{BASE, WEIGHTS_J0, WEIGHTS_J1};
use super::{EmError, Result};

/// `∫₀^∞ f0(k) J0(kρ) dk` and `∫₀^∞ f1(k) J1(kρ) dk` for `N` kernels at once.
///
/// `kernel(k)` returns `(f0, f1)`. Requires `rho > 0`. Abscissae beyond
/// `k_max` are treated as zero.
pub(crate) fn filter_transform<const N: usize>(
    rho: f64,
    k_max: f64,
    mut kernel: impl FnMut(f64) -> ([Complex64; N], [Complex64; N]),
) -> ([Complex64; N], [Complex64; N]) {
    let zero = Complex64::new(0.0, 0.0);
    let mut out0 = [zero; N];
    let mut out1 = [zero; N];
    for ((b, w0), w1) in BASE.iter().zip(WEIGHTS_J0.iter()).zip(WEIGHTS_J1.iter()) {
        let k = b / rho;
        if k > k_max {
            break;
        }
        let (f0, f1) = kernel(k);
        for n in 0..N {
            out0[n] += f0[n] * *w0;
            out1[n] += f1[n] * *w1;
        }
    }
    for n in 0..N {
        out0[n] /= rho;
        out1[n] /= rho;
    }
    (out0, out1)
}

// QUADPACK 15-point Kronrod nodes/weights and the embedded 7-point Gauss weights.
const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_18,
    0.140_653_259_715_525_92,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_83,
];
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

fn kronrod<const N: usize>(
    a: f64,
    b: f64,
    f: &mut impl FnMut(f64) -> [Complex64; N],
) -> ([Complex64; N], f64) {
    let zero = Complex64::new(0.0, 0.0);
    let center = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let mut k15 = [zero; N];
    let mut g7 = [zero; N];
    let fc = f(center);
    for n in 0..N {
        k15[n] = fc[n] * WGK[7];
        g7[n] = fc[n] * WG[3];
    }
    for j in 0..7 {
        let dx = half * XGK[j];
        let f1 = f(center - dx);
        let f2 = f(center + dx);
        for n in 0..N {
            let s = f1[n] + f2[n];
            k15[n] += s * WGK[j];
            if j % 2 == 1 {
                g7[n] += s * WG[j / 2];
            }
        }
    }
    let mut err: f64 = 0.0;
    for n in 0..N {
        k15[n] *= half;
        g7[n] *= half;
        err = err.max((k15[n] - g7[n]).norm());
    }
    (k15, err)
}

pub(crate) struct AdaptiveOptions {
    pub rel_tol: f64,
    pub max_intervals: usize,
    pub initial_panels: usize,
}

impl Default for AdaptiveOptions {
    fn default() -> Self {
        Self {
            rel_tol: 1e-11,
            max_intervals: 4000,
            initial_panels: 16,
        }
    }
}

/// Globally adaptive Gauss-Kronrod over `[a, b]` for a vector integrand.
pub(crate) fn adaptive<const N: usize>(
    a: f64,
    b: f64,
    opts: &AdaptiveOptions,
    entry: &'static str,
    mut f: impl FnMut(f64) -> [Complex64; N],
) -> Result<[Complex64; N]> {
    let zero = Complex64::new(0.0, 0.0);
    let mut panels: Vec<(f64, f64, [Complex64; N], f64)> = Vec::new();
    let width = (b - a) / opts.initial_panels as f64;
    for p in 0..opts.initial_panels {
        let lo = a + width * p as f64;
        let hi = if p + 1 == opts.initial_panels { b } else { lo + width };
        let (v, e) = kronrod(lo, hi, &mut f);
        panels.push((lo, hi, v, e));
    }
    loop {
        let mut total = [zero; N];
        let mut err_total = 0.0;
        for p in &panels {
            for n in 0..N {
                total[n] += p.2[n];
            }
            err_total += p.3;
        }
        let scale = total.iter().map(|v| v.norm()).fold(0.0, f64::max);
        if err_total <= opts.rel_tol * scale || err_total < 1e-300 {
            return Ok(total);
        }
        if panels.len() >= opts.max_intervals {
            return Err(EmError::Quadrature {
                entry,
                estimate: scale,
                error: err_total,
                evaluations: panels.len() * 15,
            });
        }
        let (worst, _) = panels
            .iter()
            .enumerate()
            .fold((0, -1.0), |acc, (i, p)| if p.3 > acc.1 { (i, p.3) } else { acc });
        let (lo, hi, _, _) = panels.swap_remove(worst);
        let mid = 0.5 * (lo + hi);
        let (v1, e1) = kronrod(lo, mid, &mut f);
        let (v2, e2) = kronrod(mid, hi, &mut f);
        panels.push((lo, mid, v1, e1));
        panels.push((mid, hi, v2, e2));
    }
}
