//! Damped least-squares (Levenberg-Marquardt) fit of the SHO amplitude model
//! to a measured band-excitation spectrum.

use crate::scalar::{wrap_phase, Scalar};
use crate::sho::{BeSpectrum, ShoParams};
use thiserror::Error;

pub const MAX_ITERATIONS: usize = 200;
pub const RELATIVE_TOLERANCE: f64 = 1e-8;
const MIN_BINS: usize = 8;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FitError {
    #[error("spectrum has {0} bins, at least {MIN_BINS} required")]
    TooFewBins(usize),
    #[error("spectrum arrays are inconsistent")]
    Inconsistent,
    #[error("no resonance peak above the noise floor")]
    NoPeak,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ShoFit<T> {
    /// Fitted oscillator. `phase_offset_rad` is the measured phase at the
    /// fitted resonance shifted by +pi/2, so a +1 domain with no instrument
    /// offset reads 0 and a -1 domain reads pi.
    pub params: ShoParams<T>,
    /// Measured phase interpolated at the fitted resonance frequency.
    pub phase_rad: T,
    pub residual_rms: T,
    pub iterations: usize,
    /// False when the iteration cap was hit; `params` is then best-so-far.
    pub converged: bool,
}

/// Model amplitude and its gradient with respect to `(a0, f0, Q)`.
pub fn amplitude_and_gradient<T: Scalar>(f: T, theta: [T; 3]) -> (T, [T; 3]) {
    let [a0, f0, q] = theta;
    let u = f / f0;
    let re = T::one() - u * u;
    let im = u / q;
    let d = re * re + im * im;
    let inv_sqrt = T::one() / d.sqrt();
    let inv_d32 = inv_sqrt / d;
    let two = T::of(2.0);
    let half = T::of(0.5);
    let dd_du = -two * two * u * re + two * u / (q * q);
    let g_a0 = inv_sqrt;
    let g_f0 = half * a0 * inv_d32 * dd_du * (u / f0);
    let g_q = a0 * u * u * inv_d32 / (q * q * q);
    (a0 * inv_sqrt, [g_a0, g_f0, g_q])
}

/// Initial guess: resonance at the amplitude maximum, Q from the half-power
/// bandwidth (full width at half maximum of the power spectrum).
pub fn initial_guess<T: Scalar>(s: &BeSpectrum<T>) -> Result<[T; 3], FitError> {
    check(s)?;
    let (imax, amax) = argmax(&s.amplitude);
    let amin = s.amplitude.iter().copied().fold(T::infinity(), T::min);
    if !(amax > T::zero()) || amax == amin {
        return Err(FitError::NoPeak);
    }
    let f_peak = s.frequency_hz[imax];
    let level = amax / T::of(2.0).sqrt();
    let lower = crossing(s, imax, level, false);
    let upper = crossing(s, imax, level, true);
    let width = match (lower, upper) {
        (Some(l), Some(u)) => u - l,
        (Some(l), None) => (f_peak - l) * T::of(2.0),
        (None, Some(u)) => (u - f_peak) * T::of(2.0),
        (None, None) => *s.frequency_hz.last().unwrap() - s.frequency_hz[0],
    };
    let q = if width > T::zero() { f_peak / width } else { T::of(100.0) };
    let q = q.max(T::of(1.5));
    Ok([amax / q, f_peak, q])
}

/// Fits `(a0, f0, Q)`; phase is read from the measured spectrum at the fitted
/// resonance.
pub fn fit_sho<T: Scalar>(s: &BeSpectrum<T>) -> Result<ShoFit<T>, FitError> {
    let mut theta = initial_guess(s)?;
    let n = s.len();
    let cost_of = |th: &[T; 3]| -> T {
        s.frequency_hz
            .iter()
            .zip(&s.amplitude)
            .map(|(&f, &a)| {
                let (m, _) = amplitude_and_gradient(f, *th);
                (m - a) * (m - a)
            })
            .sum()
    };
    let mut cost = cost_of(&theta);
    let mut lambda = T::of(1e-3);
    let tol = T::of(RELATIVE_TOLERANCE);
    let mut converged = false;
    let mut iterations = 0;

    while iterations < MAX_ITERATIONS {
        iterations += 1;
        if cost == T::zero() {
            converged = true;
            break;
        }
        let mut jtj = [[T::zero(); 3]; 3];
        let mut jtr = [T::zero(); 3];
        for (&f, &a) in s.frequency_hz.iter().zip(&s.amplitude) {
            let (m, g) = amplitude_and_gradient(f, theta);
            let r = m - a;
            for i in 0..3 {
                jtr[i] = jtr[i] + g[i] * r;
                for j in 0..3 {
                    jtj[i][j] = jtj[i][j] + g[i] * g[j];
                }
            }
        }
        let mut accepted = false;
        while lambda < T::of(1e16) {
            let mut a = jtj;
            for (i, row) in a.iter_mut().enumerate() {
                row[i] = row[i] * (T::one() + lambda);
            }
            let rhs = [-jtr[0], -jtr[1], -jtr[2]];
            let Some(delta) = solve3(a, rhs) else {
                lambda = lambda * T::of(10.0);
                continue;
            };
            let rel = (0..3)
                .map(|k| (delta[k] / theta[k]).abs())
                .fold(T::zero(), T::max);
            let cand = [theta[0] + delta[0], theta[1] + delta[1], theta[2] + delta[2]];
            let feasible = cand[0] > T::zero() && cand[1] > T::zero() && cand[2] > T::one();
            let cand_cost = if feasible { cost_of(&cand) } else { T::infinity() };
            if cand_cost <= cost {
                theta = cand;
                cost = cand_cost;
                lambda = (lambda / T::of(10.0)).max(T::of(1e-12));
                accepted = true;
                if rel < tol {
                    converged = true;
                }
                break;
            }
            if rel < tol {
                // The step is below resolution and still not downhill: minimum reached.
                converged = true;
                break;
            }
            lambda = lambda * T::of(10.0);
        }
        if converged {
            break;
        }
        if !accepted {
            // Damping saturated without progress; treat as stationary.
            converged = true;
            break;
        }
    }

    let params = ShoParams { a0: theta[0], f0_hz: theta[1], q_factor: theta[2], phase_offset_rad: T::zero() };
    let phase = interpolate_phase(s, theta[1]);
    Ok(ShoFit {
        params: ShoParams { phase_offset_rad: wrap_phase(phase + T::FRAC_PI_2()), ..params },
        phase_rad: phase,
        residual_rms: (cost / T::of_usize(n)).sqrt(),
        iterations,
        converged,
    })
}

fn check<T: Scalar>(s: &BeSpectrum<T>) -> Result<(), FitError> {
    if s.len() < MIN_BINS {
        return Err(FitError::TooFewBins(s.len()));
    }
    if !s.is_consistent() {
        return Err(FitError::Inconsistent);
    }
    Ok(())
}

fn argmax<T: Scalar>(v: &[T]) -> (usize, T) {
    let mut best = (0, v[0]);
    for (i, &x) in v.iter().enumerate().skip(1) {
        if x > best.1 {
            best = (i, x);
        }
    }
    best
}

fn crossing<T: Scalar>(s: &BeSpectrum<T>, peak: usize, level: T, upward: bool) -> Option<T> {
    let a = &s.amplitude;
    let f = &s.frequency_hz;
    let mut i = peak;
    loop {
        let j = if upward {
            if i + 1 >= a.len() {
                return None;
            }
            i + 1
        } else {
            if i == 0 {
                return None;
            }
            i - 1
        };
        if a[j] < level {
            let t = (a[i] - level) / (a[i] - a[j]);
            return Some(f[i] + (f[j] - f[i]) * t);
        }
        i = j;
    }
}

/// Linear interpolation of the (wrapped) phase at frequency `f`, unwrapping
/// across the bracketing pair.
fn interpolate_phase<T: Scalar>(s: &BeSpectrum<T>, f: T) -> T {
    let fr = &s.frequency_hz;
    if f <= fr[0] {
        return s.phase_rad[0];
    }
    if f >= fr[fr.len() - 1] {
        return s.phase_rad[fr.len() - 1];
    }
    let hi = fr.partition_point(|&x| x <= f);
    let lo = hi - 1;
    let t = (f - fr[lo]) / (fr[hi] - fr[lo]);
    let p0 = s.phase_rad[lo];
    let step = wrap_phase(s.phase_rad[hi] - p0);
    wrap_phase(p0 + step * t)
}

fn solve3<T: Scalar>(mut a: [[T; 3]; 3], mut b: [T; 3]) -> Option<[T; 3]> {
    for col in 0..3 {
        let piv = (col..3).max_by(|&i, &j| a[i][col].abs().partial_cmp(&a[j][col].abs()).unwrap())?;
        if !(a[piv][col].abs() > T::zero()) {
            return None;
        }
        a.swap(col, piv);
        b.swap(col, piv);
        for row in col + 1..3 {
            let k = a[row][col] / a[col][col];
            for c in col..3 {
                a[row][c] = a[row][c] - k * a[col][c];
            }
            b[row] = b[row] - k * b[col];
        }
    }
    let mut x = [T::zero(); 3];
    for row in (0..3).rev() {
        let mut acc = b[row];
        for c in row + 1..3 {
            acc = acc - a[row][c] * x[c];
        }
        x[row] = acc / a[row][row];
    }
    x.iter().all(|v| v.is_finite()).then_some(x)
}
