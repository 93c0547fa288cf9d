//! Maturation characteristics.
//!
//! The scale map `h(m) = exp(-time to mature from m to 1)` conjugates the
//! maturation flow to a unit-speed shift in `y = ln h(m)`: moving a cell
//! back `t` time units along its characteristic subtracts `t` from `y`.
//! Both supported velocity families admit closed forms for `h`, its inverse
//! and hence the flow, so no characteristic is ever integrated numerically.

use thiserror::Error;

use crate::model::{ValidatedModel, VelocityProfile};

#[derive(Debug, Error)]
pub enum FlowError {
    #[error("maturation time from maturity 0 diverges")]
    DegenerateMaturity,
    #[error("regeneration time unbounded (exceeds cap {cap:e}); daughters near maturity 0 cannot recover the mother maturity in bounded time")]
    Unbounded { cap: f64 },
}

/// A maturity together with its logarithmic flow coordinate `y = ln h(m)`,
/// the coordinate in which the backward flow is a unit-speed shift.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogMaturity {
    pub m: f64,
    pub y: f64,
}

impl LogMaturity {
    /// From a maturity in `(0, 1]`. `m = 0` has no finite coordinate.
    pub fn from_maturity(model: &ValidatedModel, m: f64) -> LogMaturity {
        LogMaturity {
            m,
            y: log_h(model, m),
        }
    }

    pub fn from_log(model: &ValidatedModel, y: f64) -> LogMaturity {
        LogMaturity {
            m: h_inv_log(model, y),
            y,
        }
    }
}

/// `ln h(m)` for `m` in `(0, 1]`; tends to `-inf` as `m -> 0`.
pub fn log_h(model: &ValidatedModel, m: f64) -> f64 {
    match model.config().velocity {
        VelocityProfile::Linear { rate } => m.ln() / rate,
        VelocityProfile::Power {
            coefficient,
            exponent,
        } => {
            if exponent == 1.0 {
                m.ln() / coefficient
            } else {
                -(m.powf(1.0 - exponent) - 1.0) / (coefficient * (exponent - 1.0))
            }
        }
    }
}

/// Inverse of `log_h`: maturity at flow coordinate `y <= 0`.
pub fn h_inv_log(model: &ValidatedModel, y: f64) -> f64 {
    if y == f64::NEG_INFINITY {
        return 0.0;
    }
    match model.config().velocity {
        VelocityProfile::Linear { rate } => (rate * y).exp(),
        VelocityProfile::Power {
            coefficient,
            exponent,
        } => {
            if exponent == 1.0 {
                (coefficient * y).exp()
            } else {
                (1.0 - coefficient * (exponent - 1.0) * y).powf(-1.0 / (exponent - 1.0))
            }
        }
    }
}

/// Exponential maturation coordinate `h(m) = exp(-int_m^1 d(theta)/V(theta))`
/// with `h(0) = 0`, `h(1) = 1`.
pub fn h(model: &ValidatedModel, m: f64) -> f64 {
    if m == 0.0 {
        return 0.0;
    }
    log_h(model, m).exp()
}

/// Inverse of `h` on `[0, 1]`; `h_inv(0) = 0`.
pub fn h_inv(model: &ValidatedModel, y: f64) -> f64 {
    if y == 0.0 {
        return 0.0;
    }
    h_inv_log(model, y.ln())
}

/// Characteristic flow `pi_s(m) = h_inv(h(m) e^s)` for `s <= 0`: the
/// maturity, `|s|` time units ago, of a cell at maturity `m` now.
pub fn pi(model: &ValidatedModel, s: f64, m: f64) -> f64 {
    if m == 0.0 {
        return 0.0;
    }
    if s == 0.0 {
        return m;
    }
    h_inv_log(model, log_h(model, m) + s)
}

/// Retardation map `Delta(a, m) = pi_{-a}(g_inv(m))`: the maturity, `a`
/// time units ago, of the mother of a cell now at maturity `m`.
pub fn retardation(model: &ValidatedModel, a: f64, m: f64) -> f64 {
    pi(model, -a, model.g_inv(m))
}

/// Time for a cell to mature from `m1` to `m2`, `0 < m1 <= m2 <= 1`.
pub fn maturation_time(model: &ValidatedModel, m1: f64, m2: f64) -> Result<f64, FlowError> {
    if m1 == 0.0 {
        return Err(FlowError::DegenerateMaturity);
    }
    Ok(log_h(model, m2) - log_h(model, m1))
}

/// Default divergence cap for [`tau0`].
pub const TAU0_CAP: f64 = 1e6;

/// Regeneration time `tau0 = sup over m of maturation_time(m, g_inv(m))`:
/// the longest time a daughter needs to re-reach its mother's maturity.
/// Finite exactly when maturation times to `g_inv` are uniformly bounded;
/// errors with [`FlowError::Unbounded`] past `cap` otherwise.
pub fn tau0(model: &ValidatedModel, cap: f64) -> Result<f64, FlowError> {
    // maturation_time(m, g_inv(m)) written in the flow coordinate: the sup
    // over m in (0, g1] suffices, since above g1 the target is pinned at 1
    // and the integral shrinks as m grows.
    let span = |y: f64| -> f64 {
        let m = h_inv_log(model, y);
        log_h(model, model.g_inv(m)) - y
    };
    let y_top = log_h(model, model.g1());
    let mut y_lo = y_top - 40.0;
    const POINTS: usize = 4096;
    loop {
        let step = (y_top - y_lo) / (POINTS - 1) as f64;
        let mut best_val = f64::NEG_INFINITY;
        let mut best_idx = 0usize;
        for i in 0..POINTS {
            // ties toward smaller m: scan from the bottom, strict improvement
            let idx = POINTS - 1 - i;
            let v = span(y_lo + idx as f64 * step);
            if v > best_val || (v == best_val && idx < best_idx) {
                best_val = v;
                best_idx = idx;
            }
            if v > cap {
                return Err(FlowError::Unbounded { cap });
            }
        }
        // If the maximum sits at the bottom edge and is still climbing,
        // extend the probe window toward m = 0.
        if best_idx == 0 && span(y_lo) > span(y_lo + step) + 1e-14 {
            y_lo = y_top - 2.0 * (y_top - y_lo);
            continue;
        }
        // golden-section refinement in the bracketing interval
        let a = y_lo + best_idx.saturating_sub(1) as f64 * step;
        let b = y_lo + (best_idx + 1).min(POINTS - 1) as f64 * step;
        return Ok(golden_max(span, a, b).max(best_val));
    }
}

/// Golden-section search for the maximum of `f` on `[a, b]`.
pub(crate) fn golden_max<F: Fn(f64) -> f64>(f: F, a: f64, b: f64) -> f64 {
    const INV_PHI: f64 = 0.618_033_988_749_894_9;
    let (mut a, mut b) = (a, b);
    let mut c = b - INV_PHI * (b - a);
    let mut d = a + INV_PHI * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    for _ in 0..80 {
        if fc >= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - INV_PHI * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + INV_PHI * (b - a);
            fd = f(d);
        }
        if (b - a).abs() < 1e-13 {
            break;
        }
    }
    fc.max(fd)
}
