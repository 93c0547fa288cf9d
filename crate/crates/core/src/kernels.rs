//! Survival and transfer kernels, and the scalar constants derived from
//! them that the stability certificates use.

use std::sync::OnceLock;

use serde::Serialize;
use thiserror::Error;

use crate::flow;
use crate::model::ValidatedModel;
use crate::quad::{GaussLegendre, KernelQuad};

/// Default Gauss-Legendre order for the attenuation and kernel integrals.
pub const DEFAULT_QUAD_ORDER: usize = 32;

/// Grid size for the maturity suprema/infima entering the constants.
const MATURITY_SCAN: usize = 512;

#[derive(Debug, Error)]
pub enum KernelError {
    #[error("age {value} outside [{lo}, {hi}]")]
    OutOfRange { value: f64, lo: f64, hi: f64 },
}

fn default_gl() -> &'static GaussLegendre {
    static GL: OnceLock<GaussLegendre> = OnceLock::new();
    GL.get_or_init(|| GaussLegendre::new(DEFAULT_QUAD_ORDER))
}

/// Probability that a proliferating cell has not divided by age `a`:
/// `exp(-int_0^a kappa) = ((tau_upper - a)/(tau_upper - tau_lower))^shape`
/// on the kernel support, `1` below `tau_lower`, `0` at `tau_upper`.
pub fn survival(model: &ValidatedModel, a: f64) -> Result<f64, KernelError> {
    let (lo, hi) = (model.tau_lower(), model.tau_upper());
    if a < 0.0 || a > hi {
        return Err(KernelError::OutOfRange {
            value: a,
            lo: 0.0,
            hi,
        });
    }
    if a <= lo {
        return Ok(1.0);
    }
    Ok(((hi - a) / (hi - lo)).powf(model.kernel_shape()))
}

/// Age-at-division density `k(a) = kappa(a) * survival(a)`; integrates to 1
/// over `[tau_lower, tau_upper]`. Ages in `[0, tau_lower)` return 0.
pub fn division_density(model: &ValidatedModel, a: f64) -> Result<f64, KernelError> {
    let hi = model.tau_upper();
    if a < 0.0 || a > hi {
        return Err(KernelError::OutOfRange {
            value: a,
            lo: 0.0,
            hi,
        });
    }
    Ok(division_density_unchecked(model, a))
}

pub(crate) fn division_density_unchecked(model: &ValidatedModel, a: f64) -> f64 {
    let (lo, hi) = (model.tau_lower(), model.tau_upper());
    if a < lo {
        return 0.0;
    }
    let c = model.kernel_shape();
    c * (hi - a).powf(c - 1.0) / (hi - lo).powf(c)
}

/// Which loss rate weighs an attenuation integral.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Phase {
    /// gamma + V': proliferating compartment
    Proliferating,
    /// delta + V': resting compartment
    Resting,
}

fn attenuation(model: &ValidatedModel, phase: Phase, t: f64, m: f64, gl: &GaussLegendre) -> f64 {
    debug_assert!(t >= 0.0);
    if t == 0.0 {
        return 1.0;
    }
    let rate = |mm: f64| -> f64 {
        let r = match phase {
            Phase::Proliferating => model.gamma(mm),
            Phase::Resting => model.delta(mm),
        };
        r + model.velocity_derivative(mm)
    };
    if m == 0.0 {
        // the flow fixes maturity zero, so the exponent is linear in t
        return (-t * rate(0.0)).exp();
    }
    let y0 = flow::log_h(model, m);
    let exponent = gl.integrate(0.0, t, |s| rate(flow::h_inv_log(model, y0 - s)));
    (-exponent).exp()
}

/// Attenuation along the flow weighted by the proliferating loss:
/// `xi(t, m) = exp(-int_0^t gamma(pi_{-s}(m)) + V'(pi_{-s}(m)) ds)`.
pub fn xi(model: &ValidatedModel, t: f64, m: f64) -> f64 {
    attenuation(model, Phase::Proliferating, t, m, default_gl())
}

/// [`xi`] with a caller-supplied quadrature rule.
pub fn xi_with(model: &ValidatedModel, t: f64, m: f64, gl: &GaussLegendre) -> f64 {
    attenuation(model, Phase::Proliferating, t, m, gl)
}

/// Attenuation along the flow weighted by the resting loss:
/// `K(t, m) = exp(-int_0^t delta(pi_{-s}(m)) + V'(pi_{-s}(m)) ds)`.
/// Bounded above by `exp(-I t)` with `I = inf(delta + V')`.
pub fn big_k(model: &ValidatedModel, t: f64, m: f64) -> f64 {
    attenuation(model, Phase::Resting, t, m, default_gl())
}

/// [`big_k`] with a caller-supplied quadrature rule.
pub fn big_k_with(model: &ValidatedModel, t: f64, m: f64, gl: &GaussLegendre) -> f64 {
    attenuation(model, Phase::Resting, t, m, gl)
}

/// Gain kernel `zeta(a, m) = g_inv'(m) k(a) xi(a, g_inv(m))`: the rate at
/// which division of mothers at `g_inv(m)`, entered a time units ago,
/// deposits daughters at maturity `m`. Vanishes above `g(1)`.
pub fn zeta(model: &ValidatedModel, a: f64, m: f64) -> f64 {
    let jac = model.g_inv_derivative(m);
    if jac == 0.0 {
        return 0.0;
    }
    jac * division_density_unchecked(model, a) * xi(model, a, model.g_inv(m))
}

/// The maturity-free part of `sup_m |zeta(a, m)|`: maximum over maturities
/// of `g_inv'(m) xi(a, g_inv(m))`, scanned on a 512-point grid with one
/// parabolic refinement (a lower bound within ~1e-6 of the true supremum
/// for the smooth families).
fn zeta_sup_factor(model: &ValidatedModel, a: f64) -> f64 {
    let g1 = model.g1();
    let f = |m: f64| model.g_inv_derivative(m) * xi(model, a, model.g_inv(m));
    let mut best = f(0.0).max(f(g1));
    let mut best_idx = 0usize;
    let step = g1 / (MATURITY_SCAN - 1) as f64;
    for i in 0..MATURITY_SCAN {
        let v = f(i as f64 * step);
        if v > best {
            best = v;
            best_idx = i;
        }
    }
    if best_idx > 0 && best_idx < MATURITY_SCAN - 1 {
        let refined = flow::golden_max(
            f,
            (best_idx - 1) as f64 * step,
            (best_idx + 1) as f64 * step,
        );
        best = best.max(refined);
    }
    best
}

/// `zeta_tilde = int over the kernel support of sup_m |zeta(a, m)| da`.
pub fn zeta_tilde(model: &ValidatedModel, quad_order: usize) -> f64 {
    let quad = KernelQuad::new(model, quad_order);
    quad.integrate(|a| zeta_sup_factor(model, a))
}

/// Renewal kernel at the primitive boundary, `Z(a) = e^{-nu a} k(a)` with
/// `nu = gamma(0) + V'(0)`.
///
/// Note this drops the daughter-density Jacobian `g_inv'(0)`; the full
/// boundary gain kernel is `zeta(a, 0) = g_inv'(0) Z(a)`. The certificates
/// use `Z` as-is and the stability report flags the distinction whenever
/// `g_inv'(0) != 1`.
pub fn renewal_kernel(model: &ValidatedModel, a: f64) -> f64 {
    let nu = model.gamma(0.0) + model.velocity_derivative(0.0);
    (-nu * a).exp() * division_density_unchecked(model, a)
}

/// Renewal mass `z = int Z(a) da`; equals 1 exactly when `nu = 0`.
pub fn renewal_mass(model: &ValidatedModel, quad_order: usize) -> f64 {
    let nu = model.gamma(0.0) + model.velocity_derivative(0.0);
    let quad = KernelQuad::new(model, quad_order);
    quad.integrate(|a| (-nu * a).exp())
}

/// Lipschitz bound of `x -> x beta(m, x)` near zero, uniform in maturity:
/// `L = sup_m a(m)/b(m)` for the Hill family.
pub fn lipschitz_bound(model: &ValidatedModel) -> f64 {
    let ratio = |m: f64| model.beta(m, 0.0);
    let mut best = f64::NEG_INFINITY;
    let mut best_idx = 0usize;
    for i in 0..MATURITY_SCAN {
        let v = ratio(i as f64 / (MATURITY_SCAN - 1) as f64);
        if v > best {
            best = v;
            best_idx = i;
        }
    }
    if best_idx > 0 && best_idx < MATURITY_SCAN - 1 {
        let step = 1.0 / (MATURITY_SCAN - 1) as f64;
        best = best.max(flow::golden_max(
            ratio,
            (best_idx - 1) as f64 * step,
            (best_idx + 1) as f64 * step,
        ));
    }
    best
}

/// Every scalar constant the stability theorems use.
///
/// `rho` is the supremal certified decay rate: the unique root in
/// `(0, i_inf)` of `L (1 + 2 zeta_tilde e^{rho tau_upper}) = i_inf - rho`,
/// present only when the contraction criterion `L (2 zeta_tilde + 1) <
/// i_inf` holds. The stored value sits on the strict-contraction side of
/// the root, so `lipschitz * theta < 1` holds exactly.
#[derive(Debug, Clone, Serialize)]
pub struct DerivedConstants {
    /// `I = inf_m (delta(m) + V'(m))`, the least resting-phase loss rate.
    pub i_inf: f64,
    /// `I0 = delta(0) + V'(0)`, the resting loss at the boundary.
    pub i0: f64,
    /// `nu = gamma(0) + V'(0)`, the proliferating loss at the boundary.
    pub nu: f64,
    /// Renewal mass `z = int e^{-nu a} k(a) da`.
    pub z: f64,
    /// Gain mass `zeta_tilde = int sup_m |zeta(a, m)| da`.
    pub zeta_tilde: f64,
    /// Regeneration time; `None` when unbounded (`maturation_bounded` false).
    pub tau0: Option<f64>,
    /// Whether daughter-to-mother maturation times are uniformly bounded.
    pub maturation_bounded: bool,
    /// Lipschitz bound `L = sup_m a(m)/b(m)`.
    pub lipschitz: f64,
    /// Contraction factor `alpha = L (2 zeta_tilde + 1) / i_inf` (when
    /// `i_inf > 0`).
    pub alpha: Option<f64>,
    /// Certified decay rate (see type docs).
    pub rho: Option<f64>,
    /// Decay constant `theta = (1 + 2 zeta_tilde e^{rho tau_upper}) /
    /// (i_inf - rho)`.
    pub theta: Option<f64>,
}

/// Compute every derived constant for a model. Deterministic; the model
/// caches the result behind [`ValidatedModel::constants`].
pub fn derived_constants(model: &ValidatedModel) -> DerivedConstants {
    let loss = |m: f64| model.delta(m) + model.velocity_derivative(m);
    let mut i_inf = f64::INFINITY;
    let mut min_idx = 0usize;
    let step = 1.0 / (MATURITY_SCAN - 1) as f64;
    for i in 0..MATURITY_SCAN {
        let v = loss(i as f64 * step);
        if v < i_inf {
            i_inf = v;
            min_idx = i;
        }
    }
    if min_idx > 0 && min_idx < MATURITY_SCAN - 1 {
        let refined = -flow::golden_max(
            |m| -loss(m),
            (min_idx - 1) as f64 * step,
            (min_idx + 1) as f64 * step,
        );
        i_inf = i_inf.min(refined);
    }

    let i0 = loss(0.0);
    let nu = model.gamma(0.0) + model.velocity_derivative(0.0);
    let z = renewal_mass(model, DEFAULT_QUAD_ORDER);
    let zt = zeta_tilde(model, DEFAULT_QUAD_ORDER);
    let lipschitz = lipschitz_bound(model);
    let tau0 = flow::tau0(model, flow::TAU0_CAP).ok();

    let alpha = if i_inf > 0.0 {
        Some(lipschitz * (2.0 * zt + 1.0) / i_inf)
    } else {
        None
    };
    let (rho, theta) = match alpha {
        Some(a) if a < 1.0 => {
            let rho = solve_decay_rate(lipschitz, zt, i_inf, model.tau_upper());
            let theta = (1.0 + 2.0 * zt * (rho * model.tau_upper()).exp()) / (i_inf - rho);
            (Some(rho), Some(theta))
        }
        _ => (None, None),
    };

    DerivedConstants {
        i_inf,
        i0,
        nu,
        z,
        zeta_tilde: zt,
        tau0,
        maturation_bounded: tau0.is_some(),
        lipschitz,
        alpha,
        rho,
        theta,
    }
}

/// Bisect `f(rho) = L (1 + 2 zt e^{rho tau}) - (I - rho)` on `[0, I)`.
/// `f(0) < 0` by the contraction criterion and `f` is strictly increasing,
/// so the root is unique. Returns the lower end of the final bracket, where
/// `f < 0` still holds strictly.
fn solve_decay_rate(l: f64, zt: f64, i_inf: f64, tau_upper: f64) -> f64 {
    let f = |rho: f64| l * (1.0 + 2.0 * zt * (rho * tau_upper).exp()) - (i_inf - rho);
    let mut lo = 0.0;
    let mut hi = i_inf - 1e-12;
    if f(hi) <= 0.0 {
        return hi;
    }
    while hi - lo > 1e-13 {
        let mid = 0.5 * (lo + hi);
        if f(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    lo
}
