//! Scenario-level experiments: each one verifies, at configured
//! tolerances, a qualitative conclusion about the solved surface (decay,
//! finite-time extinction, finite-time agreement, equilibrium persistence).

use serde::Serialize;

use crate::dde::{self, DdeOptions, ScalarHistory};
use crate::flow;
use crate::model::ValidatedModel;
use crate::stability;

use super::grid::InitialData;
use super::solver::{solve_field, FieldParams};
use super::FieldError;

const GENERATION_CAP: usize = 1_000_000;

/// The generation recurrence bounding how fast agreement below a maturity
/// threshold propagates to the whole population.
#[derive(Debug, Clone, Serialize)]
pub struct ExtinctionTime {
    /// Time after which two solutions agreeing on `[0, b]` coincide
    /// everywhere.
    pub t_bar: f64,
    /// Maturity frontier per generation, starting at `b` and capped at
    /// `g(1)`.
    pub b_sequence: Vec<f64>,
    /// Number of advance-map applications.
    pub generations: usize,
}

/// One-generation advance: the inverse of `m -> Delta(tau_lower, m)`,
/// pinned at `g(1)` once the frontier can reach it.
fn advance_generation(model: &ValidatedModel, m: f64) -> f64 {
    let threshold = flow::h_inv_log(model, -model.tau_lower());
    if m >= threshold {
        model.g1()
    } else {
        model.g(flow::h_inv_log(
            model,
            flow::log_h(model, m) + model.tau_lower(),
        ))
    }
}

/// Time `t_bar` after which data agreeing on maturities `[0, b]` force the
/// whole surfaces to coincide. Requires the upward-propagation hypothesis
/// `tau_lower > tau0`.
pub fn extinction_time(model: &ValidatedModel, b: f64) -> Result<ExtinctionTime, FieldError> {
    if !(b > 0.0 && b <= 1.0) {
        return Err(FieldError::InvalidData(format!(
            "threshold b = {b} must lie in (0, 1]"
        )));
    }
    let tau0 = flow::tau0(model, flow::TAU0_CAP).map_err(|e| match e {
        flow::FlowError::Unbounded { .. } => {
            FieldError::NotApplicable("daughter-to-mother maturation time is unbounded".into())
        }
        other => FieldError::NotApplicable(other.to_string()),
    })?;
    let tau_l = model.tau_lower();
    if tau_l <= tau0 {
        return Err(FieldError::NotApplicable(format!(
            "tau_lower = {tau_l} does not exceed tau0 = {tau0}"
        )));
    }
    let tau_u = model.tau_upper();
    let g1 = model.g1();
    if b > g1 {
        // agreement already covers every daughter maturity
        return Ok(ExtinctionTime {
            t_bar: tau_u - flow::log_h(model, g1),
            b_sequence: vec![b],
            generations: 0,
        });
    }
    let mut seq = vec![b];
    let mut t = 0.0;
    loop {
        let last = *seq.last().unwrap();
        let next = advance_generation(model, last);
        t += tau_u + (flow::log_h(model, next) - flow::log_h(model, last));
        seq.push(next);
        if next >= g1 {
            break;
        }
        if seq.len() > GENERATION_CAP {
            return Err(FieldError::IterationCap(GENERATION_CAP));
        }
    }
    Ok(ExtinctionTime {
        t_bar: t + tau_u - flow::log_h(model, g1),
        generations: seq.len() - 1,
        b_sequence: seq,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct DecayOutcome {
    /// Sup norm of the initial surface.
    pub norm: f64,
    /// Largest `sup_m |N|` over solved slices (must not exceed `norm`).
    pub sup_peak: f64,
    pub invariance_ok: bool,
    /// Exponential rate fitted to the tail of `sup_m |N|`.
    pub fitted_rate: f64,
    /// Certified rate from the constants.
    pub rho: f64,
    pub min_rate_fraction: f64,
    /// Largest per-iteration contraction ratio observed in the stepping
    /// fixed point.
    pub picard_max_ratio: f64,
    /// Max change of the surface when the maturity floor is pushed two
    /// units deeper (`None` if the check was skipped).
    pub floor_sensitivity: Option<f64>,
    pub pass: bool,
}

/// Solve the surface and verify sup-norm invariance plus exponential decay
/// at a fraction of the certified rate.
pub fn run_decay(
    model: &ValidatedModel,
    data: &InitialData,
    horizon: f64,
    params: &FieldParams,
    min_rate_fraction: f64,
    check_floor: bool,
) -> Result<DecayOutcome, FieldError> {
    let rho = model.constants().rho.ok_or_else(|| {
        FieldError::NotApplicable("contraction criterion fails; no certified decay rate".into())
    })?;
    let field = solve_field(model, data, horizon, params)?;
    let sup = field.sup_series();
    let norm = data.sup_norm(model.tau_upper());
    let sup_peak = sup.iter().fold(0.0_f64, |a, &(_, v)| a.max(v));
    let invariance_ok = sup_peak <= norm;
    let fitted_rate = dde::fit_decay_rate(&sup)?;
    let floor_sensitivity = if check_floor {
        let mut deeper = params.clone();
        deeper.y_min = params.y_min - 2.0;
        let field_b = solve_field(model, data, horizon, &deeper)?;
        let extra = field_b.grid().len() - field.grid().len();
        let mut diff = 0.0_f64;
        for k in field.first_solved()..field.num_slices() {
            let (a, b) = (field.slice(k), field_b.slice(k));
            for j in 0..field.grid().len() {
                diff = diff.max((a[j] - b[j + extra]).abs());
            }
        }
        Some(diff)
    } else {
        None
    };
    Ok(DecayOutcome {
        norm,
        sup_peak,
        invariance_ok,
        fitted_rate,
        rho,
        min_rate_fraction,
        picard_max_ratio: field.meta.picard_max_ratio,
        floor_sensitivity,
        pass: invariance_ok && fitted_rate >= min_rate_fraction * rho,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct ExtinctionOutcome {
    pub t_bar: f64,
    pub generations: usize,
    pub norm: f64,
    /// Largest sup before `t_bar` (shows the data were not trivially zero).
    pub early_sup: f64,
    pub probe_time: f64,
    pub sup_at_probe: f64,
    pub tolerance: f64,
    pub pass: bool,
}

/// Destroyed-stem-cell scenario: data vanishing on `[0, b]` force the
/// whole surface to vanish after `t_bar`.
pub fn run_extinction(
    model: &ValidatedModel,
    data: &InitialData,
    b: f64,
    margin: f64,
    params: &FieldParams,
) -> Result<ExtinctionOutcome, FieldError> {
    if margin.is_nan() || margin < 0.0 {
        return Err(FieldError::InvalidData(format!(
            "probe margin must be nonnegative, got {margin}"
        )));
    }
    let ext = extinction_time(model, b)?;
    for ti in 0..=16 {
        let t = model.tau_upper() * ti as f64 / 16.0;
        for mi in 0..=64 {
            let m = b * mi as f64 / 64.0;
            if data.eval(t, m) != 0.0 {
                return Err(FieldError::InvalidData(format!(
                    "initial data must vanish on maturities [0, {b}]; phi({t}, {m}) != 0"
                )));
            }
        }
    }
    let probe_target = ext.t_bar + margin;
    let field = solve_field(model, data, probe_target + margin.max(0.5), params)?;
    let sup = field.sup_series();
    let norm = data.sup_norm(model.tau_upper());
    let (probe_time, sup_at_probe) = sup
        .iter()
        .cloned()
        .find(|&(t, _)| t >= probe_target - 1e-9)
        .expect("horizon covers the probe time");
    let early_sup = sup
        .iter()
        .filter(|&&(t, _)| t < ext.t_bar)
        .fold(0.0_f64, |a, &(_, v)| a.max(v));
    let tolerance = 1e-6 * norm;
    Ok(ExtinctionOutcome {
        t_bar: ext.t_bar,
        generations: ext.generations,
        norm,
        early_sup,
        probe_time,
        sup_at_probe,
        tolerance,
        pass: sup_at_probe < tolerance,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct AgreementOutcome {
    pub t_bar: f64,
    pub norm: f64,
    /// Largest discrepancy before `t_bar` (the two data genuinely differ).
    pub early_max_diff: f64,
    /// Largest discrepancy at or after `t_bar`.
    pub max_diff_after: f64,
    pub tolerance: f64,
    pub pass: bool,
}

/// Two data agreeing below `b` produce surfaces that coincide from `t_bar`
/// on.
pub fn run_agreement(
    model: &ValidatedModel,
    phi1: &InitialData,
    phi2: &InitialData,
    b: f64,
    horizon: f64,
    params: &FieldParams,
) -> Result<AgreementOutcome, FieldError> {
    let ext = extinction_time(model, b)?;
    for ti in 0..=16 {
        let t = model.tau_upper() * ti as f64 / 16.0;
        for mi in 0..=64 {
            let m = b * mi as f64 / 64.0;
            if phi1.eval(t, m) != phi2.eval(t, m) {
                return Err(FieldError::InvalidData(format!(
                    "data must agree exactly on maturities [0, {b}]; differ at ({t}, {m})"
                )));
            }
        }
    }
    let horizon = horizon.max(ext.t_bar + 1.0);
    let f1 = solve_field(model, phi1, horizon, params)?;
    let f2 = solve_field(model, phi2, horizon, params)?;
    let diffs = f1.sup_abs_diff(&f2);
    let early_max_diff = diffs
        .iter()
        .filter(|&&(t, _)| t < ext.t_bar)
        .fold(0.0_f64, |a, &(_, v)| a.max(v));
    let max_diff_after = diffs
        .iter()
        .filter(|&&(t, _)| t >= ext.t_bar)
        .fold(0.0_f64, |a, &(_, v)| a.max(v));
    let norm = phi1
        .sup_norm(model.tau_upper())
        .max(phi2.sup_norm(model.tau_upper()));
    let tolerance = 1e-6 * norm;
    Ok(AgreementOutcome {
        t_bar: ext.t_bar,
        norm,
        early_max_diff,
        max_diff_after,
        tolerance,
        pass: max_diff_after < tolerance,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct EquilibriumOutcome {
    pub x_star: f64,
    pub residual: f64,
    pub max_drift: f64,
    pub tolerance: f64,
    pub pass: bool,
}

/// Launch the boundary equation from its positive constant solution and
/// verify it stays there.
pub fn run_equilibrium(
    model: &ValidatedModel,
    horizon: f64,
    dt: f64,
    tolerance: f64,
) -> Result<EquilibriumOutcome, FieldError> {
    let eq = stability::dde_equilibrium(model).ok_or_else(|| {
        FieldError::NotApplicable("no positive boundary equilibrium for this model".into())
    })?;
    let psi = ScalarHistory::constant(model, eq.x_star);
    let sol = dde::integrate(model, &psi, horizon, &DdeOptions::new(dt))?;
    let max_drift = sol
        .values()
        .iter()
        .map(|&x| (x - eq.x_star).abs())
        .fold(0.0, f64::max);
    Ok(EquilibriumOutcome {
        x_star: eq.x_star,
        residual: eq.residual,
        max_drift,
        tolerance,
        pass: max_drift < tolerance,
    })
}
