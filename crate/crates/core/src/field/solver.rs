//! Solver for the integrated equation of the resting-phase surface
//! `N(t, m)`, and reconstruction of the proliferating surface `P(t, m)`.
//!
//! Time is discretized in slices of spacing `dt = dy`, so the backward flow
//! over `k` slices is an exact shift of `k` node indices. Each new slice is
//! anchored two slices back and advanced with the variation-of-constants
//! identity
//!
//! ```text
//! N(t, m) = N(t - 2dt, pi_{-2dt}(m)) K(2dt, m) + G(N) - J(N)
//! ```
//!
//! where the transport integrals over `s in [t - 2dt, t]` use three-point
//! Simpson on the slice grid (trapezoid for the very first step after the
//! initial window, which is anchored at `tau_upper`). The gain `G` reads
//! one full delay into history and is explicit whenever `dt <= tau_lower`;
//! the loss `J` couples the new slice to itself only pointwise, and that
//! coupling is resolved by Picard iteration. The boundary value at maturity
//! zero advances in lockstep through the scalar delay integrator with the
//! gain kernel `g_inv'(0) Z`, and serves every read that falls below the
//! resolved maturity floor.

use rayon::prelude::*;
use serde::Serialize;

use crate::dde::{DdeIntegrator, DdeOptions, DdeSolution, ScalarHistory};
use crate::flow;
use crate::kernels;
use crate::model::ValidatedModel;
use crate::quad::{simpson_weights, GaussLegendre, KernelQuad};

use super::grid::{slice_interp, InitialData, MaturityGrid};
use super::FieldError;

/// Extra virtual nodes kept below the floor so pullback tables stay
/// in-bounds for every slice offset.
const EXT: usize = 2;

#[derive(Debug, Clone, Serialize)]
pub struct FieldParams {
    /// Maturity floor in flow coordinates (characteristics exiting below it
    /// read the boundary trace).
    pub y_min: f64,
    /// Slice spacing; `None` picks `min(tau_lower, tau_upper/32)`
    /// (`tau_upper/64` when `tau_lower = 0`), snapped so `tau_upper/dt` is
    /// an integer.
    pub dt: Option<f64>,
    pub quad_order: usize,
    pub picard_tol: f64,
    pub picard_max: usize,
    pub workers: usize,
}

impl Default for FieldParams {
    fn default() -> Self {
        FieldParams {
            y_min: -12.0,
            dt: None,
            quad_order: kernels::DEFAULT_QUAD_ORDER,
            picard_tol: 1e-11,
            picard_max: 60,
            workers: 1,
        }
    }
}

/// Per-slice fixed-point diagnostics.
#[derive(Debug, Clone, Serialize)]
pub struct StepStats {
    pub t: f64,
    pub iterations: usize,
    pub residual: f64,
    /// Largest ratio of consecutive iterate differences (0 when fewer than
    /// two measurable differences).
    pub max_ratio: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct FieldMeta {
    pub dt: f64,
    pub dy: f64,
    pub y_min: f64,
    pub nodes: usize,
    pub floor_maturity: f64,
    pub quad_order: usize,
    pub picard_tol: f64,
    pub picard_max: usize,
    pub workers: usize,
    pub horizon: f64,
    pub picard_max_residual: f64,
    pub picard_max_iterations: usize,
    pub picard_max_ratio: f64,
}

#[derive(Debug, Clone)]
pub(crate) struct ScalarSeries {
    pub(crate) t0: f64,
    pub(crate) dt: f64,
    pub(crate) vs: Vec<f64>,
    pub(crate) ds: Vec<f64>,
}

impl ScalarSeries {
    fn eval(&self, t: f64) -> f64 {
        let s = ((t - self.t0) / self.dt).clamp(0.0, (self.vs.len() - 1) as f64);
        let i = (s.floor() as usize).min(self.vs.len() - 2);
        let theta = s - i as f64;
        crate::dde::hermite(
            theta,
            self.vs[i],
            self.vs[i + 1],
            self.ds[i] * self.dt,
            self.ds[i + 1] * self.dt,
        )
    }
}

#[derive(Debug, Clone)]
pub(crate) enum BoundaryTrace {
    /// Boundary delay solution (resting surface).
    Dde(DdeSolution),
    /// Plain scalar series (proliferating surface).
    Series(ScalarSeries),
}

/// A computed surface on the time x maturity grid, including the initial
/// window it was launched from.
#[derive(Debug, Clone)]
pub struct Field {
    pub(crate) grid: MaturityGrid,
    pub(crate) t0: f64,
    pub(crate) dt: f64,
    /// Index of the first slice governed by the equation (the end of the
    /// initial window for the resting surface; zero for the proliferating
    /// one).
    pub(crate) first_solved: usize,
    pub(crate) slices: Vec<Vec<f64>>,
    pub(crate) boundary: BoundaryTrace,
    pub picard: Vec<StepStats>,
    pub meta: FieldMeta,
}

impl Field {
    pub fn grid(&self) -> &MaturityGrid {
        &self.grid
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn start(&self) -> f64 {
        self.t0
    }

    pub fn end(&self) -> f64 {
        self.t0 + self.dt * (self.slices.len() - 1) as f64
    }

    pub fn num_slices(&self) -> usize {
        self.slices.len()
    }

    pub fn slice_time(&self, k: usize) -> f64 {
        self.t0 + self.dt * k as f64
    }

    /// Index of the first slice at or after the end of the initial window.
    pub fn first_solved(&self) -> usize {
        self.first_solved
    }

    pub fn slice(&self, k: usize) -> &[f64] {
        &self.slices[k]
    }

    /// Boundary trace at maturity zero.
    pub fn boundary_x(&self, t: f64) -> f64 {
        match &self.boundary {
            BoundaryTrace::Dde(sol) => sol.eval(t),
            BoundaryTrace::Series(s) => s.eval(t),
        }
    }

    /// Interpolating read at `(t, y)`: monotone cubic across maturity
    /// nodes, linear between slices, boundary trace below the floor.
    pub(crate) fn read(&self, t: f64, y: f64) -> f64 {
        if y < self.grid.y_min() - 1e-12 {
            return self.boundary_x(t);
        }
        let u = self.grid.index_of(y);
        let s = ((t - self.t0) / self.dt).clamp(0.0, (self.slices.len() - 1) as f64);
        let k = (s.floor() as usize).min(self.slices.len() - 1);
        let theta = s - k as f64;
        if theta < 1e-9 {
            slice_interp(&self.slices[k], u)
        } else if theta > 1.0 - 1e-9 {
            slice_interp(&self.slices[k + 1], u)
        } else {
            (1.0 - theta) * slice_interp(&self.slices[k], u)
                + theta * slice_interp(&self.slices[k + 1], u)
        }
    }

    /// Evaluate the surface at an arbitrary point (maturities below the
    /// floor read the boundary trace).
    pub fn eval(&self, model: &ValidatedModel, t: f64, m: f64) -> f64 {
        if m == 0.0 {
            return self.boundary_x(t);
        }
        self.read(t, flow::log_h(model, m))
    }

    /// `sup_m |N(t, m)|` per solved slice, boundary included.
    pub fn sup_series(&self) -> Vec<(f64, f64)> {
        (self.first_solved..self.slices.len())
            .map(|k| {
                let t = self.slice_time(k);
                let node_sup = self.slices[k].iter().fold(0.0_f64, |a, &v| a.max(v.abs()));
                (t, node_sup.max(self.boundary_x(t).abs()))
            })
            .collect()
    }

    /// `sup_m |self - other|` per solved slice (grids must match).
    pub fn sup_abs_diff(&self, other: &Field) -> Vec<(f64, f64)> {
        assert_eq!(self.slices.len(), other.slices.len(), "field shapes differ");
        assert_eq!(self.grid.len(), other.grid.len(), "grids differ");
        (self.first_solved..self.slices.len())
            .map(|k| {
                let t = self.slice_time(k);
                let mut d = (self.boundary_x(t) - other.boundary_x(t)).abs();
                for j in 0..self.grid.len() {
                    d = d.max((self.slices[k][j] - other.slices[k][j]).abs());
                }
                (t, d)
            })
            .collect()
    }

    pub fn min_value(&self) -> f64 {
        self.slices[self.first_solved..]
            .iter()
            .flat_map(|s| s.iter())
            .fold(f64::INFINITY, |a, &v| a.min(v))
    }
}

/// Resolve the slice spacing: explicit `dt` must not exceed `tau_lower`
/// (the gain must stay explicit); both paths snap so `tau_upper/dt` is an
/// integer.
fn resolve_dt(model: &ValidatedModel, params: &FieldParams) -> Result<f64, FieldError> {
    let tau_l = model.tau_lower();
    let tau_u = model.tau_upper();
    let raw = match params.dt {
        Some(dt) => {
            if tau_l > 0.0 && dt > tau_l * (1.0 + 1e-12) {
                return Err(FieldError::InvalidGrid(format!(
                    "dt = {dt} exceeds tau_lower = {tau_l}; reduce dt"
                )));
            }
            if dt <= 0.0 {
                return Err(FieldError::InvalidGrid(format!(
                    "dt = {dt} must be positive"
                )));
            }
            dt
        }
        None => {
            if tau_l > 0.0 {
                tau_l.min(tau_u / 32.0)
            } else {
                tau_u / 64.0
            }
        }
    };
    let n_per = (tau_u / raw - 1e-9).ceil().max(1.0);
    Ok(tau_u / n_per)
}

/// Precomputed per-node kernels for the stepping scheme. Table index `e =
/// j + EXT` covers two virtual nodes below the floor, so pullbacks by up to
/// two slices stay in-bounds.
struct Tables {
    ages: Vec<f64>,
    qw: Vec<f64>,
    /// `g_inv'(m_e) * xi(a_i, g_inv(m_e))` (gain kernel without the
    /// division density, which lives in `qw`): `[i][e]`
    gain: Vec<Vec<f64>>,
    /// flow coordinate and maturity of the retardation target
    /// `Delta(a_i, m_e)`: `[i][e]`
    ydel: Vec<Vec<f64>>,
    mdel: Vec<Vec<f64>>,
    /// `K(b dt, m_j)` for `b = 1, 2`: `[b-1][j]`
    kpow: [Vec<f64>; 2],
    /// maturities of the extended node list
    m_ext: Vec<f64>,
}

fn build_tables(model: &ValidatedModel, grid: &MaturityGrid, dt: f64, quad_order: usize) -> Tables {
    let quad = KernelQuad::new(model, quad_order);
    let gl = GaussLegendre::new(quad_order);
    let nq = quad.len();
    let n_ext = grid.len() + EXT;
    let mut y_ext = Vec::with_capacity(n_ext);
    let mut m_ext = Vec::with_capacity(n_ext);
    for e in 0..n_ext {
        let y = grid.y_min() + (e as f64 - EXT as f64) * grid.dy();
        y_ext.push(y);
        m_ext.push(flow::h_inv_log(model, y));
    }
    let mut gain = vec![vec![0.0; n_ext]; nq];
    let mut ydel = vec![vec![0.0; n_ext]; nq];
    let mut mdel = vec![vec![0.0; n_ext]; nq];
    for (i, &a) in quad.nodes().iter().enumerate() {
        for e in 0..n_ext {
            let m = m_ext[e];
            let jac = model.g_inv_derivative(m);
            let mother = model.g_inv(m);
            gain[i][e] = if jac == 0.0 {
                0.0
            } else {
                jac * kernels::xi_with(model, a, mother, &gl)
            };
            let yd = flow::log_h(model, mother) - a;
            ydel[i][e] = yd;
            mdel[i][e] = flow::h_inv_log(model, yd);
        }
    }
    let kpow = [
        grid.ms()
            .iter()
            .map(|&m| kernels::big_k_with(model, dt, m, &gl))
            .collect(),
        grid.ms()
            .iter()
            .map(|&m| kernels::big_k_with(model, 2.0 * dt, m, &gl))
            .collect(),
    ];
    Tables {
        ages: quad.nodes().to_vec(),
        qw: quad.weights().to_vec(),
        gain,
        ydel,
        mdel,
        kpow,
        m_ext,
    }
}

/// Read the stored surface (plus, optionally, the in-progress top slice)
/// at `(t, y)`.
struct HistView<'a> {
    grid: &'a MaturityGrid,
    dt: f64,
    slices: &'a [Vec<f64>],
    top: Option<&'a [f64]>,
    boundary: &'a (dyn Fn(f64) -> f64 + Sync),
}

impl<'a> HistView<'a> {
    fn read(&self, t: f64, y: f64) -> f64 {
        if y < self.grid.y_min() - 1e-12 {
            return (self.boundary)(t);
        }
        let u = self.grid.index_of(y);
        let total = self.slices.len() + self.top.is_some() as usize;
        let s = (t / self.dt).clamp(0.0, (total - 1) as f64);
        let k = (s.floor() as usize).min(total - 1);
        let theta = s - k as f64;
        let at = |idx: usize| -> f64 {
            if idx < self.slices.len() {
                slice_interp(&self.slices[idx], u)
            } else {
                slice_interp(self.top.expect("read beyond stored window"), u)
            }
        };
        if theta < 1e-9 {
            at(k)
        } else if theta > 1.0 - 1e-9 {
            at(k + 1)
        } else {
            (1.0 - theta) * at(k) + theta * at(k + 1)
        }
    }
}

/// Solve the resting-phase surface from the initial window `data` on
/// `[0, tau_upper]` out to `horizon`.
pub fn solve_field(
    model: &ValidatedModel,
    data: &InitialData,
    horizon: f64,
    params: &FieldParams,
) -> Result<Field, FieldError> {
    let tau_u = model.tau_upper();
    if horizon <= tau_u {
        return Err(FieldError::InvalidGrid(format!(
            "horizon {horizon} must exceed the delay span {tau_u}"
        )));
    }
    let dt = resolve_dt(model, params)?;
    let grid = MaturityGrid::new(model, params.y_min, dt)?;
    let tables = build_tables(model, &grid, dt, params.quad_order);
    let n_per = (tau_u / dt).round() as usize;
    let n_total = n_per + ((horizon - tau_u) / dt - 1e-9).ceil().max(1.0) as usize;

    // initial window slices
    let mut slices: Vec<Vec<f64>> = (0..=n_per)
        .map(|k| {
            let t = k as f64 * dt;
            grid.ms().iter().map(|&m| data.eval(t, m)).collect()
        })
        .collect();

    // boundary delay integrator in lockstep, carrying the full gain kernel
    // g_inv'(0) Z of the small-maturity limit
    let psi = ScalarHistory::sample_unchecked(
        0.0,
        dt / 4.0,
        tau_u,
        |t| data.eval(t, 0.0),
        |t| data.eval_dt(t, 0.0),
    );
    let mut dde_opts = DdeOptions::new(dt / 4.0);
    dde_opts.quad_order = params.quad_order;
    dde_opts.gain_scale = model.g_inv_derivative(0.0);
    let mut engine = DdeIntegrator::new(model, psi, &dde_opts)?;

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(params.workers.max(1))
        .build()
        .map_err(|e| FieldError::InvalidGrid(format!("thread pool: {e}")))?;

    let nodes = grid.len();
    let mut picard = Vec::with_capacity(n_total - n_per);
    // gain reads later than the newest completed slice couple into the
    // Picard iteration (possible only when tau_lower < dt, i.e. tau_lower = 0)
    let hot_ages: Vec<usize> = tables
        .ages
        .iter()
        .enumerate()
        .filter(|&(_, &a)| a < dt * (1.0 - 1e-12))
        .map(|(i, _)| i)
        .collect();

    for n in (n_per + 1)..=n_total {
        let t_new = n as f64 * dt;
        for _ in 0..4 {
            engine.step()?;
        }
        let n_back = if n == n_per + 1 { 1 } else { 2 };
        let w = simpson_weights(n_back, dt);
        // w[i] weighs s-offset k = n_back - i; reorder as per-offset weights
        let w_off: Vec<f64> = (0..=n_back).map(|k| w[n_back - k]).collect();

        let boundary = |t: f64| engine.x_at(t);
        let fixed_view = HistView {
            grid: &grid,
            dt,
            slices: &slices,
            top: None,
            boundary: &boundary,
        };
        let compute_fixed = |j: usize| -> f64 {
            let e0 = j + EXT;
            // pullback anchor
            let anchor_t = (n - n_back) as f64 * dt;
            let anchor_val = if j >= n_back {
                slices[n - n_back][j - n_back]
            } else {
                boundary(anchor_t)
            };
            let mut c = anchor_val * tables.kpow[n_back - 1][j];
            for k in 0..=n_back {
                let wk = w_off[k];
                let kk = match k {
                    0 => 1.0,
                    _ => tables.kpow[k - 1][j],
                };
                let e = e0 - k;
                let s_time = t_new - k as f64 * dt;
                // gain: one delay into history at the retardation targets
                let mut inner = 0.0;
                for i in 0..tables.ages.len() {
                    if k == 0 && tables.ages[i] < dt * (1.0 - 1e-12) {
                        continue; // handled in the Picard phase
                    }
                    let gkern = tables.gain[i][e];
                    if gkern == 0.0 {
                        continue;
                    }
                    let v = fixed_view.read(s_time - tables.ages[i], tables.ydel[i][e]);
                    inner += tables.qw[i] * gkern * model.lambda_beta(tables.mdel[i][e], v);
                }
                c += 2.0 * wk * kk * inner;
                // loss along the pullback characteristic (known offsets)
                if k >= 1 {
                    let val = if j >= k {
                        slices[n - k][j - k]
                    } else {
                        boundary(s_time)
                    };
                    c -= wk * kk * model.lambda_beta(tables.m_ext[e], val);
                }
            }
            c
        };
        let fixed: Vec<f64> = if params.workers > 1 {
            pool.install(|| (0..nodes).into_par_iter().map(compute_fixed).collect())
        } else {
            (0..nodes).map(compute_fixed).collect()
        };

        // Picard: u <- fixed + hot_gain(u) - w0 * lambda_beta(m_j, u_j)
        let w0 = w_off[0];
        let mut u = slices[n - 1].clone();
        let scale = u.iter().fold(1.0_f64, |a, &v| a.max(v.abs()));
        let mut residual_prev = f64::INFINITY;
        let mut growth_streak = 0usize;
        let mut max_ratio = 0.0_f64;
        let mut iterations = 0usize;
        let mut residual = f64::INFINITY;
        while iterations < params.picard_max {
            iterations += 1;
            let apply = |j: usize| -> f64 {
                let mut v = fixed[j] - w0 * model.lambda_beta(grid.ms()[j], u[j]);
                if !hot_ages.is_empty() {
                    let view = HistView {
                        grid: &grid,
                        dt,
                        slices: &slices,
                        top: Some(&u),
                        boundary: &boundary,
                    };
                    let e = j + EXT;
                    let mut inner = 0.0;
                    for &i in &hot_ages {
                        let gkern = tables.gain[i][e];
                        if gkern == 0.0 {
                            continue;
                        }
                        let val = view.read(t_new - tables.ages[i], tables.ydel[i][e]);
                        inner += tables.qw[i] * gkern * model.lambda_beta(tables.mdel[i][e], val);
                    }
                    v += 2.0 * w0 * inner;
                }
                v
            };
            let u_next: Vec<f64> = if params.workers > 1 {
                pool.install(|| (0..nodes).into_par_iter().map(apply).collect())
            } else {
                (0..nodes).map(apply).collect()
            };
            residual = u_next
                .iter()
                .zip(&u)
                .fold(0.0_f64, |a, (&x, &y)| a.max((x - y).abs()));
            if !residual.is_finite() {
                return Err(FieldError::PicardDiverged {
                    t: t_new,
                    residual,
                    iterations,
                });
            }
            u = u_next;
            if residual_prev.is_finite() {
                let floor = 1e-13 * (1.0 + scale);
                if residual_prev > floor && residual > floor {
                    max_ratio = max_ratio.max(residual / residual_prev);
                }
                if residual > residual_prev {
                    growth_streak += 1;
                    if growth_streak >= 10 {
                        return Err(FieldError::PicardDiverged {
                            t: t_new,
                            residual,
                            iterations,
                        });
                    }
                } else {
                    growth_streak = 0;
                }
            }
            residual_prev = residual;
            if residual < params.picard_tol {
                break;
            }
        }
        picard.push(StepStats {
            t: t_new,
            iterations,
            residual,
            max_ratio,
        });
        slices.push(u);
    }

    let max_res = picard.iter().fold(0.0_f64, |a, s| a.max(s.residual));
    let max_it = picard.iter().map(|s| s.iterations).max().unwrap_or(0);
    let max_ratio = picard.iter().fold(0.0_f64, |a, s| a.max(s.max_ratio));
    let meta = FieldMeta {
        dt,
        dy: grid.dy(),
        y_min: grid.y_min(),
        nodes,
        floor_maturity: grid.floor_maturity(),
        quad_order: params.quad_order,
        picard_tol: params.picard_tol,
        picard_max: params.picard_max,
        workers: params.workers,
        horizon: n_total as f64 * dt,
        picard_max_residual: max_res,
        picard_max_iterations: max_it,
        picard_max_ratio: max_ratio,
    };
    Ok(Field {
        grid,
        t0: 0.0,
        dt,
        first_solved: n_per,
        slices,
        boundary: BoundaryTrace::Dde(engine.into_solution(false)),
        picard,
        meta,
    })
}

/// Gain operator over a window `[t0, t]` of whole slices:
///
/// ```text
/// G(N)(t, m) = 2 int_{t0}^{t} ( int zeta(a, pi_{-(t-s)}(m))
///                 lambda_beta(Delta(a, pi_{-(t-s)}(m)), N(s - a, .)) da )
///              K(t - s, m) ds
/// ```
///
/// General-purpose path used by tests and oracles; the stepping loop uses
/// the same quadratures through precomputed tables.
pub fn operator_g(
    model: &ValidatedModel,
    field: &Field,
    t: f64,
    m: f64,
    window_start: f64,
    quad_order: usize,
) -> Result<f64, FieldError> {
    let (idx0, n_int) = window_on_grid(field, window_start, t)?;
    let quad = KernelQuad::new(model, quad_order);
    let gl = GaussLegendre::new(quad_order);
    let needed = window_start - model.tau_upper();
    if needed < field.start() - 1e-9 {
        return Err(FieldError::HistoryGap {
            needed,
            earliest: field.start(),
        });
    }
    let w = simpson_weights(n_int, field.dt());
    let mut acc = 0.0;
    for (i, &wi) in w.iter().enumerate() {
        let s = field.slice_time(idx0 + i);
        let pulled = flow::pi(model, -(t - s), m);
        let jac = model.g_inv_derivative(pulled);
        if jac == 0.0 {
            continue;
        }
        let mother = model.g_inv(pulled);
        let y_mother = flow::log_h(model, mother);
        let inner = quad.integrate(|a| {
            let yd = y_mother - a;
            let md = flow::h_inv_log(model, yd);
            let v = field.read(s - a, yd);
            jac * kernels::xi_with(model, a, mother, &gl) * model.lambda_beta(md, v)
        });
        acc += 2.0 * wi * kernels::big_k_with(model, t - s, m, &gl) * inner;
    }
    Ok(acc)
}

/// Loss operator over a window `[t0, t]` of whole slices:
///
/// ```text
/// J(N)(t, m) = int_{t0}^{t} K(t - s, m)
///              lambda_beta(pi_{-(t-s)}(m), N(s, pi_{-(t-s)}(m))) ds
/// ```
///
/// Characteristic alignment makes every read an exact node lookup whenever
/// `m` is a grid node.
pub fn operator_j(
    model: &ValidatedModel,
    field: &Field,
    t: f64,
    m: f64,
    window_start: f64,
    quad_order: usize,
) -> Result<f64, FieldError> {
    let (idx0, n_int) = window_on_grid(field, window_start, t)?;
    let gl = GaussLegendre::new(quad_order);
    let w = simpson_weights(n_int, field.dt());
    let y = flow::log_h(model, m);
    let u = field.grid().index_of(y);
    let on_node = (u - u.round()).abs() < 1e-9;
    let mut acc = 0.0;
    for (i, &wi) in w.iter().enumerate() {
        let s = field.slice_time(idx0 + i);
        let k_off = n_int - i;
        let y_pull = y - (t - s);
        let m_pull = flow::h_inv_log(model, y_pull);
        let v = if on_node {
            // exact index arithmetic along the characteristic
            let j = u.round() as isize - k_off as isize;
            debug_assert!(
                ((field.grid().index_of(y_pull)) - j as f64).abs() < 1e-6 || j < 0,
                "characteristic pullback missed the grid"
            );
            if j < 0 {
                field.boundary_x(s)
            } else {
                let slice_idx = ((s - field.start()) / field.dt()).round() as usize;
                field.slice(slice_idx)[j as usize]
            }
        } else {
            field.read(s, y_pull)
        };
        acc += wi * kernels::big_k_with(model, t - s, m, &gl) * model.lambda_beta(m_pull, v);
    }
    Ok(acc)
}

fn window_on_grid(field: &Field, t0: f64, t: f64) -> Result<(usize, usize), FieldError> {
    let dt = field.dt();
    let i0 = (t0 - field.start()) / dt;
    let i1 = (t - field.start()) / dt;
    if (i0 - i0.round()).abs() > 1e-6 || (i1 - i1.round()).abs() > 1e-6 {
        return Err(FieldError::InvalidGrid(format!(
            "operator window [{t0}, {t}] must lie on the slice grid (dt = {dt})"
        )));
    }
    let idx0 = i0.round() as isize;
    let n_int = (i1.round() - i0.round()) as isize;
    if idx0 < 0 || n_int < 1 || (idx0 + n_int) as usize > field.num_slices() - 1 {
        return Err(FieldError::HistoryGap {
            needed: t0,
            earliest: field.start(),
        });
    }
    Ok((idx0 as usize, n_int as usize))
}

/// Reconstruct the proliferating surface from a solved resting surface.
///
/// `P` carries the same transport with the proliferating attenuation `xi`,
/// a local gain `beta(m, N) N`, and the distributed division efflux; it
/// depends on `N` but feeds nothing back, so the march is fully explicit.
/// `p0` is the initial slice at `t = tau_upper` (as a function of
/// maturity).
pub fn reconstruct_p<F>(
    model: &ValidatedModel,
    n_field: &Field,
    p0: F,
    quad_order: usize,
) -> Result<Field, FieldError>
where
    F: Fn(f64) -> f64,
{
    let grid = n_field.grid().clone();
    let dt = n_field.dt();
    let tau_u = model.tau_upper();
    let first = n_field.first_solved();
    let n_slices = n_field.num_slices() - first;
    let quad = KernelQuad::new(model, quad_order);
    let gl = GaussLegendre::new(quad_order);
    let nq = quad.len();
    let n_ext = grid.len() + EXT;

    // tables: xi at pullback offsets and at quadrature ages
    let mut m_ext = Vec::with_capacity(n_ext);
    for e in 0..n_ext {
        let y = grid.y_min() + (e as f64 - EXT as f64) * grid.dy();
        m_ext.push(flow::h_inv_log(model, y));
    }
    let xi_pow: [Vec<f64>; 2] = [
        grid.ms()
            .iter()
            .map(|&m| kernels::xi_with(model, dt, m, &gl))
            .collect(),
        grid.ms()
            .iter()
            .map(|&m| kernels::xi_with(model, 2.0 * dt, m, &gl))
            .collect(),
    ];
    let mut xi_age = vec![vec![0.0; n_ext]; nq];
    let mut ypull = vec![vec![0.0; n_ext]; nq];
    let mut mpull = vec![vec![0.0; n_ext]; nq];
    for (i, &a) in quad.nodes().iter().enumerate() {
        for e in 0..n_ext {
            let m = m_ext[e];
            xi_age[i][e] = kernels::xi_with(model, a, m, &gl);
            let y = grid.y_min() + (e as f64 - EXT as f64) * grid.dy() - a;
            ypull[i][e] = y;
            mpull[i][e] = flow::h_inv_log(model, y);
        }
    }

    // boundary trace: scalar transport at maturity zero driven by the
    // resting boundary
    let nu = model.gamma(0.0) + model.velocity_derivative(0.0);
    let efflux0 = |t: f64| -> f64 {
        quad.integrate(|a| (-nu * a).exp() * model.lambda_beta(0.0, n_field.boundary_x(t - a)))
    };
    let p_rhs = |t: f64, p: f64| -> f64 {
        -nu * p + model.lambda_beta(0.0, n_field.boundary_x(t)) - efflux0(t)
    };
    let sub = dt / 4.0;
    let mut pb_vs = vec![p0(0.0)];
    let mut pb_ds = vec![p_rhs(tau_u, pb_vs[0])];
    for step in 0..(4 * (n_slices - 1)) {
        let t = tau_u + step as f64 * sub;
        let p = *pb_vs.last().unwrap();
        let k1 = p_rhs(t, p);
        let k2 = p_rhs(t + 0.5 * sub, p + 0.5 * sub * k1);
        let k3 = p_rhs(t + 0.5 * sub, p + 0.5 * sub * k2);
        let k4 = p_rhs(t + sub, p + sub * k3);
        let p_new = p + sub / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        pb_vs.push(p_new);
        pb_ds.push(p_rhs(t + sub, p_new));
    }
    let boundary_p = ScalarSeries {
        t0: tau_u,
        dt: sub,
        vs: pb_vs,
        ds: pb_ds,
    };

    let n_at = |slice_idx: usize, j_signed: isize, t: f64| -> f64 {
        if j_signed < 0 {
            n_field.boundary_x(t)
        } else {
            n_field.slice(slice_idx)[j_signed as usize]
        }
    };

    let mut slices: Vec<Vec<f64>> = Vec::with_capacity(n_slices);
    slices.push(grid.ms().iter().map(|&m| p0(m)).collect());
    for n in 1..n_slices {
        let t_new = tau_u + n as f64 * dt;
        let n_abs = first + n; // index into the resting field slices
        let n_back = if n == 1 { 1 } else { 2 };
        let w = simpson_weights(n_back, dt);
        let w_off: Vec<f64> = (0..=n_back).map(|k| w[n_back - k]).collect();
        let mut next = vec![0.0; grid.len()];
        for j in 0..grid.len() {
            let anchor_t = t_new - n_back as f64 * dt;
            let anchor = if j >= n_back {
                slices[n - n_back][j - n_back]
            } else {
                boundary_p.eval(anchor_t)
            };
            let mut p = anchor * xi_pow[n_back - 1][j];
            for k in 0..=n_back {
                let wk = w_off[k];
                let xik = match k {
                    0 => 1.0,
                    _ => xi_pow[k - 1][j],
                };
                let e = j + EXT - k;
                let s_time = t_new - k as f64 * dt;
                let s_idx = n_abs - k;
                let local_m = m_ext[e];
                let local_n = n_at(s_idx, j as isize - k as isize, s_time);
                let mut source = model.lambda_beta(local_m, local_n);
                let mut efflux = 0.0;
                for i in 0..nq {
                    let v = if ypull[i][e] < grid.y_min() - 1e-12 {
                        n_field.boundary_x(s_time - quad.nodes()[i])
                    } else {
                        n_field.read(s_time - quad.nodes()[i], ypull[i][e])
                    };
                    efflux += quad.weights()[i] * xi_age[i][e] * model.lambda_beta(mpull[i][e], v);
                }
                source -= efflux;
                p += wk * xik * source;
            }
            next[j] = p;
        }
        slices.push(next);
    }

    let meta = FieldMeta {
        dt,
        dy: grid.dy(),
        y_min: grid.y_min(),
        nodes: grid.len(),
        floor_maturity: grid.floor_maturity(),
        quad_order,
        picard_tol: 0.0,
        picard_max: 0,
        workers: 1,
        horizon: n_field.meta.horizon,
        picard_max_residual: 0.0,
        picard_max_iterations: 0,
        picard_max_ratio: 0.0,
    };
    Ok(Field {
        grid,
        t0: tau_u,
        dt,
        first_solved: 0,
        slices,
        boundary: BoundaryTrace::Series(boundary_p),
        picard: Vec::new(),
        meta,
    })
}
