use super::solver::{BoundaryTrace, ScalarSeries};
use super::*;
use crate::dde::{self, DdeOptions, ScalarHistory};
use crate::model::presets::*;
use crate::model::ValidatedModel;

fn test_meta(dt: f64, grid: &MaturityGrid) -> FieldMeta {
    FieldMeta {
        dt,
        dy: grid.dy(),
        y_min: grid.y_min(),
        nodes: grid.len(),
        floor_maturity: grid.floor_maturity(),
        quad_order: 32,
        picard_tol: 1e-11,
        picard_max: 60,
        workers: 1,
        horizon: 0.0,
        picard_max_residual: 0.0,
        picard_max_iterations: 0,
        picard_max_ratio: 0.0,
    }
}

/// A field holding a constant value everywhere (slices and boundary).
fn constant_field(model: &ValidatedModel, value: f64, dt: f64, n_slices: usize) -> Field {
    let grid = MaturityGrid::new(model, -12.0, dt).unwrap();
    let slices = vec![vec![value; grid.len()]; n_slices];
    let boundary = BoundaryTrace::Series(ScalarSeries {
        t0: 0.0,
        dt: dt * (n_slices - 1) as f64,
        vs: vec![value, value],
        ds: vec![0.0, 0.0],
    });
    let meta = test_meta(dt, &grid);
    Field {
        grid,
        t0: 0.0,
        dt,
        first_solved: (model.tau_upper() / dt).round() as usize,
        slices,
        boundary,
        picard: Vec::new(),
        meta,
    }
}

#[test]
fn zero_data_produces_bit_exact_zero_field() {
    let model = baseline();
    let field = solve_field(
        &model,
        &InitialData::constant(0.0),
        10.0,
        &FieldParams::default(),
    )
    .unwrap();
    for k in 0..field.num_slices() {
        assert!(
            field.slice(k).iter().all(|&v| v == 0.0),
            "slice {k} nonzero"
        );
        assert_eq!(field.boundary_x(field.slice_time(k)), 0.0);
    }
}

#[test]
fn operators_vanish_on_zero_history() {
    let model = baseline();
    let field = constant_field(&model, 0.0, 0.0625, 64);
    let t = field.slice_time(40);
    let g = operator_g(&model, &field, t, 0.3, t - 0.125, 32).unwrap();
    let j = operator_j(&model, &field, t, 0.3, t - 0.125, 32).unwrap();
    assert_eq!(g, 0.0);
    assert_eq!(j, 0.0);
}

#[test]
fn operator_j_constant_history_closed_form() {
    // constant coefficients: J = lambda0(x0) (1 - e^{-I w}) / I over a
    // window of length w
    let model = baseline();
    let x0 = 0.8;
    let dt = 0.0625;
    let field = constant_field(&model, x0, dt, 64);
    let t = field.slice_time(40);
    let w = 2.0 * dt;
    let j = operator_j(&model, &field, t, 0.3, t - w, 32).unwrap();
    let lam = model.lambda_beta(0.0, x0);
    let exact = lam * (1.0 - (-2.0 * w).exp()) / 2.0;
    assert!((j - exact).abs() < 1e-6, "J {j} vs {exact}");
    // coarse bound: |J| <= L * max * window
    assert!(j.abs() <= 0.5 * x0 * w * 1.0001);
}

#[test]
fn operator_g_constant_history_closed_form() {
    // m-independent collapse: G = 2 lambda0(x0) zeta_tilde (1 - e^{-I w})/I
    let model = baseline();
    let x0 = 0.8;
    let dt = 0.0625;
    let field = constant_field(&model, x0, dt, 64);
    let t = field.slice_time(40);
    let w = 2.0 * dt;
    let g = operator_g(&model, &field, t, 0.3, t - w, 32).unwrap();
    let zt = model.constants().zeta_tilde;
    let lam = model.lambda_beta(0.0, x0);
    let exact = 2.0 * lam * zt * (1.0 - (-2.0 * w).exp()) / 2.0;
    assert!((g - exact).abs() < 1e-6, "G {g} vs {exact}");
    // coarse bound from the invariance proof: |G| <= 2 L zeta_tilde w max
    assert!(g.abs() <= 2.0 * 0.5 * zt * w * x0 * 1.0001);
}

#[test]
fn operator_j_exact_node_lookup_matches_interpolating_path() {
    // characteristic alignment: at a grid node the loss operator reads by
    // index arithmetic; the value must match the closed form exactly as the
    // general path does
    let model = baseline();
    let x0 = 0.8;
    let dt = 0.0625;
    let field = constant_field(&model, x0, dt, 64);
    let t = field.slice_time(40);
    let w = 2.0 * dt;
    let node_m = field.grid().ms()[100];
    let j_node = operator_j(&model, &field, t, node_m, t - w, 32).unwrap();
    let lam = model.lambda_beta(0.0, x0);
    let exact = lam * (1.0 - (-2.0 * w).exp()) / 2.0;
    assert!((j_node - exact).abs() < 1e-6, "J {j_node} vs {exact}");
}

#[test]
fn operator_window_must_sit_on_grid() {
    let model = baseline();
    let field = constant_field(&model, 0.5, 0.0625, 64);
    let t = field.slice_time(40);
    assert!(matches!(
        operator_j(&model, &field, t, 0.3, t - 0.1, 32),
        Err(FieldError::InvalidGrid(_))
    ));
    assert!(matches!(
        operator_j(&model, &field, t + 1000.0, 0.3, t, 32),
        Err(FieldError::HistoryGap { .. })
    ));
}

#[test]
fn homogeneous_data_collapse_to_boundary_equation() {
    // m-independent coefficients + m-constant data: every node below g(1)
    // follows the boundary delay equation with the density-weighted kernel.
    let model = baseline();
    let field = solve_field(
        &model,
        &InitialData::constant(1.0),
        12.0,
        &FieldParams::default(),
    )
    .unwrap();

    // independent scalar integration of the same equation
    let mut opts = DdeOptions::new(field.dt() / 4.0);
    opts.gain_scale = model.g_inv_derivative(0.0);
    let psi = ScalarHistory::constant(&model, 1.0);
    let reference = dde::integrate(&model, &psi, 12.0, &opts).unwrap();

    let g1 = model.g1();
    let mut worst = 0.0_f64;
    let mut spread = 0.0_f64;
    for k in field.first_solved()..field.num_slices() {
        let t = field.slice_time(k);
        let x = reference.eval(t);
        let below: Vec<f64> = field
            .grid()
            .ms()
            .iter()
            .zip(field.slice(k))
            .filter(|&(&m, _)| m < g1)
            .map(|(_, &v)| v)
            .collect();
        let lo = below.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = below.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        spread = spread.max(hi - lo);
        for v in below {
            worst = worst.max((v - x).abs());
        }
    }
    assert!(spread < 1e-4, "homogeneity spread {spread}");
    assert!(worst < 5e-4, "field vs boundary equation {worst}");
}

#[test]
fn picard_contraction_ratio_stays_below_certified_alpha() {
    let model = baseline();
    let field = solve_field(
        &model,
        &InitialData::constant(1.0),
        8.0,
        &FieldParams::default(),
    )
    .unwrap();
    let alpha = model.constants().alpha.unwrap();
    assert!(
        field.meta.picard_max_ratio <= alpha + 0.1,
        "ratio {} vs alpha {alpha}",
        field.meta.picard_max_ratio
    );
    assert!(field.meta.picard_max_residual < 1e-11);
}

#[test]
fn vanishing_minimum_age_uses_whole_window_iteration() {
    // tau_lower = 0: some gain reads land inside the step being solved, so
    // the fixed point couples the gain as well; the run must still converge
    // and keep the trivial solution exact
    let mut cfg = baseline_config();
    cfg.kernel.min_age = 0.0;
    let model = cfg.validate().unwrap();

    let zero = solve_field(
        &model,
        &InitialData::constant(0.0),
        3.0,
        &FieldParams::default(),
    )
    .unwrap();
    for k in 0..zero.num_slices() {
        assert!(zero.slice(k).iter().all(|&v| v == 0.0));
    }

    let field = solve_field(
        &model,
        &InitialData::constant(1.0),
        4.0,
        &FieldParams::default(),
    )
    .unwrap();
    assert!((field.dt() - 2.0 / 64.0).abs() < 1e-12);
    assert!(field.meta.picard_max_residual < 1e-11);
    assert!(field.min_value() >= -1e-9);
}

#[test]
fn nonnegative_data_stay_nonnegative() {
    let model = baseline();
    for (i, data) in [
        InitialData::constant(0.7),
        InitialData::separable(
            TimeCoef::Cosine {
                mean: 1.0,
                amplitude: 0.5,
                angular_frequency: 1.3,
                phase: 0.4,
            },
            MatCoef::Affine {
                intercept: 0.2,
                slope: 0.6,
            },
        ),
        InitialData::separable(
            TimeCoef::Constant { value: 1.0 },
            MatCoef::Bump {
                lo: 0.05,
                hi: 0.9,
                amplitude: 2.0,
            },
        ),
    ]
    .iter()
    .enumerate()
    {
        let field = solve_field(&model, data, 8.0, &FieldParams::default()).unwrap();
        let min = field.min_value();
        assert!(min >= -1e-9, "data {i}: min {min}");
    }
}

#[test]
fn dt_above_tau_lower_is_rejected() {
    let model = baseline();
    let params = FieldParams {
        dt: Some(1.5),
        ..FieldParams::default()
    };
    match solve_field(&model, &InitialData::constant(1.0), 5.0, &params) {
        Err(FieldError::InvalidGrid(msg)) => assert!(msg.contains("reduce dt")),
        other => panic!("expected InvalidGrid, got {other:?}"),
    }
}

#[test]
fn worker_count_does_not_change_bytes() {
    let model = baseline();
    let data = InitialData::separable(
        TimeCoef::Constant { value: 1.0 },
        MatCoef::Affine {
            intercept: 0.3,
            slope: 0.5,
        },
    );
    let a = solve_field(&model, &data, 6.0, &FieldParams::default()).unwrap();
    let b = solve_field(
        &model,
        &data,
        6.0,
        &FieldParams {
            workers: 4,
            ..FieldParams::default()
        },
    )
    .unwrap();
    for k in 0..a.num_slices() {
        for j in 0..a.grid().len() {
            assert_eq!(a.slice(k)[j].to_bits(), b.slice(k)[j].to_bits());
        }
    }
}

#[test]
fn reconstruct_p_pure_decay_when_resting_surface_is_zero() {
    // sources vanish, so P is the initial slice transported and attenuated:
    // for constant gamma + linear V, P(t, m) = p0 e^{-(gamma + r)(t - tau)}
    let model = baseline();
    let n_field = solve_field(
        &model,
        &InitialData::constant(0.0),
        8.0,
        &FieldParams::default(),
    )
    .unwrap();
    let p0 = 1.7;
    let p = reconstruct_p(&model, &n_field, |_| p0, 32).unwrap();
    for k in 0..p.num_slices() {
        let t = p.slice_time(k);
        let exact = p0 * (-(t - model.tau_upper())).exp();
        for (j, &v) in p.slice(k).iter().enumerate() {
            assert!(
                (v - exact).abs() < 1e-9,
                "P({t}, node {j}) = {v}, want {exact}"
            );
        }
        assert!((p.boundary_x(t) - exact).abs() < 1e-9);
    }
}

#[test]
fn reconstruct_p_zero_everywhere_from_zero_inputs() {
    let model = baseline();
    let n_field = solve_field(
        &model,
        &InitialData::constant(0.0),
        6.0,
        &FieldParams::default(),
    )
    .unwrap();
    let p = reconstruct_p(&model, &n_field, |_| 0.0, 32).unwrap();
    for k in 0..p.num_slices() {
        assert!(p.slice(k).iter().all(|&v| v == 0.0));
    }
}

#[test]
fn reconstruct_p_constant_resting_surface_matches_scalar_oracle() {
    // N held at a constant: every node obeys p' = -nu p + lambda0(x)(1 - z),
    // whose solution from zero is (lambda0(x)(1-z)/nu)(1 - e^{-nu (t-tau)}).
    let model = baseline();
    let x0 = 0.1;
    let dt = 0.0625;
    let n_slices = (8.0 / dt) as usize + 1;
    let n_field = constant_field(&model, x0, dt, n_slices);
    let p = reconstruct_p(&model, &n_field, |_| 0.0, 32).unwrap();
    let c = model.constants();
    let lam = model.lambda_beta(0.0, x0);
    for k in [10, 40, p.num_slices() - 1] {
        let t = p.slice_time(k);
        let exact = lam * (1.0 - c.z) * (1.0 - (-(t - model.tau_upper())).exp());
        for (j, &v) in p.slice(k).iter().enumerate() {
            assert!(
                (v - exact).abs() < 1e-4,
                "P({t}, node {j}) = {v}, oracle {exact}"
            );
        }
    }
}

#[test]
fn truncated_data_agree_with_original_after_t_bar() {
    // flattening above b leaves the surface unchanged from t_bar on
    let model = baseline();
    let phi = InitialData::separable(
        TimeCoef::Constant { value: 1.0 },
        MatCoef::Affine {
            intercept: 0.5,
            slope: 0.5,
        },
    );
    let b = 0.45;
    let phib = phi.truncate_above(b);
    let out = experiments::run_agreement(
        &model,
        &phi,
        &phib,
        b,
        0.0, // horizon floor; raised to t_bar + 1 internally
        &FieldParams::default(),
    )
    .unwrap();
    assert!(out.pass, "diff after t_bar: {}", out.max_diff_after);
    assert!(
        out.early_max_diff > 1e-3,
        "data should differ early: {}",
        out.early_max_diff
    );
}

#[test]
fn field_convergence_under_step_refinement() {
    // halving dt (and dy with it) should shrink the error by ~4: the
    // transport quadrature is Simpson but gain reads interpolate linearly
    // between slices, which makes the scheme second order overall
    let model = baseline();
    let data = InitialData::separable(
        TimeCoef::Cosine {
            mean: 1.0,
            amplitude: 0.3,
            angular_frequency: 0.9,
            phase: 0.2,
        },
        MatCoef::Affine {
            intercept: 0.4,
            slope: 0.5,
        },
    );
    let probe_y = -3.0f64;
    let t_probe = 8.0f64;
    let mut vals = Vec::new();
    for dt in [1.0 / 16.0, 1.0 / 32.0, 1.0 / 64.0] {
        let params = FieldParams {
            y_min: -9.0,
            dt: Some(dt),
            ..FieldParams::default()
        };
        let f = solve_field(&model, &data, t_probe, &params).unwrap();
        let j = ((probe_y - f.grid().y_min()) / f.grid().dy()).round() as usize;
        assert!((f.grid().ys()[j] - probe_y).abs() < 1e-12);
        let k = ((t_probe - f.start()) / f.dt()).round() as usize;
        vals.push(f.slice(k)[j]);
    }
    let ratio = (vals[0] - vals[1]).abs() / (vals[1] - vals[2]).abs();
    assert!(
        (3.0..7.0).contains(&ratio),
        "refinement ratio {ratio} outside the second-order window"
    );
}

#[test]
fn minimal_horizon_solves_single_slice() {
    let model = baseline();
    let f = solve_field(
        &model,
        &InitialData::constant(0.5),
        model.tau_upper() + 0.01,
        &FieldParams::default(),
    )
    .unwrap();
    assert_eq!(f.num_slices(), f.first_solved() + 2);
    let p = reconstruct_p(&model, &f, |_| 0.3, 32).unwrap();
    assert_eq!(p.num_slices(), 2);
    assert!(p.slice(1).iter().all(|v| v.is_finite()));
}
