//! End-to-end acceptance suite: one test per numbered criterion, each
//! asserting its stated tolerance and printing a pass line.

use std::sync::OnceLock;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use marrow_core::dde::{self, DdeOptions, ScalarHistory};
use marrow_core::field::{self, experiments, InitialData, MatCoef, TimeCoef};
use marrow_core::flow;
use marrow_core::model::presets::{baseline_config, weak_damping_config};
use marrow_core::model::{DivisionMap, ValidatedModel, VelocityProfile};
use marrow_core::quad::KernelQuad;
use marrow_core::stability;
use marrow_core::FieldParams;

fn baseline() -> &'static ValidatedModel {
    static M: OnceLock<ValidatedModel> = OnceLock::new();
    M.get_or_init(|| baseline_config().validate().unwrap())
}

fn weak_damping() -> &'static ValidatedModel {
    static M: OnceLock<ValidatedModel> = OnceLock::new();
    M.get_or_init(|| weak_damping_config().validate().unwrap())
}

/// Shared homogeneous solve (criteria 7, 8, 11): baseline model, unit
/// initial surface, horizon 40, ~200 nodes.
fn homogeneous_field() -> &'static field::Field {
    static F: OnceLock<field::Field> = OnceLock::new();
    F.get_or_init(|| {
        field::solve_field(
            baseline(),
            &InitialData::constant(1.0),
            40.0,
            &FieldParams::default(),
        )
        .expect("baseline field solve")
    })
}

fn linear_model(rate: f64, ratio: f64) -> ValidatedModel {
    let mut cfg = baseline_config();
    cfg.velocity = VelocityProfile::Linear { rate };
    cfg.division = DivisionMap::Linear { ratio };
    cfg.validate().unwrap()
}

fn power_model(coefficient: f64, exponent: f64, ratio: f64) -> ValidatedModel {
    let mut cfg = baseline_config();
    cfg.velocity = VelocityProfile::Power {
        coefficient,
        exponent,
    };
    cfg.division = DivisionMap::Linear { ratio };
    cfg.validate().unwrap()
}

#[test]
fn criterion_01_flow_exactness() {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut models: Vec<ValidatedModel> = Vec::new();
    for _ in 0..10 {
        models.push(linear_model(
            rng.gen_range(0.1..5.0),
            rng.gen_range(0.2..0.9),
        ));
    }
    for _ in 0..10 {
        models.push(power_model(
            rng.gen_range(0.2..5.0),
            rng.gen_range(1.0..3.0),
            rng.gen_range(0.2..0.9),
        ));
    }
    let mut max_semigroup = 0.0_f64;
    let mut max_closed = 0.0_f64;
    for model in &models {
        for _ in 0..500 {
            let m = rng.gen_range(0.0..=1.0);
            let s = -rng.gen_range(0.0..4.0);
            let t = -rng.gen_range(0.0..4.0);
            let a = flow::pi(model, s, flow::pi(model, t, m));
            let b = flow::pi(model, s + t, m);
            max_semigroup = max_semigroup.max((a - b).abs());
            if let VelocityProfile::Linear { rate } = model.config().velocity {
                let exact = m * (rate * (s + t)).exp();
                max_closed = max_closed.max((b - exact).abs());
            }
        }
    }
    assert!(max_semigroup < 1e-10, "semigroup error {max_semigroup}");
    assert!(max_closed < 1e-10, "closed-form error {max_closed}");
    println!(
        "criterion 01 flow-exactness: PASS (semigroup {max_semigroup:.2e}, closed form {max_closed:.2e})"
    );
}

#[test]
fn criterion_02_kernel_normalization() {
    let mut worst = 0.0_f64;
    for c in [0.5, 1.0, 2.0, 5.0] {
        let mut cfg = baseline_config();
        cfg.kernel.shape = c;
        let model = cfg.validate().unwrap();
        let quad = KernelQuad::new(&model, 32);
        let mass: f64 = quad.weights().iter().sum();
        let err = (mass - 1.0).abs();
        worst = worst.max(err);
        assert!(err < 1e-8, "shape {c}: kernel mass error {err}");
    }
    println!("criterion 02 kernel-normalization: PASS (worst error {worst:.2e})");
}

#[test]
fn criterion_03_constants_golden() {
    let c = baseline().constants();
    let zt_exact = 4.0 * (-2.0_f64).exp();
    let z_exact = 2.0 * (-2.0_f64).exp();
    let checks = [
        ("I", c.i_inf, 2.0),
        ("tau0", c.tau0.unwrap(), 2.0_f64.ln()),
        ("L", c.lipschitz, 0.5),
        ("zeta_tilde", c.zeta_tilde, zt_exact),
        ("z", c.z, z_exact),
    ];
    for (name, got, want) in checks {
        assert!(
            (got - want).abs() < 1e-9,
            "{name}: {got} vs symbolic {want}"
        );
    }
    println!("criterion 03 constants-golden: PASS (all five within 1e-9)");
}

#[test]
fn criterion_04_trivial_invariance() {
    let model = baseline();
    let psi = ScalarHistory::constant(model, 0.0);
    let sol = dde::integrate(model, &psi, 20.0, &DdeOptions::new(0.125)).unwrap();
    assert!(sol.values().iter().all(|&x| x.to_bits() == 0));

    let f = field::solve_field(
        model,
        &InitialData::constant(0.0),
        10.0,
        &FieldParams::default(),
    )
    .unwrap();
    for k in 0..f.num_slices() {
        assert!(f.slice(k).iter().all(|&v| v.to_bits() == 0));
    }
    println!("criterion 04 trivial-invariance: PASS (bit-exact zeros)");
}

#[test]
fn criterion_05_dde_nonnegativity_and_global_stability() {
    let model = baseline();
    let mut rng = ChaCha8Rng::seed_from_u64(505);
    let mut min_x = f64::INFINITY;
    let mut max_final = 0.0_f64;
    let mut worst_h_excess = f64::NEG_INFINITY;
    for case in 0..100 {
        let psi = match case {
            0 => ScalarHistory::constant(model, 0.0),
            1 => ScalarHistory::constant(model, 1.0),
            2 => {
                // touches zero smoothly at both ends
                ScalarHistory::from_fn(
                    model,
                    0.0,
                    0.03125,
                    |t| 1.5 * (std::f64::consts::PI * t / 2.0).sin().powi(2),
                    |t| {
                        1.5 * std::f64::consts::PI
                            * (std::f64::consts::PI * t / 2.0).sin()
                            * (std::f64::consts::PI * t / 2.0).cos()
                    },
                )
                .unwrap()
            }
            _ => {
                let c0 = rng.gen_range(-1.0..1.0);
                let c1 = rng.gen_range(-1.0..1.0);
                let w1 = rng.gen_range(0.3..3.0);
                let p1 = rng.gen_range(0.0..std::f64::consts::TAU);
                let c2 = rng.gen_range(-0.5..0.5);
                let w2 = rng.gen_range(0.3..3.0);
                ScalarHistory::from_fn(
                    model,
                    0.0,
                    0.03125,
                    move |t| (c0 + c1 * (w1 * t + p1).sin() + c2 * (w2 * t).cos()).exp(),
                    move |t| {
                        (c0 + c1 * (w1 * t + p1).sin() + c2 * (w2 * t).cos()).exp()
                            * (c1 * w1 * (w1 * t + p1).cos() - c2 * w2 * (w2 * t).sin())
                    },
                )
                .unwrap()
            }
        };
        let sol = dde::integrate(model, &psi, 60.0, &DdeOptions::new(0.125)).unwrap();
        min_x = min_x.min(sol.values().iter().cloned().fold(f64::INFINITY, f64::min));
        max_final = max_final.max(sol.final_x().abs());
        let report = dde::check_h_monotone(model, &sol);
        assert!(report.criterion_holds);
        assert!(
            report.ok,
            "case {case}: H increased by {} (tol {})",
            report.max_increase, report.tolerance
        );
        worst_h_excess = worst_h_excess.max(report.max_increase - report.tolerance);
    }
    assert!(min_x >= -1e-9, "min x = {min_x}");
    assert!(max_final < 1e-4, "x(60) = {max_final}");
    println!(
        "criterion 05 dde-nonnegativity-global-stability: PASS (min x {min_x:.2e}, max x(60) {max_final:.2e}, H excess {worst_h_excess:.2e})"
    );
}

#[test]
fn criterion_06_constant_solution_fidelity() {
    let out = experiments::run_equilibrium(weak_damping(), 50.0, 0.125, 1e-6).unwrap();
    assert!(
        out.pass,
        "drift {} exceeds {}",
        out.max_drift, out.tolerance
    );
    println!(
        "criterion 06 constant-solution-fidelity: PASS (x* = {:.6}, drift {:.2e})",
        out.x_star, out.max_drift
    );
}

#[test]
fn criterion_07_exponential_decay() {
    let model = baseline();
    let f = homogeneous_field();
    let sup = f.sup_series();
    let peak = sup.iter().fold(0.0_f64, |a, &(_, v)| a.max(v));
    assert!(peak <= 1.0, "sup-norm invariance violated: {peak}");
    let rate = dde::fit_decay_rate(&sup).unwrap();
    let rho = model.constants().rho.unwrap();
    assert!(
        rate >= 0.9 * rho,
        "fitted rate {rate} below 0.9 rho = {}",
        0.9 * rho
    );
    println!(
        "criterion 07 exponential-decay: PASS (sup peak {peak:.6}, fitted rate {rate:.4} >= 0.9 rho = {:.4})",
        0.9 * rho
    );
}

#[test]
fn criterion_08_picard_contraction() {
    let model = baseline();
    let f = homogeneous_field();
    let alpha = model.constants().alpha.unwrap();
    let worst = f.meta.picard_max_ratio;
    assert!(
        worst <= alpha + 0.1,
        "iterate ratio {worst} above alpha + 0.1 = {}",
        alpha + 0.1
    );
    println!(
        "criterion 08 picard-contraction: PASS (max ratio {worst:.4} <= alpha + 0.1 = {:.4})",
        alpha + 0.1
    );
}

#[test]
fn criterion_09_extinction() {
    let model = baseline();
    let phi = InitialData::separable(
        TimeCoef::Constant { value: 1.0 },
        MatCoef::RampAbove {
            threshold: 0.1,
            power: 2.0,
        },
    );
    let out = experiments::run_extinction(model, &phi, 0.1, 0.5, &FieldParams::default()).unwrap();
    assert!((out.t_bar - 16.302585).abs() < 1e-5, "t_bar {}", out.t_bar);
    assert!(
        out.early_sup > out.tolerance,
        "data decayed before the frontier arrived"
    );
    assert!(
        out.pass,
        "sup at t = {} is {} (tol {})",
        out.probe_time, out.sup_at_probe, out.tolerance
    );
    println!(
        "criterion 09 extinction: PASS (t_bar {:.4}, sup at {:.2} = {:.2e} < {:.2e})",
        out.t_bar, out.probe_time, out.sup_at_probe, out.tolerance
    );
}

#[test]
fn criterion_10_agreement() {
    let model = baseline();
    let phi1 = InitialData::constant(1.0);
    let phi2 = InitialData::sum(vec![
        InitialData::constant(1.0),
        InitialData::separable(
            TimeCoef::Constant { value: 1.0 },
            MatCoef::Bump {
                lo: 0.12,
                hi: 0.8,
                amplitude: 0.5,
            },
        ),
    ]);
    let out = experiments::run_agreement(model, &phi1, &phi2, 0.1, 20.0, &FieldParams::default())
        .unwrap();
    assert!(
        out.early_max_diff > 1e-4,
        "solutions never differed: {}",
        out.early_max_diff
    );
    assert!(
        out.pass,
        "diff after t_bar = {} is {} (tol {})",
        out.t_bar, out.max_diff_after, out.tolerance
    );
    println!(
        "criterion 10 agreement: PASS (early diff {:.2e}, after t_bar {:.2e} < {:.2e})",
        out.early_max_diff, out.max_diff_after, out.tolerance
    );
}

#[test]
fn criterion_11_cross_solver_consistency() {
    let model = baseline();
    let f = homogeneous_field();
    let mut opts = DdeOptions::new(f.dt() / 4.0);
    opts.gain_scale = model.g_inv_derivative(0.0);
    let psi = ScalarHistory::constant(model, 1.0);
    let reference = dde::integrate(model, &psi, 40.0, &opts).unwrap();
    let g1 = model.g1();
    let mut worst = 0.0_f64;
    for k in f.first_solved()..f.num_slices() {
        let t = f.slice_time(k);
        let x = reference.eval(t.min(reference.end()));
        for (j, &m) in f.grid().ms().iter().enumerate() {
            if m < g1 {
                worst = worst.max((f.slice(k)[j] - x).abs());
            }
        }
    }
    assert!(worst < 5e-4, "field vs boundary integrator: {worst}");
    println!("criterion 11 cross-solver-consistency: PASS (max |N - x| = {worst:.2e})");
}

#[test]
fn criterion_12_dde_order_check() {
    let model = baseline();
    let target = model.tau_upper() + model.tau_lower();
    let sol_at = |dt: f64| -> f64 {
        let psi = ScalarHistory::from_fn(
            model,
            0.0,
            dt,
            |t| 0.6 + 0.3 * (std::f64::consts::PI * t / 2.0).cos(),
            |t| -0.15 * std::f64::consts::PI * (std::f64::consts::PI * t / 2.0).sin(),
        )
        .unwrap();
        dde::integrate(model, &psi, target, &DdeOptions::new(dt))
            .unwrap()
            .final_x()
    };
    let (c, m, f) = (sol_at(0.125), sol_at(0.0625), sol_at(0.03125));
    let ratio = (c - m).abs() / (m - f).abs();
    assert!(
        (11.0..=21.0).contains(&ratio),
        "Richardson ratio {ratio} outside [11, 21]"
    );
    println!("criterion 12 dde-order-check: PASS (Richardson ratio {ratio:.2})");
}

#[test]
fn stability_report_examples_hold() {
    // certificate sanity accompanying the acceptance run
    let report = stability::evaluate(baseline());
    assert!(report.local_exp_stable.holds);
    assert!(report.dde_global_stable.holds);
    assert!(report.structural.holds);
    let weak = stability::evaluate(weak_damping());
    assert!(!weak.dde_global_stable.holds);
}
