//! Property tests for the structural invariants of the flow, kernels and
//! reintroduction rate, over randomly drawn model configurations.

use proptest::prelude::*;

use marrow_core::flow;
use marrow_core::kernels;
use marrow_core::model::presets::baseline_config;
use marrow_core::model::{Coefficient, DivisionMap, ModelConfig, VelocityProfile};
use marrow_core::quad::KernelQuad;

fn model_config() -> impl Strategy<Value = ModelConfig> {
    let velocity = prop_oneof![
        (0.1..5.0_f64).prop_map(|rate| VelocityProfile::Linear { rate }),
        (0.2..4.0_f64, 1.0..3.0_f64).prop_map(|(coefficient, exponent)| {
            VelocityProfile::Power {
                coefficient,
                exponent,
            }
        }),
    ];
    let coefficient = prop_oneof![
        (0.05..3.0_f64).prop_map(|value| Coefficient::Constant { value }),
        (0.05..2.0_f64, 0.0..1.0_f64)
            .prop_map(|(intercept, slope)| Coefficient::Affine { intercept, slope }),
    ];
    (
        velocity,
        0.1..0.9_f64,
        coefficient.clone(),
        coefficient.clone(),
        0.0..1.5_f64,
        0.2..2.0_f64,
        0.3..6.0_f64,
        coefficient,
        1.0..4.0_f64,
    )
        .prop_map(
            |(velocity, ratio, delta, a, tau_lower, tau_gap, shape, b, exponent)| {
                let mut cfg = baseline_config();
                cfg.velocity = velocity;
                cfg.division = DivisionMap::Linear { ratio };
                cfg.rates.delta = delta;
                cfg.kernel.min_age = tau_lower;
                cfg.kernel.max_age = tau_lower + tau_gap;
                cfg.kernel.shape = shape;
                cfg.beta.a = a;
                cfg.beta.b = b;
                cfg.beta.exponent = exponent;
                cfg
            },
        )
}

proptest! {
    #[test]
    fn flow_semigroup_law(cfg in model_config(), m in 0.0..=1.0f64, s in -4.0..=0.0f64, t in -4.0..=0.0f64) {
        let model = cfg.validate().unwrap();
        let a = flow::pi(&model, s, flow::pi(&model, t, m));
        let b = flow::pi(&model, s + t, m);
        prop_assert!((a - b).abs() < 1e-10, "semigroup error {} at m={m}", (a - b).abs());
    }

    #[test]
    fn flow_round_trip(cfg in model_config(), m in 0.001..=1.0f64) {
        let model = cfg.validate().unwrap();
        let back = flow::h_inv_log(&model, flow::log_h(&model, m));
        prop_assert!((back - m).abs() < 1e-12);
    }

    #[test]
    fn retardation_threshold_predicate(cfg in model_config(), frac in 0.01..=0.99f64, a in 0.0..=5.0f64) {
        // Delta(a, m) < m exactly when a exceeds the daughter-to-mother
        // maturation time, away from the threshold itself
        let model = cfg.validate().unwrap();
        let m = frac * model.g1();
        let thr = flow::maturation_time(&model, m, model.g_inv(m)).unwrap();
        prop_assume!((a - thr).abs() > 1e-9);
        let shrunk = model.g1() * 0.0 + flow::retardation(&model, a, m);
        prop_assert_eq!(m - shrunk > 0.0, a > thr);
    }

    #[test]
    fn beta_nonincreasing_and_flat_below_zero(cfg in model_config(), m in 0.0..=1.0f64,
                                              x1 in -5.0..=50.0f64, x2 in -5.0..=50.0f64) {
        let model = cfg.validate().unwrap();
        let (lo, hi) = if x1 <= x2 { (x1, x2) } else { (x2, x1) };
        prop_assert!(model.beta(m, lo) >= model.beta(m, hi) - 1e-15);
        prop_assert_eq!(model.beta(m, -3.0), model.beta(m, 0.0));
    }

    #[test]
    fn survival_is_a_decreasing_probability(cfg in model_config(), f1 in 0.0..=1.0f64, f2 in 0.0..=1.0f64) {
        let model = cfg.validate().unwrap();
        let a1 = f1 * model.tau_upper();
        let a2 = f2 * model.tau_upper();
        let (lo, hi) = if a1 <= a2 { (a1, a2) } else { (a2, a1) };
        let s_lo = kernels::survival(&model, lo).unwrap();
        let s_hi = kernels::survival(&model, hi).unwrap();
        prop_assert!((0.0..=1.0).contains(&s_lo));
        prop_assert!(s_hi <= s_lo + 1e-15);
    }

    #[test]
    fn kernel_mass_is_one(cfg in model_config()) {
        let model = cfg.validate().unwrap();
        let quad = KernelQuad::new(&model, 32);
        let mass: f64 = quad.weights().iter().sum();
        prop_assert!((mass - 1.0).abs() < 1e-12, "mass {mass}");
    }

    #[test]
    fn attenuations_bounded_and_ordered(cfg in model_config(), t in 0.0..=5.0f64, m in 0.0..=1.0f64) {
        let model = cfg.validate().unwrap();
        let xi = kernels::xi(&model, t, m);
        let kk = kernels::big_k(&model, t, m);
        prop_assert!(xi > 0.0 && xi <= 1.0);
        prop_assert!(kk > 0.0 && kk <= 1.0);
        let i_inf = model.constants().i_inf;
        prop_assert!(kk <= (-i_inf * t).exp() * (1.0 + 1e-12));
    }
}
