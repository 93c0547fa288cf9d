//! Parametric coefficient families and the validated model they assemble.
//!
//! All coefficients are closed-form families rather than arbitrary
//! callbacks, so a model instance is fully serializable and every derived
//! integral is either closed-form or smoothly quadrable.

use std::sync::OnceLock;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kernels::DerivedConstants;

/// Number of sample points used for direct invariant checks at validation.
const VALIDATION_GRID: usize = 256;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid velocity: {0}")]
    InvalidVelocity(String),
    #[error("invalid division map: {0}")]
    InvalidDivisionMap(String),
    #[error("invalid division kernel: {0}")]
    InvalidKernel(String),
    #[error("invalid reintroduction rate: {0}")]
    InvalidBeta(String),
    #[error("invalid loss rate: {0}")]
    InvalidRate(String),
}

/// Maturation velocity `V(m)`; `V(0) = 0` makes maturity zero invariant and
/// both families make the time to mature away from zero infinite.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum VelocityProfile {
    /// `V(m) = rate * m`
    Linear { rate: f64 },
    /// `V(m) = coefficient * m^exponent`, exponent >= 1
    Power { coefficient: f64, exponent: f64 },
}

impl VelocityProfile {
    pub fn value(&self, m: f64) -> f64 {
        match *self {
            VelocityProfile::Linear { rate } => rate * m,
            VelocityProfile::Power {
                coefficient,
                exponent,
            } => coefficient * m.powf(exponent),
        }
    }

    pub fn derivative(&self, m: f64) -> f64 {
        match *self {
            VelocityProfile::Linear { rate } => rate,
            VelocityProfile::Power {
                coefficient,
                exponent,
            } => {
                if m == 0.0 && exponent > 1.0 {
                    0.0
                } else {
                    coefficient * exponent * m.powf(exponent - 1.0)
                }
            }
        }
    }

    fn check(&self) -> Result<(), ModelError> {
        match *self {
            VelocityProfile::Linear { rate } => {
                if !(rate.is_finite() && rate > 0.0) {
                    return Err(ModelError::InvalidVelocity(format!(
                        "field `rate` must be finite and > 0, got {rate}"
                    )));
                }
            }
            VelocityProfile::Power {
                coefficient,
                exponent,
            } => {
                if !(coefficient.is_finite() && coefficient > 0.0) {
                    return Err(ModelError::InvalidVelocity(format!(
                        "field `coefficient` must be finite and > 0, got {coefficient}"
                    )));
                }
                if !(exponent.is_finite() && exponent >= 1.0) {
                    return Err(ModelError::InvalidVelocity(format!(
                        "field `exponent` must be finite and >= 1, got {exponent}"
                    )));
                }
            }
        }
        for i in 1..=VALIDATION_GRID {
            let m = i as f64 / VALIDATION_GRID as f64;
            let v = self.value(m);
            if v.is_nan() || v <= 0.0 {
                return Err(ModelError::InvalidVelocity(format!(
                    "V({m}) = {v} is not positive"
                )));
            }
        }
        Ok(())
    }
}

/// Division map `g`: maturity of each daughter given the mother maturity at
/// cytokinesis. `g(m) < m` on `(0, 1)` and `g_inv(m) = 1` above `g(1)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum DivisionMap {
    /// `g(m) = ratio * m` with ratio in (0, 1)
    Linear { ratio: f64 },
}

impl DivisionMap {
    pub fn value(&self, m: f64) -> f64 {
        match *self {
            DivisionMap::Linear { ratio } => ratio * m,
        }
    }

    /// Upper bound of the daughter maturity range, `g(1)`.
    pub fn g1(&self) -> f64 {
        self.value(1.0)
    }

    pub fn inverse(&self, m: f64) -> f64 {
        match *self {
            DivisionMap::Linear { ratio } => {
                if m > self.g1() {
                    1.0
                } else {
                    m / ratio
                }
            }
        }
    }

    /// Derivative of the inverse. The jump point `m = g(1)` takes the left
    /// value so the gain kernel stays upper-semicontinuous there.
    pub fn inverse_derivative(&self, m: f64) -> f64 {
        match *self {
            DivisionMap::Linear { ratio } => {
                if m > self.g1() {
                    0.0
                } else {
                    1.0 / ratio
                }
            }
        }
    }

    fn check(&self) -> Result<(), ModelError> {
        match *self {
            DivisionMap::Linear { ratio } => {
                if !(ratio.is_finite() && ratio > 0.0 && ratio < 1.0) {
                    return Err(ModelError::InvalidDivisionMap(format!(
                        "field `ratio` must lie in (0, 1), got {ratio}"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// A scalar coefficient of maturity, shared by the loss rates and the
/// reintroduction parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum Coefficient {
    Constant { value: f64 },
    Affine { intercept: f64, slope: f64 },
}

impl Coefficient {
    pub fn value(&self, m: f64) -> f64 {
        match *self {
            Coefficient::Constant { value } => value,
            Coefficient::Affine { intercept, slope } => intercept + slope * m,
        }
    }

    pub fn constant(value: f64) -> Self {
        Coefficient::Constant { value }
    }

    fn check_nonnegative(
        &self,
        name: &str,
        err: fn(String) -> ModelError,
    ) -> Result<(), ModelError> {
        for i in 0..=VALIDATION_GRID {
            let m = i as f64 / VALIDATION_GRID as f64;
            let v = self.value(m);
            if !(v.is_finite() && v >= 0.0) {
                return Err(err(format!(
                    "field `{name}` at m = {m} is {v}, must be >= 0"
                )));
            }
        }
        Ok(())
    }

    fn check_positive(&self, name: &str, err: fn(String) -> ModelError) -> Result<(), ModelError> {
        for i in 0..=VALIDATION_GRID {
            let m = i as f64 / VALIDATION_GRID as f64;
            let v = self.value(m);
            if !(v.is_finite() && v > 0.0) {
                return Err(err(format!(
                    "field `{name}` at m = {m} is {v}, must be > 0"
                )));
            }
        }
        Ok(())
    }
}

/// Loss rates: `delta` in the resting phase (differentiation), `gamma` in
/// the proliferating phase (apoptosis). Zero is permitted; the stability
/// report flags it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RateProfile {
    pub delta: Coefficient,
    pub gamma: Coefficient,
}

/// Division hazard `kappa(a) = shape / (max_age - a)` on `[min_age,
/// max_age)`, zero below `min_age`. The pole at `max_age` forces division
/// before that age; the induced age-at-division density is
/// `k(a) = shape (max_age - a)^(shape-1) / (max_age - min_age)^shape`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DivisionKernel {
    pub min_age: f64,
    pub max_age: f64,
    pub shape: f64,
}

impl DivisionKernel {
    fn check(&self) -> Result<(), ModelError> {
        if !(self.min_age.is_finite() && self.min_age >= 0.0) {
            return Err(ModelError::InvalidKernel(format!(
                "field `min_age` must be finite and >= 0, got {}",
                self.min_age
            )));
        }
        if !(self.max_age.is_finite() && self.max_age > self.min_age) {
            return Err(ModelError::InvalidKernel(format!(
                "field `max_age` must exceed min_age = {}, got {}",
                self.min_age, self.max_age
            )));
        }
        if !(self.shape.is_finite() && self.shape > 0.0) {
            return Err(ModelError::InvalidKernel(format!(
                "field `shape` must be finite and > 0, got {}",
                self.shape
            )));
        }
        Ok(())
    }
}

/// Hill-type reintroduction rate from rest into proliferation:
/// `beta(m, x) = a(m) / (x^n + b(m))` for `x >= 0`, constant `a(m)/b(m)`
/// for `x < 0`. Decreasing in the local density and vanishing at infinity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Reintroduction {
    pub a: Coefficient,
    pub b: Coefficient,
    pub exponent: f64,
}

impl Reintroduction {
    fn check(&self) -> Result<(), ModelError> {
        self.a.check_positive("a", ModelError::InvalidBeta)?;
        self.b.check_positive("b", ModelError::InvalidBeta)?;
        if !(self.exponent.is_finite() && self.exponent >= 1.0) {
            return Err(ModelError::InvalidBeta(format!(
                "field `exponent` must be finite and >= 1, got {}",
                self.exponent
            )));
        }
        Ok(())
    }
}

/// One model instance, as parsed from external input.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub velocity: VelocityProfile,
    pub division: DivisionMap,
    pub rates: RateProfile,
    pub kernel: DivisionKernel,
    pub beta: Reintroduction,
}

impl ModelConfig {
    /// Check every family invariant and freeze the configuration.
    pub fn validate(self) -> Result<ValidatedModel, ModelError> {
        self.velocity.check()?;
        self.division.check()?;
        self.rates
            .delta
            .check_nonnegative("delta", ModelError::InvalidRate)?;
        self.rates
            .gamma
            .check_nonnegative("gamma", ModelError::InvalidRate)?;
        self.kernel.check()?;
        self.beta.check()?;
        Ok(ValidatedModel {
            cfg: self,
            constants: OnceLock::new(),
        })
    }
}

/// A model whose invariants have been checked. Immutable after
/// construction, so it can be shared freely across threads.
#[derive(Debug)]
pub struct ValidatedModel {
    cfg: ModelConfig,
    constants: OnceLock<DerivedConstants>,
}

impl ValidatedModel {
    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    pub fn velocity(&self, m: f64) -> f64 {
        self.cfg.velocity.value(m)
    }

    pub fn velocity_derivative(&self, m: f64) -> f64 {
        self.cfg.velocity.derivative(m)
    }

    pub fn g(&self, m: f64) -> f64 {
        self.cfg.division.value(m)
    }

    /// `g(1)`, the top of the daughter maturity range.
    pub fn g1(&self) -> f64 {
        self.cfg.division.g1()
    }

    pub fn g_inv(&self, m: f64) -> f64 {
        self.cfg.division.inverse(m)
    }

    pub fn g_inv_derivative(&self, m: f64) -> f64 {
        self.cfg.division.inverse_derivative(m)
    }

    pub fn delta(&self, m: f64) -> f64 {
        self.cfg.rates.delta.value(m)
    }

    pub fn gamma(&self, m: f64) -> f64 {
        self.cfg.rates.gamma.value(m)
    }

    pub fn tau_lower(&self) -> f64 {
        self.cfg.kernel.min_age
    }

    pub fn tau_upper(&self) -> f64 {
        self.cfg.kernel.max_age
    }

    pub fn kernel_shape(&self) -> f64 {
        self.cfg.kernel.shape
    }

    /// Reintroduction rate `beta(m, x)`; constant in `x` below zero, which
    /// keeps the solvers total on tiny negative excursions.
    pub fn beta(&self, m: f64, x: f64) -> f64 {
        let a = self.cfg.beta.a.value(m);
        let b = self.cfg.beta.b.value(m);
        if x < 0.0 {
            return a / b;
        }
        let n = self.cfg.beta.exponent;
        if n == 1.0 {
            a / (x + b)
        } else {
            a / (x.powf(n) + b)
        }
    }

    /// `beta` at the primitive boundary maturity `m = 0`.
    pub fn beta0(&self, x: f64) -> f64 {
        self.beta(0.0, x)
    }

    /// The nonlinear flux `x * beta(m, x)`.
    pub fn lambda_beta(&self, m: f64, x: f64) -> f64 {
        x * self.beta(m, x)
    }

    /// Every scalar constant the stability certificates use, computed once.
    pub fn constants(&self) -> &DerivedConstants {
        self.constants
            .get_or_init(|| crate::kernels::derived_constants(self))
    }
}

/// Ready-made configurations used across the test suites and as CLI
/// starting points.
pub mod presets {
    use super::*;

    /// Strongly damped reference model: linear velocity (rate 1), division
    /// ratio 0.5, delta = 1, gamma = 0, kernel shape 2 on ages [1, 2],
    /// Hill reintroduction a = 0.5, b = 1, n = 1.
    pub fn baseline_config() -> ModelConfig {
        ModelConfig {
            velocity: VelocityProfile::Linear { rate: 1.0 },
            division: DivisionMap::Linear { ratio: 0.5 },
            rates: RateProfile {
                delta: Coefficient::constant(1.0),
                gamma: Coefficient::constant(0.0),
            },
            kernel: DivisionKernel {
                min_age: 1.0,
                max_age: 2.0,
                shape: 2.0,
            },
            beta: Reintroduction {
                a: Coefficient::constant(0.5),
                b: Coefficient::constant(1.0),
                exponent: 1.0,
            },
        }
    }

    pub fn baseline() -> ValidatedModel {
        baseline_config().validate().unwrap()
    }

    /// Weakly damped variant: velocity rate 0.1, delta = 0.1 and a stronger
    /// reintroduction (a = 1), which admits a positive boundary equilibrium.
    pub fn weak_damping_config() -> ModelConfig {
        let mut cfg = baseline_config();
        cfg.velocity = VelocityProfile::Linear { rate: 0.1 };
        cfg.rates.delta = Coefficient::constant(0.1);
        cfg.beta.a = Coefficient::constant(1.0);
        cfg
    }

    pub fn weak_damping() -> ValidatedModel {
        weak_damping_config().validate().unwrap()
    }
}
