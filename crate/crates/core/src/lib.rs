//! Simulator and certificate checker for a maturity-structured model of
//! blood cell production with a distributed division delay.
//!
//! Cells carry a maturity `m` in `[0, 1]` and cycle between a resting
//! compartment (density `N`) and a proliferating compartment (density `P`).
//! Division is distributed over ages `[tau_lower, tau_upper]` and each
//! division maps the mother maturity `m` to two daughters at `g(m)`, which
//! couples the dynamics at maturity `m` to earlier times and lower
//! maturities. The crate provides:
//!
//! * [`model`] — validated parametric coefficient families (velocity,
//!   division map, loss rates, division kernel, reintroduction rate),
//! * [`flow`] — the maturation characteristics, retardation map and the
//!   regeneration time `tau0`,
//! * [`kernels`] — survival/transfer kernels and every derived scalar
//!   constant used by the stability certificates,
//! * [`stability`] — machine-checkable certificates with signed margins,
//! * [`dde`] — the boundary delay equation at maturity zero, integrated by
//!   the method of steps, plus the Lyapunov functional `H`,
//! * [`field`] — the full surface `N(t, m)` on a characteristic-aligned
//!   grid, reconstruction of `P(t, m)`, and the extinction/agreement
//!   experiments.

pub mod dde;
pub mod field;
pub mod flow;
pub mod kernels;
pub mod model;
pub mod quad;
pub mod stability;

pub use dde::{DdeOptions, DdeSolution, ScalarHistory};
pub use field::{Field, FieldParams, InitialData, MaturityGrid};
pub use kernels::DerivedConstants;
pub use model::{ModelConfig, ValidatedModel};
pub use stability::StabilityReport;
