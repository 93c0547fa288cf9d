//! Characteristic-aligned maturity grid and initial-data families.

use std::sync::Arc;

use crate::flow;
use crate::model::ValidatedModel;

use super::FieldError;

/// Maturity grid in the flow coordinate `y = ln h(m)`: nodes `y_j = y_min +
/// j dy` with `y_J = 0` (so `m_J = 1`).
///
/// The solver ties `dy = dt`, which makes the backward flow over `k` steps
/// an exact shift of `k` node indices: pullback lookups never interpolate
/// in the characteristic direction. Pullbacks falling below `y_min` are
/// served by the boundary trace at maturity zero.
#[derive(Debug, Clone)]
pub struct MaturityGrid {
    y_min: f64,
    dy: f64,
    ys: Vec<f64>,
    ms: Vec<f64>,
}

impl MaturityGrid {
    /// Build a grid with spacing `dy` whose floor is at or below
    /// `y_min_request` (snapped down to a whole number of cells).
    pub fn new(
        model: &ValidatedModel,
        y_min_request: f64,
        dy: f64,
    ) -> Result<MaturityGrid, FieldError> {
        if !(dy > 0.0 && y_min_request < 0.0) {
            return Err(FieldError::InvalidGrid(format!(
                "need dy > 0 and y_min < 0, got dy = {dy}, y_min = {y_min_request}"
            )));
        }
        let j = (-y_min_request / dy - 1e-9).ceil().max(1.0) as usize;
        let y_min = -(j as f64) * dy;
        let g1_y = flow::log_h(model, model.g1());
        if y_min >= g1_y {
            return Err(FieldError::InvalidGrid(format!(
                "floor y_min = {y_min} must lie below ln h(g(1)) = {g1_y}"
            )));
        }
        let ys: Vec<f64> = (0..=j).map(|i| y_min + i as f64 * dy).collect();
        let ms: Vec<f64> = ys.iter().map(|&y| flow::h_inv_log(model, y)).collect();
        Ok(MaturityGrid { y_min, dy, ys, ms })
    }

    pub fn len(&self) -> usize {
        self.ys.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn dy(&self) -> f64 {
        self.dy
    }

    pub fn y_min(&self) -> f64 {
        self.y_min
    }

    pub fn ys(&self) -> &[f64] {
        &self.ys
    }

    pub fn ms(&self) -> &[f64] {
        &self.ms
    }

    /// Floor maturity `m_0 = h_inv(e^{y_min})`.
    pub fn floor_maturity(&self) -> f64 {
        self.ms[0]
    }

    /// Fractional node index of flow coordinate `y`.
    pub fn index_of(&self, y: f64) -> f64 {
        (y - self.y_min) / self.dy
    }
}

/// Interpolate within one slice at fractional node index `u`, using
/// Steffen's monotonicity-limited cubic. Nonnegative data produce
/// nonnegative values, and exact node hits return stored values bitwise.
pub(crate) fn slice_interp(values: &[f64], u: f64) -> f64 {
    let n = values.len() - 1;
    let uc = u.clamp(0.0, n as f64);
    let i = (uc.floor() as usize).min(n - 1);
    let theta = uc - i as f64;
    if theta < 1e-9 {
        return values[i];
    }
    if theta > 1.0 - 1e-9 {
        return values[i + 1];
    }
    let s0 = steffen_slope(values, i);
    let s1 = steffen_slope(values, i + 1);
    let (v0, v1) = (values[i], values[i + 1]);
    let t2 = theta * theta;
    let t3 = t2 * theta;
    (2.0 * t3 - 3.0 * t2 + 1.0) * v0
        + (t3 - 2.0 * t2 + theta) * s0
        + (-2.0 * t3 + 3.0 * t2) * v1
        + (t3 - t2) * s1
}

/// Limited slope (per unit index) at node `i`.
fn steffen_slope(values: &[f64], i: usize) -> f64 {
    let n = values.len() - 1;
    if i == 0 {
        return values[1] - values[0];
    }
    if i == n {
        return values[n] - values[n - 1];
    }
    let dl = values[i] - values[i - 1];
    let dr = values[i + 1] - values[i];
    if dl * dr <= 0.0 {
        return 0.0;
    }
    let p = 0.5 * (dl + dr);
    let lim = 2.0 * dl.abs().min(dr.abs());
    p.signum() * p.abs().min(lim)
}

type SpaceTimeFn = Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>;

/// Time profile of a separable initial surface.
#[derive(Debug, Clone)]
pub enum TimeCoef {
    Constant {
        value: f64,
    },
    /// `mean + amplitude * cos(angular_frequency * t + phase)`
    Cosine {
        mean: f64,
        amplitude: f64,
        angular_frequency: f64,
        phase: f64,
    },
}

impl TimeCoef {
    pub fn value(&self, t: f64) -> f64 {
        match *self {
            TimeCoef::Constant { value } => value,
            TimeCoef::Cosine {
                mean,
                amplitude,
                angular_frequency,
                phase,
            } => mean + amplitude * (angular_frequency * t + phase).cos(),
        }
    }

    pub fn derivative(&self, t: f64) -> f64 {
        match *self {
            TimeCoef::Constant { .. } => 0.0,
            TimeCoef::Cosine {
                amplitude,
                angular_frequency,
                phase,
                ..
            } => -amplitude * angular_frequency * (angular_frequency * t + phase).sin(),
        }
    }
}

/// Maturity profile of a separable initial surface.
#[derive(Debug, Clone)]
pub enum MatCoef {
    Constant {
        value: f64,
    },
    Affine {
        intercept: f64,
        slope: f64,
    },
    /// Compactly supported bump on `(lo, hi)`, peaking at `amplitude`;
    /// exactly zero outside, so data can agree bitwise below a threshold.
    Bump {
        lo: f64,
        hi: f64,
        amplitude: f64,
    },
    /// `max(0, m - threshold)^power`: exactly zero at and below the
    /// threshold.
    RampAbove {
        threshold: f64,
        power: f64,
    },
}

impl MatCoef {
    pub fn value(&self, m: f64) -> f64 {
        match *self {
            MatCoef::Constant { value } => value,
            MatCoef::Affine { intercept, slope } => intercept + slope * m,
            MatCoef::Bump { lo, hi, amplitude } => {
                if m <= lo || m >= hi {
                    0.0
                } else {
                    let q = (m - lo) * (hi - m);
                    let peak = 0.25 * (hi - lo) * (hi - lo);
                    amplitude * (q / peak) * (q / peak)
                }
            }
            MatCoef::RampAbove { threshold, power } => {
                if m <= threshold {
                    0.0
                } else {
                    (m - threshold).powf(power)
                }
            }
        }
    }
}

#[derive(Clone)]
enum Repr {
    Constant(f64),
    Separable(TimeCoef, MatCoef),
    Sum(Vec<InitialData>),
    /// Flattened above `b`: reads `phi(t, min(m, b))`.
    TruncatedAbove(Box<InitialData>, f64),
    /// Rectangular samples resampled by monotone cubic in maturity and
    /// linear in time.
    Gridded(Arc<GriddedData>),
    Custom {
        f: SpaceTimeFn,
        dfdt: SpaceTimeFn,
    },
}

/// Rectangular samples of an initial surface.
#[derive(Debug, Clone)]
pub struct GriddedData {
    pub times: Vec<f64>,
    pub maturities: Vec<f64>,
    /// row-major: `values[ti][mi]`
    pub values: Vec<Vec<f64>>,
}

impl GriddedData {
    fn eval(&self, t: f64, m: f64) -> f64 {
        let row = |ti: usize| -> f64 {
            // monotone cubic in maturity on a (possibly non-uniform) grid:
            // map to index space first
            let mi = match self
                .maturities
                .binary_search_by(|x| x.partial_cmp(&m).unwrap())
            {
                Ok(i) => return self.values[ti][i],
                Err(i) => i.clamp(1, self.maturities.len() - 1),
            };
            let (m0, m1) = (self.maturities[mi - 1], self.maturities[mi]);
            let u = (mi - 1) as f64 + (m - m0) / (m1 - m0);
            slice_interp(&self.values[ti], u)
        };
        let ti = match self.times.binary_search_by(|x| x.partial_cmp(&t).unwrap()) {
            Ok(i) => return row(i),
            Err(i) => i.clamp(1, self.times.len() - 1),
        };
        let (t0, t1) = (self.times[ti - 1], self.times[ti]);
        let w = ((t - t0) / (t1 - t0)).clamp(0.0, 1.0);
        (1.0 - w) * row(ti - 1) + w * row(ti)
    }
}

/// Initial surface `phi(t, m)` on `[0, tau_upper] x [0, 1]`.
#[derive(Clone)]
pub struct InitialData(Repr);

impl std::fmt::Debug for InitialData {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match &self.0 {
            Repr::Constant(v) => write!(f, "InitialData::Constant({v})"),
            Repr::Separable(..) => write!(f, "InitialData::Separable"),
            Repr::Sum(v) => write!(f, "InitialData::Sum({} terms)", v.len()),
            Repr::TruncatedAbove(_, b) => write!(f, "InitialData::TruncatedAbove(b = {b})"),
            Repr::Gridded(_) => write!(f, "InitialData::Gridded"),
            Repr::Custom { .. } => write!(f, "InitialData::Custom"),
        }
    }
}

impl InitialData {
    pub fn constant(value: f64) -> Self {
        InitialData(Repr::Constant(value))
    }

    pub fn separable(time: TimeCoef, maturity: MatCoef) -> Self {
        InitialData(Repr::Separable(time, maturity))
    }

    pub fn sum(terms: Vec<InitialData>) -> Self {
        InitialData(Repr::Sum(terms))
    }

    pub fn gridded(data: GriddedData) -> Self {
        InitialData(Repr::Gridded(Arc::new(data)))
    }

    pub fn custom<F, D>(f: F, dfdt: D) -> Self
    where
        F: Fn(f64, f64) -> f64 + Send + Sync + 'static,
        D: Fn(f64, f64) -> f64 + Send + Sync + 'static,
    {
        InitialData(Repr::Custom {
            f: Arc::new(f),
            dfdt: Arc::new(dfdt),
        })
    }

    /// The flattened surface `phi_b(t, m) = phi(t, min(m, b))`: identical
    /// below `b`, constant in maturity above it.
    pub fn truncate_above(&self, b: f64) -> InitialData {
        InitialData(Repr::TruncatedAbove(Box::new(self.clone()), b))
    }

    pub fn eval(&self, t: f64, m: f64) -> f64 {
        match &self.0 {
            Repr::Constant(v) => *v,
            Repr::Separable(c, d) => c.value(t) * d.value(m),
            Repr::Sum(terms) => terms.iter().map(|x| x.eval(t, m)).sum(),
            Repr::TruncatedAbove(inner, b) => inner.eval(t, m.min(*b)),
            Repr::Gridded(g) => g.eval(t, m),
            Repr::Custom { f, .. } => f(t, m),
        }
    }

    /// Time derivative, used to seed the boundary integrator's history.
    pub fn eval_dt(&self, t: f64, m: f64) -> f64 {
        match &self.0 {
            Repr::Constant(_) => 0.0,
            Repr::Separable(c, d) => c.derivative(t) * d.value(m),
            Repr::Sum(terms) => terms.iter().map(|x| x.eval_dt(t, m)).sum(),
            Repr::TruncatedAbove(inner, b) => inner.eval_dt(t, m.min(*b)),
            Repr::Gridded(g) => {
                // centred difference; gridded data has no analytic derivative
                let h = 1e-5;
                (g.eval(t + h, m) - g.eval((t - h).max(0.0), m)) / (t + h - (t - h).max(0.0))
            }
            Repr::Custom { dfdt, .. } => dfdt(t, m),
        }
    }

    /// Sup of `|phi|` over a sample of the initial rectangle.
    pub fn sup_norm(&self, tau_upper: f64) -> f64 {
        let mut sup: f64 = 0.0;
        for ti in 0..=32 {
            let t = tau_upper * ti as f64 / 32.0;
            for mi in 0..=128 {
                let m = mi as f64 / 128.0;
                sup = sup.max(self.eval(t, m).abs());
            }
        }
        sup
    }
}
