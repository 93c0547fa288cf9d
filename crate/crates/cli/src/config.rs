//! JSON run configuration: schema types and conversion into core types.
//!
//! Every block is strict (`deny_unknown_fields`); anything the schema does
//! not know is a config error before any computation starts.

use serde::Deserialize;

use marrow_core::field::{GriddedData, InitialData, MatCoef, TimeCoef};
use marrow_core::model::ModelConfig;
use marrow_core::FieldParams;

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelConfig,
    #[serde(default)]
    pub grid: GridConfig,
    pub dde: Option<DdeConfig>,
    pub field: Option<FieldConfig>,
    #[serde(default)]
    pub experiments: Experiments,
    #[serde(default)]
    pub report: ReportConfig,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    #[serde(default = "default_y_min")]
    pub y_min: f64,
    /// Slice spacing; omit to use the solver default.
    #[serde(default)]
    pub dt: Option<f64>,
    #[serde(default = "default_quad_order")]
    pub quad_order: usize,
    #[serde(default = "default_picard_tol")]
    pub picard_tol: f64,
    #[serde(default = "default_picard_max")]
    pub picard_max: usize,
}

fn default_y_min() -> f64 {
    FieldParams::default().y_min
}

fn default_quad_order() -> usize {
    FieldParams::default().quad_order
}

fn default_picard_tol() -> f64 {
    FieldParams::default().picard_tol
}

fn default_picard_max() -> usize {
    FieldParams::default().picard_max
}

impl Default for GridConfig {
    fn default() -> Self {
        let p = FieldParams::default();
        GridConfig {
            y_min: p.y_min,
            dt: p.dt,
            quad_order: p.quad_order,
            picard_tol: p.picard_tol,
            picard_max: p.picard_max,
        }
    }
}

impl GridConfig {
    pub fn to_params(&self, workers: usize) -> FieldParams {
        FieldParams {
            y_min: self.y_min,
            dt: self.dt,
            quad_order: self.quad_order,
            picard_tol: self.picard_tol,
            picard_max: self.picard_max,
            workers,
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DdeConfig {
    pub horizon: f64,
    pub dt: f64,
    pub history: HistorySpec,
    /// Evaluate the Lyapunov functional along the trajectory (third CSV
    /// column). Defaults to true.
    #[serde(default = "default_true")]
    pub with_lyapunov: bool,
}

fn default_true() -> bool {
    true
}

/// Scalar initial window for the boundary equation.
#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum HistorySpec {
    Constant {
        value: f64,
    },
    Cosine {
        mean: f64,
        amplitude: f64,
        angular_frequency: f64,
        phase: f64,
    },
}

impl HistorySpec {
    pub fn eval(&self, t: f64) -> f64 {
        match *self {
            HistorySpec::Constant { value } => value,
            HistorySpec::Cosine {
                mean,
                amplitude,
                angular_frequency,
                phase,
            } => mean + amplitude * (angular_frequency * t + phase).cos(),
        }
    }

    pub fn eval_dt(&self, t: f64) -> f64 {
        match *self {
            HistorySpec::Constant { .. } => 0.0,
            HistorySpec::Cosine {
                amplitude,
                angular_frequency,
                phase,
                ..
            } => -amplitude * angular_frequency * (angular_frequency * t + phase).sin(),
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FieldConfig {
    pub horizon: f64,
    pub initial: InitialSpec,
    /// Emit every k-th slice (default 1: every slice).
    #[serde(default = "default_stride")]
    pub output_stride: usize,
    /// When present, also reconstruct the proliferating surface from this
    /// initial maturity profile.
    pub proliferating: Option<ProliferatingConfig>,
}

fn default_stride() -> usize {
    1
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProliferatingConfig {
    pub initial: MatCoefSpec,
}

/// Initial surface family for the field solver.
#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialSpec {
    Constant {
        value: f64,
    },
    Separable {
        time: TimeCoefSpec,
        maturity: MatCoefSpec,
    },
    Sum {
        terms: Vec<InitialSpec>,
    },
    /// `phi(t, min(m, b))`
    Truncate {
        inner: Box<InitialSpec>,
        b: f64,
    },
    /// Rectangular `t,m,phi` samples from a CSV file, resampled onto the
    /// solver grid.
    GriddedCsv {
        path: String,
    },
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum TimeCoefSpec {
    Constant {
        value: f64,
    },
    Cosine {
        mean: f64,
        amplitude: f64,
        angular_frequency: f64,
        phase: f64,
    },
}

impl TimeCoefSpec {
    fn build(&self) -> TimeCoef {
        match *self {
            TimeCoefSpec::Constant { value } => TimeCoef::Constant { value },
            TimeCoefSpec::Cosine {
                mean,
                amplitude,
                angular_frequency,
                phase,
            } => TimeCoef::Cosine {
                mean,
                amplitude,
                angular_frequency,
                phase,
            },
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum MatCoefSpec {
    Constant { value: f64 },
    Affine { intercept: f64, slope: f64 },
    Bump { lo: f64, hi: f64, amplitude: f64 },
    RampAbove { threshold: f64, power: f64 },
}

impl MatCoefSpec {
    pub fn build(&self) -> MatCoef {
        match *self {
            MatCoefSpec::Constant { value } => MatCoef::Constant { value },
            MatCoefSpec::Affine { intercept, slope } => MatCoef::Affine { intercept, slope },
            MatCoefSpec::Bump { lo, hi, amplitude } => MatCoef::Bump { lo, hi, amplitude },
            MatCoefSpec::RampAbove { threshold, power } => MatCoef::RampAbove { threshold, power },
        }
    }
}

impl InitialSpec {
    pub fn build(&self) -> Result<InitialData, String> {
        Ok(match self {
            InitialSpec::Constant { value } => InitialData::constant(*value),
            InitialSpec::Separable { time, maturity } => {
                InitialData::separable(time.build(), maturity.build())
            }
            InitialSpec::Sum { terms } => {
                let built: Result<Vec<_>, String> = terms.iter().map(|t| t.build()).collect();
                InitialData::sum(built?)
            }
            InitialSpec::Truncate { inner, b } => inner.build()?.truncate_above(*b),
            InitialSpec::GriddedCsv { path } => {
                let text = std::fs::read_to_string(path)
                    .map_err(|e| format!("gridded csv {path}: {e}"))?;
                InitialData::gridded(parse_gridded_csv(&text)?)
            }
        })
    }
}

/// Parse rectangular `t,m,phi` rows (header required) into a grid.
pub fn parse_gridded_csv(text: &str) -> Result<GriddedData, String> {
    let mut rows: Vec<(f64, f64, f64)> = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if i == 0 {
            if line != "t,m,phi" {
                return Err(format!(
                    "gridded csv: expected header `t,m,phi`, got `{line}`"
                ));
            }
            continue;
        }
        let mut parts = line.split(',');
        let mut next = |what: &str| -> Result<f64, String> {
            parts
                .next()
                .ok_or_else(|| format!("gridded csv line {}: missing {what}", i + 1))?
                .trim()
                .parse::<f64>()
                .map_err(|e| format!("gridded csv line {}: {what}: {e}", i + 1))
        };
        rows.push((next("t")?, next("m")?, next("phi")?));
    }
    let mut times: Vec<f64> = rows.iter().map(|r| r.0).collect();
    times.sort_by(|a, b| a.partial_cmp(b).unwrap());
    times.dedup();
    let mut ms: Vec<f64> = rows.iter().map(|r| r.1).collect();
    ms.sort_by(|a, b| a.partial_cmp(b).unwrap());
    ms.dedup();
    if times.len() * ms.len() != rows.len() {
        return Err(format!(
            "gridded csv: {} rows do not form a {} x {} rectangle",
            rows.len(),
            times.len(),
            ms.len()
        ));
    }
    let mut values = vec![vec![f64::NAN; ms.len()]; times.len()];
    for (t, m, v) in rows {
        let ti = times.partition_point(|&x| x < t).min(times.len() - 1);
        let mi = ms.partition_point(|&x| x < m).min(ms.len() - 1);
        values[ti][mi] = v;
    }
    if values.iter().flatten().any(|v| v.is_nan()) {
        return Err("gridded csv: duplicate or missing grid points".into());
    }
    Ok(GriddedData {
        times,
        maturities: ms,
        values,
    })
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Experiments {
    pub decay: Option<DecayConfig>,
    pub extinction: Option<ExtinctionConfig>,
    pub agreement: Option<AgreementConfig>,
    pub equilibrium: Option<EquilibriumConfig>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecayConfig {
    pub horizon: f64,
    pub initial: InitialSpec,
    #[serde(default = "default_rate_fraction")]
    pub min_rate_fraction: f64,
    #[serde(default = "default_true")]
    pub check_floor: bool,
}

fn default_rate_fraction() -> f64 {
    0.9
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExtinctionConfig {
    pub b: f64,
    pub initial: InitialSpec,
    #[serde(default = "default_margin")]
    pub margin: f64,
}

fn default_margin() -> f64 {
    0.5
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgreementConfig {
    pub b: f64,
    pub horizon: f64,
    pub phi1: InitialSpec,
    pub phi2: InitialSpec,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EquilibriumConfig {
    pub horizon: f64,
    pub dt: f64,
    #[serde(default = "default_eq_tol")]
    pub tolerance: f64,
}

fn default_eq_tol() -> f64 {
    1e-6
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReportConfig {
    /// Criteria whose failure makes the report command exit nonzero.
    pub require: Vec<String>,
}

impl Default for ReportConfig {
    fn default() -> Self {
        ReportConfig {
            require: vec!["local".into(), "dde".into(), "structural".into()],
        }
    }
}
