//! Scenario configuration: TOML ingestion and validation with field paths.

use std::path::Path;

use hypodecay::quadrature::QuadratureSpec;
use hypodecay::spectral::MultiIndex;
use hypodecay::system::matrix_from_rows;
use hypodecay::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioKind {
    Validate,
    Decay,
    Subspace,
    Hyper,
    Fisher,
}

impl ScenarioKind {
    pub fn name(self) -> &'static str {
        match self {
            ScenarioKind::Validate => "validate",
            ScenarioKind::Decay => "decay",
            ScenarioKind::Subspace => "subspace",
            ScenarioKind::Hyper => "hyper",
            ScenarioKind::Fisher => "fisher",
        }
    }
}

/// Coordinates in which mixture components are given.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Coordinates {
    /// The coordinates of `system.D` and `system.C`.
    #[default]
    Original,
    /// Coordinates in which the equilibrium is the standard Gaussian.
    Normalized,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Component {
    pub weight: f64,
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum InitialData {
    Equilibrium,
    Mixture {
        coordinates: Coordinates,
        components: Vec<Component>,
    },
    /// Coefficients on the normalized Hermite basis; the constant mode is
    /// fixed at unit mass unless given explicitly.
    Hermite(Vec<(MultiIndex, f64)>),
}

/// Weight matrix `P` of the Fisher information, in original coordinates.
#[derive(Debug, Clone, PartialEq)]
pub enum FisherWeight {
    Diffusion,
    Identity,
    Matrix(DMatrix<f64>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    pub kind: ScenarioKind,
    pub diffusion: DMatrix<f64>,
    pub drift: DMatrix<f64>,
    pub initial: InitialData,
    pub p: f64,
    pub t_max: f64,
    /// Number of grid intervals; the grid has `t_steps + 1` times.
    pub t_steps: usize,
    pub k: Option<usize>,
    pub fit_window: Option<(f64, f64)>,
    pub quad: QuadratureSpec,
    pub seed: u64,
    pub fisher_weight: FisherWeight,
    pub csv_name: String,
    pub report_name: String,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    kind: Option<ScenarioKind>,
    seed: Option<u64>,
    system: RawSystem,
    #[serde(default)]
    initial: RawInitial,
    #[serde(default)]
    run: RawRun,
    #[serde(default)]
    quad: RawQuad,
    #[serde(default)]
    fisher: RawFisher,
    #[serde(default)]
    output: RawOutput,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSystem {
    #[serde(rename = "D")]
    diffusion: Vec<Vec<f64>>,
    #[serde(rename = "C")]
    drift: Vec<Vec<f64>>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawInitial {
    coordinates: Option<Coordinates>,
    #[serde(default)]
    components: Vec<RawComponent>,
    #[serde(default)]
    hermite: Vec<RawHermite>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawComponent {
    #[serde(default = "unit_weight")]
    weight: f64,
    mean: Vec<f64>,
    cov: Vec<Vec<f64>>,
}

fn unit_weight() -> f64 {
    1.0
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawHermite {
    index: Vec<usize>,
    value: f64,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRun {
    t_max: Option<f64>,
    t_steps: Option<usize>,
    p: Option<f64>,
    k: Option<usize>,
    fit_window: Option<[f64; 2]>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawQuad {
    order: Option<usize>,
    samples: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawFisher {
    #[serde(rename = "P")]
    weight: Option<RawWeight>,
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum RawWeight {
    Named(String),
    Matrix(Vec<Vec<f64>>),
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawOutput {
    csv: Option<String>,
    report: Option<String>,
}

fn field(path: impl Into<String>, message: impl Into<String>) -> CliError {
    CliError::Config {
        path: path.into(),
        message: message.into(),
    }
}

fn square(path: &str, rows: &[Vec<f64>]) -> Result<DMatrix<f64>, CliError> {
    if rows.is_empty() {
        return Err(field(path, "matrix is empty"));
    }
    for (i, row) in rows.iter().enumerate() {
        if row.len() != rows.len() {
            return Err(field(format!("{path}[{i}]"), format!("expected {} entries, found {}", rows.len(), row.len())));
        }
        if let Some(j) = row.iter().position(|v| !v.is_finite()) {
            return Err(field(format!("{path}[{i}][{j}]"), "entry is not finite"));
        }
    }
    matrix_from_rows(rows).map_err(|e| field(path, e.to_string()))
}

impl ScenarioConfig {
    pub fn from_path(path: &Path, kind: Option<ScenarioKind>) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Io {
            path: path.display().to_string(),
            source: e,
        })?;
        Self::from_toml_str(&text, kind)
    }

    /// Parses and validates a scenario; `kind` overrides the file's `kind`.
    pub fn from_toml_str(text: &str, kind: Option<ScenarioKind>) -> Result<Self, CliError> {
        let raw: RawConfig = toml::from_str(text).map_err(|e| field("<document>", e.message().to_string()))?;
        let kind = kind.or(raw.kind).ok_or_else(|| field("kind", "scenario kind missing"))?;

        let diffusion = square("system.D", &raw.system.diffusion)?;
        let drift = square("system.C", &raw.system.drift)?;
        let dim = diffusion.nrows();
        if drift.nrows() != dim {
            return Err(field("system.C", format!("dimension {} differs from system.D dimension {dim}", drift.nrows())));
        }

        let initial = match (raw.initial.components.is_empty(), raw.initial.hermite.is_empty()) {
            (true, true) => InitialData::Equilibrium,
            (false, false) => return Err(field("initial", "give either components or hermite coefficients, not both")),
            (false, true) => {
                let mut components = Vec::with_capacity(raw.initial.components.len());
                for (i, c) in raw.initial.components.iter().enumerate() {
                    let base = format!("initial.components[{i}]");
                    if !(c.weight > 0.0) || !c.weight.is_finite() {
                        return Err(field(format!("{base}.weight"), "weight must be positive and finite"));
                    }
                    if c.mean.len() != dim {
                        return Err(field(format!("{base}.mean"), format!("expected {dim} entries, found {}", c.mean.len())));
                    }
                    if c.mean.iter().any(|v| !v.is_finite()) {
                        return Err(field(format!("{base}.mean"), "entry is not finite"));
                    }
                    let cov = square(&format!("{base}.cov"), &c.cov)?;
                    if cov.nrows() != dim {
                        return Err(field(format!("{base}.cov"), format!("expected a {dim}x{dim} matrix")));
                    }
                    components.push(Component {
                        weight: c.weight,
                        mean: DVector::from_column_slice(&c.mean),
                        cov,
                    });
                }
                InitialData::Mixture {
                    coordinates: raw.initial.coordinates.unwrap_or_default(),
                    components,
                }
            }
            (true, false) => {
                if raw.initial.coordinates == Some(Coordinates::Original) {
                    return Err(field("initial.coordinates", "hermite coefficients are always in normalized coordinates"));
                }
                let mut coeffs = Vec::with_capacity(raw.initial.hermite.len());
                for (i, h) in raw.initial.hermite.iter().enumerate() {
                    if h.index.len() != dim {
                        return Err(field(format!("initial.hermite[{i}].index"), format!("expected {dim} entries, found {}", h.index.len())));
                    }
                    if !h.value.is_finite() {
                        return Err(field(format!("initial.hermite[{i}].value"), "value is not finite"));
                    }
                    coeffs.push((MultiIndex(h.index.clone()), h.value));
                }
                InitialData::Hermite(coeffs)
            }
        };

        let p = raw.run.p.unwrap_or(2.0);
        if !(p > 1.0 && p <= 2.0) {
            return Err(field("run.p", format!("must lie in (1, 2], got {p}")));
        }
        let t_max = raw.run.t_max.unwrap_or(15.0);
        if !(t_max > 0.0) || !t_max.is_finite() {
            return Err(field("run.t_max", format!("must be positive and finite, got {t_max}")));
        }
        let t_steps = raw.run.t_steps.unwrap_or(300);
        if t_steps == 0 {
            return Err(field("run.t_steps", "must be at least 1"));
        }
        if raw.run.k == Some(0) {
            return Err(field("run.k", "subspace level must be at least 1"));
        }
        let fit_window = match raw.run.fit_window {
            Some([lo, hi]) if lo.is_finite() && hi.is_finite() && lo < hi && lo >= 0.0 => Some((lo, hi)),
            Some(_) => return Err(field("run.fit_window", "expected [t_lo, t_hi] with 0 <= t_lo < t_hi")),
            None => None,
        };

        let seed = raw.seed.unwrap_or(0);
        let quad = match (raw.quad.order, raw.quad.samples) {
            (Some(_), Some(_)) => return Err(field("quad", "give either order or samples, not both")),
            (Some(0), None) => return Err(field("quad.order", "must be at least 1")),
            (Some(order), None) => QuadratureSpec::GaussHermite { order },
            (None, Some(0)) => return Err(field("quad.samples", "must be at least 1")),
            (None, Some(samples)) => QuadratureSpec::MonteCarlo { samples, seed },
            (None, None) => match QuadratureSpec::default_for(dim) {
                QuadratureSpec::MonteCarlo { samples, .. } => QuadratureSpec::MonteCarlo { samples, seed },
                gh => gh,
            },
        };

        let fisher_weight = match raw.fisher.weight {
            None => FisherWeight::Diffusion,
            Some(RawWeight::Named(name)) => match name.as_str() {
                "D" => FisherWeight::Diffusion,
                "I" => FisherWeight::Identity,
                other => return Err(field("fisher.P", format!("expected \"D\", \"I\" or a matrix, got \"{other}\""))),
            },
            Some(RawWeight::Matrix(rows)) => {
                let m = square("fisher.P", &rows)?;
                if m.nrows() != dim {
                    return Err(field("fisher.P", format!("expected a {dim}x{dim} matrix")));
                }
                FisherWeight::Matrix(m)
            }
        };

        Ok(ScenarioConfig {
            kind,
            diffusion,
            drift,
            initial,
            p,
            t_max,
            t_steps,
            k: raw.run.k,
            fit_window,
            quad,
            seed,
            fisher_weight,
            csv_name: raw.output.csv.unwrap_or_else(|| format!("{}.csv", kind.name())),
            report_name: raw.output.report.unwrap_or_else(|| format!("{}.json", kind.name())),
        })
    }

    /// Replaces the seed, including the Monte Carlo quadrature seed.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        if let QuadratureSpec::MonteCarlo { samples, .. } = self.quad {
            self.quad = QuadratureSpec::MonteCarlo { samples, seed };
        }
        self
    }

    pub fn grid(&self) -> Vec<f64> {
        (0..=self.t_steps).map(|i| self.t_max * i as f64 / self.t_steps as f64).collect()
    }
}
