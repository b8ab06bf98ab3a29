//! Scenario orchestration: one run per config, producing a report and a
//! CSV series.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use hypodecay::entropy::{e2_mixture, ep_quadrature, fisher_info, EntropyGenerator, RelativeDensity};
use hypodecay::hyper::{verify_hypercontractivity, HyperReport};
use hypodecay::propagation::{EnvelopeFit, GaussianComponent, GaussianMixture};
use hypodecay::quadrature::QuadratureSpec;
use hypodecay::spectral::{subspace_decay_exponent, HermiteState};
use hypodecay::system::{matrix_to_rows, normalize, validate, FpSystem, NormalizedSystem, ValidationReport};
use hypodecay::{DMatrix, Error};
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{Coordinates, FisherWeight, InitialData, ScenarioConfig, ScenarioKind};
use crate::error::CliError;
use crate::fit::{default_window, fit_decay, DecayFit, Estimate, TRIM_BELOW};

/// Allowed shortfall of the fitted rate below the bound's rate, relative.
pub const RATE_SLACK: f64 = 0.05;
/// Allowed excess of the fitted polynomial order over the bound's.
pub const POLY_ORDER_SLACK: f64 = 0.3;
/// Absolute slack for non-increasing checks on `e_2` and `e_p`.
pub const MONOTONE_SLACK: f64 = 1e-8;
/// Grid on which hypercontractivity constants are fitted.
pub const CONSTANT_FIT_T_MAX: f64 = 20.0;
pub const CONSTANT_FIT_STEPS: usize = 400;

pub const CSV_HEADER: &str = "t,e2,ep,fisher,envelope,ratio";

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SeriesRow {
    pub t: f64,
    pub e2: f64,
    pub ep: f64,
    pub fisher: f64,
    pub envelope: f64,
    pub ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SystemSummary {
    pub dim: usize,
    pub rank: usize,
    pub mu: f64,
    pub defect: usize,
    pub kappa: usize,
    /// `A` with normalized = `A` · original.
    pub transform: Vec<Vec<f64>>,
    pub normalized_diffusion: Vec<Vec<f64>>,
    pub normalized_drift: Vec<Vec<f64>>,
}

/// Envelope `(1 + t^power) e^{−rate t}` and the fitted constant in front.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EnvelopeSummary {
    pub quantity: &'static str,
    pub rate: f64,
    pub power: usize,
    /// Maximum of the ratio column.
    pub c_fit: f64,
    pub max_ratio_location: f64,
    pub tail_growth: f64,
}

/// Constants estimated from the run rather than derived.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Constants {
    pub provenance: &'static str,
    pub envelope: Option<EnvelopeSummary>,
    pub w_convergence_c: Option<f64>,
    pub drift_decay_c2: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SubspaceSummary {
    pub k: usize,
    pub rate: f64,
    pub defect: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DecayReport {
    pub kind: ScenarioKind,
    pub seed: u64,
    pub p: f64,
    pub validation: ValidationReport,
    pub system: Option<SystemSummary>,
    pub series: Vec<SeriesRow>,
    pub fitted_rate: Option<Estimate>,
    pub fitted_poly_order: Option<Estimate>,
    pub fit: Option<DecayFit>,
    pub fit_note: Option<String>,
    pub constants: Option<Constants>,
    pub subspace: Option<SubspaceSummary>,
    pub hyper: Option<HyperReport>,
    pub flags: BTreeMap<String, bool>,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioOutcome {
    pub report: DecayReport,
    pub csv: String,
}

enum Data {
    Mixture(GaussianMixture),
    Hermite(HermiteState),
}

fn initial_data(cfg: &ScenarioConfig, sys: &NormalizedSystem) -> Result<Data, CliError> {
    let dim = sys.dim();
    Ok(match &cfg.initial {
        InitialData::Equilibrium => Data::Mixture(GaussianMixture::standard(dim)),
        InitialData::Mixture { coordinates, components } => {
            let comps = components
                .iter()
                .enumerate()
                .map(|(i, c)| {
                    GaussianComponent::new(c.weight, c.mean.clone(), c.cov.clone()).map_err(|e| CliError::Config {
                        path: format!("initial.components[{i}]"),
                        message: e.to_string(),
                    })
                })
                .collect::<Result<Vec<_>, _>>()?;
            let mix = GaussianMixture::new(comps)?;
            Data::Mixture(match coordinates {
                Coordinates::Original => mix.transform(sys.transform())?,
                Coordinates::Normalized => mix,
            })
        }
        InitialData::Hermite(coeffs) => {
            let m_max = coeffs.iter().map(|(a, _)| a.order()).max().unwrap_or(1).max(1);
            Data::Hermite(HermiteState::from_coeffs(dim, m_max, coeffs).map_err(|e| CliError::Config {
                path: "initial.hermite".into(),
                message: e.to_string(),
            })?)
        }
    })
}

fn fisher_weight(cfg: &ScenarioConfig, sys: &NormalizedSystem) -> DMatrix<f64> {
    let a = sys.transform();
    let w = match &cfg.fisher_weight {
        FisherWeight::Diffusion => return sys.diffusion().clone(),
        FisherWeight::Identity => a * a.transpose(),
        FisherWeight::Matrix(m) => a * m * a.transpose(),
    };
    (&w + w.transpose()) * 0.5
}

/// `(t, e_2, e_p, I_p^P)` at every grid time.
fn raw_series<F: RelativeDensity + Sync>(
    sys: &NormalizedSystem,
    f0: &F,
    grid: &[f64],
    gen: &EntropyGenerator,
    weight: &DMatrix<f64>,
    quad: &QuadratureSpec,
    e2_of: impl Fn(&F) -> Result<f64, Error> + Sync,
) -> Result<Vec<[f64; 4]>, CliError> {
    grid.par_iter()
        .map(|&t| {
            let f = f0.evolve(sys, t)?;
            let e2 = e2_of(&f)?;
            let ep = ep_quadrature(sys, &f, gen, quad)?.value.as_f64();
            let fisher = fisher_info(sys, &f, gen, weight, quad)?.value.as_f64();
            Ok([t, e2, ep, fisher])
        })
        .collect::<Result<Vec<_>, Error>>()
        .map_err(CliError::from)
}

fn data_series(
    data: &Data,
    sys: &NormalizedSystem,
    grid: &[f64],
    gen: &EntropyGenerator,
    weight: &DMatrix<f64>,
    quad: &QuadratureSpec,
) -> Result<Vec<[f64; 4]>, CliError> {
    match data {
        Data::Mixture(m) => raw_series(sys, m, grid, gen, weight, quad, |f| Ok(e2_mixture(sys, f)?.as_f64())),
        Data::Hermite(h) => raw_series(sys, h, grid, gen, weight, quad, |f| Ok(f.e2())),
    }
}

fn unit_envelope(rate: f64, power: usize, t: f64) -> f64 {
    let poly = if power == 0 { 1.0 } else { 1.0 + t.powi(power as i32) };
    poly * (-rate * t).exp()
}

fn non_increasing(values: impl Iterator<Item = f64>) -> bool {
    let v: Vec<f64> = values.collect();
    v.windows(2).all(|w| w[1] <= w[0] + MONOTONE_SLACK)
}

/// Envelope columns and fit for a quantity bounded by
/// `c (1 + t^power) e^{−rate t}`.
struct EnvelopeStage {
    rows: Vec<SeriesRow>,
    summary: EnvelopeSummary,
    bounded: bool,
}

fn envelope_stage(raw: &[[f64; 4]], column: usize, quantity: &'static str, rate: f64, power: usize) -> EnvelopeStage {
    let grid: Vec<f64> = raw.iter().map(|r| r[0]).collect();
    let values: Vec<f64> = raw.iter().map(|r| r[column]).collect();
    let envelope: Vec<f64> = grid.iter().map(|&t| unit_envelope(rate, power, t)).collect();
    let rows: Vec<SeriesRow> = raw
        .iter()
        .zip(&envelope)
        .map(|(r, &env)| SeriesRow {
            t: r[0],
            e2: r[1],
            ep: r[2],
            fisher: r[3],
            envelope: env,
            ratio: r[column] / env,
        })
        .collect();
    let (c_fit, loc) = rows.iter().fold((f64::NEG_INFINITY, 0.0), |acc, r| if r.ratio > acc.0 { (r.ratio, r.t) } else { acc });
    let (tail_growth, bounded) = match EnvelopeFit::from_series(&grid, &values, &envelope) {
        Ok(fit) => (fit.tail_growth, true),
        Err(Error::EnvelopeViolation { growth }) => (growth, false),
        Err(_) => (f64::INFINITY, false),
    };
    EnvelopeStage {
        rows,
        summary: EnvelopeSummary {
            quantity,
            rate,
            power,
            c_fit,
            max_ratio_location: loc,
            tail_growth,
        },
        bounded,
    }
}

struct FitStage {
    fit: Option<DecayFit>,
    note: Option<String>,
    rate_ok: bool,
    poly_ok: bool,
}

fn fit_stage(grid: &[f64], values: &[f64], rate: f64, power: usize, mu: f64, window: Option<(f64, f64)>) -> FitStage {
    let window = window.unwrap_or_else(|| default_window(grid, mu));
    let in_window = grid.iter().zip(values).filter(|(t, _)| **t >= window.0 && **t <= window.1);
    if in_window.clone().all(|(_, v)| *v <= TRIM_BELOW) {
        return FitStage {
            fit: None,
            note: Some("series vanishes on the fit window".into()),
            rate_ok: true,
            poly_ok: true,
        };
    }
    match fit_decay(grid, values, rate, window) {
        Ok(fit) => {
            let rate_ok = fit.rate_hat.value + fit.rate_hat.half_width() >= (1.0 - RATE_SLACK) * rate;
            let poly_ok = fit.poly_order_hat.value <= power as f64 + POLY_ORDER_SLACK;
            FitStage {
                fit: Some(fit),
                note: None,
                rate_ok,
                poly_ok,
            }
        }
        Err(e) => FitStage {
            fit: None,
            note: Some(e.to_string()),
            rate_ok: false,
            poly_ok: false,
        },
    }
}

fn linspace(t_max: f64, steps: usize) -> Vec<f64> {
    (0..=steps).map(|i| t_max * i as f64 / steps as f64).collect()
}

/// Runs one scenario. Condition failures yield a failing report rather
/// than an error.
pub fn run_scenario(cfg: &ScenarioConfig) -> Result<ScenarioOutcome, CliError> {
    let validation = validate(&cfg.diffusion, &cfg.drift)?;
    let mut flags = BTreeMap::new();
    flags.insert("condition_a".to_string(), validation.condition_a.holds);
    flags.insert("condition_b".to_string(), validation.condition_b.holds);
    flags.insert("condition_c".to_string(), validation.condition_c.holds);
    let mut report = DecayReport {
        kind: cfg.kind,
        seed: cfg.seed,
        p: cfg.p,
        validation: validation.clone(),
        system: None,
        series: Vec::new(),
        fitted_rate: None,
        fitted_poly_order: None,
        fit: None,
        fit_note: None,
        constants: None,
        subspace: None,
        hyper: None,
        flags,
        pass: false,
    };
    if !validation.overall {
        return Ok(finish(report));
    }

    let fp = FpSystem::new(cfg.diffusion.clone(), cfg.drift.clone())?;
    let sys = normalize(&fp)?;
    report.system = Some(SystemSummary {
        dim: fp.dim(),
        rank: fp.rank(),
        mu: fp.mu(),
        defect: fp.defect(),
        kappa: fp.kappa(),
        transform: matrix_to_rows(sys.transform()),
        normalized_diffusion: matrix_to_rows(sys.diffusion()),
        normalized_drift: matrix_to_rows(sys.drift()),
    });
    if cfg.kind == ScenarioKind::Validate {
        return Ok(finish(report));
    }

    let (mu, n) = (sys.mu(), sys.defect());
    let grid = cfg.grid();
    let gen = EntropyGenerator::power(cfg.p)?;
    let weight = fisher_weight(cfg, &sys);
    let data = initial_data(cfg, &sys)?;

    match cfg.kind {
        ScenarioKind::Validate => unreachable!(),
        ScenarioKind::Decay | ScenarioKind::Fisher | ScenarioKind::Subspace => {
            let (column, quantity, rate, power) = match cfg.kind {
                ScenarioKind::Decay => (1, "e2", 2.0 * mu, 2 * n),
                ScenarioKind::Fisher => (3, "fisher", 2.0 * mu, 2 * n),
                _ => {
                    let Data::Hermite(state) = &data else {
                        return Err(CliError::Config {
                            path: "initial.hermite".into(),
                            message: "subspace scenarios need hermite coefficients".into(),
                        });
                    };
                    let active = state.lowest_active_level();
                    let k = match (cfg.k, active) {
                        (Some(k), _) => k,
                        (None, Some(m)) => m,
                        (None, None) => 1,
                    };
                    report.flags.insert("data_in_subspace".into(), active.is_none_or(|m| m >= k) && state.mass() == 1.0);
                    let sd = subspace_decay_exponent(sys.drift(), k)?;
                    report.subspace = Some(SubspaceSummary {
                        k,
                        rate: sd.rate,
                        defect: sd.defect,
                    });
                    (1, "e2", sd.rate, 2 * sd.defect)
                }
            };
            let raw = data_series(&data, &sys, &grid, &gen, &weight, &cfg.quad)?;
            let stage = envelope_stage(&raw, column, quantity, rate, power);
            let values: Vec<f64> = raw.iter().map(|r| r[column]).collect();
            let fit = fit_stage(&grid, &values, rate, power, mu, cfg.fit_window);

            report.flags.insert("envelope_bounded".into(), stage.bounded);
            if cfg.kind != ScenarioKind::Fisher {
                report.flags.insert("e2_non_increasing".into(), non_increasing(raw.iter().map(|r| r[1])));
                report.flags.insert("ep_non_increasing".into(), non_increasing(raw.iter().map(|r| r[2])));
            }
            report.flags.insert("rate_consistent".into(), fit.rate_ok);
            report.flags.insert("poly_order_consistent".into(), fit.poly_ok);
            report.series = stage.rows;
            report.fitted_rate = fit.fit.as_ref().map(|f| f.rate_hat);
            report.fitted_poly_order = fit.fit.as_ref().map(|f| f.poly_order_hat);
            report.fit = fit.fit;
            report.fit_note = fit.note;
            report.constants = Some(Constants {
                provenance: "empirical",
                envelope: Some(stage.summary),
                w_convergence_c: None,
                drift_decay_c2: None,
            });
        }
        ScenarioKind::Hyper => {
            let Data::Mixture(mix) = &data else {
                return Err(CliError::Config {
                    path: "initial.components".into(),
                    message: "hyper scenarios need Gaussian mixture data".into(),
                });
            };
            if !(cfg.p < 2.0) {
                return Err(CliError::Config {
                    path: "run.p".into(),
                    message: "hyper scenarios need 1 < p < 2".into(),
                });
            }
            let hyper = verify_hypercontractivity(&sys, mix, cfg.p, &grid, &linspace(CONSTANT_FIT_T_MAX, CONSTANT_FIT_STEPS), &cfg.quad)?;
            let raw = data_series(&data, &sys, &grid, &gen, &weight, &cfg.quad)?;
            report.series = raw
                .iter()
                .map(|r| SeriesRow {
                    t: r[0],
                    e2: r[1],
                    ep: r[2],
                    fisher: r[3],
                    envelope: hyper.bound,
                    ratio: r[1] / hyper.bound,
                })
                .collect();
            report.flags.insert("e2_non_increasing".into(), hyper.e2_monotone);
            report.flags.insert("bound_holds".into(), hyper.pass);
            report.constants = Some(Constants {
                provenance: "empirical",
                envelope: None,
                w_convergence_c: Some(hyper.params.c),
                drift_decay_c2: Some(hyper.params.c2),
            });
            report.hyper = Some(hyper);
        }
    }
    Ok(finish(report))
}

fn finish(mut report: DecayReport) -> ScenarioOutcome {
    report.pass = report.flags.values().all(|&v| v);
    let csv = series_csv(&report.series);
    ScenarioOutcome { report, csv }
}

/// CSV with 17 significant digits per value.
pub fn series_csv(rows: &[SeriesRow]) -> String {
    let mut out = String::with_capacity(64 * (rows.len() + 1));
    out.push_str(CSV_HEADER);
    out.push('\n');
    for r in rows {
        let _ = writeln!(out, "{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}", r.t, r.e2, r.ep, r.fisher, r.envelope, r.ratio);
    }
    out
}

/// Writes the CSV and JSON report into `dir`, returning their paths.
pub fn write_outputs(outcome: &ScenarioOutcome, cfg: &ScenarioConfig, dir: &Path) -> Result<(PathBuf, PathBuf), CliError> {
    let io = |path: &Path| {
        let p = path.display().to_string();
        move |e| CliError::Io { path: p, source: e }
    };
    std::fs::create_dir_all(dir).map_err(io(dir))?;
    let csv_path = dir.join(&cfg.csv_name);
    let report_path = dir.join(&cfg.report_name);
    std::fs::write(&csv_path, &outcome.csv).map_err(io(&csv_path))?;
    let mut json = serde_json::to_string_pretty(&outcome.report)?;
    json.push('\n');
    std::fs::write(&report_path, json).map_err(io(&report_path))?;
    Ok((csv_path, report_path))
}
