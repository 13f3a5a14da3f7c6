//! Pipeline drivers behind each subcommand.

use std::fs;
use std::path::{Path, PathBuf};

use prv_core::{account, analytic_gaussian_delta, analytic_gaussian_eps, gaussian_prv, AccountOptions, Accounting};

use crate::config::{check_delta, ComposeConfig, CurveQuery, Mechanism, MechanismEntry, Query, Real};
use crate::error::{CliError, CliResult};
use crate::report::{ComponentOut, EpsOut, Lattice, LedgerOut, QueryResult, Report, ValidationReport, ValidationRow};

pub const TOOL: &str = "prv";
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// δ_error used by the Gaussian check.
pub const VALIDATION_DELTA_ERROR: f64 = 1e-10;

fn lattice_of(run: &Accounting) -> Lattice {
    Lattice {
        mesh: run.budget.mesh(),
        half_width: run.budget.half_width(),
        n: run.budget.n(),
        k: run.budget.k(),
        eps_window: run.budget.eps_window(),
    }
}

fn curve_grid(c: &CurveQuery) -> Vec<f64> {
    let (lo, hi, m) = (c.eps_min.0, c.eps_max.0, c.num_points);
    if m == 1 {
        return vec![lo];
    }
    (0..m).map(|i| lo + (hi - lo) * i as f64 / (m - 1) as f64).collect()
}

/// Runs a config end to end.
pub fn run_compose(config: &ComposeConfig) -> CliResult<Report> {
    config.validate()?;
    let delta_error = config.effective_delta_error();
    check_delta("delta_error", delta_error)?;
    let items = config
        .mechanisms
        .iter()
        .map(|m| Ok((m.build()?, m.count)))
        .collect::<CliResult<Vec<_>>>()?;
    let options = AccountOptions {
        eps_error: config.eps_error.0,
        delta_error,
        eps_upper_override: config.eps_upper_override.map(|r| r.0),
    };
    let run = account(&items, options)?;
    let mut warnings = run.warnings.clone();

    let result = match config.query {
        Query::DeltaTarget(t) => {
            let e = run.epsilon_at(t.0)?;
            QueryResult::Eps(EpsOut {
                delta: e.delta,
                lower: e.lower,
                estimate: e.estimate,
                upper: e.upper,
                notes: e.notes,
            })
        }
        Query::EpsTarget(e) => QueryResult::Delta(run.delta_at(e.0)?),
        Query::Curve(c) => {
            let window = run.budget.eps_window();
            if c.eps_max.0 > window {
                return Err(CliError::Validation(format!(
                    "curve eps_max = {} lies beyond the valid window [0, {window}] for this budget",
                    c.eps_max.0
                )));
            }
            let rows = curve_grid(&c)
                .into_iter()
                .map(|e| run.delta_at(e))
                .collect::<Result<Vec<_>, _>>()?;
            QueryResult::Curve(rows)
        }
    };

    let composed = &run.composed;
    let ledger = composed.ledger();
    let edge_mass = composed.edge_mass(config.eps_error.0);
    if edge_mass > delta_error {
        warnings.push(format!(
            "composed mass {edge_mass:.3e} lies within eps_error of ±L; the wrap-around guarantee may be loose"
        ));
    }
    let components = config
        .mechanisms
        .iter()
        .zip(&run.components)
        .map(|(m, c)| ComponentOut {
            kind: m.mechanism.kind(),
            count: c.count,
            inverted_direction: m.inverted_direction,
            trunc_mass: c.trunc_mass,
            shift: c.shift,
            mass_inf: c.mass_inf,
        })
        .collect();

    Ok(Report {
        tool: TOOL,
        version: VERSION,
        mechanisms: config.mechanisms.clone(),
        eps_error: config.eps_error.0,
        delta_error,
        eps_upper_override: config.eps_upper_override.map(|r| r.0),
        lattice: lattice_of(&run),
        eps_upper_each: run.eps_each,
        eps_upper_total: run.eps_total,
        attempts: run.attempts,
        components,
        q_finite: composed.q_finite(),
        ledger: LedgerOut {
            trunc_mass: ledger.trunc_mass,
            wrap_bound: ledger.wrap_bound,
            hoeffding: run.budget.hoeffding_term(),
            clamped_mass: ledger.clamped_mass,
            total: run.error_total,
            edge_mass,
        },
        result,
        warnings,
    })
}

/// Parameters of a DP-SGD run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DpsgdParams {
    pub sigma: f64,
    pub sampling_prob: f64,
    pub steps: u64,
    pub delta: f64,
    pub eps_error: f64,
    pub delta_error: Option<f64>,
    pub inverted_direction: bool,
}

pub fn dpsgd_config(p: &DpsgdParams) -> ComposeConfig {
    ComposeConfig {
        mechanisms: vec![MechanismEntry {
            mechanism: Mechanism::SubsampledGaussian {
                sigma: Real(p.sigma),
                sampling_prob: Real(p.sampling_prob),
                sensitivity: Real(1.0),
            },
            count: p.steps,
            inverted_direction: p.inverted_direction,
        }],
        query: Query::DeltaTarget(Real(p.delta)),
        eps_error: Real(p.eps_error),
        delta_error: p.delta_error.map(Real),
        eps_upper_override: None,
    }
}

/// ε of `steps` rounds of DP-SGD at the given δ.
pub fn run_dpsgd(p: &DpsgdParams) -> CliResult<Report> {
    run_compose(&dpsgd_config(p))
}

/// Path of the metadata file written next to a curve CSV.
pub fn metadata_path(csv: &Path) -> PathBuf {
    if csv.extension().is_some_and(|e| e == "json") {
        csv.with_extension("meta.json")
    } else {
        csv.with_extension("json")
    }
}

pub fn curve_csv(rows: &[prv_core::DeltaEstimate]) -> String {
    let mut out = String::from("eps,delta_lower,delta_est,delta_upper\n");
    for r in rows {
        out.push_str(&format!("{},{},{},{}\n", r.eps, r.lower, r.estimate, r.upper));
    }
    out
}

pub fn curve_metadata(report: &Report) -> String {
    let meta = serde_json::json!({
        "tool": report.tool,
        "version": report.version,
        "mesh": report.lattice.mesh,
        "half_width": report.lattice.half_width,
        "n": report.lattice.n,
        "k": report.lattice.k,
        "eps_error": report.eps_error,
        "delta_error": report.delta_error,
        "q_finite": report.q_finite,
        "error_total": report.ledger.total,
        "mechanisms": report.mechanisms,
    });
    let mut s = serde_json::to_string_pretty(&meta).expect("metadata serializes");
    s.push('\n');
    s
}

fn write_file(path: &Path, contents: &str) -> CliResult<()> {
    fs::write(path, contents).map_err(|e| CliError::Io(format!("cannot write {}: {e}", path.display())))
}

/// Writes the curve CSV to `out` and its metadata next to it.
pub fn run_curve(config: &ComposeConfig, out: &Path) -> CliResult<Report> {
    if !matches!(config.query, Query::Curve(_)) {
        return Err(CliError::Validation(
            "the curve command needs a config with a curve query".into(),
        ));
    }
    let report = run_compose(config)?;
    let QueryResult::Curve(rows) = &report.result else {
        unreachable!("curve query yields curve rows");
    };
    write_file(out, &curve_csv(rows))?;
    write_file(&metadata_path(out), &curve_metadata(&report))?;
    Ok(report)
}

/// Writes a JSON report.
pub fn write_report(report: &Report, out: &Path) -> CliResult<()> {
    write_file(out, &report.to_json())
}

/// Checks the composed Gaussian sandwich against the closed-form curve on a
/// grid from 0 to where the exact δ reaches 1e-9 (or the window edge).
pub fn validate_gaussian(sigma: f64, steps: u64, eps_error: f64, points: usize) -> CliResult<ValidationReport> {
    if points < 2 {
        return Err(CliError::Validation("need at least two grid points".into()));
    }
    let prv = gaussian_prv(sigma, 1.0)?;
    let options = AccountOptions {
        eps_error,
        delta_error: VALIDATION_DELTA_ERROR,
        eps_upper_override: None,
    };
    let run = account(&[(prv, steps)], options)?;
    let mu = (steps as f64).sqrt() / sigma;
    let top = analytic_gaussian_eps(mu, 1e-9)?.min(run.budget.eps_window());
    let mut rows = Vec::with_capacity(points);
    for i in 0..points {
        let eps = top * i as f64 / (points - 1) as f64;
        let exact = analytic_gaussian_delta(mu, eps)?;
        let d = run.delta_at(eps)?;
        rows.push(ValidationRow {
            eps,
            exact,
            lower: d.lower,
            estimate: d.estimate,
            upper: d.upper,
            pass: d.lower <= exact && exact <= d.upper,
        });
    }
    Ok(ValidationReport {
        sigma,
        steps,
        mu,
        eps_error,
        delta_error: VALIDATION_DELTA_ERROR,
        lattice: lattice_of(&run),
        rows,
    })
}
