//! Report types and their text rendering.

use std::fmt;

use prv_core::DeltaEstimate;
use serde::{Serialize, Serializer};

use crate::config::MechanismEntry;

/// Non-finite values are written as strings so the JSON stays valid.
fn real<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
    if v.is_finite() {
        s.serialize_f64(*v)
    } else if v.is_nan() {
        s.serialize_str("nan")
    } else if *v > 0.0 {
        s.serialize_str("inf")
    } else {
        s.serialize_str("-inf")
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Lattice {
    pub mesh: f64,
    pub half_width: f64,
    pub n: usize,
    pub k: u64,
    pub eps_window: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ComponentOut {
    pub kind: &'static str,
    pub count: u64,
    pub inverted_direction: bool,
    pub trunc_mass: f64,
    pub shift: f64,
    pub mass_inf: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct LedgerOut {
    pub trunc_mass: f64,
    pub wrap_bound: f64,
    pub hoeffding: f64,
    pub clamped_mass: f64,
    pub total: f64,
    pub edge_mass: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct EpsOut {
    pub delta: f64,
    #[serde(serialize_with = "real")]
    pub lower: f64,
    #[serde(serialize_with = "real")]
    pub estimate: f64,
    #[serde(serialize_with = "real")]
    pub upper: f64,
    pub notes: Vec<String>,
}

#[derive(Debug, Clone, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum QueryResult {
    Eps(EpsOut),
    Delta(DeltaEstimate),
    Curve(Vec<DeltaEstimate>),
}

#[derive(Debug, Clone, Serialize)]
pub struct Report {
    pub tool: &'static str,
    pub version: &'static str,
    pub mechanisms: Vec<MechanismEntry>,
    pub eps_error: f64,
    pub delta_error: f64,
    pub eps_upper_override: Option<f64>,
    pub lattice: Lattice,
    #[serde(serialize_with = "real")]
    pub eps_upper_each: f64,
    #[serde(serialize_with = "real")]
    pub eps_upper_total: f64,
    pub attempts: usize,
    pub components: Vec<ComponentOut>,
    pub q_finite: f64,
    pub ledger: LedgerOut,
    pub result: QueryResult,
    pub warnings: Vec<String>,
}

impl Report {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }
}

impl fmt::Display for Report {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{} {}", self.tool, self.version)?;
        writeln!(f, "mechanisms:")?;
        for (m, c) in self.mechanisms.iter().zip(&self.components) {
            let params = serde_json::to_value(&m.mechanism).expect("mechanism serializes");
            let mut line = format!("  {} x{}", c.kind, c.count);
            if let Some(obj) = params.as_object() {
                for (key, value) in obj.iter().filter(|(k, _)| k.as_str() != "kind") {
                    line.push_str(&format!(" {key}={value}"));
                }
            }
            if c.inverted_direction {
                line.push_str(" inverted");
            }
            writeln!(
                f,
                "{line}  trunc_mass={:e} shift={:e} mass_inf={}",
                c.trunc_mass, c.shift, c.mass_inf
            )?;
        }
        let l = &self.lattice;
        writeln!(
            f,
            "lattice: h={} L={} n={} k={} eps window=[0, {}]",
            l.mesh, l.half_width, l.n, l.k, l.eps_window
        )?;
        writeln!(
            f,
            "targets: eps_error={} delta_error={:e}",
            self.eps_error, self.delta_error
        )?;
        match self.eps_upper_override {
            Some(v) => writeln!(
                f,
                "eps upper bounds: each={} total={} (override)",
                self.eps_upper_each, v
            )?,
            None => writeln!(
                f,
                "eps upper bounds: each={} total={} (lattices built: {})",
                self.eps_upper_each, self.eps_upper_total, self.attempts
            )?,
        }
        let g = &self.ledger;
        writeln!(
            f,
            "error ledger: truncation={:e} wrap={:e} hoeffding={:e} total={:e} (clamped {:e}, edge mass {:e})",
            g.trunc_mass, g.wrap_bound, g.hoeffding, g.total, g.clamped_mass, g.edge_mass
        )?;
        writeln!(f, "q_finite: {}", self.q_finite)?;
        match &self.result {
            QueryResult::Eps(e) => {
                writeln!(f, "epsilon at delta={:e}:", e.delta)?;
                writeln!(f, "  lower    {}", e.lower)?;
                writeln!(f, "  estimate {}", e.estimate)?;
                writeln!(f, "  upper    {}", e.upper)?;
                for n in &e.notes {
                    writeln!(f, "  note: {n}")?;
                }
            }
            QueryResult::Delta(d) => {
                writeln!(f, "delta at eps={}:", d.eps)?;
                writeln!(f, "  lower    {:e}", d.lower)?;
                writeln!(f, "  estimate {:e}", d.estimate)?;
                writeln!(f, "  upper    {:e}", d.upper)?;
            }
            QueryResult::Curve(rows) => {
                writeln!(f, "curve ({} points):", rows.len())?;
                writeln!(f, "  {:>12} {:>14} {:>14} {:>14}", "eps", "lower", "estimate", "upper")?;
                for r in rows {
                    writeln!(
                        f,
                        "  {:>12.6} {:>14.6e} {:>14.6e} {:>14.6e}",
                        r.eps, r.lower, r.estimate, r.upper
                    )?;
                }
            }
        }
        for w in &self.warnings {
            writeln!(f, "warning: {w}")?;
        }
        Ok(())
    }
}

/// One grid point of the Gaussian sandwich check.
#[derive(Debug, Clone, Serialize)]
pub struct ValidationRow {
    pub eps: f64,
    pub exact: f64,
    pub lower: f64,
    pub estimate: f64,
    pub upper: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct ValidationReport {
    pub sigma: f64,
    pub steps: u64,
    pub mu: f64,
    pub eps_error: f64,
    pub delta_error: f64,
    pub lattice: Lattice,
    pub rows: Vec<ValidationRow>,
}

impl ValidationReport {
    pub fn all_pass(&self) -> bool {
        self.rows.iter().all(|r| r.pass)
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "gaussian check: sigma={} steps={} mu={} eps_error={} delta_error={:e}",
            self.sigma, self.steps, self.mu, self.eps_error, self.delta_error
        )?;
        let l = &self.lattice;
        writeln!(f, "lattice: h={} L={} n={}", l.mesh, l.half_width, l.n)?;
        for r in &self.rows {
            writeln!(
                f,
                "{} eps={:.6} exact={:.6e} lower={:.6e} estimate={:.6e} upper={:.6e}",
                if r.pass { "PASS" } else { "FAIL" },
                r.eps,
                r.exact,
                r.lower,
                r.estimate,
                r.upper
            )?;
        }
        let passed = self.rows.iter().filter(|r| r.pass).count();
        writeln!(f, "{passed}/{} grid points inside the sandwich", self.rows.len())
    }
}
