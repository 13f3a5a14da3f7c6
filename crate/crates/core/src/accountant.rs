//! End-to-end accounting: choose the lattice, discretize, compose, and check
//! the realized error terms against the budget.

use serde::Serialize;

use crate::budget::{
    advanced_composition_eps, mechanism_eps, mesh_size, round_up_to_lattice, truncation_bound, ErrorBudget,
};
use crate::composition::{chernoff_eps, compose, delta_at, epsilon_at, ComposedPrv, DeltaEstimate, EpsEstimate};
use crate::discretization::{discretize, DiscretePrv, MAX_BINS};
use crate::error::{param, PrvError, Result};
use crate::mechanisms::MechanismPrv;

const MAX_ATTEMPTS: usize = 20;
const GROWTH: f64 = 1.2;

/// Error targets and optional overrides for a run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AccountOptions {
    pub eps_error: f64,
    pub delta_error: f64,
    /// Caller-supplied upper bound on the composed ε at `δ_error / 4`.
    pub eps_upper_override: Option<f64>,
}

/// Per-mechanism discretization summary.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ComponentSummary {
    pub count: u64,
    pub trunc_mass: f64,
    pub shift: f64,
    pub mass_inf: f64,
}

/// Result of an accounting run.
#[derive(Debug, Clone)]
pub struct Accounting {
    pub budget: ErrorBudget,
    pub composed: ComposedPrv,
    pub components: Vec<ComponentSummary>,
    /// Largest single-mechanism ε at `δ_error / (8k)`.
    pub eps_each: f64,
    /// Upper bound on the composed ε at `δ_error / 4` used to size `L`.
    pub eps_total: f64,
    /// Realized truncation + wrap-around + Hoeffding error.
    pub error_total: f64,
    /// Number of lattices built before the error fit the budget.
    pub attempts: usize,
    pub warnings: Vec<String>,
}

impl Accounting {
    pub fn delta_at(&self, eps: f64) -> Result<DeltaEstimate> {
        delta_at(&self.composed, eps, &self.budget)
    }

    pub fn epsilon_at(&self, delta: f64) -> Result<EpsEstimate> {
        epsilon_at(&self.composed, delta, &self.budget)
    }
}

fn total_count(items: &[(MechanismPrv, u64)]) -> Result<u64> {
    if items.is_empty() {
        return param("no mechanisms to compose");
    }
    let mut k: u64 = 0;
    for (_, count) in items {
        if *count == 0 {
            return param("every count must be at least 1");
        }
        k = k
            .checked_add(*count)
            .ok_or_else(|| PrvError::Parameter("total count overflows".into()))?;
    }
    Ok(k)
}

fn discretize_all(items: &[(MechanismPrv, u64)], mesh: f64, half_width: f64) -> Result<Vec<DiscretePrv>> {
    let n = (half_width / mesh - 0.5).round();
    if n > MAX_BINS as f64 {
        return Err(PrvError::Numerical(format!(
            "lattice with {n} bins per side exceeds the limit of {MAX_BINS}"
        )));
    }
    items.iter().map(|(prv, _)| discretize(prv, mesh, half_width)).collect()
}

/// Discretizes and composes on exactly the lattice of `budget`.
pub fn account_on_budget(items: &[(MechanismPrv, u64)], budget: ErrorBudget) -> Result<Accounting> {
    let k = total_count(items)?;
    if k > budget.k() {
        return param(format!("{k} mechanisms exceed the budget's k = {}", budget.k()));
    }
    let discrete = discretize_all(items, budget.mesh(), budget.half_width())?;
    finish(items, &discrete, budget, f64::NAN, f64::NAN, 1, Vec::new())
}

fn finish(
    items: &[(MechanismPrv, u64)],
    discrete: &[DiscretePrv],
    budget: ErrorBudget,
    eps_each: f64,
    eps_total: f64,
    attempts: usize,
    warnings: Vec<String>,
) -> Result<Accounting> {
    let pairs: Vec<(&DiscretePrv, u64)> = discrete.iter().zip(items).map(|(d, (_, c))| (d, *c)).collect();
    let composed = compose(&pairs)?;
    let error_total = composed.ledger().total(budget.hoeffding_term());
    let components = discrete
        .iter()
        .zip(items)
        .map(|(d, (_, count))| ComponentSummary {
            count: *count,
            trunc_mass: d.trunc_mass(),
            shift: d.shift(),
            mass_inf: d.mass_inf(),
        })
        .collect();
    Ok(Accounting {
        budget,
        composed,
        components,
        eps_each,
        eps_total,
        error_total,
        attempts,
        warnings,
    })
}

/// Runs the full pipeline.
///
/// The mesh comes from the error targets. The half width starts from ε upper
/// bounds (the tighter of advanced composition and a Chernoff bound on the
/// discretized components, unless overridden) and grows until truncation,
/// wrap-around and Hoeffding errors together fit inside `δ_error`.
pub fn account(items: &[(MechanismPrv, u64)], options: AccountOptions) -> Result<Accounting> {
    let k = total_count(items)?;
    let AccountOptions {
        eps_error,
        delta_error,
        eps_upper_override,
    } = options;
    // Validates both error targets, including the δ floor.
    ErrorBudget::with_half_width(eps_error, delta_error, k, 0.0)?;
    let mesh = mesh_size(k, eps_error, delta_error)?;

    let each_delta = delta_error / (8.0 * k as f64);
    let mut eps_each: f64 = 0.0;
    for (prv, _) in items {
        eps_each = eps_each.max(mechanism_eps(prv, each_delta)?);
    }

    let mut warnings = Vec::new();
    if let Some(total) = eps_upper_override {
        if !(total >= 0.0) || !total.is_finite() {
            return param(format!(
                "eps_upper_override must be a finite nonnegative number, got {total}"
            ));
        }
        let half_width = truncation_bound(total, eps_each, eps_error, mesh)?;
        let budget = ErrorBudget::with_lattice(eps_error, delta_error, k, mesh, half_width)?;
        let discrete = discretize_all(items, mesh, half_width)?;
        let run = finish(items, &discrete, budget, eps_each, total, 1, Vec::new())?;
        if run.error_total > delta_error {
            warnings.push(format!(
                "with the supplied ε upper bound the realized error {:.3e} exceeds δ_error = {delta_error:e}",
                run.error_total
            ));
        }
        return Ok(Accounting { warnings, ..run });
    }

    // A provisional lattice wide enough for each single mechanism gives the
    // components for the Chernoff bound.
    let provisional = round_up_to_lattice(2.0 + eps_error.max(eps_each), mesh);
    let probe = discretize_all(items, mesh, provisional)?;
    let pairs: Vec<(&DiscretePrv, u64)> = probe.iter().zip(items).map(|(d, (_, c))| (d, *c)).collect();
    let mut eps_total = chernoff_eps(&pairs, delta_error / 4.0);
    if eps_each > 0.0 {
        eps_total = eps_total.min(advanced_composition_eps(eps_each, k, delta_error / 8.0)?);
    }

    let mut half_width = truncation_bound(eps_total, eps_each, eps_error, mesh)?;
    let mut attempts = 0;
    loop {
        attempts += 1;
        let budget = ErrorBudget::with_lattice(eps_error, delta_error, k, mesh, half_width)?;
        let discrete = if half_width == provisional {
            probe.clone()
        } else {
            discretize_all(items, mesh, half_width)?
        };
        let run = finish(items, &discrete, budget, eps_each, eps_total, attempts, Vec::new())?;
        if run.error_total <= delta_error {
            return Ok(Accounting { warnings, ..run });
        }
        if attempts >= MAX_ATTEMPTS {
            warnings.push(format!(
                "realized error {:.3e} still exceeds δ_error = {delta_error:e} at L = {half_width}",
                run.error_total
            ));
            return Ok(Accounting { warnings, ..run });
        }
        half_width = round_up_to_lattice(half_width * GROWTH, mesh);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::budget::analytic_gaussian_eps;
    use crate::mechanisms::{approx_dp_prv, gaussian_prv, subsample_prv, SubsampleParams};

    fn opts(eps_error: f64, delta_error: f64) -> AccountOptions {
        AccountOptions {
            eps_error,
            delta_error,
            eps_upper_override: None,
        }
    }

    #[test]
    fn gaussian_pipeline_brackets_exact_eps() {
        let g = gaussian_prv(30.0, 1.0).unwrap();
        let run = account(&[(g, 1000)], opts(0.1, 1e-10)).unwrap();
        assert!(run.error_total <= 1e-10);
        assert!(run.warnings.is_empty());
        let mu = 1000f64.sqrt() / 30.0;
        for delta in [1e-6, 1e-3, 1e-1] {
            let exact = analytic_gaussian_eps(mu, delta).unwrap();
            let e = run.epsilon_at(delta).unwrap();
            assert!(e.lower <= exact && exact <= e.upper, "δ = {delta}: {e:?} vs {exact}");
        }
    }

    #[test]
    fn dpsgd_half_width_is_moderate() {
        let g = gaussian_prv(0.8, 1.0).unwrap();
        let sub = subsample_prv(&g, SubsampleParams::new(1e-3).unwrap()).unwrap();
        let run = account(&[(sub, 2000)], opts(0.1, 1e-10)).unwrap();
        assert!(run.budget.half_width() < 30.0, "{}", run.budget.half_width());
        assert!(run.error_total <= 1e-10);
        let e = run.epsilon_at(1e-7).unwrap();
        assert!(e.upper - e.lower <= 0.201, "{e:?}");
    }

    #[test]
    fn override_is_honored_with_warning() {
        let g = gaussian_prv(1.0, 1.0).unwrap();
        let options = AccountOptions {
            eps_upper_override: Some(0.0),
            ..opts(0.5, 1e-10)
        };
        let run = account(&[(g, 4)], options).unwrap();
        assert_eq!(run.attempts, 1);
        assert!(!run.warnings.is_empty());
        assert_eq!(run.eps_total, 0.0);
    }

    #[test]
    fn mixed_items_share_a_lattice() {
        let g = gaussian_prv(3.0, 1.0).unwrap();
        let a = approx_dp_prv(0.1, 1e-6).unwrap();
        let run = account(&[(g, 5), (a, 3)], opts(0.2, 1e-9)).unwrap();
        assert_eq!(run.composed.count(), 8);
        assert!((run.composed.q_finite() - (1.0 - 1e-6f64).powi(3)).abs() < 1e-15);
        assert_eq!(run.components.len(), 2);
    }

    #[test]
    fn invalid_inputs() {
        let g = gaussian_prv(1.0, 1.0).unwrap();
        assert!(account(&[], opts(0.1, 1e-10)).is_err());
        assert!(account(&[(g.clone(), 0)], opts(0.1, 1e-10)).is_err());
        assert!(matches!(
            account(&[(g, 1)], opts(0.1, 1e-12)),
            Err(PrvError::Precision(_))
        ));
    }
}
