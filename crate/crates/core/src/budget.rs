//! Numerical parameters derived from error targets, and the closed-form
//! bounds used to choose them.

use serde::Serialize;

use crate::error::{param, PrvError, Result};
use crate::mechanisms::MechanismPrv;
use crate::numeric::{bisect_decreasing, std_normal_cdf};

/// Smallest δ (target or error) accepted anywhere in the library.
pub const DELTA_FLOOR: f64 = 1e-10;

/// Error targets together with the lattice they imply.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ErrorBudget {
    eps_error: f64,
    delta_error: f64,
    k: u64,
    mesh: f64,
    half_width: f64,
}

fn check_eps_error(eps_error: f64) -> Result<()> {
    if !(eps_error > 0.0) || !eps_error.is_finite() {
        return param(format!("eps_error must be positive and finite, got {eps_error}"));
    }
    Ok(())
}

fn check_delta_error(delta_error: f64) -> Result<()> {
    if !(delta_error < 1.0) || delta_error.is_nan() {
        return param(format!("delta_error must be below 1, got {delta_error}"));
    }
    if delta_error < DELTA_FLOOR {
        return Err(PrvError::Precision(format!(
            "delta_error {delta_error:e} is below the supported floor {DELTA_FLOOR:e}"
        )));
    }
    Ok(())
}

impl ErrorBudget {
    /// Budget with `h` from the mesh formula and `L` from the supplied ε upper
    /// bounds (total at `δ_error/4`, largest single mechanism at `δ_error/(8k)`).
    pub fn new(eps_error: f64, delta_error: f64, k: u64, eps_upper_total: f64, eps_upper_each: f64) -> Result<Self> {
        check_eps_error(eps_error)?;
        check_delta_error(delta_error)?;
        let mesh = mesh_size(k, eps_error, delta_error)?;
        let half_width = truncation_bound(eps_upper_total, eps_upper_each, eps_error, mesh)?;
        Ok(Self {
            eps_error,
            delta_error,
            k,
            mesh,
            half_width,
        })
    }

    /// Budget with the formula mesh and an explicit half width, which is
    /// rounded up to the lattice and to at least `2 + eps_error`.
    pub fn with_half_width(eps_error: f64, delta_error: f64, k: u64, half_width: f64) -> Result<Self> {
        check_eps_error(eps_error)?;
        check_delta_error(delta_error)?;
        let mesh = mesh_size(k, eps_error, delta_error)?;
        if !half_width.is_finite() {
            return param(format!("half width must be finite, got {half_width}"));
        }
        let half_width = round_up_to_lattice(half_width.max(2.0 + eps_error), mesh);
        Ok(Self {
            eps_error,
            delta_error,
            k,
            mesh,
            half_width,
        })
    }

    /// Budget on a caller-chosen lattice, e.g. a finer mesh than the formula
    /// gives. The lattice relation and `L >= 2 + eps_error` are still enforced.
    pub fn with_lattice(eps_error: f64, delta_error: f64, k: u64, mesh: f64, half_width: f64) -> Result<Self> {
        check_eps_error(eps_error)?;
        check_delta_error(delta_error)?;
        if k == 0 {
            return param("k must be at least 1");
        }
        crate::discretization::lattice_size(mesh, half_width)?;
        if half_width < 2.0 + eps_error {
            return param(format!("half width {half_width} is below 2 + eps_error"));
        }
        Ok(Self {
            eps_error,
            delta_error,
            k,
            mesh,
            half_width,
        })
    }

    pub fn eps_error(&self) -> f64 {
        self.eps_error
    }

    pub fn delta_error(&self) -> f64 {
        self.delta_error
    }

    pub fn k(&self) -> u64 {
        self.k
    }

    pub fn mesh(&self) -> f64 {
        self.mesh
    }

    pub fn half_width(&self) -> f64 {
        self.half_width
    }

    /// Bins on each side of zero.
    pub fn n(&self) -> usize {
        ((self.half_width / self.mesh - 0.5).round()) as usize
    }

    /// Upper end of the ε window on which the sandwich is valid.
    pub fn eps_window(&self) -> f64 {
        self.half_width - self.eps_error
    }

    /// Hoeffding failure probability `2 exp(-2 ε_err² / (k h²))` for this lattice.
    pub fn hoeffding_term(&self) -> f64 {
        hoeffding_term(self.k, self.eps_error, self.mesh)
    }
}

pub fn hoeffding_term(k: u64, eps_error: f64, mesh: f64) -> f64 {
    (2.0 * (-2.0 * eps_error * eps_error / (k as f64 * mesh * mesh)).exp()).min(1.0)
}

/// Mesh `h = ε_err / sqrt((k/2) ln(12/δ_err))`.
pub fn mesh_size(k: u64, eps_error: f64, delta_error: f64) -> Result<f64> {
    if k == 0 {
        return param("k must be at least 1");
    }
    check_eps_error(eps_error)?;
    if !(delta_error > 0.0 && delta_error < 12.0) {
        return param(format!("delta_error must lie in (0, 12), got {delta_error}"));
    }
    Ok(eps_error / (0.5 * k as f64 * (12.0 / delta_error).ln()).sqrt())
}

/// Smallest `L >= target` of the form `h/2 + n·h` with `n >= 1`.
pub fn round_up_to_lattice(target: f64, mesh: f64) -> f64 {
    let steps = ((target - 0.5 * mesh) / mesh - 1e-9).ceil().max(1.0);
    (steps + 0.5) * mesh
}

/// Half width `L >= 2 + max(ε_err + ε_total, ε_each)`, rounded up to the lattice.
pub fn truncation_bound(eps_upper_total: f64, eps_upper_each: f64, eps_error: f64, mesh: f64) -> Result<f64> {
    check_eps_error(eps_error)?;
    if !(mesh > 0.0) || !mesh.is_finite() {
        return param(format!("mesh must be positive, got {mesh}"));
    }
    if !eps_upper_total.is_finite() || !eps_upper_each.is_finite() {
        return param("ε upper bounds must be finite");
    }
    let target = 2.0 + (eps_error + eps_upper_total).max(eps_upper_each);
    Ok(round_up_to_lattice(target, mesh))
}

/// Advanced composition: `ε sqrt(2k ln(1/δ')) + kε(e^ε - 1)`.
pub fn advanced_composition_eps(eps: f64, k: u64, delta_prime: f64) -> Result<f64> {
    if !(eps > 0.0) || !eps.is_finite() {
        return param(format!("eps must be positive, got {eps}"));
    }
    if k == 0 {
        return param("k must be at least 1");
    }
    if !(delta_prime > 0.0 && delta_prime < 1.0) {
        return param(format!("delta_prime must lie in (0, 1), got {delta_prime}"));
    }
    let k = k as f64;
    Ok(eps * (2.0 * k * (1.0 / delta_prime).ln()).sqrt() + k * eps * eps.exp_m1())
}

/// Bound on `Pr[|Y| >= ε + t]` for a PRV whose curve satisfies `δ(ε) = delta`.
pub fn prv_tail_bound(eps: f64, delta: f64, t: f64) -> Result<f64> {
    if !(t > 0.0) {
        return param(format!("t must be positive, got {t}"));
    }
    if !(eps >= 0.0) {
        return param(format!("eps must be nonnegative, got {eps}"));
    }
    if !(0.0..=1.0).contains(&delta) {
        return param(format!("delta must be a probability, got {delta}"));
    }
    Ok((delta * (1.0 + (-eps - t).exp()) / -(-t).exp_m1()).min(1.0))
}

/// Privacy curve of a Gaussian mechanism with `μ = sensitivity / σ`:
/// `Φ(-ε/μ + μ/2) - e^ε Φ(-ε/μ - μ/2)`.
pub fn analytic_gaussian_delta(mu: f64, eps: f64) -> Result<f64> {
    if !(mu > 0.0) || !mu.is_finite() {
        return param(format!("mu must be positive, got {mu}"));
    }
    let a = std_normal_cdf(-eps / mu + 0.5 * mu);
    let b = std_normal_cdf(-eps / mu - 0.5 * mu);
    let tail = if b > 0.0 { eps.exp() * b } else { 0.0 };
    Ok((a - tail).clamp(0.0, 1.0))
}

/// Smallest `ε >= 0` with `analytic_gaussian_delta(mu, ε) <= delta`.
pub fn analytic_gaussian_eps(mu: f64, delta: f64) -> Result<f64> {
    if !(delta > 0.0 && delta < 1.0) {
        return param(format!("delta must lie in (0, 1), got {delta}"));
    }
    let curve = |e: f64| analytic_gaussian_delta(mu, e).unwrap_or(0.0);
    invert_curve(curve, delta, "analytic Gaussian curve")
}

/// Smallest `ε >= 0` at which the finite part of a mechanism's curve drops to `delta`.
///
/// Infinity masses are excluded: they are carried exactly through composition
/// and never need truncating.
pub fn mechanism_eps(prv: &MechanismPrv, delta: f64) -> Result<f64> {
    if !(delta > 0.0 && delta < 1.0) {
        return param(format!("delta must lie in (0, 1), got {delta}"));
    }
    invert_curve(|e| prv.finite_delta(e), delta, "mechanism curve")
}

fn invert_curve<F: Fn(f64) -> f64>(curve: F, delta: f64, what: &str) -> Result<f64> {
    if curve(0.0) <= delta {
        return Ok(0.0);
    }
    let mut hi = 1.0;
    while curve(hi) > delta {
        hi *= 2.0;
        if hi > 1e6 {
            return Err(PrvError::Numerical(format!(
                "{what} stays above δ = {delta:e} up to ε = 1e6"
            )));
        }
    }
    let (_, hi) = bisect_decreasing(&curve, delta, 0.0, hi, 1e-12 * hi.max(1.0), 200);
    Ok(hi)
}
