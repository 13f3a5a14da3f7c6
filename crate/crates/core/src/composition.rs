//! Composition of discretized PRVs by circular convolution, and evaluation of
//! the composed privacy curve with its error sandwich.
//!
//! Lattice index `i ∈ -n..=n` is stored at position `i + n`. Addition is
//! modulo `2L = (2n + 1)·h`, so convolution is circular over `N = 2n + 1`
//! positions and is carried out with FFTs of exactly that length.

use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::Serialize;

use crate::budget::{hoeffding_term, ErrorBudget, DELTA_FLOOR};
use crate::discretization::DiscretePrv;
use crate::error::{param, PrvError, Result};
use crate::numeric::{bisect_decreasing, CompensatedSum};

/// Largest total mass of negative FFT outputs tolerated before failing.
pub const CLAMP_LIMIT: f64 = 1e-8;

const EPS_TOLERANCE: f64 = 1e-6;
// Support points within this fraction of L of ε count as equal to ε.
const VALUE_TOLERANCE: f64 = 1e-12;
const EPS_MAX_ITER: usize = 60;

/// Error terms accumulated while composing.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ErrorLedger {
    /// `Σ count_i · Pr[|Y_i| outside (-L, L]]`.
    pub trunc_mass: f64,
    /// Chernoff bound on `Pr[|Σ Ỹ_i| >= L]` for the unwrapped lattice sum.
    pub wrap_bound: f64,
    /// Total mass of negative FFT outputs that was clamped to zero.
    pub clamped_mass: f64,
}

impl ErrorLedger {
    /// Total δ error for a given `ε_error`: truncation, wrap-around and the
    /// Hoeffding term of the lattice.
    pub fn total(&self, hoeffding: f64) -> f64 {
        self.trunc_mass + self.wrap_bound + hoeffding
    }
}

/// A lattice component kept for tail bounds on the unwrapped sum.
#[derive(Debug, Clone)]
struct Component {
    prv: Arc<DiscretePrv>,
    count: u64,
}

/// The composed lattice distribution plus what is needed to query it.
#[derive(Debug, Clone)]
pub struct ComposedPrv {
    mesh: f64,
    half_width: f64,
    probs: Vec<f64>,
    total_shift: f64,
    q_finite: f64,
    count: u64,
    ledger: ErrorLedger,
    components: Vec<Component>,
    // Deterministic bounds on Σ (Y_i - Ỹ_i) from above and below.
    coupling_up: f64,
    coupling_down: f64,
    // Index range that can carry mass, if it does not cover the whole circle.
    support: Option<(i64, i64)>,
    // Suffix sums: tail[j] = Σ_{i>=j} p_i and tail_rel[j] = Σ_{i>=j} p_i e^{-(y_i - y_j)}.
    tail: Vec<f64>,
    tail_rel: Vec<f64>,
}

/// `δ` sandwich at one ε.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DeltaEstimate {
    pub eps: f64,
    pub lower: f64,
    pub estimate: f64,
    pub upper: f64,
}

/// `ε` sandwich at one δ. Fields may be `+∞` when the target is not reached
/// inside the valid window.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpsEstimate {
    pub delta: f64,
    pub lower: f64,
    pub estimate: f64,
    pub upper: f64,
    pub notes: Vec<String>,
}

impl From<&DiscretePrv> for ComposedPrv {
    fn from(d: &DiscretePrv) -> Self {
        Self::assemble(
            d.mesh(),
            d.half_width(),
            d.probs().to_vec(),
            d.shift(),
            1.0 - d.mass_inf(),
            1,
            0.0,
            vec![Component {
                prv: Arc::new(d.clone()),
                count: 1,
            }],
            Some(index_support(d.probs())),
        )
    }
}

impl ComposedPrv {
    #[allow(clippy::too_many_arguments)]
    fn assemble(
        mesh: f64,
        half_width: f64,
        mut probs: Vec<f64>,
        shift: f64,
        q_finite: f64,
        count: u64,
        clamped_mass: f64,
        components: Vec<Component>,
        support: Option<(i64, i64)>,
    ) -> Self {
        let size = probs.len() as i64;
        // Carry whole bins into the index so the residual lies in (-h/2, h/2].
        let carry = (shift / mesh - 0.5).ceil();
        let residual = shift - carry * mesh;
        let rot = (carry as i64).rem_euclid(size) as usize;
        probs.rotate_right(rot);
        let support = support
            .filter(|&(lo, hi)| hi - lo + 1 < size)
            .map(|(lo, hi)| (lo + carry as i64, hi + carry as i64));

        let mut tail = vec![0.0; probs.len() + 1];
        let mut tail_rel = vec![0.0; probs.len() + 1];
        let decay = (-mesh).exp();
        for j in (0..probs.len()).rev() {
            tail[j] = tail[j + 1] + probs[j];
            tail_rel[j] = probs[j] + decay * tail_rel[j + 1];
        }

        let trunc_mass = components
            .iter()
            .map(|c| c.count as f64 * c.prv.trunc_mass())
            .sum::<f64>()
            .min(1.0);
        let wrap_bound = wrap_bound(&components, half_width);
        let coupling_up = components.iter().map(|c| c.count as f64 * c.prv.coupling_up()).sum();
        let coupling_down = components.iter().map(|c| c.count as f64 * c.prv.coupling_down()).sum();
        Self {
            mesh,
            half_width,
            probs,
            total_shift: residual,
            q_finite,
            count,
            ledger: ErrorLedger {
                trunc_mass,
                wrap_bound,
                clamped_mass,
            },
            components,
            coupling_up,
            coupling_down,
            support,
            tail,
            tail_rel,
        }
    }

    pub fn mesh(&self) -> f64 {
        self.mesh
    }

    pub fn half_width(&self) -> f64 {
        self.half_width
    }

    /// Probabilities for indices `-n..=n`.
    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn n(&self) -> usize {
        (self.probs.len() - 1) / 2
    }

    /// Residual shift in `(-h/2, h/2]`; support points are `ih + total_shift`.
    pub fn total_shift(&self) -> f64 {
        self.total_shift
    }

    /// Probability that no component hit `+∞`.
    pub fn q_finite(&self) -> f64 {
        self.q_finite
    }

    /// Total number of composed mechanisms.
    pub fn count(&self) -> u64 {
        self.count
    }

    pub fn ledger(&self) -> &ErrorLedger {
        &self.ledger
    }

    /// Support point at storage position `pos`.
    pub fn value_at(&self, pos: usize) -> f64 {
        (pos as f64 - self.n() as f64) * self.mesh + self.total_shift
    }

    /// First storage position whose value exceeds `eps`.
    fn first_above(&self, eps: f64) -> usize {
        let len = self.probs.len();
        let eps = eps + VALUE_TOLERANCE * self.half_width;
        let guess = ((eps - self.total_shift) / self.mesh + self.n() as f64).floor() + 1.0;
        let mut j = guess.clamp(0.0, len as f64) as usize;
        while j > 0 && self.value_at(j - 1) > eps {
            j -= 1;
        }
        while j < len && self.value_at(j) <= eps {
            j += 1;
        }
        j
    }

    /// Curve of the composed finite parts, `E[(1 - e^{ε - Ỹ})₊]`.
    pub fn finite_delta(&self, eps: f64) -> f64 {
        let j = self.first_above(eps);
        if j == self.probs.len() {
            return 0.0;
        }
        let v = self.tail[j] - (eps - self.value_at(j)).exp() * self.tail_rel[j];
        v.clamp(0.0, 1.0)
    }

    /// Mixes in the infinity mass: `(1 - q) + q·δ`.
    pub fn fold(&self, finite: f64) -> f64 {
        (1.0 - self.q_finite) + self.q_finite * finite
    }

    /// Composed mass whose value lies outside `[-(L - ε_err), L - ε_err]`.
    pub fn edge_mass(&self, eps_error: f64) -> f64 {
        let edge = self.half_width - eps_error;
        let upper = self.tail[self.first_above(edge)];
        let lo = self.first_above(-edge - 1e-12 * self.mesh);
        // Positions below `lo` have value <= -edge (up to rounding).
        let lower = 1.0 - self.tail[lo];
        (upper + lower.max(0.0)).min(1.0)
    }

    fn check_budget(&self, budget: &ErrorBudget) -> Result<()> {
        let same = |a: f64, b: f64| (a - b).abs() <= 1e-12 * a.abs().max(b.abs());
        if !same(budget.mesh(), self.mesh) || !same(budget.half_width(), self.half_width) {
            return param(format!(
                "budget lattice (h = {}, L = {}) does not match composition (h = {}, L = {})",
                budget.mesh(),
                budget.half_width(),
                self.mesh,
                self.half_width
            ));
        }
        if self.count > budget.k() {
            return param(format!(
                "composition has {} mechanisms but the budget covers only k = {}",
                self.count,
                budget.k()
            ));
        }
        Ok(())
    }

    /// ε offsets `(upper, lower)` used by the sandwich. Each is `ε_error`, or
    /// the deterministic bound on `Σ (Y_i - Ỹ_i)` from that side when tighter.
    pub fn eps_offsets(&self, eps_error: f64) -> (f64, f64) {
        (eps_error.min(self.coupling_up), eps_error.min(self.coupling_down))
    }

    fn upper_curve(&self, eps: f64, budget: &ErrorBudget) -> f64 {
        let shifted = eps - self.eps_offsets(budget.eps_error()).0;
        self.fold((self.finite_delta(shifted) + budget.delta_error()).min(1.0))
    }

    fn lower_curve(&self, eps: f64, budget: &ErrorBudget) -> f64 {
        let shifted = eps + self.eps_offsets(budget.eps_error()).1;
        self.fold(self.finite_delta(shifted) - budget.delta_error()).max(0.0)
    }
}

fn check_lattices(a_mesh: f64, a_l: f64, b_mesh: f64, b_l: f64) -> Result<()> {
    if a_mesh != b_mesh || a_l != b_l {
        return param(format!(
            "lattices differ: (h = {a_mesh}, L = {a_l}) vs (h = {b_mesh}, L = {b_l})"
        ));
    }
    Ok(())
}

/// Storage order → FFT order (index `i` at position `i mod N`).
fn to_wrapped(probs: &[f64]) -> Vec<Complex<f64>> {
    let n = (probs.len() - 1) / 2;
    let mut out: Vec<Complex<f64>> = probs.iter().map(|&p| Complex::new(p, 0.0)).collect();
    out.rotate_left(n);
    out
}

/// First and last index with positive mass.
fn index_support(probs: &[f64]) -> (i64, i64) {
    let n = (probs.len() as i64 - 1) / 2;
    let first = probs.iter().position(|&p| p > 0.0).unwrap_or(0) as i64;
    let last = probs.iter().rposition(|&p| p > 0.0).unwrap_or(probs.len() - 1) as i64;
    (first - n, last - n)
}

fn add_supports(a: Option<(i64, i64)>, b: Option<(i64, i64)>) -> Option<(i64, i64)> {
    Some((a?.0 + b?.0, a?.1 + b?.1))
}

/// Inverse transform, back to storage order. Roundoff is removed by zeroing
/// entries outside the known support and clamping negatives.
fn from_spectrum(
    mut spectrum: Vec<Complex<f64>>,
    planner: &mut FftPlanner<f64>,
    support: Option<(i64, i64)>,
) -> Result<(Vec<f64>, f64)> {
    let len = spectrum.len();
    planner.plan_fft_inverse(len).process(&mut spectrum);
    let scale = 1.0 / len as f64;
    let mut probs: Vec<f64> = spectrum.iter().map(|c| c.re * scale).collect();
    let n = (len - 1) / 2;
    probs.rotate_right(n);

    let mut clamped = 0.0;
    if let Some((lo, hi)) = support.filter(|&(lo, hi)| hi - lo + 1 < len as i64) {
        for (pos, p) in probs.iter_mut().enumerate() {
            let offset = (pos as i64 - n as i64 - lo).rem_euclid(len as i64);
            if offset > hi - lo {
                clamped += p.abs();
                *p = 0.0;
            }
        }
    }
    for p in &mut probs {
        if *p < 0.0 {
            clamped -= *p;
            *p = 0.0;
        }
    }
    if clamped > CLAMP_LIMIT {
        return Err(PrvError::Numerical(format!(
            "FFT roundoff produced {clamped:e} of negative mass (limit {CLAMP_LIMIT:e})"
        )));
    }
    let mut total = CompensatedSum::new();
    for &p in &probs {
        total.add(p);
    }
    let total = total.value();
    for p in &mut probs {
        *p /= total;
    }
    Ok((probs, clamped))
}

fn spectrum(probs: &[f64], planner: &mut FftPlanner<f64>) -> Vec<Complex<f64>> {
    let mut buf = to_wrapped(probs);
    planner.plan_fft_forward(buf.len()).process(&mut buf);
    buf
}

fn merge_components(a: &[Component], b: &[Component]) -> Vec<Component> {
    let mut out = a.to_vec();
    for c in b {
        match out.iter_mut().find(|o| Arc::ptr_eq(&o.prv, &c.prv) || *o.prv == *c.prv) {
            Some(o) => o.count += c.count,
            None => out.push(c.clone()),
        }
    }
    out
}

/// `a ⊕_L b`: the distribution of the sum modulo `2L`.
pub fn circular_convolve(a: &ComposedPrv, b: &ComposedPrv) -> Result<ComposedPrv> {
    check_lattices(a.mesh, a.half_width, b.mesh, b.half_width)?;
    let mut planner = FftPlanner::new();
    let sa = spectrum(&a.probs, &mut planner);
    let sb = spectrum(&b.probs, &mut planner);
    let product: Vec<Complex<f64>> = sa.iter().zip(&sb).map(|(x, y)| x * y).collect();
    let support = add_supports(a.support, b.support);
    let (probs, clamped) = from_spectrum(product, &mut planner, support)?;
    Ok(ComposedPrv::assemble(
        a.mesh,
        a.half_width,
        probs,
        a.total_shift + b.total_shift,
        a.q_finite * b.q_finite,
        a.count + b.count,
        a.ledger.clamped_mass + b.ledger.clamped_mass + clamped,
        merge_components(&a.components, &b.components),
        support,
    ))
}

/// `count`-fold composition of one lattice distribution with itself.
pub fn self_compose(a: &DiscretePrv, count: u64) -> Result<ComposedPrv> {
    compose(&[(a, count)])
}

/// Composition of several lattice distributions, each repeated `count` times.
pub fn compose(items: &[(&DiscretePrv, u64)]) -> Result<ComposedPrv> {
    let Some(&(first, _)) = items.first() else {
        return param("nothing to compose");
    };
    for &(d, count) in items {
        check_lattices(first.mesh(), first.half_width(), d.mesh(), d.half_width())?;
        if count == 0 {
            return param("every count must be at least 1");
        }
        if count > u32::MAX as u64 {
            return param(format!("count {count} is too large"));
        }
    }
    let components: Vec<Component> = items
        .iter()
        .map(|&(d, count)| Component {
            prv: Arc::new(d.clone()),
            count,
        })
        .collect();
    let total: u64 = items.iter().map(|&(_, c)| c).sum();
    let shift: f64 = items.iter().map(|&(d, c)| c as f64 * d.shift()).sum();
    let q_finite: f64 = items
        .iter()
        .map(|&(d, c)| (1.0 - d.mass_inf()).powf(c as f64))
        .product();

    if total == 1 {
        let d = first;
        return Ok(ComposedPrv::assemble(
            d.mesh(),
            d.half_width(),
            d.probs().to_vec(),
            d.shift(),
            q_finite,
            1,
            0.0,
            components,
            Some(index_support(d.probs())),
        ));
    }

    let mut planner = FftPlanner::new();
    let mut acc: Option<Vec<Complex<f64>>> = None;
    for &(d, count) in items {
        let s = spectrum(d.probs(), &mut planner);
        acc = Some(match acc {
            None => s.into_iter().map(|z| z.powu(count as u32)).collect(),
            Some(prev) => prev.iter().zip(s).map(|(p, z)| p * z.powu(count as u32)).collect(),
        });
    }
    let support = Some(items.iter().fold((0, 0), |(lo_sum, hi_sum), &(d, count)| {
        let (lo, hi) = index_support(d.probs());
        (lo_sum + lo * count as i64, hi_sum + hi * count as i64)
    }));
    let (probs, clamped) = from_spectrum(acc.expect("items is nonempty"), &mut planner, support)?;
    Ok(ComposedPrv::assemble(
        first.mesh(),
        first.half_width(),
        probs,
        shift,
        q_finite,
        total,
        clamped,
        components,
        support,
    ))
}

/// `ln Σ q_j e^{λ v_j}` and the tilted mean, over a lattice distribution.
fn log_mgf(d: &DiscretePrv, lambda: f64) -> (f64, f64) {
    let n = d.n() as i64;
    let mut top = f64::NEG_INFINITY;
    for (pos, &p) in d.probs().iter().enumerate() {
        if p > 0.0 {
            top = top.max(lambda * d.value(pos as i64 - n));
        }
    }
    let (mut z, mut m) = (0.0, 0.0);
    for (pos, &p) in d.probs().iter().enumerate() {
        if p > 0.0 {
            let v = d.value(pos as i64 - n);
            let w = p * (lambda * v - top).exp();
            z += w;
            m += w * v;
        }
    }
    (top + z.ln(), m / z)
}

/// Cumulant of `±Σ Ỹ` at `λ` and its derivative.
fn cumulant(components: &[Component], lambda: f64, sign: f64) -> (f64, f64) {
    let (mut k, mut dk) = (0.0, 0.0);
    for c in components {
        let (lm, mean) = log_mgf(&c.prv, sign * lambda);
        k += c.count as f64 * lm;
        dk += c.count as f64 * sign * mean;
    }
    (k, dk)
}

/// `inf_λ>0 exp(K(λ) - λ t)` for the sum (`sign = 1`) or its negation (`sign = -1`).
fn chernoff(components: &[Component], t: f64, sign: f64) -> f64 {
    let psi = |l: f64| {
        let (k, dk) = cumulant(components, l, sign);
        (k - l * t, dk - t)
    };
    if psi(0.0).1 >= 0.0 {
        return 1.0;
    }
    let mut hi = 1.0;
    while psi(hi).1 < 0.0 {
        hi *= 2.0;
        if hi > 1e6 {
            return psi(hi).0.exp().min(1.0);
        }
    }
    let mut lo = 0.0;
    for _ in 0..50 {
        let mid = 0.5 * (lo + hi);
        if psi(mid).1 < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let best = psi(lo).0.min(psi(hi).0);
    best.exp().min(1.0)
}

fn wrap_bound(components: &[Component], half_width: f64) -> f64 {
    (chernoff(components, half_width, 1.0) + chernoff(components, half_width, -1.0)).min(1.0)
}

/// Chernoff bound on `Pr[|Σ Ỹ_i| >= threshold]` for the unwrapped sum of the
/// given lattice components.
pub fn sum_tail_bound(items: &[(&DiscretePrv, u64)], threshold: f64) -> f64 {
    let components: Vec<Component> = items
        .iter()
        .map(|&(d, count)| Component {
            prv: Arc::new(d.clone()),
            count,
        })
        .collect();
    wrap_bound(&components, threshold)
}

/// Smallest `t` for which the Chernoff bound gives `Pr[Σ Ỹ_i >= t] <= delta`.
///
/// Since `δ(t) <= Pr[Y > t]`, this upper-bounds the ε of the composition at
/// `delta` up to discretization error.
pub fn chernoff_eps(items: &[(&DiscretePrv, u64)], delta: f64) -> f64 {
    let components: Vec<Component> = items
        .iter()
        .map(|&(d, count)| Component {
            prv: Arc::new(d.clone()),
            count,
        })
        .collect();
    let log_delta = delta.ln();
    // Minimize (K(λ) - ln δ) / λ over λ > 0 by golden section in ln λ.
    let g = |u: f64| {
        let l = u.exp();
        (cumulant(&components, l, 1.0).0 - log_delta) / l
    };
    let (mut a, mut b) = (-12.0f64, 14.0f64);
    let r = 0.5 * (5f64.sqrt() - 1.0);
    let mut c = b - r * (b - a);
    let mut d = a + r * (b - a);
    let (mut gc, mut gd) = (g(c), g(d));
    for _ in 0..80 {
        if gc <= gd {
            b = d;
            d = c;
            gd = gc;
            c = b - r * (b - a);
            gc = g(c);
        } else {
            a = c;
            c = d;
            gc = gd;
            d = a + r * (b - a);
            gd = g(d);
        }
    }
    gc.min(gd).max(0.0)
}

/// `δ` sandwich at `eps`.
pub fn delta_at(c: &ComposedPrv, eps: f64, budget: &ErrorBudget) -> Result<DeltaEstimate> {
    c.check_budget(budget)?;
    let hi = budget.eps_window();
    if !(eps >= 0.0 && eps <= hi + 1e-12) {
        return Err(PrvError::Range {
            what: "eps",
            value: eps,
            lo: 0.0,
            hi,
        });
    }
    let estimate = c.fold(c.finite_delta(eps));
    let upper = c.upper_curve(eps, budget).max(estimate);
    let lower = c.lower_curve(eps, budget).min(estimate);
    Ok(DeltaEstimate {
        eps,
        lower,
        estimate,
        upper,
    })
}

/// `ε` sandwich at `delta_target`.
///
/// The upper ε is where the upper δ curve meets the target and the lower ε is
/// where the lower δ curve meets it.
pub fn epsilon_at(c: &ComposedPrv, delta_target: f64, budget: &ErrorBudget) -> Result<EpsEstimate> {
    c.check_budget(budget)?;
    if delta_target.is_nan() || delta_target >= 1.0 {
        return param(format!("delta target must lie below 1, got {delta_target}"));
    }
    if delta_target < DELTA_FLOOR {
        return Err(PrvError::Precision(format!(
            "delta target {delta_target:e} is below the supported floor {DELTA_FLOOR:e}"
        )));
    }
    let window = budget.eps_window();
    let mut notes = Vec::new();

    // Bracket (lo, hi) around the crossing; `None` if the curve never reaches the target.
    let mut solve = |name: &str, f: &dyn Fn(f64) -> f64| -> Option<(f64, f64)> {
        if f(0.0) <= delta_target {
            return Some((0.0, 0.0));
        }
        if f(window) > delta_target {
            notes.push(format!(
                "{name} δ curve stays above {delta_target:e} on [0, {window}]; widen the budget to resolve it"
            ));
            return None;
        }
        Some(bisect_decreasing(
            f,
            delta_target,
            0.0,
            window,
            EPS_TOLERANCE,
            EPS_MAX_ITER,
        ))
    };

    let upper = solve("upper", &|e| c.upper_curve(e, budget)).map_or(f64::INFINITY, |b| b.1);
    let lower = solve("lower", &|e| c.lower_curve(e, budget)).map_or(f64::INFINITY, |b| b.0);
    let estimate = solve("estimated", &|e| c.fold(c.finite_delta(e)))
        .map_or(f64::INFINITY, |(lo, hi)| 0.5 * (lo + hi))
        .max(lower)
        .min(upper);
    Ok(EpsEstimate {
        delta: delta_target,
        lower,
        estimate,
        upper,
        notes,
    })
}

/// Ledger total for a composition under `budget`, using the lattice's Hoeffding term.
pub fn ledger_total(c: &ComposedPrv, budget: &ErrorBudget) -> f64 {
    c.ledger.total(hoeffding_term(budget.k(), budget.eps_error(), c.mesh))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::budget::analytic_gaussian_delta;
    use crate::discretization::discretize;
    use crate::mechanisms::{approx_dp_prv, gaussian_prv};
    use proptest::prelude::*;

    fn lattice(mesh: f64, n: usize, entries: &[(i64, f64)]) -> DiscretePrv {
        let mut probs = vec![0.0; 2 * n + 1];
        for &(i, p) in entries {
            probs[(i + n as i64) as usize] += p;
        }
        DiscretePrv::new(mesh, (n as f64 + 0.5) * mesh, 0.0, probs, 0.0, 0.0).unwrap()
    }

    /// Direct O(N²) circular convolution.
    fn naive(a: &[f64], b: &[f64]) -> Vec<f64> {
        let len = a.len();
        let n = (len as i64 - 1) / 2;
        let mut out = vec![0.0; len];
        for (i, &x) in a.iter().enumerate() {
            for (j, &y) in b.iter().enumerate() {
                let s = (i as i64 - n) + (j as i64 - n);
                let pos = (s + n).rem_euclid(len as i64) as usize;
                out[pos] += x * y;
            }
        }
        out
    }

    fn budget_for(c: &ComposedPrv, eps_error: f64, delta_error: f64) -> ErrorBudget {
        ErrorBudget::with_lattice(eps_error, delta_error, c.count(), c.mesh(), c.half_width()).unwrap()
    }

    #[test]
    fn identity_and_bernoulli() {
        let id = lattice(1.0, 4, &[(0, 1.0)]);
        let b = lattice(1.0, 4, &[(-1, 0.5), (1, 0.5)]);
        let c = circular_convolve(&(&id).into(), &(&b).into()).unwrap();
        for (x, y) in c.probs().iter().zip(b.probs()) {
            assert!((x - y).abs() < 1e-15);
        }
        let bb = circular_convolve(&(&b).into(), &(&b).into()).unwrap();
        let expect = lattice(1.0, 4, &[(-2, 0.25), (0, 0.5), (2, 0.25)]);
        for (x, y) in bb.probs().iter().zip(expect.probs()) {
            assert!((x - y).abs() < 1e-15);
        }
    }

    #[test]
    fn overflow_wraps_modulo_two_l() {
        // n = 4: value L - h/2 = 4h plus h wraps to -4h = -L + h/2.
        let top = lattice(1.0, 4, &[(4, 1.0)]);
        let one = lattice(1.0, 4, &[(1, 1.0)]);
        let c = circular_convolve(&(&top).into(), &(&one).into()).unwrap();
        assert!((c.probs()[0] - 1.0).abs() < 1e-15);
        let bottom = lattice(1.0, 4, &[(-4, 1.0)]);
        let minus = lattice(1.0, 4, &[(-2, 1.0)]);
        let c = circular_convolve(&(&bottom).into(), &(&minus).into()).unwrap();
        // -6 ≡ 3 (mod 9)
        assert!((c.probs()[3 + 4] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn mismatched_lattices_are_rejected() {
        let a = lattice(1.0, 4, &[(0, 1.0)]);
        let b = lattice(0.5, 8, &[(0, 1.0)]);
        assert!(matches!(compose(&[(&a, 1), (&b, 1)]), Err(PrvError::Parameter(_))));
        assert!(circular_convolve(&(&a).into(), &(&b).into()).is_err());
        assert!(compose(&[]).is_err());
        assert!(compose(&[(&a, 0)]).is_err());
    }

    #[test]
    fn binomial_profile() {
        let b = lattice(1.0, 20, &[(-1, 0.5), (1, 0.5)]);
        let c = self_compose(&b, 10).unwrap();
        // C(10, 5) / 2^10
        assert!((c.probs()[20] - 252.0 / 1024.0).abs() < 1e-14);
        assert!((c.probs()[20 + 10] - 1.0 / 1024.0).abs() < 1e-14);
        assert!(c.probs()[21].abs() < 1e-15);
    }

    #[test]
    fn repeated_item_matches_power() {
        let g = gaussian_prv(2.0, 1.0).unwrap();
        let d = discretize(&g, 0.05, 6.025).unwrap();
        let a = compose(&[(&d, 2)]).unwrap();
        let b = compose(&[(&d, 1), (&d, 1)]).unwrap();
        for (x, y) in a.probs().iter().zip(b.probs()) {
            assert!((x - y).abs() < 1e-12);
        }
        assert_eq!(a.total_shift(), b.total_shift());
        assert_eq!(a.count(), 2);
    }

    #[test]
    fn shift_carry_keeps_residual_small() {
        let g = gaussian_prv(2.0, 1.0).unwrap();
        let d = discretize(&g, 0.1, 20.05).unwrap();
        let c = self_compose(&d, 7).unwrap();
        let h = d.mesh();
        assert!(c.total_shift() > -h / 2.0 && c.total_shift() <= h / 2.0);
        // Mean of the composed lattice equals 7 times the component mean (no wrap here).
        let mean: f64 = c.probs().iter().enumerate().map(|(p, &q)| q * c.value_at(p)).sum();
        assert!((mean - 7.0 * d.mean()).abs() < 1e-9);
    }

    #[test]
    fn point_mass_delta() {
        let d = lattice(0.5, 8, &[(4, 1.0)]);
        let c = ComposedPrv::from(&d);
        let budget = budget_for(&c, 0.25, 1e-6);
        assert_eq!(delta_at(&c, 2.0, &budget).unwrap().estimate, 0.0);
        let at0 = delta_at(&c, 0.0, &budget).unwrap().estimate;
        assert!((at0 - (1.0 - (-2.0f64).exp())).abs() < 1e-15);
    }

    #[test]
    fn window_is_enforced() {
        let d = lattice(0.5, 8, &[(0, 1.0)]);
        let c = ComposedPrv::from(&d);
        let budget = budget_for(&c, 0.25, 1e-6);
        assert!(matches!(delta_at(&c, -0.1, &budget), Err(PrvError::Range { .. })));
        assert!(matches!(delta_at(&c, 4.1, &budget), Err(PrvError::Range { .. })));
        assert!(delta_at(&c, 4.0, &budget).is_ok());
        let other = ErrorBudget::with_lattice(0.25, 1e-6, 1, 0.25, 4.125).unwrap();
        assert!(matches!(delta_at(&c, 1.0, &other), Err(PrvError::Parameter(_))));
        assert!(matches!(epsilon_at(&c, 1e-11, &budget), Err(PrvError::Precision(_))));
    }

    #[test]
    fn pure_dp_is_exact_at_k_eps() {
        let eps0 = 0.1;
        let h = 0.05;
        let p = approx_dp_prv(eps0, 0.0).unwrap();
        for k in [2u64, 10, 50] {
            let l = crate::budget::round_up_to_lattice(k as f64 * eps0 + 3.0, h);
            let d = discretize(&p, h, l).unwrap();
            let c = self_compose(&d, k).unwrap();
            let budget = ErrorBudget::with_lattice(h, 1e-10, k, h, l).unwrap();
            let est = delta_at(&c, k as f64 * eps0, &budget).unwrap();
            assert_eq!(est.estimate, 0.0);
            assert!(est.upper <= 1e-10);
        }
    }

    #[test]
    fn gaussian_curve_at_fine_mesh() {
        let g = gaussian_prv(1.0, 1.0).unwrap();
        let d = discretize(&g, 1e-4, 20.00005).unwrap();
        let c = ComposedPrv::from(&d);
        let budget = budget_for(&c, 0.01, 1e-9);
        let est = delta_at(&c, 1.0, &budget).unwrap();
        let exact = analytic_gaussian_delta(1.0, 1.0).unwrap();
        assert!((est.estimate - exact).abs() < 1e-6);
        assert!(est.lower <= exact && exact <= est.upper);
        let e = epsilon_at(&c, exact, &budget).unwrap();
        assert!((e.estimate - 1.0).abs() < 1e-3);
        assert!(e.lower <= 1.0 && 1.0 <= e.upper);
    }

    #[test]
    fn two_gaussians_compose_to_one() {
        let (sa, sb) = (1.5, 2.0);
        let a = discretize(&gaussian_prv(sa, 1.0).unwrap(), 0.002, 12.001).unwrap();
        let b = discretize(&gaussian_prv(sb, 1.0).unwrap(), 0.002, 12.001).unwrap();
        let c = compose(&[(&a, 1), (&b, 1)]).unwrap();
        let budget = ErrorBudget::with_lattice(0.05, 1e-10, 2, 0.002, 12.001).unwrap();
        let mu = (1.0 / (sa * sa) + 1.0 / (sb * sb)).sqrt();
        for eps in [0.0, 0.5, 1.0, 2.0] {
            let exact = analytic_gaussian_delta(mu, eps).unwrap();
            let est = delta_at(&c, eps, &budget).unwrap();
            assert!(
                est.lower <= exact && exact <= est.upper,
                "eps {eps}: {est:?} vs {exact}"
            );
            assert!((est.estimate - exact).abs() < 1e-3);
        }
    }

    #[test]
    fn eps_at_left_endpoint_and_unreachable() {
        let g = gaussian_prv(1.0, 1.0).unwrap();
        let d = discretize(&g, 0.01, 3.005).unwrap();
        let c = ComposedPrv::from(&d);
        let budget = budget_for(&c, 0.05, 1e-9);
        let at0 = delta_at(&c, 0.0, &budget).unwrap().estimate;
        assert_eq!(epsilon_at(&c, at0, &budget).unwrap().estimate, 0.0);
        let far = epsilon_at(&c, 1e-9, &budget).unwrap();
        assert!(far.upper.is_infinite());
        assert!(!far.notes.is_empty());
    }

    #[test]
    fn infinity_mass_is_folded() {
        let p = approx_dp_prv(0.5, 0.01).unwrap();
        let d = discretize(&p, 0.05, 3.025).unwrap();
        let c = self_compose(&d, 3).unwrap();
        assert!((c.q_finite() - 0.99f64.powi(3)).abs() < 1e-15);
        let budget = budget_for(&c, 0.05, 1e-10);
        // Beyond 3ε the finite part contributes nothing.
        let est = delta_at(&c, 1.6, &budget).unwrap();
        assert!((est.estimate - (1.0 - 0.99f64.powi(3))).abs() < 1e-14);
    }

    #[test]
    fn ledger_records_truncation_and_wrap() {
        let g = gaussian_prv(1.0, 1.0).unwrap();
        let d = discretize(&g, 0.01, 4.005).unwrap();
        let c = self_compose(&d, 4).unwrap();
        assert!((c.ledger().trunc_mass - 4.0 * d.trunc_mass()).abs() < 1e-18);
        // Sum of four N(0.5, 1): Pr[S >= L] ≈ Φ((2 - 4.005)/2) ≈ 0.158, so the bound is loose but finite.
        assert!(c.ledger().wrap_bound > 0.1 && c.ledger().wrap_bound <= 1.0);
        let wide = discretize(&g, 0.01, 20.005).unwrap();
        let c = self_compose(&wide, 4).unwrap();
        assert!(c.ledger().wrap_bound < 1e-10);
        assert!(c.ledger().clamped_mass < 1e-12);
    }

    #[test]
    fn chernoff_eps_upper_bounds_gaussian() {
        let d = discretize(&gaussian_prv(2.0, 1.0).unwrap(), 0.01, 10.005).unwrap();
        let e = chernoff_eps(&[(&d, 4)], 1e-6);
        // The composed PRV is N(1/2, 1) with μ = 1; its ε at δ = 1e-6 is below the tail quantile.
        let exact = crate::budget::analytic_gaussian_eps(1.0, 1e-6).unwrap();
        assert!(e >= exact);
        assert!(e < exact + 1.5);
    }

    #[test]
    fn curves_are_monotone_and_ordered() {
        let g = gaussian_prv(0.9, 1.0).unwrap();
        let d = discretize(&g, 0.01, 8.005).unwrap();
        let c = self_compose(&d, 3).unwrap();
        let budget = budget_for(&c, 0.1, 1e-10);
        let mut prev: Option<DeltaEstimate> = None;
        for i in 0..1000 {
            let eps = budget.eps_window() * i as f64 / 999.0;
            let cur = delta_at(&c, eps, &budget).unwrap();
            assert!(cur.lower <= cur.estimate && cur.estimate <= cur.upper);
            assert!(0.0 <= cur.lower && cur.upper <= 1.0);
            if let Some(p) = prev {
                assert!(cur.lower <= p.lower + 1e-15);
                assert!(cur.estimate <= p.estimate + 1e-15);
                assert!(cur.upper <= p.upper + 1e-15);
            }
            prev = Some(cur);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(50))]

        #[test]
        fn self_compose_matches_iterated_convolution(
            n in 1usize..=64,
            k in 1u64..=8,
            raw in proptest::collection::vec(0.0f64..1.0, 129),
        ) {
            let len = 2 * n + 1;
            let total: f64 = raw[..len].iter().sum();
            prop_assume!(total > 1e-6);
            let probs: Vec<f64> = raw[..len].iter().map(|w| w / total).collect();
            let d = DiscretePrv::new(1.0, n as f64 + 0.5, 0.0, probs.clone(), 0.0, 0.0).unwrap();
            let fast = self_compose(&d, k).unwrap();
            let mut slow = probs.clone();
            for _ in 1..k {
                slow = naive(&slow, &probs);
            }
            for (x, y) in fast.probs().iter().zip(&slow) {
                prop_assert!((x - y).abs() <= 1e-12);
            }
            let mut iter: ComposedPrv = (&d).into();
            for _ in 1..k {
                iter = circular_convolve(&iter, &(&d).into()).unwrap();
            }
            for (x, y) in fast.probs().iter().zip(iter.probs()) {
                prop_assert!((x - y).abs() <= 1e-12);
            }
        }
    }
}
