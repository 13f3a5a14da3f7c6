//! Privacy loss random variable pairs `(X, Y)` for standard mechanisms.
//!
//! `Y` is the privacy loss sampled under the second distribution of the pair
//! and `X` under the first; their densities satisfy `Y(t) = e^t X(t)`. `Y` may
//! put mass at `+∞` and `X` at `-∞`; everything else lives in a [`Law`].

use std::sync::Arc;

use crate::error::{param, PrvError, Result};
use crate::laws::{AtomicLaw, LaplaceLossLaw, Law, NegatedLaw, NormalLaw, SharedLaw, SubsampledLaw};
use crate::numeric::simpson;

/// Tolerance on `finite mass + infinity mass == 1`.
const MASS_TOLERANCE: f64 = 1e-9;

#[derive(Clone, Debug)]
pub struct MechanismPrv {
    y: SharedLaw,
    x: SharedLaw,
    mass_y_inf: f64,
    mass_x_neg_inf: f64,
}

impl MechanismPrv {
    /// Builds a PRV pair from arbitrary laws. The laws' finite masses must
    /// complement the stated infinity masses.
    pub fn from_laws(y: SharedLaw, x: SharedLaw, mass_y_inf: f64, mass_x_neg_inf: f64) -> Result<Self> {
        for (name, m) in [("mass_y_inf", mass_y_inf), ("mass_x_neg_inf", mass_x_neg_inf)] {
            if !(0.0..1.0).contains(&m) {
                return param(format!("{name} = {m} must lie in [0, 1)"));
            }
        }
        if (y.mass() + mass_y_inf - 1.0).abs() > MASS_TOLERANCE {
            return param(format!("Y has finite mass {} but infinity mass {mass_y_inf}", y.mass()));
        }
        if (x.mass() + mass_x_neg_inf - 1.0).abs() > MASS_TOLERANCE {
            return param(format!(
                "X has finite mass {} but infinity mass {mass_x_neg_inf}",
                x.mass()
            ));
        }
        Ok(Self {
            y,
            x,
            mass_y_inf,
            mass_x_neg_inf,
        })
    }

    pub fn y_law(&self) -> &dyn Law {
        self.y.as_ref()
    }

    pub fn x_law(&self) -> &dyn Law {
        self.x.as_ref()
    }

    pub fn cdf_y(&self, t: f64) -> f64 {
        self.y.cdf(t)
    }

    pub fn cdf_x(&self, t: f64) -> f64 {
        self.x.cdf(t)
    }

    /// `Pr[Y = +∞]`.
    pub fn mass_y_inf(&self) -> f64 {
        self.mass_y_inf
    }

    /// `Pr[X = -∞]`.
    pub fn mass_x_neg_inf(&self) -> f64 {
        self.mass_x_neg_inf
    }

    /// Closed-form `E[Y | a < Y <= b]`, if the law of `Y` has one.
    pub fn truncated_mean_y(&self, a: f64, b: f64) -> Option<f64> {
        let moment = self.y.partial_moment(a, b)?;
        let mass = window_mass(self.y.as_ref(), a, b);
        (mass > 0.0).then(|| moment / mass)
    }

    /// The privacy curve `δ(ε) = Pr[Y > ε] - e^ε Pr[X > ε]`.
    pub fn delta(&self, eps: f64) -> f64 {
        (self.mass_y_inf + self.finite_excess(eps)).clamp(0.0, 1.0)
    }

    /// Privacy curve of the finite parts alone, each renormalized to mass one.
    ///
    /// This is the curve whose tails govern truncation once infinity masses
    /// have been split off the composition.
    pub fn finite_delta(&self, eps: f64) -> f64 {
        let my = self.y.mass();
        let mx = self.x.mass();
        let sy = self.y.sf(eps) / my;
        let sx = self.x.sf(eps) / mx;
        let tail = if sx > 0.0 { eps.exp() * sx } else { 0.0 };
        (sy - tail).clamp(0.0, 1.0)
    }

    fn finite_excess(&self, eps: f64) -> f64 {
        let sx = self.x.sf(eps);
        let tail = if sx > 0.0 { eps.exp() * sx } else { 0.0 };
        self.y.sf(eps) - tail
    }
}

/// `Pr[a < V <= b]` computed on the side that avoids cancellation.
pub(crate) fn window_mass(law: &dyn Law, a: f64, b: f64) -> f64 {
    let half = 0.5 * law.mass();
    let below_a = law.cdf(a);
    if below_a >= half {
        return (law.sf(a) - law.sf(b)).max(0.0);
    }
    let below_b = law.cdf(b);
    if below_b <= half {
        (below_b - below_a).max(0.0)
    } else {
        (law.mass() - below_a - law.sf(b)).max(0.0)
    }
}

/// Gaussian mechanism with noise standard deviation `noise_scale`.
///
/// With `μ = sensitivity / noise_scale`, `Y ~ N(μ²/2, μ²)` and
/// `X ~ N(-μ²/2, μ²)`. Zero sensitivity gives point masses at zero.
pub fn gaussian_prv(noise_scale: f64, sensitivity: f64) -> Result<MechanismPrv> {
    if !(noise_scale > 0.0) || !noise_scale.is_finite() {
        return param(format!("noise scale must be positive, got {noise_scale}"));
    }
    if !(sensitivity >= 0.0) || !sensitivity.is_finite() {
        return param(format!("sensitivity must be nonnegative, got {sensitivity}"));
    }
    let mu = sensitivity / noise_scale;
    if mu == 0.0 {
        let point: SharedLaw = Arc::new(AtomicLaw::point(0.0));
        return MechanismPrv::from_laws(point.clone(), point, 0.0, 0.0);
    }
    let half = 0.5 * mu * mu;
    MechanismPrv::from_laws(
        Arc::new(NormalLaw::new(half, mu)),
        Arc::new(NormalLaw::new(-half, mu)),
        0.0,
        0.0,
    )
}

/// Laplace mechanism whose neighbouring outputs differ by `shift` noise scales.
pub fn laplace_prv(shift: f64) -> Result<MechanismPrv> {
    if !(shift > 0.0) || !shift.is_finite() {
        return param(format!("Laplace shift must be positive, got {shift}"));
    }
    let y: SharedLaw = Arc::new(LaplaceLossLaw { shift });
    let x: SharedLaw = Arc::new(NegatedLaw::new(y.clone()));
    MechanismPrv::from_laws(y, x, 0.0, 0.0)
}

/// The dominating pair of a generic `(ε, δ)`-DP mechanism.
pub fn approx_dp_prv(eps: f64, delta: f64) -> Result<MechanismPrv> {
    if !(eps >= 0.0) || !eps.is_finite() {
        return param(format!("epsilon must be finite and nonnegative, got {eps}"));
    }
    if !(0.0..1.0).contains(&delta) {
        return param(format!("delta must lie in [0, 1), got {delta}"));
    }
    let finite = 1.0 - delta;
    // e^ε / (e^ε + 1) written to stay finite for large ε.
    let hi = finite / (1.0 + (-eps).exp());
    let lo = finite - hi;
    let y = AtomicLaw::new(vec![(-eps, lo), (eps, hi)]);
    let x = AtomicLaw::new(vec![(-eps, hi), (eps, lo)]);
    MechanismPrv::from_laws(Arc::new(y), Arc::new(x), delta, delta)
}

/// Sampling probability for subsampled mechanisms.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SubsampleParams {
    p: f64,
}

impl SubsampleParams {
    pub fn new(p: f64) -> Result<Self> {
        if !(p > 0.0 && p <= 1.0) {
            return param(format!("sampling probability must lie in (0, 1], got {p}"));
        }
        Ok(Self { p })
    }

    pub fn p(&self) -> f64 {
        self.p
    }
}

/// PRV pair of `δ(P || p·P + (1-p)·Q)` given the pair of `δ(P || Q)`.
pub fn subsample_prv(inner: &MechanismPrv, params: SubsampleParams) -> Result<MechanismPrv> {
    if inner.mass_y_inf > 0.0 || inner.mass_x_neg_inf > 0.0 {
        return Err(PrvError::Unsupported(
            "subsampling requires a mechanism without mass at infinity".into(),
        ));
    }
    let p = params.p;
    if p == 1.0 {
        return Ok(inner.clone());
    }
    let x_p = SubsampledLaw::new(p, vec![(1.0, inner.x.clone())]);
    let y_p = SubsampledLaw::new(p, vec![(p, inner.y.clone()), (1.0 - p, inner.x.clone())]);
    MechanismPrv::from_laws(Arc::new(y_p), Arc::new(x_p), 0.0, 0.0)
}

/// PRV pair of the reversed curve: `(X, Y) ↦ (-Y, -X)`.
pub fn invert_direction(prv: &MechanismPrv) -> MechanismPrv {
    MechanismPrv {
        y: Arc::new(NegatedLaw::new(prv.x.clone())),
        x: Arc::new(NegatedLaw::new(prv.y.clone())),
        mass_y_inf: prv.mass_x_neg_inf,
        mass_x_neg_inf: prv.mass_y_inf,
    }
}

/// `E[Y | -L < Y <= L]`.
///
/// Uses the closed form when the law provides one; otherwise integrates the
/// CDF by parts with a composite Simpson rule on `nodes` panels. Atoms are
/// summed exactly and removed from the integrand.
pub fn conditional_mean(prv: &MechanismPrv, half_width: f64, nodes: usize) -> Result<f64> {
    if !(half_width > 0.0) {
        return param(format!("half width must be positive, got {half_width}"));
    }
    let law = prv.y_law();
    let (a, b) = (-half_width, half_width);
    let mass = window_mass(law, a, b);
    if !(mass > 0.0) {
        return Err(PrvError::Domain(format!(
            "Y has no mass in (-{half_width}, {half_width}]"
        )));
    }
    let moment = match law.partial_moment(a, b) {
        Some(m) => m,
        None => quadrature_moment(law, a, b, nodes),
    };
    Ok(moment / mass)
}

/// `E[V; a < V <= b]` by integration by parts around a pivot inside `[a, b]`.
pub fn quadrature_moment(law: &dyn Law, a: f64, b: f64, nodes: usize) -> f64 {
    if b <= a {
        return 0.0;
    }
    let atoms: Vec<(f64, f64)> = law.atoms();
    let atom_part: f64 = atoms
        .iter()
        .filter(|&&(x, _)| a < x && x <= b)
        .map(|&(x, m)| x * m)
        .sum();

    let cont_cdf = |s: f64| law.cdf(s) - atoms.iter().filter(|a| a.0 <= s).map(|a| a.1).sum::<f64>();
    let cont_sf = |s: f64| law.sf(s) - atoms.iter().filter(|a| a.0 > s).map(|a| a.1).sum::<f64>();

    // ∫ t dF = c·Pr[a<V<=b] + ∫_c^b Pr[s<V<=b] ds - ∫_a^c Pr[a<V<=s] ds
    let pivot = 0.0f64.clamp(a, b);
    let (cdf_a, sf_b) = (cont_cdf(a), cont_sf(b));
    let atom_total: f64 = atoms.iter().map(|a| a.1).sum();
    let cont_mass = (law.mass() - atom_total - cdf_a - sf_b).max(0.0);

    let width = b - a;
    let upper_panels = ((nodes as f64) * (b - pivot) / width).ceil() as usize;
    let lower_panels = ((nodes as f64) * (pivot - a) / width).ceil() as usize;
    let upper = simpson(|s| (cont_sf(s) - sf_b).max(0.0), pivot, b, upper_panels);
    let lower = simpson(|s| (cont_cdf(s) - cdf_a).max(0.0), a, pivot, lower_panels);

    atom_part + pivot * cont_mass + upper - lower
}
