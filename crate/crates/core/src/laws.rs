//! One-dimensional laws of the finite part of a privacy loss random variable.
//!
//! A [`Law`] describes a (possibly defective) distribution on the real line:
//! its total mass is `1 - (mass at ±∞)`. Both one-sided CDF variants are
//! exposed so that atoms survive negation and monotone transforms.

use std::fmt;
use std::sync::Arc;

use crate::numeric::{std_normal_cdf, std_normal_pdf, std_normal_sf};

pub trait Law: Send + Sync + fmt::Debug {
    /// `Pr[V <= t]` over the finite part.
    fn cdf(&self, t: f64) -> f64;

    /// `Pr[V < t]` over the finite part.
    fn cdf_left(&self, t: f64) -> f64 {
        self.cdf(t)
    }

    /// `Pr[t < V < ∞]`. Implementations override this when the upper tail
    /// can be computed without cancellation.
    fn sf(&self, t: f64) -> f64 {
        (self.mass() - self.cdf(t)).max(0.0)
    }

    /// `Pr[t <= V < ∞]`.
    fn sf_left(&self, t: f64) -> f64 {
        (self.mass() - self.cdf_left(t)).max(0.0)
    }

    /// Total finite mass.
    fn mass(&self) -> f64;

    /// Finite atoms as `(location, mass)`, sorted by location.
    fn atoms(&self) -> Vec<(f64, f64)> {
        Vec::new()
    }

    /// Closed form of `E[V; a < V <= b]` when one is known.
    fn partial_moment(&self, _a: f64, _b: f64) -> Option<f64> {
        None
    }
}

pub type SharedLaw = Arc<dyn Law>;

/// Mass of the atom exactly at `t`.
pub fn atom_at(law: &dyn Law, t: f64) -> f64 {
    (law.cdf(t) - law.cdf_left(t)).max(0.0)
}

/// `N(mean, sd²)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormalLaw {
    pub mean: f64,
    pub sd: f64,
}

impl NormalLaw {
    pub fn new(mean: f64, sd: f64) -> Self {
        debug_assert!(sd > 0.0);
        Self { mean, sd }
    }

    fn z(&self, t: f64) -> f64 {
        (t - self.mean) / self.sd
    }
}

impl Law for NormalLaw {
    fn cdf(&self, t: f64) -> f64 {
        std_normal_cdf(self.z(t))
    }

    fn sf(&self, t: f64) -> f64 {
        std_normal_sf(self.z(t))
    }

    fn mass(&self) -> f64 {
        1.0
    }

    fn partial_moment(&self, a: f64, b: f64) -> Option<f64> {
        if b <= a {
            return Some(0.0);
        }
        let (za, zb) = (self.z(a), self.z(b));
        // Difference of Φ taken on the side where it does not cancel.
        let p = if za >= 0.0 {
            std_normal_sf(za) - std_normal_sf(zb)
        } else {
            std_normal_cdf(zb) - std_normal_cdf(za)
        };
        let dens = |z: f64| if z.is_finite() { std_normal_pdf(z) } else { 0.0 };
        Some(self.mean * p + self.sd * (dens(za) - dens(zb)))
    }
}

/// A finite collection of atoms.
#[derive(Debug, Clone, PartialEq)]
pub struct AtomicLaw {
    atoms: Vec<(f64, f64)>,
}

impl AtomicLaw {
    /// Zero-mass atoms are dropped and coincident locations merged.
    pub fn new(mut atoms: Vec<(f64, f64)>) -> Self {
        atoms.retain(|&(_, m)| m > 0.0);
        atoms.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut merged: Vec<(f64, f64)> = Vec::with_capacity(atoms.len());
        for (loc, m) in atoms {
            match merged.last_mut() {
                Some(last) if last.0 == loc => last.1 += m,
                _ => merged.push((loc, m)),
            }
        }
        Self { atoms: merged }
    }

    pub fn point(loc: f64) -> Self {
        Self::new(vec![(loc, 1.0)])
    }

    fn sum_where(&self, pred: impl Fn(f64) -> bool) -> f64 {
        self.atoms.iter().filter(|a| pred(a.0)).map(|a| a.1).sum()
    }
}

impl Law for AtomicLaw {
    fn cdf(&self, t: f64) -> f64 {
        self.sum_where(|x| x <= t)
    }

    fn cdf_left(&self, t: f64) -> f64 {
        self.sum_where(|x| x < t)
    }

    fn sf(&self, t: f64) -> f64 {
        self.sum_where(|x| x > t)
    }

    fn sf_left(&self, t: f64) -> f64 {
        self.sum_where(|x| x >= t)
    }

    fn mass(&self) -> f64 {
        self.atoms.iter().map(|a| a.1).sum()
    }

    fn atoms(&self) -> Vec<(f64, f64)> {
        self.atoms.clone()
    }

    fn partial_moment(&self, a: f64, b: f64) -> Option<f64> {
        Some(
            self.atoms
                .iter()
                .filter(|&&(x, _)| a < x && x <= b)
                .map(|&(x, m)| x * m)
                .sum(),
        )
    }
}

/// Law of `|Z - μ| - |Z|` for `Z ~ Lap(0, 1)`.
///
/// Atoms of mass `e^{-μ}/2` at `-μ` and `1/2` at `μ`; in between the CDF is
/// `Pr[Z >= (μ - t)/2] = e^{-(μ - t)/2} / 2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LaplaceLossLaw {
    pub shift: f64,
}

impl LaplaceLossLaw {
    fn ramp(&self, t: f64) -> f64 {
        0.5 * (-(self.shift - t) / 2.0).exp()
    }

    // Antiderivative of t * e^{(t-μ)/2} / 4.
    fn moment_primitive(&self, t: f64) -> f64 {
        0.5 * ((t - self.shift) / 2.0).exp() * (t - 2.0)
    }
}

impl Law for LaplaceLossLaw {
    fn cdf(&self, t: f64) -> f64 {
        let mu = self.shift;
        if t < -mu {
            0.0
        } else if t < mu {
            self.ramp(t)
        } else {
            1.0
        }
    }

    fn cdf_left(&self, t: f64) -> f64 {
        let mu = self.shift;
        if t <= -mu {
            0.0
        } else if t <= mu {
            self.ramp(t)
        } else {
            1.0
        }
    }

    fn sf(&self, t: f64) -> f64 {
        1.0 - self.cdf(t)
    }

    fn sf_left(&self, t: f64) -> f64 {
        1.0 - self.cdf_left(t)
    }

    fn mass(&self) -> f64 {
        1.0
    }

    fn atoms(&self) -> Vec<(f64, f64)> {
        vec![(-self.shift, 0.5 * (-self.shift).exp()), (self.shift, 0.5)]
    }

    fn partial_moment(&self, a: f64, b: f64) -> Option<f64> {
        if b <= a {
            return Some(0.0);
        }
        let mu = self.shift;
        let mut total: f64 = self
            .atoms()
            .into_iter()
            .filter(|&(x, _)| a < x && x <= b)
            .map(|(x, m)| x * m)
            .sum();
        let lo = a.max(-mu);
        let hi = b.min(mu);
        if hi > lo {
            total += self.moment_primitive(hi) - self.moment_primitive(lo);
        }
        Some(total)
    }
}

/// Law of `-V`.
#[derive(Debug, Clone)]
pub struct NegatedLaw {
    inner: SharedLaw,
}

impl NegatedLaw {
    pub fn new(inner: SharedLaw) -> Self {
        Self { inner }
    }
}

impl Law for NegatedLaw {
    fn cdf(&self, t: f64) -> f64 {
        self.inner.sf_left(-t)
    }

    fn cdf_left(&self, t: f64) -> f64 {
        self.inner.sf(-t)
    }

    fn sf(&self, t: f64) -> f64 {
        self.inner.cdf_left(-t)
    }

    fn sf_left(&self, t: f64) -> f64 {
        self.inner.cdf(-t)
    }

    fn mass(&self) -> f64 {
        self.inner.mass()
    }

    fn atoms(&self) -> Vec<(f64, f64)> {
        let mut atoms: Vec<_> = self.inner.atoms().into_iter().map(|(x, m)| (-x, m)).collect();
        atoms.reverse();
        atoms
    }

    fn partial_moment(&self, a: f64, b: f64) -> Option<f64> {
        // E[-V; a < -V <= b] = -E[V; -b <= V < -a]
        let (c, d) = (-b, -a);
        let inner = self.inner.as_ref();
        let open_closed = inner.partial_moment(c, d)?;
        Some(-(open_closed + c * atom_at(inner, c) - d * atom_at(inner, d)))
    }
}

/// Mixture of laws pushed through `v ↦ log(1 + p(e^v - 1))`.
///
/// The map is strictly increasing with range `(log(1-p), ∞)`; its inverse is
/// `t ↦ log((e^t - (1-p)) / p)`.
#[derive(Debug, Clone)]
pub struct SubsampledLaw {
    p: f64,
    floor: f64,
    components: Vec<(f64, SharedLaw)>,
}

impl SubsampledLaw {
    pub fn new(p: f64, components: Vec<(f64, SharedLaw)>) -> Self {
        debug_assert!(p > 0.0 && p <= 1.0);
        Self {
            p,
            floor: (-p).ln_1p(),
            components,
        }
    }

    /// `log(1 + p(e^v - 1))`.
    pub fn forward(&self, v: f64) -> f64 {
        if v > 700.0 {
            v + self.p.ln() + ((1.0 - self.p) / self.p * (-v).exp()).ln_1p()
        } else {
            (self.p * v.exp_m1()).ln_1p()
        }
    }

    /// `log((e^t - (1-p)) / p)`, or `-∞` at or below `log(1-p)`.
    pub fn inverse(&self, t: f64) -> f64 {
        if t <= self.floor {
            f64::NEG_INFINITY
        } else if t > 700.0 {
            t - self.p.ln() + (-(1.0 - self.p) * (-t).exp()).ln_1p()
        } else {
            (t.exp_m1() / self.p).ln_1p()
        }
    }

    fn mix(&self, f: impl Fn(&dyn Law) -> f64) -> f64 {
        self.components.iter().map(|(w, law)| w * f(law.as_ref())).sum()
    }
}

impl Law for SubsampledLaw {
    fn cdf(&self, t: f64) -> f64 {
        if t < self.floor {
            return 0.0;
        }
        let g = self.inverse(t);
        self.mix(|l| l.cdf(g))
    }

    fn cdf_left(&self, t: f64) -> f64 {
        if t <= self.floor {
            return 0.0;
        }
        let g = self.inverse(t);
        self.mix(|l| l.cdf_left(g))
    }

    fn sf(&self, t: f64) -> f64 {
        if t < self.floor {
            return self.mass();
        }
        let g = self.inverse(t);
        self.mix(|l| l.sf(g))
    }

    fn sf_left(&self, t: f64) -> f64 {
        if t <= self.floor {
            return self.mass();
        }
        let g = self.inverse(t);
        self.mix(|l| l.sf_left(g))
    }

    fn mass(&self) -> f64 {
        self.mix(|l| l.mass())
    }

    fn atoms(&self) -> Vec<(f64, f64)> {
        let mut atoms = Vec::new();
        for (w, law) in &self.components {
            atoms.extend(law.atoms().into_iter().map(|(x, m)| (self.forward(x), w * m)));
        }
        AtomicLaw::new(atoms).atoms
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn laplace_cdf_has_documented_atoms() {
        let law = LaplaceLossLaw { shift: 1.0 };
        assert!((atom_at(&law, -1.0) - 0.5 * (-1.0f64).exp()).abs() < 1e-15);
        assert!((atom_at(&law, 1.0) - 0.5).abs() < 1e-15);
        assert_eq!(law.cdf(1.0), 1.0);
        assert_eq!(law.cdf(-1.0001), 0.0);
    }

    #[test]
    fn laplace_full_mean_is_kl_divergence() {
        for &mu in &[0.3, 1.0, 2.5] {
            let law = LaplaceLossLaw { shift: mu };
            let m = law.partial_moment(-10.0, 10.0).unwrap();
            let kl = mu - 1.0 + (-mu).exp();
            assert!((m - kl).abs() < 1e-14, "mu={mu}: {m} vs {kl}");
        }
    }

    #[test]
    fn negation_swaps_closedness() {
        let inner: SharedLaw = Arc::new(AtomicLaw::new(vec![(-1.0, 0.25), (2.0, 0.75)]));
        let neg = NegatedLaw::new(inner);
        assert_eq!(neg.cdf(-2.0), 0.75);
        assert_eq!(neg.cdf_left(-2.0), 0.0);
        assert_eq!(neg.sf(1.0), 0.0);
        assert_eq!(neg.sf_left(1.0), 0.25);
        assert_eq!(neg.atoms(), vec![(-2.0, 0.75), (1.0, 0.25)]);
        // E[-V; -2 < -V <= 1] only sees the atom at 1.
        assert!((neg.partial_moment(-2.0, 1.0).unwrap() - 0.25).abs() < 1e-15);
        assert!((neg.partial_moment(-3.0, 1.0).unwrap() - (0.25 - 1.5)).abs() < 1e-15);
    }

    #[test]
    fn subsample_transform_roundtrips() {
        let law = SubsampledLaw::new(0.01, vec![(1.0, Arc::new(NormalLaw::new(0.0, 1.0)) as SharedLaw)]);
        for &v in &[-8.0, -2.0, 0.0, 1e-6, 3.0, 50.0, 800.0] {
            let t = law.forward(v);
            let back = law.inverse(t);
            assert!((back - v).abs() <= 1e-9 * v.abs().max(1.0), "v={v} back={back}");
        }
        // Near the floor the inverse is ill-conditioned; only monotonicity survives.
        for w in [-40.0, -30.0, -20.0].windows(2) {
            assert!(law.inverse(law.forward(w[0])) <= law.inverse(law.forward(w[1])));
        }
        assert_eq!(law.inverse((-0.01f64).ln_1p()), f64::NEG_INFINITY);
    }

    #[test]
    fn normal_partial_moment_tails() {
        let law = NormalLaw::new(0.5, 1.0);
        let full = law.partial_moment(f64::NEG_INFINITY, f64::INFINITY).unwrap();
        assert!((full - 0.5).abs() < 1e-15);
    }
}
