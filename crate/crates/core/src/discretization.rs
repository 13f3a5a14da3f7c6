//! Truncation and discretization of a PRV onto a uniform lattice.
//!
//! The finite part of `Y` is binned into half-open cells `(ih - h/2, ih + h/2]`
//! for `-n <= i <= n`, renormalized, and shifted by `μ` so that the lattice
//! variable has exactly the mean of `Y` conditioned on the window `(-L, L]`.

use serde::Serialize;

use crate::error::{param, PrvError, Result};
use crate::mechanisms::{conditional_mean, MechanismPrv};
use crate::numeric::CompensatedSum;

/// Quadrature nodes per output bin used for the mean-matching shift.
pub const DEFAULT_REFINE: usize = 64;
/// Largest lattice (bins per side) that will be built.
pub const MAX_BINS: usize = 50_000_000;

const LATTICE_TOLERANCE: f64 = 1e-9;
const NORMALIZATION_TOLERANCE: f64 = 1e-9;

/// A lattice distribution supported on `{ih + shift : -n <= i <= n}`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DiscretePrv {
    mesh: f64,
    half_width: f64,
    shift: f64,
    probs: Vec<f64>,
    mass_inf: f64,
    trunc_mass: f64,
    coupling_up: f64,
    coupling_down: f64,
}

/// Number of bins on each side of zero, `n = (L - h/2) / h`.
pub fn lattice_size(mesh: f64, half_width: f64) -> Result<usize> {
    if !(mesh > 0.0) || !mesh.is_finite() {
        return param(format!("mesh must be positive, got {mesh}"));
    }
    if !(half_width > 0.0) || !half_width.is_finite() {
        return param(format!("half width must be positive, got {half_width}"));
    }
    let r = half_width / mesh - 0.5;
    let n = r.round();
    if (r - n).abs() > LATTICE_TOLERANCE || n < 1.0 {
        return param(format!(
            "half width {half_width} is not of the form h/2 + n·h with n >= 1 for h = {mesh}"
        ));
    }
    Ok(n as usize)
}

impl DiscretePrv {
    /// Assembles a lattice distribution from its parts, checking invariants.
    pub fn new(
        mesh: f64,
        half_width: f64,
        shift: f64,
        probs: Vec<f64>,
        mass_inf: f64,
        trunc_mass: f64,
    ) -> Result<Self> {
        let n = lattice_size(mesh, half_width)?;
        if probs.len() != 2 * n + 1 {
            return param(format!("expected {} probabilities, got {}", 2 * n + 1, probs.len()));
        }
        if probs.iter().any(|&p| !(p >= 0.0)) {
            return param("probabilities must be nonnegative");
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > NORMALIZATION_TOLERANCE {
            return param(format!("probabilities sum to {total}, expected 1"));
        }
        if !(shift.abs() <= 0.5 * mesh + LATTICE_TOLERANCE) {
            return param(format!("shift {shift} exceeds half a mesh step ({})", 0.5 * mesh));
        }
        if !(0.0..1.0).contains(&mass_inf) || !(0.0..=1.0).contains(&trunc_mass) {
            return param("ledger masses must be probabilities");
        }
        Ok(Self {
            mesh,
            half_width,
            shift,
            probs,
            mass_inf,
            trunc_mass,
            coupling_up: 0.5 * mesh - shift,
            coupling_down: 0.5 * mesh + shift,
        })
    }

    pub fn mesh(&self) -> f64 {
        self.mesh
    }

    pub fn half_width(&self) -> f64 {
        self.half_width
    }

    /// Mean-matching offset `μ`.
    pub fn shift(&self) -> f64 {
        self.shift
    }

    /// Probabilities for indices `-n..=n`; index `i` is stored at `i + n`.
    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    /// Carried `Pr[Y = +∞]` of the source mechanism.
    pub fn mass_inf(&self) -> f64 {
        self.mass_inf
    }

    /// Finite mass of `Y` outside `(-L, L]`.
    pub fn trunc_mass(&self) -> f64 {
        self.trunc_mass
    }

    /// Bound on `Y - Ỹ` over the window, where `Ỹ` is the lattice point a
    /// value of `Y` is mapped to. May be negative.
    pub fn coupling_up(&self) -> f64 {
        self.coupling_up
    }

    /// Bound on `Ỹ - Y` over the window. May be negative.
    pub fn coupling_down(&self) -> f64 {
        self.coupling_down
    }

    pub fn n(&self) -> usize {
        (self.probs.len() - 1) / 2
    }

    /// Support point for lattice index `i`.
    pub fn value(&self, i: i64) -> f64 {
        i as f64 * self.mesh + self.shift
    }

    pub fn mean(&self) -> f64 {
        let n = self.n() as i64;
        let mut acc = CompensatedSum::new();
        for (pos, &p) in self.probs.iter().enumerate() {
            acc.add(p * (pos as i64 - n) as f64);
        }
        acc.value() * self.mesh + self.shift
    }
}

/// Discretizes with the default quadrature refinement.
pub fn discretize(prv: &MechanismPrv, mesh: f64, half_width: f64) -> Result<DiscretePrv> {
    discretize_with_refine(prv, mesh, half_width, DEFAULT_REFINE)
}

pub fn discretize_with_refine(prv: &MechanismPrv, mesh: f64, half_width: f64, refine: usize) -> Result<DiscretePrv> {
    let n = lattice_size(mesh, half_width)?;
    if n > MAX_BINS {
        return Err(PrvError::Numerical(format!(
            "lattice with {n} bins per side exceeds the limit of {MAX_BINS}"
        )));
    }
    if refine == 0 {
        return param("refine must be positive");
    }
    let law = prv.y_law();
    let mass = law.mass();
    let half = 0.5 * mass;
    let bins = 2 * n + 1;

    // Left tail from CDF differences, right tail from survival differences.
    let edges: Vec<f64> = (0..=bins).map(|j| (j as f64 - n as f64 - 0.5) * mesh).collect();
    let below: Vec<f64> = edges.iter().map(|&e| law.cdf(e)).collect();
    let above: Vec<f64> = edges.iter().map(|&e| law.sf(e)).collect();

    let mut probs = Vec::with_capacity(bins);
    let mut window = CompensatedSum::new();
    for i in 0..bins {
        let q = if below[i + 1] <= half {
            below[i + 1] - below[i]
        } else if below[i] >= half {
            above[i] - above[i + 1]
        } else {
            mass - below[i] - above[i + 1]
        }
        .max(0.0);
        window.add(q);
        probs.push(q);
    }
    let window = window.value();
    if !(window > 0.0) {
        return Err(PrvError::Domain(format!(
            "Y has no finite mass inside (-{half_width}, {half_width}]"
        )));
    }
    let trunc_mass = (below[0] + above[bins]).min(1.0);
    for q in &mut probs {
        *q /= window;
    }

    let target = conditional_mean(prv, half_width, refine * bins)?;
    let mut lattice_mean = CompensatedSum::new();
    for (pos, &q) in probs.iter().enumerate() {
        lattice_mean.add(q * (pos as f64 - n as f64));
    }
    let shift = target - lattice_mean.value() * mesh;
    if !(shift.abs() <= 0.5 * mesh + LATTICE_TOLERANCE) {
        return Err(PrvError::Numerical(format!(
            "mean-matching shift {shift} exceeds half a mesh step {}; the CDF or its truncated mean is inaccurate",
            0.5 * mesh
        )));
    }

    // Purely atomic laws move each atom by a known amount; otherwise a value
    // anywhere in a bin may land on its shifted centre.
    let atoms = law.atoms();
    let atom_total: f64 = atoms.iter().map(|a| a.1).sum();
    let (coupling_up, coupling_down) = if mass - atom_total <= 1e-12 {
        atoms
            .iter()
            .filter(|&&(a, _)| a > -half_width && a <= half_width)
            .map(|&(a, _)| a - ((a / mesh - 0.5).ceil() * mesh + shift))
            .fold((f64::NEG_INFINITY, f64::NEG_INFINITY), |(up, down), gap| {
                (up.max(gap), down.max(-gap))
            })
    } else {
        (0.5 * mesh - shift, 0.5 * mesh + shift)
    };

    Ok(DiscretePrv {
        mesh,
        half_width,
        shift,
        probs,
        mass_inf: prv.mass_y_inf(),
        trunc_mass,
        coupling_up,
        coupling_down,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::laws::AtomicLaw;
    use crate::mechanisms::{
        approx_dp_prv, gaussian_prv, invert_direction, laplace_prv, subsample_prv, SubsampleParams,
    };
    use proptest::prelude::*;
    use std::sync::Arc;

    fn lattice_prv(mesh: f64, atoms: &[(i64, f64)]) -> MechanismPrv {
        let law = Arc::new(AtomicLaw::new(
            atoms.iter().map(|&(i, p)| (i as f64 * mesh, p)).collect(),
        ));
        // X is irrelevant for discretization; reuse Y's law.
        MechanismPrv::from_laws(law.clone(), law, 0.0, 0.0).unwrap()
    }

    #[test]
    fn lattice_relation_is_enforced() {
        assert_eq!(lattice_size(1.0, 3.5).unwrap(), 3);
        assert_eq!(lattice_size(0.1, 1.05).unwrap(), 10);
        assert!(lattice_size(1.0, 3.0).is_err());
        assert!(lattice_size(1.0, 0.5).is_err());
        assert!(lattice_size(0.0, 1.0).is_err());
        let g = gaussian_prv(1.0, 1.0).unwrap();
        assert!(matches!(discretize(&g, 0.1, 1.0), Err(PrvError::Parameter(_))));
        let huge = (MAX_BINS as f64 + 1.5) * 1e-3;
        assert!(matches!(discretize(&g, 1e-3, huge), Err(PrvError::Numerical(_))));
    }

    #[test]
    fn point_mass_lands_on_index_zero() {
        let zero = gaussian_prv(1.0, 0.0).unwrap();
        let d = discretize(&zero, 0.25, 2.125).unwrap();
        let n = d.n();
        assert_eq!(n, 8);
        for (pos, &p) in d.probs().iter().enumerate() {
            assert_eq!(p, if pos == n { 1.0 } else { 0.0 });
        }
        assert_eq!(d.shift(), 0.0);
        assert_eq!(d.trunc_mass(), 0.0);
    }

    #[test]
    fn gaussian_mean_is_matched() {
        // Y ~ N(0.5, 1) on (-10.005, 10.005]. Oracle: truncated-normal mean
        // m + s(φ(α) - φ(β)) / (Φ(β) - Φ(α)) evaluated with statrs.
        use statrs::distribution::{Continuous, ContinuousCDF, Normal};
        let g = gaussian_prv(1.0, 1.0).unwrap();
        let d = discretize(&g, 0.01, 10.005).unwrap();
        let std = Normal::new(0.0, 1.0).unwrap();
        let (alpha, beta) = (-10.505, 9.505);
        let oracle = 0.5 + (std.pdf(alpha) - std.pdf(beta)) / (std.cdf(beta) - std.cdf(alpha));
        assert!((d.mean() - oracle).abs() < 1e-9, "{} vs {oracle}", d.mean());
        assert!(d.shift().abs() <= 0.005 + 1e-12);
        let total: f64 = d.probs().iter().sum();
        assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn approx_dp_atoms_land_on_bins() {
        let p = approx_dp_prv(0.3, 0.1).unwrap();
        let d = discretize(&p, 0.1, 1.05).unwrap();
        let n = d.n();
        assert_eq!(n, 10);
        let e = 0.3f64.exp();
        let hi = e / (e + 1.0);
        let lo = 1.0 / (e + 1.0);
        for (pos, &q) in d.probs().iter().enumerate() {
            let expected = match pos as i64 - n as i64 {
                3 => hi,
                -3 => lo,
                _ => 0.0,
            };
            assert!((q - expected).abs() < 1e-14, "index {}: {q}", pos as i64 - n as i64);
        }
        assert_eq!(d.mass_inf(), 0.1);
        assert_eq!(d.trunc_mass(), 0.0);
        assert!(d.coupling_up().abs() < 1e-14 && d.coupling_down().abs() < 1e-14);
        // Atoms ±0.33 land on ±0.3 + μ.
        let off = discretize(&approx_dp_prv(0.33, 0.1).unwrap(), 0.1, 1.05).unwrap();
        let mu = off.shift();
        assert!((off.coupling_up() - (0.03 - mu)).abs() < 1e-14);
        assert!((off.coupling_down() - (0.03 + mu)).abs() < 1e-14);
        let g = discretize(&gaussian_prv(1.0, 1.0).unwrap(), 0.1, 1.05).unwrap();
        assert_eq!(g.coupling_up(), 0.05 - g.shift());
        assert_eq!(g.coupling_down(), 0.05 + g.shift());
        assert!(d.shift().abs() < 1e-14);
    }

    #[test]
    fn atoms_on_bin_edges_are_counted_once() {
        // Atoms exactly at h/2 belong to bin 0, at -h/2 to bin -1.
        let prv = lattice_prv(0.5, &[(1, 0.5), (-1, 0.5)]);
        let d = discretize(&prv, 1.0, 2.5).unwrap();
        let n = d.n();
        assert_eq!(d.probs()[n], 0.5);
        assert_eq!(d.probs()[n - 1], 0.5);
        assert!((d.mean() - 0.0).abs() < 1e-15);
    }

    #[test]
    fn mean_matching_for_subsampled_and_inverted() {
        let g = gaussian_prv(0.8, 1.0).unwrap();
        let sub = subsample_prv(&g, SubsampleParams::new(1e-2).unwrap()).unwrap();
        for prv in [sub.clone(), invert_direction(&sub), laplace_prv(0.7).unwrap()] {
            let d = discretize(&prv, 1e-3, 6.0005).unwrap();
            let cm = conditional_mean(&prv, 6.0005, 64 * 12001).unwrap();
            assert!((d.mean() - cm).abs() < 1e-12);
            assert!(d.shift().abs() <= 0.5e-3 + 1e-9);
        }
    }

    #[test]
    fn trunc_mass_matches_tails() {
        let g = gaussian_prv(1.0, 1.0).unwrap();
        let d = discretize(&g, 0.1, 2.05).unwrap();
        let expected = g.cdf_y(-2.05) + g.y_law().sf(2.05);
        assert!((d.trunc_mass() - expected).abs() < 1e-15);
    }

    #[test]
    fn empty_window_is_a_domain_error() {
        let p = approx_dp_prv(3.0, 0.0).unwrap();
        assert!(matches!(discretize(&p, 0.5, 1.25), Err(PrvError::Domain(_))));
    }

    proptest! {
        #[test]
        fn lattice_supported_input_is_reproduced(
            weights in proptest::collection::vec(0.0f64..1.0, 1..12),
            offset in -4i64..4,
        ) {
            let total: f64 = weights.iter().sum();
            prop_assume!(total > 1e-3);
            let mesh = 0.125;
            let atoms: Vec<(i64, f64)> = weights.iter().enumerate()
                .map(|(k, w)| (k as i64 + offset - 5, w / total)).collect();
            let prv = lattice_prv(mesh, &atoms);
            let d = discretize(&prv, mesh, mesh * 20.5).unwrap();
            let n = d.n() as i64;
            prop_assert!(d.shift().abs() < 1e-13);
            for &(i, p) in &atoms {
                prop_assert!((d.probs()[(i + n) as usize] - p).abs() < 1e-14);
            }
            let again = discretize(&lattice_prv(mesh, &atoms), mesh, mesh * 20.5).unwrap();
            prop_assert_eq!(again, d);
        }

        #[test]
        fn coupling_moves_mass_at_most_half_a_bin(t in -3.9f64..3.9, sigma in 0.5f64..3.0) {
            // Truncated CDF at t is sandwiched by the unshifted lattice CDF at t ± h/2.
            let g = gaussian_prv(sigma, 1.0).unwrap();
            let (h, l) = (0.05, 4.025);
            let d = discretize(&g, h, l).unwrap();
            let n = d.n() as i64;
            let window = g.cdf_y(l) - g.cdf_y(-l);
            let truncated = (g.cdf_y(t) - g.cdf_y(-l)) / window;
            let lattice_cdf = |x: f64| -> f64 {
                d.probs().iter().enumerate()
                    .filter(|(pos, _)| (*pos as i64 - n) as f64 * h <= x)
                    .map(|(_, p)| p).sum()
            };
            prop_assert!(lattice_cdf(t + h / 2.0) >= truncated - 1e-12);
            prop_assert!(lattice_cdf(t - h / 2.0) <= truncated + 1e-12);
        }
    }
}
