//! Small numerical helpers shared across modules.

use libm::erfc;
use std::f64::consts::{FRAC_1_SQRT_2, PI};

/// Standard normal CDF, accurate in both tails.
pub fn std_normal_cdf(z: f64) -> f64 {
    0.5 * erfc(-z * FRAC_1_SQRT_2)
}

/// Standard normal survival function `1 - Φ(z)`, accurate in the upper tail.
pub fn std_normal_sf(z: f64) -> f64 {
    0.5 * erfc(z * FRAC_1_SQRT_2)
}

pub fn std_normal_pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * PI).sqrt()
}

/// Neumaier compensated accumulator.
#[derive(Debug, Default, Clone, Copy)]
pub struct CompensatedSum {
    sum: f64,
    comp: f64,
}

impl CompensatedSum {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

/// Composite Simpson rule over `[a, b]` with `panels` subintervals (rounded up to even).
pub fn simpson<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, panels: usize) -> f64 {
    if b <= a {
        return 0.0;
    }
    let m = panels.max(2).next_multiple_of(2);
    let step = (b - a) / m as f64;
    let mut acc = CompensatedSum::new();
    acc.add(f(a));
    acc.add(f(b));
    for i in 1..m {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        acc.add(w * f(a + i as f64 * step));
    }
    acc.value() * step / 3.0
}

/// Finds the crossing of a nonincreasing function with `target` on `[lo, hi]`.
///
/// Assumes `f(lo) > target >= f(hi)`; returns the final bracket `(lo, hi)` with
/// `f(lo) > target >= f(hi)` preserved.
pub fn bisect_decreasing<F: Fn(f64) -> f64>(
    f: F,
    target: f64,
    mut lo: f64,
    mut hi: f64,
    tol: f64,
    max_iter: usize,
) -> (f64, f64) {
    for _ in 0..max_iter {
        if hi - lo < tol {
            break;
        }
        let mid = 0.5 * (lo + hi);
        if f(mid) > target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    (lo, hi)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normal_tails_are_complementary() {
        for &z in &[-8.0, -1.5, 0.0, 0.3, 2.0, 9.0] {
            assert!((std_normal_cdf(z) + std_normal_sf(z) - 1.0).abs() < 1e-15);
            assert!((std_normal_cdf(-z) - std_normal_sf(z)).abs() < 1e-300_f64.max(1e-16 * std_normal_sf(z)));
        }
        let v = std_normal_cdf(-1.5);
        assert!((v - 0.066_807_201_268_858_07).abs() < 1e-15, "{v}");
    }

    #[test]
    fn simpson_is_exact_on_cubics() {
        let v = simpson(|x| x * x * x - 2.0 * x + 1.0, -1.0, 3.0, 4);
        // ∫ = [x^4/4 - x^2 + x] from -1 to 3 = (81/4 - 9 + 3) - (1/4 - 1 - 1) = 16
        assert!((v - 16.0).abs() < 1e-12);
    }

    #[test]
    fn compensated_sum_recovers_small_terms() {
        let mut s = CompensatedSum::new();
        s.add(1.0);
        for _ in 0..1000 {
            s.add(1e-17);
        }
        s.add(-1.0);
        assert!((s.value() - 1e-14).abs() < 1e-20);
    }
}
