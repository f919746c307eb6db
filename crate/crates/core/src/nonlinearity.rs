//! The implicit Chern-Simons nonlinearity.
//!
//! For `u ≤ 0`, `F(u)` is the non-positive root `w` of `u = 1 + w − e^w`;
//! for `u > 0`, `F(u) = 0`. With `t = e^{F(u)} ∈ (0, 1]`:
//!
//! * vortex density `g(u) = t (t − 1)²`, bounded by `4/27` (attained at `t = 1/3`),
//! * its derivative `g'(u) = t (1 − 3t)` for `u < 0`, `0` for `u > 0`,
//! * potential density `W(u) = (t − 1)⁴ / 4` with `W'(u) = −g(u)`.
//!
//! `g'` jumps at `u = 0` (left limit −2, right value 0); we take the left value.

use thiserror::Error;

/// `2/3 − ln 3`, the point where `g` attains its maximum `4/27`.
pub const DENSITY_ARGMAX: f64 = 2.0 / 3.0 - 1.098_612_288_668_109_7; // ln 3

/// `max g = 4/27`.
pub const DENSITY_MAX: f64 = 4.0 / 27.0;

/// Bound on `|g'|` over the real line.
pub const DENSITY_PRIME_BOUND: f64 = 2.0;

/// Value used for `g'(0)`: the left limit.
pub const DENSITY_PRIME_AT_ZERO: f64 = -2.0;

#[derive(Debug, Clone, Copy, PartialEq, Error)]
pub enum NonlinearityError {
    #[error("non-finite argument {0}")]
    NonFinite(f64),
    #[error("invalid nonlinearity settings: tolerance {tolerance}, max_newton_iters {max_newton_iters}")]
    BadSettings { tolerance: f64, max_newton_iters: usize },
}

/// Root-solve settings for `F`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Nonlinearity {
    tolerance: f64,
    max_newton_iters: usize,
}

impl Default for Nonlinearity {
    fn default() -> Self {
        Self { tolerance: 1e-13, max_newton_iters: 100 }
    }
}

/// Every pointwise quantity derived from one evaluation of `F`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pointwise {
    pub f: f64,
    /// `e^F`
    pub t: f64,
    pub g: f64,
    pub g_prime: f64,
    pub potential: f64,
}

/// `e^w − 1 − w`, accurate for small `|w|`.
fn exp_defect(w: f64) -> f64 {
    if w.abs() < 0.5 {
        // w²/2! + w³/3! + ...; 20 terms reach machine precision for |w| < 0.5
        let mut term = w * w / 2.0;
        let mut sum = term;
        for k in 3..=22 {
            term *= w / k as f64;
            sum += term;
            if term.abs() <= f64::EPSILON * sum.abs() * 0.25 {
                break;
            }
        }
        sum
    } else {
        w.exp_m1() - w
    }
}

impl Nonlinearity {
    pub fn new(tolerance: f64, max_newton_iters: usize) -> Result<Self, NonlinearityError> {
        if !(tolerance > 0.0 && tolerance.is_finite()) || max_newton_iters == 0 {
            return Err(NonlinearityError::BadSettings { tolerance, max_newton_iters });
        }
        Ok(Self { tolerance, max_newton_iters })
    }

    pub fn tolerance(&self) -> f64 {
        self.tolerance
    }

    pub fn max_newton_iters(&self) -> usize {
        self.max_newton_iters
    }

    /// `F(u)`.
    pub fn f_of(&self, u: f64) -> Result<f64, NonlinearityError> {
        if !u.is_finite() {
            return Err(NonlinearityError::NonFinite(u));
        }
        Ok(self.f_unchecked(u))
    }

    pub fn vortex_density(&self, u: f64) -> Result<f64, NonlinearityError> {
        Ok(self.eval(u)?.g)
    }

    pub fn vortex_density_prime(&self, u: f64) -> Result<f64, NonlinearityError> {
        Ok(self.eval(u)?.g_prime)
    }

    pub fn potential_density(&self, u: f64) -> Result<f64, NonlinearityError> {
        Ok(self.eval(u)?.potential)
    }

    pub fn eval(&self, u: f64) -> Result<Pointwise, NonlinearityError> {
        if !u.is_finite() {
            return Err(NonlinearityError::NonFinite(u));
        }
        Ok(self.eval_unchecked(u))
    }

    pub(crate) fn eval_unchecked(&self, u: f64) -> Pointwise {
        if u > 0.0 {
            return Pointwise { f: 0.0, t: 1.0, g: 0.0, g_prime: 0.0, potential: 0.0 };
        }
        let f = self.f_unchecked(u);
        let t = f.exp();
        let d = f.exp_m1();
        let g_prime = if u == 0.0 { DENSITY_PRIME_AT_ZERO } else { t * (1.0 - 3.0 * t) };
        Pointwise { f, t, g: t * d * d, g_prime, potential: 0.25 * (d * d) * (d * d) }
    }

    pub(crate) fn f_unchecked(&self, u: f64) -> f64 {
        if u >= 0.0 {
            return 0.0;
        }
        let target = -u;
        // h(w) = 1 + w − e^w − u is increasing and concave on w ≤ 0; the root
        // lies in [u − 1, 0] because h(u − 1) = −e^{u−1} < 0 ≤ h(0).
        let h = |w: f64| target - exp_defect(w);
        let mut lo = u - 1.0;
        let mut hi = 0.0_f64;
        let mut w = if u <= -1.0 {
            lo
        } else {
            // two-term inversion of e^w − 1 − w = −u near the origin
            (-(2.0 * target).sqrt() - target / 3.0).max(lo)
        };
        for _ in 0..self.max_newton_iters {
            let hw = h(w);
            if hw == 0.0 {
                return w;
            }
            if hw < 0.0 {
                lo = w;
            } else {
                hi = w;
            }
            let slope = -w.exp_m1();
            let mut next = w - hw / slope;
            if !(next.is_finite() && next > lo && next < hi) {
                next = 0.5 * (lo + hi);
            }
            let step = (next - w).abs();
            w = next;
            if step <= 4.0 * f64::EPSILON * w.abs() || hi - lo <= 4.0 * f64::EPSILON * lo.abs() {
                break;
            }
        }
        if h(w).abs() > self.tolerance {
            // Newton stalled; the bracket is still valid.
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                if mid <= lo || mid >= hi {
                    break;
                }
                if h(mid) < 0.0 {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            w = if h(lo).abs() < h(hi).abs() { lo } else { hi };
        }
        w
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn nl() -> Nonlinearity {
        Nonlinearity::default()
    }

    fn forward(w: f64) -> f64 {
        1.0 + w - w.exp()
    }

    #[test]
    fn f_examples() {
        assert_eq!(nl().f_of(0.0).unwrap(), 0.0);
        assert_eq!(nl().f_of(3.0).unwrap(), 0.0);
        let u1 = forward(-1.0);
        assert!((u1 + (-1.0f64).exp()).abs() < 1e-15);
        assert!((nl().f_of(u1).unwrap() + 1.0).abs() < 1e-12);
        let u10 = forward(-10.0);
        assert!((u10 + 9.0000454).abs() < 1e-7);
        assert!((nl().f_of(u10).unwrap() + 10.0).abs() < 1e-12);
    }

    #[test]
    fn tiny_arguments_follow_square_root_law() {
        for &u in &[-1e-300, -1e-40, -1e-16, -1e-8] {
            let w = nl().f_of(u).unwrap();
            let approx = -(-2.0 * u).sqrt();
            assert!(w < 0.0);
            assert!(((w - approx) / approx).abs() < 1e-3, "u={u} w={w}");
        }
    }

    #[test]
    fn density_examples() {
        assert_eq!(nl().vortex_density(0.0).unwrap(), 0.0);
        assert_eq!(nl().vortex_density(5.0).unwrap(), 0.0);
        let peak = nl().vortex_density(DENSITY_ARGMAX).unwrap();
        assert!((peak - DENSITY_MAX).abs() < 1e-15);
        assert!(nl().vortex_density_prime(DENSITY_ARGMAX).unwrap().abs() < 1e-14);
        assert!((nl().vortex_density_prime(-1e-14).unwrap() + 2.0).abs() < 1e-6);
        assert_eq!(nl().vortex_density_prime(0.0).unwrap(), -2.0);
        assert_eq!(nl().vortex_density_prime(5.0).unwrap(), 0.0);
    }

    #[test]
    fn potential_examples() {
        assert_eq!(nl().potential_density(0.0).unwrap(), 0.0);
        assert!((nl().potential_density(-1e3).unwrap() - 0.25).abs() < 1e-15);
        let w = nl().potential_density(DENSITY_ARGMAX).unwrap();
        assert!((w - 4.0 / 81.0).abs() < 1e-15);
    }

    #[test]
    fn non_finite_is_rejected() {
        assert_eq!(nl().f_of(f64::NAN).unwrap_err().to_string(), "non-finite argument NaN");
        assert!(nl().vortex_density(f64::NEG_INFINITY).is_err());
        assert!(nl().vortex_density_prime(f64::INFINITY).is_err());
        assert!(Nonlinearity::new(0.0, 5).is_err());
        assert!(Nonlinearity::new(1e-12, 0).is_err());
    }

    #[test]
    fn asymptote_for_very_negative_arguments() {
        for k in 0..200 {
            let u = -5.0 - k as f64 * 0.25;
            let w = nl().f_of(u).unwrap();
            assert!((w - (u - 1.0)).abs() <= 2.0 * (u - 1.0).exp());
        }
    }
}
