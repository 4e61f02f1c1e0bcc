//! Twice-differentiable reproducing kernels and their analytic derivatives.
//!
//! Derivative conventions, with `k(u, w)`:
//!
//! * [`Kernel::d1`] is `∂k(u, s)/∂u^a` at `u = x`, i.e. the kernel derivative section
//!   `(∂_a k)_x` evaluated at `s`.
//! * [`Kernel::d2`] is the mixed derivative `∂²k(u, w)/∂u^a ∂w^b` at `u = x, w = s`.
//!
//! Variable indices are zero-based.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "lowercase")]
pub enum Kernel {
    /// `exp(-‖x − s‖² / 2γ²)`
    Gaussian { gamma: f64 },
    /// `(c + ⟨x, s⟩)^p`
    Polynomial { degree: u32, offset: f64 },
    /// `⟨x, s⟩`
    Linear,
}

/// Scalar profile of a kernel that depends on its arguments only through
/// `‖x − s‖²` (radial) or `⟨x, s⟩` (dot product).
///
/// For a radial profile the mixed derivative is `A δ_ab + B Δ^a Δ^b` with
/// `Δ = x − s`; for a dot-product profile it is `A δ_ab + B s^a x^b`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) enum Profile {
    Radial,
    Dot,
}

/// Kernel value together with the two coefficients of the mixed derivative.
#[derive(Debug, Clone, Copy)]
pub(crate) struct PairTerms {
    pub value: f64,
    /// Radial: `∂k/∂x^a = first · Δ^a`; dot: `∂k/∂x^a = first · s^a`.
    pub first: f64,
    pub a: f64,
    pub b: f64,
}

impl Kernel {
    pub fn gaussian(gamma: f64) -> Result<Self> {
        let k = Kernel::Gaussian { gamma };
        k.validate()?;
        Ok(k)
    }

    pub fn polynomial(degree: u32, offset: f64) -> Result<Self> {
        let k = Kernel::Polynomial { degree, offset };
        k.validate()?;
        Ok(k)
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            Kernel::Gaussian { gamma } if !(gamma.is_finite() && gamma > 0.0) => Err(
                Error::InvalidKernel(format!("gaussian width must be positive, got {gamma}")),
            ),
            Kernel::Polynomial { degree, .. } if degree < 1 => Err(Error::InvalidKernel(
                "polynomial degree must be at least 1".into(),
            )),
            Kernel::Polynomial { offset, .. } if !(offset.is_finite() && offset >= 0.0) => Err(
                Error::InvalidKernel(format!("polynomial offset must be nonnegative, got {offset}")),
            ),
            _ => Ok(()),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Kernel::Gaussian { .. } => "gaussian",
            Kernel::Polynomial { .. } => "poly",
            Kernel::Linear => "linear",
        }
    }

    pub(crate) fn profile(&self) -> Profile {
        match self {
            Kernel::Gaussian { .. } => Profile::Radial,
            _ => Profile::Dot,
        }
    }

    /// Profile terms for a pair given `r = ‖x − s‖²` (radial) or `u = ⟨x, s⟩` (dot).
    #[inline]
    pub(crate) fn pair_terms(&self, arg: f64) -> PairTerms {
        match *self {
            Kernel::Gaussian { gamma } => {
                let g2 = gamma * gamma;
                let value = (-arg / (2.0 * g2)).exp();
                PairTerms {
                    value,
                    first: -value / g2,
                    a: value / g2,
                    b: -value / (g2 * g2),
                }
            }
            Kernel::Polynomial { degree, offset } => {
                let base = offset + arg;
                let p = degree as i32;
                let value = base.powi(p);
                let first = p as f64 * base.powi(p - 1);
                let b = if degree >= 2 {
                    (p * (p - 1)) as f64 * base.powi(p - 2)
                } else {
                    0.0
                };
                PairTerms {
                    value,
                    first,
                    a: first,
                    b,
                }
            }
            Kernel::Linear => PairTerms {
                value: arg,
                first: 1.0,
                a: 1.0,
                b: 0.0,
            },
        }
    }

    #[inline]
    pub(crate) fn pair_arg(&self, x: &[f64], s: &[f64]) -> f64 {
        match self.profile() {
            Profile::Radial => x.iter().zip(s).map(|(a, b)| (a - b) * (a - b)).sum(),
            Profile::Dot => x.iter().zip(s).map(|(a, b)| a * b).sum(),
        }
    }

    fn check_dims(x: &[f64], s: &[f64]) -> Result<()> {
        if x.is_empty() {
            return Err(Error::DimensionMismatch {
                expected: 1,
                got: 0,
            });
        }
        if x.len() != s.len() {
            return Err(Error::DimensionMismatch {
                expected: x.len(),
                got: s.len(),
            });
        }
        Ok(())
    }

    fn check_index(a: usize, d: usize) -> Result<()> {
        if a >= d {
            return Err(Error::IndexOutOfRange { index: a, dim: d });
        }
        Ok(())
    }

    pub fn eval(&self, x: &[f64], s: &[f64]) -> Result<f64> {
        Self::check_dims(x, s)?;
        Ok(self.eval_unchecked(x, s))
    }

    pub fn d1(&self, a: usize, x: &[f64], s: &[f64]) -> Result<f64> {
        Self::check_dims(x, s)?;
        Self::check_index(a, x.len())?;
        Ok(self.d1_unchecked(a, x, s))
    }

    pub fn d2(&self, a: usize, b: usize, x: &[f64], s: &[f64]) -> Result<f64> {
        Self::check_dims(x, s)?;
        Self::check_index(a, x.len())?;
        Self::check_index(b, x.len())?;
        Ok(self.d2_unchecked(a, b, x, s))
    }

    #[inline]
    pub(crate) fn eval_unchecked(&self, x: &[f64], s: &[f64]) -> f64 {
        self.pair_terms(self.pair_arg(x, s)).value
    }

    #[inline]
    pub(crate) fn d1_unchecked(&self, a: usize, x: &[f64], s: &[f64]) -> f64 {
        let t = self.pair_terms(self.pair_arg(x, s));
        match self.profile() {
            Profile::Radial => t.first * (x[a] - s[a]),
            Profile::Dot => t.first * s[a],
        }
    }

    #[inline]
    pub(crate) fn d2_unchecked(&self, a: usize, b: usize, x: &[f64], s: &[f64]) -> f64 {
        let t = self.pair_terms(self.pair_arg(x, s));
        let diag = if a == b { t.a } else { 0.0 };
        match self.profile() {
            Profile::Radial => diag + t.b * ((x[a] - s[a]) * (x[b] - s[b])),
            Profile::Dot => diag + t.b * (s[a] * x[b]),
        }
    }
}

impl std::fmt::Display for Kernel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Kernel::Gaussian { gamma } => write!(f, "gaussian(gamma={gamma})"),
            Kernel::Polynomial { degree, offset } => write!(f, "poly(p={degree},c={offset})"),
            Kernel::Linear => write!(f, "linear"),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn families() -> Vec<Kernel> {
        vec![
            Kernel::Gaussian { gamma: 0.8 },
            Kernel::Polynomial {
                degree: 3,
                offset: 1.0,
            },
            Kernel::Polynomial {
                degree: 1,
                offset: 0.5,
            },
            Kernel::Linear,
        ]
    }

    #[test]
    fn eval_examples() {
        let g = Kernel::Gaussian { gamma: 1.0 };
        assert_eq!(g.eval(&[0.3, -1.0], &[0.3, -1.0]).unwrap(), 1.0);
        assert_relative_eq!(g.eval(&[0.0], &[1.0]).unwrap(), (-0.5f64).exp(), epsilon = 1e-15);
        assert_relative_eq!(g.eval(&[0.0], &[1.0]).unwrap(), 0.60653, epsilon = 1e-5);
        let p = Kernel::Polynomial {
            degree: 2,
            offset: 1.0,
        };
        assert_eq!(p.eval(&[1.0, 0.0], &[1.0, 1.0]).unwrap(), 4.0);
    }

    #[test]
    fn d1_examples() {
        let g = Kernel::Gaussian { gamma: 1.7 };
        assert_eq!(g.d1(0, &[0.4, 2.0], &[0.4, 2.0]).unwrap(), 0.0);
        let g1 = Kernel::Gaussian { gamma: 1.0 };
        assert_relative_eq!(g1.d1(0, &[0.0], &[1.0]).unwrap(), (-0.5f64).exp(), epsilon = 1e-15);
        assert_eq!(Kernel::Linear.d1(1, &[3.0, 4.0], &[5.0, 6.0]).unwrap(), 6.0);
    }

    #[test]
    fn d2_examples() {
        let g = Kernel::Gaussian { gamma: 1.0 };
        assert_eq!(g.d2(0, 0, &[0.2, 0.1], &[0.2, 0.1]).unwrap(), 1.0);
        assert_eq!(g.d2(0, 1, &[0.2, 0.1], &[0.2, 0.1]).unwrap(), 0.0);
        assert!(g.d2(0, 0, &[0.0], &[1.0]).unwrap().abs() < 1e-16);
        let g2 = Kernel::Gaussian { gamma: 2.0 };
        assert_relative_eq!(g2.d2(1, 1, &[0.0, 3.0], &[0.0, 3.0]).unwrap(), 0.25);
    }

    #[test]
    fn errors() {
        let g = Kernel::Gaussian { gamma: 1.0 };
        assert!(matches!(
            g.eval(&[0.0, 1.0], &[0.0]),
            Err(Error::DimensionMismatch { .. })
        ));
        assert!(matches!(
            g.d1(2, &[0.0, 1.0], &[0.0, 1.0]),
            Err(Error::IndexOutOfRange { .. })
        ));
        assert!(matches!(
            g.d2(0, 5, &[0.0, 1.0], &[0.0, 1.0]),
            Err(Error::IndexOutOfRange { .. })
        ));
        assert!(Kernel::gaussian(0.0).is_err());
        assert!(Kernel::gaussian(-1.0).is_err());
        assert!(Kernel::polynomial(0, 1.0).is_err());
    }

    #[test]
    fn symmetry_of_eval() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for k in families() {
            for _ in 0..10_000 {
                let x: Vec<f64> = (0..3).map(|_| rng.gen_range(-2.0..2.0)).collect();
                let s: Vec<f64> = (0..3).map(|_| rng.gen_range(-2.0..2.0)).collect();
                assert_eq!(k.eval(&x, &s).unwrap(), k.eval(&s, &x).unwrap());
            }
        }
    }

    #[test]
    fn mixed_partial_symmetry_across_arguments() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for k in families() {
            for _ in 0..500 {
                let x: Vec<f64> = (0..4).map(|_| rng.gen_range(-1.5..1.5)).collect();
                let s: Vec<f64> = (0..4).map(|_| rng.gen_range(-1.5..1.5)).collect();
                let a = rng.gen_range(0..4);
                let b = rng.gen_range(0..4);
                let lhs = k.d2(a, b, &x, &s).unwrap();
                let rhs = k.d2(b, a, &s, &x).unwrap();
                assert_relative_eq!(lhs, rhs, epsilon = 1e-13, max_relative = 1e-12);
            }
        }
    }

    #[test]
    fn gaussian_matches_closed_form_derivatives() {
        // direct transcription of the Gaussian formulas, independent of the profile code
        let gamma = 1.3f64;
        let k = Kernel::Gaussian { gamma };
        let x = [0.3, -0.7, 1.1];
        let s = [-0.2, 0.4, 0.9];
        let r: f64 = x.iter().zip(&s).map(|(a, b)| (a - b) * (a - b)).sum();
        let e = (-r / (2.0 * gamma * gamma)).exp();
        let g2 = gamma * gamma;
        for a in 0..3 {
            let want = e * (-(x[a] - s[a]) / g2);
            assert_relative_eq!(k.d1(a, &x, &s).unwrap(), want, max_relative = 1e-14);
            for b in 0..3 {
                let want = if a == b {
                    -e * ((x[a] - s[a]).powi(2) / (g2 * g2) - 1.0 / g2)
                } else {
                    -e * ((x[a] - s[a]) / g2) * ((x[b] - s[b]) / g2)
                };
                assert_relative_eq!(k.d2(a, b, &x, &s).unwrap(), want, max_relative = 1e-13);
            }
        }
    }
}
