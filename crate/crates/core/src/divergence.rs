//! Cressie-Read divergence generators, divergence pseudo-distances, their
//! conjugates, and the infimum over rescaled masses.
//!
//! The generator of index `gamma` is
//!
//! ```text
//! phi_gamma(x) = (x^gamma - gamma x + gamma - 1) / (gamma (gamma - 1))
//! ```
//!
//! with the limits `phi_0(x) = -log x + x - 1` and
//! `phi_1(x) = x log x - x + 1`. Outside its natural domain a generator is
//! `+inf`; `phi_2(x) = (x - 1)^2 / 2` is finite on the whole real line.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::measure::ProbVector;
use crate::optimize::bracketed_min;

/// Distance from 0 or 1 below which the limit generators are used.
pub const GAMMA_DISPATCH_TOL: f64 = 1e-9;

/// Search range for [`mass_infimum_numeric`].
pub const MASS_SEARCH_RANGE: (f64, f64) = (1e-6, 1e3);

/// Index of a Cressie-Read divergence.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(transparent)]
pub struct GammaIndex(f64);

impl GammaIndex {
    pub const fn new(gamma: f64) -> Self {
        Self(gamma)
    }

    pub const fn value(self) -> f64 {
        self.0
    }

    /// The index of the conjugate generator `x phi(1/x)`.
    pub fn conjugate(self) -> Self {
        Self(1.0 - self.0)
    }

    /// Whether some weight law `W` with `EW = VarW = 1` has a Chernoff
    /// function equal to `phi_gamma`.
    pub fn is_weight_representable(self) -> bool {
        self.0 <= 1.0 || self.0 >= 2.0
    }

    pub fn generator(self) -> Generator {
        let g = self.0;
        if g.abs() < GAMMA_DISPATCH_TOL {
            Generator::Likelihood
        } else if (g - 1.0).abs() < GAMMA_DISPATCH_TOL {
            Generator::KullbackLeibler
        } else if (g - 2.0).abs() < GAMMA_DISPATCH_TOL {
            Generator::Pearson
        } else {
            Generator::Power(g)
        }
    }

    /// Which closed form [`mass_infimum`] uses for this index.
    pub fn mass_infimum_branch(self) -> MassInfimumBranch {
        match self.generator() {
            Generator::Likelihood => MassInfimumBranch::Likelihood,
            Generator::KullbackLeibler => MassInfimumBranch::KullbackLeibler,
            _ if self.0 > 0.0 && self.0 < 1.0 => MassInfimumBranch::Interior,
            _ => MassInfimumBranch::Exterior,
        }
    }
}

impl From<f64> for GammaIndex {
    fn from(g: f64) -> Self {
        Self(g)
    }
}

impl std::fmt::Display for GammaIndex {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Evaluation route for a generator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Generator {
    /// `gamma = 0`: `-log x + x - 1`.
    Likelihood,
    /// `gamma = 1`: `x log x - x + 1`.
    KullbackLeibler,
    /// `gamma = 2`: `(x - 1)^2 / 2` on the real line.
    Pearson,
    Power(f64),
}

/// Closed-form families for the infimum over masses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MassInfimumBranch {
    /// `0 < gamma < 1`.
    Interior,
    /// `gamma < 0` or `gamma > 1`.
    Exterior,
    /// `gamma = 1`.
    KullbackLeibler,
    /// `gamma = 0`.
    Likelihood,
}

/// The generator `phi_gamma(x)`, `+inf` outside its domain.
pub fn phi(gamma: impl Into<GammaIndex>, x: f64) -> f64 {
    match gamma.into().generator() {
        Generator::Likelihood => {
            if x > 0.0 {
                -x.ln() + x - 1.0
            } else {
                f64::INFINITY
            }
        }
        Generator::KullbackLeibler => {
            if x > 0.0 {
                x * x.ln() - x + 1.0
            } else if x == 0.0 {
                1.0
            } else {
                f64::INFINITY
            }
        }
        Generator::Pearson => 0.5 * (x - 1.0) * (x - 1.0),
        Generator::Power(g) => {
            if x < 0.0 {
                f64::INFINITY
            } else {
                (x.powf(g) - g * x + g - 1.0) / (g * (g - 1.0))
            }
        }
    }
}

/// Derivative of the generator; `+inf`/`-inf` at the domain edge.
pub fn phi_prime(gamma: impl Into<GammaIndex>, x: f64) -> f64 {
    match gamma.into().generator() {
        Generator::Likelihood => {
            if x > 0.0 {
                1.0 - 1.0 / x
            } else {
                f64::NEG_INFINITY
            }
        }
        Generator::KullbackLeibler => {
            if x > 0.0 {
                x.ln()
            } else {
                f64::NEG_INFINITY
            }
        }
        Generator::Pearson => x - 1.0,
        Generator::Power(g) => {
            if x > 0.0 {
                (x.powf(g - 1.0) - 1.0) / (g - 1.0)
            } else if g < 1.0 {
                f64::NEG_INFINITY
            } else {
                -1.0 / (g - 1.0)
            }
        }
    }
}

/// The `x >= 0` (any real `x` when `gamma = 2`) solving `phi'(x) = slope`;
/// `0` when the slope lies below the derivative's range and `+inf` above it.
pub fn phi_prime_inverse(gamma: impl Into<GammaIndex>, slope: f64) -> f64 {
    match gamma.into().generator() {
        Generator::Likelihood => {
            if slope < 1.0 {
                1.0 / (1.0 - slope)
            } else {
                f64::INFINITY
            }
        }
        Generator::KullbackLeibler => slope.exp(),
        Generator::Pearson => 1.0 + slope,
        Generator::Power(g) => {
            let base = 1.0 + (g - 1.0) * slope;
            if base <= 0.0 {
                if g < 1.0 {
                    f64::INFINITY
                } else {
                    0.0
                }
            } else {
                base.powf(1.0 / (g - 1.0))
            }
        }
    }
}

/// Index of the conjugate generator: `1 - gamma`.
pub fn conjugate_index(gamma: impl Into<GammaIndex>) -> GammaIndex {
    gamma.into().conjugate()
}

/// The conjugate generator `x phi_gamma(1/x)`, extended to `x = 0` by its
/// limit and `+inf` for `x < 0`.
pub fn conjugate_phi(gamma: impl Into<GammaIndex>, x: f64) -> f64 {
    let gamma = gamma.into();
    if x > 0.0 {
        x * phi(gamma, 1.0 / x)
    } else if x == 0.0 {
        match gamma.generator() {
            Generator::Likelihood => 1.0,
            Generator::Power(g) if g < 1.0 => 1.0 / (1.0 - g),
            _ => f64::INFINITY,
        }
    } else {
        f64::INFINITY
    }
}

/// `sum_k p_k phi(q_k / p_k)` without validation; `p` must be positive.
pub(crate) fn divergence_raw(gamma: GammaIndex, q: &[f64], p: &[f64]) -> f64 {
    let mut total = 0.0;
    for (&qk, &pk) in q.iter().zip(p) {
        let term = pk * phi(gamma, qk / pk);
        if term == f64::INFINITY {
            return f64::INFINITY;
        }
        total += term;
    }
    total
}

fn check_len(expected: usize, actual: usize) -> Result<()> {
    if expected != actual {
        return Err(Error::LengthMismatch { expected, actual });
    }
    Ok(())
}

/// Divergence pseudo-distance `phi_gamma(Q, P) = sum_k p_k phi(q_k / p_k)`.
///
/// `q` may be any real vector (signed or with mass other than one); `p` must
/// be strictly positive.
pub fn divergence(gamma: impl Into<GammaIndex>, q: &[f64], p: &ProbVector) -> Result<f64> {
    check_len(p.len(), q.len())?;
    p.require_strictly_positive()?;
    Ok(divergence_raw(gamma.into(), q, p.entries()))
}

/// Conjugate divergence `sum_k q_k phi~(p_k / q_k)`, equal to
/// `divergence(gamma, Q, P)` whenever both are finite. `q` must be strictly
/// positive.
pub fn conjugate_divergence(
    gamma: impl Into<GammaIndex>,
    p: &ProbVector,
    q: &ProbVector,
) -> Result<f64> {
    check_len(q.len(), p.len())?;
    q.require_strictly_positive()?;
    let gamma = gamma.into();
    let mut total = 0.0;
    for (&pk, &qk) in p.entries().iter().zip(q.entries()) {
        let term = qk * conjugate_phi(gamma, pk / qk);
        if term == f64::INFINITY {
            return Ok(f64::INFINITY);
        }
        total += term;
    }
    Ok(total)
}

/// Maps a divergence value `D = phi_gamma(Q, P)` to
/// `inf_{m > 0} phi_gamma(mQ, P)`.
///
/// The value is monotone increasing in `D`, so the two share minimizers over
/// any set of `Q`. With `S = 1 + gamma (gamma - 1) D` the minimizing mass is
/// `S^{-1/(gamma-1)}`, giving `(1 - S^{-1/(gamma-1)}) / gamma` for every
/// `gamma` other than 0 and 1; the limits are `D` at `gamma = 0` and
/// `1 - exp(-D)` at `gamma = 1`.
pub fn mass_infimum_from_divergence(gamma: impl Into<GammaIndex>, d: f64) -> Result<f64> {
    let gamma = gamma.into();
    if d == f64::INFINITY {
        return Ok(f64::INFINITY);
    }
    match gamma.generator() {
        Generator::Likelihood => Ok(d),
        Generator::KullbackLeibler => Ok(-(-d).exp_m1()),
        Generator::Pearson | Generator::Power(_) => {
            let g = gamma.value();
            let a = g * (g - 1.0) * d;
            if 1.0 + a <= 0.0 {
                return Err(Error::OutOfDomain(1.0 + a));
            }
            Ok(-(-a.ln_1p() / (g - 1.0)).exp_m1() / g)
        }
    }
}

/// `inf_{m > 0} phi_gamma(mQ, P)` in closed form; both measures strictly
/// positive.
pub fn mass_infimum(gamma: impl Into<GammaIndex>, q: &ProbVector, p: &ProbVector) -> Result<f64> {
    let gamma = gamma.into();
    q.require_strictly_positive()?;
    let d = divergence(gamma, q.entries(), p)?;
    mass_infimum_from_divergence(gamma, d)
}

/// Brute-force counterpart of [`mass_infimum`]: minimizes
/// `m -> phi_gamma(mQ, P)` over [`MASS_SEARCH_RANGE`].
pub fn mass_infimum_numeric(
    gamma: impl Into<GammaIndex>,
    q: &ProbVector,
    p: &ProbVector,
) -> Result<f64> {
    let gamma = gamma.into();
    check_len(p.len(), q.len())?;
    p.require_strictly_positive()?;
    q.require_strictly_positive()?;
    let objective = |m: f64| {
        let scaled: Vec<f64> = q.entries().iter().map(|&qk| m * qk).collect();
        divergence_raw(gamma, &scaled, p.entries())
    };
    let (lo, hi) = MASS_SEARCH_RANGE;
    let (_, value) = bracketed_min(objective, lo, hi, 401, true, 1e-10)?;
    Ok(value)
}
