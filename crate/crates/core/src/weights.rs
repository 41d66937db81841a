//! Weight laws matched to Cressie-Read divergences.
//!
//! A weight `W` with `EW = VarW = 1` induces the divergence generator
//! `phi^W = M*`, the Legendre transform of its cumulant generating function
//! `M(t) = log E exp(tW)`. The law realizing `phi_gamma` is:
//!
//! | gamma       | law                                                        |
//! |-------------|------------------------------------------------------------|
//! | `< 0`       | positive stable of index `-gamma/(1-gamma)`, tilted by `exp(-y/(1-gamma))` |
//! | `-1`        | inverse Gaussian `IG(1, 1)` (special case of the above)    |
//! | `0`         | standard exponential                                       |
//! | `(0, 1)`    | compound Poisson(`1/gamma`) sum of Gamma jumps (shape `gamma/(1-gamma)`, rate `1/(1-gamma)`) |
//! | `1`         | Poisson(1)                                                 |
//! | `2`         | normal with mean 1 and variance 1                          |
//!
//! Other indices (`1 < gamma < 2`, `gamma > 2`) are rejected.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, Exp1, Gamma, InverseGaussian, Normal, Poisson};
use serde::Serialize;

use crate::divergence::{GammaIndex, Generator};
use crate::error::{Error, Result};
use crate::optimize::golden_min;
use crate::rng;

/// Stream tag used by [`sample_weights`].
const SAMPLE_TAG: u64 = 0x5745_4947_4854;

/// Parameters of the weight law for one divergence index.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum WeightLaw {
    Exponential,
    Poisson,
    Normal,
    InverseGaussian,
    /// `W = sum_{j <= N} G_j`, `N ~ Poisson(jump_rate)`,
    /// `G_j ~ Gamma(jump_shape, scale = jump_scale)`.
    CompoundPoissonGamma {
        jump_rate: f64,
        jump_shape: f64,
        jump_scale: f64,
    },
    /// Positive stable `Z` with Laplace transform `exp(-(scale s)^index)`,
    /// kept with probability `exp(-tilt Z)`.
    TiltedStable { index: f64, scale: f64, tilt: f64 },
}

/// A divergence index paired with the law of its matched weight.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct WeightLawSpec {
    gamma: GammaIndex,
    law: WeightLaw,
}

impl WeightLawSpec {
    pub fn new(gamma: impl Into<GammaIndex>) -> Result<Self> {
        let gamma = gamma.into();
        let g = gamma.value();
        if !g.is_finite() {
            return Err(Error::UnsupportedGamma(g));
        }
        let law = match gamma.generator() {
            Generator::Likelihood => WeightLaw::Exponential,
            Generator::KullbackLeibler => WeightLaw::Poisson,
            Generator::Pearson => WeightLaw::Normal,
            Generator::Power(g) if (g + 1.0).abs() < 1e-12 => WeightLaw::InverseGaussian,
            Generator::Power(g) if g < 0.0 => return Self::tilted_stable(gamma),
            Generator::Power(g) if g < 1.0 => WeightLaw::CompoundPoissonGamma {
                jump_rate: 1.0 / g,
                jump_shape: g / (1.0 - g),
                jump_scale: 1.0 - g,
            },
            Generator::Power(g) => return Err(Error::UnsupportedGamma(g)),
        };
        Ok(Self { gamma, law })
    }

    /// The tilted positive stable construction, available for every
    /// `gamma < 0` (including `-1`, where it coincides in law with
    /// `IG(1, 1)`).
    pub fn tilted_stable(gamma: impl Into<GammaIndex>) -> Result<Self> {
        let gamma = gamma.into();
        let g = gamma.value();
        if g.is_nan() || g >= 0.0 || g.abs() < crate::divergence::GAMMA_DISPATCH_TOL {
            return Err(Error::UnsupportedGamma(g));
        }
        // Laplace exponent of the untilted variate: c s^a with
        // a = -g/(1-g) and c = (1-g)^a / |g|, so that the tilted law has
        // M(t) = ((1 - (1-g)t)^a - 1) / g.
        let index = -g / (1.0 - g);
        let c = (1.0 - g).powf(index) / g.abs();
        Ok(Self {
            gamma,
            law: WeightLaw::TiltedStable {
                index,
                scale: c.powf(1.0 / index),
                tilt: 1.0 / (1.0 - g),
            },
        })
    }

    pub fn gamma(&self) -> GammaIndex {
        self.gamma
    }

    pub fn law(&self) -> WeightLaw {
        self.law
    }

    /// Whether draws can be negative.
    pub fn is_signed(&self) -> bool {
        matches!(self.law, WeightLaw::Normal)
    }

    pub fn sampler(&self) -> WeightSampler {
        let kind = match self.law {
            WeightLaw::Exponential => SamplerKind::Exponential,
            WeightLaw::Poisson => SamplerKind::Poisson(Poisson::new(1.0).expect("valid rate")),
            WeightLaw::Normal => SamplerKind::Normal(Normal::new(1.0, 1.0).expect("valid sd")),
            WeightLaw::InverseGaussian => SamplerKind::InverseGaussian(
                InverseGaussian::new(1.0, 1.0).expect("valid parameters"),
            ),
            WeightLaw::CompoundPoissonGamma {
                jump_rate,
                jump_shape,
                jump_scale,
            } => SamplerKind::CompoundPoissonGamma {
                count: Poisson::new(jump_rate).expect("valid rate"),
                jump_shape,
                jump_scale,
            },
            WeightLaw::TiltedStable { index, scale, tilt } => {
                SamplerKind::TiltedStable { index, scale, tilt }
            }
        };
        WeightSampler { kind }
    }
}

#[derive(Debug, Clone, Copy)]
enum SamplerKind {
    Exponential,
    Poisson(Poisson<f64>),
    Normal(Normal<f64>),
    InverseGaussian(InverseGaussian<f64>),
    CompoundPoissonGamma {
        count: Poisson<f64>,
        jump_shape: f64,
        jump_scale: f64,
    },
    TiltedStable {
        index: f64,
        scale: f64,
        tilt: f64,
    },
}

/// Draws single weights from a [`WeightLawSpec`].
#[derive(Debug, Clone, Copy)]
pub struct WeightSampler {
    kind: SamplerKind,
}

/// Kanter's representation of a positive stable variate with Laplace
/// transform `exp(-s^index)`, `0 < index < 1`.
fn positive_stable<R: Rng + ?Sized>(index: f64, rng: &mut R) -> f64 {
    let u = PI * rng.random::<f64>();
    let e: f64 = Exp1.sample(rng);
    let a = index;
    let zolotarev = (a * u).sin().powf(a / (1.0 - a)) * ((1.0 - a) * u).sin()
        / u.sin().powf(1.0 / (1.0 - a));
    (zolotarev / e).powf((1.0 - a) / a)
}

impl Distribution<f64> for WeightSampler {
    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match &self.kind {
            SamplerKind::Exponential => Exp1.sample(rng),
            SamplerKind::Poisson(p) => p.sample(rng),
            SamplerKind::Normal(n) => n.sample(rng),
            SamplerKind::InverseGaussian(ig) => ig.sample(rng),
            SamplerKind::CompoundPoissonGamma {
                count,
                jump_shape,
                jump_scale,
            } => {
                let jumps = count.sample(rng);
                if jumps == 0.0 {
                    0.0
                } else {
                    // A sum of N iid Gamma(shape, scale) jumps is
                    // Gamma(N shape, scale).
                    Gamma::new(jumps * jump_shape, *jump_scale)
                        .expect("positive shape")
                        .sample(rng)
                }
            }
            SamplerKind::TiltedStable { index, scale, tilt } => loop {
                let z = scale * positive_stable(*index, rng);
                if rng.random::<f64>() < (-tilt * z).exp() {
                    break z;
                }
            },
        }
    }
}

/// `n >= 1` i.i.d. weights.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightVector(Vec<f64>);

impl WeightVector {
    pub fn new(w: Vec<f64>) -> Result<Self> {
        if w.is_empty() {
            return Err(Error::InvalidInput("a weight vector needs n >= 1 entries".into()));
        }
        if w.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidInput("weights must be finite".into()));
        }
        Ok(Self(w))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

/// `Z_i = W_i / sum_j W_j`.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedWeights(Vec<f64>);

impl NormalizedWeights {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

/// Draws `n` weights for `spec`; identical `(spec, n, seed)` give identical
/// vectors.
pub fn sample_weights(spec: &WeightLawSpec, n: usize, seed: u64) -> Result<WeightVector> {
    if n == 0 {
        return Err(Error::InvalidInput("n must be at least 1".into()));
    }
    let sampler = spec.sampler();
    let mut rng = rng::stream(seed, &[SAMPLE_TAG]);
    WeightVector::new((0..n).map(|_| sampler.sample(&mut rng)).collect())
}

/// Normalizes weights; `None` when the total is zero (`|sum| <= 1e-12 n`).
///
/// The last entry absorbs the rounding residual so the result sums to one.
pub fn normalize_weights(w: &WeightVector) -> Option<NormalizedWeights> {
    let n = w.len();
    let total: f64 = w.0.iter().sum();
    if total.abs() <= 1e-12 * n as f64 {
        return None;
    }
    let mut z: Vec<f64> = w.0.iter().map(|x| x / total).collect();
    crate::measure::close_unit_mass(&mut z);
    Some(NormalizedWeights(z))
}

/// Cumulant generating function of the weight matched to `gamma`: the convex
/// conjugate `sup_x { tx - phi_gamma(x) }` in closed form, `+inf` outside its
/// domain.
pub fn cgf(gamma: impl Into<GammaIndex>, t: f64) -> f64 {
    let gamma = gamma.into();
    match gamma.generator() {
        Generator::Likelihood => {
            if t < 1.0 {
                -(-t).ln_1p()
            } else {
                f64::INFINITY
            }
        }
        Generator::KullbackLeibler => t.exp_m1(),
        Generator::Pearson => t + 0.5 * t * t,
        Generator::Power(g) if g < 1.0 => {
            let u = 1.0 - (1.0 - g) * t;
            let finite_at_edge = g < 0.0;
            if u > 0.0 || (u == 0.0 && finite_at_edge) {
                // ((u)^{-g/(1-g)} - 1) / g
                if u == 0.0 {
                    -1.0 / g
                } else {
                    ((-g / (1.0 - g)) * u.ln()).exp_m1() / g
                }
            } else {
                f64::INFINITY
            }
        }
        Generator::Power(g) => {
            // gamma > 1: phi is +inf on x < 0, so the supremum sits at x = 0
            // once the stationary point leaves the domain.
            let u = 1.0 + (g - 1.0) * t;
            if u > 0.0 {
                ((g / (g - 1.0)) * u.ln()).exp_m1() / g
            } else {
                -1.0 / g
            }
        }
    }
}

/// Upper end of the domain of [`cgf`] (`+inf` when unbounded).
pub fn cgf_domain_upper(gamma: impl Into<GammaIndex>) -> f64 {
    match gamma.into().generator() {
        Generator::Likelihood => 1.0,
        Generator::Power(g) if g < 1.0 => 1.0 / (1.0 - g),
        _ => f64::INFINITY,
    }
}

fn in_generator_domain(gamma: GammaIndex, x: f64) -> bool {
    match gamma.generator() {
        Generator::Pearson => x.is_finite(),
        Generator::Likelihood => x > 0.0,
        Generator::Power(g) if g < 0.0 => x > 0.0,
        _ => x >= 0.0,
    }
}

/// Numeric Legendre transform `sup_t { tx - M(t) }` of [`cgf`].
///
/// Independent of the closed-form generator: it only evaluates `cgf`. The
/// search interval is widened geometrically until the concave objective is
/// bracketed.
pub fn chernoff_numeric(gamma: impl Into<GammaIndex>, x: f64) -> Result<f64> {
    let gamma = gamma.into();
    if !in_generator_domain(gamma, x) {
        return Err(Error::InvalidInput(format!(
            "x = {x} lies outside the domain of phi_{gamma}"
        )));
    }
    let h = |t: f64| t * x - cgf(gamma, t);
    let t_max = cgf_domain_upper(gamma);
    const LIMIT: f64 = 1e12;

    let mut lo = -1.0;
    while h(lo) > h(0.5 * lo) && lo > -LIMIT {
        lo *= 2.0;
    }
    let hi = if t_max.is_finite() {
        t_max
    } else {
        let mut hi = 1.0;
        while h(hi) > h(0.5 * hi) && hi < LIMIT {
            hi *= 2.0;
        }
        hi
    };
    let (t_star, neg) = golden_min(
        |t| {
            let v = h(t);
            if v.is_nan() {
                f64::INFINITY
            } else {
                -v
            }
        },
        lo,
        hi,
        1e-15,
    );
    let value = (-neg).max(h(lo)).max(h(t_star));
    if !value.is_finite() {
        return Err(Error::NoBracket { lo, hi });
    }
    Ok(value)
}

/// One comparison made by [`certify_sampler`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CertificationCheck {
    pub statistic: String,
    pub estimate: f64,
    pub expected: f64,
    pub stderr: f64,
    pub pass: bool,
}

/// Default `t` points for the log-MGF comparison: two negative points and two
/// positive points inside the range where `exp(tW)` has finite variance.
pub fn default_mgf_points(gamma: impl Into<GammaIndex>) -> [f64; 4] {
    let finite_variance = 0.5 * cgf_domain_upper(gamma);
    [
        -1.0,
        -0.5,
        (0.25 * finite_variance).min(0.25),
        (0.5 * finite_variance).min(0.5),
    ]
}

/// Checks `n` draws against the moments `EW = VarW = 1` and the closed-form
/// cumulant generating function, each within `k_sigma` standard errors.
pub fn certify_sampler(
    spec: &WeightLawSpec,
    n: usize,
    seed: u64,
    t_points: &[f64],
    k_sigma: f64,
) -> Result<Vec<CertificationCheck>> {
    let w = sample_weights(spec, n, seed)?;
    let w = w.as_slice();
    let nf = n as f64;
    let mut checks = Vec::with_capacity(2 + t_points.len());
    let mut push = |statistic: String, estimate: f64, expected: f64, stderr: f64| {
        let pass = (estimate - expected).abs() <= k_sigma * stderr;
        checks.push(CertificationCheck {
            statistic,
            estimate,
            expected,
            stderr,
            pass,
        });
    };

    let mean = w.iter().sum::<f64>() / nf;
    push("mean".into(), mean, 1.0, 1.0 / nf.sqrt());

    let var = w.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (nf - 1.0);
    let fourth = w.iter().map(|x| (x - mean).powi(4)).sum::<f64>() / nf;
    let var_se = ((fourth - var * var).max(0.0) / nf).sqrt();
    push("variance".into(), var, 1.0, var_se);

    for &t in t_points {
        let e: Vec<f64> = w.iter().map(|x| (t * x).exp()).collect();
        let m = e.iter().sum::<f64>() / nf;
        let sd = (e.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (nf - 1.0)).sqrt();
        push(format!("log_mgf(t={t})"), m.ln(), cgf(spec.gamma(), t), sd / (nf.sqrt() * m));
    }
    Ok(checks)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::divergence::phi;

    const SUPPORTED: [f64; 8] = [-1.0, -0.5, 0.0, 0.25, 0.5, 0.75, 1.0, 2.0];

    #[test]
    fn cgf_examples() {
        assert_eq!(cgf(1.0, 0.0), 0.0);
        assert!((cgf(0.0, 0.5) - 2f64.ln()).abs() < 1e-15);
        assert!((cgf(0.5, 1.0) - 2.0).abs() < 1e-14);
        assert_eq!(cgf(0.0, 1.0), f64::INFINITY);
        assert_eq!(cgf(0.5, 2.0), f64::INFINITY);
        assert!((cgf(-1.0, 0.5) - 1.0).abs() < 1e-15);
        assert_eq!(cgf(-1.0, 0.6), f64::INFINITY);
    }

    #[test]
    fn cgf_has_unit_mean_and_variance() {
        let h = 1e-4;
        for g in SUPPORTED {
            let d1 = (cgf(g, h) - cgf(g, -h)) / (2.0 * h);
            let d2 = (cgf(g, h) - 2.0 * cgf(g, 0.0) + cgf(g, -h)) / (h * h);
            assert!(cgf(g, 0.0).abs() < 1e-15);
            assert!((d1 - 1.0).abs() < 1e-6, "gamma {g}: M'(0) = {d1}");
            assert!((d2 - 1.0).abs() < 1e-5, "gamma {g}: M''(0) = {d2}");
        }
    }

    #[test]
    fn cgf_inverse_gaussian_closed_form() {
        for t in [-2.0, -0.3, 0.1, 0.4] {
            assert!((cgf(-1.0, t) - (1.0 - (1.0f64 - 2.0 * t).sqrt())).abs() < 1e-14);
        }
    }

    #[test]
    fn chernoff_examples() {
        assert!(chernoff_numeric(2.0, 1.0).unwrap().abs() < 1e-12);
        assert!((chernoff_numeric(0.0, 2.0).unwrap() - (1.0 - 2f64.ln())).abs() < 1e-9);
        assert!((chernoff_numeric(0.5, 4.0).unwrap() - 2.0).abs() < 1e-9);
        assert!(chernoff_numeric(0.0, -1.0).is_err());
    }

    #[test]
    fn chernoff_recovers_generator() {
        for g in SUPPORTED {
            for i in 0..50 {
                let x = 0.05 + 0.1 * i as f64;
                let num = chernoff_numeric(g, x).unwrap();
                let exact = phi(g, x);
                assert!((num - exact).abs() < 1e-6, "gamma {g}, x {x}: {num} vs {exact}");
            }
        }
        for x in [-3.0, -0.5] {
            assert!((chernoff_numeric(2.0, x).unwrap() - phi(2.0, x)).abs() < 1e-6);
        }
    }

    #[test]
    fn unsupported_indices_are_rejected() {
        for g in [1.5, 3.0, f64::NAN] {
            assert!(WeightLawSpec::new(g).is_err());
        }
        assert!(WeightLawSpec::tilted_stable(0.5).is_err());
    }

    #[test]
    fn law_selection() {
        assert_eq!(WeightLawSpec::new(0.0).unwrap().law(), WeightLaw::Exponential);
        assert_eq!(WeightLawSpec::new(1.0).unwrap().law(), WeightLaw::Poisson);
        assert_eq!(WeightLawSpec::new(2.0).unwrap().law(), WeightLaw::Normal);
        assert_eq!(WeightLawSpec::new(-1.0).unwrap().law(), WeightLaw::InverseGaussian);
        match WeightLawSpec::new(0.5).unwrap().law() {
            WeightLaw::CompoundPoissonGamma { jump_rate, jump_shape, jump_scale } => {
                assert_eq!(jump_rate, 2.0);
                // jump mean gamma, jump variance gamma (1 - gamma)
                assert!((jump_shape * jump_scale - 0.5).abs() < 1e-15);
                assert!((jump_shape * jump_scale * jump_scale - 0.25).abs() < 1e-15);
            }
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(
            WeightLawSpec::new(-0.5).unwrap().law(),
            WeightLaw::TiltedStable { .. }
        ));
    }

    #[test]
    fn sampling_is_deterministic() {
        for g in SUPPORTED {
            let spec = WeightLawSpec::new(g).unwrap();
            assert_eq!(sample_weights(&spec, 100, 9).unwrap(), sample_weights(&spec, 100, 9).unwrap());
            assert_ne!(sample_weights(&spec, 100, 9).unwrap(), sample_weights(&spec, 100, 10).unwrap());
        }
    }

    #[test]
    fn poisson_weights_are_integers() {
        let w = sample_weights(&WeightLawSpec::new(1.0).unwrap(), 5, 3).unwrap();
        assert!(w.as_slice().iter().all(|x| x.fract() == 0.0 && *x >= 0.0));
    }

    #[test]
    fn weight_signs() {
        for g in [-1.0, -0.5, 0.0, 0.25, 0.5, 0.75, 1.0] {
            let w = sample_weights(&WeightLawSpec::new(g).unwrap(), 20_000, 1).unwrap();
            assert!(w.as_slice().iter().all(|&x| x >= 0.0), "gamma {g}");
        }
        let w = sample_weights(&WeightLawSpec::new(2.0).unwrap(), 20_000, 1).unwrap();
        assert!(w.as_slice().iter().any(|&x| x < 0.0));
    }

    #[test]
    fn normalize_examples() {
        let z = normalize_weights(&WeightVector::new(vec![1.0; 4]).unwrap()).unwrap();
        assert_eq!(z.as_slice(), &[0.25; 4]);
        let z = normalize_weights(&WeightVector::new(vec![2.0, 0.0, 2.0]).unwrap()).unwrap();
        assert_eq!(z.as_slice(), &[0.5, 0.0, 0.5]);
        assert!(normalize_weights(&WeightVector::new(vec![1.0, -1.0]).unwrap()).is_none());
        assert!(WeightVector::new(vec![]).is_err());
    }

    #[test]
    fn normalized_weights_sum_to_one() {
        for g in [0.0, 0.5, 2.0] {
            let w = sample_weights(&WeightLawSpec::new(g).unwrap(), 1000, 4).unwrap();
            let z = normalize_weights(&w).unwrap();
            assert_eq!(z.as_slice().iter().sum::<f64>(), 1.0);
            let residual = z.as_slice()[999] - w.as_slice()[999] / w.as_slice().iter().sum::<f64>();
            assert!(residual.abs() <= 1e-12);
        }
    }

    #[test]
    fn stable_route_matches_inverse_gaussian_moments() {
        let spec = WeightLawSpec::tilted_stable(-1.0).unwrap();
        let checks = certify_sampler(&spec, 200_000, 11, &default_mgf_points(-1.0), 4.0).unwrap();
        for c in &checks {
            assert!(c.pass, "{c:?}");
        }
    }

    #[test]
    fn moderate_sample_certification() {
        for g in SUPPORTED {
            let spec = WeightLawSpec::new(g).unwrap();
            let checks = certify_sampler(&spec, 100_000, 5, &default_mgf_points(g), 4.0).unwrap();
            for c in &checks {
                assert!(c.pass, "gamma {g}: {c:?}");
            }
        }
    }
}
