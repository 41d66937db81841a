//! Minimum-divergence estimation on a target measure and its weighted
//! bootstrap version.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::divergence::{divergence_raw, mass_infimum_from_divergence, phi, phi_prime, GammaIndex, Generator};
use crate::empirical::{normalized_weighted_empirical, NormalizedEmpirical, Sample};
use crate::error::{Error, Result};
use crate::measure::{ProbVector, MASS_TOLERANCE};
use crate::models::{EstimationResult, ExpFamilyModel, ParametricModel};
use crate::optimize::{halton_points, nelder_mead, solve_dense, SimplexTolerance};
use crate::weights::WeightVector;

/// Knobs of [`mde_fit`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MdeOptions {
    pub starts: usize,
    pub ftol: f64,
    pub xtol: f64,
    pub max_iter: usize,
    pub polish: bool,
}

impl Default for MdeOptions {
    fn default() -> Self {
        Self {
            starts: 8,
            ftol: 1e-10,
            xtol: 1e-8,
            max_iter: 10_000,
            polish: true,
        }
    }
}

/// A model, a target on its alphabet and a divergence index.
pub struct MdeProblem<'a> {
    model: &'a dyn ParametricModel,
    target: Vec<f64>,
    gamma: GammaIndex,
    options: MdeOptions,
}

fn full_line(gamma: GammaIndex) -> bool {
    matches!(gamma.generator(), Generator::Pearson)
}

impl<'a> MdeProblem<'a> {
    /// `target` must have unit mass. Negative entries are accepted only when
    /// `phi_gamma` is finite on the whole line.
    pub fn new(model: &'a dyn ParametricModel, target: Vec<f64>, gamma: impl Into<GammaIndex>) -> Result<Self> {
        let gamma = gamma.into();
        let k = model.alphabet().len();
        if target.len() != k {
            return Err(Error::LengthMismatch {
                expected: k,
                actual: target.len(),
            });
        }
        if target.iter().any(|t| !t.is_finite()) {
            return Err(Error::InvalidInput("target entries must be finite".into()));
        }
        let mass: f64 = target.iter().sum();
        if (mass - 1.0).abs() > MASS_TOLERANCE * k as f64 {
            return Err(Error::InvalidInput(format!("target has mass {mass}, expected 1")));
        }
        if target.iter().any(|&t| t < 0.0) && !full_line(gamma) {
            return Err(Error::InfeasibleTarget(gamma.value()));
        }
        Ok(Self {
            model,
            target,
            gamma,
            options: MdeOptions::default(),
        })
    }

    pub fn from_prob(model: &'a dyn ParametricModel, target: &ProbVector, gamma: impl Into<GammaIndex>) -> Result<Self> {
        Self::new(model, target.entries().to_vec(), gamma)
    }

    pub fn with_options(mut self, options: MdeOptions) -> Self {
        self.options = options;
        self
    }

    pub fn target(&self) -> &[f64] {
        &self.target
    }

    pub fn gamma(&self) -> GammaIndex {
        self.gamma
    }
}

/// `sum_k P_theta(d_k) phi_gamma(target_k / P_theta(d_k))`; `+inf` outside the
/// box or the generator domain.
pub fn mde_objective(problem: &MdeProblem<'_>, theta: &[f64]) -> f64 {
    match problem.model.prob(theta) {
        Ok(p) => divergence_raw(problem.gamma, &problem.target, p.entries()),
        Err(_) => f64::INFINITY,
    }
}

/// `psi(r) = phi(r) - r phi'(r)`, the derivative of `p phi(t / p)` in `p`.
fn psi(gamma: GammaIndex, r: f64) -> f64 {
    if r == 0.0 {
        phi(gamma, 0.0)
    } else {
        phi(gamma, r) - r * phi_prime(gamma, r)
    }
}

/// Exact objective gradient for exponential families:
/// `sum_k P_k (T_k - mu) psi(t_k / P_k)`.
fn expfam_gradient(model: &ExpFamilyModel, problem: &MdeProblem<'_>, theta: &[f64]) -> Option<Vec<f64>> {
    let p = model.prob(theta).ok()?;
    let mu = model.statistic_mean(p.entries());
    let mut g = vec![0.0; theta.len()];
    for ((row, &pk), &tk) in model.table().iter().zip(p.entries()).zip(&problem.target) {
        let s = pk * psi(problem.gamma, tk / pk);
        for ((gi, t), m) in g.iter_mut().zip(row).zip(&mu) {
            *gi += s * (t - m);
        }
    }
    g.iter().all(|v| v.is_finite()).then_some(g)
}

fn fd_gradient(problem: &MdeProblem<'_>, theta: &[f64]) -> Option<Vec<f64>> {
    let h = 1e-6;
    let mut g = Vec::with_capacity(theta.len());
    for i in 0..theta.len() {
        let mut up = theta.to_vec();
        let mut dn = theta.to_vec();
        up[i] += h;
        dn[i] -= h;
        g.push((mde_objective(problem, &up) - mde_objective(problem, &dn)) / (2.0 * h));
    }
    g.iter().all(|v| v.is_finite()).then_some(g)
}

fn gradient(problem: &MdeProblem<'_>, theta: &[f64]) -> Option<Vec<f64>> {
    match problem.model.as_exp_family() {
        Some(m) => expfam_gradient(m, problem, theta),
        None => fd_gradient(problem, theta),
    }
}

fn sup(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |a, b| a.max(b.abs()))
}

/// Newton refinement from a simplex result, using central differences of the
/// gradient for the Hessian. Steps leaving the box or failing to reduce the
/// gradient are rejected.
#[allow(clippy::needless_range_loop)]
fn polish(problem: &MdeProblem<'_>, mut theta: Vec<f64>, mut value: f64) -> (Vec<f64>, f64) {
    let d = theta.len();
    let h = 1e-5;
    for _ in 0..30 {
        let Some(g) = gradient(problem, &theta) else { break };
        if sup(&g) <= 1e-15 {
            break;
        }
        let mut hess = vec![vec![0.0; d]; d];
        for j in 0..d {
            let mut up = theta.clone();
            let mut dn = theta.clone();
            up[j] += h;
            dn[j] -= h;
            let (Some(gu), Some(gd)) = (gradient(problem, &up), gradient(problem, &dn)) else {
                return (theta, value);
            };
            for i in 0..d {
                hess[i][j] = (gu[i] - gd[i]) / (2.0 * h);
            }
        }
        for i in 0..d {
            for j in 0..i {
                let s = 0.5 * (hess[i][j] + hess[j][i]);
                hess[i][j] = s;
                hess[j][i] = s;
            }
        }
        let Some(step) = solve_dense(hess, g.iter().map(|x| -x).collect()) else { break };
        let trial: Vec<f64> = theta.iter().zip(&step).map(|(t, s)| t + s).collect();
        if !problem.model.contains(&trial) {
            break;
        }
        let trial_value = mde_objective(problem, &trial);
        let Some(trial_grad) = gradient(problem, &trial) else { break };
        let tolerance = 1e-12 * (1.0 + value.abs());
        if !(trial_value <= value + tolerance && sup(&trial_grad) < sup(&g)) {
            break;
        }
        let small = sup(&step) <= 1e-13 * (1.0 + sup(&theta));
        theta = trial;
        value = trial_value.min(value);
        if small {
            break;
        }
    }
    (theta, value)
}

/// Minimizes [`mde_objective`] over the model box by multistart Nelder-Mead
/// from Halton points, followed by a Newton polish of each local solution.
///
/// Among local solutions whose objectives lie within `1e-12` of the best,
/// the lexicographically smallest parameter wins.
pub fn mde_fit(problem: &MdeProblem<'_>) -> Result<EstimationResult> {
    let opts = problem.options;
    let lower = problem.model.lower();
    let upper = problem.model.upper();
    let tol = SimplexTolerance {
        ftol: opts.ftol,
        xtol: opts.xtol,
        max_iter: opts.max_iter,
    };
    let starts = halton_points(opts.starts.max(1), lower, upper);
    let runs: Vec<(Vec<f64>, f64, usize, bool)> = starts
        .par_iter()
        .map(|s| {
            let out = nelder_mead(|th| mde_objective(problem, th), s, lower, upper, tol);
            let (x, v) = if opts.polish && out.value.is_finite() {
                polish(problem, out.x, out.value)
            } else {
                (out.x, out.value)
            };
            (x, v, out.iterations, out.converged)
        })
        .collect();

    let best_value = runs.iter().map(|r| r.1).fold(f64::INFINITY, f64::min);
    if !best_value.is_finite() {
        return Err(Error::InfeasibleTarget(problem.gamma.value()));
    }
    let best = runs
        .iter()
        .filter(|r| r.1 <= best_value + 1e-12)
        .min_by(|a, b| {
            a.0.iter()
                .zip(&b.0)
                .map(|(x, y)| x.total_cmp(y))
                .find(|o| o.is_ne())
                .unwrap_or(std::cmp::Ordering::Equal)
        })
        .expect("at least one run attains the best value");
    Ok(EstimationResult {
        theta_hat: best.0.clone(),
        objective_value: best.1,
        iterations: runs.iter().map(|r| r.2).sum(),
        converged: best.3,
        multistart_best_of: runs.len(),
    })
}

/// Minimum-divergence fit to the normalized weighted empirical measure.
pub fn bootstrap_mde(
    model: &dyn ParametricModel,
    s: &Sample,
    gamma: impl Into<GammaIndex>,
    w: &WeightVector,
    options: MdeOptions,
) -> Result<EstimationResult> {
    let gamma = gamma.into();
    let target = match normalized_weighted_empirical(s, w)? {
        NormalizedEmpirical::Undefined => return Err(Error::DegenerateWeights),
        NormalizedEmpirical::Defined(p) => p.entries().to_vec(),
        NormalizedEmpirical::SignedSimplex(m) => m.entries().to_vec(),
    };
    mde_fit(&MdeProblem::new(model, target, gamma)?.with_options(options))
}

/// The test statistic `inf_m phi_gamma(m Q, P_theta)` for a target `Q`: the
/// divergence from `P_theta`, mapped through the mass-infimum transform of
/// the weight law matched to `gamma`. Zero iff `Q = P_theta`.
pub fn divergence_statistic(p_theta: &ProbVector, target: &[f64], gamma: impl Into<GammaIndex>) -> Result<f64> {
    let gamma = gamma.into();
    let d = crate::divergence::divergence(gamma, target, p_theta)?;
    mass_infimum_from_divergence(gamma, d)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::divergence::conjugate_phi;
    use crate::measure::Alphabet;
    use crate::models::{expfam_mean, expfam_prob, GridModel};
    use crate::weights::{sample_weights, WeightLawSpec};
    use proptest::prelude::*;

    const GAMMAS: [f64; 5] = [-1.0, 0.0, 0.5, 1.0, 2.0];

    fn bern() -> ExpFamilyModel {
        ExpFamilyModel::bernoulli(-5.0, 5.0).unwrap()
    }

    fn four_cell() -> ExpFamilyModel {
        ExpFamilyModel::new(
            Alphabet::indexed(4).unwrap(),
            vec![vec![0.0, 0.0], vec![1.0, 0.0], vec![0.0, 1.0], vec![1.0, 1.5]],
            vec![-4.0, -4.0],
            vec![4.0, 4.0],
        )
        .unwrap()
    }

    #[test]
    fn objective_examples() {
        let m = bern();
        let p = MdeProblem::new(&m, vec![0.5, 0.5], 0.5).unwrap();
        assert_eq!(mde_objective(&p, &[0.0]), 0.0);
        let p = MdeProblem::new(&m, vec![1.0, 0.0], 0.0).unwrap();
        assert_eq!(mde_objective(&p, &[0.3]), f64::INFINITY);
        let p = MdeProblem::new(&m, vec![0.6, 0.4], 0.5).unwrap();
        let hand = 2.0 * (0.5 * (1.2f64.sqrt() - 1.0).powi(2) + 0.5 * (0.8f64.sqrt() - 1.0).powi(2));
        assert!((mde_objective(&p, &[0.0]) - hand).abs() < 1e-15);
        assert_eq!(mde_objective(&p, &[9.0]), f64::INFINITY);
    }

    #[test]
    fn signed_targets_only_for_pearson() {
        let m = bern();
        assert!(matches!(
            MdeProblem::new(&m, vec![1.2, -0.2], 1.0),
            Err(Error::InfeasibleTarget(_))
        ));
        assert!(MdeProblem::new(&m, vec![1.2, -0.2], 2.0).is_ok());
        assert!(MdeProblem::new(&m, vec![0.5, 0.6], 2.0).is_err());
    }

    #[test]
    fn bernoulli_fit_is_logit_for_every_gamma() {
        let m = bern();
        for g in GAMMAS {
            let r = mde_fit(&MdeProblem::new(&m, vec![0.7, 0.3], g).unwrap()).unwrap();
            assert!((r.theta_hat[0] - (0.3f64 / 0.7).ln()).abs() < 1e-6, "gamma {g}: {r:?}");
            assert!(r.objective_value < 1e-12);
            assert_eq!(r.multistart_best_of, 8);
        }
    }

    #[test]
    fn recovers_model_point() {
        let m = four_cell();
        let theta0 = [0.7, -1.1];
        let target = expfam_prob(&m, &theta0).unwrap();
        for g in GAMMAS {
            let r = mde_fit(&MdeProblem::from_prob(&m, &target, g).unwrap()).unwrap();
            assert!((r.theta_hat[0] - theta0[0]).abs() < 1e-6, "gamma {g}: {r:?}");
            assert!((r.theta_hat[1] - theta0[1]).abs() < 1e-6, "gamma {g}: {r:?}");
        }
    }

    #[test]
    fn kullback_leibler_fit_solves_the_normal_equation() {
        let m = four_cell();
        let target = vec![0.35, 0.15, 0.3, 0.2];
        let r = mde_fit(&MdeProblem::new(&m, target.clone(), 1.0).unwrap()).unwrap();
        let lhs = m.statistic_mean(&target);
        let rhs = expfam_mean(&m, &r.theta_hat);
        for (a, b) in lhs.iter().zip(&rhs) {
            assert!((a - b).abs() < 1e-10, "{lhs:?} vs {rhs:?}");
        }
    }

    #[test]
    fn grid_model_matches_exhaustive_scan() {
        let a = ProbVector::new(vec![0.6, 0.3, 0.1]).unwrap();
        let b = ProbVector::new(vec![0.1, 0.3, 0.6]).unwrap();
        let m = GridModel::mixture(Alphabet::indexed(3).unwrap(), a, b).unwrap();
        let target = vec![0.2, 0.5, 0.3];
        for g in GAMMAS {
            let problem = MdeProblem::new(&m, target.clone(), g).unwrap();
            let r = mde_fit(&problem).unwrap();
            let (scan_theta, scan_value) = (0..=1000)
                .map(|i| i as f64 * 1e-3)
                .map(|t| (t, mde_objective(&problem, &[t])))
                .min_by(|x, y| x.1.total_cmp(&y.1))
                .unwrap();
            assert!((r.theta_hat[0] - scan_theta).abs() <= 1e-3, "gamma {g}: {r:?} vs {scan_theta}");
            assert!(r.objective_value <= scan_value + 1e-15);
        }
    }

    #[test]
    fn uniform_weights_reproduce_plain_fit() {
        let m = four_cell();
        let s = Sample::from_counts(Alphabet::indexed(4).unwrap(), &[7, 3, 6, 4]).unwrap();
        let w = WeightVector::new(vec![2.5; 20]).unwrap();
        for g in [0.0, 0.5, 1.0] {
            let boot = bootstrap_mde(&m, &s, g, &w, MdeOptions::default()).unwrap();
            let plain = mde_fit(&MdeProblem::new(&m, vec![0.35, 0.15, 0.3, 0.2], g).unwrap()).unwrap();
            assert!(boot.theta_hat.iter().zip(&plain.theta_hat).all(|(a, b)| (a - b).abs() < 1e-9));
        }
    }

    #[test]
    fn poisson_bootstrap_is_weighted_likelihood() {
        let m = four_cell();
        let s = Sample::from_counts(Alphabet::indexed(4).unwrap(), &[7, 3, 6, 4]).unwrap();
        let spec = WeightLawSpec::new(1.0).unwrap();
        for seed in 0..5 {
            let w = sample_weights(&spec, 20, seed).unwrap();
            let boot = bootstrap_mde(&m, &s, 1.0, &w, MdeOptions::default()).unwrap();
            let loglik = |th: &[f64]| -> f64 {
                let p = expfam_prob(&m, th).unwrap();
                s.observations().iter().zip(w.as_slice()).map(|(&j, wi)| wi * p[j].ln()).sum()
            };
            let h = 1e-5;
            for i in 0..2 {
                let mut up = boot.theta_hat.clone();
                let mut dn = boot.theta_hat.clone();
                up[i] += h;
                dn[i] -= h;
                let slope = (loglik(&up) - loglik(&dn)) / (2.0 * h);
                assert!(slope.abs() < 1e-6, "seed {seed}: weighted score {slope}");
            }
        }
    }

    #[test]
    fn degenerate_and_signed_bootstrap_targets() {
        let m = bern();
        let s = Sample::from_indices(Alphabet::indexed(2).unwrap(), &[0, 1]).unwrap();
        let zero = WeightVector::new(vec![1.0, -1.0]).unwrap();
        assert_eq!(bootstrap_mde(&m, &s, 2.0, &zero, MdeOptions::default()), Err(Error::DegenerateWeights));
        let signed = WeightVector::new(vec![2.0, -0.5]).unwrap();
        assert!(matches!(
            bootstrap_mde(&m, &s, 0.5, &signed, MdeOptions::default()),
            Err(Error::InfeasibleTarget(_))
        ));
        assert!(bootstrap_mde(&m, &s, 2.0, &signed, MdeOptions::default()).is_ok());
    }

    #[test]
    fn statistic_examples() {
        let p = ProbVector::uniform(2).unwrap();
        assert_eq!(divergence_statistic(&p, &[0.5, 0.5], 0.5).unwrap(), 0.0);
        let kl = 0.6 * 1.2f64.ln() + 0.4 * 0.8f64.ln();
        let s1 = divergence_statistic(&p, &[0.6, 0.4], 1.0).unwrap();
        assert!((s1 - (1.0 - (-kl).exp())).abs() < 1e-15);
        assert!((s1 - 0.0199341).abs() < 1e-7);
        let d = 2.0 * (0.5 * (1.2f64.sqrt() - 1.0).powi(2) + 0.5 * (0.8f64.sqrt() - 1.0).powi(2));
        let s = divergence_statistic(&p, &[0.6, 0.4], 0.5).unwrap();
        assert!((s - (d - d * d / 8.0)).abs() < 1e-15);
    }

    proptest! {
        #[test]
        fn objective_nonnegative(t0 in -4.0f64..4.0, t1 in -4.0f64..4.0, raw in prop::collection::vec(0.0f64..1.0, 4)) {
            prop_assume!(raw.iter().sum::<f64>() > 0.1);
            let m = four_cell();
            let target = ProbVector::normalized(raw).unwrap();
            for g in GAMMAS {
                let v = mde_objective(&MdeProblem::from_prob(&m, &target, g).unwrap(), &[t0, t1]);
                prop_assert!(v >= 0.0);
            }
        }

        #[test]
        fn conjugate_form_agrees(t0 in -4.0f64..4.0, t1 in -4.0f64..4.0, raw in prop::collection::vec(0.05f64..1.0, 4)) {
            let m = four_cell();
            let target = ProbVector::normalized(raw).unwrap();
            let p = expfam_prob(&m, &[t0, t1]).unwrap();
            for g in GAMMAS {
                let canonical = mde_objective(&MdeProblem::from_prob(&m, &target, g).unwrap(), &[t0, t1]);
                let conj: f64 = target.entries().iter().zip(p.entries())
                    .map(|(t, pk)| t * conjugate_phi(g, pk / t)).sum();
                prop_assert!((canonical - conj).abs() <= 1e-10 * (1.0 + canonical.abs()));
            }
        }
    }
}
