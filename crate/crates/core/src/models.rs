//! Finite-support parametric families `theta -> P_theta`.

use std::fmt;
use std::sync::Arc;

use serde::Serialize;
use statrs::function::gamma::ln_gamma;

use crate::empirical::Sample;
use crate::error::{Error, Result};
use crate::measure::{Alphabet, ProbVector, POSITIVITY_FLOOR};
use crate::optimize::{row_rank, solve_dense};

/// A parametric family on a finite alphabet with a box parameter domain.
pub trait ParametricModel: Send + Sync {
    fn alphabet(&self) -> &Alphabet;

    fn lower(&self) -> &[f64];

    fn upper(&self) -> &[f64];

    /// `P_theta`; fails for `theta` outside the box.
    fn prob(&self, theta: &[f64]) -> Result<ProbVector>;

    fn dim(&self) -> usize {
        self.lower().len()
    }

    fn contains(&self, theta: &[f64]) -> bool {
        theta.len() == self.dim()
            && theta
                .iter()
                .zip(self.lower().iter().zip(self.upper()))
                .all(|(t, (lo, hi))| *lo <= *t && *t <= *hi)
    }

    /// The model viewed as an exponential family, when it is one.
    fn as_exp_family(&self) -> Option<&ExpFamilyModel> {
        None
    }
}

fn check_box(lower: &[f64], upper: &[f64]) -> Result<()> {
    if lower.is_empty() || lower.len() != upper.len() {
        return Err(Error::InvalidInput(format!(
            "parameter box needs matching nonempty bounds, got {} and {}",
            lower.len(),
            upper.len()
        )));
    }
    for (i, (lo, hi)) in lower.iter().zip(upper).enumerate() {
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return Err(Error::InvalidInput(format!(
                "parameter box coordinate {i}: need finite lower < upper, got [{lo}, {hi}]"
            )));
        }
    }
    Ok(())
}

/// `P_theta(d_j) = exp(T_j . theta - C(theta))` with base measure one.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExpFamilyModel {
    alphabet: Alphabet,
    table: Vec<Vec<f64>>,
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl ExpFamilyModel {
    /// `table` has one row per symbol and one column per parameter.
    pub fn new(
        alphabet: Alphabet,
        table: Vec<Vec<f64>>,
        lower: Vec<f64>,
        upper: Vec<f64>,
    ) -> Result<Self> {
        check_box(&lower, &upper)?;
        let d = lower.len();
        if table.len() != alphabet.len() {
            return Err(Error::LengthMismatch {
                expected: alphabet.len(),
                actual: table.len(),
            });
        }
        if let Some(row) = table.iter().find(|r| r.len() != d) {
            return Err(Error::LengthMismatch {
                expected: d,
                actual: row.len(),
            });
        }
        if table.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("sufficient statistics must be finite".into()));
        }
        let augmented: Vec<Vec<f64>> = table
            .iter()
            .map(|r| std::iter::once(1.0).chain(r.iter().copied()).collect())
            .collect();
        if row_rank(&augmented, 1e-10) != d + 1 {
            return Err(Error::InvalidInput(
                "model is not identifiable: the statistic columns and the constant are linearly dependent"
                    .into(),
            ));
        }
        let model = Self {
            alphabet,
            table,
            lower,
            upper,
        };
        // log P_j is concave in theta, so its minimum over the box is at a vertex.
        for mask in 0..(1usize << d) {
            let vertex: Vec<f64> = (0..d)
                .map(|i| if mask >> i & 1 == 1 { model.upper[i] } else { model.lower[i] })
                .collect();
            let p = model.unchecked_prob(&vertex);
            if let Some((j, v)) = p.iter().enumerate().find(|(_, v)| **v < POSITIVITY_FLOOR) {
                return Err(Error::InvalidInput(format!(
                    "P_theta(d{}) = {v:e} at box vertex {vertex:?} is below the positivity floor",
                    j + 1
                )));
            }
        }
        Ok(model)
    }

    /// The Bernoulli family on `{d1, d2}` with statistic `T = (0, 1)`.
    pub fn bernoulli(lower: f64, upper: f64) -> Result<Self> {
        Self::new(Alphabet::indexed(2)?, vec![vec![0.0], vec![1.0]], vec![lower], vec![upper])
    }

    pub fn table(&self) -> &[Vec<f64>] {
        &self.table
    }

    fn scores(&self, theta: &[f64]) -> Vec<f64> {
        self.table
            .iter()
            .map(|row| row.iter().zip(theta).map(|(t, th)| t * th).sum())
            .collect()
    }

    /// `C(theta) = log sum_j exp(T_j . theta)`, evaluated with max-shift.
    pub fn log_partition(&self, theta: &[f64]) -> f64 {
        let s = self.scores(theta);
        let m = s.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        m + s.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
    }

    fn unchecked_prob(&self, theta: &[f64]) -> Vec<f64> {
        let s = self.scores(theta);
        let m = s.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = s.iter().map(|v| (v - m).exp()).collect();
        let total: f64 = e.iter().sum();
        e.into_iter().map(|v| v / total).collect()
    }

    /// `sum_j p_j T_j` for any weights `p` over the alphabet.
    pub fn statistic_mean(&self, p: &[f64]) -> Vec<f64> {
        let mut mean = vec![0.0; self.dim()];
        for (row, pj) in self.table.iter().zip(p) {
            for (m, t) in mean.iter_mut().zip(row) {
                *m += pj * t;
            }
        }
        mean
    }

    fn covariance(&self, p: &[f64], mean: &[f64]) -> Vec<Vec<f64>> {
        let d = self.dim();
        let mut cov = vec![vec![0.0; d]; d];
        for (row, pj) in self.table.iter().zip(p) {
            for a in 0..d {
                for b in 0..d {
                    cov[a][b] += pj * (row[a] - mean[a]) * (row[b] - mean[b]);
                }
            }
        }
        cov
    }
}

impl ParametricModel for ExpFamilyModel {
    fn alphabet(&self) -> &Alphabet {
        &self.alphabet
    }

    fn lower(&self) -> &[f64] {
        &self.lower
    }

    fn upper(&self) -> &[f64] {
        &self.upper
    }

    fn prob(&self, theta: &[f64]) -> Result<ProbVector> {
        expfam_prob(self, theta)
    }

    fn as_exp_family(&self) -> Option<&ExpFamilyModel> {
        Some(self)
    }
}

/// `P_theta` of an exponential family.
pub fn expfam_prob(model: &ExpFamilyModel, theta: &[f64]) -> Result<ProbVector> {
    if !model.contains(theta) {
        return Err(Error::OutsideBox(theta.to_vec()));
    }
    ProbVector::new(model.unchecked_prob(theta))
}

/// `grad C(theta) = sum_j T_j P_theta(d_j)`. Defined for every `theta`.
pub fn expfam_mean(model: &ExpFamilyModel, theta: &[f64]) -> Vec<f64> {
    model.statistic_mean(&model.unchecked_prob(theta))
}

/// Output of an estimator.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EstimationResult {
    pub theta_hat: Vec<f64>,
    pub objective_value: f64,
    pub iterations: usize,
    pub converged: bool,
    pub multistart_best_of: usize,
}

const NEWTON_MAX_ITER: usize = 200;
const NEWTON_MAX_HALVINGS: usize = 60;
const NEWTON_RESIDUAL: f64 = 1e-10;
const NEWTON_STEP: f64 = 1e-6;

/// Solves `grad C(theta) = target_mean` by damped Newton iteration on the
/// convex function `C(theta) - theta . target_mean`, starting from zero.
///
/// The solution is not restricted to the parameter box. `objective_value`
/// holds the final sup-norm residual.
pub fn mle_normal_equation(model: &ExpFamilyModel, target_mean: &[f64]) -> Result<EstimationResult> {
    let d = model.dim();
    if target_mean.len() != d {
        return Err(Error::LengthMismatch {
            expected: d,
            actual: target_mean.len(),
        });
    }
    let objective = |th: &[f64]| {
        model.log_partition(th) - th.iter().zip(target_mean).map(|(a, b)| a * b).sum::<f64>()
    };
    let residual = |th: &[f64]| -> Vec<f64> {
        expfam_mean(model, th)
            .iter()
            .zip(target_mean)
            .map(|(m, t)| m - t)
            .collect()
    };
    let sup = |v: &[f64]| v.iter().fold(0.0f64, |a, b| a.max(b.abs()));

    let mut theta = vec![0.0; d];
    let mut value = objective(&theta);
    for iteration in 0..NEWTON_MAX_ITER {
        let g = residual(&theta);
        let p = model.unchecked_prob(&theta);
        let h = model.covariance(&p, &expfam_mean(model, &theta));
        let step = solve_dense(h, g.iter().map(|x| -x).collect()).ok_or_else(|| {
            Error::NonConvergence(format!(
                "singular information matrix at theta = {theta:?}; the target mean is likely on the hull boundary"
            ))
        })?;
        if p.iter().any(|&v| v < POSITIVITY_FLOOR) {
            return Err(Error::NonConvergence(format!(
                "Newton iterate theta = {theta:?} drifted to the hull boundary; the target mean must lie in the open hull of T"
            )));
        }
        if sup(&g) <= NEWTON_RESIDUAL && sup(&step) <= NEWTON_STEP {
            return Ok(EstimationResult {
                theta_hat: theta,
                objective_value: sup(&g),
                iterations: iteration,
                converged: true,
                multistart_best_of: 1,
            });
        }
        let mut scale = 1.0;
        let mut accepted = false;
        for _ in 0..=NEWTON_MAX_HALVINGS {
            let trial: Vec<f64> = theta.iter().zip(&step).map(|(t, s)| t + scale * s).collect();
            let trial_value = objective(&trial);
            if trial_value < value || sup(&residual(&trial)) < sup(&g) {
                theta = trial;
                value = trial_value;
                accepted = true;
                break;
            }
            scale *= 0.5;
        }
        if !accepted {
            return Err(Error::NonConvergence(format!(
                "no descent after {NEWTON_MAX_HALVINGS} step halvings (residual {:e})",
                sup(&g)
            )));
        }
    }
    Err(Error::NonConvergence(format!(
        "normal equation unsolved after {NEWTON_MAX_ITER} Newton steps; the target mean may lie outside the open hull of T"
    )))
}

type Evaluator = dyn Fn(&[f64]) -> Vec<f64> + Send + Sync;

/// A family given by an arbitrary evaluator on a parameter box.
#[derive(Clone)]
pub struct GridModel {
    alphabet: Alphabet,
    lower: Vec<f64>,
    upper: Vec<f64>,
    evaluator: Arc<Evaluator>,
}

impl fmt::Debug for GridModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("GridModel")
            .field("alphabet", &self.alphabet)
            .field("lower", &self.lower)
            .field("upper", &self.upper)
            .finish_non_exhaustive()
    }
}

impl GridModel {
    pub fn new<F>(alphabet: Alphabet, lower: Vec<f64>, upper: Vec<f64>, evaluator: F) -> Result<Self>
    where
        F: Fn(&[f64]) -> Vec<f64> + Send + Sync + 'static,
    {
        check_box(&lower, &upper)?;
        Ok(Self {
            alphabet,
            lower,
            upper,
            evaluator: Arc::new(evaluator),
        })
    }

    /// `theta -> (1 - theta) A + theta B` on `theta in [0, 1]`.
    pub fn mixture(alphabet: Alphabet, a: ProbVector, b: ProbVector) -> Result<Self> {
        for c in [&a, &b] {
            if c.len() != alphabet.len() {
                return Err(Error::LengthMismatch {
                    expected: alphabet.len(),
                    actual: c.len(),
                });
            }
            c.require_strictly_positive()?;
        }
        if a == b {
            return Err(Error::InvalidInput("mixture components must differ".into()));
        }
        Self::new(alphabet, vec![0.0], vec![1.0], move |th| {
            a.entries()
                .iter()
                .zip(b.entries())
                .map(|(x, y)| (1.0 - th[0]) * x + th[0] * y)
                .collect()
        })
    }
}

impl ParametricModel for GridModel {
    fn alphabet(&self) -> &Alphabet {
        &self.alphabet
    }

    fn lower(&self) -> &[f64] {
        &self.lower
    }

    fn upper(&self) -> &[f64] {
        &self.upper
    }

    fn prob(&self, theta: &[f64]) -> Result<ProbVector> {
        if !self.contains(theta) {
            return Err(Error::OutsideBox(theta.to_vec()));
        }
        let raw = (self.evaluator)(theta);
        if raw.len() != self.alphabet.len() {
            return Err(Error::LengthMismatch {
                expected: self.alphabet.len(),
                actual: raw.len(),
            });
        }
        let p = ProbVector::new(raw)?;
        p.require_strictly_positive()?;
        Ok(p)
    }
}

/// `log P(P_{n,theta} = P_n)`: the log multinomial probability of the
/// observed counts under `P_theta`.
pub fn multinomial_match_logprob(
    model: &dyn ParametricModel,
    theta: &[f64],
    s: &Sample,
) -> Result<f64> {
    let p = model.prob(theta)?;
    if p.len() != s.counts().len() {
        return Err(Error::LengthMismatch {
            expected: p.len(),
            actual: s.counts().len(),
        });
    }
    Ok(multinomial_logprob(s.counts(), p.entries()))
}

/// `log n! + sum_j (n_j log p_j - log n_j!)`.
pub fn multinomial_logprob(counts: &[usize], p: &[f64]) -> f64 {
    let n: usize = counts.iter().sum();
    let mut acc = ln_gamma(n as f64 + 1.0);
    for (&c, &pj) in counts.iter().zip(p) {
        if c > 0 {
            acc += c as f64 * pj.ln() - ln_gamma(c as f64 + 1.0);
        }
    }
    acc
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::divergence::divergence;
    use crate::empirical::apportion;
    use proptest::prelude::*;

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
    fn bernoulli_probabilities() {
        assert_eq!(expfam_prob(&bern(), &[0.0]).unwrap().entries(), &[0.5, 0.5]);
        let p = expfam_prob(&bern(), &[(3.0f64 / 7.0).ln()]).unwrap();
        assert!((p[0] - 0.7).abs() < 1e-15 && (p[1] - 0.3).abs() < 1e-15);
        assert_eq!(expfam_mean(&bern(), &[0.0]), vec![0.5]);
        assert!(matches!(expfam_prob(&bern(), &[6.0]), Err(Error::OutsideBox(_))));
    }

    #[test]
    fn construction_checks() {
        let a = Alphabet::indexed(3).unwrap();
        let dependent = vec![vec![0.0, 0.0], vec![1.0, 2.0], vec![2.0, 4.0]];
        assert!(ExpFamilyModel::new(a.clone(), dependent, vec![-1.0; 2], vec![1.0; 2]).is_err());
        let constant = vec![vec![1.0], vec![1.0], vec![1.0]];
        assert!(ExpFamilyModel::new(a.clone(), constant, vec![-1.0], vec![1.0]).is_err());
        let t = vec![vec![0.0], vec![1.0], vec![2.0]];
        assert!(ExpFamilyModel::new(a.clone(), t.clone(), vec![-40.0], vec![1.0]).is_err());
        assert!(ExpFamilyModel::new(a, t, vec![1.0], vec![-1.0]).is_err());
    }

    #[test]
    fn large_parameters_stay_finite() {
        let m = ExpFamilyModel::bernoulli(-700.0, 700.0);
        assert!(m.is_err());
        let m = ExpFamilyModel::bernoulli(-20.0, 20.0).unwrap();
        let c = m.log_partition(&[20.0]);
        assert!((c - (20.0 + (-20.0f64).exp().ln_1p())).abs() < 1e-12);
    }

    #[test]
    fn mle_examples() {
        let r = mle_normal_equation(&bern(), &[0.3]).unwrap();
        assert!(r.converged);
        assert!((r.theta_hat[0] - (0.3f64 / 0.7).ln()).abs() < 1e-10);
        assert!((r.theta_hat[0] + 0.847298).abs() < 1e-6);
        assert!(mle_normal_equation(&bern(), &[1.0]).is_err());
        assert!(mle_normal_equation(&bern(), &[1.2]).is_err());
    }

    #[test]
    fn multinomial_examples() {
        let s = Sample::from_counts(Alphabet::indexed(2).unwrap(), &[1, 1]).unwrap();
        let lp = multinomial_match_logprob(&bern(), &[0.0], &s).unwrap();
        assert!((lp - 0.5f64.ln()).abs() < 1e-14);
        let s = Sample::from_counts(Alphabet::indexed(2).unwrap(), &[3, 0]).unwrap();
        let lp = multinomial_match_logprob(&bern(), &[0.0], &s).unwrap();
        assert!((lp - 3.0 * 0.5f64.ln()).abs() < 1e-13);
    }

    #[test]
    fn stirling_bridge() {
        let m = four_cell();
        let truth = expfam_prob(&m, &[0.3, -0.2]).unwrap();
        let theta = [-0.4, 0.5];
        let p = expfam_prob(&m, &theta).unwrap();
        let kl = divergence(1.0, truth.entries(), &p).unwrap();
        let mut gaps = Vec::new();
        for n in [100usize, 1000, 10_000] {
            let s = Sample::from_counts(m.alphabet().clone(), &apportion(&truth, n)).unwrap();
            let lp = multinomial_match_logprob(&m, &theta, &s).unwrap();
            gaps.push((lp / n as f64 + kl).abs());
        }
        assert!(gaps[0] > gaps[1] && gaps[1] > gaps[2], "{gaps:?}");
        assert!(gaps[2] < 0.01);
        for (g, n) in gaps.iter().zip([100.0f64, 1000.0, 10_000.0]) {
            assert!(*g <= 3.0 * n.ln() / n, "gap {g} at n {n}");
        }
    }

    #[test]
    fn mixture_model() {
        let a = ProbVector::new(vec![0.7, 0.2, 0.1]).unwrap();
        let b = ProbVector::new(vec![0.1, 0.3, 0.6]).unwrap();
        let m = GridModel::mixture(Alphabet::indexed(3).unwrap(), a, b).unwrap();
        let p = m.prob(&[0.5]).unwrap();
        assert!((p[2] - 0.35).abs() < 1e-15);
        assert!(m.prob(&[1.5]).is_err());
        assert!(format!("{m:?}").contains("GridModel"));
    }

    proptest! {
        #[test]
        fn probabilities_normalized(t0 in -4.0f64..4.0, t1 in -4.0f64..4.0) {
            let p = expfam_prob(&four_cell(), &[t0, t1]).unwrap();
            prop_assert!((p.entries().iter().sum::<f64>() - 1.0).abs() <= 1e-12);
            prop_assert!(p.is_strictly_positive());
        }

        #[test]
        fn mean_is_gradient_and_hessian_is_positive_definite(t0 in -3.0f64..3.0, t1 in -3.0f64..3.0) {
            let m = four_cell();
            let th = [t0, t1];
            let h = 1e-5;
            let mean = expfam_mean(&m, &th);
            let mut hess = [[0.0; 2]; 2];
            for i in 0..2 {
                let mut up = th;
                let mut dn = th;
                up[i] += h;
                dn[i] -= h;
                let fd = (m.log_partition(&up) - m.log_partition(&dn)) / (2.0 * h);
                prop_assert!((fd - mean[i]).abs() <= 1e-6);
                let (mu, md) = (expfam_mean(&m, &up), expfam_mean(&m, &dn));
                for j in 0..2 {
                    hess[i][j] = (mu[j] - md[j]) / (2.0 * h);
                }
            }
            prop_assert!(hess[0][0] > 0.0);
            prop_assert!(hess[0][0] * hess[1][1] - hess[0][1] * hess[1][0] > 0.0);
        }

        #[test]
        fn normal_equation_round_trip(t0 in -3.0f64..3.0, t1 in -3.0f64..3.0) {
            let m = four_cell();
            let r = mle_normal_equation(&m, &expfam_mean(&m, &[t0, t1])).unwrap();
            prop_assert!(r.converged);
            prop_assert!((r.theta_hat[0] - t0).abs() <= 1e-8);
            prop_assert!((r.theta_hat[1] - t1).abs() <= 1e-8);
        }
    }
}
