//! Monte Carlo estimation of conditional large-deviation rates for the
//! normalized weighted empirical measure, with the matching theoretical
//! rates.
//!
//! The conditioning sample is deterministic: its cell counts are the
//! largest-remainder apportionment of `n P`. Conditionally on the sample the
//! normalized weighted measure depends on the weights only through the cell
//! sums `S_j = sum_{i: X_i = d_j} W_i`, so replicas draw those sums directly
//! from their convolution law whenever it has a closed form.

use rand::Rng;
use rand_distr::{Distribution, Gamma, InverseGaussian, Normal, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::divergence::{
    divergence_raw, mass_infimum_from_divergence, phi_prime_inverse, GammaIndex, Generator,
};
use crate::empirical::apportion;
use crate::error::{Error, Result};
use crate::estimation::divergence_statistic;
use crate::measure::{sup_distance, ProbVector};
use crate::models::ParametricModel;
use crate::optimize::{bisect, golden_min, halton_points, nelder_mead, SimplexTolerance};
use crate::rng::{self, StreamRng};
use crate::weights::{WeightLaw, WeightLawSpec, WeightSampler};

/// Replicas simulated from one random stream.
const BLOCK: usize = 4096;

const TAG_EVENT: u64 = 1;
const TAG_NULL: u64 = 2;
const TAG_ALTERNATIVE: u64 = 3;

/// Side of a halfspace event.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    AtLeast,
    AtMost,
}

/// A subset of the (signed) simplex.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum EventSpec {
    WholeSimplex,
    /// `{Q : Q(d_cell) >= bound}` or `{Q : Q(d_cell) <= bound}`.
    Halfspace {
        cell: usize,
        bound: f64,
        direction: Direction,
    },
    /// `{Q : max_k |Q_k - center_k| <= radius}`.
    SupNormBall { center: ProbVector, radius: f64 },
    /// `{Q : max_k |Q_k - center_k| > radius}`.
    SupNormTail { center: ProbVector, radius: f64 },
    /// `{Q : phi_gamma(Q, reference) > threshold}`.
    DivergenceTail {
        gamma: GammaIndex,
        reference: ProbVector,
        threshold: f64,
    },
}

impl EventSpec {
    /// Checks the event against an alphabet of size `k` and requires a
    /// nonempty interior.
    pub fn validate(&self, k: usize) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidInput(msg));
        match self {
            Self::WholeSimplex => Ok(()),
            Self::Halfspace { cell, bound, .. } => {
                if *cell >= k {
                    return bad(format!("halfspace cell {cell} outside an alphabet of size {k}"));
                }
                if !(*bound > 0.0 && *bound < 1.0) {
                    return bad(format!("halfspace bound {bound} must lie in (0, 1)"));
                }
                Ok(())
            }
            Self::SupNormBall { center, radius } | Self::SupNormTail { center, radius } => {
                if center.len() != k {
                    return Err(Error::LengthMismatch { expected: k, actual: center.len() });
                }
                if !(*radius > 0.0 && radius.is_finite()) {
                    return bad(format!("radius {radius} must be positive"));
                }
                if matches!(self, Self::SupNormTail { .. })
                    && center.entries().iter().all(|&c| c + radius >= 1.0 && c - radius <= 0.0)
                {
                    return bad(format!("sup-norm tail of radius {radius} is empty on the simplex"));
                }
                Ok(())
            }
            Self::DivergenceTail { gamma, reference, threshold } => {
                if reference.len() != k {
                    return Err(Error::LengthMismatch { expected: k, actual: reference.len() });
                }
                reference.require_strictly_positive()?;
                if !(*threshold > 0.0 && threshold.is_finite()) {
                    return bad(format!("threshold {threshold} must be positive"));
                }
                if !gamma.value().is_finite() {
                    return Err(Error::UnsupportedGamma(gamma.value()));
                }
                Ok(())
            }
        }
    }

    pub fn contains(&self, q: &[f64]) -> bool {
        match self {
            Self::WholeSimplex => true,
            Self::Halfspace { cell, bound, direction } => match direction {
                Direction::AtLeast => q[*cell] >= *bound,
                Direction::AtMost => q[*cell] <= *bound,
            },
            Self::SupNormBall { center, radius } => sup_distance(q, center.entries()) <= *radius,
            Self::SupNormTail { center, radius } => sup_distance(q, center.entries()) > *radius,
            Self::DivergenceTail { gamma, reference, threshold } => {
                divergence_raw(*gamma, q, reference.entries()) > *threshold
            }
        }
    }
}

/// Exact sampler of the cell sums for fixed cell counts.
#[derive(Debug, Clone)]
pub struct CellSums {
    cells: Vec<CellLaw>,
}

#[derive(Debug, Clone)]
enum CellLaw {
    Zero,
    Gamma(Gamma<f64>),
    Poisson(Poisson<f64>),
    Normal(Normal<f64>),
    InverseGaussian(InverseGaussian<f64>),
    CompoundPoissonGamma { count: Poisson<f64>, shape: f64, scale: f64 },
    Direct { draws: usize, sampler: WeightSampler },
}

impl CellSums {
    /// Convolution laws for `counts[j]` i.i.d. weights per cell.
    pub fn new(spec: &WeightLawSpec, counts: &[usize]) -> Self {
        let cells = counts
            .iter()
            .map(|&c| {
                if c == 0 {
                    return CellLaw::Zero;
                }
                let cf = c as f64;
                match spec.law() {
                    WeightLaw::Exponential => CellLaw::Gamma(Gamma::new(cf, 1.0).expect("positive shape")),
                    WeightLaw::Poisson => CellLaw::Poisson(Poisson::new(cf).expect("positive rate")),
                    WeightLaw::Normal => CellLaw::Normal(Normal::new(cf, cf.sqrt()).expect("positive sd")),
                    WeightLaw::InverseGaussian => CellLaw::InverseGaussian(
                        InverseGaussian::new(cf, cf * cf).expect("positive parameters"),
                    ),
                    WeightLaw::CompoundPoissonGamma { jump_rate, jump_shape, jump_scale } => {
                        CellLaw::CompoundPoissonGamma {
                            count: Poisson::new(cf * jump_rate).expect("positive rate"),
                            shape: jump_shape,
                            scale: jump_scale,
                        }
                    }
                    WeightLaw::TiltedStable { .. } => CellLaw::Direct { draws: c, sampler: spec.sampler() },
                }
            })
            .collect();
        Self { cells }
    }

    /// Per-observation summation, used to cross-check the convolution laws.
    pub fn direct(spec: &WeightLawSpec, counts: &[usize]) -> Self {
        Self {
            cells: counts
                .iter()
                .map(|&c| CellLaw::Direct { draws: c, sampler: spec.sampler() })
                .collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R, out: &mut [f64]) {
        for (slot, cell) in out.iter_mut().zip(&self.cells) {
            *slot = match cell {
                CellLaw::Zero => 0.0,
                CellLaw::Gamma(g) => g.sample(rng),
                CellLaw::Poisson(p) => p.sample(rng),
                CellLaw::Normal(n) => n.sample(rng),
                CellLaw::InverseGaussian(ig) => ig.sample(rng),
                CellLaw::CompoundPoissonGamma { count, shape, scale } => {
                    let jumps = count.sample(rng);
                    if jumps == 0.0 {
                        0.0
                    } else {
                        Gamma::new(jumps * shape, *scale).expect("positive shape").sample(rng)
                    }
                }
                CellLaw::Direct { draws, sampler } => (0..*draws).map(|_| sampler.sample(rng)).sum(),
            };
        }
    }

    /// One draw of the normalized weighted measure; `false` when the weights
    /// sum to zero.
    pub fn draw_normalized<R: Rng + ?Sized>(&self, rng: &mut R, n: usize, out: &mut [f64]) -> bool {
        self.draw(rng, out);
        let total: f64 = out.iter().sum();
        if total.abs() <= 1e-12 * n as f64 {
            return false;
        }
        for v in out.iter_mut() {
            *v /= total;
        }
        true
    }
}

/// Runs `replicas` draws in blocks of independent streams and reduces the
/// per-block results in block order.
fn blocked<T, F>(replicas: usize, seed: u64, keys: &[u64], f: F) -> Vec<T>
where
    T: Send,
    F: Fn(&mut StreamRng, usize) -> T + Sync,
{
    let blocks = replicas.div_ceil(BLOCK);
    (0..blocks)
        .into_par_iter()
        .map(|b| {
            let mut stream_keys = keys.to_vec();
            stream_keys.push(b as u64);
            let mut rng = rng::stream(seed, &stream_keys);
            let size = BLOCK.min(replicas - b * BLOCK);
            f(&mut rng, size)
        })
        .collect()
}

/// Monte Carlo estimate of one event probability.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct McPoint {
    pub n: usize,
    pub replicas: usize,
    pub hits: usize,
    pub log_phat: f64,
    pub stderr: f64,
}

impl McPoint {
    pub fn from_hits(n: usize, replicas: usize, hits: usize) -> Self {
        let p = hits as f64 / replicas as f64;
        let (log_phat, stderr) = if hits == 0 {
            (f64::NEG_INFINITY, f64::INFINITY)
        } else {
            (p.ln(), ((1.0 - p) / hits as f64).sqrt())
        };
        Self { n, replicas, hits, log_phat, stderr }
    }

    pub fn censored(&self, floor: usize) -> bool {
        self.hits < floor
    }
}

/// `P^W(normalized weighted measure in event | X)` with `X` apportioned to
/// `base`.
pub fn mc_event_logprob(
    base: &ProbVector,
    weights: &WeightLawSpec,
    event: &EventSpec,
    n: usize,
    replicas: usize,
    seed: u64,
) -> Result<McPoint> {
    event.validate(base.len())?;
    if n == 0 || replicas == 0 {
        return Err(Error::InvalidInput("n and replicas must be positive".into()));
    }
    let sums = CellSums::new(weights, &apportion(base, n));
    let k = base.len();
    let hits: usize = blocked(replicas, seed, &[TAG_EVENT, n as u64], |rng, size| {
        let mut q = vec![0.0; k];
        (0..size)
            .filter(|_| sums.draw_normalized(rng, n, &mut q) && event.contains(&q))
            .count()
    })
    .into_iter()
    .sum();
    Ok(McPoint::from_hits(n, replicas, hits))
}

// ---------------------------------------------------------------------------
// Theoretical rates

fn weight_gamma_is_full_line(gamma: GammaIndex) -> bool {
    matches!(gamma.generator(), Generator::Pearson)
}

/// `min phi(Q, P)` over `{Q_j = b}` on the simplex: the other cells stay
/// proportional to `P`.
fn halfspace_min(gamma: GammaIndex, p: &[f64], cell: usize, b: f64) -> f64 {
    let rest = 1.0 - p[cell];
    let q: Vec<f64> = p
        .iter()
        .enumerate()
        .map(|(k, &pk)| if k == cell { b } else { pk * (1.0 - b) / rest })
        .collect();
    divergence_raw(gamma, &q, p)
}

/// `min phi(Q, P)` over `{l <= Q <= u, sum Q = 1}`:
/// `q_k = clip(p_k (phi')^{-1}(lambda), l_k, u_k)` with `lambda` set by the
/// mass constraint.
fn box_min(gamma: GammaIndex, p: &[f64], lower: &[f64], upper: &[f64]) -> Result<f64> {
    if lower.iter().sum::<f64>() > 1.0 + 1e-15 || upper.iter().sum::<f64>() < 1.0 - 1e-15 {
        return Err(Error::InvalidInput("the event does not meet the simplex".into()));
    }
    let q_at = |lambda: f64| -> Vec<f64> {
        p.iter()
            .zip(lower.iter().zip(upper))
            .map(|(&pk, (&l, &u))| (pk * phi_prime_inverse(gamma, lambda)).clamp(l, u))
            .collect()
    };
    let excess = |lambda: f64| q_at(lambda).iter().sum::<f64>() - 1.0;
    let (mut lo, mut hi) = (-1.0, 1.0);
    while excess(lo) > 0.0 && lo > -1e12 {
        lo *= 2.0;
    }
    while excess(hi) < 0.0 && hi < 1e12 {
        hi *= 2.0;
    }
    let lambda = bisect(excess, lo, hi, 1e-15)?;
    let mut q = q_at(lambda);
    let total: f64 = q.iter().sum();
    let free: Vec<usize> = (0..q.len()).filter(|&k| q[k] > lower[k] && q[k] < upper[k]).collect();
    if let Some(&k) = free.first() {
        q[k] += 1.0 - total;
    }
    Ok(divergence_raw(gamma, &q, p))
}

/// Orthonormal basis of `{v : sum v = 0}` (Helmert vectors).
fn tangent_basis(k: usize) -> Vec<Vec<f64>> {
    (1..k)
        .map(|m| {
            let norm = ((m * (m + 1)) as f64).sqrt();
            (0..k)
                .map(|i| match i.cmp(&m) {
                    std::cmp::Ordering::Less => 1.0 / norm,
                    std::cmp::Ordering::Equal => -(m as f64) / norm,
                    std::cmp::Ordering::Greater => 0.0,
                })
                .collect()
        })
        .collect()
}

/// Unit vector on the sphere `S^{dim-1}` from `dim - 1` hyperspherical angles.
fn sphere_point(angles: &[f64]) -> Vec<f64> {
    let dim = angles.len() + 1;
    let mut out = vec![0.0; dim];
    let mut carry = 1.0;
    for (i, a) in angles.iter().enumerate() {
        out[i] = carry * a.cos();
        carry *= a.sin();
    }
    out[dim - 1] = carry;
    out
}

/// `min phi_w(Q, P)` over the level surface `{phi_d(Q, R) = t}` on the
/// simplex, searched along rays from `R`.
fn divergence_tail_min(
    weight_gamma: GammaIndex,
    p: &[f64],
    div_gamma: GammaIndex,
    reference: &[f64],
    threshold: f64,
) -> Result<f64> {
    let k = p.len();
    let along = |dir: &[f64]| -> f64 {
        let s_max = dir
            .iter()
            .zip(reference)
            .filter(|(d, _)| **d < 0.0)
            .map(|(d, r)| -r / d)
            .fold(f64::INFINITY, f64::min);
        let point = |s: f64| -> Vec<f64> {
            reference.iter().zip(dir).map(|(r, d)| (r + s * d).max(0.0)).collect()
        };
        let level = |s: f64| divergence_raw(div_gamma, &point(s), reference) - threshold;
        let at_edge = level(s_max);
        if at_edge < 0.0 && at_edge.is_finite() {
            return f64::INFINITY;
        }
        match bisect(level, 0.0, s_max, 1e-14) {
            Ok(s) => divergence_raw(weight_gamma, &point(s), p),
            Err(_) => f64::INFINITY,
        }
    };
    if k == 2 {
        let d = std::f64::consts::FRAC_1_SQRT_2;
        return Ok(along(&[d, -d]).min(along(&[-d, d])));
    }
    let basis = tangent_basis(k);
    let direction = |angles: &[f64]| -> Vec<f64> {
        let u = sphere_point(angles);
        (0..k).map(|i| basis.iter().zip(&u).map(|(b, c)| b[i] * c).sum()).collect()
    };
    if k == 3 {
        let tau = std::f64::consts::TAU;
        let f = |a: f64| along(&direction(&[a]));
        let grid = 1440;
        let step = tau / grid as f64;
        let (i_best, _) = (0..grid)
            .map(|i| (i, f(i as f64 * step)))
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .expect("nonempty grid");
        let centre = i_best as f64 * step;
        let (_, v) = golden_min(f, centre - step, centre + step, 1e-12);
        return Ok(v.min(f(centre)));
    }
    let dims = k - 2;
    let lower = vec![0.0; dims];
    let mut upper = vec![std::f64::consts::PI; dims];
    upper[dims - 1] = std::f64::consts::TAU;
    let tol = SimplexTolerance { ftol: 1e-12, xtol: 1e-9, max_iter: 20_000 };
    let best = halton_points(32, &lower, &upper)
        .iter()
        .map(|s| nelder_mead(|a| along(&direction(a)), s, &lower, &upper, tol).value)
        .fold(f64::INFINITY, f64::min);
    Ok(best)
}

/// The minimum of `phi_w(Q, P)` over the closure of the event.
fn min_divergence_over(base: &ProbVector, weight_gamma: GammaIndex, event: &EventSpec) -> Result<f64> {
    let p = base.entries();
    if event.contains(p) {
        return Ok(0.0);
    }
    let signed = weight_gamma_is_full_line(weight_gamma);
    match event {
        EventSpec::WholeSimplex => Ok(0.0),
        EventSpec::Halfspace { cell, bound, .. } => Ok(halfspace_min(weight_gamma, p, *cell, *bound)),
        EventSpec::SupNormBall { center, radius } => {
            let lower: Vec<f64> = center
                .entries()
                .iter()
                .map(|c| if signed { c - radius } else { (c - radius).max(0.0) })
                .collect();
            let upper: Vec<f64> = center.entries().iter().map(|c| c + radius).collect();
            box_min(weight_gamma, p, &lower, &upper)
        }
        EventSpec::SupNormTail { center, radius } => {
            let mut best = f64::INFINITY;
            for (j, &c) in center.entries().iter().enumerate() {
                for b in [c + radius, c - radius] {
                    if b < 1.0 && (b > 0.0 || (signed && b < 0.0)) {
                        best = best.min(halfspace_min(weight_gamma, p, j, b));
                    }
                }
            }
            Ok(best)
        }
        EventSpec::DivergenceTail { gamma, reference, threshold } => {
            divergence_tail_min(weight_gamma, p, *gamma, reference.entries(), *threshold)
        }
    }
}

/// `inf` over the event of the mass-infimum divergence from `base`, for the
/// divergence matched to the weights.
pub fn theoretical_rate(base: &ProbVector, weights: &WeightLawSpec, event: &EventSpec) -> Result<f64> {
    event.validate(base.len())?;
    base.require_strictly_positive()?;
    let d = min_divergence_over(base, weights.gamma(), event)?;
    if !d.is_finite() {
        return Err(Error::NonConvergence(format!(
            "no point of the event boundary was found (best value {d})"
        )));
    }
    mass_infimum_from_divergence(weights.gamma(), d)
}

// ---------------------------------------------------------------------------
// Slope regression

/// Outcome of a tolerance check.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Verdict {
    Pass,
    Fail,
}

impl Verdict {
    pub fn from_bool(ok: bool) -> Self {
        if ok {
            Self::Pass
        } else {
            Self::Fail
        }
    }

    pub fn passed(self) -> bool {
        self == Self::Pass
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Pass => "PASS",
            Self::Fail => "FAIL",
        }
    }
}

/// Regression and verdict settings shared by the rate experiments.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FitOptions {
    pub hit_floor: usize,
    pub relative_tolerance: f64,
    pub sigma_multiplier: f64,
    /// `kappa` in the regression of `log p + kappa log n` on `n`, applied
    /// when the theoretical rate is positive.
    pub prefactor_exponent: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            hit_floor: 50,
            relative_tolerance: 0.15,
            sigma_multiplier: 2.0,
            prefactor_exponent: 0.5,
        }
    }
}

/// Fitted decay slope of an event probability.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RateEstimate {
    pub points: Vec<McPoint>,
    pub slope: f64,
    pub slope_stderr: f64,
    pub intercept: f64,
    pub raw_slope: f64,
    pub raw_slope_stderr: f64,
    pub prefactor_exponent: f64,
    /// Rate derived for the experiment's weights and event.
    pub theoretical_rate: f64,
    /// Rate the verdict compares against.
    pub reference_rate: f64,
    pub verdict: Verdict,
}

struct Line {
    slope: f64,
    slope_stderr: f64,
    intercept: f64,
}

fn weighted_line(xs: &[f64], ys: &[f64], sds: &[f64]) -> Line {
    let w: Vec<f64> = sds.iter().map(|s| 1.0 / (s * s)).collect();
    let sw: f64 = w.iter().sum();
    let sx: f64 = w.iter().zip(xs).map(|(w, x)| w * x).sum();
    let sy: f64 = w.iter().zip(ys).map(|(w, y)| w * y).sum();
    let sxx: f64 = w.iter().zip(xs).map(|(w, x)| w * x * x).sum();
    let sxy: f64 = w.iter().zip(xs.iter().zip(ys)).map(|(w, (x, y))| w * x * y).sum();
    let det = sw * sxx - sx * sx;
    let slope = (sw * sxy - sx * sy) / det;
    let intercept = (sy - slope * sx) / sw;
    let mut var = sw / det;
    let m = xs.len();
    if m > 2 {
        let chi2: f64 = w
            .iter()
            .zip(xs.iter().zip(ys))
            .map(|(w, (x, y))| w * (y - intercept - slope * x).powi(2))
            .sum::<f64>()
            / (m - 2) as f64;
        if chi2 > 1.0 {
            var *= chi2;
        }
    }
    Line { slope, slope_stderr: var.sqrt(), intercept }
}

/// Within `max(relative * rate, sigma * stderr)` of `-rate`.
pub fn slope_matches(slope: f64, stderr: f64, rate: f64, opts: &FitOptions) -> bool {
    (slope + rate).abs() <= (opts.relative_tolerance * rate.abs()).max(opts.sigma_multiplier * stderr)
}

/// Weighted least squares of `log p + kappa log n` on `n` over the points
/// with at least `hit_floor` hits.
pub fn fit_points(points: Vec<McPoint>, theoretical_rate: f64, reference_rate: f64, opts: &FitOptions) -> Result<RateEstimate> {
    let used: Vec<&McPoint> = points.iter().filter(|p| !p.censored(opts.hit_floor)).collect();
    if used.len() < 2 {
        return Err(Error::InsufficientPoints { found: used.len() });
    }
    let kappa = if theoretical_rate > 0.0 { opts.prefactor_exponent } else { 0.0 };
    let xs: Vec<f64> = used.iter().map(|p| p.n as f64).collect();
    let sds: Vec<f64> = used.iter().map(|p| p.stderr.max(1.0 / p.replicas as f64)).collect();
    let raw_ys: Vec<f64> = used.iter().map(|p| p.log_phat).collect();
    let ys: Vec<f64> = used.iter().map(|p| p.log_phat + kappa * (p.n as f64).ln()).collect();
    let line = weighted_line(&xs, &ys, &sds);
    let raw = weighted_line(&xs, &raw_ys, &sds);
    let verdict = Verdict::from_bool(slope_matches(line.slope, line.slope_stderr, reference_rate, opts));
    Ok(RateEstimate {
        points,
        slope: line.slope,
        slope_stderr: line.slope_stderr,
        intercept: line.intercept,
        raw_slope: raw.slope,
        raw_slope_stderr: raw.slope_stderr,
        prefactor_exponent: kappa,
        theoretical_rate,
        reference_rate,
        verdict,
    })
}

/// Base law, weights, event and Monte Carlo design of a rate experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct RateExperimentConfig {
    pub base: ProbVector,
    pub weights: WeightLawSpec,
    pub event: EventSpec,
    pub n_grid: Vec<usize>,
    pub replicas: usize,
    pub seed: u64,
    pub fit: FitOptions,
}

/// Fewest replicas accepted per sample size.
pub const MIN_REPLICAS: usize = 10_000;

fn validate_design(n_grid: &[usize], replicas: usize) -> Result<()> {
    if n_grid.len() < 2 || n_grid.windows(2).any(|w| w[0] >= w[1]) || n_grid[0] == 0 {
        return Err(Error::InvalidInput(
            "n_grid needs at least 2 strictly increasing positive sizes".into(),
        ));
    }
    if replicas < MIN_REPLICAS {
        return Err(Error::InvalidInput(format!(
            "replicas = {replicas} is below the minimum of {MIN_REPLICAS}"
        )));
    }
    Ok(())
}

impl RateExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        validate_design(&self.n_grid, self.replicas)?;
        self.event.validate(self.base.len())?;
        self.base.require_strictly_positive()
    }
}

/// Runs the Monte Carlo grid and fits the slope against the theoretical
/// rate.
pub fn rate_fit(config: &RateExperimentConfig) -> Result<RateEstimate> {
    config.validate()?;
    let rate = theoretical_rate(&config.base, &config.weights, &config.event)?;
    let points = config
        .n_grid
        .iter()
        .map(|&n| mc_event_logprob(&config.base, &config.weights, &config.event, n, config.replicas, config.seed))
        .collect::<Result<Vec<_>>>()?;
    fit_points(points, rate, rate, &config.fit)
}

// ---------------------------------------------------------------------------
// Tail experiments

/// Design of a divergence-tail experiment: the probability that
/// `phi_{gamma_div}(normalized weighted measure, P)` exceeds `threshold`.
#[derive(Debug, Clone, PartialEq)]
pub struct TailExperimentConfig {
    pub base: ProbVector,
    pub gamma_div: GammaIndex,
    pub gamma_weights: GammaIndex,
    pub threshold: f64,
    pub n_grid: Vec<usize>,
    pub replicas: usize,
    pub seed: u64,
    pub fit: FitOptions,
}

/// A tail slope together with the rate claimed for matched weights.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TailEstimate {
    pub estimate: RateEstimate,
    /// `t (1 - gamma_div)`.
    pub claimed_rate: f64,
    /// Verdict of the slope against the theoretical rate of the weights used.
    pub exact_verdict: Verdict,
}

fn tail_event(cfg: &TailExperimentConfig) -> EventSpec {
    EventSpec::DivergenceTail {
        gamma: cfg.gamma_div,
        reference: cfg.base.clone(),
        threshold: cfg.threshold,
    }
}

/// Slope of `log P^W(phi_{gamma_div}(Q_n^W, P) > t)` with weights matched to
/// `gamma_weights`. The verdict compares against the claimed rate
/// `t (1 - gamma_div)`; `exact_verdict` against the derived rate.
pub fn matched_tail_experiment(cfg: &TailExperimentConfig) -> Result<TailEstimate> {
    let g = cfg.gamma_div.value();
    if !(g > 0.0 && g < 1.0) {
        return Err(Error::InvalidInput(format!("gamma_div = {g} must lie in (0, 1)")));
    }
    let weights = WeightLawSpec::new(cfg.gamma_weights)?;
    let rate_cfg = RateExperimentConfig {
        base: cfg.base.clone(),
        weights,
        event: tail_event(cfg),
        n_grid: cfg.n_grid.clone(),
        replicas: cfg.replicas,
        seed: cfg.seed,
        fit: cfg.fit,
    };
    let exact = rate_fit(&rate_cfg)?;
    let claimed_rate = cfg.threshold * (1.0 - g);
    let exact_verdict = exact.verdict;
    let verdict = Verdict::from_bool(slope_matches(exact.slope, exact.slope_stderr, claimed_rate, &cfg.fit));
    Ok(TailEstimate {
        estimate: RateEstimate { reference_rate: claimed_rate, verdict, ..exact },
        claimed_rate,
        exact_verdict,
    })
}

/// Matched and mismatched tail slopes on the same event.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WeightingComparison {
    pub matched: TailEstimate,
    pub mismatched: TailEstimate,
    /// `sqrt(se_matched^2 + se_mismatched^2)`.
    pub combined_stderr: f64,
    /// Mismatched slope at least the matched slope minus
    /// `sigma_multiplier` combined standard errors, and strictly larger.
    pub verdict: Verdict,
}

/// Runs the tail experiment with matched weights and with
/// `mismatched_gamma` weights.
pub fn weighting_comparison(cfg: &TailExperimentConfig, mismatched_gamma: GammaIndex) -> Result<WeightingComparison> {
    let matched = matched_tail_experiment(&TailExperimentConfig {
        gamma_weights: cfg.gamma_div,
        ..cfg.clone()
    })?;
    let mismatched = matched_tail_experiment(&TailExperimentConfig {
        gamma_weights: mismatched_gamma,
        ..cfg.clone()
    })?;
    let combined_stderr = matched.estimate.slope_stderr.hypot(mismatched.estimate.slope_stderr);
    let (sm, sx) = (matched.estimate.slope, mismatched.estimate.slope);
    let verdict = Verdict::from_bool(sx >= sm - cfg.fit.sigma_multiplier * combined_stderr && sx > sm);
    Ok(WeightingComparison { matched, mismatched, combined_stderr, verdict })
}

/// Coefficient of determination of the fit `y = beta x` (centered total sum
/// of squares), and `beta`.
pub fn line_through_origin(xs: &[f64], ys: &[f64]) -> (f64, f64) {
    let sxx: f64 = xs.iter().map(|x| x * x).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| x * y).sum();
    let beta = sxy / sxx;
    let mean = ys.iter().sum::<f64>() / ys.len() as f64;
    let ss_res: f64 = xs.iter().zip(ys).map(|(x, y)| (y - beta * x).powi(2)).sum();
    let ss_tot: f64 = ys.iter().map(|y| (y - mean).powi(2)).sum();
    (1.0 - ss_res / ss_tot, beta)
}

// ---------------------------------------------------------------------------
// Bahadur slopes

/// Design of a Bahadur-slope experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct BahadurConfig {
    pub gamma: GammaIndex,
    pub n_grid: Vec<usize>,
    /// Null replicas per sample size.
    pub replicas: usize,
    /// Independent draws of the alternative-sample statistic; the median is
    /// the threshold.
    pub alternative_draws: usize,
    pub seed: u64,
    pub fit: FitOptions,
}

/// Slopes of the p-value `L_n` for the divergence statistic and for the
/// sup-norm competitor.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BahadurEstimate {
    pub divergence: RateEstimate,
    pub sup_norm: RateEstimate,
    /// Thresholds per sample size: median divergence statistic and median
    /// sup-norm distance of the alternative sample.
    pub thresholds: Vec<(usize, f64, f64)>,
    /// `(1 - gamma) phi_gamma(P_alt, P_null)`.
    pub claimed_rate: f64,
    pub exact_verdict: Verdict,
    /// Sup-norm slope at least the divergence slope minus the allowed error.
    pub competitor_verdict: Verdict,
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let m = v.len();
    if m % 2 == 1 {
        v[m / 2]
    } else {
        0.5 * (v[m / 2 - 1] + v[m / 2])
    }
}

/// Estimates `L_n = P^W(T_{n,X} > T_{n,Z} | X)` with the null sample `X`
/// apportioned to `P_theta` and the alternative sample `Z` apportioned to
/// `P_theta'`, for the divergence statistic and the sup-norm distance.
pub fn bahadur_experiment(
    model: &dyn ParametricModel,
    theta: &[f64],
    theta_prime: &[f64],
    cfg: &BahadurConfig,
) -> Result<BahadurEstimate> {
    validate_design(&cfg.n_grid, cfg.replicas)?;
    if cfg.alternative_draws == 0 {
        return Err(Error::InvalidInput("alternative_draws must be positive".into()));
    }
    let p0 = model.prob(theta)?;
    let p1 = model.prob(theta_prime)?;
    let weights = WeightLawSpec::new(cfg.gamma)?;
    let k = p0.len();

    let d_alt = crate::divergence::divergence(cfg.gamma, p1.entries(), &p0)?;
    let s_alt = sup_distance(p1.entries(), p0.entries());
    let (div_rate, sup_rate) = if d_alt == 0.0 {
        (0.0, 0.0)
    } else {
        let div_event = EventSpec::DivergenceTail { gamma: cfg.gamma, reference: p0.clone(), threshold: d_alt };
        let sup_event = EventSpec::SupNormTail { center: p0.clone(), radius: s_alt };
        (theoretical_rate(&p0, &weights, &div_event)?, theoretical_rate(&p0, &weights, &sup_event)?)
    };

    let mut div_points = Vec::new();
    let mut sup_points = Vec::new();
    let mut thresholds = Vec::new();
    for &n in &cfg.n_grid {
        let alt_sums = CellSums::new(&weights, &apportion(&p1, n));
        let draws: Vec<(f64, f64)> = blocked(cfg.alternative_draws, cfg.seed, &[TAG_ALTERNATIVE, n as u64], |rng, size| {
            let mut q = vec![0.0; k];
            (0..size)
                .map(|_| {
                    if alt_sums.draw_normalized(rng, n, &mut q) {
                        let t = divergence_statistic(&p0, &q, cfg.gamma).unwrap_or(f64::INFINITY);
                        (t, sup_distance(&q, p0.entries()))
                    } else {
                        (f64::INFINITY, f64::INFINITY)
                    }
                })
                .collect::<Vec<_>>()
        })
        .into_iter()
        .flatten()
        .collect();
        let t_threshold = median(draws.iter().map(|d| d.0).collect());
        let s_threshold = median(draws.iter().map(|d| d.1).collect());
        thresholds.push((n, t_threshold, s_threshold));

        let null_sums = CellSums::new(&weights, &apportion(&p0, n));
        let (t_hits, s_hits) = blocked(cfg.replicas, cfg.seed, &[TAG_NULL, n as u64], |rng, size| {
            let mut q = vec![0.0; k];
            let (mut th, mut sh) = (0usize, 0usize);
            for _ in 0..size {
                if !null_sums.draw_normalized(rng, n, &mut q) {
                    continue;
                }
                let t = divergence_statistic(&p0, &q, cfg.gamma).unwrap_or(f64::INFINITY);
                th += usize::from(t > t_threshold);
                sh += usize::from(sup_distance(&q, p0.entries()) > s_threshold);
            }
            (th, sh)
        })
        .into_iter()
        .fold((0, 0), |a, b| (a.0 + b.0, a.1 + b.1));
        div_points.push(McPoint::from_hits(n, cfg.replicas, t_hits));
        sup_points.push(McPoint::from_hits(n, cfg.replicas, s_hits));
    }

    let g = cfg.gamma.value();
    let claimed_rate = (1.0 - g) * d_alt;
    let exact = fit_points(div_points, div_rate, div_rate, &cfg.fit)?;
    let exact_verdict = exact.verdict;
    let verdict = Verdict::from_bool(slope_matches(exact.slope, exact.slope_stderr, claimed_rate, &cfg.fit));
    let divergence = RateEstimate { reference_rate: claimed_rate, verdict, ..exact };
    let sup_norm = fit_points(sup_points, sup_rate, sup_rate, &cfg.fit)?;
    let allowed = cfg.fit.sigma_multiplier * divergence.slope_stderr.hypot(sup_norm.slope_stderr);
    let competitor_verdict = Verdict::from_bool(sup_norm.slope >= divergence.slope - allowed);
    Ok(BahadurEstimate {
        divergence,
        sup_norm,
        thresholds,
        claimed_rate,
        exact_verdict,
        competitor_verdict,
    })
}

// ---------------------------------------------------------------------------
// Neighborhood rates

/// Slope of the probability that the weighted measure of a `P_theta`
/// sample falls within sup-distance `epsilon` of `P_{theta_T}`, bracketed
/// by `alpha` and `beta` times the theoretical rate.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NeighborhoodEstimate {
    pub estimate: RateEstimate,
    pub alpha: f64,
    pub beta: f64,
    pub lower_rate: f64,
    pub upper_rate: f64,
    pub verdict: Verdict,
}

#[allow(clippy::too_many_arguments)]
pub fn neighborhood_experiment(
    model: &dyn ParametricModel,
    theta: &[f64],
    theta_true: &[f64],
    epsilon: f64,
    weights: &WeightLawSpec,
    n_grid: &[usize],
    replicas: usize,
    seed: u64,
    fit: FitOptions,
) -> Result<NeighborhoodEstimate> {
    const ALPHA: f64 = 0.5;
    const BETA: f64 = 2.0;
    let config = RateExperimentConfig {
        base: model.prob(theta)?,
        weights: *weights,
        event: EventSpec::SupNormBall { center: model.prob(theta_true)?, radius: epsilon },
        n_grid: n_grid.to_vec(),
        replicas,
        seed,
        fit,
    };
    let estimate = rate_fit(&config)?;
    let rate = estimate.theoretical_rate;
    let (lower_rate, upper_rate) = (ALPHA * rate, BETA * rate);
    let margin = fit.sigma_multiplier * estimate.slope_stderr;
    let decay = -estimate.slope;
    let verdict = Verdict::from_bool(decay >= lower_rate - margin && decay <= upper_rate + margin);
    Ok(NeighborhoodEstimate { estimate, alpha: ALPHA, beta: BETA, lower_rate, upper_rate, verdict })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::divergence::divergence;
    use crate::models::ExpFamilyModel;
    use proptest::prelude::*;

    fn pv(v: &[f64]) -> ProbVector {
        ProbVector::new(v.to_vec()).unwrap()
    }

    fn halfspace(cell: usize, bound: f64) -> EventSpec {
        EventSpec::Halfspace { cell, bound, direction: Direction::AtLeast }
    }

    #[test]
    fn whole_simplex_has_probability_one() {
        let spec = WeightLawSpec::new(1.0).unwrap();
        let pt = mc_event_logprob(&pv(&[0.5, 0.5]), &spec, &EventSpec::WholeSimplex, 20, 10_000, 1).unwrap();
        assert_eq!(pt.log_phat, 0.0);
        assert_eq!(theoretical_rate(&pv(&[0.5, 0.5]), &spec, &EventSpec::WholeSimplex).unwrap(), 0.0);
    }

    #[test]
    fn halfspace_rate_examples() {
        let p = pv(&[0.5, 0.5]);
        let r1 = theoretical_rate(&p, &WeightLawSpec::new(1.0).unwrap(), &halfspace(0, 0.6)).unwrap();
        assert!((r1 - 0.0199341).abs() < 1e-7);
        let r = theoretical_rate(&p, &WeightLawSpec::new(0.5).unwrap(), &halfspace(0, 0.6)).unwrap();
        let d = divergence(0.5, &[0.6, 0.4], &p).unwrap();
        assert!((r - (d - d * d / 8.0)).abs() < 1e-15);
        assert_eq!(theoretical_rate(&p, &WeightLawSpec::new(1.0).unwrap(), &halfspace(0, 0.4)).unwrap(), 0.0);
    }

    #[test]
    fn ball_around_base_has_zero_rate() {
        let p = pv(&[0.2, 0.3, 0.5]);
        let ev = EventSpec::SupNormBall { center: p.clone(), radius: 0.05 };
        assert_eq!(theoretical_rate(&p, &WeightLawSpec::new(0.0).unwrap(), &ev).unwrap(), 0.0);
    }

    #[test]
    fn ball_rate_matches_brute_force() {
        let p = pv(&[0.2, 0.3, 0.5]);
        let c = pv(&[0.4, 0.3, 0.3]);
        let radius = 0.05;
        for g in [-1.0, 0.0, 0.5, 1.0, 2.0] {
            let spec = WeightLawSpec::new(g).unwrap();
            let ev = EventSpec::SupNormBall { center: c.clone(), radius };
            let rate = theoretical_rate(&p, &spec, &ev).unwrap();
            let mut best = f64::INFINITY;
            let m = 400;
            for i in 0..=m {
                for j in 0..=m {
                    let q0 = c[0] - radius + 2.0 * radius * i as f64 / m as f64;
                    let q1 = c[1] - radius + 2.0 * radius * j as f64 / m as f64;
                    let q = [q0, q1, 1.0 - q0 - q1];
                    if ev.contains(&q) {
                        best = best.min(divergence(g, &q, &p).unwrap());
                    }
                }
            }
            let brute = mass_infimum_from_divergence(g, best).unwrap();
            assert!(rate <= brute + 1e-12 && brute - rate < 1e-5, "gamma {g}: {rate} vs {brute}");
        }
    }

    #[test]
    fn divergence_tail_rates() {
        let p = pv(&[0.5, 0.5]);
        let t = divergence(0.5, &[0.6, 0.4], &p).unwrap();
        let ev = EventSpec::DivergenceTail { gamma: 0.5.into(), reference: p.clone(), threshold: t };
        let r = theoretical_rate(&p, &WeightLawSpec::new(0.5).unwrap(), &ev).unwrap();
        assert!((r - (t - t * t / 8.0)).abs() < 1e-12);

        let p3 = pv(&[0.2, 0.3, 0.5]);
        let ev = EventSpec::DivergenceTail { gamma: 0.5.into(), reference: p3.clone(), threshold: 0.02 };
        for g in [0.0, 0.5] {
            let r = theoretical_rate(&p3, &WeightLawSpec::new(g).unwrap(), &ev).unwrap();
            let mut best = f64::INFINITY;
            let m = 1500;
            for i in 1..m {
                for j in 1..(m - i) {
                    let q = [i as f64 / m as f64, j as f64 / m as f64, 1.0 - (i + j) as f64 / m as f64];
                    if ev.contains(&q) {
                        best = best.min(divergence(g, &q, &p3).unwrap());
                    }
                }
            }
            let brute = mass_infimum_from_divergence(g, best).unwrap();
            assert!(r <= brute + 1e-12 && brute - r < 2e-4, "gamma {g}: {r} vs {brute}");
            if g == 0.5 {
                assert!((r - (0.02 - 0.02 * 0.02 / 8.0)).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn sup_tail_is_union_of_halfspaces() {
        let p = pv(&[0.5, 0.5]);
        let spec = WeightLawSpec::new(0.5).unwrap();
        let tail = EventSpec::SupNormTail { center: p.clone(), radius: 0.1 };
        let a = theoretical_rate(&p, &spec, &tail).unwrap();
        let b = theoretical_rate(&p, &spec, &halfspace(0, 0.6)).unwrap();
        assert!((a - b).abs() < 1e-15);
    }

    #[test]
    fn convolution_sums_match_direct_sums() {
        let counts = [12usize, 5, 3];
        for g in [-1.0, 0.0, 0.5, 1.0, 2.0] {
            let spec = WeightLawSpec::new(g).unwrap();
            let fast = CellSums::new(&spec, &counts);
            let slow = CellSums::direct(&spec, &counts);
            let stats = |s: &CellSums, seed| {
                let mut rng = rng::stream(seed, &[]);
                let mut out = [0.0; 3];
                let m = 40_000;
                let mut acc = [0.0; 3];
                let mut acc2 = [0.0; 3];
                for _ in 0..m {
                    s.draw(&mut rng, &mut out);
                    for c in 0..3 {
                        acc[c] += out[c];
                        acc2[c] += out[c] * out[c];
                    }
                }
                let mean: Vec<f64> = acc.iter().map(|a| a / m as f64).collect();
                let var: Vec<f64> = acc2.iter().zip(&mean).map(|(a, mu)| a / m as f64 - mu * mu).collect();
                (mean, var)
            };
            let (mf, vf) = stats(&fast, 1);
            let (ms, vs) = stats(&slow, 2);
            for c in 0..3 {
                let nc = counts[c] as f64;
                let se = (2.0 * nc / 40_000.0).sqrt();
                assert!((mf[c] - ms[c]).abs() < 5.0 * se, "gamma {g} cell {c}: mean {} vs {}", mf[c], ms[c]);
                assert!((vf[c] - nc).abs() < 0.1 * nc && (vs[c] - nc).abs() < 0.1 * nc, "gamma {g}: var {} {}", vf[c], vs[c]);
            }
        }
    }

    #[test]
    fn direct_route_gives_same_event_frequency() {
        let p = pv(&[0.5, 0.5]);
        let spec = WeightLawSpec::new(0.0).unwrap();
        let counts = apportion(&p, 40);
        let ev = halfspace(0, 0.6);
        let freq = |s: CellSums, seed| {
            let mut rng = rng::stream(seed, &[]);
            let mut q = [0.0; 2];
            (0..50_000).filter(|_| s.draw_normalized(&mut rng, 40, &mut q) && ev.contains(&q)).count() as f64 / 50_000.0
        };
        let a = freq(CellSums::new(&spec, &counts), 3);
        let b = freq(CellSums::direct(&spec, &counts), 4);
        let se = (2.0 * a * (1.0 - a) / 50_000.0).sqrt();
        assert!((a - b).abs() < 4.0 * se, "{a} vs {b}");
    }

    #[test]
    fn mc_is_deterministic_and_thread_independent() {
        let p = pv(&[0.5, 0.5]);
        let spec = WeightLawSpec::new(0.5).unwrap();
        let ev = halfspace(0, 0.6);
        let a = mc_event_logprob(&p, &spec, &ev, 100, 20_000, 9).unwrap();
        let pool = rayon::ThreadPoolBuilder::new().num_threads(3).build().unwrap();
        let b = pool.install(|| mc_event_logprob(&p, &spec, &ev, 100, 20_000, 9).unwrap());
        assert_eq!(a, b);
        assert!(a.log_phat <= 0.0 && a.stderr.is_finite());
    }

    #[test]
    fn regression_recovers_a_known_line() {
        let points: Vec<McPoint> = [100usize, 200, 300, 400]
            .iter()
            .map(|&n| {
                let p = (-0.02 * n as f64).exp() / (n as f64).sqrt();
                let hits = (p * 1e8).round() as usize;
                McPoint::from_hits(n, 100_000_000, hits)
            })
            .collect();
        let est = fit_points(points, 0.02, 0.02, &FitOptions::default()).unwrap();
        assert!((est.slope + 0.02).abs() < 1e-4, "{est:?}");
        assert!(est.raw_slope < est.slope);
        assert!(est.verdict.passed());
    }

    #[test]
    fn censored_points_are_excluded() {
        let points = vec![McPoint::from_hits(10, 10_000, 500), McPoint::from_hits(20, 10_000, 10)];
        assert_eq!(
            fit_points(points, 0.1, 0.1, &FitOptions::default()),
            Err(Error::InsufficientPoints { found: 1 })
        );
        assert_eq!(McPoint::from_hits(5, 100, 0).log_phat, f64::NEG_INFINITY);
    }

    #[test]
    fn config_validation() {
        let cfg = RateExperimentConfig {
            base: pv(&[0.5, 0.5]),
            weights: WeightLawSpec::new(1.0).unwrap(),
            event: halfspace(0, 0.6),
            n_grid: vec![50, 50],
            replicas: 100_000,
            seed: 1,
            fit: FitOptions::default(),
        };
        assert!(cfg.validate().is_err());
        assert!(RateExperimentConfig { n_grid: vec![50, 100], replicas: 100, ..cfg.clone() }.validate().is_err());
        assert!(RateExperimentConfig { n_grid: vec![50, 100], ..cfg.clone() }.validate().is_ok());
        assert!(RateExperimentConfig { event: halfspace(2, 0.6), n_grid: vec![50, 100], ..cfg }.validate().is_err());
    }

    #[test]
    fn small_rate_fit_passes() {
        let cfg = RateExperimentConfig {
            base: pv(&[0.5, 0.5]),
            weights: WeightLawSpec::new(0.0).unwrap(),
            event: halfspace(0, 0.65),
            n_grid: vec![20, 40, 60, 80, 100],
            replicas: 200_000,
            seed: 5,
            fit: FitOptions::default(),
        };
        let est = rate_fit(&cfg).unwrap();
        assert!(est.verdict.passed(), "{est:?}");
    }

    #[test]
    fn bahadur_with_equal_parameters_has_flat_slope() {
        let m = ExpFamilyModel::bernoulli(-2.0, 2.0).unwrap();
        let cfg = BahadurConfig {
            gamma: 0.5.into(),
            n_grid: vec![20, 40],
            replicas: 10_000,
            alternative_draws: 51,
            seed: 2,
            fit: FitOptions::default(),
        };
        let est = bahadur_experiment(&m, &[0.0], &[0.0], &cfg).unwrap();
        assert_eq!(est.divergence.theoretical_rate, 0.0);
        assert!(est.divergence.points.iter().all(|p| p.log_phat > -1.5));
    }

    #[test]
    fn line_fit_through_origin() {
        let (r2, beta) = line_through_origin(&[1.0, 2.0, 4.0], &[-0.5, -1.0, -2.0]);
        assert!((r2 - 1.0).abs() < 1e-15 && (beta + 0.5).abs() < 1e-15);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn rate_is_permutation_invariant(
            raw in prop::collection::vec(0.05f64..1.0, 3),
            radius in 0.01f64..0.1,
            g in prop::sample::select(vec![-1.0, 0.0, 0.5, 1.0, 2.0]),
            shift in 0usize..3,
        ) {
            let p = ProbVector::normalized(raw).unwrap();
            let c = pv(&[0.6, 0.3, 0.1]);
            let spec = WeightLawSpec::new(g).unwrap();
            let perm: Vec<usize> = (0..3).map(|i| (i + shift) % 3).collect();
            let ev = EventSpec::SupNormBall { center: c.clone(), radius };
            let ev_perm = EventSpec::SupNormBall { center: c.permuted(&perm).unwrap(), radius };
            let a = theoretical_rate(&p, &spec, &ev).unwrap();
            let b = theoretical_rate(&p.permuted(&perm).unwrap(), &spec, &ev_perm).unwrap();
            prop_assert!((a - b).abs() <= 1e-10 * (1.0 + a));
        }

        #[test]
        fn larger_events_have_smaller_rates(
            b1 in 0.55f64..0.9,
            db in 0.0f64..0.05,
            g in prop::sample::select(vec![-1.0, 0.0, 0.5, 1.0, 2.0]),
        ) {
            let p = pv(&[0.5, 0.3, 0.2]);
            let spec = WeightLawSpec::new(g).unwrap();
            let small = theoretical_rate(&p, &spec, &halfspace(0, b1 + db)).unwrap();
            let large = theoretical_rate(&p, &spec, &halfspace(0, b1)).unwrap();
            prop_assert!(large <= small + 1e-15);
            let r_small = theoretical_rate(&p, &spec, &EventSpec::SupNormBall { center: pv(&[0.1, 0.3, 0.6]), radius: 0.05 }).unwrap();
            let r_large = theoretical_rate(&p, &spec, &EventSpec::SupNormBall { center: pv(&[0.1, 0.3, 0.6]), radius: 0.05 + db }).unwrap();
            prop_assert!(r_large <= r_small + 1e-12);
        }
    }

    #[test]
    fn larger_events_never_lose_hits() {
        let p = pv(&[0.5, 0.5]);
        let spec = WeightLawSpec::new(1.0).unwrap();
        let a = mc_event_logprob(&p, &spec, &halfspace(0, 0.6), 60, 20_000, 4).unwrap();
        let b = mc_event_logprob(&p, &spec, &halfspace(0, 0.55), 60, 20_000, 4).unwrap();
        assert!(b.hits >= a.hits);
    }
}
