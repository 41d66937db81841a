//! The invariant suite behind `divboot selftest`.

use anyhow::Result;
use divboot_core::divergence::{
    conjugate_divergence, conjugate_phi, divergence, mass_infimum, mass_infimum_numeric, phi,
};
use divboot_core::empirical::{apportion, empirical_measure, weighted_empirical, Sample};
use divboot_core::estimation::{mde_fit, MdeProblem};
use divboot_core::ldp::{
    mc_event_logprob, rate_fit, theoretical_rate, Direction, EventSpec, FitOptions, RateExperimentConfig,
};
use divboot_core::models::{expfam_mean, expfam_prob, mle_normal_equation, multinomial_match_logprob, ExpFamilyModel};
use divboot_core::rng;
use divboot_core::weights::{
    certify_sampler, chernoff_numeric, default_mgf_points, normalize_weights, sample_weights, WeightLawSpec,
    WeightVector,
};
use divboot_core::{Alphabet, ProbVector};
use rand::Rng;

use crate::commands::Outcome;
use crate::output::{num, Table};

const GAMMAS: [f64; 8] = [-1.0, -0.5, 0.0, 0.25, 0.5, 0.75, 1.0, 2.0];

struct Check {
    name: &'static str,
    value: f64,
    tolerance: f64,
}

fn random_simplex(rng: &mut impl Rng, k: usize) -> ProbVector {
    let raw: Vec<f64> = (0..k).map(|_| 0.05 + rng.random::<f64>()).collect();
    ProbVector::normalized(raw).expect("positive masses")
}

/// `(max |phi(1)| and |phi'(1)|, max |phi''(1) - 1|)` by central differences.
fn generator_laws() -> (f64, f64) {
    let h = 1e-4;
    GAMMAS.iter().fold((0.0f64, 0.0f64), |(first, second), &g| {
        let d1 = (phi(g, 1.0 + h) - phi(g, 1.0 - h)) / (2.0 * h);
        let d2 = (phi(g, 1.0 + h) - 2.0 * phi(g, 1.0) + phi(g, 1.0 - h)) / (h * h);
        (first.max(phi(g, 1.0).abs()).max(d1.abs()), second.max((d2 - 1.0).abs()))
    })
}

fn conjugacy(seed: u64) -> Result<f64> {
    let mut rng = rng::stream(seed, &[0xC0]);
    let mut worst = 0.0f64;
    for _ in 0..200 {
        let p = random_simplex(&mut rng, 3);
        let q = random_simplex(&mut rng, 3);
        for g in GAMMAS {
            let a = conjugate_divergence(g, &p, &q)?;
            let b = divergence(g, q.entries(), &p)?;
            worst = worst.max((a - b).abs());
            let x = 0.1 + 3.0 * rng.random::<f64>();
            worst = worst.max((conjugate_phi(g, x) - phi(1.0 - g, x)).abs());
        }
    }
    Ok(worst)
}

fn chernoff() -> Result<f64> {
    let mut worst = 0.0f64;
    for g in GAMMAS {
        for i in 0..50 {
            let x = 0.05 + 0.1 * i as f64;
            worst = worst.max((chernoff_numeric(g, x)? - phi(g, x)).abs());
        }
    }
    Ok(worst)
}

fn mass_infimum_oracle(seed: u64) -> Result<f64> {
    let mut rng = rng::stream(seed, &[0x4D]);
    let mut worst = 0.0f64;
    for g in [0.5, -1.0, 2.0, 1.0, 0.0] {
        for _ in 0..20 {
            let p = random_simplex(&mut rng, 3);
            let q = random_simplex(&mut rng, 3);
            worst = worst.max((mass_infimum(g, &q, &p)? - mass_infimum_numeric(g, &q, &p)?).abs());
        }
    }
    Ok(worst)
}

fn weight_certification(seed: u64) -> Result<f64> {
    let mut failures = 0usize;
    for g in GAMMAS {
        let spec = WeightLawSpec::new(g)?;
        failures += certify_sampler(&spec, 100_000, seed, &default_mgf_points(g), 4.0)?
            .iter()
            .filter(|c| !c.pass)
            .count();
    }
    Ok(failures as f64)
}

fn normalization(seed: u64) -> Result<f64> {
    let mut worst = 0.0f64;
    for g in [0.0, 0.5, 1.0, 2.0] {
        let w = sample_weights(&WeightLawSpec::new(g)?, 997, seed)?;
        if let Some(z) = normalize_weights(&w) {
            worst = worst.max((z.as_slice().iter().sum::<f64>() - 1.0).abs());
        }
    }
    Ok(worst)
}

fn unit_weights() -> Result<f64> {
    let s = Sample::from_counts(Alphabet::indexed(3)?, &[4, 0, 7])?;
    let w = WeightVector::new(vec![1.0; 11])?;
    let a = weighted_empirical(&s, &w)?;
    let b = empirical_measure(&s);
    Ok(a.entries().iter().zip(b.entries()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max))
}

fn four_cell() -> Result<ExpFamilyModel> {
    Ok(ExpFamilyModel::new(
        Alphabet::indexed(4)?,
        vec![vec![0.0, 0.0], vec![1.0, 0.0], vec![0.0, 1.0], vec![1.0, 1.5]],
        vec![-4.0, -4.0],
        vec![4.0, 4.0],
    )?)
}

fn normal_equation(seed: u64) -> Result<f64> {
    let m = four_cell()?;
    let mut rng = rng::stream(seed, &[0x4E]);
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let th = [rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0)];
        let r = mle_normal_equation(&m, &expfam_mean(&m, &th))?;
        worst = worst.max((r.theta_hat[0] - th[0]).abs()).max((r.theta_hat[1] - th[1]).abs());
    }
    Ok(worst)
}

fn stirling() -> Result<f64> {
    let m = four_cell()?;
    let truth = expfam_prob(&m, &[0.3, -0.2])?;
    let theta = [-0.4, 0.5];
    let kl = divergence(1.0, truth.entries(), &expfam_prob(&m, &theta)?)?;
    let s = Sample::from_counts(Alphabet::indexed(4)?, &apportion(&truth, 10_000))?;
    Ok((multinomial_match_logprob(&m, &theta, &s)? / 10_000.0 + kl).abs())
}

fn bernoulli_mde() -> Result<f64> {
    let m = ExpFamilyModel::bernoulli(-5.0, 5.0)?;
    let mut worst = 0.0f64;
    for g in [-1.0, 0.0, 0.5, 1.0, 2.0] {
        let r = mde_fit(&MdeProblem::new(&m, vec![0.7, 0.3], g)?)?;
        worst = worst.max((r.theta_hat[0] - (0.3f64 / 0.7).ln()).abs());
    }
    Ok(worst)
}

fn kl_moment_matching() -> Result<f64> {
    let m = four_cell()?;
    let target = vec![0.35, 0.15, 0.3, 0.2];
    let r = mde_fit(&MdeProblem::new(&m, target.clone(), 1.0)?)?;
    let lhs = m.statistic_mean(&target);
    let rhs = expfam_mean(&m, &r.theta_hat);
    Ok(lhs.iter().zip(&rhs).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max))
}

fn permutation_invariance() -> Result<f64> {
    let p = ProbVector::new(vec![0.2, 0.3, 0.5])?;
    let c = ProbVector::new(vec![0.5, 0.3, 0.2])?;
    let perm = [2, 0, 1];
    let mut worst = 0.0f64;
    for g in [-1.0, 0.0, 0.5, 1.0, 2.0] {
        let spec = WeightLawSpec::new(g)?;
        let a = theoretical_rate(&p, &spec, &EventSpec::SupNormBall { center: c.clone(), radius: 0.05 })?;
        let b = theoretical_rate(
            &p.permuted(&perm)?,
            &spec,
            &EventSpec::SupNormBall { center: c.permuted(&perm)?, radius: 0.05 },
        )?;
        worst = worst.max((a - b).abs());
    }
    Ok(worst)
}

fn small_rate_fit(seed: u64) -> Result<f64> {
    let est = rate_fit(&RateExperimentConfig {
        base: ProbVector::uniform(2)?,
        weights: WeightLawSpec::new(0.0)?,
        event: EventSpec::Halfspace { cell: 0, bound: 0.65, direction: Direction::AtLeast },
        n_grid: vec![20, 40, 60, 80, 100],
        replicas: 200_000,
        seed,
        fit: FitOptions::default(),
    })?;
    let tol = (0.15 * est.theoretical_rate).max(2.0 * est.slope_stderr);
    Ok((est.slope + est.theoretical_rate).abs() / tol)
}

fn scheduling_independence(seed: u64) -> Result<f64> {
    let p = ProbVector::uniform(2)?;
    let spec = WeightLawSpec::new(0.5)?;
    let ev = EventSpec::Halfspace { cell: 0, bound: 0.6, direction: Direction::AtLeast };
    let serial = rayon::ThreadPoolBuilder::new().num_threads(1).build()?;
    let parallel = rayon::ThreadPoolBuilder::new().num_threads(4).build()?;
    let a = serial.install(|| mc_event_logprob(&p, &spec, &ev, 80, 50_000, seed))?;
    let b = parallel.install(|| mc_event_logprob(&p, &spec, &ev, 80, 50_000, seed))?;
    Ok(a.hits.abs_diff(b.hits) as f64)
}

/// Runs every check; the table has one row per check.
pub fn run(seed: u64) -> Result<Outcome> {
    let (first_order, curvature) = generator_laws();
    let checks = vec![
        Check { name: "generator_first_order", value: first_order, tolerance: 1e-6 },
        Check { name: "generator_curvature", value: curvature, tolerance: 1e-4 },
        Check { name: "conjugacy", value: conjugacy(seed)?, tolerance: 1e-12 },
        Check { name: "legendre_correspondence", value: chernoff()?, tolerance: 1e-6 },
        Check { name: "mass_infimum_oracle", value: mass_infimum_oracle(seed)?, tolerance: 1e-8 },
        Check { name: "weight_certification_failures", value: weight_certification(seed)?, tolerance: 0.0 },
        Check { name: "normalized_weight_mass", value: normalization(seed)?, tolerance: 0.0 },
        Check { name: "unit_weight_empirical", value: unit_weights()?, tolerance: 0.0 },
        Check { name: "normal_equation_round_trip", value: normal_equation(seed)?, tolerance: 1e-8 },
        Check { name: "stirling_bridge", value: stirling()?, tolerance: 0.01 },
        Check { name: "bernoulli_mde_logit", value: bernoulli_mde()?, tolerance: 1e-6 },
        Check { name: "kl_mde_moment_matching", value: kl_moment_matching()?, tolerance: 1e-8 },
        Check { name: "rate_permutation_invariance", value: permutation_invariance()?, tolerance: 1e-10 },
        Check { name: "small_rate_fit_tolerance_ratio", value: small_rate_fit(seed)?, tolerance: 1.0 },
        Check { name: "scheduling_independence", value: scheduling_independence(seed)?, tolerance: 0.0 },
    ];
    let mut table = Table::new(["check", "value", "tolerance", "verdict"]);
    let mut passed = true;
    for c in &checks {
        let ok = c.value <= c.tolerance;
        passed &= ok;
        table.row([c.name.to_string(), num(c.value), num(c.tolerance), (if ok { "PASS" } else { "FAIL" }).to_string()]);
    }
    Ok(Outcome { table, passed })
}
