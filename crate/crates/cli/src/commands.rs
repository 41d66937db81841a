//! Execution of each experiment kind.

use std::path::Path;

use anyhow::{bail, Context, Result};
use divboot_core::divergence::{
    conjugate_divergence, divergence, mass_infimum, GammaIndex,
};
use divboot_core::empirical::{empirical_measure, Sample};
use divboot_core::estimation::{bootstrap_mde, mde_fit, MdeProblem};
use divboot_core::ldp::{
    bahadur_experiment, matched_tail_experiment, neighborhood_experiment, rate_fit, BahadurConfig,
    RateEstimate, RateExperimentConfig, TailExperimentConfig,
};
use divboot_core::models::{EstimationResult, ParametricModel};
use divboot_core::weights::{certify_sampler, default_mgf_points, sample_weights, WeightLawSpec};
use divboot_core::{Alphabet, ProbVector};

use crate::config::ExperimentConfig;
use crate::output::{num, Table};
use crate::selftest;

/// A rendered result and whether every verdict in it passed.
pub struct Outcome {
    pub table: Table,
    pub passed: bool,
}

/// Reads a one-column CSV with header `symbol`.
pub fn ingest_sample(path: &Path, alphabet: &Alphabet) -> Result<Sample> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .with_context(|| format!("cannot open sample file {}", path.display()))?;
    let headers = reader.headers().context("sample file has no header")?.clone();
    if headers.len() != 1 || &headers[0] != "symbol" {
        bail!("sample file {} must have the single header `symbol`", path.display());
    }
    let mut sample = Sample::new(alphabet.clone());
    for (i, record) in reader.records().enumerate() {
        let record = record.with_context(|| format!("malformed row {}", i + 1))?;
        let symbol = record.get(0).unwrap_or("").trim();
        sample
            .push_symbol(symbol)
            .with_context(|| format!("row {}: unknown symbol {symbol:?}", i + 1))?;
    }
    if sample.is_empty() {
        bail!("sample file {} has no observations", path.display());
    }
    Ok(sample)
}

fn rate_table(est: &RateEstimate) -> Table {
    let mut t = Table::new(["n", "log_phat", "stderr", "hits"]);
    for p in &est.points {
        t.row([p.n.to_string(), num(p.log_phat), num(p.stderr), p.hits.to_string()]);
    }
    rate_footer(&mut t, est);
    t
}

fn rate_footer(t: &mut Table, est: &RateEstimate) {
    t.footer("slope", num(est.slope));
    t.footer("slope_stderr", num(est.slope_stderr));
    t.footer("intercept", num(est.intercept));
    t.footer("raw_slope", num(est.raw_slope));
    t.footer("prefactor_exponent", num(est.prefactor_exponent));
    t.footer("theoretical_rate", num(est.reference_rate));
    t.footer("derived_rate", num(est.theoretical_rate));
    t.footer("verdict", est.verdict.as_str());
}

fn estimation_rows(t: &mut Table, r: &EstimationResult) {
    for (i, v) in r.theta_hat.iter().enumerate() {
        t.row([format!("theta_{}", i + 1), num(*v)]);
    }
    t.row(["objective".to_string(), num(r.objective_value)]);
    t.row(["iterations".to_string(), r.iterations.to_string()]);
    t.row(["converged".to_string(), r.converged.to_string()]);
    t.row(["multistart_best_of".to_string(), r.multistart_best_of.to_string()]);
}

fn load_sample(model: &dyn ParametricModel, data: &Path) -> Result<Sample> {
    ingest_sample(data, model.alphabet())
}

pub fn execute(cfg: &ExperimentConfig) -> Result<Outcome> {
    match cfg {
        ExperimentConfig::LdpRate { law, gamma_weights, event, n_grid, replicas, seed, fit, .. } => {
            let est = rate_fit(&RateExperimentConfig {
                base: law.resolve()?,
                weights: WeightLawSpec::new(*gamma_weights)?,
                event: event.clone(),
                n_grid: n_grid.clone(),
                replicas: *replicas,
                seed: *seed,
                fit: *fit,
            })?;
            Ok(Outcome { passed: est.verdict.passed(), table: rate_table(&est) })
        }
        ExperimentConfig::TailRate { law, gamma_div, gamma_weights, threshold, n_grid, replicas, seed, fit, .. } => {
            let est = matched_tail_experiment(&TailExperimentConfig {
                base: law.resolve()?,
                gamma_div: GammaIndex::new(*gamma_div),
                gamma_weights: GammaIndex::new(*gamma_weights),
                threshold: *threshold,
                n_grid: n_grid.resolve(Some(*threshold))?,
                replicas: *replicas,
                seed: *seed,
                fit: *fit,
            })?;
            let mut table = rate_table(&est.estimate);
            table.footer("claimed_rate", num(est.claimed_rate));
            table.footer("derived_verdict", est.exact_verdict.as_str());
            Ok(Outcome { passed: est.estimate.verdict.passed(), table })
        }
        ExperimentConfig::Bahadur { model, theta, theta_prime, gamma, n_grid, replicas, alternative_draws, seed, fit, .. } => {
            let m = model.build()?;
            let est = bahadur_experiment(
                m.as_ref(),
                theta,
                theta_prime,
                &BahadurConfig {
                    gamma: GammaIndex::new(*gamma),
                    n_grid: n_grid.clone(),
                    replicas: *replicas,
                    alternative_draws: *alternative_draws,
                    seed: *seed,
                    fit: *fit,
                },
            )?;
            let mut t = Table::new([
                "n",
                "log_phat",
                "stderr",
                "hits",
                "sup_log_phat",
                "sup_stderr",
                "sup_hits",
                "threshold",
                "sup_threshold",
            ]);
            for ((d, s), th) in est.divergence.points.iter().zip(&est.sup_norm.points).zip(&est.thresholds) {
                t.row([
                    d.n.to_string(),
                    num(d.log_phat),
                    num(d.stderr),
                    d.hits.to_string(),
                    num(s.log_phat),
                    num(s.stderr),
                    s.hits.to_string(),
                    num(th.1),
                    num(th.2),
                ]);
            }
            rate_footer(&mut t, &est.divergence);
            t.footer("derived_verdict", est.exact_verdict.as_str());
            t.footer("sup_slope", num(est.sup_norm.slope));
            t.footer("sup_slope_stderr", num(est.sup_norm.slope_stderr));
            t.footer("sup_derived_rate", num(est.sup_norm.theoretical_rate));
            t.footer("competitor_verdict", est.competitor_verdict.as_str());
            Ok(Outcome {
                passed: est.divergence.verdict.passed() && est.competitor_verdict.passed(),
                table: t,
            })
        }
        ExperimentConfig::Neighborhood { model, theta, theta_true, epsilon, gamma_weights, n_grid, replicas, seed, fit, .. } => {
            let m = model.build()?;
            let est = neighborhood_experiment(
                m.as_ref(),
                theta,
                theta_true,
                *epsilon,
                &WeightLawSpec::new(*gamma_weights)?,
                n_grid,
                *replicas,
                *seed,
                *fit,
            )?;
            let mut t = rate_table(&est.estimate);
            t.footer("alpha", num(est.alpha));
            t.footer("beta", num(est.beta));
            t.footer("lower_rate", num(est.lower_rate));
            t.footer("upper_rate", num(est.upper_rate));
            t.footer("bracket_verdict", est.verdict.as_str());
            Ok(Outcome { passed: est.verdict.passed(), table: t })
        }
        ExperimentConfig::WeightsCheck { gammas, n, seed, k_sigma, .. } => {
            let mut t = Table::new(["gamma", "statistic", "estimate", "expected", "stderr", "verdict"]);
            let mut passed = true;
            for &g in gammas {
                let spec = WeightLawSpec::new(g)?;
                for c in certify_sampler(&spec, *n, *seed, &default_mgf_points(g), *k_sigma)? {
                    passed &= c.pass;
                    t.row([
                        num(g),
                        c.statistic,
                        num(c.estimate),
                        num(c.expected),
                        num(c.stderr),
                        (if c.pass { "PASS" } else { "FAIL" }).to_string(),
                    ]);
                }
            }
            Ok(Outcome { table: t, passed })
        }
        ExperimentConfig::Estimate { model, data, gamma, options, .. } => {
            let m = model.build()?;
            let s = load_sample(m.as_ref(), data)?;
            let target = empirical_measure(&s);
            let r = mde_fit(&MdeProblem::from_prob(m.as_ref(), &target, *gamma)?.with_options(*options))?;
            let mut t = Table::new(["quantity", "value"]);
            estimation_rows(&mut t, &r);
            Ok(Outcome { table: t, passed: true })
        }
        ExperimentConfig::Bootstrap { model, data, gamma, gamma_weights, draws, seed, options, .. } => {
            let m = model.build()?;
            let s = load_sample(m.as_ref(), data)?;
            let spec = WeightLawSpec::new(gamma_weights.unwrap_or(*gamma))?;
            let d = m.dim();
            let mut header = vec!["draw".to_string()];
            header.extend((1..=d).map(|i| format!("theta_{i}")));
            header.push("objective".into());
            header.push("status".into());
            let mut t = Table::new(header);
            for b in 0..*draws {
                let w = sample_weights(&spec, s.len(), divboot_core::rng::derive_seed(*seed, &[b as u64]))?;
                let mut row = vec![b.to_string()];
                match bootstrap_mde(m.as_ref(), &s, *gamma, &w, *options) {
                    Ok(r) => {
                        row.extend(r.theta_hat.iter().map(|v| num(*v)));
                        row.push(num(r.objective_value));
                        row.push("ok".into());
                    }
                    Err(e) => {
                        row.extend(std::iter::repeat_n(String::new(), d + 1));
                        row.push(e.to_string());
                    }
                }
                t.row(row);
            }
            Ok(Outcome { table: t, passed: true })
        }
        ExperimentConfig::Selftest { seed, .. } => selftest::run(*seed),
    }
}

/// Divergence quantities between two probability vectors.
pub fn divergence_report(gamma: f64, q: &[f64], p: &[f64]) -> Result<Table> {
    let qv = ProbVector::new(q.to_vec())?;
    let pv = ProbVector::new(p.to_vec())?;
    let mut t = Table::new(["quantity", "value"]);
    t.row(["divergence".to_string(), num(divergence(gamma, q, &pv)?)]);
    if qv.is_strictly_positive() {
        t.row(["conjugate_divergence".to_string(), num(conjugate_divergence(gamma, &pv, &qv)?)]);
        t.row(["mass_infimum".to_string(), num(mass_infimum(gamma, &qv, &pv)?)]);
    }
    Ok(t)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write(text: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(text.as_bytes()).unwrap();
        f
    }

    #[test]
    fn ingest_counts() {
        let a = Alphabet::indexed(2).unwrap();
        let f = write("symbol\nd1\nd1\nd2\n");
        assert_eq!(ingest_sample(f.path(), &a).unwrap().counts(), &[2, 1]);
    }

    #[test]
    fn ingest_errors() {
        let a = Alphabet::indexed(2).unwrap();
        assert!(ingest_sample(write("").path(), &a).is_err());
        assert!(ingest_sample(write("symbol\n").path(), &a).is_err());
        let err = ingest_sample(write("symbol\nd1\nd9\n").path(), &a).unwrap_err();
        assert!(format!("{err:#}").contains("row 2"), "{err:#}");
        assert!(ingest_sample(write("label\nd1\n").path(), &a).is_err());
    }
}
