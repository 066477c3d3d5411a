//! Multiple imputation of the nullable covariates by chained equations, and
//! pooling of the per-completion estimates with Rubin's rules.

use rand::seq::IndexedRandom;
use rand::Rng;
use rand_distr::{ChiSquared, Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Field, GuestRecord};
use crate::effect::EffectEstimate;
use crate::error::{Error, Result};
use crate::linalg::{cholesky, cholesky_inverse, cholesky_solve, lower_mul, weighted_normal_equations};
use crate::logit::{fit_logit, LogitOptions};
use crate::rng::{stream, Domain};
use crate::stats::{logistic, mean, two_sided_normal_p};

/// Sweep order over the incomplete fields.
pub const IMPUTATION_ORDER: [Field; 5] = [
    Field::Age,
    Field::TtDiffMin,
    Field::CarOwner,
    Field::Woman,
    Field::HighIncome,
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ImputeOptions {
    pub m: usize,
    pub donors: usize,
    pub burn_in: usize,
    pub seed: u64,
}

impl Default for ImputeOptions {
    fn default() -> Self {
        ImputeOptions {
            m: 5,
            donors: 5,
            burn_in: 10,
            seed: 0,
        }
    }
}

/// `m` completed copies of `d` with the default donor count and burn-in.
pub fn impute_chained(d: &Dataset, m: usize, seed: u64) -> Result<Vec<Dataset>> {
    impute_chained_with(
        d,
        &ImputeOptions {
            m,
            seed,
            ..Default::default()
        },
    )
}

pub fn impute_chained_with(d: &Dataset, opts: &ImputeOptions) -> Result<Vec<Dataset>> {
    if opts.m < 1 {
        return Err(Error::Config("imputation count m must be at least 1".into()));
    }
    if opts.donors < 1 {
        return Err(Error::Config("donor count must be at least 1".into()));
    }
    let n = d.len();
    let mut targets = Vec::new();
    for f in IMPUTATION_ORDER {
        let observed = d.records().iter().filter(|r| f.value(r).is_some()).count();
        if observed == n {
            continue;
        }
        if observed == 0 {
            return Err(Error::InsufficientData(format!("`{f}` has no observed values")));
        }
        if 2 * observed < n {
            return Err(Error::InsufficientData(format!(
                "`{f}` is observed in {observed} of {n} records, below one half"
            )));
        }
        targets.push(f);
    }
    if targets.is_empty() {
        return Ok(vec![d.clone(); opts.m]);
    }
    (0..opts.m)
        .into_par_iter()
        .map(|chain| run_chain(d, &targets, opts, chain))
        .collect()
}

/// Predictors for `target`: every other covariate plus treatment and outcome.
fn predictors(target: Field) -> Vec<Field> {
    Field::COVARIATES
        .into_iter()
        .filter(|&f| f != target)
        .chain([Field::Informed, Field::UsedPt])
        .collect()
}

fn design(records: &[GuestRecord], fields: &[Field]) -> Vec<Vec<f64>> {
    records
        .iter()
        .map(|r| fields.iter().map(|f| f.value(r).expect("filled")).collect())
        .collect()
}

fn run_chain(d: &Dataset, targets: &[Field], opts: &ImputeOptions, chain: usize) -> Result<Dataset> {
    let mut rng = stream(opts.seed, Domain::Imputation, chain as u64);
    let mut records = d.records().to_vec();
    let missing: Vec<Vec<usize>> = targets
        .iter()
        .map(|f| (0..records.len()).filter(|&i| f.value(&records[i]).is_none()).collect())
        .collect();
    let observed: Vec<Vec<usize>> = targets
        .iter()
        .map(|f| (0..records.len()).filter(|&i| f.value(&records[i]).is_some()).collect())
        .collect();

    // Start from random draws of the observed values.
    for (k, &f) in targets.iter().enumerate() {
        let pool: Vec<f64> = observed[k].iter().map(|&i| f.value(&records[i]).unwrap()).collect();
        for &i in &missing[k] {
            let v = *pool.choose(&mut rng).expect("observed values exist");
            f.set(&mut records[i], Some(v));
        }
    }

    for _ in 0..opts.burn_in {
        for (k, &f) in targets.iter().enumerate() {
            let x = design(&records, &predictors(f));
            let obs_x: Vec<Vec<f64>> = observed[k].iter().map(|&i| x[i].clone()).collect();
            let obs_y: Vec<f64> = observed[k].iter().map(|&i| f.value(&records[i]).unwrap()).collect();
            let mis_x: Vec<Vec<f64>> = missing[k].iter().map(|&i| x[i].clone()).collect();
            let draws = if f.is_binary() {
                draw_binary(f, &obs_x, &obs_y, &mis_x, &mut rng)
            } else {
                draw_pmm(f, &obs_x, &obs_y, &mis_x, opts.donors, &mut rng)
            };
            for (&i, v) in missing[k].iter().zip(draws) {
                f.set(&mut records[i], Some(v));
            }
        }
    }
    Ok(d.with_records(records))
}

fn dot(beta: &[f64], row: &[f64]) -> f64 {
    beta[0] + row.iter().zip(&beta[1..]).map(|(a, b)| a * b).sum::<f64>()
}

/// `beta_hat + scale * L z` where `L L^T = (X^T W X)^{-1}`.
fn perturb<R: Rng>(beta: &[f64], xtwx_factor: &[f64], scale: f64, rng: &mut R) -> Option<Vec<f64>> {
    let p = beta.len();
    let cov = cholesky_inverse(xtwx_factor, p);
    let l = cholesky(&cov, p, 1e-14)?;
    let z: Vec<f64> = (0..p).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
    let shift = lower_mul(&l, p, &z);
    Some(beta.iter().zip(shift).map(|(b, s)| b + scale * s).collect())
}

/// Predictive mean matching: observed rows are scored with the least-squares
/// fit, missing rows with a posterior draw of the coefficients, and each
/// missing cell takes the value of a random donor among the closest
/// observed predictions.
fn draw_pmm<R: Rng>(f: Field, x: &[Vec<f64>], y: &[f64], xm: &[Vec<f64>], donors: usize, rng: &mut R) -> Vec<f64> {
    let n = x.len();
    let p = x.first().map_or(0, Vec::len) + 1;
    let (xtx, xty) = weighted_normal_equations(x, &vec![1.0; n], y);
    let fit = cholesky(&xtx, p, 1e-10).map(|l| (cholesky_solve(&l, p, &xty), l));
    let (beta_hat, beta_star) = match fit {
        Some((b, l)) if n > p => {
            let rss: f64 = x.iter().zip(y).map(|(r, yi)| (yi - dot(&b, r)).powi(2)).sum();
            let chi: f64 = ChiSquared::new((n - p) as f64).unwrap().sample(rng);
            let sigma = (rss / chi).sqrt();
            let star = perturb(&b, &l, sigma, rng).unwrap_or_else(|| b.clone());
            (b, star)
        }
        _ => {
            log::warn!("imputation model for `{f}` is singular; drawing random donors");
            let mut b = vec![0.0; p];
            b[0] = mean(y);
            (b.clone(), b)
        }
    };
    let mut fitted: Vec<(f64, f64)> = x.iter().zip(y).map(|(r, &yi)| (dot(&beta_hat, r), yi)).collect();
    fitted.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    let k = donors.min(n);
    xm.iter()
        .map(|r| {
            let target = dot(&beta_star, r);
            // Window of the k nearest fitted values around the insertion point.
            let at = fitted.partition_point(|v| v.0 < target);
            let (mut lo, mut hi) = (at, at);
            while hi - lo < k {
                let take_left = match (lo > 0, hi < n) {
                    (true, true) => target - fitted[lo - 1].0 <= fitted[hi].0 - target,
                    (l, _) => l,
                };
                if take_left {
                    lo -= 1;
                } else {
                    hi += 1;
                }
            }
            fitted[rng.random_range(lo..hi)].1
        })
        .collect()
}

/// Logistic regression draw; falls back to the observed share when the
/// model cannot be fitted.
fn draw_binary<R: Rng>(f: Field, x: &[Vec<f64>], y: &[f64], xm: &[Vec<f64>], rng: &mut R) -> Vec<f64> {
    let labels: Vec<bool> = y.iter().map(|&v| v >= 0.5).collect();
    let names: Vec<String> = (0..x.first().map_or(0, Vec::len)).map(|j| format!("x{j}")).collect();
    let beta = fit_logit(x, &labels, &names, &LogitOptions::default()).ok().and_then(|m| {
        let p = m.coefficients.len();
        let w: Vec<f64> = m.fitted.iter().map(|&q| (q * (1.0 - q)).max(1e-12)).collect();
        let (xtwx, _) = weighted_normal_equations(x, &w, &vec![0.0; x.len()]);
        let l = cholesky(&xtwx, p, 1e-12)?;
        perturb(&m.coefficients, &l, 1.0, rng)
    });
    match beta {
        Some(b) => xm
            .iter()
            .map(|r| (rng.random::<f64>() < logistic(dot(&b, r))) as u8 as f64)
            .collect(),
        None => {
            log::warn!("logit imputation model for `{f}` failed; using the observed share");
            let share = mean(y);
            xm.iter().map(|_| (rng.random::<f64>() < share) as u8 as f64).collect()
        }
    }
}

/// Combines estimates from `m` completed datasets: mean point estimate,
/// total variance `W + (1 + 1/m) B` with `W` the mean squared standard error
/// and `B` the between-completion variance, normal p-value.
pub fn pool_rubin(estimates: &[EffectEstimate]) -> Result<EffectEstimate> {
    if estimates.len() < 2 {
        return Err(Error::InsufficientData("pooling needs at least two estimates".into()));
    }
    let first = &estimates[0];
    for e in estimates {
        if e.method != first.method || e.estimand != first.estimand {
            return Err(Error::Incompatible(format!(
                "cannot pool {} {} with {} {}",
                first.method, first.estimand, e.method, e.estimand
            )));
        }
    }
    let ses: Vec<f64> = estimates
        .iter()
        .map(|e| {
            e.standard_error
                .ok_or_else(|| Error::Incompatible(format!("{} estimate has no standard error", e.method)))
        })
        .collect::<Result<_>>()?;
    let m = estimates.len() as f64;
    let points: Vec<f64> = estimates.iter().map(|e| e.estimate).collect();
    let q = mean(&points);
    let within = ses.iter().map(|s| s * s).sum::<f64>() / m;
    let between = points.iter().map(|x| (x - q).powi(2)).sum::<f64>() / (m - 1.0);
    let se = (within + (1.0 + 1.0 / m) * between).sqrt();
    Ok(EffectEstimate {
        estimate: q,
        standard_error: Some(se),
        p_value: Some(two_sided_normal_p(q, se)),
        estimand: first.estimand,
        method: first.method.clone(),
        n_used: first.n_used,
        seed: first.seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::effect::Estimand;

    fn est(v: f64, se: f64) -> EffectEstimate {
        let mut e = EffectEstimate::new(v, Estimand::Ate, "psm", 100);
        e.standard_error = Some(se);
        e
    }

    #[test]
    fn rubin_hand_arithmetic() {
        let p = pool_rubin(&[est(0.10, 0.05), est(0.14, 0.05)]).unwrap();
        assert!((p.estimate - 0.12).abs() < 1e-12);
        assert!((p.standard_error.unwrap() - 0.0037f64.sqrt()).abs() < 1e-12);
        assert!((p.standard_error.unwrap() - 0.0608).abs() < 1e-4);
    }

    #[test]
    fn rubin_identical_estimates() {
        let p = pool_rubin(&vec![est(0.12, 0.04); 5]).unwrap();
        assert!((p.estimate - 0.12).abs() < 1e-12);
        assert!((p.standard_error.unwrap() - 0.04).abs() < 1e-12);
    }

    #[test]
    fn rubin_rejects_mixed_labels() {
        let mut b = est(0.1, 0.05);
        b.method = "causal_forest".into();
        assert!(matches!(pool_rubin(&[est(0.1, 0.05), b]), Err(Error::Incompatible(_))));
        let mut c = est(0.1, 0.05);
        c.estimand = Estimand::Ato;
        assert!(pool_rubin(&[est(0.1, 0.05), c]).is_err());
    }
}
