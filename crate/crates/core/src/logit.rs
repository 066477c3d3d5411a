//! Maximum-likelihood logistic regression for propensity scores, fitted by
//! iteratively reweighted least squares with step-halving.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{cholesky, cholesky_solve, weighted_normal_equations};
use crate::stats::logistic;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogitOptions {
    /// Convergence threshold on the max-norm of the score vector.
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl Default for LogitOptions {
    fn default() -> Self {
        LogitOptions {
            tolerance: 1e-8,
            max_iterations: 100,
        }
    }
}

const STEP_TOLERANCE: f64 = 1e-10;
const SEPARATION_NORM: f64 = 30.0;
const PIVOT_TOLERANCE: f64 = 1e-13;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogitModel {
    /// Intercept first, then one slope per covariate.
    pub coefficients: Vec<f64>,
    pub covariate_names: Vec<String>,
    pub converged: bool,
    pub log_likelihood: f64,
    pub iterations: usize,
    /// Log-likelihood after each accepted step, starting at the initial point.
    pub log_likelihood_trace: Vec<f64>,
    /// Fitted probabilities for the training rows, in input order.
    pub fitted: Vec<f64>,
    /// Max-norm of the score at the returned coefficients.
    pub gradient_norm: f64,
}

impl LogitModel {
    pub fn linear_index(&self, row: &[f64]) -> Result<f64> {
        let k = self.coefficients.len() - 1;
        if row.len() != k {
            return Err(Error::Dimension {
                expected: k,
                got: row.len(),
            });
        }
        Ok(self.coefficients[0]
            + row
                .iter()
                .zip(&self.coefficients[1..])
                .map(|(x, b)| x * b)
                .sum::<f64>())
    }

    /// Propensity for one covariate row, strictly inside (0,1).
    pub fn predict_proba(&self, row: &[f64]) -> Result<f64> {
        Ok(open_unit(logistic(self.linear_index(row)?)))
    }
}

/// Keeps a probability off the closed boundary.
pub(crate) fn open_unit(p: f64) -> f64 {
    const LO: f64 = f64::MIN_POSITIVE;
    const HI: f64 = 1.0 - f64::EPSILON / 2.0;
    p.clamp(LO, HI)
}

fn log_likelihood(index: &[f64], y: &[f64]) -> f64 {
    // log p = -log(1+e^{-z}), log(1-p) = -log(1+e^{z})
    index
        .iter()
        .zip(y)
        .map(|(&z, &yi)| {
            let l1 = -softplus(-z);
            let l0 = -softplus(z);
            yi * l1 + (1.0 - yi) * l0
        })
        .sum()
}

fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

fn indices(x: &[Vec<f64>], beta: &[f64]) -> Vec<f64> {
    x.iter()
        .map(|row| beta[0] + row.iter().zip(&beta[1..]).map(|(a, b)| a * b).sum::<f64>())
        .collect()
}

fn score(x: &[Vec<f64>], y: &[f64], p: &[f64], k: usize) -> Vec<f64> {
    let mut g = vec![0.0; k + 1];
    for ((row, &yi), &pi) in x.iter().zip(y).zip(p) {
        let r = yi - pi;
        g[0] += r;
        for (gj, xj) in g[1..].iter_mut().zip(row) {
            *gj += r * xj;
        }
    }
    g
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Names the first column that lies in the span of the intercept and the
/// preceding columns, together with the columns it depends on.
fn find_collinear(x: &[Vec<f64>], names: &[String]) -> Option<Vec<String>> {
    let k = names.len();
    let col = |j: usize| -> Vec<f64> {
        if j == 0 {
            vec![1.0; x.len()]
        } else {
            x.iter().map(|r| r[j - 1]).collect()
        }
    };
    let label = |j: usize| -> String {
        if j == 0 {
            "(intercept)".to_string()
        } else {
            names[j - 1].clone()
        }
    };
    let mut basis: Vec<Vec<f64>> = Vec::new();
    let mut basis_idx: Vec<usize> = Vec::new();
    for j in 0..=k {
        let a = col(j);
        let norm_a = a.iter().map(|v| v * v).sum::<f64>().sqrt();
        let mut r = a.clone();
        for q in &basis {
            let d: f64 = q.iter().zip(&r).map(|(u, v)| u * v).sum();
            r.iter_mut().zip(q).for_each(|(ri, qi)| *ri -= d * qi);
        }
        let norm_r = r.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm_r <= 1e-9 * norm_a.max(1e-300) {
            // Regress the offending column on the independent ones found so far.
            let cols: Vec<Vec<f64>> = basis_idx.iter().map(|&i| col(i)).collect();
            let m = cols.len();
            let mut xtx = vec![0.0; m * m];
            let mut xty = vec![0.0; m];
            for a_i in 0..m {
                xty[a_i] = cols[a_i].iter().zip(&a).map(|(u, v)| u * v).sum();
                for b_i in 0..m {
                    xtx[a_i * m + b_i] = cols[a_i].iter().zip(&cols[b_i]).map(|(u, v)| u * v).sum();
                }
            }
            let mut out = vec![label(j)];
            if let Some(l) = cholesky(&xtx, m, 1e-15) {
                let coef = cholesky_solve(&l, m, &xty);
                for (pos, (c, &i)) in coef.iter().zip(&basis_idx).enumerate() {
                    let cn = cols[pos].iter().map(|v| v * v).sum::<f64>().sqrt();
                    if (c * cn).abs() > 1e-8 * norm_a.max(1e-300) {
                        out.push(label(i));
                    }
                }
            }
            return Some(out);
        }
        r.iter_mut().for_each(|v| *v /= norm_r);
        basis.push(r);
        basis_idx.push(j);
    }
    None
}

/// Fits `Pr(label = 1 | row)` with an intercept and one slope per column.
pub fn fit_logit(
    rows: &[Vec<f64>],
    labels: &[bool],
    names: &[String],
    opts: &LogitOptions,
) -> Result<LogitModel> {
    let n = rows.len();
    if labels.len() != n {
        return Err(Error::Dimension {
            expected: n,
            got: labels.len(),
        });
    }
    let k = names.len();
    if let Some(bad) = rows.iter().find(|r| r.len() != k) {
        return Err(Error::Dimension {
            expected: k,
            got: bad.len(),
        });
    }
    if rows.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::InsufficientData("non-finite covariate value".into()));
    }
    let n1 = labels.iter().filter(|&&l| l).count();
    if n1 == 0 || n1 == n {
        return Err(Error::EmptyGroup(if n1 == 0 {
            "no positive labels".into()
        } else {
            "no negative labels".into()
        }));
    }
    if let Some(columns) = find_collinear(rows, names) {
        return Err(Error::Collinearity { columns });
    }

    let y: Vec<f64> = labels.iter().map(|&l| if l { 1.0 } else { 0.0 }).collect();
    let share = n1 as f64 / n as f64;
    let mut beta = vec![0.0; k + 1];
    beta[0] = (share / (1.0 - share)).ln();

    let mut eta = indices(rows, &beta);
    let mut ll = log_likelihood(&eta, &y);
    let mut trace = vec![ll];
    let mut converged = false;
    let mut iterations = 0;
    let mut p: Vec<f64> = eta.iter().map(|&z| logistic(z)).collect();
    let mut grad = score(rows, &y, &p, k);

    while iterations < opts.max_iterations {
        if max_abs(&grad) < opts.tolerance {
            converged = true;
            break;
        }
        let w: Vec<f64> = p.iter().map(|&pi| (pi * (1.0 - pi)).max(1e-300)).collect();
        let (xtwx, _) = weighted_normal_equations(rows, &w, &y);
        let l = cholesky(&xtwx, k + 1, PIVOT_TOLERANCE).ok_or_else(|| {
            if max_abs(&beta) > SEPARATION_NORM / 2.0 {
                Error::Separation {
                    norm: norm2(&beta),
                    gradient: max_abs(&grad),
                }
            } else {
                Error::Collinearity {
                    columns: names.to_vec(),
                }
            }
        })?;
        let delta = cholesky_solve(&l, k + 1, &grad);

        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..40 {
            let cand: Vec<f64> = beta.iter().zip(&delta).map(|(b, d)| b + step * d).collect();
            let cand_eta = indices(rows, &cand);
            let cand_ll = log_likelihood(&cand_eta, &y);
            if cand_ll >= ll - 1e-12 * ll.abs().max(1.0) {
                accepted = Some((cand, cand_eta, cand_ll));
                break;
            }
            step *= 0.5;
        }
        iterations += 1;
        let Some((cand, cand_eta, cand_ll)) = accepted else {
            // No ascent possible at machine precision.
            converged = max_abs(&grad) < opts.tolerance.sqrt();
            break;
        };
        let step_norm = max_abs(&delta) * step;
        beta = cand;
        eta = cand_eta;
        // Guard against rounding noise making the trace dip.
        ll = cand_ll.max(ll);
        trace.push(ll);
        p = eta.iter().map(|&z| logistic(z)).collect();
        grad = score(rows, &y, &p, k);

        if norm2(&beta) > SEPARATION_NORM && max_abs(&grad) >= opts.tolerance {
            return Err(Error::Separation {
                norm: norm2(&beta),
                gradient: max_abs(&grad),
            });
        }
        if step_norm < STEP_TOLERANCE {
            converged = true;
            break;
        }
    }
    if !converged && max_abs(&grad) < opts.tolerance {
        converged = true;
    }
    if norm2(&beta) > SEPARATION_NORM && p.iter().any(|&pi| !(1e-10..=1.0 - 1e-10).contains(&pi)) {
        return Err(Error::Separation {
            norm: norm2(&beta),
            gradient: max_abs(&grad),
        });
    }

    Ok(LogitModel {
        fitted: p.into_iter().map(open_unit).collect(),
        coefficients: beta,
        covariate_names: names.to_vec(),
        converged,
        log_likelihood: ll,
        iterations,
        log_likelihood_trace: trace,
        gradient_norm: max_abs(&grad),
    })
}

fn norm2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}
