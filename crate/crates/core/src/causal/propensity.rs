//! Ridge-regularized logistic regression fit by Newton iterations, used to
//! model the probability of receiving a treatment given covariates.

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_LAMBDA: f64 = 1e-3;
const MAX_NEWTON_ITERS: usize = 100;
const GRAD_TOL: f64 = 1e-8;
/// Coefficient norm beyond which the fit counts as diverged.
const DIVERGENCE_NORM: f64 = 1e4;
/// Linear predictors are clamped here so scores stay strictly inside (0, 1).
const MAX_LOGIT: f64 = 30.0;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PropensityModel {
    /// Coefficients aligned with the encoded columns (intercept first).
    pub coefficients: Vec<f64>,
    pub columns: Vec<String>,
    pub log_likelihood: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Set when a coefficient grew implausibly large, indicating the groups
    /// are (near-)separable on some covariate.
    pub near_separation: bool,
    pub lambda: f64,
}

impl PropensityModel {
    pub fn score(&self, row: ndarray::ArrayView1<f64>) -> f64 {
        let z: f64 = row
            .iter()
            .zip(&self.coefficients)
            .map(|(x, b)| x * b)
            .sum();
        sigmoid(z)
    }

    pub fn scores(&self, x: &Array2<f64>) -> Vec<f64> {
        (0..x.nrows()).map(|i| self.score(x.row(i))).collect()
    }
}

fn sigmoid(z: f64) -> f64 {
    let z = z.clamp(-MAX_LOGIT, MAX_LOGIT);
    1.0 / (1.0 + (-z).exp())
}

/// Solves `m x = b` in place by Gaussian elimination with partial pivoting.
fn solve_linear(mut m: Array2<f64>, mut b: Array1<f64>) -> Result<Array1<f64>> {
    let n = b.len();
    for col in 0..n {
        let mut pivot = col;
        for row in col + 1..n {
            if m[[row, col]].abs() > m[[pivot, col]].abs() {
                pivot = row;
            }
        }
        if m[[pivot, col]].abs() < 1e-14 {
            return Err(Error::Estimation(
                "singular Newton system in propensity fit".into(),
            ));
        }
        if pivot != col {
            for j in 0..n {
                m.swap([col, j], [pivot, j]);
            }
            b.swap(col, pivot);
        }
        for row in col + 1..n {
            let factor = m[[row, col]] / m[[col, col]];
            if factor == 0.0 {
                continue;
            }
            for j in col..n {
                m[[row, j]] -= factor * m[[col, j]];
            }
            b[row] -= factor * b[col];
        }
    }
    let mut x = Array1::zeros(n);
    for row in (0..n).rev() {
        let mut acc = b[row];
        for j in row + 1..n {
            acc -= m[[row, j]] * x[j];
        }
        x[row] = acc / m[[row, row]];
    }
    Ok(x)
}

struct NewtonOutcome {
    beta: Array1<f64>,
    iterations: usize,
    converged: bool,
    diverged: bool,
}

fn newton(x: &Array2<f64>, y: &[f64], lambda: f64) -> Result<NewtonOutcome> {
    let (n, d) = x.dim();
    let nf = n as f64;
    let mut beta: Array1<f64> = Array1::zeros(d);
    let mut converged = false;
    let mut diverged = false;
    let mut iterations = 0;

    for _ in 0..MAX_NEWTON_ITERS {
        iterations += 1;
        let z = x.dot(&beta);
        let p: Array1<f64> = z.mapv(sigmoid);

        // Gradient of summed NLL + (lambda/2)||beta_1..||^2 (intercept
        // unpenalized). Convergence uses the per-observation scale so the
        // tolerance does not tighten with cohort size.
        let resid = &p - &Array1::from_vec(y.to_vec());
        let mut grad = x.t().dot(&resid);
        for j in 1..d {
            grad[j] += lambda * beta[j];
        }
        let grad_norm = grad.iter().fold(0.0f64, |m, g| m.max(g.abs()));
        if grad_norm / nf < GRAD_TOL {
            converged = true;
            break;
        }

        // Hessian: X' diag(p(1-p)) X + lambda I (skip intercept).
        let w: Array1<f64> = p.mapv(|pi| (pi * (1.0 - pi)).max(1e-10));
        let mut xw = x.clone();
        for (i, mut row) in xw.outer_iter_mut().enumerate() {
            row.mapv_inplace(|v| v * w[i]);
        }
        let mut hess = x.t().dot(&xw);
        for j in 1..d {
            hess[[j, j]] += lambda;
        }
        let step = solve_linear(hess, grad)?;
        beta -= &step;

        let norm = beta.iter().map(|b| b * b).sum::<f64>().sqrt();
        if !norm.is_finite() || norm > DIVERGENCE_NORM {
            diverged = true;
            break;
        }
    }
    Ok(NewtonOutcome {
        beta,
        iterations,
        converged,
        diverged,
    })
}

/// Fits the propensity model. On divergence (separation) the ridge penalty is
/// increased a hundredfold once; a second divergence is an error. The fit is
/// deterministic: Newton always starts from the zero vector, so `seed` only
/// tags the model for the run manifest.
pub fn fit_propensity(
    x: &Array2<f64>,
    columns: &[String],
    treated: &[bool],
    lambda: f64,
    seed: u64,
) -> Result<PropensityModel> {
    let _ = seed;
    let (n, _) = x.dim();
    if n != treated.len() {
        return Err(Error::Validation(format!(
            "covariate rows ({n}) and treatment flags ({}) differ",
            treated.len()
        )));
    }
    if n == 0 {
        return Err(Error::Estimation("propensity fit on empty subset".into()));
    }
    let y: Vec<f64> = treated.iter().map(|&t| if t { 1.0 } else { 0.0 }).collect();

    let mut lambda_used = lambda;
    let mut bumped = false;
    let mut outcome = newton(x, &y, lambda_used)?;
    if outcome.diverged {
        lambda_used = lambda * 100.0;
        bumped = true;
        outcome = newton(x, &y, lambda_used)?;
        if outcome.diverged {
            return Err(Error::Estimation(format!(
                "propensity fit diverged even at lambda={lambda_used}"
            )));
        }
    }

    let z = x.dot(&outcome.beta);
    let log_likelihood: f64 = z
        .iter()
        .zip(&y)
        .map(|(&zi, &yi)| {
            let p = sigmoid(zi);
            yi * p.ln() + (1.0 - yi) * (1.0 - p).ln()
        })
        .sum();
    let near_separation = bumped || outcome.beta.iter().skip(1).any(|b| b.abs() > 10.0);

    Ok(PropensityModel {
        coefficients: outcome.beta.to_vec(),
        columns: columns.to_vec(),
        log_likelihood,
        iterations: outcome.iterations,
        converged: outcome.converged,
        near_separation,
        lambda: lambda_used,
    })
}
