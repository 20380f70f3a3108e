//! Log-domain Sinkhorn iterations for entropic transport.

use super::CostMatrix;
use crate::error::{Error, Result};

/// Result of an entropic solve.
#[derive(Debug, Clone, PartialEq)]
pub struct EntropicSolution {
    /// Dense plan, row-major `rows × cols`.
    pub plan: Vec<f64>,
    /// `⟨C, π⟩` for the returned plan.
    pub value: f64,
    /// L¹ deviation of the plan's marginals from the targets.
    pub marginal_error: f64,
    pub iterations: usize,
}

pub const SINKHORN_TOL: f64 = 1e-7;

fn log_sum_exp(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = values.clone().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + values.map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Entropic transport with regularization `eps`. Zero-mass points are
/// excluded from the scaling and receive no mass.
pub fn solve_entropic(cost: &CostMatrix, a: &[f64], b: &[f64], eps: f64, max_iters: usize) -> Result<EntropicSolution> {
    super::check_marginals(cost, a, b)?;
    if !(eps > 0.0) {
        return Err(Error::InvalidParameter(format!("entropic regularization must be positive, got {eps}")));
    }
    let (m, n) = (a.len(), b.len());
    let rows: Vec<usize> = (0..m).filter(|&i| a[i] > 0.0).collect();
    let cols: Vec<usize> = (0..n).filter(|&j| b[j] > 0.0).collect();
    let la: Vec<f64> = a.iter().map(|v| v.ln()).collect();
    let lb: Vec<f64> = b.iter().map(|v| v.ln()).collect();
    let c = |i: usize, j: usize| cost.get(i, j);
    let mut f = vec![0.0; m];
    let mut g = vec![0.0; n];
    let mut err = f64::INFINITY;
    let mut iterations = 0;
    while iterations < max_iters {
        iterations += 1;
        for &j in &cols {
            let lse = log_sum_exp(rows.iter().map(|&i| (f[i] - c(i, j)) / eps));
            g[j] = eps * (lb[j] - lse);
        }
        for &i in &rows {
            let lse = log_sum_exp(cols.iter().map(|&j| (g[j] - c(i, j)) / eps));
            f[i] = eps * (la[i] - lse);
        }
        // rows are now exact; measure the column marginal
        err = cols
            .iter()
            .map(|&j| {
                let col: f64 = rows.iter().map(|&i| ((f[i] + g[j] - c(i, j)) / eps).exp()).sum();
                (col - b[j]).abs()
            })
            .sum();
        if err <= SINKHORN_TOL {
            break;
        }
    }
    if err > SINKHORN_TOL {
        return Err(Error::NonConvergence { iterations, error: err });
    }
    let mut plan = vec![0.0; m * n];
    let mut value = 0.0;
    for &i in &rows {
        for &j in &cols {
            let p = ((f[i] + g[j] - c(i, j)) / eps).exp();
            plan[i * n + j] = p;
            value += p * c(i, j);
        }
    }
    Ok(EntropicSolution { plan, value, marginal_error: err, iterations })
}
