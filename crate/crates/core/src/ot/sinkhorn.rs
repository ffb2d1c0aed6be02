use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::DenseMatrix;

const MARGINAL_TOL: f64 = 1e-9;
const SCALING_MIN: f64 = 1e-30;
const SCALING_MAX: f64 = 1e30;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SinkhornConfig {
    pub entropy_epsilon: f64,
    pub max_iterations: usize,
    pub convergence_tol: f64,
}

impl Default for SinkhornConfig {
    fn default() -> Self {
        Self {
            entropy_epsilon: 0.05,
            max_iterations: 50,
            convergence_tol: 1e-7,
        }
    }
}

impl SinkhornConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.entropy_epsilon > 0.0 && self.entropy_epsilon.is_finite()) {
            return Err(Error::Config(format!(
                "entropy_epsilon must be positive, got {}",
                self.entropy_epsilon
            )));
        }
        if self.max_iterations < 1 {
            return Err(Error::Config("max_iterations must be >= 1".into()));
        }
        if !(self.convergence_tol > 0.0) {
            return Err(Error::Config("convergence_tol must be positive".into()));
        }
        Ok(())
    }
}

/// A coupling together with the objective value it attains.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransportPlan {
    pub coupling: DenseMatrix,
    pub loss: f64,
    pub iterations_used: usize,
    pub converged: bool,
}

impl TransportPlan {
    /// Largest absolute deviation of the row and column sums from `a` and `b`.
    pub fn marginal_error(&self, a: &[f64], b: &[f64]) -> (f64, f64) {
        let row = self
            .coupling
            .row_sums()
            .iter()
            .zip(a)
            .map(|(s, t)| (s - t).abs())
            .fold(0.0, f64::max);
        let col = self
            .coupling
            .col_sums()
            .iter()
            .zip(b)
            .map(|(s, t)| (s - t).abs())
            .fold(0.0, f64::max);
        (row, col)
    }
}

pub fn uniform(n: usize) -> Vec<f64> {
    vec![1.0 / n as f64; n]
}

pub(crate) fn check_marginal(m: &[f64], name: &str) -> Result<()> {
    if m.is_empty() {
        return Err(Error::Marginal(format!("{name} is empty")));
    }
    if m.iter().any(|&x| !x.is_finite() || x < 0.0) {
        return Err(Error::Marginal(format!("{name} has negative or non-finite entries")));
    }
    let s: f64 = m.iter().sum();
    if (s - 1.0).abs() > MARGINAL_TOL {
        return Err(Error::Marginal(format!("{name} sums to {s}, expected 1")));
    }
    Ok(())
}

/// Entropic OT between `a` and `b` under `cost`.
///
/// Runs plain Sinkhorn scaling and switches to log-domain updates as soon as a scaling
/// leaves `[1e-30, 1e30]`. The final iterate is rounded onto the transport polytope so
/// the returned coupling has exactly the requested marginals.
pub fn sinkhorn(cost: &DenseMatrix, a: &[f64], b: &[f64], cfg: &SinkhornConfig) -> Result<TransportPlan> {
    cfg.validate()?;
    let (n, m) = cost.shape();
    if a.len() != n || b.len() != m {
        return Err(Error::Dimension(format!(
            "cost is {n}x{m}, marginals have lengths {} and {}",
            a.len(),
            b.len()
        )));
    }
    check_marginal(a, "source marginal")?;
    check_marginal(b, "target marginal")?;
    if cost.as_slice().iter().any(|c| !c.is_finite()) {
        return Err(Error::Validation("cost matrix has non-finite entries".into()));
    }

    // Zero-mass rows/columns carry no transport; solve on the support only.
    let rows: Vec<usize> = (0..n).filter(|&i| a[i] > 0.0).collect();
    let cols: Vec<usize> = (0..m).filter(|&j| b[j] > 0.0).collect();
    let sub_cost = cost.select(&rows, &cols);
    let sub_a: Vec<f64> = rows.iter().map(|&i| a[i]).collect();
    let sub_b: Vec<f64> = cols.iter().map(|&j| b[j]).collect();

    let (mut plan, iterations_used, converged) = solve_support(&sub_cost, &sub_a, &sub_b, cfg);
    round_to_marginals(&mut plan, &sub_a, &sub_b);

    let mut coupling = DenseMatrix::zeros(n, m);
    for (si, &i) in rows.iter().enumerate() {
        for (sj, &j) in cols.iter().enumerate() {
            coupling.set(i, j, plan.get(si, sj));
        }
    }
    let loss = inner(cost, &coupling);
    Ok(TransportPlan {
        coupling,
        loss,
        iterations_used,
        converged,
    })
}

pub(crate) fn inner(x: &DenseMatrix, y: &DenseMatrix) -> f64 {
    x.as_slice().iter().zip(y.as_slice()).map(|(p, q)| p * q).sum()
}

fn solve_support(cost: &DenseMatrix, a: &[f64], b: &[f64], cfg: &SinkhornConfig) -> (DenseMatrix, usize, bool) {
    // a constant shift of the cost leaves the plan unchanged but keeps exp() in range
    let shift = cost.as_slice().iter().copied().fold(f64::INFINITY, f64::min);
    let eps = cfg.entropy_epsilon;
    let kernel = cost.map(|c| (-(c - shift) / eps).exp());
    if let Some(out) = scaling_iterations(&kernel, a, b, cfg) {
        return out;
    }
    log_domain_iterations(cost, shift, a, b, cfg)
}

fn in_range(x: f64) -> bool {
    x.is_finite() && (SCALING_MIN..=SCALING_MAX).contains(&x)
}

/// Returns `None` when a scaling factor escapes the safe range.
fn scaling_iterations(
    kernel: &DenseMatrix,
    a: &[f64],
    b: &[f64],
    cfg: &SinkhornConfig,
) -> Option<(DenseMatrix, usize, bool)> {
    let (n, m) = kernel.shape();
    let mut u = vec![1.0; n];
    let mut v = vec![1.0; m];
    let mut iterations = 0;
    let mut converged = false;
    while iterations < cfg.max_iterations {
        iterations += 1;
        for i in 0..n {
            let kv: f64 = kernel.row(i).iter().zip(&v).map(|(k, v)| k * v).sum();
            u[i] = a[i] / kv;
        }
        let mut ktu = vec![0.0; m];
        for i in 0..n {
            for (acc, k) in ktu.iter_mut().zip(kernel.row(i)) {
                *acc += k * u[i];
            }
        }
        for j in 0..m {
            v[j] = b[j] / ktu[j];
        }
        if !u.iter().chain(&v).all(|&x| in_range(x)) {
            return None;
        }
        // columns are exact after the v-update; measure the row violation
        let err: f64 = (0..n)
            .map(|i| {
                let kv: f64 = kernel.row(i).iter().zip(&v).map(|(k, v)| k * v).sum();
                (u[i] * kv - a[i]).abs()
            })
            .sum();
        if err < cfg.convergence_tol {
            converged = true;
            break;
        }
    }
    let plan = DenseMatrix::from_fn(n, m, |i, j| u[i] * kernel.get(i, j) * v[j]);
    Some((plan, iterations, converged))
}

fn log_sum_exp(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = values.clone().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + values.map(|x| (x - max).exp()).sum::<f64>().ln()
}

fn log_domain_iterations(
    cost: &DenseMatrix,
    shift: f64,
    a: &[f64],
    b: &[f64],
    cfg: &SinkhornConfig,
) -> (DenseMatrix, usize, bool) {
    let (n, m) = cost.shape();
    let eps = cfg.entropy_epsilon;
    let log_a: Vec<f64> = a.iter().map(|x| x.ln()).collect();
    let log_b: Vec<f64> = b.iter().map(|x| x.ln()).collect();
    let c = cost.map(|x| x - shift);
    let mut f = vec![0.0; n];
    let mut g = vec![0.0; m];
    let mut iterations = 0;
    let mut converged = false;
    while iterations < cfg.max_iterations {
        iterations += 1;
        for i in 0..n {
            let row = c.row(i);
            f[i] = eps * log_a[i] - eps * log_sum_exp((0..m).map(|j| (g[j] - row[j]) / eps));
        }
        for j in 0..m {
            g[j] = eps * log_b[j] - eps * log_sum_exp((0..n).map(|i| (f[i] - c.get(i, j)) / eps));
        }
        let err: f64 = (0..n)
            .map(|i| {
                let row = c.row(i);
                let s: f64 = (0..m).map(|j| ((f[i] + g[j] - row[j]) / eps).exp()).sum();
                (s - a[i]).abs()
            })
            .sum();
        if err < cfg.convergence_tol {
            converged = true;
            break;
        }
    }
    let plan = DenseMatrix::from_fn(n, m, |i, j| ((f[i] + g[j] - c.get(i, j)) / eps).exp());
    (plan, iterations, converged)
}

/// Projects a nearly-feasible nonnegative plan onto the exact marginals `a`, `b`.
fn round_to_marginals(plan: &mut DenseMatrix, a: &[f64], b: &[f64]) {
    let (n, m) = plan.shape();
    let rs = plan.row_sums();
    for i in 0..n {
        let s = if rs[i] > a[i] { a[i] / rs[i] } else { 1.0 };
        plan.row_mut(i).iter_mut().for_each(|x| *x *= s);
    }
    let cs = plan.col_sums();
    for j in 0..m {
        let s = if cs[j] > b[j] { b[j] / cs[j] } else { 1.0 };
        for i in 0..n {
            let v = plan.get(i, j) * s;
            plan.set(i, j, v);
        }
    }
    let rs = plan.row_sums();
    let cs = plan.col_sums();
    let err_a: Vec<f64> = a.iter().zip(&rs).map(|(t, s)| (t - s).max(0.0)).collect();
    let err_b: Vec<f64> = b.iter().zip(&cs).map(|(t, s)| (t - s).max(0.0)).collect();
    let total: f64 = err_a.iter().sum();
    if total > 0.0 {
        for i in 0..n {
            for j in 0..m {
                plan.add_at(i, j, err_a[i] * err_b[j] / total);
            }
        }
    }
}
