use serde::{Deserialize, Serialize};

use super::sinkhorn::{check_marginal, inner, sinkhorn, uniform, SinkhornConfig, TransportPlan};
use crate::error::{Error, Result};
use crate::numerics::DenseMatrix;

/// Outer-loop stopping threshold on the change of the objective.
const OUTER_TOL: f64 = 1e-7;
/// Initial annealed entropy as a fraction of the first linearised cost range.
const ANNEAL_START: f64 = 0.1;

/// Starting coupling for the alternating solver.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlanInit {
    /// Product of the marginals, `a b^T`.
    #[default]
    Independent,
    /// Diagonal `diag(a)`; requires square problems with `a == b`. Useful when rows of
    /// both spaces index the same samples.
    Paired,
    /// Hard one-to-one matching found by best-swap descent from the identity pairing;
    /// requires square problems with uniform marginals. The returned plan is locally
    /// constant in the inputs, so fixed-plan gradients are exact almost everywhere.
    Matching,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FgwConfig {
    pub alpha: f64,
    pub sinkhorn: SinkhornConfig,
    pub outer_iterations: usize,
    pub init: PlanInit,
    /// With the independent start, begin the outer loop at a large entropy and halve it
    /// each step down to `sinkhorn.entropy_epsilon`; helps escape poor stationary points.
    pub anneal: bool,
}

impl Default for FgwConfig {
    fn default() -> Self {
        Self {
            alpha: 0.5,
            sinkhorn: SinkhornConfig::default(),
            outer_iterations: 20,
            init: PlanInit::Independent,
            anneal: true,
        }
    }
}

impl FgwConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(Error::Config(format!("alpha must be >= 0, got {}", self.alpha)));
        }
        self.sinkhorn.validate()
    }
}

fn check_distance(d: &DenseMatrix, name: &str) -> Result<()> {
    let (n, m) = d.shape();
    if n != m || n == 0 {
        return Err(Error::Dimension(format!("{name} must be square and non-empty, got {n}x{m}")));
    }
    if d.as_slice().iter().any(|x| !x.is_finite()) {
        return Err(Error::Validation(format!("{name} has non-finite entries")));
    }
    let scale = d.max_abs().max(1.0);
    if !d.is_symmetric(1e-9 * scale) {
        return Err(Error::Validation(format!("{name} is not symmetric")));
    }
    if (0..n).any(|i| d.get(i, i).abs() > 1e-9 * scale) {
        return Err(Error::Validation(format!("{name} has a non-zero diagonal")));
    }
    Ok(())
}

/// `tens_ik = sum_j Ds²_ij r_j + sum_l Dt²_kl c_l - 2 (Ds π Dt)_ik`, with `r`, `c` the
/// marginals of `pi`. Then `<tens, π>` is the quartic objective and `2·tens` its gradient.
fn tensor_product(ds2: &DenseMatrix, dt2: &DenseMatrix, ds: &DenseMatrix, dt: &DenseMatrix, pi: &DenseMatrix) -> DenseMatrix {
    let (n, m) = pi.shape();
    let r = pi.row_sums();
    let c = pi.col_sums();
    let left: Vec<f64> = (0..n)
        .map(|i| ds2.row(i).iter().zip(&r).map(|(d, x)| d * x).sum())
        .collect();
    let right: Vec<f64> = (0..m)
        .map(|k| dt2.row(k).iter().zip(&c).map(|(d, x)| d * x).sum())
        .collect();
    let cross = ds
        .matmul(pi)
        .and_then(|x| x.matmul(dt))
        .expect("shapes validated by caller");
    DenseMatrix::from_fn(n, m, |i, k| left[i] + right[k] - 2.0 * cross.get(i, k))
}

#[derive(Clone)]
struct Problem<'a> {
    ds: &'a DenseMatrix,
    dt: &'a DenseMatrix,
    ds2: DenseMatrix,
    dt2: DenseMatrix,
    feature: Option<(&'a DenseMatrix, f64)>,
}

impl Problem<'_> {
    fn tensor(&self, pi: &DenseMatrix) -> DenseMatrix {
        tensor_product(&self.ds2, &self.dt2, self.ds, self.dt, pi)
    }

    fn objective(&self, pi: &DenseMatrix) -> f64 {
        let mut f = inner(&self.tensor(pi), pi);
        if let Some((c, alpha)) = self.feature {
            f += alpha * inner(c, pi);
        }
        f
    }
}

/// Entropic Gromov–Wasserstein between two metric spaces with uniform weights.
pub fn gw_loss(d_source: &DenseMatrix, d_target: &DenseMatrix, cfg: &FgwConfig) -> Result<TransportPlan> {
    let a = uniform(d_source.rows().max(1));
    let b = uniform(d_target.rows().max(1));
    gw_loss_with_marginals(d_source, d_target, &a, &b, cfg)
}

pub fn gw_loss_with_marginals(
    d_source: &DenseMatrix,
    d_target: &DenseMatrix,
    a: &[f64],
    b: &[f64],
    cfg: &FgwConfig,
) -> Result<TransportPlan> {
    Ok(solve(d_source, d_target, None, a, b, cfg)?.0)
}

/// Fused Gromov–Wasserstein: the relational objective plus `alpha · <C, π>`.
///
/// With `alpha == 0` the feature term is skipped entirely, so the result is identical to
/// [`gw_loss`].
pub fn fgw_loss(
    d_source: &DenseMatrix,
    d_target: &DenseMatrix,
    feature_cost: &DenseMatrix,
    cfg: &FgwConfig,
) -> Result<TransportPlan> {
    let a = uniform(d_source.rows().max(1));
    let b = uniform(d_target.rows().max(1));
    fgw_loss_with_marginals(d_source, d_target, feature_cost, &a, &b, cfg)
}

pub fn fgw_loss_with_marginals(
    d_source: &DenseMatrix,
    d_target: &DenseMatrix,
    feature_cost: &DenseMatrix,
    a: &[f64],
    b: &[f64],
    cfg: &FgwConfig,
) -> Result<TransportPlan> {
    check_feature(d_source, d_target, feature_cost)?;
    Ok(solve(d_source, d_target, Some(feature_cost), a, b, cfg)?.0)
}

fn check_feature(d_source: &DenseMatrix, d_target: &DenseMatrix, feature_cost: &DenseMatrix) -> Result<()> {
    if feature_cost.shape() != (d_source.rows(), d_target.rows()) {
        return Err(Error::Dimension(format!(
            "feature cost is {:?}, expected {}x{}",
            feature_cost.shape(),
            d_source.rows(),
            d_target.rows()
        )));
    }
    if feature_cost.as_slice().iter().any(|x| !x.is_finite()) {
        return Err(Error::Validation("feature cost has non-finite entries".into()));
    }
    Ok(())
}

fn solve(
    ds: &DenseMatrix,
    dt: &DenseMatrix,
    feature: Option<&DenseMatrix>,
    a: &[f64],
    b: &[f64],
    cfg: &FgwConfig,
) -> Result<(TransportPlan, Vec<f64>)> {
    cfg.validate()?;
    check_distance(ds, "source distance matrix")?;
    check_distance(dt, "target distance matrix")?;
    let (n, m) = (ds.rows(), dt.rows());
    if a.len() != n || b.len() != m {
        return Err(Error::Dimension(format!(
            "marginal lengths {} and {} for a {n}x{m} problem",
            a.len(),
            b.len()
        )));
    }
    check_marginal(a, "source marginal")?;
    check_marginal(b, "target marginal")?;

    let problem = Problem {
        ds,
        dt,
        ds2: ds.map(|x| x * x),
        dt2: dt.map(|x| x * x),
        feature: feature.filter(|_| cfg.alpha != 0.0).map(|c| (c, cfg.alpha)),
    };

    let start = match cfg.init {
        PlanInit::Independent => DenseMatrix::from_fn(n, m, |i, k| a[i] * b[k]),
        PlanInit::Paired => {
            if n != m || a.iter().zip(b).any(|(x, y)| (x - y).abs() > 1e-12) {
                return Err(Error::Config(
                    "paired initialisation needs a square problem with equal marginals".into(),
                ));
            }
            DenseMatrix::from_fn(n, m, |i, k| if i == k { a[i] } else { 0.0 })
        }
        PlanInit::Matching => {
            if n != m || a.iter().chain(b).any(|x| (x - 1.0 / n as f64).abs() > 1e-12) {
                return Err(Error::Config("matching needs a square problem with uniform marginals".into()));
            }
            return Ok(swap_descent(&problem, n, cfg));
        }
    };
    // annealing only makes sense from an uninformed start
    let anneal = cfg.anneal && cfg.init == PlanInit::Independent;
    let mut best = run_from(&problem, start, a, b, cfg, anneal)?;
    if cfg.init == PlanInit::Independent {
        // a second, relabel-equivariant start: match points by their distance profiles
        let profile = profile_plan(&problem, a, b, cfg)?;
        let alt = run_from(&problem, profile, a, b, cfg, anneal)?;
        if alt.0.loss < best.0.loss {
            best = alt;
        }
        if let Some((c, _)) = problem.feature {
            // warm starts from the feature-only and the structure-only solutions
            let structural = Problem {
                feature: None,
                ..problem.clone()
            };
            let gw_start = run_from(&structural, DenseMatrix::from_fn(n, m, |i, k| a[i] * b[k]), a, b, cfg, anneal)?;
            for start in [sinkhorn(c, a, b, &cfg.sinkhorn)?.coupling, gw_start.0.coupling] {
                let alt = run_from(&problem, start, a, b, cfg, anneal)?;
                if alt.0.loss < best.0.loss {
                    best = alt;
                }
            }
        }
    }
    Ok(best)
}

/// Local search over permutations: repeatedly apply the single pairwise swap with the
/// largest decrease. Choosing the best swap (rather than the first in index order) keeps
/// the result equivariant under relabelling both spaces together.
///
/// With `B'_ik = Dt(σi, σk)` and `M = Ds B'ᵀ`, swapping `σr, σs` changes
/// `Σ Ds_ij B'_ij` by `2 (M_rs + M_sr − M_rr − M_ss + 2 Ds_rs B'_rs)`; `M` is updated in
/// O(n²) after each swap.
fn swap_descent(problem: &Problem<'_>, n: usize, cfg: &FgwConfig) -> (TransportPlan, Vec<f64>) {
    let (ds, dt) = (problem.ds, problem.dt);
    let nf = n as f64;
    let mut sigma: Vec<usize> = (0..n).collect();
    let plan_of = |sigma: &[usize]| DenseMatrix::from_fn(n, n, |i, k| if sigma[i] == k { 1.0 / nf } else { 0.0 });
    let mut objective = problem.objective(&plan_of(&sigma));
    let mut history = vec![objective];
    // swaps must beat this margin, so ties and round-off never flip the matching
    let margin = 1e-12 * (1.0 + objective.abs());
    let max_swaps = cfg.outer_iterations.max(1) * n.max(1);
    let mut m = ds.matmul(&dt.transpose()).expect("square problem");
    let mut converged = false;
    let mut swaps = 0;
    while swaps < max_swaps {
        let mut best: Option<(f64, usize, usize)> = None;
        for r in 0..n {
            let (pr, mr) = (sigma[r], m.row(r));
            for s in (r + 1)..n {
                let ps = sigma[s];
                let change = 2.0 * (mr[s] + m.get(s, r) - mr[r] - m.get(s, s) + 2.0 * ds.get(r, s) * dt.get(pr, ps));
                let mut delta = -2.0 * change / (nf * nf);
                if let Some((c, alpha)) = problem.feature {
                    delta += alpha * (c.get(r, ps) + c.get(s, pr) - c.get(r, pr) - c.get(s, ps)) / nf;
                }
                if delta < -margin && best.is_none_or(|(d, _, _)| delta < d) {
                    best = Some((delta, r, s));
                }
            }
        }
        let Some((delta, r, s)) = best else {
            converged = true;
            break;
        };
        // M_ij = Σ_k Ds_ik Dt(σj, σk): the swap permutes column j and the summation index
        let (pr, ps) = (sigma[r], sigma[s]);
        let old_r: Vec<f64> = (0..n).map(|i| m.get(i, r)).collect();
        for i in 0..n {
            let mr = m.get(i, s);
            m.set(i, s, old_r[i]);
            m.set(i, r, mr);
        }
        sigma.swap(r, s);
        for j in 0..n {
            let pj = sigma[j];
            let db = dt.get(pj, pr) - dt.get(pj, ps);
            if db == 0.0 {
                continue;
            }
            for i in 0..n {
                // index k = r now carries σ = ps, k = s carries pr
                m.add_at(i, j, (ds.get(i, s) - ds.get(i, r)) * db);
            }
        }
        swaps += 1;
        objective += delta;
        history.push(objective);
    }
    let coupling = plan_of(&sigma);
    let loss = problem.objective(&coupling);
    if let Some(last) = history.last_mut() {
        *last = loss;
    }
    (
        TransportPlan {
            coupling,
            loss,
            iterations_used: swaps,
            converged,
        },
        history,
    )
}

/// Alternating linearisation from `start`; also returns the objective after every step.
fn run_from(
    problem: &Problem<'_>,
    start: DenseMatrix,
    a: &[f64],
    b: &[f64],
    cfg: &FgwConfig,
    anneal: bool,
) -> Result<(TransportPlan, Vec<f64>)> {
    let (n, m) = start.shape();
    let mut pi = start;
    let mut loss = problem.objective(&pi);
    let mut history = vec![loss];
    let mut iterations_used = 0;
    let mut converged = false;

    let target_eps = cfg.sinkhorn.entropy_epsilon;
    let mut eps = target_eps;
    for step in 0..cfg.outer_iterations {
        iterations_used += 1;
        let tens = problem.tensor(&pi);
        let mut grad = tens.scale(2.0);
        if let Some((c, alpha)) = problem.feature {
            for (g, x) in grad.as_mut_slice().iter_mut().zip(c.as_slice()) {
                *g += alpha * x;
            }
        }
        if anneal {
            if step == 0 {
                let (lo, hi) = grad
                    .as_slice()
                    .iter()
                    .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &g| (lo.min(g), hi.max(g)));
                eps = ((hi - lo) * ANNEAL_START).max(target_eps);
            } else {
                eps = (eps * 0.5).max(target_eps);
            }
        }
        let sk = SinkhornConfig {
            entropy_epsilon: eps,
            ..cfg.sinkhorn
        };
        let candidate = sinkhorn(&grad, a, b, &sk)?.coupling;
        let candidate_loss = problem.objective(&candidate);

        let accepted = if candidate_loss <= loss {
            Some((candidate, candidate_loss))
        } else {
            // f(π + τΔ) = f(π) + τ <∇f, Δ> + τ² q(Δ): exact minimiser on [0, 1]
            let delta = DenseMatrix::from_fn(n, m, |i, k| candidate.get(i, k) - pi.get(i, k));
            let slope = inner(&grad, &delta);
            let curvature = inner(&problem.tensor(&delta), &delta);
            let tau = if curvature > 0.0 {
                (-slope / (2.0 * curvature)).clamp(0.0, 1.0)
            } else if slope < 0.0 {
                1.0
            } else {
                0.0
            };
            let mixed = DenseMatrix::from_fn(n, m, |i, k| pi.get(i, k) + tau * delta.get(i, k));
            let mixed_loss = problem.objective(&mixed);
            (tau > 0.0 && mixed_loss <= loss).then_some((mixed, mixed_loss))
        };
        let Some((next, next_loss)) = accepted else {
            if eps > target_eps {
                history.push(loss);
                continue;
            }
            converged = true;
            break;
        };

        let change = (loss - next_loss).abs();
        pi = next;
        loss = next_loss;
        history.push(loss);
        if change < OUTER_TOL && eps <= target_eps {
            converged = true;
            break;
        }
    }

    let plan = TransportPlan {
        coupling: pi,
        loss,
        iterations_used,
        converged,
    };
    Ok((plan, history))
}

/// Squared 2-Wasserstein distance between two weighted empirical distributions on the line.
fn wasserstein_1d(x: &[f64], wx: &[f64], y: &[f64], wy: &[f64]) -> f64 {
    let sorted = |v: &[f64], w: &[f64]| {
        let mut idx: Vec<usize> = (0..v.len()).collect();
        idx.sort_by(|&p, &q| v[p].total_cmp(&v[q]).then(p.cmp(&q)));
        idx.into_iter().map(|i| (v[i], w[i])).collect::<Vec<_>>()
    };
    let (xs, ys) = (sorted(x, wx), sorted(y, wy));
    let (mut i, mut j) = (0, 0);
    let (mut rx, mut ry) = (xs[0].1, ys[0].1);
    let mut total = 0.0;
    while i < xs.len() && j < ys.len() {
        let mass = rx.min(ry);
        total += mass * (xs[i].0 - ys[j].0).powi(2);
        rx -= mass;
        ry -= mass;
        if rx <= 1e-15 {
            i += 1;
            rx = xs.get(i).map_or(0.0, |p| p.1);
        }
        if ry <= 1e-15 {
            j += 1;
            ry = ys.get(j).map_or(0.0, |p| p.1);
        }
    }
    total
}

/// Entropic plan for the cost "distance between the distance distributions seen from
/// `i` and from `k`" (plus the feature term, if any).
fn profile_plan(problem: &Problem<'_>, a: &[f64], b: &[f64], cfg: &FgwConfig) -> Result<DenseMatrix> {
    let (n, m) = (problem.ds.rows(), problem.dt.rows());
    let mut cost = DenseMatrix::from_fn(n, m, |i, k| wasserstein_1d(problem.ds.row(i), a, problem.dt.row(k), b));
    if let Some((c, alpha)) = problem.feature {
        for (x, f) in cost.as_mut_slice().iter_mut().zip(c.as_slice()) {
            *x += alpha * f;
        }
    }
    Ok(sinkhorn(&cost, a, b, &cfg.sinkhorn)?.coupling)
}

/// Outer-loop objective history of the run [`gw_loss`] returns, starting at its initial plan.
pub fn gw_loss_trace(d_source: &DenseMatrix, d_target: &DenseMatrix, cfg: &FgwConfig) -> Result<Vec<f64>> {
    let a = uniform(d_source.rows().max(1));
    let b = uniform(d_target.rows().max(1));
    Ok(solve(d_source, d_target, None, &a, &b, cfg)?.1)
}

/// As [`gw_loss_trace`], for the fused problem.
pub fn fgw_loss_trace(
    d_source: &DenseMatrix,
    d_target: &DenseMatrix,
    feature_cost: &DenseMatrix,
    cfg: &FgwConfig,
) -> Result<Vec<f64>> {
    let a = uniform(d_source.rows().max(1));
    let b = uniform(d_target.rows().max(1));
    check_feature(d_source, d_target, feature_cost)?;
    Ok(solve(d_source, d_target, Some(feature_cost), &a, &b, cfg)?.1)
}

/// Gradient of the relational objective with respect to `d_latent` at a fixed plan.
///
/// `plan` couples graph nodes (rows) to latent points (columns). Entry `(k, l)` is
/// `2 Σ_ij (D_latent(k,l) - D_graph(i,j)) π_ik π_jl`.
pub fn fgw_gradient_wrt_latent(
    d_latent: &DenseMatrix,
    d_graph: &DenseMatrix,
    plan: &TransportPlan,
) -> Result<DenseMatrix> {
    let pi = &plan.coupling;
    let m = d_latent.rows();
    if d_latent.cols() != m || d_graph.rows() != d_graph.cols() || pi.shape() != (d_graph.rows(), m) {
        return Err(Error::Dimension(format!(
            "latent {:?}, graph {:?}, plan {:?}",
            d_latent.shape(),
            d_graph.shape(),
            pi.shape()
        )));
    }
    let c = pi.col_sums();
    let pgp = pi.t_matmul(&d_graph.matmul(pi)?)?;
    let mut g = DenseMatrix::from_fn(m, m, |k, l| 2.0 * (d_latent.get(k, l) * c[k] * c[l] - pgp.get(k, l)));
    for k in 0..m {
        for l in (k + 1)..m {
            let s = 0.5 * (g.get(k, l) + g.get(l, k));
            g.set(k, l, s);
            g.set(l, k, s);
        }
    }
    Ok(g)
}

/// Relational objective `Σ (D_graph(i,j) − D_latent(k,l))² π_ik π_jl` at a fixed plan.
pub fn relational_objective(d_graph: &DenseMatrix, d_latent: &DenseMatrix, coupling: &DenseMatrix) -> f64 {
    let tens = tensor_product(
        &d_graph.map(|x| x * x),
        &d_latent.map(|x| x * x),
        d_graph,
        d_latent,
        coupling,
    );
    inner(&tens, coupling)
}
