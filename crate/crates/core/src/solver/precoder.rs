//! Precoder subproblem: minimize the MSE over `W` for fixed `H`, `Q` under
//! the total-power and per-LED amplitude constraints.
//!
//! The solver runs dual ascent over the `N_t + 1` multipliers, each dual
//! evaluation minimizing the `W`-Lagrangian by proximal gradient with
//! row-wise soft-thresholding. The dual iterate is then scaled to
//! feasibility and polished by primal projected gradient using the exact
//! projection onto the constraint set.

use alloc::vec;
use alloc::vec::Vec;

use nalgebra::DMatrix;

use crate::linalg::{l1_norm, lambda_max_sym, lambda_min_sym, project_l1_ball};
use crate::math;
use crate::objective::{PowerBudget, SignalStats};
use crate::solver::SolverOptions;
use crate::{Error, Result};

/// Result of one precoder solve.
#[derive(Debug, Clone, PartialEq)]
pub struct PrecoderOutcome {
    pub w: DMatrix<f64>,
    /// `σx² ‖QHW − I‖²`, i.e. the MSE without the `W`-independent noise term.
    pub objective: f64,
    pub dual_iterations: usize,
    /// Proximal-gradient steps summed over dual evaluations and the polish.
    pub inner_iterations: usize,
    /// Multipliers of the normalized constraints: total power first, then
    /// one per LED.
    pub multipliers: Vec<f64>,
    /// Smallest eigenvalue of the objective Hessian `2σx² (I ⊗ GᵀG)`.
    pub hessian_lambda_min: f64,
    pub converged: bool,
}

/// Constraint radii in `W` units: `‖W‖_F ≤ ρ`, `‖w_t‖₁ ≤ δ_t`.
#[derive(Debug, Clone)]
pub(crate) struct Radii {
    rho: f64,
    delta: Vec<f64>,
}

impl Radii {
    pub(crate) fn new(stats: &SignalStats, budget: &PowerBudget) -> Result<Self> {
        let signal = budget.signal_budget()?;
        let peak = stats.peak_amplitude();
        Ok(Self {
            rho: math::sqrt(signal / stats.sigma_x2),
            delta: budget.headroom.iter().map(|d| d.max(0.0) / peak).collect(),
        })
    }
}

/// Exact Euclidean projection onto `{‖W‖_F ≤ ρ} ∩ {‖w_t‖₁ ≤ δ_t ∀t}`.
///
/// For a Frobenius multiplier `ν` the rows decouple into
/// `Π_{l1, δ_t}(x_t / (1 + ν))`; `ν` is found by bisection.
pub(crate) fn project_feasible(x: &DMatrix<f64>, radii: &Radii) -> DMatrix<f64> {
    let rows_at = |nu: f64| {
        let mut out = x / (1.0 + nu);
        for t in 0..out.nrows() {
            let mut row: Vec<f64> = out.row(t).iter().cloned().collect();
            project_l1_ball(&mut row, radii.delta[t]);
            for (j, v) in row.into_iter().enumerate() {
                out[(t, j)] = v;
            }
        }
        out
    };
    if radii.rho <= 0.0 {
        return DMatrix::zeros(x.nrows(), x.ncols());
    }
    let w0 = rows_at(0.0);
    if w0.norm() <= radii.rho {
        return w0;
    }
    let mut lo = 0.0;
    let mut hi = x.norm() / radii.rho - 1.0;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if rows_at(mid).norm() > radii.rho {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let mut w = rows_at(hi);
    let n = w.norm();
    if n > radii.rho {
        w *= radii.rho / n;
    }
    w
}

struct Problem<'a> {
    stats: &'a SignalStats,
    g: DMatrix<f64>,
    gtg: DMatrix<f64>,
    gt: DMatrix<f64>,
    lip: f64,
}

impl<'a> Problem<'a> {
    fn new(h: &DMatrix<f64>, q: &DMatrix<f64>, stats: &'a SignalStats) -> Self {
        let g = q * h;
        let gtg = g.transpose() * &g;
        let lip = 2.0 * stats.sigma_x2 * lambda_max_sym(&gtg);
        Self { stats, gt: g.transpose(), g, gtg, lip }
    }

    fn value(&self, w: &DMatrix<f64>) -> f64 {
        let mut t = &self.g * w;
        for i in 0..t.nrows().min(t.ncols()) {
            t[(i, i)] -= 1.0;
        }
        self.stats.sigma_x2 * t.norm_squared()
    }

    fn grad(&self, w: &DMatrix<f64>) -> DMatrix<f64> {
        (&self.gtg * w - &self.gt) * (2.0 * self.stats.sigma_x2)
    }
}

fn small_step(step: f64, reference: f64) -> bool {
    step <= 1e-10 * reference.max(1e-300)
}

/// Proximal gradient on
/// `f(W) + a ‖W‖² + Σ_t b_t ‖w_t‖₁` with rows in `zero_rows` forced to zero.
fn minimize_lagrangian(
    prob: &Problem,
    a: f64,
    b: &[f64],
    zero_rows: &[bool],
    start: &DMatrix<f64>,
    max_iter: usize,
) -> (DMatrix<f64>, usize) {
    let lip = prob.lip + 2.0 * a;
    if lip <= 0.0 {
        return (start.clone(), 0);
    }
    let prox = |mut v: DMatrix<f64>| {
        for t in 0..v.nrows() {
            let tau = b[t] / lip;
            for j in 0..v.ncols() {
                let x = v[(t, j)];
                v[(t, j)] = if zero_rows[t] {
                    0.0
                } else if x > tau {
                    x - tau
                } else if x < -tau {
                    x + tau
                } else {
                    0.0
                };
            }
        }
        v
    };
    let value = |w: &DMatrix<f64>| {
        prob.value(w)
            + a * w.norm_squared()
            + w.row_iter().zip(b).map(|(r, bt)| bt * r.iter().map(|v| v.abs()).sum::<f64>()).sum::<f64>()
    };
    let mut x = prox(start.clone());
    let mut fx = value(&x);
    let mut y = x.clone();
    let mut t = 1.0;
    let mut iters = 0;
    while iters < max_iter {
        iters += 1;
        let gy = prob.grad(&y) + &y * (2.0 * a);
        let xn = prox(&y - gy / lip);
        let fxn = value(&xn);
        if fxn > fx {
            if y == x {
                break;
            }
            y = x.clone();
            t = 1.0;
            continue;
        }
        let step = (&xn - &x).norm();
        let tn = 0.5 * (1.0 + math::sqrt(1.0 + 4.0 * t * t));
        y = &xn + (&xn - &x) * ((t - 1.0) / tn);
        x = xn;
        fx = fxn;
        t = tn;
        if small_step(step, x.norm().max(1.0)) {
            break;
        }
    }
    (x, iters)
}

/// Projected gradient on the exact feasible set, monotone with adaptive
/// restart.
fn primal_polish(prob: &Problem, radii: &Radii, start: DMatrix<f64>, max_iter: usize) -> (DMatrix<f64>, usize, bool) {
    if prob.lip <= 0.0 {
        return (start, 0, true);
    }
    let mut x = start;
    let mut fx = prob.value(&x);
    let mut y = x.clone();
    let mut t = 1.0;
    let mut iters = 0;
    let mut converged = false;
    while iters < max_iter {
        iters += 1;
        let xn = project_feasible(&(&y - prob.grad(&y) / prob.lip), radii);
        let fxn = prob.value(&xn);
        if fxn > fx {
            if y == x {
                converged = true;
                break;
            }
            y = x.clone();
            t = 1.0;
            continue;
        }
        let step = (&xn - &x).norm();
        let tn = 0.5 * (1.0 + math::sqrt(1.0 + 4.0 * t * t));
        y = &xn + (&xn - &x) * ((t - 1.0) / tn);
        x = xn;
        fx = fxn;
        t = tn;
        if small_step(step, x.norm().max(radii.rho.min(1.0))) {
            converged = true;
            break;
        }
    }
    (x, iters, converged)
}

/// Solves the precoder subproblem from a zero start.
pub fn solve_p2_precoder(
    h: &DMatrix<f64>,
    q: &DMatrix<f64>,
    stats: &SignalStats,
    budget: &PowerBudget,
    opts: &SolverOptions,
) -> Result<DMatrix<f64>> {
    solve_p2_precoder_from(h, q, stats, budget, None, None, opts).map(|o| o.w)
}

/// Solves the precoder subproblem.
///
/// `warm` is a starting precoder; when it is feasible the returned objective
/// never exceeds its value. `warm_multipliers` seeds the dual ascent.
pub fn solve_p2_precoder_from(
    h: &DMatrix<f64>,
    q: &DMatrix<f64>,
    stats: &SignalStats,
    budget: &PowerBudget,
    warm: Option<&DMatrix<f64>>,
    warm_multipliers: Option<&[f64]>,
    opts: &SolverOptions,
) -> Result<PrecoderOutcome> {
    let (nr, nt) = h.shape();
    let n_s = q.nrows();
    if q.ncols() != nr || budget.n_t() != nt || budget.headroom.len() != nt {
        return Err(Error::Dimension("H, Q and budget are not conformable".into()));
    }
    if let Some(w) = warm {
        if w.shape() != (nt, n_s) {
            return Err(Error::Dimension("warm-start precoder has the wrong shape".into()));
        }
    }
    let radii = Radii::new(stats, budget)?;
    let prob = Problem::new(h, q, stats);
    let hessian_lambda_min = 2.0 * stats.sigma_x2 * lambda_min_sym(&prob.gtg).max(0.0);
    let zero = DMatrix::zeros(nt, n_s);

    if radii.rho <= 0.0 {
        return Ok(PrecoderOutcome {
            objective: prob.value(&zero),
            w: zero,
            dual_iterations: 0,
            inner_iterations: 0,
            multipliers: vec![0.0; nt + 1],
            hessian_lambda_min,
            converged: true,
        });
    }

    // Normalized constraints: σx²‖W‖²/B − 1 ≤ 0 and ‖w_t‖₁/δ_t − 1 ≤ 0.
    let zero_rows: Vec<bool> = radii.delta.iter().map(|&d| d <= 0.0).collect();
    let constraints = |w: &DMatrix<f64>| -> Vec<f64> {
        let mut c = Vec::with_capacity(nt + 1);
        c.push(w.norm_squared() / (radii.rho * radii.rho) - 1.0);
        for (t, &zero) in zero_rows.iter().enumerate() {
            let l1: f64 = l1_norm(&w.row(t).iter().cloned().collect::<Vec<_>>());
            c.push(if zero { 0.0 } else { l1 / radii.delta[t] - 1.0 });
        }
        c
    };
    let inner_cap = opts.max_inner.min(500);
    let mut inner_total = 0;
    let mut evaluate = |mu: &[f64], start: &DMatrix<f64>| {
        let a = mu[0] / (radii.rho * radii.rho);
        let b: Vec<f64> = (0..nt).map(|t| if zero_rows[t] { 0.0 } else { mu[t + 1] / radii.delta[t] }).collect();
        let (w, it) = minimize_lagrangian(&prob, a, &b, &zero_rows, start, inner_cap);
        inner_total += it;
        let c = constraints(&w);
        let dual = prob.value(&w) + mu.iter().zip(&c).map(|(m, ci)| m * ci).sum::<f64>();
        (w, dual, c)
    };

    let mut mu: Vec<f64> = match warm_multipliers {
        Some(m) if m.len() == nt + 1 => m.iter().map(|v| v.max(0.0)).collect(),
        _ => vec![0.0; nt + 1],
    };
    let start = warm.cloned().unwrap_or_else(|| zero.clone());
    let (mut w_mu, mut g_mu, mut c_mu) = evaluate(&mu, &start);
    let scale = stats.sigma_x2 * n_s as f64;
    let mut alpha = scale;
    let dual_cap = opts.max_inner.min(200);
    let mut dual_iterations = 0;
    while dual_iterations < dual_cap {
        dual_iterations += 1;
        let moved: f64 = mu.iter().zip(&c_mu).map(|(m, c)| ((m + c).max(0.0) - m).abs()).fold(0.0, f64::max);
        if moved <= 1e-9 {
            break;
        }
        let mut accepted = false;
        for _ in 0..40 {
            let cand: Vec<f64> = mu.iter().zip(&c_mu).map(|(m, c)| (m + alpha * c).max(0.0)).collect();
            let (w_c, g_c, c_c) = evaluate(&cand, &w_mu);
            let dir: f64 = cand.iter().zip(&mu).zip(&c_mu).map(|((a, b), c)| (a - b) * c).sum();
            if g_c >= g_mu + opts.armijo_c * dir {
                let gain = g_c - g_mu;
                mu = cand;
                w_mu = w_c;
                g_mu = g_c;
                c_mu = c_c;
                alpha *= 2.0;
                accepted = true;
                if gain.abs() <= opts.tol * 1e-3 * scale {
                    dual_iterations = dual_cap;
                }
                break;
            }
            alpha *= opts.armijo_shrink;
        }
        if !accepted {
            break;
        }
    }

    // Scale the Lagrangian minimizer into the feasible set, then polish.
    let mut w_dual = w_mu;
    let excess = c_mu.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if excess > 0.0 {
        let mut s: f64 = 1.0;
        let fro = w_dual.norm();
        if fro > radii.rho {
            s = s.min(radii.rho / fro);
        }
        for t in 0..nt {
            let l1: f64 = w_dual.row(t).iter().map(|v| v.abs()).sum();
            if l1 > radii.delta[t] {
                s = s.min(radii.delta[t] / l1);
            }
        }
        w_dual *= s;
    }
    let w_dual = project_feasible(&w_dual, &radii);
    let mut best = w_dual;
    if let Some(w) = warm {
        let wp = project_feasible(w, &radii);
        if prob.value(&wp) <= prob.value(&best) {
            best = wp;
        }
    }
    let (w, it, converged) = primal_polish(&prob, &radii, best, opts.max_inner);
    inner_total += it;
    Ok(PrecoderOutcome {
        objective: prob.value(&w),
        w,
        dual_iterations,
        inner_iterations: inner_total,
        multipliers: mu,
        hessian_lambda_min,
        converged,
    })
}
