//! IRS association subproblem: minimize the MSE over the relaxed `V` for
//! fixed `W` and `Q`.
//!
//! With `A = diag(H^NLoS)` (block-diagonal, `NP × P`) the channel is
//! `vec(H) = vec(H1) + Aᵀ vec(V)` and the MSE is the quadratic
//! `½ vᵀ Z v − constᵀ v + m0` with `Z = A (U + Uᵀ) Aᵀ`. The columns of `A`
//! have disjoint supports, so `A = Ã D` with orthonormal `Ã` and
//! `Z⁺ = Ã M⁺ Ãᵀ` for the small `P × P` matrix `M = D (U + Uᵀ) D`. Nothing of
//! size `NP × NP` is ever formed.
//!
//! The dual is solved by cyclic projected gradient ascent. Because `Z` is
//! singular, the pseudo-inverse dual is the exact dual of the problem
//! restricted to `v ∈ range(Z)`; the repaired dual iterate is therefore
//! followed by a primal projected-gradient refinement over the full relaxed
//! set.

use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};

use crate::association::RelaxedV;
use crate::channel::ChannelSet;
use crate::linalg::{kron, project_capped_simplex, sym_pinv, SymPinv};
use crate::math;
use crate::objective::SignalStats;
use crate::solver::SolverOptions;
use crate::{Error, Result};

/// Multipliers of the row-sum (`μ1`), lower-bound (`μ2`) and upper-bound
/// (`μ3`) constraints.
#[derive(Debug, Clone, PartialEq)]
pub struct DualState {
    pub mu1: DVector<f64>,
    pub mu2: DVector<f64>,
    pub mu3: DVector<f64>,
}

impl DualState {
    pub fn constant(n: usize, pairs: usize, value: f64) -> Self {
        Self {
            mu1: DVector::from_element(n, value),
            mu2: DVector::from_element(n * pairs, value),
            mu3: DVector::from_element(n * pairs, value),
        }
    }

    fn block(&self, k: usize) -> &DVector<f64> {
        match k {
            0 => &self.mu1,
            1 => &self.mu2,
            _ => &self.mu3,
        }
    }

    fn block_mut(&mut self, k: usize) -> &mut DVector<f64> {
        match k {
            0 => &mut self.mu1,
            1 => &mut self.mu2,
            _ => &mut self.mu3,
        }
    }
}

/// Everything the dual iteration needs that depends only on `W`, `Q` and the
/// channel bank.
#[derive(Debug, Clone)]
pub struct DualPrecomp {
    /// `U = σx² (W Wᵀ) ⊗ (Qᵀ Q)`, `P × P`.
    pub u: DMatrix<f64>,
    /// `c = σx² vec(Qᵀ Wᵀ)`.
    pub c: DVector<f64>,
    /// `diag(H^NLoS) [2c − (U + Uᵀ) vec(H1)]`, length `NP`.
    pub const_rhs: DVector<f64>,
    /// `W`, `Q`-independent part of the MSE, `σω² ‖Q‖² + N_s σx²`.
    pub m0: f64,
    h1: DVector<f64>,
    /// Normalized NLoS columns `ã[n, p]` and their norms.
    basis: DMatrix<f64>,
    norms: Vec<f64>,
    m: DMatrix<f64>,
    m_pinv: SymPinv,
    n: usize,
    pairs: usize,
}

impl DualPrecomp {
    pub fn new(
        chans: &ChannelSet,
        w: &DMatrix<f64>,
        q: &DMatrix<f64>,
        stats: &SignalStats,
        pinv_rel_tol: f64,
    ) -> Result<Self> {
        let (nr, nt) = (chans.n_r(), chans.n_t());
        if w.nrows() != nt || q.ncols() != nr || q.nrows() != w.ncols() {
            return Err(Error::Dimension("W, Q do not match the channel bank".into()));
        }
        let n = chans.n_irs();
        let pairs = chans.n_pairs();
        let u = kron(&(w * w.transpose()), &(q.transpose() * q)) * stats.sigma_x2;
        let c = DVector::from_column_slice((q.transpose() * w.transpose()).as_slice()) * stats.sigma_x2;
        let h1 = DVector::from_column_slice(chans.h1().as_slice());
        let hn = chans.h_nlos();
        let mut basis = DMatrix::zeros(n, pairs);
        let mut norms = vec![0.0; pairs];
        for p in 0..pairs {
            let nrm = hn.column(p).norm();
            norms[p] = nrm;
            if nrm > 0.0 {
                for i in 0..n {
                    basis[(i, p)] = hn[(i, p)] / nrm;
                }
            }
        }
        let two_u = &u * 2.0;
        let m = DMatrix::from_fn(pairs, pairs, |i, j| norms[i] * two_u[(i, j)] * norms[j]);
        let m_pinv = sym_pinv(&m, pinv_rel_tol);
        let inner = &c * 2.0 - &two_u * &h1;
        let mut const_rhs = DVector::zeros(n * pairs);
        for p in 0..pairs {
            for i in 0..n {
                const_rhs[i + p * n] = hn[(i, p)] * inner[p];
            }
        }
        let m0 = stats.sigma_w2 * q.norm_squared() + w.ncols() as f64 * stats.sigma_x2;
        Ok(Self { u, c, const_rhs, m0, h1, basis, norms, m, m_pinv, n, pairs })
    }

    pub fn n_irs(&self) -> usize {
        self.n
    }

    pub fn n_pairs(&self) -> usize {
        self.pairs
    }

    /// `rank(Z)`.
    pub fn rank(&self) -> usize {
        self.m_pinv.rank
    }

    /// `NP − rank(Z)`.
    pub fn null_space_dim(&self) -> usize {
        self.n * self.pairs - self.m_pinv.rank
    }

    /// `λ_max(Z)`, the Lipschitz constant of the MSE gradient in `vec(V)`.
    pub fn lambda_max(&self) -> f64 {
        self.m_pinv.lambda_max
    }

    /// Smallest eigenvalue of `Z` kept by the pseudo-inverse truncation.
    pub fn lambda_min_kept(&self) -> f64 {
        self.m_pinv.lambda_min_kept
    }

    fn project_down(&self, v: &[f64]) -> DVector<f64> {
        DVector::from_fn(self.pairs, |p, _| (0..self.n).map(|i| self.basis[(i, p)] * v[i + p * self.n]).sum())
    }

    fn lift(&self, y: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(self.n * self.pairs);
        for p in 0..self.pairs {
            for i in 0..self.n {
                out[i + p * self.n] = self.basis[(i, p)] * y[p];
            }
        }
        out
    }

    /// `Z⁺ b`.
    pub fn apply_z_pinv(&self, b: &[f64]) -> DVector<f64> {
        self.lift(&(&self.m_pinv.pinv * self.project_down(b)))
    }

    /// `Z v`.
    pub fn apply_z(&self, v: &[f64]) -> DVector<f64> {
        self.lift(&(&self.m * self.project_down(v)))
    }

    /// Dense `Z`; only sensible for small instances.
    pub fn z_dense(&self) -> DMatrix<f64> {
        let np = self.n * self.pairs;
        let mut z = DMatrix::zeros(np, np);
        for k in 0..np {
            let mut e = vec![0.0; np];
            e[k] = 1.0;
            z.set_column(k, &self.apply_z(&e));
        }
        z
    }

    /// Dense `Z⁺`; only sensible for small instances.
    pub fn z_pinv_dense(&self) -> DMatrix<f64> {
        let np = self.n * self.pairs;
        let mut z = DMatrix::zeros(np, np);
        for k in 0..np {
            let mut e = vec![0.0; np];
            e[k] = 1.0;
            z.set_column(k, &self.apply_z_pinv(&e));
        }
        z
    }

    /// `vec(H)` for a given `vec(V)`.
    pub fn channel_vec(&self, vec_v: &[f64]) -> DVector<f64> {
        let down = self.project_down(vec_v);
        DVector::from_fn(self.pairs, |p, _| self.h1[p] + self.norms[p] * down[p])
    }

    /// MSE as a function of `vec(V)`.
    pub fn mse(&self, vec_v: &[f64]) -> f64 {
        let h = self.channel_vec(vec_v);
        let quad = h.dot(&(&self.u * &h));
        (self.m0 + quad - 2.0 * self.c.dot(&h)).max(0.0)
    }

    /// `∂MSE/∂vec(V) = diag(H^NLoS) [(U + Uᵀ) vec(H) − 2c]`.
    pub fn mse_grad(&self, vec_v: &[f64]) -> DVector<f64> {
        let h = self.channel_vec(vec_v);
        let inner = (&self.u * &h) * 2.0 - &self.c * 2.0;
        let scaled = DVector::from_fn(self.pairs, |p, _| self.norms[p] * inner[p]);
        self.lift(&scaled)
    }

    fn rhs(&self, dual: &DualState) -> DVector<f64> {
        let mut b = self.const_rhs.clone();
        for p in 0..self.pairs {
            for i in 0..self.n {
                let k = i + p * self.n;
                b[k] += -dual.mu1[i] + dual.mu2[k] - dual.mu3[k];
            }
        }
        b
    }

    fn row_sums(&self, v: &[f64]) -> DVector<f64> {
        DVector::from_fn(self.n, |i, _| (0..self.pairs).map(|p| v[i + p * self.n]).sum())
    }
}

/// Minimizer of the Lagrangian over `vec(V)`:
/// `Z⁺ (const − vec(μ1 1ᵀ) + μ2 − μ3)`.
pub fn lagrangian_vstar(dual: &DualState, pre: &DualPrecomp) -> DVector<f64> {
    pre.apply_z_pinv(pre.rhs(dual).as_slice())
}

/// Gradient of the MSE with respect to `vec(V)`.
pub fn mse_grad_wrt_vec_v(vec_v: &[f64], pre: &DualPrecomp) -> DVector<f64> {
    pre.mse_grad(vec_v)
}

/// Dual function `g(μ) = L(V*(μ), μ)`.
pub fn dual_value(dual: &DualState, pre: &DualPrecomp) -> f64 {
    let v = lagrangian_vstar(dual, pre);
    dual_value_at(dual, pre, &v)
}

fn dual_value_at(dual: &DualState, pre: &DualPrecomp, v: &DVector<f64>) -> f64 {
    let rows = pre.row_sums(v.as_slice());
    let mut g = pre.mse(v.as_slice());
    g += dual.mu1.iter().zip(rows.iter()).map(|(m, s)| m * (s - 1.0)).sum::<f64>();
    g -= dual.mu2.dot(v);
    g += dual.mu3.iter().zip(v.iter()).map(|(m, x)| m * (x - 1.0)).sum::<f64>();
    g
}

/// Gradients of the dual function with respect to `μ1`, `μ2`, `μ3`.
///
/// Each carries the chain-rule term through `V*(μ)`, which is the
/// pseudo-inverse applied to the Lagrangian gradient at `V*`; that term is
/// zero up to rounding because the gradient lies in the null space of `Z`.
pub fn dual_gradients(dual: &DualState, pre: &DualPrecomp) -> (DVector<f64>, DVector<f64>, DVector<f64>) {
    let b = pre.rhs(dual);
    let v = pre.apply_z_pinv(b.as_slice());
    dual_gradients_at(pre, &v, &b)
}

fn dual_gradients_at(
    pre: &DualPrecomp,
    v: &DVector<f64>,
    b: &DVector<f64>,
) -> (DVector<f64>, DVector<f64>, DVector<f64>) {
    let residual = pre.apply_z(v.as_slice()) - b;
    let chain = pre.apply_z_pinv(residual.as_slice());
    let g1 = pre.row_sums(v.as_slice()).add_scalar(-1.0) - pre.row_sums(chain.as_slice());
    let g2 = -v + &chain;
    let g3 = v.add_scalar(-1.0) - &chain;
    (g1, g2, g3)
}

/// Outcome of one IRS subproblem solve.
#[derive(Debug, Clone)]
pub struct P1bOutcome {
    pub v: RelaxedV,
    /// MSE at the returned `V`.
    pub mse: f64,
    /// MSE of the clipped and row-scaled dual iterate.
    pub repaired_mse: f64,
    /// Dual function at the final multipliers.
    pub dual_value: f64,
    /// Dual values at every accepted ascent step, starting from the
    /// initial multipliers.
    pub dual_trace: Vec<f64>,
    pub dual: DualState,
    pub dual_iterations: usize,
    pub refine_iterations: usize,
    pub null_space_dim: usize,
    /// Dual ascent stopped on the change criterion rather than the cap.
    pub converged: bool,
}

/// Entrywise clip to `[0, 1]`, then scale down rows whose sum exceeds one.
pub fn repair_relaxed(v: &mut DMatrix<f64>) {
    for x in v.iter_mut() {
        *x = x.clamp(0.0, 1.0);
    }
    for i in 0..v.nrows() {
        let s: f64 = v.row(i).sum();
        if s > 1.0 {
            let inv = 1.0 / s;
            for x in v.row_mut(i).iter_mut() {
                *x *= inv;
            }
        }
    }
}

pub(crate) fn project_rows(v: &mut [f64], n: usize, pairs: usize) {
    let mut row = vec![0.0; pairs];
    for i in 0..n {
        for p in 0..pairs {
            row[p] = v[i + p * n];
        }
        project_capped_simplex(&mut row);
        for p in 0..pairs {
            v[i + p * n] = row[p];
        }
    }
}

/// Projected gradient over the relaxed feasible set, monotone with
/// adaptive restart.
fn refine_primal(pre: &DualPrecomp, start: DVector<f64>, max_iter: usize) -> (DVector<f64>, f64, usize) {
    let (n, pairs) = (pre.n, pre.pairs);
    let lip = pre.lambda_max();
    let mut x = start;
    let mut fx = pre.mse(x.as_slice());
    if lip.is_nan() || lip <= 0.0 {
        return (x, fx, 0);
    }
    let mut y = x.clone();
    let mut t = 1.0;
    let mut iters = 0;
    let tol = 1e-10 * math::sqrt(n as f64);
    while iters < max_iter {
        iters += 1;
        let mut xn = &y - pre.mse_grad(y.as_slice()) / lip;
        project_rows(xn.as_mut_slice(), n, pairs);
        let fxn = pre.mse(xn.as_slice());
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
        if step <= tol {
            break;
        }
    }
    (x, fx, iters)
}

/// Dual-ascent iteration cap when the primal refinement follows.
const REFINED_DUAL_CAP: usize = 500;

/// Solves the relaxed IRS subproblem for fixed `W`, `Q`.
///
/// `v_ref` is the current (feasible) association; the returned `V` never has
/// a larger MSE.
pub fn solve_p1b_dual(
    chans: &ChannelSet,
    w: &DMatrix<f64>,
    q: &DMatrix<f64>,
    stats: &SignalStats,
    v_ref: &DMatrix<f64>,
    opts: &SolverOptions,
) -> Result<P1bOutcome> {
    let pre = DualPrecomp::new(chans, w, q, stats, opts.pinv_rel_tol)?;
    let (n, pairs) = (pre.n, pre.pairs);
    if v_ref.shape() != (n, pairs) {
        return Err(Error::Dimension("reference V does not match the channel bank".into()));
    }
    let mut dual = DualState::constant(n, pairs, opts.tol);
    let mut b = pre.rhs(&dual);
    let mut v = pre.apply_z_pinv(b.as_slice());
    let mut g_cur = dual_value_at(&dual, &pre, &v);
    let mut dual_trace = vec![g_cur];
    let mut f_prev = pre.mse(v.as_slice());
    let mut g_prev = g_cur;
    // ‖C‖² ≤ P + 2 for the stacked constraint map C, and ‖Z⁺‖ = 1/λ_min kept,
    // so the dual gradient is Lipschitz with constant at most (P + 2)/λ_min.
    let lip = if pre.lambda_min_kept() > 0.0 { (pairs as f64 + 2.0) / pre.lambda_min_kept() } else { 1.0 };
    let mut alpha = 1.0 / lip;
    let mut converged = false;
    let mut dual_iterations = 0;

    if pre.rank() > 0 {
        // With the primal refinement on, the dual iterate only seeds it.
        let dual_cap = if opts.refine_primal { opts.max_inner.min(REFINED_DUAL_CAP) } else { opts.max_inner };
        // Accelerated projected ascent over all three blocks, restarted
        // whenever the extrapolated step would lower the dual value.
        let mut y = dual.clone();
        let (mut b_y, mut v_y, mut g_y) = (b.clone(), v.clone(), g_cur);
        let mut t = 1.0f64;
        while dual_iterations < dual_cap {
            dual_iterations += 1;
            let grads = dual_gradients_at(&pre, &v_y, &b_y);
            let grads = [grads.0, grads.1, grads.2];
            let mut accepted = None;
            for _ in 0..60 {
                let mut cand = y.clone();
                let (mut lin, mut sq) = (0.0, 0.0);
                for (k, grad) in grads.iter().enumerate() {
                    let (blk, base) = (cand.block_mut(k), y.block(k));
                    for ((m, g), o) in blk.iter_mut().zip(grad.iter()).zip(base.iter()) {
                        *m = (o + alpha * g).max(0.0);
                        lin += (*m - o) * g;
                        sq += (*m - o) * (*m - o);
                    }
                }
                if sq == 0.0 {
                    break;
                }
                let b_c = pre.rhs(&cand);
                let v_c = pre.apply_z_pinv(b_c.as_slice());
                let g_c = dual_value_at(&cand, &pre, &v_c);
                if g_c >= g_y + lin - sq / (2.0 * alpha) {
                    accepted = Some((cand, b_c, v_c, g_c));
                    break;
                }
                alpha *= opts.armijo_shrink;
            }
            let Some((cand, b_c, v_c, g_c)) = accepted else {
                if t > 1.0 {
                    // Restart from the last accepted iterate.
                    t = 1.0;
                    y = dual.clone();
                    (b_y, v_y, g_y) = (b.clone(), v.clone(), g_cur);
                    continue;
                }
                converged = true;
                break;
            };
            if g_c < g_cur {
                t = 1.0;
                y = dual.clone();
                (b_y, v_y, g_y) = (b.clone(), v.clone(), g_cur);
                continue;
            }
            let t_next = 0.5 * (1.0 + math::sqrt(1.0 + 4.0 * t * t));
            let beta = (t - 1.0) / t_next;
            let mut y_next = cand.clone();
            for k in 0..3 {
                let (blk, old) = (y_next.block_mut(k), dual.block(k));
                for (m, o) in blk.iter_mut().zip(old.iter()) {
                    *m = (*m + beta * (*m - o)).max(0.0);
                }
            }
            t = t_next;
            dual = cand;
            b = b_c;
            v = v_c;
            g_cur = g_c;
            dual_trace.push(g_c);
            b_y = pre.rhs(&y_next);
            v_y = pre.apply_z_pinv(b_y.as_slice());
            g_y = dual_value_at(&y_next, &pre, &v_y);
            y = y_next;
            alpha /= opts.armijo_shrink;

            // The MSE at V* alone can stall while the multipliers are still
            // far from optimal, so the dual value has to settle too.
            let f = pre.mse(v.as_slice());
            if (f - f_prev).abs() <= opts.tol && (g_cur - g_prev).abs() <= opts.tol {
                converged = true;
                break;
            }
            f_prev = f;
            g_prev = g_cur;
        }
    } else {
        converged = true;
    }

    let mut repaired = DMatrix::from_column_slice(n, pairs, v.as_slice());
    repair_relaxed(&mut repaired);
    let repaired_vec = DVector::from_column_slice(repaired.as_slice());
    let repaired_mse = pre.mse(repaired_vec.as_slice());

    let mut reference = DVector::from_column_slice(v_ref.as_slice());
    project_rows(reference.as_mut_slice(), n, pairs);
    let ref_mse = pre.mse(reference.as_slice());
    let start = if repaired_mse <= ref_mse { repaired_vec } else { reference };

    let (best, mse, refine_iterations) = if opts.refine_primal {
        refine_primal(&pre, start, opts.max_inner)
    } else {
        let f = pre.mse(start.as_slice());
        (start, f, 0)
    };
    let v_out = RelaxedV::new(DMatrix::from_column_slice(n, pairs, best.as_slice()), chans.n_r())?;
    Ok(P1bOutcome {
        v: v_out,
        mse,
        repaired_mse,
        dual_value: g_cur,
        dual_trace,
        dual,
        dual_iterations,
        refine_iterations,
        null_space_dim: pre.null_space_dim(),
        converged,
    })
}
