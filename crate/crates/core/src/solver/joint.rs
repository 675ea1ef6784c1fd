//! Joint descent on the MSE with the detector eliminated.
//!
//! For fixed `V` and `W` the optimal detector is available in closed form,
//! so `φ(V, W) = min_Q MSE(V, W, Q)` is a smooth function on the product of
//! the relaxed association set and the precoder feasible set. By Danskin's
//! theorem its gradient is the partial gradient of the MSE at the optimal
//! detector. Projected gradient steps on `φ` move `V`, `W` and `Q` together,
//! which block-wise updates can only do in many small steps.

use nalgebra::DMatrix;

use crate::channel::ChannelSet;
use crate::linalg::lambda_max_sym;
use crate::objective::{mse_wq, PowerBudget, SignalStats};
use crate::solver::detector::solve_p3_detector;
use crate::solver::irs::project_rows;
use crate::solver::precoder::{project_feasible, Radii};
use crate::{Error, Result};

/// Result of [`joint_descent`].
#[derive(Debug, Clone, PartialEq)]
pub struct JointOutcome {
    pub v: DMatrix<f64>,
    pub w: DMatrix<f64>,
    pub q: DMatrix<f64>,
    pub h: DMatrix<f64>,
    pub mse: f64,
    pub steps: usize,
}

struct Point {
    v: DMatrix<f64>,
    w: DMatrix<f64>,
    h: DMatrix<f64>,
    q: DMatrix<f64>,
    mse: f64,
}

fn evaluate(chans: &ChannelSet, stats: &SignalStats, v: DMatrix<f64>, w: DMatrix<f64>) -> Option<Point> {
    let h = chans.assemble_h(&v).ok()?;
    let q = solve_p3_detector(&h, &w, stats).ok()?;
    let mse = mse_wq(&h, &w, &q, stats);
    mse.is_finite().then_some(Point { v, w, h, q, mse })
}

/// Gradients of the MSE with respect to `V` and `W` at `(V, W, Q)`.
fn gradients(chans: &ChannelSet, stats: &SignalStats, pt: &Point) -> (DMatrix<f64>, DMatrix<f64>) {
    let mut e = &pt.q * &pt.h * &pt.w;
    for i in 0..e.nrows().min(e.ncols()) {
        e[(i, i)] -= 1.0;
    }
    let two = 2.0 * stats.sigma_x2;
    let g_w = (&pt.q * &pt.h).transpose() * &e * two;
    let n = chans.n_irs();
    let mut g_v = DMatrix::zeros(n, chans.n_pairs());
    if n > 0 {
        let g_h = pt.q.transpose() * &e * pt.w.transpose() * two;
        for (p, gh) in g_h.as_slice().iter().enumerate() {
            for i in 0..n {
                g_v[(i, p)] = chans.h_nlos()[(i, p)] * gh;
            }
        }
    }
    (g_v, g_w)
}

/// Curvature bounds of the MSE in `V` and in `W` at fixed `Q`.
fn lipschitz(chans: &ChannelSet, stats: &SignalStats, pt: &Point) -> (f64, f64) {
    let two = 2.0 * stats.sigma_x2;
    let g = &pt.q * &pt.h;
    let l_w = two * lambda_max_sym(&(g.transpose() * &g));
    let col_max = (0..chans.n_pairs()).map(|p| chans.h_nlos().column(p).norm_squared()).fold(0.0, f64::max);
    let l_v = two * lambda_max_sym(&(&pt.w * pt.w.transpose())) * lambda_max_sym(&(pt.q.transpose() * &pt.q)) * col_max;
    (l_v, l_w)
}

/// Projected gradient descent on `φ(V, W)` from `(v, w)`.
///
/// With `optimize_v == false` only `W` moves. Every accepted step passes a
/// sufficient-decrease test in the block-scaled metric, so the returned MSE
/// never exceeds `φ` at the (projected) start. Iteration stops when a step
/// gains at most `tol`, after `max_steps` steps, or when no step is accepted.
#[allow(clippy::too_many_arguments)]
pub fn joint_descent(
    chans: &ChannelSet,
    v: &DMatrix<f64>,
    w: &DMatrix<f64>,
    stats: &SignalStats,
    budget: &PowerBudget,
    optimize_v: bool,
    max_steps: usize,
    tol: f64,
) -> Result<JointOutcome> {
    let (n, pairs) = (chans.n_irs(), chans.n_pairs());
    if v.shape() != (n, pairs) || w.shape() != (chans.n_t(), stats.n_s) {
        return Err(Error::Dimension("joint descent inputs do not match the channel bank".into()));
    }
    let radii = Radii::new(stats, budget)?;
    let optimize_v = optimize_v && n > 0;
    let mut v0 = v.clone();
    if optimize_v {
        project_rows(v0.as_mut_slice(), n, pairs);
    }
    let w0 = project_feasible(w, &radii);
    let mut pt = match evaluate(chans, stats, v0.clone(), w0.clone()) {
        Some(pt) => pt,
        None => {
            // Surface the detector error for the caller.
            let h = chans.assemble_h(&v0)?;
            let q = solve_p3_detector(&h, &w0, stats)?;
            let mse = mse_wq(&h, &w0, &q, stats);
            return Ok(JointOutcome { v: v0, w: w0, q, h, mse, steps: 0 });
        }
    };
    let (l_v, l_w) = lipschitz(chans, stats, &pt);
    let mut step_w = if l_w > 0.0 { 1.0 / l_w } else { 0.0 };
    let mut step_v = if optimize_v && l_v > 0.0 { 1.0 / l_v } else { 0.0 };
    let mut steps = 0;
    if step_w == 0.0 && step_v == 0.0 {
        return Ok(finish(pt, 0));
    }
    while steps < max_steps {
        steps += 1;
        let (g_v, g_w) = gradients(chans, stats, &pt);
        let mut accepted: Option<Point> = None;
        for _ in 0..60 {
            let w_new = if step_w > 0.0 { project_feasible(&(&pt.w - &g_w * step_w), &radii) } else { pt.w.clone() };
            let v_new = if step_v > 0.0 {
                let mut x = &pt.v - &g_v * step_v;
                project_rows(x.as_mut_slice(), n, pairs);
                x
            } else {
                pt.v.clone()
            };
            let d_w = &w_new - &pt.w;
            let d_v = &v_new - &pt.v;
            let mut model = g_w.dot(&d_w);
            if step_w > 0.0 {
                model += d_w.norm_squared() / (2.0 * step_w);
            }
            if step_v > 0.0 {
                model += g_v.dot(&d_v) + d_v.norm_squared() / (2.0 * step_v);
            }
            if d_w.norm_squared() == 0.0 && d_v.norm_squared() == 0.0 {
                break;
            }
            if let Some(cand) = evaluate(chans, stats, v_new, w_new) {
                if cand.mse <= pt.mse + model && cand.mse <= pt.mse {
                    accepted = Some(cand);
                    break;
                }
            }
            step_w *= 0.5;
            step_v *= 0.5;
        }
        let Some(cand) = accepted else { break };
        let gain = pt.mse - cand.mse;
        pt = cand;
        step_w *= 1.5;
        step_v *= 1.5;
        if gain <= tol {
            break;
        }
    }
    Ok(finish(pt, steps))
}

fn finish(pt: Point, steps: usize) -> JointOutcome {
    JointOutcome { v: pt.v, w: pt.w, q: pt.q, h: pt.h, mse: pt.mse, steps }
}

/// Stacked gradient of `φ` at `(v, w)`, for tests and diagnostics.
pub fn reduced_gradient(
    chans: &ChannelSet,
    v: &DMatrix<f64>,
    w: &DMatrix<f64>,
    stats: &SignalStats,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let h = chans.assemble_h(v)?;
    let q = solve_p3_detector(&h, w, stats)?;
    let mse = mse_wq(&h, w, &q, stats);
    let pt = Point { v: v.clone(), w: w.clone(), h, q, mse };
    Ok(gradients(chans, stats, &pt))
}
