//! Alternating optimization of the IRS association, precoder and detector.
//!
//! Each outer iteration solves, in order, the relaxed association
//! subproblem ([`irs`]), the precoder subproblem ([`precoder`]) and the
//! closed-form detector ([`detector`]), followed by a few steps of joint
//! precoder/detector descent. The objective is nearly flat along
//! `W → WA`, `Q → A⁻¹Q`, where exact alternation between `W` and `Q` alone
//! makes very slow progress; the joint steps move along that direction.
//! Every block update is monotone, so the MSE trace is non-increasing.
//! After convergence the relaxed association is rounded to a binary one and
//! the transceiver is re-optimized on the binary channel.

pub mod detector;
pub mod irs;
pub mod joint;
pub mod precoder;
pub mod zf;

use alloc::vec;
use alloc::vec::Vec;

use nalgebra::DMatrix;

use crate::association::{distance_greedy, recover_assignment, Assignment};
use crate::channel::ChannelSet;
use crate::objective::{feasibility, mse_wq, Design, PowerBudget, SignalStats};
use crate::scene::Scene;
use crate::{Error, Result};

pub use detector::{low_snr_detector, solve_p3_detector};
pub use irs::{
    dual_gradients, dual_value, lagrangian_vstar, mse_grad_wrt_vec_v, solve_p1b_dual, DualPrecomp, DualState,
    P1bOutcome,
};
pub use joint::{joint_descent, JointOutcome};
pub use precoder::{solve_p2_precoder, solve_p2_precoder_from, PrecoderOutcome};
pub use zf::zf_design_high_snr;

/// Tolerances, caps and switches shared by all solvers.
#[derive(Debug, Clone, PartialEq)]
pub struct SolverOptions {
    /// Convergence threshold on successive MSE values.
    pub tol: f64,
    pub max_outer: usize,
    pub max_inner: usize,
    /// Backtracking factor of the Armijo line search.
    pub armijo_shrink: f64,
    /// Sufficient-increase parameter of the Armijo line search.
    pub armijo_c: f64,
    /// Relative eigenvalue cutoff of the pseudo-inverse of `Z`.
    pub pinv_rel_tol: f64,
    /// Run the full-space primal refinement after the dual ascent.
    pub refine_primal: bool,
    /// Re-optimize `W`, `Q` on the rounded binary channel.
    pub polish_after_rounding: bool,
    /// Steps of joint precoder/detector descent after each detector update;
    /// 0 gives the plain three-block alternation.
    pub joint_steps: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            tol: 1e-6,
            max_outer: 500,
            max_inner: 5000,
            armijo_shrink: 0.5,
            armijo_c: 1e-4,
            pinv_rel_tol: 1e-12,
            refine_primal: true,
            polish_after_rounding: true,
            joint_steps: 50,
        }
    }
}

/// MSE after each block update of one outer iteration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlockMse {
    pub after_v: f64,
    pub after_w: f64,
    pub after_q: f64,
    /// After the joint precoder/detector descent; equals `after_q` when it
    /// is disabled.
    pub after_joint: f64,
}

/// Full record of one scheme run.
#[derive(Debug, Clone, PartialEq)]
pub struct SolverReport {
    /// MSE at the initial point followed by one value per outer iteration of
    /// the relaxed phase.
    pub mse_trace: Vec<f64>,
    pub block_trace: Vec<BlockMse>,
    /// Largest constraint violation of `W` at each entry of `mse_trace`.
    pub residual_trace: Vec<f64>,
    /// MSE values of the post-rounding transceiver re-optimization, starting
    /// at the rounded channel with the relaxed-phase `W`, `Q`.
    pub polish_trace: Vec<f64>,
    pub final_design: Design,
    pub final_assignment: Assignment,
    /// Relaxed association at the end of the relaxed phase, if it was optimized.
    pub relaxed_v: Option<DMatrix<f64>>,
    /// Channel of the final design.
    pub final_channel: DMatrix<f64>,
    pub final_mse: f64,
    pub outer_iterations: usize,
    /// Dual-ascent plus refinement steps of every association solve.
    pub inner_p1b: Vec<usize>,
    /// Proximal-gradient steps of every precoder solve.
    pub inner_p2: Vec<usize>,
    /// Steps of every joint precoder/detector descent.
    pub inner_joint: Vec<usize>,
    /// Largest violation of the total-power and amplitude constraints.
    pub constraint_residuals: f64,
    pub converged: bool,
    /// `NP − rank(Z)` at the last association solve.
    pub null_space_dim: usize,
    /// Smallest eigenvalue of the precoder-objective Hessian at the last
    /// precoder solve (diagnostic only).
    pub p2_lambda_min: f64,
}

/// ZF starting point, or `W = 0`, `Q = [I, 0]` when the channel or budget
/// cannot support it.
pub fn initial_transceiver(
    h: &DMatrix<f64>,
    stats: &SignalStats,
    budget: &PowerBudget,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    match zf_design_high_snr(h, stats, budget) {
        Ok(pair) => Ok(pair),
        Err(Error::RankDeficient { .. }) | Err(Error::ZeroSignalBudget) => {
            Ok((DMatrix::zeros(h.ncols(), stats.n_s), DMatrix::identity(stats.n_s, h.nrows())))
        }
        Err(e) => Err(e),
    }
}

fn check_inputs(chans: &ChannelSet, stats: &SignalStats, budget: &PowerBudget) -> Result<()> {
    stats.check_streams(chans.n_t(), chans.n_r())?;
    if budget.n_t() != chans.n_t() || budget.headroom.len() != chans.n_t() {
        return Err(Error::Dimension("budget length differs from N_t".into()));
    }
    budget.signal_budget()?;
    Ok(())
}

struct Blocks {
    v: DMatrix<f64>,
    h: DMatrix<f64>,
    w: DMatrix<f64>,
    q: DMatrix<f64>,
    trace: Vec<f64>,
    residuals: Vec<f64>,
    block_trace: Vec<BlockMse>,
    inner_p1b: Vec<usize>,
    inner_p2: Vec<usize>,
    inner_joint: Vec<usize>,
    multipliers: Option<Vec<f64>>,
    null_space_dim: usize,
    p2_lambda_min: f64,
    iterations: usize,
    converged: bool,
}

#[allow(clippy::too_many_arguments)]
fn run_blocks(
    chans: &ChannelSet,
    stats: &SignalStats,
    budget: &PowerBudget,
    v0: DMatrix<f64>,
    w0: DMatrix<f64>,
    q0: DMatrix<f64>,
    multipliers: Option<Vec<f64>>,
    optimize_v: bool,
    opts: &SolverOptions,
) -> Result<Blocks> {
    let h = chans.assemble_h(&v0)?;
    let start = mse_wq(&h, &w0, &q0, stats);
    let residual = feasibility(&w0, stats, budget).max_violation();
    let mut st = Blocks {
        v: v0,
        h,
        w: w0,
        q: q0,
        trace: vec![start],
        residuals: vec![residual],
        block_trace: Vec::new(),
        inner_p1b: Vec::new(),
        inner_p2: Vec::new(),
        inner_joint: Vec::new(),
        multipliers,
        null_space_dim: 0,
        p2_lambda_min: 0.0,
        iterations: 0,
        converged: false,
    };
    let optimize_v = optimize_v && chans.n_irs() > 0;
    while st.iterations < opts.max_outer {
        st.iterations += 1;
        if optimize_v {
            let p1 = solve_p1b_dual(chans, &st.w, &st.q, stats, &st.v, opts)?;
            st.inner_p1b.push(p1.dual_iterations + p1.refine_iterations);
            st.null_space_dim = p1.null_space_dim;
            st.v = p1.v.into_matrix();
            st.h = chans.assemble_h(&st.v)?;
        }
        let after_v = mse_wq(&st.h, &st.w, &st.q, stats);
        let p2 = solve_p2_precoder_from(&st.h, &st.q, stats, budget, Some(&st.w), st.multipliers.as_deref(), opts)?;
        st.inner_p2.push(p2.inner_iterations);
        st.p2_lambda_min = p2.hessian_lambda_min;
        st.multipliers = Some(p2.multipliers);
        st.w = p2.w;
        let after_w = mse_wq(&st.h, &st.w, &st.q, stats);
        st.q = solve_p3_detector(&st.h, &st.w, stats)?;
        let after_q = mse_wq(&st.h, &st.w, &st.q, stats);
        let mut after_joint = after_q;
        if opts.joint_steps > 0 {
            let j = joint_descent(chans, &st.v, &st.w, stats, budget, optimize_v, opts.joint_steps, 1e-2 * opts.tol)?;
            if j.mse <= after_q {
                st.v = j.v;
                st.w = j.w;
                st.q = j.q;
                st.h = j.h;
                after_joint = j.mse;
            }
            st.inner_joint.push(j.steps);
        }
        st.block_trace.push(BlockMse { after_v, after_w, after_q, after_joint });
        let prev = *st.trace.last().expect("trace starts non-empty");
        st.trace.push(after_joint);
        st.residuals.push(feasibility(&st.w, stats, budget).max_violation());
        if (after_joint - prev).abs() <= opts.tol {
            st.converged = true;
            break;
        }
    }
    Ok(st)
}

impl Blocks {
    /// A finished state at a given point, with no iterations recorded.
    fn at(
        v: DMatrix<f64>,
        h: DMatrix<f64>,
        w: DMatrix<f64>,
        q: DMatrix<f64>,
        stats: &SignalStats,
        budget: &PowerBudget,
    ) -> Self {
        let m = mse_wq(&h, &w, &q, stats);
        let residual = feasibility(&w, stats, budget).max_violation();
        Blocks {
            v,
            h,
            w,
            q,
            trace: vec![m],
            residuals: vec![residual],
            block_trace: Vec::new(),
            inner_p1b: Vec::new(),
            inner_p2: Vec::new(),
            inner_joint: Vec::new(),
            multipliers: None,
            null_space_dim: 0,
            p2_lambda_min: 0.0,
            iterations: 0,
            converged: true,
        }
    }
}

fn finish(
    stats: &SignalStats,
    budget: &PowerBudget,
    assignment: Assignment,
    relaxed: Option<DMatrix<f64>>,
    main: Blocks,
    polish: Option<Blocks>,
) -> SolverReport {
    let converged = main.converged && polish.as_ref().is_none_or(|p| p.converged);
    let mut inner_p2 = main.inner_p2;
    let mut inner_joint = main.inner_joint;
    let (h, w, q, p2_lambda_min, polish_trace) = match polish {
        Some(p) => {
            inner_p2.extend(p.inner_p2);
            inner_joint.extend(p.inner_joint);
            let lmin = if p.iterations > 0 { p.p2_lambda_min } else { main.p2_lambda_min };
            (p.h, p.w, p.q, lmin, p.trace)
        }
        None => (main.h, main.w, main.q, main.p2_lambda_min, Vec::new()),
    };
    let final_mse = mse_wq(&h, &w, &q, stats);
    let constraint_residuals = feasibility(&w, stats, budget).max_violation();
    SolverReport {
        mse_trace: main.trace,
        block_trace: main.block_trace,
        residual_trace: main.residuals,
        polish_trace,
        final_design: Design { w, q, r: budget.bias.clone() },
        final_assignment: assignment,
        relaxed_v: relaxed,
        final_channel: h,
        final_mse,
        outer_iterations: main.iterations,
        inner_p1b: main.inner_p1b,
        inner_p2,
        inner_joint,
        constraint_residuals,
        converged,
        null_space_dim: main.null_space_dim,
        p2_lambda_min,
    }
}

/// Joint optimization starting from the distance-greedy association.
pub fn alternating_optimize(
    scene: &Scene,
    chans: &ChannelSet,
    stats: &SignalStats,
    budget: &PowerBudget,
    opts: &SolverOptions,
) -> Result<SolverReport> {
    if scene.n_irs() != chans.n_irs() || scene.n_t() != chans.n_t() || scene.n_r() != chans.n_r() {
        return Err(Error::Dimension("scene and channel bank disagree".into()));
    }
    alternating_optimize_from(chans, stats, budget, &distance_greedy(scene), opts)
}

/// Joint optimization from a given initial association.
pub fn alternating_optimize_from(
    chans: &ChannelSet,
    stats: &SignalStats,
    budget: &PowerBudget,
    initial: &Assignment,
    opts: &SolverOptions,
) -> Result<SolverReport> {
    check_inputs(chans, stats, budget)?;
    check_assignment(chans, initial)?;
    let v0 = initial.to_v();
    let h0 = chans.assemble_h(&v0)?;
    let (w0, q0) = initial_transceiver(&h0, stats, budget)?;
    let main = run_blocks(chans, stats, budget, v0, w0, q0, None, true, opts)?;
    if chans.n_irs() == 0 {
        let a = Assignment::empty(0, chans.n_t(), chans.n_r());
        return Ok(finish(stats, budget, a, None, main, None));
    }
    let relaxed = main.v.clone();
    let assignment = recover_assignment(&crate::association::RelaxedV::new(relaxed.clone(), chans.n_r())?);
    let vb = assignment.to_v();
    let polish = if opts.polish_after_rounding {
        run_blocks(chans, stats, budget, vb, main.w.clone(), main.q.clone(), main.multipliers.clone(), false, opts)?
    } else {
        let h = chans.assemble_h(&vb)?;
        Blocks::at(vb, h, main.w.clone(), main.q.clone(), stats, budget)
    };
    Ok(finish(stats, budget, assignment, Some(relaxed), main, Some(polish)))
}

fn check_assignment(chans: &ChannelSet, a: &Assignment) -> Result<()> {
    if a.n_irs() != chans.n_irs() || a.n_t() != chans.n_t() || a.n_r() != chans.n_r() {
        return Err(Error::Dimension("assignment does not match the channel bank".into()));
    }
    let violations = a.validate();
    if !violations.is_empty() {
        return Err(Error::InvalidParameter(crate::association::describe_violations(&violations)));
    }
    Ok(())
}

/// `W`, `Q` alternation on the channel of a fixed association, from the
/// same starting point as [`alternating_optimize_from`].
pub fn fixed_assignment_design(
    chans: &ChannelSet,
    stats: &SignalStats,
    budget: &PowerBudget,
    assignment: &Assignment,
    opts: &SolverOptions,
) -> Result<SolverReport> {
    check_inputs(chans, stats, budget)?;
    check_assignment(chans, assignment)?;
    let v0 = assignment.to_v();
    let h0 = chans.assemble_h(&v0)?;
    let (w0, q0) = initial_transceiver(&h0, stats, budget)?;
    let main = run_blocks(chans, stats, budget, v0, w0, q0, None, false, opts)?;
    Ok(finish(stats, budget, assignment.clone(), None, main, None))
}
