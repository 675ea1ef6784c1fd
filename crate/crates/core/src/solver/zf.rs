//! High-SNR zero-forcing transceiver.

use nalgebra::DMatrix;

use crate::linalg::row_l1_norms;
use crate::math;
use crate::objective::{PowerBudget, SignalStats};
use crate::{Error, Result};

/// Relative singular-value threshold used for the rank decision.
const RANK_TOL: f64 = 1e-12;

/// Unscaled zero-forcing pair `(W0, Q0)` with `Q0 H W0 = I_{N_s}`.
///
/// For full row rank `W0` is the first `N_s` columns of `H⁺` and
/// `Q0 = [I, 0]`. When `N_s ≤ rank(H) < N_r` the dominant singular
/// directions are used instead: `W0 = V_s Λ_s⁻¹`, `Q0 = U_sᵀ`.
pub fn zf_pair(h: &DMatrix<f64>, n_s: usize) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let (nr, nt) = h.shape();
    if n_s == 0 || n_s > nr.min(nt) {
        return Err(Error::RankDeficient { rank: nr.min(nt), n_s });
    }
    let svd = h.clone().svd(true, true);
    let u = svd.u.as_ref().expect("u requested");
    let vt = svd.v_t.as_ref().expect("v_t requested");
    let sv = &svd.singular_values;
    let smax = sv.iter().cloned().fold(0.0_f64, f64::max);
    let kept: alloc::vec::Vec<usize> = {
        let mut idx: alloc::vec::Vec<usize> =
            (0..sv.len()).filter(|&k| smax > 0.0 && sv[k] > RANK_TOL * smax).collect();
        idx.sort_by(|&a, &b| sv[b].partial_cmp(&sv[a]).unwrap_or(core::cmp::Ordering::Equal));
        idx
    };
    let rank = kept.len();
    if rank < n_s {
        return Err(Error::RankDeficient { rank, n_s });
    }
    if rank == nr {
        // H⁺ = Ṽ Λ⁻¹ Uᵀ restricted to its first N_s columns.
        let mut w0 = DMatrix::zeros(nt, n_s);
        for &k in &kept {
            let inv = 1.0 / sv[k];
            for j in 0..n_s {
                let coef = inv * u[(j, k)];
                for i in 0..nt {
                    w0[(i, j)] += vt[(k, i)] * coef;
                }
            }
        }
        let q0 = DMatrix::identity(n_s, nr);
        Ok((w0, q0))
    } else {
        let mut w0 = DMatrix::zeros(nt, n_s);
        let mut q0 = DMatrix::zeros(n_s, nr);
        for (j, &k) in kept.iter().take(n_s).enumerate() {
            for i in 0..nt {
                w0[(i, j)] = vt[(k, i)] / sv[k];
            }
            for i in 0..nr {
                q0[(j, i)] = u[(i, k)];
            }
        }
        Ok((w0, q0))
    }
}

/// Largest `ζ` for which `ζ W0` meets both the total-power and the per-LED
/// amplitude constraint.
pub fn feasible_scale(w0: &DMatrix<f64>, stats: &SignalStats, budget: &PowerBudget) -> Result<f64> {
    let signal = budget.signal_budget()?;
    let fro2 = w0.norm_squared();
    let mut zeta = if fro2 > 0.0 { math::sqrt(signal / (stats.sigma_x2 * fro2)) } else { f64::INFINITY };
    let peak = stats.peak_amplitude();
    for (t, l1) in row_l1_norms(w0).into_iter().enumerate() {
        if l1 > 0.0 {
            zeta = zeta.min(budget.headroom[t].max(0.0) / (peak * l1));
        }
    }
    Ok(zeta)
}

/// Zero-forcing design `(W_zf, Q_zf) = (ζ W0, ζ⁻¹ Q0)`, exact inverse of the
/// channel on the `N_s` streams and feasible for both power constraints.
pub fn zf_design_high_snr(
    h: &DMatrix<f64>,
    stats: &SignalStats,
    budget: &PowerBudget,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    if budget.n_t() != h.ncols() || budget.headroom.len() != h.ncols() {
        return Err(Error::Dimension("budget length differs from N_t".into()));
    }
    let (w0, q0) = zf_pair(h, stats.n_s)?;
    let zeta = feasible_scale(&w0, stats, budget)?;
    if !(zeta > 0.0 && zeta.is_finite()) {
        return Err(Error::ZeroSignalBudget);
    }
    Ok((w0 * zeta, q0 / zeta))
}
