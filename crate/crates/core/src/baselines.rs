//! Reference designs: ZF and MMSE precoding, the no-IRS system, and fixed
//! (distance-greedy or random) IRS associations.

use nalgebra::DMatrix;

use crate::association::{distance_greedy, random_assignment_dims, Assignment};
use crate::channel::ChannelSet;
use crate::linalg::pinv;
use crate::objective::{Design, PowerBudget, SignalStats};
use crate::scene::Scene;
use crate::solver::zf::feasible_scale;
use crate::solver::{fixed_assignment_design, solve_p3_detector, zf_design_high_snr, SolverOptions, SolverReport};
use crate::{Error, Result};

fn with_detector(h: &DMatrix<f64>, w: DMatrix<f64>, stats: &SignalStats, budget: &PowerBudget) -> Result<Design> {
    let q = solve_p3_detector(h, &w, stats)?;
    Ok(Design { w, q, r: budget.bias.clone() })
}

/// Right-pseudo-inverse precoder scaled to feasibility, LMMSE detector.
///
/// A zero signal budget yields `W = 0`.
pub fn zf_precoding_baseline(h: &DMatrix<f64>, stats: &SignalStats, budget: &PowerBudget) -> Result<Design> {
    let w = match zf_design_high_snr(h, stats, budget) {
        Ok((w, _)) => w,
        Err(Error::ZeroSignalBudget) => DMatrix::zeros(h.ncols(), stats.n_s),
        Err(e) => return Err(e),
    };
    with_detector(h, w, stats, budget)
}

/// Regularized-inverse precoder `Hᵀ(HHᵀ + αI)⁻¹` with
/// `α = σω² N_r / (σx² (P_total − rᵀr))`, first `N_s` columns, scaled to
/// feasibility; LMMSE detector.
pub fn mmse_precoding_baseline(h: &DMatrix<f64>, stats: &SignalStats, budget: &PowerBudget) -> Result<Design> {
    let (nr, nt) = h.shape();
    stats.check_streams(nt, nr)?;
    if budget.n_t() != nt || budget.headroom.len() != nt {
        return Err(Error::Dimension("budget length differs from N_t".into()));
    }
    let signal = budget.signal_budget()?;
    if signal <= 0.0 {
        return with_detector(h, DMatrix::zeros(nt, stats.n_s), stats, budget);
    }
    let alpha = stats.sigma_w2 * nr as f64 / (stats.sigma_x2 * signal);
    let mut gram = h * h.transpose();
    for i in 0..nr {
        gram[(i, i)] += alpha;
    }
    let k = h.transpose() * pinv(&gram, 1e-14);
    let w0 = k.columns(0, stats.n_s).into_owned();
    let zeta = feasible_scale(&w0, stats, budget)?;
    let w = if zeta.is_finite() { w0 * zeta } else { DMatrix::zeros(nt, stats.n_s) };
    with_detector(h, w, stats, budget)
}

/// Transceiver alternation on the line-of-sight channel alone.
pub fn no_irs_design(
    chans: &ChannelSet,
    stats: &SignalStats,
    budget: &PowerBudget,
    opts: &SolverOptions,
) -> Result<SolverReport> {
    let bare = chans.without_irs();
    fixed_assignment_design(&bare, stats, budget, &Assignment::empty(0, chans.n_t(), chans.n_r()), opts)
}

/// Transceiver alternation with the distance-greedy association.
pub fn greedy_scheme(
    scene: &Scene,
    chans: &ChannelSet,
    stats: &SignalStats,
    budget: &PowerBudget,
    opts: &SolverOptions,
) -> Result<SolverReport> {
    fixed_assignment_design(chans, stats, budget, &distance_greedy(scene), opts)
}

/// Transceiver alternation with a uniformly random association.
pub fn random_scheme(
    chans: &ChannelSet,
    stats: &SignalStats,
    budget: &PowerBudget,
    seed: u64,
    opts: &SolverOptions,
) -> Result<SolverReport> {
    let a = random_assignment_dims(chans.n_irs(), chans.n_t(), chans.n_r(), seed);
    fixed_assignment_design(chans, stats, budget, &a, opts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::singular_values;
    use crate::objective::{feasibility, PamNormalizer};
    use crate::solver::alternating_optimize_from;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn gauss(rng: &mut ChaCha8Rng, r: usize, c: usize) -> DMatrix<f64> {
        DMatrix::from_fn(r, c, |_, _| rng.sample(StandardNormal))
    }

    /// Largest principal angle between the column spaces of `a` and `b`.
    fn subspace_angle(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
        let qa = a.clone().qr().q();
        let qb = b.clone().qr().q();
        let s = singular_values(&(qa.transpose() * qb));
        s.last().copied().unwrap_or(0.0).clamp(-1.0, 1.0).acos()
    }

    #[test]
    fn identity_channel_is_diagonal() {
        let s = SignalStats::new(1.0, 0.01, 3, 2, PamNormalizer::Exact).unwrap();
        let b = PowerBudget::uniform(30.0, 3, 1.0);
        let d = zf_precoding_baseline(&DMatrix::identity(3, 3), &s, &b).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                if i != j {
                    assert!(d.w[(i, j)].abs() < 1e-14 && d.q[(i, j)].abs() < 1e-14);
                }
            }
        }
    }

    #[test]
    fn baselines_are_feasible() {
        let mut rng = ChaCha8Rng::seed_from_u64(61);
        for _ in 0..30 {
            let h = gauss(&mut rng, 4, 6).abs();
            let s = SignalStats::new(1.0, 1e-3, 3, 4, PamNormalizer::Exact).unwrap();
            let b = PowerBudget::uniform(rng.random_range(6.5..30.0), 6, 1.0);
            for d in [zf_precoding_baseline(&h, &s, &b).unwrap(), mmse_precoding_baseline(&h, &s, &b).unwrap()] {
                assert!(feasibility(&d.w, &s, &b).max_violation() <= 1e-8);
            }
        }
    }

    #[test]
    fn mmse_limits() {
        let mut rng = ChaCha8Rng::seed_from_u64(62);
        let h = gauss(&mut rng, 3, 5);
        let b = PowerBudget::uniform(50.0, 5, 1.0);
        let quiet = SignalStats::new(1.0, 1e-18, 2, 2, PamNormalizer::Exact).unwrap();
        let zf = zf_design_high_snr(&h, &quiet, &b).unwrap().0;
        let mm = mmse_precoding_baseline(&h, &quiet, &b).unwrap().w;
        assert!(subspace_angle(&zf, &mm) <= 1e-6);

        // Huge noise: Hᵀ(HHᵀ + αI)⁻¹ → Hᵀ/α, whose first N_s columns are
        // the first N_s rows of H, i.e. a matched filter.
        let loud = SignalStats::new(1.0, 1e12, 2, 2, PamNormalizer::Exact).unwrap();
        let mm = mmse_precoding_baseline(&h, &loud, &b).unwrap().w;
        let matched = h.rows(0, 2).transpose().into_owned();
        assert!(subspace_angle(&matched, &mm) <= 1e-6);
    }

    #[test]
    fn no_irs_matches_zero_unit_optimization() {
        let mut rng = ChaCha8Rng::seed_from_u64(63);
        let h1 = gauss(&mut rng, 2, 3).abs();
        let chans = ChannelSet::new(h1, gauss(&mut rng, 4, 6).abs()).unwrap();
        let s = SignalStats::new(1.0, 0.01, 2, 2, PamNormalizer::Exact).unwrap();
        let b = PowerBudget::uniform(6.0, 3, 1.0);
        let opts = SolverOptions::default();
        let a = no_irs_design(&chans, &s, &b, &opts).unwrap();
        let bare = chans.without_irs();
        let c = alternating_optimize_from(&bare, &s, &b, &Assignment::empty(0, 3, 2), &opts).unwrap();
        assert_eq!(a.final_design, c.final_design);
        for pair in a.mse_trace.windows(2) {
            assert!(pair[1] <= pair[0] + 1e-9);
        }
    }
}
