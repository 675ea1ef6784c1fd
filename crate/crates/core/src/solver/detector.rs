//! Closed-form detectors: the LMMSE solution and its low-SNR limit.

use nalgebra::DMatrix;

use crate::linalg::singular_values;
use crate::objective::SignalStats;
use crate::{Error, Result};

/// MSE-optimal detector for fixed `H` and `W`:
/// `Q = σx² (HW)ᵀ (σx² HW (HW)ᵀ + σω² I)⁻¹`.
///
/// Evaluated through the equivalent `N_s × N_s` system
/// `(GᵀG + σω²/σx² I) Q = Gᵀ` with `G = HW`, which stays well posed when the
/// noise vanishes as long as `G` has full column rank.
pub fn solve_p3_detector(h: &DMatrix<f64>, w: &DMatrix<f64>, stats: &SignalStats) -> Result<DMatrix<f64>> {
    if h.ncols() != w.nrows() {
        return Err(Error::Dimension("H and W are not conformable".into()));
    }
    let g = h * w;
    let ratio = stats.sigma_w2 / stats.sigma_x2;
    if ratio == 0.0 {
        let s = singular_values(&g);
        let smax = s.first().copied().unwrap_or(0.0);
        if s.len() < g.ncols() || s.iter().any(|&v| v <= 1e-12 * smax) || smax == 0.0 {
            return Err(Error::SingularDetector);
        }
    }
    let mut gram = g.transpose() * &g;
    for i in 0..gram.nrows() {
        gram[(i, i)] += ratio;
    }
    let chol = gram.cholesky().ok_or(Error::SingularDetector)?;
    Ok(chol.solve(&g.transpose()))
}

/// Matched-filter detector `Q = (σx²/σω²)(HW)ᵀ`, the limit of
/// [`solve_p3_detector`] as the SNR goes to zero.
pub fn low_snr_detector(h: &DMatrix<f64>, w: &DMatrix<f64>, stats: &SignalStats) -> Result<DMatrix<f64>> {
    if h.ncols() != w.nrows() {
        return Err(Error::Dimension("H and W are not conformable".into()));
    }
    if stats.sigma_w2 <= 0.0 {
        return Err(Error::InvalidParameter("low-SNR detector needs sigma_w2 > 0".into()));
    }
    Ok((h * w).transpose() * (stats.sigma_x2 / stats.sigma_w2))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::objective::{mse_wq, snr_hat, PamNormalizer};
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn gauss(rng: &mut ChaCha8Rng, r: usize, c: usize) -> DMatrix<f64> {
        DMatrix::from_fn(r, c, |_, _| rng.sample(StandardNormal))
    }

    fn stats(n_s: usize, sx2: f64, sw2: f64) -> SignalStats {
        SignalStats::new(sx2, sw2, n_s, 2, PamNormalizer::Exact).unwrap()
    }

    #[test]
    fn scalar_case() {
        let one = DMatrix::from_element(1, 1, 1.0);
        let q = solve_p3_detector(&one, &one, &stats(1, 1.0, 1.0)).unwrap();
        assert_relative_eq!(q[(0, 0)], 0.5, epsilon = 1e-15);
    }

    #[test]
    fn noiseless_limit_is_inverse() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let h = gauss(&mut rng, 3, 3);
        let w = gauss(&mut rng, 3, 3);
        let q = solve_p3_detector(&h, &w, &stats(3, 1.0, 1e-14)).unwrap();
        let inv = (&h * &w).try_inverse().unwrap();
        assert!((q - &inv).norm() <= 1e-6 * inv.norm());
        let q0 = solve_p3_detector(&h, &w, &stats(3, 1.0, 0.0)).unwrap();
        assert!((q0 - &inv).norm() <= 1e-9 * inv.norm());
    }

    #[test]
    fn noiseless_rank_deficient_is_reported() {
        let h = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        let w = DMatrix::identity(2, 2);
        assert_eq!(solve_p3_detector(&h, &w, &stats(2, 1.0, 0.0)), Err(Error::SingularDetector));
    }

    #[test]
    fn gradient_vanishes_at_solution() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..20 {
            let h = gauss(&mut rng, 4, 5);
            let w = gauss(&mut rng, 5, 3);
            let s = stats(3, 1.3, 0.4);
            let q = solve_p3_detector(&h, &w, &s).unwrap();
            let g = &h * &w;
            // ∂MSE/∂Q = 2σx²(QG − I)Gᵀ + 2σω²Q
            let mut qg = &q * &g;
            for i in 0..3 {
                qg[(i, i)] -= 1.0;
            }
            let grad = (qg * g.transpose()) * (2.0 * s.sigma_x2) + &q * (2.0 * s.sigma_w2);
            let scale = g.norm() * s.sigma_x2;
            assert!(grad.norm() <= 1e-8 * scale);
        }
    }

    #[test]
    fn beats_random_perturbations() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let h = gauss(&mut rng, 3, 3);
        let w = gauss(&mut rng, 3, 2);
        let s = stats(2, 1.0, 0.2);
        let q = solve_p3_detector(&h, &w, &s).unwrap();
        let best = mse_wq(&h, &w, &q, &s);
        for _ in 0..200 {
            let dq = gauss(&mut rng, 2, 3) * 1e-2;
            assert!(mse_wq(&h, &w, &(&q + dq), &s) >= best - 1e-12);
        }
    }

    #[test]
    fn low_snr_scalar_and_limit() {
        let one = DMatrix::from_element(1, 1, 1.0);
        let q = low_snr_detector(&one, &one, &stats(1, 1e-6, 1.0)).unwrap();
        assert_relative_eq!(q[(0, 0)], 1e-6, max_relative = 1e-14);

        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let h = gauss(&mut rng, 4, 4);
        let w = gauss(&mut rng, 4, 2);
        let mut s = stats(2, 1.0, 1.0);
        s.sigma_w2 = snr_hat(&h, &w, &s) / 1e-4;
        assert!(snr_hat(&h, &w, &s) <= 1e-4 * (1.0 + 1e-12));
        let exact = solve_p3_detector(&h, &w, &s).unwrap();
        let approx_q = low_snr_detector(&h, &w, &s).unwrap();
        for (a, b) in exact.iter().zip(approx_q.iter()) {
            assert!((a - b).abs() <= 0.01 * b.abs().max(1e-3 * approx_q.amax()));
        }
    }

    #[test]
    fn detector_hessian_is_psd() {
        // Hessian in vec(Q) is 2 (σx² G Gᵀ + σω² I) ⊗ I.
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        for _ in 0..20 {
            let g = gauss(&mut rng, 4, 2);
            let m = &g * g.transpose() + DMatrix::identity(4, 4) * 0.1;
            let hess = crate::linalg::kron(&m, &DMatrix::identity(2, 2)) * 2.0;
            assert!(crate::linalg::lambda_min_sym(&hess) >= -1e-10);
        }
    }
}
