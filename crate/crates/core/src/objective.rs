//! Demodulation MSE, SNR metrics, and the two emission-power constraints.
//!
//! With `R_x = σx² I` and `R_ω = σω² I` the MSE of the linear receiver
//! `x̃ = Q(y − Hr)` is `σx² ‖QHW − I‖_F² + σω² ‖Q‖_F²`.

use alloc::format;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};

use crate::linalg::row_l1_norms;
use crate::math;
use crate::{Error, Result};

/// Choice of the PAM amplitude normalizer `I`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PamNormalizer {
    /// `I = sqrt(3 / (M² − 1))`, unit mean-square symbols.
    #[default]
    Exact,
    /// `I = sqrt(3 / (M² + 1))`; symbols then have mean square below one.
    Paper,
}

impl PamNormalizer {
    pub fn factor(self, order: u32) -> f64 {
        let m2 = (order as f64) * (order as f64);
        match self {
            PamNormalizer::Exact => math::sqrt(3.0 / (m2 - 1.0)),
            PamNormalizer::Paper => math::sqrt(3.0 / (m2 + 1.0)),
        }
    }
}

/// Second-order statistics of the transmitted symbols and receiver noise.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SignalStats {
    pub sigma_x2: f64,
    pub sigma_w2: f64,
    pub n_s: usize,
    pub pam_order: u32,
    pub normalizer: PamNormalizer,
}

/// `SNR ≜ 1e-13 · σx² / σω²` axis used by the SNR sweeps.
pub const SNR_AXIS_SCALE: f64 = 1e-13;

impl SignalStats {
    pub fn new(sigma_x2: f64, sigma_w2: f64, n_s: usize, pam_order: u32, normalizer: PamNormalizer) -> Result<Self> {
        if !(sigma_x2 > 0.0 && sigma_x2.is_finite()) {
            return Err(Error::InvalidParameter("sigma_x2 must be positive".into()));
        }
        if !(sigma_w2 >= 0.0 && sigma_w2.is_finite()) {
            return Err(Error::InvalidParameter("sigma_w2 must be >= 0".into()));
        }
        if n_s == 0 {
            return Err(Error::InvalidParameter("need at least one stream".into()));
        }
        if pam_order < 2 || !pam_order.is_power_of_two() {
            return Err(Error::InvalidParameter(format!("PAM order {pam_order} is not a power of two >= 2")));
        }
        Ok(Self { sigma_x2, sigma_w2, n_s, pam_order, normalizer })
    }

    /// Unit-power symbols, σω² = 1e-14, four streams of 4-PAM.
    pub fn reference() -> Self {
        Self { sigma_x2: 1.0, sigma_w2: 1e-14, n_s: 4, pam_order: 4, normalizer: PamNormalizer::Exact }
    }

    pub fn with_noise(mut self, sigma_w2: f64) -> Self {
        self.sigma_w2 = sigma_w2;
        self
    }

    /// Noise variance for a point on the SNR sweep axis (in dB).
    pub fn noise_for_snr_db(sigma_x2: f64, snr_db: f64) -> f64 {
        SNR_AXIS_SCALE * sigma_x2 / libm::pow(10.0, snr_db / 10.0)
    }

    /// Normalizer `I` for the configured order.
    pub fn pam_factor(&self) -> f64 {
        self.normalizer.factor(self.pam_order)
    }

    /// Largest symbol excursion `σx · I · (M − 1)`.
    pub fn peak_amplitude(&self) -> f64 {
        math::sqrt(self.sigma_x2) * self.pam_factor() * (self.pam_order as f64 - 1.0)
    }

    /// Checks `N_s ≤ min(N_t, N_r)`.
    pub fn check_streams(&self, n_t: usize, n_r: usize) -> Result<()> {
        if self.n_s > n_t.min(n_r) {
            return Err(Error::InvalidParameter(format!(
                "N_s = {} exceeds min(N_t, N_r) = {}",
                self.n_s,
                n_t.min(n_r)
            )));
        }
        Ok(())
    }
}

/// Precoder, detector and DC bias.
#[derive(Debug, Clone, PartialEq)]
pub struct Design {
    /// `N_t × N_s`.
    pub w: DMatrix<f64>,
    /// `N_s × N_r`.
    pub q: DMatrix<f64>,
    /// Per-LED DC bias, length `N_t`.
    pub r: DVector<f64>,
}

/// Total emission power, the DC bias it has to carry, and per-LED amplitude
/// headroom.
#[derive(Debug, Clone, PartialEq)]
pub struct PowerBudget {
    pub p_total: f64,
    /// DC bias `r`, length `N_t`.
    pub bias: DVector<f64>,
    /// Per-LED headroom `d`; the amplitude constraint reads
    /// `σx I (M−1) ‖w_t‖₁ ≤ d_t`.
    pub headroom: DVector<f64>,
}

impl PowerBudget {
    /// Budget whose headroom equals the DC bias, which keeps `Wx + r ≥ 0`
    /// for every PAM vector.
    pub fn from_bias(p_total: f64, r: &DVector<f64>) -> Self {
        Self { p_total, bias: r.clone(), headroom: r.clone() }
    }

    /// Uniform bias `r0` on every LED.
    pub fn uniform(p_total: f64, n_t: usize, r0: f64) -> Self {
        Self::from_bias(p_total, &DVector::from_element(n_t, r0))
    }

    pub fn n_t(&self) -> usize {
        self.bias.len()
    }

    /// Power left for the signal, `P_total − rᵀr`, clamped at zero when the
    /// bias uses the whole budget up to rounding.
    pub fn signal_budget(&self) -> Result<f64> {
        let bias_power = self.bias.norm_squared();
        let left = self.p_total - bias_power;
        if left < -1e-12 * self.p_total.abs().max(1.0) {
            return Err(Error::InfeasibleBudget { bias_power, p_total: self.p_total });
        }
        Ok(left.max(0.0))
    }
}

fn check_dims(h: &DMatrix<f64>, w: &DMatrix<f64>, q: &DMatrix<f64>) -> Result<()> {
    let (nr, nt) = h.shape();
    if w.nrows() != nt || q.ncols() != nr || q.nrows() != w.ncols() {
        return Err(Error::Dimension(format!(
            "H {}x{}, W {}x{}, Q {}x{} are not conformable",
            nr,
            nt,
            w.nrows(),
            w.ncols(),
            q.nrows(),
            q.ncols()
        )));
    }
    Ok(())
}

/// MSE for explicit `W` and `Q` (dimensions unchecked).
pub fn mse_wq(h: &DMatrix<f64>, w: &DMatrix<f64>, q: &DMatrix<f64>, stats: &SignalStats) -> f64 {
    let mut t = q * h * w;
    for i in 0..t.nrows().min(t.ncols()) {
        t[(i, i)] -= 1.0;
    }
    stats.sigma_x2 * t.norm_squared() + stats.sigma_w2 * q.norm_squared()
}

/// `E‖x̃ − x‖²` of a design over channel `h`.
pub fn mse(h: &DMatrix<f64>, design: &Design, stats: &SignalStats) -> Result<f64> {
    check_dims(h, &design.w, &design.q)?;
    Ok(mse_wq(h, &design.w, &design.q, stats))
}

/// MSE divided by `N_s σx²`.
pub fn normalized_mse(h: &DMatrix<f64>, design: &Design, stats: &SignalStats) -> Result<f64> {
    Ok(mse(h, design, stats)? / (design.w.ncols() as f64 * stats.sigma_x2))
}

/// Received-signal SNR `σx² ‖HW‖_F² / (σω² N_r)`.
pub fn snr_hat(h: &DMatrix<f64>, w: &DMatrix<f64>, stats: &SignalStats) -> f64 {
    stats.sigma_x2 * (h * w).norm_squared() / (stats.sigma_w2 * h.nrows() as f64)
}

/// `E‖Wx + r‖² = σx² ‖W‖_F² + rᵀr`.
pub fn total_power(w: &DMatrix<f64>, r: &DVector<f64>, stats: &SignalStats) -> f64 {
    stats.sigma_x2 * w.norm_squared() + r.norm_squared()
}

/// Worst-case negative excursion `σx I (M−1) ‖w_t‖₁` of every LED.
pub fn led_headroom_usage(w: &DMatrix<f64>, stats: &SignalStats) -> Vec<f64> {
    let peak = stats.peak_amplitude();
    row_l1_norms(w).into_iter().map(|l1| peak * l1).collect()
}

/// Signed constraint slacks; positive values are violations.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct FeasibilityResiduals {
    /// `σx² ‖W‖² + rᵀr − P_total`.
    pub total_power: f64,
    /// `max_t (σx I (M−1) ‖w_t‖₁ − d_t)`.
    pub headroom: f64,
}

impl FeasibilityResiduals {
    /// Largest violation, zero when both constraints hold.
    pub fn max_violation(&self) -> f64 {
        self.total_power.max(self.headroom).max(0.0)
    }
}

pub fn feasibility(w: &DMatrix<f64>, stats: &SignalStats, budget: &PowerBudget) -> FeasibilityResiduals {
    let usage = led_headroom_usage(w, stats);
    let headroom = usage.iter().zip(budget.headroom.iter()).map(|(u, d)| u - d).fold(f64::NEG_INFINITY, f64::max);
    FeasibilityResiduals {
        total_power: total_power(w, &budget.bias, stats) - budget.p_total,
        headroom: if usage.is_empty() { 0.0 } else { headroom },
    }
}
