//! PAM link simulation and BER estimation.
//!
//! Trials are split into chunks of [`CHUNK_TRIALS`]; chunk `i` draws from a
//! ChaCha20 stream keyed by `(seed, i)`. Any partition of chunks across
//! workers therefore reproduces the sequential result exactly, as long as
//! the chunk tallies are merged in index order.

use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;

use crate::linalg::singular_values;
use crate::math;
use crate::objective::{Design, PamNormalizer, SignalStats};
use crate::{Error, Result};

/// Trials per RNG stream.
pub const CHUNK_TRIALS: u64 = 10_000;

/// Tolerance of the runtime `Wx + r ≥ 0` check.
pub const NONNEGATIVITY_TOL: f64 = 1e-12;

/// Gray-labelled `M`-PAM constellation.
#[derive(Debug, Clone, PartialEq)]
pub struct PamConfig {
    order: u32,
    normalizer: PamNormalizer,
    bits_per_symbol: u32,
    levels: Vec<f64>,
}

impl PamConfig {
    pub fn new(order: u32, normalizer: PamNormalizer) -> Result<Self> {
        if order < 2 || !order.is_power_of_two() {
            return Err(Error::InvalidParameter("PAM order must be a power of two >= 2".into()));
        }
        let i = normalizer.factor(order);
        let levels = (0..order).map(|k| (2.0 * k as f64 - (order as f64 - 1.0)) * i).collect();
        Ok(Self { order, normalizer, bits_per_symbol: order.trailing_zeros(), levels })
    }

    pub fn from_stats(stats: &SignalStats) -> Result<Self> {
        Self::new(stats.pam_order, stats.normalizer)
    }

    pub fn order(&self) -> u32 {
        self.order
    }

    pub fn normalizer(&self) -> PamNormalizer {
        self.normalizer
    }

    pub fn bits_per_symbol(&self) -> u32 {
        self.bits_per_symbol
    }

    /// Amplitudes in increasing order.
    pub fn levels(&self) -> &[f64] {
        &self.levels
    }

    /// Gray label of level index `k`.
    pub fn label(k: u32) -> u32 {
        k ^ (k >> 1)
    }

    fn level_of_label(label: u32) -> u32 {
        let mut k = label;
        let mut shift = label >> 1;
        while shift != 0 {
            k ^= shift;
            shift >>= 1;
        }
        k
    }

    /// Nearest level index; ties go to the lower level.
    pub fn slice(&self, soft: f64) -> u32 {
        let mut best = 0;
        let mut best_d = (soft - self.levels[0]).abs();
        for (k, &l) in self.levels.iter().enumerate().skip(1) {
            let d = (soft - l).abs();
            if d < best_d {
                best = k;
                best_d = d;
            }
        }
        best as u32
    }
}

/// Maps bits (one per byte, 0 or 1, most significant first within each
/// symbol) to unit-variance amplitudes.
pub fn pam_modulate(bits: &[u8], cfg: &PamConfig) -> Result<Vec<f64>> {
    let b = cfg.bits_per_symbol as usize;
    if !bits.len().is_multiple_of(b) {
        return Err(Error::InvalidParameter("bit count is not a multiple of log2(M)".into()));
    }
    bits.chunks(b)
        .map(|group| {
            let mut label = 0u32;
            for &bit in group {
                if bit > 1 {
                    return Err(Error::InvalidParameter("bits must be 0 or 1".into()));
                }
                label = (label << 1) | bit as u32;
            }
            Ok(cfg.levels[PamConfig::level_of_label(label) as usize])
        })
        .collect()
}

/// Minimum-distance slicer followed by Gray demapping.
pub fn pam_demodulate(soft: &[f64], cfg: &PamConfig) -> Vec<u8> {
    let b = cfg.bits_per_symbol;
    let mut out = Vec::with_capacity(soft.len() * b as usize);
    for &s in soft {
        let label = PamConfig::label(cfg.slice(s));
        for j in (0..b).rev() {
            out.push(((label >> j) & 1) as u8);
        }
    }
    out
}

/// Raw tallies of a batch of trials.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LinkCounts {
    pub trials: u64,
    pub bit_errors: u64,
    pub bits: u64,
    /// Sum over trials of `‖x̃ − x‖²`.
    pub sq_error_sum: f64,
}

impl LinkCounts {
    pub fn merge(&mut self, other: &LinkCounts) {
        self.trials += other.trials;
        self.bit_errors += other.bit_errors;
        self.bits += other.bits;
        self.sq_error_sum += other.sq_error_sum;
    }
}

/// BER with a normal-approximation 95 % interval, plus the empirical MSE.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BerEstimate {
    pub ber: f64,
    pub trials: u64,
    pub bit_errors: u64,
    pub bits: u64,
    pub ci95_halfwidth: f64,
    pub empirical_mse: f64,
}

impl BerEstimate {
    pub fn from_counts(c: &LinkCounts) -> Self {
        let ber = if c.bits > 0 { c.bit_errors as f64 / c.bits as f64 } else { 0.0 };
        let ci = if c.bits > 0 { 1.96 * math::sqrt(ber * (1.0 - ber) / c.bits as f64) } else { 0.0 };
        Self {
            ber,
            trials: c.trials,
            bit_errors: c.bit_errors,
            bits: c.bits,
            ci95_halfwidth: ci,
            empirical_mse: if c.trials > 0 { c.sq_error_sum / c.trials as f64 } else { 0.0 },
        }
    }
}

/// Number of chunks covering `trials`.
pub fn chunk_count(trials: u64) -> u64 {
    trials.div_ceil(CHUNK_TRIALS)
}

fn check_link(design: &Design, h: &DMatrix<f64>, cfg: &PamConfig, stats: &SignalStats) -> Result<()> {
    let (nr, nt) = h.shape();
    let n_s = design.w.ncols();
    if design.w.nrows() != nt || design.q.shape() != (n_s, nr) || design.r.len() != nt {
        return Err(Error::Dimension("design does not match the channel".into()));
    }
    if cfg.order != stats.pam_order {
        return Err(Error::InvalidParameter("PAM config and signal stats disagree on M".into()));
    }
    Ok(())
}

/// Simulates chunk `index` of a run of `trials` trials.
pub fn simulate_chunk(
    design: &Design,
    h: &DMatrix<f64>,
    cfg: &PamConfig,
    stats: &SignalStats,
    trials: u64,
    seed: u64,
    index: u64,
) -> Result<LinkCounts> {
    check_link(design, h, cfg, stats)?;
    let start = index * CHUNK_TRIALS;
    if start >= trials {
        return Ok(LinkCounts::default());
    }
    let count = CHUNK_TRIALS.min(trials - start);
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(index);

    let n_s = design.w.ncols();
    let nr = h.nrows();
    let b = cfg.bits_per_symbol as usize;
    let sigma_x = math::sqrt(stats.sigma_x2);
    let sigma_w = math::sqrt(stats.sigma_w2);
    let hw = h * &design.w;
    let mut idx = vec![0u32; n_s];
    let mut x = DVector::zeros(n_s);
    let mut noise = DVector::zeros(nr);
    let mut counts = LinkCounts { trials: count, bits: count * (n_s * b) as u64, ..Default::default() };
    for _ in 0..count {
        for j in 0..n_s {
            let label: u32 = rng.random_range(0..cfg.order);
            idx[j] = label;
            x[j] = sigma_x * cfg.levels[PamConfig::level_of_label(label) as usize];
        }
        let drive = &design.w * &x + &design.r;
        for (t, &v) in drive.iter().enumerate() {
            if v < -NONNEGATIVITY_TOL {
                return Err(Error::NegativeIntensity { led: t, value: v });
            }
        }
        for i in 0..nr {
            noise[i] = sigma_w * rng.sample::<f64, _>(StandardNormal);
        }
        // x̃ = Q(y − Hr) with y = H(Wx + r) + ω
        let est = &design.q * (&hw * &x + &noise);
        counts.sq_error_sum += (&est - &x).norm_squared();
        for j in 0..n_s {
            let sent = idx[j];
            let got = PamConfig::label(cfg.slice(est[j] / sigma_x));
            counts.bit_errors += (sent ^ got).count_ones() as u64;
        }
    }
    Ok(counts)
}

/// Runs `trials` independent transmissions and counts bit errors.
pub fn simulate_link(
    design: &Design,
    h: &DMatrix<f64>,
    cfg: &PamConfig,
    stats: &SignalStats,
    trials: u64,
    seed: u64,
) -> Result<BerEstimate> {
    if trials == 0 {
        return Err(Error::InvalidParameter("need at least one trial".into()));
    }
    let mut total = LinkCounts::default();
    for i in 0..chunk_count(trials) {
        total.merge(&simulate_chunk(design, h, cfg, stats, trials, seed, i)?);
    }
    Ok(BerEstimate::from_counts(&total))
}

/// `σ_max / σ_min`, or `+∞` when `σ_min < 1e-300`.
pub fn condition_number(h: &DMatrix<f64>) -> f64 {
    let s = singular_values(h);
    match (s.first(), s.last()) {
        (Some(&max), Some(&min)) if min >= 1e-300 => max / min,
        _ => f64::INFINITY,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand_chacha::ChaCha8Rng;

    /// Gaussian tail `Q(x)` via the complementary error function.
    fn q_func(x: f64) -> f64 {
        0.5 * libm::erfc(x / core::f64::consts::SQRT_2)
    }

    fn scalar_design(w: f64, q: f64, r: f64) -> Design {
        Design { w: DMatrix::from_element(1, 1, w), q: DMatrix::from_element(1, 1, q), r: DVector::from_element(1, r) }
    }

    #[test]
    fn binary_and_quaternary_levels() {
        let c2 = PamConfig::new(2, PamNormalizer::Exact).unwrap();
        assert_eq!(pam_modulate(&[0, 1], &c2).unwrap(), vec![-1.0, 1.0]);
        let c4 = PamConfig::new(4, PamNormalizer::Exact).unwrap();
        let s5 = 5f64.sqrt();
        let expected = [-3.0 / s5, -1.0 / s5, 1.0 / s5, 3.0 / s5];
        for (a, b) in c4.levels().iter().zip(expected) {
            assert_relative_eq!(*a, b, max_relative = 1e-15);
        }
        let ms: f64 = c4.levels().iter().map(|l| l * l).sum::<f64>() / 4.0;
        assert!((ms - 1.0).abs() < 1e-12);
    }

    #[test]
    fn gray_neighbours_differ_in_one_bit() {
        for m in [2u32, 4, 8, 16] {
            for k in 1..m {
                assert_eq!((PamConfig::label(k) ^ PamConfig::label(k - 1)).count_ones(), 1);
                assert_eq!(PamConfig::level_of_label(PamConfig::label(k)), k);
            }
        }
    }

    #[test]
    fn round_trip_and_bad_lengths() {
        let mut rng = ChaCha8Rng::seed_from_u64(71);
        for m in [2u32, 4, 8, 16] {
            let c = PamConfig::new(m, PamNormalizer::Paper).unwrap();
            let bits: Vec<u8> = (0..c.bits_per_symbol() as usize * 50).map(|_| rng.random_range(0..2u8)).collect();
            let sym = pam_modulate(&bits, &c).unwrap();
            assert_eq!(pam_demodulate(&sym, &c), bits);
        }
        let c4 = PamConfig::new(4, PamNormalizer::Exact).unwrap();
        assert!(pam_modulate(&[0, 1, 1], &c4).is_err());
        assert!(PamConfig::new(3, PamNormalizer::Exact).is_err());
    }

    #[test]
    fn slicer_rules() {
        let c4 = PamConfig::new(4, PamNormalizer::Exact).unwrap();
        let i = c4.levels()[2];
        assert_eq!(c4.slice(0.99 * i), 2);
        assert_eq!(c4.slice(0.0), 1);
        let c2 = PamConfig::new(2, PamNormalizer::Exact).unwrap();
        assert_eq!(c2.slice(0.0), 0);
        let mut rng = ChaCha8Rng::seed_from_u64(72);
        for _ in 0..1000 {
            let s: f64 = rng.random_range(-3.0..3.0);
            let k = c4.slice(s) as usize;
            for l in c4.levels() {
                assert!((s - c4.levels()[k]).abs() <= (s - l).abs());
            }
        }
    }

    #[test]
    fn noiseless_inverse_has_no_errors() {
        let h = DMatrix::from_row_slice(2, 2, &[1.0, 0.3, 0.2, 1.0]);
        let w = h.clone().try_inverse().unwrap() * 0.2;
        let d = Design { q: DMatrix::identity(2, 2) * 5.0, w, r: DVector::from_element(2, 1.0) };
        let s = SignalStats::new(1.0, 0.0, 2, 4, PamNormalizer::Exact).unwrap();
        let c = PamConfig::from_stats(&s).unwrap();
        let est = simulate_link(&d, &h, &c, &s, 5000, 1).unwrap();
        assert_eq!(est.bit_errors, 0);
        assert!(est.empirical_mse < 1e-20);
    }

    #[test]
    fn scalar_awgn_matches_gaussian_tail() {
        let s = SignalStats::new(1.0, 0.25, 1, 2, PamNormalizer::Exact).unwrap();
        let c = PamConfig::from_stats(&s).unwrap();
        let est = simulate_link(&scalar_design(1.0, 1.0, 1.0), &DMatrix::from_element(1, 1, 1.0), &c, &s, 200_000, 3)
            .unwrap();
        let expected = q_func((1.0f64 / 0.25).sqrt());
        let sd = (expected * (1.0 - expected) / est.bits as f64).sqrt();
        assert!((est.ber - expected).abs() <= 3.0 * sd, "{} vs {expected}", est.ber);
    }

    #[test]
    fn pure_noise_is_a_coin_flip() {
        let s = SignalStats::new(1.0, 1e12, 1, 4, PamNormalizer::Exact).unwrap();
        let c = PamConfig::from_stats(&s).unwrap();
        let est =
            simulate_link(&scalar_design(0.1, 1.0, 1.0), &DMatrix::from_element(1, 1, 1.0), &c, &s, 50_000, 4).unwrap();
        assert!((est.ber - 0.5).abs() <= 3.0 * 0.5 / (est.bits as f64).sqrt());
    }

    #[test]
    fn negative_intensity_names_the_led() {
        let s = SignalStats::new(1.0, 0.1, 1, 2, PamNormalizer::Exact).unwrap();
        let c = PamConfig::from_stats(&s).unwrap();
        let d = Design {
            w: DMatrix::from_row_slice(2, 1, &[0.1, 2.0]),
            q: DMatrix::from_element(1, 1, 1.0),
            r: DVector::from_element(2, 1.0),
        };
        let h = DMatrix::from_row_slice(1, 2, &[1.0, 1.0]);
        assert!(matches!(simulate_link(&d, &h, &c, &s, 100, 0), Err(Error::NegativeIntensity { led: 1, .. })));
    }

    #[test]
    fn deterministic_and_partition_independent() {
        let s = SignalStats::new(1.0, 0.3, 1, 4, PamNormalizer::Exact).unwrap();
        let c = PamConfig::from_stats(&s).unwrap();
        let d = scalar_design(0.5, 2.0, 1.0);
        let h = DMatrix::from_element(1, 1, 1.0);
        let trials = 3 * CHUNK_TRIALS + 17;
        let a = simulate_link(&d, &h, &c, &s, trials, 9).unwrap();
        let b = simulate_link(&d, &h, &c, &s, trials, 9).unwrap();
        assert_eq!(a, b);
        let mut rev = LinkCounts::default();
        let parts: Vec<LinkCounts> =
            (0..chunk_count(trials)).rev().map(|i| simulate_chunk(&d, &h, &c, &s, trials, 9, i).unwrap()).collect();
        for p in parts.iter().rev() {
            rev.merge(p);
        }
        assert_eq!(BerEstimate::from_counts(&rev), a);
        assert_eq!(a.trials, trials);
    }

    #[test]
    fn empirical_mse_matches_objective() {
        let h = DMatrix::from_row_slice(2, 2, &[1.0, 0.4, 0.1, 0.8]);
        let d = Design {
            w: DMatrix::from_row_slice(2, 2, &[0.2, -0.1, 0.05, 0.25]),
            q: DMatrix::from_row_slice(2, 2, &[3.0, 0.5, -0.4, 2.0]),
            r: DVector::from_element(2, 1.0),
        };
        let s = SignalStats::new(1.0, 0.02, 2, 4, PamNormalizer::Exact).unwrap();
        let c = PamConfig::from_stats(&s).unwrap();
        let est = simulate_link(&d, &h, &c, &s, 400_000, 5).unwrap();
        let expected = crate::objective::mse(&h, &d, &s).unwrap();
        // per-trial error variance bounded by a crude second-moment estimate
        let sd = 3.0 * expected / (est.trials as f64).sqrt();
        assert!((est.empirical_mse - expected).abs() <= 3.0 * sd, "{} vs {expected}", est.empirical_mse);
    }

    #[test]
    fn condition_numbers() {
        assert_eq!(condition_number(&DMatrix::identity(3, 3)), 1.0);
        assert_relative_eq!(condition_number(&DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 1.0]))), 2.0);
        assert_eq!(condition_number(&DMatrix::zeros(2, 2)), f64::INFINITY);
        let h = DMatrix::from_row_slice(2, 3, &[1.0, 2.0, 0.5, -1.0, 0.3, 2.0]);
        let s = h.clone().svd(false, false).singular_values;
        assert_relative_eq!(condition_number(&h), s.max() / s.min(), max_relative = 1e-12);
    }
}
