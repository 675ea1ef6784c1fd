//! Experiment configuration files (TOML, or JSON by extension).
//!
//! Lengths are meters and angles degrees in the file; conversion to the
//! core types happens in [`ExperimentConfig::scene_config`] and friends.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use irs_vlc_core::solver::SolverOptions;
use irs_vlc_core::{OpticalParams, PamNormalizer, Point3, PowerBudget, SceneConfig, SignalStats};

use crate::error::{CliError, Result};

/// One experiment: scene, signal model, budget, solver settings and sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_schemes")]
    pub schemes: Vec<Scheme>,
    /// Number of random associations averaged by the `random` scheme.
    #[serde(default = "default_random_draws")]
    pub random_draws: u32,
    #[serde(default)]
    pub scene: SceneSection,
    #[serde(default)]
    pub signal: SignalSection,
    #[serde(default)]
    pub budget: BudgetSection,
    #[serde(default)]
    pub solver: SolverSection,
    #[serde(default)]
    pub sweep: Option<SweepSection>,
    #[serde(default)]
    pub ber: BerSection,
    /// Also write every matrix of every design as CSV.
    #[serde(default)]
    pub dump_matrices: bool,
}

/// Schemes that can be run and compared.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    /// Joint association, precoder and detector optimization.
    Proposed,
    /// Distance-greedy association, optimized transceiver.
    Greedy,
    /// Random association, optimized transceiver.
    Random,
    /// Line-of-sight channel only, optimized transceiver.
    NoIrs,
    /// ZF precoder on the distance-greedy channel.
    Zf,
    /// Regularized-inverse precoder on the distance-greedy channel.
    Mmse,
}

impl Scheme {
    pub const ALL: [Scheme; 6] =
        [Scheme::Proposed, Scheme::Greedy, Scheme::Random, Scheme::NoIrs, Scheme::Zf, Scheme::Mmse];

    pub fn name(self) -> &'static str {
        match self {
            Scheme::Proposed => "proposed",
            Scheme::Greedy => "greedy",
            Scheme::Random => "random",
            Scheme::NoIrs => "no_irs",
            Scheme::Zf => "zf",
            Scheme::Mmse => "mmse",
        }
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Scheme {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self> {
        Scheme::ALL.into_iter().find(|k| k.name() == s).ok_or_else(|| CliError::Config(format!("unknown scheme `{s}`")))
    }
}

fn default_schemes() -> Vec<Scheme> {
    Scheme::ALL.to_vec()
}

fn default_random_draws() -> u32 {
    50
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneSection {
    /// Width (x), depth (y), height (z).
    pub room: [f64; 3],
    /// Columns along x, rows along y.
    pub led_grid: [usize; 2],
    pub pd_center: [f64; 3],
    pub pd_spacing: f64,
    pub pd_grid: [usize; 2],
    pub irs_corner_a: [f64; 3],
    pub irs_corner_b: [f64; 3],
    /// Columns along the wall, rows along z.
    pub irs_grid: [usize; 2],
    /// Optional `[N_t, N_r, N]` checked against the grids.
    #[serde(default)]
    pub counts: Option<[usize; 3]>,
    #[serde(default)]
    pub optics: OpticsSection,
}

impl Default for SceneSection {
    fn default() -> Self {
        let t = SceneConfig::reference();
        let p = |p: Point3| [p.x, p.y, p.z];
        Self {
            room: t.room,
            led_grid: [t.led_grid.0, t.led_grid.1],
            pd_center: p(t.pd_center),
            pd_spacing: t.pd_spacing,
            pd_grid: [t.pd_grid.0, t.pd_grid.1],
            irs_corner_a: p(t.irs_corner_a),
            irs_corner_b: p(t.irs_corner_b),
            irs_grid: [t.irs_grid.0, t.irs_grid.1],
            counts: t.declared_counts.map(|(a, b, c)| [a, b, c]),
            optics: OpticsSection::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OpticsSection {
    /// Square meters.
    pub pd_area: f64,
    pub lambertian_index: f64,
    pub filter_gain: f64,
    pub refractive_index: f64,
    /// Degrees.
    pub fov_deg: f64,
    pub irs_reflectivity: f64,
}

impl Default for OpticsSection {
    fn default() -> Self {
        let o = OpticalParams::reference();
        Self {
            pd_area: o.pd_area,
            lambertian_index: o.lambertian_index,
            filter_gain: o.filter_gain,
            refractive_index: o.refractive_index,
            fov_deg: o.fov_semi_angle.to_degrees(),
            irs_reflectivity: o.irs_reflectivity,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SignalSection {
    pub sigma_x2: f64,
    /// Noise variance; ignored when `snr_db` is given.
    #[serde(default)]
    pub sigma_w2: Option<f64>,
    /// Point on the `10^-13 σx²/σω²` SNR axis, in dB.
    #[serde(default)]
    pub snr_db: Option<f64>,
    pub streams: usize,
    pub pam_order: u32,
    #[serde(default)]
    pub normalizer: NormalizerName,
}

impl Default for SignalSection {
    fn default() -> Self {
        let s = SignalStats::reference();
        Self {
            sigma_x2: s.sigma_x2,
            sigma_w2: Some(s.sigma_w2),
            snr_db: None,
            streams: s.n_s,
            pam_order: s.pam_order,
            normalizer: NormalizerName::Exact,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormalizerName {
    #[default]
    Exact,
    Paper,
}

impl From<NormalizerName> for PamNormalizer {
    fn from(n: NormalizerName) -> Self {
        match n {
            NormalizerName::Exact => PamNormalizer::Exact,
            NormalizerName::Paper => PamNormalizer::Paper,
        }
    }
}

/// DC bias: one value for every LED, or one per LED.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Bias {
    Uniform(f64),
    PerLed(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BudgetSection {
    pub p_total: f64,
    pub dc_bias: Bias,
}

impl Default for BudgetSection {
    fn default() -> Self {
        Self { p_total: 160.0, dc_bias: Bias::Uniform(1.0) }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverSection {
    pub tol: f64,
    pub max_outer: usize,
    pub max_inner: usize,
    pub armijo_shrink: f64,
    pub armijo_c: f64,
    pub pinv_rel_tol: f64,
    pub refine_primal: bool,
    pub polish_after_rounding: bool,
    pub joint_steps: usize,
}

impl Default for SolverSection {
    fn default() -> Self {
        let o = SolverOptions::default();
        Self {
            tol: o.tol,
            max_outer: o.max_outer,
            max_inner: o.max_inner,
            armijo_shrink: o.armijo_shrink,
            armijo_c: o.armijo_c,
            pinv_rel_tol: o.pinv_rel_tol,
            refine_primal: o.refine_primal,
            polish_after_rounding: o.polish_after_rounding,
            joint_steps: o.joint_steps,
        }
    }
}

/// Swept parameter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    /// SNR axis in dB; sets `σω²`.
    Snr,
    /// Number of IRS units; the number of lattice rows stays fixed.
    IrsCount,
    /// Uniform DC bias `r0`.
    DcBias,
    /// PD-array center over an `(x, y)` grid.
    PositionGrid,
}

impl SweepAxis {
    pub fn name(self) -> &'static str {
        match self {
            SweepAxis::Snr => "snr",
            SweepAxis::IrsCount => "irs_count",
            SweepAxis::DcBias => "dc_bias",
            SweepAxis::PositionGrid => "position_grid",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    pub axis: SweepAxis,
    /// Axis values; unused by `position_grid`.
    #[serde(default)]
    pub values: Vec<f64>,
    /// PD-center x coordinates of a `position_grid` sweep.
    #[serde(default)]
    pub x: Vec<f64>,
    /// PD-center y coordinates of a `position_grid` sweep.
    #[serde(default)]
    pub y: Vec<f64>,
    /// Also estimate the BER at every sweep point.
    #[serde(default)]
    pub with_ber: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BerSection {
    pub trials: u64,
    /// SNR points of `ber`; empty means the SNR sweep values, or the
    /// configured signal point alone.
    pub snr_db: Vec<f64>,
}

impl Default for BerSection {
    fn default() -> Self {
        Self { trials: 100_000, snr_db: Vec::new() }
    }
}

fn point(p: [f64; 3]) -> Point3 {
    Point3::new(p[0], p[1], p[2])
}

fn finite_sorted(name: &str, v: &[f64]) -> Result<()> {
    if v.iter().any(|x| !x.is_finite()) {
        return Err(CliError::Config(format!("{name}: values must be finite")));
    }
    if v.windows(2).any(|w| w[0] > w[1]) {
        return Err(CliError::Config(format!("{name}: values must be sorted ascending")));
    }
    Ok(())
}

impl ExperimentConfig {
    /// Reads TOML, or JSON when the extension is `.json`.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        let is_json = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"));
        let cfg = if is_json { Self::from_json(&text)? } else { Self::from_toml(&text)? };
        Ok(cfg)
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// The reference indoor setup with default solver settings.
    pub fn reference() -> Self {
        Self {
            seed: 0,
            schemes: default_schemes(),
            random_draws: default_random_draws(),
            scene: SceneSection::default(),
            signal: SignalSection::default(),
            budget: BudgetSection::default(),
            solver: SolverSection::default(),
            sweep: None,
            ber: BerSection::default(),
            dump_matrices: false,
        }
    }

    /// Checks everything that can be checked without building the scene.
    pub fn validate(&self) -> Result<()> {
        if self.schemes.is_empty() {
            return Err(CliError::Config("schemes must not be empty".into()));
        }
        if self.random_draws == 0 && self.schemes.contains(&Scheme::Random) {
            return Err(CliError::Config("random_draws must be at least 1".into()));
        }
        self.stats()?;
        self.budget()?;
        if let Some(sw) = &self.sweep {
            match sw.axis {
                SweepAxis::PositionGrid => {
                    if sw.x.is_empty() || sw.y.is_empty() {
                        return Err(CliError::Config("position_grid sweep needs non-empty x and y".into()));
                    }
                    finite_sorted("sweep.x", &sw.x)?;
                    finite_sorted("sweep.y", &sw.y)?;
                }
                _ => {
                    if sw.values.is_empty() {
                        return Err(CliError::Config("sweep values must not be empty".into()));
                    }
                    finite_sorted("sweep.values", &sw.values)?;
                }
            }
            if sw.axis == SweepAxis::IrsCount {
                let rows = self.scene.irs_grid[1];
                for &v in &sw.values {
                    if v < 0.0 || v.fract() != 0.0 || (rows > 0 && !(v as usize).is_multiple_of(rows)) {
                        return Err(CliError::Config(format!(
                            "irs_count value {v} is not a non-negative multiple of the {rows} lattice rows"
                        )));
                    }
                }
            }
        }
        finite_sorted("ber.snr_db", &self.ber.snr_db)?;
        Ok(())
    }

    pub fn scene_config(&self) -> SceneConfig {
        let s = &self.scene;
        let o = &s.optics;
        SceneConfig {
            room: s.room,
            led_grid: (s.led_grid[0], s.led_grid[1]),
            pd_center: point(s.pd_center),
            pd_spacing: s.pd_spacing,
            pd_grid: (s.pd_grid[0], s.pd_grid[1]),
            irs_corner_a: point(s.irs_corner_a),
            irs_corner_b: point(s.irs_corner_b),
            irs_grid: (s.irs_grid[0], s.irs_grid[1]),
            optics: OpticalParams {
                pd_area: o.pd_area,
                lambertian_index: o.lambertian_index,
                filter_gain: o.filter_gain,
                refractive_index: o.refractive_index,
                fov_semi_angle: o.fov_deg.to_radians(),
                irs_reflectivity: o.irs_reflectivity,
            },
            declared_counts: s.counts.map(|c| (c[0], c[1], c[2])),
        }
    }

    /// Noise variance at the configured signal point.
    pub fn sigma_w2(&self) -> Result<f64> {
        match (self.signal.snr_db, self.signal.sigma_w2) {
            (Some(db), _) => Ok(SignalStats::noise_for_snr_db(self.signal.sigma_x2, db)),
            (None, Some(s)) => Ok(s),
            (None, None) => Err(CliError::Config("signal needs sigma_w2 or snr_db".into())),
        }
    }

    pub fn stats(&self) -> Result<SignalStats> {
        let s = &self.signal;
        Ok(SignalStats::new(s.sigma_x2, self.sigma_w2()?, s.streams, s.pam_order, s.normalizer.into())?)
    }

    pub fn n_t(&self) -> usize {
        self.scene.led_grid[0] * self.scene.led_grid[1]
    }

    pub fn budget(&self) -> Result<PowerBudget> {
        let nt = self.n_t();
        let r = match &self.budget.dc_bias {
            Bias::Uniform(r0) => DVector::from_element(nt, *r0),
            Bias::PerLed(v) => {
                if v.len() != nt {
                    return Err(CliError::Config(format!("dc_bias has {} entries for {nt} LEDs", v.len())));
                }
                DVector::from_column_slice(v)
            }
        };
        if r.iter().any(|x| !(x.is_finite() && *x >= 0.0)) {
            return Err(CliError::Config("dc_bias entries must be finite and >= 0".into()));
        }
        let b = PowerBudget::from_bias(self.budget.p_total, &r);
        b.signal_budget()?;
        Ok(b)
    }

    pub fn solver_options(&self) -> SolverOptions {
        let s = &self.solver;
        SolverOptions {
            tol: s.tol,
            max_outer: s.max_outer,
            max_inner: s.max_inner,
            armijo_shrink: s.armijo_shrink,
            armijo_c: s.armijo_c,
            pinv_rel_tol: s.pinv_rel_tol,
            refine_primal: s.refine_primal,
            polish_after_rounding: s.polish_after_rounding,
            joint_steps: s.joint_steps,
        }
    }

    /// Canonical JSON of the resolved configuration.
    pub fn canonical_json(&self) -> String {
        serde_json::to_string(self).expect("configuration always serializes")
    }

    /// SHA-256 of [`Self::canonical_json`], hex encoded.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.canonical_json().as_bytes()))
    }

    /// Schemes in a fixed order, without duplicates.
    pub fn ordered_schemes(&self) -> Vec<Scheme> {
        let mut s = self.schemes.clone();
        s.sort();
        s.dedup();
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_round_trips_through_toml_and_json() {
        let cfg = ExperimentConfig::reference();
        let text = toml::to_string(&cfg).unwrap();
        assert_eq!(ExperimentConfig::from_toml(&text).unwrap(), cfg);
        assert_eq!(ExperimentConfig::from_json(&cfg.canonical_json()).unwrap(), cfg);
    }

    #[test]
    fn defaults_reproduce_the_reference_scene() {
        let cfg = ExperimentConfig::from_toml("").unwrap();
        assert_eq!(cfg.scene_config(), SceneConfig::reference());
        assert_eq!(cfg.stats().unwrap(), SignalStats::reference());
        assert_eq!(cfg.budget().unwrap(), PowerBudget::uniform(160.0, 16, 1.0));
        assert_eq!(cfg.solver_options(), SolverOptions::default());
    }

    #[test]
    fn snr_overrides_noise() {
        let cfg = ExperimentConfig::from_toml("[signal]\nsigma_x2 = 1.0\nsnr_db = 10.0\nstreams = 4\npam_order = 4\n")
            .unwrap();
        assert!((cfg.sigma_w2().unwrap() - 1e-14).abs() < 1e-28);
    }

    #[test]
    fn hash_tracks_content() {
        let a = ExperimentConfig::reference();
        let mut b = a.clone();
        assert_eq!(a.hash(), b.hash());
        b.seed = 7;
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 64);
    }

    #[test]
    fn rejects_bad_sweeps_and_schemes() {
        let bad = [
            "schemes = []",
            "[sweep]\naxis = \"snr\"\nvalues = []",
            "[sweep]\naxis = \"snr\"\nvalues = [10.0, 5.0]",
            "[sweep]\naxis = \"irs_count\"\nvalues = [12.0]",
            "[sweep]\naxis = \"position_grid\"\nx = [1.0]",
            "[budget]\np_total = 10.0\ndc_bias = 1.0",
            "[budget]\np_total = 100.0\ndc_bias = [1.0, 1.0]",
            "unknown = 3",
        ];
        for text in bad {
            assert!(ExperimentConfig::from_toml(text).is_err(), "{text}");
        }
        assert!("proposed".parse::<Scheme>().is_ok());
        assert!("best".parse::<Scheme>().is_err());
    }
}
