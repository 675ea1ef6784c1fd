//! Single-link optical gains and MIMO channel assembly.
//!
//! Column `p = n_r + n_t * N_r` (0-based) of the NLoS bank holds the gains of
//! every IRS unit for the LED `n_t` → PD `n_r` pair, which is also the
//! column-major position of entry `(n_r, n_t)` in the `N_r × N_t` channel.

use alloc::format;
use core::f64::consts::PI;

use nalgebra::DMatrix;

use crate::math;
use crate::scene::{los_geometry, nlos_geometry, OpticalParams, Point3, Scene};
use crate::{Error, Result};

/// Optical concentrator gain `f(Φ)`.
pub fn concentrator_gain(phi: f64, q: f64, phi0: f64) -> f64 {
    if (0.0..=phi0).contains(&phi) {
        let s = math::sin(phi0);
        q * q / (s * s)
    } else {
        0.0
    }
}

fn lambertian(cos_tx: f64, m: f64) -> f64 {
    if cos_tx <= 0.0 {
        0.0
    } else {
        math::powf(cos_tx, m)
    }
}

/// Lambertian line-of-sight gain between an LED and a PD.
pub fn los_gain(tx: &Point3, rx: &Point3, optics: &OpticalParams) -> Result<f64> {
    let g = los_geometry(tx, rx)?;
    let f = concentrator_gain(g.rx_angle, optics.refractive_index, optics.fov_semi_angle);
    if f == 0.0 {
        return Ok(0.0);
    }
    let m = optics.lambertian_index;
    let scale = optics.pd_area * (m + 1.0) * optics.filter_gain / (2.0 * PI * g.distance * g.distance);
    let gain = scale * lambertian(math::cos(g.tx_angle), m) * math::cos(g.rx_angle).max(0.0) * f;
    Ok(gain)
}

/// Specular gain of the LED → IRS unit → PD path (image-source model).
pub fn nlos_gain(tx: &Point3, unit: &Point3, rx: &Point3, optics: &OpticalParams) -> Result<f64> {
    let (first, second) = nlos_geometry(tx, unit, rx)?;
    let f = concentrator_gain(second.rx_angle, optics.refractive_index, optics.fov_semi_angle);
    if f == 0.0 || optics.irs_reflectivity == 0.0 {
        return Ok(0.0);
    }
    let m = optics.lambertian_index;
    let d = first.distance + second.distance;
    let gain = optics.irs_reflectivity * optics.pd_area * (m + 1.0) * lambertian(math::cos(first.tx_angle), m)
        / (2.0 * PI * d * d)
        * optics.filter_gain
        * math::cos(second.rx_angle).max(0.0)
        * f;
    Ok(gain)
}

/// LoS matrix and NLoS gain bank of a scene.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelSet {
    h1: DMatrix<f64>,
    h_nlos: DMatrix<f64>,
}

impl ChannelSet {
    /// Wraps precomputed matrices (`h1`: `N_r × N_t`, `h_nlos`: `N × N_t N_r`).
    pub fn new(h1: DMatrix<f64>, h_nlos: DMatrix<f64>) -> Result<Self> {
        if h_nlos.ncols() != h1.nrows() * h1.ncols() {
            return Err(Error::Dimension(format!(
                "NLoS bank has {} columns, expected N_t * N_r = {}",
                h_nlos.ncols(),
                h1.nrows() * h1.ncols()
            )));
        }
        if h1.iter().chain(h_nlos.iter()).any(|g| !(*g >= 0.0 && g.is_finite())) {
            return Err(Error::InvalidParameter("channel gains must be finite and nonnegative".into()));
        }
        Ok(Self { h1, h_nlos })
    }

    pub fn h1(&self) -> &DMatrix<f64> {
        &self.h1
    }

    pub fn h_nlos(&self) -> &DMatrix<f64> {
        &self.h_nlos
    }

    pub fn n_r(&self) -> usize {
        self.h1.nrows()
    }

    pub fn n_t(&self) -> usize {
        self.h1.ncols()
    }

    pub fn n_irs(&self) -> usize {
        self.h_nlos.nrows()
    }

    /// Number of (LED, PD) pairs, i.e. columns of `V`.
    pub fn n_pairs(&self) -> usize {
        self.h_nlos.ncols()
    }

    /// Same LoS part with the IRS bank dropped (the no-IRS channel set).
    pub fn without_irs(&self) -> ChannelSet {
        ChannelSet { h1: self.h1.clone(), h_nlos: DMatrix::zeros(0, self.n_pairs()) }
    }

    /// `H = H1 + H2(V)` with `vec(H2)[p] = <h_nlos[:, p], v[:, p]>`.
    pub fn assemble_h(&self, v: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if v.shape() != self.h_nlos.shape() {
            return Err(Error::Dimension(format!(
                "V is {}x{}, expected {}x{}",
                v.nrows(),
                v.ncols(),
                self.h_nlos.nrows(),
                self.h_nlos.ncols()
            )));
        }
        Ok(self.assemble_unchecked(v.as_slice()))
    }

    /// Assembly from `vec(V)`; lengths are the caller's responsibility.
    pub(crate) fn assemble_unchecked(&self, vec_v: &[f64]) -> DMatrix<f64> {
        let n = self.n_irs();
        let mut h = self.h1.clone();
        if n == 0 {
            return h;
        }
        let bank = self.h_nlos.as_slice();
        for (p, entry) in h.as_mut_slice().iter_mut().enumerate() {
            let col = &bank[p * n..(p + 1) * n];
            let vc = &vec_v[p * n..(p + 1) * n];
            *entry += col.iter().zip(vc).map(|(a, b)| a * b).sum::<f64>();
        }
        h
    }
}

/// Computes every LoS gain and every IRS-reflected gain of the scene.
pub fn build_channels(scene: &Scene) -> Result<ChannelSet> {
    let (nt, nr, n) = (scene.n_t(), scene.n_r(), scene.n_irs());
    let optics = scene.optics();
    let mut h1 = DMatrix::zeros(nr, nt);
    let mut h_nlos = DMatrix::zeros(n, nt * nr);
    for (t, led) in scene.leds().iter().enumerate() {
        for (r, pd) in scene.pds().iter().enumerate() {
            h1[(r, t)] = los_gain(led, pd, optics)?;
            let p = r + t * nr;
            for (k, unit) in scene.irs_units().iter().enumerate() {
                h_nlos[(k, p)] = nlos_gain(led, unit, pd, optics)?;
            }
        }
    }
    ChannelSet::new(h1, h_nlos)
}
