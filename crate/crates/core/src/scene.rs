//! Room geometry: LED, photodiode and IRS-unit placement plus link angles.
//!
//! Transceiver normals point straight down (LEDs) or up (PDs), so every
//! angle only depends on the height difference along a link.

use alloc::format;
use alloc::vec::Vec;
use core::f64::consts::FRAC_PI_2;

use crate::linalg::hypot3;
use crate::math;
use crate::{Error, Result};

/// Slack used when checking room bounds.
const BOUNDS_EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Point3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Point3 {
    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    pub fn distance(&self, other: &Point3) -> f64 {
        hypot3(self.x - other.x, self.y - other.y, self.z - other.z)
    }

    fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }
}

/// Optical front-end parameters shared by all links.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OpticalParams {
    /// Photodiode area `A_p` in m².
    pub pd_area: f64,
    /// Lambertian index `m`.
    pub lambertian_index: f64,
    /// Optical filter gain `g_of`.
    pub filter_gain: f64,
    /// Concentrator refractive index `q`.
    pub refractive_index: f64,
    /// Field-of-view semi-angle `Φ0` in radians.
    pub fov_semi_angle: f64,
    /// IRS unit reflectivity `γ`.
    pub irs_reflectivity: f64,
}

impl OpticalParams {
    /// Optics of the reference indoor setup (1 cm² PD, m = 1, 60° FoV).
    pub fn reference() -> Self {
        Self {
            pd_area: 1e-4,
            lambertian_index: 1.0,
            filter_gain: 1.0,
            refractive_index: 1.5,
            fov_semi_angle: 60f64.to_radians(),
            irs_reflectivity: 0.9,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::InvalidParameter(format!("optics: {what}")));
        if !(self.pd_area > 0.0 && self.pd_area.is_finite()) {
            return bad("pd_area must be positive");
        }
        if !(self.lambertian_index >= 0.0 && self.lambertian_index.is_finite()) {
            return bad("lambertian_index must be >= 0");
        }
        if !(self.filter_gain >= 0.0 && self.filter_gain.is_finite()) {
            return bad("filter_gain must be >= 0");
        }
        if !(self.refractive_index > 0.0 && self.refractive_index.is_finite()) {
            return bad("refractive_index must be positive");
        }
        if !(self.fov_semi_angle > 0.0 && self.fov_semi_angle <= FRAC_PI_2 + 1e-15) {
            return bad("fov_semi_angle must lie in (0, pi/2]");
        }
        if !(0.0..=1.0).contains(&self.irs_reflectivity) {
            return bad("irs_reflectivity must lie in [0, 1]");
        }
        Ok(())
    }
}

/// Validated scene.
#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    leds: Vec<Point3>,
    pds: Vec<Point3>,
    irs_units: Vec<Point3>,
    optics: OpticalParams,
    room: [f64; 3],
}

impl Scene {
    /// Builds a scene from explicit positions, checking every invariant.
    pub fn new(
        leds: Vec<Point3>,
        pds: Vec<Point3>,
        irs_units: Vec<Point3>,
        optics: OpticalParams,
        room: [f64; 3],
    ) -> Result<Self> {
        optics.validate()?;
        if room.iter().any(|d| !(*d > 0.0 && d.is_finite())) {
            return Err(Error::InvalidScene(format!("room dimensions must be positive, got {room:?}")));
        }
        if leds.is_empty() {
            return Err(Error::InvalidScene("scene needs at least one LED".into()));
        }
        if pds.is_empty() {
            return Err(Error::InvalidScene("scene needs at least one PD".into()));
        }
        let inside = |p: &Point3| {
            p.is_finite()
                && (-BOUNDS_EPS..=room[0] + BOUNDS_EPS).contains(&p.x)
                && (-BOUNDS_EPS..=room[1] + BOUNDS_EPS).contains(&p.y)
                && (-BOUNDS_EPS..=room[2] + BOUNDS_EPS).contains(&p.z)
        };
        for (kind, points) in [("LED", &leds), ("PD", &pds), ("IRS unit", &irs_units)] {
            if let Some((i, p)) = points.iter().enumerate().find(|(_, p)| !inside(p)) {
                return Err(Error::InvalidScene(format!(
                    "{kind} {} at ({}, {}, {}) lies outside the room",
                    i + 1,
                    p.x,
                    p.y,
                    p.z
                )));
            }
        }
        let led_floor = leds.iter().map(|p| p.z).fold(f64::INFINITY, f64::min);
        let pd_top = pds.iter().map(|p| p.z).fold(f64::NEG_INFINITY, f64::max);
        if led_floor < pd_top {
            return Err(Error::InvalidScene(format!(
                "downlink geometry needs LEDs above PDs (lowest LED z = {led_floor}, highest PD z = {pd_top})"
            )));
        }
        let coincide = |a: &Point3, b: &Point3| a.distance(b) <= 0.0;
        for (t, led) in leds.iter().enumerate() {
            if let Some(r) = pds.iter().position(|pd| coincide(led, pd)) {
                return Err(Error::DegenerateLink(format!("LED {} coincides with PD {}", t + 1, r + 1)));
            }
            if let Some(n) = irs_units.iter().position(|u| coincide(led, u)) {
                return Err(Error::DegenerateLink(format!("LED {} coincides with IRS unit {}", t + 1, n + 1)));
            }
        }
        for (n, unit) in irs_units.iter().enumerate() {
            if let Some(r) = pds.iter().position(|pd| coincide(unit, pd)) {
                return Err(Error::DegenerateLink(format!("IRS unit {} coincides with PD {}", n + 1, r + 1)));
            }
        }
        Ok(Self { leds, pds, irs_units, optics, room })
    }

    pub fn leds(&self) -> &[Point3] {
        &self.leds
    }

    pub fn pds(&self) -> &[Point3] {
        &self.pds
    }

    pub fn irs_units(&self) -> &[Point3] {
        &self.irs_units
    }

    pub fn optics(&self) -> &OpticalParams {
        &self.optics
    }

    pub fn room_dims(&self) -> [f64; 3] {
        self.room
    }

    pub fn n_t(&self) -> usize {
        self.leds.len()
    }

    pub fn n_r(&self) -> usize {
        self.pds.len()
    }

    pub fn n_irs(&self) -> usize {
        self.irs_units.len()
    }

    /// Copy of the scene with the PD array translated so its centroid sits
    /// at `(x, y)` (height unchanged).
    pub fn with_receiver_at(&self, x: f64, y: f64) -> Result<Scene> {
        let n = self.pds.len() as f64;
        let cx = self.pds.iter().map(|p| p.x).sum::<f64>() / n;
        let cy = self.pds.iter().map(|p| p.y).sum::<f64>() / n;
        let pds = self.pds.iter().map(|p| Point3::new(p.x - cx + x, p.y - cy + y, p.z)).collect();
        Scene::new(self.leds.clone(), pds, self.irs_units.clone(), self.optics, self.room)
    }
}

/// Grid-based scene description.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneConfig {
    /// Room width (x), depth (y) and height (z) in meters.
    pub room: [f64; 3],
    /// LED grid `(columns along x, rows along y)` on the ceiling.
    pub led_grid: (usize, usize),
    pub pd_center: Point3,
    pub pd_spacing: f64,
    /// PD grid `(columns along x, rows along y)`.
    pub pd_grid: (usize, usize),
    pub irs_corner_a: Point3,
    pub irs_corner_b: Point3,
    /// IRS grid `(columns along the wall, rows along z)`.
    pub irs_grid: (usize, usize),
    pub optics: OpticalParams,
    /// Optional declared counts `(N_t, N_r, N)` checked against the grids.
    pub declared_counts: Option<(usize, usize, usize)>,
}

impl SceneConfig {
    /// The reference 8 m × 8 m × 3 m room: 16 ceiling LEDs, a 2×2 PD array
    /// at (2.0, 3.2, 1.0) with 0.2 m pitch, and 64 IRS units on the `x = 0`
    /// wall between (0, 1, 1.2) and (0, 7, 2.9).
    pub fn reference() -> Self {
        Self {
            room: [8.0, 8.0, 3.0],
            led_grid: (4, 4),
            pd_center: Point3::new(2.0, 3.2, 1.0),
            pd_spacing: 0.2,
            pd_grid: (2, 2),
            irs_corner_a: Point3::new(0.0, 1.0, 1.2),
            irs_corner_b: Point3::new(0.0, 7.0, 2.9),
            irs_grid: (8, 8),
            optics: OpticalParams::reference(),
            declared_counts: Some((16, 4, 64)),
        }
    }
}

/// Places LEDs, PDs and IRS units according to `cfg`.
pub fn build_scene(cfg: &SceneConfig) -> Result<Scene> {
    let [width, depth, height] = cfg.room;
    let (lx, ly) = cfg.led_grid;
    if lx == 0 || ly == 0 {
        return Err(Error::InvalidScene("LED grid must be non-empty".into()));
    }
    let (px, py) = cfg.pd_grid;
    if px == 0 || py == 0 {
        return Err(Error::InvalidScene("PD grid must be non-empty".into()));
    }
    let n_irs = cfg.irs_grid.0 * cfg.irs_grid.1;
    if let Some((nt, nr, n)) = cfg.declared_counts {
        if nt != lx * ly || nr != px * py || n != n_irs {
            return Err(Error::InvalidScene(format!(
                "grids give (N_t, N_r, N) = ({}, {}, {}) but ({nt}, {nr}, {n}) were declared",
                lx * ly,
                px * py,
                n_irs
            )));
        }
    }

    // equal-area ceiling partition, x fastest
    let cell_x = width / lx as f64;
    let cell_y = depth / ly as f64;
    let mut leds = Vec::with_capacity(lx * ly);
    for iy in 0..ly {
        for ix in 0..lx {
            leds.push(Point3::new((ix as f64 + 0.5) * cell_x, (iy as f64 + 0.5) * cell_y, height));
        }
    }

    if !(cfg.pd_spacing >= 0.0 && cfg.pd_spacing.is_finite()) {
        return Err(Error::InvalidScene("PD spacing must be >= 0".into()));
    }
    let mut pds = Vec::with_capacity(px * py);
    for iy in 0..py {
        for ix in 0..px {
            let ox = (ix as f64 - (px as f64 - 1.0) / 2.0) * cfg.pd_spacing;
            let oy = (iy as f64 - (py as f64 - 1.0) / 2.0) * cfg.pd_spacing;
            pds.push(Point3::new(cfg.pd_center.x + ox, cfg.pd_center.y + oy, cfg.pd_center.z));
        }
    }

    let irs_units = if n_irs == 0 { Vec::new() } else { irs_lattice(cfg)? };

    Scene::new(leds, pds, irs_units, cfg.optics, cfg.room)
}

/// Cell-centered lattice on the wall rectangle, wall-horizontal axis fastest.
fn irs_lattice(cfg: &SceneConfig) -> Result<Vec<Point3>> {
    let a = cfg.irs_corner_a;
    let b = cfg.irs_corner_b;
    let (nh, nz) = cfg.irs_grid;
    let along_y = a.x == b.x;
    if !along_y && a.y != b.y {
        return Err(Error::InvalidScene("IRS corners must span a wall rectangle (equal x or equal y)".into()));
    }
    let (h0, h1) = if along_y { (a.y, b.y) } else { (a.x, b.x) };
    let dh = (h1 - h0) / nh as f64;
    let dz = (b.z - a.z) / nz as f64;
    let mut units = Vec::with_capacity(nh * nz);
    for iz in 0..nz {
        for ih in 0..nh {
            let h = h0 + (ih as f64 + 0.5) * dh;
            let z = a.z + (iz as f64 + 0.5) * dz;
            units.push(if along_y { Point3::new(a.x, h, z) } else { Point3::new(h, a.y, z) });
        }
    }
    Ok(units)
}

/// Length and angles of one straight link.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinkGeometry {
    pub distance: f64,
    /// Angle of irradiance at the emitting end.
    pub tx_angle: f64,
    /// Angle of incidence at the receiving end.
    pub rx_angle: f64,
}

fn vertical_link(from: &Point3, to: &Point3, what: &str) -> Result<LinkGeometry> {
    let distance = from.distance(to);
    if distance.is_nan() || distance <= 0.0 {
        return Err(Error::DegenerateLink(format!("{what} has zero length")));
    }
    let angle = math::acos((from.z - to.z) / distance);
    Ok(LinkGeometry { distance, tx_angle: angle, rx_angle: angle })
}

/// Geometry of the direct LED → PD path.
pub fn los_geometry(tx: &Point3, rx: &Point3) -> Result<LinkGeometry> {
    vertical_link(tx, rx, "LoS link")
}

/// Geometry of the LED → IRS unit → PD path, one entry per leg.
///
/// Only the irradiance angle of the first leg and the incidence angle of the
/// second leg enter the gain; the remaining fields carry the same value.
pub fn nlos_geometry(tx: &Point3, unit: &Point3, rx: &Point3) -> Result<(LinkGeometry, LinkGeometry)> {
    let first = vertical_link(tx, unit, "LED-to-IRS leg")?;
    let second = vertical_link(unit, rx, "IRS-to-PD leg")?;
    Ok((first, second))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use core::f64::consts::{FRAC_PI_4, PI};
    use proptest::prelude::*;

    #[test]
    fn led_grid_centers() {
        let mut cfg = SceneConfig::reference();
        cfg.declared_counts = None;
        let scene = build_scene(&cfg).unwrap();
        // LED (1,1) and LED (2,3), 1-based (column, row)
        assert_eq!(scene.leds()[0], Point3::new(1.0, 1.0, 3.0));
        assert_eq!(scene.leds()[1 + 2 * 4], Point3::new(3.0, 5.0, 3.0));
    }

    #[test]
    fn reference_counts_and_placement() {
        let scene = build_scene(&SceneConfig::reference()).unwrap();
        assert_eq!((scene.n_t(), scene.n_r(), scene.n_irs()), (16, 4, 64));
        let cx = scene.pds().iter().map(|p| p.x).sum::<f64>() / 4.0;
        let cy = scene.pds().iter().map(|p| p.y).sum::<f64>() / 4.0;
        assert_relative_eq!(cx, 2.0, epsilon = 1e-12);
        assert_relative_eq!(cy, 3.2, epsilon = 1e-12);
        assert_relative_eq!(scene.pds()[1].x - scene.pds()[0].x, 0.2, epsilon = 1e-12);
        for u in scene.irs_units() {
            assert_eq!(u.x, 0.0);
            assert!(u.y > 1.0 && u.y < 7.0 && u.z > 1.2 && u.z < 2.9);
        }
        // y fastest, then z
        assert!(scene.irs_units()[1].y > scene.irs_units()[0].y);
        assert_eq!(scene.irs_units()[1].z, scene.irs_units()[0].z);
        assert!(scene.irs_units()[8].z > scene.irs_units()[0].z);
    }

    #[test]
    fn single_led_sits_at_room_center() {
        let mut cfg = SceneConfig::reference();
        cfg.led_grid = (1, 1);
        cfg.declared_counts = None;
        let scene = build_scene(&cfg).unwrap();
        assert_eq!(scene.leds(), &[Point3::new(4.0, 4.0, 3.0)]);
    }

    #[test]
    fn inconsistent_declared_counts_rejected() {
        let mut cfg = SceneConfig::reference();
        cfg.declared_counts = Some((16, 4, 60));
        assert!(matches!(build_scene(&cfg), Err(Error::InvalidScene(_))));
    }

    #[test]
    fn pd_array_outside_room_rejected() {
        let mut cfg = SceneConfig::reference();
        cfg.pd_center = Point3::new(0.05, 3.2, 1.0);
        assert!(matches!(build_scene(&cfg), Err(Error::InvalidScene(_))));
    }

    #[test]
    fn coincident_points_rejected() {
        let o = OpticalParams::reference();
        let p = Point3::new(1.0, 1.0, 2.0);
        let err = Scene::new(vec![p], vec![p], vec![], o, [3.0, 3.0, 3.0]).unwrap_err();
        assert!(matches!(err, Error::DegenerateLink(_)));
    }

    #[test]
    fn los_geometry_examples() {
        let g = los_geometry(&Point3::new(2.0, 3.0, 3.0), &Point3::new(2.0, 3.0, 1.0)).unwrap();
        assert_eq!(g.distance, 2.0);
        assert_eq!(g.tx_angle, 0.0);
        let g = los_geometry(&Point3::new(0.0, 0.0, 3.0), &Point3::new(2.0, 0.0, 1.0)).unwrap();
        assert_relative_eq!(g.distance, 8f64.sqrt(), epsilon = 1e-12);
        assert_relative_eq!(g.tx_angle, FRAC_PI_4, epsilon = 1e-12);
        assert_eq!(g.rx_angle, g.tx_angle);
        let g = los_geometry(&Point3::new(0.0, 0.0, 2.0), &Point3::new(5.0, 0.0, 2.0)).unwrap();
        assert_relative_eq!(g.rx_angle, PI / 2.0, epsilon = 1e-12);
        assert!(los_geometry(&g_point(), &g_point()).is_err());
    }

    fn g_point() -> Point3 {
        Point3::new(1.0, 1.0, 1.0)
    }

    #[test]
    fn nlos_geometry_examples() {
        let (a, b) =
            nlos_geometry(&Point3::new(4.0, 4.0, 3.0), &Point3::new(0.0, 4.0, 2.0), &Point3::new(2.0, 4.0, 1.0))
                .unwrap();
        assert_relative_eq!(a.distance, 17f64.sqrt(), epsilon = 1e-12);
        assert_relative_eq!(b.distance, 5f64.sqrt(), epsilon = 1e-12);
        assert_relative_eq!(a.tx_angle, (1.0 / 17f64.sqrt()).acos(), epsilon = 1e-12);
        assert_relative_eq!(b.rx_angle, (1.0 / 5f64.sqrt()).acos(), epsilon = 1e-12);

        let (a, b) =
            nlos_geometry(&Point3::new(1.0, 1.0, 3.0), &Point3::new(1.0, 1.0, 2.0), &Point3::new(1.0, 1.0, 1.0))
                .unwrap();
        assert_eq!((a.tx_angle, b.rx_angle), (0.0, 0.0));

        let (_, b) =
            nlos_geometry(&Point3::new(1.0, 1.0, 3.0), &Point3::new(0.0, 1.0, 1.0), &Point3::new(2.0, 1.0, 1.0))
                .unwrap();
        assert_relative_eq!(b.rx_angle, PI / 2.0, epsilon = 1e-12);

        let p = Point3::new(1.0, 1.0, 1.0);
        assert!(nlos_geometry(&Point3::new(1.0, 1.0, 3.0), &p, &p).is_err());
    }

    fn point_in(room: f64) -> impl Strategy<Value = Point3> {
        (0.0..room, 0.0..room, 0.0..room).prop_map(|(x, y, z)| Point3::new(x, y, z))
    }

    proptest! {
        #[test]
        fn los_geometry_is_symmetric_and_consistent(a in point_in(5.0), b in point_in(5.0)) {
            prop_assume!(a.distance(&b) > 1e-6);
            let g = los_geometry(&a, &b).unwrap();
            let h = los_geometry(&b, &a).unwrap();
            prop_assert_eq!(g.distance, h.distance);
            prop_assert!((0.0..=PI).contains(&g.tx_angle));
            let dz = g.tx_angle.cos() * g.distance;
            prop_assert!((dz - (a.z - b.z)).abs() <= 1e-12 * g.distance.max(1.0));
        }

        #[test]
        fn generated_points_stay_inside(lx in 1usize..6, ly in 1usize..6, nh in 0usize..6, nz in 1usize..6) {
            let mut cfg = SceneConfig::reference();
            cfg.led_grid = (lx, ly);
            cfg.irs_grid = (nh, nz);
            cfg.declared_counts = None;
            let scene = build_scene(&cfg).unwrap();
            let [w, d, h] = scene.room_dims();
            for p in scene.leds().iter().chain(scene.pds()).chain(scene.irs_units()) {
                prop_assert!(p.x >= 0.0 && p.x <= w);
                prop_assert!(p.y >= 0.0 && p.y <= d);
                prop_assert!(p.z >= 0.0 && p.z <= h);
            }
            prop_assert_eq!(scene.n_irs(), nh * nz);
        }
    }
}
