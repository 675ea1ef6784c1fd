//! IRS configuration: binary association matrices `F` (units × PDs) and
//! `G` (units × LEDs), and the combined unit × (LED, PD) matrix `V`.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use crate::scene::Scene;
use crate::{Error, Result};

/// Binary association of every IRS unit to at most one PD and one LED.
#[derive(Debug, Clone, PartialEq)]
pub struct Assignment {
    /// `N × N_r`.
    pub f: DMatrix<f64>,
    /// `N × N_t`.
    pub g: DMatrix<f64>,
}

/// A violated association constraint.
#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    /// Row of `G` sums to more than one (unit assigned to several LEDs).
    LedRowSum { unit: usize, sum: f64 },
    /// Row of `F` sums to more than one (unit assigned to several PDs).
    PdRowSum { unit: usize, sum: f64 },
    /// Entry other than 0 or 1.
    NonBinary { unit: usize, matrix: char, column: usize, value: f64 },
}

impl core::fmt::Display for Violation {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            Violation::LedRowSum { unit, sum } => {
                write!(f, "unit {}: LED row constraint violated (row of G sums to {sum})", unit + 1)
            }
            Violation::PdRowSum { unit, sum } => {
                write!(f, "unit {}: PD row constraint violated (row of F sums to {sum})", unit + 1)
            }
            Violation::NonBinary { unit, matrix, column, value } => {
                write!(f, "unit {}: non-binary entry {value} in {matrix} column {}", unit + 1, column + 1)
            }
        }
    }
}

impl Assignment {
    /// Nothing assigned.
    pub fn empty(n: usize, n_t: usize, n_r: usize) -> Self {
        Self { f: DMatrix::zeros(n, n_r), g: DMatrix::zeros(n, n_t) }
    }

    /// From per-unit `(led, pd)` pairs, 0-based.
    pub fn from_pairs(pairs: &[(usize, usize)], n_t: usize, n_r: usize) -> Result<Self> {
        let mut a = Self::empty(pairs.len(), n_t, n_r);
        for (n, &(t, r)) in pairs.iter().enumerate() {
            if t >= n_t || r >= n_r {
                return Err(Error::InvalidParameter(format!(
                    "unit {} assigned to LED {} / PD {} outside 1..={n_t} / 1..={n_r}",
                    n + 1,
                    t + 1,
                    r + 1
                )));
            }
            a.g[(n, t)] = 1.0;
            a.f[(n, r)] = 1.0;
        }
        Ok(a)
    }

    pub fn n_irs(&self) -> usize {
        self.f.nrows()
    }

    pub fn n_t(&self) -> usize {
        self.g.ncols()
    }

    pub fn n_r(&self) -> usize {
        self.f.ncols()
    }

    /// `(led, pd)` of a unit, 0-based, `None` where the row is empty.
    pub fn unit_links(&self, n: usize) -> (Option<usize>, Option<usize>) {
        let led = (0..self.n_t()).find(|&t| self.g[(n, t)] == 1.0);
        let pd = (0..self.n_r()).find(|&r| self.f[(n, r)] == 1.0);
        (led, pd)
    }

    /// Every violated constraint; empty iff the assignment is valid.
    pub fn validate(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        for n in 0..self.n_irs() {
            for (name, m) in [('F', &self.f), ('G', &self.g)] {
                for c in 0..m.ncols() {
                    let v = m[(n, c)];
                    if v != 0.0 && v != 1.0 {
                        out.push(Violation::NonBinary { unit: n, matrix: name, column: c, value: v });
                    }
                }
            }
            let gsum: f64 = self.g.row(n).iter().sum();
            if gsum > 1.0 {
                out.push(Violation::LedRowSum { unit: n, sum: gsum });
            }
            let fsum: f64 = self.f.row(n).iter().sum();
            if fsum > 1.0 {
                out.push(Violation::PdRowSum { unit: n, sum: fsum });
            }
        }
        out
    }

    /// Binary `V` whose column `n_r + n_t N_r` is `f_{n_r} ⊙ g_{n_t}`.
    pub fn to_v(&self) -> DMatrix<f64> {
        let (n, nt, nr) = (self.n_irs(), self.n_t(), self.n_r());
        let mut v = DMatrix::zeros(n, nt * nr);
        for t in 0..nt {
            for r in 0..nr {
                let p = r + t * nr;
                for k in 0..n {
                    v[(k, p)] = self.f[(k, r)] * self.g[(k, t)];
                }
            }
        }
        v
    }
}

/// Relaxed IRS configuration: entries in `[0, 1]`, row sums at most one.
#[derive(Debug, Clone, PartialEq)]
pub struct RelaxedV {
    v: DMatrix<f64>,
    n_r: usize,
}

impl RelaxedV {
    /// Slack allowed on the bounds when validating.
    pub const TOL: f64 = 1e-9;

    pub fn new(v: DMatrix<f64>, n_r: usize) -> Result<Self> {
        if n_r == 0 || !v.ncols().is_multiple_of(n_r) {
            return Err(Error::Dimension(format!("V has {} columns, not a multiple of N_r = {n_r}", v.ncols())));
        }
        for (n, row) in v.row_iter().enumerate() {
            if row.iter().any(|x| !(*x >= -Self::TOL && *x <= 1.0 + Self::TOL)) {
                return Err(Error::InvalidParameter(format!("row {} of V leaves [0, 1]", n + 1)));
            }
            if row.iter().sum::<f64>() > 1.0 + Self::TOL {
                return Err(Error::InvalidParameter(format!("row {} of V sums above 1", n + 1)));
            }
        }
        Ok(Self { v, n_r })
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.v
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.v
    }

    pub fn n_r(&self) -> usize {
        self.n_r
    }

    pub fn n_t(&self) -> usize {
        self.v.ncols() / self.n_r
    }
}

/// Rounds a relaxed `V` to a binary assignment: each unit goes to the
/// (LED, PD) pair of its largest entry, ties to the smallest column.
///
/// All-zero rows therefore land on (LED 1, PD 1).
pub fn recover_assignment(v: &RelaxedV) -> Assignment {
    let m = v.matrix();
    let (nt, nr) = (v.n_t(), v.n_r());
    let mut a = Assignment::empty(m.nrows(), nt, nr);
    if m.ncols() == 0 {
        return a;
    }
    for n in 0..m.nrows() {
        let mut best = 0;
        for p in 1..m.ncols() {
            if m[(n, p)] > m[(n, best)] {
                best = p;
            }
        }
        let t = best / nr;
        let r = best % nr;
        a.f[(n, r)] = 1.0;
        a.g[(n, t)] = 1.0;
    }
    a
}

fn nearest(points: &[crate::scene::Point3], target: &crate::scene::Point3) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (i, p) in points.iter().enumerate() {
        let d = p.distance(target);
        if d < best_d {
            best = i;
            best_d = d;
        }
    }
    best
}

/// Assigns every unit to its nearest PD and nearest LED.
pub fn distance_greedy(scene: &Scene) -> Assignment {
    let mut a = Assignment::empty(scene.n_irs(), scene.n_t(), scene.n_r());
    for (n, unit) in scene.irs_units().iter().enumerate() {
        a.f[(n, nearest(scene.pds(), unit))] = 1.0;
        a.g[(n, nearest(scene.leds(), unit))] = 1.0;
    }
    a
}

/// Draws each unit's (LED, PD) pair uniformly and independently.
pub fn random_assignment(scene: &Scene, seed: u64) -> Assignment {
    random_assignment_dims(scene.n_irs(), scene.n_t(), scene.n_r(), seed)
}

pub fn random_assignment_dims(n: usize, n_t: usize, n_r: usize, seed: u64) -> Assignment {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut a = Assignment::empty(n, n_t, n_r);
    for k in 0..n {
        let p = rng.random_range(0..n_t * n_r);
        a.f[(k, p % n_r)] = 1.0;
        a.g[(k, p / n_r)] = 1.0;
    }
    a
}

/// Human-readable list of violations, one per line.
pub fn describe_violations(v: &[Violation]) -> String {
    let mut s = String::new();
    for item in v {
        if !s.is_empty() {
            s.push('\n');
        }
        s.push_str(&format!("{item}"));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::{build_scene, OpticalParams, Point3, SceneConfig};
    use proptest::prelude::*;

    fn assignment_strategy() -> impl Strategy<Value = Assignment> {
        (1usize..5, 1usize..4, 0usize..7).prop_flat_map(|(nt, nr, n)| {
            proptest::collection::vec((0..=nt, 0..=nr), n).prop_map(move |rows| {
                let mut a = Assignment::empty(rows.len(), nt, nr);
                for (k, (t, r)) in rows.into_iter().enumerate() {
                    // nt / nr mean "unassigned"
                    if t < nt {
                        a.g[(k, t)] = 1.0;
                    }
                    if r < nr {
                        a.f[(k, r)] = 1.0;
                    }
                }
                a
            })
        })
    }

    #[test]
    fn to_v_examples() {
        assert_eq!(Assignment::empty(3, 2, 2).to_v(), DMatrix::zeros(3, 4));
        let one = Assignment::from_pairs(&[(0, 0)], 1, 1).unwrap();
        assert_eq!(one.to_v(), DMatrix::from_element(1, 1, 1.0));
        // unit 1 -> (LED 2, PD 1): one-based column 1 + (2-1)*2 = 3
        let mut a = Assignment::empty(3, 2, 2);
        a.g[(0, 1)] = 1.0;
        a.f[(0, 0)] = 1.0;
        let v = a.to_v();
        assert_eq!(v.row(0).iter().cloned().collect::<Vec<_>>(), vec![0.0, 0.0, 1.0, 0.0]);
    }

    #[test]
    fn recover_examples() {
        let v = RelaxedV::new(DMatrix::from_row_slice(1, 4, &[0.2, 0.7, 0.1, 0.0]), 2).unwrap();
        let a = recover_assignment(&v);
        // p† = 2 (1-based) -> LED 1, PD 2
        assert_eq!(a.unit_links(0), (Some(0), Some(1)));
        let z = RelaxedV::new(DMatrix::zeros(1, 4), 2).unwrap();
        assert_eq!(recover_assignment(&z).unit_links(0), (Some(0), Some(0)));
    }

    #[test]
    fn validate_reports_each_kind() {
        let a = Assignment::from_pairs(&[(0, 1), (1, 0)], 2, 2).unwrap();
        assert!(a.validate().is_empty());
        let mut b = a.clone();
        b.g[(1, 0)] = 1.0;
        let v = b.validate();
        assert_eq!(v, vec![Violation::LedRowSum { unit: 1, sum: 2.0 }]);
        let mut c = a;
        c.f[(0, 0)] = 0.5;
        let v = c.validate();
        assert!(matches!(v[0], Violation::NonBinary { unit: 0, matrix: 'F', column: 0, .. }));
        assert!(describe_violations(&v).contains("non-binary"));
    }

    #[test]
    fn relaxed_v_rejects_bad_rows() {
        assert!(RelaxedV::new(DMatrix::from_row_slice(1, 2, &[0.6, 0.6]), 1).is_err());
        assert!(RelaxedV::new(DMatrix::from_row_slice(1, 2, &[-0.5, 0.0]), 1).is_err());
        assert!(RelaxedV::new(DMatrix::zeros(1, 3), 2).is_err());
    }

    #[test]
    fn greedy_single_transceiver() {
        let scene = Scene::new(
            vec![Point3::new(1.0, 1.0, 3.0)],
            vec![Point3::new(1.5, 1.0, 1.0)],
            vec![Point3::new(0.0, 0.5, 2.0), Point3::new(0.0, 1.5, 2.5)],
            OpticalParams::reference(),
            [3.0, 3.0, 3.0],
        )
        .unwrap();
        let a = distance_greedy(&scene);
        assert_eq!(a.unit_links(0), (Some(0), Some(0)));
        assert_eq!(a.unit_links(1), (Some(0), Some(0)));
    }

    #[test]
    fn greedy_ties_go_to_smaller_index() {
        let scene = Scene::new(
            vec![Point3::new(1.0, 1.0, 3.0), Point3::new(1.0, 2.0, 3.0), Point3::new(1.0, 3.0, 3.0)],
            vec![Point3::new(1.0, 1.0, 1.0)],
            // equidistant from LEDs 2 and 3 (1-based)
            vec![Point3::new(0.0, 2.5, 2.0)],
            OpticalParams::reference(),
            [4.0, 4.0, 3.0],
        )
        .unwrap();
        assert_eq!(distance_greedy(&scene).unit_links(0).0, Some(1));
    }

    #[test]
    fn greedy_matches_exhaustive_distances_on_reference() {
        let scene = build_scene(&SceneConfig::reference()).unwrap();
        let a = distance_greedy(&scene);
        for (n, u) in scene.irs_units().iter().enumerate() {
            let (t, r) = a.unit_links(n);
            let (t, r) = (t.unwrap(), r.unwrap());
            for (i, led) in scene.leds().iter().enumerate() {
                assert!(scene.leds()[t].distance(u) <= led.distance(u));
                if led.distance(u) == scene.leds()[t].distance(u) {
                    assert!(t <= i);
                }
            }
            for pd in scene.pds() {
                assert!(scene.pds()[r].distance(u) <= pd.distance(u));
            }
        }
    }

    #[test]
    fn random_assignment_is_deterministic_and_uniform() {
        let scene = build_scene(&SceneConfig::reference()).unwrap();
        assert_eq!(random_assignment(&scene, 42), random_assignment(&scene, 42));
        assert_ne!(random_assignment(&scene, 42), random_assignment(&scene, 43));
        assert_eq!(random_assignment_dims(0, 3, 2, 1).n_irs(), 0);

        let (nt, nr) = (3, 2);
        let draws = 100_000;
        let a = random_assignment_dims(draws, nt, nr, 9);
        let v = a.to_v();
        let p = 1.0 / (nt * nr) as f64;
        let sigma = (draws as f64 * p * (1.0 - p)).sqrt();
        for c in 0..nt * nr {
            let count: f64 = v.column(c).iter().sum();
            assert!((count - draws as f64 * p).abs() <= 3.0 * sigma, "column {c}: {count}");
        }
    }

    proptest! {
        #[test]
        fn to_v_rows_one_hot_and_columns_orthogonal(a in assignment_strategy()) {
            prop_assert!(a.validate().is_empty());
            let v = a.to_v();
            for row in v.row_iter() {
                let s: f64 = row.iter().sum();
                prop_assert!(s == 0.0 || s == 1.0);
            }
            for p in 0..v.ncols() {
                for q in 0..v.ncols() {
                    if p != q {
                        prop_assert_eq!(v.column(p).dot(&v.column(q)), 0.0);
                    }
                }
            }
        }

        #[test]
        fn recover_round_trips_full_assignments(
            (nt, nr, pairs) in (1usize..5, 1usize..4).prop_flat_map(|(nt, nr)| {
                (Just(nt), Just(nr), proptest::collection::vec((0..nt, 0..nr), 0..7))
            })
        ) {
            let a = Assignment::from_pairs(&pairs, nt, nr).unwrap();
            let v = RelaxedV::new(a.to_v(), nr).unwrap();
            let back = recover_assignment(&v);
            prop_assert!(back.validate().is_empty());
            prop_assert_eq!(&back, &a);
            prop_assert_eq!(back.to_v(), a.to_v());
        }
    }
}
