//! Built-in charts: the equatorial disk of the unit ball, with exact slice
//! map, and a synthetic flat disk whose boundary interaction coefficient is
//! prescribed (for spectral experiments).

use super::Chart;

/// The flat unit disk `{(y1, y2, 0)}` inside the unit ball. The slice of the
/// ball at height `r` is a disk of radius `sqrt(1 - r^2)`, which gives the
/// modified tubular coordinates in closed form.
pub struct EquatorialBallChart;

impl Chart for EquatorialBallChart {
    fn name(&self) -> String {
        "equatorial-disk-in-ball".into()
    }

    fn gamma0(&self, y: [f64; 2]) -> [f64; 3] {
        [y[0], y[1], 0.0]
    }

    fn normal(&self, _y: [f64; 2]) -> [f64; 3] {
        [0.0, 0.0, 1.0]
    }

    fn hslash(&self, _y: [f64; 2]) -> f64 {
        1.0
    }

    fn principal_curvatures(&self, _y: [f64; 2]) -> (f64, f64) {
        (0.0, 0.0)
    }

    fn slice_map(&self, r: f64, y: [f64; 2]) -> [f64; 2] {
        let s = (1.0 - r * r).sqrt();
        [s * y[0], s * y[1]]
    }

    fn domain_signed_distance(&self, p: [f64; 3]) -> Option<f64> {
        Some((p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt() - 1.0)
    }
}

/// The same flat chart, but the geometric boundary coefficient is replaced
/// by a constant `c` and the tubular extension is the identity in the slice
/// variable. No concrete ambient domain is attached.
pub struct SyntheticRobinDisk {
    pub c: f64,
}

impl SyntheticRobinDisk {
    pub fn new(c: f64) -> Self {
        SyntheticRobinDisk { c }
    }
}

impl Chart for SyntheticRobinDisk {
    fn name(&self) -> String {
        format!("synthetic-robin-disk:{}", self.c)
    }

    fn gamma0(&self, y: [f64; 2]) -> [f64; 3] {
        [y[0], y[1], 0.0]
    }

    fn normal(&self, _y: [f64; 2]) -> [f64; 3] {
        [0.0, 0.0, 1.0]
    }

    fn hslash(&self, _y: [f64; 2]) -> f64 {
        1.0
    }

    fn principal_curvatures(&self, _y: [f64; 2]) -> (f64, f64) {
        (0.0, 0.0)
    }

    fn slice_map(&self, _r: f64, y: [f64; 2]) -> [f64; 2] {
        y
    }

    fn robin_coefficient(&self, _theta: f64) -> Option<f64> {
        Some(self.c)
    }
}
