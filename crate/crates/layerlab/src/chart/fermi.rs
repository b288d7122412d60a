//! The modified tubular coordinate map around a chart: points are reached as
//! `gamma(r, y) = gamma0(Y(r, y)) + r nu(Y(r, y))`, where the slice map `Y`
//! deforms constant-parameter curves so boundary rows stay on the domain
//! boundary. Expansion coefficients `q1`, `q2` come from radial derivatives
//! of the map at `r = 0`.

use super::Chart;
use crate::error::{Error, Result};
use std::sync::Arc;

pub struct FermiMap {
    pub chart: Arc<dyn Chart>,
    pub r0: f64,
    pub delta: f64,
    fd_step: f64,
}

impl FermiMap {
    pub fn new(chart: Arc<dyn Chart>) -> Self {
        let r0 = chart.tube_radius();
        let delta = chart.extension_margin();
        FermiMap {
            chart,
            r0,
            delta,
            fd_step: 0.02,
        }
    }

    fn point_unchecked(&self, r: f64, y: [f64; 2]) -> [f64; 3] {
        let yy = self.chart.slice_map(r, y);
        let g = self.chart.gamma0(yy);
        let n = self.chart.normal(yy);
        [g[0] + r * n[0], g[1] + r * n[1], g[2] + r * n[2]]
    }

    /// `gamma(r, y)`, with the tube and extension bounds enforced.
    pub fn point(&self, r: f64, y: [f64; 2]) -> Result<[f64; 3]> {
        if r.abs() >= self.r0 {
            return Err(Error::InvalidParameter(format!(
                "normal coordinate r = {r} outside tube radius {}",
                self.r0
            )));
        }
        let rad = (y[0] * y[0] + y[1] * y[1]).sqrt();
        if rad >= 1.0 + self.delta {
            return Err(Error::InvalidParameter(format!(
                "parameter |y| = {rad} outside extended disk 1 + {}",
                self.delta
            )));
        }
        Ok(self.point_unchecked(r, y))
    }

    /// Second radial derivative of the map at `r = 0` (orthogonal to the
    /// normal by construction of the slice map).
    pub fn q1(&self, y: [f64; 2]) -> [f64; 3] {
        let h = self.fd_step;
        let f = |r: f64| self.point_unchecked(r, y);
        let (a, b, c, d, e) = (f(-2.0 * h), f(-h), f(0.0), f(h), f(2.0 * h));
        let mut out = [0.0; 3];
        for k in 0..3 {
            out[k] = (-a[k] + 16.0 * b[k] - 30.0 * c[k] + 16.0 * d[k] - e[k]) / (12.0 * h * h);
        }
        out
    }

    /// Third radial derivative of the map at `r = 0`.
    pub fn q2(&self, y: [f64; 2]) -> [f64; 3] {
        let h = self.fd_step;
        let f = |r: f64| self.point_unchecked(r, y);
        let (a, b, d, e) = (f(-2.0 * h), f(-h), f(h), f(2.0 * h));
        let mut out = [0.0; 3];
        for k in 0..3 {
            out[k] = (-a[k] + 2.0 * b[k] - 2.0 * d[k] + e[k]) / (2.0 * h * h * h);
        }
        out
    }

    /// Fourth-order expansion `gamma0 + r nu + (r^2/2) q1 + (r^3/6) q2`.
    pub fn expansion_point(&self, r: f64, y: [f64; 2]) -> [f64; 3] {
        let g = self.chart.gamma0(y);
        let n = self.chart.normal(y);
        let q1 = self.q1(y);
        let q2 = self.q2(y);
        let mut out = [0.0; 3];
        for k in 0..3 {
            out[k] = g[k] + r * n[k] + 0.5 * r * r * q1[k] + r * r * r / 6.0 * q2[k];
        }
        out
    }

    /// Maximum orthogonality defect `max(|<q1, nu>|, |<q2, nu>|)` over a set
    /// of sample parameters.
    pub fn q_orthogonality_defect(&self, samples: &[[f64; 2]]) -> f64 {
        let mut worst = 0.0f64;
        for &y in samples {
            let n = self.chart.normal(y);
            let q1 = self.q1(y);
            let q2 = self.q2(y);
            let d1 = q1[0] * n[0] + q1[1] * n[1] + q1[2] * n[2];
            let d2 = q2[0] * n[0] + q2[1] * n[1] + q2[2] * n[2];
            worst = worst.max(d1.abs()).max(d2.abs());
        }
        worst
    }

    /// Samples the chart boundary and measures how far the surface is from
    /// meeting the domain boundary at a right angle: returns the maximum of
    /// `|angle(nu, n) - pi/2|` over the samples, where `n` is the domain
    /// boundary normal obtained from the signed-distance oracle.
    pub fn orthogonal_intersection_deviation(
        &self,
        sdf: &dyn Fn([f64; 3]) -> f64,
        samples: usize,
    ) -> Result<f64> {
        if samples == 0 {
            return Err(Error::InvalidParameter(
                "orthogonality check needs at least one boundary sample".into(),
            ));
        }
        let h = 1e-5;
        let mut worst = 0.0f64;
        for k in 0..samples {
            let theta = std::f64::consts::TAU * k as f64 / samples as f64;
            let y = [theta.cos(), theta.sin()];
            let p = self.chart.gamma0(y);
            let mut grad = [0.0; 3];
            for d in 0..3 {
                let mut pp = p;
                let mut pm = p;
                pp[d] += h;
                pm[d] -= h;
                grad[d] = (sdf(pp) - sdf(pm)) / (2.0 * h);
            }
            let gn = (grad[0] * grad[0] + grad[1] * grad[1] + grad[2] * grad[2]).sqrt();
            if gn < 1e-12 {
                return Err(Error::Inconsistency(format!(
                    "domain oracle gradient vanishes at boundary sample {k}"
                )));
            }
            let nu = self.chart.normal(y);
            let cosang = (grad[0] * nu[0] + grad[1] * nu[1] + grad[2] * nu[2]) / gn;
            worst = worst.max(cosang.clamp(-1.0, 1.0).asin().abs());
        }
        Ok(worst)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chart::disks::EquatorialBallChart;

    #[test]
    fn ball_fermi_point_matches_exact_slice() {
        let map = FermiMap::new(Arc::new(EquatorialBallChart));
        let y = [0.6, -0.3];
        let r = 0.3;
        let p = map.point(r, y).unwrap();
        let s = (1.0f64 - r * r).sqrt();
        assert!((p[0] - s * y[0]).abs() < 1e-14);
        assert!((p[1] - s * y[1]).abs() < 1e-14);
        assert!((p[2] - r).abs() < 1e-14);
        // Boundary rows land on the sphere.
        let pb = map.point(0.2, [1.0, 0.0]).unwrap();
        let norm = (pb[0] * pb[0] + pb[1] * pb[1] + pb[2] * pb[2]).sqrt();
        assert!((norm - 1.0).abs() < 1e-12);
    }

    #[test]
    fn ball_q1_is_inward_radial() {
        let map = FermiMap::new(Arc::new(EquatorialBallChart));
        for y in [[0.5, 0.1], [0.0, 0.9], [-0.4, -0.4]] {
            let q1 = map.q1(y);
            assert!((q1[0] + y[0]).abs() < 1e-6, "{q1:?}");
            assert!((q1[1] + y[1]).abs() < 1e-6);
            assert!(q1[2].abs() < 1e-10);
            let q2 = map.q2(y);
            assert!(q2.iter().all(|v| v.abs() < 1e-6), "{q2:?}");
        }
    }

    #[test]
    fn tube_bounds_enforced() {
        let map = FermiMap::new(Arc::new(EquatorialBallChart));
        assert!(map.point(0.9, [0.0, 0.0]).is_err());
        assert!(map.point(0.1, [2.0, 0.0]).is_err());
    }

    #[test]
    fn r_zero_returns_gamma0() {
        let map = FermiMap::new(Arc::new(EquatorialBallChart));
        let y = [0.3, 0.4];
        let p = map.point(0.0, y).unwrap();
        assert_eq!(p, [0.3, 0.4, 0.0]);
    }

    #[test]
    fn zero_samples_is_an_error() {
        let map = FermiMap::new(Arc::new(EquatorialBallChart));
        let sdf = |p: [f64; 3]| (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt() - 1.0;
        assert!(map.orthogonal_intersection_deviation(&sdf, 0).is_err());
    }
}
