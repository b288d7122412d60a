//! Cell-centered polar tensor grid on the unit disk and scalar fields over
//! it. Radial nodes sit at `r_i = (i + 1/2) h_r`, so no node coincides with
//! the pole and the finite-volume fluxes vanish naturally at `r = 0`.

use crate::error::{Error, Result};
use std::sync::Arc;

#[derive(Debug, Clone, PartialEq)]
pub struct PolarGrid {
    pub n_r: usize,
    pub n_theta: usize,
    pub h_r: f64,
    pub h_theta: f64,
    pub r: Vec<f64>,
    pub theta: Vec<f64>,
}

impl PolarGrid {
    pub fn new(n_r: usize, n_theta: usize) -> Result<Arc<Self>> {
        if n_r < 8 {
            return Err(Error::InvalidParameter(format!(
                "radial resolution must be >= 8, got {n_r}"
            )));
        }
        if n_theta < 8 || n_theta % 2 != 0 {
            return Err(Error::InvalidParameter(format!(
                "angular resolution must be even and >= 8, got {n_theta}"
            )));
        }
        let h_r = 1.0 / n_r as f64;
        let h_theta = std::f64::consts::TAU / n_theta as f64;
        let r = (0..n_r).map(|i| (i as f64 + 0.5) * h_r).collect();
        let theta = (0..n_theta).map(|j| j as f64 * h_theta).collect();
        Ok(Arc::new(PolarGrid {
            n_r,
            n_theta,
            h_r,
            h_theta,
            r,
            theta,
        }))
    }

    #[inline]
    pub fn idx(&self, i: usize, j: usize) -> usize {
        i * self.n_theta + j
    }

    pub fn len(&self) -> usize {
        self.n_r * self.n_theta
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Cartesian coordinates of node (i, j) in the parameter disk.
    pub fn node(&self, i: usize, j: usize) -> [f64; 2] {
        let (s, c) = self.theta[j].sin_cos();
        [self.r[i] * c, self.r[i] * s]
    }

    /// Quadrature weight of the cell around node (i, j) for the flat measure
    /// `r dr dtheta` (multiply by `hslash^2` for the surface measure).
    pub fn cell_weight(&self, i: usize) -> f64 {
        self.r[i] * self.h_r * self.h_theta
    }
}

/// A scalar field sampled on a polar grid.
#[derive(Debug, Clone)]
pub struct DiskField {
    pub grid: Arc<PolarGrid>,
    pub data: Vec<f64>,
}

impl DiskField {
    pub fn zeros(grid: &Arc<PolarGrid>) -> Self {
        DiskField {
            grid: grid.clone(),
            data: vec![0.0; grid.len()],
        }
    }

    pub fn from_fn(grid: &Arc<PolarGrid>, mut f: impl FnMut(f64, f64) -> f64) -> Self {
        let mut data = vec![0.0; grid.len()];
        for i in 0..grid.n_r {
            for j in 0..grid.n_theta {
                data[grid.idx(i, j)] = f(grid.r[i], grid.theta[j]);
            }
        }
        DiskField { grid: grid.clone(), data }
    }

    pub fn constant(grid: &Arc<PolarGrid>, v: f64) -> Self {
        DiskField {
            grid: grid.clone(),
            data: vec![v; grid.len()],
        }
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.data[self.grid.idx(i, j)]
    }

    #[inline]
    pub fn at_mut(&mut self, i: usize, j: usize) -> &mut f64 {
        let k = self.grid.idx(i, j);
        &mut self.data[k]
    }

    pub fn same_grid(&self, other: &DiskField) -> Result<()> {
        if self.grid.n_r != other.grid.n_r || self.grid.n_theta != other.grid.n_theta {
            return Err(Error::GridMismatch(format!(
                "{}x{} vs {}x{}",
                self.grid.n_r, self.grid.n_theta, other.grid.n_r, other.grid.n_theta
            )));
        }
        Ok(())
    }

    pub fn scale(&mut self, a: f64) {
        for v in &mut self.data {
            *v *= a;
        }
    }

    pub fn axpy(&mut self, a: f64, other: &DiskField) {
        for (v, o) in self.data.iter_mut().zip(&other.data) {
            *v += a * o;
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    /// Integral against another field under the measure `weight_r(i) * r dr dtheta`
    /// (pass `hslash^2` sampled radially for the surface measure).
    pub fn dot_weighted(&self, other: &DiskField, weight_r: &[f64]) -> f64 {
        let g = &self.grid;
        let mut s = 0.0;
        for i in 0..g.n_r {
            let w = g.cell_weight(i) * weight_r[i];
            let row = i * g.n_theta;
            let mut acc = 0.0;
            for j in 0..g.n_theta {
                acc += self.data[row + j] * other.data[row + j];
            }
            s += w * acc;
        }
        s
    }

    /// Trace of the field on the boundary circle `r = 1`, by second-order
    /// extrapolation from the two outermost rings.
    pub fn boundary_trace(&self) -> Vec<f64> {
        let g = &self.grid;
        let n = g.n_r;
        (0..g.n_theta)
            .map(|j| 1.5 * self.at(n - 1, j) - 0.5 * self.at(n - 2, j))
            .collect()
    }

    /// Outward radial derivative at `r = 1`, second-order one-sided using the
    /// three outermost rings (node offsets h/2, 3h/2, 5h/2 inside).
    pub fn boundary_radial_derivative(&self) -> Vec<f64> {
        let g = &self.grid;
        let n = g.n_r;
        let h = g.h_r;
        // Coefficients solve the 3x3 Vandermonde system for offsets
        // d = (1/2, 3/2, 5/2) h: sum c = 0, -sum c*d = 1, sum c*d^2 = 0.
        let c0 = 2.0 / h;
        let c1 = -3.0 / h;
        let c2 = 1.0 / h;
        (0..g.n_theta)
            .map(|j| c0 * self.at(n - 1, j) + c1 * self.at(n - 2, j) + c2 * self.at(n - 3, j))
            .collect()
    }
}

/// Real Fourier coefficients in theta of a disk field: for each mode k,
/// radial vectors of cosine and sine coefficients.
#[derive(Debug, Clone)]
pub struct ThetaModes {
    pub n_r: usize,
    pub n_theta: usize,
    /// cos-coefficient radial profiles, index k = 0..=k_max.
    pub cos: Vec<Vec<f64>>,
    /// sin-coefficient radial profiles, index k = 1..=k_max stored at k.
    pub sin: Vec<Vec<f64>>,
}

impl ThetaModes {
    pub fn analyze(field: &DiskField, k_max: usize) -> Self {
        let g = &field.grid;
        let nt = g.n_theta;
        let mut cos = vec![vec![0.0; g.n_r]; k_max + 1];
        let mut sin = vec![vec![0.0; g.n_r]; k_max + 1];
        for k in 0..=k_max {
            let (cs, sn): (Vec<f64>, Vec<f64>) = (0..nt)
                .map(|j| {
                    let a = k as f64 * g.theta[j];
                    (a.cos(), a.sin())
                })
                .unzip();
            let norm = if k == 0 { 1.0 / nt as f64 } else { 2.0 / nt as f64 };
            for i in 0..g.n_r {
                let row = i * nt;
                let mut ac = 0.0;
                let mut as_ = 0.0;
                for j in 0..nt {
                    ac += field.data[row + j] * cs[j];
                    as_ += field.data[row + j] * sn[j];
                }
                cos[k][i] = norm * ac;
                sin[k][i] = norm * as_;
            }
        }
        ThetaModes {
            n_r: g.n_r,
            n_theta: nt,
            cos,
            sin,
        }
    }

    pub fn synthesize(&self, grid: &Arc<PolarGrid>) -> DiskField {
        let mut out = DiskField::zeros(grid);
        for k in 0..self.cos.len() {
            let kk = k as f64;
            for j in 0..grid.n_theta {
                let a = kk * grid.theta[j];
                let (s, c) = a.sin_cos();
                for i in 0..grid.n_r {
                    out.data[grid.idx(i, j)] += self.cos[k][i] * c + self.sin[k][i] * s;
                }
            }
        }
        out
    }
}

/// Fourier analysis of a periodic boundary table (values at the theta nodes).
pub fn boundary_modes(values: &[f64], k_max: usize) -> (Vec<f64>, Vec<f64>) {
    let nt = values.len();
    let mut cos = vec![0.0; k_max + 1];
    let mut sin = vec![0.0; k_max + 1];
    for k in 0..=k_max {
        let norm = if k == 0 { 1.0 / nt as f64 } else { 2.0 / nt as f64 };
        let mut ac = 0.0;
        let mut as_ = 0.0;
        for (j, &v) in values.iter().enumerate() {
            let a = k as f64 * std::f64::consts::TAU * j as f64 / nt as f64;
            ac += v * a.cos();
            as_ += v * a.sin();
        }
        cos[k] = norm * ac;
        sin[k] = norm * as_;
    }
    (cos, sin)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_validation() {
        assert!(PolarGrid::new(4, 64).is_err());
        assert!(PolarGrid::new(32, 31).is_err());
        assert!(PolarGrid::new(32, 64).is_ok());
    }

    #[test]
    fn quadrature_of_constant_is_disk_area() {
        let g = PolarGrid::new(64, 128).unwrap();
        let one = DiskField::constant(&g, 1.0);
        let w = vec![1.0; g.n_r];
        let area = one.dot_weighted(&one, &w);
        assert!((area - std::f64::consts::PI).abs() < 1e-12, "{area}");
    }

    #[test]
    fn mode_roundtrip() {
        let g = PolarGrid::new(24, 48).unwrap();
        let f = DiskField::from_fn(&g, |r, t| r * (2.0 * t).cos() + 0.3 * r * r * (3.0 * t).sin());
        let modes = ThetaModes::analyze(&f, 8);
        let back = modes.synthesize(&g);
        let mut worst = 0.0f64;
        for (a, b) in f.data.iter().zip(&back.data) {
            worst = worst.max((a - b).abs());
        }
        assert!(worst < 1e-12, "{worst}");
    }

    #[test]
    fn boundary_trace_linear_exact() {
        let g = PolarGrid::new(32, 8).unwrap();
        let f = DiskField::from_fn(&g, |r, _| 3.0 - 2.0 * r);
        let tr = f.boundary_trace();
        for v in tr {
            assert!((v - 1.0).abs() < 1e-12);
        }
        let dr = f.boundary_radial_derivative();
        for v in dr {
            assert!((v + 2.0).abs() < 1e-10);
        }
    }
}
