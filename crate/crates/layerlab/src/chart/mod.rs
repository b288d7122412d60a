//! Surface charts in isothermal coordinates over the unit disk, a runtime
//! registry of chart builders selectable by name, and cached per-grid chart
//! data (curvature fields, boundary coefficient tables and the discrete
//! surface operators built from them).

pub mod disks;
pub mod fermi;

use crate::error::{Error, Result};
use crate::polar::{DiskField, PolarGrid};
use std::collections::BTreeMap;
use std::sync::Arc;

pub use fermi::FermiMap;

/// An analytic chart of the concentration surface. Implementations supply
/// closure-style evaluators; all cached sampling happens in [`ChartData`].
///
/// The `coef_*` family is the extensible registry of high-order expansion
/// coefficients that enter the interior operator and the boundary condition
/// beyond the orders with closed geometric formulas. Flat built-in charts
/// use the zero defaults; a curved chart may override them with exact
/// values.
pub trait Chart: Send + Sync {
    fn name(&self) -> String;

    /// Immersion of the extended parameter disk `|y| < 1 + delta`.
    fn gamma0(&self, y: [f64; 2]) -> [f64; 3];

    /// Unit normal field.
    fn normal(&self, y: [f64; 2]) -> [f64; 3];

    /// Conformal factor of the isothermal parametrization.
    fn hslash(&self, y: [f64; 2]) -> f64;

    /// Principal curvatures `(k1, k2)`.
    fn principal_curvatures(&self, y: [f64; 2]) -> (f64, f64);

    /// The slice map `Y(r, ·)` of the modified tubular coordinates:
    /// `gamma(r, y) = gamma0(Y(r, y)) + r nu(Y(r, y))`.
    fn slice_map(&self, r: f64, y: [f64; 2]) -> [f64; 2];

    /// Overrides the geometric boundary interaction coefficient when the
    /// chart is synthetic. `None` means: compute from the chart geometry.
    fn robin_coefficient(&self, _theta: f64) -> Option<f64> {
        None
    }

    fn tube_radius(&self) -> f64 {
        0.5
    }

    fn extension_margin(&self) -> f64 {
        0.25
    }

    /// Signed distance to the ambient domain boundary (negative inside),
    /// when the chart models a concrete domain.
    fn domain_signed_distance(&self, _p: [f64; 3]) -> Option<f64> {
        None
    }

    // --- high-order coefficient registry; defaults are zero ---

    /// Coefficient of the cubic drift term in the interior operator.
    fn coef_b(&self, _y: [f64; 2]) -> f64 {
        0.0
    }
    fn coef_a(&self, _i: usize, _s_eps: f64, _y: [f64; 2]) -> f64 {
        0.0
    }
    fn coef_b_mixed(&self, _i: usize, _s_eps: f64, _y: [f64; 2]) -> f64 {
        0.0
    }
    fn coef_b4(&self, _theta: f64) -> f64 {
        0.0
    }
    fn coef_b5(&self, _theta: f64) -> f64 {
        0.0
    }
    fn coef_b6(&self, _x: f64, _theta: f64) -> f64 {
        0.0
    }
}

pub type ChartBuilder = Box<dyn Fn(&[f64]) -> Result<Arc<dyn Chart>> + Send + Sync>;

/// Name-indexed registry of chart builders. Built-ins are registered by
/// [`ChartRegistry::with_builtins`]; user evaluators satisfying the chart
/// invariants can be added at runtime via [`ChartRegistry::register`].
pub struct ChartRegistry {
    builders: BTreeMap<String, ChartBuilder>,
}

impl ChartRegistry {
    pub fn empty() -> Self {
        ChartRegistry {
            builders: BTreeMap::new(),
        }
    }

    pub fn with_builtins() -> Self {
        let mut reg = Self::empty();
        reg.register("equatorial-disk-in-ball", |args| {
            if !args.is_empty() {
                return Err(Error::InvalidParameter(
                    "equatorial-disk-in-ball takes no parameters".into(),
                ));
            }
            Ok(Arc::new(disks::EquatorialBallChart) as Arc<dyn Chart>)
        });
        reg.register("synthetic-robin-disk", |args| {
            if args.len() != 1 {
                return Err(Error::InvalidParameter(
                    "synthetic-robin-disk takes exactly one parameter, e.g. synthetic-robin-disk:0.5".into(),
                ));
            }
            Ok(Arc::new(disks::SyntheticRobinDisk::new(args[0])) as Arc<dyn Chart>)
        });
        reg
    }

    pub fn register(
        &mut self,
        name: &str,
        builder: impl Fn(&[f64]) -> Result<Arc<dyn Chart>> + Send + Sync + 'static,
    ) {
        self.builders.insert(name.to_string(), Box::new(builder));
    }

    pub fn names(&self) -> Vec<&str> {
        self.builders.keys().map(|s| s.as_str()).collect()
    }

    /// Creates a chart from a spec string `name` or `name:p1,p2,...`.
    pub fn create(&self, spec: &str) -> Result<Arc<dyn Chart>> {
        let (name, args) = match spec.split_once(':') {
            Some((n, rest)) => {
                let args: std::result::Result<Vec<f64>, _> =
                    rest.split(',').map(|s| s.trim().parse::<f64>()).collect();
                let args = args.map_err(|_| {
                    Error::InvalidParameter(format!("cannot parse chart parameters in `{spec}`"))
                })?;
                (n, args)
            }
            None => (spec, Vec::new()),
        };
        let builder = self.builders.get(name).ok_or_else(|| {
            Error::UnknownName(format!(
                "chart `{name}` (known: {})",
                self.builders
                    .keys()
                    .cloned()
                    .collect::<Vec<_>>()
                    .join(", ")
            ))
        })?;
        builder(&args)
    }
}

/// Boundary coefficient record at one collar angle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundaryCoeffs {
    pub l1: f64,
    pub l2: f64,
    pub a: f64,
    pub c: f64,
    pub e: f64,
    pub r: f64,
    pub i: f64,
    pub f: f64,
    pub m: f64,
    /// `< d(nu)/d(rho), d(gamma0)/d(rho) >`, the extra inner product that
    /// multiplies the quadratic boundary terms.
    pub p: f64,
}

/// Boundary condition closure used when applying surface operators at the
/// outer ring.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RobinBc {
    /// `df/dtau + beta I f = 0` with `tau` the inward normal of the disk.
    Robin { beta: f64 },
    /// No condition: one-sided extrapolation of the flux (for applying the
    /// operator to fields that satisfy no particular boundary condition).
    OneSided,
}

/// A chart together with fields sampled on a fixed polar grid and the
/// discrete surface operators. Immutable after construction.
pub struct ChartData {
    pub chart: Arc<dyn Chart>,
    pub grid: Arc<PolarGrid>,
    /// Conformal factor squared.
    pub hslash2: DiskField,
    /// `|A|^2 = k1^2 + k2^2`.
    pub a2: DiskField,
    /// Mean curvature `k1 + k2`.
    pub mean_curvature: DiskField,
    /// Radial profile of `hslash^2` (theta-average).
    pub hslash2_radial: Vec<f64>,
    /// Radial profile of `|A|^2`.
    pub a2_radial: Vec<f64>,
    /// Boundary tables at the grid's theta nodes.
    pub boundary: Vec<BoundaryCoeffs>,
    /// Fields `<q1, d gamma0/dy_j> / hslash^2` used by the q1-drift operator.
    pub q1_coeff: [DiskField; 2],
    /// Max isothermal defect observed while sampling.
    pub isothermal_residual: f64,
    /// Max `| |nu| - 1 |` and tangency defect of the normal.
    pub normal_residual: f64,
    /// Max collar orthogonality defect at rho = 0.
    pub collar_residual: f64,
    /// Whether all operator coefficients are theta-independent on the grid.
    pub rotationally_symmetric: bool,
}

const FD_STEP: f64 = 1e-4;

fn sub3(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn dot3(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn scale3(a: [f64; 3], s: f64) -> [f64; 3] {
    [a[0] * s, a[1] * s, a[2] * s]
}

fn norm3(a: [f64; 3]) -> f64 {
    dot3(a, a).sqrt()
}

/// Central difference of a vector map.
fn central3(f: impl Fn(f64) -> [f64; 3], t: f64, h: f64) -> [f64; 3] {
    scale3(sub3(f(t + h), f(t - h)), 0.5 / h)
}

/// Second central difference of a vector map.
fn second3(f: impl Fn(f64) -> [f64; 3], t: f64, h: f64) -> [f64; 3] {
    let a = f(t + h);
    let b = f(t);
    let c = f(t - h);
    [
        (a[0] - 2.0 * b[0] + c[0]) / (h * h),
        (a[1] - 2.0 * b[1] + c[1]) / (h * h),
        (a[2] - 2.0 * b[2] + c[2]) / (h * h),
    ]
}

/// Collar parametrization of the disk near its boundary:
/// `y(theta, rho) = (1 - rho)(cos theta, sin theta)`.
pub fn collar_point(theta: f64, rho: f64) -> [f64; 2] {
    let (s, c) = theta.sin_cos();
    [(1.0 - rho) * c, (1.0 - rho) * s]
}

impl ChartData {
    pub fn new(chart: Arc<dyn Chart>, grid: Arc<PolarGrid>) -> Result<Self> {
        let fermi = FermiMap::new(chart.clone());

        let mut hslash2 = DiskField::zeros(&grid);
        let mut a2 = DiskField::zeros(&grid);
        let mut mean = DiskField::zeros(&grid);
        let mut q1c0 = DiskField::zeros(&grid);
        let mut q1c1 = DiskField::zeros(&grid);
        let mut iso_res = 0.0f64;
        let mut nrm_res = 0.0f64;

        for i in 0..grid.n_r {
            for j in 0..grid.n_theta {
                let y = grid.node(i, j);
                let h2 = chart.hslash(y).powi(2);
                let (k1, k2) = chart.principal_curvatures(y);
                let idx = grid.idx(i, j);
                hslash2.data[idx] = h2;
                a2.data[idx] = k1 * k1 + k2 * k2;
                mean.data[idx] = k1 + k2;

                let t1 = central3(|t| chart.gamma0([t, y[1]]), y[0], FD_STEP);
                let t2 = central3(|t| chart.gamma0([y[0], t]), y[1], FD_STEP);
                let nu = chart.normal(y);
                iso_res = iso_res
                    .max((dot3(t1, t1) - h2).abs())
                    .max((dot3(t2, t2) - h2).abs())
                    .max(dot3(t1, t2).abs());
                nrm_res = nrm_res
                    .max((norm3(nu) - 1.0).abs())
                    .max(dot3(nu, t1).abs())
                    .max(dot3(nu, t2).abs());

                let q1 = fermi.q1(y);
                q1c0.data[idx] = dot3(q1, t1) / h2;
                q1c1.data[idx] = dot3(q1, t2) / h2;
            }
        }

        let mut boundary = Vec::with_capacity(grid.n_theta);
        let mut collar_res = 0.0f64;
        for j in 0..grid.n_theta {
            let (coeffs, defect) = boundary_coeffs_at(&*chart, &fermi, grid.theta[j])?;
            collar_res = collar_res.max(defect);
            boundary.push(coeffs);
        }

        // Radial profiles and the rotational-symmetry flag.
        let mut hslash2_radial = vec![0.0; grid.n_r];
        let mut a2_radial = vec![0.0; grid.n_r];
        let mut rot = true;
        for i in 0..grid.n_r {
            let row = i * grid.n_theta;
            let h_avg: f64 =
                hslash2.data[row..row + grid.n_theta].iter().sum::<f64>() / grid.n_theta as f64;
            let a_avg: f64 =
                a2.data[row..row + grid.n_theta].iter().sum::<f64>() / grid.n_theta as f64;
            hslash2_radial[i] = h_avg;
            a2_radial[i] = a_avg;
            for j in 0..grid.n_theta {
                if (hslash2.data[row + j] - h_avg).abs() > 1e-10 * h_avg.abs().max(1.0)
                    || (a2.data[row + j] - a_avg).abs() > 1e-10 * (a_avg.abs() + 1.0)
                {
                    rot = false;
                }
            }
        }
        let i0 = boundary[0].i;
        if boundary.iter().any(|b| (b.i - i0).abs() > 1e-10) {
            rot = false;
        }

        Ok(ChartData {
            chart,
            grid,
            hslash2,
            a2,
            mean_curvature: mean,
            hslash2_radial,
            a2_radial,
            boundary,
            q1_coeff: [q1c0, q1c1],
            isothermal_residual: iso_res,
            normal_residual: nrm_res,
            collar_residual: collar_res,
            rotationally_symmetric: rot,
        })
    }

    /// Boundary interaction coefficient at theta node `j`.
    pub fn robin_i(&self, j: usize) -> f64 {
        self.boundary[j].i
    }

    /// Constant boundary coefficient, available when the chart is
    /// rotationally symmetric.
    pub fn robin_i_constant(&self) -> Result<f64> {
        if !self.rotationally_symmetric {
            return Err(Error::InvalidParameter(
                "chart coefficients vary with theta; mode-decoupled solves are unavailable".into(),
            ));
        }
        Ok(self.boundary[0].i)
    }

    /// Surface area of the chart image.
    pub fn area(&self) -> f64 {
        let g = &self.grid;
        let mut s = 0.0;
        for i in 0..g.n_r {
            let row = i * g.n_theta;
            for j in 0..g.n_theta {
                s += self.hslash2.data[row + j] * g.cell_weight(i);
            }
        }
        s
    }

    /// Weighted L2 inner product with the surface measure `hslash^2 dy`.
    pub fn inner_product(&self, f: &DiskField, g: &DiskField) -> f64 {
        let gr = &self.grid;
        let mut s = 0.0;
        for i in 0..gr.n_r {
            let row = i * gr.n_theta;
            for j in 0..gr.n_theta {
                s += f.data[row + j] * g.data[row + j] * self.hslash2.data[row + j]
                    * gr.cell_weight(i);
            }
        }
        s
    }

    /// Discrete Laplace-Beltrami operator applied to a field, with the
    /// chosen closure at the outer ring. Finite-volume in `r`, central in
    /// `theta`; the flux through `r = 0` vanishes identically.
    pub fn laplace_beltrami(&self, f: &DiskField, bc: RobinBc) -> DiskField {
        let g = &self.grid;
        let n_r = g.n_r;
        let n_t = g.n_theta;
        let h = g.h_r;
        let ht = g.h_theta;
        let mut out = DiskField::zeros(&self.grid);
        for i in 0..n_r {
            let r_in = i as f64 * h;
            let r_out = (i + 1) as f64 * h;
            let r_c = g.r[i];
            for j in 0..n_t {
                let jm = (j + n_t - 1) % n_t;
                let jp = (j + 1) % n_t;
                let fc = f.at(i, j);
                // Radial fluxes r * df/dr through the two faces.
                let flux_in = if i == 0 {
                    0.0
                } else {
                    r_in * (fc - f.at(i - 1, j)) / h
                };
                let flux_out = if i + 1 < n_r {
                    r_out * (f.at(i + 1, j) - fc) / h
                } else {
                    match bc {
                        RobinBc::Robin { beta } => {
                            // -f'(1) + beta I f(1) = 0 with
                            // f(1) ~ f_{N-1} + (h/2) f'(1).
                            let bi = beta * self.boundary[j].i;
                            r_out * bi * fc / (1.0 - 0.5 * bi * h)
                        }
                        RobinBc::OneSided => {
                            let d = 2.0 * f.at(n_r - 1, j) - 3.0 * f.at(n_r - 2, j)
                                + f.at(n_r - 3, j);
                            r_out * d / h
                        }
                    }
                };
                let radial = (flux_out - flux_in) / (r_c * h);
                let angular = (f.at(i, jp) - 2.0 * fc + f.at(i, jm)) / (r_c * r_c * ht * ht);
                *out.at_mut(i, j) = (radial + angular) / self.hslash2.at(i, j);
            }
        }
        out
    }

    /// The drift operator `(1/hslash^2) sum_j <q1, dgamma0/dy_j> d/dy_j`
    /// applied to a field.
    pub fn grad_q1(&self, f: &DiskField) -> DiskField {
        let (dr, dt) = self.polar_gradient(f);
        let g = &self.grid;
        let mut out = DiskField::zeros(&self.grid);
        for i in 0..g.n_r {
            for j in 0..g.n_theta {
                let (s, c) = g.theta[j].sin_cos();
                let idx = g.idx(i, j);
                let fr = dr.data[idx];
                let ft = dt.data[idx] / g.r[i];
                // Cartesian parameter-space gradient.
                let fy1 = c * fr - s * ft;
                let fy2 = s * fr + c * ft;
                out.data[idx] =
                    self.q1_coeff[0].data[idx] * fy1 + self.q1_coeff[1].data[idx] * fy2;
            }
        }
        out
    }

    /// Polar gradient `(df/dr, df/dtheta)` by central differences; one-sided
    /// at the outer ring, across-the-pole central at the inner ring.
    pub fn polar_gradient(&self, f: &DiskField) -> (DiskField, DiskField) {
        let g = &self.grid;
        let n_r = g.n_r;
        let n_t = g.n_theta;
        let h = g.h_r;
        let ht = g.h_theta;
        let mut dr = DiskField::zeros(&self.grid);
        let mut dt = DiskField::zeros(&self.grid);
        for i in 0..n_r {
            for j in 0..n_t {
                let jm = (j + n_t - 1) % n_t;
                let jp = (j + 1) % n_t;
                let idx = g.idx(i, j);
                dt.data[idx] = (f.at(i, jp) - f.at(i, jm)) / (2.0 * ht);
                dr.data[idx] = if i == 0 {
                    // Mirror across the pole: f(-r, theta) = f(r, theta+pi).
                    let mirror = f.at(0, (j + n_t / 2) % n_t);
                    (f.at(1, j) - mirror) / (2.0 * h)
                } else if i + 1 < n_r {
                    (f.at(i + 1, j) - f.at(i - 1, j)) / (2.0 * h)
                } else {
                    (1.5 * f.at(i, j) - 2.0 * f.at(i - 1, j) + 0.5 * f.at(i - 2, j)) / h
                };
            }
        }
        (dr, dt)
    }
}

/// Boundary coefficients at one angle, by central differences of the chart
/// maps along the collar directions, plus the collar orthogonality defect.
fn boundary_coeffs_at(
    chart: &dyn Chart,
    fermi: &FermiMap,
    theta: f64,
) -> Result<(BoundaryCoeffs, f64)> {
    let h = FD_STEP;
    let g_t = |t: f64| chart.gamma0(collar_point(t, 0.0));
    let g_r = |rho: f64| chart.gamma0(collar_point(theta, rho));
    let nu_t = |t: f64| chart.normal(collar_point(t, 0.0));
    let nu_r = |rho: f64| chart.normal(collar_point(theta, rho));

    let d_theta = central3(g_t, theta, h);
    let d_rho = central3(g_r, 0.0, h);
    let dd_theta = second3(g_t, theta, h);
    let dd_rho = second3(g_r, 0.0, h);
    // Mixed second derivative d^2 gamma0 / dtheta drho by nested central
    // differences.
    let cross = {
        let f = |t: f64, rho: f64| chart.gamma0(collar_point(t, rho));
        let a = f(theta + h, h);
        let b = f(theta + h, -h);
        let c = f(theta - h, h);
        let d = f(theta - h, -h);
        [
            (a[0] - b[0] - c[0] + d[0]) / (4.0 * h * h),
            (a[1] - b[1] - c[1] + d[1]) / (4.0 * h * h),
            (a[2] - b[2] - c[2] + d[2]) / (4.0 * h * h),
        ]
    };
    let dnu_theta = central3(nu_t, theta, h);
    let dnu_rho = central3(nu_r, 0.0, h);

    let l1 = norm3(d_theta);
    let l2 = norm3(d_rho);
    if !(l1 > 0.0 && l2 > 0.0) {
        return Err(Error::Inconsistency(format!(
            "degenerate collar frame at theta = {theta:.4}: l1 = {l1:.3e}, l2 = {l2:.3e}"
        )));
    }
    let collar_defect = dot3(d_theta, d_rho).abs() / (l1 * l2);
    if collar_defect > 1e-6 {
        return Err(Error::Inconsistency(format!(
            "collar orthogonality violated at theta = {theta:.4}: <t_theta, t_rho> = {:.3e}",
            dot3(d_theta, d_rho)
        )));
    }

    let q1 = fermi.q1(collar_point(theta, 0.0));
    let i_geom = dot3(q1, d_rho);
    let i = chart.robin_coefficient(theta).unwrap_or(i_geom);

    Ok((
        BoundaryCoeffs {
            l1,
            l2,
            a: dot3(dd_rho, d_rho),
            c: dot3(cross, d_theta),
            e: dot3(cross, d_rho),
            r: dot3(dd_theta, d_theta),
            i,
            f: dot3(q1, d_theta),
            m: dot3(d_theta, dnu_rho) + dot3(d_rho, dnu_theta),
            p: dot3(dnu_rho, d_rho),
        },
        collar_defect,
    ))
}
