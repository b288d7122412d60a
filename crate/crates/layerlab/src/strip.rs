//! Model linear problems on strips, solved by eigenfunction expansion.
//!
//! Two geometries appear:
//!
//! * the boundary collar `{(x, theta, eta)}` with a flat cross-section
//!   metric `(l1, l2)`, theta-period `2 pi` in the slow angle and `eta` in
//!   `[0, H]` capped by a homogeneous Neumann wall — Fourier modes in theta
//!   and cosine modes in eta reduce everything to shifted 1D solves in `x`;
//! * the full cylinder over the scaled chart, whose cross-section modes are
//!   the Neumann eigenfunctions of the disk — used by the projected solver
//!   with multiplier fields.
//!
//! Inhomogeneous Neumann data is carried by an explicit lift `G(x,theta)
//! zeta(eta)` with `zeta(eta) = eta exp(-eta)`, so the eta-derivative of a
//! strip solution at the wall reproduces its data exactly.

use crate::chart::ChartData;
use crate::error::{Error, Result};
use crate::grid::{dot, solve_bordered};
use crate::polar::{boundary_modes, DiskField, ThetaModes};
use crate::profile::ProfileTable;
use crate::spectrum::{PotentialKind, RobinOperatorDisc};
use rayon::prelude::*;
use std::sync::Arc;

/// The lift profile and its second derivative.
fn zeta(eta: f64) -> f64 {
    eta * (-eta).exp()
}
fn zeta_pp(eta: f64) -> f64 {
    (eta - 2.0) * (-eta).exp()
}

/// Geometry and discretization of a collar strip problem.
#[derive(Clone)]
pub struct StripContext {
    pub profile: Arc<ProfileTable>,
    /// Cross-section metric coefficients (must be theta-constant).
    pub l1: f64,
    pub l2: f64,
    /// Scale of slow-theta wavenumbers inside the fast equation (epsilon in
    /// the layer construction, 1 for the model problems).
    pub theta_scale: f64,
    pub n_theta: usize,
    /// Truncation height of the half-infinite eta direction.
    pub h_cap: f64,
    pub n_eta_modes: usize,
    pub n_eta: usize,
}

impl StripContext {
    pub fn new(
        profile: Arc<ProfileTable>,
        l1: f64,
        l2: f64,
        theta_scale: f64,
        n_theta: usize,
        h_cap: f64,
        n_eta_modes: usize,
    ) -> Result<Self> {
        if !(l1 > 0.0 && l2 > 0.0) {
            return Err(Error::InvalidParameter(
                "cross-section coefficients must be positive".into(),
            ));
        }
        if h_cap < 10.0 {
            return Err(Error::InvalidParameter(format!(
                "eta cap {h_cap} too small; the truncated wall needs H >= 10"
            )));
        }
        if n_theta < 2 || n_theta % 2 != 0 {
            return Err(Error::InvalidParameter(
                "theta resolution must be even and >= 2".into(),
            ));
        }
        let n_eta = (4 * n_eta_modes).max(64);
        Ok(StripContext {
            profile,
            l1,
            l2,
            theta_scale,
            n_theta,
            h_cap,
            n_eta_modes,
            n_eta,
        })
    }

    /// Midpoint eta nodes (exact discrete cosine orthogonality).
    pub fn eta_nodes(&self) -> Vec<f64> {
        let h = self.h_cap / self.n_eta as f64;
        (0..self.n_eta).map(|i| (i as f64 + 0.5) * h).collect()
    }

    fn cos_j(&self, j: usize, eta: f64) -> f64 {
        (j as f64 * std::f64::consts::PI * eta / self.h_cap).cos()
    }

    /// Cross-section shift of the (k, j) mode.
    fn shift(&self, k: usize, j: usize) -> f64 {
        let a = self.theta_scale * k as f64 / self.l1;
        let b = j as f64 * std::f64::consts::PI / (self.h_cap * self.l2);
        a * a + b * b
    }

    /// Cosine coefficients of the lift profile and its second derivative.
    fn lift_coefficients(&self) -> (Vec<f64>, Vec<f64>) {
        let nodes = self.eta_nodes();
        let n = self.n_eta as f64;
        let mut zc = vec![0.0; self.n_eta_modes];
        let mut zppc = vec![0.0; self.n_eta_modes];
        for j in 0..self.n_eta_modes {
            let norm = if j == 0 { 1.0 / n } else { 2.0 / n };
            let mut a = 0.0;
            let mut b = 0.0;
            for &eta in &nodes {
                let c = self.cos_j(j, eta);
                a += zeta(eta) * c;
                b += zeta_pp(eta) * c;
            }
            zc[j] = norm * a;
            zppc[j] = norm * b;
        }
        (zc, zppc)
    }
}

/// Data of one active angular mode: Neumann trace `g(x)` and interior terms
/// `h[j](x)` per eta-cosine mode.
#[derive(Clone)]
pub struct StripModeData {
    pub k: usize,
    pub sin: bool,
    pub g: Vec<f64>,
    pub h: Vec<Vec<f64>>,
}

/// Right-hand data of a strip problem in angular-mode space. Only modes that
/// actually carry data need to be present.
#[derive(Clone, Default)]
pub struct StripData {
    pub modes: Vec<StripModeData>,
}

impl StripData {
    /// Builds data from point evaluators on the full grid, keeping angular
    /// modes above a relative floor.
    pub fn from_fn(
        ctx: &StripContext,
        mut g: impl FnMut(f64, f64) -> f64,
        mut h: impl FnMut(f64, f64, f64) -> f64,
    ) -> Self {
        let x = &ctx.profile.grid.x;
        let nt = ctx.n_theta;
        let thetas: Vec<f64> = (0..nt)
            .map(|j| std::f64::consts::TAU * j as f64 / nt as f64)
            .collect();
        let etas = ctx.eta_nodes();
        let n_eta = ctx.n_eta as f64;

        // Angular analysis of G and of each eta-cosine coefficient of h.
        let k_max = nt / 2 - 1;
        let mut modes = Vec::new();
        let g_samples: Vec<Vec<f64>> = x
            .iter()
            .map(|&xi| thetas.iter().map(|&t| g(xi, t)).collect())
            .collect();
        // h analyzed eta-first for each (x, theta).
        let mut h_cos: Vec<Vec<Vec<f64>>> =
            vec![vec![vec![0.0; nt]; x.len()]; ctx.n_eta_modes];
        for (ix, &xi) in x.iter().enumerate() {
            for (jt, &t) in thetas.iter().enumerate() {
                let col: Vec<f64> = etas.iter().map(|&e| h(xi, t, e)).collect();
                for j in 0..ctx.n_eta_modes {
                    let norm = if j == 0 { 1.0 / n_eta } else { 2.0 / n_eta };
                    let mut acc = 0.0;
                    for (ke, &e) in etas.iter().enumerate() {
                        acc += col[ke] * ctx.cos_j(j, e);
                    }
                    h_cos[j][ix][jt] = norm * acc;
                }
            }
        }
        for k in 0..=k_max {
            for sin in [false, true] {
                if sin && k == 0 {
                    continue;
                }
                let norm = if k == 0 { 1.0 / nt as f64 } else { 2.0 / nt as f64 };
                let trig: Vec<f64> = thetas
                    .iter()
                    .map(|&t| {
                        let a = k as f64 * t;
                        if sin {
                            a.sin()
                        } else {
                            a.cos()
                        }
                    })
                    .collect();
                let gk: Vec<f64> = g_samples
                    .iter()
                    .map(|row| norm * dot(row, &trig))
                    .collect();
                let hk: Vec<Vec<f64>> = (0..ctx.n_eta_modes)
                    .map(|j| {
                        (0..x.len())
                            .map(|ix| norm * dot(&h_cos[j][ix], &trig))
                            .collect()
                    })
                    .collect();
                let g_top = gk.iter().fold(0.0f64, |m, v| m.max(v.abs()));
                let h_top = hk
                    .iter()
                    .flat_map(|v| v.iter())
                    .fold(0.0f64, |m, v| m.max(v.abs()));
                if g_top > 1e-14 || h_top > 1e-14 {
                    modes.push(StripModeData {
                        k,
                        sin,
                        g: gk,
                        h: hk,
                    });
                }
            }
        }
        StripData { modes }
    }
}

/// One solved angular mode: the lift trace and the cosine coefficients of
/// the homogeneous-Neumann part.
#[derive(Clone)]
pub struct StripSolutionMode {
    pub k: usize,
    pub sin: bool,
    pub g: Vec<f64>,
    /// psi[j][ix]: eta-cosine coefficients.
    pub psi: Vec<Vec<f64>>,
}

/// A strip solution `phi = G(x,theta) zeta(eta) + psi(x,theta,eta)` with
/// homogeneous-Neumann `psi` stored in cosine modes.
#[derive(Clone)]
pub struct StripSolution {
    pub ctx: StripContext,
    pub modes: Vec<StripSolutionMode>,
}

impl StripSolution {
    fn angular(&self, mode: &StripSolutionMode, theta: f64) -> f64 {
        let a = mode.k as f64 * theta;
        if mode.sin {
            a.sin()
        } else {
            a.cos()
        }
    }

    /// Point evaluation at (x-node ix, theta, eta).
    pub fn eval(&self, ix: usize, theta: f64, eta: f64) -> f64 {
        let mut v = 0.0;
        for mode in &self.modes {
            let ang = self.angular(mode, theta);
            let mut s = mode.g[ix] * zeta(eta);
            for (j, cj) in mode.psi.iter().enumerate() {
                s += cj[ix] * self.ctx.cos_j(j, eta);
            }
            v += s * ang;
        }
        v
    }

    /// Trace at eta = 0 (the lift vanishes there).
    pub fn trace0(&self, ix: usize, theta: f64) -> f64 {
        let mut v = 0.0;
        for mode in &self.modes {
            let ang = self.angular(mode, theta);
            let s: f64 = mode.psi.iter().map(|cj| cj[ix]).sum();
            v += s * ang;
        }
        v
    }

    /// Eta-derivative at eta = 0; exactly the Neumann data by construction
    /// of the lift.
    pub fn deta_trace0(&self, ix: usize, theta: f64) -> f64 {
        self.modes
            .iter()
            .map(|m| m.g[ix] * self.angular(m, theta))
            .sum()
    }

    /// Theta-derivative of the trace at eta = 0 (slow angle).
    pub fn dtheta_trace0(&self, ix: usize, theta: f64) -> f64 {
        let mut v = 0.0;
        for mode in &self.modes {
            let a = mode.k as f64 * theta;
            let dang = if mode.sin {
                mode.k as f64 * a.cos()
            } else {
                -(mode.k as f64) * a.sin()
            };
            let s: f64 = mode.psi.iter().map(|cj| cj[ix]).sum();
            v += s * dang;
        }
        v
    }

    /// Max-norm over x of the w_x and Z projections of the solution,
    /// sampled on the eta nodes (inherited-orthogonality diagnostic).
    pub fn orthogonality_defect(&self) -> f64 {
        let p = &self.ctx.profile;
        let mut worst = 0.0f64;
        for mode in &self.modes {
            // Project each eta-cosine coefficient and the lift.
            let gw = p.grid.integrate_product(&mode.g, &p.w_x).abs();
            let gz = p.grid.integrate_product(&mode.g, &p.z).abs();
            worst = worst.max(gw).max(gz);
            for cj in &mode.psi {
                let pw = p.grid.integrate_product(cj, &p.w_x).abs();
                let pz = p.grid.integrate_product(cj, &p.z).abs();
                worst = worst.max(pw).max(pz);
            }
        }
        worst
    }

    pub fn max_abs(&self) -> f64 {
        let mut worst = 0.0f64;
        for mode in &self.modes {
            for v in &mode.g {
                worst = worst.max(v.abs());
            }
            for cj in &mode.psi {
                for v in cj {
                    worst = worst.max(v.abs());
                }
            }
        }
        worst
    }
}

/// Diagnostics attached to a strip solve.
pub struct StripSolve {
    pub solution: StripSolution,
    /// Max-norm residual over the 1D mode systems.
    pub residual: f64,
    /// Largest |multiplier| used by the constrained step (zero for the
    /// shifted solve).
    pub multiplier_max: f64,
}

fn check_orthogonal_data(ctx: &StripContext, data: &StripData) -> Result<()> {
    let p = &ctx.profile;
    for mode in &data.modes {
        let gw = p.grid.integrate_product(&mode.g, &p.w_x);
        let gz = p.grid.integrate_product(&mode.g, &p.z);
        let scale = mode.g.iter().fold(1e-30f64, |m, v| m.max(v.abs()));
        if gw.abs() > 1e-8 * scale.max(1.0) {
            return Err(Error::OrthogonalityViolated {
                context: format!("int G w_x in theta-mode {}", mode.k),
                value: gw,
            });
        }
        if gz.abs() > 1e-8 * scale.max(1.0) {
            return Err(Error::OrthogonalityViolated {
                context: format!("int G Z in theta-mode {}", mode.k),
                value: gz,
            });
        }
    }
    Ok(())
}

/// Per-mode right-hand sides of the lifted problem:
/// `rhs_kj = h_kj - [(L - sigma_k) g_k] zeta_j - g_k zeta''_j / l2^2`,
/// where `sigma_k` is the angular part of the shift plus the zeroth-order
/// shift of the operator being solved.
fn lifted_rhs(
    ctx: &StripContext,
    mode: &StripModeData,
    extra_shift: f64,
    zc: &[f64],
    zppc: &[f64],
) -> Vec<Vec<f64>> {
    let p = &ctx.profile;
    let n = p.grid.n;
    let lg = p.apply_operator(&mode.g);
    let ang = {
        let a = ctx.theta_scale * mode.k as f64 / ctx.l1;
        a * a
    };
    let mut out = Vec::with_capacity(ctx.n_eta_modes);
    for j in 0..ctx.n_eta_modes {
        let mut rhs = vec![0.0; n];
        for i in 0..n {
            let lift_term = (lg[i] - (ang + extra_shift) * mode.g[i]) * zc[j]
                + mode.g[i] * zppc[j] / (ctx.l2 * ctx.l2);
            rhs[i] = mode.h.get(j).map_or(0.0, |hj| hj[i]) - lift_term;
        }
        out.push(rhs);
    }
    out
}

/// Solves the K-shifted model problem with Neumann data `G` (and optional
/// interior data): `phi_xx + (1/l1^2) phi_tt + (1/l2^2) phi_ee - K phi +
/// p w^{p-1} phi = h`, `phi_eta = G` at `eta = 0`. Requires
/// `K > lambda0 + 1` and data orthogonal to `w_x` and `Z`.
pub fn solve_model_neumann(ctx: &StripContext, data: &StripData, k_shift: f64) -> Result<StripSolve> {
    if k_shift <= ctx.profile.lambda0 + 1.0 {
        return Err(Error::InvalidParameter(format!(
            "shift K = {k_shift} must exceed lambda0 + 1 = {}",
            ctx.profile.lambda0 + 1.0
        )));
    }
    check_orthogonal_data(ctx, data)?;
    solve_inner(ctx, data, k_shift, false)
}

/// Solves the unshifted problem with the two orthogonality constraints,
/// following the two-step construction: a K-shifted Neumann solve absorbs
/// the data, then a homogeneous-Neumann constrained solve corrects it with
/// right-hand side `h + (1 - K) phi^0`.
pub fn solve_with_orthogonality(ctx: &StripContext, data: &StripData) -> Result<StripSolve> {
    check_orthogonal_data(ctx, data)?;
    let k_shift = ctx.profile.lambda0 + 2.0;
    // The shifted solve sees the Neumann data only, so its orthogonality is
    // inherited from G; interior terms go through the constrained step.
    let data1 = StripData {
        modes: data
            .modes
            .iter()
            .map(|m| StripModeData {
                k: m.k,
                sin: m.sin,
                g: m.g.clone(),
                h: Vec::new(),
            })
            .collect(),
    };
    let step1 = solve_inner(ctx, &data1, k_shift, false)?;
    // Step 2 data: homogeneous Neumann, rhs h + (1 - K) phi0, constrained.
    let mut data2 = StripData::default();
    for (dm, sm) in data.modes.iter().zip(&step1.solution.modes) {
        let mut h2 = Vec::with_capacity(ctx.n_eta_modes);
        // phi0 in cosine modes: lift g*zeta + psi.
        let (zc, _) = ctx.lift_coefficients();
        for j in 0..ctx.n_eta_modes {
            let mut hj = vec![0.0; ctx.profile.grid.n];
            for i in 0..ctx.profile.grid.n {
                let phi0 = sm.g[i] * zc[j] + sm.psi[j][i];
                hj[i] = dm.h.get(j).map_or(0.0, |v| v[i]) + (1.0 - k_shift) * phi0;
            }
            h2.push(hj);
        }
        data2.modes.push(StripModeData {
            k: dm.k,
            sin: dm.sin,
            g: vec![0.0; ctx.profile.grid.n],
            h: h2,
        });
    }
    let step2 = solve_inner(ctx, &data2, 1.0, true)?;
    // Combine: same lift as step 1, psi = psi0 + psi_corr.
    let mut modes = Vec::with_capacity(step1.solution.modes.len());
    for (m1, m2) in step1.solution.modes.iter().zip(&step2.solution.modes) {
        let mut psi = m1.psi.clone();
        for (j, cj) in m2.psi.iter().enumerate() {
            for (i, v) in cj.iter().enumerate() {
                psi[j][i] += v;
            }
        }
        modes.push(StripSolutionMode {
            k: m1.k,
            sin: m1.sin,
            g: m1.g.clone(),
            psi,
        });
    }
    Ok(StripSolve {
        solution: StripSolution {
            ctx: ctx.clone(),
            modes,
        },
        residual: step1.residual.max(step2.residual),
        multiplier_max: step2.multiplier_max,
    })
}

/// Shared mode loop. `constrained` switches between the plain shifted solve
/// (`K = k_shift`) and the doubly-constrained solve at `K = 1`.
fn solve_inner(
    ctx: &StripContext,
    data: &StripData,
    k_shift: f64,
    constrained: bool,
) -> Result<StripSolve> {
    let p = &ctx.profile;
    let n = p.grid.n;
    let (zc, zppc) = ctx.lift_coefficients();

    let results: Vec<Result<(StripSolutionMode, f64, f64)>> = data
        .modes
        .par_iter()
        .map(|mode| {
            let rhs_all = lifted_rhs(ctx, mode, k_shift - 1.0, &zc, &zppc);
            let mut psi = Vec::with_capacity(ctx.n_eta_modes);
            let mut residual = 0.0f64;
            let mut mult = 0.0f64;
            for (j, rhs) in rhs_all.iter().enumerate() {
                let shift = ctx.shift(mode.k, j) + (k_shift - 1.0);
                let interior: Vec<f64> = rhs[1..n - 1].to_vec();
                let (sol, c, d) = if constrained {
                    let s = solve_constrained_1d(p, shift, &interior)?;
                    (s.0, s.1, s.2)
                } else {
                    let op = shifted_operator(p, shift);
                    let sol = solve_bordered(
                        &op.0, &op.1, &op.0, &[], &[], &interior, &[], true,
                    )?;
                    (sol.x, 0.0, 0.0)
                };
                // Residual of this mode system.
                let op = shifted_operator(p, shift);
                for i in 0..n - 2 {
                    let mut r = op.1[i] * sol[i] - interior[i];
                    if i > 0 {
                        r += op.0[i - 1] * sol[i - 1];
                    }
                    if i + 1 < n - 2 {
                        r += op.0[i] * sol[i + 1];
                    }
                    r -= c * p.w_x[i + 1] + d * p.z[i + 1];
                    residual = residual.max(r.abs());
                }
                mult = mult.max(c.abs()).max(d.abs());
                let mut full = vec![0.0; n];
                full[1..n - 1].copy_from_slice(&sol);
                psi.push(full);
            }
            Ok((
                StripSolutionMode {
                    k: mode.k,
                    sin: mode.sin,
                    g: mode.g.clone(),
                    psi,
                },
                residual,
                mult,
            ))
        })
        .collect();

    let mut modes = Vec::new();
    let mut residual = 0.0f64;
    let mut multiplier_max = 0.0f64;
    for r in results {
        let (m, res, mult) = r?;
        residual = residual.max(res);
        multiplier_max = multiplier_max.max(mult);
        modes.push(m);
    }
    Ok(StripSolve {
        solution: StripSolution {
            ctx: ctx.clone(),
            modes,
        },
        residual,
        multiplier_max,
    })
}

/// Interior tridiagonal of `L - shift` (Dirichlet truncation).
fn shifted_operator(p: &ProfileTable, shift: f64) -> (Vec<f64>, Vec<f64>) {
    let n = p.grid.n;
    let h2 = p.grid.h * p.grid.h;
    let mut diag = Vec::with_capacity(n - 2);
    for i in 1..n - 1 {
        diag.push(-2.0 / h2 - 1.0 + p.params.p * p.w[i].powf(p.params.p - 1.0) - shift);
    }
    let off = vec![1.0 / h2; n - 3];
    (off, diag)
}

/// Constrained 1D solve: `(L - shift) phi = rhs + c w_x + d Z` with
/// `int phi w_x = int phi Z = 0`.
fn solve_constrained_1d(
    p: &ProfileTable,
    shift: f64,
    rhs: &[f64],
) -> Result<(Vec<f64>, f64, f64)> {
    let n = p.grid.n;
    let (off, diag) = shifted_operator(p, shift);
    let weights = p.grid.weights();
    let spikes = vec![
        p.w_x[1..n - 1].iter().map(|v| -v).collect::<Vec<f64>>(),
        p.z[1..n - 1].iter().map(|v| -v).collect::<Vec<f64>>(),
    ];
    let cons = vec![
        (1..n - 1).map(|i| weights[i] * p.w_x[i]).collect::<Vec<f64>>(),
        (1..n - 1).map(|i| weights[i] * p.z[i]).collect::<Vec<f64>>(),
    ];
    let sol = solve_bordered(&off, &diag, &off, &spikes, &cons, rhs, &[0.0, 0.0], true)?;
    Ok((sol.x, sol.multipliers[0], sol.multipliers[1]))
}

// ---------------------------------------------------------------------------
// The projected solver on the cylinder over the scaled chart.
// ---------------------------------------------------------------------------

/// Field on the tensor grid (profile x-grid) x (chart polar grid).
pub struct CylinderField {
    pub n_x: usize,
    pub grid: Arc<crate::polar::PolarGrid>,
    pub data: Vec<f64>,
}

impl CylinderField {
    pub fn zeros(n_x: usize, grid: &Arc<crate::polar::PolarGrid>) -> Self {
        CylinderField {
            n_x,
            grid: grid.clone(),
            data: vec![0.0; n_x * grid.len()],
        }
    }

    #[inline]
    pub fn at(&self, ix: usize, i: usize, j: usize) -> f64 {
        self.data[ix * self.grid.len() + self.grid.idx(i, j)]
    }

    #[inline]
    pub fn at_mut(&mut self, ix: usize, i: usize, j: usize) -> &mut f64 {
        let k = ix * self.grid.len() + self.grid.idx(i, j);
        &mut self.data[k]
    }
}

/// Output of the projected cylinder solve: the solution, the multiplier
/// fields absorbing the kernel directions, and the constant-in-x projection
/// fields.
pub struct T1Solve {
    pub phi: CylinderField,
    pub c: DiskField,
    pub d: DiskField,
    pub lambda1: DiskField,
    pub lambda2: DiskField,
    pub residual: f64,
}

/// Solves, на the cylinder over the scaled chart,
///
/// ```text
/// phi_xx + Delta^{Gamma_eps} phi - phi + p w^{p-1} phi
///     = h + c(eps z) w_x + d(eps z) Z,
/// d phi / d tau_eps = G  on the boundary,
/// int phi w_x dx = Lambda_1,   int phi Z dx = Lambda_2,
/// ```
///
/// with `Lambda_i` fixed by Neumann problems on the chart driven by the
/// projections of `G` (additive constants fixed by zero mean).
pub fn solve_t1(
    chart: &Arc<ChartData>,
    profile: &Arc<ProfileTable>,
    eps: f64,
    h: &CylinderField,
    g_data: &CylinderBoundaryData,
) -> Result<T1Solve> {
    let grid = &chart.grid;
    let n_x = profile.grid.n;
    if h.n_x != n_x || h.grid.len() != grid.len() {
        return Err(Error::GridMismatch("cylinder rhs grid".into()));
    }
    let op = RobinOperatorDisc::new(chart.clone(), PotentialKind::Zero, 0.0);
    let e2 = eps * eps;

    // Lambda fields from the projections of G.
    let g1: Vec<f64> = (0..grid.n_theta)
        .map(|jt| {
            let col: Vec<f64> = (0..n_x).map(|ix| g_data.values[ix * grid.n_theta + jt]).collect();
            profile.grid.integrate_product(&col, &profile.w_x)
        })
        .collect();
    let g2: Vec<f64> = (0..grid.n_theta)
        .map(|jt| {
            let col: Vec<f64> = (0..n_x).map(|ix| g_data.values[ix * grid.n_theta + jt]).collect();
            profile.grid.integrate_product(&col, &profile.z)
        })
        .collect();
    let lambda1 = neumann_poisson(chart, &op, e2, &g1)?;
    let lambda2 = neumann_poisson(chart, &op, e2, &g2)?;

    // Cross-section eigenbasis per theta mode (Neumann weight beta = 0).
    let k_max = grid.n_theta / 2 - 1;
    let mut radial_basis = Vec::with_capacity(k_max + 1);
    for k in 0..=k_max {
        radial_basis.push(op_radial_eigenbasis(&op, chart, k)?);
    }

    // Analyze h and G into theta modes.
    let mut h_modes: Vec<ThetaModes> = Vec::with_capacity(n_x);
    for ix in 0..n_x {
        let f = DiskField {
            grid: grid.clone(),
            data: h.data[ix * grid.len()..(ix + 1) * grid.len()].to_vec(),
        };
        h_modes.push(ThetaModes::analyze(&f, k_max));
    }
    let mut gk_cos: Vec<Vec<f64>> = vec![vec![0.0; n_x]; k_max + 1];
    let mut gk_sin: Vec<Vec<f64>> = vec![vec![0.0; n_x]; k_max + 1];
    for ix in 0..n_x {
        let row = &g_data.values[ix * grid.n_theta..(ix + 1) * grid.n_theta];
        let (c, s) = boundary_modes(row, k_max);
        for k in 0..=k_max {
            gk_cos[k][ix] = c[k];
            gk_sin[k][ix] = s[k];
        }
    }
    let l1m = ThetaModes::analyze(&lambda1, k_max);
    let l2m = ThetaModes::analyze(&lambda2, k_max);

    let mut phi = CylinderField::zeros(n_x, grid);
    let mut c_field = DiskField::zeros(grid);
    let mut d_field = DiskField::zeros(grid);
    let mut residual = 0.0f64;

    for k in 0..=k_max {
        let basis = &radial_basis[k];
        for sin in [false, true] {
            if sin && k == 0 {
                continue;
            }
            let gk = if sin { &gk_sin[k] } else { &gk_cos[k] };
            let lam1k = if sin { &l1m.sin[k] } else { &l1m.cos[k] };
            let lam2k = if sin { &l2m.sin[k] } else { &l2m.cos[k] };
            for (rho, omega) in basis.pairs.iter() {
                // Project data onto the radial eigenvector.
                let mut h_mu = vec![0.0; n_x];
                for ix in 0..n_x {
                    let coeff = if sin {
                        &h_modes[ix].sin[k]
                    } else {
                        &h_modes[ix].cos[k]
                    };
                    h_mu[ix] = basis.project(coeff, omega);
                }
                let lam1_mu = basis.project(lam1k, omega);
                let lam2_mu = basis.project(lam2k, omega);
                // Boundary data injection: Xi_k(x) = G_k(x)/eps enters the
                // radial row N-1; its omega coefficient scales the 1D rhs.
                let inj = basis.xi_factor * omega[grid.n_r - 1] * basis.weights[grid.n_r - 1];
                let mut rhs = vec![0.0; n_x];
                for ix in 0..n_x {
                    rhs[ix] = h_mu[ix] + e2 * inj * gk[ix] / eps;
                }
                // Solve (L - e2 rho) phi = rhs + c w_x + d Z with the
                // prescribed projections.
                let (sol, c_mu, d_mu, res) = constrained_projection_solve(
                    profile,
                    e2 * rho,
                    &rhs,
                    lam1_mu,
                    lam2_mu,
                )?;
                residual = residual.max(res);
                // Scatter back to the tensor grid.
                for jt in 0..grid.n_theta {
                    let a = k as f64 * grid.theta[jt];
                    let trig = if sin { a.sin() } else { a.cos() };
                    for i in 0..grid.n_r {
                        let w = omega[i] * trig;
                        if w == 0.0 {
                            continue;
                        }
                        for ix in 0..n_x {
                            *phi.at_mut(ix, i, jt) += sol[ix] * w;
                        }
                    }
                    for i in 0..grid.n_r {
                        let w = omega[i] * trig;
                        let idx = grid.idx(i, jt);
                        c_field.data[idx] += c_mu * w;
                        d_field.data[idx] += d_mu * w;
                    }
                }
            }
        }
    }
    Ok(T1Solve {
        phi,
        c: c_field,
        d: d_field,
        lambda1,
        lambda2,
        residual,
    })
}

/// Neumann data for the cylinder solve: values of `d phi / d tau_eps` on
/// (x-node, theta-node).
pub struct CylinderBoundaryData {
    pub n_x: usize,
    pub n_theta: usize,
    pub values: Vec<f64>,
}

impl CylinderBoundaryData {
    pub fn zeros(n_x: usize, n_theta: usize) -> Self {
        CylinderBoundaryData {
            n_x,
            n_theta,
            values: vec![0.0; n_x * n_theta],
        }
    }
}

struct RadialBasis {
    /// (eigenvalue, radial vector) pairs, ascending, orthonormal under the
    /// area weights.
    pairs: Vec<(f64, Vec<f64>)>,
    weights: Vec<f64>,
    xi_factor: f64,
}

impl RadialBasis {
    fn project(&self, f: &[f64], omega: &[f64]) -> f64 {
        let mut s = 0.0;
        for i in 0..f.len() {
            s += f[i] * omega[i] * self.weights[i];
        }
        s
    }
}

fn op_radial_eigenbasis(
    op: &RobinOperatorDisc,
    chart: &Arc<ChartData>,
    k: usize,
) -> Result<RadialBasis> {
    let g = &chart.grid;
    let n = g.n_r;
    let mut pairs = Vec::with_capacity(n);
    let mut weights = vec![0.0; n];
    for i in 0..n {
        weights[i] = chart.hslash2_radial[i] * g.r[i] * g.h_r;
    }
    for idx in 0..n {
        let (rho, omega) = op.mode_eigenpair(k, idx)?;
        // Normalize under the radial weights.
        let mut nrm = 0.0;
        for i in 0..n {
            nrm += omega[i] * omega[i] * weights[i];
        }
        let s = 1.0 / nrm.sqrt();
        let omega: Vec<f64> = omega.iter().map(|v| v * s).collect();
        pairs.push((rho, omega));
    }
    let xi_factor = op.xi_injection(k)?;
    Ok(RadialBasis {
        pairs,
        weights,
        xi_factor,
    })
}

/// Solves the Poisson problem
/// `Delta^{Gamma_eps} Lambda = S` (constant compat source),
/// `d Lambda / d tau_eps = g1` on the boundary, zero mean,
/// in theta modes; the k = 0 radial block carries the compatibility
/// multiplier.
fn neumann_poisson(
    chart: &Arc<ChartData>,
    op: &RobinOperatorDisc,
    e2: f64,
    g1: &[f64],
) -> Result<DiskField> {
    let grid = &chart.grid;
    let k_max = grid.n_theta / 2 - 1;
    let (gc, gs) = boundary_modes(g1, k_max);
    let eps = e2.sqrt();
    let mut out = ThetaModes {
        n_r: grid.n_r,
        n_theta: grid.n_theta,
        cos: vec![vec![0.0; grid.n_r]; k_max + 1],
        sin: vec![vec![0.0; grid.n_r]; k_max + 1],
    };
    for k in 0..=k_max {
        for sin in [false, true] {
            if sin && k == 0 {
                continue;
            }
            let xi = if sin { gs[k] } else { gc[k] } / eps;
            if k == 0 {
                // Singular Neumann block: border with the constant direction
                // (multiplier = compat source) and a zero-mean constraint.
                let sol = op.solve_mode_bordered_constant(k, e2, xi)?;
                out.cos[0] = sol;
            } else {
                let rhs = vec![0.0; grid.n_r];
                let sol = op.solve_mode(k, e2, 0.0, &rhs, xi)?;
                if sin {
                    out.sin[k] = sol.x;
                } else {
                    out.cos[k] = sol.x;
                }
            }
        }
    }
    Ok(out.synthesize(grid))
}

/// 1D solve with prescribed kernel projections: `(L - s) phi = rhs + c w_x
/// + d Z`, `int phi w_x = t1`, `int phi Z = t2`.
fn constrained_projection_solve(
    p: &ProfileTable,
    s: f64,
    rhs: &[f64],
    t1: f64,
    t2: f64,
) -> Result<(Vec<f64>, f64, f64, f64)> {
    let n = p.grid.n;
    let h2 = p.grid.h * p.grid.h;
    let mut diag = Vec::with_capacity(n - 2);
    for i in 1..n - 1 {
        diag.push(-2.0 / h2 - 1.0 + p.params.p * p.w[i].powf(p.params.p - 1.0) - s);
    }
    let off = vec![1.0 / h2; n - 3];
    let weights = p.grid.weights();
    let spikes = vec![
        p.w_x[1..n - 1].iter().map(|v| -v).collect::<Vec<f64>>(),
        p.z[1..n - 1].iter().map(|v| -v).collect::<Vec<f64>>(),
    ];
    let cons = vec![
        (1..n - 1).map(|i| weights[i] * p.w_x[i]).collect::<Vec<f64>>(),
        (1..n - 1).map(|i| weights[i] * p.z[i]).collect::<Vec<f64>>(),
    ];
    let interior = &rhs[1..n - 1];
    let sol = solve_bordered(&off, &diag, &off, &spikes, &cons, interior, &[t1, t2], true)?;
    // Residual.
    let mut res = 0.0f64;
    for i in 0..n - 2 {
        let mut r = diag[i] * sol.x[i] - interior[i];
        if i > 0 {
            r += off[i - 1] * sol.x[i - 1];
        }
        if i + 1 < n - 2 {
            r += off[i] * sol.x[i + 1];
        }
        r -= sol.multipliers[0] * p.w_x[i + 1] + sol.multipliers[1] * p.z[i + 1];
        res = res.max(r.abs());
    }
    let mut full = vec![0.0; n];
    full[1..n - 1].copy_from_slice(&sol.x);
    Ok((full, sol.multipliers[0], sol.multipliers[1], res))
}
