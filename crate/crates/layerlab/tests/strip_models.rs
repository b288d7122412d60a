//! Battery for the strip model solvers: cross-solver agreement with a 2D
//! finite-difference oracle, manufactured recovery, resolvent monotonicity,
//! inherited orthogonality, measured coercivity, and the projected cylinder
//! solver with its multiplier fields.

use layerlab::chart::{ChartData, ChartRegistry};
use layerlab::polar::PolarGrid;
use layerlab::profile::{build_profile, ProfileParams, ProfileTable};
use layerlab::strip::*;
use std::sync::Arc;

fn profile() -> Arc<ProfileTable> {
    Arc::new(build_profile(ProfileParams::new(3.0, 10.0, 2001).unwrap()).unwrap())
}

fn ctx(profile: &Arc<ProfileTable>, n_eta_modes: usize) -> StripContext {
    StripContext::new(profile.clone(), 1.0, 1.0, 1.0, 16, 12.0, n_eta_modes).unwrap()
}

/// psi(x) decaying, exactly orthogonal to the discrete w_x and Z.
fn orthogonal_profile(p: &ProfileTable) -> Vec<f64> {
    let mut psi: Vec<f64> = p
        .grid
        .x
        .iter()
        .map(|&x| (1.0 + x * x) * (-0.5 * x * x).exp())
        .collect();
    let n = p.grid.n;
    psi[0] = 0.0;
    psi[n - 1] = 0.0;
    let a = p.grid.integrate_product(&psi, &p.w_x) / p.grid.integrate_product(&p.w_x, &p.w_x);
    let b = p.grid.integrate_product(&psi, &p.z) / p.grid.integrate_product(&p.z, &p.z);
    for i in 0..n {
        psi[i] -= a * p.w_x[i] + b * p.z[i];
    }
    psi
}

#[test]
fn model_neumann_zero_data_gives_zero() {
    let p = profile();
    let c = ctx(&p, 32);
    let data = StripData::from_fn(&c, |_, _| 0.0, |_, _, _| 0.0);
    let sol = solve_model_neumann(&c, &data, 6.0).unwrap();
    assert!(sol.solution.max_abs() < 1e-14);
}

#[test]
fn model_neumann_rejects_non_orthogonal_data() {
    let p = profile();
    let c = ctx(&p, 16);
    let z = p.z.clone();
    let grid = p.grid.clone();
    let data = StripData::from_fn(&c, |x, _| z[grid.x.iter().position(|&v| v == x).unwrap()], |_, _, _| 0.0);
    assert!(solve_model_neumann(&c, &data, 6.0).is_err());
}

#[test]
fn model_neumann_matches_2d_fd_oracle() {
    let p = profile();
    let c = ctx(&p, 256);
    let psi = orthogonal_profile(&p);
    let k_shift = 6.0;
    // Data in the k = 1 cosine angular mode.
    let data = StripData {
        modes: vec![StripModeData {
            k: 1,
            sin: false,
            g: psi.clone(),
            h: Vec::new(),
        }],
    };
    let sol = solve_model_neumann(&c, &data, k_shift).unwrap();
    assert!(sol.residual < 1e-8, "residual {}", sol.residual);

    // Direct 2D FD solve in (x, eta) for the same angular mode. The
    // vertex-centered Neumann row is first-order consistent pointwise, so a
    // three-grid extrapolation removes both the h and h^2 error terms.
    let g150 = fd_oracle_mode1(&p, &psi, k_shift, 12.0, 150);
    let g300 = fd_oracle_mode1(&p, &psi, k_shift, 12.0, 300);
    let g600 = fd_oracle_mode1(&p, &psi, k_shift, 12.0, 600);
    let mut worst = 0.0f64;
    let mut scale = 0.0f64;
    for (st, eta) in [(0usize, 0.0), (10, 0.8), (20, 1.6)] {
        for ix in (0..p.grid.n).step_by(40) {
            let o = (8.0 * g600[ix * 601 + 4 * st] - 6.0 * g300[ix * 301 + 2 * st]
                + g150[ix * 151 + st])
                / 3.0;
            let s = sol.solution.eval(ix, 0.0, eta);
            worst = worst.max((s - o).abs());
            scale = scale.max(o.abs());
        }
    }
    assert!(
        worst < 1e-4 * scale.max(1e-10),
        "cross-solver disagreement {worst} at scale {scale}"
    );
}

/// Vertex-centered FD solve of
/// `phi_xx + phi_ee - (1 + k^2/l1^2 + (K-1)) phi + p w^{p-1} phi = 0`,
/// `phi_eta(x, 0) = g(x)`, Neumann cap at eta = H; returns the full grid
/// (row-major over x, then eta). Plain conjugate gradients on the negative
/// definite system.
fn fd_oracle_mode1(p: &ProfileTable, g: &[f64], k_shift: f64, h_cap: f64, n_eta: usize) -> Vec<f64> {
    let nx = p.grid.n;
    let ne = n_eta + 1;
    let hx = p.grid.h;
    let he = h_cap / n_eta as f64;
    let shift = 1.0 + k_shift - 1.0; // angular k=1, l1=1 adds 1
    let pot: Vec<f64> = p
        .w
        .iter()
        .map(|w| p.params.p * w.powf(p.params.p - 1.0))
        .collect();
    // Operator A phi (negated to be positive definite for CG).
    let apply = |phi: &[f64], out: &mut [f64]| {
        for ix in 0..nx {
            for ie in 0..ne {
                let idx = ix * ne + ie;
                let c = phi[idx];
                let xm = if ix > 0 { phi[idx - ne] } else { 0.0 };
                let xp = if ix + 1 < nx { phi[idx + ne] } else { 0.0 };
                // Neumann ghosts in eta (data folded into rhs).
                let em = if ie > 0 { phi[idx - 1] } else { phi[idx + 1] };
                let ep = if ie + 1 < ne { phi[idx + 1] } else { phi[idx - 1] };
                let val = (xm - 2.0 * c + xp) / (hx * hx) + (em - 2.0 * c + ep) / (he * he)
                    - (1.0 + shift) * c
                    + pot[ix] * c;
                out[idx] = -val;
            }
        }
    };
    // rhs from the Neumann data ghost at eta = 0: phi_{-1} = phi_1 - 2 he g,
    // whose -2g/he contribution moves to the right side of the negated
    // system.
    let mut rhs = vec![0.0; nx * ne];
    for ix in 0..nx {
        rhs[ix * ne] = -2.0 * g[ix] / he;
    }
    // CG.
    let mut x = vec![0.0; nx * ne];
    let mut r = rhs.clone();
    let mut z = vec![0.0; nx * ne];
    let mut pdir = r.clone();
    let mut rs: f64 = r.iter().map(|v| v * v).sum();
    for _ in 0..4000 {
        apply(&pdir, &mut z);
        let pz: f64 = pdir.iter().zip(&z).map(|(a, b)| a * b).sum();
        let alpha = rs / pz;
        for i in 0..x.len() {
            x[i] += alpha * pdir[i];
            r[i] -= alpha * z[i];
        }
        let rs_new: f64 = r.iter().map(|v| v * v).sum();
        if rs_new.sqrt() < 1e-12 {
            break;
        }
        let beta = rs_new / rs;
        rs = rs_new;
        for i in 0..x.len() {
            pdir[i] = r[i] + beta * pdir[i];
        }
    }
    x
}

#[test]
fn doubling_the_shift_shrinks_the_solution() {
    let p = profile();
    let c = ctx(&p, 48);
    let psi = orthogonal_profile(&p);
    let data = StripData {
        modes: vec![StripModeData {
            k: 1,
            sin: false,
            g: psi,
            h: Vec::new(),
        }],
    };
    let a = solve_model_neumann(&c, &data, 6.0).unwrap();
    let b = solve_model_neumann(&c, &data, 12.0).unwrap();
    let sup = |s: &StripSolution| {
        let mut m = 0.0f64;
        for ix in (0..p.grid.n).step_by(25) {
            for ke in 0..60 {
                let eta = 0.1 * ke as f64;
                m = m.max(s.eval(ix, 0.0, eta).abs());
            }
        }
        m
    };
    let (na, nb) = (sup(&a.solution), sup(&b.solution));
    assert!(nb < na, "{nb} !< {na}");
}

#[test]
fn with_orthogonality_recovers_manufactured_solution() {
    let p = profile();
    let c = ctx(&p, 48);
    let psi = orthogonal_profile(&p);
    // phi* = [cos(pi eta/H) + 0.5 cos(2 pi eta/H)] cos(theta) psi(x):
    // zero Neumann data, finite cosine content.
    let n = p.grid.n;
    let mut h_modes = vec![vec![0.0; n]; c.n_eta_modes];
    let lpsi = p.apply_operator(&psi);
    for (j, amp) in [(1usize, 1.0f64), (2, 0.5)] {
        let nu = {
            let a = 1.0 / c.l1; // k = 1, theta_scale = 1
            let b = j as f64 * std::f64::consts::PI / (c.h_cap * c.l2);
            a * a + b * b
        };
        for i in 0..n {
            h_modes[j][i] = amp * (lpsi[i] - nu * psi[i]);
        }
    }
    let data = StripData {
        modes: vec![StripModeData {
            k: 1,
            sin: false,
            g: vec![0.0; n],
            h: h_modes,
        }],
    };
    let sol = solve_with_orthogonality(&c, &data).unwrap();
    // Compare on a sample of points.
    let mut worst = 0.0f64;
    let mut scale = 0.0f64;
    for ix in (0..n).step_by(67) {
        for eta in [0.0f64, 0.7, 2.3, 6.0] {
            for theta in [0.0f64, 1.1] {
                let want = ((std::f64::consts::PI * eta / c.h_cap).cos()
                    + 0.5 * (2.0 * std::f64::consts::PI * eta / c.h_cap).cos())
                    * theta.cos()
                    * psi[ix];
                let got = sol.solution.eval(ix, theta, eta);
                worst = worst.max((got - want).abs());
                scale = scale.max(want.abs());
            }
        }
    }
    assert!(
        worst < 1e-6 * scale,
        "manufactured recovery error {worst} (scale {scale})"
    );
    assert!(sol.multiplier_max < 1e-8, "multipliers {}", sol.multiplier_max);
    assert!(sol.solution.orthogonality_defect() < 1e-8);
}

#[test]
fn with_orthogonality_zero_gives_zero() {
    let p = profile();
    let c = ctx(&p, 16);
    let data = StripData::default();
    let sol = solve_with_orthogonality(&c, &data).unwrap();
    assert!(sol.solution.max_abs() < 1e-14);
}

#[test]
fn exponentially_decaying_data_gives_decaying_solution() {
    let p = profile();
    let c = ctx(&p, 64);
    // G with decay rate alpha = 0.5 in x, orthogonalized.
    let alpha = 0.5;
    let mut g: Vec<f64> = p.grid.x.iter().map(|&x| (-alpha * x.abs()).exp() * (1.0 + 0.3 * x * x) * (-0.01 * x * x).exp()).collect();
    let n = p.grid.n;
    g[0] = 0.0;
    g[n - 1] = 0.0;
    let a = p.grid.integrate_product(&g, &p.w_x) / p.grid.integrate_product(&p.w_x, &p.w_x);
    let b = p.grid.integrate_product(&g, &p.z) / p.grid.integrate_product(&p.z, &p.z);
    for i in 0..n {
        g[i] -= a * p.w_x[i] + b * p.z[i];
    }
    let data = StripData {
        modes: vec![StripModeData {
            k: 1,
            sin: false,
            g,
            h: Vec::new(),
        }],
    };
    let sol = solve_with_orthogonality(&c, &data).unwrap();
    // Measured decay rate of the trace at eta = 0.7 over the tail window.
    let tr: Vec<f64> = (0..n).map(|ix| sol.solution.eval(ix, 0.0, 0.7).abs()).collect();
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for (i, &x) in p.grid.x.iter().enumerate() {
        if x >= 0.4 * p.grid.l && x <= 0.8 * p.grid.l && tr[i] > 1e-14 {
            xs.push(x);
            ys.push(tr[i].ln());
        }
    }
    let nn = xs.len() as f64;
    let sx: f64 = xs.iter().sum();
    let sy: f64 = ys.iter().sum();
    let sxx: f64 = xs.iter().map(|v| v * v).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| x * y).sum();
    let rate = -(nn * sxy - sx * sy) / (nn * sxx - sx * sx);
    assert!(
        rate > 0.2 * alpha,
        "measured decay rate {rate} too small for alpha = {alpha}"
    );
}

#[test]
fn measured_mode_coercivity_constant_is_finite_and_stable() {
    let p = profile();
    let measure = |n_modes: usize| -> f64 {
        let c = ctx(&p, n_modes);
        let psi = orthogonal_profile(&p);
        let lpsi = p.apply_operator(&psi);
        let mut worst = 0.0f64;
        for k in [0usize, 1, 3] {
            for j in [0usize, 1, 4, n_modes / 2] {
                let nu = {
                    let a = c.theta_scale * k as f64 / c.l1;
                    let b = j as f64 * std::f64::consts::PI / (c.h_cap * c.l2);
                    a * a + b * b
                };
                let h_kj: Vec<f64> = (0..p.grid.n).map(|i| lpsi[i] - nu * psi[i]).collect();
                let mut h_modes = vec![vec![0.0; p.grid.n]; c.n_eta_modes];
                h_modes[j] = h_kj.clone();
                let data = StripData {
                    modes: vec![StripModeData {
                        k,
                        sin: false,
                        g: vec![0.0; p.grid.n],
                        h: h_modes,
                    }],
                };
                let sol = solve_with_orthogonality(&c, &data).unwrap();
                // The solution in this single mode is psi itself; measure
                // (1 + nu^2) |phi|^2 / |h|^2.
                let phi_kj = &sol.solution.modes[0].psi[j];
                let n2 = p.grid.integrate_product(phi_kj, phi_kj);
                let h2 = p.grid.integrate_product(&h_kj, &h_kj);
                worst = worst.max((1.0 + nu * nu) * n2 / h2);
            }
        }
        worst
    };
    let c1 = measure(32);
    let c2 = measure(64);
    assert!(c1.is_finite() && c1 > 0.0);
    let change = (c1 - c2).abs() / c1;
    assert!(change < 0.2, "coercivity constant unstable: {c1} vs {c2}");
}

// ---------------------------------------------------------------------------
// Projected cylinder solver.
// ---------------------------------------------------------------------------

fn chart_data(spec: &str, n_r: usize, n_t: usize) -> Arc<ChartData> {
    let reg = ChartRegistry::with_builtins();
    let chart = reg.create(spec).unwrap();
    Arc::new(ChartData::new(chart, PolarGrid::new(n_r, n_t).unwrap()).unwrap())
}

#[test]
fn t1_zero_data_gives_zeros() {
    let p = profile();
    let cd = chart_data("synthetic-robin-disk:0.5", 16, 16);
    let h = CylinderField::zeros(p.grid.n, &cd.grid);
    let g = CylinderBoundaryData::zeros(p.grid.n, cd.grid.n_theta);
    let sol = solve_t1(&cd, &p, 0.1, &h, &g).unwrap();
    assert!(sol.phi.data.iter().all(|v| v.abs() < 1e-12));
    assert!(sol.c.max_abs() < 1e-12);
    assert!(sol.d.max_abs() < 1e-12);
    assert!(sol.lambda1.max_abs() < 1e-12);
}

#[test]
fn t1_kernel_direction_rhs_is_absorbed_by_the_multiplier() {
    let p = profile();
    let cd = chart_data("synthetic-robin-disk:0.5", 16, 16);
    let mut h = CylinderField::zeros(p.grid.n, &cd.grid);
    // h = w_x(x) g(z) with g = 1 + r cos(theta)-ish sampled field.
    let gz = layerlab::polar::DiskField::from_fn(&cd.grid, |r, t| 1.0 + 0.5 * r * t.cos());
    for ix in 0..p.grid.n {
        for i in 0..cd.grid.n_r {
            for j in 0..cd.grid.n_theta {
                *h.at_mut(ix, i, j) = p.w_x[ix] * gz.at(i, j);
            }
        }
    }
    let g = CylinderBoundaryData::zeros(p.grid.n, cd.grid.n_theta);
    let sol = solve_t1(&cd, &p, 0.1, &h, &g).unwrap();
    assert!(sol.residual < 1e-7, "residual {}", sol.residual);
    let phimax = sol.phi.data.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    assert!(phimax < 1e-5, "phi should vanish, max {phimax}");
    // c = -g pointwise, d = 0.
    let mut worst = 0.0f64;
    for idx in 0..gz.data.len() {
        worst = worst.max((sol.c.data[idx] + gz.data[idx]).abs());
    }
    assert!(worst < 1e-5, "multiplier mismatch {worst}");
    assert!(sol.d.max_abs() < 1e-7, "d = {}", sol.d.max_abs());
}

#[test]
fn t1_projections_match_lambda_fields() {
    let p = profile();
    let cd = chart_data("synthetic-robin-disk:0.5", 16, 16);
    // Generic decaying h.
    let mut h = CylinderField::zeros(p.grid.n, &cd.grid);
    for (ix, &x) in p.grid.x.iter().enumerate() {
        let hx = (-0.4 * x * x).exp() * (1.0 + x);
        for i in 0..cd.grid.n_r {
            for j in 0..cd.grid.n_theta {
                let y = cd.grid.node(i, j);
                *h.at_mut(ix, i, j) = hx * (1.0 + 0.3 * y[0]);
            }
        }
    }
    // Nonzero boundary data G (decaying in x).
    let mut g = CylinderBoundaryData::zeros(p.grid.n, cd.grid.n_theta);
    for (ix, &x) in p.grid.x.iter().enumerate() {
        for jt in 0..cd.grid.n_theta {
            g.values[ix * cd.grid.n_theta + jt] =
                (-0.5 * x * x).exp() * (0.7 + 0.2 * cd.grid.theta[jt].sin());
        }
    }
    let eps = 0.1;
    let sol = solve_t1(&cd, &p, eps, &h, &g).unwrap();
    assert!(sol.residual < 1e-7, "residual {}", sol.residual);
    // int phi w_x dx equals Lambda1 at every chart node.
    let mut worst = 0.0f64;
    for i in 0..cd.grid.n_r {
        for j in 0..cd.grid.n_theta {
            let col: Vec<f64> = (0..p.grid.n).map(|ix| sol.phi.at(ix, i, j)).collect();
            let proj = p.grid.integrate_product(&col, &p.w_x);
            worst = worst.max((proj - sol.lambda1.at(i, j)).abs());
        }
    }
    assert!(worst < 1e-8, "projection constraint defect {worst}");
    // Lambda1 has zero weighted mean.
    let one = layerlab::polar::DiskField::constant(&cd.grid, 1.0);
    let mean = cd.inner_product(&sol.lambda1, &one);
    assert!(mean.abs() < 1e-9, "Lambda1 mean {mean}");
}
