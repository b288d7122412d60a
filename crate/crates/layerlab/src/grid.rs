//! One-dimensional grid utilities shared by the profile and strip solvers:
//! symmetric uniform grids, trapezoid quadrature, symmetric tridiagonal
//! eigenvalue machinery (Sturm bisection + inverse iteration) and a pivoted
//! solver for tridiagonal systems bordered by dense constraint rows and
//! multiplier columns.

use crate::error::{Error, Result};

/// Uniform symmetric grid on `[-l, l]` with an odd number of nodes, so that
/// `x = 0` is a node and parity statements are exact on the grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid1d {
    pub l: f64,
    pub n: usize,
    pub h: f64,
    pub x: Vec<f64>,
}

impl Grid1d {
    pub fn new(l: f64, n: usize) -> Result<Self> {
        if !(l > 0.0) || !l.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "grid half-width must be positive, got {l}"
            )));
        }
        if n < 3 || n % 2 == 0 {
            return Err(Error::InvalidParameter(format!(
                "grid point count must be odd and >= 3, got {n}"
            )));
        }
        let h = 2.0 * l / (n - 1) as f64;
        let x = (0..n).map(|i| -l + h * i as f64).collect();
        Ok(Grid1d { l, n, h, x })
    }

    /// Trapezoid rule over the full grid. Endpoint corrections are
    /// exponentially small for the decaying integrands used here, so the
    /// rule is effectively spectrally accurate.
    pub fn integrate(&self, f: &[f64]) -> f64 {
        debug_assert_eq!(f.len(), self.n);
        let interior: f64 = f[1..self.n - 1].iter().sum();
        self.h * (0.5 * f[0] + interior + 0.5 * f[self.n - 1])
    }

    pub fn integrate_product(&self, a: &[f64], b: &[f64]) -> f64 {
        debug_assert_eq!(a.len(), self.n);
        debug_assert_eq!(b.len(), self.n);
        let mut s = 0.5 * a[0] * b[0] + 0.5 * a[self.n - 1] * b[self.n - 1];
        for i in 1..self.n - 1 {
            s += a[i] * b[i];
        }
        self.h * s
    }

    /// Trapezoid weights as a vector (used for constraint rows).
    pub fn weights(&self) -> Vec<f64> {
        let mut w = vec![self.h; self.n];
        w[0] = 0.5 * self.h;
        w[self.n - 1] = 0.5 * self.h;
        w
    }

    /// Mirror index of node `i` under `x -> -x`.
    pub fn mirror(&self, i: usize) -> usize {
        self.n - 1 - i
    }

    /// Quadrature on every second node (step `2h`), for Richardson error
    /// estimates of integrals. Requires the node count to be odd.
    pub fn integrate_coarse(&self, f: &[f64]) -> f64 {
        let m = (self.n + 1) / 2;
        let h2 = 2.0 * self.h;
        let mut s = 0.5 * f[0] + 0.5 * f[self.n - 1];
        for k in 1..m - 1 {
            s += f[2 * k];
        }
        h2 * s
    }
}

/// Symmetric tridiagonal matrix: `diag` of length n, `off` of length n-1.
#[derive(Debug, Clone)]
pub struct SymTridiag {
    pub diag: Vec<f64>,
    pub off: Vec<f64>,
}

impl SymTridiag {
    pub fn n(&self) -> usize {
        self.diag.len()
    }

    /// Number of eigenvalues strictly less than `mu`, by the Sturm sequence
    /// (LDLᵀ sign count with underflow safeguarding).
    pub fn count_below(&self, mu: f64) -> usize {
        let n = self.n();
        let mut count = 0usize;
        let mut d = self.diag[0] - mu;
        if d < 0.0 {
            count += 1;
        }
        for i in 1..n {
            let mut denom = d;
            if denom.abs() < f64::MIN_POSITIVE.sqrt() {
                denom = if denom >= 0.0 {
                    f64::MIN_POSITIVE.sqrt()
                } else {
                    -f64::MIN_POSITIVE.sqrt()
                };
            }
            d = self.diag[i] - mu - self.off[i - 1] * self.off[i - 1] / denom;
            if d < 0.0 {
                count += 1;
            }
        }
        count
    }

    /// Gershgorin bounds on the spectrum.
    pub fn gershgorin(&self) -> (f64, f64) {
        let n = self.n();
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for i in 0..n {
            let r = if i > 0 { self.off[i - 1].abs() } else { 0.0 }
                + if i + 1 < n { self.off[i].abs() } else { 0.0 };
            lo = lo.min(self.diag[i] - r);
            hi = hi.max(self.diag[i] + r);
        }
        (lo, hi)
    }

    /// The `k`-th eigenvalue in ascending order (0-based), by bisection on
    /// the Sturm count. Deterministic and accurate to ~1e-13 relative to the
    /// spectral width.
    pub fn eigenvalue(&self, k: usize) -> Result<f64> {
        let n = self.n();
        if k >= n {
            return Err(Error::InvalidParameter(format!(
                "eigenvalue index {k} out of range for size {n}"
            )));
        }
        let (mut lo, mut hi) = self.gershgorin();
        let width = (hi - lo).max(1e-300);
        let tol = 1e-15 * width;
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if self.count_below(mid) <= k {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi - lo < tol {
                break;
            }
        }
        Ok(0.5 * (lo + hi))
    }

    pub fn largest_eigenvalue(&self) -> Result<f64> {
        self.eigenvalue(self.n() - 1)
    }

    /// All eigenvalues in ascending order (bisection per index). Intended for
    /// the moderate sizes used by the radial mode solves.
    pub fn eigenvalues(&self) -> Result<Vec<f64>> {
        (0..self.n()).map(|k| self.eigenvalue(k)).collect()
    }

    /// Apply the matrix to a vector.
    pub fn apply(&self, v: &[f64]) -> Vec<f64> {
        let n = self.n();
        let mut out = vec![0.0; n];
        for i in 0..n {
            let mut s = self.diag[i] * v[i];
            if i > 0 {
                s += self.off[i - 1] * v[i - 1];
            }
            if i + 1 < n {
                s += self.off[i] * v[i + 1];
            }
            out[i] = s;
        }
        out
    }

    /// Inverse iteration for the eigenvector belonging to the eigenvalue
    /// nearest `shift`. The start vector fixes the sign deterministically.
    pub fn inverse_iteration(&self, shift: f64, start: &[f64]) -> Result<Vec<f64>> {
        let n = self.n();
        let sub: Vec<f64> = self.off.clone();
        let diag: Vec<f64> = self.diag.iter().map(|d| d - shift).collect();
        let mut v = start.to_vec();
        normalize(&mut v);
        for _ in 0..6 {
            let sol = solve_bordered(&sub, &diag, &sub, &[], &[], &v, &[], false)?;
            v = sol.x;
            normalize(&mut v);
        }
        // Rayleigh-quotient residual check.
        let av = self.apply(&v);
        let lam = dot(&av, &v);
        let mut res = 0.0f64;
        for i in 0..n {
            res = res.max((av[i] - lam * v[i]).abs());
        }
        let scale = self.gershgorin().1.abs().max(1.0);
        if res > 1e-8 * scale {
            return Err(Error::EigensolveFailure(format!(
                "inverse iteration stagnated: residual {res:.3e} at shift {shift:.6e} (n = {n})"
            )));
        }
        Ok(v)
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn normalize(v: &mut [f64]) {
    let nrm = dot(v, v).sqrt();
    if nrm > 0.0 {
        for x in v.iter_mut() {
            *x /= nrm;
        }
    }
}

/// Solution of a bordered tridiagonal system.
#[derive(Debug, Clone)]
pub struct BorderedSolution {
    pub x: Vec<f64>,
    pub multipliers: Vec<f64>,
    /// min |pivot| / max |pivot| over the elimination, as a cheap
    /// conditioning indicator.
    pub pivot_ratio: f64,
}

/// Solves the (n+k) x (n+k) system
///
/// ```text
/// [ T  S ] [x]   [b]
/// [ Cᵀ 0 ] [m] = [d]
/// ```
///
/// where `T` is tridiagonal (`sub`, `diag`, `sup`), `S` holds k multiplier
/// columns and `Cᵀ` holds k dense constraint rows, k <= 2. Elimination uses
/// partial pivoting between the two candidate band rows; constraint rows are
/// carried along densely and reduced to a final k x k block. Two steps of
/// iterative refinement recover full accuracy when `T` is nearly singular
/// (the constrained system itself must be well posed).
#[allow(clippy::too_many_arguments)]
pub fn solve_bordered(
    sub: &[f64],
    diag: &[f64],
    sup: &[f64],
    spikes: &[Vec<f64>],
    constraints: &[Vec<f64>],
    rhs: &[f64],
    con_rhs: &[f64],
    refine: bool,
) -> Result<BorderedSolution> {
    let n = diag.len();
    let k = spikes.len();
    assert_eq!(constraints.len(), k);
    assert_eq!(con_rhs.len(), k);
    assert!(k <= 2, "at most two constraint pairs supported");
    assert_eq!(sub.len(), n - 1);
    assert_eq!(sup.len(), n - 1);
    assert_eq!(rhs.len(), n);

    let factored = factor(sub, diag, sup, spikes, constraints)?;
    let mut sol = factored.solve(rhs, con_rhs);
    if refine {
        for _ in 0..2 {
            let (res, cres, rn) =
                residual(sub, diag, sup, spikes, constraints, rhs, con_rhs, &sol);
            let scale = inf_norm(rhs).max(inf_norm(con_rhs)).max(1e-300);
            if rn <= 1e-14 * scale {
                break;
            }
            let corr = factored.solve(&res, &cres);
            for i in 0..n {
                sol.x[i] += corr.x[i];
            }
            for j in 0..k {
                sol.multipliers[j] += corr.multipliers[j];
            }
        }
    }
    Ok(sol)
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

#[allow(clippy::too_many_arguments)]
fn residual(
    sub: &[f64],
    diag: &[f64],
    sup: &[f64],
    spikes: &[Vec<f64>],
    constraints: &[Vec<f64>],
    rhs: &[f64],
    con_rhs: &[f64],
    sol: &BorderedSolution,
) -> (Vec<f64>, Vec<f64>, f64) {
    let n = diag.len();
    let k = spikes.len();
    let x = &sol.x;
    let mut res = vec![0.0; n];
    let mut worst = 0.0f64;
    for i in 0..n {
        let mut s = diag[i] * x[i];
        if i > 0 {
            s += sub[i - 1] * x[i - 1];
        }
        if i + 1 < n {
            s += sup[i] * x[i + 1];
        }
        for (j, sp) in spikes.iter().enumerate() {
            s += sp[i] * sol.multipliers[j];
        }
        res[i] = rhs[i] - s;
        worst = worst.max(res[i].abs());
    }
    let mut cres = vec![0.0; k];
    for (j, c) in constraints.iter().enumerate() {
        cres[j] = con_rhs[j] - dot(c, x);
        worst = worst.max(cres[j].abs());
    }
    (res, cres, worst)
}

/// LU data for the bordered elimination. Band rows keep at most three
/// entries right of the diagonal plus the spike tail; constraint rows are
/// reduced to the trailing k x k block.
struct Factored {
    n: usize,
    k: usize,
    /// Per column: multiplier applied to the trailing band row, and whether
    /// rows were swapped at this step.
    band_factor: Vec<f64>,
    swapped: Vec<bool>,
    /// Per column, per constraint row: the elimination multiplier.
    con_factor: Vec<[f64; 2]>,
    /// Frozen U band rows: diagonal, two superdiagonals, spike entries.
    u_diag: Vec<f64>,
    u_sup1: Vec<f64>,
    u_sup2: Vec<f64>,
    u_spike: Vec<[f64; 2]>,
    /// Trailing k x k block, row-major, LU-factored in place (k <= 2).
    block: [[f64; 2]; 2],
    block_swap: bool,
    pivot_ratio: f64,
}

fn factor(
    sub: &[f64],
    diag: &[f64],
    sup: &[f64],
    spikes: &[Vec<f64>],
    constraints: &[Vec<f64>],
) -> Result<Factored> {
    let n = diag.len();
    let k = spikes.len();

    // Working band representation.
    let mut d0 = diag.to_vec(); // entry (i, i)
    let mut d1 = sup.to_vec(); // entry (i, i+1)
    d1.push(0.0);
    let mut d2 = vec![0.0; n]; // entry (i, i+2), fill-in from swaps
    let mut sp: Vec<[f64; 2]> = (0..n)
        .map(|i| {
            let mut row = [0.0; 2];
            for j in 0..k {
                row[j] = spikes[j][i];
            }
            row
        })
        .collect();
    let mut low = sub.to_vec(); // entry (i+1, i) pending elimination

    // Dense constraint rows carried along (columns 0..n plus k block cols).
    let mut con: Vec<Vec<f64>> = constraints.iter().map(|c| c.to_vec()).collect();
    let mut con_block = [[0.0f64; 2]; 2];

    let mut band_factor = vec![0.0; n];
    let mut swapped = vec![false; n];
    let mut con_factor = vec![[0.0f64; 2]; n];
    let mut min_piv = f64::INFINITY;
    let mut max_piv = 0.0f64;

    for j in 0..n {
        // Pivot between band rows j and j+1 only.
        if j + 1 < n && low[j].abs() > d0[j].abs() {
            swapped[j] = true;
            let (a, b) = (low[j], d0[j]);
            d0[j] = a;
            low[j] = b;
            let (a, b) = (d0[j + 1], d1[j]);
            d1[j] = a;
            d0[j + 1] = b;
            let (a, b) = (d1[j + 1], d2[j]);
            d2[j] = a;
            d1[j + 1] = b;
            sp.swap(j, j + 1);
        }
        let piv = d0[j];
        min_piv = min_piv.min(piv.abs());
        max_piv = max_piv.max(piv.abs());
        if piv == 0.0 {
            return Err(Error::SingularSystem {
                context: format!("zero pivot at column {j} of {n}"),
                pivot_ratio: 0.0,
            });
        }
        // Eliminate the sub-diagonal entry of band row j+1.
        if j + 1 < n {
            let f = low[j] / piv;
            band_factor[j] = f;
            d0[j + 1] -= f * d1[j];
            d1[j + 1] -= f * d2[j];
            sp[j + 1][0] -= f * sp[j][0];
            sp[j + 1][1] -= f * sp[j][1];
        }
        // Eliminate column j from each constraint row.
        for (r, c) in con.iter_mut().enumerate() {
            let f = c[j] / piv;
            con_factor[j][r] = f;
            c[j] = 0.0;
            if j + 1 < n {
                c[j + 1] -= f * d1[j];
            }
            if j + 2 < n {
                c[j + 2] -= f * d2[j];
            }
            con_block[r][0] -= f * sp[j][0];
            con_block[r][1] -= f * sp[j][1];
        }
    }

    // Factor the trailing k x k block with partial pivoting (k <= 2).
    let mut block = con_block;
    let mut block_swap = false;
    if k == 2 {
        if block[1][0].abs() > block[0][0].abs() {
            block.swap(0, 1);
            block_swap = true;
        }
        let p = block[0][0];
        min_piv = min_piv.min(p.abs());
        max_piv = max_piv.max(p.abs());
        if p == 0.0 {
            return Err(Error::SingularSystem {
                context: "singular constraint block".into(),
                pivot_ratio: 0.0,
            });
        }
        let f = block[1][0] / p;
        block[1][0] = f;
        block[1][1] -= f * block[0][1];
        min_piv = min_piv.min(block[1][1].abs());
        max_piv = max_piv.max(block[1][1].abs());
        if block[1][1] == 0.0 {
            return Err(Error::SingularSystem {
                context: "singular constraint block".into(),
                pivot_ratio: 0.0,
            });
        }
    } else if k == 1 {
        min_piv = min_piv.min(block[0][0].abs());
        max_piv = max_piv.max(block[0][0].abs());
        if block[0][0] == 0.0 {
            return Err(Error::SingularSystem {
                context: "singular constraint block".into(),
                pivot_ratio: 0.0,
            });
        }
    }
    let pivot_ratio = if max_piv > 0.0 { min_piv / max_piv } else { 0.0 };
    if pivot_ratio < 1e-15 && k > 0 {
        return Err(Error::SingularSystem {
            context: format!("constrained system of size {n}+{k} numerically singular"),
            pivot_ratio,
        });
    }

    Ok(Factored {
        n,
        k,
        band_factor,
        swapped,
        con_factor,
        u_diag: d0,
        u_sup1: d1,
        u_sup2: d2,
        u_spike: sp,
        block,
        block_swap,
        pivot_ratio,
    })
}

impl Factored {
    fn solve(&self, rhs: &[f64], con_rhs: &[f64]) -> BorderedSolution {
        let n = self.n;
        let k = self.k;
        let mut b = rhs.to_vec();
        let mut cb = [0.0f64; 2];
        for j in 0..k {
            cb[j] = con_rhs[j];
        }
        // Forward elimination on the right-hand side.
        for j in 0..n {
            if self.swapped[j] && j + 1 < n {
                b.swap(j, j + 1);
            }
            if j + 1 < n {
                b[j + 1] -= self.band_factor[j] * b[j];
            }
            for r in 0..k {
                cb[r] -= self.con_factor[j][r] * b[j];
            }
        }
        // Solve the trailing block for the multipliers.
        let mut m = [0.0f64; 2];
        if k == 2 {
            if self.block_swap {
                cb.swap(0, 1);
            }
            let y0 = cb[0];
            let y1 = cb[1] - self.block[1][0] * y0;
            m[1] = y1 / self.block[1][1];
            m[0] = (y0 - self.block[0][1] * m[1]) / self.block[0][0];
        } else if k == 1 {
            m[0] = cb[0] / self.block[0][0];
        }
        // Back substitution.
        let mut x = vec![0.0; n];
        for j in (0..n).rev() {
            let mut s = b[j];
            if j + 1 < n {
                s -= self.u_sup1[j] * x[j + 1];
            }
            if j + 2 < n {
                s -= self.u_sup2[j] * x[j + 2];
            }
            s -= self.u_spike[j][0] * m[0] + self.u_spike[j][1] * m[1];
            x[j] = s / self.u_diag[j];
        }
        BorderedSolution {
            x,
            multipliers: m[..k].to_vec(),
            pivot_ratio: self.pivot_ratio,
        }
    }
}
