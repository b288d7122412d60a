//! Bessel functions of the first kind and modified Bessel functions, by
//! their power series, plus root finding for the Robin eigenvalue condition
//! on the unit disk. These serve as grid-independent cross-checks of the
//! finite-volume spectra; the spectral solvers never call into this module.

/// `J_m(x)` by the alternating power series. Accurate to ~1e-9 relative for
/// `|x| <= 30` in double precision, which covers every use here.
pub fn bessel_j(m: usize, x: f64) -> f64 {
    debug_assert!(x.abs() <= 40.0, "series evaluation out of its safe range");
    let half = 0.5 * x;
    // term_0 = (x/2)^m / m!
    let mut term = 1.0;
    for k in 1..=m {
        term *= half / k as f64;
    }
    let mut sum = term;
    let x2 = half * half;
    for k in 1..200 {
        term *= -x2 / (k as f64 * (k + m) as f64);
        sum += term;
        if term.abs() < 1e-18 * sum.abs().max(1e-30) {
            break;
        }
    }
    sum
}

/// `I_m(x)` by the monotone power series.
pub fn bessel_i(m: usize, x: f64) -> f64 {
    debug_assert!(x.abs() <= 60.0);
    let half = 0.5 * x;
    let mut term = 1.0;
    for k in 1..=m {
        term *= half / k as f64;
    }
    let mut sum = term;
    let x2 = half * half;
    for k in 1..300 {
        term *= x2 / (k as f64 * (k + m) as f64);
        sum += term;
        if term < 1e-18 * sum {
            break;
        }
    }
    sum
}

pub fn bessel_j_prime(m: usize, x: f64) -> f64 {
    if m == 0 {
        -bessel_j(1, x)
    } else {
        0.5 * (bessel_j(m - 1, x) - bessel_j(m + 1, x))
    }
}

pub fn bessel_i_prime(m: usize, x: f64) -> f64 {
    if m == 0 {
        bessel_i(1, x)
    } else {
        0.5 * (bessel_i(m - 1, x) + bessel_i(m + 1, x))
    }
}

fn bisect(mut lo: f64, mut hi: f64, f: &dyn Fn(f64) -> f64) -> f64 {
    let mut flo = f(lo);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let fm = f(mid);
        if (fm > 0.0) == (flo > 0.0) {
            lo = mid;
            flo = fm;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-13 * hi.abs().max(1.0) {
            break;
        }
    }
    0.5 * (lo + hi)
}

/// Eigenvalues `mu` of `-Laplace` on the unit disk in the angular mode `m`
/// with the Robin condition `f_r(1) = c f(1)` (equivalently
/// `df/dtau + c f = 0` with `tau` the inward normal), ascending, up to
/// `mu_max`.
///
/// Positive eigenvalues solve `k J_m'(k) = c J_m(k)` with `mu = k^2`; a
/// negative eigenvalue `-k^2` with `k I_m'(k) = c I_m(k)` exists exactly
/// when `m < c`; `mu = 0` occurs exactly when `m = c` (harmonic `r^m`).
pub fn robin_disk_eigenvalues(m: usize, c: f64, mu_max: f64) -> Vec<f64> {
    let mut out = Vec::new();
    // Negative branch.
    if (m as f64) < c {
        let g = |k: f64| k * bessel_i_prime(m, k) - c * bessel_i(m, k);
        // g(0+) < 0 (since m < c), g grows like (k - c) I_m for large k.
        let mut hi = 1.0;
        while g(hi) <= 0.0 && hi < 55.0 {
            hi *= 1.5;
        }
        if g(hi) > 0.0 {
            let k = bisect(1e-8, hi, &g);
            out.push(-k * k);
        }
    }
    if ((m as f64) - c).abs() < 1e-12 {
        out.push(0.0);
    }
    // Positive branch: scan for sign changes of k J_m'(k) - c J_m(k).
    let k_max = mu_max.max(0.0).sqrt() + 1.0;
    let g = |k: f64| k * bessel_j_prime(m, k) - c * bessel_j(m, k);
    let step = 0.01f64;
    let mut k = step;
    let mut prev = g(k);
    while k < k_max {
        let next_k = k + step;
        let cur = g(next_k);
        if (prev > 0.0) != (cur > 0.0) {
            let root = bisect(k, next_k, &g);
            // Skip spurious origin crossings for m = c where g ~ 0 at 0.
            if root > 1e-4 {
                out.push(root * root);
            }
        }
        prev = cur;
        k = next_k;
    }
    out.retain(|&mu| mu <= mu_max);
    out.sort_by(|a, b| a.partial_cmp(b).unwrap());
    out
}

/// All disk Robin eigenvalues up to `mu_max` over angular modes, with
/// multiplicity two for `m >= 1`, ascending.
pub fn robin_disk_spectrum(c: f64, mu_max: f64) -> Vec<f64> {
    let mut out = Vec::new();
    let m_top = (mu_max.max(0.0).sqrt() as usize) + 3 + c.abs().ceil() as usize;
    for m in 0..=m_top {
        for mu in robin_disk_eigenvalues(m, c, mu_max) {
            out.push(mu);
            if m >= 1 {
                out.push(mu);
            }
        }
    }
    out.sort_by(|a, b| a.partial_cmp(b).unwrap());
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn j0_reference_values() {
        // Abramowitz & Stegun 9.4: J0(1) = 0.7651976866, J0(5) = -0.1775967713.
        assert!((bessel_j(0, 1.0) - 0.7651976865579666).abs() < 1e-12);
        assert!((bessel_j(0, 5.0) + 0.17759677131433830).abs() < 1e-10);
        assert!((bessel_j(1, 2.0) - 0.5767248077568734).abs() < 1e-12);
    }

    #[test]
    fn i0_reference_values() {
        assert!((bessel_i(0, 1.0) - 1.2660658777520084).abs() < 1e-12);
        assert!((bessel_i(1, 2.0) - 1.5906368546373291).abs() < 1e-11);
    }

    #[test]
    fn neumann_disk_spectrum_starts_at_zero() {
        // c = 0: mu_1 = 0 (constant), next is the first root of J1' ~ 1.8412^2.
        let mus = robin_disk_spectrum(0.0, 15.0);
        assert!((mus[0] - 0.0).abs() < 1e-12);
        let j1p_root = 1.8411837813406593f64;
        assert!((mus[1] - j1p_root * j1p_root).abs() < 1e-6, "{}", mus[1]);
    }

    #[test]
    fn robin_half_has_single_negative_mode() {
        let mus = robin_disk_spectrum(0.5, 20.0);
        assert!(mus[0] < 0.0);
        assert!(mus[1] > 0.0);
        // Only m = 0 < c contributes a negative eigenvalue.
        assert_eq!(mus.iter().filter(|&&m| m < 0.0).count(), 1);
    }

    #[test]
    fn integer_robin_has_zero_eigenvalue() {
        let mus = robin_disk_eigenvalues(2, 2.0, 10.0);
        assert!(mus.iter().any(|&m| m.abs() < 1e-12));
    }
}
