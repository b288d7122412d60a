//! Resonance-avoiding selection of the small parameter: on each dyadic
//! level `(2^{-l-1}, 2^-l)` the values `sqrt(lambda0 / rho_j)` are the
//! resonant parameters of the amplitude operator; the selector returns the
//! midpoint of the widest resonance-free subinterval together with a
//! verified spectral gap.

use crate::error::{Error, Result};
use serde::Serialize;

/// Eigenvalue of the shifted amplitude operator on the shared Robin
/// eigenbasis: `Lambda_{eps} = eps^2 rho - lambda0`.
pub fn lambda_eps(rho: f64, eps: f64, lambda0: f64) -> f64 {
    eps * eps * rho - lambda0
}

fn check_ascending(rhos: &[f64]) -> Result<()> {
    if rhos.windows(2).any(|w| w[0] > w[1]) {
        return Err(Error::InvalidParameter(
            "eigenvalue list must be ascending".into(),
        ));
    }
    Ok(())
}

/// Number of negative eigenvalues of the shifted operator,
/// `#{ j : eps^2 rho_j < lambda0 }`.
pub fn count_negative(rhos: &[f64], eps: f64, lambda0: f64) -> Result<usize> {
    check_ascending(rhos)?;
    let cut = lambda0 / (eps * eps);
    Ok(rhos.partition_point(|&r| r < cut))
}

/// A selected parameter with its dyadic level, resonance-free subinterval
/// and verified spectral gap.
#[derive(Debug, Clone, Serialize)]
pub struct ResonanceCertificate {
    pub ell: u32,
    /// `(sigma_{l+1}, sigma_l)` with `sigma_l = 2^-l`.
    pub interval: (f64, f64),
    pub eps: f64,
    /// Endpoints of the chosen resonance-free subinterval.
    pub a: f64,
    pub b: f64,
    /// `min_j |eps^2 rho_j - lambda0|`, scanned over the full list.
    pub gap: f64,
    pub gap_over_eps2: f64,
    /// A priori floor implied by the gap width and the eigenvalue slope.
    pub slope_bound: f64,
    /// Resonant values inside the level.
    pub resonant_in_level: usize,
    /// Size of the eigenvalue list the certificate was computed from, so
    /// under-resolution is auditable.
    pub rho_count: usize,
    pub lambda0: f64,
}

/// Runs the dyadic-level selection. Requires the list to cover the
/// resonance range of the level: `max rho >= lambda0 / sigma_{l+1}^2`.
pub fn select_epsilon(rhos: &[f64], lambda0: f64, ell: u32) -> Result<ResonanceCertificate> {
    check_ascending(rhos)?;
    if !(lambda0 > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "lambda0 must be positive, got {lambda0}"
        )));
    }
    let sigma_hi = 0.5f64.powi(ell as i32);
    let sigma_lo = 0.5 * sigma_hi;
    let needed = lambda0 / (sigma_lo * sigma_lo);
    let max_rho = rhos.last().copied().unwrap_or(f64::NEG_INFINITY);
    if max_rho < needed {
        return Err(Error::InsufficientData(format!(
            "level {ell} needs eigenvalues up to {needed:.3e}, list tops out at {max_rho:.3e}"
        )));
    }

    // Resonant parameters inside the level, ascending.
    let mut points: Vec<f64> = rhos
        .iter()
        .filter(|&&r| r > 0.0)
        .map(|&r| (lambda0 / r).sqrt())
        .filter(|&e| e > sigma_lo && e < sigma_hi)
        .collect();
    points.sort_by(|x, y| x.partial_cmp(y).unwrap());
    let resonant_in_level = points.len();

    // Widest gap between consecutive points, with the interval endpoints as
    // gap boundaries; ties resolve to the lowest-eps gap.
    let mut edges = Vec::with_capacity(points.len() + 2);
    edges.push(sigma_lo);
    edges.extend_from_slice(&points);
    edges.push(sigma_hi);
    let mut best = (0usize, 0.0f64);
    for k in 0..edges.len() - 1 {
        let w = edges[k + 1] - edges[k];
        if w > best.1 + 1e-18 {
            best = (k, w);
        }
    }
    let (a, b) = (edges[best.0], edges[best.0 + 1]);
    let width = b - a;
    let eps = 0.5 * (a + b);

    // Verified gap over the whole supplied list.
    let mut gap = f64::INFINITY;
    for &r in rhos {
        gap = gap.min(lambda_eps(r, eps, lambda0).abs());
    }
    let slope_bound = lambda0 * width / (8.0 * sigma_hi);
    if gap < slope_bound * (1.0 - 1e-9) {
        return Err(Error::Inconsistency(format!(
            "verified gap {gap:.3e} below its a priori floor {slope_bound:.3e} at level {ell}"
        )));
    }
    Ok(ResonanceCertificate {
        ell,
        interval: (sigma_lo, sigma_hi),
        eps,
        a,
        b,
        gap,
        gap_over_eps2: gap / (eps * eps),
        slope_bound,
        resonant_in_level,
        rho_count: rhos.len(),
        lambda0,
    })
}

/// Re-verifies a certificate against an eigenvalue list (possibly richer
/// than the one it was computed from): no resonant value may fall inside
/// `(a, b)`, and the gap scan must reproduce at least the certified gap up
/// to the resolution of the new list.
pub fn verify_certificate(cert: &ResonanceCertificate, rhos: &[f64]) -> Result<()> {
    check_ascending(rhos)?;
    for &r in rhos {
        if r <= 0.0 {
            continue;
        }
        let e = (cert.lambda0 / r).sqrt();
        if e > cert.a && e < cert.b {
            return Err(Error::Inconsistency(format!(
                "resonant value {e:.8} inside certified interval ({:.8}, {:.8})",
                cert.a, cert.b
            )));
        }
    }
    let mut gap = f64::INFINITY;
    for &r in rhos {
        gap = gap.min(lambda_eps(r, cert.eps, cert.lambda0).abs());
    }
    if gap + 1e-15 < cert.gap {
        return Err(Error::Inconsistency(format!(
            "richer list reduces the gap: {gap:.6e} < certified {:.6e}",
            cert.gap
        )));
    }
    Ok(())
}

/// Infimum of `gap / eps^2` over a family of certificates.
pub fn gap_constant(certs: &[ResonanceCertificate]) -> Result<f64> {
    if certs.is_empty() {
        return Err(Error::InsufficientData(
            "gap constant needs at least one certificate".into(),
        ));
    }
    Ok(certs
        .iter()
        .map(|c| c.gap_over_eps2)
        .fold(f64::INFINITY, f64::min))
}
