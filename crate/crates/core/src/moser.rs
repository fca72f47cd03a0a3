//! Moser concentration functions on the inscribed ball of a sector, the two
//! limits they produce, and energy scans along their rays.
//!
//! `w̄_n` is the log-plateau function: `√(ln n / 2π)` on `|x| ≤ 1/n`, decaying
//! like `ln(1/|x|)/√(2π ln n)` to zero at `|x| = 1`. Rescaled to
//! `B(x_m, d_m)` it has unit Dirichlet norm, and with `s = ln(1/r)/ln n` all
//! radial integrals become integrals over `s ∈ [0, 1]`.

use std::f64::consts::PI;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::fem::{Field, FemSpace};
use crate::geometry::{Point, Sector};
use crate::nonlinearity::{safe_bound, Nonlinearity};
use crate::quadrature::integrate_with_breaks;

pub const DEFAULT_N_LIST: [f64; 5] = [4.0, 16.0, 256.0, 1e4, 1e6];

/// Absolute tolerance for `L1`.
pub const L1_TOL: f64 = 1e-12;

fn check_n(n: f64) -> Result<()> {
    if !(n >= 2.0 && n.is_finite()) {
        return Err(Error::InvalidInput(format!("Moser index n must be a finite number >= 2, got {n}")));
    }
    Ok(())
}

/// Plateau height `√(ln n / 2π)`.
pub fn plateau(n: f64) -> f64 {
    (n.ln() / (2.0 * PI)).sqrt()
}

/// `w̄_n` as a function of the radius.
pub fn moser_radial(n: f64, r: f64) -> f64 {
    if r >= 1.0 {
        0.0
    } else if r <= 1.0 / n {
        plateau(n)
    } else {
        (1.0 / r).ln() / (2.0 * PI * n.ln()).sqrt()
    }
}

pub fn moser_bar(n: f64, x: Point) -> Result<f64> {
    check_n(n)?;
    Ok(moser_radial(n, x[0].hypot(x[1])))
}

/// `w_n(x) = w̄_n((x − x_m)/d_m)`, supported in `B(x_m, d_m) ⊂ A_m`.
pub fn moser_scaled(sector: &Sector, n: f64, x: Point) -> Result<f64> {
    check_n(n)?;
    let c = sector.incenter;
    let r = (x[0] - c[0]).hypot(x[1] - c[1]) / sector.inradius;
    Ok(moser_radial(n, r))
}

/// `∫|∇w̄_n|² = 2π ∫_{1/n}^1 r·w̄'(r)² dr` by adaptive quadrature in `r`.
pub fn radial_norm_sq(n: f64) -> Result<f64> {
    check_n(n)?;
    let ln_n = n.ln();
    let integrand = |r: f64| 2.0 * PI * r / (2.0 * PI * ln_n * r * r);
    Ok(integrate_with_breaks(integrand, &geometric_breaks(1.0 / n, 1.0, 64), 1e-14, 1e-13)?.value)
}

fn geometric_breaks(a: f64, b: f64, count: usize) -> Vec<f64> {
    let ratio = (b / a).ln();
    let mut breaks: Vec<f64> = (0..=count).map(|k| a * (ratio * k as f64 / count as f64).exp()).collect();
    breaks[0] = a;
    breaks[count] = b;
    breaks
}

/// `2 ln n ∫₀¹ e^{2 ln n (s² − s)} ds`, which tends to 2.
pub fn limit_l1(n: f64) -> Result<f64> {
    check_n(n)?;
    let k = 2.0 * n.ln();
    let breaks = [0.0, 0.01, 0.05, 0.2, 0.5, 0.8, 0.95, 0.99, 1.0];
    let est = integrate_with_breaks(|s| (k * (s * s - s)).exp(), &breaks, L1_TOL / k, 0.0)?;
    Ok(k * est.value)
}

/// `∫_{B(x_m, d_m)} e^{4π w_n²} = π d_m² (1 + L1(n))`, which tends to `3π d_m²`.
pub fn limit_l2(sector: &Sector, n: f64) -> Result<f64> {
    Ok(PI * sector.inradius.powi(2) * (1.0 + limit_l1(n)?))
}

pub fn l2_limit_value(sector: &Sector) -> f64 {
    3.0 * PI * sector.inradius.powi(2)
}

/// The same integral without the logarithmic substitution: plateau disk plus
/// `2π d² ∫_{1/n}^1 e^{4π w̄(r)²} r dr` in the radius.
pub fn l2_radial_direct(sector: &Sector, n: f64) -> Result<f64> {
    check_n(n)?;
    let d2 = sector.inradius.powi(2);
    let plateau_disk = PI * d2 / (n * n) * (4.0 * PI * plateau(n).powi(2)).exp();
    let est = integrate_with_breaks(
        |r| (4.0 * PI * moser_radial(n, r).powi(2)).exp() * r,
        &geometric_breaks(1.0 / n, 1.0, 128),
        0.0,
        1e-14,
    )?;
    Ok(plateau_disk + 2.0 * PI * d2 * est.value)
}

/// Nested Cartesian quadrature of `∫_{B(x_m, d_m)} e^{4π w_n²}`, independent
/// of any radial reduction. Meant for small `n`.
pub fn l2_cartesian(sector: &Sector, n: f64, rel_tol: f64) -> Result<f64> {
    check_n(n)?;
    let d = sector.inradius;
    let inner_r = 1.0 / n;
    // unit-ball integral, scaled by d² at the end
    let row = |x: f64| -> f64 {
        let half = (1.0 - x * x).max(0.0).sqrt();
        let mut breaks = vec![-half];
        if x.abs() < inner_r {
            let k = (inner_r * inner_r - x * x).sqrt();
            breaks.extend([-k, 0.0, k]);
        } else {
            breaks.push(0.0);
        }
        breaks.push(half);
        integrate_with_breaks(
            |y| (4.0 * PI * moser_radial(n, x.hypot(y)).powi(2)).exp(),
            &breaks,
            0.0,
            0.1 * rel_tol,
        )
        .map(|e| e.value)
        .unwrap_or(f64::NAN)
    };
    let outer = integrate_with_breaks(row, &[-1.0, -inner_r, 0.0, inner_r, 1.0], 0.0, rel_tol)?;
    if !outer.value.is_finite() {
        return Err(Error::Quadrature {
            estimate: f64::INFINITY,
            tolerance: rel_tol,
        });
    }
    Ok(d * d * outer.value)
}

/// Threshold `1/(2π d_m²)` for `lim inf s f(s) e^{−4πs²}`.
pub fn beta_threshold(sector: &Sector) -> f64 {
    1.0 / (2.0 * PI * sector.inradius.powi(2))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ScanResult {
    pub n: f64,
    pub t_star: f64,
    pub max_i: f64,
    pub below_half: bool,
}

/// Maximizes `phi` over `t ≥ 0`: doubling until `phi < 0`, sampling, then
/// golden-section refinement around the best sample.
fn maximize_ray<E: Fn(f64) -> Result<f64>>(phi: E, t0: f64, cap: f64) -> Result<(f64, f64)> {
    let mut end = t0.min(cap);
    while phi(end)? >= 0.0 {
        if end >= cap {
            return Err(Error::NoRidge(format!(
                "I(t·w_n) stays nonnegative up to the safe range t = {cap:.4}; no interior maximum"
            )));
        }
        end = (2.0 * end).min(cap);
    }
    const SAMPLES: usize = 128;
    let samples = (0..=SAMPLES)
        .map(|k| {
            let t = end * k as f64 / SAMPLES as f64;
            phi(t).map(|v| (t, v))
        })
        .collect::<Result<Vec<_>>>()?;
    let k = (1..SAMPLES).fold(1, |best, j| if samples[j].1 > samples[best].1 { j } else { best });
    let (mut a, mut b) = (samples[k - 1].0, samples[k + 1].0);
    let g = 0.5 * (5f64.sqrt() - 1.0);
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    let (mut fc, mut fd) = (phi(c)?, phi(d)?);
    while b - a > 1e-12 * b.max(1.0) {
        if fc >= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = phi(c)?;
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = phi(d)?;
        }
    }
    let t = 0.5 * (a + b);
    Ok((t, phi(t)?))
}

/// `∫_{B(x_m, d_m)} F(t·w_n)` by exact radial reduction.
pub fn radial_nonlinear(nl: &Nonlinearity, sector: &Sector, n: f64, t: f64) -> Result<f64> {
    check_n(n)?;
    let d2 = sector.inradius.powi(2);
    let c = plateau(n);
    let ln_n = n.ln();
    let disk = PI * d2 / (n * n) * nl.primitive(t * c)?;
    // range errors from F are carried out of the integrand closure
    let breaks = [0.0, 0.25, 0.5, 0.75, 0.9, 0.97, 0.99, 0.999, 1.0];
    let err = std::cell::Cell::new(None);
    let est = integrate_with_breaks(
        |s| match nl.primitive(t * c * s) {
            Ok(v) => v * (-2.0 * s * ln_n).exp(),
            Err(e) => {
                err.set(Some(e));
                f64::NAN
            }
        },
        &breaks,
        1e-15,
        1e-12,
    );
    if let Some(e) = err.take() {
        return Err(e);
    }
    Ok(disk + 2.0 * PI * d2 * ln_n * est?.value)
}

/// `max_{t ≥ 0} I(t·w_n)` using `‖w_n‖ = 1` and radial quadrature for `∫F`.
pub fn energy_scan(nl: &Nonlinearity, sector: &Sector, n: f64) -> Result<ScanResult> {
    check_n(n)?;
    // a few ulps of slack so that cap·c never rounds past the bound
    let cap = safe_bound() / plateau(n) * (1.0 - 4.0 * f64::EPSILON);
    let (t_star, max_i) = maximize_ray(|t| Ok(0.5 * t * t - radial_nonlinear(nl, sector, n, t)?), 0.5, cap)?;
    Ok(ScanResult {
        n,
        t_star,
        max_i,
        below_half: max_i < 0.5,
    })
}

/// Largest allowed edge length inside `B(x_m, d_m/n)` for FEM scans.
pub fn required_spacing(sector: &Sector, n: f64) -> f64 {
    sector.inradius / (3.0 * n)
}

/// Interpolant of `w_n`, after checking that the mesh resolves the plateau disk.
pub fn interpolate_moser(space: &FemSpace, sector: &Sector, n: f64) -> Result<Field> {
    check_n(n)?;
    let need = required_spacing(sector, n);
    let have = space
        .mesh
        .local_max_edge(sector.incenter, sector.inradius / n)
        .unwrap_or(f64::INFINITY);
    if have > need {
        return Err(Error::InvalidInput(format!(
            "mesh too coarse for n = {n}: local edge {have:.3e} exceeds d_m/(3n) = {need:.3e}"
        )));
    }
    Ok(space.interpolate(|x| moser_radial(n, (x[0] - sector.incenter[0]).hypot(x[1] - sector.incenter[1]) / sector.inradius)))
}

/// The same scan along the finite-element interpolant of `w_n`.
pub fn energy_scan_fem(nl: &Nonlinearity, sector: &Sector, space: &FemSpace, n: f64) -> Result<ScanResult> {
    let w = interpolate_moser(space, sector, n)?;
    let cap = safe_bound() / w.max_abs() * (1.0 - 4.0 * f64::EPSILON);
    let (t_star, max_i) = maximize_ray(|t| space.energy(nl, &w.scaled(t)), 0.5, cap)?;
    Ok(ScanResult {
        n,
        t_star,
        max_i,
        below_half: max_i < 0.5,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ThresholdProxy {
    pub s: f64,
    /// `s·f(s)·e^{−4πs²}` at the largest safe `s`.
    pub value: f64,
    pub threshold: f64,
    pub exceeds: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MoserRow {
    pub n: f64,
    pub norm: f64,
    pub l1: f64,
    pub l2: f64,
    pub l2_direct: f64,
    /// `None` when the scan has no interior maximum (reported separately).
    pub scan: Option<ScanResult>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MoserReport {
    pub m: u32,
    pub inradius: f64,
    pub rows: Vec<MoserRow>,
    pub l2_limit: f64,
    pub beta_threshold: f64,
    pub proxy: ThresholdProxy,
    pub scan_error: Option<String>,
    pub any_below_half: bool,
}

pub fn moser_report(nl: &Nonlinearity, sector: &Sector, n_list: &[f64]) -> Result<MoserReport> {
    if n_list.is_empty() {
        return Err(Error::InvalidInput("Moser n-list is empty".into()));
    }
    let mut rows = Vec::with_capacity(n_list.len());
    let mut scan_error = None;
    for &n in n_list {
        let scan = match energy_scan(nl, sector, n) {
            Ok(s) => Some(s),
            Err(Error::NoRidge(msg)) => {
                scan_error.get_or_insert(format!("no ridge: {msg}"));
                None
            }
            Err(e) => return Err(e),
        };
        rows.push(MoserRow {
            n,
            norm: radial_norm_sq(n)?.sqrt(),
            l1: limit_l1(n)?,
            l2: limit_l2(sector, n)?,
            l2_direct: l2_radial_direct(sector, n)?,
            scan,
        });
    }
    let s = safe_bound();
    let value = s * nl.f(s)?.abs() * (-4.0 * PI * s * s).exp();
    let threshold = beta_threshold(sector);
    Ok(MoserReport {
        m: sector.m,
        inradius: sector.inradius,
        any_below_half: rows.iter().any(|r| r.scan.is_some_and(|s| s.below_half)),
        rows,
        l2_limit: l2_limit_value(sector),
        beta_threshold: threshold,
        proxy: ThresholdProxy {
            s,
            value,
            threshold,
            exceeds: value > threshold,
        },
        scan_error,
    })
}
