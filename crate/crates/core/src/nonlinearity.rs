//! Odd nonlinearities with exponential critical growth and scan-based
//! verification of the growth hypotheses.
//!
//! Every model evaluates `f(s)` as `sign(s)·g(|s|)`, so oddness holds bitwise
//! for untruncated models. The truncated variant (`f = 0` on `s <= 0`) is the
//! positive-solution mode used by the sector solver.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Sector;
use crate::quadrature;

/// Critical exponent `α₀ = 4π`.
pub const ALPHA0: f64 = 4.0 * PI;

/// Largest admissible value of `4πs²`; `e^{4πs²}` overflows `f64` near 709.
pub const EXPONENT_BUDGET: f64 = 700.0;

/// Largest `|s|` accepted by [`Nonlinearity::f`] and [`Nonlinearity::primitive`].
pub fn safe_bound() -> f64 {
    (EXPONENT_BUDGET / ALPHA0).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Model {
    /// `λ·sign(s)·(1 − e^{−s²})·e^{4πs²}`
    Canonical,
    /// `λ·s³·e^{4πs²}`
    Cubic,
    /// `f ≡ 0`
    Zero,
}

impl FromStr for Model {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "canonical" => Ok(Model::Canonical),
            "cubic" => Ok(Model::Cubic),
            "zero" => Ok(Model::Zero),
            other => Err(Error::InvalidInput(format!(
                "unknown nonlinearity model '{other}' (expected canonical, cubic or zero)"
            ))),
        }
    }
}

impl fmt::Display for Model {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            Model::Canonical => "canonical",
            Model::Cubic => "cubic",
            Model::Zero => "zero",
        };
        f.write_str(name)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Nonlinearity {
    pub model: Model,
    pub lambda: f64,
    pub alpha0: f64,
    pub truncated: bool,
    /// Coefficient `ε` of the even term `ε·e^{s²}` added to `f`; zero for
    /// every physical model, nonzero only in the oddness ablation.
    pub even_perturbation: f64,
}

impl Nonlinearity {
    pub fn new(model: Model, lambda: f64) -> Result<Self> {
        if !(lambda.is_finite() && lambda > 0.0) {
            return Err(Error::InvalidInput(format!("lambda must be positive and finite, got {lambda}")));
        }
        Ok(Self {
            model,
            lambda,
            alpha0: ALPHA0,
            truncated: false,
            even_perturbation: 0.0,
        })
    }

    pub fn canonical(lambda: f64) -> Result<Self> {
        Self::new(Model::Canonical, lambda)
    }

    pub fn zero() -> Self {
        Self::new(Model::Zero, 1.0).expect("unit lambda is valid")
    }

    /// Positive-solution variant: `f(s) = F(s) = 0` for `s <= 0`.
    pub fn truncated(mut self) -> Self {
        self.truncated = true;
        self
    }

    pub fn untruncated(mut self) -> Self {
        self.truncated = false;
        self
    }

    pub fn with_even_perturbation(mut self, eps: f64) -> Self {
        self.even_perturbation = eps;
        self
    }

    pub fn is_odd(&self) -> bool {
        !self.truncated && self.even_perturbation == 0.0
    }

    fn check_range(&self, s: f64) -> Result<()> {
        let bound = safe_bound();
        if !s.is_finite() || s.abs() > bound {
            return Err(Error::Range { value: s, bound });
        }
        Ok(())
    }

    /// `f(s)`.
    pub fn f(&self, s: f64) -> Result<f64> {
        self.check_range(s)?;
        if self.truncated && s <= 0.0 {
            return Ok(0.0);
        }
        let a = s.abs();
        let odd = match self.model {
            Model::Canonical => self.lambda * (-(-a * a).exp_m1()) * (ALPHA0 * a * a).exp(),
            Model::Cubic => self.lambda * a * a * a * (ALPHA0 * a * a).exp(),
            Model::Zero => 0.0,
        };
        let mut value = if s < 0.0 { -odd } else { odd };
        if self.even_perturbation != 0.0 {
            value += self.even_perturbation * (s * s).exp();
        }
        if !value.is_finite() {
            return Err(Error::Range {
                value: s,
                bound: safe_bound(),
            });
        }
        Ok(value)
    }

    /// `f'(s)`; even in `s` for the odd models.
    pub fn df(&self, s: f64) -> Result<f64> {
        self.check_range(s)?;
        if self.truncated && s <= 0.0 {
            return Ok(0.0);
        }
        let a = s.abs();
        let growth = (ALPHA0 * a * a).exp();
        let even = match self.model {
            Model::Canonical => {
                self.lambda * growth * (2.0 * a * (-a * a).exp() - 2.0 * ALPHA0 * a * (-a * a).exp_m1())
            }
            Model::Cubic => self.lambda * growth * a * a * (3.0 + 2.0 * ALPHA0 * a * a),
            Model::Zero => 0.0,
        };
        let mut value = even;
        if self.even_perturbation != 0.0 {
            value += self.even_perturbation * 2.0 * s * (s * s).exp();
        }
        if !value.is_finite() {
            return Err(Error::Range {
                value: s,
                bound: safe_bound(),
            });
        }
        Ok(value)
    }

    /// `F(s) = ∫₀ˢ f(t) dt`.
    pub fn primitive(&self, s: f64) -> Result<f64> {
        self.check_range(s)?;
        if self.truncated && s <= 0.0 {
            return Ok(0.0);
        }
        let a = s.abs();
        let even = match self.model {
            Model::Canonical => self.lambda * canonical_primitive(a)?,
            Model::Cubic => self.lambda * cubic_primitive(a),
            Model::Zero => 0.0,
        };
        let mut value = even;
        if self.even_perturbation != 0.0 {
            value += self.even_perturbation * gauss_primitive(s);
        }
        if !value.is_finite() {
            return Err(Error::Range {
                value: s,
                bound: safe_bound(),
            });
        }
        Ok(value)
    }
}

/// `∫₀ˢ e^{t²} dt` by its everywhere-convergent positive series.
fn gauss_primitive(s: f64) -> f64 {
    let x = s * s;
    let mut power = s;
    let mut sum = s;
    for k in 1..2000 {
        power *= x / k as f64;
        let term = power / (2 * k + 1) as f64;
        sum += term;
        if term.abs() <= 1e-17 * sum.abs() {
            break;
        }
    }
    sum
}

/// Closed form `F(s) = [x e^x − (e^x − 1)]/(32π²)` with `x = 4πs²`, `λ = 1`.
fn cubic_primitive(a: f64) -> f64 {
    let x = ALPHA0 * a * a;
    let scale = 32.0 * PI * PI;
    if x < 0.5 {
        // x e^x − expm1(x) = Σ_{k≥2} (k−1) x^k / k!
        let mut power = x; // x^k / k!
        let mut sum = 0.0;
        for k in 2..60 {
            power *= x / k as f64;
            let term = (k - 1) as f64 * power;
            sum += term;
            if term <= 1e-18 * sum {
                break;
            }
        }
        sum / scale
    } else {
        (x * x.exp() - x.exp_m1()) / scale
    }
}

const SERIES_CUTOFF: f64 = 0.25;
const TABLE_INTERVALS: usize = 16384;

/// Positive series `Σ_{k≥1} (α₀^k − (α₀−1)^k) s^{2k+1} / (k!(2k+1))` for the
/// canonical primitive with `λ = 1`. Converges for every `s`; used below the
/// table cutoff and as an independent reference.
pub fn canonical_primitive_series(a: f64) -> f64 {
    let x = a * a;
    let mut p = 1.0; // (α₀ x)^k / k!
    let mut q = 1.0; // ((α₀ − 1) x)^k / k!
    let mut sum = 0.0;
    for k in 1..5000 {
        let kf = k as f64;
        p *= ALPHA0 * x / kf;
        q *= (ALPHA0 - 1.0) * x / kf;
        let term = (p - q) * a / (2.0 * kf + 1.0);
        sum += term;
        if k > 2 && term <= 1e-17 * sum {
            break;
        }
    }
    sum
}

/// Cubic Hermite table of `G(s) = F(s)·e^{−4πs²}` (canonical model, `λ = 1`).
/// `G` is smooth and bounded, unlike `F` itself.
struct PrimitiveTable {
    step: f64,
    values: Vec<f64>,
    slopes: Vec<f64>,
}

impl PrimitiveTable {
    fn build() -> std::result::Result<Self, (f64, f64)> {
        let upper = safe_bound();
        let step = upper / TABLE_INTERVALS as f64;
        let integrand = |t: f64| (-(-t * t).exp_m1()) * (ALPHA0 * t * t).exp();
        let mut cumulative = 0.0;
        let mut values = Vec::with_capacity(TABLE_INTERVALS + 1);
        let mut slopes = Vec::with_capacity(TABLE_INTERVALS + 1);
        for k in 0..=TABLE_INTERVALS {
            let s = k as f64 * step;
            if k > 0 {
                let a = (k - 1) as f64 * step;
                let est = quadrature::integrate(integrand, a, s, 0.0, 1e-14)
                    .map_err(|e| match e {
                        Error::Quadrature { estimate, tolerance } => (estimate, tolerance),
                        _ => (f64::NAN, 1e-14),
                    })?;
                cumulative += est.value;
            }
            let decay = (-ALPHA0 * s * s).exp();
            let g = cumulative * decay;
            values.push(g);
            slopes.push(-(-s * s).exp_m1() - 2.0 * ALPHA0 * s * g);
        }
        Ok(Self { step, values, slopes })
    }

    fn eval(&self, a: f64) -> f64 {
        let pos = a / self.step;
        let k = (pos.floor() as usize).min(TABLE_INTERVALS - 1);
        let t = pos - k as f64;
        let (t2, t3) = (t * t, t * t * t);
        let h00 = 2.0 * t3 - 3.0 * t2 + 1.0;
        let h10 = t3 - 2.0 * t2 + t;
        let h01 = -2.0 * t3 + 3.0 * t2;
        let h11 = t3 - t2;
        let g = h00 * self.values[k]
            + h10 * self.step * self.slopes[k]
            + h01 * self.values[k + 1]
            + h11 * self.step * self.slopes[k + 1];
        g * (ALPHA0 * a * a).exp()
    }
}

static CANONICAL_TABLE: OnceLock<std::result::Result<PrimitiveTable, (f64, f64)>> = OnceLock::new();

fn canonical_primitive(a: f64) -> Result<f64> {
    if a < SERIES_CUTOFF {
        return Ok(canonical_primitive_series(a));
    }
    match CANONICAL_TABLE.get_or_init(PrimitiveTable::build) {
        Ok(table) => Ok(table.eval(a)),
        Err((estimate, tolerance)) => Err(Error::Quadrature {
            estimate: *estimate,
            tolerance: *tolerance,
        }),
    }
}

// ---------------------------------------------------------------------------
// Hypothesis scan

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Status {
    Pass,
    Fail,
    PassOnScanRange,
}

/// An inequality evaluated at `s` that failed: `lhs relation rhs` was expected.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Witness {
    pub s: f64,
    pub lhs: f64,
    pub rhs: f64,
    pub expected: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub status: Status,
    pub detail: String,
    pub violations: usize,
    pub witnesses: Vec<Witness>,
}

const MAX_WITNESSES: usize = 32;

impl Check {
    fn from_witnesses(ok_status: Status, detail: String, witnesses: Vec<Witness>) -> Self {
        let violations = witnesses.len();
        let status = if violations == 0 { ok_status } else { Status::Fail };
        let mut witnesses = witnesses;
        witnesses.truncate(MAX_WITNESSES);
        Check {
            status,
            detail,
            violations,
            witnesses,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ThresholdCheck {
    pub m: u32,
    pub inradius: f64,
    pub threshold: f64,
    pub value_at_s_max: f64,
    pub status: Status,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScanSpec {
    pub s_max: f64,
    pub points: usize,
    pub sectors: Vec<u32>,
}

impl Default for ScanSpec {
    fn default() -> Self {
        Self {
            s_max: 4.0,
            points: 400,
            sectors: vec![1, 2, 3],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HypothesisReport {
    pub model: Model,
    pub lambda: f64,
    pub truncated: bool,
    pub scan: ScanSpec,
    pub s_safe: f64,
    pub oddness: Check,
    /// `|f(s)| <= C e^{4πs²}` with `C` fitted on the first half of the scan.
    pub f1_strict: Check,
    pub f1_constant: f64,
    /// `|f|e^{−αs²} → 0` for `α > 4π` and `→ ∞` for `α < 4π`.
    pub f1_critical: Check,
    pub f2: Check,
    pub h1: Check,
    pub h1_s0: f64,
    pub h1_m: f64,
    pub h2: Check,
    pub h3: Check,
    pub h3_thresholds: Vec<ThresholdCheck>,
}

impl HypothesisReport {
    pub fn all_pass(&self) -> bool {
        [&self.oddness, &self.f1_strict, &self.f1_critical, &self.f2, &self.h1, &self.h2, &self.h3]
            .iter()
            .all(|c| c.status != Status::Fail)
    }
}

// slack allowed for the fitted (f₁) constant over the second half of the scan
const F1_TAIL_SLACK: f64 = 0.05;

pub fn check_hypotheses(nl: &Nonlinearity, scan: &ScanSpec) -> Result<HypothesisReport> {
    if scan.points == 0 {
        return Err(Error::InvalidInput("hypothesis scan grid is empty".into()));
    }
    if !(scan.s_max > 0.0 && scan.s_max <= safe_bound()) {
        return Err(Error::InvalidInput(format!(
            "scan range (0, {}] must lie inside the safe range (0, {}]",
            scan.s_max,
            safe_bound()
        )));
    }
    let grid: Vec<f64> = (1..=scan.points)
        .map(|k| scan.s_max * k as f64 / scan.points as f64)
        .collect();
    let f_vals = grid.iter().map(|&s| nl.f(s)).collect::<Result<Vec<_>>>()?;
    // f(s)·e^{−4πs²}, evaluated without forming the huge factors twice
    let damped: Vec<f64> = grid
        .iter()
        .zip(&f_vals)
        .map(|(&s, &fv)| fv.abs() * (-ALPHA0 * s * s).exp())
        .collect();

    let oddness = check_oddness(nl, &grid)?;
    let (f1_strict, f1_constant) = check_f1_strict(&grid, &f_vals, &damped, scan.s_max);
    let f1_critical = check_f1_critical(&grid, &damped, scan.s_max);
    let f2 = check_f2(nl, grid[0])?;
    let (h1, h1_s0, h1_m) = check_h1(nl, &grid, scan.s_max)?;
    let h2 = check_h2(nl, &grid)?;
    let (h3, h3_thresholds) = check_h3(&grid, &damped, scan)?;

    Ok(HypothesisReport {
        model: nl.model,
        lambda: nl.lambda,
        truncated: nl.truncated,
        scan: scan.clone(),
        s_safe: safe_bound(),
        oddness,
        f1_strict,
        f1_constant,
        f1_critical,
        f2,
        h1,
        h1_s0,
        h1_m,
        h2,
        h3,
        h3_thresholds,
    })
}

fn check_oddness(nl: &Nonlinearity, grid: &[f64]) -> Result<Check> {
    let mut witnesses = Vec::new();
    if nl.truncated {
        for &s in grid {
            let v = nl.f(-s)?;
            if v != 0.0 {
                witnesses.push(Witness {
                    s: -s,
                    lhs: v,
                    rhs: 0.0,
                    expected: "f(s) == 0".into(),
                });
            }
        }
        return Ok(Check::from_witnesses(
            Status::PassOnScanRange,
            "truncated model: f = 0 on s <= 0 checked instead of oddness".into(),
            witnesses,
        ));
    }
    for &s in grid {
        let (plus, minus) = (nl.f(s)?, nl.f(-s)?);
        if plus + minus != 0.0 {
            witnesses.push(Witness {
                s,
                lhs: plus + minus,
                rhs: 0.0,
                expected: "f(s) + f(-s) == 0".into(),
            });
        }
    }
    Ok(Check::from_witnesses(
        Status::Pass,
        "f(-s) = -f(s) bitwise at every grid point".into(),
        witnesses,
    ))
}

fn check_f1_strict(grid: &[f64], f_vals: &[f64], damped: &[f64], s_max: f64) -> (Check, f64) {
    let head = damped
        .iter()
        .zip(grid)
        .filter(|(_, &s)| s <= 0.5 * s_max)
        .map(|(d, _)| *d)
        .fold(0.0, f64::max);
    let bound = head * (1.0 + F1_TAIL_SLACK);
    let mut witnesses = Vec::new();
    for ((&s, &fv), &d) in grid.iter().zip(f_vals).zip(damped) {
        if d > bound {
            witnesses.push(Witness {
                s,
                lhs: fv.abs(),
                rhs: bound * (ALPHA0 * s * s).exp(),
                expected: "|f(s)| <= C e^{4πs²}".into(),
            });
        }
    }
    let constant = damped.iter().copied().fold(head, f64::max);
    let detail = format!(
        "C fitted as sup of |f|e^(-4πs²) on (0, {:.3}] = {head:.6e}; tail allowed {:.0}% above",
        0.5 * s_max,
        100.0 * F1_TAIL_SLACK
    );
    (
        Check::from_witnesses(Status::PassOnScanRange, detail, witnesses),
        constant,
    )
}

fn check_f1_critical(grid: &[f64], damped: &[f64], s_max: f64) -> Check {
    // log-ratio ln|f| − αs² for α = 4π(1 ± 10%), compared between s_max/2 and s_max
    let idx_half = grid.iter().position(|&s| s >= 0.5 * s_max).unwrap_or(0);
    let idx_end = grid.len() - 1;
    let mut witnesses = Vec::new();
    for factor in [1.1, 0.9] {
        let alpha = ALPHA0 * factor;
        let log_ratio = |i: usize| damped[i].ln() + (ALPHA0 - alpha) * grid[i] * grid[i];
        let (mid, end) = (log_ratio(idx_half), log_ratio(idx_end));
        let ok = if factor > 1.0 {
            end.is_finite() && end < mid - 1.0
        } else {
            end.is_finite() && end > mid + 1.0
        };
        if !ok {
            witnesses.push(Witness {
                s: grid[idx_end],
                lhs: end,
                rhs: mid,
                expected: if factor > 1.0 {
                    format!("ln|f|-αs² decreasing for α={alpha:.4} (>4π)")
                } else {
                    format!("ln|f|-αs² increasing for α={alpha:.4} (<4π)")
                },
            });
        }
    }
    Check::from_witnesses(
        Status::PassOnScanRange,
        "log-ratio trend between s_max/2 and s_max for α = 0.9·4π and 1.1·4π".into(),
        witnesses,
    )
}

fn check_f2(nl: &Nonlinearity, s_first: f64) -> Result<Check> {
    let ratios = (0..40)
        .map(|j| {
            let s = s_first * 0.5f64.powi(j);
            nl.f(s).map(|v| (s, v / s))
        })
        .collect::<Result<Vec<_>>>()?;
    let (s_last, r_last) = *ratios.last().expect("nonempty");
    let mut witnesses = Vec::new();
    let tail_monotone = ratios[ratios.len() - 10..]
        .windows(2)
        .all(|w| w[1].1.abs() <= w[0].1.abs());
    if r_last.abs() > 1e-6 || !tail_monotone {
        witnesses.push(Witness {
            s: s_last,
            lhs: r_last,
            rhs: 0.0,
            expected: "f(s)/s -> 0 as s -> 0".into(),
        });
    }
    Ok(Check::from_witnesses(
        Status::PassOnScanRange,
        format!("f(s)/s = {r_last:.3e} at s = {s_last:.3e}"),
        witnesses,
    ))
}

fn check_h1(nl: &Nonlinearity, grid: &[f64], s_max: f64) -> Result<(Check, f64, f64)> {
    let s0 = 0.25 * s_max;
    let signs: &[f64] = if nl.truncated { &[1.0] } else { &[1.0, -1.0] };
    let mut ratios = Vec::new();
    let mut witnesses = Vec::new();
    for &sign in signs {
        for &s in grid.iter().filter(|&&s| s >= s0) {
            let x = sign * s;
            let (fv, pv) = (nl.f(x)?, nl.primitive(x)?);
            if pv <= 0.0 || fv == 0.0 {
                witnesses.push(Witness {
                    s: x,
                    lhs: pv,
                    rhs: 0.0,
                    expected: "0 < F(s) with f(s) != 0".into(),
                });
            } else {
                ratios.push(pv / fv.abs());
            }
        }
    }
    let m_fit = ratios.iter().copied().fold(0.0, f64::max);
    // the fitted ratio must not still be growing at the end of the scan
    if let [.., a, b] = ratios[..] {
        if witnesses.is_empty() && b > a * (1.0 + 1e-9) && b >= m_fit {
            witnesses.push(Witness {
                s: s_max,
                lhs: b,
                rhs: a,
                expected: "F/|f| bounded (non-increasing at the end of the scan)".into(),
            });
        }
    }
    Ok((
        Check::from_witnesses(
            Status::PassOnScanRange,
            format!("s0 = {s0:.3}, M = sup F/|f| on the tail = {m_fit:.6e}"),
            witnesses,
        ),
        s0,
        m_fit,
    ))
}

fn check_h2(nl: &Nonlinearity, grid: &[f64]) -> Result<Check> {
    let signs: &[f64] = if nl.truncated { &[1.0] } else { &[1.0, -1.0] };
    let mut witnesses = Vec::new();
    for &sign in signs {
        for &s in grid {
            let x = sign * s;
            let (fv, pv) = (nl.f(x)?, nl.primitive(x)?);
            let half = 0.5 * fv * x;
            if !(pv > 0.0 && pv <= half) {
                witnesses.push(Witness {
                    s: x,
                    lhs: pv,
                    rhs: half,
                    expected: "0 < F(s) <= f(s)s/2".into(),
                });
            }
        }
    }
    let detail = if nl.truncated {
        "checked on s > 0 only (truncated model)".to_string()
    } else {
        "checked on both signs".to_string()
    };
    Ok(Check::from_witnesses(Status::PassOnScanRange, detail, witnesses))
}

fn check_h3(grid: &[f64], damped: &[f64], scan: &ScanSpec) -> Result<(Check, Vec<ThresholdCheck>)> {
    let q: Vec<f64> = grid.iter().zip(damped).map(|(&s, &d)| s * d).collect();
    let mut witnesses = Vec::new();
    for (&s, &v) in grid.iter().zip(&q) {
        if v <= 0.0 {
            witnesses.push(Witness {
                s,
                lhs: v,
                rhs: 0.0,
                expected: "s f(s) e^{-4πs²} > 0".into(),
            });
        }
    }
    for (i, w) in q.windows(2).enumerate() {
        let s = grid[i + 1];
        if s >= 0.5 * scan.s_max && w[0] > 0.0 && w[1] < w[0] {
            witnesses.push(Witness {
                s,
                lhs: w[1],
                rhs: w[0],
                expected: "s f(s) e^{-4πs²} increasing on the tail".into(),
            });
        }
    }
    let end = *q.last().expect("nonempty grid");
    let thresholds = scan
        .sectors
        .iter()
        .map(|&m| {
            let sector = Sector::new(m)?;
            let threshold = 1.0 / (2.0 * PI * sector.inradius * sector.inradius);
            Ok(ThresholdCheck {
                m,
                inradius: sector.inradius,
                threshold,
                value_at_s_max: end,
                status: if end > threshold {
                    Status::PassOnScanRange
                } else {
                    Status::Fail
                },
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((
        Check::from_witnesses(
            Status::PassOnScanRange,
            format!("s f(s) e^(-4πs²) = {end:.6e} at s_max = {}", scan.s_max),
            witnesses,
        ),
        thresholds,
    ))
}
