//! Mountain-pass solver for the positive solution on a sector.
//!
//! Paths are rays `t ↦ t·v` from 0 to an endpoint of negative energy. For
//! `f(s)/s` increasing each ray carries exactly one maximum, so the pass level
//! of the ray family is `J(v) = max_t I(t·v)`; the solver descends `J` along
//! the `H₀¹` gradient `K⁻¹∇I` with Armijo backtracking and re-projects onto
//! the ray maximum after every step. The `nehari` mode is the same descent
//! with the projection done by a scalar root solve only (no path sampling).

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fem::{conjugate_gradient, minres_with, Field, FemSpace};
use crate::geometry::{refine_toward, Point, Sector, TriMesh, MERGE_TOL};
use crate::nonlinearity::{safe_bound, Nonlinearity};
use crate::quadrature::TriangleRule;

const ARMIJO: f64 = 1e-4;
const MIN_STEP: f64 = 1e-10;
/// Gradient level (relative to `max(1, ‖u‖)`) below which Newton polishing starts.
const NEWTON_SWITCH: f64 = 1e-2;
/// Level drop (relative to the first level) treated as sliding off the ridge.
const COLLAPSE_RATIO: f64 = 1e-6;
/// Smallest edge length requested from peak refinement.
const REFINE_FLOOR: f64 = 1e3 * MERGE_TOL;
/// Nodal values above `−POSITIVITY_TOL` count as nonnegative.
pub const POSITIVITY_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SolverMode {
    Mpa,
    Nehari,
}

impl FromStr for SolverMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "mpa" => Ok(SolverMode::Mpa),
            "nehari" => Ok(SolverMode::Nehari),
            other => Err(Error::InvalidInput(format!("unknown solver mode '{other}' (expected mpa or nehari)"))),
        }
    }
}

impl fmt::Display for SolverMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SolverMode::Mpa => "mpa",
            SolverMode::Nehari => "nehari",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SolverOptions {
    pub mode: SolverMode,
    /// Relative gradient tolerance: stop when `‖∇I‖ ≤ tol·max(1, ‖u‖)`.
    pub tol: f64,
    pub path_points: usize,
    pub max_iters: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            mode: SolverMode::Mpa,
            tol: 1e-6,
            path_points: 64,
            max_iters: 500,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub level: f64,
    pub grad_norm: f64,
    pub step: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MountainPassResult {
    pub u: Field,
    pub level: f64,
    pub grad_norm: f64,
    pub iterations: usize,
    /// `(t, I(t·e))` along the final path, `t ∈ [0, 1]`.
    pub path_trace: Vec<(f64, f64)>,
    pub positive: bool,
    pub min_value: f64,
    pub norm: f64,
    pub history: Vec<IterationRecord>,
}

/// `max(1, ‖u‖)`-relative stopping test shared with reports.
pub fn converged(grad_norm: f64, norm: f64, tol: f64) -> bool {
    grad_norm <= tol * norm.max(1.0)
}

/// Smooth bump `exp(1 − 1/(1 − ρ²))` on `B(x_m, d_m/2)`, peak value 1.
pub fn bump(space: &FemSpace, sector: &Sector) -> Result<Field> {
    let c = sector.incenter;
    let radius = 0.5 * sector.inradius;
    let phi = space.interpolate(|x| {
        let rho2 = ((x[0] - c[0]).powi(2) + (x[1] - c[1]).powi(2)) / (radius * radius);
        if rho2 < 1.0 {
            (1.0 - 1.0 / (1.0 - rho2)).exp()
        } else {
            0.0
        }
    });
    if phi.values.iter().filter(|&&v| v > 0.0).count() < 3 {
        return Err(Error::InvalidInput("mesh does not resolve the bump on B(x_m, d_m/2)".into()));
    }
    Ok(phi)
}

/// Doubling scan for `e = t₀·phi` with `I(e) < 0`.
pub fn find_endpoint(nl: &Nonlinearity, space: &FemSpace, phi: &Field) -> Result<(f64, Field)> {
    let peak = phi.max_abs();
    if peak == 0.0 || phi.values.iter().any(|&v| v < 0.0) {
        return Err(Error::InvalidInput("endpoint direction must be nonnegative and nonzero".into()));
    }
    let cap = safe_bound() / peak * (1.0 - 4.0 * f64::EPSILON);
    let mut t = 0.125 / peak;
    let first = space.energy(nl, &phi.scaled(t))?;
    if !(first > 0.0) {
        return Err(Error::NoRidge(format!(
            "I(t·phi) = {first:e} is not positive at small t = {t}; mountain-pass geometry fails"
        )));
    }
    loop {
        t = (2.0 * t).min(cap);
        let e = phi.scaled(t);
        if space.energy(nl, &e)? < 0.0 {
            return Ok((t, e));
        }
        if t >= cap {
            return Err(Error::NoRidge(format!(
                "energy along the bump stays positive up to the safe range (t = {t:.4}); \
                 increase lambda or use a narrower bump"
            )));
        }
    }
}

/// Energy restricted to the ray `t·v`.
struct Ray<'a> {
    space: &'a FemSpace,
    nl: &'a Nonlinearity,
    v: &'a Field,
    norm_sq: f64,
    cap: f64,
}

impl<'a> Ray<'a> {
    fn new(space: &'a FemSpace, nl: &'a Nonlinearity, v: &'a Field) -> Result<Self> {
        let peak = v.max_abs();
        let norm = space.h1_norm(v);
        if peak == 0.0 || norm == 0.0 {
            return Err(Error::InvalidInput("ray direction is zero".into()));
        }
        Ok(Self {
            space,
            nl,
            v,
            norm_sq: norm * norm,
            cap: safe_bound() / peak * (1.0 - 4.0 * f64::EPSILON),
        })
    }

    fn energy(&self, t: f64) -> Result<f64> {
        Ok(0.5 * t * t * self.norm_sq - self.space.nonlinear_integral(self.nl, &self.v.scaled(t))?)
    }

    /// `d/dt I(t·v)`, and its scale for relative stopping.
    fn slope(&self, t: f64) -> Result<(f64, f64)> {
        let load = self.space.directional_load(self.nl, &self.v.scaled(t), self.v)?;
        let quad = t * self.norm_sq;
        Ok((quad - load, quad.abs() + load.abs()))
    }

    /// Root of the slope inside a sign-changing bracket.
    fn refine(&self, mut lo: f64, mut hi: f64) -> Result<f64> {
        let (mut f_lo, _) = self.slope(lo)?;
        let (mut f_hi, _) = self.slope(hi)?;
        if !(f_lo > 0.0 && f_hi < 0.0) {
            return Err(Error::NoRidge(format!("slope does not change sign on [{lo}, {hi}]")));
        }
        // Illinois-modified regula falsi with bisection fallback
        let mut side = 0i8;
        for _ in 0..200 {
            let mut t = hi - f_hi * (hi - lo) / (f_hi - f_lo);
            if !(t > lo && t < hi) {
                t = 0.5 * (lo + hi);
            }
            let (f, scale) = self.slope(t)?;
            if f.abs() <= 1e-14 * scale || hi - lo <= 4.0 * f64::EPSILON * hi {
                return Ok(t);
            }
            if f > 0.0 {
                lo = t;
                f_lo = f;
                if side == 1 {
                    f_hi *= 0.5;
                }
                side = 1;
            } else {
                hi = t;
                f_hi = f;
                if side == -1 {
                    f_lo *= 0.5;
                }
                side = -1;
            }
        }
        Ok(0.5 * (lo + hi))
    }

    /// Maximizer of `I(t·v)` searched outward from `guess`.
    fn maximize(&self, guess: f64) -> Result<f64> {
        let mut factor = 1.05f64;
        let mut lo = guess.min(0.5 * self.cap);
        let mut hi = lo;
        let (s, _) = self.slope(lo)?;
        if s > 0.0 {
            loop {
                hi = (hi * factor).min(self.cap);
                if self.slope(hi)?.0 < 0.0 {
                    break;
                }
                if hi >= self.cap {
                    return Err(Error::NoRidge(
                        "energy keeps increasing along the ray up to the safe range".into(),
                    ));
                }
                lo = hi;
                factor *= factor;
            }
        } else {
            loop {
                lo /= factor;
                if self.slope(lo)?.0 > 0.0 {
                    break;
                }
                if lo < 1e-12 * guess {
                    return Err(Error::RidgeCollapse {
                        level: 0.0,
                        iterations: 0,
                    });
                }
                hi = lo;
                factor *= factor;
            }
        }
        self.refine(lo, hi)
    }

    /// Samples the path from 0 to the first scale with negative energy, refines
    /// samples around the discrete maximum, and locates it exactly.
    fn sample(&self, guess: f64, points: usize) -> Result<(f64, Vec<(f64, f64)>)> {
        let mut end = (2.0 * guess).min(self.cap);
        while self.energy(end)? >= 0.0 {
            if end >= self.cap {
                return Err(Error::NoRidge("no negative-energy endpoint within the safe range".into()));
            }
            end = (2.0 * end).min(self.cap);
        }
        let mut samples: Vec<(f64, f64)> = (0..=points)
            .map(|k| {
                let t = end * k as f64 / points as f64;
                self.energy(t).map(|e| (t, e))
            })
            .collect::<Result<_>>()?;
        for _ in 0..12 {
            let k = argmax(&samples);
            let level = samples[k].1.abs().max(f64::MIN_POSITIVE);
            let lo = k.saturating_sub(1);
            let hi = (k + 1).min(samples.len() - 1);
            let coarse = (lo..hi).any(|j| (samples[j + 1].1 - samples[j].1).abs() > 0.1 * level);
            if !coarse {
                break;
            }
            // bisect both intervals next to the maximum, right one first to keep indices valid
            for j in (lo..hi).rev() {
                let t = 0.5 * (samples[j].0 + samples[j + 1].0);
                samples.insert(j + 1, (t, self.energy(t)?));
            }
        }
        let k = argmax(&samples);
        if k == 0 || k + 1 == samples.len() {
            return Err(Error::NoRidge("path maximum sits at an endpoint".into()));
        }
        let t = self.refine(samples[k - 1].0, samples[k + 1].0)?;
        let trace = samples.iter().map(|&(s, e)| (s / end, e)).collect();
        Ok((t, trace))
    }
}

fn argmax(samples: &[(f64, f64)]) -> usize {
    let mut best = 0;
    for (i, s) in samples.iter().enumerate() {
        if s.1 > samples[best].1 {
            best = i;
        }
    }
    best
}

struct Projected {
    u: Field,
    level: f64,
    trace: Vec<(f64, f64)>,
}

fn project(
    space: &FemSpace,
    nl: &Nonlinearity,
    v: &Field,
    guess: f64,
    opts: &SolverOptions,
    sample: bool,
) -> Result<Projected> {
    let ray = Ray::new(space, nl, v)?;
    let (t, trace) = if sample && opts.mode == SolverMode::Mpa {
        ray.sample(guess, opts.path_points)?
    } else {
        (ray.maximize(guess)?, Vec::new())
    };
    Ok(Projected {
        u: v.scaled(t),
        level: ray.energy(t)?,
        trace,
    })
}

pub fn mountain_pass(
    nl: &Nonlinearity,
    space: &FemSpace,
    sector: &Sector,
    opts: &SolverOptions,
) -> Result<MountainPassResult> {
    mountain_pass_from(nl, space, sector, opts, None)
}

/// [`mountain_pass`] started along `start` instead of the default bump.
pub fn mountain_pass_from(
    nl: &Nonlinearity,
    space: &FemSpace,
    sector: &Sector,
    opts: &SolverOptions,
    start: Option<&Field>,
) -> Result<MountainPassResult> {
    if !nl.truncated {
        return Err(Error::InvalidInput(
            "the sector solver needs the truncated nonlinearity (f = 0 for s <= 0)".into(),
        ));
    }
    if opts.path_points < 4 || !(opts.tol > 0.0) || opts.max_iters == 0 {
        return Err(Error::InvalidInput(format!(
            "invalid solver options: tol {}, path_points {}, max_iters {}",
            opts.tol, opts.path_points, opts.max_iters
        )));
    }
    let phi = match start {
        Some(v) => {
            if v.len() != space.mesh.nodes.len() {
                return Err(Error::InvalidInput("start direction does not match the mesh".into()));
            }
            space.field(v.values.clone())?
        }
        None => bump(space, sector)?,
    };
    let (_, endpoint) = find_endpoint(nl, space, &phi)?;

    let mut current = project(space, nl, &endpoint, 0.5, opts, true)?;
    let first_level = current.level;
    if !(first_level > 0.0) {
        return Err(Error::RidgeCollapse {
            level: first_level,
            iterations: 0,
        });
    }
    let mut history = Vec::new();
    let mut alpha_prev: f64 = 0.5;
    let mut iteration = 0;
    // gradient norm below which the next Newton correction is attempted
    let mut newton_gate = NEWTON_SWITCH;
    let mut memory = Lbfgs::default();
    let mut previous: Option<(Field, Vec<f64>)> = None;
    loop {
        let g = space.grad_free(nl, &current.u)?;
        let w = space.solve(&g)?;
        let grad_norm = dot(&g, &w).max(0.0).sqrt();
        let norm = space.h1_norm(&current.u);
        history.push(IterationRecord {
            iteration,
            level: current.level,
            grad_norm,
            step: if iteration == 0 { 0.0 } else { alpha_prev },
        });
        if converged(grad_norm, norm, opts.tol) {
            return finish(nl, space, opts, current, grad_norm, iteration, history);
        }
        if iteration >= opts.max_iters {
            return Err(stalled(iteration, grad_norm, &history));
        }
        iteration += 1;
        if let Some((u_prev, g_prev)) = previous.take() {
            let s_vec = space.reduce(&current.u).iter().zip(space.reduce(&u_prev)).map(|(a, b)| a - b).collect();
            let y_vec = g.iter().zip(&g_prev).map(|(a, b)| a - b).collect();
            memory.push(s_vec, y_vec, space)?;
        }

        if grad_norm <= newton_gate * norm.max(1.0) {
            match newton_step(nl, space, opts, &current, &g, grad_norm) {
                Some(next) => {
                    alpha_prev = 1.0;
                    previous = Some((current.u, g));
                    current = next;
                    newton_gate = f64::INFINITY;
                    continue;
                }
                // not yet in the Newton basin; retry after more descent
                None => newton_gate = 0.5 * grad_norm / norm.max(1.0),
            }
        }

        // quasi-Newton direction in the K-metric, steepest descent as fallback
        let (direction, slope, quasi) = match memory.direction(&g, &w, space)? {
            Some(d) => {
                let slope = dot(&g, &d);
                if slope > 0.0 {
                    (d, slope, true)
                } else {
                    (w.clone(), grad_norm * grad_norm, false)
                }
            }
            None => (w.clone(), grad_norm * grad_norm, false),
        };
        let direction = space.extend(&direction);
        let mut alpha = if quasi { 1.0 } else { (2.0 * alpha_prev).min(1.0) };
        let accepted = loop {
            let trial = Field {
                values: current
                    .u
                    .values
                    .iter()
                    .zip(&direction.values)
                    .map(|(u, d)| u - alpha * d)
                    .collect(),
            };
            if let Ok(p) = project(space, nl, &trial, 1.0, opts, false) {
                let required = ARMIJO * alpha * slope;
                let decrease = current.level - p.level;
                let roundoff = 1e-13 * current.level.abs();
                if decrease >= required || (required <= roundoff && decrease >= -roundoff) {
                    break Some((trial, p));
                }
            }
            alpha *= 0.5;
            if alpha < MIN_STEP {
                break None;
            }
        };
        let Some((trial, p)) = accepted else {
            if quasi {
                // stale curvature pairs; restart from steepest descent
                memory.clear();
                continue;
            }
            return Err(stalled(iteration, grad_norm, &history));
        };
        alpha_prev = alpha;
        previous = Some((current.u, g));
        current = if opts.mode == SolverMode::Mpa {
            // re-interpolate the path through the new direction
            let guess = space.h1_norm(&p.u) / space.h1_norm(&trial);
            project(space, nl, &trial, guess, opts, true)?
        } else {
            p
        };
        if current.level < COLLAPSE_RATIO * first_level {
            return Err(Error::RidgeCollapse {
                level: current.level,
                iterations: iteration,
            });
        }
    }
}

const LBFGS_MEMORY: usize = 8;

/// Limited-memory BFGS pairs `(s, y)` for the pass level along the ridge,
/// with `K⁻¹` as the initial inverse Hessian.
#[derive(Default)]
struct Lbfgs {
    pairs: std::collections::VecDeque<(Vec<f64>, Vec<f64>, f64)>,
    gamma: f64,
}

impl Lbfgs {
    fn clear(&mut self) {
        self.pairs.clear();
    }

    fn push(&mut self, s: Vec<f64>, y: Vec<f64>, space: &FemSpace) -> Result<()> {
        let sy = dot(&s, &y);
        let ky = space.solve(&y)?;
        let yky = dot(&y, &ky);
        // skip pairs without positive curvature
        if !(sy > 1e-12 * dot(&s, &s).sqrt() * dot(&y, &y).sqrt()) || !(yky > 0.0) {
            return Ok(());
        }
        self.gamma = sy / yky;
        if self.pairs.len() == LBFGS_MEMORY {
            self.pairs.pop_front();
        }
        self.pairs.push_back((s, y, 1.0 / sy));
        Ok(())
    }

    /// Two-loop recursion; `w = K⁻¹g` is reused when only the initial
    /// inverse Hessian changes.
    fn direction(&self, g: &[f64], w: &[f64], space: &FemSpace) -> Result<Option<Vec<f64>>> {
        if self.pairs.is_empty() {
            return Ok(None);
        }
        let mut q = g.to_vec();
        let mut alphas = Vec::with_capacity(self.pairs.len());
        for (s, y, rho) in self.pairs.iter().rev() {
            let a = rho * dot(s, &q);
            for (qi, yi) in q.iter_mut().zip(y) {
                *qi -= a * yi;
            }
            alphas.push(a);
        }
        let mut r = if alphas.iter().all(|&a| a == 0.0) {
            w.to_vec()
        } else {
            space.solve(&q)?
        };
        for v in r.iter_mut() {
            *v *= self.gamma;
        }
        for ((s, y, rho), a) in self.pairs.iter().zip(alphas.iter().rev()) {
            let b = rho * dot(y, &r);
            for (ri, si) in r.iter_mut().zip(s) {
                *ri += (a - b) * si;
            }
        }
        Ok(Some(r))
    }
}

/// Controls for resolving the solution peak by local refinement.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FocusOptions {
    /// Maximum number of refine-and-resolve rounds after the first solve; 0 disables.
    pub rounds: usize,
    /// Required ratio of the peak half-width to the local edge length.
    pub resolution: f64,
    /// Growth of the target edge length with distance from the peak.
    pub rate: f64,
    /// Relative level change between rounds accepted as converged.
    pub level_tol: f64,
}

impl Default for FocusOptions {
    fn default() -> Self {
        Self {
            rounds: 8,
            resolution: 8.0,
            rate: 0.25,
            level_tol: 1e-3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FocusRound {
    pub nodes: usize,
    pub level: f64,
    pub iterations: usize,
    pub peak: Point,
    /// Radius of the nonlinear core, see [`peak_profile`].
    pub width: f64,
    /// Longest edge within `width` of the peak.
    pub spacing: f64,
}

#[derive(Debug, Clone)]
pub struct SectorSolution {
    pub space: FemSpace,
    pub result: MountainPassResult,
    pub rounds: Vec<FocusRound>,
    /// Whether the final mesh met the peak resolution.
    pub resolved: bool,
    /// Whether the level settled to `level_tol` between the last two rounds.
    pub level_settled: bool,
}

/// Peak location of a nonnegative field and the width of its nonlinear core:
/// the radius of a disk with the area of `{F(u) ≥ F(max u)/2}`.
pub fn peak_profile(nl: &Nonlinearity, space: &FemSpace, u: &Field) -> Result<(Point, f64)> {
    let (mut best, mut peak) = (0, f64::NEG_INFINITY);
    for (i, &v) in u.values.iter().enumerate() {
        if v > peak {
            best = i;
            peak = v;
        }
    }
    let top = nl.primitive(peak)?;
    let density = u.values.iter().map(|&v| nl.primitive(v)).collect::<Result<Vec<_>>>()?;
    let mut area = 0.0;
    for (tri, geo) in space.mesh.triangles.iter().zip(space.elements()) {
        let inside = tri.iter().filter(|&&i| density[i] >= 0.5 * top).count();
        area += geo.area * inside as f64 / 3.0;
    }
    Ok((space.mesh.nodes[best], (area / std::f64::consts::PI).sqrt()))
}

/// Mountain-pass solve on `base`, re-solved on meshes refined toward the
/// solution peak until its half-width spans `resolution` local edges.
///
/// Least-energy solutions concentrate strongly for narrow sectors, so a
/// quasi-uniform mesh alone overestimates the pass level.
pub fn solve_sector(
    nl: &Nonlinearity,
    sector: &Sector,
    base: &TriMesh,
    rule: &TriangleRule,
    opts: &SolverOptions,
    focus: &FocusOptions,
) -> Result<SectorSolution> {
    if !(focus.resolution >= 1.0 && focus.rate > 0.0) {
        return Err(Error::InvalidInput(format!(
            "focus resolution must be >= 1 and rate > 0, got {} and {}",
            focus.resolution, focus.rate
        )));
    }
    let mut space = FemSpace::with_rule(base.clone(), rule.clone())?;
    let mut start: Option<Field> = None;
    let mut rounds = Vec::new();
    loop {
        let result = mountain_pass_from(nl, &space, sector, opts, start.as_ref())?;
        let (peak, width) = peak_profile(nl, &space, &result.u)?;
        let peak = [0.0, peak[1]];
        let spacing = space.mesh.local_max_edge(peak, width).unwrap_or(f64::INFINITY);
        rounds.push(FocusRound {
            nodes: space.mesh.nodes.len(),
            level: result.level,
            iterations: result.iterations,
            peak,
            width,
            spacing,
        });
        let resolved = spacing * focus.resolution <= width;
        let n = rounds.len();
        let level_settled = n >= 2 && (rounds[n - 1].level - rounds[n - 2].level).abs() <= focus.level_tol * rounds[n - 1].level.abs();
        let stuck = n >= 2 && rounds[n - 2].nodes == rounds[n - 1].nodes;
        if resolved || level_settled || stuck || n > focus.rounds {
            return Ok(SectorSolution {
                space,
                result,
                rounds,
                resolved,
                level_settled,
            });
        }
        // at least a fourfold refinement per round, down to the merge resolution
        let h_min = (width / focus.resolution).min(0.25 * spacing).max(REFINE_FLOOR);
        let mesh = refine_toward(base, peak, width, h_min, focus.rate)?;
        space = FemSpace::with_rule(mesh, rule.clone())?;
        let radius = (2.0 * width).min(0.9 * sector.boundary_distance(peak));
        start = Some(space.interpolate(|x| {
            let rho2 = ((x[0] - peak[0]).powi(2) + (x[1] - peak[1]).powi(2)) / (radius * radius);
            if rho2 < 1.0 {
                (1.0 - 1.0 / (1.0 - rho2)).exp()
            } else {
                0.0
            }
        }));
    }
}

/// Damped Newton correction `u − θ(K − B(u))⁻¹∇I(u)`, projected back onto
/// its ray maximum.
///
/// Accepted only if the pass level `J` does not increase and the gradient
/// norm drops, so polishing cannot climb to a neighbouring critical point of
/// higher energy.
fn newton_step(
    nl: &Nonlinearity,
    space: &FemSpace,
    opts: &SolverOptions,
    current: &Projected,
    g: &[f64],
    grad_norm: f64,
) -> Option<Projected> {
    let hessian = space.tangent_matrix(nl, &current.u).ok()?;
    // K⁻¹(K − B) = I − K⁻¹B clusters near 1 whatever the mesh grading
    let precond = |r: &[f64]| conjugate_gradient(&space.stiffness, r, 1e-12, 10 * r.len().max(100)).map(|o| o.x);
    let delta = space.extend(&minres_with(&hessian, g, precond, 1e-9, 500).ok()?.x);
    let mut theta = 1.0;
    for _ in 0..3 {
        let candidate = Field {
            values: current
                .u
                .values
                .iter()
                .zip(&delta.values)
                .map(|(u, d)| u - theta * d)
                .collect(),
        };
        if let Ok(p) = project(space, nl, &candidate, 1.0, opts, false) {
            let g_next = space.grad_free(nl, &p.u).ok()?;
            let w_next = space.solve(&g_next).ok()?;
            let grad_next = dot(&g_next, &w_next).max(0.0).sqrt();
            let not_uphill = p.level <= current.level + 1e-13 * current.level.abs();
            if not_uphill && grad_next <= (1.0 - 0.5 * theta) * grad_norm {
                return Some(p);
            }
        }
        theta *= 0.5;
    }
    None
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn stalled(iterations: usize, grad_norm: f64, history: &[IterationRecord]) -> Error {
    Error::Stalled {
        iterations,
        grad_norm,
        trace: history.iter().map(|r| (r.level, r.grad_norm)).collect(),
    }
}

fn finish(
    nl: &Nonlinearity,
    space: &FemSpace,
    opts: &SolverOptions,
    current: Projected,
    grad_norm: f64,
    iterations: usize,
    history: Vec<IterationRecord>,
) -> Result<MountainPassResult> {
    let trace = if current.trace.is_empty() {
        let ray = Ray::new(space, nl, &current.u)?;
        ray.sample(1.0, opts.path_points)?.1
    } else {
        current.trace
    };
    let min_value = space
        .dofs
        .dof_to_node
        .iter()
        .map(|&i| current.u.values[i])
        .fold(f64::INFINITY, f64::min);
    let positive = min_value >= -POSITIVITY_TOL;
    if !positive {
        return Err(Error::Invariant(format!(
            "mountain-pass solution is not nonnegative: min nodal value {min_value:e}"
        )));
    }
    Ok(MountainPassResult {
        norm: space.h1_norm(&current.u),
        u: current.u,
        level: current.level,
        grad_norm,
        iterations,
        path_trace: trace,
        positive,
        min_value,
        history,
    })
}

/// Independent nodal residual `max_i |(Ku − b(u))_i| / K_ii` over free nodes.
///
/// Re-assembles element by element from coordinates; shares no matrices with
/// the solver.
pub fn residual_check(nl: &Nonlinearity, mesh: &TriMesh, rule: &TriangleRule, u: &Field) -> Result<f64> {
    Ok(nodal_residuals(nl, mesh, rule, u)?
        .into_iter()
        .flatten()
        .fold(0.0, f64::max))
}

/// Per-node values behind [`residual_check`]; `None` on Dirichlet nodes.
pub fn nodal_residuals(nl: &Nonlinearity, mesh: &TriMesh, rule: &TriangleRule, u: &Field) -> Result<Vec<Option<f64>>> {
    if u.len() != mesh.nodes.len() {
        return Err(Error::InvalidInput("field does not match the mesh".into()));
    }
    let n = mesh.nodes.len();
    let mut residual = vec![0.0; n];
    let mut diag = vec![0.0; n];
    for tri in &mesh.triangles {
        let p = tri.map(|i| mesh.nodes[i]);
        // b_i = y_j − y_k, c_i = x_k − x_j over cyclic (i, j, k)
        let b = [p[1][1] - p[2][1], p[2][1] - p[0][1], p[0][1] - p[1][1]];
        let c = [p[2][0] - p[1][0], p[0][0] - p[2][0], p[1][0] - p[0][0]];
        let area = 0.5 * (c[2] * b[1] - c[1] * b[2]);
        let vals = tri.map(|i| u.values[i]);
        let mut load = [0.0; 3];
        for (q, w) in rule.points.iter().zip(&rule.weights) {
            let uh = q[0] * vals[0] + q[1] * vals[1] + q[2] * vals[2];
            let fv = nl.f(uh)?;
            for k in 0..3 {
                load[k] += w * fv * q[k];
            }
        }
        for i in 0..3 {
            let mut ku = 0.0;
            for j in 0..3 {
                ku += (b[i] * b[j] + c[i] * c[j]) / (4.0 * area) * vals[j];
            }
            residual[tri[i]] += ku - area * load[i];
            diag[tri[i]] += (b[i] * b[i] + c[i] * c[i]) / (4.0 * area);
        }
    }
    Ok((0..n)
        .map(|i| (!mesh.boundary[i]).then(|| residual[i].abs() / diag[i]))
        .collect())
}

#[derive(Debug, Clone, Serialize)]
pub struct ProbeRow {
    pub r: f64,
    /// `min_d I(r·d)` over sampled unit directions; `None` past the safe range.
    pub min_energy: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct GeometryProbe {
    pub r: f64,
    pub rho: f64,
    pub directions: usize,
    pub table: Vec<ProbeRow>,
}

pub const DEFAULT_PROBE_RADII: [f64; 10] = [0.01, 0.02, 0.05, 0.1, 0.2, 0.3, 0.5, 0.75, 1.0, 1.5];

/// Random smooth unit directions: sums of three Gaussian bumps inside the sector.
pub fn random_directions(space: &FemSpace, sector: &Sector, count: usize, seed: u64) -> Vec<Field> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let h = space.mesh.h;
    let (lo, hi) = ((2.0 * h).ln(), 0.3f64.max(2.0 * h).ln());
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let mut bumps = Vec::with_capacity(3);
        while bumps.len() < 3 {
            let c = [rng.gen_range(-1.0..1.0), rng.gen_range(0.0..1.0)];
            if !sector.contains(c) {
                continue;
            }
            let sigma: f64 = rng.gen_range(lo..=hi).exp();
            let amp: f64 = rng.gen_range(0.5..1.0);
            bumps.push((c, sigma, amp));
        }
        let d = space.interpolate(|x| {
            bumps
                .iter()
                .map(|(c, s, a)| a * (-((x[0] - c[0]).powi(2) + (x[1] - c[1]).powi(2)) / (2.0 * s * s)).exp())
                .sum()
        });
        let norm = space.h1_norm(&d);
        if norm > 0.0 {
            out.push(d.scaled(1.0 / norm));
        }
    }
    out
}

/// Empirical mountain-pass geometry: the radius with the largest
/// `ρ = min_d I(r·d) > 0` over random unit directions.
pub fn mountain_geometry_probe(
    nl: &Nonlinearity,
    space: &FemSpace,
    sector: &Sector,
    radii: &[f64],
    directions: usize,
    seed: u64,
) -> Result<GeometryProbe> {
    if radii.is_empty() || directions == 0 {
        return Err(Error::InvalidInput("probe needs radii and directions".into()));
    }
    let dirs = random_directions(space, sector, directions, seed);
    let mut table = Vec::with_capacity(radii.len());
    let mut best: Option<(f64, f64)> = None;
    for &r in radii {
        let mut min_energy = f64::INFINITY;
        let mut in_range = true;
        for d in &dirs {
            match space.energy(nl, &d.scaled(r)) {
                Ok(e) => min_energy = min_energy.min(e),
                Err(Error::Range { .. }) => {
                    in_range = false;
                    break;
                }
                Err(e) => return Err(e),
            }
        }
        let row = ProbeRow {
            r,
            min_energy: in_range.then_some(min_energy),
        };
        if let Some(rho) = row.min_energy {
            if rho > 0.0 && best.map_or(true, |(_, b)| rho > b) {
                best = Some((r, rho));
            }
        }
        table.push(row);
    }
    let (r, rho) = best.ok_or_else(|| {
        Error::NoRidge(format!(
            "mountain-pass geometry violated: no positive level down to r = {}",
            radii.iter().copied().fold(f64::INFINITY, f64::min)
        ))
    })?;
    Ok(GeometryProbe {
        r,
        rho,
        directions,
        table,
    })
}
