//! Stage orchestration behind the command-line tool.
//!
//! A run executes the stages of one subcommand, writes its artifacts and a
//! `report.json` into the output directory, and records every verified
//! property as a named invariant. Stage errors are captured in the report
//! with the stage name; only I/O on the output directory aborts a run.

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::assembly::{assemble_disk_solution, oddness_ablation, AssembledSolution, DOMAIN_EPS};
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::export;
use crate::fem::{Field, FemSpace};
use crate::geometry::{build_disk_mesh, mesh_sector, DiskMesh, Sector, TriMesh};
use crate::moser::{moser_report, MoserReport};
use crate::mpa::{
    mountain_geometry_probe, residual_check, solve_sector, FocusRound, GeometryProbe, DEFAULT_PROBE_RADII,
    POSITIVITY_TOL,
};
use crate::nonlinearity::{check_hypotheses, HypothesisReport, ScanSpec, Status};

/// Coefficient of the even term `ε·e^{s²}` used by the oddness ablation.
pub const ABLATION_EPS: f64 = 1e-3;
/// Required growth of the interface-band residual under the ablation.
pub const ABLATION_FACTOR: f64 = 100.0;
/// Tolerance on `I_disk / (2^m I_sector) − 1`.
pub const ENERGY_RATIO_TOL: f64 = 5e-3;
const HEATMAP_PIXELS: usize = 512;
const PROBE_DIRECTIONS: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Subcommand {
    CheckHypotheses,
    SolveSector,
    MoserLimits,
    Assemble,
    Full,
}

impl Subcommand {
    pub const ALL: [Subcommand; 5] = [
        Subcommand::CheckHypotheses,
        Subcommand::SolveSector,
        Subcommand::MoserLimits,
        Subcommand::Assemble,
        Subcommand::Full,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Subcommand::CheckHypotheses => "check-hypotheses",
            Subcommand::SolveSector => "solve-sector",
            Subcommand::MoserLimits => "moser-limits",
            Subcommand::Assemble => "assemble",
            Subcommand::Full => "full",
        }
    }
}

impl FromStr for Subcommand {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Subcommand::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| Error::InvalidInput(format!("unknown subcommand '{s}'")))
    }
}

impl fmt::Display for Subcommand {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct RunOptions {
    /// Record wall-clock timings; off for byte-reproducible reports.
    pub timings: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "status", content = "value", rename_all = "lowercase")]
pub enum Section<T> {
    Done(T),
    Skipped(String),
    Failed(String),
}

impl<T> Section<T> {
    fn skipped(sub: Subcommand) -> Self {
        Section::Skipped(format!("not part of '{sub}'"))
    }

    pub fn done(&self) -> Option<&T> {
        match self {
            Section::Done(v) => Some(v),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Invariant {
    pub stage: &'static str,
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StageError {
    pub stage: &'static str,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ManifestEntry {
    pub file: String,
    pub bytes: usize,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Timing {
    pub stage: &'static str,
    pub seconds: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct SolverSummary {
    pub level: f64,
    pub grad_norm: f64,
    pub iterations: usize,
    /// Independent nodal residual of the truncated problem.
    pub residual: f64,
    pub min_value: f64,
    pub positive: bool,
    pub norm: f64,
    pub nodes: usize,
    pub triangles: usize,
    pub rounds: Vec<FocusRound>,
    pub resolved: bool,
    pub level_settled: bool,
    pub geometry: GeometryProbe,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EnergyCheck {
    pub level: f64,
    pub level_below_half: bool,
    /// `(n, max_t I(t·w_n))` with the smallest maximum over the n-list.
    pub best_moser: Option<(f64, f64)>,
    pub moser_below_half: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AblationSummary {
    pub eps: f64,
    pub baseline_band: f64,
    pub perturbed_band: f64,
    pub perturbed_residual: f64,
    pub ratio: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct AssemblySummary {
    pub disk_nodes: usize,
    pub disk_triangles: usize,
    #[serde(flatten)]
    pub solution: AssembledSolution,
    pub energy_ratio: f64,
    pub ablation: AblationSummary,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunReport {
    pub tool: &'static str,
    pub version: &'static str,
    pub subcommand: Subcommand,
    pub config: RunConfig,
    pub hypotheses: Section<HypothesisReport>,
    pub solver: Section<SolverSummary>,
    pub moser: Section<MoserReport>,
    pub energy_check: Section<EnergyCheck>,
    pub assembly: Section<AssemblySummary>,
    pub invariants: Vec<Invariant>,
    pub errors: Vec<StageError>,
    /// Every emitted file except `report.json` itself.
    pub manifest: Vec<ManifestEntry>,
    pub timings: Option<Vec<Timing>>,
    pub passed: bool,
}

impl RunReport {
    pub fn failures(&self) -> Vec<String> {
        let errors = self.errors.iter().map(|e| format!("{}: {}", e.stage, e.message));
        let broken = self
            .invariants
            .iter()
            .filter(|i| !i.passed)
            .map(|i| format!("{}: invariant '{}' failed ({})", i.stage, i.name, i.detail));
        errors.chain(broken).collect()
    }
}

struct Run<'a> {
    dir: &'a Path,
    report: RunReport,
    timings: Vec<Timing>,
}

struct Solved {
    mesh: TriMesh,
    u: Field,
    level: f64,
    trace: Vec<(f64, f64)>,
}

fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

impl<'a> Run<'a> {
    fn emit(&mut self, name: &str, bytes: &[u8]) -> Result<()> {
        fs::write(self.dir.join(name), bytes)?;
        self.report.manifest.push(ManifestEntry {
            file: name.to_string(),
            bytes: bytes.len(),
            sha256: sha256_hex(bytes),
        });
        Ok(())
    }

    fn check(&mut self, stage: &'static str, name: &str, passed: bool, detail: String) {
        self.report.invariants.push(Invariant {
            stage,
            name: name.to_string(),
            passed,
            detail,
        });
    }

    fn fail<T>(&mut self, stage: &'static str, err: Error) -> Section<T> {
        let message = err.to_string();
        self.report.errors.push(StageError {
            stage,
            message: message.clone(),
        });
        Section::Failed(message)
    }

    fn timed<T>(&mut self, stage: &'static str, body: impl FnOnce(&mut Self) -> T) -> T {
        let start = Instant::now();
        let out = body(self);
        self.timings.push(Timing {
            stage,
            seconds: start.elapsed().as_secs_f64(),
        });
        out
    }

    fn hypotheses(&mut self, cfg: &RunConfig) {
        const STAGE: &str = "check-hypotheses";
        let out = cfg.nonlinearity().and_then(|nl| {
            let scan = ScanSpec {
                sectors: vec![cfg.m],
                ..ScanSpec::default()
            };
            check_hypotheses(&nl, &scan)
        });
        self.report.hypotheses = match out {
            Ok(h) => {
                let failing: Vec<&str> = [
                    ("oddness", &h.oddness),
                    ("f1-strict", &h.f1_strict),
                    ("f1-critical", &h.f1_critical),
                    ("f2", &h.f2),
                    ("H1", &h.h1),
                    ("H2", &h.h2),
                    ("H3", &h.h3),
                ]
                .iter()
                .filter(|(_, c)| c.status == Status::Fail)
                .map(|(n, _)| *n)
                .collect();
                let detail = if failing.is_empty() {
                    format!("all pass on (0, {}]", h.scan.s_max)
                } else {
                    format!("failing: {}", failing.join(", "))
                };
                self.check(STAGE, "hypotheses hold on the scan range", h.all_pass(), detail);
                Section::Done(h)
            }
            Err(e) => self.fail(STAGE, e),
        };
    }

    fn solve(&mut self, cfg: &RunConfig) -> Result<Option<Solved>> {
        const STAGE: &str = "solve-sector";
        let out = (|| -> Result<(SolverSummary, Solved)> {
            let nl = cfg.nonlinearity()?.truncated();
            let rule = cfg.rule()?;
            let sector = Sector::new(cfg.m)?;
            let base = mesh_sector(&sector, cfg.mesh_h, cfg.mesh_grading)?;
            let sol = solve_sector(&nl, &sector, &base, &rule, &cfg.solver, &cfg.focus)?;
            let residual = residual_check(&nl, &sol.space.mesh, &rule, &sol.result.u)?;
            let base_space = FemSpace::with_rule(base, rule)?;
            let geometry =
                mountain_geometry_probe(&nl, &base_space, &sector, &DEFAULT_PROBE_RADII, PROBE_DIRECTIONS, cfg.seed)?;
            let r = &sol.result;
            let summary = SolverSummary {
                level: r.level,
                grad_norm: r.grad_norm,
                iterations: r.iterations,
                residual,
                min_value: r.min_value,
                positive: r.positive,
                norm: r.norm,
                nodes: sol.space.mesh.nodes.len(),
                triangles: sol.space.mesh.triangles.len(),
                rounds: sol.rounds.clone(),
                resolved: sol.resolved,
                level_settled: sol.level_settled,
                geometry,
            };
            Ok((
                summary,
                Solved {
                    level: r.level,
                    trace: r.path_trace.clone(),
                    u: sol.result.u,
                    mesh: sol.space.mesh,
                },
            ))
        })();
        match out {
            Ok((summary, solved)) => {
                let tol = cfg.solver.tol;
                self.check(
                    STAGE,
                    "independent residual <= 10 x solver tolerance",
                    summary.residual <= 10.0 * tol,
                    format!("{:e} vs {:e}", summary.residual, 10.0 * tol),
                );
                self.check(
                    STAGE,
                    "level in (0, 1/2)",
                    summary.level > 0.0 && summary.level < 0.5,
                    format!("{}", summary.level),
                );
                self.check(
                    STAGE,
                    "solution nonnegative",
                    summary.min_value >= -POSITIVITY_TOL,
                    format!("min {:e}", summary.min_value),
                );
                self.emit("sector_field.csv", export::field_csv(&solved.mesh, &solved.u)?.as_bytes())?;
                self.emit("sector_triangles.csv", export::triangles_csv(&solved.mesh).as_bytes())?;
                self.emit("sector.vtk", export::vtk(&solved.mesh, &solved.u, "sector solution")?.as_bytes())?;
                self.emit("path_trace.csv", export::path_trace_csv(&solved.trace).as_bytes())?;
                self.report.solver = Section::Done(summary);
                Ok(Some(solved))
            }
            Err(e) => {
                self.report.solver = self.fail(STAGE, e);
                Ok(None)
            }
        }
    }

    fn moser(&mut self, cfg: &RunConfig) -> Result<()> {
        const STAGE: &str = "moser-limits";
        let out = cfg
            .nonlinearity()
            .and_then(|nl| Sector::new(cfg.m).and_then(|s| moser_report(&nl, &s, &cfg.moser_n_list)));
        match out {
            Ok(r) => {
                let norm_err = r.rows.iter().map(|row| (row.norm - 1.0).abs()).fold(0.0, f64::max);
                self.check(STAGE, "Moser norms equal 1", norm_err <= 1e-10, format!("max |norm - 1| = {norm_err:e}"));
                let identity = r
                    .rows
                    .iter()
                    .map(|row| ((row.l2 - row.l2_direct) / row.l2_direct).abs())
                    .fold(0.0, f64::max);
                self.check(
                    STAGE,
                    "L2 = pi d^2 (1 + L1)",
                    identity <= 1e-12,
                    format!("max relative gap {identity:e}"),
                );
                self.check(
                    STAGE,
                    "energy scan finds a ridge for every n",
                    r.scan_error.is_none(),
                    r.scan_error.clone().unwrap_or_else(|| "ok".into()),
                );
                self.emit("moser.csv", export::moser_csv(&r).as_bytes())?;
                self.report.moser = Section::Done(r);
            }
            Err(e) => self.report.moser = self.fail(STAGE, e),
        }
        Ok(())
    }

    fn energy_check(&mut self, solved: Option<&Solved>) {
        const STAGE: &str = "energy-level";
        let (Some(solved), Some(moser)) = (solved, self.report.moser.done()) else {
            self.report.energy_check = Section::Skipped("needs the sector solve and the Moser scan".into());
            return;
        };
        let best_moser = moser
            .rows
            .iter()
            .filter_map(|row| row.scan.as_ref().map(|s| (row.n, s.max_i)))
            .min_by(|a, b| a.1.total_cmp(&b.1));
        let check = EnergyCheck {
            level: solved.level,
            level_below_half: solved.level < 0.5,
            best_moser,
            moser_below_half: moser.any_below_half,
        };
        self.check(STAGE, "pass level below 1/2", check.level_below_half, format!("{}", check.level));
        self.check(
            STAGE,
            "some Moser direction has max_t I < 1/2",
            check.moser_below_half,
            match best_moser {
                Some((n, v)) => format!("n = {n}: {v}"),
                None => "no ridge for any n".into(),
            },
        );
        self.report.energy_check = Section::Done(check);
    }

    fn assemble(&mut self, cfg: &RunConfig, solved: Option<&Solved>) -> Result<()> {
        const STAGE: &str = "assemble";
        let Some(solved) = solved else {
            self.report.assembly = Section::Skipped("sector solve failed".into());
            return Ok(());
        };
        let out = (|| -> Result<(AssemblySummary, DiskMesh)> {
            let nl = cfg.nonlinearity()?.truncated();
            let rule = cfg.rule()?;
            let disk = build_disk_mesh(cfg.m, &solved.mesh)?;
            let solution = assemble_disk_solution(&disk, &solved.mesh, &solved.u, &nl, &rule)?;
            let baseline = oddness_ablation(&disk, &solved.mesh, &solved.u, &nl, &rule)?;
            let perturbed = nl.clone().with_even_perturbation(ABLATION_EPS);
            let broken = oddness_ablation(&disk, &solved.mesh, &solved.u, &perturbed, &rule)?;
            let ablation = AblationSummary {
                eps: ABLATION_EPS,
                baseline_band: baseline.band_residual,
                perturbed_band: broken.band_residual,
                perturbed_residual: broken.residual,
                ratio: broken.band_residual / baseline.band_residual,
            };
            Ok((
                AssemblySummary {
                    disk_nodes: disk.mesh.nodes.len(),
                    disk_triangles: disk.mesh.triangles.len(),
                    energy_ratio: solution.energy_ratio(),
                    solution,
                    ablation,
                },
                disk,
            ))
        })();
        let (summary, disk) = match out {
            Ok(v) => v,
            Err(e) => {
                self.report.assembly = self.fail(STAGE, e);
                return Ok(());
            }
        };
        let s = &summary.solution;
        let copies = 1usize << cfg.m;
        self.check(
            STAGE,
            "antisymmetric under every interface reflection",
            s.antisymmetry_failures == 0,
            format!("{} failing reflections", s.antisymmetry_failures),
        );
        self.check(
            STAGE,
            "nodal domains = 2^m",
            s.nodal_domains == copies,
            format!("{} domains, expected {copies}", s.nodal_domains),
        );
        let boundary_max = s
            .u
            .values
            .iter()
            .zip(&disk.mesh.boundary)
            .filter(|(_, &b)| b)
            .map(|(v, _)| v.abs())
            .fold(0.0, f64::max);
        self.check(
            STAGE,
            "interface and boundary values exactly 0",
            s.interface_max == 0.0 && boundary_max == 0.0,
            format!("interface {:e}, boundary {:e}", s.interface_max, boundary_max),
        );
        self.check(
            STAGE,
            "disk residual <= 10 x sector residual",
            s.residual <= 10.0 * s.sector_residual,
            format!("{:e} vs {:e}", s.residual, s.sector_residual),
        );
        let gap = (summary.energy_ratio - 1.0).abs();
        self.check(
            STAGE,
            "energy additivity within 0.5%",
            gap <= ENERGY_RATIO_TOL,
            format!("I_disk / (2^m I_sector) = {}", summary.energy_ratio),
        );
        let a = summary.ablation;
        self.check(
            STAGE,
            "even perturbation inflates the interface-band residual >= 100x",
            a.ratio >= ABLATION_FACTOR,
            format!("{:e} -> {:e} (x{:.3e})", a.baseline_band, a.perturbed_band, a.ratio),
        );
        self.emit("disk_field.csv", export::field_csv(&disk.mesh, &s.u)?.as_bytes())?;
        self.emit("disk_triangles.csv", export::triangles_csv(&disk.mesh).as_bytes())?;
        self.emit("disk.vtk", export::vtk(&disk.mesh, &s.u, "assembled disk solution")?.as_bytes())?;
        let eps = DOMAIN_EPS * s.max_abs;
        self.emit("disk_heatmap.ppm", &export::heatmap_ppm(&disk.mesh, &s.u, HEATMAP_PIXELS, eps)?)?;
        self.report.assembly = Section::Done(summary);
        Ok(())
    }
}

/// Runs `sub` and writes its artifacts and `report.json` into `dir`.
pub fn run(sub: Subcommand, cfg: &RunConfig, dir: &Path, opts: RunOptions) -> Result<RunReport> {
    fs::create_dir_all(dir)?;
    let mut run = Run {
        dir,
        report: RunReport {
            tool: "signchange",
            version: env!("CARGO_PKG_VERSION"),
            subcommand: sub,
            config: cfg.clone(),
            hypotheses: Section::skipped(sub),
            solver: Section::skipped(sub),
            moser: Section::skipped(sub),
            energy_check: Section::skipped(sub),
            assembly: Section::skipped(sub),
            invariants: Vec::new(),
            errors: Vec::new(),
            manifest: Vec::new(),
            timings: None,
            passed: false,
        },
        timings: Vec::new(),
    };
    use Subcommand::*;
    if matches!(sub, CheckHypotheses | Full) {
        run.timed("check-hypotheses", |r| r.hypotheses(cfg));
    }
    let solved = if matches!(sub, SolveSector | Assemble | Full) {
        run.timed("solve-sector", |r| r.solve(cfg))?
    } else {
        None
    };
    if matches!(sub, MoserLimits | Full) {
        run.timed("moser-limits", |r| r.moser(cfg))?;
    }
    if sub == Full {
        run.timed("energy-level", |r| r.energy_check(solved.as_ref()));
    }
    if matches!(sub, Assemble | Full) {
        run.timed("assemble", |r| r.assemble(cfg, solved.as_ref()))?;
    }
    let mut report = run.report;
    report.passed = report.errors.is_empty() && report.invariants.iter().all(|i| i.passed);
    if opts.timings {
        report.timings = Some(run.timings);
    }
    let mut json = serde_json::to_string_pretty(&report)?;
    json.push('\n');
    fs::write(dir.join("report.json"), json)?;
    Ok(report)
}
