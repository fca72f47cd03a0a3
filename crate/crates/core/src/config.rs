//! Line-based `key = value` run configuration.
//!
//! Blank lines and `#` comments are ignored; unknown and repeated keys are
//! errors, as are values outside their documented range.

use std::collections::BTreeSet;
use std::str::FromStr;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::moser::DEFAULT_N_LIST;
use crate::mpa::{FocusOptions, SolverMode, SolverOptions};
use crate::nonlinearity::{Model, Nonlinearity};
use crate::quadrature::TriangleRule;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub m: u32,
    pub mesh_h: f64,
    pub mesh_grading: f64,
    pub focus: FocusOptions,
    pub model: Model,
    pub lambda: f64,
    pub solver: SolverOptions,
    pub moser_n_list: Vec<f64>,
    pub output_dir: Option<String>,
    pub seed: u64,
    pub quadrature_degree: u32,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            m: 1,
            mesh_h: 0.02,
            mesh_grading: 2.0,
            focus: FocusOptions::default(),
            model: Model::Canonical,
            lambda: 1.0,
            solver: SolverOptions::default(),
            moser_n_list: DEFAULT_N_LIST.to_vec(),
            output_dir: None,
            seed: 0,
            quadrature_degree: 5,
        }
    }
}

impl RunConfig {
    /// Untruncated model; the sector solve truncates it.
    pub fn nonlinearity(&self) -> Result<Nonlinearity> {
        Nonlinearity::new(self.model, self.lambda)
    }

    pub fn rule(&self) -> Result<TriangleRule> {
        TriangleRule::with_degree(self.quadrature_degree)
    }
}

pub const KEYS: [&str; 17] = [
    "m",
    "mesh.h",
    "mesh.grading",
    "mesh.focus_rounds",
    "mesh.focus_resolution",
    "mesh.focus_rate",
    "mesh.focus_level_tol",
    "nonlinearity.model",
    "nonlinearity.lambda",
    "solver.mode",
    "solver.tol",
    "solver.path_points",
    "solver.max_iters",
    "moser.n_list",
    "output.dir",
    "seed",
    "fem.quadrature",
];

fn number<T: FromStr>(value: &str, what: &str) -> std::result::Result<T, String> {
    value.parse().map_err(|_| format!("cannot parse '{value}' as {what}"))
}

fn real_in(value: &str, lo: f64, hi: f64, open_lo: bool) -> std::result::Result<f64, String> {
    let x: f64 = number(value, "a real number")?;
    let above = if open_lo { x > lo } else { x >= lo };
    if x.is_finite() && above && x <= hi {
        Ok(x)
    } else {
        let bracket = if open_lo { '(' } else { '[' };
        Err(format!("{x} outside {bracket}{lo}, {hi}]"))
    }
}

fn int_in<T>(value: &str, lo: T, hi: T) -> std::result::Result<T, String>
where
    T: FromStr + PartialOrd + std::fmt::Display + Copy,
{
    let x: T = number(value, "an integer")?;
    if x < lo || x > hi {
        Err(format!("{x} outside [{lo}, {hi}]"))
    } else {
        Ok(x)
    }
}

fn apply(cfg: &mut RunConfig, key: &str, value: &str) -> std::result::Result<(), String> {
    match key {
        "m" => cfg.m = int_in(value, 1, 8)?,
        "mesh.h" => cfg.mesh_h = real_in(value, 0.0, 0.5, true)?,
        "mesh.grading" => cfg.mesh_grading = real_in(value, 1.0, 4.0, false)?,
        "mesh.focus_rounds" => cfg.focus.rounds = int_in(value, 0, 32)?,
        "mesh.focus_resolution" => cfg.focus.resolution = real_in(value, 1.0, 1e3, false)?,
        "mesh.focus_rate" => cfg.focus.rate = real_in(value, 0.0, 1.0, true)?,
        "mesh.focus_level_tol" => cfg.focus.level_tol = real_in(value, 0.0, 0.1, false)?,
        "nonlinearity.model" => cfg.model = value.parse().map_err(|e: Error| e.to_string())?,
        "nonlinearity.lambda" => cfg.lambda = real_in(value, 0.0, 1e6, true)?,
        "solver.mode" => cfg.solver.mode = value.parse::<SolverMode>().map_err(|e| e.to_string())?,
        "solver.tol" => cfg.solver.tol = real_in(value, 0.0, 1e-2, true)?,
        "solver.path_points" => cfg.solver.path_points = int_in(value, 4, 4096)?,
        "solver.max_iters" => cfg.solver.max_iters = int_in(value, 1, 1_000_000)?,
        "moser.n_list" => {
            let list = value
                .split(',')
                .map(|v| real_in(v.trim(), 1.0, 1e12, true))
                .collect::<std::result::Result<Vec<_>, _>>()?;
            if list.is_empty() {
                return Err("empty n-list".into());
            }
            cfg.moser_n_list = list;
        }
        "output.dir" => {
            if value.is_empty() {
                return Err("empty output directory".into());
            }
            cfg.output_dir = Some(value.to_string());
        }
        "seed" => cfg.seed = number(value, "an unsigned integer")?,
        "fem.quadrature" => {
            cfg.quadrature_degree = match value {
                "5" => 5,
                "8" => 8,
                other => return Err(format!("quadrature degree must be 5 or 8, got '{other}'")),
            }
        }
        other => return Err(format!("unknown key '{other}'")),
    }
    Ok(())
}

pub fn parse_config(text: &str) -> Result<RunConfig> {
    let mut cfg = RunConfig::default();
    let mut seen = BTreeSet::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let err = |message: String| Error::Config { line, message };
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let (key, value) = content
            .split_once('=')
            .ok_or_else(|| err(format!("expected 'key = value', got '{content}'")))?;
        let (key, value) = (key.trim(), value.trim());
        if !seen.insert(key.to_string()) && KEYS.contains(&key) {
            return Err(err(format!("duplicate key '{key}'")));
        }
        apply(&mut cfg, key, value).map_err(|m| err(format!("{key}: {m}")))?;
    }
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_text_gives_defaults() {
        let cfg = parse_config("").unwrap();
        assert_eq!(cfg, RunConfig::default());
        assert_eq!((cfg.m, cfg.model, cfg.lambda, cfg.mesh_h), (1, Model::Canonical, 1.0, 0.02));
    }

    #[test]
    fn single_override() {
        let cfg = parse_config("m = 3\n").unwrap();
        assert_eq!(cfg.m, 3);
        assert_eq!(RunConfig { m: 1, ..cfg }, RunConfig::default());
    }

    #[test]
    fn range_error_names_the_line() {
        match parse_config("# header\n\nm = 0\n") {
            Err(Error::Config { line, message }) => {
                assert_eq!(line, 3);
                assert!(message.contains("outside"), "{message}");
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn unknown_malformed_and_duplicate_lines_fail() {
        for (text, line) in [
            ("m = 2\nsolver.tolerance = 1e-6", 2),
            ("m 2", 1),
            ("m = 2\nm = 3", 2),
            ("nonlinearity.model = quartic", 1),
            ("moser.n_list = 10, x", 1),
            ("fem.quadrature = 7", 1),
            ("mesh.h = nan", 1),
        ] {
            match parse_config(text) {
                Err(Error::Config { line: l, .. }) => assert_eq!(l, line, "{text}"),
                other => panic!("{text}: {other:?}"),
            }
        }
    }

    #[test]
    fn full_file_round_trip() {
        let text = "\
m = 2              # sector index
mesh.h = 0.05
mesh.grading = 1.5
mesh.focus_rounds = 0
nonlinearity.model = cubic
nonlinearity.lambda = 2.5
solver.mode = nehari
solver.tol = 1e-7
solver.path_points = 32
solver.max_iters = 100
moser.n_list = 100, 10000
output.dir = runs/a
seed = 42
fem.quadrature = 8
";
        let cfg = parse_config(text).unwrap();
        assert_eq!(cfg.m, 2);
        assert_eq!(cfg.model, Model::Cubic);
        assert_eq!(cfg.solver.mode, SolverMode::Nehari);
        assert_eq!(cfg.moser_n_list, vec![100.0, 1e4]);
        assert_eq!(cfg.output_dir.as_deref(), Some("runs/a"));
        assert_eq!((cfg.seed, cfg.quadrature_degree, cfg.focus.rounds), (42, 8, 0));
        assert_eq!(cfg.rule().unwrap(), TriangleRule::degree8());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn valid_values_round_trip(m in 1u32..=8, h in 0.001f64..0.5, lambda in 0.01f64..1e3, seed: u64) {
                let text = format!("m = {m}\nmesh.h = {h}\nnonlinearity.lambda = {lambda}\nseed = {seed}\n");
                let cfg = parse_config(&text).unwrap();
                prop_assert_eq!((cfg.m, cfg.mesh_h, cfg.lambda, cfg.seed), (m, h, lambda, seed));
                prop_assert_eq!(parse_config(&text).unwrap(), cfg);
            }

            #[test]
            fn out_of_range_m_is_rejected_at_its_line(pad in 0usize..5, m in 9u32..1000) {
                let text = format!("{}m = {m}\n", "# c\n".repeat(pad));
                match parse_config(&text) {
                    Err(Error::Config { line, .. }) => prop_assert_eq!(line, pad + 1),
                    other => prop_assert!(false, "{:?}", other),
                }
            }
        }
    }
}
