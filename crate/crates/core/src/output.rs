//! Result files. Every file of a run is named `<mode>_<hash>[_<suffix>].<ext>`
//! with the config hash, and `manifest.json` in the output directory lists
//! each emitted file. CSV numbers carry 17 significant digits.
//!
//! CSV schemas:
//! - phase diagram: `axis1,axis2,stable,e0,e_max,t_of_max,resolved`
//! - E(t) trace: `t,e`
//! - density field: `t` followed by one column per cell centre `x`
//! - ARZ check: `rho_bar,linear_stable,numerical_stable,e0,e_max,t_of_max,agrees`
//! - mode-energy scan: `rho_bar,lambda,energy`

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::domain::{Field, GridSpec};
use crate::error::{Error, Result};
use crate::experiments::{ArzCheck, PhaseDiagram, PointOutcome, ScenarioRun};
use crate::linear::BoundednessResult;

pub const MANIFEST: &str = "manifest.json";

/// 17 significant digits.
pub fn num(x: f64) -> String {
    format!("{x:.16e}")
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub file: String,
    pub mode: String,
    pub config_hash: String,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub files: Vec<ManifestEntry>,
}

/// Collects the files of one run and records them in the manifest.
pub struct OutputWriter {
    dir: PathBuf,
    mode: String,
    hash: String,
    written: Vec<String>,
}

impl OutputWriter {
    pub fn new(dir: impl Into<PathBuf>, config: &RunConfig) -> Result<Self> {
        let dir = dir.into();
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        Ok(OutputWriter {
            dir,
            mode: config.mode.name().to_string(),
            hash: config.hash(),
            written: Vec::new(),
        })
    }

    pub fn file_name(&self, suffix: &str, ext: &str) -> String {
        if suffix.is_empty() {
            format!("{}_{}.{ext}", self.mode, self.hash)
        } else {
            format!("{}_{}_{suffix}.{ext}", self.mode, self.hash)
        }
    }

    fn write(&mut self, name: String, body: &str) -> Result<PathBuf> {
        let path = self.dir.join(&name);
        fs::write(&path, body).map_err(|e| Error::io(&path, e))?;
        self.written.push(name);
        Ok(path)
    }

    pub fn csv(
        &mut self,
        suffix: &str,
        header: &[&str],
        rows: impl IntoIterator<Item = Vec<String>>,
    ) -> Result<PathBuf> {
        let mut body = header.join(",");
        body.push('\n');
        for row in rows {
            body.push_str(&row.join(","));
            body.push('\n');
        }
        self.write(self.file_name(suffix, "csv"), &body)
    }

    pub fn json<T: Serialize>(&mut self, suffix: &str, value: &T) -> Result<PathBuf> {
        let mut body = serde_json::to_string_pretty(value).expect("result serializes");
        body.push('\n');
        self.write(self.file_name(suffix, "json"), &body)
    }

    pub fn written(&self) -> &[String] {
        &self.written
    }

    /// Merges this run's files into `manifest.json`, sorted by file name.
    pub fn finish(self) -> Result<Vec<PathBuf>> {
        let path = self.dir.join(MANIFEST);
        let mut entries: BTreeMap<String, ManifestEntry> = BTreeMap::new();
        if path.exists() {
            let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
            let old: Manifest = serde_json::from_str(&text)
                .map_err(|e| Error::io(&path, std::io::Error::new(std::io::ErrorKind::InvalidData, e)))?;
            entries.extend(old.files.into_iter().map(|e| (e.file.clone(), e)));
        }
        for f in &self.written {
            entries.insert(
                f.clone(),
                ManifestEntry {
                    file: f.clone(),
                    mode: self.mode.clone(),
                    config_hash: self.hash.clone(),
                },
            );
        }
        let manifest = Manifest {
            files: entries.into_values().collect(),
        };
        let mut body = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        body.push('\n');
        fs::write(&path, body).map_err(|e| Error::io(&path, e))?;
        Ok(self.written.iter().map(|f| self.dir.join(f)).collect())
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }
}

fn opt(x: Option<f64>) -> String {
    x.map(num).unwrap_or_default()
}

/// Samples are equally spaced over `[0, horizon]`.
fn trace_rows(trace: &[f64], horizon: f64) -> impl Iterator<Item = Vec<String>> + '_ {
    let steps = trace.len().saturating_sub(1).max(1) as f64;
    trace
        .iter()
        .enumerate()
        .map(move |(n, e)| vec![num(horizon * n as f64 / steps), num(*e)])
}

fn field_rows<'a>(field: &'a Field, grid: &'a GridSpec) -> impl Iterator<Item = Vec<String>> + 'a {
    field.levels().enumerate().map(|(n, level)| {
        std::iter::once(num(grid.t(n)))
            .chain(level.iter().map(|v| num(*v)))
            .collect()
    })
}

/// Per-point traces (`trace_<i>_<j>`) need the horizon shared by the sweep.
pub fn emit_phase_diagram(w: &mut OutputWriter, diagram: &PhaseDiagram, traces: Option<f64>) -> Result<()> {
    let rows = diagram.points.iter().map(|p| {
        let v = p.verdict();
        vec![
            num(p.first),
            num(p.second),
            v.map(|v| v.stable.to_string()).unwrap_or_default(),
            opt(v.map(|v| v.e0)),
            opt(v.map(|v| v.e_max)),
            opt(v.map(|v| v.t_of_max)),
            matches!(p.outcome, PointOutcome::Resolved { .. }).to_string(),
        ]
    });
    w.csv(
        "",
        &["axis1", "axis2", "stable", "e0", "e_max", "t_of_max", "resolved"],
        rows,
    )?;
    w.json("", diagram)?;
    if let Some(horizon) = traces {
        let n2 = diagram.axes[1].values.len();
        for (idx, p) in diagram.points.iter().enumerate() {
            if let Some(v) = p.verdict() {
                let suffix = format!("trace_{}_{}", idx / n2, idx % n2);
                w.csv(&suffix, &["t", "e"], trace_rows(&v.trace, horizon))?;
            }
        }
    }
    Ok(())
}

#[derive(Serialize)]
struct ScenarioSummary<'a> {
    spec: &'a crate::experiments::ScenarioSpec,
    uniform: &'a crate::domain::UniformFlow,
    solver: crate::experiments::SolverKind,
    report: &'a Option<crate::newton::NewtonReport>,
    stable: bool,
    e0: f64,
    e_max: f64,
    t_of_max: f64,
}

/// Main CSV is the E(t) trace; density fields go to `density_av` / `density_hv`.
pub fn emit_scenario(w: &mut OutputWriter, run: &ScenarioRun, fields: bool) -> Result<()> {
    let g = &run.spec.grid;
    w.csv("", &["t", "e"], trace_rows(&run.verdict.trace, g.horizon))?;
    w.json(
        "",
        &ScenarioSummary {
            spec: &run.spec,
            uniform: &run.uniform,
            solver: run.solver,
            report: &run.report,
            stable: run.verdict.stable,
            e0: run.verdict.e0,
            e_max: run.verdict.e_max,
            t_of_max: run.verdict.t_of_max,
        },
    )?;
    if fields {
        let xs: Vec<String> = (0..g.nx).map(|j| num(g.x(j))).collect();
        let mut header = vec!["t"];
        header.extend(xs.iter().map(String::as_str));
        for (name, traj) in [("density_av", &run.av), ("density_hv", &run.hv)] {
            if let Some(traj) = traj {
                w.csv(name, &header, field_rows(&traj.density, g))?;
            }
        }
    }
    Ok(())
}

#[derive(Serialize)]
struct ArzSummary {
    unstable_band: Option<(f64, f64)>,
    checks: Vec<ArzCheckSummary>,
}

#[derive(Serialize)]
struct ArzCheckSummary {
    rho_bar: f64,
    linear_stable: bool,
    numerical_stable: bool,
    e0: f64,
    e_max: f64,
    t_of_max: f64,
    agrees: bool,
}

pub fn emit_arz_checks(w: &mut OutputWriter, checks: &[ArzCheck], band: Option<(f64, f64)>) -> Result<()> {
    let summaries: Vec<ArzCheckSummary> = checks
        .iter()
        .map(|c| ArzCheckSummary {
            rho_bar: c.rho_bar,
            linear_stable: c.linear_stable,
            numerical_stable: c.verdict.stable,
            e0: c.verdict.e0,
            e_max: c.verdict.e_max,
            t_of_max: c.verdict.t_of_max,
            agrees: c.agrees(),
        })
        .collect();
    let rows = summaries.iter().map(|s| {
        vec![
            num(s.rho_bar),
            s.linear_stable.to_string(),
            s.numerical_stable.to_string(),
            num(s.e0),
            num(s.e_max),
            num(s.t_of_max),
            s.agrees.to_string(),
        ]
    });
    w.csv(
        "",
        &[
            "rho_bar",
            "linear_stable",
            "numerical_stable",
            "e0",
            "e_max",
            "t_of_max",
            "agrees",
        ],
        rows,
    )?;
    w.json(
        "",
        &ArzSummary {
            unstable_band: band,
            checks: summaries,
        },
    )?;
    Ok(())
}

pub fn emit_scan(w: &mut OutputWriter, results: &[BoundednessResult]) -> Result<()> {
    let mut body = String::from("rho_bar,lambda,energy\n");
    for r in results {
        for (l, e) in r.scan.lambda_samples.iter().zip(&r.scan.energies) {
            let _ = writeln!(body, "{},{},{}", num(r.scan.rho_bar), num(*l), num(*e));
        }
    }
    let name = w.file_name("", "csv");
    w.write(name, &body)?;
    w.json("", &results)?;
    Ok(())
}
