//! Run configuration: a JSON document with every section optional.
//! Unknown keys are rejected and the whole document is validated before
//! anything runs.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::domain::{ModelParams, Norm};
use crate::error::{Error, Result};
use crate::experiments::{default_axes, reduced_axes, ExperimentSettings, GridConfig, Group, ScenarioSpec};
use crate::linear::ScanSettings;
use crate::system::SolverSettings;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    SimulateArz,
    SimulateMfg,
    #[default]
    SimulateMixed,
    StabilityArz,
    StabilityMfgScan,
    SweepGroup1,
    SweepGroup2,
    SweepGroup3,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::SimulateArz => "simulate-arz",
            Mode::SimulateMfg => "simulate-mfg",
            Mode::SimulateMixed => "simulate-mixed",
            Mode::StabilityArz => "stability-arz",
            Mode::StabilityMfgScan => "stability-mfg-scan",
            Mode::SweepGroup1 => "sweep-group1",
            Mode::SweepGroup2 => "sweep-group2",
            Mode::SweepGroup3 => "sweep-group3",
        }
    }

    pub fn group(self) -> Option<Group> {
        match self {
            Mode::SweepGroup1 => Some(Group::Group1),
            Mode::SweepGroup2 => Some(Group::Group2),
            Mode::SweepGroup3 => Some(Group::Group3),
            _ => None,
        }
    }
}

/// Perturbed uniform flow for the `simulate-*` modes. Unset densities take
/// mode-dependent defaults: 0.4 for the single-class modes, 0.12 AV plus
/// 0.28 HV for the mixed mode.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rho_bar_av: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rho_bar_hv: Option<f64>,
    pub amplitude: f64,
    pub norm: Norm,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            rho_bar_av: None,
            rho_bar_hv: None,
            amplitude: 0.1,
            norm: Norm::L1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StabilityConfig {
    /// Normalized densities for `stability-arz`.
    pub arz_densities: Vec<f64>,
    /// Normalized densities for `stability-mfg-scan`.
    pub mfg_densities: Vec<f64>,
    pub scan: ScanSettings,
}

impl Default for StabilityConfig {
    fn default() -> Self {
        StabilityConfig {
            arz_densities: (0..10).map(|i| 0.02 + 0.88 * i as f64 / 9.0).collect(),
            mfg_densities: (1..10).map(|i| i as f64 / 10.0).collect(),
            scan: ScanSettings::default(),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SweepSize {
    #[default]
    Full,
    /// 5 x 5 grids for quick checks.
    Reduced,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepConfig {
    pub size: SweepSize,
    /// Explicit axis values; override `size` when both are given.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub axis1: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub axis2: Option<Vec<f64>>,
    pub control_runs: bool,
    /// Worker threads; 0 uses every core. Does not affect results.
    pub jobs: usize,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            size: SweepSize::Full,
            axis1: None,
            axis2: None,
            control_runs: true,
            jobs: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    pub dir: PathBuf,
    /// Per-point E(t) traces for sweeps.
    pub traces: bool,
    /// Space-time density fields for simulations.
    pub fields: bool,
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig {
            dir: PathBuf::from("results"),
            traces: false,
            fields: true,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub mode: Mode,
    pub params: ModelParams,
    pub grid: GridConfig,
    pub scenario: ScenarioConfig,
    pub solver: SolverSettings,
    pub stability: StabilityConfig,
    pub sweep: SweepConfig,
    pub output: OutputConfig,
}

/// Parses and validates a configuration document. Blank input yields the defaults.
pub fn parse_config(text: &str) -> Result<RunConfig> {
    let cfg: RunConfig = if text.trim().is_empty() {
        RunConfig::default()
    } else {
        serde_json::from_str(text).map_err(|e| Error::Parse {
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        })?
    };
    cfg.validate()?;
    Ok(cfg)
}

fn normalized_list(name: &'static str, values: &[f64], upper: f64) -> Result<()> {
    if values.is_empty() {
        return Err(Error::param(name, "must not be empty"));
    }
    if let Some(v) = values.iter().find(|v| !(**v > 0.0 && **v < upper)) {
        return Err(Error::param(name, format!("{v} outside (0, {upper})")));
    }
    Ok(())
}

fn axis(name: &'static str, values: &[f64]) -> Result<()> {
    if values.is_empty() {
        return Err(Error::param(name, "must not be empty"));
    }
    if let Some(v) = values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(Error::param(name, format!("{v} outside [0, 1]")));
    }
    Ok(())
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.params.validate()?;
        self.grid.validate(&self.params)?;
        self.solver.validate()?;
        let s = &self.scenario;
        for (name, v) in [
            ("scenario.rho_bar_av", s.rho_bar_av),
            ("scenario.rho_bar_hv", s.rho_bar_hv),
        ] {
            if let Some(v) = v {
                if !(0.0..1.0).contains(&v) {
                    return Err(Error::param(name, format!("{v} outside [0, 1)")));
                }
            }
        }
        self.scenario_spec()
            .map_err(|e| Error::param("scenario", e.to_string()))?;
        normalized_list("stability.arz_densities", &self.stability.arz_densities, 1.0)?;
        normalized_list("stability.mfg_densities", &self.stability.mfg_densities, 1.0)?;
        self.stability.scan.validate()?;
        if let Some(a) = &self.sweep.axis1 {
            axis("sweep.axis1", a)?;
        }
        if let Some(a) = &self.sweep.axis2 {
            axis("sweep.axis2", a)?;
        }
        Ok(())
    }

    /// Scenario of the `simulate-*` modes (also checked in other modes so a
    /// document never carries an invalid scenario).
    pub fn scenario_spec(&self) -> Result<ScenarioSpec> {
        let s = &self.scenario;
        let (g, p, amp) = (&self.grid, &self.params, s.amplitude);
        match self.mode {
            Mode::SimulateArz => {
                if s.rho_bar_av.unwrap_or(0.0) != 0.0 {
                    return Err(Error::param(
                        "scenario.rho_bar_av",
                        "must be 0 or unset in simulate-arz",
                    ));
                }
                ScenarioSpec::pure_hv(s.rho_bar_hv.unwrap_or(0.4), amp, g, p)
            }
            Mode::SimulateMfg => {
                if s.rho_bar_hv.unwrap_or(0.0) != 0.0 {
                    return Err(Error::param(
                        "scenario.rho_bar_hv",
                        "must be 0 or unset in simulate-mfg",
                    ));
                }
                ScenarioSpec::pure_av(s.rho_bar_av.unwrap_or(0.4), amp, g, p)
            }
            _ => ScenarioSpec::new(
                s.rho_bar_av.unwrap_or(0.12),
                s.rho_bar_hv.unwrap_or(0.28),
                p.beta,
                amp,
                g,
                p,
            ),
        }
    }

    pub fn experiment_settings(&self) -> ExperimentSettings {
        ExperimentSettings {
            grid: self.grid,
            solver: self.solver,
            norm: self.scenario.norm,
            amplitude: self.scenario.amplitude,
            control_runs: self.sweep.control_runs,
            jobs: self.sweep.jobs,
        }
    }

    /// Sweep axes for a group mode.
    pub fn sweep_axes(&self, group: Group) -> [Vec<f64>; 2] {
        let [a, b] = match self.sweep.size {
            SweepSize::Full => default_axes(group),
            SweepSize::Reduced => reduced_axes(group),
        };
        [
            self.sweep.axis1.clone().unwrap_or(a),
            self.sweep.axis2.clone().unwrap_or(b),
        ]
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// SHA-256 (first 16 hex digits) of everything that can change results;
    /// the output section and the thread count are excluded.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.output = OutputConfig::default();
        c.sweep.jobs = 0;
        let digest = Sha256::digest(serde_json::to_vec(&c).expect("config serializes"));
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }
}
