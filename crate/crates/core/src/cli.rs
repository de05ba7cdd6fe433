//! Runs a validated configuration and writes its result files.

use std::path::PathBuf;

use crate::config::{Mode, RunConfig};
use crate::error::Result;
use crate::experiments::{arz_cross_validation, run_group, run_scenario, with_pool};
use crate::linear::{arz_unstable_band, mfg_boundedness_scan_with, mfg_mode_solution};
use crate::output::{emit_arz_checks, emit_phase_diagram, emit_scan, emit_scenario, OutputWriter};

/// Executes `config.mode` and returns the paths written, in order.
pub fn execute(config: &RunConfig) -> Result<Vec<PathBuf>> {
    config.validate()?;
    let settings = config.experiment_settings();
    let mut w = OutputWriter::new(&config.output.dir, config)?;
    match config.mode {
        Mode::SimulateArz | Mode::SimulateMfg | Mode::SimulateMixed => {
            let run = run_scenario(&config.scenario_spec()?, &settings)?;
            emit_scenario(&mut w, &run, config.output.fields)?;
        }
        Mode::StabilityArz => {
            let checks = arz_cross_validation(&config.stability.arz_densities, &config.params, &settings)?;
            emit_arz_checks(&mut w, &checks, arz_unstable_band(&config.params))?;
        }
        Mode::StabilityMfgScan => {
            let scan = &config.stability.scan;
            let results = with_pool(settings.jobs, || {
                mfg_boundedness_scan_with(&mfg_mode_solution, &config.stability.mfg_densities, scan)
            })??;
            emit_scan(&mut w, &results)?;
        }
        Mode::SweepGroup1 | Mode::SweepGroup2 | Mode::SweepGroup3 => {
            let group = config.mode.group().expect("sweep mode");
            let [a, b] = config.sweep_axes(group);
            let diagram = run_group(group, &a, &b, &config.params, &settings)?;
            let traces = config.output.traces.then(|| config.grid.horizon(&config.params));
            emit_phase_diagram(&mut w, &diagram, traces)?;
        }
    }
    w.finish()
}
