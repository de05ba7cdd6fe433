//! Pure-AV mean field game: forward continuity and backward HJB solved
//! together by Newton's method on the space-time grid.

use crate::domain::{ClassTrajectory, Field, GridSpec, ModelParams};
use crate::error::{Error, Result};
use crate::newton::NewtonReport;
use crate::system::{SolverSettings, SpaceTimeSystem};

/// Space-time density and value fields. Level 0 of `rho` is the initial
/// density and level `nt` of `value` the terminal cost.
#[derive(Clone, Debug)]
pub struct MfgUnknowns {
    pub rho: Field,
    pub value: Field,
}

impl MfgUnknowns {
    fn system(&self, grid: &GridSpec, params: &ModelParams, settings: &SolverSettings) -> Result<SpaceTimeSystem> {
        for f in [&self.rho, &self.value] {
            if f.num_levels() != grid.nt + 1 || f.nx() != grid.nx {
                return Err(Error::DimensionMismatch("MFG unknowns do not match the grid".into()));
            }
        }
        SpaceTimeSystem::new(grid, params, settings.viscosity, Some(self.rho.level(0)), None)?
            .with_terminal_value(self.value.level(grid.nt))
    }

    /// Optimal speed implied by the fields.
    pub fn velocity(&self, grid: &GridSpec, params: &ModelParams) -> Result<Field> {
        let sys = self.system(grid, params, &SolverSettings::default())?;
        let x = sys.pack(Some(&self.rho), Some(&self.value), None, None)?;
        Ok(sys.av_velocity_field(&x))
    }
}

/// Residual of length `2 nt nx`, ordered by time slot, then cell, then
/// equation (density transition `k -> k+1`, HJB at level `k`).
pub fn assemble_residual(unknowns: &MfgUnknowns, grid: &GridSpec, params: &ModelParams) -> Result<Vec<f64>> {
    assemble_residual_with(unknowns, grid, params, &SolverSettings::default())
}

pub fn assemble_residual_with(
    unknowns: &MfgUnknowns,
    grid: &GridSpec,
    params: &ModelParams,
    settings: &SolverSettings,
) -> Result<Vec<f64>> {
    let sys = unknowns.system(grid, params, settings)?;
    let x = sys.pack(Some(&unknowns.rho), Some(&unknowns.value), None, None)?;
    sys.residual_vec(&x)
}

pub fn mfg_system(
    rho0: &[f64],
    grid: &GridSpec,
    params: &ModelParams,
    settings: &SolverSettings,
) -> Result<SpaceTimeSystem> {
    for (j, &r) in rho0.iter().enumerate() {
        if !(r > 0.0 && r < params.rho_jam) {
            return Err(Error::param(
                "rho0",
                format!("initial AV density must lie in (0, rho_jam); cell {j} has {r}"),
            ));
        }
    }
    SpaceTimeSystem::new(grid, params, settings.viscosity, Some(rho0), None)
}

/// Solves from the uniform-flow guess. A run that stops short of `tol`
/// returns its best iterate with `converged = false`.
pub fn solve_mfg(
    rho0: &[f64],
    grid: &GridSpec,
    params: &ModelParams,
    tol: f64,
    max_iter: usize,
) -> Result<(ClassTrajectory, NewtonReport)> {
    solve_mfg_with(rho0, grid, params, &SolverSettings::with_tolerance(tol, max_iter))
}

pub fn solve_mfg_with(
    rho0: &[f64],
    grid: &GridSpec,
    params: &ModelParams,
    settings: &SolverSettings,
) -> Result<(ClassTrajectory, NewtonReport)> {
    let sys = mfg_system(rho0, grid, params, settings)?;
    let sol = sys.solve(&settings.newton())?;
    let traj = sol.av.expect("AV block present");
    Ok((traj, sol.report))
}

/// The unknown fields of a solved trajectory, for residual evaluation.
pub fn unknowns_from(traj: &ClassTrajectory) -> Result<MfgUnknowns> {
    let value = traj
        .value
        .clone()
        .ok_or_else(|| Error::DimensionMismatch("trajectory carries no value field".into()))?;
    Ok(MfgUnknowns {
        rho: traj.density.clone(),
        value,
    })
}

/// Position of a residual row: density row (`false`) or HJB row (`true`) of slot `k`, cell `j`.
pub fn row_index(grid: &GridSpec, var_is_value: bool, k: usize, j: usize) -> usize {
    (k * grid.nx + j) * 2 + usize::from(var_is_value)
}
