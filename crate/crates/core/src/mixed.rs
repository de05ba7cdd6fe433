//! Coupled AV/HV system: the AV mean field game and the HV momentum
//! equation share the total density and are solved as one Newton system.

use crate::domain::{ClassTrajectory, Field, GridSpec, ModelParams};
use crate::error::{Error, Result};
use crate::newton::NewtonReport;
use crate::system::{HvInit, SolverSettings, SpaceTimeSystem};

/// Space-time fields of the coupled system; `y_hv = rho_hv (u_hv + h(rho_tot))`.
#[derive(Clone, Debug)]
pub struct MixedUnknowns {
    pub rho_av: Field,
    pub value: Field,
    pub rho_hv: Field,
    pub y_hv: Field,
}

impl MixedUnknowns {
    pub fn rho_tot(&self) -> Result<Field> {
        if self.rho_av.nx() != self.rho_hv.nx() || self.rho_av.num_levels() != self.rho_hv.num_levels() {
            return Err(Error::DimensionMismatch("class densities differ in shape".into()));
        }
        let levels: Vec<Vec<f64>> = self
            .rho_av
            .levels()
            .zip(self.rho_hv.levels())
            .map(|(a, h)| a.iter().zip(h).map(|(x, y)| x + y).collect())
            .collect();
        Field::from_levels(&levels)
    }

    fn system(&self, grid: &GridSpec, params: &ModelParams, settings: &SolverSettings) -> Result<SpaceTimeSystem> {
        for f in [&self.rho_av, &self.value, &self.rho_hv, &self.y_hv] {
            if f.num_levels() != grid.nt + 1 || f.nx() != grid.nx {
                return Err(Error::DimensionMismatch("mixed unknowns do not match the grid".into()));
            }
        }
        SpaceTimeSystem::from_conservative(
            grid,
            params,
            settings.viscosity,
            Some(self.rho_av.level(0)),
            Some((self.rho_hv.level(0), self.y_hv.level(0))),
        )?
        .with_terminal_value(self.value.level(grid.nt))
    }
}

/// Residual of length `4 nt nx`: per time slot the AV continuity, HJB,
/// HV continuity and HV momentum rows.
pub fn assemble_mixed_residual(unknowns: &MixedUnknowns, grid: &GridSpec, params: &ModelParams) -> Result<Vec<f64>> {
    assemble_mixed_residual_with(unknowns, grid, params, &SolverSettings::default())
}

pub fn assemble_mixed_residual_with(
    unknowns: &MixedUnknowns,
    grid: &GridSpec,
    params: &ModelParams,
    settings: &SolverSettings,
) -> Result<Vec<f64>> {
    let sys = unknowns.system(grid, params, settings)?;
    let x = sys.pack(
        Some(&unknowns.rho_av),
        Some(&unknowns.value),
        Some(&unknowns.rho_hv),
        Some(&unknowns.y_hv),
    )?;
    sys.residual_vec(&x)
}

/// Result of a mixed solve. A class whose initial density vanishes
/// identically is not simulated and is reported as `None`.
#[derive(Clone, Debug)]
pub struct MixedSolution {
    pub av: Option<ClassTrajectory>,
    pub hv: Option<ClassTrajectory>,
    pub report: NewtonReport,
}

pub fn mixed_system(
    rho0_av: &[f64],
    rho0_hv: &[f64],
    u0_hv: &[f64],
    grid: &GridSpec,
    params: &ModelParams,
    settings: &SolverSettings,
) -> Result<SpaceTimeSystem> {
    if rho0_av.len() != grid.nx || rho0_hv.len() != grid.nx || u0_hv.len() != grid.nx {
        return Err(Error::DimensionMismatch("initial data does not match the grid".into()));
    }
    for j in 0..grid.nx {
        let tot = rho0_av[j] + rho0_hv[j];
        if rho0_av[j] < 0.0 || rho0_hv[j] < 0.0 || tot >= params.rho_jam {
            return Err(Error::param(
                "initial densities",
                format!("need 0 <= rho_av, rho_hv and rho_av + rho_hv < rho_jam; cell {j} violates this"),
            ));
        }
        if !(0.0..=params.u_max).contains(&u0_hv[j]) {
            return Err(Error::param(
                "u0_hv",
                format!("cell {j} speed {} outside [0, u_max]", u0_hv[j]),
            ));
        }
    }
    let has_av = rho0_av.iter().any(|&r| r > 0.0);
    let has_hv = rho0_hv.iter().any(|&r| r > 0.0);
    if !has_av && !has_hv {
        return Err(Error::param("initial densities", "both classes are empty"));
    }
    SpaceTimeSystem::new(
        grid,
        params,
        settings.viscosity,
        has_av.then_some(rho0_av),
        has_hv.then_some(HvInit { rho: rho0_hv, u: u0_hv }),
    )
}

pub fn solve_mixed(
    rho0_av: &[f64],
    rho0_hv: &[f64],
    u0_hv: &[f64],
    grid: &GridSpec,
    params: &ModelParams,
    tol: f64,
    max_iter: usize,
) -> Result<MixedSolution> {
    solve_mixed_with(
        rho0_av,
        rho0_hv,
        u0_hv,
        grid,
        params,
        &SolverSettings::with_tolerance(tol, max_iter),
    )
}

pub fn solve_mixed_with(
    rho0_av: &[f64],
    rho0_hv: &[f64],
    u0_hv: &[f64],
    grid: &GridSpec,
    params: &ModelParams,
    settings: &SolverSettings,
) -> Result<MixedSolution> {
    let sys = mixed_system(rho0_av, rho0_hv, u0_hv, grid, params, settings)?;
    let sol = sys.solve(&settings.newton())?;
    Ok(MixedSolution {
        av: sol.av,
        hv: sol.hv,
        report: sol.report,
    })
}
