//! Explicit solver for the human-driver (ARZ) system.
//!
//! The conservation part is advanced with a Lax-Friedrichs flux and the
//! relaxation source with backward Euler. When an AV density is supplied
//! as a background, hesitation and desired speed see the total density.

use crate::domain::{hesitation, ClassTrajectory, Field, GridSpec, ModelParams};
use crate::error::{Error, Result};
use crate::scheme::{self, Viscosity};

/// Density and generalized momentum `y = rho (u + h(rho_tot))`.
#[derive(Clone, Debug, PartialEq)]
pub struct ArzState {
    pub rho: Vec<f64>,
    pub y: Vec<f64>,
}

pub fn to_conservative(rho: &[f64], u: &[f64], params: &ModelParams) -> Result<ArzState> {
    to_conservative_mixed(rho, u, None, params)
}

/// Conservative transform with the hesitation evaluated at `rho + rho_other`.
pub fn to_conservative_mixed(
    rho: &[f64],
    u: &[f64],
    rho_other: Option<&[f64]>,
    params: &ModelParams,
) -> Result<ArzState> {
    if rho.len() != u.len() || rho_other.is_some_and(|o| o.len() != rho.len()) {
        return Err(Error::DimensionMismatch("density and velocity lengths differ".into()));
    }
    let mut y = Vec::with_capacity(rho.len());
    for (j, (&r, &v)) in rho.iter().zip(u).enumerate() {
        let tot = r + rho_other.map_or(0.0, |o| o[j]);
        y.push(r * (v + hesitation(tot, params)?));
    }
    Ok(ArzState { rho: rho.to_vec(), y })
}

/// Recovered (clamped) velocities.
pub fn from_conservative(state: &ArzState, rho_other: Option<&[f64]>, params: &ModelParams) -> Vec<f64> {
    (0..state.rho.len())
        .map(|j| {
            let tot = state.rho[j] + rho_other.map_or(0.0, |o| o[j]);
            scheme::hv_velocity(state.rho[j], state.y[j], tot, params)
        })
        .collect()
}

/// Per-step bookkeeping.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct StepDiagnostics {
    pub courant: f64,
    /// Largest amount by which a recovered velocity was clamped into `[0, u_max]`.
    pub max_clamp: f64,
    /// Cells whose total density reached the jam cap.
    pub ceiling_hits: usize,
}

impl StepDiagnostics {
    fn absorb(&mut self, o: &StepDiagnostics) {
        self.courant = self.courant.max(o.courant);
        self.max_clamp = self.max_clamp.max(o.max_clamp);
        self.ceiling_hits += o.ceiling_hits;
    }
}

/// AV density seen by the human drivers at the start and end of a step.
#[derive(Clone, Copy, Debug)]
pub struct Background<'a> {
    pub old: &'a [f64],
    pub new: &'a [f64],
}

/// One step with a static background density and local viscosity.
pub fn arz_step(
    state: &ArzState,
    dt: f64,
    grid: &GridSpec,
    params: &ModelParams,
    rho_other: Option<&[f64]>,
) -> Result<ArzState> {
    let bg = rho_other.map(|o| Background { old: o, new: o });
    arz_step_with(state, dt, grid, params, bg, Viscosity::Local).map(|(s, _)| s)
}

pub fn arz_step_with(
    state: &ArzState,
    dt: f64,
    grid: &GridSpec,
    params: &ModelParams,
    background: Option<Background<'_>>,
    visc: Viscosity,
) -> Result<(ArzState, StepDiagnostics)> {
    let nx = grid.nx;
    let dx = grid.dx();
    if state.rho.len() != nx || state.y.len() != nx {
        return Err(Error::DimensionMismatch(format!(
            "state has {} cells, grid has {nx}",
            state.rho.len()
        )));
    }
    if let Some(bg) = background {
        if bg.old.len() != nx || bg.new.len() != nx {
            return Err(Error::DimensionMismatch("background length differs from grid".into()));
        }
    }
    let other_old = |j: usize| background.map_or(0.0, |b| b.old[j]);
    let other_new = |j: usize| background.map_or(0.0, |b| b.new[j]);

    let mut diag = StepDiagnostics::default();
    let mut u = vec![0.0; nx];
    let mut c = vec![0.0; nx];
    for j in 0..nx {
        let (r, y) = (state.rho[j], state.y[j]);
        let tot = r + other_old(j);
        if tot >= params.jam_cap() {
            diag.ceiling_hits += 1;
        }
        u[j] = scheme::hv_velocity(r, y, tot, params);
        if r >= params.vacuum() {
            let raw = y / r - scheme::hesitation_g(tot, params);
            diag.max_clamp = diag.max_clamp.max((raw - u[j]).abs());
        }
        c[j] = scheme::hv_wave_speed(r, u[j], tot, params);
    }
    diag.courant = c.iter().fold(0.0f64, |m, &v| m.max(v)) * dt / dx;
    if diag.courant > 1.0 {
        return Err(Error::Cfl {
            courant: diag.courant,
            limit: 1.0,
        });
    }

    let mut alpha = vec![0.0; nx]; // interface j+1/2
    for j in 0..nx {
        alpha[j] = scheme::interface_alpha(visc, c[j], c[(j + 1) % nx], dx, dt);
    }
    let mut next = ArzState {
        rho: vec![0.0; nx],
        y: vec![0.0; nx],
    };
    for j in 0..nx {
        let jm = scheme::wrap(j as isize - 1, nx);
        let jp = (j + 1) % nx;
        let qr = [state.rho[jm], state.rho[j], state.rho[jp]];
        let qy = [state.y[jm], state.y[j], state.y[jp]];
        let fr = [qr[0] * u[jm], qr[1] * u[j], qr[2] * u[jp]];
        let fy = [qy[0] * u[jm], qy[1] * u[j], qy[2] * u[jp]];
        let rho_new = scheme::lf_update(qr, fr, alpha[jm], alpha[j], dt, dx);
        if rho_new < 0.0 {
            return Err(Error::NegativeDensity {
                cell: j,
                value: rho_new,
            });
        }
        let y_star = scheme::lf_update(qy, fy, alpha[jm], alpha[j], dt, dx);
        next.rho[j] = rho_new;
        next.y[j] = scheme::relax(y_star, rho_new, rho_new + other_new(j), dt, params);
    }
    Ok((next, diag))
}

/// Explicit solver settings.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ArzOptions {
    pub viscosity: Viscosity,
    /// Sub-cycling keeps every sub-step at or below this Courant number.
    pub max_courant: f64,
}

impl Default for ArzOptions {
    fn default() -> Self {
        ArzOptions {
            viscosity: Viscosity::Local,
            max_courant: 1.0,
        }
    }
}

/// Run-level bookkeeping.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct ArzDiagnostics {
    pub substeps: usize,
    pub max_courant: f64,
    pub max_clamp: f64,
    pub ceiling_hits: usize,
}

pub fn solve_arz(rho0: &[f64], u0: &[f64], grid: &GridSpec, params: &ModelParams) -> Result<ClassTrajectory> {
    solve_arz_with(rho0, u0, grid, params, &ArzOptions::default()).map(|(t, _)| t)
}

/// Marches `grid.nt` macro steps, splitting a step into equal sub-steps
/// whenever the characteristic speeds would exceed `max_courant`.
pub fn solve_arz_with(
    rho0: &[f64],
    u0: &[f64],
    grid: &GridSpec,
    params: &ModelParams,
    opts: &ArzOptions,
) -> Result<(ClassTrajectory, ArzDiagnostics)> {
    params.validate()?;
    if rho0.len() != grid.nx || u0.len() != grid.nx {
        return Err(Error::DimensionMismatch(format!(
            "initial data has {} cells, grid has {}",
            rho0.len(),
            grid.nx
        )));
    }
    if !(opts.max_courant > 0.0 && opts.max_courant <= 1.0) {
        return Err(Error::param("max_courant", "must lie in (0, 1]"));
    }
    let mut state = to_conservative(rho0, u0, params)?;
    let mut density = Field::zeros(grid.nt + 1, grid.nx);
    let mut velocity = Field::zeros(grid.nt + 1, grid.nx);
    density.level_mut(0).copy_from_slice(&state.rho);
    velocity
        .level_mut(0)
        .copy_from_slice(&from_conservative(&state, None, params));

    let dt = grid.dt();
    let dx = grid.dx();
    let mut diag = ArzDiagnostics::default();
    for n in 0..grid.nt {
        let c = max_wave_speed(&state, params);
        let mut m = ((c * dt / (opts.max_courant * dx)) * (1.0 + 1e-12)).ceil().max(1.0) as usize;
        let (next, step_diag, used) = loop {
            match march(&state, dt, m, grid, params, opts.viscosity) {
                Ok((s, d)) => break (s, d, m),
                Err(Error::Cfl { .. }) if m < 1 << 20 => m *= 2,
                Err(e) => return Err(e),
            }
        };
        state = next;
        diag.substeps += used;
        diag.max_courant = diag.max_courant.max(step_diag.courant);
        diag.max_clamp = diag.max_clamp.max(step_diag.max_clamp);
        diag.ceiling_hits += step_diag.ceiling_hits;
        density.level_mut(n + 1).copy_from_slice(&state.rho);
        velocity
            .level_mut(n + 1)
            .copy_from_slice(&from_conservative(&state, None, params));
    }
    Ok((
        ClassTrajectory {
            density,
            velocity,
            value: None,
        },
        diag,
    ))
}

fn march(
    state: &ArzState,
    dt: f64,
    m: usize,
    grid: &GridSpec,
    params: &ModelParams,
    visc: Viscosity,
) -> Result<(ArzState, StepDiagnostics)> {
    let h = dt / m as f64;
    let mut s = state.clone();
    let mut diag = StepDiagnostics::default();
    for _ in 0..m {
        let (next, d) = arz_step_with(&s, h, grid, params, None, visc)?;
        diag.absorb(&d);
        s = next;
    }
    Ok((s, diag))
}

/// Largest human-driver characteristic speed over the cells.
pub fn max_wave_speed(state: &ArzState, params: &ModelParams) -> f64 {
    state
        .rho
        .iter()
        .zip(&state.y)
        .map(|(&r, &y)| scheme::hv_wave_speed(r, scheme::hv_velocity(r, y, r, params), r, params))
        .fold(0.0, f64::max)
}
