//! Pointwise discretization kernels, generic over [`Scalar`] so that the
//! explicit solvers, the space-time residuals and their Jacobians all run
//! the same arithmetic.

use serde::{Deserialize, Serialize};

use crate::ad::Scalar;
use crate::domain::{ModelParams, HESITATION_SCALE};

/// Numerical viscosity of the Lax-Friedrichs flux.
///
/// `Local` uses the largest characteristic speed of the two neighbouring
/// cells (Rusanov), smoothed from above by [`SMOOTHING_WIDTH`]; `Classical`
/// uses the grid speed `dx / dt`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Viscosity {
    #[default]
    Local,
    Classical,
}

/// Hesitation evaluated below the jam cap; zero on vacuum.
pub fn hesitation_g<T: Scalar>(rho: T, p: &ModelParams) -> T {
    let s = rho.min(T::cst(p.jam_cap())) / p.rho_jam;
    if s.val() <= 0.0 {
        return T::cst(0.0);
    }
    (s / (-s + 1.0)).sqrt() * HESITATION_SCALE
}

/// `dh/drho` below the jam cap. Diverges at vacuum, so callers only use it
/// multiplied by the class density.
pub fn hesitation_deriv_g<T: Scalar>(rho: T, p: &ModelParams) -> T {
    let s = rho.min(T::cst(p.jam_cap())) / p.rho_jam;
    let s = s.max(T::cst(f64::MIN_POSITIVE.sqrt()));
    let one_minus = -s + 1.0;
    (one_minus / s).sqrt() / (one_minus * one_minus) * (HESITATION_SCALE / (2.0 * p.rho_jam))
}

pub fn desired_speed_g<T: Scalar>(rho: T, p: &ModelParams) -> T {
    (-(rho / p.rho_jam) + 1.0) * p.u_max
}

/// Human-driver velocity recovered from the conservative momentum `y`.
pub fn hv_velocity<T: Scalar>(rho_hv: T, y: T, rho_tot: T, p: &ModelParams) -> T {
    if rho_hv.val() < p.vacuum() {
        return T::cst(p.u_max);
    }
    (y / rho_hv - hesitation_g(rho_tot, p)).clamp_to(0.0, p.u_max)
}

/// Width of the smoothed `max` and `abs` in the local viscosity, m/s.
pub const SMOOTHING_WIDTH: f64 = 0.05;

/// `sqrt(x^2 + w^2)`: a smooth upper bound of `|x|`, exceeding it by at most `w`.
pub fn smooth_abs<T: Scalar>(x: T, w: f64) -> T {
    (x * x + w * w).sqrt()
}

/// Smooth upper bound of `max(a, b)`, exceeding it by at most `w / 2`.
pub fn smooth_max<T: Scalar>(a: T, b: T, w: f64) -> T {
    (a + b + smooth_abs(a - b, w)) * 0.5
}

/// Largest characteristic speed of the human-driver subsystem (smoothed
/// from above so that the local viscosity is differentiable).
pub fn hv_wave_speed<T: Scalar>(rho_hv: T, u: T, rho_tot: T, p: &ModelParams) -> T {
    if rho_hv.val() < p.vacuum() {
        return u;
    }
    let slow = u - rho_hv * hesitation_deriv_g(rho_tot, p);
    smooth_max(u, smooth_abs(slow, SMOOTHING_WIDTH), SMOOTHING_WIDTH)
}

/// Optimal AV speed given the total density and the forward difference of `V`.
pub fn av_velocity<T: Scalar>(rho_tot: T, v_here: T, v_right: T, dx: f64, p: &ModelParams) -> T {
    let vx = (v_right - v_here) / dx;
    ((-(rho_tot / p.rho_jam) + 1.0 - vx * p.u_max) * p.u_max).clamp_to(0.0, p.u_max)
}

pub fn running_cost_g<T: Scalar>(u: T, rho_av: T, rho_hv: T, p: &ModelParams) -> T {
    let v = u / p.u_max;
    v * v * 0.5 - v + u * (rho_av + rho_hv) / (p.u_max * p.rho_jam) + rho_hv * (p.beta / p.rho_jam)
}

/// Interface viscosity coefficient from the two adjacent characteristic speeds.
pub fn interface_alpha<T: Scalar>(visc: Viscosity, c_left: T, c_right: T, dx: f64, dt: f64) -> T {
    match visc {
        Viscosity::Local => smooth_max(c_left, c_right, SMOOTHING_WIDTH),
        Viscosity::Classical => T::cst(dx / dt),
    }
}

/// Conservative update of cell `j` from the states and fluxes of cells
/// `j-1, j, j+1` and the viscosities at its two interfaces.
pub fn lf_update<T: Scalar>(q: [T; 3], f: [T; 3], alpha_l: T, alpha_r: T, dt: f64, dx: f64) -> T {
    let g_l = (f[0] + f[1]) * 0.5 - alpha_l * (q[1] - q[0]) * 0.5;
    let g_r = (f[1] + f[2]) * 0.5 - alpha_r * (q[2] - q[1]) * 0.5;
    q[1] - (g_r - g_l) * (dt / dx)
}

/// Backward-Euler relaxation of the momentum towards `rho (U + h)` of the total density.
pub fn relax<T: Scalar>(y_star: T, rho_hv: T, rho_tot: T, dt: f64, p: &ModelParams) -> T {
    let k = dt / p.tau;
    let target = rho_hv * (desired_speed_g(rho_tot, p) + hesitation_g(rho_tot, p));
    (y_star + target * k) / (1.0 + k)
}

/// Residual of the backward upwind HJB step at one cell.
pub fn hjb_residual<T: Scalar>(v_now: T, v_next: T, v_next_right: T, u: T, cost: T, dt: f64, dx: f64) -> T {
    v_now - v_next - (u * (v_next_right - v_next) / dx + cost) * dt
}

#[inline]
pub(crate) fn wrap(j: isize, nx: usize) -> usize {
    j.rem_euclid(nx as isize) as usize
}
