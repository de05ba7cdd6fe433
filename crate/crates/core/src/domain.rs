//! Shared domain types, closure relations, and the perturbation norm.
//!
//! Densities are physical (vehicles per meter) throughout the numerics;
//! configuration surfaces take normalized densities `s = rho / rho_jam` and
//! convert through [`ModelParams::density`].

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Scale of the hesitation function, m/s.
pub const HESITATION_SCALE: f64 = 9.0;

/// Cells with density below this fraction of `rho_jam` are treated as vacuum.
pub const VACUUM_FRACTION: f64 = 1e-12;

/// Densities are capped at `(1 - JAM_MARGIN) * rho_jam` before evaluating `h`.
pub const JAM_MARGIN: f64 = 1e-9;

/// Physical and behavioral constants.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelParams {
    /// Free-flow speed, m/s.
    pub u_max: f64,
    /// Jam density, 1/m.
    pub rho_jam: f64,
    /// ARZ relaxation time, s.
    pub tau: f64,
    /// AV sensitivity to the HV density.
    pub beta: f64,
}

impl Default for ModelParams {
    fn default() -> Self {
        ModelParams {
            u_max: 30.0,
            rho_jam: 1.0 / 7.5,
            tau: 3.0,
            beta: 0.0,
        }
    }
}

impl ModelParams {
    pub fn new(u_max: f64, rho_jam: f64, tau: f64, beta: f64) -> Result<Self> {
        let p = ModelParams {
            u_max,
            rho_jam,
            tau,
            beta,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        positive("u_max", self.u_max)?;
        positive("rho_jam", self.rho_jam)?;
        positive("tau", self.tau)?;
        if !(self.beta >= 0.0) || !self.beta.is_finite() {
            return Err(Error::param("beta", format!("must be >= 0, got {}", self.beta)));
        }
        Ok(())
    }

    pub fn with_beta(mut self, beta: f64) -> Self {
        self.beta = beta;
        self
    }

    /// Physical density for a normalized density.
    pub fn density(&self, normalized: f64) -> f64 {
        normalized * self.rho_jam
    }

    pub fn normalized(&self, rho: f64) -> f64 {
        rho / self.rho_jam
    }

    pub(crate) fn jam_cap(&self) -> f64 {
        (1.0 - JAM_MARGIN) * self.rho_jam
    }

    pub(crate) fn vacuum(&self) -> f64 {
        VACUUM_FRACTION * self.rho_jam
    }
}

fn positive(name: &'static str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::param(name, format!("must be finite and > 0, got {v}")))
    }
}

/// Periodic space-time discretization of the ring road.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    /// Ring length L, m.
    pub length: f64,
    /// Horizon T, s.
    pub horizon: f64,
    pub nx: usize,
    pub nt: usize,
}

impl GridSpec {
    pub fn new(length: f64, horizon: f64, nx: usize, nt: usize) -> Result<Self> {
        positive("length", length)?;
        positive("horizon", horizon)?;
        if nx < 3 {
            return Err(Error::param("nx", format!("need at least 3 cells, got {nx}")));
        }
        if nt == 0 {
            return Err(Error::param("nt", "must be positive"));
        }
        Ok(GridSpec {
            length,
            horizon,
            nx,
            nt,
        })
    }

    /// Smallest step count whose time step satisfies `dt <= cfl * dx / speed`.
    pub fn with_cfl(length: f64, horizon: f64, nx: usize, speed: f64, cfl: f64) -> Result<Self> {
        check_cfl_factor(cfl)?;
        positive("speed", speed)?;
        let dx = length / nx as f64;
        let steps = horizon * speed / (cfl * dx);
        let nt = (steps - 1e-9).ceil().max(1.0) as usize;
        GridSpec::new(length, horizon, nx, nt)
    }

    pub fn dx(&self) -> f64 {
        self.length / self.nx as f64
    }

    pub fn dt(&self) -> f64 {
        self.horizon / self.nt as f64
    }

    pub fn x(&self, j: usize) -> f64 {
        j as f64 * self.dx()
    }

    pub fn t(&self, n: usize) -> f64 {
        n as f64 * self.dt()
    }

    /// Checks `dt <= cfl * dx / u_max`.
    pub fn check_cfl(&self, params: &ModelParams, cfl: f64) -> Result<()> {
        check_cfl_factor(cfl)?;
        let courant = self.dt() * params.u_max / self.dx();
        if courant > cfl * (1.0 + 1e-12) {
            return Err(Error::Cfl { courant, limit: cfl });
        }
        Ok(())
    }

    pub fn with_horizon(&self, horizon: f64) -> Result<Self> {
        let nt = ((self.nt as f64) * horizon / self.horizon).round().max(1.0) as usize;
        GridSpec::new(self.length, horizon, self.nx, nt)
    }
}

fn check_cfl_factor(cfl: f64) -> Result<()> {
    if cfl > 0.0 && cfl <= 1.0 {
        Ok(())
    } else {
        Err(Error::param("cfl", format!("must lie in (0, 1], got {cfl}")))
    }
}

/// Space-time array with `nt + 1` time levels of `nx` cells each.
#[derive(Clone, Debug, PartialEq)]
pub struct Field {
    nx: usize,
    levels: usize,
    data: Vec<f64>,
}

impl Field {
    pub fn zeros(levels: usize, nx: usize) -> Self {
        Field {
            nx,
            levels,
            data: vec![0.0; levels * nx],
        }
    }

    pub fn from_levels(levels: &[Vec<f64>]) -> Result<Self> {
        let nx = levels.first().map_or(0, Vec::len);
        if levels.iter().any(|l| l.len() != nx) {
            return Err(Error::DimensionMismatch("ragged field levels".into()));
        }
        Ok(Field {
            nx,
            levels: levels.len(),
            data: levels.concat(),
        })
    }

    pub fn nx(&self) -> usize {
        self.nx
    }

    pub fn num_levels(&self) -> usize {
        self.levels
    }

    pub fn level(&self, n: usize) -> &[f64] {
        &self.data[n * self.nx..(n + 1) * self.nx]
    }

    pub fn level_mut(&mut self, n: usize) -> &mut [f64] {
        &mut self.data[n * self.nx..(n + 1) * self.nx]
    }

    pub fn levels(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks(self.nx)
    }

    pub fn get(&self, n: usize, j: usize) -> f64 {
        self.data[n * self.nx + j]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn max_abs_diff(&self, other: &Field) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// Density and velocity history of one vehicle class.
#[derive(Clone, Debug)]
pub struct ClassTrajectory {
    pub density: Field,
    pub velocity: Field,
    /// AV value function; `None` for human drivers.
    pub value: Option<Field>,
}

impl ClassTrajectory {
    pub fn check_grid(&self, grid: &GridSpec) -> Result<()> {
        let ok = |f: &Field| f.num_levels() == grid.nt + 1 && f.nx() == grid.nx;
        if ok(&self.density) && ok(&self.velocity) && self.value.as_ref().is_none_or(ok) {
            Ok(())
        } else {
            Err(Error::DimensionMismatch(format!(
                "trajectory is {}x{}, grid needs {}x{}",
                self.density.num_levels(),
                self.density.nx(),
                grid.nt + 1,
                grid.nx
            )))
        }
    }

    /// Total mass `sum(rho) * dx` at every stored level.
    pub fn masses(&self, dx: f64) -> Vec<f64> {
        self.density.levels().map(|l| l.iter().sum::<f64>() * dx).collect()
    }

    /// Largest relative deviation of the mass from its initial value.
    pub fn mass_drift(&self, dx: f64) -> f64 {
        let m = self.masses(dx);
        let m0 = m[0];
        let scale = if m0.abs() > 0.0 { m0.abs() } else { 1.0 };
        m.iter().map(|x| (x - m0).abs() / scale).fold(0.0, f64::max)
    }
}

/// Constant-in-space-and-time mixed traffic state.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct UniformFlow {
    pub rho_av: f64,
    pub rho_hv: f64,
    pub rho_tot: f64,
    pub u_bar: f64,
}

impl UniformFlow {
    /// Uniform flow from physical class densities; speed follows Greenshields.
    pub fn new(rho_av: f64, rho_hv: f64, params: &ModelParams) -> Result<Self> {
        if !(rho_av >= 0.0) || !(rho_hv >= 0.0) {
            return Err(Error::param("rho_bar", "class densities must be >= 0"));
        }
        let rho_tot = rho_av + rho_hv;
        if !(rho_tot > 0.0 && rho_tot < params.rho_jam) {
            return Err(Error::Domain {
                what: "a uniform flow (0 < rho_tot < rho_jam)",
                rho: rho_tot,
                normalized: params.normalized(rho_tot),
            });
        }
        Ok(UniformFlow {
            rho_av,
            rho_hv,
            rho_tot,
            u_bar: desired_speed(rho_tot, params),
        })
    }

    pub fn from_normalized(s_av: f64, s_hv: f64, params: &ModelParams) -> Result<Self> {
        UniformFlow::new(params.density(s_av), params.density(s_hv), params)
    }
}

/// Greenshields desired speed `u_max (1 - rho / rho_jam)`; not clamped.
pub fn desired_speed(rho: f64, params: &ModelParams) -> f64 {
    params.u_max * (1.0 - rho / params.rho_jam)
}

/// Hesitation `h(rho) = 9 m/s * sqrt(s / (1 - s))`, `s = rho / rho_jam`.
pub fn hesitation(rho: f64, params: &ModelParams) -> Result<f64> {
    let s = params.normalized(rho);
    if !(0.0..1.0).contains(&s) {
        return Err(Error::Domain {
            what: "the hesitation function",
            rho,
            normalized: s,
        });
    }
    Ok(HESITATION_SCALE * (s / (1.0 - s)).sqrt())
}

/// `dh/drho`, which diverges at both ends of `(0, rho_jam)`.
pub fn hesitation_deriv(rho: f64, params: &ModelParams) -> Result<f64> {
    let s = params.normalized(rho);
    if !(s > 0.0 && s < 1.0) {
        return Err(Error::Domain {
            what: "the hesitation derivative",
            rho,
            normalized: s,
        });
    }
    let one_minus = 1.0 - s;
    Ok(HESITATION_SCALE / (2.0 * params.rho_jam) * (one_minus / s).sqrt() / (one_minus * one_minus))
}

/// Cut-off `max(min(u, u_max), 0)`.
pub fn clamp_speed(u_raw: f64, params: &ModelParams) -> f64 {
    u_raw.min(params.u_max).max(0.0)
}

/// AV running cost: kinetic energy, efficiency, congestion safety on the
/// total density, plus the `beta`-weighted HV-density penalty.
pub fn av_running_cost(u: f64, rho_av: f64, rho_hv: f64, params: &ModelParams) -> f64 {
    let v = u / params.u_max;
    0.5 * v * v - v + u * (rho_av + rho_hv) / (params.u_max * params.rho_jam) + params.beta * rho_hv / params.rho_jam
}

/// Spatial norm used for perturbation sizes.
///
/// Both are normalized by the ring length, so a constant offset `c` has norm `|c|`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Norm {
    #[default]
    L1,
    L2,
}

impl Norm {
    pub fn deviation(&self, values: &[f64], center: f64) -> f64 {
        let n = values.len() as f64;
        match self {
            Norm::L1 => values.iter().map(|v| (v - center).abs()).sum::<f64>() / n,
            Norm::L2 => (values.iter().map(|v| (v - center).powi(2)).sum::<f64>() / n).sqrt(),
        }
    }
}

/// Perturbation size `E(t_k)` summed over the classes present.
///
/// Densities are measured in units of `rho_jam` and speeds in units of
/// `u_max`, so density and velocity deviations are commensurable.
pub fn error_function(
    av: Option<&ClassTrajectory>,
    hv: Option<&ClassTrajectory>,
    uf: &UniformFlow,
    grid: &GridSpec,
    params: &ModelParams,
    norm: Norm,
) -> Result<Vec<f64>> {
    let mut e = vec![0.0; grid.nt + 1];
    for (traj, rho_bar) in [(av, uf.rho_av), (hv, uf.rho_hv)] {
        let Some(traj) = traj else { continue };
        traj.check_grid(grid)?;
        let s_bar = params.normalized(rho_bar);
        let v_bar = uf.u_bar / params.u_max;
        let mut scratch = vec![0.0; grid.nx];
        for (n, en) in e.iter_mut().enumerate() {
            for (s, r) in scratch.iter_mut().zip(traj.density.level(n)) {
                *s = r / params.rho_jam;
            }
            *en += norm.deviation(&scratch, s_bar);
            for (s, u) in scratch.iter_mut().zip(traj.velocity.level(n)) {
                *s = u / params.u_max;
            }
            *en += norm.deviation(&scratch, v_bar);
        }
    }
    Ok(e)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn p() -> ModelParams {
        ModelParams::default()
    }

    #[test]
    fn desired_speed_examples() {
        let p = p();
        assert_eq!(desired_speed(0.0, &p), 30.0);
        assert_relative_eq!(desired_speed(p.rho_jam, &p), 0.0, epsilon = 1e-14);
        assert_relative_eq!(desired_speed(0.5 * p.rho_jam, &p), 15.0, epsilon = 1e-12);
    }

    #[test]
    fn hesitation_examples() {
        let p = p();
        assert_eq!(hesitation(0.0, &p).unwrap(), 0.0);
        assert_relative_eq!(hesitation(0.5 * p.rho_jam, &p).unwrap(), 9.0, epsilon = 1e-12);
        assert_relative_eq!(hesitation(0.8 * p.rho_jam, &p).unwrap(), 18.0, epsilon = 1e-12);
        assert!(matches!(hesitation(p.rho_jam, &p), Err(Error::Domain { .. })));
    }

    #[test]
    fn hesitation_deriv_examples() {
        let p = p();
        let mid = 0.5 * p.rho_jam;
        let d = hesitation_deriv(mid, &p).unwrap();
        assert_relative_eq!(d, 18.0 / p.rho_jam, max_relative = 1e-12);
        let h = 1e-6 * p.rho_jam;
        let fd = (hesitation(mid + h, &p).unwrap() - hesitation(mid - h, &p).unwrap()) / (2.0 * h);
        assert_relative_eq!(d, fd, max_relative = 1e-6);
        assert!(hesitation_deriv(0.999 * p.rho_jam, &p).unwrap() > 1e5);
        assert!(hesitation_deriv(0.0, &p).is_err());
        assert!(hesitation_deriv(p.rho_jam, &p).is_err());
    }

    #[test]
    fn clamp_examples() {
        let p = p();
        assert_eq!(clamp_speed(-5.0, &p), 0.0);
        assert_eq!(clamp_speed(12.0, &p), 12.0);
        assert_eq!(clamp_speed(35.0, &p), 30.0);
    }

    #[test]
    fn running_cost_examples() {
        let p = p();
        assert_eq!(av_running_cost(0.0, 0.05, 0.0, &p), 0.0);
        assert_relative_eq!(av_running_cost(30.0, 0.0, 0.0, &p), -0.5, epsilon = 1e-15);
        let half = 0.25 * p.rho_jam;
        assert_relative_eq!(av_running_cost(15.0, half, half, &p), -0.125, epsilon = 1e-15);
    }

    #[test]
    fn running_cost_reduces_to_pure_av_cost() {
        let p = p().with_beta(0.0);
        for i in 0..50 {
            for k in 0..50 {
                let u = p.u_max * i as f64 / 49.0;
                let rho = p.rho_jam * k as f64 / 49.0;
                let pure = 0.5 * (u / p.u_max).powi(2) - u / p.u_max + u * rho / (p.u_max * p.rho_jam);
                assert_eq!(av_running_cost(u, rho, 0.0, &p), pure);
            }
        }
    }

    #[test]
    fn params_validation() {
        assert!(ModelParams::new(0.0, 0.1, 3.0, 0.0).is_err());
        assert!(ModelParams::new(30.0, 0.1, 3.0, -1.0).is_err());
        assert!(GridSpec::new(1000.0, 10.0, 2, 10).is_err());
    }

    #[test]
    fn grid_with_cfl_respects_bound() {
        let p = p();
        let g = GridSpec::with_cfl(1000.0, 2000.0 / 30.0, 100, p.u_max, 0.5).unwrap();
        assert_eq!(g.nt, 400);
        g.check_cfl(&p, 0.5).unwrap();
        let coarse = GridSpec::new(1000.0, 2000.0 / 30.0, 100, 100).unwrap();
        assert!(matches!(coarse.check_cfl(&p, 0.5), Err(Error::Cfl { .. })));
    }

    fn sine_trajectory(grid: &GridSpec, s_bar: f64, eps: f64, u_bar: f64, p: &ModelParams) -> ClassTrajectory {
        let level: Vec<f64> = (0..grid.nx)
            .map(|j| p.density(s_bar + eps * (2.0 * std::f64::consts::PI * grid.x(j) / grid.length).sin()))
            .collect();
        let levels = vec![level; grid.nt + 1];
        ClassTrajectory {
            density: Field::from_levels(&levels).unwrap(),
            velocity: Field::from_levels(&vec![vec![u_bar; grid.nx]; grid.nt + 1]).unwrap(),
            value: None,
        }
    }

    #[test]
    fn error_function_uniform_is_zero_and_sine_matches_integral() {
        let p = p();
        let grid = GridSpec::new(1000.0, 10.0, 100, 4).unwrap();
        let uf = UniformFlow::from_normalized(0.1, 0.3, &p).unwrap();
        let av = sine_trajectory(&grid, 0.1, 0.0, uf.u_bar, &p);
        let hv = sine_trajectory(&grid, 0.3, 0.0, uf.u_bar, &p);
        let e = error_function(Some(&av), Some(&hv), &uf, &grid, &p, Norm::L1).unwrap();
        assert!(e.iter().all(|&x| x == 0.0));

        let eps = 0.02;
        let hv = sine_trajectory(&grid, 0.3, eps, uf.u_bar, &p);
        let e = error_function(Some(&av), Some(&hv), &uf, &grid, &p, Norm::L1).unwrap();
        // mean of |sin| over a period is 2/pi
        assert_relative_eq!(e[0], 2.0 * eps / std::f64::consts::PI, max_relative = 1e-3);

        let hv2 = sine_trajectory(&grid, 0.3, 3.0 * eps, uf.u_bar, &p);
        let e2 = error_function(Some(&av), Some(&hv2), &uf, &grid, &p, Norm::L1).unwrap();
        assert_relative_eq!(e2[0], 3.0 * e[0], max_relative = 1e-12);
    }

    #[test]
    fn error_function_rejects_mismatched_grid() {
        let p = p();
        let grid = GridSpec::new(1000.0, 10.0, 100, 4).unwrap();
        let uf = UniformFlow::from_normalized(0.1, 0.3, &p).unwrap();
        let av = sine_trajectory(&grid, 0.1, 0.0, uf.u_bar, &p);
        let other = GridSpec::new(1000.0, 10.0, 50, 4).unwrap();
        assert!(matches!(
            error_function(Some(&av), None, &uf, &other, &p, Norm::L1),
            Err(Error::DimensionMismatch(_))
        ));
    }

    proptest! {
        #[test]
        fn clamp_is_idempotent(x in -100.0f64..100.0) {
            let p = ModelParams::default();
            prop_assert_eq!(clamp_speed(clamp_speed(x, &p), &p), clamp_speed(x, &p));
        }

        #[test]
        fn greenshields_affine_identity(s in 0.0f64..1.5) {
            let p = ModelParams::default();
            let rho = p.density(s);
            let lhs = desired_speed(rho, &p) + p.u_max * rho / p.rho_jam;
            prop_assert!((lhs - p.u_max).abs() <= 1e-12 * p.u_max);
        }

        #[test]
        fn hesitation_deriv_matches_central_difference(s in 0.01f64..0.99) {
            let p = ModelParams::default();
            let rho = p.density(s);
            let h = 1e-6 * p.rho_jam * s.min(1.0 - s);
            let fd = (hesitation(rho + h, &p).unwrap() - hesitation(rho - h, &p).unwrap()) / (2.0 * h);
            let d = hesitation_deriv(rho, &p).unwrap();
            prop_assert!(((d - fd) / d).abs() <= 1e-6);
        }

        #[test]
        fn error_function_zero_iff_uniform(bump in 0usize..100, amp in -0.05f64..0.05) {
            let p = ModelParams::default();
            let grid = GridSpec::new(1000.0, 10.0, 100, 2).unwrap();
            let uf = UniformFlow::from_normalized(0.0, 0.4, &p).unwrap();
            let mut hv = sine_trajectory(&grid, 0.4, 0.0, uf.u_bar, &p);
            hv.density.level_mut(1)[bump] += p.density(amp);
            let e = error_function(None, Some(&hv), &uf, &grid, &p, Norm::L1).unwrap();
            prop_assert_eq!(e[0], 0.0);
            prop_assert_eq!(e[1] == 0.0, amp == 0.0);
        }
    }
}
