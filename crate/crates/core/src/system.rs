//! Space-time nonlinear system shared by the AV-only, mixed and HV-only
//! Newton solvers.
//!
//! Unknowns are ordered time-major. Slot `k` (for `k = 0..nt`) holds, for the
//! classes present, `rho_av^{k+1}`, `V^k`, `rho_hv^{k+1}` and `y^{k+1}`,
//! interleaved cell by cell. Initial densities and momenta and the terminal value
//! are data, not unknowns. Residual rows use the same ordering, so the row
//! block of an unknown is the equation that defines it.

use std::sync::Arc;

use crate::ad::{Dual, RowSeeds, Scalar};
use crate::arz::to_conservative_mixed;
use crate::domain::{ClassTrajectory, Field, GridSpec, ModelParams, UniformFlow};
use crate::error::{Error, Result};
use crate::newton::{newton_solve, NewtonOptions, NewtonReport, SparseJacobian};
use crate::ordering::{nested_dissection, Stencil};
use crate::scheme::{self, wrap, Viscosity};

const STENCIL: usize = 12;

/// Forward-backward sweeps applied to the uniform guess before Newton.
pub const MAX_SWEEPS: usize = 20;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Var {
    RhoAv,
    Value,
    RhoHv,
    Mom,
}

/// Initial data of the human-driver class.
#[derive(Clone, Copy, Debug)]
pub struct HvInit<'a> {
    pub rho: &'a [f64],
    pub u: &'a [f64],
}

#[derive(Clone, Debug)]
pub struct SpaceTimeSystem {
    grid: GridSpec,
    params: ModelParams,
    visc: Viscosity,
    blocks: Vec<Var>,
    rho_av0: Vec<f64>,
    rho_hv0: Vec<f64>,
    y0: Vec<f64>,
    v_terminal: Vec<f64>,
}

/// Newton and discretization settings for the space-time solvers.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverSettings {
    pub tol: f64,
    pub max_iter: usize,
    pub max_halvings: usize,
    pub reuse_ratio: f64,
    pub viscosity: Viscosity,
}

/// Factorizations dominate the cost of a space-time solve, so these solvers
/// reuse one while it keeps shrinking the residual fourfold per step.
pub const DEFAULT_REUSE_RATIO: f64 = 0.25;

impl Default for SolverSettings {
    fn default() -> Self {
        SolverSettings {
            reuse_ratio: DEFAULT_REUSE_RATIO,
            ..SolverSettings::from_newton(&NewtonOptions::default())
        }
    }
}

impl SolverSettings {
    pub fn from_newton(o: &NewtonOptions) -> Self {
        SolverSettings {
            tol: o.tol,
            max_iter: o.max_iter,
            max_halvings: o.max_halvings,
            reuse_ratio: o.reuse_ratio,
            viscosity: Viscosity::default(),
        }
    }

    pub fn with_tolerance(tol: f64, max_iter: usize) -> Self {
        SolverSettings {
            tol,
            max_iter,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0 && self.tol.is_finite()) {
            return Err(Error::param("solver.tol", "must be positive"));
        }
        if self.max_iter == 0 {
            return Err(Error::param("solver.max_iter", "must be at least 1"));
        }
        if !(0.0..1.0).contains(&self.reuse_ratio) {
            return Err(Error::param("solver.reuse_ratio", "must lie in [0, 1)"));
        }
        Ok(())
    }

    pub fn newton(&self) -> NewtonOptions {
        NewtonOptions {
            tol: self.tol,
            max_iter: self.max_iter,
            max_halvings: self.max_halvings,
            reuse_ratio: self.reuse_ratio,
        }
    }
}

#[derive(Clone, Debug)]
pub struct SystemSolution {
    pub av: Option<ClassTrajectory>,
    pub hv: Option<ClassTrajectory>,
    pub report: NewtonReport,
    pub unknowns: Vec<f64>,
}

impl SpaceTimeSystem {
    pub fn new(
        grid: &GridSpec,
        params: &ModelParams,
        visc: Viscosity,
        rho_av0: Option<&[f64]>,
        hv0: Option<HvInit<'_>>,
    ) -> Result<Self> {
        let momentum = match hv0 {
            Some(h) => {
                if h.rho.len() != h.u.len() {
                    return Err(Error::DimensionMismatch(
                        "HV density and velocity lengths differ".into(),
                    ));
                }
                let other = rho_av0.filter(|r| r.len() == h.rho.len());
                Some(to_conservative_mixed(h.rho, h.u, other, params)?.y)
            }
            None => None,
        };
        Self::from_conservative(grid, params, visc, rho_av0, hv0.map(|h| h.rho).zip(momentum.as_deref()))
    }

    /// Builds the system from initial HV density and momentum `(rho, y)`.
    pub fn from_conservative(
        grid: &GridSpec,
        params: &ModelParams,
        visc: Viscosity,
        rho_av0: Option<&[f64]>,
        hv0: Option<(&[f64], &[f64])>,
    ) -> Result<Self> {
        params.validate()?;
        let nx = grid.nx;
        let check = |v: &[f64], what: &str| {
            if v.len() == nx {
                Ok(())
            } else {
                Err(Error::DimensionMismatch(format!(
                    "{what} has {} cells, grid has {nx}",
                    v.len()
                )))
            }
        };
        if let Some(r) = rho_av0 {
            check(r, "AV density")?;
        }
        if let Some((r, y)) = hv0 {
            check(r, "HV density")?;
            check(y, "HV momentum")?;
        }
        let mut blocks = Vec::new();
        if rho_av0.is_some() {
            blocks.extend([Var::RhoAv, Var::Value]);
        }
        if hv0.is_some() {
            blocks.extend([Var::RhoHv, Var::Mom]);
        }
        if blocks.is_empty() {
            return Err(Error::param("classes", "at least one vehicle class is required"));
        }
        let zeros = || vec![0.0; nx];
        Ok(SpaceTimeSystem {
            grid: *grid,
            params: *params,
            visc,
            blocks,
            rho_av0: rho_av0.map_or_else(zeros, <[f64]>::to_vec),
            rho_hv0: hv0.map_or_else(zeros, |h| h.0.to_vec()),
            y0: hv0.map_or_else(zeros, |h| h.1.to_vec()),
            v_terminal: zeros(),
        })
    }

    /// Replaces the terminal value (zero by default).
    pub fn with_terminal_value(mut self, v: &[f64]) -> Result<Self> {
        if v.len() != self.grid.nx {
            return Err(Error::DimensionMismatch("terminal value length".into()));
        }
        self.v_terminal = v.to_vec();
        Ok(self)
    }

    pub fn has_av(&self) -> bool {
        self.blocks.contains(&Var::RhoAv)
    }

    pub fn has_hv(&self) -> bool {
        self.blocks.contains(&Var::RhoHv)
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn dim(&self) -> usize {
        self.blocks.len() * self.grid.nt * self.grid.nx
    }

    pub fn block_position(&self, var: Var) -> Option<usize> {
        self.blocks.iter().position(|&b| b == var)
    }

    /// Index of unknown (and residual row) `var` in slot `k`, cell `j`.
    pub fn index(&self, var: Var, k: usize, j: usize) -> Option<usize> {
        let b = self.block_position(var)?;
        Some((k * self.grid.nx + j) * self.blocks.len() + b)
    }

    /// Unknown index for `var` at time level `n`, or `None` when it is data.
    pub fn unknown_at(&self, var: Var, n: usize, j: usize) -> Option<usize> {
        match var {
            Var::Value if n == self.grid.nt => None,
            Var::Value => self.index(var, n, j),
            _ if n == 0 => None,
            _ => self.index(var, n - 1, j),
        }
    }

    fn fixed(&self, var: Var, j: usize) -> f64 {
        match var {
            Var::RhoAv => self.rho_av0[j],
            Var::Value => self.v_terminal[j],
            Var::RhoHv => self.rho_hv0[j],
            Var::Mom => self.y0[j],
        }
    }

    fn present(&self, var: Var) -> bool {
        match var {
            Var::RhoAv | Var::Value => self.has_av(),
            Var::RhoHv | Var::Mom => self.has_hv(),
        }
    }

    #[inline]
    fn lookup(&self, x: &[f64], var: Var, n: usize, j: usize) -> (Option<usize>, f64) {
        if !self.present(var) {
            return (None, 0.0);
        }
        match self.unknown_at(var, n, j) {
            Some(i) => (Some(i), x[i]),
            None => (None, self.fixed(var, j)),
        }
    }

    /// Value of `var` at level `n`, cell `j` under the unknown vector `x`.
    pub fn value(&self, x: &[f64], var: Var, n: usize, j: usize) -> f64 {
        self.lookup(x, var, n, j).1
    }

    /// Residual row `var` of slot `k` at cell `j`.
    fn eval_row<T: Scalar, G: FnMut(Var, usize, usize) -> T>(&self, var: Var, k: usize, j: usize, g: &mut G) -> T {
        let p = &self.params;
        let nx = self.grid.nx;
        let (dx, dt) = (self.grid.dx(), self.grid.dt());
        let zero = T::cst(0.0);
        match var {
            Var::RhoAv => {
                let (mut q, mut f, mut c) = ([zero; 3], [zero; 3], [zero; 3]);
                for i in 0..3 {
                    let jj = wrap(j as isize + i as isize - 1, nx);
                    let rho = g(Var::RhoAv, k, jj);
                    let tot = rho + g(Var::RhoHv, k, jj);
                    let v0 = g(Var::Value, k + 1, jj);
                    let v1 = g(Var::Value, k + 1, (jj + 1) % nx);
                    let u = scheme::av_velocity(tot, v0, v1, dx, p);
                    q[i] = rho;
                    f[i] = rho * u;
                    c[i] = u;
                }
                let al = scheme::interface_alpha(self.visc, c[0], c[1], dx, dt);
                let ar = scheme::interface_alpha(self.visc, c[1], c[2], dx, dt);
                (g(Var::RhoAv, k + 1, j) - scheme::lf_update(q, f, al, ar, dt, dx)) / p.rho_jam
            }
            Var::Value => {
                let rho_av = g(Var::RhoAv, k, j);
                let rho_hv = g(Var::RhoHv, k, j);
                let v_next = g(Var::Value, k + 1, j);
                let v_right = g(Var::Value, k + 1, (j + 1) % nx);
                let u = scheme::av_velocity(rho_av + rho_hv, v_next, v_right, dx, p);
                let cost = scheme::running_cost_g(u, rho_av, rho_hv, p);
                scheme::hjb_residual(g(Var::Value, k, j), v_next, v_right, u, cost, dt, dx)
            }
            Var::RhoHv | Var::Mom => {
                let (mut qr, mut qy, mut fr, mut fy, mut c) = ([zero; 3], [zero; 3], [zero; 3], [zero; 3], [zero; 3]);
                for i in 0..3 {
                    let jj = wrap(j as isize + i as isize - 1, nx);
                    let rho = g(Var::RhoHv, k, jj);
                    let y = g(Var::Mom, k, jj);
                    let tot = rho + g(Var::RhoAv, k, jj);
                    let u = scheme::hv_velocity(rho, y, tot, p);
                    qr[i] = rho;
                    qy[i] = y;
                    fr[i] = rho * u;
                    fy[i] = y * u;
                    c[i] = scheme::hv_wave_speed(rho, u, tot, p);
                }
                let al = scheme::interface_alpha(self.visc, c[0], c[1], dx, dt);
                let ar = scheme::interface_alpha(self.visc, c[1], c[2], dx, dt);
                if var == Var::RhoHv {
                    (g(Var::RhoHv, k + 1, j) - scheme::lf_update(qr, fr, al, ar, dt, dx)) / p.rho_jam
                } else {
                    let y_star = scheme::lf_update(qy, fy, al, ar, dt, dx);
                    let rho_new = g(Var::RhoHv, k + 1, j);
                    let tot_new = rho_new + g(Var::RhoAv, k + 1, j);
                    let y_new = scheme::relax(y_star, rho_new, tot_new, dt, p);
                    (g(Var::Mom, k + 1, j) - y_new) / (p.rho_jam * p.u_max)
                }
            }
        }
    }

    fn check_len(&self, x: &[f64]) -> Result<()> {
        if x.len() == self.dim() {
            Ok(())
        } else {
            Err(Error::DimensionMismatch(format!(
                "{} unknowns, system has {}",
                x.len(),
                self.dim()
            )))
        }
    }

    /// Scaled residual: densities in units of `rho_jam`, momentum in units of
    /// `rho_jam * u_max`, value rows unscaled.
    pub fn residual(&self, x: &[f64], out: &mut [f64]) {
        let nx = self.grid.nx;
        for k in 0..self.grid.nt {
            for &var in &self.blocks {
                for j in 0..nx {
                    let row = self.index(var, k, j).expect("block present");
                    out[row] = self.eval_row::<f64, _>(var, k, j, &mut |v, n, jj| self.value(x, v, n, jj));
                }
            }
        }
    }

    pub fn residual_vec(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_len(x)?;
        let mut r = vec![0.0; self.dim()];
        self.residual(x, &mut r);
        Ok(r)
    }

    /// Nested-dissection elimination order over time levels rather than
    /// slots: every row then touches levels `n` and `n + 1` only, and cells
    /// `j - 1..=j + 2`.
    fn column_ordering(&self) -> Arc<[usize]> {
        let stencil = Stencil { reach_x: 3, reach_t: 1 };
        let order = nested_dissection(self.grid.nx, self.grid.nt + 1, stencil, |n, j, out: &mut Vec<usize>| {
            out.extend(self.blocks.iter().filter_map(|&v| self.unknown_at(v, n, j)));
        });
        order.into()
    }

    /// Exact Jacobian of [`Self::residual`] by forward-mode differentiation of each row.
    pub fn jacobian(&self, x: &[f64]) -> SparseJacobian {
        let nx = self.grid.nx;
        let mut jac = SparseJacobian::new(self.dim());
        jac.ordering = Some(self.column_ordering());
        jac.rows.reserve(self.dim() * 10);
        jac.cols.reserve(self.dim() * 10);
        jac.values.reserve(self.dim() * 10);
        for k in 0..self.grid.nt {
            for &var in &self.blocks {
                for j in 0..nx {
                    let row = self.index(var, k, j).expect("block present");
                    let mut seeds = RowSeeds::<STENCIL>::new();
                    let r: Dual<STENCIL> = self.eval_row(var, k, j, &mut |v, n, jj| {
                        let (idx, val) = self.lookup(x, v, n, jj);
                        seeds.seed(idx, val)
                    });
                    for (col, d) in seeds.entries(&r) {
                        jac.push(row, col, d);
                    }
                }
            }
        }
        jac
    }

    /// Exact discrete solution for spatially uniform data with the given class densities.
    pub fn uniform_unknowns(&self, rho_av: f64, rho_hv: f64) -> Result<Vec<f64>> {
        let p = &self.params;
        let uf = UniformFlow::new(rho_av, rho_hv, p)?;
        let u_av = scheme::av_velocity(uf.rho_tot, 0.0, 0.0, 1.0, p);
        let c = scheme::running_cost_g(u_av, rho_av, rho_hv, p);
        let y = rho_hv * (uf.u_bar + scheme::hesitation_g(uf.rho_tot, p));
        let nx = self.grid.nx;
        let mut x = vec![0.0; self.dim()];
        for k in 0..self.grid.nt {
            for &var in &self.blocks {
                let v = match var {
                    Var::RhoAv => rho_av,
                    Var::Value => c * (self.grid.horizon - self.grid.t(k)),
                    Var::RhoHv => rho_hv,
                    Var::Mom => y,
                };
                for j in 0..nx {
                    if let Some(i) = self.index(var, k, j) {
                        x[i] = v;
                    }
                }
            }
        }
        Ok(x)
    }

    /// Uniform-flow initial guess built from the means of the initial data.
    pub fn initial_guess(&self) -> Result<Vec<f64>> {
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        self.uniform_unknowns(mean(&self.rho_av0), mean(&self.rho_hv0))
    }

    fn row_scale(&self, var: Var) -> f64 {
        match var {
            Var::RhoAv | Var::RhoHv => self.params.rho_jam,
            Var::Mom => self.params.rho_jam * self.params.u_max,
            Var::Value => 1.0,
        }
    }

    /// One forward march of the transport rows followed by one backward
    /// march of the value rows. Every row is affine in its own unknown with
    /// unit (scaled) coefficient, so each update solves its row exactly.
    pub fn sweep(&self, x: &mut [f64]) {
        let nx = self.grid.nx;
        let solve_row = |x: &mut [f64], var: Var, k: usize, j: usize| {
            let Some(i) = self.index(var, k, j) else { return };
            let r = self.eval_row::<f64, _>(var, k, j, &mut |v, n, jj| self.value(x, v, n, jj));
            x[i] -= r * self.row_scale(var);
        };
        for k in 0..self.grid.nt {
            for var in [Var::RhoAv, Var::RhoHv, Var::Mom] {
                for j in 0..nx {
                    solve_row(x, var, k, j);
                }
            }
        }
        for k in (0..self.grid.nt).rev() {
            for j in 0..nx {
                solve_row(x, Var::Value, k, j);
            }
        }
    }

    /// Uniform guess improved by forward-backward sweeps while they reduce
    /// the residual. Returns the guess and the number of sweeps kept.
    pub fn swept_guess(&self, max_sweeps: usize) -> Result<(Vec<f64>, usize)> {
        let mut x = self.initial_guess()?;
        let mut r = vec![0.0; self.dim()];
        self.residual(&x, &mut r);
        let mut best = crate::newton::sup_norm(&r);
        let mut kept = 0;
        let mut trial = x.clone();
        for _ in 0..max_sweeps {
            self.sweep(&mut trial);
            self.residual(&trial, &mut r);
            let norm = crate::newton::sup_norm(&r);
            if !(norm < best) {
                break;
            }
            let ratio = norm / best;
            x.copy_from_slice(&trial);
            best = norm;
            kept += 1;
            if ratio > 0.8 || best == 0.0 {
                break;
            }
        }
        Ok((x, kept))
    }

    /// Packs space-time fields into an unknown vector. Level 0 of the
    /// densities and momentum and the terminal level of `V` are ignored.
    pub fn pack(
        &self,
        rho_av: Option<&Field>,
        value: Option<&Field>,
        rho_hv: Option<&Field>,
        mom: Option<&Field>,
    ) -> Result<Vec<f64>> {
        let mut x = vec![0.0; self.dim()];
        for (var, f) in [
            (Var::RhoAv, rho_av),
            (Var::Value, value),
            (Var::RhoHv, rho_hv),
            (Var::Mom, mom),
        ] {
            if !self.present(var) {
                continue;
            }
            let f = f.ok_or_else(|| Error::DimensionMismatch(format!("missing field {var:?}")))?;
            if f.num_levels() != self.grid.nt + 1 || f.nx() != self.grid.nx {
                return Err(Error::DimensionMismatch(format!(
                    "field {var:?} does not match the grid"
                )));
            }
            for n in 0..=self.grid.nt {
                for j in 0..self.grid.nx {
                    if let Some(i) = self.unknown_at(var, n, j) {
                        x[i] = f.get(n, j);
                    }
                }
            }
        }
        Ok(x)
    }

    /// Space-time field of `var`, data levels included.
    pub fn field(&self, x: &[f64], var: Var) -> Field {
        let mut f = Field::zeros(self.grid.nt + 1, self.grid.nx);
        for n in 0..=self.grid.nt {
            for (j, v) in f.level_mut(n).iter_mut().enumerate() {
                *v = self.value(x, var, n, j);
            }
        }
        f
    }

    /// AV speed at every level: level `n < nt` uses the value at `n + 1`,
    /// the terminal level uses a flat value.
    pub fn av_velocity_field(&self, x: &[f64]) -> Field {
        let (nt, nx, dx) = (self.grid.nt, self.grid.nx, self.grid.dx());
        let mut f = Field::zeros(nt + 1, nx);
        for n in 0..=nt {
            for j in 0..nx {
                let tot = self.value(x, Var::RhoAv, n, j) + self.value(x, Var::RhoHv, n, j);
                let (v0, v1) = if n < nt {
                    (
                        self.value(x, Var::Value, n + 1, j),
                        self.value(x, Var::Value, n + 1, (j + 1) % nx),
                    )
                } else {
                    (0.0, 0.0)
                };
                f.level_mut(n)[j] = scheme::av_velocity(tot, v0, v1, dx, &self.params);
            }
        }
        f
    }

    pub fn hv_velocity_field(&self, x: &[f64]) -> Field {
        let (nt, nx) = (self.grid.nt, self.grid.nx);
        let mut f = Field::zeros(nt + 1, nx);
        for n in 0..=nt {
            for j in 0..nx {
                let rho = self.value(x, Var::RhoHv, n, j);
                let tot = rho + self.value(x, Var::RhoAv, n, j);
                f.level_mut(n)[j] = scheme::hv_velocity(rho, self.value(x, Var::Mom, n, j), tot, &self.params);
            }
        }
        f
    }

    pub fn trajectories(&self, x: &[f64]) -> (Option<ClassTrajectory>, Option<ClassTrajectory>) {
        let av = self.has_av().then(|| ClassTrajectory {
            density: self.field(x, Var::RhoAv),
            velocity: self.av_velocity_field(x),
            value: Some(self.field(x, Var::Value)),
        });
        let hv = self.has_hv().then(|| ClassTrajectory {
            density: self.field(x, Var::RhoHv),
            velocity: self.hv_velocity_field(x),
            value: None,
        });
        (av, hv)
    }

    pub fn solve_from(&self, x0: Vec<f64>, opts: &NewtonOptions) -> Result<SystemSolution> {
        self.check_len(&x0)?;
        let (x, report) = newton_solve(|x, r| self.residual(x, r), |x| self.jacobian(x), x0, opts)?;
        let (av, hv) = self.trajectories(&x);
        Ok(SystemSolution {
            av,
            hv,
            report,
            unknowns: x,
        })
    }

    /// Newton from the uniform guess, or from a forward march when only human
    /// drivers are present (the march then solves the system outright). If
    /// Newton stalls, it is restarted once from the swept guess and the run
    /// with the smaller final residual is kept.
    pub fn solve(&self, opts: &NewtonOptions) -> Result<SystemSolution> {
        if !self.has_av() {
            return self.solve_from(self.swept_guess(1)?.0, opts);
        }
        let first = self.solve_from(self.initial_guess()?, opts)?;
        if first.report.converged {
            return Ok(first);
        }
        let second = self.solve_from(self.swept_guess(MAX_SWEEPS)?.0, opts)?;
        Ok(if second.report.final_residual() < first.report.final_residual() {
            second
        } else {
            first
        })
    }
}
