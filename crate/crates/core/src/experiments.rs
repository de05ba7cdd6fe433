//! Perturbed uniform-flow scenarios, the doubling criterion on `E(t)` and
//! the three phase-diagram sweeps.

use std::f64::consts::PI;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::arz::solve_arz;
use crate::domain::{error_function, ClassTrajectory, GridSpec, ModelParams, Norm, UniformFlow};
use crate::error::{Error, Result};
use crate::linear::arz_linear_stable;
use crate::mfg::solve_mfg_with;
use crate::mixed::solve_mixed_with;
use crate::newton::NewtonReport;
use crate::scheme;
use crate::system::SolverSettings;

/// Largest admissible normalized total density of a scenario.
pub const MAX_TOTAL_DENSITY: f64 = 0.75;
/// Slack for grid values such as `0.05 * 15` that land a rounding error above the cap.
const DENSITY_SLACK: f64 = 1e-9;

fn check_cap(total: f64) -> Result<()> {
    if total > MAX_TOTAL_DENSITY + DENSITY_SLACK {
        return Err(Error::param(
            "rho_bar",
            format!("total normalized density {total} exceeds {MAX_TOTAL_DENSITY}; perturbed flows could then reach the jam density"),
        ));
    }
    Ok(())
}

/// Ring, horizon and resolution. The step count follows from the CFL factor
/// and the fastest characteristic speed of the initial data.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridConfig {
    pub length: f64,
    /// Defaults to `2 L / u_max`.
    pub horizon: Option<f64>,
    pub nx: usize,
    pub cfl: f64,
}

impl Default for GridConfig {
    fn default() -> Self {
        GridConfig {
            length: 1000.0,
            horizon: None,
            nx: 100,
            cfl: 0.5,
        }
    }
}

impl GridConfig {
    pub fn horizon(&self, params: &ModelParams) -> f64 {
        self.horizon.unwrap_or(2.0 * self.length / params.u_max)
    }

    /// Grid whose step resolves `speed` (never less than `u_max`) at the CFL factor.
    pub fn grid(&self, params: &ModelParams, speed: f64) -> Result<GridSpec> {
        GridSpec::with_cfl(
            self.length,
            self.horizon(params),
            self.nx,
            speed.max(params.u_max),
            self.cfl,
        )
    }

    pub fn validate(&self, params: &ModelParams) -> Result<()> {
        self.grid(params, params.u_max).map(|_| ())
    }
}

/// Settings shared by every run of an experiment.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentSettings {
    pub grid: GridConfig,
    pub solver: SolverSettings,
    pub norm: Norm,
    /// Sine amplitude relative to each class's uniform density.
    pub amplitude: f64,
    /// Also run the unperturbed flow at every sweep point.
    pub control_runs: bool,
    /// Sweep worker threads; 0 uses all cores.
    pub jobs: usize,
}

impl Default for ExperimentSettings {
    fn default() -> Self {
        ExperimentSettings {
            grid: GridConfig::default(),
            solver: SolverSettings::default(),
            norm: Norm::L1,
            amplitude: 0.1,
            control_runs: true,
            jobs: 0,
        }
    }
}

/// One perturbed uniform flow, densities normalized by `rho_jam`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub rho_bar_av: f64,
    pub rho_bar_hv: f64,
    pub beta: f64,
    pub perturbation_rel_amplitude: f64,
    pub grid: GridSpec,
    pub params: ModelParams,
}

impl ScenarioSpec {
    pub fn new(
        rho_bar_av: f64,
        rho_bar_hv: f64,
        beta: f64,
        amplitude: f64,
        grid: &GridConfig,
        params: &ModelParams,
    ) -> Result<Self> {
        check_cap(rho_bar_av + rho_bar_hv)?;
        let spec = Self::build(rho_bar_av, rho_bar_hv, beta, amplitude, grid, params)?;
        spec.validate()?;
        Ok(spec)
    }

    /// Pure-HV scenario above the mixed-traffic density cap; only the
    /// perturbed peak has to stay below the jam density.
    pub fn pure_hv(rho_bar: f64, amplitude: f64, grid: &GridConfig, params: &ModelParams) -> Result<Self> {
        Self::build(0.0, rho_bar, params.beta, amplitude, grid, params)
    }

    /// Pure-AV counterpart of [`ScenarioSpec::pure_hv`].
    pub fn pure_av(rho_bar: f64, amplitude: f64, grid: &GridConfig, params: &ModelParams) -> Result<Self> {
        Self::build(rho_bar, 0.0, params.beta, amplitude, grid, params)
    }

    fn build(
        rho_bar_av: f64,
        rho_bar_hv: f64,
        beta: f64,
        amplitude: f64,
        grid: &GridConfig,
        params: &ModelParams,
    ) -> Result<Self> {
        let params = params.with_beta(beta);
        params.validate()?;
        let mut spec = ScenarioSpec {
            rho_bar_av,
            rho_bar_hv,
            beta,
            perturbation_rel_amplitude: amplitude,
            grid: grid.grid(&params, params.u_max)?,
            params,
        };
        spec.check_shape()?;
        let (ra, rh, u) = initial_conditions(&spec);
        let speed = (0..ra.len())
            .map(|j| scheme::hv_wave_speed(rh[j], u[j], ra[j] + rh[j], &params))
            .fold(params.u_max, f64::max);
        spec.grid = grid.grid(&params, speed)?;
        Ok(spec)
    }

    fn check_shape(&self) -> Result<()> {
        let (a, h) = (self.rho_bar_av, self.rho_bar_hv);
        if !(a >= 0.0 && h >= 0.0) {
            return Err(Error::param("rho_bar", "class densities must be >= 0"));
        }
        if !(a + h > 0.0) {
            return Err(Error::param("rho_bar", "at least one class must be present"));
        }
        if !(0.0..1.0).contains(&self.perturbation_rel_amplitude) {
            return Err(Error::param("perturbation_rel_amplitude", "must lie in [0, 1)"));
        }
        if (a + h) * (1.0 + self.perturbation_rel_amplitude) >= 1.0 {
            return Err(Error::param(
                "rho_bar",
                "perturbed total density reaches the jam density",
            ));
        }
        if self.params.beta != self.beta {
            return Err(Error::param("beta", "differs from params.beta"));
        }
        Ok(())
    }

    /// Full check, including the mixed-traffic cap on the total density.
    pub fn validate(&self) -> Result<()> {
        check_cap(self.rho_bar_tot())?;
        self.check_shape()
    }

    /// The cap only binds when both classes are present.
    fn check_admissible(&self) -> Result<()> {
        if self.rho_bar_av > 0.0 && self.rho_bar_hv > 0.0 {
            self.validate()
        } else {
            self.check_shape()
        }
    }

    pub fn rho_bar_tot(&self) -> f64 {
        self.rho_bar_av + self.rho_bar_hv
    }

    pub fn uniform_flow(&self) -> Result<UniformFlow> {
        UniformFlow::from_normalized(self.rho_bar_av, self.rho_bar_hv, &self.params)
    }

    /// Same scenario and grid with another amplitude.
    pub fn with_amplitude(&self, amplitude: f64) -> Result<Self> {
        let s = ScenarioSpec {
            perturbation_rel_amplitude: amplitude,
            ..*self
        };
        s.check_shape()?;
        Ok(s)
    }
}

/// In-phase sine perturbations of both densities and the uniform HV speed,
/// in physical units.
pub fn build_initial_conditions(spec: &ScenarioSpec) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>)> {
    spec.check_admissible()?;
    Ok(initial_conditions(spec))
}

fn initial_conditions(spec: &ScenarioSpec) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let (p, g) = (&spec.params, &spec.grid);
    let shape: Vec<f64> = (0..g.nx)
        .map(|j| 1.0 + spec.perturbation_rel_amplitude * (2.0 * PI * g.x(j) / g.length).sin())
        .collect();
    let rho_av = shape.iter().map(|s| p.density(spec.rho_bar_av) * s).collect();
    let rho_hv = shape.iter().map(|s| p.density(spec.rho_bar_hv) * s).collect();
    let u = p.u_max * (1.0 - spec.rho_bar_tot());
    (rho_av, rho_hv, vec![u; g.nx])
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StabilityVerdict {
    pub stable: bool,
    pub e0: f64,
    pub e_max: f64,
    pub t_of_max: f64,
    pub trace: Vec<f64>,
    /// `E(0) = 0`: nothing to amplify, stable by convention.
    pub unperturbed: bool,
}

/// Unstable iff `max E >= 2 E(0)`.
pub fn classify_trace(trace: &[f64], grid: &GridSpec) -> Result<StabilityVerdict> {
    if trace.len() != grid.nt + 1 {
        return Err(Error::DimensionMismatch(format!(
            "trace has {} levels, grid {}",
            trace.len(),
            grid.nt + 1
        )));
    }
    if let Some(k) = trace.iter().position(|e| !e.is_finite()) {
        return Err(Error::param("trace", format!("non-finite error at level {k}")));
    }
    let (mut k_max, mut e_max) = (0, trace[0]);
    for (k, &e) in trace.iter().enumerate() {
        if e > e_max {
            (k_max, e_max) = (k, e);
        }
    }
    let e0 = trace[0];
    let unperturbed = e0 == 0.0;
    Ok(StabilityVerdict {
        stable: unperturbed || e_max < 2.0 * e0,
        e0,
        e_max,
        t_of_max: grid.t(k_max),
        trace: trace.to_vec(),
        unperturbed,
    })
}

pub fn classify_stability(
    av: Option<&ClassTrajectory>,
    hv: Option<&ClassTrajectory>,
    uf: &UniformFlow,
    grid: &GridSpec,
    params: &ModelParams,
    norm: Norm,
) -> Result<StabilityVerdict> {
    classify_trace(&error_function(av, hv, uf, grid, params, norm)?, grid)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SolverKind {
    /// Explicit ARZ stepping (no AVs).
    Arz,
    /// AV game alone (no HVs).
    Mfg,
    Mixed,
}

#[derive(Clone, Debug)]
pub struct ScenarioRun {
    pub spec: ScenarioSpec,
    pub uniform: UniformFlow,
    pub solver: SolverKind,
    pub av: Option<ClassTrajectory>,
    pub hv: Option<ClassTrajectory>,
    /// Newton report; `None` for explicit ARZ runs.
    pub report: Option<NewtonReport>,
    pub verdict: StabilityVerdict,
}

/// Simulates the scenario with the solver matching the classes present.
/// Newton runs that miss the tolerance are errors.
pub fn run_scenario(spec: &ScenarioSpec, settings: &ExperimentSettings) -> Result<ScenarioRun> {
    spec.check_admissible()?;
    let (ra, rh, u) = initial_conditions(spec);
    let (p, g) = (&spec.params, &spec.grid);
    let uniform = spec.uniform_flow()?;
    let (solver, av, hv, report) = if spec.rho_bar_av == 0.0 {
        (SolverKind::Arz, None, Some(solve_arz(&rh, &u, g, p)?), None)
    } else if spec.rho_bar_hv == 0.0 {
        let (t, r) = solve_mfg_with(&ra, g, p, &settings.solver)?;
        (SolverKind::Mfg, Some(t), None, Some(r))
    } else {
        let s = solve_mixed_with(&ra, &rh, &u, g, p, &settings.solver)?;
        (SolverKind::Mixed, s.av, s.hv, Some(s.report))
    };
    if let Some(r) = report.as_ref().filter(|r| !r.converged) {
        return Err(Error::NotConverged {
            iterations: r.iterations,
            residual: r.final_residual(),
        });
    }
    let verdict = classify_stability(av.as_ref(), hv.as_ref(), &uniform, g, p, settings.norm)?;
    Ok(ScenarioRun {
        spec: *spec,
        uniform,
        solver,
        av,
        hv,
        report,
        verdict,
    })
}

/// Pure-HV runs at each normalized density next to the linear ARZ verdict.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArzCheck {
    pub rho_bar: f64,
    pub linear_stable: bool,
    pub verdict: StabilityVerdict,
}

impl ArzCheck {
    pub fn agrees(&self) -> bool {
        self.linear_stable == self.verdict.stable
    }
}

pub fn arz_cross_validation(
    densities: &[f64],
    params: &ModelParams,
    settings: &ExperimentSettings,
) -> Result<Vec<ArzCheck>> {
    with_pool(settings.jobs, || {
        densities
            .par_iter()
            .map(|&s| {
                let spec = ScenarioSpec::pure_hv(s, settings.amplitude, &settings.grid, params)?;
                let run = run_scenario(&spec, settings)?;
                Ok(ArzCheck {
                    rho_bar: s,
                    linear_stable: arz_linear_stable(params.density(s), params)?,
                    verdict: run.verdict,
                })
            })
            .collect::<Result<Vec<_>>>()
    })?
}

/// Runs `f` on a pool of `jobs` threads (0 picks the core count).
pub fn with_pool<T: Send>(jobs: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Error::param("jobs", e.to_string()))?;
    Ok(pool.install(f))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Group {
    /// AV density against HV density, `beta = 0`.
    Group1,
    /// Penetration against total density, `beta = 0`.
    Group2,
    /// `beta` against penetration at a fixed total density.
    Group3,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Axis {
    pub name: String,
    pub values: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "lowercase")]
pub enum PointOutcome {
    Resolved {
        verdict: StabilityVerdict,
    },
    /// The solve failed; never counted as stable.
    Unresolved {
        reason: String,
    },
    /// Outside the admissible density range; not run.
    Skipped {
        reason: String,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiagramPoint {
    pub first: f64,
    pub second: f64,
    pub rho_bar_av: f64,
    pub rho_bar_hv: f64,
    pub beta: f64,
    pub solver: Option<SolverKind>,
    pub newton_iterations: Option<usize>,
    pub outcome: PointOutcome,
    /// `max E` of the unperturbed run, when control runs are enabled.
    pub control_error: Option<f64>,
}

impl DiagramPoint {
    /// `Some(stable)` for resolved points.
    pub fn stable(&self) -> Option<bool> {
        match &self.outcome {
            PointOutcome::Resolved { verdict } => Some(verdict.stable),
            _ => None,
        }
    }

    pub fn verdict(&self) -> Option<&StabilityVerdict> {
        match &self.outcome {
            PointOutcome::Resolved { verdict } => Some(verdict),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiagramMetadata {
    pub params: ModelParams,
    pub settings: ExperimentSettings,
    /// Total density of group 3.
    pub rho_bar_tot: Option<f64>,
}

/// Verdicts on a two-axis grid, stored row-major in the first axis.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhaseDiagram {
    pub group: Group,
    pub axes: [Axis; 2],
    pub points: Vec<DiagramPoint>,
    pub metadata: DiagramMetadata,
}

impl PhaseDiagram {
    pub fn point(&self, i: usize, j: usize) -> &DiagramPoint {
        &self.points[i * self.axes[1].values.len() + j]
    }

    /// Verdicts along the second axis at first-axis index `i`.
    pub fn row(&self, i: usize) -> Vec<Option<bool>> {
        (0..self.axes[1].values.len())
            .map(|j| self.point(i, j).stable())
            .collect()
    }

    /// Verdicts along the first axis at second-axis index `j`.
    pub fn column(&self, j: usize) -> Vec<Option<bool>> {
        (0..self.axes[0].values.len())
            .map(|i| self.point(i, j).stable())
            .collect()
    }

    pub fn unresolved(&self) -> usize {
        self.points
            .iter()
            .filter(|p| matches!(p.outcome, PointOutcome::Unresolved { .. }))
            .count()
    }
}

/// True when no unstable verdict follows a stable one (unresolved and
/// skipped entries are ignored).
pub fn upward_closed(verdicts: &[Option<bool>]) -> bool {
    let mut seen_stable = false;
    for v in verdicts.iter().flatten() {
        if *v {
            seen_stable = true;
        } else if seen_stable {
            return false;
        }
    }
    true
}

fn steps(lo: f64, hi: f64, step: f64) -> Vec<f64> {
    let n = ((hi - lo) / step).round() as usize;
    // round to the step's decimals so grid values print cleanly
    (0..=n).map(|k| ((lo + k as f64 * step) * 1e9).round() / 1e9).collect()
}

/// Default sweep axes of each group.
pub fn default_axes(group: Group) -> [Vec<f64>; 2] {
    match group {
        Group::Group1 => [steps(0.0, 0.75, 0.05), steps(0.0, 0.75, 0.05)],
        Group::Group2 => [steps(0.0, 1.0, 0.1), steps(0.1, 0.75, 0.05)],
        Group::Group3 => [steps(0.0, 1.0, 0.1), steps(0.0, 1.0, 0.1)],
    }
}

/// Five-by-five axes for quick runs.
pub fn reduced_axes(group: Group) -> [Vec<f64>; 2] {
    match group {
        Group::Group1 => [vec![0.0, 0.1, 0.2, 0.3, 0.4], vec![0.0, 0.1, 0.2, 0.35, 0.5]],
        Group::Group2 => [vec![0.0, 0.1, 0.2, 0.3, 0.5], vec![0.2, 0.3, 0.4, 0.5, 0.6]],
        Group::Group3 => [vec![0.0, 0.25, 0.5, 0.75, 1.0], vec![0.0, 0.2, 0.3, 0.4, 0.6]],
    }
}

/// Total density of group 3.
pub const GROUP3_TOTAL_DENSITY: f64 = 0.5;

/// `(rho_bar_av, rho_bar_hv, beta)` at an axis pair.
fn scenario_densities(group: Group, a: f64, b: f64) -> (f64, f64, f64) {
    match group {
        Group::Group1 => (a, b, 0.0),
        Group::Group2 => (a * b, (1.0 - a) * b, 0.0),
        Group::Group3 => (b * GROUP3_TOTAL_DENSITY, (1.0 - b) * GROUP3_TOTAL_DENSITY, a),
    }
}

fn axis_names(group: Group) -> [&'static str; 2] {
    match group {
        Group::Group1 => ["rho_bar_av", "rho_bar_hv"],
        Group::Group2 => ["penetration", "rho_bar_tot"],
        Group::Group3 => ["beta", "penetration"],
    }
}

pub fn run_group1(
    av_grid: &[f64],
    hv_grid: &[f64],
    params: &ModelParams,
    settings: &ExperimentSettings,
) -> Result<PhaseDiagram> {
    run_group(Group::Group1, av_grid, hv_grid, params, settings)
}

pub fn run_group2(
    penetration_grid: &[f64],
    rho_tot_grid: &[f64],
    params: &ModelParams,
    settings: &ExperimentSettings,
) -> Result<PhaseDiagram> {
    if let Some(p) = penetration_grid.iter().find(|p| !(0.0..=1.0).contains(*p)) {
        return Err(Error::param("penetration", format!("{p} outside [0, 1]")));
    }
    run_group(Group::Group2, penetration_grid, rho_tot_grid, params, settings)
}

pub fn run_group3(
    beta_grid: &[f64],
    penetration_grid: &[f64],
    params: &ModelParams,
    settings: &ExperimentSettings,
) -> Result<PhaseDiagram> {
    if let Some(p) = penetration_grid.iter().find(|p| !(0.0..=1.0).contains(*p)) {
        return Err(Error::param("penetration", format!("{p} outside [0, 1]")));
    }
    if let Some(b) = beta_grid.iter().find(|b| !(**b >= 0.0)) {
        return Err(Error::param("beta", format!("{b} must be >= 0")));
    }
    run_group(Group::Group3, beta_grid, penetration_grid, params, settings)
}

/// Runs every axis pair on a pool of `settings.jobs` workers. Points are
/// independent and collected in grid order, so the result does not depend
/// on scheduling.
pub fn run_group(
    group: Group,
    first: &[f64],
    second: &[f64],
    params: &ModelParams,
    settings: &ExperimentSettings,
) -> Result<PhaseDiagram> {
    params.validate()?;
    settings.grid.validate(params)?;
    if first.is_empty() || second.is_empty() {
        return Err(Error::param("axes", "sweep axes must not be empty"));
    }
    let pairs: Vec<(f64, f64)> = first
        .iter()
        .flat_map(|&a| second.iter().map(move |&b| (a, b)))
        .collect();
    let points = with_pool(settings.jobs, || {
        pairs
            .par_iter()
            .map(|&(a, b)| sweep_point(group, a, b, params, settings))
            .collect::<Vec<_>>()
    })?;
    let names = axis_names(group);
    Ok(PhaseDiagram {
        group,
        axes: [
            Axis {
                name: names[0].into(),
                values: first.to_vec(),
            },
            Axis {
                name: names[1].into(),
                values: second.to_vec(),
            },
        ],
        points,
        metadata: DiagramMetadata {
            params: *params,
            settings: *settings,
            rho_bar_tot: (group == Group::Group3).then_some(GROUP3_TOTAL_DENSITY),
        },
    })
}

fn sweep_point(group: Group, a: f64, b: f64, params: &ModelParams, settings: &ExperimentSettings) -> DiagramPoint {
    let (av, hv, beta) = scenario_densities(group, a, b);
    let mut point = DiagramPoint {
        first: a,
        second: b,
        rho_bar_av: av,
        rho_bar_hv: hv,
        beta,
        solver: None,
        newton_iterations: None,
        outcome: PointOutcome::Skipped { reason: String::new() },
        control_error: None,
    };
    let spec = match ScenarioSpec::new(av, hv, beta, settings.amplitude, &settings.grid, params) {
        Ok(s) => s,
        Err(e) => {
            point.outcome = PointOutcome::Skipped { reason: e.to_string() };
            return point;
        }
    };
    match run_scenario(&spec, settings) {
        Ok(run) => {
            point.solver = Some(run.solver);
            point.newton_iterations = run.report.as_ref().map(|r| r.iterations);
            point.outcome = PointOutcome::Resolved { verdict: run.verdict };
        }
        Err(e) => point.outcome = PointOutcome::Unresolved { reason: e.to_string() },
    }
    if settings.control_runs {
        point.control_error = spec
            .with_amplitude(0.0)
            .and_then(|s| run_scenario(&s, settings))
            .map(|run| run.verdict.e_max)
            .ok();
    }
    point
}
