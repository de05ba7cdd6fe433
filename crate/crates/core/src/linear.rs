//! Linear stability analysis.
//!
//! The ARZ test compares `h'` against `-U'`. For the AV game the linearized
//! forward-backward system is solved mode by mode in closed form and the mode
//! energy is scanned over the scaled horizon `lambda = xi T`. Everything here
//! works in dimensionless units (`u_max = 1`, `rho_jam = 1`) unless stated.

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::domain::{hesitation_deriv, ClassTrajectory, Field, GridSpec, ModelParams};
use crate::error::{Error, Result};

/// ARZ linear stability of the uniform flow at `rho_bar`: `h'(rho_bar) > u_max / rho_jam`.
pub fn arz_linear_stable(rho_bar: f64, params: &ModelParams) -> Result<bool> {
    Ok(hesitation_deriv(rho_bar, params)? > params.u_max / params.rho_jam)
}

/// Normalized densities bounding the ARZ-unstable interval, or `None` when
/// every density is stable.
///
/// `h'(rho) - u_max / rho_jam` is decreasing in `s(1-s)^3`, which peaks at
/// `s = 1/4`, so each edge is bracketed on one side of the peak.
pub fn arz_unstable_band(params: &ModelParams) -> Option<(f64, f64)> {
    let margin = |s: f64| hesitation_deriv(params.density(s), params).map(|d| d - params.u_max / params.rho_jam);
    if margin(0.25).ok()? >= 0.0 {
        return None;
    }
    let edge = |stable: f64, unstable: f64| -> Option<f64> {
        let (mut a, mut b) = (stable, unstable);
        for _ in 0..200 {
            let m = 0.5 * (a + b);
            if m == a || m == b {
                break;
            }
            if margin(m).ok()? > 0.0 {
                a = m;
            } else {
                b = m;
            }
        }
        Some(0.5 * (a + b))
    };
    Some((edge(1e-12, 0.25)?, edge(1.0 - 1e-12, 0.25)?))
}

/// Fourier amplitudes of the linearized density and speed perturbations.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FourierModePair {
    pub rho_hat: Complex64,
    pub u_hat: Complex64,
}

impl FourierModePair {
    pub fn energy(&self) -> f64 {
        self.rho_hat.norm_sqr() + self.u_hat.norm_sqr()
    }
}

/// Distance from `rho_bar = 4/5` below which the repeated-root formula is used.
pub const DOUBLE_ROOT_TOL: f64 = 1e-9;
/// Denominators smaller than this are reported as resonances.
pub const RESONANCE_TOL: f64 = 1e-12;

/// Closed-form mode of the linearized AV game around `rho_bar` (dimensionless),
/// normalized to `rho_hat(0) = 1` with `rho_hat + u_hat = 0` at `eta = lambda`.
///
/// The general formula is rescaled by the largest denominator exponential so
/// that imaginary `r` (`rho_bar < 4/5`) cannot overflow at large `|lambda|`.
pub fn mfg_mode_solution(rho_bar: f64, lambda: f64, eta: f64) -> Result<FourierModePair> {
    if !(rho_bar > 0.0 && rho_bar < 1.0) {
        return Err(Error::param("rho_bar", format!("{rho_bar} outside (0, 1)")));
    }
    if !(lambda.is_finite() && eta.is_finite()) {
        return Err(Error::param("lambda, eta", "must be finite"));
    }
    let i = Complex64::i();
    if (5.0 * rho_bar - 4.0).abs() < DOUBLE_ROOT_TOL {
        let e = (i * (eta / 5.0)).exp();
        let den = Complex64::new(2.0 * lambda, 5.0);
        return Ok(FourierModePair {
            rho_hat: e * Complex64::new(2.0 * (lambda - eta), 5.0) / den,
            u_hat: -e * Complex64::new(lambda - eta, 5.0) / den,
        });
    }
    let rb = rho_bar;
    let r = Complex64::new(rb * (5.0 * rb - 4.0), 0.0).sqrt();
    let phase = (-i * (0.5 * eta * (2.0 - 3.0 * rb))).exp();
    let w = i * r * lambda;
    let m = w.re.max(0.0);
    let e_eta = (i * r * (0.5 * eta) - m).exp();
    let e_lam = (-i * r * (0.5 * eta) + w - m).exp();
    let den = (r + rb) * (-m).exp() + (r - rb) * (w - m).exp();
    if den.norm() < RESONANCE_TOL {
        return Err(Error::Resonance {
            rho_bar,
            lambda,
            magnitude: den.norm(),
        });
    }
    Ok(FourierModePair {
        rho_hat: phase * ((r + rb) * e_eta + (r - rb) * e_lam) / den,
        u_hat: -phase * ((r + 3.0 * rb - 2.0) * e_eta + (r - 3.0 * rb + 2.0) * e_lam) / den,
    })
}

/// Max of `|rho_hat|^2 + |u_hat|^2` over `eta_samples` uniform points between 0 and `lambda`.
pub fn mode_energy(rho_bar: f64, lambda: f64, eta_samples: usize) -> Result<f64> {
    mode_energy_with(&mfg_mode_solution, rho_bar, lambda, eta_samples)
}

pub fn mode_energy_with<M>(mode: &M, rho_bar: f64, lambda: f64, eta_samples: usize) -> Result<f64>
where
    M: Fn(f64, f64, f64) -> Result<FourierModePair> + ?Sized,
{
    if eta_samples < 2 {
        return Err(Error::param("eta_samples", "need at least 2"));
    }
    let mut best = f64::NEG_INFINITY;
    for k in 0..eta_samples {
        let eta = lambda * k as f64 / (eta_samples - 1) as f64;
        best = best.max(mode(rho_bar, lambda, eta)?.energy());
    }
    Ok(best)
}

/// Sampling of the boundedness scan.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScanSettings {
    pub lambda_max: f64,
    /// Log-spaced `|lambda|` samples per sign over `[lambda_min_log, lambda_max]`.
    pub log_samples: usize,
    pub lambda_min_log: f64,
    /// Uniform `|lambda|` samples per sign over `[0, linear_extent]`.
    pub linear_samples: usize,
    pub linear_extent: f64,
    pub eta_samples: usize,
    /// Allowed relative excess of the last decade over the rest.
    pub growth_tolerance: f64,
}

impl Default for ScanSettings {
    fn default() -> Self {
        ScanSettings {
            lambda_max: 1e3,
            log_samples: 200,
            lambda_min_log: 1e-2,
            linear_samples: 50,
            linear_extent: 1.0,
            eta_samples: 400,
            growth_tolerance: 0.05,
        }
    }
}

impl ScanSettings {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda_max > self.lambda_min_log && self.lambda_min_log > 0.0) {
            return Err(Error::param("lambda_max", "need lambda_max > lambda_min_log > 0"));
        }
        if self.log_samples < 2 || self.eta_samples < 2 {
            return Err(Error::param("log_samples, eta_samples", "need at least 2 each"));
        }
        if !(self.linear_extent >= 0.0 && self.growth_tolerance >= 0.0) {
            return Err(Error::param("linear_extent, growth_tolerance", "must be >= 0"));
        }
        Ok(())
    }

    /// Sorted signed `lambda` samples.
    pub fn lambda_grid(&self) -> Vec<f64> {
        let mut mags = Vec::with_capacity(self.log_samples + self.linear_samples);
        let (a, b) = (self.lambda_min_log.ln(), self.lambda_max.ln());
        for k in 0..self.log_samples - 1 {
            mags.push((a + (b - a) * k as f64 / (self.log_samples - 1) as f64).exp());
        }
        mags.push(self.lambda_max);
        for k in 0..self.linear_samples {
            mags.push(self.linear_extent * k as f64 / self.linear_samples.max(2).saturating_sub(1) as f64);
        }
        let mut grid: Vec<f64> = mags.iter().flat_map(|&m| [m, -m]).collect();
        grid.sort_by(f64::total_cmp);
        grid.dedup();
        grid
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModeEnergyScan {
    pub rho_bar: f64,
    pub lambda_samples: Vec<f64>,
    pub energies: Vec<f64>,
    pub sup_energy: f64,
    /// Samples skipped because the closed form was resonant there.
    pub resonant: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Boundedness {
    Bounded,
    Unbounded,
    /// Every sample in one of the compared ranges was resonant.
    Unresolved,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundednessResult {
    pub scan: ModeEnergyScan,
    pub verdict: Boundedness,
}

/// Scans the mode energy over `lambda` for every density in `rho_bar_grid`.
pub fn mfg_boundedness_scan(
    rho_bar_grid: &[f64],
    lambda_max: f64,
    log_samples: usize,
) -> Result<Vec<BoundednessResult>> {
    let settings = ScanSettings {
        lambda_max,
        log_samples,
        ..Default::default()
    };
    mfg_boundedness_scan_with(&mfg_mode_solution, rho_bar_grid, &settings)
}

/// Scan with an arbitrary mode function. The verdict is `Bounded` when the
/// largest energy over the last decade of `|lambda|` exceeds the largest
/// energy below it by at most `growth_tolerance` (relative).
pub fn mfg_boundedness_scan_with<M>(
    mode: &M,
    rho_bar_grid: &[f64],
    settings: &ScanSettings,
) -> Result<Vec<BoundednessResult>>
where
    M: Fn(f64, f64, f64) -> Result<FourierModePair> + Sync + ?Sized,
{
    settings.validate()?;
    if let Some(&r) = rho_bar_grid.iter().find(|&&r| !(r > 0.0 && r < 1.0)) {
        return Err(Error::param("rho_bar_grid", format!("{r} outside (0, 1)")));
    }
    let lambdas = settings.lambda_grid();
    let cut = settings.lambda_max / 10.0;
    rho_bar_grid
        .par_iter()
        .map(|&rho_bar| {
            let mut scan = ModeEnergyScan {
                rho_bar,
                lambda_samples: Vec::with_capacity(lambdas.len()),
                energies: Vec::with_capacity(lambdas.len()),
                sup_energy: f64::NEG_INFINITY,
                resonant: Vec::new(),
            };
            let (mut tail, mut head) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
            for &lambda in &lambdas {
                match mode_energy_with(mode, rho_bar, lambda, settings.eta_samples) {
                    Ok(e) => {
                        scan.lambda_samples.push(lambda);
                        scan.energies.push(e);
                        scan.sup_energy = scan.sup_energy.max(e);
                        if lambda.abs() >= cut {
                            tail = tail.max(e);
                        } else {
                            head = head.max(e);
                        }
                    }
                    Err(Error::Resonance { .. }) => scan.resonant.push(lambda),
                    Err(e) => return Err(e),
                }
            }
            let verdict = if !(tail.is_finite() && head.is_finite()) {
                // infinite energies are unbounded; missing samples leave no verdict
                if tail == f64::INFINITY || head == f64::INFINITY {
                    Boundedness::Unbounded
                } else {
                    Boundedness::Unresolved
                }
            } else if tail <= head * (1.0 + settings.growth_tolerance) {
                Boundedness::Bounded
            } else {
                Boundedness::Unbounded
            };
            Ok(BoundednessResult { scan, verdict })
        })
        .collect()
}

/// Dimensionless density and speed fields on the dimensionless grid: lengths
/// in units of the ring length, speeds in units of `u_max`.
pub fn nondimensionalize(
    traj: &ClassTrajectory,
    grid: &GridSpec,
    params: &ModelParams,
) -> Result<(Field, Field, GridSpec)> {
    traj.check_grid(grid)?;
    let scale = |f: &Field, c: f64| -> Result<Field> {
        Field::from_levels(
            &f.levels()
                .map(|l| l.iter().map(|v| v / c).collect())
                .collect::<Vec<Vec<f64>>>(),
        )
    };
    let g = GridSpec::new(1.0, grid.horizon * params.u_max / grid.length, grid.nx, grid.nt)?;
    Ok((
        scale(&traj.density, params.rho_jam)?,
        scale(&traj.velocity, params.u_max)?,
        g,
    ))
}

/// Discrete residuals of the reduced dimensionless AV system
/// `rho_t + (rho u)_x = 0`, `u_t + u u_x - (rho u)_x = 0`.
///
/// Central differences in space (periodic) and time, so the residuals live on
/// the interior levels `1..nt` and are second-order consistent. Returned as
/// fields with `nt - 1` levels.
pub fn reduced_mfg_rhs_check(rho: &Field, u: &Field, grid: &GridSpec) -> Result<(Field, Field)> {
    let (nx, nt) = (grid.nx, grid.nt);
    if rho.nx() != nx || u.nx() != nx || rho.num_levels() != nt + 1 || u.num_levels() != nt + 1 {
        return Err(Error::DimensionMismatch("fields do not match the grid".into()));
    }
    if nt < 2 {
        return Err(Error::DimensionMismatch("need at least three time levels".into()));
    }
    let (dx, dt) = (grid.dx(), grid.dt());
    let mut r_mass = Field::zeros(nt - 1, nx);
    let mut r_speed = Field::zeros(nt - 1, nx);
    for n in 1..nt {
        let (rl, ul) = (rho.level(n), u.level(n));
        for j in 0..nx {
            let (jm, jp) = ((j + nx - 1) % nx, (j + 1) % nx);
            let flux_x = (rl[jp] * ul[jp] - rl[jm] * ul[jm]) / (2.0 * dx);
            let u_x = (ul[jp] - ul[jm]) / (2.0 * dx);
            let rho_t = (rho.get(n + 1, j) - rho.get(n - 1, j)) / (2.0 * dt);
            let u_t = (u.get(n + 1, j) - u.get(n - 1, j)) / (2.0 * dt);
            r_mass.level_mut(n - 1)[j] = rho_t + flux_x;
            r_speed.level_mut(n - 1)[j] = u_t + ul[j] * u_x - flux_x;
        }
    }
    Ok((r_mass, r_speed))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use num_complex::Complex64 as C;
    use proptest::prelude::*;

    type M2 = [[C; 2]; 2];

    fn mul(a: &M2, b: &M2) -> M2 {
        let mut c = [[C::new(0.0, 0.0); 2]; 2];
        for i in 0..2 {
            for j in 0..2 {
                c[i][j] = a[i][0] * b[0][j] + a[i][1] * b[1][j];
            }
        }
        c
    }

    fn generator(rb: f64) -> M2 {
        // d/d(eta) (rho, u) = -i A (rho, u)
        let m = -C::i();
        [[m * (1.0 - rb), m * rb], [m * (rb - 1.0), m * (1.0 - 2.0 * rb)]]
    }

    /// Scaling-and-squaring Taylor exponential.
    fn expm_taylor(a: &M2, t: f64) -> M2 {
        let norm = a.iter().flatten().map(|z| z.norm()).sum::<f64>() * t.abs();
        let squarings = norm.max(1.0).log2().ceil() as i32 + 4;
        let h = t / 2f64.powi(squarings);
        let mut term = [
            [C::new(1.0, 0.0), C::new(0.0, 0.0)],
            [C::new(0.0, 0.0), C::new(1.0, 0.0)],
        ];
        let mut sum = term;
        for k in 1..30 {
            term = mul(&term, a);
            for z in term.iter_mut().flatten() {
                *z *= h / k as f64;
            }
            for i in 0..2 {
                for j in 0..2 {
                    sum[i][j] += term[i][j];
                }
            }
        }
        for _ in 0..squarings {
            sum = mul(&sum, &sum);
        }
        sum
    }

    /// Exponential by eigendecomposition (distinct eigenvalues only).
    fn expm_eigen(a: &M2, t: f64) -> M2 {
        let tr = a[0][0] + a[1][1];
        let det = a[0][0] * a[1][1] - a[0][1] * a[1][0];
        let disc = (tr * tr - det * 4.0).sqrt();
        let mu = [(tr + disc) / 2.0, (tr - disc) / 2.0];
        // eigenvectors (a01, mu - a00)
        let p = [[a[0][1], a[0][1]], [mu[0] - a[0][0], mu[1] - a[0][0]]];
        let pdet = p[0][0] * p[1][1] - p[0][1] * p[1][0];
        let pinv = [[p[1][1] / pdet, -p[0][1] / pdet], [-p[1][0] / pdet, p[0][0] / pdet]];
        let d = [
            [(mu[0] * t).exp(), C::new(0.0, 0.0)],
            [C::new(0.0, 0.0), (mu[1] * t).exp()],
        ];
        mul(&mul(&p, &d), &pinv)
    }

    /// Boundary-value solution: `rho(0) = 1`, `rho(lambda) + u(lambda) = 0`.
    fn oracle(rb: f64, lambda: f64, eta: f64, expm: fn(&M2, f64) -> M2) -> (C, C) {
        let a = generator(rb);
        let pl = expm(&a, lambda);
        let u0 = -(pl[0][0] + pl[1][0]) / (pl[0][1] + pl[1][1]);
        let pe = expm(&a, eta);
        (pe[0][0] + pe[0][1] * u0, pe[1][0] + pe[1][1] * u0)
    }

    #[test]
    fn arz_examples() {
        let p = ModelParams::default();
        assert!(!arz_linear_stable(p.density(0.4), &p).unwrap());
        assert!(arz_linear_stable(p.density(0.99), &p).unwrap());
        assert!(arz_linear_stable(0.0, &p).is_err());
        assert!(arz_linear_stable(p.rho_jam, &p).is_err());
    }

    #[test]
    fn band_edges_solve_the_quartic() {
        let p = ModelParams::default();
        let (lo, hi) = arz_unstable_band(&p).unwrap();
        let target = (9.0f64 / (2.0 * 30.0)).powi(2);
        let q = |s: f64| s * (1.0 - s).powi(3) - target;
        // Newton on the polynomial from the opposite side of each root
        let root = |mut s: f64| {
            for _ in 0..60 {
                let d = (1.0 - s).powi(3) - 3.0 * s * (1.0 - s).powi(2);
                s -= q(s) / d;
            }
            s
        };
        assert_relative_eq!(lo, root(0.0), epsilon = 1e-10);
        assert_relative_eq!(hi, root(0.6), epsilon = 1e-10);
        for (s, want) in [
            (lo - 1e-9, true),
            (lo + 1e-9, false),
            (hi - 1e-9, false),
            (hi + 1e-9, true),
        ] {
            assert_eq!(arz_linear_stable(p.density(s), &p).unwrap(), want, "s = {s}");
        }
        let calm = ModelParams { u_max: 10.0, ..p };
        assert!(arz_unstable_band(&calm).is_none());
    }

    #[test]
    fn closed_form_matches_ode_oracle_on_sample_grid() {
        let rhos = [0.15, 0.45, 0.7, 0.8, 0.93];
        let lambdas = [-6.0, -1.3, 0.7, 2.5, 8.0];
        for &rb in &rhos {
            for &lam in &lambdas {
                for k in 0..5 {
                    let eta = lam * k as f64 / 4.0;
                    let got = mfg_mode_solution(rb, lam, eta).unwrap();
                    let (r, u) = oracle(rb, lam, eta, expm_taylor);
                    assert!(
                        (got.rho_hat - r).norm() < 1e-8,
                        "rho {rb} {lam} {eta}: {} vs {r}",
                        got.rho_hat
                    );
                    assert!((got.u_hat - u).norm() < 1e-8, "u {rb} {lam} {eta}");
                    if (5.0 * rb - 4.0).abs() > 1e-3 {
                        let (r2, u2) = oracle(rb, lam, eta, expm_eigen);
                        assert!((got.rho_hat - r2).norm() < 1e-8 && (got.u_hat - u2).norm() < 1e-8);
                    }
                }
            }
        }
    }

    #[test]
    fn double_root_branch_is_continuous() {
        for lam in [-5.0, 0.3, 4.0] {
            for k in 0..=6 {
                let eta = lam * k as f64 / 6.0;
                let a = mfg_mode_solution(0.8, lam, eta).unwrap();
                let b = mfg_mode_solution(0.8 + 1e-6, lam, eta).unwrap();
                let c = mfg_mode_solution(0.8 - 1e-6, lam, eta).unwrap();
                for other in [b, c] {
                    assert!((a.rho_hat - other.rho_hat).norm() < 1e-4);
                    assert!((a.u_hat - other.u_hat).norm() < 1e-4);
                }
            }
        }
    }

    #[test]
    fn large_horizons_do_not_overflow() {
        for lam in [-1e3, 1e3] {
            let m = mfg_mode_solution(0.3, lam, lam * 0.37).unwrap();
            assert!(m.energy().is_finite());
        }
    }

    #[test]
    fn degenerate_horizon_has_energy_two() {
        for rb in [0.2, 0.8, 0.95] {
            assert_relative_eq!(mode_energy(rb, 0.0, 10).unwrap(), 2.0, epsilon = 1e-12);
        }
        assert!(mode_energy(0.5, 1.0, 1).is_err());
    }

    #[test]
    fn eta_refinement_is_self_consistent() {
        for rb in [0.2, 0.5, 0.8, 0.9] {
            for lam in [-20.0, 3.0, 40.0] {
                let a = mode_energy(rb, lam, 200).unwrap();
                let b = mode_energy(rb, lam, 400).unwrap();
                assert!((a - b).abs() <= 0.01 * b, "{rb} {lam}: {a} {b}");
            }
        }
    }

    #[test]
    fn growing_mode_is_flagged_unbounded() {
        // below 4/5 the true mode decays faster than e^{0.01 eta}, so the
        // multiplied mode is only a positive control where it oscillates
        let grow = |rb: f64, lam: f64, eta: f64| {
            mfg_mode_solution(rb, lam, eta).map(|m| FourierModePair {
                rho_hat: m.rho_hat * (0.01 * eta.abs()).exp(),
                ..m
            })
        };
        let res = mfg_boundedness_scan_with(&grow, &[0.8, 0.85, 0.9], &ScanSettings::default()).unwrap();
        assert!(res.iter().all(|r| r.verdict == Boundedness::Unbounded));
        let pure = |_: f64, _: f64, eta: f64| {
            Ok(FourierModePair {
                rho_hat: Complex64::new((0.01 * eta.abs()).exp(), 0.0),
                u_hat: Complex64::new(0.0, 0.0),
            })
        };
        let grid: Vec<f64> = (1..10).map(|k| k as f64 / 10.0).collect();
        let res = mfg_boundedness_scan_with(&pure, &grid, &ScanSettings::default()).unwrap();
        assert!(res.iter().all(|r| r.verdict == Boundedness::Unbounded));
    }

    #[test]
    fn resonant_samples_are_flagged_not_judged() {
        let never = |rb: f64, lambda: f64, _: f64| -> Result<FourierModePair> {
            Err(Error::Resonance {
                rho_bar: rb,
                lambda,
                magnitude: 0.0,
            })
        };
        let res = mfg_boundedness_scan_with(&never, &[0.5], &ScanSettings::default()).unwrap();
        assert_eq!(res[0].verdict, Boundedness::Unresolved);
        assert_eq!(res[0].scan.resonant.len(), ScanSettings::default().lambda_grid().len());
    }

    #[test]
    fn scan_rejects_bad_input() {
        assert!(mfg_boundedness_scan(&[0.0], 1e3, 200).is_err());
        assert!(mfg_boundedness_scan(&[0.5], -1.0, 200).is_err());
    }

    #[test]
    fn lambda_grid_is_symmetric() {
        let g = ScanSettings::default().lambda_grid();
        assert_eq!(*g.last().unwrap(), 1e3);
        for (a, b) in g.iter().zip(g.iter().rev()) {
            assert_eq!(*a, -*b);
        }
    }

    #[test]
    fn constant_fields_satisfy_reduced_system() {
        let g = GridSpec::new(1.0, 0.5, 16, 10).unwrap();
        let rho = Field::from_levels(&vec![vec![0.3; 16]; 11]).unwrap();
        let u = Field::from_levels(&vec![vec![0.7; 16]; 11]).unwrap();
        let (a, b) = reduced_mfg_rhs_check(&rho, &u, &g).unwrap();
        assert!(a.as_slice().iter().chain(b.as_slice()).all(|v| v.abs() < 1e-14));
    }

    /// Fields `rho_bar + eps Re(rho_hat e^{i xi x})` built from one closed-form mode.
    fn linearized_fields(rb: f64, eps: f64, g: &GridSpec) -> (Field, Field) {
        let xi = 2.0 * std::f64::consts::PI / g.length;
        let lambda = xi * g.horizon;
        let mut rho = Field::zeros(g.nt + 1, g.nx);
        let mut u = Field::zeros(g.nt + 1, g.nx);
        for n in 0..=g.nt {
            let m = mfg_mode_solution(rb, lambda, xi * g.t(n)).unwrap();
            for j in 0..g.nx {
                let w = C::new(0.0, xi * g.x(j)).exp();
                rho.level_mut(n)[j] = rb + eps * (m.rho_hat * w).re;
                u.level_mut(n)[j] = 1.0 - rb + eps * (m.u_hat * w).re;
            }
        }
        (rho, u)
    }

    #[test]
    fn linearized_modes_leave_quadratic_residual() {
        let g = GridSpec::new(1.0, 0.5, 1000, 1000).unwrap();
        let size = |eps: f64| {
            let (rho, u) = linearized_fields(0.4, eps, &g);
            let (a, b) = reduced_mfg_rhs_check(&rho, &u, &g).unwrap();
            a.as_slice()
                .iter()
                .chain(b.as_slice())
                .fold(0.0f64, |m, v| m.max(v.abs()))
        };
        let ratio = size(1e-3) / size(1e-4);
        assert!((80.0..125.0).contains(&ratio), "ratio {ratio}");
    }

    proptest! {
        #[test]
        fn boundary_conditions_hold(rb in 0.01f64..0.99, lam in -50.0f64..50.0) {
            let start = mfg_mode_solution(rb, lam, 0.0).unwrap();
            prop_assert!((start.rho_hat - 1.0).norm() < 1e-10);
            let end = mfg_mode_solution(rb, lam, lam).unwrap();
            prop_assert!((end.rho_hat + end.u_hat).norm() < 1e-10);
        }

        #[test]
        fn energy_is_even_in_lambda(rb in 0.01f64..0.99, lam in 0.0f64..200.0) {
            let a = mode_energy(rb, lam, 101).unwrap();
            let b = mode_energy(rb, -lam, 101).unwrap();
            prop_assert!((a - b).abs() <= 1e-8 * a.max(1.0));
        }
    }
}
