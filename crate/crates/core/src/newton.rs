//! Damped Newton iteration with a sparse direct linear solver.

use std::sync::{Arc, Mutex, Once};

use faer::dyn_stack::{MemBuffer, MemStack, StackReq};
use faer::perm::PermRef;
use faer::prelude::*;
use faer::sparse::linalg::lu::supernodal::{self, SupernodalLu, SymbolicSupernodalLu};
use faer::sparse::linalg::qr;
use faer::sparse::linalg::solvers::{Lu, SymbolicLu};
use faer::sparse::{Argsort, Pair, SparseColMat, SymbolicSparseColMat};
use faer::{Conj, Mat, Par};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Jacobian in coordinate form. Duplicate coordinates are summed.
#[derive(Clone, Debug, Default)]
pub struct SparseJacobian {
    pub n: usize,
    pub rows: Vec<usize>,
    pub cols: Vec<usize>,
    pub values: Vec<f64>,
    /// Column elimination order for the LU; `None` lets the solver pick one.
    pub ordering: Option<Arc<[usize]>>,
}

impl SparseJacobian {
    pub fn new(n: usize) -> Self {
        SparseJacobian {
            n,
            ..Default::default()
        }
    }

    pub fn push(&mut self, row: usize, col: usize, value: f64) {
        self.rows.push(row);
        self.cols.push(col);
        self.values.push(value);
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut d = vec![vec![0.0; self.n]; self.n];
        for k in 0..self.values.len() {
            d[self.rows[k]][self.cols[k]] += self.values[k];
        }
        d
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NewtonOptions {
    /// Sup-norm residual target.
    pub tol: f64,
    pub max_iter: usize,
    /// Step halvings tried before giving up on an iteration.
    pub max_halvings: usize,
    /// A factorized Jacobian is reused for further steps as long as each one
    /// shrinks the residual by at least this factor; `0` (the default) refactors
    /// every step.
    pub reuse_ratio: f64,
}

impl Default for NewtonOptions {
    fn default() -> Self {
        NewtonOptions {
            tol: 1e-8,
            max_iter: 50,
            max_halvings: 8,
            reuse_ratio: 0.0,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct NewtonReport {
    pub iterations: usize,
    /// Sup-norm of the residual at the initial guess and after every iteration.
    pub residual_norms: Vec<f64>,
    pub converged: bool,
    pub damping_used: bool,
    pub factorizations: usize,
}

impl NewtonReport {
    pub fn final_residual(&self) -> f64 {
        self.residual_norms.last().copied().unwrap_or(f64::INFINITY)
    }
}

/// Solves `F(x) = 0`.
///
/// Full Newton steps are tried first; if the residual sup-norm does not
/// decrease the step is halved up to `max_halvings` times. When no trial
/// decreases the residual the best iterate so far is returned unconverged.
pub fn newton_solve<R, J>(
    mut residual: R,
    mut jacobian: J,
    x0: Vec<f64>,
    opts: &NewtonOptions,
) -> Result<(Vec<f64>, NewtonReport)>
where
    R: FnMut(&[f64], &mut [f64]),
    J: FnMut(&[f64]) -> SparseJacobian,
{
    if !(opts.tol > 0.0) {
        return Err(Error::param("tol", "must be > 0"));
    }
    let n = x0.len();
    let mut x = x0;
    let mut r = vec![0.0; n];
    residual(&x, &mut r);
    let mut norm = sup_norm(&r);
    let mut merit = l2_norm(&r);
    let mut report = NewtonReport {
        residual_norms: vec![norm],
        ..Default::default()
    };
    let mut solver = SparseSolver::default();
    let mut trial = vec![0.0; n];
    let mut r_trial = vec![0.0; n];
    // whether the current factorization belongs to the current iterate
    let mut fresh = false;
    let mut have_factor = false;

    while !(norm <= opts.tol) && report.iterations < opts.max_iter {
        if !have_factor || fresh {
            let jac = jacobian(&x);
            if jac.n != n {
                return Err(Error::DimensionMismatch(format!(
                    "jacobian is {}x{0}, system has {n} unknowns",
                    jac.n
                )));
            }
            if solver.factor(&jac).is_none() {
                return Err(Error::SingularJacobian {
                    iteration: report.iterations,
                });
            }
            report.factorizations += 1;
            have_factor = true;
            fresh = true;
        }
        let step = solver.solve(&r).ok_or(Error::SingularJacobian {
            iteration: report.iterations,
        })?;

        if !fresh {
            // chord step with a factorization from an earlier iterate
            for i in 0..n {
                trial[i] = x[i] - step[i];
            }
            residual(&trial, &mut r_trial);
            let m = l2_norm(&r_trial);
            if m <= opts.reuse_ratio * merit {
                std::mem::swap(&mut x, &mut trial);
                std::mem::swap(&mut r, &mut r_trial);
                norm = sup_norm(&r);
                merit = m;
                report.iterations += 1;
                report.residual_norms.push(norm);
            } else {
                fresh = true;
            }
            continue;
        }

        let mut accepted = false;
        let mut scale = 1.0;
        for halving in 0..=opts.max_halvings {
            for i in 0..n {
                trial[i] = x[i] - scale * step[i];
            }
            residual(&trial, &mut r_trial);
            let m = l2_norm(&r_trial);
            if m < merit {
                report.damping_used |= halving > 0;
                std::mem::swap(&mut x, &mut trial);
                std::mem::swap(&mut r, &mut r_trial);
                norm = sup_norm(&r);
                merit = m;
                accepted = true;
                break;
            }
            scale *= 0.5;
        }
        if !accepted {
            report.damping_used = true;
            break;
        }
        report.iterations += 1;
        report.residual_norms.push(norm);
        fresh = !(opts.reuse_ratio > 0.0);
        // the next pass either reuses this factorization or refactors at the new iterate
        if fresh {
            have_factor = false;
        }
    }
    report.converged = norm <= opts.tol;
    Ok((x, report))
}

fn l2_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn sup_norm(v: &[f64]) -> f64 {
    v.iter()
        .fold(0.0f64, |m, x| if x.is_nan() { f64::NAN } else { m.max(x.abs()) })
}

static SEQUENTIAL: Once = Once::new();

/// Symbolic analyses shared between solvers. Sweeps solve many systems with
/// the same sparsity pattern, and the fill-reducing analysis costs about half
/// a numeric factorization.
static SYMBOLIC_CACHE: Mutex<Vec<Arc<Cached>>> = Mutex::new(Vec::new());
const SYMBOLIC_CACHE_SIZE: usize = 4;

/// Sparse LU that keeps the symbolic analysis while the pattern is unchanged.
#[derive(Default)]
pub struct SparseSolver {
    cache: Option<Arc<Cached>>,
    numeric: Option<Numeric>,
}

enum Analysis {
    /// Column ordering chosen by faer (COLAMD).
    Auto(SymbolicLu<usize>),
    /// Caller-supplied column ordering, supernodal factorization.
    Ordered {
        fwd: Vec<usize>,
        inv: Vec<usize>,
        transpose: SymbolicSparseColMat<usize>,
        transpose_argsort: Argsort<usize>,
        lu: Box<SymbolicSupernodalLu<usize>>,
    },
}

enum Numeric {
    Auto(Lu<usize, f64>),
    Ordered {
        row_fwd: Vec<usize>,
        row_inv: Vec<usize>,
        lu: SupernodalLu<usize, f64>,
    },
}

struct Cached {
    n: usize,
    rows: Vec<usize>,
    cols: Vec<usize>,
    ordering: Option<Arc<[usize]>>,
    symbolic: SymbolicSparseColMat<usize>,
    argsort: Argsort<usize>,
    analysis: Analysis,
}

fn pattern(n: usize, rows: &[usize], cols: &[usize]) -> Option<(SymbolicSparseColMat<usize>, Argsort<usize>)> {
    let pairs: Vec<Pair<usize, usize>> = rows.iter().zip(cols).map(|(&r, &c)| Pair::new(r, c)).collect();
    SymbolicSparseColMat::try_new_from_indices(n, n, &pairs).ok()
}

/// Supernode amalgamation thresholds `(size, max zero fraction)`, looser than
/// faer's defaults; the larger dense blocks pay for their padding.
const RELAX: &[(usize, f64)] = &[(4, 1.0), (16, 0.8), (48, 0.3), (128, 0.2), (usize::MAX, 0.1)];

/// `None` if `order` is not a permutation of the columns.
fn analyze_ordered(a: &SymbolicSparseColMat<usize>, jac: &SparseJacobian, order: &[usize]) -> Option<Analysis> {
    let n = jac.n;
    if order.len() != n {
        return None;
    }
    let fwd = order.to_vec();
    let mut inv = vec![usize::MAX; n];
    for (i, &c) in fwd.iter().enumerate() {
        *inv.get_mut(c)? = i;
    }
    if inv.contains(&usize::MAX) {
        return None;
    }
    let (transpose, transpose_argsort) = pattern(n, &jac.cols, &jac.rows)?;
    let perm = PermRef::new_checked(&fwd, &inv, n);
    let mut etree = vec![0usize; n];
    let mut post = vec![0usize; n];
    let mut counts = vec![0usize; n];
    let mut min_row = vec![0usize; n];
    let mut mem = MemBuffer::try_new(StackReq::any_of(&[
        qr::col_etree_scratch::<usize>(n, n),
        qr::postorder_scratch::<usize>(n),
        qr::column_counts_aat_scratch::<usize>(n, n),
        supernodal::factorize_supernodal_symbolic_lu_scratch::<usize>(n, n),
    ]))
    .ok()?;
    let stack = MemStack::new(&mut mem);
    let et = qr::col_etree(a.as_ref(), Some(perm), &mut etree, stack);
    qr::postorder(&mut post, et, stack);
    qr::column_counts_ata(
        &mut counts,
        &mut min_row,
        transpose.as_ref(),
        Some(perm),
        et,
        &post,
        stack,
    );
    let lu = supernodal::factorize_supernodal_symbolic_lu(
        a.as_ref(),
        Some(perm),
        &min_row,
        et,
        &counts,
        stack,
        faer::sparse::linalg::SymbolicSupernodalParams { relax: Some(RELAX) },
    )
    .ok()?;
    Some(Analysis::Ordered {
        fwd,
        inv,
        transpose,
        transpose_argsort,
        lu: Box::new(lu),
    })
}

impl Cached {
    fn matches(&self, jac: &SparseJacobian) -> bool {
        self.n == jac.n && self.rows == jac.rows && self.cols == jac.cols && self.ordering == jac.ordering
    }

    fn analyze(jac: &SparseJacobian) -> Option<Arc<Cached>> {
        let mut shared = SYMBOLIC_CACHE.lock().unwrap_or_else(|e| e.into_inner());
        if let Some(pos) = shared.iter().position(|c| c.matches(jac)) {
            let hit = shared.remove(pos);
            shared.push(hit.clone());
            return Some(hit);
        }
        let (symbolic, argsort) = pattern(jac.n, &jac.rows, &jac.cols)?;
        let analysis = match jac.ordering.as_deref().and_then(|o| analyze_ordered(&symbolic, jac, o)) {
            Some(a) => a,
            None => Analysis::Auto(SymbolicLu::try_new(symbolic.as_ref()).ok()?),
        };
        let fresh = Arc::new(Cached {
            n: jac.n,
            rows: jac.rows.clone(),
            cols: jac.cols.clone(),
            ordering: jac.ordering.clone(),
            symbolic,
            argsort,
            analysis,
        });
        if shared.len() == SYMBOLIC_CACHE_SIZE {
            shared.remove(0);
        }
        shared.push(fresh.clone());
        Some(fresh)
    }
}

impl SparseSolver {
    /// Factorizes `J`; `None` if it is singular.
    pub fn factor(&mut self, jac: &SparseJacobian) -> Option<()> {
        SEQUENTIAL.call_once(|| faer::set_global_parallelism(Par::Seq));
        self.numeric = None;
        if !self.cache.as_ref().is_some_and(|c| c.matches(jac)) {
            self.cache = Some(Cached::analyze(jac)?);
        }
        let c = self.cache.as_ref()?;
        let a = SparseColMat::new_from_argsort(c.symbolic.clone(), &c.argsort, &jac.values).ok()?;
        self.numeric = Some(match &c.analysis {
            Analysis::Auto(lu) => Numeric::Auto(Lu::try_new_with_symbolic(lu.clone(), a.as_ref()).ok()?),
            Analysis::Ordered {
                fwd,
                inv,
                transpose,
                transpose_argsort,
                lu: symbolic,
            } => {
                let at = SparseColMat::new_from_argsort(transpose.clone(), transpose_argsort, &jac.values).ok()?;
                let n = c.n;
                let (mut row_fwd, mut row_inv) = (vec![0usize; n], vec![0usize; n]);
                let mut lu = SupernodalLu::new();
                let params = Default::default();
                let mut mem = MemBuffer::try_new(supernodal::factorize_supernodal_numeric_lu_scratch::<usize, f64>(
                    symbolic, params,
                ))
                .ok()?;
                supernodal::factorize_supernodal_numeric_lu(
                    &mut row_fwd,
                    &mut row_inv,
                    &mut lu,
                    a.as_ref(),
                    at.as_ref(),
                    PermRef::new_checked(fwd, inv, n),
                    symbolic,
                    Par::Seq,
                    MemStack::new(&mut mem),
                    params,
                )
                .ok()?;
                Numeric::Ordered { row_fwd, row_inv, lu }
            }
        });
        Some(())
    }

    /// Solves with the last factorization; `None` if there is none or the
    /// result is not finite (numerically singular matrix).
    pub fn solve(&self, b: &[f64]) -> Option<Vec<f64>> {
        let c = self.cache.as_ref()?;
        let n = c.n;
        let mut rhs = Mat::<f64>::from_fn(n, 1, |i, _| b[i]);
        match (self.numeric.as_ref()?, &c.analysis) {
            (Numeric::Auto(lu), _) => lu.solve_in_place(rhs.as_mut()),
            (Numeric::Ordered { row_fwd, row_inv, lu }, Analysis::Ordered { fwd, inv, .. }) => {
                let mut mem =
                    MemBuffer::try_new(supernodal::solve_in_place_scratch::<usize, f64>(n, 1, Par::Seq)).ok()?;
                lu.solve_in_place_with_conj(
                    PermRef::new_checked(row_fwd, row_inv, n),
                    PermRef::new_checked(fwd, inv, n),
                    Conj::No,
                    rhs.as_mut(),
                    Par::Seq,
                    MemStack::new(&mut mem),
                );
            }
            _ => return None,
        }
        let s: Vec<f64> = (0..n).map(|i| rhs[(i, 0)]).collect();
        s.iter().all(|v| v.is_finite()).then_some(s)
    }

    pub fn factor_and_solve(&mut self, jac: &SparseJacobian, b: &[f64]) -> Option<Vec<f64>> {
        self.factor(jac)?;
        self.solve(b)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scalar_quadratic() {
        let (x, rep) = newton_solve(
            |x, r| r[0] = x[0] * x[0] - 4.0,
            |x| {
                let mut j = SparseJacobian::new(1);
                j.push(0, 0, 2.0 * x[0]);
                j
            },
            vec![3.0],
            &NewtonOptions::default(),
        )
        .unwrap();
        assert!(rep.converged);
        assert!(rep.iterations <= 6);
        assert!((x[0] - 2.0).abs() < 1e-8);
    }

    #[test]
    fn linear_system_in_one_iteration() {
        // [[4,1],[2,3]] x = [1,2]
        let (x, rep) = newton_solve(
            |x, r| {
                r[0] = 4.0 * x[0] + x[1] - 1.0;
                r[1] = 2.0 * x[0] + 3.0 * x[1] - 2.0;
            },
            |_| {
                let mut j = SparseJacobian::new(2);
                j.push(0, 0, 4.0);
                j.push(0, 1, 1.0);
                j.push(1, 0, 2.0);
                j.push(1, 1, 3.0);
                j
            },
            vec![0.0, 0.0],
            &NewtonOptions::default(),
        )
        .unwrap();
        assert!(rep.converged);
        assert_eq!(rep.iterations, 1);
        assert!((x[0] - 0.1).abs() < 1e-12 && (x[1] - 0.6).abs() < 1e-12);
    }

    #[test]
    fn singular_jacobian_is_an_error() {
        let res = newton_solve(
            |x, r| {
                r[0] = x[0] + x[1] - 1.0;
                r[1] = 2.0 * (x[0] + x[1]) - 3.0;
            },
            |_| {
                let mut j = SparseJacobian::new(2);
                j.push(0, 0, 1.0);
                j.push(0, 1, 1.0);
                j.push(1, 0, 2.0);
                j.push(1, 1, 2.0);
                j
            },
            vec![0.0, 0.0],
            &NewtonOptions::default(),
        );
        assert!(matches!(res, Err(Error::SingularJacobian { iteration: 0 })));
    }

    #[test]
    fn stalls_report_unconverged() {
        // x^2 + 1 has no real root; residual cannot drop below 1
        let (_, rep) = newton_solve(
            |x, r| r[0] = x[0] * x[0] + 1.0,
            |x| {
                let mut j = SparseJacobian::new(1);
                j.push(0, 0, 2.0 * x[0]);
                j
            },
            vec![0.5],
            &NewtonOptions::default(),
        )
        .unwrap();
        assert!(!rep.converged);
    }

    #[test]
    fn supplied_ordering_matches_automatic() {
        // periodic tridiagonal plus a long-range coupling
        let n = 40;
        let mut j = SparseJacobian::new(n);
        for i in 0..n {
            j.push(i, i, 4.0 + i as f64 * 0.01);
            j.push(i, (i + 1) % n, -1.0);
            j.push(i, (i + n - 1) % n, -1.5);
            j.push(i, (i + 17) % n, 0.3);
        }
        let b: Vec<f64> = (0..n).map(|i| (i as f64).sin()).collect();
        let auto = SparseSolver::default().factor_and_solve(&j, &b).unwrap();
        let order: Vec<usize> = (0..n).rev().collect();
        j.ordering = Some(order.into());
        let ordered = SparseSolver::default().factor_and_solve(&j, &b).unwrap();
        // a malformed ordering falls back to the automatic one
        j.ordering = Some(vec![0usize; n].into());
        let fallback = SparseSolver::default().factor_and_solve(&j, &b).unwrap();
        for i in 0..n {
            assert!((auto[i] - ordered[i]).abs() < 1e-12);
            assert!((auto[i] - fallback[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn pattern_reuse_gives_same_answer() {
        let mut solver = SparseSolver::default();
        let mut j = SparseJacobian::new(3);
        for (r, c, v) in [(0, 0, 2.0), (1, 1, 3.0), (2, 2, 4.0), (0, 2, 1.0)] {
            j.push(r, c, v);
        }
        let a = solver.factor_and_solve(&j, &[1.0, 1.0, 1.0]).unwrap();
        j.values = vec![4.0, 6.0, 8.0, 2.0];
        let b = solver.factor_and_solve(&j, &[2.0, 2.0, 2.0]).unwrap();
        for i in 0..3 {
            assert!((a[i] - b[i]).abs() < 1e-14);
        }
    }
}
