//! Forward-mode dual numbers over a small, fixed set of local unknowns.
//!
//! Every discrete equation of the space-time systems touches at most a
//! handful of unknowns, so each residual row is evaluated once with
//! [`Dual`] seeds on its stencil and the partial derivatives are scattered
//! into the sparse Jacobian. The same generic code evaluated with `f64`
//! produces the residual itself, so the two can never drift apart.

use std::ops::{Add, Div, Mul, Neg, Sub};

/// Arithmetic needed by the discretizations.
///
/// `max`/`min` pick a branch by value; on ties the receiver wins, which makes
/// `clamp` differentiate as the interior (identity) branch at the bounds.
pub trait Scalar:
    Copy
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + Add<f64, Output = Self>
    + Sub<f64, Output = Self>
    + Mul<f64, Output = Self>
    + Div<f64, Output = Self>
{
    fn cst(v: f64) -> Self;
    fn val(self) -> f64;
    fn sqrt(self) -> Self;

    fn max(self, other: Self) -> Self {
        if self.val() >= other.val() {
            self
        } else {
            other
        }
    }

    fn min(self, other: Self) -> Self {
        if self.val() <= other.val() {
            self
        } else {
            other
        }
    }

    fn abs(self) -> Self {
        if self.val() >= 0.0 {
            self
        } else {
            -self
        }
    }

    fn clamp_to(self, lo: f64, hi: f64) -> Self {
        self.min(Self::cst(hi)).max(Self::cst(lo))
    }
}

impl Scalar for f64 {
    #[inline]
    fn cst(v: f64) -> Self {
        v
    }
    #[inline]
    fn val(self) -> f64 {
        self
    }
    #[inline]
    fn sqrt(self) -> Self {
        f64::sqrt(self)
    }
}

/// Dual number carrying derivatives with respect to `N` local variables.
#[derive(Clone, Copy, Debug)]
pub struct Dual<const N: usize> {
    pub v: f64,
    pub d: [f64; N],
}

impl<const N: usize> Dual<N> {
    pub fn constant(v: f64) -> Self {
        Dual { v, d: [0.0; N] }
    }

    pub fn variable(v: f64, slot: usize) -> Self {
        let mut d = [0.0; N];
        d[slot] = 1.0;
        Dual { v, d }
    }

    #[inline]
    fn map(self, v: f64, scale: f64) -> Self {
        let mut d = self.d;
        for x in d.iter_mut() {
            *x *= scale;
        }
        Dual { v, d }
    }
}

impl<const N: usize> Add for Dual<N> {
    type Output = Self;
    #[inline]
    fn add(self, o: Self) -> Self {
        let mut d = self.d;
        for (a, b) in d.iter_mut().zip(o.d.iter()) {
            *a += b;
        }
        Dual { v: self.v + o.v, d }
    }
}

impl<const N: usize> Sub for Dual<N> {
    type Output = Self;
    #[inline]
    fn sub(self, o: Self) -> Self {
        let mut d = self.d;
        for (a, b) in d.iter_mut().zip(o.d.iter()) {
            *a -= b;
        }
        Dual { v: self.v - o.v, d }
    }
}

impl<const N: usize> Mul for Dual<N> {
    type Output = Self;
    #[inline]
    fn mul(self, o: Self) -> Self {
        let mut d = [0.0; N];
        for i in 0..N {
            d[i] = self.d[i] * o.v + o.d[i] * self.v;
        }
        Dual { v: self.v * o.v, d }
    }
}

impl<const N: usize> Div for Dual<N> {
    type Output = Self;
    #[inline]
    fn div(self, o: Self) -> Self {
        let inv = 1.0 / o.v;
        let q = self.v * inv;
        let mut d = [0.0; N];
        for i in 0..N {
            d[i] = (self.d[i] - q * o.d[i]) * inv;
        }
        Dual { v: q, d }
    }
}

impl<const N: usize> Neg for Dual<N> {
    type Output = Self;
    #[inline]
    fn neg(self) -> Self {
        self.map(-self.v, -1.0)
    }
}

impl<const N: usize> Add<f64> for Dual<N> {
    type Output = Self;
    #[inline]
    fn add(self, o: f64) -> Self {
        Dual {
            v: self.v + o,
            d: self.d,
        }
    }
}

impl<const N: usize> Sub<f64> for Dual<N> {
    type Output = Self;
    #[inline]
    fn sub(self, o: f64) -> Self {
        Dual {
            v: self.v - o,
            d: self.d,
        }
    }
}

impl<const N: usize> Mul<f64> for Dual<N> {
    type Output = Self;
    #[inline]
    fn mul(self, o: f64) -> Self {
        self.map(self.v * o, o)
    }
}

impl<const N: usize> Div<f64> for Dual<N> {
    type Output = Self;
    #[inline]
    fn div(self, o: f64) -> Self {
        self.map(self.v / o, 1.0 / o)
    }
}

impl<const N: usize> Scalar for Dual<N> {
    fn cst(v: f64) -> Self {
        Dual::constant(v)
    }
    #[inline]
    fn val(self) -> f64 {
        self.v
    }
    fn sqrt(self) -> Self {
        let s = self.v.sqrt();
        self.map(s, 0.5 / s)
    }
}

/// Gathers the unknowns touched by one residual row and hands out seeded
/// dual variables, deduplicating repeated references to the same unknown.
pub struct RowSeeds<const N: usize> {
    globals: [usize; N],
    len: usize,
}

impl<const N: usize> RowSeeds<N> {
    pub fn new() -> Self {
        RowSeeds {
            globals: [usize::MAX; N],
            len: 0,
        }
    }

    /// Dual for an entry that is either an unknown (`Some(index)`) or a fixed value.
    pub fn seed(&mut self, global: Option<usize>, value: f64) -> Dual<N> {
        match global {
            None => Dual::constant(value),
            Some(g) => {
                let slot = match self.globals[..self.len].iter().position(|&x| x == g) {
                    Some(s) => s,
                    None => {
                        assert!(self.len < N, "stencil exceeds {N} local unknowns");
                        self.globals[self.len] = g;
                        self.len += 1;
                        self.len - 1
                    }
                };
                Dual::variable(value, slot)
            }
        }
    }

    /// Emits `(column, derivative)` pairs for every seeded unknown, zeros included,
    /// so the sparsity pattern does not depend on the iterate.
    pub fn entries<'a>(&'a self, r: &'a Dual<N>) -> impl Iterator<Item = (usize, f64)> + 'a {
        (0..self.len).map(move |k| (self.globals[k], r.d[k]))
    }
}

impl<const N: usize> Default for RowSeeds<N> {
    fn default() -> Self {
        Self::new()
    }
}
