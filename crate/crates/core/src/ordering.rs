//! Fill-reducing column orderings for space-time Jacobians.
//!
//! Unknowns live on the nodes of a grid that is periodic in space and open in
//! time. Geometric nested dissection orders both halves of the grid before the
//! separator that splits them, which keeps LU fill far below that of a banded
//! time-major ordering.

/// Coupling reach of the column-intersection graph, in nodes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Stencil {
    /// Columns `j` and `j + d` share a row for some `d <= reach_x`.
    pub reach_x: usize,
    /// Same for time slots.
    pub reach_t: usize,
}

/// Regions with at most this many nodes are ordered naturally.
const LEAF_NODES: usize = 16;

struct Dissector<'a, F> {
    nx: usize,
    stencil: Stencil,
    node: F,
    order: &'a mut Vec<usize>,
}

impl<F: FnMut(usize, usize, &mut Vec<usize>)> Dissector<'_, F> {
    fn emit(&mut self, xs: impl Iterator<Item = usize> + Clone, k0: usize, k1: usize) {
        for k in k0..k1 {
            for j in xs.clone() {
                (self.node)(k, j, self.order);
            }
        }
    }

    fn ring(&mut self, k0: usize, k1: usize) {
        let (nx, h) = (self.nx, k1 - k0);
        let (sx, st) = (self.stencil.reach_x, self.stencil.reach_t);
        if nx * h <= LEAF_NODES {
            return self.emit(0..nx, k0, k1);
        }
        // a time cut costs nx * st nodes, two space cuts cost 2 * h * sx
        if h > 2 * st && nx * st <= 2 * h * sx {
            let m = k0 + (h - st) / 2;
            self.ring(k0, m);
            self.ring(m + st, k1);
            self.emit(0..nx, m, m + st);
        } else if nx > 2 * sx + 2 {
            let half = sx + (nx - 2 * sx) / 2;
            self.block(sx, half, k0, k1);
            self.block(half + sx, nx, k0, k1);
            self.emit((0..sx).chain(half..half + sx), k0, k1);
        } else {
            self.emit(0..nx, k0, k1);
        }
    }

    fn block(&mut self, a: usize, b: usize, k0: usize, k1: usize) {
        let (w, h) = (b - a, k1 - k0);
        let (sx, st) = (self.stencil.reach_x, self.stencil.reach_t);
        if w == 0 || h == 0 {
            return;
        }
        if w * h <= LEAF_NODES {
            return self.emit(a..b, k0, k1);
        }
        let can_x = w > 2 * sx;
        let can_t = h > 2 * st;
        let cut_x = match (can_x, can_t) {
            (true, true) => h * sx <= w * st,
            (x, t) if x || t => x,
            _ => return self.emit(a..b, k0, k1),
        };
        if cut_x {
            let m = a + (w - sx) / 2;
            self.block(a, m, k0, k1);
            self.block(m + sx, b, k0, k1);
            self.emit(m..m + sx, k0, k1);
        } else {
            let m = k0 + (h - st) / 2;
            self.block(a, b, k0, m);
            self.block(a, b, m + st, k1);
            self.emit(a..b, m, m + st);
        }
    }
}

/// Nested-dissection order of the unknowns on an `nx` by `nt` grid: entry `i`
/// is the original index of the `i`-th eliminated column. `node(k, j, out)`
/// appends the unknowns at time `k`, cell `j`; every unknown must be appended
/// exactly once for the result to be a permutation.
pub fn nested_dissection<F>(nx: usize, nt: usize, stencil: Stencil, node: F) -> Vec<usize>
where
    F: FnMut(usize, usize, &mut Vec<usize>),
{
    let mut order = Vec::new();
    let stencil = Stencil {
        reach_x: stencil.reach_x.max(1),
        reach_t: stencil.reach_t.max(1),
    };
    let mut d = Dissector {
        nx,
        stencil,
        node,
        order: &mut order,
    };
    if nx > 0 && nt > 0 {
        d.ring(0, nt);
    }
    order
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn blocked(nx: usize, nt: usize, nb: usize, stencil: Stencil) -> Vec<usize> {
        nested_dissection(nx, nt, stencil, |k, j, out: &mut Vec<usize>| {
            let base = (k * nx + j) * nb;
            out.extend(base..base + nb);
        })
    }

    proptest! {
        #[test]
        fn is_a_permutation(nx in 1usize..40, nt in 1usize..60, nb in 1usize..5, rx in 1usize..4, rt in 1usize..4) {
            let p = blocked(nx, nt, nb, Stencil { reach_x: rx, reach_t: rt });
            prop_assert_eq!(p.len(), nx * nt * nb);
            let mut seen = vec![false; p.len()];
            for &i in &p {
                prop_assert!(!seen[i]);
                seen[i] = true;
            }
        }
    }

    #[test]
    fn separator_comes_last() {
        // a tall ring is first split in time; the middle slots close the order
        let (nx, nt) = (4, 40);
        let p = blocked(nx, nt, 1, Stencil { reach_x: 1, reach_t: 2 });
        let tail: Vec<usize> = p[p.len() - 2 * nx..].iter().map(|i| i / nx).collect();
        assert!(tail.iter().all(|&k| k == 19 || k == 20), "{tail:?}");
    }
}
