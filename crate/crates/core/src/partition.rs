//! Uniform tensor-product box partitions.
//!
//! Flat cell indices are row-major: the last axis varies fastest, so a vector
//! over cells reshapes directly to an array of shape `(n₁, …, n_d)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Boundary, Interval};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Axis {
    pub lo: f64,
    pub hi: f64,
    pub cells: usize,
    pub boundary: Boundary,
}

impl Axis {
    pub fn width(&self) -> f64 {
        (self.hi - self.lo) / self.cells as f64
    }

    pub fn center(&self, i: usize) -> f64 {
        self.lo + (i as f64 + 0.5) * self.width()
    }

    pub fn centers(&self) -> Vec<f64> {
        (0..self.cells).map(|i| self.center(i)).collect()
    }

    /// Cell containing `x`; the upper edge belongs to the last cell.
    pub fn locate(&self, x: f64) -> Option<usize> {
        if !(x >= self.lo && x <= self.hi) {
            return None;
        }
        let i = ((x - self.lo) / self.width()).floor() as usize;
        Some(i.min(self.cells - 1))
    }
}

/// Axis-aligned box.
#[derive(Clone, Debug, PartialEq)]
pub struct Cell {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl Cell {
    pub fn center(&self) -> Vec<f64> {
        self.lo
            .iter()
            .zip(&self.hi)
            .map(|(a, b)| 0.5 * (a + b))
            .collect()
    }

    pub fn volume(&self) -> f64 {
        self.lo.iter().zip(&self.hi).map(|(a, b)| b - a).product()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorPartition {
    axes: Vec<Axis>,
}

impl TensorPartition {
    pub fn new(axes: Vec<Axis>) -> Result<Self> {
        if axes.is_empty() {
            return Err(Error::Partition("no axes".into()));
        }
        for (k, a) in axes.iter().enumerate() {
            if a.cells == 0 || !(a.hi > a.lo) || !a.lo.is_finite() || !a.hi.is_finite() {
                return Err(Error::Partition(format!(
                    "axis {k} is empty or degenerate: {a:?}"
                )));
            }
        }
        Ok(Self { axes })
    }

    /// Partition of a model domain with the given cell counts per coordinate.
    pub fn from_domain(domain: &[Interval], cells: &[usize]) -> Result<Self> {
        if domain.len() != cells.len() {
            return Err(Error::Partition(format!(
                "{} cell counts for a {}-dimensional domain",
                cells.len(),
                domain.len()
            )));
        }
        Self::new(
            domain
                .iter()
                .zip(cells)
                .map(|(iv, &n)| Axis {
                    lo: iv.lo,
                    hi: iv.hi,
                    cells: n,
                    boundary: iv.boundary,
                })
                .collect(),
        )
    }

    /// Tensor product of partitions, axes concatenated in order.
    pub fn product(parts: &[TensorPartition]) -> Result<Self> {
        Self::new(parts.iter().flat_map(|p| p.axes.iter().copied()).collect())
    }

    pub fn axes(&self) -> &[Axis] {
        &self.axes
    }

    pub fn dim(&self) -> usize {
        self.axes.len()
    }

    pub fn shape(&self) -> Vec<usize> {
        self.axes.iter().map(|a| a.cells).collect()
    }

    pub fn n_cells(&self) -> usize {
        self.axes.iter().map(|a| a.cells).product()
    }

    pub fn cell_volume(&self) -> f64 {
        self.axes.iter().map(Axis::width).product()
    }

    pub fn multi_index(&self, mut flat: usize) -> Vec<usize> {
        let mut idx = vec![0; self.axes.len()];
        for (k, a) in self.axes.iter().enumerate().rev() {
            idx[k] = flat % a.cells;
            flat /= a.cells;
        }
        idx
    }

    pub fn flat_index(&self, idx: &[usize]) -> usize {
        idx.iter()
            .zip(&self.axes)
            .fold(0, |acc, (&i, a)| acc * a.cells + i)
    }

    pub fn locate(&self, q: &[f64]) -> Option<usize> {
        let mut flat = 0;
        for (x, a) in q.iter().zip(&self.axes) {
            flat = flat * a.cells + a.locate(*x)?;
        }
        Some(flat)
    }

    pub fn cell(&self, flat: usize) -> Cell {
        let idx = self.multi_index(flat);
        let (lo, hi) = idx
            .iter()
            .zip(&self.axes)
            .map(|(&i, a)| {
                (
                    a.lo + i as f64 * a.width(),
                    a.lo + (i + 1) as f64 * a.width(),
                )
            })
            .unzip();
        Cell { lo, hi }
    }

    pub fn cell_center(&self, flat: usize) -> Vec<f64> {
        self.multi_index(flat)
            .iter()
            .zip(&self.axes)
            .map(|(&i, a)| a.center(i))
            .collect()
    }

    /// Sub-partition over a contiguous range of axes.
    pub fn sub(&self, range: std::ops::Range<usize>) -> Result<Self> {
        Self::new(self.axes[range].to_vec())
    }

    pub fn same_grid(&self, other: &Self) -> bool {
        self.axes.len() == other.axes.len()
            && self.axes.iter().zip(&other.axes).all(|(a, b)| {
                a.cells == b.cells && (a.lo - b.lo).abs() < 1e-12 && (a.hi - b.hi).abs() < 1e-12
            })
    }
}

/// Behaviour of [`interpolate`] beyond the outermost cell centers of
/// non-periodic axes.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum EdgePolicy {
    /// Linear extrapolation from the two edge nodes, up to `margin` beyond the
    /// axis interval; further out the query fails.
    Extrapolate { margin: f64 },
    /// Edge-node value inside the axis interval, zero outside it.
    ClampOrZero,
}

/// Multilinear interpolation of node values at cell centers.
///
/// `values` holds `stride` consecutive numbers per cell in flat-index order;
/// `out` receives the interpolated record. Periodic axes wrap. Returns `false`
/// when the query lies outside what the policy allows (for `ClampOrZero` the
/// output is then all zeros).
pub fn interpolate(
    part: &TensorPartition,
    values: &[f64],
    stride: usize,
    x: &[f64],
    policy: EdgePolicy,
    out: &mut [f64],
) -> bool {
    out[..stride].iter_mut().for_each(|o| *o = 0.0);
    let d = part.dim();
    let mut lo_idx = [0usize; 8];
    let mut hi_idx = [0usize; 8];
    let mut frac = [0.0f64; 8];
    assert!(d <= 8, "interpolation supports at most 8 axes");
    for (k, a) in part.axes().iter().enumerate() {
        let n = a.cells;
        let h = a.width();
        let mut xk = x[k];
        if a.boundary == crate::model::Boundary::Periodic {
            xk = a.lo + (xk - a.lo).rem_euclid(a.hi - a.lo);
            let s = (xk - a.lo) / h - 0.5;
            let f = s.floor();
            let i0 = (f as isize).rem_euclid(n as isize) as usize;
            lo_idx[k] = i0;
            hi_idx[k] = (i0 + 1) % n;
            frac[k] = s - f;
            continue;
        }
        match policy {
            EdgePolicy::Extrapolate { margin } => {
                if !(xk >= a.lo - margin && xk <= a.hi + margin) {
                    return false;
                }
            }
            EdgePolicy::ClampOrZero => {
                if !(xk >= a.lo && xk <= a.hi) {
                    return false;
                }
            }
        }
        if n == 1 {
            lo_idx[k] = 0;
            hi_idx[k] = 0;
            frac[k] = 0.0;
            continue;
        }
        let s = (xk - a.lo) / h - 0.5;
        let i0 = (s.floor().max(0.0) as usize).min(n - 2);
        let mut t = s - i0 as f64;
        if policy == EdgePolicy::ClampOrZero {
            t = t.clamp(0.0, 1.0);
        }
        lo_idx[k] = i0;
        hi_idx[k] = i0 + 1;
        frac[k] = t;
    }
    for corner in 0..(1usize << d) {
        let mut w = 1.0;
        let mut flat = 0;
        for (k, a) in part.axes().iter().enumerate() {
            let upper = corner >> (d - 1 - k) & 1 == 1;
            let (i, wk) = if upper {
                (hi_idx[k], frac[k])
            } else {
                (lo_idx[k], 1.0 - frac[k])
            };
            w *= wk;
            flat = flat * a.cells + i;
        }
        if w == 0.0 {
            continue;
        }
        let rec = &values[flat * stride..(flat + 1) * stride];
        out[..stride]
            .iter_mut()
            .zip(rec)
            .for_each(|(o, v)| *o += w * v);
    }
    true
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn part() -> TensorPartition {
        TensorPartition::new(vec![
            Axis {
                lo: 0.0,
                hi: 1.0,
                cells: 3,
                boundary: Boundary::Reflecting,
            },
            Axis {
                lo: -2.0,
                hi: 2.0,
                cells: 4,
                boundary: Boundary::Periodic,
            },
            Axis {
                lo: 5.0,
                hi: 6.0,
                cells: 2,
                boundary: Boundary::UnboundedTruncated,
            },
        ])
        .unwrap()
    }

    #[test]
    fn rejects_degenerate_axes() {
        assert!(TensorPartition::new(vec![Axis {
            lo: 0.0,
            hi: 0.0,
            cells: 2,
            boundary: Boundary::Reflecting
        }])
        .is_err());
        assert!(TensorPartition::new(vec![Axis {
            lo: 0.0,
            hi: 1.0,
            cells: 0,
            boundary: Boundary::Reflecting
        }])
        .is_err());
    }

    #[test]
    fn locate_edges() {
        let p = part();
        assert_eq!(p.locate(&[1.0, 2.0, 6.0]), Some(p.n_cells() - 1));
        assert_eq!(p.locate(&[0.0, -2.0, 5.0]), Some(0));
        assert_eq!(p.locate(&[1.0001, 0.0, 5.5]), None);
    }

    #[test]
    fn cells_tile_the_domain() {
        let p = part();
        let total: f64 = (0..p.n_cells()).map(|c| p.cell(c).volume()).sum();
        assert!((total - 4.0).abs() < 1e-12);
        for c in 0..p.n_cells() {
            assert_eq!(p.locate(&p.cell_center(c)), Some(c));
        }
    }

    #[test]
    fn interpolation_reproduces_affine_functions() {
        let p = TensorPartition::new(vec![
            Axis {
                lo: 0.0,
                hi: 1.0,
                cells: 5,
                boundary: Boundary::Reflecting,
            },
            Axis {
                lo: -1.0,
                hi: 1.0,
                cells: 4,
                boundary: Boundary::Reflecting,
            },
        ])
        .unwrap();
        let f = |q: &[f64]| 2.0 * q[0] - 3.0 * q[1] + 0.5;
        let vals: Vec<f64> = (0..p.n_cells()).map(|c| f(&p.cell_center(c))).collect();
        let mut out = [0.0];
        for x in [[0.33, 0.1], [0.01, -0.99], [1.05, 0.7]] {
            assert!(interpolate(
                &p,
                &vals,
                1,
                &x,
                EdgePolicy::Extrapolate { margin: 0.1 },
                &mut out
            ));
            assert!((out[0] - f(&x)).abs() < 1e-12);
        }
        assert!(!interpolate(
            &p,
            &vals,
            1,
            &[1.5, 0.0],
            EdgePolicy::Extrapolate { margin: 0.1 },
            &mut out
        ));
        assert!(!interpolate(
            &p,
            &vals,
            1,
            &[1.5, 0.0],
            EdgePolicy::ClampOrZero,
            &mut out
        ));
        assert_eq!(out[0], 0.0);
    }

    #[test]
    fn periodic_interpolation_wraps() {
        let p = TensorPartition::new(vec![Axis {
            lo: 0.0,
            hi: 1.0,
            cells: 4,
            boundary: Boundary::Periodic,
        }])
        .unwrap();
        let vals = [1.0, 2.0, 3.0, 4.0];
        let mut a = [0.0];
        let mut b = [0.0];
        interpolate(&p, &vals, 1, &[0.0], EdgePolicy::ClampOrZero, &mut a);
        interpolate(&p, &vals, 1, &[1.0], EdgePolicy::ClampOrZero, &mut b);
        assert!((a[0] - 2.5).abs() < 1e-12 && (b[0] - 2.5).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn index_round_trip(flat in 0usize..24) {
            let p = part();
            prop_assert_eq!(p.flat_index(&p.multi_index(flat)), flat);
        }

        #[test]
        fn located_cell_contains_point(x in 0.0f64..1.0, y in -2.0f64..2.0, z in 5.0f64..6.0) {
            let p = part();
            let c = p.cell(p.locate(&[x, y, z]).unwrap());
            for (k, v) in [x, y, z].iter().enumerate() {
                prop_assert!(*v >= c.lo[k] - 1e-12 && *v <= c.hi[k] + 1e-12);
            }
        }
    }
}
