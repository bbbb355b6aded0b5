//! Mean-field Hamiltonians `H_i(q_i, p_i) = ∫ H Π_{j≠i} u_j dz_j` and their vector fields.
//!
//! Averaging the quadratic kinetic energy over independent subsystem densities
//! leaves `½ p_iᵀA(q_i)p_i + b(q_i)·p_i + c(q_i)` with
//! `A = E[G_ii]`, `b = Σ_j E[G_ij μ_j]`,
//! `c = ½ Σ_j E[tr(G_jj S_j)] + ½ Σ_{j≠k} E[μ_jᵀG_jk μ_k]`, where `G = M⁻¹`
//! and `μ_j`, `S_j` are the conditional first and second momentum moments of
//! subsystem j. These are tabulated at q_i nodes. The potential part is either
//! tabulated the same way or, when the model declares a sum-of-products
//! interaction, evaluated exactly from per-subsystem factor expectations.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::integrate::VectorField;
use crate::model::{Boundary, Factor, HamiltonianModel, Interval};
use crate::partition::{interpolate, EdgePolicy, TensorPartition};

/// Point-mass summary of one subsystem's density used for averaging.
#[derive(Clone, Debug, PartialEq)]
pub struct SubsystemStats {
    pub subsystem: usize,
    pub nodes: Vec<Vec<f64>>,
    /// Node masses, summing to one.
    pub mass: Vec<f64>,
    /// Conditional mean momentum at each node.
    pub mean_p: Vec<DVector<f64>>,
    /// Conditional second moment E[p pᵀ | q] at each node.
    pub second_p: Vec<DMatrix<f64>>,
}

impl SubsystemStats {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn expectation(&self, f: impl Fn(&[f64]) -> f64) -> f64 {
        self.nodes
            .iter()
            .zip(&self.mass)
            .map(|(q, m)| m * f(q))
            .sum()
    }

    fn check(&self) -> Result<()> {
        let total: f64 = self.mass.iter().sum();
        if (total - 1.0).abs() > 1e-8 || self.mass.iter().any(|&m| m < 0.0) {
            return Err(Error::UndefinedProbability(format!(
                "subsystem {} density has mass {total} or negative weights",
                self.subsystem
            )));
        }
        Ok(())
    }
}

/// Exact potential part `Σ_t coeff_t · f_t(q_i)` (a missing factor means 1).
#[derive(Clone, Debug)]
struct AnalyticPotential {
    terms: Vec<(f64, Option<Factor>)>,
}

impl AnalyticPotential {
    fn value_and_gradient(&self, q: &[f64], grad: &mut [f64]) -> f64 {
        grad.iter_mut().for_each(|g| *g = 0.0);
        let mut tmp = vec![0.0; q.len()];
        let mut v = 0.0;
        for (c, f) in &self.terms {
            match f {
                None => v += c,
                Some(f) => {
                    v += c * f.value_and_gradient(q, &mut tmp);
                    grad.iter_mut().zip(&tmp).for_each(|(g, t)| *g += c * t);
                }
            }
        }
        v
    }
}

/// Tabulated mean-field Hamiltonian of one subsystem.
#[derive(Clone, Debug)]
pub struct EffectiveHamiltonian {
    pub subsystem: usize,
    dim: usize,
    grid: TensorPartition,
    bounds: Vec<Interval>,
    /// Per node: A (d·d, row-major), b (d), c, U.
    values: Vec<f64>,
    /// Per axis k, per node: ∂_k of the record.
    derivs: Vec<Vec<f64>>,
    analytic: Option<AnalyticPotential>,
    margin: f64,
}

fn record_len(d: usize) -> usize {
    d * d + d + 2
}

impl EffectiveHamiltonian {
    /// Averages the model Hamiltonian over the frozen densities `others`
    /// (one per subsystem other than `i`, any order) at the cell centers of `grid`.
    pub fn build(
        model: &dyn HamiltonianModel,
        i: usize,
        others: &[&SubsystemStats],
        grid: &TensorPartition,
    ) -> Result<Self> {
        let layout = model.layout();
        let block = layout.block(i);
        let d = block.len();
        if grid.dim() != d {
            return Err(Error::Layout(format!(
                "table grid has {} axes, subsystem {i} has {d}",
                grid.dim()
            )));
        }
        let mut seen = vec![false; layout.len()];
        seen[i] = true;
        for s in others {
            if s.subsystem >= layout.len() || seen[s.subsystem] {
                return Err(Error::Layout(format!(
                    "unexpected or repeated frozen subsystem {}",
                    s.subsystem
                )));
            }
            seen[s.subsystem] = true;
            s.check()?;
        }
        if seen.iter().any(|x| !x) {
            return Err(Error::Layout(
                "frozen densities do not cover all other subsystems".into(),
            ));
        }

        let analytic = model.potential_terms().map(|terms| {
            let mut out = Vec::with_capacity(terms.len());
            for t in terms {
                let mut coeff = t.coefficient;
                let mut own = None;
                for (s, f) in &t.factors {
                    if *s == i {
                        own = Some(f.clone());
                    } else {
                        let st = others
                            .iter()
                            .find(|o| o.subsystem == *s)
                            .expect("coverage checked");
                        coeff *= st.expectation(|q| f.value(q));
                    }
                }
                out.push((coeff, own));
            }
            AnalyticPotential { terms: out }
        });

        let constant_mass = model.mass_matrix_is_constant();
        let fixed_g = if constant_mass {
            let m = model.mass_matrix(&vec![0.0; model.dim()]);
            Some(m.try_inverse().ok_or(Error::EffectiveModel { node: 0 })?)
        } else {
            None
        };
        let need_v = analytic.is_none();
        let l = record_len(d);
        let n = grid.n_cells();
        let blocks: Vec<_> = others.iter().map(|s| layout.block(s.subsystem)).collect();
        let combos: usize = others.iter().map(|s| s.len()).product();

        let records: Vec<Result<Vec<f64>>> = (0..n)
            .into_par_iter()
            .map(|node| {
                let qi = grid.cell_center(node);
                let mut rec = vec![0.0; l];
                let mut q = vec![0.0; model.dim()];
                q[block.clone()].copy_from_slice(&qi);
                let mut idx = vec![0usize; others.len()];
                for _ in 0..combos.max(1) {
                    let mut w = 1.0;
                    for (k, s) in others.iter().enumerate() {
                        q[blocks[k].clone()].copy_from_slice(&s.nodes[idx[k]]);
                        w *= s.mass[idx[k]];
                    }
                    if w > 0.0 {
                        let g = match &fixed_g {
                            Some(g) => g.clone(),
                            None => model
                                .mass_matrix(&q)
                                .try_inverse()
                                .ok_or(Error::EffectiveModel { node })?,
                        };
                        accumulate(&mut rec, &g, w, &block, others, &blocks, &idx);
                        if need_v {
                            rec[l - 1] += w * model.potential(&q);
                        }
                    }
                    // odometer over the other subsystems' nodes
                    for k in (0..others.len()).rev() {
                        idx[k] += 1;
                        if idx[k] < others[k].len() {
                            break;
                        }
                        idx[k] = 0;
                    }
                }
                let a = DMatrix::from_row_slice(d, d, &rec[..d * d]);
                if a.cholesky().is_none() {
                    return Err(Error::EffectiveModel { node });
                }
                Ok(rec)
            })
            .collect();
        let mut values = Vec::with_capacity(n * l);
        for r in records {
            values.extend(r?);
        }
        let derivs = (0..d)
            .map(|k| central_differences(grid, &values, l, k))
            .collect();
        let bounds = model.domain()[block].to_vec();
        let margin = grid
            .axes()
            .iter()
            .map(|a| 0.5 * (a.hi - a.lo))
            .fold(f64::INFINITY, f64::min);
        Ok(Self {
            subsystem: i,
            dim: d,
            grid: grid.clone(),
            bounds,
            values,
            derivs,
            analytic,
            margin,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn bounds(&self) -> &[Interval] {
        &self.bounds
    }

    pub fn grid(&self) -> &TensorPartition {
        &self.grid
    }

    /// Interpolated (A, b, c + U) at `q`, including the exact potential part.
    pub fn coefficients(&self, q: &[f64]) -> Result<(DMatrix<f64>, DVector<f64>, f64)> {
        let d = self.dim;
        let l = record_len(d);
        let mut rec = vec![0.0; l];
        self.interp(&self.values, q, &mut rec)?;
        let a = DMatrix::from_row_slice(d, d, &rec[..d * d]);
        let b = DVector::from_column_slice(&rec[d * d..d * d + d]);
        let mut c = rec[l - 2] + rec[l - 1];
        if let Some(an) = &self.analytic {
            let mut g = vec![0.0; d];
            c += an.value_and_gradient(q, &mut g);
        }
        Ok((a, b, c))
    }

    pub fn energy(&self, q: &[f64], p: &[f64]) -> Result<f64> {
        let (a, b, c) = self.coefficients(q)?;
        let p = DVector::from_column_slice(p);
        Ok(0.5 * p.dot(&(&a * &p)) + b.dot(&p) + c)
    }

    fn interp(&self, table: &[f64], q: &[f64], out: &mut [f64]) -> Result<()> {
        let policy = EdgePolicy::Extrapolate {
            margin: self.margin,
        };
        if interpolate(&self.grid, table, record_len(self.dim), q, policy, out) {
            Ok(())
        } else {
            Err(Error::Extrapolation { q: q.to_vec() })
        }
    }

    /// (q̇, ṗ) = (∂H/∂p, −∂H/∂q) at `(q, p)`.
    pub fn field(&self, q: &[f64], p: &[f64], dq: &mut [f64], dp: &mut [f64]) -> Result<()> {
        let d = self.dim;
        let l = record_len(d);
        let mut rec = vec![0.0; l];
        self.interp(&self.values, q, &mut rec)?;
        for r in 0..d {
            dq[r] = rec[d * d + r] + (0..d).map(|s| rec[r * d + s] * p[s]).sum::<f64>();
        }
        let mut drec = vec![0.0; l];
        for k in 0..d {
            self.interp(&self.derivs[k], q, &mut drec)?;
            let mut quad = 0.0;
            for r in 0..d {
                for s in 0..d {
                    quad += p[r] * drec[r * d + s] * p[s];
                }
            }
            let lin: f64 = (0..d).map(|r| drec[d * d + r] * p[r]).sum();
            dp[k] = -(0.5 * quad + lin + drec[l - 2] + drec[l - 1]);
        }
        if let Some(an) = &self.analytic {
            let mut g = vec![0.0; d];
            an.value_and_gradient(q, &mut g);
            dp.iter_mut().zip(&g).for_each(|(x, gk)| *x -= gk);
        }
        Ok(())
    }
}

#[allow(clippy::too_many_arguments)]
fn accumulate(
    rec: &mut [f64],
    g: &DMatrix<f64>,
    w: f64,
    block: &std::ops::Range<usize>,
    others: &[&SubsystemStats],
    blocks: &[std::ops::Range<usize>],
    idx: &[usize],
) {
    let d = block.len();
    let l = rec.len();
    for r in 0..d {
        for s in 0..d {
            rec[r * d + s] += w * g[(block.start + r, block.start + s)];
        }
    }
    let mut c = 0.0;
    for (k, st) in others.iter().enumerate() {
        let bk = &blocks[k];
        let mu = &st.mean_p[idx[k]];
        let s2 = &st.second_p[idx[k]];
        for r in 0..d {
            let mut acc = 0.0;
            for (t, m) in mu.iter().enumerate() {
                acc += g[(block.start + r, bk.start + t)] * m;
            }
            rec[d * d + r] += w * acc;
        }
        for a in 0..bk.len() {
            for b in 0..bk.len() {
                c += 0.5 * g[(bk.start + a, bk.start + b)] * s2[(b, a)];
            }
        }
        for (k2, st2) in others.iter().enumerate() {
            if k2 == k {
                continue;
            }
            let b2 = &blocks[k2];
            let mu2 = &st2.mean_p[idx[k2]];
            for a in 0..bk.len() {
                for b in 0..b2.len() {
                    c += 0.5 * mu[a] * g[(bk.start + a, b2.start + b)] * mu2[b];
                }
            }
        }
    }
    rec[l - 2] += w * c;
}

/// Node-wise central differences along `axis` (one-sided at non-periodic edges).
fn central_differences(
    grid: &TensorPartition,
    values: &[f64],
    stride: usize,
    axis: usize,
) -> Vec<f64> {
    let n = grid.n_cells();
    let a = grid.axes()[axis];
    let h = a.width();
    let mut out = vec![0.0; values.len()];
    if a.cells == 1 {
        return out;
    }
    for node in 0..n {
        let idx = grid.multi_index(node);
        let i = idx[axis];
        let at = |j: usize| {
            let mut m = idx.clone();
            m[axis] = j;
            grid.flat_index(&m)
        };
        let (lo, hi, span) = if a.boundary == Boundary::Periodic {
            (
                at((i + a.cells - 1) % a.cells),
                at((i + 1) % a.cells),
                2.0 * h,
            )
        } else if i == 0 {
            (at(0), at(1), h)
        } else if i == a.cells - 1 {
            (at(i - 1), at(i), h)
        } else {
            (at(i - 1), at(i + 1), 2.0 * h)
        };
        for r in 0..stride {
            out[node * stride + r] = (values[hi * stride + r] - values[lo * stride + r]) / span;
        }
    }
    out
}

/// Phase-space vector field of one subsystem under its mean-field Hamiltonian.
#[derive(Clone, Copy, Debug)]
pub struct MeanFieldField<'a> {
    pub hamiltonian: &'a EffectiveHamiltonian,
}

impl VectorField for MeanFieldField<'_> {
    fn half_dim(&self) -> usize {
        self.hamiltonian.dim
    }

    fn eval(&self, z: &[f64], dz: &mut [f64]) -> Result<()> {
        let d = self.hamiltonian.dim;
        let (dq, dp) = dz.split_at_mut(d);
        self.hamiltonian.field(&z[..d], &z[d..], dq, dp)
    }
}

/// Evaluates the mean-field vector field at one subsystem phase point.
pub fn mean_field_vector_field(h: &EffectiveHamiltonian, q: &[f64], p: &[f64]) -> Result<Vec<f64>> {
    let d = h.dim;
    let mut out = vec![0.0; 2 * d];
    let (dq, dp) = out.split_at_mut(d);
    h.field(q, p, dq, dp)?;
    Ok(out)
}
