//! Hamiltonian models `H(q,p) = ½ p·M(q)⁻¹p + V(q)` and their phase-space vector fields.

mod butane;
mod double_well;
mod restricted;
mod spec;
mod terms;

pub use butane::{
    bond_angle, cartesian_embedding, dihedral, ButaneModel, ButaneParams, Embedding, MassFrame,
};
pub use double_well::{DoubleWell2D, DoubleWellParams};
pub use restricted::Restricted;
pub use spec::ModelSpec;
pub use terms::{Factor, ProductTerm};

use std::fmt;
use std::ops::Range;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Behaviour of a coordinate at the edges of its interval.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Boundary {
    Periodic,
    Reflecting,
    /// The coordinate lives on ℝ; the interval only bounds discretizations.
    UnboundedTruncated,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
    pub boundary: Boundary,
}

impl Interval {
    pub fn new(lo: f64, hi: f64, boundary: Boundary) -> Self {
        Self { lo, hi, boundary }
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn contains(&self, x: f64) -> bool {
        match self.boundary {
            Boundary::UnboundedTruncated => x.is_finite(),
            _ => x >= self.lo && x <= self.hi,
        }
    }
}

/// Phase-space point z = (q, p).
#[derive(Clone, Debug, PartialEq)]
pub struct PhaseState {
    pub q: Vec<f64>,
    pub p: Vec<f64>,
}

impl PhaseState {
    pub fn new(q: Vec<f64>, p: Vec<f64>) -> Self {
        debug_assert_eq!(q.len(), p.len());
        Self { q, p }
    }

    pub fn dim(&self) -> usize {
        self.q.len()
    }

    /// Packs into `[q..., p...]`.
    pub fn to_vec(&self) -> Vec<f64> {
        let mut z = self.q.clone();
        z.extend_from_slice(&self.p);
        z
    }

    pub fn from_slice(z: &[f64]) -> Self {
        let d = z.len() / 2;
        Self {
            q: z[..d].to_vec(),
            p: z[d..].to_vec(),
        }
    }
}

/// Ordered partition of the coordinate indices into contiguous subsystem blocks.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SubsystemLayout {
    blocks: Vec<Range<usize>>,
}

impl SubsystemLayout {
    pub fn new(blocks: Vec<Range<usize>>, dim: usize) -> Result<Self> {
        if blocks.is_empty() {
            return Err(Error::Layout("no subsystems".into()));
        }
        let mut next = 0;
        for b in &blocks {
            if b.start != next || b.end <= b.start {
                return Err(Error::Layout(format!(
                    "block {b:?} is not contiguous after index {next}"
                )));
            }
            next = b.end;
        }
        if next != dim {
            return Err(Error::Layout(format!(
                "blocks cover {next} of {dim} coordinates"
            )));
        }
        Ok(Self { blocks })
    }

    /// One subsystem per coordinate.
    pub fn per_coordinate(dim: usize) -> Self {
        Self {
            blocks: (0..dim).map(|i| i..i + 1).collect(),
        }
    }

    /// Builds a layout from block sizes in declared order.
    pub fn from_sizes(sizes: &[usize]) -> Result<Self> {
        let mut start = 0;
        let mut blocks = Vec::with_capacity(sizes.len());
        for &s in sizes {
            blocks.push(start..start + s);
            start += s;
        }
        Self::new(blocks, start)
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.blocks.last().map_or(0, |b| b.end)
    }

    pub fn block(&self, i: usize) -> Range<usize> {
        self.blocks[i].clone()
    }

    pub fn blocks(&self) -> &[Range<usize>] {
        &self.blocks
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.blocks.iter().map(|b| b.len()).collect()
    }
}

/// Contract for a molecular model with configuration-dependent mass matrix.
///
/// The raw evaluation methods perform no domain checks; use [`eval_potential`],
/// [`eval_mass_matrix`] and [`eval_vector_field`] for checked access.
pub trait HamiltonianModel: Send + Sync + fmt::Debug {
    fn id(&self) -> String;

    fn dim(&self) -> usize;

    fn layout(&self) -> &SubsystemLayout;

    fn domain(&self) -> &[Interval];

    fn potential(&self, q: &[f64]) -> f64;

    /// Defaults to central differences with step 1e-6.
    fn potential_gradient(&self, q: &[f64], grad: &mut [f64]) {
        let h = 1e-6;
        let mut x = q.to_vec();
        for k in 0..q.len() {
            x[k] = q[k] + h;
            let vp = self.potential(&x);
            x[k] = q[k] - h;
            let vm = self.potential(&x);
            x[k] = q[k];
            grad[k] = (vp - vm) / (2.0 * h);
        }
    }

    fn mass_matrix(&self, q: &[f64]) -> DMatrix<f64>;

    fn mass_matrix_is_constant(&self) -> bool {
        false
    }

    /// Cross-subsystem structure of V as a sum of products, when the model declares one.
    fn potential_terms(&self) -> Option<&[ProductTerm]> {
        None
    }

    /// Length of one model time unit in seconds.
    fn seconds_per_time_unit(&self) -> f64 {
        1.0
    }
}

fn check_domain(model: &dyn HamiltonianModel, q: &[f64]) -> Result<()> {
    if q.len() != model.dim() {
        return Err(Error::Domain {
            q: q.to_vec(),
            index: q.len().min(model.dim()),
        });
    }
    for (k, (x, iv)) in q.iter().zip(model.domain()).enumerate() {
        if !iv.contains(*x) {
            return Err(Error::Domain {
                q: q.to_vec(),
                index: k,
            });
        }
    }
    Ok(())
}

pub fn eval_potential(model: &dyn HamiltonianModel, q: &[f64]) -> Result<f64> {
    check_domain(model, q)?;
    Ok(model.potential(q))
}

/// Mass matrix with symmetry and positive-definiteness checks.
pub fn eval_mass_matrix(model: &dyn HamiltonianModel, q: &[f64]) -> Result<DMatrix<f64>> {
    check_domain(model, q)?;
    let m = model.mass_matrix(q);
    let scale = m.amax().max(f64::MIN_POSITIVE);
    if (&m - m.transpose()).amax() > 1e-12 * scale {
        return Err(Error::ModelConsistency {
            q: q.to_vec(),
            reason: "mass matrix not symmetric".into(),
        });
    }
    if m.clone().cholesky().is_none() {
        return Err(Error::ModelConsistency {
            q: q.to_vec(),
            reason: "mass matrix not positive definite".into(),
        });
    }
    Ok(m)
}

/// Energy H(q, p).
pub fn hamiltonian(model: &dyn HamiltonianModel, q: &[f64], p: &[f64]) -> Result<f64> {
    let m = model.mass_matrix(q);
    let chol = m.cholesky().ok_or_else(|| Error::ModelConsistency {
        q: q.to_vec(),
        reason: "mass matrix not positive definite".into(),
    })?;
    let pv = DVector::from_column_slice(p);
    let v = chol.solve(&pv);
    Ok(0.5 * pv.dot(&v) + model.potential(q))
}

/// Writes f(z) = (∂H/∂p, −∂H/∂q) into `dq`, `dp`.
///
/// The q-derivative of the kinetic term uses ∂(M⁻¹) = −M⁻¹(∂M)M⁻¹ with ∂M from
/// central differences (step 1e-6) of the raw mass matrix.
pub fn vector_field_into(
    model: &dyn HamiltonianModel,
    q: &[f64],
    p: &[f64],
    dq: &mut [f64],
    dp: &mut [f64],
) -> Result<()> {
    let d = q.len();
    let m = model.mass_matrix(q);
    let chol = m.cholesky().ok_or_else(|| Error::ModelConsistency {
        q: q.to_vec(),
        reason: "mass matrix not positive definite".into(),
    })?;
    let v = chol.solve(&DVector::from_column_slice(p));
    dq.copy_from_slice(v.as_slice());
    model.potential_gradient(q, dp);
    for g in dp.iter_mut() {
        *g = -*g;
    }
    if !model.mass_matrix_is_constant() {
        let h = 1e-6;
        let mut x = q.to_vec();
        for k in 0..d {
            x[k] = q[k] + h;
            let mp = model.mass_matrix(&x);
            x[k] = q[k] - h;
            let mm = model.mass_matrix(&x);
            x[k] = q[k];
            let dm = (mp - mm) / (2.0 * h);
            // -∂/∂q_k ½ pᵀM⁻¹p = ½ vᵀ(∂_k M)v
            dp[k] += 0.5 * v.dot(&(&dm * &v));
        }
    }
    for (index, x) in dq.iter().chain(dp.iter()).enumerate() {
        if !x.is_finite() {
            let mut z = q.to_vec();
            z.extend_from_slice(p);
            return Err(Error::Evaluation { z, index });
        }
    }
    Ok(())
}

/// Checked Hamiltonian vector field at `z`, packed as `[q̇..., ṗ...]`.
pub fn eval_vector_field(model: &dyn HamiltonianModel, z: &PhaseState) -> Result<Vec<f64>> {
    check_domain(model, &z.q)?;
    let d = z.dim();
    let mut out = vec![0.0; 2 * d];
    let (dq, dp) = out.split_at_mut(d);
    vector_field_into(model, &z.q, &z.p, dq, dp)?;
    Ok(out)
}

/// The full Hamiltonian vector field as an integrable field.
#[derive(Clone, Copy, Debug)]
pub struct ModelField<'a> {
    pub model: &'a dyn HamiltonianModel,
}

impl crate::integrate::VectorField for ModelField<'_> {
    fn half_dim(&self) -> usize {
        self.model.dim()
    }

    fn eval(&self, z: &[f64], dz: &mut [f64]) -> Result<()> {
        let d = self.model.dim();
        let (dq, dp) = dz.split_at_mut(d);
        vector_field_into(self.model, &z[..d], &z[d..], dq, dp)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layout_validation() {
        assert!(SubsystemLayout::new(vec![0..1, 1..3], 3).is_ok());
        assert!(SubsystemLayout::new(vec![0..1, 2..3], 3).is_err());
        assert!(SubsystemLayout::new(vec![0..2], 3).is_err());
        assert!(SubsystemLayout::new(vec![], 0).is_err());
        let l = SubsystemLayout::from_sizes(&[1, 2]).unwrap();
        assert_eq!(l.sizes(), vec![1, 2]);
        assert_eq!(l.dim(), 3);
        assert_eq!(SubsystemLayout::per_coordinate(3).len(), 3);
    }

    #[test]
    fn phase_state_packing() {
        let z = PhaseState::new(vec![1.0, 2.0], vec![3.0, 4.0]);
        assert_eq!(PhaseState::from_slice(&z.to_vec()), z);
    }
}
