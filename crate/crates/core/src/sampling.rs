//! Canonical densities and conditional momentum sampling.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{eval_mass_matrix, eval_potential, HamiltonianModel};
use crate::partition::{Cell, TensorPartition};
use crate::units::beta_from_kelvin;

/// Which spatial weight stands in for the q-marginal of `exp(−βH)`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MarginalConvention {
    /// `exp(−βV(q))`.
    #[default]
    Boltzmann,
    /// `exp(−βV(q))·det M(q)^{1/2}`, the true marginal when M depends on q.
    ExactMarginal,
}

impl std::str::FromStr for MarginalConvention {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "boltzmann" => Ok(Self::Boltzmann),
            "exact-marginal" => Ok(Self::ExactMarginal),
            other => Err(Error::Config(format!(
                "unknown marginal convention {other:?}"
            ))),
        }
    }
}

/// Canonical ensemble `h ∝ exp(−βH)` of a model.
#[derive(Clone, Debug)]
pub struct CanonicalEnsemble {
    beta: f64,
    pub model: Arc<dyn HamiltonianModel>,
    pub convention: MarginalConvention,
}

impl CanonicalEnsemble {
    pub fn new(
        model: Arc<dyn HamiltonianModel>,
        beta: f64,
        convention: MarginalConvention,
    ) -> Result<Self> {
        if !(beta > 0.0 && beta.is_finite()) {
            return Err(Error::Config(format!(
                "beta must be positive and finite, got {beta}"
            )));
        }
        Ok(Self {
            beta,
            model,
            convention,
        })
    }

    pub fn at_kelvin(
        model: Arc<dyn HamiltonianModel>,
        kelvin: f64,
        convention: MarginalConvention,
    ) -> Result<Self> {
        Self::new(model, beta_from_kelvin(kelvin), convention)
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    /// Unnormalized spatial weight at `q` under the configured convention.
    pub fn position_weight(&self, q: &[f64]) -> Result<f64> {
        boltzmann_position_density(self, q)
    }
}

/// Draws p ~ N(0, M(q)/β) via the Cholesky factor of M(q).
pub fn sample_conditional_momentum<R: Rng + ?Sized>(
    ens: &CanonicalEnsemble,
    q: &[f64],
    rng: &mut R,
) -> Result<Vec<f64>> {
    let m = eval_mass_matrix(ens.model.as_ref(), q)?;
    sample_gaussian_momentum(&m, ens.beta, rng).ok_or_else(|| Error::ModelConsistency {
        q: q.to_vec(),
        reason: "mass matrix not positive definite".into(),
    })
}

/// p = L ξ / √β with M = L Lᵀ and ξ standard normal; `None` if M is not SPD.
pub fn sample_gaussian_momentum<R: Rng + ?Sized>(
    m: &DMatrix<f64>,
    beta: f64,
    rng: &mut R,
) -> Option<Vec<f64>> {
    let l = m.clone().cholesky()?.unpack();
    let xi = DVector::from_iterator(
        m.nrows(),
        (0..m.nrows()).map(|_| rng.sample::<f64, _>(StandardNormal)),
    );
    let p = l * xi / beta.sqrt();
    Some(p.as_slice().to_vec())
}

pub fn sample_uniform_in_box<R: Rng + ?Sized>(cell: &Cell, rng: &mut R) -> Vec<f64> {
    cell.lo
        .iter()
        .zip(&cell.hi)
        .map(|(&a, &b)| {
            let u: f64 = rng.random();
            // keeps the draw inside [a, b] and returns a for a degenerate box
            (a + u * (b - a)).min(b)
        })
        .collect()
}

pub fn boltzmann_position_density(ens: &CanonicalEnsemble, q: &[f64]) -> Result<f64> {
    let v = eval_potential(ens.model.as_ref(), q)?;
    let w = (-ens.beta * v).exp();
    match ens.convention {
        MarginalConvention::Boltzmann => Ok(w),
        MarginalConvention::ExactMarginal => {
            let m = eval_mass_matrix(ens.model.as_ref(), q)?;
            Ok(w * m.determinant().sqrt())
        }
    }
}

/// Per-cell spatial masses normalized to sum to one, using a midpoint rule
/// with `sub` points per axis in every cell.
///
/// Weights are evaluated relative to the smallest potential seen so large β
/// does not underflow.
pub fn cell_masses(
    ens: &CanonicalEnsemble,
    part: &TensorPartition,
    sub: usize,
) -> Result<Vec<f64>> {
    let sub = sub.max(1);
    let d = part.dim();
    let per_cell = sub.pow(d as u32);
    let mut logw = Vec::with_capacity(part.n_cells() * per_cell);
    for c in 0..part.n_cells() {
        let cell = part.cell(c);
        for s in 0..per_cell {
            let mut q = vec![0.0; d];
            let mut r = s;
            for k in (0..d).rev() {
                let i = r % sub;
                r /= sub;
                q[k] = cell.lo[k] + (i as f64 + 0.5) * (cell.hi[k] - cell.lo[k]) / sub as f64;
            }
            let v = eval_potential(ens.model.as_ref(), &q)?;
            let mut lw = -ens.beta * v;
            if ens.convention == MarginalConvention::ExactMarginal {
                lw += 0.5 * eval_mass_matrix(ens.model.as_ref(), &q)?.determinant().ln();
            }
            logw.push(lw);
        }
    }
    let max = logw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut masses: Vec<f64> = logw
        .chunks(per_cell)
        .map(|ch| ch.iter().map(|l| (l - max).exp()).sum::<f64>())
        .collect();
    let total: f64 = masses.iter().sum();
    if !(total > 0.0 && total.is_finite()) {
        return Err(Error::UndefinedProbability(
            "spatial weights vanish on the partition".into(),
        ));
    }
    masses.iter_mut().for_each(|m| *m /= total);
    Ok(masses)
}
