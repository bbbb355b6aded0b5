//! Ulam discretization of the spatial mean-field component maps and the
//! self-consistent (Roothaan-type) iteration over subsystems.

use nalgebra::DVector;
use tracing::{debug, info, warn};

use super::effective::{EffectiveHamiltonian, MeanFieldField, SubsystemStats};
use super::momentum::MomentumLaw;
use super::{marginalize, SpatialFactor};
use crate::error::{Error, Result};
use crate::integrate::IntegratorSpec;
use crate::partition::{Axis, TensorPartition};
use crate::rng::{context_component, RngSpec};
use crate::sampling::{cell_masses, sample_uniform_in_box, CanonicalEnsemble};
use crate::spectral::{invariant_vector, EigsOptions};
use crate::ulam::{assemble_with, trajectory_endpoint, MatrixMeta, StochasticMatrix};

/// Everything needed to build mean-field component maps for one model,
/// ensemble and partition.
#[derive(Clone, Debug)]
pub struct MeanFieldSystem {
    pub ens: CanonicalEnsemble,
    pub full: TensorPartition,
    pub parts: Vec<TensorPartition>,
    pub laws: Vec<MomentumLaw>,
    /// Effective-Hamiltonian table nodes per partition cell and axis.
    pub table_refine: usize,
}

impl MeanFieldSystem {
    /// `full` must be a product of per-subsystem partitions in layout order.
    pub fn new(ens: CanonicalEnsemble, full: TensorPartition, table_refine: usize) -> Result<Self> {
        let model = ens.model.as_ref();
        if full.dim() != model.dim() {
            return Err(Error::Partition(format!(
                "{}-dimensional partition for a {}-dimensional model",
                full.dim(),
                model.dim()
            )));
        }
        let layout = model.layout();
        let mut parts = Vec::with_capacity(layout.len());
        let mut laws = Vec::with_capacity(layout.len());
        for i in 0..layout.len() {
            parts.push(full.sub(layout.block(i))?);
            laws.push(MomentumLaw::new(&ens, &full, i)?);
        }
        Ok(Self {
            ens,
            full,
            parts,
            laws,
            table_refine: table_refine.max(1),
        })
    }

    pub fn n_subsystems(&self) -> usize {
        self.parts.len()
    }

    /// Spatial marginals of the canonical cell masses on the full partition.
    pub fn initial_factors(&self, sub: usize) -> Result<Vec<SpatialFactor>> {
        let masses = cell_masses(&self.ens, &self.full, sub)?;
        let layout = self.ens.model.layout();
        (0..self.n_subsystems())
            .map(|i| {
                SpatialFactor::new(
                    i,
                    self.parts[i].clone(),
                    marginalize(&self.full, &masses, layout.block(i))?,
                )
            })
            .collect()
    }

    /// Phase-space lift `w(q)·h̄(q, p)` of a density factor, as point masses at
    /// cell centers with zero mean momentum.
    pub fn lift(&self, factor: &SpatialFactor) -> Result<SubsystemStats> {
        let i = factor.subsystem;
        if i >= self.n_subsystems() || !factor.part.same_grid(&self.parts[i]) {
            return Err(Error::Layout(format!(
                "factor does not live on the partition of subsystem {i}"
            )));
        }
        let f = factor.clone().normalized()?;
        let d = f.part.dim();
        Ok(SubsystemStats {
            subsystem: i,
            nodes: (0..f.part.n_cells())
                .map(|c| f.part.cell_center(c))
                .collect(),
            mass: f.values,
            mean_p: vec![DVector::zeros(d); f.part.n_cells()],
            second_p: (0..f.part.n_cells())
                .map(|c| self.laws[i].second_moment(c).clone())
                .collect(),
        })
    }

    pub fn table_grid(&self, i: usize) -> Result<TensorPartition> {
        let axes: Vec<Axis> = self.parts[i]
            .axes()
            .iter()
            .map(|a| Axis {
                cells: a.cells * self.table_refine,
                ..*a
            })
            .collect();
        TensorPartition::new(axes)
    }

    /// Mean-field Hamiltonian of subsystem `i` with the other factors frozen;
    /// `factors[i]` is ignored.
    pub fn effective_hamiltonian(
        &self,
        i: usize,
        factors: &[SpatialFactor],
    ) -> Result<EffectiveHamiltonian> {
        if factors.len() != self.n_subsystems() {
            return Err(Error::Layout(format!(
                "{} factors for {} subsystems",
                factors.len(),
                self.n_subsystems()
            )));
        }
        let stats: Vec<SubsystemStats> = factors
            .iter()
            .filter(|f| f.subsystem != i)
            .map(|f| self.lift(f))
            .collect::<Result<_>>()?;
        let refs: Vec<&SubsystemStats> = stats.iter().collect();
        EffectiveHamiltonian::build(self.ens.model.as_ref(), i, &refs, &self.table_grid(i)?)
    }

    /// Ulam matrix of the component map of subsystem `i` for frozen other factors.
    pub fn assemble_component(
        &self,
        i: usize,
        factors: &[SpatialFactor],
        samples: usize,
        spec: &IntegratorSpec,
        rng: &RngSpec,
    ) -> Result<StochasticMatrix> {
        spec.validate()?;
        let h = self.effective_hamiltonian(i, factors)?;
        self.assemble_with_hamiltonian(&h, samples, spec, rng)
    }

    pub fn assemble_with_hamiltonian(
        &self,
        h: &EffectiveHamiltonian,
        samples: usize,
        spec: &IntegratorSpec,
        rng: &RngSpec,
    ) -> Result<StochasticMatrix> {
        let i = h.subsystem;
        let part = &self.parts[i];
        let field = MeanFieldField { hamiltonian: h };
        let meta = MatrixMeta {
            model_id: format!("{}#mf{i}", self.ens.model.id()),
            grid: part.shape(),
            samples_per_cell: samples,
            t_final: spec.t_final,
            seed: rng.seed,
            convention: format!("{:?}", self.ens.convention),
        };
        let law = &self.laws[i];
        assemble_with(
            part,
            samples,
            rng,
            context_component(i),
            meta,
            |cell, stream, ws| {
                let q = sample_uniform_in_box(cell, stream);
                let p = law.sample(&self.ens, &q, stream)?;
                trajectory_endpoint(&field, h.bounds(), spec, q, p, ws)
            },
        )
    }

    /// Gauss–Seidel self-consistent iteration starting from `init`.
    pub fn roothaan(
        &self,
        init: Vec<SpatialFactor>,
        opts: &RoothaanOptions,
        rng: &RngSpec,
    ) -> Result<RoothaanResult> {
        let n = self.n_subsystems();
        let order = match &opts.order {
            Some(o) => {
                let mut seen = vec![false; n];
                if o.len() != n
                    || o.iter()
                        .any(|&i| i >= n || std::mem::replace(&mut seen[i], true))
                {
                    return Err(Error::Config(format!(
                        "sweep order {o:?} is not a permutation of 0..{n}"
                    )));
                }
                o.clone()
            }
            None => (0..n).collect(),
        };
        if opts.iters == 0 {
            return Err(Error::Config("at least one sweep is required".into()));
        }
        let mut factors: Vec<SpatialFactor> = init
            .into_iter()
            .map(|f| f.normalized())
            .collect::<Result<_>>()?;
        info!(
            ?order,
            iters = opts.iters,
            "starting self-consistent sweeps"
        );
        let mut diagnostics = Vec::with_capacity(opts.iters);
        let mut oscillating = false;
        for sweep in 0..opts.iters {
            let mut changes = vec![0.0; n];
            for &i in &order {
                let m = self.assemble_component(i, &factors, opts.samples, &opts.spec, rng)?;
                let w = perron_vector(&m, Some(&factors[i].values))?;
                changes[i] = w
                    .iter()
                    .zip(&factors[i].values)
                    .map(|(a, b)| (a - b).abs())
                    .sum();
                factors[i].values = w;
            }
            debug!(sweep, ?changes, "sweep finished");
            diagnostics.push(SweepDiagnostics {
                sweep,
                order: order.clone(),
                changes,
                factors: factors.iter().map(|f| f.values.clone()).collect(),
            });
            let worst: Vec<f64> = diagnostics
                .iter()
                .map(|d| d.changes.iter().cloned().fold(0.0, f64::max))
                .collect();
            if worst.len() >= 4 && worst[worst.len() - 4..].windows(2).all(|w| w[1] > w[0]) {
                if !oscillating {
                    warn!(
                        sweep,
                        "factor changes increased over three sweeps; iteration may not converge"
                    );
                }
                oscillating = true;
            }
        }
        let mut matrices = Vec::with_capacity(n);
        let mut residuals = Vec::with_capacity(n);
        for i in 0..n {
            let m = self.assemble_component(i, &factors, opts.samples, &opts.spec, rng)?;
            let mut y = vec![0.0; m.n()];
            m.matvec(&factors[i].values, &mut y);
            residuals.push(
                y.iter()
                    .zip(&factors[i].values)
                    .map(|(a, b)| (a - b).abs())
                    .sum(),
            );
            matrices.push(m);
        }
        info!(?residuals, "fixed-point residuals");
        Ok(RoothaanResult {
            factors,
            matrices,
            diagnostics,
            residuals,
            oscillating,
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RoothaanOptions {
    pub iters: usize,
    pub samples: usize,
    pub spec: IntegratorSpec,
    /// Subsystem update order within a sweep; layout order when `None`.
    pub order: Option<Vec<usize>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepDiagnostics {
    pub sweep: usize,
    pub order: Vec<usize>,
    /// ‖w_i^{new} − w_i^{old}‖₁ per subsystem.
    pub changes: Vec<f64>,
    /// Factor values at the end of the sweep.
    pub factors: Vec<Vec<f64>>,
}

#[derive(Clone, Debug)]
pub struct RoothaanResult {
    pub factors: Vec<SpatialFactor>,
    /// Component matrices re-assembled with the final factors.
    pub matrices: Vec<StochasticMatrix>,
    pub diagnostics: Vec<SweepDiagnostics>,
    /// ‖S_i w_i − w_i‖₁ per subsystem at the final factors.
    pub residuals: Vec<f64>,
    pub oscillating: bool,
}

/// Unit-mass fixed point of a column-stochastic matrix by power iteration
/// (tolerance 1e-10 in the 1-norm, at most 10⁵ steps), falling back to the
/// Krylov solver for periodic or very slowly mixing chains.
pub fn perron_vector(p: &StochasticMatrix, start: Option<&[f64]>) -> Result<Vec<f64>> {
    let n = p.n();
    let mut x = match start {
        Some(s) if s.len() == n && s.iter().all(|&v| v >= 0.0) && s.iter().sum::<f64>() > 0.0 => {
            let t: f64 = s.iter().sum();
            s.iter().map(|v| v / t).collect()
        }
        _ => vec![1.0 / n as f64; n],
    };
    let mut y = vec![0.0; n];
    for it in 0..100_000 {
        p.matvec(&x, &mut y);
        let t: f64 = y.iter().sum();
        y.iter_mut().for_each(|v| *v /= t);
        let delta: f64 = x.iter().zip(&y).map(|(a, b)| (a - b).abs()).sum();
        std::mem::swap(&mut x, &mut y);
        if delta <= 1e-10 {
            debug!(iterations = it + 1, "power iteration converged");
            return Ok(x);
        }
    }
    warn!("power iteration did not converge; using the Krylov solver");
    invariant_vector(p, &EigsOptions::default())
}

/// Outer product of per-subsystem factors in layout order, on the product partition.
pub fn product_eigenfunction(factors: &[&SpatialFactor]) -> Result<(TensorPartition, Vec<f64>)> {
    for (k, f) in factors.iter().enumerate() {
        if f.subsystem != k {
            return Err(Error::Layout(format!(
                "factor {k} belongs to subsystem {}",
                f.subsystem
            )));
        }
        if f.values.len() != f.part.n_cells() {
            return Err(Error::Layout(format!(
                "factor {k} does not match its partition"
            )));
        }
    }
    let parts: Vec<TensorPartition> = factors.iter().map(|f| f.part.clone()).collect();
    let grid = TensorPartition::product(&parts)?;
    let mut values = vec![1.0];
    for f in factors {
        values = values
            .iter()
            .flat_map(|a| f.values.iter().map(move |b| a * b))
            .collect();
    }
    Ok((grid, values))
}

/// Eigenvalue estimate of a product eigenfunction.
pub fn product_eigenvalue(component_values: &[f64]) -> f64 {
    component_values.iter().product()
}
