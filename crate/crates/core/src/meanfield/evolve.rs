//! Time evolution of subsystem densities under the mean-field equations, and
//! the full-space reference evolution on the product grid.
//!
//! Densities are transported along characteristics: every grid cell center
//! becomes a particle carrying the cell's mass, particles follow the flow, and
//! the result is deposited back onto the grid with cubic B-spline weights.
//! Mass is carried exactly, and the full-space reference uses the product of the
//! same particle sets, so both evolutions share quadrature nodes.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use tracing::{debug, warn};

use super::effective::{EffectiveHamiltonian, MeanFieldField, SubsystemStats};
use super::SubsystemDensity;
use crate::error::{Error, Result};
use crate::integrate::{flow_in_place, IntegratorSpec, Workspace};
use crate::model::{Boundary, HamiltonianModel, ModelField};
use crate::partition::{Axis, TensorPartition};

const CHUNK: usize = 4096;

/// How the other subsystems enter each subsystem's mean field over `[0, T]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Coupling {
    /// Mean fields built once from the initial densities.
    Frozen,
    /// Mean fields rebuilt from the current densities at the start of each of
    /// the given number of equal substeps (first order in the substep).
    CoEvolved(usize),
    /// As `CoEvolved`, but each substep uses densities predicted at its
    /// midpoint (second order in the substep).
    CoEvolvedMidpoint(usize),
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvolveOptions {
    pub spec: IntegratorSpec,
    pub coupling: Coupling,
    /// Effective-Hamiltonian table nodes per density grid cell and axis.
    pub table_refine: usize,
}

/// Point masses in one subsystem's phase space, each `[q..., p...]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ParticleCloud {
    pub subsystem: usize,
    pub half_dim: usize,
    pub points: Vec<Vec<f64>>,
    pub mass: Vec<f64>,
}

impl ParticleCloud {
    /// One particle per nonempty cell, at the cell center.
    pub fn from_density(u: &SubsystemDensity) -> Self {
        let vol = u.grid.cell_volume();
        let mut points = Vec::new();
        let mut mass = Vec::new();
        for (c, v) in u.values.iter().enumerate() {
            if *v > 0.0 {
                points.push(u.grid.cell_center(c));
                mass.push(v * vol);
            }
        }
        Self {
            subsystem: u.subsystem,
            half_dim: u.half_dim(),
            points,
            mass,
        }
    }

    pub fn total_mass(&self) -> f64 {
        self.mass.iter().sum()
    }

    /// Each particle as a point mass with its own momentum as the conditional mean.
    pub fn stats(&self) -> SubsystemStats {
        let d = self.half_dim;
        let total = self.total_mass();
        SubsystemStats {
            subsystem: self.subsystem,
            nodes: self.points.iter().map(|z| z[..d].to_vec()).collect(),
            mass: self.mass.iter().map(|m| m / total).collect(),
            mean_p: self
                .points
                .iter()
                .map(|z| DVector::from_column_slice(&z[d..]))
                .collect(),
            second_p: self
                .points
                .iter()
                .map(|z| {
                    let p = DVector::from_column_slice(&z[d..]);
                    &p * p.transpose()
                })
                .collect(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct EvolvedDensities {
    pub densities: Vec<SubsystemDensity>,
    pub clouds: Vec<ParticleCloud>,
}

/// Adds cubic B-spline weights of `mass` at `z` to `out` (per-cell masses).
///
/// Each axis spreads over the four nearest cell centers. Weights that fall
/// outside a non-periodic axis are assigned to the edge cell, so nothing is
/// lost; periodic axes wrap. The kernel is twice differentiable in `z`, which
/// keeps grid densities smooth functions of the particle positions.
pub fn deposit(grid: &TensorPartition, z: &[f64], mass: f64, out: &mut [f64]) {
    let d = grid.dim();
    let axes = grid.axes();
    let mut idx = vec![[0usize; 4]; d];
    let mut wts = vec![[0.0f64; 4]; d];
    for (k, a) in axes.iter().enumerate() {
        let n = a.cells as isize;
        let periodic = a.boundary == Boundary::Periodic;
        let mut x = z[k];
        if periodic {
            x = a.lo + (x - a.lo).rem_euclid(a.hi - a.lo);
        }
        let s = (x - a.lo) / a.width() - 0.5;
        let f = s.floor();
        let t = s - f;
        let t2 = t * t;
        let t3 = t2 * t;
        wts[k] = [
            (1.0 - t).powi(3) / 6.0,
            (3.0 * t3 - 6.0 * t2 + 4.0) / 6.0,
            (-3.0 * t3 + 3.0 * t2 + 3.0 * t + 1.0) / 6.0,
            t3 / 6.0,
        ];
        for (j, slot) in idx[k].iter_mut().enumerate() {
            let i = f as isize - 1 + j as isize;
            *slot = if periodic {
                i.rem_euclid(n) as usize
            } else {
                i.clamp(0, n - 1) as usize
            };
        }
    }
    for corner in 0..(1usize << (2 * d)) {
        let mut w = mass;
        let mut flat = 0;
        for (k, a) in axes.iter().enumerate() {
            let j = (corner >> (2 * (d - 1 - k))) & 3;
            w *= wts[k][j];
            flat = flat * a.cells + idx[k][j];
        }
        if w != 0.0 {
            out[flat] += w;
        }
    }
}

fn densities_from_clouds(
    initial: &[SubsystemDensity],
    clouds: &[ParticleCloud],
) -> Result<Vec<SubsystemDensity>> {
    initial
        .iter()
        .zip(clouds)
        .map(|(u, c)| {
            let mut masses = vec![0.0; u.grid.n_cells()];
            for (z, m) in c.points.iter().zip(&c.mass) {
                deposit(&u.grid, z, *m, &mut masses);
            }
            let vol = u.grid.cell_volume();
            SubsystemDensity::new(
                u.subsystem,
                u.grid.clone(),
                masses.into_iter().map(|m| m / vol).collect(),
            )
        })
        .collect()
}

fn table_grid(u: &SubsystemDensity, refine: usize) -> Result<TensorPartition> {
    let d = u.half_dim();
    let axes: Vec<Axis> = u.grid.axes()[..d]
        .iter()
        .map(|a| Axis {
            cells: a.cells * refine.max(1),
            ..*a
        })
        .collect();
    TensorPartition::new(axes)
}

fn build_fields(
    model: &dyn HamiltonianModel,
    clouds: &[ParticleCloud],
    tables: &[TensorPartition],
) -> Result<Vec<EffectiveHamiltonian>> {
    let stats: Vec<SubsystemStats> = clouds.iter().map(|c| c.stats()).collect();
    (0..clouds.len())
        .map(|i| {
            let others: Vec<&SubsystemStats> = stats.iter().filter(|s| s.subsystem != i).collect();
            EffectiveHamiltonian::build(model, i, &others, &tables[i])
        })
        .collect()
}

fn advance(
    clouds: &mut [ParticleCloud],
    fields: &[EffectiveHamiltonian],
    spec: &IntegratorSpec,
) -> Result<()> {
    for (c, h) in clouds.iter_mut().zip(fields) {
        let field = MeanFieldField { hamiltonian: h };
        c.points
            .par_iter_mut()
            .map_init(Workspace::default, |ws, z| {
                flow_in_place(&field, z, spec, h.bounds(), ws)
            })
            .collect::<Result<Vec<()>>>()?;
    }
    Ok(())
}

/// Transports each subsystem density by its mean-field flow up to `spec.t_final`.
///
/// For `t_final = 0` the input densities are returned as they are (deposition
/// would otherwise smooth them once).
/// `initial[i]` must belong to subsystem i of `model`'s layout.
pub fn evolve_mean_field(
    model: &dyn HamiltonianModel,
    initial: &[SubsystemDensity],
    opts: &EvolveOptions,
) -> Result<EvolvedDensities> {
    let spec = opts.spec;
    spec.validate()?;
    let layout = model.layout();
    if initial.len() != layout.len() {
        return Err(Error::Layout(format!(
            "{} densities for {} subsystems",
            initial.len(),
            layout.len()
        )));
    }
    for (i, u) in initial.iter().enumerate() {
        if u.subsystem != i || u.half_dim() != layout.block(i).len() {
            return Err(Error::Layout(format!(
                "density {i} does not match subsystem {i}"
            )));
        }
        if (u.mass() - 1.0).abs() > 1e-8 {
            return Err(Error::UndefinedProbability(format!(
                "density {i} has mass {}",
                u.mass()
            )));
        }
    }
    let tables: Vec<TensorPartition> = initial
        .iter()
        .map(|u| table_grid(u, opts.table_refine))
        .collect::<Result<_>>()?;
    let mut clouds: Vec<ParticleCloud> = initial.iter().map(ParticleCloud::from_density).collect();
    if spec.t_final != 0.0 {
        let segments = match opts.coupling {
            Coupling::Frozen => 1,
            Coupling::CoEvolved(s) | Coupling::CoEvolvedMidpoint(s) => s,
        };
        if segments == 0 || !spec.steps.is_multiple_of(segments) {
            return Err(Error::Config(format!(
                "{} integrator steps cannot be split into {segments} coupling substeps",
                spec.steps
            )));
        }
        let per = spec.steps / segments;
        let seg_spec = spec.with_time(spec.t_final / segments as f64, per);
        let frozen = match opts.coupling {
            Coupling::Frozen => Some(build_fields(model, &clouds, &tables)?),
            _ => None,
        };
        for s in 0..segments {
            let fields = match (&frozen, opts.coupling) {
                (Some(f), _) => f.clone(),
                (None, Coupling::CoEvolvedMidpoint(_)) => {
                    let start = build_fields(model, &clouds, &tables)?;
                    let mut mid = clouds.clone();
                    let half = seg_spec.with_time(0.5 * seg_spec.t_final, per.div_ceil(2));
                    advance(&mut mid, &start, &half)?;
                    build_fields(model, &mid, &tables)?
                }
                (None, _) => build_fields(model, &clouds, &tables)?,
            };
            advance(&mut clouds, &fields, &seg_spec)?;
            debug!(segment = s, "mean-field substep done");
        }
    }
    if spec.t_final == 0.0 {
        return Ok(EvolvedDensities {
            densities: initial.to_vec(),
            clouds,
        });
    }
    let densities = densities_from_clouds(initial, &clouds)?;
    for u in &densities {
        let drift = (u.mass() - 1.0).abs();
        if drift > 1e-6 {
            warn!(
                subsystem = u.subsystem,
                drift, "mass drift in mean-field evolution"
            );
        }
    }
    Ok(EvolvedDensities { densities, clouds })
}

/// Marginals after evolving the product density with the full dynamics.
///
/// Every combination of subsystem particles is traced in the full phase
/// space and its mass deposited onto each subsystem grid.
pub fn evolve_full_particles(
    model: &dyn HamiltonianModel,
    initial: &[SubsystemDensity],
    spec: &IntegratorSpec,
) -> Result<Vec<SubsystemDensity>> {
    spec.validate()?;
    let layout = model.layout();
    if initial.len() != layout.len() {
        return Err(Error::Layout(format!(
            "{} densities for {} subsystems",
            initial.len(),
            layout.len()
        )));
    }
    let clouds: Vec<ParticleCloud> = initial.iter().map(ParticleCloud::from_density).collect();
    let counts: Vec<usize> = clouds.iter().map(|c| c.points.len()).collect();
    let total: usize = counts.iter().product();
    let dim = model.dim();
    let field = ModelField { model };
    let sizes: Vec<usize> = initial.iter().map(|u| u.grid.n_cells()).collect();
    let zero = || {
        sizes
            .iter()
            .map(|&n| vec![0.0; n])
            .collect::<Vec<Vec<f64>>>()
    };
    // fixed chunks summed in order keep the result independent of scheduling
    let chunks: Vec<Vec<Vec<f64>>> = (0..total.div_ceil(CHUNK))
        .into_par_iter()
        .map(|chunk| {
            let mut acc = zero();
            let mut ws = Workspace::default();
            let mut z = vec![0.0; 2 * dim];
            let mut sub = Vec::new();
            for flat in chunk * CHUNK..((chunk + 1) * CHUNK).min(total) {
                let mut r = flat;
                let mut m = 1.0;
                for i in (0..clouds.len()).rev() {
                    let k = r % counts[i];
                    r /= counts[i];
                    let b = layout.block(i);
                    let d = b.len();
                    let pt = &clouds[i].points[k];
                    z[b.clone()].copy_from_slice(&pt[..d]);
                    z[dim + b.start..dim + b.end].copy_from_slice(&pt[d..]);
                    m *= clouds[i].mass[k];
                }
                flow_in_place(&field, &mut z, spec, model.domain(), &mut ws)?;
                for (i, u) in initial.iter().enumerate() {
                    let b = layout.block(i);
                    sub.clear();
                    sub.extend_from_slice(&z[b.clone()]);
                    sub.extend_from_slice(&z[dim + b.start..dim + b.end]);
                    deposit(&u.grid, &sub, m, &mut acc[i]);
                }
            }
            Ok(acc)
        })
        .collect::<Result<_>>()?;
    let mut masses = zero();
    for c in chunks {
        for (x, y) in masses.iter_mut().zip(c) {
            x.iter_mut().zip(y).for_each(|(s, t)| *s += t);
        }
    }
    initial
        .iter()
        .zip(masses)
        .map(|(u, m)| {
            let vol = u.grid.cell_volume();
            SubsystemDensity::new(
                u.subsystem,
                u.grid.clone(),
                m.into_iter().map(|x| x / vol).collect(),
            )
        })
        .collect()
}

/// `∫ H Π u_i` over the product of the particle clouds.
pub fn total_energy(model: &dyn HamiltonianModel, clouds: &[ParticleCloud]) -> Result<f64> {
    let layout = model.layout();
    if clouds.len() != layout.len() {
        return Err(Error::Layout(
            "one particle cloud per subsystem required".into(),
        ));
    }
    let dim = model.dim();
    let counts: Vec<usize> = clouds.iter().map(|c| c.points.len()).collect();
    let total: usize = counts.iter().product();
    let norms: Vec<f64> = clouds.iter().map(|c| c.total_mass()).collect();
    let constant_g: Option<DMatrix<f64>> = if model.mass_matrix_is_constant() {
        Some(
            model
                .mass_matrix(&vec![0.0; dim])
                .try_inverse()
                .ok_or(Error::EffectiveModel { node: 0 })?,
        )
    } else {
        None
    };
    let energy_of = |flat: usize| -> Result<f64> {
        let mut r = flat;
        let mut m = 1.0;
        let mut q = vec![0.0; dim];
        let mut p = DVector::zeros(dim);
        for i in (0..clouds.len()).rev() {
            let k = r % counts[i];
            r /= counts[i];
            let b = layout.block(i);
            let d = b.len();
            let pt = &clouds[i].points[k];
            q[b.clone()].copy_from_slice(&pt[..d]);
            p.rows_mut(b.start, d).copy_from_slice(&pt[d..]);
            m *= clouds[i].mass[k] / norms[i];
        }
        let kinetic = match &constant_g {
            Some(g) => 0.5 * p.dot(&(g * &p)),
            None => {
                let chol = model
                    .mass_matrix(&q)
                    .cholesky()
                    .ok_or(Error::ModelConsistency {
                        q: q.clone(),
                        reason: "mass matrix not positive definite".into(),
                    })?;
                0.5 * p.dot(&chol.solve(&p))
            }
        };
        Ok(m * (kinetic + model.potential(&q)))
    };
    let partial: Vec<f64> = (0..total.div_ceil(CHUNK))
        .into_par_iter()
        .map(|chunk| {
            (chunk * CHUNK..((chunk + 1) * CHUNK).min(total))
                .map(energy_of)
                .sum::<Result<f64>>()
        })
        .collect::<Result<_>>()?;
    Ok(partial.iter().sum())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{DoubleWell2D, DoubleWellParams, Interval};

    fn gaussian_density(i: usize, center: f64, cells: usize) -> SubsystemDensity {
        let dom = [
            Interval::new(-2.0, 2.0, Boundary::Reflecting),
            Interval::new(-4.0, 4.0, Boundary::UnboundedTruncated),
        ];
        let grid = TensorPartition::from_domain(&dom, &[cells, cells]).unwrap();
        SubsystemDensity::from_fn(i, grid, |z| {
            (-((z[0] - center) / 0.3).powi(2) / 2.0 - z[1] * z[1] / 2.0).exp()
        })
        .unwrap()
    }

    #[test]
    fn deposit_conserves_mass_everywhere() {
        let dom = [
            Interval::new(0.0, 1.0, Boundary::Reflecting),
            Interval::new(0.0, 1.0, Boundary::Periodic),
        ];
        let grid = TensorPartition::from_domain(&dom, &[5, 4]).unwrap();
        let mut out = vec![0.0; 20];
        for z in [[0.01, 0.99], [0.5, 0.5], [1.3, -0.2], [-7.0, 3.3]] {
            deposit(&grid, &z, 0.25, &mut out);
        }
        assert!((out.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        assert!(out.iter().all(|&x| x >= 0.0));
    }

    #[test]
    fn zero_time_leaves_densities_unchanged() {
        let model = DoubleWell2D::default();
        let u = vec![gaussian_density(0, 0.5, 12), gaussian_density(1, -0.5, 12)];
        let opts = EvolveOptions {
            spec: IntegratorSpec::rk4(4, 0.0),
            coupling: Coupling::CoEvolved(2),
            table_refine: 2,
        };
        let out = evolve_mean_field(&model, &u, &opts).unwrap();
        for (a, b) in out.densities.iter().zip(&u) {
            for (x, y) in a.values.iter().zip(&b.values) {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn decoupled_mean_field_matches_full_evolution() {
        let model = DoubleWell2D::new(DoubleWellParams {
            epsilon: 0.0,
            ..Default::default()
        });
        let u = vec![gaussian_density(0, 0.5, 12), gaussian_density(1, -0.5, 12)];
        let spec = IntegratorSpec::rk4(20, 1.0);
        let opts = EvolveOptions {
            spec,
            coupling: Coupling::CoEvolved(4),
            table_refine: 2,
        };
        let mf = evolve_mean_field(&model, &u, &opts).unwrap();
        let full = evolve_full_particles(&model, &u, &spec).unwrap();
        for (a, b) in mf.densities.iter().zip(&full) {
            assert!((a.mass() - 1.0).abs() < 1e-12 && (b.mass() - 1.0).abs() < 1e-12);
            let err: f64 = a
                .values
                .iter()
                .zip(&b.values)
                .map(|(x, y)| (x - y).abs())
                .sum::<f64>()
                * a.grid.cell_volume();
            assert!(err < 1e-8, "{err}");
        }
    }
}
