//! Mean-field approximation of the transfer operator.
//!
//! Each subsystem is transported by the Hamiltonian flow of its mean-field
//! Hamiltonian, obtained by averaging the full Hamiltonian over the current
//! densities of all other subsystems. Spatial component maps with the other
//! factors held fixed are linear and are discretized by Ulam's method; a
//! Gauss–Seidel sweep over subsystems finds a self-consistent set of factors.

mod component;
mod effective;
mod evolve;
mod momentum;

pub use component::{
    perron_vector, product_eigenfunction, product_eigenvalue, MeanFieldSystem, RoothaanOptions,
    RoothaanResult, SweepDiagnostics,
};
pub use effective::{
    mean_field_vector_field, EffectiveHamiltonian, MeanFieldField, SubsystemStats,
};
pub use evolve::{
    deposit, evolve_full_particles, evolve_mean_field, total_energy, Coupling, EvolveOptions,
    EvolvedDensities, ParticleCloud,
};
pub use momentum::MomentumLaw;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::partition::TensorPartition;

/// A function of one subsystem's configuration, stored as per-cell values.
///
/// For densities the values are cell masses summing to one; eigenfunction
/// factors carry signed values.
#[derive(Clone, Debug, PartialEq)]
pub struct SpatialFactor {
    pub subsystem: usize,
    pub part: TensorPartition,
    pub values: Vec<f64>,
}

impl SpatialFactor {
    pub fn new(subsystem: usize, part: TensorPartition, values: Vec<f64>) -> Result<Self> {
        if values.len() != part.n_cells() {
            return Err(Error::Layout(format!(
                "{} values for a partition of {} cells",
                values.len(),
                part.n_cells()
            )));
        }
        Ok(Self {
            subsystem,
            part,
            values,
        })
    }

    pub fn mass(&self) -> f64 {
        self.values.iter().sum()
    }

    /// Rescales to unit mass; fails for negative entries or zero mass.
    pub fn normalized(mut self) -> Result<Self> {
        let m = self.mass();
        if self.values.iter().any(|&v| v < 0.0) || !(m > 0.0) {
            return Err(Error::UndefinedProbability(format!(
                "factor of subsystem {} is not a density",
                self.subsystem
            )));
        }
        self.values.iter_mut().for_each(|v| *v /= m);
        Ok(self)
    }
}

/// Sums per-cell values over every axis outside `keep`.
pub fn marginalize(
    part: &TensorPartition,
    values: &[f64],
    keep: std::ops::Range<usize>,
) -> Result<Vec<f64>> {
    if values.len() != part.n_cells() || keep.end > part.dim() {
        return Err(Error::Layout(
            "marginal request does not match the partition".into(),
        ));
    }
    let shape = part.shape();
    let out_len: usize = shape[keep.clone()].iter().product();
    let mut out = vec![0.0; out_len];
    for (flat, v) in values.iter().enumerate() {
        let idx = part.multi_index(flat);
        let j = idx[keep.clone()]
            .iter()
            .zip(&shape[keep.clone()])
            .fold(0, |acc, (i, n)| acc * n + i);
        out[j] += v;
    }
    Ok(out)
}

/// Density of one subsystem on a (q_i, p_i) grid; values are densities per unit volume.
#[derive(Clone, Debug, PartialEq)]
pub struct SubsystemDensity {
    pub subsystem: usize,
    /// Axes: the d_i configuration axes followed by the d_i momentum axes.
    pub grid: TensorPartition,
    pub values: Vec<f64>,
}

impl SubsystemDensity {
    pub fn new(subsystem: usize, grid: TensorPartition, values: Vec<f64>) -> Result<Self> {
        if !grid.dim().is_multiple_of(2) || values.len() != grid.n_cells() {
            return Err(Error::Layout(
                "density grid must have 2·d_i axes and one value per cell".into(),
            ));
        }
        if values.iter().any(|&v| v < 0.0 || !v.is_finite()) {
            return Err(Error::UndefinedProbability(
                "density has negative or non-finite values".into(),
            ));
        }
        Ok(Self {
            subsystem,
            grid,
            values,
        })
    }

    /// Cell averages of `f`, evaluated with a midpoint rule, normalized to unit mass.
    pub fn from_fn(
        subsystem: usize,
        grid: TensorPartition,
        f: impl Fn(&[f64]) -> f64,
    ) -> Result<Self> {
        let values: Vec<f64> = (0..grid.n_cells())
            .map(|c| f(&grid.cell_center(c)).max(0.0))
            .collect();
        let vol = grid.cell_volume();
        let mass: f64 = values.iter().sum::<f64>() * vol;
        if !(mass > 0.0) {
            return Err(Error::UndefinedProbability(
                "initial density has zero mass".into(),
            ));
        }
        Self::new(
            subsystem,
            grid,
            values.into_iter().map(|v| v / mass).collect(),
        )
    }

    pub fn half_dim(&self) -> usize {
        self.grid.dim() / 2
    }

    pub fn mass(&self) -> f64 {
        self.values.iter().sum::<f64>() * self.grid.cell_volume()
    }

    /// Spatial marginal as cell masses on the configuration grid.
    pub fn spatial_marginal(&self) -> Result<SpatialFactor> {
        let d = self.half_dim();
        let vol = self.grid.cell_volume();
        let masses: Vec<f64> = self.values.iter().map(|v| v * vol).collect();
        let w = marginalize(&self.grid, &masses, 0..d)?;
        SpatialFactor::new(self.subsystem, self.grid.sub(0..d)?, w)
    }

    /// Point-mass summary at configuration cell centers with conditional momentum moments.
    pub fn stats(&self) -> Result<SubsystemStats> {
        let d = self.half_dim();
        let qgrid = self.grid.sub(0..d)?;
        let pgrid = self.grid.sub(d..2 * d)?;
        let nq = qgrid.n_cells();
        let np = pgrid.n_cells();
        let vol = self.grid.cell_volume();
        let total = self.mass();
        let mut stats = SubsystemStats {
            subsystem: self.subsystem,
            nodes: (0..nq).map(|c| qgrid.cell_center(c)).collect(),
            mass: vec![0.0; nq],
            mean_p: vec![DVector::zeros(d); nq],
            second_p: vec![DMatrix::zeros(d, d); nq],
        };
        let pcenters: Vec<DVector<f64>> = (0..np)
            .map(|c| DVector::from_vec(pgrid.cell_center(c)))
            .collect();
        for iq in 0..nq {
            let mut m = 0.0;
            let mut mu = DVector::zeros(d);
            let mut s = DMatrix::zeros(d, d);
            for (ip, p) in pcenters.iter().enumerate() {
                let w = self.values[iq * np + ip] * vol / total;
                if w > 0.0 {
                    m += w;
                    mu += w * p;
                    s += w * p * p.transpose();
                }
            }
            if m > 0.0 {
                stats.mean_p[iq] = mu / m;
                stats.second_p[iq] = s / m;
            }
            stats.mass[iq] = m;
        }
        Ok(stats)
    }
}

/// Sums a full-space density (per-cell masses on a product grid) down to one subsystem.
pub fn reduce_marginal(
    grid: &TensorPartition,
    masses: &[f64],
    blocks: &[std::ops::Range<usize>],
    i: usize,
) -> Result<Vec<f64>> {
    // full grid axes: q blocks in layout order followed by p blocks in layout order
    let d: usize = blocks.iter().map(|b| b.len()).sum();
    if grid.dim() != 2 * d {
        return Err(Error::Layout(
            "full density grid must cover all of phase space".into(),
        ));
    }
    let b = blocks
        .get(i)
        .ok_or_else(|| Error::Layout(format!("no subsystem {i}")))?;
    let shape = grid.shape();
    let keep: Vec<usize> = b.clone().chain(b.clone().map(|k| d + k)).collect();
    let out_len: usize = keep.iter().map(|&k| shape[k]).product();
    let mut out = vec![0.0; out_len];
    for (flat, v) in masses.iter().enumerate() {
        let idx = grid.multi_index(flat);
        let j = keep.iter().fold(0, |acc, &k| acc * shape[k] + idx[k]);
        out[j] += v;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Boundary, Interval};

    fn grid(n: &[usize]) -> TensorPartition {
        let dom: Vec<Interval> = n
            .iter()
            .map(|_| Interval::new(-1.0, 1.0, Boundary::Reflecting))
            .collect();
        TensorPartition::from_domain(&dom, n).unwrap()
    }

    #[test]
    fn marginal_of_product_is_the_factor() {
        let g = grid(&[3, 4]);
        let a = [0.2, 0.3, 0.5];
        let b = [0.1, 0.2, 0.3, 0.4];
        let prod: Vec<f64> = a
            .iter()
            .flat_map(|x| b.iter().map(move |y| x * y))
            .collect();
        let m0 = marginalize(&g, &prod, 0..1).unwrap();
        let m1 = marginalize(&g, &prod, 1..2).unwrap();
        for (x, y) in m0.iter().zip(&a) {
            assert!((x - y).abs() < 1e-15);
        }
        for (x, y) in m1.iter().zip(&b) {
            assert!((x - y).abs() < 1e-15);
        }
    }

    #[test]
    fn uniform_density_has_uniform_marginal() {
        let g = grid(&[4, 4, 4, 4]);
        let n = g.n_cells();
        let u = vec![1.0 / n as f64; n];
        let m = reduce_marginal(&g, &u, &[0..1, 1..2], 1).unwrap();
        assert_eq!(m.len(), 16);
        for x in m {
            assert!((x - 1.0 / 16.0).abs() < 1e-15);
        }
    }

    #[test]
    fn density_stats_recover_moments() {
        let g = grid(&[2, 64]);
        let dom = [
            Interval::new(-1.0, 1.0, Boundary::Reflecting),
            Interval::new(-6.0, 6.0, Boundary::UnboundedTruncated),
        ];
        let g = TensorPartition::from_domain(&dom, &g.shape()).unwrap();
        let u = SubsystemDensity::from_fn(0, g, |z| {
            (-0.5 * (z[1] - 0.5).powi(2)).exp() * if z[0] < 0.0 { 1.0 } else { 3.0 }
        })
        .unwrap();
        assert!((u.mass() - 1.0).abs() < 1e-12);
        let s = u.stats().unwrap();
        assert!((s.mass[0] - 0.25).abs() < 1e-12 && (s.mass[1] - 0.75).abs() < 1e-12);
        assert!((s.mean_p[1][0] - 0.5).abs() < 1e-6);
        // E[p²] = σ² + μ²; point sampling of a Gaussian is spectrally accurate
        assert!((s.second_p[0][(0, 0)] - 1.25).abs() < 1e-6);
    }
}
