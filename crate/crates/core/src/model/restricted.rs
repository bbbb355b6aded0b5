use std::sync::Arc;

use nalgebra::DMatrix;

use super::{HamiltonianModel, Interval, SubsystemLayout};
use crate::error::{Error, Result};

/// One subsystem of a model with all other coordinates pinned at an anchor.
///
/// For a model whose subsystems do not interact this is exactly the
/// subsystem's own dynamics (up to an additive constant in V).
#[derive(Debug)]
pub struct Restricted {
    inner: Arc<dyn HamiltonianModel>,
    block: std::ops::Range<usize>,
    anchor: Vec<f64>,
    layout: SubsystemLayout,
}

impl Restricted {
    pub fn new(
        inner: Arc<dyn HamiltonianModel>,
        subsystem: usize,
        anchor: Vec<f64>,
    ) -> Result<Self> {
        if anchor.len() != inner.dim() || subsystem >= inner.layout().len() {
            return Err(Error::Layout(format!(
                "cannot restrict to subsystem {subsystem} with this anchor"
            )));
        }
        let block = inner.layout().block(subsystem);
        let layout = SubsystemLayout::from_sizes(&[block.len()])?;
        Ok(Self {
            inner,
            block,
            anchor,
            layout,
        })
    }

    fn lift(&self, q: &[f64]) -> Vec<f64> {
        let mut x = self.anchor.clone();
        x[self.block.clone()].copy_from_slice(q);
        x
    }
}

impl HamiltonianModel for Restricted {
    fn id(&self) -> String {
        format!("{}|{:?}", self.inner.id(), self.block)
    }

    fn dim(&self) -> usize {
        self.block.len()
    }

    fn layout(&self) -> &SubsystemLayout {
        &self.layout
    }

    fn domain(&self) -> &[Interval] {
        &self.inner.domain()[self.block.clone()]
    }

    fn potential(&self, q: &[f64]) -> f64 {
        self.inner.potential(&self.lift(q))
    }

    fn potential_gradient(&self, q: &[f64], grad: &mut [f64]) {
        let mut g = vec![0.0; self.inner.dim()];
        self.inner.potential_gradient(&self.lift(q), &mut g);
        grad.copy_from_slice(&g[self.block.clone()]);
    }

    fn mass_matrix(&self, q: &[f64]) -> DMatrix<f64> {
        let m = self.inner.mass_matrix(&self.lift(q));
        let d = self.block.len();
        m.view((self.block.start, self.block.start), (d, d))
            .into_owned()
    }

    fn mass_matrix_is_constant(&self) -> bool {
        self.inner.mass_matrix_is_constant()
    }

    fn seconds_per_time_unit(&self) -> f64 {
        self.inner.seconds_per_time_unit()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{DoubleWell2D, DoubleWellParams};

    #[test]
    fn decoupled_double_well_restriction_has_the_subsystem_force() {
        let m = Arc::new(DoubleWell2D::new(DoubleWellParams {
            epsilon: 0.0,
            ..Default::default()
        }));
        let r = Restricted::new(m.clone(), 1, vec![0.3, 0.0]).unwrap();
        let mut g = [0.0];
        r.potential_gradient(&[0.7], &mut g);
        assert!((g[0] - m.dv2(0.7)).abs() < 1e-12);
        assert_eq!(r.mass_matrix(&[0.7])[(0, 0)], 1.0);
        assert_eq!(r.domain().len(), 1);
    }
}
