use std::sync::Arc;

use mftransfer::integrate::IntegratorSpec;
use mftransfer::model::{DoubleWell2D, HamiltonianModel};
use mftransfer::partition::TensorPartition;
use mftransfer::rng::RngSpec;
use mftransfer::sampling::{CanonicalEnsemble, MarginalConvention};
use mftransfer::spectral::{
    almost_invariant_sets, dominant_eigs, invariance_ratio, invariant_vector, power_deflation,
    EigsOptions, LinearOperator,
};
use mftransfer::ulam::{assemble_full_spatial, StochasticMatrix};

fn double_well(cells: usize) -> (CanonicalEnsemble, TensorPartition) {
    let model: Arc<dyn HamiltonianModel> = Arc::new(DoubleWell2D::default());
    let part = TensorPartition::from_domain(model.domain(), &[cells, cells]).unwrap();
    let ens = CanonicalEnsemble::new(model, 1.0, MarginalConvention::Boltzmann).unwrap();
    (ens, part)
}

fn preset_spec() -> IntegratorSpec {
    IntegratorSpec::rk4(20, 1.0)
}

struct Transposed<'a>(&'a StochasticMatrix);

impl LinearOperator for Transposed<'_> {
    fn dim(&self) -> usize {
        self.0.n()
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        self.0.transpose_matvec(x, y)
    }
}

#[test]
fn zero_time_operator_is_the_identity() {
    let (ens, part) = double_well(12);
    let p = assemble_full_spatial(
        &ens,
        &part,
        8,
        &IntegratorSpec::rk4(5, 0.0),
        &RngSpec::new(3),
    )
    .unwrap();
    assert_eq!(p.to_dense(), StochasticMatrix::identity(p.n()).to_dense());
    let r = dominant_eigs(&p, 2, &EigsOptions::default()).unwrap();
    assert!((r.values[1].re - 1.0).abs() < 1e-12);
}

#[test]
fn assembly_depends_only_on_the_seed() {
    let (ens, part) = double_well(16);
    let a = assemble_full_spatial(&ens, &part, 16, &preset_spec(), &RngSpec::new(7)).unwrap();
    let b = assemble_full_spatial(&ens, &part, 16, &preset_spec(), &RngSpec::new(7)).unwrap();
    let c = assemble_full_spatial(&ens, &part, 16, &preset_spec(), &RngSpec::new(8)).unwrap();
    assert_eq!(a, b);
    assert_ne!(a.to_dense(), c.to_dense());
    for s in a.column_sums() {
        assert!((s - 1.0).abs() < 1e-12);
    }
}

#[test]
fn power_deflation_confirms_leading_eigenvalues() {
    let (ens, part) = double_well(16);
    let p = assemble_full_spatial(&ens, &part, 32, &preset_spec(), &RngSpec::new(1)).unwrap();
    let arnoldi = dominant_eigs(&p, 3, &EigsOptions::default()).unwrap();
    let power = power_deflation(&p, &Transposed(&p), 3, 1e-12, 200_000).unwrap();
    for k in 0..3 {
        assert!(
            (arnoldi.values[k].re - power.values[k].re).abs() < 1e-6,
            "{k}: {} vs {}",
            arnoldi.values[k],
            power.values[k]
        );
    }
}

#[test]
fn double_well_has_the_expected_metastable_structure() {
    let (ens, part) = double_well(32);
    let p = assemble_full_spatial(&ens, &part, 32, &preset_spec(), &RngSpec::new(1)).unwrap();
    let r = dominant_eigs(&p, 4, &EigsOptions::default()).unwrap();
    let pi = invariant_vector(&p, &EigsOptions::default()).unwrap();
    let lambda = r.real_values();
    assert!(lambda[1] > 0.9 && lambda[1] < 1.0 - 1e-6, "{lambda:?}");
    assert!(lambda.windows(2).all(|w| w[0] >= w[1]));

    // the slowest process switches wells in q₂, the next one in q₁; the sign
    // change sits at the barrier top of the respective factor potential
    let model = DoubleWell2D::default();
    let (mut lo, mut hi) = (-0.5, 0.5);
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if model.dv1(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let barrier = [0.5 * (lo + hi), 0.0];
    for (k, axis) in [(1, 1), (2, 0)] {
        let v = &r.vectors[k];
        let (plus, minus) = almost_invariant_sets(v, Some(&part)).unwrap();
        // π-weighted agreement of sign(v) with the side of the barrier, up to a global sign
        let agree: f64 = (0..v.len())
            .filter(|&c| (v[c] > 0.0) == (part.cell_center(c)[axis] > barrier[axis]))
            .map(|c| pi[c])
            .sum();
        let agree = agree.max(1.0 - agree);
        assert!(
            agree > 0.9,
            "v{}: sign agreement with axis {axis} split {agree:.3}",
            k + 1
        );
        let w: Vec<f64> = v.iter().map(|x| x.abs()).collect();
        let rho =
            invariance_ratio(&p, &plus, &w).unwrap() + invariance_ratio(&p, &minus, &w).unwrap();
        assert!(
            (rho - (1.0 + lambda[k])).abs() < 0.05,
            "{rho} vs {}",
            1.0 + lambda[k]
        );
    }
}
