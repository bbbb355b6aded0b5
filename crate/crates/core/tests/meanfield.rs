use std::sync::Arc;

use mftransfer::integrate::IntegratorSpec;
use mftransfer::meanfield::{
    evolve_full_particles, evolve_mean_field, mean_field_vector_field, Coupling, EvolveOptions,
    MeanFieldSystem, RoothaanOptions, SpatialFactor, SubsystemDensity,
};
use mftransfer::model::{Boundary, DoubleWell2D, DoubleWellParams, HamiltonianModel, Interval};
use mftransfer::partition::TensorPartition;
use mftransfer::rng::RngSpec;
use mftransfer::sampling::{CanonicalEnsemble, MarginalConvention};

fn system(model: DoubleWell2D, cells: usize) -> MeanFieldSystem {
    let model: Arc<dyn HamiltonianModel> = Arc::new(model);
    let part = TensorPartition::from_domain(model.domain(), &[cells, cells]).unwrap();
    let ens = CanonicalEnsemble::new(model, 1.0, MarginalConvention::Boltzmann).unwrap();
    MeanFieldSystem::new(ens, part, 2).unwrap()
}

fn options(order: Option<Vec<usize>>) -> RoothaanOptions {
    RoothaanOptions {
        iters: 6,
        samples: 256,
        spec: IntegratorSpec::rk4(20, 1.0),
        order,
    }
}

#[test]
fn sweep_order_only_matters_within_the_sweep_fluctuation() {
    // with common random numbers the sampled sweep map is piecewise constant
    // in the factors, so the iteration may settle on a small cycle instead of
    // a point; both orders must land on the same cycle
    let sys = system(DoubleWell2D::default(), 16);
    let rng = RngSpec::new(4);
    let a = sys
        .roothaan(sys.initial_factors(2).unwrap(), &options(None), &rng)
        .unwrap();
    let b = sys
        .roothaan(
            sys.initial_factors(2).unwrap(),
            &options(Some(vec![1, 0])),
            &rng,
        )
        .unwrap();
    let last =
        |r: &mftransfer::meanfield::RoothaanResult| r.diagnostics.last().unwrap().changes.clone();
    let (ca, cb) = (last(&a), last(&b));
    for i in 0..2 {
        let l1: f64 = a.factors[i]
            .values
            .iter()
            .zip(&b.factors[i].values)
            .map(|(x, y)| (x - y).abs())
            .sum();
        let amplitude = ca[i].max(cb[i]);
        assert!(
            amplitude < 0.05,
            "subsystem {i} still moving by {amplitude}"
        );
        assert!(
            l1 <= amplitude + 1e-12,
            "subsystem {i}: orders differ by {l1}, cycle amplitude {amplitude}"
        );
        assert!(a.residuals[i] < 0.05 && b.residuals[i] < 0.05);
    }
}

#[test]
fn self_consistent_factors_are_bimodal() {
    let sys = system(DoubleWell2D::default(), 32);
    let res = sys
        .roothaan(
            sys.initial_factors(2).unwrap(),
            &options(None),
            &RngSpec::new(1),
        )
        .unwrap();
    for f in &res.factors {
        assert!((f.mass() - 1.0).abs() < 1e-12);
        let centers: Vec<f64> = (0..32).map(|c| f.part.cell_center(c)[0]).collect();
        let left: f64 = (0..32)
            .filter(|&c| centers[c] < 0.0)
            .map(|c| f.values[c])
            .sum();
        assert!(left > 0.1 && left < 0.9, "left mass {left}");
        let peak_l = (0..16).map(|c| f.values[c]).fold(0.0, f64::max);
        let peak_r = (16..32).map(|c| f.values[c]).fold(0.0, f64::max);
        let middle = f.values[15].min(f.values[16]);
        assert!(
            middle < 0.5 * peak_l.min(peak_r),
            "no barrier dip: {:?}",
            f.values
        );
    }
}

#[test]
fn concentrated_partner_scales_the_force() {
    // V = V₁(q₁)·V₂(q₂) with the q₂ factor concentrated at q₂ = 0, where V₂ = α = 3
    let sys = system(DoubleWell2D::default(), 17);
    let mut bump = vec![0.0; 17];
    bump[8] = 1.0;
    let factors = vec![
        sys.initial_factors(2).unwrap().remove(0),
        SpatialFactor::new(1, sys.parts[1].clone(), bump).unwrap(),
    ];
    let h = sys.effective_hamiltonian(0, &factors).unwrap();
    let model = DoubleWell2D::default();
    for q in [-1.7, -0.9, -0.2, 0.4, 1.1, 1.8] {
        let f = mean_field_vector_field(&h, &[q], &[0.7]).unwrap();
        assert!((f[0] - 0.7).abs() < 1e-9, "q̇ = {}", f[0]);
        assert!(
            (f[1] + 3.0 * model.dv1(q)).abs() < 1e-9,
            "ṗ = {} at {q}",
            f[1]
        );
    }
}

#[test]
fn component_map_ignores_own_factor_and_is_stochastic() {
    let sys = system(DoubleWell2D::default(), 16);
    let mut factors = sys.initial_factors(2).unwrap();
    let spec = IntegratorSpec::rk4(20, 1.0);
    let rng = RngSpec::new(9);
    let a = sys
        .assemble_component(1, &factors, 64, &spec, &rng)
        .unwrap();
    factors[1]
        .values
        .iter_mut()
        .enumerate()
        .for_each(|(c, v)| *v = (c + 1) as f64);
    let b = sys
        .assemble_component(1, &factors, 64, &spec, &rng)
        .unwrap();
    assert_eq!(a, b);
    for s in a.column_sums() {
        assert!((s - 1.0).abs() < 1e-12);
    }
}

fn packet(i: usize, center: f64) -> SubsystemDensity {
    let dom = [
        Interval::new(-2.0, 2.0, Boundary::Reflecting),
        Interval::new(-4.0, 4.0, Boundary::UnboundedTruncated),
    ];
    let g = TensorPartition::from_domain(&dom, &[16, 16]).unwrap();
    SubsystemDensity::from_fn(i, g, |z| {
        (-((z[0] - center) / 0.4).powi(2) / 2.0 - (z[1] / 0.8).powi(2) / 2.0).exp()
    })
    .unwrap()
}

#[test]
fn evolution_conserves_mass_and_decouples_exactly() {
    let u = vec![packet(0, 0.8), packet(1, -0.6)];
    let spec = IntegratorSpec::rk4(20, 0.5);
    let model = DoubleWell2D::new(DoubleWellParams {
        epsilon: 0.0,
        ..Default::default()
    });
    for coupling in [
        Coupling::Frozen,
        Coupling::CoEvolved(5),
        Coupling::CoEvolvedMidpoint(5),
    ] {
        let opts = EvolveOptions {
            spec,
            coupling,
            table_refine: 2,
        };
        let mf = evolve_mean_field(&model, &u, &opts).unwrap();
        let full = evolve_full_particles(&model, &u, &spec).unwrap();
        for (a, b) in mf.densities.iter().zip(&full) {
            assert!((a.mass() - 1.0).abs() < 1e-12 && (b.mass() - 1.0).abs() < 1e-12);
            let l1: f64 = a
                .values
                .iter()
                .zip(&b.values)
                .map(|(x, y)| (x - y).abs())
                .sum::<f64>()
                * a.grid.cell_volume();
            assert!(l1 < 1e-8, "{coupling:?}: {l1}");
        }
    }
}

#[test]
fn coupling_error_shrinks_with_coupling_strength() {
    let u = vec![packet(0, 0.8), packet(1, -0.6)];
    let spec = IntegratorSpec::rk4(20, 0.5);
    let err = |eps: f64| {
        let model = DoubleWell2D::new(DoubleWellParams {
            epsilon: eps,
            ..Default::default()
        });
        let opts = EvolveOptions {
            spec,
            coupling: Coupling::CoEvolvedMidpoint(20),
            table_refine: 2,
        };
        let mf = evolve_mean_field(&model, &u, &opts).unwrap();
        let full = evolve_full_particles(&model, &u, &spec).unwrap();
        mf.densities
            .iter()
            .zip(&full)
            .map(|(a, b)| {
                a.values
                    .iter()
                    .zip(&b.values)
                    .map(|(x, y)| (x - y).abs())
                    .sum::<f64>()
                    * a.grid.cell_volume()
            })
            .fold(0.0, f64::max)
    };
    let (e1, e2) = (err(0.04), err(0.02));
    assert!(e2 < e1 && e1 / e2 > 3.0, "{e1} {e2}");
}
