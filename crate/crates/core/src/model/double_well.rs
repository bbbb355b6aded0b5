use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::{Boundary, Factor, HamiltonianModel, Interval, ProductTerm, SubsystemLayout};

/// Parameters of the coupled 2D double well `V = V₁(q₁)·V₂(q₂)`.
///
/// With `epsilon ≠ 1` the potential is split as
/// `V = c₂V₁ + c₁V₂ − c₁c₂ + ε(V₁ − c₁)(V₂ − c₂)` around the reference values
/// `(c₁, c₂)`; ε = 1 recovers the product and ε = 0 decouples the subsystems.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DoubleWellParams {
    pub alpha: f64,
    pub masses: [f64; 2],
    pub epsilon: f64,
    pub reference: [f64; 2],
    pub bounds: [f64; 2],
}

impl Default for DoubleWellParams {
    fn default() -> Self {
        Self {
            alpha: 3.0,
            masses: [1.0, 1.0],
            epsilon: 1.0,
            reference: [1.0, 1.0],
            bounds: [-2.0, 2.0],
        }
    }
}

#[derive(Debug)]
pub struct DoubleWell2D {
    params: DoubleWellParams,
    layout: SubsystemLayout,
    domain: Vec<Interval>,
    terms: Vec<ProductTerm>,
    v1: Factor,
    v2: Factor,
}

impl DoubleWell2D {
    pub fn new(params: DoubleWellParams) -> Self {
        let v1 = Factor::Polynomial(vec![3.0, -0.75, -3.0, 0.25, 1.5]);
        let v2 = Factor::Polynomial(vec![params.alpha, 0.0, -4.0, 0.0, 2.0]);
        let [c1, c2] = params.reference;
        let terms = if params.epsilon == 1.0 {
            vec![ProductTerm {
                coefficient: 1.0,
                factors: vec![(0, v1.clone()), (1, v2.clone())],
            }]
        } else {
            vec![
                ProductTerm {
                    coefficient: c2,
                    factors: vec![(0, v1.clone())],
                },
                ProductTerm {
                    coefficient: c1,
                    factors: vec![(1, v2.clone())],
                },
                ProductTerm::constant(-c1 * c2),
                ProductTerm {
                    coefficient: params.epsilon,
                    factors: vec![
                        (0, Factor::Shifted(Box::new(v1.clone()), c1)),
                        (1, Factor::Shifted(Box::new(v2.clone()), c2)),
                    ],
                },
            ]
        };
        let [lo, hi] = params.bounds;
        Self {
            layout: SubsystemLayout::per_coordinate(2),
            domain: vec![Interval::new(lo, hi, Boundary::Reflecting); 2],
            terms,
            v1,
            v2,
            params,
        }
    }

    pub fn params(&self) -> &DoubleWellParams {
        &self.params
    }

    pub fn v1(&self, x: f64) -> f64 {
        self.v1.value(&[x])
    }

    pub fn v2(&self, x: f64) -> f64 {
        self.v2.value(&[x])
    }

    pub fn dv1(&self, x: f64) -> f64 {
        let mut g = [0.0];
        self.v1.value_and_gradient(&[x], &mut g);
        g[0]
    }

    pub fn dv2(&self, x: f64) -> f64 {
        let mut g = [0.0];
        self.v2.value_and_gradient(&[x], &mut g);
        g[0]
    }
}

impl Default for DoubleWell2D {
    fn default() -> Self {
        Self::new(DoubleWellParams::default())
    }
}

impl HamiltonianModel for DoubleWell2D {
    fn id(&self) -> String {
        if self.params.epsilon == 1.0 {
            "double_well_2d".into()
        } else {
            format!("double_well_2d[eps={}]", self.params.epsilon)
        }
    }

    fn dim(&self) -> usize {
        2
    }

    fn layout(&self) -> &SubsystemLayout {
        &self.layout
    }

    fn domain(&self) -> &[Interval] {
        &self.domain
    }

    fn potential(&self, q: &[f64]) -> f64 {
        let (a, b) = (self.v1(q[0]), self.v2(q[1]));
        if self.params.epsilon == 1.0 {
            a * b
        } else {
            let [c1, c2] = self.params.reference;
            c2 * a + c1 * b - c1 * c2 + self.params.epsilon * (a - c1) * (b - c2)
        }
    }

    fn potential_gradient(&self, q: &[f64], grad: &mut [f64]) {
        let (a, b) = (self.v1(q[0]), self.v2(q[1]));
        let (da, db) = (self.dv1(q[0]), self.dv2(q[1]));
        let eps = self.params.epsilon;
        let [c1, c2] = self.params.reference;
        if eps == 1.0 {
            grad[0] = da * b;
            grad[1] = a * db;
        } else {
            grad[0] = da * (c2 + eps * (b - c2));
            grad[1] = db * (c1 + eps * (a - c1));
        }
    }

    fn mass_matrix(&self, _q: &[f64]) -> DMatrix<f64> {
        DMatrix::from_diagonal(&nalgebra::DVector::from_column_slice(&self.params.masses))
    }

    fn mass_matrix_is_constant(&self) -> bool {
        true
    }

    fn potential_terms(&self) -> Option<&[ProductTerm]> {
        Some(&self.terms)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{eval_potential, eval_vector_field, PhaseState};

    #[test]
    fn potential_at_origin_is_alpha_times_three() {
        let m = DoubleWell2D::default();
        assert_eq!(eval_potential(&m, &[0.0, 0.0]).unwrap(), 9.0);
    }

    #[test]
    fn force_at_origin() {
        // V1'(0) = -3/4, V2(0) = 3, V2'(0) = 0
        let m = DoubleWell2D::default();
        let f = eval_vector_field(&m, &PhaseState::new(vec![0.0, 0.0], vec![0.0, 0.0])).unwrap();
        assert_eq!(&f[..2], &[0.0, 0.0]);
        assert!((f[2] - 2.25).abs() < 1e-14);
        assert!(f[3].abs() < 1e-14);
    }

    #[test]
    fn out_of_domain_is_rejected() {
        let m = DoubleWell2D::default();
        assert!(eval_potential(&m, &[2.5, 0.0]).is_err());
    }

    #[test]
    fn minima_structure() {
        // V1' = (q²-1)(6q+0.75); V1(1) = 1, V1(-1) = 2; V2(±1) = α - 2
        let m = DoubleWell2D::default();
        assert!((m.v1(1.0) - 1.0).abs() < 1e-14);
        assert!((m.v1(-1.0) - 2.0).abs() < 1e-14);
        assert!((m.v2(1.0) - 1.0).abs() < 1e-14);
        assert!(m.dv1(-0.125).abs() < 1e-14);
    }

    #[test]
    fn split_form_recovers_product_and_decouples() {
        let full = DoubleWell2D::default();
        let split = DoubleWell2D::new(DoubleWellParams {
            epsilon: 1.0 - 1e-15,
            ..Default::default()
        });
        let free = DoubleWell2D::new(DoubleWellParams {
            epsilon: 0.0,
            ..Default::default()
        });
        for &(a, b) in &[(0.3, -0.7), (-1.2, 1.1), (1.9, 0.0)] {
            let q = [a, b];
            assert!((full.potential(&q) - split.potential(&q)).abs() < 1e-12);
            let sep = full.v1(a) + full.v2(b) - 1.0;
            assert!((free.potential(&q) - sep).abs() < 1e-12);
        }
    }

    #[test]
    fn terms_sum_to_potential() {
        for eps in [1.0, 0.3, 0.0] {
            let m = DoubleWell2D::new(DoubleWellParams {
                epsilon: eps,
                ..Default::default()
            });
            let q = [0.37, -1.21];
            let total: f64 = m
                .potential_terms()
                .unwrap()
                .iter()
                .map(|t| {
                    t.coefficient
                        * t.factors
                            .iter()
                            .map(|(s, f)| f.value(&q[*s..*s + 1]))
                            .product::<f64>()
                })
                .sum();
            assert!((total - m.potential(&q)).abs() < 1e-12);
        }
    }
}
