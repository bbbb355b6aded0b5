use std::f64::consts::PI;

use nalgebra::{DMatrix, Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use super::{Boundary, Factor, HamiltonianModel, Interval, ProductTerm, SubsystemLayout};
use crate::error::{Error, Result};
use crate::units;

/// Frame used when pulling the cartesian mass matrix back to internal coordinates.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MassFrame {
    /// Center-of-mass subtraction only.
    CenterOfMass,
    /// Center-of-mass subtraction plus elimination of rigid rotation, so both
    /// linear and angular momentum vanish. This is the default.
    ZeroAngularMomentum,
}

/// United-atom n-butane with fixed bond lengths; q = (θ₁, θ₂, φ).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ButaneParams {
    /// kJ/mol
    pub k_theta: f64,
    pub theta0_degrees: f64,
    /// kJ/mol
    pub k_phi: f64,
    /// Coefficients of cos⁰φ … cos⁵φ.
    pub torsion: [f64; 6],
    /// nm
    pub r0: f64,
    /// Proton mass in grams per particle.
    pub proton_mass_grams: f64,
    pub ch2_protons: f64,
    pub ch3_protons: f64,
    pub frame: MassFrame,
}

impl Default for ButaneParams {
    fn default() -> Self {
        Self {
            k_theta: 65.0,
            theta0_degrees: 109.47,
            k_phi: 8.314,
            torsion: [1.116, -1.462, -1.578, 0.368, 3.156, 3.788],
            r0: 0.153,
            proton_mass_grams: 1.672e-24,
            ch2_protons: 14.0,
            ch3_protons: 15.0,
            frame: MassFrame::ZeroAngularMomentum,
        }
    }
}

/// Cartesian placement of the four united atoms and its Jacobian.
#[derive(Clone, Debug)]
pub struct Embedding {
    /// Atom positions (nm), center of mass at the origin.
    pub positions: [Vector3<f64>; 4],
    /// `jacobian[atom][k]` = ∂r_atom/∂q_k.
    pub jacobian: [[Vector3<f64>; 3]; 4],
}

#[derive(Debug)]
pub struct ButaneModel {
    params: ButaneParams,
    masses: [f64; 4],
    layout: SubsystemLayout,
    domain: Vec<Interval>,
    terms: Vec<ProductTerm>,
    bend: Factor,
    torsion: Factor,
}

impl ButaneModel {
    pub fn new(params: ButaneParams) -> Self {
        let mp = units::grams_to_molar_mass(params.proton_mass_grams);
        let (m_ch2, m_ch3) = (params.ch2_protons * mp, params.ch3_protons * mp);
        let bend = Factor::AngleBend {
            k: params.k_theta,
            theta0: units::degrees(params.theta0_degrees),
        };
        let torsion = Factor::CosinePolynomial {
            scale: params.k_phi,
            coeffs: params.torsion.to_vec(),
        };
        let terms = vec![
            ProductTerm {
                coefficient: 1.0,
                factors: vec![(0, bend.clone())],
            },
            ProductTerm {
                coefficient: 1.0,
                factors: vec![(1, bend.clone())],
            },
            ProductTerm {
                coefficient: 1.0,
                factors: vec![(2, torsion.clone())],
            },
        ];
        Self {
            masses: [m_ch3, m_ch2, m_ch2, m_ch3],
            layout: SubsystemLayout::per_coordinate(3),
            domain: vec![
                Interval::new(0.0, PI, Boundary::Reflecting),
                Interval::new(0.0, PI, Boundary::Reflecting),
                Interval::new(0.0, 2.0 * PI, Boundary::Periodic),
            ],
            terms,
            bend,
            torsion,
            params,
        }
    }

    pub fn params(&self) -> &ButaneParams {
        &self.params
    }

    /// Particle masses in g/mol, chain order CH₃–CH₂–CH₂–CH₃.
    pub fn masses(&self) -> [f64; 4] {
        self.masses
    }

    pub fn theta0(&self) -> f64 {
        units::degrees(self.params.theta0_degrees)
    }

    /// Bond-angle potential.
    pub fn bend_potential(&self, theta: f64) -> f64 {
        self.bend.value(&[theta])
    }

    /// Torsion potential.
    pub fn torsion_potential(&self, phi: f64) -> f64 {
        self.torsion.value(&[phi])
    }

    /// Z-matrix placement: atom 2 at the origin, atom 3 on +x, atom 1 in the
    /// xy-plane at angle θ₁, atom 4 at angle θ₂ and dihedral φ (φ = 0 cis,
    /// φ = π trans); then the center of mass is subtracted.
    pub fn raw_embedding(&self, q: &[f64]) -> Embedding {
        let r0 = self.params.r0;
        let (s1, c1) = q[0].sin_cos();
        let (s2, c2) = q[1].sin_cos();
        let (sp, cp) = q[2].sin_cos();
        let zero = Vector3::zeros();
        let mut pos = [
            Vector3::new(r0 * c1, r0 * s1, 0.0),
            zero,
            Vector3::new(r0, 0.0, 0.0),
            Vector3::new(r0 * (1.0 - c2), r0 * s2 * cp, r0 * s2 * sp),
        ];
        let mut jac = [[zero; 3]; 4];
        jac[0][0] = Vector3::new(-r0 * s1, r0 * c1, 0.0);
        jac[3][1] = Vector3::new(r0 * s2, r0 * c2 * cp, r0 * c2 * sp);
        jac[3][2] = Vector3::new(0.0, -r0 * s2 * sp, r0 * s2 * cp);

        let total: f64 = self.masses.iter().sum();
        let com = pos
            .iter()
            .zip(&self.masses)
            .map(|(r, m)| r * *m)
            .sum::<Vector3<f64>>()
            / total;
        for r in &mut pos {
            *r -= com;
        }
        for k in 0..3 {
            let dcom = (0..4)
                .map(|a| jac[a][k] * self.masses[a])
                .sum::<Vector3<f64>>()
                / total;
            for row in &mut jac {
                row[k] -= dcom;
            }
        }
        Embedding {
            positions: pos,
            jacobian: jac,
        }
    }
}

impl Default for ButaneModel {
    fn default() -> Self {
        Self::new(ButaneParams::default())
    }
}

/// Checked cartesian embedding; bond angles of exactly 0 or π are rejected.
pub fn cartesian_embedding(model: &ButaneModel, q: &[f64]) -> Result<Embedding> {
    super::check_domain(model, q)?;
    for &theta in &q[..2] {
        if theta == 0.0 || theta == PI {
            return Err(Error::Boundary {
                q: q.to_vec(),
                reason: "collinear bond angle".into(),
            });
        }
    }
    Ok(model.raw_embedding(q))
}

impl HamiltonianModel for ButaneModel {
    fn id(&self) -> String {
        "butane_ua".into()
    }

    fn dim(&self) -> usize {
        3
    }

    fn layout(&self) -> &SubsystemLayout {
        &self.layout
    }

    fn domain(&self) -> &[Interval] {
        &self.domain
    }

    fn potential(&self, q: &[f64]) -> f64 {
        self.bend.value(&q[0..1]) + self.bend.value(&q[1..2]) + self.torsion.value(&q[2..3])
    }

    fn potential_gradient(&self, q: &[f64], grad: &mut [f64]) {
        self.bend.value_and_gradient(&q[0..1], &mut grad[0..1]);
        self.bend.value_and_gradient(&q[1..2], &mut grad[1..2]);
        self.torsion.value_and_gradient(&q[2..3], &mut grad[2..3]);
    }

    /// `M(q) = Dq̃ᵀ M_cart Dq̃`, optionally with rigid rotation projected out.
    fn mass_matrix(&self, q: &[f64]) -> DMatrix<f64> {
        let e = self.raw_embedding(q);
        let mut m = Matrix3::<f64>::zeros();
        for (a, mass) in self.masses.iter().enumerate() {
            for k in 0..3 {
                for l in k..3 {
                    m[(k, l)] += mass * e.jacobian[a][k].dot(&e.jacobian[a][l]);
                }
            }
        }
        if self.params.frame == MassFrame::ZeroAngularMomentum {
            // T = ½q̇ᵀ(JᵀMJ − CᵀI⁻¹C)q̇ with C the angular momentum per unit q̇
            let mut inertia = Matrix3::<f64>::zeros();
            let mut c = Matrix3::<f64>::zeros();
            for (a, mass) in self.masses.iter().enumerate() {
                let r = e.positions[a];
                inertia += (Matrix3::identity() * r.dot(&r) - r * r.transpose()) * *mass;
                for k in 0..3 {
                    let l = r.cross(&e.jacobian[a][k]) * *mass;
                    c.set_column(k, &(c.column(k) + l));
                }
            }
            if let Some(inv) = inertia.try_inverse() {
                let corr = c.transpose() * inv * c;
                for k in 0..3 {
                    for l in k..3 {
                        m[(k, l)] -= corr[(k, l)];
                    }
                }
            }
        }
        for k in 0..3 {
            for l in 0..k {
                m[(k, l)] = m[(l, k)];
            }
        }
        DMatrix::from_iterator(3, 3, m.iter().copied())
    }

    fn potential_terms(&self) -> Option<&[ProductTerm]> {
        Some(&self.terms)
    }

    fn seconds_per_time_unit(&self) -> f64 {
        units::SECONDS_PER_PS
    }
}

/// Bond angle at `b` between `a` and `c`.
pub fn bond_angle(a: &Vector3<f64>, b: &Vector3<f64>, c: &Vector3<f64>) -> f64 {
    let u = a - b;
    let v = c - b;
    (u.dot(&v) / (u.norm() * v.norm())).clamp(-1.0, 1.0).acos()
}

/// Dihedral of the chain a–b–c–d in [0, 2π), 0 for cis.
pub fn dihedral(a: &Vector3<f64>, b: &Vector3<f64>, c: &Vector3<f64>, d: &Vector3<f64>) -> f64 {
    let b1 = b - a;
    let b2 = c - b;
    let b3 = d - c;
    let n1 = b1.cross(&b2);
    let n2 = b2.cross(&b3);
    let m1 = n1.cross(&b2.normalize());
    let x = n1.dot(&n2);
    // right-handed rotation about b→c taking the a-side projection to the d-side one
    let y = -m1.dot(&n2);
    let phi = y.atan2(x);
    if phi < 0.0 {
        phi + 2.0 * PI
    } else {
        phi
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{eval_mass_matrix, eval_potential};

    #[test]
    fn bend_vanishes_at_equilibrium() {
        let m = ButaneModel::default();
        assert_eq!(m.bend_potential(m.theta0()), 0.0);
    }

    #[test]
    fn torsion_vanishes_at_trans() {
        // coefficients at cos φ = -1: 1.116+1.462-1.578-0.368+3.156-3.788 = 0
        let m = ButaneModel::default();
        assert!(m.torsion_potential(PI).abs() < 1e-12);
        assert!(m.torsion_potential(0.0) > 0.0);
    }

    #[test]
    fn embedding_geometry() {
        let m = ButaneModel::default();
        for &q in &[[1.9, 1.7, 0.4], [0.8, 2.6, 3.5], [2.2, 1.1, 5.9]] {
            let e = cartesian_embedding(&m, &q).unwrap();
            let r = &e.positions;
            for (a, b) in [(0, 1), (1, 2), (2, 3)] {
                assert!(((r[a] - r[b]).norm() - m.params.r0).abs() < 1e-12);
            }
            assert!((bond_angle(&r[0], &r[1], &r[2]) - q[0]).abs() < 1e-10);
            assert!((bond_angle(&r[1], &r[2], &r[3]) - q[1]).abs() < 1e-10);
            let phi = dihedral(&r[0], &r[1], &r[2], &r[3]);
            assert!((phi - q[2]).abs() < 1e-10, "{phi} vs {}", q[2]);
            let com: Vector3<f64> = r.iter().zip(m.masses()).map(|(x, w)| x * w).sum();
            assert!(com.norm() < 1e-12);
        }
    }

    #[test]
    fn cis_is_more_compact_than_trans() {
        let m = ButaneModel::default();
        let t0 = m.theta0();
        let cis = cartesian_embedding(&m, &[t0, t0, 0.0]).unwrap();
        let trans = cartesian_embedding(&m, &[t0, t0, PI]).unwrap();
        let d = |e: &Embedding| (e.positions[0] - e.positions[3]).norm();
        assert!(d(&cis) < d(&trans));
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        let m = ButaneModel::default();
        let q = [1.8, 2.1, 1.3];
        let e = m.raw_embedding(&q);
        let h = 1e-6;
        for k in 0..3 {
            let mut qp = q;
            let mut qm = q;
            qp[k] += h;
            qm[k] -= h;
            let (ep, em) = (m.raw_embedding(&qp), m.raw_embedding(&qm));
            for a in 0..4 {
                let fd = (ep.positions[a] - em.positions[a]) / (2.0 * h);
                assert!((fd - e.jacobian[a][k]).norm() < 1e-6 * m.params.r0);
            }
        }
    }

    #[test]
    fn collinear_angles_are_rejected() {
        let m = ButaneModel::default();
        assert!(matches!(
            cartesian_embedding(&m, &[0.0, 1.0, 1.0]),
            Err(Error::Boundary { .. })
        ));
        assert!(matches!(
            cartesian_embedding(&m, &[1.0, PI, 1.0]),
            Err(Error::Boundary { .. })
        ));
        assert!(eval_potential(&m, &[1.0, 1.0, 7.0]).is_err());
    }

    #[test]
    fn mass_matrix_is_spd_and_torsion_inertia_is_phi_independent() {
        // only the COM frame has a φ-independent torsional inertia; removing
        // rotations couples it to the overall shape
        let m = ButaneModel::new(ButaneParams {
            frame: MassFrame::CenterOfMass,
            ..Default::default()
        });
        let a = eval_mass_matrix(&m, &[1.7, 2.0, 0.3]).unwrap();
        let b = eval_mass_matrix(&m, &[1.7, 2.0, 4.1]).unwrap();
        assert!((a[(2, 2)] - b[(2, 2)]).abs() < 1e-8 * a[(2, 2)]);
        let zam = ButaneModel::new(ButaneParams {
            frame: MassFrame::ZeroAngularMomentum,
            ..Default::default()
        });
        for mm in [a, b, eval_mass_matrix(&zam, &[1.7, 2.0, 0.3]).unwrap()] {
            assert!(mm.symmetric_eigenvalues().iter().all(|&l| l > 0.0));
        }
    }

    #[test]
    fn zero_angular_momentum_frame_removes_rotation() {
        // for internal velocities, the projected kinetic energy must not exceed the COM-only one
        let com = ButaneModel::new(ButaneParams {
            frame: MassFrame::CenterOfMass,
            ..Default::default()
        });
        let zam = ButaneModel::new(ButaneParams {
            frame: MassFrame::ZeroAngularMomentum,
            ..Default::default()
        });
        let q = [1.9, 1.9, 2.5];
        let diff = com.mass_matrix(&q) - zam.mass_matrix(&q);
        assert!(diff.symmetric_eigenvalues().iter().all(|&l| l > -1e-12));
    }

    #[test]
    fn zero_angular_momentum_energy_is_minimal_over_rigid_rotations() {
        // oracle: ½Σm|v + ω×r|² minimized over ω by weighted least squares
        let m = ButaneModel::default();
        let q = [1.8, 2.0, 1.1];
        let qdot = [0.7, -0.4, 1.3];
        let e = m.raw_embedding(&q);
        let mut a = nalgebra::DMatrix::<f64>::zeros(12, 3);
        let mut b = nalgebra::DVector::<f64>::zeros(12);
        for (k, mass) in m.masses().iter().enumerate() {
            let s = mass.sqrt();
            let v: Vector3<f64> = (0..3).map(|l| e.jacobian[k][l] * qdot[l]).sum();
            let r = e.positions[k];
            // ω×r = −[r]ₓ ω
            let rx = nalgebra::Matrix3::new(0.0, -r.z, r.y, r.z, 0.0, -r.x, -r.y, r.x, 0.0);
            for i in 0..3 {
                b[3 * k + i] = s * v[i];
                for j in 0..3 {
                    a[(3 * k + i, j)] = s * rx[(i, j)];
                }
            }
        }
        let omega = a.clone().svd(true, true).solve(&b, 1e-14).unwrap();
        let resid = &b - &a * omega;
        let t_min = 0.5 * resid.norm_squared();
        let mq = m.mass_matrix(&q);
        let qd = nalgebra::DVector::from_column_slice(&qdot);
        let t = 0.5 * qd.dot(&(&mq * &qd));
        assert!((t - t_min).abs() < 1e-10 * t_min, "{t} vs {t_min}");
    }
}
