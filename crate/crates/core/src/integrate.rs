//! Time-T flow maps of phase-space vector fields.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Boundary, Interval, PhaseState};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scheme {
    ExplicitEuler,
    Rk4,
}

impl std::str::FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "explicit-euler" | "euler" => Ok(Scheme::ExplicitEuler),
            "rk4" => Ok(Scheme::Rk4),
            other => Err(Error::Integrator(format!("unknown scheme {other:?}"))),
        }
    }
}

/// Fixed-step integration of length `t_final` (model time units) in `steps` steps.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct IntegratorSpec {
    pub scheme: Scheme,
    pub steps: usize,
    pub t_final: f64,
}

impl IntegratorSpec {
    pub fn new(scheme: Scheme, steps: usize, t_final: f64) -> Result<Self> {
        let spec = Self {
            scheme,
            steps,
            t_final,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn euler(steps: usize, t_final: f64) -> Self {
        Self {
            scheme: Scheme::ExplicitEuler,
            steps,
            t_final,
        }
    }

    pub fn rk4(steps: usize, t_final: f64) -> Self {
        Self {
            scheme: Scheme::Rk4,
            steps,
            t_final,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::Integrator("steps must be positive".into()));
        }
        if !self.t_final.is_finite() {
            return Err(Error::Integrator("integration time must be finite".into()));
        }
        Ok(())
    }

    pub fn dt(&self) -> f64 {
        self.t_final / self.steps as f64
    }

    /// Same scheme and step size over a different horizon.
    pub fn with_time(&self, t_final: f64, steps: usize) -> Self {
        Self {
            scheme: self.scheme,
            steps,
            t_final,
        }
    }
}

/// Autonomous field on a phase space `z = [q..., p...]` of dimension `2 · half_dim`.
pub trait VectorField: Sync {
    fn half_dim(&self) -> usize;

    fn eval(&self, z: &[f64], dz: &mut [f64]) -> Result<()>;
}

/// Adapter for closures.
pub struct FnField<F> {
    pub half_dim: usize,
    pub f: F,
}

impl<F> VectorField for FnField<F>
where
    F: Fn(&[f64], &mut [f64]) -> Result<()> + Sync,
{
    fn half_dim(&self) -> usize {
        self.half_dim
    }

    fn eval(&self, z: &[f64], dz: &mut [f64]) -> Result<()> {
        (self.f)(z, dz)
    }
}

/// Folds coordinates back into their intervals: periodic coordinates wrap,
/// reflecting coordinates mirror and flip the conjugate momentum.
pub fn apply_boundaries(z: &mut [f64], bounds: &[Interval]) {
    let d = z.len() / 2;
    for (k, iv) in bounds.iter().enumerate().take(d) {
        let w = iv.hi - iv.lo;
        match iv.boundary {
            Boundary::UnboundedTruncated => {}
            Boundary::Periodic => {
                if z[k] < iv.lo || z[k] >= iv.hi {
                    z[k] = iv.lo + (z[k] - iv.lo).rem_euclid(w);
                }
            }
            Boundary::Reflecting => {
                if z[k] < iv.lo || z[k] > iv.hi {
                    let y = (z[k] - iv.lo).rem_euclid(2.0 * w);
                    if y <= w {
                        z[k] = iv.lo + y;
                    } else {
                        z[k] = iv.lo + 2.0 * w - y;
                        z[d + k] = -z[d + k];
                    }
                }
            }
        }
    }
}

/// Reusable stage buffers.
#[derive(Clone, Debug, Default)]
pub struct Workspace {
    k1: Vec<f64>,
    k2: Vec<f64>,
    k3: Vec<f64>,
    k4: Vec<f64>,
    tmp: Vec<f64>,
}

impl Workspace {
    fn resize(&mut self, n: usize) {
        for v in [
            &mut self.k1,
            &mut self.k2,
            &mut self.k3,
            &mut self.k4,
            &mut self.tmp,
        ] {
            v.resize(n, 0.0);
        }
    }
}

/// One step of length `dt` in place (no boundary handling).
pub fn step<F: VectorField + ?Sized>(
    field: &F,
    scheme: Scheme,
    z: &mut [f64],
    dt: f64,
    ws: &mut Workspace,
) -> Result<()> {
    let n = z.len();
    ws.resize(n);
    match scheme {
        Scheme::ExplicitEuler => {
            field.eval(z, &mut ws.k1)?;
            for (x, k) in z.iter_mut().zip(&ws.k1) {
                *x += dt * k;
            }
        }
        Scheme::Rk4 => {
            field.eval(z, &mut ws.k1)?;
            for i in 0..n {
                ws.tmp[i] = z[i] + 0.5 * dt * ws.k1[i];
            }
            field.eval(&ws.tmp, &mut ws.k2)?;
            for i in 0..n {
                ws.tmp[i] = z[i] + 0.5 * dt * ws.k2[i];
            }
            field.eval(&ws.tmp, &mut ws.k3)?;
            for i in 0..n {
                ws.tmp[i] = z[i] + dt * ws.k3[i];
            }
            field.eval(&ws.tmp, &mut ws.k4)?;
            for i in 0..n {
                z[i] += dt / 6.0 * (ws.k1[i] + 2.0 * ws.k2[i] + 2.0 * ws.k3[i] + ws.k4[i]);
            }
        }
    }
    Ok(())
}

/// Integrates `z` in place for `spec.t_final`, applying boundaries after every step.
pub fn flow_in_place<F: VectorField + ?Sized>(
    field: &F,
    z: &mut [f64],
    spec: &IntegratorSpec,
    bounds: &[Interval],
    ws: &mut Workspace,
) -> Result<()> {
    spec.validate()?;
    if spec.t_final == 0.0 {
        return Ok(());
    }
    let dt = spec.dt();
    for s in 0..spec.steps {
        step(field, spec.scheme, z, dt, ws).map_err(|e| match e {
            Error::Evaluation { .. } => Error::BlowUp { step: s },
            other => other,
        })?;
        if z.iter().any(|x| !x.is_finite()) {
            return Err(Error::BlowUp { step: s });
        }
        apply_boundaries(z, bounds);
    }
    Ok(())
}

/// Approximates Φ^T(z₀).
pub fn flow<F: VectorField + ?Sized>(
    field: &F,
    z0: &PhaseState,
    spec: &IntegratorSpec,
    bounds: &[Interval],
) -> Result<PhaseState> {
    if z0.q.iter().chain(&z0.p).any(|x| !x.is_finite()) {
        return Err(Error::BlowUp { step: 0 });
    }
    let mut z = z0.to_vec();
    flow_in_place(field, &mut z, spec, bounds, &mut Workspace::default())?;
    Ok(PhaseState::from_slice(&z))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn free_bounds(d: usize) -> Vec<Interval> {
        vec![Interval::new(-1e9, 1e9, Boundary::UnboundedTruncated); d]
    }

    #[test]
    fn zero_field_is_identity() {
        let f = FnField {
            half_dim: 2,
            f: |_: &[f64], dz: &mut [f64]| {
                dz.iter_mut().for_each(|x| *x = 0.0);
                Ok(())
            },
        };
        let z0 = PhaseState::new(vec![0.3, -1.0], vec![2.0, 0.5]);
        for spec in [IntegratorSpec::euler(10, 1.0), IntegratorSpec::rk4(7, 3.0)] {
            assert_eq!(flow(&f, &z0, &spec, &free_bounds(2)).unwrap(), z0);
        }
    }

    #[test]
    fn euler_is_exact_for_free_particle() {
        let m = 2.0;
        let f = FnField {
            half_dim: 1,
            f: move |z: &[f64], dz: &mut [f64]| {
                dz[0] = z[1] / m;
                dz[1] = 0.0;
                Ok(())
            },
        };
        let z = flow(
            &f,
            &PhaseState::new(vec![0.5], vec![3.0]),
            &IntegratorSpec::euler(10, 0.8),
            &free_bounds(1),
        )
        .unwrap();
        assert!((z.q[0] - (0.5 + 3.0 * 0.8 / m)).abs() < 1e-14);
        assert_eq!(z.p[0], 3.0);
    }

    #[test]
    fn blow_up_reports_step() {
        let f = FnField {
            half_dim: 1,
            f: |z: &[f64], dz: &mut [f64]| {
                dz[0] = z[0] * z[0] * 1e300;
                dz[1] = 0.0;
                Ok(())
            },
        };
        let err = flow(
            &f,
            &PhaseState::new(vec![1.0], vec![0.0]),
            &IntegratorSpec::euler(5, 1.0),
            &free_bounds(1),
        );
        assert!(matches!(err, Err(Error::BlowUp { .. })));
    }

    #[test]
    fn reflecting_and_periodic_boundaries() {
        let bounds = [
            Interval::new(0.0, 1.0, Boundary::Reflecting),
            Interval::new(0.0, 2.0, Boundary::Periodic),
        ];
        let mut z = [1.25, 2.5, 1.0, 1.0];
        apply_boundaries(&mut z, &bounds);
        assert!((z[0] - 0.75).abs() < 1e-15);
        assert_eq!(z[2], -1.0);
        assert!((z[1] - 0.5).abs() < 1e-15);
        assert_eq!(z[3], 1.0);
        // two reflections restore the momentum sign
        let mut z = [-1.25, 0.0, 1.0, 0.0];
        apply_boundaries(&mut z, &bounds);
        assert!((z[0] - 0.75).abs() < 1e-15);
        assert_eq!(z[2], 1.0);
    }

    #[test]
    fn invalid_spec() {
        assert!(IntegratorSpec::new(Scheme::Rk4, 0, 1.0).is_err());
        assert!(IntegratorSpec::new(Scheme::Rk4, 1, f64::NAN).is_err());
        assert_eq!("euler".parse::<Scheme>().unwrap(), Scheme::ExplicitEuler);
    }
}
