//! Tensor-decomposed potentials: sums of products of per-subsystem factors.

use std::fmt;
use std::sync::Arc;

type CustomFn = Arc<dyn Fn(&[f64], &mut [f64]) -> f64 + Send + Sync>;

/// A scalar function of one subsystem's configuration block.
///
/// The closed-form variants act on the first coordinate of the block.
#[derive(Clone)]
pub enum Factor {
    /// Σ cₙ xⁿ, coefficients in ascending order.
    Polynomial(Vec<f64>),
    /// scale · Σ cₙ cosⁿ x
    CosinePolynomial { scale: f64, coeffs: Vec<f64> },
    /// −k (cos(x − x₀) − 1)
    AngleBend { k: f64, theta0: f64 },
    /// f(x) − shift
    Shifted(Box<Factor>, f64),
    /// Arbitrary block function; writes the gradient into the slice and returns the value.
    Custom(CustomFn),
}

impl fmt::Debug for Factor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Factor::Polynomial(c) => f.debug_tuple("Polynomial").field(c).finish(),
            Factor::CosinePolynomial { scale, coeffs } => f
                .debug_struct("CosinePolynomial")
                .field("scale", scale)
                .field("coeffs", coeffs)
                .finish(),
            Factor::AngleBend { k, theta0 } => f
                .debug_struct("AngleBend")
                .field("k", k)
                .field("theta0", theta0)
                .finish(),
            Factor::Shifted(inner, s) => f.debug_tuple("Shifted").field(inner).field(s).finish(),
            Factor::Custom(_) => f.write_str("Custom(..)"),
        }
    }
}

fn poly(coeffs: &[f64], x: f64) -> (f64, f64) {
    let mut v = 0.0;
    let mut dv = 0.0;
    for &c in coeffs.iter().rev() {
        dv = dv * x + v;
        v = v * x + c;
    }
    (v, dv)
}

impl Factor {
    pub fn value(&self, q: &[f64]) -> f64 {
        match self {
            Factor::Polynomial(c) => poly(c, q[0]).0,
            Factor::CosinePolynomial { scale, coeffs } => scale * poly(coeffs, q[0].cos()).0,
            Factor::AngleBend { k, theta0 } => -k * ((q[0] - theta0).cos() - 1.0),
            Factor::Shifted(inner, s) => inner.value(q) - s,
            Factor::Custom(f) => {
                let mut g = vec![0.0; q.len()];
                f(q, &mut g)
            }
        }
    }

    /// Value and gradient with respect to the block coordinates.
    pub fn value_and_gradient(&self, q: &[f64], grad: &mut [f64]) -> f64 {
        grad.iter_mut().for_each(|g| *g = 0.0);
        match self {
            Factor::Polynomial(c) => {
                let (v, dv) = poly(c, q[0]);
                grad[0] = dv;
                v
            }
            Factor::CosinePolynomial { scale, coeffs } => {
                let (s, c) = q[0].sin_cos();
                let (v, dv) = poly(coeffs, c);
                grad[0] = -scale * dv * s;
                scale * v
            }
            Factor::AngleBend { k, theta0 } => {
                let (s, c) = (q[0] - theta0).sin_cos();
                grad[0] = k * s;
                -k * (c - 1.0)
            }
            Factor::Shifted(inner, s) => inner.value_and_gradient(q, grad) - s,
            Factor::Custom(f) => f(q, grad),
        }
    }
}

/// `coefficient · Π factors`, each factor attached to one subsystem.
/// Subsystems not listed contribute the constant 1.
#[derive(Clone, Debug)]
pub struct ProductTerm {
    pub coefficient: f64,
    pub factors: Vec<(usize, Factor)>,
}

impl ProductTerm {
    pub fn constant(c: f64) -> Self {
        Self {
            coefficient: c,
            factors: Vec::new(),
        }
    }

    pub fn factor_for(&self, subsystem: usize) -> Option<&Factor> {
        self.factors
            .iter()
            .find(|(s, _)| *s == subsystem)
            .map(|(_, f)| f)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fd(f: &Factor, x: f64) -> f64 {
        let h = 1e-6;
        (f.value(&[x + h]) - f.value(&[x - h])) / (2.0 * h)
    }

    #[test]
    fn gradients_match_finite_differences() {
        let factors = [
            Factor::Polynomial(vec![3.0, -0.75, -3.0, 0.25, 1.5]),
            Factor::CosinePolynomial {
                scale: 8.314,
                coeffs: vec![1.116, -1.462, -1.578, 0.368, 3.156, 3.788],
            },
            Factor::AngleBend {
                k: 65.0,
                theta0: 1.91,
            },
            Factor::Shifted(
                Box::new(Factor::Polynomial(vec![3.0, 0.0, -4.0, 0.0, 2.0])),
                1.0,
            ),
        ];
        for f in &factors {
            for &x in &[-1.3, -0.2, 0.4, 1.7, 2.9] {
                let mut g = [0.0];
                let v = f.value_and_gradient(&[x], &mut g);
                assert!((v - f.value(&[x])).abs() < 1e-12);
                assert!(
                    (g[0] - fd(f, x)).abs() < 1e-6 * (1.0 + g[0].abs()),
                    "{f:?} at {x}"
                );
            }
        }
    }
}
