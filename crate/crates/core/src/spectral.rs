//! Dominant eigenpairs of stochastic matrices and almost-invariant sets.
//!
//! The main solver is a thick-restart Arnoldi iteration. After each cycle the
//! wanted Ritz vectors of the projected matrix are orthonormalized into a real
//! basis `Y`, which gives the Krylov decomposition `A (V Y) = (V Y) S + v bᵀ`
//! with `S = Yᵀ H Y`; expansion then continues from the old residual vector.

use nalgebra::{Complex, DMatrix, DVector};
use serde::{Deserialize, Serialize};
use tracing::debug;

use crate::error::{Error, Result};
use crate::partition::TensorPartition;
use crate::rng::splitmix64;
use crate::ulam::StochasticMatrix;

pub use crate::ulam::invariance_ratio;

pub type C64 = Complex<f64>;

/// Imaginary parts at or below this magnitude are treated as zero.
pub const REAL_TOL: f64 = 1e-10;

pub trait LinearOperator: Sync {
    fn dim(&self) -> usize;

    fn apply(&self, x: &[f64], y: &mut [f64]);
}

impl LinearOperator for StochasticMatrix {
    fn dim(&self) -> usize {
        self.n()
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        self.matvec(x, y)
    }
}

impl LinearOperator for DMatrix<f64> {
    fn dim(&self) -> usize {
        self.nrows()
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        let r = self * DVector::from_column_slice(x);
        y.copy_from_slice(r.as_slice());
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EigsOptions {
    pub tol: f64,
    pub max_restarts: usize,
    /// Krylov subspace dimension; `None` picks `max(2k + 20, 40)` capped at n.
    pub krylov_dim: Option<usize>,
}

impl Default for EigsOptions {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_restarts: 2000,
            krylov_dim: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SpectralResult {
    /// Sorted by descending modulus, ties by descending real part.
    pub values: Vec<C64>,
    /// Real eigenvectors (2-norm one, largest-magnitude entry positive). For a
    /// complex eigenvalue this holds the normalized real part.
    pub vectors: Vec<Vec<f64>>,
    pub residuals: Vec<f64>,
    pub method: String,
    pub iterations: usize,
}

impl SpectralResult {
    pub fn is_real(&self, i: usize) -> bool {
        self.values[i].im.abs() <= REAL_TOL
    }

    pub fn real_values(&self) -> Vec<f64> {
        self.values.iter().map(|v| v.re).collect()
    }
}

fn by_modulus(a: &C64, b: &C64) -> std::cmp::Ordering {
    b.norm()
        .total_cmp(&a.norm())
        .then(b.re.total_cmp(&a.re))
        .then(b.im.total_cmp(&a.im))
}

/// Flips `v` so its largest-magnitude entry (first one on ties) is positive.
pub fn sign_normalize(v: &mut [f64]) {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if x.abs() > v[best].abs() + 1e-14 * v[best].abs() {
            best = i;
        }
    }
    if v.get(best).is_some_and(|&x| x < 0.0) {
        v.iter_mut().for_each(|x| *x = -*x);
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Deterministic pseudo-random vector in [-1, 1]ⁿ.
fn fill_vector(n: usize, seed: u64) -> Vec<f64> {
    (0..n)
        .map(|i| {
            let h = splitmix64(seed.wrapping_mul(0x9e37_79b9).wrapping_add(i as u64));
            (h >> 11) as f64 / (1u64 << 53) as f64 * 2.0 - 1.0
        })
        .collect()
}

/// Two passes of classical Gram–Schmidt against `basis`; returns the coefficients.
fn orthogonalize(w: &mut [f64], basis: &[Vec<f64>]) -> Vec<f64> {
    let mut h = vec![0.0; basis.len()];
    for _ in 0..2 {
        for (k, v) in basis.iter().enumerate() {
            let c = dot(w, v);
            h[k] += c;
            w.iter_mut().zip(v).for_each(|(x, y)| *x -= c * y);
        }
    }
    h
}

/// Eigenvector of a small dense matrix for eigenvalue `theta` by inverse iteration.
fn small_eigenvector(h: &DMatrix<f64>, theta: C64, seed: u64) -> DVector<C64> {
    let m = h.nrows();
    let shift = theta + C64::new(1e-10 * theta.norm().max(1.0), 0.0);
    let a = DMatrix::from_fn(m, m, |i, j| {
        let x = C64::new(h[(i, j)], 0.0);
        if i == j {
            x - shift
        } else {
            x
        }
    });
    let lu = a.lu();
    let start = fill_vector(2 * m, seed);
    let mut y = DVector::from_fn(m, |i, _| C64::new(start[i], start[m + i]));
    for _ in 0..3 {
        match lu.solve(&y) {
            Some(x) if x.iter().all(|c| c.re.is_finite() && c.im.is_finite()) => {
                let nrm = x.norm();
                if nrm == 0.0 {
                    break;
                }
                y = x / C64::new(nrm, 0.0);
            }
            _ => break,
        }
    }
    // rotate so the largest entry is real
    let (imax, _) =
        y.iter().enumerate().fold(
            (0, 0.0),
            |acc, (i, c)| if c.norm() > acc.1 { (i, c.norm()) } else { acc },
        );
    let phase = y[imax] / C64::new(y[imax].norm(), 0.0);
    y.map(|c| c / phase)
}

struct Krylov {
    v: Vec<Vec<f64>>,
    /// (cols + 1) × cols coefficients of `A V_cols = V_{cols+1} H`.
    h: DMatrix<f64>,
    breakdowns: u64,
}

impl Krylov {
    fn cols(&self) -> usize {
        self.h.ncols()
    }

    fn expand<A: LinearOperator + ?Sized>(&mut self, a: &A, m: usize) {
        let n = a.dim();
        let mut w = vec![0.0; n];
        while self.cols() < m {
            let j = self.cols();
            a.apply(&self.v[j], &mut w);
            let scale = norm(&w);
            let coef = orthogonalize(&mut w, &self.v);
            let beta = norm(&w);
            self.h = self.h.clone().resize(j + 2, j + 1, 0.0);
            for (k, c) in coef.iter().enumerate() {
                self.h[(k, j)] = *c;
            }
            if self.v.len() == n {
                // the basis spans the whole space, so the decomposition is exact
                self.v.push(vec![0.0; n]);
                return;
            }
            if beta > 1e-12 * scale.max(1e-300) && beta > 1e-300 {
                self.h[(j + 1, j)] = beta;
                w.iter_mut().for_each(|x| *x /= beta);
                self.v.push(w.clone());
            } else {
                // invariant subspace found: continue with a fresh orthogonal direction
                loop {
                    self.breakdowns += 1;
                    let mut r = fill_vector(n, 0x5eed ^ self.breakdowns);
                    orthogonalize(&mut r, &self.v);
                    let nr = norm(&r);
                    if nr > 1e-8 {
                        r.iter_mut().for_each(|x| *x /= nr);
                        self.v.push(r);
                        break;
                    }
                }
            }
        }
    }
}

/// Ritz data of the current decomposition.
struct Ritz {
    values: Vec<C64>,
    vectors: Vec<DVector<C64>>,
    residuals: Vec<f64>,
}

fn ritz(kr: &Krylov, want: usize) -> Ritz {
    let m = kr.cols();
    let hm = kr.h.rows(0, m).into_owned();
    let last = kr.h.row(m).into_owned();
    let mut values: Vec<C64> = hm.complex_eigenvalues().iter().cloned().collect();
    values.sort_by(by_modulus);
    let mut want = want.min(m);
    // keep conjugate pairs together
    if want < m
        && values[want - 1].im.abs() > REAL_TOL
        && (values[want - 1].conj() - values[want]).norm() < 1e-8
    {
        want += 1;
    }
    values.truncate(want);
    let mut vectors = Vec::with_capacity(want);
    let mut residuals = Vec::with_capacity(want);
    for (i, &theta) in values.iter().enumerate() {
        let y = small_eigenvector(&hm, theta, 17 + i as u64);
        let r: C64 = last.iter().zip(y.iter()).map(|(a, b)| b * *a).sum();
        residuals.push(r.norm());
        vectors.push(y);
    }
    Ritz {
        values,
        vectors,
        residuals,
    }
}

fn restart(kr: &mut Krylov, ritz: &Ritz) {
    let m = kr.cols();
    let n = kr.v[0].len();
    // real orthonormal basis of the kept Ritz vectors
    let mut basis: Vec<DVector<f64>> = Vec::new();
    for (theta, y) in ritz.values.iter().zip(&ritz.vectors) {
        let parts: Vec<DVector<f64>> = if theta.im.abs() <= REAL_TOL {
            vec![y.map(|c| c.re)]
        } else if theta.im > 0.0 {
            vec![y.map(|c| c.re), y.map(|c| c.im)]
        } else {
            vec![]
        };
        for mut p in parts {
            for _ in 0..2 {
                for b in &basis {
                    let c = b.dot(&p);
                    p -= b * c;
                }
            }
            let nrm = p.norm();
            if nrm > 1e-8 {
                basis.push(p / nrm);
            }
        }
    }
    let p = basis.len();
    let y = DMatrix::from_columns(&basis);
    let hm = kr.h.rows(0, m).into_owned();
    let s = y.transpose() * &hm * &y;
    let b = kr.h.row(m) * &y;
    let mut v_new = Vec::with_capacity(p + 1);
    for c in 0..p {
        let mut w = vec![0.0; n];
        for (k, vk) in kr.v.iter().take(m).enumerate() {
            let coef = y[(k, c)];
            if coef != 0.0 {
                w.iter_mut().zip(vk).for_each(|(x, v)| *x += coef * v);
            }
        }
        v_new.push(w);
    }
    v_new.push(kr.v[m].clone());
    let mut h = DMatrix::zeros(p + 1, p);
    h.view_mut((0, 0), (p, p)).copy_from(&s);
    h.view_mut((p, 0), (1, p)).copy_from(&b);
    kr.v = v_new;
    kr.h = h;
}

/// Dominant eigenpairs of a general linear operator by thick-restart Arnoldi.
pub fn arnoldi_eigs<A: LinearOperator + ?Sized>(
    a: &A,
    k: usize,
    opts: &EigsOptions,
) -> Result<SpectralResult> {
    let n = a.dim();
    if k == 0 || k > n {
        return Err(Error::Spectral {
            message: format!("requested {k} eigenpairs of a {n}×{n} operator"),
            residuals: vec![],
        });
    }
    let m = opts
        .krylov_dim
        .unwrap_or((2 * k + 20).max(40))
        .max(k + 2)
        .min(n);
    let keep = (k + (m - k) / 2).min(m.saturating_sub(1)).max(k);
    // internal target: Ritz residuals well below the reported tolerance
    let inner_tol = (opts.tol * 1e-2).max(1e-14);

    let start = vec![1.0 / (n as f64).sqrt(); n];
    let mut kr = Krylov {
        v: vec![start],
        h: DMatrix::zeros(1, 0),
        breakdowns: 0,
    };
    let mut restarts = 0;
    let mut last_res;
    loop {
        kr.expand(a, m);
        let r = ritz(&kr, keep);
        let head = k.min(r.values.len());
        last_res = r.residuals[..head].to_vec();
        let converged = last_res.iter().all(|&x| x <= inner_tol);
        if converged || kr.cols() == n && kr.h.row(kr.cols()).amax() == 0.0 {
            return finish(a, &kr, &r, k, opts, restarts);
        }
        if restarts >= opts.max_restarts {
            // accept if the explicit residuals already meet the reported tolerance
            return finish(a, &kr, &r, k, opts, restarts).map_err(|_| Error::Spectral {
                message: format!("Arnoldi did not converge after {restarts} restarts"),
                residuals: last_res.clone(),
            });
        }
        restart(&mut kr, &r);
        restarts += 1;
    }
}

fn finish<A: LinearOperator + ?Sized>(
    a: &A,
    kr: &Krylov,
    r: &Ritz,
    k: usize,
    opts: &EigsOptions,
    restarts: usize,
) -> Result<SpectralResult> {
    let n = a.dim();
    let m = kr.cols();
    let mut values = Vec::with_capacity(k);
    let mut vectors = Vec::with_capacity(k);
    let mut residuals = Vec::with_capacity(k);
    let mut ax = vec![0.0; n];
    let mut ay = vec![0.0; n];
    for i in 0..k {
        let mut theta = r.values[i];
        let y = &r.vectors[i];
        let mut re = vec![0.0; n];
        let mut im = vec![0.0; n];
        for (kk, vk) in kr.v.iter().take(m).enumerate() {
            let c = y[kk];
            re.iter_mut().zip(vk).for_each(|(x, v)| *x += c.re * v);
            im.iter_mut().zip(vk).for_each(|(x, v)| *x += c.im * v);
        }
        let res = if theta.im.abs() <= REAL_TOL {
            theta.im = 0.0;
            let nr = norm(&re);
            re.iter_mut().for_each(|x| *x /= nr);
            a.apply(&re, &mut ax);
            norm(
                &ax.iter()
                    .zip(&re)
                    .map(|(p, x)| p - theta.re * x)
                    .collect::<Vec<_>>(),
            )
        } else {
            let nr = (dot(&re, &re) + dot(&im, &im)).sqrt();
            re.iter_mut().for_each(|x| *x /= nr);
            im.iter_mut().for_each(|x| *x /= nr);
            a.apply(&re, &mut ax);
            a.apply(&im, &mut ay);
            let rr: f64 = (0..n)
                .map(|j| {
                    let a1 = ax[j] - theta.re * re[j] + theta.im * im[j];
                    let a2 = ay[j] - theta.re * im[j] - theta.im * re[j];
                    a1 * a1 + a2 * a2
                })
                .sum();
            let nre = norm(&re);
            re.iter_mut().for_each(|x| *x /= nre);
            rr.sqrt()
        };
        sign_normalize(&mut re);
        values.push(theta);
        vectors.push(re);
        residuals.push(res);
    }
    if residuals.iter().any(|&x| !(x <= opts.tol)) {
        return Err(Error::Spectral {
            message: "eigenpair residuals above tolerance".into(),
            residuals,
        });
    }
    debug!(restarts, ?residuals, "Arnoldi converged");
    Ok(SpectralResult {
        values,
        vectors,
        residuals,
        method: format!("thick-restart-arnoldi(m={m})"),
        iterations: restarts,
    })
}

/// The `k` largest-modulus eigenpairs of a column-stochastic matrix.
pub fn dominant_eigs(p: &StochasticMatrix, k: usize, opts: &EigsOptions) -> Result<SpectralResult> {
    arnoldi_eigs(p, k, opts)
}

/// Power iteration with Wielandt deflation by left/right eigenvector pairs,
/// for the `k ≤ 3` leading real eigenvalues. Used as an independent check.
pub fn power_deflation<A: LinearOperator + ?Sized, B: LinearOperator + ?Sized>(
    a: &A,
    at: &B,
    k: usize,
    tol: f64,
    max_iter: usize,
) -> Result<SpectralResult> {
    let n = a.dim();
    if k == 0 || k > 3.min(n) {
        return Err(Error::Spectral {
            message: format!("power deflation supports 1 ≤ k ≤ 3, got {k}"),
            residuals: vec![],
        });
    }
    let mut found: Vec<(f64, Vec<f64>, Vec<f64>)> = Vec::new();
    let mut values = Vec::new();
    let mut vectors = Vec::new();
    let mut residuals = Vec::new();
    for idx in 0..k {
        let deflated = |op: &dyn Fn(&[f64], &mut [f64]), x: &[f64], y: &mut [f64], left: bool| {
            op(x, y);
            for (lam, r, l) in &found {
                // A − λ r lᵀ / (lᵀ r), and its transpose for the left iteration
                let (u, w) = if left { (l, r) } else { (r, l) };
                let c = lam * dot(w, x) / dot(l, r);
                y.iter_mut().zip(u).for_each(|(yi, ui)| *yi -= c * ui);
            }
        };
        let apply_a = |x: &[f64], y: &mut [f64]| a.apply(x, y);
        let apply_at = |x: &[f64], y: &mut [f64]| at.apply(x, y);
        let iterate = |left: bool| -> Result<(f64, Vec<f64>, f64)> {
            let mut x = fill_vector(n, 101 + idx as u64 + if left { 7 } else { 0 });
            let nx = norm(&x);
            x.iter_mut().for_each(|v| *v /= nx);
            let mut y = vec![0.0; n];
            let mut lam = 0.0;
            for it in 0..max_iter {
                if left {
                    deflated(&apply_at, &x, &mut y, true);
                } else {
                    deflated(&apply_a, &x, &mut y, false);
                }
                lam = dot(&x, &y);
                let res = norm(
                    &y.iter()
                        .zip(&x)
                        .map(|(a, b)| a - lam * b)
                        .collect::<Vec<_>>(),
                );
                if res <= tol && it > 0 {
                    return Ok((lam, x, res));
                }
                let ny = norm(&y);
                if ny == 0.0 {
                    return Ok((0.0, x, 0.0));
                }
                x.iter_mut().zip(&y).for_each(|(xi, yi)| *xi = yi / ny);
            }
            Err(Error::Spectral {
                message: format!(
                    "power iteration for eigenvalue {} stalled at {lam}",
                    idx + 1
                ),
                residuals: vec![],
            })
        };
        let (lam, mut r, res) = iterate(false)?;
        let (_, l, _) = iterate(true)?;
        sign_normalize(&mut r);
        values.push(C64::new(lam, 0.0));
        vectors.push(r.clone());
        residuals.push(res);
        found.push((lam, r, l));
    }
    Ok(SpectralResult {
        values,
        vectors,
        residuals,
        method: "power-deflation".into(),
        iterations: max_iter,
    })
}

/// Full spectrum of a small dense matrix with eigenvectors from the null space
/// of `A − λI` (real eigenvalues only; complex ones get an empty vector).
pub fn dense_eigs(a: &DMatrix<f64>) -> SpectralResult {
    let n = a.nrows();
    let mut values: Vec<C64> = a.complex_eigenvalues().iter().cloned().collect();
    values.sort_by(by_modulus);
    let mut vectors = Vec::with_capacity(n);
    let mut residuals = Vec::with_capacity(n);
    for v in values.iter_mut() {
        if v.im.abs() > REAL_TOL {
            vectors.push(Vec::new());
            residuals.push(f64::NAN);
            continue;
        }
        v.im = 0.0;
        let shifted = a - DMatrix::identity(n, n) * v.re;
        let svd = shifted.svd(false, true);
        let vt = svd.v_t.expect("requested");
        let (imin, _) =
            svd.singular_values
                .iter()
                .enumerate()
                .fold(
                    (0, f64::INFINITY),
                    |acc, (i, &s)| if s < acc.1 { (i, s) } else { acc },
                );
        let mut x: Vec<f64> = vt.row(imin).iter().cloned().collect();
        let nx = norm(&x);
        x.iter_mut().for_each(|e| *e /= nx);
        sign_normalize(&mut x);
        let ax = a * DVector::from_column_slice(&x);
        residuals.push(norm(
            &ax.iter()
                .zip(&x)
                .map(|(p, q)| p - v.re * q)
                .collect::<Vec<_>>(),
        ));
        vectors.push(x);
    }
    SpectralResult {
        values,
        vectors,
        residuals,
        method: "dense-schur-svd".into(),
        iterations: 0,
    }
}

/// Nonnegative unit-mass vector v with P v = v.
pub fn invariant_vector(p: &StochasticMatrix, opts: &EigsOptions) -> Result<Vec<f64>> {
    let r = dominant_eigs(p, 1, opts)?;
    if (r.values[0] - C64::new(1.0, 0.0)).norm() > 1e-8 {
        return Err(Error::Spectral {
            message: format!("leading eigenvalue {} is not 1", r.values[0]),
            residuals: r.residuals,
        });
    }
    let mut v = r.vectors.into_iter().next().expect("one vector");
    let total: f64 = v.iter().sum();
    if total < 0.0 {
        v.iter_mut().for_each(|x| *x = -*x);
    }
    v.iter_mut().for_each(|x| *x = x.max(0.0));
    let total: f64 = v.iter().sum();
    v.iter_mut().for_each(|x| *x /= total);
    Ok(v)
}

/// Supports of the positive and negative parts of a signed vector.
pub fn almost_invariant_sets(
    v: &[f64],
    part: Option<&TensorPartition>,
) -> Result<(Vec<usize>, Vec<usize>)> {
    if let Some(part) = part {
        if part.n_cells() != v.len() {
            return Err(Error::Layout(format!(
                "vector of length {} on {} cells",
                v.len(),
                part.n_cells()
            )));
        }
    }
    let plus: Vec<usize> = (0..v.len()).filter(|&i| v[i] > 0.0).collect();
    let minus: Vec<usize> = (0..v.len()).filter(|&i| v[i] < 0.0).collect();
    if plus.is_empty() || minus.is_empty() {
        return Err(Error::DegenerateDecomposition);
    }
    Ok((plus, minus))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_state_chain() {
        let (a, b) = (0.2, 0.1);
        let p = StochasticMatrix::from_dense(2, &[1.0 - a, b, a, 1.0 - b]).unwrap();
        let r = dominant_eigs(&p, 2, &EigsOptions::default()).unwrap();
        assert!((r.values[0].re - 1.0).abs() < 1e-12);
        assert!((r.values[1].re - (1.0 - a - b)).abs() < 1e-12);
        let v = invariant_vector(&p, &EigsOptions::default()).unwrap();
        assert!((v[0] - b / (a + b)).abs() < 1e-12);
        assert!((v[1] - a / (a + b)).abs() < 1e-12);
    }

    #[test]
    fn identity_has_repeated_unit_eigenvalue() {
        let p = StochasticMatrix::identity(50);
        let r = dominant_eigs(&p, 3, &EigsOptions::default()).unwrap();
        for i in 0..3 {
            assert!((r.values[i].re - 1.0).abs() < 1e-14);
            assert!(r.residuals[i] < 1e-12);
        }
    }

    #[test]
    fn doubly_stochastic_gives_uniform() {
        let n = 5;
        let mut a = vec![0.0; n * n];
        for i in 0..n {
            a[i * n + i] = 0.5;
            a[((i + 1) % n) * n + i] = 0.3;
            a[((i + 2) % n) * n + i] = 0.2;
        }
        let p = StochasticMatrix::from_dense(n, &a).unwrap();
        let v = invariant_vector(&p, &EigsOptions::default()).unwrap();
        assert!(v.iter().all(|x| (x - 0.2).abs() < 1e-12));
    }

    #[test]
    fn complex_pair_is_reported() {
        // cyclic permutation: eigenvalues are the cube roots of unity
        let p = StochasticMatrix::from_dense(3, &[0.0, 0.0, 1.0, 1.0, 0.0, 0.0, 0.0, 1.0, 0.0])
            .unwrap();
        let r = dominant_eigs(&p, 3, &EigsOptions::default()).unwrap();
        assert!(r.values.iter().all(|v| (v.norm() - 1.0).abs() < 1e-10));
        assert_eq!(r.values.iter().filter(|v| v.im.abs() > REAL_TOL).count(), 2);
    }

    #[test]
    fn sign_sets() {
        assert_eq!(
            almost_invariant_sets(&[1.0, -1.0], None).unwrap(),
            (vec![0], vec![1])
        );
        assert!(matches!(
            almost_invariant_sets(&[1.0, 0.0], None),
            Err(Error::DegenerateDecomposition)
        ));
    }

    #[test]
    fn sign_normalize_is_idempotent() {
        let mut v = vec![0.3, -0.9, 0.5];
        sign_normalize(&mut v);
        assert_eq!(v, vec![-0.3, 0.9, -0.5]);
        let w = v.clone();
        sign_normalize(&mut v);
        assert_eq!(v, w);
    }
}
