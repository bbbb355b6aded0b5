//! Ulam discretization of spatial transfer operators.
//!
//! Entry `(i, j)` of a [`StochasticMatrix`] is the estimated probability of
//! moving from cell `j` to cell `i`, so every column sums to one.

use std::fmt::Write as _;
use std::io::{BufRead, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use tracing::{debug, warn};

use crate::error::{Error, Result};
use crate::integrate::{flow_in_place, IntegratorSpec, VectorField, Workspace};
use crate::model::{Interval, ModelField};
use crate::partition::{Cell, TensorPartition};
use crate::rng::{RngSpec, StreamRng, CONTEXT_FULL};
use crate::sampling::{sample_conditional_momentum, sample_uniform_in_box, CanonicalEnsemble};

/// Provenance recorded with every assembled matrix.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MatrixMeta {
    pub model_id: String,
    pub grid: Vec<usize>,
    pub samples_per_cell: usize,
    pub t_final: f64,
    pub seed: u64,
    pub convention: String,
}

/// Sparse column-stochastic matrix stored both by column and by row.
#[derive(Clone, Debug, PartialEq)]
pub struct StochasticMatrix {
    n: usize,
    col_ptr: Vec<usize>,
    row_idx: Vec<usize>,
    col_vals: Vec<f64>,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    row_vals: Vec<f64>,
    /// Fraction of samples per column that escaped or failed to integrate.
    pub lost: Vec<f64>,
    pub meta: MatrixMeta,
}

impl StochasticMatrix {
    /// Builds from per-column sparse entries `(row, value)`; each column must sum to one.
    pub fn from_columns(
        columns: Vec<Vec<(usize, f64)>>,
        lost: Vec<f64>,
        meta: MatrixMeta,
    ) -> Result<Self> {
        let n = columns.len();
        let mut col_ptr = Vec::with_capacity(n + 1);
        let mut row_idx = Vec::new();
        let mut col_vals = Vec::new();
        col_ptr.push(0);
        for (j, mut col) in columns.into_iter().enumerate() {
            col.sort_by_key(|e| e.0);
            let mut sum = 0.0;
            for (i, v) in col {
                if i >= n || !(0.0..=1.0).contains(&v) {
                    return Err(Error::Format(format!("invalid entry ({i}, {j}) = {v}")));
                }
                if v == 0.0 {
                    continue;
                }
                sum += v;
                row_idx.push(i);
                col_vals.push(v);
            }
            if (sum - 1.0).abs() > 1e-12 {
                return Err(Error::Format(format!("column {j} sums to {sum}")));
            }
            col_ptr.push(row_idx.len());
        }
        // transpose into row storage; within a row, entries come out in column order
        let mut row_ptr = vec![0usize; n + 1];
        for &i in &row_idx {
            row_ptr[i + 1] += 1;
        }
        for i in 0..n {
            row_ptr[i + 1] += row_ptr[i];
        }
        let mut next = row_ptr.clone();
        let mut col_idx = vec![0; row_idx.len()];
        let mut row_vals = vec![0.0; row_idx.len()];
        for j in 0..n {
            for e in col_ptr[j]..col_ptr[j + 1] {
                let i = row_idx[e];
                col_idx[next[i]] = j;
                row_vals[next[i]] = col_vals[e];
                next[i] += 1;
            }
        }
        let lost = if lost.is_empty() { vec![0.0; n] } else { lost };
        Ok(Self {
            n,
            col_ptr,
            row_idx,
            col_vals,
            row_ptr,
            col_idx,
            row_vals,
            lost,
            meta,
        })
    }

    pub fn identity(n: usize) -> Self {
        Self::from_columns(
            (0..n).map(|j| vec![(j, 1.0)]).collect(),
            vec![],
            MatrixMeta::default(),
        )
        .expect("identity is stochastic")
    }

    /// Column-stochastic matrix from a dense row-major array.
    pub fn from_dense(n: usize, a: &[f64]) -> Result<Self> {
        let cols = (0..n)
            .map(|j| (0..n).map(|i| (i, a[i * n + j])).collect())
            .collect();
        Self::from_columns(cols, vec![], MatrixMeta::default())
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.col_vals.len()
    }

    pub fn column(&self, j: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        (self.col_ptr[j]..self.col_ptr[j + 1]).map(move |e| (self.row_idx[e], self.col_vals[e]))
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.column(j).find(|e| e.0 == i).map_or(0.0, |e| e.1)
    }

    pub fn column_sums(&self) -> Vec<f64> {
        (0..self.n)
            .map(|j| self.column(j).map(|e| e.1).sum())
            .collect()
    }

    /// Triplets `(row, col, value)` in column-major order.
    pub fn triplets(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.n).flat_map(move |j| self.column(j).map(move |(i, v)| (i, j, v)))
    }

    /// y = P x, parallel over rows with a fixed summation order.
    pub fn matvec(&self, x: &[f64], y: &mut [f64]) {
        y.par_iter_mut()
            .enumerate()
            .with_min_len(256)
            .for_each(|(i, yi)| {
                let mut s = 0.0;
                for e in self.row_ptr[i]..self.row_ptr[i + 1] {
                    s += self.row_vals[e] * x[self.col_idx[e]];
                }
                *yi = s;
            });
    }

    /// y = Pᵀ x.
    pub fn transpose_matvec(&self, x: &[f64], y: &mut [f64]) {
        y.par_iter_mut()
            .enumerate()
            .with_min_len(256)
            .for_each(|(j, yj)| {
                *yj = self.column(j).map(|(i, v)| v * x[i]).sum();
            });
    }

    /// Row-major dense copy.
    pub fn to_dense(&self) -> Vec<f64> {
        let mut a = vec![0.0; self.n * self.n];
        for (i, j, v) in self.triplets() {
            a[i * self.n + j] = v;
        }
        a
    }

    pub fn max_lost(&self) -> f64 {
        self.lost.iter().cloned().fold(0.0, f64::max)
    }

    /// Writes the documented triplet format: `#`-prefixed `key = value` header
    /// lines, a `n nnz` line, then one `row col value` line per entry (0-based,
    /// values printed with round-trip precision).
    pub fn write_triplets<W: Write>(
        &self,
        w: &mut W,
        extra_header: &[(String, String)],
    ) -> Result<()> {
        let m = &self.meta;
        writeln!(w, "# format = mftransfer-stochastic-triplets v1")?;
        writeln!(
            w,
            "# orientation = entry (i,j) is the probability of moving from cell j to cell i"
        )?;
        writeln!(w, "# model = {}", m.model_id)?;
        writeln!(w, "# grid = {}", join(&m.grid))?;
        writeln!(w, "# samples_per_cell = {}", m.samples_per_cell)?;
        writeln!(w, "# t_final = {:e}", m.t_final)?;
        writeln!(w, "# seed = {}", m.seed)?;
        writeln!(w, "# convention = {}", m.convention)?;
        writeln!(w, "# max_lost = {:e}", self.max_lost())?;
        for (k, v) in extra_header {
            writeln!(w, "# {k} = {v}")?;
        }
        writeln!(w, "{} {}", self.n, self.nnz())?;
        for (i, j, v) in self.triplets() {
            writeln!(w, "{i} {j} {v:?}")?;
        }
        Ok(())
    }

    pub fn read_triplets<R: BufRead>(r: R) -> Result<Self> {
        let mut meta = MatrixMeta::default();
        let mut size: Option<(usize, usize)> = None;
        let mut cols: Vec<Vec<(usize, f64)>> = Vec::new();
        for line in r.lines() {
            let line = line?;
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            if let Some(h) = line.strip_prefix('#') {
                if let Some((k, v)) = h.split_once('=') {
                    let (k, v) = (k.trim(), v.trim());
                    let bad = || Error::Format(format!("bad header value {k} = {v}"));
                    match k {
                        "model" => meta.model_id = v.to_string(),
                        "grid" => {
                            meta.grid = v
                                .split_whitespace()
                                .map(|s| s.parse().map_err(|_| bad()))
                                .collect::<Result<_>>()?
                        }
                        "samples_per_cell" => {
                            meta.samples_per_cell = v.parse().map_err(|_| bad())?
                        }
                        "t_final" => meta.t_final = v.parse().map_err(|_| bad())?,
                        "seed" => meta.seed = v.parse().map_err(|_| bad())?,
                        "convention" => meta.convention = v.to_string(),
                        _ => {}
                    }
                }
                continue;
            }
            let mut it = line.split_whitespace();
            let mut next = |what: &str| {
                it.next()
                    .ok_or_else(|| Error::Format(format!("missing {what} in line {line:?}")))
            };
            let perr = |e: &dyn std::fmt::Display| Error::Format(format!("{e} in line {line:?}"));
            match size {
                None => {
                    let n = next("n")?.parse().map_err(|e| perr(&e))?;
                    let nnz = next("nnz")?.parse().map_err(|e| perr(&e))?;
                    size = Some((n, nnz));
                    cols = vec![Vec::new(); n];
                }
                Some((n, _)) => {
                    let i: usize = next("row")?.parse().map_err(|e| perr(&e))?;
                    let j: usize = next("col")?.parse().map_err(|e| perr(&e))?;
                    let v: f64 = next("value")?.parse().map_err(|e| perr(&e))?;
                    if j >= n {
                        return Err(Error::Format(format!("column {j} out of range")));
                    }
                    cols[j].push((i, v));
                }
            }
        }
        let (_, nnz) = size.ok_or_else(|| Error::Format("missing size line".into()))?;
        let found: usize = cols.iter().map(Vec::len).sum();
        if found != nnz {
            return Err(Error::Format(format!(
                "expected {nnz} entries, found {found}"
            )));
        }
        Self::from_columns(cols, vec![], meta)
    }

    /// `row,col,value` CSV with a header line.
    pub fn write_csv<W: Write>(&self, w: &mut W) -> Result<()> {
        writeln!(w, "row,col,value")?;
        for (i, j, v) in self.triplets() {
            writeln!(w, "{i},{j},{v:?}")?;
        }
        Ok(())
    }

    pub fn save_triplets(&self, path: &Path, extra_header: &[(String, String)]) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_triplets(&mut f, extra_header)?;
        f.flush()?;
        Ok(())
    }

    pub fn load_triplets(path: &Path) -> Result<Self> {
        Self::read_triplets(std::io::BufReader::new(std::fs::File::open(path)?))
    }
}

fn join<T: std::fmt::Display>(xs: &[T]) -> String {
    let mut s = String::new();
    for (k, x) in xs.iter().enumerate() {
        if k > 0 {
            s.push(' ');
        }
        let _ = write!(s, "{x}");
    }
    s
}

/// Ulam assembly driver shared by the full and mean-field operators.
///
/// `endpoint` maps one start cell and that cell's generator to the projected
/// configuration after time T, or `None` for a lost sample. Cells are processed
/// in parallel, each with its own generator stream, and merged in cell order.
pub fn assemble_with<F>(
    part: &TensorPartition,
    samples: usize,
    rng: &RngSpec,
    context: u64,
    meta: MatrixMeta,
    endpoint: F,
) -> Result<StochasticMatrix>
where
    F: Fn(&Cell, &mut StreamRng, &mut Workspace) -> Option<Vec<f64>> + Sync,
{
    if samples == 0 {
        return Err(Error::Config("samples per cell must be positive".into()));
    }
    let n = part.n_cells();
    let results: Vec<(Vec<(usize, f64)>, f64)> = (0..n)
        .into_par_iter()
        .map_init(Workspace::default, |ws, j| {
            let cell = part.cell(j);
            let mut stream = rng.stream(context, j as u64);
            let mut counts: Vec<(usize, usize)> = Vec::new();
            let mut lost = 0usize;
            for _ in 0..samples {
                match endpoint(&cell, &mut stream, ws).and_then(|q| part.locate(&q)) {
                    Some(i) => match counts.iter_mut().find(|c| c.0 == i) {
                        Some(c) => c.1 += 1,
                        None => counts.push((i, 1)),
                    },
                    None => lost += 1,
                }
            }
            let kept = samples - lost;
            let col = if kept == 0 {
                vec![(j, 1.0)]
            } else {
                counts
                    .into_iter()
                    .map(|(i, c)| (i, c as f64 / kept as f64))
                    .collect()
            };
            (col, lost as f64 / samples as f64)
        })
        .collect();
    let (cols, lost): (Vec<_>, Vec<_>) = results.into_iter().unzip();
    let lossy = lost.iter().filter(|&&l| l > 0.0).count();
    if lossy > 0 {
        let worst = lost.iter().cloned().fold(0.0, f64::max);
        warn!(
            columns = lossy,
            worst, "renormalized columns with lost samples"
        );
    }
    let m = StochasticMatrix::from_columns(cols, lost, meta)?;
    debug!(n = m.n(), nnz = m.nnz(), "assembled stochastic matrix");
    Ok(m)
}

/// Samples a start point in `cell`, draws momenta, integrates, and projects onto q.
pub(crate) fn trajectory_endpoint<V: VectorField + ?Sized>(
    field: &V,
    bounds: &[Interval],
    spec: &IntegratorSpec,
    q0: Vec<f64>,
    p0: Vec<f64>,
    ws: &mut Workspace,
) -> Option<Vec<f64>> {
    let d = q0.len();
    let mut z = q0;
    z.extend_from_slice(&p0);
    flow_in_place(field, &mut z, spec, bounds, ws).ok()?;
    z.truncate(d);
    Some(z)
}

/// Ulam matrix of the full spatial transfer operator.
pub fn assemble_full_spatial(
    ens: &CanonicalEnsemble,
    part: &TensorPartition,
    samples: usize,
    spec: &IntegratorSpec,
    rng: &RngSpec,
) -> Result<StochasticMatrix> {
    spec.validate()?;
    let model = ens.model.as_ref();
    if part.dim() != model.dim() {
        return Err(Error::Partition(format!(
            "{}-dimensional partition for a {}-dimensional model",
            part.dim(),
            model.dim()
        )));
    }
    for (a, iv) in part.axes().iter().zip(model.domain()) {
        if (a.lo > iv.lo + 1e-12 || a.hi < iv.hi - 1e-12)
            && iv.boundary != crate::model::Boundary::UnboundedTruncated
        {
            return Err(Error::Partition(format!(
                "axis {a:?} does not cover {iv:?}"
            )));
        }
    }
    let field = ModelField { model };
    let meta = MatrixMeta {
        model_id: model.id(),
        grid: part.shape(),
        samples_per_cell: samples,
        t_final: spec.t_final,
        seed: rng.seed,
        convention: format!("{:?}", ens.convention),
    };
    assemble_with(
        part,
        samples,
        rng,
        CONTEXT_FULL,
        meta,
        |cell, stream, ws| {
            let q = sample_uniform_in_box(cell, stream);
            let p = sample_conditional_momentum(ens, &q, stream).ok()?;
            trajectory_endpoint(&field, model.domain(), spec, q, p, ws)
        },
    )
}

fn weighted_mass(
    p: &StochasticMatrix,
    from: &[usize],
    to: &[usize],
    weights: &[f64],
) -> Result<f64> {
    let n = p.n();
    let mut in_to = vec![false; n];
    for &i in to {
        in_to[i] = true;
    }
    let mut num = 0.0;
    let mut den = 0.0;
    for &j in from {
        let w = weights[j];
        if w < 0.0 {
            return Err(Error::UndefinedProbability(format!(
                "negative weight at cell {j}"
            )));
        }
        den += w;
        num += w * p.column(j).filter(|e| in_to[e.0]).map(|e| e.1).sum::<f64>();
    }
    if !(den > 0.0) {
        return Err(Error::UndefinedProbability(
            "source set carries no weight".into(),
        ));
    }
    Ok(num / den)
}

/// Weighted probability of moving from `from` into `to` in one step.
pub fn transition_probability(
    p: &StochasticMatrix,
    from: &[usize],
    to: &[usize],
    weights: &[f64],
) -> Result<f64> {
    if from.is_empty() || to.is_empty() {
        return Err(Error::UndefinedProbability("empty cell set".into()));
    }
    weighted_mass(p, from, to, weights)
}

/// Fraction of the weighted mass of `set` that stays in `set` after one step.
pub fn invariance_ratio(p: &StochasticMatrix, set: &[usize], weights: &[f64]) -> Result<f64> {
    if set.is_empty() {
        return Err(Error::UndefinedProbability("empty cell set".into()));
    }
    weighted_mass(p, set, set, weights)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn chain(a: f64, b: f64) -> StochasticMatrix {
        StochasticMatrix::from_dense(2, &[1.0 - a, b, a, 1.0 - b]).unwrap()
    }

    #[test]
    fn rejects_non_stochastic_columns() {
        assert!(StochasticMatrix::from_dense(2, &[0.5, 0.0, 0.4, 1.0]).is_err());
    }

    #[test]
    fn matvec_and_transpose() {
        let p = chain(0.2, 0.3);
        let mut y = [0.0; 2];
        p.matvec(&[1.0, 2.0], &mut y);
        assert_eq!(y, [0.8 + 0.6, 0.2 + 1.4]);
        p.transpose_matvec(&[1.0, 1.0], &mut y);
        assert_eq!(y, [1.0, 1.0]);
    }

    #[test]
    fn triplet_round_trip() {
        let mut p = chain(0.125, 0.3);
        p.meta = MatrixMeta {
            model_id: "m".into(),
            grid: vec![2],
            samples_per_cell: 8,
            t_final: 0.5,
            seed: 9,
            convention: "Boltzmann".into(),
        };
        let mut buf = Vec::new();
        p.write_triplets(&mut buf, &[]).unwrap();
        let q = StochasticMatrix::read_triplets(&buf[..]).unwrap();
        assert_eq!(q.to_dense(), p.to_dense());
        assert_eq!(q.meta, p.meta);
    }

    #[test]
    fn transition_probabilities() {
        let p = chain(0.2, 0.3);
        let w = [1.0, 1.0];
        assert_eq!(transition_probability(&p, &[0], &[0, 1], &w).unwrap(), 1.0);
        assert!((transition_probability(&p, &[0], &[1], &w).unwrap() - 0.2).abs() < 1e-15);
        let id = StochasticMatrix::identity(3);
        assert_eq!(
            transition_probability(&id, &[0], &[1, 2], &[1.0; 3]).unwrap(),
            0.0
        );
        assert_eq!(invariance_ratio(&id, &[2], &[1.0; 3]).unwrap(), 1.0);
        assert!(transition_probability(&p, &[0], &[1], &[0.0, 1.0]).is_err());
    }
}
