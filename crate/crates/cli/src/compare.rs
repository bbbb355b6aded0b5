//! Quantitative comparison of mean-field products with full-operator eigenvectors.

use std::fmt::Write as _;

use mftransfer::{Error, Result};

use crate::formats::Table;

fn check_lengths(a: &[f64], b: &[f64], pi: &[f64]) -> Result<()> {
    if a.len() != b.len() || a.len() != pi.len() {
        return Err(Error::Comparison(format!(
            "vectors of length {} and {} with weights of length {}",
            a.len(),
            b.len(),
            pi.len()
        )));
    }
    Ok(())
}

fn weighted_dots(a: &[f64], b: &[f64], pi: &[f64]) -> (f64, f64, f64) {
    let (mut ab, mut aa, mut bb) = (0.0, 0.0, 0.0);
    for ((x, y), w) in a.iter().zip(b).zip(pi) {
        let w = w.max(0.0);
        ab += w * x * y;
        aa += w * x * x;
        bb += w * y * y;
    }
    (ab, aa, bb)
}

/// |Σ π a b| / √(Σ π a² · Σ π b²), the cosine after sign alignment.
pub fn weighted_cosine(a: &[f64], b: &[f64], pi: &[f64]) -> Result<f64> {
    check_lengths(a, b, pi)?;
    let (ab, aa, bb) = weighted_dots(a, b, pi);
    if !(aa > 0.0 && bb > 0.0) {
        return Err(Error::Comparison(
            "vector vanishes on the support of the weights".into(),
        ));
    }
    Ok((ab / (aa.sqrt() * bb.sqrt())).abs().min(1.0))
}

/// π-mass fraction of cells where `a` and the sign-aligned `b` have the same sign.
pub fn sign_agreement(a: &[f64], b: &[f64], pi: &[f64]) -> Result<f64> {
    check_lengths(a, b, pi)?;
    let (ab, _, _) = weighted_dots(a, b, pi);
    let s = if ab < 0.0 { -1.0 } else { 1.0 };
    let mut agree = 0.0;
    let mut total = 0.0;
    for ((x, y), w) in a.iter().zip(b).zip(pi) {
        if *w > 0.0 {
            total += w;
            if (*x > 0.0) == (s * y > 0.0) {
                agree += w;
            }
        }
    }
    if !(total > 0.0) {
        return Err(Error::Comparison("weights carry no mass".into()));
    }
    Ok(agree / total)
}

/// A labelled vector with its eigenvalue (or eigenvalue estimate).
#[derive(Clone, Debug, PartialEq)]
pub struct Eigenfunction {
    pub label: String,
    pub value: f64,
    pub values: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ComparisonRow {
    pub product: String,
    pub full: String,
    pub full_value: f64,
    pub product_value: f64,
    pub cosine: f64,
    pub sign_agreement: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ComparisonReport {
    pub rows: Vec<ComparisonRow>,
}

impl ComparisonReport {
    /// Matches products, ordered by descending eigenvalue estimate, to the
    /// non-trivial full eigenvectors in their given order.
    pub fn build(pi: &[f64], full: &[Eigenfunction], products: &[Eigenfunction]) -> Result<Self> {
        if products.len() > full.len() {
            return Err(Error::Comparison(format!(
                "{} products but only {} full eigenvectors",
                products.len(),
                full.len()
            )));
        }
        let mut order: Vec<usize> = (0..products.len()).collect();
        order.sort_by(|&a, &b| products[b].value.total_cmp(&products[a].value));
        let mut rows = Vec::with_capacity(products.len());
        for (slot, &k) in order.iter().enumerate() {
            let (p, f) = (&products[k], &full[slot]);
            rows.push(ComparisonRow {
                product: p.label.clone(),
                full: f.label.clone(),
                full_value: f.value,
                product_value: p.value,
                cosine: weighted_cosine(&f.values, &p.values, pi)?,
                sign_agreement: sign_agreement(&f.values, &p.values, pi)?,
            });
        }
        Ok(Self { rows })
    }

    pub fn to_table(&self, header: Vec<(String, String)>) -> Table {
        let mut t = Table::new(
            header,
            &[
                "product",
                "full",
                "full_eigenvalue",
                "product_eigenvalue",
                "cosine",
                "sign_agreement",
            ],
        );
        for r in &self.rows {
            t.push(vec![
                r.product.clone(),
                r.full.clone(),
                format!("{:?}", r.full_value),
                format!("{:?}", r.product_value),
                format!("{:?}", r.cosine),
                format!("{:?}", r.sign_agreement),
            ]);
        }
        t
    }

    pub fn from_table(t: &Table) -> Result<Self> {
        let product = t.column("product")?;
        let full = t.column("full")?;
        let fv = t.f64_column("full_eigenvalue")?;
        let pv = t.f64_column("product_eigenvalue")?;
        let cos = t.f64_column("cosine")?;
        let sa = t.f64_column("sign_agreement")?;
        let rows = (0..product.len())
            .map(|i| ComparisonRow {
                product: product[i].to_string(),
                full: full[i].to_string(),
                full_value: fv[i],
                product_value: pv[i],
                cosine: cos[i],
                sign_agreement: sa[i],
            })
            .collect();
        Ok(Self { rows })
    }

    pub fn render(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "{:<14} {:<6} {:>10} {:>10} {:>8} {:>8}",
            "product", "full", "λ full", "λ mf", "cosine", "signs"
        );
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{:<14} {:<6} {:>10.5} {:>10.5} {:>8.4} {:>8.4}",
                r.product, r.full, r.full_value, r.product_value, r.cosine, r.sign_agreement
            );
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::seq::SliceRandom;
    use rand::SeedableRng;

    #[test]
    fn identical_vectors_have_unit_similarity() {
        let a = [0.3, -0.2, 0.5, -0.9];
        let pi = [0.1, 0.2, 0.3, 0.4];
        assert!((weighted_cosine(&a, &a, &pi).unwrap() - 1.0).abs() < 1e-15);
        let neg: Vec<f64> = a.iter().map(|x| -x).collect();
        assert!((weighted_cosine(&a, &neg, &pi).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(sign_agreement(&a, &neg, &pi).unwrap(), 1.0);
    }

    #[test]
    fn shuffled_vector_is_nearly_orthogonal() {
        let n = 4096;
        let a: Vec<f64> = (0..n).map(|i| (i as f64 * 0.37).sin()).collect();
        let mut b = a.clone();
        b.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(3));
        let pi = vec![1.0 / n as f64; n];
        assert!(weighted_cosine(&a, &b, &pi).unwrap() < 0.1);
    }

    #[test]
    fn mismatched_lengths_are_comparison_errors() {
        assert!(matches!(
            weighted_cosine(&[1.0], &[1.0, 2.0], &[1.0]),
            Err(Error::Comparison(_))
        ));
    }

    #[test]
    fn products_are_matched_by_descending_eigenvalue() {
        let pi = [0.25; 4];
        let e = |l: &str, v: f64, x: [f64; 4]| Eigenfunction {
            label: l.into(),
            value: v,
            values: x.to_vec(),
        };
        let full = [
            e("v2", 0.9, [1.0, 1.0, -1.0, -1.0]),
            e("v3", 0.8, [1.0, -1.0, 1.0, -1.0]),
        ];
        let products = [
            e("b", 0.7, [1.0, -1.0, 1.0, -1.0]),
            e("a", 0.85, [-1.0, -1.0, 1.0, 1.0]),
        ];
        let r = ComparisonReport::build(&pi, &full, &products).unwrap();
        assert_eq!(r.rows[0].product, "a");
        assert_eq!(r.rows[0].full, "v2");
        assert!(r.rows.iter().all(|r| (r.cosine - 1.0).abs() < 1e-15));
        let back = ComparisonReport::from_table(&r.to_table(vec![])).unwrap();
        assert_eq!(back, r);
    }
}
