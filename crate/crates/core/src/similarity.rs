//! CLS-to-visual similarity and the descending long-tail curve.

use crate::error::{Error, Result};
use crate::tensor_io::EmbeddingMatrix;

/// Numerically stable softmax (max-subtracted). Empty input yields empty output.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&l| (l - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

pub(crate) fn dot(a: &[f32], b: &[f32]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| f64::from(x) * f64::from(y))
        .sum()
}

/// Scaled dot-product logits `q . k_j / sqrt(d)` for every row of `keys`.
pub fn scaled_logits(query: &[f32], keys: &EmbeddingMatrix) -> Vec<f64> {
    let scale = (query.len() as f64).sqrt();
    keys.iter_rows().map(|k| dot(query, k) / scale).collect()
}

/// `softmax(cls . visual^T / sqrt(d))`, in original token order.
pub fn cls_similarity(cls: &EmbeddingMatrix, visual: &EmbeddingMatrix) -> Result<Vec<f64>> {
    if cls.rows() != 1 {
        return Err(Error::DimensionMismatch(format!(
            "CLS matrix must have exactly one row, found {}",
            cls.rows()
        )));
    }
    if cls.cols() != visual.cols() {
        return Err(Error::DimensionMismatch(format!(
            "CLS has {} dims but visual tokens have {}",
            cls.cols(),
            visual.cols()
        )));
    }
    Ok(softmax(&scaled_logits(cls.row(0), visual)))
}

/// Similarities sorted descending, with the original index of each entry.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityCurve {
    values: Vec<f64>,
    source_index: Vec<usize>,
}

impl SimilarityCurve {
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn source_index(&self) -> &[usize] {
        &self.source_index
    }

    pub fn n(&self) -> usize {
        self.values.len()
    }

    /// Undoes the sort.
    pub fn original_order(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.values.len()];
        for (&v, &src) in self.values.iter().zip(&self.source_index) {
            out[src] = v;
        }
        out
    }
}

/// Stable descending sort; ties keep the lower original index first.
pub fn sort_descending(sims: &[f64]) -> Result<SimilarityCurve> {
    if sims.is_empty() {
        return Err(Error::InvalidArgument("empty similarity sequence".into()));
    }
    if let Some(i) = sims.iter().position(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "non-finite similarity {} at index {i}",
            sims[i]
        )));
    }
    let mut order: Vec<usize> = (0..sims.len()).collect();
    order.sort_by(|&a, &b| sims[b].total_cmp(&sims[a]));
    Ok(SimilarityCurve {
        values: order.iter().map(|&i| sims[i]).collect(),
        source_index: order,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor_io::RoleTag;

    fn mat(rows: &[&[f32]]) -> EmbeddingMatrix {
        EmbeddingMatrix::from_rows(rows, RoleTag::Visual).unwrap()
    }

    #[test]
    fn two_token_fixture() {
        let sims = cls_similarity(&mat(&[&[1.0, 0.0]]), &mat(&[&[1.0, 0.0], &[0.0, 1.0]])).unwrap();
        // e^(1/sqrt 2) / (e^(1/sqrt 2) + 1)
        let e = std::f64::consts::FRAC_1_SQRT_2.exp();
        assert!((sims[0] - e / (e + 1.0)).abs() < 1e-12);
        assert!((sims[1] - 1.0 / (e + 1.0)).abs() < 1e-12);
    }

    #[test]
    fn identical_rows_are_uniform() {
        let row: &[f32] = &[0.3, -1.2, 4.0];
        let sims = cls_similarity(&mat(&[&[2.0, 1.0, -0.5]]), &mat(&[row; 5])).unwrap();
        for s in sims {
            assert!((s - 0.2).abs() < 1e-12);
        }
    }

    #[test]
    fn single_token() {
        let sims = cls_similarity(&mat(&[&[1.0]]), &mat(&[&[-3.0]])).unwrap();
        assert_eq!(sims, vec![1.0]);
    }

    #[test]
    fn dimension_errors() {
        let two = mat(&[&[1.0, 0.0], &[0.0, 1.0]]);
        assert!(matches!(
            cls_similarity(&two, &two),
            Err(Error::DimensionMismatch(_))
        ));
        assert!(matches!(
            cls_similarity(&mat(&[&[1.0, 0.0, 0.0]]), &two),
            Err(Error::DimensionMismatch(_))
        ));
    }

    #[test]
    fn softmax_survives_large_logits() {
        let p = softmax(&[1000.0, 1000.0, -1000.0]);
        assert_eq!(p, vec![0.5, 0.5, 0.0]);
    }

    #[test]
    fn softmax_shift_invariance() {
        let logits = [0.3, -1.7, 2.2, 0.0];
        let shifted: Vec<f64> = logits.iter().map(|l| l + 37.5).collect();
        for (a, b) in softmax(&logits).iter().zip(softmax(&shifted)) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn sort_small() {
        let c = sort_descending(&[0.2, 0.5, 0.3]).unwrap();
        assert_eq!(c.values(), &[0.5, 0.3, 0.2]);
        assert_eq!(c.source_index(), &[1, 2, 0]);
        let c = sort_descending(&[0.5, 0.3, 0.2]).unwrap();
        assert_eq!(c.source_index(), &[0, 1, 2]);
    }

    #[test]
    fn sort_ties_keep_index_order() {
        let c = sort_descending(&[0.1, 0.4, 0.1, 0.4]).unwrap();
        assert_eq!(c.source_index(), &[1, 3, 0, 2]);
    }

    #[test]
    fn sort_errors() {
        assert!(sort_descending(&[]).is_err());
        assert!(sort_descending(&[0.1, f64::NAN]).is_err());
    }
}
