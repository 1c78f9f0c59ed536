//! Single-layer scaled dot-product attention over token lists.
//!
//! One head, no residual or normalization layers: exactly the object the
//! hop-contribution analysis reasons about. Rows of the weight matrix are
//! softmax distributions over tokens; the first token is the center node's,
//! so callers interested in the center's view read row 0.

use ndarray::{Array1, Array2};
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::templates::TokenList;

/// Allowed deviation of each attention row from summing to exactly 1.
pub const ATTENTION_ROW_SUM_TOL: f64 = 1e-9;

/// Query/key/value projection matrices of one attention layer.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionWeights {
    /// Query projection, `width × width`.
    pub wq: Array2<f64>,
    /// Key projection, `width × width`.
    pub wk: Array2<f64>,
    /// Value projection, `width × width`.
    pub wv: Array2<f64>,
}

impl ProjectionWeights {
    /// Wraps three square matrices of the same width, rejecting anything
    /// non-square, mismatched, or non-finite.
    pub fn new(wq: Array2<f64>, wk: Array2<f64>, wv: Array2<f64>) -> Result<Self> {
        let w = wq.nrows();
        for (name, m) in [("query", &wq), ("key", &wk), ("value", &wv)] {
            if m.nrows() != w || m.ncols() != w {
                return Err(Error::Shape(format!(
                    "{name} projection must be {w}×{w}, got {}×{}",
                    m.nrows(),
                    m.ncols()
                )));
            }
            if m.iter().any(|v| !v.is_finite()) {
                return Err(Error::Domain(format!(
                    "{name} projection contains a non-finite entry"
                )));
            }
        }
        Ok(Self { wq, wk, wv })
    }

    /// Identity projections: attention reduces to similarity of raw tokens.
    pub fn identity(width: usize) -> Self {
        Self {
            wq: Array2::eye(width),
            wk: Array2::eye(width),
            wv: Array2::eye(width),
        }
    }

    /// Gaussian initialization with standard deviation `1/√width`.
    pub fn random<R: Rng>(width: usize, rng: &mut R) -> Self {
        let std = (width as f64).sqrt().recip();
        let normal = Normal::new(0.0, std).expect("finite std");
        let mut draw = || Array2::from_shape_fn((width, width), |_| normal.sample(rng));
        Self {
            wq: draw(),
            wk: draw(),
            wv: draw(),
        }
    }

    /// Shared width of the three projections.
    pub fn width(&self) -> usize {
        self.wq.nrows()
    }
}

/// Attention weights and attended output for one token list.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionResult {
    /// Row-stochastic matrix: entry (i, j) is how much token i attends to j.
    pub weights: Array2<f64>,
    /// `weights · (tokens · W_V)`, one row per token.
    pub output: Array2<f64>,
}

impl AttentionResult {
    /// The center token's attention distribution (row 0).
    pub fn center_attention(&self) -> Vec<f64> {
        self.weights.row(0).to_vec()
    }

    /// The center token's attended representation (row 0).
    pub fn center_output(&self) -> Array1<f64> {
        self.output.row(0).to_owned()
    }
}

/// Numerically stable softmax of a logit slice.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&l| (l - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Runs one layer of scaled dot-product attention over the whole token list.
pub fn attend(tokens: &TokenList, w: &ProjectionWeights) -> Result<AttentionResult> {
    let width = w.width();
    if tokens.dim() != width {
        return Err(Error::Shape(format!(
            "tokens have dimension {} but projections expect {width}",
            tokens.dim()
        )));
    }
    if tokens.tokens.iter().any(|v| !v.is_finite()) {
        return Err(Error::Domain(
            "token list contains a non-finite entry".into(),
        ));
    }
    let q = tokens.tokens.dot(&w.wq);
    let k = tokens.tokens.dot(&w.wk);
    let v = tokens.tokens.dot(&w.wv);
    let scale = (width as f64).sqrt().recip();
    let scores = q.dot(&k.t()) * scale;

    let count = tokens.len();
    let mut weights = Array2::zeros((count, count));
    for (i, row) in scores.outer_iter().enumerate() {
        let soft = softmax(row.as_slice().expect("contiguous row"));
        for (j, s) in soft.into_iter().enumerate() {
            weights[[i, j]] = s;
        }
    }
    let output = weights.dot(&v);
    Ok(AttentionResult { weights, output })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use ndarray::array;
    use num_rational::BigRational;
    use num_traits::One;

    fn token_list(rows: Array2<f64>) -> TokenList {
        let provenance = (0..rows.nrows())
            .map(|i| vec![(i as u32, BigRational::one())])
            .collect();
        TokenList {
            center: 0,
            tokens: rows,
            provenance,
        }
    }

    #[test]
    fn single_token_gets_full_weight() {
        let t = token_list(array![[2.0, -1.0]]);
        let w = ProjectionWeights::identity(2);
        let r = attend(&t, &w).unwrap();
        assert_eq!(r.weights[[0, 0]], 1.0);
        assert_eq!(r.center_output().to_vec(), vec![2.0, -1.0]);
    }

    #[test]
    fn identical_tokens_split_weight_evenly() {
        let t = token_list(array![[1.0, 3.0], [1.0, 3.0]]);
        let w = ProjectionWeights::identity(2);
        let r = attend(&t, &w).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                assert!((r.weights[[i, j]] - 0.5).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn matches_a_plainly_coded_reference() {
        let mut rng = rng::seeded(42);
        let t = token_list(Array2::from_shape_fn((3, 4), |_| {
            rng.gen_range(-1.0..1.0)
        }));
        let w = ProjectionWeights::random(4, &mut rng);
        let r = attend(&t, &w).unwrap();

        // Reference: direct formula without max-subtraction.
        let q = t.tokens.dot(&w.wq);
        let k = t.tokens.dot(&w.wk);
        let v = t.tokens.dot(&w.wv);
        for i in 0..3 {
            let mut exps = [0.0; 3];
            for j in 0..3 {
                let dot: f64 = q.row(i).dot(&k.row(j));
                exps[j] = (dot / 2.0).exp();
            }
            let total: f64 = exps.iter().sum();
            let mut out = vec![0.0; 4];
            for j in 0..3 {
                let wgt = exps[j] / total;
                assert!((r.weights[[i, j]] - wgt).abs() < 1e-12, "weight {i},{j}");
                for c in 0..4 {
                    out[c] += wgt * v[[j, c]];
                }
            }
            for c in 0..4 {
                assert!((r.output[[i, c]] - out[c]).abs() < 1e-12, "output {i},{c}");
            }
        }
    }

    #[test]
    fn rows_sum_to_one() {
        let mut rng = rng::seeded(7);
        let t = token_list(Array2::from_shape_fn((5, 3), |_| {
            rng.gen_range(-4.0..4.0)
        }));
        let w = ProjectionWeights::random(3, &mut rng);
        let r = attend(&t, &w).unwrap();
        for row in r.weights.outer_iter() {
            assert!((row.sum() - 1.0).abs() < ATTENTION_ROW_SUM_TOL);
        }
    }

    #[test]
    fn softmax_is_shift_invariant() {
        let logits = [0.3, -1.2, 2.5, 0.0];
        let shifted: Vec<f64> = logits.iter().map(|l| l + 123.456).collect();
        let a = softmax(&logits);
        let b = softmax(&shifted);
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn softmax_survives_huge_logits() {
        let soft = softmax(&[1e308, 1e308, 0.0]);
        assert!((soft[0] - 0.5).abs() < 1e-12);
        assert!((soft[1] - 0.5).abs() < 1e-12);
        assert_eq!(soft[2], 0.0);
    }

    #[test]
    fn rejects_mismatched_dimensions_and_bad_values() {
        let t = token_list(array![[1.0, 2.0]]);
        let w = ProjectionWeights::identity(3);
        assert!(matches!(attend(&t, &w), Err(Error::Shape(_))));
        let bad = token_list(array![[f64::NAN, 0.0]]);
        let w2 = ProjectionWeights::identity(2);
        assert!(matches!(attend(&bad, &w2), Err(Error::Domain(_))));
        let nan_w = ProjectionWeights::new(
            array![[f64::INFINITY]],
            array![[1.0]],
            array![[1.0]],
        );
        assert!(nan_w.is_err());
    }
}
