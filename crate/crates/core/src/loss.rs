//! Training objectives over a batch similarity matrix, plus the in-batch
//! precision@1 tuning metric.

use std::fmt;
use std::str::FromStr;

use crate::encoder::{GradientTarget, SimilarityMatrix};
use crate::error::{Error, Result};
use crate::linalg::Matrix;

#[derive(Debug, Clone, PartialEq)]
pub struct LossOutput {
    pub value: f64,
    /// Gradient of `value` over the B×B matrix, taken with respect to
    /// whatever `target` names.
    pub grad: Matrix,
    pub target: GradientTarget,
}

/// Mean loss plus one gradient per scored pair.
#[derive(Debug, Clone, PartialEq)]
pub struct PairwiseLossOutput {
    pub value: f64,
    pub grad: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TripletConfig {
    pub delta: f64,
}

impl TripletConfig {
    pub fn new(delta: f64) -> Result<Self> {
        if !(delta >= 0.0 && delta.is_finite()) {
            return Err(Error::InvalidConfig(format!("triplet margin must be >= 0, got {delta}")));
        }
        Ok(Self { delta })
    }
}

impl Default for TripletConfig {
    fn default() -> Self {
        Self { delta: 0.5 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum LossKind {
    #[default]
    SampledSoftmax,
    InBatchCrossEntropy,
    Triplet(TripletConfig),
    PairwiseCrossEntropy,
}

impl LossKind {
    /// True for the losses that draw negatives from the batch; those train
    /// on positive pairs only.
    pub fn is_in_batch(&self) -> bool {
        !matches!(self, LossKind::PairwiseCrossEntropy)
    }

    /// Evaluate an in-batch loss. Panics for the pairwise loss, which does
    /// not consume a square matrix.
    pub fn evaluate(&self, m: &SimilarityMatrix) -> Result<LossOutput> {
        match *self {
            LossKind::SampledSoftmax => Ok(in_batch_sampled_softmax(m)),
            LossKind::InBatchCrossEntropy => Ok(in_batch_cross_entropy(m)),
            LossKind::Triplet(cfg) => in_batch_triplet(m, cfg),
            LossKind::PairwiseCrossEntropy => panic!("pairwise cross-entropy is not an in-batch loss"),
        }
    }
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LossKind::SampledSoftmax => "softmax",
            LossKind::InBatchCrossEntropy => "in-batch-ce",
            LossKind::Triplet(_) => "triplet",
            LossKind::PairwiseCrossEntropy => "pairwise-ce",
        })
    }
}

impl FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "softmax" => Ok(LossKind::SampledSoftmax),
            "in-batch-ce" => Ok(LossKind::InBatchCrossEntropy),
            "triplet" => Ok(LossKind::Triplet(TripletConfig::default())),
            "pairwise-ce" => Ok(LossKind::PairwiseCrossEntropy),
            other => Err(Error::InvalidConfig(format!(
                "unknown loss `{other}` (expected softmax, in-batch-ce, triplet or pairwise-ce)"
            ))),
        }
    }
}

/// `ln(1 + e^x)` without overflow.
fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Binary cross-entropy of `sigmoid(x)` against `label`.
fn bce_with_logit(x: f64, label: bool) -> f64 {
    if label {
        softplus(-x)
    } else {
        softplus(x)
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Row-wise softmax with the diagonal as the target class, averaged over rows.
pub fn in_batch_sampled_softmax(m: &SimilarityMatrix) -> LossOutput {
    let s = &m.scores;
    let b = s.rows();
    let mut grad = Matrix::zeros(b, b);
    let mut total = 0.0;
    for i in 0..b {
        let row = s.row(i);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let sum_exp: f64 = row.iter().map(|x| (x - max).exp()).sum();
        let lse = max + sum_exp.ln();
        total += lse - row[i];
        for (j, g) in grad.row_mut(i).iter_mut().enumerate() {
            let p = (row[j] - lse).exp();
            *g = (p - if i == j { 1.0 } else { 0.0 }) / b as f64;
        }
    }
    LossOutput {
        value: total / b as f64,
        grad,
        target: GradientTarget::Scores,
    }
}

/// Binary cross-entropy on every element, label 1 on the diagonal, mean over B².
pub fn in_batch_cross_entropy(m: &SimilarityMatrix) -> LossOutput {
    let s = &m.scores;
    let b = s.rows();
    let n = (b * b) as f64;
    let mut total = 0.0;
    let grad = Matrix::from_fn(b, b, |i, j| {
        let x = s.get(i, j);
        let y = if i == j { 1.0 } else { 0.0 };
        total += bce_with_logit(x, i == j);
        (sigmoid(x) - y) / n
    });
    LossOutput {
        value: total / n,
        grad,
        target: GradientTarget::Scores,
    }
}

/// Hinge between each row's positive and its hardest negative, on raw
/// cosines. Ties among negatives go to the lowest column.
pub fn in_batch_triplet(m: &SimilarityMatrix, cfg: TripletConfig) -> Result<LossOutput> {
    let c = &m.raw_cosines;
    let b = c.rows();
    if b < 2 {
        return Err(Error::InsufficientNegatives(b));
    }
    let mut grad = Matrix::zeros(b, b);
    let mut total = 0.0;
    for i in 0..b {
        let (neg, s_neg) = (0..b)
            .filter(|&j| j != i)
            .map(|j| (j, c.get(i, j)))
            .fold((usize::MAX, f64::NEG_INFINITY), |best, cur| if cur.1 > best.1 { cur } else { best });
        let hinge = cfg.delta - c.get(i, i) + s_neg;
        if hinge > 0.0 {
            total += hinge;
            grad.set(i, i, -1.0 / b as f64);
            grad.set(i, neg, 1.0 / b as f64);
        }
    }
    Ok(LossOutput {
        value: total / b as f64,
        grad,
        target: GradientTarget::RawCosines,
    })
}

/// Mean binary cross-entropy of `sigmoid(score)` against 0/1 labels.
pub fn pairwise_cross_entropy(scores: &[f64], labels: &[bool]) -> Result<PairwiseLossOutput> {
    if scores.len() != labels.len() {
        return Err(Error::LengthMismatch {
            what: "pair labels",
            expected: scores.len(),
            actual: labels.len(),
        });
    }
    if scores.is_empty() {
        return Err(Error::EmptyPairs);
    }
    let n = scores.len() as f64;
    let mut total = 0.0;
    let grad = scores
        .iter()
        .zip(labels)
        .map(|(&x, &label)| {
            let y = if label { 1.0 } else { 0.0 };
            total += bce_with_logit(x, label);
            (sigmoid(x) - y) / n
        })
        .collect();
    Ok(PairwiseLossOutput { value: total / n, grad })
}

/// Fraction of rows whose diagonal strictly beats every off-diagonal score.
pub fn in_batch_precision_at_1(m: &SimilarityMatrix) -> f64 {
    let s = &m.scores;
    let b = s.rows();
    if b == 0 {
        return 0.0;
    }
    let hits = (0..b)
        .filter(|&i| {
            let pos = s.get(i, i);
            (0..b).all(|j| j == i || s.get(i, j) < pos)
        })
        .count();
    hits as f64 / b as f64
}
