//! Reference kernel for the slot-aware label smoothing cross entropy.
//!
//! For every target position `i` with gold index `g_i` the target vector is
//! one-hot on `g_i`, except at smoothed positions where it puts `1 - eps` on
//! `g_i` and `eps / (V - 1)` on every other entry. The loss is
//! `-sum_i sum_v y[i][v] * ln(p[i][v])`. Value-mode training smooths the
//! replaced value tokens; context-mode training smooths the context tokens.
//!
//! Everything uses natural logarithms and dense `f64` rows. This is meant as
//! an oracle for training backends, not as a fast path.

use std::collections::BTreeSet;

use thiserror::Error;

use crate::par::{self, Execution};

/// Label smoothing strength used unless configured otherwise.
pub const DEFAULT_EPSILON: f64 = 0.1;

const SIMPLEX_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LossError {
    #[error("epsilon must lie in [0, 1), got {0}")]
    InvalidEpsilon(f64),
    #[error("vocabulary size must be at least 2, got {0}")]
    VocabTooSmall(usize),
    #[error("target id {id} at position {position} is outside a vocabulary of {vocab_size}")]
    TargetOutOfRange {
        position: usize,
        id: usize,
        vocab_size: usize,
    },
    #[error("smoothed position {position} is outside a target of length {len}")]
    SmoothedOutOfRange { position: usize, len: usize },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("row {0} is not a probability distribution")]
    NotADistribution(usize),
    #[error("zero predicted probability at position {position}, index {index} where the target has mass")]
    NonFinite { position: usize, index: usize },
}

/// Per-position training targets.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetDistribution {
    rows: Vec<Vec<f64>>,
    gold: Vec<usize>,
    smoothed: BTreeSet<usize>,
    epsilon: f64,
}

impl TargetDistribution {
    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    pub fn gold(&self) -> &[usize] {
        &self.gold
    }

    pub fn smoothed_positions(&self) -> &BTreeSet<usize> {
        &self.smoothed
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn vocab_size(&self) -> usize {
        self.rows.first().map_or(0, Vec::len)
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }
}

pub fn build_targets(
    target_ids: &[usize],
    smoothed_positions: &BTreeSet<usize>,
    vocab_size: usize,
    epsilon: f64,
) -> Result<TargetDistribution, LossError> {
    if !(0.0..1.0).contains(&epsilon) {
        return Err(LossError::InvalidEpsilon(epsilon));
    }
    if vocab_size < 2 {
        return Err(LossError::VocabTooSmall(vocab_size));
    }
    if let Some(&position) = smoothed_positions.iter().find(|&&p| p >= target_ids.len()) {
        return Err(LossError::SmoothedOutOfRange {
            position,
            len: target_ids.len(),
        });
    }
    let off_gold = epsilon / (vocab_size - 1) as f64;
    let rows = target_ids
        .iter()
        .enumerate()
        .map(|(position, &id)| {
            if id >= vocab_size {
                return Err(LossError::TargetOutOfRange {
                    position,
                    id,
                    vocab_size,
                });
            }
            let row = if smoothed_positions.contains(&position) {
                let mut row = vec![off_gold; vocab_size];
                row[id] = 1.0 - epsilon;
                row
            } else {
                let mut row = vec![0.0; vocab_size];
                row[id] = 1.0;
                row
            };
            Ok(row)
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(TargetDistribution {
        rows,
        gold: target_ids.to_vec(),
        smoothed: smoothed_positions.clone(),
        epsilon,
    })
}

/// Predicted distributions, one row per target position.
///
/// Rows must be finite, non-negative and sum to one. Zero entries are
/// allowed; they only become an error where the target puts mass on them.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionMatrix {
    rows: Vec<Vec<f64>>,
}

impl PredictionMatrix {
    pub fn new(rows: Vec<Vec<f64>>) -> Result<Self, LossError> {
        if let Some(width) = rows.first().map(Vec::len) {
            if let Some(i) = rows.iter().position(|r| r.len() != width) {
                return Err(LossError::ShapeMismatch(format!(
                    "row {i} has {} entries, expected {width}",
                    rows[i].len()
                )));
            }
        }
        for (i, row) in rows.iter().enumerate() {
            let sum: f64 = row.iter().sum();
            if row.iter().any(|p| !p.is_finite() || *p < 0.0)
                || (sum - 1.0).abs() > SIMPLEX_TOLERANCE
            {
                return Err(LossError::NotADistribution(i));
            }
        }
        Ok(PredictionMatrix { rows })
    }

    /// Row-wise softmax of raw logits.
    pub fn from_logits(logits: &[Vec<f64>]) -> Result<Self, LossError> {
        PredictionMatrix::new(logits.iter().map(|r| softmax(r)).collect())
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }
}

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|x| (x - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
    logits.iter().map(|x| x - lse).collect()
}

fn check_shapes(
    rows: usize,
    width: Option<usize>,
    targets: &TargetDistribution,
) -> Result<(), LossError> {
    if rows != targets.len() {
        return Err(LossError::ShapeMismatch(format!(
            "{rows} predicted positions vs {} target positions",
            targets.len()
        )));
    }
    if let Some(width) = width {
        if width != targets.vocab_size() {
            return Err(LossError::ShapeMismatch(format!(
                "prediction width {width} vs vocabulary {}",
                targets.vocab_size()
            )));
        }
    }
    Ok(())
}

fn row_loss(position: usize, pred: &[f64], target: &[f64]) -> Result<f64, LossError> {
    let mut acc = 0.0;
    for (index, (&p, &y)) in pred.iter().zip(target).enumerate() {
        if y == 0.0 {
            continue;
        }
        if p <= 0.0 {
            return Err(LossError::NonFinite { position, index });
        }
        acc -= y * p.ln();
    }
    Ok(acc)
}

/// Summed loss over positions.
pub fn modified_ls_ce(
    pred: &PredictionMatrix,
    targets: &TargetDistribution,
) -> Result<f64, LossError> {
    modified_ls_ce_with(Execution::default(), pred, targets)
}

pub fn modified_ls_ce_with(
    exec: Execution,
    pred: &PredictionMatrix,
    targets: &TargetDistribution,
) -> Result<f64, LossError> {
    check_shapes(pred.rows.len(), pred.rows.first().map(Vec::len), targets)?;
    let positions: Vec<usize> = (0..pred.rows.len()).collect();
    let per_row = par::map(exec, &positions, |&i| {
        row_loss(i, &pred.rows[i], &targets.rows[i])
    });
    // summed in position order so both execution modes agree bit for bit
    per_row.into_iter().sum()
}

/// Mean over positions, for backends that average instead of sum.
pub fn modified_ls_ce_mean(
    pred: &PredictionMatrix,
    targets: &TargetDistribution,
) -> Result<f64, LossError> {
    if targets.is_empty() {
        return Ok(0.0);
    }
    Ok(modified_ls_ce(pred, targets)? / targets.len() as f64)
}

/// Loss evaluated straight from logits through log-softmax.
pub fn modified_ls_ce_from_logits(
    logits: &[Vec<f64>],
    targets: &TargetDistribution,
) -> Result<f64, LossError> {
    check_shapes(logits.len(), logits.first().map(Vec::len), targets)?;
    let mut total = 0.0;
    for (row, target) in logits.iter().zip(&targets.rows) {
        if row.len() != target.len() {
            return Err(LossError::ShapeMismatch("ragged logits".into()));
        }
        let logp = log_softmax(row);
        total -= target.iter().zip(&logp).map(|(y, lp)| y * lp).sum::<f64>();
    }
    Ok(total)
}

/// Gradient of the summed loss with respect to the logits: `softmax(z) - y`.
pub fn grad_wrt_logits(
    logits: &[Vec<f64>],
    targets: &TargetDistribution,
) -> Result<Vec<Vec<f64>>, LossError> {
    check_shapes(logits.len(), logits.first().map(Vec::len), targets)?;
    logits
        .iter()
        .zip(&targets.rows)
        .map(|(row, target)| {
            if row.len() != target.len() {
                return Err(LossError::ShapeMismatch("ragged logits".into()));
            }
            Ok(softmax(row)
                .into_iter()
                .zip(target)
                .map(|(p, y)| p - y)
                .collect())
        })
        .collect()
}
