use super::TrainError;
use crate::numerics::{Mask, Tape, Tensor, Var};

/// Number of top-scoring steps averaged for an anomalous video of `steps`
/// valid steps.
pub fn mil_k(steps: usize) -> usize {
    (steps / 32).max(1)
}

/// Video score from step logits: the maximum for normal videos, the mean of
/// the `mil_k` largest for anomalous ones.
pub fn mil_pool(tape: &mut Tape, logits: Var, valid: &[bool], label: bool) -> Result<Var, TrainError> {
    let n = valid.iter().filter(|&&v| v).count();
    if n == 0 {
        return Err(TrainError::NoValidSteps);
    }
    Ok(if label {
        tape.topk_mean(logits, valid, mil_k(n))?
    } else {
        tape.max_over_valid(logits, valid)?
    })
}

/// Binary cross-entropy on a logit, `softplus(s) - s·y` in a form that
/// never exponentiates a large positive number.
pub fn bce_with_logits(tape: &mut Tape, s: Var, label: bool) -> Var {
    if label {
        let flipped = tape.neg(s);
        tape.softplus(flipped)
    } else {
        tape.softplus(s)
    }
}

pub fn bce_value(s: f64, y: f64) -> f64 {
    s.max(0.0) - s * y + (-s.abs()).exp().ln_1p()
}

/// Supervised contrastive loss over the rows of `features` (`B×d`).
///
/// Rows are L2-normalised; each anchor with at least one same-label partner
/// contributes the mean negative log-probability of its partners under a
/// softmax over all other rows at temperature `tau`.
pub fn contrastive_loss(
    tape: &mut Tape,
    features: Var,
    labels: &[bool],
    tau: f64,
) -> Result<Var, TrainError> {
    let b = tape.value(features).rows();
    if b < 2 {
        return Err(TrainError::BatchTooSmall(b));
    }
    if labels.len() != b {
        return Err(TrainError::LabelCount {
            expected: b,
            actual: labels.len(),
        });
    }
    if !(tau > 0.0) {
        return Err(TrainError::Config("temperature must be positive".into()));
    }
    let mut weights = Tensor::zeros(b, b);
    let mut anchors = 0usize;
    for i in 0..b {
        let partners = (0..b).filter(|&j| j != i && labels[j] == labels[i]).count();
        if partners == 0 {
            continue;
        }
        anchors += 1;
        for j in (0..b).filter(|&j| j != i && labels[j] == labels[i]) {
            weights.set(i, j, 1.0 / partners as f64);
        }
    }
    if anchors == 0 {
        return Ok(tape.leaf(Tensor::scalar(0.0)));
    }
    let weights = weights.map(|w| w / anchors as f64);
    let z = tape.l2_normalize_rows(features)?;
    let zt = tape.transpose(z);
    let sim = tape.matmul(z, zt)?;
    let logits = tape.scale(sim, 1.0 / tau);
    let off_diagonal = Mask::from_fn(b, b, |i, j| i != j);
    let log_prob = tape.row_log_softmax(logits, Some(&off_diagonal))?;
    let w = tape.leaf(weights);
    let picked = tape.mul(log_prob, w)?;
    let total = tape.sum_all(picked);
    Ok(tape.neg(total))
}
