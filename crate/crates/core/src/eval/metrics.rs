use super::EvalError;

/// Cumulative `(true positives, false positives)` after each group of equal
/// scores, in descending score order.
fn threshold_counts(scores: &[f64], labels: &[bool]) -> Result<(Vec<(usize, usize)>, usize), EvalError> {
    if scores.len() != labels.len() {
        return Err(EvalError::LengthMismatch {
            scores: scores.len(),
            labels: labels.len(),
        });
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(EvalError::NonFiniteScore);
    }
    let positives = labels.iter().filter(|&&l| l).count();
    if positives == 0 {
        return Err(EvalError::NoPositives);
    }
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut groups = Vec::new();
    let (mut tp, mut fp) = (0, 0);
    let mut i = 0;
    while i < idx.len() {
        let s = scores[idx[i]];
        while i < idx.len() && scores[idx[i]] == s {
            if labels[idx[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        groups.push((tp, fp));
    }
    Ok((groups, positives))
}

/// Average precision in percent: `Σ (R_n − R_{n−1})·P_n` over the distinct
/// score thresholds. Tied scores enter together, so a tie never ranks a
/// positive ahead of a negative.
pub fn average_precision(scores: &[f64], labels: &[bool]) -> Result<f64, EvalError> {
    let (groups, positives) = threshold_counts(scores, labels)?;
    let mut ap = 0.0;
    let mut prev_tp = 0;
    for (tp, fp) in groups {
        if tp > prev_tp {
            let recall_gain = (tp - prev_tp) as f64 / positives as f64;
            ap += recall_gain * tp as f64 / (tp + fp) as f64;
        }
        prev_tp = tp;
    }
    Ok(100.0 * ap)
}

/// Average recall in percent: mean recall over the distinct score
/// thresholds.
pub fn average_recall(scores: &[f64], labels: &[bool]) -> Result<f64, EvalError> {
    let (groups, positives) = threshold_counts(scores, labels)?;
    let total: f64 = groups.iter().map(|&(tp, _)| tp as f64 / positives as f64).sum();
    Ok(100.0 * total / groups.len() as f64)
}

/// Harmonic mean of AP and AR, 0 when both are 0.
pub fn f1_from_ap_ar(ap: f64, ar: f64) -> f64 {
    if ap + ar > 0.0 {
        2.0 * ap * ar / (ap + ar)
    } else {
        0.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct PointMetrics {
    pub threshold: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Precision, recall and F1 in percent when steps scoring at least
/// `threshold` are flagged.
pub fn point_metrics(scores: &[f64], labels: &[bool], threshold: f64) -> PointMetrics {
    let (mut tp, mut fp, mut fn_) = (0usize, 0usize, 0usize);
    for (&s, &l) in scores.iter().zip(labels) {
        match (s >= threshold, l) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            (false, false) => {}
        }
    }
    let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { 100.0 * a as f64 / b as f64 };
    let precision = ratio(tp, tp + fp);
    let recall = ratio(tp, tp + fn_);
    PointMetrics {
        threshold,
        precision,
        recall,
        f1: f1_from_ap_ar(precision, recall),
    }
}
