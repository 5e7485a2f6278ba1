use crate::error::{ApanError, Result};
use crate::tensor::sigmoid;

fn check(scores: &[f64], labels: &[bool]) -> Result<(usize, usize)> {
    if scores.len() != labels.len() {
        return Err(ApanError::InvalidArgument(format!(
            "{} scores for {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(ApanError::InvalidArgument("NaN score".into()));
    }
    let pos = labels.iter().filter(|&&l| l).count();
    Ok((pos, labels.len() - pos))
}

fn descending(scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    order
}

/// Area under the precision-recall curve with step interpolation; tied scores
/// form one threshold.
pub fn average_precision(scores: &[f64], labels: &[bool]) -> Result<f64> {
    let (pos, _) = check(scores, labels)?;
    if pos == 0 {
        return Err(ApanError::Degenerate("average precision needs a positive".into()));
    }
    let order = descending(scores);
    let (mut tp, mut fp, mut ap) = (0usize, 0usize, 0.0);
    let mut k = 0;
    while k < order.len() {
        let s = scores[order[k]];
        let mut group_pos = 0;
        while k < order.len() && scores[order[k]] == s {
            if labels[order[k]] {
                group_pos += 1;
            } else {
                fp += 1;
            }
            k += 1;
        }
        tp += group_pos;
        if group_pos > 0 {
            ap += group_pos as f64 / pos as f64 * tp as f64 / (tp + fp) as f64;
        }
    }
    Ok(ap)
}

/// ROC AUC as the Mann-Whitney statistic; ties count one half.
pub fn roc_auc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    let (pos, neg) = check(scores, labels)?;
    if pos == 0 || neg == 0 {
        return Err(ApanError::Degenerate(
            "AUC is undefined when only one class is present".into(),
        ));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum = 0.0;
    let mut k = 0;
    while k < order.len() {
        let mut j = k;
        while j < order.len() && scores[order[j]] == scores[order[k]] {
            j += 1;
        }
        // ranks k+1 ..= j share their average
        let avg = (k + 1 + j) as f64 / 2.0;
        rank_sum += avg * order[k..j].iter().filter(|&&i| labels[i]).count() as f64;
        k = j;
    }
    let u = rank_sum - (pos * (pos + 1)) as f64 / 2.0;
    Ok(u / (pos as f64 * neg as f64))
}

/// Fraction of logits on the correct side of `sigmoid = 0.5`.
pub fn accuracy(logits: &[f64], labels: &[bool]) -> Result<f64> {
    check(logits, labels)?;
    if logits.is_empty() {
        return Err(ApanError::Empty("accuracy"));
    }
    let hits = logits
        .iter()
        .zip(labels)
        .filter(|(&s, &l)| (sigmoid(s) > 0.5) == l)
        .count();
    Ok(hits as f64 / logits.len() as f64)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Metrics {
    pub ap: f64,
    pub auc: f64,
    pub accuracy: f64,
}

impl Metrics {
    pub fn of(scores: &[f64], labels: &[bool]) -> Result<Self> {
        Ok(Self {
            ap: average_precision(scores, labels)?,
            auc: roc_auc(scores, labels)?,
            accuracy: accuracy(scores, labels)?,
        })
    }

    /// Positive/negative logit pairs, one label each.
    pub fn of_pairs(pos: &[f64], neg: &[f64]) -> Result<Self> {
        let scores: Vec<f64> = pos.iter().chain(neg).copied().collect();
        let labels: Vec<bool> = pos.iter().map(|_| true).chain(neg.iter().map(|_| false)).collect();
        Self::of(&scores, &labels)
    }
}
