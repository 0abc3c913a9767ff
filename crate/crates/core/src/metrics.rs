//! Threshold-independent detection metrics and ID accuracy.
//!
//! OOD is the positive class throughout and higher scores mean "more OOD".
//! Tied scores are always processed as one group, so every metric here is exact
//! and invariant under strictly increasing transforms of the scores.

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricReport {
    pub auroc: f64,
    pub aupr: f64,
    pub fpr95: f64,
    pub id_acc: f64,
    pub n_id: usize,
    pub n_ood: usize,
}

impl MetricReport {
    pub fn evaluate(scores: &[f64], ood_flags: &[bool], id_acc: f64) -> Result<Self> {
        let groups = TieGroups::new(scores, ood_flags, "report")?;
        Ok(Self {
            auroc: groups.auroc("auroc")?,
            aupr: groups.aupr()?,
            fpr95: groups.fpr95()?,
            id_acc,
            n_id: groups.n_id,
            n_ood: groups.n_ood,
        })
    }
}

/// Score groups in descending order with per-group `(ood, id)` counts.
struct TieGroups {
    counts: Vec<(usize, usize)>,
    n_ood: usize,
    n_id: usize,
}

impl TieGroups {
    fn new(scores: &[f64], flags: &[bool], metric: &'static str) -> Result<Self> {
        if scores.len() != flags.len() {
            return Err(Error::Metric {
                metric,
                reason: "scores and flags differ in length",
            });
        }
        if scores.iter().any(|s| !s.is_finite()) {
            return Err(Error::Metric {
                metric,
                reason: "non-finite score",
            });
        }
        let mut order: Vec<usize> = (0..scores.len()).collect();
        order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
        let mut counts: Vec<(usize, usize)> = Vec::new();
        let mut last = f64::NAN;
        for &i in &order {
            // -0.0 and 0.0 tie
            if counts.is_empty() || scores[i] != last {
                counts.push((0, 0));
                last = scores[i];
            }
            let g = counts.last_mut().expect("group");
            if flags[i] {
                g.0 += 1;
            } else {
                g.1 += 1;
            }
        }
        let n_ood = flags.iter().filter(|&&f| f).count();
        Ok(Self {
            counts,
            n_ood,
            n_id: flags.len() - n_ood,
        })
    }

    fn require_both(&self, metric: &'static str) -> Result<()> {
        if self.n_ood == 0 || self.n_id == 0 {
            return Err(Error::Metric {
                metric,
                reason: "needs at least one OOD and one ID node",
            });
        }
        Ok(())
    }

    fn auroc(&self, metric: &'static str) -> Result<f64> {
        self.require_both(metric)?;
        // walk from the top: each OOD in a group beats every ID still below it
        let mut id_below = self.n_id as u128;
        let mut twice_wins: u128 = 0;
        for &(o, i) in &self.counts {
            id_below -= i as u128;
            twice_wins += 2 * o as u128 * id_below + o as u128 * i as u128;
        }
        let pairs = self.n_ood as u128 * self.n_id as u128;
        Ok(twice_wins as f64 / (2 * pairs) as f64)
    }

    fn aupr(&self) -> Result<f64> {
        if self.n_ood == 0 {
            return Err(Error::Metric {
                metric: "aupr",
                reason: "needs at least one OOD node",
            });
        }
        let (mut tp, mut fp) = (0usize, 0usize);
        let mut ap = 0.0;
        for &(o, i) in &self.counts {
            tp += o;
            fp += i;
            if o > 0 {
                ap += (o as f64 / self.n_ood as f64) * (tp as f64 / (tp + fp) as f64);
            }
        }
        Ok(ap)
    }

    fn fpr95(&self) -> Result<f64> {
        self.require_both("fpr95")?;
        let (mut tp, mut fp) = (0usize, 0usize);
        for &(o, i) in &self.counts {
            tp += o;
            fp += i;
            if tp * 100 >= 95 * self.n_ood {
                return Ok(fp as f64 / self.n_id as f64);
            }
        }
        unreachable!("the lowest group reaches full recall")
    }
}

/// `P(s_ood > s_id) + ½·P(s_ood = s_id)`.
pub fn auroc(scores: &[f64], ood_flags: &[bool]) -> Result<f64> {
    TieGroups::new(scores, ood_flags, "auroc")?.auroc("auroc")
}

/// Average precision with OOD as the positive class.
pub fn aupr(scores: &[f64], ood_flags: &[bool]) -> Result<f64> {
    TieGroups::new(scores, ood_flags, "aupr")?.aupr()
}

/// Fraction of ID nodes flagged at the highest realized threshold whose OOD
/// recall reaches 95 %.
pub fn fpr95(scores: &[f64], ood_flags: &[bool]) -> Result<f64> {
    TieGroups::new(scores, ood_flags, "fpr95")?.fpr95()
}

/// The threshold used by [`fpr95`]; `flag = score ≥ τ`.
pub fn fpr95_threshold(scores: &[f64], ood_flags: &[bool]) -> Result<f64> {
    let groups = TieGroups::new(scores, ood_flags, "fpr95")?;
    groups.require_both("fpr95")?;
    let mut sorted: Vec<f64> = scores.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    sorted.dedup_by(|a, b| a == b);
    let mut tp = 0;
    for (k, &(o, _)) in groups.counts.iter().enumerate() {
        tp += o;
        if tp * 100 >= 95 * groups.n_ood {
            return Ok(sorted[k]);
        }
    }
    unreachable!("the lowest group reaches full recall")
}

/// Row argmax with ties going to the lowest index.
pub fn argmax_rows<R: Real>(logits: &Tensor<R>) -> Vec<usize> {
    (0..logits.rows())
        .map(|i| {
            let row = logits.row(i);
            let mut best = 0;
            for (c, v) in row.iter().enumerate() {
                if *v > row[best] {
                    best = c;
                }
            }
            best
        })
        .collect()
}

/// Accuracy over the nodes selected by `mask`.
pub fn id_accuracy<R: Real>(logits: &Tensor<R>, labels: &[usize], mask: &[bool]) -> Result<f64> {
    if logits.rows() != labels.len() || labels.len() != mask.len() {
        return Err(Error::Metric {
            metric: "id_accuracy",
            reason: "logits, labels and mask differ in length",
        });
    }
    let pred = argmax_rows(logits);
    let (mut hit, mut total) = (0usize, 0usize);
    for i in (0..labels.len()).filter(|&i| mask[i]) {
        total += 1;
        hit += usize::from(pred[i] == labels[i]);
    }
    if total == 0 {
        return Err(Error::Metric {
            metric: "id_accuracy",
            reason: "empty mask",
        });
    }
    Ok(hit as f64 / total as f64)
}
