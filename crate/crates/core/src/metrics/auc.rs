use std::cmp::Ordering;

use crate::error::{Error, Result};

/// Scores paired with binary labels; needs both classes present.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredSet {
    scores: Vec<f64>,
    labels: Vec<bool>,
    n_pos: usize,
}

impl ScoredSet {
    pub fn new(scores: Vec<f64>, labels: Vec<bool>) -> Result<Self> {
        if scores.len() != labels.len() {
            return Err(Error::Input(format!("{} scores for {} labels", scores.len(), labels.len())));
        }
        if scores.iter().any(|s| !s.is_finite()) {
            return Err(Error::Input("non-finite score".into()));
        }
        let n_pos = labels.iter().filter(|&&l| l).count();
        if n_pos == 0 || n_pos == labels.len() {
            return Err(Error::UndefinedMetric(format!(
                "need both classes, got {n_pos} positives of {}",
                labels.len()
            )));
        }
        Ok(ScoredSet { scores, labels, n_pos })
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    pub fn positives(&self) -> usize {
        self.n_pos
    }

    pub fn negatives(&self) -> usize {
        self.len() - self.n_pos
    }

    pub fn prevalence(&self) -> f64 {
        self.n_pos as f64 / self.len() as f64
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    pub fn labels(&self) -> &[bool] {
        &self.labels
    }

    /// `(score, label)` sorted by descending score.
    fn descending(&self) -> Vec<(f64, bool)> {
        let mut v: Vec<(f64, bool)> = self.scores.iter().copied().zip(self.labels.iter().copied()).collect();
        v.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap_or(Ordering::Equal));
        v
    }

    /// Calls `f(tp, fp)` after each group of tied scores, best scores first.
    fn sweep(&self, mut f: impl FnMut(usize, usize)) {
        let v = self.descending();
        let (mut tp, mut fp) = (0, 0);
        let mut i = 0;
        while i < v.len() {
            let s = v[i].0;
            while i < v.len() && v[i].0 == s {
                if v[i].1 {
                    tp += 1;
                } else {
                    fp += 1;
                }
                i += 1;
            }
            f(tp, fp);
        }
    }
}

/// Probability that a random positive outscores a random negative, ties
/// counted as one half. Computed by trapezoids over tie groups of the ROC
/// sweep, which is exactly the Mann–Whitney statistic.
pub fn auc_roc(s: &ScoredSet) -> f64 {
    let (p, n) = (s.positives() as f64, s.negatives() as f64);
    let mut area2 = 0.0; // twice the area, in units of positive·negative pairs
    let (mut prev_tp, mut prev_fp) = (0usize, 0usize);
    s.sweep(|tp, fp| {
        area2 += ((fp - prev_fp) * (tp + prev_tp)) as f64;
        prev_tp = tp;
        prev_fp = fp;
    });
    area2 / (2.0 * p * n)
}

/// Step-interpolated area under the precision–recall curve,
/// `Σ (R_k − R_{k−1}) · P_k` over tie groups in descending score order.
pub fn auc_pr(s: &ScoredSet) -> f64 {
    let p = s.positives() as f64;
    let mut area = 0.0;
    let mut prev_tp = 0usize;
    s.sweep(|tp, fp| {
        if tp > prev_tp {
            let precision = tp as f64 / (tp + fp) as f64;
            area += (tp - prev_tp) as f64 / p * precision;
        }
        prev_tp = tp;
    });
    area
}
