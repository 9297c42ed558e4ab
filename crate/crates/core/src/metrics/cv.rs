use crate::cohort::{stratified_folds, Labeled};
use crate::error::Result;
use crate::par::{self, Exec};

use super::auc::{auc_pr, auc_roc, ScoredSet};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FoldMetrics {
    pub auc_pr: f64,
    pub auc_roc: f64,
    pub n_case: usize,
    pub n_control: usize,
}

/// Mean and population standard deviation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Dispersion {
    pub mean: f64,
    pub std: f64,
}

impl Dispersion {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        Dispersion { mean, std: var.sqrt() }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CvResult {
    pub folds: Vec<FoldMetrics>,
    pub assignment: Vec<usize>,
    pub auc_pr: Dispersion,
    pub auc_roc: Dispersion,
}

pub fn score_set<T: Labeled>(items: &[T], scores: Vec<f64>) -> Result<ScoredSet> {
    ScoredSet::new(scores, items.iter().map(|x| x.label().is_case()).collect())
}

/// Stratified `k`-fold cross-validation. `fit_and_score(train, held_out)`
/// trains a fresh model and returns case probabilities for `held_out`.
/// Folds run through [`par::map`], so they may train concurrently.
pub fn cross_validate<T, F>(items: &[T], k: usize, seed: u64, exec: Exec, fit_and_score: F) -> Result<CvResult>
where
    T: Labeled + Clone + Sync + Send,
    F: Fn(usize, &[T], &[T]) -> Result<Vec<f64>> + Sync + Send,
{
    let assignment = stratified_folds(items, k, seed)?;
    let folds = par::map_range(exec, k, |fold| -> Result<FoldMetrics> {
        let (mut train, mut held) = (Vec::new(), Vec::new());
        for (x, &f) in items.iter().zip(&assignment) {
            if f == fold {
                held.push(x.clone());
            } else {
                train.push(x.clone());
            }
        }
        let scores = fit_and_score(fold, &train, &held)?;
        let set = score_set(&held, scores)?;
        Ok(FoldMetrics {
            auc_pr: auc_pr(&set),
            auc_roc: auc_roc(&set),
            n_case: set.positives(),
            n_control: set.negatives(),
        })
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    let pr: Vec<f64> = folds.iter().map(|f| f.auc_pr).collect();
    let roc: Vec<f64> = folds.iter().map(|f| f.auc_roc).collect();
    Ok(CvResult {
        folds,
        assignment,
        auc_pr: Dispersion::of(&pr),
        auc_roc: Dispersion::of(&roc),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cohort::Label;
    use crate::error::Error;

    #[derive(Debug, Clone)]
    struct Item(Label);

    impl Labeled for Item {
        fn label(&self) -> Label {
            self.0
        }
    }

    fn items(n: usize) -> Vec<Item> {
        (0..n)
            .map(|i| Item(if i % 4 == 0 { Label::Case } else { Label::Control }))
            .collect()
    }

    #[test]
    fn constant_model_scores_half_with_zero_spread() {
        let r = cross_validate(&items(90), 3, 4, Exec::Parallel, |_, _, held| Ok(vec![0.5; held.len()])).unwrap();
        assert_eq!(r.folds.len(), 3);
        assert!(r.folds.iter().all(|f| f.auc_roc == 0.5));
        assert_eq!(r.auc_roc, Dispersion { mean: 0.5, std: 0.0 });
    }

    #[test]
    fn folds_partition_and_replay() {
        let data = items(60);
        let run = || {
            cross_validate(&data, 3, 8, Exec::Sequential, |_, train, held| {
                assert_eq!(train.len() + held.len(), 60);
                Ok((0..held.len()).map(|i| i as f64).collect())
            })
            .unwrap()
        };
        let (a, b) = (run(), run());
        assert_eq!(a.assignment, b.assignment);
        assert_eq!(a, b);
        let total: usize = a.folds.iter().map(|f| f.n_case + f.n_control).sum();
        assert_eq!(total, 60);
    }

    #[test]
    fn too_few_cases_for_folds() {
        let data: Vec<Item> = (0..30)
            .map(|i| Item(if i < 2 { Label::Case } else { Label::Control }))
            .collect();
        let r = cross_validate(&data, 3, 0, Exec::Sequential, |_, _, h| Ok(vec![0.0; h.len()]));
        assert!(matches!(r, Err(Error::Stratification(_))));
    }

    #[test]
    fn population_std() {
        let d = Dispersion::of(&[1.0, 2.0, 3.0]);
        assert_eq!(d.mean, 2.0);
        assert!((d.std - (2.0f64 / 3.0).sqrt()).abs() < 1e-15);
    }
}
