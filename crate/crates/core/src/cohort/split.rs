use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

use super::types::{Label, Labeled};

#[derive(Debug, Clone, PartialEq)]
pub struct Split<T> {
    pub train: Vec<T>,
    pub val: Vec<T>,
    pub test: Vec<T>,
}

/// Shuffled positions of each class, controls first.
fn shuffled_by_class<T: Labeled>(items: &[T], seed: u64) -> [Vec<usize>; 2] {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut classes: [Vec<usize>; 2] = Default::default();
    for (i, it) in items.iter().enumerate() {
        classes[it.label() as usize].push(i);
    }
    for c in &mut classes {
        c.shuffle(&mut rng);
    }
    classes
}

/// Stratified train/validation/test partition. Each class is shuffled and cut
/// at rounded fractions; items keep their input order inside each split.
pub fn split_cohort<T: Labeled + Clone>(items: &[T], seed: u64, fractions: (f64, f64, f64)) -> Result<Split<T>> {
    let (ft, fv, fs) = fractions;
    if [ft, fv, fs].iter().any(|f| !(0.0..=1.0).contains(f)) || (ft + fv + fs - 1.0).abs() > 1e-9 {
        return Err(Error::Config(format!("split fractions {fractions:?} must be in [0,1] and sum to 1")));
    }
    let mut assign = vec![0u8; items.len()];
    for class in shuffled_by_class(items, seed) {
        let n = class.len() as f64;
        let n_train = (n * ft).round() as usize;
        let n_val = ((n * (ft + fv)).round() as usize).max(n_train) - n_train;
        for (k, &i) in class.iter().enumerate() {
            assign[i] = if k < n_train {
                0
            } else if k < n_train + n_val {
                1
            } else {
                2
            };
        }
    }
    let mut split = Split {
        train: Vec::new(),
        val: Vec::new(),
        test: Vec::new(),
    };
    for (it, &a) in items.iter().zip(&assign) {
        match a {
            0 => split.train.push(it.clone()),
            1 => split.val.push(it.clone()),
            _ => split.test.push(it.clone()),
        }
    }
    for (name, part) in [("train", &split.train), ("val", &split.val), ("test", &split.test)] {
        if !part.iter().any(|x| x.label() == Label::Case) {
            return Err(Error::Stratification(format!("{name} split received no cases")));
        }
    }
    Ok(split)
}

/// Stratified fold id (`0..k`) for every item.
pub fn stratified_folds<T: Labeled>(items: &[T], k: usize, seed: u64) -> Result<Vec<usize>> {
    if k < 2 {
        return Err(Error::Config("need at least two folds".into()));
    }
    let mut fold = vec![0; items.len()];
    let classes = shuffled_by_class(items, seed);
    for class in &classes {
        if class.len() < k {
            return Err(Error::Stratification(format!(
                "only {} members of a class for {k} folds",
                class.len()
            )));
        }
    }
    // Continue the round-robin across classes so fold sizes stay balanced.
    let mut next = 0;
    for class in classes {
        for i in class {
            fold[i] = next % k;
            next += 1;
        }
    }
    Ok(fold)
}
