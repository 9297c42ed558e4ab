use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::cohort::{PatientTensor, DEMO_DIM, N_QUARTERS};
use crate::error::{Error, Result};
use crate::model::ModelKind;
use crate::numerics::{glorot_uniform, sigmoid, Matrix, ParamId, ParamStore, Tape, Var};
use crate::par::{self, Exec};
use crate::train::{Classifier, StepCtx};

use super::BaselineConfig;

/// Demographic one-hots followed by the four raw quarter count vectors.
pub fn flat_features(x: &PatientTensor, vocab_len: usize) -> Vec<f64> {
    let mut v = vec![0.0; DEMO_DIM + N_QUARTERS * vocab_len];
    v[..DEMO_DIM].copy_from_slice(&x.demographics.onehot());
    for (q, counts) in x.quarters.iter().enumerate() {
        for &(i, c) in counts {
            v[DEMO_DIM + q * vocab_len + i] = f64::from(c);
        }
    }
    v
}

pub fn flat_dim(vocab_len: usize) -> usize {
    DEMO_DIM + N_QUARTERS * vocab_len
}

/// Per-feature mean and inverse standard deviation, kept as frozen
/// parameters so they travel with checkpoints. Constant features get
/// scale 1.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Standardizer {
    pub mean: ParamId,
    pub inv_scale: ParamId,
}

impl Standardizer {
    pub fn new(store: &mut ParamStore, dim: usize) -> Self {
        Standardizer {
            mean: store.add_frozen("feature_mean", Matrix::zeros(1, dim)),
            inv_scale: store.add_frozen("feature_inv_scale", Matrix::filled(1, dim, 1.0)),
        }
    }

    pub fn fit(&self, store: &mut ParamStore, rows: &[Vec<f64>]) {
        let dim = store.value(self.mean).cols();
        let n = rows.len().max(1) as f64;
        let mut mean = vec![0.0; dim];
        for r in rows {
            for (m, v) in mean.iter_mut().zip(r) {
                *m += v / n;
            }
        }
        let mut var = vec![0.0; dim];
        for r in rows {
            for ((s, v), m) in var.iter_mut().zip(r).zip(&mean) {
                *s += (v - m) * (v - m) / n;
            }
        }
        let inv: Vec<f64> = var.iter().map(|&v| if v > 1e-12 { 1.0 / v.sqrt() } else { 1.0 }).collect();
        *store.value_mut(self.mean) = Matrix::row_vector(&mean);
        *store.value_mut(self.inv_scale) = Matrix::row_vector(&inv);
    }

    pub fn apply(&self, store: &ParamStore, raw: &[f64]) -> Vec<f64> {
        let (m, s) = (store.value(self.mean).data(), store.value(self.inv_scale).data());
        raw.iter().zip(m).zip(s).map(|((x, m), s)| (x - m) * s).collect()
    }
}

/// Hyperparameters of the full-batch gradient-descent logistic fit.
#[derive(Debug, Clone, PartialEq)]
pub struct LogisticConfig {
    pub lr: f64,
    pub max_epochs: usize,
    /// Stop once the loss improves by less than this.
    pub tolerance: f64,
    pub exec: Exec,
}

impl Default for LogisticConfig {
    fn default() -> Self {
        LogisticConfig {
            lr: 0.5,
            max_epochs: 3000,
            tolerance: 1e-7,
            exec: Exec::Parallel,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LogisticFit {
    pub epochs: usize,
    pub final_loss: f64,
    pub converged: bool,
    /// Validation log loss of the returned weights.
    pub val_loss: f64,
}

/// Unregularized logistic regression on standardized flat features.
#[derive(Debug, Clone)]
pub struct LogisticModel {
    pub vocab_len: usize,
    pub store: ParamStore,
    pub scaler: Standardizer,
    pub w: ParamId,
    pub b: ParamId,
}

impl LogisticModel {
    pub fn new(vocab_len: usize) -> Self {
        let dim = flat_dim(vocab_len);
        let mut store = ParamStore::new();
        let scaler = Standardizer::new(&mut store, dim);
        let w = store.add("lr.w", Matrix::zeros(1, dim));
        let b = store.add("lr.b", Matrix::zeros(1, 1));
        LogisticModel {
            vocab_len,
            store,
            scaler,
            w,
            b,
        }
    }

    fn features(&self, store: &ParamStore, x: &PatientTensor) -> Result<Vec<f64>> {
        check_vocab(x, self.vocab_len)?;
        Ok(self.scaler.apply(store, &flat_features(x, self.vocab_len)))
    }

    /// Linear score on already standardized features.
    pub fn score(&self, z: &[f64]) -> f64 {
        let w = self.store.value(self.w).data();
        z.iter().zip(w).map(|(a, b)| a * b).sum::<f64>() + self.store.value(self.b).item()
    }

    /// Maximum-likelihood fit by full-batch gradient descent on the mean log
    /// loss. Returns the lowest-loss iterate seen.
    pub fn fit(&mut self, train: &[PatientTensor], val: &[PatientTensor], cfg: &LogisticConfig) -> Result<LogisticFit> {
        if train.is_empty() {
            return Err(Error::Input("logistic fit needs training data".into()));
        }
        let raw: Vec<Vec<f64>> = train.iter().map(|x| flat_features(x, self.vocab_len)).collect();
        self.scaler.fit(&mut self.store, &raw);
        let z: Vec<Vec<f64>> = raw.iter().map(|r| self.scaler.apply(&self.store, r)).collect();
        let y: Vec<f64> = train.iter().map(|x| x.label.as_f64()).collect();
        let (w, b, fit) = fit_logistic(&z, &y, cfg)?;
        *self.store.value_mut(self.w) = Matrix::row_vector(&w);
        *self.store.value_mut(self.b) = Matrix::scalar(b);
        let val_loss = if val.is_empty() {
            f64::NAN
        } else {
            val.iter()
                .map(|x| {
                    let p = self.predict_proba(x)?;
                    let p = if x.label.is_case() { p } else { 1.0 - p };
                    Ok(-p.max(f64::MIN_POSITIVE).ln())
                })
                .sum::<Result<f64>>()?
                / val.len() as f64
        };
        Ok(LogisticFit { val_loss, ..fit })
    }
}

/// Mean binary log loss and its gradient for weights `w`, bias `b`.
fn logistic_loss_grad(z: &[Vec<f64>], y: &[f64], w: &[f64], b: f64, exec: Exec) -> (f64, Vec<f64>, f64) {
    let n = z.len() as f64;
    let parts = par::map(exec, z, |i, row| {
        let s = row.iter().zip(w).map(|(a, b)| a * b).sum::<f64>() + b;
        // log(1 + e^s) − y s, computed stably
        let loss = s.max(0.0) + (-s.abs()).exp().ln_1p() - y[i] * s;
        (loss, sigmoid(s) - y[i])
    });
    let mut gw = vec![0.0; w.len()];
    let (mut loss, mut gb) = (0.0, 0.0);
    for (row, (l, r)) in z.iter().zip(parts) {
        loss += l / n;
        gb += r / n;
        for (g, v) in gw.iter_mut().zip(row) {
            *g += r * v / n;
        }
    }
    (loss, gw, gb)
}

/// Gradient descent on rows `z` with 0/1 targets `y`.
pub fn fit_logistic(z: &[Vec<f64>], y: &[f64], cfg: &LogisticConfig) -> Result<(Vec<f64>, f64, LogisticFit)> {
    let dim = z.first().map_or(0, Vec::len);
    let (mut w, mut b) = (vec![0.0; dim], 0.0);
    let mut best = (f64::INFINITY, w.clone(), b);
    let mut prev = f64::INFINITY;
    let mut converged = false;
    let mut epochs = 0;
    for epoch in 1..=cfg.max_epochs {
        epochs = epoch;
        let (loss, gw, gb) = logistic_loss_grad(z, y, &w, b, cfg.exec);
        if !loss.is_finite() {
            return Err(Error::Training {
                epoch,
                reason: "logistic loss diverged".into(),
            });
        }
        if loss < best.0 {
            best = (loss, w.clone(), b);
        }
        if (prev - loss).abs() < cfg.tolerance {
            converged = true;
            break;
        }
        prev = loss;
        for (wi, g) in w.iter_mut().zip(&gw) {
            *wi -= cfg.lr * g;
        }
        b -= cfg.lr * gb;
    }
    let (final_loss, w, b) = best;
    Ok((
        w,
        b,
        LogisticFit {
            epochs,
            final_loss,
            converged,
            val_loss: f64::NAN,
        },
    ))
}

fn check_vocab(x: &PatientTensor, vocab_len: usize) -> Result<()> {
    match x.max_vocab_index() {
        Some(i) if i >= vocab_len => Err(Error::Vocabulary(format!(
            "patient {} uses code index {i} beyond vocabulary of {vocab_len}",
            x.patient_id
        ))),
        _ => Ok(()),
    }
}

/// Two-class logits `[0, s]` so that the softmax head equals the sigmoid.
fn binary_logits(tape: &mut Tape, score: Var) -> Result<Var> {
    let zero = tape.constant(Matrix::zeros(1, 1));
    tape.concat_cols(&[zero, score])
}

impl Classifier for LogisticModel {
    fn kind(&self) -> ModelKind {
        ModelKind::Lr
    }

    fn store(&self) -> &ParamStore {
        &self.store
    }

    fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    fn logits(&self, store: &ParamStore, tape: &mut Tape, x: &PatientTensor, _ctx: &StepCtx) -> Result<Var> {
        let z = tape.constant(Matrix::row_vector(&self.features(store, x)?));
        let w = tape.param(store, self.w);
        let b = tape.param(store, self.b);
        let s = tape.matmul_nt(z, w)?;
        let s = tape.add(s, b)?;
        binary_logits(tape, s)
    }

    fn predict_pair(&self, x: &PatientTensor) -> Result<[f64; 2]> {
        let p = sigmoid(self.score(&self.features(&self.store, x)?));
        Ok([1.0 - p, p])
    }
}

/// One relu hidden layer with inverted dropout during training.
#[derive(Debug, Clone)]
pub struct MlpModel {
    pub vocab_len: usize,
    pub dropout: f64,
    pub store: ParamStore,
    pub scaler: Standardizer,
    pub hidden: (ParamId, ParamId),
    pub out: (ParamId, ParamId),
}

impl MlpModel {
    pub fn new(vocab_len: usize, cfg: &BaselineConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let dim = flat_dim(vocab_len);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let scaler = Standardizer::new(&mut store, dim);
        let hidden = (
            store.add("mlp.W1", glorot_uniform(&mut rng, cfg.hidden, dim)),
            store.add("mlp.b1", Matrix::zeros(1, cfg.hidden)),
        );
        let out = (
            store.add("mlp.W2", glorot_uniform(&mut rng, 2, cfg.hidden)),
            store.add("mlp.b2", Matrix::zeros(1, 2)),
        );
        Ok(MlpModel {
            vocab_len,
            dropout: cfg.dropout,
            store,
            scaler,
            hidden,
            out,
        })
    }

    /// Fits the feature standardizer; call before training.
    pub fn fit_scaler(&mut self, train: &[PatientTensor]) {
        let raw: Vec<Vec<f64>> = train.iter().map(|x| flat_features(x, self.vocab_len)).collect();
        self.scaler.fit(&mut self.store, &raw);
    }
}

/// Inverted-dropout keep mask scaled by `1 / (1 − rate)`.
pub fn dropout_mask(len: usize, rate: f64, seed: u64) -> Matrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let keep = 1.0 / (1.0 - rate);
    let data: Vec<f64> = (0..len).map(|_| if rng.gen::<f64>() < rate { 0.0 } else { keep }).collect();
    Matrix::row_vector(&data)
}

impl Classifier for MlpModel {
    fn kind(&self) -> ModelKind {
        ModelKind::Mlp
    }

    fn store(&self) -> &ParamStore {
        &self.store
    }

    fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    fn logits(&self, store: &ParamStore, tape: &mut Tape, x: &PatientTensor, ctx: &StepCtx) -> Result<Var> {
        check_vocab(x, self.vocab_len)?;
        let z = self.scaler.apply(store, &flat_features(x, self.vocab_len));
        let z = tape.constant(Matrix::row_vector(&z));
        let (w1, b1) = (tape.param(store, self.hidden.0), tape.param(store, self.hidden.1));
        let (w2, b2) = (tape.param(store, self.out.0), tape.param(store, self.out.1));
        let h = tape.matmul_nt(z, w1)?;
        let h = tape.add(h, b1)?;
        let mut h = tape.relu(h);
        if ctx.train && self.dropout > 0.0 {
            let mask = tape.constant(dropout_mask(tape.value(h).cols(), self.dropout, ctx.seed));
            h = tape.mul(h, mask)?;
        }
        let o = tape.matmul_nt(h, w2)?;
        tape.add(o, b2)
    }
}
