//! Shared mini-batch trainer: class-weighted cross-entropy, Adam, global-norm
//! clipping and early stopping on validation AUC-PR.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::cohort::PatientTensor;
use crate::error::{Error, Result};
use crate::metrics::{auc_pr, score_set};
use crate::model::{softmax_nll, ModelKind};
use crate::numerics::{Gradients, Matrix, ParamStore, Tape, Var};
use crate::par::{self, Exec};

/// Per-example context handed to a model's forward pass.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepCtx {
    /// Enables stochastic layers such as dropout.
    pub train: bool,
    /// Seed for any per-example randomness.
    pub seed: u64,
    /// Coefficient of the multi-hop redundancy penalty (attention model only).
    pub penalty: f64,
}

impl StepCtx {
    pub const INFERENCE: StepCtx = StepCtx {
        train: false,
        seed: 0,
        penalty: 0.0,
    };
}

/// A two-class model over patient tensors.
pub trait Classifier: Sync {
    fn kind(&self) -> ModelKind;
    fn store(&self) -> &ParamStore;
    fn store_mut(&mut self) -> &mut ParamStore;

    /// `1 × 2` logits for (control, case), reading parameters from `store`
    /// (which has the layout of [`Classifier::store`]).
    fn logits(&self, store: &ParamStore, tape: &mut Tape, x: &PatientTensor, ctx: &StepCtx) -> Result<Var>;

    /// Unweighted per-example training loss.
    fn loss(&self, store: &ParamStore, tape: &mut Tape, x: &PatientTensor, ctx: &StepCtx) -> Result<Var> {
        let logits = self.logits(store, tape, x, ctx)?;
        Ok(softmax_nll(tape, logits, x.label as usize)?.1)
    }

    /// `(P(control), P(case))`.
    fn predict_pair(&self, x: &PatientTensor) -> Result<[f64; 2]> {
        let mut tape = Tape::new();
        let logits = self.logits(self.store(), &mut tape, x, &StepCtx::INFERENCE)?;
        let p = tape.value(logits).row_softmax();
        Ok([p.get(0, 0), p.get(0, 1)])
    }

    fn predict_proba(&self, x: &PatientTensor) -> Result<f64> {
        Ok(self.predict_pair(x)?[1])
    }
}

/// Case probabilities for many patients.
pub fn predict_many<M: Classifier + ?Sized>(model: &M, xs: &[PatientTensor], exec: Exec) -> Result<Vec<f64>> {
    par::map(exec, xs, |_, x| model.predict_proba(x)).into_iter().collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Epochs without validation improvement before stopping; 0 disables.
    pub patience: usize,
    /// Weight cases by `N_control / N_case`.
    pub class_weighting: bool,
    /// Global gradient-norm cap.
    pub grad_clip: Option<f64>,
    pub penalty: f64,
    pub seed: u64,
    pub exec: Exec,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 1e-3,
            epochs: 50,
            batch_size: 32,
            patience: 5,
            class_weighting: true,
            grad_clip: Some(5.0),
            penalty: 0.0,
            seed: 7,
            exec: Exec::Parallel,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr >= 0.0 && self.lr.is_finite()) || self.batch_size == 0 || self.penalty < 0.0 {
            return Err(Error::Config(format!("invalid training hyperparameters: {self:?}")));
        }
        if self.grad_clip.is_some_and(|c| c <= 0.0) {
            return Err(Error::Config("grad_clip must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_auc_pr: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainLog {
    pub epochs: Vec<EpochLog>,
    pub best_epoch: usize,
    pub stopped_early: bool,
}

impl TrainLog {
    pub fn to_text(&self) -> String {
        let mut out = String::from("epoch\ttrain_loss\tval_loss\tval_auc_pr\n");
        for e in &self.epochs {
            let auc = e.val_auc_pr.map_or("NA".to_string(), |a| format!("{a:.6}"));
            out.push_str(&format!("{}\t{:.6}\t{:.6}\t{auc}\n", e.epoch, e.train_loss, e.val_loss));
        }
        out.push_str(&format!("best_epoch\t{}\n", self.best_epoch));
        out
    }
}

/// Adam with the usual defaults (β₁ = 0.9, β₂ = 0.999, ε = 1e-8).
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    t: i32,
    m: Vec<Matrix>,
    v: Vec<Matrix>,
}

impl Adam {
    pub fn new(store: &ParamStore, lr: f64) -> Self {
        let zeros = || {
            store
                .slots()
                .iter()
                .map(|s| Matrix::zeros(s.value().rows(), s.value().cols()))
                .collect::<Vec<_>>()
        };
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    /// Applies one update from the gradients accumulated in `store`.
    pub fn step(&mut self, store: &mut ParamStore) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        let ids: Vec<_> = store.ids().filter(|&id| store.slot(id).trainable).collect();
        for id in ids {
            let k = id.index();
            let g = store.grad(id).clone();
            let (m, v) = (&mut self.m[k], &mut self.v[k]);
            let value = store.value_mut(id);
            for j in 0..g.len() {
                let gj = g.data()[j];
                let mj = &mut m.data_mut()[j];
                *mj = self.beta1 * *mj + (1.0 - self.beta1) * gj;
                let vj = &mut v.data_mut()[j];
                *vj = self.beta2 * *vj + (1.0 - self.beta2) * gj * gj;
                let update = self.lr * (m.data()[j] / c1) / ((v.data()[j] / c2).sqrt() + self.eps);
                value.data_mut()[j] -= update;
            }
        }
    }
}

/// SplitMix64 over three words; used to derive per-example seeds.
pub fn mix_seed(a: u64, b: u64, c: u64) -> u64 {
    let mut z = a ^ b.rotate_left(21) ^ c.rotate_left(42);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// `(control weight, case weight)`.
pub fn class_weights(xs: &[PatientTensor], enabled: bool) -> (f64, f64) {
    let cases = xs.iter().filter(|x| x.label.is_case()).count();
    if !enabled || cases == 0 || cases == xs.len() {
        return (1.0, 1.0);
    }
    (1.0, (xs.len() - cases) as f64 / cases as f64)
}

/// Weighted loss and gradients of one mini-batch, reduced in batch order.
pub fn batch_gradients<M: Classifier + ?Sized>(
    model: &M,
    batch: &[&PatientTensor],
    weights: (f64, f64),
    ctx_for: impl Fn(usize) -> StepCtx + Sync + Send,
    exec: Exec,
) -> Result<(f64, Gradients)> {
    let n = batch.len() as f64;
    let parts = par::map(exec, batch, |k, x| -> Result<(f64, Gradients)> {
        let w = if x.label.is_case() { weights.1 } else { weights.0 };
        let mut tape = Tape::new();
        let loss = model.loss(model.store(), &mut tape, x, &ctx_for(k))?;
        let scaled = tape.scale(loss, w / n);
        let value = tape.value(scaled).item();
        Ok((value, tape.backward(scaled)?))
    });
    let mut total = 0.0;
    let mut grads = Gradients::default();
    for part in parts {
        let (v, g) = part?;
        total += v;
        grads.add_scaled(&g, 1.0);
    }
    Ok((total, grads))
}

/// Mean unweighted loss and AUC-PR (when both classes are present).
pub fn evaluate<M: Classifier + ?Sized>(model: &M, xs: &[PatientTensor], exec: Exec) -> Result<(f64, Option<f64>)> {
    let out = par::map(exec, xs, |_, x| -> Result<(f64, f64)> {
        let p = model.predict_pair(x)?;
        let nll = -p[x.label as usize].max(f64::MIN_POSITIVE).ln();
        Ok((nll, p[1]))
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    let loss = out.iter().map(|o| o.0).sum::<f64>() / xs.len().max(1) as f64;
    let auc = score_set(xs, out.iter().map(|o| o.1).collect()).ok().map(|s| auc_pr(&s));
    Ok((loss, auc))
}

/// Trains in place and leaves the best-validation parameters in `model`.
pub fn train<M: Classifier + ?Sized>(
    model: &mut M,
    train_set: &[PatientTensor],
    val_set: &[PatientTensor],
    cfg: &TrainConfig,
) -> Result<TrainLog> {
    cfg.validate()?;
    if train_set.is_empty() || val_set.is_empty() {
        return Err(Error::Input("training and validation sets must be nonempty".into()));
    }
    let weights = class_weights(train_set, cfg.class_weighting);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut adam = Adam::new(model.store(), cfg.lr);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut log = TrainLog::default();
    let mut best: Option<(f64, f64, ParamStore)> = None;
    let mut since_best = 0;

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let batch: Vec<&PatientTensor> = chunk.iter().map(|&i| &train_set[i]).collect();
            let ctx_for = |k: usize| StepCtx {
                train: true,
                seed: mix_seed(cfg.seed, epoch as u64, (b * cfg.batch_size + k) as u64),
                penalty: cfg.penalty,
            };
            let (loss, grads) = batch_gradients(&*model, &batch, weights, ctx_for, cfg.exec)?;
            if !loss.is_finite() {
                return Err(Error::Training {
                    epoch,
                    reason: format!("non-finite loss {loss}"),
                });
            }
            epoch_loss += loss * batch.len() as f64;
            let store = model.store_mut();
            store.zero_grads();
            store.accumulate(&grads);
            if let Some(c) = cfg.grad_clip {
                store.clip_grad_norm(c);
            }
            adam.step(store);
            if !store.all_finite() {
                return Err(Error::Training {
                    epoch,
                    reason: "parameters became non-finite".into(),
                });
            }
        }
        let (val_loss, val_auc) = evaluate(&*model, val_set, cfg.exec)?;
        if !val_loss.is_finite() {
            return Err(Error::Training {
                epoch,
                reason: "non-finite validation loss".into(),
            });
        }
        log.epochs.push(EpochLog {
            epoch,
            train_loss: epoch_loss / train_set.len() as f64,
            val_loss,
            val_auc_pr: val_auc,
        });
        let score = val_auc.unwrap_or(f64::NEG_INFINITY);
        let improved = match &best {
            None => true,
            Some((s, l, _)) => score > *s || (score == *s && val_loss < *l),
        };
        if improved {
            best = Some((score, val_loss, model.store().clone()));
            log.best_epoch = epoch;
            since_best = 0;
        } else {
            since_best += 1;
            if cfg.patience > 0 && since_best >= cfg.patience {
                log.stopped_early = true;
                break;
            }
        }
    }
    if let Some((_, _, store)) = best {
        *model.store_mut() = store;
    }
    Ok(log)
}
