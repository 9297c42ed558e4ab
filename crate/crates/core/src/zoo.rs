//! Uniform construction, fitting and checkpointing for every model kind.

use crate::baselines::{BaselineConfig, LogisticConfig, LogisticModel, MlpModel, SequenceModel};
use crate::cohort::{PatientTensor, Vocabulary};
use crate::error::{Error, Result};
use crate::model::{Checkpoint, ModelConfig, ModelKind, SavehrModel};
use crate::numerics::{ParamStore, Tape, Var};
use crate::train::{train, Classifier, EpochLog, StepCtx, TrainConfig, TrainLog};

#[derive(Debug, Clone)]
pub enum AnyModel {
    Savehr(SavehrModel),
    Logistic(LogisticModel),
    Mlp(MlpModel),
    Sequence(SequenceModel),
}

/// Everything needed to rebuild a model's parameter layout.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ModelSpec {
    pub model: ModelConfig,
    pub baseline: BaselineConfig,
}

impl ModelSpec {
    pub fn to_pairs(&self) -> Vec<(String, String)> {
        let mut pairs = self.model.to_pairs();
        pairs.extend(self.baseline.to_pairs());
        pairs
    }

    pub fn from_pairs(pairs: &[(String, String)]) -> Result<Self> {
        let (base, model): (Vec<_>, Vec<_>) = pairs
            .iter()
            .cloned()
            .partition(|(k, _)| BaselineConfig::KEYS.contains(&k.as_str()));
        Ok(ModelSpec {
            model: ModelConfig::from_pairs(&model)?,
            baseline: BaselineConfig::from_pairs(&base)?,
        })
    }
}

impl AnyModel {
    pub fn build(kind: ModelKind, spec: &ModelSpec, vocab_len: usize) -> Result<Self> {
        spec.model.validate()?;
        spec.baseline.validate()?;
        Ok(match kind {
            ModelKind::Savehr => AnyModel::Savehr(SavehrModel::new(spec.model.clone(), vocab_len)?),
            ModelKind::Lr => AnyModel::Logistic(LogisticModel::new(vocab_len)),
            ModelKind::Mlp => AnyModel::Mlp(MlpModel::new(vocab_len, &spec.baseline, spec.model.seed)?),
            other => AnyModel::Sequence(SequenceModel::new(other, &spec.model, &spec.baseline, vocab_len)?),
        })
    }

    fn inner(&self) -> &dyn Classifier {
        match self {
            AnyModel::Savehr(m) => m,
            AnyModel::Logistic(m) => m,
            AnyModel::Mlp(m) => m,
            AnyModel::Sequence(m) => m,
        }
    }

    fn inner_mut(&mut self) -> &mut dyn Classifier {
        match self {
            AnyModel::Savehr(m) => m,
            AnyModel::Logistic(m) => m,
            AnyModel::Mlp(m) => m,
            AnyModel::Sequence(m) => m,
        }
    }

    /// Fits the model. Logistic regression uses its own full-batch solver
    /// and reports a single log entry; everything else goes through the
    /// shared mini-batch trainer.
    pub fn fit(
        &mut self,
        train_set: &[PatientTensor],
        val_set: &[PatientTensor],
        cfg: &TrainConfig,
        lr_cfg: &LogisticConfig,
    ) -> Result<TrainLog> {
        match self {
            AnyModel::Logistic(m) => {
                let fit = m.fit(train_set, val_set, lr_cfg)?;
                let (val_loss, val_auc_pr) = crate::train::evaluate(&*m, val_set, cfg.exec)?;
                Ok(TrainLog {
                    epochs: vec![EpochLog {
                        epoch: fit.epochs,
                        train_loss: fit.final_loss,
                        val_loss,
                        val_auc_pr,
                    }],
                    best_epoch: fit.epochs,
                    stopped_early: !fit.converged,
                })
            }
            AnyModel::Mlp(m) => {
                m.fit_scaler(train_set);
                train(m, train_set, val_set, cfg)
            }
            AnyModel::Savehr(m) => train(m, train_set, val_set, cfg),
            AnyModel::Sequence(m) => train(m, train_set, val_set, cfg),
        }
    }

    pub fn as_savehr(&self) -> Option<&SavehrModel> {
        match self {
            AnyModel::Savehr(m) => Some(m),
            _ => None,
        }
    }

    pub fn to_checkpoint(&self, spec: &ModelSpec, vocab: &Vocabulary) -> Checkpoint {
        Checkpoint::from_store(self.kind(), spec.to_pairs(), vocab.hash(), vocab.len(), self.store())
    }

    /// Rebuilds a model from a checkpoint, refusing a different vocabulary.
    pub fn from_checkpoint(ckpt: &Checkpoint, vocab: &Vocabulary) -> Result<(Self, ModelSpec)> {
        if ckpt.vocab_hash != vocab.hash() || ckpt.vocab_size != vocab.len() {
            return Err(Error::Compatibility(format!(
                "checkpoint vocabulary {} ({} codes) differs from cohort vocabulary {} ({} codes)",
                ckpt.vocab_hash,
                ckpt.vocab_size,
                vocab.hash(),
                vocab.len()
            )));
        }
        let spec = ModelSpec::from_pairs(&ckpt.config)?;
        let mut model = AnyModel::build(ckpt.kind, &spec, ckpt.vocab_size)?;
        ckpt.restore_into(model.store_mut())?;
        Ok((model, spec))
    }
}

impl Classifier for AnyModel {
    fn kind(&self) -> ModelKind {
        self.inner().kind()
    }

    fn store(&self) -> &ParamStore {
        self.inner().store()
    }

    fn store_mut(&mut self) -> &mut ParamStore {
        self.inner_mut().store_mut()
    }

    fn logits(&self, store: &ParamStore, tape: &mut Tape, x: &PatientTensor, ctx: &StepCtx) -> Result<Var> {
        self.inner().logits(store, tape, x, ctx)
    }

    fn loss(&self, store: &ParamStore, tape: &mut Tape, x: &PatientTensor, ctx: &StepCtx) -> Result<Var> {
        self.inner().loss(store, tape, x, ctx)
    }

    fn predict_pair(&self, x: &PatientTensor) -> Result<[f64; 2]> {
        self.inner().predict_pair(x)
    }
}
