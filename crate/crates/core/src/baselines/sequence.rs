use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::cohort::{PatientTensor, DEMO_DIM, N_QUARTERS};
use crate::error::{Error, Result};
use crate::model::{active_codes, embed, BiGru, Dense, MlpAttention, ModelConfig, ModelKind, QuarterTokens};
use crate::numerics::{glorot_uniform, Matrix, ParamId, ParamStore, Tape, Var};
use crate::train::{Classifier, StepCtx};

use super::BaselineConfig;

/// How one quarter is reduced to a single vector before the Bi-GRU.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum QuarterEncoder {
    /// `log(1 + count)` vector over the vocabulary through one linear layer.
    CountProjection(Dense),
    /// Shared per-token linear map, relu, sum over tokens.
    TokenConv(Dense),
    /// One weight per padded token slot, combined across slots, plus bias, relu.
    SlotKernel { slots: ParamId, bias: ParamId },
    /// Fully connected layer over the flattened padded quarter, relu.
    FlatDense(Dense),
}

/// Bi-GRU baselines over per-quarter code encodings, with demographics
/// concatenated after the recurrent layer.
#[derive(Debug, Clone)]
pub struct SequenceModel {
    pub kind: ModelKind,
    pub cfg: ModelConfig,
    pub vocab_len: usize,
    pub store: ParamStore,
    /// Code embeddings (`vocab × e`); unused by the count-projection kind.
    pub embedding: Option<ParamId>,
    pub encoder: QuarterEncoder,
    /// Width of an encoded quarter.
    pub quarter_width: usize,
    pub gru: BiGru,
    pub attention: Option<MlpAttention>,
    pub head: Dense,
}

impl SequenceModel {
    pub fn new(kind: ModelKind, cfg: &ModelConfig, base: &BaselineConfig, vocab_len: usize) -> Result<Self> {
        cfg.validate()?;
        base.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut store = ParamStore::new();
        let width = cfg.token_width();
        let embedding = match kind {
            ModelKind::Bg | ModelKind::BgA => None,
            _ => Some(store.add("embedding", glorot_uniform(&mut rng, vocab_len, cfg.embed_dim))),
        };
        let (encoder, gru_input) = match kind {
            ModelKind::Bg | ModelKind::BgA => (
                QuarterEncoder::CountProjection(Dense::new(&mut store, &mut rng, "bag", vocab_len, base.hidden)),
                base.hidden,
            ),
            ModelKind::Cnn1g | ModelKind::Cnn1gA => (
                QuarterEncoder::TokenConv(Dense::new(&mut store, &mut rng, "conv1", width, base.hidden)),
                base.hidden,
            ),
            ModelKind::Cnnlk | ModelKind::CnnlkA => (
                QuarterEncoder::SlotKernel {
                    slots: store.add("conv_lk.W", glorot_uniform(&mut rng, 1, cfg.max_tokens)),
                    bias: store.add("conv_lk.b", Matrix::zeros(1, width)),
                },
                width,
            ),
            ModelKind::DenseA => (
                QuarterEncoder::FlatDense(Dense::new(&mut store, &mut rng, "dense", cfg.max_tokens * width, base.hidden)),
                base.hidden,
            ),
            other => return Err(Error::Config(format!("{other} is not a sequence baseline"))),
        };
        let gru = BiGru::new(&mut store, &mut rng, gru_input, cfg.gru_hidden);
        let attention = kind
            .attends_over_quarters()
            .then(|| MlpAttention::new(&mut store, &mut rng, 2 * cfg.gru_hidden, cfg.att_hidden));
        let head = Dense::new(&mut store, &mut rng, "head", 2 * cfg.gru_hidden + DEMO_DIM, 2);
        Ok(SequenceModel {
            kind,
            cfg: cfg.clone(),
            vocab_len,
            store,
            embedding,
            encoder,
            quarter_width: gru_input,
            gru,
            attention,
            head,
        })
    }

    /// Code tokens of quarter `q` in vocabulary order, at most `max_tokens`.
    pub fn quarter_tokens(&self, x: &PatientTensor, q: usize) -> QuarterTokens {
        let codes = active_codes(x, q, self.cfg.max_tokens);
        QuarterTokens {
            ids: codes.iter().map(|&(i, _)| i).collect(),
            counts: codes.iter().map(|&(_, c)| f64::from(c)).collect(),
        }
    }

    /// Encodes one quarter. Token order matters only for the slot-based kinds.
    pub fn encode_quarter(
        &self,
        store: &ParamStore,
        tape: &mut Tape,
        x: &PatientTensor,
        tokens: &QuarterTokens,
        q: usize,
    ) -> Result<Var> {
        let width = self.cfg.token_width();
        let padded = |tape: &mut Tape| -> Result<Var> {
            let pad = self.cfg.max_tokens - tokens.len();
            let mut parts = Vec::with_capacity(2);
            if !tokens.is_empty() {
                parts.push(embed(tape, store, self.embedding.expect("embedding present"), tokens)?);
            }
            if pad > 0 {
                parts.push(tape.constant(Matrix::zeros(pad, width)));
            }
            tape.concat_rows(&parts)
        };
        match &self.encoder {
            QuarterEncoder::CountProjection(dense) => {
                let counts: Vec<f64> = x.dense_quarter(q, self.vocab_len).iter().map(|c| c.ln_1p()).collect();
                let v = tape.constant(Matrix::row_vector(&counts));
                dense.apply(tape, store, v)
            }
            QuarterEncoder::TokenConv(dense) => {
                if tokens.is_empty() {
                    return Ok(tape.constant(Matrix::zeros(1, self.quarter_width)));
                }
                let e = embed(tape, store, self.embedding.expect("embedding present"), tokens)?;
                let h = dense.apply(tape, store, e)?;
                let h = tape.relu(h);
                Ok(tape.sum_rows(h))
            }
            QuarterEncoder::SlotKernel { slots, bias } => {
                let p = padded(tape)?;
                let w = tape.param(store, *slots);
                let b = tape.param(store, *bias);
                let c = tape.matmul(w, p)?;
                let c = tape.add(c, b)?;
                Ok(tape.relu(c))
            }
            QuarterEncoder::FlatDense(dense) => {
                let p = padded(tape)?;
                let flat = tape.reshape(p, 1, self.cfg.max_tokens * width)?;
                let h = dense.apply(tape, store, flat)?;
                Ok(tape.relu(h))
            }
        }
    }

    /// Bi-GRU outputs and the pooled representation (attended or last).
    pub fn recurrent(&self, store: &ParamStore, tape: &mut Tape, x: &PatientTensor) -> Result<(Vec<Var>, Var)> {
        if let Some(i) = x.max_vocab_index().filter(|&i| i >= self.vocab_len) {
            return Err(Error::Vocabulary(format!(
                "patient {} uses code index {i} beyond vocabulary of {}",
                x.patient_id, self.vocab_len
            )));
        }
        let mut xs = Vec::with_capacity(N_QUARTERS);
        for q in 0..N_QUARTERS {
            let tokens = self.quarter_tokens(x, q);
            xs.push(self.encode_quarter(store, tape, x, &tokens, q)?);
        }
        let hs = self.gru.apply(tape, store, &xs)?;
        let pooled = match &self.attention {
            Some(att) => att.apply(tape, store, &hs)?.1,
            None => hs[N_QUARTERS - 1],
        };
        Ok((hs, pooled))
    }
}

impl Classifier for SequenceModel {
    fn kind(&self) -> ModelKind {
        self.kind
    }

    fn store(&self) -> &ParamStore {
        &self.store
    }

    fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    fn logits(&self, store: &ParamStore, tape: &mut Tape, x: &PatientTensor, _ctx: &StepCtx) -> Result<Var> {
        let (_, pooled) = self.recurrent(store, tape, x)?;
        let demo = tape.constant(Matrix::row_vector(&x.demographics.onehot()));
        let rep = tape.concat_cols(&[pooled, demo])?;
        self.head.apply(tape, store, rep)
    }
}
