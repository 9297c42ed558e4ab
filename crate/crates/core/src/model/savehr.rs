use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::cohort::{PatientTensor, DEMO_DIM, N_QUARTERS};
use crate::error::{Error, Result};
use crate::numerics::{glorot_uniform, Matrix, ParamId, ParamStore, Tape, Var};
use crate::train::{Classifier, StepCtx};

use super::layers::{attend, embed, BiGru, Dense, MlpAttention, SelfAttention};
use super::tokens::{tokenize_quarter, QuarterTokens};
use super::{ModelConfig, ModelKind};

/// Token embeddings, per-quarter multi-hop self-attention, a Bi-GRU over the
/// four quarter encodings, MLP attention over quarters and a softmax head.
#[derive(Debug, Clone)]
pub struct SavehrModel {
    pub cfg: ModelConfig,
    pub vocab_len: usize,
    pub store: ParamStore,
    pub embedding: ParamId,
    pub attention: SelfAttention,
    pub gru: BiGru,
    pub quarter_attention: MlpAttention,
    pub head: Dense,
}

/// Tape handles for one forward pass.
#[derive(Debug, Clone)]
pub struct SavehrForward {
    pub tokens: Vec<QuarterTokens>,
    pub embedded: Vec<Var>,
    pub annotations: Vec<Var>,
    pub encodings: Vec<Var>,
    pub hidden: Vec<Var>,
    pub alpha: Var,
    pub patient_vector: Var,
    pub logits: Var,
}

/// Values retained from a forward pass for interpretation.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTrace {
    pub patient_id: u32,
    pub tokens: Vec<QuarterTokens>,
    /// `n_t × (e+1)` per quarter.
    pub embedded: Vec<Matrix>,
    /// `r × n_t` per quarter; each row is a distribution over tokens.
    pub annotations: Vec<Matrix>,
    /// `r × (e+1)` per quarter.
    pub encodings: Vec<Matrix>,
    /// Bi-GRU outputs, `1 × 2d_h` each.
    pub hidden: Vec<Matrix>,
    pub alpha: [f64; N_QUARTERS],
    pub patient_vector: Matrix,
    /// `(P(control), P(case))`.
    pub probs: [f64; 2],
}

impl SavehrModel {
    pub fn new(cfg: ModelConfig, vocab_len: usize) -> Result<Self> {
        cfg.validate()?;
        if vocab_len == 0 {
            return Err(Error::Config("vocabulary is empty".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut store = ParamStore::new();
        let embedding = store.add("embedding", glorot_uniform(&mut rng, DEMO_DIM + vocab_len, cfg.embed_dim));
        let attention = SelfAttention::new(&mut store, &mut rng, cfg.token_width(), cfg.attn_dim, cfg.hops);
        let gru = BiGru::new(&mut store, &mut rng, cfg.quarter_width(), cfg.gru_hidden);
        let quarter_attention = MlpAttention::new(&mut store, &mut rng, 2 * cfg.gru_hidden, cfg.att_hidden);
        let head = Dense::new(&mut store, &mut rng, "W_savehr", 2 * cfg.gru_hidden, 2);
        Ok(SavehrModel {
            cfg,
            vocab_len,
            store,
            embedding,
            attention,
            gru,
            quarter_attention,
            head,
        })
    }

    pub fn check_input(&self, x: &PatientTensor) -> Result<()> {
        match x.max_vocab_index() {
            Some(i) if i >= self.vocab_len => Err(Error::Vocabulary(format!(
                "patient {} uses code index {i} but the model vocabulary has {} codes",
                x.patient_id, self.vocab_len
            ))),
            _ => Ok(()),
        }
    }

    pub fn forward(&self, tape: &mut Tape, x: &PatientTensor) -> Result<SavehrForward> {
        self.forward_with(&self.store, tape, x)
    }

    /// Forward pass reading parameter values from `store`, which must share
    /// this model's layout.
    pub fn forward_with(&self, store: &ParamStore, tape: &mut Tape, x: &PatientTensor) -> Result<SavehrForward> {
        self.check_input(x)?;
        let tokens: Vec<QuarterTokens> = (0..N_QUARTERS).map(|q| tokenize_quarter(x, q, &self.cfg)).collect();
        let (mut embedded, mut annotations, mut encodings, mut flat) = (vec![], vec![], vec![], vec![]);
        for t in &tokens {
            let e = embed(tape, store, self.embedding, t)?;
            let (a, q) = self.attention.apply(tape, store, e)?;
            flat.push(tape.reshape(q, 1, self.cfg.quarter_width())?);
            embedded.push(e);
            annotations.push(a);
            encodings.push(q);
        }
        let hidden = self.gru.apply(tape, store, &flat)?;
        let (alpha, patient_vector) = self.quarter_attention.apply(tape, store, &hidden)?;
        let logits = self.head.apply(tape, store, patient_vector)?;
        Ok(SavehrForward {
            tokens,
            embedded,
            annotations,
            encodings,
            hidden,
            alpha,
            patient_vector,
            logits,
        })
    }

    /// `Σ_t ‖A_t A_tᵀ − I‖²_F`.
    pub fn redundancy_penalty(&self, tape: &mut Tape, fwd: &SavehrForward) -> Result<Var> {
        let eye = tape.constant(Matrix::identity(self.cfg.hops));
        let mut terms = Vec::with_capacity(N_QUARTERS);
        for &a in &fwd.annotations {
            let gram = tape.matmul_nt(a, a)?;
            let diff = tape.sub(gram, eye)?;
            let sq = tape.mul(diff, diff)?;
            terms.push(tape.sum(sq));
        }
        let stacked = tape.concat_cols(&terms)?;
        Ok(tape.sum(stacked))
    }

    pub fn predict(&self, x: &PatientTensor) -> Result<([f64; 2], ForwardTrace)> {
        let mut tape = Tape::new();
        let fwd = self.forward(&mut tape, x)?;
        let p = tape.value(fwd.logits).row_softmax();
        let probs = [p.get(0, 0), p.get(0, 1)];
        let values = |vs: &[Var]| vs.iter().map(|&v| tape.value(v).clone()).collect::<Vec<_>>();
        let a = tape.value(fwd.alpha).data();
        let trace = ForwardTrace {
            patient_id: x.patient_id,
            embedded: values(&fwd.embedded),
            annotations: values(&fwd.annotations),
            encodings: values(&fwd.encodings),
            hidden: values(&fwd.hidden),
            alpha: [a[0], a[1], a[2], a[3]],
            patient_vector: tape.value(fwd.patient_vector).clone(),
            probs,
            tokens: fwd.tokens,
        };
        Ok((probs, trace))
    }
}

impl Classifier for SavehrModel {
    fn kind(&self) -> ModelKind {
        ModelKind::Savehr
    }

    fn store(&self) -> &ParamStore {
        &self.store
    }

    fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    fn logits(&self, store: &ParamStore, tape: &mut Tape, x: &PatientTensor, _ctx: &StepCtx) -> Result<Var> {
        Ok(self.forward_with(store, tape, x)?.logits)
    }

    fn loss(&self, store: &ParamStore, tape: &mut Tape, x: &PatientTensor, ctx: &StepCtx) -> Result<Var> {
        let fwd = self.forward_with(store, tape, x)?;
        let (_, nll) = super::softmax_nll(tape, fwd.logits, x.label as usize)?;
        if ctx.penalty == 0.0 {
            return Ok(nll);
        }
        let pen = self.redundancy_penalty(tape, &fwd)?;
        let pen = tape.scale(pen, ctx.penalty);
        tape.add(nll, pen)
    }
}

/// Multi-hop self-attention over an embedded quarter `e` (`n × (e+1)`) with
/// `w_s1` (`d_a × (e+1)`) and `w_s2` (`r × d_a`). Returns `(A, A·E)`.
pub fn self_attend(e: &Matrix, w_s1: &Matrix, w_s2: &Matrix) -> Result<(Matrix, Matrix)> {
    let mut tape = Tape::new();
    let (ev, w1, w2) = (tape.constant(e.clone()), tape.constant(w_s1.clone()), tape.constant(w_s2.clone()));
    let (a, q) = attend(&mut tape, w1, w2, ev)?;
    Ok((tape.value(a).clone(), tape.value(q).clone()))
}

/// One attention hop: `w_s2` is a single `d_a` vector. Returns the token
/// weights and the weighted sum.
pub fn single_hop_attend(e: &Matrix, w_s1: &Matrix, w_s2: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    let (a, q) = self_attend(e, w_s1, &Matrix::row_vector(w_s2))?;
    Ok((a.into_data(), q.into_data()))
}

/// Runs a Bi-GRU over flattened quarter encodings (`1 × r(e+1)` each).
pub fn gru_quarters(gru: &BiGru, store: &ParamStore, quarters: &[Matrix]) -> Result<Vec<Matrix>> {
    let mut tape = Tape::new();
    let xs: Vec<Var> = quarters.iter().map(|q| tape.constant(q.clone())).collect();
    let hs = gru.apply(&mut tape, store, &xs)?;
    Ok(hs.iter().map(|&h| tape.value(h).clone()).collect())
}

/// Quarter weights and the pooled patient vector.
pub fn mlp_attention(att: &MlpAttention, store: &ParamStore, hidden: &[Matrix]) -> Result<(Vec<f64>, Matrix)> {
    let mut tape = Tape::new();
    let hs: Vec<Var> = hidden.iter().map(|h| tape.constant(h.clone())).collect();
    let (alpha, v) = att.apply(&mut tape, store, &hs)?;
    Ok((tape.value(alpha).data().to_vec(), tape.value(v).clone()))
}

#[cfg(test)]
mod tests {
    use rand::Rng;

    use super::*;
    use crate::cohort::{Demographics, Label};
    use crate::numerics::grad_check;

    fn toy_cfg() -> ModelConfig {
        ModelConfig {
            embed_dim: 8,
            attn_dim: 6,
            hops: 3,
            gru_hidden: 8,
            att_hidden: 8,
            max_tokens: 10,
            seed: 11,
        }
    }

    fn patient(label: Label) -> PatientTensor {
        PatientTensor {
            patient_id: 3,
            label,
            demographics: Demographics { gender: 0, race: 3, age_bin: 5 },
            quarters: [vec![(0, 2), (5, 1)], vec![], vec![(1, 1), (5, 3), (11, 1)], vec![(7, 4)]],
        }
    }

    fn random(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Matrix {
        Matrix::new(r, c, (0..r * c).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn self_attention_matches_direct_product() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (e, w1, w2) = (random(&mut rng, 5, 4), random(&mut rng, 3, 4), random(&mut rng, 2, 3));
        let (a, q) = self_attend(&e, &w1, &w2).unwrap();
        for h in 0..2 {
            let logits: Vec<f64> = (0..5)
                .map(|j| {
                    (0..3)
                        .map(|k| w2.get(h, k) * (0..4).map(|c| w1.get(k, c) * e.get(j, c)).sum::<f64>().tanh())
                        .sum()
                })
                .collect();
            let m = logits.iter().cloned().fold(f64::MIN, f64::max);
            let z: f64 = logits.iter().map(|l| (l - m).exp()).sum();
            for (j, l) in logits.iter().enumerate() {
                assert!((a.get(h, j) - (l - m).exp() / z).abs() < 1e-12);
            }
            for c in 0..4 {
                let expect: f64 = (0..5).map(|j| a.get(h, j) * e.get(j, c)).sum();
                assert!((q.get(h, c) - expect).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn single_token_and_zero_scorer() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let e = random(&mut rng, 1, 4);
        let (a, q) = self_attend(&e, &random(&mut rng, 3, 4), &random(&mut rng, 2, 3)).unwrap();
        assert_eq!(a.data(), &[1.0, 1.0]);
        assert_eq!(q.row(0), e.row(0));
        assert_eq!(q.row(1), e.row(0));

        let e = random(&mut rng, 4, 4);
        let (a, q) = self_attend(&e, &Matrix::zeros(3, 4), &random(&mut rng, 2, 3)).unwrap();
        assert!(a.data().iter().all(|&v| v == 0.25));
        for c in 0..4 {
            let mean = (0..4).map(|j| e.get(j, c)).sum::<f64>() / 4.0;
            assert!((q.get(0, c) - mean).abs() < 1e-15);
        }
    }

    #[test]
    fn single_hop_is_the_one_row_case() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (e, w1) = (random(&mut rng, 6, 5), random(&mut rng, 4, 5));
        let w2: Vec<f64> = (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let (a, q) = single_hop_attend(&e, &w1, &w2).unwrap();
        let (am, qm) = self_attend(&e, &w1, &Matrix::row_vector(&w2)).unwrap();
        assert_eq!(a, am.into_data());
        assert_eq!(q, qm.into_data());
        assert!((a.iter().sum::<f64>() - 1.0).abs() < 1e-12);

        let uniform = Matrix::filled(3, 5, 0.4);
        let (a, _) = single_hop_attend(&uniform, &w1, &w2).unwrap();
        assert!(a.iter().all(|&v| (v - 1.0 / 3.0).abs() < 1e-15));
    }

    #[test]
    fn zero_head_predicts_half() {
        let mut m = SavehrModel::new(toy_cfg(), 12).unwrap();
        m.store.value_mut(m.head.w).fill(0.0);
        let (p, trace) = m.predict(&patient(Label::Case)).unwrap();
        assert_eq!(p, [0.5, 0.5]);
        assert_eq!(trace.annotations[1].shape(), (3, 3));
        assert_eq!(trace.annotations[2].shape(), (3, 6));
    }

    #[test]
    fn trace_distributions_are_normalized() {
        let m = SavehrModel::new(toy_cfg(), 12).unwrap();
        let (p, trace) = m.predict(&patient(Label::Control)).unwrap();
        assert!((p[0] + p[1] - 1.0).abs() < 1e-12);
        assert!((trace.alpha.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        for a in &trace.annotations {
            for r in 0..a.rows() {
                assert!((a.row(r).iter().sum::<f64>() - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn out_of_vocabulary_index_is_rejected() {
        let m = SavehrModel::new(toy_cfg(), 8).unwrap();
        assert!(matches!(m.predict(&patient(Label::Case)), Err(Error::Vocabulary(_))));
    }

    #[test]
    fn full_model_gradients_match_finite_differences() {
        for penalty in [0.0, 0.5] {
            let m = SavehrModel::new(toy_cfg(), 12).unwrap();
            let x = patient(Label::Case);
            let mut store = m.store.clone();
            let ctx = StepCtx { penalty, ..StepCtx::INFERENCE };
            let report = grad_check(&mut store, 20, 1e-4, 5, |tape, s| m.loss(s, tape, &x, &ctx)).unwrap();
            assert!(report.pass, "{:?}", report.worst());
        }
    }
}
