//! Building blocks shared by the attention model and the sequence baselines.
//! Vectors are `1 × n` rows; weight matrices are stored `out × in` and
//! applied as `x · Wᵀ`.

use rand::Rng;

use crate::error::Result;
use crate::numerics::{glorot_uniform, Matrix, ParamId, ParamStore, Tape, Var};

use super::QuarterTokens;

fn weight<R: Rng>(store: &mut ParamStore, rng: &mut R, name: String, rows: usize, cols: usize) -> ParamId {
    store.add(name, glorot_uniform(rng, rows, cols))
}

fn bias(store: &mut ParamStore, name: String, cols: usize) -> ParamId {
    store.add(name, Matrix::zeros(1, cols))
}

/// Looks up token embeddings and appends the `log(1 + count)` channel.
/// Gradients reach the table rows only.
pub fn embed(tape: &mut Tape, store: &ParamStore, table: ParamId, tokens: &QuarterTokens) -> Result<Var> {
    let rows = tape.gather(store, table, &tokens.ids)?;
    let counts: Vec<f64> = tokens.counts.iter().map(|c| c.ln_1p()).collect();
    let channel = tape.constant(Matrix::col_vector(&counts));
    tape.concat_cols(&[rows, channel])
}

/// `A = softmax(W_s2 · tanh(W_s1 · Eᵀ))`, `Q = A · E`. `w_s2` may have a
/// single row, which gives the single-hop form.
pub fn attend(tape: &mut Tape, w_s1: Var, w_s2: Var, e: Var) -> Result<(Var, Var)> {
    let hidden = tape.matmul_nt(w_s1, e)?;
    let hidden = tape.tanh(hidden);
    let logits = tape.matmul(w_s2, hidden)?;
    let a = tape.row_softmax(logits);
    let q = tape.matmul(a, e)?;
    Ok((a, q))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SelfAttention {
    pub w_s1: ParamId,
    pub w_s2: ParamId,
}

impl SelfAttention {
    pub fn new<R: Rng>(store: &mut ParamStore, rng: &mut R, token_width: usize, attn_dim: usize, hops: usize) -> Self {
        SelfAttention {
            w_s1: weight(store, rng, "w_s1".into(), attn_dim, token_width),
            w_s2: weight(store, rng, "W_s2".into(), hops, attn_dim),
        }
    }

    /// Returns the annotation matrix (`r × n`) and the hop-weighted sums
    /// (`r × (e+1)`).
    pub fn apply(&self, tape: &mut Tape, store: &ParamStore, e: Var) -> Result<(Var, Var)> {
        let w1 = tape.param(store, self.w_s1);
        let w2 = tape.param(store, self.w_s2);
        attend(tape, w1, w2, e)
    }
}

/// One GRU direction.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GruCell {
    /// Input weights for update, reset and candidate gates.
    pub w: [ParamId; 3],
    /// Hidden weights, same gate order.
    pub u: [ParamId; 3],
    pub b: [ParamId; 3],
    pub hidden: usize,
}

/// Tape nodes for one cell's parameters, bound once per forward pass.
#[derive(Debug, Clone, Copy)]
pub struct BoundGru {
    w: [Var; 3],
    u: [Var; 3],
    b: [Var; 3],
    hidden: usize,
}

const GATES: [&str; 3] = ["z", "r", "n"];

impl GruCell {
    pub fn new<R: Rng>(store: &mut ParamStore, rng: &mut R, prefix: &str, input: usize, hidden: usize) -> Self {
        let w = GATES.map(|g| weight(store, rng, format!("{prefix}.W_{g}"), hidden, input));
        let u = GATES.map(|g| weight(store, rng, format!("{prefix}.U_{g}"), hidden, hidden));
        let b = GATES.map(|g| bias(store, format!("{prefix}.b_{g}"), hidden));
        GruCell { w, u, b, hidden }
    }

    pub fn bind(&self, tape: &mut Tape, store: &ParamStore) -> BoundGru {
        BoundGru {
            w: self.w.map(|p| tape.param(store, p)),
            u: self.u.map(|p| tape.param(store, p)),
            b: self.b.map(|p| tape.param(store, p)),
            hidden: self.hidden,
        }
    }
}

impl BoundGru {
    pub fn zero_state(&self, tape: &mut Tape) -> Var {
        tape.constant(Matrix::zeros(1, self.hidden))
    }

    /// z = σ(W_z x + U_z h + b_z), r = σ(W_r x + U_r h + b_r),
    /// ñ = tanh(W_n x + U_n (r ⊙ h) + b_n), h′ = (1 − z) ⊙ ñ + z ⊙ h.
    pub fn step(&self, tape: &mut Tape, x: Var, h: Var) -> Result<Var> {
        let gate = |tape: &mut Tape, k: usize, hin: Var| -> Result<Var> {
            let xw = tape.matmul_nt(x, self.w[k])?;
            let hu = tape.matmul_nt(hin, self.u[k])?;
            let s = tape.add(xw, hu)?;
            tape.add(s, self.b[k])
        };
        let z = gate(tape, 0, h)?;
        let z = tape.sigmoid(z);
        let r = gate(tape, 1, h)?;
        let r = tape.sigmoid(r);
        let rh = tape.mul(r, h)?;
        let n = gate(tape, 2, rh)?;
        let n = tape.tanh(n);
        let keep = tape.one_minus(z);
        let new = tape.mul(keep, n)?;
        let old = tape.mul(z, h)?;
        tape.add(new, old)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BiGru {
    pub forward: GruCell,
    pub backward: GruCell,
}

impl BiGru {
    pub fn new<R: Rng>(store: &mut ParamStore, rng: &mut R, input: usize, hidden: usize) -> Self {
        BiGru {
            forward: GruCell::new(store, rng, "gru_fwd", input, hidden),
            backward: GruCell::new(store, rng, "gru_bwd", input, hidden),
        }
    }

    /// Outputs `[forward_t ‖ backward_t]` for every step, zero initial states.
    pub fn apply(&self, tape: &mut Tape, store: &ParamStore, xs: &[Var]) -> Result<Vec<Var>> {
        let f = self.forward.bind(tape, store);
        let b = self.backward.bind(tape, store);
        let mut fwd = Vec::with_capacity(xs.len());
        let mut h = f.zero_state(tape);
        for &x in xs {
            h = f.step(tape, x, h)?;
            fwd.push(h);
        }
        let mut bwd = vec![h; xs.len()];
        let mut h = b.zero_state(tape);
        for (t, &x) in xs.iter().enumerate().rev() {
            h = b.step(tape, x, h)?;
            bwd[t] = h;
        }
        fwd.iter()
            .zip(&bwd)
            .map(|(&a, &b)| tape.concat_cols(&[a, b]))
            .collect()
    }
}

/// Scalar-scored softmax attention over time steps:
/// `e_t = vᵀ tanh(W h_t + b)`, `α = softmax(e)`, `V = Σ α_t h_t`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MlpAttention {
    pub w: ParamId,
    pub b: ParamId,
    pub v: ParamId,
}

impl MlpAttention {
    pub fn new<R: Rng>(store: &mut ParamStore, rng: &mut R, input: usize, hidden: usize) -> Self {
        MlpAttention {
            w: weight(store, rng, "W_att".into(), hidden, input),
            b: bias(store, "b_att".into(), hidden),
            v: weight(store, rng, "v_att".into(), 1, hidden),
        }
    }

    /// Returns `α` (`1 × T`) and `V` (`1 × input`).
    pub fn apply(&self, tape: &mut Tape, store: &ParamStore, hs: &[Var]) -> Result<(Var, Var)> {
        let h = tape.concat_rows(hs)?;
        let w = tape.param(store, self.w);
        let b = tape.param(store, self.b);
        let v = tape.param(store, self.v);
        let pre = tape.matmul_nt(h, w)?;
        let pre = tape.add_row(pre, b)?;
        let act = tape.tanh(pre);
        let scores = tape.matmul_nt(act, v)?;
        let scores = tape.transpose(scores);
        let alpha = tape.row_softmax(scores);
        let pooled = tape.matmul(alpha, h)?;
        Ok((alpha, pooled))
    }
}

/// Fully connected layer `x · Wᵀ + b` applied row-wise.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dense {
    pub w: ParamId,
    pub b: ParamId,
}

impl Dense {
    pub fn new<R: Rng>(store: &mut ParamStore, rng: &mut R, name: &str, input: usize, output: usize) -> Self {
        Dense {
            w: weight(store, rng, format!("{name}.W"), output, input),
            b: bias(store, format!("{name}.b"), output),
        }
    }

    pub fn apply(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let w = tape.param(store, self.w);
        let b = tape.param(store, self.b);
        let y = tape.matmul_nt(x, w)?;
        tape.add_row(y, b)
    }
}

/// Two-class head: log-probabilities and the class-weighted negative
/// log-likelihood of `label` (0 or 1).
pub fn softmax_nll(tape: &mut Tape, logits: Var, label: usize) -> Result<(Var, Var)> {
    let logp = tape.row_log_softmax(logits);
    let picked = tape.pick(logp, 0, label)?;
    Ok((logp, tape.scale(picked, -1.0)))
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::numerics::sigmoid;

    fn rand_row(rng: &mut ChaCha8Rng, n: usize) -> Matrix {
        Matrix::row_vector(&(0..n).map(|_| rng.gen_range(-1.0..1.0)).collect::<Vec<_>>())
    }

    #[test]
    fn scalar_gru_step_matches_hand_recurrence() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut store = ParamStore::new();
        let cell = GruCell::new(&mut store, &mut rng, "g", 1, 1);
        for id in cell.b {
            store.value_mut(id).data_mut()[0] = rng.gen_range(-1.0..1.0);
        }
        let p = |ids: [ParamId; 3], k: usize| store.value(ids[k]).item();
        let (x, h0) = (0.37, -0.52);

        let z = sigmoid(p(cell.w, 0) * x + p(cell.u, 0) * h0 + p(cell.b, 0));
        let r = sigmoid(p(cell.w, 1) * x + p(cell.u, 1) * h0 + p(cell.b, 1));
        let n = (p(cell.w, 2) * x + p(cell.u, 2) * (r * h0) + p(cell.b, 2)).tanh();
        let expected = (1.0 - z) * n + z * h0;

        let mut tape = Tape::new();
        let bound = cell.bind(&mut tape, &store);
        let xv = tape.constant(Matrix::scalar(x));
        let hv = tape.constant(Matrix::scalar(h0));
        let h1 = bound.step(&mut tape, xv, hv).unwrap();
        assert!((tape.value(h1).item() - expected).abs() < 1e-12);
    }

    #[test]
    fn zero_weights_and_inputs_give_zero_states() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut store = ParamStore::new();
        let gru = BiGru::new(&mut store, &mut rng, 3, 4);
        for id in store.ids().collect::<Vec<_>>() {
            store.value_mut(id).fill(0.0);
        }
        let mut tape = Tape::new();
        let xs: Vec<Var> = (0..4).map(|_| tape.constant(Matrix::zeros(1, 3))).collect();
        let hs = gru.apply(&mut tape, &store, &xs).unwrap();
        for h in hs {
            assert!(tape.value(h).data().iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn reversed_inputs_swap_directions() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut store = ParamStore::new();
        let gru = BiGru::new(&mut store, &mut rng, 3, 2);
        let swapped = BiGru {
            forward: gru.backward.clone(),
            backward: gru.forward.clone(),
        };
        let inputs: Vec<Matrix> = (0..4).map(|_| rand_row(&mut rng, 3)).collect();

        let mut tape = Tape::new();
        let xs: Vec<Var> = inputs.iter().map(|m| tape.constant(m.clone())).collect();
        let a = gru.apply(&mut tape, &store, &xs).unwrap();
        let rev: Vec<Var> = xs.iter().rev().copied().collect();
        let b = swapped.apply(&mut tape, &store, &rev).unwrap();
        for t in 0..4 {
            let ha = tape.value(a[t]).data();
            let hb = tape.value(b[3 - t]).data();
            assert_eq!(&ha[..2], &hb[2..]);
            assert_eq!(&ha[2..], &hb[..2]);
        }
    }

    #[test]
    fn identical_states_get_uniform_attention() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut store = ParamStore::new();
        let att = MlpAttention::new(&mut store, &mut rng, 6, 5);
        let h = rand_row(&mut rng, 6);
        let mut tape = Tape::new();
        let hs: Vec<Var> = (0..4).map(|_| tape.constant(h.clone())).collect();
        let (alpha, v) = att.apply(&mut tape, &store, &hs).unwrap();
        for &a in tape.value(alpha).data() {
            assert!((a - 0.25).abs() < 1e-15);
        }
        assert!(tape.value(v).max_abs_diff(&h) < 1e-15);
    }

    #[test]
    fn zero_scorer_gives_uniform_attention() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut store = ParamStore::new();
        let att = MlpAttention::new(&mut store, &mut rng, 6, 5);
        store.value_mut(att.v).fill(0.0);
        let mut tape = Tape::new();
        let hs: Vec<Var> = (0..4).map(|_| tape.constant(rand_row(&mut rng, 6))).collect();
        let (alpha, _) = att.apply(&mut tape, &store, &hs).unwrap();
        assert_eq!(tape.value(alpha).data(), &[0.25; 4]);
        let total: f64 = tape.value(alpha).sum();
        assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn embed_appends_log_count_channel() {
        let mut store = ParamStore::new();
        let table = store.add("table", Matrix::new(3, 2, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap());
        let tokens = QuarterTokens { ids: vec![2, 0], counts: vec![0.0, 3.0] };
        let mut tape = Tape::new();
        let e = embed(&mut tape, &store, table, &tokens).unwrap();
        let m = tape.value(e);
        assert_eq!(m.row(0), &[5.0, 6.0, 0.0]);
        assert_eq!(&m.row(1)[..2], &[1.0, 2.0]);
        assert!((m.get(1, 2) - 4f64.ln()).abs() < 1e-15);
    }
}
