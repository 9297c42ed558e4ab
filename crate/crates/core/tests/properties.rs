use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use savehr::cohort::{Demographics, Label, PatientTensor, DEMO_DIM};
use savehr::model::{ModelConfig, SavehrModel};
use savehr::numerics::{grad_check, Matrix, ParamStore, Tape, Var};

/// One step of a random expression over 3×3 matrices.
#[derive(Debug, Clone, Copy)]
enum Op {
    MatmulA,
    MatmulNtB,
    AddB,
    MulA,
    Tanh,
    Sigmoid,
    Softmax,
    LogSoftmax,
    Transpose,
    Scale(i8),
    GatherAdd([usize; 3]),
    SumRowsAddRow,
}

fn op() -> impl Strategy<Value = Op> {
    prop_oneof![
        Just(Op::MatmulA),
        Just(Op::MatmulNtB),
        Just(Op::AddB),
        Just(Op::MulA),
        Just(Op::Tanh),
        Just(Op::Sigmoid),
        Just(Op::Softmax),
        Just(Op::LogSoftmax),
        Just(Op::Transpose),
        (-3i8..=3).prop_map(Op::Scale),
        prop::array::uniform3(0usize..5).prop_map(Op::GatherAdd),
        Just(Op::SumRowsAddRow),
    ]
}

fn build(tape: &mut Tape, store: &ParamStore, ops: &[Op]) -> Var {
    let ids: Vec<_> = store.ids().collect();
    let (a, b, table) = (tape.param(store, ids[0]), tape.param(store, ids[1]), ids[2]);
    let mut x = a;
    for &op in ops {
        x = match op {
            Op::MatmulA => tape.matmul(x, a).unwrap(),
            Op::MatmulNtB => tape.matmul_nt(x, b).unwrap(),
            Op::AddB => tape.add(x, b).unwrap(),
            Op::MulA => tape.mul(x, a).unwrap(),
            Op::Tanh => tape.tanh(x),
            Op::Sigmoid => tape.sigmoid(x),
            Op::Softmax => tape.row_softmax(x),
            Op::LogSoftmax => tape.row_log_softmax(x),
            Op::Transpose => tape.transpose(x),
            Op::Scale(s) => tape.scale(x, f64::from(s) * 0.5),
            Op::GatherAdd(rows) => {
                let g = tape.gather(store, table, &rows).unwrap();
                tape.add(x, g).unwrap()
            }
            Op::SumRowsAddRow => {
                let s = tape.sum_rows(x);
                tape.add_row(x, s).unwrap()
            }
        };
    }
    let y = tape.tanh(x);
    tape.sum(y)
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 200, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn random_graphs_match_finite_differences(
        ops in prop::collection::vec(op(), 1..8),
        values in prop::collection::vec(-0.8f64..0.8, 33),
    ) {
        let mut store = ParamStore::new();
        store.add("a", Matrix::new(3, 3, values[..9].to_vec()).unwrap());
        store.add("b", Matrix::new(3, 3, values[9..18].to_vec()).unwrap());
        store.add("table", Matrix::new(5, 3, values[18..].to_vec()).unwrap());
        let report = grad_check(&mut store, 20, 1e-6, 0, |t, s| Ok(build(t, s, &ops))).unwrap();
        prop_assert!(report.pass, "{:?} worst {}", ops, report.worst());
    }
}

fn patient(rng: &mut ChaCha8Rng, vocab: usize, max_codes: usize) -> PatientTensor {
    let quarters = std::array::from_fn(|_| {
        let mut q: Vec<(usize, u32)> = Vec::new();
        let n = rng.gen_range(0..=max_codes);
        for i in rand::seq::index::sample(rng, vocab, n) {
            q.push((i, rng.gen_range(1..5)));
        }
        q.sort();
        q
    });
    PatientTensor {
        patient_id: 1,
        label: Label::Case,
        demographics: Demographics { gender: 1, race: 3, age_bin: 6 },
        quarters,
    }
}

#[test]
fn relabelling_codes_with_their_embeddings_leaves_predictions_unchanged() {
    let vocab = 15;
    let cfg = ModelConfig {
        embed_dim: 5,
        attn_dim: 4,
        hops: 2,
        gru_hidden: 4,
        att_hidden: 4,
        max_tokens: 12,
        seed: 9,
    };
    let model = SavehrModel::new(cfg.clone(), vocab).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut perm: Vec<usize> = (0..vocab).collect();
    for i in (1..vocab).rev() {
        perm.swap(i, rng.gen_range(0..=i));
    }

    let mut relabelled = model.clone();
    let table = model.store.value(model.embedding);
    let moved = relabelled.store.value_mut(model.embedding);
    for (old, &new) in perm.iter().enumerate() {
        moved.row_mut(DEMO_DIM + new).copy_from_slice(table.row(DEMO_DIM + old));
    }

    for _ in 0..50 {
        // Stay under the token cap so truncation tie-breaks do not apply.
        let x = patient(&mut rng, vocab, cfg.code_slots());
        let mut y = x.clone();
        for q in &mut y.quarters {
            for entry in q.iter_mut() {
                entry.0 = perm[entry.0];
            }
            q.sort();
        }
        let (p, _) = model.predict(&x).unwrap();
        let (p2, _) = relabelled.predict(&y).unwrap();
        assert!((p[1] - p2[1]).abs() < 1e-12, "{p:?} vs {p2:?}");
    }
}
