use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

use super::{ParamStore, Tape, Var};

/// Step used for central differences.
pub const FD_STEP: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq)]
pub struct ParamCheck {
    pub name: String,
    pub max_rel_error: f64,
    pub entries: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub params: Vec<ParamCheck>,
    pub tolerance: f64,
    pub pass: bool,
}

impl GradCheckReport {
    pub fn worst(&self) -> f64 {
        self.params.iter().map(|p| p.max_rel_error).fold(0.0, f64::max)
    }

    pub fn tested_entries(&self) -> usize {
        self.params.iter().map(|p| p.entries).sum()
    }
}

/// `|a − n| / max(1, |a|, |n|)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / 1f64.max(analytic.abs()).max(numeric.abs())
}

fn eval<F>(store: &ParamStore, forward: &F) -> Result<f64>
where
    F: Fn(&mut Tape, &ParamStore) -> Result<Var>,
{
    let mut tape = Tape::new();
    let loss = forward(&mut tape, store)?;
    Ok(tape.value(loss).item())
}

/// Compares analytic gradients of `forward`'s scalar output with central
/// differences on up to `entries_per_param` randomly chosen entries of each
/// trainable parameter.
pub fn grad_check<F>(
    store: &mut ParamStore,
    entries_per_param: usize,
    tolerance: f64,
    seed: u64,
    forward: F,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &ParamStore) -> Result<Var>,
{
    let first = eval(store, &forward)?;
    let second = eval(store, &forward)?;
    if first.to_bits() != second.to_bits() {
        return Err(Error::Determinism { first, second });
    }

    let mut tape = Tape::new();
    let loss = forward(&mut tape, store)?;
    let grads = tape.backward(loss)?;
    drop(tape);

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = Vec::new();
    let ids: Vec<_> = store.ids().filter(|&id| store.slot(id).trainable).collect();
    for id in ids {
        let len = store.value(id).len();
        let picks: Vec<usize> = if len <= entries_per_param {
            (0..len).collect()
        } else {
            sample(&mut rng, len, entries_per_param).into_vec()
        };
        let mut worst = 0f64;
        for &k in &picks {
            let analytic = grads.get(id).map_or(0.0, |g| g.data()[k]);
            let orig = store.value(id).data()[k];
            store.value_mut(id).data_mut()[k] = orig + FD_STEP;
            let plus = eval(store, &forward);
            store.value_mut(id).data_mut()[k] = orig - FD_STEP;
            let minus = eval(store, &forward);
            store.value_mut(id).data_mut()[k] = orig;
            let numeric = (plus? - minus?) / (2.0 * FD_STEP);
            worst = worst.max(relative_error(analytic, numeric));
        }
        params.push(ParamCheck {
            name: store.slot(id).name.clone(),
            max_rel_error: worst,
            entries: picks.len(),
        });
    }
    let pass = params.iter().all(|p| p.max_rel_error <= tolerance);
    Ok(GradCheckReport {
        params,
        tolerance,
        pass,
    })
}

#[cfg(test)]
mod tests {
    use std::cell::Cell;

    use super::*;
    use crate::numerics::Matrix;

    fn quadratic_store() -> (ParamStore, crate::numerics::ParamId) {
        let mut store = ParamStore::new();
        let w = store.add(
            "w",
            Matrix::new(3, 2, vec![0.5, -1.0, 2.0, 0.25, -0.75, 1.5]).unwrap(),
        );
        (store, w)
    }

    #[test]
    fn quadratic_matches_to_machine_scale() {
        let (mut store, w) = quadratic_store();
        let x = Matrix::col_vector(&[1.5, -0.5]);
        let report = grad_check(&mut store, 20, 1e-10, 0, |tape, s| {
            let wv = tape.param(s, w);
            let xv = tape.constant(x.clone());
            let y = tape.matmul(wv, xv)?;
            let sq = tape.mul(y, y)?;
            let total = tape.sum(sq);
            Ok(tape.scale(total, 0.5))
        })
        .unwrap();
        assert!(report.pass, "{report:?}");
        assert!(report.worst() <= 1e-10);
        assert_eq!(report.tested_entries(), 6);
    }

    #[test]
    fn corrupted_backward_rule_fails() {
        // The product rule loses one branch when one factor is detached, so
        // the analytic gradient is half the true one.
        let (mut store, w) = quadratic_store();
        let x = Matrix::col_vector(&[1.5, -0.5]);
        let report = grad_check(&mut store, 20, 1e-4, 0, |tape, s| {
            let wv = tape.param(s, w);
            let xv = tape.constant(x.clone());
            let y = tape.matmul(wv, xv)?;
            let frozen = tape.detach(y);
            let sq = tape.mul(y, frozen)?;
            Ok(tape.sum(sq))
        })
        .unwrap();
        assert!(!report.pass);
    }

    #[test]
    fn nondeterministic_loss_is_rejected() {
        let (mut store, w) = quadratic_store();
        let calls = Cell::new(0.0);
        let err = grad_check(&mut store, 5, 1e-4, 0, |tape, s| {
            calls.set(calls.get() + 1.0);
            let wv = tape.param(s, w);
            let total = tape.sum(wv);
            Ok(tape.offset(total, calls.get()))
        })
        .unwrap_err();
        assert!(matches!(err, Error::Determinism { .. }));
    }
}
