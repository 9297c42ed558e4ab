use crate::cohort::{PatientTensor, Vocabulary, DEMO_DIM, DEMO_TOKENS, N_GENDERS, N_RACES};

use super::ModelConfig;

/// Tokens attended over in one quarter: the three demographic tokens, then
/// the codes recorded in that quarter.
#[derive(Debug, Clone, PartialEq)]
pub struct QuarterTokens {
    /// Rows of the embedding table. Demographic tokens occupy rows
    /// `0..DEMO_DIM` (their one-hot positions); code `i` is row `DEMO_DIM + i`.
    pub ids: Vec<usize>,
    pub counts: Vec<f64>,
}

impl QuarterTokens {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Vocabulary indices of the code tokens.
    pub fn code_indices(&self) -> impl Iterator<Item = usize> + '_ {
        self.ids[DEMO_TOKENS..].iter().map(|id| id - DEMO_DIM)
    }
}

/// Codes of quarter `q` (0 = earliest) by descending count, ties by
/// vocabulary order, truncated to `cap`, then returned in vocabulary order.
pub fn active_codes(tensor: &PatientTensor, q: usize, cap: usize) -> Vec<(usize, u32)> {
    let mut codes = tensor.quarters[q].clone();
    if codes.len() > cap {
        codes.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
        codes.truncate(cap);
        codes.sort_by_key(|&(i, _)| i);
    }
    codes
}

pub fn tokenize_quarter(tensor: &PatientTensor, q: usize, cfg: &ModelConfig) -> QuarterTokens {
    assert!(q < 4, "quarter slot {q} out of range");
    let mut ids: Vec<usize> = tensor.demographics.onehot_indices().to_vec();
    let mut counts = vec![1.0; DEMO_TOKENS];
    for (i, c) in active_codes(tensor, q, cfg.code_slots()) {
        ids.push(DEMO_DIM + i);
        counts.push(f64::from(c));
    }
    QuarterTokens { ids, counts }
}

/// Human-readable label for an embedding-table row.
pub fn token_label(id: usize, vocab: &Vocabulary) -> String {
    const AGE_START: usize = 30;
    if id < N_GENDERS {
        format!("gender:{id}")
    } else if id < N_GENDERS + N_RACES {
        format!("race:{}", id - N_GENDERS)
    } else if id < DEMO_DIM {
        let lo = AGE_START + 5 * (id - N_GENDERS - N_RACES);
        format!("age:{lo}-{}", lo + 4)
    } else {
        vocab.code(id - DEMO_DIM).to_string()
    }
}
