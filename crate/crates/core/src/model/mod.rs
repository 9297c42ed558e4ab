//! The self-attentive Bi-GRU network and the layers it shares with the
//! sequence baselines.

mod checkpoint;
mod config;
mod layers;
mod savehr;
mod tokens;

use std::fmt;
use std::str::FromStr;

pub use checkpoint::{read_checkpoint, write_checkpoint, Checkpoint, CHECKPOINT_TAG};
pub use config::ModelConfig;
pub use layers::{attend, embed, softmax_nll, BiGru, BoundGru, Dense, GruCell, MlpAttention, SelfAttention};
pub use savehr::{
    gru_quarters, mlp_attention, self_attend, single_hop_attend, ForwardTrace, SavehrForward, SavehrModel,
};
pub use tokens::{active_codes, token_label, tokenize_quarter, QuarterTokens};

use crate::error::Error;

/// Every trainable model the pipeline knows about.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ModelKind {
    Savehr,
    Lr,
    Mlp,
    Bg,
    BgA,
    Cnn1g,
    Cnn1gA,
    Cnnlk,
    CnnlkA,
    DenseA,
}

impl ModelKind {
    pub const ALL: [ModelKind; 10] = [
        ModelKind::Savehr,
        ModelKind::Lr,
        ModelKind::Mlp,
        ModelKind::Bg,
        ModelKind::BgA,
        ModelKind::Cnn1g,
        ModelKind::Cnn1gA,
        ModelKind::Cnnlk,
        ModelKind::CnnlkA,
        ModelKind::DenseA,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Savehr => "SAVEHR",
            ModelKind::Lr => "LR",
            ModelKind::Mlp => "MLP",
            ModelKind::Bg => "BG",
            ModelKind::BgA => "BG_A",
            ModelKind::Cnn1g => "CNN1G",
            ModelKind::Cnn1gA => "CNN1G_A",
            ModelKind::Cnnlk => "CNNLK",
            ModelKind::CnnlkA => "CNNLK_A",
            ModelKind::DenseA => "DENSE_A",
        }
    }

    /// Sequence baselines that pool the Bi-GRU outputs with MLP attention.
    pub fn attends_over_quarters(self) -> bool {
        matches!(
            self,
            ModelKind::Savehr | ModelKind::BgA | ModelKind::Cnn1gA | ModelKind::CnnlkA | ModelKind::DenseA
        )
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        let norm = s.to_ascii_uppercase().replace(['-', '_'], "");
        ModelKind::ALL
            .into_iter()
            .find(|k| k.name().replace('_', "") == norm)
            .ok_or_else(|| Error::Config(format!("unknown model kind `{s}`")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kind_names_round_trip() {
        for k in ModelKind::ALL {
            assert_eq!(k.name().parse::<ModelKind>().unwrap(), k);
        }
        assert_eq!("cnn-lk-a".parse::<ModelKind>().unwrap(), ModelKind::CnnlkA);
        assert!("RF".parse::<ModelKind>().is_err());
    }
}
