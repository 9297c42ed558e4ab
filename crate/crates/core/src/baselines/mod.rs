//! Comparison models: logistic regression and an MLP on flattened counts,
//! and Bi-GRU sequence models with different per-quarter encoders.

mod flat;
mod sequence;

pub use flat::{
    dropout_mask, fit_logistic, flat_dim, flat_features, LogisticConfig, LogisticFit, LogisticModel, MlpModel,
    Standardizer,
};
pub use sequence::{QuarterEncoder, SequenceModel};

use crate::error::{Error, Result};

/// Sizes shared by the baselines: MLP width and convolution filter count.
#[derive(Debug, Clone, PartialEq)]
pub struct BaselineConfig {
    pub hidden: usize,
    /// MLP dropout rate, applied during training only.
    pub dropout: f64,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        BaselineConfig {
            hidden: 64,
            dropout: 0.3,
        }
    }
}

impl BaselineConfig {
    pub const KEYS: [&'static str; 2] = ["hidden", "dropout"];

    pub fn validate(&self) -> Result<()> {
        if self.hidden == 0 || !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("invalid baseline sizes: {self:?}")));
        }
        Ok(())
    }

    pub fn to_pairs(&self) -> Vec<(String, String)> {
        vec![
            ("hidden".into(), self.hidden.to_string()),
            ("dropout".into(), self.dropout.to_string()),
        ]
    }

    pub fn from_pairs(pairs: &[(String, String)]) -> Result<Self> {
        let mut cfg = BaselineConfig::default();
        for (k, v) in pairs {
            let bad = || Error::Config(format!("bad value `{v}` for `{k}`"));
            match k.as_str() {
                "hidden" => cfg.hidden = v.parse().map_err(|_| bad())?,
                "dropout" => cfg.dropout = v.parse().map_err(|_| bad())?,
                _ => return Err(Error::Config(format!("unknown baseline key `{k}`"))),
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }
}
