use crate::cohort::DEMO_TOKENS;
use crate::error::{Error, Result};

/// Network sizes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelConfig {
    /// Embedding width `e`; embedded tokens carry one extra count channel.
    pub embed_dim: usize,
    /// Hidden width `d_a` of the self-attention scorer.
    pub attn_dim: usize,
    /// Number of attention hops `r`.
    pub hops: usize,
    /// GRU hidden size per direction.
    pub gru_hidden: usize,
    /// Hidden width of the quarter-level MLP attention.
    pub att_hidden: usize,
    /// Token cap per quarter, demographic tokens included.
    pub max_tokens: usize,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            embed_dim: 16,
            attn_dim: 16,
            hops: 4,
            gru_hidden: 32,
            att_hidden: 32,
            max_tokens: 64,
            seed: 7,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let dims = [self.embed_dim, self.attn_dim, self.hops, self.gru_hidden, self.att_hidden];
        if dims.contains(&0) {
            return Err(Error::Config(format!("all model dimensions must be ≥ 1: {self:?}")));
        }
        if self.max_tokens < DEMO_TOKENS + 1 {
            return Err(Error::Config(format!(
                "max_tokens {} leaves no room for codes after {DEMO_TOKENS} demographic tokens",
                self.max_tokens
            )));
        }
        Ok(())
    }

    /// Width of an embedded token row (`e + 1`).
    pub fn token_width(&self) -> usize {
        self.embed_dim + 1
    }

    /// Length of a flattened quarter encoding (`r · (e + 1)`).
    pub fn quarter_width(&self) -> usize {
        self.hops * self.token_width()
    }

    pub fn code_slots(&self) -> usize {
        self.max_tokens - DEMO_TOKENS
    }

    pub fn to_pairs(&self) -> Vec<(String, String)> {
        [
            ("embed_dim", self.embed_dim as u64),
            ("attn_dim", self.attn_dim as u64),
            ("hops", self.hops as u64),
            ("gru_hidden", self.gru_hidden as u64),
            ("att_hidden", self.att_hidden as u64),
            ("max_tokens", self.max_tokens as u64),
            ("seed", self.seed),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .collect()
    }

    pub fn from_pairs(pairs: &[(String, String)]) -> Result<Self> {
        let mut cfg = ModelConfig::default();
        for (k, v) in pairs {
            let n: u64 = v
                .parse()
                .map_err(|_| Error::Config(format!("bad value `{v}` for model key `{k}`")))?;
            match k.as_str() {
                "embed_dim" => cfg.embed_dim = n as usize,
                "attn_dim" => cfg.attn_dim = n as usize,
                "hops" => cfg.hops = n as usize,
                "gru_hidden" => cfg.gru_hidden = n as usize,
                "att_hidden" => cfg.att_hidden = n as usize,
                "max_tokens" => cfg.max_tokens = n as usize,
                "seed" => cfg.seed = n,
                _ => return Err(Error::Config(format!("unknown model key `{k}`"))),
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }
}
