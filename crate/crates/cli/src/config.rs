//! Run configuration: `key = value` lines with defaults for every key.

use std::collections::BTreeMap;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use savehr::baselines::{BaselineConfig, LogisticConfig};
use savehr::cohort::{random_shift, Code, CohortSpec, ConditionModel, GeneratorConfig, PlantedPair, N_QUARTERS};
use savehr::model::{ModelConfig, ModelKind};
use savehr::par::Exec;
use savehr::train::{mix_seed, TrainConfig};
use savehr::zoo::ModelSpec;

use crate::CliError;

pub const N_CONDITIONS: usize = 4;

/// Every recognised key with its default value.
pub const DEFAULTS: &[(&str, &str)] = &[
    // generation
    ("seed", "1"),
    ("n_patients", "2000"),
    ("vocab_size", "50"),
    ("pairs_per_condition", "3"),
    ("pair_weight", "3.0"),
    ("base_rate", "0.01"),
    ("age_effect", "0.2"),
    ("planted_prevalence", "0.3"),
    ("chronic_recall", "0.3"),
    ("noise_rate", "0.4"),
    ("mean_gap_days", "24"),
    ("temporal_profile", "1,1,1,1"),
    ("shift", "random"),
    ("shift_spread", "0.7"),
    ("shift_aliases", "0"),
    ("shift_age_years", "0"),
    ("shift_gender", "0"),
    // cohort
    ("condition", "cond0"),
    ("split_seed", "7"),
    ("split", "0.6,0.2,0.2"),
    ("min_code_occurrences", "50"),
    // model
    ("model", "SAVEHR"),
    ("embed_dim", "32"),
    ("attn_dim", "16"),
    ("hops", "4"),
    ("gru_hidden", "32"),
    ("att_hidden", "32"),
    ("max_tokens", "64"),
    ("model_seed", "7"),
    ("hidden", "64"),
    ("dropout", "0.3"),
    // training
    ("lr", "0.01"),
    ("epochs", "60"),
    ("batch_size", "32"),
    ("patience", "10"),
    ("penalty", "0"),
    ("class_weighting", "true"),
    ("grad_clip", "5"),
    ("train_seed", "7"),
    ("logistic_lr", "0.5"),
    ("logistic_epochs", "3000"),
    ("exec", "parallel"),
    // evaluation and explanation
    ("cv", "0"),
    ("cv_seed", "11"),
    ("patients", ""),
    ("top_k", "20"),
];

/// Raw key/value settings. Only known keys can be set.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    values: BTreeMap<String, String>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            values: DEFAULTS.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect(),
        }
    }
}

impl RunConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), CliError> {
        match self.values.get_mut(key) {
            Some(slot) => {
                *slot = value.trim().to_string();
                Ok(())
            }
            None => Err(CliError::Config(format!("unknown config key `{key}`"))),
        }
    }

    pub fn get(&self, key: &str) -> &str {
        self.values.get(key).map(String::as_str).unwrap_or_default()
    }

    /// Applies a `key=value` override.
    pub fn apply_override(&mut self, assignment: &str) -> Result<(), CliError> {
        let (k, v) = assignment
            .split_once('=')
            .ok_or_else(|| CliError::Config(format!("override `{assignment}` is not key=value")))?;
        self.set(k.trim(), v)
    }

    /// Applies every `key = value` line of `text`; blank lines and lines
    /// starting with `#` are skipped.
    pub fn apply_text(&mut self, text: &str, origin: &str) -> Result<(), CliError> {
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            self.apply_override(line)
                .map_err(|e| CliError::Config(format!("{origin}:{}: {e}", i + 1)))?;
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg = RunConfig::default();
        cfg.apply_text(&text, &path.display().to_string())?;
        Ok(cfg)
    }

    /// All settings as `key = value` lines in key order.
    pub fn to_text(&self) -> String {
        self.values.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }
}

/// Typed view of a [`RunConfig`], fully validated.
#[derive(Debug, Clone)]
pub struct Settings {
    pub seed: u64,
    pub p2_seed: u64,
    pub p1: GeneratorConfig,
    pub p2: GeneratorConfig,
    pub condition: ConditionModel,
    pub cohort: CohortSpec,
    pub split_seed: u64,
    pub fractions: (f64, f64, f64),
    pub kind: ModelKind,
    pub spec: ModelSpec,
    pub train: TrainConfig,
    pub logistic: LogisticConfig,
    pub exec: Exec,
    pub cv: usize,
    pub cv_seed: u64,
    pub patients: Vec<u32>,
    pub top_k: usize,
}

fn parse<T: std::str::FromStr>(cfg: &RunConfig, key: &str) -> Result<T, CliError> {
    let v = cfg.get(key);
    v.parse()
        .map_err(|_| CliError::Config(format!("bad value `{v}` for `{key}`")))
}

fn parse_list<T: std::str::FromStr>(cfg: &RunConfig, key: &str) -> Result<Vec<T>, CliError> {
    let v = cfg.get(key);
    if v.is_empty() {
        return Ok(Vec::new());
    }
    v.split(',')
        .map(|s| s.trim().parse())
        .collect::<Result<_, _>>()
        .map_err(|_| CliError::Config(format!("bad list `{v}` for `{key}`")))
}

/// Disjoint planted pairs for every condition, drawn from the background
/// codes with a stream derived from the generation seed.
pub fn condition_pairs(seed: u64, vocab_size: usize, per_condition: usize, weight: f64) -> Vec<Vec<PlantedPair>> {
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, 0x7061_6972, 0));
    let codes = rand::seq::index::sample(&mut rng, vocab_size, 2 * per_condition * N_CONDITIONS).into_vec();
    codes
        .chunks(2 * per_condition)
        .map(|chunk| {
            chunk
                .chunks(2)
                .map(|p| PlantedPair {
                    a: Code(p[0].min(p[1]) as u32),
                    b: Code(p[0].max(p[1]) as u32),
                    weight,
                })
                .collect()
        })
        .collect()
}

impl Settings {
    pub fn resolve(cfg: &RunConfig) -> Result<Self, CliError> {
        let seed: u64 = parse(cfg, "seed")?;
        let vocab_size: usize = parse(cfg, "vocab_size")?;
        let per: usize = parse(cfg, "pairs_per_condition")?;
        if 2 * per * N_CONDITIONS > vocab_size {
            return Err(CliError::Config(format!(
                "{N_CONDITIONS} conditions × {per} pairs need {} distinct codes, vocab_size is {vocab_size}",
                2 * per * N_CONDITIONS
            )));
        }
        let base_rate: f64 = parse(cfg, "base_rate")?;
        let conditions: Vec<ConditionModel> = condition_pairs(seed, vocab_size, per, parse(cfg, "pair_weight")?)
            .into_iter()
            .enumerate()
            .map(|(k, pairs)| ConditionModel::synthetic(k, vocab_size, pairs, base_rate))
            .collect();

        let mut p1 = GeneratorConfig::new(parse(cfg, "n_patients")?, vocab_size, conditions.clone());
        p1.age_effect = parse(cfg, "age_effect")?;
        p1.planted_prevalence = parse(cfg, "planted_prevalence")?;
        p1.chronic_recall = parse(cfg, "chronic_recall")?;
        p1.noise_rate = parse(cfg, "noise_rate")?;
        p1.mean_gap_days = parse(cfg, "mean_gap_days")?;
        let profile: Vec<f64> = parse_list(cfg, "temporal_profile")?;
        p1.temporal_profile = profile
            .try_into()
            .map_err(|_| CliError::Config(format!("temporal_profile needs {N_QUARTERS} weights")))?;
        p1.validate()?;

        let p2_seed = mix_seed(seed, 2, 0);
        let mut p2 = p1.clone();
        p2.id_base = 1_000_000;
        p2.shift = match cfg.get("shift") {
            "none" => None,
            "random" => Some(random_shift(
                mix_seed(seed, 3, 0),
                vocab_size,
                parse(cfg, "shift_spread")?,
                parse(cfg, "shift_aliases")?,
                parse(cfg, "shift_age_years")?,
                parse(cfg, "shift_gender")?,
            )),
            other => return Err(CliError::Config(format!("shift must be `none` or `random`, got `{other}`"))),
        };
        p2.validate()?;

        let name = cfg.get("condition");
        let condition = conditions
            .iter()
            .find(|c| c.name == name)
            .cloned()
            .ok_or_else(|| CliError::Config(format!("unknown condition `{name}` (cond0..cond{})", N_CONDITIONS - 1)))?;
        let mut cohort = condition.cohort_spec();
        cohort.min_code_occurrences = parse(cfg, "min_code_occurrences")?;
        cohort.validate()?;

        let split: Vec<f64> = parse_list(cfg, "split")?;
        let fractions = match split[..] {
            [a, b, c] if a > 0.0 && b > 0.0 && c > 0.0 && ((a + b + c) - 1.0).abs() < 1e-9 => (a, b, c),
            _ => return Err(CliError::Config("split needs three positive fractions summing to 1".into())),
        };

        let kind: ModelKind = cfg
            .get("model")
            .parse()
            .map_err(|_| CliError::Config(format!("unknown model `{}`", cfg.get("model"))))?;
        let spec = ModelSpec {
            model: ModelConfig {
                embed_dim: parse(cfg, "embed_dim")?,
                attn_dim: parse(cfg, "attn_dim")?,
                hops: parse(cfg, "hops")?,
                gru_hidden: parse(cfg, "gru_hidden")?,
                att_hidden: parse(cfg, "att_hidden")?,
                max_tokens: parse(cfg, "max_tokens")?,
                seed: parse(cfg, "model_seed")?,
            },
            baseline: BaselineConfig {
                hidden: parse(cfg, "hidden")?,
                dropout: parse(cfg, "dropout")?,
            },
        };
        spec.model.validate()?;
        spec.baseline.validate()?;

        let exec = match cfg.get("exec") {
            "parallel" => Exec::Parallel,
            "sequential" => Exec::Sequential,
            other => return Err(CliError::Config(format!("exec must be `parallel` or `sequential`, got `{other}`"))),
        };
        let clip: f64 = parse(cfg, "grad_clip")?;
        let train = TrainConfig {
            lr: parse(cfg, "lr")?,
            epochs: parse(cfg, "epochs")?,
            batch_size: parse(cfg, "batch_size")?,
            patience: parse(cfg, "patience")?,
            class_weighting: parse(cfg, "class_weighting")?,
            grad_clip: (clip > 0.0).then_some(clip),
            penalty: parse(cfg, "penalty")?,
            seed: parse(cfg, "train_seed")?,
            exec,
        };
        train.validate()?;
        let logistic = LogisticConfig {
            lr: parse(cfg, "logistic_lr")?,
            max_epochs: parse(cfg, "logistic_epochs")?,
            exec,
            ..LogisticConfig::default()
        };
        if !(logistic.lr > 0.0 && logistic.lr.is_finite()) {
            return Err(CliError::Config("logistic_lr must be positive".into()));
        }
        let cv: usize = parse(cfg, "cv")?;
        if cv == 1 {
            return Err(CliError::Config("cv needs at least 2 folds (0 disables)".into()));
        }
        Ok(Settings {
            seed,
            p2_seed,
            p1,
            p2,
            condition,
            cohort,
            split_seed: parse(cfg, "split_seed")?,
            fractions,
            kind,
            spec,
            train,
            logistic,
            exec,
            cv,
            cv_seed: parse(cfg, "cv_seed")?,
            patients: parse_list(cfg, "patients")?,
            top_k: parse(cfg, "top_k")?,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_resolve() {
        let s = Settings::resolve(&RunConfig::default()).unwrap();
        assert_eq!(s.kind, ModelKind::Savehr);
        assert_eq!(s.condition.name, "cond0");
        assert!(s.p2.shift.is_some());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let mut cfg = RunConfig::default();
        assert!(matches!(cfg.set("learning_rate", "1"), Err(CliError::Config(_))));
        assert!(cfg.apply_text("# comment\n\nlr = 0.1\n", "x").is_ok());
        assert_eq!(cfg.get("lr"), "0.1");
        assert!(cfg.apply_text("lr 0.1", "x").is_err());
    }

    #[test]
    fn bad_values_are_config_errors() {
        for (k, v) in [
            ("condition", "cond9"),
            ("shift", "big"),
            ("split", "0.5,0.5"),
            ("temporal_profile", "1,1"),
            ("model", "transformer"),
            ("vocab_size", "20"),
            ("cv", "1"),
            ("embed_dim", "0"),
        ] {
            let mut cfg = RunConfig::default();
            cfg.set(k, v).unwrap();
            assert!(matches!(Settings::resolve(&cfg), Err(CliError::Config(_))), "{k}={v}");
        }
    }

    #[test]
    fn text_round_trip() {
        let mut cfg = RunConfig::default();
        cfg.set("seed", "42").unwrap();
        let mut back = RunConfig::default();
        back.apply_text(&cfg.to_text(), "m").unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn condition_pairs_are_disjoint_and_seeded() {
        let a = condition_pairs(5, 50, 3, 3.0);
        assert_eq!(a, condition_pairs(5, 50, 3, 3.0));
        assert_ne!(a, condition_pairs(6, 50, 3, 3.0));
        let mut codes: Vec<Code> = a.iter().flatten().flat_map(|p| [p.a, p.b]).collect();
        assert_eq!(codes.len(), 24);
        codes.sort();
        codes.dedup();
        assert_eq!(codes.len(), 24);
    }
}
