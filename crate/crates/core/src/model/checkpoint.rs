use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::numerics::{Matrix, ParamStore};

use super::ModelKind;

pub const CHECKPOINT_TAG: &str = "savehr-model/1";

/// Parsed checkpoint: model kind, configuration pairs, the vocabulary it was
/// trained on and named parameter values in store order.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub kind: ModelKind,
    pub config: Vec<(String, String)>,
    pub vocab_hash: String,
    pub vocab_size: usize,
    pub params: Vec<(String, Matrix)>,
}

impl Checkpoint {
    pub fn from_store(
        kind: ModelKind,
        config: Vec<(String, String)>,
        vocab_hash: String,
        vocab_size: usize,
        store: &ParamStore,
    ) -> Self {
        let params = store.slots().iter().map(|s| (s.name.clone(), s.value().clone())).collect();
        Checkpoint {
            kind,
            config,
            vocab_hash,
            vocab_size,
            params,
        }
    }

    /// Copies values into a freshly built store after checking that names
    /// and shapes agree slot by slot.
    pub fn restore_into(&self, store: &mut ParamStore) -> Result<()> {
        if store.len() != self.params.len() {
            return Err(Error::Compatibility(format!(
                "checkpoint has {} parameters, model expects {}",
                self.params.len(),
                store.len()
            )));
        }
        let ids: Vec<_> = store.ids().collect();
        for (id, (name, value)) in ids.into_iter().zip(&self.params) {
            let slot = store.slot(id);
            if &slot.name != name || slot.value().shape() != value.shape() {
                return Err(Error::Compatibility(format!(
                    "checkpoint parameter {name} {:?} does not match model parameter {} {:?}",
                    value.shape(),
                    slot.name,
                    slot.value().shape()
                )));
            }
            *store.value_mut(id) = value.clone();
        }
        Ok(())
    }

    pub fn config_value(&self, key: &str) -> Option<&str> {
        self.config.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("{CHECKPOINT_TAG}\nkind\t{}\n", self.kind);
        for (k, v) in &self.config {
            out.push_str(&format!("config\t{k}\t{v}\n"));
        }
        out.push_str(&format!("vocab_hash\t{}\nvocab_size\t{}\n", self.vocab_hash, self.vocab_size));
        for (name, m) in &self.params {
            out.push_str(&format!("param\t{name}\t{}\t{}\n", m.rows(), m.cols()));
            let values: Vec<String> = m.data().iter().map(|v| v.to_string()).collect();
            out.push_str(&values.join(" "));
            out.push('\n');
        }
        out
    }

    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
        let fail = |line: usize, msg: String| Error::format(path, line, msg);
        match lines.next() {
            Some((_, CHECKPOINT_TAG)) => {}
            Some((n, other)) => return Err(fail(n, format!("expected `{CHECKPOINT_TAG}`, found `{other}`"))),
            None => return Err(fail(1, "empty checkpoint".into())),
        }
        let (mut kind, mut hash, mut size) = (None, None, None);
        let mut config = Vec::new();
        let mut params = Vec::new();
        while let Some((n, line)) = lines.next() {
            let fields: Vec<&str> = line.split('\t').collect();
            match fields.as_slice() {
                ["kind", k] => kind = Some(k.parse::<ModelKind>().map_err(|e| fail(n, e.to_string()))?),
                ["config", k, v] => config.push((k.to_string(), v.to_string())),
                ["vocab_hash", h] => hash = Some(h.to_string()),
                ["vocab_size", s] => size = Some(s.parse().map_err(|_| fail(n, format!("bad vocab_size `{s}`")))?),
                ["param", name, r, c] => {
                    let rows: usize = r.parse().map_err(|_| fail(n, format!("bad row count `{r}`")))?;
                    let cols: usize = c.parse().map_err(|_| fail(n, format!("bad column count `{c}`")))?;
                    let (vn, values) = lines.next().ok_or_else(|| fail(n, format!("missing values for {name}")))?;
                    let data = values
                        .split_ascii_whitespace()
                        .map(|v| v.parse::<f64>().map_err(|_| fail(vn, format!("bad value `{v}`"))))
                        .collect::<Result<Vec<_>>>()?;
                    let m = Matrix::new(rows, cols, data).map_err(|e| fail(vn, e.to_string()))?;
                    params.push((name.to_string(), m));
                }
                _ => return Err(fail(n, format!("unrecognized line `{line}`"))),
            }
        }
        let missing = |what: &str| fail(0, format!("checkpoint lacks `{what}`"));
        Ok(Checkpoint {
            kind: kind.ok_or_else(|| missing("kind"))?,
            config,
            vocab_hash: hash.ok_or_else(|| missing("vocab_hash"))?,
            vocab_size: size.ok_or_else(|| missing("vocab_size"))?,
            params,
        })
    }
}

pub fn write_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    fs::write(path, ckpt.to_text()).map_err(|e| Error::io(path, e))
}

pub fn read_checkpoint(path: &Path) -> Result<Checkpoint> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Checkpoint::parse(&text, path)
}
