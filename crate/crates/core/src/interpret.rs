//! Feature-importance views derived from forward traces: pairwise token
//! importance from the self-attention hops, population heatmaps, and
//! quarter-attention summaries.

use std::fmt::Write as _;
use std::path::Path;

use crate::cohort::{PatientTensor, Vocabulary, DEMO_DIM, N_QUARTERS};
use crate::error::{Error, Result};
use crate::metrics::Dispersion;
use crate::model::{token_label, ForwardTrace, SavehrModel};
use crate::numerics::Matrix;
use crate::par::{self, Exec};

/// Symmetric nonnegative importance over an ordered token list.
#[derive(Debug, Clone, PartialEq)]
pub struct PairwiseImportance {
    /// Embedding-table rows of the tokens.
    pub token_ids: Vec<usize>,
    pub labels: Vec<String>,
    pub matrix: Matrix,
    pub patient_id: Option<u32>,
    /// Predicted case probability (mean over patients for population maps).
    pub risk: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Aggregation {
    PerQuarter,
    Averaged,
}

impl PairwiseImportance {
    pub fn len(&self) -> usize {
        self.token_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.token_ids.is_empty()
    }

    pub fn total_mass(&self) -> f64 {
        self.matrix.sum()
    }

    pub fn position(&self, token_id: usize) -> Option<usize> {
        self.token_ids.iter().position(|&t| t == token_id)
    }

    /// Importance of a token pair, by embedding-table row.
    pub fn cell(&self, a: usize, b: usize) -> Option<f64> {
        Some(self.matrix.get(self.position(a)?, self.position(b)?))
    }

    /// Upper-triangle off-diagonal entries.
    pub fn off_diagonal(&self) -> Vec<f64> {
        let n = self.len();
        (0..n)
            .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
            .map(|(i, j)| self.matrix.get(i, j))
            .collect()
    }

    pub fn off_diagonal_median(&self) -> Option<f64> {
        let mut v = self.off_diagonal();
        if v.is_empty() {
            return None;
        }
        v.sort_by(f64::total_cmp);
        let m = v.len() / 2;
        Some(if v.len() % 2 == 1 { v[m] } else { (v[m - 1] + v[m]) / 2.0 })
    }

    /// The `k` largest off-diagonal cells as `(token_a, token_b, value)`.
    pub fn top_pairs(&self, k: usize) -> Vec<(usize, usize, f64)> {
        let n = self.len();
        let mut cells: Vec<(usize, usize, f64)> = (0..n)
            .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
            .map(|(i, j)| (self.token_ids[i], self.token_ids[j], self.matrix.get(i, j)))
            .collect();
        cells.sort_by(|a, b| b.2.total_cmp(&a.2));
        cells.truncate(k);
        cells
    }
}

/// `α_t · (1/r) Σ_hops a aᵀ`, symmetrized, over the tokens of quarter `t`.
fn quarter_matrix(trace: &ForwardTrace, t: usize) -> Matrix {
    let a = &trace.annotations[t];
    let (r, n) = a.shape();
    let mut m = a.matmul_tn(a).expect("annotation matrix is r × n").scale(trace.alpha[t] / r as f64);
    for i in 0..n {
        for j in i + 1..n {
            let s = 0.5 * (m.get(i, j) + m.get(j, i));
            m.set(i, j, s);
            m.set(j, i, s);
        }
    }
    m
}

fn labelled(ids: Vec<usize>, matrix: Matrix, vocab: &Vocabulary, patient_id: Option<u32>, risk: f64) -> PairwiseImportance {
    PairwiseImportance {
        labels: ids.iter().map(|&id| token_label(id, vocab)).collect(),
        token_ids: ids,
        matrix,
        patient_id,
        risk,
    }
}

/// Per-quarter matrices (four of them), or one α-weighted matrix over the
/// union of tokens with absent tokens contributing zero.
pub fn pairwise_from_trace(trace: &ForwardTrace, aggregation: Aggregation, vocab: &Vocabulary) -> Vec<PairwiseImportance> {
    let risk = trace.probs[1];
    let pid = Some(trace.patient_id);
    match aggregation {
        Aggregation::PerQuarter => (0..trace.annotations.len())
            .map(|t| labelled(trace.tokens[t].ids.clone(), quarter_matrix(trace, t), vocab, pid, risk))
            .collect(),
        Aggregation::Averaged => {
            let mut ids: Vec<usize> = trace.tokens.iter().flat_map(|t| t.ids.iter().copied()).collect();
            ids.sort_unstable();
            ids.dedup();
            let mut total = Matrix::zeros(ids.len(), ids.len());
            for (t, tokens) in trace.tokens.iter().enumerate() {
                let m = quarter_matrix(trace, t);
                let pos: Vec<usize> = tokens.ids.iter().map(|id| ids.binary_search(id).expect("in union")).collect();
                for (i, &pi) in pos.iter().enumerate() {
                    for (j, &pj) in pos.iter().enumerate() {
                        total.set(pi, pj, total.get(pi, pj) + m.get(i, j));
                    }
                }
            }
            vec![labelled(ids, total, vocab, pid, risk)]
        }
    }
}

/// Mean of per-patient averaged matrices over the full token table,
/// restricted to the `top_k` tokens with the largest diagonal mass (ordered
/// by that mass, ties by table row).
pub fn population_heatmap(
    model: &SavehrModel,
    patients: &[PatientTensor],
    top_k: usize,
    vocab: &Vocabulary,
    exec: Exec,
) -> Result<PairwiseImportance> {
    if patients.is_empty() {
        return Err(Error::Input("population heatmap needs at least one patient".into()));
    }
    let dim = DEMO_DIM + vocab.len();
    let traces: Vec<ForwardTrace> = par::map(exec, patients, |_, x| model.predict(x).map(|(_, t)| t))
        .into_iter()
        .collect::<Result<_>>()?;
    let n = patients.len() as f64;
    let mut total = Matrix::zeros(dim, dim);
    let mut risk = 0.0;
    for trace in &traces {
        let p = pairwise_from_trace(trace, Aggregation::Averaged, vocab).remove(0);
        for (i, &a) in p.token_ids.iter().enumerate() {
            for (j, &b) in p.token_ids.iter().enumerate() {
                total.set(a, b, total.get(a, b) + p.matrix.get(i, j) / n);
            }
        }
        risk += trace.probs[1] / n;
    }
    let mut order: Vec<usize> = (0..dim).filter(|&i| total.get(i, i) > 0.0).collect();
    order.sort_by(|&a, &b| total.get(b, b).total_cmp(&total.get(a, a)).then(a.cmp(&b)));
    order.truncate(top_k);
    let mut m = Matrix::zeros(order.len(), order.len());
    for (i, &a) in order.iter().enumerate() {
        for (j, &b) in order.iter().enumerate() {
            m.set(i, j, total.get(a, b));
        }
    }
    Ok(labelled(order, m, vocab, None, risk))
}

/// Quarter-attention means and diagnosis-count statistics split by
/// predicted label.
#[derive(Debug, Clone, PartialEq)]
pub struct QuarterAttentionSummary {
    pub n_patients: usize,
    pub mean_alpha: [f64; N_QUARTERS],
    pub predicted_cases: CountGroup,
    pub predicted_controls: CountGroup,
}

/// Per-quarter total code counts over one predicted-label group.
#[derive(Debug, Clone, PartialEq)]
pub struct CountGroup {
    pub n: usize,
    pub mean_alpha: [f64; N_QUARTERS],
    pub counts: [Dispersion; N_QUARTERS],
}

pub const PREDICTION_THRESHOLD: f64 = 0.5;

fn count_group(rows: &[(&PatientTensor, &ForwardTrace)]) -> CountGroup {
    if rows.is_empty() {
        let zero = Dispersion { mean: 0.0, std: 0.0 };
        return CountGroup {
            n: 0,
            mean_alpha: [0.0; N_QUARTERS],
            counts: [zero; N_QUARTERS],
        };
    }
    let mut mean_alpha = [0.0; N_QUARTERS];
    for (_, t) in rows {
        for (m, a) in mean_alpha.iter_mut().zip(t.alpha) {
            *m += a / rows.len() as f64;
        }
    }
    let counts = std::array::from_fn(|q| {
        let v: Vec<f64> = rows.iter().map(|(x, _)| f64::from(x.quarter_total(q))).collect();
        Dispersion::of(&v)
    });
    CountGroup {
        n: rows.len(),
        mean_alpha,
        counts,
    }
}

pub fn quarter_attention_summary(
    model: &SavehrModel,
    patients: &[PatientTensor],
    exec: Exec,
) -> Result<QuarterAttentionSummary> {
    if patients.is_empty() {
        return Err(Error::Input("quarter attention summary needs at least one patient".into()));
    }
    let traces: Vec<ForwardTrace> = par::map(exec, patients, |_, x| model.predict(x).map(|(_, t)| t))
        .into_iter()
        .collect::<Result<_>>()?;
    let rows: Vec<(&PatientTensor, &ForwardTrace)> = patients.iter().zip(&traces).collect();
    let (cases, controls): (Vec<_>, Vec<_>) = rows.iter().partition(|(_, t)| t.probs[1] >= PREDICTION_THRESHOLD);
    Ok(QuarterAttentionSummary {
        n_patients: patients.len(),
        mean_alpha: count_group(&rows).mean_alpha,
        predicted_cases: count_group(&cases),
        predicted_controls: count_group(&controls),
    })
}

impl QuarterAttentionSummary {
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "[quarter_attention]\npatients = {}", self.n_patients);
        let _ = writeln!(out, "{:<36}{:>10}{:>10}{:>10}{:>10}", "", "T1", "T2", "T3", "T4");
        let row = |out: &mut String, name: &str, v: [String; N_QUARTERS]| {
            let _ = writeln!(out, "{name:<36}{:>10}{:>10}{:>10}{:>10}", v[0], v[1], v[2], v[3]);
        };
        row(&mut out, "mean attention", self.mean_alpha.map(|a| format!("{a:.3}")));
        for (name, g) in [("predicted case", &self.predicted_cases), ("predicted control", &self.predicted_controls)] {
            row(&mut out, &format!("{name} attention (n={})", g.n), g.mean_alpha.map(|a| format!("{a:.3}")));
            row(
                &mut out,
                &format!("{name} codes"),
                g.counts.map(|d| format!("{:.1}±{:.1}", d.mean, d.std)),
            );
        }
        out
    }
}

/// CSV with a header row and a leading label column; values at full
/// round-trip precision.
pub fn export_heatmap(p: &PairwiseImportance, path: &Path) -> Result<()> {
    if p.is_empty() {
        return Err(Error::Input("refusing to export an empty heatmap".into()));
    }
    let io = |e: csv::Error| Error::Io {
        path: path.to_path_buf(),
        source: e.into(),
    };
    let mut w = csv::Writer::from_path(path).map_err(io)?;
    let mut header = vec![String::new()];
    header.extend(p.labels.iter().cloned());
    w.write_record(&header).map_err(io)?;
    for (i, label) in p.labels.iter().enumerate() {
        let mut rec = vec![label.clone()];
        rec.extend(p.matrix.row(i).iter().map(|v| v.to_string()));
        w.write_record(&rec).map_err(io)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Reads a file written by [`export_heatmap`] back into labels and values.
pub fn read_heatmap(path: &Path) -> Result<(Vec<String>, Matrix)> {
    let mut r = csv::ReaderBuilder::new()
        .has_headers(false)
        .from_path(path)
        .map_err(|e| Error::Io {
            path: path.to_path_buf(),
            source: e.into(),
        })?;
    let mut records = r.records();
    let fail = |line: usize, msg: String| Error::format(path, line, msg);
    let header = records
        .next()
        .ok_or_else(|| fail(1, "empty heatmap file".into()))?
        .map_err(|e| fail(1, e.to_string()))?;
    let labels: Vec<String> = header.iter().skip(1).map(str::to_string).collect();
    if labels.is_empty() {
        return Err(fail(1, "heatmap has no columns".into()));
    }
    let mut data = Vec::with_capacity(labels.len() * labels.len());
    for (k, rec) in records.enumerate() {
        let line = k + 2;
        let rec = rec.map_err(|e| fail(line, e.to_string()))?;
        if rec.len() != labels.len() + 1 || rec.get(0) != Some(labels[k.min(labels.len() - 1)].as_str()) {
            return Err(fail(line, "row does not match header".into()));
        }
        for v in rec.iter().skip(1) {
            data.push(v.parse::<f64>().map_err(|_| fail(line, format!("bad value `{v}`")))?);
        }
    }
    let n = labels.len();
    let m = Matrix::new(data.len() / n, n, data).map_err(|e| fail(0, e.to_string()))?;
    if m.rows() != n {
        return Err(fail(0, format!("expected {n} rows, found {}", m.rows())));
    }
    Ok((labels, m))
}

#[cfg(test)]
mod tests {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::cohort::{Code, Demographics, Label};
    use crate::model::{ModelConfig, QuarterTokens};

    fn vocab() -> Vocabulary {
        Vocabulary::new((0..12).map(|i| Code(100 + i)).collect()).unwrap()
    }

    fn trace_with(annotations: Vec<Matrix>, alpha: [f64; 4]) -> ForwardTrace {
        let tokens = annotations
            .iter()
            .map(|a| QuarterTokens {
                ids: (0..a.cols()).map(|j| DEMO_DIM + j).collect(),
                counts: vec![1.0; a.cols()],
            })
            .collect();
        ForwardTrace {
            patient_id: 9,
            tokens,
            embedded: vec![],
            annotations,
            encodings: vec![],
            hidden: vec![],
            alpha,
            patient_vector: Matrix::zeros(1, 1),
            probs: [0.4, 0.6],
        }
    }

    fn random_distribution_rows(rng: &mut ChaCha8Rng, r: usize, n: usize) -> Matrix {
        let mut m = Matrix::new(r, n, (0..r * n).map(|_| rng.gen_range(-2.0..2.0)).collect()).unwrap();
        m = m.row_softmax();
        m
    }

    #[test]
    fn single_hop_single_token_is_alpha() {
        let one = Matrix::filled(1, 1, 1.0);
        let t = trace_with(vec![one.clone(), one.clone(), one.clone(), one], [0.1, 0.2, 0.3, 0.4]);
        let per = pairwise_from_trace(&t, Aggregation::PerQuarter, &vocab());
        assert_eq!(per[2].matrix.item(), 0.3);
    }

    #[test]
    fn uniform_hop_spreads_evenly() {
        let u = Matrix::filled(1, 4, 0.25);
        let t = trace_with(vec![u.clone(), u.clone(), u.clone(), u], [0.25; 4]);
        let per = pairwise_from_trace(&t, Aggregation::PerQuarter, &vocab());
        assert!(per[0].matrix.data().iter().all(|&v| (v - 0.25 / 16.0).abs() < 1e-15));
    }

    #[test]
    fn random_trace_is_symmetric_and_conserves_mass() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let a: Vec<Matrix> = [3, 5, 1, 6].iter().map(|&n| random_distribution_rows(&mut rng, 3, n)).collect();
        let alpha = Matrix::row_vector(&[0.3, -0.2, 1.1, 0.5]).row_softmax();
        let alpha = [alpha.data()[0], alpha.data()[1], alpha.data()[2], alpha.data()[3]];
        let t = trace_with(a, alpha);
        let per = pairwise_from_trace(&t, Aggregation::PerQuarter, &vocab());
        for (q, p) in per.iter().enumerate() {
            assert!((p.total_mass() - alpha[q]).abs() < 1e-9);
            assert!(p.matrix.max_abs_diff(&p.matrix.transpose()) < 1e-12);
        }
        let avg = &pairwise_from_trace(&t, Aggregation::Averaged, &vocab())[0];
        assert_eq!(avg.len(), 6);
        assert!((avg.total_mass() - 1.0).abs() < 1e-9);
        assert!(avg.matrix.data().iter().all(|&v| v >= 0.0));
    }

    fn patient(id: u32) -> PatientTensor {
        PatientTensor {
            patient_id: id,
            label: Label::Case,
            demographics: Demographics { gender: 0, race: 1, age_bin: 4 },
            quarters: [vec![(0, 1)], vec![(2, 2), (3, 1)], vec![], vec![(5, 1), (7, 3), (11, 1)]],
        }
    }

    fn small_model() -> SavehrModel {
        let cfg = ModelConfig {
            embed_dim: 6,
            attn_dim: 4,
            hops: 2,
            gru_hidden: 5,
            att_hidden: 4,
            max_tokens: 8,
            seed: 3,
        };
        SavehrModel::new(cfg, 12).unwrap()
    }

    #[test]
    fn population_of_one_and_of_duplicates() {
        let m = small_model();
        let v = vocab();
        let (_, trace) = m.predict(&patient(1)).unwrap();
        let own = pairwise_from_trace(&trace, Aggregation::Averaged, &v).remove(0);
        let pop = population_heatmap(&m, &[patient(1)], 5, &v, Exec::Sequential).unwrap();
        for &a in &pop.token_ids {
            for &b in &pop.token_ids {
                assert!((pop.cell(a, b).unwrap() - own.cell(a, b).unwrap()).abs() < 1e-15);
            }
        }
        let dup = population_heatmap(&m, &[patient(1), patient(1)], 5, &v, Exec::Sequential).unwrap();
        assert_eq!(dup.token_ids, pop.token_ids);
        assert!(dup.matrix.max_abs_diff(&pop.matrix) < 1e-15);
        assert!(population_heatmap(&m, &[], 5, &v, Exec::Sequential).is_err());
    }

    #[test]
    fn zero_scorer_gives_uniform_quarter_attention() {
        let mut m = small_model();
        m.store.value_mut(m.quarter_attention.v).fill(0.0);
        let s = quarter_attention_summary(&m, &[patient(1), patient(2)], Exec::Sequential).unwrap();
        assert_eq!(s.mean_alpha, [0.25; 4]);
        assert!(s.to_text().contains("T4"));
        assert_eq!(s.predicted_cases.n + s.predicted_controls.n, 2);
    }

    #[test]
    fn heatmap_csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("h.csv");
        let p = PairwiseImportance {
            token_ids: vec![0, 20],
            labels: vec!["gender:0".into(), "C0003, chronic".into()],
            matrix: Matrix::from_rows(&[vec![0.1 + 0.2, 1.0 / 3.0], vec![1.0 / 3.0, 1e-300]]).unwrap(),
            patient_id: Some(1),
            risk: 0.5,
        };
        export_heatmap(&p, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.contains("\"C0003, chronic\""));
        let (labels, m) = read_heatmap(&path).unwrap();
        assert_eq!(labels, p.labels);
        assert_eq!(m, p.matrix);

        let empty = PairwiseImportance {
            token_ids: vec![],
            labels: vec![],
            matrix: Matrix::zeros(0, 0),
            patient_id: None,
            risk: 0.0,
        };
        assert!(export_heatmap(&empty, &path).is_err());
    }
}
