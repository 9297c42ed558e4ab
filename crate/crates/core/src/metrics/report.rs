use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

use super::cv::CvResult;

/// One model × condition × population × split evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalRow {
    pub model: String,
    pub condition: String,
    pub population: String,
    pub split: String,
    pub n_case: usize,
    pub n_control: usize,
    pub auc_pr: f64,
    pub auc_roc: f64,
    pub cv: Option<CvResult>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct EvalReport {
    pub rows: Vec<EvalRow>,
}

const CSV_HEADER: [&str; 12] = [
    "model",
    "condition",
    "population",
    "split",
    "n_case",
    "n_control",
    "auc_pr",
    "auc_roc",
    "cv_auc_pr_mean",
    "cv_auc_pr_std",
    "cv_auc_roc_mean",
    "cv_auc_roc_std",
];

impl EvalReport {
    pub fn find(&self, population: &str) -> Option<&EvalRow> {
        self.rows.iter().find(|r| r.population == population)
    }

    /// One `[metrics]` block per row.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for r in &self.rows {
            let _ = writeln!(out, "[metrics]");
            let _ = writeln!(out, "model = {}", r.model);
            let _ = writeln!(out, "condition = {}", r.condition);
            let _ = writeln!(out, "population = {}", r.population);
            let _ = writeln!(out, "split = {}", r.split);
            let _ = writeln!(out, "case : control = {} : {}", r.n_case, r.n_control);
            let _ = writeln!(out, "auc_pr = {:.6}", r.auc_pr);
            let _ = writeln!(out, "auc_roc = {:.6}", r.auc_roc);
            if let Some(cv) = &r.cv {
                let _ = writeln!(out, "cv_folds = {}", cv.folds.len());
                let _ = writeln!(out, "cv_auc_pr = {:.6} ± {:.6}", cv.auc_pr.mean, cv.auc_pr.std);
                let _ = writeln!(out, "cv_auc_roc = {:.6} ± {:.6}", cv.auc_roc.mean, cv.auc_roc.std);
            }
            out.push('\n');
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let io = |e: csv::Error| Error::Io {
            path: path.into(),
            source: e.into(),
        };
        let mut w = csv::Writer::from_path(path).map_err(io)?;
        w.write_record(CSV_HEADER).map_err(io)?;
        for r in &self.rows {
            let (a, b, c, d) = match &r.cv {
                Some(cv) => (
                    format!("{:.6}", cv.auc_pr.mean),
                    format!("{:.6}", cv.auc_pr.std),
                    format!("{:.6}", cv.auc_roc.mean),
                    format!("{:.6}", cv.auc_roc.std),
                ),
                None => Default::default(),
            };
            w.write_record([
                r.model.clone(),
                r.condition.clone(),
                r.population.clone(),
                r.split.clone(),
                r.n_case.to_string(),
                r.n_control.to_string(),
                format!("{:.6}", r.auc_pr),
                format!("{:.6}", r.auc_roc),
                a,
                b,
                c,
                d,
            ])
            .map_err(io)?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}
