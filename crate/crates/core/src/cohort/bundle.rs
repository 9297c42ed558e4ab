use crate::error::{Error, Result};

use super::extract::{build_vocab, enroll, extract_all, EnrollmentStats};
use super::split::split_cohort;
use super::types::{CohortSpec, EncounterStream, PatientTensor, Vocabulary};

/// Development cohort: vocabulary from the training split, tensors for
/// every split.
#[derive(Debug, Clone, PartialEq)]
pub struct Cohort {
    pub vocab: Vocabulary,
    pub train: Vec<PatientTensor>,
    pub val: Vec<PatientTensor>,
    pub test: Vec<PatientTensor>,
    pub stats: EnrollmentStats,
}

fn require_cases(stats: &EnrollmentStats) -> Result<()> {
    if stats.cases == 0 {
        return Err(Error::Cohort(format!(
            "no cases enrolled ({} controls; exclusions {:?})",
            stats.controls, stats.excluded
        )));
    }
    Ok(())
}

/// Enrolls, splits the enrollees, builds the vocabulary on the training
/// split only and extracts every split.
pub fn build_cohort(
    streams: &[EncounterStream],
    spec: &CohortSpec,
    split_seed: u64,
    fractions: (f64, f64, f64),
) -> Result<Cohort> {
    spec.validate()?;
    let (enrolled, stats) = enroll(streams, spec);
    require_cases(&stats)?;
    let split = split_cohort(&enrolled, split_seed, fractions)?;
    let vocab = build_vocab(&split.train, spec)?;
    Ok(Cohort {
        train: extract_all(&split.train, spec, &vocab)?,
        val: extract_all(&split.val, spec, &vocab)?,
        test: extract_all(&split.test, spec, &vocab)?,
        vocab,
        stats,
    })
}

/// An external population expressed in an existing vocabulary; codes outside
/// it are dropped.
pub fn build_external(
    streams: &[EncounterStream],
    spec: &CohortSpec,
    vocab: &Vocabulary,
) -> Result<(Vec<PatientTensor>, EnrollmentStats)> {
    spec.validate()?;
    let (enrolled, stats) = enroll(streams, spec);
    require_cases(&stats)?;
    Ok((extract_all(&enrolled, spec, vocab)?, stats))
}
