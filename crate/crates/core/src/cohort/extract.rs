use std::collections::BTreeMap;

use crate::error::{Error, Result};

use super::index::{classify, Enrollment, Exclusion};
use super::types::{
    Code, CohortSpec, Demographics, EncounterStream, Label, Labeled, PatientTensor, QuarterCounts, Vocabulary,
    N_QUARTERS,
};

/// An enrolled stream with its index date and label.
#[derive(Debug, Clone, PartialEq)]
pub struct Enrollee {
    pub stream: EncounterStream,
    pub index_day: i64,
    pub label: Label,
}

impl Labeled for Enrollee {
    fn label(&self) -> Label {
        self.label
    }
}

/// Enrollment counts, reported alongside every cohort.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct EnrollmentStats {
    pub cases: usize,
    pub controls: usize,
    pub excluded: BTreeMap<Exclusion, usize>,
}

impl EnrollmentStats {
    pub fn excluded_for(&self, reason: Exclusion) -> usize {
        self.excluded.get(&reason).copied().unwrap_or(0)
    }
}

/// Classifies every stream, keeping the enrolled ones in input order.
pub fn enroll(streams: &[EncounterStream], spec: &CohortSpec) -> (Vec<Enrollee>, EnrollmentStats) {
    let mut stats = EnrollmentStats::default();
    let mut out = Vec::new();
    for s in streams {
        match classify(s, spec) {
            Enrollment::Enrolled { index_day, label } => {
                match label {
                    Label::Case => stats.cases += 1,
                    Label::Control => stats.controls += 1,
                }
                out.push(Enrollee {
                    stream: s.clone(),
                    index_day,
                    label,
                });
            }
            Enrollment::Excluded(why) => *stats.excluded.entry(why).or_default() += 1,
        }
    }
    (out, stats)
}

/// Codes with at least `min_code_occurrences` occurrences inside the
/// observation windows of `enrolled`, in ascending code order.
pub fn build_vocab(enrolled: &[Enrollee], spec: &CohortSpec) -> Result<Vocabulary> {
    if enrolled.is_empty() {
        return Err(Error::Config("cannot build a vocabulary from an empty cohort".into()));
    }
    let mut counts: BTreeMap<Code, usize> = BTreeMap::new();
    for e in enrolled {
        for enc in &e.stream.encounters {
            if spec.quarter_of(e.index_day, enc.day).is_some() {
                for &c in &enc.codes {
                    *counts.entry(c).or_default() += 1;
                }
            }
        }
    }
    let codes: Vec<Code> = counts
        .into_iter()
        .filter(|&(_, n)| n >= spec.min_code_occurrences)
        .map(|(c, _)| c)
        .collect();
    if codes.is_empty() {
        return Err(Error::Config(format!(
            "no code reaches {} occurrences; lower min_code_occurrences",
            spec.min_code_occurrences
        )));
    }
    Vocabulary::new(codes)
}

/// Per-quarter code counts over the observation window. Codes outside the
/// vocabulary are dropped.
pub fn extract_tensor(
    stream: &EncounterStream,
    index_day: i64,
    label: Label,
    spec: &CohortSpec,
    vocab: &Vocabulary,
) -> Result<PatientTensor> {
    if vocab.is_empty() {
        return Err(Error::Config("vocabulary is empty".into()));
    }
    let age_bin = spec.age_bin(stream.age_years(index_day)).ok_or_else(|| {
        Error::Input(format!("patient {} outside age bounds at index", stream.patient_id))
    })?;
    let mut maps: [BTreeMap<usize, u32>; N_QUARTERS] = Default::default();
    for enc in &stream.encounters {
        let Some(q) = spec.quarter_of(index_day, enc.day) else { continue };
        for &c in &enc.codes {
            if let Some(i) = vocab.index_of(c) {
                *maps[q].entry(i).or_default() += 1;
            }
        }
    }
    let quarters: [QuarterCounts; N_QUARTERS] = maps.map(|m| m.into_iter().collect());
    Ok(PatientTensor {
        patient_id: stream.patient_id,
        label,
        demographics: Demographics {
            gender: stream.gender,
            race: stream.race,
            age_bin,
        },
        quarters,
    })
}

pub fn extract_all(enrolled: &[Enrollee], spec: &CohortSpec, vocab: &Vocabulary) -> Result<Vec<PatientTensor>> {
    enrolled
        .iter()
        .map(|e| extract_tensor(&e.stream, e.index_day, e.label, spec, vocab))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cohort::types::Encounter;

    const TARGET: Code = Code(900);
    const INDEX: i64 = 2000;

    fn stream(events: &[(i64, &[u32])]) -> EncounterStream {
        let mut encounters: Vec<Encounter> = events
            .iter()
            .map(|&(d, cs)| Encounter::new(d, cs.iter().map(|&c| Code(c)).collect()))
            .collect();
        encounters.sort_by_key(|e| e.day);
        EncounterStream {
            patient_id: 7,
            gender: 1,
            race: 2,
            birth_offset: INDEX - 47 * 360,
            encounters,
        }
    }

    fn vocab() -> Vocabulary {
        Vocabulary::new(vec![Code(1), Code(2), Code(3)]).unwrap()
    }

    #[test]
    fn window_is_half_open_and_buffer_excluded() {
        let spec = CohortSpec::new([TARGET]);
        let s = stream(&[
            (INDEX - 810, &[1]),      // first day of the window
            (INDEX - 450, &[2]),      // exactly index − 15 months: excluded
            (INDEX - 30, &[3]),       // buffer
            (INDEX - 451, &[3]),      // last day of quarter 4
        ]);
        let t = extract_tensor(&s, INDEX, Label::Control, &spec, &vocab()).unwrap();
        assert_eq!(t.quarters[0], vec![(0, 1)]);
        assert_eq!(t.quarters[3], vec![(2, 1)]);
        assert_eq!(t.count(3, 1), 0);
        assert_eq!(t.demographics, Demographics { gender: 1, race: 2, age_bin: 3 });
    }

    #[test]
    fn repeated_code_counts() {
        let spec = CohortSpec::new([TARGET]);
        let q2 = INDEX - 810 + 90 + 5;
        let s = stream(&[(q2, &[2, 9]), (q2 + 10, &[2])]);
        let t = extract_tensor(&s, INDEX, Label::Case, &spec, &vocab()).unwrap();
        assert_eq!(t.count(1, 1), 2);
        assert_eq!(t.quarter_total(1), 2);
    }

    #[test]
    fn vocab_threshold_boundary() {
        let mut spec = CohortSpec::new([TARGET]);
        spec.min_code_occurrences = 50;
        // 50 patients with code 1 in-window, 49 with code 2, plus out-of-window noise.
        let enrolled: Vec<Enrollee> = (0..50)
            .map(|i| {
                let mut ev: Vec<(i64, &[u32])> = vec![(INDEX - 700, &[1]), (INDEX - 100, &[2, 3])];
                if i < 49 {
                    ev.push((INDEX - 600, &[2]));
                }
                Enrollee {
                    stream: stream(&ev),
                    index_day: INDEX,
                    label: Label::Control,
                }
            })
            .collect();
        let v = build_vocab(&enrolled, &spec).unwrap();
        assert_eq!(v.codes(), &[Code(1)]);
        assert_eq!(build_vocab(&enrolled, &spec).unwrap(), v);

        spec.min_code_occurrences = 51;
        assert!(matches!(build_vocab(&enrolled, &spec), Err(Error::Config(_))));
    }

    #[test]
    fn empty_vocabulary_is_rejected() {
        assert!(Vocabulary::new(vec![]).is_err());
    }
}
