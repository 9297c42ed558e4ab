//! Case/control assignment and index-date selection.

use super::types::{CohortSpec, EncounterStream, Label, DAYS_PER_MONTH};

/// Why a stream did not enter the cohort.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Exclusion {
    /// Target codes present but no qualifying incident run.
    NotIncident,
    TooFewEncounters,
    AgeOutOfBounds,
    /// Less than a full observation window of history before the index date.
    InsufficientHistory,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Enrollment {
    Enrolled { index_day: i64, label: Label },
    Excluded(Exclusion),
}

/// Applies the case and control rules to one stream.
///
/// Case: the first encounter carrying a target code starts a run of at least
/// `case_min_hits` target encounters inside `case_window_months`; the index
/// date is that first encounter. Control: no target code ever, and at least
/// `control_min_encounters` encounters inside some `control_span_months`
/// span; the index date is the last encounter.
pub fn classify(stream: &EncounterStream, spec: &CohortSpec) -> Enrollment {
    let hits: Vec<i64> = stream
        .encounters
        .iter()
        .filter(|e| e.has_any(&spec.target_codes))
        .map(|e| e.day)
        .collect();

    let (index_day, label) = if hits.is_empty() {
        let days: Vec<i64> = stream.encounters.iter().map(|e| e.day).collect();
        let span = spec.control_span_months * DAYS_PER_MONTH;
        let k = spec.control_min_encounters;
        let dense = days.len() >= k && days.windows(k).any(|w| w[k - 1] - w[0] < span);
        if !dense {
            return Enrollment::Excluded(Exclusion::TooFewEncounters);
        }
        (*days.last().expect("nonempty when dense"), Label::Control)
    } else {
        let k = spec.case_min_hits;
        let window = spec.case_window_months * DAYS_PER_MONTH;
        // Any earlier target code would be a prior diagnosis, so the
        // qualifying run has to start at the very first hit.
        if hits.len() < k || hits[k - 1] - hits[0] >= window {
            return Enrollment::Excluded(Exclusion::NotIncident);
        }
        (hits[0], Label::Case)
    };

    let age = stream.age_years(index_day);
    if age < spec.age_bounds.0 || age >= spec.age_bounds.1 {
        return Enrollment::Excluded(Exclusion::AgeOutOfBounds);
    }
    let (obs_start, _) = spec.observation_window(index_day);
    match stream.encounters.first() {
        Some(first) if first.day <= obs_start => Enrollment::Enrolled { index_day, label },
        _ => Enrollment::Excluded(Exclusion::InsufficientHistory),
    }
}

/// `(index_day, is_case)` for enrolled streams, `None` otherwise.
pub fn find_index_date(stream: &EncounterStream, spec: &CohortSpec) -> Option<(i64, bool)> {
    match classify(stream, spec) {
        Enrollment::Enrolled { index_day, label } => Some((index_day, label.is_case())),
        Enrollment::Excluded(_) => None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cohort::types::{Code, Encounter};

    const TARGET: Code = Code(900);

    fn spec() -> CohortSpec {
        CohortSpec::new([TARGET])
    }

    /// A stream starting at day 0 (so history is sufficient for index ≥ 810)
    /// aged 50 throughout.
    fn stream(events: &[(i64, bool)]) -> EncounterStream {
        let mut encounters = vec![Encounter::new(0, vec![Code(1)])];
        for &(day, target) in events {
            let code = if target { TARGET } else { Code(2) };
            encounters.push(Encounter::new(day, vec![code]));
        }
        EncounterStream {
            patient_id: 1,
            gender: 0,
            race: 0,
            birth_offset: -50 * 360,
            encounters,
        }
    }

    #[test]
    fn three_hits_in_six_months_is_case_indexed_at_first() {
        let s = stream(&[(800, false), (1000, true), (1060, true), (1150, true)]);
        assert_eq!(find_index_date(&s, &spec()), Some((1000, true)));
    }

    #[test]
    fn hits_must_fall_within_window() {
        // 179 days apart qualifies, 180 does not.
        let ok = stream(&[(1000, true), (1100, true), (1179, true)]);
        assert_eq!(find_index_date(&ok, &spec()), Some((1000, true)));
        let late = stream(&[(1000, true), (1100, true), (1180, true)]);
        assert_eq!(find_index_date(&late, &spec()), None);
    }

    #[test]
    fn two_hits_is_neither_case_nor_control() {
        let s = stream(&[(200, false), (300, false), (400, false), (500, false), (1000, true), (1060, true)]);
        assert_eq!(classify(&s, &spec()), Enrollment::Excluded(Exclusion::NotIncident));
        assert_eq!(find_index_date(&s, &spec()), None);
    }

    #[test]
    fn prior_diagnosis_excludes() {
        let s = stream(&[(850, true), (1200, true), (1230, true), (1260, true)]);
        assert_eq!(find_index_date(&s, &spec()), None);
    }

    #[test]
    fn control_with_six_encounters_over_twenty_months() {
        let days = [300, 420, 540, 660, 780, 900];
        let events: Vec<_> = days.iter().map(|&d| (d, false)).collect();
        let s = stream(&events);
        assert_eq!(find_index_date(&s, &spec()), Some((900, false)));
    }

    #[test]
    fn control_needs_five_within_two_years() {
        // Five encounters (including day 0) spread over exactly 720 days fail.
        let s = stream(&[(180, false), (360, false), (540, false), (720, false)]);
        assert_eq!(classify(&s, &spec()), Enrollment::Excluded(Exclusion::TooFewEncounters));
        let s = stream(&[(180, false), (360, false), (540, false), (719, false), (900, false)]);
        assert_eq!(find_index_date(&s, &spec()), Some((900, false)));
    }

    #[test]
    fn age_and_history_bounds() {
        let mut s = stream(&[(1000, true), (1010, true), (1020, true)]);
        s.birth_offset = 1000 - 80 * 360;
        assert_eq!(classify(&s, &spec()), Enrollment::Excluded(Exclusion::AgeOutOfBounds));
        s.birth_offset = 1000 - 80 * 360 + 1;
        assert_eq!(find_index_date(&s, &spec()), Some((1000, true)));

        let early = stream(&[(500, true), (510, true), (520, true)]);
        assert_eq!(classify(&early, &spec()), Enrollment::Excluded(Exclusion::InsufficientHistory));
    }
}
