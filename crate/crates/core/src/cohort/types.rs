use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const DAYS_PER_MONTH: i64 = 30;
pub const DAYS_PER_YEAR: i64 = 12 * DAYS_PER_MONTH;
pub const N_GENDERS: usize = 2;
pub const N_RACES: usize = 5;
pub const N_AGE_BINS: usize = 10;
pub const AGE_BIN_YEARS: i64 = 5;
/// Width of the concatenated gender ‖ race ‖ age-bin one-hot block.
pub const DEMO_DIM: usize = N_GENDERS + N_RACES + N_AGE_BINS;
pub const N_QUARTERS: usize = 4;
/// Demographic tokens per quarter (gender, race, age bin).
pub const DEMO_TOKENS: usize = 3;

/// A diagnosis or procedure code ("medical concept").
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Code(pub u32);

impl fmt::Display for Code {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "C{:04}", self.0)
    }
}

impl std::str::FromStr for Code {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        s.strip_prefix('C')
            .and_then(|d| d.parse().ok())
            .map(Code)
            .ok_or_else(|| format!("bad code `{s}`"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Encounter {
    pub day: i64,
    /// Sorted, deduplicated.
    pub codes: Vec<Code>,
}

impl Encounter {
    pub fn new(day: i64, mut codes: Vec<Code>) -> Self {
        codes.sort_unstable();
        codes.dedup();
        Encounter { day, codes }
    }

    pub fn has_any(&self, set: &BTreeSet<Code>) -> bool {
        self.codes.iter().any(|c| set.contains(c))
    }
}

/// Raw longitudinal record of one synthetic patient.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncounterStream {
    pub patient_id: u32,
    pub gender: u8,
    pub race: u8,
    /// Day of birth relative to the stream origin (usually negative).
    pub birth_offset: i64,
    /// Sorted by day; at most one encounter per day.
    pub encounters: Vec<Encounter>,
}

impl EncounterStream {
    pub fn validate(&self) -> Result<()> {
        if usize::from(self.gender) >= N_GENDERS || usize::from(self.race) >= N_RACES {
            return Err(Error::Input(format!("patient {}: demographic out of range", self.patient_id)));
        }
        for w in self.encounters.windows(2) {
            if w[0].day >= w[1].day {
                return Err(Error::Input(format!("patient {}: encounters not strictly ordered", self.patient_id)));
            }
        }
        if self.encounters.iter().any(|e| e.day < 0 || e.codes.is_empty()) {
            return Err(Error::Input(format!("patient {}: negative day or empty encounter", self.patient_id)));
        }
        Ok(())
    }

    /// Whole years of age on `day`.
    pub fn age_years(&self, day: i64) -> i64 {
        (day - self.birth_offset).div_euclid(DAYS_PER_YEAR)
    }
}

/// Case-control and windowing rules, in months of 30 days.
#[derive(Debug, Clone, PartialEq)]
pub struct CohortSpec {
    pub target_codes: BTreeSet<Code>,
    pub case_min_hits: usize,
    pub case_window_months: i64,
    pub buffer_months: i64,
    pub observation_span_months: i64,
    pub observation_end_months_before_index: i64,
    pub prediction_window_months: i64,
    pub control_min_encounters: usize,
    pub control_span_months: i64,
    /// `[min, max)` in whole years at the index date.
    pub age_bounds: (i64, i64),
    pub min_code_occurrences: usize,
    pub quarter_months: i64,
}

impl CohortSpec {
    pub fn new(target_codes: impl IntoIterator<Item = Code>) -> Self {
        CohortSpec {
            target_codes: target_codes.into_iter().collect(),
            case_min_hits: 3,
            case_window_months: 6,
            buffer_months: 3,
            observation_span_months: 12,
            observation_end_months_before_index: 15,
            prediction_window_months: 15,
            control_min_encounters: 5,
            control_span_months: 24,
            age_bounds: (30, 80),
            min_code_occurrences: 50,
            quarter_months: 3,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.target_codes.is_empty() {
            return bad("cohort needs at least one target code");
        }
        if self.case_min_hits == 0 || self.control_min_encounters == 0 {
            return bad("hit and encounter thresholds must be positive");
        }
        if self.quarter_months <= 0 || self.observation_span_months != self.quarter_months * N_QUARTERS as i64 {
            return bad("observation span must be exactly four quarters");
        }
        if self.buffer_months > self.observation_end_months_before_index {
            return bad("buffer must end inside the prediction window");
        }
        if self.age_bounds.0 >= self.age_bounds.1 {
            return bad("age bounds are empty");
        }
        Ok(())
    }

    /// Half-open observation window `[start, end)` in days for an index day.
    pub fn observation_window(&self, index_day: i64) -> (i64, i64) {
        let end = index_day - self.observation_end_months_before_index * DAYS_PER_MONTH;
        (end - self.observation_span_months * DAYS_PER_MONTH, end)
    }

    /// Quarter slot (0 = earliest) of `day`, if it lies in the observation window.
    pub fn quarter_of(&self, index_day: i64, day: i64) -> Option<usize> {
        let (start, end) = self.observation_window(index_day);
        if day < start || day >= end || day >= index_day - self.buffer_months * DAYS_PER_MONTH {
            return None;
        }
        Some(((day - start) / (self.quarter_months * DAYS_PER_MONTH)) as usize)
    }

    pub fn age_bin(&self, age_years: i64) -> Option<u8> {
        if age_years < self.age_bounds.0 || age_years >= self.age_bounds.1 {
            return None;
        }
        let bin = (age_years - self.age_bounds.0) / AGE_BIN_YEARS;
        Some(bin.min(N_AGE_BINS as i64 - 1) as u8)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Label {
    Control = 0,
    Case = 1,
}

impl Label {
    pub fn is_case(self) -> bool {
        self == Label::Case
    }

    pub fn as_f64(self) -> f64 {
        f64::from(self as u8)
    }
}

/// Anything that can be stratified by label.
pub trait Labeled {
    fn label(&self) -> Label;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Demographics {
    pub gender: u8,
    pub race: u8,
    pub age_bin: u8,
}

impl Demographics {
    /// Positions of the three hot entries in the `DEMO_DIM` one-hot block.
    pub fn onehot_indices(&self) -> [usize; 3] {
        [
            usize::from(self.gender),
            N_GENDERS + usize::from(self.race),
            N_GENDERS + N_RACES + usize::from(self.age_bin),
        ]
    }

    pub fn from_onehot_indices(idx: [usize; 3]) -> Result<Self> {
        let ok = idx[0] < N_GENDERS
            && (N_GENDERS..N_GENDERS + N_RACES).contains(&idx[1])
            && (N_GENDERS + N_RACES..DEMO_DIM).contains(&idx[2]);
        if !ok {
            return Err(Error::Input(format!("invalid demographic indices {idx:?}")));
        }
        Ok(Demographics {
            gender: idx[0] as u8,
            race: (idx[1] - N_GENDERS) as u8,
            age_bin: (idx[2] - N_GENDERS - N_RACES) as u8,
        })
    }

    pub fn onehot(&self) -> [f64; DEMO_DIM] {
        let mut v = [0.0; DEMO_DIM];
        for i in self.onehot_indices() {
            v[i] = 1.0;
        }
        v
    }
}

/// Sparse per-quarter counts: `(vocabulary index, count)` sorted by index.
pub type QuarterCounts = Vec<(usize, u32)>;

/// One supervised example.
#[derive(Debug, Clone, PartialEq)]
pub struct PatientTensor {
    pub patient_id: u32,
    pub label: Label,
    pub demographics: Demographics,
    /// Slot 0 is the earliest quarter, slot 3 the one nearest the index date.
    pub quarters: [QuarterCounts; N_QUARTERS],
}

impl PatientTensor {
    pub fn count(&self, quarter: usize, vocab_index: usize) -> u32 {
        let q = &self.quarters[quarter];
        q.binary_search_by_key(&vocab_index, |&(i, _)| i).map_or(0, |k| q[k].1)
    }

    pub fn quarter_total(&self, quarter: usize) -> u32 {
        self.quarters[quarter].iter().map(|&(_, c)| c).sum()
    }

    pub fn dense_quarter(&self, quarter: usize, vocab_len: usize) -> Vec<f64> {
        let mut v = vec![0.0; vocab_len];
        for &(i, c) in &self.quarters[quarter] {
            v[i] = f64::from(c);
        }
        v
    }

    pub fn max_vocab_index(&self) -> Option<usize> {
        self.quarters.iter().flatten().map(|&(i, _)| i).max()
    }
}

impl Labeled for PatientTensor {
    fn label(&self) -> Label {
        self.label
    }
}

/// Ordered code list used as model vocabulary.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    codes: Vec<Code>,
    index: HashMap<Code, usize>,
}

impl Vocabulary {
    pub fn new(codes: Vec<Code>) -> Result<Self> {
        if codes.is_empty() {
            return Err(Error::Config("vocabulary is empty".into()));
        }
        let index: HashMap<Code, usize> = codes.iter().enumerate().map(|(i, &c)| (c, i)).collect();
        if index.len() != codes.len() {
            return Err(Error::Vocabulary("duplicate code in vocabulary".into()));
        }
        Ok(Vocabulary { codes, index })
    }

    pub fn len(&self) -> usize {
        self.codes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.codes.is_empty()
    }

    pub fn codes(&self) -> &[Code] {
        &self.codes
    }

    pub fn index_of(&self, code: Code) -> Option<usize> {
        self.index.get(&code).copied()
    }

    pub fn code(&self, i: usize) -> Code {
        self.codes[i]
    }

    /// Hex SHA-256 of the newline-joined code labels.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        for c in &self.codes {
            h.update(c.to_string().as_bytes());
            h.update(b"\n");
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Coding-practice and case-mix differences for an external population.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PopulationShift {
    /// Multiplicative factors on per-code chronic prevalence.
    pub prevalence_scale: BTreeMap<Code, f64>,
    /// Codes recorded under a different identifier.
    pub code_alias_map: BTreeMap<Code, Code>,
    pub demographic_mix_delta: DemographicDelta,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct DemographicDelta {
    /// Added to the probability of gender 1.
    pub gender_p: f64,
    /// Added to the race sampling weights before renormalising.
    pub race_weights: [f64; N_RACES],
    /// Shift of the age distribution in years.
    pub age_years: f64,
}

impl PopulationShift {
    pub fn validate(&self) -> Result<()> {
        let targets: BTreeSet<_> = self.code_alias_map.values().collect();
        if targets.len() != self.code_alias_map.len() {
            return Err(Error::Config("code alias map must be injective".into()));
        }
        if self.prevalence_scale.values().any(|s| !s.is_finite() || *s < 0.0) {
            return Err(Error::Config("prevalence scales must be finite and nonnegative".into()));
        }
        Ok(())
    }

    pub fn scale_for(&self, code: Code) -> f64 {
        self.prevalence_scale.get(&code).copied().unwrap_or(1.0)
    }
}
