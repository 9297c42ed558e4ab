//! Synthetic longitudinal populations with planted comorbidity signals.
//!
//! Every patient gets a reference day `R`. Background encounters run from
//! the start of the record up to `R`, where the last one is placed. Each
//! condition's onset is a Bernoulli draw whose logit adds, for every planted
//! code pair, its weight times the summed temporal weights of the quarters
//! (of the observation window ending 15 months before `R`) in which both
//! codes are recorded, plus an age term. Temporal weights are normalized to
//! mean 1. Cases then receive a run of target-code
//! encounters starting at `R`, which makes `R` their index date under the
//! default cohort rules; for controls `R` is the last encounter.

use std::collections::{BTreeMap, BTreeSet};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::par::{self, Exec};

use super::types::{
    Code, CohortSpec, Encounter, EncounterStream, PopulationShift, DAYS_PER_YEAR, N_QUARTERS, N_RACES,
};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlantedPair {
    pub a: Code,
    pub b: Code,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConditionModel {
    pub name: String,
    pub target_codes: Vec<Code>,
    pub planted_pairs: Vec<PlantedPair>,
    /// Onset probability with no planted pair present at age 55.
    pub base_rate: f64,
}

impl ConditionModel {
    /// Condition `k` with three target codes placed after the background
    /// vocabulary.
    pub fn synthetic(k: usize, vocab_size: usize, planted_pairs: Vec<PlantedPair>, base_rate: f64) -> Self {
        let first = (vocab_size + 3 * k) as u32;
        ConditionModel {
            name: format!("cond{k}"),
            target_codes: (first..first + 3).map(Code).collect(),
            planted_pairs,
            base_rate,
        }
    }

    pub fn cohort_spec(&self) -> CohortSpec {
        CohortSpec::new(self.target_codes.iter().copied())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorConfig {
    pub n_patients: usize,
    /// Background codes are `Code(0)..Code(vocab_size)`.
    pub vocab_size: usize,
    pub conditions: Vec<ConditionModel>,
    /// Relative weight of pair co-occurrence per quarter, earliest first.
    pub temporal_profile: [f64; N_QUARTERS],
    /// Onset logit change per decade of age above 55.
    pub age_effect: f64,
    /// Chronic prevalence of codes that take part in a planted pair.
    pub planted_prevalence: f64,
    /// Probability that a chronic code is recorded at a given encounter.
    pub chronic_recall: f64,
    /// Probability of one extra uniformly drawn code per encounter.
    pub noise_rate: f64,
    pub mean_gap_days: f64,
    pub shift: Option<PopulationShift>,
    pub id_base: u32,
}

impl GeneratorConfig {
    pub fn new(n_patients: usize, vocab_size: usize, conditions: Vec<ConditionModel>) -> Self {
        GeneratorConfig {
            n_patients,
            vocab_size,
            conditions,
            temporal_profile: [1.0; N_QUARTERS],
            age_effect: 0.2,
            planted_prevalence: 0.3,
            chronic_recall: 0.3,
            noise_rate: 0.4,
            mean_gap_days: 24.0,
            shift: None,
            id_base: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.vocab_size < 10 {
            return bad(format!("vocab_size {} < 10", self.vocab_size));
        }
        if self.temporal_profile.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return bad("temporal profile weights must be finite and nonnegative".into());
        }
        if self.temporal_profile.iter().all(|&w| w == 0.0) {
            return bad("temporal profile is all zero".into());
        }
        for p in [self.planted_prevalence, self.chronic_recall, self.noise_rate] {
            if !(0.0..=1.0).contains(&p) {
                return bad(format!("probability {p} outside [0, 1]"));
            }
        }
        if !(self.mean_gap_days >= 1.0 && self.mean_gap_days.is_finite()) || !self.age_effect.is_finite() {
            return bad("mean_gap_days must be ≥ 1 and age_effect finite".into());
        }
        let mut seen = BTreeSet::new();
        for c in &self.conditions {
            if !(c.base_rate > 0.0 && c.base_rate < 1.0) {
                return bad(format!("{}: base rate must be in (0, 1)", c.name));
            }
            if c.target_codes.is_empty() {
                return bad(format!("{}: no target codes", c.name));
            }
            for t in &c.target_codes {
                if (t.0 as usize) < self.vocab_size || !seen.insert(*t) {
                    return bad(format!("{}: target code {t} overlaps another code set", c.name));
                }
            }
            for p in &c.planted_pairs {
                if p.a == p.b || p.a.0 as usize >= self.vocab_size || p.b.0 as usize >= self.vocab_size {
                    return bad(format!("{}: planted pair must use two background codes", c.name));
                }
                if !p.weight.is_finite() {
                    return bad(format!("{}: non-finite pair weight", c.name));
                }
            }
        }
        if let Some(shift) = &self.shift {
            shift.validate()?;
        }
        Ok(())
    }

    fn planted_codes(&self) -> BTreeSet<Code> {
        self.conditions
            .iter()
            .flat_map(|c| c.planted_pairs.iter().flat_map(|p| [p.a, p.b]))
            .collect()
    }

    /// Chronic prevalence of each background code before any shift. A fixed
    /// function of the code index so that two populations share it.
    pub fn base_prevalence(&self, code: Code) -> f64 {
        if self.planted_codes().contains(&code) {
            return self.planted_prevalence;
        }
        let u = (f64::from(code.0) * 0.618_033_988_749_895).fract();
        0.04 + 0.30 * u * u
    }
}

const RACE_WEIGHTS: [f64; N_RACES] = [0.6, 0.15, 0.12, 0.08, 0.05];
const REF_DAY_RANGE: (i64, i64) = (900, 1440);
const AGE_RANGE: (f64, f64) = (30.0, 79.0);

fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// Generates `cfg.n_patients` streams. Patient `i` draws from its own
/// ChaCha stream of `seed`, so output does not depend on execution mode.
pub fn generate_population(seed: u64, cfg: &GeneratorConfig, exec: Exec) -> Result<Vec<EncounterStream>> {
    cfg.validate()?;
    let shift = cfg.shift.clone().unwrap_or_default();
    let chronic_p: Vec<f64> = (0..cfg.vocab_size as u32)
        .map(|c| (cfg.base_prevalence(Code(c)) * shift.scale_for(Code(c))).clamp(0.0, 0.95))
        .collect();
    let mean_w = cfg.temporal_profile.iter().sum::<f64>() / N_QUARTERS as f64;
    let profile = cfg.temporal_profile.map(|w| w / mean_w);
    let ctx = Ctx {
        cfg,
        shift: &shift,
        chronic_p: &chronic_p,
        profile,
        window: CohortSpec::new([Code(u32::MAX)]),
    };
    Ok(par::map_range(exec, cfg.n_patients, |i| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(i as u64);
        ctx.patient(cfg.id_base + i as u32, &mut rng)
    }))
}

struct Ctx<'a> {
    cfg: &'a GeneratorConfig,
    shift: &'a PopulationShift,
    chronic_p: &'a [f64],
    profile: [f64; N_QUARTERS],
    /// Only used for its window arithmetic.
    window: CohortSpec,
}

impl Ctx<'_> {
    fn patient(&self, patient_id: u32, rng: &mut ChaCha8Rng) -> EncounterStream {
        let cfg = self.cfg;
        let delta = &self.shift.demographic_mix_delta;
        let gender = u8::from(rng.gen_bool((0.5 + delta.gender_p).clamp(0.0, 1.0)));
        let race = {
            let w: Vec<f64> = RACE_WEIGHTS
                .iter()
                .zip(delta.race_weights)
                .map(|(a, d)| (a + d).max(0.0))
                .collect();
            let total: f64 = w.iter().sum();
            let mut u = rng.gen::<f64>() * total;
            let mut pick = N_RACES - 1;
            for (k, wk) in w.iter().enumerate() {
                if u < *wk {
                    pick = k;
                    break;
                }
                u -= wk;
            }
            pick as u8
        };
        let ref_day = rng.gen_range(REF_DAY_RANGE.0..=REF_DAY_RANGE.1);
        let age = (rng.gen_range(AGE_RANGE.0..AGE_RANGE.1 + 1.0) + delta.age_years)
            .floor()
            .clamp(AGE_RANGE.0, AGE_RANGE.1) as i64;
        let birth_offset = ref_day - age * DAYS_PER_YEAR - rng.gen_range(0..DAYS_PER_YEAR);

        let chronic: Vec<Code> = (0..cfg.vocab_size as u32)
            .filter(|&c| rng.gen_bool(self.chronic_p[c as usize]))
            .map(Code)
            .collect();

        let mut days = vec![rng.gen_range(0..60)];
        loop {
            let gap = 1 + (-(1.0 - rng.gen::<f64>()).ln() * (cfg.mean_gap_days - 1.0)) as i64;
            let next = days[days.len() - 1] + gap;
            if next >= ref_day {
                break;
            }
            days.push(next);
        }
        days.push(ref_day);

        let mut encounters: BTreeMap<i64, Vec<Code>> = BTreeMap::new();
        for &d in &days {
            let mut codes: Vec<Code> = chronic
                .iter()
                .copied()
                .filter(|_| rng.gen_bool(cfg.chronic_recall))
                .collect();
            if rng.gen_bool(cfg.noise_rate) {
                codes.push(Code(rng.gen_range(0..cfg.vocab_size as u32)));
            }
            if codes.is_empty() {
                codes.push(if chronic.is_empty() {
                    Code(rng.gen_range(0..cfg.vocab_size as u32))
                } else {
                    chronic[rng.gen_range(0..chronic.len())]
                });
            }
            encounters.insert(d, codes);
        }

        let mut present = [BTreeSet::new(), BTreeSet::new(), BTreeSet::new(), BTreeSet::new()];
        for (&d, codes) in &encounters {
            if let Some(q) = self.window.quarter_of(ref_day, d) {
                present[q].extend(codes.iter().copied());
            }
        }

        let age_term = cfg.age_effect * (age as f64 - 55.0) / 10.0;
        for cond in &cfg.conditions {
            let mut z = logit(cond.base_rate) + age_term;
            for pair in &cond.planted_pairs {
                let strength = (0..N_QUARTERS)
                    .filter(|&q| present[q].contains(&pair.a) && present[q].contains(&pair.b))
                    .map(|q| self.profile[q])
                    .sum::<f64>();
                z += pair.weight * strength;
            }
            let p = crate::numerics::sigmoid(z);
            if rng.gen_bool(p) {
                let t = &cond.target_codes;
                let followups = [rng.gen_range(20..=80), rng.gen_range(100..=170)];
                encounters
                    .entry(ref_day)
                    .or_default()
                    .push(t[rng.gen_range(0..t.len())]);
                for off in followups {
                    let mut codes = vec![t[rng.gen_range(0..t.len())]];
                    codes.extend(chronic.iter().copied().filter(|_| rng.gen_bool(cfg.chronic_recall)));
                    encounters.entry(ref_day + off).or_default().extend(codes);
                }
            }
        }

        let alias = &self.shift.code_alias_map;
        let encounters = encounters
            .into_iter()
            .map(|(d, codes)| {
                Encounter::new(d, codes.into_iter().map(|c| alias.get(&c).copied().unwrap_or(c)).collect())
            })
            .collect();
        EncounterStream {
            patient_id,
            gender,
            race,
            birth_offset,
            encounters,
        }
    }
}

/// A shift that rescales every background code's prevalence by
/// `exp(U(-spread, spread))`, recodes `alias_count` codes to fresh
/// identifiers, and moves the demographic mix.
pub fn random_shift(
    seed: u64,
    vocab_size: usize,
    spread: f64,
    alias_count: usize,
    age_years: f64,
    gender_p: f64,
) -> PopulationShift {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let prevalence_scale = (0..vocab_size as u32)
        .map(|c| (Code(c), if spread > 0.0 { rng.gen_range(-spread..spread).exp() } else { 1.0 }))
        .collect();
    let picks = rand::seq::index::sample(&mut rng, vocab_size, alias_count.min(vocab_size));
    let fresh = 1_000_000u32;
    let code_alias_map = picks
        .iter()
        .enumerate()
        .map(|(k, c)| (Code(c as u32), Code(fresh + k as u32)))
        .collect();
    let mut race_weights = [0.0; N_RACES];
    race_weights[1] = 0.1 * gender_p.signum();
    PopulationShift {
        prevalence_scale,
        code_alias_map,
        demographic_mix_delta: super::types::DemographicDelta {
            gender_p,
            race_weights,
            age_years,
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cohort::find_index_date;

    fn one_condition(pairs: Vec<PlantedPair>, base_rate: f64) -> GeneratorConfig {
        GeneratorConfig::new(300, 30, vec![ConditionModel::synthetic(0, 30, pairs, base_rate)])
    }

    #[test]
    fn same_seed_same_streams() {
        let cfg = one_condition(vec![PlantedPair { a: Code(1), b: Code(2), weight: 3.0 }], 0.1);
        let a = generate_population(5, &cfg, Exec::Parallel).unwrap();
        let b = generate_population(5, &cfg, Exec::Sequential).unwrap();
        assert_eq!(a, b);
        let c = generate_population(6, &cfg, Exec::Parallel).unwrap();
        assert_ne!(a, c);
        for s in &a {
            s.validate().unwrap();
        }
    }

    #[test]
    fn all_zero_profile_is_rejected() {
        let mut cfg = one_condition(vec![], 0.1);
        cfg.temporal_profile = [0.0; 4];
        assert!(matches!(generate_population(1, &cfg, Exec::Sequential), Err(Error::Config(_))));
        cfg.temporal_profile = [0.0, 0.0, 0.0, 1.0];
        cfg.vocab_size = 9;
        assert!(generate_population(1, &cfg, Exec::Sequential).is_err());
    }

    #[test]
    fn cases_are_indexed_at_reference_day() {
        let cfg = one_condition(vec![], 0.3);
        let spec = cfg.conditions[0].cohort_spec();
        let streams = generate_population(2, &cfg, Exec::Sequential).unwrap();
        let mut n_case = 0;
        for s in &streams {
            let has_target = s.encounters.iter().any(|e| e.has_any(&spec.target_codes));
            match find_index_date(s, &spec) {
                Some((day, true)) => {
                    n_case += 1;
                    assert!(has_target);
                    // Only follow-up encounters lie after the index date.
                    assert!(s.encounters.iter().filter(|e| e.day > day).count() <= 2);
                }
                Some((day, false)) => {
                    assert!(!has_target);
                    assert_eq!(day, s.encounters.last().unwrap().day);
                }
                None => panic!("generated stream {} not enrolled", s.patient_id),
            }
        }
        assert!(n_case > 50);
    }

    #[test]
    fn aliased_codes_disappear() {
        let mut cfg = one_condition(vec![], 0.1);
        let shift = random_shift(3, 30, 0.5, 4, 2.0, 0.05);
        let aliased: Vec<Code> = shift.code_alias_map.keys().copied().collect();
        cfg.shift = Some(shift);
        let streams = generate_population(2, &cfg, Exec::Sequential).unwrap();
        for s in &streams {
            for e in &s.encounters {
                assert!(e.codes.iter().all(|c| !aliased.contains(c)));
            }
        }
    }
}
