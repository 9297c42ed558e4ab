//! Synthetic populations, case-control enrollment, observation-window
//! aggregation and stratified splitting.

mod bundle;
mod extract;
mod generate;
mod index;
pub mod io;
mod split;
mod types;

pub use bundle::{build_cohort, build_external, Cohort};
pub use extract::{build_vocab, enroll, extract_all, extract_tensor, Enrollee, EnrollmentStats};
pub use generate::{generate_population, random_shift, ConditionModel, GeneratorConfig, PlantedPair};
pub use index::{classify, find_index_date, Enrollment, Exclusion};
pub use split::{split_cohort, stratified_folds, Split};
pub use types::*;
