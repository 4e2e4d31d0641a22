//! Drug → condition signal detection over longitudinal patient event data.
//!
//! The pipeline counts windowed drug-era/condition co-occurrences per
//! yearly subinterval, turns them into shrunk observed/expected ratings,
//! averages the ratings cumulatively over years, bags the whole chain over
//! random patient subsets and window widths, and fuses the occurrence- and
//! duration-based estimators. Rankings are scored by average precision.

pub mod counting;
pub mod ensemble;
pub mod error;
pub mod evaluation;
pub mod events;
pub mod io;
pub mod rating;
mod rng;
pub mod synth;

pub use counting::{count, merge, CountParams, CountTables, PairKey, WeightKernel};
pub use ensemble::{bag, bag_many, fuse, scale_adjust, BagConfig, BagReport, EnsembleConfig};
pub use error::{Error, Result};
pub use evaluation::{average_precision, map_by_year, RankedList, YearlyMap};
pub use events::{
    first_eras_only, validate, Cohort, ConditionId, ConditionOccurrence, Day, DrugEra, DrugId,
    PatientRecord, Sex, TimeAxis, ValidationReport, Violation,
};
pub use rating::{
    cumulate, expected_count, rate, ExposureModel, MatrixTag, RatingConfig, RatingMatrix, Scope,
    Transform,
};
pub use synth::{generate, GenConfig, GroundTruth};
