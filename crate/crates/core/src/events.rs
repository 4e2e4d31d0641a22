//! In-memory model of longitudinal patient event data.
//!
//! Time is an integer day index from a global epoch (day 0 is the first day
//! of year 1). Years are fixed blocks of `year_length_days`; there is no
//! calendar logic.

use std::collections::{BTreeSet, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Day = i32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct DrugId(pub u32);

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ConditionId(pub u32);

impl fmt::Display for DrugId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

impl fmt::Display for ConditionId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

/// Global day axis split into `subintervals` equal blocks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimeAxis {
    pub horizon_days: Day,
    pub year_length_days: Day,
}

impl Default for TimeAxis {
    fn default() -> Self {
        Self::years(10)
    }
}

impl TimeAxis {
    pub fn years(m: u32) -> Self {
        Self {
            horizon_days: 365 * m as Day,
            year_length_days: 365,
        }
    }

    pub fn new(horizon_days: Day, year_length_days: Day) -> Result<Self> {
        if year_length_days <= 0 || horizon_days <= 0 || horizon_days % year_length_days != 0 {
            return Err(Error::Config(format!(
                "horizon {horizon_days} must be a positive multiple of year length {year_length_days}"
            )));
        }
        Ok(Self {
            horizon_days,
            year_length_days,
        })
    }

    /// Number of whole years on the axis (the default subinterval count).
    pub fn years_count(&self) -> usize {
        (self.horizon_days / self.year_length_days) as usize
    }

    /// Zero-based year of `day`. The closing day `horizon_days` belongs to
    /// the last year.
    pub fn year_of(&self, day: Day) -> usize {
        ((day / self.year_length_days) as usize).min(self.years_count().saturating_sub(1))
    }

    pub fn contains(&self, day: Day) -> bool {
        (0..=self.horizon_days).contains(&day)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DrugEra {
    pub drug_id: DrugId,
    pub start_day: Day,
    /// Inclusive.
    pub end_day: Day,
}

impl DrugEra {
    /// Length in days, counting both endpoints.
    pub fn days(&self) -> i64 {
        (self.end_day - self.start_day) as i64 + 1
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConditionOccurrence {
    pub condition_id: ConditionId,
    pub start_day: Day,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Sex {
    F,
    M,
    #[default]
    #[serde(rename = "U")]
    Unknown,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PatientRecord {
    pub patient_id: u64,
    pub obs_start: Day,
    pub obs_end: Day,
    /// Carried for format compatibility; ratings never read it.
    pub age_years: u32,
    /// Carried for format compatibility; ratings never read it.
    pub sex: Sex,
    /// Sorted by `(drug_id, start_day)`.
    pub drug_eras: Vec<DrugEra>,
    /// Sorted by `(condition_id, start_day)`.
    pub conditions: Vec<ConditionOccurrence>,
}

impl PatientRecord {
    pub fn new(patient_id: u64, obs_start: Day, obs_end: Day) -> Self {
        Self {
            patient_id,
            obs_start,
            obs_end,
            age_years: 0,
            sex: Sex::Unknown,
            drug_eras: Vec::new(),
            conditions: Vec::new(),
        }
    }

    pub fn observes(&self, day: Day) -> bool {
        (self.obs_start..=self.obs_end).contains(&day)
    }

    /// Restores the canonical event order.
    pub fn sort_events(&mut self) {
        self.drug_eras
            .sort_by_key(|e| (e.drug_id, e.start_day, e.end_day));
        self.conditions
            .sort_by_key(|c| (c.condition_id, c.start_day));
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Cohort {
    pub patients: Vec<PatientRecord>,
    pub drug_universe: BTreeSet<DrugId>,
    pub condition_universe: BTreeSet<ConditionId>,
    pub time_axis: TimeAxis,
}

impl Cohort {
    /// Builds a cohort whose universes are exactly the ids referenced by
    /// events. Event lists are put into canonical order.
    pub fn from_patients(mut patients: Vec<PatientRecord>, time_axis: TimeAxis) -> Self {
        let mut drug_universe = BTreeSet::new();
        let mut condition_universe = BTreeSet::new();
        for p in &mut patients {
            p.sort_events();
            drug_universe.extend(p.drug_eras.iter().map(|e| e.drug_id));
            condition_universe.extend(p.conditions.iter().map(|c| c.condition_id));
        }
        Self {
            patients,
            drug_universe,
            condition_universe,
            time_axis,
        }
    }

    pub fn n_eras(&self) -> usize {
        self.patients.iter().map(|p| p.drug_eras.len()).sum()
    }

    pub fn n_conditions(&self) -> usize {
        self.patients.iter().map(|p| p.conditions.len()).sum()
    }
}

/// A single invariant breach found by [`validate`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub patient_id: Option<u64>,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.patient_id {
            Some(id) => write!(f, "patient {id}: {}", self.message),
            None => f.write_str(&self.message),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ValidationReport {
    pub patients: usize,
    pub drug_eras: usize,
    pub conditions: usize,
    pub min_day: Option<Day>,
    pub max_day: Option<Day>,
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }
}

pub fn validate(cohort: &Cohort) -> ValidationReport {
    let axis = cohort.time_axis;
    let mut report = ValidationReport {
        patients: cohort.patients.len(),
        ..Default::default()
    };
    let mut seen = HashSet::with_capacity(cohort.patients.len());
    let days = |d: Day, r: &mut ValidationReport| {
        r.min_day = Some(r.min_day.map_or(d, |m| m.min(d)));
        r.max_day = Some(r.max_day.map_or(d, |m| m.max(d)));
    };

    for p in &cohort.patients {
        let flag = |message: String, r: &mut ValidationReport| {
            r.violations.push(Violation {
                patient_id: Some(p.patient_id),
                message,
            })
        };
        if !seen.insert(p.patient_id) {
            flag("duplicate patient_id".into(), &mut report);
        }
        days(p.obs_start, &mut report);
        days(p.obs_end, &mut report);
        if p.obs_start > p.obs_end {
            flag(
                format!("obs_start {} after obs_end {}", p.obs_start, p.obs_end),
                &mut report,
            );
        }
        if !axis.contains(p.obs_start) || !axis.contains(p.obs_end) {
            flag(
                format!(
                    "observation period {}..{} outside horizon 0..{}",
                    p.obs_start, p.obs_end, axis.horizon_days
                ),
                &mut report,
            );
        }

        report.drug_eras += p.drug_eras.len();
        if !p
            .drug_eras
            .windows(2)
            .all(|w| (w[0].drug_id, w[0].start_day) <= (w[1].drug_id, w[1].start_day))
        {
            flag("drug eras not sorted by (drug_id, start_day)".into(), &mut report);
        }
        for e in &p.drug_eras {
            days(e.start_day, &mut report);
            days(e.end_day, &mut report);
            if e.start_day > e.end_day {
                flag(
                    format!(
                        "era of drug {} starts at {} after its end {}",
                        e.drug_id, e.start_day, e.end_day
                    ),
                    &mut report,
                );
            }
            if !p.observes(e.start_day) || !p.observes(e.end_day) {
                flag(
                    format!(
                        "era of drug {} ({}..{}) outside observation period",
                        e.drug_id, e.start_day, e.end_day
                    ),
                    &mut report,
                );
            }
            if !axis.contains(e.start_day) || !axis.contains(e.end_day) {
                flag(
                    format!(
                        "era of drug {} ({}..{}) beyond horizon {}",
                        e.drug_id, e.start_day, e.end_day, axis.horizon_days
                    ),
                    &mut report,
                );
            }
            if !cohort.drug_universe.contains(&e.drug_id) {
                flag(format!("drug {} not in drug universe", e.drug_id), &mut report);
            }
        }

        report.conditions += p.conditions.len();
        if !p
            .conditions
            .windows(2)
            .all(|w| (w[0].condition_id, w[0].start_day) <= (w[1].condition_id, w[1].start_day))
        {
            flag(
                "conditions not sorted by (condition_id, start_day)".into(),
                &mut report,
            );
        }
        for c in &p.conditions {
            days(c.start_day, &mut report);
            if !p.observes(c.start_day) {
                flag(
                    format!(
                        "condition {} at day {} outside observation period",
                        c.condition_id, c.start_day
                    ),
                    &mut report,
                );
            }
            if !axis.contains(c.start_day) {
                flag(
                    format!(
                        "condition {} at day {} beyond horizon {}",
                        c.condition_id, c.start_day, axis.horizon_days
                    ),
                    &mut report,
                );
            }
            if !cohort.condition_universe.contains(&c.condition_id) {
                flag(
                    format!("condition {} not in condition universe", c.condition_id),
                    &mut report,
                );
            }
        }
    }
    report
}

/// Keeps, per patient and drug, only the era with the smallest start day.
pub fn first_eras_only(cohort: &Cohort) -> Cohort {
    let mut out = cohort.clone();
    for p in &mut out.patients {
        p.drug_eras.dedup_by_key(|e| e.drug_id);
    }
    out
}

/// Iterates the first era of every drug in a patient's (sorted) era list.
pub(crate) fn first_eras(eras: &[DrugEra]) -> impl Iterator<Item = &DrugEra> {
    eras.iter()
        .enumerate()
        .filter(move |(i, e)| *i == 0 || eras[i - 1].drug_id != e.drug_id)
        .map(|(_, e)| e)
}
