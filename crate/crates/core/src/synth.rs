//! Synthetic cohorts with injected ("spiked") drug → condition effects.
//!
//! Background eras and conditions are homogeneous Poisson processes over
//! each patient's observation period, so drugs and conditions are
//! independent except for the spiked pairs. Every patient draws from its own
//! random stream keyed by `(seed, patient_id)`.

use std::collections::{BTreeSet, HashMap};

use rand::seq::index::sample;
use rand::Rng;
use rand_distr::{Distribution, Geometric, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::counting::PairKey;
use crate::error::{Error, Result};
use crate::events::{
    Cohort, ConditionId, ConditionOccurrence, Day, DrugEra, DrugId, PatientRecord, Sex, TimeAxis,
};
use crate::rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenConfig {
    pub n_patients: u64,
    pub n_drugs: u32,
    pub n_conditions: u32,
    pub years: u32,
    /// Mean prescriptions per patient per observed year.
    pub drug_rate: f64,
    /// Mean background conditions per patient per observed year.
    pub cond_rate: f64,
    pub era_length_days: f64,
    pub n_spiked: u64,
    pub effect_prob: f64,
    pub lag_min_days: u32,
    pub lag_max_days: u32,
    pub seed: u64,
}

impl Default for GenConfig {
    fn default() -> Self {
        Self {
            n_patients: 5_000,
            n_drugs: 50,
            n_conditions: 40,
            years: 10,
            drug_rate: 2.0,
            cond_rate: 5.0,
            era_length_days: 30.0,
            n_spiked: 10,
            effect_prob: 0.5,
            lag_min_days: 3,
            lag_max_days: 20,
            seed: 1,
        }
    }
}

impl GenConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.n_drugs == 0 || self.n_conditions == 0 || self.years == 0 {
            return fail("n_drugs, n_conditions and years must be >= 1".into());
        }
        if !(self.effect_prob > 0.0 && self.effect_prob <= 1.0) {
            return fail(format!("effect_prob {} not in (0, 1]", self.effect_prob));
        }
        if self.lag_min_days > self.lag_max_days {
            return fail(format!(
                "lag_min_days {} > lag_max_days {}",
                self.lag_min_days, self.lag_max_days
            ));
        }
        if self.n_spiked > self.n_drugs as u64 * self.n_conditions as u64 {
            return fail(format!(
                "n_spiked {} exceeds {} possible pairs",
                self.n_spiked,
                self.n_drugs as u64 * self.n_conditions as u64
            ));
        }
        if !(self.drug_rate >= 0.0 && self.cond_rate >= 0.0) {
            return fail("rates must be non-negative".into());
        }
        if self.era_length_days.is_nan() || self.era_length_days < 1.0 {
            return fail(format!("era_length_days {} < 1", self.era_length_days));
        }
        Ok(())
    }

    pub fn time_axis(&self) -> TimeAxis {
        TimeAxis::years(self.years)
    }
}

/// Labeled pairs for evaluation only.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct GroundTruth {
    pub positives: BTreeSet<PairKey>,
    pub negatives: BTreeSet<PairKey>,
}

impl GroundTruth {
    pub fn new(positives: BTreeSet<PairKey>, negatives: BTreeSet<PairKey>) -> Result<Self> {
        if let Some(k) = positives.intersection(&negatives).next() {
            return Err(Error::InvalidData(vec![format!(
                "pair ({}, {}) labeled both positive and negative",
                k.0, k.1
            )]));
        }
        Ok(Self {
            positives,
            negatives,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct GenStats {
    /// Conditions added by spiked effects.
    pub injected: u64,
    /// Eras of drugs that appear in a spiked pair.
    pub spiked_drug_eras: u64,
}

#[derive(Debug, Clone)]
pub struct Synthetic {
    pub cohort: Cohort,
    pub truth: GroundTruth,
    pub stats: GenStats,
}

fn pair_of(index: u64, n_conditions: u32) -> PairKey {
    (
        DrugId((index / n_conditions as u64) as u32 + 1),
        ConditionId((index % n_conditions as u64) as u32 + 1),
    )
}

fn choose_truth(config: &GenConfig) -> GroundTruth {
    let mut r = rng::stream(&[config.seed, rng::STREAM_TRUTH]);
    let total = config.n_drugs as u64 * config.n_conditions as u64;
    let n = config.n_spiked;
    let positives: BTreeSet<PairKey> = sample(&mut r, total as usize, n as usize)
        .into_iter()
        .map(|i| pair_of(i as u64, config.n_conditions))
        .collect();

    let free = total - n;
    let want = n.min(free);
    let mut negatives = BTreeSet::new();
    if want * 2 <= free {
        while (negatives.len() as u64) < want {
            let k = pair_of(r.random_range(0..total), config.n_conditions);
            if !positives.contains(&k) {
                negatives.insert(k);
            }
        }
    } else {
        let rest: Vec<PairKey> = (0..total)
            .map(|i| pair_of(i, config.n_conditions))
            .filter(|k| !positives.contains(k))
            .collect();
        negatives.extend(
            sample(&mut r, rest.len(), want as usize)
                .into_iter()
                .map(|i| rest[i]),
        );
    }
    GroundTruth {
        positives,
        negatives,
    }
}

fn poisson(r: &mut impl Rng, mean: f64) -> u64 {
    if mean <= 0.0 {
        return 0;
    }
    Poisson::new(mean).map(|p| p.sample(r) as u64).unwrap_or(0)
}

/// For every era start of a spiked drug, adds the paired condition with
/// probability `effect_prob` after a uniform lag, clipped to the patient's
/// observation period. Returns the number of added occurrences.
pub(crate) fn inject_spiked(
    patient: &mut PatientRecord,
    spiked: &HashMap<DrugId, Vec<ConditionId>>,
    config: &GenConfig,
    r: &mut impl Rng,
) -> u64 {
    let mut added = Vec::new();
    for era in &patient.drug_eras {
        let Some(conds) = spiked.get(&era.drug_id) else {
            continue;
        };
        for &c in conds {
            if r.random::<f64>() < config.effect_prob {
                let lag = r.random_range(config.lag_min_days..=config.lag_max_days) as Day;
                let day = (era.start_day + lag).min(patient.obs_end);
                added.push(ConditionOccurrence {
                    condition_id: c,
                    start_day: day,
                });
            }
        }
    }
    let n = added.len() as u64;
    patient.conditions.extend(added);
    n
}

fn synth_patient(
    patient_id: u64,
    config: &GenConfig,
    spiked: &HashMap<DrugId, Vec<ConditionId>>,
    horizon: Day,
) -> (PatientRecord, GenStats) {
    let mut r = rng::stream(&[config.seed, rng::STREAM_PATIENT, patient_id]);
    let a = r.random_range(0..horizon);
    let b = r.random_range(0..horizon);
    let mut p = PatientRecord::new(patient_id, a.min(b), a.max(b));
    p.age_years = r.random_range(0..=95);
    p.sex = if r.random::<bool>() { Sex::F } else { Sex::M };

    let observed_years = (p.obs_end - p.obs_start + 1) as f64 / 365.0;
    let geo = Geometric::new(1.0 / config.era_length_days).expect("era length validated");
    for _ in 0..poisson(&mut r, config.drug_rate * observed_years) {
        let drug_id = DrugId(r.random_range(1..=config.n_drugs));
        let start_day = r.random_range(p.obs_start..=p.obs_end);
        let len = 1 + geo.sample(&mut r).min(horizon as u64) as Day;
        p.drug_eras.push(DrugEra {
            drug_id,
            start_day,
            end_day: (start_day + len - 1).min(p.obs_end),
        });
    }
    for _ in 0..poisson(&mut r, config.cond_rate * observed_years) {
        p.conditions.push(ConditionOccurrence {
            condition_id: ConditionId(r.random_range(1..=config.n_conditions)),
            start_day: r.random_range(p.obs_start..=p.obs_end),
        });
    }
    let stats = GenStats {
        spiked_drug_eras: p
            .drug_eras
            .iter()
            .filter(|e| spiked.contains_key(&e.drug_id))
            .count() as u64,
        injected: inject_spiked(&mut p, spiked, config, &mut r),
    };
    p.sort_events();
    (p, stats)
}

/// Deterministic for a fixed `config.seed`, independent of thread count.
pub fn generate(config: &GenConfig) -> Result<Synthetic> {
    config.validate()?;
    let axis = config.time_axis();
    let truth = choose_truth(config);
    let mut spiked: HashMap<DrugId, Vec<ConditionId>> = HashMap::new();
    for &(d, c) in &truth.positives {
        spiked.entry(d).or_default().push(c);
    }

    let (patients, stats): (Vec<_>, Vec<_>) = (1..=config.n_patients)
        .into_par_iter()
        .map(|pid| synth_patient(pid, config, &spiked, axis.horizon_days))
        .unzip();
    let stats = stats.iter().fold(GenStats::default(), |acc, s| GenStats {
        injected: acc.injected + s.injected,
        spiked_drug_eras: acc.spiked_drug_eras + s.spiked_drug_eras,
    });
    Ok(Synthetic {
        cohort: Cohort::from_patients(patients, axis),
        truth,
        stats,
    })
}
