//! Bagging over random patient subsets and window widths, and fusion of
//! two structurally different estimators after scale alignment.

use std::collections::{HashMap, HashSet};
use std::time::{Duration, Instant};

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::counting::{count, CountParams, PairKey, WeightKernel};
use crate::error::{Error, Result};
use crate::events::Cohort;
use crate::rating::{
    cumulate, key_union, rate_all, sort_ranked, MatrixTag, RatingConfig, RatingMatrix, Scope,
};
use crate::rng;

/// Replicates evaluated concurrently before being folded into the running sum.
const REPLICATE_BATCH: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BagConfig {
    pub k: usize,
    pub inclusion_prob: f64,
    pub delta_min: u32,
    pub delta_max: u32,
    pub seed: u64,
}

impl Default for BagConfig {
    fn default() -> Self {
        Self {
            k: 100,
            inclusion_prob: 0.65,
            delta_min: 40,
            delta_max: 60,
            seed: 1,
        }
    }
}

impl BagConfig {
    /// Single replicate over all patients with a fixed window.
    pub fn degenerate(delta: u32) -> Self {
        Self {
            k: 1,
            inclusion_prob: 1.0,
            delta_min: delta,
            delta_max: delta,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::Config("bagging needs k >= 1".into()));
        }
        if !(self.inclusion_prob > 0.0 && self.inclusion_prob <= 1.0) {
            return Err(Error::Config(format!(
                "inclusion_prob {} not in (0, 1]",
                self.inclusion_prob
            )));
        }
        if self.delta_min > self.delta_max {
            return Err(Error::Config(format!(
                "delta_min {} > delta_max {}",
                self.delta_min, self.delta_max
            )));
        }
        Ok(())
    }

    /// Window width of replicate `j`.
    pub fn replicate_delta(&self, j: usize) -> u32 {
        let mut r = rng::stream(&[self.seed, rng::STREAM_REPLICATE, j as u64]);
        r.random_range(self.delta_min..=self.delta_max)
    }

    /// Whether patient `patient_id` belongs to the subset of replicate `j`.
    pub fn includes(&self, j: usize, patient_id: u64) -> bool {
        let mut r = rng::stream(&[self.seed, rng::STREAM_INCLUSION, j as u64, patient_id]);
        r.random::<f64>() <= self.inclusion_prob
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnsembleConfig {
    pub tau: f64,
}

impl Default for EnsembleConfig {
    fn default() -> Self {
        Self { tau: 0.3 }
    }
}

impl EnsembleConfig {
    pub fn validate(&self) -> Result<()> {
        if (0.0..=1.0).contains(&self.tau) {
            Ok(())
        } else {
            Err(Error::Config(format!("tau {} not in [0, 1]", self.tau)))
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReplicateInfo {
    /// One-based replicate index.
    pub index: usize,
    pub delta: u32,
    pub included: usize,
    /// Empty subsets are skipped and do not enter the average.
    pub skipped: bool,
    pub elapsed: Duration,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct BagReport {
    pub replicates: Vec<ReplicateInfo>,
}

impl BagReport {
    pub fn effective_k(&self) -> usize {
        self.replicates.iter().filter(|r| !r.skipped).count()
    }
}

/// Shared settings of every replicate.
#[derive(Debug, Clone)]
pub struct BagPlan<'a> {
    pub m: usize,
    /// Kernel shape; its window is replaced by each replicate's width.
    pub kernel: Option<WeightKernel>,
    pub first_era_only: bool,
    pub scope: &'a Scope,
}

type ReplicateOutput = (ReplicateInfo, Option<Vec<Vec<RatingMatrix>>>);

fn run_replicate(
    cohort: &Cohort,
    configs: &[RatingConfig],
    bag: &BagConfig,
    plan: &BagPlan<'_>,
    j: usize,
) -> Result<ReplicateOutput> {
    let started = Instant::now();
    let delta = bag.replicate_delta(j);
    let members: HashSet<u64> = cohort
        .patients
        .iter()
        .map(|p| p.patient_id)
        .filter(|&id| bag.includes(j, id))
        .collect();
    let mut info = ReplicateInfo {
        index: j + 1,
        delta,
        included: members.len(),
        skipped: members.is_empty(),
        elapsed: Duration::ZERO,
    };
    if info.skipped {
        return Ok((info, None));
    }
    let params = CountParams {
        delta,
        kernel: plan.kernel.map(|k| k.with_delta(delta)).transpose()?,
        m: plan.m,
        first_era_only: plan.first_era_only,
    };
    let tables = if members.len() == cohort.patients.len() {
        count(cohort, &params, |_| true)?
    } else {
        count(cohort, &params, |id| members.contains(&id))?
    };
    let outputs = configs
        .iter()
        .map(|c| cumulate(&rate_all(&tables, c, plan.scope)?))
        .collect::<Result<Vec<_>>>()?;
    info.elapsed = started.elapsed();
    Ok((info, Some(outputs)))
}

/// Bags several rating configurations over the same replicate subsets and
/// windows. Returns, per configuration, the averaged cumulative matrices
/// `z^(1..m)`.
pub fn bag_many(
    cohort: &Cohort,
    configs: &[RatingConfig],
    bag: &BagConfig,
    plan: &BagPlan<'_>,
) -> Result<(Vec<Vec<RatingMatrix>>, BagReport)> {
    bag.validate()?;
    for c in configs {
        c.validate()?;
    }
    let mut sums: Vec<Vec<HashMap<PairKey, f64>>> = vec![vec![HashMap::new(); plan.m]; configs.len()];
    let mut report = BagReport::default();

    let indices: Vec<usize> = (0..bag.k).collect();
    for batch in indices.chunks(REPLICATE_BATCH) {
        let results: Vec<ReplicateOutput> = batch
            .par_iter()
            .map(|&j| run_replicate(cohort, configs, bag, plan, j))
            .collect::<Result<_>>()?;
        // fold in ascending replicate order
        for (info, out) in results {
            if let Some(out) = out {
                for (est, years) in out.into_iter().enumerate() {
                    for (y, s) in years.into_iter().enumerate() {
                        let acc = &mut sums[est][y];
                        for (k, v) in s.scores {
                            *acc.entry(k).or_insert(0.0) += v;
                        }
                    }
                }
            }
            report.replicates.push(info);
        }
    }

    let k_eff = report.effective_k().max(1) as f64;
    let z = sums
        .into_iter()
        .map(|years| {
            years
                .into_iter()
                .enumerate()
                .map(|(y, acc)| RatingMatrix {
                    scores: acc.into_iter().map(|(k, v)| (k, v / k_eff)).collect(),
                    tag: MatrixTag::Cumulative(y + 1),
                    scope: plan.scope.clone(),
                })
                .collect()
        })
        .collect();
    Ok((z, report))
}

pub fn bag(
    cohort: &Cohort,
    config: &RatingConfig,
    bag: &BagConfig,
    plan: &BagPlan<'_>,
) -> Result<(Vec<RatingMatrix>, BagReport)> {
    let (mut z, report) = bag_many(cohort, std::slice::from_ref(config), bag, plan)?;
    Ok((z.pop().unwrap_or_default(), report))
}

/// Moves `source`'s ranking onto `target`'s score distribution: the pair at
/// source rank t receives the score at target rank t. Keys missing from one
/// side enter with score 0.
pub fn scale_adjust(source: &RatingMatrix, target: &RatingMatrix) -> Result<RatingMatrix> {
    source.same_scope(target)?;
    let keys = key_union([source, target]);
    let ranked = |m: &RatingMatrix| {
        let mut v: Vec<(PairKey, f64)> = keys
            .iter()
            .map(|k| (*k, m.get(k).unwrap_or(0.0)))
            .collect();
        sort_ranked(&mut v);
        v
    };
    let src = ranked(source);
    let tgt = ranked(target);
    Ok(RatingMatrix {
        scores: src
            .into_iter()
            .zip(tgt)
            .map(|((k, _), (_, s))| (k, s))
            .collect(),
        tag: source.tag,
        scope: source.scope.clone(),
    })
}

/// `tau * scale_adjust(dpa1, dpa2) + (1 - tau) * dpa2`.
pub fn fuse(
    dpa1: &RatingMatrix,
    dpa2: &RatingMatrix,
    config: &EnsembleConfig,
) -> Result<RatingMatrix> {
    config.validate()?;
    let adjusted = scale_adjust(dpa1, dpa2)?;
    let tau = config.tau;
    Ok(RatingMatrix {
        scores: adjusted
            .scores
            .iter()
            .map(|(k, &a)| (*k, tau * a + (1.0 - tau) * dpa2.get(k).unwrap_or(0.0)))
            .collect(),
        tag: dpa2.tag,
        scope: dpa2.scope.clone(),
    })
}
