//! Windowed drug/condition co-occurrence counting.
//!
//! One pass over a cohort fills, for every subinterval, the pairwise counts
//! `n_dc` (plain or lag-weighted), the drug initiation counts `n_d`, the
//! condition counts `n_c`, and the exposure durations `h_d`.
//!
//! Pairs and drug marginals are attributed to the subinterval holding the
//! era start; condition marginals to the subinterval holding the occurrence.
//! Era durations are split across every subinterval the era overlaps.

use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::events::{first_eras, Cohort, ConditionId, Day, DrugEra, DrugId, PatientRecord};

pub type PairKey = (DrugId, ConditionId);

/// Patients per counting chunk. Chunk boundaries never depend on the worker
/// count, so float sums are reproducible bit for bit.
const CHUNK_PATIENTS: usize = 2048;

/// Piecewise-linear lag weight: rises from `w0` at lag 0 to 1 at
/// `peak_start_day`, stays at 1 through `peak_end_day`, then falls linearly
/// to 0 at `delta`. Zero outside `[0, delta]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeightKernel {
    pub w0: f64,
    pub peak_start_day: u32,
    pub peak_end_day: u32,
    pub delta: u32,
}

impl WeightKernel {
    pub fn new(w0: f64, peak_start_day: u32, peak_end_day: u32, delta: u32) -> Result<Self> {
        let k = Self {
            w0,
            peak_start_day,
            peak_end_day,
            delta,
        };
        k.check()?;
        Ok(k)
    }

    /// Default shape (0.2 at lag 0, plateau on days 6..=10) for window `delta`.
    pub fn with_default_shape(delta: u32) -> Result<Self> {
        Self::new(0.2, 6, 10, delta)
    }

    /// Same shape, different window.
    pub fn with_delta(&self, delta: u32) -> Result<Self> {
        Self::new(self.w0, self.peak_start_day, self.peak_end_day, delta)
    }

    fn check(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.w0) {
            return Err(Error::Config(format!("kernel w0 {} not in [0, 1]", self.w0)));
        }
        if self.peak_start_day > self.peak_end_day || self.peak_end_day >= self.delta {
            return Err(Error::Config(format!(
                "kernel needs peak_start {} <= peak_end {} < delta {}",
                self.peak_start_day, self.peak_end_day, self.delta
            )));
        }
        Ok(())
    }

    pub fn weight(&self, lag: i64) -> f64 {
        let (ps, pe, delta) = (
            self.peak_start_day as i64,
            self.peak_end_day as i64,
            self.delta as i64,
        );
        if lag < 0 || lag > delta {
            0.0
        } else if lag < ps {
            self.w0 + (1.0 - self.w0) * lag as f64 / ps as f64
        } else if lag <= pe {
            1.0
        } else {
            (delta - lag) as f64 / (delta - pe) as f64
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CountParams {
    /// Maximum lag in days between era start and condition start (closed).
    pub delta: u32,
    /// `None` counts every pair in the window with weight 1.
    pub kernel: Option<WeightKernel>,
    /// Number of subintervals the horizon is split into.
    pub m: usize,
    pub first_era_only: bool,
}

impl CountParams {
    pub fn uniform(delta: u32, m: usize) -> Self {
        Self {
            delta,
            kernel: None,
            m,
            first_era_only: false,
        }
    }

    fn check(&self) -> Result<()> {
        if self.m == 0 {
            return Err(Error::Config("subinterval count m must be >= 1".into()));
        }
        if let Some(k) = &self.kernel {
            if k.delta != self.delta {
                return Err(Error::KernelMismatch {
                    kernel: k.delta,
                    delta: self.delta,
                });
            }
            k.check()?;
        }
        Ok(())
    }

    fn weight(&self, lag: i64) -> f64 {
        match &self.kernel {
            Some(k) => k.weight(lag),
            None => 1.0,
        }
    }
}

/// Per-subinterval count statistics.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct CountTables {
    pub m: usize,
    pub pair_counts: Vec<HashMap<PairKey, f64>>,
    pub drug_counts: Vec<BTreeMap<DrugId, u64>>,
    pub cond_counts: Vec<BTreeMap<ConditionId, u64>>,
    pub drug_durations: Vec<BTreeMap<DrugId, u64>>,
    /// `N[i]`: sum of `drug_counts[i]`.
    pub drug_totals: Vec<u64>,
    /// `H[i]`: sum of `drug_durations[i]`.
    pub duration_totals: Vec<u64>,
}

impl CountTables {
    pub fn empty(m: usize) -> Self {
        Self {
            m,
            pair_counts: vec![HashMap::new(); m],
            drug_counts: vec![BTreeMap::new(); m],
            cond_counts: vec![BTreeMap::new(); m],
            drug_durations: vec![BTreeMap::new(); m],
            drug_totals: vec![0; m],
            duration_totals: vec![0; m],
        }
    }

    pub fn pair(&self, i: usize, key: PairKey) -> f64 {
        self.pair_counts[i].get(&key).copied().unwrap_or(0.0)
    }

    pub fn drug_count(&self, i: usize, d: DrugId) -> u64 {
        self.drug_counts[i].get(&d).copied().unwrap_or(0)
    }

    pub fn cond_count(&self, i: usize, c: ConditionId) -> u64 {
        self.cond_counts[i].get(&c).copied().unwrap_or(0)
    }

    pub fn drug_duration(&self, i: usize, d: DrugId) -> u64 {
        self.drug_durations[i].get(&d).copied().unwrap_or(0)
    }

    fn merge_from(&mut self, other: &CountTables) {
        for i in 0..self.m {
            for (k, v) in &other.pair_counts[i] {
                *self.pair_counts[i].entry(*k).or_insert(0.0) += v;
            }
            for (k, v) in &other.drug_counts[i] {
                *self.drug_counts[i].entry(*k).or_insert(0) += v;
            }
            for (k, v) in &other.cond_counts[i] {
                *self.cond_counts[i].entry(*k).or_insert(0) += v;
            }
            for (k, v) in &other.drug_durations[i] {
                *self.drug_durations[i].entry(*k).or_insert(0) += v;
            }
            self.drug_totals[i] += other.drug_totals[i];
            self.duration_totals[i] += other.duration_totals[i];
        }
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        serde_json::to_writer(BufWriter::new(file), &Checkpoint::from(self))
            .map_err(|e| Error::Checkpoint(e.to_string()))
    }

    pub fn read_json(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let cp: Checkpoint = serde_json::from_reader(BufReader::new(file))
            .map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;
        cp.try_into()
    }
}

/// Element-wise sum of two tables.
pub fn merge(a: &CountTables, b: &CountTables) -> Result<CountTables> {
    if a.m != b.m {
        return Err(Error::SubintervalMismatch(a.m, b.m));
    }
    let mut out = a.clone();
    out.merge_from(b);
    Ok(out)
}

/// Maps days to subintervals of an axis of `horizon` days split `m` ways.
/// Subinterval `i` holds the days with `floor(day * m / horizon) == i`; the
/// closing day `horizon` falls into the last one.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Subdivision {
    horizon: i64,
    m: i64,
}

impl Subdivision {
    pub(crate) fn new(horizon: Day, m: usize) -> Self {
        Self {
            horizon: horizon.max(1) as i64,
            m: m as i64,
        }
    }

    pub(crate) fn index(&self, day: Day) -> usize {
        let d = (day as i64).max(0);
        ((d * self.m / self.horizon).min(self.m - 1)) as usize
    }

    /// First day of subinterval `i`.
    fn start(&self, i: i64) -> i64 {
        (i * self.horizon + self.m - 1) / self.m
    }

    /// Adds the era's days to every subinterval it overlaps.
    fn spread(&self, start: Day, end: Day, mut add: impl FnMut(usize, u64)) {
        let (first, last) = (self.index(start), self.index(end));
        let (start, end) = (start as i64, end as i64);
        for i in first..=last {
            let lo = start.max(self.start(i as i64));
            let hi = if i as i64 == self.m - 1 {
                end
            } else {
                end.min(self.start(i as i64 + 1) - 1)
            };
            if hi >= lo {
                add(i, (hi - lo + 1) as u64);
            }
        }
    }
}

/// Counts every patient accepted by `include`.
pub fn count<F>(cohort: &Cohort, params: &CountParams, include: F) -> Result<CountTables>
where
    F: Fn(u64) -> bool + Sync,
{
    use rayon::prelude::*;

    params.check()?;
    let sub = Subdivision::new(cohort.time_axis.horizon_days, params.m);
    let partials: Vec<CountTables> = cohort
        .patients
        .par_chunks(CHUNK_PATIENTS)
        .map(|chunk| {
            let mut tables = CountTables::empty(params.m);
            let mut by_day = Vec::new();
            for p in chunk.iter().filter(|p| include(p.patient_id)) {
                count_patient(p, params, sub, &mut tables, &mut by_day);
            }
            tables
        })
        .collect();
    Ok(tree_merge(partials, params.m))
}

/// Counts the whole cohort.
pub fn count_all(cohort: &Cohort, params: &CountParams) -> Result<CountTables> {
    count(cohort, params, |_| true)
}

/// Fixed-shape pairwise reduction over chunk order.
fn tree_merge(mut parts: Vec<CountTables>, m: usize) -> CountTables {
    match parts.len() {
        0 => CountTables::empty(m),
        1 => parts.pop().unwrap(),
        n => {
            let right = parts.split_off(n / 2);
            let (mut a, b) = rayon::join(|| tree_merge(parts, m), || tree_merge(right, m));
            a.merge_from(&b);
            a
        }
    }
}

fn count_patient(
    p: &PatientRecord,
    params: &CountParams,
    sub: Subdivision,
    tables: &mut CountTables,
    by_day: &mut Vec<(Day, ConditionId)>,
) {
    by_day.clear();
    by_day.extend(p.conditions.iter().map(|c| (c.start_day, c.condition_id)));
    by_day.sort_unstable();

    for &(day, c) in by_day.iter() {
        *tables.cond_counts[sub.index(day)].entry(c).or_insert(0) += 1;
    }

    let mut visit = |era: &DrugEra| {
        let i = sub.index(era.start_day);
        *tables.drug_counts[i].entry(era.drug_id).or_insert(0) += 1;
        tables.drug_totals[i] += 1;
        sub.spread(era.start_day, era.end_day, |j, days| {
            *tables.drug_durations[j].entry(era.drug_id).or_insert(0) += days;
            tables.duration_totals[j] += days;
        });

        let t_d = era.start_day;
        let first = by_day.partition_point(|&(day, _)| day < t_d);
        let last_day = t_d as i64 + params.delta as i64;
        for &(day, c) in by_day[first..].iter() {
            if day as i64 > last_day {
                break;
            }
            let w = params.weight((day - t_d) as i64);
            if w != 0.0 {
                *tables.pair_counts[i].entry((era.drug_id, c)).or_insert(0.0) += w;
            }
        }
    };

    if params.first_era_only {
        first_eras(&p.drug_eras).for_each(&mut visit);
    } else {
        p.drug_eras.iter().for_each(&mut visit);
    }
}

const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    format: String,
    version: u32,
    m: usize,
    subintervals: Vec<CheckpointSubinterval>,
}

#[derive(Serialize, Deserialize)]
struct CheckpointSubinterval {
    pairs: Vec<(DrugId, ConditionId, f64)>,
    drug_counts: BTreeMap<DrugId, u64>,
    cond_counts: BTreeMap<ConditionId, u64>,
    drug_durations: BTreeMap<DrugId, u64>,
}

impl From<&CountTables> for Checkpoint {
    fn from(t: &CountTables) -> Self {
        let subintervals = (0..t.m)
            .map(|i| {
                let mut pairs: Vec<_> = t.pair_counts[i]
                    .iter()
                    .map(|(&(d, c), &v)| (d, c, v))
                    .collect();
                pairs.sort_by_key(|&(d, c, _)| (d, c));
                CheckpointSubinterval {
                    pairs,
                    drug_counts: t.drug_counts[i].clone(),
                    cond_counts: t.cond_counts[i].clone(),
                    drug_durations: t.drug_durations[i].clone(),
                }
            })
            .collect();
        Self {
            format: "signalmine-counts".into(),
            version: CHECKPOINT_VERSION,
            m: t.m,
            subintervals,
        }
    }
}

impl TryFrom<Checkpoint> for CountTables {
    type Error = Error;

    fn try_from(cp: Checkpoint) -> Result<Self> {
        if cp.format != "signalmine-counts" || cp.version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported checkpoint {} v{}",
                cp.format, cp.version
            )));
        }
        if cp.subintervals.len() != cp.m {
            return Err(Error::SubintervalMismatch(cp.m, cp.subintervals.len()));
        }
        let mut t = CountTables::empty(cp.m);
        for (i, s) in cp.subintervals.into_iter().enumerate() {
            t.pair_counts[i] = s.pairs.into_iter().map(|(d, c, v)| ((d, c), v)).collect();
            t.drug_totals[i] = s.drug_counts.values().sum();
            t.duration_totals[i] = s.drug_durations.values().sum();
            t.drug_counts[i] = s.drug_counts;
            t.cond_counts[i] = s.cond_counts;
            t.drug_durations[i] = s.drug_durations;
        }
        Ok(t)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::events::{ConditionOccurrence, TimeAxis};

    fn cohort(eras: &[(u32, Day, Day)], conds: &[(u32, Day)]) -> Cohort {
        let mut p = PatientRecord::new(1, 0, 3650);
        p.drug_eras = eras
            .iter()
            .map(|&(d, s, e)| DrugEra {
                drug_id: DrugId(d),
                start_day: s,
                end_day: e,
            })
            .collect();
        p.conditions = conds
            .iter()
            .map(|&(c, s)| ConditionOccurrence {
                condition_id: ConditionId(c),
                start_day: s,
            })
            .collect();
        Cohort::from_patients(vec![p], TimeAxis::default())
    }

    const PAIR: PairKey = (DrugId(1), ConditionId(2));

    #[test]
    fn lag_inside_window_counts() {
        let c = cohort(&[(1, 10, 12)], &[(2, 40)]);
        let t = count_all(&c, &CountParams::uniform(40, 1)).unwrap();
        assert_eq!(t.pair(0, PAIR), 1.0);
    }

    #[test]
    fn lag_beyond_window_does_not_count() {
        let c = cohort(&[(1, 10, 12)], &[(2, 40)]);
        let t = count_all(&c, &CountParams::uniform(20, 1)).unwrap();
        assert_eq!(t.pair(0, PAIR), 0.0);
        assert_eq!(t.drug_count(0, DrugId(1)), 1);
        assert_eq!(t.cond_count(0, ConditionId(2)), 1);
    }

    #[test]
    fn window_is_closed_at_both_ends() {
        let c = cohort(&[(1, 0, 3)], &[(2, 0), (2, 30)]);
        let t = count_all(&c, &CountParams::uniform(30, 1)).unwrap();
        assert_eq!(t.pair(0, PAIR), 2.0);
    }

    #[test]
    fn condition_before_era_is_ignored() {
        let c = cohort(&[(1, 100, 103)], &[(2, 99)]);
        let t = count_all(&c, &CountParams::uniform(30, 1)).unwrap();
        assert_eq!(t.pair(0, PAIR), 0.0);
    }

    #[test]
    fn era_across_year_boundary_splits_duration() {
        // Day-loop oracle: days 360..=364 lie in year 0, 365..=380 in year 1.
        let c = cohort(&[(1, 360, 380)], &[]);
        let t = count_all(&c, &CountParams::uniform(40, 10)).unwrap();
        let oracle: Vec<u64> = (0..10)
            .map(|y| (360..=380).filter(|d| d / 365 == y).count() as u64)
            .collect();
        assert_eq!(oracle[0], 5);
        assert_eq!(oracle[1], 16);
        for (y, &want) in oracle.iter().enumerate() {
            assert_eq!(t.drug_duration(y, DrugId(1)), want);
            assert_eq!(t.duration_totals[y], want);
        }
        assert_eq!(t.drug_count(0, DrugId(1)), 1);
        assert_eq!(t.drug_count(1, DrugId(1)), 0);
    }

    #[test]
    fn pair_attributed_to_era_start_year() {
        let c = cohort(&[(1, 360, 361)], &[(2, 370)]);
        let t = count_all(&c, &CountParams::uniform(40, 10)).unwrap();
        assert_eq!(t.pair(0, PAIR), 1.0);
        assert_eq!(t.pair(1, PAIR), 0.0);
        assert_eq!(t.cond_count(1, ConditionId(2)), 1);
        assert_eq!(t.cond_count(0, ConditionId(2)), 0);
    }

    #[test]
    fn kernel_values() {
        let k = WeightKernel::with_default_shape(40).unwrap();
        assert_eq!(k.weight(0), 0.2);
        assert_eq!(k.weight(8), 1.0);
        assert_eq!(k.weight(40), 0.0);
        assert_eq!(k.weight(25), 0.5);
        assert_eq!(k.weight(-1), 0.0);
        assert_eq!(k.weight(41), 0.0);
        assert!((k.weight(3) - 0.6).abs() < 1e-15);
    }

    #[test]
    fn kernel_rejects_bad_shape() {
        assert!(WeightKernel::new(0.2, 6, 10, 10).is_err());
        assert!(WeightKernel::new(1.5, 6, 10, 40).is_err());
        assert!(WeightKernel::new(0.2, 11, 10, 40).is_err());
    }

    #[test]
    fn kernel_delta_mismatch_is_an_error() {
        let c = cohort(&[], &[]);
        let params = CountParams {
            kernel: Some(WeightKernel::with_default_shape(40).unwrap()),
            ..CountParams::uniform(50, 10)
        };
        assert!(matches!(
            count_all(&c, &params),
            Err(Error::KernelMismatch {
                kernel: 40,
                delta: 50
            })
        ));
    }

    #[test]
    fn kernel_weighted_pair_count() {
        let c = cohort(&[(1, 100, 110)], &[(2, 100), (2, 108), (2, 125)]);
        let params = CountParams {
            kernel: Some(WeightKernel::with_default_shape(40).unwrap()),
            ..CountParams::uniform(40, 1)
        };
        let t = count_all(&c, &params).unwrap();
        assert!((t.pair(0, PAIR) - (0.2 + 1.0 + 0.5)).abs() < 1e-12);
    }

    #[test]
    fn first_era_flag_drops_later_eras() {
        let c = cohort(&[(1, 10, 20), (1, 400, 410)], &[(2, 15), (2, 405)]);
        let params = CountParams {
            first_era_only: true,
            ..CountParams::uniform(30, 10)
        };
        let t = count_all(&c, &params).unwrap();
        assert_eq!(t.pair(0, PAIR), 1.0);
        assert_eq!(t.pair(1, PAIR), 0.0);
        assert_eq!(t.drug_totals, [1, 0, 0, 0, 0, 0, 0, 0, 0, 0]);
        assert_eq!(t.cond_count(1, ConditionId(2)), 1);
    }

    #[test]
    fn merge_rejects_mismatched_m() {
        assert!(matches!(
            merge(&CountTables::empty(2), &CountTables::empty(3)),
            Err(Error::SubintervalMismatch(2, 3))
        ));
    }

    #[test]
    fn merge_with_empty_is_identity() {
        let c = cohort(&[(1, 10, 20), (3, 30, 40)], &[(2, 15), (2, 35)]);
        let t = count_all(&c, &CountParams::uniform(30, 10)).unwrap();
        assert_eq!(merge(&t, &CountTables::empty(10)).unwrap(), t);
    }

    #[test]
    fn checkpoint_round_trip() {
        let c = cohort(&[(1, 10, 400), (3, 30, 40)], &[(2, 15), (2, 35)]);
        let params = CountParams {
            kernel: Some(WeightKernel::with_default_shape(30).unwrap()),
            ..CountParams::uniform(30, 10)
        };
        let t = count_all(&c, &params).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("counts.json");
        t.write_json(&path).unwrap();
        assert_eq!(CountTables::read_json(&path).unwrap(), t);
    }

    #[test]
    fn subdivision_handles_uneven_split() {
        let s = Subdivision::new(10, 3);
        let idx: Vec<usize> = (0..=10).map(|d| s.index(d)).collect();
        assert_eq!(idx, [0, 0, 0, 0, 1, 1, 1, 2, 2, 2, 2]);
        let mut got = vec![0; 3];
        s.spread(0, 10, |i, n| got[i] += n);
        assert_eq!(got, [4, 3, 4]);
    }
}
