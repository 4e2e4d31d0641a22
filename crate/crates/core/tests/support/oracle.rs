//! Brute-force reference implementations used by tests. Nothing here calls
//! into the counting or rating code paths it checks.

#![allow(dead_code)]

use std::collections::BTreeMap;

use rand::Rng;
use signalmine::{
    Cohort, ConditionId, ConditionOccurrence, CountParams, CountTables, DrugEra, DrugId,
    PatientRecord, TimeAxis,
};

/// Small random cohort on a `years`-year axis with at most `max_patients`
/// patients and `max_events` events in total.
pub fn random_cohort(r: &mut impl Rng, max_patients: u64, max_events: usize, years: u32) -> Cohort {
    let axis = TimeAxis::years(years);
    let n_patients = r.random_range(1..=max_patients);
    let mut budget = r.random_range(0..=max_events);
    let mut patients = Vec::new();
    for pid in 1..=n_patients {
        let a = r.random_range(0..=axis.horizon_days);
        let b = r.random_range(0..=axis.horizon_days);
        let mut p = PatientRecord::new(pid * 7 + 3, a.min(b), a.max(b));
        let share = if pid == n_patients { budget } else { r.random_range(0..=budget) };
        budget -= share;
        for _ in 0..share {
            let start = r.random_range(p.obs_start..=p.obs_end);
            if r.random_bool(0.4) {
                let end = (start + r.random_range(0..120)).min(p.obs_end);
                p.drug_eras.push(DrugEra {
                    drug_id: DrugId(r.random_range(1..=4)),
                    start_day: start,
                    end_day: end,
                });
            } else {
                // cluster conditions near eras so windows are exercised
                let day = match p.drug_eras.last() {
                    Some(e) if r.random_bool(0.6) => {
                        (e.start_day + r.random_range(-5..70)).clamp(p.obs_start, p.obs_end)
                    }
                    _ => start,
                };
                p.conditions.push(ConditionOccurrence {
                    condition_id: ConditionId(r.random_range(1..=4)),
                    start_day: day,
                });
            }
        }
        patients.push(p);
    }
    Cohort::from_patients(patients, axis)
}

fn subinterval(day: i32, horizon: i32, m: usize) -> usize {
    let mut i = 0;
    for cand in 0..m {
        // first day of subinterval `cand` is the smallest d with d*m >= cand*horizon
        let first = (0..=horizon as i64)
            .find(|d| d * m as i64 >= cand as i64 * horizon as i64)
            .unwrap_or(i64::MAX);
        if day as i64 >= first {
            i = cand;
        }
    }
    i
}

/// Linear interpolation through the kernel's knots.
pub fn kernel_weight(params: &CountParams, lag: i64) -> f64 {
    let Some(k) = params.kernel else {
        return if (0..=params.delta as i64).contains(&lag) { 1.0 } else { 0.0 };
    };
    let knots = [
        (0.0, k.w0),
        (k.peak_start_day as f64, 1.0),
        (k.peak_end_day as f64, 1.0),
        (k.delta as f64, 0.0),
    ];
    let x = lag as f64;
    if x < 0.0 || x > k.delta as f64 {
        return 0.0;
    }
    for w in knots.windows(2) {
        let ((x0, y0), (x1, y1)) = (w[0], w[1]);
        if x >= x0 && x <= x1 {
            if x1 == x0 {
                return y1;
            }
            return y0 + (y1 - y0) * (x - x0) / (x1 - x0);
        }
    }
    0.0
}

#[derive(Debug, Default, PartialEq)]
pub struct OracleTables {
    pub pairs: Vec<BTreeMap<(DrugId, ConditionId), f64>>,
    pub drugs: Vec<BTreeMap<DrugId, u64>>,
    pub conds: Vec<BTreeMap<ConditionId, u64>>,
    pub durations: Vec<BTreeMap<DrugId, u64>>,
}

/// Quadruple loop over (patient, era, occurrence, subinterval).
pub fn brute_count(cohort: &Cohort, params: &CountParams, include: impl Fn(u64) -> bool) -> OracleTables {
    let m = params.m;
    let h = cohort.time_axis.horizon_days;
    let mut t = OracleTables {
        pairs: vec![BTreeMap::new(); m],
        drugs: vec![BTreeMap::new(); m],
        conds: vec![BTreeMap::new(); m],
        durations: vec![BTreeMap::new(); m],
    };
    for p in cohort.patients.iter().filter(|p| include(p.patient_id)) {
        // one era per drug: the earliest (start, end), first listed among exact ties
        let eras: Vec<&DrugEra> = p
            .drug_eras
            .iter()
            .enumerate()
            .filter(|&(i, e)| {
                !params.first_era_only
                    || !p.drug_eras.iter().enumerate().any(|(j, o)| {
                        o.drug_id == e.drug_id
                            && ((o.start_day, o.end_day) < (e.start_day, e.end_day)
                                || ((o.start_day, o.end_day) == (e.start_day, e.end_day) && j < i))
                    })
            })
            .map(|(_, e)| e)
            .collect();
        for e in &eras {
            for i in 0..m {
                if subinterval(e.start_day, h, m) == i {
                    *t.drugs[i].entry(e.drug_id).or_insert(0) += 1;
                }
            }
            for day in e.start_day..=e.end_day {
                *t.durations[subinterval(day, h, m)].entry(e.drug_id).or_insert(0) += 1;
            }
            for c in &p.conditions {
                for i in 0..m {
                    let lag = (c.start_day - e.start_day) as i64;
                    if subinterval(e.start_day, h, m) == i && lag >= 0 && lag <= params.delta as i64 {
                        let w = kernel_weight(params, lag);
                        if w != 0.0 {
                            *t.pairs[i].entry((e.drug_id, c.condition_id)).or_insert(0.0) += w;
                        }
                    }
                }
            }
        }
        for c in &p.conditions {
            *t.conds[subinterval(c.start_day, h, m)].entry(c.condition_id).or_insert(0) += 1;
        }
    }
    t
}

/// Compares counts; pair values within `tol` (0 for exact).
pub fn compare(got: &CountTables, want: &OracleTables, tol: f64) -> Result<(), String> {
    for i in 0..got.m {
        let mut keys: Vec<_> = got.pair_counts[i].keys().copied().collect();
        keys.extend(want.pairs[i].keys().copied());
        keys.sort();
        keys.dedup();
        for k in keys {
            let (g, w) = (got.pair(i, k), want.pairs[i].get(&k).copied().unwrap_or(0.0));
            if (g - w).abs() > tol {
                return Err(format!("subinterval {i} pair {k:?}: got {g}, oracle {w}"));
            }
        }
        if got.drug_counts[i] != want.drugs[i] {
            return Err(format!("subinterval {i} drug counts differ"));
        }
        if got.cond_counts[i] != want.conds[i] {
            return Err(format!("subinterval {i} condition counts differ"));
        }
        if got.drug_durations[i] != want.durations[i] {
            return Err(format!("subinterval {i} durations differ"));
        }
        if got.drug_totals[i] != want.drugs[i].values().sum::<u64>()
            || got.duration_totals[i] != want.durations[i].values().sum::<u64>()
        {
            return Err(format!("subinterval {i} totals differ"));
        }
    }
    Ok(())
}

/// Shrunk observed/expected score evaluated directly.
pub fn direct_score(n: f64, b: f64, alpha: f64, power: Option<f64>) -> f64 {
    let x = (n + alpha) / (b + alpha);
    match power {
        None => x.ln(),
        Some(p) => x.powf(p),
    }
}

/// Textbook AP: mean over positives of precision at their rank.
pub fn textbook_ap(labels: &[bool], n_positives: usize) -> f64 {
    let mut precisions = Vec::new();
    for (i, &is_pos) in labels.iter().enumerate() {
        if is_pos {
            let prefix = &labels[..=i];
            precisions.push(prefix.iter().filter(|&&x| x).count() as f64 / prefix.len() as f64);
        }
    }
    precisions.iter().sum::<f64>() / n_positives as f64
}
