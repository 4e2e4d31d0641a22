//! Observed/expected ratings per subinterval and their cumulative means.
//!
//! The expected count of a pair is the drug's share of total exposure times
//! the condition count, where exposure is either the number of era starts
//! (occurrence model) or the number of exposed days (duration model). The
//! rating is `f((n_dc + alpha) / (b_dc + alpha))` with `f` a natural log or a
//! power function.

use std::collections::{BTreeSet, HashMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::counting::{CountTables, PairKey};
use crate::error::{Error, Result};
use crate::events::{Cohort, ConditionId, DrugId};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Transform {
    Log,
    Power(f64),
}

impl Transform {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Transform::Log => x.ln(),
            Transform::Power(p) => x.powf(p),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExposureModel {
    /// Exposure share from era-start counts (DPA1).
    Occurrence,
    /// Exposure share from exposed days (DPA2).
    Duration,
}

impl ExposureModel {
    pub fn name(self) -> &'static str {
        match self {
            ExposureModel::Occurrence => "occurrence",
            ExposureModel::Duration => "duration",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RatingConfig {
    pub alpha: f64,
    pub transform: Transform,
    pub exposure: ExposureModel,
}

impl RatingConfig {
    pub fn new(exposure: ExposureModel) -> Self {
        Self {
            alpha: 0.3,
            transform: Transform::Log,
            exposure,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(Error::Config(format!("alpha must be > 0, got {}", self.alpha)));
        }
        if let Transform::Power(p) = self.transform {
            if !(p > 0.0 && p.is_finite()) {
                return Err(Error::Config(format!("power exponent must be > 0, got {p}")));
            }
        }
        Ok(())
    }

    /// Shrunk observed/expected score for one pair.
    pub fn score(&self, observed: f64, expected: f64) -> f64 {
        self.transform
            .apply((observed + self.alpha) / (expected + self.alpha))
    }
}

/// Drug and condition ids a matrix is defined over.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Scope {
    pub drugs: BTreeSet<DrugId>,
    pub conditions: BTreeSet<ConditionId>,
}

impl Scope {
    /// Cohort universes, with drugs optionally limited to an inclusive id range.
    pub fn from_cohort(cohort: &Cohort, drug_range: Option<(u32, u32)>) -> Self {
        let drugs = cohort
            .drug_universe
            .iter()
            .copied()
            .filter(|d| drug_range.is_none_or(|(lo, hi)| (lo..=hi).contains(&d.0)))
            .collect();
        Self {
            drugs,
            conditions: cohort.condition_universe.clone(),
        }
    }

    pub fn contains(&self, key: &PairKey) -> bool {
        self.drugs.contains(&key.0) && self.conditions.contains(&key.1)
    }

    /// Number of (drug, condition) cells.
    pub fn cells(&self) -> usize {
        self.drugs.len() * self.conditions.len()
    }

    pub fn pairs(&self) -> impl Iterator<Item = PairKey> + '_ {
        self.drugs
            .iter()
            .flat_map(move |&d| self.conditions.iter().map(move |&c| (d, c)))
    }
}

/// Which slice of time a matrix describes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MatrixTag {
    /// Zero-based subinterval index.
    Subinterval(usize),
    /// Cumulative through year `y` (one-based).
    Cumulative(usize),
}

/// Sparse drug × condition scores. Absent keys mean "no evidence" and rank
/// below every present key.
#[derive(Debug, Clone, PartialEq)]
pub struct RatingMatrix {
    pub scores: HashMap<PairKey, f64>,
    pub tag: MatrixTag,
    pub scope: Scope,
}

impl RatingMatrix {
    pub fn new(tag: MatrixTag, scope: Scope) -> Self {
        Self {
            scores: HashMap::new(),
            tag,
            scope,
        }
    }

    pub fn get(&self, key: &PairKey) -> Option<f64> {
        self.scores.get(key).copied()
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    /// Entries by descending score, ties by ascending key.
    pub fn ranked(&self) -> Vec<(PairKey, f64)> {
        let mut v: Vec<_> = self.scores.iter().map(|(&k, &s)| (k, s)).collect();
        sort_ranked(&mut v);
        v
    }

    pub(crate) fn same_scope(&self, other: &RatingMatrix) -> Result<()> {
        if self.scope == other.scope {
            Ok(())
        } else {
            Err(Error::ScopeMismatch)
        }
    }
}

pub(crate) fn sort_ranked(v: &mut [(PairKey, f64)]) {
    v.sort_unstable_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
}

/// `b_dc` for subinterval `i`.
pub fn expected_count(
    tables: &CountTables,
    i: usize,
    d: DrugId,
    c: ConditionId,
    model: ExposureModel,
) -> Result<f64> {
    let (exposure, total) = exposure_of(tables, i, model);
    if total == 0 {
        return Err(Error::NoExposure {
            subinterval: i,
            model: model.name(),
        });
    }
    let n_c = tables.cond_count(i, c);
    Ok(exposure.get(&d).copied().unwrap_or(0) as f64 / total as f64 * n_c as f64)
}

fn exposure_of(
    tables: &CountTables,
    i: usize,
    model: ExposureModel,
) -> (&std::collections::BTreeMap<DrugId, u64>, u64) {
    match model {
        ExposureModel::Occurrence => (&tables.drug_counts[i], tables.drug_totals[i]),
        ExposureModel::Duration => (&tables.drug_durations[i], tables.duration_totals[i]),
    }
}

/// Ratings `r^(i)` for every in-scope pair that was observed or expected in
/// subinterval `i`. A subinterval with no exposure at all yields an empty
/// matrix.
pub fn rate(
    tables: &CountTables,
    config: &RatingConfig,
    i: usize,
    scope: &Scope,
) -> Result<RatingMatrix> {
    config.validate()?;
    if i >= tables.m {
        return Err(Error::Config(format!(
            "subinterval {i} out of range for m = {}",
            tables.m
        )));
    }
    let mut out = RatingMatrix::new(MatrixTag::Subinterval(i), scope.clone());
    let (exposure, total) = exposure_of(tables, i, config.exposure);
    if total == 0 {
        return Ok(out);
    }
    let total = total as f64;
    let conds: Vec<(ConditionId, f64)> = tables.cond_counts[i]
        .iter()
        .filter(|(c, &n)| n > 0 && scope.conditions.contains(c))
        .map(|(&c, &n)| (c, n as f64))
        .collect();

    for (&d, &e) in exposure {
        if e == 0 || !scope.drugs.contains(&d) {
            continue;
        }
        let share = e as f64 / total;
        for &(c, n_c) in &conds {
            let b = share * n_c;
            let n = tables.pair(i, (d, c));
            out.scores.insert((d, c), config.score(n, b));
        }
    }
    // observed pairs whose condition count fell into another subinterval
    for (&key, &n) in &tables.pair_counts[i] {
        if n > 0.0 && scope.contains(&key) && !out.scores.contains_key(&key) {
            let b = match exposure.get(&key.0) {
                Some(&e) if e > 0 => e as f64 / total * tables.cond_count(i, key.1) as f64,
                _ => 0.0,
            };
            out.scores.insert(key, config.score(n, b));
        }
    }
    Ok(out)
}

/// Ratings for every subinterval `0..tables.m`.
pub fn rate_all(
    tables: &CountTables,
    config: &RatingConfig,
    scope: &Scope,
) -> Result<Vec<RatingMatrix>> {
    (0..tables.m).map(|i| rate(tables, config, i, scope)).collect()
}

/// Prefix means `s^(y) = (1/y) * sum_{i<=y} r^(i)`, absent keys counted as 0.
pub fn cumulate(ratings: &[RatingMatrix]) -> Result<Vec<RatingMatrix>> {
    let Some(first) = ratings.first() else {
        return Ok(Vec::new());
    };
    let mut sums: HashMap<PairKey, f64> = HashMap::new();
    let mut out = Vec::with_capacity(ratings.len());
    for (idx, r) in ratings.iter().enumerate() {
        r.same_scope(first)?;
        for (&k, &v) in &r.scores {
            *sums.entry(k).or_insert(0.0) += v;
        }
        let y = (idx + 1) as f64;
        out.push(RatingMatrix {
            scores: sums.iter().map(|(&k, &s)| (k, s / y)).collect(),
            tag: MatrixTag::Cumulative(idx + 1),
            scope: first.scope.clone(),
        });
    }
    Ok(out)
}

/// Keys appearing in any of the matrices.
pub(crate) fn key_union<'a>(ms: impl IntoIterator<Item = &'a RatingMatrix>) -> HashSet<PairKey> {
    let mut keys = HashSet::new();
    for m in ms {
        keys.extend(m.scores.keys().copied());
    }
    keys
}

#[cfg(test)]
mod tests {
    use super::*;

    const D: DrugId = DrugId(1);
    const C: ConditionId = ConditionId(1);

    fn scope() -> Scope {
        Scope {
            drugs: [DrugId(1), DrugId(2)].into(),
            conditions: [ConditionId(1), ConditionId(2)].into(),
        }
    }

    /// One subinterval with drug 1 holding `n_d` of `total` era starts and
    /// `h_d` of `h_total` days.
    fn tables(n_dc: f64, n_d: u64, total: u64, n_c: u64) -> CountTables {
        let mut t = CountTables::empty(1);
        if n_dc > 0.0 {
            t.pair_counts[0].insert((D, C), n_dc);
        }
        t.drug_counts[0].insert(D, n_d);
        t.drug_counts[0].insert(DrugId(2), total - n_d);
        t.drug_totals[0] = total;
        t.drug_durations[0].insert(D, 30);
        t.drug_durations[0].insert(DrugId(2), 270);
        t.duration_totals[0] = 300;
        if n_c > 0 {
            t.cond_counts[0].insert(C, n_c);
        }
        t
    }

    #[test]
    fn expected_count_occurrence() {
        let t = tables(0.0, 2, 10, 5);
        let b = expected_count(&t, 0, D, C, ExposureModel::Occurrence).unwrap();
        assert_eq!(b, 1.0);
    }

    #[test]
    fn expected_count_duration() {
        let t = tables(0.0, 2, 10, 20);
        let b = expected_count(&t, 0, D, C, ExposureModel::Duration).unwrap();
        assert!((b - 2.0).abs() < 1e-15);
    }

    #[test]
    fn expected_count_zero_condition() {
        let t = tables(0.0, 2, 10, 0);
        assert_eq!(
            expected_count(&t, 0, D, C, ExposureModel::Occurrence).unwrap(),
            0.0
        );
    }

    #[test]
    fn expected_count_without_exposure_errors() {
        let t = CountTables::empty(1);
        assert!(matches!(
            expected_count(&t, 0, D, C, ExposureModel::Duration),
            Err(Error::NoExposure {
                subinterval: 0,
                model: "duration"
            })
        ));
    }

    fn cfg(alpha: f64) -> RatingConfig {
        RatingConfig {
            alpha,
            ..RatingConfig::new(ExposureModel::Occurrence)
        }
    }

    #[test]
    fn score_examples() {
        let c = cfg(0.5);
        assert_eq!(c.score(1.0, 1.0), 0.0);
        assert!((c.score(3.0, 1.0) - 0.847_297_860_387_203_8).abs() < 1e-12);
        assert!((c.score(0.0, 3.0) + 1.945_910_149_055_313_3).abs() < 1e-12);
    }

    #[test]
    fn rate_matches_score_of_counts() {
        // n_d = 1 of 1 drug start -> b = n_c = 1
        let mut t = tables(3.0, 1, 1, 1);
        t.drug_counts[0].remove(&DrugId(2));
        let r = rate(&t, &cfg(0.5), 0, &scope()).unwrap();
        assert!((r.get(&(D, C)).unwrap() - (3.5f64 / 1.5).ln()).abs() < 1e-15);
        assert_eq!(r.tag, MatrixTag::Subinterval(0));
    }

    #[test]
    fn rate_scores_expected_but_unobserved_pairs() {
        let t = tables(0.0, 2, 10, 5);
        let r = rate(&t, &cfg(0.5), 0, &scope()).unwrap();
        // b = 1 for drug 1 and 4 for drug 2
        assert!((r.get(&(D, C)).unwrap() - (0.5f64 / 1.5).ln()).abs() < 1e-15);
        assert!((r.get(&(DrugId(2), C)).unwrap() - (0.5f64 / 4.5).ln()).abs() < 1e-15);
        assert_eq!(r.len(), 2);
    }

    #[test]
    fn observed_pair_without_expectation_is_finite() {
        let mut t = tables(2.0, 2, 10, 0);
        t.cond_counts[0].clear();
        let r = rate(&t, &cfg(0.5), 0, &scope()).unwrap();
        assert_eq!(r.len(), 1);
        assert!((r.get(&(D, C)).unwrap() - 5f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn rate_respects_scope() {
        let t = tables(0.0, 2, 10, 5);
        let narrow = Scope {
            drugs: [DrugId(2)].into(),
            conditions: [C].into(),
        };
        let r = rate(&t, &cfg(0.5), 0, &narrow).unwrap();
        assert_eq!(r.scores.keys().copied().collect::<Vec<_>>(), [(DrugId(2), C)]);
    }

    #[test]
    fn rate_without_exposure_is_empty() {
        let r = rate(&CountTables::empty(2), &cfg(0.3), 1, &scope()).unwrap();
        assert!(r.is_empty());
    }

    #[test]
    fn power_transform() {
        let c = RatingConfig {
            transform: Transform::Power(0.5),
            ..cfg(0.5)
        };
        assert!((c.score(3.5, 0.5) - 2.0).abs() < 1e-15);
        assert!(RatingConfig {
            transform: Transform::Power(0.0),
            ..c
        }
        .validate()
        .is_err());
        assert!(cfg(0.0).validate().is_err());
    }

    fn single(tag: usize, entries: &[(u32, u32, f64)]) -> RatingMatrix {
        let mut m = RatingMatrix::new(MatrixTag::Subinterval(tag), scope());
        for &(d, c, v) in entries {
            m.scores.insert((DrugId(d), ConditionId(c)), v);
        }
        m
    }

    #[test]
    fn cumulate_examples() {
        let s = cumulate(&[single(0, &[(1, 1, 2.0)]), single(1, &[(1, 1, 4.0)])]).unwrap();
        assert_eq!(s[0].get(&(D, C)), Some(2.0));
        assert_eq!(s[1].get(&(D, C)), Some(3.0));
        assert_eq!(s[1].tag, MatrixTag::Cumulative(2));

        let one = single(0, &[(1, 1, 2.5), (2, 2, -1.0)]);
        let s = cumulate(std::slice::from_ref(&one)).unwrap();
        assert_eq!(s[0].scores, one.scores);

        let s = cumulate(&[single(0, &[]), single(1, &[]), single(2, &[(1, 1, 6.0)])]).unwrap();
        assert_eq!(s[2].get(&(D, C)), Some(2.0));
        assert!(s[1].is_empty());
    }

    #[test]
    fn cumulate_rejects_mixed_scopes() {
        let mut b = single(1, &[]);
        b.scope.drugs.insert(DrugId(9));
        assert!(matches!(
            cumulate(&[single(0, &[]), b]),
            Err(Error::ScopeMismatch)
        ));
    }

    #[test]
    fn ranked_breaks_ties_by_key() {
        let m = single(0, &[(2, 1, 1.0), (1, 2, 1.0), (1, 1, 0.5), (2, 2, 3.0)]);
        let keys: Vec<_> = m.ranked().into_iter().map(|(k, _)| (k.0 .0, k.1 .0)).collect();
        assert_eq!(keys, [(2, 2), (1, 2), (2, 1), (1, 1)]);
    }
}
