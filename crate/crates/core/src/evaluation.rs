//! Average precision of ranked pair lists against ground truth.

use crate::counting::PairKey;
use crate::error::{Error, Result};
use crate::rating::{sort_ranked, RatingMatrix};
use crate::synth::GroundTruth;

/// Pairs by descending score, ties by ascending key.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RankedList {
    entries: Vec<(PairKey, f64)>,
}

impl RankedList {
    pub fn from_entries(mut entries: Vec<(PairKey, f64)>) -> Self {
        sort_ranked(&mut entries);
        Self { entries }
    }

    pub fn from_matrix(m: &RatingMatrix) -> Self {
        Self {
            entries: m.ranked(),
        }
    }

    pub fn entries(&self) -> &[(PairKey, f64)] {
        &self.entries
    }

    pub fn keys(&self) -> impl Iterator<Item = PairKey> + '_ {
        self.entries.iter().map(|(k, _)| *k)
    }
}

/// AP over the list; positives that never appear contribute zero.
pub fn average_precision(ranked: &RankedList, truth: &GroundTruth) -> Result<f64> {
    if truth.positives.is_empty() {
        return Err(Error::NoPositives);
    }
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (rank, key) in ranked.keys().enumerate() {
        if truth.positives.contains(&key) {
            hits += 1;
            sum += hits as f64 / (rank + 1) as f64;
        }
    }
    Ok(sum / truth.positives.len() as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct YearlyMap {
    pub per_year: Vec<f64>,
    pub mean: f64,
}

/// AP of each year's matrix and their arithmetic mean.
pub fn map_by_year(ratings: &[RatingMatrix], truth: &GroundTruth) -> Result<YearlyMap> {
    if ratings.is_empty() {
        return Err(Error::Config("no yearly matrices to evaluate".into()));
    }
    let per_year = ratings
        .iter()
        .map(|m| average_precision(&RankedList::from_matrix(m), truth))
        .collect::<Result<Vec<_>>>()?;
    let mean = per_year.iter().sum::<f64>() / per_year.len() as f64;
    Ok(YearlyMap { per_year, mean })
}
