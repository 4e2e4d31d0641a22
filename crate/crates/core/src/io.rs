//! CSV formats.
//!
//! | file              | columns                                   |
//! |-------------------|-------------------------------------------|
//! | `patients.csv`    | `patient_id,obs_start,obs_end,age_years,sex` |
//! | `drug_eras.csv`   | `patient_id,drug_id,start_day,end_day`    |
//! | `conditions.csv`  | `patient_id,condition_id,start_day`       |
//! | `truth.csv`       | `drug_id,condition_id,label`              |
//! | matrix export     | `drug_id,condition_id,score`              |
//! | submission        | `year,drug_id,condition_id,score`         |
//!
//! All files carry a header row and use `,` with LF line endings.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Deserialize;

use crate::counting::PairKey;
use crate::error::{Error, Result};
use crate::events::{
    validate, Cohort, ConditionId, ConditionOccurrence, Day, DrugEra, DrugId, PatientRecord, Sex,
    TimeAxis,
};
use crate::rating::{MatrixTag, RatingMatrix, Scope};
use crate::synth::GroundTruth;

pub const PATIENTS_FILE: &str = "patients.csv";
pub const DRUG_ERAS_FILE: &str = "drug_eras.csv";
pub const CONDITIONS_FILE: &str = "conditions.csv";
pub const TRUTH_FILE: &str = "truth.csv";

const PATIENT_HEADER: [&str; 5] = ["patient_id", "obs_start", "obs_end", "age_years", "sex"];
const ERA_HEADER: [&str; 4] = ["patient_id", "drug_id", "start_day", "end_day"];
const CONDITION_HEADER: [&str; 3] = ["patient_id", "condition_id", "start_day"];
const TRUTH_HEADER: [&str; 3] = ["drug_id", "condition_id", "label"];
const MATRIX_HEADER: [&str; 3] = ["drug_id", "condition_id", "score"];
const SUBMISSION_HEADER: [&str; 4] = ["year", "drug_id", "condition_id", "score"];

#[derive(Deserialize)]
struct PatientRow {
    patient_id: u64,
    obs_start: Day,
    obs_end: Day,
    age_years: u32,
    sex: Sex,
}

#[derive(Deserialize)]
struct EraRow {
    patient_id: u64,
    drug_id: DrugId,
    start_day: Day,
    end_day: Day,
}

#[derive(Deserialize)]
struct ConditionRow {
    patient_id: u64,
    condition_id: ConditionId,
    start_day: Day,
}

#[derive(Deserialize)]
struct TruthRow {
    drug_id: DrugId,
    condition_id: ConditionId,
    label: u8,
}

#[derive(Deserialize)]
struct SubmissionRow {
    year: usize,
    drug_id: DrugId,
    condition_id: ConditionId,
    score: f64,
}

fn reader(path: &Path) -> Result<csv::Reader<File>> {
    csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| Error::csv(path, e))
}

/// Deserializes every row, collecting per-row problems instead of stopping
/// at the first one. Row numbers are 1-based over data rows.
fn read_rows<T: DeserializeOwned>(
    path: &Path,
    header: &[&str],
    problems: &mut Vec<String>,
) -> Result<Vec<(usize, T)>> {
    let mut rdr = reader(path)?;
    let found = rdr.headers().map_err(|e| Error::csv(path, e))?.clone();
    if found.iter().collect::<Vec<_>>() != header {
        problems.push(format!(
            "{}: header {:?} does not match expected {:?}",
            path.display(),
            found.iter().collect::<Vec<_>>(),
            header
        ));
        return Ok(Vec::new());
    }
    let mut rows = Vec::new();
    for (i, rec) in rdr.deserialize::<T>().enumerate() {
        match rec {
            Ok(r) => rows.push((i + 1, r)),
            Err(e) => problems.push(format!("{} row {}: {e}", path.display(), i + 1)),
        }
    }
    Ok(rows)
}

/// Loads and checks a cohort from its three CSV files.
pub fn load_cohort(
    patients_path: &Path,
    drug_eras_path: &Path,
    conditions_path: &Path,
    axis: TimeAxis,
) -> Result<Cohort> {
    let mut problems = Vec::new();
    let patient_rows = read_rows::<PatientRow>(patients_path, &PATIENT_HEADER, &mut problems)?;
    let era_rows = read_rows::<EraRow>(drug_eras_path, &ERA_HEADER, &mut problems)?;
    let cond_rows = read_rows::<ConditionRow>(conditions_path, &CONDITION_HEADER, &mut problems)?;

    let mut patients: Vec<PatientRecord> = Vec::with_capacity(patient_rows.len());
    let mut index: HashMap<u64, usize> = HashMap::with_capacity(patient_rows.len());
    for (row, r) in patient_rows {
        let at = || format!("{} row {row}", patients_path.display());
        if index.contains_key(&r.patient_id) {
            problems.push(format!("{}: duplicate patient_id {}", at(), r.patient_id));
            continue;
        }
        if r.obs_start > r.obs_end {
            problems.push(format!(
                "{}: obs_start {} after obs_end {}",
                at(),
                r.obs_start,
                r.obs_end
            ));
        }
        if !axis.contains(r.obs_start) || !axis.contains(r.obs_end) {
            problems.push(format!(
                "{}: observation period {}..{} outside horizon 0..{}",
                at(),
                r.obs_start,
                r.obs_end,
                axis.horizon_days
            ));
        }
        index.insert(r.patient_id, patients.len());
        patients.push(PatientRecord {
            age_years: r.age_years,
            sex: r.sex,
            ..PatientRecord::new(r.patient_id, r.obs_start, r.obs_end)
        });
    }

    for (row, r) in era_rows {
        let at = || format!("{} row {row}", drug_eras_path.display());
        let Some(&i) = index.get(&r.patient_id) else {
            problems.push(format!("{}: unknown patient_id {}", at(), r.patient_id));
            continue;
        };
        let p = &mut patients[i];
        if r.start_day > r.end_day {
            problems.push(format!(
                "{}: era start_day {} after end_day {}",
                at(),
                r.start_day,
                r.end_day
            ));
        } else if !p.observes(r.start_day) || !p.observes(r.end_day) {
            problems.push(format!(
                "{}: era {}..{} outside observation period {}..{}",
                at(),
                r.start_day,
                r.end_day,
                p.obs_start,
                p.obs_end
            ));
        }
        p.drug_eras.push(DrugEra {
            drug_id: r.drug_id,
            start_day: r.start_day,
            end_day: r.end_day,
        });
    }

    for (row, r) in cond_rows {
        let at = || format!("{} row {row}", conditions_path.display());
        let Some(&i) = index.get(&r.patient_id) else {
            problems.push(format!("{}: unknown patient_id {}", at(), r.patient_id));
            continue;
        };
        let p = &mut patients[i];
        if !p.observes(r.start_day) {
            problems.push(format!(
                "{}: condition at day {} outside observation period {}..{}",
                at(),
                r.start_day,
                p.obs_start,
                p.obs_end
            ));
        }
        p.conditions.push(ConditionOccurrence {
            condition_id: r.condition_id,
            start_day: r.start_day,
        });
    }

    if !problems.is_empty() {
        return Err(Error::InvalidData(problems));
    }
    let cohort = Cohort::from_patients(patients, axis);
    let report = validate(&cohort);
    if !report.is_valid() {
        return Err(Error::InvalidData(
            report.violations.iter().map(ToString::to_string).collect(),
        ));
    }
    Ok(cohort)
}

/// Loads `patients.csv`, `drug_eras.csv` and `conditions.csv` from `dir`.
pub fn load_cohort_dir(dir: &Path, axis: TimeAxis) -> Result<Cohort> {
    load_cohort(
        &dir.join(PATIENTS_FILE),
        &dir.join(DRUG_ERAS_FILE),
        &dir.join(CONDITIONS_FILE),
        axis,
    )
}

pub fn load_truth(path: &Path) -> Result<GroundTruth> {
    let mut problems = Vec::new();
    let rows = read_rows::<TruthRow>(path, &TRUTH_HEADER, &mut problems)?;
    let (mut pos, mut neg) = (BTreeSet::new(), BTreeSet::new());
    for (row, r) in rows {
        match r.label {
            1 => pos.insert((r.drug_id, r.condition_id)),
            0 => neg.insert((r.drug_id, r.condition_id)),
            other => {
                problems.push(format!("{} row {row}: label {other} not 0 or 1", path.display()));
                false
            }
        };
    }
    if !problems.is_empty() {
        return Err(Error::InvalidData(problems));
    }
    GroundTruth::new(pos, neg)
}

struct Sink {
    path: PathBuf,
    out: BufWriter<File>,
}

impl Sink {
    fn create(path: &Path, header: &[&str]) -> Result<Self> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut sink = Self {
            path: path.to_path_buf(),
            out: BufWriter::new(file),
        };
        sink.line(format_args!("{}", header.join(",")))?;
        Ok(sink)
    }

    fn line(&mut self, args: std::fmt::Arguments<'_>) -> Result<()> {
        self.out
            .write_fmt(args)
            .and_then(|_| self.out.write_all(b"\n"))
            .map_err(|e| Error::io(&self.path, e))
    }

    fn finish(mut self) -> Result<()> {
        self.out.flush().map_err(|e| Error::io(&self.path, e))
    }
}

fn sex_code(s: Sex) -> &'static str {
    match s {
        Sex::F => "F",
        Sex::M => "M",
        Sex::Unknown => "U",
    }
}

/// Writes the three cohort files plus `truth.csv` into `out_dir`.
pub fn write_cohort(cohort: &Cohort, truth: &GroundTruth, out_dir: &Path) -> Result<()> {
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut patients = Sink::create(&out_dir.join(PATIENTS_FILE), &PATIENT_HEADER)?;
    let mut eras = Sink::create(&out_dir.join(DRUG_ERAS_FILE), &ERA_HEADER)?;
    let mut conds = Sink::create(&out_dir.join(CONDITIONS_FILE), &CONDITION_HEADER)?;
    for p in &cohort.patients {
        patients.line(format_args!(
            "{},{},{},{},{}",
            p.patient_id,
            p.obs_start,
            p.obs_end,
            p.age_years,
            sex_code(p.sex)
        ))?;
        for e in &p.drug_eras {
            eras.line(format_args!(
                "{},{},{},{}",
                p.patient_id, e.drug_id, e.start_day, e.end_day
            ))?;
        }
        for c in &p.conditions {
            conds.line(format_args!(
                "{},{},{}",
                p.patient_id, c.condition_id, c.start_day
            ))?;
        }
    }
    patients.finish()?;
    eras.finish()?;
    conds.finish()?;
    write_truth(truth, &out_dir.join(TRUTH_FILE))
}

pub fn write_truth(truth: &GroundTruth, path: &Path) -> Result<()> {
    let mut sink = Sink::create(path, &TRUTH_HEADER)?;
    for (label, set) in [(1, &truth.positives), (0, &truth.negatives)] {
        for (d, c) in set {
            sink.line(format_args!("{d},{c},{label}"))?;
        }
    }
    sink.finish()
}

/// Single-matrix export, descending score with ties by key. Scores use the
/// shortest representation that round-trips.
pub fn write_matrix(m: &RatingMatrix, path: &Path) -> Result<()> {
    let mut sink = Sink::create(path, &MATRIX_HEADER)?;
    for ((d, c), s) in m.ranked() {
        sink.line(format_args!("{d},{c},{s}"))?;
    }
    sink.finish()
}

pub fn read_matrix(path: &Path, tag: MatrixTag, scope: Scope) -> Result<RatingMatrix> {
    #[derive(Deserialize)]
    struct Row {
        drug_id: DrugId,
        condition_id: ConditionId,
        score: f64,
    }
    let mut problems = Vec::new();
    let rows = read_rows::<Row>(path, &MATRIX_HEADER, &mut problems)?;
    if !problems.is_empty() {
        return Err(Error::InvalidData(problems));
    }
    let mut m = RatingMatrix::new(tag, scope);
    m.scores = rows
        .into_iter()
        .map(|(_, r)| ((r.drug_id, r.condition_id), r.score))
        .collect();
    Ok(m)
}

/// Writes yearly matrices as `year,drug_id,condition_id,score` rows (years
/// one-based, scores with 6 decimals), sorted by year, descending score,
/// then key. With `dense`, every cell of the scope is emitted and absent
/// pairs score 0.
pub fn write_submission(years: &[RatingMatrix], dense: bool, path: &Path) -> Result<u64> {
    let mut sink = Sink::create(path, &SUBMISSION_HEADER)?;
    let mut rows = 0u64;
    for (y, m) in years.iter().enumerate() {
        let entries: Vec<(PairKey, f64)> = if dense {
            m.scope
                .pairs()
                .map(|k| (k, m.get(&k).unwrap_or(0.0)))
                .collect()
        } else {
            m.scores.iter().map(|(&k, &s)| (k, s)).collect()
        };
        // order by the written value so ties after rounding fall back to the key
        let mut entries: Vec<(PairKey, f64, String)> = entries
            .into_iter()
            .map(|(k, s)| {
                let mut text = format!("{s:.6}");
                let shown: f64 = text.parse().expect("formatted float parses");
                if shown == 0.0 {
                    text = format!("{:.6}", 0.0);
                }
                (k, shown, text)
            })
            .collect();
        entries.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        for ((d, c), _, text) in entries {
            sink.line(format_args!("{},{d},{c},{text}", y + 1))?;
            rows += 1;
        }
    }
    sink.finish()?;
    Ok(rows)
}

/// Reads a submission file back into `m` cumulative matrices. Without a
/// `scope`, the scope is every drug and condition id the file mentions.
/// Years with no rows come back empty.
pub fn read_submission(path: &Path, m: usize, scope: Option<&Scope>) -> Result<Vec<RatingMatrix>> {
    let mut problems = Vec::new();
    let rows = read_rows::<SubmissionRow>(path, &SUBMISSION_HEADER, &mut problems)?;
    let scope = match scope {
        Some(s) => s.clone(),
        None => Scope {
            drugs: rows.iter().map(|(_, r)| r.drug_id).collect(),
            conditions: rows.iter().map(|(_, r)| r.condition_id).collect(),
        },
    };
    let mut by_year: BTreeMap<usize, Vec<(PairKey, f64)>> = BTreeMap::new();
    for (row, r) in rows {
        if r.year == 0 || r.year > m {
            problems.push(format!(
                "{} row {row}: year {} outside 1..={m}",
                path.display(),
                r.year
            ));
            continue;
        }
        let key = (r.drug_id, r.condition_id);
        if !scope.contains(&key) {
            problems.push(format!(
                "{} row {row}: pair ({}, {}) outside scope",
                path.display(),
                key.0,
                key.1
            ));
            continue;
        }
        by_year.entry(r.year).or_default().push((key, r.score));
    }
    if !problems.is_empty() {
        return Err(Error::InvalidData(problems));
    }
    Ok((1..=m)
        .map(|y| {
            let mut mat = RatingMatrix::new(MatrixTag::Cumulative(y), scope.clone());
            mat.scores = by_year.remove(&y).unwrap_or_default().into_iter().collect();
            mat
        })
        .collect())
}

/// Writes a scope as `kind,id` rows (`drug` or `condition`).
pub fn write_scope(scope: &Scope, path: &Path) -> Result<()> {
    let mut sink = Sink::create(path, &["kind", "id"])?;
    for d in &scope.drugs {
        sink.line(format_args!("drug,{d}"))?;
    }
    for c in &scope.conditions {
        sink.line(format_args!("condition,{c}"))?;
    }
    sink.finish()
}

pub fn read_scope(path: &Path) -> Result<Scope> {
    #[derive(Deserialize)]
    struct Row {
        kind: String,
        id: u32,
    }
    let mut problems = Vec::new();
    let rows = read_rows::<Row>(path, &["kind", "id"], &mut problems)?;
    let mut scope = Scope::default();
    for (row, r) in rows {
        match r.kind.as_str() {
            "drug" => {
                scope.drugs.insert(DrugId(r.id));
            }
            "condition" => {
                scope.conditions.insert(ConditionId(r.id));
            }
            other => problems.push(format!("{} row {row}: unknown kind {other}", path.display())),
        }
    }
    if !problems.is_empty() {
        return Err(Error::InvalidData(problems));
    }
    Ok(scope)
}
