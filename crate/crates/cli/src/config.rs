//! Pipeline configuration: a sectioned `key = value` (TOML) file plus
//! `section.key=value` command-line overrides, which win.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use signalmine::{
    BagConfig, EnsembleConfig, ExposureModel, GenConfig, RatingConfig, TimeAxis, Transform,
    WeightKernel,
};
use toml::{Table, Value};

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsSection {
    pub cohort_dir: PathBuf,
    pub output_dir: PathBuf,
    /// Defaults to `truth.csv` inside `cohort_dir`.
    pub truth: Option<PathBuf>,
}

impl Default for PathsSection {
    fn default() -> Self {
        Self {
            cohort_dir: "cohort".into(),
            output_dir: "out".into(),
            truth: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSection {
    /// Thread count; 0 uses every core. Never changes any output byte.
    pub workers: usize,
    /// Length of the time axis in 365-day years.
    pub years: u32,
    /// Subinterval count; 0 means one per year.
    pub m: usize,
    /// Window for the un-bagged `count`/`rate` commands.
    pub delta: u32,
    pub first_era_only: bool,
    /// Emit every scope cell instead of sparse rows.
    pub dense: bool,
    pub drug_min: Option<u32>,
    pub drug_max: Option<u32>,
}

impl Default for RunSection {
    fn default() -> Self {
        Self {
            workers: 0,
            years: 10,
            m: 0,
            delta: 50,
            first_era_only: false,
            dense: false,
            drug_min: None,
            drug_max: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KernelSection {
    pub enabled: bool,
    pub w0: f64,
    pub peak_start_day: u32,
    pub peak_end_day: u32,
}

impl Default for KernelSection {
    fn default() -> Self {
        Self {
            enabled: false,
            w0: 0.2,
            peak_start_day: 6,
            peak_end_day: 10,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TransformName {
    Log,
    Power,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EstimatorSection {
    pub alpha: f64,
    pub transform: TransformName,
    /// Exponent when `transform = "power"`.
    pub power: f64,
}

impl Default for EstimatorSection {
    fn default() -> Self {
        Self {
            alpha: 0.3,
            transform: TransformName::Log,
            power: 0.5,
        }
    }
}

impl EstimatorSection {
    fn rating(&self, exposure: ExposureModel) -> RatingConfig {
        RatingConfig {
            alpha: self.alpha,
            transform: match self.transform {
                TransformName::Log => Transform::Log,
                TransformName::Power => Transform::Power(self.power),
            },
            exposure,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineSection {
    /// Regenerate the synthetic cohort before the analysis chain.
    pub generate: bool,
}

impl Default for PipelineSection {
    fn default() -> Self {
        Self { generate: true }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluateSection {
    /// Submission files to score; empty scores every known output present.
    pub inputs: Vec<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReportSection {
    pub top_k: usize,
    /// Submission files to report on; empty reports every known output present.
    pub inputs: Vec<PathBuf>,
}

impl Default for ReportSection {
    fn default() -> Self {
        Self {
            top_k: 16,
            inputs: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub paths: PathsSection,
    pub run: RunSection,
    pub kernel: KernelSection,
    pub gen: GenConfig,
    pub dpa1: EstimatorSection,
    pub dpa2: EstimatorSection,
    pub bag: BagConfig,
    pub ensemble: EnsembleConfig,
    pub pipeline: PipelineSection,
    pub evaluate: EvaluateSection,
    pub report: ReportSection,
}

fn parse_override(raw: &str) -> Result<(Vec<String>, Value), CliError> {
    let (key, value) = raw
        .split_once('=')
        .ok_or_else(|| CliError::usage(format!("override `{raw}` is not key=value")))?;
    let path: Vec<String> = key.trim().split('.').map(str::to_owned).collect();
    if path.iter().any(String::is_empty) {
        return Err(CliError::usage(format!("bad override key `{key}`")));
    }
    let value = value.trim();
    // bare words become strings so paths need no quoting
    let parsed = toml::from_str::<Table>(&format!("v = {value}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(value.to_owned()));
    Ok((path, parsed))
}

fn apply_override(table: &mut Table, path: &[String], value: Value) -> Result<(), CliError> {
    let (last, parents) = path.split_last().expect("non-empty path");
    let mut cur = table;
    for p in parents {
        cur = cur
            .entry(p.clone())
            .or_insert_with(|| Value::Table(Table::new()))
            .as_table_mut()
            .ok_or_else(|| CliError::config(format!("override path `{}` crosses a value", path.join("."))))?;
    }
    cur.insert(last.clone(), value);
    Ok(())
}

impl PipelineConfig {
    /// Reads `path` (if any), applies overrides in order, and validates.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self, CliError> {
        let mut table = match path {
            Some(p) => {
                let text = fs::read_to_string(p)
                    .map_err(|e| CliError::config(format!("{}: {e}", p.display())))?;
                toml::from_str::<Table>(&text)
                    .map_err(|e| CliError::config(format!("{}: {e}", p.display())))?
            }
            None => Table::new(),
        };
        for raw in overrides {
            let (key, value) = parse_override(raw)?;
            apply_override(&mut table, &key, value)?;
        }
        let mut config: PipelineConfig = Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| CliError::config(e.to_string()))?;
        config.resolve()?;
        Ok(config)
    }

    fn resolve(&mut self) -> Result<(), CliError> {
        if self.run.years == 0 {
            return Err(CliError::config("run.years must be >= 1"));
        }
        if self.run.m == 0 {
            self.run.m = self.run.years as usize;
        }
        if self.gen.years != self.run.years {
            if self.gen.years != GenConfig::default().years {
                return Err(CliError::config(format!(
                    "gen.years {} disagrees with run.years {}",
                    self.gen.years, self.run.years
                )));
            }
            self.gen.years = self.run.years;
        }
        if self.paths.cohort_dir == self.paths.output_dir {
            return Err(CliError::config("paths.cohort_dir and paths.output_dir must differ"));
        }
        if let (Some(lo), Some(hi)) = (self.run.drug_min, self.run.drug_max) {
            if lo > hi {
                return Err(CliError::config(format!("run.drug_min {lo} > run.drug_max {hi}")));
            }
        }
        self.gen.validate()?;
        self.bag.validate()?;
        self.ensemble.validate()?;
        self.dpa1().validate()?;
        self.dpa2().validate()?;
        self.kernel_for(self.run.delta)?;
        self.kernel_for(self.bag.delta_min)?;
        Ok(())
    }

    pub fn time_axis(&self) -> TimeAxis {
        TimeAxis::years(self.run.years)
    }

    pub fn dpa1(&self) -> RatingConfig {
        self.dpa1.rating(ExposureModel::Occurrence)
    }

    pub fn dpa2(&self) -> RatingConfig {
        self.dpa2.rating(ExposureModel::Duration)
    }

    pub fn drug_range(&self) -> Option<(u32, u32)> {
        match (self.run.drug_min, self.run.drug_max) {
            (None, None) => None,
            (lo, hi) => Some((lo.unwrap_or(0), hi.unwrap_or(u32::MAX))),
        }
    }

    pub fn kernel_for(&self, delta: u32) -> Result<Option<WeightKernel>, CliError> {
        if !self.kernel.enabled {
            return Ok(None);
        }
        let k = &self.kernel;
        Ok(Some(WeightKernel::new(k.w0, k.peak_start_day, k.peak_end_day, delta)?))
    }

    pub fn truth_path(&self) -> PathBuf {
        self.paths
            .truth
            .clone()
            .unwrap_or_else(|| self.paths.cohort_dir.join(signalmine::io::TRUTH_FILE))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_resolve() {
        let c = PipelineConfig::load(None, &[]).unwrap();
        assert_eq!(c.run.m, 10);
        assert_eq!(c.bag.k, 100);
        assert_eq!(c.bag.inclusion_prob, 0.65);
        assert_eq!((c.bag.delta_min, c.bag.delta_max), (40, 60));
        assert_eq!(c.ensemble.tau, 0.3);
        assert_eq!(c.dpa1().alpha, 0.3);
        assert_eq!(c.dpa2().exposure, ExposureModel::Duration);
    }

    #[test]
    fn file_and_overrides() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.toml");
        fs::write(
            &path,
            "[gen]\nn_patients = 200\nseed = 4\n\n[bag]\nk = 5\n\n[dpa2]\ntransform = \"power\"\n",
        )
        .unwrap();
        let c = PipelineConfig::load(
            Some(&path),
            &["bag.k=7".into(), "paths.output_dir=/tmp/x y".into(), "ensemble.tau=0".into()],
        )
        .unwrap();
        assert_eq!(c.gen.n_patients, 200);
        assert_eq!(c.bag.k, 7);
        assert_eq!(c.paths.output_dir, PathBuf::from("/tmp/x y"));
        assert_eq!(c.ensemble.tau, 0.0);
        assert_eq!(c.dpa2().transform, Transform::Power(0.5));

        let round = PipelineConfig::load(None, &[]).unwrap();
        let text = round.to_toml();
        let back: PipelineConfig = toml::from_str(&text).unwrap();
        assert_eq!(back, round);
    }

    #[test]
    fn rejects_bad_values() {
        for bad in [
            "bag.inclusion_prob=1.5",
            "ensemble.tau=2",
            "dpa1.alpha=0",
            "gen.effect_prob=0",
            "paths.output_dir=cohort",
            "bag.unknown=1",
            "kernel.enabled=true",
        ] {
            let overrides = if bad == "kernel.enabled=true" {
                vec![bad.to_string(), "kernel.peak_end_day=45".to_string()]
            } else {
                vec![bad.to_string()]
            };
            assert!(PipelineConfig::load(None, &overrides).is_err(), "{bad}");
        }
        assert!(PipelineConfig::load(None, &["noequals".into()]).is_err());
    }
}
