//! Subcommands. Each one reads its inputs from disk and writes its outputs
//! to `paths.output_dir`, so any step can be rerun on its own.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use log::info;
use signalmine::counting::count_all;
use signalmine::ensemble::BagPlan;
use signalmine::io;
use signalmine::rating::rate_all;
use signalmine::{
    bag_many, cumulate, fuse, generate, map_by_year, Cohort, CountParams, CountTables,
    RatingMatrix, Scope,
};

use crate::config::PipelineConfig;
use crate::error::{CliError, CliResult};

pub const RESOLVED_CONFIG_FILE: &str = "resolved_config.toml";
pub const COUNTS_FILE: &str = "counts.json";
pub const SCOPE_FILE: &str = "scope.csv";
pub const S_DPA1_FILE: &str = "s_dpa1.csv";
pub const S_DPA2_FILE: &str = "s_dpa2.csv";
pub const Z_DPA1_FILE: &str = "z_dpa1.csv";
pub const Z_DPA2_FILE: &str = "z_dpa2.csv";
pub const ENS_FILE: &str = "ens.csv";
pub const BAG_REPORT_FILE: &str = "bag_report.csv";
/// Wall-clock times; the only output that varies between identical runs.
pub const TIMINGS_FILE: &str = "timings.csv";

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Command {
    /// Write a synthetic cohort and its truth labels to the cohort directory.
    Generate,
    /// Count one full-cohort pass and checkpoint the tables.
    Count,
    /// Rate checkpointed counts into yearly cumulative scores.
    Rate,
    /// Bag both estimators over random patient subsets and windows.
    Bag,
    /// Fuse the bagged estimators.
    Fuse,
    /// Average precision of submission files against the truth labels.
    Evaluate,
    /// Top pairs with their yearly score trajectories.
    Report,
    /// generate (optional), bag, fuse, evaluate, report.
    Pipeline,
}

/// Runs `command` on a thread pool of `run.workers` threads.
pub fn run(command: Command, config: &PipelineConfig) -> CliResult<()> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.run.workers)
        .build()
        .map_err(|e| CliError::runtime(format!("thread pool: {e}")))?;
    pool.install(|| {
        let out = &config.paths.output_dir;
        create_dir(out)?;
        fs::write(out.join(RESOLVED_CONFIG_FILE), config.to_toml())
            .map_err(|e| CliError::runtime(format!("{}: {e}", out.display())))?;
        match command {
            Command::Generate => run_generate(config),
            Command::Count => run_count(config),
            Command::Rate => run_rate(config),
            Command::Bag => run_bag(config),
            Command::Fuse => run_fuse(config),
            Command::Evaluate => run_evaluate(config),
            Command::Report => run_report(config),
            Command::Pipeline => run_pipeline(config),
        }
    })
}

fn create_dir(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::runtime(format!("{}: {e}", dir.display())))
}

fn out_path(config: &PipelineConfig, name: &str) -> PathBuf {
    config.paths.output_dir.join(name)
}

fn load_cohort(config: &PipelineConfig) -> CliResult<Cohort> {
    let cohort = io::load_cohort_dir(&config.paths.cohort_dir, config.time_axis())?;
    info!(
        "loaded {} patients, {} eras, {} conditions",
        cohort.patients.len(),
        cohort.n_eras(),
        cohort.n_conditions()
    );
    Ok(cohort)
}

fn write_lines(path: &Path, lines: &[String]) -> CliResult<()> {
    let mut text = lines.join("\n");
    text.push('\n');
    fs::write(path, text).map_err(|e| CliError::runtime(format!("{}: {e}", path.display())))
}

fn run_generate(config: &PipelineConfig) -> CliResult<()> {
    let synthetic = generate(&config.gen)?;
    create_dir(&config.paths.cohort_dir)?;
    io::write_cohort(&synthetic.cohort, &synthetic.truth, &config.paths.cohort_dir)?;
    info!(
        "generated {} patients, {} eras, {} conditions ({} injected)",
        synthetic.cohort.patients.len(),
        synthetic.cohort.n_eras(),
        synthetic.cohort.n_conditions(),
        synthetic.stats.injected
    );
    Ok(())
}

fn run_count(config: &PipelineConfig) -> CliResult<()> {
    let cohort = load_cohort(config)?;
    let params = CountParams {
        delta: config.run.delta,
        kernel: config.kernel_for(config.run.delta)?,
        m: config.run.m,
        first_era_only: config.run.first_era_only,
    };
    let t = Instant::now();
    let tables = count_all(&cohort, &params)?;
    info!("counted in {:.2?}", t.elapsed());
    tables.write_json(&out_path(config, COUNTS_FILE))?;
    let scope = Scope::from_cohort(&cohort, config.drug_range());
    io::write_scope(&scope, &out_path(config, SCOPE_FILE))?;
    Ok(())
}

fn run_rate(config: &PipelineConfig) -> CliResult<()> {
    let tables = CountTables::read_json(&out_path(config, COUNTS_FILE))?;
    if tables.m != config.run.m {
        return Err(CliError::data(format!(
            "{COUNTS_FILE} has {} subintervals, config asks for {}",
            tables.m, config.run.m
        )));
    }
    let scope = io::read_scope(&out_path(config, SCOPE_FILE))?;
    for (rating, file) in [(config.dpa1(), S_DPA1_FILE), (config.dpa2(), S_DPA2_FILE)] {
        let s = cumulate(&rate_all(&tables, &rating, &scope)?)?;
        let rows = io::write_submission(&s, config.run.dense, &out_path(config, file))?;
        info!("{file}: {rows} rows");
    }
    Ok(())
}

fn run_bag(config: &PipelineConfig) -> CliResult<()> {
    let cohort = load_cohort(config)?;
    let scope = Scope::from_cohort(&cohort, config.drug_range());
    let plan = BagPlan {
        m: config.run.m,
        kernel: config.kernel_for(config.bag.delta_min)?,
        first_era_only: config.run.first_era_only,
        scope: &scope,
    };
    let t = Instant::now();
    let (z, report) = bag_many(&cohort, &[config.dpa1(), config.dpa2()], &config.bag, &plan)?;
    let total = t.elapsed();
    info!(
        "bagged {} replicates ({} effective) in {total:.2?}",
        report.replicates.len(),
        report.effective_k()
    );
    if report.effective_k() == 0 {
        return Err(CliError::data("every bagging replicate drew an empty patient subset"));
    }

    io::write_scope(&scope, &out_path(config, SCOPE_FILE))?;
    for (years, file) in z.iter().zip([Z_DPA1_FILE, Z_DPA2_FILE]) {
        let rows = io::write_submission(years, config.run.dense, &out_path(config, file))?;
        info!("{file}: {rows} rows");
    }

    let mut lines = vec!["replicate,delta,included,skipped".to_string()];
    let mut timings = vec!["stage,replicate,seconds".to_string()];
    for r in &report.replicates {
        lines.push(format!("{},{},{},{}", r.index, r.delta, r.included, r.skipped as u8));
        timings.push(format!("replicate,{},{:.6}", r.index, r.elapsed.as_secs_f64()));
    }
    timings.push(format!("bag,,{:.6}", total.as_secs_f64()));
    write_lines(&out_path(config, BAG_REPORT_FILE), &lines)?;
    write_lines(&out_path(config, TIMINGS_FILE), &timings)?;
    Ok(())
}

fn run_fuse(config: &PipelineConfig) -> CliResult<()> {
    let scope = io::read_scope(&out_path(config, SCOPE_FILE))?;
    let m = config.run.m;
    let dpa1 = io::read_submission(&out_path(config, Z_DPA1_FILE), m, Some(&scope))?;
    let dpa2 = io::read_submission(&out_path(config, Z_DPA2_FILE), m, Some(&scope))?;
    let ens = dpa1
        .iter()
        .zip(&dpa2)
        .map(|(a, b)| fuse(a, b, &config.ensemble))
        .collect::<signalmine::Result<Vec<RatingMatrix>>>()?;
    let rows = io::write_submission(&ens, config.run.dense, &out_path(config, ENS_FILE))?;
    info!("{ENS_FILE}: {rows} rows (tau {})", config.ensemble.tau);
    Ok(())
}

/// Explicit inputs, or the known submission files present in the output
/// directory.
fn submission_inputs(config: &PipelineConfig, explicit: &[PathBuf]) -> CliResult<Vec<PathBuf>> {
    if !explicit.is_empty() {
        return Ok(explicit.to_vec());
    }
    let found: Vec<PathBuf> = [S_DPA1_FILE, S_DPA2_FILE, Z_DPA1_FILE, Z_DPA2_FILE, ENS_FILE]
        .iter()
        .map(|f| out_path(config, f))
        .filter(|p| p.is_file())
        .collect();
    if found.is_empty() {
        return Err(CliError::data(format!(
            "no submission files in {}",
            config.paths.output_dir.display()
        )));
    }
    Ok(found)
}

fn stem(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "input".into())
}

fn run_evaluate(config: &PipelineConfig) -> CliResult<()> {
    let truth = io::load_truth(&config.truth_path())?;
    for input in submission_inputs(config, &config.evaluate.inputs)? {
        let years = io::read_submission(&input, config.run.m, None)?;
        let map = map_by_year(&years, &truth)?;
        let mut lines = vec!["year,ap".to_string()];
        for (y, ap) in map.per_year.iter().enumerate() {
            lines.push(format!("{},{ap:.6}", y + 1));
        }
        lines.push(format!("mean,{:.6}", map.mean));
        let name = stem(&input);
        write_lines(&out_path(config, &format!("evaluation_{name}.csv")), &lines)?;
        println!("{name}: MAP {:.6}", map.mean);
    }
    Ok(())
}

fn run_report(config: &PipelineConfig) -> CliResult<()> {
    let m = config.run.m;
    for input in submission_inputs(config, &config.report.inputs)? {
        let years = io::read_submission(&input, m, None)?;
        let last = years.last().expect("m >= 1");
        let mut lines = vec![{
            let mut h = "rank,drug_id,condition_id".to_string();
            for y in 1..=m {
                h.push_str(&format!(",year_{y}"));
            }
            h
        }];
        for (rank, (key, _)) in last.ranked().into_iter().take(config.report.top_k).enumerate() {
            let mut line = format!("{},{},{}", rank + 1, key.0, key.1);
            for year in &years {
                line.push_str(&format!(",{:.6}", year.get(&key).unwrap_or(0.0)));
            }
            lines.push(line);
        }
        write_lines(&out_path(config, &format!("report_{}.csv", stem(&input))), &lines)?;
    }
    Ok(())
}

fn run_pipeline(config: &PipelineConfig) -> CliResult<()> {
    if config.pipeline.generate {
        run_generate(config)?;
    }
    run_bag(config)?;
    run_fuse(config)?;
    run_evaluate(config)?;
    run_report(config)
}
