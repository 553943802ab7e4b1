use std::fmt::Write as _;
use std::path::Path;

use clap::ValueEnum;
use freematch_core::adaptive_threshold::{CplMapping, SchemeId};
use freematch_core::ssl_losses::FairnessVariant;
use freematch_core::trainer::run;
use rayon::prelude::*;

use crate::config::{pool, worker_threads, ExperimentConfig};
use crate::error::{runtime, CliResult};
use crate::output::OutDir;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Suite {
    Thresholds,
    Fairness,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Variant {
    pub name: &'static str,
    pub scheme: SchemeId,
    pub fairness: FairnessVariant,
}

/// Threshold suite: every scheme without a fairness term. Fairness suite:
/// self-adaptive thresholds with each fairness variant.
pub fn variants(suite: Suite) -> Vec<Variant> {
    let v = |name, scheme, fairness| Variant { name, scheme, fairness };
    match suite {
        Suite::Thresholds => vec![
            v("fixed", SchemeId::Fixed { tau: 0.95 }, FairnessVariant::None),
            v("global_only", SchemeId::GlobalOnly, FairnessVariant::None),
            v("local_only", SchemeId::LocalOnly { tau: 0.95 }, FairnessVariant::None),
            v("sat", SchemeId::Sat, FairnessVariant::None),
            v(
                "cpl",
                SchemeId::Cpl {
                    tau: 0.95,
                    mapping: CplMapping::Identity,
                },
                FairnessVariant::None,
            ),
        ],
        Suite::Fairness => vec![
            v("none", SchemeId::Sat, FairnessVariant::None),
            v("uniform_prior", SchemeId::Sat, FairnessVariant::UniformPrior),
            v("saf", SchemeId::Sat, FairnessVariant::Saf),
        ],
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SeedResult {
    pub variant: &'static str,
    pub seed: u64,
    pub final_error: f64,
    pub best_error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VariantSummary {
    pub variant: &'static str,
    pub n: usize,
    pub mean_error: f64,
    /// Sample standard deviation; `None` for a single seed.
    pub std_error: Option<f64>,
    pub mean_best: f64,
    pub std_best: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationReport {
    pub suite: Suite,
    pub runs: Vec<SeedResult>,
    pub summary: Vec<VariantSummary>,
}

impl AblationReport {
    pub fn mean_of(&self, variant: &str) -> Option<f64> {
        self.summary.iter().find(|s| s.variant == variant).map(|s| s.mean_error)
    }
}

fn mean_std(v: &[f64]) -> (f64, Option<f64>) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let std = (v.len() > 1).then(|| (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt());
    (mean, std)
}

/// Seed `s` fixes both the dataset draw and the training seed.
pub fn run_ablation(base: &ExperimentConfig, suite: Suite, seeds: u64, threads: usize) -> CliResult<AblationReport> {
    let vars = variants(suite);
    let jobs: Vec<(usize, u64)> = (0..vars.len()).flat_map(|v| (0..seeds).map(move |s| (v, s))).collect();
    let mut runs = pool(threads)?.install(|| {
        jobs.par_iter()
            .map(|&(v, s)| {
                let mut cfg = base.with_seed(s);
                cfg.train.scheme = vars[v].scheme;
                cfg.train.fairness = vars[v].fairness;
                let data = cfg.dataset.generate().map_err(runtime)?;
                let out = run(&cfg.train, &data).map_err(runtime)?;
                Ok((v, SeedResult {
                    variant: vars[v].name,
                    seed: s,
                    final_error: out.final_error(),
                    best_error: out.best_error,
                }))
            })
            .collect::<CliResult<Vec<_>>>()
    })?;
    runs.sort_by_key(|(v, r)| (*v, r.seed));
    let summary = vars
        .iter()
        .enumerate()
        .map(|(vi, var)| {
            let mine: Vec<&SeedResult> = runs.iter().filter(|(v, _)| *v == vi).map(|(_, r)| r).collect();
            let (mean_error, std_error) = mean_std(&mine.iter().map(|r| r.final_error).collect::<Vec<_>>());
            let (mean_best, std_best) = mean_std(&mine.iter().map(|r| r.best_error).collect::<Vec<_>>());
            VariantSummary { variant: var.name, n: mine.len(), mean_error, std_error, mean_best, std_best }
        })
        .collect();
    Ok(AblationReport { suite, runs: runs.into_iter().map(|(_, r)| r).collect(), summary })
}

pub const ABLATION_CSV_HEADER: &str = "suite,variant,seeds,mean_error,std_error,mean_best_error,std_best_error";
pub const RUNS_CSV_HEADER: &str = "suite,variant,seed,final_error,best_error";

fn suite_name(s: Suite) -> &'static str {
    match s {
        Suite::Thresholds => "thresholds",
        Suite::Fairness => "fairness",
    }
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn ablation_csv(r: &AblationReport) -> String {
    let mut s = format!("{ABLATION_CSV_HEADER}\n");
    for v in &r.summary {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{}",
            suite_name(r.suite),
            v.variant,
            v.n,
            v.mean_error,
            opt(v.std_error),
            v.mean_best,
            opt(v.std_best)
        );
    }
    s
}

pub fn runs_csv(r: &AblationReport) -> String {
    let mut s = format!("{RUNS_CSV_HEADER}\n");
    for run in &r.runs {
        let _ = writeln!(
            s,
            "{},{},{},{},{}",
            suite_name(r.suite),
            run.variant,
            run.seed,
            run.final_error,
            run.best_error
        );
    }
    s
}

pub fn cmd_ablate(config: Option<&Path>, suite: Suite, seeds: u64, out: &Path) -> CliResult<AblationReport> {
    if seeds == 0 {
        return Err(crate::error::CliError::Usage("--seeds must be at least 1".into()));
    }
    let base = match config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::bundled_freematch(),
    };
    let report = run_ablation(&base, suite, seeds, worker_threads()?)?;
    let out = OutDir::create(out)?;
    out.write("ablation.csv", ablation_csv(&report).as_bytes())?;
    out.write("ablation_runs.csv", runs_csv(&report).as_bytes())?;
    Ok(report)
}
