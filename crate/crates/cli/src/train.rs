use std::path::{Path, PathBuf};
use std::time::Instant;

use freematch_core::trainer::{run, write_trace_csv, RunOutput};
use serde::Serialize;

use crate::config::ExperimentConfig;
use crate::error::{runtime, CliResult};
use crate::output::OutDir;
use crate::{checkpoint, svg};

pub const BOUNDARY_CELLS: usize = 200;

#[derive(Debug, Serialize)]
struct Summary<'a> {
    scheme: &'a str,
    fairness: &'a str,
    final_error: f64,
    best_error: f64,
    per_class_accuracy: &'a [f64],
    confusion: &'a [Vec<usize>],
    iterations: usize,
    seconds: f64,
}

/// Runs one experiment and writes its artifacts under `out` (or the
/// config's `out_dir`, or `./out`).
pub fn cmd_train(config_path: &Path, out: Option<&Path>) -> CliResult<(PathBuf, RunOutput)> {
    let cfg = ExperimentConfig::load(config_path)?;
    let dir = out
        .map(Path::to_path_buf)
        .or_else(|| cfg.out_dir.clone())
        .unwrap_or_else(|| PathBuf::from("out"));
    let result = train_into(&cfg, &dir)?;
    Ok((dir, result))
}

pub fn train_into(cfg: &ExperimentConfig, dir: &Path) -> CliResult<RunOutput> {
    let data = cfg.dataset.generate().map_err(runtime)?;
    let started = Instant::now();
    let result = run(&cfg.train, &data).map_err(runtime)?;
    let seconds = started.elapsed().as_secs_f64();

    let title = format!(
        "{} + {}: test error {:.2}%",
        cfg.train.scheme.name(),
        cfg.train.fairness.name(),
        100.0 * result.final_error()
    );
    let boundary = svg::boundary(&result.checkpoint.ema_model, &data, BOUNDARY_CELLS, &title).map_err(runtime)?;
    let trace = &result.trace;
    let at = |f: fn(&freematch_core::trainer::MetricsRecord) -> f64| -> Vec<(f64, f64)> {
        trace.iter().map(|r| (r.iteration as f64, f(r))).collect()
    };
    let thresholds = svg::LinePlot {
        title: "Confidence threshold".into(),
        x_label: "iteration".into(),
        y_label: "threshold".into(),
        y_range: Some((0.0, 1.0)),
        series: vec![
            svg::Series::new("global tau", svg::color(0), at(|r| r.tau_global)),
            svg::Series::new("class mean", svg::color(1), at(|r| r.mean_class_threshold)),
        ],
    }
    .render();
    let sampling = svg::LinePlot {
        title: "Sampling rate".into(),
        x_label: "iteration".into(),
        y_label: "fraction of unlabeled batch kept".into(),
        y_range: Some((0.0, 1.0)),
        series: vec![svg::Series::new("sampling rate", svg::color(2), at(|r| r.sampling_rate))],
    }
    .render();
    let summary = Summary {
        scheme: cfg.train.scheme.name(),
        fairness: cfg.train.fairness.name(),
        final_error: result.final_error(),
        best_error: result.best_error,
        per_class_accuracy: &result.final_eval.per_class_accuracy,
        confusion: &result.final_eval.confusion,
        iterations: trace.len(),
        seconds,
    };

    let out = OutDir::create(dir)?;
    out.write_with("trace.csv", |w| write_trace_csv(w, trace))?;
    checkpoint::write(&out, &result.checkpoint, result.final_error(), result.best_error)?;
    out.write("boundary.svg", boundary.as_bytes())?;
    out.write("thresholds.svg", thresholds.as_bytes())?;
    out.write("sampling_rate.svg", sampling.as_bytes())?;
    out.write("summary.json", &serde_json::to_vec_pretty(&summary).map_err(runtime)?)?;
    Ok(result)
}
