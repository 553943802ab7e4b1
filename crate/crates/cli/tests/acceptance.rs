#![allow(clippy::needless_range_loop)]
//! Runs every acceptance criterion and prints one PASS/FAIL line for each.
//! Exits nonzero if any criterion fails.

#[path = "../../core/tests/support/mod.rs"]
mod support;

use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use freematch_core::trainer::{run, RunOutput};
use freematch_lab::ablate::{run_ablation, Suite};
use freematch_lab::config::{worker_threads, ExperimentConfig};
use freematch_lab::theory::{run_theory, TheoryConfig, DEFAULT_MC_SAMPLES};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn theorem_agreement() -> Outcome {
    let cfg = TheoryConfig {
        sweeps: Vec::new(),
        ..TheoryConfig::default()
    };
    // single-threaded, as the runtime budget is stated for one core
    let report = match run_theory(&cfg, DEFAULT_MC_SAMPLES, 1) {
        Ok(r) => r,
        Err(e) => return outcome(false, e.to_string()),
    };
    let inside = report.grid.iter().filter(|g| g.agrees()).count();
    let worst = report.grid.iter().filter_map(|g| g.z).fold(0.0, f64::max);
    let retried = report.grid.iter().filter(|g| g.attempts > 1).count();
    let fast = report.seconds < 120.0;
    outcome(
        report.grid_agrees() && fast && report.grid.len() == 32,
        format!(
            "{inside}/{} points within 3 SE at n=1e7, max z {worst:.3}, {retried} retried, {:.1}s single-threaded",
            report.grid.len(),
            report.seconds
        ),
    )
}

fn theorem_implications() -> Outcome {
    let report = match run_theory(&TheoryConfig::default(), 0, 1) {
        Ok(r) => r,
        Err(e) => return outcome(false, e.to_string()),
    };
    let seen = |f: fn(&freematch_core::theory::Verdicts) -> Option<bool>| {
        report.sweeps.iter().filter_map(|s| f(&s.table.verdicts)).collect::<Vec<_>>()
    };
    let i = seen(|v| v.mask_rises_with_tau);
    let ii = seen(|v| v.imbalance_rises_with_tau);
    let iii = seen(|v| v.mask_rises_as_delta_shrinks);
    let ok = |v: &[bool]| !v.is_empty() && v.iter().all(|&b| b);
    outcome(
        ok(&i) && ok(&ii) && ok(&iii),
        format!("mask rises with tau {i:?}; imbalance rises with tau {ii:?}; mask rises as delta shrinks {iii:?}"),
    )
}

struct TwoMoon {
    freematch: Vec<RunOutput>,
    fixed: Vec<RunOutput>,
    slowest: f64,
}

fn two_moon_runs(seeds: u64) -> Result<TwoMoon, String> {
    let mut slowest: f64 = 0.0;
    let mut go = |base: &ExperimentConfig| -> Result<Vec<RunOutput>, String> {
        (0..seeds)
            .map(|s| {
                let cfg = base.with_seed(s);
                let data = cfg.dataset.generate().map_err(|e| e.to_string())?;
                let t = Instant::now();
                let out = run(&cfg.train, &data).map_err(|e| e.to_string())?;
                slowest = slowest.max(t.elapsed().as_secs_f64());
                Ok(out)
            })
            .collect()
    };
    let freematch = go(&ExperimentConfig::bundled_freematch())?;
    let fixed = go(&ExperimentConfig::bundled_fixed())?;
    Ok(TwoMoon { freematch, fixed, slowest })
}

fn mean(v: impl Iterator<Item = f64>) -> f64 {
    let v: Vec<f64> = v.collect();
    v.iter().sum::<f64>() / v.len() as f64
}

fn two_moon_error(tm: &TwoMoon) -> Outcome {
    let fm = mean(tm.freematch.iter().map(|r| r.final_error()));
    let fx = mean(tm.fixed.iter().map(|r| r.final_error()));
    let per_seed: Vec<String> = tm.freematch.iter().map(|r| format!("{:.3}", r.final_error())).collect();
    outcome(
        fm <= 0.05 && fm < fx && tm.slowest < 180.0,
        format!(
            "FreeMatch mean error {fm:.4} [{}] vs Fixed(0.95) {fx:.4} over 5 seeds; slowest run {:.1}s",
            per_seed.join(", "),
            tm.slowest
        ),
    )
}

fn threshold_dynamics(tm: &TwoMoon) -> Outcome {
    let fm = &tm.freematch[0].trace;
    let fx = &tm.fixed[0].trace;
    let tau_50 = fm[49].tau_global;
    let tau_end = fm[fm.len() - 1].tau_global;
    let early = |t: &[freematch_core::trainer::MetricsRecord]| mean(t[..200].iter().map(|r| r.sampling_rate));
    let (sr_fm, sr_fx) = (early(fm), early(fx));
    outcome(
        fm.len() == 2000 && tau_50 < tau_end && sr_fm > sr_fx,
        format!(
            "tau@50 {tau_50:.4} < tau@2000 {tau_end:.4}; mean sampling rate over first 200 iterations {sr_fm:.4} vs Fixed {sr_fx:.4}"
        ),
    )
}

fn gradient_suite() -> Outcome {
    match support::gradient_suite(100, 2024) {
        Ok((worst, skipped)) => outcome(
            worst <= support::REL_TOL,
            format!(
                "100 graphs (25 full composite losses), worst relative error {worst:.2e}, step {:.0e}, {skipped} non-differentiable draws replaced",
                support::FD_STEP
            ),
        ),
        Err(e) => outcome(false, e),
    }
}

fn invariant_suite() -> Outcome {
    let simplex = support::threshold_state_invariants(10_000, 1);
    let gap = (0..4).map(|s| support::ema_closed_form_gap(10_000, s)).fold(0.0, f64::max);
    let mono = support::mask_monotonicity(1_000, 1);
    let mut notes = vec![format!("EMA closed-form gap {gap:.2e}")];
    if let Err(e) = &simplex {
        notes.push(e.clone());
    }
    if let Err(e) = &mono {
        notes.push(e.clone());
    }
    outcome(
        simplex.is_ok() && gap <= 1e-10 && mono.is_ok(),
        format!("10^4 state updates, 10^3 mask batches; {}", notes.join("; ")),
    )
}

fn ablation_ranking() -> Outcome {
    let threads = worker_threads().unwrap_or(1);
    let report = match run_ablation(&ExperimentConfig::bundled_freematch(), Suite::Thresholds, 5, threads) {
        Ok(r) => r,
        Err(e) => return outcome(false, e.to_string()),
    };
    let sat = report.mean_of("sat").unwrap_or(f64::INFINITY);
    let table: Vec<String> = report.summary.iter().map(|s| format!("{} {:.4}", s.variant, s.mean_error)).collect();
    outcome(
        report.summary.iter().all(|s| sat <= s.mean_error),
        format!("mean error over 5 seeds: {}", table.join(", ")),
    )
}

fn csv_files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out: Vec<(String, Vec<u8>)> = std::fs::read_dir(dir)
        .map(|rd| {
            rd.filter_map(|e| e.ok())
                .map(|e| e.path())
                .filter(|p| p.extension().is_some_and(|x| x == "csv"))
                .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap()))
                .collect()
        })
        .unwrap_or_default();
    out.sort();
    out
}

fn determinism() -> Outcome {
    let bin = env!("CARGO_BIN_EXE_freematch-lab");
    let root = std::env::temp_dir().join(format!("freematch-acceptance-{}", std::process::id()));
    let _ = std::fs::remove_dir_all(&root);
    let bundled: PathBuf = [env!("CARGO_MANIFEST_DIR"), "configs", "two_moon_freematch.json"].iter().collect();
    let bundled = bundled.to_string_lossy().into_owned();
    let commands: Vec<(&str, Vec<String>)> = vec![
        ("train", vec!["train".into(), "--config".into(), bundled.clone()]),
        ("theory", vec!["theory".into(), "--mc-samples".into(), "100000".into()]),
        ("ablate", vec!["ablate".into(), "--suite".into(), "fairness".into(), "--seeds".into(), "2".into()]),
    ];
    let mut notes = Vec::new();
    let mut pass = true;
    for (name, args) in &commands {
        let mut files = Vec::new();
        for rep in 0..2 {
            let out = root.join(format!("{name}-{rep}"));
            let status = Command::new(bin)
                .args(args)
                .arg("--out")
                .arg(&out)
                .output()
                .map(|o| o.status.success())
                .unwrap_or(false);
            if !status {
                pass = false;
                notes.push(format!("{name} failed to run"));
            }
            files.push(csv_files(&out));
        }
        let same = !files[0].is_empty() && files[0] == files[1];
        pass &= same;
        let names: Vec<&str> = files[0].iter().map(|(n, _)| n.as_str()).collect();
        notes.push(format!("{name}: {} {}", names.join("+"), if same { "identical" } else { "DIFFER" }));
    }
    let _ = std::fs::remove_dir_all(&root);
    outcome(pass, notes.join("; "))
}

fn report(results: &mut Vec<bool>, id: usize, name: &str, started: Instant, o: Outcome) {
    println!(
        "[{}] {id}. {name}: {} ({:.1}s)",
        if o.pass { "PASS" } else { "FAIL" },
        o.detail,
        started.elapsed().as_secs_f64()
    );
    results.push(o.pass);
}

fn main() {
    // `cargo test` passes harness flags such as --list; only run on a plain invocation
    if std::env::args().any(|a| a == "--list") {
        return;
    }
    println!("running acceptance criteria");
    let mut results = Vec::new();

    let t = Instant::now();
    report(&mut results, 1, "theorem agreement", t, theorem_agreement());
    let t = Instant::now();
    report(&mut results, 2, "theorem implications", t, theorem_implications());

    let t = Instant::now();
    match two_moon_runs(5) {
        Ok(tm) => {
            report(&mut results, 3, "two-moon error", t, two_moon_error(&tm));
            let t = Instant::now();
            report(&mut results, 4, "threshold dynamics", t, threshold_dynamics(&tm));
        }
        Err(e) => {
            report(&mut results, 3, "two-moon error", t, outcome(false, e.clone()));
            report(&mut results, 4, "threshold dynamics", t, outcome(false, e));
        }
    }
    let t = Instant::now();
    report(&mut results, 5, "gradient suite", t, gradient_suite());
    let t = Instant::now();
    report(&mut results, 6, "invariant suite", t, invariant_suite());
    let t = Instant::now();
    report(&mut results, 7, "ablation ranking", t, ablation_ranking());
    let t = Instant::now();
    report(&mut results, 8, "determinism", t, determinism());

    let passed = results.iter().filter(|&&p| p).count();
    println!("acceptance: {passed}/{} criteria passed", results.len());
    if passed != results.len() {
        std::process::exit(1);
    }
}
