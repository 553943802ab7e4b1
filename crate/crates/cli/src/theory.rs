use std::fmt::Write as _;
use std::io::Write as _;
use std::path::Path;

use freematch_core::synthdata::MixtureSpec;
use freematch_core::theory::{
    analytic_dist, mc_dist, sweep, write_sweep_csv, McEstimate, PseudoLabelDist, SweepParam, SweepTable,
    SWEEP_CSV_HEADER,
};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{pool, worker_threads};
use crate::error::{runtime, usage, CliError, CliResult};
use crate::output::OutDir;

pub const DEFAULT_MC_SAMPLES: u64 = 10_000_000;
/// Agreement band in binomial standard errors.
pub const Z_BAND: f64 = 3.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawSpec {
    pub mu1: f64,
    pub mu2: f64,
    pub sigma1: f64,
    pub sigma2: f64,
    pub beta: f64,
    pub tau: f64,
}

impl RawSpec {
    pub fn build(&self) -> freematch_core::Result<MixtureSpec> {
        MixtureSpec::new(self.mu1, self.mu2, self.sigma1, self.sigma2, self.beta, self.tau)
    }
}

/// Cartesian grid of mixtures for the analytic-vs-simulation check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    #[serde(default)]
    pub mu1: f64,
    pub deltas: Vec<f64>,
    pub sigma_pairs: Vec<[f64; 2]>,
    pub betas: Vec<f64>,
    pub taus: Vec<f64>,
}

impl GridConfig {
    pub fn specs(&self) -> freematch_core::Result<Vec<MixtureSpec>> {
        let mut out = Vec::new();
        for &d in &self.deltas {
            for &[s1, s2] in &self.sigma_pairs {
                for &b in &self.betas {
                    for &t in &self.taus {
                        out.push(MixtureSpec::new(self.mu1, self.mu1 + d, s1, s2, b, t)?);
                    }
                }
            }
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub name: String,
    pub varying: SweepParam,
    pub base: RawSpec,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TheoryConfig {
    #[serde(default)]
    pub grid: Option<GridConfig>,
    #[serde(default)]
    pub sweeps: Vec<SweepConfig>,
    #[serde(default)]
    pub seed: u64,
    /// Fresh-seed reruns allowed for a grid point outside the band.
    #[serde(default = "default_retries")]
    pub max_retries: u32,
}

fn default_retries() -> u32 {
    1
}

fn steps(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect()
}

impl Default for TheoryConfig {
    fn default() -> Self {
        let taus = steps(0.6, 0.95, 8);
        Self {
            grid: Some(GridConfig {
                mu1: 0.0,
                deltas: vec![0.5, 1.0, 2.0, 4.0],
                sigma_pairs: vec![[1.0, 1.0], [0.5, 2.0]],
                betas: vec![0.5, 2.0],
                taus: vec![0.7, 0.95],
            }),
            sweeps: vec![
                SweepConfig {
                    name: "tau_equal_sigma".into(),
                    varying: SweepParam::Tau,
                    base: RawSpec { mu1: 0.0, mu2: 2.0, sigma1: 1.0, sigma2: 1.0, beta: 2.0, tau: 0.8 },
                    values: taus.clone(),
                },
                SweepConfig {
                    name: "delta".into(),
                    varying: SweepParam::Delta,
                    base: RawSpec { mu1: 0.0, mu2: 2.0, sigma1: 1.0, sigma2: 1.0, beta: 2.0, tau: 0.8 },
                    values: steps(0.25, 4.0, 16),
                },
                SweepConfig {
                    name: "tau_skewed".into(),
                    varying: SweepParam::Tau,
                    base: RawSpec { mu1: 0.0, mu2: 4.0, sigma1: 0.5, sigma2: 2.0, beta: 4.0, tau: 0.8 },
                    values: taus,
                },
            ],
            seed: 0,
            max_retries: default_retries(),
        }
    }
}

impl TheoryConfig {
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
    }
}

#[derive(Debug, Clone)]
pub struct GridPoint {
    pub spec: MixtureSpec,
    pub exact: PseudoLabelDist,
    pub mc: Option<McEstimate>,
    pub z: Option<f64>,
    pub attempts: u32,
}

impl GridPoint {
    pub fn agrees(&self) -> bool {
        self.z.is_none_or(|z| z <= Z_BAND)
    }
}

#[derive(Debug, Clone)]
pub struct NamedSweep {
    pub name: String,
    pub table: SweepTable,
    pub mc: Option<Vec<McEstimate>>,
}

#[derive(Debug, Clone)]
pub struct TheoryReport {
    pub grid: Vec<GridPoint>,
    pub sweeps: Vec<NamedSweep>,
    pub mc_samples: u64,
    pub seconds: f64,
}

impl TheoryReport {
    pub fn grid_agrees(&self) -> bool {
        self.grid.iter().all(GridPoint::agrees)
    }

    pub fn verdicts_pass(&self) -> bool {
        self.sweeps.iter().all(|s| s.table.verdicts.all_pass())
    }
}

fn job_seed(seed: u64, job: u64, attempt: u32) -> u64 {
    seed.wrapping_mul(0x2545_f491_4f6c_dd1d)
        .wrapping_add(job.wrapping_mul(0x9e37_79b9_7f4a_7c15))
        .wrapping_add(u64::from(attempt).wrapping_mul(0xbf58_476d_1ce4_e5b9))
}

/// Builds every spec up front so that an invalid one fails before any work.
pub fn run_theory(cfg: &TheoryConfig, mc_samples: u64, threads: usize) -> CliResult<TheoryReport> {
    let started = std::time::Instant::now();
    let grid_specs = match &cfg.grid {
        Some(g) => g.specs().map_err(|e| usage(format!("grid: {e}")))?,
        None => Vec::new(),
    };
    let mut sweep_specs = Vec::new();
    let mut tables = Vec::new();
    for s in &cfg.sweeps {
        let base = s.base.build().map_err(|e| usage(format!("sweep {}: {e}", s.name)))?;
        let table = sweep(&base, s.varying, &s.values).map_err(|e| usage(format!("sweep {}: {e}", s.name)))?;
        let specs = s
            .values
            .iter()
            .map(|&v| s.varying.apply(&base, v))
            .collect::<freematch_core::Result<Vec<_>>>()
            .map_err(|e| usage(format!("sweep {}: {e}", s.name)))?;
        sweep_specs.push(specs);
        tables.push(table);
    }

    let pool = pool(threads)?;
    let n_grid = grid_specs.len() as u64;
    let grid = pool.install(|| {
        grid_specs
            .par_iter()
            .enumerate()
            .map(|(i, spec)| {
                let exact = analytic_dist(spec);
                if mc_samples == 0 {
                    return Ok(GridPoint { spec: *spec, exact, mc: None, z: None, attempts: 0 });
                }
                let mut attempt = 0;
                loop {
                    let est = mc_dist(spec, mc_samples, job_seed(cfg.seed, i as u64, attempt)).map_err(runtime)?;
                    let z = est.max_z(&exact);
                    if z <= Z_BAND || attempt >= cfg.max_retries {
                        return Ok(GridPoint { spec: *spec, exact, mc: Some(est), z: Some(z), attempts: attempt + 1 });
                    }
                    attempt += 1;
                }
            })
            .collect::<CliResult<Vec<_>>>()
    })?;

    let mut sweeps = Vec::new();
    let mut job = n_grid;
    for ((s, table), specs) in cfg.sweeps.iter().zip(tables).zip(sweep_specs) {
        let first = job;
        job += specs.len() as u64;
        let mc = if mc_samples == 0 {
            None
        } else {
            Some(pool.install(|| {
                specs
                    .par_iter()
                    .enumerate()
                    .map(|(k, spec)| mc_dist(spec, mc_samples, job_seed(cfg.seed, first + k as u64, 0)).map_err(runtime))
                    .collect::<CliResult<Vec<_>>>()
            })?)
        };
        sweeps.push(NamedSweep { name: s.name.clone(), table, mc });
    }
    Ok(TheoryReport { grid, sweeps, mc_samples, seconds: started.elapsed().as_secs_f64() })
}

pub const GRID_CSV_HEADER: &str =
    "mu1,mu2,sigma1,sigma2,beta,tau,source,p_pos,p_neg,p_mask,se_pos,se_neg,se_mask,max_z,attempts";

pub fn grid_csv(report: &TheoryReport) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "{GRID_CSV_HEADER}");
    for g in &report.grid {
        let p = g.spec;
        let head = format!("{},{},{},{},{},{}", p.mu1, p.mu2, p.sigma1, p.sigma2, p.beta, p.tau);
        let e = g.exact;
        let _ = writeln!(s, "{head},analytic,{},{},{},,,,,", e.p_pos, e.p_neg, e.p_mask);
        if let (Some(mc), Some(z)) = (&g.mc, g.z) {
            let (d, se) = (mc.dist, mc.stderr);
            let _ = writeln!(
                s,
                "{head},mc,{},{},{},{},{},{},{},{}",
                d.p_pos, d.p_neg, d.p_mask, se.p_pos, se.p_neg, se.p_mask, z, g.attempts
            );
        }
    }
    s
}

pub fn sweep_csv(report: &TheoryReport) -> std::io::Result<Vec<u8>> {
    let mut buf = Vec::new();
    writeln!(buf, "{SWEEP_CSV_HEADER}")?;
    for s in &report.sweeps {
        write_sweep_csv(&mut buf, &s.name, &s.table, s.mc.as_deref())?;
    }
    Ok(buf)
}

fn verdict(v: Option<bool>) -> &'static str {
    match v {
        Some(true) => "PASS",
        Some(false) => "FAIL",
        None => "n/a",
    }
}

pub fn verdicts_text(report: &TheoryReport) -> String {
    let mut s = String::new();
    for sw in &report.sweeps {
        let v = sw.table.verdicts;
        let _ = writeln!(
            s,
            "sweep {} (varying {}): mask_rises_with_tau={} imbalance_rises_with_tau={} mask_rises_as_delta_shrinks={}",
            sw.name,
            sw.table.varying.name(),
            verdict(v.mask_rises_with_tau),
            verdict(v.imbalance_rises_with_tau),
            verdict(v.mask_rises_as_delta_shrinks)
        );
    }
    let _ = writeln!(s, "implications: {}", if report.verdicts_pass() { "PASS" } else { "FAIL" });
    if report.mc_samples == 0 {
        let _ = writeln!(s, "monte_carlo: skipped (analytic only)");
    } else if !report.grid.is_empty() {
        let inside = report.grid.iter().filter(|g| g.agrees()).count();
        let worst = report.grid.iter().filter_map(|g| g.z).fold(0.0, f64::max);
        let retried = report.grid.iter().filter(|g| g.attempts > 1).count();
        let _ = writeln!(
            s,
            "monte_carlo: {} ({inside}/{} grid points within {Z_BAND} standard errors at n={}; max z {worst:.3}; {retried} retried)",
            if report.grid_agrees() { "PASS" } else { "FAIL" },
            report.grid.len(),
            report.mc_samples
        );
    }
    s
}

pub fn cmd_theory(config: Option<&Path>, out: &Path, mc_samples: u64) -> CliResult<TheoryReport> {
    let cfg = match config {
        Some(p) => TheoryConfig::load(p)?,
        None => TheoryConfig::default(),
    };
    let report = run_theory(&cfg, mc_samples, worker_threads()?)?;
    let out = OutDir::create(out)?;
    out.write("theorem_sweep.csv", &sweep_csv(&report)?)?;
    if !report.grid.is_empty() {
        out.write("theorem_grid.csv", grid_csv(&report).as_bytes())?;
    }
    out.write("verdicts.txt", verdicts_text(&report).as_bytes())?;
    Ok(report)
}
