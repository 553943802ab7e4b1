use std::path::{Path, PathBuf};

use freematch_core::synthdata::{gen_gaussian_clusters, gen_two_moons, ClusterSpec, SslData, TwoMoonSpec};
use freematch_core::trainer::TrainConfig;
use serde::{Deserialize, Serialize};

use crate::error::{usage, CliError, CliResult};

/// Two-moon FreeMatch run shipped with the tool; also the base of `ablate`.
pub const BUNDLED_FREEMATCH: &str = include_str!("../configs/two_moon_freematch.json");
pub const BUNDLED_FIXED: &str = include_str!("../configs/two_moon_fixed.json");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetConfig {
    TwoMoon(TwoMoonSpec),
    Clusters(ClusterSpec),
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig::TwoMoon(TwoMoonSpec::default())
    }
}

impl DatasetConfig {
    pub fn validate(&self) -> freematch_core::Result<()> {
        match self {
            DatasetConfig::TwoMoon(s) => s.validate(),
            DatasetConfig::Clusters(s) => s.validate(),
        }
    }

    pub fn generate(&self) -> freematch_core::Result<SslData> {
        match self {
            DatasetConfig::TwoMoon(s) => gen_two_moons(s),
            DatasetConfig::Clusters(s) => gen_gaussian_clusters(s),
        }
    }

    pub fn set_seed(&mut self, seed: u64) {
        match self {
            DatasetConfig::TwoMoon(s) => s.seed = seed,
            DatasetConfig::Clusters(s) => s.seed = seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub dataset: DatasetConfig,
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
}

impl ExperimentConfig {
    /// Parses and validates; every failure is a usage error.
    pub fn from_json(text: &str) -> CliResult<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| CliError::Usage(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text).map_err(|e| match e {
            CliError::Usage(m) => CliError::Usage(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn validate(&self) -> CliResult<()> {
        self.train.validate().map_err(|e| usage(format!("train: {e}")))?;
        self.dataset.validate().map_err(|e| usage(format!("dataset: {e}")))
    }

    pub fn bundled_freematch() -> Self {
        Self::from_json(BUNDLED_FREEMATCH).expect("bundled config is valid")
    }

    pub fn bundled_fixed() -> Self {
        Self::from_json(BUNDLED_FIXED).expect("bundled config is valid")
    }

    /// The same experiment with both the data and the training seed set to `seed`.
    pub fn with_seed(&self, seed: u64) -> Self {
        let mut c = self.clone();
        c.train.seed = seed;
        c.dataset.set_seed(seed);
        c
    }
}

/// Worker count: available cores, capped by `FREEMATCH_LAB_THREADS` when set.
pub fn worker_threads() -> CliResult<usize> {
    let cores = std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1);
    match std::env::var("FREEMATCH_LAB_THREADS") {
        Ok(v) => {
            let cap: usize = v
                .trim()
                .parse()
                .map_err(|_| CliError::Usage(format!("FREEMATCH_LAB_THREADS={v:?} is not a count")))?;
            if cap == 0 {
                return Err(CliError::Usage("FREEMATCH_LAB_THREADS must be at least 1".into()));
            }
            Ok(cores.min(cap))
        }
        Err(_) => Ok(cores),
    }
}

pub(crate) fn pool(threads: usize) -> CliResult<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(crate::error::runtime)
}
