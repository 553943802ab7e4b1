//! Seeded generators: two moons, Gaussian clusters, and the 1-D binary
//! Gaussian mixture, plus cycling batch streams.

use std::f64::consts::PI;
use std::io::Write;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{contract, Error, Result};
use crate::ndcore::Tensor;

/// Points with integer class ids. For an unlabeled split the labels are the
/// hidden ground truth, used only for diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub points: Tensor,
    pub labels: Vec<usize>,
}

impl Dataset {
    pub fn new(points: Tensor, labels: Vec<usize>) -> Result<Self> {
        contract!(
            points.shape().len() == 2 && points.rows() == labels.len(),
            "{} labels for points of shape {:?}",
            labels.len(),
            points.shape()
        );
        Ok(Self { points, labels })
    }

    fn from_pairs(pairs: Vec<([f64; 2], usize)>) -> Result<Self> {
        let rows: Vec<[f64; 2]> = pairs.iter().map(|p| p.0).collect();
        let labels = pairs.into_iter().map(|p| p.1).collect();
        Self::new(Tensor::from_rows(&rows)?, labels)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.points.cols()
    }

    pub fn class_counts(&self, num_classes: usize) -> Vec<usize> {
        let mut counts = vec![0; num_classes];
        for &y in &self.labels {
            counts[y] += 1;
        }
        counts
    }
}

/// Labeled, unlabeled and held-out test splits of one generated problem.
#[derive(Debug, Clone, PartialEq)]
pub struct SslData {
    pub labeled: Dataset,
    pub unlabeled: Dataset,
    pub test: Dataset,
    pub num_classes: usize,
}

impl SslData {
    /// Writes `x0,x1,label,split` rows. Unlabeled rows leave `label` blank.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "x0,x1,label,split")?;
        for (split, ds, show) in [
            ("labeled", &self.labeled, true),
            ("unlabeled", &self.unlabeled, false),
            ("test", &self.test, true),
        ] {
            for i in 0..ds.len() {
                let r = ds.points.row(i);
                if show {
                    writeln!(w, "{},{},{},{split}", r[0], r[1], ds.labels[i])?;
                } else {
                    writeln!(w, "{},{},,{split}", r[0], r[1])?;
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TwoMoonSpec {
    pub n_unlabeled: usize,
    pub labels_per_class: usize,
    #[serde(default = "TwoMoonSpec::default_noise")]
    pub noise_sigma: f64,
    pub seed: u64,
}

impl TwoMoonSpec {
    pub const TEST_SIZE: usize = 1000;
    /// Translation applied to both arcs so the pair is centred on the origin.
    pub const OFFSET: [f64; 2] = [-0.5, -0.25];

    fn default_noise() -> f64 {
        0.1
    }

    pub fn validate(&self) -> Result<()> {
        contract!(self.labels_per_class >= 1, "labels_per_class must be at least 1");
        contract!(
            self.n_unlabeled >= 2 * self.labels_per_class,
            "n_unlabeled {} below 2 * labels_per_class",
            self.n_unlabeled
        );
        contract!(
            self.noise_sigma >= 0.0 && self.noise_sigma.is_finite(),
            "noise_sigma must be finite and non-negative"
        );
        Ok(())
    }
}

impl Default for TwoMoonSpec {
    fn default() -> Self {
        Self {
            n_unlabeled: 1000,
            labels_per_class: 1,
            noise_sigma: 0.1,
            seed: 0,
        }
    }
}

/// Noise-free point on moon `class` at arc parameter `t` in `[0, pi]`.
/// Class 0 is the upper arc, class 1 the lower one.
pub fn moon_point(class: usize, t: f64) -> [f64; 2] {
    let [ox, oy] = TwoMoonSpec::OFFSET;
    match class {
        0 => [t.cos() + ox, t.sin() + oy],
        _ => [1.0 - t.cos() + ox, 0.5 - t.sin() + oy],
    }
}

fn jittered_moons(n: usize, sigma: f64, rng: &mut ChaCha8Rng) -> Vec<([f64; 2], usize)> {
    (0..n)
        .map(|i| {
            let class = i % 2;
            let t = rng.random_range(0.0..=PI);
            let [x, y] = moon_point(class, t);
            let dx: f64 = rng.sample(StandardNormal);
            let dy: f64 = rng.sample(StandardNormal);
            ([x + sigma * dx, y + sigma * dy], class)
        })
        .collect()
}

/// Labeled points sit noise-free at evenly spaced arc positions; with one
/// label per class they are the arc midpoints.
pub fn gen_two_moons(spec: &TwoMoonSpec) -> Result<SslData> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let k = spec.labels_per_class;
    let labeled = (0..2)
        .flat_map(|class| {
            (0..k).map(move |i| (moon_point(class, PI * (i as f64 + 0.5) / k as f64), class))
        })
        .collect();
    let unlabeled = jittered_moons(spec.n_unlabeled, spec.noise_sigma, &mut rng);
    let test = jittered_moons(TwoMoonSpec::TEST_SIZE, spec.noise_sigma, &mut rng);
    Ok(SslData {
        labeled: Dataset::from_pairs(labeled)?,
        unlabeled: Dataset::from_pairs(unlabeled)?,
        test: Dataset::from_pairs(test)?,
        num_classes: 2,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClusterSpec {
    pub means: Vec<[f64; 2]>,
    pub n_per_class: usize,
    pub labels_per_class: usize,
    pub sigma: f64,
    pub seed: u64,
}

impl ClusterSpec {
    pub fn validate(&self) -> Result<()> {
        contract!(self.means.len() >= 2, "need at least two clusters");
        for (i, a) in self.means.iter().enumerate() {
            for b in &self.means[..i] {
                contract!(a != b, "duplicate cluster mean {a:?}");
            }
        }
        contract!(self.n_per_class >= 1, "n_per_class must be positive");
        contract!(self.labels_per_class >= 1, "labels_per_class must be positive");
        contract!(
            self.sigma >= 0.0 && self.sigma.is_finite(),
            "sigma must be finite and non-negative"
        );
        Ok(())
    }
}

/// Balanced isotropic clusters. Labeled, unlabeled and test splits draw
/// `labels_per_class`, `n_per_class` and `n_per_class` points per class.
pub fn gen_gaussian_clusters(spec: &ClusterSpec) -> Result<SslData> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut draw = |per_class: usize| {
        let mut out = Vec::with_capacity(per_class * spec.means.len());
        for _ in 0..per_class {
            for (c, m) in spec.means.iter().enumerate() {
                let dx: f64 = rng.sample(StandardNormal);
                let dy: f64 = rng.sample(StandardNormal);
                out.push(([m[0] + spec.sigma * dx, m[1] + spec.sigma * dy], c));
            }
        }
        Dataset::from_pairs(out)
    };
    let labeled = draw(spec.labels_per_class)?;
    let unlabeled = draw(spec.n_per_class)?;
    let test = draw(spec.n_per_class)?;
    Ok(SslData {
        labeled,
        unlabeled,
        test,
        num_classes: spec.means.len(),
    })
}

/// Binary 1-D mixture: `X | Y=-1 ~ N(mu1, sigma1^2)`, `X | Y=+1 ~ N(mu2, sigma2^2)`,
/// scored by a logistic confidence of sharpness `beta` and thresholded at `tau`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MixtureSpec {
    pub mu1: f64,
    pub mu2: f64,
    pub sigma1: f64,
    pub sigma2: f64,
    pub beta: f64,
    pub tau: f64,
}

impl MixtureSpec {
    /// Validates and canonicalizes so that `mu2 > mu1`; swapping means swaps
    /// the class roles, so the standard deviations travel with them.
    pub fn new(mu1: f64, mu2: f64, sigma1: f64, sigma2: f64, beta: f64, tau: f64) -> Result<Self> {
        let all = [mu1, mu2, sigma1, sigma2, beta, tau];
        if all.iter().any(|v| !v.is_finite()) {
            return Err(Error::Contract(format!("non-finite mixture parameter in {all:?}")));
        }
        contract!(mu1 != mu2, "class means must differ");
        contract!(sigma1 > 0.0 && sigma2 > 0.0, "sigmas must be positive");
        contract!(beta > 0.0, "beta must be positive");
        contract!(tau > 0.5 && tau < 1.0, "tau {tau} outside (1/2, 1)");
        let spec = if mu2 > mu1 {
            Self { mu1, mu2, sigma1, sigma2, beta, tau }
        } else {
            Self { mu1: mu2, mu2: mu1, sigma1: sigma2, sigma2: sigma1, beta, tau }
        };
        Ok(spec)
    }

    pub fn delta(&self) -> f64 {
        self.mu2 - self.mu1
    }

    pub fn midpoint(&self) -> f64 {
        0.5 * (self.mu1 + self.mu2)
    }
}

/// Endless stream of `(x, y)` draws with `y` uniform on `{-1, +1}`.
pub fn mixture_stream(spec: MixtureSpec, seed: u64) -> impl Iterator<Item = (f64, i8)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    std::iter::repeat_with(move || {
        let z: f64 = rng.sample(StandardNormal);
        if rng.random::<bool>() {
            (spec.mu2 + spec.sigma2 * z, 1)
        } else {
            (spec.mu1 + spec.sigma1 * z, -1)
        }
    })
}

pub fn sample_mixture(spec: &MixtureSpec, n: usize, seed: u64) -> Result<Vec<(f64, i8)>> {
    contract!(n >= 1, "sample_mixture needs n >= 1");
    Ok(mixture_stream(*spec, seed).take(n).collect())
}

/// Infinite stream of index batches over `0..len`, reshuffled every epoch.
/// A batch larger than the dataset spans epoch boundaries.
#[derive(Debug, Clone)]
pub struct BatchStream {
    order: Vec<usize>,
    pos: usize,
    batch: usize,
    rng: ChaCha8Rng,
}

impl BatchStream {
    pub fn new(len: usize, batch: usize, seed: u64) -> Result<Self> {
        contract!(len >= 1, "cannot batch an empty dataset");
        contract!(batch >= 1, "batch size must be at least 1");
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut order: Vec<usize> = (0..len).collect();
        order.shuffle(&mut rng);
        Ok(Self { order, pos: 0, batch, rng })
    }

    pub fn next_indices(&mut self) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.batch);
        while out.len() < self.batch {
            if self.pos == self.order.len() {
                self.order.shuffle(&mut self.rng);
                self.pos = 0;
            }
            let take = (self.batch - out.len()).min(self.order.len() - self.pos);
            out.extend_from_slice(&self.order[self.pos..self.pos + take]);
            self.pos += take;
        }
        out
    }
}

impl Iterator for BatchStream {
    type Item = Vec<usize>;

    fn next(&mut self) -> Option<Vec<usize>> {
        Some(self.next_indices())
    }
}

pub fn batch_iter(dataset: &Dataset, batch: usize, seed: u64) -> Result<BatchStream> {
    BatchStream::new(dataset.len(), batch, seed)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledBatch {
    pub points: Tensor,
    pub labels: Vec<usize>,
    pub indices: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct UnlabeledBatch {
    pub points: Tensor,
    pub indices: Vec<usize>,
}

/// Paired streams drawing `batch` labeled and `mu * batch` unlabeled points
/// per step. The two streams advance independently.
#[derive(Debug, Clone)]
pub struct SslLoader {
    labeled: BatchStream,
    unlabeled: BatchStream,
}

impl SslLoader {
    pub fn new(data: &SslData, batch: usize, mu: usize, seed: u64) -> Result<Self> {
        contract!(mu >= 1, "unlabeled ratio mu must be at least 1");
        let unlabeled_batch = batch
            .checked_mul(mu)
            .ok_or_else(|| Error::Contract("mu * batch overflows".into()))?;
        Ok(Self {
            labeled: BatchStream::new(data.labeled.len(), batch, seed)?,
            unlabeled: BatchStream::new(
                data.unlabeled.len(),
                unlabeled_batch,
                seed ^ 0x9e37_79b9_7f4a_7c15,
            )?,
        })
    }

    pub fn next_batches(&mut self, data: &SslData) -> Result<(LabeledBatch, UnlabeledBatch)> {
        let li = self.labeled.next_indices();
        let ui = self.unlabeled.next_indices();
        let labeled = LabeledBatch {
            points: data.labeled.points.select_rows(&li)?,
            labels: li.iter().map(|&i| data.labeled.labels[i]).collect(),
            indices: li,
        };
        let unlabeled = UnlabeledBatch {
            points: data.unlabeled.points.select_rows(&ui)?,
            indices: ui,
        };
        Ok((labeled, unlabeled))
    }
}
