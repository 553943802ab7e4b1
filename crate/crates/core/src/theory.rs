//! Pseudo-label distribution of a fixed-threshold labeler on a binary
//! Gaussian mixture, in closed form and by simulation.
//!
//! With confidence `s(x) = sigmoid(beta * (x - m))`, `m = (mu1 + mu2) / 2`,
//! a draw is labeled `+1` when `s(x) > tau`, `-1` when `s(x) < 1 - tau`, and
//! masked otherwise. Equivalently the masked band is `|x - m| <= c` with
//! `c = ln(tau / (1 - tau)) / beta`, which gives
//!
//! ```text
//! P(+1) = 1/2 Phi((D/2 - c) / sigma2) + 1/2 Phi((-D/2 - c) / sigma1)
//! P(-1) = 1/2 Phi((D/2 - c) / sigma1) + 1/2 Phi((-D/2 - c) / sigma2)
//! ```
//!
//! for `D = mu2 - mu1`, with the masked mass as the remainder.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{contract, Result};
use crate::synthdata::{mixture_stream, MixtureSpec};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PseudoLabelDist {
    pub p_pos: f64,
    pub p_neg: f64,
    pub p_mask: f64,
}

impl PseudoLabelDist {
    pub fn imbalance(&self) -> f64 {
        (self.p_pos - self.p_neg).abs()
    }

    pub fn sampling_rate(&self) -> f64 {
        1.0 - self.p_mask
    }
}

/// Standard normal CDF through `erfc`, accurate in both tails.
pub fn normal_cdf(z: f64) -> f64 {
    0.5 * libm::erfc(-z / std::f64::consts::SQRT_2)
}

pub fn confidence(x: f64, spec: &MixtureSpec) -> f64 {
    1.0 / (1.0 + (-spec.beta * (x - spec.midpoint())).exp())
}

/// Half-width `c` of the masked band around the midpoint.
pub fn band_half_width(spec: &MixtureSpec) -> f64 {
    (spec.tau / (1.0 - spec.tau)).ln() / spec.beta
}

/// `+1`, `-1`, or `0` for a masked draw.
pub fn assign_pseudo(x: f64, spec: &MixtureSpec) -> i8 {
    let m = spec.midpoint();
    let c = band_half_width(spec);
    if x > m + c {
        1
    } else if x < m - c {
        -1
    } else {
        0
    }
}

pub fn analytic_dist(spec: &MixtureSpec) -> PseudoLabelDist {
    let half = 0.5 * spec.delta();
    let c = band_half_width(spec);
    let p_pos = 0.5 * normal_cdf((half - c) / spec.sigma2) + 0.5 * normal_cdf((-half - c) / spec.sigma1);
    let p_neg = 0.5 * normal_cdf((half - c) / spec.sigma1) + 0.5 * normal_cdf((-half - c) / spec.sigma2);
    PseudoLabelDist {
        p_pos,
        p_neg,
        p_mask: 1.0 - p_pos - p_neg,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McEstimate {
    pub dist: PseudoLabelDist,
    /// Binomial standard errors `sqrt(p (1 - p) / n)` per entry.
    pub stderr: PseudoLabelDist,
    pub n: u64,
}

impl McEstimate {
    fn from_counts(pos: u64, neg: u64, n: u64) -> Self {
        let nf = n as f64;
        let p = |k: u64| k as f64 / nf;
        let se = |k: u64| {
            let q = p(k);
            (q * (1.0 - q) / nf).sqrt()
        };
        let masked = n - pos - neg;
        Self {
            dist: PseudoLabelDist {
                p_pos: p(pos),
                p_neg: p(neg),
                p_mask: p(masked),
            },
            stderr: PseudoLabelDist {
                p_pos: se(pos),
                p_neg: se(neg),
                p_mask: se(masked),
            },
            n,
        }
    }

    /// Largest `|mc - analytic| / stderr` over the three entries. An entry with
    /// zero standard error counts as agreeing only when it matches exactly.
    pub fn max_z(&self, exact: &PseudoLabelDist) -> f64 {
        [
            (self.dist.p_pos, exact.p_pos, self.stderr.p_pos),
            (self.dist.p_neg, exact.p_neg, self.stderr.p_neg),
            (self.dist.p_mask, exact.p_mask, self.stderr.p_mask),
        ]
        .into_iter()
        .map(|(mc, ex, se)| {
            let d = (mc - ex).abs();
            if se > 0.0 {
                d / se
            } else if d < 1.0 / self.n as f64 {
                0.0
            } else {
                f64::INFINITY
            }
        })
        .fold(0.0, f64::max)
    }
}

fn count_labels(spec: MixtureSpec, n: u64, seed: u64) -> (u64, u64) {
    let (mut pos, mut neg) = (0, 0);
    for (x, _) in mixture_stream(spec, seed).take(n as usize) {
        match assign_pseudo(x, &spec) {
            1 => pos += 1,
            -1 => neg += 1,
            _ => {}
        }
    }
    (pos, neg)
}

pub fn mc_dist(spec: &MixtureSpec, n: u64, seed: u64) -> Result<McEstimate> {
    mc_dist_parallel(spec, n, seed, 1)
}

/// Splits `n` draws over `workers` threads, each with its own stream seeded
/// from `(seed, worker index)`. Deterministic for a fixed `(seed, workers)`.
pub fn mc_dist_parallel(spec: &MixtureSpec, n: u64, seed: u64, workers: usize) -> Result<McEstimate> {
    contract!(n >= 1, "Monte-Carlo needs at least one draw");
    contract!(workers >= 1, "need at least one worker");
    if workers == 1 {
        let (pos, neg) = count_labels(*spec, n, seed);
        return Ok(McEstimate::from_counts(pos, neg, n));
    }
    let w = workers as u64;
    let spec = *spec;
    let (pos, neg) = std::thread::scope(|s| {
        let handles: Vec<_> = (0..w)
            .map(|i| {
                let share = n / w + u64::from(i < n % w);
                let worker_seed = seed.wrapping_mul(0x9e37_79b9_7f4a_7c15).wrapping_add(i + 1);
                s.spawn(move || count_labels(spec, share, worker_seed))
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("Monte-Carlo worker panicked"))
            .fold((0, 0), |(a, b), (p, q)| (a + p, b + q))
    });
    Ok(McEstimate::from_counts(pos, neg, n))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepParam {
    Tau,
    /// `mu2 - mu1`, applied by moving `mu2` with `mu1` fixed.
    Delta,
    Beta,
}

impl SweepParam {
    pub fn name(&self) -> &'static str {
        match self {
            SweepParam::Tau => "tau",
            SweepParam::Delta => "delta",
            SweepParam::Beta => "beta",
        }
    }

    pub fn apply(&self, base: &MixtureSpec, value: f64) -> Result<MixtureSpec> {
        let s = *base;
        match self {
            SweepParam::Tau => MixtureSpec::new(s.mu1, s.mu2, s.sigma1, s.sigma2, s.beta, value),
            SweepParam::Delta => {
                MixtureSpec::new(s.mu1, s.mu1 + value, s.sigma1, s.sigma2, s.beta, s.tau)
            }
            SweepParam::Beta => MixtureSpec::new(s.mu1, s.mu2, s.sigma1, s.sigma2, value, s.tau),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub param: f64,
    pub dist: PseudoLabelDist,
}

/// Monotonicity checks on the analytic rows of one sweep. A check is `None`
/// when it does not apply to the swept parameter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct Verdicts {
    /// Masked mass strictly increases with `tau`.
    pub mask_rises_with_tau: Option<bool>,
    /// `|p_pos - p_neg|` never decreases as `tau` rises.
    pub imbalance_rises_with_tau: Option<bool>,
    /// Masked mass strictly increases as `mu2 - mu1` shrinks.
    pub mask_rises_as_delta_shrinks: Option<bool>,
}

impl Verdicts {
    pub fn all_pass(&self) -> bool {
        [
            self.mask_rises_with_tau,
            self.imbalance_rises_with_tau,
            self.mask_rises_as_delta_shrinks,
        ]
        .into_iter()
        .all(|v| v != Some(false))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepTable {
    pub varying: SweepParam,
    pub base: MixtureSpec,
    pub rows: Vec<SweepRow>,
    pub verdicts: Verdicts,
}

fn strictly_increasing(v: &[f64]) -> bool {
    v.windows(2).all(|w| w[1] > w[0])
}

fn non_decreasing(v: &[f64]) -> bool {
    v.windows(2).all(|w| w[1] >= w[0])
}

/// Evaluates [`analytic_dist`] along a strictly increasing grid of `values`.
pub fn sweep(base: &MixtureSpec, varying: SweepParam, values: &[f64]) -> Result<SweepTable> {
    contract!(values.len() >= 2, "a sweep needs at least two grid points");
    contract!(strictly_increasing(values), "sweep grid must be strictly increasing");
    let rows = values
        .iter()
        .map(|&v| {
            Ok(SweepRow {
                param: v,
                dist: analytic_dist(&varying.apply(base, v)?),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let mask: Vec<f64> = rows.iter().map(|r| r.dist.p_mask).collect();
    let imbalance: Vec<f64> = rows.iter().map(|r| r.dist.imbalance()).collect();
    let verdicts = match varying {
        SweepParam::Tau => Verdicts {
            mask_rises_with_tau: Some(strictly_increasing(&mask)),
            imbalance_rises_with_tau: (base.sigma1 != base.sigma2).then(|| non_decreasing(&imbalance)),
            ..Default::default()
        },
        SweepParam::Delta => {
            let shrinking: Vec<f64> = mask.iter().rev().copied().collect();
            Verdicts {
                mask_rises_as_delta_shrinks: Some(strictly_increasing(&shrinking)),
                ..Default::default()
            }
        }
        SweepParam::Beta => Verdicts::default(),
    };
    Ok(SweepTable {
        varying,
        base: *base,
        rows,
        verdicts,
    })
}

pub const SWEEP_CSV_HEADER: &str = "sweep,source,param,p_pos,p_neg,p_mask,imbalance,se_pos,se_neg,se_mask";

/// One analytic row per grid point under the `sweep` column `label`;
/// Monte-Carlo rows, when given, follow their analytic row and fill the
/// standard-error columns.
pub fn write_sweep_csv<W: Write>(
    mut w: W,
    label: &str,
    table: &SweepTable,
    mc: Option<&[McEstimate]>,
) -> std::io::Result<()> {
    let name = label;
    for (i, row) in table.rows.iter().enumerate() {
        let d = row.dist;
        writeln!(
            w,
            "{name},analytic,{},{},{},{},{},,,",
            row.param,
            d.p_pos,
            d.p_neg,
            d.p_mask,
            d.imbalance()
        )?;
        if let Some(est) = mc.and_then(|m| m.get(i)) {
            let (d, s) = (est.dist, est.stderr);
            writeln!(
                w,
                "{name},mc,{},{},{},{},{},{},{},{}",
                row.param,
                d.p_pos,
                d.p_neg,
                d.p_mask,
                d.imbalance(),
                s.p_pos,
                s.p_neg,
                s.p_mask
            )?;
        }
    }
    Ok(())
}
