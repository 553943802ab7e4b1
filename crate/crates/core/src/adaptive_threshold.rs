//! Self-adaptive confidence thresholds.
//!
//! [`ThresholdState`] tracks three moving averages over the weakly augmented
//! unlabeled predictions of each step:
//!
//! * `tau_global`: EMA of the batch-mean top-class confidence, seeded at `1/C`;
//! * `p_local`: EMA of the batch-mean class-probability vector, seeded uniform;
//! * `hist`: EMA of the normalized histogram of hard pseudo-labels, seeded uniform.
//!
//! [`per_class_thresholds`] turns the state into one cutoff per class. The
//! self-adaptive rule scales the global level by `p_local / max(p_local)`,
//! so the most confidently predicted class gets the full global threshold
//! and the rest proportionally less. The fixed, global-only, local-only and
//! curriculum (count-based) variants sit behind the same [`SchemeId`].

use serde::{Deserialize, Serialize};

use crate::error::{contract, dimension, Result};
use crate::ndcore::{argmax, Tensor};

/// Maps the normalized learning effect `beta(c)` into `[0, 1]` for the
/// curriculum scheme.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum CplMapping {
    #[default]
    Identity,
    /// `x / (2 - x)`
    Convex,
}

impl CplMapping {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            CplMapping::Identity => x,
            CplMapping::Convex => x / (2.0 - x),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SchemeId {
    /// One constant cutoff for all classes.
    Fixed { tau: f64 },
    /// The EMA confidence level for all classes.
    GlobalOnly,
    /// `tau * MaxNorm(p_local)`.
    LocalOnly { tau: f64 },
    /// `tau_global * MaxNorm(p_local)`.
    Sat,
    /// `tau * M(count(c) / max count)`.
    Cpl {
        tau: f64,
        #[serde(default)]
        mapping: CplMapping,
    },
}

impl SchemeId {
    pub fn validate(&self) -> Result<()> {
        match *self {
            SchemeId::Fixed { tau } | SchemeId::LocalOnly { tau } | SchemeId::Cpl { tau, .. } => {
                contract!(tau > 0.0 && tau <= 1.0, "scheme threshold {tau} outside (0, 1]")
            }
            SchemeId::GlobalOnly | SchemeId::Sat => {}
        }
        Ok(())
    }

    pub fn name(&self) -> &'static str {
        match self {
            SchemeId::Fixed { .. } => "fixed",
            SchemeId::GlobalOnly => "global_only",
            SchemeId::LocalOnly { .. } => "local_only",
            SchemeId::Sat => "sat",
            SchemeId::Cpl { .. } => "cpl",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdState {
    pub tau_global: f64,
    pub p_local: Vec<f64>,
    pub hist: Vec<f64>,
    pub lambda: f64,
    pub num_classes: usize,
    pub t: u64,
    pub clamp: Option<[f64; 2]>,
    /// Running confident-prediction counts per class, used only by the
    /// curriculum scheme.
    pub cpl_counts: Vec<u64>,
}

impl ThresholdState {
    pub const DEFAULT_LAMBDA: f64 = 0.999;

    pub fn new(num_classes: usize, lambda: f64) -> Result<Self> {
        contract!(num_classes >= 2, "need at least two classes");
        // lambda = 0 is admitted: it degenerates to "latest batch only".
        contract!((0.0..1.0).contains(&lambda), "EMA decay {lambda} outside [0, 1)");
        let uniform = 1.0 / num_classes as f64;
        Ok(Self {
            tau_global: uniform,
            p_local: vec![uniform; num_classes],
            hist: vec![uniform; num_classes],
            lambda,
            num_classes,
            t: 0,
            clamp: None,
            cpl_counts: vec![0; num_classes],
        })
    }

    pub fn with_clamp(mut self, clamp: Option<[f64; 2]>) -> Result<Self> {
        if let Some([lo, hi]) = clamp {
            contract!(
                0.0 <= lo && lo <= hi && hi <= 1.0,
                "clamp [{lo}, {hi}] is not a sub-interval of [0, 1]"
            );
        }
        self.clamp = clamp;
        Ok(self)
    }

    fn check_probs(&self, probs: &Tensor) -> Result<()> {
        dimension!(
            probs.shape().len() == 2 && probs.cols() == self.num_classes,
            "expected [B, {}] probabilities, got {:?}",
            self.num_classes,
            probs.shape()
        );
        Ok(())
    }

    /// `tau <- lambda * tau + (1 - lambda) * mean_b max_c q_b(c)`.
    pub fn update_global(&mut self, weak_probs: &Tensor) -> Result<()> {
        self.check_probs(weak_probs)?;
        let n = weak_probs.rows();
        let mean_max = (0..n)
            .map(|b| weak_probs.row(b).iter().copied().fold(f64::NEG_INFINITY, f64::max))
            .sum::<f64>()
            / n as f64;
        self.tau_global = self.lambda * self.tau_global + (1.0 - self.lambda) * mean_max;
        Ok(())
    }

    /// `p <- lambda * p + (1 - lambda) * mean_b q_b`.
    pub fn update_local(&mut self, weak_probs: &Tensor) -> Result<()> {
        self.check_probs(weak_probs)?;
        let n = weak_probs.rows() as f64;
        let mut mean = vec![0.0; self.num_classes];
        for b in 0..weak_probs.rows() {
            mean.iter_mut().zip(weak_probs.row(b)).for_each(|(m, q)| *m += q);
        }
        let lam = self.lambda;
        for (p, m) in self.p_local.iter_mut().zip(mean) {
            *p = lam * *p + (1.0 - lam) * m / n;
        }
        Ok(())
    }

    /// `h <- lambda * h + (1 - lambda) * hist(labels) / len(labels)`.
    pub fn update_hist(&mut self, hard_labels: &[usize]) -> Result<()> {
        contract!(!hard_labels.is_empty(), "update_hist on an empty batch");
        let h = normalized_histogram(hard_labels, self.num_classes)?;
        let lam = self.lambda;
        for (s, v) in self.hist.iter_mut().zip(h) {
            *s = lam * *s + (1.0 - lam) * v;
        }
        Ok(())
    }

    /// Adds this batch's confident predictions (`max q >= tau`) to the
    /// curriculum counts.
    pub fn update_cpl_counts(&mut self, weak_probs: &Tensor, tau: f64) -> Result<()> {
        self.check_probs(weak_probs)?;
        for b in 0..weak_probs.rows() {
            let row = weak_probs.row(b);
            let c = argmax(row);
            if row[c] >= tau {
                self.cpl_counts[c] += 1;
            }
        }
        Ok(())
    }

    /// Runs every statistic update for one step and advances `t`.
    pub fn observe(&mut self, weak_probs: &Tensor, scheme: &SchemeId) -> Result<()> {
        self.check_probs(weak_probs)?;
        contract!(weak_probs.rows() > 0, "empty unlabeled batch");
        let labels: Vec<usize> = (0..weak_probs.rows()).map(|b| argmax(weak_probs.row(b))).collect();
        self.update_global(weak_probs)?;
        self.update_local(weak_probs)?;
        self.update_hist(&labels)?;
        if let SchemeId::Cpl { tau, .. } = *scheme {
            self.update_cpl_counts(weak_probs, tau)?;
        }
        self.t += 1;
        Ok(())
    }

    /// Flat `(key, value)` view for checkpoint manifests and trace files.
    pub fn to_record(&self) -> Vec<(String, f64)> {
        let mut out = vec![("tau_global".to_string(), self.tau_global)];
        out.extend(self.p_local.iter().enumerate().map(|(i, v)| (format!("p_local[{i}]"), *v)));
        out.extend(self.hist.iter().enumerate().map(|(i, v)| (format!("hist[{i}]"), *v)));
        out.push(("lambda".to_string(), self.lambda));
        out.push(("t".to_string(), self.t as f64));
        out
    }
}

/// Class histogram divided by the number of labels.
pub fn normalized_histogram(labels: &[usize], num_classes: usize) -> Result<Vec<f64>> {
    contract!(!labels.is_empty(), "histogram of an empty label list");
    let mut h = vec![0.0; num_classes];
    for &y in labels {
        contract!(y < num_classes, "label {y} out of range 0..{num_classes}");
        h[y] += 1.0;
    }
    let n = labels.len() as f64;
    h.iter_mut().for_each(|v| *v /= n);
    Ok(h)
}

pub fn max_norm(v: &[f64]) -> Vec<f64> {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    v.iter().map(|x| x / m).collect()
}

pub fn per_class_thresholds(state: &ThresholdState, scheme: &SchemeId) -> Vec<f64> {
    let c = state.num_classes;
    let raw = match *scheme {
        SchemeId::Fixed { tau } => vec![tau; c],
        SchemeId::GlobalOnly => vec![state.tau_global; c],
        SchemeId::LocalOnly { tau } => max_norm(&state.p_local).into_iter().map(|m| tau * m).collect(),
        SchemeId::Sat => max_norm(&state.p_local)
            .into_iter()
            .map(|m| state.tau_global * m)
            .collect(),
        SchemeId::Cpl { tau, mapping } => {
            let max = state.cpl_counts.iter().copied().max().unwrap_or(0);
            state
                .cpl_counts
                .iter()
                .map(|&n| {
                    let beta = if max == 0 { 0.0 } else { n as f64 / max as f64 };
                    tau * mapping.apply(beta)
                })
                .collect()
        }
    };
    match state.clamp {
        Some([lo, hi]) => raw.into_iter().map(|v| v.clamp(lo, hi)).collect(),
        None => raw,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MaskOutcome {
    pub mask: Vec<bool>,
    pub hard_labels: Vec<usize>,
}

impl MaskOutcome {
    pub fn count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    /// Fraction of the batch that passed its class threshold.
    pub fn sampling_rate(&self) -> f64 {
        if self.mask.is_empty() {
            0.0
        } else {
            self.count() as f64 / self.mask.len() as f64
        }
    }
}

/// A row passes iff its top probability reaches the threshold of its argmax class.
pub fn mask(weak_probs: &Tensor, thresholds: &[f64]) -> Result<MaskOutcome> {
    dimension!(
        weak_probs.shape().len() == 2 && weak_probs.cols() == thresholds.len(),
        "{} thresholds for probabilities of shape {:?}",
        thresholds.len(),
        weak_probs.shape()
    );
    let (mask, hard_labels) = (0..weak_probs.rows())
        .map(|b| {
            let row = weak_probs.row(b);
            let c = argmax(row);
            (row[c] >= thresholds[c], c)
        })
        .unzip();
    Ok(MaskOutcome { mask, hard_labels })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn probs(rows: &[&[f64]]) -> Tensor {
        Tensor::from_rows(rows).unwrap()
    }

    #[test]
    fn initial_state() {
        let s = ThresholdState::new(10, 0.999).unwrap();
        assert_eq!(s.tau_global, 0.1);
        let s = ThresholdState::new(4, 0.999).unwrap();
        assert_eq!(s.p_local, vec![0.25; 4]);
        assert_eq!(s.hist, vec![0.25; 4]);
        assert!(ThresholdState::new(1, 0.9).is_err());
        assert!(ThresholdState::new(2, 1.0).is_err());
    }

    #[test]
    fn global_update_arithmetic() {
        let mut s = ThresholdState::new(2, 0.9).unwrap();
        s.tau_global = 0.5;
        s.update_global(&probs(&[&[0.6, 0.4], &[0.2, 0.8]])).unwrap();
        assert!((s.tau_global - 0.52).abs() < 1e-15);
        assert_eq!(s.t, 0);
    }

    #[test]
    fn global_converges_to_constant_input() {
        let mut s = ThresholdState::new(2, 0.9).unwrap();
        let q = probs(&[&[0.7, 0.3]]);
        for n in 1..=200 {
            s.update_global(&q).unwrap();
            let expect = 0.7 + 0.9f64.powi(n) * (0.5 - 0.7);
            assert!((s.tau_global - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn local_update_arithmetic() {
        let mut s = ThresholdState::new(2, 0.5).unwrap();
        s.p_local = vec![1.0, 0.0];
        s.update_local(&probs(&[&[0.0, 1.0]])).unwrap();
        assert_eq!(s.p_local, vec![0.5, 0.5]);
    }

    #[test]
    fn hist_update_arithmetic() {
        let mut s = ThresholdState::new(2, 0.0).unwrap();
        s.update_hist(&[0, 0, 0]).unwrap();
        assert_eq!(s.hist, vec![1.0, 0.0]);
        s.update_hist(&[0, 1, 1, 1]).unwrap();
        assert_eq!(s.hist, vec![0.25, 0.75]);
        assert!(s.update_hist(&[]).is_err());
        assert!(s.update_hist(&[2]).is_err());
    }

    #[test]
    fn sat_thresholds() {
        let mut s = ThresholdState::new(3, 0.999).unwrap();
        s.p_local = vec![0.2, 0.3, 0.5];
        s.tau_global = 0.9;
        let th = per_class_thresholds(&s, &SchemeId::Sat);
        for (a, b) in th.iter().zip([0.36, 0.54, 0.9]) {
            assert!((a - b).abs() < 1e-12);
        }
        let s = s.with_clamp(Some([0.9, 0.95])).unwrap();
        assert_eq!(per_class_thresholds(&s, &SchemeId::Sat), vec![0.9, 0.9, 0.9]);
    }

    #[test]
    fn uniform_local_gives_global() {
        let mut s = ThresholdState::new(5, 0.999).unwrap();
        s.tau_global = 0.77;
        assert!(per_class_thresholds(&s, &SchemeId::Sat).iter().all(|&v| v == 0.77));
        assert_eq!(per_class_thresholds(&s, &SchemeId::GlobalOnly), vec![0.77; 5]);
        assert_eq!(per_class_thresholds(&s, &SchemeId::Fixed { tau: 0.95 }), vec![0.95; 5]);
        assert_eq!(per_class_thresholds(&s, &SchemeId::LocalOnly { tau: 0.95 }), vec![0.95; 5]);
    }

    #[test]
    fn cpl_thresholds() {
        let mut s = ThresholdState::new(3, 0.999).unwrap();
        let scheme = SchemeId::Cpl { tau: 0.95, mapping: CplMapping::Identity };
        assert_eq!(per_class_thresholds(&s, &scheme), vec![0.0; 3]);
        s.cpl_counts = vec![10, 5, 0];
        let th = per_class_thresholds(&s, &scheme);
        assert_eq!(th, vec![0.95, 0.475, 0.0]);
        let convex = SchemeId::Cpl { tau: 0.95, mapping: CplMapping::Convex };
        let th = per_class_thresholds(&s, &convex);
        assert!((th[1] - 0.95 * (0.5 / 1.5)).abs() < 1e-15);
    }

    #[test]
    fn cpl_counts_follow_confident_predictions() {
        let mut s = ThresholdState::new(2, 0.9).unwrap();
        let scheme = SchemeId::Cpl { tau: 0.9, mapping: CplMapping::Identity };
        s.observe(&probs(&[&[0.95, 0.05], &[0.3, 0.7], &[0.05, 0.95], &[0.9, 0.1]]), &scheme)
            .unwrap();
        assert_eq!(s.cpl_counts, vec![2, 1]);
        assert_eq!(s.t, 1);
    }

    #[test]
    fn mask_examples() {
        let m = mask(&probs(&[&[0.1, 0.9]]), &[0.8, 0.95]).unwrap();
        assert_eq!(m.hard_labels, vec![1]);
        assert_eq!(m.mask, vec![false]);
        let m = mask(&probs(&[&[0.97, 0.03]]), &[0.95, 0.95]).unwrap();
        assert_eq!(m.hard_labels, vec![0]);
        assert_eq!(m.mask, vec![true]);
        // equality passes
        let m = mask(&probs(&[&[0.95, 0.05]]), &[0.95, 0.95]).unwrap();
        assert_eq!(m.mask, vec![true]);
        assert!(mask(&probs(&[&[0.5, 0.5]]), &[0.5]).is_err());
    }

    #[test]
    fn scheme_validation_and_serde() {
        assert!(SchemeId::Fixed { tau: 0.0 }.validate().is_err());
        assert!(SchemeId::Fixed { tau: 1.0 }.validate().is_ok());
        let s: SchemeId = serde_json::from_str(r#"{"kind":"cpl","tau":0.95}"#).unwrap();
        assert_eq!(s, SchemeId::Cpl { tau: 0.95, mapping: CplMapping::Identity });
        let s: SchemeId = serde_json::from_str(r#"{"kind":"sat"}"#).unwrap();
        assert_eq!(s, SchemeId::Sat);
    }

    #[test]
    fn record_keys() {
        let s = ThresholdState::new(2, 0.999).unwrap();
        let keys: Vec<String> = s.to_record().into_iter().map(|(k, _)| k).collect();
        assert_eq!(
            keys,
            ["tau_global", "p_local[0]", "p_local[1]", "hist[0]", "hist[1]", "lambda", "t"]
        );
    }
}
