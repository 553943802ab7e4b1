//! The training loop: one step per labeled/unlabeled batch pair, weight
//! averaging for evaluation, and a per-iteration metrics trace.

use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::adaptive_threshold::{mask, per_class_thresholds, MaskOutcome, SchemeId, ThresholdState};
use crate::augment::AugmentSpec;
use crate::error::{contract, Error, Result};
use crate::ndcore::{argmax, cosine_lr, sgd_step, softmax, MlpModel, OptimState, ParamEma, Tape, Tensor};
use crate::ssl_losses::{consistency_loss, fairness_loss, supervised_loss, FairnessVariant, LossBundle};
use crate::synthdata::{Dataset, LabeledBatch, SslData, SslLoader, UnlabeledBatch};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub scheme: SchemeId,
    pub fairness: FairnessVariant,
    pub w_u: f64,
    pub w_f: f64,
    /// Decay of the threshold statistics.
    pub lambda: f64,
    pub mu: usize,
    pub batch_size: usize,
    pub iterations: usize,
    pub warmup_iters: usize,
    pub clamp: Option<[f64; 2]>,
    pub eval_every: usize,
    pub seed: u64,
    pub lr: f64,
    pub momentum: f64,
    pub ema_decay: f64,
    /// Hidden layer widths; input and output widths come from the data.
    pub hidden: Vec<usize>,
    pub augment: AugmentSpec,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            scheme: SchemeId::Sat,
            fairness: FairnessVariant::Saf,
            w_u: 1.0,
            w_f: 0.01,
            lambda: ThresholdState::DEFAULT_LAMBDA,
            mu: 7,
            batch_size: 8,
            iterations: 2000,
            warmup_iters: 0,
            clamp: None,
            eval_every: 50,
            seed: 0,
            lr: OptimState::DEFAULT_LR,
            momentum: OptimState::DEFAULT_MOMENTUM,
            ema_decay: ParamEma::DEFAULT_DECAY,
            hidden: vec![64, 64, 64],
            augment: AugmentSpec::default(),
        }
    }
}

impl TrainConfig {
    /// Fixed 0.95 threshold, no fairness term.
    pub fn fixmatch_baseline() -> Self {
        Self {
            scheme: SchemeId::Fixed { tau: 0.95 },
            fairness: FairnessVariant::None,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        contract!(self.iterations >= 1, "iterations must be at least 1");
        contract!(self.mu >= 1, "mu must be at least 1");
        contract!(self.batch_size >= 1, "batch_size must be at least 1");
        contract!(
            self.warmup_iters < self.iterations,
            "warmup_iters {} must be below iterations {}",
            self.warmup_iters,
            self.iterations
        );
        contract!(self.eval_every >= 1, "eval_every must be at least 1");
        contract!((0.0..1.0).contains(&self.lambda), "lambda outside [0, 1)");
        contract!((0.0..1.0).contains(&self.ema_decay), "ema_decay outside [0, 1)");
        contract!(self.lr > 0.0 && self.lr.is_finite(), "lr must be positive");
        contract!((0.0..1.0).contains(&self.momentum), "momentum outside [0, 1)");
        contract!(
            self.w_u.is_finite() && self.w_f.is_finite() && self.w_u >= 0.0 && self.w_f >= 0.0,
            "loss weights must be finite and non-negative"
        );
        contract!(self.hidden.iter().all(|&h| h > 0), "hidden widths must be positive");
        if let Some([lo, hi]) = self.clamp {
            contract!(0.0 <= lo && lo <= hi && hi <= 1.0, "clamp must lie in [0, 1]");
        }
        self.scheme.validate()?;
        self.augment.validate()
    }
}

/// Per-iteration snapshot. Evaluation fields are `None` off-cadence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub iteration: usize,
    pub l_s: f64,
    pub l_u: f64,
    pub l_f: f64,
    pub total: f64,
    pub tau_global: f64,
    pub mean_class_threshold: f64,
    pub sampling_rate: f64,
    pub error_rate: Option<f64>,
    pub confusion: Option<Vec<Vec<usize>>>,
    /// Accuracy of the passing pseudo-labels against hidden ground truth.
    pub pseudo_label_acc: Option<f64>,
}

pub const TRACE_CSV_HEADER: &str =
    "iter,l_s,l_u,l_f,total,tau_global,mean_class_threshold,sampling_rate,error_rate,pseudo_label_acc";

fn opt_cell(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn write_trace_csv<W: Write>(mut w: W, trace: &[MetricsRecord]) -> std::io::Result<()> {
    writeln!(w, "{TRACE_CSV_HEADER}")?;
    for r in trace {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{},{}",
            r.iteration,
            r.l_s,
            r.l_u,
            r.l_f,
            r.total,
            r.tau_global,
            r.mean_class_threshold,
            r.sampling_rate,
            opt_cell(r.error_rate),
            opt_cell(r.pseudo_label_acc)
        )?;
    }
    Ok(())
}

/// Everything that changes during training.
#[derive(Debug, Clone, PartialEq)]
pub struct Learner {
    pub model: MlpModel,
    pub opt: OptimState,
    pub ema: ParamEma,
    pub state: ThresholdState,
}

impl Learner {
    pub fn new(config: &TrainConfig, input_dim: usize, num_classes: usize) -> Result<Self> {
        config.validate()?;
        let mut widths = vec![input_dim];
        widths.extend(&config.hidden);
        widths.push(num_classes);
        let mut init_rng = ChaCha8Rng::seed_from_u64(config.seed);
        let model = MlpModel::xavier(&widths, &mut init_rng)?;
        let opt = OptimState::for_model(&model, config.momentum, config.lr, config.iterations);
        let ema = ParamEma::new(&model, config.ema_decay)?;
        let state = ThresholdState::new(num_classes, config.lambda)?.with_clamp(config.clamp)?;
        Ok(Self { model, opt, ema, state })
    }
}

/// What one step produced besides the updated learner.
#[derive(Debug, Clone, PartialEq)]
pub struct StepReport {
    pub record: MetricsRecord,
    pub losses: LossBundle,
    pub thresholds: Vec<f64>,
    pub mask: MaskOutcome,
}

/// One iteration, in order: supervised loss on weak views of the labeled
/// batch; weak-view predictions on the unlabeled batch without gradient;
/// threshold statistic updates; per-class thresholds; consistency and
/// fairness losses on strong views; backward and SGD at the cosine rate;
/// weight-EMA update. During warm-up the unlabeled losses are left out of
/// the objective but the statistics still update.
pub fn train_step(
    learner: &mut Learner,
    labeled: &LabeledBatch,
    unlabeled: &UnlabeledBatch,
    config: &TrainConfig,
    rng: &mut ChaCha8Rng,
) -> Result<StepReport> {
    let iteration = learner.opt.step + 1;
    let warm = learner.opt.step < config.warmup_iters;
    let aug = &config.augment;

    let x_weak = aug.weak(&labeled.points, rng);
    let u_weak = aug.weak(&unlabeled.points, rng);
    let u_strong = aug.strong(&unlabeled.points, rng);

    let weak_probs = softmax(&learner.model.forward(&u_weak)?)?;
    learner.state.observe(&weak_probs, &config.scheme)?;
    let thresholds = per_class_thresholds(&learner.state, &config.scheme);

    let mut tape = Tape::new();
    let params = learner.model.bind(&mut tape);
    let xv = tape.constant(x_weak);
    let logits = learner.model.forward_on(&mut tape, &params, xv)?;
    let l_s = supervised_loss(&mut tape, logits, &labeled.labels)?;
    let mut total = l_s;

    let (l_u_val, l_f_val, step_mask) = if warm {
        (0.0, 0.0, mask(&weak_probs, &thresholds)?)
    } else {
        let uv = tape.constant(u_strong);
        let strong_logits = learner.model.forward_on(&mut tape, &params, uv)?;
        let (l_u, m) = consistency_loss(&mut tape, &weak_probs, strong_logits, &thresholds)?;
        let l_f = fairness_loss(
            &mut tape,
            config.fairness,
            &learner.state,
            &weak_probs,
            strong_logits,
            &thresholds,
        )?;
        if config.w_u != 0.0 {
            let term = tape.scale(l_u, config.w_u);
            total = tape.add(total, term)?;
        }
        if config.w_f != 0.0 {
            let term = tape.scale(l_f, config.w_f);
            total = tape.add(total, term)?;
        }
        (tape.value(l_u).item(), tape.value(l_f).item(), m)
    };
    let l_s_val = tape.value(l_s).item();
    let total_val = tape.value(total).item();
    let mut losses = crate::ssl_losses::total_loss(l_s_val, l_u_val, l_f_val, config.w_u, config.w_f);
    losses.n_masked_in = step_mask.count();
    if !warm {
        // The recorded total is the value that was differentiated.
        losses.total = total_val;
    }
    if ![losses.l_s, losses.l_u, losses.l_f, losses.total].iter().all(|v| v.is_finite()) {
        return Err(Error::Numeric(format!(
            "non-finite loss at iteration {iteration}: l_s={} l_u={} l_f={} total={}",
            losses.l_s, losses.l_u, losses.l_f, losses.total
        )));
    }

    tape.backward(total)?;
    learner.model.accumulate_grads(&tape, &params)?;
    let lr = cosine_lr(config.lr, learner.opt.step, config.iterations)?;
    sgd_step(&mut learner.model.params_mut(), &mut learner.opt, lr)?;
    learner.ema.update(&learner.model)?;

    let record = MetricsRecord {
        iteration,
        l_s: losses.l_s,
        l_u: losses.l_u,
        l_f: losses.l_f,
        total: losses.total,
        tau_global: learner.state.tau_global,
        mean_class_threshold: thresholds.iter().sum::<f64>() / thresholds.len() as f64,
        sampling_rate: step_mask.sampling_rate(),
        error_rate: None,
        confusion: None,
        pseudo_label_acc: None,
    };
    Ok(StepReport {
        record,
        losses,
        thresholds,
        mask: step_mask,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub error_rate: f64,
    /// `confusion[true][predicted]`.
    pub confusion: Vec<Vec<usize>>,
    pub per_class_accuracy: Vec<f64>,
}

pub fn evaluate(model: &MlpModel, test: &Dataset) -> Result<EvalReport> {
    contract!(!test.is_empty(), "empty test set");
    let logits = model.forward(&test.points)?;
    let c = model.num_classes();
    let preds: Vec<usize> = (0..logits.rows()).map(|i| argmax(logits.row(i))).collect();
    Ok(eval_predictions(&preds, &test.labels, c))
}

pub(crate) fn eval_predictions(preds: &[usize], truth: &[usize], c: usize) -> EvalReport {
    let mut confusion = vec![vec![0usize; c]; c];
    for (&p, &y) in preds.iter().zip(truth) {
        confusion[y][p] += 1;
    }
    let wrong = preds.iter().zip(truth).filter(|(p, y)| p != y).count();
    let per_class_accuracy = confusion
        .iter()
        .enumerate()
        .map(|(k, row)| {
            let n: usize = row.iter().sum();
            if n == 0 {
                f64::NAN
            } else {
                row[k] as f64 / n as f64
            }
        })
        .collect();
    EvalReport {
        error_rate: wrong as f64 / preds.len() as f64,
        confusion,
        per_class_accuracy,
    }
}

/// Final state of a run, enough to resume inference.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub config: TrainConfig,
    pub ema_model: MlpModel,
    pub model: MlpModel,
    pub state: ThresholdState,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutput {
    pub trace: Vec<MetricsRecord>,
    pub final_eval: EvalReport,
    /// Lowest error seen at any evaluation point of the trace.
    pub best_error: f64,
    pub checkpoint: Checkpoint,
}

impl RunOutput {
    pub fn final_record(&self) -> &MetricsRecord {
        self.trace.last().expect("a run has at least one iteration")
    }

    pub fn final_error(&self) -> f64 {
        self.final_eval.error_rate
    }
}

/// Trains from scratch for `config.iterations` steps, evaluating the
/// averaged model every `eval_every` steps and after the last one.
pub fn run(config: &TrainConfig, data: &SslData) -> Result<RunOutput> {
    config.validate()?;
    let mut learner = Learner::new(config, data.labeled.dim(), data.num_classes)?;
    let mut loader = SslLoader::new(data, config.batch_size, config.mu, config.seed.wrapping_add(1))?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(2));
    let mut trace = Vec::with_capacity(config.iterations);
    let mut best_error = f64::INFINITY;
    let mut final_eval = None;

    for k in 1..=config.iterations {
        let (lb, ub) = loader.next_batches(data)?;
        let report = train_step(&mut learner, &lb, &ub, config, &mut rng)?;
        let mut record = report.record;
        record.pseudo_label_acc = pseudo_label_accuracy(&report.mask, &ub, &data.unlabeled);
        if k % config.eval_every == 0 || k == config.iterations {
            let ev = evaluate(learner.ema.model(), &data.test)?;
            best_error = best_error.min(ev.error_rate);
            record.error_rate = Some(ev.error_rate);
            record.confusion = Some(ev.confusion.clone());
            final_eval = Some(ev);
        }
        trace.push(record);
    }

    Ok(RunOutput {
        trace,
        final_eval: final_eval.expect("last iteration is always evaluated"),
        best_error,
        checkpoint: Checkpoint {
            config: config.clone(),
            ema_model: learner.ema.ema_model(),
            model: learner.model,
            state: learner.state,
        },
    })
}

fn pseudo_label_accuracy(m: &MaskOutcome, batch: &UnlabeledBatch, truth: &Dataset) -> Option<f64> {
    let kept = m.count();
    if kept == 0 {
        return None;
    }
    let right = m
        .mask
        .iter()
        .zip(&m.hard_labels)
        .zip(&batch.indices)
        .filter(|((&keep, &label), &i)| keep && truth.labels[i] == label)
        .count();
    Some(right as f64 / kept as f64)
}

/// Flattens every parameter, in [`MlpModel::params`] order.
pub fn flatten_params(model: &MlpModel) -> Vec<f64> {
    model.params().iter().flat_map(|p| p.data().iter().copied()).collect()
}

/// Inverse of [`flatten_params`] for a model with the given widths.
pub fn model_from_flat(widths: &[usize], flat: &[f64]) -> Result<MlpModel> {
    contract!(widths.len() >= 2, "need input and output widths");
    let mut layers = Vec::new();
    let mut pos = 0;
    for w in widths.windows(2) {
        let (n_w, n_b) = (w[0] * w[1], w[1]);
        contract!(pos + n_w + n_b <= flat.len(), "parameter buffer too short");
        let weight = Tensor::new(vec![w[0], w[1]], flat[pos..pos + n_w].to_vec())?;
        let bias = Tensor::new(vec![w[1]], flat[pos + n_w..pos + n_w + n_b].to_vec())?;
        pos += n_w + n_b;
        layers.push(crate::ndcore::Dense { weight, bias });
    }
    contract!(pos == flat.len(), "parameter buffer has {} trailing values", flat.len() - pos);
    MlpModel::from_layers(layers)
}
