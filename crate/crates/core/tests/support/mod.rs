#![allow(clippy::needless_range_loop)]
// Shared by the core integration tests and the workspace acceptance target.
#![allow(dead_code)]

use freematch_core::adaptive_threshold::{mask, per_class_thresholds, SchemeId, ThresholdState};
use freematch_core::ndcore::{softmax, MlpModel, Tape, Tensor, Var};
use freematch_core::ssl_losses::{consistency_loss, fairness_loss, supervised_loss, FairnessVariant};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const FD_STEP: f64 = 1e-5;
pub const REL_TOL: f64 = 1e-4;
/// Denominator floor for the relative error, so exact zeros compare absolutely.
pub const REL_FLOOR: f64 = 1e-5;

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(REL_FLOOR)
}

pub fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(lo..hi)).collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

/// A scalar function of a list of leaves, rebuilt on a fresh tape per call.
pub trait Graph {
    fn leaves(&self) -> Vec<Tensor>;
    fn build(&self, tape: &mut Tape, leaves: &[Var]) -> Var;
}

pub fn eval_graph<G: Graph + ?Sized>(g: &G, leaves: &[Tensor]) -> f64 {
    let mut tape = Tape::new();
    let vars: Vec<Var> = leaves.iter().map(|t| tape.leaf(t)).collect();
    let out = g.build(&mut tape, &vars);
    tape.value(out).item()
}

#[derive(Debug, Clone, PartialEq)]
pub enum Check {
    /// Worst relative error over every coordinate.
    Pass(f64),
    Mismatch(String),
    /// The graph sits on a kink or a label flip: one-sided differences
    /// disagree with each other, so no derivative exists to compare against.
    NonSmooth,
}

/// Compares tape gradients with central differences over every coordinate
/// of every leaf.
pub fn gradcheck<G: Graph + ?Sized>(g: &G) -> Check {
    let leaves: Vec<Tensor> = g.leaves().into_iter().map(|t| t.with_requires_grad(true)).collect();
    let mut tape = Tape::new();
    let vars: Vec<Var> = leaves.iter().map(|t| tape.leaf(t)).collect();
    let out = g.build(&mut tape, &vars);
    let f0 = tape.value(out).item();
    if !f0.is_finite() {
        return Check::Mismatch(format!("non-finite graph value {f0}"));
    }
    if let Err(e) = tape.backward(out) {
        return Check::Mismatch(e.to_string());
    }
    let mut worst: f64 = 0.0;
    for (li, v) in vars.iter().enumerate() {
        let analytic = tape.grad(*v).map(|g| g.to_vec()).unwrap_or_else(|| vec![0.0; leaves[li].len()]);
        for j in 0..leaves[li].len() {
            let mut plus = leaves.clone();
            plus[li].data_mut()[j] += FD_STEP;
            let mut minus = leaves.clone();
            minus[li].data_mut()[j] -= FD_STEP;
            let (fp, fm) = (eval_graph(g, &plus), eval_graph(g, &minus));
            let fd = (fp - fm) / (2.0 * FD_STEP);
            let e = rel_err(analytic[j], fd);
            if e.is_nan() || e > REL_TOL {
                let right = (fp - f0) / FD_STEP;
                let left = (f0 - fm) / FD_STEP;
                if rel_err(right, left) > 1e-2 {
                    return Check::NonSmooth;
                }
                return Check::Mismatch(format!(
                    "leaf {li}[{j}]: autodiff {} vs finite difference {fd} (rel {e:.3e})",
                    analytic[j]
                ));
            }
            worst = worst.max(e);
        }
    }
    Check::Pass(worst)
}

#[derive(Debug, Clone, Copy)]
enum Step {
    Add,
    Sub,
    Mul,
    Scale(f64),
    Relu,
    ExpDamped,
    Softmax,
    LogSoftmax,
    LogPositive,
    DivByExp,
    MatMul,
    AddBias,
    DivScalar,
}

#[derive(Debug, Clone, Copy)]
enum Finish {
    Sum,
    Mean,
    GatherMean,
}

/// A random chain of tape ops over four leaves: `x, y: [r, c]`, `w: [c, c]`, `b: [c]`.
#[derive(Debug, Clone)]
pub struct RandomGraph {
    leaves: Vec<Tensor>,
    steps: Vec<Step>,
    finish: Finish,
    gather_idx: Vec<usize>,
}

impl RandomGraph {
    pub fn generate(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let r = rng.random_range(1..4);
        let c = rng.random_range(2..5);
        let leaves = vec![
            rand_tensor(&mut rng, &[r, c], -1.0, 1.0),
            rand_tensor(&mut rng, &[r, c], -1.0, 1.0),
            rand_tensor(&mut rng, &[c, c], -0.8, 0.8),
            rand_tensor(&mut rng, &[c], -0.5, 0.5),
        ];
        let n = rng.random_range(1..8);
        let steps = (0..n)
            .map(|_| match rng.random_range(0..13) {
                0 => Step::Add,
                1 => Step::Sub,
                2 => Step::Mul,
                3 => Step::Scale(rng.random_range(-2.0..2.0)),
                4 => Step::Relu,
                5 => Step::ExpDamped,
                6 => Step::Softmax,
                7 => Step::LogSoftmax,
                8 => Step::LogPositive,
                9 => Step::DivByExp,
                10 => Step::MatMul,
                11 => Step::AddBias,
                _ => Step::DivScalar,
            })
            .collect();
        let finish = match rng.random_range(0..3) {
            0 => Finish::Sum,
            1 => Finish::Mean,
            _ => Finish::GatherMean,
        };
        let gather_idx = (0..r).map(|_| rng.random_range(0..c)).collect();
        Self {
            leaves,
            steps,
            finish,
            gather_idx,
        }
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }
}

impl Graph for RandomGraph {
    fn leaves(&self) -> Vec<Tensor> {
        self.leaves.clone()
    }

    fn build(&self, tape: &mut Tape, v: &[Var]) -> Var {
        let (y, w, b) = (v[1], v[2], v[3]);
        let mut x = v[0];
        for step in &self.steps {
            x = match *step {
                Step::Add => tape.add(x, y).unwrap(),
                Step::Sub => tape.sub(x, y).unwrap(),
                Step::Mul => tape.mul(x, y).unwrap(),
                Step::Scale(k) => tape.scale(x, k),
                Step::Relu => tape.relu(x),
                Step::ExpDamped => {
                    let s = tape.scale(x, 0.5);
                    tape.exp(s)
                }
                Step::Softmax => tape.softmax(x).unwrap(),
                Step::LogSoftmax => tape.log_softmax(x).unwrap(),
                Step::LogPositive => {
                    // log of a strictly positive transform of x
                    let p = tape.softmax(x).unwrap();
                    tape.log(p)
                }
                Step::DivByExp => {
                    let e = tape.exp(y);
                    tape.div(x, e).unwrap()
                }
                Step::MatMul => tape.matmul(x, w).unwrap(),
                Step::AddBias => tape.add_bias(x, b).unwrap(),
                Step::DivScalar => {
                    let s = tape.scale(y, 0.3);
                    let e = tape.exp(s);
                    let d = tape.sum(e);
                    tape.div_scalar(x, d).unwrap()
                }
            };
        }
        match self.finish {
            Finish::Sum => tape.sum(x),
            Finish::Mean => tape.mean(x),
            Finish::GatherMean => {
                let g = tape.gather(x, &self.gather_idx).unwrap();
                tape.mean(g)
            }
        }
    }
}

/// `l_s + w_u l_u + w_f l_f` for a small MLP, differentiated with respect to
/// every weight and bias. Weak-branch probabilities and the running
/// threshold state are constants, as in training.
#[derive(Debug, Clone)]
pub struct CompositeLoss {
    model: MlpModel,
    x_lab: Tensor,
    labels: Vec<usize>,
    x_strong: Tensor,
    weak_probs: Tensor,
    state: ThresholdState,
    thresholds: Vec<f64>,
    fairness: FairnessVariant,
    w_u: f64,
    w_f: f64,
}

impl CompositeLoss {
    pub fn generate(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let c = rng.random_range(2..5);
        let hidden = rng.random_range(3..7);
        let mut model = MlpModel::xavier(&[2, hidden, hidden, c], &mut rng).unwrap();
        // zero biases would put dead-layer preactivations exactly on the ReLU kink
        for (i, p) in model.params_mut().into_iter().enumerate() {
            if i % 2 == 1 {
                p.data_mut().iter_mut().for_each(|v| *v = rng.random_range(-0.5..0.5));
            }
        }
        let nb = rng.random_range(1..4);
        let nu = rng.random_range(2..7);
        let x_lab = rand_tensor(&mut rng, &[nb, 2], -2.0, 2.0);
        let labels = (0..nb).map(|_| rng.random_range(0..c)).collect();
        let x_strong = rand_tensor(&mut rng, &[nu, 2], -2.0, 2.0);
        let weak_probs = softmax(&rand_tensor(&mut rng, &[nu, c], -3.0, 3.0)).unwrap();

        let mut state = ThresholdState::new(c, 0.9).unwrap();
        for _ in 0..rng.random_range(1..20) {
            let batch = softmax(&rand_tensor(&mut rng, &[nu, c], -3.0, 3.0)).unwrap();
            state.observe(&batch, &SchemeId::Sat).unwrap();
        }
        // keep at least one row in the mask so the unlabeled terms are live
        let mut thresholds = per_class_thresholds(&state, &SchemeId::Sat);
        if mask(&weak_probs, &thresholds).unwrap().count() == 0 {
            thresholds.iter_mut().for_each(|t| *t = 0.0);
        }
        let fairness = if rng.random_bool(0.5) {
            FairnessVariant::Saf
        } else {
            FairnessVariant::UniformPrior
        };
        Self {
            model,
            x_lab,
            labels,
            x_strong,
            weak_probs,
            state,
            thresholds,
            fairness,
            w_u: rng.random_range(0.5..2.0),
            w_f: rng.random_range(0.01..0.5),
        }
    }
}

impl Graph for CompositeLoss {
    fn leaves(&self) -> Vec<Tensor> {
        self.model.params().into_iter().cloned().collect()
    }

    fn build(&self, tape: &mut Tape, params: &[Var]) -> Var {
        let xl = tape.constant(self.x_lab.clone());
        let logits = self.model.forward_on(tape, params, xl).unwrap();
        let l_s = supervised_loss(tape, logits, &self.labels).unwrap();
        let xs = tape.constant(self.x_strong.clone());
        let strong = self.model.forward_on(tape, params, xs).unwrap();
        let (l_u, _) = consistency_loss(tape, &self.weak_probs, strong, &self.thresholds).unwrap();
        let l_f = fairness_loss(
            tape,
            self.fairness,
            &self.state,
            &self.weak_probs,
            strong,
            &self.thresholds,
        )
        .unwrap();
        let a = tape.scale(l_u, self.w_u);
        let b = tape.scale(l_f, self.w_f);
        let t = tape.add(l_s, a).unwrap();
        tape.add(t, b).unwrap()
    }
}

/// Checks `n` random graphs, one in four of them the composite training
/// loss. Graphs drawn on a non-differentiable point are replaced by the next
/// seed; returns the worst relative error and the number replaced.
pub fn gradient_suite(n: usize, seed: u64) -> Result<(f64, usize), String> {
    let mut worst: f64 = 0.0;
    let (mut checked, mut skipped) = (0, 0);
    let mut s = seed.wrapping_mul(1_000_003);
    while checked < n {
        s = s.wrapping_add(1);
        let check = if checked % 4 == 3 {
            gradcheck(&CompositeLoss::generate(s))
        } else {
            gradcheck(&RandomGraph::generate(s))
        };
        match check {
            Check::Pass(e) => {
                worst = worst.max(e);
                checked += 1;
            }
            Check::NonSmooth => skipped += 1,
            Check::Mismatch(m) => return Err(format!("graph {s}: {m}")),
        }
    }
    Ok((worst, skipped))
}

pub fn random_probs(rng: &mut ChaCha8Rng, rows: usize, c: usize) -> Tensor {
    let spread = rng.random_range(0.1..8.0);
    softmax(&rand_tensor(rng, &[rows, c], -spread, spread)).unwrap()
}

/// Simplex and range invariants of the threshold state after `steps` random
/// updates under random schemes.
pub fn threshold_state_invariants(steps: usize, seed: u64) -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let c = 2 + (seed % 9) as usize;
    let lambda = [0.0, 0.5, 0.9, 0.999][(seed % 4) as usize];
    let mut state = ThresholdState::new(c, lambda).unwrap();
    let schemes = [
        SchemeId::Sat,
        SchemeId::GlobalOnly,
        SchemeId::Fixed { tau: 0.95 },
        SchemeId::LocalOnly { tau: 0.95 },
    ];
    for step in 0..steps {
        let rows = rng.random_range(1..33);
        let probs = random_probs(&mut rng, rows, c);
        let scheme = &schemes[rng.random_range(0..schemes.len())];
        state.observe(&probs, scheme).unwrap();
        let ctx = |what: &str| format!("step {step}, C={c}, lambda={lambda}: {what}");
        let p_sum: f64 = state.p_local.iter().sum();
        let h_sum: f64 = state.hist.iter().sum();
        if (p_sum - 1.0).abs() > 1e-9 {
            return Err(ctx(&format!("p_local sums to {p_sum}")));
        }
        if (h_sum - 1.0).abs() > 1e-9 {
            return Err(ctx(&format!("hist sums to {h_sum}")));
        }
        if state.p_local.iter().chain(&state.hist).any(|&v| !(0.0..=1.0).contains(&v)) {
            return Err(ctx("p_local or hist entry outside [0, 1]"));
        }
        let lo = 1.0 / c as f64 - 1e-12;
        if !(lo..=1.0 + 1e-12).contains(&state.tau_global) {
            return Err(ctx(&format!("tau_global {} outside [1/C, 1]", state.tau_global)));
        }
        let th = per_class_thresholds(&state, &SchemeId::Sat);
        if th.iter().any(|&t| !(0.0..=state.tau_global + 1e-15).contains(&t)) {
            return Err(ctx("SAT threshold outside [0, tau_global]"));
        }
        if state.t != step as u64 + 1 {
            return Err(ctx("step counter drifted"));
        }
    }
    Ok(())
}

/// Largest gap between the recursive global/local/hist statistics and their
/// closed-form geometric sums over the same inputs.
pub fn ema_closed_form_gap(steps: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let c = 2 + (seed % 5) as usize;
    let lambda = rng.random_range(0.5..0.999);
    let mut state = ThresholdState::new(c, lambda).unwrap();
    let mut max_conf = Vec::new();
    let mut mean_probs: Vec<Vec<f64>> = Vec::new();
    let mut hists: Vec<Vec<f64>> = Vec::new();
    for _ in 0..steps {
        let rows = rng.random_range(1..17);
        let probs = random_probs(&mut rng, rows, c);
        let mut m = 0.0;
        let mut mean = vec![0.0; c];
        let mut h = vec![0.0; c];
        for b in 0..rows {
            let row = probs.row(b);
            let (arg, top) = row.iter().enumerate().fold((0, f64::NEG_INFINITY), |acc, (i, &p)| {
                if p > acc.1 {
                    (i, p)
                } else {
                    acc
                }
            });
            m += top / rows as f64;
            h[arg] += 1.0 / rows as f64;
            for k in 0..c {
                mean[k] += row[k] / rows as f64;
            }
        }
        max_conf.push(m);
        mean_probs.push(mean);
        hists.push(h);
        state.observe(&probs, &SchemeId::Sat).unwrap();
    }
    let t = steps as i32;
    let init = 1.0 / c as f64;
    let closed = |xs: &dyn Fn(usize) -> f64| {
        lambda.powi(t) * init
            + (1.0 - lambda) * (0..steps).map(|i| lambda.powi(t - 1 - i as i32) * xs(i)).sum::<f64>()
    };
    let mut gap = (closed(&|i| max_conf[i]) - state.tau_global).abs();
    for k in 0..c {
        gap = gap.max((closed(&|i| mean_probs[i][k]) - state.p_local[k]).abs());
        gap = gap.max((closed(&|i| hists[i][k]) - state.hist[k]).abs());
    }
    gap
}

/// Raising any subset of per-class thresholds never admits a new row.
pub fn mask_monotonicity(batches: usize, seed: u64) -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for i in 0..batches {
        let c = rng.random_range(2..11);
        let rows = rng.random_range(1..65);
        let probs = random_probs(&mut rng, rows, c);
        let low: Vec<f64> = (0..c).map(|_| rng.random_range(0.0..1.0)).collect();
        let high: Vec<f64> = low
            .iter()
            .map(|&t| if rng.random_bool(0.5) { t + rng.random_range(0.0..(1.0 - t)) } else { t })
            .collect();
        let a = mask(&probs, &low).unwrap();
        let b = mask(&probs, &high).unwrap();
        if a.hard_labels != b.hard_labels {
            return Err(format!("batch {i}: hard labels depend on thresholds"));
        }
        if b.mask.iter().zip(&a.mask).any(|(&hi, &lo)| hi && !lo) {
            return Err(format!("batch {i}: raising a threshold admitted a row"));
        }
    }
    Ok(())
}
