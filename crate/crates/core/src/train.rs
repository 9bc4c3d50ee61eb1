//! Optimizers, learning-rate schedules and the training loop.

use serde::{Deserialize, Serialize};

use crate::data::{epoch_indices, Dataset};
use crate::error::{Error, Result};
use crate::eval::{evaluate, EvalConfig, EvalSummary};
use crate::losses::{sample_negatives, total_loss, LossConfig};
use crate::nn::{EncoderStack, Mlp, Modality, ParamView};
use crate::rng::{self, streams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Schedule {
    Constant,
    /// Decays linearly from `lr0` to 0 at `total_steps`.
    LinearDecay { total_steps: usize },
}

pub fn lr_at(schedule: Schedule, lr0: f64, step: usize) -> f64 {
    match schedule {
        Schedule::Constant => lr0,
        Schedule::LinearDecay { total_steps } => {
            if total_steps == 0 {
                return 0.0;
            }
            (lr0 * (1.0 - step as f64 / total_steps as f64)).max(0.0)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimConfig {
    pub optimizer: OptimizerKind,
    pub lr0: f64,
    /// `None` decays linearly over the whole step budget.
    pub schedule: Option<Schedule>,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub steps: usize,
    pub eval_every: usize,
    pub batch_size: usize,
    pub drop_last: bool,
    /// Global-norm gradient clip; `None` disables clipping.
    pub grad_clip: Option<f64>,
    pub seed: u64,
}

impl Default for OptimConfig {
    fn default() -> Self {
        Self {
            optimizer: OptimizerKind::Adam,
            lr0: 1e-4,
            schedule: None,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            steps: 1000,
            eval_every: 100,
            batch_size: 64,
            drop_last: true,
            grad_clip: Some(10.0),
            seed: 0,
        }
    }
}

impl OptimConfig {
    pub fn schedule(&self) -> Schedule {
        self.schedule.unwrap_or(Schedule::LinearDecay {
            total_steps: self.steps,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr0 >= 0.0 && self.lr0.is_finite()) {
            return Err(Error::contract(format!("lr0 must be finite and >= 0, got {}", self.lr0)));
        }
        if self.batch_size == 0 || self.eval_every == 0 {
            return Err(Error::contract("batch_size and eval_every must be >= 1"));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || self.adam_eps <= 0.0 {
            return Err(Error::contract("adam betas must lie in [0, 1) and eps be > 0"));
        }
        if let Some(c) = self.grad_clip {
            if !(c > 0.0) {
                return Err(Error::contract(format!("grad_clip must be > 0, got {c}")));
            }
        }
        Ok(())
    }
}

/// Plain gradient descent: `p <- p - lr * g`.
pub fn step_sgd(view: ParamView<'_>, lr: f64, grad_scale: f64) {
    for (p, g) in view.params.iter_mut().zip(view.grads) {
        *p -= lr * grad_scale * g;
    }
}

/// First and second moment estimates for one parameter block.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl AdamState {
    pub fn steps_taken(&self) -> u64 {
        self.t
    }
}

/// Bias-corrected Adam update; moments persist in `state` across calls.
pub fn step_adam(
    view: ParamView<'_>,
    state: &mut AdamState,
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    grad_scale: f64,
) {
    if state.m.len() != view.params.len() {
        state.m = vec![0.0; view.params.len()];
        state.v = vec![0.0; view.params.len()];
    }
    state.t += 1;
    let c1 = 1.0 - beta1.powi(state.t as i32);
    let c2 = 1.0 - beta2.powi(state.t as i32);
    for (((p, g), m), v) in view
        .params
        .iter_mut()
        .zip(view.grads)
        .zip(&mut state.m)
        .zip(&mut state.v)
    {
        let g = g * grad_scale;
        *m = beta1 * *m + (1.0 - beta1) * g;
        *v = beta2 * *v + (1.0 - beta2) * g * g;
        let m_hat = *m / c1;
        let v_hat = *v / c2;
        *p -= lr * m_hat / (v_hat.sqrt() + eps);
    }
}

/// Optimizer with one state slot per parameter block.
#[derive(Debug, Clone)]
pub struct Optimizer {
    config: OptimConfig,
    slots: Vec<AdamState>,
}

impl Optimizer {
    pub fn new(config: &OptimConfig, blocks: usize) -> Self {
        Self {
            config: config.clone(),
            slots: vec![AdamState::default(); blocks],
        }
    }

    pub fn step(&mut self, slot: usize, view: ParamView<'_>, lr: f64, grad_scale: f64) {
        let c = &self.config;
        match c.optimizer {
            OptimizerKind::Sgd => step_sgd(view, lr, grad_scale),
            OptimizerKind::Adam => step_adam(view, &mut self.slots[slot], lr, c.beta1, c.beta2, c.adam_eps, grad_scale),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub loss: f64,
    /// Named loss components in a fixed order.
    pub parts: Vec<(String, f64)>,
    pub lr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub step: usize,
    /// Recall@1 averaged over both retrieval directions.
    pub r1: f64,
    pub r5: f64,
    pub r10: f64,
    pub r1_t2d: f64,
    pub r1_d2t: f64,
    pub mean_positive_area: f64,
}

impl EvalRecord {
    fn from_summary(step: usize, s: &EvalSummary) -> Self {
        Self {
            step,
            r1: s.mean_recall(1),
            r5: s.mean_recall(5),
            r10: s.mean_recall(10),
            r1_t2d: s.t2d.recall(1),
            r1_d2t: s.d2t.recall(1),
            mean_positive_area: s.area.mean,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Record {
    Step(StepRecord),
    Eval(EvalRecord),
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RunLog {
    pub records: Vec<Record>,
}

impl RunLog {
    pub fn steps(&self) -> impl Iterator<Item = &StepRecord> {
        self.records.iter().filter_map(|r| match r {
            Record::Step(s) => Some(s),
            _ => None,
        })
    }

    pub fn evals(&self) -> impl Iterator<Item = &EvalRecord> {
        self.records.iter().filter_map(|r| match r {
            Record::Eval(e) => Some(e),
            _ => None,
        })
    }

    /// One JSON object per line.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&serde_json::to_string(r).expect("records serialize"));
            out.push('\n');
        }
        out
    }

    pub fn from_jsonl(text: &str) -> Result<Self> {
        let records = text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(serde_json::from_str)
            .collect::<std::result::Result<_, _>>()?;
        Ok(Self { records })
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters after the last step.
    pub stack: EncoderStack,
    pub matcher: Option<Mlp>,
    /// Highest mean test R@1 seen at an evaluation (earliest wins ties).
    pub best: EncoderStack,
    pub best_step: usize,
    pub best_r1: f64,
    pub log: RunLog,
}

fn check_finite(step: usize, name: &str, v: f64) -> Result<()> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite {
            step,
            component: name.to_string(),
        })
    }
}

/// Runs `optim.steps` updates of the total loss over seeded mini-batches of
/// `train_set`, evaluating on `eval_set` at step 0, every `eval_every` steps
/// and at the final step.
pub fn train(
    mut stack: EncoderStack,
    mut matcher: Option<Mlp>,
    train_set: &Dataset,
    eval_set: &Dataset,
    loss: &LossConfig,
    optim: &OptimConfig,
    eval: &EvalConfig,
) -> Result<TrainOutcome> {
    loss.validate()?;
    optim.validate()?;
    if train_set.is_empty() {
        return Err(Error::contract("training set is empty"));
    }
    let schedule = optim.schedule();
    let mut optimizer = Optimizer::new(optim, 4);
    let mut log = RunLog::default();
    let run_eval = |stack: &EncoderStack, step: usize| -> Result<EvalRecord> {
        let summary = evaluate(stack, eval_set, loss.objective, loss.alpha_t2d, loss.alpha_d2t, loss.anchor, &eval.ks)?;
        let rec = EvalRecord::from_summary(step, &summary);
        check_finite(step, "eval", rec.r1 + rec.mean_positive_area)?;
        Ok(rec)
    };

    let first = run_eval(&stack, 0)?;
    let mut best = (stack.clone(), 0, first.r1);
    log.records.push(Record::Eval(first));

    let use_matcher = loss.lambda != 0.0 && matcher.is_some();
    let mut step = 0;
    let mut epoch = 0u64;
    while step < optim.steps {
        let chunks = epoch_indices(train_set.len(), optim.batch_size, optim.seed, epoch, optim.drop_last)?;
        if chunks.is_empty() {
            return Err(Error::contract(format!(
                "batch size {} exceeds the {} training rows with drop_last",
                optim.batch_size,
                train_set.len()
            )));
        }
        for rows in chunks {
            if step >= optim.steps {
                break;
            }
            let lr = lr_at(schedule, optim.lr0, step);
            let batch = train_set.select(&rows);
            stack.zero_grads();
            if let Some(m) = matcher.as_mut() {
                m.zero_grads();
            }
            let (emb, tapes) = stack.embed_batch(&batch.text_inputs, &batch.video_inputs, &batch.audio_inputs)?;
            let out = if use_matcher {
                let negatives = sample_negatives(
                    &batch.pair_ids,
                    &mut rng::stream(optim.seed, streams::NEGATIVES_BASE + step as u64),
                );
                total_loss(&emb, loss, matcher.as_mut().map(|m| (m, negatives.as_slice())))?
            } else {
                total_loss(&emb, loss, None)?
            };
            for (name, v) in &out.parts {
                check_finite(step + 1, name, *v)?;
            }
            check_finite(step + 1, "loss", out.value)?;
            stack.backward_batch(&tapes, &out.grads)?;

            let mut sq: f64 = stack.flat_grads().iter().map(|g| g * g).sum();
            if use_matcher {
                sq += matcher.as_ref().unwrap().grads().iter().map(|g| g * g).sum::<f64>();
            }
            check_finite(step + 1, "gradient", sq)?;
            let norm = sq.sqrt();
            let scale = match optim.grad_clip {
                Some(c) if norm > c => c / norm,
                _ => 1.0,
            };
            for (slot, m) in Modality::ALL.into_iter().enumerate() {
                optimizer.step(slot, stack.encoder_mut(m).view(), lr, scale);
            }
            if use_matcher {
                optimizer.step(3, matcher.as_mut().unwrap().view(), lr, scale);
            }
            step += 1;
            log.records.push(Record::Step(StepRecord {
                step,
                loss: out.value,
                parts: out.parts,
                lr,
            }));
            if step % optim.eval_every == 0 || step == optim.steps {
                let rec = run_eval(&stack, step)?;
                if rec.r1 > best.2 {
                    best = (stack.clone(), step, rec.r1);
                }
                log.records.push(Record::Eval(rec));
            }
        }
        epoch += 1;
    }
    Ok(TrainOutcome {
        stack,
        matcher,
        best: best.0,
        best_step: best.1,
        best_r1: best.2,
        log,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lr_schedule() {
        let s = Schedule::LinearDecay { total_steps: 10_000 };
        assert_eq!(lr_at(s, 1e-4, 0), 1e-4);
        assert_eq!(lr_at(s, 1e-4, 10_000), 0.0);
        assert_eq!(lr_at(s, 1e-4, 20_000), 0.0);
        assert!((lr_at(s, 1e-4, 2500) - 7.5e-5).abs() < 1e-18);
        assert_eq!(lr_at(Schedule::Constant, 0.3, 99), 0.3);
    }

    #[test]
    fn sgd_examples() {
        let mut params = [1.0];
        step_sgd(ParamView { params: &mut params, grads: &[1.0] }, 0.1, 1.0);
        assert_eq!(params, [0.9]);
        let mut params = [0.5, -2.0];
        step_sgd(ParamView { params: &mut params, grads: &[0.0, 0.0] }, 0.1, 1.0);
        assert_eq!(params, [0.5, -2.0]);
    }

    #[test]
    fn adam_zero_grad_is_noop() {
        let mut params = [0.25, 3.0];
        let mut st = AdamState::default();
        step_adam(ParamView { params: &mut params, grads: &[0.0, 0.0] }, &mut st, 0.1, 0.9, 0.999, 1e-8, 1.0);
        assert_eq!(params, [0.25, 3.0]);
    }

    #[test]
    fn adam_three_step_trace() {
        // hand-stepped reference with g = 1 at every step
        let (b1, b2, eps, lr) = (0.9f64, 0.999f64, 1e-8, 0.1);
        let mut expect = 0.0;
        let (mut m, mut v) = (0.0, 0.0);
        let mut trace = Vec::new();
        for t in 1..=3 {
            m = b1 * m + (1.0 - b1);
            v = b2 * v + (1.0 - b2);
            let m_hat = m / (1.0 - b1.powi(t));
            let v_hat = v / (1.0 - b2.powi(t));
            expect -= lr * m_hat / (v_hat.sqrt() + eps);
            trace.push(expect);
        }
        // with constant unit gradients both corrected moments are 1
        for (t, x) in trace.iter().enumerate() {
            assert!((x + 0.1 * (t + 1) as f64 / (1.0 + 1e-8)).abs() < 1e-12);
        }
        let mut params = [0.0];
        let mut st = AdamState::default();
        for want in trace {
            step_adam(ParamView { params: &mut params, grads: &[1.0] }, &mut st, lr, b1, b2, eps, 1.0);
            assert!((params[0] - want).abs() < 1e-12);
        }
        assert_eq!(st.steps_taken(), 3);
    }

    #[test]
    fn runlog_jsonl_round_trip() {
        let log = RunLog {
            records: vec![
                Record::Eval(EvalRecord {
                    step: 0,
                    r1: 0.1,
                    r5: 0.5,
                    r10: 1.0,
                    r1_t2d: 0.1,
                    r1_d2t: 0.1,
                    mean_positive_area: 0.6,
                }),
                Record::Step(StepRecord {
                    step: 1,
                    loss: 2.3,
                    parts: vec![("d2t".into(), 2.2)],
                    lr: 1e-4,
                }),
            ],
        };
        let text = log.to_jsonl();
        assert_eq!(text.lines().count(), 2);
        assert!(text.starts_with("{\"kind\":\"eval\""));
        assert_eq!(RunLog::from_jsonl(&text).unwrap(), log);
    }
}
