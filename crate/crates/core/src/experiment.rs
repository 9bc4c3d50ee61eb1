//! One fully-specified training run, and multi-seed comparisons of objectives.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::data::{generate_synthetic, load_manifest, Split, SyntheticSpec};
use crate::error::{Error, Result};
use crate::eval::{evaluate, EvalConfig, EvalSummary};
use crate::losses::{LossConfig, Objective};
use crate::nn::{EncoderStack, Mlp, ModelConfig};
use crate::rng::{self, streams};
use crate::train::{train, OptimConfig, TrainOutcome};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum DataSource {
    Synthetic(SyntheticSpec),
    /// Path to a JSON manifest of IDX/TNSR files.
    Manifest(PathBuf),
}

impl Default for DataSource {
    fn default() -> Self {
        DataSource::Synthetic(SyntheticSpec::default())
    }
}

impl DataSource {
    pub fn load(&self) -> Result<Split> {
        match self {
            DataSource::Synthetic(spec) => generate_synthetic(spec),
            DataSource::Manifest(path) => load_manifest(path),
        }
    }
}

/// Everything needed to reproduce a run bit for bit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Experiment {
    pub data: DataSource,
    pub model: ModelConfig,
    pub loss: LossConfig,
    pub optim: OptimConfig,
    pub eval: EvalConfig,
}

impl Default for Experiment {
    fn default() -> Self {
        Self::vanilla(Objective::Triangle)
    }
}

#[derive(Debug, Clone)]
pub struct RunResult {
    pub outcome: TrainOutcome,
    /// Evaluation of the final parameters on the test split.
    pub final_eval: EvalSummary,
}

impl Experiment {
    /// Defaults for the ten-class synthetic alignment task with a 3-d latent space.
    pub fn vanilla(objective: Objective) -> Self {
        Self {
            data: DataSource::Synthetic(SyntheticSpec::default()),
            model: ModelConfig::default(),
            loss: LossConfig {
                objective,
                // the regularizer is a downstream device; from-scratch runs use plain area
                alpha_t2d: 0.0,
                ..LossConfig::default()
            },
            optim: OptimConfig {
                steps: 1500,
                eval_every: 25,
                batch_size: 128,
                ..OptimConfig::default()
            },
            eval: EvalConfig::default(),
        }
    }

    /// Same experiment with every seed (data, init, batching) replaced.
    pub fn with_seed(&self, seed: u64) -> Self {
        let mut e = self.clone();
        if let DataSource::Synthetic(spec) = &mut e.data {
            spec.seed = seed;
        }
        e.optim.seed = seed;
        e
    }

    /// Switches objective, dropping the cosine regularizer for baselines.
    pub fn with_objective(&self, objective: Objective) -> Self {
        let mut e = self.clone();
        e.loss.objective = objective;
        if objective != Objective::Triangle {
            e.loss.alpha_t2d = 0.0;
            e.loss.alpha_d2t = 0.0;
        }
        e
    }

    pub fn validate(&self) -> Result<()> {
        self.loss.validate()?;
        self.optim.validate()?;
        if self.model.latent_dim < 2 {
            return Err(Error::contract("latent_dim must be >= 2"));
        }
        if self.loss.objective == Objective::GramVolume && self.model.latent_dim < 3 {
            return Err(Error::contract("the gram volume objective needs latent_dim >= 3"));
        }
        Ok(())
    }

    pub fn build_models(&self, split: &Split) -> Result<(EncoderStack, Option<Mlp>)> {
        let stack = EncoderStack::new(split.train.dims(), &self.model, self.optim.seed)?;
        let matcher = if self.loss.dtm_enabled {
            let mut widths = vec![3 * self.model.latent_dim];
            widths.extend(&self.model.matcher_hidden);
            widths.push(1);
            Some(Mlp::new(
                &widths,
                self.model.activation,
                false,
                &mut rng::stream(self.optim.seed, streams::MATCHER_INIT),
            )?)
        } else {
            None
        };
        Ok((stack, matcher))
    }

    pub fn run_on(&self, split: &Split) -> Result<RunResult> {
        self.validate()?;
        let (stack, matcher) = self.build_models(split)?;
        let outcome = train(stack, matcher, &split.train, &split.test, &self.loss, &self.optim, &self.eval)?;
        let final_eval = evaluate(
            &outcome.stack,
            &split.test,
            self.loss.objective,
            self.loss.alpha_t2d,
            self.loss.alpha_d2t,
            self.loss.anchor,
            &self.eval.ks,
        )?;
        Ok(RunResult { outcome, final_eval })
    }

    pub fn run(&self) -> Result<RunResult> {
        self.run_on(&self.data.load()?)
    }
}

/// Step at which a curve first reaches `threshold`, if ever.
pub fn steps_to_threshold(curve: &[(usize, f64)], threshold: f64) -> Option<usize> {
    curve.iter().find(|(_, r)| *r >= threshold).map(|(s, _)| *s)
}

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        0.5 * (xs[n / 2 - 1] + xs[n / 2])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedRun {
    pub seed: u64,
    /// `(step, mean test R@1)` at every evaluation.
    pub curve: Vec<(usize, f64)>,
    /// `(step, mean positive-pair area)` at every evaluation.
    pub area_curve: Vec<(usize, f64)>,
    pub steps_to_threshold: Option<usize>,
    pub final_r1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveConvergence {
    pub objective: Objective,
    pub runs: Vec<SeedRun>,
    /// Pointwise median over seeds.
    pub median_curve: Vec<(usize, f64)>,
    /// Median over seeds, counting a seed that never crosses as infinitely
    /// slow; `None` when at least half of the seeds never cross.
    pub median_steps_to_threshold: Option<f64>,
    pub median_final_r1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceReport {
    pub threshold: f64,
    pub seeds: Vec<u64>,
    pub objectives: Vec<ObjectiveConvergence>,
}

impl ConvergenceReport {
    pub fn get(&self, objective: Objective) -> Option<&ObjectiveConvergence> {
        self.objectives.iter().find(|o| o.objective == objective)
    }

    /// Long-format rows `(step, objective, seed, metric, value)`.
    pub fn csv_rows(&self) -> Vec<(usize, String, u64, &'static str, f64)> {
        let mut rows = Vec::new();
        for o in &self.objectives {
            for run in &o.runs {
                for &(step, r1) in &run.curve {
                    rows.push((step, o.objective.to_string(), run.seed, "r1", r1));
                }
                for &(step, a) in &run.area_curve {
                    rows.push((step, o.objective.to_string(), run.seed, "mean_positive_area", a));
                }
            }
        }
        rows
    }
}

/// Trains every objective on every seed (the data for a given seed is shared
/// across objectives) and summarizes R@1 curves.
pub fn compare_convergence(
    objectives: &[Objective],
    base: &Experiment,
    seeds: &[u64],
    threshold: f64,
) -> Result<ConvergenceReport> {
    if objectives.len() < 2 {
        return Err(Error::contract("convergence comparison needs at least 2 objectives"));
    }
    if seeds.is_empty() {
        return Err(Error::contract("convergence comparison needs at least 1 seed"));
    }
    let mut per_objective: Vec<Vec<SeedRun>> = vec![Vec::new(); objectives.len()];
    for &seed in seeds {
        let seeded = base.with_seed(seed);
        let split = seeded.data.load()?;
        for (k, &objective) in objectives.iter().enumerate() {
            let result = seeded.with_objective(objective).run_on(&split)?;
            per_objective[k].push(seed_run(seed, &result, threshold));
        }
    }
    let objectives = objectives
        .iter()
        .zip(per_objective)
        .map(|(&objective, runs)| summarize(objective, runs))
        .collect();
    Ok(ConvergenceReport {
        threshold,
        seeds: seeds.to_vec(),
        objectives,
    })
}

pub fn seed_run(seed: u64, result: &RunResult, threshold: f64) -> SeedRun {
    let evals: Vec<_> = result.outcome.log.evals().collect();
    let curve: Vec<(usize, f64)> = evals.iter().map(|e| (e.step, e.r1)).collect();
    SeedRun {
        seed,
        steps_to_threshold: steps_to_threshold(&curve, threshold),
        final_r1: curve.last().map_or(0.0, |c| c.1),
        area_curve: evals.iter().map(|e| (e.step, e.mean_positive_area)).collect(),
        curve,
    }
}

pub fn summarize(objective: Objective, runs: Vec<SeedRun>) -> ObjectiveConvergence {
    let len = runs.iter().map(|r| r.curve.len()).min().unwrap_or(0);
    let median_curve = (0..len)
        .map(|i| (runs[0].curve[i].0, median(runs.iter().map(|r| r.curve[i].1).collect())))
        .collect();
    let steps = runs
        .iter()
        .map(|r| r.steps_to_threshold.map_or(f64::INFINITY, |s| s as f64))
        .collect();
    let med = median(steps);
    ObjectiveConvergence {
        objective,
        median_steps_to_threshold: med.is_finite().then_some(med),
        median_final_r1: median(runs.iter().map(|r| r.final_r1).collect()),
        median_curve,
        runs,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn threshold_crossing() {
        let curve = [(0, 0.1), (20, 0.85), (40, 0.91), (60, 0.95)];
        assert_eq!(steps_to_threshold(&curve, 0.9), Some(40));
        assert_eq!(steps_to_threshold(&curve, 0.99), None);
        assert_eq!(steps_to_threshold(&[(0, 0.95)], 0.9), Some(0));
    }

    #[test]
    fn median_counts_missing_as_slow() {
        let run = |s: Option<usize>| SeedRun {
            seed: 0,
            curve: vec![(0, 0.5)],
            area_curve: vec![],
            steps_to_threshold: s,
            final_r1: 0.5,
        };
        let o = summarize(Objective::Triangle, vec![run(Some(10)), run(None), run(Some(30))]);
        assert_eq!(o.median_steps_to_threshold, Some(30.0));
        let o = summarize(Objective::Triangle, vec![run(Some(10)), run(None), run(None)]);
        assert_eq!(o.median_steps_to_threshold, None);
    }

    #[test]
    fn requires_two_objectives() {
        let e = Experiment::default();
        assert!(compare_convergence(&[Objective::Triangle], &e, &[0], 0.9).is_err());
        assert!(compare_convergence(&[Objective::Triangle, Objective::SymileMip], &e, &[], 0.9).is_err());
    }
}
