//! Co-evolution driver over the synthetic world.
//!
//! Coder and tester are categorical policies over latent classes (solution
//! archetypes and test kinds). Each step samples a batch of problems,
//! rolls out `n` solutions and `n` tests per problem, builds the passing
//! matrix, runs the selector, converts the selection into role rewards,
//! normalizes them within each problem's group, and moves each sampled
//! class's logit by `lr · mean advantage`. Even steps update the coder,
//! odd steps the tester.
//!
//! Every random draw is seeded from `(seed, step, slot, purpose)`, so a run
//! is a pure function of its configuration no matter how many worker
//! threads evaluate problems.

use std::collections::BTreeMap;

use indexmap::IndexMap;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::calibration::{calibrate, CalibrationError, GridCell, PriorGrid};
use crate::execenv::{
    execute_grid, matrix_from_outcomes, Archetype, ExecError, Outcome, ProblemShape, SolutionArtifact,
    SyntheticProblem, SyntheticWorld, TestArtifact, TestKind,
};
use crate::matrix::{rank, PassingMatrix};
use crate::metrics::{MetricsError, TestQualityReport};
use crate::rewards::{
    coder_rewards, group_normalized_advantages, lambda_weight, pick_proxy_solution, tester_reward, CurriculumSchedule,
    RewardError, RewardRecord, Role, TERM_CODER,
};
use crate::seed::{combine, hash_str};
use crate::selectors::{ConsensusSelection, PriorConfig, Selector, SelectorKind};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Exec(#[from] ExecError),
    #[error(transparent)]
    Reward(#[from] RewardError),
    #[error(transparent)]
    Calibration(#[from] CalibrationError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("noise sample of {requested} exceeds the training pool of {available}")]
    SampleTooLarge { requested: usize, available: usize },
    #[error("training pool is empty after pre-filtering")]
    EmptyPool,
    #[error("step sink failed: {0}")]
    Sink(String),
    #[error("step {step} is outside the configured {total} steps")]
    StepOutOfRange { step: usize, total: usize },
}

/// Categorical policy; sampling distribution is `softmax(logits)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyState {
    pub role: Role,
    pub logits: IndexMap<String, f64>,
}

impl PolicyState {
    pub fn coder(archetype_pool: u32, correct_logit: f64, wrong_logit: f64) -> Self {
        let mut logits = IndexMap::new();
        logits.insert(Archetype::Correct.to_string(), correct_logit);
        for a in 0..archetype_pool {
            logits.insert(Archetype::Wrong(a).to_string(), wrong_logit);
        }
        Self {
            role: Role::Coder,
            logits,
        }
    }

    pub fn tester(init: &TesterLogits) -> Self {
        let logits = TestKind::ALL
            .into_iter()
            .map(|k| (k.name().to_owned(), init.get(k)))
            .collect();
        Self {
            role: Role::Tester,
            logits,
        }
    }

    pub fn logit(&self, class: &str) -> f64 {
        self.logits.get(class).copied().unwrap_or(0.0)
    }

    /// Softmax over all classes, in declaration order.
    pub fn distribution(&self) -> Vec<(String, f64)> {
        let max = self.logits.values().copied().fold(f64::NEG_INFINITY, f64::max);
        let weights: Vec<f64> = self.logits.values().map(|&l| (l - max).exp()).collect();
        let z: f64 = weights.iter().sum();
        self.logits.keys().cloned().zip(weights.into_iter().map(|w| w / z)).collect()
    }

    pub fn is_finite(&self) -> bool {
        self.logits.values().all(|l| l.is_finite())
    }

    fn class_bits(&self) -> Vec<u64> {
        self.logits.values().map(|l| l.to_bits()).collect()
    }
}

fn sample_index(rng: &mut ChaCha8Rng, logits: &[f64]) -> usize {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = logits.iter().map(|&l| (l - max).exp()).collect();
    let z: f64 = weights.iter().sum();
    let mut u = rng.random::<f64>() * z;
    for (i, w) in weights.iter().enumerate() {
        if u < *w {
            return i;
        }
        u -= w;
    }
    weights.len() - 1
}

/// Coder classes available on a problem, with their effective logits.
fn coder_choices(problem: &SyntheticProblem, coder: &PolicyState, difficulty_scale: f64) -> Vec<(Archetype, f64)> {
    let wrong = |a: u32| (Archetype::Wrong(a), coder.logit(&Archetype::Wrong(a).to_string()));
    match problem.shape {
        ProblemShape::AllPass => vec![(Archetype::Correct, 0.0)],
        ProblemShape::AllFail => vec![wrong(problem.wrong_archetypes[0])],
        ProblemShape::Regular => {
            let shift = difficulty_scale * (0.5 - problem.difficulty);
            let mut v = vec![(Archetype::Correct, coder.logit("correct") + shift)];
            v.extend(problem.wrong_archetypes.iter().map(|&a| wrong(a)));
            v
        }
    }
}

/// Probability that the coder emits a correct solution for `problem`.
pub fn correct_probability(problem: &SyntheticProblem, coder: &PolicyState, difficulty_scale: f64) -> f64 {
    let choices = coder_choices(problem, coder, difficulty_scale);
    let max = choices.iter().map(|c| c.1).fold(f64::NEG_INFINITY, f64::max);
    let z: f64 = choices.iter().map(|c| (c.1 - max).exp()).sum();
    choices
        .iter()
        .filter(|c| c.0.is_correct())
        .map(|c| (c.1 - max).exp() / z)
        .sum()
}

pub fn sample_solutions(
    problem: &SyntheticProblem,
    coder: &PolicyState,
    difficulty_scale: f64,
    n: usize,
    tag: &str,
    rng: &mut ChaCha8Rng,
) -> Vec<SolutionArtifact> {
    let choices = coder_choices(problem, coder, difficulty_scale);
    let logits: Vec<f64> = choices.iter().map(|c| c.1).collect();
    (0..n)
        .map(|i| {
            let arch = choices[sample_index(rng, &logits)].0;
            SolutionArtifact::new(format!("{}/{tag}/s{i}", problem.problem_id), arch, &problem.problem_id)
        })
        .collect()
}

pub fn sample_tests(
    problem: &SyntheticProblem,
    tester: &PolicyState,
    n: usize,
    tag: &str,
    rng: &mut ChaCha8Rng,
) -> Vec<TestArtifact> {
    let logits: Vec<f64> = TestKind::ALL.iter().map(|k| tester.logit(k.name())).collect();
    (0..n)
        .map(|j| {
            let kind = TestKind::ALL[sample_index(rng, &logits)];
            TestArtifact::new(format!("{}/{tag}/t{j}", problem.problem_id), kind, &problem.problem_id)
        })
        .collect()
}

/// Initial tester logits per test kind.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TesterLogits {
    pub invalid_format: f64,
    pub wrong_semantics: f64,
    pub trivial: f64,
    pub weak: f64,
    pub strong: f64,
}

impl Default for TesterLogits {
    fn default() -> Self {
        Self {
            invalid_format: 0.0,
            wrong_semantics: 0.0,
            trivial: 0.5,
            weak: 0.0,
            strong: -0.5,
        }
    }
}

impl TesterLogits {
    pub fn get(&self, kind: TestKind) -> f64 {
        match kind {
            TestKind::InvalidFormat => self.invalid_format,
            TestKind::WrongSemantics => self.wrong_semantics,
            TestKind::Trivial => self.trivial,
            TestKind::Weak => self.weak,
            TestKind::Strong => self.strong,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BaselineMode {
    None,
    Offline,
    Online,
}

impl std::str::FromStr for BaselineMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "none" => Ok(Self::None),
            "offline" => Ok(Self::Offline),
            "online" => Ok(Self::Online),
            other => Err(format!("unknown baseline `{other}` (expected none, offline or online)")),
        }
    }
}

/// Training configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub steps: usize,
    pub rollouts: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub tau: usize,
    pub selector: SelectorKind,
    pub beta0_exp: i32,
    pub alpha_xy_exp: i32,
    pub seed: u64,
    pub baseline: BaselineMode,
    /// Labeled problems reserved from the pool for prior calibration.
    pub calibration_size: usize,
    /// Independent labeled rollouts drawn per calibration problem.
    pub calibration_rollouts: usize,
    pub recalibrate_every: usize,
    pub noise_every: usize,
    pub noise_sample: usize,
    pub prefilter_repeats: usize,
    /// Problems evaluated for test accuracy / mutation score in the summary.
    pub quality_sample: usize,
    pub coder_correct_logit: f64,
    pub coder_wrong_logit: f64,
    pub tester_init: TesterLogits,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 150,
            rollouts: 8,
            batch_size: 32,
            learning_rate: 0.02,
            tau: 2,
            selector: SelectorKind::CodeT,
            beta0_exp: 4,
            alpha_xy_exp: 3,
            seed: 0,
            baseline: BaselineMode::None,
            calibration_size: 10,
            calibration_rollouts: 8,
            recalibrate_every: 1,
            noise_every: 10,
            noise_sample: 300,
            prefilter_repeats: 1,
            quality_sample: 50,
            coder_correct_logit: 0.0,
            coder_wrong_logit: 0.0,
            tester_init: TesterLogits::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let fail = |msg: String| Err(TrainError::Config(msg));
        if self.steps == 0 {
            return fail("train.steps must be at least 1".into());
        }
        if self.rollouts < 2 {
            return fail(format!("train.rollouts must be at least 2, got {}", self.rollouts));
        }
        if self.seed > i64::MAX as u64 {
            return fail(format!("train.seed must be at most {}, got {}", i64::MAX, self.seed));
        }
        if self.batch_size == 0 {
            return fail("train.batch_size must be at least 1".into());
        }
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return fail(format!("train.learning_rate must be finite and non-negative, got {}", self.learning_rate));
        }
        if self.recalibrate_every == 0 || self.noise_every == 0 || self.prefilter_repeats == 0 || self.calibration_rollouts == 0 {
            return fail(
                "train.recalibrate_every, train.noise_every, train.prefilter_repeats and train.calibration_rollouts must be at least 1".into(),
            );
        }
        if self.selector == SelectorKind::DyB4 && self.calibration_size == 0 {
            return fail("train.calibration_size must be positive for the dyb4 selector".into());
        }
        for (name, v) in [("coder_correct_logit", self.coder_correct_logit), ("coder_wrong_logit", self.coder_wrong_logit)] {
            if !v.is_finite() {
                return fail(format!("train.{name} must be finite"));
            }
        }
        if TestKind::ALL.iter().any(|&k| !self.tester_init.get(k).is_finite()) {
            return fail("train.tester_init logits must be finite".into());
        }
        Ok(())
    }

    /// Fixed prior `B4(beta0_exp, alpha_xy_exp)`.
    pub fn fixed_prior(&self) -> PriorConfig {
        PriorConfig::from_exponents(self.beta0_exp, self.alpha_xy_exp)
    }

    fn rng(&self, parts: &[u64]) -> ChaCha8Rng {
        let mut all = vec![self.seed];
        all.extend_from_slice(parts);
        ChaCha8Rng::seed_from_u64(combine(&all))
    }
}

/// One problem's rollout: artifacts, raw outcomes, and the matrix.
#[derive(Debug, Clone)]
pub struct Rollout {
    pub solutions: Vec<SolutionArtifact>,
    pub tests: Vec<TestArtifact>,
    pub outcomes: Vec<Vec<Outcome>>,
    pub matrix: PassingMatrix,
}

pub fn rollout(
    world: &SyntheticWorld,
    problem: &SyntheticProblem,
    coder: &PolicyState,
    tester: &PolicyState,
    n: usize,
    tag: &str,
    rng: &mut ChaCha8Rng,
) -> Result<Rollout, ExecError> {
    let solutions = sample_solutions(problem, coder, world.config().difficulty_scale, n, tag, rng);
    let tests = sample_tests(problem, tester, n, tag, rng);
    rollout_with_tests(world, problem, solutions, tests)
}

fn rollout_with_tests(
    world: &SyntheticWorld,
    problem: &SyntheticProblem,
    solutions: Vec<SolutionArtifact>,
    tests: Vec<TestArtifact>,
) -> Result<Rollout, ExecError> {
    let outcomes = execute_grid(world, &solutions, &tests)?;
    let matrix = matrix_from_outcomes(
        &problem.problem_id,
        solutions.iter().map(|s| s.id.clone()).collect(),
        tests.iter().map(|t| t.id.clone()).collect(),
        &outcomes,
    );
    Ok(Rollout {
        solutions,
        tests,
        outcomes,
        matrix,
    })
}

/// Keeps problems whose initial-policy passing matrix has rank `≥ τ`.
///
/// Each problem gets `repeats` independent rollouts; the mean rank is
/// compared against `τ`. Input order is preserved.
pub fn prefilter(
    world: &SyntheticWorld,
    problems: &[usize],
    policies: (&PolicyState, &PolicyState),
    tau: usize,
    rollouts: usize,
    repeats: usize,
    seed: u64,
) -> Result<Vec<usize>, ExecError> {
    if tau == 0 {
        return Ok(problems.to_vec());
    }
    let keep = problems
        .par_iter()
        .map(|&p| {
            let problem = &world.problems()[p];
            let mut total = 0usize;
            for r in 0..repeats {
                let mut rng = ChaCha8Rng::seed_from_u64(combine(&[seed, hash_str("prefilter"), p as u64, r as u64]));
                let ro = rollout(world, problem, policies.0, policies.1, rollouts, &format!("pre{r}"), &mut rng)?;
                total += rank(&ro.matrix);
            }
            Ok(total >= tau * repeats)
        })
        .collect::<Result<Vec<bool>, ExecError>>()?;
    Ok(problems.iter().zip(keep).filter_map(|(&p, k)| k.then_some(p)).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProblemStep {
    pub problem_id: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub selection: Option<ConsensusSelection>,
    pub classes: Vec<String>,
    pub rewards: Vec<RewardRecord>,
    pub advantages: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    pub step: usize,
    pub role: Role,
    pub lambda: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub prior: Option<GridCell>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub noise: Option<f64>,
    pub coder_correct_rate: f64,
    pub problems: Vec<ProblemStep>,
    pub coder_logits: IndexMap<String, f64>,
    pub tester_logits: IndexMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub seed: u64,
    pub selector: SelectorKind,
    pub baseline: BaselineMode,
    pub steps: usize,
    pub world_problems: usize,
    pub retained_problems: usize,
    pub training_pool: usize,
    pub tester_frozen: bool,
    pub final_noise: f64,
    pub final_coder_correct_rate: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub final_prior: Option<GridCell>,
    pub coder_distribution: Vec<(String, f64)>,
    pub tester_distribution: Vec<(String, f64)>,
    pub mean_acc: f64,
    pub mean_mut: f64,
    pub test_quality: Vec<TestQualityReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunLog {
    pub steps: Vec<StepLog>,
    pub summary: RunSummary,
}

/// Training state for one run.
#[derive(Debug, Clone)]
pub struct CoEvolution {
    world: SyntheticWorld,
    config: TrainConfig,
    coder: PolicyState,
    tester: PolicyState,
    initial_tester: PolicyState,
    retained: usize,
    pool: Vec<usize>,
    calibration: Vec<usize>,
    noise_sample: Vec<usize>,
    dynamic_prior: Option<GridCell>,
    offline_tests: BTreeMap<usize, Vec<TestArtifact>>,
}

impl CoEvolution {
    /// Pre-filters the world's problems and splits off the calibration and
    /// noise-measurement sets.
    pub fn new(world: SyntheticWorld, config: TrainConfig) -> Result<Self, TrainError> {
        config.validate()?;
        world.config().validate().map_err(TrainError::Config)?;
        let coder = PolicyState::coder(
            world.config().archetype_pool,
            config.coder_correct_logit,
            config.coder_wrong_logit,
        );
        let tester = PolicyState::tester(&config.tester_init);

        let all: Vec<usize> = (0..world.problems().len()).collect();
        let retained = prefilter(
            &world,
            &all,
            (&coder, &tester),
            config.tau,
            config.rollouts,
            config.prefilter_repeats,
            config.seed,
        )?;
        let mut shuffled = retained.clone();
        shuffled.shuffle(&mut config.rng(&[hash_str("split")]));
        let n_cal = config.calibration_size.min(shuffled.len());
        let calibration: Vec<usize> = shuffled[..n_cal].to_vec();
        let mut pool: Vec<usize> = shuffled[n_cal..].to_vec();
        pool.sort_unstable();
        if pool.is_empty() {
            return Err(TrainError::EmptyPool);
        }
        if config.noise_sample > pool.len() {
            return Err(TrainError::SampleTooLarge {
                requested: config.noise_sample,
                available: pool.len(),
            });
        }
        let mut noise_sample = pool.clone();
        noise_sample.shuffle(&mut config.rng(&[hash_str("noise-sample")]));
        noise_sample.truncate(config.noise_sample);
        noise_sample.sort_unstable();

        let mut state = Self {
            world,
            config,
            coder,
            tester: tester.clone(),
            initial_tester: tester,
            retained: retained.len(),
            pool,
            calibration,
            noise_sample,
            dynamic_prior: None,
            offline_tests: BTreeMap::new(),
        };
        if state.config.baseline == BaselineMode::Offline {
            state.offline_tests = state.greedy_tests();
        }
        Ok(state)
    }

    /// One fixed test set per pool problem, all of the initial tester's
    /// most likely kind.
    fn greedy_tests(&self) -> BTreeMap<usize, Vec<TestArtifact>> {
        let (kind, _) = TestKind::ALL
            .iter()
            .map(|&k| (k, self.initial_tester.logit(k.name())))
            .fold((TestKind::ALL[0], f64::NEG_INFINITY), |best, c| if c.1 > best.1 { c } else { best });
        self.pool
            .iter()
            .map(|&p| {
                let problem = &self.world.problems()[p];
                let tests = (0..self.config.rollouts)
                    .map(|j| TestArtifact::new(format!("{}/offline/t{j}", problem.problem_id), kind, &problem.problem_id))
                    .collect();
                (p, tests)
            })
            .collect()
    }

    pub fn world(&self) -> &SyntheticWorld {
        &self.world
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn coder(&self) -> &PolicyState {
        &self.coder
    }

    pub fn tester(&self) -> &PolicyState {
        &self.tester
    }

    pub fn pool(&self) -> &[usize] {
        &self.pool
    }

    pub fn calibration_set(&self) -> &[usize] {
        &self.calibration
    }

    pub fn noise_sample(&self) -> &[usize] {
        &self.noise_sample
    }

    pub fn dynamic_prior(&self) -> Option<GridCell> {
        self.dynamic_prior
    }

    pub fn set_policies(&mut self, coder: PolicyState, tester: PolicyState) {
        self.coder = coder;
        self.tester = tester;
    }

    /// The selector in force right now.
    pub fn selector(&self) -> Selector {
        match self.config.selector {
            SelectorKind::MaxPass => Selector::MaxPass,
            SelectorKind::CodeT => Selector::CodeT,
            SelectorKind::B4 => Selector::B4(self.config.fixed_prior()),
            SelectorKind::DyB4 => Selector::B4(
                self.dynamic_prior
                    .map_or_else(|| self.config.fixed_prior(), |c| c.prior()),
            ),
        }
    }

    fn role_at(&self, step: usize) -> Role {
        if self.config.baseline != BaselineMode::None || step.is_multiple_of(2) {
            Role::Coder
        } else {
            Role::Tester
        }
    }

    /// Mean probability of a correct solution over every world problem.
    pub fn coder_correct_rate(&self) -> f64 {
        let scale = self.world.config().difficulty_scale;
        let ps = self.world.problems();
        ps.iter().map(|p| correct_probability(p, &self.coder, scale)).sum::<f64>() / ps.len() as f64
    }

    /// Recalibrates the B4 prior on the labeled set with fresh rollouts.
    pub fn recalibrate(&mut self, step: usize) -> Result<GridCell, TrainError> {
        let jobs: Vec<(usize, usize)> = self
            .calibration
            .iter()
            .flat_map(|&p| (0..self.config.calibration_rollouts).map(move |r| (p, r)))
            .collect();
        let rollouts: Vec<Rollout> = jobs
            .par_iter()
            .map(|&(p, r)| {
                let mut rng = self.config.rng(&[hash_str("calibrate"), step as u64, p as u64, r as u64]);
                let mut ro = rollout(
                    &self.world,
                    &self.world.problems()[p],
                    &self.coder,
                    &self.tester,
                    self.config.rollouts,
                    &format!("cal{step}.{r}"),
                    &mut rng,
                )?;
                // one instance per rollout, so the problem id carries the rollout index
                ro.matrix = matrix_from_outcomes(
                    &format!("{}#{r}", ro.matrix.problem_id()),
                    ro.matrix.solution_ids().to_vec(),
                    ro.matrix.test_ids().to_vec(),
                    &ro.outcomes,
                );
                Ok(ro)
            })
            .collect::<Result<_, ExecError>>()?;
        let matrices: Vec<PassingMatrix> = rollouts.iter().map(|r| r.matrix.clone()).collect();
        let latent: BTreeMap<&str, &Rollout> = rollouts.iter().map(|r| (r.matrix.problem_id(), r)).collect();
        let verdict = |pid: &str, i: usize| latent[pid].solutions[i].archetype.is_correct();
        let result = calibrate(&PriorGrid::default(), &matrices, verdict)?;
        self.dynamic_prior = Some(result.cell);
        Ok(result.cell)
    }

    /// `1 − precision` of the current selector on `sample`: per instance,
    /// the fraction of `C_S` that is latently incorrect, averaged.
    pub fn measure_noise_on(&self, step: usize, sample: &[usize]) -> Result<f64, TrainError> {
        if sample.is_empty() {
            return Err(TrainError::SampleTooLarge {
                requested: 0,
                available: self.pool.len(),
            });
        }
        let selector = self.selector();
        let precision: Vec<f64> = sample
            .par_iter()
            .map(|&p| {
                let mut rng = self.config.rng(&[hash_str("noise"), step as u64, p as u64]);
                let ro = rollout(
                    &self.world,
                    &self.world.problems()[p],
                    &self.coder,
                    &self.tester,
                    self.config.rollouts,
                    &format!("noise{step}"),
                    &mut rng,
                )?;
                let sel = selector.select(&ro.matrix);
                let good = sel
                    .solution_indices
                    .iter()
                    .filter(|&&i| ro.solutions[i].archetype.is_correct())
                    .count();
                Ok(good as f64 / sel.solution_indices.len() as f64)
            })
            .collect::<Result<_, TrainError>>()?;
        Ok(1.0 - precision.iter().sum::<f64>() / precision.len() as f64)
    }

    /// Noise on the first `sample_size` problems of the fixed noise sample.
    pub fn measure_noise(&self, step: usize, sample_size: usize) -> Result<f64, TrainError> {
        if sample_size > self.noise_sample.len() {
            return Err(TrainError::SampleTooLarge {
                requested: sample_size,
                available: self.noise_sample.len(),
            });
        }
        self.measure_noise_on(step, &self.noise_sample[..sample_size])
    }

    fn measures_noise_at(&self, step: usize) -> bool {
        step.is_multiple_of(self.config.noise_every) || step + 1 == self.config.steps
    }

    pub fn train_step(&mut self, step: usize) -> Result<StepLog, TrainError> {
        let total = self.config.steps;
        if step >= total {
            return Err(TrainError::StepOutOfRange { step, total });
        }
        let co_evolving = self.config.baseline == BaselineMode::None;
        if co_evolving && self.config.selector == SelectorKind::DyB4 && step.is_multiple_of(self.config.recalibrate_every) {
            self.recalibrate(step)?;
        }
        let role = self.role_at(step);
        let schedule = CurriculumSchedule::new(step, total)?;
        let lambda = lambda_weight(&schedule);

        let mut batch_rng = self.config.rng(&[hash_str("batch"), step as u64]);
        let batch: Vec<usize> = (0..self.config.batch_size)
            .map(|_| self.pool[batch_rng.random_range(0..self.pool.len())])
            .collect();

        let problems: Vec<ProblemStep> = batch
            .par_iter()
            .enumerate()
            .map(|(slot, &p)| self.problem_step(step, slot, p, role, &schedule))
            .collect::<Result<_, TrainError>>()?;

        let lr = self.config.learning_rate;
        let policy = match role {
            Role::Coder => &mut self.coder,
            Role::Tester => &mut self.tester,
        };
        apply_update(policy, &problems, lr);

        let noise = if self.measures_noise_at(step) {
            Some(self.measure_noise(step, self.noise_sample.len())?)
        } else {
            None
        };
        Ok(StepLog {
            step,
            role,
            lambda,
            prior: if self.config.selector == SelectorKind::DyB4 { self.dynamic_prior } else { None },
            noise,
            coder_correct_rate: self.coder_correct_rate(),
            problems,
            coder_logits: self.coder.logits.clone(),
            tester_logits: self.tester.logits.clone(),
        })
    }

    fn problem_step(
        &self,
        step: usize,
        slot: usize,
        p: usize,
        role: Role,
        schedule: &CurriculumSchedule,
    ) -> Result<ProblemStep, TrainError> {
        let problem = &self.world.problems()[p];
        let mut rng = self.config.rng(&[hash_str("rollout"), step as u64, slot as u64]);
        let tag = format!("k{step}.{slot}");
        let n = self.config.rollouts;
        let ro = match self.config.baseline {
            BaselineMode::None => rollout(&self.world, problem, &self.coder, &self.tester, n, &tag, &mut rng)?,
            BaselineMode::Online => rollout(&self.world, problem, &self.coder, &self.initial_tester, n, &tag, &mut rng)?,
            BaselineMode::Offline => {
                let scale = self.world.config().difficulty_scale;
                let sols = sample_solutions(problem, &self.coder, scale, n, &tag, &mut rng);
                rollout_with_tests(&self.world, problem, sols, self.offline_tests[&p].clone())?
            }
        };

        if self.config.baseline != BaselineMode::None {
            // Test-driven reward: 1 iff the solution passes every test.
            let rewards: Vec<RewardRecord> = ro
                .solutions
                .iter()
                .zip(&ro.outcomes)
                .map(|(s, row)| {
                    let v = if row.iter().all(|o| o.is_pass()) { 1.0 } else { 0.0 };
                    RewardRecord {
                        candidate_id: s.id.clone(),
                        role: Role::Coder,
                        total: v,
                        terms: BTreeMap::from([(TERM_CODER.to_owned(), v)]),
                        lambda_used: None,
                    }
                })
                .collect();
            return Ok(finish(problem, None, ro.solutions.iter().map(|s| s.archetype.to_string()).collect(), rewards));
        }

        let selection = self.selector().select(&ro.matrix);
        match role {
            Role::Coder => {
                let rewards = coder_rewards(&ro.matrix, &selection)?;
                let classes = ro.solutions.iter().map(|s| s.archetype.to_string()).collect();
                Ok(finish(problem, Some(selection), classes, rewards))
            }
            Role::Tester => {
                let proxy_seed = combine(&[self.config.seed, hash_str("proxy"), step as u64, hash_str(&problem.problem_id)]);
                let star = pick_proxy_solution(&selection, proxy_seed)?;
                let star_sol = &ro.solutions[star];
                let mutants = self.world.mutants_for_reward(star_sol)?.artifacts(&problem.problem_id);
                let mut rewards = Vec::with_capacity(ro.tests.len());
                for (j, t) in ro.tests.iter().enumerate() {
                    let on_star = ro.outcomes[star][j];
                    let killed = mutants
                        .iter()
                        .map(|m| self.world.execute(m, t))
                        .filter(|o| !matches!(o, Ok(Outcome::Pass)))
                        .count();
                    rewards.push(tester_reward(
                        t.id.clone(),
                        on_star != Outcome::Error,
                        on_star == Outcome::Pass,
                        killed,
                        mutants.len(),
                        schedule,
                    )?);
                }
                let classes = ro.tests.iter().map(|t| t.kind.name().to_owned()).collect();
                Ok(finish(problem, Some(selection), classes, rewards))
            }
        }
    }

    /// Test accuracy and mutation score of freshly sampled tests on the
    /// first `quality_sample` problems of the noise sample.
    pub fn test_quality(&self, step: usize) -> Result<Vec<TestQualityReport>, TrainError> {
        let k = self.config.quality_sample.min(self.noise_sample.len());
        let tester = if self.config.baseline == BaselineMode::None {
            &self.tester
        } else {
            &self.initial_tester
        };
        self.noise_sample[..k]
            .iter()
            .map(|&p| {
                let problem = &self.world.problems()[p];
                let mut rng = self.config.rng(&[hash_str("quality"), step as u64, p as u64]);
                let tests = sample_tests(problem, tester, self.config.rollouts, "quality", &mut rng);
                let reference =
                    SolutionArtifact::new(format!("{}/reference", problem.problem_id), Archetype::Correct, &problem.problem_id);
                let mutants = self.world.mutants_of(&reference)?.artifacts(&problem.problem_id);
                Ok(TestQualityReport::evaluate(&problem.problem_id, &tests, &reference, &mutants, &self.world)?)
            })
            .collect()
    }

    /// Runs every step, handing each log to `sink` as it completes.
    pub fn run_with<F>(&mut self, mut sink: F) -> Result<RunSummary, TrainError>
    where
        F: FnMut(&StepLog) -> Result<(), TrainError>,
    {
        let initial_tester_bits = self.tester.class_bits();
        let mut last_noise = None;
        for step in 0..self.config.steps {
            let log = self.train_step(step)?;
            if log.noise.is_some() {
                last_noise = log.noise;
            }
            sink(&log)?;
        }
        let quality = self.test_quality(self.config.steps)?;
        let n_q = quality.len().max(1) as f64;
        Ok(RunSummary {
            seed: self.config.seed,
            selector: self.config.selector,
            baseline: self.config.baseline,
            steps: self.config.steps,
            world_problems: self.world.problems().len(),
            retained_problems: self.retained,
            training_pool: self.pool.len(),
            tester_frozen: self.tester.class_bits() == initial_tester_bits,
            final_noise: last_noise.expect("last step always measures noise"),
            final_coder_correct_rate: self.coder_correct_rate(),
            final_prior: if self.config.selector == SelectorKind::DyB4 { self.dynamic_prior } else { None },
            coder_distribution: self.coder.distribution(),
            tester_distribution: self.tester.distribution(),
            mean_acc: quality.iter().map(|q| q.acc).sum::<f64>() / n_q,
            mean_mut: quality.iter().map(|q| q.r#mut).sum::<f64>() / n_q,
            test_quality: quality,
        })
    }

    pub fn run(&mut self) -> Result<RunLog, TrainError> {
        let mut steps = Vec::with_capacity(self.config.steps);
        let summary = self.run_with(|log| {
            steps.push(log.clone());
            Ok(())
        })?;
        Ok(RunLog { steps, summary })
    }
}

/// `logit[c] += lr · mean advantage of the batch's rollouts in class c`.
/// Classes absent from the batch, or with zero mean advantage, keep their
/// exact bits.
pub fn apply_update(policy: &mut PolicyState, problems: &[ProblemStep], lr: f64) {
    let mut sums: IndexMap<&str, (f64, usize)> = IndexMap::new();
    for ps in problems {
        for (class, adv) in ps.classes.iter().zip(&ps.advantages) {
            let e = sums.entry(class.as_str()).or_insert((0.0, 0));
            e.0 += adv;
            e.1 += 1;
        }
    }
    for (class, (sum, count)) in sums {
        let mean = sum / count as f64;
        if mean != 0.0 {
            if let Some(l) = policy.logits.get_mut(class) {
                *l += lr * mean;
            }
        }
    }
}

fn finish(
    problem: &SyntheticProblem,
    selection: Option<ConsensusSelection>,
    classes: Vec<String>,
    rewards: Vec<RewardRecord>,
) -> ProblemStep {
    let totals: Vec<f64> = rewards.iter().map(|r| r.total).collect();
    ProblemStep {
        problem_id: problem.problem_id.clone(),
        selection,
        classes,
        advantages: group_normalized_advantages(&totals),
        rewards,
    }
}

/// Runs a test-driven baseline with the tester frozen at initialization.
pub fn run_baseline(world: SyntheticWorld, mut config: TrainConfig, mode: BaselineMode) -> Result<RunLog, TrainError> {
    config.baseline = mode;
    CoEvolution::new(world, config)?.run()
}
