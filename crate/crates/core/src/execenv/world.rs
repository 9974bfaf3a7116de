use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use super::{ExecError, Executor, Outcome};
use crate::seed::{combine, hash_str, unit};

/// Latent behaviour of a solution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Archetype {
    Correct,
    Wrong(u32),
}

impl Archetype {
    pub fn is_correct(self) -> bool {
        self == Archetype::Correct
    }
}

impl fmt::Display for Archetype {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Archetype::Correct => f.write_str("correct"),
            Archetype::Wrong(a) => write!(f, "w{a}"),
        }
    }
}

impl FromStr for Archetype {
    type Err = ExecError;

    fn from_str(s: &str) -> Result<Self, ExecError> {
        if s == "correct" {
            return Ok(Archetype::Correct);
        }
        s.strip_prefix('w')
            .and_then(|n| n.parse().ok())
            .map(Archetype::Wrong)
            .ok_or_else(|| ExecError::BadArtifactId(s.to_owned()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TestKind {
    InvalidFormat,
    WrongSemantics,
    Trivial,
    Weak,
    Strong,
}

impl TestKind {
    pub const ALL: [TestKind; 5] = [
        TestKind::InvalidFormat,
        TestKind::WrongSemantics,
        TestKind::Trivial,
        TestKind::Weak,
        TestKind::Strong,
    ];

    pub fn name(self) -> &'static str {
        match self {
            TestKind::InvalidFormat => "invalid_format",
            TestKind::WrongSemantics => "wrong_semantics",
            TestKind::Trivial => "trivial",
            TestKind::Weak => "weak",
            TestKind::Strong => "strong",
        }
    }

    /// Accepts the correct solution (trivial, weak, strong).
    pub fn is_valid(self) -> bool {
        matches!(self, TestKind::Trivial | TestKind::Weak | TestKind::Strong)
    }
}

impl fmt::Display for TestKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for TestKind {
    type Err = ExecError;

    fn from_str(s: &str) -> Result<Self, ExecError> {
        TestKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| ExecError::BadArtifactId(s.to_owned()))
    }
}

/// Shape of the solution distribution on a problem. Degenerate problems
/// yield identical rows whatever the policies do.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProblemShape {
    Regular,
    /// Every sampled solution is correct.
    AllPass,
    /// Every sampled solution is the problem's single wrong archetype.
    AllFail,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticProblem {
    pub problem_id: String,
    pub difficulty: f64,
    pub wrong_archetypes: Vec<u32>,
    pub seed: u64,
    pub shape: ProblemShape,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SolutionArtifact {
    pub id: String,
    pub archetype: Archetype,
    pub problem_id: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TestArtifact {
    pub id: String,
    pub kind: TestKind,
    pub problem_id: String,
}

impl SolutionArtifact {
    pub fn new(id: impl Into<String>, archetype: Archetype, problem_id: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            archetype,
            problem_id: problem_id.into(),
        }
    }

    /// `id@archetype`, the self-describing form used in matrix files.
    pub fn tagged_id(&self) -> String {
        format!("{}@{}", self.id, self.archetype)
    }

    pub fn from_tagged(problem_id: &str, tagged: &str) -> Result<Self, ExecError> {
        let (id, tag) = tagged
            .rsplit_once('@')
            .ok_or_else(|| ExecError::BadArtifactId(tagged.to_owned()))?;
        Ok(Self::new(id, tag.parse()?, problem_id))
    }
}

impl TestArtifact {
    pub fn new(id: impl Into<String>, kind: TestKind, problem_id: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            kind,
            problem_id: problem_id.into(),
        }
    }

    pub fn tagged_id(&self) -> String {
        format!("{}@{}", self.id, self.kind)
    }

    pub fn from_tagged(problem_id: &str, tagged: &str) -> Result<Self, ExecError> {
        let (id, tag) = tagged
            .rsplit_once('@')
            .ok_or_else(|| ExecError::BadArtifactId(tagged.to_owned()))?;
        Ok(Self::new(id, tag.parse()?, problem_id))
    }
}

/// Mutants `M(s)` of a solution, as wrong archetypes (with repetition).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MutantSet {
    pub base_solution_id: String,
    pub mutant_archetypes: Vec<u32>,
}

impl MutantSet {
    pub fn len(&self) -> usize {
        self.mutant_archetypes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mutant_archetypes.is_empty()
    }

    /// Mutants as executable solution artifacts.
    pub fn artifacts(&self, problem_id: &str) -> Vec<SolutionArtifact> {
        self.mutant_archetypes
            .iter()
            .enumerate()
            .map(|(i, &a)| SolutionArtifact::new(format!("{}~m{i}", self.base_solution_id), Archetype::Wrong(a), problem_id))
            .collect()
    }
}

/// World constants.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorldConfig {
    pub problems: usize,
    /// Size of the global wrong-archetype vocabulary `w0..`.
    pub archetype_pool: u32,
    pub min_wrong_archetypes: usize,
    pub max_wrong_archetypes: usize,
    pub weak_fail_prob: f64,
    pub strong_fail_prob: f64,
    pub wrong_semantics_pass_prob: f64,
    pub mutant_mean: f64,
    /// Fraction of problems generated as `AllPass` / `AllFail` (half each).
    pub degenerate_fraction: f64,
    /// Correct-class logit shift is `difficulty_scale · (0.5 − difficulty)`.
    pub difficulty_scale: f64,
}

impl Default for WorldConfig {
    fn default() -> Self {
        Self {
            problems: 400,
            archetype_pool: 8,
            min_wrong_archetypes: 2,
            max_wrong_archetypes: 4,
            weak_fail_prob: 0.3,
            strong_fail_prob: 0.9,
            wrong_semantics_pass_prob: 0.5,
            mutant_mean: 13.0,
            degenerate_fraction: 0.0,
            difficulty_scale: 2.0,
        }
    }
}

impl WorldConfig {
    pub fn validate(&self) -> Result<(), String> {
        let prob = |name: &str, p: f64| {
            if (0.0..=1.0).contains(&p) {
                Ok(())
            } else {
                Err(format!("world.{name} must lie in [0, 1], got {p}"))
            }
        };
        prob("weak_fail_prob", self.weak_fail_prob)?;
        prob("strong_fail_prob", self.strong_fail_prob)?;
        prob("wrong_semantics_pass_prob", self.wrong_semantics_pass_prob)?;
        prob("degenerate_fraction", self.degenerate_fraction)?;
        if self.problems == 0 {
            return Err("world.problems must be at least 1".into());
        }
        if self.min_wrong_archetypes == 0 || self.min_wrong_archetypes > self.max_wrong_archetypes {
            return Err("world.min_wrong_archetypes must be in 1..=max_wrong_archetypes".into());
        }
        if self.max_wrong_archetypes > self.archetype_pool as usize {
            return Err("world.max_wrong_archetypes cannot exceed world.archetype_pool".into());
        }
        if !(self.mutant_mean >= 1.0 && self.mutant_mean.is_finite()) {
            return Err(format!("world.mutant_mean must be at least 1, got {}", self.mutant_mean));
        }
        if !self.difficulty_scale.is_finite() {
            return Err("world.difficulty_scale must be finite".into());
        }
        Ok(())
    }
}

/// Deterministic synthetic world: every outcome is a pure function of
/// `(seed, ids)`.
#[derive(Debug, Clone)]
pub struct SyntheticWorld {
    seed: u64,
    config: WorldConfig,
    problems: Vec<SyntheticProblem>,
    index: HashMap<String, usize>,
}

impl SyntheticWorld {
    pub fn generate(seed: u64, config: WorldConfig) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(combine(&[seed, hash_str("world")]));
        let pool: Vec<u32> = (0..config.archetype_pool).collect();
        let problems = (0..config.problems)
            .map(|i| {
                let problem_id = format!("p{i:04}");
                let shape = if rng.random_bool(config.degenerate_fraction) {
                    if rng.random_bool(0.5) {
                        ProblemShape::AllPass
                    } else {
                        ProblemShape::AllFail
                    }
                } else {
                    ProblemShape::Regular
                };
                let count = match shape {
                    ProblemShape::Regular => rng.random_range(config.min_wrong_archetypes..=config.max_wrong_archetypes),
                    _ => 1,
                };
                let wrong_archetypes = rand::seq::index::sample(&mut rng, pool.len(), count)
                    .into_iter()
                    .map(|k| pool[k])
                    .collect();
                let difficulty = match shape {
                    ProblemShape::Regular => rng.random::<f64>(),
                    ProblemShape::AllPass => 0.0,
                    ProblemShape::AllFail => 1.0,
                };
                SyntheticProblem {
                    problem_id,
                    difficulty,
                    wrong_archetypes,
                    seed: rng.random(),
                    shape,
                }
            })
            .collect();
        Self::from_problems(seed, config, problems)
    }

    pub fn from_problems(seed: u64, config: WorldConfig, problems: Vec<SyntheticProblem>) -> Self {
        let index = problems
            .iter()
            .enumerate()
            .map(|(i, p)| (p.problem_id.clone(), i))
            .collect();
        Self {
            seed,
            config,
            problems,
            index,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn config(&self) -> &WorldConfig {
        &self.config
    }

    pub fn problems(&self) -> &[SyntheticProblem] {
        &self.problems
    }

    pub fn problem(&self, problem_id: &str) -> Result<&SyntheticProblem, ExecError> {
        self.index
            .get(problem_id)
            .map(|&i| &self.problems[i])
            .ok_or_else(|| ExecError::UnknownProblem(problem_id.to_owned()))
    }

    /// Deterministic uniform draw for `(problem, archetype, test)`.
    fn draw(&self, problem: &SyntheticProblem, archetype: u32, test_id: &str) -> f64 {
        unit(combine(&[self.seed, problem.seed, archetype as u64, hash_str(test_id)]))
    }

    pub fn execute(&self, solution: &SolutionArtifact, test: &TestArtifact) -> Result<Outcome, ExecError> {
        if solution.problem_id != test.problem_id {
            return Err(ExecError::WorldMismatch {
                solution: solution.problem_id.clone(),
                test: test.problem_id.clone(),
            });
        }
        let problem = self.problem(&solution.problem_id)?;
        let c = &self.config;
        let outcome = match (test.kind, solution.archetype) {
            (TestKind::InvalidFormat, _) => Outcome::Error,
            (TestKind::Trivial, _) => Outcome::Pass,
            (TestKind::WrongSemantics, Archetype::Correct) => Outcome::Fail,
            (_, Archetype::Correct) => Outcome::Pass,
            (kind, Archetype::Wrong(a)) => {
                let u = self.draw(problem, a, &test.id);
                let passes = match kind {
                    TestKind::WrongSemantics => u < c.wrong_semantics_pass_prob,
                    TestKind::Weak => u >= c.weak_fail_prob,
                    TestKind::Strong => u >= c.strong_fail_prob,
                    TestKind::InvalidFormat | TestKind::Trivial => unreachable!("handled above"),
                };
                if passes {
                    Outcome::Pass
                } else {
                    Outcome::Fail
                }
            }
        };
        Ok(outcome)
    }

    fn mutant_count(&self, problem: &SyntheticProblem, base_id: &str) -> (usize, ChaCha8Rng) {
        let mut rng = ChaCha8Rng::seed_from_u64(combine(&[self.seed, problem.seed, hash_str(base_id), hash_str("mutants")]));
        let poisson = Poisson::new(self.config.mutant_mean).expect("validated mutant mean");
        let n = (poisson.sample(&mut rng) as usize).max(1);
        (n, rng)
    }

    /// Mutants of a correct solution: a Poisson-sized multiset (at least one)
    /// of the problem's wrong archetypes.
    pub fn mutants_of(&self, solution: &SolutionArtifact) -> Result<MutantSet, ExecError> {
        if !solution.archetype.is_correct() {
            return Err(ExecError::NotCorrectSolution(solution.id.clone()));
        }
        let problem = self.problem(&solution.problem_id)?;
        let (n, mut rng) = self.mutant_count(problem, &solution.id);
        let pool = &problem.wrong_archetypes;
        Ok(MutantSet {
            base_solution_id: solution.id.clone(),
            mutant_archetypes: (0..n).map(|_| pool[rng.random_range(0..pool.len())]).collect(),
        })
    }

    /// Mutants of any solution. A wrong base mutates into the problem's
    /// other wrong archetypes (or itself when it is the only one).
    pub fn mutants_for_reward(&self, solution: &SolutionArtifact) -> Result<MutantSet, ExecError> {
        let Archetype::Wrong(own) = solution.archetype else {
            return self.mutants_of(solution);
        };
        let problem = self.problem(&solution.problem_id)?;
        let (n, mut rng) = self.mutant_count(problem, &solution.id);
        let others: Vec<u32> = problem.wrong_archetypes.iter().copied().filter(|&a| a != own).collect();
        let pool = if others.is_empty() { vec![own] } else { others };
        Ok(MutantSet {
            base_solution_id: solution.id.clone(),
            mutant_archetypes: (0..n).map(|_| pool[rng.random_range(0..pool.len())]).collect(),
        })
    }
}

impl Executor for SyntheticWorld {
    type Solution = SolutionArtifact;
    type Test = TestArtifact;

    fn execute(&self, solution: &SolutionArtifact, test: &TestArtifact) -> Result<Outcome, ExecError> {
        SyntheticWorld::execute(self, solution, test)
    }
}
