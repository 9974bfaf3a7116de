//! Execution backends: a deterministic synthetic world with latent ground
//! truth, and an external subprocess speaking a line-delimited JSON
//! protocol.

mod external;
mod world;

pub use external::{ExecRequest, ExecResponse, ExternalExecutor};
pub use world::{
    Archetype, MutantSet, ProblemShape, SolutionArtifact, SyntheticProblem, SyntheticWorld, TestArtifact, TestKind,
    WorldConfig,
};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::matrix::PassingMatrix;

/// Result of running one solution against one test.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Outcome {
    Pass,
    Fail,
    Error,
}

impl Outcome {
    pub fn is_pass(self) -> bool {
        self == Outcome::Pass
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ExecError {
    #[error("solution belongs to `{solution}` but test belongs to `{test}`")]
    WorldMismatch { solution: String, test: String },
    #[error("problem `{0}` is not part of this world")]
    UnknownProblem(String),
    #[error("solution `{0}` is not a correct solution; mutants are only defined for correct ones")]
    NotCorrectSolution(String),
    #[error("protocol violation: {0}")]
    ProtocolViolation(String),
    #[error("no response within {0} ms")]
    Timeout(u64),
    #[error("backend i/o: {0}")]
    Io(String),
    #[error("cannot parse artifact id `{0}`")]
    BadArtifactId(String),
}

/// Anything that can run a solution against a test.
pub trait Executor {
    type Solution;
    type Test;

    fn execute(&self, solution: &Self::Solution, test: &Self::Test) -> Result<Outcome, ExecError>;
}

/// Full outcome grid, rows = solutions, columns = tests.
pub fn execute_grid<E: Executor>(
    executor: &E,
    solutions: &[E::Solution],
    tests: &[E::Test],
) -> Result<Vec<Vec<Outcome>>, ExecError> {
    solutions
        .iter()
        .map(|s| tests.iter().map(|t| executor.execute(s, t)).collect())
        .collect()
}

/// Folds an outcome grid into a passing matrix; errors count as fails.
pub fn matrix_from_outcomes(
    problem_id: &str,
    solution_ids: Vec<String>,
    test_ids: Vec<String>,
    outcomes: &[Vec<Outcome>],
) -> PassingMatrix {
    let rows: Vec<Vec<bool>> = outcomes
        .iter()
        .map(|r| r.iter().map(|o| o.is_pass()).collect())
        .collect();
    PassingMatrix::from_rows(problem_id, solution_ids, test_ids, &rows).expect("artifact ids are unique per rollout")
}

/// Executes every pair and assembles the passing matrix.
pub fn build_passing_matrix(
    world: &SyntheticWorld,
    problem: &SyntheticProblem,
    solutions: &[SolutionArtifact],
    tests: &[TestArtifact],
) -> Result<PassingMatrix, ExecError> {
    for s in solutions {
        if s.problem_id != problem.problem_id {
            return Err(ExecError::WorldMismatch {
                solution: s.problem_id.clone(),
                test: problem.problem_id.clone(),
            });
        }
    }
    let outcomes = execute_grid(world, solutions, tests)?;
    Ok(matrix_from_outcomes(
        &problem.problem_id,
        solutions.iter().map(|s| s.id.clone()).collect(),
        tests.iter().map(|t| t.id.clone()).collect(),
        &outcomes,
    ))
}
