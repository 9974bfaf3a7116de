//! Test-suite quality: accuracy against a reference solution and the
//! mutation score over the reference's mutants.

use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::execenv::{ExecError, Executor, Outcome};

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("test set is empty")]
    EmptyTestSet,
    #[error("mutant set is empty")]
    EmptyMutantSet,
    #[error(transparent)]
    Exec(#[from] ExecError),
    #[error("writing csv: {0}")]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestQualityReport {
    pub problem_id: String,
    pub acc: f64,
    pub r#mut: f64,
    pub test_count: usize,
    pub mutant_count: usize,
}

/// `ACC(T)`: fraction of tests the reference passes. Errors are non-passes.
pub fn test_accuracy<E: Executor>(tests: &[E::Test], reference: &E::Solution, executor: &E) -> Result<f64, MetricsError> {
    if tests.is_empty() {
        return Err(MetricsError::EmptyTestSet);
    }
    let mut passed = 0usize;
    for t in tests {
        if executor.execute(reference, t)? == Outcome::Pass {
            passed += 1;
        }
    }
    Ok(passed as f64 / tests.len() as f64)
}

/// `Mut(T)`: mean over tests of the fraction of mutants each kills. A
/// mutant is killed by any non-pass outcome.
pub fn mutation_score<E: Executor>(tests: &[E::Test], mutants: &[E::Solution], executor: &E) -> Result<f64, MetricsError> {
    if tests.is_empty() {
        return Err(MetricsError::EmptyTestSet);
    }
    if mutants.is_empty() {
        return Err(MetricsError::EmptyMutantSet);
    }
    let mut killed = 0usize;
    for t in tests {
        for m in mutants {
            if executor.execute(m, t)? != Outcome::Pass {
                killed += 1;
            }
        }
    }
    Ok(killed as f64 / (tests.len() * mutants.len()) as f64)
}

impl TestQualityReport {
    pub fn evaluate<E: Executor>(
        problem_id: impl Into<String>,
        tests: &[E::Test],
        reference: &E::Solution,
        mutants: &[E::Solution],
        executor: &E,
    ) -> Result<Self, MetricsError> {
        Ok(Self {
            problem_id: problem_id.into(),
            acc: test_accuracy(tests, reference, executor)?,
            r#mut: mutation_score(tests, mutants, executor)?,
            test_count: tests.len(),
            mutant_count: mutants.len(),
        })
    }
}

/// Per-problem CSV: `problem_id,acc,mut,test_count,mutant_count`.
pub fn write_quality_csv<W: Write>(writer: W, reports: &[TestQualityReport]) -> Result<(), MetricsError> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["problem_id", "acc", "mut", "test_count", "mutant_count"])?;
    for r in reports {
        w.write_record([
            r.problem_id.clone(),
            r.acc.to_string(),
            r.r#mut.to_string(),
            r.test_count.to_string(),
            r.mutant_count.to_string(),
        ])?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}
