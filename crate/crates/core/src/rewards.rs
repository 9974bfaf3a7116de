//! Role-specific rewards built from a consensus selection.
//!
//! Coders get a binary reward for landing in `C_S`. Testers get
//! `proxy + λ_k · mutation + format`, where `proxy` checks the test against
//! one solution sampled from `C_S`, `mutation` is the fraction of that
//! solution's mutants the test kills, and `format` is `−1` for a test that
//! cannot be executed. `λ_k` follows a cosine ramp from 1.0 to 1.5.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::matrix::PassingMatrix;
use crate::selectors::ConsensusSelection;

pub const ADVANTAGE_EPS: f64 = 1e-8;

pub const TERM_PROXY: &str = "proxy";
pub const TERM_MUTATION: &str = "mutation";
pub const TERM_FORMAT: &str = "format";
pub const TERM_CODER: &str = "coder_binary";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RewardError {
    #[error("selection references index {index} but the matrix has {bound} {axis}")]
    SelectionMismatch { axis: &'static str, index: usize, bound: usize },
    #[error("invalid mutant counts: killed {killed} of {total}")]
    InvalidMutantCounts { killed: usize, total: usize },
    #[error("consensus selection is empty")]
    EmptySelection,
    #[error("no ground truth available for supervised rewards")]
    NoGroundTruth,
    #[error("curriculum step {step} outside [0, {total}]")]
    InvalidSchedule { step: usize, total: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Coder,
    Tester,
}

impl std::fmt::Display for Role {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Role::Coder => "coder",
            Role::Tester => "tester",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardRecord {
    pub candidate_id: String,
    pub role: Role,
    pub total: f64,
    pub terms: BTreeMap<String, f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lambda_used: Option<f64>,
}

impl RewardRecord {
    fn coder(candidate_id: impl Into<String>, hit: bool) -> Self {
        let value = if hit { 1.0 } else { 0.0 };
        Self {
            candidate_id: candidate_id.into(),
            role: Role::Coder,
            total: value,
            terms: BTreeMap::from([(TERM_CODER.to_owned(), value)]),
            lambda_used: None,
        }
    }

    pub fn term(&self, name: &str) -> f64 {
        self.terms.get(name).copied().unwrap_or(0.0)
    }
}

/// Training progress `k` of `K` steps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CurriculumSchedule {
    total_steps: usize,
    current_step: usize,
}

impl CurriculumSchedule {
    pub fn new(current_step: usize, total_steps: usize) -> Result<Self, RewardError> {
        if total_steps == 0 || current_step > total_steps {
            return Err(RewardError::InvalidSchedule {
                step: current_step,
                total: total_steps,
            });
        }
        Ok(Self {
            total_steps,
            current_step,
        })
    }

    pub fn total_steps(&self) -> usize {
        self.total_steps
    }

    pub fn current_step(&self) -> usize {
        self.current_step
    }

    pub fn progress(&self) -> f64 {
        self.current_step as f64 / self.total_steps as f64
    }
}

/// Mutation-term weight `λ_k = 1.25 − 0.25·cos(π·k/K)`.
pub fn lambda_weight(schedule: &CurriculumSchedule) -> f64 {
    1.25 - 0.25 * (PI * schedule.progress()).cos()
}

pub fn coder_rewards(matrix: &PassingMatrix, selection: &ConsensusSelection) -> Result<Vec<RewardRecord>, RewardError> {
    check_bounds("solutions", &selection.solution_indices, matrix.n_solutions())?;
    check_bounds("tests", &selection.test_indices, matrix.n_tests())?;
    let mut hit = vec![false; matrix.n_solutions()];
    for &i in &selection.solution_indices {
        hit[i] = true;
    }
    Ok(matrix
        .solution_ids()
        .iter()
        .zip(hit)
        .map(|(id, h)| RewardRecord::coder(id.clone(), h))
        .collect())
}

fn check_bounds(axis: &'static str, indices: &[usize], bound: usize) -> Result<(), RewardError> {
    match indices.iter().find(|&&i| i >= bound) {
        Some(&index) => Err(RewardError::SelectionMismatch { axis, index, bound }),
        None => Ok(()),
    }
}

/// Three-term tester reward.
///
/// An inexecutable test scores exactly −1: its proxy and mutation terms
/// are zero because it has no execution outcomes.
pub fn tester_reward(
    candidate_id: impl Into<String>,
    test_executable: bool,
    proxy_pass: bool,
    mutants_killed: usize,
    mutant_total: usize,
    schedule: &CurriculumSchedule,
) -> Result<RewardRecord, RewardError> {
    if mutants_killed > mutant_total || (test_executable && mutant_total == 0) {
        return Err(RewardError::InvalidMutantCounts {
            killed: mutants_killed,
            total: mutant_total,
        });
    }
    let lambda = lambda_weight(schedule);
    let (proxy, mutation, format) = if test_executable {
        let proxy = if proxy_pass { 1.0 } else { 0.0 };
        (proxy, mutants_killed as f64 / mutant_total as f64, 0.0)
    } else {
        (0.0, 0.0, -1.0)
    };
    Ok(RewardRecord {
        candidate_id: candidate_id.into(),
        role: Role::Tester,
        total: proxy + lambda * mutation + format,
        terms: BTreeMap::from([
            (TERM_PROXY.to_owned(), proxy),
            (TERM_MUTATION.to_owned(), mutation),
            (TERM_FORMAT.to_owned(), format),
        ]),
        lambda_used: Some(lambda),
    })
}

/// Draws the proxy solution `s*` uniformly from `C_S`.
pub fn pick_proxy_solution(selection: &ConsensusSelection, rng_seed: u64) -> Result<usize, RewardError> {
    if selection.solution_indices.is_empty() {
        return Err(RewardError::EmptySelection);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let pos = rng.random_range(0..selection.solution_indices.len());
    Ok(selection.solution_indices[pos])
}

/// `(r_i − mean) / (std + ε)` with the population standard deviation.
pub fn group_normalized_advantages(rewards: &[f64]) -> Vec<f64> {
    let Some(&first) = rewards.first() else {
        return Vec::new();
    };
    if rewards.iter().all(|&r| r == first) {
        return vec![0.0; rewards.len()];
    }
    let n = rewards.len() as f64;
    let mean = rewards.iter().sum::<f64>() / n;
    let var = rewards.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / n;
    let denom = var.sqrt() + ADVANTAGE_EPS;
    rewards.iter().map(|r| (r - mean) / denom).collect()
}

/// Coder rewards on labeled instances: 1 iff the solution passes every
/// ground-truth test.
///
/// Tester rewards on the same instances reuse [`tester_reward`] with the
/// ground-truth solution standing in for `s*`.
pub fn supervised_rewards(passes_all_ground_truth: &[bool], ground_truth_available: bool) -> Result<Vec<RewardRecord>, RewardError> {
    if !ground_truth_available {
        return Err(RewardError::NoGroundTruth);
    }
    Ok(passes_all_ground_truth
        .iter()
        .enumerate()
        .map(|(i, &ok)| RewardRecord::coder(i.to_string(), ok))
        .collect())
}

/// Line-delimited reward report record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardReportRecord {
    pub step: usize,
    pub problem_id: String,
    pub candidate_id: String,
    pub role: Role,
    pub terms: BTreeMap<String, f64>,
    pub total: f64,
}

impl RewardReportRecord {
    pub fn new(step: usize, problem_id: impl Into<String>, record: &RewardRecord) -> Self {
        Self {
            step,
            problem_id: problem_id.into(),
            candidate_id: record.candidate_id.clone(),
            role: record.role,
            terms: record.terms.clone(),
            total: record.total,
        }
    }
}
