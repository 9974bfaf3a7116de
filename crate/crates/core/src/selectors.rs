//! Consensus selectors: map a passing matrix to a subset of solutions
//! `C_S` and tests `C_T` believed to be correct.
//!
//! Three instantiations are provided:
//!
//! - **MaxPass** keeps every solution with the highest pass count.
//! - **CodeT** groups identical rows and scores a group by
//!   `|group| · |columns it passes|`.
//! - **B4** labels one signature group (and the columns it passes) as
//!   correct, splits the matrix into four solution/test correctness
//!   quadrants, and scores the labeling with a product of Beta functions
//!   under priors `(beta0, alpha_xy)`.
//!
//! All selectors break ties deterministically: larger `|C_S|` first, then
//! the smaller first member index.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::matrix::{self, PassingMatrix};
use crate::special::ln_beta;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SelectorError {
    #[error("Beta parameter must be positive, got a={a}, b={b}")]
    NonPositiveParameter { a: f64, b: f64 },
    #[error("brute-force oracle supports at most 8x8 matrices, got {n}x{m}")]
    SizeLimit { n: usize, m: usize },
    #[error("prior parameters must be positive, got beta0={beta0}, alpha_xy={alpha_xy}")]
    InvalidPrior { beta0: f64, alpha_xy: f64 },
}

/// Selected consensus set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsensusSelection {
    pub solution_indices: Vec<usize>,
    pub test_indices: Vec<usize>,
    pub score: f64,
    pub selector_name: String,
}

impl ConsensusSelection {
    pub fn contains_solution(&self, i: usize) -> bool {
        self.solution_indices.binary_search(&i).is_ok()
    }

    /// `ŝ`: the representative solution under the deterministic ordering.
    pub fn first_solution(&self) -> Option<usize> {
        self.solution_indices.first().copied()
    }
}

/// B4 prior hyperparameters `(beta0, alpha_xy)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PriorConfig {
    pub beta0: f64,
    pub alpha_xy: f64,
}

impl PriorConfig {
    pub fn new(beta0: f64, alpha_xy: f64) -> Result<Self, SelectorError> {
        if !(beta0 > 0.0 && alpha_xy > 0.0 && beta0.is_finite() && alpha_xy.is_finite()) {
            return Err(SelectorError::InvalidPrior { beta0, alpha_xy });
        }
        Ok(Self { beta0, alpha_xy })
    }

    /// `B4(u, v)` notation: `beta0 = 10^u`, `alpha_xy = 10^v`.
    pub fn from_exponents(beta0_exp: i32, alpha_xy_exp: i32) -> Self {
        Self {
            beta0: 10f64.powi(beta0_exp),
            alpha_xy: 10f64.powi(alpha_xy_exp),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Tally {
    pub pass: u64,
    pub fail: u64,
}

impl Tally {
    fn record(&mut self, passed: bool) {
        if passed {
            self.pass += 1;
        } else {
            self.fail += 1;
        }
    }

    pub fn total(&self) -> u64 {
        self.pass + self.fail
    }
}

/// Pass/fail counts in the four correctness quadrants of a labeling.
///
/// `both` is correct solution × correct test, `neither` incorrect ×
/// incorrect, `solution_only` (x) correct solution × incorrect test, and
/// `test_only` (y) incorrect solution × correct test.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuadrantCounts {
    pub both: Tally,
    pub neither: Tally,
    pub solution_only: Tally,
    pub test_only: Tally,
}

impl QuadrantCounts {
    /// Counts the quadrants induced by labeling `correct_solutions` and
    /// `correct_tests` correct and everything else incorrect.
    pub fn from_labeling(matrix: &PassingMatrix, correct_solutions: &[bool], correct_tests: &[bool]) -> Self {
        let mut q = Self::default();
        for (i, &si) in correct_solutions.iter().enumerate() {
            for (j, &tj) in correct_tests.iter().enumerate() {
                let cell = matrix.get(i, j);
                match (si, tj) {
                    (true, true) => q.both.record(cell),
                    (false, false) => q.neither.record(cell),
                    (true, false) => q.solution_only.record(cell),
                    (false, true) => q.test_only.record(cell),
                }
            }
        }
        q
    }

    pub fn total(&self) -> u64 {
        self.both.total() + self.neither.total() + self.solution_only.total() + self.test_only.total()
    }
}

/// Beta(alpha, beta) prior on one quadrant's pass rate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BetaPrior {
    pub alpha: f64,
    pub beta: f64,
}

/// One Beta prior per correctness quadrant.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuadrantPriors {
    pub both: BetaPrior,
    pub neither: BetaPrior,
    pub solution_only: BetaPrior,
    pub test_only: BetaPrior,
}

impl From<&PriorConfig> for QuadrantPriors {
    /// The correct×correct quadrant uses Beta(1, 1), incorrect×incorrect
    /// Beta(1, beta0), and both cross quadrants Beta(alpha_xy, 1).
    fn from(prior: &PriorConfig) -> Self {
        let cross = BetaPrior { alpha: prior.alpha_xy, beta: 1.0 };
        Self {
            both: BetaPrior { alpha: 1.0, beta: 1.0 },
            neither: BetaPrior { alpha: 1.0, beta: prior.beta0 },
            solution_only: cross,
            test_only: cross,
        }
    }
}

/// `Σ_k ln B(alpha_k + pass_k, beta_k + fail_k)` under explicit quadrant priors.
pub fn log_score_with(counts: &QuadrantCounts, priors: &QuadrantPriors) -> Result<f64, SelectorError> {
    let terms = [
        (priors.both, counts.both),
        (priors.neither, counts.neither),
        (priors.solution_only, counts.solution_only),
        (priors.test_only, counts.test_only),
    ];
    let mut logs = [0.0; 4];
    for (slot, (prior, tally)) in logs.iter_mut().zip(terms) {
        let a = prior.alpha + tally.pass as f64;
        let b = prior.beta + tally.fail as f64;
        if !(a > 0.0 && b > 0.0) {
            return Err(SelectorError::NonPositiveParameter { a, b });
        }
        *slot = ln_beta(a, b);
    }
    Ok(logs.iter().sum())
}

/// Log of the B4 score, `Σ_k ln B(a_k, b_k)`, with the quadrant priors
/// derived from `(beta0, alpha_xy)`.
pub fn b4_log_score(counts: &QuadrantCounts, prior: &PriorConfig) -> Result<f64, SelectorError> {
    log_score_with(counts, &QuadrantPriors::from(prior))
}

/// Relative gap below which two scores count as tied. Distinct candidates
/// often have mathematically equal B4 scores whose floating-point sums
/// differ in the last bits.
pub const SCORE_TIE_TOLERANCE: f64 = 1e-12;

pub fn scores_tie(a: f64, b: f64) -> bool {
    (a - b).abs() <= SCORE_TIE_TOLERANCE * a.abs().max(b.abs()).max(1.0)
}

/// True when candidate `(score, size, first)` beats the incumbent.
fn better(score: f64, size: usize, first: usize, best: &(f64, usize, usize)) -> bool {
    if !scores_tie(score, best.0) {
        return score > best.0;
    }
    if size != best.1 {
        return size > best.1;
    }
    first < best.2
}

pub fn select_maxpass(matrix: &PassingMatrix) -> ConsensusSelection {
    let sums: Vec<usize> = (0..matrix.n_solutions()).map(|i| matrix.row_sum(i)).collect();
    let max = sums.iter().copied().max().unwrap_or(0);
    let chosen: Vec<usize> = (0..sums.len()).filter(|&i| sums[i] == max).collect();
    let tests = if max == 0 {
        Vec::new()
    } else {
        matrix.columns_passed_by_all(&chosen)
    };
    ConsensusSelection {
        solution_indices: chosen,
        test_indices: tests,
        score: max as f64,
        selector_name: "maxpass".into(),
    }
}

/// `(score, group size, first member)`.
type CodeTKey = (f64, usize, usize);

pub fn select_codet(matrix: &PassingMatrix) -> ConsensusSelection {
    let mut best: Option<(matrix::RowSignature, Vec<usize>, CodeTKey)> = None;
    for group in matrix::signatures(matrix) {
        let passed = group.passed_columns();
        let score = (group.member_indices.len() * passed.len()) as f64;
        let key = (score, group.member_indices.len(), group.first_member());
        if best.as_ref().is_none_or(|(_, _, b)| better(key.0, key.1, key.2, b)) {
            best = Some((group, passed, key));
        }
    }
    let (group, passed, (score, _, _)) = best.expect("matrix has at least one row");
    ConsensusSelection {
        solution_indices: group.member_indices,
        test_indices: passed,
        score,
        selector_name: "codet".into(),
    }
}

fn labels(len: usize, members: &[usize]) -> Vec<bool> {
    let mut v = vec![false; len];
    for &i in members {
        v[i] = true;
    }
    v
}

/// Scores one candidate consensus set under B4.
pub fn score_candidate(
    matrix: &PassingMatrix,
    solutions: &[usize],
    tests: &[usize],
    prior: &PriorConfig,
) -> f64 {
    let counts = QuadrantCounts::from_labeling(
        matrix,
        &labels(matrix.n_solutions(), solutions),
        &labels(matrix.n_tests(), tests),
    );
    b4_log_score(&counts, prior).expect("validated prior yields positive Beta parameters")
}

pub fn select_b4(matrix: &PassingMatrix, prior: &PriorConfig) -> ConsensusSelection {
    let groups = matrix::signatures(matrix);
    let candidates: Vec<(Vec<usize>, Vec<usize>)> = groups
        .into_iter()
        .map(|g| {
            let passed = g.passed_columns();
            (g.member_indices, passed)
        })
        .collect();

    if candidates.iter().all(|(_, t)| t.is_empty()) {
        let fallback = select_codet(matrix);
        let score = score_candidate(matrix, &fallback.solution_indices, &fallback.test_indices, prior);
        return ConsensusSelection {
            score,
            selector_name: "b4".into(),
            ..fallback
        };
    }

    let mut best: Option<(usize, (f64, usize, usize))> = None;
    for (idx, (sols, tests)) in candidates.iter().enumerate() {
        let score = score_candidate(matrix, sols, tests, prior);
        let key = (score, sols.len(), sols[0]);
        if best.as_ref().is_none_or(|(_, b)| better(key.0, key.1, key.2, b)) {
            best = Some((idx, key));
        }
    }
    let (idx, (score, _, _)) = best.expect("at least one candidate");
    let (sols, tests) = candidates.into_iter().nth(idx).expect("index in range");
    ConsensusSelection {
        solution_indices: sols,
        test_indices: tests,
        score,
        selector_name: "b4".into(),
    }
}

/// Exhaustive reference for [`select_b4`] on matrices up to 8×8.
///
/// Rebuilds every candidate from raw cell comparisons rather than the
/// shared signature grouping.
pub fn select_b4_bruteforce(matrix: &PassingMatrix, prior: &PriorConfig) -> Result<ConsensusSelection, SelectorError> {
    let (n, m) = (matrix.n_solutions(), matrix.n_tests());
    if n > 8 || m > 8 {
        return Err(SelectorError::SizeLimit { n, m });
    }
    let mut candidates: Vec<(Vec<usize>, Vec<usize>)> = Vec::new();
    for i in 0..n {
        let members: Vec<usize> = (0..n)
            .filter(|&r| (0..m).all(|j| matrix.get(r, j) == matrix.get(i, j)))
            .collect();
        if members[0] != i {
            continue;
        }
        let tests: Vec<usize> = (0..m).filter(|&j| members.iter().all(|&r| matrix.get(r, j))).collect();
        candidates.push((members, tests));
    }

    let all_empty = candidates.iter().all(|(_, t)| t.is_empty());
    let mut best: Option<(usize, (f64, usize, usize))> = None;
    for (idx, (sols, tests)) in candidates.iter().enumerate() {
        let score = if all_empty {
            // CodeT ordering: every group scores zero, so size then index decide.
            0.0
        } else {
            let mut q = QuadrantCounts::default();
            for r in 0..n {
                for j in 0..m {
                    let cell = matrix.get(r, j);
                    match (sols.contains(&r), tests.contains(&j)) {
                        (true, true) => q.both.record(cell),
                        (false, false) => q.neither.record(cell),
                        (true, false) => q.solution_only.record(cell),
                        (false, true) => q.test_only.record(cell),
                    }
                }
            }
            b4_log_score(&q, prior)?
        };
        let key = (score, sols.len(), sols[0]);
        if best.as_ref().is_none_or(|(_, b)| better(key.0, key.1, key.2, b)) {
            best = Some((idx, key));
        }
    }
    let (idx, _) = best.expect("at least one candidate");
    let (sols, tests) = candidates.swap_remove(idx);
    let score = score_candidate(matrix, &sols, &tests, prior);
    Ok(ConsensusSelection {
        solution_indices: sols,
        test_indices: tests,
        score,
        selector_name: "b4".into(),
    })
}

/// A selector with its parameters bound.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Selector {
    MaxPass,
    CodeT,
    B4(PriorConfig),
}

impl Selector {
    pub fn select(&self, matrix: &PassingMatrix) -> ConsensusSelection {
        match self {
            Self::MaxPass => select_maxpass(matrix),
            Self::CodeT => select_codet(matrix),
            Self::B4(prior) => select_b4(matrix, prior),
        }
    }
}

/// Configured selector family; `DyB4` is B4 whose prior is recalibrated
/// during training.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SelectorKind {
    MaxPass,
    CodeT,
    B4,
    DyB4,
}

impl SelectorKind {
    pub fn name(self) -> &'static str {
        match self {
            Self::MaxPass => "maxpass",
            Self::CodeT => "codet",
            Self::B4 => "b4",
            Self::DyB4 => "dyb4",
        }
    }
}

impl std::str::FromStr for SelectorKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "maxpass" => Ok(Self::MaxPass),
            "codet" => Ok(Self::CodeT),
            "b4" => Ok(Self::B4),
            "dyb4" => Ok(Self::DyB4),
            other => Err(format!("unknown selector `{other}` (expected maxpass, codet, b4 or dyb4)")),
        }
    }
}

impl std::fmt::Display for SelectorKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(rows: &[&str]) -> PassingMatrix {
        PassingMatrix::from_bitstrings("p", rows).unwrap()
    }

    #[test]
    fn maxpass_argmax_set() {
        let sel = select_maxpass(&m(&["1110", "1000", "0111"]));
        assert_eq!(sel.solution_indices, vec![0, 2]);
        assert_eq!(sel.test_indices, vec![1, 2]);
        assert_eq!(sel.score, 3.0);
    }

    #[test]
    fn maxpass_all_zero() {
        let sel = select_maxpass(&m(&["000", "000"]));
        assert_eq!(sel.solution_indices, vec![0, 1]);
        assert!(sel.test_indices.is_empty());
    }

    #[test]
    fn codet_hand_example() {
        let sel = select_codet(&m(&["110", "110", "001"]));
        assert_eq!(sel.solution_indices, vec![0, 1]);
        assert_eq!(sel.test_indices, vec![0, 1]);
        assert_eq!(sel.score, 4.0);

        let all = select_codet(&m(&["111", "111"]));
        assert_eq!(all.solution_indices, vec![0, 1]);
        assert_eq!(all.test_indices, vec![0, 1, 2]);
    }

    #[test]
    fn codet_tie_breaks_by_size_then_index() {
        // {0}: 1·2 = 2, {1,2}: 2·1 = 2 → larger group wins
        let sel = select_codet(&m(&["110", "001", "001"]));
        assert_eq!(sel.solution_indices, vec![1, 2]);
        // equal size and score → first index wins
        let sel = select_codet(&m(&["10", "01"]));
        assert_eq!(sel.solution_indices, vec![0]);
    }

    #[test]
    fn b4_score_zero_counts_is_zero() {
        let prior = PriorConfig::new(1.0, 1.0).unwrap();
        assert_eq!(b4_log_score(&QuadrantCounts::default(), &prior).unwrap(), 0.0);
    }

    #[test]
    fn b4_score_single_quadrant_closed_form() {
        let prior = PriorConfig::new(1.0, 1.0).unwrap();
        let counts = QuadrantCounts {
            both: Tally { pass: 2, fail: 1 },
            ..Default::default()
        };
        let got = b4_log_score(&counts, &prior).unwrap();
        assert!((got - (1.0_f64 / 12.0).ln()).abs() < 1e-14);
    }

    #[test]
    fn b4_rejects_non_positive_parameters() {
        let prior = PriorConfig { beta0: -1.0, alpha_xy: 1.0 };
        assert!(matches!(
            b4_log_score(&QuadrantCounts::default(), &prior),
            Err(SelectorError::NonPositiveParameter { .. })
        ));
        assert!(PriorConfig::new(0.0, 1.0).is_err());
    }

    #[test]
    fn b4_increases_when_quadrant_one_fails_turn_into_passes() {
        // Quadrant-1 prior Beta(2, 1) (mean 2/3). With the quadrant size n
        // fixed, trading a fail for a pass multiplies the score by
        // (2 + p) / (n - p), which exceeds 1 once p > (n - 2) / 2, so the
        // sequence is strictly increasing from p = n / 2.
        let base = QuadrantPriors::from(&PriorConfig::from_exponents(4, 3));
        let priors = QuadrantPriors {
            both: BetaPrior { alpha: 2.0, beta: 1.0 },
            ..base
        };
        let others = QuadrantCounts {
            neither: Tally { pass: 1, fail: 7 },
            solution_only: Tally { pass: 0, fail: 3 },
            test_only: Tally { pass: 4, fail: 2 },
            ..Default::default()
        };
        for n in 1..30u64 {
            let start = n / 2;
            let mut prev = f64::NEG_INFINITY;
            for p in start..=n {
                let counts = QuadrantCounts {
                    both: Tally { pass: p, fail: n - p },
                    ..others
                };
                let score = log_score_with(&counts, &priors).unwrap();
                assert!(score > prev, "n={n} p={p}");
                prev = score;
            }
        }
    }

    #[test]
    fn b4_single_cell() {
        let sel = select_b4(&m(&["1"]), &PriorConfig::from_exponents(4, 3));
        assert_eq!(sel.solution_indices, vec![0]);
        assert_eq!(sel.test_indices, vec![0]);
        assert!(sel.score.is_finite());
    }

    #[test]
    fn b4_all_zero_falls_back_to_codet() {
        let sel = select_b4(&m(&["00", "00"]), &PriorConfig::from_exponents(4, 3));
        assert_eq!(sel.solution_indices, vec![0, 1]);
        assert!(sel.test_indices.is_empty());
        assert!(sel.score.is_finite());
    }

    #[test]
    fn bruteforce_size_limit() {
        let rows: Vec<Vec<bool>> = vec![vec![true; 9]; 2];
        let mat = PassingMatrix::from_bool_rows("p", &rows).unwrap();
        assert_eq!(
            select_b4_bruteforce(&mat, &PriorConfig::from_exponents(0, 0)),
            Err(SelectorError::SizeLimit { n: 2, m: 9 })
        );
    }

    #[test]
    fn bruteforce_all_ones() {
        let mat = m(&["1111", "1111", "1111", "1111"]);
        let sel = select_b4_bruteforce(&mat, &PriorConfig::from_exponents(4, 3)).unwrap();
        assert_eq!(sel.solution_indices, vec![0, 1, 2, 3]);
        assert_eq!(sel, select_b4(&mat, &PriorConfig::from_exponents(4, 3)));
    }

    #[test]
    fn selector_kind_parses() {
        for k in [SelectorKind::MaxPass, SelectorKind::CodeT, SelectorKind::B4, SelectorKind::DyB4] {
            assert_eq!(k.name().parse::<SelectorKind>().unwrap(), k);
        }
        assert!("best".parse::<SelectorKind>().is_err());
    }
}
