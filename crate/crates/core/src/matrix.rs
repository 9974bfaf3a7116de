//! Passing matrices: the N×M grid of execution outcomes between sampled
//! solutions (rows) and sampled tests (columns) for one problem.
//!
//! Row and column order is the first-appearance order of the ids in the
//! input. Every downstream tie-break (selectors, calibration) depends on
//! that order, so it is part of the contract of this module.

use std::collections::{HashMap, HashSet};
use std::io::BufRead;

use num_bigint::BigInt;
use num_traits::{One, Zero};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum MatrixError {
    #[error("passing matrix needs at least one solution and one test")]
    Empty,
    #[error("duplicate solution id `{0}`")]
    DuplicateSolution(String),
    #[error("duplicate test id `{0}`")]
    DuplicateTest(String),
    #[error("no outcome recorded for pair ({solution}, {test})")]
    MissingPair { solution: String, test: String },
    #[error("outcome for pair ({solution}, {test}) recorded more than once")]
    DuplicatePair { solution: String, test: String },
    #[error("expected {expected} entries, found {found}")]
    EntryCount { expected: usize, found: usize },
    #[error("row {row}: expected length {expected}, found {found}")]
    RowLength { row: usize, expected: usize, found: usize },
    #[error("row {row}: invalid character {ch:?} at column {col}")]
    InvalidBit { row: usize, col: usize, ch: char },
    #[error("expected {expected} rows, found {found}")]
    RowCount { expected: usize, found: usize },
}

/// Binary execution outcomes `e_ij` for one problem.
///
/// Immutable after construction.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PassingMatrix {
    problem_id: String,
    solution_ids: Vec<String>,
    test_ids: Vec<String>,
    entries: Vec<bool>,
}

/// A maximal group of solutions with bitwise identical rows.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RowSignature {
    pub bits: Vec<bool>,
    pub member_indices: Vec<usize>,
}

impl RowSignature {
    /// Columns passed by every member (the 1-positions of the signature).
    pub fn passed_columns(&self) -> Vec<usize> {
        self.bits
            .iter()
            .enumerate()
            .filter_map(|(j, &b)| b.then_some(j))
            .collect()
    }

    pub fn first_member(&self) -> usize {
        self.member_indices[0]
    }
}

impl PassingMatrix {
    /// Builds a matrix from explicit ids and row-major entries.
    pub fn new(
        problem_id: impl Into<String>,
        solution_ids: Vec<String>,
        test_ids: Vec<String>,
        entries: Vec<bool>,
    ) -> Result<Self, MatrixError> {
        if solution_ids.is_empty() || test_ids.is_empty() {
            return Err(MatrixError::Empty);
        }
        check_unique(&solution_ids).map_err(MatrixError::DuplicateSolution)?;
        check_unique(&test_ids).map_err(MatrixError::DuplicateTest)?;
        let expected = solution_ids.len() * test_ids.len();
        if entries.len() != expected {
            return Err(MatrixError::EntryCount {
                expected,
                found: entries.len(),
            });
        }
        Ok(Self {
            problem_id: problem_id.into(),
            solution_ids,
            test_ids,
            entries,
        })
    }

    pub fn from_rows(
        problem_id: impl Into<String>,
        solution_ids: Vec<String>,
        test_ids: Vec<String>,
        rows: &[Vec<bool>],
    ) -> Result<Self, MatrixError> {
        if rows.len() != solution_ids.len() {
            return Err(MatrixError::RowCount {
                expected: solution_ids.len(),
                found: rows.len(),
            });
        }
        let mut entries = Vec::with_capacity(rows.len() * test_ids.len());
        for (i, row) in rows.iter().enumerate() {
            if row.len() != test_ids.len() {
                return Err(MatrixError::RowLength {
                    row: i,
                    expected: test_ids.len(),
                    found: row.len(),
                });
            }
            entries.extend_from_slice(row);
        }
        Self::new(problem_id, solution_ids, test_ids, entries)
    }

    /// Matrix with generated ids `s0..`, `t0..`; convenient for tests and
    /// for matrices whose ids carry no meaning.
    pub fn from_bool_rows(problem_id: impl Into<String>, rows: &[Vec<bool>]) -> Result<Self, MatrixError> {
        let n = rows.len();
        let m = rows.first().map_or(0, Vec::len);
        Self::from_rows(
            problem_id,
            (0..n).map(|i| format!("s{i}")).collect(),
            (0..m).map(|j| format!("t{j}")).collect(),
            rows,
        )
    }

    /// Parses rows written as `'0'`/`'1'` strings, e.g. `["101", "011"]`.
    pub fn from_bitstrings(problem_id: impl Into<String>, rows: &[&str]) -> Result<Self, MatrixError> {
        let parsed = rows
            .iter()
            .enumerate()
            .map(|(i, r)| parse_bitstring(i, r))
            .collect::<Result<Vec<_>, _>>()?;
        Self::from_bool_rows(problem_id, &parsed)
    }

    pub fn problem_id(&self) -> &str {
        &self.problem_id
    }

    pub fn solution_ids(&self) -> &[String] {
        &self.solution_ids
    }

    pub fn test_ids(&self) -> &[String] {
        &self.test_ids
    }

    pub fn n_solutions(&self) -> usize {
        self.solution_ids.len()
    }

    pub fn n_tests(&self) -> usize {
        self.test_ids.len()
    }

    pub fn get(&self, i: usize, j: usize) -> bool {
        self.entries[i * self.n_tests() + j]
    }

    pub fn row(&self, i: usize) -> &[bool] {
        let m = self.n_tests();
        &self.entries[i * m..(i + 1) * m]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[bool]> {
        self.entries.chunks(self.n_tests())
    }

    pub fn row_sum(&self, i: usize) -> usize {
        self.row(i).iter().filter(|&&b| b).count()
    }

    pub fn pass_count(&self) -> usize {
        self.entries.iter().filter(|&&b| b).count()
    }

    /// Columns passed by every solution in `rows`. Empty `rows` passes
    /// every column vacuously.
    pub fn columns_passed_by_all(&self, rows: &[usize]) -> Vec<usize> {
        (0..self.n_tests())
            .filter(|&j| rows.iter().all(|&i| self.get(i, j)))
            .collect()
    }

    /// Reorders rows so that new row `r` is old row `order[r]`.
    pub fn permute_rows(&self, order: &[usize]) -> Self {
        let rows: Vec<Vec<bool>> = order.iter().map(|&i| self.row(i).to_vec()).collect();
        let ids = order.iter().map(|&i| self.solution_ids[i].clone()).collect();
        Self::from_rows(self.problem_id.clone(), ids, self.test_ids.clone(), &rows)
            .expect("row permutation of a valid matrix")
    }

    /// Reorders columns so that new column `c` is old column `order[c]`.
    pub fn permute_columns(&self, order: &[usize]) -> Self {
        let rows: Vec<Vec<bool>> = self
            .rows()
            .map(|row| order.iter().map(|&j| row[j]).collect())
            .collect();
        let ids = order.iter().map(|&j| self.test_ids[j].clone()).collect();
        Self::from_rows(self.problem_id.clone(), self.solution_ids.clone(), ids, &rows)
            .expect("column permutation of a valid matrix")
    }

    pub fn to_record(&self) -> MatrixRecord {
        MatrixRecord {
            problem_id: self.problem_id.clone(),
            solutions: self.solution_ids.clone(),
            tests: self.test_ids.clone(),
            rows: self
                .rows()
                .map(|r| r.iter().map(|&b| if b { '1' } else { '0' }).collect())
                .collect(),
        }
    }
}

fn check_unique(ids: &[String]) -> Result<(), String> {
    let mut seen = HashSet::with_capacity(ids.len());
    for id in ids {
        if !seen.insert(id.as_str()) {
            return Err(id.clone());
        }
    }
    Ok(())
}

fn parse_bitstring(row: usize, s: &str) -> Result<Vec<bool>, MatrixError> {
    s.chars()
        .enumerate()
        .map(|(col, ch)| match ch {
            '0' => Ok(false),
            '1' => Ok(true),
            _ => Err(MatrixError::InvalidBit { row, col, ch }),
        })
        .collect()
}

/// Assembles a matrix from `(solution_id, test_id, passed)` triples.
///
/// The triples must cover the cross product of the distinct solution and
/// test ids exactly once.
pub fn build_matrix<S, T, I>(problem_id: &str, outcomes: I) -> Result<PassingMatrix, MatrixError>
where
    S: AsRef<str>,
    T: AsRef<str>,
    I: IntoIterator<Item = (S, T, bool)>,
{
    let mut solution_ids: Vec<String> = Vec::new();
    let mut test_ids: Vec<String> = Vec::new();
    let mut sol_index: HashMap<String, usize> = HashMap::new();
    let mut test_index: HashMap<String, usize> = HashMap::new();
    let mut cells: HashMap<(usize, usize), bool> = HashMap::new();

    for (s, t, passed) in outcomes {
        let (s, t) = (s.as_ref(), t.as_ref());
        let i = *sol_index.entry(s.to_owned()).or_insert_with(|| {
            solution_ids.push(s.to_owned());
            solution_ids.len() - 1
        });
        let j = *test_index.entry(t.to_owned()).or_insert_with(|| {
            test_ids.push(t.to_owned());
            test_ids.len() - 1
        });
        if cells.insert((i, j), passed).is_some() {
            return Err(MatrixError::DuplicatePair {
                solution: s.to_owned(),
                test: t.to_owned(),
            });
        }
    }

    let mut entries = Vec::with_capacity(solution_ids.len() * test_ids.len());
    for (i, s) in solution_ids.iter().enumerate() {
        for (j, t) in test_ids.iter().enumerate() {
            match cells.get(&(i, j)) {
                Some(&b) => entries.push(b),
                None => {
                    return Err(MatrixError::MissingPair {
                        solution: s.clone(),
                        test: t.clone(),
                    })
                }
            }
        }
    }
    PassingMatrix::new(problem_id, solution_ids, test_ids, entries)
}

/// Rank over the rationals, computed exactly by fraction-free elimination.
pub fn rank(matrix: &PassingMatrix) -> usize {
    let to_rows = |f: fn(bool) -> i128| -> Vec<Vec<i128>> {
        matrix.rows().map(|r| r.iter().map(|&b| f(b)).collect()).collect()
    };
    let small = to_rows(|b| b as i128);
    if let Some(r) = bareiss_rank(small) {
        return r;
    }
    // Minors of large 0/1 matrices can exceed i128.
    let big: Vec<Vec<BigInt>> = matrix
        .rows()
        .map(|r| r.iter().map(|&b| BigInt::from(b as u8)).collect())
        .collect();
    bareiss_rank(big).expect("BigInt elimination cannot overflow")
}

/// Rank over GF(2).
pub fn gf2_rank(matrix: &PassingMatrix) -> usize {
    let mut rows: Vec<Vec<bool>> = matrix.rows().map(<[bool]>::to_vec).collect();
    let m = matrix.n_tests();
    let mut rank = 0;
    for col in 0..m {
        let Some(p) = (rank..rows.len()).find(|&r| rows[r][col]) else {
            continue;
        };
        rows.swap(rank, p);
        let pivot = rows[rank].clone();
        for (r, row) in rows.iter_mut().enumerate() {
            if r != rank && row[col] {
                row.iter_mut().zip(&pivot).for_each(|(a, &b)| *a ^= b);
            }
        }
        rank += 1;
    }
    rank
}

trait ExactInt: Clone {
    fn is_zero(&self) -> bool;
    /// `(a*d - b*c) / p`, exact by the Bareiss invariant. `None` on overflow.
    fn cross_div(a: &Self, d: &Self, b: &Self, c: &Self, p: &Self) -> Option<Self>;
    fn one() -> Self;
}

impl ExactInt for i128 {
    fn is_zero(&self) -> bool {
        *self == 0
    }

    fn cross_div(a: &Self, d: &Self, b: &Self, c: &Self, p: &Self) -> Option<Self> {
        let lhs = a.checked_mul(*d)?;
        let rhs = b.checked_mul(*c)?;
        Some(lhs.checked_sub(rhs)? / *p)
    }

    fn one() -> Self {
        1
    }
}

impl ExactInt for BigInt {
    fn is_zero(&self) -> bool {
        Zero::is_zero(self)
    }

    fn cross_div(a: &Self, d: &Self, b: &Self, c: &Self, p: &Self) -> Option<Self> {
        Some((a * d - b * c) / p)
    }

    fn one() -> Self {
        One::one()
    }
}

#[allow(clippy::needless_range_loop)] // two rows of `a` are read per update
fn bareiss_rank<T: ExactInt>(mut a: Vec<Vec<T>>) -> Option<usize> {
    let n = a.len();
    let m = a.first().map_or(0, Vec::len);
    let mut prev = T::one();
    let mut rank = 0;
    for col in 0..m {
        if rank == n {
            break;
        }
        let Some(p) = (rank..n).find(|&r| !a[r][col].is_zero()) else {
            continue;
        };
        a.swap(rank, p);
        let pivot = a[rank][col].clone();
        for r in rank + 1..n {
            let lead = a[r][col].clone();
            for j in col + 1..m {
                a[r][j] = T::cross_div(&pivot, &a[r][j], &lead, &a[rank][j], &prev)?;
            }
            a[r][col] = T::cross_div(&pivot, &a[r][col], &lead, &a[rank][col], &prev)?;
        }
        prev = pivot;
        rank += 1;
    }
    Some(rank)
}

/// Partitions rows into maximal groups of identical rows, ordered by first
/// member index.
pub fn signatures(matrix: &PassingMatrix) -> Vec<RowSignature> {
    let mut groups: Vec<RowSignature> = Vec::new();
    let mut by_bits: HashMap<&[bool], usize> = HashMap::new();
    for (i, row) in matrix.rows().enumerate() {
        match by_bits.get(row) {
            Some(&g) => groups[g].member_indices.push(i),
            None => {
                by_bits.insert(row, groups.len());
                groups.push(RowSignature {
                    bits: row.to_vec(),
                    member_indices: vec![i],
                });
            }
        }
    }
    groups
}

/// One line of a matrix file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MatrixRecord {
    pub problem_id: String,
    pub solutions: Vec<String>,
    pub tests: Vec<String>,
    pub rows: Vec<String>,
}

impl TryFrom<MatrixRecord> for PassingMatrix {
    type Error = MatrixError;

    fn try_from(rec: MatrixRecord) -> Result<Self, MatrixError> {
        if rec.rows.len() != rec.solutions.len() {
            return Err(MatrixError::RowCount {
                expected: rec.solutions.len(),
                found: rec.rows.len(),
            });
        }
        let mut rows = Vec::with_capacity(rec.rows.len());
        for (i, r) in rec.rows.iter().enumerate() {
            let bits = parse_bitstring(i, r)?;
            if bits.len() != rec.tests.len() {
                return Err(MatrixError::RowLength {
                    row: i,
                    expected: rec.tests.len(),
                    found: bits.len(),
                });
            }
            rows.push(bits);
        }
        PassingMatrix::from_rows(rec.problem_id, rec.solutions, rec.tests, &rows)
    }
}

#[derive(Debug, Error)]
pub enum MatrixFileError {
    #[error("line {line}: {source}")]
    Io {
        line: usize,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: malformed record: {source}")]
    Json {
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error("line {line}: {source}")]
    Matrix {
        line: usize,
        #[source]
        source: MatrixError,
    },
}

impl MatrixFileError {
    pub fn line(&self) -> usize {
        match self {
            Self::Io { line, .. } | Self::Json { line, .. } | Self::Matrix { line, .. } => *line,
        }
    }
}

/// Reads a line-delimited matrix file. Blank lines are skipped; line
/// numbers in errors are 1-based.
pub fn read_matrix_file<R: BufRead>(reader: R) -> Result<Vec<PassingMatrix>, MatrixFileError> {
    let mut out = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|source| MatrixFileError::Io { line: line_no, source })?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: MatrixRecord =
            serde_json::from_str(&line).map_err(|source| MatrixFileError::Json { line: line_no, source })?;
        let m = PassingMatrix::try_from(rec).map_err(|source| MatrixFileError::Matrix { line: line_no, source })?;
        out.push(m);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(rows: &[&str]) -> PassingMatrix {
        PassingMatrix::from_bitstrings("p", rows).unwrap()
    }

    #[test]
    fn build_all_pass() {
        let outcomes = [("s1", "t1", true), ("s1", "t2", true), ("s2", "t1", true), ("s2", "t2", true)];
        let mat = build_matrix("p", outcomes).unwrap();
        assert_eq!(mat.n_solutions(), 2);
        assert_eq!(mat.n_tests(), 2);
        assert_eq!(mat.pass_count(), 4);
    }

    #[test]
    fn build_missing_pair() {
        let outcomes = [("s1", "t1", true), ("s1", "t2", true), ("s2", "t2", false)];
        let err = build_matrix("p", outcomes).unwrap_err();
        assert_eq!(
            err,
            MatrixError::MissingPair {
                solution: "s2".into(),
                test: "t1".into()
            }
        );
    }

    #[test]
    fn build_duplicate_pair() {
        let outcomes = [("s1", "t1", true), ("s1", "t1", false)];
        assert!(matches!(
            build_matrix("p", outcomes),
            Err(MatrixError::DuplicatePair { .. })
        ));
    }

    #[test]
    fn build_uses_first_appearance_order() {
        let outcomes = [
            ("b", "y", true),
            ("a", "y", false),
            ("b", "x", false),
            ("a", "x", true),
        ];
        let mat = build_matrix("p", outcomes).unwrap();
        assert_eq!(mat.solution_ids(), ["b", "a"]);
        assert_eq!(mat.test_ids(), ["y", "x"]);
        assert_eq!(mat.row(0), [true, false]);
        assert_eq!(mat.row(1), [false, true]);
    }

    #[test]
    fn constructor_rejects_duplicates_and_empty() {
        assert_eq!(
            PassingMatrix::new("p", vec![], vec!["t".into()], vec![]),
            Err(MatrixError::Empty)
        );
        assert_eq!(
            PassingMatrix::new("p", vec!["a".into(), "a".into()], vec!["t".into()], vec![true, true]),
            Err(MatrixError::DuplicateSolution("a".into()))
        );
    }

    #[test]
    fn rank_examples() {
        assert_eq!(rank(&m(&["1111", "1111", "1111", "1111"])), 1);
        assert_eq!(rank(&m(&["1000", "0100", "0010", "0001"])), 4);
        assert_eq!(rank(&m(&["0000", "0000"])), 0);
        // singular over GF(2) but not over Q
        let tri = m(&["110", "011", "101"]);
        assert_eq!(rank(&tri), 3);
        assert_eq!(gf2_rank(&tri), 2);
    }

    #[test]
    fn rank_falls_back_to_bigint_for_large_minors() {
        // 64x64 random-ish 0/1 matrix stresses the i128 path; result must
        // never exceed the shape bound.
        let rows: Vec<Vec<bool>> = (0..64)
            .map(|i| (0..64).map(|j| ((i * 37 + j * 11 + i * j) % 5) < 2).collect())
            .collect();
        let mat = PassingMatrix::from_bool_rows("p", &rows).unwrap();
        let r = rank(&mat);
        assert!(r <= 64);
        assert!(r >= gf2_rank(&mat));
    }

    #[test]
    fn signature_grouping() {
        let sigs = signatures(&m(&["101", "101", "011"]));
        assert_eq!(sigs.len(), 2);
        assert_eq!(sigs[0].member_indices, vec![0, 1]);
        assert_eq!(sigs[0].bits, vec![true, false, true]);
        assert_eq!(sigs[1].member_indices, vec![2]);
        assert_eq!(sigs[1].passed_columns(), vec![1, 2]);

        let same = signatures(&m(&["11", "11", "11"]));
        assert_eq!(same.len(), 1);
        assert_eq!(same[0].member_indices, vec![0, 1, 2]);
    }

    #[test]
    fn record_parsing_errors() {
        let bad_len = MatrixRecord {
            problem_id: "p".into(),
            solutions: vec!["a".into()],
            tests: vec!["x".into(), "y".into()],
            rows: vec!["1".into()],
        };
        assert!(matches!(
            PassingMatrix::try_from(bad_len),
            Err(MatrixError::RowLength { row: 0, expected: 2, found: 1 })
        ));
        let bad_char = MatrixRecord {
            problem_id: "p".into(),
            solutions: vec!["a".into()],
            tests: vec!["x".into()],
            rows: vec!["2".into()],
        };
        assert!(matches!(
            PassingMatrix::try_from(bad_char),
            Err(MatrixError::InvalidBit { ch: '2', .. })
        ));
    }

    #[test]
    fn matrix_file_reports_offending_line() {
        let text = "{\"problem_id\":\"a\",\"solutions\":[\"s\"],\"tests\":[\"t\"],\"rows\":[\"1\"]}\n\n\
                    {\"problem_id\":\"b\",\"solutions\":[\"s\"],\"tests\":[\"t\"],\"rows\":[\"10\"]}\n";
        let err = read_matrix_file(text.as_bytes()).unwrap_err();
        assert_eq!(err.line(), 3);
        let ok = read_matrix_file(&text.as_bytes()[..text.find('\n').unwrap() + 1]).unwrap();
        assert_eq!(ok.len(), 1);
        assert_eq!(ok[0].to_record().rows, vec!["1"]);
    }
}
