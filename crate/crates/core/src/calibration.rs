//! Dynamic B4: choose `(beta0, alpha_xy)` from a log-scale grid by
//! maximizing selection accuracy on a small labeled set.

use std::io::BufRead;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::matrix::PassingMatrix;
use crate::selectors::{select_b4, PriorConfig};

#[derive(Debug, Error)]
pub enum CalibrationError {
    #[error("calibration set is empty")]
    EmptyCalibrationSet,
    #[error("calibration instance `{0}` has no reference solution or tests")]
    EmptyReference(String),
    #[error("line {line}: malformed calibration record: {source}")]
    Parse {
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error("line {line}: {source}")]
    Io {
        line: usize,
        #[source]
        source: std::io::Error,
    },
}

/// One labeled instance `(x, s†, T†)`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CalibrationInstance {
    pub problem_id: String,
    #[serde(rename = "reference_solution")]
    pub reference_solution_id: String,
    #[serde(rename = "reference_tests")]
    pub reference_test_ids: Vec<String>,
}

impl CalibrationInstance {
    pub fn validate(&self) -> Result<(), CalibrationError> {
        if self.reference_solution_id.is_empty() || self.reference_test_ids.is_empty() {
            return Err(CalibrationError::EmptyReference(self.problem_id.clone()));
        }
        Ok(())
    }
}

pub fn read_calibration_file<R: BufRead>(reader: R) -> Result<Vec<CalibrationInstance>, CalibrationError> {
    let mut out = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|source| CalibrationError::Io { line: line_no, source })?;
        if line.trim().is_empty() {
            continue;
        }
        let inst: CalibrationInstance =
            serde_json::from_str(&line).map_err(|source| CalibrationError::Parse { line: line_no, source })?;
        inst.validate()?;
        out.push(inst);
    }
    Ok(out)
}

/// Exponent grid `Ω`: `beta0 = 10^u`, `alpha_xy = 10^v`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PriorGrid {
    pub beta0_exponents: Vec<i32>,
    pub alpha_xy_exponents: Vec<i32>,
}

impl Default for PriorGrid {
    /// `u ∈ 0..=9`, `v ∈ 0..=7`: 80 configurations.
    fn default() -> Self {
        Self {
            beta0_exponents: (0..=9).collect(),
            alpha_xy_exponents: (0..=7).collect(),
        }
    }
}

/// A grid cell, identified by its exponents.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct GridCell {
    pub beta0_exp: i32,
    pub alpha_xy_exp: i32,
}

impl GridCell {
    pub fn prior(&self) -> PriorConfig {
        PriorConfig::from_exponents(self.beta0_exp, self.alpha_xy_exp)
    }
}

impl PriorGrid {
    /// Cells in tie-break order: ascending `beta0` exponent, then ascending
    /// `alpha_xy` exponent.
    pub fn cells(&self) -> Vec<GridCell> {
        let mut b = self.beta0_exponents.clone();
        let mut a = self.alpha_xy_exponents.clone();
        b.sort_unstable();
        b.dedup();
        a.sort_unstable();
        a.dedup();
        b.iter()
            .flat_map(|&beta0_exp| a.iter().map(move |&alpha_xy_exp| GridCell { beta0_exp, alpha_xy_exp }))
            .collect()
    }

    pub fn len(&self) -> usize {
        self.cells().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Fraction of instances whose representative B4 selection passes the
/// reference tests.
///
/// `verdict(problem_id, solution_index)` reports whether that solution of
/// the instance's matrix passes `T†`.
pub fn calibration_accuracy<F>(prior: &PriorConfig, matrices: &[PassingMatrix], verdict: F) -> Result<f64, CalibrationError>
where
    F: Fn(&str, usize) -> bool,
{
    if matrices.is_empty() {
        return Err(CalibrationError::EmptyCalibrationSet);
    }
    let hits = matrices
        .iter()
        .filter(|m| {
            let sel = select_b4(m, prior);
            sel.first_solution().is_some_and(|i| verdict(m.problem_id(), i))
        })
        .count();
    Ok(hits as f64 / matrices.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationResult {
    pub cell: GridCell,
    pub prior: PriorConfig,
    pub accuracy: f64,
    /// Accuracy for every cell, in [`PriorGrid::cells`] order.
    pub surface: Vec<(GridCell, f64)>,
}

/// Grid search for the most accurate prior. Ties go to the smaller
/// `beta0` exponent, then the smaller `alpha_xy` exponent.
pub fn calibrate<F>(grid: &PriorGrid, matrices: &[PassingMatrix], verdict: F) -> Result<CalibrationResult, CalibrationError>
where
    F: Fn(&str, usize) -> bool + Sync,
{
    if matrices.is_empty() {
        return Err(CalibrationError::EmptyCalibrationSet);
    }
    let cells = grid.cells();
    let surface: Vec<(GridCell, f64)> = cells
        .par_iter()
        .map(|cell| {
            let acc = calibration_accuracy(&cell.prior(), matrices, &verdict)?;
            Ok((*cell, acc))
        })
        .collect::<Result<_, CalibrationError>>()?;

    let mut best = 0;
    for (i, (_, acc)) in surface.iter().enumerate() {
        if *acc > surface[best].1 {
            best = i;
        }
    }
    let (cell, accuracy) = surface[best];
    Ok(CalibrationResult {
        cell,
        prior: cell.prior(),
        accuracy,
        surface,
    })
}
