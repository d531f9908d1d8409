//! Continual-learning metrics over the accuracy matrix and the storage
//! ledger. Stages are 1-based throughout: stage `m` is the state after the
//! m-th task has been trained.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Lower-triangular matrix: `get(i, j)` is the accuracy on task `j` after
/// training task `i` (both 1-based, `j ≤ i`).
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct AccuracyMatrix {
    rows: Vec<Vec<f64>>,
}

impl AccuracyMatrix {
    pub fn new() -> Self {
        Self::default()
    }

    /// Builds from explicit rows; row `i` (0-based) must have `i + 1` entries.
    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let mut m = Self::new();
        for row in rows {
            m.push_row(row)?;
        }
        Ok(m)
    }

    /// Appends the row for the next stage.
    pub fn push_row(&mut self, row: Vec<f64>) -> Result<()> {
        let expected = self.rows.len() + 1;
        if row.len() != expected {
            return Err(Error::shape(format!(
                "accuracy row for stage {expected} has {} entries",
                row.len()
            )));
        }
        if let Some(a) = row.iter().find(|a| !(0.0..=1.0).contains(*a)) {
            return Err(Error::usage(format!("accuracy {a} outside [0, 1]")));
        }
        self.rows.push(row);
        Ok(())
    }

    pub fn stages(&self) -> usize {
        self.rows.len()
    }

    pub fn get(&self, stage: usize, task: usize) -> f64 {
        self.rows[stage - 1][task - 1]
    }

    pub fn row(&self, stage: usize) -> &[f64] {
        &self.rows[stage - 1]
    }

    fn check_stage(&self, m: usize) -> Result<()> {
        if m == 0 || m > self.rows.len() {
            return Err(Error::usage(format!(
                "stage {m} outside 1..={}",
                self.rows.len()
            )));
        }
        Ok(())
    }
}

/// Average accuracy over the tasks seen by stage `m`.
pub fn apa(matrix: &AccuracyMatrix, m: usize) -> Result<f64> {
    matrix.check_stage(m)?;
    Ok(matrix.row(m).iter().sum::<f64>() / m as f64)
}

/// Mean drop from each earlier task's accuracy right after it was trained;
/// 0 at the first stage. Negative values (backward transfer) are kept.
pub fn acf(matrix: &AccuracyMatrix, m: usize) -> Result<f64> {
    matrix.check_stage(m)?;
    if m == 1 {
        return Ok(0.0);
    }
    let drop: f64 = (1..m).map(|t| matrix.get(t, t) - matrix.get(m, t)).sum();
    Ok(drop / (m - 1) as f64)
}

/// Retained parameter count per stage, in exact scalars.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct StorageLedger {
    prams: Vec<u64>,
}

impl StorageLedger {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_counts(prams: Vec<u64>) -> Self {
        StorageLedger { prams }
    }

    /// Ledger where stage `t` stores `block · (1 + snapshots[t])` scalars:
    /// one block for the model being trained plus one per snapshot taking
    /// part in that stage's penalty.
    pub fn from_snapshots(block: u64, snapshots: &[usize]) -> Self {
        StorageLedger {
            prams: snapshots.iter().map(|&s| block * (1 + s as u64)).collect(),
        }
    }

    pub fn push(&mut self, prams: u64) {
        self.prams.push(prams);
    }

    pub fn stages(&self) -> usize {
        self.prams.len()
    }

    pub fn counts(&self) -> &[u64] {
        &self.prams
    }
}

/// Parameter-size efficiency at stage `m`:
/// `min(1, Σ_{t ≤ m} Prams_1 / Prams_t / m)`.
pub fn ps(ledger: &StorageLedger, m: usize) -> Result<f64> {
    if m == 0 || m > ledger.prams.len() {
        return Err(Error::usage(format!(
            "stage {m} outside 1..={}",
            ledger.prams.len()
        )));
    }
    if let Some(t) = ledger.prams[..m].iter().position(|&p| p == 0) {
        return Err(Error::usage(format!("zero parameter count at stage {}", t + 1)));
    }
    let first = ledger.prams[0] as f64;
    let sum: f64 = ledger.prams[..m].iter().map(|&p| first / p as f64).sum();
    Ok((sum / m as f64).min(1.0))
}

/// Unweighted mean of per-stage values.
pub fn stream_averages(values: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::usage("stream average of no stages"));
    }
    Ok(values.iter().sum::<f64>() / values.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn example() -> AccuracyMatrix {
        AccuracyMatrix::from_rows(vec![
            vec![0.9],
            vec![0.8, 0.95],
            vec![0.7, 0.85, 0.99],
        ])
        .unwrap()
    }

    #[test]
    fn apa_by_hand() {
        let a = example();
        assert_eq!(apa(&a, 1).unwrap(), 0.9);
        assert!((apa(&a, 2).unwrap() - 0.875).abs() < 1e-15);
        assert!((apa(&a, 3).unwrap() - 2.54 / 3.0).abs() < 1e-15);
        assert!(apa(&a, 4).is_err());
        assert!(apa(&a, 0).is_err());
    }

    #[test]
    fn acf_by_hand() {
        let a = example();
        assert_eq!(acf(&a, 1).unwrap(), 0.0);
        assert!((acf(&a, 2).unwrap() - 0.1).abs() < 1e-15);
        // ((0.9 - 0.7) + (0.95 - 0.85)) / 2
        assert!((acf(&a, 3).unwrap() - 0.15).abs() < 1e-15);
    }

    #[test]
    fn constant_matrix() {
        let rows = (1..=5).map(|i| vec![0.6; i]).collect();
        let a = AccuracyMatrix::from_rows(rows).unwrap();
        for m in 1..=5 {
            assert!((apa(&a, m).unwrap() - 0.6).abs() < 1e-15);
            assert!(acf(&a, m).unwrap().abs() < 1e-15);
        }
    }

    #[test]
    fn rejects_bad_rows() {
        assert!(AccuracyMatrix::from_rows(vec![vec![0.5, 0.5]]).is_err());
        assert!(AccuracyMatrix::from_rows(vec![vec![1.5]]).is_err());
    }

    #[test]
    fn ps_cases() {
        let flat = StorageLedger::from_counts(vec![7; 4]);
        for m in 1..=4 {
            assert_eq!(ps(&flat, m).unwrap(), 1.0);
        }
        let linear = StorageLedger::from_snapshots(100, &(0..10).collect::<Vec<_>>());
        let h10: f64 = (1..=10).map(|t| 1.0 / t as f64).sum();
        assert!((ps(&linear, 10).unwrap() - h10 / 10.0).abs() < 1e-15);
        assert!(ps(&StorageLedger::from_counts(vec![3, 0]), 2).is_err());
        assert!(ps(&flat, 5).is_err());
        // a shrinking ledger would exceed 1 without the clamp
        assert_eq!(ps(&StorageLedger::from_counts(vec![4, 1]), 2).unwrap(), 1.0);
    }

    #[test]
    fn stream_average_cases() {
        assert_eq!(stream_averages(&[0.4]).unwrap(), 0.4);
        assert!((stream_averages(&[0.9, 0.8]).unwrap() - 0.85).abs() < 1e-15);
        assert!(stream_averages(&[]).is_err());
    }
}
