//! Input datasets `(X, y)`.

use crate::error::CoreError;

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    x: Vec<Vec<f64>>,
    y: Vec<f64>,
    dims: usize,
}

impl Dataset {
    pub fn new(x: Vec<Vec<f64>>, y: Vec<f64>) -> Result<Dataset, CoreError> {
        if x.len() < 2 || x.len() != y.len() {
            return Err(CoreError::DatasetTooSmall(x.len().min(y.len())));
        }
        let dims = x[0].len();
        for (i, row) in x.iter().enumerate() {
            if row.len() != dims {
                return Err(CoreError::RaggedRow { row: i, got: row.len(), expected: dims });
            }
        }
        if !y.iter().all(|v| v.is_finite()) {
            return Err(CoreError::Format("non-finite target value".into()));
        }
        Ok(Dataset { x, y, dims })
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn dims(&self) -> usize {
        self.dims
    }

    pub fn x(&self) -> &[Vec<f64>] {
        &self.x
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    /// Population standard deviation of the targets.
    pub fn y_std(&self) -> f64 {
        let n = self.y.len() as f64;
        let mean = self.y.iter().sum::<f64>() / n;
        (self.y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt()
    }

    /// Root-mean-square of the targets (the noise scale in the noise
    /// experiments).
    pub fn y_rms(&self) -> f64 {
        let n = self.y.len() as f64;
        (self.y.iter().map(|v| v * v).sum::<f64>() / n).sqrt()
    }

    pub fn with_targets(&self, y: Vec<f64>) -> Result<Dataset, CoreError> {
        Dataset::new(self.x.clone(), y)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_tiny_and_ragged() {
        assert!(Dataset::new(vec![vec![1.0]], vec![1.0]).is_err());
        assert!(Dataset::new(vec![vec![1.0], vec![1.0, 2.0]], vec![1.0, 2.0]).is_err());
    }

    #[test]
    fn population_std() {
        let d = Dataset::new(vec![vec![0.0], vec![0.0]], vec![0.0, 2.0]).unwrap();
        assert_eq!(d.y_std(), 1.0);
        assert_eq!(d.y_rms(), 2.0f64.sqrt());
    }
}
