use crate::error::{Result, SeedError};
use crate::numeric::Tensor;

/// Lookback slice of a multivariate series: `C` variables by `L` steps.
#[derive(Clone, Debug, PartialEq)]
pub struct SeriesWindow {
    values: Tensor,
}

impl SeriesWindow {
    pub fn new(values: Tensor) -> Result<Self> {
        if values.ndim() != 2 || values.shape()[0] == 0 || values.shape()[1] == 0 {
            return Err(SeedError::shape(format!(
                "series window must be a non-empty C x L matrix, got {:?}",
                values.shape()
            )));
        }
        Ok(Self { values })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(SeedError::shape("ragged series rows"));
        }
        Self::new(Tensor::new(
            vec![rows.len(), cols],
            rows.iter().flatten().copied().collect(),
        )?)
    }

    pub fn n_vars(&self) -> usize {
        self.values.shape()[0]
    }

    pub fn len(&self) -> usize {
        self.values.shape()[1]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn row(&self, c: usize) -> &[f64] {
        let l = self.len();
        &self.values.data()[c * l..(c + 1) * l]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.values.data().chunks(self.len())
    }

    pub fn values(&self) -> &Tensor {
        &self.values
    }

    pub fn into_tensor(self) -> Tensor {
        self.values
    }
}
