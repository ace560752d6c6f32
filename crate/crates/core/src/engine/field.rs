//! Posterior predictions over every grid point, kept in step with a
//! [`GpPosterior`].
//!
//! Row `i` of the cache is row `i` of `L^{-1} K(train, grid)`. Appending a
//! training point adds one row computed from the new Cholesky row, so the
//! whole field updates in O(n N) instead of O(n^2 N).

use crate::domain::Position;
use crate::gp::{clamp_variance, kernel_eval, GpPosterior, Prediction};

#[derive(Debug, Clone)]
pub struct GridField {
    whitened: Vec<Vec<f64>>,
    mean: Vec<f64>,
    sum_sq: Vec<f64>,
    predictions: Vec<Prediction>,
}

impl GridField {
    pub fn build(posterior: &GpPosterior, grid: &[Position]) -> Self {
        let mut field = Self {
            whitened: Vec::with_capacity(posterior.len()),
            mean: vec![0.0; grid.len()],
            sum_sq: vec![0.0; grid.len()],
            predictions: Vec::new(),
        };
        for i in 0..posterior.len() {
            field.add_row(posterior, grid, i);
        }
        field.refresh(posterior);
        field
    }

    /// Account for the last training point of `posterior`, which must have
    /// been appended with [`GpPosterior::push`] returning `Appended`.
    pub fn extend(&mut self, posterior: &GpPosterior, grid: &[Position]) {
        let i = posterior.len() - 1;
        debug_assert_eq!(self.whitened.len(), i);
        self.add_row(posterior, grid, i);
        self.refresh(posterior);
    }

    fn add_row(&mut self, posterior: &GpPosterior, grid: &[Position], i: usize) {
        let params = posterior.params();
        let xi = posterior.training().points()[i];
        let l = posterior.cholesky_row(i);
        let mut row: Vec<f64> = grid.iter().map(|g| kernel_eval(params, &xi, g)).collect();
        for (lij, prev) in l[..i].iter().zip(&self.whitened) {
            for (r, p) in row.iter_mut().zip(prev) {
                *r -= lij * p;
            }
        }
        let d = l[i];
        let z = posterior.whitened_residual()[i];
        for ((r, m), s) in row.iter_mut().zip(&mut self.mean).zip(&mut self.sum_sq) {
            *r /= d;
            *m += *r * z;
            *s += *r * *r;
        }
        self.whitened.push(row);
    }

    fn refresh(&mut self, posterior: &GpPosterior) {
        let v = posterior.params().amplitude;
        self.predictions = self
            .mean
            .iter()
            .zip(&self.sum_sq)
            .map(|(m, s)| Prediction {
                mean: *m,
                variance: clamp_variance(v - s, v),
            })
            .collect();
    }

    pub fn predictions(&self) -> &[Prediction] {
        &self.predictions
    }

    pub fn len(&self) -> usize {
        self.predictions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.predictions.is_empty()
    }
}
