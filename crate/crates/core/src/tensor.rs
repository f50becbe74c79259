//! Dense row-major matrices and the handful of vector helpers the models need.

use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "matrix data length mismatch");
        Matrix { rows, cols, data }
    }

    pub fn uniform<R: Rng>(rows: usize, cols: usize, bound: f64, rng: &mut R) -> Self {
        let data = (0..rows * cols).map(|_| rng.gen_range(-bound..=bound)).collect();
        Matrix { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> [usize; 2] {
        [self.rows, self.cols]
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// `self[:, offset..offset+x.len()] · x`
    pub fn mul_block(&self, offset: usize, x: &[f64]) -> Vec<f64> {
        (0..self.rows)
            .map(|r| dot(&self.row(r)[offset..offset + x.len()], x))
            .collect()
    }

    /// Accumulates `self[:, offset..]ᵀ · g` into `out`.
    pub fn mul_block_t_into(&self, offset: usize, g: &[f64], out: &mut [f64]) {
        for (r, &gr) in g.iter().enumerate() {
            if gr != 0.0 {
                axpy(gr, &self.row(r)[offset..offset + out.len()], out);
            }
        }
    }

    /// Accumulates the outer product `g ⊗ x` into the column block at `offset`.
    pub fn add_outer_block(&mut self, offset: usize, g: &[f64], x: &[f64]) {
        for (r, &gr) in g.iter().enumerate() {
            if gr != 0.0 {
                let row = &mut self.row_mut(r)[offset..offset + x.len()];
                axpy(gr, x, row);
            }
        }
    }
}

/// Descending order for ranking scores. Adding zero maps `-0.0` to `0.0`,
/// so the two tie.
pub fn desc(a: f64, b: f64) -> std::cmp::Ordering {
    (b + 0.0).total_cmp(&(a + 0.0))
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `y += a * x`
pub fn axpy(a: f64, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

pub fn add_assign(y: &mut [f64], x: &[f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += xi;
    }
}

pub fn norm(x: &[f64]) -> f64 {
    dot(x, x).sqrt()
}
