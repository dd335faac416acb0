//! Dense row-major matrices with the handful of kernels the network needs.

use rand::Rng;

#[derive(Debug, Clone, PartialEq)]
pub struct Mat {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Mat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    /// Uniform entries in [-scale, scale].
    pub fn uniform<R: Rng>(rows: usize, cols: usize, scale: f64, rng: &mut R) -> Self {
        let data = (0..rows * cols)
            .map(|_| rng.random_range(-scale..=scale))
            .collect();
        Self { rows, cols, data }
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.rows, self.cols)
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    /// out += self[rows] · x, for the row range `rows`.
    #[inline]
    pub fn matvec_rows_add(&self, rows: std::ops::Range<usize>, x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.cols);
        debug_assert_eq!(out.len(), rows.len());
        for (o, r) in out.iter_mut().zip(rows) {
            *o += dot(self.row(r), x);
        }
    }

    /// out += self · x
    #[inline]
    pub fn matvec_add(&self, x: &[f64], out: &mut [f64]) {
        self.matvec_rows_add(0..self.rows, x, out);
    }

    /// out += self[rows]ᵀ · y
    #[inline]
    pub fn tmatvec_rows_add(&self, rows: std::ops::Range<usize>, y: &[f64], out: &mut [f64]) {
        debug_assert_eq!(out.len(), self.cols);
        for (&yv, r) in y.iter().zip(rows) {
            if yv != 0.0 {
                axpy(yv, self.row(r), out);
            }
        }
    }

    /// out += selfᵀ · y
    #[inline]
    pub fn tmatvec_add(&self, y: &[f64], out: &mut [f64]) {
        self.tmatvec_rows_add(0..self.rows, y, out);
    }

    /// self[rows] += a ⊗ b
    #[inline]
    pub fn add_outer_rows(&mut self, rows: std::ops::Range<usize>, a: &[f64], b: &[f64]) {
        debug_assert_eq!(b.len(), self.cols);
        for (&av, r) in a.iter().zip(rows) {
            if av != 0.0 {
                axpy(av, b, self.row_mut(r));
            }
        }
    }

    #[inline]
    pub fn add_outer(&mut self, a: &[f64], b: &[f64]) {
        self.add_outer_rows(0..self.rows, a, b);
    }

    pub fn sum_squares(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// y += a · x
#[inline]
pub fn axpy(a: f64, x: &[f64], y: &mut [f64]) {
    for (yv, xv) in y.iter_mut().zip(x) {
        *yv += a * xv;
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// In-place log-softmax.
pub fn log_softmax(v: &mut [f64]) {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + v.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
    for x in v.iter_mut() {
        *x -= lse;
    }
}

/// In-place softmax.
pub fn softmax(v: &mut [f64]) {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for x in v.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    for x in v.iter_mut() {
        *x /= sum;
    }
}
