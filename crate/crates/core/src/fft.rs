//! Thin 2-D wrapper over `rustfft`.

use std::sync::Arc;

use ndarray::Array2;
use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

/// Unnormalized 2-D transform of an `[rows, cols]` array, in place.
pub struct Fft2 {
    row: Arc<dyn Fft<f64>>,
    col: Arc<dyn Fft<f64>>,
    rows: usize,
    cols: usize,
}

impl Fft2 {
    pub fn forward(rows: usize, cols: usize) -> Self {
        let mut planner = FftPlanner::new();
        Self {
            row: planner.plan_fft_forward(cols),
            col: planner.plan_fft_forward(rows),
            rows,
            cols,
        }
    }

    pub fn inverse(rows: usize, cols: usize) -> Self {
        let mut planner = FftPlanner::new();
        Self {
            row: planner.plan_fft_inverse(cols),
            col: planner.plan_fft_inverse(rows),
            rows,
            cols,
        }
    }

    pub fn process(&self, data: &mut Array2<Complex64>) {
        assert_eq!(data.dim(), (self.rows, self.cols));
        let slice = data
            .as_slice_mut()
            .expect("fft input must be standard layout");
        self.row.process(slice);
        let mut column = vec![Complex64::new(0.0, 0.0); self.rows];
        for c in 0..self.cols {
            for r in 0..self.rows {
                column[r] = slice[r * self.cols + c];
            }
            self.col.process(&mut column);
            for r in 0..self.rows {
                slice[r * self.cols + c] = column[r];
            }
        }
    }
}

/// Forward transform of a real field.
pub fn fft2_real(field: &Array2<f64>) -> Array2<Complex64> {
    let (h, w) = field.dim();
    let mut data = field.mapv(|v| Complex64::new(v, 0.0));
    Fft2::forward(h, w).process(&mut data);
    data
}

/// Smallest integer `>= n` whose only prime factors are 2, 3 and 5.
pub fn fast_len(n: usize) -> usize {
    let mut m = n.max(1);
    loop {
        let mut r = m;
        for p in [2, 3, 5] {
            while r % p == 0 {
                r /= p;
            }
        }
        if r == 1 {
            return m;
        }
        m += 1;
    }
}

/// Wrap a signed index onto `[0, n)`.
#[inline]
pub fn wrap(i: i64, n: usize) -> usize {
    i.rem_euclid(n as i64) as usize
}
