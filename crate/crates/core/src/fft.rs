//! Two-dimensional FFT on small periodic grids.
//!
//! Spectra use the amplitude convention: `forward` divides by the number of
//! grid points, so the (0,0) bin holds the field mean and `inverse` is a
//! plain unnormalized synthesis. Fields are n1 x n2 matrices with row index
//! along s1 and column index along s2.

use std::sync::Arc;

use nalgebra::DMatrix;
use num_complex::Complex;
use rustfft::{Fft, FftPlanner};

pub type Spectrum = DMatrix<Complex<f64>>;

#[derive(Clone)]
pub struct Fft2d {
    n1: usize,
    n2: usize,
    fwd1: Arc<dyn Fft<f64>>,
    inv1: Arc<dyn Fft<f64>>,
    fwd2: Arc<dyn Fft<f64>>,
    inv2: Arc<dyn Fft<f64>>,
}

impl Fft2d {
    pub fn new(n1: usize, n2: usize) -> Self {
        let mut planner = FftPlanner::new();
        Self {
            n1,
            n2,
            fwd1: planner.plan_fft_forward(n1),
            inv1: planner.plan_fft_inverse(n1),
            fwd2: planner.plan_fft_forward(n2),
            inv2: planner.plan_fft_inverse(n2),
        }
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.n1, self.n2)
    }

    /// DFT of a real field, scaled by 1/(n1*n2).
    pub fn forward(&self, field: &DMatrix<f64>) -> Spectrum {
        assert_eq!(field.shape(), (self.n1, self.n2), "field shape mismatch");
        let mut spec = field.map(|v| Complex::new(v, 0.0));
        self.transform_columns(&mut spec, &self.fwd1);
        self.transform_rows(&mut spec, &self.fwd2);
        let scale = 1.0 / (self.n1 * self.n2) as f64;
        spec.iter_mut().for_each(|v| *v *= scale);
        spec
    }

    /// Synthesis of an amplitude-normalized spectrum; returns the real part.
    pub fn inverse(&self, spec: &Spectrum) -> DMatrix<f64> {
        assert_eq!(spec.shape(), (self.n1, self.n2), "spectrum shape mismatch");
        let mut work = spec.clone();
        self.transform_columns(&mut work, &self.inv1);
        self.transform_rows(&mut work, &self.inv2);
        work.map(|v| v.re)
    }

    fn transform_columns(&self, m: &mut Spectrum, fft: &Arc<dyn Fft<f64>>) {
        for mut col in m.column_iter_mut() {
            let slice: &mut [Complex<f64>] = col.as_mut_slice();
            fft.process(slice);
        }
    }

    fn transform_rows(&self, m: &mut Spectrum, fft: &Arc<dyn Fft<f64>>) {
        let mut buf = vec![Complex::new(0.0, 0.0); self.n2];
        for i in 0..self.n1 {
            for j in 0..self.n2 {
                buf[j] = m[(i, j)];
            }
            fft.process(&mut buf);
            for j in 0..self.n2 {
                m[(i, j)] = buf[j];
            }
        }
    }
}

/// Signed frequency of DFT bin `k` on an axis of length `n`; bins above n/2
/// represent negative frequencies.
pub fn signed_freq(k: usize, n: usize) -> i64 {
    if k as i64 <= (n as i64) / 2 {
        k as i64
    } else {
        k as i64 - n as i64
    }
}

/// DFT bin holding signed frequency `f` on an axis of length `n`.
pub fn bin_of(f: i64, n: usize) -> usize {
    f.rem_euclid(n as i64) as usize
}
