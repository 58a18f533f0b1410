//! Discrete differential operators on periodic fields.
//!
//! Derivatives use second-order central differences, the Laplacian the
//! standard 5-point stencil, and the inverse Laplacian is applied spectrally
//! with the exact inverse symbol of that stencil. Forward and inverse
//! operators therefore compose to the identity on zero-mean fields, which the
//! divergence-free property of the reconstructed velocity relies on.

use nalgebra::DMatrix;
use num_complex::Complex;

use super::Grid;
use crate::fft::{signed_freq, Fft2d};

/// Central difference along s1 (rows), spacing 1/n1.
pub fn dx(field: &DMatrix<f64>, grid: &Grid) -> DMatrix<f64> {
    let (n1, n2) = (grid.n1, grid.n2);
    let scale = n1 as f64 / 2.0;
    DMatrix::from_fn(n1, n2, |i, j| {
        let up = field[((i + 1) % n1, j)];
        let dn = field[((i + n1 - 1) % n1, j)];
        (up - dn) * scale
    })
}

/// Central difference along s2 (columns), spacing 1/n2.
pub fn dy(field: &DMatrix<f64>, grid: &Grid) -> DMatrix<f64> {
    let (n1, n2) = (grid.n1, grid.n2);
    let scale = n2 as f64 / 2.0;
    DMatrix::from_fn(n1, n2, |i, j| {
        let up = field[(i, (j + 1) % n2)];
        let dn = field[(i, (j + n2 - 1) % n2)];
        (up - dn) * scale
    })
}

/// 5-point Laplacian with periodic wrap-around.
pub fn laplacian(field: &DMatrix<f64>, grid: &Grid) -> DMatrix<f64> {
    let (n1, n2) = (grid.n1, grid.n2);
    let c1 = (n1 * n1) as f64;
    let c2 = (n2 * n2) as f64;
    DMatrix::from_fn(n1, n2, |i, j| {
        let center = field[(i, j)];
        let s1 = field[((i + 1) % n1, j)] + field[((i + n1 - 1) % n1, j)] - 2.0 * center;
        let s2 = field[(i, (j + 1) % n2)] + field[(i, (j + n2 - 1) % n2)] - 2.0 * center;
        s1 * c1 + s2 * c2
    })
}

/// Spectral inverse of the 5-point Laplacian on a periodic grid.
pub struct PoissonSolver {
    grid: Grid,
    fft: Fft2d,
    /// 1/symbol per mode, zero at the annihilated (0,0) bin.
    inverse_symbol: DMatrix<f64>,
}

impl PoissonSolver {
    pub fn new(grid: Grid) -> Self {
        let (n1, n2) = (grid.n1, grid.n2);
        let inverse_symbol = DMatrix::from_fn(n1, n2, |k1, k2| {
            if k1 == 0 && k2 == 0 {
                return 0.0;
            }
            let f1 = signed_freq(k1, n1) as f64;
            let f2 = signed_freq(k2, n2) as f64;
            let s1 = 2.0 * (n1 as f64) * (std::f64::consts::PI * f1 / n1 as f64).sin();
            let s2 = 2.0 * (n2 as f64) * (std::f64::consts::PI * f2 / n2 as f64).sin();
            -1.0 / (s1 * s1 + s2 * s2)
        });
        Self {
            grid,
            fft: Fft2d::new(n1, n2),
            inverse_symbol,
        }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    /// Zero-mean solution of `laplacian(phi) = field - mean(field)`.
    pub fn inverse_laplacian(&self, field: &DMatrix<f64>) -> DMatrix<f64> {
        let mut spec = self.fft.forward(field);
        for k1 in 0..self.grid.n1 {
            for k2 in 0..self.grid.n2 {
                let s = self.inverse_symbol[(k1, k2)];
                spec[(k1, k2)] = if s == 0.0 {
                    Complex::new(0.0, 0.0)
                } else {
                    spec[(k1, k2)] * s
                };
            }
        }
        self.fft.inverse(&spec)
    }

    /// Discrete symbol of the 5-point Laplacian at signed mode (f1, f2).
    pub fn symbol(&self, f1: i64, f2: i64) -> f64 {
        let (n1, n2) = (self.grid.n1, self.grid.n2);
        let s1 = 2.0 * (n1 as f64) * (std::f64::consts::PI * f1 as f64 / n1 as f64).sin();
        let s2 = 2.0 * (n2 as f64) * (std::f64::consts::PI * f2 as f64 / n2 as f64).sin();
        -(s1 * s1 + s2 * s2)
    }
}

/// Velocity v = (dy(psi), -dx(psi)) with psi the inverse-Laplacian
/// streamfunction of the buoyancy. Divergence-free by construction because
/// the central differences commute.
pub fn velocity_from_buoyancy(
    b: &DMatrix<f64>,
    solver: &PoissonSolver,
) -> (DMatrix<f64>, DMatrix<f64>) {
    let psi = solver.inverse_laplacian(b);
    let grid = solver.grid();
    (dy(&psi, grid), {
        let mut v2 = dx(&psi, grid);
        v2.neg_mut();
        v2
    })
}
