//! Parameter sets of the convection benchmark: the true and surrogate
//! initial-condition mode families, the perturbation basis, and uniform
//! parameter draws.
//!
//! The true family uses wavenumbers a in {2 pi, 4 pi}; each wavenumber
//! contributes sin/cos carrier modes in both fields, and shared s2-harmonics
//! complete the set to 10 directions. The surrogate family doubles the
//! wavenumber set (and the shared harmonics with it), spanning 20 directions
//! that contain the true span. The perturbation set is spanned by the 40
//! lowest-frequency Fourier modes orthogonal to the surrogate span, split
//! 20/20 across the two fields.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::{SetupSpec, Theta3Set};
use crate::error::{Error, Result};
use crate::matrix::{gram_schmidt, thin_svd};
use crate::model::ModelParameters;
use crate::rb::Grid;
use crate::smc::SurrogatePrior;

/// Number of perturbation directions (theta2 lives in a ball of this
/// dimension).
pub const PERTURBATION_DIM: usize = 40;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum WhichSet {
    True,
    Surrogate,
}

/// The benchmark's probabilistic parameter sets.
pub struct ParameterSpace {
    pub grid: Grid,
    /// n x 10 orthonormal span of the true initial conditions.
    pub mode_basis_true: DMatrix<f64>,
    /// n x 20 orthonormal span of the surrogate initial conditions.
    pub mode_basis_surrogate: DMatrix<f64>,
    /// n x 40 orthonormal, orthogonal to the surrogate span.
    pub perturbation_basis: DMatrix<f64>,
    /// Half-thickness of the theta2 ball.
    pub gamma: f64,
    pub theta3_set: Theta3Set,
    /// Half-width of the uniform amplitude box for (pi_b, pi_tau, pi_tau').
    pub amplitude: f64,
    pub wavenumbers_true: Vec<f64>,
    pub wavenumbers_surrogate: Vec<f64>,
}

/// One initial-condition mode: a field shape assigned to one of the two
/// stacked fields.
fn mode_vector(grid: &Grid, field: usize, shape: impl Fn(f64, f64) -> f64) -> DVector<f64> {
    let p = grid.points();
    let mut v = DVector::zeros(2 * p);
    let mut idx = 0;
    for j in 0..grid.n2 {
        for i in 0..grid.n1 {
            v[field * p + idx] = shape(grid.s1(i), grid.s2(j));
            idx += 1;
        }
    }
    v
}

/// Raw (unnormalized) mode family for a wavenumber set: per wavenumber the
/// four sin/cos carriers split across the fields, then one shared
/// sin(2 pi h s2) harmonic pair per two wavenumbers.
fn mode_family(grid: &Grid, wavenumbers: &[f64]) -> Vec<DVector<f64>> {
    let pi = std::f64::consts::PI;
    let mut modes = Vec::new();
    for &a in wavenumbers {
        modes.push(mode_vector(grid, 0, |s1, s2| (a * s1).sin() * (pi * s2).sin()));
        modes.push(mode_vector(grid, 0, |s1, s2| (a * s1).cos() * (pi * s2).sin()));
        modes.push(mode_vector(grid, 1, |s1, s2| (a * s1).cos() * (pi * s2).sin()));
        modes.push(mode_vector(grid, 1, |s1, s2| (a * s1).sin() * (pi * s2).sin()));
    }
    let harmonics = (wavenumbers.len() / 2).max(1);
    for h in 1..=harmonics {
        let freq = 2.0 * pi * h as f64;
        modes.push(mode_vector(grid, 0, |_, s2| (freq * s2).sin()));
        modes.push(mode_vector(grid, 1, |_, s2| (freq * s2).sin()));
    }
    modes
}

fn numeric_rank(modes: &[DVector<f64>]) -> Result<usize> {
    let m = DMatrix::from_columns(modes);
    let svd = thin_svd(&m)?;
    let lead = svd.s.max();
    Ok(svd.s.iter().filter(|&&s| s > 1e-10 * lead).count())
}

/// Builds the benchmark parameter sets on a grid, validating the dimensions
/// of both mode families by a numeric rank check.
pub fn build_parameter_space(grid: &Grid, setup: &SetupSpec) -> Result<ParameterSpace> {
    let two_pi = 2.0 * std::f64::consts::PI;
    let wavenumbers_true: Vec<f64> = (1..=2).map(|l| two_pi * l as f64).collect();
    let wavenumbers_surrogate: Vec<f64> = (1..=4).map(|l| two_pi * l as f64).collect();

    let raw_true = mode_family(grid, &wavenumbers_true);
    let raw_surrogate = mode_family(grid, &wavenumbers_surrogate);
    for (raw, expected) in [(&raw_true, 10), (&raw_surrogate, 20)] {
        let achieved = numeric_rank(raw)?;
        if achieved != expected {
            return Err(Error::RankCheck { expected, achieved });
        }
    }

    let mode_basis_true = gram_schmidt(&DMatrix::from_columns(&raw_true), 1e-8);
    let mode_basis_surrogate = gram_schmidt(&DMatrix::from_columns(&raw_surrogate), 1e-8);
    if mode_basis_true.ncols() != 10 || mode_basis_surrogate.ncols() != 20 {
        return Err(Error::RankCheck {
            expected: 20,
            achieved: mode_basis_surrogate.ncols(),
        });
    }

    let perturbation_basis = perturbation_modes(grid, &mode_basis_surrogate)?;

    Ok(ParameterSpace {
        grid: grid.clone(),
        mode_basis_true,
        mode_basis_surrogate,
        perturbation_basis,
        gamma: setup.gamma,
        theta3_set: setup.theta3.clone(),
        amplitude: setup.amplitude,
        wavenumbers_true,
        wavenumbers_surrogate,
    })
}

/// The 40 lowest-frequency periodic Fourier modes orthogonal to the
/// surrogate span, 20 per field, ordered deterministically by frequency.
fn perturbation_modes(grid: &Grid, surrogate: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let per_field = PERTURBATION_DIM / 2;
    let two_pi = 2.0 * std::f64::consts::PI;

    // Candidate frequencies sorted by |k|^2 with a deterministic tie-break.
    let mut freqs: Vec<(usize, usize)> = Vec::new();
    for k1 in 0..=grid.n1 / 2 {
        for k2 in 0..=grid.n2 / 2 {
            freqs.push((k1, k2));
        }
    }
    freqs.sort_by_key(|&(k1, k2)| (k1 * k1 + k2 * k2, k1, k2));

    let mut kept: Vec<DVector<f64>> = Vec::new();
    for field in 0..2 {
        let mut count = 0;
        'freqs: for &(k1, k2) in &freqs {
            for phase in 0..2 {
                if count == per_field {
                    break 'freqs;
                }
                if phase == 1 && k1 == 0 && k2 == 0 {
                    continue;
                }
                let shape = |s1: f64, s2: f64| {
                    let arg = two_pi * (k1 as f64 * s1 + k2 as f64 * s2);
                    if phase == 0 {
                        arg.cos()
                    } else {
                        arg.sin()
                    }
                };
                let mut v = mode_vector(grid, field, shape);
                let original = v.norm();
                if original == 0.0 {
                    continue;
                }
                // Two modified Gram-Schmidt passes against the surrogate span
                // and the modes already kept.
                for _ in 0..2 {
                    let coeffs = surrogate.transpose() * &v;
                    v -= surrogate * coeffs;
                    for q in &kept {
                        let c = q.dot(&v);
                        v.axpy(-c, q, 1.0);
                    }
                }
                let norm = v.norm();
                if norm > 0.3 * original {
                    kept.push(v / norm);
                    count += 1;
                }
            }
        }
        if count < per_field {
            return Err(Error::Config(format!(
                "grid {}x{} too small for {per_field} perturbation modes per field",
                grid.n1, grid.n2
            )));
        }
    }
    Ok(DMatrix::from_columns(&kept))
}

/// Uniform draw of model parameters from the true or surrogate set. The
/// draw order (wavenumber, amplitudes, perturbation, dynamics) is fixed so
/// streams are reproducible.
pub fn draw_theta(
    space: &ParameterSpace,
    which: WhichSet,
    rng: &mut ChaCha8Rng,
) -> ModelParameters {
    let wavenumbers = match which {
        WhichSet::True => &space.wavenumbers_true,
        WhichSet::Surrogate => &space.wavenumbers_surrogate,
    };
    let a = wavenumbers[rng.gen_range(0..wavenumbers.len())];
    let amp = space.amplitude;
    let uniform = |rng: &mut ChaCha8Rng| -> f64 { amp * (2.0 * rng.gen::<f64>() - 1.0) };
    let pi_b = uniform(rng);
    let pi_tau = uniform(rng);
    let pi_tau2 = uniform(rng);

    let theta2 = if space.gamma > 0.0 {
        // Uniform in the gamma-ball: normalized Gaussian direction scaled by
        // gamma * U^(1/dim).
        let dim = PERTURBATION_DIM;
        let mut g = DVector::zeros(dim);
        for v in g.iter_mut() {
            *v = rng.sample(StandardNormal);
        }
        let norm = g.norm();
        let radius = space.gamma * rng.gen::<f64>().powf(1.0 / dim as f64);
        if norm > 0.0 {
            g * (radius / norm)
        } else {
            g
        }
    } else {
        DVector::zeros(PERTURBATION_DIM)
    };

    let rho = span_sample(space.theta3_set.rho, rng);
    let nu = span_sample(space.theta3_set.nu, rng);
    ModelParameters::new(
        DVector::from_row_slice(&[a, pi_b, pi_tau, pi_tau2]),
        theta2,
        (rho, nu),
    )
    .expect("uniform draws stay inside the valid parameter set")
}

fn span_sample(range: (f64, f64), rng: &mut ChaCha8Rng) -> f64 {
    if range.0 == range.1 {
        range.0
    } else {
        range.0 + (range.1 - range.0) * rng.gen::<f64>()
    }
}

/// Surrogate prior over parameters: uniform on the configured set.
pub struct UniformThetaPrior<'a> {
    pub space: &'a ParameterSpace,
    pub which: WhichSet,
}

impl SurrogatePrior for UniformThetaPrior<'_> {
    fn draw(&self, rng: &mut ChaCha8Rng) -> ModelParameters {
        draw_theta(self.space, self.which, rng)
    }
}
