//! Two-dimensional Rayleigh-Benard convection on the periodic unit cell.
//!
//! The coupled buoyancy/temperature system
//!
//! ```text
//! d/dt b   = -v . grad(b)   + rho * lap(b)  + rho * nu * d/ds1 tau
//! d/dt tau = -v . grad(tau) + lap(tau)      + d/ds1 invlap(b)
//! v        = curl(invlap(b))
//! ```
//!
//! is discretized with central differences and integrated with explicit RK4
//! substeps; one macro step (the ROM-visible time index) composes `substeps`
//! substeps. The Lorenz-type initial condition is
//! `b = pi_b sin(a s1) sin(pi s2) + eps_b`,
//! `tau = pi_tau cos(a s1) sin(pi s2) - pi_tau' sin(2 pi s2) + eps_tau`,
//! with the perturbations reconstructed from theta2 on a fixed basis.

pub mod operators;

use nalgebra::{DMatrix, DVector};

pub use operators::{dx, dy, laplacian, velocity_from_buoyancy, PoissonSolver};

use crate::error::{Error, Result};
use crate::model::{FullOrderModel, ModelParameters};

/// Duration of one macro time step in the time units of the PDE.
pub const MACRO_STEP_DURATION: f64 = 0.01;

/// Default number of RK4 substeps per macro step.
pub const DEFAULT_SUBSTEPS: usize = 50;

/// RK4 stability limit on the real axis, used by the diffusive step check.
const RK4_REAL_STABILITY: f64 = 2.78;

/// Nominal velocity bound for the advective step check.
const NOMINAL_VELOCITY: f64 = 1.0;

/// Periodic grid on the unit cell; the state stacks a buoyancy field above a
/// temperature field, so the state dimension is 2*n1*n2.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Grid {
    pub n1: usize,
    pub n2: usize,
}

impl Grid {
    pub fn new(n1: usize, n2: usize) -> Result<Self> {
        for (name, n) in [("n1", n1), ("n2", n2)] {
            if n < 2 || !n.is_power_of_two() {
                return Err(Error::Config(format!(
                    "{name} must be a power of two >= 2, got {n}"
                )));
            }
        }
        Ok(Self { n1, n2 })
    }

    pub fn points(&self) -> usize {
        self.n1 * self.n2
    }

    pub fn state_dim(&self) -> usize {
        2 * self.points()
    }

    /// s1 coordinate of row index i.
    pub fn s1(&self, i: usize) -> f64 {
        i as f64 / self.n1 as f64
    }

    /// s2 coordinate of column index j.
    pub fn s2(&self, j: usize) -> f64 {
        j as f64 / self.n2 as f64
    }
}

/// Buoyancy and temperature fields at one time instant.
#[derive(Clone, Debug, PartialEq)]
pub struct RBState {
    pub b: DMatrix<f64>,
    pub tau: DMatrix<f64>,
}

impl RBState {
    pub fn new(b: DMatrix<f64>, tau: DMatrix<f64>) -> Result<Self> {
        if b.shape() != tau.shape() {
            return Err(Error::Dimension(format!(
                "field shapes differ: {:?} vs {:?}",
                b.shape(),
                tau.shape()
            )));
        }
        if b.iter().chain(tau.iter()).any(|v| !v.is_finite()) {
            return Err(Error::Diverged {
                step: 0,
                detail: "non-finite field entry".into(),
            });
        }
        Ok(Self { b, tau })
    }

    pub fn zeros(grid: &Grid) -> Self {
        Self {
            b: DMatrix::zeros(grid.n1, grid.n2),
            tau: DMatrix::zeros(grid.n1, grid.n2),
        }
    }

    /// Flattens to the state vector: b column-major, then tau.
    pub fn to_vector(&self) -> DVector<f64> {
        let mut out = DVector::zeros(2 * self.b.len());
        out.rows_mut(0, self.b.len()).copy_from_slice(self.b.as_slice());
        out.rows_mut(self.b.len(), self.tau.len())
            .copy_from_slice(self.tau.as_slice());
        out
    }

    pub fn from_vector(x: &DVector<f64>, grid: &Grid) -> Result<Self> {
        if x.len() != grid.state_dim() {
            return Err(Error::Dimension(format!(
                "state vector length {} does not match grid dimension {}",
                x.len(),
                grid.state_dim()
            )));
        }
        let p = grid.points();
        let b = DMatrix::from_column_slice(grid.n1, grid.n2, &x.as_slice()[..p]);
        let tau = DMatrix::from_column_slice(grid.n1, grid.n2, &x.as_slice()[p..]);
        Ok(Self { b, tau })
    }
}

/// Time-stepping configuration. Construction fails when the substep size
/// violates the explicit stability estimates for the configured parameter
/// ranges.
#[derive(Clone, Debug)]
pub struct RBConfig {
    pub grid: Grid,
    pub substeps: usize,
    pub dt: f64,
}

impl RBConfig {
    pub fn new(grid: Grid, substeps: usize, dt: f64, rho_max: f64) -> Result<Self> {
        if substeps == 0 || dt <= 0.0 {
            return Err(Error::Config(format!(
                "need substeps >= 1 and dt > 0, got {substeps} and {dt}"
            )));
        }
        // Diffusive limit: the 5-point stencil's largest eigenvalue magnitude
        // is 4(n1^2 + n2^2); temperature diffuses with unit coefficient.
        let diffusivity = rho_max.max(1.0);
        let lambda_max = 4.0 * (grid.n1 * grid.n1 + grid.n2 * grid.n2) as f64;
        if dt * diffusivity * lambda_max > RK4_REAL_STABILITY {
            return Err(Error::Config(format!(
                "dt = {dt} violates the diffusive step bound {:.3e}",
                RK4_REAL_STABILITY / (diffusivity * lambda_max)
            )));
        }
        // Advective limit at nominal unit velocity.
        let k_max = std::f64::consts::PI * grid.n1.max(grid.n2) as f64;
        if dt * NOMINAL_VELOCITY * k_max > RK4_REAL_STABILITY {
            return Err(Error::Config(format!(
                "dt = {dt} violates the advective step bound {:.3e}",
                RK4_REAL_STABILITY / (NOMINAL_VELOCITY * k_max)
            )));
        }
        Ok(Self { grid, substeps, dt })
    }

    /// Default configuration: 50 substeps spanning one macro step of 0.01
    /// time units, validated for rho up to 1.
    pub fn standard(grid: Grid) -> Result<Self> {
        let substeps = DEFAULT_SUBSTEPS;
        Self::new(grid, substeps, MACRO_STEP_DURATION / substeps as f64, 1.0)
    }
}

/// The discretized convection model.
pub struct RayleighBenard {
    config: RBConfig,
    poisson: PoissonSolver,
    perturbation_basis: Option<DMatrix<f64>>,
}

impl RayleighBenard {
    pub fn new(config: RBConfig, perturbation_basis: Option<DMatrix<f64>>) -> Result<Self> {
        if let Some(basis) = &perturbation_basis {
            if basis.nrows() != config.grid.state_dim() {
                return Err(Error::Dimension(format!(
                    "perturbation basis has {} rows, state dimension is {}",
                    basis.nrows(),
                    config.grid.state_dim()
                )));
            }
        }
        let poisson = PoissonSolver::new(config.grid.clone());
        Ok(Self {
            config,
            poisson,
            perturbation_basis,
        })
    }

    pub fn config(&self) -> &RBConfig {
        &self.config
    }

    pub fn grid(&self) -> &Grid {
        &self.config.grid
    }

    pub fn poisson(&self) -> &PoissonSolver {
        &self.poisson
    }

    /// Initial condition on the grid. `theta.theta1 = (a, pi_b, pi_tau,
    /// pi_tau')`, `theta.theta2` holds perturbation coefficients (may be
    /// empty when no basis is configured).
    pub fn initial_state(&self, theta: &ModelParameters) -> Result<RBState> {
        if theta.theta1.len() != 4 {
            return Err(Error::Config(format!(
                "theta1 must be (a, pi_b, pi_tau, pi_tau'), got length {}",
                theta.theta1.len()
            )));
        }
        let grid = self.grid();
        let (a, pi_b, pi_tau, pi_tau2) = (
            theta.theta1[0],
            theta.theta1[1],
            theta.theta1[2],
            theta.theta1[3],
        );
        let pi = std::f64::consts::PI;
        let mut b = DMatrix::from_fn(grid.n1, grid.n2, |i, j| {
            pi_b * (a * grid.s1(i)).sin() * (pi * grid.s2(j)).sin()
        });
        let mut tau = DMatrix::from_fn(grid.n1, grid.n2, |i, j| {
            pi_tau * (a * grid.s1(i)).cos() * (pi * grid.s2(j)).sin()
                - pi_tau2 * (2.0 * pi * grid.s2(j)).sin()
        });
        if theta.theta2.len() > 0 {
            let basis = self.perturbation_basis.as_ref().ok_or_else(|| {
                Error::Config("theta2 given but no perturbation basis configured".into())
            })?;
            if basis.ncols() != theta.theta2.len() {
                return Err(Error::Config(format!(
                    "theta2 length {} does not match perturbation basis with {} columns",
                    theta.theta2.len(),
                    basis.ncols()
                )));
            }
            let eps = basis * &theta.theta2;
            let eps_state = RBState::from_vector(&eps, grid)?;
            b += eps_state.b;
            tau += eps_state.tau;
        }
        RBState::new(b, tau)
    }

    /// Time derivative of both fields. With rho = 0 the buoyancy equation
    /// reduces to pure self-advection and never reads the temperature field.
    fn rhs(&self, state: &RBState, theta3: (f64, f64)) -> (DMatrix<f64>, DMatrix<f64>) {
        let grid = self.grid();
        let (rho, nu) = theta3;
        let psi = self.poisson.inverse_laplacian(&state.b);
        let v1 = dy(&psi, grid);
        let v2 = {
            let mut v = dx(&psi, grid);
            v.neg_mut();
            v
        };

        let bx = dx(&state.b, grid);
        let by = dy(&state.b, grid);
        let mut db = DMatrix::from_fn(grid.n1, grid.n2, |i, j| {
            -(v1[(i, j)] * bx[(i, j)] + v2[(i, j)] * by[(i, j)])
        });
        if rho != 0.0 {
            db += laplacian(&state.b, grid) * rho;
            db += dx(&state.tau, grid) * (rho * nu);
        }

        let tx = dx(&state.tau, grid);
        let ty = dy(&state.tau, grid);
        let mut dtau = DMatrix::from_fn(grid.n1, grid.n2, |i, j| {
            -(v1[(i, j)] * tx[(i, j)] + v2[(i, j)] * ty[(i, j)])
        });
        dtau += laplacian(&state.tau, grid);
        dtau += dx(&psi, grid);

        (db, dtau)
    }

    /// One RK4 substep of size `dt`.
    pub fn substep(&self, state: &RBState, theta3: (f64, f64), dt: f64) -> Result<RBState> {
        let (k1b, k1t) = self.rhs(state, theta3);
        let mid1 = RBState {
            b: &state.b + &k1b * (dt / 2.0),
            tau: &state.tau + &k1t * (dt / 2.0),
        };
        let (k2b, k2t) = self.rhs(&mid1, theta3);
        let mid2 = RBState {
            b: &state.b + &k2b * (dt / 2.0),
            tau: &state.tau + &k2t * (dt / 2.0),
        };
        let (k3b, k3t) = self.rhs(&mid2, theta3);
        let end = RBState {
            b: &state.b + &k3b * dt,
            tau: &state.tau + &k3t * dt,
        };
        let (k4b, k4t) = self.rhs(&end, theta3);
        let sixth = dt / 6.0;
        let b = &state.b + (k1b + k2b * 2.0 + k3b * 2.0 + k4b) * sixth;
        let tau = &state.tau + (k1t + k2t * 2.0 + k3t * 2.0 + k4t) * sixth;
        if b.iter().chain(tau.iter()).any(|v| !v.is_finite()) {
            return Err(Error::Diverged {
                step: 0,
                detail: "substep produced non-finite field".into(),
            });
        }
        Ok(RBState { b, tau })
    }

    /// One ROM-visible time step: `substeps` RK4 substeps.
    pub fn macro_step(&self, state: &RBState, theta3: (f64, f64)) -> Result<RBState> {
        let mut current = state.clone();
        for s in 0..self.config.substeps {
            current = self.substep(&current, theta3, self.config.dt).map_err(|e| {
                if let Error::Diverged { detail, .. } = e {
                    Error::Diverged { step: s + 1, detail }
                } else {
                    e
                }
            })?;
        }
        Ok(current)
    }
}

impl FullOrderModel for RayleighBenard {
    fn state_dim(&self) -> usize {
        self.grid().state_dim()
    }

    fn init(&self, theta: &ModelParameters) -> Result<DVector<f64>> {
        Ok(self.initial_state(theta)?.to_vector())
    }

    fn step(&self, x: &DVector<f64>, theta: &ModelParameters, _t: usize) -> Result<DVector<f64>> {
        let state = RBState::from_vector(x, self.grid())?;
        Ok(self.macro_step(&state, theta.theta3)?.to_vector())
    }
}
