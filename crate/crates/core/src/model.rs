//! Abstract full-order model interface: a deterministic state recursion
//! `x_t = f(x_{t-1}, theta)` with parameterized initial condition `x_1 = g(theta)`.

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::matrix::Trajectory;

/// Parameters of a full-order model.
///
/// `theta1` shapes the initial condition, `theta2` holds perturbation
/// coefficients on a fixed basis, and `theta3 = (rho, nu)` rules the dynamics
/// (Prandtl and Rayleigh numbers for the convection benchmark).
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParameters {
    pub theta1: DVector<f64>,
    pub theta2: DVector<f64>,
    pub theta3: (f64, f64),
}

impl ModelParameters {
    pub fn new(theta1: DVector<f64>, theta2: DVector<f64>, theta3: (f64, f64)) -> Result<Self> {
        if theta3.0 < 0.0 || theta3.1 < 0.0 {
            return Err(Error::Config(format!(
                "theta3 components must be non-negative, got ({}, {})",
                theta3.0, theta3.1
            )));
        }
        if theta1.iter().chain(theta2.iter()).any(|v| !v.is_finite())
            || !theta3.0.is_finite()
            || !theta3.1.is_finite()
        {
            return Err(Error::Config("non-finite model parameter".into()));
        }
        Ok(Self { theta1, theta2, theta3 })
    }
}

/// Deterministic parameterized recursion. Implementations must be pure:
/// `step` depends only on its arguments, so trajectories are reproducible
/// and simulation jobs can run on any thread.
pub trait FullOrderModel: Sync {
    fn state_dim(&self) -> usize;

    /// Initial condition g(theta).
    fn init(&self, theta: &ModelParameters) -> Result<DVector<f64>>;

    /// One transition x_t = f_t(x_{t-1}, theta). The time index `t` (2-based,
    /// the index being produced) is carried for generality; the models in
    /// this crate are autonomous.
    fn step(&self, x: &DVector<f64>, theta: &ModelParameters, t: usize) -> Result<DVector<f64>>;
}

/// Runs the recursion for `t_len` steps starting from `g(theta)`.
pub fn simulate(
    model: &dyn FullOrderModel,
    theta: &ModelParameters,
    t_len: usize,
) -> Result<Trajectory> {
    let x1 = model.init(theta)?;
    simulate_from(model, x1, theta, t_len)
}

/// Runs the recursion from an explicit first state; used by the particle
/// sampler when the initial condition has been projected onto observations.
pub fn simulate_from(
    model: &dyn FullOrderModel,
    x1: DVector<f64>,
    theta: &ModelParameters,
    t_len: usize,
) -> Result<Trajectory> {
    if t_len == 0 {
        return Err(Error::Config("trajectory length must be at least 1".into()));
    }
    if x1.len() != model.state_dim() {
        return Err(Error::Dimension(format!(
            "initial state has length {}, model expects {}",
            x1.len(),
            model.state_dim()
        )));
    }
    check_finite(&x1, 1)?;
    let mut columns = Vec::with_capacity(t_len);
    columns.push(x1);
    for t in 2..=t_len {
        let next = model.step(columns.last().unwrap(), theta, t)?;
        check_finite(&next, t)?;
        columns.push(next);
    }
    Trajectory::from_columns(&columns)
}

fn check_finite(x: &DVector<f64>, step: usize) -> Result<()> {
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::Diverged {
            step,
            detail: "non-finite state".into(),
        });
    }
    Ok(())
}
