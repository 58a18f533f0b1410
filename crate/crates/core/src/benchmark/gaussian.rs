//! Closed-form linear-Gaussian instances verifying that conditioning a
//! surrogate prior on observations brings it closer to the truth in
//! Kullback-Leibler divergence.
//!
//! With Gaussian truth `p_X`, Gaussian surrogate `pt_X` and observation
//! `y = H x + N(0, zeta^2 I)`, the data-enhanced surrogate
//! `ph_X = int ph(x|y) p(y) dy` is again Gaussian, so all three divergences
//! in the inequality `KL(p_X, ph_X) <= KL(p_X, pt_X) - KL(p_Y, ph_Y)` have
//! closed forms.

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::rng::{stream, StreamDomain};

#[derive(Clone, Debug)]
pub struct Gaussian {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

impl Gaussian {
    pub fn new(mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        if cov.nrows() != cov.ncols() || cov.nrows() != mean.len() {
            return Err(Error::Dimension("covariance/mean shape mismatch".into()));
        }
        if Cholesky::new(cov.clone()).is_none() {
            return Err(Error::Config("covariance is not positive definite".into()));
        }
        Ok(Self { mean, cov })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// KL(self || other) for two Gaussians of equal dimension.
    pub fn kl_to(&self, other: &Gaussian) -> Result<f64> {
        if self.dim() != other.dim() {
            return Err(Error::Dimension("KL between different dimensions".into()));
        }
        let d = self.dim() as f64;
        let chol_other = Cholesky::new(other.cov.clone())
            .ok_or_else(|| Error::Config("covariance is not positive definite".into()))?;
        let chol_self = Cholesky::new(self.cov.clone())
            .ok_or_else(|| Error::Config("covariance is not positive definite".into()))?;
        let trace = chol_other.solve(&self.cov).trace();
        let diff = &other.mean - &self.mean;
        let quad = diff.dot(&chol_other.solve(&DMatrix::from_column_slice(diff.len(), 1, diff.as_slice())).column(0).into_owned());
        let logdet = |c: &Cholesky<f64, nalgebra::Dyn>| -> f64 {
            2.0 * c.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>()
        };
        Ok(0.5 * (trace + quad - d + logdet(&chol_other) - logdet(&chol_self)))
    }
}

/// Observation model `y = H x + N(0, zeta^2 I_m)`.
#[derive(Clone, Debug)]
pub struct LinearGaussianModel {
    pub h: DMatrix<f64>,
    pub zeta: f64,
}

impl LinearGaussianModel {
    fn noise_cov(&self) -> DMatrix<f64> {
        DMatrix::identity(self.h.nrows(), self.h.nrows()) * (self.zeta * self.zeta)
    }

    /// Push-forward of a Gaussian state prior to observation space.
    pub fn observation_marginal(&self, prior: &Gaussian) -> Result<Gaussian> {
        let mean = &self.h * &prior.mean;
        let cov = &self.h * &prior.cov * self.h.transpose() + self.noise_cov();
        Gaussian::new(mean, cov)
    }

    /// Posterior under `prior` given one observation.
    pub fn posterior(&self, prior: &Gaussian, y: &DVector<f64>) -> Result<Gaussian> {
        let s = &self.h * &prior.cov * self.h.transpose() + self.noise_cov();
        let chol = Cholesky::new(s).ok_or_else(|| Error::Config("singular innovation covariance".into()))?;
        let gain = &prior.cov * self.h.transpose() * chol.inverse();
        let mean = &prior.mean + &gain * (y - &self.h * &prior.mean);
        let cov = &prior.cov - &gain * &self.h * &prior.cov;
        // Symmetrize against roundoff.
        let cov = (&cov + cov.transpose()) * 0.5;
        Gaussian::new(mean, cov)
    }

    /// The data-enhanced surrogate: the surrogate posterior marginalized over
    /// observations distributed as the truth's push-forward.
    pub fn data_enhanced_prior(&self, truth: &Gaussian, surrogate: &Gaussian) -> Result<Gaussian> {
        let s_surr = &self.h * &surrogate.cov * self.h.transpose() + self.noise_cov();
        let chol = Cholesky::new(s_surr)
            .ok_or_else(|| Error::Config("singular innovation covariance".into()))?;
        let gain = &surrogate.cov * self.h.transpose() * chol.inverse();
        let post_cov = &surrogate.cov - &gain * &self.h * &surrogate.cov;
        let s_true = &self.h * &truth.cov * self.h.transpose() + self.noise_cov();
        let mean = &surrogate.mean + &gain * (&self.h * &truth.mean - &self.h * &surrogate.mean);
        let cov = &post_cov + &gain * s_true * gain.transpose();
        let cov = (&cov + cov.transpose()) * 0.5;
        Gaussian::new(mean, cov)
    }
}

/// One verified instance of the improvement inequality.
#[derive(Clone, Debug)]
pub struct Prop1Row {
    pub state_dim: usize,
    pub obs_dim: usize,
    /// KL(p_X, ph_X)
    pub kl_enhanced: f64,
    /// KL(p_X, pt_X)
    pub kl_surrogate: f64,
    /// KL(p_Y, ph_Y)
    pub kl_observation: f64,
    pub holds: bool,
    /// kl_surrogate - kl_observation - kl_enhanced.
    pub slack: f64,
}

#[derive(Clone, Debug, Default)]
pub struct Prop1Report {
    pub rows: Vec<Prop1Row>,
}

impl Prop1Report {
    pub fn all_hold(&self) -> bool {
        self.rows.iter().all(|r| r.holds)
    }

    pub fn strict_count(&self, min_slack: f64) -> usize {
        self.rows.iter().filter(|r| r.slack > min_slack).count()
    }

    pub fn summary(&self) -> String {
        let mut out = String::new();
        out.push_str("instance state_dim obs_dim kl_enhanced kl_surrogate kl_observation slack holds\n");
        for (i, r) in self.rows.iter().enumerate() {
            out.push_str(&format!(
                "{} {} {} {:.6e} {:.6e} {:.6e} {:.6e} {}\n",
                i, r.state_dim, r.obs_dim, r.kl_enhanced, r.kl_surrogate, r.kl_observation, r.slack, r.holds
            ));
        }
        out
    }
}

fn random_spd(dim: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let l = DMatrix::from_fn(dim, dim, |_, _| rng.gen::<f64>() - 0.5);
    &l * l.transpose() + DMatrix::identity(dim, dim) * 0.2
}

/// Verifies the improvement inequality on random small linear-Gaussian
/// instances. The tolerance documented for the check is 1e-9 absolute.
pub fn prop1_gaussian_check(
    max_state_dim: usize,
    max_obs_dim: usize,
    instances: usize,
    seed: u64,
) -> Result<Prop1Report> {
    if max_state_dim > 8 || max_obs_dim > 4 {
        return Err(Error::Config(
            "closed-form check is meant for small dimensions (state <= 8, obs <= 4)".into(),
        ));
    }
    let mut rows = Vec::with_capacity(instances);
    for i in 0..instances {
        let mut rng = stream(seed, StreamDomain::Generic, i, 0);
        let n = rng.gen_range(1..=max_state_dim);
        let m = rng.gen_range(1..=max_obs_dim.min(n));
        let truth = Gaussian::new(
            DVector::from_fn(n, |_, _| 2.0 * rng.gen::<f64>() - 1.0),
            random_spd(n, &mut rng),
        )?;
        let surrogate = Gaussian::new(
            DVector::from_fn(n, |_, _| 2.0 * rng.gen::<f64>() - 1.0),
            random_spd(n, &mut rng),
        )?;
        let model = LinearGaussianModel {
            h: DMatrix::from_fn(m, n, |_, _| rng.gen::<f64>() - 0.5),
            zeta: 0.3 + 1.7 * rng.gen::<f64>(),
        };
        rows.push(check_instance(&truth, &surrogate, &model)?);
    }
    Ok(Prop1Report { rows })
}

pub fn check_instance(
    truth: &Gaussian,
    surrogate: &Gaussian,
    model: &LinearGaussianModel,
) -> Result<Prop1Row> {
    let enhanced = model.data_enhanced_prior(truth, surrogate)?;
    let p_y = model.observation_marginal(truth)?;
    let ph_y = model.observation_marginal(surrogate)?;
    let kl_enhanced = truth.kl_to(&enhanced)?;
    let kl_surrogate = truth.kl_to(surrogate)?;
    let kl_observation = p_y.kl_to(&ph_y)?;
    let slack = kl_surrogate - kl_observation - kl_enhanced;
    Ok(Prop1Row {
        state_dim: truth.dim(),
        obs_dim: model.h.nrows(),
        kl_enhanced,
        kl_surrogate,
        kl_observation,
        holds: kl_enhanced <= kl_surrogate - kl_observation + 1e-9,
        slack,
    })
}

/// Simpson-rule evaluation of KL(p || q) for scalar Gaussians; cross-checks
/// the closed form.
pub fn scalar_kl_quadrature(p: &Gaussian, q: &Gaussian) -> Result<f64> {
    if p.dim() != 1 || q.dim() != 1 {
        return Err(Error::Dimension("quadrature oracle is scalar-only".into()));
    }
    let (mp, sp) = (p.mean[0], p.cov[(0, 0)].sqrt());
    let (mq, sq) = (q.mean[0], q.cov[(0, 0)].sqrt());
    let lo = (mp - 40.0 * sp).min(mq - 40.0 * sq);
    let hi = (mp + 40.0 * sp).max(mq + 40.0 * sq);
    let n = 200_001usize;
    let hstep = (hi - lo) / (n - 1) as f64;
    let log_pdf = |x: f64, m: f64, s: f64| -> f64 {
        let z = (x - m) / s;
        -0.5 * z * z - s.ln() - 0.5 * (2.0 * std::f64::consts::PI).ln()
    };
    let f = |x: f64| -> f64 {
        let lp = log_pdf(x, mp, sp);
        lp.exp() * (lp - log_pdf(x, mq, sq))
    };
    let mut acc = f(lo) + f(hi);
    for i in 1..n - 1 {
        let x = lo + i as f64 * hstep;
        acc += f(x) * if i % 2 == 1 { 4.0 } else { 2.0 };
    }
    Ok(acc * hstep / 3.0)
}
