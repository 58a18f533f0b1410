//! Monte-Carlo over observation sequences and sequential importance sampling
//! approximating the data-enhanced surrogate posterior by weighted particle
//! trajectories.
//!
//! The surrogate transition kernel is a Dirac measure (the trajectory is
//! fully determined by its parameters), so sequential importance sampling
//! degenerates to importance sampling over the parameter draw and no
//! resampling step is performed. Weights are kept in the log domain and
//! normalized by log-sum-exp.
//!
//! Randomness is organized as one counter-based stream per (observation,
//! particle) pair derived from a master seed, so ensembles are bit-identical
//! under any parallel schedule.

use std::fmt;
use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::matrix::{read_matrix, write_matrix, Trajectory};
use crate::model::{simulate_from, FullOrderModel, ModelParameters};
use crate::observation::{log_likelihood, ObservationOperator, ObservationSequence};
use crate::rng::{stream, StreamDomain};

/// Source of surrogate parameter draws; the prior over trajectories is this
/// draw pushed through the full-order recursion.
pub trait SurrogatePrior: Sync {
    fn draw(&self, rng: &mut ChaCha8Rng) -> ModelParameters;
}

/// Weighted particle approximation of one posterior `p(x | y_i)`.
#[derive(Clone, Debug)]
pub struct ParticleEnsemble {
    particles: Vec<Trajectory>,
    weights: DVector<f64>,
    obs_index: usize,
}

impl ParticleEnsemble {
    /// Builds an ensemble from non-negative unnormalized weights.
    pub fn new(particles: Vec<Trajectory>, weights: Vec<f64>, obs_index: usize) -> Result<Self> {
        if particles.is_empty() || particles.len() != weights.len() {
            return Err(Error::Dimension(format!(
                "{} particles vs {} weights",
                particles.len(),
                weights.len()
            )));
        }
        let shape = particles[0].data().shape();
        if particles.iter().any(|p| p.data().shape() != shape) {
            return Err(Error::Dimension("particles must share (n, T)".into()));
        }
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::Config("weights must be finite and non-negative".into()));
        }
        let total: f64 = weights.iter().sum();
        if total <= 0.0 {
            return Err(Error::DegenerateEnsemble {
                max_log_weight: f64::NEG_INFINITY,
            });
        }
        let weights = DVector::from_iterator(weights.len(), weights.iter().map(|w| w / total));
        Ok(Self {
            particles,
            weights,
            obs_index,
        })
    }

    /// Normalizes log-domain weights by log-sum-exp.
    pub fn from_log_weights(
        particles: Vec<Trajectory>,
        log_weights: Vec<f64>,
        obs_index: usize,
    ) -> Result<Self> {
        let max_lw = log_weights.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if !max_lw.is_finite() {
            return Err(Error::DegenerateEnsemble { max_log_weight: max_lw });
        }
        let weights: Vec<f64> = log_weights.iter().map(|lw| (lw - max_lw).exp()).collect();
        Self::new(particles, weights, obs_index)
    }

    pub fn uniform(particles: Vec<Trajectory>, obs_index: usize) -> Result<Self> {
        let n = particles.len();
        Self::new(particles, vec![1.0; n], obs_index)
    }

    pub fn len(&self) -> usize {
        self.particles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.particles.is_empty()
    }

    pub fn particle(&self, j: usize) -> &Trajectory {
        &self.particles[j]
    }

    pub fn weights(&self) -> &DVector<f64> {
        &self.weights
    }

    pub fn obs_index(&self) -> usize {
        self.obs_index
    }
}

/// Initial-condition projection applied when the observation noise is small:
/// the sampled first state is replaced by the projection of
/// `(I - h'h) x_1 + h'(y_1 + w)` onto the configured subspace.
pub struct InitProjection {
    /// Column-orthonormal basis of the subspace embedding the surrogate
    /// initial conditions.
    pub basis: DMatrix<f64>,
    /// The projection activates when `zeta <= fraction * max |y|`.
    pub activation_fraction: f64,
}

/// Default activation threshold: the projection engages when the noise level
/// is below this fraction of the peak observation amplitude.
pub const DEFAULT_ACTIVATION_FRACTION: f64 = 0.01;

impl InitProjection {
    pub fn new(basis: DMatrix<f64>) -> Self {
        Self {
            basis,
            activation_fraction: DEFAULT_ACTIVATION_FRACTION,
        }
    }
}

pub struct SisConfig {
    pub n_particles: usize,
    pub projection: Option<InitProjection>,
}

/// Sequential importance sampling with the surrogate initial density as
/// proposal. Because the transition kernel is deterministic, the
/// unnormalized log-weight of a particle is the sum of observation
/// log-likelihoods along its trajectory.
///
/// With `zeta = 0` the Gaussian likelihood degenerates to a Dirac factor; in
/// that limit the initial-condition projection (when active) pins the
/// observed component of every particle and the weights are uniform.
pub fn sis_posterior(
    y: &ObservationSequence,
    prior: &dyn SurrogatePrior,
    model: &dyn FullOrderModel,
    op: &dyn ObservationOperator,
    cfg: &SisConfig,
    master_seed: u64,
    obs_index: usize,
) -> Result<ParticleEnsemble> {
    if cfg.n_particles == 0 {
        return Err(Error::Config("need at least one particle".into()));
    }
    if y.dim() != op.obs_dim() {
        return Err(Error::Dimension(format!(
            "observation dimension {} does not match operator {}",
            y.dim(),
            op.obs_dim()
        )));
    }
    let t_len = y.len();
    let zeta = op.zeta();
    let project = cfg
        .projection
        .as_ref()
        .filter(|p| zeta <= p.activation_fraction * y.peak_abs());

    let results: Vec<Result<(Trajectory, f64)>> = (0..cfg.n_particles)
        .into_par_iter()
        .map(|j| {
            let mut rng_theta = stream(master_seed, StreamDomain::SisTheta, obs_index, j);
            let theta = prior.draw(&mut rng_theta);
            let mut x1 = model.init(&theta)?;
            if let Some(p) = project {
                let mut rng_w = stream(master_seed, StreamDomain::SisProjection, obs_index, j);
                x1 = project_initial(&x1, &y.column(0), op, &p.basis, &mut rng_w);
            }
            let traj = simulate_from(model, x1, &theta, t_len)?;
            let lw = if zeta > 0.0 {
                let mut acc = 0.0;
                for t in 0..t_len {
                    acc += log_likelihood(&y.column(t), &traj.state(t), op)?;
                }
                acc
            } else {
                0.0
            };
            Ok((traj, lw))
        })
        .collect();

    let mut particles = Vec::with_capacity(cfg.n_particles);
    let mut log_weights = Vec::with_capacity(cfg.n_particles);
    for r in results {
        let (traj, lw) = r?;
        particles.push(traj);
        log_weights.push(lw);
    }
    ParticleEnsemble::from_log_weights(particles, log_weights, obs_index)
}

/// Replaces a sampled initial state by
/// `B B^T [ (I - h'h) x_1 + h'(y_1 + w) ]` with `w ~ N(0, zeta^2 I_m)` and
/// `B` the column-orthonormal subspace basis.
pub fn project_initial(
    x1: &DVector<f64>,
    y1: &DVector<f64>,
    op: &dyn ObservationOperator,
    subspace_basis: &DMatrix<f64>,
    rng: &mut ChaCha8Rng,
) -> DVector<f64> {
    let zeta = op.zeta();
    let mut y = y1.clone();
    if zeta > 0.0 {
        for v in y.iter_mut() {
            let w: f64 = rng.sample(StandardNormal);
            *v += zeta * w;
        }
    }
    let pre = x1 - op.pseudo_inverse(&op.apply(x1)) + op.pseudo_inverse(&y);
    subspace_basis * (subspace_basis.transpose() * pre)
}

/// Minimum-mean-square-error point estimate: the weighted average trajectory.
pub fn mmse_estimate(ensemble: &ParticleEnsemble) -> Trajectory {
    let shape = ensemble.particle(0).data().shape();
    let mut acc = DMatrix::zeros(shape.0, shape.1);
    for j in 0..ensemble.len() {
        acc += ensemble.particle(j).data() * ensemble.weights()[j];
    }
    Trajectory::new(acc).expect("weighted average of finite trajectories is finite")
}

/// Sampling strategy feeding the snapshot matrices.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Strategy {
    /// Hidden-truth trajectories (ideal baseline).
    Target,
    /// Weighted particles from the data-enhanced surrogate posterior.
    Enhanced,
    /// Unweighted draws from the initial surrogate prior.
    Initial,
    /// MMSE point-estimate trajectories.
    Point,
}

impl Strategy {
    pub const ALL: [Strategy; 4] = [
        Strategy::Target,
        Strategy::Enhanced,
        Strategy::Initial,
        Strategy::Point,
    ];

    pub fn label(&self) -> &'static str {
        match self {
            Strategy::Target => "target",
            Strategy::Enhanced => "enhanced",
            Strategy::Initial => "initial",
            Strategy::Point => "point",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "target" => Ok(Strategy::Target),
            "enhanced" => Ok(Strategy::Enhanced),
            "initial" => Ok(Strategy::Initial),
            "point" => Ok(Strategy::Point),
            other => Err(Error::Config(format!("unknown strategy '{other}'"))),
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// Weighted snapshot matrices: `a` gathers states 1..T-1, `b` states 2..T and
/// `c` all states, every column block scaled by the square root of its
/// particle weight. The global 1/(DN) factor is dropped; it does not change
/// any minimizer.
pub struct WeightedSnapshots {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub c: DMatrix<f64>,
}

pub enum SnapshotInput<'a> {
    /// One trajectory per observation with unit weight (target and
    /// point-estimate strategies).
    Trajectories(&'a [Trajectory]),
    /// One weighted ensemble per observation (enhanced and initial
    /// strategies; the initial strategy re-weights uniformly).
    Ensembles(&'a [ParticleEnsemble]),
}

pub fn assemble_snapshots(input: &SnapshotInput, strategy: Strategy) -> Result<WeightedSnapshots> {
    let mut blocks: Vec<(f64, &Trajectory)> = Vec::new();
    match (input, strategy) {
        (SnapshotInput::Trajectories(xs), Strategy::Target | Strategy::Point) => {
            for x in xs.iter() {
                blocks.push((1.0, x));
            }
        }
        (SnapshotInput::Ensembles(ens), Strategy::Enhanced) => {
            for e in ens.iter() {
                for j in 0..e.len() {
                    blocks.push((e.weights()[j], e.particle(j)));
                }
            }
        }
        (SnapshotInput::Ensembles(ens), Strategy::Initial) => {
            for e in ens.iter() {
                let w = 1.0 / e.len() as f64;
                for j in 0..e.len() {
                    blocks.push((w, e.particle(j)));
                }
            }
        }
        _ => {
            return Err(Error::Config(format!(
                "snapshot input kind does not match strategy '{strategy}'"
            )))
        }
    }
    if blocks.is_empty() {
        return Err(Error::Config("no snapshots to assemble".into()));
    }
    let (n, t_len) = blocks[0].1.data().shape();
    if blocks.iter().any(|(_, x)| x.data().shape() != (n, t_len)) {
        return Err(Error::Dimension("snapshot trajectories must share (n, T)".into()));
    }

    let p = blocks.len();
    let mut a = DMatrix::zeros(n, (t_len - 1) * p);
    let mut b = DMatrix::zeros(n, (t_len - 1) * p);
    let mut c = DMatrix::zeros(n, t_len * p);
    for (idx, (w, x)) in blocks.iter().enumerate() {
        let sw = w.sqrt();
        for t in 0..t_len {
            let col = x.data().column(t) * sw;
            c.set_column(idx * t_len + t, &col);
            if t + 1 < t_len {
                a.set_column(idx * (t_len - 1) + t, &col);
            }
            if t > 0 {
                b.set_column(idx * (t_len - 1) + t - 1, &col);
            }
        }
    }
    Ok(WeightedSnapshots { a, b, c })
}

/// Splits the weighted second moment `sum_t E[x_{t-l} x_t^T]` of an ensemble
/// into the cross-covariance around the MMSE mean and the outer product of
/// the means. The two parts sum to the full moment.
pub fn cross_covariance_decomposition(
    ensemble: &ParticleEnsemble,
    lag: usize,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    if lag > 1 {
        return Err(Error::Config(format!("lag must be 0 or 1, got {lag}")));
    }
    let mean = mmse_estimate(ensemble);
    let (n, t_len) = mean.data().shape();
    if lag >= t_len {
        return Err(Error::Config("lag exceeds trajectory length".into()));
    }
    let mut cov = DMatrix::zeros(n, n);
    let mut mean_part = DMatrix::zeros(n, n);
    for t in lag..t_len {
        for j in 0..ensemble.len() {
            let w = ensemble.weights()[j];
            let left = ensemble.particle(j).data().column(t - lag) - mean.data().column(t - lag);
            let right = ensemble.particle(j).data().column(t) - mean.data().column(t);
            cov.ger(w, &left, &right, 1.0);
        }
        mean_part.ger(1.0, &mean.data().column(t - lag), &mean.data().column(t), 1.0);
    }
    Ok((cov, mean_part))
}

/// Persists an ensemble: one ROMX1 matrix per particle, a weights vector and
/// a manifest listing (i, j, weight, path).
pub fn save_ensemble(dir: &Path, ensemble: &ParticleEnsemble) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut manifest = String::new();
    manifest.push_str(&format!("obs_index {}\n", ensemble.obs_index()));
    for j in 0..ensemble.len() {
        let name = format!("particle_{j:05}.romx");
        write_matrix(&dir.join(&name), ensemble.particle(j).data())?;
        manifest.push_str(&format!(
            "{} {} {:.17e} {}\n",
            ensemble.obs_index(),
            j,
            ensemble.weights()[j],
            name
        ));
    }
    let w = DMatrix::from_column_slice(ensemble.len(), 1, ensemble.weights().as_slice());
    write_matrix(&dir.join("weights.romx"), &w)?;
    fs::write(dir.join("manifest.txt"), manifest)?;
    Ok(())
}

pub fn load_ensemble(dir: &Path) -> Result<ParticleEnsemble> {
    let manifest = fs::read_to_string(dir.join("manifest.txt"))?;
    let mut lines = manifest.lines();
    let header = lines.next().ok_or_else(|| Error::Format {
        path: dir.display().to_string(),
        detail: "empty ensemble manifest".into(),
    })?;
    let obs_index: usize = header
        .strip_prefix("obs_index ")
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| Error::Format {
            path: dir.display().to_string(),
            detail: "manifest missing obs_index header".into(),
        })?;
    let weights = read_matrix(&dir.join("weights.romx"))?;
    let mut particles = Vec::new();
    for line in lines {
        let name = line.split_whitespace().nth(3).ok_or_else(|| Error::Format {
            path: dir.display().to_string(),
            detail: format!("malformed manifest line '{line}'"),
        })?;
        particles.push(Trajectory::new(read_matrix(&dir.join(name))?)?);
    }
    ParticleEnsemble::new(
        particles,
        weights.as_slice().to_vec(),
        obs_index,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::observation::{observe, DenseObservation};
    use approx::assert_relative_eq;
    use nalgebra::dvector;
    use rand::Rng;

    /// Scalar state, identity dynamics; the initial condition is theta1[0].
    struct ScalarModel;

    impl FullOrderModel for ScalarModel {
        fn state_dim(&self) -> usize {
            1
        }
        fn init(&self, theta: &ModelParameters) -> Result<DVector<f64>> {
            Ok(dvector![theta.theta1[0]])
        }
        fn step(&self, x: &DVector<f64>, _: &ModelParameters, _: usize) -> Result<DVector<f64>> {
            Ok(x.clone())
        }
    }

    struct GaussianPrior {
        mean: f64,
        std: f64,
    }

    impl SurrogatePrior for GaussianPrior {
        fn draw(&self, rng: &mut ChaCha8Rng) -> ModelParameters {
            let z: f64 = rng.sample(StandardNormal);
            ModelParameters::new(dvector![self.mean + self.std * z], DVector::zeros(0), (0.0, 0.0))
                .unwrap()
        }
    }

    fn trajectory(values: &[f64]) -> Trajectory {
        Trajectory::new(DMatrix::from_row_slice(1, values.len(), values)).unwrap()
    }

    #[test]
    fn constant_likelihood_gives_uniform_weights() {
        // A zero observation operator makes every particle equally likely.
        let op = DenseObservation::new(DMatrix::zeros(1, 1), 1.0).unwrap();
        let y = ObservationSequence::new(DMatrix::zeros(1, 3)).unwrap();
        let prior = GaussianPrior { mean: 0.0, std: 1.0 };
        let cfg = SisConfig { n_particles: 8, projection: None };
        let ens = sis_posterior(&y, &prior, &ScalarModel, &op, &cfg, 3, 0).unwrap();
        for j in 0..8 {
            assert_relative_eq!(ens.weights()[j], 0.125, epsilon = 1e-12);
        }
    }

    #[test]
    fn single_particle_has_unit_weight() {
        let op = DenseObservation::new(DMatrix::identity(1, 1), 0.5).unwrap();
        let y = ObservationSequence::new(DMatrix::from_element(1, 2, 0.3)).unwrap();
        let prior = GaussianPrior { mean: 0.0, std: 1.0 };
        let cfg = SisConfig { n_particles: 1, projection: None };
        let ens = sis_posterior(&y, &prior, &ScalarModel, &op, &cfg, 3, 0).unwrap();
        assert_eq!(ens.len(), 1);
        assert_relative_eq!(ens.weights()[0], 1.0, epsilon = 1e-15);
    }

    #[test]
    fn weights_always_sum_to_one() {
        let op = DenseObservation::new(DMatrix::identity(1, 1), 0.05).unwrap();
        let y = ObservationSequence::new(DMatrix::from_element(1, 4, 1.0)).unwrap();
        let prior = GaussianPrior { mean: 0.0, std: 2.0 };
        let cfg = SisConfig { n_particles: 64, projection: None };
        let ens = sis_posterior(&y, &prior, &ScalarModel, &op, &cfg, 17, 2).unwrap();
        assert!((ens.weights().sum() - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn scalar_posterior_mean_matches_conjugate_formula() {
        // x ~ N(mu0, s0^2), y = x + N(0, zeta^2), T = 1.
        let (mu0, s0, zeta, y_obs) = (0.4, 1.3, 0.6, 1.1);
        let op = DenseObservation::new(DMatrix::identity(1, 1), zeta).unwrap();
        let y = ObservationSequence::new(DMatrix::from_element(1, 1, y_obs)).unwrap();
        let prior = GaussianPrior { mean: mu0, std: s0 };
        let cfg = SisConfig { n_particles: 20_000, projection: None };
        let ens = sis_posterior(&y, &prior, &ScalarModel, &op, &cfg, 11, 0).unwrap();
        let est = mmse_estimate(&ens).state(0)[0];

        let precision = 1.0 / (s0 * s0) + 1.0 / (zeta * zeta);
        let truth = (mu0 / (s0 * s0) + y_obs / (zeta * zeta)) / precision;
        // Standard error of the self-normalized estimator from the ensemble.
        let se = (0..ens.len())
            .map(|j| {
                let d = ens.particle(j).state(0)[0] - est;
                (ens.weights()[j] * d).powi(2)
            })
            .sum::<f64>()
            .sqrt();
        assert!(
            (est - truth).abs() <= 3.0 * se,
            "estimate {est}, truth {truth}, se {se}"
        );
    }

    #[test]
    fn sis_is_reproducible_across_calls() {
        let op = DenseObservation::new(DMatrix::identity(1, 1), 0.3).unwrap();
        let y = ObservationSequence::new(DMatrix::from_element(1, 2, 0.2)).unwrap();
        let prior = GaussianPrior { mean: 0.0, std: 1.0 };
        let cfg = SisConfig { n_particles: 32, projection: None };
        let a = sis_posterior(&y, &prior, &ScalarModel, &op, &cfg, 5, 1).unwrap();
        let b = sis_posterior(&y, &prior, &ScalarModel, &op, &cfg, 5, 1).unwrap();
        for j in 0..a.len() {
            assert_eq!(a.particle(j).data(), b.particle(j).data());
            assert_eq!(a.weights()[j], b.weights()[j]);
        }
    }

    #[test]
    fn project_initial_fixed_point_and_full_space() {
        // h observes the first two of three components.
        let h = DMatrix::from_row_slice(2, 3, &[1.0, 0.0, 0.0, 0.0, 1.0, 0.0]);
        let op = DenseObservation::new(h, 0.0).unwrap();
        let basis = DMatrix::identity(3, 3);
        let mut rng = stream(7, StreamDomain::SisProjection, 0, 0);

        // x1 consistent with y1 and inside the (full) subspace is unchanged.
        let x1 = dvector![0.5, -0.2, 0.9];
        let y1 = dvector![0.5, -0.2];
        let out = project_initial(&x1, &y1, &op, &basis, &mut rng);
        assert!((out - &x1).amax() <= 1e-12);

        // With B = I the pre-projection vector is returned unchanged:
        // observed part pinned to y1, unobserved part kept.
        let y2 = dvector![2.0, 3.0];
        let out2 = project_initial(&x1, &y2, &op, &basis, &mut rng);
        assert!((dvector![2.0, 3.0, 0.9] - out2).amax() <= 1e-12);
    }

    #[test]
    fn mmse_weighted_average_cases() {
        let p1 = trajectory(&[1.0, 2.0]);
        let p2 = trajectory(&[3.0, 6.0]);
        let uniform = ParticleEnsemble::uniform(vec![p1.clone(), p2.clone()], 0).unwrap();
        let m = mmse_estimate(&uniform);
        assert_eq!(m.data().as_slice(), &[2.0, 4.0]);

        let degenerate = ParticleEnsemble::new(vec![p1, p2.clone()], vec![0.0, 1.0], 0).unwrap();
        assert_eq!(mmse_estimate(&degenerate).data(), p2.data());
    }

    #[test]
    fn smallest_snapshot_assembly() {
        let x = Trajectory::new(DMatrix::from_column_slice(2, 2, &[1.0, 2.0, 3.0, 4.0])).unwrap();
        let xs = [x];
        let s = assemble_snapshots(&SnapshotInput::Trajectories(&xs), Strategy::Target).unwrap();
        assert_eq!(s.a.as_slice(), &[1.0, 2.0]);
        assert_eq!(s.b.as_slice(), &[3.0, 4.0]);
        assert_eq!(s.c.as_slice(), &[1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn snapshot_weight_scaling_hand_check() {
        let p1 = trajectory(&[1.0, 2.0]);
        let p2 = trajectory(&[3.0, 4.0]);
        let ens = ParticleEnsemble::new(vec![p1, p2], vec![0.25, 0.75], 0).unwrap();
        let all = [ens];
        let s = assemble_snapshots(&SnapshotInput::Ensembles(&all), Strategy::Enhanced).unwrap();
        // Columns scaled by 0.5 and sqrt(0.75).
        assert_relative_eq!(s.a[(0, 0)], 0.5, epsilon = 1e-15);
        assert_relative_eq!(s.a[(0, 1)], 3.0 * 0.75f64.sqrt(), epsilon = 1e-15);
        // c^T c against the hand computation.
        let ctc = s.c.transpose() * &s.c;
        assert_relative_eq!(ctc[(0, 0)], 0.25, epsilon = 1e-14);
        assert_relative_eq!(ctc[(1, 1)], 1.0, epsilon = 1e-14);
        assert_relative_eq!(ctc[(2, 2)], 0.75 * 9.0, epsilon = 1e-14);
        assert_relative_eq!(ctc[(0, 1)], 0.5, epsilon = 1e-14);
    }

    #[test]
    fn uniform_enhanced_equals_initial_strategy() {
        let p1 = trajectory(&[1.0, 2.0, 3.0]);
        let p2 = trajectory(&[-1.0, 0.5, 2.0]);
        let ens = ParticleEnsemble::uniform(vec![p1, p2], 0).unwrap();
        let all = [ens];
        let enh = assemble_snapshots(&SnapshotInput::Ensembles(&all), Strategy::Enhanced).unwrap();
        let ini = assemble_snapshots(&SnapshotInput::Ensembles(&all), Strategy::Initial).unwrap();
        assert_eq!(enh.a, ini.a);
        assert_eq!(enh.b, ini.b);
        assert_eq!(enh.c, ini.c);
    }

    #[test]
    fn snapshot_gram_matrix_is_psd() {
        let mut rng = stream(31, StreamDomain::Generic, 0, 0);
        let parts: Vec<Trajectory> = (0..5)
            .map(|_| {
                Trajectory::new(DMatrix::from_fn(4, 3, |_, _| rng.gen::<f64>() - 0.5)).unwrap()
            })
            .collect();
        let w: Vec<f64> = (0..5).map(|_| rng.gen::<f64>()).collect();
        let ens = ParticleEnsemble::new(parts, w, 0).unwrap();
        let all = [ens];
        let s = assemble_snapshots(&SnapshotInput::Ensembles(&all), Strategy::Enhanced).unwrap();
        let gram = s.c.transpose() * &s.c;
        let eig = nalgebra::SymmetricEigen::new(gram.clone());
        let min = eig.eigenvalues.min();
        assert!(min >= -1e-10 * gram.trace(), "min eigenvalue {min}");
    }

    #[test]
    fn cross_covariance_split_cases() {
        // Single particle: zero covariance part.
        let single = ParticleEnsemble::uniform(vec![trajectory(&[2.0, -1.0])], 0).unwrap();
        let (cov, mean) = cross_covariance_decomposition(&single, 0).unwrap();
        assert!(cov.amax() <= 1e-14);
        assert_relative_eq!(mean[(0, 0)], 4.0 + 1.0, epsilon = 1e-14);

        // Antipodal pair: zero mean part, covariance = sum_t v_t v_t^T.
        let v = trajectory(&[1.0, 3.0]);
        let minus = trajectory(&[-1.0, -3.0]);
        let pair = ParticleEnsemble::uniform(vec![v, minus], 0).unwrap();
        let (cov2, mean2) = cross_covariance_decomposition(&pair, 0).unwrap();
        assert!(mean2.amax() <= 1e-14);
        assert_relative_eq!(cov2[(0, 0)], 1.0 + 9.0, epsilon = 1e-14);
    }

    #[test]
    fn cross_covariance_parts_sum_to_direct_moment() {
        let mut rng = stream(37, StreamDomain::Generic, 0, 0);
        let parts: Vec<Trajectory> = (0..6)
            .map(|_| {
                Trajectory::new(DMatrix::from_fn(3, 4, |_, _| rng.gen::<f64>() - 0.5)).unwrap()
            })
            .collect();
        let w: Vec<f64> = (0..6).map(|_| rng.gen::<f64>() + 0.1).collect();
        let ens = ParticleEnsemble::new(parts, w, 0).unwrap();
        for lag in [0usize, 1] {
            let (cov, mean) = cross_covariance_decomposition(&ens, lag).unwrap();
            // Direct weighted moment oracle.
            let mut direct = DMatrix::zeros(3, 3);
            for t in lag..4 {
                for j in 0..ens.len() {
                    let x = ens.particle(j).data();
                    direct.ger(ens.weights()[j], &x.column(t - lag), &x.column(t), 1.0);
                }
            }
            assert!(((cov + mean) - direct).amax() <= 1e-10);
        }
    }

    #[test]
    fn ensemble_round_trips_through_disk() {
        let dir = tempfile::tempdir().unwrap();
        let op = DenseObservation::new(DMatrix::identity(1, 1), 0.4).unwrap();
        let x = trajectory(&[0.5, 0.7, 0.2]);
        let y = observe(&x, &op, &mut stream(41, StreamDomain::ObsNoise, 0, 0)).unwrap();
        let prior = GaussianPrior { mean: 0.0, std: 1.0 };
        let cfg = SisConfig { n_particles: 6, projection: None };
        let ens = sis_posterior(&y, &prior, &ScalarModel, &op, &cfg, 43, 4).unwrap();
        save_ensemble(dir.path(), &ens).unwrap();
        let back = load_ensemble(dir.path()).unwrap();
        assert_eq!(back.obs_index(), 4);
        assert_eq!(back.len(), ens.len());
        for j in 0..ens.len() {
            assert_eq!(back.particle(j).data(), ens.particle(j).data());
            assert_relative_eq!(back.weights()[j], ens.weights()[j], epsilon = 1e-15);
        }
    }
}
