//! The convection benchmark: the five experimental setups, the four sampling
//! strategies, ROM fitting/evaluation across a grid of reduced dimensions,
//! and the closed-form Gaussian verification of the improvement inequality.

pub mod gaussian;
pub mod space;

use std::fmt;

use nalgebra::DMatrix;
use rayon::prelude::*;

pub use space::{
    build_parameter_space, draw_theta, ParameterSpace, UniformThetaPrior, WhichSet,
    PERTURBATION_DIM,
};

use crate::dmd::{bound_constant, dmd_rom_simulate, dmd_star_predict, DmdSolver};
use crate::error::{Error, Result};
use crate::matrix::{frobenius_error, Trajectory};
use crate::model::{simulate, ModelParameters};
use crate::observation::{
    build_lowpass, calibrate_noise, observe, LowpassObservation, ObservationSequence,
};
use crate::pod::{pod_rom_simulate, pod_star_project, PodSolver};
use crate::rb::{Grid, RBConfig, RayleighBenard};
use crate::rng::{stream, StreamDomain};
use crate::smc::{
    assemble_snapshots, mmse_estimate, sis_posterior, InitProjection, ParticleEnsemble,
    SisConfig, SnapshotInput, Strategy, WeightedSnapshots,
};

/// Half-width of the uniform amplitude box for the initial-condition
/// parameters (pi_b, pi_tau, pi_tau').
///
/// The scale is calibrated so that one macro time step acts on the sampled
/// fields to near-linear accuracy: the best rank-k linear one-step fit then
/// reaches the documented vanishing thresholds instead of saturating at the
/// quadratic advection residual, which grows linearly with this amplitude.
pub const DEFAULT_AMPLITUDE: f64 = 0.05;

/// Default number of particles per observation sequence.
pub const DEFAULT_PARTICLES: usize = 40;

/// Default resolution-degradation factor of the low-pass observations.
pub const DEFAULT_OBS_FACTOR: usize = 2;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SetupId {
    I,
    II,
    III,
    IV,
    V,
}

impl SetupId {
    pub const ALL: [SetupId; 5] = [SetupId::I, SetupId::II, SetupId::III, SetupId::IV, SetupId::V];

    pub fn label(&self) -> &'static str {
        match self {
            SetupId::I => "i",
            SetupId::II => "ii",
            SetupId::III => "iii",
            SetupId::IV => "iv",
            SetupId::V => "v",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "i" => Ok(SetupId::I),
            "ii" => Ok(SetupId::II),
            "iii" => Ok(SetupId::III),
            "iv" => Ok(SetupId::IV),
            "v" => Ok(SetupId::V),
            other => Err(Error::Config(format!("unknown setup '{other}'"))),
        }
    }
}

/// Range (possibly degenerate) of the dynamics parameters (rho, nu).
#[derive(Clone, Debug, PartialEq)]
pub struct Theta3Set {
    pub rho: (f64, f64),
    pub nu: (f64, f64),
}

impl Theta3Set {
    pub fn point(rho: f64, nu: f64) -> Self {
        Self {
            rho: (rho, rho),
            nu: (nu, nu),
        }
    }
}

/// One benchmark problem: observation count, trajectory length, noise level,
/// initial-condition slice thickness and dynamics ranges.
#[derive(Clone, Debug)]
pub struct SetupSpec {
    pub id: Option<SetupId>,
    pub d: usize,
    pub t_len: usize,
    /// None means noiseless observations (zeta = 0).
    pub psnr_db: Option<f64>,
    pub gamma: f64,
    pub theta3: Theta3Set,
    pub n_particles: usize,
    pub amplitude: f64,
}

impl SetupSpec {
    /// The five experimental setups.
    pub fn paper(id: SetupId) -> Self {
        let base = SetupSpec {
            id: Some(SetupId::I),
            d: 30,
            t_len: 2,
            psnr_db: None,
            gamma: 0.0,
            theta3: Theta3Set::point(0.0, 30.0),
            n_particles: DEFAULT_PARTICLES,
            amplitude: DEFAULT_AMPLITUDE,
        };
        match id {
            SetupId::I => base,
            SetupId::II => SetupSpec {
                id: Some(SetupId::II),
                psnr_db: Some(26.0),
                ..base
            },
            SetupId::III => SetupSpec {
                id: Some(SetupId::III),
                psnr_db: Some(26.0),
                gamma: 1e-3,
                ..base
            },
            SetupId::IV => SetupSpec {
                id: Some(SetupId::IV),
                psnr_db: Some(26.0),
                gamma: 1e-3,
                d: 10,
                t_len: 5,
                ..base
            },
            SetupId::V => SetupSpec {
                id: Some(SetupId::V),
                psnr_db: Some(26.0),
                gamma: 1e-3,
                d: 10,
                t_len: 5,
                theta3: Theta3Set {
                    rho: (0.03, 0.03),
                    nu: (30.0, 300.0),
                },
                ..base
            },
        }
    }

    pub fn label(&self) -> String {
        self.id.map(|id| id.label().to_string()).unwrap_or_else(|| "custom".into())
    }
}

/// ROM family being fitted.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RomFamily {
    Pod,
    Dmd,
}

impl RomFamily {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "pod" | "rom-1" => Ok(RomFamily::Pod),
            "dmd" | "rom-2" => Ok(RomFamily::Dmd),
            other => Err(Error::Config(format!("unknown rom family '{other}'"))),
        }
    }
}

/// Evaluated ROM variant, including the idealized star versions.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RomVariant {
    Pod,
    PodStar,
    Dmd,
    DmdStar,
}

impl RomVariant {
    pub fn label(&self) -> &'static str {
        match self {
            RomVariant::Pod => "rom-1",
            RomVariant::PodStar => "rom-1-star",
            RomVariant::Dmd => "rom-2",
            RomVariant::DmdStar => "rom-2-star",
        }
    }

    fn rank(&self) -> usize {
        match self {
            RomVariant::Pod => 0,
            RomVariant::PodStar => 1,
            RomVariant::Dmd => 2,
            RomVariant::DmdStar => 3,
        }
    }
}

impl fmt::Display for RomVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

fn strategy_rank(s: Strategy) -> usize {
    match s {
        Strategy::Target => 0,
        Strategy::Enhanced => 1,
        Strategy::Initial => 2,
        Strategy::Point => 3,
    }
}

#[derive(Clone, Debug)]
pub struct ErrorPoint {
    pub rom: RomVariant,
    pub strategy: Strategy,
    pub k: usize,
    /// Average over the D trajectories of the Frobenius error norm.
    pub mean_error: f64,
}

#[derive(Clone, Debug)]
pub struct ErrorCurve {
    pub setup: String,
    pub seed: u64,
    pub points: Vec<ErrorPoint>,
}

impl ErrorCurve {
    /// Schema-stable CSV: fixed header, LF endings, 17 significant digits.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("setup,rom,strategy,k,mean_error,seed\n");
        for p in &self.points {
            out.push_str(&format!(
                "{},{},{},{},{:.16e},{}\n",
                self.setup,
                p.rom.label(),
                p.strategy.label(),
                p.k,
                p.mean_error,
                self.seed
            ));
        }
        out
    }

    pub fn get(&self, rom: RomVariant, strategy: Strategy, k: usize) -> Option<f64> {
        self.points
            .iter()
            .find(|p| p.rom == rom && p.strategy == strategy && p.k == k)
            .map(|p| p.mean_error)
    }

    /// k values present for one (rom, strategy) series, ascending.
    pub fn k_values(&self, rom: RomVariant, strategy: Strategy) -> Vec<usize> {
        self.points
            .iter()
            .filter(|p| p.rom == rom && p.strategy == strategy)
            .map(|p| p.k)
            .collect()
    }
}

/// Per-(trajectory, fitted operator) error decomposition used by the
/// two-sided bound checks.
#[derive(Clone, Debug)]
pub struct SandwichRecord {
    pub family: RomFamily,
    pub strategy: Strategy,
    pub k: usize,
    pub traj_index: usize,
    /// Squared trajectory error of the recursive ROM.
    pub rom_err_sq: f64,
    /// Squared error of the idealized variant: the projection residual for
    /// ROM-1, the one-step residual sum for ROM-2.
    pub star_err_sq: f64,
    /// Error-bound constant of the fitted operator (ROM-2 only).
    pub bound_c: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct RunOptions {
    pub strategies: Vec<Strategy>,
    pub roms: Vec<RomFamily>,
    pub k_grid: Vec<usize>,
    pub seed: u64,
    pub obs_factor: usize,
    /// Evaluate the idealized variants for every strategy instead of only
    /// the target one.
    pub star_all_strategies: bool,
}

impl RunOptions {
    pub fn new(seed: u64) -> Self {
        Self {
            strategies: Strategy::ALL.to_vec(),
            roms: vec![RomFamily::Pod, RomFamily::Dmd],
            k_grid: default_k_grid(),
            seed,
            obs_factor: DEFAULT_OBS_FACTOR,
            star_all_strategies: false,
        }
    }
}

pub fn default_k_grid() -> Vec<usize> {
    vec![2, 5, 10, 15, 20, 25, 30, 40, 50, 60]
}

/// Everything a benchmark run derives from (grid, setup, seed): the
/// parameter space, the model, the hidden truths, their observations and the
/// particle ensembles the sampling strategies need.
pub struct BenchmarkContext {
    pub grid: Grid,
    pub setup: SetupSpec,
    pub seed: u64,
    pub space: ParameterSpace,
    pub model: RayleighBenard,
    pub op: LowpassObservation,
    pub zeta: f64,
    pub thetas: Vec<ModelParameters>,
    pub hidden: Vec<Trajectory>,
    pub observations: Vec<ObservationSequence>,
    posterior: Option<Vec<ParticleEnsemble>>,
    prior_draws: Option<Vec<ParticleEnsemble>>,
}

impl BenchmarkContext {
    /// Generates the hidden truths and observations and prepares the
    /// ensembles required by `strategies`.
    pub fn new(
        grid: Grid,
        setup: SetupSpec,
        seed: u64,
        obs_factor: usize,
        strategies: &[Strategy],
    ) -> Result<Self> {
        let space = build_parameter_space(&grid, &setup)?;
        let rho_max = setup.theta3.rho.1;
        let config = RBConfig::new(
            grid.clone(),
            crate::rb::DEFAULT_SUBSTEPS,
            crate::rb::MACRO_STEP_DURATION / crate::rb::DEFAULT_SUBSTEPS as f64,
            rho_max.max(1.0),
        )?;
        let model = RayleighBenard::new(config, Some(space.perturbation_basis.clone()))?;

        let thetas: Vec<ModelParameters> = (0..setup.d)
            .map(|i| draw_theta(&space, WhichSet::True, &mut stream(seed, StreamDomain::TrueTheta, i, 0)))
            .collect();
        let hidden: Vec<Trajectory> = thetas
            .par_iter()
            .map(|theta| simulate(&model, theta, setup.t_len))
            .collect::<Result<Vec<_>>>()
            .map_err(|e| e.with_context(&format!("setup {}", setup.label())))?;

        let clean_op = build_lowpass(&grid, obs_factor)?;
        let clean: Vec<ObservationSequence> = hidden
            .iter()
            .map(|x| observe(x, &clean_op, &mut stream(seed, StreamDomain::Generic, 0, 0)))
            .collect::<Result<Vec<_>>>()?;
        let zeta = match setup.psnr_db {
            Some(psnr) => {
                let stacked = DMatrix::from_columns(
                    &clean
                        .iter()
                        .flat_map(|y| y.data().column_iter())
                        .collect::<Vec<_>>(),
                );
                calibrate_noise(&ObservationSequence::new(stacked)?, psnr)?
            }
            None => 0.0,
        };
        let op = build_lowpass(&grid, obs_factor)?.with_zeta(zeta)?;
        let observations: Vec<ObservationSequence> = hidden
            .iter()
            .enumerate()
            .map(|(i, x)| observe(x, &op, &mut stream(seed, StreamDomain::ObsNoise, i, 0)))
            .collect::<Result<Vec<_>>>()?;

        let mut ctx = Self {
            grid,
            setup,
            seed,
            space,
            model,
            op,
            zeta,
            thetas,
            hidden,
            observations,
            posterior: None,
            prior_draws: None,
        };
        let needs_posterior = strategies.iter().any(|s| matches!(s, Strategy::Enhanced | Strategy::Point));
        if needs_posterior {
            ctx.posterior = Some(ctx.build_posterior_ensembles()?);
        }
        if strategies.contains(&Strategy::Initial) {
            ctx.prior_draws = Some(ctx.build_prior_ensembles()?);
        }
        Ok(ctx)
    }

    /// Rebuilds a context around externally persisted trajectories and
    /// observations (the generate/fit pipeline). The parameter draws are
    /// re-derived from the seed and correspond to the data only when it was
    /// produced with the same configuration.
    pub fn from_data(
        grid: Grid,
        setup: SetupSpec,
        seed: u64,
        obs_factor: usize,
        hidden: Vec<Trajectory>,
        observations: Vec<ObservationSequence>,
        strategies: &[Strategy],
    ) -> Result<Self> {
        if hidden.len() != setup.d || observations.len() != setup.d {
            return Err(Error::Dimension(format!(
                "setup {} expects {} trajectories/observations, got {}/{}",
                setup.label(),
                setup.d,
                hidden.len(),
                observations.len()
            )));
        }
        let space = build_parameter_space(&grid, &setup)?;
        let config = RBConfig::new(
            grid.clone(),
            crate::rb::DEFAULT_SUBSTEPS,
            crate::rb::MACRO_STEP_DURATION / crate::rb::DEFAULT_SUBSTEPS as f64,
            setup.theta3.rho.1.max(1.0),
        )?;
        let model = RayleighBenard::new(config, Some(space.perturbation_basis.clone()))?;
        let thetas: Vec<ModelParameters> = (0..setup.d)
            .map(|i| draw_theta(&space, WhichSet::True, &mut stream(seed, StreamDomain::TrueTheta, i, 0)))
            .collect();
        let clean_op = build_lowpass(&grid, obs_factor)?;
        let zeta = match setup.psnr_db {
            Some(psnr) => {
                let clean: Vec<ObservationSequence> = hidden
                    .iter()
                    .map(|x| observe(x, &clean_op, &mut stream(seed, StreamDomain::Generic, 0, 0)))
                    .collect::<Result<Vec<_>>>()?;
                let stacked = DMatrix::from_columns(
                    &clean
                        .iter()
                        .flat_map(|y| y.data().column_iter())
                        .collect::<Vec<_>>(),
                );
                calibrate_noise(&ObservationSequence::new(stacked)?, psnr)?
            }
            None => 0.0,
        };
        let op = build_lowpass(&grid, obs_factor)?.with_zeta(zeta)?;
        let mut ctx = Self {
            grid,
            setup,
            seed,
            space,
            model,
            op,
            zeta,
            thetas,
            hidden,
            observations,
            posterior: None,
            prior_draws: None,
        };
        let needs_posterior = strategies.iter().any(|s| matches!(s, Strategy::Enhanced | Strategy::Point));
        if needs_posterior {
            ctx.posterior = Some(ctx.build_posterior_ensembles()?);
        }
        if strategies.contains(&Strategy::Initial) {
            ctx.prior_draws = Some(ctx.build_prior_ensembles()?);
        }
        Ok(ctx)
    }

    fn build_posterior_ensembles(&self) -> Result<Vec<ParticleEnsemble>> {
        let prior = UniformThetaPrior {
            space: &self.space,
            which: WhichSet::Surrogate,
        };
        let cfg = SisConfig {
            n_particles: self.setup.n_particles,
            projection: Some(InitProjection::new(self.space.mode_basis_surrogate.clone())),
        };
        (0..self.setup.d)
            .map(|i| {
                sis_posterior(
                    &self.observations[i],
                    &prior,
                    &self.model,
                    &self.op,
                    &cfg,
                    self.seed,
                    i,
                )
                .map_err(|e| e.with_context(&format!("setup {}, enhanced sampling, obs {i}", self.setup.label())))
            })
            .collect()
    }

    fn build_prior_ensembles(&self) -> Result<Vec<ParticleEnsemble>> {
        (0..self.setup.d)
            .map(|i| {
                let particles: Vec<Trajectory> = (0..self.setup.n_particles)
                    .into_par_iter()
                    .map(|j| {
                        let theta = draw_theta(
                            &self.space,
                            WhichSet::Surrogate,
                            &mut stream(self.seed, StreamDomain::PriorDraw, i, j),
                        );
                        simulate(&self.model, &theta, self.setup.t_len)
                    })
                    .collect::<Result<Vec<_>>>()?;
                ParticleEnsemble::uniform(particles, i)
            })
            .collect()
    }

    pub fn posterior_ensembles(&self) -> Option<&[ParticleEnsemble]> {
        self.posterior.as_deref()
    }

    /// MMSE point-estimate trajectories, one per observation sequence.
    pub fn point_trajectories(&self) -> Result<Vec<Trajectory>> {
        let ens = self.posterior.as_ref().ok_or_else(|| {
            Error::Config("point estimates need the posterior ensembles".into())
        })?;
        Ok(ens.iter().map(mmse_estimate).collect())
    }

    /// Weighted snapshot matrices for one sampling strategy.
    pub fn snapshots(&self, strategy: Strategy) -> Result<WeightedSnapshots> {
        match strategy {
            Strategy::Target => {
                assemble_snapshots(&SnapshotInput::Trajectories(&self.hidden), strategy)
            }
            Strategy::Enhanced => {
                let ens = self.posterior.as_ref().ok_or_else(|| {
                    Error::Config("enhanced strategy needs the posterior ensembles".into())
                })?;
                assemble_snapshots(&SnapshotInput::Ensembles(ens), strategy)
            }
            Strategy::Initial => {
                let ens = self.prior_draws.as_ref().ok_or_else(|| {
                    Error::Config("initial strategy needs the prior ensembles".into())
                })?;
                assemble_snapshots(&SnapshotInput::Ensembles(ens), strategy)
            }
            Strategy::Point => {
                let points = self.point_trajectories()?;
                assemble_snapshots(&SnapshotInput::Trajectories(&points), strategy)
            }
        }
    }

    /// Mean Frobenius norm of the hidden trajectories; the reference scale
    /// for relative errors.
    pub fn mean_trajectory_norm(&self) -> f64 {
        self.hidden.iter().map(|x| x.norm()).sum::<f64>() / self.hidden.len() as f64
    }
}

#[derive(Clone, Debug)]
pub struct SetupOutcome {
    pub curve: ErrorCurve,
    pub sandwich: Vec<SandwichRecord>,
    pub mean_traj_norm: f64,
    pub zeta: f64,
}

/// Runs one benchmark setup end to end: draw truths, observe, sample per
/// strategy, fit both ROM families over the k grid and evaluate everything
/// against the hidden trajectories.
pub fn run_setup(grid: &Grid, setup: &SetupSpec, opts: &RunOptions) -> Result<SetupOutcome> {
    let ctx = BenchmarkContext::new(
        grid.clone(),
        setup.clone(),
        opts.seed,
        opts.obs_factor,
        &opts.strategies,
    )?;
    evaluate_context(&ctx, opts)
}

/// Fits and evaluates the ROMs of `opts` on a prepared context.
pub fn evaluate_context(ctx: &BenchmarkContext, opts: &RunOptions) -> Result<SetupOutcome> {
    let d = ctx.setup.d;
    let t_len = ctx.setup.t_len;
    let mut points: Vec<ErrorPoint> = Vec::new();
    let mut sandwich: Vec<SandwichRecord> = Vec::new();

    for &strategy in &opts.strategies {
        let snap = ctx
            .snapshots(strategy)
            .map_err(|e| e.with_context(&format!("setup {}, strategy {strategy}", ctx.setup.label())))?;
        let include_star = opts.star_all_strategies || strategy == Strategy::Target;

        for &family in &opts.roms {
            match family {
                RomFamily::Pod => {
                    let solver = PodSolver::new(&snap.c)?;
                    for &k in opts.k_grid.iter().filter(|&&k| k >= 1 && k <= solver.max_k()) {
                        let basis = solver.basis(k)?;
                        let evals: Vec<(f64, f64)> = (0..d)
                            .into_par_iter()
                            .map(|i| -> Result<(f64, f64)> {
                                let sim = pod_rom_simulate(&basis, &ctx.model, &ctx.thetas[i], t_len)
                                    .map_err(|e| {
                                        e.with_context(&format!(
                                            "setup {}, strategy {strategy}, rom-1, k={k}, traj {i}",
                                            ctx.setup.label()
                                        ))
                                    })?;
                                let rom_err = frobenius_error(&ctx.hidden[i], &sim)?;
                                let star = pod_star_project(&basis, &ctx.hidden[i])?;
                                let star_err = frobenius_error(&ctx.hidden[i], &star)?;
                                Ok((rom_err, star_err))
                            })
                            .collect::<Result<Vec<_>>>()?;
                        push_family_results(
                            &mut points,
                            &mut sandwich,
                            family,
                            strategy,
                            k,
                            include_star,
                            &evals,
                            None,
                        );
                    }
                }
                RomFamily::Dmd => {
                    if t_len < 2 {
                        continue;
                    }
                    let solver = DmdSolver::new(&snap.a, &snap.b)?;
                    for &k in opts.k_grid.iter().filter(|&&k| k >= 1 && k <= solver.max_k()) {
                        let op_k = solver.operator(k)?;
                        let c = bound_constant(&op_k, t_len)?;
                        let evals: Vec<(f64, f64)> = (0..d)
                            .into_par_iter()
                            .map(|i| -> Result<(f64, f64)> {
                                let sim = dmd_rom_simulate(&op_k, &ctx.model, &ctx.thetas[i], t_len)?;
                                let rom_err = frobenius_error(&ctx.hidden[i], &sim)?;
                                let star = dmd_star_predict(&op_k, &ctx.hidden[i])?;
                                let star_err = frobenius_error(&ctx.hidden[i], &star)?;
                                Ok((rom_err, star_err))
                            })
                            .collect::<Result<Vec<_>>>()?;
                        push_family_results(
                            &mut points,
                            &mut sandwich,
                            family,
                            strategy,
                            k,
                            include_star,
                            &evals,
                            Some(c),
                        );
                    }
                }
            }
        }
    }

    points.sort_by_key(|p| (p.rom.rank(), strategy_rank(p.strategy), p.k));
    Ok(SetupOutcome {
        curve: ErrorCurve {
            setup: ctx.setup.label(),
            seed: ctx.seed,
            points,
        },
        sandwich,
        mean_traj_norm: ctx.mean_trajectory_norm(),
        zeta: ctx.zeta,
    })
}

#[allow(clippy::too_many_arguments)]
fn push_family_results(
    points: &mut Vec<ErrorPoint>,
    sandwich: &mut Vec<SandwichRecord>,
    family: RomFamily,
    strategy: Strategy,
    k: usize,
    include_star: bool,
    evals: &[(f64, f64)],
    bound_c: Option<f64>,
) {
    let d = evals.len() as f64;
    let mean_rom = evals.iter().map(|(r, _)| r).sum::<f64>() / d;
    let mean_star = evals.iter().map(|(_, s)| s).sum::<f64>() / d;
    let (rom, star) = match family {
        RomFamily::Pod => (RomVariant::Pod, RomVariant::PodStar),
        RomFamily::Dmd => (RomVariant::Dmd, RomVariant::DmdStar),
    };
    points.push(ErrorPoint {
        rom,
        strategy,
        k,
        mean_error: mean_rom,
    });
    if include_star {
        points.push(ErrorPoint {
            rom: star,
            strategy,
            k,
            mean_error: mean_star,
        });
    }
    for (i, (r, s)) in evals.iter().enumerate() {
        sandwich.push(SandwichRecord {
            family,
            strategy,
            k,
            traj_index: i,
            rom_err_sq: r * r,
            star_err_sq: s * s,
            bound_c,
        });
    }
}
