//! Command-line orchestration: configuration resolution, persistence and the
//! generate / fit / evaluate / benchmark / prop1-check pipelines.
//!
//! Configuration comes from an optional flat key-value file (`key = value`,
//! `#` comments) overridden by explicit flags. Every run writes a manifest
//! with all resolved values, the seed and the code version, sufficient to
//! reproduce it exactly.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use romx_core::benchmark::{
    gaussian::prop1_gaussian_check, run_setup, BenchmarkContext, ErrorCurve, RomFamily,
    RomVariant, RunOptions, SetupId, SetupSpec, DEFAULT_OBS_FACTOR,
};
use romx_core::dmd::{
    dmd_rom_simulate, dmd_star_predict, load_low_rank_operator, save_low_rank_operator, DmdSolver,
};
use romx_core::error::{Error, Result};
use romx_core::matrix::{frobenius_error, read_matrix, write_matrix, Trajectory};
use romx_core::observation::ObservationSequence;
use romx_core::pod::{load_pod_basis, pod_rom_simulate, pod_star_project, save_pod_basis, PodSolver};
use romx_core::rb::Grid;
use romx_core::smc::Strategy;

pub const ENV_THREADS: &str = "ROMX_THREADS";

/// Fully resolved run configuration.
#[derive(Clone, Debug)]
pub struct RunConfig {
    pub setup: SetupSpec,
    pub grid: Grid,
    pub seed: u64,
    pub obs_factor: usize,
    pub k_grid: Vec<usize>,
    pub strategies: Vec<Strategy>,
    pub roms: Vec<RomFamily>,
    pub out: PathBuf,
    pub threads: Option<usize>,
}

/// Unresolved values from flags; `None` means "not given".
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub setup: Option<String>,
    pub seed: Option<u64>,
    pub n1: Option<usize>,
    pub n2: Option<usize>,
    pub obs_factor: Option<usize>,
    pub particles: Option<usize>,
    pub psnr_db: Option<f64>,
    pub gamma: Option<f64>,
    pub amplitude: Option<f64>,
    pub d: Option<usize>,
    pub t_len: Option<usize>,
    pub k_grid: Option<Vec<usize>>,
    pub strategies: Option<Vec<Strategy>>,
    pub roms: Option<Vec<RomFamily>>,
    pub out: Option<PathBuf>,
    pub threads: Option<usize>,
}

/// Parses the flat `key = value` configuration format.
pub fn parse_config_file(path: &Path) -> Result<BTreeMap<String, String>> {
    let text = fs::read_to_string(path)?;
    let mut map = BTreeMap::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(Error::Format {
                path: path.display().to_string(),
                detail: format!("line {}: expected 'key = value', got '{raw}'", lineno + 1),
            });
        };
        map.insert(key.trim().to_string(), value.trim().to_string());
    }
    Ok(map)
}

pub fn parse_usize_list(s: &str) -> Result<Vec<usize>> {
    s.split(',')
        .filter(|p| !p.trim().is_empty())
        .map(|p| {
            p.trim()
                .parse::<usize>()
                .map_err(|_| Error::Config(format!("invalid integer '{p}' in list '{s}'")))
        })
        .collect()
}

pub fn parse_strategy_list(s: &str) -> Result<Vec<Strategy>> {
    let list: Vec<Strategy> = s
        .split(',')
        .filter(|p| !p.trim().is_empty())
        .map(|p| Strategy::parse(p.trim()))
        .collect::<Result<_>>()?;
    if list.is_empty() {
        return Err(Error::Config("no strategies selected".into()));
    }
    Ok(list)
}

pub fn parse_rom_list(s: &str) -> Result<Vec<RomFamily>> {
    let list: Vec<RomFamily> = s
        .split(',')
        .filter(|p| !p.trim().is_empty())
        .map(|p| RomFamily::parse(p.trim()))
        .collect::<Result<_>>()?;
    if list.is_empty() {
        return Err(Error::Config("no rom families selected".into()));
    }
    Ok(list)
}

impl RunConfig {
    /// Resolution order: paper defaults for the chosen setup, then the
    /// config file, then explicit flags.
    pub fn resolve(config_file: Option<&Path>, flags: Overrides) -> Result<Self> {
        let file = match config_file {
            Some(p) => parse_config_file(p)?,
            None => BTreeMap::new(),
        };
        let get = |key: &str| file.get(key).map(String::as_str);
        let parse_f64 = |key: &str, v: &str| -> Result<f64> {
            v.parse()
                .map_err(|_| Error::Config(format!("invalid value '{v}' for {key}")))
        };
        let parse_usize = |key: &str, v: &str| -> Result<usize> {
            v.parse()
                .map_err(|_| Error::Config(format!("invalid value '{v}' for {key}")))
        };

        let setup_name = flags
            .setup
            .clone()
            .or_else(|| get("setup").map(str::to_string))
            .unwrap_or_else(|| "i".into());
        let mut setup = SetupSpec::paper(SetupId::parse(&setup_name)?);

        if let Some(v) = get("d") {
            setup.d = parse_usize("d", v)?;
        }
        if let Some(v) = get("t") {
            setup.t_len = parse_usize("t", v)?;
        }
        if let Some(v) = get("psnr_db") {
            setup.psnr_db = if v == "none" { None } else { Some(parse_f64("psnr_db", v)?) };
        }
        if let Some(v) = get("gamma") {
            setup.gamma = parse_f64("gamma", v)?;
        }
        if let Some(v) = get("amplitude") {
            setup.amplitude = parse_f64("amplitude", v)?;
        }
        if let Some(v) = get("particles") {
            setup.n_particles = parse_usize("particles", v)?;
        }
        if let (Some(rl), Some(rh)) = (get("rho_min"), get("rho_max")) {
            setup.theta3.rho = (parse_f64("rho_min", rl)?, parse_f64("rho_max", rh)?);
        }
        if let (Some(nl), Some(nh)) = (get("nu_min"), get("nu_max")) {
            setup.theta3.nu = (parse_f64("nu_min", nl)?, parse_f64("nu_max", nh)?);
        }
        if let Some(v) = flags.d {
            setup.d = v;
        }
        if let Some(v) = flags.t_len {
            setup.t_len = v;
        }
        if let Some(v) = flags.psnr_db {
            setup.psnr_db = Some(v);
        }
        if let Some(v) = flags.gamma {
            setup.gamma = v;
        }
        if let Some(v) = flags.amplitude {
            setup.amplitude = v;
        }
        if let Some(v) = flags.particles {
            setup.n_particles = v;
        }
        if setup.d == 0 || setup.t_len == 0 {
            return Err(Error::Config("d and t must be at least 1".into()));
        }

        let n1 = flags
            .n1
            .or(get("n1").map(|v| parse_usize("n1", v)).transpose()?)
            .unwrap_or(32);
        let n2 = flags
            .n2
            .or(get("n2").map(|v| parse_usize("n2", v)).transpose()?)
            .unwrap_or(16);
        let grid = Grid::new(n1, n2)?;

        let seed = flags
            .seed
            .or(get("seed")
                .map(|v| {
                    v.parse::<u64>()
                        .map_err(|_| Error::Config(format!("invalid seed '{v}'")))
                })
                .transpose()?)
            .unwrap_or(0);
        let obs_factor = flags
            .obs_factor
            .or(get("obs_factor").map(|v| parse_usize("obs_factor", v)).transpose()?)
            .unwrap_or(DEFAULT_OBS_FACTOR);
        let k_grid = match flags.k_grid {
            Some(k) => k,
            None => match get("k_grid") {
                Some(v) => parse_usize_list(v)?,
                None => romx_core::benchmark::default_k_grid(),
            },
        };
        if k_grid.is_empty() {
            return Err(Error::Config("k grid must not be empty".into()));
        }
        let strategies = match flags.strategies {
            Some(s) => s,
            None => match get("strategies") {
                Some(v) => parse_strategy_list(v)?,
                None => Strategy::ALL.to_vec(),
            },
        };
        if strategies.is_empty() {
            return Err(Error::Config("no strategies selected".into()));
        }
        let roms = match flags.roms {
            Some(r) => r,
            None => match get("roms") {
                Some(v) => parse_rom_list(v)?,
                None => vec![RomFamily::Pod, RomFamily::Dmd],
            },
        };
        let out = flags
            .out
            .or(get("out").map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from("romx-out"));
        let threads = flags.threads.or(get("threads").map(|v| parse_usize("threads", v)).transpose()?);
        Ok(Self {
            setup,
            grid,
            seed,
            obs_factor,
            k_grid,
            strategies,
            roms,
            out,
            threads,
        })
    }

    /// Plain-text manifest with every resolved value; byte-stable for a
    /// given configuration.
    pub fn manifest(&self) -> String {
        let s = &self.setup;
        let mut out = String::new();
        out.push_str(&format!("romx_version = {}\n", env!("CARGO_PKG_VERSION")));
        out.push_str(&format!("setup = {}\n", s.label()));
        out.push_str(&format!("seed = {}\n", self.seed));
        out.push_str(&format!("n1 = {}\nn2 = {}\n", self.grid.n1, self.grid.n2));
        out.push_str(&format!("state_dim = {}\n", self.grid.state_dim()));
        out.push_str(&format!("d = {}\nt = {}\n", s.d, s.t_len));
        out.push_str(&format!(
            "psnr_db = {}\n",
            s.psnr_db.map(|v| format!("{v}")).unwrap_or_else(|| "none".into())
        ));
        out.push_str(&format!("gamma = {}\n", s.gamma));
        out.push_str(&format!("amplitude = {}\n", s.amplitude));
        out.push_str(&format!("particles = {}\n", s.n_particles));
        out.push_str(&format!(
            "rho = [{}, {}]\nnu = [{}, {}]\n",
            s.theta3.rho.0, s.theta3.rho.1, s.theta3.nu.0, s.theta3.nu.1
        ));
        out.push_str(&format!("obs_factor = {}\n", self.obs_factor));
        out.push_str(&format!(
            "substeps = {}\nsubstep_dt = {}\n",
            romx_core::rb::DEFAULT_SUBSTEPS,
            romx_core::rb::MACRO_STEP_DURATION / romx_core::rb::DEFAULT_SUBSTEPS as f64
        ));
        out.push_str(&format!(
            "projection_activation_fraction = {}\n",
            romx_core::smc::DEFAULT_ACTIVATION_FRACTION
        ));
        out.push_str(&format!(
            "k_grid = {}\n",
            self.k_grid.iter().map(|k| k.to_string()).collect::<Vec<_>>().join(",")
        ));
        out.push_str(&format!(
            "strategies = {}\n",
            self.strategies.iter().map(|s| s.label().to_string()).collect::<Vec<_>>().join(",")
        ));
        out.push_str(&format!(
            "roms = {}\n",
            self.roms
                .iter()
                .map(|r| match r {
                    RomFamily::Pod => "pod",
                    RomFamily::Dmd => "dmd",
                })
                .collect::<Vec<_>>()
                .join(",")
        ));
        out
    }
}

/// Runs `f` inside a rayon pool sized by the config, the ROMX_THREADS
/// environment variable, or the default, in that order. Results are
/// bit-identical for any pool size.
pub fn with_thread_pool<T: Send>(threads: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    let n = threads.or_else(|| {
        std::env::var(ENV_THREADS)
            .ok()
            .and_then(|v| v.parse::<usize>().ok())
    });
    match n {
        Some(n) if n > 0 => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| Error::Config(format!("failed to build thread pool: {e}")))?;
            Ok(pool.install(f))
        }
        _ => Ok(f()),
    }
}

fn traj_path(dir: &Path, i: usize) -> PathBuf {
    dir.join(format!("traj_{i:03}.romx"))
}

fn obs_path(dir: &Path, i: usize) -> PathBuf {
    dir.join(format!("obs_{i:03}.romx"))
}

/// Generates and persists the hidden trajectories and their observations.
pub fn cmd_generate(cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    let ctx = with_thread_pool(cfg.threads, || {
        BenchmarkContext::new(cfg.grid.clone(), cfg.setup.clone(), cfg.seed, cfg.obs_factor, &[])
    })??;
    fs::create_dir_all(&cfg.out)?;
    let mut written = Vec::new();
    for i in 0..cfg.setup.d {
        let tp = traj_path(&cfg.out, i);
        write_matrix(&tp, ctx.hidden[i].data())?;
        written.push(tp);
        let op = obs_path(&cfg.out, i);
        write_matrix(&op, ctx.observations[i].data())?;
        written.push(op);
    }
    let manifest_path = cfg.out.join("manifest.txt");
    fs::write(&manifest_path, cfg.manifest())?;
    written.push(manifest_path);
    Ok(written)
}

fn load_generated(cfg: &RunConfig, data_dir: &Path) -> Result<(Vec<Trajectory>, Vec<ObservationSequence>)> {
    let mut hidden = Vec::with_capacity(cfg.setup.d);
    let mut observations = Vec::with_capacity(cfg.setup.d);
    for i in 0..cfg.setup.d {
        let tp = traj_path(data_dir, i);
        if !tp.exists() {
            return Err(Error::Io(std::io::Error::new(
                std::io::ErrorKind::NotFound,
                format!("missing generated trajectory {}; run `romx generate` first", tp.display()),
            )));
        }
        hidden.push(Trajectory::new(read_matrix(&tp)?)?);
        let op = obs_path(data_dir, i);
        if !op.exists() {
            return Err(Error::Io(std::io::Error::new(
                std::io::ErrorKind::NotFound,
                format!("missing generated observations {}; run `romx generate` first", op.display()),
            )));
        }
        observations.push(ObservationSequence::new(read_matrix(&op)?)?);
    }
    Ok((hidden, observations))
}

/// Fits one ROM from persisted data and writes the basis/operator plus a
/// deterministic fit log (timings go to stderr, not the artifact).
pub fn cmd_fit(
    cfg: &RunConfig,
    data_dir: &Path,
    strategy: Strategy,
    rom: RomFamily,
    k: usize,
) -> Result<PathBuf> {
    let (hidden, observations) = load_generated(cfg, data_dir)?;
    let started = std::time::Instant::now();
    let out_dir = cfg.out.clone();
    let (log, dir) = with_thread_pool(cfg.threads, move || -> Result<(String, PathBuf)> {
        let ctx = BenchmarkContext::from_data(
            cfg.grid.clone(),
            cfg.setup.clone(),
            cfg.seed,
            cfg.obs_factor,
            hidden,
            observations,
            &[strategy],
        )?;
        let snap = ctx.snapshots(strategy)?;
        fs::create_dir_all(&out_dir)?;
        let mut log = String::new();
        log.push_str(&format!("strategy = {}\nk = {k}\n", strategy.label()));
        match rom {
            RomFamily::Pod => {
                let solver = PodSolver::new(&snap.c)?;
                let basis = solver.basis(k)?;
                save_pod_basis(&out_dir, &basis)?;
                log.push_str("rom = pod\n");
                log.push_str(&format!("fit_cost_sq = {:.17e}\n", solver.fit_cost_sq(k)));
                log.push_str(&format!("numerical_rank = {}\n", solver.rank()));
                log.push_str("eigenvalues =");
                for v in basis.eigenvalues().iter() {
                    log.push_str(&format!(" {v:.17e}"));
                }
                log.push('\n');
            }
            RomFamily::Dmd => {
                let solver = DmdSolver::new(&snap.a, &snap.b)?;
                let op = solver.operator(k)?;
                save_low_rank_operator(&out_dir, &op)?;
                log.push_str("rom = dmd\n");
                log.push_str(&format!("fit_cost_sq = {:.17e}\n", solver.fit_cost_sq(k)));
                log.push_str(&format!("numerical_rank = {}\n", solver.rank()));
                log.push_str("singular_values =");
                for v in op.singular_values().iter() {
                    log.push_str(&format!(" {v:.17e}"));
                }
                log.push('\n');
            }
        }
        Ok((log, out_dir))
    })??;
    fs::write(dir.join("fit_log.txt"), &log)?;
    eprintln!("fit completed in {:?}", started.elapsed());
    Ok(dir)
}

/// Evaluates a persisted ROM artifact against the persisted hidden
/// trajectories; returns the report text.
pub fn cmd_evaluate(cfg: &RunConfig, data_dir: &Path, fit_dir: &Path, rom: RomFamily) -> Result<String> {
    let (hidden, observations) = load_generated(cfg, data_dir)?;
    with_thread_pool(cfg.threads, move || -> Result<String> {
        let ctx = BenchmarkContext::from_data(
            cfg.grid.clone(),
            cfg.setup.clone(),
            cfg.seed,
            cfg.obs_factor,
            hidden,
            observations,
            &[],
        )?;
        let t_len = ctx.setup.t_len;
        let mut report = String::new();
        let mut errors = Vec::new();
        let mut star_errors = Vec::new();
        match rom {
            RomFamily::Pod => {
                let basis = load_pod_basis(fit_dir)?;
                report.push_str(&format!("rom = pod\nk = {}\n", basis.k()));
                for i in 0..ctx.setup.d {
                    let sim = pod_rom_simulate(&basis, &ctx.model, &ctx.thetas[i], t_len)?;
                    errors.push(frobenius_error(&ctx.hidden[i], &sim)?);
                    let star = pod_star_project(&basis, &ctx.hidden[i])?;
                    star_errors.push(frobenius_error(&ctx.hidden[i], &star)?);
                }
            }
            RomFamily::Dmd => {
                let op = load_low_rank_operator(fit_dir)?;
                report.push_str(&format!("rom = dmd\nk = {}\n", op.k()));
                for i in 0..ctx.setup.d {
                    let sim = dmd_rom_simulate(&op, &ctx.model, &ctx.thetas[i], t_len)?;
                    errors.push(frobenius_error(&ctx.hidden[i], &sim)?);
                    let star = dmd_star_predict(&op, &ctx.hidden[i])?;
                    star_errors.push(frobenius_error(&ctx.hidden[i], &star)?);
                }
            }
        }
        for (i, (e, s)) in errors.iter().zip(&star_errors).enumerate() {
            report.push_str(&format!("traj {i}: error = {e:.17e}, idealized = {s:.17e}\n"));
        }
        let mean = errors.iter().sum::<f64>() / errors.len() as f64;
        let mean_star = star_errors.iter().sum::<f64>() / star_errors.len() as f64;
        report.push_str(&format!("mean_error = {mean:.17e}\nmean_idealized_error = {mean_star:.17e}\n"));
        Ok(report)
    })?
}

/// Runs the full benchmark for the configured setup and writes the CSV
/// error curve, a gnuplot script and the manifest. Returns the CSV path.
pub fn cmd_benchmark(cfg: &RunConfig) -> Result<PathBuf> {
    if cfg.strategies.is_empty() {
        return Err(Error::Config("no strategies selected".into()));
    }
    let opts = RunOptions {
        strategies: cfg.strategies.clone(),
        roms: cfg.roms.clone(),
        k_grid: cfg.k_grid.clone(),
        seed: cfg.seed,
        obs_factor: cfg.obs_factor,
        star_all_strategies: false,
    };
    let outcome = with_thread_pool(cfg.threads, || run_setup(&cfg.grid, &cfg.setup, &opts))??;
    fs::create_dir_all(&cfg.out)?;
    let csv_path = cfg.out.join("curve.csv");
    fs::write(&csv_path, outcome.curve.to_csv())?;
    fs::write(cfg.out.join("plot.gp"), gnuplot_script(&outcome.curve))?;
    let mut manifest = cfg.manifest();
    manifest.push_str(&format!("zeta = {:.17e}\n", outcome.zeta));
    manifest.push_str(&format!("mean_trajectory_norm = {:.17e}\n", outcome.mean_traj_norm));
    fs::write(cfg.out.join("manifest.txt"), manifest)?;
    Ok(csv_path)
}

/// Gnuplot script drawing mean error against k per (rom, strategy) with a
/// logarithmic error axis; the data rides along in inline blocks.
pub fn gnuplot_script(curve: &ErrorCurve) -> String {
    let mut out = String::new();
    out.push_str("# mean ROM error vs reduced dimension k\n");
    out.push_str("set datafile separator \",\"\n");
    out.push_str("set logscale y\n");
    out.push_str("set xlabel \"reduced dimension k\"\n");
    out.push_str("set ylabel \"mean error\"\n");
    out.push_str("set key outside\n");
    let mut series: Vec<(String, String)> = Vec::new();
    for rom in [RomVariant::Pod, RomVariant::PodStar, RomVariant::Dmd, RomVariant::DmdStar] {
        for strategy in Strategy::ALL {
            let pts: Vec<(usize, f64)> = curve
                .points
                .iter()
                .filter(|p| p.rom == rom && p.strategy == strategy)
                .map(|p| (p.k, p.mean_error))
                .collect();
            if pts.is_empty() {
                continue;
            }
            let name = format!("{}_{}", rom.label().replace('-', "_"), strategy.label());
            let mut block = format!("${name} << EOD\n");
            for (k, e) in pts {
                block.push_str(&format!("{k},{e:.16e}\n"));
            }
            block.push_str("EOD\n");
            out.push_str(&block);
            series.push((name.clone(), format!("{} / {}", rom.label(), strategy.label())));
        }
    }
    let plots: Vec<String> = series
        .iter()
        .map(|(name, title)| format!("${name} using 1:2 with linespoints title \"{title}\""))
        .collect();
    out.push_str(&format!("plot {}\n", plots.join(", \\\n     ")));
    out
}

/// Verifies the Gaussian improvement inequality on random instances and
/// returns the report text.
pub fn cmd_prop1(seed: u64, instances: usize) -> Result<String> {
    let report = prop1_gaussian_check(8, 4, instances, seed)?;
    let mut text = report.summary();
    text.push_str(&format!(
        "all_hold = {}\nstrict_count = {} of {}\n",
        report.all_hold(),
        report.strict_count(1e-6),
        report.rows.len()
    ));
    Ok(text)
}

/// Process exit code for an error: 2 configuration, 3 numerical divergence,
/// 4 IO.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config(_) | Error::Dimension(_) | Error::RankCheck { .. } | Error::Calibration(_) => 2,
        Error::Diverged { .. } | Error::DegenerateEnsemble { .. } | Error::DegenerateLikelihood => 3,
        Error::Io(_) | Error::Format { .. } => 4,
    }
}
