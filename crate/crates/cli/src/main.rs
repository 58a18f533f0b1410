use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use romx_cli::{
    cmd_benchmark, cmd_evaluate, cmd_fit, cmd_generate, cmd_prop1, exit_code, parse_rom_list,
    parse_strategy_list, parse_usize_list, Overrides, RunConfig,
};
use romx_core::benchmark::RomFamily;
use romx_core::smc::Strategy;

#[derive(Parser)]
#[command(name = "romx", version, about = "Probabilistic reduced-order modeling pipelines")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct CommonArgs {
    /// Flat key-value configuration file; flags override its entries.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Benchmark setup: i, ii, iii, iv or v.
    #[arg(long)]
    setup: Option<String>,
    /// Master seed for every random stream.
    #[arg(long)]
    seed: Option<u64>,
    /// Grid points along s1 (power of two).
    #[arg(long)]
    n1: Option<usize>,
    /// Grid points along s2 (power of two).
    #[arg(long)]
    n2: Option<usize>,
    /// Particles per observation sequence.
    #[arg(long)]
    particles: Option<usize>,
    /// Peak-signal-to-noise ratio of the observations in dB.
    #[arg(long = "psnr-db")]
    psnr_db: Option<f64>,
    /// Per-axis resolution degradation factor of the observations.
    #[arg(long = "obs-factor")]
    obs_factor: Option<usize>,
    /// Comma-separated reduced dimensions, e.g. 2,5,10.
    #[arg(long = "k-grid")]
    k_grid: Option<String>,
    /// Comma-separated strategies: target,enhanced,initial,point.
    #[arg(long)]
    strategy: Option<String>,
    /// Comma-separated ROM families: pod,dmd.
    #[arg(long)]
    rom: Option<String>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads (also settable via ROMX_THREADS).
    #[arg(long)]
    threads: Option<usize>,
}

impl CommonArgs {
    fn resolve(&self) -> romx_core::Result<RunConfig> {
        let overrides = Overrides {
            setup: self.setup.clone(),
            seed: self.seed,
            n1: self.n1,
            n2: self.n2,
            obs_factor: self.obs_factor,
            particles: self.particles,
            psnr_db: self.psnr_db,
            gamma: None,
            amplitude: None,
            d: None,
            t_len: None,
            k_grid: self.k_grid.as_deref().map(parse_usize_list).transpose()?,
            strategies: self.strategy.as_deref().map(parse_strategy_list).transpose()?,
            roms: self.rom.as_deref().map(parse_rom_list).transpose()?,
            out: self.out.clone(),
            threads: self.threads,
        };
        RunConfig::resolve(self.config.as_deref(), overrides)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Draw hidden trajectories and persist them with their observations.
    Generate {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Fit one ROM from generated data and persist the basis/operator.
    Fit {
        #[command(flatten)]
        common: CommonArgs,
        /// Directory holding the generated data.
        #[arg(long)]
        data: PathBuf,
        /// Sampling strategy feeding the snapshots.
        #[arg(long = "fit-strategy")]
        fit_strategy: String,
        /// ROM family to fit: pod or dmd.
        #[arg(long = "fit-rom")]
        fit_rom: String,
        /// Reduced dimension.
        #[arg(short, long)]
        k: usize,
    },
    /// Evaluate a persisted ROM against the generated hidden trajectories.
    Evaluate {
        #[command(flatten)]
        common: CommonArgs,
        /// Directory holding the generated data.
        #[arg(long)]
        data: PathBuf,
        /// Directory holding the fitted artifact.
        #[arg(long)]
        fit: PathBuf,
        /// ROM family of the artifact: pod or dmd.
        #[arg(long = "fit-rom")]
        fit_rom: String,
    },
    /// Run a full setup and emit the CSV error curve plus a plot script.
    Benchmark {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Verify the Gaussian improvement inequality on random instances.
    Prop1Check {
        /// Master seed.
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Number of random instances.
        #[arg(long, default_value_t = 50)]
        instances: usize,
    },
}

fn run() -> romx_core::Result<()> {
    let cli = Cli::parse();
    match cli.command {
        Command::Generate { common } => {
            let cfg = common.resolve()?;
            let written = cmd_generate(&cfg)?;
            println!("wrote {} files under {}", written.len(), cfg.out.display());
        }
        Command::Fit {
            common,
            data,
            fit_strategy,
            fit_rom,
            k,
        } => {
            let cfg = common.resolve()?;
            let strategy = Strategy::parse(&fit_strategy)?;
            let rom = RomFamily::parse(&fit_rom)?;
            let dir = cmd_fit(&cfg, &data, strategy, rom, k)?;
            println!("fit artifacts written to {}", dir.display());
        }
        Command::Evaluate {
            common,
            data,
            fit,
            fit_rom,
        } => {
            let cfg = common.resolve()?;
            let rom = RomFamily::parse(&fit_rom)?;
            let report = cmd_evaluate(&cfg, &data, &fit, rom)?;
            print!("{report}");
        }
        Command::Benchmark { common } => {
            let cfg = common.resolve()?;
            let csv = cmd_benchmark(&cfg)?;
            println!("error curve written to {}", csv.display());
        }
        Command::Prop1Check { seed, instances } => {
            let report = cmd_prop1(seed, instances)?;
            print!("{report}");
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code(&err) as u8)
        }
    }
}
