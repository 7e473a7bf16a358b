use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use sparse_sounder::{AbsorptionModel, Scheme};

mod commands;
mod config;

use config::{ConfigError, RunConfig};

/// Worker threads for sweeps and profile evaluation.
const THREADS_ENV: &str = "SPARSE_SOUNDER_THREADS";

#[derive(Parser)]
#[command(name = "sparse-sounder", version, about = "Sparse frequency-domain channel sounding toolkit")]
struct Cli {
    /// TOML run configuration; flags override its keys.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Base RNG seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Default)]
struct SchemeFlags {
    /// ufs, cfs, nfs or pfs.
    #[arg(long = "type")]
    kind: Option<Scheme>,
    /// Band centre, Hz.
    #[arg(long)]
    fc: Option<f64>,
    /// Bandwidth, Hz.
    #[arg(long)]
    bw: Option<f64>,
    /// Number of probe frequencies.
    #[arg(long)]
    k: Option<usize>,
    /// Explicit coprime pair.
    #[arg(long, requires = "n")]
    m: Option<u64>,
    #[arg(long, requires = "m")]
    n: Option<u64>,
    /// Explicit nested pair.
    #[arg(long, requires = "n2")]
    n1: Option<u64>,
    #[arg(long, requires = "n1")]
    n2: Option<u64>,
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum AbsorptionChoice {
    None,
    Water,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a frequency grid and audit its delay likelihood.
    Scheme {
        #[command(flatten)]
        grid: SchemeFlags,
        /// Delay horizon of the ambiguity search, seconds.
        #[arg(long)]
        horizon: Option<f64>,
    },
    /// Synthesize a measurement from the configured channel.
    Simulate {
        #[command(flatten)]
        grid: SchemeFlags,
        /// Per-sample SNR in dB, or `none` for noiseless data.
        #[arg(long)]
        snr: Option<String>,
        #[arg(long, value_enum)]
        absorption: Option<AbsorptionChoice>,
    },
    /// Extract multipath components from a measurement CSV.
    Extract {
        measurement: PathBuf,
        /// Use the classical SAGE objective.
        #[arg(long, conflicts_with = "rectify")]
        no_rectify: bool,
        /// Use the likelihood-rectified objective (default).
        #[arg(long)]
        rectify: bool,
        /// Number of paths to extract.
        #[arg(long)]
        paths: Option<usize>,
        #[arg(long, value_enum)]
        absorption: Option<AbsorptionChoice>,
    },
    /// Monte Carlo delay-RMSE sweep.
    Benchmark {
        #[command(flatten)]
        grid: SchemeFlags,
        /// Comma-separated grid sizes.
        #[arg(long, value_delimiter = ',')]
        ks: Option<Vec<usize>>,
        /// Comma-separated schemes.
        #[arg(long, value_delimiter = ',')]
        schemes: Option<Vec<Scheme>>,
        #[arg(long)]
        trials: Option<usize>,
    },
    /// Path loss and RMS delay spread CDFs over measurement or estimate files.
    Stats {
        files: Vec<PathBuf>,
        /// Peak threshold above the CIR median floor, dB.
        #[arg(long, default_value_t = 10.0)]
        threshold_db: f64,
        /// Largest delay searched in measurement CIRs, seconds.
        #[arg(long, default_value_t = 500e-9)]
        max_delay: f64,
    },
}

impl SchemeFlags {
    fn apply(&self, cfg: &mut RunConfig) {
        let s = &mut cfg.scheme;
        if let Some(v) = self.kind {
            s.kind = v;
        }
        if let Some(v) = self.fc {
            s.fc_hz = v;
        }
        if let Some(v) = self.bw {
            s.bandwidth_hz = v;
        }
        if let Some(v) = self.k {
            s.k = v;
        }
        if self.m.is_some() {
            (s.m, s.n) = (self.m, self.n);
        }
        if self.n1.is_some() {
            (s.n1, s.n2) = (self.n1, self.n2);
        }
    }
}

fn absorption_of(choice: AbsorptionChoice) -> AbsorptionModel {
    match choice {
        AbsorptionChoice::None => AbsorptionModel::none(),
        AbsorptionChoice::Water => AbsorptionModel::default_water(),
    }
}

fn parse_snr(text: &str) -> anyhow::Result<Option<f64>> {
    if text.eq_ignore_ascii_case("none") {
        return Ok(None);
    }
    let v: f64 = text.parse().map_err(|_| config::config_error(format!("--snr expects dB or 'none', got '{text}'")))?;
    if !v.is_finite() {
        return Err(config::config_error("--snr must be finite"));
    }
    Ok(Some(v))
}

fn init_pool() -> anyhow::Result<()> {
    if let Ok(text) = std::env::var(THREADS_ENV) {
        let n: usize = text
            .parse()
            .map_err(|_| config::config_error(format!("{THREADS_ENV} must be a positive integer, got '{text}'")))?;
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    Ok(())
}

fn execute(cli: Cli) -> anyhow::Result<String> {
    init_pool()?;
    let mut cfg = RunConfig::load_or_default(cli.config.as_deref())?;
    if let Some(out) = cli.out {
        cfg.output_dir = out;
    }
    if let Some(seed) = cli.seed {
        cfg.base_seed = seed;
    }
    match cli.command {
        Command::Scheme { grid, horizon } => {
            grid.apply(&mut cfg);
            commands::scheme(&cfg, horizon)
        }
        Command::Simulate { grid, snr, absorption } => {
            grid.apply(&mut cfg);
            if let Some(a) = absorption {
                cfg.absorption = absorption_of(a);
            }
            if let Some(text) = snr {
                let snr = parse_snr(&text)?;
                if let Some(ch) = cfg.channel.as_mut() {
                    ch.snr_db = snr;
                }
            }
            commands::simulate(&cfg)
        }
        Command::Extract {
            measurement,
            no_rectify,
            rectify,
            paths,
            absorption,
        } => {
            if let Some(a) = absorption {
                cfg.absorption = absorption_of(a);
            }
            let mut sage = cfg.sage_or_default();
            if let Some(n) = paths {
                sage.n_paths = n;
            }
            if no_rectify || rectify || cfg.sage.is_none() {
                sage.rectified = !no_rectify;
            }
            cfg.sage = Some(sage);
            commands::extract(&cfg, &measurement)
        }
        Command::Benchmark { grid, ks, schemes, trials } => {
            grid.apply(&mut cfg);
            commands::override_sweep(&mut cfg, ks, schemes, trials)?;
            commands::benchmark(&cfg)
        }
        Command::Stats {
            files,
            threshold_db,
            max_delay,
        } => commands::stats(&cfg, &files, threshold_db, max_delay),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(report) => {
            print!("{report}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            let usage = e.chain().any(|c| c.downcast_ref::<ConfigError>().is_some());
            ExitCode::from(if usage { 2 } else { 1 })
        }
    }
}
