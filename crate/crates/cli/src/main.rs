use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use wpt_cli::config::{parse_list, ConfigError, Experiment, RoomConfig, RunConfig, OUTPUT_ROOT_VAR};
use wpt_cli::run::{execute, EXIT_CONFIG};
use wpt_core::experiments::NlosMode;
use wpt_core::geometry::{Dimensionality, Environment};
use wpt_core::schemes::SchemeId;

#[derive(Parser)]
#[command(
    name = "wpt",
    version,
    about = "Worst-case optimal transmit antenna deployment for indoor wireless power transfer"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run whatever experiment the config file names
    Run(Overrides),
    /// Solve one room: objective, antenna count, certificate, heatmap
    Solve(Overrides),
    /// Objective and antenna count over increasing lods
    Sweep(Overrides),
    /// All allocation schemes in several rooms
    Compare(Overrides),
    /// Rician fading ensemble around the LoS optimum
    Fading(Overrides),
    /// Heatmaps for the selected schemes
    Heatmap(Overrides),
    /// Certify an allocation (a scheme's or one read from a heatmap CSV)
    Certify(Overrides),
}

#[derive(Args, Default)]
struct Overrides {
    /// TOML run configuration; flags take precedence over it
    #[arg(long, short)]
    config: Option<PathBuf>,
    /// Room preset: 1-1, 1-3, 1-4 or 1-5
    #[arg(long)]
    env: Option<Environment>,
    /// Custom room as LX,LY,LZ in metres (LY is the height)
    #[arg(long, value_parser = parse_room)]
    room: Option<RoomConfig>,
    /// Array dimensionality: 1d or 2d
    #[arg(long)]
    dim: Option<Dimensionality>,
    /// Samples per axis of the transmit and receive lattices
    #[arg(long)]
    lod: Option<usize>,
    /// Output root; falls back to the config file, then $WPT_OUTPUT_ROOT
    #[arg(long)]
    out: Option<PathBuf>,
    /// Relative optimality tolerance of the solver
    #[arg(long)]
    tol: Option<f64>,
    /// Base seed of the fading ensemble
    #[arg(long)]
    seed: Option<u64>,
    /// Comma-separated schemes, e.g. M-OPT,M-UNI
    #[arg(long, value_delimiter = ',')]
    schemes: Option<Vec<SchemeId>>,
    /// Comma-separated strictly increasing lods for `sweep`
    #[arg(long, value_delimiter = ',')]
    lods: Option<Vec<usize>>,
    /// Comma-separated room presets for `compare`
    #[arg(long, value_delimiter = ',')]
    envs: Option<Vec<Environment>>,
    /// Pruning percentile of M-S75
    #[arg(long)]
    percentile: Option<f64>,
    /// Number of fading realizations
    #[arg(long)]
    realizations: Option<usize>,
    /// NLoS component: shared or independent
    #[arg(long, value_parser = parse_mode)]
    mode: Option<NlosMode>,
    /// Rician K-factor
    #[arg(long)]
    kappa: Option<f64>,
    /// Worker threads for fading (0 = all cores)
    #[arg(long)]
    threads: Option<usize>,
    /// Heatmap CSV to certify
    #[arg(long)]
    allocation: Option<PathBuf>,
    /// Print the summary as one JSON object
    #[arg(long)]
    json_summary: bool,
}

fn parse_room(s: &str) -> Result<RoomConfig, String> {
    match parse_list::<f64>(s)?.as_slice() {
        &[len_x, len_y, len_z] => Ok(RoomConfig { len_x, len_y, len_z }),
        _ => Err("expected LX,LY,LZ".into()),
    }
}

fn parse_mode(s: &str) -> Result<NlosMode, String> {
    match s.trim().to_ascii_lowercase().as_str() {
        "shared" => Ok(NlosMode::Shared),
        "independent" => Ok(NlosMode::Independent),
        other => Err(format!("unknown NLoS mode '{other}'")),
    }
}

impl Overrides {
    fn apply(self, experiment: Option<Experiment>) -> Result<(RunConfig, bool), ConfigError> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        if experiment.is_some() {
            cfg.experiment = experiment;
        }
        if let Some(env) = self.env {
            cfg.environment = Some(env);
            cfg.room = None;
        }
        if self.room.is_some() {
            cfg.room = self.room;
        }
        macro_rules! set {
            ($flag:expr => $($field:tt)+) => {
                if let Some(v) = $flag {
                    cfg.$($field)+ = Some(v);
                }
            };
        }
        set!(self.dim => layout.dimensionality);
        set!(self.lod => layout.lod);
        set!(self.out => output_dir);
        set!(self.tol => solver.tol);
        set!(self.seed => seed);
        set!(self.schemes => schemes);
        set!(self.lods => sweep.lods);
        set!(self.envs => compare.environments);
        set!(self.percentile => compare.percentile);
        set!(self.realizations => fading.realizations);
        set!(self.mode => fading.mode);
        set!(self.kappa => physical.rician_k);
        set!(self.threads => fading.threads);
        set!(self.allocation => certify.allocation);
        Ok((cfg, self.json_summary))
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (overrides, experiment) = match cli.command {
        Command::Run(o) => (o, None),
        Command::Solve(o) => (o, Some(Experiment::Solve)),
        Command::Sweep(o) => (o, Some(Experiment::Sweep)),
        Command::Compare(o) => (o, Some(Experiment::Compare)),
        Command::Fading(o) => (o, Some(Experiment::Fading)),
        Command::Heatmap(o) => (o, Some(Experiment::Heatmap)),
        Command::Certify(o) => (o, Some(Experiment::Certify)),
    };
    let env_root = std::env::var_os(OUTPUT_ROOT_VAR).map(PathBuf::from);
    let resolved = overrides
        .apply(experiment)
        .and_then(|(cfg, json)| Ok((cfg.resolve(env_root)?, json)));
    let (resolved, json) = match resolved {
        Ok(r) => r,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_CONFIG as u8);
        }
    };
    match execute(&resolved) {
        Ok(summary) => {
            if json {
                println!("{}", serde_json::to_string(&summary).expect("summaries serialize"));
            } else {
                for line in &summary.lines {
                    println!("{line}");
                }
                println!("outputs: {}", summary.output_dir.display());
            }
            ExitCode::from(summary.exit_code() as u8)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
