//! `hocle`: batch runs of the elliptic, transport and coupled solvers.
//!
//! Exit status: 0 on success, 1 on a solver or I/O failure, 2 on a rejected
//! configuration, 3 when outputs were written but a run invariant failed.

mod config;
mod coupled;
mod elliptic;
mod hyperbolic;
mod manifest;
mod report;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use hocle_core::fields_io::OutputDir;

use config::{parse_list, parse_medium, Config, Overrides, Section};
use manifest::RunManifest;

#[derive(Parser)]
#[command(name = "hocle", version, about = "Conservative FEM, Lagrangian-Eulerian transport and IMPES runs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// FEM vs constrained FEM indicators and convergence on a mesh ladder.
    Elliptic(RunArgs),
    /// Transport test problems with snapshots and convergence tables.
    Hyperbolic(RunArgs),
    /// IMPES waterflood of a slab across a mesh ladder.
    Coupled(RunArgs),
    /// Re-render the tables of earlier runs from their manifests.
    Report {
        /// Manifest files or run directories.
        #[arg(required = true)]
        manifests: Vec<PathBuf>,
        /// Also write report.md here.
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
}

#[derive(Args)]
struct RunArgs {
    /// TOML configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value = "out")]
    out_dir: PathBuf,
    #[arg(long)]
    threads: Option<usize>,
    /// CFL number (transport and coupled runs).
    #[arg(long)]
    cfl: Option<f64>,
    /// Polynomial degrees, comma separated.
    #[arg(long, value_parser = parse_list::<usize>)]
    degree: Option<std::vec::Vec<usize>>,
    /// Elements per side (elliptic, hyperbolic) or mesh sizes h (coupled), comma separated.
    #[arg(long, value_parser = parse_list::<f64>)]
    mesh_ladder: Option<std::vec::Vec<f64>>,
    #[arg(long)]
    problem: Option<String>,
    /// homogeneous | barrier[:contrast] | synthetic[:seed] | raster:<path>
    #[arg(long, value_parser = validate_medium)]
    medium: Option<String>,
}

fn validate_medium(s: &str) -> Result<String, String> {
    parse_medium(s).map(|_| s.to_string())
}

pub enum Failure {
    Config(String),
    Runtime(String),
    Invariant(String),
}

impl From<hocle_core::Error> for Failure {
    fn from(e: hocle_core::Error) -> Self {
        match e {
            hocle_core::Error::Config(_) | hocle_core::Error::Parse { .. } => Failure::Config(e.to_string()),
            _ => Failure::Runtime(e.to_string()),
        }
    }
}

impl From<config::ConfigError> for Failure {
    fn from(e: config::ConfigError) -> Self {
        Failure::Config(e.0)
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Runtime(e.to_string())
    }
}

fn run_command(name: &str, section: Section, args: RunArgs) -> Result<(), Failure> {
    let mut cfg = match &args.config {
        Some(p) => Config::load(p)?,
        None => Config::default(),
    };
    let o = Overrides {
        threads: args.threads,
        cfl: args.cfl,
        degree: args.degree,
        mesh_ladder: args.mesh_ladder,
        problem: args.problem,
        medium: args.medium,
    };
    cfg.apply(&o, section)?;
    cfg.resolve(section)?;
    if let Some(t) = cfg.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global()
            .map_err(|e| Failure::Runtime(format!("thread pool: {e}")))?;
    }
    let mut out = OutputDir::create(&args.out_dir)?;
    let mut man = RunManifest::new(name, &cfg);
    let result = match section {
        Section::Elliptic => elliptic::run(&cfg.elliptic, &mut out, &mut man),
        Section::Hyperbolic => hyperbolic::run(&cfg.hyperbolic, &mut out, &mut man),
        Section::Coupled => coupled::run(&cfg.coupled, &mut out, &mut man),
    };
    result?;
    let man = man.finish(&out)?;
    if !man.all_checks_pass() {
        let failed: Vec<String> = man.checks.iter().filter(|c| !c.pass).map(|c| c.name.clone()).collect();
        return Err(Failure::Invariant(failed.join(", ")));
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Elliptic(a) => run_command("elliptic", Section::Elliptic, a),
        Command::Hyperbolic(a) => run_command("hyperbolic", Section::Hyperbolic, a),
        Command::Coupled(a) => run_command("coupled", Section::Coupled, a),
        Command::Report { manifests, out_dir } => (|| {
            let mut all = String::new();
            for m in &manifests {
                all.push_str(&report::render(m)?);
            }
            print!("{all}");
            if let Some(d) = out_dir {
                std::fs::create_dir_all(&d)?;
                std::fs::write(d.join("report.md"), &all)?;
            }
            Ok(())
        })(),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Runtime(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
        Err(Failure::Config(m)) => {
            eprintln!("configuration error: {m}");
            ExitCode::from(2)
        }
        Err(Failure::Invariant(m)) => {
            eprintln!("invariant violated: {m}");
            ExitCode::from(3)
        }
    }
}
