//! Command line front end. Every subcommand writes CSV to `--output` or
//! stdout; `run` prints a one-line summary.

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, CommandFactory, Parser, Subcommand};

use crate::error::{Error, Result};
use crate::harness::{
    convergence_records, convergence_study, csv_string, fmt_real, run_single, rows_with_rates, write_csv,
    Problem, RunSpec, CONVERGENCE_HEADER,
};
use crate::scheme::SchemeChoice;
use crate::stability::{max_stable_cfl, radius_profile, stability_matrices};

#[derive(Debug, Parser)]
#[command(name = "lidg", version, about = "Locally implicit ADER-DG experiments")]
#[command(args_override_self = true)]
pub struct Cli {
    /// Flat key=value file with defaults for the subcommand's long flags.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run one simulation and report the final relative L2 error.
    Run(RunArgs),
    /// Convergence study over several mesh sizes.
    Converge(ConvergeArgs),
    /// Maximum amplification radius over a range of CFL numbers.
    Vonneumann(VonNeumannArgs),
    /// Norms of the 1D stability matrix A.
    StabilityNorm(NormArgs),
    /// Largest stable CFL number by bisection.
    MaxCfl(MaxCflArgs),
}

#[derive(Debug, Args)]
pub struct ProblemArgs {
    #[arg(long, default_value = "advection2d")]
    pub problem: Problem,
    #[arg(long, default_value_t = 2)]
    pub order: usize,
    #[arg(long, default_value_t = 0.6)]
    pub cfl: f64,
    #[arg(long, default_value_t = 2.0)]
    pub tfinal: f64,
    #[arg(long, default_value = "lidg")]
    pub scheme: SchemeChoice,
    /// Use sin(16 pi x) per axis for the advection problems.
    #[arg(long)]
    pub high_frequency: bool,
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[command(flatten)]
    pub common: ProblemArgs,
    /// Elements per axis.
    #[arg(long, default_value_t = 16)]
    pub elements: usize,
}

#[derive(Debug, Args)]
pub struct ConvergeArgs {
    #[command(flatten)]
    pub common: ProblemArgs,
    #[arg(long, value_delimiter = ',', default_value = "8,16,32")]
    pub sizes: Vec<usize>,
}

#[derive(Debug, Args)]
pub struct VonNeumannArgs {
    #[arg(long, default_value = "lidg")]
    pub scheme: SchemeChoice,
    #[arg(long, default_value_t = 1)]
    pub dim: usize,
    #[arg(long, default_value_t = 2)]
    pub order: usize,
    #[arg(long, default_value_t = 0.1)]
    pub cfl_min: f64,
    #[arg(long, default_value_t = 1.2)]
    pub cfl_max: f64,
    #[arg(long, default_value_t = 12)]
    pub cfl_steps: usize,
    /// Wavenumber samples per axis.
    #[arg(long, default_value_t = 100)]
    pub samples: usize,
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct NormArgs {
    #[arg(long, default_value_t = 10)]
    pub max_order: usize,
    #[arg(long, value_delimiter = ',', default_value = "0.1,0.25,0.5,0.75,0.9,1.0,1.05,1.2")]
    pub cfl_list: Vec<f64>,
    /// Add a spectral_radius column.
    #[arg(long)]
    pub with_radius: bool,
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct MaxCflArgs {
    #[arg(long, value_delimiter = ',', default_value = "lidg,ader")]
    pub scheme: Vec<SchemeChoice>,
    #[arg(long, default_value_t = 1)]
    pub dim: usize,
    #[arg(long, value_delimiter = ',', default_value = "1,2,3")]
    pub order: Vec<usize>,
    #[arg(long, default_value_t = 100)]
    pub samples: usize,
    #[arg(long, default_value_t = 0.01)]
    pub tol: f64,
    #[arg(long)]
    pub output: Option<PathBuf>,
}

impl ProblemArgs {
    fn spec(&self, sizes: Vec<usize>) -> RunSpec {
        RunSpec {
            problem: self.problem,
            order_p: self.order,
            sizes,
            cfl_norm: self.cfl,
            t_final: self.tfinal,
            scheme: self.scheme,
            output: self.output.clone(),
            high_frequency: self.high_frequency,
        }
    }
}

/// Turns `key=value` lines into `--key value` arguments. Blank lines and
/// lines starting with `#` are skipped; `key=true` becomes a bare flag.
pub fn config_file_args(path: &Path) -> Result<Vec<String>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::from(e).context(format!("reading {}", path.display())))?;
    let mut args = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("{}:{}: expected key=value", path.display(), i + 1)))?;
        let key = key.trim().replace('_', "-");
        let value = value.trim();
        match value {
            "true" => args.push(format!("--{key}")),
            "false" => {}
            _ => {
                args.push(format!("--{key}"));
                args.push(value.to_string());
            }
        }
    }
    Ok(args)
}

fn emit(output: Option<&Path>, header: &[&str], rows: &[Vec<String>], out: &mut dyn Write) -> Result<()> {
    match output {
        Some(path) => write_csv(path, header, rows),
        None => {
            out.write_all(csv_string(header, rows)?.as_bytes())?;
            Ok(())
        }
    }
}

fn linspace(lo: f64, hi: f64, steps: usize) -> Vec<f64> {
    match steps {
        0 => vec![],
        1 => vec![lo],
        _ => (0..steps)
            .map(|i| lo + (hi - lo) * i as f64 / (steps - 1) as f64)
            .collect(),
    }
}

pub fn execute(cli: Cli, out: &mut dyn Write) -> Result<()> {
    match cli.command {
        Command::Run(a) => {
            let spec = a.common.spec(vec![a.elements]);
            spec.validate()?;
            let r = run_single(&spec, a.elements)?;
            writeln!(
                out,
                "problem={} scheme={} p={} elements={} steps={} t={} rel_l2={}",
                spec.problem,
                spec.scheme,
                spec.order_p,
                a.elements,
                r.steps,
                r.state.time,
                fmt_real(r.rel_l2_error)
            )?;
            if let Some(path) = &spec.output {
                let rows = rows_with_rates(&[(a.elements, r.h, r.rel_l2_error)]);
                write_csv(path, &CONVERGENCE_HEADER, &convergence_records(&rows))?;
            }
        }
        Command::Converge(a) => {
            let mut spec = a.common.spec(a.sizes);
            let output = spec.output.take();
            let rows = convergence_study(&spec)?;
            emit(output.as_deref(), &CONVERGENCE_HEADER, &convergence_records(&rows), out)?;
        }
        Command::Vonneumann(a) => {
            if a.cfl_steps == 0 || !(a.cfl_min >= 0.0) || a.cfl_max < a.cfl_min {
                return Err(Error::Config("need cfl_steps >= 1 and 0 <= cfl_min <= cfl_max".into()));
            }
            let cfls = linspace(a.cfl_min, a.cfl_max, a.cfl_steps);
            let profile = radius_profile(a.scheme, a.order, a.dim, &cfls, a.samples)?;
            let rows: Vec<Vec<String>> = profile.iter().map(|&(c, r)| vec![fmt_real(c), fmt_real(r)]).collect();
            emit(a.output.as_deref(), &["cfl", "max_radius"], &rows, out)?;
        }
        Command::StabilityNorm(a) => {
            if let Some(nu) = a.cfl_list.iter().find(|nu| !(**nu >= 0.0 && nu.is_finite())) {
                return Err(Error::Config(format!("CFL must be >= 0, got {nu}")));
            }
            let mut header = vec!["p", "nu", "norm_w", "norm_2"];
            if a.with_radius {
                header.push("spectral_radius");
            }
            let mut rows = Vec::new();
            for p in 0..=a.max_order {
                for &nu in &a.cfl_list {
                    let m = stability_matrices(p, nu)?;
                    let mut row = vec![p.to_string(), fmt_real(nu), fmt_real(m.weighted_norm()), fmt_real(m.norm_2())];
                    if a.with_radius {
                        row.push(fmt_real(m.spectral_radius()));
                    }
                    rows.push(row);
                }
            }
            emit(a.output.as_deref(), &header, &rows, out)?;
        }
        Command::MaxCfl(a) => {
            let mut rows = Vec::new();
            for &scheme in &a.scheme {
                for &p in &a.order {
                    let c = max_stable_cfl(scheme, p, a.dim, a.samples, a.tol)?;
                    rows.push(vec![scheme.to_string(), p.to_string(), a.dim.to_string(), fmt_real(c)]);
                }
            }
            emit(a.output.as_deref(), &["scheme", "p", "dim", "max_cfl"], &rows, out)?;
        }
    }
    Ok(())
}

/// Parses `argv` (program name first), runs the command and returns the exit
/// status: 0 on success, 1 on a runtime failure, 2 on a usage error.
pub fn dispatch(argv: Vec<String>, out: &mut dyn Write, err: &mut dyn Write) -> i32 {
    let cli = match parse_with_config(&argv) {
        Ok(cli) => cli,
        Err(Parsed::Usage(e)) => {
            let code = e.exit_code();
            let rendered = e.render().to_string();
            // --help and --version are not errors and go to stdout.
            if code == 0 {
                let _ = out.write_all(rendered.as_bytes());
            } else {
                let _ = err.write_all(rendered.as_bytes());
            }
            return code;
        }
        Err(Parsed::Runtime(e)) => {
            let _ = writeln!(err, "error: {e}");
            return 1;
        }
    };
    match execute(cli, out) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            1
        }
    }
}

enum Parsed {
    Usage(clap::Error),
    Runtime(Error),
}

fn parse_with_config(argv: &[String]) -> std::result::Result<Cli, Parsed> {
    let cli = Cli::try_parse_from(argv).map_err(Parsed::Usage)?;
    let Some(path) = cli.config.clone() else {
        return Ok(cli);
    };
    let extra = config_file_args(&path).map_err(Parsed::Runtime)?;
    // Config values go right after the subcommand so that later command line
    // flags override them.
    let names: Vec<String> = Cli::command()
        .get_subcommands()
        .map(|c| c.get_name().to_string())
        .collect();
    let sub = argv
        .iter()
        .position(|a| names.contains(a))
        .expect("parsing succeeded, so a subcommand is present");
    let mut merged: Vec<String> = argv[..=sub].to_vec();
    merged.extend(extra);
    merged.extend_from_slice(&argv[sub + 1..]);
    Cli::try_parse_from(&merged).map_err(Parsed::Usage)
}

pub fn run_from_env() -> i32 {
    let argv: Vec<String> = std::env::args().collect();
    let stdout = std::io::stdout();
    let stderr = std::io::stderr();
    dispatch(argv, &mut stdout.lock(), &mut stderr.lock())
}
