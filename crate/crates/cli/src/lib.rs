//! Command-line driver for the finite-size scaling laboratory.
//!
//! Every subcommand builds a [`RunConfig`] from defaults, an optional config
//! file and flags (in increasing precedence), runs one computation and writes
//! a [`ResultRecord`] as JSON or CSV.

pub mod accept;
pub mod commands;
pub mod config;
pub mod record;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

pub use config::{Format, RunConfig};
pub use record::ResultRecord;

/// Errors surfaced by the driver, mapped to exit codes by [`exit_code`].
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// Bad flags, config or paths.
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Core(#[from] hierfss::Error),
}

/// Exit code for success.
pub const EXIT_OK: i32 = 0;
/// Exit code when an acceptance criterion fails.
pub const EXIT_FAIL: i32 = 1;
/// Exit code for domain and usage errors.
pub const EXIT_DOMAIN: i32 = 2;
/// Exit code for numerical failures.
pub const EXIT_NUMERICAL: i32 = 3;

/// Maps an error to its exit code.
pub fn exit_code(e: &CliError) -> i32 {
    match e {
        CliError::Usage(_) => EXIT_DOMAIN,
        CliError::Core(c) if c.is_domain() => EXIT_DOMAIN,
        CliError::Core(_) => EXIT_NUMERICAL,
    }
}

#[derive(Debug, Parser)]
#[command(name = "hierfss", version, about = "Finite-size scaling of the hierarchical |phi|^4 model")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    #[command(flatten)]
    pub flags: Flags,
}

#[derive(Debug, Args)]
pub struct Action {
    /// Operation within the subcommand.
    pub action: Option<String>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Profile functions f_n, Σ_n moments and universal ratios.
    Profiles(Action),
    /// Hierarchical lattice constants and free susceptibilities.
    Lattice(Action),
    /// Perturbative flow trajectory (`flow run`).
    Flow(Action),
    /// Critical and effective critical points (`critical find`).
    Critical(Action),
    /// Critical-window predictions (`window predict`).
    Window(Action),
    /// Exact radial RG (`exactrg run|observe|locate`).
    Exactrg(Action),
    /// Self-avoiding walk on the complete graph (`saw check`).
    Saw(Action),
    /// Weakly self-avoiding walk on the complete graph (`wsaw check`).
    Wsaw(Action),
    /// Acceptance suite.
    Accept(Action),
}

impl Command {
    fn parts(&self) -> (&'static str, Option<&str>) {
        let (name, a) = match self {
            Command::Profiles(a) => ("profiles", a),
            Command::Lattice(a) => ("lattice", a),
            Command::Flow(a) => ("flow", a),
            Command::Critical(a) => ("critical", a),
            Command::Window(a) => ("window", a),
            Command::Exactrg(a) => ("exactrg", a),
            Command::Saw(a) => ("saw", a),
            Command::Wsaw(a) => ("wsaw", a),
            Command::Accept(a) => ("accept", a),
        };
        (name, a.action.as_deref())
    }
}

/// Flags shared by all subcommands; each overrides the matching config key.
#[derive(Debug, Args)]
pub struct Flags {
    /// `key = value` config file with optional `[section]` headers.
    #[arg(long, global = true, visible_alias = "spec")]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub d: Option<usize>,
    #[arg(long, global = true, allow_hyphen_values = true)]
    pub n: Option<f64>,
    #[arg(long = "L", global = true)]
    pub l: Option<usize>,
    #[arg(long = "N", global = true)]
    pub big_n: Option<usize>,
    #[arg(long, global = true, allow_hyphen_values = true)]
    pub g: Option<f64>,
    #[arg(long, global = true, allow_hyphen_values = true)]
    pub nu: Option<f64>,
    #[arg(long, global = true, allow_hyphen_values = true)]
    pub s: Option<f64>,
    #[arg(long = "s-max", global = true, allow_hyphen_values = true)]
    pub s_max: Option<f64>,
    #[arg(long, global = true)]
    pub points: Option<usize>,
    #[arg(long, global = true, allow_hyphen_values = true)]
    pub a: Option<f64>,
    #[arg(long, global = true)]
    pub z: Option<f64>,
    /// Boundary condition: free or periodic.
    #[arg(long, global = true)]
    pub bc: Option<String>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true)]
    pub samples: Option<usize>,
    #[arg(long, global = true)]
    pub replicates: Option<usize>,
    #[arg(long, global = true)]
    pub tol: Option<f64>,
    #[arg(long, global = true)]
    pub jmax: Option<usize>,
    /// Comma-separated moment orders p of ⟨|Φ|^{2p}⟩.
    #[arg(long, global = true)]
    pub moments: Option<String>,
    #[arg(long = "nu-lo", global = true, allow_hyphen_values = true)]
    pub nu_lo: Option<f64>,
    #[arg(long = "nu-hi", global = true, allow_hyphen_values = true)]
    pub nu_hi: Option<f64>,
    #[arg(long, global = true)]
    pub step: Option<f64>,
    /// Checkpoint directory (`exactrg run`) or file (`exactrg observe`).
    #[arg(long, global = true)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    pub format: Option<Format>,
    /// Caps the number of worker threads.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Acceptance suite: all, profiles, lattice, pertflow, saw or exactrg.
    #[arg(long, global = true)]
    pub suite: Option<String>,
    /// Reduced Monte Carlo budget for the acceptance suite.
    #[arg(long, global = true)]
    pub quick: bool,
}

impl Flags {
    fn overrides(&self) -> Vec<(&'static str, String)> {
        let mut v: Vec<(&'static str, Option<String>)> = vec![
            ("d", self.d.map(|x| x.to_string())),
            ("n", self.n.map(|x| x.to_string())),
            ("L", self.l.map(|x| x.to_string())),
            ("N", self.big_n.map(|x| x.to_string())),
            ("g", self.g.map(|x| x.to_string())),
            ("nu", self.nu.map(|x| x.to_string())),
            ("s", self.s.map(|x| x.to_string())),
            ("s_max", self.s_max.map(|x| x.to_string())),
            ("points", self.points.map(|x| x.to_string())),
            ("a", self.a.map(|x| x.to_string())),
            ("z", self.z.map(|x| x.to_string())),
            ("bc", self.bc.clone()),
            ("seed", self.seed.map(|x| x.to_string())),
            ("samples", self.samples.map(|x| x.to_string())),
            ("replicates", self.replicates.map(|x| x.to_string())),
            ("tol", self.tol.map(|x| x.to_string())),
            ("jmax", self.jmax.map(|x| x.to_string())),
            ("moments", self.moments.clone()),
            ("nu_lo", self.nu_lo.map(|x| x.to_string())),
            ("nu_hi", self.nu_hi.map(|x| x.to_string())),
            ("step", self.step.map(|x| x.to_string())),
            ("checkpoint", self.checkpoint.as_ref().map(|p| p.display().to_string())),
            ("out", self.out.as_ref().map(|p| p.display().to_string())),
            ("threads", self.threads.map(|x| x.to_string())),
            ("suite", self.suite.clone()),
        ];
        if let Some(f) = self.format {
            v.push(("format", Some(if f == Format::Csv { "csv" } else { "json" }.into())));
        }
        if self.quick {
            v.push(("quick", Some("true".into())));
        }
        v.into_iter().filter_map(|(k, x)| x.map(|x| (k, x))).collect()
    }
}

/// Builds the effective configuration: defaults, then file, then flags.
pub fn resolve_config(cli: &Cli) -> Result<RunConfig, CliError> {
    let (name, action) = cli.command.parts();
    let mut cfg = RunConfig::default();
    if let Some(path) = &cli.flags.config {
        cfg.apply(&config::read_config_file(path, name)?)?;
    }
    for (k, v) in cli.flags.overrides() {
        cfg.set(k, &v)?;
    }
    cfg.command = name.to_string();
    if let Some(a) = action {
        cfg.action = Some(a.to_string());
    }
    Ok(cfg)
}

/// Parses `argv`, runs the subcommand and returns the exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_DOMAIN } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match resolve_config(&cli).and_then(|cfg| commands::execute(&cfg)) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
