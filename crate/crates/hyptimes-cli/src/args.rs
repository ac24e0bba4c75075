//! Command-line arguments. The run commands double as the serialized
//! invocation stored in run manifests.

use std::collections::BTreeMap;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

#[derive(Parser, Debug)]
#[command(name = "hyptimes", version, about = "Pliss times, hyperbolic times and trajectory classification")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    #[command(flatten)]
    Run(Invocation),
    /// Re-run the command recorded in a manifest
    Replay(ReplayArgs),
}

#[derive(Args, Debug)]
pub struct ReplayArgs {
    /// Path to a manifest.json written by a previous run
    pub manifest: PathBuf,
    /// Output directory (stdout when absent)
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Fail with exit code 3 unless output hashes match the manifest
    #[arg(long)]
    pub verify: bool,
}

/// Comma-separated reals, e.g. `0.5,-1,2e-3`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Floats(pub Vec<f64>);

pub fn parse_floats(s: &str) -> Result<Floats, String> {
    s.split(',')
        .map(|p| p.trim().parse::<f64>().map_err(|_| format!("'{}' is not a number", p.trim())))
        .collect::<Result<Vec<_>, _>>()
        .map(Floats)
}

fn parse_param(s: &str) -> Result<(String, f64), String> {
    let (k, v) = s.split_once('=').ok_or_else(|| format!("expected key=value, got '{s}'"))?;
    let v = v.trim().parse::<f64>().map_err(|_| format!("'{}' is not a number", v.trim()))?;
    Ok((k.trim().to_string(), v))
}

/// System selection shared by the dynamical commands.
#[derive(Args, Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemArgs {
    /// Built-in system name
    #[arg(long, conflicts_with = "config")]
    pub system: Option<String>,
    /// TOML or JSON system configuration file
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Parameter override, repeatable: --param kappa_stable=0.4
    #[arg(long = "param", value_parser = parse_param)]
    pub params: Vec<(String, f64)>,
}

impl SystemArgs {
    pub fn param_map(&self) -> BTreeMap<String, f64> {
        self.params.iter().cloned().collect()
    }
}

#[derive(Subcommand, Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "command", rename_all = "snake_case")]
pub enum Invocation {
    /// Integrate a flow or iterate a map; writes a trajectory CSV
    Simulate(SimulateArgs),
    /// Finite-horizon exponent series of the full derivative
    Exponents(ExponentsArgs),
    /// Linear Poincaré flow exponents and reverse hyperbolic times
    Lpf(LpfArgs),
    /// Pliss times of a sequence or Pliss set of a function of t
    Pliss(PlissArgs),
    /// Classify one initial condition or a grid of them
    Classify(ClassifyArgs),
    /// Section crossings and return-map contraction
    Section(SectionArgs),
}

impl Invocation {
    pub fn out(&self) -> Option<&PathBuf> {
        match self {
            Invocation::Simulate(a) => a.out.as_ref(),
            Invocation::Exponents(a) => a.out.as_ref(),
            Invocation::Lpf(a) => a.out.as_ref(),
            Invocation::Pliss(a) => a.out.as_ref(),
            Invocation::Classify(a) => a.out.as_ref(),
            Invocation::Section(a) => a.out.as_ref(),
        }
    }

    pub fn system(&self) -> Option<&SystemArgs> {
        match self {
            Invocation::Simulate(a) => Some(&a.system),
            Invocation::Exponents(a) => Some(&a.system),
            Invocation::Lpf(a) => Some(&a.system),
            Invocation::Pliss(_) => None,
            Invocation::Classify(a) => Some(&a.system),
            Invocation::Section(a) => Some(&a.system),
        }
    }
}

#[derive(Args, Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub system: SystemArgs,
    /// Initial condition
    #[arg(long, value_parser = parse_floats, allow_hyphen_values = true)]
    pub x0: Floats,
    /// Final time (flows) or iteration count (maps)
    #[arg(long = "T")]
    pub t_end: f64,
    #[arg(long, default_value_t = 1e-3)]
    pub dt: f64,
    /// Also integrate the variational equation and write Z row-major
    #[arg(long)]
    pub variational: bool,
    #[arg(long, default_value_t = 1)]
    pub record_every: usize,
    /// Output directory (CSV to stdout when absent)
    #[arg(long)]
    #[serde(skip)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExponentsArgs {
    #[command(flatten)]
    pub system: SystemArgs,
    #[arg(long, value_parser = parse_floats, allow_hyphen_values = true)]
    pub x0: Floats,
    #[arg(long = "T")]
    pub t_end: f64,
    #[arg(long, default_value_t = 1e-3)]
    pub dt: f64,
    /// Window T0,T1 (flows, times) or n0,n1 (maps, block counts)
    #[arg(long, value_parser = parse_floats)]
    pub window: Option<Floats>,
    /// Block length for maps
    #[arg(long, default_value_t = 1)]
    pub k: usize,
    /// Use inverse derivatives (maps)
    #[arg(long)]
    pub inverse: bool,
    #[arg(long, default_value_t = 0)]
    pub record_every: usize,
    #[arg(long)]
    #[serde(skip)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LpfArgs {
    #[command(flatten)]
    pub system: SystemArgs,
    #[arg(long, value_parser = parse_floats, allow_hyphen_values = true)]
    pub x0: Floats,
    #[arg(long = "T")]
    pub t_end: f64,
    #[arg(long, default_value_t = 1e-3)]
    pub dt: f64,
    #[arg(long, value_parser = parse_floats)]
    pub window: Option<Floats>,
    /// Detect reverse hyperbolic times at this rate
    #[arg(long)]
    pub zeta: Option<f64>,
    #[arg(long, default_value_t = 0)]
    pub record_every: usize,
    #[arg(long)]
    #[serde(skip)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlissArgs {
    /// Sequence a_1,…,a_N (discrete mode)
    #[arg(long, value_parser = parse_floats, allow_hyphen_values = true, conflicts_with = "function")]
    pub sequence: Option<Floats>,
    #[arg(long, allow_hyphen_values = true)]
    pub c1: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    pub c2: Option<f64>,
    /// Upper bound H on the sequence (defaults to its maximum)
    #[arg(long, allow_hyphen_values = true)]
    pub h: Option<f64>,
    /// Reverse selection (suffix sums)
    #[arg(long)]
    pub reverse: bool,
    /// Function of t with H(0) = 0 (continuous mode), e.g. "log(1+t)"
    #[arg(long)]
    pub function: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    pub c: Option<f64>,
    #[arg(long)]
    pub eps: Option<f64>,
    #[arg(long = "T", default_value_t = 10.0)]
    pub t_end: f64,
    #[arg(long, default_value_t = 1e-3)]
    pub step: f64,
    /// Lower slope A with H(s) − H(t) ≥ A(s − t); estimated when absent
    #[arg(long, allow_hyphen_values = true)]
    pub lower_slope: Option<f64>,
    #[arg(long)]
    #[serde(skip)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifyArgs {
    #[command(flatten)]
    pub system: SystemArgs,
    #[arg(long, value_parser = parse_floats, allow_hyphen_values = true, required_unless_present = "grid")]
    pub x0: Option<Floats>,
    /// Cell counts per coordinate, e.g. 20x20
    #[arg(long, conflicts_with = "x0")]
    pub grid: Option<String>,
    /// Grid box a:b,c:d (defaults to the system's sample box)
    #[arg(long = "box", allow_hyphen_values = true)]
    pub bounds: Option<String>,
    /// Flow time (flows) or iteration count (maps)
    #[arg(long)]
    pub horizon: Option<f64>,
    #[arg(long, default_value_t = 1e-3)]
    pub dt: f64,
    #[arg(long)]
    pub zeta: Option<f64>,
    #[arg(long, default_value_t = 1e-3)]
    pub threshold: f64,
    #[arg(long, default_value_t = 1e-2)]
    pub accumulation_radius: f64,
    #[arg(long, default_value_t = 50.0)]
    pub max_return_time: f64,
    #[arg(long, default_value_t = 0)]
    pub record_every: usize,
    /// Classify under the inverse map or reversed field and report sources
    #[arg(long)]
    pub source: bool,
    /// Exit with code 4 when any verdict is inconclusive
    #[arg(long)]
    pub strict: bool,
    #[arg(long)]
    #[serde(skip)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SectionArgs {
    #[command(flatten)]
    pub system: SystemArgs,
    #[arg(long, value_parser = parse_floats, allow_hyphen_values = true)]
    pub x0: Floats,
    #[arg(long = "T")]
    pub t_end: f64,
    #[arg(long, default_value_t = 1e-3)]
    pub dt: f64,
    /// Section center (defaults to x0)
    #[arg(long, value_parser = parse_floats, allow_hyphen_values = true)]
    pub center: Option<Floats>,
    #[arg(long, default_value_t = 0.1)]
    pub radius: f64,
    /// Probe offset along each disk axis (defaults to radius/2)
    #[arg(long)]
    pub probe: Option<f64>,
    #[arg(long, default_value_t = 50.0)]
    pub max_return_time: f64,
    #[arg(long)]
    #[serde(skip)]
    pub out: Option<PathBuf>,
}
