use std::path::PathBuf;

use clap::{ArgAction, Args, Parser, Subcommand};
use ksrs::experiments::{
    CascadeConfig, CascadeStage, DrainConfig, DriftConfig, FluidConfig, HoldConfig, LdConfig, Mm1Config,
    PsiConfig, SimulateConfig, TailConfig,
};
use ksrs::QState;

#[derive(Debug, Parser)]
#[command(name = "ksrs", version, args_override_self = true, about = "Simulation and experiments for the KSRS network under the randomized hold policy")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args, Clone)]
pub struct Common {
    /// Directory under which `<run-name>/` is created.
    #[arg(long, global = true, default_value = "runs")]
    pub output_dir: PathBuf,
    /// Defaults to the subcommand name.
    #[arg(long, global = true)]
    pub run_name: Option<String>,
    /// Worker threads; defaults to the machine parallelism.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// JSON file whose fields mirror the flags; flags take precedence.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Derived policy constants for one delta.
    Params(ParamsArgs),
    /// Table of psi(k) with the telescoping check.
    Psi(PsiArgs),
    /// One recorded run of the network.
    Simulate(SimulateArgs),
    /// M/M/1 emptying-time oracle.
    Mm1(Mm1Args),
    /// Poisson large-deviation check.
    Ld(LdArgs),
    /// Draining from (0,0,0,n).
    Drain(DrainArgs),
    /// Hold event: policy path against the independent oracle.
    Holds(HoldsArgs),
    /// Cascade event probabilities.
    Cascade(CascadeArgs),
    /// Long-run occupation tail from regeneration cycles.
    Tail(TailArgs),
    /// Lyapunov function and drift estimates.
    Drift(DriftArgs),
    /// Fluid-scaled trajectories.
    Fluid(FluidArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Params(_) => "params",
            Command::Psi(_) => "psi",
            Command::Simulate(_) => "simulate",
            Command::Mm1(_) => "mm1",
            Command::Ld(_) => "ld",
            Command::Drain(_) => "drain",
            Command::Holds(_) => "holds",
            Command::Cascade(_) => "cascade",
            Command::Tail(_) => "tail",
            Command::Drift(_) => "drift",
            Command::Fluid(_) => "fluid",
        }
    }

    pub fn common(&self) -> &Common {
        match self {
            Command::Params(a) => &a.common,
            Command::Psi(a) => &a.common,
            Command::Simulate(a) => &a.common,
            Command::Mm1(a) => &a.common,
            Command::Ld(a) => &a.common,
            Command::Drain(a) => &a.common,
            Command::Holds(a) => &a.common,
            Command::Cascade(a) => &a.common,
            Command::Tail(a) => &a.common,
            Command::Drift(a) => &a.common,
            Command::Fluid(a) => &a.common,
        }
    }
}

fn parse_state(s: &str) -> Result<QState, String> {
    s.parse().map_err(|e: ksrs::Error| e.to_string())
}

fn parse_fluid(s: &str) -> Result<[f64; 4], String> {
    let v: Vec<f64> = s
        .trim_matches(|c| c == '(' || c == ')')
        .split(',')
        .map(|p| p.trim().parse::<f64>().map_err(|e| format!("{p:?}: {e}")))
        .collect::<Result<_, _>>()?;
    v.try_into().map_err(|_| format!("fluid state needs 4 components, got {s:?}"))
}

fn parse_stage(s: &str) -> Result<CascadeStage, String> {
    match s.to_ascii_lowercase().replace(['_', '-'], "").as_str() {
        "e4e1" => Ok(CascadeStage::E4E1),
        "full" => Ok(CascadeStage::Full),
        _ => Err(format!("unknown stage {s:?}; expected e4e1 or full")),
    }
}

/// Overwrites fields of `$cfg` with the flags that were given.
macro_rules! apply {
    ($cfg:ident, $args:ident, $($field:ident),*) => {
        $(if let Some(v) = $args.$field.clone() { $cfg.$field = v; })*
    };
}

#[derive(Debug, Args)]
pub struct ParamsArgs {
    #[arg(long)]
    pub delta: f64,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Args)]
pub struct PsiArgs {
    #[arg(long)]
    pub delta: Option<f64>,
    #[arg(long)]
    pub k_max: Option<u64>,
    #[command(flatten)]
    pub common: Common,
}

impl PsiArgs {
    pub fn config(&self) -> PsiConfig {
        let mut c = PsiConfig::default();
        apply!(c, self, delta, k_max);
        c
    }
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long)]
    pub delta: Option<f64>,
    #[arg(long, value_parser = parse_state)]
    pub init: Option<QState>,
    #[arg(long)]
    pub horizon: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Regeneration cycles through (0,0,0,1) to record after the horizon.
    #[arg(long)]
    pub cycles: Option<u64>,
    #[arg(long)]
    pub event_cap: Option<u64>,
    #[arg(long)]
    pub full_limit: Option<usize>,
    #[arg(long)]
    pub grid_points: Option<usize>,
    #[command(flatten)]
    pub common: Common,
}

impl SimulateArgs {
    pub fn config(&self) -> SimulateConfig {
        let mut c = SimulateConfig::default();
        apply!(c, self, delta, init, horizon, seed, cycles, event_cap, full_limit, grid_points);
        c
    }
}

#[derive(Debug, Args)]
pub struct Mm1Args {
    #[arg(long)]
    pub n: Option<u64>,
    #[arg(long)]
    pub mu: Option<f64>,
    #[arg(long)]
    pub reps: Option<u64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub epsilon: Option<f64>,
    #[command(flatten)]
    pub common: Common,
}

impl Mm1Args {
    pub fn config(&self) -> Mm1Config {
        let mut c = Mm1Config::default();
        apply!(c, self, n, mu, reps, seed, epsilon);
        c
    }
}

#[derive(Debug, Args)]
pub struct LdArgs {
    #[arg(long)]
    pub nu: Option<f64>,
    #[arg(long, value_delimiter = ',', action = ArgAction::Set, num_args = 1)]
    pub t_list: Option<Vec<f64>>,
    #[arg(long)]
    pub epsilon: Option<f64>,
    #[arg(long)]
    pub reps: Option<u64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[command(flatten)]
    pub common: Common,
}

impl LdArgs {
    pub fn config(&self) -> LdConfig {
        let mut c = LdConfig::default();
        apply!(c, self, nu, t_list, epsilon, reps, seed);
        c
    }
}

#[derive(Debug, Args)]
pub struct DrainArgs {
    #[arg(long)]
    pub delta: Option<f64>,
    #[arg(long)]
    pub n: Option<u64>,
    #[arg(long, value_delimiter = ',', action = ArgAction::Set, num_args = 1)]
    pub epsilons: Option<Vec<f64>>,
    #[arg(long)]
    pub reps: Option<u64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub horizon_mult: Option<f64>,
    #[command(flatten)]
    pub common: Common,
}

impl DrainArgs {
    pub fn config(&self) -> DrainConfig {
        let mut c = DrainConfig::default();
        apply!(c, self, delta, n, epsilons, reps, seed, horizon_mult);
        c
    }
}

#[derive(Debug, Args)]
pub struct HoldsArgs {
    #[arg(long)]
    pub delta: Option<f64>,
    #[arg(long, value_delimiter = ',', action = ArgAction::Set, num_args = 1)]
    pub x4_list: Option<Vec<u64>>,
    #[arg(long)]
    pub reps: Option<u64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[command(flatten)]
    pub common: Common,
}

impl HoldsArgs {
    pub fn config(&self) -> HoldConfig {
        let mut c = HoldConfig::default();
        apply!(c, self, delta, x4_list, reps, seed);
        c
    }
}

#[derive(Debug, Args)]
pub struct CascadeArgs {
    #[arg(long)]
    pub delta: Option<f64>,
    #[arg(long)]
    pub x4: Option<u64>,
    #[arg(long)]
    pub epsilon: Option<f64>,
    #[arg(long)]
    pub reps: Option<u64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// e4e1 or full.
    #[arg(long, value_parser = parse_stage)]
    pub stage: Option<CascadeStage>,
    /// Detect emptiness patterns only, without windows or early stopping.
    #[arg(long, num_args = 0..=1, default_missing_value = "true", action = ArgAction::Set)]
    pub state_only: Option<bool>,
    /// Start here instead of (0,0,0,x4).
    #[arg(long, value_parser = parse_state)]
    pub start: Option<QState>,
    #[command(flatten)]
    pub common: Common,
}

impl CascadeArgs {
    pub fn config(&self) -> CascadeConfig {
        let mut c = CascadeConfig::default();
        apply!(c, self, delta, x4, epsilon, reps, seed, stage, state_only);
        if self.start.is_some() {
            c.start = self.start;
        }
        c
    }
}

#[derive(Debug, Args)]
pub struct TailArgs {
    #[arg(long)]
    pub delta: Option<f64>,
    #[arg(long)]
    pub total_events: Option<u64>,
    #[arg(long)]
    pub burn_in: Option<u64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub ratio_per_octave: Option<u32>,
    #[command(flatten)]
    pub common: Common,
}

impl TailArgs {
    pub fn config(&self) -> TailConfig {
        let mut c = TailConfig::default();
        apply!(c, self, delta, total_events, burn_in, seed, ratio_per_octave);
        c
    }
}

#[derive(Debug, Args)]
pub struct DriftArgs {
    #[arg(long)]
    pub delta: Option<f64>,
    #[arg(long)]
    pub p: Option<u32>,
    /// Embedded steps per unit of norm; defaults to 4*gamma4.
    #[arg(long)]
    pub t_mult: Option<f64>,
    /// States separated by ';', e.g. "0,0,0,5;0,0,0,10".
    #[arg(long, value_delimiter = ';', action = ArgAction::Set, num_args = 1, value_parser = parse_state)]
    pub states: Option<Vec<QState>>,
    #[arg(long)]
    pub inner_reps: Option<u64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[command(flatten)]
    pub common: Common,
}

impl DriftArgs {
    pub fn config(&self) -> DriftConfig {
        let mut c = DriftConfig::default();
        apply!(c, self, delta, p, states, inner_reps, seed);
        if self.t_mult.is_some() {
            c.t_mult = self.t_mult;
        }
        c
    }
}

#[derive(Debug, Args)]
pub struct FluidArgs {
    #[arg(long)]
    pub delta: Option<f64>,
    /// Fluid initial state, e.g. "0,0,0,1".
    #[arg(long, value_parser = parse_fluid)]
    pub x: Option<[f64; 4]>,
    #[arg(long, value_delimiter = ',', action = ArgAction::Set, num_args = 1)]
    pub kappas: Option<Vec<f64>>,
    #[arg(long)]
    pub reps: Option<u64>,
    #[arg(long)]
    pub t_max: Option<f64>,
    #[arg(long)]
    pub grid_points: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[command(flatten)]
    pub common: Common,
}

impl FluidArgs {
    pub fn config(&self) -> FluidConfig {
        let mut c = FluidConfig::default();
        apply!(c, self, delta, x, kappas, reps, t_max, grid_points, seed);
        c
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(argv: &[&str]) -> Cli {
        Cli::try_parse_from(argv).unwrap()
    }

    #[test]
    fn later_list_flag_replaces_earlier() {
        let cli = parse(&["ksrs", "holds", "--x4-list", "1,2", "--x4-list", "5"]);
        let Command::Holds(a) = cli.command else { panic!() };
        assert_eq!(a.config().x4_list, vec![5]);
    }

    #[test]
    fn later_scalar_flag_replaces_earlier() {
        let cli = parse(&["ksrs", "holds", "--reps", "10", "--reps", "20"]);
        let Command::Holds(a) = cli.command else { panic!() };
        assert_eq!(a.config().reps, 20);
    }

    #[test]
    fn drift_states_split_on_semicolon() {
        let cli = parse(&["ksrs", "drift", "--states", "0,0,0,5;0,0,0,10"]);
        let Command::Drift(a) = cli.command else { panic!() };
        assert_eq!(a.config().states, vec![QState::new(0, 0, 0, 5), QState::new(0, 0, 0, 10)]);
    }

    #[test]
    fn bool_flag_forms() {
        for (argv, want) in [
            (vec!["ksrs", "cascade", "--state-only"], true),
            (vec!["ksrs", "cascade", "--state-only", "false"], false),
            (vec!["ksrs", "cascade"], false),
        ] {
            let Command::Cascade(a) = parse(&argv).command else { panic!() };
            assert_eq!(a.config().state_only, want);
        }
    }

    #[test]
    fn stage_names() {
        assert_eq!(parse_stage("full"), Ok(CascadeStage::Full));
        assert_eq!(parse_stage("E4_E1"), Ok(CascadeStage::E4E1));
        assert!(parse_stage("half").is_err());
    }
}
