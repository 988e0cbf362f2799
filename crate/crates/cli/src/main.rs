mod args;
mod config;
mod output;

use std::ffi::OsString;
use std::process::ExitCode;
use std::time::Instant;

use args::{Cli, Command};
use clap::Parser;
use ksrs::experiments::{self, ExperimentResult};

const EXIT_VALIDATION: u8 = 2;
const EXIT_CAP: u8 = 3;
const EXIT_OTHER: u8 = 1;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("KSRS_LOG", "warn"))
        .format_timestamp(None)
        .init();
    let argv: Vec<OsString> = std::env::args_os().collect();
    let cli = match parse(argv) {
        Ok(cli) => cli,
        Err(code) => return ExitCode::from(code),
    };
    if let Some(n) = cli.command.common().threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: cannot set up {n} worker threads: {e}");
            return ExitCode::from(EXIT_VALIDATION);
        }
    }
    match run(&cli.command) {
        Ok(line) => {
            println!("{line}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            if let ksrs::Error::CapExceeded(cap) = &e {
                for rec in &cap.recent {
                    eprintln!("  t={} {} -> {}", rec.t, rec.kind, rec.state_after);
                }
            }
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &ksrs::Error) -> u8 {
    match e {
        ksrs::Error::Domain(_) | ksrs::Error::Range(_) | ksrs::Error::UnsupportedTopology(_) => EXIT_VALIDATION,
        ksrs::Error::CapExceeded(_) => EXIT_CAP,
        _ => EXIT_OTHER,
    }
}

/// Parses argv, splicing in the fields of `--config` ahead of the explicit
/// flags so that the flags win.
fn parse(argv: Vec<OsString>) -> Result<Cli, u8> {
    let clap_exit = |e: clap::Error| {
        let _ = e.print();
        e.exit_code() as u8
    };
    let cli = Cli::try_parse_from(&argv).map_err(clap_exit)?;
    let Some(path) = cli.command.common().config.clone() else {
        return Ok(cli);
    };
    let name = cli.command.name();
    let injected = match config::flags_from_file(&path, name) {
        Ok(v) => v,
        Err(msg) => {
            eprintln!("error: config {}: {msg}", path.display());
            return Err(EXIT_VALIDATION);
        }
    };
    let pos = argv
        .iter()
        .position(|a| a.to_str() == Some(name))
        .expect("subcommand present in argv");
    let mut spliced = argv[..=pos].to_vec();
    spliced.extend(injected.into_iter().map(OsString::from));
    spliced.extend_from_slice(&argv[pos + 1..]);
    log::debug!("effective argv: {spliced:?}");
    Cli::try_parse_from(&spliced).map_err(clap_exit)
}

fn run(cmd: &Command) -> ksrs::Result<String> {
    let name = cmd.name();
    let common = cmd.common();
    let out = output::RunDir::new(common, name);
    log::info!("{name}: writing to {}", out.path().display());
    let start = Instant::now();

    let mut result: ExperimentResult = match cmd {
        Command::Params(a) => {
            let params = ksrs::derive_params(a.delta)?;
            let cfg = serde_json::json!({ "delta": a.delta });
            out.create()?;
            out.write_config(name, &cfg)?;
            let line = serde_json::json!({
                "params": params,
                "regime": params.regime(),
                "hold_exponent": params.hold_exponent(),
            });
            out.write_json("params.json", &line)?;
            return Ok(serde_json::to_string(&line)?);
        }
        Command::Psi(a) => {
            let cfg = a.config();
            out.prepare(name, &cfg)?;
            experiments::psi_check(&cfg)?
        }
        Command::Simulate(a) => {
            let cfg = a.config();
            out.prepare(name, &cfg)?;
            let (mut res, traj) = experiments::simulate(&cfg)?;
            out.write_trajectory("trajectory.csv", &traj)?;
            res.artifacts.insert(0, "trajectory.csv".into());
            res
        }
        Command::Mm1(a) => {
            let cfg = a.config();
            out.prepare(name, &cfg)?;
            experiments::mm1_emptying_oracle(&cfg)?
        }
        Command::Ld(a) => {
            let cfg = a.config();
            out.prepare(name, &cfg)?;
            experiments::poisson_ld_check(&cfg)?
        }
        Command::Drain(a) => {
            let cfg = a.config();
            out.prepare(name, &cfg)?;
            experiments::drain_experiment(&cfg)?
        }
        Command::Holds(a) => {
            let cfg = a.config();
            out.prepare(name, &cfg)?;
            experiments::hold_event_experiment(&cfg)?
        }
        Command::Cascade(a) => {
            let cfg = a.config();
            out.prepare(name, &cfg)?;
            experiments::cascade_experiment(&cfg)?
        }
        Command::Tail(a) => {
            let cfg = a.config();
            out.prepare(name, &cfg)?;
            experiments::tail_occupation(&cfg)?
        }
        Command::Drift(a) => {
            let cfg = a.config();
            out.prepare(name, &cfg)?;
            experiments::drift_estimate(&cfg)?
        }
        Command::Fluid(a) => {
            let cfg = a.config();
            out.prepare(name, &cfg)?;
            experiments::fluid_experiment(&cfg)?
        }
    };
    result.runtime_secs = start.elapsed().as_secs_f64();
    log::info!("{name}: finished in {:.2}s", result.runtime_secs);
    out.write_result(&result)?;
    Ok(output::summary_line(&result, out.path()))
}
