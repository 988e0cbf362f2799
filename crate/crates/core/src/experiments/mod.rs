//! Monte-Carlo experiments and analytic oracles.
//!
//! Every experiment runs its replications on independent streams
//! `RngStream::replication(seed, STREAM, rep)`, collects per-replication
//! outcomes in replication order and merges them sequentially, so results
//! do not depend on the number of worker threads.

mod cascade;
mod drain;
mod drift;
mod fluid;
mod holds;
mod oracles;
mod simulate;
mod tail;

use std::collections::BTreeMap;
use std::fmt::Display;

use rayon::prelude::*;
use serde::Serialize;

pub use cascade::{
    cascade_bound, cascade_experiment, CascadeBound, CascadeConfig, CascadeEventSpec, CascadeOutcome,
    CascadeStage,
};
pub use drain::{drain_experiment, DrainConfig};
pub use drift::{drift_estimate, DriftConfig};
pub use fluid::{fluid_experiment, fluid_scale, sup_deviation_q4, FluidConfig, ScaledTrajectory};
pub use holds::{hold_event_experiment, hold_oracle_sample, hold_policy_sample, HoldConfig};
pub use oracles::{
    mm1_emptying_oracle, mm1_emptying_time, poisson_ld_check, psi_check, LdConfig, Mm1Config, PsiConfig,
};
pub use simulate::{simulate, SimulateConfig};
pub use tail::{tail_occupation, SupRatio, TailConfig};

use crate::netmodel::build_ksrs;
use crate::policy::{PolicyParams, Regime};
use crate::rng::RngStream;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Base stream identifiers; each experiment draws from its own family.
pub(crate) mod streams {
    pub const SIMULATE: u64 = 0x01;
    pub const MM1: u64 = 0x11;
    pub const LD: u64 = 0x12;
    pub const FLUID: u64 = 0x21;
    pub const DRAIN: u64 = 0x22;
    pub const HOLD_POLICY: u64 = 0x31;
    pub const HOLD_ORACLE: u64 = 0x32;
    pub const CASCADE: u64 = 0x41;
    pub const TAIL: u64 = 0x51;
    pub const DRIFT: u64 = 0x61;
}

/// A CSV artifact kept in memory until the caller writes it.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new<S: Into<String>>(header: impl IntoIterator<Item = S>) -> Self {
        Self {
            header: header.into_iter().map(Into::into).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push<D: Display>(&mut self, row: impl IntoIterator<Item = D>) {
        self.rows.push(row.into_iter().map(|v| v.to_string()).collect());
    }

    /// Writes the table as CSV, preceded by `#`-prefixed comment lines.
    pub fn write_csv<W: std::io::Write>(&self, mut w: W, comments: &[String]) -> crate::Result<()> {
        for c in comments {
            writeln!(w, "# {c}")?;
        }
        let mut out = csv::Writer::from_writer(w);
        out.write_record(&self.header)?;
        for r in &self.rows {
            out.write_record(r)?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Outcome of one experiment. `runtime_secs` is kept out of the serialized
/// form so that `result.json` is reproducible byte for byte.
#[derive(Debug, Clone, Serialize)]
pub struct ExperimentResult {
    pub name: String,
    pub version: String,
    pub regime: Option<Regime>,
    pub params: Option<PolicyParams>,
    pub network: Option<serde_json::Value>,
    pub config: serde_json::Value,
    pub seed: u64,
    pub replications: u64,
    pub estimates: BTreeMap<String, f64>,
    pub stderr: BTreeMap<String, f64>,
    pub warnings: Vec<String>,
    pub artifacts: Vec<String>,
    #[serde(skip)]
    pub runtime_secs: f64,
    #[serde(skip)]
    pub tables: BTreeMap<String, Table>,
}

impl ExperimentResult {
    pub(crate) fn new(name: &str, params: Option<&PolicyParams>, config: &impl Serialize, seed: u64) -> Self {
        Self {
            name: name.to_string(),
            version: VERSION.to_string(),
            regime: params.map(PolicyParams::regime),
            params: params.copied(),
            network: params.map(|p| serde_json::to_value(build_ksrs(p)).expect("network spec serializes")),
            config: serde_json::to_value(config).expect("config serializes"),
            seed,
            replications: 0,
            estimates: BTreeMap::new(),
            stderr: BTreeMap::new(),
            warnings: Vec::new(),
            artifacts: Vec::new(),
            runtime_secs: 0.0,
            tables: BTreeMap::new(),
        }
    }

    pub(crate) fn estimate(&mut self, key: impl Into<String>, value: f64, stderr: f64) {
        let key = key.into();
        self.stderr.insert(key.clone(), stderr);
        self.estimates.insert(key, value);
    }

    /// An exact or derived quantity, reported without a standard error.
    pub(crate) fn exact(&mut self, key: impl Into<String>, value: f64) {
        self.estimates.insert(key.into(), value);
    }

    pub(crate) fn table(&mut self, file: &str, table: Table) {
        self.artifacts.push(file.to_string());
        self.tables.insert(file.to_string(), table);
    }

    pub(crate) fn warn(&mut self, msg: impl Into<String>) {
        let msg = msg.into();
        log::warn!("{}: {msg}", self.name);
        self.warnings.push(msg);
    }

    pub fn get(&self, key: &str) -> Option<f64> {
        self.estimates.get(key).copied()
    }

    pub fn se(&self, key: &str) -> Option<f64> {
        self.stderr.get(key).copied()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("result serializes")
    }
}

/// Runs `f(rep, rng)` for every replication in parallel and returns the
/// outcomes in replication order.
pub(crate) fn replicate<T, F>(seed: u64, stream: u64, reps: u64, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(u64, RngStream) -> T + Sync + Send,
{
    (0..reps)
        .into_par_iter()
        .map(|rep| f(rep, RngStream::replication(seed, stream, rep)))
        .collect()
}

/// Parallel replications that may fail; the first failure in replication
/// order is returned.
pub(crate) fn try_replicate<T, E, F>(seed: u64, stream: u64, reps: u64, f: F) -> Result<Vec<T>, E>
where
    T: Send,
    E: Send,
    F: Fn(u64, RngStream) -> Result<T, E> + Sync + Send,
{
    replicate(seed, stream, reps, f).into_iter().collect()
}

/// Format for float keys such as `x4=10` or `kappa=1000`.
pub(crate) fn key(prefix: &str, name: &str, v: impl Display) -> String {
    format!("{prefix}[{name}={v}]")
}

pub(crate) fn regime_warning(result: &mut ExperimentResult, params: &PolicyParams) {
    if params.regime() == Regime::Exploratory {
        result.warn(format!(
            "exploratory regime at delta={}: hold counts have infinite second moment (hold exponent {:.4})",
            params.delta,
            params.hold_exponent()
        ));
    }
}

/// Stream identifier for member `index` of a stream family.
pub(crate) fn rng_family(base: u64, index: u64) -> u64 {
    crate::rng::mix(base, index)
}
