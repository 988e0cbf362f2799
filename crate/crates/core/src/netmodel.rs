//! Network description: rates, constituency and routing, plus the KSRS
//! instance used everywhere else in the crate.
//!
//! Buffers are 1-based in everything a user sees (JSON, CSV, `Display`)
//! and 0-based internally.

use std::fmt;
use std::str::FromStr;

use serde::de::{self, Deserializer, Visitor};
use serde::{Deserialize, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::policy::PolicyParams;

/// Service rate of one class. Infinite rates drain a buffer instantly.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ServiceRate {
    Finite(f64),
    Infinite,
}

impl ServiceRate {
    pub fn is_finite(&self) -> bool {
        matches!(self, ServiceRate::Finite(_))
    }

    /// Mean service time; zero for an infinite rate.
    pub fn mean_service_time(&self) -> f64 {
        match *self {
            ServiceRate::Finite(r) => 1.0 / r,
            ServiceRate::Infinite => 0.0,
        }
    }

    pub fn finite(&self) -> Option<f64> {
        match *self {
            ServiceRate::Finite(r) => Some(r),
            ServiceRate::Infinite => None,
        }
    }
}

impl Serialize for ServiceRate {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match *self {
            ServiceRate::Finite(r) => s.serialize_f64(r),
            ServiceRate::Infinite => s.serialize_str("inf"),
        }
    }
}

impl<'de> Deserialize<'de> for ServiceRate {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        struct RateVisitor;

        impl Visitor<'_> for RateVisitor {
            type Value = ServiceRate;

            fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
                f.write_str("a positive number or the string \"inf\"")
            }

            fn visit_f64<E: de::Error>(self, v: f64) -> std::result::Result<ServiceRate, E> {
                if v > 0.0 && v.is_finite() {
                    Ok(ServiceRate::Finite(v))
                } else {
                    Err(E::custom(format!("service rate must be positive, got {v}")))
                }
            }

            fn visit_u64<E: de::Error>(self, v: u64) -> std::result::Result<ServiceRate, E> {
                self.visit_f64(v as f64)
            }

            fn visit_i64<E: de::Error>(self, v: i64) -> std::result::Result<ServiceRate, E> {
                self.visit_f64(v as f64)
            }

            fn visit_str<E: de::Error>(self, v: &str) -> std::result::Result<ServiceRate, E> {
                match v {
                    "inf" => Ok(ServiceRate::Infinite),
                    other => Err(E::custom(format!("unknown rate sentinel {other:?}"))),
                }
            }
        }

        d.deserialize_any(RateVisitor)
    }
}

/// The `(λ, μ, C, R)` description of an open multiclass network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkSpec {
    #[serde(rename = "lambda")]
    pub arrival_rates: Vec<f64>,
    #[serde(rename = "mu")]
    pub service_rates: Vec<ServiceRate>,
    /// Server-by-class 0/1 matrix.
    #[serde(rename = "C")]
    pub constituency: Vec<Vec<u8>>,
    /// Class-by-class 0/1 matrix; `routing[i][j] = 1` sends class `i` to `j`.
    #[serde(rename = "R")]
    pub routing: Vec<Vec<u8>>,
}

impl NetworkSpec {
    pub fn n_classes(&self) -> usize {
        self.arrival_rates.len()
    }

    pub fn n_servers(&self) -> usize {
        self.constituency.len()
    }

    /// Classes whose routing row is all zero.
    pub fn exit_buffers(&self) -> Vec<usize> {
        self.routing
            .iter()
            .enumerate()
            .filter(|(_, row)| row.iter().all(|&v| v == 0))
            .map(|(i, _)| i)
            .collect()
    }

    /// True when the topology and rate pattern is the KSRS network:
    /// arrivals only at buffers 1 and 3, infinite rates at 1 and 3, finite
    /// rates at 2 and 4, routes 1→2 and 3→4, server 1 = {1,4}, server 2 = {2,3}.
    pub fn is_ksrs(&self) -> bool {
        self.n_classes() == 4
            && self.constituency == ksrs_constituency()
            && self.routing == ksrs_routing()
            && self.arrival_rates[1] == 0.0
            && self.arrival_rates[3] == 0.0
            && self.arrival_rates[0] > 0.0
            && self.arrival_rates[2] > 0.0
            && self.service_rates[0] == ServiceRate::Infinite
            && self.service_rates[2] == ServiceRate::Infinite
            && self.service_rates[1].is_finite()
            && self.service_rates[3].is_finite()
    }

    pub(crate) fn require_ksrs(&self) -> Result<()> {
        if self.is_ksrs() {
            Ok(())
        } else {
            Err(Error::UnsupportedTopology(
                "only the four-buffer KSRS network is supported".into(),
            ))
        }
    }
}

fn ksrs_constituency() -> Vec<Vec<u8>> {
    vec![vec![1, 0, 0, 1], vec![0, 1, 1, 0]]
}

fn ksrs_routing() -> Vec<Vec<u8>> {
    vec![
        vec![0, 1, 0, 0],
        vec![0, 0, 0, 0],
        vec![0, 0, 0, 1],
        vec![0, 0, 0, 0],
    ]
}

/// The symmetric KSRS network with unit arrival rates at buffers 1 and 3.
pub fn build_ksrs(params: &PolicyParams) -> NetworkSpec {
    NetworkSpec {
        arrival_rates: vec![1.0, 0.0, 1.0, 0.0],
        service_rates: vec![
            ServiceRate::Infinite,
            ServiceRate::Finite(params.mu),
            ServiceRate::Infinite,
            ServiceRate::Finite(params.mu),
        ],
        constituency: ksrs_constituency(),
        routing: ksrs_routing(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Violation {
    DimensionMismatch { what: String },
    NegativeArrivalRate { class: usize },
    NonPositiveServiceRate { class: usize },
    ClassUnassigned { class: usize },
    ClassMultiplyAssigned { class: usize },
    NonBinaryEntry { matrix: &'static str },
    MultipleSuccessors { class: usize },
    NotOpen,
    InfiniteExitRate { class: usize },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::DimensionMismatch { what } => write!(f, "dimension mismatch: {what}"),
            Violation::NegativeArrivalRate { class } => {
                write!(f, "arrival rate of class {class} is negative")
            }
            Violation::NonPositiveServiceRate { class } => {
                write!(f, "service rate of class {class} is not positive")
            }
            Violation::ClassUnassigned { class } => {
                write!(f, "class {class} is not assigned to any server")
            }
            Violation::ClassMultiplyAssigned { class } => {
                write!(f, "class multiply assigned: class {class}")
            }
            Violation::NonBinaryEntry { matrix } => write!(f, "matrix {matrix} is not 0/1"),
            Violation::MultipleSuccessors { class } => {
                write!(f, "class {class} routes to more than one buffer")
            }
            Violation::NotOpen => write!(f, "routing matrix is not nilpotent (network not open)"),
            Violation::InfiniteExitRate { class } => {
                write!(f, "exit buffer must have finite rate: class {class}")
            }
        }
    }
}

/// Violated invariants of a [`NetworkSpec`]; empty means valid.
/// Class indices in violations are 1-based.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }
}

pub fn validate_network(spec: &NetworkSpec) -> ValidationReport {
    let mut v = Vec::new();
    let n = spec.n_classes();

    if spec.service_rates.len() != n {
        v.push(Violation::DimensionMismatch {
            what: format!("{} service rates for {n} classes", spec.service_rates.len()),
        });
    }
    if spec.routing.len() != n || spec.routing.iter().any(|r| r.len() != n) {
        v.push(Violation::DimensionMismatch {
            what: format!("routing matrix is not {n}x{n}"),
        });
    }
    if spec.constituency.iter().any(|r| r.len() != n) {
        v.push(Violation::DimensionMismatch {
            what: format!("constituency rows must have {n} columns"),
        });
    }
    if !v.is_empty() {
        return ValidationReport { violations: v };
    }

    for (i, &l) in spec.arrival_rates.iter().enumerate() {
        if !(l >= 0.0) {
            v.push(Violation::NegativeArrivalRate { class: i + 1 });
        }
    }
    for (i, r) in spec.service_rates.iter().enumerate() {
        if let ServiceRate::Finite(r) = *r {
            if !(r > 0.0) {
                v.push(Violation::NonPositiveServiceRate { class: i + 1 });
            }
        }
    }

    if spec.constituency.iter().flatten().any(|&x| x > 1) {
        v.push(Violation::NonBinaryEntry { matrix: "C" });
    }
    if spec.routing.iter().flatten().any(|&x| x > 1) {
        v.push(Violation::NonBinaryEntry { matrix: "R" });
    }

    for class in 0..n {
        let servers = spec.constituency.iter().filter(|row| row[class] == 1).count();
        match servers {
            0 => v.push(Violation::ClassUnassigned { class: class + 1 }),
            1 => {}
            _ => v.push(Violation::ClassMultiplyAssigned { class: class + 1 }),
        }
    }

    for (i, row) in spec.routing.iter().enumerate() {
        if row.iter().filter(|&&x| x != 0).count() > 1 {
            v.push(Violation::MultipleSuccessors { class: i + 1 });
        }
    }

    if !is_nilpotent(&spec.routing) {
        v.push(Violation::NotOpen);
    }

    for i in spec.exit_buffers() {
        if !spec.service_rates[i].is_finite() {
            v.push(Violation::InfiniteExitRate { class: i + 1 });
        }
    }

    ValidationReport { violations: v }
}

/// Boolean check that `R^N = 0`.
fn is_nilpotent(r: &[Vec<u8>]) -> bool {
    let n = r.len();
    let mut power: Vec<Vec<bool>> = r
        .iter()
        .map(|row| row.iter().map(|&x| x != 0).collect())
        .collect();
    for _ in 1..n {
        let mut next = vec![vec![false; n]; n];
        for i in 0..n {
            for k in 0..n {
                if power[i][k] {
                    for j in 0..n {
                        next[i][j] |= r[k][j] != 0;
                    }
                }
            }
        }
        power = next;
    }
    power.iter().flatten().all(|&x| !x)
}

/// Per-server loads `(ρ₁, ρ₂)`. Infinite-rate classes add no load.
pub fn traffic_intensities(spec: &NetworkSpec) -> Result<(f64, f64)> {
    spec.require_ksrs()?;
    // Effective inflow per class: external arrivals plus routed upstream flow.
    let n = spec.n_classes();
    let mut inflow = spec.arrival_rates.clone();
    for _ in 0..n {
        let mut next = spec.arrival_rates.clone();
        for i in 0..n {
            for j in 0..n {
                if spec.routing[i][j] != 0 {
                    next[j] += inflow[i];
                }
            }
        }
        inflow = next;
    }
    let load = |server: usize| -> f64 {
        (0..n)
            .filter(|&c| spec.constituency[server][c] == 1)
            .map(|c| inflow[c] * spec.service_rates[c].mean_service_time())
            .sum()
    };
    Ok((load(0), load(1)))
}

/// Queue-length vector of the four KSRS buffers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct QState(pub [u64; 4]);

impl QState {
    /// The regeneration atom `(0,0,0,1)`.
    pub const ATOM: QState = QState([0, 0, 0, 1]);
    pub const EMPTY: QState = QState([0, 0, 0, 0]);

    pub fn new(q1: u64, q2: u64, q3: u64, q4: u64) -> Self {
        QState([q1, q2, q3, q4])
    }

    /// Content of buffer `b`, 1-based.
    pub fn buffer(&self, b: usize) -> u64 {
        self.0[b - 1]
    }

    pub fn norm(&self) -> u64 {
        self.0.iter().sum()
    }

    /// `q₁>0 ⇒ (q₄>0 ∧ q₂=0)` and `q₃>0 ⇒ (q₂>0 ∧ q₄=0)`.
    pub fn is_stable(&self) -> bool {
        let [q1, q2, q3, q4] = self.0;
        (q1 == 0 || (q4 > 0 && q2 == 0)) && (q3 == 0 || (q2 > 0 && q4 == 0))
    }
}

impl fmt::Display for QState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let [a, b, c, d] = self.0;
        write!(f, "({a},{b},{c},{d})")
    }
}

impl FromStr for QState {
    type Err = Error;

    /// Parses `"q1,q2,q3,q4"`, with or without surrounding parentheses.
    fn from_str(s: &str) -> Result<Self> {
        let trimmed = s.trim().trim_start_matches('(').trim_end_matches(')');
        let parts: Vec<&str> = trimmed.split(',').map(str::trim).collect();
        if parts.len() != 4 {
            return Err(Error::domain(format!("state needs 4 components, got {s:?}")));
        }
        let mut q = [0u64; 4];
        for (slot, p) in q.iter_mut().zip(parts) {
            *slot = p
                .parse()
                .map_err(|_| Error::domain(format!("bad queue length {p:?} in {s:?}")))?;
        }
        Ok(QState(q))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::derive_params;

    fn ksrs(delta: f64) -> NetworkSpec {
        build_ksrs(&derive_params(delta).unwrap())
    }

    #[test]
    fn ksrs_rates_and_exits() {
        let spec = ksrs(0.1);
        assert_eq!(spec.service_rates[1], ServiceRate::Finite(1.1));
        assert_eq!(spec.service_rates[3], ServiceRate::Finite(1.1));
        assert_eq!(spec.exit_buffers(), vec![1, 3]);
        assert!(spec.is_ksrs());
    }

    #[test]
    fn constituency_columns_sum_to_one() {
        let spec = ksrs(0.2);
        for c in 0..4 {
            let s: u8 = spec.constituency.iter().map(|row| row[c]).sum();
            assert_eq!(s, 1);
        }
    }

    #[test]
    fn routing_is_nilpotent() {
        let spec = ksrs(0.2);
        assert!(is_nilpotent(&spec.routing));
        assert!(!is_nilpotent(&[vec![0, 1], vec![1, 0]]));
    }

    #[test]
    fn ksrs_is_valid() {
        assert!(validate_network(&ksrs(0.1)).is_valid());
    }

    #[test]
    fn infinite_exit_rate_flagged() {
        let mut spec = ksrs(0.1);
        spec.service_rates[3] = ServiceRate::Infinite;
        let report = validate_network(&spec);
        assert!(report
            .violations
            .contains(&Violation::InfiniteExitRate { class: 4 }));
        assert!(report.violations[0]
            .to_string()
            .starts_with("exit buffer must have finite rate"));
    }

    #[test]
    fn multiply_assigned_class_flagged() {
        let mut spec = ksrs(0.1);
        spec.constituency[1][0] = 1;
        let report = validate_network(&spec);
        assert_eq!(
            report.violations,
            vec![Violation::ClassMultiplyAssigned { class: 1 }]
        );
        assert!(report.violations[0]
            .to_string()
            .starts_with("class multiply assigned"));
    }

    #[test]
    fn loads_are_reciprocal_rates() {
        let (r1, r2) = traffic_intensities(&ksrs(0.1)).unwrap();
        assert!((r1 - 1.0 / 1.1).abs() < 1e-15);
        assert!((r2 - 0.909_090_909_090_909_1).abs() < 1e-15);

        let mut spec = ksrs(0.1);
        spec.service_rates[1] = ServiceRate::Finite(2.0);
        spec.service_rates[3] = ServiceRate::Finite(2.0);
        assert_eq!(traffic_intensities(&spec).unwrap(), (0.5, 0.5));

        let (r1, _) = traffic_intensities(&ksrs(1e-6)).unwrap();
        assert!((r1 - 1.0).abs() < 1e-5);
    }

    #[test]
    fn loads_reject_other_topologies() {
        let mut spec = ksrs(0.1);
        spec.routing[0][1] = 0;
        assert!(matches!(
            traffic_intensities(&spec),
            Err(Error::UnsupportedTopology(_))
        ));
    }

    #[test]
    fn spec_json_uses_inf_sentinel() {
        let spec = ksrs(0.1);
        let json = serde_json::to_value(&spec).unwrap();
        assert_eq!(json["mu"][0], "inf");
        assert_eq!(json["mu"][1], 1.1);
        assert_eq!(json["C"][0], serde_json::json!([1, 0, 0, 1]));
        let back: NetworkSpec = serde_json::from_value(json).unwrap();
        assert_eq!(back, spec);
    }

    #[test]
    fn qstate_parse_and_predicate() {
        let q: QState = "0,0,0,1".parse().unwrap();
        assert_eq!(q, QState::ATOM);
        assert_eq!("(2, 1, 0, 3)".parse::<QState>().unwrap(), QState::new(2, 1, 0, 3));
        assert!("1,2,3".parse::<QState>().is_err());
        assert!(QState::new(3, 0, 0, 1).is_stable());
        assert!(!QState::new(1, 0, 0, 0).is_stable());
        assert!(!QState::new(1, 1, 0, 1).is_stable());
        assert!(QState::new(0, 2, 5, 0).is_stable());
        assert!(!QState::new(0, 0, 1, 0).is_stable());
    }
}
