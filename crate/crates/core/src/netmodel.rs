//! Balanced per-unit network model and admittance matrix construction.
//!
//! Networks are single-phase equivalents: one slack bus held at 1.0 pu / 0 rad
//! and any number of PQ buses, joined by pi-model lines. Loads attach to PQ
//! buses through a dense load index `0..n_loads`, which is the ordering of the
//! `p` and `q` vectors everywhere else in the crate.

use std::collections::VecDeque;
use std::fmt;
use std::path::Path;

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BusKind {
    Slack,
    Pq,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bus {
    pub id: usize,
    pub kind: BusKind,
    /// Nominal magnitude in pu. Always 1.0 here; kept for file compatibility.
    #[serde(default = "one")]
    pub base_voltage: f64,
    /// Index into the load vectors, if a load is attached.
    #[serde(default, rename = "load", skip_serializing_if = "Option::is_none")]
    pub load_attachment: Option<usize>,
}

fn one() -> f64 {
    1.0
}

impl Bus {
    pub fn slack(id: usize) -> Self {
        Self { id, kind: BusKind::Slack, base_voltage: 1.0, load_attachment: None }
    }

    pub fn pq(id: usize, load: Option<usize>) -> Self {
        Self { id, kind: BusKind::Pq, base_voltage: 1.0, load_attachment: load }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Line {
    #[serde(rename = "from")]
    pub from_bus: usize,
    #[serde(rename = "to")]
    pub to_bus: usize,
    pub r: f64,
    pub x: f64,
    /// Total line charging susceptance in pu, split half to each end.
    #[serde(default, rename = "b")]
    pub shunt_susceptance: f64,
}

impl Line {
    pub fn new(from_bus: usize, to_bus: usize, r: f64, x: f64) -> Self {
        Self { from_bus, to_bus, r, x, shunt_susceptance: 0.0 }
    }

    pub fn with_shunt(mut self, b: f64) -> Self {
        self.shunt_susceptance = b;
        self
    }

    pub fn series_impedance(&self) -> Complex64 {
        Complex64::new(self.r, self.x)
    }
}

/// A failed network invariant, naming the offending element.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Violation {
    NoBuses,
    NonContiguousIds { position: usize, id: usize },
    NoSlack,
    MultipleSlack { buses: Vec<usize> },
    SelfLoop { line: usize, bus: usize },
    UnknownBus { line: usize, bus: usize },
    ZeroImpedance { line: usize },
    NonFiniteParameter { line: usize },
    NonUnitBaseVoltage { bus: usize },
    LoadOnSlack { bus: usize },
    DuplicateLoadIndex { load: usize },
    LoadIndexOutOfRange { bus: usize, load: usize },
    LoadIndicesNotDense { n_loads: usize, missing: usize },
    Disconnected { buses: Vec<usize> },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::NoBuses => write!(f, "network has no buses"),
            Violation::NonContiguousIds { position, id } => {
                write!(f, "bus ids must be 0..n-1 in order: position {position} holds id {id}")
            }
            Violation::NoSlack => write!(f, "no slack bus"),
            Violation::MultipleSlack { buses } => write!(f, "duplicate slack buses {buses:?}"),
            Violation::SelfLoop { line, bus } => write!(f, "line {line} connects bus {bus} to itself"),
            Violation::UnknownBus { line, bus } => write!(f, "line {line} references unknown bus {bus}"),
            Violation::ZeroImpedance { line } => write!(f, "line {line} has zero series impedance"),
            Violation::NonFiniteParameter { line } => write!(f, "line {line} has a non-finite parameter"),
            Violation::NonUnitBaseVoltage { bus } => {
                write!(f, "bus {bus} base voltage must be 1.0 pu")
            }
            Violation::LoadOnSlack { bus } => write!(f, "slack bus {bus} cannot carry a load"),
            Violation::DuplicateLoadIndex { load } => {
                write!(f, "load index {load} attached to more than one bus")
            }
            Violation::LoadIndexOutOfRange { bus, load } => {
                write!(f, "bus {bus} has load index {load}, beyond the bus count")
            }
            Violation::LoadIndicesNotDense { n_loads, missing } => {
                write!(f, "load indices must cover 0..{n_loads}; {missing} is missing")
            }
            Violation::Disconnected { buses } => {
                write!(f, "buses {buses:?} are not reachable from the slack bus")
            }
        }
    }
}

#[derive(Debug, Error)]
pub enum NetworkError {
    #[error("invalid network: {}", join_violations(.0))]
    Invalid(Vec<Violation>),
    #[error("network is disconnected: buses {0:?} unreachable from slack")]
    Disconnected(Vec<usize>),
    #[error("line {line} has zero series impedance")]
    ZeroImpedance { line: usize },
    #[error("cannot read network file {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("cannot parse network file: {0}")]
    Parse(String),
}

fn join_violations(v: &[Violation]) -> String {
    v.iter().map(ToString::to_string).collect::<Vec<_>>().join("; ")
}

/// Checks every network invariant and reports all failures found.
pub fn validate(buses: &[Bus], lines: &[Line]) -> Vec<Violation> {
    let mut out = Vec::new();
    if buses.is_empty() {
        out.push(Violation::NoBuses);
        return out;
    }
    let n = buses.len();
    for (pos, bus) in buses.iter().enumerate() {
        if bus.id != pos {
            out.push(Violation::NonContiguousIds { position: pos, id: bus.id });
        }
        if bus.base_voltage != 1.0 {
            out.push(Violation::NonUnitBaseVoltage { bus: pos });
        }
    }

    let slacks: Vec<usize> =
        buses.iter().enumerate().filter(|(_, b)| b.kind == BusKind::Slack).map(|(i, _)| i).collect();
    match slacks.len() {
        0 => out.push(Violation::NoSlack),
        1 => {}
        _ => out.push(Violation::MultipleSlack { buses: slacks.clone() }),
    }

    let mut load_seen: Vec<bool> = Vec::new();
    for (i, bus) in buses.iter().enumerate() {
        let Some(load) = bus.load_attachment else { continue };
        if bus.kind == BusKind::Slack {
            out.push(Violation::LoadOnSlack { bus: i });
        }
        // More loads than buses is impossible; also bounds the table below.
        if load >= n {
            out.push(Violation::LoadIndexOutOfRange { bus: i, load });
            continue;
        }
        if load_seen.len() <= load {
            load_seen.resize(load + 1, false);
        }
        if load_seen[load] {
            out.push(Violation::DuplicateLoadIndex { load });
        }
        load_seen[load] = true;
    }
    if let Some(missing) = load_seen.iter().position(|s| !s) {
        out.push(Violation::LoadIndicesNotDense { n_loads: load_seen.len(), missing });
    }

    let mut structural_ok = true;
    for (k, line) in lines.iter().enumerate() {
        for bus in [line.from_bus, line.to_bus] {
            if bus >= n {
                out.push(Violation::UnknownBus { line: k, bus });
                structural_ok = false;
            }
        }
        if line.from_bus == line.to_bus {
            out.push(Violation::SelfLoop { line: k, bus: line.from_bus });
        }
        if !(line.r.is_finite() && line.x.is_finite() && line.shunt_susceptance.is_finite()) {
            out.push(Violation::NonFiniteParameter { line: k });
        } else if line.series_impedance().norm() == 0.0 {
            out.push(Violation::ZeroImpedance { line: k });
        }
    }

    if structural_ok {
        if let Some(&slack) = slacks.first() {
            let unreachable = unreachable_from(slack, n, lines);
            if !unreachable.is_empty() {
                out.push(Violation::Disconnected { buses: unreachable });
            }
        }
    }
    out
}

fn unreachable_from(root: usize, n: usize, lines: &[Line]) -> Vec<usize> {
    let mut adj = vec![Vec::new(); n];
    for l in lines {
        adj[l.from_bus].push(l.to_bus);
        adj[l.to_bus].push(l.from_bus);
    }
    let mut seen = vec![false; n];
    seen[root] = true;
    let mut queue = VecDeque::from([root]);
    while let Some(b) = queue.pop_front() {
        for &nb in &adj[b] {
            if !seen[nb] {
                seen[nb] = true;
                queue.push_back(nb);
            }
        }
    }
    (0..n).filter(|&i| !seen[i]).collect()
}

/// Assembles the bus admittance matrix from pi-model lines.
///
/// `Y[i][j] = -1/z` for each line, and each diagonal accumulates `1/z + j b/2`
/// over its incident lines. Parallel lines add. Entries are written to both
/// triangles from the same value, so the result is exactly symmetric.
pub fn build_admittance(buses: &[Bus], lines: &[Line]) -> Result<DMatrix<Complex64>, NetworkError> {
    let n = buses.len();
    for (k, line) in lines.iter().enumerate() {
        if line.from_bus >= n || line.to_bus >= n || line.from_bus == line.to_bus {
            return Err(NetworkError::Invalid(vec![Violation::UnknownBus {
                line: k,
                bus: line.from_bus.max(line.to_bus),
            }]));
        }
        if line.series_impedance().norm() == 0.0 {
            return Err(NetworkError::ZeroImpedance { line: k });
        }
    }
    if n > 0 {
        let slack = buses.iter().position(|b| b.kind == BusKind::Slack).unwrap_or(0);
        let unreachable = unreachable_from(slack, n, lines);
        if !unreachable.is_empty() {
            return Err(NetworkError::Disconnected(unreachable));
        }
    }

    let mut y = DMatrix::from_element(n, n, Complex64::new(0.0, 0.0));
    for line in lines {
        let (i, j) = (line.from_bus, line.to_bus);
        let ys = line.series_impedance().inv();
        let half_shunt = Complex64::new(0.0, line.shunt_susceptance / 2.0);
        y[(i, i)] += ys + half_shunt;
        y[(j, j)] += ys + half_shunt;
        y[(i, j)] -= ys;
        y[(j, i)] = y[(i, j)];
    }
    Ok(y)
}

/// A validated network together with its admittance matrix. Immutable.
#[derive(Debug, Clone)]
pub struct Network {
    name: String,
    buses: Vec<Bus>,
    lines: Vec<Line>,
    y: DMatrix<Complex64>,
    slack: usize,
    /// Bus index for each load index.
    load_buses: Vec<usize>,
}

impl Network {
    pub fn new(name: impl Into<String>, buses: Vec<Bus>, lines: Vec<Line>) -> Result<Self, NetworkError> {
        let violations = validate(&buses, &lines);
        if !violations.is_empty() {
            return Err(NetworkError::Invalid(violations));
        }
        let y = build_admittance(&buses, &lines)?;
        let slack = buses.iter().position(|b| b.kind == BusKind::Slack).expect("validated");
        let n_loads = buses.iter().filter(|b| b.load_attachment.is_some()).count();
        let mut load_buses = vec![0; n_loads];
        for b in &buses {
            if let Some(l) = b.load_attachment {
                load_buses[l] = b.id;
            }
        }
        Ok(Self { name: name.into(), buses, lines, y, slack, load_buses })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn buses(&self) -> &[Bus] {
        &self.buses
    }

    pub fn lines(&self) -> &[Line] {
        &self.lines
    }

    pub fn admittance(&self) -> &DMatrix<Complex64> {
        &self.y
    }

    pub fn n_bus(&self) -> usize {
        self.buses.len()
    }

    /// Number of load-attached buses (length of `p` and `q`).
    pub fn n_loads(&self) -> usize {
        self.load_buses.len()
    }

    pub fn slack(&self) -> usize {
        self.slack
    }

    pub fn load_buses(&self) -> &[usize] {
        &self.load_buses
    }

    /// Non-slack bus indices in ascending order.
    pub fn pq_buses(&self) -> Vec<usize> {
        (0..self.n_bus()).filter(|&i| i != self.slack).collect()
    }

    pub fn validate(&self) -> Vec<Violation> {
        validate(&self.buses, &self.lines)
    }

    pub fn has_shunts(&self) -> bool {
        self.lines.iter().any(|l| l.shunt_susceptance != 0.0)
    }

    /// Parses the TOML network definition format.
    pub fn from_toml_str(text: &str) -> Result<Self, NetworkError> {
        let file: NetworkFile = toml::from_str(text).map_err(|e| NetworkError::Parse(e.to_string()))?;
        Network::new(file.name, file.bus, file.line)
    }

    pub fn to_toml_string(&self) -> String {
        let file = NetworkFile { name: self.name.clone(), bus: self.buses.clone(), line: self.lines.clone() };
        toml::to_string(&file).expect("network serializes")
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, NetworkError> {
        let path = path.as_ref();
        if let Some(name) = path.to_str().and_then(|s| s.strip_prefix("bundled:")) {
            return bundled(name).ok_or_else(|| NetworkError::Parse(format!("no bundled network {name:?}")));
        }
        let text = std::fs::read_to_string(path)
            .map_err(|source| NetworkError::Io { path: path.display().to_string(), source })?;
        Self::from_toml_str(&text)
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct NetworkFile {
    #[serde(default)]
    name: String,
    #[serde(default)]
    bus: Vec<Bus>,
    #[serde(default)]
    line: Vec<Line>,
}

pub const RING4_TOML: &str = include_str!("../data/networks/ring4.toml");
pub const FEEDER30_TOML: &str = include_str!("../data/networks/feeder30.toml");

/// Bundled networks by name: `ring4` (teaching case) and `feeder30` (radial feeder).
pub fn bundled(name: &str) -> Option<Network> {
    let text = match name {
        "ring4" => RING4_TOML,
        "feeder30" => FEEDER30_TOML,
        _ => return None,
    };
    Some(Network::from_toml_str(text).expect("bundled network is valid"))
}

pub fn bundled_names() -> &'static [&'static str] {
    &["ring4", "feeder30"]
}
