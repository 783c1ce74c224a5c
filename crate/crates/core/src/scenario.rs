//! Scenario description: topology, federations, devices, agents, market and
//! algorithm settings, read from TOML.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::ScenarioError;
use crate::network::{BusId, NetworkTopology};

pub const DEFAULT_PERIODS: usize = 24;

/// A per-period series given either as one value for every period or as
/// one value per period.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Profile {
    Constant(f64),
    Series(Vec<f64>),
}

impl Default for Profile {
    fn default() -> Self {
        Profile::Constant(0.0)
    }
}

impl Profile {
    /// Expands to `periods` values. A series of the wrong length is padded
    /// with its last value; validation reports the mismatch.
    pub fn values(&self, periods: usize) -> Vec<f64> {
        match self {
            Profile::Constant(v) => vec![*v; periods],
            Profile::Series(s) => (0..periods)
                .map(|t| s.get(t).or(s.last()).copied().unwrap_or(0.0))
                .collect(),
        }
    }

    fn len_ok(&self, periods: usize) -> bool {
        match self {
            Profile::Constant(_) => true,
            Profile::Series(s) => s.len() == periods,
        }
    }

    fn all(&self, f: impl Fn(f64) -> bool) -> bool {
        match self {
            Profile::Constant(v) => f(*v),
            Profile::Series(s) => s.iter().all(|&v| f(v)),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Federation {
    Consumers,
    Producers,
    Prosumers,
}

impl fmt::Display for Federation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Federation::Consumers => "consumers",
            Federation::Producers => "producers",
            Federation::Prosumers => "prosumers",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VfpSpec {
    pub federation: Federation,
    /// Bus where the federation's load and wholesale exchange connect.
    pub bus: BusId,
    /// Tonnes of CO₂ per MWh of internal production.
    pub emission_factor: f64,
    pub alpha: f64,
    pub beta: f64,
    /// Quadratic and linear coefficients of the production cost h(P_g).
    #[serde(default)]
    pub cost_quadratic: f64,
    #[serde(default)]
    pub cost_linear: f64,
    /// Inflexible part of the load, MW.
    pub base_load: Profile,
    /// Relative daily shape of the agents' flexible energy.
    #[serde(default)]
    pub flexible_shape: Profile,
    pub wholesale_min: Profile,
    pub wholesale_max: Profile,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DeviceKind {
    #[serde(rename = "GT")]
    Gt,
    #[serde(rename = "DG", alias = "PV")]
    Dg,
    #[serde(rename = "ESS")]
    Ess,
}

impl fmt::Display for DeviceKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DeviceKind::Gt => "GT",
            DeviceKind::Dg => "DG",
            DeviceKind::Ess => "ESS",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeviceSpec {
    pub vfp: String,
    pub kind: DeviceKind,
    pub bus: BusId,
    /// Output bounds (GT, DG, MW) or capacity bounds (ESS, MWh).
    pub min: f64,
    pub max: f64,
    /// DG only: fraction of `max` available in each period.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub availability: Option<Profile>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub charge_max: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub discharge_max: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eta_charge: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eta_discharge: Option<f64>,
    /// ESS state of charge before the first period; defaults to `min`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial_soc: Option<f64>,
    /// GT only: own dispatch cost on top of the federation's h(P_g).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cost_quadratic: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cost_linear: Option<f64>,
}

impl DeviceSpec {
    pub fn initial_soc(&self) -> f64 {
        self.initial_soc.unwrap_or(self.min)
    }

    /// Upper output bound per period.
    pub fn upper_profile(&self, periods: usize) -> Vec<f64> {
        match (&self.kind, &self.availability) {
            (DeviceKind::Dg, Some(a)) => a.values(periods).iter().map(|f| f * self.max).collect(),
            _ => vec![self.max; periods],
        }
    }

    pub fn charge_max(&self) -> f64 {
        self.charge_max.unwrap_or(0.0)
    }

    pub fn discharge_max(&self) -> f64 {
        self.discharge_max.unwrap_or(0.0)
    }

    pub fn eta_charge(&self) -> f64 {
        self.eta_charge.unwrap_or(1.0)
    }

    pub fn eta_discharge(&self) -> f64 {
        self.eta_discharge.unwrap_or(1.0)
    }

    pub fn cost(&self) -> (f64, f64) {
        (self.cost_quadratic.unwrap_or(0.0), self.cost_linear.unwrap_or(0.0))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Consumer,
    Producer,
    Prosumer,
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Role::Consumer => "consumer",
            Role::Producer => "producer",
            Role::Prosumer => "prosumer",
        })
    }
}

/// A node inside a federation. Consumers use `v`, `omega` and the demand
/// box; producers use `a`, `b`, the carbon terms and the supply box;
/// prosumers use both.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentSpec {
    pub vfp: String,
    pub role: Role,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub v: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub omega: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub demand_min: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub demand_max: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub a: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub b: Option<f64>,
    /// ¥ per tonne charged on the agent's own emissions.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub carbon_cost: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub emission_factor: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub supply_min: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub supply_max: Option<f64>,
    /// Net energy (demand minus supply, MWh per day) used when the
    /// allocation level is switched off.
    pub nominal: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConsumerParams {
    pub v: f64,
    pub omega: f64,
    pub min: f64,
    pub max: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProducerParams {
    pub a: f64,
    pub b: f64,
    pub carbon_cost: f64,
    pub emission_factor: f64,
    pub min: f64,
    pub max: f64,
}

impl ProducerParams {
    /// Constant marginal carbon charge per MWh.
    pub fn carbon_marginal(&self) -> f64 {
        self.carbon_cost * self.emission_factor
    }
}

impl AgentSpec {
    pub fn consumer(&self) -> Option<ConsumerParams> {
        Some(ConsumerParams {
            v: self.v?,
            omega: self.omega?,
            min: self.demand_min?,
            max: self.demand_max?,
        })
    }

    pub fn producer(&self) -> Option<ProducerParams> {
        Some(ProducerParams {
            a: self.a?,
            b: self.b?,
            carbon_cost: self.carbon_cost.unwrap_or(0.0),
            emission_factor: self.emission_factor.unwrap_or(0.0),
            min: self.supply_min?,
            max: self.supply_max?,
        })
    }

    fn required(&self) -> Vec<(&'static str, Option<f64>)> {
        let consumer = [
            ("v", self.v),
            ("omega", self.omega),
            ("demand_min", self.demand_min),
            ("demand_max", self.demand_max),
        ];
        let producer = [
            ("a", self.a),
            ("b", self.b),
            ("supply_min", self.supply_min),
            ("supply_max", self.supply_max),
        ];
        match self.role {
            Role::Consumer => consumer.to_vec(),
            Role::Producer => producer.to_vec(),
            Role::Prosumer => consumer.into_iter().chain(producer).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MarketParams {
    /// Wholesale purchase price λ_w,in, ¥/MWh.
    pub wholesale_buy: Profile,
    /// Wholesale sale price λ_w,out, ¥/MWh.
    pub wholesale_sell: Profile,
    /// Regional daily emission cap, t.
    pub carbon_cap: f64,
    /// Power base (MW) dividing the carbon price first-order condition.
    #[serde(default = "one")]
    pub carbon_power_base: f64,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WeightsVariant {
    Literal,
    #[default]
    Proportional,
}

impl std::str::FromStr for WeightsVariant {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "literal" => Ok(Self::Literal),
            "proportional" => Ok(Self::Proportional),
            other => Err(format!("unknown weights variant `{other}`")),
        }
    }
}

impl fmt::Display for WeightsVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Literal => "literal",
            Self::Proportional => "proportional",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AlgorithmParams {
    pub periods: usize,
    /// Benchmark price step δ.
    pub price_step: f64,
    /// Weight step Δl.
    pub weight_step: f64,
    pub tol_transmission: f64,
    pub tol_allocation: f64,
    pub tol_outer: f64,
    pub tol_qp: f64,
    pub max_fra: usize,
    pub max_dfaa_inner: usize,
    pub max_dfaa_outer: usize,
    pub max_outer: usize,
    pub max_binaries: usize,
    pub weights_variant: WeightsVariant,
}

impl Default for AlgorithmParams {
    fn default() -> Self {
        Self {
            periods: DEFAULT_PERIODS,
            price_step: 0.01,
            weight_step: 0.5,
            tol_transmission: 1e-7,
            tol_allocation: 1e-9,
            tol_outer: 1e-3,
            tol_qp: 1e-9,
            max_fra: 200,
            max_dfaa_inner: 200_000,
            max_dfaa_outer: 500,
            max_outer: 50,
            max_binaries: 24,
            weights_variant: WeightsVariant::Proportional,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub network: NetworkTopology,
    pub vfp: BTreeMap<String, VfpSpec>,
    #[serde(default)]
    pub agent: BTreeMap<String, AgentSpec>,
    #[serde(default)]
    pub device: BTreeMap<String, DeviceSpec>,
    pub market: MarketParams,
    #[serde(default)]
    pub algorithm: AlgorithmParams,
}

fn section<T: DeserializeOwned>(value: toml::Value, name: &str) -> Result<T, ScenarioError> {
    T::deserialize(value).map_err(|e| ScenarioError::Field {
        section: name.to_string(),
        message: e.message().to_string(),
    })
}

fn table_of(root: &mut toml::Table, key: &str) -> Result<Option<toml::Table>, ScenarioError> {
    match root.remove(key) {
        None => Ok(None),
        Some(toml::Value::Table(t)) => Ok(Some(t)),
        Some(_) => Err(ScenarioError::Field {
            section: key.to_string(),
            message: "expected a table".into(),
        }),
    }
}

fn keyed<T: DeserializeOwned>(root: &mut toml::Table, key: &str) -> Result<BTreeMap<String, T>, ScenarioError> {
    let mut out = BTreeMap::new();
    for (id, v) in table_of(root, key)?.unwrap_or_default() {
        let name = format!("{key}.{id}");
        out.insert(id, section(v, &name)?);
    }
    Ok(out)
}

/// Parses a scenario from TOML text.
pub fn parse_scenario(source: &str) -> Result<Scenario, ScenarioError> {
    let mut root: toml::Table = source.parse().map_err(|e: toml::de::Error| {
        let (line, column) = e.span().map(|s| line_column(source, s.start)).unwrap_or((0, 0));
        ScenarioError::Syntax {
            line,
            column,
            message: e.message().to_string(),
        }
    })?;

    let network = table_of(&mut root, "network")?.ok_or_else(|| ScenarioError::MissingSection("network".into()))?;
    let network = section(toml::Value::Table(network), "network")?;
    let market = table_of(&mut root, "market")?.ok_or_else(|| ScenarioError::MissingSection("market".into()))?;
    let market = section(toml::Value::Table(market), "market")?;
    let algorithm = match table_of(&mut root, "algorithm")? {
        Some(t) => section(toml::Value::Table(t), "algorithm")?,
        None => AlgorithmParams::default(),
    };
    let vfp: BTreeMap<String, VfpSpec> = keyed(&mut root, "vfp")?;
    if vfp.is_empty() {
        return Err(ScenarioError::MissingSection("vfp".into()));
    }
    let agent: BTreeMap<String, AgentSpec> = keyed(&mut root, "agent")?;
    let device: BTreeMap<String, DeviceSpec> = keyed(&mut root, "device")?;
    if let Some(key) = root.keys().next() {
        return Err(ScenarioError::Field {
            section: key.clone(),
            message: "unknown top-level section".into(),
        });
    }

    for (id, a) in &agent {
        let name = format!("agent.{id}");
        if !vfp.contains_key(&a.vfp) {
            return Err(ScenarioError::UnknownReference {
                kind: "vfp",
                id: a.vfp.clone(),
                section: name,
            });
        }
        if let Some((field, _)) = a.required().into_iter().find(|(_, v)| v.is_none()) {
            return Err(ScenarioError::Field {
                section: name,
                message: format!("missing field `{field}` required for a {}", a.role),
            });
        }
    }
    for (id, d) in &device {
        if !vfp.contains_key(&d.vfp) {
            return Err(ScenarioError::UnknownReference {
                kind: "vfp",
                id: d.vfp.clone(),
                section: format!("device.{id}"),
            });
        }
    }

    Ok(Scenario {
        network,
        vfp,
        agent,
        device,
        market,
        algorithm,
    })
}

fn line_column(source: &str, offset: usize) -> (usize, usize) {
    let before = &source[..offset.min(source.len())];
    let line = before.matches('\n').count() + 1;
    let column = before.rsplit('\n').next().map_or(0, |s| s.chars().count()) + 1;
    (line, column)
}

pub fn load_scenario(path: impl AsRef<Path>) -> Result<Scenario, ScenarioError> {
    parse_scenario(&std::fs::read_to_string(path)?)
}

pub fn serialize_scenario(s: &Scenario) -> Result<String, ScenarioError> {
    toml::to_string(s).map_err(|e| ScenarioError::Serialize(e.to_string()))
}

impl Scenario {
    pub fn periods(&self) -> usize {
        self.algorithm.periods
    }

    pub fn vfp_ids(&self) -> Vec<String> {
        self.vfp.keys().cloned().collect()
    }

    pub fn devices_of<'a>(&'a self, vfp: &'a str) -> impl Iterator<Item = (&'a String, &'a DeviceSpec)> {
        self.device.iter().filter(move |(_, d)| d.vfp == vfp)
    }

    pub fn agents_of<'a>(&'a self, vfp: &'a str) -> impl Iterator<Item = (&'a String, &'a AgentSpec)> {
        self.agent.iter().filter(move |(_, a)| a.vfp == vfp)
    }

    /// Daily flexible energy when every agent sits at its nominal value.
    pub fn nominal_energy(&self, vfp: &str) -> f64 {
        self.agents_of(vfp).map(|(_, a)| a.nominal).sum()
    }

    /// Spreads a daily flexible energy over the periods by the VFP's shape.
    pub fn flexible_load(&self, vfp: &str, energy: f64) -> Vec<f64> {
        let n = self.periods();
        let shape = self.vfp[vfp].flexible_shape.values(n);
        let total: f64 = shape.iter().sum();
        if total == 0.0 {
            return vec![0.0; n];
        }
        shape.iter().map(|s| energy * s / total).collect()
    }

    /// Total load per period for a given daily flexible energy.
    pub fn load(&self, vfp: &str, energy: f64) -> Vec<f64> {
        let base = self.vfp[vfp].base_load.values(self.periods());
        base.iter()
            .zip(self.flexible_load(vfp, energy))
            .map(|(b, f)| b + f)
            .collect()
    }

    /// Bounds on internal production P_g in each period.
    pub fn production_window(&self, vfp: &str) -> (Vec<f64>, Vec<f64>) {
        let n = self.periods();
        let mut lo = vec![0.0; n];
        let mut hi = vec![0.0; n];
        for (_, d) in self.devices_of(vfp) {
            match d.kind {
                DeviceKind::Gt => (0..n).for_each(|t| hi[t] += d.max),
                DeviceKind::Dg => {
                    for (t, u) in d.upper_profile(n).into_iter().enumerate() {
                        lo[t] += d.min;
                        hi[t] += u;
                    }
                }
                DeviceKind::Ess => (0..n).for_each(|t| {
                    lo[t] -= d.charge_max();
                    hi[t] += d.discharge_max();
                }),
            }
        }
        (lo, hi)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub rule: &'static str,
    pub detail: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.rule, self.detail)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_empty(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn has(&self, rule: &str) -> bool {
        self.violations.iter().any(|v| v.rule == rule)
    }

    fn push(&mut self, rule: &'static str, detail: impl Into<String>) {
        self.violations.push(Violation {
            rule,
            detail: detail.into(),
        });
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for v in &self.violations {
            writeln!(f, "  - {v}")?;
        }
        Ok(())
    }
}

pub const FEASIBILITY_WINDOW: &str = "assumption-d feasibility window";
pub const PRICE_ORDERING: &str = "wholesale price ordering";

/// Lists every violated invariant; an empty report means the scenario is
/// admissible.
pub fn validate_scenario(s: &Scenario) -> ValidationReport {
    let mut r = ValidationReport::default();
    let n = s.periods();
    let net = &s.network;

    let mut sorted = net.buses.clone();
    sorted.sort_unstable();
    sorted.dedup();
    if net.buses.is_empty() {
        r.push("network buses", "no buses declared");
    }
    if sorted.len() != net.buses.len() {
        r.push("network buses", "duplicate bus ids");
    }
    if !net.buses.contains(&net.slack_bus) {
        r.push("slack bus", format!("slack bus {} is not a bus", net.slack_bus));
    }
    for (k, l) in net.lines.iter().enumerate() {
        for b in [l.from, l.to] {
            if !net.buses.contains(&b) {
                r.push("line endpoints", format!("line {k} references unknown bus {b}"));
            }
        }
        if l.from == l.to {
            r.push("line endpoints", format!("line {k} is a self-loop"));
        }
        if !(l.susceptance > 0.0) {
            r.push("line susceptance", format!("line {k} has B = {}", l.susceptance));
        }
        if !(l.min <= 0.0 && 0.0 <= l.max) {
            r.push(
                "line limits",
                format!("line {k} limits [{}, {}] exclude 0", l.min, l.max),
            );
        }
    }
    if r.is_empty() {
        if let Err(e) = net.check_connected() {
            r.push("network connectivity", e.to_string());
        }
    }

    for (id, v) in &s.vfp {
        if !net.buses.contains(&v.bus) {
            r.push("vfp bus", format!("{id} sits on unknown bus {}", v.bus));
        }
        if !(v.beta > 0.0) {
            r.push("inverse demand slope", format!("{id}: beta = {} must be > 0", v.beta));
        }
        if !(v.emission_factor >= 0.0) {
            r.push(
                "emission factor",
                format!("{id}: epsilon = {} must be ≥ 0", v.emission_factor),
            );
        }
        if !(v.cost_quadratic >= 0.0) {
            r.push(
                "production cost convexity",
                format!("{id}: quadratic coefficient {} < 0", v.cost_quadratic),
            );
        }
        for (name, p) in [
            ("base_load", &v.base_load),
            ("flexible_shape", &v.flexible_shape),
            ("wholesale_min", &v.wholesale_min),
            ("wholesale_max", &v.wholesale_max),
        ] {
            if !p.len_ok(n) {
                r.push("profile length", format!("{id}.{name} must have {n} values"));
            }
        }
        if !v.flexible_shape.all(|x| x >= 0.0) {
            r.push("flexible shape", format!("{id}: shape values must be ≥ 0"));
        }
        let wmin = v.wholesale_min.values(n);
        let wmax = v.wholesale_max.values(n);
        if wmin.iter().zip(&wmax).any(|(a, b)| a > b) {
            r.push("bound ordering", format!("{id}: wholesale_min exceeds wholesale_max"));
        }
        let members: Vec<&AgentSpec> = s.agents_of(id).map(|(_, a)| a).collect();
        let mismatch = members.iter().any(|a| match v.federation {
            Federation::Consumers => a.role != Role::Consumer,
            Federation::Producers => a.role != Role::Producer,
            Federation::Prosumers => false,
        });
        if mismatch {
            r.push(
                "federation membership",
                format!("{id} is a {} federation with foreign roles", v.federation),
            );
        }
        if !members.is_empty() && v.flexible_shape.values(n).iter().sum::<f64>() <= 0.0 {
            r.push(
                "flexible shape",
                format!("{id} has agents but an all-zero flexible_shape"),
            );
        }
    }

    for (id, d) in &s.device {
        if !s.vfp.contains_key(&d.vfp) {
            r.push("device owner", format!("{id} references unknown vfp {}", d.vfp));
        }
        if !net.buses.contains(&d.bus) {
            r.push("device bus", format!("{id} sits on unknown bus {}", d.bus));
        }
        if !(d.min <= d.max) {
            r.push("bound ordering", format!("{id}: min {} > max {}", d.min, d.max));
        }
        match d.kind {
            DeviceKind::Gt => {
                if d.min < 0.0 {
                    r.push("device bounds", format!("{id}: GT minimum output must be ≥ 0"));
                }
                if d.cost().0 < 0.0 {
                    r.push("production cost convexity", format!("{id}: quadratic coefficient < 0"));
                }
            }
            DeviceKind::Dg => {
                if let Some(a) = &d.availability {
                    if !a.len_ok(n) {
                        r.push("profile length", format!("{id}.availability must have {n} values"));
                    }
                    if !a.all(|x| (0.0..=1.0).contains(&x)) {
                        r.push("device bounds", format!("{id}: availability outside [0, 1]"));
                    }
                }
                if d.upper_profile(n).iter().any(|&u| u < d.min) {
                    r.push("bound ordering", format!("{id}: available output below minimum"));
                }
            }
            DeviceKind::Ess => {
                for (name, e) in [("eta_charge", d.eta_charge()), ("eta_discharge", d.eta_discharge())] {
                    if !(e > 0.0 && e <= 1.0) {
                        r.push("efficiency range", format!("{id}.{name} = {e} outside (0, 1]"));
                    }
                }
                if !(d.charge_max() >= 0.0 && d.discharge_max() >= 0.0) {
                    r.push("device bounds", format!("{id}: power limits must be ≥ 0"));
                }
                let soc = d.initial_soc();
                if !(d.min <= soc && soc <= d.max) {
                    r.push("device bounds", format!("{id}: initial_soc {soc} outside capacity"));
                }
            }
        }
        if d.kind != DeviceKind::Ess && (d.charge_max.is_some() || d.discharge_max.is_some() || d.initial_soc.is_some())
        {
            r.push("device fields", format!("{id}: storage fields on a {} device", d.kind));
        }
        if d.kind != DeviceKind::Gt && (d.cost_quadratic.is_some() || d.cost_linear.is_some()) {
            r.push("device fields", format!("{id}: cost fields on a {} device", d.kind));
        }
    }

    for (id, a) in &s.agent {
        if !s.vfp.contains_key(&a.vfp) {
            r.push("agent owner", format!("{id} references unknown vfp {}", a.vfp));
        }
        for (field, v) in a.required() {
            if v.is_none() {
                r.push("agent fields", format!("{id}: missing {field} for a {}", a.role));
            }
        }
        if matches!(a.role, Role::Consumer | Role::Prosumer) {
            if let Some(c) = a.consumer() {
                if !(c.omega > 0.0) {
                    r.push("agent utility", format!("{id}: omega must be > 0"));
                }
                if !(c.min <= c.max) {
                    r.push("agent box", format!("{id}: empty demand box"));
                }
                if c.min < 0.0 {
                    r.push("agent box", format!("{id}: demand box below 0"));
                }
            }
        }
        if matches!(a.role, Role::Producer | Role::Prosumer) {
            if let Some(p) = a.producer() {
                if !(p.a > 0.0) {
                    r.push("agent cost", format!("{id}: a must be > 0"));
                }
                if !(p.min <= p.max) {
                    r.push("agent box", format!("{id}: empty supply box"));
                }
                if p.min < 0.0 {
                    r.push("agent box", format!("{id}: supply box below 0"));
                }
                if p.carbon_cost < 0.0 || p.emission_factor < 0.0 {
                    r.push("agent cost", format!("{id}: negative carbon terms"));
                }
            }
        }
        let (dlo, dhi) = a.consumer().map_or((0.0, 0.0), |c| (c.min, c.max));
        let (slo, shi) = a.producer().map_or((0.0, 0.0), |p| (p.min, p.max));
        let (lo, hi) = match a.role {
            Role::Consumer => (dlo, dhi),
            Role::Producer => (-shi, -slo),
            Role::Prosumer => (dlo - shi, dhi - slo),
        };
        if !(lo <= a.nominal && a.nominal <= hi) {
            r.push(
                "agent nominal",
                format!("{id}: nominal {} outside the reachable range [{lo}, {hi}]", a.nominal),
            );
        }
        if a.role == Role::Producer && (a.v.is_some() || a.omega.is_some()) {
            r.push("agent fields", format!("{id}: consumer fields on a producer"));
        }
    }

    let m = &s.market;
    for (name, p) in [
        ("wholesale_buy", &m.wholesale_buy),
        ("wholesale_sell", &m.wholesale_sell),
    ] {
        if !p.len_ok(n) {
            r.push("profile length", format!("market.{name} must have {n} values"));
        }
    }
    let buy = m.wholesale_buy.values(n);
    let sell = m.wholesale_sell.values(n);
    for t in 0..n {
        if !(buy[t] >= sell[t] && sell[t] >= 0.0) {
            r.push(
                PRICE_ORDERING,
                format!("period {}: buy {} / sell {}", t + 1, buy[t], sell[t]),
            );
        }
    }
    if !(m.carbon_cap >= 0.0) {
        r.push("carbon cap", format!("cap {} must be ≥ 0", m.carbon_cap));
    }
    if !(m.carbon_power_base > 0.0) {
        r.push("carbon power base", "must be > 0");
    }

    let g = &s.algorithm;
    for (name, v) in [
        ("price_step", g.price_step),
        ("weight_step", g.weight_step),
        ("tol_transmission", g.tol_transmission),
        ("tol_allocation", g.tol_allocation),
        ("tol_outer", g.tol_outer),
        ("tol_qp", g.tol_qp),
    ] {
        if !(v > 0.0) {
            r.push("algorithm parameters", format!("{name} must be > 0"));
        }
    }
    for (name, v) in [
        ("periods", g.periods),
        ("max_fra", g.max_fra),
        ("max_dfaa_inner", g.max_dfaa_inner),
        ("max_dfaa_outer", g.max_dfaa_outer),
        ("max_outer", g.max_outer),
    ] {
        if v < 1 {
            r.push("algorithm parameters", format!("{name} must be ≥ 1"));
        }
    }

    for violation in feasibility_window(s) {
        r.violations.push(violation);
    }
    r
}

/// Per-period check that nominal load lies strictly inside the range the
/// federation can cover from its own production and the wholesale market.
pub fn feasibility_window(s: &Scenario) -> Vec<Violation> {
    let n = s.periods();
    let mut out = Vec::new();
    for (id, v) in &s.vfp {
        let load = s.load(id, s.nominal_energy(id));
        let (glo, ghi) = s.production_window(id);
        let wmin = v.wholesale_min.values(n);
        let wmax = v.wholesale_max.values(n);
        for t in 0..n {
            let lo = glo[t] + wmin[t];
            let hi = ghi[t] + wmax[t];
            if !(lo < load[t] && load[t] < hi) {
                out.push(Violation {
                    rule: FEASIBILITY_WINDOW,
                    detail: format!("{id} period {}: load {} not inside ({lo}, {hi})", t + 1, load[t]),
                });
            }
        }
    }
    out
}
