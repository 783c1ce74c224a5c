use thiserror::Error;

use crate::transmission::CobwebVerdict;

/// Errors raised while reading or checking a scenario.
#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("scenario syntax error at line {line}, column {column}: {message}")]
    Syntax {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("[{section}] {message}")]
    Field { section: String, message: String },
    #[error("missing required section [{0}]")]
    MissingSection(String),
    #[error("unknown {kind} id `{id}` referenced from [{section}]")]
    UnknownReference {
        kind: &'static str,
        id: String,
        section: String,
    },
    #[error("scenario is not admissible:\n{0}")]
    Invalid(String),
    #[error("failed to serialize scenario: {0}")]
    Serialize(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum QpError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("{count} binary variables exceed the enumeration cap of {cap}")]
    TooManyBinaries { count: usize, cap: usize },
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NetworkError {
    #[error("unknown bus id {0}")]
    UnknownBus(u32),
    #[error("angle vector has {got} entries, network has {expected} buses")]
    AngleLength { got: usize, expected: usize },
    #[error("slack bus angle must be exactly zero, got {0}")]
    SlackAngle(f64),
    #[error("network is not connected; bus {0} is unreachable from the slack bus")]
    Disconnected(u32),
}

#[derive(Debug, Error)]
pub enum TransmissionError {
    #[error("best response of {vfp} is infeasible: {detail}")]
    Infeasible { vfp: String, detail: String },
    #[error("solver hit its iteration limit for {vfp} (kkt residual {residual:.3e})")]
    SolverLimit { vfp: String, residual: f64 },
    #[error("unknown VFP `{0}`")]
    UnknownVfp(String),
    #[error(
        "first-order response did not converge after {iterations} iterations \
         (last shared-power change {last_change:.3e}); cobweb verdicts: {}",
        format_verdicts(.cobweb)
    )]
    NotConverged {
        iterations: usize,
        last_change: f64,
        cobweb: Vec<(String, CobwebVerdict)>,
        trace: Box<crate::transmission::FraTrace>,
    },
    #[error(transparent)]
    Qp(#[from] QpError),
    #[error(transparent)]
    Network(#[from] NetworkError),
}

fn format_verdicts(v: &[(String, CobwebVerdict)]) -> String {
    v.iter()
        .map(|(id, verdict)| format!("{id}={verdict}"))
        .collect::<Vec<_>>()
        .join(", ")
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AllocationError {
    #[error("weight of agent `{agent}` became nonpositive ({value})")]
    NonpositiveWeight { agent: String, value: f64 },
    #[error("allocation did not converge within {iterations} iterations (budget gap {gap:.3e})")]
    NotConverged { iterations: usize, gap: f64 },
    #[error("degenerate budget {budget} for a {federation} federation: no feasible spend")]
    DegenerateBudget { budget: f64, federation: String },
    #[error("federation has no agents")]
    NoAgents,
}

#[derive(Debug, Error)]
pub enum CoordinatorError {
    #[error("scenario rejected before iterating:\n{0}")]
    Precondition(String),
    #[error("outer loop did not stabilize budgets after {iterations} iterations (max change {last_change:.3e})")]
    NotConverged {
        iterations: usize,
        last_change: f64,
        partial: Box<crate::coordinator::EquilibriumResult>,
    },
    #[error("transmission level failed at outer iteration {outer}: {source}")]
    Transmission {
        outer: usize,
        #[source]
        source: TransmissionError,
    },
    #[error("allocation in {vfp} failed at outer iteration {outer}: {source}")]
    Allocation {
        vfp: String,
        outer: usize,
        #[source]
        source: AllocationError,
    },
}

#[derive(Debug, Error, Clone, PartialEq)]
#[error("shape mismatch: {0}")]
pub struct ShapeMismatch(pub String);

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("cannot write report to {path}: {source}")]
    Write {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed report file {path}: {message}")]
    Parse { path: String, message: String },
}
