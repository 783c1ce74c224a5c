//! Hierarchical electricity and carbon market clearing for virtual
//! federated prosumers.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod allocation;
pub mod coordinator;
pub mod error;
pub mod network;
pub mod qp;
pub mod report;
pub mod scenario;
pub mod transmission;

pub use allocation::{AgentAllocation, AllocationSignal, AllocationState};
pub use coordinator::{run_hierarchical, ConfigurationSummary, EquilibriumResult};
pub use network::{BusId, FlowState, Line, NetworkTopology};
pub use scenario::{
    load_scenario, parse_scenario, validate_scenario, AgentSpec, AlgorithmParams, DeviceKind, DeviceSpec, Federation,
    MarketParams, Role, Scenario, VfpSpec, WeightsVariant,
};
pub use transmission::{Budget, CobwebVerdict, DeviceSchedule, PriceSignal, VfpDecision};
