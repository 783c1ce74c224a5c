//! Transmission level: VFP best responses, RTO price clearing and the
//! first-order response loop.

mod fra;
mod model;

use serde::{Deserialize, Serialize};

use crate::network::BusId;
use crate::scenario::{DeviceKind, MarketParams};

pub use fra::{
    check_cobweb, classify_trace, fra_equilibrium, gng_improvements, rto_clear, write_trace_csv, CobwebVerdict,
    FraOutcome, FraTrace, TraceRow,
};
pub use model::{vfp_best_response, Market, RivalContext};

/// Schedule of one device over the horizon.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviceSchedule {
    pub id: String,
    pub kind: DeviceKind,
    pub bus: BusId,
    /// Net output: GT/DG generation, ESS discharge minus charge (MW).
    pub output: Vec<f64>,
    pub charge: Vec<f64>,
    pub discharge: Vec<f64>,
    /// ESS state of charge at the end of each period (MWh).
    pub soc: Vec<f64>,
    /// GT commitment; generation above zero for other kinds.
    pub commitment: Vec<bool>,
}

/// One VFP's decision over the horizon. `shared` is positive for a
/// purchase from the pool.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VfpDecision {
    pub vfp: String,
    pub load: Vec<f64>,
    pub shared: Vec<f64>,
    pub carbon: Vec<f64>,
    pub wholesale_buy: Vec<f64>,
    pub wholesale_sell: Vec<f64>,
    pub production: Vec<f64>,
    pub devices: Vec<DeviceSchedule>,
}

impl VfpDecision {
    pub fn periods(&self) -> usize {
        self.shared.len()
    }

    pub fn wholesale_net(&self, t: usize) -> f64 {
        self.wholesale_buy[t] - self.wholesale_sell[t]
    }

    pub fn kind_total(&self, kind: DeviceKind, t: usize) -> f64 {
        self.devices
            .iter()
            .filter(|d| d.kind == kind)
            .map(|d| d.output[t])
            .sum()
    }

    /// GT and DG generation over the day, the quantity under the regional cap.
    pub fn capped_generation(&self) -> f64 {
        self.devices
            .iter()
            .filter(|d| d.kind != DeviceKind::Ess)
            .flat_map(|d| d.output.iter())
            .sum()
    }
}

/// Shared-electricity and carbon prices per VFP (scenario order) and period.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriceSignal {
    pub vfps: Vec<String>,
    pub shared: Vec<Vec<f64>>,
    pub carbon: Vec<Vec<f64>>,
    /// Σ P_s − Σ P_w per period, reported only.
    pub balance_residual: Vec<f64>,
}

impl PriceSignal {
    pub fn index(&self, vfp: &str) -> Option<usize> {
        self.vfps.iter().position(|v| v == vfp)
    }
}

/// Per-period and daily value of a VFP's transactions (¥). Positive means
/// spend, negative means revenue.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Budget {
    pub per_period: Vec<f64>,
    pub total: f64,
}

pub fn compute_vfp_budget(
    decision: &VfpDecision,
    shared_price: &[f64],
    carbon_price: &[f64],
    market: &MarketParams,
) -> Budget {
    let n = decision.periods();
    let buy = market.wholesale_buy.values(n);
    let sell = market.wholesale_sell.values(n);
    let per_period: Vec<f64> = (0..n)
        .map(|t| {
            shared_price[t] * decision.shared[t]
                + carbon_price[t] * decision.carbon[t]
                + buy[t] * decision.wholesale_buy[t]
                - sell[t] * decision.wholesale_sell[t]
        })
        .collect();
    let total = per_period.iter().sum();
    Budget { per_period, total }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::Profile;

    fn decision(shared: f64, carbon: f64, buy: f64) -> VfpDecision {
        VfpDecision {
            vfp: "A".into(),
            load: vec![0.0],
            shared: vec![shared],
            carbon: vec![carbon],
            wholesale_buy: vec![buy],
            wholesale_sell: vec![0.0],
            production: vec![0.0],
            devices: vec![],
        }
    }

    fn market() -> MarketParams {
        MarketParams {
            wholesale_buy: Profile::Constant(7.0),
            wholesale_sell: Profile::Constant(1.0),
            carbon_cap: 0.0,
            carbon_power_base: 1.0,
        }
    }

    #[test]
    fn budget_examples() {
        let m = market();
        let zero = compute_vfp_budget(&decision(0.0, 0.0, 0.0), &[5.0], &[2.0], &m);
        assert_eq!(zero.total, 0.0);
        let b = compute_vfp_budget(&decision(10.0, 3.0, 0.0), &[5.0], &[2.0], &m);
        assert_eq!(b.total, 56.0);
        let b = compute_vfp_budget(&decision(10.0, 3.0, 4.0), &[5.0], &[2.0], &m);
        assert_eq!(b.total, 84.0);
    }
}
