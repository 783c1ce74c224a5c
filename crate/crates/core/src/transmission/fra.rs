//! RTO clearing and the first-order response loop.

use std::fmt;
use std::io::{self, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::TransmissionError;
use crate::scenario::Scenario;

use super::{compute_vfp_budget, Budget, Market, PriceSignal, VfpDecision};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CobwebVerdict {
    Converges,
    Marginal,
    Diverges,
    /// The VFP has no production to respond with.
    Inelastic,
}

impl fmt::Display for CobwebVerdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Converges => "converges",
            Self::Marginal => "marginal",
            Self::Diverges => "diverges",
            Self::Inelastic => "inelastic",
        })
    }
}

/// Compares each VFP's production cost curvature with its demand slope.
pub fn check_cobweb(scenario: &Scenario) -> Vec<(String, CobwebVerdict)> {
    scenario
        .vfp
        .iter()
        .map(|(id, v)| {
            let verdict = if scenario.devices_of(id).next().is_none() {
                CobwebVerdict::Inelastic
            } else {
                let curvature = 2.0 * v.cost_quadratic;
                if curvature > v.beta {
                    CobwebVerdict::Converges
                } else if curvature == v.beta {
                    CobwebVerdict::Marginal
                } else {
                    CobwebVerdict::Diverges
                }
            };
            (id.clone(), verdict)
        })
        .collect()
}

/// Classifies a sequence of per-iteration shared-power changes by the
/// geometric mean of its first few amplitude ratios.
pub fn classify_trace(changes: &[f64]) -> CobwebVerdict {
    let mut log_sum = 0.0;
    let mut count = 0;
    for w in changes.windows(2).take(6) {
        if w[0] <= 1e-12 {
            break;
        }
        log_sum += (w[1].max(1e-300) / w[0]).ln();
        count += 1;
    }
    if count == 0 {
        return CobwebVerdict::Converges;
    }
    let g = (log_sum / count as f64).exp();
    if g < 0.97 {
        CobwebVerdict::Converges
    } else if g <= 1.03 {
        CobwebVerdict::Marginal
    } else {
        CobwebVerdict::Diverges
    }
}

/// Prices from the inverse demand relation and the carbon first-order
/// condition. `decisions` must follow the scenario's VFP order.
pub fn rto_clear(scenario: &Scenario, decisions: &[VfpDecision]) -> PriceSignal {
    let n = decisions.first().map_or(scenario.periods(), |d| d.periods());
    let base = scenario.market.carbon_power_base;
    let mut total = vec![0.0; n];
    let mut balance = vec![0.0; n];
    for d in decisions {
        for t in 0..n {
            total[t] += d.shared[t];
            balance[t] += d.shared[t] - d.wholesale_net(t);
        }
    }
    let mut shared = Vec::with_capacity(decisions.len());
    let mut carbon = Vec::with_capacity(decisions.len());
    for d in decisions {
        let spec = &scenario.vfp[&d.vfp];
        let ls: Vec<f64> = total.iter().map(|s| spec.alpha + spec.beta * s).collect();
        let lc = (0..n)
            .map(|t| {
                if spec.emission_factor > 0.0 {
                    -ls[t] * d.shared[t] / (spec.emission_factor * base)
                } else {
                    0.0
                }
            })
            .collect();
        shared.push(ls);
        carbon.push(lc);
    }
    PriceSignal {
        vfps: decisions.iter().map(|d| d.vfp.clone()).collect(),
        shared,
        carbon,
        balance_residual: balance,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub iteration: usize,
    pub vfp: String,
    pub period: usize,
    pub shared: f64,
    pub price: f64,
    pub carbon_price: f64,
    pub budget: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct FraTrace {
    pub rows: Vec<TraceRow>,
    /// Largest shared-power change of each sweep.
    pub changes: Vec<f64>,
}

impl FraTrace {
    pub fn observed(&self) -> CobwebVerdict {
        classify_trace(&self.changes)
    }

    fn record(&mut self, iteration: usize, decisions: &[VfpDecision], prices: &PriceSignal, budgets: &[Budget]) {
        for (i, d) in decisions.iter().enumerate() {
            for t in 0..d.periods() {
                self.rows.push(TraceRow {
                    iteration,
                    vfp: d.vfp.clone(),
                    period: t + 1,
                    shared: d.shared[t],
                    price: prices.shared[i][t],
                    carbon_price: prices.carbon[i][t],
                    budget: budgets[i].per_period[t],
                });
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FraOutcome {
    pub decisions: Vec<VfpDecision>,
    pub prices: PriceSignal,
    pub budgets: Vec<Budget>,
    pub iterations: usize,
    pub last_change: f64,
    pub trace: FraTrace,
}

fn budgets(market: &Market, decisions: &[VfpDecision], prices: &PriceSignal) -> Vec<Budget> {
    decisions
        .iter()
        .enumerate()
        .map(|(i, d)| compute_vfp_budget(d, &prices.shared[i], &prices.carbon[i], &market.scenario.market))
        .collect()
}

fn sweep(
    market: &Market,
    decisions: &[VfpDecision],
    prices: &PriceSignal,
) -> Result<Vec<VfpDecision>, TransmissionError> {
    (0..decisions.len())
        .into_par_iter()
        .map(|i| {
            let ctx = market.context(i, decisions);
            market.best_response(i, &prices.shared[i], &prices.carbon[i], &ctx)
        })
        .collect()
}

/// Jacobi first-order response: clear prices, let every VFP respond, and
/// repeat until no shared power moves by `tol_transmission` or more.
pub fn fra_equilibrium(market: &Market, start: Option<&[VfpDecision]>) -> Result<FraOutcome, TransmissionError> {
    let scenario = market.scenario;
    let verdicts = check_cobweb(scenario);
    for (id, v) in &verdicts {
        if matches!(v, CobwebVerdict::Marginal | CobwebVerdict::Diverges) {
            log::warn!("{id}: cobweb condition {v}; the response loop may not settle");
        }
    }
    let tol = scenario.algorithm.tol_transmission;
    let mut decisions: Vec<VfpDecision> = match start {
        Some(s) => s.to_vec(),
        None => (0..market.ids.len()).map(|i| market.idle(i)).collect(),
    };
    let mut prices = rto_clear(scenario, &decisions);
    let mut trace = FraTrace::default();
    trace.record(0, &decisions, &prices, &budgets(market, &decisions, &prices));

    let mut last_change = f64::INFINITY;
    for k in 1..=scenario.algorithm.max_fra {
        let next = sweep(market, &decisions, &prices)?;
        last_change = next
            .iter()
            .zip(&decisions)
            .flat_map(|(a, b)| a.shared.iter().zip(&b.shared).map(|(x, y)| (x - y).abs()))
            .fold(0.0, f64::max);
        decisions = next;
        prices = rto_clear(scenario, &decisions);
        let b = budgets(market, &decisions, &prices);
        trace.record(k, &decisions, &prices, &b);
        trace.changes.push(last_change);
        log::debug!("fra sweep {k}: max shared-power change {last_change:.3e}");
        if last_change < tol {
            return Ok(FraOutcome {
                decisions,
                prices,
                budgets: b,
                iterations: k,
                last_change,
                trace,
            });
        }
    }
    Err(TransmissionError::NotConverged {
        iterations: scenario.algorithm.max_fra,
        last_change,
        cobweb: verdicts,
        trace: Box::new(trace),
    })
}

/// How much each VFP could lower its objective by re-optimizing once more
/// at the returned prices.
pub fn gng_improvements(market: &Market, outcome: &FraOutcome) -> Result<Vec<f64>, TransmissionError> {
    let again = sweep(market, &outcome.decisions, &outcome.prices)?;
    Ok(again
        .iter()
        .enumerate()
        .map(|(i, d)| {
            let (s, c) = (&outcome.prices.shared[i], &outcome.prices.carbon[i]);
            market.objective(i, &outcome.decisions[i], s, c) - market.objective(i, d, s, c)
        })
        .collect())
}

/// Writes the per-iteration trace as CSV.
pub fn write_trace_csv(trace: &FraTrace, mut out: impl Write) -> io::Result<()> {
    writeln!(
        out,
        "# shared_power > 0 is a purchase from the pool (MW); prices in ¥/MWh and ¥/t; budget in ¥"
    )?;
    writeln!(
        out,
        "iteration,vfp,period,shared_power,shared_price,carbon_price,budget"
    )?;
    for r in &trace.rows {
        writeln!(
            out,
            "{},{},{},{},{},{},{}",
            r.iteration, r.vfp, r.period, r.shared, r.price, r.carbon_price, r.budget
        )?;
    }
    Ok(())
}
