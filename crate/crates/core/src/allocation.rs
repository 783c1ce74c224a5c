//! Distribution level: budget allocation among the agents of one VFP by
//! benchmark-price and weight feedback.
//!
//! Every federation is solved in an oriented form. A federation that spends
//! (Γ ≥ 0) charges its agents for net consumption; one that earns (Γ < 0)
//! pays them for net supply. With orientation `σ = ±1` the spendable budget
//! is `B = σΓ ≥ 0` and each agent's oriented quantity is `x = σ·(e_n − e_m)`.

use std::io::{self, Write};

use serde::{Deserialize, Serialize};

use crate::error::AllocationError;
use crate::scenario::{AgentSpec, AlgorithmParams, Federation, Role, WeightsVariant};

/// Weights and benchmark price issued to the agents.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AllocationSignal {
    pub weights: Vec<f64>,
    pub mu: f64,
}

/// Demand and supply of one agent facing effective unit price `kappa`.
pub fn agent_best_response(agent: &AgentSpec, kappa: f64) -> (f64, f64) {
    let demand = match (agent.role, agent.consumer()) {
        (Role::Consumer | Role::Prosumer, Some(c)) => ((c.v - kappa) / c.omega).clamp(c.min, c.max),
        _ => 0.0,
    };
    let supply = match (agent.role, agent.producer()) {
        (Role::Producer | Role::Prosumer, Some(p)) => {
            ((kappa - p.b - p.carbon_marginal()) / (2.0 * p.a)).clamp(p.min, p.max)
        }
        _ => 0.0,
    };
    (demand, supply)
}

/// One benchmark price step; the flag is set when the price had to be
/// clamped at zero.
pub fn update_benchmark_price(mu: f64, shares_sum: f64, budget: f64, delta: f64) -> (f64, bool) {
    let next = mu - delta * (shares_sum - budget);
    if next < 0.0 {
        (0.0, true)
    } else {
        (next, false)
    }
}

/// One weight step. `shares` are the per-agent spends `p·μ·x`.
pub fn update_weights(
    ids: &[String],
    role: Federation,
    weights: &[f64],
    shares: &[f64],
    budget: f64,
    step: f64,
    variant: WeightsVariant,
) -> Result<Vec<f64>, AllocationError> {
    let n = weights.len() as f64;
    let total: f64 = shares.iter().sum();
    let next: Vec<f64> = match variant {
        WeightsVariant::Proportional => {
            if budget == 0.0 {
                weights.to_vec()
            } else {
                // Mixed-sign shares are scaled by their gross total.
                let scale = budget.max(shares.iter().map(|g| g.abs()).sum());
                let raw: Vec<f64> = weights
                    .iter()
                    .zip(shares)
                    .map(|(p, g)| p * (1.0 + step * (budget / n - g) / scale))
                    .collect();
                if let Some(k) = raw.iter().position(|p| !(*p > 0.0)) {
                    return Err(AllocationError::NonpositiveWeight {
                        agent: ids[k].clone(),
                        value: raw[k],
                    });
                }
                let mean = raw.iter().sum::<f64>() / n;
                raw.iter().map(|p| p / mean).collect()
            }
        }
        WeightsVariant::Literal => {
            let norm = weights.iter().map(|p| p * p).sum::<f64>().sqrt();
            let drift = match role {
                Federation::Consumers => step * (budget - total) / (n * budget),
                Federation::Producers => step * ((n - 2.0) * budget - total) / ((n - 1.0).powi(2) * budget),
                Federation::Prosumers => step * (budget - total) / (n * budget),
            };
            weights.iter().map(|p| p + drift - p / norm).collect()
        }
    };
    if let Some(k) = next.iter().position(|p| !(*p > 0.0)) {
        return Err(AllocationError::NonpositiveWeight {
            agent: ids[k].clone(),
            value: next[k],
        });
    }
    Ok(next)
}

#[derive(Debug, Clone, PartialEq)]
pub struct AllocationParams {
    pub price_step: f64,
    pub weight_step: f64,
    pub tol: f64,
    pub max_inner: usize,
    pub max_outer: usize,
    pub variant: WeightsVariant,
    /// Starting benchmark price; defaults to budget over nominal quantity.
    pub initial_mu: Option<f64>,
}

impl From<&AlgorithmParams> for AllocationParams {
    fn from(a: &AlgorithmParams) -> Self {
        Self {
            price_step: a.price_step,
            weight_step: a.weight_step,
            tol: a.tol_allocation,
            max_inner: a.max_dfaa_inner,
            max_outer: a.max_dfaa_outer,
            variant: a.weights_variant,
            initial_mu: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentAllocation {
    pub id: String,
    pub role: Role,
    pub weight: f64,
    /// Effective unit price `p·μ`.
    pub price: f64,
    pub demand: f64,
    pub supply: f64,
    /// Budget share `p·μ·x` in the federation's orientation.
    pub share: f64,
    /// Value of energy use `v·e − ω·e²/2` (zero for pure producers).
    pub utility: f64,
    #[serde(skip)]
    spec: Option<AgentSpec>,
}

impl AgentAllocation {
    pub fn net(&self) -> f64 {
        self.demand - self.supply
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AllocationState {
    pub vfp: String,
    pub federation: Federation,
    /// +1 when the federation spends, −1 when it earns.
    pub orientation: f64,
    /// Signed budget Γ.
    pub budget: f64,
    pub mu: f64,
    pub agents: Vec<AgentAllocation>,
    pub inner_iterations: usize,
    pub outer_iterations: usize,
    /// The benchmark price hit zero at least once.
    pub clamped: bool,
    /// Benchmark prices of further fixed points found by a price scan.
    pub other_fixed_points: Vec<f64>,
}

impl AllocationState {
    pub fn weights(&self) -> Vec<f64> {
        self.agents.iter().map(|a| a.weight).collect()
    }

    pub fn total_share(&self) -> f64 {
        self.agents.iter().map(|a| a.share).sum()
    }
}

pub fn utility(agent: &AgentSpec, demand: f64) -> f64 {
    agent
        .consumer()
        .map_or(0.0, |c| c.v * demand - 0.5 * c.omega * demand * demand)
}

fn orientation(federation: Federation, budget: f64, vfp: &str) -> Result<f64, AllocationError> {
    match federation {
        Federation::Consumers if budget < 0.0 => Err(AllocationError::DegenerateBudget {
            budget,
            federation: format!("{federation} ({vfp})"),
        }),
        Federation::Producers if budget > 0.0 => Err(AllocationError::DegenerateBudget {
            budget,
            federation: format!("{federation} ({vfp})"),
        }),
        Federation::Consumers => Ok(1.0),
        Federation::Producers => Ok(-1.0),
        Federation::Prosumers => Ok(if budget >= 0.0 { 1.0 } else { -1.0 }),
    }
}

/// Oriented quantities and total spend at signal `(weights, mu)`.
fn respond(agents: &[(String, AgentSpec)], weights: &[f64], mu: f64, sigma: f64) -> (Vec<(f64, f64)>, f64) {
    let mut spend = 0.0;
    let resp: Vec<(f64, f64)> = agents
        .iter()
        .zip(weights)
        .map(|((_, a), &p)| {
            let (d, s) = agent_best_response(a, p * mu);
            spend += p * mu * sigma * (d - s);
            (d, s)
        })
        .collect();
    (resp, spend)
}

/// Distributed feedback allocation of the signed budget `budget` among
/// `agents` of one federation.
pub fn dfaa_equilibrium(
    vfp: &str,
    federation: Federation,
    agents: &[(String, AgentSpec)],
    budget: f64,
    params: &AllocationParams,
) -> Result<AllocationState, AllocationError> {
    if agents.is_empty() {
        return Err(AllocationError::NoAgents);
    }
    let sigma = orientation(federation, budget, vfp)?;
    let target = sigma * budget;
    let ids: Vec<String> = agents.iter().map(|(id, _)| id.clone()).collect();
    let n = agents.len();
    let gap_tol = params.tol * target.abs().max(1.0);

    let mut weights = vec![1.0; n];
    let mut mu = params.initial_mu.unwrap_or_else(|| {
        let nominal: f64 = agents.iter().map(|(_, a)| sigma * a.nominal).sum();
        if nominal > 0.0 {
            target / nominal
        } else {
            1.0
        }
    });
    let mut clamped = false;
    let mut inner_total = 0;

    for outer in 1..=params.max_outer {
        let mut converged = false;
        let mut gap = f64::INFINITY;
        for _ in 0..params.max_inner {
            let (_, spend) = respond(agents, &weights, mu, sigma);
            gap = spend - target;
            if gap.abs() < gap_tol {
                converged = true;
                break;
            }
            inner_total += 1;
            let (next, hit) = update_benchmark_price(mu, spend, target, params.price_step);
            clamped |= hit;
            if hit && mu == 0.0 {
                break;
            }
            mu = next;
        }
        if !converged {
            return Err(AllocationError::NotConverged {
                iterations: inner_total,
                gap: gap.abs(),
            });
        }

        let (resp, _) = respond(agents, &weights, mu, sigma);
        let shares: Vec<f64> = resp
            .iter()
            .zip(&weights)
            .map(|((d, s), p)| p * mu * sigma * (d - s))
            .collect();
        let next = if target.abs() < gap_tol {
            weights.clone()
        } else {
            update_weights(
                &ids,
                federation,
                &weights,
                &shares,
                target,
                params.weight_step,
                params.variant,
            )?
        };
        let change: f64 = next.iter().zip(&weights).map(|(a, b)| (a - b).abs()).sum();
        if change < params.tol {
            let agents_out = agents
                .iter()
                .zip(&weights)
                .zip(resp.iter().zip(&shares))
                .map(|(((id, a), &p), (&(d, s), &share))| AgentAllocation {
                    id: id.clone(),
                    role: a.role,
                    weight: p,
                    price: p * mu,
                    demand: d,
                    supply: s,
                    share,
                    utility: utility(a, d),
                    spec: Some(a.clone()),
                })
                .collect();
            let other_fixed_points = scan_fixed_points(agents, &weights, sigma, target, mu);
            return Ok(AllocationState {
                vfp: vfp.to_string(),
                federation,
                orientation: sigma,
                budget,
                mu,
                agents: agents_out,
                inner_iterations: inner_total,
                outer_iterations: outer,
                clamped,
                other_fixed_points,
            });
        }
        weights = next;
    }
    let (_, spend) = respond(agents, &weights, mu, sigma);
    Err(AllocationError::NotConverged {
        iterations: inner_total,
        gap: (spend - target).abs(),
    })
}

/// Other benchmark prices at which the spend also meets the budget for the
/// final weights, located by sign changes on a price grid.
fn scan_fixed_points(agents: &[(String, AgentSpec)], weights: &[f64], sigma: f64, target: f64, found: f64) -> Vec<f64> {
    let mut hi = found.max(1.0);
    for ((_, a), p) in agents.iter().zip(weights) {
        if let Some(c) = a.consumer() {
            hi = hi.max(c.v / p);
        }
        if let Some(q) = a.producer() {
            hi = hi.max((q.b + q.carbon_marginal() + 2.0 * q.a * q.max) / p);
        }
    }
    hi *= 1.5;
    let steps = 4000;
    let h = hi / steps as f64;
    let f = |mu: f64| respond(agents, weights, mu, sigma).1 - target;
    let mut roots = Vec::new();
    let mut prev = f(0.0);
    for k in 1..=steps {
        let mu = k as f64 * h;
        let cur = f(mu);
        if prev == 0.0 || prev.signum() != cur.signum() {
            let root = mu - h / 2.0;
            if (root - found).abs() > 2.0 * h {
                roots.push(root);
            }
        }
        prev = cur;
    }
    roots
}

/// `(|Σ p·μ·x − B|, |μ̄ − Γ/Σe|)`, where `μ̄` is the quantity-weighted
/// average unit price paid by the agents.
pub fn verify_budget_balance(state: &AllocationState) -> Result<(f64, f64), AllocationError> {
    let sigma = state.orientation;
    let spend: f64 = state.agents.iter().map(|a| a.weight * state.mu * sigma * a.net()).sum();
    let total_net: f64 = state.agents.iter().map(AgentAllocation::net).sum();
    let balance = (spend - sigma * state.budget).abs();
    if total_net == 0.0 {
        if state.budget != 0.0 {
            return Err(AllocationError::DegenerateBudget {
                budget: state.budget,
                federation: state.federation.to_string(),
            });
        }
        return Ok((balance, 0.0));
    }
    let average = spend / (sigma * total_net);
    Ok((balance, (average - state.budget / total_net).abs()))
}

/// How an agent's unit price reacts when it deviates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum NashPricing {
    /// Unit price `p·μ` held at the state's value.
    #[default]
    PriceTaking,
    /// Benchmark price re-derived from the budget, `B / Σ p·x`.
    Anticipating,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Deviation {
    pub agent: String,
    pub from: f64,
    pub to: f64,
    pub gain: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NashVerdict {
    pub equilibrium: bool,
    pub worst: Option<Deviation>,
}

fn payoff(agent: &AgentSpec, kappa: f64, demand: f64, supply: f64) -> f64 {
    let mut v = -kappa * (demand - supply);
    if let Some(c) = agent.consumer() {
        v += c.v * demand - 0.5 * c.omega * demand * demand;
    }
    if let Some(p) = agent.producer() {
        v -= p.a * supply * supply + (p.b + p.carbon_marginal()) * supply;
    }
    v
}

fn grid(lo: f64, hi: f64, step: f64) -> impl Iterator<Item = f64> {
    let n = ((hi - lo) / step).floor().max(0.0) as usize;
    (0..=n).map(move |k| lo + k as f64 * step).chain(std::iter::once(hi))
}

/// Scans every agent's unilateral deviations on a grid and reports the
/// largest payoff gain. Demand and supply of a prosumer are scanned
/// separately since its payoff is separable at a fixed unit price.
pub fn verify_nash(state: &AllocationState, step: f64, tol: f64, pricing: NashPricing) -> NashVerdict {
    let sigma = state.orientation;
    let budget = sigma * state.budget;
    let spend_of = |skip: usize| -> f64 {
        state
            .agents
            .iter()
            .enumerate()
            .filter(|(k, _)| *k != skip)
            .map(|(_, a)| a.weight * sigma * a.net())
            .sum()
    };
    let mut worst: Option<Deviation> = None;
    for (k, a) in state.agents.iter().enumerate() {
        let Some(spec) = a.spec.as_ref() else { continue };
        let kappa_at = |demand: f64, supply: f64| match pricing {
            NashPricing::PriceTaking => a.price,
            NashPricing::Anticipating => {
                let weighted = spend_of(k) + a.weight * sigma * (demand - supply);
                if weighted > 0.0 {
                    a.weight * budget / weighted
                } else {
                    a.price
                }
            }
        };
        let base = payoff(spec, kappa_at(a.demand, a.supply), a.demand, a.supply);
        let mut consider = |demand: f64, supply: f64, to: f64| {
            let gain = payoff(spec, kappa_at(demand, supply), demand, supply) - base;
            if worst.as_ref().is_none_or(|w| gain > w.gain) {
                worst = Some(Deviation {
                    agent: a.id.clone(),
                    from: a.net(),
                    to,
                    gain,
                });
            }
        };
        if let Some(c) = spec.consumer() {
            for d in grid(c.min, c.max, step) {
                consider(d, a.supply, d - a.supply);
            }
        }
        if let Some(p) = spec.producer() {
            for s in grid(p.min, p.max, step) {
                consider(a.demand, s, a.demand - s);
            }
        }
    }
    NashVerdict {
        equilibrium: worst.as_ref().is_none_or(|w| w.gain <= tol),
        worst,
    }
}

/// Net energy `Σ e_n − Σ e_m` handed back to the transmission level.
pub fn aggregate_energy(state: &AllocationState) -> f64 {
    state.agents.iter().map(AgentAllocation::net).sum()
}

/// Writes the per-node allocation table: node id, budget share and value of
/// energy use.
pub fn write_allocation_table(states: &[AllocationState], mut out: impl Write) -> io::Result<()> {
    writeln!(
        out,
        "# share in ¥ signed like the VFP budget: positive = spend, negative = revenue"
    )?;
    writeln!(out, "vfp,node,role,weight,unit_price,demand,supply,share,value_of_use")?;
    for s in states {
        for a in &s.agents {
            writeln!(
                out,
                "{},{},{},{},{},{},{},{},{}",
                s.vfp,
                a.id,
                a.role,
                a.weight,
                a.price,
                a.demand,
                a.supply,
                s.orientation * a.share,
                a.utility
            )?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn consumer(v: f64, omega: f64, max: f64) -> AgentSpec {
        AgentSpec {
            vfp: "A".into(),
            role: Role::Consumer,
            v: Some(v),
            omega: Some(omega),
            demand_min: Some(0.0),
            demand_max: Some(max),
            a: None,
            b: None,
            carbon_cost: None,
            emission_factor: None,
            supply_min: None,
            supply_max: None,
            nominal: 0.0,
        }
    }

    fn producer(a: f64, b: f64, max: f64) -> AgentSpec {
        AgentSpec {
            role: Role::Producer,
            v: None,
            omega: None,
            demand_min: None,
            demand_max: None,
            a: Some(a),
            b: Some(b),
            supply_min: Some(0.0),
            supply_max: Some(max),
            ..consumer(0.0, 1.0, 0.0)
        }
    }

    fn params(mu: f64, delta: f64) -> AllocationParams {
        AllocationParams {
            price_step: delta,
            weight_step: 0.5,
            tol: 1e-10,
            max_inner: 1_000_000,
            max_outer: 500,
            variant: WeightsVariant::Proportional,
            initial_mu: Some(mu),
        }
    }

    #[test]
    fn best_response_examples() {
        assert_eq!(agent_best_response(&consumer(4.0, 2.0, 10.0), 4.0), (0.0, 0.0));
        assert_eq!(agent_best_response(&consumer(10.0, 2.0, 10.0), 4.0).0, 3.0);
        assert_eq!(agent_best_response(&producer(1.0, 2.0, 10.0), 10.0).1, 4.0);
    }

    #[test]
    fn price_step_examples() {
        assert_eq!(update_benchmark_price(3.0, 10.0, 10.0, 0.1), (3.0, false));
        let (mu, hit) = update_benchmark_price(5.0, 12.0, 10.0, 0.1);
        assert!((mu - 4.8).abs() < 1e-12 && !hit);
        assert_eq!(update_benchmark_price(0.1, 10.0, 0.0, 1.0), (0.0, true));
    }

    #[test]
    fn weight_step_examples() {
        let ids = vec!["a".to_string(), "b".to_string()];
        let same = update_weights(
            &ids,
            Federation::Consumers,
            &[1.0, 1.0],
            &[5.0, 5.0],
            10.0,
            0.5,
            WeightsVariant::Proportional,
        )
        .unwrap();
        assert_eq!(same, vec![1.0, 1.0]);
        let w = update_weights(
            &ids,
            Federation::Consumers,
            &[1.0, 1.0],
            &[6.0, 4.0],
            10.0,
            0.5,
            WeightsVariant::Proportional,
        )
        .unwrap();
        assert!((w[0] - 0.95).abs() < 1e-12 && (w[1] - 1.05).abs() < 1e-12);
        let one = vec!["a".to_string()];
        let lit = update_weights(
            &one,
            Federation::Consumers,
            &[1.0],
            &[10.0],
            10.0,
            0.5,
            WeightsVariant::Literal,
        );
        assert_eq!(
            lit,
            Err(AllocationError::NonpositiveWeight {
                agent: "a".into(),
                value: 0.0
            })
        );
    }

    #[test]
    fn single_consumer_tangent_budget() {
        let agents = vec![("n".to_string(), consumer(10.0, 1.0, 100.0))];
        let mut p = params(1.0, 0.1);
        p.tol = 1e-6;
        let s = dfaa_equilibrium("A", Federation::Consumers, &agents, 25.0, &p).unwrap();
        assert!((s.mu - 5.0).abs() < 1e-2, "{}", s.mu);
        assert!((s.agents[0].demand - 5.0).abs() < 1e-2);
    }

    #[test]
    fn zero_budget_without_value() {
        let agents = vec![("n".to_string(), consumer(0.0, 1.0, 10.0))];
        let s = dfaa_equilibrium("A", Federation::Consumers, &agents, 0.0, &params(3.0, 0.1)).unwrap();
        assert_eq!(s.mu, 3.0);
        assert_eq!(s.agents[0].demand, 0.0);
    }

    #[test]
    fn two_consumers_reach_stable_root() {
        let agents = vec![
            ("a".to_string(), consumer(10.0, 1.0, 100.0)),
            ("b".to_string(), consumer(10.0, 1.0, 100.0)),
        ];
        let s = dfaa_equilibrium("A", Federation::Consumers, &agents, 32.0, &params(3.0, 0.05)).unwrap();
        assert!((s.mu - 2.0).abs() < 1e-8);
        for a in &s.agents {
            assert!((a.demand - 8.0).abs() < 1e-8);
            assert!((a.share - 16.0).abs() < 1e-7);
        }
        assert_eq!(s.other_fixed_points.len(), 1);
        assert!((s.other_fixed_points[0] - 8.0).abs() < 0.01);

        let (b, l) = verify_budget_balance(&s).unwrap();
        assert!(b < 1e-8 && l < 1e-8);
        let mut shifted = s.clone();
        shifted.agents[0].demand += 1.0;
        let (b, _) = verify_budget_balance(&shifted).unwrap();
        assert!((b - 2.0).abs() < 1e-7);

        let v = verify_nash(&s, 0.01, 1e-4, NashPricing::PriceTaking);
        assert!(v.equilibrium, "{v:?}");
        let mut off = s.clone();
        for a in &mut off.agents {
            a.demand = 4.0;
        }
        let v = verify_nash(&off, 0.01, 1e-4, NashPricing::PriceTaking);
        assert!(!v.equilibrium);
        let w = v.worst.unwrap();
        assert!((w.to - 8.0).abs() < 1e-9 && (w.gain - 8.0).abs() < 1e-9);
    }

    #[test]
    fn producers_earn_revenue_target() {
        let agents = vec![
            ("a".to_string(), producer(1.0, 2.0, 50.0)),
            ("b".to_string(), producer(0.5, 3.0, 50.0)),
        ];
        let s = dfaa_equilibrium("A", Federation::Producers, &agents, -60.0, &params(5.0, 0.01)).unwrap();
        assert_eq!(s.orientation, -1.0);
        assert!((s.total_share() - 60.0).abs() < 1e-7);
        assert!((s.agents[0].share - s.agents[1].share).abs() < 1e-6);
        assert!(aggregate_energy(&s) < 0.0);
        let (b, l) = verify_budget_balance(&s).unwrap();
        assert!(b < 1e-7 && l < 1e-7, "{b} {l}");
        assert!(verify_nash(&s, 0.01, 1e-4, NashPricing::PriceTaking).equilibrium);
    }

    #[test]
    fn wrong_sign_budget_is_degenerate() {
        let agents = vec![("a".to_string(), producer(1.0, 2.0, 50.0))];
        assert!(matches!(
            dfaa_equilibrium("A", Federation::Producers, &agents, 10.0, &params(1.0, 0.1)),
            Err(AllocationError::DegenerateBudget { .. })
        ));
        assert_eq!(
            dfaa_equilibrium("A", Federation::Consumers, &[], 10.0, &params(1.0, 0.1)),
            Err(AllocationError::NoAgents)
        );
    }

    #[test]
    fn aggregate_examples() {
        let agents = vec![
            ("a".to_string(), consumer(10.0, 1.0, 100.0)),
            ("b".to_string(), consumer(10.0, 1.0, 100.0)),
        ];
        let mut s = dfaa_equilibrium("A", Federation::Consumers, &agents, 32.0, &params(3.0, 0.05)).unwrap();
        s.agents[0].demand = 3.0;
        s.agents[1].demand = 5.0;
        assert_eq!(aggregate_energy(&s), 8.0);
        s.agents[1].supply = 4.0;
        assert_eq!(aggregate_energy(&s), 4.0);
        s.agents.clear();
        assert_eq!(aggregate_energy(&s), 0.0);
    }
}
