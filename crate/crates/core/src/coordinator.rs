//! Outer alternation between transmission clearing and distribution
//! allocation.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::allocation::{
    aggregate_energy, dfaa_equilibrium, utility, verify_budget_balance, AllocationParams, AllocationState,
};
use crate::error::{CoordinatorError, ShapeMismatch};
use crate::network::check_line_limits;
use crate::scenario::{feasibility_window, validate_scenario, DeviceKind, Role, Scenario};
use crate::transmission::{
    compute_vfp_budget, fra_equilibrium, Budget, FraOutcome, FraTrace, Market, PriceSignal, VfpDecision,
};

/// True iff every entry of `current` is within `tol` of `previous`.
pub fn budget_convergence(current: &[Vec<f64>], previous: &[Vec<f64>], tol: f64) -> Result<bool, ShapeMismatch> {
    Ok(budget_change(current, previous)? < tol)
}

/// Max-norm of the difference between two budget tables.
pub fn budget_change(current: &[Vec<f64>], previous: &[Vec<f64>]) -> Result<f64, ShapeMismatch> {
    if current.len() != previous.len() {
        return Err(ShapeMismatch(format!(
            "{} VFPs against {}",
            current.len(),
            previous.len()
        )));
    }
    let mut change: f64 = 0.0;
    for (k, (a, b)) in current.iter().zip(previous).enumerate() {
        if a.len() != b.len() {
            return Err(ShapeMismatch(format!(
                "VFP #{k}: {} periods against {}",
                a.len(),
                b.len()
            )));
        }
        for (x, y) in a.iter().zip(b) {
            change = change.max((x - y).abs());
        }
    }
    Ok(change)
}

/// Daily flexible energy handed to transmission clearing for each VFP:
/// the aggregate of its agents, or the nominal value when it has none.
pub fn flexible_energies(scenario: &Scenario, allocations: &[Option<AllocationState>]) -> Vec<f64> {
    scenario
        .vfp_ids()
        .iter()
        .zip(allocations)
        .map(|(id, a)| a.as_ref().map_or_else(|| scenario.nominal_energy(id), aggregate_energy))
        .collect()
}

/// One outer iteration as seen from one VFP.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OuterRow {
    pub iteration: usize,
    pub vfp: String,
    pub energy: f64,
    pub budget: f64,
    pub fra_iterations: usize,
    pub change: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Residuals {
    /// Last shared-power change of the final transmission solve.
    pub transmission_change: f64,
    /// Largest line flow outside its limits (0 when all hold).
    pub line_violation: f64,
    /// Largest |Σ P_s − Σ P_w| over periods.
    pub pool_balance: f64,
    /// Largest |Σ p·μ·x − B| over VFPs.
    pub allocation_balance: f64,
    /// Largest gap to the average-price identity over VFPs.
    pub allocation_price: f64,
    /// Max-norm budget change of the last outer iteration.
    pub outer_change: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EquilibriumResult {
    pub decisions: Vec<VfpDecision>,
    pub prices: PriceSignal,
    pub budgets: Vec<Budget>,
    /// Allocation per VFP in scenario order; `None` for VFPs without agents.
    pub allocations: Vec<Option<AllocationState>>,
    /// Flexible energy used in the final transmission solve.
    pub energies: Vec<f64>,
    pub outer_iterations: usize,
    pub fra_iterations: usize,
    pub dfaa_iterations: usize,
    pub fra_traces: Vec<FraTrace>,
    pub outer_trace: Vec<OuterRow>,
    pub residuals: Residuals,
}

impl EquilibriumResult {
    pub fn budget_table(&self) -> Vec<Vec<f64>> {
        self.budgets.iter().map(|b| b.per_period.clone()).collect()
    }

    pub fn vfp_index(&self, vfp: &str) -> Option<usize> {
        self.prices.index(vfp)
    }
}

fn check_preconditions(scenario: &Scenario) -> Result<(), CoordinatorError> {
    let window = feasibility_window(scenario);
    if !window.is_empty() {
        let lines: Vec<String> = window.iter().map(ToString::to_string).collect();
        return Err(CoordinatorError::Precondition(lines.join("\n")));
    }
    let report = validate_scenario(scenario);
    if !report.is_empty() {
        return Err(CoordinatorError::Precondition(report.to_string()));
    }
    Ok(())
}

fn allocate(
    scenario: &Scenario,
    budgets: &[Budget],
    previous: &[Option<AllocationState>],
    outer: usize,
) -> Result<Vec<Option<AllocationState>>, CoordinatorError> {
    let base = AllocationParams::from(&scenario.algorithm);
    let ids = scenario.vfp_ids();
    ids.par_iter()
        .enumerate()
        .map(|(i, id)| {
            let agents: Vec<_> = scenario
                .agents_of(id)
                .map(|(a, spec)| (a.clone(), spec.clone()))
                .collect();
            if agents.is_empty() {
                return Ok(None);
            }
            let mut params = base.clone();
            params.initial_mu = previous[i].as_ref().map(|s| s.mu);
            let federation = scenario.vfp[id].federation;
            dfaa_equilibrium(id, federation, &agents, budgets[i].total, &params)
                .map(Some)
                .map_err(|source| CoordinatorError::Allocation {
                    vfp: id.clone(),
                    outer,
                    source,
                })
        })
        .collect()
}

fn residuals(
    market: &Market,
    fra: &FraOutcome,
    allocations: &[Option<AllocationState>],
    outer_change: f64,
) -> Residuals {
    let line_violation = market
        .flows(&fra.decisions)
        .iter()
        .flat_map(|f| check_line_limits(&market.scenario.network, f))
        .map(|v| v.overflow)
        .fold(0.0, f64::max);
    let mut r = Residuals {
        transmission_change: fra.last_change,
        line_violation,
        pool_balance: fra.prices.balance_residual.iter().fold(0.0, |m, x| m.max(x.abs())),
        outer_change,
        ..Default::default()
    };
    for a in allocations.iter().flatten() {
        if let Ok((b, l)) = verify_budget_balance(a) {
            r.allocation_balance = r.allocation_balance.max(b);
            r.allocation_price = r.allocation_price.max(l);
        }
    }
    r
}

/// Alternates transmission clearing and allocation until no VFP budget
/// moves by `tol_outer` between two transmission solves.
pub fn run_hierarchical(scenario: &Scenario) -> Result<EquilibriumResult, CoordinatorError> {
    check_preconditions(scenario)?;
    let ids = scenario.vfp_ids();
    let tol = scenario.algorithm.tol_outer;
    let mut energies: Vec<f64> = ids.iter().map(|id| scenario.nominal_energy(id)).collect();
    let mut allocations: Vec<Option<AllocationState>> = vec![None; ids.len()];
    let mut previous: Option<Vec<Vec<f64>>> = None;
    let mut fra_traces = Vec::new();
    let mut outer_trace = Vec::new();
    let (mut fra_total, mut dfaa_total) = (0, 0);

    for outer in 1..=scenario.algorithm.max_outer {
        let market =
            Market::new(scenario, &energies).map_err(|source| CoordinatorError::Transmission { outer, source })?;
        let fra = fra_equilibrium(&market, None).map_err(|source| CoordinatorError::Transmission { outer, source })?;
        fra_total += fra.iterations;
        let table: Vec<Vec<f64>> = fra.budgets.iter().map(|b| b.per_period.clone()).collect();
        let change = match &previous {
            Some(p) => budget_change(&table, p).expect("budget tables share the scenario's shape"),
            None => f64::INFINITY,
        };
        for (i, id) in ids.iter().enumerate() {
            outer_trace.push(OuterRow {
                iteration: outer,
                vfp: id.clone(),
                energy: energies[i],
                budget: fra.budgets[i].total,
                fra_iterations: fra.iterations,
                change,
            });
        }
        log::info!(
            "outer {outer}: {} FRA sweeps, budget change {change:.3e}",
            fra.iterations
        );
        let finished = change < tol;
        let res = residuals(&market, &fra, &allocations, change);
        fra_traces.push(fra.trace.clone());

        if finished || outer == scenario.algorithm.max_outer {
            let result = EquilibriumResult {
                decisions: fra.decisions,
                prices: fra.prices,
                budgets: fra.budgets,
                allocations,
                energies,
                outer_iterations: outer,
                fra_iterations: fra_total,
                dfaa_iterations: dfaa_total,
                fra_traces,
                outer_trace,
                residuals: res,
            };
            if finished {
                return Ok(result);
            }
            return Err(CoordinatorError::NotConverged {
                iterations: outer,
                last_change: change,
                partial: Box::new(result),
            });
        }

        allocations = allocate(scenario, &fra.budgets, &allocations, outer)?;
        dfaa_total += allocations.iter().flatten().map(|a| a.inner_iterations).sum::<usize>();
        energies = flexible_energies(scenario, &allocations);
        previous = Some(table);
    }
    unreachable!("the loop returns on its last iteration")
}

fn single_pass(scenario: &Scenario, allocate_budgets: bool) -> Result<EquilibriumResult, CoordinatorError> {
    check_preconditions(scenario)?;
    let market = Market::nominal(scenario).map_err(|source| CoordinatorError::Transmission { outer: 1, source })?;
    let fra = fra_equilibrium(&market, None).map_err(|source| CoordinatorError::Transmission { outer: 1, source })?;
    let allocations = if allocate_budgets {
        allocate(scenario, &fra.budgets, &vec![None; market.ids.len()], 1)?
    } else {
        vec![None; market.ids.len()]
    };
    let res = residuals(&market, &fra, &allocations, f64::INFINITY);
    Ok(EquilibriumResult {
        dfaa_iterations: allocations.iter().flatten().map(|a| a.inner_iterations).sum(),
        decisions: fra.decisions,
        prices: fra.prices,
        budgets: fra.budgets,
        allocations,
        energies: market.energies.clone(),
        outer_iterations: 1,
        fra_iterations: fra.iterations,
        fra_traces: vec![fra.trace],
        outer_trace: Vec::new(),
        residuals: res,
    })
}

/// Transmission clearing alone, with every agent at its nominal energy.
pub fn clear_transmission(scenario: &Scenario) -> Result<EquilibriumResult, CoordinatorError> {
    single_pass(scenario, false)
}

/// One transmission clearing at nominal energies followed by one allocation
/// of each VFP's budget.
pub fn allocate_once(scenario: &Scenario) -> Result<EquilibriumResult, CoordinatorError> {
    single_pass(scenario, true)
}

/// Outcome of one market configuration in a comparison run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigurationSummary {
    pub label: String,
    pub vfps: Vec<String>,
    /// Consumer value of energy use `Σ v·e − ω·e²/2` per VFP.
    pub energy_value: Vec<f64>,
    pub flexible_demand: Vec<f64>,
    /// Production cost `h(P_g)` plus GT dispatch cost per VFP.
    pub production_cost: Vec<f64>,
    pub gt_emissions: Vec<f64>,
    /// Daily spend (+) or revenue (−) per VFP at the configuration's prices.
    pub budget: Vec<f64>,
    pub emissions: Vec<f64>,
    pub wholesale_energy: Vec<f64>,
}

impl ConfigurationSummary {
    pub fn total_energy_value(&self) -> f64 {
        self.energy_value.iter().sum()
    }

    pub fn total_gt_emissions(&self) -> f64 {
        self.gt_emissions.iter().sum()
    }
}

/// Consumer value of energy use per VFP with every agent at its nominal
/// energy.
fn nominal_energy_value(scenario: &Scenario) -> Vec<f64> {
    scenario
        .vfp_ids()
        .iter()
        .map(|id| {
            scenario
                .agents_of(id)
                .filter_map(|(_, a)| {
                    let c = a.consumer()?;
                    let d = a.nominal.clamp(c.min, c.max);
                    Some(utility(a, d))
                })
                .sum()
        })
        .collect()
}

fn production_cost(scenario: &Scenario, d: &VfpDecision) -> f64 {
    let spec = &scenario.vfp[&d.vfp];
    let mut total: f64 = d
        .production
        .iter()
        .map(|p| spec.cost_quadratic * p * p + spec.cost_linear * p)
        .sum();
    for dev in d.devices.iter().filter(|x| x.kind == DeviceKind::Gt) {
        let (q, c) = scenario.device[&dev.id].cost();
        total += dev.output.iter().map(|p| q * p * p + c * p).sum::<f64>();
    }
    total
}

fn summarize(
    label: &str,
    scenario: &Scenario,
    energies: &[f64],
    energy_value: Vec<f64>,
    decisions: &[VfpDecision],
    budgets: &[Budget],
) -> ConfigurationSummary {
    ConfigurationSummary {
        label: label.to_string(),
        vfps: decisions.iter().map(|d| d.vfp.clone()).collect(),
        energy_value,
        flexible_demand: energies.to_vec(),
        production_cost: decisions.iter().map(|d| production_cost(scenario, d)).collect(),
        gt_emissions: decisions
            .iter()
            .map(|d| {
                let eps = scenario.vfp[&d.vfp].emission_factor;
                (0..d.periods()).map(|t| eps * d.kind_total(DeviceKind::Gt, t)).sum()
            })
            .collect(),
        budget: budgets.iter().map(|b| b.total).collect(),
        emissions: decisions.iter().map(|d| d.carbon.iter().sum()).collect(),
        wholesale_energy: decisions
            .iter()
            .map(|d| (0..d.periods()).map(|t| d.wholesale_net(t)).sum())
            .collect(),
    }
}

/// Runs the full alternation, sharing at nominal agent energies, and no
/// sharing at all, for side-by-side comparison.
pub fn compare_configurations(scenario: &Scenario) -> Result<Vec<ConfigurationSummary>, CoordinatorError> {
    let full = run_hierarchical(scenario)?;
    let on_value: Vec<f64> = full
        .allocations
        .iter()
        .map(|a| {
            a.as_ref().map_or(0.0, |s| {
                s.agents
                    .iter()
                    .filter(|x| x.role != Role::Producer)
                    .map(|x| x.utility)
                    .sum()
            })
        })
        .collect();
    let mut out = vec![summarize(
        "sharing+allocation",
        scenario,
        &full.energies,
        on_value,
        &full.decisions,
        &full.budgets,
    )];

    let transmission = |source| CoordinatorError::Transmission { outer: 0, source };
    let nominal = Market::nominal(scenario).map_err(transmission)?;
    let fra = fra_equilibrium(&nominal, None).map_err(transmission)?;
    out.push(summarize(
        "sharing-only",
        scenario,
        &nominal.energies,
        nominal_energy_value(scenario),
        &fra.decisions,
        &fra.budgets,
    ));

    let decisions = (0..nominal.ids.len())
        .map(|i| nominal.standalone(i))
        .collect::<Result<Vec<_>, _>>()
        .map_err(transmission)?;
    let zero = vec![0.0; scenario.periods()];
    let budgets: Vec<Budget> = decisions
        .iter()
        .map(|d| compute_vfp_budget(d, &zero, &zero, &scenario.market))
        .collect();
    out.push(summarize(
        "no-sharing",
        scenario,
        &nominal.energies,
        nominal_energy_value(scenario),
        &decisions,
        &budgets,
    ));
    Ok(out)
}
