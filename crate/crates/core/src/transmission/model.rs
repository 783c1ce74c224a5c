//! Assembly of one VFP's transmission-level program and its solution.

use crate::error::TransmissionError;
use crate::network::{FlowSensitivity, FlowState};
use crate::qp::{solve_with_binaries_opts, BinarySpec, BranchOptions, Constraint, QuadraticProgram, SolveStatus};
use crate::scenario::{DeviceKind, DeviceSpec, Scenario};

use super::{DeviceSchedule, PriceSignal, VfpDecision};

/// Everything a best response needs to know about the other VFPs.
#[derive(Debug, Clone, PartialEq)]
pub struct RivalContext {
    /// Net injections of all other VFPs, indexed `[period][bus]`.
    pub injections: Vec<Vec<f64>>,
    /// Emissions this VFP may use under the regional cap (t).
    pub carbon_budget: f64,
}

/// A scenario prepared for transmission clearing at fixed flexible energies.
#[derive(Debug, Clone)]
pub struct Market<'a> {
    pub scenario: &'a Scenario,
    pub ids: Vec<String>,
    /// Daily flexible energy per VFP.
    pub energies: Vec<f64>,
    pub loads: Vec<Vec<f64>>,
    sensitivity: FlowSensitivity,
    vfp_bus: Vec<usize>,
    emitter: Vec<bool>,
}

struct GtVars {
    dev: usize,
    p: usize,
    u: Option<usize>,
}

struct Layout {
    devices: Vec<(String, DeviceSpec)>,
    gt: Vec<GtVars>,
    dg: Vec<(usize, usize)>,
    ess: Vec<(usize, usize, usize)>,
    buy: usize,
    sell: usize,
    n: usize,
}

impl Layout {
    fn new(scenario: &Scenario, vfp: &str, periods: usize) -> Self {
        let devices: Vec<(String, DeviceSpec)> = scenario
            .devices_of(vfp)
            .map(|(id, d)| (id.clone(), d.clone()))
            .collect();
        let mut n = 0;
        let mut take = |k: usize| {
            let at = n;
            n += k;
            at
        };
        let (mut gt, mut dg, mut ess) = (Vec::new(), Vec::new(), Vec::new());
        for (k, (_, d)) in devices.iter().enumerate() {
            match d.kind {
                DeviceKind::Gt => {
                    let p = take(periods);
                    let u = (d.min > 0.0).then(|| take(periods));
                    gt.push(GtVars { dev: k, p, u });
                }
                DeviceKind::Dg => dg.push((k, take(periods))),
                DeviceKind::Ess => {
                    let cha = take(periods);
                    let dis = take(periods);
                    ess.push((k, cha, dis));
                }
            }
        }
        let buy = take(periods);
        let sell = take(periods);
        Self {
            devices,
            gt,
            dg,
            ess,
            buy,
            sell,
            n,
        }
    }

    /// Terms of P_g in period `t`.
    fn production(&self, t: usize) -> Vec<(usize, f64)> {
        let mut terms = Vec::new();
        for g in &self.gt {
            terms.push((g.p + t, 1.0));
        }
        for &(_, off) in &self.dg {
            terms.push((off + t, 1.0));
        }
        for &(_, cha, dis) in &self.ess {
            terms.push((dis + t, 1.0));
            terms.push((cha + t, -1.0));
        }
        terms
    }

    /// Injection terms `(device index or None for the VFP bus, var, coef)` in period `t`.
    fn injection_terms(&self, t: usize) -> Vec<(Option<usize>, usize, f64)> {
        let mut terms = Vec::new();
        for g in &self.gt {
            terms.push((Some(g.dev), g.p + t, 1.0));
        }
        for &(k, off) in &self.dg {
            terms.push((Some(k), off + t, 1.0));
        }
        for &(k, cha, dis) in &self.ess {
            terms.push((Some(k), dis + t, 1.0));
            terms.push((Some(k), cha + t, -1.0));
        }
        terms.push((None, self.buy + t, 1.0));
        terms.push((None, self.sell + t, -1.0));
        terms
    }

    fn has_capped_generation(&self) -> bool {
        !self.gt.is_empty() || !self.dg.is_empty()
    }
}

impl<'a> Market<'a> {
    /// Prepares clearing with the given daily flexible energy per VFP
    /// (scenario order).
    pub fn new(scenario: &'a Scenario, energies: &[f64]) -> Result<Self, TransmissionError> {
        let ids = scenario.vfp_ids();
        assert_eq!(ids.len(), energies.len(), "one flexible energy per VFP");
        let sensitivity = FlowSensitivity::new(&scenario.network)?;
        let mut vfp_bus = Vec::new();
        let mut emitter = Vec::new();
        let mut loads = Vec::new();
        for (id, &e) in ids.iter().zip(energies) {
            let spec = &scenario.vfp[id];
            vfp_bus.push(scenario.network.bus_index(spec.bus)?);
            let generates = scenario.devices_of(id).any(|(_, d)| d.kind != DeviceKind::Ess);
            emitter.push(spec.emission_factor > 0.0 && generates);
            loads.push(scenario.load(id, e));
        }
        Ok(Self {
            scenario,
            ids,
            energies: energies.to_vec(),
            loads,
            sensitivity,
            vfp_bus,
            emitter,
        })
    }

    /// Clearing with every agent at its nominal energy.
    pub fn nominal(scenario: &'a Scenario) -> Result<Self, TransmissionError> {
        let energies: Vec<f64> = scenario
            .vfp_ids()
            .iter()
            .map(|id| scenario.nominal_energy(id))
            .collect();
        Self::new(scenario, &energies)
    }

    pub fn periods(&self) -> usize {
        self.scenario.periods()
    }

    pub fn index(&self, vfp: &str) -> Result<usize, TransmissionError> {
        self.ids
            .iter()
            .position(|v| v == vfp)
            .ok_or_else(|| TransmissionError::UnknownVfp(vfp.to_string()))
    }

    pub fn emission_factor(&self, i: usize) -> f64 {
        self.scenario.vfp[&self.ids[i]].emission_factor
    }

    /// A decision with no production and no wholesale exchange: the whole
    /// load is bought from the pool.
    pub fn idle(&self, i: usize) -> VfpDecision {
        let n = self.periods();
        let devices = self
            .scenario
            .devices_of(&self.ids[i])
            .map(|(id, d)| DeviceSchedule {
                id: id.clone(),
                kind: d.kind,
                bus: d.bus,
                output: vec![0.0; n],
                charge: vec![0.0; n],
                discharge: vec![0.0; n],
                soc: if d.kind == DeviceKind::Ess {
                    vec![d.initial_soc(); n]
                } else {
                    vec![0.0; n]
                },
                commitment: vec![false; n],
            })
            .collect();
        VfpDecision {
            vfp: self.ids[i].clone(),
            load: self.loads[i].clone(),
            shared: self.loads[i].clone(),
            carbon: vec![0.0; n],
            wholesale_buy: vec![0.0; n],
            wholesale_sell: vec![0.0; n],
            production: vec![0.0; n],
            devices,
        }
    }

    /// Net injection of one decision, indexed `[period][bus]`.
    pub fn injections(&self, i: usize, d: &VfpDecision) -> Vec<Vec<f64>> {
        let net = &self.scenario.network;
        let nb = net.buses.len();
        (0..self.periods())
            .map(|t| {
                let mut inj = vec![0.0; nb];
                inj[self.vfp_bus[i]] += d.wholesale_net(t) - d.load[t];
                for dev in &d.devices {
                    if let Ok(b) = net.bus_index(dev.bus) {
                        inj[b] += dev.output[t];
                    }
                }
                inj
            })
            .collect()
    }

    /// DC flows per period for a full set of decisions.
    pub fn flows(&self, decisions: &[VfpDecision]) -> Vec<FlowState> {
        let nb = self.scenario.network.buses.len();
        let mut total = vec![vec![0.0; nb]; self.periods()];
        for (i, d) in decisions.iter().enumerate() {
            for (t, inj) in self.injections(i, d).into_iter().enumerate() {
                for (b, v) in inj.into_iter().enumerate() {
                    total[t][b] += v;
                }
            }
        }
        total.iter().map(|inj| self.sensitivity.flows(inj)).collect()
    }

    pub fn emissions(&self, i: usize, d: &VfpDecision) -> f64 {
        self.emission_factor(i) * d.capped_generation()
    }

    /// Rival injections and this VFP's share of the remaining carbon cap,
    /// both taken from the previous iterate.
    pub fn context(&self, i: usize, decisions: &[VfpDecision]) -> RivalContext {
        let nb = self.scenario.network.buses.len();
        let mut injections = vec![vec![0.0; nb]; self.periods()];
        for (j, d) in decisions.iter().enumerate() {
            if j == i {
                continue;
            }
            for (t, inj) in self.injections(j, d).into_iter().enumerate() {
                for (b, v) in inj.into_iter().enumerate() {
                    injections[t][b] += v;
                }
            }
        }
        let carbon_budget = if self.emitter[i] {
            let emitters = self.emitter.iter().filter(|&&e| e).count() as f64;
            let total: f64 = decisions.iter().enumerate().map(|(j, d)| self.emissions(j, d)).sum();
            let own = self.emissions(i, &decisions[i]);
            (own + (self.scenario.market.carbon_cap - total) / emitters).max(0.0)
        } else {
            f64::INFINITY
        };
        RivalContext {
            injections,
            carbon_budget,
        }
    }

    /// Objective value of a decision at the given prices.
    pub fn objective(&self, i: usize, d: &VfpDecision, shared: &[f64], carbon: &[f64]) -> f64 {
        let spec = &self.scenario.vfp[&self.ids[i]];
        let n = self.periods();
        let buy = self.scenario.market.wholesale_buy.values(n);
        let sell = self.scenario.market.wholesale_sell.values(n);
        let mut total = 0.0;
        for t in 0..n {
            let pg = d.production[t];
            total += spec.cost_quadratic * pg * pg + spec.cost_linear * pg;
            total += shared[t] * d.shared[t] + carbon[t] * d.carbon[t];
            total += buy[t] * d.wholesale_buy[t] - sell[t] * d.wholesale_sell[t];
        }
        for dev in &d.devices {
            if dev.kind == DeviceKind::Gt {
                let (q, c) = self.scenario.device[&dev.id].cost();
                total += dev.output.iter().map(|p| q * p * p + c * p).sum::<f64>();
            }
        }
        total
    }

    fn program(
        &self,
        i: usize,
        layout: &Layout,
        shared: &[f64],
        carbon: &[f64],
        ctx: &RivalContext,
    ) -> (QuadraticProgram, BinarySpec, Vec<Constraint>, Option<Constraint>) {
        let s = self.scenario;
        let id = &self.ids[i];
        let spec = &s.vfp[id];
        let n = self.periods();
        let buy_price = s.market.wholesale_buy.values(n);
        let sell_price = s.market.wholesale_sell.values(n);
        let wmin = spec.wholesale_min.values(n);
        let wmax = spec.wholesale_max.values(n);
        let eps = spec.emission_factor;

        let mut p = QuadraticProgram::new(layout.n);
        let mut bs = BinarySpec::default();

        for t in 0..n {
            let pg = layout.production(t);
            p.add_squared_term(&pg, 2.0 * spec.cost_quadratic);
            // h'(0) + carbon charge − shared price, per unit of P_g
            let marginal = spec.cost_linear + carbon[t] * eps - shared[t];
            for &(j, a) in &pg {
                p.linear[j] += a * marginal;
            }
            p.linear[layout.buy + t] += buy_price[t] - shared[t];
            p.linear[layout.sell + t] += shared[t] - sell_price[t];
            p.set_bounds(layout.buy + t, 0.0, wmax[t].max(0.0));
            p.set_bounds(layout.sell + t, 0.0, (-wmin[t]).max(0.0));
            if wmin[t] > 0.0 || wmax[t] < 0.0 {
                p.add_inequality(vec![(layout.buy + t, 1.0), (layout.sell + t, -1.0)], wmin[t], wmax[t]);
            }
        }

        for g in &layout.gt {
            let d = &layout.devices[g.dev].1;
            let (q, c) = d.cost();
            for t in 0..n {
                let j = g.p + t;
                p.hessian[(j, j)] += 2.0 * q;
                p.linear[j] += c;
                match g.u {
                    Some(u) => {
                        p.set_bounds(j, 0.0, d.max);
                        p.set_bounds(u + t, 0.0, 1.0);
                        bs.indices.push(u + t);
                        bs.linking
                            .push(Constraint::new(vec![(j, 1.0), (u + t, -d.min)], 0.0, f64::INFINITY));
                        bs.linking
                            .push(Constraint::new(vec![(j, 1.0), (u + t, -d.max)], f64::NEG_INFINITY, 0.0));
                    }
                    None => p.set_bounds(j, d.min, d.max),
                }
            }
        }
        for &(k, off) in &layout.dg {
            let d = &layout.devices[k].1;
            for (t, hi) in d.upper_profile(n).into_iter().enumerate() {
                p.set_bounds(off + t, d.min, hi);
            }
        }
        for &(k, cha, dis) in &layout.ess {
            let d = &layout.devices[k].1;
            let soc0 = d.initial_soc();
            for t in 0..n {
                p.set_bounds(cha + t, 0.0, d.charge_max());
                p.set_bounds(dis + t, 0.0, d.discharge_max());
                let mut terms = Vec::with_capacity(2 * (t + 1));
                for tau in 0..=t {
                    terms.push((cha + tau, d.eta_charge()));
                    terms.push((dis + tau, -1.0 / d.eta_discharge()));
                }
                let mut lower = d.min - soc0;
                if t + 1 == n {
                    lower = lower.max(0.0);
                }
                p.add_inequality(terms, lower, d.max - soc0);
            }
        }

        let carbon_row = (eps > 0.0 && layout.has_capped_generation() && ctx.carbon_budget.is_finite()).then(|| {
            let mut terms = Vec::new();
            for t in 0..n {
                for g in &layout.gt {
                    terms.push((g.p + t, eps));
                }
                for &(_, off) in &layout.dg {
                    terms.push((off + t, eps));
                }
            }
            Constraint::new(terms, f64::NEG_INFINITY, ctx.carbon_budget)
        });

        let line_rows = self.line_rows(i, layout, &p, ctx);
        (p, bs, line_rows, carbon_row)
    }

    /// Line limit rows that can bind somewhere inside the variable box.
    fn line_rows(&self, i: usize, layout: &Layout, p: &QuadraticProgram, ctx: &RivalContext) -> Vec<Constraint> {
        let net = &self.scenario.network;
        let sens = &self.sensitivity.matrix;
        let mut rows = Vec::new();
        for t in 0..self.periods() {
            let terms = layout.injection_terms(t);
            for (k, line) in net.lines.iter().enumerate() {
                let mut constant: f64 = ctx.injections[t]
                    .iter()
                    .enumerate()
                    .map(|(b, v)| sens[(k, b)] * v)
                    .sum();
                constant -= sens[(k, self.vfp_bus[i])] * self.loads[i][t];
                let mut coef: Vec<(usize, f64)> = Vec::new();
                for &(dev, var, a) in &terms {
                    let b = match dev {
                        Some(d) => net.bus_index(layout.devices[d].1.bus).unwrap_or(self.vfp_bus[i]),
                        None => self.vfp_bus[i],
                    };
                    let c = sens[(k, b)] * a;
                    if c != 0.0 {
                        coef.push((var, c));
                    }
                }
                let (lo, hi) = (line.min - constant, line.max - constant);
                let (mut rmin, mut rmax) = (0.0, 0.0);
                for &(j, c) in &coef {
                    let (a, b) = (c * p.lower[j], c * p.upper[j]);
                    rmin += a.min(b);
                    rmax += a.max(b);
                }
                if rmin >= lo && rmax <= hi {
                    continue;
                }
                rows.push(Constraint::new(coef, lo, hi));
            }
        }
        rows
    }

    /// Optimal decision of VFP `i` at fixed prices and rival behaviour.
    pub fn best_response(
        &self,
        i: usize,
        shared: &[f64],
        carbon: &[f64],
        ctx: &RivalContext,
    ) -> Result<VfpDecision, TransmissionError> {
        let id = &self.ids[i];
        let layout = Layout::new(self.scenario, id, self.periods());
        let (p, bs, lines, carbon_row) = self.program(i, &layout, shared, carbon, ctx);
        self.solve(i, &layout, p, &bs, &lines, carbon_row, ctx)
    }

    /// Decision of VFP `i` when it may not trade with the pool: production
    /// and wholesale trade cover the load exactly, and the carbon cap is
    /// split evenly among the emitters.
    pub fn standalone(&self, i: usize) -> Result<VfpDecision, TransmissionError> {
        let n = self.periods();
        let emitters = self.emitter.iter().filter(|&&e| e).count().max(1) as f64;
        let ctx = RivalContext {
            injections: vec![vec![0.0; self.scenario.network.buses.len()]; n],
            carbon_budget: if self.emitter[i] {
                (self.scenario.market.carbon_cap / emitters).max(0.0)
            } else {
                f64::INFINITY
            },
        };
        let layout = Layout::new(self.scenario, &self.ids[i], n);
        let zero = vec![0.0; n];
        let (mut p, bs, _, carbon_row) = self.program(i, &layout, &zero, &zero, &ctx);
        for t in 0..n {
            let mut terms = layout.production(t);
            terms.push((layout.buy + t, 1.0));
            terms.push((layout.sell + t, -1.0));
            p.add_inequality(terms, self.loads[i][t], self.loads[i][t]);
        }
        self.solve(i, &layout, p, &bs, &[], carbon_row, &ctx)
    }

    #[allow(clippy::too_many_arguments)]
    fn solve(
        &self,
        i: usize,
        layout: &Layout,
        mut p: QuadraticProgram,
        bs: &BinarySpec,
        lines: &[Constraint],
        carbon_row: Option<Constraint>,
        ctx: &RivalContext,
    ) -> Result<VfpDecision, TransmissionError> {
        let id = &self.ids[i];
        let plain = p.clone();
        p.inequalities.extend(lines.iter().cloned());
        p.inequalities.extend(carbon_row.iter().cloned());

        let opts = BranchOptions {
            max_binaries: self.scenario.algorithm.max_binaries,
            ..Default::default()
        };
        let tol = self.scenario.algorithm.tol_qp * p.data_scale();
        let report = solve_with_binaries_opts(&p, bs, tol, &opts)?;
        match report.solution.status {
            SolveStatus::Optimal => {}
            SolveStatus::IterationLimit => {
                return Err(TransmissionError::SolverLimit {
                    vfp: id.clone(),
                    residual: report.solution.kkt_residual,
                })
            }
            SolveStatus::Infeasible => {
                let detail = self.diagnose(&plain, bs, lines, carbon_row.as_ref(), ctx, &opts, tol);
                return Err(TransmissionError::Infeasible {
                    vfp: id.clone(),
                    detail,
                });
            }
        }
        let mut x = report.solution.x;
        for (j, v) in x.iter_mut().enumerate() {
            *v = v.clamp(p.lower[j], p.upper[j]);
        }
        Ok(self.decode(i, layout, &x))
    }

    #[allow(clippy::too_many_arguments)]
    fn diagnose(
        &self,
        plain: &QuadraticProgram,
        bs: &BinarySpec,
        lines: &[Constraint],
        carbon_row: Option<&Constraint>,
        ctx: &RivalContext,
        opts: &BranchOptions,
        tol: f64,
    ) -> String {
        let feasible = |extra: &[Constraint]| {
            let mut q = plain.clone();
            q.inequalities.extend(extra.iter().cloned());
            solve_with_binaries_opts(&q, bs, tol, opts)
                .map(|r| r.solution.status != SolveStatus::Infeasible)
                .unwrap_or(false)
        };
        if carbon_row.is_some() && feasible(lines) {
            return format!(
                "carbon cap binds: emission budget {:.6} t is below the minimum feasible emissions",
                ctx.carbon_budget
            );
        }
        if !lines.is_empty() && feasible(&[]) {
            return "line flow limits cannot be met given the rival injections".into();
        }
        "load cannot be covered within device and wholesale bounds".into()
    }

    fn decode(&self, i: usize, layout: &Layout, x: &[f64]) -> VfpDecision {
        let n = self.periods();
        let spec = &self.scenario.vfp[&self.ids[i]];
        let mut devices: Vec<DeviceSchedule> = layout
            .devices
            .iter()
            .map(|(id, d)| DeviceSchedule {
                id: id.clone(),
                kind: d.kind,
                bus: d.bus,
                output: vec![0.0; n],
                charge: vec![0.0; n],
                discharge: vec![0.0; n],
                soc: vec![0.0; n],
                commitment: vec![false; n],
            })
            .collect();
        for g in &layout.gt {
            let dev = &mut devices[g.dev];
            for t in 0..n {
                let on = match g.u {
                    Some(u) => x[u + t] > 0.5,
                    None => x[g.p + t] > 0.0,
                };
                dev.commitment[t] = on;
                dev.output[t] = if on { x[g.p + t] } else { 0.0 };
            }
        }
        for &(k, off) in &layout.dg {
            let dev = &mut devices[k];
            for t in 0..n {
                dev.output[t] = x[off + t];
                dev.commitment[t] = x[off + t] > 0.0;
            }
        }
        for &(k, cha, dis) in &layout.ess {
            let spec_d = &layout.devices[k].1;
            let dev = &mut devices[k];
            let mut soc = spec_d.initial_soc();
            for t in 0..n {
                dev.charge[t] = x[cha + t];
                dev.discharge[t] = x[dis + t];
                dev.output[t] = dev.discharge[t] - dev.charge[t];
                soc = soc + spec_d.eta_charge() * dev.charge[t] - dev.discharge[t] / spec_d.eta_discharge();
                dev.soc[t] = soc;
                dev.commitment[t] = dev.output[t] != 0.0;
            }
        }
        let mut buy = vec![0.0; n];
        let mut sell = vec![0.0; n];
        for t in 0..n {
            let overlap = x[layout.buy + t].min(x[layout.sell + t]);
            buy[t] = x[layout.buy + t] - overlap;
            sell[t] = x[layout.sell + t] - overlap;
        }
        let load = self.loads[i].clone();
        let production: Vec<f64> = (0..n).map(|t| devices.iter().map(|d| d.output[t]).sum()).collect();
        let shared = (0..n).map(|t| load[t] - production[t] - (buy[t] - sell[t])).collect();
        let carbon = production.iter().map(|p| spec.emission_factor * p).collect();
        VfpDecision {
            vfp: self.ids[i].clone(),
            load,
            shared,
            carbon,
            wholesale_buy: buy,
            wholesale_sell: sell,
            production,
            devices,
        }
    }
}

/// Best response of `vfp` to `prices` with every other VFP fixed at its
/// entry in `current` (one decision per VFP, scenario order). Agents sit at
/// their nominal energies.
pub fn vfp_best_response(
    scenario: &Scenario,
    vfp: &str,
    prices: &PriceSignal,
    current: &[VfpDecision],
) -> Result<VfpDecision, TransmissionError> {
    let market = Market::nominal(scenario)?;
    let i = market.index(vfp)?;
    let k = prices
        .index(vfp)
        .ok_or_else(|| TransmissionError::UnknownVfp(vfp.to_string()))?;
    let ctx = market.context(i, current);
    market.best_response(i, &prices.shared[k], &prices.carbon[k], &ctx)
}
