//! CSV and manifest export of a run.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::allocation::{write_allocation_table, AllocationState};
use crate::coordinator::{ConfigurationSummary, EquilibriumResult, Residuals};
use crate::error::ReportError;
use crate::scenario::{AlgorithmParams, Scenario};
use crate::transmission::{write_trace_csv, FraTrace};

/// Rendered report files keyed by file name.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RunReport {
    pub files: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub scenario_sha256: String,
    pub status: String,
    pub parameters: AlgorithmParams,
    pub outer_iterations: usize,
    pub fra_iterations: usize,
    pub dfaa_iterations: usize,
    pub residuals: Residuals,
    pub wall_time_s: f64,
    pub files: Vec<String>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn prices_csv(result: &EquilibriumResult) -> String {
    let mut s = String::from("# prices in ¥/MWh (shared) and ¥/t (carbon); budget in ¥, positive = spend\n");
    s.push_str("period,vfp,shared_price,carbon_price,budget\n");
    let n = result.decisions.first().map_or(0, |d| d.periods());
    for t in 0..n {
        for (i, vfp) in result.prices.vfps.iter().enumerate() {
            let _ = writeln!(
                s,
                "{},{vfp},{},{},{}",
                t + 1,
                result.prices.shared[i][t],
                result.prices.carbon[i][t],
                result.budgets[i].per_period[t]
            );
        }
    }
    s
}

pub fn shared_power_csv(result: &EquilibriumResult) -> String {
    let mut s = String::from(
        "# MW; shared_power > 0 is a purchase from the pool, wholesale_net > 0 a purchase from the grid\n",
    );
    s.push_str("period,vfp,load,production,shared_power,wholesale_buy,wholesale_sell\n");
    let n = result.decisions.first().map_or(0, |d| d.periods());
    for t in 0..n {
        for d in &result.decisions {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{}",
                t + 1,
                d.vfp,
                d.load[t],
                d.production[t],
                d.shared[t],
                d.wholesale_buy[t],
                d.wholesale_sell[t]
            );
        }
    }
    s
}

pub fn carbon_csv(result: &EquilibriumResult) -> String {
    let mut s = String::from("# carbon in t traded at carbon_price (¥/t)\n");
    s.push_str("period,vfp,carbon,carbon_price\n");
    let n = result.decisions.first().map_or(0, |d| d.periods());
    for t in 0..n {
        for (i, d) in result.decisions.iter().enumerate() {
            let _ = writeln!(s, "{},{},{},{}", t + 1, d.vfp, d.carbon[t], result.prices.carbon[i][t]);
        }
    }
    s
}

pub fn devices_csv(result: &EquilibriumResult) -> String {
    let mut s = String::from("# MW; ESS output < 0 is charging; soc in MWh at the end of the period\n");
    s.push_str("period,vfp,device,kind,output,charge,discharge,soc,on\n");
    let n = result.decisions.first().map_or(0, |d| d.periods());
    for t in 0..n {
        for d in &result.decisions {
            for dev in &d.devices {
                let _ = writeln!(
                    s,
                    "{},{},{},{},{},{},{},{},{}",
                    t + 1,
                    d.vfp,
                    dev.id,
                    dev.kind,
                    dev.output[t],
                    dev.charge[t],
                    dev.discharge[t],
                    dev.soc[t],
                    u8::from(dev.commitment[t])
                );
            }
        }
    }
    s
}

pub fn allocation_csv(allocations: &[Option<AllocationState>]) -> String {
    let states: Vec<AllocationState> = allocations.iter().flatten().cloned().collect();
    let mut buf = Vec::new();
    write_allocation_table(&states, &mut buf).expect("writing to memory");
    String::from_utf8(buf).expect("utf-8 table")
}

pub fn trace_csv(trace: &FraTrace) -> String {
    let mut buf = Vec::new();
    write_trace_csv(trace, &mut buf).expect("writing to memory");
    String::from_utf8(buf).expect("utf-8 table")
}

pub fn outer_csv(result: &EquilibriumResult) -> String {
    let mut s =
        String::from("# energy in MWh/day, budget in ¥/day; change is the max-norm budget move since the last solve\n");
    s.push_str("iteration,vfp,flexible_energy,budget,fra_iterations,change\n");
    for r in &result.outer_trace {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{}",
            r.iteration, r.vfp, r.energy, r.budget, r.fra_iterations, r.change
        );
    }
    s
}

pub fn performance_csv(result: &EquilibriumResult) -> String {
    let mut s = String::from("# iterations summed over all outer passes\nloop,iterations\n");
    let _ = writeln!(s, "outer,{}", result.outer_iterations);
    let _ = writeln!(s, "transmission,{}", result.fra_iterations);
    let _ = writeln!(s, "allocation,{}", result.dfaa_iterations);
    s
}

pub fn comparison_csv(rows: &[ConfigurationSummary]) -> String {
    let mut s = String::from(
        "# energy value and costs in ¥/day, demand in MWh/day, emissions in t/day; budget positive = spend\n",
    );
    s.push_str("configuration,vfp,energy_value,flexible_demand,production_cost,gt_emissions,emissions,budget,wholesale_energy\n");
    for r in rows {
        for (i, vfp) in r.vfps.iter().enumerate() {
            let _ = writeln!(
                s,
                "{},{vfp},{},{},{},{},{},{},{}",
                r.label,
                r.energy_value[i],
                r.flexible_demand[i],
                r.production_cost[i],
                r.gt_emissions[i],
                r.emissions[i],
                r.budget[i],
                r.wholesale_energy[i]
            );
        }
    }
    s
}

/// Renders every table of a (possibly partial) result.
pub fn build_report(result: &EquilibriumResult, comparison: Option<&[ConfigurationSummary]>) -> RunReport {
    let mut files = BTreeMap::new();
    files.insert("prices.csv".to_string(), prices_csv(result));
    files.insert("shared_power.csv".to_string(), shared_power_csv(result));
    files.insert("carbon.csv".to_string(), carbon_csv(result));
    files.insert("devices.csv".to_string(), devices_csv(result));
    files.insert("allocation.csv".to_string(), allocation_csv(&result.allocations));
    files.insert("outer_trace.csv".to_string(), outer_csv(result));
    files.insert("performance.csv".to_string(), performance_csv(result));
    if let Some(trace) = result.fra_traces.last() {
        files.insert("fra_trace.csv".to_string(), trace_csv(trace));
    }
    if let Some(rows) = comparison {
        files.insert("comparison.csv".to_string(), comparison_csv(rows));
    }
    RunReport { files }
}

pub fn manifest(
    scenario: &Scenario,
    scenario_bytes: &[u8],
    result: &EquilibriumResult,
    converged: bool,
    report: &RunReport,
    wall_time_s: f64,
) -> Manifest {
    Manifest {
        scenario_sha256: sha256_hex(scenario_bytes),
        status: if converged { "converged" } else { "not-converged" }.to_string(),
        parameters: scenario.algorithm.clone(),
        outer_iterations: result.outer_iterations,
        fra_iterations: result.fra_iterations,
        dfaa_iterations: result.dfaa_iterations,
        residuals: result.residuals.clone(),
        wall_time_s,
        files: report.files.keys().cloned().collect(),
    }
}

/// Writes one file, creating its parent directory if needed.
pub fn write_file(path: &Path, contents: &str) -> Result<(), ReportError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|source| ReportError::Write {
            path: dir.display().to_string(),
            source,
        })?;
    }
    fs::write(path, contents).map_err(|source| ReportError::Write {
        path: path.display().to_string(),
        source,
    })
}

/// Writes the report files into `dir`, creating it if needed.
pub fn write_report(dir: &Path, report: &RunReport) -> Result<(), ReportError> {
    fs::create_dir_all(dir).map_err(|source| ReportError::Write {
        path: dir.display().to_string(),
        source,
    })?;
    for (name, contents) in &report.files {
        write_file(&dir.join(name), contents)?;
    }
    Ok(())
}

pub fn write_manifest(dir: &Path, manifest: &Manifest) -> Result<(), ReportError> {
    let json = serde_json::to_string_pretty(manifest).expect("manifest serializes");
    write_file(&dir.join("manifest.json"), &json)
}

pub fn read_manifest(path: &Path) -> Result<Manifest, ReportError> {
    let text = fs::read_to_string(path).map_err(|source| ReportError::Write {
        path: path.display().to_string(),
        source,
    })?;
    serde_json::from_str(&text).map_err(|e| ReportError::Parse {
        path: path.display().to_string(),
        message: e.to_string(),
    })
}

/// Data rows of a report table, skipping comments and the header.
pub fn parse_table(csv: &str) -> Vec<Vec<String>> {
    csv.lines()
        .filter(|l| !l.starts_with('#'))
        .skip(1)
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect()
}
