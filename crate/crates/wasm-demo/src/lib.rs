//! Browser bindings for the simulator. Every export takes and returns JSON
//! strings so the page needs no generated type glue.
//!
//! The plain functions carry the logic and are tested natively; the
//! `#[wasm_bindgen]` wrappers only convert errors into JS exceptions.

use std::path::Path;

use cachesim::policy::{builtin_policies, ProviderPolicy};
use cachesim::replay::{LatencyModel, UsageRecord};
use cachesim::runner::{
    ablation_rows, run_ablation, run_experiment, AblationDimension, AblationGrid, AblationRow,
    ExperimentConfig, PolicySpec,
};
use cachesim::strategy::StrategyMode;
use cachesim::workload::WorkloadSpec;
use serde::{Deserialize, Serialize};
use wasm_bindgen::prelude::*;

/// Ceiling on simulated calls per request, so a slider cannot freeze the tab.
const MAX_CALLS: u64 = 4_000;

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SessionRequest {
    pub policy: String,
    #[serde(default)]
    pub workload: WorkloadSpec,
    #[serde(default)]
    pub latency: LatencyModel,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Serialize)]
pub struct CallPoint {
    pub call_index: usize,
    pub usage: UsageRecord,
    pub cost_usd: f64,
    pub ttft_ms: f64,
}

#[derive(Debug, Serialize)]
pub struct ModeTrace {
    pub mode: StrategyMode,
    /// Calls of the first evaluated session.
    pub calls: Vec<CallPoint>,
    pub mean_session_cost_usd: f64,
    pub mean_ttft_ms: f64,
    /// Mean-cost saving against no-cache; zero for the baseline itself.
    pub cost_saving_pct: f64,
    pub ttft_improvement_pct: f64,
}

#[derive(Debug, Serialize)]
pub struct SessionResponse {
    pub policy: String,
    pub sessions: usize,
    pub modes: Vec<ModeTrace>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CurveRequest {
    pub policy: String,
    pub dimension: AblationDimension,
    pub values: Vec<u64>,
    #[serde(default)]
    pub workload: WorkloadSpec,
}

fn parse<T: for<'de> Deserialize<'de>>(json: &str) -> Result<T, String> {
    serde_json::from_str(json).map_err(|e| format!("bad request: {e}"))
}

fn config_for(policy: &str, workload: WorkloadSpec) -> ExperimentConfig {
    ExperimentConfig {
        policies: vec![PolicySpec::Builtin(policy.to_owned())],
        workload,
        ..ExperimentConfig::default()
    }
}

fn check_budget(workload: &WorkloadSpec, grid_points: usize) -> Result<(), String> {
    let calls = (workload.sessions + 1) * (workload.tool_calls + 1) * 4 * grid_points as u64;
    if calls > MAX_CALLS {
        return Err(format!("request would simulate {calls} calls; the demo limit is {MAX_CALLS}"));
    }
    Ok(())
}

/// All four modes of one policy on a generated workload.
pub fn simulate_session_json(request: &str) -> Result<String, String> {
    let req: SessionRequest = parse(request)?;
    check_budget(&req.workload, 1)?;
    let config = ExperimentConfig {
        latency: req.latency,
        seed: req.seed,
        ..config_for(&req.policy, req.workload)
    };
    let run = run_experiment(&config, Path::new("."), 1).map_err(|e| e.to_string())?;
    let report = &run.report.policies[0];
    let modes = run
        .runs
        .iter()
        .map(|r| {
            let (cost, ttft) = report
                .modes
                .iter()
                .find(|m| m.summary.mode == r.mode)
                .map_or((0.0, 0.0), |m| (m.cost.improvement_pct, m.ttft.improvement_pct));
            let summary = report
                .modes
                .iter()
                .map(|m| &m.summary)
                .chain(std::iter::once(&report.baseline))
                .find(|s| s.mode == r.mode)
                .expect("every run is summarized");
            ModeTrace {
                mode: r.mode,
                calls: r.sessions[0]
                    .calls
                    .iter()
                    .map(|c| CallPoint {
                        call_index: c.call_index,
                        usage: c.usage,
                        cost_usd: c.cost_usd,
                        ttft_ms: c.ttft_ms,
                    })
                    .collect(),
                mean_session_cost_usd: summary.mean_cost_usd,
                mean_ttft_ms: summary.mean_ttft_ms,
                cost_saving_pct: cost,
                ttft_improvement_pct: ttft,
            }
        })
        .collect();
    let response = SessionResponse {
        policy: report.policy.clone(),
        sessions: report.baseline.sessions,
        modes,
    };
    serde_json::to_string(&response).map_err(|e| e.to_string())
}

/// Savings per mode across a grid of prompt sizes or tool-call counts.
pub fn savings_curve_json(request: &str) -> Result<String, String> {
    let req: CurveRequest = parse(request)?;
    let grid = AblationGrid::new(req.dimension, req.values).map_err(|e| e.to_string())?;
    let mut widest = req.workload.clone();
    req.dimension.apply(&mut widest, *grid.values().last().expect("grid is non-empty"));
    check_budget(&widest, grid.values().len())?;
    let config = config_for(&req.policy, req.workload);
    let runs = run_ablation(&config, Path::new("."), &grid, 1).map_err(|e| e.to_string())?;
    let rows: Vec<AblationRow> = runs
        .iter()
        .flat_map(|(v, run)| ablation_rows(req.dimension, *v, run))
        .collect();
    serde_json::to_string(&rows).map_err(|e| e.to_string())
}

pub fn policy_table_json() -> String {
    let policies: Vec<ProviderPolicy> = builtin_policies();
    serde_json::to_string(&policies).expect("policies serialize")
}

#[wasm_bindgen]
pub fn simulate_session(request: &str) -> Result<String, JsError> {
    simulate_session_json(request).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn savings_curve(request: &str) -> Result<String, JsError> {
    savings_curve_json(request).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn policy_table() -> String {
    policy_table_json()
}
