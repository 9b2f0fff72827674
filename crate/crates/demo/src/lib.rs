//! WebAssembly bindings for the static page in `www/`.

use predpack::ahb::{next_burst_address, BurstCursor, Hburst, Hsize};
use predpack::engine::{first_mismatch, run_optimistic, run_reference, RunOptions, Scenario};
use predpack::perfmodel::{breakdown, dense_grid, PerfParams};
use predpack::sync::OperatingMode;
use wasm_bindgen::prelude::*;

const MIXED: &str = include_str!("../../../scenarios/mixed.toml");

/// Analytic performance ratio at accuracies 0, 0.01, ..., 1.
#[wasm_bindgen]
pub fn perf_curve(leader: &str, t_sim_cycle: f64, depth: usize) -> Result<Vec<f64>, JsError> {
    let mode = match leader {
        "als" => OperatingMode::Als,
        "sla" => OperatingMode::Sla,
        other => return Err(JsError::new(&format!("unknown mode {other:?}, expected als or sla"))),
    };
    let pp = PerfParams { t_sim_cycle, depth, ..PerfParams::default() };
    pp.validate().map_err(|e| JsError::new(&e))?;
    Ok(dense_grid().into_iter().map(|p| breakdown(&pp, mode, p).ratio).collect())
}

/// Outcome of an optimistic run checked against the monolithic bus.
#[wasm_bindgen]
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Summary {
    pub cycles: u32,
    pub performance: f64,
    pub ratio: f64,
    pub channel_accesses: u32,
    pub transitions: u32,
    pub rollbacks: u32,
    pub matches_reference: bool,
}

/// Runs the bundled mixed-traffic scenario optimistically.
#[wasm_bindgen]
pub fn simulate(p_success: f64, seed: u32, cycles: u32, depth: usize) -> Result<Summary, JsError> {
    let mut scn = Scenario::from_toml(MIXED).map_err(|e| JsError::new(&e.to_string()))?;
    if !(0.0..=1.0).contains(&p_success) || cycles == 0 || depth == 0 {
        return Err(JsError::new("need 0 <= p <= 1, cycles >= 1 and depth >= 1"));
    }
    scn.noise.p_success = p_success;
    scn.noise.seed = seed as u64;
    scn.cycles = cycles as u64;
    scn.depth = depth;
    let r = run_optimistic(&scn, &RunOptions::default()).map_err(|e| JsError::new(&e.to_string()))?;
    let reference = run_reference(&scn).map_err(|e| JsError::new(&e.to_string()))?;
    Ok(Summary {
        cycles,
        performance: r.breakdown.performance,
        ratio: r.breakdown.ratio,
        channel_accesses: r.ledger.accesses() as u32,
        transitions: r.transitions.len() as u32,
        rollbacks: r.transitions.iter().filter(|t| t.failure_index.is_some()).count() as u32,
        matches_reference: first_mismatch(&r, &reference).is_none(),
    })
}

/// Beat addresses of one burst. Undefined-length INCR gives `beats` beats.
#[wasm_bindgen]
pub fn burst_addresses(start: u32, size_bytes: u32, burst: &str, beats: u32) -> Result<Vec<u32>, JsError> {
    let hsize = Hsize::ALL
        .iter()
        .copied()
        .find(|h| h.bytes() == size_bytes)
        .ok_or_else(|| JsError::new(&format!("no transfer size of {size_bytes} bytes")))?;
    let hburst: Hburst = burst.parse().map_err(|_| JsError::new(&format!("unknown burst {burst:?}")))?;
    let n = hburst.beats().unwrap_or(beats);
    let c = BurstCursor::new(start, hsize, hburst);
    (0..n).map(|k| next_burst_address(&c.at(k)).map_err(|e| JsError::new(&e.to_string()))).collect()
}
