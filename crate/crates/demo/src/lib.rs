//! Browser bindings for the reference experiment.
//!
//! Each operation returns a JSON string so the page needs no glue beyond
//! `JSON.parse`. The plain functions are usable (and tested) natively; the
//! `#[wasm_bindgen]` wrappers only convert errors.

use ddoco::equilibria::EQUILIBRIUM_TOLERANCE;
use ddoco::harness::{prepare, run_experiment, ExperimentConfig, NoiseCase};
use ddoco::lti::model_steady_state;
use nalgebra::DVector;
use serde_json::{json, Value};
use wasm_bindgen::prelude::*;

fn config(seed: u64, horizon: usize, noise_case: u8, switch_interval: usize, step: f64) -> Result<ExperimentConfig, String> {
    let mut cfg = ExperimentConfig::reference(seed, horizon);
    cfg.noise = NoiseCase::from_case_number(noise_case).map_err(|e| e.to_string())?;
    if switch_interval > 0 {
        cfg.schedule.switch_interval = Some(switch_interval);
        cfg.schedule.switches = horizon / switch_interval;
    }
    cfg.controller.step_input = step;
    cfg.controller.step_output = step;
    cfg.validate().map_err(|e| e.to_string())?;
    Ok(cfg)
}

fn columns(vs: impl Iterator<Item = DVector<f64>>) -> Vec<Vec<f64>> {
    vs.map(|v| v.iter().copied().collect()).collect()
}

/// Closed-loop run of the reference plant: per-step signals and a summary.
pub fn closed_loop_json(
    seed: u64,
    horizon: usize,
    noise_case: u8,
    switch_interval: usize,
    step: f64,
) -> Result<String, String> {
    let cfg = config(seed, horizon, noise_case, switch_interval, step)?;
    let exp = run_experiment(&cfg).map_err(|f| f.error.to_string())?;
    let rows = &exp.record.rows;
    let out = json!({
        "t": rows.iter().map(|r| r.t).collect::<Vec<_>>(),
        "y": columns(rows.iter().map(|r| r.y.clone())),
        "theta": columns(rows.iter().map(|r| r.theta.clone())),
        "y_hat": columns(rows.iter().map(|r| r.y_hat.clone())),
        "u": columns(rows.iter().map(|r| r.u.clone())),
        "eta": columns(rows.iter().map(|r| r.eta.clone())),
        "cumulative_regret": rows.iter().map(|r| r.cumulative_regret).collect::<Vec<_>>(),
        "switches": exp.schedule.switch_times().collect::<Vec<_>>(),
        "summary": exp.summary(&cfg),
    });
    Ok(out.to_string())
}

/// Total regret for each horizon with the switch pattern held fixed.
pub fn regret_curve_json(seed: u64, noise_case: u8, switch_interval: usize, horizons: &[u32]) -> Result<String, String> {
    let interval = switch_interval.max(1);
    let points = horizons
        .iter()
        .map(|&h| {
            let mut cfg = config(seed, h as usize, noise_case, 0, 0.75)?;
            cfg.schedule.switch_interval = Some(interval);
            cfg.schedule.switches = 5;
            let exp = run_experiment(&cfg).map_err(|f| f.error.to_string())?;
            Ok(json!({
                "horizon": h,
                "total_regret": exp.regret.total(),
                "theta_variation": exp.regret.theta_variation,
                "eta_variation": exp.regret.eta_variation,
            }))
        })
        .collect::<Result<Vec<Value>, String>>()?;
    Ok(Value::Array(points).to_string())
}

/// Steady input for output `y` closest to `(v0, v1)`, from data and from the model.
pub fn steady_input_json(seed: u64, v0: f64, v1: f64, y: f64) -> Result<String, String> {
    let cfg = ExperimentConfig::reference(seed, 1);
    let (system, _, matrices, _) = prepare(&cfg).map_err(|e| e.to_string())?;
    let v = DVector::from_vec(vec![v0, v1]);
    let target = DVector::from_vec(vec![y]);
    let from_data = matrices
        .steady_input(&v, &target, EQUILIBRIUM_TOLERANCE)
        .map_err(|e| e.to_string())?;
    let (from_model, _) = model_steady_state(&system, &target, &v).map_err(|e| e.to_string())?;
    let gain = system.steady_state_gain().map_err(|e| e.to_string())?;
    let out = json!({
        "from_data": from_data.iter().copied().collect::<Vec<_>>(),
        "from_model": from_model.iter().copied().collect::<Vec<_>>(),
        "difference": (&from_data - &from_model).norm(),
        "distance_to_v": (&from_data - &v).norm(),
        "residual": system.equilibrium_residual(&from_data, &target).map_err(|e| e.to_string())?,
        "gain": gain.iter().copied().collect::<Vec<_>>(),
    });
    Ok(out.to_string())
}

fn js(r: Result<String, String>) -> Result<String, JsError> {
    r.map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn closed_loop(seed: u32, horizon: u32, noise_case: u8, switch_interval: u32, step: f64) -> Result<String, JsError> {
    js(closed_loop_json(seed.into(), horizon as usize, noise_case, switch_interval as usize, step))
}

#[wasm_bindgen]
pub fn regret_curve(seed: u32, noise_case: u8, switch_interval: u32, horizons: &[u32]) -> Result<String, JsError> {
    js(regret_curve_json(seed.into(), noise_case, switch_interval as usize, horizons))
}

#[wasm_bindgen]
pub fn steady_input(seed: u32, v0: f64, v1: f64, y: f64) -> Result<String, JsError> {
    js(steady_input_json(seed.into(), v0, v1, y))
}
