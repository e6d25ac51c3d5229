//! Browser bindings: optimal curves for a chosen penalty, the cost of the
//! curve that turns a velocity around, and d1 between two samples.

use mfgaccel::measures::{wasserstein1_1d, Marginal};
use mfgaccel::model::{Coupling, FrozenCoupling, LagrangianSpec, TerminalCost};
use mfgaccel::trajectory::{connecting_curve, eval_cost, minimize_direct};
use wasm_bindgen::prelude::*;

/// A sampled curve with its cost.
#[wasm_bindgen]
#[derive(Debug, Clone)]
pub struct CurvePlot {
    times: Vec<f64>,
    positions: Vec<f64>,
    velocities: Vec<f64>,
    cost: f64,
}

#[wasm_bindgen]
impl CurvePlot {
    #[wasm_bindgen(getter)]
    pub fn times(&self) -> Vec<f64> {
        self.times.clone()
    }

    #[wasm_bindgen(getter)]
    pub fn positions(&self) -> Vec<f64> {
        self.positions.clone()
    }

    #[wasm_bindgen(getter)]
    pub fn velocities(&self) -> Vec<f64> {
        self.velocities.clone()
    }

    #[wasm_bindgen(getter)]
    pub fn cost(&self) -> f64 {
        self.cost
    }
}

/// Optimal path of one agent in the quadratic model `1/2 v^2 + k/2 x^2`
/// on `[0, 1]`; `eps = 0` gives the limit problem where the velocity can jump.
pub fn optimal_path(eps: f64, x: f64, v: f64, stiffness: f64, samples: usize) -> Result<CurvePlot, String> {
    if stiffness.is_nan() || stiffness < 0.0 {
        return Err(format!("stiffness must be nonnegative, got {stiffness}"));
    }
    let spec = LagrangianSpec::quadratic(stiffness, Coupling::NONE, 10.0);
    let sol = minimize_direct(
        eps,
        0.0,
        1.0,
        x,
        v,
        &spec,
        &FrozenCoupling::none(),
        &TerminalCost::ZERO,
        samples,
    )
    .map_err(|e| e.to_string())?;
    let c = &sol.curve;
    Ok(CurvePlot {
        times: (0..c.len()).map(|i| c.time(i)).collect(),
        positions: c.gamma.clone(),
        velocities: c.velocity(),
        cost: sol.cost,
    })
}

/// The cubic that leaves `x = 0` with velocity `v0` and is back at 0 with
/// velocity `v1` after `sqrt(eps)`, with its penalized cost.
pub fn turnaround(v0: f64, v1: f64, eps: f64, samples: usize) -> Result<CurvePlot, String> {
    let curve = connecting_curve(0.0, v0, v1, eps, samples).map_err(|e| e.to_string())?;
    let spec = LagrangianSpec::quadratic(0.0, Coupling::NONE, 10.0);
    let cost = eval_cost(&curve, eps, &spec, &FrozenCoupling::none(), &TerminalCost::ZERO);
    Ok(CurvePlot {
        times: (0..curve.len()).map(|i| curve.time(i)).collect(),
        velocities: curve.velocity(),
        positions: curve.gamma,
        cost,
    })
}

/// Parse whitespace- or comma-separated numbers.
pub fn parse_sample(text: &str) -> Result<Vec<f64>, String> {
    text.split(|c: char| c.is_whitespace() || c == ',')
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<f64>().map_err(|_| format!("not a number: {s:?}")))
        .collect()
}

/// d1 between the empirical measures of two samples on the line.
pub fn sample_distance(a: &str, b: &str) -> Result<f64, String> {
    let empirical = |text: &str| -> Result<Marginal, String> {
        let xs = parse_sample(text)?;
        if xs.is_empty() {
            return Err("empty sample".into());
        }
        let w = vec![1.0 / xs.len() as f64; xs.len()];
        Marginal::new(xs, w).map_err(|e| e.to_string())
    };
    wasserstein1_1d(&empirical(a)?, &empirical(b)?).map_err(|e| e.to_string())
}

#[wasm_bindgen(js_name = optimalPath)]
pub fn optimal_path_js(eps: f64, x: f64, v: f64, stiffness: f64, samples: usize) -> Result<CurvePlot, JsError> {
    optimal_path(eps, x, v, stiffness, samples).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen(js_name = turnaround)]
pub fn turnaround_js(v0: f64, v1: f64, eps: f64, samples: usize) -> Result<CurvePlot, JsError> {
    turnaround(v0, v1, eps, samples).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen(js_name = sampleDistance)]
pub fn sample_distance_js(a: &str, b: &str) -> Result<f64, JsError> {
    sample_distance(a, b).map_err(|e| JsError::new(&e))
}
