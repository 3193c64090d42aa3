//! WebAssembly bindings for the browser demo in `www/`.

use dsca::cli::{km_svg, Stratification};
use dsca::data::{generate_synthetic_cohort, synthetic_risks, GridPos, SynthConfig};
use dsca::net::layers::sparse_pe;
use dsca::survival::{concordance_index, nll_loss, HazardPrediction};
use wasm_bindgen::prelude::*;

/// Median split of a synthetic cohort by its planted risk.
#[wasm_bindgen]
pub struct KmExplorer {
    svg: String,
    p_value: f64,
    c_index: f64,
    n_high: usize,
    n_low: usize,
    n_events: usize,
}

#[wasm_bindgen]
impl KmExplorer {
    #[wasm_bindgen(getter)]
    pub fn svg(&self) -> String {
        self.svg.clone()
    }
    /// `NaN` when the logrank test does not apply.
    #[wasm_bindgen(getter)]
    pub fn p_value(&self) -> f64 {
        self.p_value
    }
    #[wasm_bindgen(getter)]
    pub fn c_index(&self) -> f64 {
        self.c_index
    }
    #[wasm_bindgen(getter)]
    pub fn n_high(&self) -> usize {
        self.n_high
    }
    #[wasm_bindgen(getter)]
    pub fn n_low(&self) -> usize {
        self.n_low
    }
    #[wasm_bindgen(getter)]
    pub fn n_events(&self) -> usize {
        self.n_events
    }
}

pub fn km_explorer_impl(n: usize, beta: f64, censor_rate: f64, seed: u32) -> Result<KmExplorer, String> {
    let cfg = SynthConfig { n_patients: n, m: 1, lambda: 1, d: 1, beta, censor_rate, seed: seed as u64, ..Default::default() };
    let cohort = generate_synthetic_cohort(&cfg).map_err(|e| e.to_string())?;
    let risks = synthetic_risks(&cfg);
    let times: Vec<f64> = cohort.bags.iter().map(|b| b.time).collect();
    let censors: Vec<u8> = cohort.bags.iter().map(|b| b.censor).collect();
    let s = Stratification::new(&risks, &times, &censors).map_err(|e| e.to_string())?;
    let c_index = concordance_index(&risks, &times, &censors).unwrap_or(f64::NAN);
    let t_max = times.iter().copied().fold(0.0, f64::max);
    Ok(KmExplorer {
        svg: km_svg(&s, t_max),
        p_value: s.logrank.map_or(f64::NAN, |r| r.p_value),
        c_index,
        n_high: s.high.len(),
        n_low: s.low.len(),
        n_events: cohort.n_events(),
    })
}

#[wasm_bindgen]
pub fn km_explorer(n: usize, beta: f64, censor_rate: f64, seed: u32) -> Result<KmExplorer, JsError> {
    km_explorer_impl(n, beta, censor_rate, seed).map_err(|e| JsError::new(&e))
}

/// Sparse positional embedding of every cell of a `cols × rows` grid,
/// row-major `[rows · cols, d_e]` with `u` varying fastest.
pub fn pe_grid_impl(cols: u32, rows: u32, d_e: usize) -> Result<Vec<f64>, String> {
    let pos: Vec<GridPos> = (0..rows).flat_map(|v| (0..cols).map(move |u| GridPos { u, v })).collect();
    sparse_pe(&pos, d_e).map_err(|e| e.to_string())
}

#[wasm_bindgen]
pub fn pe_grid(cols: u32, rows: u32, d_e: usize) -> Result<Vec<f64>, JsError> {
    pe_grid_impl(cols, rows, d_e).map_err(|e| JsError::new(&e))
}

/// Survival curve, risk and loss for one hazard vector.
#[wasm_bindgen]
pub struct SurvivalCalc {
    survival: Vec<f64>,
    risk: f64,
    loss: f64,
}

#[wasm_bindgen]
impl SurvivalCalc {
    #[wasm_bindgen(getter)]
    pub fn survival(&self) -> Vec<f64> {
        self.survival.clone()
    }
    #[wasm_bindgen(getter)]
    pub fn risk(&self) -> f64 {
        self.risk
    }
    #[wasm_bindgen(getter)]
    pub fn loss(&self) -> f64 {
        self.loss
    }
}

/// `bin` is 1-based.
pub fn survival_calc_impl(hazards: Vec<f64>, bin: usize, event: bool, alpha: f64) -> Result<SurvivalCalc, String> {
    let loss = nll_loss(&hazards, bin, (!event) as u8, alpha).map_err(|e| e.to_string())?;
    let pred = HazardPrediction::from_hazards(hazards).map_err(|e| e.to_string())?;
    Ok(SurvivalCalc { survival: pred.survival, risk: pred.risk, loss })
}

#[wasm_bindgen]
pub fn survival_calc(hazards: Vec<f64>, bin: usize, event: bool, alpha: f64) -> Result<SurvivalCalc, JsError> {
    survival_calc_impl(hazards, bin, event, alpha).map_err(|e| JsError::new(&e))
}
