use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, StandardNormal};

use super::{canonical_order, Cohort, Coord, DataError, PatientBag};

/// Where the planted prognostic signal lives.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SignalSite {
    Low,
    High,
    Both,
}

impl SignalSite {
    fn in_low(self) -> bool {
        matches!(self, SignalSite::Low | SignalSite::Both)
    }
    fn in_high(self) -> bool {
        matches!(self, SignalSite::High | SignalSite::Both)
    }
}

impl FromStr for SignalSite {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "low" => Ok(SignalSite::Low),
            "high" => Ok(SignalSite::High),
            "both" => Ok(SignalSite::Both),
            other => Err(format!("unknown signal site {other:?} (low|high|both)")),
        }
    }
}

impl fmt::Display for SignalSite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SignalSite::Low => "low",
            SignalSite::High => "high",
            SignalSite::Both => "both",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthConfig {
    pub n_patients: usize,
    pub m: usize,
    pub lambda: usize,
    pub d: usize,
    pub signal_site: SignalSite,
    /// Fraction of each high-resolution square that carries the signal.
    pub signal_fraction: f64,
    /// Log-hazard per unit of latent risk.
    pub beta: f64,
    pub censor_rate: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_patients: 200,
            m: 16,
            lambda: 2,
            d: 32,
            signal_site: SignalSite::Both,
            signal_fraction: 0.25,
            beta: 3.0,
            censor_rate: 0.2,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<(), DataError> {
        let bad = |msg: String| Err(DataError::InvalidConfig(msg));
        if self.n_patients == 0 || self.m == 0 || self.lambda == 0 || self.d == 0 {
            return bad(format!(
                "sizes must be >= 1 (n_patients {}, m {}, lambda {}, d {})",
                self.n_patients, self.m, self.lambda, self.d
            ));
        }
        if !(self.censor_rate >= 0.0 && self.censor_rate < 1.0) {
            return bad(format!("censor_rate {} outside [0, 1)", self.censor_rate));
        }
        if !(self.signal_fraction > 0.0 && self.signal_fraction <= 1.0) {
            return bad(format!("signal_fraction {} outside (0, 1]", self.signal_fraction));
        }
        if !self.beta.is_finite() {
            return bad("beta must be finite".into());
        }
        Ok(())
    }
}

/// Expected censored fraction when event rates are `exp(beta·r)`,
/// `r ~ U(0,1)`, and censoring times are exponential with rate `mu`.
fn expected_censored(mu: f64, beta: f64) -> f64 {
    if beta.abs() < 1e-12 {
        mu / (mu + 1.0)
    } else {
        1.0 - ((mu + beta.exp()) / (mu + 1.0)).ln() / beta
    }
}

/// Censoring rate whose expected censored fraction equals `target`.
fn calibrate_censor_rate(target: f64, beta: f64) -> f64 {
    let (mut lo, mut hi) = (-40.0f64, 40.0f64);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if expected_censored(mid.exp(), beta) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    (0.5 * (lo + hi)).exp()
}

fn random_coords(rng: &mut ChaCha8Rng, m: usize) -> Vec<Coord> {
    let n_wsi = if m >= 2 && rng.random_bool(0.25) { 2 } else { 1 };
    let first = if n_wsi == 2 { rng.random_range(1..m) } else { m };
    let mut coords = Vec::with_capacity(m);
    for (wsi, count) in [first, m - first].into_iter().enumerate().take(n_wsi) {
        // sparse tissue layout: half of a square grid is occupied
        let side = ((2 * count) as f64).sqrt().ceil() as u32;
        let mut cells: Vec<u32> = (0..side * side).collect();
        cells.partial_shuffle(rng, count);
        coords.extend(cells[..count].iter().map(|&c| Coord::new(wsi as u32, c % side, c / side)));
    }
    coords
}

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

const STREAM_DIRECTION: u64 = 0;
const STREAM_RISK: u64 = 1;
const STREAM_LAYOUT: u64 = 2;
const STREAM_NOISE: u64 = 3;
const STREAM_TIMES: u64 = 4;

/// Unit signal direction shared by every patient of a cohort.
pub fn signal_direction(cfg: &SynthConfig) -> Vec<f64> {
    let mut rng = stream(cfg.seed, STREAM_DIRECTION);
    let mut dir: Vec<f64> = (0..cfg.d).map(|_| rng.sample(StandardNormal)).collect();
    let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
    dir.iter_mut().for_each(|v| *v /= norm);
    dir
}

/// Latent risks `r ~ U(0,1)` in patient order.
pub fn synthetic_risks(cfg: &SynthConfig) -> Vec<f64> {
    let mut rng = stream(cfg.seed, STREAM_RISK);
    (0..cfg.n_patients).map(|_| rng.random()).collect()
}

/// Synthetic cohort with a risk-dependent signal planted along one fixed
/// unit direction. Bags are emitted in canonical order.
///
/// Risks, layout, token noise and survival times come from independent
/// random streams of the same seed, so e.g. changing `beta` or the signal
/// site leaves the token noise untouched.
pub fn generate_synthetic_cohort(cfg: &SynthConfig) -> Result<Cohort, DataError> {
    cfg.validate()?;
    let dir = signal_direction(cfg);
    let risks = synthetic_risks(cfg);
    let mut layout = stream(cfg.seed, STREAM_LAYOUT);
    let mut noise = stream(cfg.seed, STREAM_NOISE);
    let mut times = stream(cfg.seed, STREAM_TIMES);

    let censor_dist = (cfg.censor_rate > 0.0)
        .then(|| Exp::new(calibrate_censor_rate(cfg.censor_rate, cfg.beta)).expect("positive rate"));
    let sq = cfg.lambda * cfg.lambda;
    let n_signal = ((cfg.signal_fraction * sq as f64).round() as usize).clamp(1, sq);
    let mut bags = Vec::with_capacity(cfg.n_patients);
    for (i, &risk) in risks.iter().enumerate() {
        let coords = random_coords(&mut layout, cfg.m);
        let mut draw = |n: usize| -> Vec<f64> { (0..n).map(|_| noise.sample(StandardNormal)).collect() };
        let mut low = draw(cfg.m * cfg.d);
        let mut high = draw(sq * cfg.m * cfg.d);
        if cfg.signal_site.in_low() {
            for row in low.chunks_mut(cfg.d) {
                row.iter_mut().zip(&dir).for_each(|(v, s)| *v += risk * s);
            }
        }
        for square in high.chunks_mut(sq * cfg.d) {
            let mut cells: Vec<usize> = (0..sq).collect();
            cells.partial_shuffle(&mut layout, n_signal);
            if cfg.signal_site.in_high() {
                for &c in &cells[..n_signal] {
                    square[c * cfg.d..(c + 1) * cfg.d]
                        .iter_mut()
                        .zip(&dir)
                        .for_each(|(v, s)| *v += risk * s);
                }
            }
        }
        let event_time = Exp::new((cfg.beta * risk).exp()).expect("positive rate").sample(&mut times);
        let censor_time = censor_dist.map_or(f64::INFINITY, |d| d.sample(&mut times));
        let (time, censor) = if censor_time < event_time { (censor_time, 1) } else { (event_time, 0) };
        let bag = PatientBag {
            patient_id: format!("P{i:04}"),
            lambda: cfg.lambda,
            d: cfg.d,
            coords,
            low_tokens: low.into_iter().map(|v| v as f32).collect(),
            high_tokens: high.into_iter().map(|v| v as f32).collect(),
            time,
            censor,
        };
        bags.push(canonical_order(&bag));
    }
    Cohort::new("synthetic", bags)
}
