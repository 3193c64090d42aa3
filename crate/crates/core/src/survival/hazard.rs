use super::SurvivalError;

/// Hazards are clamped into `[HAZARD_CLAMP, 1 − HAZARD_CLAMP]` before logs.
pub const HAZARD_CLAMP: f64 = 1e-7;

/// Per-bin hazards with the survival curve and scalar risk derived from them.
#[derive(Clone, Debug, PartialEq)]
pub struct HazardPrediction {
    pub hazards: Vec<f64>,
    pub survival: Vec<f64>,
    pub risk: f64,
}

impl HazardPrediction {
    pub fn from_hazards(hazards: Vec<f64>) -> Result<Self, SurvivalError> {
        let survival = survival_from_hazards(&hazards)?;
        let risk = risk_score(&survival);
        Ok(Self { hazards, survival, risk })
    }
}

/// `S(t) = Π_{s ≤ t} (1 − h(s))`, with `S(0) = 1` implied.
pub fn survival_from_hazards(hazards: &[f64]) -> Result<Vec<f64>, SurvivalError> {
    let mut s = 1.0;
    hazards
        .iter()
        .map(|&h| {
            if !(0.0..=1.0).contains(&h) {
                return Err(SurvivalError::OutOfRangeHazard(h));
            }
            s *= 1.0 - h;
            Ok(s)
        })
        .collect()
}

/// Negative mean survival probability; larger means higher risk.
pub fn risk_score(survival: &[f64]) -> f64 {
    if survival.is_empty() {
        return 0.0;
    }
    -survival.iter().sum::<f64>() / survival.len() as f64
}

/// Discrete-time negative log-likelihood of one patient. `bin` is 1-based;
/// `censor == 1` marks a censored patient whose term is weighted by
/// `1 − alpha`.
pub fn nll_loss(hazards: &[f64], bin: usize, censor: u8, alpha: f64) -> Result<f64, SurvivalError> {
    let n_t = hazards.len();
    if bin == 0 || bin > n_t {
        return Err(SurvivalError::BadBin { bin, n_t });
    }
    if let Some(&h) = hazards.iter().find(|h| !(0.0..=1.0).contains(*h)) {
        return Err(SurvivalError::OutOfRangeHazard(h));
    }
    let h: Vec<f64> = hazards.iter().map(|v| v.clamp(HAZARD_CLAMP, 1.0 - HAZARD_CLAMP)).collect();
    let log_surv = |upto: usize| h[..upto].iter().map(|v| (1.0 - v).ln()).sum::<f64>();
    Ok(if censor == 0 {
        -(log_surv(bin - 1) + h[bin - 1].ln())
    } else {
        -(1.0 - alpha) * log_surv(bin)
    })
}
