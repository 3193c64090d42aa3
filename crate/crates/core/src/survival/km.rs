use super::SurvivalError;

/// Product-limit survival estimate, stepping at each distinct event time.
#[derive(Clone, Debug, PartialEq)]
pub struct KmCurve {
    pub times: Vec<f64>,
    pub survival: Vec<f64>,
    pub at_risk: Vec<usize>,
    pub events: Vec<usize>,
}

impl KmCurve {
    /// Right-continuous step value at `t`.
    pub fn survival_at(&self, t: f64) -> f64 {
        let k = self.times.iter().take_while(|&&x| x <= t).count();
        if k == 0 {
            1.0
        } else {
            self.survival[k - 1]
        }
    }
}

/// Kaplan-Meier estimator. `events[i] == true` marks an observed event;
/// subjects censored at an event time count as at risk at that time.
pub fn kaplan_meier(times: &[f64], events: &[bool]) -> Result<KmCurve, SurvivalError> {
    if times.len() != events.len() {
        return Err(SurvivalError::LengthMismatch(times.len(), events.len()));
    }
    if times.is_empty() {
        return Err(SurvivalError::Empty("kaplan_meier needs at least one subject"));
    }
    let mut order: Vec<usize> = (0..times.len()).collect();
    order.sort_by(|&a, &b| times[a].total_cmp(&times[b]));
    let mut curve = KmCurve { times: vec![], survival: vec![], at_risk: vec![], events: vec![] };
    let mut s = 1.0;
    let mut at_risk = times.len();
    let mut k = 0;
    while k < order.len() {
        let t = times[order[k]];
        let mut d = 0;
        let mut leaving = 0;
        while k < order.len() && times[order[k]] == t {
            d += events[order[k]] as usize;
            leaving += 1;
            k += 1;
        }
        if d > 0 {
            s *= 1.0 - d as f64 / at_risk as f64;
            curve.times.push(t);
            curve.survival.push(s);
            curve.at_risk.push(at_risk);
            curve.events.push(d);
        }
        at_risk -= leaving;
    }
    Ok(curve)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LogrankResult {
    pub chi2: f64,
    pub p_value: f64,
    pub observed_a: f64,
    pub expected_a: f64,
    pub variance: f64,
}

/// Two-group logrank test with a 1-dof chi-square p-value.
pub fn logrank_test(
    a: (&[f64], &[bool]),
    b: (&[f64], &[bool]),
) -> Result<LogrankResult, SurvivalError> {
    for (t, e) in [a, b] {
        if t.len() != e.len() {
            return Err(SurvivalError::LengthMismatch(t.len(), e.len()));
        }
        if t.is_empty() {
            return Err(SurvivalError::Empty("logrank group"));
        }
    }
    let mut pooled: Vec<(f64, bool, bool)> = a
        .0
        .iter()
        .zip(a.1)
        .map(|(&t, &e)| (t, e, true))
        .chain(b.0.iter().zip(b.1).map(|(&t, &e)| (t, e, false)))
        .collect();
    if !pooled.iter().any(|p| p.1) {
        return Err(SurvivalError::NoEvents);
    }
    pooled.sort_by(|x, y| x.0.total_cmp(&y.0));
    let (mut n_a, mut n_b) = (a.0.len() as f64, b.0.len() as f64);
    // per-step O − E written as (d_a·n_b − d_b·n_a)/n, which negates
    // exactly under a label swap
    let (mut observed, mut diff, mut variance) = (0.0, 0.0, 0.0);
    let mut k = 0;
    while k < pooled.len() {
        let t = pooled[k].0;
        let (mut d_a, mut d_b, mut left_a, mut left_b) = (0.0, 0.0, 0.0, 0.0);
        while k < pooled.len() && pooled[k].0 == t {
            let (_, e, in_a) = pooled[k];
            match (in_a, e) {
                (true, true) => d_a += 1.0,
                (false, true) => d_b += 1.0,
                _ => {}
            }
            if in_a {
                left_a += 1.0;
            } else {
                left_b += 1.0;
            }
            k += 1;
        }
        let (n, d) = (n_a + n_b, d_a + d_b);
        if d > 0.0 {
            observed += d_a;
            diff += (d_a * n_b - d_b * n_a) / n;
            if n > 1.0 {
                variance += d * (n_a * n_b) * (n - d) / (n * n * (n - 1.0));
            }
        }
        n_a -= left_a;
        n_b -= left_b;
    }
    let expected = observed - diff;
    let chi2 = if variance > 0.0 { diff * diff / variance } else { 0.0 };
    let p_value = libm::erfc((chi2 / 2.0).sqrt()).clamp(0.0, 1.0);
    Ok(LogrankResult { chi2, p_value, observed_a: observed, expected_a: expected, variance })
}

/// Indices with risk strictly above the median (high group) and the rest.
pub fn stratify_by_median(risks: &[f64]) -> (Vec<usize>, Vec<usize>) {
    if risks.is_empty() {
        return (vec![], vec![]);
    }
    let mut sorted = risks.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let median = if n % 2 == 1 { sorted[n / 2] } else { 0.5 * (sorted[n / 2 - 1] + sorted[n / 2]) };
    (0..n).partition(|&i| risks[i] > median)
}
