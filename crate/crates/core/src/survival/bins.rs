use super::SurvivalError;

/// Cut points splitting the time axis into `n_t` right-open bins.
#[derive(Clone, Debug, PartialEq)]
pub struct TimeBins {
    pub n_t: usize,
    pub edges: Vec<f64>,
}

// Linear-interpolation quantile of sorted data (the "type 7" rule).
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Edges at the `1/n_t, …, (n_t−1)/n_t` quantiles of the uncensored times,
/// or of all times when fewer than `n_t` events are available.
pub fn make_time_bins(times: &[f64], censors: &[u8], n_t: usize) -> Result<TimeBins, SurvivalError> {
    if times.len() != censors.len() {
        return Err(SurvivalError::LengthMismatch(times.len(), censors.len()));
    }
    if n_t == 0 {
        return Err(SurvivalError::DegenerateTimes { n_t, msg: "n_t must be >= 1".into() });
    }
    let events: Vec<f64> = times.iter().zip(censors).filter(|(_, &c)| c == 0).map(|(&t, _)| t).collect();
    let mut pool = if events.len() >= n_t { events } else { times.to_vec() };
    pool.sort_by(f64::total_cmp);
    let mut distinct = pool.clone();
    distinct.dedup();
    if distinct.len() < n_t {
        return Err(SurvivalError::DegenerateTimes {
            n_t,
            msg: format!("only {} distinct times", distinct.len()),
        });
    }
    let edges: Vec<f64> = (1..n_t).map(|k| quantile(&pool, k as f64 / n_t as f64)).collect();
    if edges.windows(2).any(|w| w[1] <= w[0]) {
        return Err(SurvivalError::DegenerateTimes { n_t, msg: format!("tied quantile edges {edges:?}") });
    }
    Ok(TimeBins { n_t, edges })
}

impl TimeBins {
    /// 1-based bin of `time`; bin `k` covers `[edge_{k-1}, edge_k)`, with the
    /// outer bins open-ended.
    pub fn assign_bin(&self, time: f64) -> usize {
        1 + self.edges.iter().take_while(|&&e| time >= e).count()
    }
}
