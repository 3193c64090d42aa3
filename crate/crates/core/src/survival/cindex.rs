use super::SurvivalError;

/// Harrell's concordance index.
///
/// A pair `(i, j)` is comparable when `i` had the event (`censor[i] == 0`)
/// and `times[i] < times[j]`; it is concordant when `risks[i] > risks[j]`.
/// Risk ties count one half.
pub fn concordance_index(risks: &[f64], times: &[f64], censors: &[u8]) -> Result<f64, SurvivalError> {
    let n = risks.len();
    if times.len() != n {
        return Err(SurvivalError::LengthMismatch(n, times.len()));
    }
    if censors.len() != n {
        return Err(SurvivalError::LengthMismatch(n, censors.len()));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| times[a].total_cmp(&times[b]));
    // twice the concordance count keeps half-ties integral
    let (mut twice_concordant, mut comparable) = (0u64, 0u64);
    let mut later_start = 0;
    for (pos, &i) in order.iter().enumerate() {
        if later_start <= pos {
            later_start = pos + 1;
            while later_start < n && times[order[later_start]] == times[i] {
                later_start += 1;
            }
        }
        if censors[i] != 0 {
            continue;
        }
        for &j in &order[later_start..] {
            comparable += 1;
            twice_concordant += match risks[i].partial_cmp(&risks[j]) {
                Some(std::cmp::Ordering::Greater) => 2,
                Some(std::cmp::Ordering::Equal) => 1,
                _ => 0,
            };
        }
    }
    if comparable == 0 {
        return Err(SurvivalError::NoComparablePairs);
    }
    Ok(twice_concordant as f64 / (2 * comparable) as f64)
}
