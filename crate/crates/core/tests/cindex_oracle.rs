use dsca::survival::{concordance_index, SurvivalError};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn brute_force(risks: &[f64], times: &[f64], censors: &[u8]) -> Option<f64> {
    let mut score = 0.0;
    let mut pairs = 0usize;
    for i in 0..risks.len() {
        for j in 0..risks.len() {
            if censors[i] == 0 && times[i] < times[j] {
                pairs += 1;
                if risks[i] > risks[j] {
                    score += 1.0;
                } else if risks[i] == risks[j] {
                    score += 0.5;
                }
            }
        }
    }
    (pairs > 0).then(|| score / pairs as f64)
}

#[test]
fn matches_pair_enumeration_on_random_instances() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let (mut checked, mut with_ties) = (0, 0);
    while checked < 100 {
        let n = rng.random_range(2..=8);
        // small integer supports force time and risk ties
        let times: Vec<f64> = (0..n).map(|_| rng.random_range(0..5) as f64).collect();
        let risks: Vec<f64> = (0..n).map(|_| rng.random_range(0..4) as f64 * 0.25).collect();
        let censors: Vec<u8> = (0..n).map(|_| rng.random_bool(0.35) as u8).collect();
        match (brute_force(&risks, &times, &censors), concordance_index(&risks, &times, &censors)) {
            (Some(want), Ok(got)) => {
                assert_eq!(got, want, "risks {risks:?} times {times:?} censors {censors:?}");
                checked += 1;
                let mut r = risks.clone();
                r.sort_by(f64::total_cmp);
                with_ties += r.windows(2).any(|w| w[0] == w[1]) as usize;
            }
            (None, Err(SurvivalError::NoComparablePairs)) => {}
            (want, got) => panic!("oracle {want:?} vs {got:?}"),
        }
    }
    assert!(with_ties > 20);
}

#[test]
fn continuous_instances_match_too() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..100 {
        let n = rng.random_range(2..=8);
        let times: Vec<f64> = (0..n).map(|_| rng.random()).collect();
        let risks: Vec<f64> = (0..n).map(|_| rng.random::<f64>() - 0.5).collect();
        let censors: Vec<u8> = (0..n).map(|_| rng.random_bool(0.3) as u8).collect();
        if let Some(want) = brute_force(&risks, &times, &censors) {
            assert_eq!(concordance_index(&risks, &times, &censors).unwrap(), want);
        }
    }
}
