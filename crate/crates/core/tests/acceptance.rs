//! Acceptance suite, one test per criterion. Each test writes a
//! `criterion N: PASS|FAIL` line with its measurements to stderr.

use std::io::Write;
use std::sync::OnceLock;
use std::time::Instant;

use dsca::autodiff::{Tape, Tensor};
use dsca::data::{generate_synthetic_cohort, load_bag, save_bag, Coord, PatientBag, SignalSite, SynthConfig};
use dsca::net::layers::{cross_attention_pool, mean_square_pool, CrossAttentionVars};
use dsca::net::{count_parameters, gradcheck_network, tiny_bag, DscaConfig, Fusion, Pool, Streams};
use dsca::survival::{
    concordance_index, kaplan_meier, logrank_test, nll_loss, risk_score, stratify_by_median, survival_from_hazards,
    SurvivalError,
};
use dsca::train::{cross_validate, CvResult, TrainConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol
}

fn gradient_correctness() -> Outcome {
    let start = Instant::now();
    let base = DscaConfig { d: 6, d_e: 4, lambda: 2, n_heads: 2, ..DscaConfig::default() };
    let variants = base.all_variants();
    let (mut worst, mut worst_at, mut failed) = (0.0f64, String::new(), 0);
    for (i, cfg) in variants.iter().enumerate() {
        let bag = tiny_bag(cfg, 3, i as u64);
        let report = gradcheck_network(cfg, &bag, 100 + i as u64, 1e-5, false).expect("gradcheck runs");
        if report.worst() > worst {
            worst = report.worst();
            worst_at = report.variant.clone();
        }
        failed += !report.passed(1e-4) as usize;
    }
    let control = gradcheck_network(&base, &tiny_bag(&base, 3, 0), 1, 1e-5, true).expect("gradcheck runs");
    let secs = start.elapsed().as_secs_f64();
    outcome(
        variants.len() == 48 && failed == 0 && !control.passed(1e-4) && secs < 300.0,
        format!(
            "{} variants, {failed} failing, worst rel error {worst:.2e} ({worst_at}), corrupted control worst {:.2e}, {secs:.1}s",
            variants.len(),
            control.worst()
        ),
    )
}

fn brute_force_c(risks: &[f64], times: &[f64], censors: &[u8]) -> Option<f64> {
    let (mut score, mut pairs) = (0.0, 0usize);
    for i in 0..risks.len() {
        for j in 0..risks.len() {
            if censors[i] == 0 && times[i] < times[j] {
                pairs += 1;
                score += if risks[i] > risks[j] { 1.0 } else if risks[i] == risks[j] { 0.5 } else { 0.0 };
            }
        }
    }
    (pairs > 0).then(|| score / pairs as f64)
}

fn cindex_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let (mut checked, mut mismatches, mut tie_cases) = (0, 0, 0);
    while checked < 100 {
        let n = rng.random_range(2..=8);
        let times: Vec<f64> = (0..n).map(|_| rng.random_range(0..6) as f64).collect();
        let risks: Vec<f64> = (0..n).map(|_| rng.random_range(0..4) as f64).collect();
        let censors: Vec<u8> = (0..n).map(|_| rng.random_bool(0.4) as u8).collect();
        let got = concordance_index(&risks, &times, &censors);
        match brute_force_c(&risks, &times, &censors) {
            Some(want) => {
                checked += 1;
                mismatches += (got.ok() != Some(want)) as usize;
                let mut r = risks.clone();
                r.sort_by(f64::total_cmp);
                tie_cases += r.windows(2).any(|w| w[0] == w[1]) as usize;
            }
            None => mismatches += !matches!(got, Err(SurvivalError::NoComparablePairs)) as usize,
        }
    }
    outcome(mismatches == 0 && tie_cases > 0, format!("{checked} instances, {tie_cases} with risk ties, {mismatches} mismatches"))
}

fn survival_math() -> Outcome {
    let s = survival_from_hazards(&[0.1, 0.2, 0.3, 0.4]).unwrap();
    let s_ok = s.iter().zip([0.9, 0.72, 0.504, 0.3024]).all(|(a, b)| close(*a, b, 1e-4));
    let l1 = nll_loss(&[0.5, 0.3, 0.2, 0.1], 1, 0, 0.0).unwrap();
    let l2 = nll_loss(&[0.0, 0.0, 0.0, 0.0], 2, 1, 0.0).unwrap();
    let l3 = nll_loss(&[0.1, 0.2, 0.3, 0.4], 2, 1, 0.25).unwrap();
    let r1 = risk_score(&[1.0; 4]);
    let r2 = risk_score(&[0.0; 4]);
    let r3 = risk_score(&s);
    let ok = s_ok
        && close(l1, 0.6931, 1e-4)
        && close(l2, 0.0, 1e-4)
        && close(l3, 0.2464, 1e-4)
        && close(r1, -1.0, 1e-4)
        && close(r2, 0.0, 1e-4)
        && close(r3, -0.6066, 1e-4);
    outcome(ok, format!("S {s:.4?}, losses {l1:.4} {l2:.4} {l3:.4}, risks {r1:.4} {r2:.4} {r3:.4}"))
}

fn km_logrank() -> Outcome {
    let km = kaplan_meier(&[1.0, 2.0, 3.0], &[true, false, true]).unwrap();
    let (s1, s3) = (km.survival_at(1.0), km.survival_at(3.0));
    let t = [1.0, 2.0, 2.0, 4.0, 5.0, 7.0];
    let e = [true, false, true, true, false, true];
    let same = logrank_test((&t, &e), (&t, &e)).unwrap();
    let (ta, ea) = ([1.0, 3.0, 4.0, 6.0, 8.0], [true, true, false, true, true]);
    let (tb, eb) = ([2.0, 5.0, 9.0, 10.0], [false, true, true, false]);
    let ab = logrank_test((&ta, &ea), (&tb, &eb)).unwrap();
    let ba = logrank_test((&tb, &eb), (&ta, &ea)).unwrap();
    let ok = close(s1, 2.0 / 3.0, 1e-12)
        && s3 == 0.0
        && same.chi2 < 1e-10
        && same.p_value > 0.999
        && ab.chi2 == ba.chi2
        && ab.p_value == ba.p_value;
    outcome(
        ok,
        format!(
            "S(1) {s1:.6}, S(3) {s3}, identical chi2 {:.1e} p {:.6}, swap chi2 {} vs {}",
            same.chi2, same.p_value, ab.chi2, ba.chi2
        ),
    )
}

fn uniform(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

fn pooling_invariants() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let (d, d_e, heads) = (5, 4, 2);
    let (mut worst_sum, mut worst_mean, mut counts_ok) = (0.0f64, 0.0f64, true);
    for lambda in [1, 2, 4] {
        for m in [1, 3, 6] {
            let sq = lambda * lambda;
            let o_h = uniform(&mut rng, m * sq * d_e);
            let x_l = uniform(&mut rng, m * d);
            let w_l = uniform(&mut rng, d * d_e);
            let w_k = uniform(&mut rng, d_e * d_e);
            let w_v = uniform(&mut rng, d_e * d_e);
            for zero_query in [false, true] {
                let w_q = if zero_query { vec![0.0; d_e * d_e] } else { uniform(&mut rng, d_e * d_e) };
                let mut tape = Tape::<f64>::new();
                let mut leaf = |shape: &[usize], v: &[f64]| tape.param(Tensor::new(shape.to_vec(), v.to_vec()).unwrap());
                let oh = leaf(&[m * sq, d_e], &o_h);
                let xl = leaf(&[m, d], &x_l);
                let w = CrossAttentionVars {
                    w_l: leaf(&[d, d_e], &w_l),
                    w_q: leaf(&[d_e, d_e], &w_q),
                    w_k: leaf(&[d_e, d_e], &w_k),
                    w_v: leaf(&[d_e, d_e], &w_v),
                };
                let wv = w.w_v;
                let (out, attn) = cross_attention_pool(&mut tape, oh, xl, &w, lambda, heads).unwrap();
                counts_ok &= tape.shape(out) == [m, d_e];
                for row in tape.data(attn).chunks(sq) {
                    worst_sum = worst_sum.max((row.iter().sum::<f64>() - 1.0).abs());
                }
                if zero_query {
                    let values = tape.matmul(oh, wv).unwrap();
                    let mean = mean_square_pool(&mut tape, values, lambda).unwrap();
                    let diff = tape.data(out).iter().zip(tape.data(mean)).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
                    worst_mean = worst_mean.max(diff);
                }
            }
        }
    }
    outcome(
        worst_sum < 1e-6 && worst_mean < 1e-6 && counts_ok,
        format!("max |row sum - 1| {worst_sum:.1e}, zero-query vs value mean {worst_mean:.1e}, output count m for lambda 1/2/4: {counts_ok}"),
    )
}

fn acceptance_model() -> DscaConfig {
    DscaConfig { d: 32, d_e: 16, lambda: 2, conv_k: 5, n_heads: 2, ..DscaConfig::default() }
}

fn acceptance_training(seed: u64) -> TrainConfig {
    TrainConfig { max_epochs: 60, seed, ..TrainConfig::default() }
}

/// Training for the ablation and stratification runs, whose criteria fix
/// the cohort but not the schedule.
fn pipeline_training(seed: u64) -> TrainConfig {
    TrainConfig { lr: 1e-3, ..acceptance_training(seed) }
}

fn cohort_cfg(beta: f64, site: SignalSite, seed: u64) -> SynthConfig {
    SynthConfig { n_patients: 200, m: 16, lambda: 2, d: 32, beta, signal_site: site, censor_rate: 0.2, seed, ..Default::default() }
}

fn cv(beta: f64, site: SignalSite, seed: u64, model: &DscaConfig, train: &TrainConfig) -> CvResult {
    let cohort = generate_synthetic_cohort(&cohort_cfg(beta, site, seed)).unwrap();
    cross_validate(&cohort, 5, model, train).unwrap()
}

fn signal_cv() -> &'static (CvResult, f64) {
    static SIGNAL: OnceLock<(CvResult, f64)> = OnceLock::new();
    SIGNAL.get_or_init(|| {
        let start = Instant::now();
        let cv = cv(3.0, SignalSite::Both, 0, &acceptance_model(), &acceptance_training(0));
        (cv, start.elapsed().as_secs_f64())
    })
}

fn learnability() -> Outcome {
    let (signal, secs) = signal_cv();
    let null = cv(0.0, SignalSite::Both, 0, &acceptance_model(), &acceptance_training(0));
    let ok = signal.mean_c_index >= 0.75 && (0.40..=0.60).contains(&null.mean_c_index);
    outcome(
        ok,
        format!(
            "signal mean C {:.4} (need >= 0.75), null mean C {:.4} (need 0.40..0.60), signal CV {secs:.0}s",
            signal.mean_c_index, null.mean_c_index
        ),
    )
}

fn ablation_trend() -> Outcome {
    let dual = acceptance_model();
    let mean = DscaConfig { pool: Pool::Mean, ..dual.clone() };
    let low = DscaConfig { streams: Streams::Low, ..dual.clone() };
    let mut wins = 0;
    let mut parts = Vec::new();
    for seed in 0..5 {
        let c: Vec<f64> = [&dual, &mean, &low].iter().map(|m| cv(3.0, SignalSite::High, seed, m, &pipeline_training(seed)).mean_c_index).collect();
        let win = c[0] >= c[1] && c[0] >= c[2];
        wins += win as usize;
        parts.push(format!("s{seed} {:.3}/{:.3}/{:.3}{}", c[0], c[1], c[2], if win { "+" } else { "" }));
    }
    outcome(wins >= 4, format!("dual-xattn/mean/low per seed: {}; {wins} of 5 wins (need 4)", parts.join(", ")))
}

fn stratification() -> Outcome {
    let signal = &cv(3.0, SignalSite::Both, 0, &acceptance_model(), &pipeline_training(0));
    let risks: Vec<f64> = signal.oof.iter().map(|r| r.risk).collect();
    let (high, low) = stratify_by_median(&risks);
    let group = |idx: &[usize]| -> (Vec<f64>, Vec<bool>) {
        (idx.iter().map(|&i| signal.oof[i].time).collect(), idx.iter().map(|&i| signal.oof[i].censor == 0).collect())
    };
    let (th, eh) = group(&high);
    let (tl, el) = group(&low);
    match logrank_test((&th, &eh), (&tl, &el)) {
        Ok(r) => outcome(r.p_value < 0.05, format!("high {} / low {}, logrank p {:.4e} (need < 0.05)", high.len(), low.len(), r.p_value)),
        Err(e) => outcome(false, format!("logrank not computable: {e}")),
    }
}

fn parameter_count() -> Outcome {
    let full = count_parameters(&DscaConfig::default());
    let rel = (full as f64 - 6.31e6).abs() / 6.31e6;
    let mini = DscaConfig {
        d: 2,
        d_e: 2,
        lambda: 1,
        conv_k: 1,
        n_heads: 1,
        ffn_mult: 1,
        n_t: 1,
        streams: Streams::Low,
        fusion: Fusion::Concat,
        ..DscaConfig::default()
    };
    // conv 2*2*1 + 2; encoder 4 projections of 2*2 + 2, two layer norms of
    // 2 + 2, ffn 2*2 + 2 twice; gap 2*2 + 2; head 2 -> 1 -> 1
    let by_hand = (4 + 2) + (4 * (4 + 2) + 2 * (2 + 2) + 2 * (4 + 2)) + (4 + 2) + ((2 + 1) + (1 + 1));
    let got = count_parameters(&mini);
    outcome(
        rel <= 0.25 && got == by_hand,
        format!("defaults {full} ({:.1}% from 6.31M), miniature {got} vs hand count {by_hand}", 100.0 * rel),
    )
}

fn random_bag(rng: &mut ChaCha8Rng, k: usize) -> PatientBag {
    let m = rng.random_range(1..10);
    let lambda = rng.random_range(1..4);
    let d = rng.random_range(1..7);
    let coords = (0..m as u32).map(|i| Coord::new(i % 3, 4 * i + rng.random_range(0..4), rng.random_range(0..500))).collect();
    let low_tokens = (0..m * d).map(|_| f32::from_bits(rng.random_range(0..0x7f00_0000)) * if rng.random() { 1.0 } else { -1.0 }).collect();
    let high_tokens = (0..lambda * lambda * m * d).map(|_| rng.random_range(-1e6f32..1e6)).collect();
    PatientBag { patient_id: format!("r{k}"), lambda, d, coords, low_tokens, high_tokens, time: 0.0, censor: 0 }
}

fn determinism_and_format() -> Outcome {
    let cohort = generate_synthetic_cohort(&SynthConfig { n_patients: 40, m: 4, lambda: 2, d: 6, seed: 3, ..Default::default() }).unwrap();
    let model = DscaConfig { d: 6, d_e: 4, lambda: 2, n_heads: 2, ..DscaConfig::default() };
    let tc = TrainConfig { max_epochs: 3, lr: 1e-3, accum_steps: 4, seed: 3, ..TrainConfig::default() };
    let a = cross_validate(&cohort, 5, &model, &tc).unwrap();
    let b = cross_validate(&cohort, 5, &model, &tc).unwrap();
    let csv_same = a.metrics_csv() == b.metrics_csv() && a.oof_csv() == b.oof_csv();
    let dir = tempfile::tempdir().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut exact = 0;
    for k in 0..50 {
        let bag = random_bag(&mut rng, k);
        let path = dir.path().join(format!("r{k}.dsb"));
        save_bag(&bag, &path).unwrap();
        let back = load_bag(&path).unwrap();
        let bits = |v: &[f32]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        exact += (back.coords == bag.coords
            && (back.lambda, back.d) == (bag.lambda, bag.d)
            && bits(&back.low_tokens) == bits(&bag.low_tokens)
            && bits(&back.high_tokens) == bits(&bag.high_tokens)) as usize;
    }
    outcome(csv_same && exact == 50, format!("metrics/oof CSVs identical: {csv_same}, bit-exact bag round trips {exact}/50"))
}

fn check(id: u8, o: Outcome) {
    let line = format!("criterion {id:>2}: {}  {}\n", if o.pass { "PASS" } else { "FAIL" }, o.detail);
    // written past the test harness capture so passing criteria show too
    let _ = std::io::stderr().write_all(line.as_bytes());
    assert!(o.pass, "{}", line.trim_end());
}

#[test]
fn criterion_01_gradient_correctness() {
    check(1, gradient_correctness());
}

#[test]
fn criterion_02_cindex_oracle() {
    check(2, cindex_oracle());
}

#[test]
fn criterion_03_survival_math() {
    check(3, survival_math());
}

#[test]
fn criterion_04_km_logrank() {
    check(4, km_logrank());
}

#[test]
fn criterion_05_pooling_invariants() {
    check(5, pooling_invariants());
}

#[test]
fn criterion_06_synthetic_learnability() {
    check(6, learnability());
}

#[test]
fn criterion_07_ablation_trend() {
    check(7, ablation_trend());
}

#[test]
fn criterion_08_stratification() {
    check(8, stratification());
}

#[test]
fn criterion_09_parameter_count() {
    check(9, parameter_count());
}

#[test]
fn criterion_10_determinism_and_format() {
    check(10, determinism_and_format());
}
