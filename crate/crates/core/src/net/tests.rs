use proptest::prelude::*;

use super::layers::*;
use super::*;
use crate::autodiff::{Tape, Tensor, Var};
use crate::data::{Coord, GridPos, PatientBag};
use crate::survival::nll_loss;

fn leaf(tape: &mut Tape<f64>, shape: &[usize], data: &[f64]) -> Var {
    tape.param(Tensor::new(shape.to_vec(), data.to_vec()).unwrap())
}

fn zeros(tape: &mut Tape<f64>, shape: &[usize]) -> Var {
    tape.param(Tensor::zeros(shape.to_vec()))
}

fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
}

fn lcg(seed: u64, n: usize) -> Vec<f64> {
    let mut s = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
    (0..n)
        .map(|_| {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((s >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
        })
        .collect()
}

fn small_cfg() -> DscaConfig {
    DscaConfig { d: 6, d_e: 4, lambda: 2, n_heads: 2, ..Default::default() }
}

// ---- embed_low ----

#[test]
fn embed_low_preserves_length() {
    let cfg = DscaConfig { d: 8, d_e: 3, n_heads: 1, conv_k: 5, ..Default::default() };
    let mut tape = Tape::new();
    let x = leaf(&mut tape, &[4, 8], &lcg(1, 32));
    let w = leaf(&mut tape, &[3, 8, 5], &lcg(2, 120));
    let b = leaf(&mut tape, &[3], &[0.1, 0.2, 0.3]);
    let e = embed_low(&mut tape, x, w, b, &cfg).unwrap();
    assert_eq!(tape.shape(e), &[4, 3]);
}

#[test]
fn embed_low_of_zeros_is_bias() {
    let cfg = DscaConfig { d: 8, d_e: 3, n_heads: 1, ..Default::default() };
    let mut tape = Tape::new();
    let x = zeros(&mut tape, &[4, 8]);
    let w = leaf(&mut tape, &[3, 8, 5], &lcg(3, 120));
    let b = leaf(&mut tape, &[3], &[0.1, -0.2, 0.3]);
    let e = embed_low(&mut tape, x, w, b, &cfg).unwrap();
    for row in tape.data(e).chunks(3) {
        assert_eq!(row, &[0.1, -0.2, 0.3]);
    }
}

#[test]
fn embed_low_unit_kernel_is_projection() {
    let cfg = DscaConfig { d: 5, d_e: 2, n_heads: 1, conv_k: 1, ..Default::default() };
    let xd = lcg(4, 15);
    let proj = lcg(5, 10); // [d, d_e]
    let mut conv_w = vec![0.0; 10]; // [d_e, d, 1]
    for o in 0..2 {
        for c in 0..5 {
            conv_w[o * 5 + c] = proj[c * 2 + o];
        }
    }
    let mut tape = Tape::new();
    let x = leaf(&mut tape, &[3, 5], &xd);
    let w = leaf(&mut tape, &[2, 5, 1], &conv_w);
    let b = zeros(&mut tape, &[2]);
    let e = embed_low(&mut tape, x, w, b, &cfg).unwrap();
    let mut expect = vec![0.0; 6];
    for r in 0..3 {
        for o in 0..2 {
            expect[r * 2 + o] = (0..5).map(|c| xd[r * 5 + c] * proj[c * 2 + o]).sum();
        }
    }
    assert!(close(tape.data(e), &expect, 1e-14));
}

#[test]
fn embed_low_stride_shortens_sequence() {
    let cfg = DscaConfig { d: 4, d_e: 2, n_heads: 1, conv_s: 3, ..Default::default() };
    let mut tape = Tape::new();
    let x = leaf(&mut tape, &[10, 4], &lcg(6, 40));
    let w = leaf(&mut tape, &[2, 4, 5], &lcg(7, 40));
    let b = zeros(&mut tape, &[2]);
    let e = embed_low(&mut tape, x, w, b, &cfg).unwrap();
    assert_eq!(tape.shape(e), &[4, 2]);
}

// ---- embed_high ----

#[test]
fn embed_high_degenerate_square() {
    let cfg = DscaConfig { d: 3, d_e: 2, lambda: 1, n_heads: 1, ..Default::default() };
    let mut tape = Tape::new();
    let x = leaf(&mut tape, &[5, 3], &lcg(8, 15));
    let w = leaf(&mut tape, &[3, 2], &lcg(9, 6));
    let b = zeros(&mut tape, &[2]);
    let o = embed_high(&mut tape, x, w, b, &cfg).unwrap();
    assert_eq!(tape.shape(o), &[5, 2]);
}

#[test]
fn embed_high_zero_map() {
    let cfg = DscaConfig { d: 3, d_e: 2, lambda: 2, n_heads: 1, ..Default::default() };
    let mut tape = Tape::new();
    let x = leaf(&mut tape, &[8, 3], &lcg(10, 24));
    let w = zeros(&mut tape, &[3, 2]);
    let b = zeros(&mut tape, &[2]);
    let o = embed_high(&mut tape, x, w, b, &cfg).unwrap();
    assert!(tape.data(o).iter().all(|&v| v == 0.0));
}

#[test]
fn embed_high_single_token_by_hand() {
    let cfg = DscaConfig { d: 4, d_e: 2, lambda: 1, n_heads: 1, ..Default::default() };
    let mut tape = Tape::new();
    let x = leaf(&mut tape, &[1, 4], &[1.0, -2.0, 0.5, 3.0]);
    let w = leaf(&mut tape, &[4, 2], &[0.1, -0.3, 0.2, 0.4, -0.5, 0.6, 0.3, -0.1]);
    let b = leaf(&mut tape, &[2], &[0.05, -0.05]);
    let o = embed_high(&mut tape, x, w, b, &cfg).unwrap();
    // col 0: 0.1 − 0.4 − 0.25 + 0.9 + 0.05 = 0.4
    // col 1: −0.3 − 0.8 + 0.3 − 0.3 − 0.05 = −1.15 → 0
    assert!(close(tape.data(o), &[0.4, 0.0], 1e-12));
}

#[test]
fn embed_high_conv2d_keeps_square_layout() {
    let cfg = DscaConfig { d: 3, d_e: 2, lambda: 2, n_heads: 1, high_embed: HighEmbed::Conv2d, ..Default::default() };
    let mut tape = Tape::new();
    let x = leaf(&mut tape, &[12, 3], &lcg(11, 36));
    let w = leaf(&mut tape, &[2, 3, 3, 3], &lcg(12, 54));
    let b = zeros(&mut tape, &[2]);
    let o = embed_high(&mut tape, x, w, b, &cfg).unwrap();
    assert_eq!(tape.shape(o), &[12, 2]);
    assert!(tape.data(o).iter().all(|&v| v >= 0.0));
}

// ---- square pooling ----

struct XAttnCase {
    m: usize,
    lambda: usize,
    d: usize,
    d_e: usize,
    o_h: Vec<f64>,
    x_l: Vec<f64>,
    w_l: Vec<f64>,
    w_q: Vec<f64>,
    w_k: Vec<f64>,
    w_v: Vec<f64>,
}

impl XAttnCase {
    fn random(m: usize, lambda: usize, d: usize, d_e: usize, seed: u64) -> Self {
        let cell = lambda * lambda;
        Self {
            m,
            lambda,
            d,
            d_e,
            o_h: lcg(seed, m * cell * d_e),
            x_l: lcg(seed + 1, m * d),
            w_l: lcg(seed + 2, d * d_e),
            w_q: lcg(seed + 3, d_e * d_e),
            w_k: lcg(seed + 4, d_e * d_e),
            w_v: lcg(seed + 5, d_e * d_e),
        }
    }

    fn run(&self, heads: usize) -> (Vec<f64>, Vec<f64>) {
        let mut tape = Tape::new();
        let cell = self.lambda * self.lambda;
        let o_h = leaf(&mut tape, &[self.m * cell, self.d_e], &self.o_h);
        let x_l = leaf(&mut tape, &[self.m, self.d], &self.x_l);
        let w = CrossAttentionVars {
            w_l: leaf(&mut tape, &[self.d, self.d_e], &self.w_l),
            w_q: leaf(&mut tape, &[self.d_e, self.d_e], &self.w_q),
            w_k: leaf(&mut tape, &[self.d_e, self.d_e], &self.w_k),
            w_v: leaf(&mut tape, &[self.d_e, self.d_e], &self.w_v),
        };
        let (e, a) = cross_attention_pool(&mut tape, o_h, x_l, &w, self.lambda, heads).unwrap();
        (tape.data(e).to_vec(), tape.data(a).to_vec())
    }

    // direct per-square, per-head evaluation with plain loops
    fn oracle(&self, heads: usize) -> Vec<f64> {
        let (d, d_e, cell) = (self.d, self.d_e, self.lambda * self.lambda);
        let dh = d_e / heads;
        let matvec = |x: &[f64], w: &[f64], din: usize| -> Vec<f64> {
            (0..d_e).map(|o| (0..din).map(|c| x[c] * w[c * d_e + o]).sum()).collect()
        };
        let mut out = vec![0.0; self.m * d_e];
        for j in 0..self.m {
            let q = matvec(&matvec(&self.x_l[j * d..(j + 1) * d], &self.w_l, d), &self.w_q, d_e);
            let rows: Vec<&[f64]> = (0..cell).map(|t| &self.o_h[(j * cell + t) * d_e..(j * cell + t + 1) * d_e]).collect();
            let ks: Vec<Vec<f64>> = rows.iter().map(|r| matvec(r, &self.w_k, d_e)).collect();
            let vs: Vec<Vec<f64>> = rows.iter().map(|r| matvec(r, &self.w_v, d_e)).collect();
            for h in 0..heads {
                let sl = h * dh..(h + 1) * dh;
                let logits: Vec<f64> = ks
                    .iter()
                    .map(|k| q[sl.clone()].iter().zip(&k[sl.clone()]).map(|(a, b)| a * b).sum::<f64>() / (dh as f64).sqrt())
                    .collect();
                let mx = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let ex: Vec<f64> = logits.iter().map(|l| (l - mx).exp()).collect();
                let z: f64 = ex.iter().sum();
                for c in sl.clone() {
                    out[j * d_e + c] = (0..cell).map(|t| ex[t] / z * vs[t][c]).sum();
                }
            }
        }
        out
    }

    fn value_mean(&self) -> Vec<f64> {
        let (d_e, cell) = (self.d_e, self.lambda * self.lambda);
        let mut out = vec![0.0; self.m * d_e];
        for j in 0..self.m {
            for t in 0..cell {
                let r = &self.o_h[(j * cell + t) * d_e..(j * cell + t + 1) * d_e];
                for o in 0..d_e {
                    out[j * d_e + o] += (0..d_e).map(|c| r[c] * self.w_v[c * d_e + o]).sum::<f64>() / cell as f64;
                }
            }
        }
        out
    }
}

#[test]
fn cross_attention_zero_query_is_value_mean() {
    let mut case = XAttnCase::random(3, 2, 5, 4, 20);
    case.w_q = vec![0.0; 16];
    let (e, a) = case.run(2);
    assert!(a.iter().all(|&w| (w - 0.25).abs() < 1e-12));
    assert!(close(&e, &case.value_mean(), 1e-6));
}

#[test]
fn cross_attention_singleton_square() {
    let case = XAttnCase::random(4, 1, 3, 2, 30);
    let (e, a) = case.run(1);
    assert!(a.iter().all(|&w| w == 1.0));
    assert!(close(&e, &case.value_mean(), 1e-12));
}

#[test]
fn cross_attention_hand_case() {
    let case = XAttnCase {
        m: 1,
        lambda: 2,
        d: 2,
        d_e: 2,
        o_h: vec![1.0, 0.0, 0.0, 1.0, 1.0, 1.0, 0.0, 0.0],
        x_l: vec![1.0, 2.0],
        w_l: vec![1.0, 0.0, 0.0, 1.0],
        w_q: vec![1.0, 0.0, 0.0, 1.0],
        w_k: vec![1.0, 0.0, 0.0, 1.0],
        w_v: vec![2.0, 0.0, 0.0, 3.0],
    };
    let (e, a) = case.run(1);
    // q = (1, 2); logits k·q/√2 = (1, 2, 3, 0)/√2
    let r = std::f64::consts::FRAC_1_SQRT_2;
    let ex = [r.exp(), (2.0 * r).exp(), (3.0 * r).exp(), 1.0];
    let z: f64 = ex.iter().sum();
    let want_a: Vec<f64> = ex.iter().map(|v| v / z).collect();
    let want_e = [2.0 * (want_a[0] + want_a[2]), 3.0 * (want_a[1] + want_a[2])];
    assert!(close(&a, &want_a, 1e-12));
    assert!(close(&e, &want_e, 1e-12));
    assert!(close(&e, &case.oracle(1), 1e-12));
}

#[test]
fn cross_attention_matches_loop_oracle_multihead() {
    for seed in 0..5 {
        let case = XAttnCase::random(3, 2, 5, 6, 100 + seed * 10);
        let (e, a) = case.run(3);
        assert!(close(&e, &case.oracle(3), 1e-12));
        for w in a.chunks(4) {
            assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        }
    }
}

#[test]
fn square_pooling_reduces_by_lambda_squared() {
    for lambda in [1, 2, 4] {
        let m = 3;
        let case = XAttnCase::random(m, lambda, 4, 2, 7);
        let (e, _) = case.run(1);
        assert_eq!(e.len(), m * 2);
        let mut tape = Tape::new();
        let o = leaf(&mut tape, &[m * lambda * lambda, 2], &case.o_h);
        let p = mean_square_pool(&mut tape, o, lambda).unwrap();
        assert_eq!(tape.shape(p), &[m, 2]);
    }
}

#[test]
fn mean_pool_examples() {
    let mut tape = Tape::new();
    let same = leaf(&mut tape, &[4, 3], &[1.0, 2.0, 3.0].repeat(4));
    let p = mean_square_pool(&mut tape, same, 2).unwrap();
    assert_eq!(tape.data(p), &[1.0, 2.0, 3.0]);
    let mut basis = vec![0.0; 16];
    (0..4).for_each(|i| basis[i * 4 + i] = 1.0);
    let b = leaf(&mut tape, &[4, 4], &basis);
    let p = mean_square_pool(&mut tape, b, 2).unwrap();
    assert_eq!(tape.data(p), &[0.25; 4]);
    let r = lcg(40, 2 * 9 * 3);
    let x = leaf(&mut tape, &[18, 3], &r);
    let p = mean_square_pool(&mut tape, x, 3).unwrap();
    let mut want = vec![0.0; 6];
    for j in 0..2 {
        for c in 0..3 {
            want[j * 3 + c] = (0..9).map(|t| r[(j * 9 + t) * 3 + c]).sum::<f64>() / 9.0;
        }
    }
    assert!(close(tape.data(p), &want, 1e-14));
}

#[test]
fn group_mean_handles_short_tail() {
    let mut tape = Tape::new();
    let x = leaf(&mut tape, &[5, 1], &[1.0, 2.0, 3.0, 4.0, 5.0]);
    let g = group_mean(&mut tape, x, 2).unwrap();
    assert_eq!(tape.data(g), &[1.5, 3.5, 5.0]);
}

// ---- positional embedding ----

#[test]
fn pe_at_origin() {
    let pe = sparse_pe(&[GridPos { u: 0, v: 0 }], 8).unwrap();
    assert_eq!(pe, vec![0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0]);
}

#[test]
fn pe_direct_sinusoids() {
    let pe = sparse_pe(&[GridPos { u: 3, v: 0 }], 8).unwrap();
    let f = 3.0 / 10000f64.sqrt();
    let want = [3f64.sin(), 3f64.cos(), f.sin(), f.cos(), 0.0, 1.0, 0.0, 1.0];
    assert!(close(&pe, &want, 1e-15));
}

#[test]
fn pe_is_function_of_coords() {
    let p = GridPos { u: 5, v: 9 };
    let pe = sparse_pe(&[p, GridPos { u: 1, v: 1 }, p], 6).unwrap();
    assert_eq!(pe[0..6], pe[12..18]);
    assert!(matches!(sparse_pe(&[p], 5), Err(NetError::OddEmbedDim(5))));
}

// ---- transformer encoder ----

fn encoder_vars(tape: &mut Tape<f64>, d_e: usize, hidden: usize, fill: impl Fn(usize, usize) -> Vec<f64>) -> EncoderVars {
    let mut k = 0;
    let mut lin = |tape: &mut Tape<f64>, i: usize, o: usize| {
        k += 1;
        (leaf(tape, &[i, o], &fill(k, i * o)), leaf(tape, &[o], &fill(k + 100, o)))
    };
    let q = lin(tape, d_e, d_e);
    let kk = lin(tape, d_e, d_e);
    let v = lin(tape, d_e, d_e);
    let o = lin(tape, d_e, d_e);
    let ffn1 = lin(tape, d_e, hidden);
    let ffn2 = lin(tape, hidden, d_e);
    let ln = |tape: &mut Tape<f64>| (leaf(tape, &[d_e], &vec![1.0; d_e]), zeros(tape, &[d_e]));
    let ln1 = ln(tape);
    let ln2 = ln(tape);
    EncoderVars { q, k: kk, v, o, ln1, ffn1, ffn2, ln2 }
}

fn layer_norm_rows(x: &[f64], d: usize) -> Vec<f64> {
    x.chunks(d)
        .flat_map(|r| {
            let mean = r.iter().sum::<f64>() / d as f64;
            let var = r.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / d as f64;
            r.iter().map(move |v| (v - mean) / (var + 1e-5).sqrt()).collect::<Vec<_>>()
        })
        .collect()
}

#[test]
fn encoder_with_zero_sublayers_is_layer_norm() {
    let mut tape = Tape::new();
    let ed = lcg(50, 12);
    let e = leaf(&mut tape, &[3, 4], &ed);
    let enc = encoder_vars(&mut tape, 4, 8, |_, n| vec![0.0; n]);
    let v = transformer_encode(&mut tape, e, &enc, 2).unwrap();
    assert!(close(tape.data(v), &layer_norm_rows(&ed, 4), 1e-4));
}

#[test]
fn self_attention_on_one_token_is_value_path() {
    let mut tape = Tape::new();
    let x = [0.3, -0.7, 1.1, 0.2];
    let e = leaf(&mut tape, &[1, 4], &x);
    let enc = encoder_vars(&mut tape, 4, 4, |k, n| lcg(k as u64, n));
    let a = self_attention(&mut tape, e, &enc, 2).unwrap();
    let affine = |x: &[f64], (w, b): (Var, Var), tape: &Tape<f64>| -> Vec<f64> {
        let (wd, bd) = (tape.data(w), tape.data(b));
        (0..4).map(|o| bd[o] + (0..4).map(|c| x[c] * wd[c * 4 + o]).sum::<f64>()).collect()
    };
    let want = affine(&affine(&x, enc.v, &tape), enc.o, &tape);
    assert!(close(tape.data(a), &want, 1e-12));
}

#[test]
fn self_attention_two_tokens_by_hand() {
    let mut tape = Tape::new();
    let e = leaf(&mut tape, &[2, 2], &[1.0, 0.0, 0.0, 2.0]);
    let id = [1.0, 0.0, 0.0, 1.0];
    let enc = encoder_vars(&mut tape, 2, 2, |k, n| if n == 4 && k <= 4 { id.to_vec() } else { vec![0.0; n] });
    let a = self_attention(&mut tape, e, &enc, 1).unwrap();
    // scores: [[1, 0], [0, 4]] / √2
    let r = std::f64::consts::FRAC_1_SQRT_2;
    let row = |s0: f64, s1: f64| {
        let (a0, a1) = (s0.exp(), s1.exp());
        let z = a0 + a1;
        [a0 / z, 2.0 * a1 / z]
    };
    let want: Vec<f64> = row(r, 0.0).into_iter().chain(row(0.0, 4.0 * r)).collect();
    assert!(close(tape.data(a), &want, 1e-12));
}

// ---- fusion, pooling, head ----

#[test]
fn fusion_examples() {
    let mut tape = Tape::new();
    let a = leaf(&mut tape, &[3, 384], &lcg(60, 3 * 384));
    let b = leaf(&mut tape, &[3, 384], &lcg(61, 3 * 384));
    let c = fuse(&mut tape, a, b, Fusion::Concat).unwrap();
    assert_eq!(tape.shape(c), &[3, 768]);
    let left = tape.slice(c, 1, 0, 384).unwrap();
    let right = tape.slice(c, 1, 384, 384).unwrap();
    assert_eq!(tape.data(left), tape.data(a));
    assert_eq!(tape.data(right), tape.data(b));
    let z = zeros(&mut tape, &[3, 384]);
    let s = fuse(&mut tape, a, z, Fusion::Add).unwrap();
    assert_eq!(tape.data(s), tape.data(a));
    let odd = zeros(&mut tape, &[2, 384]);
    assert!(fuse(&mut tape, a, odd, Fusion::Add).is_err());
}

#[test]
fn gap_singleton_and_identical_rows() {
    let mut tape = Tape::new();
    let v = leaf(&mut tape, &[3, 2], &lcg(70, 6));
    let w = leaf(&mut tape, &[2], &[0.4, -1.3]);
    let f = leaf(&mut tape, &[1, 3], &[0.5, -1.0, 2.0]);
    let (h, a) = global_attention_pool(&mut tape, f, v, w).unwrap();
    assert_eq!(tape.data(h), &[0.5, -1.0, 2.0]);
    assert_eq!(tape.data(a), &[1.0]);
    let f = leaf(&mut tape, &[4, 3], &[0.5, -1.0, 2.0].repeat(4));
    let (h, _) = global_attention_pool(&mut tape, f, v, w).unwrap();
    assert!(close(tape.data(h), &[0.5, -1.0, 2.0], 1e-15));
}

#[test]
fn gap_two_tokens_by_hand() {
    let mut tape = Tape::new();
    let f = leaf(&mut tape, &[2, 2], &[1.0, 0.0, 0.0, 1.0]);
    let v = leaf(&mut tape, &[2, 1], &[1.0, -1.0]);
    let w = leaf(&mut tape, &[1], &[2.0]);
    let (h, a) = global_attention_pool(&mut tape, f, v, w).unwrap();
    let (l0, l1) = (2.0 * 1f64.tanh(), 2.0 * (-1f64).tanh());
    let a0 = l0.exp() / (l0.exp() + l1.exp());
    assert!(close(tape.data(a), &[a0, 1.0 - a0], 1e-12));
    assert!(close(tape.data(h), &[a0, 1.0 - a0], 1e-12));
}

#[test]
fn hazard_head_examples() {
    let mut tape = Tape::new();
    let h = leaf(&mut tape, &[4], &[0.3, -0.2, 1.0, 0.5]);
    let fc1 = (zeros(&mut tape, &[4, 1]), zeros(&mut tape, &[1]));
    let fc2 = (zeros(&mut tape, &[1, 3]), zeros(&mut tape, &[3]));
    let o = predict_hazards(&mut tape, h, fc1, fc2).unwrap();
    assert_eq!(tape.data(o), &[0.5; 3]);
    let big = (zeros(&mut tape, &[1, 3]), leaf(&mut tape, &[3], &[40.0; 3]));
    let o = predict_hazards(&mut tape, h, fc1, big).unwrap();
    assert!(tape.data(o).iter().all(|&v| v > 1.0 - 1e-12));

    let fc1 = (leaf(&mut tape, &[4, 1], &[1.0, 2.0, 0.0, -1.0]), leaf(&mut tape, &[1], &[0.1]));
    let fc2 = (leaf(&mut tape, &[1, 2], &[0.5, -2.0]), leaf(&mut tape, &[2], &[0.0, 1.0]));
    let o = predict_hazards(&mut tape, h, fc1, fc2).unwrap();
    // hidden = relu(0.3 − 0.4 − 0.5 + 0.1) = 0 → logits (0, 1)
    let s = |x: f64| 1.0 / (1.0 + (-x).exp());
    assert!(close(tape.data(o), &[s(0.0), s(1.0)], 1e-15));
    let fc1 = (leaf(&mut tape, &[4, 1], &[1.0, 0.0, 1.0, 0.0]), leaf(&mut tape, &[1], &[0.0]));
    let o = predict_hazards(&mut tape, h, fc1, fc2).unwrap();
    assert!(close(tape.data(o), &[s(0.65), s(1.0 - 2.6)], 1e-15));
}

#[test]
fn tape_loss_matches_survival_loss() {
    for (bin, censor, alpha) in [(1, 0, 0.0), (3, 0, 0.0), (4, 1, 0.0), (2, 1, 0.25), (4, 0, 0.4)] {
        let h = [0.1, 0.2, 0.3, 0.4];
        let mut tape = Tape::new();
        let hv = leaf(&mut tape, &[4], &h);
        let l = nll_on_tape(&mut tape, hv, bin, censor, alpha).unwrap();
        let want = nll_loss(&h, bin, censor, alpha).unwrap();
        assert!((tape.data(l)[0] - want).abs() < 1e-12);
    }
    let mut tape = Tape::new();
    let hv = leaf(&mut tape, &[4], &[0.5; 4]);
    assert!(nll_on_tape(&mut tape, hv, 5, 0, 0.0).is_err());
}

// ---- full forward ----

#[test]
fn every_variant_gives_finite_hazards() {
    for cfg in small_cfg().all_variants() {
        let bag = tiny_bag(&cfg, 4, 1);
        let params = DscaParams::<f32>::init(&cfg, 2).unwrap();
        let prepared = PreparedBag::new(&bag, &cfg).unwrap();
        let (pred, maps) = predict_with_attention(&params, &prepared, &cfg).unwrap();
        assert_eq!(pred.hazards.len(), cfg.n_t);
        assert!(pred.hazards.iter().all(|&h| h > 0.0 && h < 1.0), "{}", cfg.variant_label());
        assert!((maps.gap.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        assert_eq!(maps.cross.is_some(), cfg.effective_pool() == Pool::CrossAttention);
        if let Some(cross) = maps.cross {
            assert_eq!(cross.len(), 4 * cfg.n_heads * 4);
            for w in cross.chunks(4) {
                assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-6);
            }
        }
    }
}

#[test]
fn forward_is_deterministic() {
    let cfg = small_cfg();
    let bag = tiny_bag(&cfg, 5, 3);
    let params = DscaParams::<f32>::init(&cfg, 4).unwrap();
    let prepared = PreparedBag::new(&bag, &cfg).unwrap();
    let a = predict_with_attention(&params, &prepared, &cfg).unwrap();
    let b = predict_with_attention(&params, &prepared, &cfg).unwrap();
    assert_eq!(a, b);
    let g1 = loss_and_gradient(&params, &prepared, 2, 0.0, &cfg).unwrap();
    let g2 = loss_and_gradient(&params, &prepared, 2, 0.0, &cfg).unwrap();
    assert_eq!(g1.loss.to_bits(), g2.loss.to_bits());
    assert_eq!(g1.grads, g2.grads);
}

#[test]
fn strided_low_stream_aligns_streams() {
    let cfg = DscaConfig { conv_s: 3, ..small_cfg() };
    let bag = tiny_bag(&cfg, 7, 5);
    let params = DscaParams::<f64>::init(&cfg, 6).unwrap();
    let prepared = PreparedBag::new(&bag, &cfg).unwrap();
    let (pred, maps) = predict_with_attention(&params, &prepared, &cfg).unwrap();
    assert_eq!(maps.gap.len(), 3);
    assert_eq!(maps.cross.unwrap().len(), 7 * 2 * 4);
    assert!(pred.hazards.iter().all(|h| h.is_finite()));
}

#[test]
fn bag_must_match_config() {
    let cfg = small_cfg();
    let bag = tiny_bag(&DscaConfig { d: 5, ..cfg.clone() }, 3, 1);
    assert!(matches!(PreparedBag::<f32>::new(&bag, &cfg), Err(NetError::BagMismatch(_))));
}

#[test]
fn default_variant_passes_gradcheck() {
    let cfg = small_cfg();
    let bag = tiny_bag(&cfg, 3, 11);
    let report = gradcheck_network(&cfg, &bag, 12, 1e-5, false).unwrap();
    assert!(report.passed(1e-4), "{report:?}");
    assert_eq!(report.tensors.len(), param_specs(&cfg).len());
    let bad = gradcheck_network(&cfg, &bag, 12, 1e-5, true).unwrap();
    assert!(!bad.passed(1e-4));
}

#[test]
fn mean_pool_conv2d_variant_passes_gradcheck() {
    let cfg = DscaConfig { pool: Pool::Mean, high_embed: HighEmbed::Conv2d, fusion: Fusion::Add, ..small_cfg() };
    let bag = tiny_bag(&cfg, 3, 13);
    let report = gradcheck_network(&cfg, &bag, 14, 1e-5, false).unwrap();
    assert!(report.passed(1e-4), "{report:?}");
}

#[test]
fn f32_gradient_tracks_f64() {
    let cfg = small_cfg();
    let bag = tiny_bag(&cfg, 4, 21);
    let p64 = DscaParams::<f64>::init(&cfg, 22).unwrap();
    let p32: DscaParams<f32> = p64.cast();
    let g64 = loss_and_gradient(&p64, &PreparedBag::new(&bag, &cfg).unwrap(), 3, 0.0, &cfg).unwrap();
    let g32 = loss_and_gradient(&p32, &PreparedBag::new(&bag, &cfg).unwrap(), 3, 0.0, &cfg).unwrap();
    assert!((g64.loss - g32.loss).abs() < 1e-5);
    for (a, b) in g64.grads.iter().zip(&g32.grads) {
        for (x, y) in a.iter().zip(b) {
            assert!((x - *y as f64).abs() < 1e-4);
        }
    }
}

fn permuted(bag: &PatientBag, perm: &[usize]) -> PatientBag {
    let (d, cell) = (bag.d, bag.square_len());
    let mut out = bag.clone();
    out.coords = perm.iter().map(|&j| bag.coords[j]).collect();
    out.low_tokens = perm.iter().flat_map(|&j| bag.low_row(j).to_vec()).collect();
    out.high_tokens = perm.iter().flat_map(|&j| bag.square(j).to_vec()).collect();
    debug_assert_eq!(out.high_tokens.len(), bag.m() * cell * d);
    out
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn forward_is_permutation_invariant_without_order_ops(
        seed in 0u64..1000,
        m in 2usize..6,
        variant in 0usize..12,
        shuffle in any::<u64>(),
    ) {
        let base = DscaConfig { use_pe: false, conv_k: 1, ..small_cfg() };
        let cfgs: Vec<DscaConfig> = base.all_variants().into_iter().filter(|c| !c.use_pe).collect();
        let cfg = &cfgs[variant];
        let bag = tiny_bag(cfg, m, seed);
        let mut perm: Vec<usize> = (0..m).collect();
        let mut s = shuffle;
        for i in (1..m).rev() {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1);
            perm.swap(i, (s >> 33) as usize % (i + 1));
        }
        let params = DscaParams::<f64>::init(cfg, seed + 1).unwrap();
        let a = predict(&params, &PreparedBag::new(&bag, cfg).unwrap(), cfg).unwrap();
        let b = predict(&params, &PreparedBag::new(&permuted(&bag, &perm), cfg).unwrap(), cfg).unwrap();
        prop_assert!(close(&a.hazards, &b.hazards, 1e-12), "{:?} vs {:?}", a.hazards, b.hazards);
    }

    #[test]
    fn gap_output_is_inside_token_hull(seed in 0u64..10_000, m in 1usize..7, d_o in 1usize..5) {
        let mut tape = Tape::new();
        let fd = lcg(seed, m * d_o);
        let f = leaf(&mut tape, &[m, d_o], &fd);
        let v = leaf(&mut tape, &[d_o, 3], &lcg(seed + 1, d_o * 3).iter().map(|x| 4.0 * x).collect::<Vec<_>>());
        let w = leaf(&mut tape, &[3], &lcg(seed + 2, 3));
        let (h, a) = global_attention_pool(&mut tape, f, v, w).unwrap();
        prop_assert!((tape.data(a).iter().sum::<f64>() - 1.0).abs() < 1e-12);
        for c in 0..d_o {
            let col = (0..m).map(|j| fd[j * d_o + c]);
            let (lo, hi) = col.fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), x| (l.min(x), h.max(x)));
            let hc = tape.data(h)[c];
            prop_assert!(hc >= lo - 1e-12 && hc <= hi + 1e-12);
        }
    }

    #[test]
    fn cross_attention_rows_are_distributions(seed in 0u64..10_000, m in 1usize..5, lambda in 1usize..4) {
        let case = XAttnCase::random(m, lambda, 3, 4, seed);
        let (_, a) = case.run(2);
        prop_assert_eq!(a.len(), m * 2 * lambda * lambda);
        for w in a.chunks(lambda * lambda) {
            prop_assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-6);
            prop_assert!(w.iter().all(|&x| x >= 0.0));
        }
    }
}

#[test]
fn coords_are_used_through_discretization() {
    let cfg = small_cfg();
    let mut bag = tiny_bag(&cfg, 3, 8);
    bag.coords = vec![Coord::new(0, 10, 10), Coord::new(0, 40, 10), Coord::new(1, 0, 0)];
    let p = PreparedBag::<f64>::new(&bag, &cfg).unwrap();
    assert_eq!(p.grid.len(), 3);
    assert_eq!(p.pe.unwrap().shape(), &[3, 4]);
}
