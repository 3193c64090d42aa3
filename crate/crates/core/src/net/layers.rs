//! Building blocks of the network, expressed as tape operations.
//!
//! High-resolution tokens are kept flat as `[m·λ², c]`, square-major and
//! row-major inside each square, which is the `m × λ × λ × c` layout with
//! the three leading axes merged.

use super::config::{DscaConfig, Fusion, HighEmbed};
use super::params::ParamVars;
use super::NetError;
use crate::autodiff::{Real, Tape, Tensor, Var};
use crate::data::GridPos;

const LN_EPS: f64 = 1e-5;

fn mismatch(msg: String) -> NetError {
    NetError::Autodiff(crate::autodiff::AutodiffError::ShapeMismatch(msg))
}

fn expect_shape<F: Real>(tape: &Tape<F>, v: Var, shape: &[usize], what: &str) -> Result<(), NetError> {
    if tape.shape(v) != shape {
        return Err(mismatch(format!("{what}: expected {shape:?}, got {:?}", tape.shape(v))));
    }
    Ok(())
}

/// Same-padded 1-D convolution over the token axis, `[m, d] → [⌈m/s⌉, d_e]`.
pub fn embed_low<F: Real>(tape: &mut Tape<F>, x_low: Var, w: Var, b: Var, cfg: &DscaConfig) -> Result<Var, NetError> {
    let m = tape.shape(x_low).first().copied().unwrap_or(0);
    expect_shape(tape, x_low, &[m, cfg.d], "low tokens")?;
    Ok(tape.conv1d_seq(x_low, w, Some(b), cfg.conv_s, (cfg.conv_k - 1) / 2)?)
}

/// Per-token affine (or per-square 3×3 convolution) followed by relu,
/// `[m·λ², d] → [m·λ², d_e]`.
pub fn embed_high<F: Real>(tape: &mut Tape<F>, x_high: Var, w: Var, b: Var, cfg: &DscaConfig) -> Result<Var, NetError> {
    let rows = tape.shape(x_high).first().copied().unwrap_or(0);
    expect_shape(tape, x_high, &[rows, cfg.d], "high tokens")?;
    if rows % (cfg.lambda * cfg.lambda) != 0 {
        return Err(mismatch(format!("{rows} high rows is not a multiple of lambda² = {}", cfg.lambda * cfg.lambda)));
    }
    let z = match cfg.high_embed {
        HighEmbed::Mlp => tape.affine(x_high, w, Some(b))?,
        HighEmbed::Conv2d => tape.conv2d_square(x_high, w, Some(b), cfg.lambda)?,
    };
    Ok(tape.relu(z))
}

/// Handles of the cross-attention projections.
#[derive(Clone, Copy, Debug)]
pub struct CrossAttentionVars {
    pub w_l: Var,
    pub w_q: Var,
    pub w_k: Var,
    pub w_v: Var,
}

impl CrossAttentionVars {
    pub fn from_params(pv: &ParamVars) -> Result<Self, NetError> {
        Ok(Self { w_l: pv.get("xattn.w_l")?, w_q: pv.get("xattn.w_q")?, w_k: pv.get("xattn.w_k")?, w_v: pv.get("xattn.w_v")? })
    }
}

/// Multi-head cross-attention square pooling. Each square's query comes
/// from its low-resolution token; keys and values from the `λ²` embedded
/// high-resolution tokens. Returns the pooled `[m, d_e]` tokens and the
/// attention weights `[m, n_heads, λ²]`.
pub fn cross_attention_pool<F: Real>(
    tape: &mut Tape<F>,
    o_h: Var,
    x_low: Var,
    w: &CrossAttentionVars,
    lambda: usize,
    n_heads: usize,
) -> Result<(Var, Var), NetError> {
    let cell = lambda * lambda;
    let (sh, sl) = (tape.shape(o_h).to_vec(), tape.shape(x_low).to_vec());
    if sh.len() != 2 || sl.len() != 2 || sh[0] != sl[0] * cell {
        return Err(mismatch(format!("cross attention: high {sh:?} vs low {sl:?} with lambda {lambda}")));
    }
    let (m, d_e) = (sl[0], sh[1]);
    if n_heads == 0 || d_e % n_heads != 0 {
        return Err(mismatch(format!("d_e {d_e} not divisible by {n_heads} heads")));
    }
    let dh = d_e / n_heads;
    let proj = tape.affine(x_low, w.w_l, None)?;
    let q = tape.affine(proj, w.w_q, None)?;
    let k = tape.affine(o_h, w.w_k, None)?;
    let v = tape.affine(o_h, w.w_v, None)?;
    // batch index is j·H + h
    let q = tape.reshape(q, vec![m * n_heads, 1, dh])?;
    let k = tape.reshape(k, vec![m, cell, n_heads, dh])?;
    let kt = tape.permute(k, &[0, 2, 3, 1])?;
    let kt = tape.reshape(kt, vec![m * n_heads, dh, cell])?;
    let v = tape.reshape(v, vec![m, cell, n_heads, dh])?;
    let v = tape.permute(v, &[0, 2, 1, 3])?;
    let v = tape.reshape(v, vec![m * n_heads, cell, dh])?;
    let scores = tape.bmm(q, kt)?;
    let scores = tape.scale(scores, F::of(1.0 / (dh as f64).sqrt()));
    let attn = tape.softmax(scores, 2)?;
    let out = tape.bmm(attn, v)?;
    let out = tape.reshape(out, vec![m, d_e])?;
    let attn = tape.reshape(attn, vec![m, n_heads, cell])?;
    Ok((out, attn))
}

/// Mean over each square, `[m·λ², c] → [m, c]`.
pub fn mean_square_pool<F: Real>(tape: &mut Tape<F>, o_h: Var, lambda: usize) -> Result<Var, NetError> {
    let cell = lambda * lambda;
    let s = tape.shape(o_h).to_vec();
    if s.len() != 2 || cell == 0 || s[0] % cell != 0 {
        return Err(mismatch(format!("mean pool: {s:?} with lambda {lambda}")));
    }
    let r = tape.reshape(o_h, vec![s[0] / cell, cell, s[1]])?;
    tape.mean(r, 1).map_err(Into::into)
}

/// Averages consecutive groups of `s` rows (the last group may be short),
/// `[m, c] → [⌈m/s⌉, c]`.
pub fn group_mean<F: Real>(tape: &mut Tape<F>, x: Var, s: usize) -> Result<Var, NetError> {
    if s == 1 {
        return Ok(x);
    }
    let m = tape.shape(x)[0];
    let g = m.div_ceil(s);
    let mut a = vec![F::zero(); g * m];
    for i in 0..g {
        let (lo, hi) = (i * s, ((i + 1) * s).min(m));
        let w = F::of(1.0 / (hi - lo) as f64);
        a[i * m + lo..i * m + hi].iter_mut().for_each(|v| *v = w);
    }
    let a = tape.constant(Tensor::new(vec![g, m], a)?);
    tape.matmul(a, x).map_err(Into::into)
}

/// Sinusoidal embedding of grid positions. The first `d_e/2` channels
/// encode `u` and the rest `v`, each as interleaved `sin, cos` pairs at
/// frequencies `10000^(−2i/(d_e/2))`.
pub fn sparse_pe(coords: &[GridPos], d_e: usize) -> Result<Vec<f64>, NetError> {
    if d_e % 2 != 0 {
        return Err(NetError::OddEmbedDim(d_e));
    }
    let half = d_e / 2;
    let mut out = vec![0.0; coords.len() * d_e];
    for (row, p) in out.chunks_mut(d_e).zip(coords) {
        for (axis, pos) in [p.u, p.v].into_iter().enumerate() {
            let block = &mut row[axis * half..(axis + 1) * half];
            for (c, slot) in block.iter_mut().enumerate() {
                let i = c / 2;
                let angle = pos as f64 / 10000f64.powf(2.0 * i as f64 / half as f64);
                *slot = if c % 2 == 0 { angle.sin() } else { angle.cos() };
            }
        }
    }
    Ok(out)
}

/// Handles of one encoder's tensors.
#[derive(Clone, Copy, Debug)]
pub struct EncoderVars {
    pub q: (Var, Var),
    pub k: (Var, Var),
    pub v: (Var, Var),
    pub o: (Var, Var),
    pub ln1: (Var, Var),
    pub ffn1: (Var, Var),
    pub ffn2: (Var, Var),
    pub ln2: (Var, Var),
}

impl EncoderVars {
    pub fn from_params(pv: &ParamVars, prefix: &str) -> Result<Self, NetError> {
        let pair = |a: &str, b: &str| -> Result<(Var, Var), NetError> {
            Ok((pv.get(&format!("{prefix}.{a}"))?, pv.get(&format!("{prefix}.{b}"))?))
        };
        Ok(Self {
            q: pair("attn.q.w", "attn.q.b")?,
            k: pair("attn.k.w", "attn.k.b")?,
            v: pair("attn.v.w", "attn.v.b")?,
            o: pair("attn.o.w", "attn.o.b")?,
            ln1: pair("ln1.gamma", "ln1.beta")?,
            ffn1: pair("ffn1.w", "ffn1.b")?,
            ffn2: pair("ffn2.w", "ffn2.b")?,
            ln2: pair("ln2.gamma", "ln2.beta")?,
        })
    }
}

/// Multi-head scaled dot-product self-attention over all rows of `[m, d_e]`.
pub fn self_attention<F: Real>(tape: &mut Tape<F>, x: Var, enc: &EncoderVars, n_heads: usize) -> Result<Var, NetError> {
    let s = tape.shape(x).to_vec();
    if s.len() != 2 || n_heads == 0 || s[1] % n_heads != 0 {
        return Err(mismatch(format!("self attention on {s:?} with {n_heads} heads")));
    }
    let (m, d_e) = (s[0], s[1]);
    let dh = d_e / n_heads;
    let q = tape.affine(x, enc.q.0, Some(enc.q.1))?;
    let k = tape.affine(x, enc.k.0, Some(enc.k.1))?;
    let v = tape.affine(x, enc.v.0, Some(enc.v.1))?;
    let q = tape.reshape(q, vec![m, n_heads, dh])?;
    let q = tape.permute(q, &[1, 0, 2])?;
    let k = tape.reshape(k, vec![m, n_heads, dh])?;
    let kt = tape.permute(k, &[1, 2, 0])?;
    let v = tape.reshape(v, vec![m, n_heads, dh])?;
    let v = tape.permute(v, &[1, 0, 2])?;
    let scores = tape.bmm(q, kt)?;
    let scores = tape.scale(scores, F::of(1.0 / (dh as f64).sqrt()));
    let attn = tape.softmax(scores, 2)?;
    let out = tape.bmm(attn, v)?;
    let out = tape.permute(out, &[1, 0, 2])?;
    let out = tape.reshape(out, vec![m, d_e])?;
    tape.affine(out, enc.o.0, Some(enc.o.1)).map_err(Into::into)
}

/// `z = LN(MSA(E) + E)`, then `LN(FFN(z) + z)`.
pub fn transformer_encode<F: Real>(tape: &mut Tape<F>, e: Var, enc: &EncoderVars, n_heads: usize) -> Result<Var, NetError> {
    let eps = F::of(LN_EPS);
    let a = self_attention(tape, e, enc, n_heads)?;
    let r = tape.add(a, e)?;
    let z = tape.layer_norm(r, enc.ln1.0, enc.ln1.1, 1, eps)?;
    let h = tape.affine(z, enc.ffn1.0, Some(enc.ffn1.1))?;
    let h = tape.relu(h);
    let h = tape.affine(h, enc.ffn2.0, Some(enc.ffn2.1))?;
    let r = tape.add(h, z)?;
    tape.layer_norm(r, enc.ln2.0, enc.ln2.1, 1, eps).map_err(Into::into)
}

/// Channel concatenation (low stream first) or elementwise sum.
pub fn fuse<F: Real>(tape: &mut Tape<F>, v_l: Var, v_h: Var, fusion: Fusion) -> Result<Var, NetError> {
    if tape.shape(v_l) != tape.shape(v_h) || tape.shape(v_l).len() != 2 {
        return Err(mismatch(format!("fuse: {:?} vs {:?}", tape.shape(v_l), tape.shape(v_h))));
    }
    match fusion {
        Fusion::Concat => tape.concat(&[v_l, v_h], 1),
        Fusion::Add => tape.add(v_l, v_h),
    }
    .map_err(Into::into)
}

/// Attention pooling `a = softmax_j(w · tanh(V F_j))`, `H = Σ_j a_j F_j`.
/// `v` is `[d_o, d_a]` and `w` is `[d_a]`. Returns `H` as `[d_o]` and the
/// scores as `[m]`.
pub fn global_attention_pool<F: Real>(tape: &mut Tape<F>, f: Var, v: Var, w: Var) -> Result<(Var, Var), NetError> {
    let s = tape.shape(f).to_vec();
    if s.len() != 2 || s[0] == 0 {
        return Err(mismatch(format!("global attention pool on {s:?}")));
    }
    let d_a = tape.shape(w).first().copied().unwrap_or(0);
    let hidden = tape.affine(f, v, None)?;
    let hidden = tape.tanh(hidden);
    let w_col = tape.reshape(w, vec![d_a, 1])?;
    let logits = tape.affine(hidden, w_col, None)?;
    let a = tape.softmax(logits, 0)?;
    let a_row = tape.reshape(a, vec![1, s[0]])?;
    let h = tape.matmul(a_row, f)?;
    let h = tape.reshape(h, vec![s[1]])?;
    let scores = tape.reshape(a, vec![s[0]])?;
    Ok((h, scores))
}

/// Two-layer relu MLP followed by a sigmoid, `[d_o] → [n_t]` hazards.
pub fn predict_hazards<F: Real>(
    tape: &mut Tape<F>,
    h: Var,
    fc1: (Var, Var),
    fc2: (Var, Var),
) -> Result<Var, NetError> {
    let d_o = tape.shape(h).first().copied().unwrap_or(0);
    expect_shape(tape, h, &[d_o], "pooled feature")?;
    let x = tape.reshape(h, vec![1, d_o])?;
    let x = tape.affine(x, fc1.0, Some(fc1.1))?;
    let x = tape.relu(x);
    let x = tape.affine(x, fc2.0, Some(fc2.1))?;
    let x = tape.sigmoid(x);
    let n_t = tape.shape(x)[1];
    tape.reshape(x, vec![n_t]).map_err(Into::into)
}

/// Discrete-time negative log-likelihood of one bag, built on the tape.
/// `bin` is 1-based; hazards are clamped away from 0 and 1 first.
pub fn nll_on_tape<F: Real>(tape: &mut Tape<F>, hazards: Var, bin: usize, censor: u8, alpha: f64) -> Result<Var, NetError> {
    let n_t = tape.shape(hazards)[0];
    if bin == 0 || bin > n_t {
        return Err(NetError::Survival(crate::survival::SurvivalError::BadBin { bin, n_t }));
    }
    let eps = crate::survival::HAZARD_CLAMP;
    let h = tape.clamp(hazards, F::of(eps), F::of(1.0 - eps));
    let ones = tape.constant(Tensor::full(vec![n_t], F::one()));
    let surv = tape.sub(ones, h)?;
    let log_surv = tape.log(surv)?;
    if censor == 0 {
        let hb = tape.slice(h, 0, bin - 1, 1)?;
        let log_h = tape.log(hb)?;
        let mut total = tape.sum(log_h);
        if bin > 1 {
            let prior = tape.slice(log_surv, 0, 0, bin - 1)?;
            let prior = tape.sum(prior);
            total = tape.add(total, prior)?;
        }
        Ok(tape.scale(total, F::of(-1.0)))
    } else {
        let upto = tape.slice(log_surv, 0, 0, bin)?;
        let s = tape.sum(upto);
        Ok(tape.scale(s, F::of(-(1.0 - alpha))))
    }
}
