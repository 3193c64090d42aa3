use super::config::{DscaConfig, Pool, Streams};
use super::layers::{
    cross_attention_pool, embed_high, embed_low, fuse, global_attention_pool, group_mean, mean_square_pool,
    nll_on_tape, predict_hazards, sparse_pe, transformer_encode, CrossAttentionVars, EncoderVars,
};
use super::params::{DscaParams, ParamVars};
use super::NetError;
use crate::autodiff::{Real, Tape, Tensor, Var};
use crate::data::{canonical_order, discretize_coordinates, GridPos, PatientBag};
use crate::survival::HazardPrediction;

/// A bag converted to network inputs for one configuration.
#[derive(Clone, Debug)]
pub struct PreparedBag<F: Real = f32> {
    pub patient_id: String,
    pub x_low: Tensor<F>,
    pub x_high: Tensor<F>,
    pub grid: Vec<GridPos>,
    /// `[fused_len, d_e]`, present when the config uses PE.
    pub pe: Option<Tensor<F>>,
    pub time: f64,
    pub censor: u8,
}

impl<F: Real> PreparedBag<F> {
    /// Tokens are put in canonical order first, so `grid[i]` and the
    /// attention maps refer to the `i`-th token of that order.
    pub fn new(bag: &PatientBag, cfg: &DscaConfig) -> Result<Self, NetError> {
        cfg.validate()?;
        bag.validate()?;
        let bag = &canonical_order(bag);
        if bag.d != cfg.d || bag.lambda != cfg.lambda {
            return Err(NetError::BagMismatch(format!(
                "bag {} has d = {}, lambda = {}; model expects d = {}, lambda = {}",
                bag.patient_id, bag.d, bag.lambda, cfg.d, cfg.lambda
            )));
        }
        let m = bag.m();
        let cast = |v: &[f32]| v.iter().map(|&x| F::of(x as f64)).collect::<Vec<F>>();
        let x_low = Tensor::new(vec![m, cfg.d], cast(&bag.low_tokens))?;
        let x_high = Tensor::new(vec![m * bag.square_len(), cfg.d], cast(&bag.high_tokens))?;
        let grid = discretize_coordinates(&bag.coords)?;
        let pe = if cfg.use_pe {
            let step = if cfg.streams.has_low() { cfg.conv_s } else { 1 };
            let sampled: Vec<GridPos> = grid.iter().step_by(step).copied().collect();
            let pe = sparse_pe(&sampled, cfg.d_e)?;
            Some(Tensor::from_f64(vec![sampled.len(), cfg.d_e], &pe)?)
        } else {
            None
        };
        Ok(Self {
            patient_id: bag.patient_id.clone(),
            x_low,
            x_high,
            grid,
            pe,
            time: bag.time,
            censor: bag.censor,
        })
    }

    pub fn m(&self) -> usize {
        self.x_low.shape()[0]
    }
}

/// Tape handles of one forward pass.
#[derive(Clone, Copy, Debug)]
pub struct ForwardOutput {
    /// `[n_t]`.
    pub hazards: Var,
    /// `[m, n_heads, λ²]` when cross-attention pooling ran.
    pub cross_attention: Option<Var>,
    /// `[fused_len]`.
    pub gap_scores: Var,
}

/// Full network on an existing tape with bound parameters.
pub fn forward_on_tape<F: Real>(
    tape: &mut Tape<F>,
    pv: &ParamVars,
    bag: &PreparedBag<F>,
    cfg: &DscaConfig,
) -> Result<ForwardOutput, NetError> {
    let x_low = tape.constant(bag.x_low.clone());
    let pe = bag.pe.as_ref().map(|p| tape.constant(p.clone()));
    let add_pe = |tape: &mut Tape<F>, x: Var| -> Result<Var, NetError> {
        match pe {
            Some(p) => Ok(tape.add(x, p)?),
            None => Ok(x),
        }
    };
    let mut cross_attention = None;

    let v_l = if cfg.streams.has_low() {
        let e_l = embed_low(tape, x_low, pv.get("low.conv.w")?, pv.get("low.conv.b")?, cfg)?;
        let e_l = add_pe(tape, e_l)?;
        Some(transformer_encode(tape, e_l, &EncoderVars::from_params(pv, "enc_low")?, cfg.n_heads)?)
    } else {
        None
    };

    let v_h = if cfg.streams.has_high() {
        let x_high = tape.constant(bag.x_high.clone());
        let o_h = embed_high(tape, x_high, pv.get("high.embed.w")?, pv.get("high.embed.b")?, cfg)?;
        let e_h = match cfg.effective_pool() {
            Pool::CrossAttention => {
                let w = CrossAttentionVars::from_params(pv)?;
                let (e_h, attn) = cross_attention_pool(tape, o_h, x_low, &w, cfg.lambda, cfg.n_heads)?;
                cross_attention = Some(attn);
                e_h
            }
            Pool::Mean => mean_square_pool(tape, o_h, cfg.lambda)?,
        };
        let e_h = if cfg.streams.has_low() { group_mean(tape, e_h, cfg.conv_s)? } else { e_h };
        let e_h = add_pe(tape, e_h)?;
        Some(transformer_encode(tape, e_h, &EncoderVars::from_params(pv, "enc_high")?, cfg.n_heads)?)
    } else {
        None
    };

    let f = match (cfg.streams, v_l, v_h) {
        (Streams::Dual, Some(l), Some(h)) => fuse(tape, l, h, cfg.fusion)?,
        (_, Some(l), None) => l,
        (_, None, Some(h)) => h,
        _ => unreachable!("at least one stream is active"),
    };
    let (h, gap_scores) = global_attention_pool(tape, f, pv.get("gap.v")?, pv.get("gap.w")?)?;
    let fc1 = (pv.get("head.fc1.w")?, pv.get("head.fc1.b")?);
    let fc2 = (pv.get("head.fc2.w")?, pv.get("head.fc2.b")?);
    let hazards = predict_hazards(tape, h, fc1, fc2)?;
    Ok(ForwardOutput { hazards, cross_attention, gap_scores })
}

/// Attention weights of one forward pass.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionMaps {
    /// Row-major `[m, n_heads, λ²]`.
    pub cross: Option<Vec<f64>>,
    pub gap: Vec<f64>,
}

fn to_f64<F: Real>(x: &[F]) -> Vec<f64> {
    x.iter().map(|v| v.as_f64()).collect()
}

/// Hazards, survival curve and risk for one bag, plus attention maps.
pub fn predict_with_attention<F: Real>(
    params: &DscaParams<F>,
    bag: &PreparedBag<F>,
    cfg: &DscaConfig,
) -> Result<(HazardPrediction, AttentionMaps), NetError> {
    let mut tape = Tape::new();
    let pv = params.bind(&mut tape, false);
    let out = forward_on_tape(&mut tape, &pv, bag, cfg)?;
    let hazards = to_f64(tape.data(out.hazards));
    if hazards.iter().any(|h| !h.is_finite()) {
        return Err(NetError::NonFinite(format!("hazards for {}", bag.patient_id)));
    }
    let maps = AttentionMaps {
        cross: out.cross_attention.map(|v| to_f64(tape.data(v))),
        gap: to_f64(tape.data(out.gap_scores)),
    };
    Ok((HazardPrediction::from_hazards(hazards)?, maps))
}

pub fn predict<F: Real>(params: &DscaParams<F>, bag: &PreparedBag<F>, cfg: &DscaConfig) -> Result<HazardPrediction, NetError> {
    predict_with_attention(params, bag, cfg).map(|(p, _)| p)
}

/// Loss of one bag and its gradient with respect to every parameter.
#[derive(Clone, Debug)]
pub struct BagGradient<F: Real> {
    pub loss: f64,
    pub grads: Vec<Vec<F>>,
}

pub fn loss_and_gradient<F: Real>(
    params: &DscaParams<F>,
    bag: &PreparedBag<F>,
    bin: usize,
    alpha: f64,
    cfg: &DscaConfig,
) -> Result<BagGradient<F>, NetError> {
    let mut tape = Tape::new();
    let pv = params.bind(&mut tape, true);
    let out = forward_on_tape(&mut tape, &pv, bag, cfg)?;
    let loss = nll_on_tape(&mut tape, out.hazards, bin, bag.censor, alpha)?;
    let value = tape.data(loss)[0].as_f64();
    if !value.is_finite() {
        return Err(NetError::NonFinite(format!("loss for {}", bag.patient_id)));
    }
    tape.backward(loss)?;
    let grads = pv
        .vars()
        .iter()
        .zip(&params.values)
        .map(|(&v, t)| tape.grad(v).map(<[F]>::to_vec).unwrap_or_else(|| vec![F::zero(); t.numel()]))
        .collect();
    Ok(BagGradient { loss: value, grads })
}

/// Loss of one bag without building gradients.
pub fn bag_loss<F: Real>(
    params: &DscaParams<F>,
    bag: &PreparedBag<F>,
    bin: usize,
    alpha: f64,
    cfg: &DscaConfig,
) -> Result<f64, NetError> {
    let mut tape = Tape::new();
    let pv = params.bind(&mut tape, false);
    let out = forward_on_tape(&mut tape, &pv, bag, cfg)?;
    let loss = nll_on_tape(&mut tape, out.hazards, bin, bag.censor, alpha)?;
    Ok(tape.data(loss)[0].as_f64())
}
