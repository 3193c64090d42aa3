use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::adam::{adam_step, AdamState};
use super::schedule::PlateauSchedule;
use super::TrainError;
use crate::autodiff::{Real, Tape};
use crate::data::PatientBag;
use crate::net::{bag_loss, forward_on_tape, layers::nll_on_tape, loss_and_gradient, DscaConfig, DscaParams, PreparedBag};
use crate::survival::{make_time_bins, TimeBins};

/// Optimization and schedule hyperparameters.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub max_epochs: usize,
    pub lr: f64,
    pub accum_steps: usize,
    pub weight_decay: f64,
    pub lr_decay_factor: f64,
    pub lr_patience: usize,
    pub early_stop_patience: usize,
    pub alpha: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            max_epochs: 150,
            lr: 8e-5,
            accum_steps: 16,
            weight_decay: 5e-4,
            lr_decay_factor: 0.5,
            lr_patience: 10,
            early_stop_patience: 30,
            alpha: 0.0,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |msg: &str| Err(TrainError::InvalidConfig(msg.to_string()));
        if self.max_epochs == 0 || self.accum_steps == 0 || self.lr_patience == 0 || self.early_stop_patience == 0 {
            return bad("max_epochs, accum_steps and patience values must be positive");
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad("lr must be positive");
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return bad("weight_decay must be non-negative");
        }
        if !(self.lr_decay_factor > 0.0 && self.lr_decay_factor < 1.0) {
            return bad("lr_decay_factor must lie in (0, 1)");
        }
        if !(0.0..1.0).contains(&self.alpha) {
            return bad("alpha must lie in [0, 1)");
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub lr: f64,
    pub improved: bool,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LrEvent {
    /// Epoch after which the new rate applies.
    pub epoch: usize,
    pub from: f64,
    pub to: f64,
}

/// Training history of one fold.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainReport {
    pub epochs: Vec<EpochRecord>,
    pub lr_events: Vec<LrEvent>,
    pub stop_epoch: usize,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    /// Validation loss recomputed with the restored best parameters.
    pub restored_val_loss: f64,
    pub early_stopped: bool,
}

impl TrainReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,train_loss,val_loss,lr,improved\n");
        for e in &self.epochs {
            out.push_str(&format!("{},{},{},{},{}\n", e.epoch, e.train_loss, e.val_loss, e.lr, e.improved as u8));
        }
        out
    }
}

/// Trained parameters of one fold with the time bins they were fit on.
#[derive(Clone, Debug)]
pub struct FoldModel {
    pub params: DscaParams<f32>,
    pub bins: TimeBins,
    pub report: TrainReport,
}

/// A bag with its network inputs and 1-based time bin.
pub struct Example<F: Real = f32> {
    pub bag: PreparedBag<F>,
    pub bin: usize,
}

pub fn prepare_examples<F: Real>(bags: &[PatientBag], bins: &TimeBins, cfg: &DscaConfig) -> Result<Vec<Example<F>>, TrainError> {
    bags.iter()
        .map(|b| Ok(Example { bag: PreparedBag::new(b, cfg)?, bin: bins.assign_bin(b.time) }))
        .collect()
}

fn add_into<F: Real>(acc: &mut [Vec<F>], g: &[Vec<F>]) {
    for (a, g) in acc.iter_mut().zip(g) {
        for (x, &y) in a.iter_mut().zip(g) {
            *x = *x + y;
        }
    }
}

/// Summed loss and summed gradient over `examples`, one bag per tape.
pub fn accumulate_gradients<F: Real>(
    params: &DscaParams<F>,
    examples: &[&Example<F>],
    alpha: f64,
    cfg: &DscaConfig,
) -> Result<(f64, Vec<Vec<F>>), TrainError> {
    let mut acc: Vec<Vec<F>> = params.values.iter().map(|t| vec![F::zero(); t.numel()]).collect();
    let mut total = 0.0;
    for ex in examples {
        let g = loss_and_gradient(params, &ex.bag, ex.bin, alpha, cfg)?;
        total += g.loss;
        add_into(&mut acc, &g.grads);
    }
    Ok((total, acc))
}

/// Summed loss and gradient over `examples` from a single tape holding
/// every forward pass.
pub fn one_pass_gradient<F: Real>(
    params: &DscaParams<F>,
    examples: &[&Example<F>],
    alpha: f64,
    cfg: &DscaConfig,
) -> Result<(f64, Vec<Vec<F>>), TrainError> {
    if examples.is_empty() {
        return Err(TrainError::EmptyTrainSet);
    }
    let mut tape = Tape::new();
    let pv = params.bind(&mut tape, true);
    let mut losses = Vec::with_capacity(examples.len());
    for ex in examples {
        let out = forward_on_tape(&mut tape, &pv, &ex.bag, cfg)?;
        losses.push(nll_on_tape(&mut tape, out.hazards, ex.bin, ex.bag.censor, alpha)?);
    }
    let mut total = losses[0];
    for &l in &losses[1..] {
        total = tape.add(total, l)?;
    }
    tape.backward(total)?;
    let grads = pv
        .vars()
        .iter()
        .zip(&params.values)
        .map(|(&v, t)| tape.grad(v).map(<[F]>::to_vec).unwrap_or_else(|| vec![F::zero(); t.numel()]))
        .collect();
    Ok((tape.data(total)[0].as_f64(), grads))
}

fn mean_loss(params: &DscaParams<f32>, examples: &[Example], alpha: f64, cfg: &DscaConfig) -> Result<f64, TrainError> {
    let mut total = 0.0;
    for ex in examples {
        total += bag_loss(params, &ex.bag, ex.bin, alpha, cfg)?;
    }
    Ok(total / examples.len() as f64)
}

/// Trains one model. Time bins are fit on `train`; `val` drives the LR
/// schedule, early stopping and best-epoch selection (the training loss
/// stands in when `val` is empty). Parameters come from `init_seed`; the
/// epoch shuffles from `train_cfg.seed`.
pub fn train_fold(
    train: &[PatientBag],
    val: &[PatientBag],
    model_cfg: &DscaConfig,
    train_cfg: &TrainConfig,
    init_seed: u64,
) -> Result<FoldModel, TrainError> {
    if train.is_empty() {
        return Err(TrainError::EmptyTrainSet);
    }
    model_cfg.validate()?;
    train_cfg.validate()?;
    let times: Vec<f64> = train.iter().map(|b| b.time).collect();
    let censors: Vec<u8> = train.iter().map(|b| b.censor).collect();
    let bins = make_time_bins(&times, &censors, model_cfg.n_t)?;
    let train_ex = prepare_examples::<f32>(train, &bins, model_cfg)?;
    let val_ex = prepare_examples::<f32>(val, &bins, model_cfg)?;

    let mut params = DscaParams::<f32>::init(model_cfg, init_seed)?;
    let mut adam = AdamState::new(&params.values);
    let mut schedule = PlateauSchedule::new(
        train_cfg.lr,
        train_cfg.lr_decay_factor,
        train_cfg.lr_patience,
        train_cfg.early_stop_patience,
    );
    let mut rng = ChaCha8Rng::seed_from_u64(train_cfg.seed);
    let mut order: Vec<usize> = (0..train_ex.len()).collect();
    let mut best = params.clone();
    let mut report = TrainReport {
        epochs: Vec::new(),
        lr_events: Vec::new(),
        stop_epoch: 0,
        best_epoch: 0,
        best_val_loss: f64::INFINITY,
        restored_val_loss: f64::NAN,
        early_stopped: false,
    };

    for epoch in 1..=train_cfg.max_epochs {
        order.shuffle(&mut rng);
        let lr = schedule.lr;
        let mut train_total = 0.0;
        for window in order.chunks(train_cfg.accum_steps) {
            let batch: Vec<&Example> = window.iter().map(|&i| &train_ex[i]).collect();
            let (loss, grads) = accumulate_gradients(&params, &batch, train_cfg.alpha, model_cfg)?;
            train_total += loss;
            adam_step(&mut params.values, &grads, &mut adam, lr, train_cfg.weight_decay)?;
        }
        if !params.is_finite() {
            return Err(TrainError::NonFinite(format!("parameters after epoch {epoch}")));
        }
        let train_loss = train_total / train_ex.len() as f64;
        let val_loss = if val_ex.is_empty() {
            mean_loss(&params, &train_ex, train_cfg.alpha, model_cfg)?
        } else {
            mean_loss(&params, &val_ex, train_cfg.alpha, model_cfg)?
        };
        let decision = schedule.observe(val_loss);
        report.epochs.push(EpochRecord { epoch, train_loss, val_loss, lr, improved: decision.improved });
        report.stop_epoch = epoch;
        if decision.improved {
            best.clone_from(&params);
            report.best_epoch = epoch;
            report.best_val_loss = val_loss;
        }
        if decision.decay_lr {
            report.lr_events.push(LrEvent { epoch, from: lr, to: schedule.lr });
        }
        if decision.stop {
            report.early_stopped = true;
            break;
        }
    }
    // the first epoch always improves on +inf, so `best` is a trained state
    params = best;
    let monitor = if val_ex.is_empty() { &train_ex } else { &val_ex };
    report.restored_val_loss = mean_loss(&params, monitor, train_cfg.alpha, model_cfg)?;
    Ok(FoldModel { params, bins, report })
}
