use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::DscaConfig;
use super::forward::{forward_on_tape, PreparedBag};
use super::layers::nll_on_tape;
use super::params::{DscaParams, ParamVars};
use super::NetError;
use crate::autodiff::{analytic_gradients, compare_gradients, AutodiffError, Tensor};
use crate::data::{canonical_order, Coord, PatientBag};

/// Worst finite-difference disagreement for one parameter tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct TensorCheck {
    pub name: String,
    pub numel: usize,
    pub max_rel_error: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradcheckReport {
    pub variant: String,
    pub tensors: Vec<TensorCheck>,
}

impl GradcheckReport {
    pub fn worst(&self) -> f64 {
        self.tensors.iter().map(|t| t.max_rel_error).fold(0.0, f64::max)
    }

    pub fn passed(&self, tol: f64) -> bool {
        self.tensors.iter().all(|t| t.max_rel_error < tol)
    }
}

/// Seeded bag with `m` distinct grid positions on one slide and tokens
/// drawn from `U(−1, 1)`.
pub fn tiny_bag(cfg: &DscaConfig, m: usize, seed: u64) -> PatientBag {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let side = (2 * m).max(2);
    let mut cells: Vec<(u32, u32)> = (0..side * side).map(|c| ((c % side) as u32, (c / side) as u32)).collect();
    for i in (1..cells.len()).rev() {
        cells.swap(i, rng.random_range(0..=i));
    }
    let coords = cells[..m].iter().map(|&(x, y)| Coord::new(0, x, y)).collect();
    let mut draw = |n: usize| (0..n).map(|_| rng.random_range(-1.0f32..1.0)).collect::<Vec<f32>>();
    let low_tokens = draw(m * cfg.d);
    let high_tokens = draw(m * cfg.lambda * cfg.lambda * cfg.d);
    canonical_order(&PatientBag {
        patient_id: "gradcheck".into(),
        lambda: cfg.lambda,
        d: cfg.d,
        coords,
        low_tokens,
        high_tokens,
        time: 1.0,
        censor: 0,
    })
}

/// Central-difference check of the bag loss gradient for every parameter
/// tensor, in `f64`. The bag is treated as an event in the last bin so
/// that every hazard enters the loss. `corrupt` perturbs the reverse-mode
/// gradients before comparison and must make the check fail.
pub fn gradcheck_network(
    cfg: &DscaConfig,
    bag: &PatientBag,
    param_seed: u64,
    eps: f64,
    corrupt: bool,
) -> Result<GradcheckReport, NetError> {
    let params = DscaParams::<f64>::init(cfg, param_seed)?;
    let prepared = PreparedBag::<f64>::new(bag, cfg)?;
    let names: Vec<String> = params.specs.iter().map(|s| s.name.clone()).collect();
    let f = |tape: &mut crate::autodiff::Tape<f64>, vars: &[crate::autodiff::Var]| {
        let pv = ParamVars::new(names.clone(), vars.to_vec());
        let mut run = || -> Result<_, NetError> {
            let out = forward_on_tape(tape, &pv, &prepared, cfg)?;
            nll_on_tape(tape, out.hazards, cfg.n_t, 0, 0.0)
        };
        run().map_err(|e| match e {
            NetError::Autodiff(a) => a,
            other => AutodiffError::DomainError(other.to_string()),
        })
    };
    let inputs: Vec<Tensor<f64>> = params.values.clone();
    let mut analytic = analytic_gradients(&f, &inputs)?;
    if corrupt {
        for g in &mut analytic {
            g.iter_mut().for_each(|v| *v = *v * 1.1 + 1e-2);
        }
    }
    let errors = compare_gradients(&f, &inputs, &analytic, eps)?;
    Ok(GradcheckReport {
        variant: cfg.variant_label(),
        tensors: names
            .into_iter()
            .zip(&inputs)
            .zip(errors)
            .map(|((name, t), max_rel_error)| TensorCheck { name, numel: t.numel(), max_rel_error })
            .collect(),
    })
}
