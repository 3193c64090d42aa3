#[cfg(feature = "parallel")]
use rayon::prelude::*;

use super::fold::{train_fold, FoldModel, TrainConfig};
use super::TrainError;
use crate::data::{split_folds, train_val_split, Cohort, CohortSplit};
use crate::net::{predict, DscaConfig, PreparedBag};
use crate::survival::concordance_index;

/// Independent 64-bit seed for `(base, purpose, index)`.
pub fn derive_seed(base: u64, purpose: u64, index: u64) -> u64 {
    let mut z = base ^ purpose.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ index.wrapping_mul(0xD1B5_4A32_D192_ED03);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

const VAL_SPLIT: u64 = 1;
const PARAM_INIT: u64 = 2;
const SHUFFLE: u64 = 3;

/// Out-of-fold prediction for one patient.
#[derive(Clone, Debug, PartialEq)]
pub struct OofRisk {
    pub patient_id: String,
    pub fold: usize,
    pub risk: f64,
    pub time: f64,
    pub censor: u8,
}

#[derive(Clone, Debug)]
pub struct FoldOutcome {
    pub fold: usize,
    pub c_index: f64,
    pub n_patients: usize,
    pub n_events: usize,
    pub train_ids: Vec<String>,
    pub val_ids: Vec<String>,
    pub test_ids: Vec<String>,
    pub model: FoldModel,
}

#[derive(Clone, Debug)]
pub struct CvResult {
    pub split: CohortSplit,
    pub folds: Vec<FoldOutcome>,
    pub mean_c_index: f64,
    pub std_c_index: f64,
    /// Test-fold risks of every patient, in cohort order.
    pub oof: Vec<OofRisk>,
}

impl CvResult {
    pub fn metrics_csv(&self) -> String {
        let mut out = String::from("fold,c_index,n_patients,n_events\n");
        for f in &self.folds {
            out.push_str(&format!("{},{},{},{}\n", f.fold, f.c_index, f.n_patients, f.n_events));
        }
        out.push_str(&format!("mean,{},,\nstd,{},,\n", self.mean_c_index, self.std_c_index));
        out
    }

    pub fn oof_csv(&self) -> String {
        let mut out = String::from("patient_id,fold,risk,time,event\n");
        for r in &self.oof {
            out.push_str(&format!("{},{},{},{},{}\n", r.patient_id, r.fold, r.risk, r.time, 1 - r.censor));
        }
        out
    }
}

/// Sample mean and (population) standard deviation.
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

fn run_fold(
    cohort: &Cohort,
    split: &CohortSplit,
    fold: usize,
    model_cfg: &DscaConfig,
    train_cfg: &TrainConfig,
) -> Result<(FoldOutcome, Vec<OofRisk>), TrainError> {
    let seed = train_cfg.seed;
    let rest = split.rest_indices(cohort, fold);
    let test = split.fold_indices(cohort, fold);
    let (tr, va) = train_val_split(cohort, &rest, split.val_fraction, derive_seed(seed, VAL_SPLIT, fold as u64));
    let fold_cfg = TrainConfig { seed: derive_seed(seed, SHUFFLE, fold as u64), ..train_cfg.clone() };
    let model = train_fold(
        &cohort.subset(&tr),
        &cohort.subset(&va),
        model_cfg,
        &fold_cfg,
        derive_seed(seed, PARAM_INIT, fold as u64),
    )?;
    let test_bags = cohort.subset(&test);
    let mut oof = Vec::with_capacity(test_bags.len());
    for b in &test_bags {
        let pred = predict(&model.params, &PreparedBag::<f32>::new(b, model_cfg)?, model_cfg)?;
        oof.push(OofRisk { patient_id: b.patient_id.clone(), fold, risk: pred.risk, time: b.time, censor: b.censor });
    }
    let risks: Vec<f64> = oof.iter().map(|r| r.risk).collect();
    let times: Vec<f64> = test_bags.iter().map(|b| b.time).collect();
    let censors: Vec<u8> = test_bags.iter().map(|b| b.censor).collect();
    let c_index = concordance_index(&risks, &times, &censors)?;
    let ids = |idx: &[usize]| idx.iter().map(|&i| cohort.bags[i].patient_id.clone()).collect();
    Ok((
        FoldOutcome {
            fold,
            c_index,
            n_patients: test_bags.len(),
            n_events: test_bags.iter().filter(|b| b.is_event()).count(),
            train_ids: ids(&tr),
            val_ids: ids(&va),
            test_ids: ids(&test),
            model,
        },
        oof,
    ))
}

/// `k`-fold patient-level cross-validation. Each fold trains on the other
/// folds minus a stratified validation holdout and is scored on its own
/// patients. Folds run in parallel when `parallel` is set and the crate
/// feature of the same name is enabled; results do not depend on it.
pub fn cross_validate_with(
    cohort: &Cohort,
    k: usize,
    model_cfg: &DscaConfig,
    train_cfg: &TrainConfig,
    parallel: bool,
) -> Result<CvResult, TrainError> {
    model_cfg.validate()?;
    train_cfg.validate()?;
    let split = split_folds(cohort, k, train_cfg.seed)?;
    let job = |fold: usize| run_fold(cohort, &split, fold, model_cfg, train_cfg);
    #[cfg(feature = "parallel")]
    let results: Vec<_> = if parallel {
        (0..k).into_par_iter().map(job).collect()
    } else {
        (0..k).map(job).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let results: Vec<_> = {
        let _ = parallel;
        (0..k).map(job).collect()
    };
    let mut folds = Vec::with_capacity(k);
    let mut oof = Vec::with_capacity(cohort.len());
    for r in results {
        let (f, o) = r?;
        folds.push(f);
        oof.extend(o);
    }
    let order: std::collections::HashMap<&str, usize> =
        cohort.bags.iter().enumerate().map(|(i, b)| (b.patient_id.as_str(), i)).collect();
    oof.sort_by_key(|r| order[r.patient_id.as_str()]);
    let (mean_c_index, std_c_index) = mean_std(&folds.iter().map(|f| f.c_index).collect::<Vec<_>>());
    Ok(CvResult { split, folds, mean_c_index, std_c_index, oof })
}

pub fn cross_validate(cohort: &Cohort, k: usize, model_cfg: &DscaConfig, train_cfg: &TrainConfig) -> Result<CvResult, TrainError> {
    cross_validate_with(cohort, k, model_cfg, train_cfg, true)
}

/// One row of an ablation table.
#[derive(Clone, Debug, PartialEq)]
pub struct AblationRow {
    pub label: String,
    pub config: DscaConfig,
    pub mean_c_index: f64,
    pub std_c_index: f64,
    pub fold_c_index: Vec<f64>,
}

/// Cross-validates every labelled variant with the same folds and seeds.
pub fn run_ablation(
    cohort: &Cohort,
    variants: &[(String, DscaConfig)],
    train_cfg: &TrainConfig,
    k: usize,
) -> Result<Vec<AblationRow>, TrainError> {
    variants
        .iter()
        .map(|(label, cfg)| {
            let cv = cross_validate(cohort, k, cfg, train_cfg)?;
            Ok(AblationRow {
                label: label.clone(),
                config: cfg.clone(),
                mean_c_index: cv.mean_c_index,
                std_c_index: cv.std_c_index,
                fold_c_index: cv.folds.iter().map(|f| f.c_index).collect(),
            })
        })
        .collect()
}

pub fn ablation_csv(rows: &[AblationRow]) -> String {
    let mut out = String::from("variant,streams,pool,fusion,pe,high_embed,mean_c_index,std_c_index\n");
    for r in rows {
        let c = &r.config;
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            r.label,
            c.streams,
            c.effective_pool(),
            c.fusion,
            c.use_pe as u8,
            c.high_embed,
            r.mean_c_index,
            r.std_c_index
        ));
    }
    out
}
