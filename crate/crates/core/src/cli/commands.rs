use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use super::report::{km_csv, km_svg, Stratification};
use super::{write_file, CliError, RunConfig};
use crate::data::{generate_synthetic_cohort, load_bag, Cohort};
use crate::net::{gradcheck_network, predict, predict_with_attention, tiny_bag, DscaParams, PreparedBag};
use crate::survival::concordance_index;
use crate::train::{ablation_csv, cross_validate_with, run_ablation};

fn required<'a>(path: &'a Option<PathBuf>, key: &str, cmd: &str) -> Result<&'a Path, CliError> {
    path.as_deref().ok_or_else(|| CliError::Config(format!("{cmd} needs `{key}` (use --set {key}=PATH)")))
}

fn prepare_out(cfg: &RunConfig) -> Result<(), CliError> {
    std::fs::create_dir_all(&cfg.out).map_err(|e| CliError::Runtime(format!("{}: {e}", cfg.out.display())))?;
    write_file(&cfg.out.join("config.txt"), &cfg.to_text())
}

fn load_params(cfg: &RunConfig, cmd: &str) -> Result<DscaParams, CliError> {
    let params = DscaParams::load(required(&cfg.params, "params", cmd)?)?;
    params.check_against(&cfg.model)?;
    Ok(params)
}

fn write_stratification(out: &Path, risks: &[f64], times: &[f64], censors: &[u8]) -> Result<Stratification, CliError> {
    let s = Stratification::new(risks, times, censors)?;
    let t_max = times.iter().copied().fold(0.0, f64::max);
    write_file(&out.join("km.csv"), &km_csv(&s))?;
    write_file(&out.join("km.svg"), &km_svg(&s, t_max))?;
    write_file(&out.join("stratification.txt"), &s.summary())?;
    Ok(s)
}

fn logrank_line(s: &Stratification) -> String {
    match &s.logrank {
        Some(r) => format!("logrank p = {:.4e} (high {} / low {})", r.p_value, s.high.len(), s.low.len()),
        None => format!("logrank not applicable (high {} / low {})", s.high.len(), s.low.len()),
    }
}

fn cohort_summary(c: &Cohort) -> String {
    let mut times: Vec<f64> = c.bags.iter().map(|b| b.time).collect();
    times.sort_by(f64::total_cmp);
    let median = if times.is_empty() { f64::NAN } else { times[times.len() / 2] };
    let tokens: usize = c.bags.iter().map(|b| b.m()).sum();
    format!(
        "patients  {}\nevents    {}\ncensored  {} ({:.1}%)\ntokens    {} low-resolution\nmedian t  {:.4}\n",
        c.len(),
        c.n_events(),
        c.len() - c.n_events(),
        100.0 * c.censored_fraction(),
        tokens,
        median
    )
}

/// Writes `bags/*.dsb`, `manifest.csv` and `config.txt` under `out`.
pub fn cmd_synth(cfg: &RunConfig) -> Result<String, CliError> {
    let cohort = generate_synthetic_cohort(&cfg.synth_config())?;
    prepare_out(cfg)?;
    let manifest = cohort.save(&cfg.out)?;
    Ok(format!("{}manifest  {}\n", cohort_summary(&cohort), manifest.display()))
}

/// Cross-validates on `manifest`. Writes per-fold epoch logs, parameters,
/// time bins and splits, the metrics table, pooled out-of-fold risks and
/// their median stratification.
pub fn cmd_train(cfg: &RunConfig) -> Result<String, CliError> {
    let cohort = Cohort::load_manifest(required(&cfg.manifest, "manifest", "train")?)?;
    let cv = cross_validate_with(&cohort, cfg.folds, &cfg.model, &cfg.train, cfg.parallel)?;
    prepare_out(cfg)?;
    let mut text = String::new();
    for f in &cv.folds {
        let dir = cfg.out.join(format!("fold_{}", f.fold));
        std::fs::create_dir_all(&dir).map_err(|e| CliError::Runtime(format!("{}: {e}", dir.display())))?;
        write_file(&dir.join("epochs.csv"), &f.model.report.to_csv())?;
        f.model.params.save(&dir.join("params.dsp"))?;
        let mut bins = String::from("edge\n");
        for e in &f.model.bins.edges {
            let _ = writeln!(bins, "{e}");
        }
        write_file(&dir.join("bins.csv"), &bins)?;
        let mut split = String::from("patient_id,role\n");
        for (role, ids) in [("train", &f.train_ids), ("val", &f.val_ids), ("test", &f.test_ids)] {
            for id in ids {
                let _ = writeln!(split, "{id},{role}");
            }
        }
        write_file(&dir.join("split.csv"), &split)?;
        let r = &f.model.report;
        let _ = writeln!(
            text,
            "fold {}  c-index {:.4}  n {}  events {}  epochs {}  best epoch {}",
            f.fold,
            f.c_index,
            f.n_patients,
            f.n_events,
            r.stop_epoch,
            r.best_epoch
        );
    }
    write_file(&cfg.out.join("metrics.csv"), &cv.metrics_csv())?;
    write_file(&cfg.out.join("oof_risks.csv"), &cv.oof_csv())?;
    let risks: Vec<f64> = cv.oof.iter().map(|r| r.risk).collect();
    let times: Vec<f64> = cv.oof.iter().map(|r| r.time).collect();
    let censors: Vec<u8> = cv.oof.iter().map(|r| r.censor).collect();
    let s = write_stratification(&cfg.out, &risks, &times, &censors)?;
    let _ = writeln!(text, "c-index {:.4} +/- {:.4}", cv.mean_c_index, cv.std_c_index);
    let _ = writeln!(text, "{}", logrank_line(&s));
    Ok(text)
}

/// Scores every patient of `manifest` with the parameter file `params`.
pub fn cmd_eval(cfg: &RunConfig) -> Result<String, CliError> {
    let params = load_params(cfg, "eval")?;
    let cohort = Cohort::load_manifest(required(&cfg.manifest, "manifest", "eval")?)?;
    let mut risks = Vec::with_capacity(cohort.len());
    for b in &cohort.bags {
        risks.push(predict(&params, &PreparedBag::<f32>::new(b, &cfg.model)?, &cfg.model)?.risk);
    }
    let times: Vec<f64> = cohort.bags.iter().map(|b| b.time).collect();
    let censors: Vec<u8> = cohort.bags.iter().map(|b| b.censor).collect();
    let c = concordance_index(&risks, &times, &censors)?;
    prepare_out(cfg)?;
    let s = write_stratification(&cfg.out, &risks, &times, &censors)?;
    let mut high = vec![false; risks.len()];
    for &i in &s.high {
        high[i] = true;
    }
    let mut csv = String::from("patient_id,risk,time,event,group\n");
    for (i, b) in cohort.bags.iter().enumerate() {
        let g = if high[i] { "high" } else { "low" };
        let _ = writeln!(csv, "{},{},{},{},{g}", b.patient_id, risks[i], b.time, 1 - b.censor);
    }
    write_file(&cfg.out.join("risks.csv"), &csv)?;
    write_file(
        &cfg.out.join("metrics.csv"),
        &format!("c_index,n_patients,n_events\n{c},{},{}\n", cohort.len(), cohort.n_events()),
    )?;
    Ok(format!("c-index {c:.4}  n {}  events {}\n{}\n", cohort.len(), cohort.n_events(), logrank_line(&s)))
}

/// Finite-difference check on a seeded tiny bag. Exits with a runtime
/// error when any tensor exceeds `gradcheck_tol`.
pub fn cmd_gradcheck(cfg: &RunConfig, corrupt: bool) -> Result<String, CliError> {
    let g = &cfg.gradcheck;
    let base = cfg.gradcheck_model();
    let variants = if g.all_variants { base.all_variants() } else { vec![base] };
    let seed = cfg.train.seed;
    let mut text = String::new();
    let mut failed = Vec::new();
    for v in &variants {
        let bag = tiny_bag(v, g.m, seed);
        let report = gradcheck_network(v, &bag, seed, g.eps, corrupt)?;
        let _ = writeln!(text, "variant {}", report.variant);
        for t in &report.tensors {
            let verdict = if t.max_rel_error < g.tol { "ok" } else { "FAIL" };
            let _ = writeln!(text, "  {:<24} {:>6}  {:.3e}  {verdict}", t.name, t.numel, t.max_rel_error);
        }
        if !report.passed(g.tol) {
            failed.push(format!("{} (worst {:.3e})", report.variant, report.worst()));
        }
    }
    if failed.is_empty() {
        let _ = writeln!(text, "gradcheck passed for {} variant(s), tol {:e}", variants.len(), g.tol);
        Ok(text)
    } else {
        print!("{text}");
        Err(CliError::Runtime(format!("gradcheck failed: {}", failed.join(", "))))
    }
}

/// Writes `cross_attention.csv`, `gap_attention.csv` and `gap_ranking.csv`
/// for the bag at `bag`.
pub fn cmd_export_attn(cfg: &RunConfig) -> Result<String, CliError> {
    let params = load_params(cfg, "export-attn")?;
    let bag = load_bag(required(&cfg.bag, "bag", "export-attn")?)?;
    let model = &cfg.model;
    let prepared = PreparedBag::<f32>::new(&bag, model)?;
    let (pred, maps) = predict_with_attention(&params, &prepared, model)?;
    let (m, l, heads, s) = (bag.m(), model.lambda, model.n_heads, model.conv_s);
    let sq = l * l;
    let id = &bag.patient_id;
    prepare_out(cfg)?;

    let mut head_mean: Option<Vec<f64>> = None;
    if let Some(cross) = &maps.cross {
        let mut csv = String::from("patient_id,square_index,row,col,head,score\n");
        let mut mean = vec![0.0; m * sq];
        for j in 0..m {
            for h in 0..heads {
                for c in 0..sq {
                    let a = cross[(j * heads + h) * sq + c];
                    mean[j * sq + c] += a / heads as f64;
                    let _ = writeln!(csv, "{id},{j},{},{},{h},{a}", c / l, c % l);
                }
            }
        }
        write_file(&cfg.out.join("cross_attention.csv"), &csv)?;
        head_mean = Some(mean);
    }

    let mut gap = String::from("patient_id,token_index,u,v,score\n");
    for (i, &a) in maps.gap.iter().enumerate() {
        let p = prepared.grid[i * s];
        let _ = writeln!(gap, "{id},{i},{},{},{a}", p.u, p.v);
    }
    write_file(&cfg.out.join("gap_attention.csv"), &gap)?;

    let mut order: Vec<usize> = (0..maps.gap.len()).collect();
    order.sort_by(|&a, &b| maps.gap[b].total_cmp(&maps.gap[a]).then(a.cmp(&b)));
    let mut rank = String::from("rank,token_index,u,v,gap_score,top_row,top_col,top_cross_score\n");
    for (r, &i) in order.iter().enumerate() {
        let p = prepared.grid[i * s];
        let top = head_mean.as_ref().map(|mean| {
            let cells = &mean[i * s * sq..(i * s + 1) * sq];
            let c = (0..sq).max_by(|&a, &b| cells[a].total_cmp(&cells[b]).then(b.cmp(&a))).unwrap_or(0);
            format!("{},{},{}", c / l, c % l, cells[c])
        });
        let _ = writeln!(rank, "{},{i},{},{},{},{}", r + 1, p.u, p.v, maps.gap[i], top.unwrap_or_else(|| ",,".into()));
    }
    write_file(&cfg.out.join("gap_ranking.csv"), &rank)?;

    let mut text = format!("patient {id}  risk {:.6}\n", pred.risk);
    match &maps.cross {
        Some(_) => {
            let _ = writeln!(text, "cross-attention rows {}", m * sq * heads);
        }
        None => text.push_str("cross-attention not used by this variant\n"),
    }
    let _ = writeln!(text, "global attention rows {}", maps.gap.len());
    Ok(text)
}

/// Cross-validates each entry of `variants` with shared folds and seeds.
pub fn cmd_ablate(cfg: &RunConfig) -> Result<String, CliError> {
    let cohort = Cohort::load_manifest(required(&cfg.manifest, "manifest", "ablate")?)?;
    let variants = cfg
        .variants
        .iter()
        .map(|v| Ok((v.clone(), cfg.model.with_variant(v)?)))
        .collect::<Result<Vec<_>, CliError>>()?;
    let rows = run_ablation(&cohort, &variants, &cfg.train, cfg.folds)?;
    prepare_out(cfg)?;
    write_file(&cfg.out.join("ablation.csv"), &ablation_csv(&rows))?;
    let mut text = String::new();
    for r in &rows {
        let _ = writeln!(text, "{:<28} {:.4} +/- {:.4}", r.label, r.mean_c_index, r.std_c_index);
    }
    Ok(text)
}
