use std::collections::HashSet;
use std::fmt::Display;
use std::path::PathBuf;
use std::str::FromStr;

use super::CliError;
use crate::data::SynthConfig;
use crate::net::DscaConfig;
use crate::train::TrainConfig;

/// Settings of the finite-difference check, which runs on its own tiny bag.
#[derive(Clone, Debug, PartialEq)]
pub struct GradcheckSettings {
    pub m: usize,
    pub d: usize,
    pub d_e: usize,
    pub lambda: usize,
    pub n_heads: usize,
    pub eps: f64,
    pub tol: f64,
    pub all_variants: bool,
}

impl Default for GradcheckSettings {
    fn default() -> Self {
        Self { m: 3, d: 6, d_e: 4, lambda: 2, n_heads: 2, eps: 1e-5, tol: 1e-4, all_variants: false }
    }
}

/// Everything a command can be configured with.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub model: DscaConfig,
    pub train: TrainConfig,
    /// `d`, `lambda` and `seed` are shared with the model and training
    /// sections; see [`RunConfig::synth_config`].
    pub synth: SynthConfig,
    pub folds: usize,
    pub parallel: bool,
    pub variants: Vec<String>,
    pub gradcheck: GradcheckSettings,
    pub manifest: Option<PathBuf>,
    pub params: Option<PathBuf>,
    pub bag: Option<PathBuf>,
    pub out: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            model: DscaConfig::default(),
            train: TrainConfig::default(),
            synth: SynthConfig::default(),
            folds: 5,
            parallel: true,
            variants: ["dual+cross_attention", "dual+mean", "low", "high"].map(String::from).to_vec(),
            gradcheck: GradcheckSettings::default(),
            manifest: None,
            params: None,
            bag: None,
            out: PathBuf::from("out"),
        }
    }
}

/// Every accepted key, in the order the effective config is written.
pub const KEYS: &[&str] = &[
    "d",
    "d_e",
    "lambda",
    "conv_k",
    "conv_s",
    "n_heads",
    "ffn_mult",
    "n_t",
    "fusion",
    "high_embed",
    "pool",
    "use_pe",
    "activation",
    "streams",
    "max_epochs",
    "lr",
    "accum_steps",
    "weight_decay",
    "lr_decay_factor",
    "lr_patience",
    "early_stop_patience",
    "alpha",
    "seed",
    "n_patients",
    "m",
    "signal_site",
    "signal_fraction",
    "beta",
    "censor_rate",
    "folds",
    "parallel",
    "variants",
    "gradcheck_m",
    "gradcheck_d",
    "gradcheck_d_e",
    "gradcheck_lambda",
    "gradcheck_heads",
    "gradcheck_eps",
    "gradcheck_tol",
    "gradcheck_all_variants",
    "manifest",
    "params",
    "bag",
    "out",
];

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T, CliError>
where
    T::Err: Display,
{
    value.parse().map_err(|e| CliError::Config(format!("{key} = {value}: {e}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool, CliError> {
    match value {
        "true" | "1" | "yes" | "on" => Ok(true),
        "false" | "0" | "no" | "off" => Ok(false),
        _ => Err(CliError::Config(format!("{key} = {value}: expected true or false"))),
    }
}

fn opt_path(value: &str) -> Option<PathBuf> {
    (!value.is_empty()).then(|| PathBuf::from(value))
}

impl RunConfig {
    /// Applies one `key = value` setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), CliError> {
        let v = value.trim();
        let (m, t, s, g) = (&mut self.model, &mut self.train, &mut self.synth, &mut self.gradcheck);
        match key.trim() {
            "d" => m.d = parse(key, v)?,
            "d_e" => m.d_e = parse(key, v)?,
            "lambda" => m.lambda = parse(key, v)?,
            "conv_k" => m.conv_k = parse(key, v)?,
            "conv_s" => m.conv_s = parse(key, v)?,
            "n_heads" => m.n_heads = parse(key, v)?,
            "ffn_mult" => m.ffn_mult = parse(key, v)?,
            "n_t" => m.n_t = parse(key, v)?,
            "fusion" => m.fusion = parse(key, v)?,
            "high_embed" => m.high_embed = parse(key, v)?,
            "pool" => m.pool = parse(key, v)?,
            "use_pe" => m.use_pe = parse_bool(key, v)?,
            "activation" => m.activation = parse(key, v)?,
            "streams" => m.streams = parse(key, v)?,
            "max_epochs" => t.max_epochs = parse(key, v)?,
            "lr" => t.lr = parse(key, v)?,
            "accum_steps" => t.accum_steps = parse(key, v)?,
            "weight_decay" => t.weight_decay = parse(key, v)?,
            "lr_decay_factor" => t.lr_decay_factor = parse(key, v)?,
            "lr_patience" => t.lr_patience = parse(key, v)?,
            "early_stop_patience" => t.early_stop_patience = parse(key, v)?,
            "alpha" => t.alpha = parse(key, v)?,
            "seed" => t.seed = parse(key, v)?,
            "n_patients" => s.n_patients = parse(key, v)?,
            "m" => s.m = parse(key, v)?,
            "signal_site" => s.signal_site = parse(key, v)?,
            "signal_fraction" => s.signal_fraction = parse(key, v)?,
            "beta" => s.beta = parse(key, v)?,
            "censor_rate" => s.censor_rate = parse(key, v)?,
            "folds" => self.folds = parse(key, v)?,
            "parallel" => self.parallel = parse_bool(key, v)?,
            "variants" => {
                self.variants = v.split(',').map(str::trim).filter(|p| !p.is_empty()).map(String::from).collect()
            }
            "gradcheck_m" => g.m = parse(key, v)?,
            "gradcheck_d" => g.d = parse(key, v)?,
            "gradcheck_d_e" => g.d_e = parse(key, v)?,
            "gradcheck_lambda" => g.lambda = parse(key, v)?,
            "gradcheck_heads" => g.n_heads = parse(key, v)?,
            "gradcheck_eps" => g.eps = parse(key, v)?,
            "gradcheck_tol" => g.tol = parse(key, v)?,
            "gradcheck_all_variants" => g.all_variants = parse_bool(key, v)?,
            "manifest" => self.manifest = opt_path(v),
            "params" => self.params = opt_path(v),
            "bag" => self.bag = opt_path(v),
            "out" => self.out = PathBuf::from(v),
            other => return Err(CliError::Config(format!("unknown key '{other}'"))),
        }
        Ok(())
    }

    /// Applies a config file: `key = value` lines, `#` starts a comment.
    /// A key may appear only once per file.
    pub fn apply_text(&mut self, text: &str) -> Result<(), CliError> {
        let mut seen = HashSet::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| CliError::Config(format!("line {}: expected 'key = value', got '{line}'", n + 1)))?;
            let key = key.trim();
            if !seen.insert(key.to_string()) {
                return Err(CliError::Config(format!("line {}: duplicate key '{key}'", n + 1)));
            }
            self.set(key, value).map_err(|e| CliError::Config(format!("line {}: {e}", n + 1)))?;
        }
        Ok(())
    }

    /// Applies a `key=value` override.
    pub fn apply_override(&mut self, kv: &str) -> Result<(), CliError> {
        let (key, value) =
            kv.split_once('=').ok_or_else(|| CliError::Config(format!("--set expects key=value, got '{kv}'")))?;
        self.set(key, value)
    }

    fn value_of(&self, key: &str) -> String {
        let (m, t, s, g) = (&self.model, &self.train, &self.synth, &self.gradcheck);
        let path = |p: &Option<PathBuf>| p.as_ref().map(|p| p.display().to_string()).unwrap_or_default();
        match key {
            "d" => m.d.to_string(),
            "d_e" => m.d_e.to_string(),
            "lambda" => m.lambda.to_string(),
            "conv_k" => m.conv_k.to_string(),
            "conv_s" => m.conv_s.to_string(),
            "n_heads" => m.n_heads.to_string(),
            "ffn_mult" => m.ffn_mult.to_string(),
            "n_t" => m.n_t.to_string(),
            "fusion" => m.fusion.to_string(),
            "high_embed" => m.high_embed.to_string(),
            "pool" => m.pool.to_string(),
            "use_pe" => m.use_pe.to_string(),
            "activation" => m.activation.to_string(),
            "streams" => m.streams.to_string(),
            "max_epochs" => t.max_epochs.to_string(),
            "lr" => t.lr.to_string(),
            "accum_steps" => t.accum_steps.to_string(),
            "weight_decay" => t.weight_decay.to_string(),
            "lr_decay_factor" => t.lr_decay_factor.to_string(),
            "lr_patience" => t.lr_patience.to_string(),
            "early_stop_patience" => t.early_stop_patience.to_string(),
            "alpha" => t.alpha.to_string(),
            "seed" => t.seed.to_string(),
            "n_patients" => s.n_patients.to_string(),
            "m" => s.m.to_string(),
            "signal_site" => s.signal_site.to_string(),
            "signal_fraction" => s.signal_fraction.to_string(),
            "beta" => s.beta.to_string(),
            "censor_rate" => s.censor_rate.to_string(),
            "folds" => self.folds.to_string(),
            "parallel" => self.parallel.to_string(),
            "variants" => self.variants.join(","),
            "gradcheck_m" => g.m.to_string(),
            "gradcheck_d" => g.d.to_string(),
            "gradcheck_d_e" => g.d_e.to_string(),
            "gradcheck_lambda" => g.lambda.to_string(),
            "gradcheck_heads" => g.n_heads.to_string(),
            "gradcheck_eps" => g.eps.to_string(),
            "gradcheck_tol" => g.tol.to_string(),
            "gradcheck_all_variants" => g.all_variants.to_string(),
            "manifest" => path(&self.manifest),
            "params" => path(&self.params),
            "bag" => path(&self.bag),
            "out" => self.out.display().to_string(),
            _ => unreachable!("KEYS and value_of agree"),
        }
    }

    /// The effective configuration as a config file. `out` is left out so
    /// that runs into different directories echo identical files.
    pub fn to_text(&self) -> String {
        KEYS.iter().filter(|&&k| k != "out").map(|k| format!("{k} = {}\n", self.value_of(k))).collect()
    }

    /// Synthetic cohort settings; bag geometry follows the model.
    pub fn synth_config(&self) -> SynthConfig {
        SynthConfig { d: self.model.d, lambda: self.model.lambda, seed: self.train.seed, ..self.synth.clone() }
    }

    /// Model used by `gradcheck`: the configured variant at tiny sizes.
    pub fn gradcheck_model(&self) -> DscaConfig {
        let g = &self.gradcheck;
        DscaConfig { d: g.d, d_e: g.d_e, lambda: g.lambda, n_heads: g.n_heads, ..self.model.clone() }
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.model.validate().map_err(|e| CliError::Config(e.to_string()))?;
        self.train.validate().map_err(|e| CliError::Config(e.to_string()))?;
        self.synth_config().validate().map_err(|e| CliError::Config(e.to_string()))?;
        if self.folds < 2 {
            return Err(CliError::Config("folds must be >= 2".into()));
        }
        let g = &self.gradcheck;
        if g.m == 0 || !(g.eps > 0.0) || !(g.tol > 0.0) {
            return Err(CliError::Config("gradcheck_m, gradcheck_eps and gradcheck_tol must be positive".into()));
        }
        self.gradcheck_model().validate().map_err(|e| CliError::Config(format!("gradcheck model: {e}")))?;
        for v in &self.variants {
            self.model.with_variant(v).map_err(|e| CliError::Config(e.to_string()))?;
        }
        Ok(())
    }
}
