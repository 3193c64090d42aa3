use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::{DscaConfig, HighEmbed, Pool};
use super::NetError;
use crate::autodiff::{Real, Tape, Tensor, Var};
use crate::write_atomic;

pub const PARAMS_MAGIC: &[u8; 4] = b"DSP1";
pub const PARAMS_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Init {
    /// `U(−1/√fan_in, 1/√fan_in)`.
    Uniform { fan_in: usize },
    Zeros,
    Ones,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub init: Init,
}

impl ParamSpec {
    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }
}

struct Specs(Vec<ParamSpec>);

impl Specs {
    fn push(&mut self, name: String, shape: Vec<usize>, init: Init) {
        self.0.push(ParamSpec { name, shape, init });
    }

    fn weight(&mut self, name: String, shape: Vec<usize>, fan_in: usize) {
        self.push(name, shape, Init::Uniform { fan_in });
    }

    fn bias(&mut self, name: String, n: usize) {
        self.push(name, vec![n], Init::Zeros);
    }

    fn linear(&mut self, prefix: &str, din: usize, dout: usize) {
        self.weight(format!("{prefix}.w"), vec![din, dout], din);
        self.bias(format!("{prefix}.b"), dout);
    }

    fn layer_norm(&mut self, prefix: &str, n: usize) {
        self.push(format!("{prefix}.gamma"), vec![n], Init::Ones);
        self.push(format!("{prefix}.beta"), vec![n], Init::Zeros);
    }

    fn encoder(&mut self, prefix: &str, d_e: usize, ffn_mult: usize) {
        for p in ["q", "k", "v", "o"] {
            self.linear(&format!("{prefix}.attn.{p}"), d_e, d_e);
        }
        self.layer_norm(&format!("{prefix}.ln1"), d_e);
        self.linear(&format!("{prefix}.ffn1"), d_e, ffn_mult * d_e);
        self.linear(&format!("{prefix}.ffn2"), ffn_mult * d_e, d_e);
        self.layer_norm(&format!("{prefix}.ln2"), d_e);
    }
}

/// Names, shapes and initializers of every learnable tensor for `cfg`.
pub fn param_specs(cfg: &DscaConfig) -> Vec<ParamSpec> {
    let (d, d_e) = (cfg.d, cfg.d_e);
    let mut s = Specs(Vec::new());
    if cfg.streams.has_low() {
        s.weight("low.conv.w".into(), vec![d_e, d, cfg.conv_k], d * cfg.conv_k);
        s.bias("low.conv.b".into(), d_e);
    }
    if cfg.streams.has_high() {
        match cfg.high_embed {
            HighEmbed::Mlp => s.linear("high.embed", d, d_e),
            HighEmbed::Conv2d => {
                s.weight("high.embed.w".into(), vec![d_e, d, 3, 3], d * 9);
                s.bias("high.embed.b".into(), d_e);
            }
        }
        if cfg.effective_pool() == Pool::CrossAttention {
            s.weight("xattn.w_l".into(), vec![d, d_e], d);
            for p in ["w_q", "w_k", "w_v"] {
                s.weight(format!("xattn.{p}"), vec![d_e, d_e], d_e);
            }
        }
    }
    if cfg.streams.has_low() {
        s.encoder("enc_low", d_e, cfg.ffn_mult);
    }
    if cfg.streams.has_high() {
        s.encoder("enc_high", d_e, cfg.ffn_mult);
    }
    let d_o = cfg.d_o();
    s.weight("gap.v".into(), vec![d_o, d_e], d_o);
    s.weight("gap.w".into(), vec![d_e], d_e);
    s.linear("head.fc1", d_o, cfg.head_hidden());
    s.linear("head.fc2", cfg.head_hidden(), cfg.n_t);
    s.0
}

/// Exact number of learnable scalars.
pub fn count_parameters(cfg: &DscaConfig) -> usize {
    param_specs(cfg).iter().map(ParamSpec::numel).sum()
}

/// Named parameter tensors of one model, in registry order.
#[derive(Clone, Debug, PartialEq)]
pub struct DscaParams<F: Real = f32> {
    pub specs: Vec<ParamSpec>,
    pub values: Vec<Tensor<F>>,
}

impl<F: Real> DscaParams<F> {
    /// Seeded initialization according to each spec's [`Init`].
    pub fn init(cfg: &DscaConfig, seed: u64) -> Result<Self, NetError> {
        cfg.validate()?;
        let specs = param_specs(cfg);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let values = specs
            .iter()
            .map(|spec| {
                let data = match spec.init {
                    Init::Zeros => vec![F::zero(); spec.numel()],
                    Init::Ones => vec![F::one(); spec.numel()],
                    Init::Uniform { fan_in } => {
                        let bound = 1.0 / (fan_in as f64).sqrt();
                        (0..spec.numel()).map(|_| F::of(rng.random_range(-bound..bound))).collect()
                    }
                };
                Tensor::new(spec.shape.clone(), data).expect("spec shape")
            })
            .collect();
        Ok(Self { specs, values })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn position(&self, name: &str) -> Option<usize> {
        self.specs.iter().position(|s| s.name == name)
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<F>> {
        self.position(name).map(|i| &self.values[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<F>> {
        self.position(name).map(|i| &mut self.values[i])
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.specs.iter().map(|s| s.name.as_str())
    }

    pub fn count(&self) -> usize {
        self.values.iter().map(Tensor::numel).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(Tensor::is_finite)
    }

    pub fn cast<G: Real>(&self) -> DscaParams<G> {
        DscaParams { specs: self.specs.clone(), values: self.values.iter().map(Tensor::cast).collect() }
    }

    /// Confirms that names and shapes match what `cfg` expects.
    pub fn check_against(&self, cfg: &DscaConfig) -> Result<(), NetError> {
        let expected = param_specs(cfg);
        for spec in &expected {
            match self.position(&spec.name) {
                None => return Err(NetError::MissingParam(spec.name.clone())),
                Some(i) if self.values[i].shape() != spec.shape.as_slice() => {
                    return Err(NetError::ParamsShapeMismatch {
                        name: spec.name.clone(),
                        expected: spec.shape.clone(),
                        found: self.values[i].shape().to_vec(),
                    })
                }
                Some(_) => {}
            }
        }
        if let Some(extra) = self.names().find(|n| !expected.iter().any(|s| s.name == *n)) {
            return Err(NetError::ParamsShapeMismatch {
                name: extra.to_string(),
                expected: vec![],
                found: self.get(extra).map(|t| t.shape().to_vec()).unwrap_or_default(),
            });
        }
        Ok(())
    }

    /// Puts every tensor on `tape` as a trainable leaf (or constant).
    pub fn bind(&self, tape: &mut Tape<F>, trainable: bool) -> ParamVars {
        let vars = self
            .values
            .iter()
            .map(|v| if trainable { tape.param(v.clone()) } else { tape.constant(v.clone()) })
            .collect();
        ParamVars::new(self.specs.iter().map(|s| s.name.clone()).collect(), vars)
    }
}

impl DscaParams<f32> {
    /// Writes the self-describing `DSP1` file: magic, version, tensor count,
    /// then per tensor the name, rank, dims and little-endian `f32` data.
    pub fn save(&self, path: &Path) -> Result<(), NetError> {
        let mut buf = Vec::with_capacity(16 + 4 * self.count());
        buf.extend_from_slice(PARAMS_MAGIC);
        buf.extend_from_slice(&PARAMS_VERSION.to_le_bytes());
        buf.extend_from_slice(&(self.len() as u32).to_le_bytes());
        for (spec, value) in self.specs.iter().zip(&self.values) {
            buf.extend_from_slice(&(spec.name.len() as u32).to_le_bytes());
            buf.extend_from_slice(spec.name.as_bytes());
            buf.extend_from_slice(&(value.ndim() as u32).to_le_bytes());
            for &dim in value.shape() {
                buf.extend_from_slice(&(dim as u32).to_le_bytes());
            }
            for x in value.data() {
                buf.extend_from_slice(&x.to_le_bytes());
            }
        }
        write_atomic(path, &buf).map_err(|e| NetError::Io { path: path.to_path_buf(), source: e })
    }

    /// Reads a `DSP1` file. Initializers are not stored and come back as
    /// [`Init::Zeros`].
    pub fn load(path: &Path) -> Result<Self, NetError> {
        let bytes = fs::read(path).map_err(|e| NetError::Io { path: path.to_path_buf(), source: e })?;
        let bad = |msg: &str| NetError::BadParamsFile { path: path.to_path_buf(), msg: msg.to_string() };
        let mut r = Reader { bytes: &bytes, pos: 0 };
        if r.take(4).ok_or_else(|| bad("truncated header"))? != PARAMS_MAGIC {
            return Err(bad("bad magic"));
        }
        let version = r.u32().ok_or_else(|| bad("truncated header"))?;
        if version != PARAMS_VERSION {
            return Err(bad(&format!("unsupported version {version}")));
        }
        let count = r.u32().ok_or_else(|| bad("truncated header"))?;
        let mut params = DscaParams { specs: Vec::new(), values: Vec::new() };
        for _ in 0..count {
            let len = r.u32().ok_or_else(|| bad("truncated name"))? as usize;
            let name = r.take(len).ok_or_else(|| bad("truncated name"))?;
            let name = String::from_utf8(name.to_vec()).map_err(|_| bad("name is not utf-8"))?;
            let ndim = r.u32().ok_or_else(|| bad("truncated shape"))? as usize;
            let shape = (0..ndim)
                .map(|_| r.u32().map(|v| v as usize))
                .collect::<Option<Vec<_>>>()
                .ok_or_else(|| bad("truncated shape"))?;
            let n: usize = shape.iter().product();
            let raw = r.take(4 * n).ok_or_else(|| bad(&format!("truncated data for {name}")))?;
            let data = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
            params.specs.push(ParamSpec { name, shape: shape.clone(), init: Init::Zeros });
            params.values.push(Tensor::new(shape, data).map_err(|_| bad("shape/data mismatch"))?);
        }
        if r.pos != bytes.len() {
            return Err(bad("trailing bytes"));
        }
        Ok(params)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Option<&'a [u8]> {
        let out = self.bytes.get(self.pos..self.pos.checked_add(n)?)?;
        self.pos += n;
        Some(out)
    }

    fn u32(&mut self) -> Option<u32> {
        self.take(4).map(|b| u32::from_le_bytes(b.try_into().unwrap()))
    }
}

/// Tape handles of a bound parameter set, looked up by name.
#[derive(Clone, Debug)]
pub struct ParamVars {
    names: Vec<String>,
    vars: Vec<Var>,
}

impl ParamVars {
    pub fn new(names: Vec<String>, vars: Vec<Var>) -> Self {
        assert_eq!(names.len(), vars.len());
        Self { names, vars }
    }

    pub fn get(&self, name: &str) -> Result<Var, NetError> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|i| self.vars[i])
            .ok_or_else(|| NetError::MissingParam(name.to_string()))
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }
}
