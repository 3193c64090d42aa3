use std::fmt;
use std::str::FromStr;

use super::NetError;

macro_rules! keyword_enum {
    ($(#[$meta:meta])* $name:ident { $($variant:ident => $text:literal),+ $(,)? }) => {
        $(#[$meta])*
        #[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
        pub enum $name {
            $($variant),+
        }

        impl $name {
            pub const ALL: &'static [$name] = &[$($name::$variant),+];

            pub fn as_str(self) -> &'static str {
                match self {
                    $($name::$variant => $text),+
                }
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.as_str())
            }
        }

        impl FromStr for $name {
            type Err = NetError;

            fn from_str(s: &str) -> Result<Self, Self::Err> {
                match s.trim() {
                    $($text => Ok($name::$variant),)+
                    other => Err(NetError::InvalidConfig(format!(
                        "unknown {} '{other}'",
                        stringify!($name).to_lowercase()
                    ))),
                }
            }
        }
    };
}

keyword_enum!(
    /// How the two stream outputs are merged.
    Fusion { Concat => "concat", Add => "add" }
);
keyword_enum!(
    /// Token embedding of the high-resolution stream.
    HighEmbed { Mlp => "mlp", Conv2d => "conv2d" }
);
keyword_enum!(
    /// Reduction of each `λ × λ` square to one token.
    Pool { CrossAttention => "cross_attention", Mean => "mean" }
);
keyword_enum!(Activation { Relu => "relu" });
keyword_enum!(
    /// Which streams are active.
    Streams { Low => "low", High => "high", Dual => "dual" }
);

impl Streams {
    pub fn has_low(self) -> bool {
        matches!(self, Streams::Low | Streams::Dual)
    }

    pub fn has_high(self) -> bool {
        matches!(self, Streams::High | Streams::Dual)
    }
}

/// Architecture hyperparameters.
#[derive(Clone, Debug, PartialEq)]
pub struct DscaConfig {
    pub d: usize,
    pub d_e: usize,
    pub lambda: usize,
    pub conv_k: usize,
    pub conv_s: usize,
    pub n_heads: usize,
    pub ffn_mult: usize,
    pub n_t: usize,
    pub fusion: Fusion,
    pub high_embed: HighEmbed,
    pub pool: Pool,
    pub use_pe: bool,
    pub activation: Activation,
    pub streams: Streams,
}

impl Default for DscaConfig {
    fn default() -> Self {
        Self {
            d: 1024,
            d_e: 384,
            lambda: 4,
            conv_k: 5,
            conv_s: 1,
            n_heads: 6,
            ffn_mult: 4,
            n_t: 4,
            fusion: Fusion::Concat,
            high_embed: HighEmbed::Mlp,
            pool: Pool::CrossAttention,
            use_pe: true,
            activation: Activation::Relu,
            streams: Streams::Dual,
        }
    }
}

impl DscaConfig {
    pub fn validate(&self) -> Result<(), NetError> {
        let bad = |msg: String| Err(NetError::InvalidConfig(msg));
        if self.d == 0 || self.d_e == 0 || self.ffn_mult == 0 {
            return bad("d, d_e and ffn_mult must be positive".into());
        }
        if self.d_e % 2 != 0 {
            return Err(NetError::OddEmbedDim(self.d_e));
        }
        if self.n_heads == 0 || self.d_e % self.n_heads != 0 {
            return bad(format!("d_e = {} is not divisible by n_heads = {}", self.d_e, self.n_heads));
        }
        if self.lambda == 0 {
            return bad("lambda must be >= 1".into());
        }
        if self.n_t == 0 {
            return bad("n_t must be >= 1".into());
        }
        if self.conv_k == 0 || self.conv_k % 2 == 0 {
            return bad(format!("conv_k must be odd, got {}", self.conv_k));
        }
        if self.conv_s == 0 {
            return bad("conv_s must be >= 1".into());
        }
        Ok(())
    }

    /// Pooling actually used; the high-only variant always mean-pools.
    pub fn effective_pool(&self) -> Pool {
        if self.streams == Streams::Dual {
            self.pool
        } else {
            Pool::Mean
        }
    }

    /// Width of the fused token features.
    pub fn d_o(&self) -> usize {
        match (self.streams, self.fusion) {
            (Streams::Dual, Fusion::Concat) => 2 * self.d_e,
            _ => self.d_e,
        }
    }

    pub fn d_head(&self) -> usize {
        self.d_e / self.n_heads
    }

    pub fn head_hidden(&self) -> usize {
        (self.d_o() / 4).max(1)
    }

    /// Number of fused tokens for a bag with `m` squares.
    pub fn fused_len(&self, m: usize) -> usize {
        if self.streams.has_low() {
            m.div_ceil(self.conv_s)
        } else {
            m
        }
    }

    /// Every combination of pool × fusion × streams × PE × high embedding
    /// on top of `self`.
    pub fn all_variants(&self) -> Vec<DscaConfig> {
        let mut out = Vec::new();
        for &pool in Pool::ALL {
            for &fusion in Fusion::ALL {
                for &streams in Streams::ALL {
                    for use_pe in [true, false] {
                        for &high_embed in HighEmbed::ALL {
                            out.push(DscaConfig { pool, fusion, streams, use_pe, high_embed, ..self.clone() });
                        }
                    }
                }
            }
        }
        out
    }

    /// Short `streams+pool+fusion+pe+embed` label.
    pub fn variant_label(&self) -> String {
        format!(
            "{}+{}+{}+{}+{}",
            self.streams,
            self.pool,
            self.fusion,
            if self.use_pe { "pe" } else { "nope" },
            self.high_embed
        )
    }

    /// Applies a `+`-separated variant label such as `dual+mean+add`. Each
    /// part may name a stream set, pooling, fusion, `pe`/`nope` or a high
    /// embedding; unspecified parts keep the current value.
    pub fn with_variant(&self, label: &str) -> Result<DscaConfig, NetError> {
        let mut cfg = self.clone();
        for part in label.split('+').map(str::trim).filter(|p| !p.is_empty()) {
            if let Ok(s) = part.parse() {
                cfg.streams = s;
            } else if let Ok(p) = part.parse() {
                cfg.pool = p;
            } else if let Ok(f) = part.parse() {
                cfg.fusion = f;
            } else if let Ok(h) = part.parse() {
                cfg.high_embed = h;
            } else if part == "pe" || part == "nope" {
                cfg.use_pe = part == "pe";
            } else {
                return Err(NetError::InvalidConfig(format!("unknown variant part '{part}' in '{label}'")));
            }
        }
        Ok(cfg)
    }
}
