//! Network configuration: schema, validation, the `Nc+Nd` / `N1,N2,s1,s2`
//! shorthand and the built-in presets A..I.
//!
//! A config document is TOML and takes one of three forms:
//!
//! ```toml
//! preset = "E"                 # a built-in preset, optionally with
//! precision = "f64"            # input_dim / precision / output_streams overrides
//! ```
//!
//! ```toml
//! input_dim = 754
//! [shorthand]
//! layers = "6+2"               # DFSMN layers + fully-connected layers
//! orders = "10,10,2,2"         # n_back, n_ahead, stride_back, stride_ahead
//! hidden = 2048                # optional, these are the defaults
//! proj = 512
//! ```
//!
//! ```toml
//! input_dim = 8
//! [[layers]]
//! kind = "dfsmn"
//! hidden = 8
//! proj = 4
//! n_back = 3
//! n_ahead = 3
//! stride_back = 2
//! stride_ahead = 2
//! skip = false
//! [[layers]]
//! kind = "fc"
//! hidden = 8
//! [[output_streams]]
//! name = "mcep"
//! dim = 60
//! activation = "linear"
//! ```
//!
//! `output_streams` defaults to mcep/60, lf0/3, bap/11 (linear) and uv/1
//! (sigmoid); `precision` defaults to `f32`; layer `activation` to `relu`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layers::{Activation, MemoryConfig};
use crate::tensor::Precision;

/// Linguistic feature dimension of the reference front end.
pub const LINGUISTIC_INPUT_DIM: usize = 754;
pub const DEFAULT_HIDDEN: usize = 2048;
pub const DEFAULT_PROJ: usize = 512;

pub const PRESET_NAMES: [&str; 9] = ["A", "B", "C", "D", "E", "F", "G", "H", "I"];

/// `(name, "Nc+Nd", "N1,N2,s1,s2")` for each built-in preset.
const PRESET_TABLE: [(&str, &str, &str); 9] = [
    ("A", "3+2", "1,1,1,1"),
    ("B", "3+2", "2,2,2,2"),
    ("C", "3+2", "5,5,2,2"),
    ("D", "3+2", "10,10,2,2"),
    ("E", "6+2", "10,10,2,2"),
    ("F", "10+2", "10,10,2,2"),
    ("G", "10+2", "20,20,2,2"),
    ("H", "10+2", "40,40,2,2"),
    ("I", "10+2", "80,80,2,2"),
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DfsmnSpec {
    pub hidden: usize,
    pub proj: usize,
    #[serde(default)]
    pub n_back: usize,
    #[serde(default)]
    pub n_ahead: usize,
    #[serde(default = "one")]
    pub stride_back: usize,
    #[serde(default = "one")]
    pub stride_ahead: usize,
    #[serde(default)]
    pub skip: bool,
    #[serde(default)]
    pub activation: Activation,
}

fn one() -> usize {
    1
}

impl DfsmnSpec {
    pub fn memory(&self) -> MemoryConfig {
        MemoryConfig {
            n_back: self.n_back,
            n_ahead: self.n_ahead,
            stride_back: self.stride_back,
            stride_ahead: self.stride_ahead,
            skip: self.skip,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FcSpec {
    pub hidden: usize,
    #[serde(default)]
    pub activation: Activation,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum LayerSpec {
    Dfsmn(DfsmnSpec),
    Fc(FcSpec),
}

impl LayerSpec {
    pub fn hidden(&self) -> usize {
        match self {
            LayerSpec::Dfsmn(s) => s.hidden,
            LayerSpec::Fc(s) => s.hidden,
        }
    }

    pub fn activation(&self) -> Activation {
        match self {
            LayerSpec::Dfsmn(s) => s.activation,
            LayerSpec::Fc(s) => s.activation,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StreamSpec {
    pub name: String,
    pub dim: usize,
    #[serde(default = "linear")]
    pub activation: Activation,
}

fn linear() -> Activation {
    Activation::Linear
}

impl StreamSpec {
    pub fn new(name: &str, dim: usize, activation: Activation) -> Self {
        Self {
            name: name.to_string(),
            dim,
            activation,
        }
    }
}

/// mcep 60, lf0 3, bap 11 (linear) and uv 1 (sigmoid).
pub fn default_streams() -> Vec<StreamSpec> {
    vec![
        StreamSpec::new("mcep", 60, Activation::Linear),
        StreamSpec::new("lf0", 3, Activation::Linear),
        StreamSpec::new("bap", 11, Activation::Linear),
        StreamSpec::new("uv", 1, Activation::Sigmoid),
    ]
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkConfig {
    pub input_dim: usize,
    #[serde(default)]
    pub precision: Precision,
    pub layers: Vec<LayerSpec>,
    pub output_streams: Vec<StreamSpec>,
}

/// Layer-count and order notation of the configuration grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Shorthand {
    pub dfsmn_layers: usize,
    pub fc_layers: usize,
    pub n_back: usize,
    pub n_ahead: usize,
    pub stride_back: usize,
    pub stride_ahead: usize,
}

impl Shorthand {
    /// Parse `"Nc+Nd"` and `"N1,N2,s1,s2"`.
    pub fn parse(layers: &str, orders: &str) -> Result<Self> {
        let (nc, nd) = layers
            .split_once('+')
            .ok_or_else(|| Error::config("shorthand.layers", format!("expected `Nc+Nd`, got `{layers}`")))?;
        let count = |s: &str| {
            s.trim()
                .parse::<usize>()
                .map_err(|_| Error::config("shorthand.layers", format!("`{s}` is not a layer count")))
        };
        let parts: Vec<&str> = orders.split(',').map(str::trim).collect();
        if parts.len() != 4 {
            return Err(Error::config(
                "shorthand.orders",
                format!("expected `N1,N2,s1,s2`, got `{orders}`"),
            ));
        }
        let mut nums = [0usize; 4];
        for (n, p) in nums.iter_mut().zip(&parts) {
            *n = p
                .parse()
                .map_err(|_| Error::config("shorthand.orders", format!("`{p}` is not a non-negative integer")))?;
        }
        Ok(Self {
            dfsmn_layers: count(nc)?,
            fc_layers: count(nd)?,
            n_back: nums[0],
            n_ahead: nums[1],
            stride_back: nums[2],
            stride_ahead: nums[3],
        })
    }

    /// DFSMN layers at the bottom, FC layers on top. Every DFSMN layer but
    /// the first carries a skip from the memory block below it.
    pub fn expand(&self, hidden: usize, proj: usize, fc_hidden: usize, activation: Activation) -> Vec<LayerSpec> {
        let mut layers = Vec::with_capacity(self.dfsmn_layers + self.fc_layers);
        for i in 0..self.dfsmn_layers {
            layers.push(LayerSpec::Dfsmn(DfsmnSpec {
                hidden,
                proj,
                n_back: self.n_back,
                n_ahead: self.n_ahead,
                stride_back: self.stride_back,
                stride_ahead: self.stride_ahead,
                skip: i > 0,
                activation,
            }));
        }
        for _ in 0..self.fc_layers {
            layers.push(LayerSpec::Fc(FcSpec {
                hidden: fc_hidden,
                activation,
            }));
        }
        layers
    }
}

impl NetworkConfig {
    /// One of the built-in presets A..I at full size.
    pub fn preset(name: &str) -> Result<Self> {
        let (_, layers, orders) = PRESET_TABLE
            .iter()
            .find(|(n, _, _)| n.eq_ignore_ascii_case(name))
            .ok_or_else(|| Error::UnknownPreset(name.to_string()))?;
        let sh = Shorthand::parse(layers, orders)?;
        Ok(Self {
            input_dim: LINGUISTIC_INPUT_DIM,
            precision: Precision::F32,
            layers: sh.expand(DEFAULT_HIDDEN, DEFAULT_PROJ, DEFAULT_HIDDEN, Activation::Relu),
            output_streams: default_streams(),
        })
    }

    /// The `("Nc+Nd", "N1,N2,s1,s2")` notation of a preset.
    pub fn preset_notation(name: &str) -> Option<(&'static str, &'static str)> {
        PRESET_TABLE
            .iter()
            .find(|(n, _, _)| n.eq_ignore_ascii_case(name))
            .map(|&(_, l, o)| (l, o))
    }

    pub fn with_precision(mut self, precision: Precision) -> Self {
        self.precision = precision;
        self
    }

    pub fn dfsmn_layers(&self) -> impl Iterator<Item = &DfsmnSpec> {
        self.layers.iter().filter_map(|l| match l {
            LayerSpec::Dfsmn(s) => Some(s),
            LayerSpec::Fc(_) => None,
        })
    }

    /// Width of the top hidden layer feeding the stream heads.
    pub fn top_dim(&self) -> usize {
        self.layers.last().map_or(self.input_dim, LayerSpec::hidden)
    }

    pub fn stream(&self, name: &str) -> Option<&StreamSpec> {
        self.output_streams.iter().find(|s| s.name == name)
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 {
            return Err(Error::config("input_dim", "must be >= 1"));
        }
        if self.layers.is_empty() {
            return Err(Error::config("layers", "at least one layer is required"));
        }
        let any_skip = self.dfsmn_layers().any(|s| s.skip);
        let mut shared_proj: Option<usize> = None;
        for (i, layer) in self.layers.iter().enumerate() {
            let loc = format!("layers[{i}]");
            if layer.hidden() == 0 {
                return Err(Error::config(format!("{loc}.hidden"), "must be >= 1"));
            }
            if let LayerSpec::Dfsmn(s) = layer {
                if s.proj == 0 {
                    return Err(Error::config(format!("{loc}.proj"), "must be >= 1"));
                }
                if s.stride_back == 0 || s.stride_ahead == 0 {
                    return Err(Error::config(format!("{loc}"), "strides must be >= 1"));
                }
                if any_skip {
                    match shared_proj {
                        Some(p) if p != s.proj => {
                            return Err(Error::config(
                                format!("{loc}.proj"),
                                format!("skip connections need equal projection sizes, found {} and {p}", s.proj),
                            ));
                        }
                        _ => shared_proj = Some(s.proj),
                    }
                }
                if s.skip && !matches!(i.checked_sub(1).map(|j| &self.layers[j]), Some(LayerSpec::Dfsmn(_))) {
                    return Err(Error::config(
                        format!("{loc}.skip"),
                        "a skip connection needs a DFSMN layer directly below",
                    ));
                }
            }
        }
        if self.output_streams.is_empty() {
            return Err(Error::config("output_streams", "at least one stream is required"));
        }
        for (i, s) in self.output_streams.iter().enumerate() {
            if s.dim == 0 {
                return Err(Error::config(format!("output_streams[{i}].dim"), "must be >= 1"));
            }
            if s.name.is_empty() || s.name.contains(|c: char| c.is_whitespace() || c == '/' || c == '.') {
                return Err(Error::config(
                    format!("output_streams[{i}].name"),
                    format!("`{}` is not a valid stream name", s.name),
                ));
            }
            if self.output_streams[..i].iter().any(|o| o.name == s.name) {
                return Err(Error::config(
                    format!("output_streams[{i}].name"),
                    format!("duplicate stream `{}`", s.name),
                ));
            }
        }
        Ok(())
    }

    /// Parse a config document (see module docs).
    pub fn parse(text: &str) -> Result<Self> {
        let raw: RawConfig = toml::from_str(text).map_err(|e| {
            let location = match e.span() {
                Some(span) => {
                    let (line, col) = line_col(text, span.start);
                    format!("line {line}, column {col}")
                }
                None => "document".to_string(),
            };
            Error::config(location, e.message().to_string())
        })?;
        let cfg = raw.into_config()?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Canonical document with every layer spelled out.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}

fn line_col(text: &str, offset: usize) -> (usize, usize) {
    let before = &text[..offset.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let col = before.len() - before.rfind('\n').map_or(0, |p| p + 1) + 1;
    (line, col)
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawShorthand {
    layers: String,
    orders: String,
    hidden: Option<usize>,
    proj: Option<usize>,
    fc_hidden: Option<usize>,
    activation: Option<Activation>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    preset: Option<String>,
    input_dim: Option<usize>,
    precision: Option<Precision>,
    shorthand: Option<RawShorthand>,
    layers: Option<Vec<LayerSpec>>,
    output_streams: Option<Vec<StreamSpec>>,
}

impl RawConfig {
    fn into_config(self) -> Result<NetworkConfig> {
        let sources = [self.preset.is_some(), self.shorthand.is_some(), self.layers.is_some()];
        match sources.iter().filter(|&&b| b).count() {
            0 => return Err(Error::config("document", "one of `preset`, `shorthand` or `layers` is required")),
            1 => {}
            _ => {
                return Err(Error::config(
                    "document",
                    "`preset`, `shorthand` and `layers` are mutually exclusive",
                ))
            }
        }
        let mut cfg = if let Some(name) = &self.preset {
            NetworkConfig::preset(name)?
        } else {
            let layers = if let Some(sh) = self.shorthand {
                let hidden = sh.hidden.unwrap_or(DEFAULT_HIDDEN);
                Shorthand::parse(&sh.layers, &sh.orders)?.expand(
                    hidden,
                    sh.proj.unwrap_or(DEFAULT_PROJ),
                    sh.fc_hidden.unwrap_or(hidden),
                    sh.activation.unwrap_or_default(),
                )
            } else {
                self.layers.unwrap_or_default()
            };
            NetworkConfig {
                input_dim: self.input_dim.unwrap_or(LINGUISTIC_INPUT_DIM),
                precision: Precision::F32,
                layers,
                output_streams: default_streams(),
            }
        };
        if let Some(d) = self.input_dim {
            cfg.input_dim = d;
        }
        if let Some(p) = self.precision {
            cfg.precision = p;
        }
        if let Some(s) = self.output_streams {
            cfg.output_streams = s;
        }
        Ok(cfg)
    }
}
