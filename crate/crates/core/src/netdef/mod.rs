//! Network descriptions, weight files and the F32 to F16 weight converter.
//!
//! A network is a JSON document:
//!
//! ```json
//! {
//!   "name": "tiny",
//!   "version": 1,
//!   "layers": [
//!     { "name": "data", "kind": "input", "outputs": ["data"],
//!       "params": { "channels": 1, "height": 4, "width": 4 } },
//!     { "name": "relu", "kind": "relu", "inputs": ["data"], "outputs": ["relu"] }
//!   ]
//! }
//! ```
//!
//! Layers are listed in execution order. Every input blob must be produced
//! by an earlier layer, which makes the graph acyclic by construction. The
//! parameters each kind accepts are listed in the README.

mod convert;
mod weights;

pub use convert::{convert_weights, saturate_to_f16, ConversionReport};
pub use weights::{load_weights, save_weights, WeightFile, WeightFileError, WEIGHT_MAGIC, WEIGHT_VERSION};

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::layers::{
    AccumPolicy, BatchNormConfig, ConvConfig, EltwiseConfig, InnerProductConfig, LayerKind, PoolConfig, ScaleConfig,
    ShiftPolicy,
};

/// Current version of the network document schema.
pub const NETDEF_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum NetDefError {
    #[error("parse error at line {line}, column {column}: {message}")]
    Parse { line: usize, column: usize, message: String },
    #[error("layer `{layer}`: {message}")]
    Invalid { layer: String, message: String },
    #[error("layer `{layer}` consumes undefined blob `{blob}`")]
    UndefinedBlob { layer: String, blob: String },
    #[error("layer `{layer}` produces blob `{blob}` which already has a producer")]
    DuplicateBlob { layer: String, blob: String },
    #[error("network: {0}")]
    Network(String),
    #[error("unsupported netdef version {0}")]
    Version(u32),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl NetDefError {
    fn invalid(layer: &str, message: impl Into<String>) -> Self {
        NetDefError::Invalid { layer: layer.to_string(), message: message.into() }
    }
}

/// A scalar layer parameter. Integers and singles only.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ParamValue {
    Int(i64),
    Float(f32),
}

impl fmt::Display for ParamValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ParamValue::Int(i) => write!(f, "{i}"),
            ParamValue::Float(x) => write!(f, "{x}"),
        }
    }
}

impl From<i64> for ParamValue {
    fn from(v: i64) -> Self {
        ParamValue::Int(v)
    }
}

impl From<usize> for ParamValue {
    fn from(v: usize) -> Self {
        ParamValue::Int(v as i64)
    }
}

impl From<f32> for ParamValue {
    fn from(v: f32) -> Self {
        ParamValue::Float(v)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerSpec {
    pub name: String,
    pub kind: LayerKind,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub inputs: Vec<String>,
    pub outputs: Vec<String>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub params: BTreeMap<String, ParamValue>,
    #[serde(default, rename = "weights", skip_serializing_if = "Vec::is_empty")]
    pub weight_names: Vec<String>,
}

fn default_version() -> u32 {
    NETDEF_VERSION
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetDef {
    pub name: String,
    #[serde(default = "default_version")]
    pub version: u32,
    pub layers: Vec<LayerSpec>,
}

/// A layer's parameters after validation.
#[derive(Clone, Debug, PartialEq)]
pub enum LayerConfig {
    Input { channels: usize, height: usize, width: usize },
    Convolution(ConvConfig),
    Pooling(PoolConfig),
    ReLU { negative_slope: f32 },
    InnerProduct(InnerProductConfig),
    BatchNorm(BatchNormConfig),
    Scale(ScaleConfig),
    Eltwise(EltwiseConfig),
    Softmax { accum: AccumPolicy },
}

/// Reads typed parameters and tracks which keys were used.
struct Params<'a> {
    spec: &'a LayerSpec,
    used: HashSet<&'static str>,
}

impl<'a> Params<'a> {
    fn new(spec: &'a LayerSpec) -> Self {
        Params { spec, used: HashSet::new() }
    }

    fn raw(&mut self, key: &'static str) -> Option<ParamValue> {
        self.used.insert(key);
        self.spec.params.get(key).copied()
    }

    fn uint(&mut self, key: &'static str, default: Option<usize>) -> Result<usize, NetDefError> {
        match self.raw(key) {
            Some(ParamValue::Int(v)) if v >= 0 => Ok(v as usize),
            Some(other) => Err(NetDefError::invalid(
                &self.spec.name,
                format!("param `{key}` must be a non-negative integer, got {other}"),
            )),
            None => {
                default.ok_or_else(|| NetDefError::invalid(&self.spec.name, format!("missing required param `{key}`")))
            }
        }
    }

    fn positive(&mut self, key: &'static str, default: Option<usize>) -> Result<usize, NetDefError> {
        let v = self.uint(key, default)?;
        if v == 0 {
            return Err(NetDefError::invalid(&self.spec.name, format!("param `{key}` must be positive")));
        }
        Ok(v)
    }

    fn flag(&mut self, key: &'static str, default: bool) -> Result<bool, NetDefError> {
        match self.uint(key, Some(default as usize))? {
            0 => Ok(false),
            1 => Ok(true),
            v => Err(NetDefError::invalid(&self.spec.name, format!("param `{key}` must be 0 or 1, got {v}"))),
        }
    }

    fn float(&mut self, key: &'static str, default: f32) -> Result<f32, NetDefError> {
        let v = match self.raw(key) {
            Some(ParamValue::Float(x)) => x,
            Some(ParamValue::Int(i)) => i as f32,
            None => default,
        };
        if !v.is_finite() {
            return Err(NetDefError::invalid(&self.spec.name, format!("param `{key}` must be finite")));
        }
        Ok(v)
    }

    fn accum(&mut self) -> Result<AccumPolicy, NetDefError> {
        Ok(AccumPolicy::from_block(self.uint("accum_block", Some(AccumPolicy::default().block()))?))
    }

    /// Rejects keys that no reader asked for.
    fn finish(self, extra: impl Fn(&str) -> bool) -> Result<(), NetDefError> {
        for key in self.spec.params.keys() {
            if !self.used.contains(key.as_str()) && !extra(key) {
                return Err(NetDefError::invalid(
                    &self.spec.name,
                    format!("unknown param `{key}` for kind {:?}", self.spec.kind),
                ));
            }
        }
        Ok(())
    }
}

impl LayerSpec {
    pub fn new(name: impl Into<String>, kind: LayerKind) -> Self {
        LayerSpec {
            name: name.into(),
            kind,
            inputs: Vec::new(),
            outputs: Vec::new(),
            params: BTreeMap::new(),
            weight_names: Vec::new(),
        }
    }

    pub fn input(mut self, blob: impl Into<String>) -> Self {
        self.inputs.push(blob.into());
        self
    }

    pub fn output(mut self, blob: impl Into<String>) -> Self {
        self.outputs.push(blob.into());
        self
    }

    pub fn param(mut self, key: impl Into<String>, value: impl Into<ParamValue>) -> Self {
        self.params.insert(key.into(), value.into());
        self
    }

    pub fn weight(mut self, name: impl Into<String>) -> Self {
        self.weight_names.push(name.into());
        self
    }

    /// Typed parameters, checking required keys, ranges and unknown keys.
    pub fn config(&self) -> Result<LayerConfig, NetDefError> {
        let mut p = Params::new(self);
        let config = match self.kind {
            LayerKind::Input => LayerConfig::Input {
                channels: p.positive("channels", None)?,
                height: p.positive("height", None)?,
                width: p.positive("width", None)?,
            },
            LayerKind::Convolution => LayerConfig::Convolution(ConvConfig {
                num_output: p.positive("num_output", None)?,
                kernel: p.positive("kernel_size", None)?,
                stride: p.positive("stride", Some(1))?,
                pad: p.uint("pad", Some(0))?,
                bias: p.flag("bias_term", true)?,
                accum: p.accum()?,
            }),
            LayerKind::Pooling(mode) => {
                let kernel = p.positive("kernel_size", None)?;
                LayerConfig::Pooling(PoolConfig {
                    mode,
                    kernel,
                    stride: p.positive("stride", Some(kernel))?,
                    pad: p.uint("pad", Some(0))?,
                    accum: p.accum()?,
                })
            }
            LayerKind::ReLU => LayerConfig::ReLU { negative_slope: p.float("negative_slope", 0.0)? },
            LayerKind::InnerProduct => LayerConfig::InnerProduct(InnerProductConfig {
                num_output: p.positive("num_output", None)?,
                bias: p.flag("bias_term", true)?,
                accum: p.accum()?,
            }),
            LayerKind::BatchNorm => {
                let defaults = BatchNormConfig::default();
                let shift = p.float("shift", 0.0)?;
                LayerConfig::BatchNorm(BatchNormConfig {
                    group_count: p.positive("group_count", Some(defaults.group_count))?,
                    shift: if shift == 0.0 { ShiftPolicy::Auto } else { ShiftPolicy::Fixed(shift) },
                    epsilon: p.float("eps", defaults.epsilon)?,
                    use_global_stats: p.flag("use_global_stats", false)?,
                })
            }
            LayerKind::Scale => LayerConfig::Scale(ScaleConfig { bias: p.flag("bias_term", true)? }),
            LayerKind::Eltwise => {
                let mut coeffs = Vec::new();
                for i in 0..self.inputs.len() {
                    let key = format!("coeff_{i}");
                    coeffs.push(match self.params.get(&key) {
                        Some(ParamValue::Float(x)) if x.is_finite() => *x,
                        Some(ParamValue::Int(v)) => *v as f32,
                        Some(_) => {
                            return Err(NetDefError::invalid(&self.name, format!("param `{key}` must be finite")))
                        }
                        None => 1.0,
                    });
                }
                if coeffs.iter().all(|&c| c == 1.0) {
                    coeffs.clear();
                }
                let n = self.inputs.len();
                p.finish(|key| {
                    key.strip_prefix("coeff_").and_then(|i| i.parse::<usize>().ok()).is_some_and(|i| i < n)
                })?;
                return self.check_shape(LayerConfig::Eltwise(EltwiseConfig { coeffs }));
            }
            LayerKind::Softmax => LayerConfig::Softmax { accum: p.accum()? },
        };
        p.finish(|_| false)?;
        self.check_shape(config)
    }

    /// Arity and weight-count checks for a parsed config.
    fn check_shape(&self, config: LayerConfig) -> Result<LayerConfig, NetDefError> {
        let inputs = match self.kind {
            LayerKind::Input => 0..=0,
            LayerKind::Eltwise => 2..=usize::MAX,
            _ => 1..=1,
        };
        if !inputs.contains(&self.inputs.len()) {
            return Err(NetDefError::invalid(
                &self.name,
                format!("{:?} takes {:?} inputs, got {}", self.kind, inputs, self.inputs.len()),
            ));
        }
        if self.outputs.len() != 1 {
            return Err(NetDefError::invalid(&self.name, format!("expected one output, got {}", self.outputs.len())));
        }
        let weights = match &config {
            LayerConfig::Convolution(c) => 1 + usize::from(c.bias),
            LayerConfig::InnerProduct(c) => 1 + usize::from(c.bias),
            LayerConfig::BatchNorm(c) => 2 * usize::from(c.use_global_stats),
            LayerConfig::Scale(c) => 1 + usize::from(c.bias),
            _ => 0,
        };
        if self.weight_names.len() != weights {
            return Err(NetDefError::invalid(
                &self.name,
                format!("expected {weights} weight blobs, got {}", self.weight_names.len()),
            ));
        }
        Ok(config)
    }
}

impl NetDef {
    pub fn new(name: impl Into<String>, layers: Vec<LayerSpec>) -> Self {
        NetDef { name: name.into(), version: NETDEF_VERSION, layers }
    }

    /// Structural validation: versions, unique names, producers before
    /// consumers, parameter completeness, exactly one input layer.
    pub fn validate(&self) -> Result<(), NetDefError> {
        if self.version != NETDEF_VERSION {
            return Err(NetDefError::Version(self.version));
        }
        if self.layers.is_empty() {
            return Err(NetDefError::Network("no layers".into()));
        }
        let mut layer_names = HashSet::new();
        let mut produced: HashSet<&str> = HashSet::new();
        let mut inputs = 0;
        for layer in &self.layers {
            if !layer_names.insert(layer.name.as_str()) {
                return Err(NetDefError::invalid(&layer.name, "duplicate layer name"));
            }
            layer.config()?;
            if layer.kind == LayerKind::Input {
                inputs += 1;
            }
            for blob in &layer.inputs {
                if !produced.contains(blob.as_str()) {
                    return Err(NetDefError::UndefinedBlob { layer: layer.name.clone(), blob: blob.clone() });
                }
            }
            for blob in &layer.outputs {
                if !produced.insert(blob.as_str()) {
                    return Err(NetDefError::DuplicateBlob { layer: layer.name.clone(), blob: blob.clone() });
                }
            }
        }
        if inputs != 1 {
            return Err(NetDefError::Network(format!("expected exactly one input layer, found {inputs}")));
        }
        Ok(())
    }

    /// Pretty-printed document. Parsing it back yields an equal `NetDef`.
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("netdef is always serializable")
    }

    pub fn load(path: impl AsRef<Path>) -> Result<NetDef, NetDefError> {
        parse_netdef(&std::fs::read_to_string(path)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), NetDefError> {
        let mut text = self.to_json();
        text.push('\n');
        std::fs::write(path, text)?;
        Ok(())
    }

    /// Output blob of the last layer.
    pub fn output_blob(&self) -> Option<&str> {
        self.layers.last().and_then(|l| l.outputs.first()).map(String::as_str)
    }
}

/// Parses and validates a network document.
pub fn parse_netdef(text: &str) -> Result<NetDef, NetDefError> {
    let net: NetDef = serde_json::from_str(text).map_err(|e| NetDefError::Parse {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;
    net.validate()?;
    Ok(net)
}
