//! Reference architectures, scaled to run a full benchmark sweep on one
//! desktop core.
//!
//! | arch            | input     | body                                              | MACs/item |
//! |-----------------|-----------|---------------------------------------------------|-----------|
//! | `lenet`         | 1x28x28   | conv8 k5, max2, conv16 k5, max2, ip64, relu, ip10 | ~0.34M    |
//! | `alexnet-mini`  | 3x32x32   | conv16 k5 s2, relu, max2, conv32 k3, relu, ip128 over 2048 inputs, relu, ip10 | ~0.87M |
//! | `resnet20-mini` | 3x32x32   | stem conv4 s2, 3 stages x 3 basic blocks (4/8/16 channels), global avg, ip10 | ~0.65M |
//!
//! Every network ends in a softmax. ResNet convolutions are followed by
//! batch-statistics BatchNorm and a Scale; blocks join through an Eltwise
//! sum, with 1x1 stride-2 projections where the width changes.

use std::fmt;
use std::str::FromStr;

use crate::engine::{plan, EngineError};
use crate::layers::{LayerKind, PoolMode};
use crate::netdef::{LayerSpec, NetDef, WeightFile};
use crate::tensor::{Dtype, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Arch {
    Lenet,
    AlexnetMini,
    Resnet20Mini,
}

impl Arch {
    pub const ALL: [Arch; 3] = [Arch::Lenet, Arch::AlexnetMini, Arch::Resnet20Mini];

    pub fn name(self) -> &'static str {
        match self {
            Arch::Lenet => "lenet",
            Arch::AlexnetMini => "alexnet-mini",
            Arch::Resnet20Mini => "resnet20-mini",
        }
    }

    pub fn netdef(self) -> NetDef {
        match self {
            Arch::Lenet => lenet(),
            Arch::AlexnetMini => alexnet_mini(),
            Arch::Resnet20Mini => resnet20_mini(),
        }
    }
}

impl fmt::Display for Arch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Arch {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Arch::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| format!("unknown arch `{s}` (expected lenet, alexnet-mini or resnet20-mini)"))
    }
}

/// Appends layers to a network, tracking the most recent blob.
struct Builder {
    layers: Vec<LayerSpec>,
    top: String,
}

impl Builder {
    fn new(channels: usize, height: usize, width: usize) -> Self {
        let data = LayerSpec::new("data", LayerKind::Input)
            .output("data")
            .param("channels", channels)
            .param("height", height)
            .param("width", width);
        Builder { layers: vec![data], top: "data".into() }
    }

    fn push(&mut self, spec: LayerSpec) -> String {
        self.top = spec.outputs[0].clone();
        self.layers.push(spec);
        self.top.clone()
    }

    #[allow(clippy::too_many_arguments)]
    fn conv(
        &mut self,
        name: &str,
        from: &str,
        num_output: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
        bias: bool,
    ) -> String {
        let mut spec = LayerSpec::new(name, LayerKind::Convolution)
            .input(from)
            .output(name)
            .param("num_output", num_output)
            .param("kernel_size", kernel)
            .weight(format!("{name}.w"));
        if stride != 1 {
            spec = spec.param("stride", stride);
        }
        if pad != 0 {
            spec = spec.param("pad", pad);
        }
        spec = if bias { spec.weight(format!("{name}.b")) } else { spec.param("bias_term", 0usize) };
        self.push(spec)
    }

    fn pool(&mut self, name: &str, mode: PoolMode, kernel: usize, stride: usize) -> String {
        let from = self.top.clone();
        self.push(
            LayerSpec::new(name, LayerKind::Pooling(mode))
                .input(from)
                .output(name)
                .param("kernel_size", kernel)
                .param("stride", stride),
        )
    }

    fn relu(&mut self, name: &str) -> String {
        let from = self.top.clone();
        self.push(LayerSpec::new(name, LayerKind::ReLU).input(from).output(name))
    }

    fn ip(&mut self, name: &str, num_output: usize) -> String {
        let from = self.top.clone();
        self.push(
            LayerSpec::new(name, LayerKind::InnerProduct)
                .input(from)
                .output(name)
                .param("num_output", num_output)
                .weight(format!("{name}.w"))
                .weight(format!("{name}.b")),
        )
    }

    /// BatchNorm then Scale.
    fn bn_scale(&mut self, name: &str) -> String {
        let from = self.top.clone();
        let bn = format!("{name}_bn");
        self.push(LayerSpec::new(&bn, LayerKind::BatchNorm).input(from).output(&bn).param("group_count", 16usize));
        let sc = format!("{name}_scale");
        self.push(
            LayerSpec::new(&sc, LayerKind::Scale)
                .input(bn)
                .output(&sc)
                .weight(format!("{sc}.gamma"))
                .weight(format!("{sc}.beta")),
        )
    }

    fn finish(mut self, name: &str) -> NetDef {
        let from = self.top.clone();
        self.push(LayerSpec::new("prob", LayerKind::Softmax).input(from).output("prob"));
        NetDef::new(name, self.layers)
    }
}

pub fn lenet() -> NetDef {
    let mut b = Builder::new(1, 28, 28);
    b.conv("conv1", "data", 8, 5, 1, 0, true);
    b.pool("pool1", PoolMode::Max, 2, 2);
    let top = b.top.clone();
    b.conv("conv2", &top, 16, 5, 1, 0, true);
    b.pool("pool2", PoolMode::Max, 2, 2);
    b.ip("ip1", 64);
    b.relu("relu1");
    b.ip("ip2", 10);
    b.finish("lenet")
}

pub fn alexnet_mini() -> NetDef {
    let mut b = Builder::new(3, 32, 32);
    b.conv("conv1", "data", 16, 5, 2, 2, true);
    b.relu("relu1");
    b.pool("pool1", PoolMode::Max, 2, 2);
    let top = b.top.clone();
    b.conv("conv2", &top, 32, 3, 1, 1, true);
    b.relu("relu2");
    b.ip("fc1", 128);
    b.relu("relu3");
    b.ip("fc2", 10);
    b.finish("alexnet-mini")
}

pub fn resnet20_mini() -> NetDef {
    let mut b = Builder::new(3, 32, 32);
    b.conv("stem", "data", 4, 3, 2, 1, false);
    b.bn_scale("stem");
    let mut x = b.relu("stem_relu");
    for (stage, width) in [4usize, 8, 16].into_iter().enumerate() {
        for block in 0..3 {
            let prefix = format!("s{}b{}", stage + 1, block + 1);
            let downsample = stage > 0 && block == 0;
            let stride = if downsample { 2 } else { 1 };

            b.conv(&format!("{prefix}_a"), &x, width, 3, stride, 1, false);
            b.bn_scale(&format!("{prefix}_a"));
            let a = b.relu(&format!("{prefix}_a_relu"));
            b.conv(&format!("{prefix}_b"), &a, width, 3, 1, 1, false);
            let residual = b.bn_scale(&format!("{prefix}_b"));

            let shortcut = if downsample {
                b.conv(&format!("{prefix}_proj"), &x, width, 1, 2, 0, false);
                b.bn_scale(&format!("{prefix}_proj"))
            } else {
                x.clone()
            };
            let sum = format!("{prefix}_sum");
            b.push(LayerSpec::new(&sum, LayerKind::Eltwise).input(residual).input(shortcut).output(&sum));
            x = b.relu(&format!("{prefix}_relu"));
        }
    }
    b.pool("global_pool", PoolMode::Avg, 4, 1);
    b.ip("fc", 10);
    b.finish("resnet20-mini")
}

/// Deterministic F32 weights for every parameter blob of `net`.
///
/// Each blob draws from its own stream, seeded from `seed` and the blob's
/// position. Convolution and inner-product weights are uniform in
/// `±sqrt(6 / fan_in)` capped at 1; biases and Scale offsets in `±0.1`;
/// Scale multipliers in `[0.5, 1)`; global BatchNorm means in `±0.1` and
/// variances in `[0.5, 1)`. Everything lies in `[-1, 1]`.
pub fn random_weights(net: &NetDef, seed: u64) -> Result<WeightFile, EngineError> {
    let plan = plan(net, 1, Dtype::F32)?;
    let mut blobs = std::collections::BTreeMap::new();
    for step in &plan.steps {
        let fan_in = step.inputs.first().map(|&b| plan.blobs[b].shape.item_len()).unwrap_or(1);
        for (k, &p) in step.params.iter().enumerate() {
            let param = &plan.params[p];
            if blobs.contains_key(&param.name) {
                continue;
            }
            let (lo, hi) = match (step.kind, k) {
                (LayerKind::Convolution, 0) => {
                    let s = param.shape;
                    bound(s.c * s.h * s.w)
                }
                (LayerKind::InnerProduct, 0) => bound(fan_in),
                (LayerKind::Scale, 0) | (LayerKind::BatchNorm, 1) => (0.5, 1.0),
                _ => (-0.1, 0.1),
            };
            let blob_seed = seed.wrapping_add((p as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
            let t = Tensor::random(param.shape, Dtype::F32, blob_seed, lo, hi)
                .map_err(|source| EngineError::Tensor { layer: step.name.clone(), source })?;
            blobs.insert(param.name.clone(), t);
        }
    }
    Ok(WeightFile::new(Dtype::F32, blobs).expect("all blobs are f32"))
}

fn bound(fan_in: usize) -> (f32, f32) {
    let a = (6.0 / fan_in as f32).sqrt().min(1.0);
    (-a, a)
}
