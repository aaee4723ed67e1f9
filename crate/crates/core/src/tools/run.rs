use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::Serialize;

use super::ToolError;
use crate::engine::{forward, plan};
use crate::netdef::{NetDef, WeightFile};
use crate::tensor::{Dtype, Shape, Tensor};

/// Where a run's input comes from.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum InputSource {
    /// Uniform values in `[0, 1)` from the given seed.
    Random(u64),
    /// A weight-format file holding exactly one blob.
    File(PathBuf),
}

impl FromStr for InputSource {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.strip_prefix("random:") {
            Some(seed) => seed.parse().map(InputSource::Random).map_err(|_| format!("bad seed in `{s}`")),
            None if s.is_empty() => Err("empty input source".into()),
            None => Ok(InputSource::File(PathBuf::from(s))),
        }
    }
}

impl fmt::Display for InputSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            InputSource::Random(seed) => write!(f, "random:{seed}"),
            InputSource::File(p) => write!(f, "{}", p.display()),
        }
    }
}

/// Produces an input of `shape`. Random inputs are drawn directly in
/// `dtype`; file inputs keep the file's dtype.
pub fn load_input(source: &InputSource, shape: Shape, dtype: Dtype) -> Result<Tensor, ToolError> {
    match source {
        InputSource::Random(seed) => {
            Tensor::random(shape, dtype, *seed, 0.0, 1.0).map_err(|e| ToolError::Input(e.to_string()))
        }
        InputSource::File(path) => {
            let file = WeightFile::load(path).map_err(|e| ToolError::weights(path, e))?;
            let mut blobs = file.into_blobs().into_values();
            match (blobs.next(), blobs.next()) {
                (Some(t), None) if t.shape() == shape => Ok(t),
                (Some(t), None) => Err(ToolError::Input(format!(
                    "{}: input has shape {}, network expects {shape}",
                    path.display(),
                    t.shape()
                ))),
                _ => Err(ToolError::Input(format!("{}: input file must hold exactly one blob", path.display()))),
            }
        }
    }
}

/// Statistics of an output tensor.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct OutputSummary {
    pub shape: Shape,
    pub dtype: Dtype,
    pub min: f64,
    pub max: f64,
    pub mean: f64,
    pub non_finite: usize,
    /// Index of the largest element of each batch item, first on ties.
    pub argmax: Vec<usize>,
}

pub fn summarize(t: &Tensor) -> OutputSummary {
    let values = t.to_f32_vec();
    let finite = values.iter().filter(|x| x.is_finite()).map(|&x| x as f64);
    let (mut min, mut max, mut sum, mut count) = (f64::INFINITY, f64::NEG_INFINITY, 0.0, 0usize);
    for x in finite {
        min = min.min(x);
        max = max.max(x);
        sum += x;
        count += 1;
    }
    let argmax = values
        .chunks(t.shape().item_len())
        .map(|item| {
            item.iter()
                .enumerate()
                .fold(0, |best, (i, &x)| if x > item[best] || item[best].is_nan() { i } else { best })
        })
        .collect();
    OutputSummary {
        shape: t.shape(),
        dtype: t.dtype(),
        min,
        max,
        mean: if count == 0 { f64::NAN } else { sum / count as f64 },
        non_finite: values.len() - count,
        argmax,
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct RunReport {
    pub net: String,
    pub batch: usize,
    pub summary: OutputSummary,
    pub peak_bytes: usize,
    pub conversion_count: u64,
}

impl fmt::Display for RunReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = &self.summary;
        writeln!(f, "net:         {}", self.net)?;
        writeln!(f, "dtype:       {}", s.dtype)?;
        writeln!(f, "shape:       {}", s.shape)?;
        writeln!(f, "min:         {:.6e}", s.min)?;
        writeln!(f, "max:         {:.6e}", s.max)?;
        writeln!(f, "mean:        {:.6e}", s.mean)?;
        if s.non_finite > 0 {
            writeln!(f, "non-finite:  {}", s.non_finite)?;
        }
        writeln!(f, "peak bytes:  {}", self.peak_bytes)?;
        writeln!(f, "conversions: {}", self.conversion_count)?;
        let argmax: Vec<String> = s.argmax.iter().map(usize::to_string).collect();
        write!(f, "argmax:      {}", argmax.join(" "))
    }
}

/// Loads a network and weights, runs one forward pass and summarizes it.
pub fn run_net(
    net_path: &Path,
    weights_path: &Path,
    dtype: Dtype,
    batch: usize,
    input: &InputSource,
) -> Result<RunReport, ToolError> {
    let net = NetDef::load(net_path).map_err(|e| ToolError::netdef(net_path, e))?;
    let weights = WeightFile::load(weights_path).map_err(|e| ToolError::weights(weights_path, e))?;
    let plan = plan(&net, batch, dtype)?;
    let input = load_input(input, plan.input_shape(), dtype)?;
    let out = forward(&plan, weights.blobs(), &input)?;
    Ok(RunReport {
        net: net.name,
        batch,
        summary: summarize(&out.output),
        peak_bytes: out.meter.peak_bytes(),
        conversion_count: out.meter.conversion_count(),
    })
}
