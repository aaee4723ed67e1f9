//! The operations behind the `halfnet` command line: model generation,
//! weight conversion, single runs and the benchmark sweep.

mod bench;
mod models;
mod run;

pub use bench::{
    format_table, read_records, records_to_string, sweep, weights_path_for, BenchGrid, BenchRecord, CellStatus,
    RecordsHeader, DEFAULT_BATCHES, RECORDS_FORMAT, RECORDS_VERSION,
};
pub use models::{alexnet_mini, lenet, random_weights, resnet20_mini, Arch};
pub use run::{load_input, run_net, summarize, InputSource, OutputSummary, RunReport};

use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::engine::EngineError;
use crate::netdef::{convert_weights, ConversionReport, NetDefError, WeightFile, WeightFileError};

/// Seed used when none is given.
pub const DEFAULT_SEED: u64 = 42;

#[derive(Debug, Error)]
pub enum ToolError {
    #[error("{path}: {source}")]
    NetDef { path: PathBuf, source: NetDefError },
    #[error("{path}: {source}")]
    Weights { path: PathBuf, source: WeightFileError },
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error("{0}")]
    Input(String),
    #[error("invalid benchmark grid: {0}")]
    Grid(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("records file: {0}")]
    Records(String),
}

impl ToolError {
    pub(crate) fn weights(path: &Path, source: WeightFileError) -> Self {
        ToolError::Weights { path: path.to_path_buf(), source }
    }

    pub(crate) fn netdef(path: &Path, source: NetDefError) -> Self {
        ToolError::NetDef { path: path.to_path_buf(), source }
    }
}

/// Writes `<prefix>.json` and `<prefix>.hgwt` for `arch`. Returns both paths.
pub fn generate(arch: Arch, prefix: &Path, seed: u64) -> Result<(PathBuf, PathBuf), ToolError> {
    let net = arch.netdef();
    let net_path = prefix.with_extension("json");
    let weights_path = prefix.with_extension("hgwt");
    let weights = random_weights(&net, seed)?;
    net.save(&net_path).map_err(|e| ToolError::netdef(&net_path, e))?;
    weights.save(&weights_path).map_err(|e| ToolError::weights(&weights_path, e))?;
    Ok((net_path, weights_path))
}

/// Converts an F32 weight file on disk to F16.
pub fn convert_file(input: &Path, output: &Path) -> Result<ConversionReport, ToolError> {
    let src = WeightFile::load(input).map_err(|e| ToolError::weights(input, e))?;
    let (converted, report) = convert_weights(&src).map_err(|e| ToolError::weights(input, e))?;
    converted.save(output).map_err(|e| ToolError::weights(output, e))?;
    Ok(report)
}
