//! Benchmark sweep over networks, dtypes and batch sizes.
//!
//! The records file is JSON lines. The first line is a header:
//!
//! ```text
//! {"format":"halfnet-bench-records","version":1,"fields":["net","dtype",...]}
//! ```
//!
//! Every following line is one cell with fields in this fixed order:
//! `net`, `dtype`, `batch`, `status` (`ok` or `failed`), `median_seconds`,
//! `peak_bytes`, `conversion_count`, `error`. Measurement fields are null
//! for failed cells and `error` is null for successful ones.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{load_input, InputSource, ToolError, DEFAULT_SEED};
use crate::engine::{measure, plan};
use crate::netdef::{convert_weights, NetDef, WeightFile};
use crate::tensor::{Dtype, Tensor};

pub const RECORDS_FORMAT: &str = "halfnet-bench-records";
pub const RECORDS_VERSION: u32 = 1;
pub const DEFAULT_BATCHES: [usize; 3] = [1, 64, 512];
const FIELDS: [&str; 8] =
    ["net", "dtype", "batch", "status", "median_seconds", "peak_bytes", "conversion_count", "error"];

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BenchGrid {
    pub nets: Vec<PathBuf>,
    pub dtypes: Vec<Dtype>,
    pub batches: Vec<usize>,
    pub iters: usize,
    pub warmup: usize,
    pub seed: u64,
}

impl BenchGrid {
    /// Both dtypes, the default batches, 3 timed runs after 1 warmup.
    pub fn new(nets: Vec<PathBuf>) -> Self {
        BenchGrid {
            nets,
            dtypes: vec![Dtype::F32, Dtype::F16],
            batches: DEFAULT_BATCHES.to_vec(),
            iters: 3,
            warmup: 1,
            seed: DEFAULT_SEED,
        }
    }

    pub fn validate(&self) -> Result<(), ToolError> {
        if self.nets.is_empty() || self.dtypes.is_empty() || self.batches.is_empty() {
            return Err(ToolError::Grid("nets, dtypes and batches must be non-empty".into()));
        }
        if self.batches.contains(&0) {
            return Err(ToolError::Grid("batch sizes must be positive".into()));
        }
        if !self.batches.windows(2).all(|w| w[0] < w[1]) {
            return Err(ToolError::Grid("batch sizes must be strictly ascending".into()));
        }
        if self.iters == 0 {
            return Err(ToolError::Grid("iters must be positive".into()));
        }
        Ok(())
    }

    pub fn cell_count(&self) -> usize {
        self.nets.len() * self.dtypes.len() * self.batches.len()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CellStatus {
    Ok,
    Failed,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchRecord {
    pub net: String,
    pub dtype: Dtype,
    pub batch: usize,
    pub status: CellStatus,
    pub median_seconds: Option<f64>,
    pub peak_bytes: Option<usize>,
    pub conversion_count: Option<u64>,
    pub error: Option<String>,
}

impl BenchRecord {
    fn failed(net: &str, dtype: Dtype, batch: usize, error: String) -> Self {
        BenchRecord {
            net: net.to_string(),
            dtype,
            batch,
            status: CellStatus::Failed,
            median_seconds: None,
            peak_bytes: None,
            conversion_count: None,
            error: Some(error),
        }
    }

    pub fn is_ok(&self) -> bool {
        self.status == CellStatus::Ok
    }

    /// Median time divided by batch size.
    pub fn per_item_seconds(&self) -> Option<f64> {
        self.median_seconds.map(|s| s / self.batch as f64)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RecordsHeader {
    pub format: String,
    pub version: u32,
    pub fields: Vec<String>,
}

/// Weight file next to a network description: `x.json` pairs with `x.hgwt`.
pub fn weights_path_for(net: &Path) -> PathBuf {
    net.with_extension("hgwt")
}

/// Loads the network and its weights in both dtypes. F16 weights come from
/// the converter, so no cell pays for conversion inside the engine.
fn load_artifacts(path: &Path) -> Result<(NetDef, BTreeMap<Dtype, WeightFile>), ToolError> {
    let net = NetDef::load(path).map_err(|e| ToolError::netdef(path, e))?;
    let wpath = weights_path_for(path);
    let f32_weights = WeightFile::load(&wpath).map_err(|e| ToolError::weights(&wpath, e))?;
    let mut weights = BTreeMap::new();
    match f32_weights.dtype() {
        Dtype::F32 => {
            let (half, _) = convert_weights(&f32_weights).map_err(|e| ToolError::weights(&wpath, e))?;
            weights.insert(Dtype::F16, half);
            weights.insert(Dtype::F32, f32_weights);
        }
        Dtype::F16 => {
            weights.insert(Dtype::F16, f32_weights);
        }
    }
    Ok((net, weights))
}

fn run_cell(
    net: &NetDef,
    weights: Option<&WeightFile>,
    dtype: Dtype,
    batch: usize,
    grid: &BenchGrid,
) -> Result<BenchRecord, String> {
    let weights = weights.ok_or_else(|| format!("no {dtype} weights available"))?;
    let plan = plan(net, batch, dtype).map_err(|e| e.to_string())?;
    let input: Tensor =
        load_input(&InputSource::Random(grid.seed), plan.input_shape(), dtype).map_err(|e| e.to_string())?;
    let m = measure(&plan, weights.blobs(), &input, grid.iters, grid.warmup).map_err(|e| e.to_string())?;
    Ok(BenchRecord {
        net: net.name.clone(),
        dtype,
        batch,
        status: CellStatus::Ok,
        median_seconds: Some(m.median_seconds),
        peak_bytes: Some(m.peak_bytes),
        conversion_count: Some(m.conversion_count),
        error: None,
    })
}

/// Runs every cell in net, dtype, batch order. A cell that errors or
/// panics becomes a failed record and the sweep moves on. `on_record` sees
/// each record as soon as it exists.
pub fn sweep(grid: &BenchGrid, mut on_record: impl FnMut(&BenchRecord)) -> Result<Vec<BenchRecord>, ToolError> {
    grid.validate()?;
    let mut records = Vec::with_capacity(grid.cell_count());
    for path in &grid.nets {
        let artifacts = load_artifacts(path);
        let net_name = match &artifacts {
            Ok((net, _)) => net.name.clone(),
            Err(_) => path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default(),
        };
        for &dtype in &grid.dtypes {
            for &batch in &grid.batches {
                let record = match &artifacts {
                    Err(e) => BenchRecord::failed(&net_name, dtype, batch, e.to_string()),
                    Ok((net, weights)) => {
                        let outcome =
                            catch_unwind(AssertUnwindSafe(|| run_cell(net, weights.get(&dtype), dtype, batch, grid)));
                        match outcome {
                            Ok(Ok(r)) => r,
                            Ok(Err(msg)) => BenchRecord::failed(&net_name, dtype, batch, msg),
                            Err(panic) => {
                                let msg = panic
                                    .downcast_ref::<String>()
                                    .cloned()
                                    .or_else(|| panic.downcast_ref::<&str>().map(|s| s.to_string()))
                                    .unwrap_or_else(|| "unknown panic".into());
                                BenchRecord::failed(&net_name, dtype, batch, format!("panicked: {msg}"))
                            }
                        }
                    }
                };
                on_record(&record);
                records.push(record);
            }
        }
    }
    Ok(records)
}

/// Header line plus one line per record, each newline-terminated.
pub fn records_to_string(records: &[BenchRecord]) -> String {
    let header = RecordsHeader {
        format: RECORDS_FORMAT.into(),
        version: RECORDS_VERSION,
        fields: FIELDS.iter().map(|s| s.to_string()).collect(),
    };
    let mut out = serde_json::to_string(&header).expect("header serializes");
    out.push('\n');
    for r in records {
        out.push_str(&serde_json::to_string(r).expect("record serializes"));
        out.push('\n');
    }
    out
}

pub fn read_records(text: &str) -> Result<Vec<BenchRecord>, ToolError> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header: RecordsHeader = serde_json::from_str(lines.next().ok_or_else(|| ToolError::Records("empty".into()))?)
        .map_err(|e| ToolError::Records(format!("bad header: {e}")))?;
    if header.format != RECORDS_FORMAT || header.version != RECORDS_VERSION {
        return Err(ToolError::Records(format!("unsupported format {} v{}", header.format, header.version)));
    }
    lines
        .enumerate()
        .map(|(i, line)| serde_json::from_str(line).map_err(|e| ToolError::Records(format!("line {}: {e}", i + 2))))
        .collect()
}

/// One row per (net, batch) with the two dtypes side by side. Failed cells
/// show `/`.
pub fn format_table(records: &[BenchRecord]) -> String {
    let mut rows: Vec<(String, usize)> = Vec::new();
    let mut cells: BTreeMap<(String, usize, Dtype), &BenchRecord> = BTreeMap::new();
    for r in records {
        if !rows.contains(&(r.net.clone(), r.batch)) {
            rows.push((r.net.clone(), r.batch));
        }
        cells.insert((r.net.clone(), r.batch, r.dtype), r);
    }
    let time = |r: Option<&&BenchRecord>| match r.and_then(|r| r.median_seconds) {
        Some(s) => format!("{:.3}", s * 1e3),
        None => "/".into(),
    };
    let mem = |r: Option<&&BenchRecord>| match r.and_then(|r| r.peak_bytes) {
        Some(b) => format!("{:.1}", b as f64 / 1024.0),
        None => "/".into(),
    };
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<16} {:>6} {:>12} {:>12} {:>14} {:>14} {:>9}",
        "net", "batch", "f32 ms", "f16 ms", "f32 peak KiB", "f16 peak KiB", "mem f16/f32"
    );
    for (net, batch) in rows {
        let f = cells.get(&(net.clone(), batch, Dtype::F32));
        let h = cells.get(&(net.clone(), batch, Dtype::F16));
        let ratio = match (f.and_then(|r| r.peak_bytes), h.and_then(|r| r.peak_bytes)) {
            (Some(a), Some(b)) if a > 0 => format!("{:.3}", b as f64 / a as f64),
            _ => "/".into(),
        };
        let _ = writeln!(
            out,
            "{:<16} {:>6} {:>12} {:>12} {:>14} {:>14} {:>9}",
            net,
            batch,
            time(f),
            time(h),
            mem(f),
            mem(h),
            ratio
        );
    }
    out
}
