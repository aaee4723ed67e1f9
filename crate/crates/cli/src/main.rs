use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use halfnet_core::tools::{
    convert_file, format_table, generate, records_to_string, run_net, sweep, Arch, BenchGrid, InputSource,
    DEFAULT_BATCHES, DEFAULT_SEED,
};
use halfnet_core::Dtype;

#[derive(Parser, Debug)]
#[command(name = "halfnet", version, about = "Half-precision CNN inference: generate, convert, run and benchmark")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write `<out_prefix>.json` and `<out_prefix>.hgwt` for a built-in network.
    Gen {
        /// lenet, alexnet-mini or resnet20-mini
        arch: Arch,
        out_prefix: PathBuf,
        #[arg(long, default_value_t = DEFAULT_SEED)]
        seed: u64,
    },
    /// Convert an F32 weight file to F16, saturating out-of-range values.
    Convert { input: PathBuf, output: PathBuf },
    /// Run one forward pass and print a summary of the output blob.
    Run {
        netdef: PathBuf,
        weights: PathBuf,
        #[arg(long, default_value = "f32")]
        dtype: Dtype,
        #[arg(long, default_value_t = 1)]
        batch: usize,
        /// `random:<seed>` or a weight-format file holding one blob
        #[arg(long, default_value = "random:0")]
        input: InputSource,
    },
    /// Time every (net, dtype, batch) cell and write one record per cell.
    Bench {
        /// Network descriptions; weights are read from the `.hgwt` file beside each.
        #[arg(required = true)]
        nets: Vec<PathBuf>,
        /// Records file (JSON lines).
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_BATCHES)]
        batches: Vec<usize>,
        #[arg(long, value_delimiter = ',', default_values_t = [Dtype::F32, Dtype::F16])]
        dtypes: Vec<Dtype>,
        #[arg(long, default_value_t = 3)]
        iters: usize,
        #[arg(long, default_value_t = 1)]
        warmup: usize,
        #[arg(long, default_value_t = DEFAULT_SEED)]
        seed: u64,
    },
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Gen { arch, out_prefix, seed } => {
            let (net, weights) = generate(arch, &out_prefix, seed)?;
            println!("netdef:  {}", net.display());
            println!("weights: {}", weights.display());
        }
        Command::Convert { input, output } => {
            let report = convert_file(&input, &output)?;
            println!("output:          {}", output.display());
            println!("blobs:           {}", report.blobs_converted);
            println!("elements:        {}", report.elements);
            println!("saturated:       {}", report.saturated);
            println!("flushed to zero: {}", report.flushed_to_zero);
        }
        Command::Run { netdef, weights, dtype, batch, input } => {
            let report = run_net(&netdef, &weights, dtype, batch, &input)?;
            println!("{report}");
        }
        Command::Bench { nets, out, batches, dtypes, iters, warmup, seed } => {
            let grid = BenchGrid { nets, dtypes, batches, iters, warmup, seed };
            let total = grid.cell_count();
            let mut done = 0;
            let records = sweep(&grid, |r| {
                done += 1;
                match &r.error {
                    None => eprintln!("[{done}/{total}] {} {} batch {}: ok", r.net, r.dtype, r.batch),
                    Some(e) => eprintln!("[{done}/{total}] {} {} batch {}: failed: {e}", r.net, r.dtype, r.batch),
                }
            })?;
            fs::write(&out, records_to_string(&records)).with_context(|| format!("writing {}", out.display()))?;
            print!("{}", format_table(&records));
            let failed = records.iter().filter(|r| !r.is_ok()).count();
            if failed > 0 {
                eprintln!("{failed} of {total} cells failed");
            }
            eprintln!("records written to {}", out.display());
        }
    }
    Ok(())
}
