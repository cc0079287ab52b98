use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use batchfem::bench::{
    default_tolerance, run_prepared, sweep_prepared, write_csv, write_json, BenchOptions, Prepared,
    SweepGrid,
};
use batchfem::engine::KernelConfig;
use batchfem::forms::{build_k, FormSpec, Operator};
use batchfem::geometry::{jitter_mesh, structured_simplicial_mesh};
use batchfem::Precision;

#[derive(Parser)]
#[command(
    name = "batchfem",
    version,
    about = "Batched P1 element-matrix integration: verify, benchmark, sweep"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Compare engine output against direct quadrature.
    Verify {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        config: ConfigArgs,
        /// Override the precision-default tolerance.
        #[arg(long)]
        tolerance: Option<f64>,
    },
    /// Time one kernel variant.
    Bench {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        config: ConfigArgs,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Time every combination of the given tuning axes.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        grid: GridArgs,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Print the analytic tensor blocks.
    DumpK {
        #[arg(long, default_value = "laplacian")]
        operator: Operator,
        #[arg(long, default_value_t = 2)]
        dim: usize,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Print a structured (optionally jittered) mesh.
    DumpMesh {
        #[arg(long, default_value_t = 2)]
        dim: usize,
        #[arg(long, default_value_t = 4)]
        n: usize,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        #[arg(long, default_value_t = 0.0)]
        jitter: f64,
        #[arg(long)]
        output: Option<PathBuf>,
    },
}

#[derive(Args)]
struct Common {
    #[arg(long, default_value = "laplacian")]
    operator: Operator,
    #[arg(long, default_value_t = 3)]
    dim: usize,
    /// Grid resolution: 2n^2 triangles or 6n^3 tetrahedra.
    #[arg(long, default_value_t = 8)]
    n: usize,
    /// f32 or f64; defaults to f64 for verify and f32 otherwise.
    #[arg(long)]
    precision: Option<Precision>,
    #[arg(long, default_value_t = 1)]
    workers: usize,
    #[arg(long, default_value_t = 5)]
    reps: usize,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Interior vertex jitter as a fraction of local spacing.
    #[arg(long, default_value_t = 0.0)]
    jitter: f64,
    #[arg(long)]
    output: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    format: Format,
}

#[derive(Args)]
struct ConfigArgs {
    #[arg(long, default_value_t = 128)]
    batch_size: usize,
    #[arg(long, default_value_t = 2)]
    concurrent: usize,
    #[arg(long, value_enum, default_value_t = OnOff::On)]
    interleave: OnOff,
    #[arg(long, value_enum, default_value_t = OnOff::Off)]
    unroll: OnOff,
}

#[derive(Args)]
struct GridArgs {
    /// Comma-separated batch sizes.
    #[arg(long, value_delimiter = ',', default_values_t = [8, 16, 32, 64, 128, 256])]
    batch_size: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_values_t = [1, 2, 4])]
    concurrent: Vec<usize>,
    #[arg(long, value_enum, value_delimiter = ',', default_values_t = [OnOff::Off, OnOff::On])]
    interleave: Vec<OnOff>,
    #[arg(long, value_enum, value_delimiter = ',', default_values_t = [OnOff::Off, OnOff::On])]
    unroll: Vec<OnOff>,
}

#[derive(Args)]
struct RunArgs {
    /// Check every variant against the oracle before timing it.
    #[arg(long)]
    verify: bool,
    /// Include geometry packing in the timed region.
    #[arg(long)]
    include_packing: bool,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum OnOff {
    On,
    Off,
}

impl From<OnOff> for bool {
    fn from(v: OnOff) -> bool {
        v == OnOff::On
    }
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Csv,
    Json,
}

fn sink(path: &Option<PathBuf>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(
            File::create(p).with_context(|| format!("creating {}", p.display()))?,
        )),
        None => Box::new(io::stdout().lock()),
    })
}

fn emit(records: &[batchfem::bench::BenchRecord], common: &Common) -> Result<()> {
    let mut out = sink(&common.output)?;
    match common.format {
        Format::Csv => write_csv(records, &mut out)?,
        Format::Json => {
            write_json(records, &mut out)?;
            writeln!(out)?;
        }
    }
    out.flush()?;
    Ok(())
}

fn prepare(common: &Common) -> Result<Prepared> {
    Prepared::new(
        common.operator,
        common.dim,
        common.n,
        common.jitter,
        common.seed,
    )
    .context("building mesh and analytic tensor")
}

fn options(common: &Common, config: KernelConfig, run: &RunArgs) -> BenchOptions {
    BenchOptions {
        operator: common.operator,
        dim: common.dim,
        n: common.n,
        config,
        workers: common.workers,
        reps: common.reps,
        seed: common.seed,
        jitter: common.jitter,
        include_packing: run.include_packing,
        verify: run.verify,
    }
}

fn kernel_config(args: &ConfigArgs, precision: Precision) -> KernelConfig {
    KernelConfig::new(
        args.batch_size,
        args.concurrent,
        args.interleave.into(),
        args.unroll.into(),
        precision,
    )
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Verify {
            common,
            config,
            tolerance,
        } => {
            let precision = common.precision.unwrap_or(Precision::Double);
            let cfg = kernel_config(&config, precision);
            let prep = prepare(&common)?;
            let tol = tolerance.unwrap_or_else(|| default_tolerance(precision));
            let report = batchfem::engine::with_workers(common.workers, || match precision {
                Precision::Single => prep.verify::<f32>(&cfg, tol),
                Precision::Double => prep.verify::<f64>(&cfg, tol),
            })??;
            let mut out = sink(&common.output)?;
            writeln!(
                out,
                "{} {}D {} elements {}: max rel {:e}, max abs {:e}, max scaled {:e}, worst element {} entry {:?}, tolerance {:e}: {}",
                common.operator,
                common.dim,
                prep.mesh.num_elements(),
                cfg,
                report.max_rel_error,
                report.max_abs_error,
                report.max_scaled_error,
                report.worst_element,
                report.worst_entry,
                report.tolerance,
                if report.passed { "PASS" } else { "FAIL" }
            )?;
            Ok(report.passed)
        }
        Command::Bench {
            common,
            config,
            run,
        } => {
            let precision = common.precision.unwrap_or(Precision::Single);
            let opts = options(&common, kernel_config(&config, precision), &run);
            let prep = prepare(&common)?;
            let record = run_prepared(&prep, &opts)?;
            emit(&[record], &common)?;
            Ok(true)
        }
        Command::Sweep { common, grid, run } => {
            let precision = common.precision.unwrap_or(Precision::Single);
            let grid = SweepGrid {
                batch_sizes: grid.batch_size,
                concurrent: grid.concurrent,
                interleave: grid.interleave.into_iter().map(bool::from).collect(),
                unroll: grid.unroll.into_iter().map(bool::from).collect(),
            };
            if grid.configs(precision).is_empty() {
                bail!("empty sweep grid");
            }
            let base = options(
                &common,
                KernelConfig::new(1, 1, false, false, precision),
                &run,
            );
            let prep = prepare(&common)?;
            let records = sweep_prepared(&prep, &base, &grid);
            emit(&records, &common)?;
            Ok(records.iter().all(|r| !r.status.starts_with("error")))
        }
        Command::DumpK {
            operator,
            dim,
            output,
        } => {
            let k = build_k(&FormSpec::new(operator, dim)?)?;
            let mut out = sink(&output)?;
            out.write_all(k.dump().as_bytes())?;
            out.flush()?;
            Ok(true)
        }
        Command::DumpMesh {
            dim,
            n,
            seed,
            jitter,
            output,
        } => {
            let mesh = jitter_mesh(&structured_simplicial_mesh(dim, n)?, jitter, seed)?;
            let mut out = sink(&output)?;
            out.write_all(mesh.to_text().as_bytes())?;
            out.flush()?;
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
