//! Timed runs of kernel variants and Cartesian sweeps over the tuning axes.
//!
//! Reported rates are contraction-only: mesh generation, K construction and
//! (unless requested) geometry packing happen before the clock starts.

use std::io::{Read, Write};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::engine::{
    flop_count, integrate_batches, specialize_kernel, with_workers, CoefficientField,
    ElementMatrixStore, KernelConfig, MAX_WORK_GROUP,
};
use crate::forms::{build_k, AnalyticTensor, FormSpec, Operator};
use crate::geometry::{
    geometry_tensors, jitter_mesh, pack_tensors, structured_simplicial_mesh, Mesh,
};
use crate::oracle::{verify, OracleReport};
use crate::{Error, Precision, Result, Scalar};

/// CSV column order of [`BenchRecord`].
pub const CSV_HEADER: &str = "operator,dim,num_elements,batch_size,concurrent,interleave,unroll,precision,workers,reps,seconds_min,seconds_mean,gflops,checksum,status";

pub const STATUS_OK: &str = "ok";

/// Oracle tolerance for an engine precision.
pub fn default_tolerance(precision: Precision) -> f64 {
    match precision {
        Precision::Single => 5e-5,
        Precision::Double => 1e-12,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRecord {
    pub operator: Operator,
    pub dim: usize,
    pub num_elements: usize,
    pub batch_size: usize,
    pub concurrent: usize,
    pub interleave: bool,
    pub unroll: bool,
    pub precision: Precision,
    pub workers: usize,
    pub reps: usize,
    pub seconds_min: Option<f64>,
    pub seconds_mean: Option<f64>,
    pub gflops: Option<f64>,
    pub checksum: Option<f64>,
    pub status: String,
}

impl BenchRecord {
    fn skeleton(prep: &Prepared, config: &KernelConfig, workers: usize, reps: usize) -> Self {
        BenchRecord {
            operator: prep.spec.operator,
            dim: prep.spec.dim,
            num_elements: prep.mesh.num_elements(),
            batch_size: config.element_batch_size,
            concurrent: config.num_concurrent_elements,
            interleave: config.interleave_stores,
            unroll: config.loop_unroll,
            precision: config.precision,
            workers,
            reps,
            seconds_min: None,
            seconds_mean: None,
            gflops: None,
            checksum: None,
            status: String::new(),
        }
    }

    pub fn is_ok(&self) -> bool {
        self.status == STATUS_OK
    }
}

#[derive(Debug, Clone)]
pub struct BenchOptions {
    pub operator: Operator,
    pub dim: usize,
    /// Grid resolution of the structured mesh.
    pub n: usize,
    pub config: KernelConfig,
    pub workers: usize,
    pub reps: usize,
    pub seed: u64,
    pub jitter: f64,
    /// Include geometry packing in the timed region.
    pub include_packing: bool,
    /// Check against the oracle before timing; refuse to report on failure.
    pub verify: bool,
}

impl Default for BenchOptions {
    fn default() -> Self {
        BenchOptions {
            operator: Operator::Laplacian,
            dim: 3,
            n: 8,
            config: KernelConfig::new(128, 2, true, false, Precision::Single),
            workers: 1,
            reps: 5,
            seed: 42,
            jitter: 0.0,
            include_packing: false,
            verify: false,
        }
    }
}

/// Mesh, form and K shared by every variant of one run or sweep.
pub struct Prepared {
    pub mesh: Mesh,
    pub spec: FormSpec,
    pub analytic: AnalyticTensor,
    pub coeffs: Option<CoefficientField>,
    tensors: Vec<Vec<f64>>,
}

impl Prepared {
    pub fn new(operator: Operator, dim: usize, n: usize, jitter: f64, seed: u64) -> Result<Self> {
        let mesh = jitter_mesh(&structured_simplicial_mesh(dim, n)?, jitter, seed)?;
        Self::from_mesh(operator, mesh)
    }

    pub fn from_mesh(operator: Operator, mesh: Mesh) -> Result<Self> {
        let spec = FormSpec::new(operator, mesh.dim)?;
        let analytic = build_k(&spec)?;
        let coeffs = (spec.coefficient_arity == 1).then(|| default_coefficient(&mesh));
        let tensors = geometry_tensors(&mesh)?;
        Ok(Prepared {
            mesh,
            spec,
            analytic,
            coeffs,
            tensors,
        })
    }

    /// Integrates once with `config` and returns the store.
    pub fn integrate<T: Scalar>(&self, config: &KernelConfig) -> Result<ElementMatrixStore<T>> {
        let variant = specialize_kernel::<T>(&self.spec, &self.analytic, config)?;
        let geom = pack_tensors::<T>(self.mesh.dim, &self.tensors, config.element_batch_size)?;
        integrate_batches(&variant, &geom, self.coeffs.as_ref())
    }

    pub fn verify<T: Scalar>(&self, config: &KernelConfig, tolerance: f64) -> Result<OracleReport> {
        let store = self.integrate::<T>(config)?;
        verify(
            &store,
            &self.mesh,
            &self.spec,
            config,
            self.coeffs.as_ref(),
            tolerance,
        )
    }
}

/// `w(x) = 1 + x_0` at the vertices.
pub fn default_coefficient(mesh: &Mesh) -> CoefficientField {
    CoefficientField::interpolate(mesh, |x| 1.0 + x[0])
}

/// Why a configuration cannot run for `spec`, as a sweep status.
pub fn config_status(spec: &FormSpec, config: &KernelConfig) -> Option<&'static str> {
    if config.element_batch_size == 0 || config.num_concurrent_elements == 0 {
        return Some("invalid: nonpositive size");
    }
    if !config
        .element_batch_size
        .is_multiple_of(config.num_concurrent_elements)
    {
        return Some("invalid: divisibility");
    }
    if spec.krows() * spec.krows() * config.num_concurrent_elements > MAX_WORK_GROUP {
        return Some("invalid: work-group bound");
    }
    None
}

fn time_variant<T: Scalar>(
    prep: &Prepared,
    config: &KernelConfig,
    workers: usize,
    reps: usize,
    include_packing: bool,
    check: bool,
) -> Result<BenchRecord> {
    let reps = reps.max(1);
    let mut record = BenchRecord::skeleton(prep, config, workers, reps);
    let variant = specialize_kernel::<T>(&prep.spec, &prep.analytic, config)?;
    let dim = prep.mesh.dim;
    let bs = config.element_batch_size;
    let packed = pack_tensors::<T>(dim, &prep.tensors, bs)?;
    let coeffs = prep.coeffs.as_ref();

    if check {
        let store = integrate_batches(&variant, &packed, coeffs)?;
        let report = verify(
            &store,
            &prep.mesh,
            &prep.spec,
            config,
            coeffs,
            default_tolerance(config.precision),
        )?;
        if !report.passed {
            return Err(Error::VerificationFailed(format!(
                "{} {}D {}: max relative error {:e} at element {} entry {:?} exceeds {:e}",
                prep.spec.operator,
                dim,
                config,
                report.max_rel_error,
                report.worst_element,
                report.worst_entry,
                report.tolerance
            )));
        }
    }

    let (times, store) =
        with_workers(workers, || -> Result<(Vec<f64>, ElementMatrixStore<T>)> {
            let mut times = Vec::with_capacity(reps);
            let mut last = None;
            for _ in 0..reps {
                let start = Instant::now();
                let store = if include_packing {
                    let geom = pack_tensors::<T>(dim, &prep.tensors, bs)?;
                    integrate_batches(&variant, &geom, coeffs)?
                } else {
                    integrate_batches(&variant, &packed, coeffs)?
                };
                times.push(start.elapsed().as_secs_f64());
                last = Some(store);
            }
            Ok((times, last.expect("at least one repetition")))
        })??;

    let min = times
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min)
        .max(1e-9);
    let mean = times.iter().sum::<f64>() / times.len() as f64;
    let flops = flop_count(&prep.spec, prep.mesh.num_elements()) as f64;
    record.seconds_min = Some(min);
    record.seconds_mean = Some(mean);
    record.gflops = Some(flops / min / 1e9);
    record.checksum = Some(store.checksum());
    record.status = STATUS_OK.to_string();
    Ok(record)
}

fn time_dispatch(
    prep: &Prepared,
    config: &KernelConfig,
    workers: usize,
    reps: usize,
    include_packing: bool,
    check: bool,
) -> Result<BenchRecord> {
    match config.precision {
        Precision::Single => {
            time_variant::<f32>(prep, config, workers, reps, include_packing, check)
        }
        Precision::Double => {
            time_variant::<f64>(prep, config, workers, reps, include_packing, check)
        }
    }
}

/// One timed benchmark. Configuration and verification errors are returned
/// before any timing happens.
pub fn run_benchmark(opts: &BenchOptions) -> Result<BenchRecord> {
    let prep = Prepared::new(opts.operator, opts.dim, opts.n, opts.jitter, opts.seed)?;
    run_prepared(&prep, opts)
}

pub fn run_prepared(prep: &Prepared, opts: &BenchOptions) -> Result<BenchRecord> {
    if let Some(status) = config_status(&prep.spec, &opts.config) {
        return Err(Error::InvalidConfig(
            status.trim_start_matches("invalid: ").to_string(),
        ));
    }
    time_dispatch(
        prep,
        &opts.config,
        opts.workers,
        opts.reps,
        opts.include_packing,
        opts.verify,
    )
}

/// Values per tuning axis; each axis is sorted and deduplicated before the
/// Cartesian product is taken.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SweepGrid {
    pub batch_sizes: Vec<usize>,
    pub concurrent: Vec<usize>,
    pub interleave: Vec<bool>,
    pub unroll: Vec<bool>,
}

impl Default for SweepGrid {
    fn default() -> Self {
        SweepGrid {
            batch_sizes: vec![8, 16, 32, 64, 128, 256],
            concurrent: vec![1, 2, 4],
            interleave: vec![false, true],
            unroll: vec![false, true],
        }
    }
}

impl SweepGrid {
    /// Grid points in output order: batch size, then concurrency, then
    /// interleave, then unroll, each ascending.
    pub fn configs(&self, precision: Precision) -> Vec<KernelConfig> {
        fn norm<T: Ord + Clone>(v: &[T]) -> Vec<T> {
            let mut v = v.to_vec();
            v.sort();
            v.dedup();
            v
        }
        let mut out = Vec::new();
        for &bs in &norm(&self.batch_sizes) {
            for &ce in &norm(&self.concurrent) {
                for &is in &norm(&self.interleave) {
                    for &unroll in &norm(&self.unroll) {
                        out.push(KernelConfig::new(bs, ce, is, unroll, precision));
                    }
                }
            }
        }
        out
    }
}

/// Runs every grid point of `grid` with the mesh, form, precision and
/// timing settings of `base`. Invalid or failing points become rows with a
/// non-`ok` status instead of aborting the sweep.
pub fn sweep(base: &BenchOptions, grid: &SweepGrid) -> Result<Vec<BenchRecord>> {
    let prep = Prepared::new(base.operator, base.dim, base.n, base.jitter, base.seed)?;
    Ok(sweep_prepared(&prep, base, grid))
}

pub fn sweep_prepared(prep: &Prepared, base: &BenchOptions, grid: &SweepGrid) -> Vec<BenchRecord> {
    grid.configs(base.config.precision)
        .into_iter()
        .map(|config| {
            if let Some(status) = config_status(&prep.spec, &config) {
                log::info!("skipping {}: {status}", config.tag());
                let mut r = BenchRecord::skeleton(prep, &config, base.workers, base.reps.max(1));
                r.status = status.to_string();
                return r;
            }
            match time_dispatch(
                prep,
                &config,
                base.workers,
                base.reps,
                base.include_packing,
                base.verify,
            ) {
                Ok(r) => r,
                Err(e) => {
                    log::warn!("{} failed: {e}", config.tag());
                    let mut r =
                        BenchRecord::skeleton(prep, &config, base.workers, base.reps.max(1));
                    r.status = format!("error: {e}");
                    r
                }
            }
        })
        .collect()
}

pub fn write_csv<W: Write>(records: &[BenchRecord], mut out: W) -> Result<()> {
    writeln!(out, "{CSV_HEADER}")?;
    let mut w = csv::WriterBuilder::new()
        .quote_style(csv::QuoteStyle::NonNumeric)
        .has_headers(false)
        .from_writer(out);
    for r in records {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_csv<R: Read>(input: R) -> Result<Vec<BenchRecord>> {
    let mut rdr = csv::Reader::from_reader(input);
    let header = rdr.headers()?.clone();
    if header.iter().collect::<Vec<_>>().join(",") != CSV_HEADER {
        return Err(Error::Parse(format!(
            "unexpected CSV header '{}'",
            header.iter().collect::<Vec<_>>().join(",")
        )));
    }
    let mut out = Vec::new();
    for row in rdr.records() {
        let row = row?;
        let mut record: BenchRecord = row.deserialize(Some(&header))?;
        // csv's inferred float parsing can land one ulp off; reparse exactly
        let fields = [
            &mut record.seconds_min,
            &mut record.seconds_mean,
            &mut record.gflops,
            &mut record.checksum,
        ];
        for (slot, col) in fields.into_iter().zip(10..) {
            let text = row.get(col).unwrap_or("").trim();
            *slot = if text.is_empty() {
                None
            } else {
                Some(
                    text.parse()
                        .map_err(|_| Error::Parse(format!("bad float '{text}'")))?,
                )
            };
        }
        out.push(record);
    }
    Ok(out)
}

pub fn write_json<W: Write>(records: &[BenchRecord], out: W) -> Result<()> {
    serde_json::to_writer_pretty(out, records)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(operator: Operator, precision: Precision) -> BenchOptions {
        BenchOptions {
            operator,
            dim: 2,
            n: 6,
            config: KernelConfig::new(8, 2, true, false, precision),
            workers: 2,
            reps: 2,
            seed: 42,
            jitter: 0.1,
            include_packing: false,
            verify: false,
        }
    }

    #[test]
    fn grid_order_and_count() {
        let grid = SweepGrid {
            batch_sizes: vec![128, 32],
            concurrent: vec![2, 1],
            interleave: vec![true, false],
            unroll: vec![false, true],
        };
        let cfgs = grid.configs(Precision::Single);
        assert_eq!(cfgs.len(), 16);
        assert_eq!(cfgs[0].tag(), "bs32_ce1");
        assert_eq!(cfgs[1].tag(), "bs32_ce1_unroll");
        assert_eq!(cfgs[2].tag(), "bs32_ce1_is");
        assert_eq!(cfgs[15].tag(), "bs128_ce2_is_unroll");
    }

    #[test]
    fn sweep_rows_share_checksum_and_skip_invalid() {
        let base = small(Operator::Elasticity, Precision::Double);
        let grid = SweepGrid {
            batch_sizes: vec![12, 32],
            concurrent: vec![1, 3],
            interleave: vec![false, true],
            unroll: vec![false, true],
        };
        let rows = sweep(&base, &grid).unwrap();
        assert_eq!(rows.len(), 16);
        let invalid: Vec<_> = rows.iter().filter(|r| !r.is_ok()).collect();
        assert_eq!(invalid.len(), 4);
        assert!(invalid
            .iter()
            .all(|r| r.batch_size == 32 && r.concurrent == 3));
        assert!(invalid
            .iter()
            .all(|r| r.status == "invalid: divisibility" && r.checksum.is_none()));
        let sums: Vec<u64> = rows
            .iter()
            .filter_map(|r| r.checksum)
            .map(f64::to_bits)
            .collect();
        assert_eq!(sums.len(), 12);
        assert!(sums.windows(2).all(|w| w[0] == w[1]));
    }

    #[test]
    fn repetitions_do_not_change_values() {
        let mut opts = small(Operator::WeightedLaplacian, Precision::Single);
        opts.reps = 1;
        let one = run_benchmark(&opts).unwrap();
        opts.reps = 5;
        let five = run_benchmark(&opts).unwrap();
        assert_eq!(one.checksum, five.checksum);
        assert!(one.gflops.unwrap() > 0.0);
        assert_eq!(five.reps, 5);
        let flops = flop_count(
            &FormSpec::new(Operator::WeightedLaplacian, 2).unwrap(),
            five.num_elements,
        ) as f64;
        let g = flops / five.seconds_min.unwrap() / 1e9;
        assert_eq!(five.gflops.unwrap(), g);
    }

    #[test]
    fn verify_gate_passes_for_correct_engine() {
        let mut opts = small(Operator::Laplacian, Precision::Double);
        opts.verify = true;
        assert!(run_benchmark(&opts).unwrap().is_ok());
    }

    #[test]
    fn configuration_errors_surface_before_timing() {
        let mut opts = small(Operator::Laplacian, Precision::Double);
        opts.config.num_concurrent_elements = 3;
        let err = run_benchmark(&opts).unwrap_err();
        assert!(err.to_string().contains("divisibility"), "{err}");
    }

    #[test]
    fn csv_round_trip_and_header() {
        let base = small(Operator::Laplacian, Precision::Single);
        let grid = SweepGrid {
            batch_sizes: vec![4, 6],
            concurrent: vec![4],
            interleave: vec![true],
            unroll: vec![false],
        };
        let rows = sweep(&base, &grid).unwrap();
        let mut buf = Vec::new();
        write_csv(&rows, &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert_eq!(text.lines().next().unwrap(), CSV_HEADER);
        assert!(text.lines().nth(1).unwrap().starts_with("\"laplacian\",2,"));
        assert_eq!(read_csv(buf.as_slice()).unwrap(), rows);
        assert!(read_csv("a,b\n1,2\n".as_bytes()).is_err());
        let mut json = Vec::new();
        write_json(&rows, &mut json).unwrap();
        let back: Vec<BenchRecord> = serde_json::from_slice(&json).unwrap();
        assert_eq!(back, rows);
    }
}
