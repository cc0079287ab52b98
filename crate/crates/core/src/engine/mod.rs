//! Batched G:K contraction.
//!
//! A batch of `elementBatchSize` elements is one kernel invocation. Inside
//! it, `KROWS^2 * numConcurrentElements` logical work items each own one K
//! block and perform `elementBatchSize / numConcurrentElements` sequential
//! contractions. Batches write disjoint output regions and run in parallel
//! on the current rayon pool. The accumulation order (coefficient, then
//! `mu`, then `nu`) is the same for every variant, so variants differ in
//! memory traffic only, never in the values they produce.

mod kernel;
mod store;

use std::fmt;

use rayon::prelude::*;

use crate::forms::{AnalyticTensor, FormSpec};
use crate::geometry::{Mesh, PackedGeometry};
use crate::{Error, Precision, Result, Scalar};

pub use store::{read_header, unpack_element_matrix, ElementMatrixStore, StoreHeader};

use kernel::{BatchKernel, KernelShape};

/// Upper bound on logical work items per work group.
pub const MAX_WORK_GROUP: usize = 1024;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct KernelConfig {
    pub element_batch_size: usize,
    pub num_concurrent_elements: usize,
    pub interleave_stores: bool,
    pub loop_unroll: bool,
    pub precision: Precision,
}

impl KernelConfig {
    pub fn new(
        element_batch_size: usize,
        num_concurrent_elements: usize,
        interleave_stores: bool,
        loop_unroll: bool,
        precision: Precision,
    ) -> Self {
        KernelConfig {
            element_batch_size,
            num_concurrent_elements,
            interleave_stores,
            loop_unroll,
            precision,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.element_batch_size == 0 || self.num_concurrent_elements == 0 {
            return Err(Error::InvalidConfig(
                "batch size and concurrent elements must be positive".into(),
            ));
        }
        if !self
            .element_batch_size
            .is_multiple_of(self.num_concurrent_elements)
        {
            return Err(Error::InvalidConfig(format!(
                "divisibility: batch size {} is not a multiple of {} concurrent elements",
                self.element_batch_size, self.num_concurrent_elements
            )));
        }
        Ok(())
    }

    /// Contractions each work item performs per batch.
    pub fn serial_batch_size(&self) -> usize {
        self.element_batch_size / self.num_concurrent_elements
    }

    /// Tag such as `bs128_ce2_is_unroll`.
    pub fn tag(&self) -> String {
        let mut s = format!(
            "bs{}_ce{}",
            self.element_batch_size, self.num_concurrent_elements
        );
        if self.interleave_stores {
            s.push_str("_is");
        }
        if self.loop_unroll {
            s.push_str("_unroll");
        }
        s
    }
}

impl fmt::Display for KernelConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} ({})", self.tag(), self.precision)
    }
}

/// Nodal values of a P1 coefficient on every element, element-major.
#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientField {
    pub num_basis_funcs: usize,
    pub values: Vec<f64>,
}

impl CoefficientField {
    pub fn new(num_basis_funcs: usize, values: Vec<f64>) -> Result<Self> {
        if num_basis_funcs == 0 || !values.len().is_multiple_of(num_basis_funcs) {
            return Err(Error::ShapeMismatch(format!(
                "{} coefficient values do not split into elements of {num_basis_funcs}",
                values.len()
            )));
        }
        Ok(CoefficientField {
            num_basis_funcs,
            values,
        })
    }

    /// Interpolates `f` at the vertices of every cell.
    pub fn interpolate(mesh: &Mesh, f: impl Fn(&[f64]) -> f64) -> Self {
        let values = mesh
            .cells
            .iter()
            .flat_map(|cell| cell.iter().map(|&v| f(&mesh.vertices[v])))
            .collect();
        CoefficientField {
            num_basis_funcs: mesh.dim + 1,
            values,
        }
    }

    pub fn constant(mesh: &Mesh, value: f64) -> Self {
        Self::interpolate(mesh, |_| value)
    }

    pub fn num_elements(&self) -> usize {
        self.values.len() / self.num_basis_funcs
    }

    pub fn element(&self, e: usize) -> &[f64] {
        &self.values[e * self.num_basis_funcs..(e + 1) * self.num_basis_funcs]
    }
}

/// A specialized kernel: configuration, form and an engine-precision copy of
/// K, bound to the monomorphized batch routine for this combination.
#[derive(Clone)]
pub struct KernelVariant<T: Scalar> {
    pub config: KernelConfig,
    pub spec: FormSpec,
    pub analytic: Vec<T>,
    pub description: String,
    shape: KernelShape,
    kernel: BatchKernel<T>,
}

impl<T: Scalar> fmt::Debug for KernelVariant<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("KernelVariant")
            .field("description", &self.description)
            .field("spec", &self.spec)
            .field("config", &self.config)
            .finish()
    }
}

pub fn specialize_kernel<T: Scalar>(
    spec: &FormSpec,
    analytic: &AnalyticTensor,
    config: &KernelConfig,
) -> Result<KernelVariant<T>> {
    if analytic.spec != *spec {
        return Err(Error::ShapeMismatch(format!(
            "analytic tensor built for {} {}D, kernel requested for {} {}D",
            analytic.spec.operator, analytic.spec.dim, spec.operator, spec.dim
        )));
    }
    if analytic.blocks.len() != spec.k_len() {
        return Err(Error::ShapeMismatch(format!(
            "analytic tensor has {} entries, expected {}",
            analytic.blocks.len(),
            spec.k_len()
        )));
    }
    if config.precision != T::PRECISION {
        return Err(Error::InvalidConfig(format!(
            "configuration asks for {}, kernel instantiated for {}",
            config.precision,
            T::PRECISION
        )));
    }
    config.validate()?;
    let items = spec.krows() * spec.krows() * config.num_concurrent_elements;
    if items > MAX_WORK_GROUP {
        return Err(Error::InvalidConfig(format!(
            "work-group bound: {items} work items exceed {MAX_WORK_GROUP}"
        )));
    }
    let shape = KernelShape {
        dim: spec.dim,
        krows: spec.krows(),
        num_coefficients: spec.num_coefficients(),
        concurrent: config.num_concurrent_elements,
        serial: config.serial_batch_size(),
    };
    let kernel = kernel::select::<T>(
        spec.dim,
        spec.coefficient_arity == 1,
        config.interleave_stores,
        config.loop_unroll,
    );
    Ok(KernelVariant {
        config: *config,
        spec: *spec,
        analytic: analytic.blocks.iter().map(|&v| T::from_f64(v)).collect(),
        description: config.tag(),
        shape,
        kernel,
    })
}

/// Computes the element matrices of every batch in `geometry`.
pub fn integrate_batches<T: Scalar>(
    variant: &KernelVariant<T>,
    geometry: &PackedGeometry<T>,
    coeffs: Option<&CoefficientField>,
) -> Result<ElementMatrixStore<T>> {
    let spec = &variant.spec;
    let config = &variant.config;
    let bs = config.element_batch_size;
    let bl = spec.block_len();
    if geometry.dim != spec.dim {
        return Err(Error::DimensionMismatch {
            expected: spec.dim,
            actual: geometry.dim,
        });
    }
    if geometry.element_batch_size != bs {
        return Err(Error::ShapeMismatch(format!(
            "geometry packed with batch size {}, kernel uses {bs}",
            geometry.element_batch_size
        )));
    }
    if geometry.data.len() != geometry.num_batches * bs * bl
        || geometry.num_batches != geometry.num_elements.div_ceil(bs)
    {
        return Err(Error::ShapeMismatch(
            "packed geometry length is inconsistent".into(),
        ));
    }
    let weighted = spec.coefficient_arity == 1;
    let nc = spec.num_coefficients();
    match (weighted, coeffs) {
        (true, None) => {
            return Err(Error::ShapeMismatch(
                "weighted form requires a coefficient field".into(),
            ))
        }
        (false, Some(_)) => {
            return Err(Error::ShapeMismatch(
                "form takes no coefficient field".into(),
            ))
        }
        (true, Some(w)) if w.num_basis_funcs != nc || w.num_elements() != geometry.num_elements => {
            return Err(Error::ShapeMismatch(format!(
                "coefficient field covers {} elements of {} values, expected {} of {nc}",
                w.num_elements(),
                w.num_basis_funcs,
                geometry.num_elements
            )));
        }
        _ => {}
    }

    let mut store = ElementMatrixStore::<T>::zeroed(spec, config, geometry.num_elements);
    let kk = spec.krows() * spec.krows();
    let ne = geometry.num_elements;
    store
        .data
        .par_chunks_mut(bs * kk)
        .zip(geometry.data.par_chunks(bs * bl))
        .enumerate()
        .for_each_init(
            || {
                (
                    Vec::<T>::with_capacity(config.serial_batch_size()),
                    Vec::<T>::new(),
                )
            },
            |(scratch, wbuf), (g, (out, gbatch))| {
                if let Some(w) = coeffs {
                    wbuf.clear();
                    for e in 0..bs {
                        let src = w.element((g * bs + e).min(ne - 1));
                        wbuf.extend(src.iter().map(|&v| T::from_f64(v)));
                    }
                }
                (variant.kernel)(
                    &variant.shape,
                    &variant.analytic,
                    gbatch,
                    wbuf,
                    out,
                    scratch,
                );
            },
        );
    Ok(store)
}

/// Floating-point operations for `num_elements` element matrices, counting
/// a multiply-add as 2: `KROWS^2 * 2 DIM^2` per element, or
/// `KROWS^2 * numBasisFuncs * (2 DIM^2 + 2)` with a P1 coefficient.
pub fn flop_count(spec: &FormSpec, num_elements: usize) -> u64 {
    let kk = (spec.krows() * spec.krows()) as u64;
    let d2 = (spec.dim * spec.dim) as u64;
    let per_entry = if spec.coefficient_arity == 0 {
        2 * d2
    } else {
        spec.num_basis_funcs as u64 * (2 * d2 + 2)
    };
    num_elements as u64 * kk * per_entry
}

/// Runs `f` on a dedicated pool of `workers` threads.
pub fn with_workers<R: Send>(workers: usize, f: impl FnOnce() -> R + Send) -> Result<R> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::InvalidConfig(format!("thread pool: {e}")))?;
    Ok(pool.install(f))
}
