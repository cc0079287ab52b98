//! Batch kernels. Each instantiation fixes the dimension, the presence of a
//! coefficient, the store strategy and unrolling at compile time, so none of
//! the tuning axes is a branch inside the contraction loop.

use crate::Scalar;

/// Largest `numCoefficients * DIM * DIM` of any supported form (3D weighted).
const MAX_K_BLOCK: usize = 4 * 9;

/// Sizes a kernel needs at run time; the loop bounds of one variant.
#[derive(Debug, Clone, Copy)]
pub(crate) struct KernelShape {
    pub dim: usize,
    pub krows: usize,
    pub num_coefficients: usize,
    pub concurrent: usize,
    pub serial: usize,
}

/// One batch: `geometry` holds the batch's G tensors, `coeffs` its nodal
/// coefficients (empty for unweighted forms) and `out` its output region.
pub(crate) type BatchKernel<T> = fn(
    &KernelShape,
    analytic: &[T],
    geometry: &[T],
    coeffs: &[T],
    out: &mut [T],
    scratch: &mut Vec<T>,
);

/// `sum_{mu nu} G^{mu nu} K_{mu nu}`, accumulated mu-major from zero.
#[inline(always)]
fn contract<T: Scalar, const D: usize, const UNROLL: bool>(dim: usize, g: &[T], k: &[T]) -> T {
    if UNROLL {
        let g = &g[..D * D];
        let k = &k[..D * D];
        if D == 2 {
            let mut e = T::zero();
            e = e + g[0] * k[0];
            e = e + g[1] * k[1];
            e = e + g[2] * k[2];
            e = e + g[3] * k[3];
            e
        } else {
            let mut e = T::zero();
            e = e + g[0] * k[0];
            e = e + g[1] * k[1];
            e = e + g[2] * k[2];
            e = e + g[3] * k[3];
            e = e + g[4] * k[4];
            e = e + g[5] * k[5];
            e = e + g[6] * k[6];
            e = e + g[7] * k[7];
            e = e + g[8] * k[8];
            e
        }
    } else {
        let mut e = T::zero();
        for mu in 0..dim {
            for nu in 0..dim {
                e = e + g[mu * dim + nu] * k[mu * dim + nu];
            }
        }
        e
    }
}

/// One element-matrix entry: coefficient outer, then the G:K contraction.
#[inline(always)]
fn entry<T: Scalar, const D: usize, const WEIGHTED: bool, const UNROLL: bool>(
    shape: &KernelShape,
    k: &[T],
    g: &[T],
    w: &[T],
) -> T {
    if WEIGHTED {
        let bl = D * D;
        let mut e = T::zero();
        for (c, wk) in w[..shape.num_coefficients].iter().enumerate() {
            let inner = contract::<T, D, UNROLL>(shape.dim, g, &k[c * bl..(c + 1) * bl]);
            e = e + *wk * inner;
        }
        e
    } else {
        contract::<T, D, UNROLL>(shape.dim, g, k)
    }
}

/// Runs every logical work item `idx = Kidx + z * KROWS^2` of the batch.
/// Each item keeps its K block local and performs `serial` sequential
/// contractions for elements `n = b * concurrent + z`.
fn batch_kernel<
    T: Scalar,
    const D: usize,
    const WEIGHTED: bool,
    const INTERLEAVE: bool,
    const UNROLL: bool,
>(
    shape: &KernelShape,
    analytic: &[T],
    geometry: &[T],
    coeffs: &[T],
    out: &mut [T],
    scratch: &mut Vec<T>,
) {
    let bl = D * D;
    let kk = shape.krows * shape.krows;
    let kblock = shape.num_coefficients * bl;
    let output_size = shape.concurrent * kk;
    let nc = if WEIGHTED { shape.num_coefficients } else { 0 };
    let mut k_local = [T::zero(); MAX_K_BLOCK];

    for z in 0..shape.concurrent {
        for kidx in 0..kk {
            let idx = kidx + z * kk;
            k_local[..kblock].copy_from_slice(&analytic[kidx * kblock..(kidx + 1) * kblock]);
            let k = &k_local[..kblock];
            if INTERLEAVE {
                for b in 0..shape.serial {
                    let n = b * shape.concurrent + z;
                    let e = entry::<T, D, WEIGHTED, UNROLL>(
                        shape,
                        k,
                        &geometry[n * bl..(n + 1) * bl],
                        &coeffs[n * nc..(n + 1) * nc],
                    );
                    out[idx + b * output_size] = e;
                }
            } else {
                scratch.clear();
                for b in 0..shape.serial {
                    let n = b * shape.concurrent + z;
                    scratch.push(entry::<T, D, WEIGHTED, UNROLL>(
                        shape,
                        k,
                        &geometry[n * bl..(n + 1) * bl],
                        &coeffs[n * nc..(n + 1) * nc],
                    ));
                }
                for (b, e) in scratch.iter().enumerate() {
                    out[idx + b * output_size] = *e;
                }
            }
        }
    }
}

pub(crate) fn select<T: Scalar>(
    dim: usize,
    weighted: bool,
    interleave: bool,
    unroll: bool,
) -> BatchKernel<T> {
    macro_rules! pick {
        ($d:literal) => {
            match (weighted, interleave, unroll) {
                (false, false, false) => batch_kernel::<T, $d, false, false, false>,
                (false, false, true) => batch_kernel::<T, $d, false, false, true>,
                (false, true, false) => batch_kernel::<T, $d, false, true, false>,
                (false, true, true) => batch_kernel::<T, $d, false, true, true>,
                (true, false, false) => batch_kernel::<T, $d, true, false, false>,
                (true, false, true) => batch_kernel::<T, $d, true, false, true>,
                (true, true, false) => batch_kernel::<T, $d, true, true, false>,
                (true, true, true) => batch_kernel::<T, $d, true, true, true>,
            }
        };
    }
    match dim {
        2 => pick!(2),
        3 => pick!(3),
        _ => unreachable!("dimension validated by FormSpec"),
    }
}
