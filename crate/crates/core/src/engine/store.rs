use std::io::{Read, Write};

use crate::engine::KernelConfig;
use crate::forms::FormSpec;
use crate::{Error, Precision, Result, Scalar};

const MAGIC: &[u8; 4] = b"EMS1";
const HEADER_LEN: usize = 4 + 4 * 4 + 8 + 4;

/// Element matrices of all batches. Entry `(batch, serial step b,
/// concurrent slot z, i, j)` lives at
/// `batch * KROWS^2 * ELEMENT_BATCH_SIZE + b * NUM_CONCURRENT_ELEMENTS * KROWS^2
///  + z * KROWS^2 + i + j * KROWS` and belongs to batch-local element
/// `b * NUM_CONCURRENT_ELEMENTS + z`.
#[derive(Debug, Clone, PartialEq)]
pub struct ElementMatrixStore<T> {
    pub dim: usize,
    pub krows: usize,
    pub element_batch_size: usize,
    pub num_concurrent_elements: usize,
    pub num_elements: usize,
    pub num_batches: usize,
    pub data: Vec<T>,
}

impl<T: Scalar> ElementMatrixStore<T> {
    pub(crate) fn zeroed(spec: &FormSpec, config: &KernelConfig, num_elements: usize) -> Self {
        let num_batches = num_elements.div_ceil(config.element_batch_size);
        let krows = spec.krows();
        ElementMatrixStore {
            dim: spec.dim,
            krows,
            element_batch_size: config.element_batch_size,
            num_concurrent_elements: config.num_concurrent_elements,
            num_elements,
            num_batches,
            data: vec![T::zero(); num_batches * config.element_batch_size * krows * krows],
        }
    }

    /// Start of batch `batch` (the `Eoffset` of a kernel invocation).
    #[inline]
    pub fn eoffset(&self, batch: usize) -> usize {
        batch * self.krows * self.krows * self.element_batch_size
    }

    #[inline]
    pub fn index(&self, batch: usize, serial: usize, slot: usize, i: usize, j: usize) -> usize {
        let kk = self.krows * self.krows;
        self.eoffset(batch)
            + serial * self.num_concurrent_elements * kk
            + slot * kk
            + i
            + j * self.krows
    }

    /// Flat index of entry `(i, j)` of global element `element`.
    #[inline]
    pub fn element_index(&self, element: usize, i: usize, j: usize) -> usize {
        let local = element % self.element_batch_size;
        self.index(
            element / self.element_batch_size,
            local / self.num_concurrent_elements,
            local % self.num_concurrent_elements,
            i,
            j,
        )
    }

    /// Row-major `KROWS x KROWS` matrix of one element (rows are test
    /// functions), widened to f64.
    pub fn element_matrix(&self, element: usize) -> Result<Vec<f64>> {
        if element >= self.num_elements {
            return Err(Error::OutOfRange {
                index: element,
                len: self.num_elements,
            });
        }
        let n = self.krows;
        let mut m = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                m[i * n + j] = self.data[self.element_index(element, i, j)].as_f64();
            }
        }
        Ok(m)
    }

    /// Sum of every real (non-padding) entry in f64, in element order.
    pub fn checksum(&self) -> f64 {
        let kk = self.krows * self.krows;
        let mut sum = 0.0;
        for e in 0..self.num_elements {
            let start = self.element_index(e, 0, 0);
            for v in &self.data[start..start + kk] {
                sum += v.as_f64();
            }
        }
        sum
    }

    /// Binary dump: magic, dim, KROWS, elementBatchSize,
    /// numConcurrentElements (u32 each), numElements (u64), precision code
    /// (u32, byte width), then the flat array. All little-endian.
    pub fn to_bytes(&self) -> Vec<u8> {
        let width = T::PRECISION.code() as usize;
        let mut out = Vec::with_capacity(HEADER_LEN + self.data.len() * width);
        out.extend_from_slice(MAGIC);
        for v in [
            self.dim,
            self.krows,
            self.element_batch_size,
            self.num_concurrent_elements,
        ] {
            out.extend_from_slice(&(v as u32).to_le_bytes());
        }
        out.extend_from_slice(&(self.num_elements as u64).to_le_bytes());
        out.extend_from_slice(&T::PRECISION.code().to_le_bytes());
        for v in &self.data {
            v.write_le(&mut out);
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let header = read_header(bytes)?;
        if header.precision != T::PRECISION {
            return Err(Error::Parse(format!(
                "store holds {} data, requested {}",
                header.precision,
                T::PRECISION
            )));
        }
        let width = T::PRECISION.code() as usize;
        let num_batches = header.num_elements.div_ceil(header.element_batch_size);
        let len = num_batches * header.element_batch_size * header.krows * header.krows;
        let body = &bytes[HEADER_LEN..];
        if body.len() != len * width {
            return Err(Error::Parse(format!(
                "expected {} data bytes, found {}",
                len * width,
                body.len()
            )));
        }
        Ok(ElementMatrixStore {
            dim: header.dim,
            krows: header.krows,
            element_batch_size: header.element_batch_size,
            num_concurrent_elements: header.num_concurrent_elements,
            num_elements: header.num_elements,
            num_batches,
            data: body.chunks_exact(width).map(T::read_le).collect(),
        })
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(&self.to_bytes())?;
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)?;
        Self::from_bytes(&bytes)
    }
}

/// Header fields of a binary store dump.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StoreHeader {
    pub dim: usize,
    pub krows: usize,
    pub element_batch_size: usize,
    pub num_concurrent_elements: usize,
    pub num_elements: usize,
    pub precision: Precision,
}

pub fn read_header(bytes: &[u8]) -> Result<StoreHeader> {
    if bytes.len() < HEADER_LEN || &bytes[..4] != MAGIC {
        return Err(Error::Parse("not an element-matrix store dump".into()));
    }
    let u32_at = |at: usize| u32::from_le_bytes(bytes[at..at + 4].try_into().unwrap()) as usize;
    let num_elements = u64::from_le_bytes(bytes[20..28].try_into().unwrap()) as usize;
    let code = u32_at(28) as u32;
    let precision = Precision::from_code(code)
        .ok_or_else(|| Error::Parse(format!("unknown precision code {code}")))?;
    let header = StoreHeader {
        dim: u32_at(4),
        krows: u32_at(8),
        element_batch_size: u32_at(12),
        num_concurrent_elements: u32_at(16),
        num_elements,
        precision,
    };
    if header.element_batch_size == 0 || header.num_concurrent_elements == 0 {
        return Err(Error::Parse("zero batch size in header".into()));
    }
    Ok(header)
}

/// Reads element `element` of `store` back into a row-major matrix, after
/// checking that the store was produced for `config` and `spec`.
pub fn unpack_element_matrix<T: Scalar>(
    store: &ElementMatrixStore<T>,
    config: &KernelConfig,
    spec: &FormSpec,
    element: usize,
) -> Result<Vec<f64>> {
    if store.krows != spec.krows()
        || store.dim != spec.dim
        || store.element_batch_size != config.element_batch_size
        || store.num_concurrent_elements != config.num_concurrent_elements
    {
        return Err(Error::ShapeMismatch(
            "store layout does not match the given form and configuration".into(),
        ));
    }
    store.element_matrix(element)
}
