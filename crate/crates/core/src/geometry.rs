//! Meshes, affine element Jacobians, geometry tensors and batch packing.
//!
//! Jacobian convention: column `k` of `J` is `vertex[k + 1] - vertex[0]`, so
//! `J` maps reference coordinates to physical ones. Cells must have positive
//! orientation under this convention; they are never flipped silently.

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::engine::KernelConfig;
use crate::reference::check_dim;
use crate::{Error, Result, Scalar};

/// Largest jitter accepted by [`jitter_mesh`], as a fraction of local spacing.
pub const MAX_JITTER: f64 = 0.2;

#[derive(Debug, Clone, PartialEq)]
pub struct Mesh {
    pub dim: usize,
    pub vertices: Vec<Vec<f64>>,
    pub cells: Vec<Vec<usize>>,
}

impl Mesh {
    /// Builds a mesh and checks indices and orientation of every cell.
    pub fn new(dim: usize, vertices: Vec<Vec<f64>>, cells: Vec<Vec<usize>>) -> Result<Self> {
        check_dim(dim)?;
        if let Some(v) = vertices.iter().position(|v| v.len() != dim) {
            return Err(Error::InvalidMesh(format!(
                "vertex {v} does not have {dim} coordinates"
            )));
        }
        for (c, cell) in cells.iter().enumerate() {
            if cell.len() != dim + 1 {
                return Err(Error::InvalidMesh(format!(
                    "cell {c} does not have {} vertices",
                    dim + 1
                )));
            }
            if let Some(&bad) = cell.iter().find(|&&v| v >= vertices.len()) {
                return Err(Error::InvalidMesh(format!(
                    "cell {c} references vertex {bad} of {}",
                    vertices.len()
                )));
            }
        }
        let mesh = Mesh {
            dim,
            vertices,
            cells,
        };
        for c in 0..mesh.num_elements() {
            element_jacobian(&mesh, c)?;
        }
        Ok(mesh)
    }

    pub fn num_elements(&self) -> usize {
        self.cells.len()
    }

    pub fn num_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn cell_vertices(&self, cell: usize) -> Vec<&[f64]> {
        self.cells[cell]
            .iter()
            .map(|&v| self.vertices[v].as_slice())
            .collect()
    }

    pub fn scaled(&self, factor: f64) -> Mesh {
        self.map_vertices(|x| x * factor)
    }

    pub fn translated(&self, shift: &[f64]) -> Mesh {
        let mut m = self.clone();
        for v in &mut m.vertices {
            for (x, s) in v.iter_mut().zip(shift) {
                *x += s;
            }
        }
        m
    }

    fn map_vertices(&self, f: impl Fn(f64) -> f64) -> Mesh {
        let mut m = self.clone();
        for v in &mut m.vertices {
            for x in v.iter_mut() {
                *x = f(*x);
            }
        }
        m
    }

    /// Text form: a `dim numVertices numElements` header, one line per
    /// vertex, then one line per cell with 0-based indices.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{} {} {}",
            self.dim,
            self.num_vertices(),
            self.num_elements()
        );
        for v in &self.vertices {
            let line: Vec<String> = v.iter().map(|x| format!("{x:?}")).collect();
            let _ = writeln!(out, "{}", line.join(" "));
        }
        for c in &self.cells {
            let line: Vec<String> = c.iter().map(|i| i.to_string()).collect();
            let _ = writeln!(out, "{}", line.join(" "));
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Mesh> {
        let mut lines = text.lines().map(str::trim).filter(|l| !l.is_empty());
        let header = lines
            .next()
            .ok_or_else(|| Error::Parse("empty mesh file".into()))?;
        let head: Vec<usize> = parse_fields(header)?;
        let [dim, nv, ne] = head[..] else {
            return Err(Error::Parse(format!("bad header '{header}'")));
        };
        check_dim(dim)?;
        let mut vertices = Vec::with_capacity(nv);
        for _ in 0..nv {
            let line = lines
                .next()
                .ok_or_else(|| Error::Parse("missing vertex line".into()))?;
            let v: Vec<f64> = parse_fields(line)?;
            vertices.push(v);
        }
        let mut cells = Vec::with_capacity(ne);
        for _ in 0..ne {
            let line = lines
                .next()
                .ok_or_else(|| Error::Parse("missing cell line".into()))?;
            let c: Vec<usize> = parse_fields(line)?;
            cells.push(c);
        }
        if lines.next().is_some() {
            return Err(Error::Parse("trailing data after cells".into()));
        }
        Mesh::new(dim, vertices, cells)
    }
}

fn parse_fields<T: std::str::FromStr>(line: &str) -> Result<Vec<T>> {
    line.split_whitespace()
        .map(|tok| {
            tok.parse()
                .map_err(|_| Error::Parse(format!("bad field '{tok}' in '{line}'")))
        })
        .collect()
}

/// Unit square split into `n x n` quads of two triangles each, or the unit
/// cube split into `n^3` subcubes of six tetrahedra each.
pub fn structured_simplicial_mesh(dim: usize, n: usize) -> Result<Mesh> {
    check_dim(dim)?;
    if n == 0 {
        return Err(Error::InvalidMesh(
            "grid resolution must be at least 1".into(),
        ));
    }
    let h = 1.0 / n as f64;
    let np = n + 1;
    let mut vertices = Vec::new();
    let mut cells = Vec::new();
    if dim == 2 {
        for j in 0..np {
            for i in 0..np {
                vertices.push(vec![i as f64 * h, j as f64 * h]);
            }
        }
        let id = |i: usize, j: usize| i + j * np;
        for j in 0..n {
            for i in 0..n {
                let (v00, v10, v01, v11) = (id(i, j), id(i + 1, j), id(i, j + 1), id(i + 1, j + 1));
                cells.push(vec![v00, v10, v11]);
                cells.push(vec![v00, v11, v01]);
            }
        }
    } else {
        for k in 0..np {
            for j in 0..np {
                for i in 0..np {
                    vertices.push(vec![i as f64 * h, j as f64 * h, k as f64 * h]);
                }
            }
        }
        let id = |i: usize, j: usize, k: usize| i + j * np + k * np * np;
        // Kuhn subdivision: one tetrahedron per axis permutation, walking
        // from the low corner to the high corner. Odd permutations are
        // negatively oriented, so their middle two vertices are swapped.
        const PERMS: [([usize; 3], bool); 6] = [
            ([0, 1, 2], false),
            ([0, 2, 1], true),
            ([1, 0, 2], true),
            ([1, 2, 0], false),
            ([2, 0, 1], false),
            ([2, 1, 0], true),
        ];
        for k in 0..n {
            for j in 0..n {
                for i in 0..n {
                    for (perm, odd) in PERMS {
                        let mut corner = [i, j, k];
                        let mut tet = vec![id(corner[0], corner[1], corner[2])];
                        for axis in perm {
                            corner[axis] += 1;
                            tet.push(id(corner[0], corner[1], corner[2]));
                        }
                        if odd {
                            tet.swap(1, 2);
                        }
                        cells.push(tet);
                    }
                }
            }
        }
    }
    Mesh::new(dim, vertices, cells)
}

/// Displaces interior vertices by uniform offsets in `[-m h, m h]` per
/// coordinate, where `h` is the shortest edge touching the vertex.
/// Vertices on the bounding box are kept in place.
pub fn jitter_mesh(mesh: &Mesh, magnitude: f64, seed: u64) -> Result<Mesh> {
    if !(0.0..=MAX_JITTER).contains(&magnitude) {
        return Err(Error::InvalidConfig(format!(
            "jitter magnitude {magnitude} outside [0, {MAX_JITTER}]"
        )));
    }
    if magnitude == 0.0 {
        return Ok(mesh.clone());
    }
    let dim = mesh.dim;
    let mut lo = vec![f64::INFINITY; dim];
    let mut hi = vec![f64::NEG_INFINITY; dim];
    for v in &mesh.vertices {
        for d in 0..dim {
            lo[d] = lo[d].min(v[d]);
            hi[d] = hi[d].max(v[d]);
        }
    }
    let mut spacing = vec![f64::INFINITY; mesh.num_vertices()];
    for cell in &mesh.cells {
        for (a, &va) in cell.iter().enumerate() {
            for &vb in &cell[a + 1..] {
                let len = dist(&mesh.vertices[va], &mesh.vertices[vb]);
                spacing[va] = spacing[va].min(len);
                spacing[vb] = spacing[vb].min(len);
            }
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = mesh.clone();
    for (v, point) in out.vertices.iter_mut().enumerate() {
        let on_boundary = (0..dim).any(|d| point[d] == lo[d] || point[d] == hi[d]);
        if on_boundary || !spacing[v].is_finite() {
            continue;
        }
        let h = spacing[v];
        for x in point.iter_mut() {
            *x += rng.random_range(-1.0..=1.0) * magnitude * h;
        }
    }
    for c in 0..out.num_elements() {
        element_jacobian(&out, c)?;
    }
    Ok(out)
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Affine map data of one cell. Matrices are stored row-major in the
/// leading `dim x dim` corner of a 3x3 array.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ElementJacobian {
    pub dim: usize,
    pub j: [[f64; 3]; 3],
    pub jinv: [[f64; 3]; 3],
    pub det: f64,
}

impl ElementJacobian {
    /// From the vertex coordinates of one cell; `cell` only labels errors.
    pub fn from_vertices(vertices: &[&[f64]], cell: usize) -> Result<Self> {
        let dim = vertices.len().saturating_sub(1);
        check_dim(dim)?;
        let mut j = [[0.0; 3]; 3];
        for col in 0..dim {
            for row in 0..dim {
                j[row][col] = vertices[col + 1][row] - vertices[0][row];
            }
        }
        let (det, adj) = if dim == 2 {
            let det = j[0][0] * j[1][1] - j[0][1] * j[1][0];
            let mut adj = [[0.0; 3]; 3];
            adj[0][0] = j[1][1];
            adj[0][1] = -j[0][1];
            adj[1][0] = -j[1][0];
            adj[1][1] = j[0][0];
            (det, adj)
        } else {
            let mut adj = [[0.0; 3]; 3];
            for r in 0..3 {
                for c in 0..3 {
                    // adj[r][c] = cofactor of j[c][r]
                    let (r1, r2) = ((c + 1) % 3, (c + 2) % 3);
                    let (c1, c2) = ((r + 1) % 3, (r + 2) % 3);
                    adj[r][c] = j[r1][c1] * j[r2][c2] - j[r1][c2] * j[r2][c1];
                }
            }
            let det = j[0][0] * adj[0][0] + j[0][1] * adj[1][0] + j[0][2] * adj[2][0];
            (det, adj)
        };
        if !(det > 0.0) {
            return Err(Error::DegenerateElement { cell, det });
        }
        let mut jinv = [[0.0; 3]; 3];
        for r in 0..dim {
            for c in 0..dim {
                jinv[r][c] = adj[r][c] / det;
            }
        }
        Ok(ElementJacobian { dim, j, jinv, det })
    }
}

pub fn element_jacobian(mesh: &Mesh, cell: usize) -> Result<ElementJacobian> {
    if cell >= mesh.num_elements() {
        return Err(Error::OutOfRange {
            index: cell,
            len: mesh.num_elements(),
        });
    }
    ElementJacobian::from_vertices(&mesh.cell_vertices(cell), cell)
}

/// `G^{mu nu} = Jinv_{mu a} Jinv_{nu a} |J|`, row-major in a 3x3 array.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeometryTensor {
    pub dim: usize,
    pub g: [[f64; 3]; 3],
}

impl GeometryTensor {
    pub fn row_major(&self) -> Vec<f64> {
        (0..self.dim * self.dim)
            .map(|m| self.g[m / self.dim][m % self.dim])
            .collect()
    }
}

pub fn geometry_tensor(jac: &ElementJacobian) -> GeometryTensor {
    let d = jac.dim;
    let mut g = [[0.0; 3]; 3];
    for mu in 0..d {
        for nu in mu..d {
            let mut s = 0.0;
            for a in 0..d {
                s += jac.jinv[mu][a] * jac.jinv[nu][a];
            }
            g[mu][nu] = s * jac.det;
            g[nu][mu] = g[mu][nu];
        }
    }
    GeometryTensor { dim: d, g }
}

/// Geometry tensors of a whole batch set, laid out so that entry
/// `(batch, element, mu, nu)` lives at
/// `batch * DIM * DIM * ELEMENT_BATCH_SIZE + element * DIM * DIM + mu * DIM + nu`.
#[derive(Debug, Clone, PartialEq)]
pub struct PackedGeometry<T> {
    pub dim: usize,
    pub element_batch_size: usize,
    pub num_elements: usize,
    pub num_batches: usize,
    pub data: Vec<T>,
}

impl<T: Scalar> PackedGeometry<T> {
    /// Start of batch `batch` (the `Goffset` of a kernel invocation).
    #[inline]
    pub fn goffset(&self, batch: usize) -> usize {
        batch * self.dim * self.dim * self.element_batch_size
    }

    #[inline]
    pub fn index(&self, batch: usize, element: usize, mu: usize, nu: usize) -> usize {
        self.goffset(batch) + element * self.dim * self.dim + mu * self.dim + nu
    }

    pub fn batch(&self, batch: usize) -> &[T] {
        let len = self.dim * self.dim * self.element_batch_size;
        &self.data[batch * len..(batch + 1) * len]
    }

    /// Row-major `G` of global element `element`.
    pub fn element(&self, element: usize) -> &[T] {
        let bs = self.element_batch_size;
        let start = self.index(element / bs, element % bs, 0, 0);
        &self.data[start..start + self.dim * self.dim]
    }

    pub fn cast<U: Scalar>(&self) -> PackedGeometry<U> {
        PackedGeometry {
            dim: self.dim,
            element_batch_size: self.element_batch_size,
            num_elements: self.num_elements,
            num_batches: self.num_batches,
            data: self.data.iter().map(|v| U::from_f64(v.as_f64())).collect(),
        }
    }
}

/// Packs precomputed row-major tensors, padding the final batch with copies
/// of the last tensor.
pub fn pack_tensors<T: Scalar>(
    dim: usize,
    tensors: &[Vec<f64>],
    element_batch_size: usize,
) -> Result<PackedGeometry<T>> {
    check_dim(dim)?;
    if element_batch_size == 0 {
        return Err(Error::InvalidConfig(
            "elementBatchSize must be positive".into(),
        ));
    }
    if let Some(bad) = tensors.iter().find(|t| t.len() != dim * dim) {
        return Err(Error::ShapeMismatch(format!(
            "tensor of length {} in a {dim}D packing",
            bad.len()
        )));
    }
    let ne = tensors.len();
    let num_batches = ne.div_ceil(element_batch_size);
    let bl = dim * dim;
    let mut data = vec![T::zero(); num_batches * element_batch_size * bl];
    data.par_chunks_mut(element_batch_size * bl)
        .enumerate()
        .for_each(|(g, chunk)| {
            for (e, slot) in chunk.chunks_mut(bl).enumerate() {
                let src = &tensors[(g * element_batch_size + e).min(ne - 1)];
                for (s, v) in slot.iter_mut().zip(src) {
                    *s = T::from_f64(*v);
                }
            }
        });
    Ok(PackedGeometry {
        dim,
        element_batch_size,
        num_elements: ne,
        num_batches,
        data,
    })
}

pub fn geometry_tensors(mesh: &Mesh) -> Result<Vec<Vec<f64>>> {
    (0..mesh.num_elements())
        .into_par_iter()
        .map(|c| element_jacobian(mesh, c).map(|j| geometry_tensor(&j).row_major()))
        .collect()
}

pub fn pack_geometry<T: Scalar>(mesh: &Mesh, config: &KernelConfig) -> Result<PackedGeometry<T>> {
    config.validate()?;
    pack_tensors(
        mesh.dim,
        &geometry_tensors(mesh)?,
        config.element_batch_size,
    )
}
