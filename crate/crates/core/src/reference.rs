//! Reference simplices, quadrature rules and P1 Lagrange tabulation.
//!
//! Vertex ordering is fixed: the origin first, then the unit points along
//! each axis. Everything downstream (connectivity, Jacobian columns, basis
//! numbering) follows from it.

use crate::{Error, Result};

/// Highest degree in the built-in quadrature table.
pub const MAX_QUADRATURE_DEGREE: usize = 3;

pub(crate) fn check_dim(dim: usize) -> Result<()> {
    match dim {
        2 | 3 => Ok(()),
        other => Err(Error::UnsupportedDimension(other)),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceCell {
    pub dim: usize,
    pub vertices: Vec<Vec<f64>>,
    pub volume: f64,
}

pub fn make_reference_cell(dim: usize) -> Result<ReferenceCell> {
    check_dim(dim)?;
    let mut vertices = vec![vec![0.0; dim]];
    for axis in 0..dim {
        let mut v = vec![0.0; dim];
        v[axis] = 1.0;
        vertices.push(v);
    }
    let volume = if dim == 2 { 1.0 / 2.0 } else { 1.0 / 6.0 };
    Ok(ReferenceCell {
        dim,
        vertices,
        volume,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuadratureRule {
    pub dim: usize,
    pub points: Vec<Vec<f64>>,
    pub weights: Vec<f64>,
    pub degree: usize,
}

impl QuadratureRule {
    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    /// Integrates `f` over the reference cell.
    pub fn integrate<F: Fn(&[f64]) -> f64>(&self, f: F) -> f64 {
        self.points
            .iter()
            .zip(&self.weights)
            .map(|(p, w)| w * f(p))
            .sum()
    }
}

/// All permutations of barycentric coordinates `bary`, dropped to the
/// `dim` reference coordinates (the first barycentric entry belongs to
/// vertex 0 and is implied).
fn orbit(bary: &[f64]) -> Vec<Vec<f64>> {
    let mut out: Vec<Vec<f64>> = Vec::new();
    let mut perm = bary.to_vec();
    permute(&mut perm, 0, &mut |p| {
        let point = p[1..].to_vec();
        if !out.contains(&point) {
            out.push(point);
        }
    });
    out
}

fn permute(items: &mut [f64], start: usize, visit: &mut dyn FnMut(&[f64])) {
    if start == items.len() {
        visit(items);
        return;
    }
    for i in start..items.len() {
        items.swap(start, i);
        permute(items, start + 1, visit);
        items.swap(start, i);
    }
}

/// Symmetric rules on the reference simplex, `(barycentric generator, weight)`
/// per orbit. Weights are in reference-measure units.
fn table(dim: usize, degree: usize) -> Vec<(Vec<f64>, f64)> {
    match (dim, degree) {
        (2, 1) => vec![(vec![1.0 / 3.0; 3], 1.0 / 2.0)],
        (2, 2) => vec![(vec![2.0 / 3.0, 1.0 / 6.0, 1.0 / 6.0], 1.0 / 6.0)],
        (2, 3) => vec![
            (vec![1.0 / 3.0; 3], -27.0 / 96.0),
            (vec![0.6, 0.2, 0.2], 25.0 / 96.0),
        ],
        (3, 1) => vec![(vec![0.25; 4], 1.0 / 6.0)],
        (3, 2) => {
            let sqrt5 = 5.0_f64.sqrt();
            let a = (5.0 + 3.0 * sqrt5) / 20.0;
            let b = (5.0 - sqrt5) / 20.0;
            vec![(vec![a, b, b, b], 1.0 / 24.0)]
        }
        (3, 3) => vec![
            (vec![0.25; 4], -2.0 / 15.0),
            (vec![0.5, 1.0 / 6.0, 1.0 / 6.0, 1.0 / 6.0], 3.0 / 40.0),
        ],
        _ => unreachable!("degree and dim are validated by the caller"),
    }
}

/// Returns the built-in rule of exactly `degree` on the reference simplex.
pub fn make_quadrature(dim: usize, degree: usize) -> Result<QuadratureRule> {
    check_dim(dim)?;
    if degree == 0 || degree > MAX_QUADRATURE_DEGREE {
        return Err(Error::UnsupportedDegree {
            requested: degree,
            max: MAX_QUADRATURE_DEGREE,
        });
    }
    let mut points = Vec::new();
    let mut weights = Vec::new();
    for (generator, weight) in table(dim, degree) {
        for p in orbit(&generator) {
            points.push(p);
            weights.push(weight);
        }
    }
    Ok(QuadratureRule {
        dim,
        points,
        weights,
        degree,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct TabulatedBasis {
    pub dim: usize,
    pub num_basis_funcs: usize,
    pub num_points: usize,
    /// `values[f * num_points + q]`
    pub values: Vec<f64>,
    /// `gradients[(f * num_points + q) * dim + mu]`, reference derivatives.
    pub gradients: Vec<f64>,
}

impl TabulatedBasis {
    #[inline]
    pub fn value(&self, func: usize, point: usize) -> f64 {
        self.values[func * self.num_points + point]
    }

    #[inline]
    pub fn gradient(&self, func: usize, point: usize) -> &[f64] {
        let start = (func * self.num_points + point) * self.dim;
        &self.gradients[start..start + self.dim]
    }
}

/// Barycentric P1 functions: phi_0 = 1 - sum(xi), phi_k = xi_{k-1}.
fn p1_value(func: usize, xi: &[f64]) -> f64 {
    if func == 0 {
        1.0 - xi.iter().sum::<f64>()
    } else {
        xi[func - 1]
    }
}

fn p1_gradient(func: usize, dim: usize) -> Vec<f64> {
    if func == 0 {
        vec![-1.0; dim]
    } else {
        let mut g = vec![0.0; dim];
        g[func - 1] = 1.0;
        g
    }
}

/// Tabulates the P1 basis at arbitrary reference points.
pub fn tabulate_p1_at(cell: &ReferenceCell, points: &[Vec<f64>]) -> Result<TabulatedBasis> {
    let dim = cell.dim;
    if let Some(bad) = points.iter().find(|p| p.len() != dim) {
        return Err(Error::DimensionMismatch {
            expected: dim,
            actual: bad.len(),
        });
    }
    let nb = dim + 1;
    let nq = points.len();
    let mut values = Vec::with_capacity(nb * nq);
    let mut gradients = Vec::with_capacity(nb * nq * dim);
    for f in 0..nb {
        let grad = p1_gradient(f, dim);
        for p in points {
            values.push(p1_value(f, p));
            gradients.extend_from_slice(&grad);
        }
    }
    Ok(TabulatedBasis {
        dim,
        num_basis_funcs: nb,
        num_points: nq,
        values,
        gradients,
    })
}

pub fn tabulate_p1_basis(cell: &ReferenceCell, rule: &QuadratureRule) -> Result<TabulatedBasis> {
    if rule.dim != cell.dim {
        return Err(Error::DimensionMismatch {
            expected: cell.dim,
            actual: rule.dim,
        });
    }
    tabulate_p1_at(cell, &rule.points)
}
