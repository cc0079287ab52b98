//! Ground truth by direct quadrature in physical space.
//!
//! Nothing here touches the analytic or geometry tensors: each entry is the
//! quadrature of the operator's integrand with physical gradients
//! `Jinv^T * (reference gradient)` and the `|J|` weight, per point, per
//! element. It is deliberately the slow, obvious route.

use rayon::prelude::*;

use crate::engine::{CoefficientField, ElementMatrixStore, KernelConfig};
use crate::forms::{FormSpec, Operator};
use crate::geometry::{ElementJacobian, Mesh};
use crate::reference::{make_quadrature, make_reference_cell, tabulate_p1_basis};
use crate::{Error, Result, Scalar};

/// Denominator floor of the relative error.
pub const SCALE_FLOOR: f64 = 1e-14;

#[derive(Debug, Clone, PartialEq)]
pub struct OracleReport {
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    /// Largest `|engine - oracle|` over the element's largest oracle entry.
    /// Diagnostic only; `passed` is decided by `max_rel_error`.
    pub max_scaled_error: f64,
    pub worst_element: usize,
    pub worst_entry: (usize, usize),
    pub tolerance: f64,
    pub passed: bool,
}

fn quadrature_degree(op: Operator) -> usize {
    match op {
        Operator::Laplacian | Operator::Elasticity => 2,
        Operator::WeightedLaplacian => 3,
    }
}

/// Element matrix of one cell from its vertex coordinates, row-major
/// `KROWS x KROWS`.
pub fn assemble_element_direct(
    spec: &FormSpec,
    vertices: &[&[f64]],
    w: Option<&[f64]>,
) -> Result<Vec<f64>> {
    let dim = spec.dim;
    if vertices.len() != dim + 1 || vertices.iter().any(|v| v.len() != dim) {
        return Err(Error::ShapeMismatch(format!(
            "a {dim}D element needs {} vertices of {dim} coordinates",
            dim + 1
        )));
    }
    let weighted = spec.operator == Operator::WeightedLaplacian;
    match (weighted, w) {
        (true, Some(w)) if w.len() == spec.num_basis_funcs => {}
        (true, _) => {
            return Err(Error::ShapeMismatch(
                "weighted form needs one value per vertex".into(),
            ))
        }
        (false, Some(_)) => return Err(Error::ShapeMismatch("form takes no coefficient".into())),
        (false, None) => {}
    }
    let jac = ElementJacobian::from_vertices(vertices, 0)?;
    let cell = make_reference_cell(dim)?;
    let rule = make_quadrature(dim, quadrature_degree(spec.operator))?;
    let basis = tabulate_p1_basis(&cell, &rule)?;
    let nb = spec.num_basis_funcs;
    let n = spec.krows();

    let mut a = vec![0.0; n * n];
    for (q, weight) in rule.weights.iter().enumerate() {
        // physical gradients of the scalar basis at this point
        let grads: Vec<Vec<f64>> = (0..nb)
            .map(|f| {
                let rg = basis.gradient(f, q);
                (0..dim)
                    .map(|alpha| (0..dim).map(|mu| jac.jinv[mu][alpha] * rg[mu]).sum())
                    .collect()
            })
            .collect();
        let dx = weight * jac.det;
        match spec.operator {
            Operator::Laplacian => {
                for i in 0..nb {
                    for j in 0..nb {
                        a[i * n + j] += dot(&grads[i], &grads[j]) * dx;
                    }
                }
            }
            Operator::WeightedLaplacian => {
                let w = w.unwrap();
                let wq: f64 = (0..nb).map(|k| w[k] * basis.value(k, q)).sum();
                for i in 0..nb {
                    for j in 0..nb {
                        a[i * n + j] += wq * dot(&grads[i], &grads[j]) * dx;
                    }
                }
            }
            Operator::Elasticity => {
                // vector basis (a, c): component c carries phi_a
                let vector_grad = |idx: usize, alpha: usize| -> Vec<f64> {
                    let (f, c) = (idx % nb, idx / nb);
                    if c == alpha {
                        grads[f].clone()
                    } else {
                        vec![0.0; dim]
                    }
                };
                for i in 0..n {
                    for j in 0..n {
                        let s: f64 = (0..dim)
                            .map(|alpha| dot(&vector_grad(i, alpha), &vector_grad(j, alpha)))
                            .sum();
                        a[i * n + j] += 0.25 * s * dx;
                    }
                }
            }
        }
    }
    Ok(a)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Compares every real element of `store` with the direct integration.
pub fn verify<T: Scalar>(
    store: &ElementMatrixStore<T>,
    mesh: &Mesh,
    spec: &FormSpec,
    config: &KernelConfig,
    w: Option<&CoefficientField>,
    tolerance: f64,
) -> Result<OracleReport> {
    if store.num_elements != mesh.num_elements()
        || store.dim != mesh.dim
        || store.krows != spec.krows()
        || store.element_batch_size != config.element_batch_size
        || store.num_concurrent_elements != config.num_concurrent_elements
    {
        return Err(Error::ShapeMismatch(
            "store was not produced for this mesh, form and configuration".into(),
        ));
    }
    if let Some(w) = w {
        if w.num_elements() != mesh.num_elements() {
            return Err(Error::ShapeMismatch(
                "coefficient field does not cover the mesh".into(),
            ));
        }
    }
    let n = spec.krows();
    // (rel, abs, element, i, j, scaled), reduced by max rel, ties to the lowest element
    let worst = (0..mesh.num_elements())
        .into_par_iter()
        .map(|e| -> Result<(f64, f64, usize, usize, usize, f64)> {
            let verts = mesh.cell_vertices(e);
            let want = assemble_element_direct(spec, &verts, w.map(|w| w.element(e)))?;
            let got = store.element_matrix(e)?;
            let scale = want.iter().fold(SCALE_FLOOR, |m, v| m.max(v.abs()));
            let mut best = (0.0f64, 0.0f64, e, 0usize, 0usize, 0.0f64);
            for i in 0..n {
                for j in 0..n {
                    let (g, r): (f64, f64) = (got[i * n + j], want[i * n + j]);
                    let abs = (g - r).abs();
                    let rel = abs / r.abs().max(SCALE_FLOOR);
                    // NaN from a broken engine must fail, not vanish in max()
                    let (rel, abs) = if rel.is_nan() {
                        (f64::INFINITY, f64::INFINITY)
                    } else {
                        (rel, abs)
                    };
                    best.1 = best.1.max(abs);
                    best.5 = best.5.max(abs / scale);
                    if rel > best.0 {
                        best.0 = rel;
                        best.3 = i;
                        best.4 = j;
                    }
                }
            }
            Ok(best)
        })
        .try_reduce(
            || (0.0, 0.0, usize::MAX, 0, 0, 0.0),
            |a, b| {
                let (abs, scaled) = (a.1.max(b.1), a.5.max(b.5));
                let pick_b = b.0 > a.0 || (b.0 == a.0 && b.2 < a.2);
                let mut out = if pick_b { b } else { a };
                out.1 = abs;
                out.5 = scaled;
                Ok(out)
            },
        )?;
    let (rel, abs, element, i, j, scaled) = worst;
    Ok(OracleReport {
        max_rel_error: rel,
        max_abs_error: abs,
        max_scaled_error: scaled,
        worst_element: if element == usize::MAX { 0 } else { element },
        worst_entry: (i, j),
        tolerance,
        passed: rel <= tolerance,
    })
}
