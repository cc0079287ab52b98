//! Analytic tensors `K` for the supported bilinear forms.
//!
//! `K` is integrated once on the reference cell in double precision. Blocks
//! are indexed by `Kidx = i + j * KROWS` (test index `i`, trial index `j`),
//! then by the coefficient index `k` for weighted forms, and each block is a
//! row-major `dim x dim` matrix over `(mu, nu)`.

use std::fmt::{self, Display, Write as _};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::reference::{
    check_dim, make_quadrature, make_reference_cell, tabulate_p1_basis, QuadratureRule,
    TabulatedBasis,
};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Operator {
    Laplacian,
    Elasticity,
    WeightedLaplacian,
}

impl Operator {
    pub const ALL: [Operator; 3] = [
        Operator::Laplacian,
        Operator::Elasticity,
        Operator::WeightedLaplacian,
    ];
}

impl Display for Operator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Operator::Laplacian => "laplacian",
            Operator::Elasticity => "elasticity",
            Operator::WeightedLaplacian => "weighted-laplacian",
        })
    }
}

impl FromStr for Operator {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "laplacian" => Ok(Operator::Laplacian),
            "elasticity" => Ok(Operator::Elasticity),
            "weighted-laplacian" => Ok(Operator::WeightedLaplacian),
            other => Err(format!("unknown operator '{other}'")),
        }
    }
}

/// Shape information of a form: which operator, in which dimension, and the
/// derived sizes every other module indexes with.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct FormSpec {
    pub operator: Operator,
    pub dim: usize,
    pub num_components: usize,
    pub num_basis_funcs: usize,
    pub coefficient_arity: usize,
    pub geometry_arity: usize,
}

impl FormSpec {
    pub fn new(operator: Operator, dim: usize) -> Result<Self> {
        check_dim(dim)?;
        let num_components = match operator {
            Operator::Elasticity => dim,
            _ => 1,
        };
        let coefficient_arity = match operator {
            Operator::WeightedLaplacian => 1,
            _ => 0,
        };
        Ok(FormSpec {
            operator,
            dim,
            num_components,
            num_basis_funcs: dim + 1,
            coefficient_arity,
            geometry_arity: 2,
        })
    }

    /// Rows (and columns) of one element matrix.
    #[inline]
    pub fn krows(&self) -> usize {
        self.num_basis_funcs * self.num_components
    }

    /// Number of coefficient slots per `(i, j)` block: `numBasisFuncs^arity`.
    #[inline]
    pub fn num_coefficients(&self) -> usize {
        self.num_basis_funcs.pow(self.coefficient_arity as u32)
    }

    #[inline]
    pub fn block_len(&self) -> usize {
        self.dim * self.dim
    }

    pub fn k_len(&self) -> usize {
        self.krows() * self.krows() * self.num_coefficients() * self.block_len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnalyticTensor {
    pub spec: FormSpec,
    pub blocks: Vec<f64>,
}

impl AnalyticTensor {
    /// Start of the `(mu, nu)` block for block index `kidx` and coefficient
    /// `k` (`k = 0` for unweighted forms), i.e. `Kidx * DIM * DIM` when there
    /// is no coefficient.
    #[inline]
    pub fn koffset(&self, kidx: usize, k: usize) -> usize {
        (kidx * self.spec.num_coefficients() + k) * self.spec.block_len()
    }

    pub fn block(&self, i: usize, j: usize) -> &[f64] {
        self.block_k(i, j, 0)
    }

    pub fn block_k(&self, i: usize, j: usize, k: usize) -> &[f64] {
        let start = self.koffset(i + j * self.spec.krows(), k);
        &self.blocks[start..start + self.spec.block_len()]
    }

    /// Plain-text dump, one block per stanza with row-major rows.
    pub fn dump(&self) -> String {
        let spec = &self.spec;
        let d = spec.dim;
        let n = spec.krows();
        let mut out = String::new();
        let _ = writeln!(out, "# {} dim={} krows={}", spec.operator, d, n);
        for j in 0..n {
            for i in 0..n {
                for k in 0..spec.num_coefficients() {
                    if spec.coefficient_arity == 0 {
                        let _ = writeln!(out, "block {i} {j}");
                    } else {
                        let _ = writeln!(out, "block {i} {j} {k}");
                    }
                    let b = self.block_k(i, j, k);
                    for row in b.chunks(d) {
                        let line: Vec<String> = row.iter().map(|v| format!("{v:?}")).collect();
                        let _ = writeln!(out, "{}", line.join(" "));
                    }
                    out.push('\n');
                }
            }
        }
        out
    }
}

/// One factor of a basis-jet product: the value of a basis function, or one
/// of its reference-space first derivatives.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Jet {
    Value,
    Derivative,
}

/// Result of [`integrate_jet_product`]. Indices run over the free basis
/// index of every factor (in factor order), then over the free derivative
/// direction of every derivative factor (in factor order), row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct JetTensor {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl JetTensor {
    pub fn get(&self, index: &[usize]) -> f64 {
        let mut flat = 0;
        for (i, n) in index.iter().zip(&self.shape) {
            flat = flat * n + i;
        }
        self.data[flat]
    }
}

/// Quadrature of a product of P1 basis values and reference derivatives,
/// one scalar per combination of free basis indices and free directions.
pub fn integrate_jet_product(
    basis: &TabulatedBasis,
    rule: &QuadratureRule,
    factors: &[Jet],
) -> Result<JetTensor> {
    if factors.is_empty() {
        return Err(Error::ShapeMismatch(
            "jet product needs at least one factor".into(),
        ));
    }
    if basis.dim != rule.dim {
        return Err(Error::DimensionMismatch {
            expected: basis.dim,
            actual: rule.dim,
        });
    }
    if basis.num_points != rule.len() {
        return Err(Error::ShapeMismatch(format!(
            "basis tabulated at {} points, rule has {}",
            basis.num_points,
            rule.len()
        )));
    }
    // P1 values are linear and P1 derivatives constant.
    let required = factors.iter().filter(|f| **f == Jet::Value).count();
    if rule.degree < required {
        return Err(Error::InsufficientDegree {
            required,
            available: rule.degree,
        });
    }

    let nb = basis.num_basis_funcs;
    let dim = basis.dim;
    let derivs: Vec<usize> = factors
        .iter()
        .enumerate()
        .filter(|(_, f)| **f == Jet::Derivative)
        .map(|(slot, _)| slot)
        .collect();
    let mut shape = vec![nb; factors.len()];
    shape.extend(std::iter::repeat_n(dim, derivs.len()));
    let total: usize = shape.iter().product();

    let mut data = vec![0.0; total];
    let mut index = vec![0usize; shape.len()];
    for slot in data.iter_mut() {
        let funcs = &index[..factors.len()];
        let dirs = &index[factors.len()..];
        *slot = rule
            .weights
            .iter()
            .enumerate()
            .map(|(q, w)| {
                let mut dir = dirs.iter();
                let prod: f64 = factors
                    .iter()
                    .zip(funcs)
                    .map(|(jet, &f)| match jet {
                        Jet::Value => basis.value(f, q),
                        Jet::Derivative => basis.gradient(f, q)[*dir.next().unwrap()],
                    })
                    .product();
                w * prod
            })
            .sum();
        // odometer increment, last index fastest
        for pos in (0..index.len()).rev() {
            index[pos] += 1;
            if index[pos] < shape[pos] {
                break;
            }
            index[pos] = 0;
        }
    }
    Ok(JetTensor { shape, data })
}

fn reference_data(dim: usize, degree: usize) -> Result<(TabulatedBasis, QuadratureRule)> {
    let cell = make_reference_cell(dim)?;
    let rule = make_quadrature(dim, degree)?;
    let basis = tabulate_p1_basis(&cell, &rule)?;
    Ok((basis, rule))
}

/// `K^{ij}_{mu nu} = int d(phi_i)/d(xi_mu) d(phi_j)/d(xi_nu)`.
pub fn build_k_laplacian(dim: usize) -> Result<AnalyticTensor> {
    let spec = FormSpec::new(Operator::Laplacian, dim)?;
    let (basis, rule) = reference_data(dim, 1)?;
    let t = integrate_jet_product(&basis, &rule, &[Jet::Derivative, Jet::Derivative])?;
    let n = spec.krows();
    let mut blocks = vec![0.0; spec.k_len()];
    for j in 0..n {
        for i in 0..n {
            for mu in 0..dim {
                for nu in 0..dim {
                    blocks[(i + j * n) * dim * dim + mu * dim + nu] = t.get(&[i, j, mu, nu]);
                }
            }
        }
    }
    Ok(AnalyticTensor { spec, blocks })
}

/// Vector P1 elasticity with multi-index `i = a + c * numBasisFuncs`
/// (scalar function `a`, component `c`):
/// `K^{(a,c)(b,d)}_{mu nu} = 1/4 delta_cd int d(phi_a)/d(xi_mu) d(phi_b)/d(xi_nu)`.
pub fn build_k_elasticity(dim: usize) -> Result<AnalyticTensor> {
    let spec = FormSpec::new(Operator::Elasticity, dim)?;
    let scalar = build_k_laplacian(dim)?;
    let nb = spec.num_basis_funcs;
    let n = spec.krows();
    let bl = spec.block_len();
    let mut blocks = vec![0.0; spec.k_len()];
    for c_trial in 0..dim {
        for b in 0..nb {
            for c_test in 0..dim {
                for a in 0..nb {
                    if c_test != c_trial {
                        continue;
                    }
                    let i = a + c_test * nb;
                    let j = b + c_trial * nb;
                    let src = scalar.block(a, b);
                    let dst = &mut blocks[(i + j * n) * bl..(i + j * n + 1) * bl];
                    for (d, s) in dst.iter_mut().zip(src) {
                        *d = 0.25 * s;
                    }
                }
            }
        }
    }
    Ok(AnalyticTensor { spec, blocks })
}

/// `K^{ijk}_{mu nu} = int phi_k d(phi_i)/d(xi_mu) d(phi_j)/d(xi_nu)`.
pub fn build_k_weighted_laplacian(dim: usize) -> Result<AnalyticTensor> {
    let spec = FormSpec::new(Operator::WeightedLaplacian, dim)?;
    let (basis, rule) = reference_data(dim, 1)?;
    let t = integrate_jet_product(
        &basis,
        &rule,
        &[Jet::Derivative, Jet::Derivative, Jet::Value],
    )?;
    let n = spec.krows();
    let nb = spec.num_basis_funcs;
    let mut blocks = vec![0.0; spec.k_len()];
    for j in 0..n {
        for i in 0..n {
            for k in 0..nb {
                for mu in 0..dim {
                    for nu in 0..dim {
                        let at = ((i + j * n) * nb + k) * dim * dim + mu * dim + nu;
                        blocks[at] = t.get(&[i, j, k, mu, nu]);
                    }
                }
            }
        }
    }
    Ok(AnalyticTensor { spec, blocks })
}

pub fn build_k(spec: &FormSpec) -> Result<AnalyticTensor> {
    match spec.operator {
        Operator::Laplacian => build_k_laplacian(spec.dim),
        Operator::Elasticity => build_k_elasticity(spec.dim),
        Operator::WeightedLaplacian => build_k_weighted_laplacian(spec.dim),
    }
}
