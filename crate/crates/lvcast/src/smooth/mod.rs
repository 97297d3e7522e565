//! Design-matrix blocks for additive predictors: penalized B-splines, cyclic
//! splines, varying-coefficient terms, tensor interactions, and the plain
//! linear/dummy terms alongside them.
//!
//! Every smooth block is made identifiable with a sum-to-zero constraint
//! applied by null-space reparameterization: the raw basis B with constraint
//! c'beta = 0 becomes B*Z with Z an orthonormal basis of the null space of
//! c'. Raw column sums over the training rows serve as c for smooths (so the
//! fitted curve sums to zero over the data); plain coefficient sums serve for
//! dummy groups that would otherwise alias the intercept.

mod bspline;

pub use bspline::BasisDef;

use crate::error::{Error, Result};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

/// Default spline degree (cubic) and difference-penalty order.
pub const DEFAULT_DEGREE: usize = 3;
pub const DEFAULT_PENALTY_ORDER: usize = 2;

/// Named access to covariate columns.
pub trait ColumnSource {
    fn column(&self, name: &str) -> Result<&[f64]>;
    fn nrows(&self) -> usize;
}

/// A plain map of named columns; convenient for tests and small fits.
#[derive(Clone, Debug, Default)]
pub struct ColumnMap {
    pub nrows: usize,
    pub cols: BTreeMap<String, Vec<f64>>,
}

impl ColumnMap {
    pub fn new(nrows: usize) -> Self {
        ColumnMap {
            nrows,
            cols: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, name: &str, values: Vec<f64>) -> &mut Self {
        assert_eq!(values.len(), self.nrows);
        self.cols.insert(name.to_string(), values);
        self
    }
}

impl ColumnSource for ColumnMap {
    fn column(&self, name: &str) -> Result<&[f64]> {
        self.cols
            .get(name)
            .map(|v| v.as_slice())
            .ok_or_else(|| Error::MissingCovariate(name.to_string()))
    }
    fn nrows(&self) -> usize {
        self.nrows
    }
}

/// Specification of one term in an additive predictor.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TermSpec {
    Intercept,
    /// Single covariate column.
    Linear { col: String },
    /// Categorical covariate with values 0..levels, coded sum-to-zero.
    Dummy { col: String, levels: usize },
    /// Per-period coefficients on a covariate (one dummy interaction per
    /// half-hour), coefficients constrained to sum to zero so the companion
    /// linear term stays identifiable.
    PeriodInteraction { col: String, periods: usize },
    /// Penalized B-spline.
    Pb { col: String, k: usize, order: usize },
    /// Cyclic penalized B-spline with the given period.
    Pbc {
        col: String,
        k: usize,
        order: usize,
        period: f64,
    },
    /// Factor-by varying coefficient: one centered smooth of `col` per level
    /// of `by`, plus sum-to-zero level contrasts carrying the level means.
    Pvc {
        col: String,
        k: usize,
        order: usize,
        by: String,
        levels: usize,
    },
    /// Varying coefficient with a continuous multiplier.
    PvcNumeric {
        col: String,
        k: usize,
        order: usize,
        mult: String,
    },
    /// Tensor-product interaction of two marginal smooths; the second
    /// marginal is cyclic when `cyclic2_period` is set.
    Tensor {
        col1: String,
        k1: usize,
        col2: String,
        k2: usize,
        order: usize,
        cyclic2_period: Option<f64>,
    },
}

impl TermSpec {
    pub fn pb(col: &str, k: usize) -> Self {
        TermSpec::Pb {
            col: col.to_string(),
            k,
            order: DEFAULT_PENALTY_ORDER,
        }
    }

    pub fn pbc(col: &str, k: usize, period: f64) -> Self {
        TermSpec::Pbc {
            col: col.to_string(),
            k,
            order: DEFAULT_PENALTY_ORDER,
            period,
        }
    }

    pub fn linear(col: &str) -> Self {
        TermSpec::Linear {
            col: col.to_string(),
        }
    }

    /// True when the term carries at least one smoothing penalty.
    pub fn is_penalized(&self) -> bool {
        matches!(
            self,
            TermSpec::Pb { .. }
                | TermSpec::Pbc { .. }
                | TermSpec::Pvc { .. }
                | TermSpec::PvcNumeric { .. }
                | TermSpec::Tensor { .. }
        )
    }
}

/// One penalty acting on a sub-range of a block's columns.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BlockPenalty {
    pub offset: usize,
    pub s: DMatrix<f64>,
}

/// Everything needed to rebuild a block's columns on new data.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub enum BlockTransform {
    Intercept,
    Linear {
        col: String,
    },
    Dummy {
        col: String,
        levels: usize,
        z: DMatrix<f64>,
    },
    PeriodInteraction {
        col: String,
        periods: usize,
        z: DMatrix<f64>,
    },
    Smooth {
        col: String,
        basis: BasisDef,
        z: DMatrix<f64>,
    },
    PvcNumeric {
        col: String,
        mult: String,
        basis: BasisDef,
        z: DMatrix<f64>,
    },
    Pvc {
        col: String,
        by: String,
        levels: usize,
        basis: BasisDef,
        contrast_z: DMatrix<f64>,
        level_z: Vec<DMatrix<f64>>,
    },
    Tensor {
        col1: String,
        col2: String,
        basis1: BasisDef,
        basis2: BasisDef,
        z: DMatrix<f64>,
    },
}

/// A built design block: transformed columns plus local penalties.
#[derive(Clone, Debug)]
pub struct BuiltBlock {
    pub x: DMatrix<f64>,
    pub penalties: Vec<BlockPenalty>,
    pub transform: BlockTransform,
}

/// Orthonormal basis of the null space of c' (K x (K-1)), via one Householder
/// reflection. Returns identity-like passthrough when c is numerically zero.
fn nullspace_of(c: &[f64]) -> DMatrix<f64> {
    let k = c.len();
    let norm = c.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm < 1e-300 {
        // degenerate constraint; keep the block as-is
        return DMatrix::identity(k, k);
    }
    let mut v: Vec<f64> = c.to_vec();
    let sign = if c[0] >= 0.0 { 1.0 } else { -1.0 };
    v[0] += sign * norm;
    let vtv: f64 = v.iter().map(|x| x * x).sum();
    let mut z = DMatrix::zeros(k, k - 1);
    for j in 1..k {
        for i in 0..k {
            let h = (if i == j { 1.0 } else { 0.0 }) - 2.0 * v[i] * v[j] / vtv;
            z[(i, j - 1)] = h;
        }
    }
    z
}

fn column_sums(m: &DMatrix<f64>) -> Vec<f64> {
    (0..m.ncols()).map(|j| m.column(j).sum()).collect()
}

fn transform_penalty(s: &DMatrix<f64>, z: &DMatrix<f64>) -> DMatrix<f64> {
    z.transpose() * s * z
}

fn one_hot(values: &[f64], levels: usize, name: &str) -> Result<DMatrix<f64>> {
    let mut m = DMatrix::zeros(values.len(), levels);
    for (i, &v) in values.iter().enumerate() {
        let l = v as usize;
        if v < 0.0 || v.fract() != 0.0 || l >= levels {
            return Err(Error::Domain(format!(
                "column '{name}' row {i}: level {v} outside 0..{levels}"
            )));
        }
        m[(i, l)] = 1.0;
    }
    Ok(m)
}

fn smooth_basis_def(xs: &[f64], k: usize, period: Option<f64>) -> Result<BasisDef> {
    match period {
        Some(p) => Ok(BasisDef::cyclic(0.0, p, k, DEFAULT_DEGREE)),
        None => {
            let lo = xs.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            if !(hi > lo) {
                return Err(Error::Domain(
                    "constant covariate cannot carry a smooth term".into(),
                ));
            }
            Ok(BasisDef::open(lo, hi, k, DEFAULT_DEGREE))
        }
    }
}

fn period_interaction_raw(
    periods: usize,
    period_col: &[f64],
    mult: &[f64],
) -> Result<DMatrix<f64>> {
    let mut m = DMatrix::zeros(period_col.len(), periods);
    for i in 0..period_col.len() {
        let h = period_col[i] as usize;
        if !(1..=periods).contains(&h) {
            return Err(Error::Domain(format!(
                "period value {} outside 1..={periods}",
                period_col[i]
            )));
        }
        m[(i, h - 1)] = mult[i];
    }
    Ok(m)
}

fn tensor_raw(b1: &DMatrix<f64>, b2: &DMatrix<f64>) -> DMatrix<f64> {
    let (n, k1, k2) = (b1.nrows(), b1.ncols(), b2.ncols());
    let mut m = DMatrix::zeros(n, k1 * k2);
    for i in 0..n {
        for j1 in 0..k1 {
            let v1 = b1[(i, j1)];
            if v1 == 0.0 {
                continue;
            }
            for j2 in 0..k2 {
                m[(i, j1 * k2 + j2)] = v1 * b2[(i, j2)];
            }
        }
    }
    m
}

/// Kronecker-structured marginal penalties for a tensor block.
fn tensor_penalties(s1: &DMatrix<f64>, s2: &DMatrix<f64>, k1: usize, k2: usize) -> [DMatrix<f64>; 2] {
    let mut p1 = DMatrix::zeros(k1 * k2, k1 * k2);
    let mut p2 = DMatrix::zeros(k1 * k2, k1 * k2);
    for a in 0..k1 {
        for b in 0..k1 {
            let v = s1[(a, b)];
            if v != 0.0 {
                for j in 0..k2 {
                    p1[(a * k2 + j, b * k2 + j)] += v;
                }
            }
        }
    }
    for a in 0..k2 {
        for b in 0..k2 {
            let v = s2[(a, b)];
            if v != 0.0 {
                for j in 0..k1 {
                    p2[(j * k2 + a, j * k2 + b)] += v;
                }
            }
        }
    }
    [p1, p2]
}

/// Build one design block from training data.
pub fn build_block(term: &TermSpec, data: &dyn ColumnSource) -> Result<BuiltBlock> {
    let n = data.nrows();
    match term {
        TermSpec::Intercept => Ok(BuiltBlock {
            x: DMatrix::from_element(n, 1, 1.0),
            penalties: vec![],
            transform: BlockTransform::Intercept,
        }),
        TermSpec::Linear { col } => {
            let xs = data.column(col)?;
            Ok(BuiltBlock {
                x: DMatrix::from_column_slice(n, 1, xs),
                penalties: vec![],
                transform: BlockTransform::Linear { col: col.clone() },
            })
        }
        TermSpec::Dummy { col, levels } => {
            let raw = one_hot(data.column(col)?, *levels, col)?;
            let z = nullspace_of(&vec![1.0; *levels]);
            Ok(BuiltBlock {
                x: raw * &z,
                penalties: vec![],
                transform: BlockTransform::Dummy {
                    col: col.clone(),
                    levels: *levels,
                    z,
                },
            })
        }
        TermSpec::PeriodInteraction { col, periods } => {
            let raw = period_interaction_raw(*periods, data.column("period")?, data.column(col)?)?;
            let z = nullspace_of(&vec![1.0; *periods]);
            Ok(BuiltBlock {
                x: raw * &z,
                penalties: vec![],
                transform: BlockTransform::PeriodInteraction {
                    col: col.clone(),
                    periods: *periods,
                    z,
                },
            })
        }
        TermSpec::Pb { col, k, order } | TermSpec::Pbc { col, k, order, .. } => {
            let period = match term {
                TermSpec::Pbc { period, .. } => Some(*period),
                _ => None,
            };
            let xs = data.column(col)?;
            let basis = smooth_basis_def(xs, *k, period)?;
            let raw = basis.design(xs);
            let z = nullspace_of(&column_sums(&raw));
            let s = transform_penalty(&basis.penalty(*order), &z);
            Ok(BuiltBlock {
                x: raw * &z,
                penalties: vec![BlockPenalty { offset: 0, s }],
                transform: BlockTransform::Smooth {
                    col: col.clone(),
                    basis,
                    z,
                },
            })
        }
        TermSpec::PvcNumeric {
            col,
            k,
            order,
            mult,
        } => {
            let xs = data.column(col)?;
            let ms = data.column(mult)?;
            let basis = smooth_basis_def(xs, *k, None)?;
            let mut raw = basis.design(xs);
            for i in 0..n {
                let scale = ms[i];
                for j in 0..raw.ncols() {
                    raw[(i, j)] *= scale;
                }
            }
            let z = nullspace_of(&column_sums(&raw));
            let s = transform_penalty(&basis.penalty(*order), &z);
            Ok(BuiltBlock {
                x: raw * &z,
                penalties: vec![BlockPenalty { offset: 0, s }],
                transform: BlockTransform::PvcNumeric {
                    col: col.clone(),
                    mult: mult.clone(),
                    basis,
                    z,
                },
            })
        }
        TermSpec::Pvc {
            col,
            k,
            order,
            by,
            levels,
        } => {
            let xs = data.column(col)?;
            let by_vals = data.column(by)?;
            let basis = smooth_basis_def(xs, *k, None)?;
            let raw = basis.design(xs);
            let s_raw = basis.penalty(*order);
            let contrast_z = nullspace_of(&vec![1.0; *levels]);
            let contrasts = one_hot(by_vals, *levels, by)? * &contrast_z;

            let mut level_z = Vec::with_capacity(*levels);
            let mut blocks: Vec<DMatrix<f64>> = vec![contrasts];
            let mut penalties = Vec::new();
            let mut offset = *levels - 1;
            for level in 0..*levels {
                let mut masked = raw.clone();
                for i in 0..n {
                    if by_vals[i] as usize != level {
                        masked.row_mut(i).fill(0.0);
                    }
                }
                let z = nullspace_of(&column_sums(&masked));
                let s = transform_penalty(&s_raw, &z);
                penalties.push(BlockPenalty { offset, s });
                offset += z.ncols();
                blocks.push(masked * &z);
                level_z.push(z);
            }
            let total: usize = blocks.iter().map(|b| b.ncols()).sum();
            let mut x = DMatrix::zeros(n, total);
            let mut at = 0;
            for b in &blocks {
                x.view_mut((0, at), (n, b.ncols())).copy_from(b);
                at += b.ncols();
            }
            Ok(BuiltBlock {
                x,
                penalties,
                transform: BlockTransform::Pvc {
                    col: col.clone(),
                    by: by.clone(),
                    levels: *levels,
                    basis,
                    contrast_z,
                    level_z,
                },
            })
        }
        TermSpec::Tensor {
            col1,
            k1,
            col2,
            k2,
            order,
            cyclic2_period,
        } => {
            let x1 = data.column(col1)?;
            let x2 = data.column(col2)?;
            let basis1 = smooth_basis_def(x1, *k1, None)?;
            let basis2 = smooth_basis_def(x2, *k2, *cyclic2_period)?;
            let raw = tensor_raw(&basis1.design(x1), &basis2.design(x2));
            let z = nullspace_of(&column_sums(&raw));
            let [p1, p2] = tensor_penalties(
                &basis1.penalty(*order),
                &basis2.penalty(*order),
                *k1,
                *k2,
            );
            Ok(BuiltBlock {
                x: raw * &z,
                penalties: vec![
                    BlockPenalty {
                        offset: 0,
                        s: transform_penalty(&p1, &z),
                    },
                    BlockPenalty {
                        offset: 0,
                        s: transform_penalty(&p2, &z),
                    },
                ],
                transform: BlockTransform::Tensor {
                    col1: col1.clone(),
                    col2: col2.clone(),
                    basis1,
                    basis2,
                    z,
                },
            })
        }
    }
}

/// Rebuild a block's columns on new data using the stored transform.
/// Covariates feeding open bases are clamped to the training range.
pub fn eval_transform(t: &BlockTransform, data: &dyn ColumnSource) -> Result<DMatrix<f64>> {
    let n = data.nrows();
    match t {
        BlockTransform::Intercept => Ok(DMatrix::from_element(n, 1, 1.0)),
        BlockTransform::Linear { col } => {
            Ok(DMatrix::from_column_slice(n, 1, data.column(col)?))
        }
        BlockTransform::Dummy { col, levels, z } => {
            Ok(one_hot(data.column(col)?, *levels, col)? * z)
        }
        BlockTransform::PeriodInteraction { col, periods, z } => Ok(period_interaction_raw(
            *periods,
            data.column("period")?,
            data.column(col)?,
        )? * z),
        BlockTransform::Smooth { col, basis, z } => Ok(basis.design(data.column(col)?) * z),
        BlockTransform::PvcNumeric {
            col,
            mult,
            basis,
            z,
        } => {
            let ms = data.column(mult)?;
            let mut raw = basis.design(data.column(col)?);
            for i in 0..n {
                let scale = ms[i];
                for j in 0..raw.ncols() {
                    raw[(i, j)] *= scale;
                }
            }
            Ok(raw * z)
        }
        BlockTransform::Pvc {
            col,
            by,
            levels,
            basis,
            contrast_z,
            level_z,
        } => {
            let by_vals = data.column(by)?;
            let raw = basis.design(data.column(col)?);
            let total = (levels - 1) + level_z.iter().map(|z| z.ncols()).sum::<usize>();
            let mut x = DMatrix::zeros(n, total);
            x.view_mut((0, 0), (n, levels - 1))
                .copy_from(&(one_hot(by_vals, *levels, by)? * contrast_z));
            let mut at = levels - 1;
            for (level, z) in level_z.iter().enumerate() {
                let mut masked = raw.clone();
                for i in 0..n {
                    if by_vals[i] as usize != level {
                        masked.row_mut(i).fill(0.0);
                    }
                }
                let b = masked * z;
                x.view_mut((0, at), (n, b.ncols())).copy_from(&b);
                at += b.ncols();
            }
            Ok(x)
        }
        BlockTransform::Tensor {
            col1,
            col2,
            basis1,
            basis2,
            z,
        } => {
            let raw = tensor_raw(
                &basis1.design(data.column(col1)?),
                &basis2.design(data.column(col2)?),
            );
            Ok(raw * z)
        }
    }
}

#[cfg(test)]
mod tests;
