//! GAMLSS model specification, fitting, prediction, and serialization: one
//! additive predictor per distribution parameter, estimated by penalized
//! maximum likelihood with successive back-fitting.

mod fit;
mod likelihood;

pub use fit::fit;
pub use likelihood::LikFamily;

use crate::error::{Error, Result};
use crate::smooth::{eval_transform, BasisDef, BlockTransform, ColumnSource, TermSpec};
use serde::{Deserialize, Serialize};

/// Natural-scale parameters for one observation (first `n_params` entries).
pub type Theta = [f64; 4];

/// Additive predictor for one distribution parameter.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Formula {
    pub terms: Vec<TermSpec>,
}

impl Formula {
    pub fn new(terms: Vec<TermSpec>) -> Self {
        Formula { terms }
    }

    pub fn intercept_only() -> Self {
        Formula {
            terms: vec![TermSpec::Intercept],
        }
    }
}

/// A GAMLSS model: family plus one formula per distribution parameter.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub name: String,
    pub family: LikFamily,
    pub formulas: Vec<Formula>,
}

/// Smoothing-parameter selection strategy.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LambdaSelect {
    /// Generalized cross-validation inside each weighted least-squares step.
    Gcv,
    /// Pin every penalized term to this many effective degrees of freedom.
    FixedEdf(f64),
    /// Use one fixed lambda everywhere.
    FixedLambda(f64),
}

#[derive(Clone, Debug)]
pub struct FitOptions {
    pub max_outer_iter: usize,
    /// Convergence: relative penalized-deviance change below this.
    pub rel_tol: f64,
    /// Opening cycles that re-select lambdas before freezing them.
    pub lambda_cycles: usize,
    /// Guard: require at least this many rows per coefficient.
    pub rows_per_coef: f64,
    pub lambda_select: LambdaSelect,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            max_outer_iter: 200,
            rel_tol: 1e-6,
            lambda_cycles: 3,
            rows_per_coef: 10.0,
            lambda_select: LambdaSelect::Gcv,
        }
    }
}

/// One fitted term block within a parameter's design.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FittedBlock {
    pub transform: BlockTransform,
    pub offset: usize,
    pub ncols: usize,
    pub lambdas: Vec<f64>,
    pub edf: f64,
}

/// Fitted state for one distribution parameter.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FittedParam {
    pub coefficients: Vec<f64>,
    /// Per-column RMS scales applied to the design during fitting.
    pub col_scale: Vec<f64>,
    pub blocks: Vec<FittedBlock>,
}

/// A fitted GAMLSS model, serializable as a versioned JSON document.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FittedModel {
    pub version: String,
    pub spec: ModelSpec,
    pub params: Vec<FittedParam>,
    pub converged: bool,
    pub iterations: usize,
    /// -2 log-likelihood on the original response scale.
    pub deviance: f64,
    /// Penalized deviance per outer cycle after lambda freeze (standardized
    /// response scale); nonincreasing by construction.
    pub deviance_trace: Vec<f64>,
    /// Standard deviation used to standardize the response before fitting.
    pub response_scale: f64,
    pub n_train: usize,
}

impl FittedModel {
    pub const FORMAT_VERSION: &'static str = "lvcast-model/1";

    /// Natural-scale parameter vectors for every row of `data`.
    pub fn predict(&self, data: &dyn ColumnSource) -> Result<Vec<Theta>> {
        let n = data.nrows();
        let links = self.spec.family.links();
        let mut out = vec![[0.0f64; 4]; n];
        let mut clamped = 0usize;
        for (k, param) in self.params.iter().enumerate() {
            let mut eta = vec![0.0f64; n];
            for block in &param.blocks {
                clamped += count_out_of_range(&block.transform, data)?;
                let cols = eval_transform(&block.transform, data)?;
                for j in 0..block.ncols {
                    let beta = param.coefficients[block.offset + j]
                        / param.col_scale[block.offset + j];
                    if beta == 0.0 {
                        continue;
                    }
                    for i in 0..n {
                        eta[i] += cols[(i, j)] * beta;
                    }
                }
            }
            let scales = if self.spec.family.theta_scales_with_response(k) {
                self.response_scale
            } else {
                1.0
            };
            for i in 0..n {
                let theta = links[k].invert(eta[i]) * scales;
                if !theta.is_finite() {
                    return Err(Error::FitFailed(format!(
                        "non-finite prediction for parameter {k} at row {i}"
                    )));
                }
                out[i][k] = theta;
            }
        }
        if clamped > 0 {
            log::debug!(
                "model '{}': {clamped} covariate values clamped to training ranges",
                self.spec.name
            );
        }
        Ok(out)
    }

    /// Natural-scale parameters on the training rows must be valid.
    pub fn validate_on(&self, data: &dyn ColumnSource) -> Result<()> {
        let thetas = self.predict(data)?;
        for (i, t) in thetas.iter().enumerate() {
            if !self.spec.family.theta_valid(&t[..self.spec.family.n_params()]) {
                return Err(Error::FitFailed(format!(
                    "invalid parameters at row {i}: {:?}",
                    &t[..self.spec.family.n_params()]
                )));
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let m: FittedModel = serde_json::from_str(s)?;
        if m.version != Self::FORMAT_VERSION {
            return Err(Error::Artifact(format!(
                "model format '{}' not supported (expected '{}')",
                m.version,
                Self::FORMAT_VERSION
            )));
        }
        Ok(m)
    }
}

fn basis_out_of_range(basis: &BasisDef, xs: &[f64]) -> usize {
    if basis.cyclic {
        return 0;
    }
    xs.iter().filter(|x| **x < basis.lo || **x > basis.hi).count()
}

fn count_out_of_range(t: &BlockTransform, data: &dyn ColumnSource) -> Result<usize> {
    Ok(match t {
        BlockTransform::Smooth { col, basis, .. } => basis_out_of_range(basis, data.column(col)?),
        BlockTransform::PvcNumeric { col, basis, .. } => {
            basis_out_of_range(basis, data.column(col)?)
        }
        BlockTransform::Pvc { col, basis, .. } => basis_out_of_range(basis, data.column(col)?),
        BlockTransform::Tensor {
            col1,
            col2,
            basis1,
            basis2,
            ..
        } => {
            basis_out_of_range(basis1, data.column(col1)?)
                + basis_out_of_range(basis2, data.column(col2)?)
        }
        _ => 0,
    })
}

/// Outcome of a fit that may have fallen back to a simpler specification.
#[derive(Clone, Debug)]
pub struct FitSelection {
    pub model: FittedModel,
    pub used_fallback: bool,
    pub reason: Option<String>,
}

/// Fit `primary`; on failure, non-convergence, or invalid fitted parameters
/// on any training row, fit `fallback` instead and record why.
pub fn fit_with_fallback(
    primary: &ModelSpec,
    fallback: &ModelSpec,
    y: &[f64],
    data: &dyn ColumnSource,
    opts: &FitOptions,
) -> Result<FitSelection> {
    let reason = match fit(primary, y, data, opts) {
        Ok(m) => {
            if !m.converged {
                Some("primary fit did not converge".to_string())
            } else if let Err(e) = m.validate_on(data) {
                Some(format!("primary fit invalid: {e}"))
            } else {
                return Ok(FitSelection {
                    model: m,
                    used_fallback: false,
                    reason: None,
                });
            }
        }
        Err(e) => Some(format!("primary fit failed: {e}")),
    };
    match fit(fallback, y, data, opts) {
        Ok(m) => Ok(FitSelection {
            model: m,
            used_fallback: true,
            reason,
        }),
        Err(e) => Err(Error::FitFailed(format!(
            "both fits failed; primary: {}; fallback: {e}",
            reason.unwrap_or_default()
        ))),
    }
}
