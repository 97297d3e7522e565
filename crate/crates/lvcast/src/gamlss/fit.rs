//! Penalized maximum-likelihood fitting by successive back-fitting: an outer
//! cycle over distribution parameters, each updated by penalized iteratively
//! reweighted least squares (Fisher scoring) holding the others fixed.
//!
//! Smoothing parameters are chosen per penalty by GCV inside the weighted
//! least-squares step during the opening cycles, then frozen so the penalized
//! deviance decreases monotonically (enforced by step-halving) until the
//! relative change falls below the convergence tolerance.

use super::likelihood::LikFamily;
use super::{FitOptions, FittedBlock, FittedModel, FittedParam, LambdaSelect, ModelSpec};
use crate::error::{Error, Result};
use crate::smooth::{build_block, ColumnSource, TermSpec};
use nalgebra::{Cholesky, DMatrix, DVector};

struct PenaltySlot {
    offset: usize,
    s: DMatrix<f64>,
    lambda: f64,
    block_idx: usize,
}

struct ParamWork {
    x: DMatrix<f64>,
    col_scale: Vec<f64>,
    blocks: Vec<(crate::smooth::BlockTransform, usize, usize)>,
    penalties: Vec<PenaltySlot>,
    beta: DVector<f64>,
    eta: DVector<f64>,
    intercept_col: usize,
}

fn build_param_work(terms: &[TermSpec], data: &dyn ColumnSource) -> Result<ParamWork> {
    let n = data.nrows();
    let mut built = Vec::with_capacity(terms.len());
    let mut total = 0usize;
    let mut intercept_col = None;
    for t in terms {
        let b = build_block(t, data)?;
        if matches!(t, TermSpec::Intercept) {
            intercept_col = Some(total);
        }
        total += b.x.ncols();
        built.push(b);
    }
    let intercept_col = intercept_col.ok_or_else(|| {
        Error::FitFailed("every parameter formula needs an intercept term".into())
    })?;

    let mut x = DMatrix::zeros(n, total);
    let mut blocks = Vec::with_capacity(built.len());
    let mut penalties = Vec::new();
    let mut at = 0usize;
    for (bi, b) in built.into_iter().enumerate() {
        let w = b.x.ncols();
        x.view_mut((0, at), (n, w)).copy_from(&b.x);
        for p in b.penalties {
            penalties.push(PenaltySlot {
                offset: at + p.offset,
                s: p.s,
                lambda: 1.0,
                block_idx: bi,
            });
        }
        blocks.push((b.transform, at, w));
        at += w;
    }

    // scale every column to unit RMS; pure reparameterization, penalties
    // transformed to match
    let mut col_scale = vec![1.0; total];
    for j in 0..total {
        let rms = (x.column(j).iter().map(|v| v * v).sum::<f64>() / n as f64).sqrt();
        let s = if rms.is_finite() && rms > 1e-12 { rms } else { 1.0 };
        col_scale[j] = s;
        for i in 0..n {
            x[(i, j)] /= s;
        }
    }
    for p in &mut penalties {
        let k = p.s.nrows();
        for i in 0..k {
            for j in 0..k {
                let denom = col_scale[p.offset + i] * col_scale[p.offset + j];
                p.s[(i, j)] /= denom;
            }
        }
    }

    Ok(ParamWork {
        x,
        col_scale,
        blocks,
        penalties,
        beta: DVector::zeros(total),
        eta: DVector::zeros(n),
        intercept_col,
    })
}

/// Cholesky with escalating diagonal jitter; None when hopeless.
fn chol_with_jitter(a: &DMatrix<f64>) -> Option<Cholesky<f64, nalgebra::Dyn>> {
    if let Some(c) = a.clone().cholesky() {
        return Some(c);
    }
    let p = a.nrows();
    let mean_diag = (a.diagonal().sum() / p as f64).abs().max(1e-300);
    let mut ridge = 1e-10 * mean_diag;
    for _ in 0..9 {
        let mut aj = a.clone();
        for i in 0..p {
            aj[(i, i)] += ridge;
        }
        if let Some(c) = aj.cholesky() {
            return Some(c);
        }
        ridge *= 10.0;
    }
    None
}

fn penalized_mat(a0: &DMatrix<f64>, penalties: &[PenaltySlot]) -> DMatrix<f64> {
    let mut a = a0.clone();
    for p in penalties {
        let k = p.s.nrows();
        for i in 0..k {
            for j in 0..k {
                a[(p.offset + i, p.offset + j)] += p.lambda * p.s[(i, j)];
            }
        }
    }
    a
}

fn penalty_quad(penalties: &[PenaltySlot], beta: &DVector<f64>) -> f64 {
    let mut q = 0.0;
    for p in penalties {
        let k = p.s.nrows();
        for i in 0..k {
            for j in 0..k {
                q += p.lambda * beta[p.offset + i] * p.s[(i, j)] * beta[p.offset + j];
            }
        }
    }
    q
}

/// tr(A^{-1} A0) given a factorization of A.
fn edf_total(chol: &Cholesky<f64, nalgebra::Dyn>, a0: &DMatrix<f64>) -> f64 {
    chol.solve(a0).trace()
}

/// Per-column EDF contributions diag(A^{-1} A0).
fn edf_diag(chol: &Cholesky<f64, nalgebra::Dyn>, a0: &DMatrix<f64>) -> DVector<f64> {
    chol.solve(a0).diagonal()
}

struct WorkingSet {
    a0: DMatrix<f64>,
    rhs: DVector<f64>,
    zwz: f64,
    n: usize,
}

fn working_set(x: &DMatrix<f64>, eta: &DVector<f64>, u: &DVector<f64>, w: &DVector<f64>) -> WorkingSet {
    let n = x.nrows();
    let mut xw = x.clone();
    for i in 0..n {
        let wi = w[i];
        for j in 0..x.ncols() {
            xw[(i, j)] *= wi;
        }
    }
    let a0 = x.transpose() * &xw;
    // rhs = X'(W eta + u), kept in this form so small weights never divide
    let mut wz = DVector::zeros(n);
    let mut zwz = 0.0;
    for i in 0..n {
        wz[i] = w[i] * eta[i] + u[i];
        zwz += w[i] * eta[i] * eta[i] + 2.0 * eta[i] * u[i] + u[i] * u[i] / w[i];
    }
    let rhs = x.transpose() * wz;
    WorkingSet { a0, rhs, zwz, n }
}

fn gcv_of(ws: &WorkingSet, penalties: &[PenaltySlot]) -> Option<(f64, DVector<f64>)> {
    let a = penalized_mat(&ws.a0, penalties);
    let chol = chol_with_jitter(&a)?;
    let beta = chol.solve(&ws.rhs);
    let rss = (ws.zwz - 2.0 * beta.dot(&ws.rhs) + (&ws.a0 * &beta).dot(&beta)).max(1e-300);
    let edf = edf_total(&chol, &ws.a0);
    let denom = (ws.n as f64 - edf).max(1.0);
    Some((ws.n as f64 * rss / (denom * denom), beta))
}

/// Per-block EDF for one penalty's column range.
fn block_edf(ws: &WorkingSet, penalties: &[PenaltySlot], offset: usize, len: usize) -> Option<f64> {
    let a = penalized_mat(&ws.a0, penalties);
    let chol = chol_with_jitter(&a)?;
    let d = edf_diag(&chol, &ws.a0);
    Some((offset..offset + len).map(|j| d[j]).sum())
}

fn select_lambdas(
    work: &mut ParamWork,
    ws: &WorkingSet,
    select: &LambdaSelect,
) -> Result<()> {
    match select {
        LambdaSelect::FixedLambda(l) => {
            for p in &mut work.penalties {
                p.lambda = *l;
            }
            Ok(())
        }
        LambdaSelect::FixedEdf(target) => {
            for pi in 0..work.penalties.len() {
                let (off, len) = (work.penalties[pi].offset, work.penalties[pi].s.nrows());
                let mut lo = -6.0f64;
                let mut hi = 10.0f64;
                for _ in 0..40 {
                    let mid = 0.5 * (lo + hi);
                    work.penalties[pi].lambda = 10f64.powf(mid);
                    let edf = block_edf(ws, &work.penalties, off, len)
                        .ok_or_else(|| Error::FitFailed("singular in EDF search".into()))?;
                    if edf > *target {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                }
            }
            Ok(())
        }
        LambdaSelect::Gcv => {
            for pi in 0..work.penalties.len() {
                let grid: Vec<f64> = (-4..=8).map(|e| 10f64.powi(e)).collect();
                let mut best = (f64::INFINITY, work.penalties[pi].lambda);
                for &l in &grid {
                    work.penalties[pi].lambda = l;
                    if let Some((g, _)) = gcv_of(ws, &work.penalties) {
                        if g < best.0 {
                            best = (g, l);
                        }
                    }
                }
                // golden-section refinement on ln(lambda)
                let phi = 0.5 * (5f64.sqrt() - 1.0);
                let mut a = (best.1 / 20.0).ln();
                let mut b = (best.1 * 20.0).ln();
                let mut c = b - phi * (b - a);
                let mut d = a + phi * (b - a);
                let eval = |l: f64, work: &mut ParamWork| -> f64 {
                    work.penalties[pi].lambda = l.exp();
                    gcv_of(ws, &work.penalties).map(|(g, _)| g).unwrap_or(f64::INFINITY)
                };
                let mut fc = eval(c, work);
                let mut fd = eval(d, work);
                for _ in 0..18 {
                    if fc < fd {
                        b = d;
                        d = c;
                        fd = fc;
                        c = b - phi * (b - a);
                        fc = eval(c, work);
                    } else {
                        a = c;
                        c = d;
                        fc = fd;
                        d = a + phi * (b - a);
                        fd = eval(d, work);
                    }
                }
                let mid = 0.5 * (a + b);
                work.penalties[pi].lambda = if eval(mid, work) <= best.0 {
                    mid.exp()
                } else {
                    best.1
                };
            }
            Ok(())
        }
    }
}

pub fn fit(
    spec: &ModelSpec,
    y: &[f64],
    data: &dyn ColumnSource,
    opts: &FitOptions,
) -> Result<FittedModel> {
    let family = spec.family;
    let kp = family.n_params();
    if spec.formulas.len() != kp {
        return Err(Error::FitFailed(format!(
            "family {:?} needs {kp} formulas, got {}",
            family,
            spec.formulas.len()
        )));
    }
    let n = y.len();
    if n == 0 || data.nrows() != n {
        return Err(Error::EmptyInput(format!(
            "target has {n} rows, frame has {}",
            data.nrows()
        )));
    }

    let mut works: Vec<ParamWork> = Vec::with_capacity(kp);
    for f in &spec.formulas {
        works.push(build_param_work(&f.terms, data)?);
    }
    let total_coefs: usize = works.iter().map(|w| w.x.ncols()).sum();
    if (n as f64) < opts.rows_per_coef * total_coefs as f64 {
        return Err(Error::FitFailed(format!(
            "guard: {n} rows for {total_coefs} coefficients is below {}x",
            opts.rows_per_coef
        )));
    }

    let s_resp = family.response_scale(y);
    let ys: Vec<f64> = y.iter().map(|v| v / s_resp).collect();
    let links = family.links();
    let init = family.init_theta(&ys);

    // intercept-only start
    let mut thetas: Vec<DVector<f64>> = Vec::with_capacity(kp);
    for (k, work) in works.iter_mut().enumerate() {
        let eta0 = links[k].apply(init[k])?;
        work.beta[work.intercept_col] = eta0 * work.col_scale[work.intercept_col];
        work.eta = &work.x * &work.beta;
        thetas.push(DVector::from_fn(n, |i, _| links[k].invert(work.eta[i])));
    }

    let deviance_std = |thetas: &[DVector<f64>]| -> f64 {
        let mut d = 0.0;
        let mut th = [0.0f64; 4];
        for i in 0..n {
            for (k, t) in thetas.iter().enumerate() {
                th[k] = t[i];
            }
            d += family.loglik(ys[i], &th[..kp]);
        }
        -2.0 * d
    };
    let penalty_all = |works: &[ParamWork]| -> f64 {
        works.iter().map(|w| penalty_quad(&w.penalties, &w.beta)).sum()
    };

    let mut pen_dev = deviance_std(&thetas) + penalty_all(&works);
    if !pen_dev.is_finite() {
        return Err(Error::FitFailed(
            "non-finite likelihood at starting values".into(),
        ));
    }

    let lambda_cycles = if works.iter().all(|w| w.penalties.is_empty()) {
        0
    } else {
        opts.lambda_cycles
    };
    let mut trace: Vec<f64> = Vec::new();
    let mut converged = false;
    let mut iterations = 0usize;

    for cycle in 1..=opts.max_outer_iter {
        iterations = cycle;
        let searching = cycle <= lambda_cycles;
        for k in 0..kp {
            // score and expected information given the current thetas
            let mut u = DVector::zeros(n);
            let mut w = DVector::zeros(n);
            let mut th = [0.0f64; 4];
            for i in 0..n {
                for (kk, t) in thetas.iter().enumerate() {
                    th[kk] = t[i];
                }
                let (ui, wi) = family.score_weight(k, ys[i], &th[..kp]);
                u[i] = if ui.is_finite() { ui } else { 0.0 };
                w[i] = if wi.is_finite() { wi.max(1e-10) } else { 1e-10 };
            }
            let ws = working_set(&works[k].x, &works[k].eta, &u, &w);
            if searching && !works[k].penalties.is_empty() {
                select_lambdas(&mut works[k], &ws, &opts.lambda_select)?;
                // the objective changed with the lambdas; rebase before halving
                pen_dev = deviance_std(&thetas) + penalty_all(&works);
            }
            let a = penalized_mat(&ws.a0, &works[k].penalties);
            let chol = chol_with_jitter(&a).ok_or_else(|| Error::SingularUpdate {
                param: family.param_names()[k].to_string(),
            })?;
            let beta_new = chol.solve(&ws.rhs);

            // step-halving on the penalized deviance
            let beta_old = works[k].beta.clone();
            let mut accepted = false;
            let mut frac = 1.0;
            for _ in 0..30 {
                let cand: DVector<f64> = &beta_old + (&beta_new - &beta_old) * frac;
                let eta_c = &works[k].x * &cand;
                let theta_c = DVector::from_fn(n, |i, _| links[k].invert(eta_c[i]));
                let mut d = 0.0;
                let mut th = [0.0f64; 4];
                for i in 0..n {
                    for (kk, t) in thetas.iter().enumerate() {
                        th[kk] = t[i];
                    }
                    th[k] = theta_c[i];
                    d += family.loglik(ys[i], &th[..kp]);
                }
                let mut pen = 0.0;
                for (wk, work) in works.iter().enumerate() {
                    pen += penalty_quad(
                        &work.penalties,
                        if wk == k { &cand } else { &work.beta },
                    );
                }
                let p_c = -2.0 * d + pen;
                if p_c.is_finite() && p_c <= pen_dev + 1e-12 {
                    works[k].beta = cand;
                    works[k].eta = eta_c;
                    thetas[k] = theta_c;
                    pen_dev = p_c;
                    accepted = true;
                    break;
                }
                frac *= 0.5;
            }
            if !accepted {
                // keep the old coefficients; objective unchanged
            }
        }
        if !searching {
            trace.push(pen_dev);
            let m = trace.len();
            if m >= 2 {
                let delta = (trace[m - 2] - trace[m - 1]).abs();
                if delta <= opts.rel_tol * (trace[m - 1].abs() + 0.1) {
                    converged = true;
                    break;
                }
            }
        }
    }

    // final deviance on the original response scale
    let dev = deviance_std(&thetas) + 2.0 * n as f64 * s_resp.ln();

    // per-block EDF and lambdas at the converged weights
    let mut params = Vec::with_capacity(kp);
    for k in 0..kp {
        let mut u = DVector::zeros(n);
        let mut w = DVector::zeros(n);
        let mut th = [0.0f64; 4];
        for i in 0..n {
            for (kk, t) in thetas.iter().enumerate() {
                th[kk] = t[i];
            }
            let (ui, wi) = family.score_weight(k, ys[i], &th[..kp]);
            u[i] = if ui.is_finite() { ui } else { 0.0 };
            w[i] = if wi.is_finite() { wi.max(1e-10) } else { 1e-10 };
        }
        let ws = working_set(&works[k].x, &works[k].eta, &u, &w);
        let a = penalized_mat(&ws.a0, &works[k].penalties);
        let edf_cols = chol_with_jitter(&a)
            .map(|c| edf_diag(&c, &ws.a0))
            .unwrap_or_else(|| DVector::from_element(works[k].x.ncols(), f64::NAN));

        let work = &works[k];
        let mut blocks = Vec::with_capacity(work.blocks.len());
        for (bi, (t, off, len)) in work.blocks.iter().enumerate() {
            let lambdas: Vec<f64> = work
                .penalties
                .iter()
                .filter(|p| p.block_idx == bi)
                .map(|p| p.lambda)
                .collect();
            let edf: f64 = (*off..off + len).map(|j| edf_cols[j]).sum();
            blocks.push(FittedBlock {
                transform: t.clone(),
                offset: *off,
                ncols: *len,
                lambdas,
                edf,
            });
        }
        params.push(FittedParam {
            coefficients: work.beta.iter().cloned().collect(),
            col_scale: work.col_scale.clone(),
            blocks,
        });
    }

    Ok(FittedModel {
        version: FittedModel::FORMAT_VERSION.to_string(),
        spec: spec.clone(),
        params,
        converged,
        iterations,
        deviance: dev,
        deviance_trace: trace,
        response_scale: s_resp,
        n_train: n,
    })
}
