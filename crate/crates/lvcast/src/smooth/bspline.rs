//! Uniform B-spline bases and difference penalties for P-spline smoothing.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

/// Definition of a uniform B-spline basis on [lo, hi] with `k` basis
/// functions of the given degree. Cyclic bases fold the trailing `degree`
/// functions back onto the leading ones, making the family periodic.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct BasisDef {
    pub lo: f64,
    pub hi: f64,
    pub k: usize,
    pub degree: usize,
    pub cyclic: bool,
}

impl BasisDef {
    pub fn open(lo: f64, hi: f64, k: usize, degree: usize) -> Self {
        assert!(k > degree, "need more basis functions than the degree");
        assert!(hi > lo, "degenerate basis domain [{lo}, {hi}]");
        BasisDef {
            lo,
            hi,
            k,
            degree,
            cyclic: false,
        }
    }

    /// Cyclic basis with period `hi - lo`.
    pub fn cyclic(lo: f64, hi: f64, k: usize, degree: usize) -> Self {
        assert!(k > degree, "need more basis functions than the degree");
        assert!(hi > lo, "degenerate basis domain [{lo}, {hi}]");
        BasisDef {
            lo,
            hi,
            k,
            degree,
            cyclic: true,
        }
    }

    /// Number of columns the basis produces.
    pub fn ncols(&self) -> usize {
        self.k
    }

    fn nseg(&self) -> usize {
        if self.cyclic {
            self.k
        } else {
            self.k - self.degree
        }
    }

    fn knot(&self, j: isize) -> f64 {
        let h = (self.hi - self.lo) / self.nseg() as f64;
        self.lo + (j - self.degree as isize) as f64 * h
    }

    /// Evaluate the non-vanishing basis functions at x.
    /// Returns (first_raw_index, values[degree+1]) where raw indices run over
    /// the unfolded basis; callers fold cyclic indices with `fold_index`.
    fn eval_raw(&self, x: f64) -> (usize, Vec<f64>) {
        let d = self.degree;
        let nseg = self.nseg();
        let h = (self.hi - self.lo) / nseg as f64;
        let x = if self.cyclic {
            // wrap into [lo, hi)
            let p = self.hi - self.lo;
            let mut t = (x - self.lo) % p;
            if t < 0.0 {
                t += p;
            }
            self.lo + t
        } else {
            x.clamp(self.lo, self.hi)
        };
        let mut cell = ((x - self.lo) / h).floor() as usize;
        if cell >= nseg {
            cell = nseg - 1;
        }
        // knot span index such that knot(span) <= x <= knot(span+1)
        let span = cell + d;
        // Cox-de Boor (NURBS-book "basisfuns")
        let mut vals = vec![0.0; d + 1];
        let mut left = vec![0.0; d + 1];
        let mut right = vec![0.0; d + 1];
        vals[0] = 1.0;
        for j in 1..=d {
            left[j] = x - self.knot(span as isize + 1 - j as isize);
            right[j] = self.knot(span as isize + j as isize) - x;
            let mut saved = 0.0;
            for r in 0..j {
                let tmp = vals[r] / (right[r + 1] + left[j - r]);
                vals[r] = saved + right[r + 1] * tmp;
                saved = left[j - r] * tmp;
            }
            vals[j] = saved;
        }
        (cell, vals)
    }

    /// Fold an unfolded basis index onto the cyclic column set.
    fn fold_index(&self, idx: usize) -> usize {
        if self.cyclic {
            idx % self.k
        } else {
            idx
        }
    }

    /// Dense design matrix: one row per x, `k` columns.
    pub fn design(&self, xs: &[f64]) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(xs.len(), self.k);
        for (i, &x) in xs.iter().enumerate() {
            let (first, vals) = self.eval_raw(x);
            for (offset, v) in vals.iter().enumerate() {
                let col = self.fold_index(first + offset);
                m[(i, col)] += v;
            }
        }
        m
    }

    /// Difference penalty S = D'D of the given order; wrapped differences for
    /// cyclic bases.
    pub fn penalty(&self, order: usize) -> DMatrix<f64> {
        assert!(order >= 1 && order < self.k, "penalty order out of range");
        // binomial coefficients with alternating signs, e.g. order 2: 1 -2 1
        let mut coef = vec![0.0; order + 1];
        for (j, c) in coef.iter_mut().enumerate() {
            let mut b = 1.0;
            for i in 0..j {
                b = b * (order - i) as f64 / (i + 1) as f64;
            }
            *c = if (order - j) % 2 == 0 { b } else { -b };
        }
        let rows = if self.cyclic { self.k } else { self.k - order };
        let mut d = DMatrix::zeros(rows, self.k);
        for i in 0..rows {
            for (j, c) in coef.iter().enumerate() {
                let col = if self.cyclic { (i + j) % self.k } else { i + j };
                d[(i, col)] += *c;
            }
        }
        d.transpose() * d
    }
}
