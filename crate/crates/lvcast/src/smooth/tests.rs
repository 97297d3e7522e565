use super::*;
use approx::assert_abs_diff_eq;

fn fit_penalized(
    blocks: &[&BuiltBlock],
    y: &[f64],
    lambda: f64,
) -> (nalgebra::DVector<f64>, DMatrix<f64>) {
    let n = y.len();
    let total: usize = 1 + blocks.iter().map(|b| b.x.ncols()).sum::<usize>();
    let mut x = DMatrix::zeros(n, total);
    x.column_mut(0).fill(1.0);
    let mut at = 1;
    for b in blocks {
        x.view_mut((0, at), (n, b.x.ncols())).copy_from(&b.x);
        at += b.x.ncols();
    }
    let mut a = x.transpose() * &x;
    at = 1;
    for b in blocks {
        for p in &b.penalties {
            let off = at + p.offset;
            for i in 0..p.s.nrows() {
                for j in 0..p.s.ncols() {
                    a[(off + i, off + j)] += lambda * p.s[(i, j)];
                }
            }
        }
        at += b.x.ncols();
    }
    // small ridge for the lambda ~ 0 cases
    for i in 0..total {
        a[(i, i)] += 1e-9;
    }
    let rhs = x.transpose() * nalgebra::DVector::from_column_slice(y);
    let beta = a.clone().cholesky().expect("solvable").solve(&rhs);
    (beta, x)
}

fn fitted(beta: &nalgebra::DVector<f64>, x: &DMatrix<f64>) -> Vec<f64> {
    (x * beta).iter().cloned().collect()
}

#[test]
fn linear_term_is_single_raw_column() {
    let mut data = ColumnMap::new(5);
    data.insert("x", vec![1.0, 2.0, 3.0, 4.0, 5.0]);
    let b = build_block(&TermSpec::linear("x"), &data).unwrap();
    assert_eq!(b.x.ncols(), 1);
    assert!(b.penalties.is_empty());
    for i in 0..5 {
        assert_abs_diff_eq!(b.x[(i, 0)], (i + 1) as f64);
    }
}

#[test]
fn pb_reproduces_cubic_polynomial_unpenalized() {
    let n = 200;
    let xs: Vec<f64> = (0..n).map(|i| i as f64 / (n - 1) as f64).collect();
    let poly = |x: f64| 1.0 - 2.0 * x + 0.5 * x * x + 3.0 * x * x * x;
    let y: Vec<f64> = xs.iter().map(|&x| poly(x)).collect();
    let mut data = ColumnMap::new(n);
    data.insert("x", xs);
    let b = build_block(&TermSpec::pb("x", 10), &data).unwrap();
    let (beta, x) = fit_penalized(&[&b], &y, 0.0);
    let f = fitted(&beta, &x);
    for i in 0..n {
        assert_abs_diff_eq!(f[i], y[i], epsilon = 1e-5);
    }
}

#[test]
fn pb_block_is_centered_with_psd_penalty() {
    let n = 120;
    let xs: Vec<f64> = (0..n).map(|i| i as f64).collect();
    let mut data = ColumnMap::new(n);
    data.insert("x", xs);
    let b = build_block(&TermSpec::pb("x", 10), &data).unwrap();
    assert_eq!(b.x.ncols(), 9);
    for j in 0..b.x.ncols() {
        assert_abs_diff_eq!(b.x.column(j).sum(), 0.0, epsilon = 1e-9);
    }
    let s = &b.penalties[0].s;
    assert_eq!(s.nrows(), 9);
    for t in 0..20 {
        let v = nalgebra::DVector::from_fn(9, |i, _| ((i * 7 + t * 13) % 11) as f64 - 5.0);
        assert!((v.transpose() * s * &v)[(0, 0)] >= -1e-9);
    }
}

#[test]
fn pbc_prediction_periodic() {
    let n = 80;
    let xs: Vec<f64> = (0..n).map(|i| i as f64 * 366.0 / n as f64).collect();
    let mut data = ColumnMap::new(n);
    data.insert("doy", xs.clone());
    let b = build_block(&TermSpec::pbc("doy", 8, 366.0), &data).unwrap();
    let mut shifted = ColumnMap::new(n);
    shifted.insert("doy", xs.iter().map(|x| x + 366.0).collect());
    let x2 = eval_transform(&b.transform, &shifted).unwrap();
    for i in 0..n {
        for j in 0..x2.ncols() {
            assert_abs_diff_eq!(b.x[(i, j)], x2[(i, j)], epsilon = 1e-10);
        }
    }
}

#[test]
fn vc_multiplier_one_reduces_to_pb() {
    let n = 60;
    let xs: Vec<f64> = (0..n).map(|i| i as f64 / 10.0).collect();
    let mut data = ColumnMap::new(n);
    data.insert("x", xs);
    data.insert("m", vec![1.0; n]);
    let vc = build_block(
        &TermSpec::PvcNumeric {
            col: "x".into(),
            k: 10,
            order: 2,
            mult: "m".into(),
        },
        &data,
    )
    .unwrap();
    let pb = build_block(&TermSpec::pb("x", 10), &data).unwrap();
    assert_eq!(vc.x.ncols(), pb.x.ncols());
    for i in 0..n {
        for j in 0..vc.x.ncols() {
            assert_abs_diff_eq!(vc.x[(i, j)], pb.x[(i, j)], epsilon = 1e-10);
        }
    }
}

#[test]
fn vc_multiplier_zero_gives_zero_block() {
    let n = 30;
    let mut data = ColumnMap::new(n);
    data.insert("x", (0..n).map(|i| i as f64).collect());
    data.insert("m", vec![0.0; n]);
    let vc = build_block(
        &TermSpec::PvcNumeric {
            col: "x".into(),
            k: 8,
            order: 2,
            mult: "m".into(),
        },
        &data,
    )
    .unwrap();
    assert_abs_diff_eq!(vc.x.abs().sum(), 0.0);
}

#[test]
fn factor_by_pvc_matches_per_subset_fits() {
    // separable synthetic data: each level has its own smooth curve
    let n = 450;
    let mut xs = Vec::with_capacity(n);
    let mut levels = Vec::with_capacity(n);
    let mut y = Vec::with_capacity(n);
    for i in 0..n {
        let x = (i % 150) as f64 / 149.0;
        let l = (i / 150) as f64;
        xs.push(x);
        levels.push(l);
        let f = match i / 150 {
            0 => (2.0 * std::f64::consts::PI * x).sin(),
            1 => 2.0 * x * x - 1.0,
            _ => 0.5 - x,
        };
        y.push(f + 0.3 * l);
    }
    let mut data = ColumnMap::new(n);
    data.insert("x", xs.clone());
    data.insert("g", levels.clone());
    let pvc = build_block(
        &TermSpec::Pvc {
            col: "x".into(),
            k: 10,
            order: 2,
            by: "g".into(),
            levels: 3,
        },
        &data,
    )
    .unwrap();
    assert_eq!(pvc.penalties.len(), 3, "one penalized block per level");
    let (beta, x) = fit_penalized(&[&pvc], &y, 0.0);
    let joint = fitted(&beta, &x);

    for level in 0..3usize {
        let idx: Vec<usize> = (0..n).filter(|&i| levels[i] as usize == level).collect();
        let mut sub = ColumnMap::new(idx.len());
        sub.insert("x", idx.iter().map(|&i| xs[i]).collect());
        let ysub: Vec<f64> = idx.iter().map(|&i| y[i]).collect();
        let b = build_block(&TermSpec::pb("x", 10), &sub).unwrap();
        let (bb, xb) = fit_penalized(&[&b], &ysub, 0.0);
        let sep = fitted(&bb, &xb);
        for (j, &i) in idx.iter().enumerate() {
            assert_abs_diff_eq!(joint[i], sep[j], epsilon = 1e-4);
        }
    }
}

#[test]
fn tensor_dimensions() {
    let n = 100;
    let mut data = ColumnMap::new(n);
    data.insert("a", (0..n).map(|i| (i % 10) as f64).collect());
    data.insert("b", (0..n).map(|i| (i / 10) as f64).collect());
    let t = build_block(
        &TermSpec::Tensor {
            col1: "a".into(),
            k1: 4,
            col2: "b".into(),
            k2: 4,
            order: 2,
            cyclic2_period: None,
        },
        &data,
    )
    .unwrap();
    // raw row-Kronecker has 16 columns; one is absorbed by the centering constraint
    assert_eq!(t.x.ncols(), 15);
    assert_eq!(t.penalties.len(), 2);
    assert_eq!(t.penalties[0].s.nrows(), 15);
}

#[test]
fn tensor_recovers_separable_target() {
    let m = 30;
    let n = m * m;
    let mut a = Vec::with_capacity(n);
    let mut b = Vec::with_capacity(n);
    let mut y = Vec::with_capacity(n);
    for i in 0..m {
        for j in 0..m {
            let x1 = i as f64 / (m - 1) as f64;
            let x2 = j as f64 / (m - 1) as f64;
            a.push(x1);
            b.push(x2);
            y.push((2.0 * std::f64::consts::PI * x1).sin() * (1.0 + x2 * x2));
        }
    }
    let mut data = ColumnMap::new(n);
    data.insert("a", a);
    data.insert("b", b);
    let t = build_block(
        &TermSpec::Tensor {
            col1: "a".into(),
            k1: 7,
            col2: "b".into(),
            k2: 7,
            order: 2,
            cyclic2_period: None,
        },
        &data,
    )
    .unwrap();
    let (beta, x) = fit_penalized(&[&t], &y, 1e-10);
    let f = fitted(&beta, &x);
    let rms_err = (f
        .iter()
        .zip(&y)
        .map(|(fi, yi)| (fi - yi) * (fi - yi))
        .sum::<f64>()
        / n as f64)
        .sqrt();
    let rms_y = (y.iter().map(|v| v * v).sum::<f64>() / n as f64).sqrt();
    assert!(
        rms_err / rms_y < 0.05,
        "separable recovery too loose: {}",
        rms_err / rms_y
    );
}

#[test]
fn heavy_penalty_collapses_to_null_space() {
    // order-2 penalty null space is the linear trend; a linear target must
    // survive lambda -> infinity
    let n = 150;
    let xs: Vec<f64> = (0..n).map(|i| i as f64 / (n - 1) as f64).collect();
    let y: Vec<f64> = xs.iter().map(|&x| 2.0 + 3.0 * x).collect();
    let mut data = ColumnMap::new(n);
    data.insert("x", xs);
    let b = build_block(&TermSpec::pb("x", 10), &data).unwrap();
    let (beta, x) = fit_penalized(&[&b], &y, 1e9);
    let f = fitted(&beta, &x);
    for i in 0..n {
        assert_abs_diff_eq!(f[i], y[i], epsilon = 1e-3);
    }
}

#[test]
fn edf_nonincreasing_in_lambda() {
    let n = 200;
    let xs: Vec<f64> = (0..n).map(|i| i as f64 / (n - 1) as f64).collect();
    let mut data = ColumnMap::new(n);
    data.insert("x", xs);
    let b = build_block(&TermSpec::pb("x", 12), &data).unwrap();
    let bt_b = b.x.transpose() * &b.x;
    let mut prev = f64::INFINITY;
    for e in -6..=8 {
        let lambda = 10f64.powi(e);
        let a = &bt_b + &b.penalties[0].s * lambda;
        let inv = a.clone().cholesky().unwrap().inverse();
        let edf = (&inv * &bt_b).trace();
        assert!(
            edf <= prev + 1e-8,
            "EDF increased: {edf} after {prev} at lambda={lambda}"
        );
        prev = edf;
    }
}
