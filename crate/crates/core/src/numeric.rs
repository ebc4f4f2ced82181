//! Small numeric helpers shared by the metric, signal and regression code.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        0.0
    } else {
        xs.iter().sum::<f64>() / xs.len() as f64
    }
}

/// Sample standard deviation (n−1 denominator); fewer than two points → 0.
pub fn sample_std(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    let ss: f64 = xs.iter().map(|x| (x - m) * (x - m)).sum();
    (ss / (xs.len() - 1) as f64).sqrt()
}

/// Sample covariance (n−1).
pub fn sample_cov(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len());
    if n < 2 {
        return 0.0;
    }
    let ma = mean(&a[..n]);
    let mb = mean(&b[..n]);
    let s: f64 = a[..n]
        .iter()
        .zip(&b[..n])
        .map(|(x, y)| (x - ma) * (y - mb))
        .sum();
    s / (n - 1) as f64
}

/// Pearson correlation; zero variance on either side yields 0.
pub fn corr(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len());
    if n < 2 {
        return 0.0;
    }
    let ma = mean(&a[..n]);
    let mb = mean(&b[..n]);
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a[..n].iter().zip(&b[..n]) {
        let dx = x - ma;
        let dy = y - mb;
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa <= 0.0 || sbb <= 0.0 {
        return 0.0;
    }
    (sab / (saa.sqrt() * sbb.sqrt())).clamp(-1.0, 1.0)
}

pub fn median(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Solve `(XᵀX + λI) β = Xᵀy` for row-major `x`.
pub fn ridge_solve(x: &[Vec<f64>], y: &[f64], lambda: f64) -> Result<Vec<f64>> {
    if x.len() != y.len() {
        return Err(Error::contract(format!(
            "ridge: {} rows but {} targets",
            x.len(),
            y.len()
        )));
    }
    let n = x.len();
    let p = x.first().map(Vec::len).unwrap_or(0);
    if n == 0 || p == 0 {
        return Err(Error::Solver("ridge: empty design".into()));
    }
    if x.iter().any(|r| r.len() != p) {
        return Err(Error::contract("ridge: ragged design matrix"));
    }
    let design = DMatrix::from_fn(n, p, |i, j| x[i][j]);
    let target = DVector::from_column_slice(y);
    let mut gram = design.transpose() * &design;
    for j in 0..p {
        gram[(j, j)] += lambda;
    }
    let rhs = design.transpose() * target;
    let chol = gram
        .cholesky()
        .ok_or_else(|| Error::Solver("ridge: normal equations are singular".into()))?;
    let beta = chol.solve(&rhs);
    if beta.iter().any(|b| !b.is_finite()) {
        return Err(Error::Solver("ridge: non-finite solution".into()));
    }
    Ok(beta.iter().copied().collect())
}

/// Ridge fit with an unpenalized intercept.
#[derive(Debug, Clone, PartialEq)]
pub struct RidgeFit {
    pub coef: Vec<f64>,
    pub intercept: f64,
}

impl RidgeFit {
    pub fn predict(&self, x: &[f64]) -> f64 {
        self.intercept + dot(&self.coef, x)
    }
}

/// Centered ridge regression: the intercept absorbs the means and is not shrunk.
pub fn ridge_with_intercept(x: &[Vec<f64>], y: &[f64], lambda: f64) -> Result<RidgeFit> {
    if x.len() != y.len() || x.is_empty() {
        return Err(Error::contract("ridge: rows and targets must be nonempty and aligned"));
    }
    let p = x[0].len();
    let n = x.len() as f64;
    let mut xm = vec![0.0; p];
    for row in x {
        for (m, v) in xm.iter_mut().zip(row) {
            *m += v / n;
        }
    }
    let ym = mean(y);
    let xc: Vec<Vec<f64>> = x
        .iter()
        .map(|r| r.iter().zip(&xm).map(|(v, m)| v - m).collect())
        .collect();
    let yc: Vec<f64> = y.iter().map(|v| v - ym).collect();
    let coef = ridge_solve(&xc, &yc, lambda)?;
    let intercept = ym - dot(&coef, &xm);
    Ok(RidgeFit { coef, intercept })
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Gaussian elimination with partial pivoting, used as an independent oracle.
    fn gauss_solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
        let n = b.len();
        for col in 0..n {
            let piv = (col..n)
                .max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))
                .unwrap();
            a.swap(col, piv);
            b.swap(col, piv);
            for row in col + 1..n {
                let f = a[row][col] / a[col][col];
                for k in col..n {
                    a[row][k] -= f * a[col][k];
                }
                b[row] -= f * b[col];
            }
        }
        let mut x = vec![0.0; n];
        for i in (0..n).rev() {
            let s: f64 = (i + 1..n).map(|k| a[i][k] * x[k]).sum();
            x[i] = (b[i] - s) / a[i][i];
        }
        x
    }

    #[test]
    fn ridge_matches_normal_equation_oracle() {
        let x: Vec<Vec<f64>> = (0..40)
            .map(|i| {
                let t = i as f64;
                vec![(t * 0.37).sin(), (t * 0.11).cos(), t / 40.0]
            })
            .collect();
        let y: Vec<f64> = x
            .iter()
            .enumerate()
            .map(|(i, r)| 0.5 * r[0] - 1.2 * r[1] + 2.0 * r[2] + 0.01 * ((i * 7 % 5) as f64 - 2.0))
            .collect();
        let lambda = 0.3;
        let beta = ridge_solve(&x, &y, lambda).unwrap();
        let mut gram = vec![vec![0.0; 3]; 3];
        let mut rhs = vec![0.0; 3];
        for (r, t) in x.iter().zip(&y) {
            for i in 0..3 {
                rhs[i] += r[i] * t;
                for j in 0..3 {
                    gram[i][j] += r[i] * r[j];
                }
            }
        }
        for (i, row) in gram.iter_mut().enumerate() {
            row[i] += lambda;
        }
        let oracle = gauss_solve(gram, rhs);
        for (a, b) in beta.iter().zip(&oracle) {
            assert!((a - b).abs() < 1e-10, "{a} vs {b}");
        }
    }

    #[test]
    fn singular_system_without_penalty_is_solver_error() {
        let x = vec![vec![1.0, 1.0]; 5];
        let y = vec![1.0; 5];
        assert!(matches!(ridge_solve(&x, &y, 0.0), Err(Error::Solver(_))));
    }

    #[test]
    fn corr_of_constant_is_zero() {
        assert_eq!(corr(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]), 0.0);
        assert!((corr(&[1.0, 2.0, 3.0], &[2.0, 4.0, 6.0]) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn sample_std_uses_n_minus_one() {
        assert!((sample_std(&[1.0, -1.0]) - 2f64.sqrt()).abs() < 1e-15);
        assert_eq!(sample_std(&[3.0]), 0.0);
    }
}
