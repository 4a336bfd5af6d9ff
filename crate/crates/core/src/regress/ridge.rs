use super::{check_pairs, RegressError, Result};

/// Linear map with bias: `y = x W[..D] + W[D]`.
#[derive(Debug, Clone, PartialEq)]
pub struct RidgeModel {
    pub lambda: f64,
    pub input_dim: usize,
    pub output_dim: usize,
    /// Row-major `(D + 1) x F`; the last row is the bias.
    pub weights: Vec<f64>,
}

/// A Cholesky pivot at or below this fraction of its original diagonal entry
/// marks the system as numerically singular.
const PIVOT_TOLERANCE: f64 = 1e-12;

/// Solves `(A^T A + lambda P) W = A^T Y` where `A` is `X` with a trailing
/// column of ones and `P` is the identity with a zero for the bias.
pub fn fit_ridge(x: &[Vec<f64>], y: &[Vec<f64>], lambda: f64) -> Result<RidgeModel> {
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return Err(RegressError::Params(format!("lambda must be finite and non-negative, got {lambda}")));
    }
    let (d, f) = check_pairs(x, y)?;
    let n = d + 1;
    let mut gram = vec![0.0; n * n];
    let mut rhs = vec![0.0; n * f];
    let mut row = vec![1.0; n];
    for (xi, yi) in x.iter().zip(y) {
        row[..d].copy_from_slice(xi);
        for a in 0..n {
            let ra = row[a];
            for b in a..n {
                gram[a * n + b] += ra * row[b];
            }
            for (c, yc) in yi.iter().enumerate() {
                rhs[a * f + c] += ra * yc;
            }
        }
    }
    for a in 0..n {
        for b in 0..a {
            gram[a * n + b] = gram[b * n + a];
        }
    }
    for j in 0..d {
        gram[j * n + j] += lambda;
    }
    let l = cholesky(&gram, n)?;
    let weights = solve_cholesky(&l, n, &rhs, f);
    Ok(RidgeModel {
        lambda,
        input_dim: d,
        output_dim: f,
        weights,
    })
}

/// Lower-triangular `L` with `A = L L^T`, row-major.
fn cholesky(a: &[f64], n: usize) -> Result<Vec<f64>> {
    let mut l = vec![0.0; n * n];
    for j in 0..n {
        let mut diag = a[j * n + j];
        for k in 0..j {
            diag -= l[j * n + k] * l[j * n + k];
        }
        if !(diag > PIVOT_TOLERANCE * a[j * n + j]) {
            return Err(RegressError::Singular);
        }
        let pivot = diag.sqrt();
        l[j * n + j] = pivot;
        for i in j + 1..n {
            let mut v = a[i * n + j];
            for k in 0..j {
                v -= l[i * n + k] * l[j * n + k];
            }
            l[i * n + j] = v / pivot;
        }
    }
    Ok(l)
}

/// Solves `L L^T W = B` for an `n x f` right-hand side.
fn solve_cholesky(l: &[f64], n: usize, b: &[f64], f: usize) -> Vec<f64> {
    let mut w = b.to_vec();
    for c in 0..f {
        for i in 0..n {
            let mut v = w[i * f + c];
            for k in 0..i {
                v -= l[i * n + k] * w[k * f + c];
            }
            w[i * f + c] = v / l[i * n + i];
        }
        for i in (0..n).rev() {
            let mut v = w[i * f + c];
            for k in i + 1..n {
                v -= l[k * n + i] * w[k * f + c];
            }
            w[i * f + c] = v / l[i * n + i];
        }
    }
    w
}

impl RidgeModel {
    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.output_dim
    }

    pub fn weight(&self, row: usize, col: usize) -> f64 {
        self.weights[row * self.output_dim + col]
    }

    pub fn bias(&self) -> &[f64] {
        &self.weights[self.input_dim * self.output_dim..]
    }

    pub(super) fn predict_unchecked(&self, x: &[f64]) -> Vec<f64> {
        let f = self.output_dim;
        let mut out = self.bias().to_vec();
        for (j, xj) in x.iter().enumerate() {
            for (c, o) in out.iter_mut().enumerate() {
                *o += xj * self.weights[j * f + c];
            }
        }
        out
    }
}
