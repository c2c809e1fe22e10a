//! Brute-force reference implementations for the acceptance suite.
//!
//! Everything here works on plain nested `Vec<f64>` with scalar loops and
//! Gaussian elimination, so a defect in the library's linear algebra cannot
//! leak into the expected values.

use nalgebra::{SMatrix, SVector};

/// Relative error with a tiny absolute guard for values at the floor.
pub fn rel_err(got: f64, want: f64) -> f64 {
    (got - want).abs() / want.abs().max(1e-300)
}

pub fn vec_of<const N: usize>(v: &SVector<f64, N>) -> Vec<f64> {
    v.iter().copied().collect()
}

pub fn rows_of<const N: usize>(m: &SMatrix<f64, N, N>) -> Vec<Vec<f64>> {
    (0..N).map(|i| (0..N).map(|j| m[(i, j)]).collect()).collect()
}

/// Mixing weights and normalizers from the prior mode probabilities and the
/// transition matrix: `c[j] = sum_i p[i][j] mu[i]`, `mix[i][j] = p[i][j]
/// mu[i] / c[j]`.
pub fn mixing_oracle(mu: &[f64], p: &[Vec<f64>]) -> (Vec<Vec<f64>>, Vec<f64>) {
    let n = mu.len();
    let mut c = vec![0.0; n];
    for j in 0..n {
        for i in 0..n {
            c[j] += p[i][j] * mu[i];
        }
    }
    let mut mix = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..n {
            mix[i][j] = p[i][j] * mu[i] / c[j];
        }
    }
    (mix, c)
}

/// Per-target-mode mixed mean and spread-corrected covariance.
#[allow(clippy::type_complexity)]
pub fn mix_moments_oracle(
    means: &[Vec<f64>],
    covs: &[Vec<Vec<f64>>],
    mix: &[Vec<f64>],
) -> Vec<(Vec<f64>, Vec<Vec<f64>>)> {
    let n = means.len();
    let d = means[0].len();
    let mut out = Vec::with_capacity(n);
    for j in 0..n {
        let mut x0 = vec![0.0; d];
        for i in 0..n {
            for a in 0..d {
                x0[a] += mix[i][j] * means[i][a];
            }
        }
        let mut p0 = vec![vec![0.0; d]; d];
        for i in 0..n {
            for a in 0..d {
                for b in 0..d {
                    let da = means[i][a] - x0[a];
                    let db = means[i][b] - x0[b];
                    p0[a][b] += (covs[i][a][b] + da * db) * mix[i][j];
                }
            }
        }
        out.push((x0, p0));
    }
    out
}

/// Posterior mode probabilities: weight times likelihood, normalized, then
/// clamped at `floor` and renormalized.
pub fn mode_update_oracle(weights: &[f64], liks: &[f64], floor: f64) -> Vec<f64> {
    let n = weights.len();
    let mut mu = vec![0.0; n];
    let mut denom = 0.0;
    for i in 0..n {
        mu[i] = weights[i] * liks[i];
        denom += mu[i];
    }
    for v in &mut mu {
        *v /= denom;
    }
    for v in &mut mu {
        if *v < floor {
            *v = floor;
        }
    }
    let sum: f64 = mu.iter().sum();
    for v in &mut mu {
        *v /= sum;
    }
    mu
}

/// Probability-weighted mixture mean and covariance of the bank posteriors.
#[allow(clippy::type_complexity)]
pub fn combine_oracle(
    means: &[Vec<f64>],
    covs: &[Vec<Vec<f64>>],
    mu: &[f64],
) -> (Vec<f64>, Vec<Vec<f64>>) {
    let n = means.len();
    let d = means[0].len();
    let mut x = vec![0.0; d];
    for i in 0..n {
        for a in 0..d {
            x[a] += mu[i] * means[i][a];
        }
    }
    let mut p = vec![vec![0.0; d]; d];
    for i in 0..n {
        for a in 0..d {
            for b in 0..d {
                let da = means[i][a] - x[a];
                let db = means[i][b] - x[b];
                p[a][b] += (covs[i][a][b] + da * db) * mu[i];
            }
        }
    }
    (x, p)
}

/// Solves `a x = b` by Gaussian elimination with partial pivoting and
/// returns the solution together with `det(a)`.
fn gauss_solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> (Vec<f64>, f64) {
    let n = b.len();
    let mut det = 1.0;
    for col in 0..n {
        let mut pivot = col;
        for row in col + 1..n {
            if a[row][col].abs() > a[pivot][col].abs() {
                pivot = row;
            }
        }
        if pivot != col {
            a.swap(col, pivot);
            b.swap(col, pivot);
            det = -det;
        }
        det *= a[col][col];
        for row in col + 1..n {
            let f = a[row][col] / a[col][col];
            for k in col..n {
                a[row][k] -= f * a[col][k];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let mut acc = b[row];
        for k in row + 1..n {
            acc -= a[row][k] * x[k];
        }
        x[row] = acc / a[row][row];
    }
    (x, det)
}

/// Multivariate normal density of `innovation` under `cov`, floored.
pub fn gaussian_density_oracle(innovation: &[f64], cov: &[Vec<f64>], floor: f64) -> f64 {
    let d = innovation.len();
    let (solved, det) = gauss_solve(cov.to_vec(), innovation.to_vec());
    let mut mahal = 0.0;
    for i in 0..d {
        mahal += innovation[i] * solved[i];
    }
    let norm = (std::f64::consts::TAU.powi(d as i32) * det).sqrt();
    let density = (-0.5 * mahal).exp() / norm;
    density.max(floor)
}

/// Central-difference Jacobian of `f` at `x` with per-component step `h`.
pub fn central_jacobian<F>(f: F, x: &[f64], h: f64) -> Vec<Vec<f64>>
where
    F: Fn(&[f64]) -> Vec<f64>,
{
    let d = x.len();
    let rows = f(x).len();
    let mut jac = vec![vec![0.0; d]; rows];
    for col in 0..d {
        let mut hi = x.to_vec();
        let mut lo = x.to_vec();
        hi[col] += h;
        lo[col] -= h;
        let fh = f(&hi);
        let fl = f(&lo);
        for row in 0..rows {
            jac[row][col] = (fh[row] - fl[row]) / (2.0 * h);
        }
    }
    jac
}
