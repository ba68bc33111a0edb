//! Dense matrix helpers shared by the geometric modules: exponentials,
//! logarithms near the identity, minimum-norm least squares and seeded
//! sampling.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// Matrices closer than this to the identity (Frobenius) admit the series logarithm.
pub const LOG_CHART_RADIUS: f64 = 0.5;

const SERIES_RADIUS: f64 = 0.05;
const MAX_SQRT_STEPS: usize = 40;

pub fn expm(a: &DMatrix<f64>) -> DMatrix<f64> {
    a.clone().exp()
}

pub fn dist_to_identity(h: &DMatrix<f64>) -> f64 {
    let n = h.nrows();
    (h - DMatrix::<f64>::identity(n, n)).norm()
}

/// Denman-Beavers square root. Returns `None` when the iteration breaks down
/// (singular iterate or no convergence), which happens for spectra touching
/// the closed negative real axis.
pub fn sqrtm(a: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let n = a.nrows();
    let mut y = a.clone();
    let mut z = DMatrix::<f64>::identity(n, n);
    for _ in 0..100 {
        let y_inv = y.clone().try_inverse()?;
        let z_inv = z.clone().try_inverse()?;
        let y_next = (&y + &z_inv) * 0.5;
        let z_next = (&z + &y_inv) * 0.5;
        let delta = (&y_next - &y).norm();
        y = y_next;
        z = z_next;
        if !y.iter().all(|v| v.is_finite()) {
            return None;
        }
        if delta <= 1e-15 * y.norm().max(1.0) {
            return Some(y);
        }
    }
    None
}

fn log_series(h: &DMatrix<f64>) -> DMatrix<f64> {
    let n = h.nrows();
    let e = h - DMatrix::<f64>::identity(n, n);
    let mut power = e.clone();
    let mut acc = DMatrix::<f64>::zeros(n, n);
    for k in 1..200 {
        let term = &power / k as f64;
        if k % 2 == 1 {
            acc += &term;
        } else {
            acc -= &term;
        }
        if term.norm() < 1e-18 {
            break;
        }
        power = &power * &e;
    }
    acc
}

fn log_by_square_roots(h: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let mut x = h.clone();
    let mut scale = 1.0;
    let mut steps = 0;
    while dist_to_identity(&x) >= SERIES_RADIUS {
        if steps == MAX_SQRT_STEPS {
            return None;
        }
        x = sqrtm(&x)?;
        scale *= 2.0;
        steps += 1;
    }
    Some(log_series(&x) * scale)
}

/// Principal logarithm restricted to the chart `|h - I|_F < 0.5`, computed by
/// inverse scaling and squaring.
pub fn logm_near_identity(h: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    if !h.is_square() || dist_to_identity(h) >= LOG_CHART_RADIUS {
        return None;
    }
    log_by_square_roots(h)
}

/// Principal logarithm without the chart restriction. Used only to propose
/// descent steps, never to certify membership.
pub fn logm_principal(h: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    if !h.is_square() {
        return None;
    }
    let out = log_by_square_roots(h)?;
    out.iter().all(|v| v.is_finite()).then_some(out)
}

/// Minimum-norm least-squares solution of `a x = b` with singular values below
/// `rcond * sigma_max` discarded.
pub fn lstsq(a: &DMatrix<f64>, b: &DMatrix<f64>, rcond: f64) -> DMatrix<f64> {
    let cols = a.ncols();
    if a.nrows() == 0 || cols == 0 {
        return DMatrix::zeros(cols, b.ncols());
    }
    let svd = a.clone().svd(true, true);
    let smax = svd.singular_values.max();
    if smax == 0.0 {
        return DMatrix::zeros(cols, b.ncols());
    }
    let u = svd.u.as_ref().expect("u requested");
    let v_t = svd.v_t.as_ref().expect("v requested");
    let utb = u.transpose() * b;
    let mut scaled = DMatrix::zeros(svd.singular_values.len(), b.ncols());
    for (i, &s) in svd.singular_values.iter().enumerate() {
        if s > rcond * smax {
            for j in 0..b.ncols() {
                scaled[(i, j)] = utb[(i, j)] / s;
            }
        }
    }
    v_t.transpose() * scaled
}

/// Right singular vectors whose singular value is at most `tol * sigma_max`
/// (or at most `tol` when the matrix vanishes). Columns of the result are
/// orthonormal.
pub fn null_space(m: &DMatrix<f64>, tol: f64) -> DMatrix<f64> {
    let (rows, cols) = m.shape();
    if cols == 0 {
        return DMatrix::zeros(0, 0);
    }
    // Pad wide matrices so the SVD returns a full set of right vectors.
    let padded = if rows < cols {
        let mut p = DMatrix::zeros(cols, cols);
        p.view_mut((0, 0), (rows, cols)).copy_from(m);
        p
    } else {
        m.clone()
    };
    let svd = padded.svd(false, true);
    let v_t = svd.v_t.expect("v requested");
    let smax = svd.singular_values.max();
    let cut = if smax == 0.0 { tol } else { tol * smax };
    let picked: Vec<usize> = svd
        .singular_values
        .iter()
        .enumerate()
        .filter(|(_, &s)| s <= cut)
        .map(|(i, _)| i)
        .collect();
    let mut out = DMatrix::zeros(cols, picked.len());
    for (j, &i) in picked.iter().enumerate() {
        out.set_column(j, &v_t.row(i).transpose());
    }
    out
}

pub fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

pub fn random_unit<R: Rng>(dim: usize, rng: &mut R) -> DVector<f64> {
    loop {
        let v = DVector::from_fn(dim, |_, _| rng.sample::<f64, _>(StandardNormal));
        let norm = v.norm();
        if norm > 1e-12 {
            return v / norm;
        }
    }
}

pub fn uniform_in_ball<R: Rng>(dim: usize, radius: f64, rng: &mut R) -> DVector<f64> {
    let dir = random_unit(dim, rng);
    let u: f64 = rng.random();
    dir * (radius * u.powf(1.0 / dim as f64))
}

/// Stacks matrices as columns of their column-major vectorisations.
pub fn vectorize(mats: &[DMatrix<f64>]) -> DMatrix<f64> {
    let len = mats.first().map_or(0, |m| m.len());
    let mut out = DMatrix::zeros(len, mats.len());
    for (j, m) in mats.iter().enumerate() {
        out.set_column(j, &DVector::from_column_slice(m.as_slice()));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn log_inverts_exp_near_identity() {
        let a = DMatrix::from_row_slice(2, 2, &[0.1, 0.2, -0.05, -0.1]);
        let h = expm(&a);
        let l = logm_near_identity(&h).unwrap();
        assert!((l - a).norm() < 1e-13);
    }

    #[test]
    fn log_refuses_outside_chart() {
        let a = DMatrix::from_row_slice(2, 2, &[0.0, 3.0, 0.0, 0.0]);
        assert!(logm_near_identity(&expm(&a)).is_none());
        let l = logm_principal(&expm(&a)).unwrap();
        assert!((l - a).norm() < 1e-10);
    }

    #[test]
    fn null_space_of_wide_matrix() {
        let m = DMatrix::from_row_slice(1, 3, &[1.0, 1.0, 0.0]);
        let k = null_space(&m, 1e-10);
        assert_eq!(k.ncols(), 2);
        assert!((&m * &k).norm() < 1e-14);
    }

    #[test]
    fn lstsq_min_norm() {
        let a = DMatrix::from_row_slice(1, 2, &[1.0, 1.0]);
        let b = DMatrix::from_row_slice(1, 1, &[2.0]);
        let x = lstsq(&a, &b, 1e-12);
        assert!((x[0] - 1.0).abs() < 1e-14 && (x[1] - 1.0).abs() < 1e-14);
    }
}
