//! Dense reference covariances and the per-camera error measure.
//!
//! The reference decomposes the full Fisher information densely and zeroes
//! exactly the seven smallest singular values, whatever their size. It is only
//! feasible for small scenes.

use crate::covariance::{CovarianceResult, Diagnostics, Matrix8};
use crate::error::{Error, Result};
use crate::projection::assemble_jacobian;
use crate::scene::{Reconstruction, CAMERA_PARAMS, GAUGE_DIM};
use nalgebra::{DMatrix, DVector, SymmetricEigen};

/// Default largest parameter count accepted by the dense reference.
pub const ORACLE_PARAM_LIMIT: usize = 2000;

const SVD_MAX_ITERATIONS: usize = 10_000;

/// Relative eigenvalue cut-off of the thresholded baseline.
pub const BASELINE_RCOND: f64 = 1e-14;

fn guard(params: usize, limit: usize) -> Result<()> {
    if params > limit {
        return Err(Error::SizeGuard { params, limit });
    }
    Ok(())
}

/// Dense `A = L^{-1} J` where `L L^T` is each observation's covariance, so
/// that `A^T A = J^T Sigma_u^{-1} J`.
pub fn whitened_jacobian(rec: &Reconstruction, limit: usize) -> Result<DMatrix<f64>> {
    guard(rec.n_params(), limit)?;
    let mut a = assemble_jacobian(rec)?.to_dense();
    for (t, o) in rec.observations().iter().enumerate() {
        let w = o
            .covariance
            .cholesky()
            .and_then(|c| c.l().try_inverse())
            .ok_or(Error::NonSpdCovariance { observation: t })?;
        let rows = w * a.rows(2 * t, 2);
        a.rows_mut(2 * t, 2).copy_from(&rows);
    }
    Ok(a)
}

/// Dense `J^T Sigma_u^{-1} J`.
pub fn dense_information(rec: &Reconstruction, limit: usize) -> Result<DMatrix<f64>> {
    let a = whitened_jacobian(rec, limit)?;
    let m = a.transpose() * &a;
    Ok((&m + m.transpose()) * 0.5)
}

/// A Moore-Penrose inverse with a prescribed nullity.
#[derive(Clone, Debug)]
pub struct Pseudoinverse {
    pub matrix: DMatrix<f64>,
    /// Singular values in decreasing order.
    pub singular_values: DVector<f64>,
    pub nullity: usize,
}

impl Pseudoinverse {
    /// Smallest kept over largest discarded singular value.
    pub fn gauge_gap(&self) -> f64 {
        let r = self.singular_values.len() - self.nullity;
        self.singular_values[r - 1] / self.singular_values[r]
    }

    /// `max|M X M - M| / max|M|`.
    pub fn residual(&self, m: &DMatrix<f64>) -> f64 {
        (m * &self.matrix * m - m).amax() / m.amax()
    }

    pub fn camera_blocks(&self, n_cameras: usize) -> Vec<Matrix8> {
        camera_blocks(&self.matrix, n_cameras)
    }
}

pub fn camera_blocks(sigma: &DMatrix<f64>, n_cameras: usize) -> Vec<Matrix8> {
    (0..n_cameras)
        .map(|i| {
            let o = CAMERA_PARAMS * i;
            sigma.fixed_view::<8, 8>(o, o).into_owned()
        })
        .collect()
}

/// Inverts all but the `nullity` smallest singular values of a symmetric
/// positive semi-definite `m`.
pub fn pseudoinverse(m: &DMatrix<f64>, nullity: usize) -> Result<Pseudoinverse> {
    if m.nrows() != m.ncols() {
        return Err(Error::DimensionMismatch(format!(
            "{}x{} matrix is not square",
            m.nrows(),
            m.ncols()
        )));
    }
    let (v_t, s, order) = sorted_svd(m.clone(), nullity)?;
    let keep = s.len() - nullity;
    let mut scaled_v = DMatrix::zeros(m.nrows(), keep);
    let mut kept_v = DMatrix::zeros(m.nrows(), keep);
    for (c, &k) in order[..keep].iter().enumerate() {
        let v = v_t.row(k).transpose();
        scaled_v.set_column(c, &(&v / s[k]));
        kept_v.set_column(c, &v);
    }
    let matrix = scaled_v * kept_v.transpose();
    Ok(Pseudoinverse {
        matrix: (&matrix + matrix.transpose()) * 0.5,
        singular_values: DVector::from_iterator(s.len(), order.iter().map(|&k| s[k])),
        nullity,
    })
}

fn sorted_svd(m: DMatrix<f64>, nullity: usize) -> Result<(DMatrix<f64>, DVector<f64>, Vec<usize>)> {
    if nullity >= m.ncols() || m.nrows() < m.ncols() {
        return Err(Error::DimensionMismatch(format!(
            "cannot drop {nullity} singular values of a {}x{} matrix",
            m.nrows(),
            m.ncols()
        )));
    }
    let svd = m
        .try_svd(false, true, f64::EPSILON, SVD_MAX_ITERATIONS)
        .ok_or(Error::SvdFailure)?;
    let v_t = svd.v_t.ok_or(Error::SvdFailure)?;
    let s = svd.singular_values;
    let mut order: Vec<usize> = (0..s.len()).collect();
    order.sort_by(|&a, &b| s[b].total_cmp(&s[a]));
    Ok((v_t, s, order))
}

/// Dense reference pseudoinverse of a reconstruction's information matrix.
///
/// The decomposition is taken of the whitened Jacobian `A` (through the
/// triangular factor of a thin QR) instead of `M = A^T A`: both give the same
/// singular vectors and `sigma(M) = sigma(A)^2`, but the condition number is
/// not squared.
pub fn reference_pseudoinverse(rec: &Reconstruction, limit: usize) -> Result<Pseudoinverse> {
    let a = whitened_jacobian(rec, limit)?;
    if a.nrows() < a.ncols() {
        return Err(Error::InvalidArgument(format!(
            "{} residuals for {} parameters",
            a.nrows(),
            a.ncols()
        )));
    }
    let r = a.qr().r();
    let (v_t, s, order) = sorted_svd(r, GAUGE_DIM)?;
    let keep = s.len() - GAUGE_DIM;
    let n = v_t.ncols();
    let mut scaled_v = DMatrix::zeros(n, keep);
    let mut kept_v = DMatrix::zeros(n, keep);
    for (c, &k) in order[..keep].iter().enumerate() {
        let v = v_t.row(k).transpose();
        scaled_v.set_column(c, &(&v / (s[k] * s[k])));
        kept_v.set_column(c, &v);
    }
    let matrix = scaled_v * kept_v.transpose();
    Ok(Pseudoinverse {
        matrix: (&matrix + matrix.transpose()) * 0.5,
        singular_values: DVector::from_iterator(s.len(), order.iter().map(|&k| s[k] * s[k])),
        nullity: GAUGE_DIM,
    })
}

fn dense_result(sigma: &DMatrix<f64>, n_cameras: usize) -> CovarianceResult {
    CovarianceResult {
        cameras: camera_blocks(sigma, n_cameras),
        points: None,
        diagnostics: Diagnostics::default(),
    }
}

/// Camera blocks of the count-based SVD pseudoinverse.
pub fn pseudoinverse_covariance(rec: &Reconstruction) -> Result<CovarianceResult> {
    let p = reference_pseudoinverse(rec, ORACLE_PARAM_LIMIT)?;
    Ok(dense_result(&p.matrix, rec.n_cameras()))
}

/// Eigenvalue pseudoinverse dropping eigenvalues below `rcond * max|lambda|`.
pub fn threshold_pseudoinverse(m: &DMatrix<f64>, rcond: f64) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(m.clone());
    let cut = rcond * eig.eigenvalues.amax();
    let mut out = DMatrix::zeros(m.nrows(), m.ncols());
    for (k, &l) in eig.eigenvalues.iter().enumerate() {
        if l.abs() > cut {
            let v = eig.eigenvectors.column(k);
            out += v * v.transpose() / l;
        }
    }
    (&out + out.transpose()) * 0.5
}

/// Camera blocks of the thresholded eigenvalue baseline.
pub fn baseline_covariance(rec: &Reconstruction) -> Result<CovarianceResult> {
    let m = dense_information(rec, ORACLE_PARAM_LIMIT)?;
    Ok(dense_result(
        &threshold_pseudoinverse(&m, BASELINE_RCOND),
        rec.n_cameras(),
    ))
}

#[derive(Clone, Debug, PartialEq)]
pub struct ErrorReport {
    pub per_camera: Vec<f64>,
    /// Element-wise normaliser of the error.
    pub normalization: Matrix8,
    /// Camera parameters whose mean magnitude is zero; their `O` rows use 1.
    pub flagged_params: Vec<usize>,
    pub mean: f64,
    pub median: f64,
}

pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let k = v.len() / 2;
    if v.len() % 2 == 1 {
        v[k]
    } else {
        0.5 * (v[k - 1] + v[k])
    }
}

/// `O = sqrt(e e^T)` with `e` the mean absolute camera parameter vector.
pub fn normalization(rec: &Reconstruction) -> (Matrix8, Vec<usize>) {
    let mut e = [0.0; CAMERA_PARAMS];
    for cam in rec.cameras() {
        for (acc, v) in e.iter_mut().zip(cam.params()) {
            *acc += v.abs();
        }
    }
    let mut flagged = Vec::new();
    for (l, v) in e.iter_mut().enumerate() {
        *v /= rec.n_cameras() as f64;
        if v.is_nan() || *v <= 0.0 {
            *v = 1.0;
            flagged.push(l);
        }
    }
    (Matrix8::from_fn(|l, m| (e[l] * e[m]).sqrt()), flagged)
}

/// `(1/64) sum sqrt(|A - B|) / O` for one pair of blocks.
pub fn block_error(a: &Matrix8, b: &Matrix8, o: &Matrix8) -> f64 {
    (a - b)
        .iter()
        .zip(o.iter())
        .map(|(d, o)| d.abs().sqrt() / o)
        .sum::<f64>()
        / (CAMERA_PARAMS * CAMERA_PARAMS) as f64
}

/// Mean absolute entry-wise difference of two blocks.
pub fn block_abs_error(a: &Matrix8, b: &Matrix8) -> f64 {
    (a - b).abs().mean()
}

pub fn error_metric(
    gt: &CovarianceResult,
    est: &CovarianceResult,
    rec: &Reconstruction,
) -> Result<ErrorReport> {
    if gt.n_cameras() != est.n_cameras() || gt.n_cameras() != rec.n_cameras() {
        return Err(Error::DimensionMismatch(format!(
            "{} reference and {} estimated blocks for {} cameras",
            gt.n_cameras(),
            est.n_cameras(),
            rec.n_cameras()
        )));
    }
    let (o, flagged_params) = normalization(rec);
    let per_camera: Vec<f64> = gt
        .cameras
        .iter()
        .zip(&est.cameras)
        .map(|(a, b)| block_error(a, b, &o))
        .collect();
    let mean = per_camera.iter().sum::<f64>() / per_camera.len() as f64;
    Ok(ErrorReport {
        median: median(&per_camera),
        mean,
        per_camera,
        normalization: o,
        flagged_params,
    })
}
