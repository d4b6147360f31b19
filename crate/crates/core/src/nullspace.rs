//! The seven-dimensional gauge nullspace of the projection Jacobian.
//!
//! Columns 0..3 are translation, 3..6 rotation, 6 scale. Translation and
//! scale columns, as well as the rotation columns of camera centers and
//! points, have closed forms. The rotation-vector rows depend on the
//! rotation parametrization; they are recovered numerically from
//! `J H = 0`, one independent 3x3 system per camera.

use nalgebra::{DMatrix, Matrix3, SymmetricEigen, Vector3};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::projection::SparseJacobian;
use crate::scene::{Reconstruction, CAMERA_PARAMS, GAUGE_DIM};

pub use crate::projection::skew;

/// Threshold on the reciprocal condition number of a camera's 3x3 normal matrix.
pub const ROTATION_RCOND_TOL: f64 = 1e-12;

pub const TRANSLATION_COLS: std::ops::Range<usize> = 0..3;
pub const ROTATION_COLS: std::ops::Range<usize> = 3..6;
pub const SCALE_COL: usize = 6;

#[derive(Clone, Debug, PartialEq)]
pub struct Nullspace {
    n_cameras: usize,
    matrix: DMatrix<f64>,
}

impl Nullspace {
    /// Dense `(8n + 3m) x 7` matrix.
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.matrix
    }

    pub fn n_cameras(&self) -> usize {
        self.n_cameras
    }

    /// Rows of camera `i`'s rotation vector in the rotation columns.
    pub fn rotation_block(&self, i: usize) -> Matrix3<f64> {
        self.matrix
            .fixed_view::<3, 3>(CAMERA_PARAMS * i, ROTATION_COLS.start)
            .into_owned()
    }

    pub(crate) fn from_matrix(n_cameras: usize, matrix: DMatrix<f64>) -> Self {
        Self { n_cameras, matrix }
    }
}

/// Closed-form part of the nullspace. Camera rotation rows are left zero.
pub fn fixed_nullspace_blocks(rec: &Reconstruction) -> Nullspace {
    let mut h = DMatrix::zeros(rec.n_params(), GAUGE_DIM);
    let mut fill = |row: usize, v: &Vector3<f64>| {
        h.fixed_view_mut::<3, 3>(row, TRANSLATION_COLS.start)
            .copy_from(&Matrix3::identity());
        h.fixed_view_mut::<3, 3>(row, ROTATION_COLS.start)
            .copy_from(&skew(v));
        h.fixed_view_mut::<3, 1>(row, SCALE_COL).copy_from(v);
    };
    for (i, cam) in rec.cameras().iter().enumerate() {
        fill(CAMERA_PARAMS * i + 3, &cam.center);
    }
    for (j, x) in rec.points().iter().enumerate() {
        fill(rec.point_offset(j), x);
    }
    Nullspace::from_matrix(rec.n_cameras(), h)
}

/// Fills the camera rotation rows so that `J H = 0`.
///
/// For camera `i`, stacking its observations gives `J_r H_r = B` with
/// `B = -(dC [C]x + dX [X]x)`; the system is solved through its 3x3 normal
/// equations.
pub fn solve_rotation_blocks(jac: &SparseJacobian, partial: Nullspace) -> Result<Nullspace> {
    let h = partial.matrix;
    if h.nrows() != jac.ncols() || h.ncols() != GAUGE_DIM {
        return Err(Error::DimensionMismatch(format!(
            "nullspace is {}x{}, Jacobian has {} columns",
            h.nrows(),
            h.ncols(),
            jac.ncols()
        )));
    }
    let n = jac.n_cameras();
    let mut by_camera = vec![Vec::new(); n];
    for (t, &(i, _)) in jac.pairs().iter().enumerate() {
        by_camera[i].push(t);
    }

    let solved = by_camera
        .par_iter()
        .enumerate()
        .map(|(i, obs)| {
            let mut normal = Matrix3::zeros();
            let mut rhs = Matrix3::zeros();
            for &t in obs {
                let b = &jac.blocks()[t];
                let (co, po) = jac.column_offsets(t);
                let green = b.d_center * h.fixed_view::<3, 3>(co + 3, ROTATION_COLS.start)
                    + b.d_point * h.fixed_view::<3, 3>(po, ROTATION_COLS.start);
                normal += b.d_rotation.transpose() * b.d_rotation;
                rhs -= b.d_rotation.transpose() * green;
            }
            let eig = SymmetricEigen::new(normal).eigenvalues;
            let (lo, hi) = (eig.min(), eig.max());
            let rcond = if hi > 0.0 { lo / hi } else { 0.0 };
            if rcond.is_nan() || rcond < ROTATION_RCOND_TOL {
                return Err(Error::RankDeficientCamera { camera: i, rcond });
            }
            let chol = normal
                .cholesky()
                .ok_or(Error::RankDeficientCamera { camera: i, rcond })?;
            Ok(chol.solve(&rhs))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut h = h;
    for (i, block) in solved.iter().enumerate() {
        h.fixed_view_mut::<3, 3>(CAMERA_PARAMS * i, ROTATION_COLS.start)
            .copy_from(block);
    }
    Ok(Nullspace::from_matrix(n, h))
}

/// Complete nullspace for a reconstruction and its Jacobian.
pub fn compute_nullspace(rec: &Reconstruction, jac: &SparseJacobian) -> Result<Nullspace> {
    solve_rotation_blocks(jac, fixed_nullspace_blocks(rec))
}

/// `max|J H| / (max|J| max|H|)`.
pub fn nullspace_residual(jac: &SparseJacobian, h: &DMatrix<f64>) -> Result<f64> {
    let jh = jac.mul_dense(h)?;
    let denom = jac.max_abs() * h.amax();
    if denom == 0.0 {
        return Err(Error::InvalidArgument("zero Jacobian or nullspace".into()));
    }
    Ok(jh.amax() / denom)
}
