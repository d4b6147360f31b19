//! Pinhole projection with one-parameter radial distortion and its analytic
//! derivatives.
//!
//! A point `X` seen by camera `(r, C, c, k)` projects to
//! `u = c * n * (1 + k |n|^2)` where `n = (y1 / y3, y2 / y3)` and
//! `y = R(r) (X - C)`.

use nalgebra::{DMatrix, DVector, Matrix2, Matrix2x3, Matrix3, SMatrix, Vector2, Vector3};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::scene::{Camera, Reconstruction, CAMERA_PARAMS, POINT_PARAMS};

/// Points at depth at or below this value (scene units) cannot be projected.
pub const DEPTH_EPS: f64 = 1e-9;

const SMALL_ANGLE: f64 = 1e-8;

pub type Matrix2x8 = SMatrix<f64, 2, CAMERA_PARAMS>;

/// Skew-symmetric cross-product matrix: `skew(v) * y == v.cross(y)`.
pub fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Rodrigues' formula for the rotation with Euler vector `r`.
pub fn rotation_matrix(r: &Vector3<f64>) -> Matrix3<f64> {
    let theta2 = r.norm_squared();
    let theta = theta2.sqrt();
    let (a, b) = if theta < SMALL_ANGLE {
        (1.0 - theta2 / 6.0, 0.5 - theta2 / 24.0)
    } else {
        (theta.sin() / theta, (1.0 - theta.cos()) / theta2)
    };
    let k = skew(r);
    Matrix3::identity() + k * a + k * k * b
}

/// Right Jacobian of the rotation exponential: `R(r + d) ~= R(r) R(J(r) d)`.
fn right_jacobian(r: &Vector3<f64>) -> Matrix3<f64> {
    let theta2 = r.norm_squared();
    let theta = theta2.sqrt();
    let (a, b) = if theta < SMALL_ANGLE {
        (0.5 - theta2 / 24.0, 1.0 / 6.0 - theta2 / 120.0)
    } else {
        (
            (1.0 - theta.cos()) / theta2,
            (theta - theta.sin()) / (theta2 * theta),
        )
    };
    let k = skew(r);
    Matrix3::identity() - k * a + k * k * b
}

fn camera_frame(cam: &Camera, x: &Vector3<f64>) -> Result<(Matrix3<f64>, Vector3<f64>)> {
    let rot = rotation_matrix(&cam.rotation);
    let y = rot * (x - cam.center);
    if y.z.is_nan() || y.z <= DEPTH_EPS {
        return Err(Error::BehindCamera {
            depth: y.z,
            min_depth: DEPTH_EPS,
        });
    }
    Ok((rot, y))
}

pub fn project(cam: &Camera, x: &Vector3<f64>) -> Result<Vector2<f64>> {
    let (_, y) = camera_frame(cam, x)?;
    let n = Vector2::new(y.x / y.z, y.y / y.z);
    Ok(n * (cam.focal * (1.0 + cam.distortion * n.norm_squared())))
}

/// Partial derivatives of one projection.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ObservationJacobian {
    /// w.r.t. the rotation vector, pixels per radian.
    pub d_rotation: Matrix2x3<f64>,
    /// w.r.t. the camera center.
    pub d_center: Matrix2x3<f64>,
    pub d_focal: Vector2<f64>,
    pub d_distortion: Vector2<f64>,
    /// w.r.t. the point.
    pub d_point: Matrix2x3<f64>,
}

impl ObservationJacobian {
    /// The 2x8 block for the camera parameters in canonical order.
    pub fn camera_block(&self) -> Matrix2x8 {
        let mut b = Matrix2x8::zeros();
        b.fixed_view_mut::<2, 3>(0, 0).copy_from(&self.d_rotation);
        b.fixed_view_mut::<2, 3>(0, 3).copy_from(&self.d_center);
        b.set_column(6, &self.d_focal);
        b.set_column(7, &self.d_distortion);
        b
    }

    fn is_finite(&self) -> bool {
        self.camera_block().iter().all(|v| v.is_finite())
            && self.d_point.iter().all(|v| v.is_finite())
    }
}

pub fn observation_jacobian(cam: &Camera, x: &Vector3<f64>) -> Result<ObservationJacobian> {
    let (rot, y) = camera_frame(cam, x)?;
    let inv_z = 1.0 / y.z;
    let n = Vector2::new(y.x * inv_z, y.y * inv_z);
    let rho2 = n.norm_squared();
    let radial = 1.0 + cam.distortion * rho2;

    // du/dn = c ((1 + k rho^2) I + 2 k n n^T)
    let du_dn: Matrix2<f64> =
        (Matrix2::identity() * radial + n * n.transpose() * (2.0 * cam.distortion)) * cam.focal;
    let dn_dy = Matrix2x3::new(inv_z, 0.0, -n.x * inv_z, 0.0, inv_z, -n.y * inv_z);
    let du_dy = du_dn * dn_dy;

    let d_point = du_dy * rot;
    let v = x - cam.center;
    let d_rotation = -(du_dy * rot * skew(&v) * right_jacobian(&cam.rotation));

    let jac = ObservationJacobian {
        d_rotation,
        d_center: -d_point,
        d_focal: n * radial,
        d_distortion: n * (cam.focal * rho2),
        d_point,
    };
    if !jac.is_finite() {
        return Err(Error::InvalidArgument(
            "non-finite projection derivative".into(),
        ));
    }
    Ok(jac)
}

/// Block-sparse Jacobian of all projections with respect to all parameters.
///
/// Row pair `t` belongs to observation `t`; columns are all cameras (8 each)
/// followed by all points (3 each). Each row pair has exactly one camera block
/// and one point block.
#[derive(Clone, Debug)]
pub struct SparseJacobian {
    n_cameras: usize,
    n_points: usize,
    pairs: Vec<(usize, usize)>,
    blocks: Vec<ObservationJacobian>,
}

impl SparseJacobian {
    /// Assembles a Jacobian from explicit per-observation blocks.
    pub fn from_blocks(
        n_cameras: usize,
        n_points: usize,
        pairs: Vec<(usize, usize)>,
        blocks: Vec<ObservationJacobian>,
    ) -> Result<Self> {
        if pairs.len() != blocks.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} index pairs for {} blocks",
                pairs.len(),
                blocks.len()
            )));
        }
        if let Some(&(i, j)) = pairs
            .iter()
            .find(|&&(i, j)| i >= n_cameras || j >= n_points)
        {
            return Err(Error::DimensionMismatch(format!(
                "block ({i}, {j}) outside {n_cameras} cameras x {n_points} points"
            )));
        }
        Ok(Self {
            n_cameras,
            n_points,
            pairs,
            blocks,
        })
    }

    pub fn n_cameras(&self) -> usize {
        self.n_cameras
    }

    pub fn n_points(&self) -> usize {
        self.n_points
    }

    pub fn nrows(&self) -> usize {
        2 * self.blocks.len()
    }

    pub fn ncols(&self) -> usize {
        CAMERA_PARAMS * self.n_cameras + POINT_PARAMS * self.n_points
    }

    pub fn blocks(&self) -> &[ObservationJacobian] {
        &self.blocks
    }

    pub fn blocks_mut(&mut self) -> &mut [ObservationJacobian] {
        &mut self.blocks
    }

    /// `(camera, point)` of every row pair.
    pub fn pairs(&self) -> &[(usize, usize)] {
        &self.pairs
    }

    /// Column offsets `(camera, point)` of the two blocks in row pair `t`.
    pub fn column_offsets(&self, t: usize) -> (usize, usize) {
        let (i, j) = self.pairs[t];
        (
            CAMERA_PARAMS * i,
            CAMERA_PARAMS * self.n_cameras + POINT_PARAMS * j,
        )
    }

    /// Largest absolute entry.
    pub fn max_abs(&self) -> f64 {
        self.blocks
            .iter()
            .map(|b| b.camera_block().amax().max(b.d_point.amax()))
            .fold(0.0, f64::max)
    }

    /// Dense copy; for verification at small sizes only.
    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut d = DMatrix::zeros(self.nrows(), self.ncols());
        for (t, b) in self.blocks.iter().enumerate() {
            let (co, po) = self.column_offsets(t);
            d.view_mut((2 * t, co), (2, CAMERA_PARAMS))
                .copy_from(&b.camera_block());
            d.view_mut((2 * t, po), (2, POINT_PARAMS))
                .copy_from(&b.d_point);
        }
        d
    }

    /// `J * rhs` for a dense right-hand side.
    pub fn mul_dense(&self, rhs: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if rhs.nrows() != self.ncols() {
            return Err(Error::DimensionMismatch(format!(
                "Jacobian has {} columns, right-hand side has {} rows",
                self.ncols(),
                rhs.nrows()
            )));
        }
        let mut out = DMatrix::zeros(self.nrows(), rhs.ncols());
        for (t, b) in self.blocks.iter().enumerate() {
            let (co, po) = self.column_offsets(t);
            let rows = b.camera_block() * rhs.rows(co, CAMERA_PARAMS)
                + b.d_point * rhs.rows(po, POINT_PARAMS);
            out.rows_mut(2 * t, 2).copy_from(&rows);
        }
        Ok(out)
    }
}

pub fn assemble_jacobian(rec: &Reconstruction) -> Result<SparseJacobian> {
    let blocks = rec
        .observations()
        .par_iter()
        .enumerate()
        .map(|(t, o)| {
            observation_jacobian(&rec.cameras()[o.camera], &rec.points()[o.point])
                .map_err(|e| e.at_observation(t))
        })
        .collect::<Result<Vec<_>>>()?;
    let pairs = rec
        .observations()
        .iter()
        .map(|o| (o.camera, o.point))
        .collect();
    SparseJacobian::from_blocks(rec.n_cameras(), rec.n_points(), pairs, blocks)
}

/// Stacked `u_t - project(...)` for every observation.
pub fn residuals(rec: &Reconstruction) -> Result<DVector<f64>> {
    let mut out = DVector::zeros(2 * rec.n_observations());
    for (t, o) in rec.observations().iter().enumerate() {
        let u = project(&rec.cameras()[o.camera], &rec.points()[o.point])
            .map_err(|e| e.at_observation(t))?;
        out.rows_mut(2 * t, 2).copy_from(&(o.pixel - u));
    }
    Ok(out)
}
