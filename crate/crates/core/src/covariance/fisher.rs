//! Block-sparse Fisher information and its gauge-bordered, conditioned form.

use nalgebra::{DMatrix, DVector, Matrix2, Matrix3, SMatrix};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::nullspace::Nullspace;
use crate::projection::SparseJacobian;
use crate::scene::{is_spd2, Reconstruction, CAMERA_PARAMS, POINT_PARAMS};

pub type Matrix8 = SMatrix<f64, CAMERA_PARAMS, CAMERA_PARAMS>;
pub type Matrix8x3 = SMatrix<f64, CAMERA_PARAMS, POINT_PARAMS>;

/// `M = J^T Sigma_u^{-1} J` stored by blocks.
///
/// Camera-camera blocks off the diagonal are structurally zero because every
/// observation involves a single camera; the same holds for point-point
/// blocks.
#[derive(Clone, Debug)]
pub struct FisherBlocks {
    n_cameras: usize,
    n_points: usize,
    pairs: Vec<(usize, usize)>,
    by_camera: Vec<Vec<usize>>,
    by_point: Vec<Vec<usize>>,
    camera: Vec<Matrix8>,
    point: Vec<Matrix3<f64>>,
    coupling: Vec<Matrix8x3>,
}

impl FisherBlocks {
    pub fn n_cameras(&self) -> usize {
        self.n_cameras
    }

    pub fn n_points(&self) -> usize {
        self.n_points
    }

    pub fn n_params(&self) -> usize {
        CAMERA_PARAMS * self.n_cameras + POINT_PARAMS * self.n_points
    }

    pub fn camera_block(&self, i: usize) -> &Matrix8 {
        &self.camera[i]
    }

    pub fn point_block(&self, j: usize) -> &Matrix3<f64> {
        &self.point[j]
    }

    /// Camera-point block of observation `t`.
    pub fn coupling_block(&self, t: usize) -> &Matrix8x3 {
        &self.coupling[t]
    }

    pub fn pairs(&self) -> &[(usize, usize)] {
        &self.pairs
    }

    /// Observations of camera `i`, ordered by point.
    pub fn camera_observations(&self, i: usize) -> &[usize] {
        &self.by_camera[i]
    }

    /// Observations of point `j`, ordered by camera.
    pub fn point_observations(&self, j: usize) -> &[usize] {
        &self.by_point[j]
    }

    pub fn point_offset(&self, j: usize) -> usize {
        CAMERA_PARAMS * self.n_cameras + POINT_PARAMS * j
    }

    pub fn diagonal(&self) -> DVector<f64> {
        let mut d = DVector::zeros(self.n_params());
        for (i, u) in self.camera.iter().enumerate() {
            d.rows_mut(CAMERA_PARAMS * i, CAMERA_PARAMS)
                .copy_from(&u.diagonal());
        }
        for (j, v) in self.point.iter().enumerate() {
            d.rows_mut(self.point_offset(j), POINT_PARAMS)
                .copy_from(&v.diagonal());
        }
        d
    }

    /// Adds prior information to the diagonal block of camera `i`.
    pub fn add_camera_information(&mut self, i: usize, info: &Matrix8) {
        self.camera[i] += info;
    }

    /// Dense `M`; for verification at small sizes only.
    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.n_params(), self.n_params());
        for (i, u) in self.camera.iter().enumerate() {
            let o = CAMERA_PARAMS * i;
            m.fixed_view_mut::<8, 8>(o, o).copy_from(u);
        }
        for (j, v) in self.point.iter().enumerate() {
            let o = self.point_offset(j);
            m.fixed_view_mut::<3, 3>(o, o).copy_from(v);
        }
        for (t, w) in self.coupling.iter().enumerate() {
            let (i, j) = self.pairs[t];
            let (co, po) = (CAMERA_PARAMS * i, self.point_offset(j));
            m.fixed_view_mut::<8, 3>(co, po).copy_from(w);
            m.fixed_view_mut::<3, 8>(po, co).copy_from(&w.transpose());
        }
        m
    }

    /// `D M D` for a diagonal `D`.
    fn scaled(&self, d: &DVector<f64>) -> Self {
        let cam_scale = |i: usize| d.fixed_rows::<8>(CAMERA_PARAMS * i).into_owned();
        let pt_scale = |j: usize| d.fixed_rows::<3>(self.point_offset(j)).into_owned();
        let camera = self
            .camera
            .iter()
            .enumerate()
            .map(|(i, u)| {
                let s = cam_scale(i);
                u.component_mul(&(s * s.transpose()))
            })
            .collect();
        let point = self
            .point
            .iter()
            .enumerate()
            .map(|(j, v)| {
                let s = pt_scale(j);
                v.component_mul(&(s * s.transpose()))
            })
            .collect();
        let coupling = self
            .coupling
            .iter()
            .zip(&self.pairs)
            .map(|(w, &(i, j))| w.component_mul(&(cam_scale(i) * pt_scale(j).transpose())))
            .collect();
        Self {
            camera,
            point,
            coupling,
            ..self.clone_structure()
        }
    }

    fn clone_structure(&self) -> Self {
        Self {
            n_cameras: self.n_cameras,
            n_points: self.n_points,
            pairs: self.pairs.clone(),
            by_camera: self.by_camera.clone(),
            by_point: self.by_point.clone(),
            camera: Vec::new(),
            point: Vec::new(),
            coupling: Vec::new(),
        }
    }
}

fn information(rec: &Reconstruction, t: usize) -> Result<Matrix2<f64>> {
    let cov = rec.observations()[t].covariance;
    if !is_spd2(&cov) {
        return Err(Error::NonSpdCovariance { observation: t });
    }
    cov.try_inverse()
        .ok_or(Error::NonSpdCovariance { observation: t })
}

/// Assembles `J^T Sigma_u^{-1} J` block by block, using the block-diagonal
/// structure of the observation covariance.
pub fn build_fisher_blocks(jac: &SparseJacobian, rec: &Reconstruction) -> Result<FisherBlocks> {
    if jac.pairs().len() != rec.n_observations()
        || jac.n_cameras() != rec.n_cameras()
        || jac.n_points() != rec.n_points()
    {
        return Err(Error::DimensionMismatch(
            "Jacobian does not belong to this reconstruction".into(),
        ));
    }
    let n = rec.n_cameras();
    let m = rec.n_points();
    let by_camera: Vec<Vec<usize>> = (0..n)
        .map(|i| rec.camera_observations(i).to_vec())
        .collect();
    let by_point: Vec<Vec<usize>> = (0..m).map(|j| rec.point_track(j).to_vec()).collect();

    let per_camera = by_camera
        .par_iter()
        .map(|obs| {
            let mut u = Matrix8::zeros();
            let mut ws = Vec::with_capacity(obs.len());
            for &t in obs {
                let b = &jac.blocks()[t];
                let jc = b.camera_block();
                let a = jc.transpose() * information(rec, t)?;
                u += a * jc;
                ws.push((t, a * b.d_point));
            }
            Ok((u, ws))
        })
        .collect::<Result<Vec<_>>>()?;

    let point = by_point
        .par_iter()
        .map(|obs| {
            let mut v = Matrix3::zeros();
            for &t in obs {
                let jp = jac.blocks()[t].d_point;
                v += jp.transpose() * information(rec, t)? * jp;
            }
            Ok(v)
        })
        .collect::<Result<Vec<_>>>()?;

    let mut camera = Vec::with_capacity(n);
    let mut coupling = vec![Matrix8x3::zeros(); rec.n_observations()];
    for (u, ws) in per_camera {
        camera.push(u);
        for (t, w) in ws {
            coupling[t] = w;
        }
    }
    Ok(FisherBlocks {
        n_cameras: n,
        n_points: m,
        pairs: jac.pairs().to_vec(),
        by_camera,
        by_point,
        camera,
        point,
        coupling,
    })
}

/// Diagonal column scalings of the bordered system.
#[derive(Clone, Debug, PartialEq)]
pub struct ConditioningScales {
    /// One per parameter, `1 / sqrt(M[j, j])`.
    pub params: DVector<f64>,
    /// One per gauge column, `1 / ||(S_a H)[:, l]||`.
    pub gauge: DVector<f64>,
    /// Parameters whose diagonal was not positive; their scale is 1.
    pub flagged: Vec<usize>,
}

impl ConditioningScales {
    pub fn identity(n_params: usize, border: usize) -> Self {
        Self {
            params: DVector::from_element(n_params, 1.0),
            gauge: DVector::from_element(border, 1.0),
            flagged: Vec::new(),
        }
    }

    pub fn camera(&self, i: usize) -> SMatrix<f64, CAMERA_PARAMS, 1> {
        self.params
            .fixed_rows::<CAMERA_PARAMS>(CAMERA_PARAMS * i)
            .into_owned()
    }
}

/// Jacobi scaling of `M` and unit-norm scaling of the scaled nullspace columns.
pub fn condition_columns(fisher: &FisherBlocks, h: &DMatrix<f64>) -> Result<ConditioningScales> {
    if h.nrows() != fisher.n_params() {
        return Err(Error::DimensionMismatch(format!(
            "nullspace has {} rows for {} parameters",
            h.nrows(),
            fisher.n_params()
        )));
    }
    let mut flagged = Vec::new();
    let params = DVector::from_iterator(
        fisher.n_params(),
        fisher.diagonal().iter().enumerate().map(|(k, &d)| {
            if d > 0.0 && d.is_finite() {
                1.0 / d.sqrt()
            } else {
                flagged.push(k);
                1.0
            }
        }),
    );
    let mut gauge = DVector::zeros(h.ncols());
    for l in 0..h.ncols() {
        let norm = h.column(l).component_mul(&params).norm();
        if !(norm > 0.0 && norm.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "nullspace column {l} is zero"
            )));
        }
        gauge[l] = 1.0 / norm;
    }
    Ok(ConditioningScales {
        params,
        gauge,
        flagged,
    })
}

/// `[[M, H], [H^T, 0]]` kept in block form, optionally column-scaled.
///
/// The elimination order used downstream puts all point parameters first,
/// then camera parameters, then the border columns.
#[derive(Clone, Debug)]
pub struct BorderedSystem {
    fisher: FisherBlocks,
    border: DMatrix<f64>,
    scales: ConditioningScales,
}

impl BorderedSystem {
    /// Unscaled system from `M` and a nullspace basis.
    pub fn new(fisher: FisherBlocks, nullspace: &Nullspace) -> Result<Self> {
        Self::with_border(fisher, nullspace.matrix().clone())
    }

    /// Unscaled system with an arbitrary border (`n_params x k`).
    pub fn with_border(fisher: FisherBlocks, border: DMatrix<f64>) -> Result<Self> {
        if border.nrows() != fisher.n_params() {
            return Err(Error::DimensionMismatch(format!(
                "border has {} rows for {} parameters",
                border.nrows(),
                fisher.n_params()
            )));
        }
        let scales = ConditioningScales::identity(fisher.n_params(), border.ncols());
        Ok(Self {
            fisher,
            border,
            scales,
        })
    }

    /// Applies `S = diag(S_a, S_b)` on both sides. Scales compose with any
    /// already applied.
    pub fn conditioned(self) -> Result<Self> {
        let s = condition_columns(&self.fisher, &self.border)?;
        let mut border = self.border;
        for l in 0..border.ncols() {
            let mut col = border.column_mut(l);
            col.component_mul_assign(&s.params);
            col *= s.gauge[l];
        }
        let fisher = self.fisher.scaled(&s.params);
        let mut flagged = self.scales.flagged;
        flagged.extend(&s.flagged);
        let scales = ConditioningScales {
            params: self.scales.params.component_mul(&s.params),
            gauge: self.scales.gauge.component_mul(&s.gauge),
            flagged,
        };
        Ok(Self {
            fisher,
            border,
            scales,
        })
    }

    pub fn fisher(&self) -> &FisherBlocks {
        &self.fisher
    }

    /// Border columns, `S_a H S_b` after conditioning.
    pub fn border(&self) -> &DMatrix<f64> {
        &self.border
    }

    pub fn border_dim(&self) -> usize {
        self.border.ncols()
    }

    pub fn scales(&self) -> &ConditioningScales {
        &self.scales
    }

    pub fn dim(&self) -> usize {
        self.fisher.n_params() + self.border_dim()
    }

    /// Position in the original bordered order of each row of the permuted
    /// system: points, then cameras, then border.
    pub fn permutation(&self) -> Vec<usize> {
        let cams = CAMERA_PARAMS * self.fisher.n_cameras;
        let n_params = self.fisher.n_params();
        (cams..n_params)
            .chain(0..cams)
            .chain(n_params..self.dim())
            .collect()
    }

    /// Dense bordered matrix in the original order.
    pub fn to_dense(&self) -> DMatrix<f64> {
        let p = self.fisher.n_params();
        let k = self.border_dim();
        let mut q = DMatrix::zeros(p + k, p + k);
        q.view_mut((0, 0), (p, p))
            .copy_from(&self.fisher.to_dense());
        q.view_mut((0, p), (p, k)).copy_from(&self.border);
        q.view_mut((p, 0), (k, p))
            .copy_from(&self.border.transpose());
        q
    }

    /// Dense bordered matrix in the elimination order.
    pub fn to_dense_permuted(&self) -> DMatrix<f64> {
        let q = self.to_dense();
        let perm = self.permutation();
        DMatrix::from_fn(q.nrows(), q.ncols(), |r, c| q[(perm[r], perm[c])])
    }
}
