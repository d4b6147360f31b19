//! Natural-form covariance of camera parameters.
//!
//! The Fisher information is bordered with the gauge nullspace, scaled,
//! reordered so that points come first, and the points are eliminated. Only
//! the `(8n + k)`-sized reduced system is factorized; camera blocks of its
//! inverse, unscaled, are the covariances.

mod fisher;
mod output;
mod schur;

use nalgebra::{DMatrix, Matrix3, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nullspace::{compute_nullspace, nullspace_residual};
use crate::projection::assemble_jacobian;
use crate::scene::{Reconstruction, CAMERA_PARAMS, POINT_PARAMS};

pub use fisher::{
    build_fisher_blocks, condition_columns, BorderedSystem, ConditioningScales, FisherBlocks,
    Matrix8, Matrix8x3,
};
pub use output::{upper_triangle, UPPER_TRIANGLE_LEN};
pub use schur::{
    invert_schur, schur_reduce, PivotSummary, SchurComplement, SchurInverse, PIVOT_RELATIVE_TOL,
    POINT_RCOND_TOL,
};

/// Relative tolerance of the positive semi-definiteness check on each block.
pub const PSD_TOL: f64 = 1e-9;

/// Largest parameter count for which the full dense covariance is formed.
pub const DENSE_PARAM_LIMIT: usize = 6000;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PsdWarning {
    pub camera: usize,
    pub min_eigenvalue: f64,
    pub trace: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub scale_min: f64,
    pub scale_max: f64,
    pub gauge_scales: Vec<f64>,
    /// Parameters whose information diagonal was not positive.
    pub flagged_columns: Vec<usize>,
    pub pivot_min: f64,
    pub pivot_max: f64,
    pub pivot_relative: f64,
    pub pivot_two_by_two: usize,
    pub pivot_negative: usize,
    /// `max|J H| / (max|J| max|H|)`; absent for a user-supplied border.
    pub nullspace_residual: Option<f64>,
    pub psd_warnings: Vec<PsdWarning>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CovarianceResult {
    /// One 8x8 block per camera, (r, C, c, k) order.
    pub cameras: Vec<Matrix8>,
    pub points: Option<Vec<Matrix3<f64>>>,
    pub diagnostics: Diagnostics,
}

impl CovarianceResult {
    pub fn n_cameras(&self) -> usize {
        self.cameras.len()
    }

    pub fn trace(&self, i: usize) -> f64 {
        self.cameras[i].trace()
    }
}

fn psd_warning(camera: usize, block: &Matrix8) -> Option<PsdWarning> {
    let min_eigenvalue = SymmetricEigen::new(*block).eigenvalues.min();
    let trace = block.trace();
    (min_eigenvalue < -PSD_TOL * trace.abs()).then(|| {
        log::warn!(
            "camera {camera}: covariance block has eigenvalue {min_eigenvalue:e} (trace {trace:e})"
        );
        PsdWarning {
            camera,
            min_eigenvalue,
            trace,
        }
    })
}

/// Unscaled per-camera blocks `S_P Z_s S_P` of an inverted reduced system.
pub fn extract_camera_covariances(
    inverse: &SchurInverse,
    scales: &ConditioningScales,
) -> CovarianceResult {
    let cameras: Vec<Matrix8> = (0..inverse.n_cameras())
        .into_par_iter()
        .map(|i| {
            let s = scales.camera(i);
            inverse.camera_block(i).component_mul(&(s * s.transpose()))
        })
        .collect();
    let psd_warnings = cameras
        .iter()
        .enumerate()
        .filter_map(|(i, b)| psd_warning(i, b))
        .collect();
    let pivots = inverse.pivots();
    CovarianceResult {
        cameras,
        points: None,
        diagnostics: Diagnostics {
            scale_min: scales.params.min(),
            scale_max: scales.params.max(),
            gauge_scales: scales.gauge.iter().copied().collect(),
            flagged_columns: scales.flagged.clone(),
            pivot_min: pivots.min_abs,
            pivot_max: pivots.max_abs,
            pivot_relative: pivots.relative,
            pivot_two_by_two: pivots.two_by_two,
            pivot_negative: pivots.negative,
            nullspace_residual: None,
            psd_warnings,
        },
    }
}

/// A factorized reduced system from which covariance blocks can be read.
pub struct NaturalCovariance {
    system: BorderedSystem,
    inverse: SchurInverse,
    nullspace_residual: Option<f64>,
}

impl NaturalCovariance {
    /// Runs the whole pipeline on a reconstruction.
    pub fn compute(rec: &Reconstruction) -> Result<Self> {
        let jac = assemble_jacobian(rec).map_err(|e| e.at_stage("jacobian"))?;
        let h = compute_nullspace(rec, &jac).map_err(|e| e.at_stage("nullspace"))?;
        let residual = nullspace_residual(&jac, h.matrix()).map_err(|e| e.at_stage("nullspace"))?;
        let fisher = build_fisher_blocks(&jac, rec).map_err(|e| e.at_stage("fisher"))?;
        drop(jac);
        let system = BorderedSystem::new(fisher, &h)
            .and_then(BorderedSystem::conditioned)
            .map_err(|e| e.at_stage("conditioning"))?;
        let mut out = Self::from_system(system)?;
        out.nullspace_residual = Some(residual);
        Ok(out)
    }

    /// Eliminates points from and factorizes an already assembled system.
    pub fn from_system(system: BorderedSystem) -> Result<Self> {
        let z = schur_reduce(&system).map_err(|e| e.at_stage("schur"))?;
        let inverse = invert_schur(z).map_err(|e| e.at_stage("inversion"))?;
        Ok(Self {
            system,
            inverse,
            nullspace_residual: None,
        })
    }

    pub fn n_cameras(&self) -> usize {
        self.system.fisher().n_cameras()
    }

    pub fn n_points(&self) -> usize {
        self.system.fisher().n_points()
    }

    pub fn system(&self) -> &BorderedSystem {
        &self.system
    }

    pub fn schur_inverse(&self) -> &SchurInverse {
        &self.inverse
    }

    pub fn camera_covariance(&self, i: usize) -> Matrix8 {
        let s = self.system.scales().camera(i);
        self.inverse
            .camera_block(i)
            .component_mul(&(s * s.transpose()))
    }

    /// Cross-covariance between cameras `i` (rows) and `j` (columns).
    pub fn camera_cross_covariance(&self, i: usize, j: usize) -> Matrix8 {
        let rows: Vec<usize> = (CAMERA_PARAMS * i..CAMERA_PARAMS * (i + 1)).collect();
        let cols: Vec<usize> = (CAMERA_PARAMS * j..CAMERA_PARAMS * (j + 1)).collect();
        let b = self.inverse.block(&rows, &cols);
        let (si, sj) = (
            self.system.scales().camera(i),
            self.system.scales().camera(j),
        );
        Matrix8::from_fn(|r, c| si[r] * b[(r, c)] * sj[c])
    }

    /// `V^{-1} B_j^T` rows of point `j` in the reduced system's coordinates.
    fn point_coupling(&self, j: usize) -> Vec<(usize, [f64; POINT_PARAMS])> {
        let fisher = self.system.fisher();
        let v_inv = self.inverse.point_inverses()[j];
        let cams = CAMERA_PARAMS * fisher.n_cameras();
        let mut rows = Vec::new();
        for &t in fisher.point_observations(j) {
            let a = fisher.pairs()[t].0;
            let f = fisher.coupling_block(t) * v_inv;
            for r in 0..CAMERA_PARAMS {
                rows.push((CAMERA_PARAMS * a + r, [f[(r, 0)], f[(r, 1)], f[(r, 2)]]));
            }
        }
        let hp = self
            .system
            .border()
            .rows(fisher.point_offset(j), POINT_PARAMS);
        let f = hp.transpose() * v_inv;
        for l in 0..self.system.border_dim() {
            rows.push((cams + l, [f[(l, 0)], f[(l, 1)], f[(l, 2)]]));
        }
        rows
    }

    pub fn point_covariance(&self, j: usize) -> Matrix3<f64> {
        let rows = self.point_coupling(j);
        let columns: Vec<(usize, &[f64])> = rows.iter().map(|(i, f)| (*i, f.as_slice())).collect();
        let extra = self.inverse.sandwich(&columns, POINT_PARAMS);
        let scaled = self.inverse.point_inverses()[j] + Matrix3::from_fn(|r, c| extra[(r, c)]);
        let s = self
            .system
            .scales()
            .params
            .fixed_rows::<3>(self.system.fisher().point_offset(j))
            .into_owned();
        let m = scaled.component_mul(&(s * s.transpose()));
        (m + m.transpose()) * 0.5
    }

    /// Camera blocks, and point blocks if requested.
    pub fn result(&self, with_points: bool) -> CovarianceResult {
        let mut out = extract_camera_covariances(&self.inverse, self.system.scales());
        out.diagnostics.nullspace_residual = self.nullspace_residual;
        if with_points {
            out.points = Some(
                (0..self.n_points())
                    .into_par_iter()
                    .map(|j| self.point_covariance(j))
                    .collect(),
            );
        }
        out
    }

    /// The full `(8n + 3m)^2` parameter covariance, cameras first.
    pub fn dense_covariance(&self) -> Result<DMatrix<f64>> {
        let fisher = self.system.fisher();
        let p = fisher.n_params();
        if p > DENSE_PARAM_LIMIT {
            return Err(Error::SizeGuard {
                params: p,
                limit: DENSE_PARAM_LIMIT,
            });
        }
        let cams = CAMERA_PARAMS * fisher.n_cameras();
        let z_inv = self.inverse.to_dense();
        let dim = z_inv.nrows();

        // G = A^{-1} B, point rows against reduced-system columns.
        let mut g = DMatrix::<f64>::zeros(p - cams, dim);
        for j in 0..fisher.n_points() {
            for (col, f) in self.point_coupling(j) {
                for r in 0..POINT_PARAMS {
                    g[(POINT_PARAMS * j + r, col)] = f[r];
                }
            }
        }
        let gz = &g * &z_inv;
        let mut sigma = DMatrix::<f64>::zeros(p, p);
        sigma
            .view_mut((0, 0), (cams, cams))
            .copy_from(&z_inv.view((0, 0), (cams, cams)));
        let cross = -gz.columns(0, cams);
        sigma
            .view_mut((cams, 0), (p - cams, cams))
            .copy_from(&cross);
        sigma
            .view_mut((0, cams), (cams, p - cams))
            .copy_from(&cross.transpose());
        let mut pp = gz * g.transpose();
        for (j, v_inv) in self.inverse.point_inverses().iter().enumerate() {
            let o = POINT_PARAMS * j;
            let mut blk = pp.fixed_view_mut::<3, 3>(o, o);
            blk += v_inv;
        }
        sigma
            .view_mut((cams, cams), (p - cams, p - cams))
            .copy_from(&pp);
        let s = &self.system.scales().params;
        let sigma = DMatrix::from_fn(p, p, |r, c| s[r] * sigma[(r, c)] * s[c]);
        Ok((&sigma + sigma.transpose()) * 0.5)
    }
}

/// Per-camera natural covariances of a reconstruction.
pub fn compute_covariance(rec: &Reconstruction) -> Result<CovarianceResult> {
    Ok(NaturalCovariance::compute(rec)?.result(false))
}
