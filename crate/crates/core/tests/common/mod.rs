#![allow(dead_code)]

use gaugecov::projection::project;
use gaugecov::scene::{Camera, CAMERA_PARAMS, POINT_PARAMS};
use gaugecov::Reconstruction;
use nalgebra::{DMatrix, SymmetricEigen, Vector2, Vector3};

/// Projection of observation `t` after adding `delta` to global parameter `p`.
fn perturbed_projection(rec: &Reconstruction, t: usize, p: usize, delta: f64) -> Vector2<f64> {
    let o = rec.observations()[t];
    let mut cam = rec.cameras()[o.camera];
    let mut x = rec.points()[o.point];
    let cams = CAMERA_PARAMS * rec.n_cameras();
    if p < cams {
        if p / CAMERA_PARAMS == o.camera {
            let mut v = cam.params();
            v[p % CAMERA_PARAMS] += delta;
            cam = Camera::new(
                Vector3::new(v[0], v[1], v[2]),
                Vector3::new(v[3], v[4], v[5]),
                v[6],
                v[7],
            );
        }
    } else if (p - cams) / POINT_PARAMS == o.point {
        x[(p - cams) % POINT_PARAMS] += delta;
    }
    project(&cam, &x).unwrap()
}

/// Central-difference Jacobian, step relative to each parameter's magnitude.
pub fn fd_jacobian(rec: &Reconstruction) -> DMatrix<f64> {
    let n_params = rec.n_params();
    let params = parameter_vector(rec);
    let mut j = DMatrix::zeros(2 * rec.n_observations(), n_params);
    for p in 0..n_params {
        let h = 1e-6 * params[p].abs().max(1e-2);
        for t in 0..rec.n_observations() {
            let d = (perturbed_projection(rec, t, p, h) - perturbed_projection(rec, t, p, -h))
                / (2.0 * h);
            j[(2 * t, p)] = d.x;
            j[(2 * t + 1, p)] = d.y;
        }
    }
    j
}

pub fn parameter_vector(rec: &Reconstruction) -> Vec<f64> {
    let mut v: Vec<f64> = rec.cameras().iter().flat_map(|c| c.params()).collect();
    v.extend(rec.points().iter().flat_map(|x| [x.x, x.y, x.z]));
    v
}

/// `J^T W J` with `W` the block-diagonal inverse observation covariance.
pub fn dense_information(rec: &Reconstruction, j: &DMatrix<f64>) -> DMatrix<f64> {
    let mut wj = j.clone();
    for (t, o) in rec.observations().iter().enumerate() {
        let w = o.covariance.try_inverse().unwrap();
        let rows = w * j.rows(2 * t, 2);
        wj.rows_mut(2 * t, 2).copy_from(&rows);
    }
    j.transpose() * wj
}

/// `W^{1/2} J` with `W` the block-diagonal inverse observation covariance.
pub fn whiten(rec: &Reconstruction, j: &DMatrix<f64>) -> DMatrix<f64> {
    let mut a = j.clone();
    for (t, o) in rec.observations().iter().enumerate() {
        let w = o.covariance.try_inverse().unwrap();
        let eig = SymmetricEigen::new(w);
        let root = eig.eigenvectors
            * nalgebra::Matrix2::from_diagonal(&eig.eigenvalues.map(f64::sqrt))
            * eig.eigenvectors.transpose();
        let rows = root * j.rows(2 * t, 2);
        a.rows_mut(2 * t, 2).copy_from(&rows);
    }
    a
}

/// `(J^T W J)^+` from the singular value decomposition of `W^{1/2} J`,
/// discarding the `drop` smallest singular values.
pub fn jacobian_pinv(a: &DMatrix<f64>, drop: usize) -> DMatrix<f64> {
    let svd = a.clone().svd(false, true);
    let v_t = svd.v_t.unwrap();
    let s = svd.singular_values;
    let mut order: Vec<usize> = (0..s.len()).collect();
    order.sort_by(|&x, &y| s[x].total_cmp(&s[y]));
    let mut out = DMatrix::zeros(a.ncols(), a.ncols());
    for &k in &order[drop..] {
        let v = v_t.row(k).transpose();
        out += &v * v.transpose() / (s[k] * s[k]);
    }
    (&out + out.transpose()) * 0.5
}

/// Pseudoinverse through a symmetric eigendecomposition, discarding the
/// `drop` eigenvalues of smallest magnitude.
pub fn eigen_pinv(m: &DMatrix<f64>, drop: usize) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(m.clone());
    let mut order: Vec<usize> = (0..m.nrows()).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[a]
            .abs()
            .total_cmp(&eig.eigenvalues[b].abs())
    });
    let mut out = DMatrix::zeros(m.nrows(), m.ncols());
    for &k in &order[drop..] {
        let v = eig.eigenvectors.column(k);
        out += v * v.transpose() / eig.eigenvalues[k];
    }
    (&out + out.transpose()) * 0.5
}

pub fn singular_values_ascending(m: &DMatrix<f64>) -> Vec<f64> {
    let mut s: Vec<f64> = m
        .clone()
        .svd(false, false)
        .singular_values
        .iter()
        .copied()
        .collect();
    s.sort_by(f64::total_cmp);
    s
}

pub fn max_rel_diff(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).amax() / b.amax()
}

pub fn camera_block(sigma: &DMatrix<f64>, i: usize) -> DMatrix<f64> {
    let o = CAMERA_PARAMS * i;
    sigma
        .view((o, o), (CAMERA_PARAMS, CAMERA_PARAMS))
        .into_owned()
}
