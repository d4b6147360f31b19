//! Reconstructions: cameras, points and their image observations.
//!
//! A [`Reconstruction`] is validated once at construction and immutable
//! afterwards. The parameter vector it implies is the concatenation of all
//! camera parameter blocks followed by all point coordinates, with each camera
//! ordered as (rotation, center, focal, distortion).

mod generate;
mod io;

use std::collections::HashSet;

use nalgebra::{Matrix2, Rotation3, Vector2, Vector3};

use crate::error::{Error, Result};

pub use generate::{generate_cube_scene, generate_random_scene};
pub use io::{load_reconstruction, save_reconstruction};

/// Scalars per camera: rotation (3), center (3), focal (1), distortion (1).
pub const CAMERA_PARAMS: usize = 8;
/// Scalars per point.
pub const POINT_PARAMS: usize = 3;
/// Dimension of the similarity gauge: translation (3), rotation (3), scale (1).
pub const GAUGE_DIM: usize = 7;

pub const MIN_OBSERVATIONS_PER_CAMERA: usize = 4;
pub const MIN_TRACK_LENGTH: usize = 2;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Camera {
    /// Euler (axis-angle) vector of the world-to-camera rotation, radians.
    pub rotation: Vector3<f64>,
    /// Projection center in scene units.
    pub center: Vector3<f64>,
    /// Focal length in pixels.
    pub focal: f64,
    /// Radial distortion coefficient.
    pub distortion: f64,
}

impl Camera {
    pub fn new(rotation: Vector3<f64>, center: Vector3<f64>, focal: f64, distortion: f64) -> Self {
        Self {
            rotation,
            center,
            focal,
            distortion,
        }
    }

    /// Parameters in canonical order (r, C, c, k).
    pub fn params(&self) -> [f64; CAMERA_PARAMS] {
        let r = &self.rotation;
        let c = &self.center;
        [r.x, r.y, r.z, c.x, c.y, c.z, self.focal, self.distortion]
    }

    fn is_finite(&self) -> bool {
        self.params().iter().all(|v| v.is_finite())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Observation {
    pub camera: usize,
    pub point: usize,
    /// Measured image position in pixels.
    pub pixel: Vector2<f64>,
    /// Measurement covariance in pixels squared.
    pub covariance: Matrix2<f64>,
}

impl Observation {
    /// Observation with the default isotropic 1 px covariance.
    pub fn new(camera: usize, point: usize, pixel: Vector2<f64>) -> Self {
        Self {
            camera,
            point,
            pixel,
            covariance: Matrix2::identity(),
        }
    }

    pub fn with_covariance(mut self, covariance: Matrix2<f64>) -> Self {
        self.covariance = covariance;
        self
    }
}

pub(crate) fn is_spd2(m: &Matrix2<f64>) -> bool {
    let (a, b, c, d) = (m[(0, 0)], m[(0, 1)], m[(1, 0)], m[(1, 1)]);
    if !(a.is_finite() && b.is_finite() && c.is_finite() && d.is_finite()) {
        return false;
    }
    let scale = a.abs().max(d.abs()).max(f64::MIN_POSITIVE);
    (b - c).abs() <= 1e-12 * scale && a > 0.0 && a * d - b * c > 0.0
}

#[derive(Clone, Debug, PartialEq)]
pub struct Reconstruction {
    cameras: Vec<Camera>,
    points: Vec<Vector3<f64>>,
    observations: Vec<Observation>,
    by_camera: Vec<Vec<usize>>,
    by_point: Vec<Vec<usize>>,
}

impl Reconstruction {
    /// Builds a reconstruction, checking every structural invariant.
    pub fn new(
        cameras: Vec<Camera>,
        points: Vec<Vector3<f64>>,
        observations: Vec<Observation>,
    ) -> Result<Self> {
        if cameras.is_empty() {
            return Err(Error::Invalid("reconstruction has no cameras".into()));
        }
        if points.is_empty() {
            return Err(Error::Invalid("reconstruction has no points".into()));
        }
        for (i, cam) in cameras.iter().enumerate() {
            if !cam.is_finite() {
                return Err(Error::Invalid(format!(
                    "camera {i} has non-finite parameters"
                )));
            }
            if cam.focal <= 0.0 {
                return Err(Error::Invalid(format!(
                    "camera {i} has non-positive focal length {}",
                    cam.focal
                )));
            }
        }
        for (j, x) in points.iter().enumerate() {
            if !x.iter().all(|v| v.is_finite()) {
                return Err(Error::Invalid(format!(
                    "point {j} has non-finite coordinates"
                )));
            }
        }

        let mut by_camera = vec![Vec::new(); cameras.len()];
        let mut by_point = vec![Vec::new(); points.len()];
        let mut seen = HashSet::with_capacity(observations.len());
        for (t, obs) in observations.iter().enumerate() {
            if obs.camera >= cameras.len() {
                return Err(Error::Invalid(format!(
                    "observation {t} references camera {} (only {} cameras)",
                    obs.camera,
                    cameras.len()
                )));
            }
            if obs.point >= points.len() {
                return Err(Error::Invalid(format!(
                    "observation {t} references point {} (only {} points)",
                    obs.point,
                    points.len()
                )));
            }
            if !obs.pixel.iter().all(|v| v.is_finite()) {
                return Err(Error::Invalid(format!(
                    "observation {t} has a non-finite pixel"
                )));
            }
            if !is_spd2(&obs.covariance) {
                return Err(Error::Invalid(format!(
                    "observation {t} covariance is not symmetric positive definite"
                )));
            }
            if !seen.insert((obs.camera, obs.point)) {
                return Err(Error::Invalid(format!(
                    "camera {} observes point {} more than once",
                    obs.camera, obs.point
                )));
            }
            by_camera[obs.camera].push(t);
            by_point[obs.point].push(t);
        }
        for (i, list) in by_camera.iter().enumerate() {
            if list.len() < MIN_OBSERVATIONS_PER_CAMERA {
                return Err(Error::Invalid(format!(
                    "camera {i} observes {} points, at least {MIN_OBSERVATIONS_PER_CAMERA} required",
                    list.len()
                )));
            }
        }
        for (j, list) in by_point.iter().enumerate() {
            if list.len() < MIN_TRACK_LENGTH {
                return Err(Error::Invalid(format!(
                    "point {j} is observed by {} camera(s), at least {MIN_TRACK_LENGTH} required",
                    list.len()
                )));
            }
        }
        for list in &mut by_camera {
            list.sort_by_key(|&t| observations[t].point);
        }
        for list in &mut by_point {
            list.sort_by_key(|&t| observations[t].camera);
        }

        Ok(Self {
            cameras,
            points,
            observations,
            by_camera,
            by_point,
        })
    }

    pub fn cameras(&self) -> &[Camera] {
        &self.cameras
    }

    pub fn points(&self) -> &[Vector3<f64>] {
        &self.points
    }

    pub fn observations(&self) -> &[Observation] {
        &self.observations
    }

    pub fn n_cameras(&self) -> usize {
        self.cameras.len()
    }

    pub fn n_points(&self) -> usize {
        self.points.len()
    }

    pub fn n_observations(&self) -> usize {
        self.observations.len()
    }

    /// Length of the parameter vector, `8n + 3m`.
    pub fn n_params(&self) -> usize {
        CAMERA_PARAMS * self.n_cameras() + POINT_PARAMS * self.n_points()
    }

    /// Observation indices of camera `i`, ordered by point index.
    pub fn camera_observations(&self, i: usize) -> &[usize] {
        &self.by_camera[i]
    }

    /// Observation indices of point `j`, ordered by camera index.
    pub fn point_track(&self, j: usize) -> &[usize] {
        &self.by_point[j]
    }

    pub fn camera_offset(i: usize) -> usize {
        CAMERA_PARAMS * i
    }

    pub fn point_offset(&self, j: usize) -> usize {
        CAMERA_PARAMS * self.n_cameras() + POINT_PARAMS * j
    }

    /// Applies the similarity `x -> scale * rotation * x + translation` to the
    /// scene. Camera orientations are updated so that every projection is
    /// unchanged; observations are copied as-is.
    pub fn transformed(
        &self,
        rotation: &Rotation3<f64>,
        translation: &Vector3<f64>,
        scale: f64,
    ) -> Result<Self> {
        let cameras = self
            .cameras
            .iter()
            .map(|cam| {
                let r = Rotation3::new(cam.rotation) * rotation.inverse();
                Camera {
                    rotation: r.scaled_axis(),
                    center: scale * (rotation * cam.center) + translation,
                    ..*cam
                }
            })
            .collect();
        let points = self
            .points
            .iter()
            .map(|x| scale * (rotation * x) + translation)
            .collect();
        Self::new(cameras, points, self.observations.clone())
    }

    /// Same scene with points relabelled: new point `k` is old point `order[k]`.
    pub fn with_point_order(&self, order: &[usize]) -> Result<Self> {
        if order.len() != self.n_points() {
            return Err(Error::DimensionMismatch(format!(
                "point order has {} entries for {} points",
                order.len(),
                self.n_points()
            )));
        }
        let mut new_index = vec![usize::MAX; order.len()];
        for (k, &old) in order.iter().enumerate() {
            if old >= order.len() || new_index[old] != usize::MAX {
                return Err(Error::InvalidArgument(
                    "point order is not a permutation".into(),
                ));
            }
            new_index[old] = k;
        }
        let points = order.iter().map(|&old| self.points[old]).collect();
        let observations = self
            .observations
            .iter()
            .map(|o| Observation {
                point: new_index[o.point],
                ..*o
            })
            .collect();
        Self::new(self.cameras.clone(), points, observations)
    }

    /// Same scene with the observation list reordered.
    pub fn with_observation_order(&self, order: &[usize]) -> Result<Self> {
        if order.len() != self.n_observations() {
            return Err(Error::DimensionMismatch(format!(
                "observation order has {} entries for {} observations",
                order.len(),
                self.n_observations()
            )));
        }
        let observations = order.iter().map(|&t| self.observations[t]).collect();
        Self::new(self.cameras.clone(), self.points.clone(), observations)
    }

    /// Concatenates two scenes that share no cameras or points.
    pub fn disjoint_union(&self, other: &Self) -> Result<Self> {
        let (n, m) = (self.n_cameras(), self.n_points());
        let cameras = self.cameras.iter().chain(&other.cameras).copied().collect();
        let points = self.points.iter().chain(&other.points).copied().collect();
        let observations = self
            .observations
            .iter()
            .copied()
            .chain(other.observations.iter().map(|o| Observation {
                camera: o.camera + n,
                point: o.point + m,
                ..*o
            }))
            .collect();
        Self::new(cameras, points, observations)
    }

    /// Copy with one observation's measured pixel replaced.
    pub fn with_pixel(&self, observation: usize, pixel: Vector2<f64>) -> Result<Self> {
        let mut observations = self.observations.clone();
        let obs = observations.get_mut(observation).ok_or_else(|| {
            Error::InvalidArgument(format!("observation {observation} out of range"))
        })?;
        obs.pixel = pixel;
        Self::new(self.cameras.clone(), self.points.clone(), observations)
    }

    /// Copy with every observation covariance multiplied by `factor`.
    pub fn with_scaled_covariances(&self, factor: f64) -> Result<Self> {
        let observations = self
            .observations
            .iter()
            .map(|o| Observation {
                covariance: o.covariance * factor,
                ..*o
            })
            .collect();
        Self::new(self.cameras.clone(), self.points.clone(), observations)
    }
}
