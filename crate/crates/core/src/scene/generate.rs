//! Synthetic scenes with known geometry.

use std::f64::consts::{PI, TAU};

use nalgebra::{Matrix2, Matrix3, Rotation3, Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{Camera, Observation, Reconstruction, MIN_OBSERVATIONS_PER_CAMERA, MIN_TRACK_LENGTH};
use crate::error::{Error, Result};
use crate::projection::project;

/// World-to-camera rotation vector for a camera at `eye` looking at `target`.
fn look_at(eye: &Vector3<f64>, target: &Vector3<f64>, up: &Vector3<f64>) -> Vector3<f64> {
    let z = (target - eye).normalize();
    let up = if z.cross(up).norm() < 1e-6 {
        Vector3::new(up.y, up.z, up.x)
    } else {
        *up
    };
    let x = z.cross(&up).normalize();
    let y = z.cross(&x);
    let rows = Matrix3::from_rows(&[x.transpose(), y.transpose(), z.transpose()]);
    Rotation3::from_matrix_unchecked(rows).scaled_axis()
}

fn noise_model(noise_px: f64) -> Result<(Option<Normal<f64>>, Matrix2<f64>)> {
    if !(noise_px >= 0.0 && noise_px.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "pixel noise must be a non-negative number, got {noise_px}"
        )));
    }
    if noise_px == 0.0 {
        // A zero covariance is not invertible; noiseless scenes keep unit weights.
        return Ok((None, Matrix2::identity()));
    }
    let normal = Normal::new(0.0, noise_px).expect("valid standard deviation");
    Ok((Some(normal), Matrix2::identity() * (noise_px * noise_px)))
}

fn observe(
    cameras: &[Camera],
    points: &[Vector3<f64>],
    visible: &[(usize, usize)],
    noise_px: f64,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<Observation>> {
    let (normal, covariance) = noise_model(noise_px)?;
    visible
        .iter()
        .map(|&(i, j)| {
            let mut u = project(&cameras[i], &points[j])?;
            if let Some(n) = &normal {
                u += Vector2::new(n.sample(rng), n.sample(rng));
            }
            Ok(Observation::new(i, j, u).with_covariance(covariance))
        })
        .collect()
}

/// Six cameras around a cube of fifteen points; every camera sees ten points
/// and every point is seen by four cameras (60 observations).
pub fn generate_cube_scene(seed: u64, noise_px: f64) -> Result<Reconstruction> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let axes = [
        Vector3::x(),
        Vector3::y(),
        Vector3::z(),
        -Vector3::x(),
        -Vector3::y(),
        -Vector3::z(),
    ];
    let cameras: Vec<Camera> = axes
        .iter()
        .map(|axis| {
            let jitter = Vector3::from_fn(|_, _| rng.random_range(-0.3..0.3));
            let eye = axis * 6.0 + jitter;
            let target = Vector3::from_fn(|_, _| rng.random_range(-0.2..0.2));
            let focal = rng.random_range(900.0..1100.0);
            let k = rng.random_range(-0.05..0.05);
            Camera::new(look_at(&eye, &target, &Vector3::z()), eye, focal, k)
        })
        .collect();
    let points: Vec<Vector3<f64>> = (0..15)
        .map(|_| Vector3::from_fn(|_, _| rng.random_range(-1.0..1.0)))
        .collect();
    // Opposite cameras skip the same block of five points.
    let visible: Vec<(usize, usize)> = (0..6)
        .flat_map(|i| (0..15).filter(move |j| j / 5 != i % 3).map(move |j| (i, j)))
        .collect();
    let observations = observe(&cameras, &points, &visible, noise_px, &mut rng)?;
    Reconstruction::new(cameras, points, observations)
}

fn angular_distance(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(TAU);
    d.min(TAU - d)
}

/// Cameras on a ring of radius ~10 looking inward at points scattered in an
/// annulus of radius 3..6. Camera `i` sees the points whose azimuth lies
/// within `visibility * pi` of its own, so each point is seen by roughly
/// `visibility * n_cams` cameras and neighbouring camera indices share points.
pub fn generate_random_scene(
    n_cams: usize,
    n_pts: usize,
    visibility: f64,
    seed: u64,
    noise_px: f64,
) -> Result<Reconstruction> {
    if n_cams < 2 {
        return Err(Error::InvalidArgument(format!(
            "need at least 2 cameras, got {n_cams}"
        )));
    }
    if n_pts < 8 {
        return Err(Error::InvalidArgument(format!(
            "need at least 8 points, got {n_pts}"
        )));
    }
    if !(visibility > 0.0 && visibility <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "visibility must lie in (0, 1], got {visibility}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let spacing = TAU / n_cams as f64;

    let mut azimuths = Vec::with_capacity(n_cams);
    let cameras: Vec<Camera> = (0..n_cams)
        .map(|i| {
            let phi = i as f64 * spacing + rng.random_range(-0.2..0.2) * spacing;
            azimuths.push(phi);
            let radius = 10.0 + rng.random_range(-0.5..0.5);
            let eye = Vector3::new(
                radius * phi.cos(),
                radius * phi.sin(),
                rng.random_range(-0.5..0.5),
            );
            let target = Vector3::new(
                rng.random_range(-0.5..0.5),
                rng.random_range(-0.5..0.5),
                0.0,
            );
            let focal = rng.random_range(900.0..1100.0);
            let k = rng.random_range(-0.05..0.05);
            Camera::new(look_at(&eye, &target, &Vector3::z()), eye, focal, k)
        })
        .collect();

    let mut point_azimuths = Vec::with_capacity(n_pts);
    let points: Vec<Vector3<f64>> = (0..n_pts)
        .map(|_| {
            let psi = rng.random_range(0.0..TAU);
            point_azimuths.push(psi);
            let rho = rng.random_range(3.0..6.0);
            Vector3::new(
                rho * psi.cos(),
                rho * psi.sin(),
                rng.random_range(-1.5..1.5),
            )
        })
        .collect();

    let half_window = visibility * PI;
    let mut visible = Vec::new();
    let mut per_camera = vec![0usize; n_cams];
    for (j, &psi) in point_azimuths.iter().enumerate() {
        let mut seeing: Vec<usize> = (0..n_cams)
            .filter(|&c| angular_distance(azimuths[c], psi) <= half_window)
            .collect();
        if seeing.len() < MIN_TRACK_LENGTH {
            let mut nearest: Vec<usize> = (0..n_cams).collect();
            nearest.sort_by(|&a, &b| {
                angular_distance(azimuths[a], psi).total_cmp(&angular_distance(azimuths[b], psi))
            });
            for c in nearest {
                if seeing.len() >= MIN_TRACK_LENGTH {
                    break;
                }
                if !seeing.contains(&c) {
                    seeing.push(c);
                }
            }
        }
        seeing.sort_unstable();
        for c in seeing {
            per_camera[c] += 1;
            visible.push((c, j));
        }
    }
    if let Some(i) = per_camera
        .iter()
        .position(|&k| k < MIN_OBSERVATIONS_PER_CAMERA)
    {
        return Err(Error::InfeasibleVisibility(format!(
            "camera {i} sees {} points with visibility {visibility}, at least \
             {MIN_OBSERVATIONS_PER_CAMERA} required",
            per_camera[i]
        )));
    }

    let observations = observe(&cameras, &points, &visible, noise_px, &mut rng)
        .map_err(|e| Error::InfeasibleVisibility(e.to_string()))?;
    Reconstruction::new(cameras, points, observations)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::projection::residuals;

    #[test]
    fn cube_has_expected_shape() {
        let rec = generate_cube_scene(1, 0.5).unwrap();
        assert_eq!(
            (rec.n_cameras(), rec.n_points(), rec.n_observations()),
            (6, 15, 60)
        );
        for j in 0..15 {
            assert_eq!(rec.point_track(j).len(), 4);
        }
        assert_eq!(rec.observations()[0].covariance, Matrix2::identity() * 0.25);
    }

    #[test]
    fn noiseless_scenes_have_zero_residuals() {
        let cube = generate_cube_scene(1, 0.0).unwrap();
        assert_eq!(residuals(&cube).unwrap().amax(), 0.0);
        let pair = generate_random_scene(2, 8, 1.0, 1, 0.0).unwrap();
        assert_eq!(pair.n_observations(), 16);
        assert_eq!(residuals(&pair).unwrap().amax(), 0.0);
    }

    #[test]
    fn generators_are_deterministic() {
        assert_eq!(
            generate_cube_scene(3, 0.5).unwrap(),
            generate_cube_scene(3, 0.5).unwrap()
        );
        assert_ne!(
            generate_cube_scene(3, 0.5).unwrap(),
            generate_cube_scene(4, 0.5).unwrap()
        );
        let a = generate_random_scene(12, 200, 0.3, 9, 0.5).unwrap();
        let b = generate_random_scene(12, 200, 0.3, 9, 0.5).unwrap();
        assert_eq!(a.to_json_string(), b.to_json_string());
    }

    #[test]
    fn random_scene_preconditions() {
        assert!(matches!(
            generate_random_scene(1, 8, 0.5, 1, 0.0),
            Err(Error::InvalidArgument(_))
        ));
        assert!(generate_random_scene(4, 7, 0.5, 1, 0.0).is_err());
        assert!(generate_random_scene(4, 8, 0.0, 1, 0.0).is_err());
        assert!(matches!(
            generate_random_scene(50, 8, 0.01, 1, 0.0),
            Err(Error::InfeasibleVisibility(_))
        ));
    }

    #[test]
    fn window_matches_visibility_fraction() {
        let rec = generate_random_scene(200, 5000, 0.05, 7, 0.5).unwrap();
        let mean_track = rec.n_observations() as f64 / rec.n_points() as f64;
        assert!((mean_track - 10.0).abs() < 1.0, "mean track {mean_track}");
    }
}
