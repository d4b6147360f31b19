use std::fs;
use std::path::Path;

use nalgebra::{Matrix2, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use super::{Camera, Observation, Reconstruction};
use crate::error::{Error, Result};

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SceneFile {
    cameras: Vec<CameraRecord>,
    points: Vec<[f64; 3]>,
    observations: Vec<ObservationRecord>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CameraRecord {
    r: [f64; 3],
    #[serde(rename = "C")]
    center: [f64; 3],
    c: f64,
    k: f64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ObservationRecord {
    cam: usize,
    pt: usize,
    u: [f64; 2],
    /// Upper triangle `[s11, s12, s22]`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    sigma: Option<[f64; 3]>,
}

impl From<&Reconstruction> for SceneFile {
    fn from(rec: &Reconstruction) -> Self {
        SceneFile {
            cameras: rec
                .cameras()
                .iter()
                .map(|cam| CameraRecord {
                    r: cam.rotation.into(),
                    center: cam.center.into(),
                    c: cam.focal,
                    k: cam.distortion,
                })
                .collect(),
            points: rec.points().iter().map(|&x| x.into()).collect(),
            observations: rec
                .observations()
                .iter()
                .map(|o| ObservationRecord {
                    cam: o.camera,
                    pt: o.point,
                    u: o.pixel.into(),
                    sigma: Some([
                        o.covariance[(0, 0)],
                        o.covariance[(0, 1)],
                        o.covariance[(1, 1)],
                    ]),
                })
                .collect(),
        }
    }
}

impl TryFrom<SceneFile> for Reconstruction {
    type Error = Error;

    fn try_from(file: SceneFile) -> Result<Self> {
        let cameras = file
            .cameras
            .into_iter()
            .map(|c| Camera::new(c.r.into(), c.center.into(), c.c, c.k))
            .collect();
        let points = file.points.into_iter().map(Vector3::from).collect();
        let observations = file
            .observations
            .into_iter()
            .map(|o| {
                let obs = Observation::new(o.cam, o.pt, Vector2::from(o.u));
                match o.sigma {
                    Some([a, b, c]) => obs.with_covariance(Matrix2::new(a, b, b, c)),
                    None => obs,
                }
            })
            .collect();
        Reconstruction::new(cameras, points, observations)
    }
}

impl Reconstruction {
    pub fn from_json_str(text: &str) -> Result<Self> {
        let file: SceneFile = serde_json::from_str(text).map_err(|e| Error::Parse {
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        })?;
        Reconstruction::try_from(file)
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(&SceneFile::from(self)).expect("scene serialization")
    }
}

pub fn load_reconstruction(path: impl AsRef<Path>) -> Result<Reconstruction> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Reconstruction::from_json_str(&text)
}

/// Writes `rec` as JSON. The scene is re-validated before anything touches the disk.
pub fn save_reconstruction(rec: &Reconstruction, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let checked = Reconstruction::new(
        rec.cameras().to_vec(),
        rec.points().to_vec(),
        rec.observations().to_vec(),
    )?;
    fs::write(path, checked.to_json_string()).map_err(|e| Error::io(path, e))
}
