//! JSON and CSV forms of a [`CovarianceResult`].
//!
//! Symmetric blocks are stored as their row-major upper triangle.

use std::io::Write;
use std::path::Path;

use nalgebra::{Matrix3, SMatrix};
use serde::{Deserialize, Serialize};

use super::{CovarianceResult, Diagnostics, Matrix8};
use crate::error::{Error, Result};
use crate::scene::{CAMERA_PARAMS, POINT_PARAMS};

/// Entries in the upper triangle of an 8x8 block.
pub const UPPER_TRIANGLE_LEN: usize = CAMERA_PARAMS * (CAMERA_PARAMS + 1) / 2;

/// Row-major upper triangle of a square matrix.
pub fn upper_triangle<const D: usize>(m: &SMatrix<f64, D, D>) -> Vec<f64> {
    (0..D)
        .flat_map(|r| (r..D).map(move |c| m[(r, c)]))
        .collect()
}

fn from_upper_triangle<const D: usize>(v: &[f64]) -> Result<SMatrix<f64, D, D>> {
    if v.len() != D * (D + 1) / 2 {
        return Err(Error::DimensionMismatch(format!(
            "{} triangle entries for a {D}x{D} block",
            v.len()
        )));
    }
    let mut m = SMatrix::<f64, D, D>::zeros();
    let mut it = v.iter();
    for r in 0..D {
        for c in r..D {
            let x = *it.next().expect("length checked");
            m[(r, c)] = x;
            m[(c, r)] = x;
        }
    }
    Ok(m)
}

#[derive(Serialize, Deserialize)]
struct BlockRecord {
    id: usize,
    cov: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct CovarianceFile {
    cameras: Vec<BlockRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    points: Option<Vec<BlockRecord>>,
    diagnostics: Diagnostics,
}

impl CovarianceResult {
    pub fn to_json_string(&self) -> String {
        let file = CovarianceFile {
            cameras: self
                .cameras
                .iter()
                .enumerate()
                .map(|(id, m)| BlockRecord {
                    id,
                    cov: upper_triangle(m),
                })
                .collect(),
            points: self.points.as_ref().map(|pts| {
                pts.iter()
                    .enumerate()
                    .map(|(id, m)| BlockRecord {
                        id,
                        cov: upper_triangle(m),
                    })
                    .collect()
            }),
            diagnostics: self.diagnostics.clone(),
        };
        serde_json::to_string_pretty(&file).expect("covariance serialization")
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let file: CovarianceFile = serde_json::from_str(text).map_err(|e| Error::Parse {
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        })?;
        let cameras = file
            .cameras
            .iter()
            .map(|b| from_upper_triangle::<CAMERA_PARAMS>(&b.cov))
            .collect::<Result<Vec<Matrix8>>>()?;
        let points = file
            .points
            .map(|pts| {
                pts.iter()
                    .map(|b| from_upper_triangle::<POINT_PARAMS>(&b.cov))
                    .collect::<Result<Vec<Matrix3<f64>>>>()
            })
            .transpose()?;
        Ok(Self {
            cameras,
            points,
            diagnostics: file.diagnostics,
        })
    }

    /// One row per camera: `id` followed by the 36 upper-triangle entries.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["id".to_string()];
        for r in 0..CAMERA_PARAMS {
            for c in r..CAMERA_PARAMS {
                header.push(format!("s{r}{c}"));
            }
        }
        let csv_err = |e: csv::Error| Error::InvalidArgument(format!("csv output: {e}"));
        w.write_record(&header).map_err(csv_err)?;
        for (id, m) in self.cameras.iter().enumerate() {
            let mut row = vec![id.to_string()];
            row.extend(upper_triangle(m).iter().map(|v| format!("{v:e}")));
            w.write_record(&row).map_err(csv_err)?;
        }
        w.flush()
            .map_err(|e| Error::InvalidArgument(format!("csv output: {e}")))
    }

    pub fn save_json(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json_string()).map_err(|e| Error::io(path, e))
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv(std::io::BufWriter::new(file))
    }
}
