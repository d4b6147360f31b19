use std::io::Write;
use std::path::Path;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{build_view_graph, extract_neighborhood, induced_subscene};
use crate::covariance::{compute_covariance, CovarianceResult};
use crate::error::{Error, Result};
use crate::oracle::{block_abs_error, block_error, median, normalization};
use crate::scene::Reconstruction;

/// Relative slack allowed before a trace increase counts as a violation.
pub const MONOTONICITY_TOL: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub kbar: usize,
    pub subset_id: usize,
    pub camera_id: usize,
    pub err_relative: f64,
    pub err_absolute: f64,
    pub trace: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepSummary {
    pub kbar: usize,
    pub rows: usize,
    pub mean_relative: f64,
    pub median_relative: f64,
    pub median_absolute: f64,
}

/// Compares sub-reconstruction covariances against `full` for neighbourhoods
/// of each size in `k_bars`, around `centers_per_size` random centres each.
pub fn error_sweep(
    rec: &Reconstruction,
    full: &CovarianceResult,
    k_bars: &[usize],
    centers_per_size: usize,
    seed: u64,
) -> Result<Vec<SweepRow>> {
    if full.n_cameras() != rec.n_cameras() {
        return Err(Error::DimensionMismatch(format!(
            "{} reference blocks for {} cameras",
            full.n_cameras(),
            rec.n_cameras()
        )));
    }
    let graph = build_view_graph(rec);
    let (o, _) = normalization(rec);
    let mut rows = Vec::new();
    for (s, &k_bar) in k_bars.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(s as u64));
        let count = centers_per_size.min(rec.n_cameras());
        let centers = sample(&mut rng, rec.n_cameras(), count).into_vec();
        let per_subset: Vec<Vec<SweepRow>> = centers
            .par_iter()
            .enumerate()
            .map(|(id, &center)| {
                let wrap = |e| Error::Subscene {
                    subset: id,
                    source: Box::new(e),
                };
                let sub = extract_neighborhood(rec, &graph, center, k_bar).map_err(wrap)?;
                let cov = compute_covariance(&sub.scene).map_err(wrap)?;
                Ok(sub
                    .cameras
                    .iter()
                    .zip(&cov.cameras)
                    .map(|(&c, block)| SweepRow {
                        kbar: k_bar,
                        subset_id: id,
                        camera_id: c,
                        err_relative: block_error(&full.cameras[c], block, &o),
                        err_absolute: block_abs_error(&full.cameras[c], block),
                        trace: block.trace(),
                    })
                    .collect())
            })
            .collect::<Result<_>>()?;
        rows.extend(per_subset.into_iter().flatten());
    }
    Ok(rows)
}

/// Per-size statistics, in the order the sizes first appear.
pub fn summarize_sweep(rows: &[SweepRow]) -> Vec<SweepSummary> {
    let mut sizes: Vec<usize> = Vec::new();
    for r in rows {
        if !sizes.contains(&r.kbar) {
            sizes.push(r.kbar);
        }
    }
    sizes
        .into_iter()
        .map(|kbar| {
            let rel: Vec<f64> = rows
                .iter()
                .filter(|r| r.kbar == kbar)
                .map(|r| r.err_relative)
                .collect();
            let abs: Vec<f64> = rows
                .iter()
                .filter(|r| r.kbar == kbar)
                .map(|r| r.err_absolute)
                .collect();
            SweepSummary {
                kbar,
                rows: rel.len(),
                mean_relative: rel.iter().sum::<f64>() / rel.len() as f64,
                median_relative: median(&rel),
                median_absolute: median(&abs),
            }
        })
        .collect()
}

pub fn write_sweep_csv(rows: &[SweepRow], out: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)
            .map_err(|e| Error::InvalidArgument(format!("csv output: {e}")))?;
    }
    w.flush()
        .map_err(|e| Error::InvalidArgument(format!("csv output: {e}")))
}

impl SweepRow {
    pub fn save_csv(rows: &[Self], path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        write_sweep_csv(rows, std::io::BufWriter::new(file))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Violation {
    pub camera: usize,
    pub trace_small: f64,
    pub trace_large: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MonotonicityReport {
    /// Cameras present in both induced scenes.
    pub compared: usize,
    pub violations: Vec<Violation>,
    /// Largest `(trace_large - trace_small) / trace_large`; negative when
    /// every trace shrank.
    pub max_relative_increase: f64,
}

impl MonotonicityReport {
    pub fn holds(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Checks that enlarging a camera set never increases any shared camera's
/// covariance trace. `small` must be a subset of `large`.
pub fn monotonicity_check(
    rec: &Reconstruction,
    small: &[usize],
    large: &[usize],
) -> Result<MonotonicityReport> {
    if let Some(c) = small.iter().find(|c| !large.contains(c)) {
        return Err(Error::InvalidArgument(format!(
            "camera {c} of the smaller set is missing from the larger one"
        )));
    }
    let a = induced_subscene(rec, small, None)?;
    let b = induced_subscene(rec, large, None)?;
    let cov_a = compute_covariance(&a.scene)?;
    let cov_b = compute_covariance(&b.scene)?;
    let mut report = MonotonicityReport {
        compared: 0,
        violations: Vec::new(),
        max_relative_increase: f64::NEG_INFINITY,
    };
    for (ka, &c) in a.cameras.iter().enumerate() {
        let Some(kb) = b.local_index(c) else { continue };
        let small_trace = cov_a.trace(ka);
        let large_trace = cov_b.trace(kb);
        report.compared += 1;
        let rel = (large_trace - small_trace) / large_trace;
        report.max_relative_increase = report.max_relative_increase.max(rel);
        if rel > MONOTONICITY_TOL {
            report.violations.push(Violation {
                camera: c,
                trace_small: small_trace,
                trace_large: large_trace,
            });
        }
    }
    Ok(report)
}
