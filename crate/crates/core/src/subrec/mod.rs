//! Covariances of large scenes approximated from sub-reconstructions.
//!
//! Each sub-reconstruction is a greedy view-graph neighbourhood of a centre
//! camera. Removing cameras and observations can only remove information, so
//! sub-scene covariances over-estimate the full ones; the smallest trace over
//! several decompositions is kept per camera.

mod experiment;
mod graph;

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::covariance::{compute_covariance, CovarianceResult, Matrix8};
use crate::error::{Error, Result};
use crate::scene::{Observation, Reconstruction, MIN_OBSERVATIONS_PER_CAMERA, MIN_TRACK_LENGTH};

pub use experiment::{
    error_sweep, monotonicity_check, summarize_sweep, write_sweep_csv, MonotonicityReport,
    SweepRow, SweepSummary, Violation, MONOTONICITY_TOL,
};
pub use graph::{build_view_graph, build_view_graph_with, ViewGraph};

/// Default neighbourhood size.
pub const DEFAULT_K_BAR: usize = 100;
/// Default number of decompositions.
pub const DEFAULT_DECOMPOSITIONS: usize = 3;

/// A camera subset with the scene it induces.
#[derive(Clone, Debug)]
pub struct Subscene {
    pub center: usize,
    /// Original indices of the kept cameras, increasing; subscene camera `k`
    /// is original camera `cameras[k]`.
    pub cameras: Vec<usize>,
    /// Original indices of the kept points, increasing.
    pub points: Vec<usize>,
    pub scene: Reconstruction,
    /// The centre's connected component had fewer than `k_bar` cameras.
    pub component_too_small: bool,
    /// Selected cameras removed for lack of observations.
    pub dropped: Vec<usize>,
}

impl Subscene {
    /// Subscene index of original camera `camera`.
    pub fn local_index(&self, camera: usize) -> Option<usize> {
        self.cameras.binary_search(&camera).ok()
    }
}

/// Scene induced by a camera set: points seen by at least two of the cameras,
/// with cameras left with too few observations removed (iteratively).
///
/// `required`, if given, must survive the pruning, otherwise the subscene is
/// rejected.
pub fn induced_subscene(
    rec: &Reconstruction,
    cameras: &[usize],
    required: Option<usize>,
) -> Result<Subscene> {
    let Some(&first) = cameras.first() else {
        return Err(Error::InvalidArgument("empty camera set".into()));
    };
    let center = required.unwrap_or(first);
    let mut keep = vec![false; rec.n_cameras()];
    for &c in cameras {
        if c >= rec.n_cameras() {
            return Err(Error::InvalidArgument(format!("camera {c} out of range")));
        }
        keep[c] = true;
    }
    let mut dropped = Vec::new();
    let points = loop {
        let points: Vec<usize> = (0..rec.n_points())
            .filter(|&j| {
                rec.point_track(j)
                    .iter()
                    .filter(|&&t| keep[rec.observations()[t].camera])
                    .count()
                    >= MIN_TRACK_LENGTH
            })
            .collect();
        let mut seen = vec![0usize; rec.n_cameras()];
        for &j in &points {
            for &t in rec.point_track(j) {
                seen[rec.observations()[t].camera] += 1;
            }
        }
        let weak: Vec<usize> = (0..rec.n_cameras())
            .filter(|&c| keep[c] && seen[c] < MIN_OBSERVATIONS_PER_CAMERA)
            .collect();
        if weak.is_empty() {
            break points;
        }
        if required.is_some_and(|r| weak.contains(&r)) {
            return Err(Error::EmptySubscene { center });
        }
        for c in weak {
            keep[c] = false;
            dropped.push(c);
        }
    };
    let kept: Vec<usize> = (0..rec.n_cameras()).filter(|&c| keep[c]).collect();
    if kept.len() < 2 || points.is_empty() {
        return Err(Error::EmptySubscene { center });
    }

    let mut camera_map = vec![usize::MAX; rec.n_cameras()];
    for (k, &c) in kept.iter().enumerate() {
        camera_map[c] = k;
    }
    let mut point_map = vec![usize::MAX; rec.n_points()];
    for (k, &j) in points.iter().enumerate() {
        point_map[j] = k;
    }
    let observations = rec
        .observations()
        .iter()
        .filter(|o| camera_map[o.camera] != usize::MAX && point_map[o.point] != usize::MAX)
        .map(|o| Observation {
            camera: camera_map[o.camera],
            point: point_map[o.point],
            ..*o
        })
        .collect();
    let scene = Reconstruction::new(
        kept.iter().map(|&c| rec.cameras()[c]).collect(),
        points.iter().map(|&j| rec.points()[j]).collect(),
        observations,
    )?;
    dropped.sort_unstable();
    Ok(Subscene {
        center,
        cameras: kept,
        points,
        scene,
        component_too_small: false,
        dropped,
    })
}

/// Up to `k_bar` cameras grown greedily from `center`: the next camera is the
/// outside one with the largest total co-observation weight to the current
/// set, ties going to the lowest index.
pub fn neighborhood_cameras(graph: &ViewGraph, center: usize, k_bar: usize) -> Vec<usize> {
    let mut chosen = vec![center];
    let mut in_set = vec![false; graph.n_nodes()];
    in_set[center] = true;
    let mut frontier: BTreeMap<usize, usize> = BTreeMap::new();
    let add = |c: usize, frontier: &mut BTreeMap<usize, usize>, in_set: &[bool]| {
        for (n, w) in graph.neighbors(c) {
            if !in_set[n] {
                *frontier.entry(n).or_insert(0) += w;
            }
        }
    };
    add(center, &mut frontier, &in_set);
    while chosen.len() < k_bar {
        // BTreeMap iterates in index order, so `max_by_key` would pick the
        // highest index on ties; compare explicitly instead.
        let Some((&next, _)) =
            frontier
                .iter()
                .fold(None, |best: Option<(&usize, &usize)>, cand| match best {
                    Some(b) if b.1 >= cand.1 => Some(b),
                    _ => Some(cand),
                })
        else {
            break;
        };
        frontier.remove(&next);
        in_set[next] = true;
        chosen.push(next);
        add(next, &mut frontier, &in_set);
    }
    chosen.sort_unstable();
    chosen
}

pub fn extract_neighborhood(
    rec: &Reconstruction,
    graph: &ViewGraph,
    center: usize,
    k_bar: usize,
) -> Result<Subscene> {
    if k_bar < 2 {
        return Err(Error::InvalidArgument(format!(
            "neighbourhood size must be >= 2, got {k_bar}"
        )));
    }
    if center >= rec.n_cameras() || graph.n_nodes() != rec.n_cameras() {
        return Err(Error::InvalidArgument(format!(
            "centre {center} not in a view graph of {} cameras",
            graph.n_nodes()
        )));
    }
    let cameras = neighborhood_cameras(graph, center, k_bar);
    let mut sub = induced_subscene(rec, &cameras, Some(center))?;
    sub.component_too_small = cameras.len() < k_bar;
    if sub.component_too_small {
        log::warn!(
            "camera {center}: component has {} cameras, fewer than {k_bar}",
            cameras.len()
        );
    }
    Ok(sub)
}

/// Subsets of one decomposition.
#[derive(Clone, Debug)]
pub struct SubRecPlan {
    pub subsets: Vec<Subscene>,
}

/// Covers every camera with neighbourhoods around random, still uncovered
/// centres.
pub fn plan_decomposition(
    rec: &Reconstruction,
    graph: &ViewGraph,
    k_bar: usize,
    seed: u64,
) -> Result<SubRecPlan> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut covered = vec![false; rec.n_cameras()];
    let mut subsets = Vec::new();
    loop {
        let uncovered: Vec<usize> = (0..rec.n_cameras()).filter(|&c| !covered[c]).collect();
        if uncovered.is_empty() {
            break;
        }
        let center = uncovered[rng.random_range(0..uncovered.len())];
        let sub = extract_neighborhood(rec, graph, center, k_bar)?;
        for &c in &sub.cameras {
            covered[c] = true;
        }
        subsets.push(sub);
    }
    Ok(SubRecPlan { subsets })
}

#[derive(Clone, Debug, PartialEq)]
pub struct AggregatedCovariance {
    pub blocks: Vec<Matrix8>,
    pub traces: Vec<f64>,
    /// `(decomposition, subset)` that produced each camera's block.
    pub provenance: Vec<(usize, usize)>,
    /// Number of subsets in each decomposition.
    pub subsets_per_decomposition: Vec<usize>,
}

impl AggregatedCovariance {
    pub fn to_result(&self) -> CovarianceResult {
        CovarianceResult {
            cameras: self.blocks.clone(),
            points: None,
            diagnostics: Default::default(),
        }
    }
}

/// Covariance of every camera of every subset of a plan, by original camera.
pub fn subset_covariances(plan: &SubRecPlan) -> Result<Vec<Vec<(usize, Matrix8)>>> {
    plan.subsets
        .par_iter()
        .enumerate()
        .map(|(s, sub)| {
            let cov = compute_covariance(&sub.scene).map_err(|e| Error::Subscene {
                subset: s,
                source: Box::new(e),
            })?;
            Ok(sub.cameras.iter().copied().zip(cov.cameras).collect())
        })
        .collect()
}

/// Trace, block and `(decomposition, subset)` origin.
type Candidate = (f64, Matrix8, (usize, usize));

/// Runs `n_decompositions` decompositions (seeds `seed`, `seed + 1`, ...)
/// and keeps, for each camera, the block with the smallest trace.
pub fn approximate_covariances(
    rec: &Reconstruction,
    k_bar: usize,
    n_decompositions: usize,
    seed: u64,
) -> Result<AggregatedCovariance> {
    if n_decompositions == 0 {
        return Err(Error::InvalidArgument(
            "need at least one decomposition".into(),
        ));
    }
    let graph = build_view_graph(rec);
    let n = rec.n_cameras();
    let mut best: Vec<Option<Candidate>> = vec![None; n];
    let mut subsets_per_decomposition = Vec::with_capacity(n_decompositions);
    for d in 0..n_decompositions {
        let plan = plan_decomposition(rec, &graph, k_bar, seed.wrapping_add(d as u64))?;
        subsets_per_decomposition.push(plan.subsets.len());
        for (s, blocks) in subset_covariances(&plan)?.into_iter().enumerate() {
            for (c, block) in blocks {
                let trace = block.trace();
                if best[c].as_ref().map_or(true, |b| trace < b.0) {
                    best[c] = Some((trace, block, (d, s)));
                }
            }
        }
    }
    let mut blocks = Vec::with_capacity(n);
    let mut traces = Vec::with_capacity(n);
    let mut provenance = Vec::with_capacity(n);
    for (c, b) in best.into_iter().enumerate() {
        let (trace, block, origin) = b.ok_or(Error::UncoveredCamera { camera: c })?;
        blocks.push(block);
        traces.push(trace);
        provenance.push(origin);
    }
    Ok(AggregatedCovariance {
        blocks,
        traces,
        provenance,
        subsets_per_decomposition,
    })
}
