//! Shared fixtures for the benchmarks.

use gaugecov::scene::generate_random_scene;
use gaugecov::Reconstruction;

/// Ring scene with about `track` observations per point.
pub fn ring_scene(cameras: usize, points: usize, track: usize) -> Reconstruction {
    let visibility = (track as f64 / cameras as f64).min(1.0);
    generate_random_scene(cameras, points, visibility, 1, 1.0).expect("benchmark scene")
}
