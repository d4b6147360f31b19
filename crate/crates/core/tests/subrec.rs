use gaugecov::scene::{generate_cube_scene, generate_random_scene};
use gaugecov::subrec::{
    approximate_covariances, build_view_graph, error_sweep, extract_neighborhood, induced_subscene,
    monotonicity_check, neighborhood_cameras, summarize_sweep, write_sweep_csv,
};
use gaugecov::{compute_covariance, Error};

#[test]
fn view_graph_weights_count_shared_points() {
    let rec = generate_random_scene(25, 400, 0.2, 3, 1.0).unwrap();
    let g = build_view_graph(&rec);
    let mut total = 0;
    for a in 0..rec.n_cameras() {
        for (b, w) in g.neighbors(a) {
            assert_eq!(g.weight(b, a), w);
            total += w;
        }
    }
    let expected: usize = (0..rec.n_points())
        .map(|j| {
            let t = rec.point_track(j).len();
            t * (t - 1)
        })
        .sum();
    assert_eq!(total, expected);
}

#[test]
fn greedy_neighbourhoods_are_nested() {
    let rec = generate_random_scene(60, 1200, 0.15, 4, 1.0).unwrap();
    let g = build_view_graph(&rec);
    let mut previous = neighborhood_cameras(&g, 17, 2);
    for k in [4, 8, 16, 32, 60] {
        let next = neighborhood_cameras(&g, 17, k);
        assert_eq!(next.len(), k);
        assert!(previous.iter().all(|c| next.contains(c)));
        previous = next;
    }
}

#[test]
fn subscene_traces_bound_the_full_scene() {
    let rec = generate_random_scene(60, 1200, 0.15, 4, 1.0).unwrap();
    let full = compute_covariance(&rec).unwrap();
    let g = build_view_graph(&rec);
    for center in [0, 20, 45] {
        let sub = extract_neighborhood(&rec, &g, center, 12).unwrap();
        let cov = compute_covariance(&sub.scene).unwrap();
        for (k, &c) in sub.cameras.iter().enumerate() {
            assert!(cov.trace(k) >= full.trace(c) * (1.0 - 1e-8));
        }
    }
}

#[test]
fn monotonicity_holds_for_nested_sets() {
    let rec = generate_random_scene(60, 1200, 0.15, 4, 1.0).unwrap();
    let g = build_view_graph(&rec);
    let small = neighborhood_cameras(&g, 30, 8);
    let large = neighborhood_cameras(&g, 30, 25);
    let report = monotonicity_check(&rec, &small, &large).unwrap();
    assert!(report.holds(), "{:?}", report.violations);
    assert_eq!(report.compared, 8);
    assert!(report.max_relative_increase < 0.0);
}

#[test]
fn monotonicity_rejects_non_nested_sets() {
    let rec = generate_random_scene(30, 600, 0.2, 4, 1.0).unwrap();
    let err = monotonicity_check(&rec, &[1, 2, 3, 29], &[1, 2, 3, 4, 5]).unwrap_err();
    assert!(matches!(err, Error::InvalidArgument(_)));
}

#[test]
fn induced_subscene_keeps_only_shared_points() {
    let rec = generate_cube_scene(1, 0.5).unwrap();
    let sub = induced_subscene(&rec, &[0, 3], None).unwrap();
    assert_eq!(sub.cameras, vec![0, 3]);
    for j in 0..sub.scene.n_points() {
        assert_eq!(sub.scene.point_track(j).len(), 2);
    }
    assert!(sub.points.iter().all(|&j| rec.point_track(j).len() >= 2));
}

#[test]
fn approximation_is_deterministic_and_tracks_provenance() {
    let rec = generate_random_scene(50, 1000, 0.15, 8, 1.0).unwrap();
    let a = approximate_covariances(&rec, 10, 3, 42).unwrap();
    let b = approximate_covariances(&rec, 10, 3, 42).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.subsets_per_decomposition.len(), 3);
    for (c, &(d, s)) in a.provenance.iter().enumerate() {
        assert!(d < 3 && s < a.subsets_per_decomposition[d]);
        assert_eq!(a.traces[c], a.blocks[c].trace());
    }
    assert!(matches!(
        approximate_covariances(&rec, 10, 0, 1),
        Err(Error::InvalidArgument(_))
    ));
}

#[test]
fn components_are_covered_separately() {
    let a = generate_cube_scene(1, 0.5).unwrap();
    let b = generate_cube_scene(2, 0.5).unwrap();
    // each cube is its own component; whole-component neighbourhoods work
    let rec = a.disjoint_union(&b).unwrap();
    let approx = approximate_covariances(&rec, 6, 1, 0).unwrap();
    assert_eq!(approx.subsets_per_decomposition, vec![2]);
    let full_a = compute_covariance(&a).unwrap();
    let (d, s) = approx.provenance[0];
    assert_eq!(d, 0);
    assert!(s < 2);
    assert!((approx.blocks[0] - full_a.cameras[0]).amax() <= 1e-10 * full_a.cameras[0].amax());
}

#[test]
fn sweep_rows_and_summary() {
    let rec = generate_random_scene(60, 1200, 0.15, 4, 1.0).unwrap();
    let full = compute_covariance(&rec).unwrap();
    let rows = error_sweep(&rec, &full, &[5, 20], 4, 9).unwrap();
    assert_eq!(rows.iter().filter(|r| r.kbar == 5).count(), 20);
    assert!(rows
        .iter()
        .all(|r| r.err_relative >= 0.0 && r.err_absolute >= 0.0));
    let summary = summarize_sweep(&rows);
    assert_eq!(summary.len(), 2);
    assert!(summary[1].median_absolute < summary[0].median_absolute);

    let mut out = Vec::new();
    write_sweep_csv(&rows, &mut out).unwrap();
    let text = String::from_utf8(out).unwrap();
    assert_eq!(text.lines().count(), rows.len() + 1);
    assert!(text.starts_with("kbar,subset_id,camera_id,err_relative,err_absolute,trace\n"));
    assert_eq!(rows, error_sweep(&rec, &full, &[5, 20], 4, 9).unwrap());
}

#[test]
fn identical_subsets_have_zero_difference() {
    let rec = generate_random_scene(30, 600, 0.2, 4, 1.0).unwrap();
    let set: Vec<usize> = (5..15).collect();
    let report = monotonicity_check(&rec, &set, &set).unwrap();
    assert_eq!(report.compared, 10);
    assert_eq!(report.max_relative_increase, 0.0);
}

#[test]
fn small_neighbourhood_on_large_ring_is_contiguous() {
    let rec = generate_random_scene(200, 4000, 0.05, 2, 1.0).unwrap();
    let g = build_view_graph(&rec);
    for center in [0, 77, 199] {
        let sub = extract_neighborhood(&rec, &g, center, 5).unwrap();
        assert!(sub.cameras.contains(&center));
        // contiguous modulo the ring
        let offsets: Vec<i64> = sub
            .cameras
            .iter()
            .map(|&c| (c as i64 - center as i64 + 300) % 200 - 100)
            .collect();
        let span = offsets.iter().max().unwrap() - offsets.iter().min().unwrap();
        assert_eq!(span, 4, "{:?}", sub.cameras);
    }
}

#[test]
fn relative_error_shrinks_with_neighbourhood_size() {
    let rec = generate_random_scene(150, 3000, 0.1, 7, 1.0).unwrap();
    let full = compute_covariance(&rec).unwrap();
    let rows = error_sweep(&rec, &full, &[5, 10, 20, 40, 80], 25, 3).unwrap();
    for r in &rows {
        assert!(r.trace >= full.trace(r.camera_id) * (1.0 - 1e-9));
    }
    let medians: Vec<f64> = summarize_sweep(&rows)
        .iter()
        .map(|s| s.median_relative)
        .collect();
    let inversions = medians.windows(2).filter(|w| w[1] > w[0]).count();
    assert!(inversions <= 1, "{medians:?}");
}
