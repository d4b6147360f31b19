use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

fn gaugecov(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gaugecov"))
        .args(args)
        .env_remove("GAUGECOV_THREADS")
        .output()
        .expect("binary runs")
}

fn path(dir: &TempDir, name: &str) -> PathBuf {
    dir.path().join(name)
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn porcelain(out: &Output) -> Value {
    let text = String::from_utf8_lossy(&out.stdout);
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 1, "expected one summary line, got {text:?}");
    serde_json::from_str(lines[0]).unwrap()
}

fn cube(dir: &TempDir) -> PathBuf {
    let scene = path(dir, "cube.json");
    let out = gaugecov(&["generate", "--cube", "--noise", "0.5", "-o", s(&scene)]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    scene
}

#[test]
fn generate_cube_has_table_shape() {
    let dir = TempDir::new().unwrap();
    let scene = path(&dir, "cube.json");
    let out = gaugecov(&[
        "--porcelain",
        "generate",
        "--cube",
        "--noise",
        "0.5",
        "-o",
        s(&scene),
    ]);
    assert_eq!(out.status.code(), Some(0));
    let v = porcelain(&out);
    assert_eq!(v["summary"]["cameras"], 6);
    assert_eq!(v["summary"]["points"], 15);
    assert_eq!(v["summary"]["observations"], 60);
    let rec = gaugecov::scene::load_reconstruction(&scene).unwrap();
    assert_eq!(
        (rec.n_cameras(), rec.n_points(), rec.n_observations()),
        (6, 15, 60)
    );
}

#[test]
fn generate_random_scene_is_valid() {
    let dir = TempDir::new().unwrap();
    let scene = path(&dir, "big.json");
    let out = gaugecov(&[
        "generate",
        "--cams",
        "200",
        "--pts",
        "5000",
        "--seed",
        "7",
        "-o",
        s(&scene),
    ]);
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let rec = gaugecov::scene::load_reconstruction(&scene).unwrap();
    assert_eq!(rec.n_cameras(), 200);
    assert_eq!(rec.n_points(), 5000);
}

#[test]
fn bad_flags_exit_2() {
    assert_eq!(gaugecov(&["generate", "--cube"]).status.code(), Some(2));
    assert_eq!(
        gaugecov(&["generate", "--cams", "5", "-o", "x.json"])
            .status
            .code(),
        Some(2)
    );
    assert_eq!(gaugecov(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(
        gaugecov(&["compute", "a.json", "-o", "b.json", "--format", "xml"])
            .status
            .code(),
        Some(2)
    );
    let dir = TempDir::new().unwrap();
    let scene = cube(&dir);
    let out = gaugecov(&[
        "--threads",
        "0",
        "compute",
        s(&scene),
        "-o",
        s(&path(&dir, "c.json")),
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn io_failures_exit_3() {
    let dir = TempDir::new().unwrap();
    let missing = path(&dir, "missing.json");
    let out = gaugecov(&["compute", s(&missing), "-o", s(&path(&dir, "c.json"))]);
    assert_eq!(out.status.code(), Some(3));

    let garbage = path(&dir, "garbage.json");
    std::fs::write(&garbage, "{ not json").unwrap();
    let out = gaugecov(&["compute", s(&garbage), "-o", s(&path(&dir, "c.json"))]);
    assert_eq!(out.status.code(), Some(3));

    let scene = cube(&dir);
    let unwritable = dir.path().join("no/such/dir/c.json");
    let out = gaugecov(&["compute", s(&scene), "-o", s(&unwritable)]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn compute_writes_json_and_csv() {
    let dir = TempDir::new().unwrap();
    let scene = cube(&dir);
    let json_out = path(&dir, "cov.json");
    let out = gaugecov(&["compute", s(&scene), "-o", s(&json_out)]);
    assert_eq!(out.status.code(), Some(0));
    let cov =
        gaugecov::CovarianceResult::from_json_str(&std::fs::read_to_string(&json_out).unwrap())
            .unwrap();
    assert_eq!(cov.n_cameras(), 6);

    let csv_out = path(&dir, "cov.csv");
    let out = gaugecov(&["compute", s(&scene), "-o", s(&csv_out), "--format", "csv"]);
    assert_eq!(out.status.code(), Some(0));
    let text = std::fs::read_to_string(&csv_out).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 7);
    assert!(lines.iter().all(|l| l.split(',').count() == 37));
    assert!(lines[0].starts_with("id,s00,s01"));
}

#[test]
fn compute_stdout_is_only_the_porcelain_line() {
    let dir = TempDir::new().unwrap();
    let scene = cube(&dir);
    let out = gaugecov(&[
        "--porcelain",
        "compute",
        s(&scene),
        "-o",
        s(&path(&dir, "c.json")),
    ]);
    let v = porcelain(&out);
    assert_eq!(v["status"], "ok");
    assert_eq!(v["summary"]["cameras"], 6);
    assert!(v["summary"]["nullspace_residual"].as_f64().unwrap() < 1e-8);
    // progress goes to stderr
    assert!(!out.stderr.is_empty());
}

#[test]
fn disconnected_scene_fails_in_factorization() {
    let dir = TempDir::new().unwrap();
    let a = gaugecov::scene::generate_cube_scene(1, 0.5).unwrap();
    let b = gaugecov::scene::generate_cube_scene(2, 0.5).unwrap();
    let scene = path(&dir, "split.json");
    gaugecov::scene::save_reconstruction(&a.disjoint_union(&b).unwrap(), &scene).unwrap();
    let out = gaugecov(&[
        "--porcelain",
        "compute",
        s(&scene),
        "-o",
        s(&path(&dir, "c.json")),
    ]);
    assert_eq!(out.status.code(), Some(4));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("factorization"), "{stderr}");
    assert!(stderr.contains("stage"), "{stderr}");
    let v = porcelain(&out);
    assert_eq!(v["exit_code"], 4);
}

#[test]
fn verify_cube_passes() {
    let dir = TempDir::new().unwrap();
    let scene = cube(&dir);
    let table = path(&dir, "err.csv");
    let out = gaugecov(&["verify", s(&scene), "--csv", s(&table)]);
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert_eq!(out.status.code(), Some(0), "{stdout}");
    assert!(stdout.contains("PASS"));
    assert_eq!(std::fs::read_to_string(&table).unwrap().lines().count(), 7);

    let out = gaugecov(&["--porcelain", "verify", s(&scene)]);
    let v = porcelain(&out);
    assert!(v["summary"]["mean_err"].as_f64().unwrap() < 1e-4);
}

#[test]
fn verify_skips_oracle_above_guard() {
    let dir = TempDir::new().unwrap();
    let scene = cube(&dir);
    let out = gaugecov(&["--porcelain", "verify", s(&scene), "--oracle-limit", "10"]);
    assert_eq!(out.status.code(), Some(0));
    let v = porcelain(&out);
    assert_eq!(v["summary"]["oracle"], "skipped");
    assert!(String::from_utf8_lossy(&out.stderr).contains("skipping"));
}

#[test]
fn verify_detects_corruption() {
    let dir = TempDir::new().unwrap();
    let scene = cube(&dir);
    let out = gaugecov(&["verify", s(&scene), "--corrupt-camera", "2"]);
    assert_eq!(out.status.code(), Some(5));
    assert!(String::from_utf8_lossy(&out.stderr).contains("mean err"));
}

#[test]
fn threads_flag_and_env_are_deterministic() {
    let dir = TempDir::new().unwrap();
    let scene = path(&dir, "ring.json");
    gaugecov(&[
        "generate",
        "--cams",
        "40",
        "--pts",
        "600",
        "--visibility",
        "0.2",
        "--seed",
        "3",
        "-o",
        s(&scene),
    ]);
    let a = path(&dir, "a.json");
    let b = path(&dir, "b.json");
    let c = path(&dir, "c.json");
    assert!(
        gaugecov(&["--threads", "1", "compute", s(&scene), "-o", s(&a)])
            .status
            .success()
    );
    assert!(
        gaugecov(&["--threads", "1", "compute", s(&scene), "-o", s(&b)])
            .status
            .success()
    );
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());

    let out = Command::new(env!("CARGO_BIN_EXE_gaugecov"))
        .args(["compute", s(&scene), "-o", s(&c)])
        .env("GAUGECOV_THREADS", "3")
        .output()
        .unwrap();
    assert!(out.status.success());
    let load = |p: &Path| {
        gaugecov::CovarianceResult::from_json_str(&std::fs::read_to_string(p).unwrap()).unwrap()
    };
    let (x, y) = (load(&a), load(&c));
    for (p, q) in x.cameras.iter().zip(&y.cameras) {
        assert!((p - q).amax() <= 1e-12 * p.amax());
    }
}

#[test]
fn subrec_covers_cameras_and_sweeps() {
    let dir = TempDir::new().unwrap();
    let scene = path(&dir, "ring.json");
    gaugecov(&[
        "generate",
        "--cams",
        "60",
        "--pts",
        "1200",
        "--visibility",
        "0.15",
        "--seed",
        "5",
        "-o",
        s(&scene),
    ]);
    let one = path(&dir, "one.json");
    let three = path(&dir, "three.json");
    let sweep = path(&dir, "sweep.csv");
    let out = gaugecov(&[
        "subrec",
        s(&scene),
        "-o",
        s(&one),
        "--kbar",
        "10",
        "--decompositions",
        "1",
    ]);
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let out = gaugecov(&[
        "--porcelain",
        "subrec",
        s(&scene),
        "-o",
        s(&three),
        "--kbar",
        "10",
        "--sweep",
        s(&sweep),
        "--sweep-kbar",
        "5,10,20",
        "--sweep-subsets",
        "5",
    ]);
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert_eq!(
        porcelain(&out)["summary"]["sweep"]
            .as_array()
            .unwrap()
            .len(),
        3
    );

    let load = |p: &Path| {
        gaugecov::CovarianceResult::from_json_str(&std::fs::read_to_string(p).unwrap()).unwrap()
    };
    let (a, b) = (load(&one), load(&three));
    assert_eq!(a.n_cameras(), 60);
    for i in 0..60 {
        assert!(b.trace(i) <= a.trace(i));
    }
    let text = std::fs::read_to_string(&sweep).unwrap();
    assert_eq!(
        text.lines().next().unwrap(),
        "kbar,subset_id,camera_id,err_relative,err_absolute,trace"
    );
}

#[test]
fn subrec_default_kbar_covers_all_cameras() {
    let dir = TempDir::new().unwrap();
    let scene = path(&dir, "ring.json");
    gaugecov(&[
        "generate",
        "--cams",
        "150",
        "--pts",
        "2000",
        "--seed",
        "1",
        "-o",
        s(&scene),
    ]);
    let out_path = path(&dir, "approx.csv");
    let out = gaugecov(&["subrec", s(&scene), "-o", s(&out_path), "--format", "csv"]);
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert_eq!(
        std::fs::read_to_string(&out_path).unwrap().lines().count(),
        151
    );
}
