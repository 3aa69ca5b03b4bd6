use std::path::Path;
use std::process::{Command, Output};

use dect_core::io::{load_image, read_raw};
use tempfile::tempdir;

// Noiseless monochromatic CDM+FBP of sim18 at 128x128 measured -23.34 dB.
// Most of the residual sits on the binary disc edges.
const CDM_FBP_NOISELESS_BOUND_DB: f64 = -23.0;

fn dect(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dect"))
        .args(args)
        .env("RUST_LOG", "warn")
        .env_remove("DECT_THREADS")
        .output()
        .expect("spawn dect")
}

fn ok(args: &[&str]) -> Output {
    let out = dect(args);
    assert!(out.status.success(), "dect {args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn dims(path: &Path) -> (String, usize, usize) {
    let (h, data) = read_raw(path).unwrap();
    assert_eq!(data.len(), h.rows * h.cols);
    (h.kind, h.rows, h.cols)
}

fn simulate_small(dir: &Path, extra: &[&str]) {
    let mut args = vec!["simulate", "--geometry", "32x32:45:47", "--photons", "1e5", "--out", p(dir)];
    args.extend_from_slice(extra);
    ok(&args);
}

fn telemetry_rows(dir: &Path) -> Vec<Vec<String>> {
    let text = std::fs::read_to_string(dir.join("telemetry.csv")).unwrap();
    let mut lines = text.lines();
    assert!(lines.next().unwrap().starts_with("iter,e_c_db,e_p_db"));
    lines.map(|l| l.split(',').map(str::to_string).collect()).collect()
}

#[test]
fn desk_simulation_has_expected_dimensions() {
    let t = tempdir().unwrap();
    ok(&["simulate", "--out", p(t.path())]);
    assert_eq!(dims(&t.path().join("truth_c.raw")), ("image".into(), 128, 128));
    assert_eq!(dims(&t.path().join("truth_p.raw")), ("image".into(), 128, 128));
    for name in ["measured_high", "measured_low", "weights_high", "weights_low", "noiseless_high", "line_c"] {
        assert_eq!(dims(&t.path().join(format!("{name}.raw"))), ("sinogram".into(), 180, 185), "{name}");
    }
    let angles = std::fs::read_to_string(t.path().join("angles.txt")).unwrap();
    assert_eq!(angles.lines().count(), 180);
    let pgm = std::fs::read(t.path().join("truth_c.pgm")).unwrap();
    assert!(pgm.starts_with(b"P5\n# window "));
    let header_end = pgm.iter().enumerate().filter(|(_, b)| **b == b'\n').nth(3).unwrap().0 + 1;
    assert!(std::str::from_utf8(&pgm[..header_end]).unwrap().ends_with("\n128 128\n65535\n"));
    assert_eq!(pgm.len() - header_end, 128 * 128 * 2);
}

#[test]
fn paper_simulation_has_expected_dimensions() {
    let t = tempdir().unwrap();
    ok(&["simulate", "--geometry", "paper", "--noiseless", "--out", p(t.path())]);
    assert_eq!(dims(&t.path().join("truth_c.raw")), ("image".into(), 512, 512));
    assert_eq!(dims(&t.path().join("measured_high.raw")), ("sinogram".into(), 720, 725));
}

#[test]
fn simulation_is_reproducible() {
    let (a, b, c) = (tempdir().unwrap(), tempdir().unwrap(), tempdir().unwrap());
    simulate_small(a.path(), &["--seed", "11"]);
    simulate_small(b.path(), &["--seed", "11"]);
    simulate_small(c.path(), &["--seed", "12"]);
    for name in ["measured_high.raw", "measured_low.raw", "weights_low.raw", "manifest.txt"] {
        let x = std::fs::read(a.path().join(name)).unwrap();
        assert_eq!(x, std::fs::read(b.path().join(name)).unwrap(), "{name}");
    }
    let x = std::fs::read(a.path().join("measured_high.raw")).unwrap();
    assert_ne!(x, std::fs::read(c.path().join("measured_high.raw")).unwrap());
}

#[test]
fn cdm_fbp_reproduces_noiseless_monochromatic_phantom() {
    let (s, r) = (tempdir().unwrap(), tempdir().unwrap());
    ok(&["simulate", "--noiseless", "--mono", "100,60", "--out", p(s.path())]);
    ok(&["recon", "--input", p(s.path()), "--method", "cdm-fbp", "--out", p(r.path())]);
    let rows = telemetry_rows(r.path());
    assert_eq!(rows.len(), 1);
    let e_c: f64 = rows[0][1].parse().unwrap();
    assert!(e_c <= CDM_FBP_NOISELESS_BOUND_DB, "e_c = {e_c}");
    let out = ok(&["metrics", p(&r.path().join("x")), p(&s.path().join("truth"))]);
    let text = String::from_utf8(out.stdout).unwrap();
    let printed: f64 = text.lines().next().unwrap().strip_prefix("e_c_db ").unwrap().parse().unwrap();
    assert!((printed - e_c).abs() < 1e-3, "{printed} vs {e_c}");
}

#[test]
fn admm_pcg_writes_one_row_per_iteration() {
    let (s, r) = (tempdir().unwrap(), tempdir().unwrap());
    simulate_small(s.path(), &[]);
    ok(&[
        "recon", "--input", p(s.path()), "--method", "admm-pcg", "--cg-iters", "5", "--max-iters", "4", "--tol", "0",
        "--out", p(r.path()),
    ]);
    let rows = telemetry_rows(r.path());
    let iters: Vec<usize> = rows.iter().map(|r| r[0].parse().unwrap()).collect();
    assert_eq!(iters, vec![0, 1, 2, 3, 4]);
    assert!(rows.iter().all(|r| r.len() == 13));
    assert_eq!(dims(&r.path().join("x_c.raw")), ("image".into(), 32, 32));
    assert!(r.path().join("x_p.pgm").is_file());
    let run = std::fs::read_to_string(r.path().join("run.txt")).unwrap();
    assert!(run.contains("pe_init_scale 1000\n"));
}

#[test]
fn admm_lm_counter_deltas_meet_the_minimum() {
    let (s, r) = (tempdir().unwrap(), tempdir().unwrap());
    simulate_small(s.path(), &[]);
    ok(&[
        "recon", "--input", p(s.path()), "--method", "admm-lm", "--lm-iters", "1", "--cg-iters", "5", "--max-iters",
        "3", "--tol", "0", "--out", p(r.path()),
    ]);
    let rows = telemetry_rows(r.path());
    let (m, n) = (1, 5);
    for w in rows.windows(2) {
        let delta = |k: usize| w[1][k].parse::<u64>().unwrap() - w[0][k].parse::<u64>().unwrap();
        assert!(delta(9) >= 2 * m * (n + 1), "forward delta {}", delta(9));
        assert!(delta(10) >= 2 * m * (n + 1), "adjoint delta {}", delta(10));
    }
}

#[test]
fn metrics_trivial_cases() {
    let (s, r) = (tempdir().unwrap(), tempdir().unwrap());
    simulate_small(s.path(), &["--noiseless"]);
    let truth = s.path().join("truth");
    let out = ok(&["metrics", p(&truth), p(&truth), "--roi-radius", "100"]);
    assert_eq!(String::from_utf8(out.stdout).unwrap(), "e_c_db -inf\ne_c_roi_db -inf\ne_p_db -inf\ne_p_roi_db -inf\n");

    let img = load_image(&s.path().join("truth_c.raw")).unwrap();
    let doubled = r.path().join("double.raw");
    dect_core::io::save_image(&doubled, &img.map(|v| 2.0 * v), 0.8).unwrap();
    let out = ok(&["metrics", p(&doubled), p(&s.path().join("truth_c.raw")), "--roi-radius", "100"]);
    let text = String::from_utf8(out.stdout).unwrap();
    let vals: Vec<f64> = text.lines().map(|l| l.split(' ').nth(1).unwrap().parse().unwrap()).collect();
    assert!(vals[0].abs() < 1e-9);
    assert_eq!(vals[0], vals[1]);
}

#[test]
fn metrics_rejects_shape_mismatch() {
    let (a, b) = (tempdir().unwrap(), tempdir().unwrap());
    simulate_small(a.path(), &["--noiseless"]);
    ok(&["simulate", "--geometry", "16x16:23:25", "--noiseless", "--out", p(b.path())]);
    let out = dect(&["metrics", p(&a.path().join("truth")), p(&b.path().join("truth"))]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn unconverged_rays_above_threshold_exit_with_two() {
    let (s, r) = (tempdir().unwrap(), tempdir().unwrap());
    simulate_small(s.path(), &[]);
    let report = r.path().join("failures.txt");
    let out = dect(&[
        "recon", "--input", p(s.path()), "--udm-iters", "1", "--max-iters", "1", "--tol", "0", "--failure-report",
        p(&report), "--out", p(r.path()),
    ]);
    assert_eq!(out.status.code(), Some(2));
    let text = std::fs::read_to_string(&report).unwrap();
    let first = text.lines().next().expect("at least one failure");
    let (idx, reason) = first.split_once('\t').unwrap();
    idx.parse::<usize>().unwrap();
    assert_eq!(reason, "max-iterations");

    let lenient = dect(&[
        "recon", "--input", p(s.path()), "--udm-iters", "1", "--max-iters", "1", "--tol", "0", "--max-unconverged",
        "1000000", "--out", p(r.path()),
    ]);
    assert_eq!(lenient.status.code(), Some(0));
}

#[test]
fn reconstruction_is_thread_count_invariant() {
    let s = tempdir().unwrap();
    simulate_small(s.path(), &[]);
    let outs: Vec<_> = ["1", "3"]
        .iter()
        .map(|threads| {
            let r = tempdir().unwrap();
            ok(&[
                "--threads", threads, "recon", "--input", p(s.path()), "--max-iters", "3", "--tol", "0", "--untimed",
                "--out", p(r.path()),
            ]);
            r
        })
        .collect();
    for name in ["telemetry.csv", "x_c.raw", "x_p.raw", "x_p.pgm"] {
        let a = std::fs::read(outs[0].path().join(name)).unwrap();
        assert_eq!(a, std::fs::read(outs[1].path().join(name)).unwrap(), "{name}");
    }
}

#[test]
fn precond_dump_writes_psf_and_gains() {
    let t = tempdir().unwrap();
    ok(&["precond-dump", "--geometry", "32x32:45:47", "--out", p(t.path())]);
    let psf = load_image(&t.path().join("psf.raw")).unwrap();
    let gains = load_image(&t.path().join("gains.raw")).unwrap();
    assert_eq!(psf.side(), 32);
    let peak = psf.as_slice().iter().cloned().fold(f64::MIN, f64::max);
    assert_eq!(peak, psf.get(16, 16));
    assert!(gains.as_slice().iter().all(|g| *g > 0.0));
}

#[test]
fn invalid_inputs_fail_cleanly() {
    let t = tempdir().unwrap();
    assert!(!dect(&["recon", "--input", p(t.path()), "--method", "sirt", "--out", p(t.path())]).status.success());
    assert!(!dect(&["simulate", "--colour", "red", "--out", p(t.path())]).status.success());
    let missing = dect(&["recon", "--input", p(&t.path().join("none")), "--out", p(t.path())]);
    assert_eq!(missing.status.code(), Some(1));
    assert!(!dect(&["simulate", "--geometry", "32x16:4:4", "--out", p(t.path())]).status.success());
}
