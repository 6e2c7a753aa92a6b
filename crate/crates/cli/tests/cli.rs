use std::path::Path;
use std::process::{Command, Output};

fn forge(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_forge"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("spawn forge")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

#[test]
fn analytic_suite_exits_zero() {
    let dir = tempfile::tempdir().unwrap();
    let o = forge(&["validate", "--suite", "analytic"], dir.path());
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stdout));
    let out = String::from_utf8_lossy(&o.stdout);
    assert!(out.contains("0 failed"));
    assert!(!out.contains("FAIL"));
}

#[test]
fn usage_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let o = forge(&["validate", "--bogus"], dir.path());
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("Usage"));
    assert_eq!(code(&forge(&["gen-dataset", "Dx", "--count", "1"], dir.path())), 2);
    assert_eq!(code(&forge(&["seq", "moled", "--preset", "huge"], dir.path())), 2);
}

#[test]
fn paper_preset_needs_opt_in() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("cfg.txt"), "preset = paper\n").unwrap();
    let o = forge(&["gen-dataset", "Dm", "--count", "1", "--config", "cfg.txt", "--out", "d"], dir.path());
    assert_eq!(code(&o), 2);
    assert!(!dir.path().join("d").exists());
}

#[test]
fn bad_config_reports_line() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("cfg.txt"), "v_ro = [-1, 1]\nsnr_db = [60, 30]\n").unwrap();
    let o = forge(&["gen-dataset", "Dm", "--count", "1", "--config", "cfg.txt", "--out", "d"], dir.path());
    assert_eq!(code(&o), 1);
    assert!(!String::from_utf8_lossy(&o.stderr).is_empty());
}

fn tree_hashes(root: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(root).unwrap().to_string_lossy().into_owned();
                out.push((rel, std::fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

fn assert_same_tree(a: &[(String, Vec<u8>)], b: &[(String, Vec<u8>)]) {
    let names = |t: &[(String, Vec<u8>)]| t.iter().map(|f| f.0.clone()).collect::<Vec<_>>();
    assert_eq!(names(a), names(b));
    let differing: Vec<&str> = a.iter().zip(b).filter(|(x, y)| x.1 != y.1).map(|(x, _)| x.0.as_str()).collect();
    assert!(differing.is_empty(), "contents differ: {differing:?}");
}

#[test]
fn gen_dataset_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    for out in ["a", "b"] {
        let o = forge(&["gen-dataset", "Dm", "--count", "4", "--seed", "7", "--out", out], dir.path());
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    }
    let a = tree_hashes(&dir.path().join("a"));
    assert_eq!(a.len(), 1 + 4 * 5);
    assert_same_tree(&a, &tree_hashes(&dir.path().join("b")));
    assert_eq!(code(&forge(&["validate", "--dataset", "a"], dir.path())), 0);

    // Resume after damage regenerates only what is missing.
    std::fs::remove_file(dir.path().join("a/sample_000002/label_t2.msd")).unwrap();
    assert_eq!(code(&forge(&["validate", "--dataset", "a"], dir.path())), 1);
    let o = forge(&["gen-dataset", "Dm", "--count", "4", "--seed", "7", "--out", "a"], dir.path());
    assert_eq!(code(&o), 0);
    assert_same_tree(&a, &tree_hashes(&dir.path().join("a")));

    // A stray file is reported.
    std::fs::write(dir.path().join("a/extra.msd"), b"x").unwrap();
    assert_eq!(code(&forge(&["validate", "--dataset", "a"], dir.path())), 1);
}

#[test]
fn seq_dump_and_check() {
    let dir = tempfile::tempdir().unwrap();
    let o = forge(&["seq", "moled", "--out", "moled.seq"], dir.path());
    assert_eq!(code(&o), 0);
    let o = forge(&["seq", "check", "moled.seq"], dir.path());
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stdout));

    // Drop the refocusing pulse; the checker must flag it.
    let text = std::fs::read_to_string(dir.path().join("moled.seq")).unwrap();
    let broken: String = text
        .lines()
        .filter(|l| !(l.starts_with("RF") && l.contains("role=ref")))
        .map(|l| format!("{l}\n"))
        .collect();
    assert_ne!(broken, text);
    std::fs::write(dir.path().join("broken.seq"), broken).unwrap();
    assert_eq!(code(&forge(&["seq", "check", "broken.seq"], dir.path())), 1);
}

#[test]
fn metrics_commands() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("xy.csv"), "x,y\n1,5\n2,7\n3,9\n4,11\n").unwrap();
    let o = forge(&["metrics", "linreg", "xy.csv"], dir.path());
    assert_eq!(code(&o), 0);
    let out = String::from_utf8_lossy(&o.stdout);
    let vals: Vec<f64> = out.lines().nth(1).unwrap().split(',').map(|v| v.parse().unwrap()).collect();
    assert!((vals[0] - 2.0).abs() < 1e-12 && (vals[1] - 3.0).abs() < 1e-12);

    assert_eq!(code(&forge(&["fields", "b1", "--size", "16", "--out", "b1.msd"], dir.path())), 0);
    let o = forge(&["metrics", "nrmse", "b1.msd", "b1.msd"], dir.path());
    assert_eq!(code(&o), 0);
    assert!(String::from_utf8_lossy(&o.stdout).contains("nrmse_percent,0"));
    let o = forge(&["metrics", "gsr", "b1.msd", "--signal", "0,0,4,4"], dir.path());
    assert_eq!(code(&o), 0);
    assert_eq!(code(&forge(&["metrics", "gsr", "b1.msd", "--signal", "0,0,4"], dir.path())), 2);
}

#[test]
fn phantom_and_simulate() {
    let dir = tempfile::tempdir().unwrap();
    let o = forge(&["phantom", "head", "--size", "32", "--out", "t.msd"], dir.path());
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let o = forge(&["seq", "se", "--te", "40", "--matrix", "16", "--out", "se.seq"], dir.path());
    assert_eq!(code(&o), 0);
    let o = forge(
        &["simulate", "--seq", "se.seq", "--templates", "t.msd", "--v-ro", "-3", "--out", "k.msd", "--image", "i.msd"],
        dir.path(),
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(dir.path().join("k.msd").exists() && dir.path().join("i.msd").exists());
}
