use std::fs;
use std::io::BufReader;
use std::net::TcpListener;
use std::path::Path;
use std::process::{Command, Output};
use std::thread;

use codofuzz::dataio::load_suite;
use codofuzz::desk;
use codofuzz::oracle::serve;

fn codofuzz(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_codofuzz"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

fn fuzz(out: &Path, oracle: &str, extra: &[&str]) -> Output {
    let mut args = vec![
        "fuzz",
        "--config",
        "desk",
        "--seeds",
        "desk",
        "--oracle",
        oracle,
        "--out",
        out.to_str().unwrap(),
    ];
    args.extend_from_slice(extra);
    codofuzz(&args)
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// Files whose bytes must not depend on the run: everything but the manifest
/// and the report, which carry timings.
fn deterministic_files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in fs::read_dir(&d).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
                continue;
            }
            let rel = path
                .strip_prefix(dir)
                .unwrap()
                .to_string_lossy()
                .into_owned();
            if rel != "manifest.json" && rel != "report.json" {
                files.push((rel, fs::read(&path).unwrap()));
            }
        }
    }
    files.sort();
    files
}

#[test]
fn fuzz_is_byte_deterministic() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for dir in [a.path(), b.path()] {
        let o = fuzz(dir, "builtin:desk", &["--iterations", "300"]);
        assert!(o.status.success(), "{}", stderr(&o));
    }
    let fa = deterministic_files(a.path());
    assert!(fa.iter().any(|(n, _)| n == "suite.jsonl"));
    assert!(fa.iter().any(|(n, _)| n.starts_with("images")));
    assert_eq!(fa, deterministic_files(b.path()));

    let c = tempfile::tempdir().unwrap();
    let o = fuzz(
        c.path(),
        "builtin:desk",
        &["--iterations", "300", "--rng-seed", "1"],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    assert_ne!(
        fs::read(a.path().join("suite.jsonl")).unwrap(),
        fs::read(c.path().join("suite.jsonl")).unwrap()
    );
}

/// A server that answers `limit` predicts on one connection, then goes away
/// for good so every reconnect is refused. Building the desk seed set takes
/// 3,150 predicts (the whole dataset, then each chosen seed again).
fn dying_server(limit: u64) -> String {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap().to_string();
    thread::spawn(move || {
        let (stream, _) = listener.accept().unwrap();
        drop(listener);
        let reader = BufReader::new(stream.try_clone().unwrap());
        let _ = serve(&desk::shipped_model(), reader, stream, Some(limit));
    });
    addr
}

#[test]
fn aborted_run_resumes_to_the_uninterrupted_result() {
    let full = tempfile::tempdir().unwrap();
    let o = fuzz(full.path(), "builtin:desk", &["--iterations", "400"]);
    assert!(o.status.success(), "{}", stderr(&o));

    let cut = tempfile::tempdir().unwrap();
    let oracle = format!("tcp:{}", dying_server(3150 + 250));
    let o = fuzz(cut.path(), &oracle, &["--iterations", "400"]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
    assert!(cut.path().join("checkpoint.json").exists());
    let partial = load_suite(cut.path()).unwrap().suite;
    let whole = load_suite(full.path()).unwrap().suite;
    assert!(partial.inputs.len() < whole.inputs.len());

    let o = codofuzz(&[
        "fuzz",
        "--resume",
        "--oracle",
        "builtin:desk",
        "--out",
        cut.path().to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(!cut.path().join("checkpoint.json").exists());
    assert_eq!(
        deterministic_files(cut.path()),
        deterministic_files(full.path())
    );
}

#[test]
fn evaluate_and_rotate_correlate_write_their_reports() {
    let suite = tempfile::tempdir().unwrap();
    let o = fuzz(suite.path(), "builtin:desk", &["--iterations", "200"]);
    assert!(o.status.success(), "{}", stderr(&o));

    let report = tempfile::tempdir().unwrap();
    let s = suite.path().to_str().unwrap();
    let o = codofuzz(&[
        "evaluate",
        "--suite",
        s,
        "--suite",
        s,
        "--out",
        report.path().to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let stdout = String::from_utf8(o.stdout).unwrap();
    assert_eq!(stdout.lines().count(), 2);
    assert!(stdout.contains("_2: "), "{stdout}");
    let csv = fs::read_to_string(report.path().join("metrics.csv")).unwrap();
    assert_eq!(csv.lines().count(), 3);

    let rot = tempfile::tempdir().unwrap();
    let o = codofuzz(&[
        "rotate-correlate",
        "--data",
        "desk",
        "--oracle",
        "builtin:desk",
        "--degrees",
        "0,10",
        "--bins",
        "20",
        "--cap",
        "20",
        "--out",
        rot.path().to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(String::from_utf8(o.stdout).unwrap().lines().count(), 2);
    assert!(rot.path().join("rotation.json").exists());
    assert!(rot.path().join("rotation.csv").exists());
}

#[test]
fn bad_arguments_fail_cleanly() {
    let dir = tempfile::tempdir().unwrap();
    let o = fuzz(dir.path(), "nonsense:x", &[]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("error"), "{}", stderr(&o));
    let o = codofuzz(&[
        "fuzz",
        "--resume",
        "--oracle",
        "builtin:desk",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("checkpoint.json"), "{}", stderr(&o));
}
