use std::path::Path;
use std::process::{Command, Output};

fn chromaflow(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_chromaflow"))
        .args(args)
        .current_dir(cwd)
        .env_remove("CHROMAFLOW_THREADS")
        .output()
        .unwrap()
}

fn ok(out: &Output) -> String {
    assert_eq!(out.status.code(), Some(0), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn synth(dir: &Path, frames: usize) {
    ok(&chromaflow(&["synth", "--fixture", "two-objects", "--out", "fx", "--frames", &frames.to_string()], dir));
}

#[test]
fn help_matches_snapshots() {
    let dir = tempfile::tempdir().unwrap();
    let snapshots = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/snapshots");
    for name in ["main", "colorize", "eval-psnr", "eval-outlier", "dense-track", "synth", "inspect-features"] {
        let args: Vec<&str> = if name == "main" { vec!["--help"] } else { vec![name, "--help"] };
        let got = ok(&chromaflow(&args, dir.path()));
        let want = std::fs::read_to_string(snapshots.join(format!("{name}.txt"))).unwrap();
        assert_eq!(got, want, "help of {name}");
    }
}

#[test]
fn help_lists_tracking_defaults() {
    let dir = tempfile::tempdir().unwrap();
    let help = ok(&chromaflow(&["colorize", "--help"], dir.path()));
    for needle in ["--radius <RADIUS>", "[default: 9]", "[default: 0.2]", "[default: 384x216]", "[default: none]"] {
        assert!(help.contains(needle), "missing {needle}");
    }
}

#[test]
fn synth_writes_fixture_tree() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), 3);
    for sub in ["gray", "color", "labels", "masks"] {
        for k in 1..=3 {
            assert!(dir.path().join(format!("fx/{sub}/frame_{k:05}.png")).is_file(), "{sub} {k}");
        }
    }
}

#[test]
fn colorize_then_evaluate() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    synth(d, 4);
    let out = chromaflow(
        &[
            "colorize", "--input", "fx/gray", "--ref", "1=fx/color/frame_00001.png", "--mode", "inst+dense",
            "--labels", "fx/labels", "--resize", "none", "--out", "out",
        ],
        d,
    );
    ok(&out);
    let stderr = String::from_utf8(out.stderr).unwrap();
    let stages: Vec<&str> = stderr.lines().filter(|l| l.starts_with("STAGE ")).collect();
    assert!(!stages.is_empty());
    for line in &stages {
        let parts: Vec<&str> = line.split(' ').collect();
        assert_eq!(parts.len(), 3, "{line}");
        let (k, n) = parts[2].split_once('/').unwrap();
        assert!(k.parse::<usize>().unwrap() <= n.parse::<usize>().unwrap());
    }
    assert!(stages.contains(&"STAGE refine 4/4"));
    for k in 1..=4 {
        assert!(d.join(format!("out/frame_{k:05}.png")).is_file());
    }

    let csv = ok(&chromaflow(&["eval-outlier", "--pred", "out", "--gt", "fx/color", "--threshold", "16"], d));
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("video,frame,metric,region,threshold,value"));
    let rows: Vec<Vec<&str>> = lines.map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.len(), 6);
    assert!(rows.iter().all(|r| r[4] == "16"));

    let csv = ok(&chromaflow(&["eval-psnr", "--pred", "out", "--gt", "fx/color", "--masks", "fx/masks"], d));
    for region in ["full", "inner", "outer"] {
        assert!(csv.lines().any(|l| l.starts_with("all,mean,psnr,") && l.contains(&format!(",{region},"))));
    }
}

#[test]
fn thread_count_does_not_change_output() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    synth(d, 4);
    for threads in ["1", "3"] {
        let out = format!("out{threads}");
        ok(&chromaflow(
            &[
                "--threads", threads, "colorize", "--input", "fx/gray", "--ref", "1=fx/color/frame_00001.png",
                "--mode", "dense", "--resize", "none", "--out", &out,
            ],
            d,
        ));
    }
    for k in 1..=4 {
        let name = format!("frame_{k:05}.png");
        assert_eq!(
            std::fs::read(d.join("out1").join(&name)).unwrap(),
            std::fs::read(d.join("out3").join(&name)).unwrap()
        );
    }
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let unknown = chromaflow(&["colorize", "--bogus"], d);
    assert_eq!(unknown.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&unknown.stderr).contains("Usage:"));
    assert_eq!(chromaflow(&[], d).status.code(), Some(1));
    assert_eq!(chromaflow(&["synth", "--fixture", "nope", "--out", "x"], d).status.code(), Some(1));
    let missing = chromaflow(&["colorize", "--input", "missing", "--out", "o", "--ref", "1=r.png"], d);
    assert_eq!(missing.status.code(), Some(2));
    assert_eq!(chromaflow(&["--help"], d).status.code(), Some(0));
}
