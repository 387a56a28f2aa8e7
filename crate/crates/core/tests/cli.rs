use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_cadseq");
const CYLINDER: &str = "add_sketch(\"XY\")\nadd_circle(0.0, 0.0, 0.5)\nadd_extrude(0, 1.0)\n";

fn cadseq(args: &[&str]) -> Output {
    Command::new(BIN).args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn baseline_prints_closed_form() {
    let o = cadseq(&["baseline", "--eta", "0"]);
    assert!(o.status.success());
    assert_eq!(stdout(&o).trim(), "0.00390625");
    let o = cadseq(&["baseline", "--eta", "255", "--with-sketch"]);
    let v: f64 = stdout(&o).trim().parse().unwrap();
    assert!((v - (11.0 / 273.0 + 80.0 / 91.0)).abs() < 1e-12);
    assert_eq!(stdout(&cadseq(&["baseline"])).lines().count(), 257);
}

#[test]
fn usage_and_domain_exit_codes() {
    assert_eq!(cadseq(&["baseline", "--eta", "256"]).status.code(), Some(2));
    assert_eq!(cadseq(&["render"]).status.code(), Some(2));
    assert_eq!(
        cadseq(&["eval", "--gt", "x", "--pred", "y", "--size", "600x600"])
            .status
            .code(),
        Some(2)
    );
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.txt");
    fs::write(&bad, "add_line(0.5, 0.5)\n").unwrap();
    let o = cadseq(&["parse", p(&bad)]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("error"));
}

#[test]
fn version_lists_formats() {
    let o = cadseq(&["--version"]);
    assert!(o.status.success());
    assert!(stdout(&o).contains("matrix format 1"));
}

#[test]
fn program_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("cyl.txt");
    fs::write(&src, CYLINDER).unwrap();

    let json = dir.path().join("cyl.json");
    assert!(cadseq(&["parse", p(&src), "--out", p(&json)])
        .status
        .success());
    let emitted = stdout(&cadseq(&["emit", p(&json)]));
    assert_eq!(
        emitted,
        "add_sketch(\"XY\")\nadd_circle(0.000000, 0.000000, 0.500000)\nadd_extrude(0, 1.000000)\n"
    );

    let matrix = dir.path().join("cyl.matrix.json");
    assert!(cadseq(&["vectorize", p(&src), "--out", p(&matrix)])
        .status
        .success());
    let doc: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(&matrix).unwrap()).unwrap();
    assert_eq!(
        doc["matrix"][2],
        serde_json::json!([3, -1, 128, 128, -1, 128, -1])
    );
    let back = stdout(&cadseq(&["devectorize", p(&matrix)]));
    assert!(
        back.starts_with("add_sketch(\"XY\")\nadd_circle(0.00390625, 0.00390625, 0.501953125)"),
        "{back}"
    );

    let o = cadseq(&[
        "evaluate",
        p(&src),
        "--resolution",
        "32",
        "--stl",
        p(&dir.path().join("c.stl")),
    ]);
    assert!(o.status.success());
    assert!(stdout(&o).contains("bodies: 1"));
    assert!(fs::read_to_string(dir.path().join("c.stl"))
        .unwrap()
        .starts_with("solid"));

    let img = dir.path().join("cyl.pgm");
    let o = cadseq(&[
        "render",
        p(&src),
        "--size",
        "64x48",
        "--camera",
        "20,-20,20",
        "--out",
        p(&img),
    ]);
    assert!(o.status.success());
    assert!(fs::read(&img).unwrap().starts_with(b"P5\n64 48\n255\n"));
}

#[test]
fn dry_run_writes_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("ds");
    let o = cadseq(&["--dry-run", "synth", "--counts", "TS1=2", "--out", p(&out)]);
    assert!(o.status.success());
    assert!(stdout(&o).contains("would synthesize 2 samples"));
    assert!(!out.exists());

    let src = dir.path().join("cyl.txt");
    fs::write(&src, CYLINDER).unwrap();
    let img = dir.path().join("cyl.pgm");
    let o = cadseq(&[
        "render",
        p(&src),
        "--dry-run",
        "--size",
        "16x16",
        "--out",
        p(&img),
    ]);
    assert!(o.status.success());
    assert!(!img.exists());
}

#[test]
fn synth_is_reproducible_and_self_eval_is_perfect() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        let o = cadseq(&[
            "synth",
            "--mode",
            "rules",
            "--seed",
            "7",
            "--counts",
            "TS1=6,*=3",
            "--resolution",
            "32",
            "--size",
            "48x48",
            "--out",
            p(out),
        ]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    for sub in [
        "manifest.json",
        "images/TS1-1_00000.pgm",
        "matrices/TS5-3_00002.json",
        "programs/TS3-1_00001.txt",
    ] {
        assert_eq!(
            fs::read(a.join(sub)).unwrap(),
            fs::read(b.join(sub)).unwrap(),
            "{sub}"
        );
    }

    let report = dir.path().join("report.json");
    let test_dir = a.join("test");
    let o = cadseq(&[
        "eval",
        "--gt",
        p(&test_dir),
        "--pred",
        p(&test_dir),
        "--resolution",
        "32",
        "--out",
        p(&report),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let r: serde_json::Value = serde_json::from_str(&fs::read_to_string(&report).unwrap()).unwrap();
    for row in r["prefix"].as_array().unwrap() {
        for key in ["acp", "asot", "aot", "ap1", "ap2", "msot_tc", "msot_cs"] {
            assert_eq!(row[key], 1.0, "{key}");
        }
        assert_eq!(row["edsot"], 0.0);
    }
    assert_eq!(r["geometry"]["iou_mean"], 1.0);

    let text = stdout(&cadseq(&["report", p(&report)]));
    assert!(text.contains("parsing rate  1.0000"));
}

#[test]
fn thread_cap_is_validated() {
    let o = Command::new(BIN)
        .args(["baseline", "--eta", "1"])
        .env("CADSEQ_THREADS", "zero")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(2));
    let o = Command::new(BIN)
        .args(["baseline", "--eta", "1"])
        .env("CADSEQ_THREADS", "1")
        .output()
        .unwrap();
    assert!(o.status.success());
}
