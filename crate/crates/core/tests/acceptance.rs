use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fs;
use std::path::Path;
use std::time::Instant;

use cadseq::dsl::{BooleanOp, CadOp, CadProgram, Plane};
use cadseq::geom::{evaluate_program, VoxelGrid};
use cadseq::metrics::{
    acp, ap1, asot, baseline_ap1_no_sketch, baseline_ap1_with_sketch, levenshtein, msot,
    parsing_rate, report, voxel_iou, PredictionPair, ReportConfig,
};
use cadseq::synth::{
    instantiate_template, synthesize_dataset, templates, Mode, Split, SynthConfig,
};
use cadseq::vector::{devectorize, vectorize, FeatureMatrix, MatrixDoc, COLS, ROWS};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    ok: bool,
    detail: String,
}

fn outcome(ok: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        ok,
        detail: detail.into(),
    }
}

/// Bin center of a value, computed from first principles.
fn snap(v: f64, lo: f64, hi: f64) -> f64 {
    let bin = (((v - lo) / (hi - lo) * 256.0).floor() as i64).clamp(0, 255);
    lo + (bin as f64 + 0.5) * (hi - lo) / 256.0
}

fn snap_program(p: &CadProgram) -> CadProgram {
    let s = |v| snap(v, -1.0, 1.0);
    let u = |v| snap(v, 0.0, 1.0);
    let ops = p
        .ops
        .iter()
        .map(|op| match *op {
            CadOp::Line { x, y } => CadOp::Line { x: s(x), y: s(y) },
            CadOp::Arc { x, y, sweep } => CadOp::Arc {
                x: s(x),
                y: s(y),
                sweep: u(sweep),
            },
            CadOp::Circle { x, y, radius } => CadOp::Circle {
                x: s(x),
                y: s(y),
                radius: u(radius),
            },
            CadOp::Extrude { depth, .. } => CadOp::Extrude {
                depth: s(depth),
                profile: 0,
                boolean: BooleanOp::Add,
            },
            other => other,
        })
        .collect();
    CadProgram { ops, scale: 10.0 }
}

fn round_trip() -> Outcome {
    let seqs = templates();
    let mut failures = 0;
    for i in 0..1000u64 {
        let seq = &seqs[i as usize % seqs.len()];
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        rng.set_stream(i);
        let p =
            instantiate_template(seq, Mode::Random, &mut rng, 16).expect("template instantiates");
        let m = vectorize(&p).unwrap();
        let back = devectorize(&m).unwrap();
        if back != snap_program(&p) || vectorize(&back).unwrap() != m {
            failures += 1;
        }
    }
    outcome(
        failures == 0,
        format!(
            "{} of 1000 programs exact, re-vectorize fixed point",
            1000 - failures
        ),
    )
}

fn cylinder() -> Outcome {
    let p = CadProgram::from_body([
        CadOp::Sketch { plane: Plane::XY },
        CadOp::Circle {
            x: 0.0,
            y: 0.0,
            radius: 0.5,
        },
        CadOp::extrude(1.0),
    ]);
    let scene = evaluate_program(&p, 64).unwrap();
    let grid = scene.occupancy();
    let exact = PI * 25.0 * 10.0;
    let rel = (grid.volume() - exact).abs() / exact;
    let analytic = VoxelGrid::from_fn(grid.lattice, |q| {
        q.x * q.x + q.y * q.y <= 25.0 && (0.0..=10.0).contains(&q.z)
    });
    let iou = voxel_iou(&grid, &analytic).unwrap();
    outcome(
        scene.bodies.len() == 1 && rel <= 0.03 && iou >= 0.95,
        format!(
            "bodies {} volume error {:.4} IoU {:.4}",
            scene.bodies.len(),
            rel,
            iou
        ),
    )
}

fn lev_oracle(a: &[i32], b: &[i32]) -> usize {
    match (a.split_first(), b.split_first()) {
        (None, _) => b.len(),
        (_, None) => a.len(),
        (Some((x, ra)), Some((y, rb))) => (lev_oracle(ra, rb) + usize::from(x != y))
            .min(lev_oracle(ra, b) + 1)
            .min(lev_oracle(a, rb) + 1),
    }
}

fn typed(types: &[i32]) -> FeatureMatrix {
    let mut m = FeatureMatrix::default();
    for (i, &t) in types.iter().enumerate() {
        m.rows[i] = [t, -1, -1, -1, -1, -1, -1];
    }
    m
}

fn metric_oracles() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut lev_bad = 0;
    for _ in 0..10_000 {
        let seq = |rng: &mut ChaCha8Rng| -> Vec<i32> {
            let n = rng.random_range(0..=6);
            (0..n).map(|_| rng.random_range(0..7)).collect()
        };
        let (a, b) = (seq(&mut rng), seq(&mut rng));
        lev_bad += usize::from(levenshtein(&a, &b) != lev_oracle(&a, &b));
    }

    let prism = typed(&[5, 0, 1, 1, 1, 4, 6]);
    let cyl = typed(&[5, 0, 3, 4, 6]);
    let (tc, cs) = msot(&[PredictionPair::new(prism, cyl)], ROWS).unwrap();
    let tc_ok = (tc - 4.0 / 14.0).abs() <= 1e-9;
    let cs_ok = (cs - 4.0 / 65f64.sqrt()).abs() <= 1e-9;

    let mut worst: f64 = 0.0;
    for eta in [0i64, 3, 16, 64, 255] {
        let trials = 100_000;
        let hits = (0..trials)
            .filter(|_| {
                let g: i64 = rng.random_range(0..256);
                let p: i64 = rng.random_range(0..256);
                (g - p).abs() <= eta
            })
            .count();
        worst =
            worst.max((hits as f64 / trials as f64 - baseline_ap1_no_sketch(eta).unwrap()).abs());
    }
    outcome(
        lev_bad == 0 && tc_ok && cs_ok && worst <= 0.01,
        format!("levenshtein mismatches {lev_bad}/10000, TC {tc:.12} CS {cs:.12}, Monte Carlo max gap {worst:.5}"),
    )
}

fn baseline_endpoints() -> Outcome {
    let a = baseline_ap1_no_sketch(0).unwrap();
    let b = baseline_ap1_no_sketch(255).unwrap();
    let c = baseline_ap1_with_sketch(255).unwrap();
    let ok = a == 1.0 / 256.0 && b == 1.0 && (c - (11.0 / 273.0 + 80.0 / 91.0)).abs() <= 1e-9;
    outcome(
        ok,
        format!("no sketch(0) = {a}, no sketch(255) = {b}, with sketch(255) = {c:.12}"),
    )
}

fn random_matrix(rng: &mut ChaCha8Rng) -> FeatureMatrix {
    let mut m = FeatureMatrix::default();
    let len = rng.random_range(1..=ROWS);
    for r in 1..len {
        m.rows[r][0] = rng.random_range(0..7);
        for c in 1..COLS {
            m.rows[r][c] = rng.random_range(-1..256);
        }
    }
    m
}

fn perturb(m: &FeatureMatrix, rng: &mut ChaCha8Rng) -> FeatureMatrix {
    let mut out = *m;
    for row in out.rows.iter_mut() {
        for v in row.iter_mut().skip(1) {
            if *v >= 0 && rng.random_bool(0.3) {
                *v = (*v + rng.random_range(-40..=40)).clamp(0, 255);
            }
        }
        if rng.random_bool(0.05) {
            row[0] = rng.random_range(0..7);
        }
    }
    out
}

fn protocol_identity(desk: &[FeatureMatrix]) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut sets = 0;
    let mut bad = 0;
    let config = ReportConfig {
        resolution: 8,
        width: 8,
        height: 8,
        ..ReportConfig::default()
    };
    for k in 0..200 {
        let n_pairs = rng.random_range(1..=12);
        let pairs: Vec<PredictionPair> = (0..n_pairs)
            .map(|_| {
                let gt = desk[rng.random_range(0..desk.len())];
                let pred = match rng.random_range(0..3) {
                    0 => gt,
                    1 => perturb(&gt, &mut rng),
                    _ => random_matrix(&mut rng),
                };
                PredictionPair::new(gt, pred)
            })
            .collect();
        sets += 1;
        if k < 20 {
            let r = report(&pairs, &config).unwrap();
            bad += r
                .sweeps
                .iter()
                .zip(&r.prefix)
                .filter(|(s, p)| s.acp[255] != p.asot)
                .count();
        } else {
            for n in 1..=6 {
                bad += usize::from(acp(&pairs, n, 255).unwrap() != asot(&pairs, n).unwrap());
            }
        }
    }
    outcome(
        bad == 0,
        format!("{sets} prediction sets, {bad} mismatching (set, n) cells"),
    )
}

fn read_tree(root: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let rel = path.strip_prefix(root).unwrap().display().to_string();
                out.insert(rel, fs::read(&path).unwrap());
            }
        }
    }
    out
}

fn synthesis(tmp: &Path) -> (Outcome, Vec<FeatureMatrix>) {
    let start = Instant::now();
    let config = SynthConfig::desk(Mode::Rules, 7);
    let (a, b) = (tmp.join("a"), tmp.join("b"));
    let manifest = synthesize_dataset(&config, &a).unwrap();
    synthesize_dataset(&config, &b).unwrap();
    let identical = read_tree(&a) == read_tree(&b);

    let matrices: Vec<FeatureMatrix> = manifest
        .records
        .iter()
        .map(|r| {
            serde_json::from_slice::<MatrixDoc>(&fs::read(a.join(&r.matrix)).unwrap())
                .unwrap()
                .matrix
        })
        .collect();
    let programs: Vec<CadProgram> = matrices.iter().map(|m| devectorize(m).unwrap()).collect();
    let rate = parsing_rate(&programs, config.resolution).unwrap();
    let splits: Vec<usize> = Split::ALL
        .iter()
        .map(|&s| manifest.split_count(s))
        .collect();

    let pairs: Vec<PredictionPair> = matrices
        .iter()
        .map(|m| PredictionPair::new(*m, *m))
        .collect();
    let r = report(&pairs, &ReportConfig::default()).unwrap();
    let perfect = r.prefix.iter().all(|p| {
        [p.acp, p.asot, p.aot, p.ap1, p.ap2, p.msot_tc, p.msot_cs]
            .iter()
            .all(|&v| v == 1.0)
            && p.edsot == 0.0
    }) && r
        .sweeps
        .iter()
        .all(|s| s.acp.iter().chain(&s.ap1).all(|&v| v == 1.0))
        && r.parameters.iter().all(|c| c.auc == 1.0)
        && r.geometry.parsing_rate == 1.0
        && r.geometry.iou_mean == Some(1.0)
        && r.geometry.mse_mean == Some(0.0);
    let secs = start.elapsed().as_secs_f64();
    let ok = identical
        && manifest.records.len() == 220
        && rate == 1.0
        && splits == [176, 22, 22]
        && perfect
        && secs < 300.0;
    let detail = format!(
        "{} records, byte-identical {identical}, parsing rate {rate}, split {:?}, perfect report {perfect}, {secs:.1}s",
        manifest.records.len(),
        splits
    );
    (outcome(ok, detail), matrices)
}

fn monotonicity(desk: &[FeatureMatrix]) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut violations = 0;
    for _ in 0..100 {
        let pairs: Vec<PredictionPair> = desk
            .iter()
            .map(|m| PredictionPair::new(*m, perturb(m, &mut rng)))
            .collect();
        for n in 1..=6 {
            let mut prev = (0.0, 0.0);
            for eta in 0..=255 {
                let cur = (acp(&pairs, n, eta).unwrap(), ap1(&pairs, n, eta).unwrap());
                violations += usize::from(cur.0 < prev.0) + usize::from(cur.1 < prev.1);
                prev = cur;
            }
        }
    }
    outcome(
        violations == 0,
        format!("100 perturbations x 6 prefixes x 256 tolerances, {violations} decreases"),
    )
}

fn main() {
    let tmp = tempfile::tempdir().unwrap();
    let mut results: Vec<(&str, Outcome)> = vec![
        ("representation round trip", round_trip()),
        ("cylinder ground truth", cylinder()),
        ("metric oracles", metric_oracles()),
        ("baseline endpoints", baseline_endpoints()),
    ];
    let (synth_outcome, desk) = synthesis(tmp.path());
    results.push(("protocol identity", protocol_identity(&desk)));
    results.push(("synthesis determinism and validity", synth_outcome));
    results.push(("monotonicity suite", monotonicity(&desk)));

    let mut failed = 0;
    for (name, o) in &results {
        println!(
            "{} {name}: {}",
            if o.ok { "PASS" } else { "FAIL" },
            o.detail
        );
        failed += usize::from(!o.ok);
    }
    if failed > 0 {
        eprintln!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
