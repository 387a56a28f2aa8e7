//! Template-driven dataset synthesis.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::dsl::{emit_sim_gallery, CadOp, CadProgram, OpType, Plane};
use crate::geom::{evaluate_program, program_extent, LATTICE_MARGIN};
use crate::render::{render, Camera, RenderError};
use crate::vector::{quantize_program, snap_value, vectorize, MatrixDoc, QuantRange, VectorError};

pub const MAX_ATTEMPTS: usize = 100;
pub const RULE_SET_VERSION: &str = "rules-v1";
pub const RULE_SWEEPS: [f64; 4] = [0.25, 0.5, 0.75, 1.0];
pub const DEFAULT_COUNTS: &str = "TS1=60,*=20";

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("no valid program for {sequence} after {MAX_ATTEMPTS} attempts")]
    Exhausted { sequence: String },
    #[error("unknown template sequence {0:?}")]
    UnknownSequence(String),
    #[error("bad counts: {0}")]
    BadCounts(String),
    #[error(transparent)]
    Vector(#[from] VectorError),
    #[error(transparent)]
    Render(#[from] RenderError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> SynthError + '_ {
    move |source| SynthError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Random,
    Rules,
}

impl std::str::FromStr for Mode {
    type Err = String;
    fn from_str(s: &str) -> Result<Mode, String> {
        match s {
            "random" => Ok(Mode::Random),
            "rules" => Ok(Mode::Rules),
            _ => Err(format!("unknown mode {s:?}, expected random or rules")),
        }
    }
}

/// One operation-type sequence of a template shape.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TemplateSequence {
    pub shape: u8,
    pub variant: u8,
    /// Body operations between SOP and EOP.
    pub ops: Vec<OpType>,
}

impl TemplateSequence {
    pub fn id(&self) -> String {
        format!("TS{}-{}", self.shape, self.variant)
    }
}

/// The nine template sequences: one each for shapes 1-3, three each for 4-5.
pub fn templates() -> Vec<TemplateSequence> {
    use OpType::{Arc as A, Circle as C, Extrude as E, Line as L, Sketch as S};
    let table: [(u8, u8, &[OpType]); 9] = [
        (1, 1, &[S, C, E]),
        (2, 1, &[S, L, L, A, E]),
        (3, 1, &[S, A, A, A, E]),
        (4, 1, &[S, L, A, A, E]),
        (4, 2, &[S, A, L, A, E]),
        (4, 3, &[S, A, A, L, E]),
        (5, 1, &[S, A, L, L, E]),
        (5, 2, &[S, L, A, L, E]),
        (5, 3, &[S, L, L, L, E]),
    ];
    table
        .iter()
        .map(|&(shape, variant, ops)| TemplateSequence {
            shape,
            variant,
            ops: ops.to_vec(),
        })
        .collect()
}

pub fn find_template(id: &str) -> Option<TemplateSequence> {
    templates().into_iter().find(|t| t.id() == id)
}

/// Parses `KEY=N` pairs separated by commas. A key is a sequence id
/// (`TS4-2`), a shape (`TS4`, every variant) or `*` (everything else).
/// More specific keys win regardless of order.
pub fn parse_counts(text: &str) -> Result<BTreeMap<String, usize>, SynthError> {
    let mut exact = BTreeMap::new();
    let mut shape = BTreeMap::new();
    let mut wildcard = None;
    for part in text.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        let (key, value) = part
            .split_once('=')
            .ok_or_else(|| SynthError::BadCounts(part.into()))?;
        let n: usize = value
            .trim()
            .parse()
            .map_err(|_| SynthError::BadCounts(part.into()))?;
        let key = key.trim();
        if key == "*" {
            wildcard = Some(n);
        } else if find_template(key).is_some() {
            exact.insert(key.to_string(), n);
        } else if templates().iter().any(|t| format!("TS{}", t.shape) == key) {
            shape.insert(key.to_string(), n);
        } else {
            return Err(SynthError::UnknownSequence(key.into()));
        }
    }
    Ok(templates()
        .iter()
        .map(|t| {
            let id = t.id();
            let n = exact
                .get(&id)
                .or_else(|| shape.get(&format!("TS{}", t.shape)))
                .copied()
                .or(wildcard)
                .unwrap_or(0);
            (id, n)
        })
        .collect())
}

fn clamp_depth(d: f64) -> f64 {
    d.clamp(0.1, 1.0)
}

/// Depth the rule set assigns to a program's geometry (before quantization).
pub fn rule_depth(program: &CadProgram) -> Option<f64> {
    let body = program.body();
    if let [CadOp::Sketch { .. }, CadOp::Circle { x, y, .. }, CadOp::Extrude { .. }] = body {
        return Some(clamp_depth(0.3 + 0.5 * (x.abs() + y.abs()) / 2.0));
    }
    let mut r_equiv: f64 = 0.0;
    for op in body {
        match *op {
            CadOp::Line { x, y } | CadOp::Arc { x, y, .. } => r_equiv = r_equiv.max(x.hypot(y)),
            CadOp::Circle { .. } => return None,
            _ => {}
        }
    }
    Some(clamp_depth(0.2 + 0.6 * r_equiv))
}

/// Distance between a program's depth and the quantized rule output.
/// Zero for every rules-mode sample.
pub fn rule_residual(program: &CadProgram) -> Option<f64> {
    let want = snap_value(rule_depth(program)?, QuantRange::SIGNED).ok()?;
    program.body().iter().find_map(|op| match *op {
        CadOp::Extrude { depth, .. } => Some((depth - want).abs()),
        _ => None,
    })
}

fn draw_program(
    seq: &TemplateSequence,
    mode: Mode,
    rng: &mut ChaCha8Rng,
) -> Result<CadProgram, VectorError> {
    let coord = |rng: &mut ChaCha8Rng| rng.random_range(-1.0..=1.0);
    let unit = |rng: &mut ChaCha8Rng| 1.0 - rng.random_range(0.0..1.0);
    let last_curve = seq
        .ops
        .iter()
        .rposition(|t| matches!(t, OpType::Line | OpType::Arc));
    let mut body = Vec::with_capacity(seq.ops.len());
    for (i, t) in seq.ops.iter().enumerate() {
        let op = match t {
            OpType::Sketch => CadOp::Sketch {
                plane: Plane::ALL[rng.random_range(0..3)],
            },
            OpType::Circle => CadOp::Circle {
                x: coord(rng),
                y: coord(rng),
                radius: unit(rng),
            },
            OpType::Line | OpType::Arc => {
                let (mut x, mut y) = (coord(rng), coord(rng));
                if Some(i) == last_curve {
                    // close the loop back to the chain start
                    (x, y) = (0.0, 0.0);
                }
                if *t == OpType::Line {
                    CadOp::Line { x, y }
                } else {
                    let sweep = match mode {
                        Mode::Random => unit(rng),
                        Mode::Rules => RULE_SWEEPS[rng.random_range(0..RULE_SWEEPS.len())],
                    };
                    CadOp::Arc { x, y, sweep }
                }
            }
            OpType::Extrude => {
                let mut d = 0.0;
                while d == 0.0 {
                    d = coord(rng);
                }
                CadOp::extrude(d)
            }
            OpType::Sop | OpType::Eop => unreachable!("template bodies hold no markers"),
        };
        body.push(op);
    }
    let mut program = CadProgram::from_body(body);
    if mode == Mode::Rules {
        // the rule reads the quantized geometry so it survives vectorization exactly
        let depth = rule_depth(&quantize_program(&program)?).expect("templates are rule-covered");
        for op in program.ops.iter_mut() {
            if let CadOp::Extrude { depth: d, .. } = op {
                *d = depth;
            }
        }
    }
    Ok(program)
}

fn acceptable(program: &CadProgram, resolution: usize) -> bool {
    let Ok(snapped) = quantize_program(program) else {
        return false;
    };
    let limit = (program.scale + LATTICE_MARGIN) / program.scale;
    matches!(program_extent(&snapped), Ok(e) if e <= limit)
        && evaluate_program(program, resolution).is_ok()
        && evaluate_program(&snapped, resolution).is_ok()
}

/// Draws a program for `seq`. The result, and its quantized form, evaluate
/// to non-empty solids inside the lattice at `resolution`.
pub fn instantiate_template(
    seq: &TemplateSequence,
    mode: Mode,
    rng: &mut ChaCha8Rng,
    resolution: usize,
) -> Result<CadProgram, SynthError> {
    for _ in 0..MAX_ATTEMPTS {
        let program = draw_program(seq, mode, rng)?;
        if acceptable(&program, resolution) {
            return Ok(program);
        }
    }
    Err(SynthError::Exhausted { sequence: seq.id() })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn dir_name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

/// Assigns 8:1:1 splits by ordering ids on their SHA-256 digest.
pub fn assign_splits(ids: &[String]) -> Vec<Split> {
    let mut order: Vec<(Vec<u8>, usize)> = ids
        .iter()
        .enumerate()
        .map(|(i, id)| (Sha256::digest(id.as_bytes()).to_vec(), i))
        .collect();
    order.sort();
    let n = ids.len();
    let n_train = n * 8 / 10;
    let n_val = n / 10;
    let mut out = vec![Split::Test; n];
    for (rank, (_, i)) in order.into_iter().enumerate() {
        out[i] = if rank < n_train {
            Split::Train
        } else if rank < n_train + n_val {
            Split::Val
        } else {
            Split::Test
        };
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub mode: Mode,
    pub seed: u64,
    pub counts: BTreeMap<String, usize>,
    pub resolution: usize,
    pub width: usize,
    pub height: usize,
}

impl SynthConfig {
    pub fn desk(mode: Mode, seed: u64) -> SynthConfig {
        SynthConfig {
            mode,
            seed,
            counts: parse_counts(DEFAULT_COUNTS).expect("default counts parse"),
            resolution: 64,
            width: 128,
            height: 128,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestRecord {
    pub id: String,
    pub sequence: String,
    pub split: Split,
    pub program: String,
    pub matrix: String,
    pub image: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub format_version: u32,
    pub mode: Mode,
    pub seed: u64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub rule_set: Option<String>,
    pub resolution: usize,
    pub image_size: [usize; 2],
    pub counts: BTreeMap<String, usize>,
    pub records: Vec<ManifestRecord>,
}

impl DatasetManifest {
    pub fn load(dir: &Path) -> Result<DatasetManifest, SynthError> {
        let path = dir.join("manifest.json");
        let text = fs::read_to_string(&path).map_err(io_err(&path))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn split_count(&self, split: Split) -> usize {
        self.records.iter().filter(|r| r.split == split).count()
    }
}

pub const MANIFEST_VERSION: u32 = 1;

struct Sample {
    id: String,
    sequence: String,
    text: String,
    matrix_json: String,
    pgm: Vec<u8>,
}

fn make_sample(
    config: &SynthConfig,
    seq: &TemplateSequence,
    index: u64,
    k: usize,
) -> Result<Sample, SynthError> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(index);
    let raw = instantiate_template(seq, config.mode, &mut rng, config.resolution)?;
    let matrix = vectorize(&raw)?;
    let program = quantize_program(&raw)?;
    let scene = evaluate_program(&program, config.resolution)
        .map_err(|_| SynthError::Exhausted { sequence: seq.id() })?;
    let image = render(&scene, &Camera::default(), config.width, config.height)?;
    Ok(Sample {
        id: format!("{}_{k:05}", seq.id()),
        sequence: seq.id(),
        text: emit_sim_gallery(&program).expect("quantized programs stay valid"),
        matrix_json: serde_json::to_string(&MatrixDoc { matrix })?,
        pgm: image.to_pgm(),
    })
}

fn write(path: &Path, bytes: &[u8]) -> Result<(), SynthError> {
    fs::write(path, bytes).map_err(io_err(path))
}

/// Generates a dataset under `out`. Output is byte-identical for equal
/// configs regardless of thread count. Nothing is written when every count
/// is zero.
pub fn synthesize_dataset(config: &SynthConfig, out: &Path) -> Result<DatasetManifest, SynthError> {
    let mut jobs = Vec::new();
    for seq in templates() {
        let n = config.counts.get(&seq.id()).copied().unwrap_or(0);
        for k in 0..n {
            jobs.push((seq.clone(), k));
        }
    }
    for key in config.counts.keys() {
        if find_template(key).is_none() {
            return Err(SynthError::UnknownSequence(key.clone()));
        }
    }
    let samples: Vec<Sample> = jobs
        .par_iter()
        .enumerate()
        .map(|(i, (seq, k))| make_sample(config, seq, i as u64, *k))
        .collect::<Result<_, _>>()?;

    let ids: Vec<String> = samples.iter().map(|s| s.id.clone()).collect();
    let splits = assign_splits(&ids);
    let mut manifest = DatasetManifest {
        format_version: MANIFEST_VERSION,
        mode: config.mode,
        seed: config.seed,
        rule_set: (config.mode == Mode::Rules).then(|| RULE_SET_VERSION.to_string()),
        resolution: config.resolution,
        image_size: [config.width, config.height],
        counts: config.counts.clone(),
        records: Vec::with_capacity(samples.len()),
    };
    if samples.is_empty() {
        return Ok(manifest);
    }

    for sub in ["programs", "matrices", "images", "train", "val", "test"] {
        let d = out.join(sub);
        fs::create_dir_all(&d).map_err(io_err(&d))?;
    }
    for (s, split) in samples.iter().zip(splits) {
        let rec = ManifestRecord {
            id: s.id.clone(),
            sequence: s.sequence.clone(),
            split,
            program: format!("programs/{}.txt", s.id),
            matrix: format!("matrices/{}.json", s.id),
            image: format!("images/{}.pgm", s.id),
        };
        write(&out.join(&rec.program), s.text.as_bytes())?;
        write(&out.join(&rec.matrix), s.matrix_json.as_bytes())?;
        write(
            &out.join(split.dir_name()).join(format!("{}.json", s.id)),
            s.matrix_json.as_bytes(),
        )?;
        write(&out.join(&rec.image), &s.pgm)?;
        manifest.records.push(rec);
    }
    let text = serde_json::to_string_pretty(&manifest)?;
    write(&out.join("manifest.json"), text.as_bytes())?;
    Ok(manifest)
}
