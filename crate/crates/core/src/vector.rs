//! Quantized 10x7 feature-matrix representation of CAD programs.
//!
//! Each row is `[t, I, x, y, alpha, r, d]`: the operation type followed by six
//! parameter slots. Continuous parameters are quantized to 256 levels; unused
//! slots hold `-1`. Curve start points are not stored: the first curve of a
//! sketch starts at the origin and every following line or arc starts where
//! the previous one ended.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dsl::{
    validate_grammar, BooleanOp, CadOp, CadProgram, OpType, Plane, ValidationReport,
    MAX_PROGRAM_LEN,
};

pub type Point2 = nalgebra::Point2<f64>;

pub const ROWS: usize = MAX_PROGRAM_LEN;
pub const COLS: usize = 7;
pub const UNUSED: i32 = -1;
pub const LEVELS: u32 = 256;

/// Parameter slot columns (after the type column).
pub const SLOT_PLANE: usize = 1;
pub const SLOT_X: usize = 2;
pub const SLOT_Y: usize = 3;
pub const SLOT_SWEEP: usize = 4;
pub const SLOT_RADIUS: usize = 5;
pub const SLOT_DEPTH: usize = 6;

/// Smallest sweep, in degrees, accepted by [`arc_center`].
pub const MIN_SWEEP_DEG: f64 = 1e-6;

#[derive(Debug, Error, PartialEq)]
pub enum VectorError {
    #[error("value {value} outside quantization range [{lo}, {hi}]")]
    Range { value: f64, lo: f64, hi: f64 },
    #[error("bin {0} outside 0..=255")]
    BinRange(i64),
    #[error("invalid quantization range [{lo}, {hi}]")]
    BadRange { lo: f64, hi: f64 },
    #[error("program has {rows} rows, more than {ROWS}")]
    ProgramTooLong { rows: usize },
    #[error("invalid program: {0}")]
    InvalidProgram(ValidationReport),
    #[error("row {row}: {message}")]
    MalformedRow { row: usize, message: String },
    #[error("arc start and end coincide")]
    DegenerateChord,
    #[error("sweep {0} degrees outside [{MIN_SWEEP_DEG}, 180]")]
    InvalidSweep(f64),
    #[error("packed matrix data length {0} is not a multiple of 140 bytes")]
    PackedLength(usize),
}

/// A closed interval split into 256 equal bins.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuantRange {
    lo: f64,
    hi: f64,
}

impl QuantRange {
    /// Endpoint coordinates, circle centers and extrusion depth.
    pub const SIGNED: QuantRange = QuantRange { lo: -1.0, hi: 1.0 };
    /// Sweep and radius; `(0, 1]` is quantized over `[0, 1]`.
    pub const UNIT: QuantRange = QuantRange { lo: 0.0, hi: 1.0 };

    pub fn new(lo: f64, hi: f64) -> Result<QuantRange, VectorError> {
        if lo.is_finite() && hi.is_finite() && lo < hi {
            Ok(QuantRange { lo, hi })
        } else {
            Err(VectorError::BadRange { lo, hi })
        }
    }

    pub fn lo(&self) -> f64 {
        self.lo
    }

    pub fn hi(&self) -> f64 {
        self.hi
    }

    /// Width of one bin.
    pub fn step(&self) -> f64 {
        (self.hi - self.lo) / LEVELS as f64
    }
}

pub fn quantize_value(v: f64, range: QuantRange) -> Result<i32, VectorError> {
    if !(range.lo..=range.hi).contains(&v) {
        return Err(VectorError::Range {
            value: v,
            lo: range.lo,
            hi: range.hi,
        });
    }
    let bin = ((v - range.lo) / (range.hi - range.lo) * LEVELS as f64).floor() as i32;
    Ok(bin.min(LEVELS as i32 - 1))
}

/// Returns the center of `bin`.
pub fn dequantize_value(bin: i32, range: QuantRange) -> Result<f64, VectorError> {
    if !(0..LEVELS as i32).contains(&bin) {
        return Err(VectorError::BinRange(bin.into()));
    }
    Ok(range.lo + (bin as f64 + 0.5) / LEVELS as f64 * (range.hi - range.lo))
}

/// Snaps `v` to the center of its bin.
pub fn snap_value(v: f64, range: QuantRange) -> Result<f64, VectorError> {
    dequantize_value(quantize_value(v, range)?, range)
}

pub type Row = [i32; COLS];

/// One operation row: type code plus six parameter slots `[I, x, y, alpha, r, d]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OpVector {
    pub t: OpType,
    pub params: [i32; COLS - 1],
}

impl OpVector {
    pub fn marker(t: OpType) -> OpVector {
        OpVector {
            t,
            params: [UNUSED; COLS - 1],
        }
    }

    pub fn to_row(self) -> Row {
        let mut row = [UNUSED; COLS];
        row[0] = self.t.code().into();
        row[1..].copy_from_slice(&self.params);
        row
    }
}

/// Parameter columns used by an operation type.
pub fn used_slots(t: OpType) -> &'static [usize] {
    match t {
        OpType::Sketch => &[SLOT_PLANE],
        OpType::Line => &[SLOT_X, SLOT_Y],
        OpType::Arc => &[SLOT_X, SLOT_Y, SLOT_SWEEP],
        OpType::Circle => &[SLOT_X, SLOT_Y, SLOT_RADIUS],
        OpType::Extrude => &[SLOT_DEPTH],
        OpType::Sop | OpType::Eop => &[],
    }
}

/// A raw 10x7 integer matrix. Ground truth matrices produced by
/// [`vectorize`] are always well formed; predicted matrices may hold anything,
/// and the metrics treat them as given.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FeatureMatrix {
    pub rows: [Row; ROWS],
}

impl Default for FeatureMatrix {
    fn default() -> Self {
        let mut rows = [OpVector::marker(OpType::Eop).to_row(); ROWS];
        rows[0] = OpVector::marker(OpType::Sop).to_row();
        FeatureMatrix { rows }
    }
}

impl FeatureMatrix {
    pub fn type_code(&self, row: usize) -> i32 {
        self.rows[row][0]
    }

    /// Index of the first EOP row, if any.
    pub fn first_eop(&self) -> Option<usize> {
        self.rows
            .iter()
            .position(|r| r[0] == i32::from(OpType::Eop.code()))
    }

    /// Number of rows in the first `n` rows, cut after the first EOP.
    pub fn prefix_len(&self, n: usize) -> usize {
        let n = n.min(ROWS);
        match self.first_eop() {
            Some(e) => n.min(e + 1),
            None => n,
        }
    }

    /// Structural checks: SOP first, an EOP somewhere, only EOP rows after it.
    pub fn check_structure(&self) -> Result<(), VectorError> {
        if self.rows[0][0] != i32::from(OpType::Sop.code()) {
            return Err(VectorError::MalformedRow {
                row: 0,
                message: "first row is not SOP".into(),
            });
        }
        let eop = self.first_eop().ok_or_else(|| VectorError::MalformedRow {
            row: ROWS - 1,
            message: "no EOP row".into(),
        })?;
        for (i, row) in self.rows.iter().enumerate().skip(eop + 1) {
            if row[0] != i32::from(OpType::Eop.code()) {
                return Err(VectorError::MalformedRow {
                    row: i,
                    message: "non-EOP row after EOP".into(),
                });
            }
        }
        Ok(())
    }
}

/// On-disk matrix document: `{"matrix": [[t, I, x, y, a, r, d], ...]}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixDoc {
    pub matrix: FeatureMatrix,
}

/// Packs matrices as 70 little-endian `i16` values each, row-major.
pub fn write_packed(matrices: &[FeatureMatrix]) -> Vec<u8> {
    let mut out = Vec::with_capacity(matrices.len() * ROWS * COLS * 2);
    for m in matrices {
        for v in m.rows.iter().flatten() {
            let v = i16::try_from(*v).unwrap_or(if *v < 0 { i16::MIN } else { i16::MAX });
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn read_packed(bytes: &[u8]) -> Result<Vec<FeatureMatrix>, VectorError> {
    const SAMPLE: usize = ROWS * COLS * 2;
    if !bytes.len().is_multiple_of(SAMPLE) {
        return Err(VectorError::PackedLength(bytes.len()));
    }
    Ok(bytes
        .chunks_exact(SAMPLE)
        .map(|chunk| {
            let mut m = FeatureMatrix {
                rows: [[0; COLS]; ROWS],
            };
            for (k, pair) in chunk.chunks_exact(2).enumerate() {
                m.rows[k / COLS][k % COLS] = i16::from_le_bytes([pair[0], pair[1]]).into();
            }
            m
        })
        .collect())
}

fn vectorize_op(op: &CadOp) -> Result<OpVector, VectorError> {
    let mut v = OpVector::marker(op.op_type());
    let q = quantize_value;
    let p = &mut v.params;
    // params are indexed from the I column
    match *op {
        CadOp::Sop | CadOp::Eop => {}
        CadOp::Sketch { plane } => p[SLOT_PLANE - 1] = plane.id().into(),
        CadOp::Line { x, y } => {
            p[SLOT_X - 1] = q(x, QuantRange::SIGNED)?;
            p[SLOT_Y - 1] = q(y, QuantRange::SIGNED)?;
        }
        CadOp::Arc { x, y, sweep } => {
            p[SLOT_X - 1] = q(x, QuantRange::SIGNED)?;
            p[SLOT_Y - 1] = q(y, QuantRange::SIGNED)?;
            p[SLOT_SWEEP - 1] = q(sweep, QuantRange::UNIT)?;
        }
        CadOp::Circle { x, y, radius } => {
            p[SLOT_X - 1] = q(x, QuantRange::SIGNED)?;
            p[SLOT_Y - 1] = q(y, QuantRange::SIGNED)?;
            p[SLOT_RADIUS - 1] = q(radius, QuantRange::UNIT)?;
        }
        CadOp::Extrude { depth, .. } => p[SLOT_DEPTH - 1] = q(depth, QuantRange::SIGNED)?,
    }
    Ok(v)
}

/// Encodes a valid program as a quantized, EOP-padded 10x7 matrix.
/// The boolean operation, profile index and scale take their fixed defaults
/// and are not stored.
pub fn vectorize(program: &CadProgram) -> Result<FeatureMatrix, VectorError> {
    let rows = program.type_sequence().len();
    if rows > ROWS {
        return Err(VectorError::ProgramTooLong { rows });
    }
    let report = validate_grammar(program);
    if !report.ok() {
        return Err(VectorError::InvalidProgram(report));
    }
    let mut m = FeatureMatrix::default();
    for (i, op) in program.ops.iter().take(rows).enumerate() {
        m.rows[i] = vectorize_op(op)?.to_row();
    }
    Ok(m)
}

fn slot(row: &Row, row_idx: usize, col: usize, range: QuantRange) -> Result<f64, VectorError> {
    let bin = row[col];
    dequantize_value(bin, range).map_err(|_| VectorError::MalformedRow {
        row: row_idx,
        message: format!("column {col} holds {bin}, expected 0..=255"),
    })
}

/// Decodes a matrix back into a program with parameters at bin centers.
/// Rows after the first EOP are ignored; an EOP is appended if none exists.
pub fn devectorize(matrix: &FeatureMatrix) -> Result<CadProgram, VectorError> {
    let mut ops = Vec::with_capacity(ROWS);
    for (i, row) in matrix.rows.iter().enumerate() {
        let t = OpType::from_code(row[0].into()).ok_or_else(|| VectorError::MalformedRow {
            row: i,
            message: format!("type code {} outside 0..=6", row[0]),
        })?;
        let op = match t {
            OpType::Sop => CadOp::Sop,
            OpType::Eop => CadOp::Eop,
            OpType::Sketch => CadOp::Sketch {
                plane: Plane::from_id(row[SLOT_PLANE].into()).ok_or_else(|| {
                    VectorError::MalformedRow {
                        row: i,
                        message: format!("sketch plane {} outside 0..=2", row[SLOT_PLANE]),
                    }
                })?,
            },
            OpType::Line => CadOp::Line {
                x: slot(row, i, SLOT_X, QuantRange::SIGNED)?,
                y: slot(row, i, SLOT_Y, QuantRange::SIGNED)?,
            },
            OpType::Arc => CadOp::Arc {
                x: slot(row, i, SLOT_X, QuantRange::SIGNED)?,
                y: slot(row, i, SLOT_Y, QuantRange::SIGNED)?,
                sweep: slot(row, i, SLOT_SWEEP, QuantRange::UNIT)?,
            },
            OpType::Circle => CadOp::Circle {
                x: slot(row, i, SLOT_X, QuantRange::SIGNED)?,
                y: slot(row, i, SLOT_Y, QuantRange::SIGNED)?,
                radius: slot(row, i, SLOT_RADIUS, QuantRange::UNIT)?,
            },
            OpType::Extrude => CadOp::Extrude {
                depth: slot(row, i, SLOT_DEPTH, QuantRange::SIGNED)?,
                profile: 0,
                boolean: BooleanOp::Add,
            },
        };
        ops.push(op);
        if t == OpType::Eop {
            break;
        }
    }
    if ops.first() != Some(&CadOp::Sop) {
        return Err(VectorError::MalformedRow {
            row: 0,
            message: "first row is not SOP".into(),
        });
    }
    if ops.last() != Some(&CadOp::Eop) {
        ops.push(CadOp::Eop);
    }
    Ok(CadProgram {
        ops,
        scale: crate::dsl::DEFAULT_SCALE,
    })
}

/// Snaps every parameter of a program to its bin center.
pub fn quantize_program(program: &CadProgram) -> Result<CadProgram, VectorError> {
    devectorize(&vectorize(program)?)
}

/// Center and radius of the counter-clockwise arc from `start` to `end`
/// sweeping `sweep_deg` degrees. The center lies left of the chord.
pub fn arc_center(
    start: Point2,
    end: Point2,
    sweep_deg: f64,
) -> Result<(Point2, f64), VectorError> {
    if !(MIN_SWEEP_DEG..=180.0).contains(&sweep_deg) {
        return Err(VectorError::InvalidSweep(sweep_deg));
    }
    let chord = end - start;
    let len = chord.norm();
    if len < 1e-12 {
        return Err(VectorError::DegenerateChord);
    }
    let half = sweep_deg.to_radians() / 2.0;
    let radius = len / (2.0 * half.sin());
    let left = nalgebra::Vector2::new(-chord.y, chord.x) / len;
    // distance from chord midpoint to center; zero for a half circle
    let offset = if sweep_deg == 180.0 {
        0.0
    } else {
        (len / 2.0) / half.tan()
    };
    let center = nalgebra::center(&start, &end) + left * offset;
    Ok((center, radius))
}

/// A line or arc with its resolved start point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChainedCurve {
    pub op_index: usize,
    pub start: Point2,
    pub end: Point2,
}

/// Resolves start points of lines and arcs. Each sketch starts its chain at
/// the origin; a circle does not join the chain and resets it to the origin.
pub fn chain_points(program: &CadProgram) -> Vec<ChainedCurve> {
    let origin = Point2::origin();
    let mut cursor = origin;
    let mut out = Vec::new();
    for (i, op) in program.ops.iter().enumerate() {
        match *op {
            CadOp::Sketch { .. } | CadOp::Circle { .. } | CadOp::Extrude { .. } => cursor = origin,
            CadOp::Line { x, y } | CadOp::Arc { x, y, .. } => {
                let end = Point2::new(x, y);
                out.push(ChainedCurve {
                    op_index: i,
                    start: cursor,
                    end,
                });
                cursor = end;
            }
            CadOp::Sop => {}
            CadOp::Eop => break,
        }
    }
    out
}
