//! CAD operation domain model and the Sim-Gallery text form.
//!
//! A program is written one call per line:
//!
//! ```text
//! # cylinder, radius 5 and height 10 at scale 10
//! add_sketch("XY")
//! add_circle(0.0, 0.0, 0.5)
//! add_extrude(0, 1.0)
//! ```
//!
//! In memory the start (SOP) and end (EOP) marks are explicit operations;
//! in text they are implicit.

use std::fmt::{self, Write as _};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::vector::{arc_center, chain_points, Point2};

/// Maximum number of rows of a program, marks included.
pub const MAX_PROGRAM_LEN: usize = 10;

/// Default world-units scale factor.
pub const DEFAULT_SCALE: f64 = 10.0;

/// Operation type codes as stored in the first column of a feature matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[repr(u8)]
pub enum OpType {
    Sketch = 0,
    Line = 1,
    Arc = 2,
    Circle = 3,
    Extrude = 4,
    Sop = 5,
    Eop = 6,
}

impl OpType {
    pub const ALL: [OpType; 7] = [
        OpType::Sketch,
        OpType::Line,
        OpType::Arc,
        OpType::Circle,
        OpType::Extrude,
        OpType::Sop,
        OpType::Eop,
    ];

    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(code: i64) -> Option<OpType> {
        usize::try_from(code)
            .ok()
            .and_then(|c| Self::ALL.get(c).copied())
    }

    /// One-letter abbreviation (S, L, A, C, E, SOP, EOP).
    pub fn short_name(self) -> &'static str {
        match self {
            OpType::Sketch => "S",
            OpType::Line => "L",
            OpType::Arc => "A",
            OpType::Circle => "C",
            OpType::Extrude => "E",
            OpType::Sop => "SOP",
            OpType::Eop => "EOP",
        }
    }

    pub fn is_curve(self) -> bool {
        matches!(self, OpType::Line | OpType::Arc | OpType::Circle)
    }
}

/// Canonical sketch plane.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Plane {
    XY,
    XZ,
    YZ,
}

impl Plane {
    pub const ALL: [Plane; 3] = [Plane::XY, Plane::XZ, Plane::YZ];

    pub fn id(self) -> u8 {
        match self {
            Plane::XY => 0,
            Plane::XZ => 1,
            Plane::YZ => 2,
        }
    }

    pub fn from_id(id: i64) -> Option<Plane> {
        usize::try_from(id)
            .ok()
            .and_then(|i| Self::ALL.get(i).copied())
    }

    pub fn name(self) -> &'static str {
        match self {
            Plane::XY => "XY",
            Plane::XZ => "XZ",
            Plane::YZ => "YZ",
        }
    }

    pub fn from_name(name: &str) -> Option<Plane> {
        Self::ALL.into_iter().find(|p| p.name() == name)
    }
}

/// How an extruded volume combines with the bodies already in the scene.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub enum BooleanOp {
    Join,
    Cut,
    Intersect,
    /// New independent body.
    #[default]
    Add,
}

impl BooleanOp {
    pub const ALL: [BooleanOp; 4] = [
        BooleanOp::Join,
        BooleanOp::Cut,
        BooleanOp::Intersect,
        BooleanOp::Add,
    ];

    pub fn code(self) -> u8 {
        match self {
            BooleanOp::Join => 0,
            BooleanOp::Cut => 1,
            BooleanOp::Intersect => 2,
            BooleanOp::Add => 3,
        }
    }

    pub fn from_code(code: i64) -> Option<BooleanOp> {
        usize::try_from(code)
            .ok()
            .and_then(|c| Self::ALL.get(c).copied())
    }
}

/// A single CAD operation. Each variant carries exactly the parameters its
/// type uses; all other slots of the seven-column row are unused.
///
/// Coordinates are normalized to `[-1, 1]`, sweep and radius to `(0, 1]`,
/// depth to `[-1, 1] \ {0}`. The arc sweep in degrees is `sweep * 180`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum CadOp {
    Sop,
    Eop,
    Sketch {
        plane: Plane,
    },
    Line {
        x: f64,
        y: f64,
    },
    Arc {
        x: f64,
        y: f64,
        sweep: f64,
    },
    Circle {
        x: f64,
        y: f64,
        radius: f64,
    },
    Extrude {
        depth: f64,
        #[serde(default)]
        profile: u32,
        #[serde(default)]
        boolean: BooleanOp,
    },
}

impl CadOp {
    pub fn op_type(&self) -> OpType {
        match self {
            CadOp::Sop => OpType::Sop,
            CadOp::Eop => OpType::Eop,
            CadOp::Sketch { .. } => OpType::Sketch,
            CadOp::Line { .. } => OpType::Line,
            CadOp::Arc { .. } => OpType::Arc,
            CadOp::Circle { .. } => OpType::Circle,
            CadOp::Extrude { .. } => OpType::Extrude,
        }
    }

    pub fn extrude(depth: f64) -> CadOp {
        CadOp::Extrude {
            depth,
            profile: 0,
            boolean: BooleanOp::Add,
        }
    }

    /// Describes the first parameter outside its representable range.
    pub fn range_violation(&self) -> Option<String> {
        fn coord(name: &str, v: f64) -> Option<String> {
            (!(-1.0..=1.0).contains(&v)).then(|| format!("{name} = {v} outside [-1, 1]"))
        }
        fn unit(name: &str, v: f64) -> Option<String> {
            (!(v > 0.0 && v <= 1.0)).then(|| format!("{name} = {v} outside (0, 1]"))
        }
        match *self {
            CadOp::Sop | CadOp::Eop | CadOp::Sketch { .. } => None,
            CadOp::Line { x, y } => coord("x", x).or_else(|| coord("y", y)),
            CadOp::Arc { x, y, sweep } => coord("x", x)
                .or_else(|| coord("y", y))
                .or_else(|| unit("sweep", sweep)),
            CadOp::Circle { x, y, radius } => coord("x", x)
                .or_else(|| coord("y", y))
                .or_else(|| unit("radius", radius)),
            CadOp::Extrude { depth, .. } => {
                if depth == 0.0 {
                    Some("depth must be nonzero".into())
                } else {
                    coord("depth", depth)
                }
            }
        }
    }
}

/// An ordered CAD program `[SOP, ..., EOP]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CadProgram {
    pub ops: Vec<CadOp>,
    #[serde(default = "default_scale")]
    pub scale: f64,
}

fn default_scale() -> f64 {
    DEFAULT_SCALE
}

impl Default for CadProgram {
    fn default() -> Self {
        CadProgram::from_body(Vec::new())
    }
}

impl CadProgram {
    /// Wraps body operations in SOP/EOP marks.
    pub fn from_body(body: impl IntoIterator<Item = CadOp>) -> CadProgram {
        let mut ops = vec![CadOp::Sop];
        ops.extend(body);
        ops.push(CadOp::Eop);
        CadProgram {
            ops,
            scale: DEFAULT_SCALE,
        }
    }

    /// Operations strictly between SOP and the first EOP.
    pub fn body(&self) -> &[CadOp] {
        let start = usize::from(matches!(self.ops.first(), Some(CadOp::Sop)));
        let end = self
            .ops
            .iter()
            .position(|op| matches!(op, CadOp::Eop))
            .unwrap_or(self.ops.len());
        &self.ops[start.min(end)..end]
    }

    /// Operation types up to and including the first EOP.
    pub fn type_sequence(&self) -> Vec<OpType> {
        let mut out = Vec::new();
        for op in &self.ops {
            out.push(op.op_type());
            if matches!(op, CadOp::Eop) {
                break;
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Violation {
    pub index: usize,
    pub rule: &'static str,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn ok(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn has(&self, rule: &str) -> bool {
        self.violations.iter().any(|v| v.rule == rule)
    }

    fn push(&mut self, index: usize, rule: &'static str, message: impl Into<String>) {
        self.violations.push(Violation {
            index,
            rule,
            message: message.into(),
        });
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.ok() {
            return f.write_str("ok");
        }
        for (i, v) in self.violations.iter().enumerate() {
            if i > 0 {
                f.write_str("; ")?;
            }
            write!(f, "op {}: {} ({})", v.index, v.rule, v.message)?;
        }
        Ok(())
    }
}

/// Checks structural and range rules. Never fails; problems land in the report.
pub fn validate_grammar(program: &CadProgram) -> ValidationReport {
    let mut report = ValidationReport::default();
    let ops = &program.ops;

    if !(program.scale.is_finite() && program.scale > 0.0) {
        report.push(
            0,
            "bad-scale",
            format!("scale {} must be positive", program.scale),
        );
    }
    match ops.first() {
        Some(CadOp::Sop) => {}
        Some(op) => report.push(
            0,
            "sop-first",
            format!("program starts with {:?}", op.op_type()),
        ),
        None => report.push(0, "sop-first", "program is empty"),
    }

    let mut in_sketch = false;
    let mut curves_since_sketch = 0usize;
    let mut eop_at = None;
    for (i, op) in ops.iter().enumerate() {
        if let Some(first_eop) = eop_at {
            if !matches!(op, CadOp::Eop) {
                report.push(
                    i,
                    "op-after-eop",
                    format!("{:?} after EOP at {first_eop}", op.op_type()),
                );
            }
            continue;
        }
        if let Some(msg) = op.range_violation() {
            report.push(i, "out-of-range", msg);
        }
        match op {
            CadOp::Sop if i > 0 => report.push(i, "duplicate-sop", "SOP only allowed at index 0"),
            CadOp::Sop => {}
            CadOp::Eop => eop_at = Some(i),
            CadOp::Sketch { .. } => {
                in_sketch = true;
                curves_since_sketch = 0;
            }
            CadOp::Line { .. } | CadOp::Arc { .. } | CadOp::Circle { .. } => {
                if !in_sketch {
                    report.push(
                        i,
                        "curve-without-sketch",
                        "curve is not preceded by a sketch",
                    );
                }
                curves_since_sketch += 1;
            }
            CadOp::Extrude { .. } => {
                if !in_sketch || curves_since_sketch == 0 {
                    report.push(
                        i,
                        "extrude-without-profile",
                        "no curves since the last sketch",
                    );
                }
                in_sketch = false;
                curves_since_sketch = 0;
            }
        }
    }

    match eop_at {
        None => report.push(ops.len(), "missing-eop", "program has no EOP terminator"),
        Some(at) if at + 1 > MAX_PROGRAM_LEN => report.push(
            at,
            "too-long",
            format!("{} rows exceed the maximum of {MAX_PROGRAM_LEN}", at + 1),
        ),
        Some(_) => {}
    }
    if ops.len() > MAX_PROGRAM_LEN && eop_at.is_some_and(|at| at < MAX_PROGRAM_LEN) {
        report.push(
            MAX_PROGRAM_LEN,
            "too-long",
            format!("{} rows including padding", ops.len()),
        );
    }
    report
}

#[derive(Debug, Error, PartialEq)]
pub enum ParseError {
    #[error("line {line}: unknown function `{name}`")]
    UnknownFunction { line: usize, name: String },
    #[error("line {line}: `{name}` takes {expected} argument(s), got {got}")]
    Arity {
        line: usize,
        name: String,
        expected: &'static str,
        got: usize,
    },
    #[error("line {line}: {message}")]
    Range { line: usize, message: String },
    #[error("line {line}: syntax error: {message}")]
    Syntax { line: usize, message: String },
}

impl ParseError {
    pub fn line(&self) -> usize {
        match self {
            ParseError::UnknownFunction { line, .. }
            | ParseError::Arity { line, .. }
            | ParseError::Range { line, .. }
            | ParseError::Syntax { line, .. } => *line,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Arg {
    Str(String),
    Num(f64),
}

fn strip_comment(line: &str) -> &str {
    let mut quote = None;
    for (i, c) in line.char_indices() {
        match (quote, c) {
            (None, '#') => return &line[..i],
            (None, '"' | '\'') => quote = Some(c),
            (Some(q), c) if c == q => quote = None,
            _ => {}
        }
    }
    line
}

fn split_call(line: usize, src: &str) -> Result<(&str, Vec<Arg>), ParseError> {
    let syntax = |message: &str| ParseError::Syntax {
        line,
        message: message.to_string(),
    };
    let open = src
        .find('(')
        .ok_or_else(|| syntax("expected `name(args)`"))?;
    let name = src[..open].trim();
    if name.is_empty() || !name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_') {
        return Err(syntax("invalid function name"));
    }
    let rest = src[open + 1..].trim_end();
    let rest = rest.strip_suffix(';').unwrap_or(rest).trim_end();
    let inner = rest
        .strip_suffix(')')
        .ok_or_else(|| syntax("missing closing parenthesis"))?;
    if inner.contains(['(', ')']) {
        return Err(syntax("nested parentheses"));
    }
    let mut args = Vec::new();
    if !inner.trim().is_empty() {
        for raw in inner.split(',') {
            let raw = raw.trim();
            let quoted = raw
                .strip_prefix('"')
                .and_then(|s| s.strip_suffix('"'))
                .or_else(|| raw.strip_prefix('\'').and_then(|s| s.strip_suffix('\'')));
            if let Some(s) = quoted {
                args.push(Arg::Str(s.to_string()));
            } else if raw.is_empty() {
                return Err(syntax("empty argument"));
            } else {
                let v: f64 = raw.parse().map_err(|_| ParseError::Syntax {
                    line,
                    message: format!("bad number `{raw}`"),
                })?;
                if !v.is_finite() {
                    return Err(ParseError::Syntax {
                        line,
                        message: format!("non-finite number `{raw}`"),
                    });
                }
                args.push(Arg::Num(v));
            }
        }
    }
    Ok((name, args))
}

/// Parses Sim-Gallery text into a program with SOP/EOP added.
pub fn parse_program(text: &str) -> Result<CadProgram, ParseError> {
    let mut body = Vec::new();
    for (idx, raw_line) in text.lines().enumerate() {
        let line = idx + 1;
        let src = strip_comment(raw_line).trim();
        if src.is_empty() {
            continue;
        }
        let (name, args) = split_call(line, src)?;
        let arity = |expected: &'static str, ok: bool| {
            if ok {
                Ok(())
            } else {
                Err(ParseError::Arity {
                    line,
                    name: name.to_string(),
                    expected,
                    got: args.len(),
                })
            }
        };
        let num = |i: usize| match &args[i] {
            Arg::Num(v) => Ok(*v),
            Arg::Str(s) => Err(ParseError::Syntax {
                line,
                message: format!("expected a number, got \"{s}\""),
            }),
        };
        let int = |i: usize, what: &str| {
            let v = num(i)?;
            if v.fract() != 0.0 {
                return Err(ParseError::Range {
                    line,
                    message: format!("{what} must be an integer, got {v}"),
                });
            }
            Ok(v as i64)
        };
        let op = match name {
            "add_sketch" => {
                arity("1", args.len() == 1)?;
                let plane = match &args[0] {
                    Arg::Str(s) => Plane::from_name(s),
                    Arg::Num(_) => Plane::from_id(int(0, "plane")?),
                };
                let plane = plane.ok_or_else(|| ParseError::Range {
                    line,
                    message: "sketch plane must be \"XY\", \"XZ\", \"YZ\" or 0, 1, 2".into(),
                })?;
                CadOp::Sketch { plane }
            }
            "add_line" => {
                arity("2", args.len() == 2)?;
                CadOp::Line {
                    x: num(0)?,
                    y: num(1)?,
                }
            }
            "add_arc" => {
                arity("3", args.len() == 3)?;
                CadOp::Arc {
                    x: num(0)?,
                    y: num(1)?,
                    sweep: num(2)?,
                }
            }
            "add_circle" => {
                arity("3", args.len() == 3)?;
                CadOp::Circle {
                    x: num(0)?,
                    y: num(1)?,
                    radius: num(2)?,
                }
            }
            "add_extrude" => {
                arity("2 or 3", matches!(args.len(), 2 | 3))?;
                let profile = int(0, "profile index")?;
                if profile < 0 {
                    return Err(ParseError::Range {
                        line,
                        message: "profile index must be >= 0".into(),
                    });
                }
                let boolean = if args.len() == 3 {
                    BooleanOp::from_code(int(2, "boolean operation")?).ok_or_else(|| {
                        ParseError::Range {
                            line,
                            message: "boolean operation must be 0, 1, 2 or 3".into(),
                        }
                    })?
                } else {
                    BooleanOp::Add
                };
                // profile index is fixed at 0
                CadOp::Extrude {
                    depth: num(1)?,
                    profile: 0,
                    boolean,
                }
            }
            _ => {
                return Err(ParseError::UnknownFunction {
                    line,
                    name: name.to_string(),
                })
            }
        };
        if let Some(message) = op.range_violation() {
            return Err(ParseError::Range { line, message });
        }
        body.push(op);
    }
    Ok(CadProgram::from_body(body))
}

#[derive(Debug, Error, PartialEq)]
#[error("invalid program: {0}")]
pub struct InvalidProgram(pub ValidationReport);

/// Formats a real with six fractional digits, or the shortest exact form
/// when six digits would not read back to the same value.
pub fn format_real(v: f64) -> String {
    let fixed = format!("{v:.6}");
    if fixed.parse::<f64>().ok() == Some(v) {
        fixed
    } else {
        format!("{v}")
    }
}

/// Emits Sim-Gallery text, one call per body operation.
pub fn emit_sim_gallery(program: &CadProgram) -> Result<String, InvalidProgram> {
    let report = validate_grammar(program);
    if !report.ok() {
        return Err(InvalidProgram(report));
    }
    let mut out = String::new();
    for op in program.body() {
        match *op {
            CadOp::Sketch { plane } => writeln!(out, "add_sketch(\"{}\")", plane.name()),
            CadOp::Line { x, y } => {
                writeln!(out, "add_line({}, {})", format_real(x), format_real(y))
            }
            CadOp::Arc { x, y, sweep } => writeln!(
                out,
                "add_arc({}, {}, {})",
                format_real(x),
                format_real(y),
                format_real(sweep)
            ),
            CadOp::Circle { x, y, radius } => writeln!(
                out,
                "add_circle({}, {}, {})",
                format_real(x),
                format_real(y),
                format_real(radius)
            ),
            CadOp::Extrude {
                depth,
                profile,
                boolean,
            } => match boolean {
                BooleanOp::Add => writeln!(out, "add_extrude({profile}, {})", format_real(depth)),
                other => writeln!(
                    out,
                    "add_extrude({profile}, {}, {})",
                    format_real(depth),
                    other.code()
                ),
            },
            CadOp::Sop | CadOp::Eop => Ok(()),
        }
        .expect("writing to a String cannot fail");
    }
    Ok(out)
}

fn feature_operation(op: BooleanOp) -> &'static str {
    match op {
        BooleanOp::Join => "JoinFeatureOperation",
        BooleanOp::Cut => "CutFeatureOperation",
        BooleanOp::Intersect => "IntersectFeatureOperation",
        BooleanOp::Add => "NewBodyFeatureOperation",
    }
}

fn point_literal(p: Point2, scale: f64) -> String {
    format!(
        "{{\"x\": {}, \"y\": {}, \"z\": 0.0}}",
        format_real(p.x * scale),
        format_real(p.y * scale)
    )
}

/// Emits the longer Gallery-DSL style client script. World coordinates are
/// the normalized values times the program scale. The script is text only.
pub fn emit_gallery_script(program: &CadProgram) -> Result<String, InvalidProgram> {
    let report = validate_grammar(program);
    if !report.ok() {
        return Err(InvalidProgram(report));
    }
    let scale = program.scale;
    let starts: std::collections::HashMap<usize, (Point2, Point2)> = chain_points(program)
        .into_iter()
        .map(|c| (c.op_index, (c.start, c.end)))
        .collect();

    let mut out = String::new();
    let w = &mut out;
    let _ = writeln!(w, "# Gallery DSL script (scale {})", format_real(scale));
    let _ = writeln!(w, "from fusion360gym_client import Fusion360GymClient");
    let _ = writeln!(w);
    let _ = writeln!(w, "client = Fusion360GymClient(\"http://127.0.0.1:8080\")");
    let _ = writeln!(w, "client.clear()");

    let mut sketch_no = 0usize;
    for (i, op) in program.ops.iter().enumerate() {
        match *op {
            CadOp::Sketch { plane } => {
                sketch_no += 1;
                let _ = writeln!(w);
                let _ = writeln!(w, "response = client.add_sketch(\"{}\")", plane.name());
                let _ = writeln!(
                    w,
                    "sketch_{sketch_no} = response.json()[\"data\"][\"sketch_name\"]"
                );
            }
            CadOp::Line { .. } => {
                let (start, end) = starts[&i];
                let _ = writeln!(
                    w,
                    "response = client.add_line(sketch_{sketch_no}, {}, {})",
                    point_literal(start, scale),
                    point_literal(end, scale)
                );
                let _ = writeln!(
                    w,
                    "profiles_{sketch_no} = response.json()[\"data\"][\"profiles\"]"
                );
            }
            CadOp::Arc { sweep, .. } => {
                let (start, end) = starts[&i];
                // degenerate arcs fall back to the chord midpoint
                let center = arc_center(start, end, sweep * 180.0)
                    .map(|(c, _)| c)
                    .unwrap_or_else(|_| {
                        Point2::new((start.x + end.x) / 2.0, (start.y + end.y) / 2.0)
                    });
                let _ = writeln!(
                    w,
                    "response = client.add_arc(sketch_{sketch_no}, {}, {}, {})",
                    point_literal(start, scale),
                    point_literal(center, scale),
                    format_real(sweep * 180.0)
                );
                let _ = writeln!(
                    w,
                    "profiles_{sketch_no} = response.json()[\"data\"][\"profiles\"]"
                );
            }
            CadOp::Circle { x, y, radius } => {
                let _ = writeln!(
                    w,
                    "response = client.add_circle(sketch_{sketch_no}, {}, {})",
                    point_literal(Point2::new(x, y), scale),
                    format_real(radius * scale)
                );
                let _ = writeln!(
                    w,
                    "profiles_{sketch_no} = response.json()[\"data\"][\"profiles\"]"
                );
            }
            CadOp::Extrude {
                depth,
                profile,
                boolean,
            } => {
                let _ = writeln!(
                    w,
                    "profile_{sketch_no} = list(profiles_{sketch_no}.keys())[{profile}]"
                );
                let _ = writeln!(
                    w,
                    "response = client.add_extrude(sketch_{sketch_no}, profile_{sketch_no}, {}, \"{}\")",
                    format_real(depth * scale),
                    feature_operation(boolean)
                );
            }
            CadOp::Sop | CadOp::Eop => {}
        }
    }
    let _ = writeln!(w);
    let _ = writeln!(w, "client.detach()");
    Ok(out)
}
