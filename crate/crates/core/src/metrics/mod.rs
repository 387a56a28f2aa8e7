//! Sequence, parameter, geometry and image metrics for predicted programs.
//!
//! Every sequence metric works on prefixes: the first `n` rows of each
//! matrix, cut after the first EOP row. SOP and EOP rows are part of the
//! compared prefix, so `n = 1` compares only the SOP row.

mod report;

pub use report::{
    load_matrix_dir, load_pairs, report, GeometryStats, MetricsReport, ParameterCurve, PrefixRow,
    ReportConfig, SweepRow,
};

use thiserror::Error;

use crate::dsl::{CadProgram, OpType};
use crate::geom::{evaluate_program, GeomError, VoxelGrid};
use crate::vector::{FeatureMatrix, Row, COLS, LEVELS, SLOT_PLANE, UNUSED};

pub const DEFAULT_ETA: i64 = 3;
pub const MAX_ETA: i64 = LEVELS as i64 - 1;
pub const DEFAULT_PREFIX_MAX: usize = 6;
const PARAM_SLOTS: usize = COLS - 1;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("no prediction pairs")]
    EmptyInput,
    #[error("tolerance {0} outside 0..=255")]
    EtaRange(i64),
    #[error("expected {expected} values, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("no prediction for ground-truth sample {0}")]
    MissingPrediction(String),
    #[error(transparent)]
    Geom(#[from] GeomError),
    #[error("{path}: {message}")]
    Input { path: String, message: String },
}

#[derive(Debug, Clone, PartialEq)]
pub struct PredictionPair {
    pub gt: FeatureMatrix,
    pub pred: FeatureMatrix,
}

impl PredictionPair {
    pub fn new(gt: FeatureMatrix, pred: FeatureMatrix) -> PredictionPair {
        PredictionPair { gt, pred }
    }
}

fn check_eta(eta: i64) -> Result<(), MetricsError> {
    if (0..=MAX_ETA).contains(&eta) {
        Ok(())
    } else {
        Err(MetricsError::EtaRange(eta))
    }
}

fn nonempty(pairs: &[PredictionPair]) -> Result<(), MetricsError> {
    if pairs.is_empty() {
        Err(MetricsError::EmptyInput)
    } else {
        Ok(())
    }
}

/// Rows `0..n` truncated after the first EOP.
pub fn prefix(m: &FeatureMatrix, n: usize) -> &[Row] {
    &m.rows[..m.prefix_len(n)]
}

pub fn type_column(m: &FeatureMatrix, n: usize) -> Vec<i32> {
    prefix(m, n).iter().map(|r| r[0]).collect()
}

/// Whether one parameter slot counts as correct. Unused ground-truth slots
/// need an unused prediction; the sketch plane needs an exact match.
pub fn slot_ok(col: usize, gt: i32, pred: i32, eta: i64) -> bool {
    if gt == UNUSED {
        return pred == UNUSED;
    }
    if !(0..LEVELS as i32).contains(&pred) {
        return false;
    }
    if col == SLOT_PLANE {
        return gt == pred;
    }
    ((gt - pred).abs() as i64) <= eta
}

fn row_slots_ok(gt: &Row, pred: &Row, eta: i64) -> usize {
    (1..COLS)
        .filter(|&c| slot_ok(c, gt[c], pred[c], eta))
        .count()
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    sum / n as f64
}

/// Accuracy of complete programs. Types must match exactly and every
/// parameter slot must pass at tolerance `eta`. At the full tolerance of 255
/// any parameter values pass, so the result equals [`asot`].
pub fn acp(pairs: &[PredictionPair], n: usize, eta: i64) -> Result<f64, MetricsError> {
    nonempty(pairs)?;
    check_eta(eta)?;
    Ok(mean(pairs.iter().map(|p| {
        let (g, q) = (prefix(&p.gt, n), prefix(&p.pred, n));
        let types = g.len() == q.len() && g.iter().zip(q).all(|(a, b)| a[0] == b[0]);
        let params = eta >= MAX_ETA
            || g.iter()
                .zip(q)
                .all(|(a, b)| row_slots_ok(a, b, eta) == PARAM_SLOTS);
        f64::from(u8::from(types && params))
    })))
}

/// Accuracy of operation-type sequences.
pub fn asot(pairs: &[PredictionPair], n: usize) -> Result<f64, MetricsError> {
    nonempty(pairs)?;
    Ok(mean(pairs.iter().map(|p| {
        f64::from(u8::from(type_column(&p.gt, n) == type_column(&p.pred, n)))
    })))
}

pub fn levenshtein<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, x) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = (prev[j] + usize::from(x != y))
                .min(prev[j + 1] + 1)
                .min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// Mean edit distance between type sequences.
pub fn edsot(pairs: &[PredictionPair], n: usize) -> Result<f64, MetricsError> {
    nonempty(pairs)?;
    Ok(mean(pairs.iter().map(|p| {
        levenshtein(&type_column(&p.gt, n), &type_column(&p.pred, n)) as f64
    })))
}

/// Position-wise type accuracy over the overlap of both prefixes,
/// normalized by total ground-truth prefix length.
pub fn aot(pairs: &[PredictionPair], n: usize) -> Result<f64, MetricsError> {
    nonempty(pairs)?;
    let (mut hits, mut total) = (0usize, 0usize);
    for p in pairs {
        let (h, t) = aot_counts(&type_column(&p.gt, n), &type_column(&p.pred, n));
        hits += h;
        total += t;
    }
    Ok(hits as f64 / total as f64)
}

/// Matching positions within the shorter sequence, and the ground-truth length.
pub fn aot_counts(gt: &[i32], pred: &[i32]) -> (usize, usize) {
    (
        gt.iter().zip(pred).filter(|(a, b)| a == b).count(),
        gt.len(),
    )
}

/// Parameter accuracy with order: slots are compared only at positions
/// where the operation types agree.
pub fn ap1(pairs: &[PredictionPair], n: usize, eta: i64) -> Result<f64, MetricsError> {
    nonempty(pairs)?;
    check_eta(eta)?;
    let (mut hits, mut total) = (0usize, 0usize);
    for p in pairs {
        let (g, q) = (prefix(&p.gt, n), prefix(&p.pred, n));
        total += PARAM_SLOTS * g.len();
        hits += g
            .iter()
            .zip(q)
            .filter(|(a, b)| a[0] == b[0])
            .map(|(a, b)| row_slots_ok(a, b, eta))
            .sum::<usize>();
    }
    Ok(hits as f64 / total as f64)
}

fn row_distance(a: &Row, b: &Row) -> i64 {
    (1..COLS).map(|c| (a[c] as i64 - b[c] as i64).abs()).sum()
}

/// Greedy matching of same-type rows by smallest parameter distance,
/// ties to the earliest ground-truth then prediction index.
pub fn match_rows(gt: &[Row], pred: &[Row]) -> Vec<(usize, usize)> {
    let mut candidates: Vec<(i64, usize, usize)> = Vec::new();
    for (i, a) in gt.iter().enumerate() {
        for (j, b) in pred.iter().enumerate() {
            if a[0] == b[0] {
                candidates.push((row_distance(a, b), i, j));
            }
        }
    }
    candidates.sort_unstable();
    let mut used_g = vec![false; gt.len()];
    let mut used_p = vec![false; pred.len()];
    let mut out = Vec::new();
    for (_, i, j) in candidates {
        if !used_g[i] && !used_p[j] {
            used_g[i] = true;
            used_p[j] = true;
            out.push((i, j));
        }
    }
    out.sort_unstable();
    out
}

/// Parameter accuracy without order: rows are paired by [`match_rows`].
pub fn ap2(pairs: &[PredictionPair], n: usize, eta: i64) -> Result<f64, MetricsError> {
    nonempty(pairs)?;
    check_eta(eta)?;
    let (mut hits, mut total) = (0usize, 0usize);
    for p in pairs {
        let (g, q) = (prefix(&p.gt, n), prefix(&p.pred, n));
        total += PARAM_SLOTS * g.len();
        hits += match_rows(g, q)
            .into_iter()
            .map(|(i, j)| row_slots_ok(&g[i], &q[j], eta))
            .sum::<usize>();
    }
    Ok(hits as f64 / total as f64)
}

/// Counts of each operation type code; codes outside 0..=6 are ignored.
pub fn multiset_vector(types: &[i32]) -> [u32; 7] {
    let mut v = [0; 7];
    for &t in types {
        if let Some(op) = OpType::from_code(t.into()) {
            v[op.code() as usize] += 1;
        }
    }
    v
}

fn dot(a: &[u32; 7], b: &[u32; 7]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| x as f64 * y as f64).sum()
}

pub fn tanimoto(a: &[u32; 7], b: &[u32; 7]) -> f64 {
    let (aa, bb, ab) = (dot(a, a), dot(b, b), dot(a, b));
    if aa == 0.0 && bb == 0.0 {
        return 1.0;
    }
    ab / (aa + bb - ab)
}

pub fn cosine(a: &[u32; 7], b: &[u32; 7]) -> f64 {
    let (aa, bb) = (dot(a, a), dot(b, b));
    match (aa == 0.0, bb == 0.0) {
        (true, true) => 1.0,
        (true, false) | (false, true) => 0.0,
        _ => dot(a, b) / (aa * bb).sqrt(),
    }
}

/// Mean Tanimoto coefficient and mean cosine similarity of type multisets.
pub fn msot(pairs: &[PredictionPair], n: usize) -> Result<(f64, f64), MetricsError> {
    nonempty(pairs)?;
    let vs: Vec<_> = pairs
        .iter()
        .map(|p| {
            (
                multiset_vector(&type_column(&p.gt, n)),
                multiset_vector(&type_column(&p.pred, n)),
            )
        })
        .collect();
    Ok((
        mean(vs.iter().map(|(a, b)| tanimoto(a, b))),
        mean(vs.iter().map(|(a, b)| cosine(a, b))),
    ))
}

/// Expected AP¹ of uniform random guessing when no slot is a sketch plane.
pub fn baseline_ap1_no_sketch(eta: i64) -> Result<f64, MetricsError> {
    check_eta(eta)?;
    let e = eta as f64;
    Ok((-e * e + 511.0 * e + 256.0) / 65536.0)
}

/// As [`baseline_ap1_no_sketch`] with 11 of every 91 slots being a
/// three-way sketch plane guessed exactly.
pub fn baseline_ap1_with_sketch(eta: i64) -> Result<f64, MetricsError> {
    Ok((1.0 / 3.0) * (11.0 / 91.0) + baseline_ap1_no_sketch(eta)? * (80.0 / 91.0))
}

/// Normalized trapezoidal area under an AP¹ curve sampled at η = 0..=255.
pub fn auc_ap1(curve: &[f64]) -> Result<f64, MetricsError> {
    let expected = LEVELS as usize;
    if curve.len() != expected {
        return Err(MetricsError::LengthMismatch {
            expected,
            got: curve.len(),
        });
    }
    Ok(curve.windows(2).map(|w| (w[0] + w[1]) / 2.0).sum::<f64>() / MAX_ETA as f64)
}

pub fn voxel_iou(a: &VoxelGrid, b: &VoxelGrid) -> Result<f64, MetricsError> {
    if a.lattice != b.lattice {
        return Err(GeomError::LatticeMismatch.into());
    }
    let (mut inter, mut union) = (0usize, 0usize);
    for (&x, &y) in a.cells().iter().zip(b.cells()) {
        inter += usize::from(x && y);
        union += usize::from(x || y);
    }
    Ok(if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    })
}

/// Fraction of programs that evaluate to a non-empty solid.
pub fn parsing_rate(programs: &[CadProgram], resolution: usize) -> Result<f64, MetricsError> {
    if programs.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    Ok(mean(programs.iter().map(|p| {
        f64::from(u8::from(evaluate_program(p, resolution).is_ok()))
    })))
}
