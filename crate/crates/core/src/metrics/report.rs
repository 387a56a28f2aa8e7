use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{
    acp, aot, ap1, ap2, asot, auc_ap1, edsot, msot, prefix, slot_ok, voxel_iou, MetricsError,
    PredictionPair, DEFAULT_ETA, DEFAULT_PREFIX_MAX, MAX_ETA,
};
use crate::dsl::OpType;
use crate::geom::evaluate_program;
use crate::render::{image_mse, render, Camera};
use crate::vector::{
    devectorize, used_slots, FeatureMatrix, MatrixDoc, SLOT_DEPTH, SLOT_PLANE, SLOT_RADIUS,
    SLOT_SWEEP, SLOT_X, SLOT_Y,
};

#[derive(Debug, Clone, PartialEq)]
pub struct ReportConfig {
    pub eta: i64,
    pub prefix_max: usize,
    pub resolution: usize,
    pub width: usize,
    pub height: usize,
    pub camera: Camera,
}

impl Default for ReportConfig {
    fn default() -> Self {
        ReportConfig {
            eta: DEFAULT_ETA,
            prefix_max: DEFAULT_PREFIX_MAX,
            resolution: 64,
            width: 128,
            height: 128,
            camera: Camera::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrefixRow {
    pub n: usize,
    pub acp: f64,
    pub asot: f64,
    pub edsot: f64,
    /// EDSOT negated, so that higher is better like the other columns.
    pub neg_edsot: f64,
    pub aot: f64,
    pub ap1: f64,
    pub ap2: f64,
    pub msot_tc: f64,
    pub msot_cs: f64,
}

/// ACP and AP¹ at every tolerance 0..=255 for one prefix length.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub n: usize,
    pub acp: Vec<f64>,
    pub ap1: Vec<f64>,
    pub ap1_auc: f64,
}

/// AP¹ of a single parameter slot of one operation type against tolerance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterCurve {
    pub op: String,
    pub slot: String,
    /// Ground-truth rows of this operation type in the compared prefixes.
    pub rows: usize,
    pub ap1: Vec<f64>,
    pub auc: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeometryStats {
    pub pairs: usize,
    pub parsed: usize,
    pub parsing_rate: f64,
    pub iou_mean: Option<f64>,
    pub iou_std: Option<f64>,
    pub mse_mean: Option<f64>,
    pub mse_std: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub pairs: usize,
    pub eta: i64,
    pub prefix_max: usize,
    pub prefix: Vec<PrefixRow>,
    pub sweeps: Vec<SweepRow>,
    pub parameters: Vec<ParameterCurve>,
    pub geometry: GeometryStats,
}

fn slot_name(col: usize) -> &'static str {
    match col {
        SLOT_PLANE => "plane",
        SLOT_X => "x",
        SLOT_Y => "y",
        SLOT_SWEEP => "sweep",
        SLOT_RADIUS => "radius",
        SLOT_DEPTH => "depth",
        _ => "?",
    }
}

fn op_name(op: OpType) -> &'static str {
    match op {
        OpType::Sketch => "sketch",
        OpType::Line => "line",
        OpType::Arc => "arc",
        OpType::Circle => "circle",
        OpType::Extrude => "extrude",
        OpType::Sop => "sop",
        OpType::Eop => "eop",
    }
}

fn parameter_curves(
    pairs: &[PredictionPair],
    n: usize,
) -> Result<Vec<ParameterCurve>, MetricsError> {
    let mut out = Vec::new();
    for op in OpType::ALL {
        let code = op.code() as i32;
        for &col in used_slots(op) {
            let mut rows = 0;
            let mut hits = vec![0usize; MAX_ETA as usize + 1];
            for p in pairs {
                let (g, q) = (prefix(&p.gt, n), prefix(&p.pred, n));
                for (j, gr) in g.iter().enumerate().filter(|(_, r)| r[0] == code) {
                    rows += 1;
                    let Some(qr) = q.get(j).filter(|qr| qr[0] == code) else {
                        continue;
                    };
                    for (eta, h) in hits.iter_mut().enumerate() {
                        *h += usize::from(slot_ok(col, gr[col], qr[col], eta as i64));
                    }
                }
            }
            if rows == 0 {
                continue;
            }
            let ap1: Vec<f64> = hits.iter().map(|&h| h as f64 / rows as f64).collect();
            out.push(ParameterCurve {
                op: op_name(op).into(),
                slot: slot_name(col).into(),
                rows,
                auc: auc_ap1(&ap1)?,
                ap1,
            });
        }
    }
    Ok(out)
}

fn mean_std(values: &[f64]) -> (Option<f64>, Option<f64>) {
    if values.is_empty() {
        return (None, None);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (Some(mean), Some(var.sqrt()))
}

fn geometry(pairs: &[PredictionPair], config: &ReportConfig) -> GeometryStats {
    let outcomes: Vec<Option<Option<(f64, f64)>>> = pairs
        .par_iter()
        .map(|p| {
            let pred = devectorize(&p.pred)
                .ok()
                .and_then(|prog| evaluate_program(&prog, config.resolution).ok())?;
            let gt = devectorize(&p.gt)
                .ok()
                .and_then(|prog| evaluate_program(&prog, config.resolution).ok());
            let compared = gt.and_then(|gt| {
                let iou = voxel_iou(&gt.occupancy(), &pred.occupancy()).ok()?;
                let a = render(&gt, &config.camera, config.width, config.height).ok()?;
                let b = render(&pred, &config.camera, config.width, config.height).ok()?;
                Some((iou, image_mse(&a, &b).ok()?))
            });
            Some(compared)
        })
        .collect();
    let parsed = outcomes.iter().filter(|o| o.is_some()).count();
    let (ious, mses): (Vec<f64>, Vec<f64>) = outcomes.iter().flatten().flatten().copied().unzip();
    let (iou_mean, iou_std) = mean_std(&ious);
    let (mse_mean, mse_std) = mean_std(&mses);
    GeometryStats {
        pairs: pairs.len(),
        parsed,
        parsing_rate: parsed as f64 / pairs.len() as f64,
        iou_mean,
        iou_std,
        mse_mean,
        mse_std,
    }
}

/// Every sequence, parameter, geometry and image metric over `pairs`.
pub fn report(
    pairs: &[PredictionPair],
    config: &ReportConfig,
) -> Result<MetricsReport, MetricsError> {
    if pairs.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    let eta = config.eta;
    let mut rows = Vec::with_capacity(config.prefix_max);
    let mut sweeps = Vec::with_capacity(config.prefix_max);
    for n in 1..=config.prefix_max {
        let (msot_tc, msot_cs) = msot(pairs, n)?;
        let ed = edsot(pairs, n)?;
        rows.push(PrefixRow {
            n,
            acp: acp(pairs, n, eta)?,
            asot: asot(pairs, n)?,
            edsot: ed,
            neg_edsot: -ed,
            aot: aot(pairs, n)?,
            ap1: ap1(pairs, n, eta)?,
            ap2: ap2(pairs, n, eta)?,
            msot_tc,
            msot_cs,
        });
        let acp_curve = (0..=MAX_ETA)
            .map(|e| acp(pairs, n, e))
            .collect::<Result<Vec<_>, _>>()?;
        let ap1_curve = (0..=MAX_ETA)
            .map(|e| ap1(pairs, n, e))
            .collect::<Result<Vec<_>, _>>()?;
        sweeps.push(SweepRow {
            n,
            ap1_auc: auc_ap1(&ap1_curve)?,
            acp: acp_curve,
            ap1: ap1_curve,
        });
    }
    Ok(MetricsReport {
        pairs: pairs.len(),
        eta,
        prefix_max: config.prefix_max,
        prefix: rows,
        sweeps,
        parameters: parameter_curves(pairs, config.prefix_max)?,
        geometry: geometry(pairs, config),
    })
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".to_string(), |x| format!("{x:.4}"))
}

impl MetricsReport {
    /// Aligned plain-text tables.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "pairs: {}   tolerance: {}", self.pairs, self.eta);
        let _ = writeln!(
            s,
            "{:>3} {:>7} {:>7} {:>7} {:>7} {:>7} {:>7} {:>7} {:>8} {:>8}",
            "n", "ACP", "ASOT", "EDSOT", "-EDSOT", "AOT", "AP1", "AP2", "MSOT-TC", "MSOT-CS"
        );
        for r in &self.prefix {
            let _ = writeln!(
                s,
                "{:>3} {:>7.4} {:>7.4} {:>7.4} {:>7.4} {:>7.4} {:>7.4} {:>7.4} {:>8.4} {:>8.4}",
                r.n, r.acp, r.asot, r.edsot, r.neg_edsot, r.aot, r.ap1, r.ap2, r.msot_tc, r.msot_cs
            );
        }
        s.push('\n');
        let _ = writeln!(
            s,
            "{:>3} {:>10} {:>10} {:>10}",
            "n", "ACP@255", "AP1@255", "AP1 AUC"
        );
        for w in &self.sweeps {
            let _ = writeln!(
                s,
                "{:>3} {:>10.4} {:>10.4} {:>10.4}",
                w.n, w.acp[255], w.ap1[255], w.ap1_auc
            );
        }
        s.push('\n');
        let _ = writeln!(
            s,
            "{:<8} {:<7} {:>5} {:>8} {:>8} {:>8}",
            "op", "slot", "rows", "AP1@0", "AP1@3", "AUC"
        );
        for c in &self.parameters {
            let _ = writeln!(
                s,
                "{:<8} {:<7} {:>5} {:>8.4} {:>8.4} {:>8.4}",
                c.op, c.slot, c.rows, c.ap1[0], c.ap1[3], c.auc
            );
        }
        s.push('\n');
        let g = &self.geometry;
        let _ = writeln!(
            s,
            "parsing rate  {:.4} ({}/{})",
            g.parsing_rate, g.parsed, g.pairs
        );
        let _ = writeln!(
            s,
            "IoU           mean {}  std {}",
            opt(g.iou_mean),
            opt(g.iou_std)
        );
        let _ = writeln!(
            s,
            "image MSE     mean {}  std {}",
            opt(g.mse_mean),
            opt(g.mse_std)
        );
        s
    }
}

/// Reads every `<id>.json` matrix document in `dir`, keyed by id.
pub fn load_matrix_dir(dir: &Path) -> Result<BTreeMap<String, FeatureMatrix>, MetricsError> {
    let input = |path: &Path, message: String| MetricsError::Input {
        path: path.display().to_string(),
        message,
    };
    let entries = fs::read_dir(dir).map_err(|e| input(dir, e.to_string()))?;
    let mut out = BTreeMap::new();
    for entry in entries {
        let path = entry.map_err(|e| input(dir, e.to_string()))?.path();
        if path.extension().and_then(|e| e.to_str()) != Some("json") {
            continue;
        }
        let Some(id) = path.file_stem().and_then(|s| s.to_str()) else {
            continue;
        };
        let text = fs::read_to_string(&path).map_err(|e| input(&path, e.to_string()))?;
        let doc: MatrixDoc =
            serde_json::from_str(&text).map_err(|e| input(&path, e.to_string()))?;
        out.insert(id.to_string(), doc.matrix);
    }
    Ok(out)
}

/// Pairs every ground-truth matrix with the prediction of the same id.
pub fn load_pairs(
    gt_dir: &Path,
    pred_dir: &Path,
) -> Result<(Vec<String>, Vec<PredictionPair>), MetricsError> {
    let gt = load_matrix_dir(gt_dir)?;
    let mut pred = load_matrix_dir(pred_dir)?;
    let mut ids = Vec::with_capacity(gt.len());
    let mut pairs = Vec::with_capacity(gt.len());
    for (id, g) in gt {
        let p = pred
            .remove(&id)
            .ok_or_else(|| MetricsError::MissingPrediction(id.clone()))?;
        pairs.push(PredictionPair::new(g, p));
        ids.push(id);
    }
    Ok((ids, pairs))
}
