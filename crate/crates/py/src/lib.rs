//! Python bindings for the cadseq toolkit.

use std::path::PathBuf;

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::PyBytes;

use cadseq::dsl::{self, CadProgram};
use cadseq::geom::{self, Point3, SolidScene};
use cadseq::metrics::{self, ReportConfig};
use cadseq::render::{self, Camera};
use cadseq::synth::{self, SynthConfig};
use cadseq::vector::{self, FeatureMatrix, QuantRange, COLS, ROWS};

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn matrix_from_rows(rows: Vec<Vec<i32>>) -> Result<FeatureMatrix, String> {
    if rows.len() != ROWS || rows.iter().any(|r| r.len() != COLS) {
        return Err(format!("expected a {ROWS}x{COLS} matrix"));
    }
    let mut m = FeatureMatrix::default();
    for (dst, src) in m.rows.iter_mut().zip(rows) {
        dst.copy_from_slice(&src);
    }
    Ok(m)
}

fn matrix_to_rows(m: &FeatureMatrix) -> Vec<Vec<i32>> {
    m.rows.iter().map(|r| r.to_vec()).collect()
}

fn range(lo: f64, hi: f64) -> PyResult<QuantRange> {
    QuantRange::new(lo, hi).map_err(value_err)
}

/// A sketch-and-extrude program.
#[pyclass(name = "Program", module = "cadseq_py")]
struct PyProgram {
    inner: CadProgram,
}

#[pymethods]
impl PyProgram {
    /// Parse program text.
    #[staticmethod]
    fn parse(text: &str) -> PyResult<Self> {
        Ok(PyProgram {
            inner: dsl::parse_program(text).map_err(value_err)?,
        })
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        Ok(PyProgram {
            inner: serde_json::from_str(text).map_err(value_err)?,
        })
    }

    /// Decode a 10x7 feature matrix.
    #[staticmethod]
    fn from_matrix(rows: Vec<Vec<i32>>) -> PyResult<Self> {
        let m = matrix_from_rows(rows).map_err(value_err)?;
        Ok(PyProgram {
            inner: vector::devectorize(&m).map_err(value_err)?,
        })
    }

    fn to_text(&self) -> PyResult<String> {
        dsl::emit_sim_gallery(&self.inner).map_err(value_err)
    }

    fn to_json(&self) -> PyResult<String> {
        serde_json::to_string(&self.inner).map_err(value_err)
    }

    fn gallery_script(&self) -> PyResult<String> {
        dsl::emit_gallery_script(&self.inner).map_err(value_err)
    }

    /// Grammar violations as strings; empty when valid.
    fn validate(&self) -> Vec<String> {
        dsl::validate_grammar(&self.inner)
            .violations
            .iter()
            .map(|v| format!("op {}: {} ({})", v.index, v.rule, v.message))
            .collect()
    }

    fn vectorize(&self) -> PyResult<Vec<Vec<i32>>> {
        Ok(matrix_to_rows(
            &vector::vectorize(&self.inner).map_err(value_err)?,
        ))
    }

    fn type_sequence(&self) -> Vec<i64> {
        self.inner
            .type_sequence()
            .into_iter()
            .map(|t| i64::from(t.code()))
            .collect()
    }

    #[pyo3(signature = (resolution = 64))]
    fn evaluate(&self, resolution: usize) -> PyResult<PyScene> {
        Ok(PyScene {
            inner: geom::evaluate_program(&self.inner, resolution).map_err(value_err)?,
        })
    }

    fn __len__(&self) -> usize {
        self.inner.ops.len()
    }

    fn __eq__(&self, other: &Self) -> bool {
        self.inner == other.inner
    }

    fn __repr__(&self) -> String {
        format!("Program({} ops)", self.inner.ops.len())
    }
}

/// Solids produced by evaluating a program.
#[pyclass(name = "Scene", module = "cadseq_py")]
struct PyScene {
    inner: SolidScene,
}

#[pymethods]
impl PyScene {
    #[getter]
    fn bodies(&self) -> usize {
        self.inner.bodies.len()
    }

    #[getter]
    fn resolution(&self) -> usize {
        self.inner.lattice.resolution
    }

    fn volume(&self) -> f64 {
        self.inner.volume()
    }

    fn voxel_count(&self) -> usize {
        self.inner.occupancy().count()
    }

    fn iou(&self, other: &PyScene) -> PyResult<f64> {
        metrics::voxel_iou(&self.inner.occupancy(), &other.inner.occupancy()).map_err(value_err)
    }

    fn to_stl(&self) -> String {
        self.inner.mesh().to_ascii_stl("cadseq")
    }

    /// Render to PGM bytes.
    #[pyo3(signature = (width = 128, height = 128, eye = (20.0, 20.0, 20.0)))]
    fn render_pgm<'py>(
        &self,
        py: Python<'py>,
        width: usize,
        height: usize,
        eye: (f64, f64, f64),
    ) -> PyResult<Bound<'py, PyBytes>> {
        let cam = Camera::with_eye(Point3::new(eye.0, eye.1, eye.2));
        let img = render::render(&self.inner, &cam, width, height).map_err(value_err)?;
        Ok(PyBytes::new(py, &img.to_pgm()))
    }

    fn __repr__(&self) -> String {
        format!(
            "Scene({} bodies, R={})",
            self.inner.bodies.len(),
            self.inner.lattice.resolution
        )
    }
}

#[pyfunction]
#[pyo3(signature = (value, lo = -1.0, hi = 1.0))]
fn quantize(value: f64, lo: f64, hi: f64) -> PyResult<i32> {
    vector::quantize_value(value, range(lo, hi)?).map_err(value_err)
}

#[pyfunction]
#[pyo3(signature = (bin, lo = -1.0, hi = 1.0))]
fn dequantize(bin: i32, lo: f64, hi: f64) -> PyResult<f64> {
    vector::dequantize_value(bin, range(lo, hi)?).map_err(value_err)
}

#[pyfunction]
fn levenshtein(a: Vec<i32>, b: Vec<i32>) -> usize {
    metrics::levenshtein(&a, &b)
}

#[pyfunction]
fn baseline_ap1_no_sketch(eta: i64) -> PyResult<f64> {
    metrics::baseline_ap1_no_sketch(eta).map_err(value_err)
}

#[pyfunction]
fn baseline_ap1_with_sketch(eta: i64) -> PyResult<f64> {
    metrics::baseline_ap1_with_sketch(eta).map_err(value_err)
}

/// Score prediction matrices against ground truth; returns the report as JSON.
#[pyfunction]
#[allow(clippy::too_many_arguments)]
#[pyo3(signature = (gt_dir, pred_dir, eta = 3, prefix_max = 6, resolution = 64, width = 128, height = 128))]
fn evaluate_dirs(
    py: Python<'_>,
    gt_dir: PathBuf,
    pred_dir: PathBuf,
    eta: i64,
    prefix_max: usize,
    resolution: usize,
    width: usize,
    height: usize,
) -> PyResult<String> {
    py.detach(|| {
        let (_, pairs) = metrics::load_pairs(&gt_dir, &pred_dir).map_err(|e| e.to_string())?;
        let config = ReportConfig {
            eta,
            prefix_max,
            resolution,
            width,
            height,
            ..ReportConfig::default()
        };
        let rep = metrics::report(&pairs, &config).map_err(|e| e.to_string())?;
        serde_json::to_string(&rep).map_err(|e| e.to_string())
    })
    .map_err(value_err)
}

/// Write a dataset to `out`; returns the manifest as JSON.
#[pyfunction]
#[allow(clippy::too_many_arguments)]
#[pyo3(signature = (out, mode = "random", seed = 0, counts = synth::DEFAULT_COUNTS, resolution = 64, width = 128, height = 128))]
fn synthesize(
    py: Python<'_>,
    out: PathBuf,
    mode: &str,
    seed: u64,
    counts: &str,
    resolution: usize,
    width: usize,
    height: usize,
) -> PyResult<String> {
    let mode = mode.parse().map_err(value_err)?;
    let counts = synth::parse_counts(counts).map_err(value_err)?;
    let config = SynthConfig {
        mode,
        seed,
        counts,
        resolution,
        width,
        height,
    };
    py.detach(|| {
        let manifest = synth::synthesize_dataset(&config, &out).map_err(|e| e.to_string())?;
        serde_json::to_string(&manifest).map_err(|e| e.to_string())
    })
    .map_err(value_err)
}

#[pymodule]
fn cadseq_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyProgram>()?;
    m.add_class::<PyScene>()?;
    m.add_function(wrap_pyfunction!(quantize, m)?)?;
    m.add_function(wrap_pyfunction!(dequantize, m)?)?;
    m.add_function(wrap_pyfunction!(levenshtein, m)?)?;
    m.add_function(wrap_pyfunction!(baseline_ap1_no_sketch, m)?)?;
    m.add_function(wrap_pyfunction!(baseline_ap1_with_sketch, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate_dirs, m)?)?;
    m.add_function(wrap_pyfunction!(synthesize, m)?)?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matrix_rows_round_trip() {
        let m = FeatureMatrix::default();
        assert_eq!(matrix_from_rows(matrix_to_rows(&m)).unwrap(), m);
        assert!(matrix_from_rows(vec![vec![5; COLS]; ROWS - 1]).is_err());
        assert!(matrix_from_rows(vec![vec![5; COLS - 1]; ROWS]).is_err());
    }
}
