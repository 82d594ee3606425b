//! Python bindings for the toolkit: stack construction and evaluation,
//! Gaussian concentration statistics, superpixel logit consistency,
//! clustering loss, and boundary metrics. Matrices cross the boundary as
//! lists of equal-length rows; errors surface as ValueError.

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::PyDict;

use tinit::affine::{build_identity_chain, ChainSpec};
use tinit::edges::{extract_edges, f_measure, performance_ratio, precision_recall};
use tinit::expt::gauss_stats;
use tinit::matrix::Matrix;
use tinit::sparse::{argmax_labels, enforce_consistency, LabelMap, LogitTensor, SparseMembership};
use tinit::sploss::{
    fd_gradient_check, loss, loss_gradient, AssignmentMap, DistanceKind, LossConfig, PixelField,
};
use tinit::stack::{
    baseline_init, build_general_stack, build_transparent_stack, ActivationKind, BaselineKind,
    TransparentStack,
};

/// Label-major logit planes: [label][row][col].
type Planes = Vec<Vec<Vec<f64>>>;

fn value_err(e: tinit::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn matrix_from_rows(rows: Vec<Vec<f64>>, what: &str) -> PyResult<Matrix<f64>> {
    let r = rows.len();
    let c = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|row| row.len() != c) {
        return Err(PyValueError::new_err(format!("{what}: ragged rows")));
    }
    Matrix::from_vec(r, c, rows.into_iter().flatten().collect()).map_err(value_err)
}

fn matrix_to_rows(m: &Matrix<f64>) -> Vec<Vec<f64>> {
    (0..m.rows()).map(|r| m.row(r).to_vec()).collect()
}

fn parse_activation(name: Option<&str>) -> PyResult<Option<ActivationKind>> {
    name.map(|s| s.parse().map_err(value_err)).transpose()
}

fn parse_distance(name: &str) -> PyResult<DistanceKind> {
    match name {
        "l2" => Ok(DistanceKind::L2),
        "cross_entropy" => Ok(DistanceKind::CrossEntropy),
        other => Err(PyValueError::new_err(format!(
            "unknown distance {other:?}; expected l2 or cross_entropy"
        ))),
    }
}

fn label_map_from_rows(ids: Vec<Vec<u32>>, what: &str) -> PyResult<LabelMap> {
    let h = ids.len();
    let w = ids.first().map_or(0, Vec::len);
    if ids.iter().any(|row| row.len() != w) {
        return Err(PyValueError::new_err(format!("{what}: ragged rows")));
    }
    LabelMap::new(h, w, ids.into_iter().flatten().collect()).map_err(value_err)
}

fn logits_from_planes(planes: Planes) -> PyResult<LogitTensor<f64>> {
    let nl = planes.len();
    let h = planes.first().map_or(0, Vec::len);
    let w = planes.first().and_then(|p| p.first()).map_or(0, Vec::len);
    let mut data = Vec::with_capacity(nl * h * w);
    for plane in &planes {
        if plane.len() != h || plane.iter().any(|row| row.len() != w) {
            return Err(PyValueError::new_err("logits: ragged planes"));
        }
        for row in plane {
            data.extend_from_slice(row);
        }
    }
    LogitTensor::new(nl, h, w, data).map_err(value_err)
}

fn logits_to_planes(t: &LogitTensor<f64>) -> Planes {
    let (h, w) = (t.h(), t.w());
    (0..t.n_labels())
        .map(|l| {
            let plane = t.plane(l);
            (0..h).map(|y| plane[y * w..(y + 1) * w].to_vec()).collect()
        })
        .collect()
}

fn assignment_from_name(
    name: &str,
    h: usize,
    w: usize,
    d: usize,
    seed: u64,
) -> PyResult<AssignmentMap> {
    match name {
        "uniform" => AssignmentMap::uniform_grid(h, w, d),
        "random" => AssignmentMap::random_grid(h, w, d, seed),
        "one_hot" => AssignmentMap::one_hot_grid(h, w, d),
        other => {
            return Err(PyValueError::new_err(format!(
                "unknown assignment {other:?}; expected uniform, random, or one_hot"
            )))
        }
    }
    .map_err(value_err)
}

/// A widened affine stack that composes to the identity map.
#[pyclass(name = "Stack")]
struct PyStack {
    inner: TransparentStack<f64>,
}

#[pymethods]
impl PyStack {
    /// Identity-composing chain evaluated directly, with an optional
    /// elementwise activation between layers.
    #[staticmethod]
    #[pyo3(signature = (dims, seed, bias_variance=1e-4, activation=None))]
    fn plain(
        dims: Vec<usize>,
        seed: u64,
        bias_variance: f64,
        activation: Option<&str>,
    ) -> PyResult<Self> {
        let spec = ChainSpec::new(dims, seed, bias_variance).map_err(value_err)?;
        let chain = build_identity_chain(&spec).map_err(value_err)?;
        let act = parse_activation(activation)?;
        let inner = TransparentStack::direct(chain, act).map_err(value_err)?;
        Ok(PyStack { inner })
    }

    /// Sign-split widened stack whose activation cancels by construction.
    #[staticmethod]
    #[pyo3(signature = (dims, seed, bias_variance=1e-4, activation="relu"))]
    fn transparent(
        dims: Vec<usize>,
        seed: u64,
        bias_variance: f64,
        activation: &str,
    ) -> PyResult<Self> {
        let spec = ChainSpec::new(dims, seed, bias_variance).map_err(value_err)?;
        let chain = build_identity_chain(&spec).map_err(value_err)?;
        let act: ActivationKind = activation.parse().map_err(value_err)?;
        let inner = build_transparent_stack(&chain, act).map_err(value_err)?;
        Ok(PyStack { inner })
    }

    /// Pair-carrying widened stack that stays transparent for an arbitrary
    /// Python activation function.
    #[staticmethod]
    #[pyo3(signature = (dims, seed, sigma, bias_variance=1e-4))]
    fn general(
        dims: Vec<usize>,
        seed: u64,
        sigma: PyObject,
        bias_variance: f64,
    ) -> PyResult<Self> {
        let spec = ChainSpec::new(dims, seed, bias_variance).map_err(value_err)?;
        let chain = build_identity_chain::<f64>(&spec).map_err(value_err)?;
        let apply = move |x: f64| -> f64 {
            Python::with_gil(|py| {
                sigma
                    .call1(py, (x,))
                    .and_then(|v| v.extract::<f64>(py))
                    .unwrap_or(f64::NAN)
            })
        };
        let inner = build_general_stack(&chain, apply).map_err(value_err)?;
        Ok(PyStack { inner })
    }

    /// Conventional initialization baselines: "random", "xavier", or
    /// "net2net".
    #[staticmethod]
    #[pyo3(signature = (scheme, dims, seed, activation=None))]
    fn baseline(
        scheme: &str,
        dims: Vec<usize>,
        seed: u64,
        activation: Option<&str>,
    ) -> PyResult<Self> {
        let kind = match scheme {
            "random" => BaselineKind::Random,
            "xavier" => BaselineKind::Xavier,
            "net2net" => BaselineKind::Net2Net,
            other => {
                return Err(PyValueError::new_err(format!(
                    "unknown scheme {other:?}; expected random, xavier, or net2net"
                )))
            }
        };
        let act = parse_activation(activation)?;
        let inner = baseline_init(kind, &dims, seed, act).map_err(value_err)?;
        Ok(PyStack { inner })
    }

    /// Batch evaluation: one input row per output row.
    fn forward(&self, x: Vec<Vec<f64>>) -> PyResult<Vec<Vec<f64>>> {
        let m = matrix_from_rows(x, "forward input")?;
        Ok(matrix_to_rows(&self.inner.forward(&m).map_err(value_err)?))
    }

    /// Percentage of parameters with magnitude above epsilon.
    fn init_rate(&self, epsilon: f64) -> PyResult<f64> {
        self.inner.init_rate(epsilon).map_err(value_err)
    }

    /// Percentage of entries reproduced to within epsilon.
    fn recovery_rate(&self, x: Vec<Vec<f64>>, epsilon: f64) -> PyResult<f64> {
        let m = matrix_from_rows(x, "recovery input")?;
        self.inner.recovery_rate(&m, epsilon).map_err(value_err)
    }

    /// Worst reconstruction error per uniform input range.
    fn stability_sweep(
        &self,
        ranges: Vec<(f64, f64)>,
        samples: usize,
        seed: u64,
    ) -> PyResult<Vec<f64>> {
        self.inner
            .stability_sweep(&ranges, samples, seed)
            .map_err(value_err)
    }

    #[getter]
    fn in_dim(&self) -> usize {
        self.inner.in_dim()
    }

    #[getter]
    fn layer_shapes(&self) -> Vec<(usize, usize)> {
        self.inner
            .layers()
            .iter()
            .map(|l| (l.weight().rows(), l.weight().cols()))
            .collect()
    }
}

/// Concentration statistics of high-dimensional Gaussian vectors.
#[pyfunction]
#[pyo3(signature = (rows, cols, seed, variance=None))]
fn gauss_moments(
    py: Python<'_>,
    rows: usize,
    cols: usize,
    seed: u64,
    variance: Option<f64>,
) -> PyResult<Py<PyDict>> {
    let cfg = tinit::expt::GaussStatsConfig {
        rows,
        cols,
        variance,
        seed,
        output: None,
    };
    let r = gauss_stats(&cfg).map_err(value_err)?;
    let d = PyDict::new(py);
    d.set_item("rows", r.rows)?;
    d.set_item("cols", r.cols)?;
    d.set_item("variance", r.variance)?;
    d.set_item("sq_length_mean", r.sq_length_mean)?;
    d.set_item("sq_length_var", r.sq_length_var)?;
    d.set_item("inner_mean", r.inner_mean)?;
    d.set_item("inner_var", r.inner_var)?;
    d.set_item("expected_sq_length_mean", r.expected_sq_length_mean)?;
    d.set_item("expected_sq_length_var", r.expected_sq_length_var)?;
    d.set_item("expected_inner_var", r.expected_inner_var)?;
    Ok(d.into())
}

/// Replaces every logit with its superpixel mean; returns the consistent
/// logits and any warnings.
#[pyfunction]
fn make_consistent(
    logits: Planes,
    superpixels: Vec<Vec<u32>>,
) -> PyResult<(Planes, Vec<String>)> {
    let tensor = logits_from_planes(logits)?;
    let map = label_map_from_rows(superpixels, "superpixels")?;
    if map.h() != tensor.h() || map.w() != tensor.w() {
        return Err(PyValueError::new_err(format!(
            "superpixel map {}x{} does not match logits {}x{}",
            map.h(),
            map.w(),
            tensor.h(),
            tensor.w()
        )));
    }
    let m = SparseMembership::infer_from_label_map(&map).map_err(value_err)?;
    let (out, warnings) = enforce_consistency(&m, &tensor).map_err(value_err)?;
    let notes = warnings.iter().map(|w| w.to_string()).collect();
    Ok((logits_to_planes(&out), notes))
}

/// Per-pixel argmax over label planes.
#[pyfunction]
fn argmax_map(logits: Planes) -> PyResult<Vec<Vec<u32>>> {
    let tensor = logits_from_planes(logits)?;
    let map = argmax_labels(&tensor).map_err(value_err)?;
    let (h, w) = (map.h(), map.w());
    Ok((0..h)
        .map(|y| map.ids()[y * w..(y + 1) * w].to_vec())
        .collect())
}

/// Boundary precision, recall, F-measure, and true/false-positive ratio of
/// two segmentations at a pixel tolerance.
#[pyfunction]
#[pyo3(signature = (pred, gt, tolerance=2))]
fn boundary_metrics(
    py: Python<'_>,
    pred: Vec<Vec<u32>>,
    gt: Vec<Vec<u32>>,
    tolerance: usize,
) -> PyResult<Py<PyDict>> {
    let pred_edges = extract_edges(&label_map_from_rows(pred, "pred")?);
    let gt_edges = extract_edges(&label_map_from_rows(gt, "gt")?);
    let ((p, r), mut warnings) =
        precision_recall(&pred_edges, &gt_edges, tolerance).map_err(value_err)?;
    let (fm, more) = f_measure(&pred_edges, &gt_edges, tolerance).map_err(value_err)?;
    warnings.extend(more);
    let (ratio, more) =
        performance_ratio(&pred_edges, &gt_edges, tolerance).map_err(value_err)?;
    warnings.extend(more);
    let mut notes: Vec<String> = warnings.iter().map(|w| w.to_string()).collect();
    notes.sort();
    notes.dedup();
    let d = PyDict::new(py);
    d.set_item("precision", p)?;
    d.set_item("recall", r)?;
    d.set_item("f_measure", fm)?;
    d.set_item("performance_ratio", ratio)?;
    d.set_item("warnings", notes)?;
    Ok(d.into())
}

#[allow(clippy::too_many_arguments)]
fn build_loss_inputs(
    properties: Vec<Vec<f64>>,
    coords: Vec<Vec<f64>>,
    height: usize,
    width: usize,
    assignment: &str,
    grid_interval: usize,
    seed: u64,
    m_weight: f64,
    distance: &str,
) -> PyResult<(PixelField, AssignmentMap, LossConfig)> {
    let f = matrix_from_rows(properties, "properties")?;
    let c = matrix_from_rows(coords, "coords")?;
    let pf = PixelField::new(f, c, height, width).map_err(value_err)?;
    let a = assignment_from_name(assignment, height, width, grid_interval, seed)?;
    let cfg = LossConfig {
        m_weight,
        sampling_interval: grid_interval as f64,
        distance: parse_distance(distance)?,
    };
    Ok((pf, a, cfg))
}

/// Clustering loss of a pixel field under a grid assignment; returns the
/// property term, the coordinate term, and their total.
#[pyfunction]
#[pyo3(signature = (properties, coords, height, width, assignment="uniform",
    grid_interval=4, seed=1, m_weight=1.0, distance="l2"))]
#[allow(clippy::too_many_arguments)]
fn clustering_loss(
    py: Python<'_>,
    properties: Vec<Vec<f64>>,
    coords: Vec<Vec<f64>>,
    height: usize,
    width: usize,
    assignment: &str,
    grid_interval: usize,
    seed: u64,
    m_weight: f64,
    distance: &str,
) -> PyResult<Py<PyDict>> {
    let (pf, a, cfg) = build_loss_inputs(
        properties,
        coords,
        height,
        width,
        assignment,
        grid_interval,
        seed,
        m_weight,
        distance,
    )?;
    let b = loss(&pf, &a, &cfg).map_err(value_err)?;
    let d = PyDict::new(py);
    d.set_item("property_term", b.property_term)?;
    d.set_item("coordinate_term", b.coordinate_term)?;
    d.set_item("total", b.total)?;
    Ok(d.into())
}

/// Analytic loss gradient with respect to the assignment probabilities,
/// flattened in membership order, plus its worst relative deviation from
/// central finite differences.
#[pyfunction]
#[pyo3(signature = (properties, coords, height, width, assignment="random",
    grid_interval=4, seed=1, m_weight=1.0, distance="l2", fd_step=1e-5))]
#[allow(clippy::too_many_arguments)]
fn clustering_loss_gradient(
    properties: Vec<Vec<f64>>,
    coords: Vec<Vec<f64>>,
    height: usize,
    width: usize,
    assignment: &str,
    grid_interval: usize,
    seed: u64,
    m_weight: f64,
    distance: &str,
    fd_step: f64,
) -> PyResult<(Vec<f64>, f64)> {
    let (pf, a, cfg) = build_loss_inputs(
        properties,
        coords,
        height,
        width,
        assignment,
        grid_interval,
        seed,
        m_weight,
        distance,
    )?;
    let (_, grad) = loss_gradient(&pf, &a, &cfg).map_err(value_err)?;
    let rel = fd_gradient_check(&pf, &a, &cfg, fd_step).map_err(value_err)?;
    Ok((grad, rel))
}

#[pymodule]
fn tinit_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyStack>()?;
    m.add_function(wrap_pyfunction!(gauss_moments, m)?)?;
    m.add_function(wrap_pyfunction!(make_consistent, m)?)?;
    m.add_function(wrap_pyfunction!(argmax_map, m)?)?;
    m.add_function(wrap_pyfunction!(boundary_metrics, m)?)?;
    m.add_function(wrap_pyfunction!(clustering_loss, m)?)?;
    m.add_function(wrap_pyfunction!(clustering_loss_gradient, m)?)?;
    Ok(())
}
