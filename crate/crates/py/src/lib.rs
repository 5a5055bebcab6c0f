//! Python module `agmn`: run inference on, and build training targets for,
//! arrays coming out of a deep-learning pipeline.
//!
//! Arrays are copied in (float32 widened to float64) and copied out as new
//! float64 numpy arrays. Engine errors surface as `ValueError` carrying the
//! engine's message.

use agmn_core::bp::{infer, unary_only, BeliefResult, ConvPath, InferOptions, KernelMode};
use agmn_core::potentials::{make_kernel_targets, make_unary_targets};
use agmn_core::{build_schedule, default_hand_tree, Error, KeypointSet, TensorStack, TreeGraph};
use pyo3::buffer::PyUntypedBuffer;
use pyo3::exceptions::{PyTypeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::{PyBytes, PyMemoryView};

/// Options mirroring the `agmn infer` flags.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct BridgeOptions {
    pub shared_kernels: bool,
    pub conv: ConvPath,
    pub unary_only: bool,
}

fn graph_or_default(graph_json: Option<&str>) -> agmn_core::Result<TreeGraph> {
    graph_json.map_or_else(|| Ok(default_hand_tree()), TreeGraph::from_json_str)
}

/// Same computation as `agmn infer` for one sample.
pub fn infer_stacks(
    unary: &TensorStack,
    kernels: Option<&TensorStack>,
    graph_json: Option<&str>,
    options: BridgeOptions,
) -> agmn_core::Result<BeliefResult> {
    if options.unary_only {
        return unary_only(unary);
    }
    let kernels = kernels.ok_or_else(|| Error::InvalidArgument("kernels are required unless unary_only is set".into()))?;
    let graph = graph_or_default(graph_json)?;
    let opts = InferOptions {
        kernel_mode: if options.shared_kernels { KernelMode::Shared } else { KernelMode::Directed },
        conv: options.conv,
    };
    infer(unary, kernels, &graph, opts)
}

/// Same computation as `agmn targets`.
pub fn target_stacks(
    points: Vec<[f64; 2]>,
    rows: usize,
    cols: usize,
    ksize: usize,
    sigma: f64,
    graph_json: Option<&str>,
) -> agmn_core::Result<(TensorStack, TensorStack)> {
    let kp = KeypointSet::new(points)?;
    let graph = graph_or_default(graph_json)?;
    kp.ensure_len(graph.num_nodes)?;
    let schedule = build_schedule(&graph)?;
    Ok((
        make_unary_targets(&kp, rows, cols, sigma)?,
        make_kernel_targets(&kp, &schedule, ksize, sigma)?,
    ))
}

fn engine_err(e: Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

#[derive(Clone, Copy)]
enum Endian {
    Native,
    Little,
    Big,
}

/// Element width and byte order of a float32/float64 buffer format string.
/// Parsed here rather than through `PyBuffer<T>`, which rejects explicit
/// little-endian formats such as numpy's `<f8`.
fn float_format(format: &[u8]) -> Option<(usize, Endian)> {
    let (order, code) = match format {
        [code] => (Endian::Native, *code),
        [prefix, code] => {
            let order = match prefix {
                b'@' | b'=' => Endian::Native,
                b'<' => Endian::Little,
                b'>' | b'!' => Endian::Big,
                _ => return None,
            };
            (order, *code)
        }
        _ => return None,
    };
    match code {
        b'f' => Some((4, order)),
        b'd' => Some((8, order)),
        _ => None,
    }
}

fn decode_floats(bytes: &[u8], width: usize, order: Endian) -> Vec<f64> {
    bytes
        .chunks_exact(width)
        .map(|b| match (width, order) {
            (4, Endian::Native) => f32::from_ne_bytes(b.try_into().unwrap()) as f64,
            (4, Endian::Little) => f32::from_le_bytes(b.try_into().unwrap()) as f64,
            (4, Endian::Big) => f32::from_be_bytes(b.try_into().unwrap()) as f64,
            (_, Endian::Native) => f64::from_ne_bytes(b.try_into().unwrap()),
            (_, Endian::Little) => f64::from_le_bytes(b.try_into().unwrap()),
            (_, Endian::Big) => f64::from_be_bytes(b.try_into().unwrap()),
        })
        .collect()
}

fn read_stack(obj: &Bound<'_, PyAny>, what: &str) -> PyResult<TensorStack> {
    let buffer = PyUntypedBuffer::get(obj)
        .map_err(|_| PyTypeError::new_err(format!("{what}: expected an object supporting the buffer protocol")))?;
    let Some((width, order)) = float_format(buffer.format().to_bytes()) else {
        return Err(PyTypeError::new_err(format!(
            "{what}: expected a float32 or float64 array, got format {:?}",
            buffer.format()
        )));
    };
    let shape = buffer.shape().to_vec();
    let [c, r, w] = shape[..] else {
        return Err(PyValueError::new_err(format!("{what}: expected shape (channels, rows, cols), got {shape:?}")));
    };
    if !buffer.is_c_contiguous() {
        return Err(PyValueError::new_err(format!("{what}: array must be C-contiguous")));
    }
    drop(buffer);
    // memoryview.tobytes copies the elements out in C order
    let bytes = PyMemoryView::from(obj)?.call_method0("tobytes")?;
    let data = decode_floats(bytes.cast::<PyBytes>()?.as_bytes(), width, order);
    TensorStack::from_flat(c, r, w, data).map_err(|e| PyValueError::new_err(format!("{what}: {e}")))
}

fn to_numpy<'py>(py: Python<'py>, stack: &TensorStack) -> PyResult<Bound<'py, PyAny>> {
    let (c, r, w) = stack.shape();
    let bytes: Vec<u8> = stack.to_flat().iter().flat_map(|v| v.to_le_bytes()).collect();
    let np = py.import("numpy")?;
    np.call_method1("frombuffer", (PyBytes::new(py, &bytes), "<f8"))?
        .call_method1("reshape", ((c, r, w),))?
        .call_method0("copy")
}

fn parse_conv(conv: &str) -> PyResult<ConvPath> {
    match conv {
        "direct" => Ok(ConvPath::Direct),
        "fft" => Ok(ConvPath::Fft),
        other => Err(PyValueError::new_err(format!("conv must be 'direct' or 'fft', got {other:?}"))),
    }
}

/// `(row, col, max_marginal)` for one keypoint.
type Prediction = (usize, usize, f64);

/// Marginals `(C, H, W)` float64 array and a list of `(row, col,
/// max_marginal)` per keypoint.
#[pyfunction]
#[pyo3(signature = (unary, kernels=None, graph_json=None, *, shared_kernels=false, conv="direct", unary_only=false))]
fn infer_arrays<'py>(
    py: Python<'py>,
    unary: &Bound<'py, PyAny>,
    kernels: Option<&Bound<'py, PyAny>>,
    graph_json: Option<&str>,
    shared_kernels: bool,
    conv: &str,
    unary_only: bool,
) -> PyResult<(Bound<'py, PyAny>, Vec<Prediction>)> {
    let options = BridgeOptions {
        shared_kernels,
        conv: parse_conv(conv)?,
        unary_only,
    };
    let unary = read_stack(unary, "unary")?;
    let kernels = kernels.map(|k| read_stack(k, "kernels")).transpose()?;
    let result = py
        .detach(|| infer_stacks(&unary, kernels.as_ref(), graph_json, options))
        .map_err(engine_err)?;
    let predictions = result
        .predictions
        .iter()
        .zip(&result.max_marginals)
        .map(|(p, &m)| (p.row, p.col, m))
        .collect();
    Ok((to_numpy(py, &result.marginals)?, predictions))
}

/// Gaussian unary targets `(K, rows, cols)` and directed kernel targets
/// `(2|E|, ksize, ksize)` for keypoints given as `[(x, y), ...]`.
#[pyfunction]
#[pyo3(signature = (keypoints, rows=46, cols=46, ksize=45, sigma=1.0, graph_json=None))]
fn make_targets_arrays<'py>(
    py: Python<'py>,
    keypoints: Vec<(f64, f64)>,
    rows: usize,
    cols: usize,
    ksize: usize,
    sigma: f64,
    graph_json: Option<&str>,
) -> PyResult<(Bound<'py, PyAny>, Bound<'py, PyAny>)> {
    let points = keypoints.into_iter().map(|(x, y)| [x, y]).collect();
    let (s, q) = py
        .detach(|| target_stacks(points, rows, cols, ksize, sigma, graph_json))
        .map_err(engine_err)?;
    Ok((to_numpy(py, &s)?, to_numpy(py, &q)?))
}

#[pymodule]
fn agmn(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", agmn_core::VERSION)?;
    m.add_function(wrap_pyfunction!(infer_arrays, m)?)?;
    m.add_function(wrap_pyfunction!(make_targets_arrays, m)?)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn float_formats() {
        assert!(matches!(float_format(b"d"), Some((8, Endian::Native))));
        assert!(matches!(float_format(b"<d"), Some((8, Endian::Little))));
        assert!(matches!(float_format(b">f"), Some((4, Endian::Big))));
        assert!(float_format(b"i").is_none());
        assert!(float_format(b"<q").is_none());
        assert!(float_format(b"T{d}").is_none());
    }

    #[test]
    fn decoding_respects_byte_order() {
        let le: Vec<u8> = [1.5f64, -2.0].iter().flat_map(|v| v.to_le_bytes()).collect();
        let be: Vec<u8> = [1.5f32, -2.0].iter().flat_map(|v| v.to_be_bytes()).collect();
        assert_eq!(decode_floats(&le, 8, Endian::Little), vec![1.5, -2.0]);
        assert_eq!(decode_floats(&be, 4, Endian::Big), vec![1.5, -2.0]);
    }
}
