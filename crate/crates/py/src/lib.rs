//! Python bindings: kernels, partitions, transference, count laws and the
//! exact sampler.

use dpp_transfer::countlaw::{self, joint_law_matrix};
use dpp_transfer::kernel::{presets, DEFAULT_DEGREE};
use dpp_transfer::sampling::DppSampler;
use dpp_transfer::tail::l_ensemble_enumerate;
use dpp_transfer::transference::{spectrum_check, transfer_partition};
use dpp_transfer::{
    CountLaw, Error, GroundSpace, Partition, PointConfiguration, RngStream, SpectralKernel, TransferredKernel,
};
use ndarray::Array2;
use pyo3::create_exception;
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::{PyDict, PyTuple};

create_exception!(pydpp, LeakageError, PyValueError, "Eigenfunction energy lost beyond the tolerance.");

fn to_py(e: Error) -> PyErr {
    match e {
        Error::Leakage { .. } | Error::Tolerance(_) => LeakageError::new_err(e.to_string()),
        Error::Validation(_) | Error::Domain(_) | Error::TooLarge(_) | Error::Json(_) => {
            PyValueError::new_err(e.to_string())
        }
        Error::Numerical(_) | Error::Io(_) => PyRuntimeError::new_err(e.to_string()),
    }
}

fn matrix_from(rows: Vec<Vec<f64>>) -> PyResult<Array2<f64>> {
    let n = rows.len();
    if n == 0 || rows.iter().any(|r| r.len() != n) {
        return Err(PyValueError::new_err("matrix must be square and nonempty"));
    }
    Ok(Array2::from_shape_fn((n, n), |(i, j)| rows[i][j]))
}

fn matrix_to(a: &Array2<f64>) -> Vec<Vec<f64>> {
    a.rows().into_iter().map(|r| r.to_vec()).collect()
}

/// A finite-rank kernel given by eigenvalues and orthonormal eigenfunctions.
#[pyclass(name = "Kernel", module = "pydpp", frozen)]
struct PyKernel {
    inner: SpectralKernel,
}

#[pymethods]
impl PyKernel {
    #[staticmethod]
    fn diag(p: Vec<f64>) -> PyResult<Self> {
        Ok(PyKernel {
            inner: presets::diag(&p).map_err(to_py)?,
        })
    }

    #[staticmethod]
    fn constant_rank1() -> Self {
        PyKernel {
            inner: presets::constant_rank1(),
        }
    }

    #[staticmethod]
    #[pyo3(signature = (rank, degree = DEFAULT_DEGREE))]
    fn fourier_projection(rank: usize, degree: usize) -> PyResult<Self> {
        Ok(PyKernel {
            inner: presets::fourier_projection(rank, degree).map_err(to_py)?,
        })
    }

    #[staticmethod]
    #[pyo3(signature = (eigenvalues, degree = DEFAULT_DEGREE))]
    fn fourier_spectral(eigenvalues: Vec<f64>, degree: usize) -> PyResult<Self> {
        Ok(PyKernel {
            inner: presets::fourier_spectral(&eigenvalues, degree).map_err(to_py)?,
        })
    }

    #[staticmethod]
    fn legendre_spectral(eigenvalues: Vec<f64>) -> PyResult<Self> {
        Ok(PyKernel {
            inner: presets::legendre_spectral(&eigenvalues).map_err(to_py)?,
        })
    }

    #[staticmethod]
    #[pyo3(signature = (n, bandwidth = 0.3))]
    fn discretized_sine(n: usize, bandwidth: f64) -> PyResult<Self> {
        Ok(PyKernel {
            inner: presets::discretized_sine(n, bandwidth).map_err(to_py)?,
        })
    }

    #[staticmethod]
    fn from_matrix(matrix: Vec<Vec<f64>>) -> PyResult<Self> {
        Ok(PyKernel {
            inner: SpectralKernel::from_matrix(&matrix_from(matrix)?).map_err(to_py)?,
        })
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        let json = serde_json_parse(text)?;
        Ok(PyKernel {
            inner: SpectralKernel::from_json(&json).map_err(to_py)?,
        })
    }

    fn to_json(&self) -> PyResult<String> {
        dpp_transfer_json(&self.inner.to_json())
    }

    #[getter]
    fn rank(&self) -> usize {
        self.inner.rank()
    }

    #[getter]
    fn eigenvalues(&self) -> Vec<f64> {
        self.inner.eigenvalues().to_vec()
    }

    #[getter]
    fn is_discrete(&self) -> bool {
        self.inner.space().is_discrete()
    }

    /// `K(x, y)`; sites for discrete kernels, reals for continuous ones.
    fn eval(&self, x: f64, y: f64) -> PyResult<f64> {
        let r = if self.inner.space().is_discrete() {
            if x < 0.0 || y < 0.0 || x.fract() != 0.0 || y.fract() != 0.0 {
                return Err(PyValueError::new_err("discrete kernels take integer sites"));
            }
            self.inner.eval(x as usize, y as usize)
        } else {
            self.inner.eval(x, y)
        };
        r.map_err(to_py)
    }

    fn matrix(&self) -> PyResult<Vec<Vec<f64>>> {
        Ok(matrix_to(&self.inner.matrix().map_err(to_py)?))
    }

    fn __repr__(&self) -> String {
        let space = match self.inner.space() {
            GroundSpace::Discrete { size } => format!("{size} sites"),
            GroundSpace::Interval { lo, hi } => format!("[{lo}, {hi})"),
        };
        format!("Kernel(rank={}, space={space})", self.inner.rank())
    }
}

fn serde_json_parse<T: for<'de> serde::Deserialize<'de>>(text: &str) -> PyResult<T> {
    serde_json::from_str(text).map_err(|e| PyValueError::new_err(e.to_string()))
}

fn dpp_transfer_json<T: serde::Serialize>(x: &T) -> PyResult<String> {
    serde_json::to_string(x).map_err(|e| PyRuntimeError::new_err(e.to_string()))
}

/// A partition of the kernel's ground space into cells.
#[pyclass(name = "Partition", module = "pydpp", frozen)]
struct PyPartition {
    inner: Partition,
}

#[pymethods]
impl PyPartition {
    /// `m` equal cells of the kernel's ground space.
    #[staticmethod]
    fn uniform(kernel: &PyKernel, m: usize) -> PyResult<Self> {
        Ok(PyPartition {
            inner: Partition::uniform(*kernel.inner.space(), m).map_err(to_py)?,
        })
    }

    #[staticmethod]
    fn singletons(n: usize) -> PyResult<Self> {
        Ok(PyPartition {
            inner: Partition::singletons(n).map_err(to_py)?,
        })
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        let json = serde_json_parse(text)?;
        Ok(PyPartition {
            inner: Partition::from_json(&json).map_err(to_py)?,
        })
    }

    fn to_json(&self) -> PyResult<String> {
        dpp_transfer_json(&self.inner.to_json())
    }

    fn refine(&self, factor: usize) -> PyResult<Self> {
        Ok(PyPartition {
            inner: self.inner.refine(factor).map_err(to_py)?,
        })
    }

    fn cells(&self) -> Vec<String> {
        self.inner.cells().iter().map(ToString::to_string).collect()
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }
}

/// The discrete kernel `Q` on blocks, one block per cell.
#[pyclass(name = "Transferred", module = "pydpp", frozen)]
struct PyTransferred {
    inner: TransferredKernel,
}

#[pymethods]
impl PyTransferred {
    #[getter]
    fn q(&self) -> Vec<Vec<f64>> {
        matrix_to(&self.inner.q)
    }

    #[getter]
    fn blocks(&self) -> Vec<(usize, usize)> {
        self.inner.blocks.clone()
    }

    #[getter]
    fn leakage(&self) -> f64 {
        self.inner.leakage
    }

    fn to_json(&self) -> PyResult<String> {
        dpp_transfer_json(&self.inner.to_json())
    }

    /// Joint law of the block counts.
    fn joint_law(&self) -> PyResult<PyCountLaw> {
        Ok(PyCountLaw {
            inner: joint_law_matrix(&self.inner.q, &self.inner.block_cells()).map_err(to_py)?,
        })
    }

    fn __len__(&self) -> usize {
        self.inner.size()
    }
}

/// A joint law of cell counts.
#[pyclass(name = "CountLaw", module = "pydpp", frozen)]
struct PyCountLaw {
    inner: CountLaw,
}

#[pymethods]
impl PyCountLaw {
    fn prob(&self, counts: Vec<usize>) -> f64 {
        self.inner.prob(&counts)
    }

    /// `{count tuple: probability}` over the atoms with nonzero mass.
    fn atoms<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        let d = PyDict::new(py);
        for (c, p) in self.inner.atoms() {
            d.set_item(PyTuple::new(py, c)?, p)?;
        }
        Ok(d)
    }

    fn marginal(&self, i: usize) -> PyResult<Self> {
        Ok(PyCountLaw {
            inner: self.inner.marginal(i).map_err(to_py)?,
        })
    }

    fn total(&self) -> PyResult<Self> {
        Ok(PyCountLaw {
            inner: self.inner.total().map_err(to_py)?,
        })
    }

    fn merge(&self, groups: Vec<Vec<usize>>) -> PyResult<Self> {
        Ok(PyCountLaw {
            inner: self.inner.merge(&groups).map_err(to_py)?,
        })
    }

    #[getter]
    fn labels(&self) -> Vec<String> {
        self.inner.labels.clone()
    }

    fn to_csv(&self) -> String {
        self.inner.to_csv()
    }
}

#[pyfunction]
#[pyo3(signature = (kernel, partition, tol = 1e-10))]
fn transfer(kernel: &PyKernel, partition: &PyPartition, tol: f64) -> PyResult<PyTransferred> {
    Ok(PyTransferred {
        inner: transfer_partition(&kernel.inner, &partition.inner, tol).map_err(to_py)?,
    })
}

#[pyfunction]
fn joint_law(kernel: &PyKernel, partition: &PyPartition) -> PyResult<PyCountLaw> {
    Ok(PyCountLaw {
        inner: countlaw::joint_law(&kernel.inner, partition.inner.cells()).map_err(to_py)?,
    })
}

#[pyfunction]
fn tv_distance(a: &PyCountLaw, b: &PyCountLaw) -> PyResult<f64> {
    countlaw::tv_distance(&a.inner, &b.inner).map_err(to_py)
}

/// Transfers `kernel` onto `partition` and compares count laws and spectra.
#[pyfunction]
#[pyo3(signature = (kernel, partition, tol = 1e-10))]
fn verify<'py>(py: Python<'py>, kernel: &PyKernel, partition: &PyPartition, tol: f64) -> PyResult<Bound<'py, PyDict>> {
    let q = transfer_partition(&kernel.inner, &partition.inner, tol).map_err(to_py)?;
    let v = countlaw::verify_transference(&kernel.inner, &partition.inner, &q).map_err(to_py)?;
    let s = spectrum_check(&kernel.inner, &q).map_err(to_py)?;
    let d = PyDict::new(py);
    d.set_item("tv", v.tv)?;
    d.set_item("bound", v.bound)?;
    d.set_item("leakage", v.leakage)?;
    d.set_item("spectrum_discrepancy", s.discrepancy)?;
    d.set_item("pass", v.pass && s.pass)?;
    Ok(d)
}

/// `n` exact draws from the DPP with the given symmetric kernel matrix.
#[pyfunction]
#[pyo3(signature = (matrix, n, seed, stream = 0))]
fn sample(py: Python<'_>, matrix: Vec<Vec<f64>>, n: usize, seed: u64, stream: u64) -> PyResult<Vec<Vec<usize>>> {
    let sampler = DppSampler::new(&matrix_from(matrix)?).map_err(to_py)?;
    let draws = py.detach(|| sampler.sample_many(RngStream::new(seed, stream), n));
    Ok(draws
        .into_iter()
        .map(|c| match c {
            PointConfiguration::Sites(s) => s,
            PointConfiguration::Points(_) => unreachable!("matrix kernels sample sites"),
        })
        .collect())
}

/// `{site tuple: probability}` for every subset, by L-ensemble enumeration.
#[pyfunction]
fn l_ensemble<'py>(py: Python<'py>, matrix: Vec<Vec<f64>>) -> PyResult<Bound<'py, PyDict>> {
    let table = l_ensemble_enumerate(&matrix_from(matrix)?).map_err(to_py)?;
    let d = PyDict::new(py);
    for (mask, p) in table.iter() {
        let sites: Vec<usize> = (0..table.sites()).filter(|s| mask >> s & 1 == 1).collect();
        d.set_item(PyTuple::new(py, sites)?, p)?;
    }
    Ok(d)
}

#[pymodule]
fn pydpp(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", dpp_transfer::VERSION)?;
    m.add("LeakageError", m.py().get_type::<LeakageError>())?;
    m.add_class::<PyKernel>()?;
    m.add_class::<PyPartition>()?;
    m.add_class::<PyTransferred>()?;
    m.add_class::<PyCountLaw>()?;
    m.add_function(wrap_pyfunction!(transfer, m)?)?;
    m.add_function(wrap_pyfunction!(joint_law, m)?)?;
    m.add_function(wrap_pyfunction!(tv_distance, m)?)?;
    m.add_function(wrap_pyfunction!(verify, m)?)?;
    m.add_function(wrap_pyfunction!(sample, m)?)?;
    m.add_function(wrap_pyfunction!(l_ensemble, m)?)?;
    Ok(())
}
