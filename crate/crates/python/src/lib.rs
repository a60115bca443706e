//! Python bindings for `cmma_core`.

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::PyBytes;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::de::DeserializeOwned;

use cmma_core::bench::{table1_check as core_table1_check, BenchSpec};
use cmma_core::crypto::{self, Digest, OpCounter};
use cmma_core::hash_tree::{self, Proof, TreeKind};
use cmma_core::message::{self, Distribution, DistributionKind, PrioritizedSet};
use cmma_core::protocols::complexity::{self, CostParams, Outcome, Scheme};
use cmma_core::sim::{self, SimConfig, Strategy};
use cmma_core::tesla;

fn err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

/// Parses a bare enum label through its serde name, e.g. `"HHT"`.
fn label<T: DeserializeOwned>(s: &str) -> PyResult<T> {
    serde_json::from_value(serde_json::Value::String(s.to_string())).map_err(|_| err(format!("unknown label {s:?}")))
}

fn digest(b: &[u8]) -> PyResult<Digest> {
    Digest::from_slice(b).ok_or_else(|| err(format!("expected 32 bytes, got {}", b.len())))
}

/// SHA-256 of `data`.
#[pyfunction]
fn sha256<'py>(py: Python<'py>, data: &[u8]) -> Bound<'py, PyBytes> {
    PyBytes::new(py, crypto::hash(data, &mut OpCounter::new()).as_bytes())
}

/// Candidate weights of length `2**k` for a distribution label.
#[pyfunction]
#[pyo3(signature = (distribution, k, seed = 0))]
fn make_weights(distribution: &str, k: u32, seed: u64) -> PyResult<Vec<f64>> {
    let kind: DistributionKind = label(distribution)?;
    message::make_weights(&Distribution::new(kind, k).with_seed(seed)).map_err(err)
}

/// Candidate messages for one interval with their weights.
#[pyclass(name = "CandidateSet", module = "cmma", frozen)]
struct PyCandidateSet {
    inner: PrioritizedSet,
}

#[pymethods]
impl PyCandidateSet {
    #[new]
    #[pyo3(signature = (k, distribution = "NINETY_UNIFORM", seed = 0))]
    fn new(k: u32, distribution: &str, seed: u64) -> PyResult<Self> {
        let kind: DistributionKind = label(distribution)?;
        let inner = cmma_core::bench::measure::candidate_set(k, kind, seed).map_err(err)?;
        Ok(Self { inner })
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    #[getter]
    fn weights(&self) -> Vec<f64> {
        self.inner.weights().to_vec()
    }

    /// Canonical encoding of candidate `index`.
    fn encoding<'py>(&self, py: Python<'py>, index: usize) -> PyResult<Bound<'py, PyBytes>> {
        let m = self.inner.messages().get(index).ok_or_else(|| err("index out of range"))?;
        Ok(PyBytes::new(py, &m.canonical_encode().map_err(err)?))
    }
}

/// Merkle (`"MHT"`) or Huffman (`"HHT"`) tree over a candidate set.
#[pyclass(name = "AuthTree", module = "cmma", frozen)]
struct PyAuthTree {
    inner: hash_tree::AuthTree,
    build_ops: u64,
}

#[pymethods]
impl PyAuthTree {
    #[new]
    #[pyo3(signature = (candidates, kind = "HHT", seed = 0))]
    fn new(candidates: &PyCandidateSet, kind: &str, seed: u64) -> PyResult<Self> {
        let kind: TreeKind = label(kind)?;
        let mut ctr = OpCounter::new();
        let inner = hash_tree::AuthTree::build(kind, &candidates.inner, &mut ChaCha20Rng::seed_from_u64(seed), &mut ctr).map_err(err)?;
        Ok(Self { inner, build_ops: ctr.hash_ops() })
    }

    #[getter]
    fn root<'py>(&self, py: Python<'py>) -> Bound<'py, PyBytes> {
        PyBytes::new(py, self.inner.root().as_bytes())
    }

    /// Hash operations spent building the tree.
    #[getter]
    fn build_ops(&self) -> u64 {
        self.build_ops
    }

    #[getter]
    fn depths(&self) -> Vec<usize> {
        self.inner.depths()
    }

    fn expected_depth(&self, weights: Vec<f64>) -> f64 {
        self.inner.expected_depth(&weights)
    }

    /// Wire-encoded inclusion proof for candidate `index`.
    fn prove<'py>(&self, py: Python<'py>, index: usize) -> PyResult<Bound<'py, PyBytes>> {
        let p = self.inner.prove(index, &mut OpCounter::new()).map_err(err)?;
        Ok(PyBytes::new(py, &p.encode().map_err(err)?))
    }
}

/// Root recomputed from a message encoding and a wire proof, with the
/// hash operations it took.
#[pyfunction]
fn root_from_proof<'py>(py: Python<'py>, encoding: &[u8], proof: &[u8]) -> PyResult<(Bound<'py, PyBytes>, u64)> {
    let (p, used) = Proof::decode_prefix(proof).map_err(err)?;
    if used != proof.len() {
        return Err(err("trailing bytes after proof"));
    }
    let mut ctr = OpCounter::new();
    let root = hash_tree::root_from_encoded(encoding, &p, &mut ctr);
    Ok((PyBytes::new(py, root.as_bytes()), ctr.hash_ops()))
}

/// One-way key chain; `key(0)` is the commitment.
#[pyclass(name = "KeyChain", module = "cmma", frozen)]
struct PyKeyChain {
    inner: tesla::KeyChain,
}

#[pymethods]
impl PyKeyChain {
    #[new]
    fn new(seed: &[u8], length: u32) -> PyResult<Self> {
        Ok(Self { inner: tesla::KeyChain::generate(digest(seed)?, length, &mut OpCounter::new()) })
    }

    fn __len__(&self) -> usize {
        self.inner.len() as usize
    }

    #[getter]
    fn commitment<'py>(&self, py: Python<'py>) -> Bound<'py, PyBytes> {
        PyBytes::new(py, self.inner.commitment().as_bytes())
    }

    fn key<'py>(&self, py: Python<'py>, index: u32) -> PyResult<Bound<'py, PyBytes>> {
        let k = self.inner.key(index).ok_or_else(|| err("index beyond chain"))?;
        Ok(PyBytes::new(py, k.as_bytes()))
    }
}

/// Receiver side of a key chain.
#[pyclass(name = "ReceiverKeyStore", module = "cmma")]
struct PyReceiverKeyStore {
    inner: tesla::ReceiverKeyStore,
}

#[pymethods]
impl PyReceiverKeyStore {
    #[new]
    fn new(commitment: &[u8]) -> PyResult<Self> {
        Ok(Self { inner: tesla::ReceiverKeyStore::new(digest(commitment)?) })
    }

    #[getter]
    fn last_index(&self) -> u32 {
        self.inner.last_verified().0
    }

    /// Checks `key` as chain value `index`; returns (valid, hash operations).
    fn verify(&mut self, key: &[u8], index: u32) -> PyResult<(bool, u64)> {
        let mut ctr = OpCounter::new();
        let ok = self.inner.verify_disclosed_key(&digest(key)?, index, &mut ctr).map_err(err)?;
        Ok((ok, ctr.hash_ops()))
    }
}

/// Closed-form costs for a scheme name such as `"CMMA-HHT"`.
#[pyfunction]
#[pyo3(signature = (scheme, n, k, depth = None, k_u = 0, hit = true))]
fn expected_costs(scheme: &str, n: u64, k: u32, depth: Option<u64>, k_u: u32, hit: bool) -> PyResult<(u64, u64, u64, u64)> {
    let scheme: Scheme = scheme.parse().map_err(err)?;
    let p = CostParams { n, k, k_u, depth: depth.unwrap_or(u64::from(k)) };
    let c = complexity::expected(scheme, p, if hit { Outcome::Hit } else { Outcome::Miss });
    Ok((c.per_interval, c.post_message, c.subscriber, c.communication))
}

/// Runs a simulation from a JSON config; returns `(report_json, trace_jsonl)`.
#[pyfunction]
#[pyo3(signature = (config_json = "{}"))]
fn run_sim(py: Python<'_>, config_json: &str) -> PyResult<(String, String)> {
    let cfg: SimConfig = serde_json::from_str(config_json).map_err(err)?;
    let (report, trace) = py.detach(|| sim::run_sim(&cfg)).map_err(err)?;
    Ok((serde_json::to_string(&report).map_err(err)?, trace.to_jsonl()))
}

/// Runs a simulation with forgery attempts at one subscriber; returns the
/// report as JSON.
#[pyfunction]
fn inject_adversary(py: Python<'_>, config_json: &str, strategy: &str, attempts: u64) -> PyResult<String> {
    let cfg: SimConfig = serde_json::from_str(config_json).map_err(err)?;
    let strategy: Strategy = strategy.parse().map_err(err)?;
    let report = py.detach(|| sim::inject_adversary(&cfg, strategy, attempts)).map_err(err)?;
    serde_json::to_string(&report).map_err(err)
}

/// Compares measured counts with the closed forms over a grid; returns the
/// report as JSON.
#[pyfunction]
#[pyo3(signature = (spec_json = "{}"))]
fn table1_check(py: Python<'_>, spec_json: &str) -> PyResult<String> {
    let spec = BenchSpec::from_json(spec_json).map_err(err)?;
    spec.validate().map_err(err)?;
    let report = py.detach(|| core_table1_check(&spec)).map_err(err)?;
    serde_json::to_string(&report).map_err(err)
}

#[pymodule]
fn cmma(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(sha256, m)?)?;
    m.add_function(wrap_pyfunction!(make_weights, m)?)?;
    m.add_function(wrap_pyfunction!(root_from_proof, m)?)?;
    m.add_function(wrap_pyfunction!(expected_costs, m)?)?;
    m.add_function(wrap_pyfunction!(run_sim, m)?)?;
    m.add_function(wrap_pyfunction!(inject_adversary, m)?)?;
    m.add_function(wrap_pyfunction!(table1_check, m)?)?;
    m.add_class::<PyCandidateSet>()?;
    m.add_class::<PyAuthTree>()?;
    m.add_class::<PyKeyChain>()?;
    m.add_class::<PyReceiverKeyStore>()?;
    Ok(())
}
