//! Communication graphs, doubly stochastic mixing matrices and the spectral
//! quantities that set the consensus step-size.

use std::collections::{BTreeSet, VecDeque};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{symmetric_eigen, Matrix};

/// Tolerance for symmetry and row/column sums.
pub const STOCHASTIC_TOL: f64 = 1e-12;
/// Tolerance for spectral assertions (λ₁ = 1).
pub const SPECTRAL_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TopologyKind {
    Ring,
    Complete,
    Custom,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WeightScheme {
    /// `w_ij = 1/(1 + max(deg_i, deg_j))`, diagonal takes the remainder.
    Metropolis,
    /// `w_ij = 1/(1 + max_deg)` on every edge, diagonal takes the remainder.
    #[default]
    Uniform,
}

/// An undirected connected graph on `n` nodes. Edges are stored as `(i, j)`
/// with `i < j`; self-loops are never stored.
#[derive(Debug, Clone, PartialEq)]
pub struct Topology {
    n: usize,
    edges: BTreeSet<(usize, usize)>,
    kind: TopologyKind,
}

impl Topology {
    pub fn ring(n: usize) -> Result<Self> {
        if n < 3 {
            return Err(Error::InvalidTopology(format!("ring needs n >= 3, got {n}")));
        }
        let edges = (0..n).map(|i| ordered(i, (i + 1) % n)).collect();
        Self::checked(n, edges, TopologyKind::Ring)
    }

    pub fn complete(n: usize) -> Result<Self> {
        if n < 2 {
            return Err(Error::InvalidTopology(format!(
                "complete graph needs n >= 2, got {n}"
            )));
        }
        let edges = (0..n)
            .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
            .collect();
        Self::checked(n, edges, TopologyKind::Complete)
    }

    pub fn custom(n: usize, edges: &[(usize, usize)]) -> Result<Self> {
        if n < 2 {
            return Err(Error::InvalidTopology(format!("need n >= 2, got {n}")));
        }
        let mut set = BTreeSet::new();
        for &(i, j) in edges {
            if i >= n || j >= n {
                return Err(Error::InvalidTopology(format!(
                    "edge ({i}, {j}) out of range for n = {n}"
                )));
            }
            if i == j {
                return Err(Error::InvalidTopology(format!("self-loop on node {i}")));
            }
            set.insert(ordered(i, j));
        }
        Self::checked(n, set, TopologyKind::Custom)
    }

    fn checked(n: usize, edges: BTreeSet<(usize, usize)>, kind: TopologyKind) -> Result<Self> {
        let t = Topology { n, edges, kind };
        if !t.is_connected() {
            return Err(Error::InvalidTopology("graph is not connected".into()));
        }
        Ok(t)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn kind(&self) -> TopologyKind {
        self.kind
    }

    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.edges.iter().copied()
    }

    pub fn has_edge(&self, i: usize, j: usize) -> bool {
        i != j && self.edges.contains(&ordered(i, j))
    }

    /// Neighbors of `i` in ascending order, excluding `i`.
    pub fn neighbors(&self, i: usize) -> Vec<usize> {
        (0..self.n).filter(|&j| self.has_edge(i, j)).collect()
    }

    pub fn degree(&self, i: usize) -> usize {
        self.edges.iter().filter(|&&(a, b)| a == i || b == i).count()
    }

    pub fn is_connected(&self) -> bool {
        if self.n == 0 {
            return false;
        }
        let adj: Vec<Vec<usize>> = (0..self.n).map(|i| self.neighbors(i)).collect();
        let mut seen = vec![false; self.n];
        let mut queue = VecDeque::from([0]);
        seen[0] = true;
        while let Some(u) = queue.pop_front() {
            for &v in &adj[u] {
                if !seen[v] {
                    seen[v] = true;
                    queue.push_back(v);
                }
            }
        }
        seen.into_iter().all(|s| s)
    }

    pub fn mixing_matrix(&self, scheme: WeightScheme) -> Result<MixingMatrix> {
        let n = self.n;
        let deg: Vec<usize> = (0..n).map(|i| self.degree(i)).collect();
        let max_deg = deg.iter().copied().max().unwrap_or(0);
        let mut w = Matrix::zeros(n);
        for &(i, j) in &self.edges {
            let wij = match scheme {
                WeightScheme::Metropolis => 1.0 / (1.0 + deg[i].max(deg[j]) as f64),
                WeightScheme::Uniform => 1.0 / (1.0 + max_deg as f64),
            };
            w[(i, j)] = wij;
            w[(j, i)] = wij;
        }
        for i in 0..n {
            let off: f64 = (0..n).filter(|&j| j != i).map(|j| w[(i, j)]).sum();
            w[(i, i)] = 1.0 - off;
        }
        MixingMatrix::new(w, Some(self))
    }
}

fn ordered(i: usize, j: usize) -> (usize, usize) {
    if i < j {
        (i, j)
    } else {
        (j, i)
    }
}

/// Symmetric doubly stochastic matrix with entries in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct MixingMatrix {
    w: Matrix,
}

impl MixingMatrix {
    /// Validates `w` (and its sparsity against `topology`, when given).
    pub fn new(w: Matrix, topology: Option<&Topology>) -> Result<Self> {
        let n = w.dim();
        if n == 0 {
            return Err(Error::InvariantViolation("empty matrix".into()));
        }
        if w.as_slice().iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("mixing matrix"));
        }
        let asym = w.asymmetry();
        if asym > STOCHASTIC_TOL {
            return Err(Error::InvariantViolation(format!(
                "not symmetric (max |W_ij - W_ji| = {asym:e})"
            )));
        }
        for i in 0..n {
            let row: f64 = w.row(i).iter().sum();
            let col: f64 = (0..n).map(|k| w[(k, i)]).sum();
            if (row - 1.0).abs() > STOCHASTIC_TOL || (col - 1.0).abs() > STOCHASTIC_TOL {
                return Err(Error::InvariantViolation(format!(
                    "row/column {i} sums to {row}/{col}"
                )));
            }
        }
        if let Some(&bad) = w
            .as_slice()
            .iter()
            .find(|&&v| !(-STOCHASTIC_TOL..=1.0 + STOCHASTIC_TOL).contains(&v))
        {
            return Err(Error::InvariantViolation(format!(
                "entry {bad} outside [0, 1]"
            )));
        }
        if let Some(t) = topology {
            if t.n() != n {
                return Err(Error::InvariantViolation("size mismatch with topology".into()));
            }
            for i in 0..n {
                for j in 0..n {
                    if i != j && !t.has_edge(i, j) && w[(i, j)] != 0.0 {
                        return Err(Error::InvariantViolation(format!(
                            "W[{i}][{j}] = {} but ({i}, {j}) is not an edge",
                            w[(i, j)]
                        )));
                    }
                }
            }
        }
        Ok(MixingMatrix { w })
    }

    /// The trivial 1×1 matrix `[1]` for single-node runs.
    pub fn single_node() -> Self {
        MixingMatrix {
            w: Matrix::identity(1),
        }
    }

    pub fn n(&self) -> usize {
        self.w.dim()
    }

    pub fn weight(&self, i: usize, j: usize) -> f64 {
        self.w[(i, j)]
    }

    pub fn matrix(&self) -> &Matrix {
        &self.w
    }

    /// Off-diagonal nonzero columns of row `i`, ascending.
    pub fn neighbors(&self, i: usize) -> Vec<usize> {
        (0..self.n())
            .filter(|&j| j != i && self.w[(i, j)] != 0.0)
            .collect()
    }
}

pub fn build_ring(n: usize, scheme: WeightScheme) -> Result<MixingMatrix> {
    Topology::ring(n)?.mixing_matrix(scheme)
}

/// `W = (1/n) 11ᵀ`.
pub fn build_complete(n: usize) -> Result<MixingMatrix> {
    let t = Topology::complete(n)?;
    let w = Matrix::from_row_major(n, vec![1.0 / n as f64; n * n])?;
    MixingMatrix::new(w, Some(&t))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectralInfo {
    /// Eigenvalues sorted by absolute value, descending.
    pub eigenvalues: Vec<f64>,
    /// `1 - |λ₂|`.
    pub delta: f64,
    /// `max_i (1 - λ_i)`.
    pub beta: f64,
    pub connected: bool,
}

pub fn spectral_info(w: &MixingMatrix) -> Result<SpectralInfo> {
    spectral_info_of(w.matrix())
}

/// Spectral summary of any symmetric matrix. Rejects asymmetric input.
pub fn spectral_info_of(w: &Matrix) -> Result<SpectralInfo> {
    let asym = w.asymmetry();
    if asym > STOCHASTIC_TOL {
        return Err(Error::InvariantViolation(format!(
            "spectral_info needs a symmetric matrix (asymmetry {asym:e})"
        )));
    }
    let mut eigenvalues = symmetric_eigen(w).values;
    eigenvalues.sort_by(|a, b| b.abs().total_cmp(&a.abs()).then(b.total_cmp(a)));
    let lambda2 = eigenvalues.get(1).map_or(0.0, |v| v.abs());
    let delta = (1.0 - lambda2).clamp(0.0, 1.0);
    let beta = eigenvalues
        .iter()
        .map(|l| 1.0 - l)
        .fold(f64::NEG_INFINITY, f64::max)
        .max(0.0);
    Ok(SpectralInfo {
        connected: delta > SPECTRAL_TOL,
        eigenvalues,
        delta,
        beta,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConsensusParams {
    pub gamma: f64,
    /// Contraction parameter `γδ/8`.
    pub p: f64,
}

/// `γ = 2δω / (64δ + δ² + 16β² + 8δβ² − 16δω)`, `p = γδ/8`.
pub fn consensus_params(info: &SpectralInfo, omega: f64) -> Result<ConsensusParams> {
    consensus_params_raw(info.delta, info.beta, omega)
}

pub fn consensus_params_raw(delta: f64, beta: f64, omega: f64) -> Result<ConsensusParams> {
    if !(delta > 0.0) {
        return Err(Error::Disconnected { delta });
    }
    if delta > 1.0 + SPECTRAL_TOL {
        return Err(Error::InvariantViolation(format!("delta = {delta} > 1")));
    }
    if !(omega > 0.0 && omega <= 1.0) {
        return Err(Error::CompressionParameter(format!(
            "omega = {omega} outside (0, 1]"
        )));
    }
    if !(0.0..=2.0 + SPECTRAL_TOL).contains(&beta) {
        return Err(Error::InvariantViolation(format!("beta = {beta} outside [0, 2]")));
    }
    let b2 = beta * beta;
    let denom = 64.0 * delta + delta * delta + 16.0 * b2 + 8.0 * delta * b2 - 16.0 * delta * omega;
    let gamma = 2.0 * delta * omega / denom;
    Ok(ConsensusParams {
        gamma,
        p: gamma * delta / 8.0,
    })
}

/// Graph section of an experiment config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraphSpec {
    pub kind: TopologyKind,
    pub n: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub edges: Option<Vec<(usize, usize)>>,
    #[serde(default)]
    pub weights: WeightScheme,
}

impl GraphSpec {
    pub fn build(&self) -> Result<MixingMatrix> {
        if self.n == 1 && self.kind == TopologyKind::Complete {
            return Ok(MixingMatrix::single_node());
        }
        match self.kind {
            TopologyKind::Ring => build_ring(self.n, self.weights),
            TopologyKind::Complete => build_complete(self.n),
            TopologyKind::Custom => {
                let edges = self.edges.as_deref().ok_or_else(|| {
                    Error::Config("graph.edges is required for kind = \"custom\"".into())
                })?;
                Topology::custom(self.n, edges)?.mixing_matrix(self.weights)
            }
        }
    }
}
