//! Spatial adjacency graphs and the Laplacian eigenbasis used to absorb
//! smooth unmeasured confounding.

use std::collections::BTreeSet;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;

/// Undirected simple graph over `n_nodes` spatial units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpatialGraph {
    n_nodes: usize,
    /// Sorted pairs `(a, b)` with `a < b`.
    edges: Vec<(usize, usize)>,
    centroids: Option<Vec<[f64; 2]>>,
}

impl SpatialGraph {
    /// Build from an arbitrary edge list. Self-loops are rejected, duplicates
    /// and reversed pairs collapse to a single undirected edge.
    pub fn from_edges(
        n_nodes: usize,
        edges: impl IntoIterator<Item = (usize, usize)>,
        centroids: Option<Vec<[f64; 2]>>,
    ) -> Result<Self> {
        if n_nodes == 0 {
            return Err(Error::contract("graph needs at least one node"));
        }
        let mut set = BTreeSet::new();
        for (a, b) in edges {
            if a >= n_nodes || b >= n_nodes {
                return Err(Error::contract(format!(
                    "edge ({a}, {b}) out of range for {n_nodes} nodes"
                )));
            }
            if a == b {
                return Err(Error::contract(format!("self-loop at node {a}")));
            }
            set.insert((a.min(b), a.max(b)));
        }
        if let Some(c) = &centroids {
            if c.len() != n_nodes {
                return Err(Error::contract(format!(
                    "{} centroids for {n_nodes} nodes",
                    c.len()
                )));
            }
        }
        Ok(SpatialGraph {
            n_nodes,
            edges: set.into_iter().collect(),
            centroids,
        })
    }

    pub fn n_nodes(&self) -> usize {
        self.n_nodes
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn centroids(&self) -> Option<&[[f64; 2]]> {
        self.centroids.as_deref()
    }

    pub fn degrees(&self) -> Vec<usize> {
        let mut deg = vec![0; self.n_nodes];
        for &(a, b) in &self.edges {
            deg[a] += 1;
            deg[b] += 1;
        }
        deg
    }

    pub fn mean_degree(&self) -> f64 {
        2.0 * self.edges.len() as f64 / self.n_nodes as f64
    }

    pub fn neighbours(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.n_nodes];
        for &(a, b) in &self.edges {
            adj[a].push(b);
            adj[b].push(a);
        }
        adj
    }

    /// Number of connected components.
    pub fn components(&self) -> usize {
        let mut parent: Vec<usize> = (0..self.n_nodes).collect();
        fn find(parent: &mut [usize], mut x: usize) -> usize {
            while parent[x] != x {
                parent[x] = parent[parent[x]];
                x = parent[x];
            }
            x
        }
        let mut count = self.n_nodes;
        for &(a, b) in &self.edges {
            let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
            if ra != rb {
                parent[ra.max(rb)] = ra.min(rb);
                count -= 1;
            }
        }
        count
    }

    pub fn is_connected(&self) -> bool {
        self.components() == 1
    }

    /// Induced subgraph on `nodes` (relabelled in the given order).
    pub fn subgraph(&self, nodes: &[usize]) -> Result<SpatialGraph> {
        let mut index = vec![usize::MAX; self.n_nodes];
        for (new, &old) in nodes.iter().enumerate() {
            if old >= self.n_nodes {
                return Err(Error::contract(format!("node {old} out of range")));
            }
            index[old] = new;
        }
        let edges = self.edges.iter().filter_map(|&(a, b)| {
            (index[a] != usize::MAX && index[b] != usize::MAX).then(|| (index[a], index[b]))
        });
        let centroids = self
            .centroids
            .as_ref()
            .map(|c| nodes.iter().map(|&i| c[i]).collect());
        SpatialGraph::from_edges(nodes.len(), edges, centroids)
    }
}

/// Directed k-nearest-neighbour relation under Euclidean distance,
/// symmetrised by the union of directed edges. Distance ties are broken
/// toward the lower node index.
pub fn knn_graph(centroids: &[[f64; 2]], k: usize) -> Result<SpatialGraph> {
    let n = centroids.len();
    if k == 0 {
        return Err(Error::contract("knn graph needs k >= 1"));
    }
    if k >= n {
        return Err(Error::contract(format!(
            "knn graph needs more than k = {k} points, got {n}"
        )));
    }
    if centroids.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::contract("centroids must be finite"));
    }
    let mut edges = Vec::with_capacity(n * k);
    let mut cand: Vec<(f64, usize)> = Vec::with_capacity(n);
    for (i, p) in centroids.iter().enumerate() {
        cand.clear();
        cand.extend(centroids.iter().enumerate().filter(|&(j, _)| j != i).map(|(j, q)| {
            let (dx, dy) = (p[0] - q[0], p[1] - q[1]);
            (dx * dx + dy * dy, j)
        }));
        cand.select_nth_unstable_by(k - 1, |a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        edges.extend(cand[..k].iter().map(|&(_, j)| (i, j)));
    }
    SpatialGraph::from_edges(n, edges, Some(centroids.to_vec()))
}

/// Rook (4-neighbour) lattice. Node `r * cols + c` sits at `(x, y) = (c, r)`.
pub fn grid_graph(rows: usize, cols: usize) -> Result<SpatialGraph> {
    if rows == 0 || cols == 0 {
        return Err(Error::contract("grid needs rows, cols >= 1"));
    }
    let id = |r: usize, c: usize| r * cols + c;
    let mut edges = Vec::new();
    for r in 0..rows {
        for c in 0..cols {
            if c + 1 < cols {
                edges.push((id(r, c), id(r, c + 1)));
            }
            if r + 1 < rows {
                edges.push((id(r, c), id(r + 1, c)));
            }
        }
    }
    let centroids = (0..rows)
        .flat_map(|r| (0..cols).map(move |c| [c as f64, r as f64]))
        .collect();
    SpatialGraph::from_edges(rows * cols, edges, Some(centroids))
}

/// `I - D^{-1/2} A D^{-1/2}` for the binary adjacency `A`.
pub fn normalized_laplacian(g: &SpatialGraph) -> Result<DMatrix<f64>> {
    let deg = g.degrees();
    if let Some(i) = deg.iter().position(|&d| d == 0) {
        return Err(Error::IsolatedNode(i));
    }
    let n = g.n_nodes();
    let inv_sqrt: Vec<f64> = deg.iter().map(|&d| 1.0 / (d as f64).sqrt()).collect();
    let mut q = DMatrix::identity(n, n);
    for &(a, b) in g.edges() {
        let v = -(inv_sqrt[a] * inv_sqrt[b]);
        q[(a, b)] = v;
        q[(b, a)] = v;
    }
    Ok(q)
}

/// Laplacian eigenpairs sorted by ascending eigenvalue (low frequency first).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectralBasis {
    pub eigenvalues: DVector<f64>,
    /// Orthonormal eigenvectors stored as columns.
    pub eigenvectors: DMatrix<f64>,
}

impl SpectralBasis {
    pub fn len(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn is_empty(&self) -> bool {
        self.eigenvalues.is_empty()
    }

    /// The first `k` eigenvectors as an `N × k` matrix.
    pub fn take_first(&self, k: usize) -> DMatrix<f64> {
        self.eigenvectors.columns(0, k.min(self.len())).into_owned()
    }

    /// Eigenvectors at the given (0-based) column indices.
    pub fn select(&self, indices: &[usize]) -> DMatrix<f64> {
        let n = self.eigenvectors.nrows();
        let mut out = DMatrix::zeros(n, indices.len());
        for (j, &idx) in indices.iter().enumerate() {
            out.set_column(j, &self.eigenvectors.column(idx));
        }
        out
    }

    /// Restrict every eigenvector to a subset of rows (units).
    pub fn rows(&self, rows: &[usize]) -> SpectralBasis {
        SpectralBasis {
            eigenvalues: self.eigenvalues.clone(),
            eigenvectors: self.eigenvectors.select_rows(rows),
        }
    }
}

/// Full symmetric eigendecomposition with deterministic ordering and signs.
pub fn eigenbasis(q: &DMatrix<f64>) -> Result<SpectralBasis> {
    if !q.is_square() {
        return Err(Error::contract(format!(
            "eigenbasis needs a square matrix, got {}x{}",
            q.nrows(),
            q.ncols()
        )));
    }
    let scale = linalg::max_abs(q).max(1.0);
    let asym = linalg::max_abs(&(q - q.transpose()));
    if asym > 1e-12 * scale {
        return Err(Error::contract(format!(
            "eigenbasis needs a symmetric matrix (max asymmetry {asym:e})"
        )));
    }
    let eig = nalgebra::SymmetricEigen::new(q.clone());
    let n = q.nrows();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[a]
            .total_cmp(&eig.eigenvalues[b])
            .then(a.cmp(&b))
    });
    let eigenvalues = DVector::from_iterator(n, order.iter().map(|&i| eig.eigenvalues[i]));
    let mut eigenvectors = DMatrix::zeros(n, n);
    for (j, &src) in order.iter().enumerate() {
        eigenvectors.set_column(j, &eig.eigenvectors.column(src));
    }
    linalg::fix_column_signs(&mut eigenvectors);
    Ok(SpectralBasis {
        eigenvalues,
        eigenvectors,
    })
}

/// Eigenbasis of the normalized Laplacian of a connected graph.
pub fn graph_basis(g: &SpatialGraph) -> Result<SpectralBasis> {
    let components = g.components();
    if components != 1 {
        return Err(Error::Disconnected { components });
    }
    eigenbasis(&normalized_laplacian(g)?)
}

/// Absolute spectral coefficients `|φ_jᵀ s|` of a graph signal.
pub fn smoothness_profile(basis: &SpectralBasis, signal: &[f64]) -> Result<Vec<f64>> {
    let n = basis.eigenvectors.nrows();
    if signal.len() != n {
        return Err(Error::contract(format!(
            "signal length {} does not match basis size {n}",
            signal.len()
        )));
    }
    let s = DVector::from_column_slice(signal);
    Ok((basis.eigenvectors.transpose() * s).iter().map(|c| c.abs()).collect())
}

/// Share of signal energy carried by the first `k` eigenvectors.
pub fn leading_energy_fraction(profile: &[f64], k: usize) -> f64 {
    let total: f64 = profile.iter().map(|c| c * c).sum();
    if total == 0.0 {
        return 0.0;
    }
    profile.iter().take(k).map(|c| c * c).sum::<f64>() / total
}
