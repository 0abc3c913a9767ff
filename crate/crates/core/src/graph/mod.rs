//! Graph-with-embeddings data model and adjacency normalizations.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

mod sparse;

pub use sparse::CsrMatrix;

/// Undirected, unweighted graph whose nodes carry embedding rows, class labels,
/// and optionally raw texts and publication years.
///
/// Edges are stored once per unordered pair as `(i, j)` with `i < j`, sorted.
#[derive(Debug, Clone, PartialEq)]
pub struct TrnGraph {
    features: Tensor<f32>,
    edges: Vec<(usize, usize)>,
    labels: Vec<usize>,
    num_classes: usize,
    texts: Option<Vec<String>>,
    years: Option<Vec<i64>>,
}

/// What [`TrnGraph::ingest`] dropped while canonicalizing the edge list.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct IngestReport {
    pub self_loops_removed: usize,
    pub duplicates_removed: usize,
}

impl TrnGraph {
    pub fn new(
        features: Tensor<f32>,
        edges: Vec<(usize, usize)>,
        labels: Vec<usize>,
        num_classes: usize,
    ) -> Result<Self> {
        Self::ingest(features, edges, labels, num_classes).map(|(g, _)| g)
    }

    /// Validates the parts and canonicalizes edges: pairs are oriented `i < j`,
    /// self-loops and duplicates are dropped and counted.
    pub fn ingest(
        features: Tensor<f32>,
        edges: Vec<(usize, usize)>,
        labels: Vec<usize>,
        num_classes: usize,
    ) -> Result<(Self, IngestReport)> {
        if features.rank() != 2 {
            return Err(Error::InvalidGraph(format!(
                "features must be a matrix, got shape {:?}",
                features.shape()
            )));
        }
        let n = features.rows();
        if labels.len() != n {
            return Err(Error::InvalidGraph(format!(
                "{} labels for {} feature rows",
                labels.len(),
                n
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= num_classes) {
            return Err(Error::InvalidGraph(format!(
                "label {bad} outside 0..{num_classes}"
            )));
        }
        let (edges, report) = canonical_edges(n, edges)?;
        Ok((
            Self {
                features,
                edges,
                labels,
                num_classes,
                texts: None,
                years: None,
            },
            report,
        ))
    }

    pub fn with_texts(mut self, texts: Vec<String>) -> Result<Self> {
        if texts.len() != self.n() {
            return Err(Error::InvalidGraph(format!(
                "{} texts for {} nodes",
                texts.len(),
                self.n()
            )));
        }
        self.texts = Some(texts);
        Ok(self)
    }

    pub fn with_years(mut self, years: Vec<i64>) -> Result<Self> {
        if years.len() != self.n() {
            return Err(Error::InvalidGraph(format!(
                "{} years for {} nodes",
                years.len(),
                self.n()
            )));
        }
        self.years = Some(years);
        Ok(self)
    }

    /// Same graph with a replacement feature matrix of identical shape.
    pub fn with_features(mut self, features: Tensor<f32>) -> Result<Self> {
        if features.shape() != self.features.shape() {
            return Err(Error::ShapeMismatch {
                op: "with_features",
                lhs: self.features.shape().to_vec(),
                rhs: features.shape().to_vec(),
            });
        }
        self.features = features;
        Ok(self)
    }

    /// Same nodes with a replacement edge set (canonicalized).
    pub fn with_edges(mut self, edges: Vec<(usize, usize)>) -> Result<Self> {
        self.edges = canonical_edges(self.n(), edges)?.0;
        Ok(self)
    }

    pub fn n(&self) -> usize {
        self.features.rows()
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    pub fn features(&self) -> &Tensor<f32> {
        &self.features
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn texts(&self) -> Option<&[String]> {
        self.texts.as_deref()
    }

    pub fn years(&self) -> Option<&[i64]> {
        self.years.as_deref()
    }

    /// Sorted neighbor lists.
    pub fn neighbors(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.n()];
        for &(i, j) in &self.edges {
            adj[i].push(j);
            adj[j].push(i);
        }
        adj.iter_mut().for_each(|l| l.sort_unstable());
        adj
    }

    /// 0/1 adjacency matrix without self-loops.
    pub fn adjacency(&self) -> CsrMatrix<f64> {
        let rows = self
            .neighbors()
            .into_iter()
            .map(|l| l.into_iter().map(|j| (j, 1.0)).collect())
            .collect();
        CsrMatrix::from_rows(self.n(), rows)
    }

    /// Subgraph induced by `nodes` (in the given order); node `nodes[k]` becomes `k`.
    /// Labels and class count are kept as they are.
    pub fn induced_subgraph(&self, nodes: &[usize]) -> TrnGraph {
        let mut position = vec![usize::MAX; self.n()];
        for (k, &v) in nodes.iter().enumerate() {
            position[v] = k;
        }
        let edges = self
            .edges
            .iter()
            .filter_map(|&(i, j)| {
                let (a, b) = (position[i], position[j]);
                (a != usize::MAX && b != usize::MAX).then(|| (a.min(b), a.max(b)))
            })
            .collect::<Vec<_>>();
        let mut edges = edges;
        edges.sort_unstable();
        TrnGraph {
            features: self.features.select_rows(nodes),
            edges,
            labels: nodes.iter().map(|&v| self.labels[v]).collect(),
            num_classes: self.num_classes,
            texts: self
                .texts
                .as_ref()
                .map(|t| nodes.iter().map(|&v| t[v].clone()).collect()),
            years: self
                .years
                .as_ref()
                .map(|y| nodes.iter().map(|&v| y[v]).collect()),
        }
    }

    /// Relabels node `v` as `perm[v]`.
    pub fn permuted(&self, perm: &[usize]) -> Result<TrnGraph> {
        let n = self.n();
        let mut inverse = vec![usize::MAX; n];
        for (v, &p) in perm.iter().enumerate() {
            if p >= n || inverse[p] != usize::MAX {
                return Err(Error::InvalidParameter(String::from(
                    "permutation is not a bijection",
                )));
            }
            inverse[p] = v;
        }
        if perm.len() != n {
            return Err(Error::InvalidParameter(String::from(
                "permutation length differs from node count",
            )));
        }
        let mut g = self.induced_subgraph(&inverse);
        g.labels = inverse.iter().map(|&v| self.labels[v]).collect();
        Ok(g)
    }

    /// Replaces labels (and the class count) wholesale.
    pub(crate) fn relabeled(mut self, labels: Vec<usize>, num_classes: usize) -> Self {
        debug_assert_eq!(labels.len(), self.n());
        self.labels = labels;
        self.num_classes = num_classes;
        self
    }
}

fn canonical_edges(
    n: usize,
    edges: Vec<(usize, usize)>,
) -> Result<(Vec<(usize, usize)>, IngestReport)> {
    let mut report = IngestReport::default();
    let mut out = Vec::with_capacity(edges.len());
    for (i, j) in edges {
        if i >= n || j >= n {
            return Err(Error::InvalidGraph(format!(
                "edge ({i}, {j}) references a node outside 0..{n}"
            )));
        }
        if i == j {
            report.self_loops_removed += 1;
            continue;
        }
        out.push((i.min(j), i.max(j)));
    }
    out.sort_unstable();
    let before = out.len();
    out.dedup();
    report.duplicates_removed = before - out.len();
    Ok((out, report))
}

/// Number of incident edges per node.
pub fn degree_vector(g: &TrnGraph) -> Vec<f64> {
    let mut deg = vec![0.0; g.n()];
    for &(i, j) in g.edges() {
        deg[i] += 1.0;
        deg[j] += 1.0;
    }
    deg
}

/// `D̃^(-1/2) (A + I) D̃^(-1/2)` with `D̃` the degree matrix of `A + I`.
pub fn sym_norm_adj(g: &TrnGraph) -> CsrMatrix<f64> {
    let deg: Vec<f64> = degree_vector(g).into_iter().map(|d| d + 1.0).collect();
    let rows = g
        .neighbors()
        .into_iter()
        .enumerate()
        .map(|(i, nb)| {
            let mut row: Vec<(usize, f64)> = nb
                .into_iter()
                // product order is irrelevant to the result, so entries are bitwise symmetric
                .map(|j| (j, 1.0 / libm::sqrt(deg[i] * deg[j])))
                .collect();
            row.push((i, 1.0 / deg[i]));
            row
        })
        .collect();
    CsrMatrix::from_rows(g.n(), rows)
}

/// Random-walk matrix `D^(-1) A` without self-loops. Rows of isolated nodes are zero.
pub fn row_norm_adj(g: &TrnGraph) -> CsrMatrix<f64> {
    let rows = g
        .neighbors()
        .into_iter()
        .map(|nb| {
            let w = 1.0 / nb.len() as f64;
            nb.into_iter().map(|j| (j, w)).collect()
        })
        .collect();
    CsrMatrix::from_rows(g.n(), rows)
}

/// Pairwise cosine similarity `[n × n]` in f64. Zero rows are similar to nothing (0).
pub fn cosine_similarity_matrix(feats: &Tensor<f32>) -> Tensor<f64> {
    let n = feats.rows();
    let norms: Vec<f64> = (0..n)
        .map(|i| {
            libm::sqrt(
                feats
                    .row(i)
                    .iter()
                    .map(|&v| f64::from(v) * f64::from(v))
                    .sum(),
            )
        })
        .collect();
    let mut out = vec![0.0; n * n];
    for i in 0..n {
        if norms[i] == 0.0 {
            continue;
        }
        out[i * n + i] = 1.0;
        for j in i + 1..n {
            if norms[j] == 0.0 {
                continue;
            }
            let dot: f64 = feats
                .row(i)
                .iter()
                .zip(feats.row(j))
                .map(|(&a, &b)| f64::from(a) * f64::from(b))
                .sum();
            let s = dot / (norms[i] * norms[j]);
            out[i * n + j] = s;
            out[j * n + i] = s;
        }
    }
    Tensor::new(&[n, n], out).expect("similarity shape")
}
