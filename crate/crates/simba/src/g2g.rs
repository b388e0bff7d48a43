//! The kNN graphs-to-graph abstraction.
//!
//! Each graph becomes a node; edges link every graph to its top-k most
//! cosine-similar peers (ties broken toward the lower index), the edge set
//! is symmetrized by union and self-loops are added. Propagation applies
//! the row-normalized operator `P = D~^{-1} B~`, so one hop replaces
//! every embedding with a convex combination of itself and its neighbors.

use crate::autodiff::{LinOp, NodeId, Tape};
use crate::error::{Result, SimbaError};
use crate::tensor::Tensor;
use std::collections::BTreeSet;
use std::io::Write;
use std::path::Path;
use std::rc::Rc;

/// Pairwise cosine similarities between embedding rows.
///
/// A zero-norm row is degenerate: its similarity to every other row is
/// defined as 0 (and 1 to itself), with a warning.
pub fn cosine_similarity_matrix(embeddings: &Tensor) -> Tensor {
    let n = embeddings.rows();
    let norms: Vec<f64> = (0..n)
        .map(|i| embeddings.row(i).iter().map(|v| v * v).sum::<f64>().sqrt())
        .collect();
    if norms.iter().any(|&v| v == 0.0) {
        log::warn!("cosine similarity over zero-norm embedding rows; treating them as orthogonal");
    }
    let mut s = Tensor::zeros(n, n);
    for i in 0..n {
        s.set(i, i, 1.0);
        for j in (i + 1)..n {
            let v = if norms[i] == 0.0 || norms[j] == 0.0 {
                0.0
            } else {
                let dot: f64 = embeddings
                    .row(i)
                    .iter()
                    .zip(embeddings.row(j))
                    .map(|(a, b)| a * b)
                    .sum();
                dot / (norms[i] * norms[j])
            };
            s.set(i, j, v);
            s.set(j, i, v);
        }
    }
    s
}

/// The higher-level kNN graph over graph embeddings, with self-loops and
/// the row-normalized propagation operator.
#[derive(Debug, Clone)]
pub struct G2GAbstraction {
    member_ids: Vec<usize>,
    edges: Vec<(usize, usize)>,
    degrees: Vec<usize>,
    norm: Rc<LinOp>,
}

impl G2GAbstraction {
    /// Number of member graphs.
    pub fn len(&self) -> usize {
        self.member_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.member_ids.is_empty()
    }

    /// Graph indices (into the owning set) in abstraction order.
    pub fn member_ids(&self) -> &[usize] {
        &self.member_ids
    }

    /// Undirected edges in local indices, `(lo, hi)`, self-loops excluded.
    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    /// Row degrees of `B~` (neighbor count plus the self-loop).
    pub fn degrees(&self) -> &[usize] {
        &self.degrees
    }

    /// The row-normalized operator `P = D~^{-1} B~`.
    pub fn norm_operator(&self) -> &Rc<LinOp> {
        &self.norm
    }

    /// Dense `B~` (with self-loops); for tests and debugging.
    pub fn adjacency_dense(&self) -> Tensor {
        let n = self.len();
        let mut b = Tensor::identity(n);
        for &(i, j) in &self.edges {
            b.set(i, j, 1.0);
            b.set(j, i, 1.0);
        }
        b
    }

    /// Apply `P` `hops` times on the tape (differentiable through the
    /// features; the topology is fixed).
    pub fn propagate(&self, tape: &mut Tape, h: NodeId, hops: usize) -> Result<NodeId> {
        let mut cur = h;
        for _ in 0..hops {
            cur = tape.apply_linop(self.norm.clone(), cur)?;
        }
        Ok(cur)
    }

    /// Value-only propagation for evaluation paths.
    pub fn propagate_value(&self, h: &Tensor, hops: usize) -> Result<Tensor> {
        let mut cur = h.clone();
        for _ in 0..hops {
            cur = self.norm.apply(&cur)?;
        }
        Ok(cur)
    }

    /// Write `graph_i, graph_j, similarity` lines for inspection.
    pub fn dump_edges(&self, path: &Path, similarities: &Tensor) -> Result<()> {
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        for &(i, j) in &self.edges {
            writeln!(
                w,
                "{}, {}, {}",
                self.member_ids[i],
                self.member_ids[j],
                similarities.at(i, j)
            )?;
        }
        Ok(())
    }
}

/// Build the abstraction from a similarity matrix.
///
/// For each row, the k most similar other graphs are selected (ties by
/// lower index), the directed selections are union-symmetrized, self-loops
/// added and the operator row-normalized.
pub fn build_knn_abstraction(
    similarities: &Tensor,
    k: usize,
    member_ids: Vec<usize>,
) -> Result<G2GAbstraction> {
    let n = similarities.rows();
    if similarities.cols() != n {
        return Err(SimbaError::Dimension(format!(
            "similarity matrix is {}x{}",
            n,
            similarities.cols()
        )));
    }
    if member_ids.len() != n {
        return Err(SimbaError::Dimension(format!(
            "{} member ids for {} rows",
            member_ids.len(),
            n
        )));
    }
    if k == 0 || k >= n {
        return Err(SimbaError::Argument(format!(
            "k = {k} must satisfy 1 <= k < {n}"
        )));
    }

    let mut edge_set: BTreeSet<(usize, usize)> = BTreeSet::new();
    for i in 0..n {
        for &j in top_k_neighbors(similarities, i, k).iter() {
            edge_set.insert((i.min(j), i.max(j)));
        }
    }
    let edges: Vec<(usize, usize)> = edge_set.into_iter().collect();

    let mut degrees = vec![1usize; n]; // self-loops
    for &(i, j) in &edges {
        degrees[i] += 1;
        degrees[j] += 1;
    }
    let mut entries: Vec<(usize, usize, f64)> = Vec::with_capacity(2 * edges.len() + n);
    for (i, &d) in degrees.iter().enumerate() {
        entries.push((i, i, 1.0 / d as f64));
    }
    for &(i, j) in &edges {
        entries.push((i, j, 1.0 / degrees[i] as f64));
        entries.push((j, i, 1.0 / degrees[j] as f64));
    }
    Ok(G2GAbstraction {
        member_ids,
        edges,
        degrees,
        norm: Rc::new(LinOp::new(n, n, entries)?),
    })
}

/// Indices of the k most similar rows to `i` (excluding `i` itself),
/// ties broken by ascending index.
pub fn top_k_neighbors(similarities: &Tensor, i: usize, k: usize) -> Vec<usize> {
    let n = similarities.rows();
    let mut candidates: Vec<usize> = (0..n).filter(|&j| j != i).collect();
    candidates.sort_by(|&a, &b| {
        similarities
            .at(i, b)
            .partial_cmp(&similarities.at(i, a))
            .expect("finite similarity")
            .then(a.cmp(&b))
    });
    candidates.truncate(k);
    candidates
}
