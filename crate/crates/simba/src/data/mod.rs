//! Multi-graph datasets: domain types, size statistics and splits.
//!
//! A [`GraphSet`] always carries a head/tail partition (the Pareto split of
//! the largest graphs against the rest) because every downstream metric is
//! reported per partition. Train/val/test splits are attached separately
//! once computed.

mod synth;
mod tu;

pub use synth::{synth_powerlaw_set, SynthConfig};
pub use tu::{parse_tu_dataset, write_tu_dataset};

use crate::error::{Result, SimbaError};
use crate::tensor::Tensor;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

pub const DEFAULT_HEAD_FRACTION: f64 = 0.2;

/// One graph instance: undirected edges over `node_count` nodes, an
/// `n x d` feature matrix and a class label in `[0, C)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Graph {
    node_count: usize,
    edges: Vec<(usize, usize)>,
    features: Tensor,
    label: usize,
}

impl Graph {
    /// Build a graph, normalizing the edge list: endpoints ordered within
    /// each pair, list sorted, duplicates removed.
    pub fn new(
        node_count: usize,
        edges: Vec<(usize, usize)>,
        features: Tensor,
        label: usize,
    ) -> Result<Self> {
        if node_count == 0 {
            return Err(SimbaError::Argument("graph with zero nodes".into()));
        }
        if features.rows() != node_count {
            return Err(SimbaError::Dimension(format!(
                "feature matrix has {} rows for {} nodes",
                features.rows(),
                node_count
            )));
        }
        let mut canon: Vec<(usize, usize)> = Vec::with_capacity(edges.len());
        for (u, v) in edges {
            if u >= node_count || v >= node_count {
                return Err(SimbaError::Consistency(format!(
                    "edge ({u},{v}) outside node range 0..{node_count}"
                )));
            }
            canon.push((u.min(v), u.max(v)));
        }
        canon.sort_unstable();
        canon.dedup();
        Ok(Graph {
            node_count,
            edges: canon,
            features,
            label,
        })
    }

    pub fn node_count(&self) -> usize {
        self.node_count
    }

    /// Canonical undirected edge list: each pair once, `(lo, hi)` order.
    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn features(&self) -> &Tensor {
        &self.features
    }

    pub fn label(&self) -> usize {
        self.label
    }

    pub fn feature_dim(&self) -> usize {
        self.features.cols()
    }

    /// Per-node neighbor lists; a self-loop contributes the node itself once.
    pub fn adjacency_list(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.node_count];
        for &(u, v) in &self.edges {
            if u == v {
                adj[u].push(u);
            } else {
                adj[u].push(v);
                adj[v].push(u);
            }
        }
        adj
    }

    pub fn degrees(&self) -> Vec<usize> {
        self.adjacency_list().iter().map(|n| n.len()).collect()
    }

    /// Relabel nodes by a permutation: node v of the result is node
    /// `perm[v]` of the original. Used by invariance tests.
    pub fn permuted(&self, perm: &[usize]) -> Result<Graph> {
        if perm.len() != self.node_count {
            return Err(SimbaError::Argument("permutation length mismatch".into()));
        }
        let mut inverse = vec![0usize; perm.len()];
        for (new, &old) in perm.iter().enumerate() {
            inverse[old] = new;
        }
        let edges = self
            .edges
            .iter()
            .map(|&(u, v)| (inverse[u], inverse[v]))
            .collect();
        let mut feat = Tensor::zeros(self.node_count, self.features.cols());
        for new in 0..self.node_count {
            feat.row_mut(new).copy_from_slice(self.features.row(perm[new]));
        }
        Graph::new(self.node_count, edges, feat, self.label)
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Splits {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

/// An ordered collection of graphs with class count, head/tail partition
/// and (optionally) train/val/test splits.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphSet {
    graphs: Vec<Graph>,
    num_classes: usize,
    head_ids: Vec<usize>,
    tail_ids: Vec<usize>,
    splits: Option<Splits>,
}

impl GraphSet {
    pub fn new(graphs: Vec<Graph>, num_classes: usize) -> Result<Self> {
        if graphs.is_empty() {
            return Err(SimbaError::Argument("empty graph set".into()));
        }
        let d = graphs[0].feature_dim();
        for (i, g) in graphs.iter().enumerate() {
            if g.label >= num_classes {
                return Err(SimbaError::Consistency(format!(
                    "graph {i} has label {} but the set has {num_classes} classes",
                    g.label
                )));
            }
            if g.feature_dim() != d {
                return Err(SimbaError::Consistency(format!(
                    "graph {i} has {} feature columns, expected {d}",
                    g.feature_dim()
                )));
            }
        }
        let mut set = GraphSet {
            graphs,
            num_classes,
            head_ids: Vec::new(),
            tail_ids: Vec::new(),
            splits: None,
        };
        if set.graphs.len() < 2 {
            set.tail_ids = vec![0];
        } else {
            let (head, tail) = set.head_tail_split(DEFAULT_HEAD_FRACTION)?;
            set.head_ids = head;
            set.tail_ids = tail;
        }
        Ok(set)
    }

    pub fn len(&self) -> usize {
        self.graphs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.graphs.is_empty()
    }

    pub fn graphs(&self) -> &[Graph] {
        &self.graphs
    }

    pub fn graph(&self, idx: usize) -> &Graph {
        &self.graphs[idx]
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn head_ids(&self) -> &[usize] {
        &self.head_ids
    }

    pub fn tail_ids(&self) -> &[usize] {
        &self.tail_ids
    }

    pub fn splits(&self) -> Option<&Splits> {
        self.splits.as_ref()
    }

    pub fn feature_dim(&self) -> usize {
        self.graphs[0].feature_dim()
    }

    pub fn labels(&self) -> Vec<usize> {
        self.graphs.iter().map(|g| g.label).collect()
    }

    pub fn average_node_count(&self) -> f64 {
        let total: usize = self.graphs.iter().map(|g| g.node_count).sum();
        total as f64 / self.graphs.len() as f64
    }

    pub fn average_edge_count(&self) -> f64 {
        let total: usize = self.graphs.iter().map(|g| g.edge_count()).sum();
        total as f64 / self.graphs.len() as f64
    }

    /// Pareto head/tail partition by node count.
    ///
    /// The provisional head count is `floor(fraction * N)`. Graphs tied in
    /// size across the cut all move to the tail (the head shrinks), so the
    /// partition is a function of the size multiset alone. If shrinking
    /// would empty the head (the boundary tie extends to the largest size),
    /// the cut stays at the provisional count and equal-size graphs straddle
    /// it in index order.
    pub fn head_tail_split(&self, fraction: f64) -> Result<(Vec<usize>, Vec<usize>)> {
        if !(fraction > 0.0 && fraction < 1.0) {
            return Err(SimbaError::Argument(format!(
                "head fraction must lie in (0,1), got {fraction}"
            )));
        }
        let n = self.graphs.len();
        if n < 2 {
            return Err(SimbaError::Argument(
                "cannot partition fewer than two graphs".into(),
            ));
        }
        let mut order: Vec<usize> = (0..n).collect();
        // Descending size, ascending index on ties.
        order.sort_by(|&a, &b| {
            self.graphs[b]
                .node_count
                .cmp(&self.graphs[a].node_count)
                .then(a.cmp(&b))
        });
        let provisional = ((fraction * n as f64).floor() as usize).clamp(1, n - 1);
        let size_at = |pos: usize| self.graphs[order[pos]].node_count;
        let mut t = provisional;
        while t > 0 && t < n && size_at(t - 1) == size_at(t) {
            t -= 1;
        }
        if t == 0 {
            t = provisional;
        }
        let mut head: Vec<usize> = order[..t].to_vec();
        let mut tail: Vec<usize> = order[t..].to_vec();
        head.sort_unstable();
        tail.sort_unstable();
        Ok((head, tail))
    }

    /// Recompute the stored partition with an explicit head count override.
    pub fn set_head_count(&mut self, t: usize) -> Result<()> {
        let n = self.graphs.len();
        if t == 0 || t >= n {
            return Err(SimbaError::Argument(format!(
                "head count {t} outside 1..{n}"
            )));
        }
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| {
            self.graphs[b]
                .node_count
                .cmp(&self.graphs[a].node_count)
                .then(a.cmp(&b))
        });
        self.head_ids = order[..t].to_vec();
        self.tail_ids = order[t..].to_vec();
        self.head_ids.sort_unstable();
        self.tail_ids.sort_unstable();
        Ok(())
    }

    pub fn set_head_fraction(&mut self, fraction: f64) -> Result<()> {
        let (head, tail) = self.head_tail_split(fraction)?;
        self.head_ids = head;
        self.tail_ids = tail;
        Ok(())
    }

    /// Size-imbalanced ratio: mean head size over mean tail size; >= 1 for
    /// any partition produced by [`GraphSet::head_tail_split`].
    pub fn compute_sir(&self) -> Result<f64> {
        if self.head_ids.is_empty() || self.tail_ids.is_empty() {
            return Err(SimbaError::Argument(
                "SIR needs non-empty head and tail partitions".into(),
            ));
        }
        let mean = |ids: &[usize]| {
            ids.iter().map(|&i| self.graphs[i].node_count as f64).sum::<f64>() / ids.len() as f64
        };
        Ok(mean(&self.head_ids) / mean(&self.tail_ids))
    }

    /// log2 of the SIR, the scale used when labelling controlled splits.
    pub fn sir_log2(&self) -> Result<f64> {
        Ok(self.compute_sir()?.log2())
    }

    /// Deterministic stratified split with per-class proportions within one
    /// instance of the global ratio (largest-remainder rounding per class).
    pub fn stratified_split(&self, ratios: (u32, u32, u32), seed: u64) -> Result<Splits> {
        let total_ratio = (ratios.0 + ratios.1 + ratios.2) as f64;
        if total_ratio == 0.0 {
            return Err(SimbaError::Argument("zero split ratios".into()));
        }
        let mut per_class: Vec<Vec<usize>> = vec![Vec::new(); self.num_classes];
        for (i, g) in self.graphs.iter().enumerate() {
            per_class[g.label].push(i);
        }
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let mut splits = Splits::default();
        for (class, members) in per_class.iter().enumerate() {
            if members.len() < 3 {
                return Err(SimbaError::Split(format!(
                    "class {class} has only {} instances; need at least 3",
                    members.len()
                )));
            }
            let mut shuffled = members.clone();
            shuffled.shuffle(&mut rng);
            let m = shuffled.len() as f64;
            let shares = [
                m * ratios.0 as f64 / total_ratio,
                m * ratios.1 as f64 / total_ratio,
                m * ratios.2 as f64 / total_ratio,
            ];
            let mut counts: [usize; 3] = [
                shares[0].floor() as usize,
                shares[1].floor() as usize,
                shares[2].floor() as usize,
            ];
            let mut leftover = shuffled.len() - counts.iter().sum::<usize>();
            // Largest fractional part first; ties favor train, then val.
            let mut frac_order: Vec<usize> = (0..3).collect();
            frac_order.sort_by(|&a, &b| {
                let fa = shares[a] - shares[a].floor();
                let fb = shares[b] - shares[b].floor();
                fb.partial_cmp(&fa).unwrap().then(a.cmp(&b))
            });
            for &slot in &frac_order {
                if leftover == 0 {
                    break;
                }
                counts[slot] += 1;
                leftover -= 1;
            }
            let (a, rest) = shuffled.split_at(counts[0]);
            let (b, c) = rest.split_at(counts[1]);
            splits.train.extend_from_slice(a);
            splits.val.extend_from_slice(b);
            splits.test.extend_from_slice(c);
        }
        splits.train.sort_unstable();
        splits.val.sort_unstable();
        splits.test.sort_unstable();
        Ok(splits)
    }

    pub fn assign_splits(&mut self, splits: Splits) -> Result<()> {
        let n = self.graphs.len();
        let mut seen = vec![false; n];
        for &i in splits.train.iter().chain(&splits.val).chain(&splits.test) {
            if i >= n || seen[i] {
                return Err(SimbaError::Split(format!(
                    "split index {i} out of range or duplicated"
                )));
            }
            seen[i] = true;
        }
        if seen.iter().any(|&s| !s) {
            return Err(SimbaError::Split("splits do not cover all graphs".into()));
        }
        self.splits = Some(splits);
        Ok(())
    }
}
