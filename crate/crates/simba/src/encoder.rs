//! Size-invariant graph encoder.
//!
//! Per layer: a message-passing step (GIN, GCN or SAGE), then a
//! self-attentive readout that collapses the n node embeddings into one
//! fixed-length vector via `M = softmax(w2 tanh(w1 H^T))`. The per-layer
//! readouts are scaled by trainable layer weights, concatenated and pushed
//! through a two-layer perceptron, so the final embedding mixes structure
//! from every receptive-field depth and its length never depends on the
//! graph size.

use crate::autodiff::{LinOp, NodeId, Tape};
use crate::data::Graph;
use crate::error::{Result, SimbaError};
use crate::params::{glorot_uniform, ParamSet};
use crate::tensor::Tensor;
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::rc::Rc;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Backbone {
    Gin,
    Gcn,
    Sage,
}

impl std::str::FromStr for Backbone {
    type Err = SimbaError;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "gin" => Ok(Backbone::Gin),
            "gcn" => Ok(Backbone::Gcn),
            "sage" => Ok(Backbone::Sage),
            other => Err(SimbaError::Argument(format!(
                "unknown backbone {other:?} (expected gin, gcn or sage)"
            ))),
        }
    }
}

impl std::fmt::Display for Backbone {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Backbone::Gin => write!(f, "gin"),
            Backbone::Gcn => write!(f, "gcn"),
            Backbone::Sage => write!(f, "sage"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub backbone: Backbone,
    /// Number of message-passing layers L.
    pub layers: usize,
    /// Embedding width r.
    pub hidden_dim: usize,
    /// Attention projection width q.
    pub attention_dim: usize,
    /// Hidden width of the pooling perceptron.
    pub mlp_hidden: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            backbone: Backbone::Gin,
            layers: 3,
            hidden_dim: 32,
            attention_dim: 32,
            mlp_hidden: 64,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.layers == 0 || self.hidden_dim == 0 || self.attention_dim == 0 || self.mlp_hidden == 0
        {
            return Err(SimbaError::Argument(
                "encoder dimensions must all be positive".into(),
            ));
        }
        Ok(())
    }
}

/// GIN's epsilon on the self term; the standard default.
const GIN_EPS: f64 = 0.0;

#[derive(Debug, Clone)]
enum BackboneParams {
    Gin { w1: usize, b1: usize, w2: usize, b2: usize },
    Gcn { w: usize, b: usize },
    Sage { w: usize, b: usize },
}

#[derive(Debug, Clone)]
struct LayerParams {
    backbone: BackboneParams,
    att_w1: usize,
    att_w2: usize,
    omega: usize,
}

/// Indices of every encoder parameter inside a [`ParamSet`].
#[derive(Debug, Clone)]
pub struct EncoderParams {
    config: EncoderConfig,
    input_dim: usize,
    layers: Vec<LayerParams>,
    pool_w1: usize,
    pool_b1: usize,
    pool_w2: usize,
    pool_b2: usize,
}

impl EncoderParams {
    /// Register all encoder parameters. Weight matrices get Glorot init,
    /// biases start at zero and the layer weights at one.
    pub fn build(
        params: &mut ParamSet,
        config: &EncoderConfig,
        input_dim: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        config.validate()?;
        if input_dim == 0 {
            return Err(SimbaError::Argument("input feature dim is zero".into()));
        }
        let r = config.hidden_dim;
        let q = config.attention_dim;
        let mut layers = Vec::with_capacity(config.layers);
        for l in 0..config.layers {
            let d_in = if l == 0 { input_dim } else { r };
            let pre = format!("encoder.layer{l}");
            let backbone = match config.backbone {
                Backbone::Gin => BackboneParams::Gin {
                    w1: params.add(&format!("{pre}.gin.w1"), glorot_uniform(d_in, r, rng))?,
                    b1: params.add(&format!("{pre}.gin.b1"), Tensor::zeros(1, r))?,
                    w2: params.add(&format!("{pre}.gin.w2"), glorot_uniform(r, r, rng))?,
                    b2: params.add(&format!("{pre}.gin.b2"), Tensor::zeros(1, r))?,
                },
                Backbone::Gcn => BackboneParams::Gcn {
                    w: params.add(&format!("{pre}.gcn.w"), glorot_uniform(d_in, r, rng))?,
                    b: params.add(&format!("{pre}.gcn.b"), Tensor::zeros(1, r))?,
                },
                Backbone::Sage => BackboneParams::Sage {
                    w: params.add(&format!("{pre}.sage.w"), glorot_uniform(2 * d_in, r, rng))?,
                    b: params.add(&format!("{pre}.sage.b"), Tensor::zeros(1, r))?,
                },
            };
            layers.push(LayerParams {
                backbone,
                att_w1: params.add(&format!("{pre}.att.w1"), glorot_uniform(q, r, rng))?,
                att_w2: params.add(&format!("{pre}.att.w2"), glorot_uniform(1, q, rng))?,
                omega: params.add(&format!("{pre}.omega"), Tensor::scalar(1.0))?,
            });
        }
        let lr = config.layers * r;
        Ok(EncoderParams {
            config: *config,
            input_dim,
            layers,
            pool_w1: params.add("encoder.pool.w1", glorot_uniform(lr, config.mlp_hidden, rng))?,
            pool_b1: params.add("encoder.pool.b1", Tensor::zeros(1, config.mlp_hidden))?,
            pool_w2: params.add("encoder.pool.w2", glorot_uniform(config.mlp_hidden, r, rng))?,
            pool_b2: params.add("encoder.pool.b2", Tensor::zeros(1, r))?,
        })
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.config
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn bind(&self, tape: &mut Tape, params: &ParamSet) -> BoundEncoder {
        let bind_layer = |tape: &mut Tape, lp: &LayerParams| BoundLayer {
            backbone: match lp.backbone {
                BackboneParams::Gin { w1, b1, w2, b2 } => BoundBackbone::Gin {
                    w1: tape.param(params, w1),
                    b1: tape.param(params, b1),
                    w2: tape.param(params, w2),
                    b2: tape.param(params, b2),
                },
                BackboneParams::Gcn { w, b } => BoundBackbone::Gcn {
                    w: tape.param(params, w),
                    b: tape.param(params, b),
                },
                BackboneParams::Sage { w, b } => BoundBackbone::Sage {
                    w: tape.param(params, w),
                    b: tape.param(params, b),
                },
            },
            att_w1: tape.param(params, lp.att_w1),
            att_w2: tape.param(params, lp.att_w2),
            omega: tape.param(params, lp.omega),
        };
        BoundEncoder {
            layers: self.layers.iter().map(|lp| bind_layer(tape, lp)).collect(),
            pool_w1: tape.param(params, self.pool_w1),
            pool_b1: tape.param(params, self.pool_b1),
            pool_w2: tape.param(params, self.pool_w2),
            pool_b2: tape.param(params, self.pool_b2),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub enum BoundBackbone {
    Gin { w1: NodeId, b1: NodeId, w2: NodeId, b2: NodeId },
    Gcn { w: NodeId, b: NodeId },
    Sage { w: NodeId, b: NodeId },
}

/// Tape handles for one layer: backbone weights, attention pair, layer weight.
#[derive(Debug, Clone, Copy)]
pub struct BoundLayer {
    pub backbone: BoundBackbone,
    pub att_w1: NodeId,
    pub att_w2: NodeId,
    pub omega: NodeId,
}

/// Tape handles for one forward pass over any number of graphs.
#[derive(Debug, Clone)]
pub struct BoundEncoder {
    layers: Vec<BoundLayer>,
    pool_w1: NodeId,
    pool_b1: NodeId,
    pool_w2: NodeId,
    pool_b2: NodeId,
}

/// Neighbor-sum operator: (sum_{u in N(v)} x_u) per node.
pub fn neighbor_sum_op(graph: &Graph) -> LinOp {
    let n = graph.node_count();
    let mut entries = Vec::new();
    for (v, nbrs) in graph.adjacency_list().iter().enumerate() {
        for &u in nbrs {
            entries.push((v, u, 1.0));
        }
    }
    LinOp::new(n, n, entries).expect("in-range adjacency")
}

/// Neighbor-mean operator; isolated nodes get a zero row.
pub fn neighbor_mean_op(graph: &Graph) -> LinOp {
    let n = graph.node_count();
    let mut entries = Vec::new();
    for (v, nbrs) in graph.adjacency_list().iter().enumerate() {
        if nbrs.is_empty() {
            continue;
        }
        let w = 1.0 / nbrs.len() as f64;
        for &u in nbrs {
            entries.push((v, u, w));
        }
    }
    LinOp::new(n, n, entries).expect("in-range adjacency")
}

/// Symmetric-normalized adjacency with self-loops:
/// entries A~_{vu} / sqrt(d~_v d~_u) with A~ = A + I.
pub fn gcn_norm_op(graph: &Graph) -> LinOp {
    let n = graph.node_count();
    let adj = graph.adjacency_list();
    // Input self-loops are dropped; the normalization adds exactly one.
    let plain: Vec<Vec<usize>> = adj
        .iter()
        .enumerate()
        .map(|(v, nbrs)| nbrs.iter().copied().filter(|&u| u != v).collect())
        .collect();
    let deg: Vec<f64> = plain.iter().map(|nbrs| (nbrs.len() + 1) as f64).collect();
    let mut entries = Vec::new();
    for (v, nbrs) in plain.iter().enumerate() {
        entries.push((v, v, 1.0 / deg[v]));
        for &u in nbrs {
            entries.push((v, u, 1.0 / (deg[v] * deg[u]).sqrt()));
        }
    }
    LinOp::new(n, n, entries).expect("in-range adjacency")
}

/// One message-passing layer over node embeddings `h` (n x d_in).
pub fn gnn_layer_forward(
    tape: &mut Tape,
    graph: &Graph,
    h: NodeId,
    layer: &BoundLayer,
) -> Result<NodeId> {
    if tape.value(h).rows() != graph.node_count() {
        return Err(SimbaError::Dimension(format!(
            "embedding rows {} vs {} nodes",
            tape.value(h).rows(),
            graph.node_count()
        )));
    }
    match layer.backbone {
        BoundBackbone::Gin { w1, b1, w2, b2 } => {
            let agg = tape.apply_linop(Rc::new(neighbor_sum_op(graph)), h)?;
            let own = tape.scale(h, 1.0 + GIN_EPS);
            let mixed = tape.add(own, agg)?;
            let x = tape.matmul(mixed, w1)?;
            let x = tape.add_row(x, b1)?;
            let x = tape.relu(x);
            let x = tape.matmul(x, w2)?;
            tape.add_row(x, b2)
        }
        BoundBackbone::Gcn { w, b } => {
            let agg = tape.apply_linop(Rc::new(gcn_norm_op(graph)), h)?;
            let x = tape.matmul(agg, w)?;
            let x = tape.add_row(x, b)?;
            Ok(tape.relu(x))
        }
        BoundBackbone::Sage { w, b } => {
            let mean = tape.apply_linop(Rc::new(neighbor_mean_op(graph)), h)?;
            let cat = tape.concat_cols(&[h, mean])?;
            let x = tape.matmul(cat, w)?;
            let x = tape.add_row(x, b)?;
            Ok(tape.relu(x))
        }
    }
}

/// Self-attentive readout: returns the attention row `M` (1 x n, sums to 1)
/// and the pooled embedding `M H` (1 x r).
pub fn attention_readout(
    tape: &mut Tape,
    h: NodeId,
    att_w1: NodeId,
    att_w2: NodeId,
) -> Result<(NodeId, NodeId)> {
    if tape.value(h).rows() == 0 {
        return Err(SimbaError::Argument("readout over zero nodes".into()));
    }
    let ht = tape.transpose(h);
    let proj = tape.matmul(att_w1, ht)?;
    let act = tape.tanh(proj);
    let scores = tape.matmul(att_w2, act)?;
    let m = tape.row_softmax(scores);
    let readout = tape.matmul(m, h)?;
    Ok((m, readout))
}

/// Scale each layer readout by its trainable weight, concatenate and apply
/// the two-layer perceptron. Readout count must equal the layer count.
pub fn multi_level_pool(
    tape: &mut Tape,
    readouts: &[NodeId],
    enc: &BoundEncoder,
) -> Result<NodeId> {
    if readouts.len() != enc.layers.len() {
        return Err(SimbaError::Argument(format!(
            "{} readouts for {} layers",
            readouts.len(),
            enc.layers.len()
        )));
    }
    let mut scaled = Vec::with_capacity(readouts.len());
    for (r, layer) in readouts.iter().zip(&enc.layers) {
        scaled.push(tape.mul_scalar(*r, layer.omega)?);
    }
    let cat = tape.concat_cols(&scaled)?;
    let x = tape.matmul(cat, enc.pool_w1)?;
    let x = tape.add_row(x, enc.pool_b1)?;
    let x = tape.relu(x);
    let x = tape.matmul(x, enc.pool_w2)?;
    tape.add_row(x, enc.pool_b2)
}

/// Per-layer intermediates of one encoded graph: node embeddings, the
/// attention row over nodes and the pooled readout, one entry per layer.
#[derive(Debug, Clone)]
pub struct LayerState {
    pub node_embeddings: Vec<Tensor>,
    pub attention_rows: Vec<Tensor>,
    pub readouts: Vec<Tensor>,
}

fn encode_inner(
    tape: &mut Tape,
    enc: &BoundEncoder,
    graph: &Graph,
    mut trace: Option<&mut LayerState>,
) -> Result<NodeId> {
    let mut h = tape.constant(graph.features().clone());
    let mut readouts = Vec::with_capacity(enc.layers.len());
    for layer in &enc.layers {
        h = gnn_layer_forward(tape, graph, h, layer)?;
        let (m, readout) = attention_readout(tape, h, layer.att_w1, layer.att_w2)?;
        readouts.push(readout);
        if let Some(state) = trace.as_deref_mut() {
            state.node_embeddings.push(tape.value(h).clone());
            state.attention_rows.push(tape.value(m).clone());
            state.readouts.push(tape.value(readout).clone());
        }
    }
    multi_level_pool(tape, &readouts, enc)
}

/// Encode one graph to its 1 x r embedding: L message-passing layers, an
/// attentive readout after each, then multi-level pooling.
pub fn encode_graph(tape: &mut Tape, enc: &BoundEncoder, graph: &Graph) -> Result<NodeId> {
    encode_inner(tape, enc, graph, None)
}

/// Like [`encode_graph`] but also returns the per-layer intermediates.
pub fn encode_graph_traced(
    tape: &mut Tape,
    enc: &BoundEncoder,
    graph: &Graph,
) -> Result<(NodeId, LayerState)> {
    let mut state = LayerState {
        node_embeddings: Vec::new(),
        attention_rows: Vec::new(),
        readouts: Vec::new(),
    };
    let id = encode_inner(tape, enc, graph, Some(&mut state))?;
    Ok((id, state))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    fn build(
        backbone: Backbone,
        input_dim: usize,
        seed: u64,
    ) -> (ParamSet, EncoderParams) {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let cfg = EncoderConfig {
            backbone,
            layers: 2,
            hidden_dim: 6,
            attention_dim: 5,
            mlp_hidden: 8,
        };
        let mut ps = ParamSet::new();
        let enc = EncoderParams::build(&mut ps, &cfg, input_dim, &mut rng).unwrap();
        (ps, enc)
    }

    fn embed(ps: &ParamSet, enc: &EncoderParams, g: &Graph) -> Tensor {
        let mut tape = Tape::new();
        let bound = enc.bind(&mut tape, ps);
        let id = encode_graph(&mut tape, &bound, g).unwrap();
        tape.value(id).clone()
    }

    #[test]
    fn isolated_gin_node_is_mlp_of_own_features() {
        // With no neighbors the aggregation is zero, so the layer reduces to
        // MLP((1+eps) x) = MLP(x) at eps = 0.
        let (ps, enc) = build(Backbone::Gin, 3, 1);
        let g = Graph::new(1, vec![], Tensor::from_rows(&[vec![0.3, -1.0, 2.0]]).unwrap(), 0)
            .unwrap();

        let mut tape = Tape::new();
        let bound = enc.bind(&mut tape, &ps);
        let h0 = tape.constant(g.features().clone());
        let out = gnn_layer_forward(&mut tape, &g, h0, &bound.layers[0]).unwrap();

        // by-hand MLP over the raw features
        let w1 = &ps.get(ps.index_of("encoder.layer0.gin.w1").unwrap()).value;
        let w2 = &ps.get(ps.index_of("encoder.layer0.gin.w2").unwrap()).value;
        let x = g.features().matmul(w1).unwrap();
        let x = x.map(|v| v.max(0.0));
        let expected = x.matmul(w2).unwrap();
        let diff = tape.value(out).sub(&expected).unwrap().max_abs();
        assert!(diff < 1e-12, "{diff}");
    }

    #[test]
    fn identical_connected_nodes_stay_identical() {
        for backbone in [Backbone::Gin, Backbone::Gcn, Backbone::Sage] {
            let (ps, enc) = build(backbone, 2, 2);
            let feats = Tensor::from_rows(&[vec![0.5, 1.0], vec![0.5, 1.0]]).unwrap();
            let g = Graph::new(2, vec![(0, 1)], feats, 0).unwrap();
            let mut tape = Tape::new();
            let bound = enc.bind(&mut tape, &ps);
            let h0 = tape.constant(g.features().clone());
            let out = gnn_layer_forward(&mut tape, &g, h0, &bound.layers[0]).unwrap();
            let t = tape.value(out);
            for j in 0..t.cols() {
                assert!((t.at(0, j) - t.at(1, j)).abs() < 1e-12, "{backbone}");
            }
        }
    }

    #[test]
    fn gcn_path_matches_hand_normalization() {
        // 3-node path with identity features: the operator itself is
        // D~^{-1/2} A~ D~^{-1/2}, checked entry by entry.
        let g = Graph::new(3, vec![(0, 1), (1, 2)], Tensor::identity(3), 0).unwrap();
        let op = gcn_norm_op(&g).to_dense();
        let s6 = 1.0 / 6.0f64.sqrt();
        let expected = Tensor::from_rows(&[
            vec![0.5, s6, 0.0],
            vec![s6, 1.0 / 3.0, s6],
            vec![0.0, s6, 0.5],
        ])
        .unwrap();
        assert!(op.sub(&expected).unwrap().max_abs() < 1e-12);

        // Identity weights, zero bias, nonneg inputs: the full layer output
        // equals the operator applied to X (relu is inactive).
        let mut ps = ParamSet::new();
        let w = ps.add("w", Tensor::identity(3)).unwrap();
        let b = ps.add("b", Tensor::zeros(1, 3)).unwrap();
        let mut tape = Tape::new();
        let wn = tape.param(&ps, w);
        let bn = tape.param(&ps, b);
        let layer = BoundLayer {
            backbone: BoundBackbone::Gcn { w: wn, b: bn },
            att_w1: wn,
            att_w2: wn,
            omega: wn,
        };
        let h0 = tape.constant(g.features().clone());
        let out = gnn_layer_forward(&mut tape, &g, h0, &layer).unwrap();
        assert!(tape.value(out).sub(&expected).unwrap().max_abs() < 1e-12);
    }

    #[test]
    fn attention_uniform_for_identical_rows() {
        let mut tape = Tape::new();
        let h = tape.constant(
            Tensor::from_rows(&[vec![1.0, 2.0], vec![1.0, 2.0], vec![1.0, 2.0]]).unwrap(),
        );
        let w1 = tape.constant(Tensor::from_rows(&[vec![0.3, -0.2], vec![0.1, 0.4]]).unwrap());
        let w2 = tape.constant(Tensor::from_rows(&[vec![0.7, -0.5]]).unwrap());
        let (m, readout) = attention_readout(&mut tape, h, w1, w2).unwrap();
        let mv = tape.value(m);
        for j in 0..3 {
            assert!((mv.at(0, j) - 1.0 / 3.0).abs() < 1e-12);
        }
        let rv = tape.value(readout);
        assert!((rv.at(0, 0) - 1.0).abs() < 1e-12);
        assert!((rv.at(0, 1) - 2.0).abs() < 1e-12);
    }

    #[test]
    fn attention_single_node() {
        let mut tape = Tape::new();
        let h = tape.constant(Tensor::from_rows(&[vec![4.0, -1.0]]).unwrap());
        let w1 = tape.constant(Tensor::from_rows(&[vec![0.3, -0.2]]).unwrap());
        let w2 = tape.constant(Tensor::from_rows(&[vec![0.9]]).unwrap());
        let (m, readout) = attention_readout(&mut tape, h, w1, w2).unwrap();
        assert_eq!(tape.value(m).at(0, 0), 1.0);
        assert_eq!(tape.value(readout).row(0), &[4.0, -1.0]);
    }

    #[test]
    fn attention_rows_sum_to_one_and_positive() {
        let mut rng = ChaCha20Rng::seed_from_u64(5);
        for _ in 0..20 {
            let n = rng.gen_range(1..10);
            let mut tape = Tape::new();
            let h = tape.constant(crate::params::glorot_uniform(n, 4, &mut rng));
            let w1 = tape.constant(crate::params::glorot_uniform(3, 4, &mut rng));
            let w2 = tape.constant(crate::params::glorot_uniform(1, 3, &mut rng));
            let (m, _) = attention_readout(&mut tape, h, w1, w2).unwrap();
            let row = tape.value(m).row(0).to_vec();
            let sum: f64 = row.iter().sum();
            assert!((sum - 1.0).abs() < 1e-12);
            assert!(row.iter().all(|&v| v > 0.0));
        }
    }

    #[test]
    fn pool_with_zero_omegas_collapses_to_bias_pathway() {
        let (mut ps, enc) = build(Backbone::Gin, 2, 7);
        for l in 0..2 {
            let idx = ps.index_of(&format!("encoder.layer{l}.omega")).unwrap();
            ps.get_mut(idx).value = Tensor::scalar(0.0);
        }
        let g1 = Graph::new(2, vec![(0, 1)], Tensor::filled(2, 2, 0.4), 0).unwrap();
        let g2 = Graph::new(5, vec![(0, 1), (1, 2), (2, 3), (3, 4)], Tensor::filled(5, 2, -1.0), 0)
            .unwrap();
        let e1 = embed(&ps, &enc, &g1);
        let e2 = embed(&ps, &enc, &g2);
        assert!(e1.sub(&e2).unwrap().max_abs() < 1e-12);
    }

    #[test]
    fn pool_identity_configuration_returns_readout() {
        // L = 1, omega = 1, perceptron wired to identity: w1 = I (hidden =
        // r), b = 0, w2 = I. Readout entries must be nonnegative for the
        // rectifier to be inactive, so use nonneg features and weights.
        let cfg = EncoderConfig {
            backbone: Backbone::Gin,
            layers: 1,
            hidden_dim: 3,
            attention_dim: 2,
            mlp_hidden: 3,
        };
        let mut rng = ChaCha20Rng::seed_from_u64(9);
        let mut ps = ParamSet::new();
        let enc = EncoderParams::build(&mut ps, &cfg, 2, &mut rng).unwrap();
        for (name, v) in [
            ("encoder.pool.w1", Tensor::identity(3)),
            ("encoder.pool.w2", Tensor::identity(3)),
        ] {
            let idx = ps.index_of(name).unwrap();
            ps.get_mut(idx).value = v;
        }

        let g = Graph::new(2, vec![(0, 1)], Tensor::filled(2, 2, 0.8), 0).unwrap();
        let mut tape = Tape::new();
        let bound = enc.bind(&mut tape, &ps);
        let h0 = tape.constant(g.features().clone());
        let h1 = gnn_layer_forward(&mut tape, &g, h0, &bound.layers[0]).unwrap();
        let (_, readout) = attention_readout(&mut tape, h1, bound.layers[0].att_w1, bound.layers[0].att_w2)
            .unwrap();
        let pooled = multi_level_pool(&mut tape, &[readout], &bound).unwrap();

        let r = tape.value(readout).clone();
        let p = tape.value(pooled).clone();
        if r.data().iter().all(|&v| v >= 0.0) {
            assert!(p.sub(&r).unwrap().max_abs() < 1e-12);
        } else {
            // rectifier clips negative coordinates; compare clipped
            let clipped = r.map(|v| v.max(0.0));
            assert!(p.sub(&clipped).unwrap().max_abs() < 1e-12);
        }
    }

    #[test]
    fn encode_permutation_invariant() {
        use rand::seq::SliceRandom;
        let mut rng = ChaCha20Rng::seed_from_u64(11);
        for backbone in [Backbone::Gin, Backbone::Gcn, Backbone::Sage] {
            let (ps, enc) = build(backbone, 3, 13);
            for n in [2usize, 5, 9, 12] {
                let mut edges = Vec::new();
                for v in 1..n {
                    edges.push((rng.gen_range(0..v), v));
                }
                let g = Graph::new(n, edges, glorot_uniform(n, 3, &mut rng), 0).unwrap();
                let base = embed(&ps, &enc, &g);
                for _ in 0..10 {
                    let mut perm: Vec<usize> = (0..n).collect();
                    perm.shuffle(&mut rng);
                    let pg = g.permuted(&perm).unwrap();
                    let pe = embed(&ps, &enc, &pg);
                    let diff = base.sub(&pe).unwrap().max_abs();
                    assert!(diff < 1e-9, "{backbone} n={n}: {diff}");
                }
            }
        }
    }

    #[test]
    fn embedding_length_independent_of_size() {
        let (ps, enc) = build(Backbone::Gin, 2, 17);
        for n in [3usize, 40, 300] {
            let edges = (1..n).map(|v| (v - 1, v)).collect();
            let g = Graph::new(n, edges, Tensor::filled(n, 2, 0.5), 0).unwrap();
            let e = embed(&ps, &enc, &g);
            assert_eq!(e.shape(), (1, 6));
        }
    }

    #[test]
    fn traced_encoding_exposes_layer_state() {
        let (ps, enc) = build(Backbone::Gin, 2, 19);
        let g = Graph::new(4, vec![(0, 1), (1, 2), (2, 3)], Tensor::filled(4, 2, 0.3), 0).unwrap();
        let mut tape = Tape::new();
        let bound = enc.bind(&mut tape, &ps);
        let (id, state) = encode_graph_traced(&mut tape, &bound, &g).unwrap();
        assert_eq!(state.readouts.len(), 2);
        assert_eq!(state.node_embeddings.len(), 2);
        for m in &state.attention_rows {
            assert_eq!(m.shape(), (1, 4));
            let sum: f64 = m.row(0).iter().sum();
            assert!((sum - 1.0).abs() < 1e-12);
            assert!(m.row(0).iter().all(|&v| v > 0.0));
        }
        // the traced pass records the same values the plain pass computes
        let mut tape2 = Tape::new();
        let bound2 = enc.bind(&mut tape2, &ps);
        let plain = encode_graph(&mut tape2, &bound2, &g).unwrap();
        assert_eq!(tape.value(id), tape2.value(plain));
    }

    #[test]
    fn encode_deterministic() {
        let (ps, enc) = build(Backbone::Sage, 2, 23);
        let g = Graph::new(4, vec![(0, 1), (1, 2), (2, 3)], Tensor::filled(4, 2, 0.3), 0).unwrap();
        assert_eq!(embed(&ps, &enc, &g), embed(&ps, &enc, &g));
    }

    #[test]
    fn encoder_gradients_pass_finite_difference() {
        use crate::autodiff::finite_diff_check;
        use rand::seq::SliceRandom;
        let mut rng = ChaCha20Rng::seed_from_u64(31);
        let mut graphs = Vec::new();
        for _ in 0..4 {
            let n = rng.gen_range(3..7);
            let mut edges: Vec<(usize, usize)> = (1..n).map(|v| (rng.gen_range(0..v), v)).collect();
            let mut all: Vec<(usize, usize)> = (0..n)
                .flat_map(|a| ((a + 1)..n).map(move |b| (a, b)))
                .collect();
            all.shuffle(&mut rng);
            edges.extend(all.into_iter().take(2));
            graphs.push(Graph::new(n, edges, glorot_uniform(n, 3, &mut rng), 0).unwrap());
        }
        for backbone in [Backbone::Gin, Backbone::Gcn, Backbone::Sage] {
            let (mut ps, enc) = build(backbone, 3, 37);
            let err = finite_diff_check(&mut ps, 1e-5, |ps| {
                let mut tape = Tape::new();
                let bound = enc.bind(&mut tape, ps);
                let mut embeds = Vec::new();
                for g in &graphs {
                    embeds.push(encode_graph(&mut tape, &bound, g)?);
                }
                let stack = tape.concat_rows(&embeds)?;
                let sq = tape.mul_elem(stack, stack)?;
                let loss = tape.reduce_sum(sq);
                Ok((tape, loss))
            })
            .unwrap();
            assert!(err < 1e-4, "{backbone}: rel err {err}");
        }
    }
}
