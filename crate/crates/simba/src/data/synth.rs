//! Synthetic size-imbalanced datasets with plantable structural motifs.
//!
//! Graph sizes follow a truncated discrete power law, so a small exponent
//! produces the long-tailed size distribution the pipeline is built for.
//! Labels are decided by the planted motif: even classes carry a cycle,
//! odd classes a clique, with the motif order growing every two classes.
//! The base connectivity is a random attachment tree plus noise edges, so
//! the motif is the only label-correlated structure.

use super::{Graph, GraphSet};
use crate::error::{Result, SimbaError};
use crate::tensor::Tensor;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n_graphs: usize,
    /// Exponent of the size law P(s) ~ s^-alpha; 0 gives uniform sizes.
    pub size_exponent: f64,
    pub size_range: (usize, usize),
    pub num_classes: usize,
    /// Order of the class-0 motif; class c plants a cycle (c even) or a
    /// clique (c odd) of `motif_size + c/2` nodes.
    pub motif_size: usize,
    /// Random extra edges per node on top of the spanning tree.
    pub extra_edge_factor: f64,
    /// Extra feature columns of pure Gaussian noise.
    pub feature_noise_dims: usize,
    pub feature_noise_std: f64,
    /// Fraction of structurally ambiguous graphs: they carry no motif at
    /// all, so their label is undecidable from structure, mimicking the
    /// incompatible instances real long-tailed sets contain.
    pub confuser_fraction: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_graphs: 500,
            size_exponent: 2.0,
            size_range: (5, 200),
            num_classes: 2,
            motif_size: 4,
            extra_edge_factor: 0.5,
            feature_noise_dims: 0,
            feature_noise_std: 0.0,
            confuser_fraction: 0.0,
            seed: 0,
        }
    }
}

impl SynthConfig {
    fn motif_for(&self, class: usize) -> (MotifKind, usize) {
        let kind = if class % 2 == 0 {
            MotifKind::Cycle
        } else {
            MotifKind::Clique
        };
        (kind, self.motif_size + class / 2)
    }

    fn max_motif_order(&self) -> usize {
        self.motif_size + (self.num_classes - 1) / 2
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum MotifKind {
    Cycle,
    Clique,
}

/// Cumulative table for the truncated power-law size distribution.
pub(crate) fn power_law_masses(lo: usize, hi: usize, alpha: f64) -> Vec<f64> {
    let weights: Vec<f64> = (lo..=hi).map(|s| (s as f64).powf(-alpha)).collect();
    let total: f64 = weights.iter().sum();
    weights.iter().map(|w| w / total).collect()
}

fn sample_size(cum: &[f64], lo: usize, rng: &mut impl Rng) -> usize {
    let u: f64 = rng.gen();
    match cum.binary_search_by(|c| c.partial_cmp(&u).unwrap()) {
        Ok(i) | Err(i) => lo + i.min(cum.len() - 1),
    }
}

pub fn synth_powerlaw_set(cfg: &SynthConfig) -> Result<GraphSet> {
    let (lo, hi) = cfg.size_range;
    if lo < 3 {
        return Err(SimbaError::Argument(format!(
            "size range minimum must be >= 3, got {lo}"
        )));
    }
    if hi < lo {
        return Err(SimbaError::Argument(format!(
            "empty size range [{lo}, {hi}]"
        )));
    }
    if cfg.num_classes < 2 {
        return Err(SimbaError::Argument("need at least two classes".into()));
    }
    if cfg.motif_size < 3 {
        return Err(SimbaError::Argument(
            "motif needs at least 3 nodes (a cycle is the smallest motif)".into(),
        ));
    }
    if cfg.max_motif_order() > lo {
        return Err(SimbaError::Argument(format!(
            "motif of {} nodes does not fit the minimum graph size {lo}",
            cfg.max_motif_order()
        )));
    }
    if cfg.n_graphs == 0 {
        return Err(SimbaError::Argument("n_graphs must be positive".into()));
    }

    let mut rng = ChaCha20Rng::seed_from_u64(cfg.seed);
    let masses = power_law_masses(lo, hi, cfg.size_exponent);
    let cum: Vec<f64> = masses
        .iter()
        .scan(0.0, |acc, m| {
            *acc += m;
            Some(*acc)
        })
        .collect();
    let noise = Normal::new(0.0, cfg.feature_noise_std.max(f64::MIN_POSITIVE))
        .map_err(|e| SimbaError::Argument(format!("noise std: {e}")))?;

    let mut graphs = Vec::with_capacity(cfg.n_graphs);
    for gi in 0..cfg.n_graphs {
        let n = sample_size(&cum, lo, &mut rng);
        let label = gi % cfg.num_classes;
        let (kind, order) = cfg.motif_for(label);

        let mut edges: Vec<(usize, usize)> = Vec::new();
        // Spanning tree by uniform attachment keeps every graph connected.
        for v in 1..n {
            edges.push((rng.gen_range(0..v), v));
        }
        let extra = (cfg.extra_edge_factor * n as f64).round() as usize;
        for _ in 0..extra {
            let u = rng.gen_range(0..n);
            let v = rng.gen_range(0..n);
            if u != v {
                edges.push((u, v));
            }
        }
        // Plant the label's motif on a random node subset. Confuser graphs
        // get no motif: their structure carries no label information.
        let is_confuser = rng.gen_bool(cfg.confuser_fraction.clamp(0.0, 1.0));
        if !is_confuser {
            let mut nodes: Vec<usize> = (0..n).collect();
            nodes.shuffle(&mut rng);
            let motif = &nodes[..order];
            match kind {
                MotifKind::Cycle => {
                    for i in 0..order {
                        edges.push((motif[i], motif[(i + 1) % order]));
                    }
                }
                MotifKind::Clique => {
                    for i in 0..order {
                        for j in (i + 1)..order {
                            edges.push((motif[i], motif[j]));
                        }
                    }
                }
            }
        }

        // Features: constant, normalized degree, optional noise columns.
        let mut degree = vec![0usize; n];
        let mut canon: Vec<(usize, usize)> = edges.iter().map(|&(u, v)| (u.min(v), u.max(v))).collect();
        canon.sort_unstable();
        canon.dedup();
        for &(u, v) in &canon {
            degree[u] += 1;
            if u != v {
                degree[v] += 1;
            }
        }
        let max_deg = degree.iter().copied().max().unwrap_or(0).max(1);
        let d = 2 + cfg.feature_noise_dims;
        let mut features = Tensor::zeros(n, d);
        for v in 0..n {
            let mut sample = || {
                if cfg.feature_noise_std > 0.0 {
                    noise.sample(&mut rng)
                } else {
                    0.0
                }
            };
            // Noise on the degree column averages out in the readout of a
            // large graph but stays significant for small ones, which is
            // what makes the tail the hard part of the set.
            features.set(v, 0, 1.0);
            features.set(v, 1, degree[v] as f64 / max_deg as f64 + sample());
            for c in 0..cfg.feature_noise_dims {
                let z = sample();
                features.set(v, 2 + c, z);
            }
        }
        graphs.push(Graph::new(n, edges, features, label)?);
    }
    GraphSet::new(graphs, cfg.num_classes)
}
