//! Energy-based instance re-weighting.
//!
//! The classifier's logits define a free energy per graph,
//! `E = -log sum_c exp(f_c)`; energies mix over the graphs-to-graph
//! operator (`E <- lambda E + (1-lambda) P E`), and each training graph
//! receives a weight from a cosine schedule over its energy rank. Lower
//! propagated energy (the model is more confident in the graph's
//! neighborhood) means a larger weight. Weights are constants during
//! differentiation: ranking is not differentiable and the gradient path
//! runs through the weighted likelihood only.

use crate::autodiff::{NodeId, Tape};
use crate::error::{Result, SimbaError};
use crate::g2g::G2GAbstraction;
use crate::tensor::{logsumexp, Tensor};
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::path::Path;
use std::rc::Rc;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewConfig {
    /// Mixing weight on a graph's own energy during propagation.
    pub lambda: f64,
    /// Number of propagation steps t.
    pub steps: usize,
    pub eps_min: f64,
    pub eps_max: f64,
}

impl Default for RewConfig {
    fn default() -> Self {
        RewConfig {
            lambda: 0.5,
            steps: 2,
            eps_min: 0.5,
            eps_max: 0.75,
        }
    }
}

impl RewConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda > 0.0 && self.lambda < 1.0) {
            return Err(SimbaError::Argument(format!(
                "lambda must lie in (0,1), got {}",
                self.lambda
            )));
        }
        if !(0.0 <= self.eps_min && self.eps_min <= self.eps_max) {
            return Err(SimbaError::Argument(format!(
                "weight bounds need 0 <= eps_min <= eps_max, got {} / {}",
                self.eps_min, self.eps_max
            )));
        }
        Ok(())
    }
}

/// Per-epoch energy bookkeeping: logits, initial and propagated energies,
/// ranks and the resulting training weights.
#[derive(Debug, Clone)]
pub struct EnergyState {
    pub logits: Tensor,
    pub e0: Vec<f64>,
    pub et: Vec<f64>,
    pub ranks: Vec<usize>,
    pub weights: Vec<f64>,
}

impl EnergyState {
    /// Compact one-line digest for diagnostics on aborts.
    pub fn digest(&self) -> String {
        let span = |v: &[f64]| {
            let lo = v.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            format!("[{lo:.4}, {hi:.4}]")
        };
        format!(
            "n={} e0 in {} et in {} weights in {}",
            self.e0.len(),
            span(&self.e0),
            span(&self.et),
            span(&self.weights)
        )
    }

    /// Write a `graph,e0,et,rank,weight` CSV trace.
    pub fn write_trace(&self, path: &Path, member_ids: &[usize]) -> Result<()> {
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(w, "graph,e0,et,rank,weight")?;
        for i in 0..self.e0.len() {
            writeln!(
                w,
                "{},{},{},{},{}",
                member_ids.get(i).copied().unwrap_or(i),
                self.e0[i],
                self.et[i],
                self.ranks[i],
                self.weights[i]
            )?;
        }
        Ok(())
    }
}

/// Affine classifier over propagated representations: logits = H W + b.
pub fn classify(tape: &mut Tape, h: NodeId, w: NodeId, b: NodeId) -> Result<NodeId> {
    let x = tape.matmul(h, w)?;
    tape.add_row(x, b)
}

/// The categorical distribution the logits induce (softmax rows).
pub fn predict_probs(logits: &Tensor) -> Tensor {
    logits.row_softmax()
}

/// Free energy per row: `-log sum_c exp(logit_c)`, numerically stable.
pub fn free_energy(logits: &Tensor) -> Result<Vec<f64>> {
    (0..logits.rows())
        .map(|i| logsumexp(logits.row(i)).map(|v| -v))
        .collect()
}

/// Propagate energies: t applications of
/// `E <- lambda E + (1 - lambda) P E` over the abstraction.
///
/// `lambda = 1` is accepted as the exact identity limit; values outside
/// (0, 1] are rejected.
pub fn propagate_energy(
    e0: &[f64],
    abstraction: &G2GAbstraction,
    lambda: f64,
    steps: usize,
) -> Result<Vec<f64>> {
    if e0.len() != abstraction.len() {
        return Err(SimbaError::Dimension(format!(
            "{} energies for an abstraction of {}",
            e0.len(),
            abstraction.len()
        )));
    }
    if !(lambda > 0.0 && lambda <= 1.0) {
        return Err(SimbaError::Argument(format!(
            "lambda must lie in (0,1], got {lambda}"
        )));
    }
    if lambda == 1.0 || steps == 0 {
        return Ok(e0.to_vec());
    }
    let mut cur = Tensor::from_vec(e0.len(), 1, e0.to_vec())?;
    for _ in 0..steps {
        let mixed = abstraction.norm_operator().apply(&cur)?;
        cur = cur.scale(lambda).add(&mixed.scale(1.0 - lambda))?;
    }
    Ok(cur.data().to_vec())
}

/// Rank of each entry in ascending energy order (rank 0 = smallest),
/// ties broken by ascending index.
pub fn rank_energies(et: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..et.len()).collect();
    order.sort_by(|&a, &b| et[a].partial_cmp(&et[b]).expect("finite energy").then(a.cmp(&b)));
    let mut ranks = vec![0usize; et.len()];
    for (pos, &idx) in order.iter().enumerate() {
        ranks[idx] = pos;
    }
    ranks
}

/// Cosine-annealed weights over energy ranks:
/// `eps_min + (eps_max - eps_min)/2 * (1 + cos(rank/N * pi))`.
/// The rank-0 (lowest energy) graph gets exactly `eps_max`.
pub fn cosine_anneal_weights(ranks: &[usize], n: usize, eps_min: f64, eps_max: f64) -> Vec<f64> {
    ranks
        .iter()
        .map(|&r| {
            let phase = r as f64 / n as f64 * std::f64::consts::PI;
            eps_min + 0.5 * (eps_max - eps_min) * (1.0 + phase.cos())
        })
        .collect()
}

/// Weighted negative log-likelihood (summed, not averaged):
/// `sum_i w_i (-logit[i, y_i] + log sum_c exp(logit[i, c]))`.
pub fn weighted_nll_loss(
    tape: &mut Tape,
    logits: NodeId,
    labels: &[usize],
    weights: &[f64],
) -> Result<NodeId> {
    let rows = tape.value(logits).rows();
    if labels.len() != rows || weights.len() != rows {
        return Err(SimbaError::Dimension(format!(
            "{} labels / {} weights for {} logit rows",
            labels.len(),
            weights.len(),
            rows
        )));
    }
    let lse = tape.row_logsumexp(logits)?;
    let picked = tape.pick_per_row(logits, Rc::new(labels.to_vec()))?;
    let margins = tape.sub(lse, picked)?;
    let w = Rc::new(Tensor::from_vec(rows, 1, weights.to_vec())?);
    let weighted = tape.mul_const(margins, w)?;
    Ok(tape.reduce_sum(weighted))
}

/// Full per-epoch energy computation: free energies from the logit values,
/// propagation over the abstraction, ranking and weight assignment.
pub fn compute_energy_state(
    logits: Tensor,
    abstraction: &G2GAbstraction,
    rew: &RewConfig,
) -> Result<EnergyState> {
    rew.validate()?;
    let e0 = free_energy(&logits)?;
    let et = propagate_energy(&e0, abstraction, rew.lambda, rew.steps)?;
    let ranks = rank_energies(&et);
    let weights = cosine_anneal_weights(&ranks, et.len(), rew.eps_min, rew.eps_max);
    Ok(EnergyState {
        logits,
        e0,
        et,
        ranks,
        weights,
    })
}
