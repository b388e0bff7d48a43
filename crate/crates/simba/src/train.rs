//! Training loop, evaluation, dataset statistics and the CMD analysis.
//!
//! One epoch is one full-batch step: encode every training graph, rebuild
//! the kNN abstraction from the fresh embeddings, propagate features,
//! derive energy-based weights, take one optimizer step on the weighted
//! likelihood. Validation accuracy (evaluated with the parameters the
//! epoch started from) drives early stopping; the reported test metrics
//! come from the best-validation checkpoint.

use crate::autodiff::Tape;
use crate::config::{Ablation, DatasetSpec, G2GConfig, RunConfig};
use crate::data::{parse_tu_dataset, synth_powerlaw_set, GraphSet};
use crate::energy::{classify, compute_energy_state, weighted_nll_loss, EnergyState};
use crate::error::{Result, SimbaError};
use crate::g2g::{build_knn_abstraction, cosine_similarity_matrix, G2GAbstraction};
use crate::metrics::{accuracy, cmd_metric, macro_f1, MetricsReport, METRICS_SCHEMA_VERSION};
use crate::model::SimbaModel;
use crate::optim::Adam;
use crate::tensor::Tensor;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::Serialize;
use std::io::Write;
use std::time::Instant;

pub fn load_dataset(spec: &DatasetSpec) -> Result<GraphSet> {
    match spec {
        DatasetSpec::Dir { path, name } => parse_tu_dataset(path, name),
        DatasetSpec::Synth(cfg) => synth_powerlaw_set(cfg),
    }
}

pub struct TrainOutcome {
    pub model: SimbaModel,
    pub report: MetricsReport,
    /// The dataset with the splits used for this run attached.
    pub set: GraphSet,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalSummary {
    pub accuracy: f64,
    pub macro_f1: f64,
    pub head_accuracy: Option<f64>,
    pub tail_accuracy: Option<f64>,
    pub predictions: Vec<usize>,
}

fn argmax_row(row: &[f64]) -> usize {
    let mut best = 0;
    for (j, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = j;
        }
    }
    best
}

/// Neighbor selection for an external embedding against train rows:
/// top-k by cosine similarity, ties toward the lower train position.
fn top_k_against(train: &Tensor, query: &[f64], k: usize) -> Vec<usize> {
    let qnorm = query.iter().map(|v| v * v).sum::<f64>().sqrt();
    let sims: Vec<f64> = (0..train.rows())
        .map(|i| {
            let row = train.row(i);
            let n = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            if n == 0.0 || qnorm == 0.0 {
                0.0
            } else {
                row.iter().zip(query).map(|(a, b)| a * b).sum::<f64>() / (n * qnorm)
            }
        })
        .collect();
    let mut order: Vec<usize> = (0..train.rows()).collect();
    order.sort_by(|&a, &b| sims[b].partial_cmp(&sims[a]).expect("finite").then(a.cmp(&b)));
    order.truncate(k);
    order
}

fn summarize(
    set: &GraphSet,
    eval_ids: &[usize],
    predictions: Vec<usize>,
) -> EvalSummary {
    let labels: Vec<usize> = eval_ids.iter().map(|&i| set.graph(i).label()).collect();
    let subset_metric = |ids: &[usize]| -> Option<f64> {
        let member: Vec<usize> = eval_ids
            .iter()
            .enumerate()
            .filter(|(_, g)| ids.contains(g))
            .map(|(pos, _)| pos)
            .collect();
        if member.is_empty() {
            return None;
        }
        let preds: Vec<usize> = member.iter().map(|&p| predictions[p]).collect();
        let labs: Vec<usize> = member.iter().map(|&p| labels[p]).collect();
        Some(accuracy(&preds, &labs))
    };
    EvalSummary {
        accuracy: accuracy(&predictions, &labels),
        macro_f1: macro_f1(&predictions, &labels, set.num_classes()),
        head_accuracy: subset_metric(set.head_ids()),
        tail_accuracy: subset_metric(set.tail_ids()),
        predictions,
    }
}

/// Evaluate a split.
///
/// With graphs-to-graph active, evaluation is inductive by default: each
/// evaluated graph picks its k nearest train graphs (plus its self-loop)
/// and mixes with the train-side propagated embeddings, so no information
/// flows between evaluated graphs. Evaluating the training split itself
/// reuses the member abstraction, matching the training-time forward pass.
pub fn evaluate(
    model: &SimbaModel,
    set: &GraphSet,
    eval_ids: &[usize],
    train_ids: &[usize],
    g2g: &G2GConfig,
    ablation: Ablation,
) -> Result<EvalSummary> {
    evaluate_with(model, set, eval_ids, train_ids, g2g, ablation, None)
}

pub(crate) fn evaluate_with(
    model: &SimbaModel,
    set: &GraphSet,
    eval_ids: &[usize],
    train_ids: &[usize],
    g2g: &G2GConfig,
    ablation: Ablation,
    train_embeddings: Option<&Tensor>,
) -> Result<EvalSummary> {
    if eval_ids.is_empty() {
        return Err(SimbaError::Argument("evaluation over an empty split".into()));
    }
    let eval_embeds = model.encode_all_value(eval_ids.iter().map(|&i| set.graph(i)))?;

    if ablation == Ablation::NoG2g {
        let logits = model.classify_value(&eval_embeds)?;
        let predictions = (0..logits.rows()).map(|i| argmax_row(logits.row(i))).collect();
        return Ok(summarize(set, eval_ids, predictions));
    }

    let owned;
    let train_embeds = match train_embeddings {
        Some(t) => t,
        None => {
            owned = model.encode_all_value(train_ids.iter().map(|&i| set.graph(i)))?;
            &owned
        }
    };

    let propagated_eval = if g2g.transductive && eval_ids != train_ids {
        // Joint abstraction over train + eval embeddings.
        let joint = Tensor::concat_rows(&[train_embeds, &eval_embeds])?;
        let sims = cosine_similarity_matrix(&joint);
        let members: Vec<usize> = train_ids.iter().chain(eval_ids).copied().collect();
        let abs = build_knn_abstraction(&sims, g2g.k, members)?;
        let prop = abs.propagate_value(&joint, g2g.hops)?;
        let mut rows = Tensor::zeros(eval_ids.len(), prop.cols());
        for i in 0..eval_ids.len() {
            rows.row_mut(i).copy_from_slice(prop.row(train_ids.len() + i));
        }
        rows
    } else if eval_ids == train_ids {
        // Member propagation: identical to the training forward pass.
        let sims = cosine_similarity_matrix(train_embeds);
        let abs = build_knn_abstraction(&sims, g2g.k, train_ids.to_vec())?;
        abs.propagate_value(train_embeds, g2g.hops)?
    } else {
        // Inductive: train-side history propagates within the train
        // abstraction; each eval graph mixes itself with its k neighbors.
        let sims = cosine_similarity_matrix(train_embeds);
        let abs = build_knn_abstraction(&sims, g2g.k, train_ids.to_vec())?;
        let mut history = vec![train_embeds.clone()];
        for h in 1..g2g.hops.max(1) {
            let prev = &history[h - 1];
            history.push(abs.propagate_value(prev, 1)?);
        }
        let r = train_embeds.cols();
        let mut rows = Tensor::zeros(eval_ids.len(), r);
        for (pos, _) in eval_ids.iter().enumerate() {
            let nbrs = top_k_against(train_embeds, eval_embeds.row(pos), g2g.k);
            let mut x: Vec<f64> = eval_embeds.row(pos).to_vec();
            for hop in 0..g2g.hops {
                let sources = &history[hop];
                let mut next = x.clone();
                for (xi, n) in next.iter_mut().enumerate() {
                    let neighbor_sum: f64 = nbrs.iter().map(|&j| sources.at(j, xi)).sum();
                    *n = (x[xi] + neighbor_sum) / (nbrs.len() + 1) as f64;
                }
                x = next;
            }
            rows.row_mut(pos).copy_from_slice(&x);
        }
        rows
    };

    let logits = model.classify_value(&propagated_eval)?;
    let predictions = (0..logits.rows()).map(|i| argmax_row(logits.row(i))).collect();
    Ok(summarize(set, eval_ids, predictions))
}

/// Run a full training job from a configuration: load data, split, train
/// with early stopping, evaluate the best checkpoint on the test split.
pub fn train(cfg: &RunConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    let start = Instant::now();
    let mut set = load_dataset(&cfg.dataset)?;
    if let Some(t) = cfg.head_count {
        set.set_head_count(t)?;
    } else {
        set.set_head_fraction(cfg.head_fraction)?;
    }
    let splits = set.stratified_split(cfg.ratios, cfg.seed)?;
    set.assign_splits(splits)?;

    let (model, mut report) = train_on_prepared(cfg, &set)?;
    report.wall_clock_secs = start.elapsed().as_secs_f64();
    Ok(TrainOutcome { model, report, set })
}

/// Training over a set whose splits are already assigned.
pub fn train_on_prepared(cfg: &RunConfig, set: &GraphSet) -> Result<(SimbaModel, MetricsReport)> {
    cfg.validate()?;
    let splits = set
        .splits()
        .ok_or_else(|| SimbaError::Split("training requires assigned splits".into()))?
        .clone();
    let train_ids = splits.train.clone();
    if train_ids.len() <= cfg.g2g.k && cfg.ablation != Ablation::NoG2g {
        return Err(SimbaError::Argument(format!(
            "k = {} needs more than k training graphs, got {}",
            cfg.g2g.k,
            train_ids.len()
        )));
    }
    let labels: Vec<usize> = train_ids.iter().map(|&i| set.graph(i).label()).collect();

    let mut model = SimbaModel::new(&cfg.encoder, set.feature_dim(), set.num_classes(), cfg.seed)?;
    let mut adam = Adam::new(cfg.optim, &model.params)?;

    let mut trace: Option<std::io::BufWriter<std::fs::File>> = match &cfg.energy_trace {
        Some(path) => {
            let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
            writeln!(w, "epoch,graph,e0,et,rank,weight")?;
            Some(w)
        }
        None => None,
    };

    let mut loss_curve = Vec::with_capacity(cfg.epochs);
    let mut val_curve = Vec::with_capacity(cfg.epochs);
    let mut best_val = f64::NEG_INFINITY;
    let mut best_epoch = 0usize;
    let mut best_params = model.params.clone();
    let mut last_energy: Option<EnergyState> = None;
    let mut last_abstraction: Option<(G2GAbstraction, Tensor)> = None;

    for epoch in 0..cfg.epochs {
        let mut tape = Tape::new();
        let bound = model.bind(&mut tape);
        let mut embeds = Vec::with_capacity(train_ids.len());
        for &i in &train_ids {
            embeds.push(crate::encoder::encode_graph(&mut tape, &bound.encoder, set.graph(i))?);
        }
        let stack = tape.concat_rows(&embeds)?;
        let raw_embeddings = tape.value(stack).clone();

        let (logits, weights) = match cfg.ablation {
            Ablation::NoG2g => {
                let logits = classify(&mut tape, stack, bound.clf_w, bound.clf_b)?;
                (logits, vec![1.0; train_ids.len()])
            }
            Ablation::NoRew | Ablation::None => {
                let sims = cosine_similarity_matrix(&raw_embeddings);
                let abs = build_knn_abstraction(&sims, cfg.g2g.k, train_ids.clone())?;
                let prop = abs.propagate(&mut tape, stack, cfg.g2g.hops)?;
                let logits = classify(&mut tape, prop, bound.clf_w, bound.clf_b)?;
                let weights = if cfg.ablation == Ablation::NoRew {
                    vec![1.0; train_ids.len()]
                } else {
                    let state =
                        compute_energy_state(tape.value(logits).clone(), &abs, &cfg.rew)?;
                    if let Some(w) = trace.as_mut() {
                        for (pos, &g) in train_ids.iter().enumerate() {
                            writeln!(
                                w,
                                "{epoch},{g},{},{},{},{}",
                                state.e0[pos], state.et[pos], state.ranks[pos], state.weights[pos]
                            )?;
                        }
                    }
                    let w = state.weights.clone();
                    last_energy = Some(state);
                    w
                };
                last_abstraction = Some((abs, sims));
                (logits, weights)
            }
        };

        let loss = weighted_nll_loss(&mut tape, logits, &labels, &weights)?;
        let loss_value = tape.value(loss).item()?;
        if !loss_value.is_finite() {
            let diag = last_energy
                .as_ref()
                .map(|s| s.digest())
                .unwrap_or_else(|| "no energy state".to_string());
            return Err(SimbaError::Numeric(format!(
                "loss diverged at epoch {epoch}: {loss_value}; last energy state: {diag}"
            )));
        }
        loss_curve.push(loss_value);

        // Validation with the parameters this epoch started from.
        let val = evaluate_with(
            &model,
            set,
            &splits.val,
            &train_ids,
            &cfg.g2g,
            cfg.ablation,
            Some(&raw_embeddings),
        )?;
        val_curve.push(val.accuracy);
        if val.accuracy > best_val {
            best_val = val.accuracy;
            best_epoch = epoch;
            best_params = model.params.clone();
        }

        model.params.zero_grads();
        tape.backward(loss)?;
        tape.write_grads(&mut model.params)?;
        adam.step(&mut model.params)?;

        if epoch - best_epoch >= cfg.patience {
            break;
        }
    }
    if let Some(w) = trace.as_mut() {
        w.flush()?;
    }
    if let (Some(path), Some((abs, sims))) = (&cfg.g2g_dump, &last_abstraction) {
        abs.dump_edges(path, sims)?;
    }

    model.params = best_params;
    let test = evaluate(&model, set, &splits.test, &train_ids, &cfg.g2g, cfg.ablation)?;

    let report = MetricsReport {
        schema_version: METRICS_SCHEMA_VERSION.to_string(),
        accuracy: test.accuracy,
        macro_f1: test.macro_f1,
        head_accuracy: test.head_accuracy,
        tail_accuracy: test.tail_accuracy,
        sir: set.compute_sir()?,
        loss_curve,
        val_accuracy_curve: val_curve,
        best_epoch,
        seed: cfg.seed,
        wall_clock_secs: 0.0,
        config: serde_json::to_value(cfg)?,
    };
    Ok((model, report))
}

#[derive(Debug, Clone, Serialize)]
pub struct DatasetStats {
    pub name: String,
    pub graphs: usize,
    pub classes: usize,
    pub avg_nodes: f64,
    pub avg_edges: f64,
    pub feature_dim: usize,
    pub head_count: usize,
    pub sir: f64,
    pub sir_log2: f64,
}

pub fn dataset_stats(set: &GraphSet, name: &str) -> Result<DatasetStats> {
    Ok(DatasetStats {
        name: name.to_string(),
        graphs: set.len(),
        classes: set.num_classes(),
        avg_nodes: set.average_node_count(),
        avg_edges: set.average_edge_count(),
        feature_dim: set.feature_dim(),
        head_count: set.head_ids().len(),
        sir: set.compute_sir()?,
        sir_log2: set.sir_log2()?,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct CmdAnalysis {
    /// CMD between head and tail embeddings under the natural (long-tailed)
    /// sampling of the dataset.
    pub cmd_longtail: f64,
    /// CMD under a size-balanced resampling.
    pub cmd_balanced: f64,
    pub moments: usize,
    pub sample_size: usize,
    pub seed: u64,
}

/// Head/tail structural-discrepancy analysis on encoder embeddings.
///
/// Draws one sample that follows the dataset's own size distribution and
/// one that is rebalanced across log-spaced size bins, splits each 20/80
/// by size, and reports the CMD between the head and tail embedding sets.
pub fn cmd_head_tail_analysis(
    model: &SimbaModel,
    set: &GraphSet,
    moments: usize,
    sample_size: usize,
    seed: u64,
) -> Result<CmdAnalysis> {
    if set.len() < 10 {
        return Err(SimbaError::Argument(
            "CMD analysis needs at least 10 graphs".into(),
        ));
    }
    let embeddings = model.encode_all_value(set.graphs().iter())?;
    let sizes: Vec<usize> = set.graphs().iter().map(|g| g.node_count()).collect();
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let m = sample_size.clamp(10, 10 * set.len());

    // Natural sampling: uniform over graphs, with replacement.
    let longtail: Vec<usize> = (0..m).map(|_| rng.gen_range(0..set.len())).collect();

    // Balanced sampling: uniform over non-empty log-spaced size bins.
    let lo = *sizes.iter().min().expect("non-empty") as f64;
    let hi = *sizes.iter().max().expect("non-empty") as f64;
    let bins = 8usize;
    let mut bin_members: Vec<Vec<usize>> = vec![Vec::new(); bins];
    for (i, &s) in sizes.iter().enumerate() {
        let pos = if hi > lo {
            let t = ((s as f64).ln() - lo.ln()) / (hi.ln() - lo.ln());
            ((t * bins as f64) as usize).min(bins - 1)
        } else {
            0
        };
        bin_members[pos].push(i);
    }
    let non_empty: Vec<&Vec<usize>> = bin_members.iter().filter(|b| !b.is_empty()).collect();
    let balanced: Vec<usize> = (0..m)
        .map(|_| {
            let bin = non_empty[rng.gen_range(0..non_empty.len())];
            bin[rng.gen_range(0..bin.len())]
        })
        .collect();

    let cmd_of_sample = |sample: &[usize]| -> Result<f64> {
        let mut order: Vec<usize> = sample.to_vec();
        order.sort_by(|&a, &b| sizes[b].cmp(&sizes[a]).then(a.cmp(&b)));
        let head_n = (order.len() / 5).max(1);
        let gather = |ids: &[usize]| -> Result<Tensor> {
            let rows: Vec<Vec<f64>> = ids.iter().map(|&i| embeddings.row(i).to_vec()).collect();
            Tensor::from_rows(&rows)
        };
        let head = gather(&order[..head_n])?;
        let tail = gather(&order[head_n..])?;
        cmd_metric(&head, &tail, moments)
    };

    Ok(CmdAnalysis {
        cmd_longtail: cmd_of_sample(&longtail)?,
        cmd_balanced: cmd_of_sample(&balanced)?,
        moments,
        sample_size: m,
        seed,
    })
}

/// Shuffle helper reserved for repeat harnesses; kept here so seeds stay
/// reproducible across entry points.
pub fn shuffled_indices(n: usize, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut ids: Vec<usize> = (0..n).collect();
    ids.shuffle(&mut rng);
    ids
}
