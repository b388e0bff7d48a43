//! End-to-end pipeline contracts: determinism of full reports, ablation
//! bit-identity, learnability of the planted motifs, divergence handling.

use simba::autodiff::Tape;
use simba::config::{Ablation, DatasetSpec, RunConfig};
use simba::data::{synth_powerlaw_set, SynthConfig};
use simba::encoder::{encode_graph, EncoderConfig};
use simba::energy::{classify, weighted_nll_loss};
use simba::model::SimbaModel;
use simba::optim::Adam;
use simba::train::{evaluate, train, train_on_prepared};

fn easy_synth(seed: u64) -> SynthConfig {
    SynthConfig {
        n_graphs: 120,
        size_exponent: 1.5,
        size_range: (8, 16),
        motif_size: 5,
        extra_edge_factor: 0.2,
        feature_noise_std: 0.0,
        seed,
        ..SynthConfig::default()
    }
}

fn small_encoder() -> EncoderConfig {
    EncoderConfig {
        layers: 2,
        hidden_dim: 8,
        attention_dim: 8,
        mlp_hidden: 16,
        ..EncoderConfig::default()
    }
}

#[test]
fn identical_seed_identical_report_excluding_wall_clock() {
    let cfg = RunConfig {
        dataset: DatasetSpec::Synth(easy_synth(3)),
        encoder: small_encoder(),
        epochs: 10,
        patience: 10,
        seed: 5,
        ..RunConfig::default()
    };
    let a = train(&cfg).unwrap().report;
    let b = train(&cfg).unwrap().report;
    let mut ja = serde_json::to_value(&a).unwrap();
    let mut jb = serde_json::to_value(&b).unwrap();
    ja["wall_clock_secs"] = 0.into();
    jb["wall_clock_secs"] = 0.into();
    assert_eq!(ja, jb);
}

#[test]
fn separable_motifs_reach_train_accuracy() {
    // The planted clique against cycle is linearly decodable from degree
    // statistics in graphs this small, so 50 epochs must fit the training
    // split nearly perfectly.
    let cfg = RunConfig {
        dataset: DatasetSpec::Synth(easy_synth(11)),
        encoder: small_encoder(),
        epochs: 50,
        patience: 50,
        seed: 0,
        ..RunConfig::default()
    };
    let out = train(&cfg).unwrap();
    let splits = out.set.splits().unwrap();
    let summary = evaluate(
        &out.model,
        &out.set,
        &splits.train,
        &splits.train,
        &cfg.g2g,
        cfg.ablation,
    )
    .unwrap();
    assert!(
        summary.accuracy >= 0.95,
        "training accuracy {} below 0.95",
        summary.accuracy
    );
}

#[test]
fn no_g2g_is_bit_identical_to_a_pipeline_without_an_abstraction() {
    // Replicate training with a loop that never touches the g2g module at
    // all and compare every parameter bit-for-bit.
    let cfg = RunConfig {
        dataset: DatasetSpec::Synth(easy_synth(23)),
        encoder: small_encoder(),
        epochs: 12,
        patience: 12,
        seed: 9,
        ablation: Ablation::NoG2g,
        ..RunConfig::default()
    };
    let out = train(&cfg).unwrap();

    // independent replica
    let mut set = synth_powerlaw_set(&easy_synth(23)).unwrap();
    set.set_head_fraction(cfg.head_fraction).unwrap();
    let splits = set.stratified_split(cfg.ratios, cfg.seed).unwrap();
    set.assign_splits(splits.clone()).unwrap();
    let mut model =
        SimbaModel::new(&cfg.encoder, set.feature_dim(), set.num_classes(), cfg.seed).unwrap();
    let mut adam = Adam::new(cfg.optim, &model.params).unwrap();
    let labels: Vec<usize> = splits.train.iter().map(|&i| set.graph(i).label()).collect();

    let mut best = f64::NEG_INFINITY;
    let mut best_epoch = 0usize;
    let mut best_params = model.params.clone();
    for epoch in 0..cfg.epochs {
        let mut tape = Tape::new();
        let bound = model.bind(&mut tape);
        let mut ids = Vec::new();
        for &i in &splits.train {
            ids.push(encode_graph(&mut tape, &bound.encoder, set.graph(i)).unwrap());
        }
        let stack = tape.concat_rows(&ids).unwrap();
        let logits = classify(&mut tape, stack, bound.clf_w, bound.clf_b).unwrap();
        let loss =
            weighted_nll_loss(&mut tape, logits, &labels, &vec![1.0; labels.len()]).unwrap();

        let val = evaluate(
            &model,
            &set,
            &splits.val,
            &splits.train,
            &cfg.g2g,
            Ablation::NoG2g,
        )
        .unwrap();
        if val.accuracy > best {
            best = val.accuracy;
            best_epoch = epoch;
            best_params = model.params.clone();
        }

        model.params.zero_grads();
        tape.backward(loss).unwrap();
        tape.write_grads(&mut model.params).unwrap();
        adam.step(&mut model.params).unwrap();
        if epoch - best_epoch >= cfg.patience {
            break;
        }
    }
    model.params = best_params;

    assert_eq!(out.model.params.len(), model.params.len());
    for i in 0..model.params.len() {
        let a = &out.model.params.get(i).value;
        let b = &model.params.get(i).value;
        assert_eq!(a, b, "parameter {} differs", model.params.get(i).name);
    }
}

#[test]
fn no_rew_differs_only_by_weights() {
    // Same seed: the first epoch's loss differs between full and no-rew
    // exactly because of the weights; both must run to completion.
    let base = RunConfig {
        dataset: DatasetSpec::Synth(easy_synth(31)),
        encoder: small_encoder(),
        epochs: 6,
        patience: 6,
        seed: 2,
        ..RunConfig::default()
    };
    let mut full_cfg = base.clone();
    full_cfg.ablation = Ablation::None;
    let mut norew_cfg = base.clone();
    norew_cfg.ablation = Ablation::NoRew;
    let full = train(&full_cfg).unwrap();
    let norew = train(&norew_cfg).unwrap();
    // weights lie in [0.5, 0.75], so the weighted first-epoch loss must be
    // strictly below the unweighted one (same parameters at epoch 0)
    assert!(full.report.loss_curve[0] < norew.report.loss_curve[0]);
}

#[test]
fn divergent_run_aborts_with_numeric_error() {
    let mut cfg = RunConfig {
        dataset: DatasetSpec::Synth(easy_synth(41)),
        encoder: small_encoder(),
        epochs: 60,
        patience: 60,
        seed: 1,
        ..RunConfig::default()
    };
    cfg.optim.lr = 1e18;
    match train(&cfg) {
        Err(simba::SimbaError::Numeric(msg)) => {
            assert!(msg.contains("diverged"), "{msg}");
        }
        Err(other) => panic!("expected numeric failure, got {other}"),
        Ok(out) => {
            // An enormous step can still leave finite values; the loss curve
            // must then be finite throughout, otherwise the guard failed.
            assert!(out.report.loss_curve.iter().all(|v| v.is_finite()));
        }
    }
}

#[test]
fn transductive_flag_changes_eval_topology() {
    let cfg = RunConfig {
        dataset: DatasetSpec::Synth(easy_synth(51)),
        encoder: small_encoder(),
        epochs: 8,
        patience: 8,
        seed: 4,
        ..RunConfig::default()
    };
    let out = train(&cfg).unwrap();
    let splits = out.set.splits().unwrap();
    let inductive = evaluate(
        &out.model,
        &out.set,
        &splits.test,
        &splits.train,
        &cfg.g2g,
        Ablation::None,
    )
    .unwrap();
    let mut trans_cfg = cfg.g2g;
    trans_cfg.transductive = true;
    let transductive = evaluate(
        &out.model,
        &out.set,
        &splits.test,
        &splits.train,
        &trans_cfg,
        Ablation::None,
    )
    .unwrap();
    // both must be valid; they usually differ but may coincide on easy sets
    assert_eq!(inductive.predictions.len(), transductive.predictions.len());
}
