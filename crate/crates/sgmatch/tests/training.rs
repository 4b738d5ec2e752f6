//! Training-loop behavior: determinism, resume round trips, learning on the
//! synthetic corpus, and Siamese parameter sharing.

use sgmatch::config::{ModelConfig, TrainConfig};
use sgmatch::data::{gen_synthetic, GenConfig, TextGraph};
use sgmatch::params::{bind, load_checkpoint, save_checkpoint};
use sgmatch::pipeline::encode_corpus;
use sgmatch::readout::{embed_graph, ReadoutRefs};
use sgmatch::score::total_score;
use sgmatch::textual::encode_caption;
use sgmatch::train::{build_parameters, train, TrainData};
use sgmatch::visual::{encode_batch, Phase};
use tapegrad::Tape;

fn toy_corpus(n: usize) -> sgmatch::data::SyntheticCorpus {
    gen_synthetic(&GenConfig {
        n_train: n,
        n_val: 4,
        n_test: 0,
        seed: 7,
        vocab_threshold: 1,
        ..GenConfig::default()
    })
    .unwrap()
}

fn toy_model(corpus: &sgmatch::data::SyntheticCorpus) -> ModelConfig {
    let mut cfg = ModelConfig::desk(
        corpus.vocab.len(),
        corpus.vocab.n_object_categories,
        corpus.vocab.n_predicate_categories,
    );
    cfg.dropout = 0.0;
    cfg
}

fn toy_train(epochs: usize) -> TrainConfig {
    TrainConfig {
        batch_size: 8,
        epochs,
        seed: 13,
        ..TrainConfig::default()
    }
}

#[test]
fn one_epoch_over_two_pairs_runs() {
    let corpus = toy_corpus(2);
    let cfg = toy_model(&corpus);
    let data = TrainData { train: &corpus.train, val: None, vocab: &corpus.vocab };
    let out = train(&data, &cfg, &toy_train(1), None).unwrap();
    assert_eq!(out.log.len(), 1);
    assert!(out.log[0].mean_loss.is_finite());
    assert!(out.last.params.len() > 0);
}

#[test]
fn loss_decreases_over_fifty_epochs() {
    let corpus = toy_corpus(16);
    let cfg = toy_model(&corpus);
    let data = TrainData { train: &corpus.train, val: None, vocab: &corpus.vocab };
    let out = train(&data, &cfg, &toy_train(50), None).unwrap();
    let first = out.log.first().unwrap().mean_loss;
    let last = out.log.last().unwrap().mean_loss;
    assert!(
        last < first,
        "mean batch loss should drop: epoch 1 = {first}, epoch 50 = {last}"
    );
}

#[test]
fn identical_seeds_give_identical_trajectories() {
    let corpus = toy_corpus(8);
    let cfg = toy_model(&corpus);
    let data = TrainData { train: &corpus.train, val: None, vocab: &corpus.vocab };
    let a = train(&data, &cfg, &toy_train(5), None).unwrap();
    let b = train(&data, &cfg, &toy_train(5), None).unwrap();
    let la: Vec<f64> = a.log.iter().map(|e| e.mean_loss).collect();
    let lb: Vec<f64> = b.log.iter().map(|e| e.mean_loss).collect();
    assert_eq!(la, lb, "loss values must agree to the last bit");
    assert_eq!(a.last.params, b.last.params);
}

#[test]
fn resumed_run_matches_uninterrupted_run() {
    let corpus = toy_corpus(8);
    let cfg = toy_model(&corpus);
    let data = TrainData { train: &corpus.train, val: Some(&corpus.val), vocab: &corpus.vocab };

    let straight = train(&data, &cfg, &toy_train(6), None).unwrap();

    let half = train(&data, &cfg, &toy_train(3), None).unwrap();
    // round the checkpoint through disk like the CLI does
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("last.ckpt");
    save_checkpoint(&half.last, &path).unwrap();
    let reloaded = load_checkpoint(&path).unwrap();
    assert_eq!(reloaded, half.last, "checkpoint round trip must be bit exact");

    let resumed = train(&data, &cfg, &toy_train(6), Some(reloaded)).unwrap();

    // identical next-step losses and identical final parameters
    let tail: Vec<f64> = straight.log[3..].iter().map(|e| e.mean_loss).collect();
    let resumed_losses: Vec<f64> = resumed.log.iter().map(|e| e.mean_loss).collect();
    assert_eq!(tail, resumed_losses);
    assert_eq!(straight.last.params, resumed.last.params);
    assert_eq!(straight.last.epoch, resumed.last.epoch);
}

#[test]
fn gradient_clipping_stays_deterministic() {
    let corpus = toy_corpus(8);
    let cfg = toy_model(&corpus);
    let data = TrainData { train: &corpus.train, val: None, vocab: &corpus.vocab };
    let tc = TrainConfig { grad_clip: Some(1.0), ..toy_train(4) };
    let a = train(&data, &cfg, &tc, None).unwrap();
    let b = train(&data, &cfg, &tc, None).unwrap();
    let la: Vec<f64> = a.log.iter().map(|e| e.mean_loss).collect();
    let lb: Vec<f64> = b.log.iter().map(|e| e.mean_loss).collect();
    assert_eq!(la, lb);
    assert_eq!(a.last.params, b.last.params);
}

#[test]
fn siamese_readout_has_single_parameter_instance() {
    let corpus = toy_corpus(2);
    let cfg = toy_model(&corpus);
    let params = build_parameters(&cfg, 1).unwrap();
    let node_instances = params.names().filter(|n| *n == "readout.w_node").count();
    let edge_instances = params.names().filter(|n| *n == "readout.w_edge").count();
    assert_eq!((node_instances, edge_instances), (1, 1));
    // and no other parameter mentions the readout
    assert_eq!(params.names().filter(|n| n.starts_with("readout.")).count(), 2);
}

#[test]
fn mutating_shared_readout_moves_both_modalities() {
    let corpus = toy_corpus(2);
    let cfg = toy_model(&corpus);
    let mut params = build_parameters(&cfg, 2).unwrap();
    let pair = &corpus.train.pairs[0];
    let caption: &TextGraph = &pair.captions[0];

    let embed_both = |params: &sgmatch::params::ParameterSet| -> (Vec<f64>, Vec<f64>) {
        let mut tape = Tape::new();
        let bound = bind(&mut tape, params, false);
        let refs = ReadoutRefs::bind(&bound);
        let (items, _) =
            encode_batch(&mut tape, &[&pair.visual], &bound, params, &cfg, Phase::Eval).unwrap();
        let a_v = embed_graph(&mut tape, items[0].nodes, items[0].edges, &refs).unwrap();
        let enc = encode_caption(&mut tape, caption, &bound, &cfg, Phase::Eval).unwrap();
        let a_t = embed_graph(&mut tape, enc.graph_nodes.unwrap(), enc.graph_edges, &refs).unwrap();
        (tape.values(a_v).to_vec(), tape.values(a_t).to_vec())
    };

    let (v_before, t_before) = embed_both(&params);
    let mut w = params.values("readout.w_node").to_vec();
    for x in &mut w {
        *x += 0.25;
    }
    params.set_values("readout.w_node", &w).unwrap();
    let (v_after, t_after) = embed_both(&params);

    assert_ne!(v_before, v_after, "visual embedding must react to the shared weight");
    assert_ne!(t_before, t_after, "textual embedding must react to the shared weight");
}

#[test]
fn training_improves_heldout_retrieval_over_untrained() {
    let corpus = toy_corpus(24);
    let cfg = toy_model(&corpus);
    let data = TrainData { train: &corpus.train, val: Some(&corpus.val), vocab: &corpus.vocab };

    let untrained = build_parameters(&cfg, 13).unwrap();
    let frozen = encode_corpus(&untrained, &corpus.val, &cfg).unwrap();
    let (i2t, t2i) = sgmatch::eval::rank_all(&frozen, cfg.score_mode).unwrap();
    let before = sgmatch::eval::summarize(&i2t, &t2i).unwrap().r_sum;

    let out = train(&data, &cfg, &toy_train(40), None).unwrap();
    let frozen = encode_corpus(&out.best.params, &corpus.val, &cfg).unwrap();
    let (i2t, t2i) = sgmatch::eval::rank_all(&frozen, cfg.score_mode).unwrap();
    let after = sgmatch::eval::summarize(&i2t, &t2i).unwrap().r_sum;

    assert!(after > before, "held-out R-Sum should improve: {before} -> {after}");
}

#[test]
fn degenerate_caption_pairs_still_score() {
    // a caption with no triplets flows through scoring with s_rel = 0 and a
    // zero global term
    let corpus = toy_corpus(2);
    let cfg = toy_model(&corpus);
    let params = build_parameters(&cfg, 3).unwrap();
    let mut dataset = corpus.train.clone();
    dataset.pairs[0].captions[0].triplets.clear();
    let frozen = encode_corpus(&params, &dataset, &cfg).unwrap();
    let r = total_score(&frozen.images[0], &frozen.captions[0], cfg.score_mode).unwrap();
    assert_eq!(r.s_rel, 0.0);
    assert_eq!(r.s_global, 0.0);
    assert_eq!(r.s_total, r.s_node);
}
