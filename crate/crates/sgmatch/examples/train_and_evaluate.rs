//! End-to-end run on a synthetic corpus: generate, train with the hinge
//! triplet loss, then report Recall@K on the train and held-out splits.
//!
//!     cargo run --release --example train_and_evaluate

use sgmatch::config::{ModelConfig, TrainConfig};
use sgmatch::data::{gen_synthetic, GenConfig};
use sgmatch::eval::{rank_all, report, summarize};
use sgmatch::pipeline::encode_corpus;
use sgmatch::train::{train, TrainData};

fn main() -> sgmatch::Result<()> {
    let gen_cfg = GenConfig { seed: 7, ..GenConfig::default() };
    let corpus = gen_synthetic(&gen_cfg)?;
    println!(
        "corpus: {} train / {} val / {} test pairs, vocab {}",
        corpus.train.len(),
        corpus.val.len(),
        corpus.test.len(),
        corpus.vocab.len()
    );

    let mut model_cfg = ModelConfig::desk(
        corpus.vocab.len(),
        corpus.vocab.n_object_categories,
        corpus.vocab.n_predicate_categories,
    );
    model_cfg.dropout = 0.0; // small corpus, overfitting is the goal here
    let train_cfg = TrainConfig {
        batch_size: 16,
        epochs: 60,
        seed: 7,
        ..TrainConfig::default()
    };

    let data = TrainData { train: &corpus.train, val: Some(&corpus.val), vocab: &corpus.vocab };
    let t0 = std::time::Instant::now();
    let outcome = train(&data, &model_cfg, &train_cfg, None)?;
    println!("trained {} epochs in {:.1?}", outcome.log.len(), t0.elapsed());

    for entry in outcome.log.iter().step_by(10) {
        let val = entry
            .val
            .map(|v| format!("val R@1 {:.3}/{:.3} r_sum {:.3}", v.i2t[0], v.t2i[0], v.r_sum))
            .unwrap_or_default();
        println!("epoch {:>3}  loss {:>8.4}  {}", entry.epoch, entry.mean_loss, val);
    }

    for (name, split) in [("train", &corpus.train), ("held-out", &corpus.val)] {
        let frozen = encode_corpus(&outcome.best.params, split, &model_cfg)?;
        let (i2t, t2i) = rank_all(&frozen, model_cfg.score_mode)?;
        let summary = summarize(&i2t, &t2i)?;
        println!(
            "{name}: R@1 i2t {:.3} t2i {:.3}, R-Sum {:.1}%",
            summary.i2t[0],
            summary.t2i[0],
            summary.r_sum * 100.0
        );
        if name == "held-out" {
            println!("{}", report(&i2t, &t2i, &[1, 5, 10])?.to_table());
        }
    }
    Ok(())
}
