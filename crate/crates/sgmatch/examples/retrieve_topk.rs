//! Train briefly, then run a single text→image query and print the top-k
//! candidates with their per-part scores.
//!
//!     cargo run --release --example retrieve_topk

use sgmatch::config::{ModelConfig, TrainConfig};
use sgmatch::data::{gen_synthetic, GenConfig};
use sgmatch::eval::ranked_candidates;
use sgmatch::pipeline::encode_corpus;
use sgmatch::score::total_score;
use sgmatch::train::{train, TrainData};

fn main() -> sgmatch::Result<()> {
    let corpus = gen_synthetic(&GenConfig { seed: 7, n_train: 32, ..GenConfig::default() })?;
    let mut cfg = ModelConfig::desk(
        corpus.vocab.len(),
        corpus.vocab.n_object_categories,
        corpus.vocab.n_predicate_categories,
    );
    cfg.dropout = 0.0;
    let data = TrainData { train: &corpus.train, val: None, vocab: &corpus.vocab };
    let outcome = train(
        &data,
        &cfg,
        &TrainConfig { batch_size: 16, epochs: 60, seed: 7, ..TrainConfig::default() },
        None,
    )?;

    let frozen = encode_corpus(&outcome.last.params, &corpus.train, &cfg)?;
    let query = frozen.captions_of[5][0]; // first caption of image 5
    println!("query: caption {}\n", frozen.caption_ids[query]);

    let reports: Vec<sgmatch::score::SimilarityReport> = frozen
        .images
        .iter()
        .map(|img| total_score(img, &frozen.captions[query], cfg.score_mode))
        .collect::<sgmatch::Result<_>>()?;
    let totals: Vec<f64> = reports.iter().map(|r| r.s_total).collect();
    let order = ranked_candidates(&totals);

    println!("{:<5} {:<10} {:>9} {:>9} {:>9} {:>9}", "rank", "image", "s_node", "s_rel", "s_global", "s_total");
    for (rank, &i) in order.iter().take(5).enumerate() {
        let r = &reports[i];
        let marker = if i == frozen.caption_owner[query] { "  <- true pair" } else { "" };
        println!(
            "{:<5} {:<10} {:>9.4} {:>9.4} {:>9.4} {:>9.4}{marker}",
            rank + 1,
            frozen.image_ids[i],
            r.s_node,
            r.s_rel,
            r.s_global,
            r.s_total
        );
    }
    Ok(())
}
