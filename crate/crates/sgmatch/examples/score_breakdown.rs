//! Encode one (image, caption) pair and print the similarity breakdown:
//! the node/relation matching terms, the global cosine term, and their sum.
//!
//!     cargo run --release --example score_breakdown

use sgmatch::config::ModelConfig;
use sgmatch::data::{gen_synthetic, GenConfig};
use sgmatch::pipeline::encode_corpus;
use sgmatch::score::total_score;
use sgmatch::train::build_parameters;

fn main() -> sgmatch::Result<()> {
    let corpus = gen_synthetic(&GenConfig {
        n_train: 4,
        n_val: 0,
        n_test: 0,
        seed: 7,
        vocab_threshold: 1,
        ..GenConfig::default()
    })?;
    let cfg = ModelConfig::desk(
        corpus.vocab.len(),
        corpus.vocab.n_object_categories,
        corpus.vocab.n_predicate_categories,
    );
    let params = build_parameters(&cfg, 7)?;
    let frozen = encode_corpus(&params, &corpus.train, &cfg)?;

    println!("untrained model, matched pair vs a mismatched pair:\n");
    println!("{:<24} {:>9} {:>9} {:>9} {:>9} {:>9}", "pair", "s_node", "s_rel", "s_local", "s_global", "s_total");
    for (img, cap, label) in [
        (0usize, frozen.captions_of[0][0], "matched (img0, cap0#0)"),
        (0, frozen.captions_of[1][0], "mismatched (img0, cap1#0)"),
    ] {
        let r = total_score(&frozen.images[img], &frozen.captions[cap], cfg.score_mode)?;
        println!(
            "{label:<24} {:>9.4} {:>9.4} {:>9.4} {:>9.4} {:>9.4}",
            r.s_node, r.s_rel, r.s_local, r.s_global, r.s_total
        );
        assert_eq!(r.s_local, r.s_node + r.s_rel);
        assert_eq!(r.s_total, r.s_local + r.s_global);
    }
    println!("\nboth identities hold exactly: s_local = s_node + s_rel, s_total = s_local + s_global");
    Ok(())
}
