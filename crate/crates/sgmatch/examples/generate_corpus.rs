//! Generate the synthetic corpus and inspect what it contains.
//!
//!     cargo run --release --example generate_corpus [out_dir]

use sgmatch::data::{gen_synthetic, save_dataset, GenConfig};

fn main() -> sgmatch::Result<()> {
    let out = std::env::args()
        .nth(1)
        .unwrap_or_else(|| "target/synthetic_corpus".to_string());
    let out = std::path::PathBuf::from(out);

    let cfg = GenConfig::default();
    let corpus = gen_synthetic(&cfg)?;

    std::fs::create_dir_all(&out)?;
    save_dataset(&corpus.train, &out.join("train.jsonl"))?;
    save_dataset(&corpus.val, &out.join("val.jsonl"))?;
    save_dataset(&corpus.test, &out.join("test.jsonl"))?;
    corpus.vocab.save(&out.join("vocab.json"))?;

    println!(
        "seed {}: {} train / {} val / {} test pairs -> {}",
        cfg.seed,
        corpus.train.len(),
        corpus.val.len(),
        corpus.test.len(),
        out.display()
    );
    println!(
        "vocabulary: {} words (threshold {}), {} object categories, {} predicates",
        corpus.vocab.len(),
        corpus.vocab.threshold,
        corpus.vocab.n_object_categories,
        corpus.vocab.n_predicate_categories
    );

    let pair = &corpus.train.pairs[0];
    println!("\nfirst pair {}:", pair.id);
    println!(
        "  visual graph: {} objects {:?}, {} relations, feature width {}",
        pair.visual.n_objects(),
        pair.visual.objects,
        pair.visual.n_relations(),
        pair.visual.feat_dim
    );
    for (k, cap) in pair.captions.iter().enumerate().take(2) {
        let words: Vec<&str> = cap
            .tokens
            .iter()
            .map(|&t| corpus.vocab.word(t).unwrap_or("?"))
            .collect();
        println!("  caption {k}: {} ({} triplets)", words.join(" "), cap.n_triplets());
    }
    Ok(())
}
