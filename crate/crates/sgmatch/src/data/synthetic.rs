use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::dataset::{PairedDataset, RecordPair, Split};
use super::vocab::{build_vocab, Vocab};
use super::{Relation, TextGraph, VisualGraph};
use crate::error::{Error, Result};

/// Synthetic corpus parameters. Every pair is built from a latent world of
/// object/predicate categories: visual features are noisy linear images of
/// the category one-hots, and captions name the same categories, so a
/// correct model can separate matching from non-matching pairs.
#[derive(Debug, Clone)]
pub struct GenConfig {
    pub n_train: usize,
    pub n_val: usize,
    pub n_test: usize,
    pub seed: u64,
    /// Width of the precomputed node/edge features (d_I).
    pub feat_dim: usize,
    pub n_object_categories: usize,
    pub n_predicate_categories: usize,
    pub captions_per_image: usize,
    pub objects_per_image: (usize, usize),
    pub relations_per_image: (usize, usize),
    /// Uniform feature noise half-width.
    pub noise: f64,
    pub vocab_threshold: usize,
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig {
            n_train: 64,
            n_val: 16,
            n_test: 16,
            seed: 7,
            feat_dim: 32,
            n_object_categories: 16,
            n_predicate_categories: 8,
            captions_per_image: 5,
            objects_per_image: (2, 4),
            relations_per_image: (1, 3),
            noise: 0.05,
            vocab_threshold: 4,
        }
    }
}

pub struct SyntheticCorpus {
    pub train: PairedDataset,
    pub val: PairedDataset,
    pub test: PairedDataset,
    pub vocab: Vocab,
}

const FILLERS: &[&str] = &["a", "the", "and", "with", "near"];
/// Marker word that turns some predicates into two-word phrases.
const PRED_PREFIX: &str = "is";

fn object_word(cat: usize) -> String {
    format!("obj{cat}")
}

fn predicate_word(cat: usize) -> String {
    format!("rel{cat}")
}

/// Symbolic (pre-vocabulary) form of one generated image.
struct World {
    objects: Vec<usize>,
    relations: Vec<Relation>,
    /// Per relation: the predicate phrase as word strings.
    predicate_phrases: Vec<Vec<String>>,
}

struct SymbolicCaption {
    tokens: Vec<String>,
    triplets: Vec<Vec<String>>,
}

fn signature(world: &World) -> String {
    let mut objs = world.objects.clone();
    objs.sort_unstable();
    let mut rels: Vec<(usize, usize, usize)> = world
        .relations
        .iter()
        .map(|r| (world.objects[r.subject], r.predicate, world.objects[r.object]))
        .collect();
    rels.sort_unstable();
    format!("{objs:?}|{rels:?}")
}

fn sample_world(
    cfg: &GenConfig,
    rng: &mut ChaCha8Rng,
    force_object: Option<usize>,
    force_predicate: Option<usize>,
) -> World {
    let (lo, hi) = cfg.objects_per_image;
    let n_obj = rng.random_range(lo..=hi.min(cfg.n_object_categories));

    let mut cats: Vec<usize> = (0..cfg.n_object_categories).collect();
    cats.shuffle(rng);
    let mut objects: Vec<usize> = cats.into_iter().take(n_obj).collect();
    if let Some(forced) = force_object {
        if !objects.contains(&forced) {
            objects[0] = forced;
        }
    }

    let max_pairs = n_obj * (n_obj - 1);
    let (rlo, rhi) = cfg.relations_per_image;
    let n_rel = rng.random_range(rlo.min(max_pairs).max(1)..=rhi.min(max_pairs).max(1));
    let mut endpoint_pairs: Vec<(usize, usize)> = (0..n_obj)
        .flat_map(|s| (0..n_obj).filter(move |&o| o != s).map(move |o| (s, o)))
        .collect();
    endpoint_pairs.shuffle(rng);

    let mut relations = Vec::with_capacity(n_rel);
    let mut phrases = Vec::with_capacity(n_rel);
    for (k, &(s, o)) in endpoint_pairs.iter().take(n_rel).enumerate() {
        let predicate = match (k, force_predicate) {
            (0, Some(p)) => p,
            _ => rng.random_range(0..cfg.n_predicate_categories),
        };
        relations.push(Relation { subject: s, predicate, object: o });
        // occasionally a two-word predicate phrase
        let phrase = if rng.random_range(0.0..1.0) < 0.25 {
            vec![PRED_PREFIX.to_string(), predicate_word(predicate)]
        } else {
            vec![predicate_word(predicate)]
        };
        phrases.push(phrase);
    }
    World { objects, relations, predicate_phrases: phrases }
}

fn caption_for(world: &World, rng: &mut ChaCha8Rng) -> SymbolicCaption {
    let mut order: Vec<usize> = (0..world.relations.len()).collect();
    order.shuffle(rng);

    let mut tokens: Vec<String> = Vec::new();
    let mut triplets: Vec<Vec<String>> = Vec::new();
    if rng.random_range(0.0..1.0) < 0.5 {
        tokens.push(FILLERS[rng.random_range(0..FILLERS.len())].to_string());
    }
    for &k in &order {
        let r = &world.relations[k];
        let subj = object_word(world.objects[r.subject]);
        let obj = object_word(world.objects[r.object]);
        let phrase = &world.predicate_phrases[k];

        tokens.push(subj.clone());
        tokens.extend(phrase.iter().cloned());
        tokens.push(obj.clone());
        if rng.random_range(0.0..1.0) < 0.3 {
            tokens.push(FILLERS[rng.random_range(0..FILLERS.len())].to_string());
        }

        let mut triplet = vec![subj];
        triplet.extend(phrase.iter().cloned());
        triplet.push(obj);
        triplets.push(triplet);
    }
    SymbolicCaption { tokens, triplets }
}

fn random_box(rng: &mut ChaCha8Rng) -> [f64; 4] {
    let x1: f64 = rng.random_range(0.0..0.8);
    let y1: f64 = rng.random_range(0.0..0.8);
    let x2: f64 = rng.random_range(x1 + 0.05..1.0);
    let y2: f64 = rng.random_range(y1 + 0.05..1.0);
    [x1, y1, x2, y2]
}

/// Unit-length random prototype vectors, one per category.
fn prototypes(rng: &mut ChaCha8Rng, count: usize, dim: usize) -> Vec<Vec<f64>> {
    (0..count)
        .map(|_| {
            let mut v: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-9);
            for x in &mut v {
                *x /= norm;
            }
            v
        })
        .collect()
}

/// Generate a deterministic synthetic corpus. The same config (seed
/// included) produces byte-identical datasets; world signatures are unique
/// across all splits so every query has a distinguishable answer.
pub fn gen_synthetic(cfg: &GenConfig) -> Result<SyntheticCorpus> {
    if cfg.n_train < 2 {
        return Err(Error::Config(format!(
            "need at least 2 training pairs, got {}",
            cfg.n_train
        )));
    }
    if cfg.captions_per_image == 0 {
        return Err(Error::Config("captions_per_image must be >= 1".into()));
    }
    if cfg.objects_per_image.0 < 2 {
        return Err(Error::Config("images need at least 2 objects to carry a relation".into()));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let obj_protos = prototypes(&mut rng, cfg.n_object_categories, cfg.feat_dim);
    let pred_protos = prototypes(&mut rng, cfg.n_predicate_categories, cfg.feat_dim);

    let mut seen = BTreeSet::new();
    let mut splits: Vec<(Split, usize)> = vec![
        (Split::Train, cfg.n_train),
        (Split::Val, cfg.n_val),
        (Split::Test, cfg.n_test),
    ];
    splits.retain(|&(_, n)| n > 0);

    // symbolic pass: worlds + caption strings
    type SplitItems = Vec<(World, Vec<SymbolicCaption>)>;
    let mut symbolic: Vec<(Split, SplitItems)> = Vec::new();
    let mut image_counter = 0usize;
    for &(split, count) in &splits {
        let mut items = Vec::with_capacity(count);
        for _ in 0..count {
            let world = loop {
                // cycle forced categories through early train images so every
                // category clears the vocabulary threshold
                let (fo, fp) = if split == Split::Train {
                    (
                        Some(image_counter % cfg.n_object_categories),
                        Some(image_counter % cfg.n_predicate_categories),
                    )
                } else {
                    (None, None)
                };
                let candidate = sample_world(cfg, &mut rng, fo, fp);
                if seen.insert(signature(&candidate)) {
                    break candidate;
                }
            };
            let captions: Vec<SymbolicCaption> = (0..cfg.captions_per_image)
                .map(|_| caption_for(&world, &mut rng))
                .collect();
            items.push((world, captions));
            image_counter += 1;
        }
        symbolic.push((split, items));
    }

    // vocabulary from the train captions only
    let train_caps: Vec<Vec<String>> = symbolic
        .iter()
        .filter(|(s, _)| *s == Split::Train)
        .flat_map(|(_, items)| items.iter().flat_map(|(_, caps)| caps.iter().map(|c| c.tokens.clone())))
        .collect();
    let vocab = build_vocab(
        &train_caps,
        cfg.vocab_threshold,
        cfg.n_object_categories,
        cfg.n_predicate_categories,
    )?;

    // numeric pass: features + id mapping
    let mut out: Vec<PairedDataset> = Vec::new();
    let mut pair_counter = 0usize;
    for (split, items) in symbolic {
        let mut pairs = Vec::with_capacity(items.len());
        for (world, captions) in items {
            let mut node_feats = Vec::with_capacity(world.objects.len() * cfg.feat_dim);
            for &cat in &world.objects {
                for proto in &obj_protos[cat] {
                    node_feats.push(proto + rng.random_range(-cfg.noise..cfg.noise));
                }
            }
            let mut edge_feats = Vec::with_capacity(world.relations.len() * cfg.feat_dim);
            for r in &world.relations {
                for proto in &pred_protos[r.predicate] {
                    edge_feats.push(proto + rng.random_range(-cfg.noise..cfg.noise));
                }
            }
            let boxes: Vec<[f64; 4]> = (0..world.objects.len()).map(|_| random_box(&mut rng)).collect();

            let visual = VisualGraph {
                objects: world.objects.clone(),
                boxes,
                relations: world.relations.clone(),
                node_feats,
                edge_feats,
                feat_dim: cfg.feat_dim,
            };
            let text_graphs: Vec<TextGraph> = captions
                .iter()
                .map(|c| TextGraph {
                    tokens: c.tokens.iter().map(|w| vocab.id(w)).collect(),
                    triplets: c
                        .triplets
                        .iter()
                        .map(|t| t.iter().map(|w| vocab.id(w)).collect())
                        .collect(),
                })
                .collect();

            pairs.push(RecordPair {
                id: format!("img{pair_counter:05}"),
                visual,
                captions: text_graphs,
            });
            pair_counter += 1;
        }
        out.push(PairedDataset { pairs, split, feat_dim: cfg.feat_dim });
    }

    let by_split = |s: Split| -> PairedDataset {
        out.iter()
            .find(|d| d.split == s)
            .cloned()
            .unwrap_or(PairedDataset { pairs: Vec::new(), split: s, feat_dim: cfg.feat_dim })
    };
    Ok(SyntheticCorpus {
        train: by_split(Split::Train),
        val: by_split(Split::Val),
        test: by_split(Split::Test),
        vocab,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_cfg() -> GenConfig {
        GenConfig {
            n_train: 8,
            n_val: 2,
            n_test: 2,
            seed: 7,
            vocab_threshold: 1,
            ..GenConfig::default()
        }
    }

    #[test]
    fn same_seed_is_identical() {
        let a = gen_synthetic(&small_cfg()).unwrap();
        let b = gen_synthetic(&small_cfg()).unwrap();
        assert_eq!(a.train, b.train);
        assert_eq!(a.val, b.val);
        assert_eq!(a.test, b.test);
        assert_eq!(a.vocab, b.vocab);
    }

    #[test]
    fn pair_counts_match_config() {
        let c = gen_synthetic(&small_cfg()).unwrap();
        assert_eq!(c.train.len(), 8);
        assert_eq!(c.val.len(), 2);
        assert_eq!(c.train.n_captions(), 8 * 5);
    }

    #[test]
    fn two_pairs_is_the_minimum() {
        let cfg = GenConfig { n_train: 1, ..small_cfg() };
        assert!(gen_synthetic(&cfg).is_err());
        let cfg2 = GenConfig { n_train: 2, n_val: 0, n_test: 0, ..small_cfg() };
        let c = gen_synthetic(&cfg2).unwrap();
        assert_eq!(c.train.len(), 2);
        assert!(c.train.n_captions() >= 2);
    }

    #[test]
    fn generated_records_validate() {
        let c = gen_synthetic(&small_cfg()).unwrap();
        for pair in c.train.pairs.iter().chain(&c.val.pairs).chain(&c.test.pairs) {
            pair.visual
                .validate(c.vocab.n_object_categories, c.vocab.n_predicate_categories)
                .unwrap();
            for cap in &pair.captions {
                cap.validate(c.vocab.len()).unwrap();
                assert!(!cap.triplets.is_empty());
            }
        }
    }

    #[test]
    fn matched_pairs_share_labels_mismatched_share_fewer() {
        let c = gen_synthetic(&GenConfig { n_train: 32, ..small_cfg() }).unwrap();
        let vocab = &c.vocab;

        // overlap = count of image object categories named by the caption
        let overlap = |visual: &VisualGraph, cap: &TextGraph| -> usize {
            let names: BTreeSet<usize> = visual
                .objects
                .iter()
                .map(|&cat| vocab.id(&object_word(cat)))
                .collect();
            let mentioned: BTreeSet<usize> = cap
                .triplets
                .iter()
                .flat_map(|t| [t[0], t[t.len() - 1]])
                .collect();
            names.intersection(&mentioned).count()
        };

        let pairs = &c.train.pairs;
        let mut matched = 0.0;
        let mut matched_n = 0.0;
        let mut min_matched = usize::MAX;
        let mut mismatched = 0.0;
        let mut mismatched_n = 0.0;
        for (i, p) in pairs.iter().enumerate() {
            for cap in &p.captions {
                let o = overlap(&p.visual, cap);
                matched += o as f64;
                matched_n += 1.0;
                min_matched = min_matched.min(o);
                let other = &pairs[(i + 1) % pairs.len()];
                mismatched += overlap(&other.visual, cap) as f64;
                mismatched_n += 1.0;
            }
        }
        assert!(min_matched >= 1, "every matched pair shares at least one label");
        assert!(
            matched / matched_n > mismatched / mismatched_n,
            "matched overlap {} should exceed mismatched {}",
            matched / matched_n,
            mismatched / mismatched_n
        );
    }
}
