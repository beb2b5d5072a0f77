//! Seeded synthetic datasets for experiments and benchmarks.

use std::collections::{BTreeMap, BTreeSet, HashSet};

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::Result;
use crate::tasks::{ItemId, PairRecord, RetrievalTask};

const TEMPLATES: &[&str] = &[
    "how do i {0} {1} {2}",
    "what is the best way to {0} {1} {2}",
    "{0} {1} {2} how",
    "can someone explain {0} with {1} and {2}",
    "is it possible to {0} the {1} {2}",
    "why does {0} {1} {2} happen",
    "{1} {0} {2} help",
    "tips for {0} {2} {1}",
];

/// Paraphrase clusters: each cluster combines three concepts from one
/// topic, and each paraphrase picks a synonym per concept plus a template.
/// Clusters sharing a topic overlap in concepts, which makes them hard
/// negatives for each other.
#[derive(Debug, Clone, PartialEq)]
pub struct ParaphraseConfig {
    pub clusters: usize,
    pub paraphrases: usize,
    pub test_clusters: usize,
    pub topics: usize,
    pub concepts_per_topic: usize,
    pub synonyms: usize,
    pub seed: u64,
}

impl Default for ParaphraseConfig {
    fn default() -> Self {
        Self {
            clusters: 200,
            paraphrases: 5,
            test_clusters: 50,
            topics: 15,
            concepts_per_topic: 10,
            synonyms: 3,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ParaphraseData {
    /// All within-cluster pairs of the training clusters.
    pub train_pairs: Vec<PairRecord>,
    /// Cross-cluster training pairs labeled negative, one per positive.
    pub train_negatives: Vec<PairRecord>,
    /// All within-cluster pairs of the held-out clusters.
    pub test_pairs: Vec<PairRecord>,
}

fn synonym(topic: usize, concept: usize, s: usize) -> String {
    // Letters only, so tokenization keeps each word intact.
    let letters = |mut n: usize| {
        let mut out = String::new();
        loop {
            out.push((b'a' + (n % 26) as u8) as char);
            n /= 26;
            if n == 0 {
                break out;
            }
        }
    };
    format!("{}x{}q{}", letters(topic), letters(concept), letters(s))
}

pub fn paraphrase_dataset(cfg: &ParaphraseConfig) -> ParaphraseData {
    assert!(cfg.test_clusters < cfg.clusters && cfg.paraphrases >= 2 && cfg.concepts_per_topic >= 3);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut seen_text = HashSet::new();
    let mut clusters: Vec<Vec<(ItemId, String)>> = Vec::with_capacity(cfg.clusters);
    let mut next_id = 0usize;
    for _ in 0..cfg.clusters {
        let topic = rng.random_range(0..cfg.topics);
        let concepts: Vec<usize> = rand::seq::index::sample(&mut rng, cfg.concepts_per_topic, 3).into_vec();
        let mut members = Vec::with_capacity(cfg.paraphrases);
        let mut attempts = 0;
        while members.len() < cfg.paraphrases && attempts < 1000 {
            attempts += 1;
            let template = TEMPLATES.choose(&mut rng).expect("templates");
            let mut text = (*template).to_owned();
            for (slot, &c) in concepts.iter().enumerate() {
                let word = synonym(topic, c, rng.random_range(0..cfg.synonyms));
                text = text.replace(&format!("{{{slot}}}"), &word);
            }
            if seen_text.insert(text.clone()) {
                members.push((ItemId(format!("s{next_id}")), text));
                next_id += 1;
            }
        }
        clusters.push(members);
    }
    let within = |cluster: &[(ItemId, String)]| {
        let mut out = Vec::new();
        for i in 0..cluster.len() {
            for j in i + 1..cluster.len() {
                out.push(PairRecord {
                    id1: cluster[i].0.clone(),
                    id2: cluster[j].0.clone(),
                    text1: cluster[i].1.clone(),
                    text2: cluster[j].1.clone(),
                    label: Some(true),
                });
            }
        }
        out
    };
    let (test, train) = clusters.split_at(cfg.test_clusters);
    let train_pairs: Vec<PairRecord> = train.iter().flat_map(|c| within(c)).collect();
    let test_pairs: Vec<PairRecord> = test.iter().flat_map(|c| within(c)).collect();
    let mut train_negatives = Vec::with_capacity(train_pairs.len());
    while train_negatives.len() < train_pairs.len() {
        let a = rng.random_range(0..train.len());
        let b = rng.random_range(0..train.len());
        if a == b || train[a].is_empty() || train[b].is_empty() {
            continue;
        }
        let x = train[a].choose(&mut rng).expect("nonempty");
        let y = train[b].choose(&mut rng).expect("nonempty");
        train_negatives.push(PairRecord {
            id1: x.0.clone(),
            id2: y.0.clone(),
            text1: x.1.clone(),
            text2: y.1.clone(),
            label: Some(false),
        });
    }
    train_negatives.shuffle(&mut rng);
    ParaphraseData {
        train_pairs,
        train_negatives,
        test_pairs,
    }
}

/// Gaussian cluster centers with noisy members; every member is a query
/// relevant to its own cluster.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusteredVectorsConfig {
    pub candidates: usize,
    pub cluster_size: usize,
    pub dim: usize,
    pub noise: f64,
    /// Queries are the first member of this many clusters.
    pub queries: usize,
    pub seed: u64,
}

impl Default for ClusteredVectorsConfig {
    fn default() -> Self {
        Self {
            candidates: 20_000,
            cluster_size: 10,
            dim: 64,
            noise: 1.0,
            queries: 2000,
            seed: 0,
        }
    }
}

pub struct ClusteredVectors {
    pub task: RetrievalTask,
    pub encodings: Vec<(ItemId, Vec<f64>)>,
}

impl ClusteredVectors {
    pub fn encoding_map(&self) -> BTreeMap<&ItemId, &[f64]> {
        self.encodings.iter().map(|(id, v)| (id, v.as_slice())).collect()
    }
}

pub fn clustered_vectors(cfg: &ClusteredVectorsConfig) -> Result<ClusteredVectors> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let gauss = |rng: &mut ChaCha8Rng| -> f64 { StandardNormal.sample(rng) };
    let num_clusters = cfg.candidates.div_ceil(cfg.cluster_size);
    let mut encodings = Vec::with_capacity(cfg.candidates);
    let mut members: Vec<Vec<ItemId>> = vec![Vec::new(); num_clusters];
    for (c, cluster) in members.iter_mut().enumerate() {
        let center: Vec<f64> = (0..cfg.dim).map(|_| gauss(&mut rng)).collect();
        for m in 0..cfg.cluster_size {
            if encodings.len() == cfg.candidates {
                break;
            }
            let id = ItemId(format!("v{c:05}_{m:02}"));
            let v = center.iter().map(|x| x + cfg.noise * gauss(&mut rng)).collect();
            cluster.push(id.clone());
            encodings.push((id, v));
        }
    }
    let mut queries = Vec::new();
    let mut relevance = BTreeMap::new();
    for group in members.iter().take(cfg.queries) {
        let set: BTreeSet<ItemId> = group.iter().cloned().collect();
        queries.push(group[0].clone());
        relevance.insert(group[0].clone(), set);
    }
    let candidates = encodings.iter().map(|(id, _)| (id.clone(), String::new())).collect();
    let task = RetrievalTask::new(queries, candidates, relevance)?;
    Ok(ClusteredVectors { task, encodings })
}

/// Token-id pairs for a separable task: class `c` owns tokens
/// `c * tokens_per_class ..`, and both sides of a pair use tokens of one
/// class. Tuning pairs hold one pair per class, so a tuning batch of size
/// `classes` never contains two rows of the same class.
pub struct SeparableTask {
    pub vocab_size: usize,
    pub training: Vec<(Vec<u32>, Vec<u32>)>,
    pub tuning: Vec<(Vec<u32>, Vec<u32>)>,
}

pub fn separable_task(classes: usize, tokens_per_class: usize, pairs_per_class: usize, seed: u64) -> SeparableTask {
    assert!(tokens_per_class >= 2);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let side = |rng: &mut ChaCha8Rng, c: usize| -> Vec<u32> {
        let base = c * tokens_per_class;
        rand::seq::index::sample(rng, tokens_per_class, 2)
            .into_iter()
            .map(|t| (base + t) as u32)
            .collect()
    };
    let mut training = Vec::new();
    for c in 0..classes {
        for _ in 0..pairs_per_class {
            let (a, b) = (side(&mut rng, c), side(&mut rng, c));
            training.push((a, b));
        }
    }
    training.shuffle(&mut rng);
    let tuning = (0..classes).map(|c| (side(&mut rng, c), side(&mut rng, c))).collect();
    SeparableTask {
        vocab_size: classes * tokens_per_class,
        training,
        tuning,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tasks::build_retrieval_task;

    #[test]
    fn paraphrase_shape() {
        let data = paraphrase_dataset(&ParaphraseConfig::default());
        assert_eq!(data.train_pairs.len(), 150 * 10);
        assert_eq!(data.test_pairs.len(), 50 * 10);
        assert_eq!(data.train_negatives.len(), data.train_pairs.len());
        let task = build_retrieval_task(&data.test_pairs).unwrap();
        assert_eq!(task.stats().queries, 250);
        assert_eq!(task.stats().mean_r, 5.0);
        let again = paraphrase_dataset(&ParaphraseConfig::default());
        assert_eq!(again.test_pairs, data.test_pairs);
    }

    #[test]
    fn clustered_shape() {
        let cfg = ClusteredVectorsConfig {
            candidates: 95,
            queries: 5,
            ..Default::default()
        };
        let data = clustered_vectors(&cfg).unwrap();
        assert_eq!(data.encodings.len(), 95);
        assert_eq!(data.task.queries().len(), 5);
        assert_eq!(data.task.r(&data.task.queries()[0]), Some(10));
    }

    #[test]
    fn separable_classes_disjoint() {
        let t = separable_task(4, 3, 5, 1);
        assert_eq!(t.training.len(), 20);
        for (a, b) in &t.training {
            assert_eq!(a[0] / 3, b[0] / 3);
        }
        let classes: BTreeSet<u32> = t.tuning.iter().map(|(a, _)| a[0] / 3).collect();
        assert_eq!(classes.len(), 4);
    }
}
