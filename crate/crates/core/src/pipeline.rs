//! End-to-end glue: pair records to training pairs, and tasks to rankings.

use std::collections::BTreeMap;

use rayon::prelude::*;

use crate::discrete::{discrete_top_k, identity_rankings, InvertedIndex, Scorer};
use crate::encoder::TextEncoder;
use crate::error::Result;
use crate::search::{CandidateIndex, QuantizedIndex, RankedList, SearchIndex};
use crate::tasks::{ItemId, PairRecord, RetrievalTask};
use crate::text::{tokenize, Token, Vocabulary};
use crate::train::TrainPair;

pub type Rankings = BTreeMap<ItemId, RankedList>;

/// Vocabulary over both sides of every pair.
pub fn pair_vocabulary<'a>(records: impl IntoIterator<Item = &'a PairRecord>, min_count: usize) -> Result<Vocabulary> {
    let docs: Vec<Vec<Token>> = records
        .into_iter()
        .flat_map(|p| [tokenize(&p.text1), tokenize(&p.text2)])
        .collect();
    Vocabulary::build(&docs, min_count)
}

/// Token-id training pairs. Unlabeled records count as positive.
pub fn train_pairs(vocab: &Vocabulary, records: &[PairRecord]) -> Vec<TrainPair> {
    records
        .par_iter()
        .map(|p| TrainPair::from_texts(vocab, &p.text1, &p.text2, p.label != Some(false)))
        .collect()
}

/// Encodes every candidate and builds the requested index.
pub fn build_dense_index(task: &RetrievalTask, encoder: &TextEncoder, quantized: bool) -> Result<SearchIndex> {
    let texts: Vec<&str> = task.candidates().iter().map(|(_, t)| t.as_str()).collect();
    let vectors = encoder.encode_all(&texts);
    let ids = task.candidates().iter().map(|(id, _)| id.clone());
    let index = CandidateIndex::build(ids.zip(vectors).collect())?;
    Ok(if quantized {
        SearchIndex::Quantized(QuantizedIndex::build(&index))
    } else {
        SearchIndex::Exhaustive(index)
    })
}

/// Top-`k` dense rankings for every task query.
pub fn dense_rankings(task: &RetrievalTask, encoder: &TextEncoder, quantized: bool, k: usize) -> Result<Rankings> {
    let index = build_dense_index(task, encoder, quantized)?;
    let texts = task.texts();
    let queries: Vec<&str> = task.queries().iter().map(|q| texts[q]).collect();
    let lists = index.top_k_all(&encoder.encode_all(&queries), k)?;
    Ok(task.queries().iter().cloned().zip(lists).collect())
}

/// Inverted index over tokenized candidate texts.
pub fn build_inverted_index(task: &RetrievalTask) -> Result<InvertedIndex> {
    let docs: Vec<(ItemId, Vec<Token>)> = task
        .candidates()
        .par_iter()
        .map(|(id, text)| (id.clone(), tokenize(text)))
        .collect();
    InvertedIndex::build(&docs)
}

/// Top-`k` BM25 or TFIDF rankings for every task query.
pub fn discrete_rankings(task: &RetrievalTask, scorer: Scorer, k: usize) -> Result<Rankings> {
    let index = build_inverted_index(task)?;
    let texts = task.texts();
    task.queries()
        .par_iter()
        .map(|q| Ok((q.clone(), discrete_top_k(&index, &tokenize(texts[q]), k, scorer)?)))
        .collect()
}

pub fn identity(task: &RetrievalTask) -> Rankings {
    identity_rankings(task).into_iter().collect()
}
