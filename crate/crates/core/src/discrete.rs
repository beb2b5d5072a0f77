//! Inverted-index baselines: identity, TFIDF cosine and Okapi BM25.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::search::{id_order, select_top_k, RankedList};
use crate::tasks::{ItemId, RetrievalTask};
use crate::text::smoothed_idf;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bm25Params {
    pub k1: f64,
    pub b: f64,
}

impl Default for Bm25Params {
    fn default() -> Self {
        Self { k1: 1.2, b: 0.75 }
    }
}

impl Bm25Params {
    pub fn new(k1: f64, b: f64) -> Result<Self> {
        if k1.is_nan() || k1 < 0.0 || !(0.0..=1.0).contains(&b) {
            return Err(Error::InvalidConfig(format!("BM25 needs k1 >= 0 and 0 <= b <= 1, got k1={k1} b={b}")));
        }
        Ok(Self { k1, b })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Scorer {
    Bm25(Bm25Params),
    Tfidf,
}

/// Postings keyed by token. Documents are numbered in input order and every
/// postings list is sorted by that number.
#[derive(Debug, Clone)]
pub struct InvertedIndex {
    postings: HashMap<String, Vec<(u32, u32)>>,
    doc_ids: Vec<ItemId>,
    doc_index: HashMap<ItemId, u32>,
    doc_lengths: Vec<u32>,
    avg_doc_length: f64,
    tfidf_norms: Vec<f64>,
    order: Vec<u32>,
}

impl InvertedIndex {
    pub fn build<T: AsRef<str>>(candidates: &[(ItemId, Vec<T>)]) -> Result<Self> {
        let mut postings: HashMap<String, Vec<(u32, u32)>> = HashMap::new();
        let mut doc_index = HashMap::with_capacity(candidates.len());
        let mut doc_lengths = Vec::with_capacity(candidates.len());
        for (doc, (id, tokens)) in candidates.iter().enumerate() {
            if doc_index.insert(id.clone(), doc as u32).is_some() {
                return Err(Error::DuplicateId(id.to_string()));
            }
            doc_lengths.push(tokens.len() as u32);
            for t in tokens {
                let list = postings.entry(t.as_ref().to_owned()).or_default();
                match list.last_mut() {
                    Some((d, tf)) if *d == doc as u32 => *tf += 1,
                    _ => list.push((doc as u32, 1)),
                }
            }
        }
        let num_docs = candidates.len();
        let avg_doc_length = if num_docs == 0 {
            0.0
        } else {
            doc_lengths.iter().map(|&l| l as f64).sum::<f64>() / num_docs as f64
        };
        let mut sq = vec![0.0; num_docs];
        for list in postings.values() {
            let idf = smoothed_idf(num_docs, list.len());
            for &(d, tf) in list {
                sq[d as usize] += (tf as f64 * idf).powi(2);
            }
        }
        let doc_ids: Vec<ItemId> = candidates.iter().map(|(id, _)| id.clone()).collect();
        let order = id_order(&doc_ids);
        Ok(Self {
            postings,
            doc_ids,
            doc_index,
            doc_lengths,
            avg_doc_length,
            tfidf_norms: sq.into_iter().map(f64::sqrt).collect(),
            order,
        })
    }

    pub fn num_docs(&self) -> usize {
        self.doc_ids.len()
    }

    pub fn avg_doc_length(&self) -> f64 {
        self.avg_doc_length
    }

    pub fn doc_length(&self, id: &ItemId) -> Option<usize> {
        self.doc_index.get(id).map(|&d| self.doc_lengths[d as usize] as usize)
    }

    pub fn postings(&self, token: &str) -> &[(u32, u32)] {
        self.postings.get(token).map_or(&[], Vec::as_slice)
    }

    /// Number of documents containing `token`.
    pub fn doc_freq(&self, token: &str) -> usize {
        self.postings(token).len()
    }

    pub fn doc_id(&self, doc: u32) -> &ItemId {
        &self.doc_ids[doc as usize]
    }

    fn doc(&self, id: &ItemId) -> Result<u32> {
        self.doc_index.get(id).copied().ok_or_else(|| Error::UnknownDoc(id.to_string()))
    }

    fn tf(&self, token: &str, doc: u32) -> u32 {
        let list = self.postings(token);
        list.binary_search_by_key(&doc, |&(d, _)| d).map_or(0, |i| list[i].1)
    }

    pub fn bm25_idf(&self, token: &str) -> f64 {
        let n = self.num_docs() as f64;
        let df = self.doc_freq(token) as f64;
        (1.0 + (n - df + 0.5) / (df + 0.5)).ln()
    }

    fn bm25_term(&self, idf: f64, tf: u32, doc: u32, params: Bm25Params) -> f64 {
        let tf = tf as f64;
        let dl = self.doc_lengths[doc as usize] as f64;
        let norm = 1.0 - params.b + params.b * dl / self.avg_doc_length;
        idf * tf * (params.k1 + 1.0) / (tf + params.k1 * norm)
    }

    /// Query-side tf·idf weights, one per distinct token in first-seen order,
    /// and the query vector norm.
    fn tfidf_query<'q, T: AsRef<str>>(&self, query: &'q [T]) -> (Vec<(&'q str, f64)>, f64) {
        let mut counts: Vec<(&'q str, u32)> = Vec::new();
        for t in query {
            match counts.iter_mut().find(|(s, _)| *s == t.as_ref()) {
                Some((_, c)) => *c += 1,
                None => counts.push((t.as_ref(), 1)),
            }
        }
        let n = self.num_docs();
        let weights: Vec<(&'q str, f64)> = counts
            .into_iter()
            .map(|(t, c)| (t, c as f64 * smoothed_idf(n, self.doc_freq(t))))
            .collect();
        let norm = weights.iter().map(|(_, w)| w * w).sum::<f64>().sqrt();
        (weights, norm)
    }

    fn tfidf_doc_weight(&self, token: &str, tf: u32) -> f64 {
        tf as f64 * smoothed_idf(self.num_docs(), self.doc_freq(token))
    }
}

/// Sum over query tokens (repeats included) of the Okapi BM25 term score.
pub fn bm25_score<T: AsRef<str>>(index: &InvertedIndex, query: &[T], doc: &ItemId, params: Bm25Params) -> Result<f64> {
    let d = index.doc(doc)?;
    let mut score = 0.0;
    for t in query {
        let tf = index.tf(t.as_ref(), d);
        if tf > 0 {
            score += index.bm25_term(index.bm25_idf(t.as_ref()), tf, d, params);
        }
    }
    Ok(score)
}

/// Cosine between raw-tf × smoothed-idf vectors of query and document.
pub fn tfidf_score<T: AsRef<str>>(index: &InvertedIndex, query: &[T], doc: &ItemId) -> Result<f64> {
    let d = index.doc(doc)?;
    let (weights, qnorm) = index.tfidf_query(query);
    let mut dot = 0.0;
    for (t, wq) in &weights {
        let tf = index.tf(t, d);
        if tf > 0 {
            dot += wq * index.tfidf_doc_weight(t, tf);
        }
    }
    let denom = qnorm * index.tfidf_norms[d as usize];
    Ok(if denom == 0.0 { 0.0 } else { dot / denom })
}

/// Top `k` documents sharing at least one token with the query, ties by
/// ascending id. Scores equal those of [`bm25_score`] / [`tfidf_score`].
pub fn discrete_top_k<T: AsRef<str>>(index: &InvertedIndex, query: &[T], k: usize, scorer: Scorer) -> Result<RankedList> {
    if k == 0 {
        return Err(Error::InvalidConfig("K must be >= 1".into()));
    }
    let mut acc: HashMap<u32, f64> = HashMap::new();
    match scorer {
        Scorer::Bm25(params) => {
            for t in query {
                let idf = index.bm25_idf(t.as_ref());
                for &(d, tf) in index.postings(t.as_ref()) {
                    *acc.entry(d).or_insert(0.0) += index.bm25_term(idf, tf, d, params);
                }
            }
        }
        Scorer::Tfidf => {
            let (weights, qnorm) = index.tfidf_query(query);
            for (t, wq) in &weights {
                for &(d, tf) in index.postings(t) {
                    *acc.entry(d).or_insert(0.0) += wq * index.tfidf_doc_weight(t, tf);
                }
            }
            for (d, dot) in acc.iter_mut() {
                let denom = qnorm * index.tfidf_norms[*d as usize];
                *dot = if denom == 0.0 { 0.0 } else { *dot / denom };
            }
        }
    }
    Ok(select_top_k(k, &index.doc_ids, &index.order, acc.into_iter().map(|(d, s)| (d as usize, s))))
}

/// The candidate whose text equals the query's text, as a one-item list.
pub fn identity_retrieval(task: &RetrievalTask, query: &ItemId) -> RankedList {
    let texts = task.texts();
    let entries = texts
        .get(query)
        .and_then(|text| task.candidates().iter().find(|(_, t)| t == text))
        .map(|(id, _)| vec![(id.clone(), 1.0)])
        .unwrap_or_default();
    RankedList::new(entries).expect("single entry")
}

/// Identity rankings for every task query.
pub fn identity_rankings(task: &RetrievalTask) -> Vec<(ItemId, RankedList)> {
    let mut by_text: HashMap<&str, &ItemId> = HashMap::new();
    for (id, text) in task.candidates() {
        by_text.entry(text.as_str()).or_insert(id);
    }
    let texts = task.texts();
    task.queries()
        .iter()
        .map(|q| {
            let hit = texts.get(q).and_then(|t| by_text.get(t));
            let entries = hit.map(|&id| vec![(id.clone(), 1.0)]).unwrap_or_default();
            (q.clone(), RankedList::new(entries).expect("single entry"))
        })
        .collect()
}
