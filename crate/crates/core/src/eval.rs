//! MAP@K against incomplete relevance judgments. Unjudged candidates count
//! as not relevant.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::search::RankedList;
use crate::tasks::{ItemId, RetrievalTask};

pub const DEFAULT_K: usize = 100;

/// `(1/R) * sum_{j <= min(K, |ranked|)} precision@j * rel_j`.
pub fn average_precision_at_k(ranked: &RankedList, relevant: &BTreeSet<ItemId>, k: usize, r: usize) -> Result<f64> {
    if r < 1 {
        return Err(Error::InvalidConfig("R must be >= 1".into()));
    }
    if k < 1 {
        return Err(Error::InvalidConfig("K must be >= 1".into()));
    }
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (j, id) in ranked.ids().take(k).enumerate() {
        if relevant.contains(id) {
            hits += 1;
            sum += hits as f64 / (j + 1) as f64;
        }
    }
    Ok(sum / r as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    /// Mean AP over queries, in [0, 1].
    pub map_at_k: f64,
    pub per_query_ap: BTreeMap<ItemId, f64>,
    pub k: usize,
    pub num_queries: usize,
}

impl EvalReport {
    /// MAP in percentage points.
    pub fn map_points(&self) -> f64 {
        100.0 * self.map_at_k
    }

    /// `metric<TAB>value` lines.
    pub fn write_summary<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "MAP@{}\t{:.2}", self.k, self.map_points())?;
        writeln!(out, "num_queries\t{}", self.num_queries)?;
        out.flush()
    }

    /// `query<TAB>AP` lines, AP in [0, 1].
    pub fn write_per_query<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "query\tap")?;
        for (q, ap) in &self.per_query_ap {
            writeln!(out, "{q}\t{ap}")?;
        }
        out.flush()
    }
}

/// How to treat task queries that have no ranking.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MissingQueries {
    #[default]
    Error,
    /// Score them as an empty ranking (AP 0).
    AsEmpty,
}

pub fn map_at_k(rankings: &BTreeMap<ItemId, RankedList>, task: &RetrievalTask, k: usize) -> Result<EvalReport> {
    map_at_k_with(rankings, task, k, MissingQueries::Error)
}

/// MAP@K over all task queries, dividing by the number of queries.
pub fn map_at_k_with(rankings: &BTreeMap<ItemId, RankedList>, task: &RetrievalTask, k: usize, missing: MissingQueries) -> Result<EvalReport> {
    let judged = task.queries().iter().map(|q| {
        let relevant = task.relevance(q).expect("task invariant: every query has judgments");
        (q, relevant)
    });
    map_over(rankings, judged.collect(), k, missing)
}

/// MAP@K with the queries and judgments of a qrels map.
pub fn map_at_k_qrels(
    rankings: &BTreeMap<ItemId, RankedList>,
    qrels: &BTreeMap<ItemId, BTreeSet<ItemId>>,
    k: usize,
    missing: MissingQueries,
) -> Result<EvalReport> {
    map_over(rankings, qrels.iter().collect(), k, missing)
}

fn map_over(
    rankings: &BTreeMap<ItemId, RankedList>,
    judged: Vec<(&ItemId, &BTreeSet<ItemId>)>,
    k: usize,
    missing: MissingQueries,
) -> Result<EvalReport> {
    let absent: Vec<String> = judged
        .iter()
        .filter(|(q, _)| !rankings.contains_key(*q))
        .map(|(q, _)| q.to_string())
        .collect();
    if !absent.is_empty() && missing == MissingQueries::Error {
        return Err(Error::MissingQueries(absent));
    }
    let empty = RankedList::default();
    let per_query: Vec<(ItemId, f64)> = judged
        .par_iter()
        .map(|&(q, relevant)| {
            let ranked = rankings.get(q).unwrap_or(&empty);
            Ok((q.clone(), average_precision_at_k(ranked, relevant, k, relevant.len())?))
        })
        .collect::<Result<_>>()?;
    let num_queries = per_query.len();
    let map = if num_queries == 0 {
        0.0
    } else {
        per_query.iter().map(|(_, ap)| ap).sum::<f64>() / num_queries as f64
    };
    Ok(EvalReport {
        map_at_k: map,
        per_query_ap: per_query.into_iter().collect(),
        k,
        num_queries,
    })
}
