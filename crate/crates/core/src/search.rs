//! Cosine top-K retrieval over encoded candidates, exhaustive or over 8-bit
//! scalar-quantized codes.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BinaryHeap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::linalg::{dot, l2_norm};
use crate::tasks::ItemId;

/// Results for one query, best first. Scores never increase down the list
/// and no id appears twice.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RankedList {
    entries: Vec<(ItemId, f64)>,
}

impl RankedList {
    pub fn new(entries: Vec<(ItemId, f64)>) -> Result<Self> {
        if let Some(w) = entries.windows(2).find(|w| w[1].1 > w[0].1) {
            return Err(Error::InvalidConfig(format!("ranked list not sorted at {}", w[1].0)));
        }
        let mut seen = HashSet::with_capacity(entries.len());
        if let Some((dup, _)) = entries.iter().find(|(id, _)| !seen.insert(id)) {
            return Err(Error::DuplicateId(dup.to_string()));
        }
        Ok(Self { entries })
    }

    pub fn entries(&self) -> &[(ItemId, f64)] {
        &self.entries
    }

    pub fn ids(&self) -> impl Iterator<Item = &ItemId> {
        self.entries.iter().map(|(id, _)| id)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

#[derive(Debug, Clone, Copy)]
struct Hit {
    score: f64,
    order: u32,
    row: u32,
}

impl Hit {
    /// `Less` means a better hit: higher score, then smaller id.
    fn rank_cmp(&self, other: &Self) -> Ordering {
        other.score.total_cmp(&self.score).then(self.order.cmp(&other.order))
    }
}

impl PartialEq for Hit {
    fn eq(&self, other: &Self) -> bool {
        self.rank_cmp(other) == Ordering::Equal
    }
}

impl Eq for Hit {}

impl PartialOrd for Hit {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Hit {
    fn cmp(&self, other: &Self) -> Ordering {
        self.rank_cmp(other)
    }
}

/// Position of each id in ascending id order, for tie-breaking.
pub(crate) fn id_order(ids: &[ItemId]) -> Vec<u32> {
    let mut idx: Vec<usize> = (0..ids.len()).collect();
    idx.sort_unstable_by(|&a, &b| ids[a].cmp(&ids[b]));
    let mut order = vec![0u32; ids.len()];
    for (rank, i) in idx.into_iter().enumerate() {
        order[i] = rank as u32;
    }
    order
}

/// Keeps the best `k` of `(row, score)` with a size-`k` heap whose top is
/// the worst kept hit.
pub(crate) fn select_top_k(k: usize, ids: &[ItemId], order: &[u32], scored: impl Iterator<Item = (usize, f64)>) -> RankedList {
    let mut heap: BinaryHeap<Hit> = BinaryHeap::with_capacity(k + 1);
    for (row, score) in scored {
        let hit = Hit {
            // Adding 0.0 folds -0.0 into +0.0 so signed zeros tie.
            score: score + 0.0,
            order: order[row],
            row: row as u32,
        };
        if heap.len() < k {
            heap.push(hit);
        } else if let Some(worst) = heap.peek() {
            if hit < *worst {
                heap.pop();
                heap.push(hit);
            }
        }
    }
    let entries = heap
        .into_sorted_vec()
        .into_iter()
        .map(|h| (ids[h.row as usize].clone(), h.score))
        .collect();
    RankedList { entries }
}

fn check_k(k: usize) -> Result<()> {
    if k == 0 {
        return Err(Error::InvalidConfig("K must be >= 1".into()));
    }
    Ok(())
}

/// Unit-normalized candidate encodings. Zero vectors are kept as zeros and
/// flagged so they score 0 against everything.
#[derive(Debug, Clone, PartialEq)]
pub struct CandidateIndex {
    ids: Vec<ItemId>,
    dim: usize,
    vectors: Vec<f64>,
    zero: Vec<bool>,
    order: Vec<u32>,
}

impl CandidateIndex {
    pub fn build(encodings: Vec<(ItemId, Vec<f64>)>) -> Result<Self> {
        let dim = encodings.first().map_or(0, |(_, v)| v.len());
        let mut seen = HashSet::with_capacity(encodings.len());
        let mut ids = Vec::with_capacity(encodings.len());
        let mut vectors = Vec::with_capacity(encodings.len() * dim);
        let mut zero = Vec::with_capacity(encodings.len());
        for (id, v) in encodings {
            if v.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    actual: v.len(),
                });
            }
            if !seen.insert(id.clone()) {
                return Err(Error::DuplicateId(id.to_string()));
            }
            let norm = l2_norm(&v);
            zero.push(norm == 0.0);
            if norm == 0.0 {
                vectors.extend(std::iter::repeat_n(0.0, dim));
            } else {
                vectors.extend(v.iter().map(|x| x / norm));
            }
            ids.push(id);
        }
        let order = id_order(&ids);
        Ok(Self {
            ids,
            dim,
            vectors,
            zero,
            order,
        })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn ids(&self) -> &[ItemId] {
        &self.ids
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.vectors[i * self.dim..(i + 1) * self.dim]
    }

    pub fn is_zero(&self, i: usize) -> bool {
        self.zero[i]
    }

    fn check_query(&self, query: &[f64]) -> Result<()> {
        if !self.is_empty() && query.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                actual: query.len(),
            });
        }
        Ok(())
    }

    /// Writes the `N d` header then `id v1 .. vd` per row.
    pub fn write_text<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "{} {}", self.len(), self.dim)?;
        for (i, id) in self.ids.iter().enumerate() {
            write!(out, "{id}")?;
            for x in self.row(i) {
                write!(out, " {x}")?;
            }
            writeln!(out)?;
        }
        out.flush()
    }
}

fn query_unit(query: &[f64]) -> Option<Vec<f64>> {
    let norm = l2_norm(query);
    (norm > 0.0).then(|| query.iter().map(|x| x / norm).collect())
}

/// Top `k` candidates by cosine with `query`, ties by ascending id.
pub fn exhaustive_top_k(index: &CandidateIndex, query: &[f64], k: usize) -> Result<RankedList> {
    check_k(k)?;
    index.check_query(query)?;
    let q = query_unit(query);
    let scored = (0..index.len()).map(|i| {
        let s = match &q {
            Some(q) if !index.zero[i] => dot(q, index.row(i)),
            _ => 0.0,
        };
        (i, s)
    });
    Ok(select_top_k(k, &index.ids, &index.order, scored))
}

/// Per-dimension 8-bit codes `round((x - min) / scale)`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedIndex {
    ids: Vec<ItemId>,
    dim: usize,
    mins: Vec<f64>,
    scales: Vec<f64>,
    codes: Vec<u8>,
    zero: Vec<bool>,
    order: Vec<u32>,
}

impl QuantizedIndex {
    pub fn build(index: &CandidateIndex) -> Self {
        let dim = index.dim;
        let mut mins = vec![f64::INFINITY; dim];
        let mut maxs = vec![f64::NEG_INFINITY; dim];
        for i in (0..index.len()).filter(|&i| !index.zero[i]) {
            for (d, &x) in index.row(i).iter().enumerate() {
                mins[d] = mins[d].min(x);
                maxs[d] = maxs[d].max(x);
            }
        }
        let mut scales = vec![0.0; dim];
        for d in 0..dim {
            if mins[d] > maxs[d] {
                mins[d] = 0.0;
            } else {
                scales[d] = (maxs[d] - mins[d]) / 255.0;
            }
        }
        let mut codes = Vec::with_capacity(index.len() * dim);
        for i in 0..index.len() {
            for (d, &x) in index.row(i).iter().enumerate() {
                let c = if index.zero[i] || scales[d] == 0.0 {
                    0.0
                } else {
                    ((x - mins[d]) / scales[d]).round().clamp(0.0, 255.0)
                };
                codes.push(c as u8);
            }
        }
        Self {
            ids: index.ids.clone(),
            dim,
            mins,
            scales,
            codes,
            zero: index.zero.clone(),
            order: index.order.clone(),
        }
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn ids(&self) -> &[ItemId] {
        &self.ids
    }

    /// Width of one quantization step in each dimension.
    pub fn steps(&self) -> &[f64] {
        &self.scales
    }

    pub fn decode(&self, i: usize) -> Vec<f64> {
        let codes = &self.codes[i * self.dim..(i + 1) * self.dim];
        codes
            .iter()
            .zip(self.mins.iter().zip(&self.scales))
            .map(|(&c, (m, s))| m + c as f64 * s)
            .collect()
    }
}

/// Top `k` by asymmetric score: the query stays at full precision and is
/// dotted with decoded candidate codes.
pub fn quantized_top_k(qindex: &QuantizedIndex, query: &[f64], k: usize) -> Result<RankedList> {
    check_k(k)?;
    if !qindex.is_empty() && query.len() != qindex.dim {
        return Err(Error::DimensionMismatch {
            expected: qindex.dim,
            actual: query.len(),
        });
    }
    let q = query_unit(query);
    let (base, weights) = match &q {
        Some(q) => (dot(q, &qindex.mins), q.iter().zip(&qindex.scales).map(|(a, s)| a * s).collect()),
        None => (0.0, Vec::new()),
    };
    let dim = qindex.dim;
    let scored = (0..qindex.len()).map(|i| {
        if q.is_none() || qindex.zero[i] {
            return (i, 0.0);
        }
        let codes = &qindex.codes[i * dim..(i + 1) * dim];
        let s = codes.iter().zip(&weights).fold(base, |acc, (&c, w)| acc + w * c as f64);
        (i, s)
    });
    Ok(select_top_k(k, &qindex.ids, &qindex.order, scored))
}

/// Either index behind one query interface.
#[derive(Debug, Clone)]
pub enum SearchIndex {
    Exhaustive(CandidateIndex),
    Quantized(QuantizedIndex),
}

impl SearchIndex {
    pub fn top_k(&self, query: &[f64], k: usize) -> Result<RankedList> {
        match self {
            Self::Exhaustive(i) => exhaustive_top_k(i, query, k),
            Self::Quantized(i) => quantized_top_k(i, query, k),
        }
    }

    /// Runs all queries in parallel; output order follows `queries`.
    pub fn top_k_all(&self, queries: &[Vec<f64>], k: usize) -> Result<Vec<RankedList>> {
        queries.par_iter().map(|q| self.top_k(q, k)).collect()
    }

    const MAGIC: &'static [u8; 4] = b"DEIX";
    const FLAG_QUANTIZED: u64 = 1;

    /// Little-endian binary: magic, `N d flags` as u64, length-prefixed ids,
    /// zero flags, then f64 rows or (mins, steps, u8 codes).
    pub fn write_binary<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        let (ids, dim, zero, flags) = match self {
            Self::Exhaustive(i) => (&i.ids, i.dim, &i.zero, 0),
            Self::Quantized(i) => (&i.ids, i.dim, &i.zero, Self::FLAG_QUANTIZED),
        };
        out.write_all(Self::MAGIC)?;
        for v in [ids.len() as u64, dim as u64, flags] {
            out.write_all(&v.to_le_bytes())?;
        }
        for id in ids {
            out.write_all(&(id.as_str().len() as u32).to_le_bytes())?;
            out.write_all(id.as_str().as_bytes())?;
        }
        out.write_all(&zero.iter().map(|&z| z as u8).collect::<Vec<_>>())?;
        let put = |out: &mut W, xs: &[f64]| xs.iter().try_for_each(|x| out.write_all(&x.to_le_bytes()));
        match self {
            Self::Exhaustive(i) => put(&mut out, &i.vectors)?,
            Self::Quantized(i) => {
                put(&mut out, &i.mins)?;
                put(&mut out, &i.scales)?;
                out.write_all(&i.codes)?;
            }
        }
        out.flush()
    }

    pub fn read_binary<R: Read>(mut input: R, source_name: &str) -> Result<Self> {
        let bad = |msg: &str| Error::parse(source_name, 0, msg);
        let io = |e: std::io::Error| Error::io(source_name, e);
        let mut magic = [0u8; 4];
        input.read_exact(&mut magic).map_err(io)?;
        if &magic != Self::MAGIC {
            return Err(bad("not an index file"));
        }
        let mut u64s = [0u64; 3];
        for v in &mut u64s {
            let mut b = [0u8; 8];
            input.read_exact(&mut b).map_err(io)?;
            *v = u64::from_le_bytes(b);
        }
        let [n, dim, flags] = u64s.map(|v| v as usize);
        let mut ids = Vec::with_capacity(n);
        for _ in 0..n {
            let mut len = [0u8; 4];
            input.read_exact(&mut len).map_err(io)?;
            let mut buf = vec![0u8; u32::from_le_bytes(len) as usize];
            input.read_exact(&mut buf).map_err(io)?;
            let s = String::from_utf8(buf).map_err(|_| bad("id is not utf-8"))?;
            ids.push(ItemId::new(s).map_err(|_| bad("invalid id"))?);
        }
        let mut zero = vec![0u8; n];
        input.read_exact(&mut zero).map_err(io)?;
        let zero: Vec<bool> = zero.into_iter().map(|z| z != 0).collect();
        let mut get = |count: usize| -> Result<Vec<f64>> {
            let mut buf = vec![0u8; count * 8];
            input.read_exact(&mut buf).map_err(io)?;
            Ok(buf.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect())
        };
        let order = id_order(&ids);
        if flags as u64 & Self::FLAG_QUANTIZED == 0 {
            let vectors = get(n * dim)?;
            Ok(Self::Exhaustive(CandidateIndex {
                ids,
                dim,
                vectors,
                zero,
                order,
            }))
        } else {
            let mins = get(dim)?;
            let scales = get(dim)?;
            let mut codes = vec![0u8; n * dim];
            input.read_exact(&mut codes).map_err(io)?;
            Ok(Self::Quantized(QuantizedIndex {
                ids,
                dim,
                mins,
                scales,
                codes,
                zero,
                order,
            }))
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_binary(BufWriter::new(file)).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_binary(BufReader::new(file), &path.display().to_string())
    }
}

/// TREC run lines `query_id Q0 candidate_id rank score tag`, ranks from 1.
pub fn write_run<'a, W: Write>(mut out: W, rankings: impl IntoIterator<Item = (&'a ItemId, &'a RankedList)>, tag: &str) -> std::io::Result<()> {
    for (q, list) in rankings {
        for (rank, (c, score)) in list.entries.iter().enumerate() {
            writeln!(out, "{q} Q0 {c} {} {score} {tag}", rank + 1)?;
        }
    }
    out.flush()
}

/// Parses a TREC run; each query's entries are ordered by rank.
pub fn read_run<R: BufRead>(input: R, source_name: &str) -> Result<BTreeMap<ItemId, RankedList>> {
    let mut raw: BTreeMap<ItemId, Vec<(usize, ItemId, f64)>> = BTreeMap::new();
    for (i, line) in input.lines().enumerate() {
        let line = line.map_err(|e| Error::io(source_name, e))?;
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.is_empty() {
            continue;
        }
        let bad = |msg: &str| Error::parse(source_name, i + 1, msg);
        let [q, _, c, rank, score, _] = fields[..] else {
            return Err(bad("expected `query Q0 candidate rank score tag`"));
        };
        let rank: usize = rank.parse().map_err(|_| bad("rank must be an integer"))?;
        let score: f64 = score.parse().map_err(|_| bad("score must be a number"))?;
        let q = ItemId::new(q).map_err(|_| bad("invalid query id"))?;
        let c = ItemId::new(c).map_err(|_| bad("invalid candidate id"))?;
        raw.entry(q).or_default().push((rank, c, score));
    }
    raw.into_iter()
        .map(|(q, mut rows)| {
            rows.sort_by_key(|r| r.0);
            let list = RankedList::new(rows.into_iter().map(|(_, c, s)| (c, s)).collect())?;
            Ok((q, list))
        })
        .collect()
}
