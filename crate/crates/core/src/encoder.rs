//! Averaged word-embedding encoder, cosine similarity with an affine logit
//! scale, and the backward pass from similarity-matrix gradients to the
//! embedding table and scale parameters.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::linalg::{dot, normalized, Matrix};
use crate::text::{tokenize, Vocabulary};

pub const DEFAULT_DIM: usize = 300;

/// V×d embedding matrix; the whole parameter set of the question encoder.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    weights: Vec<f64>,
    rows: usize,
    dim: usize,
}

impl EmbeddingTable {
    pub fn zeros(rows: usize, dim: usize) -> Self {
        Self {
            weights: vec![0.0; rows * dim],
            rows,
            dim,
        }
    }

    /// Entries drawn from uniform(-0.5/d, 0.5/d) with a seeded generator.
    pub fn random(rows: usize, dim: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let half = 0.5 / dim as f64;
        let weights = (0..rows * dim).map(|_| rng.random_range(-half..half)).collect();
        Self { weights, rows, dim }
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let dim = rows.first().map_or(0, |r| r.as_ref().len());
        let mut weights = Vec::with_capacity(rows.len() * dim);
        for r in rows {
            let r = r.as_ref();
            if r.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    actual: r.len(),
                });
            }
            if r.iter().any(|x| !x.is_finite()) {
                return Err(Error::InvalidConfig("embedding entries must be finite".into()));
            }
            weights.extend_from_slice(r);
        }
        Ok(Self {
            weights,
            rows: rows.len(),
            dim,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, id: u32) -> &[f64] {
        let start = id as usize * self.dim;
        &self.weights[start..start + self.dim]
    }

    pub fn row_mut(&mut self, id: u32) -> &mut [f64] {
        let start = id as usize * self.dim;
        &mut self.weights[start..start + self.dim]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.weights
    }

    fn check_ids(&self, ids: &[u32]) -> Result<()> {
        match ids.iter().find(|&&id| id as usize >= self.rows) {
            Some(&id) => Err(Error::IdOutOfRange {
                id: id as usize,
                rows: self.rows,
            }),
            None => Ok(()),
        }
    }
}

/// Learned affine transform `alpha * cos + beta` turning a cosine into a logit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AffineScale {
    pub alpha: f64,
    pub beta: f64,
}

impl AffineScale {
    pub const IDENTITY: AffineScale = AffineScale { alpha: 1.0, beta: 0.0 };

    pub fn new(alpha: f64, beta: f64) -> Self {
        Self { alpha, beta }
    }

    pub fn is_finite(&self) -> bool {
        self.alpha.is_finite() && self.beta.is_finite()
    }
}

impl Default for AffineScale {
    fn default() -> Self {
        Self { alpha: 5.0, beta: 0.0 }
    }
}

/// Arithmetic mean of the selected rows; zero vector for an empty list.
pub fn encode_average(table: &EmbeddingTable, ids: &[u32]) -> Result<Vec<f64>> {
    table.check_ids(ids)?;
    let mut out = vec![0.0; table.dim];
    if ids.is_empty() {
        return Ok(out);
    }
    for &id in ids {
        for (o, w) in out.iter_mut().zip(table.row(id)) {
            *o += w;
        }
    }
    let n = ids.len() as f64;
    out.iter_mut().for_each(|x| *x /= n);
    Ok(out)
}

/// `sum(w_i * row_i) / sum(w_i)`; zero vector when the weights sum to zero.
pub fn encode_idf_weighted(table: &EmbeddingTable, ids: &[u32], weights: &[f64]) -> Result<Vec<f64>> {
    if ids.len() != weights.len() {
        return Err(Error::LengthMismatch {
            what: "idf weights",
            expected: ids.len(),
            actual: weights.len(),
        });
    }
    if weights.iter().any(|&w| w < 0.0 || !w.is_finite()) {
        return Err(Error::InvalidConfig("idf weights must be finite and nonnegative".into()));
    }
    table.check_ids(ids)?;
    let mut out = vec![0.0; table.dim];
    let total: f64 = weights.iter().sum();
    if ids.is_empty() || total == 0.0 {
        return Ok(out);
    }
    for (&id, &w) in ids.iter().zip(weights) {
        for (o, x) in out.iter_mut().zip(table.row(id)) {
            *o += w * x;
        }
    }
    out.iter_mut().for_each(|x| *x /= total);
    Ok(out)
}

/// Cosine similarity, defined as 0 when either vector has zero norm.
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let na = dot(a, a).sqrt();
    let nb = dot(b, b).sqrt();
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    dot(a, b) / (na * nb)
}

pub fn scaled_score(cosine: f64, scale: AffineScale) -> f64 {
    scale.alpha * cosine + scale.beta
}

/// Scaled logits and raw cosines for one batch. Row `i` is query `i`,
/// column `j` candidate `j`; the diagonal holds the positives.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityMatrix {
    pub scores: Matrix,
    pub raw_cosines: Matrix,
}

impl SimilarityMatrix {
    pub fn from_cosines(raw_cosines: Matrix, scale: AffineScale) -> Self {
        let scores = raw_cosines.map(|c| scaled_score(c, scale));
        Self { scores, raw_cosines }
    }

    /// A matrix whose scores are given directly; the raw cosines are set
    /// equal to the scores (identity scale).
    pub fn from_scores(scores: Matrix) -> Self {
        Self {
            raw_cosines: scores.clone(),
            scores,
        }
    }

    pub fn batch_size(&self) -> usize {
        self.scores.rows()
    }
}

pub fn similarity_matrix<Q, C>(queries: &[Q], candidates: &[C], scale: AffineScale) -> Result<SimilarityMatrix>
where
    Q: AsRef<[f64]> + Sync,
    C: AsRef<[f64]> + Sync,
{
    if queries.len() != candidates.len() {
        return Err(Error::LengthMismatch {
            what: "candidate encodings",
            expected: queries.len(),
            actual: candidates.len(),
        });
    }
    if queries.is_empty() {
        return Err(Error::InvalidConfig("similarity matrix needs at least one pair".into()));
    }
    let left: Vec<Vec<f64>> = queries.iter().map(|q| normalized(q.as_ref()).0).collect();
    let right: Vec<Vec<f64>> = candidates.iter().map(|c| normalized(c.as_ref()).0).collect();
    Ok(SimilarityMatrix::from_cosines(unit_cosines(&left, &right), scale))
}

fn unit_cosines(left: &[Vec<f64>], right: &[Vec<f64>]) -> Matrix {
    let cols = right.len();
    let data: Vec<Vec<f64>> = left
        .par_iter()
        .map(|u| right.iter().map(|v| dot(u, v)).collect())
        .collect();
    let mut m = Matrix::zeros(left.len(), cols);
    for (i, row) in data.into_iter().enumerate() {
        m.row_mut(i).copy_from_slice(&row);
    }
    m
}

/// Which quantity a loss gradient is taken with respect to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GradientTarget {
    /// `alpha * cos + beta`
    Scores,
    /// Raw cosines; the affine scale receives no gradient.
    RawCosines,
}

/// Gradient rows keyed by token id. Rows absent from the map are zero.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SparseRows {
    dim: usize,
    rows: BTreeMap<u32, Vec<f64>>,
}

impl SparseRows {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            rows: BTreeMap::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, id: u32) -> Option<&[f64]> {
        self.rows.get(&id).map(Vec::as_slice)
    }

    pub fn row_mut(&mut self, id: u32) -> &mut Vec<f64> {
        let dim = self.dim;
        self.rows.entry(id).or_insert_with(|| vec![0.0; dim])
    }

    pub fn iter(&self) -> impl Iterator<Item = (u32, &[f64])> {
        self.rows.iter().map(|(&id, r)| (id, r.as_slice()))
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn add_scaled(&mut self, other: &SparseRows, weight: f64) {
        for (id, r) in other.iter() {
            for (a, b) in self.row_mut(id).iter_mut().zip(r) {
                *a += weight * b;
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParameterGradients {
    pub d_weights: SparseRows,
    pub d_alpha: f64,
    pub d_beta: f64,
}

impl ParameterGradients {
    pub fn zeros(dim: usize) -> Self {
        Self {
            d_weights: SparseRows::new(dim),
            d_alpha: 0.0,
            d_beta: 0.0,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.d_alpha.is_finite()
            && self.d_beta.is_finite()
            && self.d_weights.iter().all(|(_, r)| r.iter().all(|x| x.is_finite()))
    }
}

struct SideForward {
    units: Vec<Vec<f64>>,
    norms: Vec<f64>,
}

impl SideForward {
    fn compute(table: &EmbeddingTable, side: &[Vec<u32>]) -> Result<Self> {
        let mut units = Vec::with_capacity(side.len());
        let mut norms = Vec::with_capacity(side.len());
        for ids in side {
            let (u, n) = normalized(&encode_average(table, ids)?);
            units.push(u);
            norms.push(n);
        }
        Ok(Self { units, norms })
    }
}

/// Cached forward quantities of one training batch: unit encodings and
/// norms for both sides plus the raw cosine matrix.
pub struct BatchForward<'a> {
    left_ids: &'a [Vec<u32>],
    right_ids: &'a [Vec<u32>],
    left: SideForward,
    right: SideForward,
}

impl<'a> BatchForward<'a> {
    pub fn compute(table: &EmbeddingTable, left_ids: &'a [Vec<u32>], right_ids: &'a [Vec<u32>]) -> Result<Self> {
        if left_ids.len() != right_ids.len() {
            return Err(Error::LengthMismatch {
                what: "batch candidate side",
                expected: left_ids.len(),
                actual: right_ids.len(),
            });
        }
        Ok(Self {
            left_ids,
            right_ids,
            left: SideForward::compute(table, left_ids)?,
            right: SideForward::compute(table, right_ids)?,
        })
    }

    pub fn batch_size(&self) -> usize {
        self.left_ids.len()
    }

    /// All-pairs cosines, row = left item, column = right item.
    pub fn cosines(&self) -> Matrix {
        unit_cosines(&self.left.units, &self.right.units)
    }

    pub fn similarity(&self, scale: AffineScale) -> SimilarityMatrix {
        SimilarityMatrix::from_cosines(self.cosines(), scale)
    }

    /// Cosines of the aligned pairs only (the diagonal).
    pub fn pair_cosines(&self) -> Vec<f64> {
        self.left
            .units
            .iter()
            .zip(&self.right.units)
            .map(|(u, v)| dot(u, v))
            .collect()
    }

    /// Backward pass for a dense gradient over the B×B matrix.
    pub fn backward(&self, dim: usize, scale: AffineScale, grad: &Matrix, target: GradientTarget) -> Result<ParameterGradients> {
        let b = self.batch_size();
        if grad.shape() != (b, b) {
            return Err(Error::LengthMismatch {
                what: "similarity gradient rows",
                expected: b,
                actual: grad.rows(),
            });
        }
        let (d_cos, d_alpha, d_beta) = match target {
            GradientTarget::Scores => {
                let cos = self.cosines();
                let d_alpha = grad.as_slice().iter().zip(cos.as_slice()).map(|(g, c)| g * c).sum();
                (grad.map(|g| g * scale.alpha), d_alpha, grad.sum())
            }
            GradientTarget::RawCosines => (grad.clone(), 0.0, 0.0),
        };

        // d/du_left[i] = sum_j G[i][j] v_j ; d/dv_right[j] = sum_i G[i][j] u_i
        let d_left: Vec<Vec<f64>> = (0..b)
            .into_par_iter()
            .map(|i| weighted_sum(dim, (0..b).map(|j| (d_cos.get(i, j), &self.right.units[j]))))
            .collect();
        let d_right: Vec<Vec<f64>> = (0..b)
            .into_par_iter()
            .map(|j| weighted_sum(dim, (0..b).map(|i| (d_cos.get(i, j), &self.left.units[i]))))
            .collect();
        Ok(self.finish(dim, &d_left, &d_right, d_alpha, d_beta))
    }

    /// Backward pass when only the aligned pairs carry gradient, e.g. the
    /// pairwise cross-entropy loss. `grad[i]` is the gradient of pair `i`'s score.
    pub fn backward_pairs(&self, dim: usize, scale: AffineScale, grad: &[f64], target: GradientTarget) -> Result<ParameterGradients> {
        let b = self.batch_size();
        if grad.len() != b {
            return Err(Error::LengthMismatch {
                what: "pair gradient",
                expected: b,
                actual: grad.len(),
            });
        }
        let (factor, d_alpha, d_beta) = match target {
            GradientTarget::Scores => {
                let cos = self.pair_cosines();
                (scale.alpha, dot(grad, &cos), grad.iter().sum())
            }
            GradientTarget::RawCosines => (1.0, 0.0, 0.0),
        };
        let d_left: Vec<Vec<f64>> = (0..b)
            .map(|i| self.right.units[i].iter().map(|v| factor * grad[i] * v).collect())
            .collect();
        let d_right: Vec<Vec<f64>> = (0..b)
            .map(|i| self.left.units[i].iter().map(|u| factor * grad[i] * u).collect())
            .collect();
        Ok(self.finish(dim, &d_left, &d_right, d_alpha, d_beta))
    }

    fn finish(&self, dim: usize, d_left: &[Vec<f64>], d_right: &[Vec<f64>], d_alpha: f64, d_beta: f64) -> ParameterGradients {
        let mut out = ParameterGradients::zeros(dim);
        out.d_alpha = d_alpha;
        out.d_beta = d_beta;
        scatter_side(&mut out.d_weights, self.left_ids, &self.left, d_left);
        scatter_side(&mut out.d_weights, self.right_ids, &self.right, d_right);
        out
    }
}

fn weighted_sum<'v>(dim: usize, terms: impl Iterator<Item = (f64, &'v Vec<f64>)>) -> Vec<f64> {
    let mut acc = vec![0.0; dim];
    for (w, v) in terms {
        if w == 0.0 {
            continue;
        }
        for (a, x) in acc.iter_mut().zip(v) {
            *a += w * x;
        }
    }
    acc
}

/// Chain rule through normalization (`u = e / |e|`) and averaging
/// (`e = mean of rows`), accumulating into the sparse row gradient.
fn scatter_side(out: &mut SparseRows, ids: &[Vec<u32>], fwd: &SideForward, d_units: &[Vec<f64>]) {
    for (k, token_ids) in ids.iter().enumerate() {
        let norm = fwd.norms[k];
        if norm == 0.0 || token_ids.is_empty() {
            continue;
        }
        let u = &fwd.units[k];
        let du = &d_units[k];
        let radial = dot(du, u);
        let scale = 1.0 / (norm * token_ids.len() as f64);
        let d_enc: Vec<f64> = du.iter().zip(u).map(|(g, x)| (g - radial * x) * scale).collect();
        for &id in token_ids {
            for (a, g) in out.row_mut(id).iter_mut().zip(&d_enc) {
                *a += g;
            }
        }
    }
}

/// Gradients of a scalar loss with respect to the embedding rows and the
/// affine scale, given the loss gradient over the batch similarity matrix.
pub fn encoder_backward(
    left_ids: &[Vec<u32>],
    right_ids: &[Vec<u32>],
    table: &EmbeddingTable,
    scale: AffineScale,
    d_matrix: &Matrix,
    target: GradientTarget,
) -> Result<ParameterGradients> {
    BatchForward::compute(table, left_ids, right_ids)?.backward(table.dim(), scale, d_matrix, target)
}

/// How question text is turned into a vector at retrieval time.
#[derive(Debug, Clone)]
pub enum Weighting {
    Uniform,
    /// Per-token-id IDF weights.
    Idf(Vec<f64>),
}

/// Tokenizer + vocabulary + table, encoding raw text end to end.
#[derive(Debug, Clone)]
pub struct TextEncoder {
    pub vocab: Vocabulary,
    pub table: EmbeddingTable,
    pub weighting: Weighting,
}

impl TextEncoder {
    pub fn new(vocab: Vocabulary, table: EmbeddingTable) -> Result<Self> {
        if vocab.len() != table.rows() {
            return Err(Error::LengthMismatch {
                what: "embedding table rows",
                expected: vocab.len(),
                actual: table.rows(),
            });
        }
        Ok(Self {
            vocab,
            table,
            weighting: Weighting::Uniform,
        })
    }

    /// Switch to IDF weighting with statistics counted over `corpus`.
    pub fn with_idf_from<S: AsRef<str>>(mut self, corpus: &[S]) -> Result<Self> {
        let docs: Vec<Vec<String>> = corpus
            .iter()
            .map(|t| tokenize(t.as_ref()).into_iter().map(|t| t.into_string()).collect())
            .collect();
        self.vocab.recount(&docs);
        let weights = self
            .vocab
            .tokens()
            .map(|t| self.vocab.idf(t))
            .collect::<Result<Vec<_>>>()?;
        self.weighting = Weighting::Idf(weights);
        Ok(self)
    }

    pub fn token_ids(&self, text: &str) -> Vec<u32> {
        self.vocab.ids(&tokenize(text))
    }

    pub fn encode(&self, text: &str) -> Vec<f64> {
        let ids = self.token_ids(text);
        let enc = match &self.weighting {
            Weighting::Uniform => encode_average(&self.table, &ids),
            Weighting::Idf(w) => {
                let weights: Vec<f64> = ids.iter().map(|&id| w[id as usize]).collect();
                encode_idf_weighted(&self.table, &ids, &weights)
            }
        };
        enc.expect("vocabulary ids are always in range of the table")
    }

    pub fn encode_all<S: AsRef<str> + Sync>(&self, texts: &[S]) -> Vec<Vec<f64>> {
        texts.par_iter().map(|t| self.encode(t.as_ref())).collect()
    }
}

/// Write `<V> <d>` then one `token v1 .. vd` line per row.
pub fn write_embeddings<W: Write, S: AsRef<str>>(mut out: W, tokens: &[S], table: &EmbeddingTable) -> Result<()> {
    if tokens.len() != table.rows() {
        return Err(Error::LengthMismatch {
            what: "embedding tokens",
            expected: table.rows(),
            actual: tokens.len(),
        });
    }
    let io = |e| Error::io("<embeddings>", e);
    writeln!(out, "{} {}", table.rows(), table.dim()).map_err(io)?;
    for (id, tok) in tokens.iter().enumerate() {
        write!(out, "{}", tok.as_ref()).map_err(io)?;
        for x in table.row(id as u32) {
            write!(out, " {x}").map_err(io)?;
        }
        writeln!(out).map_err(io)?;
    }
    out.flush().map_err(io)
}

/// Read the whitespace-delimited embedding text format. The `<V> <d>`
/// header is optional; without it the dimension comes from the first row.
pub fn read_embeddings<R: BufRead>(input: R, source_name: &str) -> Result<(Vocabulary, EmbeddingTable)> {
    let mut tokens = Vec::new();
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut declared: Option<(usize, usize)> = None;
    for (idx, line) in input.lines().enumerate() {
        let lineno = idx + 1;
        let line = line.map_err(|e| Error::parse(source_name, lineno, e.to_string()))?;
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.is_empty() {
            continue;
        }
        if idx == 0 && fields.len() == 2 {
            if let (Ok(v), Ok(d)) = (fields[0].parse::<usize>(), fields[1].parse::<usize>()) {
                declared = Some((v, d));
                continue;
            }
        }
        let dim = declared.map(|(_, d)| d).or_else(|| rows.first().map(Vec::len)).unwrap_or(fields.len() - 1);
        if fields.len() - 1 != dim {
            return Err(Error::parse(
                source_name,
                lineno,
                format!("expected {dim} values, found {}", fields.len() - 1),
            ));
        }
        let row = fields[1..]
            .iter()
            .map(|f| f.parse::<f64>().ok().filter(|x| x.is_finite()))
            .collect::<Option<Vec<_>>>()
            .ok_or_else(|| Error::parse(source_name, lineno, "non-numeric or non-finite value"))?;
        tokens.push(fields[0].to_owned());
        rows.push(row);
    }
    if let Some((v, _)) = declared {
        if v != rows.len() {
            return Err(Error::parse(source_name, 1, format!("header declares {v} rows, found {}", rows.len())));
        }
    }
    let vocab = Vocabulary::from_tokens(tokens).map_err(|e| Error::parse(source_name, 0, e.to_string()))?;
    let table = if rows.is_empty() {
        EmbeddingTable::zeros(0, declared.map_or(0, |(_, d)| d))
    } else {
        EmbeddingTable::from_rows(&rows)?
    };
    Ok((vocab, table))
}

pub fn save_embeddings<S: AsRef<str>>(path: &Path, tokens: &[S], table: &EmbeddingTable) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_embeddings(BufWriter::new(file), tokens, table).map_err(|e| match e {
        Error::Io { source, .. } => Error::io(path, source),
        other => other,
    })
}

pub fn load_embeddings(path: &Path) -> Result<(Vocabulary, EmbeddingTable)> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_embeddings(BufReader::new(file), &path.display().to_string())
}
