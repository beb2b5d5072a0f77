//! Tokenization, vocabulary construction and document-frequency statistics.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};

/// A lowercased unigram.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Token(String);

impl Token {
    pub fn as_str(&self) -> &str {
        &self.0
    }

    pub fn into_string(self) -> String {
        self.0
    }
}

impl AsRef<str> for Token {
    fn as_ref(&self) -> &str {
        &self.0
    }
}

impl std::fmt::Display for Token {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

/// Lowercase, split on whitespace, strip leading and trailing punctuation
/// from each piece and drop whatever ends up empty.
pub fn tokenize(text: &str) -> Vec<Token> {
    text.to_lowercase()
        .split_whitespace()
        .filter_map(|piece| {
            let trimmed = piece.trim_matches(|c: char| c.is_ascii_punctuation() || is_unicode_punct(c));
            (!trimmed.is_empty()).then(|| Token(trimmed.to_owned()))
        })
        .collect()
}

fn is_unicode_punct(c: char) -> bool {
    // General punctuation block plus the common typographic quotes.
    matches!(c, '\u{2010}'..='\u{2027}' | '\u{2030}'..='\u{205E}' | '\u{00A1}' | '\u{00BF}' | '\u{00AB}' | '\u{00BB}')
}

/// Smoothed inverse document frequency, `ln((1 + n) / (1 + df)) + 1`.
///
/// Shared by the vocabulary statistics and the TFIDF scorer so both use a
/// single definition.
pub fn smoothed_idf(num_docs: usize, doc_freq: usize) -> f64 {
    ((1.0 + num_docs as f64) / (1.0 + doc_freq as f64)).ln() + 1.0
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Vocabulary {
    token_to_id: HashMap<String, u32>,
    id_to_token: Vec<String>,
    doc_freq: Vec<usize>,
    num_docs: usize,
}

impl Vocabulary {
    /// Build a vocabulary keeping tokens that occur at least `min_count`
    /// times in total. Ids go by descending frequency, ties lexicographic.
    pub fn build<D, T>(corpus: &[D], min_count: usize) -> Result<Self>
    where
        D: AsRef<[T]>,
        T: AsRef<str>,
    {
        if min_count == 0 {
            return Err(Error::InvalidConfig("min_count must be at least 1".into()));
        }
        let mut counts: HashMap<&str, (usize, usize)> = HashMap::new();
        let mut seen: Vec<&str> = Vec::new();
        for doc in corpus {
            seen.clear();
            for tok in doc.as_ref() {
                let tok = tok.as_ref();
                counts.entry(tok).or_default().0 += 1;
                seen.push(tok);
            }
            seen.sort_unstable();
            seen.dedup();
            for tok in &seen {
                counts.get_mut(tok).expect("counted above").1 += 1;
            }
        }

        let mut kept: Vec<(&str, usize, usize)> = counts
            .into_iter()
            .filter(|&(_, (total, _))| total >= min_count)
            .map(|(tok, (total, df))| (tok, total, df))
            .collect();
        kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));

        let mut vocab = Vocabulary {
            num_docs: corpus.len(),
            ..Default::default()
        };
        for (tok, _, df) in kept {
            vocab.push(tok.to_owned(), df);
        }
        Ok(vocab)
    }

    /// A vocabulary over a fixed token list with no document statistics,
    /// e.g. the rows of a pretrained embedding file.
    pub fn from_tokens<I, S>(tokens: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut vocab = Vocabulary::default();
        for tok in tokens {
            let tok = tok.into();
            if vocab.token_to_id.contains_key(&tok) {
                return Err(Error::DuplicateId(tok));
            }
            vocab.push(tok, 0);
        }
        Ok(vocab)
    }

    fn push(&mut self, token: String, doc_freq: usize) {
        let id = self.id_to_token.len() as u32;
        self.token_to_id.insert(token.clone(), id);
        self.id_to_token.push(token);
        self.doc_freq.push(doc_freq);
    }

    pub fn len(&self) -> usize {
        self.id_to_token.len()
    }

    pub fn is_empty(&self) -> bool {
        self.id_to_token.is_empty()
    }

    pub fn num_docs(&self) -> usize {
        self.num_docs
    }

    pub fn id(&self, token: &str) -> Option<u32> {
        self.token_to_id.get(token).copied()
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.id_to_token.get(id as usize).map(String::as_str)
    }

    pub fn tokens(&self) -> impl ExactSizeIterator<Item = &str> {
        self.id_to_token.iter().map(String::as_str)
    }

    /// Document frequency; zero for out-of-vocabulary tokens.
    pub fn doc_freq(&self, token: &str) -> usize {
        self.id(token).map_or(0, |id| self.doc_freq[id as usize])
    }

    /// Map tokens to ids, dropping out-of-vocabulary ones.
    pub fn ids<T: AsRef<str>>(&self, tokens: &[T]) -> Vec<u32> {
        tokens.iter().filter_map(|t| self.id(t.as_ref())).collect()
    }

    /// Smoothed IDF of `token`. Fails when no documents have been counted.
    pub fn idf(&self, token: &str) -> Result<f64> {
        if self.num_docs == 0 {
            return Err(Error::UnbuiltStatistics);
        }
        Ok(smoothed_idf(self.num_docs, self.doc_freq(token)))
    }

    /// Replace document statistics with counts over `corpus`, keeping ids.
    pub fn recount<D, T>(&mut self, corpus: &[D])
    where
        D: AsRef<[T]>,
        T: AsRef<str>,
    {
        self.doc_freq.iter_mut().for_each(|df| *df = 0);
        let mut seen = Vec::new();
        for doc in corpus {
            seen.clear();
            seen.extend(doc.as_ref().iter().filter_map(|t| self.id(t.as_ref())));
            seen.sort_unstable();
            seen.dedup();
            for &id in &seen {
                self.doc_freq[id as usize] += 1;
            }
        }
        self.num_docs = corpus.len();
    }

    /// Writes `#num_docs=<N>` then one `token<TAB>id<TAB>doc_freq` line per token.
    pub fn write_to<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "#num_docs={}", self.num_docs)?;
        for (id, tok) in self.id_to_token.iter().enumerate() {
            writeln!(out, "{tok}\t{id}\t{}", self.doc_freq[id])?;
        }
        out.flush()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_to(BufWriter::new(file)).map_err(|e| Error::io(path, e))
    }

    pub fn read_from<R: BufRead>(input: R, source_name: &str) -> Result<Self> {
        let mut vocab = Vocabulary::default();
        let mut header_seen = false;
        for (idx, line) in input.lines().enumerate() {
            let lineno = idx + 1;
            let line = line.map_err(|e| Error::parse(source_name, lineno, e.to_string()))?;
            if line.is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix("#num_docs=") {
                vocab.num_docs = rest
                    .trim()
                    .parse()
                    .map_err(|_| Error::parse(source_name, lineno, "bad num_docs header"))?;
                header_seen = true;
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            let [tok, id, df] = fields[..] else {
                return Err(Error::parse(source_name, lineno, "expected token<TAB>id<TAB>doc_freq"));
            };
            let id: usize = id
                .parse()
                .map_err(|_| Error::parse(source_name, lineno, "bad id"))?;
            if id != vocab.len() {
                return Err(Error::parse(source_name, lineno, format!("ids must be dense; expected {}", vocab.len())));
            }
            let df: usize = df
                .parse()
                .map_err(|_| Error::parse(source_name, lineno, "bad doc_freq"))?;
            if vocab.token_to_id.contains_key(tok) {
                return Err(Error::parse(source_name, lineno, format!("duplicate token `{tok}`")));
            }
            vocab.push(tok.to_owned(), df);
        }
        if !header_seen {
            return Err(Error::parse(source_name, 1, "missing #num_docs header"));
        }
        if let Some(df) = vocab.doc_freq.iter().find(|&&df| df > vocab.num_docs) {
            return Err(Error::parse(source_name, 1, format!("doc_freq {df} exceeds num_docs {}", vocab.num_docs)));
        }
        Ok(vocab)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_from(BufReader::new(file), &path.display().to_string())
    }
}
