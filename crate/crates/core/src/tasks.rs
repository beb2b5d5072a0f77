//! Retrieval tasks built from pair datasets by transitive closure.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Item identifier. Never empty and never contains whitespace, so it can be
/// written into whitespace-separated files.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ItemId(pub(crate) String);

impl ItemId {
    pub fn new(id: impl Into<String>) -> Result<Self> {
        let id = id.into();
        if id.is_empty() || id.chars().any(char::is_whitespace) {
            return Err(Error::InvalidConfig(format!("invalid item id {id:?}")));
        }
        Ok(Self(id))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for ItemId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl AsRef<str> for ItemId {
    fn as_ref(&self) -> &str {
        &self.0
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PairRecord {
    pub id1: ItemId,
    pub id2: ItemId,
    pub text1: String,
    pub text2: String,
    pub label: Option<bool>,
}

impl PairRecord {
    pub fn is_positive(&self) -> bool {
        self.label == Some(true)
    }
}

/// Connected components of the undirected graph given by `pairs`.
///
/// Each component is sorted, and components are ordered by their smallest
/// member.
pub fn transitive_closure<T: Ord + Clone>(pairs: &[(T, T)]) -> Vec<Vec<T>> {
    let mut index: BTreeMap<&T, usize> = BTreeMap::new();
    for (a, b) in pairs {
        for x in [a, b] {
            let next = index.len();
            index.entry(x).or_insert(next);
        }
    }
    let mut parent: Vec<usize> = (0..index.len()).collect();
    fn find(parent: &mut [usize], mut x: usize) -> usize {
        while parent[x] != x {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        x
    }
    for (a, b) in pairs {
        let (ra, rb) = (find(&mut parent, index[a]), find(&mut parent, index[b]));
        if ra != rb {
            parent[ra.max(rb)] = ra.min(rb);
        }
    }
    let mut groups: BTreeMap<usize, Vec<T>> = BTreeMap::new();
    for (item, &i) in &index {
        let root = find(&mut parent, i);
        groups.entry(root).or_default().push((*item).clone());
    }
    let mut components: Vec<Vec<T>> = groups.into_values().collect();
    components.sort_unstable_by(|a, b| a[0].cmp(&b[0]));
    components
}

/// Queries, candidates and (incomplete) relevance judgments.
///
/// Each query is relevant to itself and to everything in its closure
/// component.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RetrievalTask {
    queries: Vec<ItemId>,
    candidates: Vec<(ItemId, String)>,
    relevance: BTreeMap<ItemId, BTreeSet<ItemId>>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TaskStats {
    pub queries: usize,
    pub candidates: usize,
    pub mean_r: f64,
}

impl fmt::Display for TaskStats {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "queries={} candidates={} mean_R={:.2}", self.queries, self.candidates, self.mean_r)
    }
}

impl RetrievalTask {
    /// Checks the task invariants and builds it.
    pub fn new(queries: Vec<ItemId>, candidates: Vec<(ItemId, String)>, relevance: BTreeMap<ItemId, BTreeSet<ItemId>>) -> Result<Self> {
        let mut known = BTreeSet::new();
        for (id, _) in &candidates {
            if !known.insert(id) {
                return Err(Error::DuplicateId(id.to_string()));
            }
        }
        let mut seen_queries = BTreeSet::new();
        for q in &queries {
            if !seen_queries.insert(q) {
                return Err(Error::DuplicateId(q.to_string()));
            }
            if !known.contains(q) {
                return Err(Error::UnknownDoc(q.to_string()));
            }
            match relevance.get(q) {
                Some(rel) if !rel.is_empty() => {
                    if let Some(bad) = rel.iter().find(|c| !known.contains(c)) {
                        return Err(Error::UnknownDoc(bad.to_string()));
                    }
                }
                _ => return Err(Error::InvalidConfig(format!("query {q} has no relevant candidates"))),
            }
        }
        if let Some(extra) = relevance.keys().find(|k| !seen_queries.contains(k)) {
            return Err(Error::UnknownDoc(extra.to_string()));
        }
        Ok(Self {
            queries,
            candidates,
            relevance,
        })
    }

    pub fn queries(&self) -> &[ItemId] {
        &self.queries
    }

    pub fn candidates(&self) -> &[(ItemId, String)] {
        &self.candidates
    }

    pub fn relevance(&self, query: &ItemId) -> Option<&BTreeSet<ItemId>> {
        self.relevance.get(query)
    }

    /// Number of relevant candidates for `query`.
    pub fn r(&self, query: &ItemId) -> Option<usize> {
        self.relevance.get(query).map(BTreeSet::len)
    }

    /// Text lookup table for all candidates.
    pub fn texts(&self) -> HashMap<&ItemId, &str> {
        self.candidates.iter().map(|(id, t)| (id, t.as_str())).collect()
    }

    pub fn stats(&self) -> TaskStats {
        let total: usize = self.relevance.values().map(BTreeSet::len).sum();
        TaskStats {
            queries: self.queries.len(),
            candidates: self.candidates.len(),
            mean_r: if self.queries.is_empty() { 0.0 } else { total as f64 / self.queries.len() as f64 },
        }
    }

    /// Writes `queries.txt`, `candidates.tsv` and `qrels.txt` into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let write = |name: &str, body: &dyn Fn(&mut BufWriter<File>) -> std::io::Result<()>| {
            let path = dir.join(name);
            let mut out = BufWriter::new(File::create(&path).map_err(|e| Error::io(&path, e))?);
            body(&mut out).and_then(|_| out.flush()).map_err(|e| Error::io(&path, e))
        };
        write("queries.txt", &|out| self.queries.iter().try_for_each(|q| writeln!(out, "{q}")))?;
        write("candidates.tsv", &|out| {
            self.candidates
                .iter()
                .try_for_each(|(id, text)| writeln!(out, "{id}\t{}", sanitize(text)))
        })?;
        write("qrels.txt", &|out| write_qrels(out, self))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let queries = read_lines(&dir.join("queries.txt"))?
            .into_iter()
            .filter(|(_, l)| !l.trim().is_empty())
            .map(|(_, l)| ItemId::new(l.trim()))
            .collect::<Result<Vec<_>>>()?;
        let cand_path = dir.join("candidates.tsv");
        let name = cand_path.display().to_string();
        let mut candidates = Vec::new();
        for (line_no, line) in read_lines(&cand_path)? {
            if line.is_empty() {
                continue;
            }
            let (id, text) = line
                .split_once('\t')
                .ok_or_else(|| Error::parse(&name, line_no, "expected `id<TAB>text`"))?;
            let id = ItemId::new(id).map_err(|_| Error::parse(&name, line_no, "invalid id"))?;
            candidates.push((id, text.to_owned()));
        }
        let qrels_path = dir.join("qrels.txt");
        let file = File::open(&qrels_path).map_err(|e| Error::io(&qrels_path, e))?;
        let relevance = read_qrels(BufReader::new(file), &qrels_path.display().to_string())?;
        Self::new(queries, candidates, relevance)
    }
}

fn sanitize(text: &str) -> String {
    text.replace(['\t', '\n', '\r'], " ")
}

fn read_lines(path: &Path) -> Result<Vec<(usize, String)>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    BufReader::new(file)
        .lines()
        .enumerate()
        .map(|(i, l)| l.map(|l| (i + 1, l)).map_err(|e| Error::io(path, e)))
        .collect()
}

/// TREC qrels: `query_id 0 candidate_id 1`.
pub fn write_qrels<W: Write>(out: &mut W, task: &RetrievalTask) -> std::io::Result<()> {
    for q in &task.queries {
        for c in &task.relevance[q] {
            writeln!(out, "{q} 0 {c} 1")?;
        }
    }
    Ok(())
}

/// Reads TREC qrels, keeping judgments with positive relevance.
pub fn read_qrels<R: BufRead>(input: R, source_name: &str) -> Result<BTreeMap<ItemId, BTreeSet<ItemId>>> {
    let mut relevance: BTreeMap<ItemId, BTreeSet<ItemId>> = BTreeMap::new();
    for (i, line) in input.lines().enumerate() {
        let line = line.map_err(|e| Error::io(source_name, e))?;
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.is_empty() {
            continue;
        }
        let [q, _, c, rel] = fields[..] else {
            return Err(Error::parse(source_name, i + 1, "expected `query 0 candidate relevance`"));
        };
        let rel: i64 = rel
            .parse()
            .map_err(|_| Error::parse(source_name, i + 1, "relevance must be an integer"))?;
        if rel > 0 {
            relevance
                .entry(ItemId::new(q)?)
                .or_default()
                .insert(ItemId::new(c)?);
        }
    }
    Ok(relevance)
}

/// Builds the evaluation task from test pairs.
///
/// Items with identical text are merged under the first id seen. Every item
/// of every pair is a candidate; every item of a positive pair is a query.
pub fn build_retrieval_task(test_pairs: &[PairRecord]) -> Result<RetrievalTask> {
    let mut by_text: HashMap<&str, ItemId> = HashMap::new();
    let mut text_of: HashMap<ItemId, &str> = HashMap::new();
    let mut candidates = Vec::new();
    let mut edges = Vec::new();
    let mut queries = Vec::new();
    let mut is_query = BTreeSet::new();
    for pair in test_pairs {
        let mut ends = [None, None];
        for (slot, (id, text)) in [(&pair.id1, &pair.text1), (&pair.id2, &pair.text2)].into_iter().enumerate() {
            if let Some(&prev) = text_of.get(id) {
                if prev != text.as_str() {
                    return Err(Error::DuplicateId(id.to_string()));
                }
            }
            let canon = by_text.entry(text.as_str()).or_insert_with(|| {
                candidates.push((id.clone(), text.clone()));
                id.clone()
            });
            text_of.insert(id.clone(), text.as_str());
            ends[slot] = Some(canon.clone());
        }
        let [Some(a), Some(b)] = ends else { unreachable!() };
        if pair.is_positive() {
            for x in [&a, &b] {
                if is_query.insert(x.clone()) {
                    queries.push(x.clone());
                }
            }
            if a != b {
                edges.push((a, b));
            }
        }
    }
    if queries.is_empty() {
        return Err(Error::NoPositivePairs);
    }
    let mut relevance: BTreeMap<ItemId, BTreeSet<ItemId>> = queries
        .iter()
        .map(|q| (q.clone(), BTreeSet::from([q.clone()])))
        .collect();
    for component in transitive_closure(&edges) {
        let members: BTreeSet<ItemId> = component.iter().cloned().collect();
        for q in component {
            relevance.insert(q, members.clone());
        }
    }
    RetrievalTask::new(queries, candidates, relevance)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PairFormat {
    QuoraTsv,
    AskUbuntu,
    Paralex,
}

impl FromStr for PairFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "quora-tsv" | "quora" => Ok(Self::QuoraTsv),
            "askubuntu" => Ok(Self::AskUbuntu),
            "paralex" => Ok(Self::Paralex),
            other => Err(Error::UnknownFormat(other.to_owned())),
        }
    }
}

impl fmt::Display for PairFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::QuoraTsv => "quora-tsv",
            Self::AskUbuntu => "askubuntu",
            Self::Paralex => "paralex",
        })
    }
}

/// Loads pair records. The AskUbuntu format needs the question-title file
/// in `titles`; the other formats ignore it.
pub fn load_pairs(path: &Path, format: PairFormat, titles: Option<&Path>) -> Result<Vec<PairRecord>> {
    let name = path.display().to_string();
    let open = |p: &Path| File::open(p).map(BufReader::new).map_err(|e| Error::io(p, e));
    match format {
        PairFormat::QuoraTsv => parse_quora(open(path)?, &name),
        PairFormat::Paralex => parse_paralex(open(path)?, &name),
        PairFormat::AskUbuntu => {
            let titles = titles.ok_or_else(|| Error::InvalidConfig("askubuntu format needs a question-title file".into()))?;
            let titles = parse_askubuntu_titles(open(titles)?, &titles.display().to_string())?;
            parse_askubuntu_pairs(open(path)?, &name, &titles)
        }
    }
}

/// Tab-separated `id qid1 qid2 question1 question2 is_duplicate` with a header.
pub fn parse_quora<R: std::io::Read>(input: R, source_name: &str) -> Result<Vec<PairRecord>> {
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(b'\t')
        .has_headers(true)
        .from_reader(input);
    let mut out = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line() as usize);
            Error::parse(source_name, line, e.to_string())
        })?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        let bad = |msg: &str| Error::parse(source_name, line, msg);
        if record.len() != 6 {
            return Err(bad("expected 6 tab-separated fields"));
        }
        let label = match record[5].trim() {
            "1" => true,
            "0" => false,
            _ => return Err(bad("is_duplicate must be 0 or 1")),
        };
        let id1 = ItemId::new(record[1].trim()).map_err(|_| bad("invalid qid1"))?;
        let id2 = ItemId::new(record[2].trim()).map_err(|_| bad("invalid qid2"))?;
        if id1 == id2 {
            return Err(bad("pair joins an item to itself"));
        }
        out.push(PairRecord {
            id1,
            id2,
            text1: record[3].to_owned(),
            text2: record[4].to_owned(),
            label: Some(label),
        });
    }
    Ok(out)
}

/// One positive pair per line, `text1<TAB>text2`. Ids are synthesized per
/// distinct text.
pub fn parse_paralex<R: BufRead>(input: R, source_name: &str) -> Result<Vec<PairRecord>> {
    let mut ids: HashMap<String, ItemId> = HashMap::new();
    let mut intern = |text: &str| {
        let next = ids.len();
        ids.entry(text.to_owned())
            .or_insert_with(|| ItemId(format!("p{next}")))
            .clone()
    };
    let mut out = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line.map_err(|e| Error::io(source_name, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        let [t1, t2] = fields[..] else {
            return Err(Error::parse(source_name, i + 1, "expected `text1<TAB>text2`"));
        };
        let (id1, id2) = (intern(t1), intern(t2));
        if id1 == id2 {
            continue;
        }
        out.push(PairRecord {
            id1,
            id2,
            text1: t1.to_owned(),
            text2: t2.to_owned(),
            label: Some(true),
        });
    }
    Ok(out)
}

/// `id<TAB>title<TAB>body`; the body is ignored.
pub fn parse_askubuntu_titles<R: BufRead>(input: R, source_name: &str) -> Result<HashMap<ItemId, String>> {
    let mut titles = HashMap::new();
    for (i, line) in input.lines().enumerate() {
        let line = line.map_err(|e| Error::io(source_name, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let mut fields = line.splitn(3, '\t');
        let (Some(id), Some(title)) = (fields.next(), fields.next()) else {
            return Err(Error::parse(source_name, i + 1, "expected `id<TAB>title<TAB>body`"));
        };
        let id = ItemId::new(id.trim()).map_err(|_| Error::parse(source_name, i + 1, "invalid id"))?;
        if titles.insert(id.clone(), title.to_owned()).is_some() {
            return Err(Error::DuplicateId(id.to_string()));
        }
    }
    Ok(titles)
}

/// `id<TAB>positive ids[<TAB>candidate ids ...]`, ids space-separated.
/// Candidates that are not positives become negative pairs. Lines without a
/// tab are read as `id positive ids...`.
pub fn parse_askubuntu_pairs<R: BufRead>(input: R, source_name: &str, titles: &HashMap<ItemId, String>) -> Result<Vec<PairRecord>> {
    let mut out = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line.map_err(|e| Error::io(source_name, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let (query, positives, negatives): (&str, Vec<&str>, Vec<&str>) = if line.contains('\t') {
            let fields: Vec<&str> = line.split('\t').collect();
            let positives: Vec<&str> = fields.get(1).map(|f| f.split_whitespace().collect()).unwrap_or_default();
            let candidates: Vec<&str> = fields.get(2).map(|f| f.split_whitespace().collect()).unwrap_or_default();
            let negatives = candidates.into_iter().filter(|c| !positives.contains(c)).collect();
            (fields[0].trim(), positives, negatives)
        } else {
            let mut words = line.split_whitespace();
            let query = words.next().unwrap_or_default();
            (query, words.collect(), Vec::new())
        };
        let lookup = |id: &str| -> Result<(ItemId, String)> {
            let id = ItemId::new(id).map_err(|_| Error::parse(source_name, i + 1, "invalid id"))?;
            let text = titles.get(&id).ok_or_else(|| Error::UnknownDoc(id.to_string()))?.clone();
            Ok((id, text))
        };
        let (qid, qtext) = lookup(query)?;
        for (ids, label) in [(positives, true), (negatives, false)] {
            for other in ids {
                let (id2, text2) = lookup(other)?;
                if id2 == qid {
                    continue;
                }
                out.push(PairRecord {
                    id1: qid.clone(),
                    id2,
                    text1: qtext.clone(),
                    text2,
                    label: Some(label),
                });
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn id(s: &str) -> ItemId {
        ItemId::new(s).unwrap()
    }

    fn rec(a: &str, b: &str, positive: bool) -> PairRecord {
        PairRecord {
            id1: id(a),
            id2: id(b),
            text1: format!("text {a}"),
            text2: format!("text {b}"),
            label: Some(positive),
        }
    }

    fn set(ids: &[&str]) -> BTreeSet<ItemId> {
        ids.iter().map(|s| id(s)).collect()
    }

    #[test]
    fn closure_examples() {
        assert!(transitive_closure::<u32>(&[]).is_empty());
        assert_eq!(transitive_closure(&[("a", "b"), ("b", "c")]), vec![vec!["a", "b", "c"]]);
        assert_eq!(transitive_closure(&[("a", "b"), ("c", "d")]), vec![vec!["a", "b"], vec!["c", "d"]]);
        assert_eq!(transitive_closure(&[("d", "c"), ("b", "a"), ("c", "a")]), vec![vec!["a", "b", "c", "d"]]);
    }

    #[test]
    fn task_with_negative_pair() {
        let task = build_retrieval_task(&[rec("a", "b", true), rec("a", "c", false)]).unwrap();
        assert_eq!(task.queries(), &[id("a"), id("b")]);
        let cands: Vec<&str> = task.candidates().iter().map(|(i, _)| i.as_str()).collect();
        assert_eq!(cands, ["a", "b", "c"]);
        assert_eq!(task.relevance(&id("a")), Some(&set(&["a", "b"])));
        assert_eq!(task.relevance(&id("b")), Some(&set(&["a", "b"])));
        assert_eq!(task.r(&id("c")), None);
    }

    #[test]
    fn closure_recovers_implied_relevance() {
        let task = build_retrieval_task(&[rec("a", "b", true), rec("b", "c", true)]).unwrap();
        assert_eq!(task.relevance(&id("a")), Some(&set(&["a", "b", "c"])));
    }

    #[test]
    fn no_positive_pairs_is_an_error() {
        assert!(matches!(build_retrieval_task(&[rec("a", "b", false)]), Err(Error::NoPositivePairs)));
        assert!(matches!(build_retrieval_task(&[]), Err(Error::NoPositivePairs)));
    }

    #[test]
    fn duplicate_text_merges_items() {
        let mut p = rec("x", "y", true);
        p.text2 = "same".into();
        let mut q = rec("z", "w", true);
        q.text1 = "same".into();
        let task = build_retrieval_task(&[p, q]).unwrap();
        assert_eq!(task.candidates().len(), 3);
        assert_eq!(task.relevance(&id("x")), Some(&set(&["w", "x", "y"])));
    }

    #[test]
    fn toy_stats_line() {
        let task = build_retrieval_task(&[rec("a", "b", true), rec("c", "d", true), rec("a", "e", false)]).unwrap();
        assert_eq!(task.stats().to_string(), "queries=4 candidates=5 mean_R=2.00");
    }

    #[test]
    fn persistence_round_trip() {
        let mut p = rec("a", "b", true);
        p.text1 = "has\ttab\nand newline".into();
        let task = build_retrieval_task(&[p, rec("b", "c", true), rec("c", "d", false)]).unwrap();
        let dir = tempfile::tempdir().unwrap();
        task.save(dir.path()).unwrap();
        let back = RetrievalTask::load(dir.path()).unwrap();
        assert_eq!(back.queries(), task.queries());
        assert_eq!(back.candidates()[0].1, "has tab and newline");
        assert_eq!(back.relevance(&id("a")), task.relevance(&id("a")));
        let qrels = std::fs::read_to_string(dir.path().join("qrels.txt")).unwrap();
        assert!(qrels.starts_with("a 0 a 1\n"));
    }

    #[test]
    fn quora_loader() {
        let data = "id\tqid1\tqid2\tquestion1\tquestion2\tis_duplicate\n0\t1\t2\tHow tall?\tWhat height?\t1\n";
        let pairs = parse_quora(data.as_bytes(), "q").unwrap();
        assert_eq!(pairs.len(), 1);
        assert_eq!(pairs[0].label, Some(true));
        assert_eq!(pairs[0].text2, "What height?");

        let bad = "id\tqid1\tqid2\tquestion1\tquestion2\tis_duplicate\n0\t1\t2\ta\tb\t1\n1\t3\t4\tc\td\tmaybe\n";
        match parse_quora(bad.as_bytes(), "q") {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn askubuntu_loader() {
        let titles = parse_askubuntu_titles("7\tseven\tbody\n12\ttwelve\t\n15\tfifteen\n20\ttwenty\tb\n".as_bytes(), "t").unwrap();
        let pairs = parse_askubuntu_pairs("7 12 15\n".as_bytes(), "p", &titles).unwrap();
        let got: Vec<(&str, &str, Option<bool>)> = pairs.iter().map(|p| (p.id1.as_str(), p.id2.as_str(), p.label)).collect();
        assert_eq!(got, [("7", "12", Some(true)), ("7", "15", Some(true))]);
        assert_eq!(pairs[0].text1, "seven");

        let pairs = parse_askubuntu_pairs("7\t12\t12 20\n".as_bytes(), "p", &titles).unwrap();
        assert_eq!(pairs.len(), 2);
        assert_eq!(pairs[1].label, Some(false));
        assert_eq!(pairs[1].id2, id("20"));

        assert!(matches!(
            parse_askubuntu_pairs("7 99\n".as_bytes(), "p", &titles),
            Err(Error::UnknownDoc(_))
        ));
    }

    #[test]
    fn paralex_loader() {
        let pairs = parse_paralex("how tall is X?\twhat is X's height?\nhow tall is X?\theight of X\n".as_bytes(), "p").unwrap();
        assert_eq!(pairs.len(), 2);
        assert!(pairs[0].is_positive());
        assert_eq!(pairs[0].id1, pairs[1].id1);
        assert_ne!(pairs[0].id2, pairs[1].id2);
        assert!(matches!(parse_paralex("only one\n".as_bytes(), "p"), Err(Error::Parse { line: 1, .. })));
    }

    #[test]
    fn formats_parse() {
        assert_eq!("paralex".parse::<PairFormat>().unwrap(), PairFormat::Paralex);
        assert!(matches!("xml".parse::<PairFormat>(), Err(Error::UnknownFormat(_))));
    }

    #[test]
    fn ids_reject_whitespace() {
        assert!(ItemId::new("a b").is_err());
        assert!(ItemId::new("").is_err());
    }

    fn edges_strategy() -> impl Strategy<Value = Vec<(u8, u8)>> {
        prop::collection::vec((0u8..12, 0u8..12), 0..20)
    }

    proptest! {
        #[test]
        fn relevance_is_symmetric_and_transitive(edges in edges_strategy(), negatives in edges_strategy()) {
            let mk = |(a, b): (u8, u8), positive| rec(&format!("n{a}"), &format!("n{b}"), positive);
            let pairs: Vec<PairRecord> = edges.iter().filter(|(a, b)| a != b).map(|&e| mk(e, true))
                .chain(negatives.iter().filter(|(a, b)| a != b).map(|&e| mk(e, false)))
                .collect();
            prop_assume!(pairs.iter().any(PairRecord::is_positive));
            let task = build_retrieval_task(&pairs).unwrap();
            for a in task.queries() {
                let rel_a = task.relevance(a).unwrap();
                prop_assert!(rel_a.contains(a));
                for b in rel_a {
                    let rel_b = task.relevance(b).unwrap();
                    prop_assert!(rel_b.contains(a));
                    prop_assert_eq!(rel_a, rel_b);
                }
            }
        }
    }
}
