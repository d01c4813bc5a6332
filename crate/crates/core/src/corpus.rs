//! Corpus ingestion and candidate noun-chunk extraction.
//!
//! Input is pre-parsed text: every token carries its universal POS tag and a
//! dependency head/relation. Two on-disk formats are supported, CoNLL-U and a
//! JSON-lines equivalent. Gold entity spans may ride along with the sentences;
//! they are kept for evaluation and never consulted by the training path.
//!
//! A candidate chunk is the maximal contiguous run of tokens that reach a
//! `NOUN`/`PROPN` head through `compound`, `amod`, `nummod`, `det` or `flat`
//! edges, with the head itself included.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Relations through which a token joins the chunk of its head noun.
pub const CHUNK_RELATIONS: [&str; 5] = ["compound", "amod", "nummod", "det", "flat"];

/// MISC-column key used to carry BIO gold labels in CoNLL-U files.
pub const GOLD_MISC_KEY: &str = "Entity";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Token {
    pub surface: String,
    pub lemma: String,
    pub pos: String,
    /// Index of the syntactic head; `None` is the ROOT.
    pub head: Option<usize>,
    pub deprel: String,
}

impl Token {
    pub fn is_nominal(&self) -> bool {
        self.pos == "NOUN" || self.pos == "PROPN"
    }
}

/// Half-open token range `[start, end)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Span {
    pub start: usize,
    pub end: usize,
}

impl Span {
    pub fn new(start: usize, end: usize) -> Self {
        Span { start, end }
    }

    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end <= self.start
    }

    pub fn contains(&self, other: &Span) -> bool {
        self.start <= other.start && other.end <= self.end
    }

    pub fn overlaps(&self, other: &Span) -> bool {
        self.start < other.end && other.start < self.end
    }
}

impl fmt::Display for Span {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}..{}", self.start, self.end)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct GoldSpan {
    pub start: usize,
    pub end: usize,
    pub label: String,
}

impl GoldSpan {
    pub fn span(&self) -> Span {
        Span::new(self.start, self.end)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sentence {
    pub id: String,
    pub tokens: Vec<Token>,
    /// Evaluation-only annotation.
    #[serde(default)]
    pub gold_spans: Vec<GoldSpan>,
}

impl Sentence {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Checks head indices, POS tags, gold spans and acyclicity.
    pub fn validate(&self) -> Result<()> {
        let invalid = |message: String| Error::InvalidSentence {
            sentence: self.id.clone(),
            message,
        };
        if self.tokens.is_empty() {
            return Err(invalid("sentence has no tokens".into()));
        }
        for (i, token) in self.tokens.iter().enumerate() {
            if token.pos.is_empty() {
                return Err(invalid(format!("token {i} has an empty POS tag")));
            }
            match token.head {
                Some(h) if h == i => {
                    return Err(invalid(format!("token {i} is its own head")));
                }
                Some(h) if h >= self.tokens.len() => {
                    return Err(invalid(format!("token {i} has out-of-range head {h}")));
                }
                _ => {}
            }
        }
        // Every head chain must reach ROOT within n steps.
        let n = self.tokens.len();
        let mut state = vec![0u8; n]; // 0 unknown, 1 on current path, 2 reaches root
        for start in 0..n {
            let mut path = Vec::new();
            let mut cur = Some(start);
            while let Some(c) = cur {
                match state[c] {
                    2 => break,
                    1 => return Err(Error::CyclicDependency(self.id.clone())),
                    _ => {
                        state[c] = 1;
                        path.push(c);
                        cur = self.tokens[c].head;
                    }
                }
            }
            for p in path {
                state[p] = 2;
            }
        }
        for g in &self.gold_spans {
            if g.start >= g.end || g.end > n {
                return Err(invalid(format!(
                    "gold span {}..{} is out of bounds",
                    g.start, g.end
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CorpusFormat {
    Conllu,
    Jsonl,
}

impl CorpusFormat {
    /// Guesses the format from a file extension.
    pub fn from_path(path: &Path) -> Option<Self> {
        match path.extension()?.to_str()? {
            "conllu" | "conll" => Some(CorpusFormat::Conllu),
            "jsonl" | "json" => Some(CorpusFormat::Jsonl),
            _ => None,
        }
    }
}

impl FromStr for CorpusFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "conllu" => Ok(CorpusFormat::Conllu),
            "jsonl" => Ok(CorpusFormat::Jsonl),
            other => Err(Error::Config(format!("unknown corpus format `{other}`"))),
        }
    }
}

/// The unlabeled corpus. Immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub struct UnlabeledPool {
    sentences: Vec<Sentence>,
    by_id: HashMap<String, usize>,
}

impl UnlabeledPool {
    pub fn new(sentences: Vec<Sentence>) -> Result<Self> {
        let mut by_id = HashMap::with_capacity(sentences.len());
        for (i, s) in sentences.iter().enumerate() {
            s.validate()?;
            if by_id.insert(s.id.clone(), i).is_some() {
                return Err(Error::InvalidSentence {
                    sentence: s.id.clone(),
                    message: "duplicate sentence id".into(),
                });
            }
        }
        Ok(UnlabeledPool { sentences, by_id })
    }

    pub fn sentences(&self) -> &[Sentence] {
        &self.sentences
    }

    pub fn sentence(&self, index: usize) -> &Sentence {
        &self.sentences[index]
    }

    pub fn get(&self, id: &str) -> Option<&Sentence> {
        self.by_id.get(id).map(|&i| &self.sentences[i])
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.by_id.get(id).copied()
    }

    pub fn len(&self) -> usize {
        self.sentences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sentences.is_empty()
    }

    pub fn token_count(&self) -> usize {
        self.sentences.iter().map(Sentence::len).sum()
    }

    pub fn has_gold(&self) -> bool {
        self.sentences.iter().any(|s| !s.gold_spans.is_empty())
    }
}

pub fn load_corpus(path: &Path, format: CorpusFormat) -> Result<UnlabeledPool> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let origin = path.display().to_string();
    let reader = BufReader::new(file);
    let sentences = match format {
        CorpusFormat::Conllu => parse_conllu(reader, &origin)?,
        CorpusFormat::Jsonl => parse_jsonl(reader, &origin)?,
    };
    UnlabeledPool::new(sentences)
}

pub fn save_corpus(pool: &UnlabeledPool, path: &Path, format: CorpusFormat) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    match format {
        CorpusFormat::Conllu => write_conllu(pool.sentences(), &mut out),
        CorpusFormat::Jsonl => write_jsonl(pool.sentences(), &mut out),
    }
    .and_then(|_| out.flush())
    .map_err(|e| Error::io(path, e))
}

fn parse_error(origin: &str, line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        origin: origin.to_string(),
        line,
        message: message.into(),
    }
}

/// Parses CoNLL-U. Multiword-token ranges and empty nodes are skipped; gold
/// labels are read from `Entity=B-x|I-x` in the MISC column.
pub fn parse_conllu<R: BufRead>(reader: R, origin: &str) -> Result<Vec<Sentence>> {
    let mut sentences = Vec::new();
    let mut tokens: Vec<Token> = Vec::new();
    let mut bio: Vec<Option<String>> = Vec::new();
    let mut sent_id: Option<String> = None;
    let mut first_line = 0;

    let mut finish = |tokens: &mut Vec<Token>,
                      bio: &mut Vec<Option<String>>,
                      sent_id: &mut Option<String>,
                      first_line: usize|
     -> Result<()> {
        if tokens.is_empty() {
            *sent_id = None;
            return Ok(());
        }
        let id = sent_id
            .take()
            .unwrap_or_else(|| format!("s{}", sentences.len() + 1));
        let gold_spans = spans_from_bio(bio).map_err(|m| parse_error(origin, first_line, m))?;
        sentences.push(Sentence {
            id,
            tokens: std::mem::take(tokens),
            gold_spans,
        });
        bio.clear();
        Ok(())
    };

    for (i, line) in reader.lines().enumerate() {
        let lineno = i + 1;
        let line = line.map_err(|e| parse_error(origin, lineno, e.to_string()))?;
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            finish(&mut tokens, &mut bio, &mut sent_id, first_line)?;
            continue;
        }
        if let Some(comment) = line.strip_prefix('#') {
            if let Some((key, value)) = comment.split_once('=') {
                if key.trim() == "sent_id" {
                    sent_id = Some(value.trim().to_string());
                }
            }
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 10 {
            return Err(parse_error(
                origin,
                lineno,
                format!("expected 10 tab-separated columns, found {}", cols.len()),
            ));
        }
        if cols[0].contains('-') || cols[0].contains('.') {
            continue;
        }
        let id: usize = cols[0]
            .parse()
            .map_err(|_| parse_error(origin, lineno, format!("bad token id `{}`", cols[0])))?;
        if tokens.is_empty() {
            first_line = lineno;
        }
        if id != tokens.len() + 1 {
            return Err(parse_error(
                origin,
                lineno,
                format!("token id {id} out of sequence"),
            ));
        }
        let head: usize = cols[6]
            .parse()
            .map_err(|_| parse_error(origin, lineno, format!("bad head `{}`", cols[6])))?;
        if head == id {
            return Err(parse_error(
                origin,
                lineno,
                format!("token {id} is its own head"),
            ));
        }
        let lemma = if cols[2] == "_" && cols[1] != "_" {
            cols[1].to_lowercase()
        } else {
            cols[2].to_string()
        };
        tokens.push(Token {
            surface: cols[1].to_string(),
            lemma,
            pos: cols[3].to_string(),
            head: head.checked_sub(1),
            deprel: cols[7].to_string(),
        });
        let tag = cols[9]
            .split('|')
            .filter_map(|kv| kv.split_once('='))
            .find(|(k, _)| *k == GOLD_MISC_KEY)
            .map(|(_, v)| v.to_string());
        bio.push(tag);
    }
    finish(&mut tokens, &mut bio, &mut sent_id, first_line)?;
    Ok(sentences)
}

fn spans_from_bio(tags: &[Option<String>]) -> std::result::Result<Vec<GoldSpan>, String> {
    let mut spans: Vec<GoldSpan> = Vec::new();
    let mut open: Option<GoldSpan> = None;
    for (i, tag) in tags.iter().enumerate() {
        let parsed = match tag.as_deref() {
            None | Some("O") | Some("_") => None,
            Some(t) => match t.split_once('-') {
                Some(("B", label)) => Some((true, label)),
                Some(("I", label)) => Some((false, label)),
                _ => return Err(format!("bad gold tag `{t}`")),
            },
        };
        match parsed {
            Some((false, label)) if open.as_ref().is_some_and(|o| o.label == label) => {
                if let Some(o) = open.as_mut() {
                    o.end = i + 1;
                }
            }
            Some((_, label)) => {
                spans.extend(open.take());
                open = Some(GoldSpan {
                    start: i,
                    end: i + 1,
                    label: label.to_string(),
                });
            }
            None => spans.extend(open.take()),
        }
    }
    spans.extend(open);
    Ok(spans)
}

#[derive(Deserialize)]
struct JsonSentence {
    id: String,
    tokens: Vec<Token>,
    #[serde(default)]
    gold_spans: Vec<GoldSpan>,
}

pub fn parse_jsonl<R: BufRead>(reader: R, origin: &str) -> Result<Vec<Sentence>> {
    let mut sentences = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let lineno = i + 1;
        let line = line.map_err(|e| parse_error(origin, lineno, e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        let js: JsonSentence = serde_json::from_str(&line)
            .map_err(|e| parse_error(origin, lineno, e.to_string()))?;
        if let Some(i) = js
            .tokens
            .iter()
            .enumerate()
            .position(|(i, t)| t.head == Some(i))
        {
            return Err(parse_error(
                origin,
                lineno,
                format!("token {i} is its own head"),
            ));
        }
        sentences.push(Sentence {
            id: js.id,
            tokens: js.tokens,
            gold_spans: js.gold_spans,
        });
    }
    Ok(sentences)
}

pub fn write_jsonl<W: Write>(sentences: &[Sentence], out: &mut W) -> std::io::Result<()> {
    for s in sentences {
        serde_json::to_writer(&mut *out, s)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn write_conllu<W: Write>(sentences: &[Sentence], out: &mut W) -> std::io::Result<()> {
    for s in sentences {
        let mut tags = vec![None; s.len()];
        for g in &s.gold_spans {
            for (i, slot) in tags.iter_mut().enumerate().take(g.end).skip(g.start) {
                let prefix = if i == g.start { "B" } else { "I" };
                *slot = Some(format!("{prefix}-{}", g.label));
            }
        }
        writeln!(out, "# sent_id = {}", s.id)?;
        let text: Vec<&str> = s.tokens.iter().map(|t| t.surface.as_str()).collect();
        writeln!(out, "# text = {}", text.join(" "))?;
        for (i, t) in s.tokens.iter().enumerate() {
            let misc = match &tags[i] {
                Some(tag) => format!("{GOLD_MISC_KEY}={tag}"),
                None => "_".to_string(),
            };
            writeln!(
                out,
                "{}\t{}\t{}\t{}\t_\t_\t{}\t{}\t_\t{}",
                i + 1,
                t.surface,
                t.lemma,
                t.pos,
                t.head.map_or(0, |h| h + 1),
                t.deprel,
                misc
            )?;
        }
        writeln!(out)?;
    }
    Ok(())
}

/// Chunk text normalization: lowercase, everything else preserved.
pub fn normalize(text: &str) -> String {
    text.to_lowercase()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateChunk {
    pub sentence_id: String,
    /// Position of the sentence in its pool.
    pub sentence_index: usize,
    pub span: Span,
    pub text: String,
    pub left_context: Vec<String>,
    pub right_context: Vec<String>,
    pub head_token: usize,
    /// Corpus-wide number of chunks sharing `text`.
    pub support: usize,
}

/// Maximal noun-chunk spans of one sentence, sorted by start, as
/// `(span, head)` pairs.
pub fn chunk_spans(sentence: &Sentence) -> Vec<(Span, usize)> {
    let tokens = &sentence.tokens;
    let n = tokens.len();
    let joins = |t: &Token| CHUNK_RELATIONS.contains(&t.deprel.as_str());

    let mut spans: Vec<(Span, usize)> = Vec::new();
    for (h, head_tok) in tokens.iter().enumerate() {
        if !head_tok.is_nominal() {
            continue;
        }
        // Members: tokens whose modifier-edge chain passes through h.
        let member = |t: usize| -> bool {
            let mut cur = t;
            for _ in 0..=n {
                if cur == h {
                    return true;
                }
                let tok = &tokens[cur];
                match tok.head {
                    Some(p) if joins(tok) => cur = p,
                    _ => return false,
                }
            }
            false
        };
        let mut start = h;
        while start > 0 && member(start - 1) {
            start -= 1;
        }
        let mut end = h + 1;
        while end < n && member(end) {
            end += 1;
        }
        spans.push((Span::new(start, end), h));
    }
    // Spans are either nested or disjoint; keep the outermost ones.
    let maximal: Vec<(Span, usize)> = spans
        .iter()
        .filter(|(s, _)| !spans.iter().any(|(o, _)| o != s && o.contains(s)))
        .copied()
        .collect();
    let mut maximal = maximal;
    maximal.sort_by_key(|(s, _)| s.start);
    maximal
}

pub fn extract_chunks(pool: &UnlabeledPool) -> Vec<CandidateChunk> {
    let mut chunks = Vec::new();
    for (si, sentence) in pool.sentences().iter().enumerate() {
        for (span, head) in chunk_spans(sentence) {
            let surfaces = |r: std::ops::Range<usize>| -> Vec<String> {
                sentence.tokens[r].iter().map(|t| t.surface.clone()).collect()
            };
            let text = normalize(&surfaces(span.start..span.end).join(" "));
            chunks.push(CandidateChunk {
                sentence_id: sentence.id.clone(),
                sentence_index: si,
                span,
                text,
                left_context: surfaces(0..span.start),
                right_context: surfaces(span.end..sentence.len()),
                head_token: head,
                support: 0,
            });
        }
    }
    let mut counts: HashMap<String, usize> = HashMap::new();
    for c in &chunks {
        *counts.entry(c.text.clone()).or_default() += 1;
    }
    for c in &mut chunks {
        c.support = counts[&c.text];
    }
    chunks
}

/// Chunk texts seen in the corpus, deduplicated.
pub fn distinct_texts(chunks: &[CandidateChunk]) -> HashSet<&str> {
    chunks.iter().map(|c| c.text.as_str()).collect()
}
