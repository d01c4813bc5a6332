//! Logical tagging rules.
//!
//! A rule is `antecedent -> entity type`, where the antecedent is a boolean
//! expression over five kinds of atomic predicates:
//!
//! | kind            | payload                         | s-expression               |
//! |-----------------|---------------------------------|----------------------------|
//! | `TokenString`   | normalized chunk text           | `(token "pd")`             |
//! | `PreNGram`      | 1-3 tokens before the chunk     | `(pre "therapy" "for")`    |
//! | `PostNGram`     | 1-3 tokens after the chunk      | `(post "[END]")`           |
//! | `POSTag`        | POS sequence of the chunk       | `(pos "ADJ" "NOUN")`       |
//! | `DependencyRel` | (relation, head lemma) of head  | `(dep "compound" "patient")` |
//!
//! Context n-grams are lowercased. The sequence before a chunk starts with a
//! `[BEGIN]` sentinel; the sequence after it ends with `[END]`, which also
//! absorbs trailing sentence punctuation.

use std::cmp::Ordering;
use std::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::{CandidateChunk, Sentence, Span};
use crate::error::{Error, Result};

pub const BEGIN: &str = "[BEGIN]";
pub const END: &str = "[END]";
/// Head lemma reported for chunks whose head token attaches to ROOT.
pub const ROOT_LEMMA: &str = "[ROOT]";
pub const MAX_NGRAM: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum AtomKind {
    TokenString,
    PreNGram,
    PostNGram,
    PosTag,
    DependencyRel,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Atom {
    TokenString(String),
    PreNGram(Vec<String>),
    PostNGram(Vec<String>),
    PosTag(Vec<String>),
    DependencyRel { relation: String, head_lemma: String },
}

impl Atom {
    pub fn kind(&self) -> AtomKind {
        match self {
            Atom::TokenString(_) => AtomKind::TokenString,
            Atom::PreNGram(_) => AtomKind::PreNGram,
            Atom::PostNGram(_) => AtomKind::PostNGram,
            Atom::PosTag(_) => AtomKind::PosTag,
            Atom::DependencyRel { .. } => AtomKind::DependencyRel,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Rule(format!("{m} in {self}")));
        match self {
            Atom::TokenString(s) if s.is_empty() => bad("empty token string"),
            Atom::PreNGram(g) | Atom::PostNGram(g) if g.is_empty() || g.len() > MAX_NGRAM => {
                bad("n-gram length outside 1..=3")
            }
            Atom::PosTag(p) if p.is_empty() => bad("empty POS sequence"),
            Atom::DependencyRel {
                relation,
                head_lemma,
            } if relation.is_empty() || head_lemma.is_empty() => bad("empty dependency payload"),
            _ => Ok(()),
        }
    }

    pub fn matches(&self, chunk: &CandidateChunk, sentence: &Sentence) -> bool {
        match self {
            Atom::TokenString(s) => chunk.text == *s,
            Atom::PreNGram(g) => pre_ngram(sentence, chunk.span, g.len()).as_ref() == Some(g),
            Atom::PostNGram(g) => post_ngram(sentence, chunk.span, g.len()).as_ref() == Some(g),
            Atom::PosTag(p) => {
                let tokens = &sentence.tokens[chunk.span.start..chunk.span.end];
                tokens.len() == p.len() && tokens.iter().zip(p).all(|(t, p)| t.pos == *p)
            }
            Atom::DependencyRel {
                relation,
                head_lemma,
            } => {
                let (r, l) = dependency_of(sentence, chunk.head_token);
                r == relation && l == *head_lemma
            }
        }
    }
}

impl fmt::Display for Atom {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let (head, args): (&str, Vec<&str>) = match self {
            Atom::TokenString(s) => ("token", vec![s.as_str()]),
            Atom::PreNGram(g) => ("pre", g.iter().map(String::as_str).collect()),
            Atom::PostNGram(g) => ("post", g.iter().map(String::as_str).collect()),
            Atom::PosTag(p) => ("pos", p.iter().map(String::as_str).collect()),
            Atom::DependencyRel {
                relation,
                head_lemma,
            } => ("dep", vec![relation.as_str(), head_lemma.as_str()]),
        };
        write!(f, "({head}")?;
        for a in args {
            write!(f, " {}", quote(a))?;
        }
        write!(f, ")")
    }
}

fn quote(s: &str) -> String {
    serde_json::to_string(s).expect("string serialization cannot fail")
}

/// The `n` context items immediately before `span`, if that many exist.
pub fn pre_ngram(sentence: &Sentence, span: Span, n: usize) -> Option<Vec<String>> {
    // Virtual sequence: [BEGIN] t_0 .. t_{start-1}
    if n == 0 || n > span.start + 1 {
        return None;
    }
    let mut out = Vec::with_capacity(n);
    let first = span.start as isize - n as isize;
    for i in first..span.start as isize {
        if i < 0 {
            out.push(BEGIN.to_string());
        } else {
            out.push(sentence.tokens[i as usize].surface.to_lowercase());
        }
    }
    Some(out)
}

/// End of the sentence body after dropping trailing punctuation, never before
/// `floor`.
fn body_end(sentence: &Sentence, floor: usize) -> usize {
    let mut end = sentence.len();
    while end > floor && sentence.tokens[end - 1].pos == "PUNCT" {
        end -= 1;
    }
    end
}

/// The `n` context items immediately after `span`, if that many exist.
pub fn post_ngram(sentence: &Sentence, span: Span, n: usize) -> Option<Vec<String>> {
    // Virtual sequence: t_end .. t_{body_end-1} [END]
    let body = body_end(sentence, span.end);
    let available = body - span.end + 1;
    if n == 0 || n > available {
        return None;
    }
    let mut out = Vec::with_capacity(n);
    for i in span.end..span.end + n {
        if i < body {
            out.push(sentence.tokens[i].surface.to_lowercase());
        } else {
            out.push(END.to_string());
        }
    }
    Some(out)
}

/// `(relation, lowercase head lemma)` of a token.
pub fn dependency_of(sentence: &Sentence, token: usize) -> (&str, String) {
    let t = &sentence.tokens[token];
    let lemma = match t.head {
        Some(h) => sentence.tokens[h].lemma.to_lowercase(),
        None => ROOT_LEMMA.to_string(),
    };
    (t.deprel.as_str(), lemma)
}

/// Every atom a chunk occurrence instantiates, one per kind and n-gram length.
pub fn instantiate(chunk: &CandidateChunk, sentence: &Sentence) -> Vec<Atom> {
    let mut atoms = vec![Atom::TokenString(chunk.text.clone())];
    for n in 1..=MAX_NGRAM {
        if let Some(g) = pre_ngram(sentence, chunk.span, n) {
            atoms.push(Atom::PreNGram(g));
        }
    }
    for n in 1..=MAX_NGRAM {
        if let Some(g) = post_ngram(sentence, chunk.span, n) {
            atoms.push(Atom::PostNGram(g));
        }
    }
    atoms.push(Atom::PosTag(
        sentence.tokens[chunk.span.start..chunk.span.end]
            .iter()
            .map(|t| t.pos.clone())
            .collect(),
    ));
    let (relation, head_lemma) = dependency_of(sentence, chunk.head_token);
    atoms.push(Atom::DependencyRel {
        relation: relation.to_string(),
        head_lemma,
    });
    atoms
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Expr {
    Atom(Atom),
    Not(Box<Expr>),
    And(Vec<Expr>),
    Or(Vec<Expr>),
}

impl Expr {
    pub fn atom(atom: Atom) -> Self {
        Expr::Atom(atom)
    }

    pub fn and(children: impl IntoIterator<Item = Expr>) -> Self {
        Expr::And(children.into_iter().collect())
    }

    pub fn or(children: impl IntoIterator<Item = Expr>) -> Self {
        Expr::Or(children.into_iter().collect())
    }

    #[allow(clippy::should_implement_trait)]
    pub fn not(inner: Expr) -> Self {
        Expr::Not(Box::new(inner))
    }

    /// Evaluates the tree, resolving atoms through `truth`.
    pub fn eval_with(&self, truth: &mut impl FnMut(&Atom) -> bool) -> bool {
        match self {
            Expr::Atom(a) => truth(a),
            Expr::Not(e) => !e.eval_with(truth),
            Expr::And(cs) => cs.iter().all(|c| c.eval_with(truth)),
            Expr::Or(cs) => cs.iter().any(|c| c.eval_with(truth)),
        }
    }

    pub fn matches(&self, chunk: &CandidateChunk, sentence: &Sentence) -> bool {
        self.eval_with(&mut |a| a.matches(chunk, sentence))
    }

    /// Distinct atoms in first-appearance order.
    pub fn atoms(&self) -> Vec<&Atom> {
        fn walk<'a>(e: &'a Expr, out: &mut Vec<&'a Atom>) {
            match e {
                Expr::Atom(a) => {
                    if !out.contains(&a) {
                        out.push(a)
                    }
                }
                Expr::Not(e) => walk(e, out),
                Expr::And(cs) | Expr::Or(cs) => cs.iter().for_each(|c| walk(c, out)),
            }
        }
        let mut out = Vec::new();
        walk(self, &mut out);
        out
    }

    /// Connective nesting depth; a bare atom has depth 0.
    pub fn depth(&self) -> usize {
        match self {
            Expr::Atom(_) => 0,
            Expr::Not(e) => 1 + e.depth(),
            Expr::And(cs) | Expr::Or(cs) => 1 + cs.iter().map(Expr::depth).max().unwrap_or(0),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Expr::Atom(a) => a.validate(),
            Expr::Not(e) => e.validate(),
            Expr::And(cs) | Expr::Or(cs) => {
                if cs.is_empty() {
                    return Err(Error::Rule("connective without operands".into()));
                }
                cs.iter().try_for_each(Expr::validate)
            }
        }
    }

    /// Negation-normal form with flattened, deduplicated and sorted operands.
    pub fn canonical(&self) -> Expr {
        normalize(nnf(self, false))
    }

    pub fn to_sexpr(&self) -> String {
        self.to_string()
    }

    pub fn parse(text: &str) -> Result<Expr> {
        let tokens = lex(text)?;
        let mut pos = 0;
        let expr = parse_expr(&tokens, &mut pos)?;
        if pos != tokens.len() {
            return Err(Error::Rule(format!("trailing input in `{text}`")));
        }
        expr.validate()?;
        Ok(expr)
    }

    /// Stable identifier of the canonical form.
    pub fn rule_id(&self) -> RuleId {
        RuleId::of(&self.canonical())
    }
}

fn nnf(e: &Expr, negated: bool) -> Expr {
    match e {
        Expr::Atom(a) if negated => Expr::not(Expr::Atom(a.clone())),
        Expr::Atom(a) => Expr::Atom(a.clone()),
        Expr::Not(inner) => nnf(inner, !negated),
        Expr::And(cs) => {
            let cs = cs.iter().map(|c| nnf(c, negated)).collect();
            if negated {
                Expr::Or(cs)
            } else {
                Expr::And(cs)
            }
        }
        Expr::Or(cs) => {
            let cs = cs.iter().map(|c| nnf(c, negated)).collect();
            if negated {
                Expr::And(cs)
            } else {
                Expr::Or(cs)
            }
        }
    }
}

fn normalize(e: Expr) -> Expr {
    match e {
        Expr::And(cs) => normalize_connective(cs, true),
        Expr::Or(cs) => normalize_connective(cs, false),
        other => other,
    }
}

fn normalize_connective(children: Vec<Expr>, conjunction: bool) -> Expr {
    let mut flat = Vec::new();
    for c in children.into_iter().map(normalize) {
        match (c, conjunction) {
            (Expr::And(inner), true) | (Expr::Or(inner), false) => flat.extend(inner),
            (c, _) => flat.push(c),
        }
    }
    let mut keyed: Vec<(String, Expr)> = flat.into_iter().map(|c| (c.to_string(), c)).collect();
    keyed.sort_by(|a, b| a.0.cmp(&b.0));
    keyed.dedup_by(|a, b| a.0 == b.0);
    let mut flat: Vec<Expr> = keyed.into_iter().map(|(_, c)| c).collect();
    if flat.len() == 1 {
        return flat.pop().unwrap();
    }
    if conjunction {
        Expr::And(flat)
    } else {
        Expr::Or(flat)
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Atom(a) => write!(f, "{a}"),
            Expr::Not(e) => write!(f, "(not {e})"),
            Expr::And(cs) | Expr::Or(cs) => {
                let op = if matches!(self, Expr::And(_)) { "and" } else { "or" };
                write!(f, "({op}")?;
                for c in cs {
                    write!(f, " {c}")?;
                }
                write!(f, ")")
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Lexeme {
    Open,
    Close,
    Symbol(String),
    Str(String),
}

fn lex(text: &str) -> Result<Vec<Lexeme>> {
    let bytes = text.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        match bytes[i] {
            b'(' => {
                out.push(Lexeme::Open);
                i += 1;
            }
            b')' => {
                out.push(Lexeme::Close);
                i += 1;
            }
            c if c.is_ascii_whitespace() => i += 1,
            b'"' => {
                let start = i;
                i += 1;
                while i < bytes.len() && bytes[i] != b'"' {
                    if bytes[i] == b'\\' {
                        i += 1;
                    }
                    i += 1;
                }
                if i >= bytes.len() {
                    return Err(Error::Rule(format!("unterminated string in `{text}`")));
                }
                i += 1;
                let s: String = serde_json::from_str(&text[start..i])
                    .map_err(|e| Error::Rule(format!("bad string literal: {e}")))?;
                out.push(Lexeme::Str(s));
            }
            _ => {
                let start = i;
                while i < bytes.len()
                    && !bytes[i].is_ascii_whitespace()
                    && bytes[i] != b'('
                    && bytes[i] != b')'
                {
                    i += 1;
                }
                out.push(Lexeme::Symbol(text[start..i].to_string()));
            }
        }
    }
    Ok(out)
}

fn parse_expr(tokens: &[Lexeme], pos: &mut usize) -> Result<Expr> {
    let err = |m: &str| Error::Rule(m.to_string());
    if tokens.get(*pos) != Some(&Lexeme::Open) {
        return Err(err("expected `(`"));
    }
    *pos += 1;
    let head = match tokens.get(*pos) {
        Some(Lexeme::Symbol(s)) => s.clone(),
        _ => return Err(err("expected operator after `(`")),
    };
    *pos += 1;
    let expr = match head.as_str() {
        "and" | "or" | "not" => {
            let mut children = Vec::new();
            while tokens.get(*pos) == Some(&Lexeme::Open) {
                children.push(parse_expr(tokens, pos)?);
            }
            match head.as_str() {
                "and" => Expr::And(children),
                "or" => Expr::Or(children),
                _ if children.len() == 1 => Expr::not(children.pop().unwrap()),
                _ => return Err(err("`not` takes exactly one operand")),
            }
        }
        _ => {
            let mut args = Vec::new();
            while let Some(Lexeme::Str(s)) = tokens.get(*pos) {
                args.push(s.clone());
                *pos += 1;
            }
            let atom = match head.as_str() {
                "token" if args.len() == 1 => Atom::TokenString(args.pop().unwrap()),
                "pre" => Atom::PreNGram(args),
                "post" => Atom::PostNGram(args),
                "pos" => Atom::PosTag(args),
                "dep" if args.len() == 2 => {
                    let head_lemma = args.pop().unwrap();
                    Atom::DependencyRel {
                        relation: args.pop().unwrap(),
                        head_lemma,
                    }
                }
                other => return Err(Error::Rule(format!("unknown or malformed atom `{other}`"))),
            };
            Expr::Atom(atom)
        }
    };
    if tokens.get(*pos) != Some(&Lexeme::Close) {
        return Err(err("expected `)`"));
    }
    *pos += 1;
    Ok(expr)
}

/// 16-hex-digit prefix of the SHA-256 of the canonical s-expression.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RuleId(pub String);

impl RuleId {
    fn of(canonical: &Expr) -> RuleId {
        let digest = Sha256::digest(canonical.to_string().as_bytes());
        let hex: String = digest[..8].iter().map(|b| format!("{b:02x}")).collect();
        RuleId(hex)
    }
}

impl fmt::Display for RuleId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LogicalRule {
    pub rule_id: RuleId,
    pub antecedent: Expr,
    pub consequent: String,
}

impl LogicalRule {
    /// Builds a rule from any antecedent; it is stored in canonical form.
    pub fn new(antecedent: &Expr, consequent: impl Into<String>) -> Self {
        let antecedent = antecedent.canonical();
        LogicalRule {
            rule_id: RuleId::of(&antecedent),
            antecedent,
            consequent: consequent.into(),
        }
    }

    pub fn matches(&self, chunk: &CandidateChunk, sentence: &Sentence) -> bool {
        self.antecedent.matches(chunk, sentence)
    }
}

impl fmt::Display for LogicalRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} -> {}", self.antecedent, self.consequent)
    }
}

/// Counts behind the rule score: `n_matched` pool instances satisfy the
/// antecedent, `m_correct` of them carry the rule's consequent.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct RuleStats {
    #[serde(rename = "N")]
    pub n_matched: usize,
    #[serde(rename = "M")]
    pub m_correct: usize,
}

/// One line of a rule export file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RuleRecord {
    pub rule_id: RuleId,
    pub antecedent: String,
    pub consequent: Option<String>,
    pub stats: RecordStats,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RecordStats {
    #[serde(rename = "N")]
    pub n: Option<usize>,
    #[serde(rename = "M")]
    pub m: Option<usize>,
    pub score: Option<f64>,
}

impl RuleRecord {
    pub fn from_rule(rule: &LogicalRule, stats: Option<RuleStats>, score: Option<f64>) -> Self {
        RuleRecord {
            rule_id: rule.rule_id.clone(),
            antecedent: rule.antecedent.to_string(),
            consequent: Some(rule.consequent.clone()),
            stats: RecordStats {
                n: stats.map(|s| s.n_matched),
                m: stats.map(|s| s.m_correct),
                score,
            },
        }
    }

    pub fn to_rule(&self) -> Result<LogicalRule> {
        let expr = Expr::parse(&self.antecedent)?;
        let consequent = self
            .consequent
            .clone()
            .ok_or_else(|| Error::Rule(format!("rule {} has no consequent", self.rule_id)))?;
        let rule = LogicalRule::new(&expr, consequent);
        if rule.rule_id != self.rule_id {
            return Err(Error::Rule(format!(
                "rule id {} does not match its antecedent (expected {})",
                self.rule_id, rule.rule_id
            )));
        }
        Ok(rule)
    }
}

/// Deterministic ordering for exported rules: by score descending, then id.
pub fn export_order(a: &(f64, &RuleId), b: &(f64, &RuleId)) -> Ordering {
    b.0.total_cmp(&a.0).then_with(|| a.1.cmp(b.1))
}
