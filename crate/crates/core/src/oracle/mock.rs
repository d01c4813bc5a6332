//! Lexicon-backed oracle: every fill is a table lookup on the chunk text.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{FillMaskQuery, FineTunePair, Oracle, OracleError, TemplateId, TokenProb, NA_TOKEN};
use crate::corpus::normalize;
use crate::error::{Error, Result};

/// Padding used when an entry is shorter than the requested top-k.
pub const FILLER_TOKENS: [&str; 10] = [
    "thing", "one", "part", "item", "kind", "form", "group", "case", "way", "sort",
];
/// Probability of the first filler when an entry is empty.
const FILLER_START: f64 = 0.01;
/// Fills of the article mask of T3.
const ARTICLE_FILLS: [(&str, f64); 3] = [("a", 0.6), ("an", 0.3), ("the", 0.1)];
pub const FINETUNED_PROB: f64 = 0.995;

#[derive(Debug, Clone, PartialEq, Default)]
pub struct MockLexicon {
    pub entries: BTreeMap<String, Vec<TokenProb>>,
    pub default_entry: Vec<TokenProb>,
    pub template_bias: BTreeMap<TemplateId, f64>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(untagged)]
enum LexiconLine {
    Single {
        chunk_text: String,
        type_token: String,
        prob: f64,
    },
    Multi {
        chunk_text: String,
        entries: Vec<(String, f64)>,
    },
    Default {
        default: Vec<(String, f64)>,
    },
    Bias {
        template_bias: BTreeMap<TemplateId, f64>,
    },
}

fn to_entries(v: Vec<(String, f64)>) -> Vec<TokenProb> {
    v.into_iter().map(|(t, p)| TokenProb::new(t, p)).collect()
}

fn from_entries(v: &[TokenProb]) -> Vec<(String, f64)> {
    v.iter().map(|e| (e.token.clone(), e.prob)).collect()
}

fn sort_desc(v: &mut [TokenProb]) {
    v.sort_by(|a, b| b.prob.total_cmp(&a.prob));
}

impl MockLexicon {
    pub fn load(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        Self::parse(BufReader::new(file), &path.display().to_string())
    }

    pub fn parse<R: BufRead>(reader: R, origin: &str) -> Result<Self> {
        let mut lex = MockLexicon::default();
        for (i, line) in reader.lines().enumerate() {
            let line = line.map_err(|e| Error::io(origin, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let parse_err = |message: String| Error::Parse {
                origin: origin.to_string(),
                line: i + 1,
                message,
            };
            let parsed: LexiconLine =
                serde_json::from_str(&line).map_err(|e| parse_err(e.to_string()))?;
            match parsed {
                LexiconLine::Single {
                    chunk_text,
                    type_token,
                    prob,
                } => lex
                    .entries
                    .entry(normalize(&chunk_text))
                    .or_default()
                    .push(TokenProb::new(type_token, prob)),
                LexiconLine::Multi {
                    chunk_text,
                    entries,
                } => lex
                    .entries
                    .entry(normalize(&chunk_text))
                    .or_default()
                    .extend(to_entries(entries)),
                LexiconLine::Default { default } => lex.default_entry = to_entries(default),
                LexiconLine::Bias { template_bias } => lex.template_bias.extend(template_bias),
            }
            lex.check().map_err(parse_err)?;
        }
        lex.entries.values_mut().for_each(|v| sort_desc(v));
        sort_desc(&mut lex.default_entry);
        Ok(lex)
    }

    fn check(&self) -> std::result::Result<(), String> {
        let all = self.entries.values().flatten().chain(&self.default_entry);
        for e in all {
            if !(0.0..=1.0).contains(&e.prob) {
                return Err(format!("probability {} of `{}` outside [0,1]", e.prob, e.token));
            }
        }
        Ok(())
    }

    pub fn write<W: Write>(&self, out: &mut W) -> std::io::Result<()> {
        let mut line = |l: &LexiconLine| -> std::io::Result<()> {
            writeln!(out, "{}", serde_json::to_string(l).expect("lexicon line serializes"))
        };
        if !self.template_bias.is_empty() {
            line(&LexiconLine::Bias {
                template_bias: self.template_bias.clone(),
            })?;
        }
        if !self.default_entry.is_empty() {
            line(&LexiconLine::Default {
                default: from_entries(&self.default_entry),
            })?;
        }
        for (text, entries) in &self.entries {
            line(&LexiconLine::Multi {
                chunk_text: text.clone(),
                entries: from_entries(entries),
            })?;
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = File::create(path).map_err(|e| Error::io(path, e))?;
        self.write(&mut f).map_err(|e| Error::io(path, e))
    }

    /// Answer-mask fills for `chunk_text` under `template`: the entry (or the
    /// default), shifted by the template bias and clamped to [0,1], cut to
    /// `top_k` and padded with fillers at halving probabilities.
    pub fn mock_fill(&self, template: TemplateId, chunk_text: &str, top_k: usize) -> Vec<TokenProb> {
        let base = self
            .entries
            .get(&normalize(chunk_text))
            .unwrap_or(&self.default_entry);
        let bias = self.template_bias.get(&template).copied().unwrap_or(0.0);
        let mut out: Vec<TokenProb> = base
            .iter()
            .take(top_k)
            .map(|e| TokenProb::new(e.token.clone(), (e.prob + bias).clamp(0.0, 1.0)))
            .collect();
        let mut p = out.last().map_or(FILLER_START * 2.0, |e| e.prob);
        for filler in FILLER_TOKENS {
            if out.len() >= top_k {
                break;
            }
            if out.iter().any(|e| e.token == filler) {
                continue;
            }
            p /= 2.0;
            out.push(TokenProb::new(filler, p));
        }
        out
    }

    /// Pins every trained chunk to its majority answer (type for positives,
    /// the NA token for negatives; ties to the smaller token).
    pub fn mock_finetune(&mut self, pairs: &[FineTunePair]) {
        let mut votes: BTreeMap<String, BTreeMap<&str, usize>> = BTreeMap::new();
        for p in pairs {
            let answer = p.label.as_deref().unwrap_or(NA_TOKEN);
            *votes
                .entry(normalize(&p.chunk_text))
                .or_default()
                .entry(answer)
                .or_default() += 1;
        }
        for (text, counts) in votes {
            let (answer, _) = counts
                .iter()
                .rev()
                .max_by_key(|(_, n)| **n)
                .expect("at least one vote");
            self.entries
                .insert(text, vec![TokenProb::new(*answer, FINETUNED_PROB)]);
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct MockOracle {
    pub lexicon: MockLexicon,
}

impl MockOracle {
    pub fn new(lexicon: MockLexicon) -> Self {
        MockOracle { lexicon }
    }
}

impl Oracle for MockOracle {
    fn fill_mask(&self, query: &FillMaskQuery) -> std::result::Result<Vec<Vec<TokenProb>>, OracleError> {
        let answer = self
            .lexicon
            .mock_fill(query.template_id, &query.chunk_text, query.top_k);
        let mut masks = Vec::with_capacity(query.mask_count);
        for _ in 1..query.mask_count {
            masks.push(
                ARTICLE_FILLS
                    .iter()
                    .take(query.top_k)
                    .map(|&(t, p)| TokenProb::new(t, p))
                    .collect(),
            );
        }
        masks.push(answer);
        Ok(masks)
    }

    fn fine_tune(&mut self, pairs: &[FineTunePair], _epochs: usize) -> std::result::Result<(), OracleError> {
        self.lexicon.mock_finetune(pairs);
        Ok(())
    }
}
