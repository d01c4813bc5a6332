//! Prompt oracle: cloze templates, the backend trait and per-chunk queries.
//!
//! Label mapping, verdicts and seed selection live in submodules; the two
//! backends are [`MockOracle`] and [`RemoteOracle`].

mod mapping;
mod mock;
mod remote;
mod seeds;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{CandidateChunk, Sentence};

pub use mapping::{
    build_label_mapping, consistency_label, map_distribution, Label, LabelMapping, TargetTypes,
};
pub use mock::{MockLexicon, MockOracle, FILLER_TOKENS};
pub use remote::RemoteOracle;
pub use seeds::{
    compute_verdicts, finetune_dataset, finetuned_seeds, is_negative, select_negatives, select_seeds,
    zero_shot_seeds, Aggregation, ChunkVerdict, SeedMode, SeedRule, SeedThresholds, VerdictParams,
    FINETUNED_DEFAULTS, ZERO_SHOT_DEFAULTS,
};

pub const MASK: &str = "[mask]";
/// Trainable soft-slot marker used by T4.
pub const SOFT_SLOT: &str = "[s]";
/// Answer token standing for "not an entity of any target type".
pub const NA_TOKEN: &str = "none";
pub const DEFAULT_SLOTS: usize = 4;
pub const DEFAULT_TOP_K: usize = 5;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OracleError {
    /// The backend could not be reached or answered with a server error.
    #[error("oracle transport error: {0}")]
    Transport(String),
    /// The backend answered, but not according to the protocol.
    #[error("oracle protocol error: {0}")]
    Protocol(String),
}

impl OracleError {
    pub fn is_retryable(&self) -> bool {
        matches!(self, OracleError::Transport(_))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum TemplateId {
    T1,
    T2,
    T3,
    T4,
}

impl TemplateId {
    pub const ALL: [TemplateId; 4] = [TemplateId::T1, TemplateId::T2, TemplateId::T3, TemplateId::T4];

    pub fn mask_count(self) -> usize {
        match self {
            TemplateId::T3 => 2,
            _ => 1,
        }
    }

    /// Mask whose fill carries the entity type.
    pub fn answer_mask(self) -> usize {
        self.mask_count() - 1
    }

    /// Renders the template around `chunk`. `slots` is the soft-slot count of
    /// T4 and is ignored by the others.
    pub fn render(self, chunk: &CandidateChunk, sentence: &Sentence, slots: usize) -> String {
        let words = |r: std::ops::Range<usize>| -> Vec<&str> {
            sentence.tokens[r].iter().map(|t| t.surface.as_str()).collect()
        };
        let lc = words(0..chunk.span.start);
        let e = words(chunk.span.start..chunk.span.end);
        let rc = words(chunk.span.end..sentence.len());
        let mut out: Vec<&str> = Vec::with_capacity(sentence.len() + slots + 6);
        out.extend(&lc);
        match self {
            TemplateId::T1 => {
                out.extend([MASK, "such", "as"]);
                out.extend(&e);
                out.extend(&rc);
            }
            TemplateId::T2 => {
                out.extend(&e);
                out.extend(["and", "some", "other", MASK]);
                out.extend(&rc);
            }
            TemplateId::T3 => {
                out.extend(&e);
                out.extend(&rc);
                out.extend(&e);
                out.extend(["is", MASK, MASK, "entity"]);
            }
            TemplateId::T4 => {
                out.extend(&e);
                out.extend(&rc);
                out.extend(&e);
                out.extend(std::iter::repeat_n(SOFT_SLOT, slots.saturating_sub(1)));
                out.extend([MASK, SOFT_SLOT]);
            }
        }
        out.join(" ")
    }
}

impl fmt::Display for TemplateId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self:?}")
    }
}

impl FromStr for TemplateId {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "T1" | "t1" => Ok(TemplateId::T1),
            "T2" | "t2" => Ok(TemplateId::T2),
            "T3" | "t3" => Ok(TemplateId::T3),
            "T4" | "t4" => Ok(TemplateId::T4),
            other => Err(format!("unknown template `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenProb {
    pub token: String,
    pub prob: f64,
}

impl TokenProb {
    pub fn new(token: impl Into<String>, prob: f64) -> Self {
        TokenProb {
            token: token.into(),
            prob,
        }
    }
}

/// One fill-mask request. `chunk_text` identifies the chunk for in-process
/// backends and is not part of the wire format.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FillMaskQuery {
    pub template_id: TemplateId,
    pub text: String,
    pub mask_count: usize,
    pub top_k: usize,
    #[serde(skip)]
    pub chunk_text: String,
}

/// One fine-tuning example. `chunk_text` and `label` (`None` for negatives)
/// stay in-process.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FineTunePair {
    pub text: String,
    pub answer_tokens: Vec<String>,
    #[serde(skip)]
    pub chunk_text: String,
    #[serde(skip)]
    pub label: Option<String>,
}

pub trait Oracle: Send + Sync {
    /// Ranked fills for every mask of the query, in mask order.
    fn fill_mask(&self, query: &FillMaskQuery) -> Result<Vec<Vec<TokenProb>>, OracleError>;

    /// Runs one fine-tuning round; later fills reflect it.
    fn fine_tune(&mut self, pairs: &[FineTunePair], epochs: usize) -> Result<(), OracleError>;
}

/// Top-k fills at the answer mask of one template.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleDistribution {
    pub template_id: TemplateId,
    pub entries: Vec<TokenProb>,
}

impl OracleDistribution {
    pub fn tokens(&self) -> Vec<String> {
        self.entries.iter().map(|e| e.token.clone()).collect()
    }

    pub fn top(&self) -> Option<&TokenProb> {
        self.entries.first()
    }
}

pub fn query_oracle(
    oracle: &dyn Oracle,
    template: TemplateId,
    chunk: &CandidateChunk,
    sentence: &Sentence,
    top_k: usize,
    slots: usize,
) -> Result<OracleDistribution, OracleError> {
    let query = FillMaskQuery {
        template_id: template,
        text: template.render(chunk, sentence, slots),
        mask_count: template.mask_count(),
        top_k,
        chunk_text: chunk.text.clone(),
    };
    let mut masks = oracle.fill_mask(&query)?;
    if masks.len() != query.mask_count {
        return Err(OracleError::Protocol(format!(
            "{template} on `{}`: expected {} masks, got {}",
            chunk.text,
            query.mask_count,
            masks.len()
        )));
    }
    let mut entries = masks.swap_remove(template.answer_mask());
    validate_fills(&mut entries, top_k)
        .map_err(|m| OracleError::Protocol(format!("{template} on `{}`: {m}", chunk.text)))?;
    Ok(OracleDistribution {
        template_id: template,
        entries,
    })
}

/// Range-checks probabilities, orders by descending probability (stable) and
/// truncates to `top_k`.
pub(crate) fn validate_fills(entries: &mut Vec<TokenProb>, top_k: usize) -> Result<(), String> {
    if entries.is_empty() {
        return Err("empty fill list".into());
    }
    if let Some(bad) = entries.iter().find(|e| !(0.0..=1.0).contains(&e.prob)) {
        return Err(format!("probability {} of `{}` outside [0,1]", bad.prob, bad.token));
    }
    entries.sort_by(|a, b| b.prob.total_cmp(&a.prob));
    entries.truncate(top_k);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rules::tests::{chunk_at, fig2};

    #[test]
    fn templates_render_around_pd() {
        let s = fig2();
        let pd = chunk_at(&s, 1, 2, 1);
        assert_eq!(
            TemplateId::T1.render(&pd, &s, 4),
            "Thirty [mask] such as PD patients participated in the study"
        );
        assert_eq!(
            TemplateId::T2.render(&pd, &s, 4),
            "Thirty PD and some other [mask] patients participated in the study"
        );
        assert_eq!(
            TemplateId::T3.render(&pd, &s, 4),
            "Thirty PD patients participated in the study PD is [mask] [mask] entity"
        );
        assert_eq!(
            TemplateId::T4.render(&pd, &s, 4),
            "Thirty PD patients participated in the study PD [s] [s] [s] [mask] [s]"
        );
    }

    #[test]
    fn mask_counts_match_rendered_markers() {
        let s = fig2();
        let pd = chunk_at(&s, 1, 2, 1);
        for t in TemplateId::ALL {
            let text = t.render(&pd, &s, DEFAULT_SLOTS);
            assert_eq!(text.matches(MASK).count(), t.mask_count(), "{t}");
        }
    }

    #[test]
    fn fill_validation_sorts_and_rejects() {
        let mut e = vec![TokenProb::new("a", 0.1), TokenProb::new("b", 0.7), TokenProb::new("c", 0.2)];
        validate_fills(&mut e, 2).unwrap();
        assert_eq!(e, vec![TokenProb::new("b", 0.7), TokenProb::new("c", 0.2)]);
        let mut bad = vec![TokenProb::new("a", 1.5)];
        assert!(validate_fills(&mut bad, 2).is_err());
        assert!(validate_fills(&mut Vec::new(), 2).is_err());
    }

    #[test]
    fn wire_query_omits_chunk_text() {
        let q = FillMaskQuery {
            template_id: TemplateId::T2,
            text: "x".into(),
            mask_count: 1,
            top_k: 5,
            chunk_text: "secret".into(),
        };
        assert_eq!(
            serde_json::to_string(&q).unwrap(),
            r#"{"template_id":"T2","text":"x","mask_count":1,"top_k":5}"#
        );
    }
}
