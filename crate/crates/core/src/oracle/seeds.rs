use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{
    build_label_mapping, consistency_label, map_distribution, query_oracle, FineTunePair, Label,
    LabelMapping, Oracle, OracleError, TargetTypes, TemplateId, TokenProb, NA_TOKEN,
};
use crate::corpus::{CandidateChunk, Span, UnlabeledPool};
use crate::error::{Error, Result};
use crate::rules::{Atom, Expr, LogicalRule};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SeedMode {
    ZeroShot,
    Finetuned,
}

impl SeedMode {
    /// Template pair whose answers are compared.
    pub fn templates(self) -> (TemplateId, TemplateId) {
        match self {
            SeedMode::ZeroShot => (TemplateId::T1, TemplateId::T2),
            SeedMode::Finetuned => (TemplateId::T3, TemplateId::T4),
        }
    }

    pub fn default_thresholds(self) -> SeedThresholds {
        match self {
            SeedMode::ZeroShot => ZERO_SHOT_DEFAULTS,
            SeedMode::Finetuned => FINETUNED_DEFAULTS,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeedThresholds {
    pub p_t: f64,
    pub r_t: usize,
}

pub const ZERO_SHOT_DEFAULTS: SeedThresholds = SeedThresholds { p_t: 0.3, r_t: 4 };
pub const FINETUNED_DEFAULTS: SeedThresholds = SeedThresholds { p_t: 0.99, r_t: 4 };

/// How per-occurrence confidences of one chunk text are combined.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Aggregation {
    #[default]
    Max,
    Mean,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VerdictParams {
    pub top_k: usize,
    pub slots: usize,
    pub min_cooccur: usize,
}

impl Default for VerdictParams {
    fn default() -> Self {
        VerdictParams {
            top_k: super::DEFAULT_TOP_K,
            slots: super::DEFAULT_SLOTS,
            min_cooccur: 2,
        }
    }
}

/// Oracle outcome for one chunk occurrence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChunkVerdict {
    pub sentence_id: String,
    pub span: Span,
    pub text: String,
    pub support: usize,
    pub s1: Vec<TokenProb>,
    pub s2: Vec<TokenProb>,
    pub py1: Vec<(String, f64)>,
    pub py2: Vec<(String, f64)>,
    pub label: Label,
    pub confidence: f64,
}

/// Queries both templates of `mode` for every chunk, induces the label
/// mapping from all answers and labels each occurrence. Output order follows
/// `chunks`.
pub fn compute_verdicts(
    oracle: &dyn Oracle,
    pool: &UnlabeledPool,
    chunks: &[CandidateChunk],
    targets: &TargetTypes,
    mode: SeedMode,
    params: &VerdictParams,
) -> std::result::Result<(Vec<ChunkVerdict>, LabelMapping), OracleError> {
    let (ta, tb) = mode.templates();
    let answers: Vec<(Vec<TokenProb>, Vec<TokenProb>)> = chunks
        .par_iter()
        .map(|c| {
            let s = pool.sentence(c.sentence_index);
            let a = query_oracle(oracle, ta, c, s, params.top_k, params.slots)?;
            let b = query_oracle(oracle, tb, c, s, params.top_k, params.slots)?;
            Ok((a.entries, b.entries))
        })
        .collect::<std::result::Result<_, OracleError>>()?;

    let token_sets: Vec<(Vec<String>, Vec<String>)> = answers
        .iter()
        .map(|(a, b)| {
            (
                a.iter().map(|e| e.token.clone()).collect(),
                b.iter().map(|e| e.token.clone()).collect(),
            )
        })
        .collect();
    let mapping = build_label_mapping(&token_sets, targets, params.min_cooccur);

    let verdicts = chunks
        .iter()
        .zip(answers)
        .map(|(c, (s1, s2))| {
            let py1 = map_distribution(&s1, &mapping, targets);
            let py2 = map_distribution(&s2, &mapping, targets);
            let (label, confidence) = consistency_label(&py1, &py2, &s1, &s2, &mapping);
            ChunkVerdict {
                sentence_id: c.sentence_id.clone(),
                span: c.span,
                text: c.text.clone(),
                support: c.support,
                s1,
                s2,
                py1,
                py2,
                label,
                confidence,
            }
        })
        .collect();
    Ok((verdicts, mapping))
}

/// `TokenString == text -> label`, with the evidence that selected it.
#[derive(Debug, Clone, PartialEq)]
pub struct SeedRule {
    pub rule: LogicalRule,
    pub text: String,
    pub label: String,
    pub confidence: f64,
    pub support: usize,
}

/// Seed rules from a verdict table: for every chunk text whose type-labeled
/// occurrences agree by majority on a type (ties to the smaller name), the
/// aggregated confidence of that type's occurrences must exceed `p_t` and the
/// text's support must exceed `r_t`. Sorted by text.
pub fn select_seeds(verdicts: &[ChunkVerdict], p_t: f64, r_t: usize, agg: Aggregation) -> Vec<SeedRule> {
    let mut by_text: BTreeMap<&str, (usize, BTreeMap<&str, Vec<f64>>)> = BTreeMap::new();
    for v in verdicts {
        let entry = by_text.entry(&v.text).or_insert_with(|| (v.support, BTreeMap::new()));
        if let Label::Type(t) = &v.label {
            entry.1.entry(t).or_default().push(v.confidence);
        }
    }
    let mut out = Vec::new();
    for (text, (support, labels)) in by_text {
        // BTreeMap order makes max_by_key keep the last maximum; iterate in
        // reverse so the lexicographically smallest label wins ties.
        let Some((label, confs)) = labels.iter().rev().max_by_key(|(_, c)| c.len()) else {
            continue;
        };
        let confidence = match agg {
            Aggregation::Max => confs.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            Aggregation::Mean => confs.iter().sum::<f64>() / confs.len() as f64,
        };
        if confidence > p_t && support > r_t {
            out.push(SeedRule {
                rule: LogicalRule::new(&Expr::atom(Atom::TokenString(text.to_string())), *label),
                text: text.to_string(),
                label: label.to_string(),
                confidence,
                support,
            });
        }
    }
    out
}

pub fn zero_shot_seeds(verdicts: &[ChunkVerdict], p_t: f64, r_t: usize) -> Vec<SeedRule> {
    select_seeds(verdicts, p_t, r_t, Aggregation::Max)
}

pub fn finetuned_seeds(verdicts: &[ChunkVerdict], p_t: f64, r_t: usize) -> Vec<SeedRule> {
    select_seeds(verdicts, p_t, r_t, Aggregation::Max)
}

/// NA occurrences confident and frequent enough to serve as negatives.
pub fn select_negatives(verdicts: &[ChunkVerdict], p_t: f64, r_t: usize) -> Vec<&ChunkVerdict> {
    verdicts.iter().filter(|v| is_negative(v, p_t, r_t)).collect()
}

pub fn is_negative(v: &ChunkVerdict, p_t: f64, r_t: usize) -> bool {
    v.label == Label::Na && v.confidence > p_t && v.support > r_t
}

fn article(word: &str) -> &'static str {
    match word.chars().next().map(|c| c.to_ascii_lowercase()) {
        Some('a' | 'e' | 'i' | 'o' | 'u') => "an",
        _ => "a",
    }
}

/// Fine-tuning pairs for one template (T3 or T4): one pair per positive
/// `(chunk, type)` and one per negative chunk.
pub fn finetune_dataset(
    positives: &[(&CandidateChunk, &str)],
    negatives: &[&CandidateChunk],
    pool: &UnlabeledPool,
    template: TemplateId,
    slots: usize,
) -> Result<Vec<FineTunePair>> {
    if !matches!(template, TemplateId::T3 | TemplateId::T4) {
        return Err(Error::Config(format!("fine-tuning uses T3 or T4, not {template}")));
    }
    if positives.is_empty() {
        return Err(Error::EmptyPool);
    }
    if negatives.is_empty() {
        return Err(Error::NoNegatives);
    }
    let render = |c: &CandidateChunk| template.render(c, pool.sentence(c.sentence_index), slots);
    let mut pairs = Vec::with_capacity(positives.len() + negatives.len());
    for (c, ty) in positives {
        let answer_tokens = match template {
            TemplateId::T3 => vec![article(ty).to_string(), ty.to_string()],
            _ => vec![ty.to_string()],
        };
        pairs.push(FineTunePair {
            text: render(c),
            answer_tokens,
            chunk_text: c.text.clone(),
            label: Some(ty.to_string()),
        });
    }
    for c in negatives {
        let answer_tokens = match template {
            TemplateId::T3 => vec!["not".to_string(), "an".to_string()],
            _ => vec![NA_TOKEN.to_string()],
        };
        pairs.push(FineTunePair {
            text: render(c),
            answer_tokens,
            chunk_text: c.text.clone(),
            label: None,
        });
    }
    Ok(pairs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rules::tests::{chunk_at, fig2};

    fn verdict(text: &str, support: usize, label: Label, confidence: f64) -> ChunkVerdict {
        ChunkVerdict {
            sentence_id: "s".into(),
            span: Span::new(0, 1),
            text: text.into(),
            support,
            s1: vec![],
            s2: vec![],
            py1: vec![],
            py2: vec![],
            label,
            confidence,
        }
    }

    fn ty(t: &str) -> Label {
        Label::Type(t.into())
    }

    #[test]
    fn thresholds_are_strict() {
        let vs = vec![
            verdict("a", 5, ty("disease"), 0.9),
            verdict("b", 3, ty("disease"), 0.9),
            verdict("c", 5, ty("disease"), 0.3),
            verdict("d", 4, ty("chemical"), 0.9),
            verdict("e", 9, Label::Na, 0.9),
            verdict("f", 9, Label::Unk, 0.0),
        ];
        let seeds = zero_shot_seeds(&vs, 0.3, 4);
        let texts: Vec<&str> = seeds.iter().map(|s| s.text.as_str()).collect();
        assert_eq!(texts, vec!["a"]);
        assert_eq!(seeds[0].rule.to_string(), r#"(token "a") -> disease"#);
        assert!(finetuned_seeds(&vs, 1.0, 0).is_empty());
    }

    #[test]
    fn majority_label_and_aggregation() {
        let vs = vec![
            verdict("x", 6, ty("disease"), 0.5),
            verdict("x", 6, ty("chemical"), 0.95),
            verdict("x", 6, ty("disease"), 0.7),
            verdict("x", 6, Label::Unk, 0.0),
            verdict("y", 6, ty("disease"), 0.6),
            verdict("y", 6, ty("chemical"), 0.6),
        ];
        let max = select_seeds(&vs, 0.0, 0, Aggregation::Max);
        assert_eq!((max[0].label.as_str(), max[0].confidence), ("disease", 0.7));
        assert_eq!(max[1].label, "chemical", "tie goes to the smaller name");
        let mean = select_seeds(&vs, 0.0, 0, Aggregation::Mean);
        assert!((mean[0].confidence - 0.6).abs() < 1e-12);
    }

    #[test]
    fn dataset_verbalizations() {
        let s = fig2();
        let pool = UnlabeledPool::new(vec![s.clone()]).unwrap();
        let pd = chunk_at(&s, 1, 2, 1);
        let study = chunk_at(&s, 5, 7, 6);
        let t3 = finetune_dataset(&[(&pd, "disease")], &[&study], &pool, TemplateId::T3, 4).unwrap();
        assert_eq!(t3.len(), 2);
        assert_eq!(t3[0].answer_tokens, vec!["a", "disease"]);
        assert_eq!(t3[1].answer_tokens, vec!["not", "an"]);
        assert!(t3[1].text.ends_with("the study is [mask] [mask] entity"));
        let t4 = finetune_dataset(&[(&pd, "element")], &[&study], &pool, TemplateId::T4, 4).unwrap();
        assert_eq!(t4[0].answer_tokens, vec!["element"]);
        assert_eq!(t4[1].answer_tokens, vec![NA_TOKEN]);
        assert_eq!(article("element"), "an");
    }

    #[test]
    fn dataset_requires_negatives() {
        let s = fig2();
        let pool = UnlabeledPool::new(vec![s.clone()]).unwrap();
        let pd = chunk_at(&s, 1, 2, 1);
        let err = finetune_dataset(&[(&pd, "disease")], &[], &pool, TemplateId::T4, 4).unwrap_err();
        assert!(matches!(err, Error::NoNegatives));
        let err = finetune_dataset(&[(&pd, "disease")], &[&pd], &pool, TemplateId::T1, 4).unwrap_err();
        assert!(err.is_validation());
    }
}
