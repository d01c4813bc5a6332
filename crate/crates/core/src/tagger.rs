//! Averaged-perceptron BIO tagger with greedy left-to-right decoding.
//!
//! Training examples may leave tokens unlabeled; those tokens contribute no
//! update but still feed the previous-tag feature through the model's own
//! prediction.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{CandidateChunk, Sentence, Span, UnlabeledPool};
use crate::error::{Error, Result};

pub const CHECKPOINT_VERSION: u32 = 1;
pub const OUTSIDE: &str = "O";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaggerConfig {
    pub epochs: usize,
    pub seed: u64,
}

impl Default for TaggerConfig {
    fn default() -> Self {
        TaggerConfig { epochs: 10, seed: 0 }
    }
}

/// One training sentence; `tags[i] == None` excludes token `i` from updates.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingExample {
    pub sentence_index: usize,
    pub tags: Vec<Option<String>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TagSequence {
    pub sentence_id: String,
    pub tags: Vec<String>,
}

/// BIO classes: `O`, then `B-t`, `I-t` for every type in order.
pub fn bio_classes(types: &[String]) -> Vec<String> {
    let mut out = vec![OUTSIDE.to_string()];
    for t in types {
        out.push(format!("B-{t}"));
        out.push(format!("I-{t}"));
    }
    out
}

/// Whether `tag` may follow `prev` (`None` at sentence start).
pub fn bio_allowed(prev: Option<&str>, tag: &str) -> bool {
    match tag.strip_prefix("I-") {
        None => true,
        Some(t) => prev.is_some_and(|p| p.get(2..) == Some(t) && (p.starts_with("B-") || p.starts_with("I-"))),
    }
}

pub fn is_valid_bio(tags: &[String]) -> bool {
    let mut prev = None;
    for t in tags {
        if !bio_allowed(prev, t) {
            return false;
        }
        prev = Some(t.as_str());
    }
    true
}

/// Entity spans encoded by a valid BIO sequence.
pub fn spans_from_tags(tags: &[String]) -> Vec<(Span, String)> {
    let mut out = Vec::new();
    let mut open: Option<(usize, &str)> = None;
    for (i, t) in tags.iter().enumerate() {
        let continues = matches!((open, t.strip_prefix("I-")), (Some((_, o)), Some(x)) if o == x);
        if continues {
            continue;
        }
        if let Some((s, l)) = open.take() {
            out.push((Span::new(s, i), l.to_string()));
        }
        if let Some(x) = t.strip_prefix("B-").or_else(|| t.strip_prefix("I-")) {
            open = Some((i, x));
        }
    }
    if let Some((s, l)) = open {
        out.push((Span::new(s, tags.len()), l.to_string()));
    }
    out
}

fn shape(word: &str) -> String {
    let mut out = String::new();
    for c in word.chars() {
        let m = if c.is_uppercase() {
            'X'
        } else if c.is_lowercase() {
            'x'
        } else if c.is_ascii_digit() {
            'd'
        } else {
            c
        };
        if !out.ends_with(m) {
            out.push(m);
        }
    }
    out
}

fn affix(word: &str, n: usize, suffix: bool) -> String {
    let chars: Vec<char> = word.chars().collect();
    let n = n.min(chars.len());
    if suffix {
        chars[chars.len() - n..].iter().collect()
    } else {
        chars[..n].iter().collect()
    }
}

/// Static features of every token; the previous-tag feature is added while
/// decoding.
fn sentence_features(s: &Sentence) -> Vec<Vec<String>> {
    let words: Vec<String> = s.tokens.iter().map(|t| t.surface.to_lowercase()).collect();
    let ctx = |i: isize| -> &str {
        if i < 0 {
            "<s>"
        } else if i as usize >= words.len() {
            "</s>"
        } else {
            &words[i as usize]
        }
    };
    (0..s.len())
        .map(|i| {
            let t = &s.tokens[i];
            let lw = &words[i];
            let ii = i as isize;
            vec![
                "bias".to_string(),
                format!("w={}", t.surface),
                format!("lw={lw}"),
                format!("p3={}", affix(lw, 3, false)),
                format!("p4={}", affix(lw, 4, false)),
                format!("s3={}", affix(lw, 3, true)),
                format!("s4={}", affix(lw, 4, true)),
                format!("pos={}", t.pos),
                format!("sh={}", shape(&t.surface)),
                format!("w-1={}", ctx(ii - 1)),
                format!("w-2={}", ctx(ii - 2)),
                format!("w+1={}", ctx(ii + 1)),
                format!("w+2={}", ctx(ii + 2)),
            ]
        })
        .collect()
}

fn prev_feature(prev: Option<&str>) -> String {
    format!("prev={}", prev.unwrap_or("<s>"))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tagger {
    pub version: u32,
    pub classes: Vec<String>,
    /// Averaged weights per feature, one entry per class.
    pub weights: BTreeMap<String, Vec<f64>>,
}

/// Per-token decode trace: chosen class and score of every class, with
/// BIO-invalid classes at `-inf`.
struct Decoded {
    tags: Vec<usize>,
    scores: Vec<Vec<f64>>,
}

impl Tagger {
    fn score_into(&self, feats: &[String], prev: &str, out: &mut [f64]) {
        out.iter_mut().for_each(|x| *x = 0.0);
        let pf = prev_feature(Some(prev));
        for f in feats.iter().chain(std::iter::once(&pf)) {
            if let Some(w) = self.weights.get(f) {
                out.iter_mut().zip(w).for_each(|(o, w)| *o += w);
            }
        }
    }

    fn decode(&self, feats: &[Vec<String>]) -> Decoded {
        let n = self.classes.len();
        let mut tags = Vec::with_capacity(feats.len());
        let mut scores = Vec::with_capacity(feats.len());
        let mut buf = vec![0.0; n];
        let mut prev: Option<usize> = None;
        for f in feats {
            let prev_name = prev.map(|p| self.classes[p].as_str());
            self.score_into(f, prev_name.unwrap_or("<s>"), &mut buf);
            let row: Vec<f64> = (0..n)
                .map(|k| {
                    if bio_allowed(prev_name, &self.classes[k]) {
                        buf[k]
                    } else {
                        f64::NEG_INFINITY
                    }
                })
                .collect();
            let best = argmax(&row);
            tags.push(best);
            scores.push(row);
            prev = Some(best);
        }
        Decoded { tags, scores }
    }

    pub fn tag(&self, sentence: &Sentence) -> TagSequence {
        let d = self.decode(&sentence_features(sentence));
        TagSequence {
            sentence_id: sentence.id.clone(),
            tags: d.tags.into_iter().map(|k| self.classes[k].clone()).collect(),
        }
    }

    pub fn tag_pool(&self, pool: &UnlabeledPool) -> Vec<TagSequence> {
        pool.sentences().par_iter().map(|s| self.tag(s)).collect()
    }

    /// Predicted type for every chunk whose head token receives an entity
    /// tag, with margin `(best - second best valid score at the head) / len`.
    pub fn pseudo_label(&self, pool: &UnlabeledPool, chunks: &[CandidateChunk]) -> Vec<PseudoLabel> {
        let mut by_sentence: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for (ci, c) in chunks.iter().enumerate() {
            by_sentence.entry(c.sentence_index).or_default().push(ci);
        }
        let groups: Vec<(usize, Vec<usize>)> = by_sentence.into_iter().collect();
        groups
            .par_iter()
            .flat_map_iter(|(si, cis)| {
                let d = self.decode(&sentence_features(pool.sentence(*si)));
                cis.iter()
                    .filter_map(|&ci| {
                        let c = &chunks[ci];
                        let k = d.tags[c.head_token];
                        let class = &self.classes[k];
                        let label = class.get(2..).filter(|_| class != OUTSIDE)?.to_string();
                        let row = &d.scores[c.head_token];
                        let second = row
                            .iter()
                            .enumerate()
                            .filter(|&(j, s)| j != k && s.is_finite())
                            .map(|(_, s)| *s)
                            .fold(f64::NEG_INFINITY, f64::max);
                        let gap = if second.is_finite() { row[k] - second } else { 0.0 };
                        Some(PseudoLabel {
                            chunk_index: ci,
                            label,
                            margin: gap / c.span.len() as f64,
                        })
                    })
                    .collect::<Vec<_>>()
            })
            .collect()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string(self)?;
        fs::write(path, json).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let t: Tagger = serde_json::from_str(&text)?;
        if t.version != CHECKPOINT_VERSION {
            return Err(Error::Config(format!(
                "{}: checkpoint version {} unsupported",
                path.display(),
                t.version
            )));
        }
        Ok(t)
    }
}

fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (k, v) in row.iter().enumerate() {
        if *v > row[best] {
            best = k;
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PseudoLabel {
    pub chunk_index: usize,
    pub label: String,
    pub margin: f64,
}

struct Trainer {
    n: usize,
    weights: HashMap<String, Vec<f64>>,
    totals: HashMap<String, Vec<f64>>,
    stamps: HashMap<String, Vec<u64>>,
    step: u64,
}

impl Trainer {
    fn update(&mut self, feat: &str, class: usize, delta: f64) {
        let n = self.n;
        let w = self.weights.entry(feat.to_string()).or_insert_with(|| vec![0.0; n]);
        let tot = self.totals.entry(feat.to_string()).or_insert_with(|| vec![0.0; n]);
        let st = self.stamps.entry(feat.to_string()).or_insert_with(|| vec![0; n]);
        tot[class] += (self.step - st[class]) as f64 * w[class];
        st[class] = self.step;
        w[class] += delta;
    }

    fn averaged(self) -> BTreeMap<String, Vec<f64>> {
        let step = self.step.max(1);
        let mut out = BTreeMap::new();
        for (f, w) in self.weights {
            let tot = &self.totals[&f];
            let st = &self.stamps[&f];
            let avg: Vec<f64> = (0..w.len())
                .map(|k| (tot[k] + (step - st[k]) as f64 * w[k]) / step as f64)
                .collect();
            if avg.iter().any(|x| *x != 0.0) {
                out.insert(f, avg);
            }
        }
        out
    }
}

/// Trains on `examples`. Examples are visited in sentence-id order shuffled
/// by a per-epoch seeded permutation, so input order does not matter.
pub fn train(
    pool: &UnlabeledPool,
    examples: &[TrainingExample],
    types: &[String],
    config: &TaggerConfig,
) -> Result<Tagger> {
    if examples.is_empty() {
        return Err(Error::EmptyPool);
    }
    let classes = bio_classes(types);
    let class_of: HashMap<&str, usize> = classes.iter().enumerate().map(|(i, c)| (c.as_str(), i)).collect();

    let mut ordered: Vec<&TrainingExample> = examples.iter().collect();
    ordered.sort_by(|a, b| {
        pool.sentence(a.sentence_index)
            .id
            .cmp(&pool.sentence(b.sentence_index).id)
    });
    let mut prepared = Vec::with_capacity(ordered.len());
    let mut seen_classes = std::collections::BTreeSet::new();
    for ex in ordered {
        let s = pool.sentence(ex.sentence_index);
        if ex.tags.len() != s.len() {
            return Err(Error::InvalidSentence {
                sentence: s.id.clone(),
                message: format!("{} tags for {} tokens", ex.tags.len(), s.len()),
            });
        }
        let gold: Vec<Option<usize>> = ex
            .tags
            .iter()
            .map(|t| match t {
                None => Ok(None),
                Some(t) => class_of
                    .get(t.as_str())
                    .map(|&k| Some(k))
                    .ok_or_else(|| Error::Config(format!("unknown tag `{t}` in `{}`", s.id))),
            })
            .collect::<Result<_>>()?;
        seen_classes.extend(gold.iter().flatten().copied());
        prepared.push((sentence_features(s), gold));
    }
    if seen_classes.len() < 2 {
        log::warn!("training data contains a single class; the tagger will be degenerate");
    }

    let mut model = Tagger {
        version: CHECKPOINT_VERSION,
        classes,
        weights: BTreeMap::new(),
    };
    let mut trainer = Trainer {
        n: model.classes.len(),
        weights: HashMap::new(),
        totals: HashMap::new(),
        stamps: HashMap::new(),
        step: 0,
    };
    let mut order: Vec<usize> = (0..prepared.len()).collect();
    let mut buf = vec![0.0; model.classes.len()];
    for epoch in 0..config.epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ (epoch as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
        order.shuffle(&mut rng);
        for &ei in &order {
            let (feats, gold) = &prepared[ei];
            trainer.step += 1;
            let mut prev: Option<usize> = None;
            for (i, f) in feats.iter().enumerate() {
                let prev_name = prev.map(|p| model.classes[p].as_str());
                // Score with live (non-averaged) weights.
                buf.iter_mut().for_each(|x| *x = 0.0);
                let pf = prev_feature(prev_name);
                for feat in f.iter().chain(std::iter::once(&pf)) {
                    if let Some(w) = trainer.weights.get(feat) {
                        buf.iter_mut().zip(w).for_each(|(o, w)| *o += w);
                    }
                }
                let row: Vec<f64> = (0..buf.len())
                    .map(|k| {
                        if bio_allowed(prev_name, &model.classes[k]) {
                            buf[k]
                        } else {
                            f64::NEG_INFINITY
                        }
                    })
                    .collect();
                let guess = argmax(&row);
                let chosen = match gold[i] {
                    Some(g) => {
                        if g != guess {
                            for feat in f.iter().chain(std::iter::once(&pf)) {
                                trainer.update(feat, g, 1.0);
                                trainer.update(feat, guess, -1.0);
                            }
                        }
                        g
                    }
                    None => guess,
                };
                prev = Some(chosen);
            }
        }
    }
    model.weights = trainer.averaged();
    Ok(model)
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub true_positives: usize,
    pub predicted: usize,
    pub gold: usize,
}

impl Prf {
    pub fn from_counts(tp: usize, predicted: usize, gold: usize) -> Self {
        let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        let precision = ratio(tp, predicted);
        let recall = ratio(tp, gold);
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        Prf {
            precision,
            recall,
            f1,
            true_positives: tp,
            predicted,
            gold,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub micro: Prf,
    pub per_type: BTreeMap<String, Prf>,
}

impl EvalReport {
    pub fn to_table(&self) -> String {
        let mut out = format!(
            "{:<16} {:>9} {:>9} {:>9} {:>7} {:>7} {:>7}\n",
            "type", "precision", "recall", "f1", "tp", "pred", "gold"
        );
        let rows = self.per_type.iter().map(|(k, v)| (k.as_str(), v));
        for (name, p) in rows.chain(std::iter::once(("micro", &self.micro))) {
            out.push_str(&format!(
                "{:<16} {:>9.4} {:>9.4} {:>9.4} {:>7} {:>7} {:>7}\n",
                name, p.precision, p.recall, p.f1, p.true_positives, p.predicted, p.gold
            ));
        }
        out
    }
}

/// Exact-span scores of `predictions` against the gold spans of `gold`,
/// paired by position. Types seen in either side get a row.
pub fn evaluate(predictions: &[TagSequence], gold: &[Sentence]) -> Result<EvalReport> {
    if predictions.len() != gold.len() {
        return Err(Error::Eval(format!(
            "{} predicted sentences for {} gold sentences",
            predictions.len(),
            gold.len()
        )));
    }
    let mut counts: BTreeMap<String, (usize, usize, usize)> = BTreeMap::new();
    for (p, g) in predictions.iter().zip(gold) {
        if p.sentence_id != g.id || p.tags.len() != g.len() {
            return Err(Error::Eval(format!(
                "prediction `{}` does not line up with gold sentence `{}`",
                p.sentence_id, g.id
            )));
        }
        let pred = spans_from_tags(&p.tags);
        let gold_spans: Vec<(Span, String)> =
            g.gold_spans.iter().map(|s| (s.span(), s.label.clone())).collect();
        for (span, l) in &pred {
            let c = counts.entry(l.clone()).or_default();
            c.1 += 1;
            if gold_spans.iter().any(|(gs, gl)| gs == span && gl == l) {
                c.0 += 1;
            }
        }
        for (_, l) in &gold_spans {
            counts.entry(l.clone()).or_default().2 += 1;
        }
    }
    let per_type: BTreeMap<String, Prf> = counts
        .iter()
        .map(|(k, &(tp, pr, go))| (k.clone(), Prf::from_counts(tp, pr, go)))
        .collect();
    let (tp, pr, go) = counts
        .values()
        .fold((0, 0, 0), |a, c| (a.0 + c.0, a.1 + c.1, a.2 + c.2));
    Ok(EvalReport {
        micro: Prf::from_counts(tp, pr, go),
        per_type,
    })
}

/// Gold BIO tags of a sentence.
pub fn gold_tags(s: &Sentence) -> Vec<String> {
    let mut tags = vec![OUTSIDE.to_string(); s.len()];
    for g in &s.gold_spans {
        for (i, t) in tags.iter_mut().enumerate().take(g.end).skip(g.start) {
            *t = if i == g.start {
                format!("B-{}", g.label)
            } else {
                format!("I-{}", g.label)
            };
        }
    }
    tags
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{GoldSpan, Token};
    use proptest::prelude::*;

    fn sent(id: &str, words: &[(&str, &str)], gold: &[(usize, usize, &str)]) -> Sentence {
        Sentence {
            id: id.into(),
            tokens: words
                .iter()
                .enumerate()
                .map(|(i, &(w, p))| Token {
                    surface: w.into(),
                    lemma: w.to_lowercase(),
                    pos: p.into(),
                    head: if i == 0 { None } else { Some(0) },
                    deprel: if i == 0 { "root".into() } else { "dep".into() },
                })
                .collect(),
            gold_spans: gold
                .iter()
                .map(|&(start, end, l)| GoldSpan {
                    start,
                    end,
                    label: l.into(),
                })
                .collect(),
        }
    }

    fn full_example(pool: &UnlabeledPool, i: usize) -> TrainingExample {
        TrainingExample {
            sentence_index: i,
            tags: gold_tags(pool.sentence(i)).into_iter().map(Some).collect(),
        }
    }

    fn types() -> Vec<String> {
        vec!["disease".into(), "chemical".into()]
    }

    #[test]
    fn memorizes_single_sentence() {
        let s = sent(
            "a",
            &[("Aspirin", "PROPN"), ("treats", "VERB"), ("severe", "ADJ"), ("headache", "NOUN")],
            &[(0, 1, "chemical"), (2, 4, "disease")],
        );
        let pool = UnlabeledPool::new(vec![s.clone()]).unwrap();
        let t = train(&pool, &[full_example(&pool, 0)], &types(), &TaggerConfig::default()).unwrap();
        assert_eq!(t.tag(&s).tags, gold_tags(&s));
    }

    fn separable_corpus(n: usize, offset: usize) -> Vec<Sentence> {
        let diseases = ["fever", "asthma", "colitis", "anemia", "gout", "mumps"];
        let chems = ["Aspirin", "Heparin", "Lithium", "Morphine", "Caffeine", "Insulin"];
        (0..n)
            .map(|i| {
                let k = i + offset;
                let d = diseases[k % diseases.len()];
                let c = chems[(k / 2) % chems.len()];
                sent(
                    &format!("s{k:04}"),
                    &[(c, "PROPN"), ("relieved", "VERB"), ("the", "DET"), (d, "NOUN"), (".", "PUNCT")],
                    &[(0, 1, "chemical"), (3, 4, "disease")],
                )
            })
            .collect()
    }

    #[test]
    fn separable_corpus_scores_high_on_dev() {
        let pool = UnlabeledPool::new(separable_corpus(40, 0)).unwrap();
        let ex: Vec<_> = (0..pool.len()).map(|i| full_example(&pool, i)).collect();
        let t = train(&pool, &ex, &types(), &TaggerConfig::default()).unwrap();
        let dev = separable_corpus(20, 100);
        let preds: Vec<_> = dev.iter().map(|s| t.tag(s)).collect();
        let r = evaluate(&preds, &dev).unwrap();
        assert!(r.micro.f1 >= 0.95, "{}", r.to_table());
    }

    #[test]
    fn training_is_deterministic_and_order_invariant() {
        let sents = separable_corpus(12, 0);
        let pool = UnlabeledPool::new(sents.clone()).unwrap();
        let mut ex: Vec<_> = (0..pool.len()).map(|i| full_example(&pool, i)).collect();
        let cfg = TaggerConfig { epochs: 3, seed: 7 };
        let a = train(&pool, &ex, &types(), &cfg).unwrap();
        ex.reverse();
        let b = train(&pool, &ex, &types(), &cfg).unwrap();
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
    }

    #[test]
    fn masked_tokens_receive_no_updates() {
        let s = sent("a", &[("Zed", "PROPN"), ("runs", "VERB")], &[]);
        let pool = UnlabeledPool::new(vec![s]).unwrap();
        let ex = TrainingExample {
            sentence_index: 0,
            tags: vec![None, None],
        };
        let t = train(&pool, &[ex], &types(), &TaggerConfig::default()).unwrap();
        assert!(t.weights.is_empty());
    }

    #[test]
    fn checkpoint_round_trip() {
        let pool = UnlabeledPool::new(separable_corpus(4, 0)).unwrap();
        let ex: Vec<_> = (0..pool.len()).map(|i| full_example(&pool, i)).collect();
        let t = train(&pool, &ex, &types(), &TaggerConfig::default()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.json");
        t.save(&p).unwrap();
        assert_eq!(Tagger::load(&p).unwrap(), t);
    }

    #[test]
    fn pseudo_labels_have_nonnegative_margins() {
        let sents = separable_corpus(10, 0);
        let pool = UnlabeledPool::new(sents).unwrap();
        let ex: Vec<_> = (0..pool.len()).map(|i| full_example(&pool, i)).collect();
        let t = train(&pool, &ex, &types(), &TaggerConfig::default()).unwrap();
        let chunks = crate::corpus::extract_chunks(&pool);
        let labels = t.pseudo_label(&pool, &chunks);
        assert!(!labels.is_empty());
        for l in &labels {
            assert!(l.margin >= 0.0);
            let c = &chunks[l.chunk_index];
            let gold = &pool.sentence(c.sentence_index).gold_spans;
            assert!(gold.iter().any(|g| g.span() == c.span && g.label == l.label));
        }
        let empty = train(
            &pool,
            &[TrainingExample {
                sentence_index: 0,
                tags: vec![Some(OUTSIDE.into()); 5],
            }],
            &types(),
            &TaggerConfig::default(),
        )
        .unwrap();
        assert!(empty.pseudo_label(&pool, &chunks).is_empty());
    }

    #[test]
    fn eval_conventions() {
        let g = sent("a", &[("x", "NOUN"), ("y", "NOUN")], &[(0, 1, "disease")]);
        let perfect = TagSequence {
            sentence_id: "a".into(),
            tags: gold_tags(&g),
        };
        let r = evaluate(&[perfect], std::slice::from_ref(&g)).unwrap();
        assert_eq!((r.micro.precision, r.micro.recall, r.micro.f1), (1.0, 1.0, 1.0));
        let none = TagSequence {
            sentence_id: "a".into(),
            tags: vec!["O".into(), "O".into()],
        };
        let r = evaluate(&[none], std::slice::from_ref(&g)).unwrap();
        assert_eq!((r.micro.precision, r.micro.recall, r.micro.f1), (0.0, 0.0, 0.0));
        let wrong_id = TagSequence {
            sentence_id: "b".into(),
            tags: vec!["O".into(), "O".into()],
        };
        assert!(evaluate(&[wrong_id], &[g]).is_err());
    }

    #[test]
    fn eval_hand_counted_tallies() {
        // Ten sentences; tallies counted by hand:
        // disease: gold 7, predicted 7, exact 5. chemical: gold 4, predicted 5, exact 3.
        let mut gold = Vec::new();
        let mut preds = Vec::new();
        let mut push = |g: &[(usize, usize, &str)], p: Vec<&str>| {
            let words: Vec<(&str, &str)> = vec![("w", "NOUN"); p.len()];
            let id = format!("s{}", gold.len());
            gold.push(sent(&id, &words, g));
            preds.push(TagSequence {
                sentence_id: id,
                tags: p.into_iter().map(String::from).collect(),
            });
        };
        push(&[(0, 1, "disease")], vec!["B-disease", "O", "O"]);
        push(&[(0, 2, "disease")], vec!["B-disease", "I-disease", "O"]);
        push(&[(1, 2, "disease")], vec!["O", "B-disease", "O"]);
        push(&[(0, 2, "disease")], vec!["B-disease", "O", "O"]);
        push(&[(2, 3, "disease")], vec!["O", "O", "B-chemical"]);
        push(&[(0, 1, "disease"), (2, 3, "chemical")], vec!["B-disease", "O", "B-chemical"]);
        push(&[(0, 1, "disease"), (1, 2, "chemical")], vec!["B-disease", "B-chemical", "O"]);
        push(&[(0, 1, "chemical")], vec!["B-chemical", "O", "B-disease"]);
        push(&[(0, 2, "chemical")], vec!["B-chemical", "O", "O"]);
        push(&[], vec!["O", "O", "O"]);
        let r = evaluate(&preds, &gold).unwrap();
        let d = r.per_type["disease"];
        let c = r.per_type["chemical"];
        assert_eq!((d.true_positives, d.predicted, d.gold), (5, 7, 7));
        assert_eq!((c.true_positives, c.predicted, c.gold), (3, 5, 4));
        assert_eq!((r.micro.true_positives, r.micro.predicted, r.micro.gold), (8, 12, 11));
        assert!((r.micro.f1 - 16.0 / 23.0).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn decoded_sequences_are_valid_bio(words in prop::collection::vec("[a-zA-Z]{1,6}", 1..12), seed in 0u64..50) {
            let pool = UnlabeledPool::new(separable_corpus(6, seed as usize)).unwrap();
            let ex: Vec<_> = (0..pool.len()).map(|i| full_example(&pool, i)).collect();
            let t = train(&pool, &ex, &types(), &TaggerConfig { epochs: 2, seed }).unwrap();
            let pairs: Vec<(&str, &str)> = words.iter().map(|w| (w.as_str(), "NOUN")).collect();
            let s = sent("p", &pairs, &[]);
            let tags = t.tag(&s).tags;
            prop_assert!(is_valid_bio(&tags));
            let back = TagSequence { sentence_id: "p".into(), tags: tags.clone() };
            let mut g = s.clone();
            g.gold_spans = spans_from_tags(&tags)
                .into_iter()
                .map(|(sp, l)| GoldSpan { start: sp.start, end: sp.end, label: l })
                .collect();
            let r = evaluate(&[back], &[g]).unwrap();
            prop_assert!(r.micro.predicted == 0 || r.micro.f1 == 1.0);
        }
    }
}
