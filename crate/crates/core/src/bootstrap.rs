//! The bootstrap loop: grow the instance pool and distill rules from it.
//!
//! Each iteration
//! 1. applies the rule pool to propose new instances,
//! 2. trains the tagger on the instance pool,
//! 3. pseudo-labels the remaining chunks and admits those whose S-score
//!    beats the pool's own leave-one-out S-score median,
//! 4. scores every candidate antecedent against the pool and admits the
//!    rules whose R-score beats the median score of the rule pool.
//!
//! The loop stops as soon as an iteration leaves either pool unchanged, or
//! after `max_iterations`. Pools only grow.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::index::sample;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{CandidateChunk, Sentence, Span, UnlabeledPool};
use crate::error::{Error, Result};
use crate::miner::CandidateRuleSet;
use crate::oracle::SeedRule;
use crate::rules::{LogicalRule, RuleId, RuleRecord, RuleStats};
use crate::tagger::{self, Tagger, TaggerConfig, TrainingExample, OUTSIDE};

pub const DEFAULT_WINDOW: usize = 5;
pub const DEFAULT_SAMPLE_SIZE: usize = 20;
pub const DEFAULT_PROBES: usize = 50;
pub const SNAPSHOT_DIR: &str = "snapshots";

/// Lower middle element; `None` for an empty list.
pub fn lower_median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    Some(v[(v.len() - 1) / 2])
}

/// `(M/N) log2 N`; `None` when nothing matched.
pub fn r_score(stats: RuleStats) -> Option<f64> {
    if stats.n_matched == 0 {
        return None;
    }
    let n = stats.n_matched as f64;
    Some(stats.m_correct as f64 / n * n.log2())
}

/// Deterministic per-item generator, independent of visiting order.
pub fn derived_rng(seed: u64, stream: u64, key: u64) -> ChaCha8Rng {
    let mut z = seed
        .wrapping_add(stream.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(key.wrapping_mul(0xD1B5_4A32_D192_ED03));
    // splitmix64 finalizer
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    ChaCha8Rng::seed_from_u64(z ^ (z >> 31))
}

/// TF-IDF unigram vectors of every chunk's window (span plus `window`
/// tokens each side), with sentences as documents.
#[derive(Debug, Clone)]
pub struct SimilarityIndex {
    windows: Vec<Vec<String>>,
    vectors: Vec<Vec<(u32, f64)>>,
}

impl SimilarityIndex {
    pub fn new(pool: &UnlabeledPool, chunks: &[CandidateChunk], window: usize) -> Self {
        let mut vocab: HashMap<String, u32> = HashMap::new();
        let mut df: Vec<usize> = Vec::new();
        for s in pool.sentences() {
            let terms: BTreeSet<String> = s.tokens.iter().map(|t| t.surface.to_lowercase()).collect();
            for t in terms {
                let next = vocab.len() as u32;
                let id = *vocab.entry(t).or_insert(next);
                if id as usize == df.len() {
                    df.push(0);
                }
                df[id as usize] += 1;
            }
        }
        let n_docs = pool.len() as f64;
        let idf: Vec<f64> = df
            .iter()
            .map(|&d| ((1.0 + n_docs) / (1.0 + d as f64)).ln() + 1.0)
            .collect();

        let windows: Vec<Vec<String>> = chunks
            .iter()
            .map(|c| {
                let s = pool.sentence(c.sentence_index);
                let lo = c.span.start.saturating_sub(window);
                let hi = (c.span.end + window).min(s.len());
                s.tokens[lo..hi].iter().map(|t| t.surface.to_lowercase()).collect()
            })
            .collect();
        let vectors = windows
            .iter()
            .map(|w| {
                let mut tf: BTreeMap<u32, f64> = BTreeMap::new();
                for t in w {
                    *tf.entry(vocab[t]).or_default() += 1.0;
                }
                let mut v: Vec<(u32, f64)> = tf.into_iter().map(|(k, c)| (k, c * idf[k as usize])).collect();
                let norm = v.iter().map(|(_, x)| x * x).sum::<f64>().sqrt();
                if norm > 0.0 {
                    v.iter_mut().for_each(|(_, x)| *x /= norm);
                }
                v
            })
            .collect();
        SimilarityIndex { windows, vectors }
    }

    pub fn window(&self, chunk: usize) -> &[String] {
        &self.windows[chunk]
    }

    /// Cosine of the two windows' vectors, in [0, 1]; identical windows
    /// score exactly 1.
    pub fn similarity(&self, a: usize, b: usize) -> f64 {
        if self.windows[a] == self.windows[b] {
            return 1.0;
        }
        let (va, vb) = (&self.vectors[a], &self.vectors[b]);
        let (mut i, mut j, mut dot) = (0, 0, 0.0);
        while i < va.len() && j < vb.len() {
            match va[i].0.cmp(&vb[j].0) {
                std::cmp::Ordering::Less => i += 1,
                std::cmp::Ordering::Greater => j += 1,
                std::cmp::Ordering::Equal => {
                    dot += va[i].1 * vb[j].1;
                    i += 1;
                    j += 1;
                }
            }
        }
        dot.clamp(0.0, 1.0)
    }
}

/// Lower median similarity of `candidate` to at most `sample_size` members
/// of `same_label`, drawn without replacement. `None` if `same_label` is
/// empty.
pub fn s_score(
    index: &SimilarityIndex,
    candidate: usize,
    same_label: &[usize],
    sample_size: usize,
    rng: &mut ChaCha8Rng,
) -> Option<f64> {
    let picked: Vec<usize> = if same_label.len() <= sample_size {
        same_label.to_vec()
    } else {
        let mut idx = sample(rng, same_label.len(), sample_size).into_vec();
        idx.sort_unstable();
        idx.into_iter().map(|i| same_label[i]).collect()
    };
    let sims: Vec<f64> = picked.iter().map(|&o| index.similarity(candidate, o)).collect();
    lower_median(&sims)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Seed,
    FinetunedSeed,
    Rule,
    Model,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoolEntry {
    pub chunk_index: usize,
    pub sentence_id: String,
    pub span: Span,
    pub text: String,
    pub label: String,
    pub confidence: f64,
    pub provenance: Provenance,
    /// Iteration of admission; 0 for seeds.
    pub iteration: usize,
}

/// PL_S: labeled instances keyed by chunk index.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct InstancePool {
    entries: BTreeMap<usize, PoolEntry>,
}

impl InstancePool {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn contains(&self, chunk: usize) -> bool {
        self.entries.contains_key(&chunk)
    }

    pub fn get(&self, chunk: usize) -> Option<&PoolEntry> {
        self.entries.get(&chunk)
    }

    pub fn entries(&self) -> impl Iterator<Item = &PoolEntry> {
        self.entries.values()
    }

    /// Inserts unless the chunk is already present; entries are never replaced.
    pub fn admit(&mut self, entry: PoolEntry) -> bool {
        if self.entries.contains_key(&entry.chunk_index) {
            return false;
        }
        self.entries.insert(entry.chunk_index, entry);
        true
    }

    /// Chunk indices per label, ascending.
    pub fn by_label(&self) -> BTreeMap<&str, Vec<usize>> {
        let mut out: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
        for e in self.entries.values() {
            out.entry(&e.label).or_default().push(e.chunk_index);
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RuleEntry {
    pub rule: LogicalRule,
    pub stats: RuleStats,
    pub score: f64,
    pub iteration: usize,
}

impl RuleEntry {
    pub fn record(&self) -> RuleRecord {
        RuleRecord::from_rule(&self.rule, Some(self.stats), Some(self.score))
    }
}

/// PL_R: admitted rules keyed by id.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RulePool {
    pub rules: BTreeMap<RuleId, RuleEntry>,
}

impl RulePool {
    pub fn len(&self) -> usize {
        self.rules.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rules.is_empty()
    }

    pub fn contains(&self, id: &RuleId) -> bool {
        self.rules.contains_key(id)
    }

    pub fn scores(&self) -> Vec<f64> {
        self.rules.values().map(|r| r.score).collect()
    }

    /// Records sorted by descending score, then id.
    pub fn records(&self) -> Vec<RuleRecord> {
        let mut v: Vec<&RuleEntry> = self.rules.values().collect();
        v.sort_by(|a, b| b.score.total_cmp(&a.score).then_with(|| a.rule.rule_id.cmp(&b.rule.rule_id)));
        v.into_iter().map(RuleEntry::record).collect()
    }
}

/// Lower median of the rule pool's scores, or `floor` when it is empty.
pub fn r_score_threshold(pool: &RulePool, floor: f64) -> f64 {
    lower_median(&pool.scores()).unwrap_or(floor)
}

/// Lower median over up to `probes` sampled pool members of their S-score
/// against the rest of the pool's same-label members. Falls back to `floor`
/// when the pool has fewer than two members or no probe has a peer.
pub fn s_score_threshold(
    index: &SimilarityIndex,
    pool: &InstancePool,
    probes: usize,
    sample_size: usize,
    seed: u64,
    floor: f64,
) -> f64 {
    s_score_threshold_with(index, pool, probes, sample_size, seed).unwrap_or(floor)
}

fn s_score_threshold_with(
    index: &SimilarityIndex,
    pool: &InstancePool,
    probes: usize,
    sample_size: usize,
    seed: u64,
) -> Option<f64> {
    if pool.len() < 2 {
        return None;
    }
    let members: Vec<&PoolEntry> = pool.entries().collect();
    let by_label = pool.by_label();
    let mut rng = derived_rng(seed, RNG_PROBE, 0);
    let mut chosen: Vec<usize> = if members.len() <= probes {
        (0..members.len()).collect()
    } else {
        sample(&mut rng, members.len(), probes).into_vec()
    };
    chosen.sort_unstable();
    let scores: Vec<f64> = chosen
        .par_iter()
        .filter_map(|&m| {
            let e = members[m];
            let peers: Vec<usize> = by_label[e.label.as_str()]
                .iter()
                .copied()
                .filter(|&c| c != e.chunk_index)
                .collect();
            let mut rng = derived_rng(seed, RNG_PROBE_SAMPLE, e.chunk_index as u64);
            s_score(index, e.chunk_index, &peers, sample_size, &mut rng)
        })
        .collect();
    lower_median(&scores)
}

const RNG_PROBE: u64 = 1;
const RNG_PROBE_SAMPLE: u64 = 2;
const RNG_RULE_SAMPLE: u64 = 3;
const RNG_MODEL_SAMPLE: u64 = 4;
const RNG_TAGGER: u64 = 5;

/// Stats of one antecedent against the pool: N counts matched pool
/// instances (plus matched negatives when `negatives` is given), the
/// consequent is their majority label (ties to the smaller name) and M
/// counts those carrying it. `None` when nothing in the pool matches.
pub fn bind_consequent(
    occurrences: &[usize],
    pool: &InstancePool,
    negatives: Option<&BTreeSet<usize>>,
) -> Option<(String, RuleStats)> {
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    let mut n = 0;
    for c in occurrences {
        if let Some(e) = pool.get(*c) {
            *counts.entry(&e.label).or_default() += 1;
            n += 1;
        } else if negatives.is_some_and(|neg| neg.contains(c)) {
            n += 1;
        }
    }
    let (label, m) = counts.iter().rev().max_by_key(|(_, m)| **m)?;
    Some((
        label.to_string(),
        RuleStats {
            n_matched: n,
            m_correct: *m,
        },
    ))
}

/// Every candidate with positive pool support, bound and scored.
pub fn distill_rules(
    candidates: &CandidateRuleSet,
    pool: &InstancePool,
    negatives: Option<&BTreeSet<usize>>,
) -> Vec<(LogicalRule, RuleStats, f64)> {
    let all: Vec<_> = candidates.rules.values().collect();
    all.par_iter()
        .filter_map(|c| {
            let (label, stats) = bind_consequent(&c.occurrences, pool, negatives)?;
            let score = r_score(stats)?;
            Some((
                LogicalRule {
                    rule_id: c.rule_id.clone(),
                    antecedent: c.antecedent.clone(),
                    consequent: label,
                },
                stats,
                score,
            ))
        })
        .collect()
}

/// Chunk indices matched by `rule`, using the mined occurrence list when
/// the rule is a candidate and evaluating it otherwise.
fn rule_occurrences(
    rule: &LogicalRule,
    candidates: &CandidateRuleSet,
    chunks: &[CandidateChunk],
    pool: &UnlabeledPool,
) -> Vec<usize> {
    match candidates.get(&rule.rule_id) {
        Some(c) => c.occurrences.clone(),
        None => chunks
            .iter()
            .enumerate()
            .filter(|(_, c)| rule.matches(c, pool.sentence(c.sentence_index)))
            .map(|(i, _)| i)
            .collect(),
    }
}

/// Re-derives N, M and score of every pool rule against `instances`,
/// keeping each rule's consequent.
pub fn recompute_stats(
    rules: &mut RulePool,
    instances: &InstancePool,
    candidates: &CandidateRuleSet,
    chunks: &[CandidateChunk],
    pool: &UnlabeledPool,
    negatives: Option<&BTreeSet<usize>>,
) {
    for entry in rules.rules.values_mut() {
        let occ = rule_occurrences(&entry.rule, candidates, chunks, pool);
        let mut n = 0;
        let mut m = 0;
        for c in &occ {
            if let Some(e) = instances.get(*c) {
                n += 1;
                if e.label == entry.rule.consequent {
                    m += 1;
                }
            } else if negatives.is_some_and(|neg| neg.contains(c)) {
                n += 1;
            }
        }
        entry.stats = RuleStats {
            n_matched: n,
            m_correct: m,
        };
        entry.score = r_score(entry.stats).unwrap_or(0.0);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LoopConfig {
    pub max_iterations: usize,
    pub sample_size: usize,
    pub probes: usize,
    pub window: usize,
    /// Threshold used while PL_S has fewer than two members.
    pub s_score_floor: f64,
    /// Threshold used while PL_R is empty.
    pub r_score_floor: f64,
    /// Route rule-proposed instances through the S-score gate as well.
    pub gate_rule_instances: bool,
    /// Count matched negative chunks toward N during distillation.
    pub count_negatives: bool,
    /// Train unlabeled chunk tokens as O instead of masking them.
    pub unlabeled_as_outside: bool,
    pub tagger_epochs: usize,
    pub seed: u64,
}

impl Default for LoopConfig {
    fn default() -> Self {
        LoopConfig {
            max_iterations: 20,
            sample_size: DEFAULT_SAMPLE_SIZE,
            probes: DEFAULT_PROBES,
            window: DEFAULT_WINDOW,
            s_score_floor: 0.0,
            r_score_floor: 1.0,
            gate_rule_instances: true,
            count_negatives: true,
            unlabeled_as_outside: false,
            tagger_epochs: 10,
            seed: 13,
        }
    }
}

impl LoopConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.max_iterations < 1 {
            return bad("max_iterations must be at least 1");
        }
        if self.sample_size < 1 || self.probes < 1 {
            return bad("sample_size and probes must be at least 1");
        }
        if !(0.0..=1.0).contains(&self.s_score_floor) {
            return bad("s_score_floor must lie in [0, 1]");
        }
        if !self.r_score_floor.is_finite() || self.r_score_floor < 0.0 {
            return bad("r_score_floor must be a finite non-negative number");
        }
        if self.tagger_epochs < 1 {
            return bad("tagger_epochs must be at least 1");
        }
        Ok(())
    }
}

pub struct LoopInput<'a> {
    pub pool: &'a UnlabeledPool,
    pub chunks: &'a [CandidateChunk],
    pub candidates: &'a CandidateRuleSet,
    pub seeds: &'a [SeedRule],
    pub seed_provenance: Provenance,
    /// Chunk indices the oracle confidently labeled NA.
    pub negatives: &'a BTreeSet<usize>,
    pub types: &'a [String],
    /// Gold-annotated sentences scored after each iteration.
    pub dev: Option<&'a [Sentence]>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IterationThresholds {
    pub s_score_t: f64,
    pub r_score_t: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationTrace {
    pub iteration: usize,
    pub admitted_by_rules: usize,
    pub admitted_by_model: usize,
    pub rules_added: usize,
    pub pool_s: usize,
    pub pool_r: usize,
    pub dev_f1: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RuleSnapshot {
    #[serde(flatten)]
    pub record: RuleRecord,
    pub iteration: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub iteration: usize,
    pub halted: bool,
    pub pool_s: Vec<PoolEntry>,
    pub pool_r: Vec<RuleSnapshot>,
    pub thresholds: IterationThresholds,
    pub trace: IterationTrace,
}

pub fn snapshot_path(dir: &Path, iteration: usize) -> PathBuf {
    dir.join(format!("iter_{iteration:03}.json"))
}

impl Snapshot {
    fn capture(
        iteration: usize,
        halted: bool,
        instances: &InstancePool,
        rules: &RulePool,
        thresholds: IterationThresholds,
        trace: IterationTrace,
    ) -> Self {
        Snapshot {
            iteration,
            halted,
            pool_s: instances.entries().cloned().collect(),
            pool_r: rules
                .rules
                .values()
                .map(|r| RuleSnapshot {
                    record: r.record(),
                    iteration: r.iteration,
                })
                .collect(),
            thresholds,
            trace,
        }
    }

    pub fn write(&self, dir: &Path) -> Result<PathBuf> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = snapshot_path(dir, self.iteration);
        let tmp = path.with_extension("json.tmp");
        let text = serde_json::to_string_pretty(self)?;
        fs::write(&tmp, text).map_err(|e| Error::io(&tmp, e))?;
        fs::rename(&tmp, &path).map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Snapshot {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
    }

    /// Rebuilds both pools, checking every entry against the chunk list.
    fn restore(&self, path: &Path, chunks: &[CandidateChunk]) -> Result<(InstancePool, RulePool)> {
        let corrupt = |m: String| Error::Snapshot {
            path: path.to_path_buf(),
            message: m,
        };
        let mut instances = InstancePool::default();
        for e in &self.pool_s {
            let c = chunks
                .get(e.chunk_index)
                .ok_or_else(|| corrupt(format!("chunk index {} out of range", e.chunk_index)))?;
            if c.sentence_id != e.sentence_id || c.span != e.span || c.text != e.text {
                return Err(corrupt(format!("entry {} does not match the corpus", e.chunk_index)));
            }
            if !instances.admit(e.clone()) {
                return Err(corrupt(format!("duplicate entry {}", e.chunk_index)));
            }
        }
        let mut rules = RulePool::default();
        for r in &self.pool_r {
            let rule = r.record.to_rule().map_err(|e| corrupt(e.to_string()))?;
            let (Some(n), Some(m), Some(score)) = (r.record.stats.n, r.record.stats.m, r.record.stats.score) else {
                return Err(corrupt(format!("rule {} lacks stats", r.record.rule_id)));
            };
            rules.rules.insert(
                rule.rule_id.clone(),
                RuleEntry {
                    rule,
                    stats: RuleStats {
                        n_matched: n,
                        m_correct: m,
                    },
                    score,
                    iteration: r.iteration,
                },
            );
        }
        Ok((instances, rules))
    }
}

/// Latest snapshot in `dir`, by iteration number.
pub fn latest_snapshot(dir: &Path) -> Result<Option<(PathBuf, Snapshot)>> {
    if !dir.exists() {
        return Ok(None);
    }
    let mut best: Option<(usize, PathBuf)> = None;
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("");
        let Some(n) = name
            .strip_prefix("iter_")
            .and_then(|r| r.strip_suffix(".json"))
            .and_then(|d| d.parse::<usize>().ok())
        else {
            continue;
        };
        if best.as_ref().is_none_or(|(b, _)| n > *b) {
            best = Some((n, path));
        }
    }
    match best {
        None => Ok(None),
        Some((_, path)) => {
            let snap = Snapshot::read(&path)?;
            Ok(Some((path, snap)))
        }
    }
}

/// Traces of all snapshots in `dir` up to `last`, in iteration order.
pub fn read_traces(dir: &Path, last: usize) -> Result<Vec<IterationTrace>> {
    (1..=last)
        .map(|i| Snapshot::read(&snapshot_path(dir, i)).map(|s| s.trace))
        .collect()
}

pub fn growth_csv(traces: &[IterationTrace]) -> String {
    let mut out = String::from("iteration,pool_s,pool_r,dev_f1\n");
    for t in traces {
        let f1 = t.dev_f1.map(|f| format!("{f:.6}")).unwrap_or_default();
        out.push_str(&format!("{},{},{},{}\n", t.iteration, t.pool_s, t.pool_r, f1));
    }
    out
}

#[derive(Debug, Clone)]
pub struct LoopOutcome {
    pub instances: InstancePool,
    pub rules: RulePool,
    pub tagger: Tagger,
    pub traces: Vec<IterationTrace>,
    /// Iterations executed in total, including resumed ones.
    pub iterations: usize,
    /// True when the loop stopped because a pool stopped changing.
    pub converged: bool,
}

/// Initial pools: every chunk whose text carries a seed rule, and the seed
/// rules scored against that pool. Texts with conflicting seeds are skipped.
pub fn initial_pools(input: &LoopInput, negatives: Option<&BTreeSet<usize>>) -> (InstancePool, RulePool) {
    let mut by_text: BTreeMap<&str, Vec<&SeedRule>> = BTreeMap::new();
    for s in input.seeds {
        by_text.entry(&s.text).or_default().push(s);
    }
    let mut instances = InstancePool::default();
    for (ci, c) in input.chunks.iter().enumerate() {
        let Some(seeds) = by_text.get(c.text.as_str()) else {
            continue;
        };
        if seeds.iter().any(|s| s.label != seeds[0].label) {
            continue;
        }
        instances.admit(PoolEntry {
            chunk_index: ci,
            sentence_id: c.sentence_id.clone(),
            span: c.span,
            text: c.text.clone(),
            label: seeds[0].label.clone(),
            confidence: seeds[0].confidence,
            provenance: input.seed_provenance,
            iteration: 0,
        });
    }
    let mut rules = RulePool::default();
    for s in input.seeds {
        rules.rules.entry(s.rule.rule_id.clone()).or_insert(RuleEntry {
            rule: s.rule.clone(),
            stats: RuleStats::default(),
            score: 0.0,
            iteration: 0,
        });
    }
    recompute_stats(&mut rules, &instances, input.candidates, input.chunks, input.pool, negatives);
    (instances, rules)
}

/// Partially labeled training sentences from the instance pool.
pub fn training_examples(input: &LoopInput, instances: &InstancePool, unlabeled_as_outside: bool) -> Vec<TrainingExample> {
    let mut per_sentence: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (ci, c) in input.chunks.iter().enumerate() {
        per_sentence.entry(c.sentence_index).or_default().push(ci);
    }
    let mut out = Vec::new();
    for (si, cis) in per_sentence {
        let relevant = cis
            .iter()
            .any(|c| instances.contains(*c) || input.negatives.contains(c));
        if !relevant {
            continue;
        }
        let n = input.pool.sentence(si).len();
        let mut tags: Vec<Option<String>> = vec![Some(OUTSIDE.to_string()); n];
        for &ci in &cis {
            let span = input.chunks[ci].span;
            if let Some(e) = instances.get(ci) {
                for (k, t) in tags[span.start..span.end].iter_mut().enumerate() {
                    let prefix = if k == 0 { "B" } else { "I" };
                    *t = Some(format!("{prefix}-{}", e.label));
                }
            } else if !input.negatives.contains(&ci) && !unlabeled_as_outside {
                tags[span.start..span.end].iter_mut().for_each(|t| *t = None);
            }
        }
        out.push(TrainingExample {
            sentence_index: si,
            tags,
        });
    }
    out
}

fn train_tagger(input: &LoopInput, instances: &InstancePool, config: &LoopConfig, iteration: usize) -> Result<Tagger> {
    let examples = training_examples(input, instances, config.unlabeled_as_outside);
    let tcfg = TaggerConfig {
        epochs: config.tagger_epochs,
        seed: derived_rng(config.seed, RNG_TAGGER, iteration as u64).next_u64(),
    };
    tagger::train(input.pool, &examples, input.types, &tcfg)
}

/// Candidates scored against same-label pool members; admits those strictly
/// above `threshold`. Returns the number admitted.
#[allow(clippy::too_many_arguments)]
fn admit_by_s_score(
    proposals: Vec<(usize, String)>,
    index: &SimilarityIndex,
    instances: &mut InstancePool,
    input: &LoopInput,
    config: &LoopConfig,
    threshold: Option<f64>,
    stream: u64,
    iteration: usize,
    provenance: Provenance,
) -> usize {
    let by_label: BTreeMap<String, Vec<usize>> = instances
        .by_label()
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect();
    let scored: Vec<(usize, String, Option<f64>)> = proposals
        .into_par_iter()
        .map(|(ci, label)| {
            let score = by_label.get(&label).and_then(|peers| {
                let mut rng = derived_rng(config.seed ^ iteration as u64, stream, ci as u64);
                s_score(index, ci, peers, config.sample_size, &mut rng)
            });
            (ci, label, score)
        })
        .collect();
    let mut admitted = 0;
    for (ci, label, score) in scored {
        // No same-label peers: deferred.
        let Some(score) = score else { continue };
        if let Some(t) = threshold {
            if score <= t {
                continue;
            }
        }
        let c = &input.chunks[ci];
        admitted += usize::from(instances.admit(PoolEntry {
            chunk_index: ci,
            sentence_id: c.sentence_id.clone(),
            span: c.span,
            text: c.text.clone(),
            label,
            confidence: score,
            provenance,
            iteration,
        }));
    }
    admitted
}

/// Runs the loop, writing one snapshot per iteration to `snapshot_dir`.
/// With `resume`, continues from the latest snapshot found there.
pub fn run_loop(
    input: &LoopInput,
    config: &LoopConfig,
    snapshot_dir: Option<&Path>,
    resume: bool,
) -> Result<LoopOutcome> {
    config.validate()?;
    if input.seeds.is_empty() {
        return Err(Error::Config("bootstrap needs at least one seed rule".into()));
    }
    let negatives = config.count_negatives.then_some(input.negatives);
    let index = SimilarityIndex::new(input.pool, input.chunks, config.window);

    let (mut instances, mut rules, mut traces, start, mut converged) = match (resume, snapshot_dir) {
        (true, Some(dir)) => match latest_snapshot(dir)? {
            Some((path, snap)) => {
                let (i, r) = snap.restore(&path, input.chunks)?;
                let traces = read_traces(dir, snap.iteration)?;
                log::info!("resuming after iteration {} from {}", snap.iteration, path.display());
                (i, r, traces, snap.iteration + 1, snap.halted)
            }
            None => {
                let (i, r) = initial_pools(input, negatives);
                (i, r, Vec::new(), 1, false)
            }
        },
        _ => {
            let (i, r) = initial_pools(input, negatives);
            (i, r, Vec::new(), 1, false)
        }
    };
    if instances.is_empty() {
        return Err(Error::EmptyPool);
    }

    let mut iteration = start - 1;
    while !converged && iteration < config.max_iterations {
        iteration += 1;
        let size_s = instances.len();
        let size_r = rules.len();

        // (1) Rule application.
        let s_t = s_score_threshold_with(&index, &instances, config.probes, config.sample_size, config.seed ^ iteration as u64);
        let mut votes: BTreeMap<usize, BTreeMap<&str, usize>> = BTreeMap::new();
        for r in rules.rules.values() {
            for ci in rule_occurrences(&r.rule, input.candidates, input.chunks, input.pool) {
                if !instances.contains(ci) && !input.negatives.contains(&ci) {
                    *votes.entry(ci).or_default().entry(&r.rule.consequent).or_default() += 1;
                }
            }
        }
        let proposals: Vec<(usize, String)> = votes
            .into_iter()
            .filter_map(|(ci, v)| {
                let best = *v.values().max()?;
                let mut top = v.iter().filter(|(_, n)| **n == best);
                let (label, _) = top.next()?;
                // Ties between labels leave the chunk alone.
                top.next().is_none().then(|| (ci, label.to_string()))
            })
            .collect();
        let gate = if config.gate_rule_instances {
            Some(s_t.unwrap_or(config.s_score_floor))
        } else {
            None
        };
        let admitted_by_rules = admit_by_s_score(
            proposals,
            &index,
            &mut instances,
            input,
            config,
            gate,
            RNG_RULE_SAMPLE,
            iteration,
            Provenance::Rule,
        );

        // (2) Train on the pool.
        let model = train_tagger(input, &instances, config, iteration)?;

        // (3) Pseudo-label and admit.
        let s_t = s_score_threshold_with(&index, &instances, config.probes, config.sample_size, config.seed ^ iteration as u64)
            .unwrap_or(config.s_score_floor);
        let proposals: Vec<(usize, String)> = model
            .pseudo_label(input.pool, input.chunks)
            .into_iter()
            .filter(|p| !instances.contains(p.chunk_index) && !input.negatives.contains(&p.chunk_index))
            .map(|p| (p.chunk_index, p.label))
            .collect();
        let admitted_by_model = admit_by_s_score(
            proposals,
            &index,
            &mut instances,
            input,
            config,
            Some(s_t),
            RNG_MODEL_SAMPLE,
            iteration,
            Provenance::Model,
        );

        // (4) Distill.
        let r_t = r_score_threshold(&rules, config.r_score_floor);
        let mut rules_added = 0;
        for (rule, stats, score) in distill_rules(input.candidates, &instances, negatives) {
            if score > r_t && !rules.contains(&rule.rule_id) {
                rules.rules.insert(
                    rule.rule_id.clone(),
                    RuleEntry {
                        rule,
                        stats,
                        score,
                        iteration,
                    },
                );
                rules_added += 1;
            }
        }

        let dev_f1 = match input.dev {
            Some(dev) => {
                let preds: Vec<_> = dev.iter().map(|s| model.tag(s)).collect();
                Some(tagger::evaluate(&preds, dev)?.micro.f1)
            }
            None => None,
        };
        converged = instances.len() == size_s || rules.len() == size_r;
        let trace = IterationTrace {
            iteration,
            admitted_by_rules,
            admitted_by_model,
            rules_added,
            pool_s: instances.len(),
            pool_r: rules.len(),
            dev_f1,
        };
        log::info!(
            "iteration {iteration}: +{admitted_by_rules} by rules, +{admitted_by_model} by model, +{rules_added} rules; |PL_S|={} |PL_R|={}",
            instances.len(),
            rules.len()
        );
        traces.push(trace.clone());
        if let Some(dir) = snapshot_dir {
            Snapshot::capture(
                iteration,
                converged,
                &instances,
                &rules,
                IterationThresholds {
                    s_score_t: s_t,
                    r_score_t: r_t,
                },
                trace,
            )
            .write(dir)?;
        }
    }

    recompute_stats(&mut rules, &instances, input.candidates, input.chunks, input.pool, negatives);
    let tagger = train_tagger(input, &instances, config, 0)?;
    Ok(LoopOutcome {
        instances,
        rules,
        tagger,
        traces,
        iterations: iteration,
        converged,
    })
}
