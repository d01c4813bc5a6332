//! Subcommand stages over a [`RunConfig`].
//!
//! Every stage reads its inputs from the corpus and from artifacts earlier
//! stages left in `output_dir`, and rewrites its own artifacts in full.
//! Artifacts are JSON or plain text with a fixed key and line order, so two
//! runs with the same config produce byte-identical files.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::bootstrap::{growth_csv, run_loop, LoopInput, Provenance, SNAPSHOT_DIR};
use crate::config::{OracleBackend, RunConfig};
use crate::corpus::{extract_chunks, load_corpus, CandidateChunk, Sentence, UnlabeledPool};
use crate::miner::{mine_atoms, mine_compounds, CandidateRuleSet};
use crate::oracle::{
    compute_verdicts, finetune_dataset, finetuned_seeds, is_negative, zero_shot_seeds, ChunkVerdict, LabelMapping,
    MockLexicon, MockOracle, Oracle, RemoteOracle, SeedMode, SeedRule, SeedThresholds,
};
use crate::rules::{Atom, Expr, LogicalRule, RuleId, RuleRecord};
use crate::tagger::{self, gold_tags, EvalReport, Tagger, OUTSIDE};
use crate::synthetic;
use crate::{Error, Result};

pub const CANDIDATES_FILE: &str = "candidates.jsonl";
pub const MINE_SUMMARY_FILE: &str = "mine_summary.json";
pub const SEEDS_FILE: &str = "seeds.jsonl";
pub const VERDICTS_FILE: &str = "verdicts.jsonl";
pub const NEGATIVES_FILE: &str = "negatives.jsonl";
pub const MAPPING_FILE: &str = "label_mapping.json";
pub const SEED_SUMMARY_FILE: &str = "seed_summary.json";
pub const RULES_FILE: &str = "rules.jsonl";
pub const POOL_FILE: &str = "pool_s.jsonl";
pub const TAGGER_FILE: &str = "tagger.json";
pub const GROWTH_FILE: &str = "growth.csv";
pub const BOOTSTRAP_SUMMARY_FILE: &str = "bootstrap_summary.json";
pub const EVAL_JSON_FILE: &str = "eval.json";
pub const EVAL_TABLE_FILE: &str = "eval.txt";
pub const PREDICTIONS_FILE: &str = "predictions.conll";
pub const EXPORT_FILE: &str = "rules.tsv";

fn write_file(path: &Path, contents: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_file(path, text.as_bytes())
}

fn write_jsonl<T: Serialize>(path: &Path, items: impl IntoIterator<Item = T>) -> Result<()> {
    let mut buf = Vec::new();
    for item in items {
        serde_json::to_writer(&mut buf, &item)?;
        buf.push(b'\n');
    }
    write_file(path, &buf)
}

fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| Error::Parse {
                origin: path.display().to_string(),
                line: i + 1,
                message: e.to_string(),
            })
        })
        .collect()
}

fn require(path: &Path, stage: &str) -> Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(Error::Config(format!(
            "`{}` not found; run `{stage}` first",
            path.display()
        )))
    }
}

/// The training corpus and its candidate chunks.
pub struct Workspace {
    pub pool: UnlabeledPool,
    pub chunks: Vec<CandidateChunk>,
}

impl Workspace {
    pub fn load(cfg: &RunConfig) -> Result<Self> {
        let path = &cfg.corpus.train;
        let pool = load_corpus(path, cfg.format_of(path)?)?;
        let chunks = extract_chunks(&pool);
        Ok(Workspace { pool, chunks })
    }

    fn chunk_lookup(&self) -> BTreeMap<(&str, usize, usize), usize> {
        self.chunks
            .iter()
            .enumerate()
            .map(|(i, c)| ((c.sentence_id.as_str(), c.span.start, c.span.end), i))
            .collect()
    }
}

pub fn load_gold(cfg: &RunConfig) -> Result<Option<Vec<Sentence>>> {
    match &cfg.corpus.gold {
        Some(path) => Ok(Some(load_corpus(path, cfg.format_of(path)?)?.sentences().to_vec())),
        None => Ok(None),
    }
}

pub fn build_oracle(cfg: &RunConfig) -> Result<Box<dyn Oracle>> {
    Ok(match cfg.backend() {
        OracleBackend::Mock(path) => Box::new(MockOracle::new(MockLexicon::load(path)?)),
        OracleBackend::Remote { url, timeout } => Box::new(RemoteOracle::new(url, timeout)),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MineSummary {
    pub sentences: usize,
    pub chunks: usize,
    pub atom_rules: usize,
    pub compound_rules: usize,
    pub total_rules: usize,
}

pub fn mine_candidates(cfg: &RunConfig, ws: &Workspace) -> CandidateRuleSet {
    mine_compounds(mine_atoms(&ws.pool, &ws.chunks, cfg.miner.min_support))
}

/// `mine`: the candidate set, one record per line in rule-id order.
pub fn cmd_mine(cfg: &RunConfig) -> Result<MineSummary> {
    let ws = Workspace::load(cfg)?;
    let set = mine_candidates(cfg, &ws);
    let summary = MineSummary {
        sentences: ws.pool.len(),
        chunks: ws.chunks.len(),
        atom_rules: set.atom_rule_count(),
        compound_rules: set.compound_rule_count(),
        total_rules: set.len(),
    };
    write_jsonl(&cfg.output_dir.join(CANDIDATES_FILE), set.records())?;
    write_json(&cfg.output_dir.join(MINE_SUMMARY_FILE), &summary)?;
    Ok(summary)
}

/// A seed rule as persisted between stages.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedRecord {
    pub rule_id: RuleId,
    pub antecedent: String,
    pub consequent: String,
    pub text: String,
    pub confidence: f64,
    pub support: usize,
    pub provenance: Provenance,
}

impl SeedRecord {
    fn from_seed(s: &SeedRule, provenance: Provenance) -> Self {
        SeedRecord {
            rule_id: s.rule.rule_id.clone(),
            antecedent: s.rule.antecedent.to_string(),
            consequent: s.label.clone(),
            text: s.text.clone(),
            confidence: s.confidence,
            support: s.support,
            provenance,
        }
    }

    fn to_seed(&self) -> Result<SeedRule> {
        let rule = LogicalRule::new(&Expr::atom(Atom::TokenString(self.text.clone())), &self.consequent);
        if rule.rule_id != self.rule_id {
            return Err(Error::Rule(format!("seed `{}` does not match its rule id", self.text)));
        }
        Ok(SeedRule {
            rule,
            text: self.text.clone(),
            label: self.consequent.clone(),
            confidence: self.confidence,
            support: self.support,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NegativeRecord {
    pub sentence_id: String,
    pub start: usize,
    pub end: usize,
    pub text: String,
    pub confidence: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedSummary {
    pub mode: SeedMode,
    pub thresholds: SeedThresholds,
    pub seed_rules: usize,
    pub seeded_occurrences: usize,
    pub negatives: usize,
    /// Fraction of seeded occurrences whose gold span carries the seed label.
    pub precision_vs_gold: Option<f64>,
    /// Fine-tuning pairs sent to the oracle, when fine-tuning ran.
    pub finetune_pairs: Option<usize>,
}

pub struct SeedOutcome {
    pub seeds: Vec<SeedRule>,
    pub verdicts: Vec<ChunkVerdict>,
    pub negatives: Vec<usize>,
    pub mapping: LabelMapping,
    pub finetune_pairs: Option<usize>,
}

fn negative_indices(verdicts: &[ChunkVerdict], t: SeedThresholds) -> Vec<usize> {
    (0..verdicts.len()).filter(|&i| is_negative(&verdicts[i], t.p_t, t.r_t)).collect()
}

/// Seeds in `mode`. The fine-tuned mode first runs the zero-shot pass with
/// the zero-shot defaults, fine-tunes on its seeds and negatives, then
/// relabels every chunk with the fine-tuned templates and `thresholds`.
pub fn run_seeding(
    cfg: &RunConfig,
    ws: &Workspace,
    oracle: &mut dyn Oracle,
    mode: SeedMode,
    thresholds: SeedThresholds,
) -> Result<SeedOutcome> {
    let targets = cfg.targets()?;
    let params = cfg.verdict_params();
    let zs = match mode {
        SeedMode::ZeroShot => thresholds,
        SeedMode::Finetuned => SeedMode::ZeroShot.default_thresholds(),
    };
    let (verdicts, mapping) = compute_verdicts(&*oracle, &ws.pool, &ws.chunks, &targets, SeedMode::ZeroShot, &params)?;
    let seeds = zero_shot_seeds(&verdicts, zs.p_t, zs.r_t);
    let negatives = negative_indices(&verdicts, zs);
    if mode == SeedMode::ZeroShot {
        return Ok(SeedOutcome {
            seeds,
            verdicts,
            negatives,
            mapping,
            finetune_pairs: None,
        });
    }

    let by_text: BTreeMap<&str, &str> = seeds.iter().map(|s| (s.text.as_str(), s.label.as_str())).collect();
    let positives: Vec<(&CandidateChunk, &str)> = ws
        .chunks
        .iter()
        .filter_map(|c| by_text.get(c.text.as_str()).map(|l| (c, *l)))
        .collect();
    let negative_chunks: Vec<&CandidateChunk> = negatives.iter().map(|&i| &ws.chunks[i]).collect();
    let pairs = finetune_dataset(
        &positives,
        &negative_chunks,
        &ws.pool,
        cfg.seed.finetune_template,
        cfg.oracle.slots,
    )?;
    oracle.fine_tune(&pairs, cfg.seed.finetune_epochs)?;
    let (verdicts, mapping) = compute_verdicts(&*oracle, &ws.pool, &ws.chunks, &targets, SeedMode::Finetuned, &params)?;
    let seeds = finetuned_seeds(&verdicts, thresholds.p_t, thresholds.r_t);
    let negatives = negative_indices(&verdicts, thresholds);
    Ok(SeedOutcome {
        seeds,
        verdicts,
        negatives,
        mapping,
        finetune_pairs: Some(pairs.len()),
    })
}

fn seed_precision(ws: &Workspace, seeds: &[SeedRule]) -> (usize, Option<f64>) {
    let by_text: BTreeMap<&str, &str> = seeds.iter().map(|s| (s.text.as_str(), s.label.as_str())).collect();
    let mut total = 0;
    let mut correct = 0;
    for c in &ws.chunks {
        let Some(label) = by_text.get(c.text.as_str()) else {
            continue;
        };
        total += 1;
        let s = ws.pool.sentence(c.sentence_index);
        if s.gold_spans.iter().any(|g| g.span() == c.span && g.label == *label) {
            correct += 1;
        }
    }
    let precision = (ws.pool.has_gold() && total > 0).then(|| correct as f64 / total as f64);
    (total, precision)
}

/// `seed`: seed rules, the verdict table, negatives and the label mapping.
pub fn cmd_seed(cfg: &RunConfig, mode: SeedMode) -> Result<SeedSummary> {
    let ws = Workspace::load(cfg)?;
    let mut oracle = build_oracle(cfg)?;
    let thresholds = cfg.seed.thresholds(mode);
    let out = run_seeding(cfg, &ws, oracle.as_mut(), mode, thresholds)?;
    if out.seeds.is_empty() {
        log::warn!(
            "no chunk text passed p_t = {} and r_t = {}; bootstrap will have nothing to start from",
            thresholds.p_t,
            thresholds.r_t
        );
    }
    let provenance = match mode {
        SeedMode::ZeroShot => Provenance::Seed,
        SeedMode::Finetuned => Provenance::FinetunedSeed,
    };
    let dir = &cfg.output_dir;
    write_jsonl(
        &dir.join(SEEDS_FILE),
        out.seeds.iter().map(|s| SeedRecord::from_seed(s, provenance)),
    )?;
    write_jsonl(&dir.join(VERDICTS_FILE), &out.verdicts)?;
    write_jsonl(
        &dir.join(NEGATIVES_FILE),
        out.negatives.iter().map(|&i| {
            let v = &out.verdicts[i];
            NegativeRecord {
                sentence_id: v.sentence_id.clone(),
                start: v.span.start,
                end: v.span.end,
                text: v.text.clone(),
                confidence: v.confidence,
            }
        }),
    )?;
    write_json(&dir.join(MAPPING_FILE), &out.mapping)?;
    let (seeded_occurrences, precision_vs_gold) = seed_precision(&ws, &out.seeds);
    let summary = SeedSummary {
        mode,
        thresholds,
        seed_rules: out.seeds.len(),
        seeded_occurrences,
        negatives: out.negatives.len(),
        precision_vs_gold,
        finetune_pairs: out.finetune_pairs,
    };
    write_json(&dir.join(SEED_SUMMARY_FILE), &summary)?;
    Ok(summary)
}

pub fn load_seeds(cfg: &RunConfig) -> Result<(Vec<SeedRule>, Provenance)> {
    let path = cfg.output_dir.join(SEEDS_FILE);
    require(&path, "seed")?;
    let records: Vec<SeedRecord> = read_jsonl(&path)?;
    let provenance = records.first().map_or(Provenance::Seed, |r| r.provenance);
    let seeds = records.iter().map(SeedRecord::to_seed).collect::<Result<_>>()?;
    Ok((seeds, provenance))
}

pub fn load_negatives(cfg: &RunConfig, ws: &Workspace) -> Result<BTreeSet<usize>> {
    let path = cfg.output_dir.join(NEGATIVES_FILE);
    require(&path, "seed")?;
    let lookup = ws.chunk_lookup();
    read_jsonl::<NegativeRecord>(&path)?
        .iter()
        .map(|n| {
            lookup
                .get(&(n.sentence_id.as_str(), n.start, n.end))
                .copied()
                .ok_or_else(|| {
                    Error::Config(format!(
                        "negative `{}` in {} is not a chunk of the corpus; rerun `seed`",
                        n.text,
                        path.display()
                    ))
                })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapSummary {
    pub iterations: usize,
    pub converged: bool,
    pub pool_s: usize,
    pub pool_r: usize,
    pub final_dev_f1: Option<f64>,
}

/// `bootstrap`: final pools, tagger checkpoint and growth table. Without
/// `resume` any earlier snapshots are discarded first.
pub fn cmd_bootstrap(cfg: &RunConfig, resume: bool) -> Result<BootstrapSummary> {
    let ws = Workspace::load(cfg)?;
    let (seeds, seed_provenance) = load_seeds(cfg)?;
    let negatives = load_negatives(cfg, &ws)?;
    let candidates = mine_candidates(cfg, &ws);
    let gold = load_gold(cfg)?;
    let types = cfg.types.names.clone();
    let snapshots = cfg.output_dir.join(SNAPSHOT_DIR);
    if !resume && snapshots.exists() {
        fs::remove_dir_all(&snapshots).map_err(|e| Error::io(&snapshots, e))?;
    }
    let input = LoopInput {
        pool: &ws.pool,
        chunks: &ws.chunks,
        candidates: &candidates,
        seeds: &seeds,
        seed_provenance,
        negatives: &negatives,
        types: &types,
        dev: gold.as_deref(),
    };
    let out = run_loop(&input, &cfg.loop_config(), Some(&snapshots), resume)?;

    let dir = &cfg.output_dir;
    write_jsonl(&dir.join(RULES_FILE), out.rules.records())?;
    write_jsonl(&dir.join(POOL_FILE), out.instances.entries())?;
    write_file(&dir.join(GROWTH_FILE), growth_csv(&out.traces).as_bytes())?;
    out.tagger.save(&dir.join(TAGGER_FILE))?;
    let final_dev_f1 = match &gold {
        Some(g) => Some(evaluate_tagger(&out.tagger, g)?.micro.f1),
        None => None,
    };
    let summary = BootstrapSummary {
        iterations: out.iterations,
        converged: out.converged,
        pool_s: out.instances.len(),
        pool_r: out.rules.len(),
        final_dev_f1,
    };
    write_json(&dir.join(BOOTSTRAP_SUMMARY_FILE), &summary)?;
    Ok(summary)
}

pub fn evaluate_tagger(tagger: &Tagger, gold: &[Sentence]) -> Result<EvalReport> {
    let preds: Vec<_> = gold.iter().map(|s| tagger.tag(s)).collect();
    tagger::evaluate(&preds, gold)
}

/// `eval`: scores the checkpoint against the gold corpus.
pub fn cmd_eval(cfg: &RunConfig) -> Result<EvalReport> {
    let ckpt = cfg.output_dir.join(TAGGER_FILE);
    require(&ckpt, "bootstrap")?;
    let gold = load_gold(cfg)?
        .ok_or_else(|| Error::Config("eval needs corpus.gold in the config".into()))?;
    if gold.iter().all(|s| s.gold_spans.is_empty()) {
        return Err(Error::Eval("the gold corpus carries no gold spans".into()));
    }
    let tagger = Tagger::load(&ckpt)?;
    let preds: Vec<_> = gold.iter().map(|s| tagger.tag(s)).collect();
    let report = tagger::evaluate(&preds, &gold)?;
    let dir = &cfg.output_dir;
    write_json(&dir.join(EVAL_JSON_FILE), &report)?;
    write_file(&dir.join(EVAL_TABLE_FILE), report.to_table().as_bytes())?;

    let mut conll = Vec::new();
    for (s, p) in gold.iter().zip(&preds) {
        writeln!(conll, "# sent_id = {}", s.id).expect("write to Vec");
        for ((t, g), pr) in s.tokens.iter().zip(gold_tags(s)).zip(&p.tags) {
            writeln!(conll, "{}\t{g}\t{pr}", t.surface).expect("write to Vec");
        }
        conll.push(b'\n');
    }
    write_file(&dir.join(PREDICTIONS_FILE), &conll)?;
    Ok(report)
}

/// `export-rules`: PL_R as a tab-separated table, best rules first.
/// Returns the output path and the number of rules.
pub fn cmd_export_rules(cfg: &RunConfig, out: Option<&Path>) -> Result<(PathBuf, usize)> {
    let path = cfg.output_dir.join(RULES_FILE);
    require(&path, "bootstrap")?;
    let records: Vec<RuleRecord> = read_jsonl(&path)?;
    let mut text = String::from("rule_id\tconsequent\tN\tM\tscore\tantecedent\n");
    for r in &records {
        r.to_rule()?;
        let opt = |v: Option<usize>| v.map_or(String::new(), |v| v.to_string());
        text.push_str(&format!(
            "{}\t{}\t{}\t{}\t{}\t{}\n",
            r.rule_id.0,
            r.consequent.as_deref().unwrap_or(OUTSIDE),
            opt(r.stats.n),
            opt(r.stats.m),
            r.stats.score.map_or(String::new(), |s| format!("{s:.6}")),
            r.antecedent
        ));
    }
    let target = out.map_or_else(|| cfg.output_dir.join(EXPORT_FILE), Path::to_path_buf);
    write_file(&target, text.as_bytes())?;
    Ok((target, records.len()))
}

/// Writes a synthetic corpus, its gold split, the mock lexicon and a config
/// pointing at them into `dir`. Returns the config path.
pub fn write_synthetic_workspace(dir: &Path, train: usize, heldout: usize, seed: u64) -> Result<PathBuf> {
    let w = synthetic::world(train, heldout, seed);
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let save = |name: &str, s: &[Sentence]| -> Result<()> {
        let mut buf = Vec::new();
        crate::corpus::write_conllu(s, &mut buf).map_err(|e| Error::io(dir.join(name), e))?;
        write_file(&dir.join(name), &buf)
    };
    save("train.conllu", &w.train)?;
    save("heldout.conllu", &w.heldout)?;
    w.lexicon.save(&dir.join("lexicon.txt"))?;
    let types = synthetic::target_types()
        .iter()
        .map(|t| format!("{t:?}"))
        .collect::<Vec<_>>()
        .join(", ");
    let config = format!(
        "output_dir = \"out\"\nrng_seed = {seed}\n\n[corpus]\ntrain = \"train.conllu\"\ngold = \"heldout.conllu\"\n\n\
         [types]\nnames = [{types}]\n\n[oracle]\nmock_lexicon = \"lexicon.txt\"\n"
    );
    let path = dir.join("run.toml");
    write_file(&path, config.as_bytes())?;
    Ok(path)
}
