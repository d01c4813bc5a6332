//! Acceptance criteria for the bootstrapping pipeline.
//!
//! Runs without the test harness so every criterion prints exactly one
//! `PASS`/`FAIL` line; the process exits non-zero if any criterion fails.
//! Tolerances and budgets are pinned below.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use ruleboot::bootstrap::{
    lower_median, r_score, run_loop, s_score, LoopConfig, LoopInput, LoopOutcome, Provenance, SimilarityIndex,
    SNAPSHOT_DIR,
};
use ruleboot::config::RunConfig;
use ruleboot::corpus::{extract_chunks, CandidateChunk, UnlabeledPool};
use ruleboot::miner::{mine_atoms, mine_compounds, CandidateRuleSet};
use ruleboot::oracle::{
    compute_verdicts, consistency_label, is_negative, map_distribution, zero_shot_seeds, ChunkVerdict, Label,
    LabelMapping, MockOracle, SeedMode, TargetTypes, TokenProb, VerdictParams,
};
use ruleboot::pipeline;
use ruleboot::rules::{Expr, RuleStats};
use ruleboot::synthetic::{self, planted_rules, target_types, world};

const FORMULA_BUDGET: Duration = Duration::from_secs(5);
const CONSISTENCY_CASES: usize = 10_000;
const PLANTED_BUDGET: Duration = Duration::from_secs(60);
const PLANTED_MIN_F1: f64 = 0.90;
const PLANTED_TRAIN: usize = 200;
const PLANTED_HELDOUT: usize = 100;
const PLANTED_SEED: u64 = 7;
const GROWTH_CORPORA: u64 = 20;
const GROWTH_MAX_ITERATIONS: usize = 20;
const EQUIVALENCE_MAX_SENTENCES: usize = 50;
const EQUIVALENCE_CORPORA: u64 = 5;
const TRUTH_TABLE_CASES: usize = 1_000;
const SWEEP_P_T: [f64; 9] = [0.0, 0.3, 0.45, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0];
const SWEEP_R_T: [usize; 7] = [0, 2, 4, 5, 6, 8, 12];

type Verdict = Result<String, String>;
type Criterion = (&'static str, fn() -> Verdict);

fn check(cond: bool, what: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(what())
    }
}

// ---------------------------------------------------------------------------
// Formula suite.

fn formula_suite() -> Verdict {
    let start = Instant::now();
    let s = |n, m| RuleStats {
        n_matched: n,
        m_correct: m,
    };
    check(r_score(s(8, 6)) == Some(2.25), || format!("r_score(8, 6) = {:?}", r_score(s(8, 6))))?;
    check(r_score(s(1, 0)) == Some(0.0) && r_score(s(1, 1)) == Some(0.0), || {
        "r_score(1, ·) is not 0".into()
    })?;
    check(r_score(s(4, 4)) == Some(2.0), || format!("r_score(4, 4) = {:?}", r_score(s(4, 4))))?;
    check(r_score(s(0, 0)).is_none(), || "r_score(0, 0) is defined".into())?;
    check(lower_median(&[0.2, 0.5, 0.9]) == Some(0.5), || "odd median".into())?;
    check(lower_median(&[0.8, 0.2]) == Some(0.2), || "even median is not the lower one".into())?;
    s_score_cases()?;

    let violations = consistency_partition(CONSISTENCY_CASES);
    check(violations == 0, || format!("{violations} consistency_label violations"))?;
    let elapsed = start.elapsed();
    check(elapsed < FORMULA_BUDGET, || format!("took {elapsed:?}"))?;
    Ok(format!(
        "r_score and median cases exact, {CONSISTENCY_CASES} consistency cases with 0 violations in {elapsed:.2?}"
    ))
}

/// Candidates whose windows equal or are disjoint from the sampled members,
/// so every similarity is exactly 1 or 0.
fn s_score_cases() -> Result<(), String> {
    let rows = |a: &str, b: &str| {
        let verb = if a == "smoking" { "causes" } else { "worsens" };
        vec![
            (a.to_string(), "NOUN", 2usize, "nsubj"),
            (verb.to_string(), "VERB", 0, "root"),
            (b.to_string(), "NOUN", 2, "obj"),
        ]
    };
    let mk = |id: usize, a: &str, b: &str| {
        let tokens = rows(a, b)
            .into_iter()
            .map(|(w, pos, head, rel)| ruleboot::corpus::Token {
                surface: w.clone(),
                lemma: w,
                pos: pos.into(),
                head: (head > 0).then(|| head - 1),
                deprel: rel.into(),
            })
            .collect();
        ruleboot::corpus::Sentence {
            id: format!("s{id}"),
            tokens,
            gold_spans: Vec::new(),
        }
    };
    let pool = UnlabeledPool::new(vec![
        mk(0, "smoking", "cancer"),
        mk(1, "smoking", "cancer"),
        mk(2, "smoking", "cancer"),
        mk(3, "sugar", "diabetes"),
        mk(4, "sugar", "diabetes"),
    ])
    .map_err(|e| e.to_string())?;
    let chunks = extract_chunks(&pool);
    let idx = SimilarityIndex::new(&pool, &chunks, 5);
    let find = |sid: &str, text: &str| {
        chunks
            .iter()
            .position(|c| c.sentence_id == sid && c.text == text)
            .expect("chunk exists")
    };
    let cand = find("s0", "smoking");
    let same = [find("s1", "smoking"), find("s2", "smoking")];
    // With window 5 each 3-token sentence is its own window; the two
    // sentence shapes share no word, so their similarity is 0.
    let other = [find("s3", "sugar"), find("s4", "sugar")];
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let cases: [(&[usize], f64); 4] = [
        (&[same[0], same[1], other[0]], 1.0),
        (&[same[0], other[0], other[1]], 0.0),
        (&[same[0], other[0]], 0.0),
        (&[same[0]], 1.0),
    ];
    for (members, want) in cases {
        let got = s_score(&idx, cand, members, 20, &mut rng);
        check(got == Some(want), || format!("s_score over {members:?} = {got:?}, want {want}"))?;
    }
    check(s_score(&idx, cand, &[], 20, &mut rng).is_none(), || "s_score of empty pool".into())
}

const VOCAB: [&str; 8] = ["disease", "disorders", "chemical", "drugs", "none", "company", "x", "y"];

fn random_dist(rng: &mut ChaCha8Rng) -> Vec<TokenProb> {
    let n = rng.gen_range(0..=5);
    let mut tokens: Vec<&str> = VOCAB.to_vec();
    let mut out = Vec::new();
    for _ in 0..n {
        let t = tokens.swap_remove(rng.gen_range(0..tokens.len()));
        // Coarse grid so ties occur.
        out.push(TokenProb::new(t, rng.gen_range(0..=20) as f64 / 20.0));
    }
    out.sort_by(|a, b| b.prob.total_cmp(&a.prob));
    out
}

/// Independent reading of the three-way decision: returns the expected
/// label and confidence.
fn expected_label(s1: &[TokenProb], s2: &[TokenProb], map: &BTreeMap<&str, &str>, types: &[&str]) -> (Label, f64) {
    let top = |s: &[TokenProb]| -> Option<(&str, f64)> {
        let mass: Vec<f64> = types
            .iter()
            .map(|t| s.iter().filter(|e| map.get(e.token.as_str()) == Some(t)).map(|e| e.prob).sum())
            .collect();
        let best = mass.iter().copied().fold(0.0_f64, f64::max);
        if best <= 0.0 {
            return None;
        }
        let i = mass.iter().position(|&m| m == best).unwrap();
        Some((types[i], best))
    };
    match (top(s1), top(s2)) {
        (Some((a, p)), Some((b, q))) if a == b => return (Label::Type(a.to_string()), p.min(q)),
        _ => {}
    }
    match (s1.first(), s2.first()) {
        (Some(a), Some(b)) if a.token == b.token && !map.contains_key(a.token.as_str()) => {
            (Label::Na, a.prob.min(b.prob))
        }
        _ => (Label::Unk, 0.0),
    }
}

fn consistency_partition(cases: usize) -> usize {
    let types = ["disease", "chemical"];
    let targets = TargetTypes::new(types.iter().map(|t| t.to_string()).collect()).unwrap();
    let pairs = [("disease", "disease"), ("disorders", "disease"), ("chemical", "chemical"), ("drugs", "chemical")];
    let mapping = LabelMapping {
        map: pairs.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect(),
        support_counts: BTreeMap::new(),
    };
    let oracle_map: BTreeMap<&str, &str> = pairs.into_iter().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(0xC0FFEE);
    let mut violations = 0;
    for _ in 0..cases {
        let (s1, s2) = (random_dist(&mut rng), random_dist(&mut rng));
        let py1 = map_distribution(&s1, &mapping, &targets);
        let py2 = map_distribution(&s2, &mapping, &targets);
        let got = consistency_label(&py1, &py2, &s1, &s2, &mapping);
        let want = expected_label(&s1, &s2, &oracle_map, &types);
        if got != want {
            violations += 1;
        }
    }
    violations
}

// ---------------------------------------------------------------------------
// Shared synthetic setup.

struct Prepared {
    pool: UnlabeledPool,
    chunks: Vec<CandidateChunk>,
    candidates: CandidateRuleSet,
    verdicts: Vec<ChunkVerdict>,
    heldout: Vec<ruleboot::corpus::Sentence>,
}

fn prepare(train: usize, heldout: usize, seed: u64) -> Prepared {
    let w = world(train, heldout, seed);
    let pool = UnlabeledPool::new(w.train).unwrap();
    let chunks = extract_chunks(&pool);
    let candidates = mine_compounds(mine_atoms(&pool, &chunks, 2));
    let targets = TargetTypes::new(target_types()).unwrap();
    let oracle = MockOracle::new(w.lexicon);
    let (verdicts, _) =
        compute_verdicts(&oracle, &pool, &chunks, &targets, SeedMode::ZeroShot, &VerdictParams::default()).unwrap();
    Prepared {
        pool,
        chunks,
        candidates,
        verdicts,
        heldout: w.heldout,
    }
}

fn bootstrap(p: &Prepared, config: &LoopConfig) -> ruleboot::Result<LoopOutcome> {
    let t = SeedMode::ZeroShot.default_thresholds();
    let seeds = zero_shot_seeds(&p.verdicts, t.p_t, t.r_t);
    let negatives: BTreeSet<usize> = (0..p.verdicts.len())
        .filter(|&i| is_negative(&p.verdicts[i], t.p_t, t.r_t))
        .collect();
    let types = target_types();
    let input = LoopInput {
        pool: &p.pool,
        chunks: &p.chunks,
        candidates: &p.candidates,
        seeds: &seeds,
        seed_provenance: Provenance::Seed,
        negatives: &negatives,
        types: &types,
        dev: None,
    };
    run_loop(&input, config, None, false)
}

// ---------------------------------------------------------------------------
// Planted-rule recovery.

fn planted_recovery() -> Verdict {
    let start = Instant::now();
    let p = prepare(PLANTED_TRAIN, PLANTED_HELDOUT, PLANTED_SEED);
    let out = bootstrap(&p, &LoopConfig::default()).map_err(|e| e.to_string())?;
    for (expr, label) in planted_rules() {
        let entry = out.rules.rules.get(&expr.rule_id());
        check(entry.is_some(), || format!("planted rule {expr} missing from PL_R"))?;
        let got = &entry.unwrap().rule.consequent;
        check(got == label, || format!("planted rule {expr} bound to {got}, want {label}"))?;
    }
    let report = pipeline::evaluate_tagger(&out.tagger, &p.heldout).map_err(|e| e.to_string())?;
    let f1 = report.micro.f1;
    check(f1 >= PLANTED_MIN_F1, || format!("held-out micro-F1 {f1:.4} < {PLANTED_MIN_F1}"))?;
    let elapsed = start.elapsed();
    check(elapsed < PLANTED_BUDGET, || format!("took {elapsed:?}"))?;
    Ok(format!(
        "3/3 planted rules with correct consequents, held-out micro-F1 {f1:.4}, {} iterations in {elapsed:.2?}",
        out.iterations
    ))
}

// ---------------------------------------------------------------------------
// Monotone growth and termination.

fn growth_and_termination() -> Verdict {
    let config = LoopConfig {
        max_iterations: GROWTH_MAX_ITERATIONS,
        ..LoopConfig::default()
    };
    let mut longest = 0;
    for k in 0..GROWTH_CORPORA {
        let p = prepare(PLANTED_TRAIN, 0, 0xA11CE + k);
        let out = bootstrap(&p, &LoopConfig { seed: k, ..config }).map_err(|e| format!("corpus {k}: {e}"))?;
        let sizes: Vec<usize> = out.traces.iter().map(|t| t.pool_s).collect();
        check(sizes.windows(2).all(|w| w[0] <= w[1]), || format!("corpus {k}: |PL_S| sequence {sizes:?}"))?;
        check(out.converged && out.iterations < GROWTH_MAX_ITERATIONS, || {
            format!("corpus {k}: ran {} iterations without converging", out.iterations)
        })?;
        longest = longest.max(out.iterations);
    }
    Ok(format!(
        "{GROWTH_CORPORA} corpora: |PL_S| non-decreasing, all halted (longest run {longest} of {GROWTH_MAX_ITERATIONS})"
    ))
}

// ---------------------------------------------------------------------------
// Determinism.

fn files_under(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(dir).unwrap().to_path_buf(), fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

fn full_pipeline(dir: &Path) -> ruleboot::Result<Vec<(PathBuf, Vec<u8>)>> {
    let cfg = RunConfig::load(&pipeline::write_synthetic_workspace(dir, PLANTED_TRAIN, PLANTED_HELDOUT, 21)?)?;
    pipeline::cmd_mine(&cfg)?;
    pipeline::cmd_seed(&cfg, SeedMode::ZeroShot)?;
    pipeline::cmd_bootstrap(&cfg, false)?;
    pipeline::cmd_eval(&cfg)?;
    pipeline::cmd_export_rules(&cfg, None)?;
    Ok(files_under(&cfg.output_dir))
}

fn determinism() -> Verdict {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let first = full_pipeline(a.path()).map_err(|e| e.to_string())?;
    let second = full_pipeline(b.path()).map_err(|e| e.to_string())?;
    let names = |v: &[(PathBuf, Vec<u8>)]| v.iter().map(|(p, _)| p.clone()).collect::<Vec<_>>();
    check(names(&first) == names(&second), || "artifact sets differ".into())?;
    let differing: Vec<_> = first
        .iter()
        .zip(&second)
        .filter(|(x, y)| x.1 != y.1)
        .map(|(x, _)| x.0.display().to_string())
        .collect();
    check(differing.is_empty(), || format!("artifacts differ: {differing:?}"))?;
    for required in [pipeline::RULES_FILE, pipeline::EXPORT_FILE, pipeline::EVAL_JSON_FILE, pipeline::EVAL_TABLE_FILE] {
        check(first.iter().any(|(p, _)| p == Path::new(required)), || format!("{required} missing"))?;
    }
    let snapshots = first.iter().filter(|(p, _)| p.starts_with(SNAPSHOT_DIR)).count();
    check(snapshots > 0, || "no snapshots written".into())?;
    Ok(format!(
        "{} artifacts byte-identical across two runs, {snapshots} snapshots included",
        first.len()
    ))
}

// ---------------------------------------------------------------------------
// Brute-force equivalence.

fn compound_equivalence() -> Result<usize, String> {
    let mut compounds = 0;
    for k in 0..EQUIVALENCE_CORPORA {
        let n = EQUIVALENCE_MAX_SENTENCES - 10 * k as usize;
        let pool = UnlabeledPool::new(synthetic::generate_sentences(n, 0xB00 + k, "bf-")).unwrap();
        let chunks = extract_chunks(&pool);
        let min_support = 2;
        let set = mine_compounds(mine_atoms(&pool, &chunks, min_support));
        // Atom occurrences by direct evaluation on every chunk.
        let truth: Vec<Vec<usize>> = set
            .atoms
            .iter()
            .map(|a| {
                (0..chunks.len())
                    .filter(|&ci| a.matches(&chunks[ci], pool.sentence(chunks[ci].sentence_index)))
                    .collect()
            })
            .collect();
        check(truth == set.atom_occurrences, || format!("corpus {k}: inverted index disagrees"))?;
        let mut want: BTreeMap<String, Vec<usize>> = BTreeMap::new();
        for i in 0..set.atoms.len() {
            for j in i + 1..set.atoms.len() {
                if set.atoms[i].kind() == set.atoms[j].kind() {
                    continue;
                }
                let b: BTreeSet<usize> = truth[j].iter().copied().collect();
                let both: Vec<usize> = truth[i].iter().copied().filter(|c| b.contains(c)).collect();
                if both.len() >= min_support {
                    let e = Expr::and([Expr::atom(set.atoms[i].clone()), Expr::atom(set.atoms[j].clone())]);
                    want.insert(e.rule_id().0, both);
                }
            }
        }
        let atom_ids: BTreeSet<String> = set.atoms.iter().map(|a| Expr::atom(a.clone()).rule_id().0).collect();
        let got: BTreeMap<String, Vec<usize>> = set
            .rules
            .values()
            .filter(|r| !atom_ids.contains(&r.rule_id.0))
            .map(|r| (r.rule_id.0.clone(), r.occurrences.clone()))
            .collect();
        check(got == want, || {
            format!("corpus {k}: mined {} compounds, oracle {}", got.len(), want.len())
        })?;
        compounds += got.len();
    }
    Ok(compounds)
}

/// Boolean formula over atom indices, evaluated independently of `Expr`.
enum Formula {
    Leaf(usize),
    Not(Box<Formula>),
    And(Vec<Formula>),
    Or(Vec<Formula>),
}

impl Formula {
    fn random(rng: &mut ChaCha8Rng, atoms: usize, depth: usize) -> Self {
        if depth == 0 || rng.gen_bool(0.3) {
            return Formula::Leaf(rng.gen_range(0..atoms));
        }
        match rng.gen_range(0..3) {
            0 => Formula::Not(Box::new(Formula::random(rng, atoms, depth - 1))),
            k => {
                let n = rng.gen_range(2..=3);
                let kids = (0..n).map(|_| Formula::random(rng, atoms, depth - 1)).collect();
                if k == 1 {
                    Formula::And(kids)
                } else {
                    Formula::Or(kids)
                }
            }
        }
    }

    fn truth(&self, row: &dyn Fn(usize) -> bool) -> bool {
        match self {
            Formula::Leaf(i) => row(*i),
            Formula::Not(f) => !f.truth(row),
            Formula::And(fs) => fs.iter().all(|f| f.truth(row)),
            Formula::Or(fs) => fs.iter().any(|f| f.truth(row)),
        }
    }

    fn to_expr(&self, set: &CandidateRuleSet) -> Expr {
        match self {
            Formula::Leaf(i) => Expr::atom(set.atoms[*i].clone()),
            Formula::Not(f) => Expr::not(f.to_expr(set)),
            Formula::And(fs) => Expr::and(fs.iter().map(|f| f.to_expr(set))),
            Formula::Or(fs) => Expr::or(fs.iter().map(|f| f.to_expr(set))),
        }
    }
}

fn truth_table_equivalence() -> Result<(), String> {
    let pool = UnlabeledPool::new(synthetic::generate_sentences(EQUIVALENCE_MAX_SENTENCES, 0x7AB1E, "tt-")).unwrap();
    let chunks = extract_chunks(&pool);
    let set = mine_atoms(&pool, &chunks, 1);
    let mut rng = ChaCha8Rng::seed_from_u64(0x7AB1E);
    let mut positives = 0;
    for case in 0..TRUTH_TABLE_CASES {
        let f = Formula::random(&mut rng, set.atoms.len(), 3);
        let ci = rng.gen_range(0..chunks.len());
        let row = |i: usize| set.atom_occurrences[i].binary_search(&ci).is_ok();
        let want = f.truth(&row);
        let expr = f.to_expr(&set);
        let s = pool.sentence(chunks[ci].sentence_index);
        let got = expr.matches(&chunks[ci], s);
        let canon = expr.canonical().matches(&chunks[ci], s);
        check(got == want && canon == want, || {
            format!("case {case}: {expr} on `{}` gave {got}/{canon}, truth table {want}", chunks[ci].text)
        })?;
        positives += usize::from(want);
    }
    check(positives > 0 && positives < TRUTH_TABLE_CASES, || {
        format!("degenerate sample: {positives} true of {TRUTH_TABLE_CASES}")
    })
}

fn brute_force_equivalence() -> Verdict {
    let compounds = compound_equivalence()?;
    truth_table_equivalence()?;
    Ok(format!(
        "{compounds} compounds over {EQUIVALENCE_CORPORA} corpora match pairwise intersection, {TRUTH_TABLE_CASES} truth-table cases agree"
    ))
}

// ---------------------------------------------------------------------------
// Seed-threshold semantics.

fn seed_threshold_sweep() -> Verdict {
    let p = prepare(PLANTED_TRAIN, 0, PLANTED_SEED);
    let grid: Vec<Vec<usize>> = SWEEP_P_T
        .iter()
        .map(|&pt| SWEEP_R_T.iter().map(|&rt| zero_shot_seeds(&p.verdicts, pt, rt).len()).collect())
        .collect();
    for (i, row) in grid.iter().enumerate() {
        check(row.windows(2).all(|w| w[0] >= w[1]), || {
            format!("p_t = {}: counts {row:?} increase with r_t", SWEEP_P_T[i])
        })?;
    }
    for j in 0..SWEEP_R_T.len() {
        let col: Vec<usize> = grid.iter().map(|r| r[j]).collect();
        check(col.windows(2).all(|w| w[0] >= w[1]), || {
            format!("r_t = {}: counts {col:?} increase with p_t", SWEEP_R_T[j])
        })?;
    }
    let at_one = grid.last().unwrap();
    check(at_one.iter().all(|&c| c == 0), || format!("p_t = 1.0 still yields {at_one:?}"))?;
    let first = grid[0][0];
    check(first > 0, || "no seeds even at the loosest thresholds".into())?;
    Ok(format!(
        "{}x{} grid weakly decreasing in p_t and r_t ({first} rules at loosest, 0 at p_t = 1.0)",
        SWEEP_P_T.len(),
        SWEEP_R_T.len()
    ))
}

fn main() -> ExitCode {
    let criteria: [Criterion; 6] = [
        ("formula-suite", formula_suite),
        ("planted-rule-recovery", planted_recovery),
        ("monotone-growth-termination", growth_and_termination),
        ("determinism", determinism),
        ("brute-force-equivalence", brute_force_equivalence),
        ("seed-threshold-semantics", seed_threshold_sweep),
    ];
    let mut failed = 0;
    for (name, run) in criteria {
        match run() {
            Ok(detail) => println!("PASS {name}: {detail}"),
            Err(why) => {
                failed += 1;
                println!("FAIL {name}: {why}");
            }
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
