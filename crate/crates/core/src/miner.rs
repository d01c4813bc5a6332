//! Candidate rule enumeration.
//!
//! Every chunk occurrence instantiates a handful of atoms; atoms seen at
//! least `min_support` times become candidate rules, and pairs of atoms of
//! different kinds that co-occur on at least `min_support` chunks become
//! conjunctions. Each candidate keeps the sorted list of chunk indices it
//! matches, so scoring never re-evaluates expressions.

use std::collections::BTreeMap;

use rayon::prelude::*;

use crate::corpus::{CandidateChunk, UnlabeledPool};
use crate::rules::{instantiate, Atom, Expr, RuleId, RuleRecord, RecordStats};

pub const DEFAULT_MIN_SUPPORT: usize = 2;

#[derive(Debug, Clone, PartialEq)]
pub struct CandidateRule {
    pub rule_id: RuleId,
    /// Canonical antecedent; consequents are bound later against the pool.
    pub antecedent: Expr,
    /// Indices into the chunk list the set was mined from, ascending.
    pub occurrences: Vec<usize>,
}

#[derive(Debug, Clone, Default)]
pub struct CandidateRuleSet {
    /// Surviving atoms, sorted.
    pub atoms: Vec<Atom>,
    /// Inverted index: `atom_occurrences[i]` lists the chunks matching `atoms[i]`.
    pub atom_occurrences: Vec<Vec<usize>>,
    /// Surviving atom ids per chunk, ascending.
    chunk_atoms: Vec<Vec<usize>>,
    pub rules: BTreeMap<RuleId, CandidateRule>,
    pub min_support: usize,
}

impl CandidateRuleSet {
    pub fn len(&self) -> usize {
        self.rules.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rules.is_empty()
    }

    pub fn atom_rule_count(&self) -> usize {
        self.atoms.len()
    }

    pub fn compound_rule_count(&self) -> usize {
        self.rules.len() - self.atoms.len()
    }

    pub fn get(&self, id: &RuleId) -> Option<&CandidateRule> {
        self.rules.get(id)
    }

    /// Export lines with the occurrence count as `N`, in rule-id order.
    pub fn records(&self) -> Vec<RuleRecord> {
        self.rules
            .values()
            .map(|r| RuleRecord {
                rule_id: r.rule_id.clone(),
                antecedent: r.antecedent.to_string(),
                consequent: None,
                stats: RecordStats {
                    n: Some(r.occurrences.len()),
                    m: None,
                    score: None,
                },
            })
            .collect()
    }
}

/// Atom candidates over `chunks`, which must come from `pool`.
pub fn mine_atoms(pool: &UnlabeledPool, chunks: &[CandidateChunk], min_support: usize) -> CandidateRuleSet {
    let per_chunk: Vec<Vec<Atom>> = chunks
        .par_iter()
        .map(|c| {
            let mut atoms = instantiate(c, pool.sentence(c.sentence_index));
            atoms.sort();
            atoms.dedup();
            atoms
        })
        .collect();

    let mut index: BTreeMap<&Atom, Vec<usize>> = BTreeMap::new();
    for (ci, atoms) in per_chunk.iter().enumerate() {
        for a in atoms {
            index.entry(a).or_default().push(ci);
        }
    }
    index.retain(|_, occ| occ.len() >= min_support.max(1));

    let mut set = CandidateRuleSet {
        min_support,
        chunk_atoms: vec![Vec::new(); chunks.len()],
        ..Default::default()
    };
    for (id, (atom, occ)) in index.into_iter().enumerate() {
        for &ci in &occ {
            set.chunk_atoms[ci].push(id);
        }
        let antecedent = Expr::atom(atom.clone());
        let rule_id = antecedent.rule_id();
        set.rules.insert(
            rule_id.clone(),
            CandidateRule {
                rule_id,
                antecedent,
                occurrences: occ.clone(),
            },
        );
        set.atoms.push(atom.clone());
        set.atom_occurrences.push(occ);
    }
    set
}

/// Adds two-atom conjunctions of different kinds whose joint occurrence
/// count reaches the set's `min_support`. Pairs are enumerated per chunk
/// from the inverted index, so never-co-occurring pairs are never visited.
pub fn mine_compounds(mut set: CandidateRuleSet) -> CandidateRuleSet {
    let mut joint: BTreeMap<(usize, usize), Vec<usize>> = BTreeMap::new();
    for (ci, ids) in set.chunk_atoms.iter().enumerate() {
        for (i, &a) in ids.iter().enumerate() {
            for &b in &ids[i + 1..] {
                if set.atoms[a].kind() != set.atoms[b].kind() {
                    joint.entry((a, b)).or_default().push(ci);
                }
            }
        }
    }
    for ((a, b), occ) in joint {
        if occ.len() < set.min_support.max(1) {
            continue;
        }
        let antecedent = Expr::and([Expr::atom(set.atoms[a].clone()), Expr::atom(set.atoms[b].clone())])
            .canonical();
        let rule_id = antecedent.rule_id();
        set.rules.entry(rule_id.clone()).or_insert(CandidateRule {
            rule_id,
            antecedent,
            occurrences: occ,
        });
    }
    set
}
