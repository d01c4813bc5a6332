//! Synthetic biomedical-style corpora with planted context rules.
//!
//! Sentences are instantiated from a fixed set of dependency-annotated
//! templates with `disease` and `chemical` slots. Three templates carry a
//! context that determines the slot type:
//!
//! - `after treatment with <chemical>`
//! - `<disease> and vomiting`
//! - `therapy for <disease> .`
//!
//! The companion lexicon knows 12 names of each type plus the fixed
//! entities and non-entity nouns of the templates (30 entries); the other
//! names must be discovered.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::{GoldSpan, Sentence, Token};
use crate::oracle::{MockLexicon, TemplateId, TokenProb};
use crate::rules::{Atom, Expr};

pub const DISEASE: &str = "disease";
pub const CHEMICAL: &str = "chemical";

/// `(surface words, POS of each word)`; the last word is the head.
type Name = (&'static [&'static str], &'static [&'static str]);

const KNOWN_CHEMICALS: [&str; 12] = [
    "Aspirin", "Heparin", "Lithium", "Morphine", "Caffeine", "Insulin", "Cisplatin", "Warfarin",
    "Ibuprofen", "Naloxone", "Tamoxifen", "Digoxin",
];
const UNKNOWN_CHEMICALS: [&str; 8] = [
    "Ketamine", "Propofol", "Haloperidol", "Dopamine", "Clozapine", "Fentanyl", "Cocaine", "Nicotine",
];
const KNOWN_DISEASES: [Name; 12] = [
    (&["asthma"], &["NOUN"]),
    (&["colitis"], &["NOUN"]),
    (&["anemia"], &["NOUN"]),
    (&["gout"], &["NOUN"]),
    (&["migraine"], &["NOUN"]),
    (&["hepatitis"], &["NOUN"]),
    (&["arthritis"], &["NOUN"]),
    (&["renal", "failure"], &["ADJ", "NOUN"]),
    (&["epilepsy"], &["NOUN"]),
    (&["glaucoma"], &["NOUN"]),
    (&["cardiac", "arrest"], &["ADJ", "NOUN"]),
    (&["pneumonia"], &["NOUN"]),
];
const UNKNOWN_DISEASES: [Name; 8] = [
    (&["sepsis"], &["NOUN"]),
    (&["tinnitus"], &["NOUN"]),
    (&["vertigo"], &["NOUN"]),
    (&["dermatitis"], &["NOUN"]),
    (&["insomnia"], &["NOUN"]),
    (&["rheumatologic", "disorders"], &["ADJ", "NOUN"]),
    (&["liver", "injury"], &["NOUN", "NOUN"]),
    (&["bronchitis"], &["NOUN"]),
];

const CHEMICAL_ANSWERS: [&str; 5] = ["chemical", "drugs", "agents", "compounds", "medications"];
const DISEASE_ANSWERS: [&str; 5] = ["disease", "disorders", "conditions", "infections", "illnesses"];
/// Non-entity chunk texts and their (shared-by-both-templates) answers.
const NON_ENTITIES: [(&str, [&str; 5]); 5] = [
    ("patients", ["people", "individuals", "subjects", "participants", "persons"]),
    ("treatment", ["procedure", "intervention", "process", "method", "step"]),
    ("therapy", ["procedure", "intervention", "method", "process", "approach"]),
    ("the study", ["work", "research", "article", "project", "report"]),
    ("boston", ["city", "place", "location", "town", "area"]),
];

#[derive(Clone, Copy)]
enum Piece {
    Word(&'static str, &'static str, &'static str, Option<usize>, &'static str),
    Slot(&'static str, Option<usize>, &'static str),
}

use Piece::{Slot, Word};

/// `(template, relative weight)`. Head references index pieces.
fn templates() -> Vec<(Vec<Piece>, u32)> {
    vec![
        (
            vec![
                Word("Patients", "patient", "NOUN", Some(1), "nsubj"),
                Word("improved", "improve", "VERB", None, "root"),
                Word("after", "after", "ADP", Some(3), "case"),
                Word("treatment", "treatment", "NOUN", Some(1), "obl"),
                Word("with", "with", "ADP", Some(5), "case"),
                Slot(CHEMICAL, Some(3), "nmod"),
                Word(".", ".", "PUNCT", Some(1), "punct"),
            ],
            25,
        ),
        (
            vec![
                Word("Patients", "patient", "NOUN", Some(6), "nsubj"),
                Word("with", "with", "ADP", Some(2), "case"),
                Slot(DISEASE, Some(0), "nmod"),
                Word("and", "and", "CCONJ", Some(4), "cc"),
                Word("vomiting", "vomiting", "NOUN", Some(2), "conj"),
                Word("were", "be", "AUX", Some(6), "aux"),
                Word("admitted", "admit", "VERB", None, "root"),
                Word(".", ".", "PUNCT", Some(6), "punct"),
            ],
            15,
        ),
        (
            vec![
                Word("Patients", "patient", "NOUN", Some(1), "nsubj"),
                Word("received", "receive", "VERB", None, "root"),
                Word("therapy", "therapy", "NOUN", Some(1), "obj"),
                Word("for", "for", "ADP", Some(4), "case"),
                Slot(DISEASE, Some(2), "nmod"),
                Word(".", ".", "PUNCT", Some(1), "punct"),
            ],
            20,
        ),
        (
            vec![
                Slot(CHEMICAL, Some(2), "nsubj"),
                Word("was", "be", "AUX", Some(2), "aux"),
                Word("given", "give", "VERB", None, "root"),
                Word("to", "to", "ADP", Some(4), "case"),
                Word("patients", "patient", "NOUN", Some(2), "obl"),
                Word(".", ".", "PUNCT", Some(2), "punct"),
            ],
            10,
        ),
        (
            vec![
                Word("The", "the", "DET", Some(1), "det"),
                Word("study", "study", "NOUN", Some(2), "nsubj"),
                Word("examined", "examine", "VERB", None, "root"),
                Slot(CHEMICAL, Some(2), "obj"),
                Word("and", "and", "CCONJ", Some(5), "cc"),
                Slot(DISEASE, Some(3), "conj"),
                Word(".", ".", "PUNCT", Some(2), "punct"),
            ],
            10,
        ),
        (
            vec![
                Slot(DISEASE, Some(2), "nsubj"),
                Word("was", "be", "AUX", Some(2), "aux"),
                Word("observed", "observe", "VERB", None, "root"),
                Word("in", "in", "ADP", Some(4), "case"),
                Word("Boston", "Boston", "PROPN", Some(2), "obl"),
                Word(".", ".", "PUNCT", Some(2), "punct"),
            ],
            10,
        ),
        (
            vec![
                Word("Patients", "patient", "NOUN", Some(1), "nsubj"),
                Word("developed", "develop", "VERB", None, "root"),
                Slot(DISEASE, Some(1), "obj"),
                Word("after", "after", "ADP", Some(4), "case"),
                Slot(CHEMICAL, Some(1), "obl"),
                Word(".", ".", "PUNCT", Some(1), "punct"),
            ],
            10,
        ),
    ]
}

fn chemical_names() -> Vec<Name> {
    KNOWN_CHEMICALS
        .iter()
        .chain(&UNKNOWN_CHEMICALS)
        .map(|c| -> Name { (std::slice::from_ref(c), &["PROPN"]) })
        .collect()
}

fn disease_names() -> Vec<Name> {
    KNOWN_DISEASES.iter().chain(&UNKNOWN_DISEASES).copied().collect()
}

/// Endless sequence of names where every name appears once per round, each
/// round in a fresh seeded order. Keeps per-name counts within one.
struct RoundRobin {
    names: Vec<Name>,
    queue: Vec<Name>,
}

impl RoundRobin {
    fn next(&mut self, rng: &mut ChaCha8Rng) -> Name {
        if self.queue.is_empty() {
            self.queue = self.names.clone();
            self.queue.shuffle(rng);
        }
        self.queue.pop().expect("non-empty name list")
    }
}

fn instantiate(
    template: &[Piece],
    id: String,
    chemicals: &mut RoundRobin,
    diseases: &mut RoundRobin,
    rng: &mut ChaCha8Rng,
) -> Sentence {
    let names: Vec<Option<(Name, &str)>> = template
        .iter()
        .map(|p| match p {
            Slot(ty, _, _) if *ty == CHEMICAL => Some((chemicals.next(rng), CHEMICAL)),
            Slot(ty, _, _) => Some((diseases.next(rng), *ty)),
            Word(..) => None,
        })
        .collect();
    // Token index of each piece's head word.
    let mut head_index = Vec::with_capacity(template.len());
    let mut next = 0;
    for n in &names {
        next += n.map_or(1, |(name, _)| name.0.len());
        head_index.push(next - 1);
    }

    let mut tokens = Vec::new();
    let mut gold_spans = Vec::new();
    for (p, n) in template.iter().zip(&names) {
        match (p, n) {
            (Word(surface, lemma, pos, head, deprel), _) => tokens.push(Token {
                surface: surface.to_string(),
                lemma: lemma.to_string(),
                pos: pos.to_string(),
                head: head.map(|h| head_index[h]),
                deprel: deprel.to_string(),
            }),
            (Slot(_, head, deprel), Some(((words, tags), ty))) => {
                let start = tokens.len();
                let last = start + words.len() - 1;
                for (k, (w, t)) in words.iter().zip(tags.iter()).enumerate() {
                    let is_head = start + k == last;
                    let modifier = if *t == "ADJ" { "amod" } else { "compound" };
                    tokens.push(Token {
                        surface: w.to_string(),
                        lemma: lemma_of(w),
                        pos: t.to_string(),
                        head: if is_head { head.map(|h| head_index[h]) } else { Some(last) },
                        deprel: if is_head { deprel.to_string() } else { modifier.to_string() },
                    });
                }
                gold_spans.push(GoldSpan {
                    start,
                    end: last + 1,
                    label: ty.to_string(),
                });
            }
            (Slot(..), None) => unreachable!("slots always receive a name"),
        }
    }
    // The fixed word "vomiting" is itself a disease mention.
    for (i, t) in tokens.iter().enumerate() {
        if t.surface == "vomiting" {
            gold_spans.push(GoldSpan {
                start: i,
                end: i + 1,
                label: DISEASE.to_string(),
            });
        }
    }
    gold_spans.sort_by_key(|g| g.start);
    Sentence {
        id,
        tokens,
        gold_spans,
    }
}

fn lemma_of(word: &str) -> String {
    let w = word.to_lowercase();
    match w.strip_suffix("ders") {
        Some(stem) => format!("{stem}der"),
        None => w,
    }
}

/// `n` sentences drawn from the weighted templates, ids prefixed by `prefix`.
pub fn generate_sentences(n: usize, seed: u64, prefix: &str) -> Vec<Sentence> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let templates = templates();
    let total: u32 = templates.iter().map(|(_, w)| w).sum();
    let mut chemicals = RoundRobin {
        names: chemical_names(),
        queue: Vec::new(),
    };
    let mut diseases = RoundRobin {
        names: disease_names(),
        queue: Vec::new(),
    };
    (0..n)
        .map(|i| {
            let mut pick = rng.gen_range(0..total);
            let mut chosen = &templates[0].0;
            for (t, w) in &templates {
                if pick < *w {
                    chosen = t;
                    break;
                }
                pick -= w;
            }
            instantiate(chosen, format!("{prefix}{i:04}"), &mut chemicals, &mut diseases, &mut rng)
        })
        .collect()
}

fn ranked(answers: &[&str], top: f64) -> Vec<TokenProb> {
    // Remaining mass split geometrically over the runner-up answers.
    let mut p = (1.0 - top) / 2.0;
    let mut out = vec![TokenProb::new(answers[0], top)];
    for a in &answers[1..] {
        out.push(TokenProb::new(*a, p));
        p /= 2.0;
    }
    out
}

/// The 30-entry lexicon: known names with type answers whose top
/// probability rises with the name's position, the fixed entity
/// "vomiting", and non-entity nouns with agreeing non-type answers.
pub fn lexicon() -> MockLexicon {
    let mut lex = MockLexicon::default();
    for (i, c) in KNOWN_CHEMICALS.iter().enumerate() {
        lex.entries
            .insert(c.to_lowercase(), ranked(&CHEMICAL_ANSWERS, 0.45 + 0.04 * i as f64));
    }
    for (i, (words, _)) in KNOWN_DISEASES.iter().enumerate() {
        lex.entries
            .insert(words.join(" "), ranked(&DISEASE_ANSWERS, 0.47 + 0.04 * i as f64));
    }
    lex.entries.insert("vomiting".into(), ranked(&DISEASE_ANSWERS, 0.7));
    for (i, (text, answers)) in NON_ENTITIES.iter().enumerate() {
        lex.entries.insert(text.to_string(), ranked(answers, 0.6 + 0.05 * i as f64));
    }
    lex.template_bias.insert(TemplateId::T2, -0.05);
    lex
}

/// The three context rules every synthetic corpus is built around.
pub fn planted_rules() -> Vec<(Expr, &'static str)> {
    let words = |w: &[&str]| w.iter().map(|s| s.to_string()).collect::<Vec<_>>();
    vec![
        (Expr::atom(Atom::PreNGram(words(&["after", "treatment", "with"]))), CHEMICAL),
        (Expr::atom(Atom::PostNGram(words(&["and", "vomiting"]))), DISEASE),
        (Expr::atom(Atom::PreNGram(words(&["therapy", "for"]))), DISEASE),
    ]
}

pub fn target_types() -> Vec<String> {
    vec![DISEASE.to_string(), CHEMICAL.to_string()]
}

#[derive(Debug, Clone)]
pub struct SyntheticWorld {
    pub train: Vec<Sentence>,
    pub heldout: Vec<Sentence>,
    pub lexicon: MockLexicon,
}

pub fn world(train: usize, heldout: usize, seed: u64) -> SyntheticWorld {
    SyntheticWorld {
        train: generate_sentences(train, seed, "train-"),
        heldout: generate_sentences(heldout, seed ^ 0x005E_ED0F_4E1D, "heldout-"),
        lexicon: lexicon(),
    }
}
