use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use super::TokenProb;
use crate::error::{Error, Result};

/// Ordered target categories. Each type is anchored by its own name plus
/// optional alias tokens (for instance a plural form the oracle prefers).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TargetTypes {
    types: Vec<String>,
    #[serde(default)]
    aliases: BTreeMap<String, Vec<String>>,
}

impl TargetTypes {
    pub fn new(types: Vec<String>) -> Result<Self> {
        Self::with_aliases(types, BTreeMap::new())
    }

    pub fn with_aliases(types: Vec<String>, aliases: BTreeMap<String, Vec<String>>) -> Result<Self> {
        if types.is_empty() {
            return Err(Error::Config("target type set is empty".into()));
        }
        let mut seen = BTreeSet::new();
        for t in &types {
            if t.is_empty() || t == "NA" || t == "unk" || t == "O" || !seen.insert(t) {
                return Err(Error::Config(format!("invalid or duplicate target type `{t}`")));
            }
        }
        let mut anchors = BTreeSet::new();
        for (t, al) in &aliases {
            if !seen.contains(t) {
                return Err(Error::Config(format!("aliases given for unknown type `{t}`")));
            }
            for a in al {
                if seen.contains(a) || !anchors.insert(a) {
                    return Err(Error::Config(format!("alias `{a}` is ambiguous")));
                }
            }
        }
        Ok(TargetTypes { types, aliases })
    }

    pub fn types(&self) -> &[String] {
        &self.types
    }

    pub fn contains(&self, t: &str) -> bool {
        self.types.iter().any(|x| x == t)
    }

    /// Target anchored by `token`, if any.
    pub fn anchor_of(&self, token: &str) -> Option<&str> {
        if let Some(t) = self.types.iter().find(|t| *t == token) {
            return Some(t);
        }
        self.aliases
            .iter()
            .find(|(_, al)| al.iter().any(|a| a == token))
            .map(|(t, _)| t.as_str())
    }

    fn order(&self, t: &str) -> usize {
        self.types.iter().position(|x| x == t).unwrap_or(usize::MAX)
    }
}

/// Verdict label: a target type, NA (agreed non-target) or unk (no agreement).
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(from = "String", into = "String")]
pub enum Label {
    Type(String),
    Na,
    Unk,
}

impl Label {
    pub fn as_type(&self) -> Option<&str> {
        match self {
            Label::Type(t) => Some(t),
            _ => None,
        }
    }
}

impl From<String> for Label {
    fn from(s: String) -> Self {
        match s.as_str() {
            "NA" => Label::Na,
            "unk" => Label::Unk,
            _ => Label::Type(s),
        }
    }
}

impl From<Label> for String {
    fn from(l: Label) -> Self {
        l.to_string()
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Label::Type(t) => f.write_str(t),
            Label::Na => f.write_str("NA"),
            Label::Unk => f.write_str("unk"),
        }
    }
}

/// Functional map from oracle tokens to target types.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct LabelMapping {
    pub map: BTreeMap<String, String>,
    /// Co-occurrence count behind each non-anchor entry; anchors record the
    /// number of sets they appeared in.
    pub support_counts: BTreeMap<String, usize>,
}

impl LabelMapping {
    pub fn get(&self, token: &str) -> Option<&str> {
        self.map.get(token).map(String::as_str)
    }
}

/// Induces the mapping from the union of both templates' top-k token sets of
/// every chunk: a non-anchor token is assigned to the target whose anchors
/// it shares a set with most often, provided that count reaches
/// `min_cooccur`. Ties go to the earlier target.
pub fn build_label_mapping(
    sets: &[(Vec<String>, Vec<String>)],
    targets: &TargetTypes,
    min_cooccur: usize,
) -> LabelMapping {
    let mut cooccur: BTreeMap<&str, BTreeMap<&str, usize>> = BTreeMap::new();
    let mut anchor_hits: BTreeMap<&str, usize> = BTreeMap::new();
    for (s1, s2) in sets {
        let union: BTreeSet<&str> = s1.iter().chain(s2).map(String::as_str).collect();
        let present: BTreeSet<&str> = union.iter().filter_map(|t| targets.anchor_of(t)).collect();
        for tok in &union {
            if targets.anchor_of(tok).is_some() {
                *anchor_hits.entry(tok).or_default() += 1;
                continue;
            }
            for target in &present {
                *cooccur.entry(tok).or_default().entry(target).or_default() += 1;
            }
        }
    }

    let mut mapping = LabelMapping::default();
    for t in targets.types() {
        mapping.map.insert(t.clone(), t.clone());
        mapping
            .support_counts
            .insert(t.clone(), anchor_hits.get(t.as_str()).copied().unwrap_or(0));
    }
    for (t, al) in &targets.aliases {
        for a in al {
            mapping.map.insert(a.clone(), t.clone());
            mapping
                .support_counts
                .insert(a.clone(), anchor_hits.get(a.as_str()).copied().unwrap_or(0));
        }
    }
    for (tok, counts) in cooccur {
        let best = counts
            .iter()
            .max_by(|a, b| a.1.cmp(b.1).then_with(|| targets.order(b.0).cmp(&targets.order(a.0))));
        if let Some((target, &n)) = best {
            if n >= min_cooccur {
                mapping.map.insert(tok.to_string(), target.to_string());
                mapping.support_counts.insert(tok.to_string(), n);
            }
        }
    }
    mapping
}

/// Target distribution obtained by summing the probability of every listed
/// token mapped to each target, in target order. No renormalization.
pub fn map_distribution(
    dist: &[TokenProb],
    mapping: &LabelMapping,
    targets: &TargetTypes,
) -> Vec<(String, f64)> {
    targets
        .types()
        .iter()
        .map(|t| {
            let p = dist
                .iter()
                .filter(|e| mapping.get(&e.token) == Some(t.as_str()))
                .map(|e| e.prob)
                .sum();
            (t.clone(), p)
        })
        .collect()
}

/// Highest-probability target with positive mass; ties go to the earlier one.
fn top_mapped(py: &[(String, f64)]) -> Option<(&str, f64)> {
    let mut best: Option<(&str, f64)> = None;
    for (t, p) in py {
        if *p > 0.0 && best.is_none_or(|(_, b)| *p > b) {
            best = Some((t, *p));
        }
    }
    best
}

/// Agreement of two templates on one chunk.
///
/// The three outcomes partition all inputs: equal top mapped types give that
/// type with the smaller of the two top probabilities; otherwise equal,
/// unmapped top raw tokens give NA with the smaller of their probabilities;
/// everything else is unk with confidence 0.
pub fn consistency_label(
    py1: &[(String, f64)],
    py2: &[(String, f64)],
    s1: &[TokenProb],
    s2: &[TokenProb],
    mapping: &LabelMapping,
) -> (Label, f64) {
    if let (Some((t1, p1)), Some((t2, p2))) = (top_mapped(py1), top_mapped(py2)) {
        if t1 == t2 {
            return (Label::Type(t1.to_string()), p1.min(p2));
        }
    }
    if let (Some(a), Some(b)) = (s1.first(), s2.first()) {
        if a.token == b.token && mapping.get(&a.token).is_none() {
            return (Label::Na, a.prob.min(b.prob));
        }
    }
    (Label::Unk, 0.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn targets() -> TargetTypes {
        TargetTypes::new(vec!["disease".into(), "chemical".into()]).unwrap()
    }

    fn toks(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    fn tp(v: &[(&str, f64)]) -> Vec<TokenProb> {
        v.iter().map(|&(t, p)| TokenProb::new(t, p)).collect()
    }

    #[test]
    fn disorders_maps_to_disease() {
        let sets = vec![
            (toks(&["disease", "disorders", "conditions"]), toks(&["disorders", "symptoms"])),
            (toks(&["disorders", "disease"]), toks(&["disease"])),
            (toks(&["chemical", "drugs"]), toks(&["drugs", "agents"])),
            (toks(&["company"]), toks(&["company"])),
        ];
        let m = build_label_mapping(&sets, &targets(), 2);
        assert_eq!(m.get("disorders"), Some("disease"));
        assert_eq!(m.get("disease"), Some("disease"));
        assert_eq!(m.get("chemical"), Some("chemical"));
        assert_eq!(m.get("drugs"), None, "one co-occurring set only");
        assert_eq!(m.get("company"), None);
        assert_eq!(m.support_counts["disorders"], 2);
    }

    #[test]
    fn planted_cooccurrence_table() {
        // x: disease 3, chemical 3 -> tie, earlier target wins.
        // y: disease 1, chemical 2 -> chemical.
        let mut sets = Vec::new();
        for _ in 0..3 {
            sets.push((toks(&["x", "disease"]), toks(&[])));
            sets.push((toks(&["x", "chemical"]), toks(&[])));
        }
        sets.push((toks(&["y", "disease"]), toks(&[])));
        sets.push((toks(&["chemical"]), toks(&["y"])));
        sets.push((toks(&["chemical", "y"]), toks(&["y"])));
        let m = build_label_mapping(&sets, &targets(), 2);
        assert_eq!(m.get("x"), Some("disease"));
        assert_eq!(m.get("y"), Some("chemical"));
        assert_eq!(m.support_counts["y"], 2);
    }

    #[test]
    fn aliases_anchor_their_type() {
        let mut al = BTreeMap::new();
        al.insert("disease".to_string(), vec!["diseases".to_string()]);
        let t = TargetTypes::with_aliases(vec!["disease".into(), "chemical".into()], al).unwrap();
        let m = build_label_mapping(&[(toks(&["diseases", "illness"]), toks(&["illness"]))], &t, 1);
        assert_eq!(m.get("diseases"), Some("disease"));
        assert_eq!(m.get("illness"), Some("disease"));
    }

    #[test]
    fn bad_target_sets_are_rejected() {
        assert!(TargetTypes::new(vec![]).is_err());
        assert!(TargetTypes::new(vec!["a".into(), "a".into()]).is_err());
        assert!(TargetTypes::new(vec!["NA".into()]).is_err());
    }

    #[test]
    fn consistency_examples() {
        let m = build_label_mapping(&[], &targets(), 1);
        let py = |d: f64, c: f64| vec![("disease".to_string(), d), ("chemical".to_string(), c)];
        let (l, p) = consistency_label(&py(0.4, 0.0), &py(0.3, 0.1), &[], &[], &m);
        assert_eq!((l, p), (Label::Type("disease".into()), 0.3));
        let s = tp(&[("company", 0.6)]);
        let s2 = tp(&[("company", 0.5)]);
        let (l, p) = consistency_label(&py(0.0, 0.0), &py(0.0, 0.0), &s, &s2, &m);
        assert_eq!((l, p), (Label::Na, 0.5));
        let (l, p) = consistency_label(&py(0.4, 0.1), &py(0.1, 0.4), &s, &tp(&[("firm", 0.5)]), &m);
        assert_eq!((l, p), (Label::Unk, 0.0));
    }

    #[test]
    fn label_serializes_as_plain_string() {
        for l in [Label::Type("disease".into()), Label::Na, Label::Unk] {
            let j = serde_json::to_string(&l).unwrap();
            assert_eq!(serde_json::from_str::<Label>(&j).unwrap(), l);
        }
        assert_eq!(serde_json::to_string(&Label::Na).unwrap(), "\"NA\"");
    }

    fn dist() -> impl Strategy<Value = Vec<TokenProb>> {
        let vocab = prop::sample::select(vec!["disease", "chemical", "disorders", "drugs", "company", "city", "thing"]);
        prop::collection::vec((vocab, 0.0f64..=1.0), 0..5).prop_map(|v| {
            let mut v: Vec<TokenProb> = v.into_iter().map(|(t, p)| TokenProb::new(t, p)).collect();
            v.sort_by(|a, b| b.prob.total_cmp(&a.prob));
            v
        })
    }

    proptest! {
        #[test]
        fn consistency_branches_partition(s1 in dist(), s2 in dist()) {
            let t = targets();
            let mut m = build_label_mapping(&[], &t, 1);
            m.map.insert("disorders".into(), "disease".into());
            m.map.insert("drugs".into(), "chemical".into());
            let py1 = map_distribution(&s1, &m, &t);
            let py2 = map_distribution(&s2, &m, &t);
            let (label, conf) = consistency_label(&py1, &py2, &s1, &s2, &m);
            let top = |py: &[(String, f64)]| top_mapped(py).map(|(t, p)| (t.to_string(), p));
            let (a, b) = (top(&py1), top(&py2));
            let agree = matches!((&a, &b), (Some(x), Some(y)) if x.0 == y.0);
            let raw_na = !agree
                && matches!((s1.first(), s2.first()), (Some(x), Some(y)) if x.token == y.token && m.get(&x.token).is_none());
            match &label {
                Label::Type(ty) => {
                    prop_assert!(agree);
                    prop_assert!(t.contains(ty));
                    prop_assert!(conf > 0.0);
                    prop_assert!(conf <= a.unwrap().1 && conf <= b.unwrap().1);
                }
                Label::Na => {
                    prop_assert!(raw_na);
                    prop_assert!(conf <= s1[0].prob && conf <= s2[0].prob);
                }
                Label::Unk => prop_assert!(!agree && !raw_na && conf == 0.0),
            }
        }

        #[test]
        fn mapping_is_total_on_targets(sets in prop::collection::vec((dist(), dist()), 0..12), k in 1usize..4) {
            let t = targets();
            let sets: Vec<(Vec<String>, Vec<String>)> = sets
                .into_iter()
                .map(|(a, b)| (a.into_iter().map(|e| e.token).collect(), b.into_iter().map(|e| e.token).collect()))
                .collect();
            let m = build_label_mapping(&sets, &t, k);
            for ty in t.types() {
                prop_assert_eq!(m.get(ty), Some(ty.as_str()));
            }
            for target in m.map.values() {
                prop_assert!(t.contains(target));
            }
        }
    }
}
