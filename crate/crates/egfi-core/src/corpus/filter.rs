//! Heuristic removal of trivially-negative candidate pairs before training.
//! Positive instances are never removed; each removal is logged with the
//! rule that fired.

use serde::{Deserialize, Serialize};

use super::PairInstance;

/// Individually toggleable rule set.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct FilterConfig {
    /// (a) identical case-folded surfaces
    pub rule_a: bool,
    /// (b) one surface a token-bounded substring of the other
    pub rule_b: bool,
    /// (c) both mentions inside one coordinate list
    pub rule_c: bool,
}

impl Default for FilterConfig {
    fn default() -> Self {
        FilterConfig { rule_a: true, rule_b: true, rule_c: true }
    }
}

#[derive(Debug, Clone, Default)]
pub struct RemovalLog {
    /// (instance_id, rule id "a"/"b"/"c")
    pub removed: Vec<(String, char)>,
}

/// Drop negative instances matched by any enabled rule. Returns the kept
/// instances and the removal log.
pub fn filter_negatives(
    instances: &[PairInstance],
    config: &FilterConfig,
) -> (Vec<PairInstance>, RemovalLog) {
    let mut kept = Vec::with_capacity(instances.len());
    let mut log = RemovalLog::default();
    for inst in instances {
        match matching_rule(inst, config) {
            Some(rule) if !inst.label.is_positive() => {
                log.removed.push((inst.instance_id.clone(), rule));
            }
            _ => kept.push(inst.clone()),
        }
    }
    (kept, log)
}

fn matching_rule(inst: &PairInstance, config: &FilterConfig) -> Option<char> {
    let s1 = inst.e1.surface.to_lowercase();
    let s2 = inst.e2.surface.to_lowercase();
    if config.rule_a && s1 == s2 {
        return Some('a');
    }
    if config.rule_b && (token_bounded_substring(&s1, &s2) || token_bounded_substring(&s2, &s1)) {
        return Some('b');
    }
    if config.rule_c && in_coordinate_list(inst) {
        return Some('c');
    }
    None
}

/// True iff `needle` occurs in `haystack` at token boundaries (neighbouring
/// characters, if any, are not alphanumeric). Equal strings do not count.
fn token_bounded_substring(needle: &str, haystack: &str) -> bool {
    if needle.is_empty() || needle == haystack {
        return false;
    }
    let hay: Vec<char> = haystack.chars().collect();
    let ned: Vec<char> = needle.chars().collect();
    if ned.len() > hay.len() {
        return false;
    }
    for start in 0..=hay.len() - ned.len() {
        if hay[start..start + ned.len()] != ned[..] {
            continue;
        }
        let left_ok = start == 0 || !hay[start - 1].is_alphanumeric();
        let right = start + ned.len();
        let right_ok = right == hay.len() || !hay[right].is_alphanumeric();
        if left_ok && right_ok {
            return true;
        }
    }
    false
}

const INTRODUCERS: [&str; 4] = ["such as", "including", "e.g.", "followed by"];

/// Both mentions sit after a list introducer with nothing but commas,
/// "and"/"or" and whitespace between them.
fn in_coordinate_list(inst: &PairInstance) -> bool {
    let text_lower = inst.text.to_lowercase();
    let chars: Vec<char> = text_lower.chars().collect();
    let (first, second) = if inst.e1.start <= inst.e2.start {
        (&inst.e1, &inst.e2)
    } else {
        (&inst.e2, &inst.e1)
    };

    // an introducer must end before the first mention starts
    let prefix: String = chars[..first.start.min(chars.len())].iter().collect();
    let introduced = INTRODUCERS.iter().any(|intro| prefix.contains(intro));
    if !introduced {
        return false;
    }

    if second.start < first.end {
        return false; // overlapping; not a list
    }
    let between: String = chars[first.end..second.start].iter().collect();
    between_is_coordination(&between)
}

fn between_is_coordination(between: &str) -> bool {
    between
        .split(|c: char| c.is_whitespace() || c == ',')
        .filter(|tok| !tok.is_empty())
        .all(|tok| tok == "and" || tok == "or")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{
        enrich, DrugType, EntityMention, PairEntity, PairInstance, Partition, RelationLabel,
    };
    use proptest::prelude::*;

    fn instance(text: &str, e1: (&str, usize), e2: (&str, usize), label: RelationLabel) -> PairInstance {
        let m1 = EntityMention {
            id: "e1".into(),
            surface: e1.0.into(),
            drug_type: DrugType::Drug,
            start: e1.1,
            end: e1.1 + e1.0.chars().count(),
        };
        let m2 = EntityMention {
            id: "e2".into(),
            surface: e2.0.into(),
            drug_type: DrugType::Drug,
            start: e2.1,
            end: e2.1 + e2.0.chars().count(),
        };
        PairInstance {
            instance_id: format!("t#{}#{}", e1.0, e2.0),
            sentence_id: "t".into(),
            text: text.into(),
            enriched_text: enrich(text, &m1, &m2).unwrap(),
            e1: PairEntity::from_mention(&m1),
            e2: PairEntity::from_mention(&m2),
            label,
            partition: Partition::Train,
        }
    }

    #[test]
    fn rule_a_removes_identical_surfaces() {
        let inst = instance(
            "aspirin was compared with aspirin levels.",
            ("aspirin", 0),
            ("aspirin", 26),
            RelationLabel::Negative,
        );
        let (kept, log) = filter_negatives(&[inst], &FilterConfig::default());
        assert!(kept.is_empty());
        assert_eq!(log.removed[0].1, 'a');
    }

    #[test]
    fn rule_a_is_case_insensitive() {
        let inst = instance(
            "Aspirin was compared with aspirin levels.",
            ("Aspirin", 0),
            ("aspirin", 26),
            RelationLabel::Negative,
        );
        let (kept, _) = filter_negatives(&[inst], &FilterConfig::default());
        assert!(kept.is_empty());
    }

    #[test]
    fn rule_b_removes_token_bounded_substrings() {
        let inst = instance(
            "beta blockers act like blockers here.",
            ("beta blockers", 0),
            ("blockers", 23),
            RelationLabel::Negative,
        );
        let (kept, log) = filter_negatives(&[inst], &FilterConfig::default());
        assert!(kept.is_empty());
        assert_eq!(log.removed[0].1, 'b');

        // not token-bounded: "pir" inside "aspirin"
        assert!(!token_bounded_substring("pir", "aspirin"));
        assert!(token_bounded_substring("beta", "beta blockers"));
        assert!(token_bounded_substring("blockers", "beta-blockers"));
    }

    #[test]
    fn rule_c_removes_adjacent_coordinate_pairs() {
        let text = "drugs such as aspirin, warfarin, or heparin are listed.";
        let inst = instance(text, ("aspirin", 14), ("warfarin", 23), RelationLabel::Negative);
        let (kept, log) = filter_negatives(&[inst.clone()], &FilterConfig::default());
        assert!(kept.is_empty());
        assert_eq!(log.removed[0].1, 'c');

        // non-adjacent members have another list item between them: kept
        let far = instance(text, ("aspirin", 14), ("heparin", 36), RelationLabel::Negative);
        let (kept, _) = filter_negatives(&[far], &FilterConfig::default());
        assert_eq!(kept.len(), 1);

        // no introducer: kept
        let plain = "aspirin, warfarin were tested.";
        let no_intro = instance(plain, ("aspirin", 0), ("warfarin", 9), RelationLabel::Negative);
        let (kept, _) = filter_negatives(&[no_intro], &FilterConfig::default());
        assert_eq!(kept.len(), 1);
    }

    #[test]
    fn positives_are_never_removed() {
        for label in RelationLabel::POSITIVE {
            let inst = instance(
                "aspirin was compared with aspirin levels.",
                ("aspirin", 0),
                ("aspirin", 26),
                label,
            );
            let (kept, log) = filter_negatives(&[inst], &FilterConfig::default());
            assert_eq!(kept.len(), 1, "{label:?} instance must be retained");
            assert!(log.removed.is_empty());
        }
    }

    #[test]
    fn rules_can_be_disabled() {
        let inst = instance(
            "aspirin was compared with aspirin levels.",
            ("aspirin", 0),
            ("aspirin", 26),
            RelationLabel::Negative,
        );
        let cfg = FilterConfig { rule_a: false, rule_b: false, rule_c: false };
        let (kept, _) = filter_negatives(&[inst], &cfg);
        assert_eq!(kept.len(), 1);
    }

    proptest! {
        // filter_negatives removes only negative-labelled instances
        #[test]
        fn only_negatives_removed(labels in proptest::collection::vec(0usize..5, 1..40)) {
            let instances: Vec<PairInstance> = labels
                .iter()
                .map(|&l| {
                    instance(
                        "aspirin was compared with aspirin levels.",
                        ("aspirin", 0),
                        ("aspirin", 26),
                        RelationLabel::from_index(l).unwrap(),
                    )
                })
                .collect();
            let (kept, log) = filter_negatives(&instances, &FilterConfig::default());
            let positives = instances.iter().filter(|i| i.label.is_positive()).count();
            prop_assert_eq!(kept.len(), positives);
            prop_assert_eq!(log.removed.len(), instances.len() - positives);
        }
    }
}
