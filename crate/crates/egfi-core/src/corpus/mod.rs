//! Annotated corpus handling: parsing, pair expansion, enrichment with typed
//! entity markers, negative filtering, splits, statistics and persistence.

pub mod enrich;
pub mod filter;
pub mod jsonl;
pub mod markers;
pub mod xml;

pub use enrich::{enrich, mark_entities};
pub use filter::{filter_negatives, FilterConfig, RemovalLog};
pub use jsonl::{read_jsonl, write_jsonl};
pub use xml::{parse_ddi_xml, ParsedCorpus};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// The four pharmacological substance types of the corpus annotation scheme.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum DrugType {
    #[serde(rename = "drug")]
    Drug,
    #[serde(rename = "brand")]
    Brand,
    #[serde(rename = "group")]
    Group,
    #[serde(rename = "drug_n")]
    DrugN,
}

impl DrugType {
    pub const ALL: [DrugType; 4] = [DrugType::Drug, DrugType::Brand, DrugType::Group, DrugType::DrugN];

    /// 0-indexed marker type code: drug=0, brand=1, group=2, drug_n=3.
    pub fn marker_index(self) -> usize {
        match self {
            DrugType::Drug => 0,
            DrugType::Brand => 1,
            DrugType::Group => 2,
            DrugType::DrugN => 3,
        }
    }

    pub fn from_marker_index(idx: usize) -> Option<DrugType> {
        DrugType::ALL.get(idx).copied()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            DrugType::Drug => "drug",
            DrugType::Brand => "brand",
            DrugType::Group => "group",
            DrugType::DrugN => "drug_n",
        }
    }

    pub fn parse(s: &str) -> Result<DrugType> {
        match s {
            "drug" => Ok(DrugType::Drug),
            "brand" => Ok(DrugType::Brand),
            "group" => Ok(DrugType::Group),
            // the corpus writes both spellings
            "drug_n" | "drug-n" => Ok(DrugType::DrugN),
            other => Err(Error::Validation(format!("unknown drug type '{other}'"))),
        }
    }
}

/// Relation label; `Negative` is the fake/neutral class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum RelationLabel {
    #[serde(rename = "advise")]
    Advise,
    #[serde(rename = "effect")]
    Effect,
    #[serde(rename = "mechanism")]
    Mechanism,
    #[serde(rename = "int")]
    Int,
    #[serde(rename = "negative")]
    Negative,
}

impl RelationLabel {
    pub const ALL: [RelationLabel; 5] = [
        RelationLabel::Advise,
        RelationLabel::Effect,
        RelationLabel::Mechanism,
        RelationLabel::Int,
        RelationLabel::Negative,
    ];
    pub const POSITIVE: [RelationLabel; 4] = [
        RelationLabel::Advise,
        RelationLabel::Effect,
        RelationLabel::Mechanism,
        RelationLabel::Int,
    ];

    pub fn index(self) -> usize {
        match self {
            RelationLabel::Advise => 0,
            RelationLabel::Effect => 1,
            RelationLabel::Mechanism => 2,
            RelationLabel::Int => 3,
            RelationLabel::Negative => 4,
        }
    }

    pub fn from_index(idx: usize) -> Option<RelationLabel> {
        RelationLabel::ALL.get(idx).copied()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            RelationLabel::Advise => "advise",
            RelationLabel::Effect => "effect",
            RelationLabel::Mechanism => "mechanism",
            RelationLabel::Int => "int",
            RelationLabel::Negative => "negative",
        }
    }

    pub fn parse(s: &str) -> Result<RelationLabel> {
        match s {
            "advise" => Ok(RelationLabel::Advise),
            "effect" => Ok(RelationLabel::Effect),
            "mechanism" => Ok(RelationLabel::Mechanism),
            "int" => Ok(RelationLabel::Int),
            "negative" => Ok(RelationLabel::Negative),
            other => Err(Error::Validation(format!("unknown relation label '{other}'"))),
        }
    }

    pub fn is_positive(self) -> bool {
        self != RelationLabel::Negative
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Partition {
    #[serde(rename = "train")]
    Train,
    #[serde(rename = "dev")]
    Dev,
    #[serde(rename = "test")]
    Test,
}

impl Partition {
    pub const ALL: [Partition; 3] = [Partition::Train, Partition::Dev, Partition::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Partition::Train => "train",
            Partition::Dev => "dev",
            Partition::Test => "test",
        }
    }
}

/// One annotated drug mention. `start`/`end` are character offsets,
/// half-open, into the owning sentence text.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntityMention {
    pub id: String,
    pub surface: String,
    pub drug_type: DrugType,
    pub start: usize,
    pub end: usize,
}

impl EntityMention {
    /// Spans must lie inside the sentence and match the surface text.
    pub fn validate(&self, sentence: &str) -> Result<()> {
        let n_chars = sentence.chars().count();
        if self.start >= self.end || self.end > n_chars {
            return Err(Error::Validation(format!(
                "entity '{}': span {}..{} outside sentence of {} chars",
                self.id, self.start, self.end, n_chars
            )));
        }
        let actual = char_slice(sentence, self.start, self.end);
        if actual != self.surface {
            return Err(Error::Validation(format!(
                "entity '{}': surface '{}' does not match sentence span '{}'",
                self.id, self.surface, actual
            )));
        }
        Ok(())
    }

    pub fn overlaps(&self, other: &EntityMention) -> bool {
        self.start < other.end && other.start < self.end
    }
}

/// A pair annotation within one sentence.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairAnnotation {
    pub e1_id: String,
    pub e2_id: String,
    pub label: RelationLabel,
}

/// One annotated sentence with its entities and pair labels.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SentenceRecord {
    pub id: String,
    pub text: String,
    pub entities: Vec<EntityMention>,
    pub pairs: Vec<PairAnnotation>,
}

impl SentenceRecord {
    pub fn entity(&self, id: &str) -> Option<&EntityMention> {
        self.entities.iter().find(|e| e.id == id)
    }

    /// All entity spans valid; pair ids resolvable; spans nest or are
    /// disjoint (no partial overlap).
    pub fn validate(&self) -> Result<()> {
        for e in &self.entities {
            e.validate(&self.text)?;
        }
        for pair in &self.pairs {
            for id in [&pair.e1_id, &pair.e2_id] {
                if self.entity(id).is_none() {
                    return Err(Error::Validation(format!(
                        "sentence '{}': pair references unknown entity id '{}'",
                        self.id, id
                    )));
                }
            }
        }
        for (i, a) in self.entities.iter().enumerate() {
            for b in &self.entities[i + 1..] {
                let nested = (a.start <= b.start && b.end <= a.end)
                    || (b.start <= a.start && a.end <= b.end);
                if a.overlaps(b) && !nested {
                    return Err(Error::Validation(format!(
                        "sentence '{}': entities '{}' and '{}' partially overlap",
                        self.id, a.id, b.id
                    )));
                }
            }
        }
        Ok(())
    }
}

/// A mention as carried by a classification instance (the annotation id is
/// folded into the instance id).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairEntity {
    pub surface: String,
    #[serde(rename = "type")]
    pub drug_type: DrugType,
    pub start: usize,
    pub end: usize,
}

impl PairEntity {
    pub fn from_mention(m: &EntityMention) -> Self {
        PairEntity { surface: m.surface.clone(), drug_type: m.drug_type, start: m.start, end: m.end }
    }

    fn as_mention(&self, id: &str) -> EntityMention {
        EntityMention {
            id: id.to_string(),
            surface: self.surface.clone(),
            drug_type: self.drug_type,
            start: self.start,
            end: self.end,
        }
    }
}

/// One (sentence, drug1, drug2, label) classification unit.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairInstance {
    pub instance_id: String,
    pub sentence_id: String,
    pub text: String,
    pub enriched_text: String,
    pub e1: PairEntity,
    pub e2: PairEntity,
    pub label: RelationLabel,
    pub partition: Partition,
}

impl PairInstance {
    /// Sentence text with markers around the original surfaces (no
    /// anonymization); the form the generation side trains on.
    pub fn marked_text(&self) -> Result<String> {
        mark_entities(&self.text, &self.e1.as_mention("e1"), &self.e2.as_mention("e2"))
    }
}

/// Expand one sentence into classification instances, one per annotated pair.
pub fn make_pair_instances(record: &SentenceRecord, partition: Partition) -> Result<Vec<PairInstance>> {
    record.validate()?;
    let mut out = Vec::with_capacity(record.pairs.len());
    for pair in &record.pairs {
        let e1 = record.entity(&pair.e1_id).expect("validated");
        let e2 = record.entity(&pair.e2_id).expect("validated");
        let enriched_text = enrich(&record.text, e1, e2)?;
        out.push(PairInstance {
            instance_id: format!("{}#{}#{}", record.id, pair.e1_id, pair.e2_id),
            sentence_id: record.id.clone(),
            text: record.text.clone(),
            enriched_text,
            e1: PairEntity::from_mention(e1),
            e2: PairEntity::from_mention(e2),
            label: pair.label,
            partition,
        });
    }
    Ok(out)
}

/// Per-label instance counts per partition.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusStats {
    /// counts[partition][label]
    pub counts: [[u64; 5]; 3],
}

impl CorpusStats {
    pub fn count(&self, partition: Partition, label: RelationLabel) -> u64 {
        self.counts[partition_index(partition)][label.index()]
    }

    pub fn partition_total(&self, partition: Partition) -> u64 {
        self.counts[partition_index(partition)].iter().sum()
    }

    pub fn label_total(&self, label: RelationLabel) -> u64 {
        self.counts.iter().map(|row| row[label.index()]).sum()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }
}

fn partition_index(p: Partition) -> usize {
    match p {
        Partition::Train => 0,
        Partition::Dev => 1,
        Partition::Test => 2,
    }
}

pub fn corpus_stats(instances: &[PairInstance]) -> CorpusStats {
    let mut stats = CorpusStats::default();
    for inst in instances {
        stats.counts[partition_index(inst.partition)][inst.label.index()] += 1;
    }
    stats
}

/// Deterministic seeded split of training instances into (train, dev).
/// Dev gets `round(fraction * n)` instances and its partition field is
/// rewritten to `Dev`.
pub fn split_train_dev(
    instances: &[PairInstance],
    fraction: f64,
    seed: u64,
) -> Result<(Vec<PairInstance>, Vec<PairInstance>)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::Config(format!("split fraction {fraction} outside (0, 1)")));
    }
    let n = instances.len();
    let dev_size = (fraction * n as f64).round() as usize;
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(crate::derive_seed(seed, "split_train_dev"));
    order.shuffle(&mut rng);

    let mut dev = Vec::with_capacity(dev_size);
    let mut train = Vec::with_capacity(n - dev_size);
    for (rank, idx) in order.into_iter().enumerate() {
        let mut inst = instances[idx].clone();
        if rank < dev_size {
            inst.partition = Partition::Dev;
            dev.push(inst);
        } else {
            train.push(inst);
        }
    }
    Ok((train, dev))
}

/// Slice of a string by character (not byte) offsets.
pub(crate) fn char_slice(text: &str, start: usize, end: usize) -> String {
    text.chars().skip(start).take(end.saturating_sub(start)).collect()
}
