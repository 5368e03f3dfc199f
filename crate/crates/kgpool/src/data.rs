//! Dataset, attribute-store, and relation-vocabulary files, plus the
//! synthetic desk-scale corpus generator.
//!
//! Datasets and attribute stores are line-delimited JSON (one record per
//! line); the relation vocabulary is one relation id per line and must
//! contain `NA`. Loaders validate and reject rather than repair: invalid
//! records are collected with their line numbers, and a file fails as a
//! whole only when more than 10% of its records are bad.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::hig::{EntityAttributes, SentenceInstance};

/// The "no relation" label; always part of a relation vocabulary.
pub const NA_RELATION: &str = "NA";

// ---------------------------------------------------------------------------
// Relation vocabulary
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct RelationVocab {
    names: Vec<String>,
    index: BTreeMap<String, usize>,
    na: usize,
}

impl RelationVocab {
    pub fn new(names: Vec<String>) -> Result<Self> {
        let mut index = BTreeMap::new();
        for (i, name) in names.iter().enumerate() {
            if name.is_empty() {
                return Err(Error::Data("empty relation name".to_string()));
            }
            if index.insert(name.clone(), i).is_some() {
                return Err(Error::Data(format!("duplicate relation {name:?}")));
            }
        }
        let na = *index.get(NA_RELATION).ok_or_else(|| {
            Error::Data(format!("relation vocabulary must contain {NA_RELATION}"))
        })?;
        if names.len() < 2 {
            return Err(Error::Data(
                "relation vocabulary needs at least one non-NA relation".to_string(),
            ));
        }
        Ok(RelationVocab { names, index, na })
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn na_index(&self) -> usize {
        self.na
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn name(&self, index: usize) -> &str {
        &self.names[index]
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }
}

/// One relation id per line; blank lines and `#` comments ignored.
pub fn load_relations(path: &Path) -> Result<RelationVocab> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Data(format!("cannot read relations {}: {e}", path.display())))?;
    let names: Vec<String> = text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(str::to_string)
        .collect();
    RelationVocab::new(names)
}

pub fn save_relations(path: &Path, names: &[String]) -> Result<()> {
    let mut out = String::new();
    for n in names {
        out.push_str(n);
        out.push('\n');
    }
    std::fs::write(path, out)?;
    Ok(())
}

// ---------------------------------------------------------------------------
// Dataset
// ---------------------------------------------------------------------------

/// Per-file validation report: which lines were rejected and why.
#[derive(Debug, Clone, Default, Serialize)]
pub struct LoadReport {
    pub total_records: usize,
    pub rejected: Vec<(usize, String)>,
}

impl LoadReport {
    pub fn ok(&self) -> bool {
        self.rejected.is_empty()
    }
}

fn validate_instance(inst: &SentenceInstance) -> std::result::Result<(), String> {
    let n = inst.tokens.len();
    if n == 0 {
        return Err("empty token list".to_string());
    }
    if inst.tokens.iter().any(|t| t.is_empty()) {
        return Err("empty token".to_string());
    }
    for (name, span) in [("head", inst.head.span), ("tail", inst.tail.span)] {
        if span.0 >= span.1 {
            return Err(format!("{name} span is empty"));
        }
        if span.1 > n {
            return Err(format!("{name} span out of bounds"));
        }
    }
    let (h, t) = (inst.head.span, inst.tail.span);
    if h.0 < t.1 && t.0 < h.1 {
        return Err("head and tail spans overlap".to_string());
    }
    if inst.relation.is_empty() {
        return Err("empty relation".to_string());
    }
    if inst.head.kg_id.is_empty() || inst.tail.kg_id.is_empty() {
        return Err("empty kg_id".to_string());
    }
    Ok(())
}

/// Load a line-delimited dataset. Returns the valid instances plus the
/// rejection report; fails outright when more than 10% of records are
/// invalid.
pub fn load_dataset(path: &Path) -> Result<(Vec<SentenceInstance>, LoadReport)> {
    let file = File::open(path)
        .map_err(|e| Error::Data(format!("cannot open dataset {}: {e}", path.display())))?;
    let reader = BufReader::new(file);
    let mut instances = Vec::new();
    let mut report = LoadReport::default();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        let lineno = lineno + 1;
        if line.trim().is_empty() {
            continue;
        }
        report.total_records += 1;
        match serde_json::from_str::<SentenceInstance>(&line) {
            Ok(inst) => match validate_instance(&inst) {
                Ok(()) => instances.push(inst),
                Err(reason) => report.rejected.push((lineno, reason)),
            },
            Err(e) => report.rejected.push((lineno, format!("bad record: {e}"))),
        }
    }
    if report.total_records == 0 {
        log::warn!("dataset {} is empty", path.display());
    }
    for (line, reason) in &report.rejected {
        log::warn!("{}:{line}: rejected record: {reason}", path.display());
    }
    if report.total_records > 0 && report.rejected.len() * 10 > report.total_records {
        return Err(Error::Data(format!(
            "{}: {} of {} records invalid (over 10%)",
            path.display(),
            report.rejected.len(),
            report.total_records
        )));
    }
    Ok((instances, report))
}

pub fn save_dataset(path: &Path, instances: &[SentenceInstance]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for inst in instances {
        serde_json::to_writer(&mut w, inst)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

// ---------------------------------------------------------------------------
// Attribute store
// ---------------------------------------------------------------------------

/// kg_id → attributes, loaded from line-delimited JSON.
#[derive(Debug, Clone, Default)]
pub struct AttributeStore {
    entries: BTreeMap<String, EntityAttributes>,
}

impl AttributeStore {
    pub fn new() -> Self {
        AttributeStore::default()
    }

    pub fn from_entries(entries: impl IntoIterator<Item = EntityAttributes>) -> Result<Self> {
        let mut store = AttributeStore::new();
        for e in entries {
            store.insert(e)?;
        }
        Ok(store)
    }

    pub fn insert(&mut self, attrs: EntityAttributes) -> Result<()> {
        if attrs.kg_id.is_empty() {
            return Err(Error::Data("attribute entry with empty kg_id".to_string()));
        }
        if self.entries.insert(attrs.kg_id.clone(), attrs).is_some() {
            return Err(Error::Data(
                "duplicate kg_id in attribute store".to_string(),
            ));
        }
        Ok(())
    }

    pub fn get(&self, kg_id: &str) -> Option<&EntityAttributes> {
        self.entries.get(kg_id)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &EntityAttributes> {
        self.entries.values()
    }
}

fn validate_attributes(a: &EntityAttributes) -> std::result::Result<(), String> {
    if a.kg_id.is_empty() {
        return Err("empty kg_id".to_string());
    }
    let empty_opt = |s: &Option<String>| s.as_deref().is_some_and(|v| v.trim().is_empty());
    if empty_opt(&a.label) || empty_opt(&a.description) {
        return Err("empty string attribute; omit the field instead".to_string());
    }
    if a.aliases
        .iter()
        .chain(&a.instance_of)
        .chain(&a.extra)
        .any(|s| s.trim().is_empty())
    {
        return Err("empty string in alias/instance_of/extra list".to_string());
    }
    Ok(())
}

pub fn load_attribute_store(path: &Path) -> Result<(AttributeStore, LoadReport)> {
    let file = File::open(path).map_err(|e| {
        Error::Data(format!(
            "cannot open attribute store {}: {e}",
            path.display()
        ))
    })?;
    let reader = BufReader::new(file);
    let mut store = AttributeStore::new();
    let mut report = LoadReport::default();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        let lineno = lineno + 1;
        if line.trim().is_empty() {
            continue;
        }
        report.total_records += 1;
        match serde_json::from_str::<EntityAttributes>(&line) {
            Ok(attrs) => match validate_attributes(&attrs) {
                Ok(()) => {
                    if let Err(e) = store.insert(attrs) {
                        report.rejected.push((lineno, e.to_string()));
                    }
                }
                Err(reason) => report.rejected.push((lineno, reason)),
            },
            Err(e) => report.rejected.push((lineno, format!("bad record: {e}"))),
        }
    }
    for (line, reason) in &report.rejected {
        log::warn!("{}:{line}: rejected entry: {reason}", path.display());
    }
    if report.total_records > 0 && report.rejected.len() * 10 > report.total_records {
        return Err(Error::Data(format!(
            "{}: {} of {} entries invalid (over 10%)",
            path.display(),
            report.rejected.len(),
            report.total_records
        )));
    }
    Ok((store, report))
}

pub fn save_attribute_store(path: &Path, store: &AttributeStore) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for attrs in store.iter() {
        serde_json::to_writer(&mut w, attrs)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

/// SHA-256 of a file's bytes, hex-encoded; recorded into checkpoints and
/// manifests for provenance.
pub fn file_hash(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path)
        .map_err(|e| Error::Data(format!("cannot hash {}: {e}", path.display())))?;
    let mut hasher = Sha256::new();
    hasher.update(&bytes);
    Ok(format!("{:x}", hasher.finalize()))
}

// ---------------------------------------------------------------------------
// Synthetic corpus
// ---------------------------------------------------------------------------

/// Output of the generator: splits share one attribute store and one
/// relation list.
#[derive(Debug, Clone)]
pub struct SynthCorpus {
    pub train: Vec<SentenceInstance>,
    pub test: Vec<SentenceInstance>,
    pub store: AttributeStore,
    pub relations: Vec<String>,
    /// Every token the corpus can produce; used to emit an embedding file.
    pub vocabulary: Vec<String>,
}

/// Relations whose gold label is recoverable only from the head entity's
/// description carry this prefix; sentence-determined ones use
/// [`SENT_RELATION_PREFIX`].
pub const ATTR_RELATION_PREFIX: &str = "rel_attr_";
pub const SENT_RELATION_PREFIX: &str = "rel_sent_";

const SURFACES: [&str; 12] = [
    "alpha", "bravo", "carol", "delta", "echo", "fargo", "golf", "hotel", "india", "julia", "kilo",
    "lima",
];
const FILLERS: [&str; 4] = ["today", "somehow", "indeed", "reportedly"];

/// Generate a corpus where half the relations are decidable only from an
/// entity attribute and half only from the sentence.
///
/// Attribute-determined instances all share one neutral sentence template;
/// the signal lives in the head entity's description (`attrmark_k`).
/// Sentence-determined instances carry a verb marker (`sentmark_k`) and
/// neutral attributes. Entity surfaces, fillers, and kg_ids are drawn
/// independently of the relation, so stripping the attribute store leaves
/// the attribute-determined half at chance by construction.
pub fn synth_corpus(
    n_train: usize,
    n_test: usize,
    n_relations: usize,
    seed: u64,
) -> Result<SynthCorpus> {
    if n_relations < 2 {
        return Err(Error::Data(format!(
            "synthetic corpus needs at least 2 relations, got {n_relations}"
        )));
    }
    let n_attr = n_relations / 2;
    let mut relations: Vec<String> = (0..n_attr)
        .map(|i| format!("{ATTR_RELATION_PREFIX}{i}"))
        .chain((0..n_relations - n_attr).map(|i| format!("{SENT_RELATION_PREFIX}{i}")))
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = AttributeStore::new();
    let mut next_entity = 0usize;

    let mut generate_split = |count: usize,
                              rng: &mut ChaCha8Rng,
                              store: &mut AttributeStore|
     -> Result<Vec<SentenceInstance>> {
        let mut instances = Vec::with_capacity(count);
        for i in 0..count {
            let relation = relations[i % relations.len()].clone();
            let attr_determined = relation.starts_with(ATTR_RELATION_PREFIX);
            let head_surface = SURFACES[rng.gen_range(0..SURFACES.len())];
            let tail_surface = SURFACES[rng.gen_range(0..SURFACES.len())];
            let filler = FILLERS[rng.gen_range(0..FILLERS.len())];

            let verb = if attr_determined {
                "connects".to_string()
            } else {
                let k: usize = relation[SENT_RELATION_PREFIX.len()..]
                    .parse()
                    .expect("generated name");
                format!("sentmark_{k}")
            };
            let tokens: Vec<String> = [
                "the",
                head_surface,
                verb.as_str(),
                "to",
                tail_surface,
                filler,
            ]
            .iter()
            .map(|s| s.to_string())
            .collect();

            let head_id = format!("Q{next_entity}");
            next_entity += 1;
            let tail_id = format!("Q{next_entity}");
            next_entity += 1;

            let head_description = if attr_determined {
                let k: usize = relation[ATTR_RELATION_PREFIX.len()..]
                    .parse()
                    .expect("generated name");
                format!("attrmark_{k} kind of thing")
            } else {
                "ordinary kind of thing".to_string()
            };
            store.insert(EntityAttributes {
                kg_id: head_id.clone(),
                label: Some(head_surface.to_string()),
                aliases: vec![format!("{head_surface} alias")],
                description: Some(head_description),
                instance_of: vec!["thing".to_string()],
                extra: vec![],
            })?;
            store.insert(EntityAttributes {
                kg_id: tail_id.clone(),
                label: Some(tail_surface.to_string()),
                aliases: vec![format!("{tail_surface} alias")],
                description: Some("ordinary kind of thing".to_string()),
                instance_of: vec!["thing".to_string()],
                extra: vec![],
            })?;

            instances.push(SentenceInstance {
                tokens,
                head: crate::hig::EntityMention {
                    kg_id: head_id,
                    span: (1, 2),
                },
                tail: crate::hig::EntityMention {
                    kg_id: tail_id,
                    span: (4, 5),
                },
                relation,
            });
        }
        instances.shuffle(rng);
        Ok(instances)
    };

    let train = generate_split(n_train, &mut rng, &mut store)?;
    let test = generate_split(n_test, &mut rng, &mut store)?;

    // full token inventory for the embedding file
    let mut vocabulary: Vec<String> = vec![
        "the".into(),
        "to".into(),
        "connects".into(),
        "alias".into(),
        "ordinary".into(),
        "kind".into(),
        "of".into(),
        "thing".into(),
    ];
    vocabulary.extend(SURFACES.iter().map(|s| s.to_string()));
    vocabulary.extend(FILLERS.iter().map(|s| s.to_string()));
    for i in 0..n_attr {
        vocabulary.push(format!("attrmark_{i}"));
    }
    for i in 0..n_relations - n_attr {
        vocabulary.push(format!("sentmark_{i}"));
    }
    vocabulary.sort();
    vocabulary.dedup();

    relations.push(NA_RELATION.to_string());
    Ok(SynthCorpus {
        train,
        test,
        store,
        relations,
        vocabulary,
    })
}

/// Write a word-vector text file with seeded random vectors for `tokens`.
pub fn write_random_embeddings(
    path: &Path,
    tokens: &[String],
    dim: usize,
    seed: u64,
) -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut w = BufWriter::new(File::create(path)?);
    for token in tokens {
        write!(w, "{token}")?;
        for _ in 0..dim {
            write!(w, " {:.6}", rng.gen_range(-0.5..0.5))?;
        }
        writeln!(w)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hig::EntityMention;

    fn sample_instance() -> SentenceInstance {
        SentenceInstance {
            tokens: ["the", "fox", "ran", "to", "rome"]
                .iter()
                .map(|s| s.to_string())
                .collect(),
            head: EntityMention {
                kg_id: "Q1".into(),
                span: (1, 2),
            },
            tail: EntityMention {
                kg_id: "Q2".into(),
                span: (4, 5),
            },
            relation: "ran_to".into(),
        }
    }

    #[test]
    fn dataset_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("data.jsonl");
        let instances = vec![sample_instance()];
        save_dataset(&path, &instances).unwrap();
        let (loaded, report) = load_dataset(&path).unwrap();
        assert_eq!(loaded, instances);
        assert!(report.ok());
    }

    #[test]
    fn empty_dataset_is_empty_list() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("data.jsonl");
        std::fs::write(&path, "").unwrap();
        let (loaded, report) = load_dataset(&path).unwrap();
        assert!(loaded.is_empty());
        assert_eq!(report.total_records, 0);
    }

    #[test]
    fn out_of_bounds_span_is_rejected_with_reason() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("data.jsonl");
        let mut bad = sample_instance();
        bad.tail.span = (4, 9);
        // write 8 good lines and 1 bad so the 10% threshold is not hit
        let mut lines = Vec::new();
        for _ in 0..9 {
            lines.push(serde_json::to_string(&sample_instance()).unwrap());
        }
        lines.push(serde_json::to_string(&bad).unwrap());
        std::fs::write(&path, lines.join("\n")).unwrap();

        let (loaded, report) = load_dataset(&path).unwrap();
        assert_eq!(loaded.len(), 9);
        assert_eq!(report.rejected.len(), 1);
        assert_eq!(report.rejected[0].0, 10);
        assert!(report.rejected[0].1.contains("out of bounds"));
    }

    #[test]
    fn mostly_invalid_file_fails() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("data.jsonl");
        std::fs::write(&path, "not json\n{\"also\": \"bad\"}\n").unwrap();
        assert!(load_dataset(&path).is_err());
    }

    #[test]
    fn store_round_trip_and_duplicate_detection() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("store.jsonl");
        let store = AttributeStore::from_entries([
            EntityAttributes {
                kg_id: "Q1".into(),
                label: Some("fox".into()),
                aliases: vec!["red fox".into()],
                description: None,
                extra: vec![],
                instance_of: vec![],
            },
            EntityAttributes {
                kg_id: "Q2".into(),
                ..Default::default()
            },
        ])
        .unwrap();
        save_attribute_store(&path, &store).unwrap();
        let (loaded, report) = load_attribute_store(&path).unwrap();
        assert!(report.ok());
        assert_eq!(loaded.len(), 2);
        assert_eq!(loaded.get("Q1").unwrap().label.as_deref(), Some("fox"));

        let mut dup = AttributeStore::new();
        dup.insert(EntityAttributes {
            kg_id: "Q1".into(),
            ..Default::default()
        })
        .unwrap();
        assert!(dup
            .insert(EntityAttributes {
                kg_id: "Q1".into(),
                ..Default::default()
            })
            .is_err());
    }

    #[test]
    fn relations_require_na() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("relations.txt");
        std::fs::write(&path, "born_in\nworks_at\n").unwrap();
        assert!(load_relations(&path).is_err());
        std::fs::write(&path, "born_in\nworks_at\nNA\n").unwrap();
        let vocab = load_relations(&path).unwrap();
        assert_eq!(vocab.len(), 3);
        assert_eq!(vocab.name(vocab.na_index()), "NA");
        // NA alone leaves nothing to predict under the NA rule
        std::fs::write(&path, "NA\n").unwrap();
        assert!(load_relations(&path).is_err());
    }

    #[test]
    fn synth_is_deterministic_and_balanced() {
        let a = synth_corpus(40, 12, 4, 9).unwrap();
        let b = synth_corpus(40, 12, 4, 9).unwrap();
        assert_eq!(a.train, b.train);
        assert_eq!(a.test, b.test);
        assert_eq!(a.train.len(), 40);
        assert_eq!(a.test.len(), 12);

        let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
        for inst in &a.train {
            *counts.entry(inst.relation.as_str()).or_default() += 1;
        }
        let min = counts.values().min().unwrap();
        let max = counts.values().max().unwrap();
        assert!(max - min <= 1, "labels unbalanced: {counts:?}");
        assert!(a.relations.contains(&NA_RELATION.to_string()));
    }

    #[test]
    fn synth_attribute_relations_leak_only_through_the_store() {
        let corpus = synth_corpus(60, 10, 4, 3).unwrap();
        for inst in corpus.train.iter().chain(&corpus.test) {
            let marker_in_sentence = inst.tokens.iter().any(|t| t.starts_with("attrmark_"));
            assert!(!marker_in_sentence, "attribute marker leaked into sentence");
            if inst.relation.starts_with(ATTR_RELATION_PREFIX) {
                let k: usize = inst.relation[ATTR_RELATION_PREFIX.len()..].parse().unwrap();
                let head = corpus.store.get(&inst.head.kg_id).unwrap();
                assert!(head
                    .description
                    .as_deref()
                    .unwrap()
                    .contains(&format!("attrmark_{k}")));
                // the neutral template is shared across attribute relations
                assert_eq!(inst.tokens[2], "connects");
            } else {
                assert!(inst.tokens[2].starts_with("sentmark_"));
            }
        }
        // every token the corpus uses is in the emitted vocabulary
        for inst in corpus.train.iter().chain(&corpus.test) {
            for t in &inst.tokens {
                assert!(corpus.vocabulary.contains(t), "{t} missing from vocabulary");
            }
        }
    }

    #[test]
    fn embeddings_file_is_seeded_deterministic() {
        let dir = tempfile::tempdir().unwrap();
        let p1 = dir.path().join("e1.txt");
        let p2 = dir.path().join("e2.txt");
        let tokens: Vec<String> = vec!["a".into(), "b".into()];
        write_random_embeddings(&p1, &tokens, 4, 7).unwrap();
        write_random_embeddings(&p2, &tokens, 4, 7).unwrap();
        assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
        assert_eq!(file_hash(&p1).unwrap(), file_hash(&p2).unwrap());
    }
}
