//! Deterministic synthetic support corpus: labelled tickets with profile
//! features, context-gate annotations and fixture embedding tables.

mod catalog;
mod dataset;
mod generate;

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use thiserror::Error;

pub use catalog::{Catalog, ContextPhrases, DepartmentEntry, GroupEntry, Persona, ReasonEntry};
pub use dataset::{read_dataset, write_dataset, DatasetReader};
pub use generate::{
    class_counts, examples, generate, oracle_embeddings, persona_prototype, planted_embeddings, presets_json,
    profile_presets, CorpusSpec, GeneratedCorpus, ProfilePreset, Ticket, DEFAULT_START,
};

use crate::context::{write_annotations, ContextError};
use crate::reason::ReasonError;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("invalid catalog: {0}")]
    Catalog(String),
    #[error("invalid corpus spec: {0}")]
    InvalidSpec(String),
    #[error("size {size} is smaller than the {reasons} catalog reasons")]
    TooSmall { size: usize, reasons: usize },
    #[error("unknown reason {0:?}")]
    UnknownReason(String),
    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Embedding(#[from] ReasonError),
    #[error(transparent)]
    Context(#[from] ContextError),
}

pub const TICKETS_FILE: &str = "tickets.csv";
pub const CONTEXT_FILE: &str = "context.csv";
pub const SCHEMA_FILE: &str = "schema.toml";
pub const DEPARTMENTS_FILE: &str = "departments.toml";
pub const HEURISTIC_FILE: &str = "heuristic.toml";
pub const PRESETS_FILE: &str = "profiles.json";
pub const ORACLE_EMBEDDINGS_FILE: &str = "embeddings_oracle.temb";
pub const PLANTED_EMBEDDINGS_FILE: &str = "embeddings_planted.temb";
pub const SPEC_FILE: &str = "corpus.json";

pub const PLANTED_DIMENSION: usize = 16;
pub const PLANTED_NOISE: f64 = 0.6;

/// Paths of everything [`write_corpus`] produces.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CorpusFiles {
    pub dir: PathBuf,
}

impl CorpusFiles {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        CorpusFiles { dir: dir.into() }
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    pub fn tickets(&self) -> PathBuf {
        self.path(TICKETS_FILE)
    }

    pub fn context(&self) -> PathBuf {
        self.path(CONTEXT_FILE)
    }

    pub fn schema(&self) -> PathBuf {
        self.path(SCHEMA_FILE)
    }

    pub fn departments(&self) -> PathBuf {
        self.path(DEPARTMENTS_FILE)
    }

    pub fn heuristic(&self) -> PathBuf {
        self.path(HEURISTIC_FILE)
    }

    pub fn oracle_embeddings(&self) -> PathBuf {
        self.path(ORACLE_EMBEDDINGS_FILE)
    }

    pub fn planted_embeddings(&self) -> PathBuf {
        self.path(PLANTED_EMBEDDINGS_FILE)
    }
}

/// Static configuration files derived from the catalog (independent of
/// the seed), keyed by file name.
pub fn catalog_files(catalog: &Catalog) -> Vec<(&'static str, String)> {
    vec![
        (SCHEMA_FILE, catalog.schema().to_toml()),
        (DEPARTMENTS_FILE, catalog.department_map().to_toml()),
        (HEURISTIC_FILE, catalog.heuristic_lookup().to_toml()),
        (PRESETS_FILE, presets_json()),
    ]
}

/// Generates a corpus and writes every artifact into `dir`.
pub fn write_corpus(catalog: &Catalog, spec: &CorpusSpec, dir: &Path) -> Result<CorpusFiles, CorpusError> {
    let corpus = generate(catalog, spec)?;
    fs::create_dir_all(dir)?;
    let files = CorpusFiles::new(dir);
    write_dataset(&corpus.tickets, &catalog.schema(), BufWriter::new(File::create(files.tickets())?))?;
    write_annotations(&corpus.annotations, BufWriter::new(File::create(files.context())?))?;
    for (name, body) in catalog_files(catalog) {
        fs::write(files.path(name), body)?;
    }
    oracle_embeddings(catalog, &corpus.tickets)?.save_binary(&files.oracle_embeddings())?;
    planted_embeddings(&corpus, PLANTED_DIMENSION, PLANTED_NOISE, spec.seed)?
        .save_binary(&files.planted_embeddings())?;
    let mut manifest = serde_json::to_string_pretty(spec).expect("spec serializes");
    manifest.push('\n');
    fs::write(files.path(SPEC_FILE), manifest)?;
    Ok(files)
}

#[cfg(test)]
mod tests {
    use std::collections::{BTreeMap, BTreeSet};

    use super::*;
    use crate::context::ContextLabel;

    fn small(seed: u64, ambiguity: f64) -> GeneratedCorpus {
        let spec = CorpusSpec { seed, size: 1000, ambiguity_rate: ambiguity, context_size: 400, ..Default::default() };
        generate(&Catalog::builtin(), &spec).unwrap()
    }

    #[test]
    fn deterministic_and_ordered() {
        let a = small(42, 0.3);
        assert_eq!(a, small(42, 0.3));
        assert_ne!(a.tickets, small(43, 0.3).tickets);
        assert!(a.tickets.windows(2).all(|w| w[0].timestamp < w[1].timestamp));
        let ids: BTreeSet<_> = a.tickets.iter().map(|t| &t.id).collect();
        assert_eq!(ids.len(), a.tickets.len());
        let map = Catalog::builtin().department_map();
        assert!(a.tickets.iter().all(|t| map.department_of(&t.reason) == Some(t.department.as_str())));
    }

    #[test]
    fn counts_follow_long_tail() {
        let c = class_counts(24, 5000, 1.0);
        assert_eq!(c.iter().sum::<usize>(), 5000);
        assert!(c.windows(2).all(|w| w[0] >= w[1]));
        let train_like: Vec<usize> = c.iter().map(|n| n * 8 / 10).collect();
        assert!(train_like.iter().filter(|&&n| n < 50).count() >= 2, "{c:?}");
        assert_eq!(class_counts(24, 24, 1.0), vec![1; 24]);
        let spec = CorpusSpec { size: 10, ..Default::default() };
        assert!(matches!(generate(&Catalog::builtin(), &spec), Err(CorpusError::TooSmall { .. })));
    }

    #[test]
    fn zero_ambiguity_gives_one_reason_per_text() {
        let c = small(7, 0.0);
        let mut by_text: BTreeMap<String, BTreeSet<&str>> = BTreeMap::new();
        for t in &c.tickets {
            let text = Catalog::builtin()
                .context
                .greetings
                .iter()
                .find_map(|g| t.message.strip_prefix(g.as_str()))
                .unwrap_or(&t.message)
                .to_owned();
            by_text.entry(text).or_default().insert(&t.reason);
        }
        assert!(by_text.values().all(|r| r.len() == 1));
        let shared = small(7, 1.0);
        let texts: BTreeMap<&str, BTreeSet<&str>> = shared.tickets.iter().fold(BTreeMap::new(), |mut m, t| {
            m.entry(t.message.as_str()).or_default().insert(t.reason.as_str());
            m
        });
        assert!(texts.values().any(|r| r.len() > 1));
    }

    #[test]
    fn annotations_use_all_labels() {
        let c = small(42, 0.3);
        let labels: BTreeSet<_> = c.annotations.iter().map(|a| a.label).collect();
        assert_eq!(labels.len(), ContextLabel::ALL.len());
        assert!(c.annotations.iter().any(|a| a.message == "oi" && a.label == ContextLabel::NoContext));
    }

    #[test]
    fn dataset_round_trip_and_errors() {
        let c = small(42, 0.3);
        let schema = Catalog::builtin().schema();
        let mut buf = Vec::new();
        write_dataset(&c.tickets, &schema, &mut buf).unwrap();
        assert_eq!(read_dataset(buf.as_slice()).unwrap(), c.tickets);

        let mut header_only = Vec::new();
        write_dataset(&[], &schema, &mut header_only).unwrap();
        assert!(read_dataset(header_only.as_slice()).unwrap().is_empty());

        let text = String::from_utf8(buf).unwrap();
        let cut = text.trim_end().rfind(',').unwrap();
        let truncated = &text[..cut];
        let lines = truncated.lines().count();
        match read_dataset(truncated.as_bytes()) {
            Err(CorpusError::Malformed { line, .. }) => assert_eq!(line, lines),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn embeddings_cover_every_ticket() {
        let c = small(42, 0.3);
        let cat = Catalog::builtin();
        let oracle = oracle_embeddings(&cat, &c.tickets).unwrap();
        assert_eq!(oracle.len(), c.tickets.len());
        let v = oracle.get(&c.tickets[0].id).unwrap();
        assert_eq!(v.iter().sum::<f32>(), 1.0);
        let planted = planted_embeddings(&c, PLANTED_DIMENSION, PLANTED_NOISE, 42).unwrap();
        assert_eq!(planted.dimension(), PLANTED_DIMENSION);
        assert_eq!(planted.len(), c.tickets.len());
    }

    #[test]
    fn committed_config_matches_generator() {
        let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("config");
        for (name, body) in catalog_files(&Catalog::builtin()) {
            if std::env::var_os("TRIAGE_BLESS").is_some() {
                fs::write(dir.join(name), &body).unwrap();
            }
            let committed = fs::read_to_string(dir.join(name)).unwrap_or_default();
            assert_eq!(committed, body, "config/{name} is stale; rerun with TRIAGE_BLESS=1");
        }
    }
}
