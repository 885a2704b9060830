//! Triple datasets: vocabularies, splits, symmetry analysis and completion.

mod circle;
mod io;
mod stats;
mod symmetry;
pub mod synthetic;

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use circle::generate_circle_set;
pub use io::{
    load_dataset_dir, load_named_triples, load_triples, write_dataset_dir, write_named_triples,
    TripleFormat,
};
pub use stats::{dataset_stats, SplitStats, StatsReport};
pub use symmetry::{
    classify_symmetric, complete_symmetric, relation_meta, symmetry_ratio, CompletionOptions,
    CompletionScope, CompletionSummary, RelationMeta, DEFAULT_THRESHOLD,
};

pub type EntityId = u32;
pub type RelationId = u32;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("I/O error on {}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{}:{line}: {reason}", path.display())]
    Malformed {
        path: PathBuf,
        line: usize,
        reason: String,
    },
    #[error("{}:{line}: {kind} id {id} out of range (vocabulary size {limit})", path.display())]
    IdOutOfRange {
        path: PathBuf,
        line: usize,
        kind: &'static str,
        id: u64,
        limit: usize,
    },
    #[error("{}:{line}: duplicate triple ({head}, {relation}, {tail})", path.display())]
    DuplicateLine {
        path: PathBuf,
        line: usize,
        head: String,
        relation: String,
        tail: String,
    },
    #[error("{}:{line}: unknown {kind} `{name}`", path.display())]
    UnknownName {
        path: PathBuf,
        line: usize,
        kind: &'static str,
        name: String,
    },
    #[error("duplicate triple {triple} at position {index} of the {split} split")]
    DuplicateTriple {
        split: Split,
        index: usize,
        triple: Triple,
    },
    #[error("triple {triple} in the {split} split references ids outside the vocabularies")]
    DanglingTriple { split: Split, triple: Triple },
    #[error("unknown relation id {0}")]
    UnknownRelation(RelationId),
    #[error("threshold must lie in [0, 1], got {0}")]
    InvalidThreshold(f64),
    #[error("symmetric relation set is empty")]
    EmptySymmetricSet,
    #[error("requested circle set size must be at least 1")]
    EmptyCircleRequest,
    #[error("store has no entities")]
    NoEntities,
}

/// An integer-encoded `(head, relation, tail)` fact.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Triple {
    pub head: EntityId,
    pub relation: RelationId,
    pub tail: EntityId,
}

impl Triple {
    pub const fn new(head: EntityId, relation: RelationId, tail: EntityId) -> Self {
        Triple {
            head,
            relation,
            tail,
        }
    }

    /// `(t, r, h)` for `(h, r, t)`.
    pub const fn reversed(self) -> Self {
        Triple::new(self.tail, self.relation, self.head)
    }

    pub const fn is_reflexive(self) -> bool {
        self.head == self.tail
    }
}

impl fmt::Display for Triple {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}, {})", self.head, self.relation, self.tail)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Valid,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Valid, Split::Test];

    pub const fn index(self) -> usize {
        match self {
            Split::Train => 0,
            Split::Valid => 1,
            Split::Test => 2,
        }
    }

    pub const fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Valid => "valid",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Which triples a symmetry statistic is computed over.
///
/// `All` treats the union of the three splits as a set.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitSelector {
    Train,
    Valid,
    Test,
    #[default]
    All,
}

impl From<Split> for SplitSelector {
    fn from(split: Split) -> Self {
        match split {
            Split::Train => SplitSelector::Train,
            Split::Valid => SplitSelector::Valid,
            Split::Test => SplitSelector::Test,
        }
    }
}

impl fmt::Display for SplitSelector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SplitSelector::Train => "train",
            SplitSelector::Valid => "valid",
            SplitSelector::Test => "test",
            SplitSelector::All => "all",
        })
    }
}

/// Bidirectional name <-> id map. Ids are dense and assigned in insertion order.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Vocab {
    names: Vec<String>,
    index: HashMap<String, u32>,
}

impl Vocab {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_names<I, S>(names: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut vocab = Vocab::new();
        for name in names {
            vocab.get_or_insert(&name.into());
        }
        vocab
    }

    pub fn get_or_insert(&mut self, name: &str) -> u32 {
        if let Some(&id) = self.index.get(name) {
            return id;
        }
        let id = self.names.len() as u32;
        self.names.push(name.to_owned());
        self.index.insert(name.to_owned(), id);
        id
    }

    pub fn id(&self, name: &str) -> Option<u32> {
        self.index.get(name).copied()
    }

    pub fn name(&self, id: u32) -> Option<&str> {
        self.names.get(id as usize).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }
}

/// A validated dataset: vocabularies plus train/valid/test triple lists.
///
/// Immutable after construction. Operations that change the triples return a
/// new store.
#[derive(Clone, Debug)]
pub struct TripleStore {
    entities: Vocab,
    relations: Vocab,
    splits: [Vec<Triple>; 3],
    index: [HashSet<Triple>; 3],
}

impl TripleStore {
    /// Builds a store, rejecting dangling ids and duplicates within a split.
    pub fn new(
        entities: Vocab,
        relations: Vocab,
        train: Vec<Triple>,
        valid: Vec<Triple>,
        test: Vec<Triple>,
    ) -> Result<Self, DataError> {
        let splits = [train, valid, test];
        let mut index: [HashSet<Triple>; 3] = Default::default();
        for split in Split::ALL {
            let list = &splits[split.index()];
            let set = &mut index[split.index()];
            set.reserve(list.len());
            for (i, &triple) in list.iter().enumerate() {
                if triple.head as usize >= entities.len()
                    || triple.tail as usize >= entities.len()
                    || triple.relation as usize >= relations.len()
                {
                    return Err(DataError::DanglingTriple { split, triple });
                }
                if !set.insert(triple) {
                    return Err(DataError::DuplicateTriple {
                        split,
                        index: i,
                        triple,
                    });
                }
            }
        }
        Ok(TripleStore {
            entities,
            relations,
            splits,
            index,
        })
    }

    /// Builds a store from name-level triples, assigning ids in order of first
    /// appearance across train, valid, test.
    pub fn from_named<S: AsRef<str>>(
        train: &[(S, S, S)],
        valid: &[(S, S, S)],
        test: &[(S, S, S)],
    ) -> Result<Self, DataError> {
        let mut entities = Vocab::new();
        let mut relations = Vocab::new();
        let mut encode = |list: &[(S, S, S)]| -> Vec<Triple> {
            list.iter()
                .map(|(h, r, t)| {
                    let head = entities.get_or_insert(h.as_ref());
                    let relation = relations.get_or_insert(r.as_ref());
                    let tail = entities.get_or_insert(t.as_ref());
                    Triple::new(head, relation, tail)
                })
                .collect()
        };
        let train = encode(train);
        let valid = encode(valid);
        let test = encode(test);
        TripleStore::new(entities, relations, train, valid, test)
    }

    pub fn entities(&self) -> &Vocab {
        &self.entities
    }

    pub fn relations(&self) -> &Vocab {
        &self.relations
    }

    pub fn entity_count(&self) -> usize {
        self.entities.len()
    }

    pub fn relation_count(&self) -> usize {
        self.relations.len()
    }

    pub fn split(&self, split: Split) -> &[Triple] {
        &self.splits[split.index()]
    }

    pub fn train(&self) -> &[Triple] {
        self.split(Split::Train)
    }

    pub fn valid(&self) -> &[Triple] {
        self.split(Split::Valid)
    }

    pub fn test(&self) -> &[Triple] {
        self.split(Split::Test)
    }

    pub fn contains(&self, split: Split, triple: &Triple) -> bool {
        self.index[split.index()].contains(triple)
    }

    /// Membership in any of the three splits.
    pub fn contains_any(&self, triple: &Triple) -> bool {
        self.index.iter().any(|set| set.contains(triple))
    }

    pub fn total_triples(&self) -> usize {
        self.splits.iter().map(Vec::len).sum()
    }

    /// Renders a triple with vocabulary names.
    pub fn names_of(&self, triple: &Triple) -> (&str, &str, &str) {
        (
            self.entities.name(triple.head).unwrap_or("?"),
            self.relations.name(triple.relation).unwrap_or("?"),
            self.entities.name(triple.tail).unwrap_or("?"),
        )
    }

    /// Rebuilds the membership index from the lists and compares.
    pub fn index_is_consistent(&self) -> bool {
        Split::ALL.iter().all(|&split| {
            let rebuilt: HashSet<Triple> = self.split(split).iter().copied().collect();
            rebuilt.len() == self.split(split).len() && rebuilt == self.index[split.index()]
        })
    }

    pub(crate) fn with_splits(&self, splits: [Vec<Triple>; 3]) -> Result<Self, DataError> {
        let [train, valid, test] = splits;
        TripleStore::new(
            self.entities.clone(),
            self.relations.clone(),
            train,
            valid,
            test,
        )
    }
}
