use std::collections::HashSet;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{DataError, Split, Triple, TripleStore, Vocab};

/// On-disk triple layout.
///
/// - `Names`: one `head relation tail` line per triple, fields separated by any
///   run of tabs or spaces (written with single tabs).
/// - `Ids`: a count line followed by `head tail relation` integer lines, with
///   `entity2id.txt` / `relation2id.txt` maps next to the train file.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TripleFormat {
    #[default]
    Names,
    Ids,
}

impl TripleFormat {
    /// File names used inside a dataset directory, in train/valid/test order.
    pub fn split_file_names(self) -> [&'static str; 3] {
        match self {
            TripleFormat::Names => ["train.txt", "valid.txt", "test.txt"],
            TripleFormat::Ids => ["train2id.txt", "valid2id.txt", "test2id.txt"],
        }
    }
}

fn read(path: &Path) -> Result<String, DataError> {
    fs::read_to_string(path).map_err(|source| DataError::Io {
        path: path.to_owned(),
        source,
    })
}

fn malformed(path: &Path, line: usize, reason: impl Into<String>) -> DataError {
    DataError::Malformed {
        path: path.to_owned(),
        line,
        reason: reason.into(),
    }
}

/// Loads a dataset directory holding the three split files for `format`.
pub fn load_dataset_dir(dir: &Path, format: TripleFormat) -> Result<TripleStore, DataError> {
    let [train, valid, test] = format.split_file_names().map(|name| dir.join(name));
    load_triples(&train, &valid, &test, format)
}

/// Loads and validates the three splits.
pub fn load_triples(
    train_path: &Path,
    valid_path: &Path,
    test_path: &Path,
    format: TripleFormat,
) -> Result<TripleStore, DataError> {
    let paths = [train_path, valid_path, test_path];
    match format {
        TripleFormat::Names => load_names(paths),
        TripleFormat::Ids => load_ids(paths),
    }
}

fn load_names(paths: [&Path; 3]) -> Result<TripleStore, DataError> {
    let mut entities = Vocab::new();
    let mut relations = Vocab::new();
    let mut splits: [Vec<Triple>; 3] = Default::default();
    for (split, path) in Split::ALL.into_iter().zip(paths) {
        let text = read(path)?;
        let mut seen = HashSet::new();
        let out = &mut splits[split.index()];
        for (lineno, line) in text.lines().enumerate().map(|(i, l)| (i + 1, l)) {
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields.len() != 3 {
                return Err(malformed(
                    path,
                    lineno,
                    format!("expected 3 fields, found {}", fields.len()),
                ));
            }
            let triple = Triple::new(
                entities.get_or_insert(fields[0]),
                relations.get_or_insert(fields[1]),
                entities.get_or_insert(fields[2]),
            );
            if !seen.insert(triple) {
                return Err(DataError::DuplicateLine {
                    path: path.to_owned(),
                    line: lineno,
                    head: fields[0].to_owned(),
                    relation: fields[1].to_owned(),
                    tail: fields[2].to_owned(),
                });
            }
            out.push(triple);
        }
    }
    let [train, valid, test] = splits;
    TripleStore::new(entities, relations, train, valid, test)
}

/// Parses an `entity2id` / `relation2id` map. A leading single-integer line is
/// taken as the entry count.
fn load_id_map(path: &Path) -> Result<Vocab, DataError> {
    let text = read(path)?;
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l))
        .filter(|(_, l)| !l.trim().is_empty())
        .peekable();
    let mut declared = None;
    if let Some(&(_, first)) = lines.peek() {
        let fields: Vec<&str> = first.split_whitespace().collect();
        if fields.len() == 1 {
            declared = Some(fields[0].parse::<usize>().map_err(|_| {
                malformed(path, 1, format!("expected entry count, found `{}`", fields[0]))
            })?);
            lines.next();
        }
    }
    let mut entries: Vec<Option<String>> = Vec::new();
    let mut count = 0usize;
    for (lineno, line) in lines {
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 2 {
            return Err(malformed(
                path,
                lineno,
                format!("expected `name id`, found {} fields", fields.len()),
            ));
        }
        let id: usize = fields[1]
            .parse()
            .map_err(|_| malformed(path, lineno, format!("non-integer id `{}`", fields[1])))?;
        if entries.len() <= id {
            entries.resize(id + 1, None);
        }
        if entries[id].is_some() {
            return Err(malformed(path, lineno, format!("id {id} assigned twice")));
        }
        entries[id] = Some(fields[0].to_owned());
        count += 1;
    }
    if let Some(n) = declared {
        if n != count {
            return Err(malformed(
                path,
                1,
                format!("declared {n} entries, found {count}"),
            ));
        }
    }
    let mut vocab = Vocab::new();
    for (id, name) in entries.into_iter().enumerate() {
        let name = name.ok_or_else(|| malformed(path, 0, format!("id {id} is never assigned")))?;
        if vocab.get_or_insert(&name) as usize != id {
            return Err(malformed(path, 0, format!("name `{name}` mapped twice")));
        }
    }
    Ok(vocab)
}

fn load_ids(paths: [&Path; 3]) -> Result<TripleStore, DataError> {
    let dir = paths[0].parent().unwrap_or_else(|| Path::new("."));
    let entities = load_id_map(&dir.join("entity2id.txt"))?;
    let relations = load_id_map(&dir.join("relation2id.txt"))?;
    let mut splits: [Vec<Triple>; 3] = Default::default();
    for (split, path) in Split::ALL.into_iter().zip(paths) {
        let text = read(path)?;
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l))
            .filter(|(_, l)| !l.trim().is_empty());
        let declared = match lines.next() {
            None => 0,
            Some((lineno, line)) => line.trim().parse::<usize>().map_err(|_| {
                malformed(path, lineno, format!("expected triple count, found `{}`", line.trim()))
            })?,
        };
        let mut seen = HashSet::new();
        let out = &mut splits[split.index()];
        for (lineno, line) in lines {
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields.len() != 3 {
                return Err(malformed(
                    path,
                    lineno,
                    format!("expected 3 fields, found {}", fields.len()),
                ));
            }
            let mut ids = [0u64; 3];
            for (slot, field) in ids.iter_mut().zip(&fields) {
                *slot = field
                    .parse()
                    .map_err(|_| malformed(path, lineno, format!("non-integer id `{field}`")))?;
            }
            let [head, tail, relation] = ids;
            let check = |id: u64, kind: &'static str, limit: usize| {
                if id as usize >= limit {
                    Err(DataError::IdOutOfRange {
                        path: path.to_owned(),
                        line: lineno,
                        kind,
                        id,
                        limit,
                    })
                } else {
                    Ok(id as u32)
                }
            };
            let triple = Triple::new(
                check(head, "entity", entities.len())?,
                check(relation, "relation", relations.len())?,
                check(tail, "entity", entities.len())?,
            );
            if !seen.insert(triple) {
                return Err(DataError::DuplicateLine {
                    path: path.to_owned(),
                    line: lineno,
                    head: fields[0].to_owned(),
                    relation: fields[2].to_owned(),
                    tail: fields[1].to_owned(),
                });
            }
            out.push(triple);
        }
        if out.len() != declared {
            return Err(malformed(
                path,
                1,
                format!("declared {declared} triples, found {}", out.len()),
            ));
        }
    }
    let [train, valid, test] = splits;
    TripleStore::new(entities, relations, train, valid, test)
}

/// Writes triples in the `names` format (tab separated, LF terminated).
pub fn write_named_triples<W: Write>(
    mut out: W,
    triples: &[Triple],
    store: &TripleStore,
) -> std::io::Result<()> {
    for triple in triples {
        let (h, r, t) = store.names_of(triple);
        writeln!(out, "{h}\t{r}\t{t}")?;
    }
    out.flush()
}

/// Writes `train.txt`, `valid.txt` and `test.txt` under `dir`.
pub fn write_dataset_dir(store: &TripleStore, dir: &Path) -> Result<[PathBuf; 3], DataError> {
    let io_err = |path: &Path| {
        let path = path.to_owned();
        move |source| DataError::Io { path, source }
    };
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let names = TripleFormat::Names.split_file_names();
    let mut written: [PathBuf; 3] = Default::default();
    for split in Split::ALL {
        let path = dir.join(names[split.index()]);
        let file = fs::File::create(&path).map_err(io_err(&path))?;
        write_named_triples(BufWriter::new(file), store.split(split), store)
            .map_err(io_err(&path))?;
        written[split.index()] = path;
    }
    Ok(written)
}

/// Reads a `names`-format list resolved against an existing store's
/// vocabularies. Duplicates are kept.
pub fn load_named_triples(path: &Path, store: &TripleStore) -> Result<Vec<Triple>, DataError> {
    let text = read(path)?;
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate().map(|(i, l)| (i + 1, l)) {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 3 {
            return Err(malformed(
                path,
                lineno,
                format!("expected 3 fields, found {}", fields.len()),
            ));
        }
        let unknown = |kind: &'static str, name: &str| DataError::UnknownName {
            path: path.to_owned(),
            line: lineno,
            kind,
            name: name.to_owned(),
        };
        let head = store
            .entities()
            .id(fields[0])
            .ok_or_else(|| unknown("entity", fields[0]))?;
        let relation = store
            .relations()
            .id(fields[1])
            .ok_or_else(|| unknown("relation", fields[1]))?;
        let tail = store
            .entities()
            .id(fields[2])
            .ok_or_else(|| unknown("entity", fields[2]))?;
        out.push(Triple::new(head, relation, tail));
    }
    Ok(out)
}
