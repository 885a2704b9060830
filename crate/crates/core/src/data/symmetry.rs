use std::collections::{BTreeSet, HashSet};

use serde::{Deserialize, Serialize};

use super::{DataError, RelationId, Split, SplitSelector, Triple, TripleStore};

pub const DEFAULT_THRESHOLD: f64 = 0.5;

/// Per-relation symmetry statistics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RelationMeta {
    pub relation: RelationId,
    pub selector: SplitSelector,
    /// Triples of this relation within the selected split (the union as a set for `All`).
    pub total: usize,
    /// Triples whose reverse is present in the same selection. Reflexive triples count.
    pub symmetric_count: usize,
    pub ratio: f64,
    pub is_symmetric: bool,
    /// Raw per-split counts in train/valid/test order.
    pub split_totals: [usize; 3],
}

fn selected_set(store: &TripleStore, selector: SplitSelector) -> HashSet<Triple> {
    match selector {
        SplitSelector::Train => store.train().iter().copied().collect(),
        SplitSelector::Valid => store.valid().iter().copied().collect(),
        SplitSelector::Test => store.test().iter().copied().collect(),
        SplitSelector::All => Split::ALL
            .iter()
            .flat_map(|&s| store.split(s).iter().copied())
            .collect(),
    }
}

fn ratio(symmetric: usize, total: usize) -> f64 {
    if total == 0 {
        0.0
    } else {
        symmetric as f64 / total as f64
    }
}

fn check_threshold(threshold: f64) -> Result<(), DataError> {
    if (0.0..=1.0).contains(&threshold) {
        Ok(())
    } else {
        Err(DataError::InvalidThreshold(threshold))
    }
}

/// Statistics for every relation, in id order.
pub fn relation_meta(
    store: &TripleStore,
    selector: SplitSelector,
    threshold: f64,
) -> Result<Vec<RelationMeta>, DataError> {
    check_threshold(threshold)?;
    let n = store.relation_count();
    let mut totals = vec![0usize; n];
    let mut symmetric = vec![0usize; n];
    let set = selected_set(store, selector);
    for triple in &set {
        totals[triple.relation as usize] += 1;
        if set.contains(&triple.reversed()) {
            symmetric[triple.relation as usize] += 1;
        }
    }
    let mut split_totals = vec![[0usize; 3]; n];
    for split in Split::ALL {
        for triple in store.split(split) {
            split_totals[triple.relation as usize][split.index()] += 1;
        }
    }
    Ok((0..n)
        .map(|r| {
            let ratio = ratio(symmetric[r], totals[r]);
            RelationMeta {
                relation: r as RelationId,
                selector,
                total: totals[r],
                symmetric_count: symmetric[r],
                ratio,
                is_symmetric: ratio >= threshold,
                split_totals: split_totals[r],
            }
        })
        .collect())
}

/// Fraction of `relation`'s triples whose reverse is also present. Zero for an
/// empty relation.
pub fn symmetry_ratio(
    store: &TripleStore,
    relation: RelationId,
    selector: SplitSelector,
) -> Result<f64, DataError> {
    if relation as usize >= store.relation_count() {
        return Err(DataError::UnknownRelation(relation));
    }
    let set = selected_set(store, selector);
    let (mut total, mut sym) = (0usize, 0usize);
    for triple in set.iter().filter(|t| t.relation == relation) {
        total += 1;
        if set.contains(&triple.reversed()) {
            sym += 1;
        }
    }
    Ok(ratio(sym, total))
}

/// Relations with `ratio >= threshold`, in id order.
pub fn classify_symmetric(
    store: &TripleStore,
    threshold: f64,
    selector: SplitSelector,
) -> Result<Vec<RelationMeta>, DataError> {
    Ok(relation_meta(store, selector, threshold)?
        .into_iter()
        .filter(|m| m.is_symmetric)
        .collect())
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CompletionScope {
    TrainOnly,
    #[default]
    AllSplits,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CompletionOptions {
    pub scope: CompletionScope,
    /// Skip a reverse triple when it already lives in another split.
    pub leakage_guard: bool,
}

impl Default for CompletionOptions {
    fn default() -> Self {
        CompletionOptions {
            scope: CompletionScope::AllSplits,
            leakage_guard: true,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CompletionSummary {
    /// Added triples in train/valid/test order.
    pub added: [usize; 3],
    /// Reverses withheld because they exist in another split.
    pub skipped_by_guard: [usize; 3],
}

impl CompletionSummary {
    pub fn total_added(&self) -> usize {
        self.added.iter().sum()
    }
}

/// Appends the missing reverse `(t, r, h)` of every `(h, r, t)` whose relation
/// is in `symmetric`, split by split. Each split is completed against itself.
pub fn complete_symmetric(
    store: &TripleStore,
    symmetric: &BTreeSet<RelationId>,
    options: CompletionOptions,
) -> Result<(TripleStore, CompletionSummary), DataError> {
    if let Some(&bad) = symmetric
        .iter()
        .find(|&&r| r as usize >= store.relation_count())
    {
        return Err(DataError::UnknownRelation(bad));
    }
    let mut summary = CompletionSummary::default();
    let mut splits: [Vec<Triple>; 3] = Split::ALL.map(|s| store.split(s).to_vec());
    for split in Split::ALL {
        if options.scope == CompletionScope::TrainOnly && split != Split::Train {
            continue;
        }
        let mut additions = Vec::new();
        for triple in store.split(split) {
            if !symmetric.contains(&triple.relation) {
                continue;
            }
            let reverse = triple.reversed();
            if store.contains(split, &reverse) {
                continue;
            }
            let elsewhere = Split::ALL
                .iter()
                .any(|&other| other != split && store.contains(other, &reverse));
            if options.leakage_guard && elsewhere {
                summary.skipped_by_guard[split.index()] += 1;
                continue;
            }
            additions.push(reverse);
        }
        summary.added[split.index()] = additions.len();
        splits[split.index()].extend(additions);
    }
    Ok((store.with_splits(splits)?, summary))
}
