use std::collections::BTreeSet;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::symmetry::{complete_symmetric, relation_meta, CompletionOptions, RelationMeta};
use super::{DataError, RelationId, Split, SplitSelector, TripleStore};

/// Symmetric-triple counts for one split, before and after a projected completion.
///
/// `all` is ALL, `symmetric` is SYM‡ (triples whose reverse is in the same
/// split), `added_*` is SYM† (reverses a completion would add). Percentages
/// are `100·SYM‡/ALL` and `100·(SYM‡ + 2·SYM†)/(ALL + SYM†)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitStats {
    pub split: Split,
    pub all: usize,
    pub symmetric: usize,
    pub added_guarded: usize,
    pub added_unguarded: usize,
    pub percent_before: f64,
    pub percent_after_guarded: f64,
    pub percent_after_unguarded: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RelationRow {
    pub name: String,
    #[serde(flatten)]
    pub meta: RelationMeta,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StatsReport {
    pub entity_count: usize,
    pub relation_count: usize,
    pub threshold: f64,
    pub selector: SplitSelector,
    pub symmetric_relations: Vec<RelationId>,
    pub splits: Vec<SplitStats>,
    /// Sorted by ratio, descending; ties by relation id.
    pub relations: Vec<RelationRow>,
}

pub(crate) fn percent(numerator: usize, denominator: usize) -> f64 {
    if denominator == 0 {
        0.0
    } else {
        100.0 * numerator as f64 / denominator as f64
    }
}

/// `100·(SYM‡ + 2·SYM†)/(ALL + SYM†)`.
pub(crate) fn percent_after(all: usize, symmetric: usize, added: usize) -> f64 {
    percent(symmetric + 2 * added, all + added)
}

pub fn dataset_stats(
    store: &TripleStore,
    threshold: f64,
    selector: SplitSelector,
) -> Result<StatsReport, DataError> {
    let meta = relation_meta(store, selector, threshold)?;
    let symmetric: BTreeSet<RelationId> = meta
        .iter()
        .filter(|m| m.is_symmetric)
        .map(|m| m.relation)
        .collect();
    let (_, guarded) = complete_symmetric(store, &symmetric, CompletionOptions::default())?;
    let (_, unguarded) = complete_symmetric(
        store,
        &symmetric,
        CompletionOptions {
            leakage_guard: false,
            ..Default::default()
        },
    )?;

    let splits = Split::ALL
        .iter()
        .map(|&split| {
            let triples = store.split(split);
            let all = triples.len();
            let sym = triples
                .iter()
                .filter(|t| store.contains(split, &t.reversed()))
                .count();
            let added_guarded = guarded.added[split.index()];
            let added_unguarded = unguarded.added[split.index()];
            SplitStats {
                split,
                all,
                symmetric: sym,
                added_guarded,
                added_unguarded,
                percent_before: percent(sym, all),
                percent_after_guarded: percent_after(all, sym, added_guarded),
                percent_after_unguarded: percent_after(all, sym, added_unguarded),
            }
        })
        .collect();

    let mut relations: Vec<RelationRow> = meta
        .into_iter()
        .map(|m| RelationRow {
            name: store.relations().name(m.relation).unwrap_or("?").to_owned(),
            meta: m,
        })
        .collect();
    relations.sort_by(|a, b| {
        b.meta
            .ratio
            .total_cmp(&a.meta.ratio)
            .then(a.meta.relation.cmp(&b.meta.relation))
    });

    Ok(StatsReport {
        entity_count: store.entity_count(),
        relation_count: store.relation_count(),
        threshold,
        selector,
        symmetric_relations: symmetric.into_iter().collect(),
        splits,
        relations,
    })
}

impl StatsReport {
    fn split(&self, split: Split) -> Option<&SplitStats> {
        self.splits.iter().find(|s| s.split == split)
    }

    /// Aligned plain-text rendering: a dataset summary block followed by the
    /// per-relation symmetry table.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let order = [Split::Train, Split::Test, Split::Valid];
        let join = |f: &dyn Fn(&SplitStats) -> String| {
            order
                .iter()
                .filter_map(|&s| self.split(s))
                .map(f)
                .collect::<Vec<_>>()
                .join("/")
        };
        let _ = writeln!(
            out,
            "{:<10} {:>10} {:>10}  {:<24} {:<20} {:<24} {:<24}",
            "", "entities", "relations", "train/test/valid", "sym%", "sym%+completion", "sym%+completion(open)"
        );
        let _ = writeln!(
            out,
            "{:<10} {:>10} {:>10}  {:<24} {:<20} {:<24} {:<24}",
            "dataset",
            self.entity_count,
            self.relation_count,
            join(&|s| s.all.to_string()),
            join(&|s| format!("{:.2}", s.percent_before)),
            join(&|s| format!("{:.2}", s.percent_after_guarded)),
            join(&|s| format!("{:.2}", s.percent_after_unguarded)),
        );
        let _ = writeln!(out);
        let _ = writeln!(
            out,
            "{:<6} {:>10} {:>10} {:>10} {:>10} {:>10} {:>10} {:>10}",
            "split", "ALL", "SYM", "pct", "added", "pct_after", "added_open", "pct_open"
        );
        for s in order.iter().filter_map(|&s| self.split(s)) {
            let _ = writeln!(
                out,
                "{:<6} {:>10} {:>10} {:>10.2} {:>10} {:>10.2} {:>10} {:>10.2}",
                s.split.name(),
                s.all,
                s.symmetric,
                s.percent_before,
                s.added_guarded,
                s.percent_after_guarded,
                s.added_unguarded,
                s.percent_after_unguarded
            );
        }
        let _ = writeln!(out);
        let width = self
            .relations
            .iter()
            .map(|r| r.name.len())
            .max()
            .unwrap_or(8)
            .max(8);
        let _ = writeln!(
            out,
            "{:<width$} {:>10} {:>10} {:>8}  {}",
            "relation",
            "SYM",
            "ALL",
            "ratio",
            format_args!("symmetric(>={}, {})", self.threshold, self.selector),
        );
        for row in &self.relations {
            let _ = writeln!(
                out,
                "{:<width$} {:>10} {:>10} {:>8.3}  {}",
                row.name,
                row.meta.symmetric_count,
                row.meta.total,
                row.meta.ratio,
                if row.meta.is_symmetric { "yes" } else { "no" }
            );
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ten_triples_four_mutual_reverses_is_forty_percent() {
        // Two reverse pairs (4 triples) plus 6 triples without reverses.
        let train = [
            ("a", "r", "b"),
            ("b", "r", "a"),
            ("c", "r", "d"),
            ("d", "r", "c"),
            ("a", "r", "c"),
            ("a", "r", "d"),
            ("b", "r", "c"),
            ("e", "r", "a"),
            ("e", "q", "b"),
            ("b", "q", "d"),
        ];
        let store = TripleStore::from_named(&train, &[], &[]).unwrap();
        let report = dataset_stats(&store, 0.5, SplitSelector::Train).unwrap();
        let train = report.split(Split::Train).unwrap();
        assert_eq!(train.all, 10);
        assert_eq!(train.symmetric, 4);
        assert!((train.percent_before - 40.0).abs() < 1e-12);
        // r: 4 of 8 symmetric -> ratio 0.5 -> symmetric; 4 missing reverses.
        assert_eq!(report.symmetric_relations, vec![0]);
        assert_eq!(train.added_guarded, 4);
        assert!((train.percent_after_guarded - 100.0 * 12.0 / 14.0).abs() < 1e-12);
    }

    #[test]
    fn empty_store_has_zero_percentages() {
        let store = TripleStore::new(
            Default::default(),
            Default::default(),
            vec![],
            vec![],
            vec![],
        )
        .unwrap();
        let report = dataset_stats(&store, 0.5, SplitSelector::All).unwrap();
        assert!(report.relations.is_empty());
        for s in &report.splits {
            assert_eq!(s.percent_before, 0.0);
            assert_eq!(s.percent_after_guarded, 0.0);
        }
        assert!(report.to_text().contains("dataset"));
    }

    #[test]
    fn relation_rows_sorted_by_ratio_descending() {
        let store = TripleStore::from_named(
            &[
                ("a", "low", "b"),
                ("a", "high", "b"),
                ("b", "high", "a"),
                ("a", "mid", "b"),
                ("b", "mid", "a"),
                ("a", "mid", "c"),
            ],
            &[],
            &[],
        )
        .unwrap();
        let report = dataset_stats(&store, 0.5, SplitSelector::All).unwrap();
        let names: Vec<&str> = report.relations.iter().map(|r| r.name.as_str()).collect();
        assert_eq!(names, ["high", "mid", "low"]);
        let text = report.to_text();
        assert!(text.contains("high"));
        let json = serde_json::to_value(&report).unwrap();
        assert_eq!(json["relations"][0]["name"], "high");
        assert_eq!(json["relations"][0]["symmetric_count"], 2);
    }
}
