//! Link-prediction ranking and the circle-triple diagnostic.
//!
//! Ranks use the mean-rank tie convention: with `b` candidates scoring
//! strictly better than the true entity and `q` other candidates scoring
//! equal to it, the rank is `1 + b + ceil(q / 2)`.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{EntityId, RelationId, Split, Triple, TripleStore};
use crate::models::{ModelError, ModelParams, Norm, Scratch};

pub const HITS_AT: [usize; 3] = [1, 3, 10];

#[derive(Debug, Error)]
pub enum EvalError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("model has {model} entities but the dataset has {dataset}")]
    EntityCountMismatch { model: usize, dataset: usize },
    #[error("model has {model} relations but the dataset has {dataset}")]
    RelationCountMismatch { model: usize, dataset: usize },
    #[error("circle set is empty")]
    EmptyCircleSet,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EvalMode {
    Raw,
    #[default]
    Filtered,
}

impl EvalMode {
    pub fn name(self) -> &'static str {
        match self {
            EvalMode::Raw => "raw",
            EvalMode::Filtered => "filtered",
        }
    }
}

/// Rank of `scores[truth]` among all entries, skipping candidates for which
/// `skip` holds. The true entry itself is never skipped.
pub fn rank_of(scores: &[f64], truth: usize, mut skip: impl FnMut(usize) -> bool) -> usize {
    let target = scores[truth];
    let mut better = 0usize;
    let mut equal = 0usize;
    for (i, &s) in scores.iter().enumerate() {
        if i == truth || skip(i) {
            continue;
        }
        if s < target {
            better += 1;
        } else if s == target {
            equal += 1;
        }
    }
    1 + better + equal.div_ceil(2)
}

/// Known true heads and tails over train ∪ valid ∪ test.
#[derive(Clone, Debug, Default)]
pub struct FilterIndex {
    tails: HashMap<(EntityId, RelationId), Vec<EntityId>>,
    heads: HashMap<(RelationId, EntityId), Vec<EntityId>>,
}

impl FilterIndex {
    pub fn new(store: &TripleStore) -> Self {
        let mut index = FilterIndex::default();
        for split in Split::ALL {
            for t in store.split(split) {
                index.tails.entry((t.head, t.relation)).or_default().push(t.tail);
                index.heads.entry((t.relation, t.tail)).or_default().push(t.head);
            }
        }
        for v in index.tails.values_mut().chain(index.heads.values_mut()) {
            v.sort_unstable();
            v.dedup();
        }
        index
    }

    pub fn known_tails(&self, head: EntityId, relation: RelationId) -> &[EntityId] {
        self.tails.get(&(head, relation)).map_or(&[], Vec::as_slice)
    }

    pub fn known_heads(&self, relation: RelationId, tail: EntityId) -> &[EntityId] {
        self.heads.get(&(relation, tail)).map_or(&[], Vec::as_slice)
    }
}

/// Filtered rank from the raw counts: known true candidates other than the
/// truth are removed from the better/equal tallies.
fn rank_excluding(scores: &[f64], truth: usize, known: &[EntityId]) -> usize {
    let target = scores[truth];
    let mut better = 0usize;
    let mut equal = 0usize;
    for &s in scores {
        if s < target {
            better += 1;
        } else if s == target {
            equal += 1;
        }
    }
    equal -= 1;
    for &k in known {
        let k = k as usize;
        if k == truth {
            continue;
        }
        let s = scores[k];
        if s < target {
            better -= 1;
        } else if s == target {
            equal -= 1;
        }
    }
    1 + better + equal.div_ceil(2)
}

/// Scores all corruptions of test triples against one parameter snapshot.
pub struct Evaluator<'a> {
    params: &'a ModelParams,
    norm: Norm,
    filter: Option<FilterIndex>,
}

impl<'a> Evaluator<'a> {
    pub fn new(
        params: &'a ModelParams,
        store: &TripleStore,
        norm: Norm,
        mode: EvalMode,
    ) -> Result<Self, EvalError> {
        check_shapes(params, store)?;
        Ok(Evaluator {
            params,
            norm,
            filter: match mode {
                EvalMode::Raw => None,
                EvalMode::Filtered => Some(FilterIndex::new(store)),
            },
        })
    }

    pub fn mode(&self) -> EvalMode {
        if self.filter.is_some() {
            EvalMode::Filtered
        } else {
            EvalMode::Raw
        }
    }

    fn rank_with(
        &self,
        triple: &Triple,
        scores: &mut [f64],
        scratch: &mut Scratch,
    ) -> (usize, usize) {
        let Triple {
            head,
            relation,
            tail,
        } = *triple;
        self.params
            .score_heads(relation, tail, self.norm, scores, scratch);
        let head_rank = match &self.filter {
            None => rank_excluding(scores, head as usize, &[]),
            Some(f) => rank_excluding(scores, head as usize, f.known_heads(relation, tail)),
        };
        self.params
            .score_tails(head, relation, self.norm, scores, scratch);
        let tail_rank = match &self.filter {
            None => rank_excluding(scores, tail as usize, &[]),
            Some(f) => rank_excluding(scores, tail as usize, f.known_tails(head, relation)),
        };
        (head_rank, tail_rank)
    }

    /// `(head_rank, tail_rank)` of one triple.
    pub fn rank(&self, triple: &Triple) -> Result<(usize, usize), EvalError> {
        self.params.check_triple(triple)?;
        let mut scores = vec![0.0; self.params.entity_count()];
        let mut scratch = Scratch::new(self.params.dim());
        Ok(self.rank_with(triple, &mut scores, &mut scratch))
    }

    /// Ranks of every triple, in input order. Triples are sharded across
    /// `workers` threads; the result does not depend on the worker count.
    pub fn rank_all(
        &self,
        triples: &[Triple],
        workers: usize,
    ) -> Result<Vec<(usize, usize)>, EvalError> {
        for t in triples {
            self.params.check_triple(t)?;
        }
        let workers = workers.max(1).min(triples.len().max(1));
        let shard = triples.len().div_ceil(workers).max(1);
        let run = |chunk: &[Triple]| {
            let mut scores = vec![0.0; self.params.entity_count()];
            let mut scratch = Scratch::new(self.params.dim());
            chunk
                .iter()
                .map(|t| self.rank_with(t, &mut scores, &mut scratch))
                .collect::<Vec<_>>()
        };
        if workers == 1 {
            return Ok(run(triples));
        }
        let parts: Vec<Vec<(usize, usize)>> = std::thread::scope(|s| {
            let handles: Vec<_> = triples
                .chunks(shard)
                .map(|chunk| s.spawn(move || run(chunk)))
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("evaluation worker panicked"))
                .collect()
        });
        Ok(parts.into_iter().flatten().collect())
    }
}

fn check_shapes(params: &ModelParams, store: &TripleStore) -> Result<(), EvalError> {
    if params.entity_count() != store.entity_count() {
        return Err(EvalError::EntityCountMismatch {
            model: params.entity_count(),
            dataset: store.entity_count(),
        });
    }
    if params.relation_count() != store.relation_count() {
        return Err(EvalError::RelationCountMismatch {
            model: params.relation_count(),
            dataset: store.relation_count(),
        });
    }
    Ok(())
}

pub fn rank_triple(
    params: &ModelParams,
    triple: &Triple,
    store: &TripleStore,
    mode: EvalMode,
    norm: Norm,
) -> Result<(usize, usize), EvalError> {
    Evaluator::new(params, store, norm, mode)?.rank(triple)
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RankMetrics {
    /// Number of ranks pooled (two per evaluated triple).
    pub ranks: usize,
    pub mr: f64,
    pub mrr: f64,
    /// `K -> fraction of ranks <= K`.
    pub hits: BTreeMap<usize, f64>,
}

impl RankMetrics {
    pub fn from_ranks(ranks: &[usize]) -> Self {
        let n = ranks.len();
        if n == 0 {
            return RankMetrics {
                hits: HITS_AT.iter().map(|&k| (k, 0.0)).collect(),
                ..Default::default()
            };
        }
        let nf = n as f64;
        RankMetrics {
            ranks: n,
            mr: ranks.iter().map(|&r| r as f64).sum::<f64>() / nf,
            mrr: ranks.iter().map(|&r| 1.0 / r as f64).sum::<f64>() / nf,
            hits: HITS_AT
                .iter()
                .map(|&k| (k, ranks.iter().filter(|&&r| r <= k).count() as f64 / nf))
                .collect(),
        }
    }

    pub fn hits_at(&self, k: usize) -> f64 {
        self.hits.get(&k).copied().unwrap_or(0.0)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RelationMetrics {
    pub relation: RelationId,
    pub name: String,
    pub triples: usize,
    #[serde(flatten)]
    pub metrics: RankMetrics,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub mode: EvalMode,
    pub triples: usize,
    #[serde(flatten)]
    pub metrics: RankMetrics,
    pub per_relation: Vec<RelationMetrics>,
}

impl EvalReport {
    pub fn mr(&self) -> f64 {
        self.metrics.mr
    }

    pub fn mrr(&self) -> f64 {
        self.metrics.mrr
    }

    pub fn hits_at(&self, k: usize) -> f64 {
        self.metrics.hits_at(k)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "link prediction ({}, {} triples)", self.mode.name(), self.triples);
        let width = self
            .per_relation
            .iter()
            .map(|r| r.name.len())
            .max()
            .unwrap_or(0)
            .max("relation".len())
            .max("all".len());
        let _ = writeln!(
            out,
            "{:<width$}  {:>7}  {:>10}  {:>6}  {:>6}  {:>6}  {:>6}",
            "relation", "triples", "MR", "MRR", "H10", "H3", "H1"
        );
        let mut row = |name: &str, triples: usize, m: &RankMetrics| {
            let _ = writeln!(
                out,
                "{:<width$}  {:>7}  {:>10.3}  {:>6.3}  {:>6.3}  {:>6.3}  {:>6.3}",
                name,
                triples,
                m.mr,
                m.mrr,
                m.hits_at(10),
                m.hits_at(3),
                m.hits_at(1)
            );
        };
        row("all", self.triples, &self.metrics);
        for r in &self.per_relation {
            row(&r.name, r.triples, &r.metrics);
        }
        out
    }
}

fn relation_name(store: &TripleStore, r: RelationId) -> String {
    store
        .relations()
        .name(r)
        .map(str::to_owned)
        .unwrap_or_else(|| format!("r{r}"))
}

/// Pools head and tail ranks of every triple in `triples`.
pub fn link_prediction(
    params: &ModelParams,
    triples: &[Triple],
    store: &TripleStore,
    mode: EvalMode,
    norm: Norm,
    workers: usize,
) -> Result<EvalReport, EvalError> {
    let evaluator = Evaluator::new(params, store, norm, mode)?;
    let ranks = evaluator.rank_all(triples, workers)?;
    Ok(report_from_ranks(triples, &ranks, store, mode))
}

pub fn report_from_ranks(
    triples: &[Triple],
    ranks: &[(usize, usize)],
    store: &TripleStore,
    mode: EvalMode,
) -> EvalReport {
    let mut pooled = Vec::with_capacity(2 * ranks.len());
    let mut by_relation: BTreeMap<RelationId, Vec<usize>> = BTreeMap::new();
    for (t, &(h, tl)) in triples.iter().zip(ranks) {
        pooled.extend([h, tl]);
        by_relation.entry(t.relation).or_default().extend([h, tl]);
    }
    EvalReport {
        mode,
        triples: triples.len(),
        metrics: RankMetrics::from_ranks(&pooled),
        per_relation: by_relation
            .into_iter()
            .map(|(r, ranks)| RelationMetrics {
                relation: r,
                name: relation_name(store, r),
                triples: ranks.len() / 2,
                metrics: RankMetrics::from_ranks(&ranks),
            })
            .collect(),
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CircleStats {
    pub count: usize,
    pub mean_score: f64,
    pub mean_rank: f64,
    pub mrr: f64,
    pub fraction_rank1: f64,
    pub hits: BTreeMap<usize, f64>,
}

impl CircleStats {
    fn from_pairs(pairs: &[(f64, usize)]) -> Self {
        let ranks: Vec<usize> = pairs.iter().map(|p| p.1).collect();
        let m = RankMetrics::from_ranks(&ranks);
        let n = pairs.len().max(1) as f64;
        CircleStats {
            count: pairs.len(),
            mean_score: pairs.iter().map(|p| p.0).sum::<f64>() / n,
            mean_rank: m.mr,
            mrr: m.mrr,
            fraction_rank1: m.hits_at(1),
            hits: m.hits,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CircleRelation {
    pub relation: RelationId,
    pub name: String,
    #[serde(flatten)]
    pub stats: CircleStats,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CircleReport {
    #[serde(flatten)]
    pub stats: CircleStats,
    pub per_relation: Vec<CircleRelation>,
}

impl CircleReport {
    pub fn fraction_rank1(&self) -> f64 {
        self.stats.fraction_rank1
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "circle triples ({})", self.stats.count);
        let width = self
            .per_relation
            .iter()
            .map(|r| r.name.len())
            .max()
            .unwrap_or(0)
            .max("relation".len());
        let _ = writeln!(
            out,
            "{:<width$}  {:>7}  {:>10}  {:>10}  {:>6}  {:>6}  {:>6}",
            "relation", "count", "score", "MR", "MRR", "H10", "rank1"
        );
        let mut row = |name: &str, s: &CircleStats| {
            let _ = writeln!(
                out,
                "{:<width$}  {:>7}  {:>10.4}  {:>10.3}  {:>6.3}  {:>6.3}  {:>6.3}",
                name,
                s.count,
                s.mean_score,
                s.mean_rank,
                s.mrr,
                s.hits.get(&10).copied().unwrap_or(0.0),
                s.fraction_rank1
            );
        };
        row("all", &self.stats);
        for r in &self.per_relation {
            row(&r.name, &r.stats);
        }
        out
    }
}

/// Scores each probe `(e, r, e)` and ranks the true tail `e` among all
/// entities (raw).
pub fn circle_eval(
    params: &ModelParams,
    circle: &[Triple],
    store: &TripleStore,
    norm: Norm,
) -> Result<CircleReport, EvalError> {
    if circle.is_empty() {
        return Err(EvalError::EmptyCircleSet);
    }
    check_shapes(params, store)?;
    let mut scores = vec![0.0; params.entity_count()];
    let mut scratch = Scratch::new(params.dim());
    let mut all = Vec::with_capacity(circle.len());
    let mut by_relation: BTreeMap<RelationId, Vec<(f64, usize)>> = BTreeMap::new();
    for t in circle {
        params.check_triple(t)?;
        params.score_tails(t.head, t.relation, norm, &mut scores, &mut scratch);
        let score = scores[t.tail as usize];
        let rank = rank_excluding(&scores, t.tail as usize, &[]);
        all.push((score, rank));
        by_relation
            .entry(t.relation)
            .or_default()
            .push((score, rank));
    }
    Ok(CircleReport {
        stats: CircleStats::from_pairs(&all),
        per_relation: by_relation
            .into_iter()
            .map(|(r, pairs)| CircleRelation {
                relation: r,
                name: relation_name(store, r),
                stats: CircleStats::from_pairs(&pairs),
            })
            .collect(),
    })
}

#[cfg(test)]
mod tests {
    use std::collections::BTreeSet;

    use super::*;
    use crate::models::{ModelKind, RelationParams, RelationSlot};

    fn line_params(xs: &[f64], r: f64) -> ModelParams {
        ModelParams::from_parts(
            ModelKind::TransE,
            1,
            xs.to_vec(),
            None,
            vec![RelationParams::Single(RelationSlot {
                translation: vec![r],
                normal: None,
                projection: None,
            })],
        )
        .unwrap()
    }

    fn line_store(n: usize, train: &[(usize, usize)], test: &[(usize, usize)]) -> TripleStore {
        let names: Vec<String> = (0..n).map(|i| format!("e{i}")).collect();
        let to = |v: &[(usize, usize)]| {
            v.iter()
                .map(|&(h, t)| Triple::new(h as u32, 0, t as u32))
                .collect::<Vec<_>>()
        };
        TripleStore::new(
            crate::data::Vocab::from_names(names),
            crate::data::Vocab::from_names(["r"]),
            to(train),
            vec![],
            to(test),
        )
        .unwrap()
    }

    #[test]
    fn tie_convention() {
        assert_eq!(rank_of(&[0.0, 1.0, 2.0], 0, |_| false), 1);
        // Tied with one other: 1 + 0.5 rounded up.
        assert_eq!(rank_of(&[0.0, 0.0, 2.0], 0, |_| false), 2);
        // Tied with two others: 1 + 1.
        assert_eq!(rank_of(&[0.0, 0.0, 0.0], 0, |_| false), 2);
        assert_eq!(rank_of(&[0.0, 0.0, 0.0, 0.0], 1, |_| false), 3);
        assert_eq!(rank_of(&[3.0, 1.0, 2.0, 3.0], 0, |_| false), 4);
        assert_eq!(rank_of(&[3.0, 1.0, 2.0, 3.0], 0, |i| i == 1), 3);
    }

    #[test]
    fn rank_excluding_matches_skip() {
        let scores = [0.5, 0.1, 0.5, 0.9, 0.1, 0.5];
        for truth in 0..scores.len() {
            for known in [vec![], vec![1u32], vec![0, 2, 4], vec![1, 2, 3, 4, 5]] {
                let expect = rank_of(&scores, truth, |i| known.contains(&(i as u32)));
                assert_eq!(rank_excluding(&scores, truth, &known), expect);
            }
        }
    }

    #[test]
    fn metrics_from_definition() {
        let m = RankMetrics::from_ranks(&[1, 1, 11, 11]);
        assert_eq!(m.mr, 6.0);
        assert_eq!(m.mrr, (1.0 + 1.0 + 1.0 / 11.0 + 1.0 / 11.0) / 4.0);
        assert_eq!(m.hits_at(10), 0.5);
        assert_eq!(m.hits_at(1), 0.5);
        let one = RankMetrics::from_ranks(&[1, 1]);
        assert_eq!((one.mr, one.mrr), (1.0, 1.0));
        assert!(one.hits.values().all(|&h| h == 1.0));
    }

    #[test]
    fn strict_best_ranks_first() {
        // Entities on a line at 0, 1, 2, 3 and r = 1: (0, r, 1) is exact.
        let params = line_params(&[0.0, 1.0, 2.0, 3.0], 1.0);
        let store = line_store(4, &[], &[(0, 1)]);
        let report =
            link_prediction(&params, store.test(), &store, EvalMode::Raw, Norm::L1, 1).unwrap();
        assert_eq!(report.mr(), 1.0);
        assert_eq!(report.mrr(), 1.0);
        assert_eq!(report.per_relation.len(), 1);
        assert_eq!(report.metrics.ranks, 2);
    }

    #[test]
    fn filtering_removes_known_triples_only() {
        // Every other tail beats the true tail 1 for head 0; (0, r, 2) is known.
        let params = line_params(&[0.0, 5.0, 1.0, 1.5], 1.0);
        let store = line_store(4, &[(0, 2)], &[(0, 1)]);
        let t = store.test()[0];
        let (_, raw) = rank_triple(&params, &t, &store, EvalMode::Raw, Norm::L1).unwrap();
        let (_, filt) = rank_triple(&params, &t, &store, EvalMode::Filtered, Norm::L1).unwrap();
        assert_eq!(raw, 4);
        assert_eq!(filt, 3);
    }

    #[test]
    fn workers_do_not_change_ranks() {
        let params = ModelParams::init(12, 2, &BTreeSet::from([1]), ModelKind::TransH, 4, 5).unwrap();
        let names: Vec<String> = (0..12).map(|i| format!("e{i}")).collect();
        let test: Vec<Triple> = (0..30u32).map(|i| Triple::new(i % 12, i % 2, (i * 7 + 3) % 12)).collect();
        let mut uniq = test.clone();
        uniq.sort_by_key(|t| (t.head, t.relation, t.tail));
        uniq.dedup();
        let store = TripleStore::new(
            crate::data::Vocab::from_names(names),
            crate::data::Vocab::from_names(["a", "b"]),
            vec![],
            vec![],
            uniq.clone(),
        )
        .unwrap();
        let ev = Evaluator::new(&params, &store, Norm::L2, EvalMode::Filtered).unwrap();
        let one = ev.rank_all(&uniq, 1).unwrap();
        for w in [2, 3, 8, 64] {
            assert_eq!(ev.rank_all(&uniq, w).unwrap(), one);
        }
    }

    #[test]
    fn zero_translation_puts_circle_first() {
        let params = line_params(&[0.0, 1.0, 2.5, -4.0], 0.0);
        let store = line_store(4, &[(0, 1)], &[]);
        let circle: Vec<Triple> = (0..4).map(|e| Triple::new(e, 0, e)).collect();
        let report = circle_eval(&params, &circle, &store, Norm::L2).unwrap();
        assert_eq!(report.stats.mean_score, 0.0);
        assert_eq!(report.fraction_rank1(), 1.0);
        assert_eq!(report.stats.mean_rank, 1.0);
        assert!(circle_eval(&params, &[], &store, Norm::L2).is_err());
    }

    #[test]
    fn shape_mismatch_rejected() {
        let params = line_params(&[0.0, 1.0], 0.0);
        let store = line_store(3, &[(0, 1)], &[]);
        assert!(matches!(
            Evaluator::new(&params, &store, Norm::L1, EvalMode::Raw),
            Err(EvalError::EntityCountMismatch { .. })
        ));
    }
}
