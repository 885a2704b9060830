//! Negative sampling and minibatch SGD over the margin ranking loss.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{classify_symmetric, DataError, RelationId, Split, SplitSelector, Triple, TripleStore};
use crate::models::{
    accumulate_pair_gradient, check_pair, Branch, Gradients, ModelError, ModelKind, ModelParams,
    Norm, Scratch,
};

/// Resampling budget for a negative that collides with a training triple.
pub const MAX_NEGATIVE_ATTEMPTS: usize = 100;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    Config(String),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("non-finite loss in epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },
    #[error("non-finite value in {block} after epoch {epoch}, batch {batch}")]
    NonFiniteParameter {
        epoch: usize,
        batch: usize,
        block: String,
    },
    #[error("training split is empty")]
    EmptyTrainSplit,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Corruption {
    /// Head or tail with probability 1/2, replacement uniform over entities,
    /// filtered against the train split.
    #[default]
    Uniform,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub model_kind: ModelKind,
    pub sym_enabled: bool,
    pub dim: usize,
    pub margin: f64,
    /// `None` selects the model's default norm.
    pub norm: Option<Norm>,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub negatives_per_positive: usize,
    pub corruption: Corruption,
    pub seed: u64,
    pub threshold: f64,
    pub classify_split: SplitSelector,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            model_kind: ModelKind::TransE,
            sym_enabled: false,
            dim: 50,
            margin: 1.0,
            norm: None,
            learning_rate: 0.01,
            epochs: 500,
            batch_size: 1024,
            negatives_per_positive: 1,
            corruption: Corruption::Uniform,
            seed: 0,
            threshold: crate::data::DEFAULT_THRESHOLD,
            classify_split: SplitSelector::All,
        }
    }
}

impl TrainConfig {
    pub fn norm(&self) -> Norm {
        self.norm.unwrap_or(self.model_kind.default_norm())
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        let fail = |msg: String| Err(TrainError::Config(msg));
        if self.dim == 0 {
            return fail("dim must be at least 1".into());
        }
        if !(self.margin > 0.0 && self.margin.is_finite()) {
            return fail(format!("margin must be positive, got {}", self.margin));
        }
        // A zero rate is accepted as a null update.
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return fail(format!(
                "learning rate must be non-negative, got {}",
                self.learning_rate
            ));
        }
        if self.batch_size == 0 {
            return fail("batch size must be at least 1".into());
        }
        if self.negatives_per_positive == 0 {
            return fail("negatives per positive must be at least 1".into());
        }
        if !(0.0..=1.0).contains(&self.threshold) {
            return fail(format!("threshold must lie in [0, 1], got {}", self.threshold));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CorruptedSide {
    Head,
    Tail,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct NegativeSample {
    pub triple: Triple,
    pub side: CorruptedSide,
    pub attempts: usize,
    /// All attempts collided with training triples; `triple` is the last candidate.
    pub exhausted: bool,
}

/// Corrupts the head or the tail (probability 1/2 each) with a uniformly drawn
/// entity, resampling while the candidate is a training triple.
pub fn sample_negative<R: Rng + ?Sized>(
    store: &TripleStore,
    pos: &Triple,
    rng: &mut R,
) -> NegativeSample {
    let n = store.entity_count() as u32;
    let side = if rng.gen_bool(0.5) {
        CorruptedSide::Head
    } else {
        CorruptedSide::Tail
    };
    let mut candidate = *pos;
    for attempt in 1..=MAX_NEGATIVE_ATTEMPTS {
        let e = rng.gen_range(0..n);
        candidate = match side {
            CorruptedSide::Head => Triple::new(e, pos.relation, pos.tail),
            CorruptedSide::Tail => Triple::new(pos.head, pos.relation, e),
        };
        if !store.contains(Split::Train, &candidate) {
            return NegativeSample {
                triple: candidate,
                side,
                attempts: attempt,
                exhausted: false,
            };
        }
    }
    log::warn!(
        "no unseen corruption of {pos} after {MAX_NEGATIVE_ATTEMPTS} attempts; using {candidate}"
    );
    NegativeSample {
        triple: candidate,
        side,
        attempts: MAX_NEGATIVE_ATTEMPTS,
        exhausted: true,
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    /// Mean hinge loss over all (positive, negative) pairs.
    pub mean_loss: f64,
    pub pairs: usize,
    /// Pairs with a positive hinge.
    pub active_pairs: usize,
    pub exhausted_negatives: usize,
}

fn run_epoch<R: Rng + ?Sized>(
    params: &mut ModelParams,
    store: &TripleStore,
    config: &TrainConfig,
    rng: &mut R,
    epoch: usize,
) -> Result<EpochStats, TrainError> {
    let norm = config.norm();
    let train = store.train();
    let mut order: Vec<usize> = (0..train.len()).collect();
    order.shuffle(rng);

    let mut stats = EpochStats::default();
    let mut total = 0.0;
    let mut grads = Gradients::new();
    let mut scratch = Scratch::new(params.dim());
    for (batch, chunk) in order.chunks(config.batch_size).enumerate() {
        grads.clear();
        let mut batch_loss = 0.0;
        for &i in chunk {
            let pos = train[i];
            for _ in 0..config.negatives_per_positive {
                let neg = sample_negative(store, &pos, rng);
                stats.exhausted_negatives += neg.exhausted as usize;
                check_pair(params, &pos, &neg.triple, config.margin)?;
                let loss = accumulate_pair_gradient(
                    params,
                    &pos,
                    &neg.triple,
                    config.margin,
                    norm,
                    &mut grads,
                    &mut scratch,
                );
                batch_loss += loss;
                stats.pairs += 1;
                stats.active_pairs += (loss > 0.0) as usize;
            }
        }
        if !batch_loss.is_finite() {
            return Err(TrainError::NonFiniteLoss { epoch, batch });
        }
        total += batch_loss;
        if grads.is_empty() {
            continue;
        }
        grads.apply(params, config.learning_rate);
        params.apply_constraints_to(grads.blocks())?;
        for (&block, _) in grads.iter() {
            let values = params.block(block).expect("touched block exists");
            if values.iter().any(|x| !x.is_finite()) {
                return Err(TrainError::NonFiniteParameter {
                    epoch,
                    batch,
                    block: block.to_string(),
                });
            }
        }
    }
    stats.mean_loss = if stats.pairs == 0 {
        0.0
    } else {
        total / stats.pairs as f64
    };
    Ok(stats)
}

/// One pass over a seeded shuffle of the train split: per batch, gradients of
/// all (positive, negative) pairs are summed, one SGD step is taken and the
/// constraints are re-applied to the touched parameters.
pub fn train_epoch<R: Rng + ?Sized>(
    params: &mut ModelParams,
    store: &TripleStore,
    config: &TrainConfig,
    rng: &mut R,
) -> Result<EpochStats, TrainError> {
    config.validate()?;
    run_epoch(params, store, config, rng, 1)
}

/// Translation norms of one traced relation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum NormTrace {
    Single {
        relation: RelationId,
        norm: f64,
    },
    Pair {
        relation: RelationId,
        plus: f64,
        minus: f64,
        /// `‖r⁺ - r⁻‖₂`
        gap: f64,
    },
}

impl NormTrace {
    pub fn relation(&self) -> RelationId {
        match self {
            NormTrace::Single { relation, .. } | NormTrace::Pair { relation, .. } => *relation,
        }
    }

    fn measure(params: &ModelParams, relation: RelationId) -> Self {
        let rel = params.relation(relation);
        match (rel.slot(Branch::Single), rel.slot(Branch::Plus), rel.slot(Branch::Minus)) {
            (Some(_), _, _) => NormTrace::Single {
                relation,
                norm: params.translation_norm(relation, Branch::Single).unwrap(),
            },
            (None, Some(plus), Some(minus)) => NormTrace::Pair {
                relation,
                plus: params.translation_norm(relation, Branch::Plus).unwrap(),
                minus: params.translation_norm(relation, Branch::Minus).unwrap(),
                gap: plus
                    .translation
                    .iter()
                    .zip(&minus.translation)
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
                    .sqrt(),
            },
            _ => unreachable!("relation params are single or pair"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub mean_loss: f64,
    pub active_pairs: usize,
    pub pairs: usize,
    pub mean_entity_norm: f64,
    pub seconds: f64,
    pub traces: Vec<NormTrace>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub norm: Option<Norm>,
    /// Relations classified symmetric at setup (traced every epoch).
    pub symmetric_relations: Vec<RelationId>,
    pub epochs: Vec<EpochRecord>,
}

impl TrainHistory {
    pub fn last(&self) -> Option<&EpochRecord> {
        self.epochs.last()
    }

    /// Tab-separated table: epoch, mean_loss, mean_entity_norm, then one column
    /// per traced norm. Wall-clock time is left out so the file is reproducible.
    pub fn to_tsv(&self, store: Option<&TripleStore>) -> String {
        let name = |r: RelationId| {
            store
                .and_then(|s| s.relations().name(r))
                .map(str::to_owned)
                .unwrap_or_else(|| format!("r{r}"))
        };
        let mut out = String::from("epoch\tmean_loss\tmean_entity_norm");
        if let Some(first) = self.epochs.first() {
            for trace in &first.traces {
                match trace {
                    NormTrace::Single { relation, .. } => {
                        let _ = write!(out, "\tnorm({})", name(*relation));
                    }
                    NormTrace::Pair { relation, .. } => {
                        let n = name(*relation);
                        let _ = write!(out, "\tnorm({n}+)\tnorm({n}-)\tgap({n})");
                    }
                }
            }
        }
        out.push('\n');
        for rec in &self.epochs {
            let _ = write!(out, "{}\t{}\t{}", rec.epoch, rec.mean_loss, rec.mean_entity_norm);
            for trace in &rec.traces {
                match trace {
                    NormTrace::Single { norm, .. } => {
                        let _ = write!(out, "\t{norm}");
                    }
                    NormTrace::Pair {
                        plus, minus, gap, ..
                    } => {
                        let _ = write!(out, "\t{plus}\t{minus}\t{gap}");
                    }
                }
            }
            out.push('\n');
        }
        out
    }
}

/// Outcome of training setup: which relations are symmetric and which get pairs.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainSetup {
    pub symmetric: BTreeSet<RelationId>,
    pub pairs: BTreeSet<RelationId>,
}

pub fn setup(store: &TripleStore, config: &TrainConfig) -> Result<TrainSetup, TrainError> {
    config.validate()?;
    let symmetric: BTreeSet<RelationId> =
        classify_symmetric(store, config.threshold, config.classify_split)?
            .into_iter()
            .map(|m| m.relation)
            .collect();
    let pairs = if config.sym_enabled {
        symmetric.clone()
    } else {
        BTreeSet::new()
    };
    Ok(TrainSetup { symmetric, pairs })
}

/// Initial parameters for `config`; identical to what [`train`] starts from.
pub fn initial_params(store: &TripleStore, config: &TrainConfig) -> Result<ModelParams, TrainError> {
    let setup = setup(store, config)?;
    init_for(store, config, &setup)
}

fn init_for(
    store: &TripleStore,
    config: &TrainConfig,
    setup: &TrainSetup,
) -> Result<ModelParams, TrainError> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(0);
    Ok(ModelParams::init_with_rng(
        store.entity_count(),
        store.relation_count(),
        &setup.pairs,
        config.model_kind,
        config.dim,
        &mut rng,
    )?)
}

pub fn train(
    store: &TripleStore,
    config: &TrainConfig,
) -> Result<(ModelParams, TrainHistory), TrainError> {
    train_with_observer(store, config, |_, _| {})
}

/// [`train`] with a callback after every epoch, e.g. for validation reporting.
pub fn train_with_observer<F>(
    store: &TripleStore,
    config: &TrainConfig,
    mut observer: F,
) -> Result<(ModelParams, TrainHistory), TrainError>
where
    F: FnMut(&EpochRecord, &ModelParams),
{
    let setup = setup(store, config)?;
    let mut params = init_for(store, config, &setup)?;
    if config.epochs > 0 && store.train().is_empty() {
        return Err(TrainError::EmptyTrainSplit);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(1);

    let mut history = TrainHistory {
        norm: Some(config.norm()),
        symmetric_relations: setup.symmetric.iter().copied().collect(),
        epochs: Vec::with_capacity(config.epochs),
    };
    for epoch in 1..=config.epochs {
        let started = Instant::now();
        let stats = run_epoch(&mut params, store, config, &mut rng, epoch)?;
        let record = EpochRecord {
            epoch,
            mean_loss: stats.mean_loss,
            active_pairs: stats.active_pairs,
            pairs: stats.pairs,
            mean_entity_norm: params.mean_entity_norm(),
            seconds: started.elapsed().as_secs_f64(),
            traces: setup
                .symmetric
                .iter()
                .map(|&r| NormTrace::measure(&params, r))
                .collect(),
        };
        log::debug!(
            "epoch {epoch}: loss {:.6} ({} of {} active)",
            record.mean_loss,
            record.active_pairs,
            record.pairs
        );
        observer(&record, &params);
        history.epochs.push(record);
    }
    Ok((params, history))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synthetic::SymmetricFixture;

    fn chain_store() -> TripleStore {
        TripleStore::from_named(&[("a", "r", "b"), ("b", "r", "c")], &[], &[]).unwrap()
    }

    #[test]
    fn exhausted_corruption_takes_warning_path() {
        // Every corruption of (0, r, 1) over two entities is a training triple.
        let store = TripleStore::from_named(
            &[("x", "r", "y"), ("y", "r", "y"), ("x", "r", "x")],
            &[],
            &[],
        )
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let neg = sample_negative(&store, &Triple::new(0, 0, 1), &mut rng);
        assert!(neg.exhausted);
        assert_eq!(neg.attempts, MAX_NEGATIVE_ATTEMPTS);
        assert!(store.contains(Split::Train, &neg.triple));
    }

    #[test]
    fn first_unseen_candidate_accepted() {
        let store = chain_store();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..200 {
            let neg = sample_negative(&store, &Triple::new(0, 0, 1), &mut rng);
            assert!(!neg.exhausted);
            assert!(!store.contains(Split::Train, &neg.triple));
            assert_eq!(neg.triple.relation, 0);
            match neg.side {
                CorruptedSide::Head => assert_eq!(neg.triple.tail, 1),
                CorruptedSide::Tail => assert_eq!(neg.triple.head, 0),
            }
        }
    }

    #[test]
    fn corruption_sides_are_balanced() {
        let store = SymmetricFixture::default().build().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let pos = store.train()[0];
        let heads = (0..10_000)
            .filter(|_| sample_negative(&store, &pos, &mut rng).side == CorruptedSide::Head)
            .count();
        let frac = heads as f64 / 10_000.0;
        assert!((frac - 0.5).abs() < 0.02, "head fraction {frac}");
    }

    #[test]
    fn zero_learning_rate_leaves_params_unchanged() {
        let store = chain_store();
        for kind in ModelKind::ALL {
            let config = TrainConfig {
                model_kind: kind,
                dim: 4,
                learning_rate: 0.0,
                batch_size: 1,
                ..Default::default()
            };
            let mut params = initial_params(&store, &config).unwrap();
            let before = params.clone();
            let mut rng = ChaCha8Rng::seed_from_u64(3);
            let stats = train_epoch(&mut params, &store, &config, &mut rng).unwrap();
            assert_eq!(params, before);
            assert_eq!(stats.pairs, 2);
            assert!(stats.mean_loss >= 0.0);
        }
    }

    #[test]
    fn satisfied_margin_changes_nothing() {
        use crate::models::{RelationParams, RelationSlot};
        // (a, r, b) scores 0; every corruption scores >= 10.
        let store = TripleStore::from_named(&[("a", "r", "b")], &[], &[("c", "r", "c")]).unwrap();
        let params = ModelParams::from_parts(
            ModelKind::TransE,
            1,
            vec![0.0, 0.5, -20.0],
            None,
            vec![RelationParams::Single(RelationSlot {
                translation: vec![0.5],
                normal: None,
                projection: None,
            })],
        )
        .unwrap();
        let config = TrainConfig {
            dim: 1,
            batch_size: 1,
            margin: 1.0,
            ..Default::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..20 {
            let mut p = params.clone();
            let stats = train_epoch(&mut p, &store, &config, &mut rng).unwrap();
            if stats.active_pairs == 0 {
                assert_eq!(stats.mean_loss, 0.0);
                assert_eq!(p, params);
            }
        }
    }

    #[test]
    fn zero_epochs_returns_initialisation() {
        let store = chain_store();
        let config = TrainConfig {
            epochs: 0,
            dim: 3,
            ..Default::default()
        };
        let (params, history) = train(&store, &config).unwrap();
        assert!(history.epochs.is_empty());
        assert_eq!(params, initial_params(&store, &config).unwrap());
    }

    #[test]
    fn invalid_config_rejected() {
        let store = chain_store();
        for config in [
            TrainConfig { margin: 0.0, ..Default::default() },
            TrainConfig { learning_rate: -1.0, ..Default::default() },
            TrainConfig { batch_size: 0, ..Default::default() },
            TrainConfig { dim: 0, ..Default::default() },
            TrainConfig { threshold: 2.0, ..Default::default() },
        ] {
            assert!(matches!(train(&store, &config), Err(TrainError::Config(_))));
        }
    }

    #[test]
    fn divergence_is_reported_with_block() {
        let store = chain_store();
        let config = TrainConfig {
            dim: 2,
            epochs: 3,
            learning_rate: f64::MAX,
            norm: Some(Norm::L2),
            batch_size: 1,
            ..Default::default()
        };
        match train(&store, &config) {
            Err(TrainError::NonFiniteParameter { block, .. }) => {
                assert!(block.contains("relation") || block.contains("entity"), "{block}");
            }
            Err(TrainError::NonFiniteLoss { .. }) => {}
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn history_tsv_has_one_row_per_epoch() {
        let store = SymmetricFixture {
            pairs: 20,
            left: 5,
            right: 5,
            ..Default::default()
        }
        .build()
        .unwrap();
        let config = TrainConfig {
            dim: 4,
            epochs: 3,
            sym_enabled: true,
            ..Default::default()
        };
        let (_, history) = train(&store, &config).unwrap();
        assert_eq!(history.symmetric_relations, vec![0]);
        let tsv = history.to_tsv(Some(&store));
        let lines: Vec<&str> = tsv.lines().collect();
        assert_eq!(lines.len(), 4);
        assert_eq!(
            lines[0],
            "epoch\tmean_loss\tmean_entity_norm\tnorm(spouse+)\tnorm(spouse-)\tgap(spouse)"
        );
        assert!(lines[3].starts_with("3\t"));
        assert_eq!(lines[3].split('\t').count(), 6);
    }
}
