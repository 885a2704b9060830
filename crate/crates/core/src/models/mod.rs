//! Embedding parameters, scores and gradients for TransE, TransH and TransD.
//!
//! A relation is either a single slot or, for symmetric relations, a pair of
//! slots (`plus`, `minus`). Each slot carries the translation vector and the
//! model's relation-side auxiliary vector (hyperplane normal for TransH,
//! projection vector for TransD). Entity vectors, including TransD entity
//! projections, are shared by both slots of a pair.

mod checkpoint;
mod grad;
mod score;

use std::collections::BTreeSet;
use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{EntityId, RelationId, Triple};

pub use checkpoint::{ArraySpec, Checkpoint, CheckpointManifest, CHECKPOINT_MAGIC};
pub use grad::{gradients, Gradients};
pub use score::{score_transd, score_transe, score_transh, Branch, ScoreResult};

pub(crate) use grad::{accumulate_pair_gradient, check_pair};
pub(crate) use score::Scratch;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("dimension mismatch: expected {expected}, got {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("model must have at least one entity and one relation")]
    EmptyVocabulary,
    #[error("dimension must be at least 1")]
    ZeroDimension,
    #[error("entity id {0} out of range")]
    UnknownEntity(EntityId),
    #[error("relation id {0} out of range")]
    UnknownRelation(RelationId),
    #[error("positive relation {positive} and negative relation {negative} differ")]
    RelationMismatch {
        positive: RelationId,
        negative: RelationId,
    },
    #[error("margin must be positive, got {0}")]
    InvalidMargin(f64),
    #[error("hyperplane normal of {0} has zero length")]
    DegenerateNormal(ParamBlock),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("checkpoint i/o")]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    TransE,
    TransH,
    TransD,
}

impl ModelKind {
    pub const ALL: [ModelKind; 3] = [ModelKind::TransE, ModelKind::TransH, ModelKind::TransD];

    /// L1 for TransE, L2 for the projection models.
    pub const fn default_norm(self) -> Norm {
        match self {
            ModelKind::TransE => Norm::L1,
            ModelKind::TransH | ModelKind::TransD => Norm::L2,
        }
    }

    pub const fn name(self) -> &'static str {
        match self {
            ModelKind::TransE => "transe",
            ModelKind::TransH => "transh",
            ModelKind::TransD => "transd",
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Norm {
    L1,
    L2,
}

impl fmt::Display for Norm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Norm::L1 => "l1",
            Norm::L2 => "l2",
        })
    }
}

/// Relation-side parameters used by one score evaluation.
#[derive(Clone, Debug, PartialEq)]
pub struct RelationSlot {
    pub translation: Vec<f64>,
    /// Hyperplane normal, TransH only.
    pub normal: Option<Vec<f64>>,
    /// Relation projection vector, TransD only.
    pub projection: Option<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq)]
pub enum RelationParams {
    Single(RelationSlot),
    Pair {
        plus: RelationSlot,
        minus: RelationSlot,
    },
}

impl RelationParams {
    pub fn is_pair(&self) -> bool {
        matches!(self, RelationParams::Pair { .. })
    }

    pub fn slot(&self, branch: Branch) -> Option<&RelationSlot> {
        match (self, branch) {
            (RelationParams::Single(s), Branch::Single) => Some(s),
            (RelationParams::Pair { plus, .. }, Branch::Plus) => Some(plus),
            (RelationParams::Pair { minus, .. }, Branch::Minus) => Some(minus),
            _ => None,
        }
    }

    fn slot_mut(&mut self, branch: Branch) -> Option<&mut RelationSlot> {
        match (self, branch) {
            (RelationParams::Single(s), Branch::Single) => Some(s),
            (RelationParams::Pair { plus, .. }, Branch::Plus) => Some(plus),
            (RelationParams::Pair { minus, .. }, Branch::Minus) => Some(minus),
            _ => None,
        }
    }

    /// Slots with their branch labels, `plus` before `minus`.
    pub fn slots(&self) -> Vec<(Branch, &RelationSlot)> {
        match self {
            RelationParams::Single(s) => vec![(Branch::Single, s)],
            RelationParams::Pair { plus, minus } => {
                vec![(Branch::Plus, plus), (Branch::Minus, minus)]
            }
        }
    }

    fn slots_mut(&mut self) -> Vec<(Branch, &mut RelationSlot)> {
        match self {
            RelationParams::Single(s) => vec![(Branch::Single, s)],
            RelationParams::Pair { plus, minus } => {
                vec![(Branch::Plus, plus), (Branch::Minus, minus)]
            }
        }
    }
}

/// Addresses one parameter vector.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ParamBlock {
    Entity(EntityId),
    EntityProjection(EntityId),
    Translation(RelationId, Branch),
    Normal(RelationId, Branch),
    RelationProjection(RelationId, Branch),
}

impl fmt::Display for ParamBlock {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ParamBlock::Entity(e) => write!(f, "entity[{e}]"),
            ParamBlock::EntityProjection(e) => write!(f, "entity_projection[{e}]"),
            ParamBlock::Translation(r, b) => write!(f, "relation[{r}].{b}.translation"),
            ParamBlock::Normal(r, b) => write!(f, "relation[{r}].{b}.normal"),
            ParamBlock::RelationProjection(r, b) => write!(f, "relation[{r}].{b}.projection"),
        }
    }
}

/// Full parameter set of one model.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    kind: ModelKind,
    dim: usize,
    entity_count: usize,
    /// Row-major `|E| x d`.
    entities: Vec<f64>,
    /// Row-major `|E| x d`, TransD only.
    entity_projections: Option<Vec<f64>>,
    relations: Vec<RelationParams>,
}

fn l2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn clip_to_ball(v: &mut [f64]) {
    let n = l2(v);
    if n > 1.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
}

/// Rescales to unit length; vectors already unit to 1e-12 are left bit-identical.
fn normalize_unit(v: &mut [f64]) -> Result<(), ()> {
    let n = l2(v);
    if n == 0.0 || !n.is_finite() {
        return Err(());
    }
    if (n - 1.0).abs() > 1e-12 {
        v.iter_mut().for_each(|x| *x /= n);
    }
    Ok(())
}

impl ModelParams {
    /// Uniform `[-6/sqrt(d), 6/sqrt(d)]` initialisation followed by entity and
    /// normal normalisation. Relations in `symmetric` get a pair of
    /// independently drawn slots.
    ///
    /// Draw order: entity table, entity projections (TransD), then each
    /// relation in id order (`plus` before `minus`), each slot drawing its
    /// translation, then normal or projection.
    pub fn init(
        entity_count: usize,
        relation_count: usize,
        symmetric: &BTreeSet<RelationId>,
        kind: ModelKind,
        dim: usize,
        seed: u64,
    ) -> Result<Self, ModelError> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self::init_with_rng(entity_count, relation_count, symmetric, kind, dim, &mut rng)
    }

    pub fn init_with_rng<R: Rng>(
        entity_count: usize,
        relation_count: usize,
        symmetric: &BTreeSet<RelationId>,
        kind: ModelKind,
        dim: usize,
        rng: &mut R,
    ) -> Result<Self, ModelError> {
        if entity_count == 0 || relation_count == 0 {
            return Err(ModelError::EmptyVocabulary);
        }
        if dim == 0 {
            return Err(ModelError::ZeroDimension);
        }
        if let Some(&r) = symmetric.iter().find(|&&r| r as usize >= relation_count) {
            return Err(ModelError::UnknownRelation(r));
        }
        let bound = 6.0 / (dim as f64).sqrt();
        let mut draw = |n: usize| -> Vec<f64> {
            (0..n).map(|_| rng.gen_range(-bound..=bound)).collect()
        };
        let entities = draw(entity_count * dim);
        let entity_projections = (kind == ModelKind::TransD).then(|| draw(entity_count * dim));
        let mut slot = || RelationSlot {
            translation: draw(dim),
            normal: (kind == ModelKind::TransH).then(|| draw(dim)),
            projection: (kind == ModelKind::TransD).then(|| draw(dim)),
        };
        let relations = (0..relation_count as RelationId)
            .map(|r| {
                if symmetric.contains(&r) {
                    let plus = slot();
                    let minus = slot();
                    RelationParams::Pair { plus, minus }
                } else {
                    RelationParams::Single(slot())
                }
            })
            .collect();

        let mut params = ModelParams {
            kind,
            dim,
            entity_count,
            entities,
            entity_projections,
            relations,
        };
        for e in 0..entity_count {
            let row = params.entity_mut(e as EntityId);
            let n = l2(row);
            if n > 0.0 {
                row.iter_mut().for_each(|x| *x /= n);
            }
        }
        params.normalize_normals()?;
        Ok(params)
    }

    /// Assembles parameters from parts, checking shapes.
    pub fn from_parts(
        kind: ModelKind,
        dim: usize,
        entities: Vec<f64>,
        entity_projections: Option<Vec<f64>>,
        relations: Vec<RelationParams>,
    ) -> Result<Self, ModelError> {
        if dim == 0 {
            return Err(ModelError::ZeroDimension);
        }
        if !entities.len().is_multiple_of(dim) {
            return Err(ModelError::DimensionMismatch {
                expected: dim,
                found: entities.len() % dim,
            });
        }
        let entity_count = entities.len() / dim;
        let check = |v: &[f64], expected: usize| {
            if v.len() == expected {
                Ok(())
            } else {
                Err(ModelError::DimensionMismatch {
                    expected,
                    found: v.len(),
                })
            }
        };
        match (&entity_projections, kind) {
            (Some(p), ModelKind::TransD) => check(p, entities.len())?,
            (None, ModelKind::TransD) => {
                return Err(ModelError::Checkpoint(
                    "TransD requires entity projections".into(),
                ))
            }
            (Some(_), _) => {
                return Err(ModelError::Checkpoint(format!(
                    "{kind} has no entity projections"
                )))
            }
            (None, _) => {}
        }
        for rel in &relations {
            for (_, slot) in rel.slots() {
                check(&slot.translation, dim)?;
                let want_normal = kind == ModelKind::TransH;
                let want_projection = kind == ModelKind::TransD;
                if slot.normal.is_some() != want_normal
                    || slot.projection.is_some() != want_projection
                {
                    return Err(ModelError::Checkpoint(format!(
                        "relation slot layout does not match {kind}"
                    )));
                }
                if let Some(v) = &slot.normal {
                    check(v, dim)?;
                }
                if let Some(v) = &slot.projection {
                    check(v, dim)?;
                }
            }
        }
        Ok(ModelParams {
            kind,
            dim,
            entity_count,
            entities,
            entity_projections,
            relations,
        })
    }

    pub fn kind(&self) -> ModelKind {
        self.kind
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn entity_count(&self) -> usize {
        self.entity_count
    }

    pub fn relation_count(&self) -> usize {
        self.relations.len()
    }

    pub fn entity(&self, e: EntityId) -> &[f64] {
        let start = e as usize * self.dim;
        &self.entities[start..start + self.dim]
    }

    pub fn entity_mut(&mut self, e: EntityId) -> &mut [f64] {
        let start = e as usize * self.dim;
        &mut self.entities[start..start + self.dim]
    }

    pub fn entity_projection(&self, e: EntityId) -> Option<&[f64]> {
        let start = e as usize * self.dim;
        self.entity_projections
            .as_ref()
            .map(|p| &p[start..start + self.dim])
    }

    pub fn entity_table(&self) -> &[f64] {
        &self.entities
    }

    pub fn entity_projection_table(&self) -> Option<&[f64]> {
        self.entity_projections.as_deref()
    }

    pub fn relation(&self, r: RelationId) -> &RelationParams {
        &self.relations[r as usize]
    }

    pub fn relation_mut(&mut self, r: RelationId) -> &mut RelationParams {
        &mut self.relations[r as usize]
    }

    pub fn relations(&self) -> &[RelationParams] {
        &self.relations
    }

    /// Ids of relations stored as pairs.
    pub fn pair_relations(&self) -> BTreeSet<RelationId> {
        self.relations
            .iter()
            .enumerate()
            .filter(|(_, r)| r.is_pair())
            .map(|(i, _)| i as RelationId)
            .collect()
    }

    pub fn block(&self, block: ParamBlock) -> Option<&[f64]> {
        let dim = self.dim;
        let rows = |e: EntityId| e as usize * dim..(e as usize + 1) * dim;
        match block {
            ParamBlock::Entity(e) => self.entities.get(rows(e)),
            ParamBlock::EntityProjection(e) => self.entity_projections.as_ref()?.get(rows(e)),
            ParamBlock::Translation(r, b) => self
                .relations
                .get(r as usize)?
                .slot(b)
                .map(|s| s.translation.as_slice()),
            ParamBlock::Normal(r, b) => self.relations.get(r as usize)?.slot(b)?.normal.as_deref(),
            ParamBlock::RelationProjection(r, b) => self
                .relations
                .get(r as usize)?
                .slot(b)?
                .projection
                .as_deref(),
        }
    }

    pub fn block_mut(&mut self, block: ParamBlock) -> Option<&mut [f64]> {
        let dim = self.dim;
        let rows = |e: EntityId| e as usize * dim..(e as usize + 1) * dim;
        match block {
            ParamBlock::Entity(e) => self.entities.get_mut(rows(e)),
            ParamBlock::EntityProjection(e) => {
                self.entity_projections.as_mut()?.get_mut(rows(e))
            }
            ParamBlock::Translation(r, b) => self
                .relations
                .get_mut(r as usize)?
                .slot_mut(b)
                .map(|s| s.translation.as_mut_slice()),
            ParamBlock::Normal(r, b) => self
                .relations
                .get_mut(r as usize)?
                .slot_mut(b)?
                .normal
                .as_deref_mut(),
            ParamBlock::RelationProjection(r, b) => self
                .relations
                .get_mut(r as usize)?
                .slot_mut(b)?
                .projection
                .as_deref_mut(),
        }
    }

    /// Every block in checkpoint order.
    pub fn blocks(&self) -> Vec<ParamBlock> {
        let mut out = Vec::new();
        for e in 0..self.entity_count as EntityId {
            out.push(ParamBlock::Entity(e));
        }
        if self.entity_projections.is_some() {
            for e in 0..self.entity_count as EntityId {
                out.push(ParamBlock::EntityProjection(e));
            }
        }
        for (r, rel) in self.relations.iter().enumerate() {
            let r = r as RelationId;
            for (branch, slot) in rel.slots() {
                out.push(ParamBlock::Translation(r, branch));
                if slot.normal.is_some() {
                    out.push(ParamBlock::Normal(r, branch));
                }
                if slot.projection.is_some() {
                    out.push(ParamBlock::RelationProjection(r, branch));
                }
            }
        }
        out
    }

    fn normalize_normals(&mut self) -> Result<(), ModelError> {
        for (r, rel) in self.relations.iter_mut().enumerate() {
            for (branch, slot) in rel.slots_mut() {
                if let Some(w) = slot.normal.as_mut() {
                    normalize_unit(w)
                        .map_err(|_| ModelError::DegenerateNormal(ParamBlock::Normal(r as RelationId, branch)))?;
                }
            }
        }
        Ok(())
    }

    /// Projects entity vectors onto the closed unit ball and renormalises
    /// TransH normals. Relation translations are left alone.
    pub fn apply_constraints(&mut self) -> Result<(), ModelError> {
        for row in self.entities.chunks_mut(self.dim) {
            clip_to_ball(row);
        }
        self.normalize_normals()
    }

    /// Like [`apply_constraints`](Self::apply_constraints) restricted to the given blocks.
    pub(crate) fn apply_constraints_to<'a, I>(&mut self, blocks: I) -> Result<(), ModelError>
    where
        I: IntoIterator<Item = &'a ParamBlock>,
    {
        for &block in blocks {
            match block {
                ParamBlock::Entity(_) => {
                    clip_to_ball(self.block_mut(block).expect("touched block exists"));
                }
                ParamBlock::Normal(..) => {
                    normalize_unit(self.block_mut(block).expect("touched block exists"))
                        .map_err(|_| ModelError::DegenerateNormal(block))?;
                }
                _ => {}
            }
        }
        Ok(())
    }

    pub fn mean_entity_norm(&self) -> f64 {
        let total: f64 = self.entities.chunks(self.dim).map(l2).sum();
        total / self.entity_count as f64
    }

    pub fn translation_norm(&self, r: RelationId, branch: Branch) -> Option<f64> {
        self.relations
            .get(r as usize)?
            .slot(branch)
            .map(|s| l2(&s.translation))
    }

    /// First block containing a non-finite value.
    pub fn first_non_finite(&self) -> Option<ParamBlock> {
        self.blocks().into_iter().find(|&b| {
            self.block(b)
                .is_some_and(|v| v.iter().any(|x| !x.is_finite()))
        })
    }

    pub(crate) fn check_triple(&self, triple: &Triple) -> Result<(), ModelError> {
        for e in [triple.head, triple.tail] {
            if e as usize >= self.entity_count {
                return Err(ModelError::UnknownEntity(e));
            }
        }
        if triple.relation as usize >= self.relations.len() {
            return Err(ModelError::UnknownRelation(triple.relation));
        }
        Ok(())
    }
}
