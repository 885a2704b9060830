use std::fmt;

use serde::{Deserialize, Serialize};

use super::{ModelError, ModelKind, ModelParams, Norm, RelationParams, RelationSlot};
use crate::data::{EntityId, RelationId, Triple};

/// Which relation slot produced a score.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Branch {
    Single,
    Plus,
    Minus,
}

impl fmt::Display for Branch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Branch::Single => "single",
            Branch::Plus => "plus",
            Branch::Minus => "minus",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreResult {
    pub value: f64,
    pub branch: Branch,
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `‖h + r - t‖` for already projected `h`, `t`.
pub(crate) fn distance(h: &[f64], r: &[f64], t: &[f64], norm: Norm) -> f64 {
    let diffs = h.iter().zip(r).zip(t).map(|((h, r), t)| h + r - t);
    match norm {
        Norm::L1 => diffs.map(f64::abs).sum(),
        Norm::L2 => diffs.map(|d| d * d).sum::<f64>().sqrt(),
    }
}

/// `x - (w·x) w`
pub(crate) fn project_hyperplane(x: &[f64], w: &[f64], out: &mut [f64]) {
    debug_assert!(
        (dot(w, w).sqrt() - 1.0).abs() < 1e-3,
        "hyperplane normal is not unit length"
    );
    let s = dot(w, x);
    for ((o, x), w) in out.iter_mut().zip(x).zip(w) {
        *o = x - s * w;
    }
}

/// `(r_p x_pᵀ + I) x = x + (x_p·x) r_p`
pub(crate) fn project_dynamic(x: &[f64], x_proj: &[f64], r_proj: &[f64], out: &mut [f64]) {
    let s = dot(x_proj, x);
    for ((o, x), rp) in out.iter_mut().zip(x).zip(r_proj) {
        *o = x + s * rp;
    }
}

fn check_dims(expected: usize, vectors: &[&[f64]]) -> Result<(), ModelError> {
    match vectors.iter().find(|v| v.len() != expected) {
        Some(v) => Err(ModelError::DimensionMismatch {
            expected,
            found: v.len(),
        }),
        None => Ok(()),
    }
}

/// TransE: `‖h + r - t‖`.
pub fn score_transe(h: &[f64], r: &[f64], t: &[f64], norm: Norm) -> Result<f64, ModelError> {
    check_dims(h.len(), &[r, t])?;
    Ok(distance(h, r, t, norm))
}

/// TransH: `‖h⊥ + r - t⊥‖` with `x⊥ = x - (w·x) w`; `w` must be unit length.
pub fn score_transh(
    h: &[f64],
    normal: &[f64],
    r: &[f64],
    t: &[f64],
    norm: Norm,
) -> Result<f64, ModelError> {
    check_dims(h.len(), &[normal, r, t])?;
    let mut hp = vec![0.0; h.len()];
    let mut tp = vec![0.0; h.len()];
    project_hyperplane(h, normal, &mut hp);
    project_hyperplane(t, normal, &mut tp);
    Ok(distance(&hp, r, &tp, norm))
}

/// TransD: `‖h⊥ + r - t⊥‖` with `h⊥ = h + (h_p·h) r_p` and `t⊥ = t + (t_p·t) r_p`.
pub fn score_transd(
    h: &[f64],
    h_proj: &[f64],
    r: &[f64],
    r_proj: &[f64],
    t: &[f64],
    t_proj: &[f64],
    norm: Norm,
) -> Result<f64, ModelError> {
    check_dims(h.len(), &[h_proj, r, r_proj, t, t_proj])?;
    let mut hp = vec![0.0; h.len()];
    let mut tp = vec![0.0; h.len()];
    project_dynamic(h, h_proj, r_proj, &mut hp);
    project_dynamic(t, t_proj, r_proj, &mut tp);
    Ok(distance(&hp, r, &tp, norm))
}

/// Reusable buffers for projected entity vectors.
#[derive(Clone, Debug)]
pub(crate) struct Scratch {
    pub head: Vec<f64>,
    pub tail: Vec<f64>,
}

impl Scratch {
    pub fn new(dim: usize) -> Self {
        Scratch {
            head: vec![0.0; dim],
            tail: vec![0.0; dim],
        }
    }
}

impl ModelParams {
    /// Projects entity `e` for `slot` into `out`.
    pub(crate) fn project_entity(&self, e: EntityId, slot: &RelationSlot, out: &mut [f64]) {
        let x = self.entity(e);
        match self.kind {
            ModelKind::TransE => out.copy_from_slice(x),
            ModelKind::TransH => {
                let w = slot.normal.as_deref().expect("TransH slot has a normal");
                project_hyperplane(x, w, out);
            }
            ModelKind::TransD => {
                let xp = self.entity_projection(e).expect("TransD has entity projections");
                let rp = slot.projection.as_deref().expect("TransD slot has a projection");
                project_dynamic(x, xp, rp, out);
            }
        }
    }

    pub(crate) fn slot_score_with(
        &self,
        head: EntityId,
        slot: &RelationSlot,
        tail: EntityId,
        norm: Norm,
        scratch: &mut Scratch,
    ) -> f64 {
        self.project_entity(head, slot, &mut scratch.head);
        self.project_entity(tail, slot, &mut scratch.tail);
        distance(&scratch.head, &slot.translation, &scratch.tail, norm)
    }

    /// Base-model score of `(head, slot, tail)` for one explicit slot.
    pub fn slot_score(&self, head: EntityId, slot: &RelationSlot, tail: EntityId, norm: Norm) -> f64 {
        self.slot_score_with(head, slot, tail, norm, &mut Scratch::new(self.dim))
    }

    pub(crate) fn score_with(&self, triple: &Triple, norm: Norm, scratch: &mut Scratch) -> ScoreResult {
        match self.relation(triple.relation) {
            RelationParams::Single(slot) => ScoreResult {
                value: self.slot_score_with(triple.head, slot, triple.tail, norm, scratch),
                branch: Branch::Single,
            },
            RelationParams::Pair { plus, minus } => {
                let p = self.slot_score_with(triple.head, plus, triple.tail, norm, scratch);
                let m = self.slot_score_with(triple.head, minus, triple.tail, norm, scratch);
                if m < p {
                    ScoreResult {
                        value: m,
                        branch: Branch::Minus,
                    }
                } else {
                    ScoreResult {
                        value: p,
                        branch: Branch::Plus,
                    }
                }
            }
        }
    }

    /// Score of a triple; lower is more plausible. Pairs take the smaller of
    /// the two slot scores, ties going to `plus`.
    pub fn score(&self, triple: &Triple, norm: Norm) -> Result<ScoreResult, ModelError> {
        self.check_triple(triple)?;
        Ok(self.score_with(triple, norm, &mut Scratch::new(self.dim)))
    }

    /// Scores `(head, relation, x)` for every entity `x` into `out`. Values are
    /// bit-identical to [`score`](Self::score).
    pub(crate) fn score_tails(
        &self,
        head: EntityId,
        relation: RelationId,
        norm: Norm,
        out: &mut [f64],
        scratch: &mut Scratch,
    ) {
        out.fill(f64::INFINITY);
        for (_, slot) in self.relation(relation).slots() {
            self.project_entity(head, slot, &mut scratch.head);
            for (x, best) in out.iter_mut().enumerate() {
                self.project_entity(x as EntityId, slot, &mut scratch.tail);
                let d = distance(&scratch.head, &slot.translation, &scratch.tail, norm);
                if d < *best {
                    *best = d;
                }
            }
        }
    }

    /// Scores `(x, relation, tail)` for every entity `x` into `out`.
    pub(crate) fn score_heads(
        &self,
        relation: RelationId,
        tail: EntityId,
        norm: Norm,
        out: &mut [f64],
        scratch: &mut Scratch,
    ) {
        out.fill(f64::INFINITY);
        for (_, slot) in self.relation(relation).slots() {
            self.project_entity(tail, slot, &mut scratch.tail);
            for (x, best) in out.iter_mut().enumerate() {
                self.project_entity(x as EntityId, slot, &mut scratch.head);
                let d = distance(&scratch.head, &slot.translation, &scratch.tail, norm);
                if d < *best {
                    *best = d;
                }
            }
        }
    }
}
