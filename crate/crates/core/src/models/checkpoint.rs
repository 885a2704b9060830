//! Binary checkpoint: `KGESYM\x01`, a u32-LE-length-prefixed JSON manifest,
//! then little-endian f32 arrays in the order the manifest lists them.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Branch, ModelError, ModelKind, ModelParams, Norm, RelationParams, RelationSlot};
use crate::data::RelationId;

pub const CHECKPOINT_MAGIC: &[u8; 7] = b"KGESYM\x01";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArraySpec {
    pub name: String,
    pub len: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub model_kind: ModelKind,
    pub dim: usize,
    pub entity_count: usize,
    pub relation_count: usize,
    pub symmetric_relations: Vec<RelationId>,
    pub norm: Norm,
    pub seed: u64,
    pub epoch: usize,
    /// How pair slots were initialised.
    pub pair_init: String,
    pub arrays: Vec<ArraySpec>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub manifest: CheckpointManifest,
    pub params: ModelParams,
}

fn slot_arrays(kind: ModelKind, r: RelationId, branch: Branch, dim: usize) -> Vec<ArraySpec> {
    let mut out = vec![ArraySpec {
        name: format!("relation[{r}].{branch}.translation"),
        len: dim,
    }];
    match kind {
        ModelKind::TransE => {}
        ModelKind::TransH => out.push(ArraySpec {
            name: format!("relation[{r}].{branch}.normal"),
            len: dim,
        }),
        ModelKind::TransD => out.push(ArraySpec {
            name: format!("relation[{r}].{branch}.projection"),
            len: dim,
        }),
    }
    out
}

/// Array layout implied by the shape fields of a manifest.
fn expected_arrays(
    kind: ModelKind,
    dim: usize,
    entity_count: usize,
    relation_count: usize,
    symmetric: &[RelationId],
) -> Vec<ArraySpec> {
    let mut out = vec![ArraySpec {
        name: "entity".into(),
        len: entity_count * dim,
    }];
    if kind == ModelKind::TransD {
        out.push(ArraySpec {
            name: "entity_projection".into(),
            len: entity_count * dim,
        });
    }
    for r in 0..relation_count as RelationId {
        if symmetric.contains(&r) {
            out.extend(slot_arrays(kind, r, Branch::Plus, dim));
            out.extend(slot_arrays(kind, r, Branch::Minus, dim));
        } else {
            out.extend(slot_arrays(kind, r, Branch::Single, dim));
        }
    }
    out
}

fn bad(msg: impl Into<String>) -> ModelError {
    ModelError::Checkpoint(msg.into())
}

impl Checkpoint {
    pub fn new(params: ModelParams, norm: Norm, seed: u64, epoch: usize) -> Self {
        let symmetric: Vec<RelationId> = params.pair_relations().into_iter().collect();
        let manifest = CheckpointManifest {
            model_kind: params.kind(),
            dim: params.dim(),
            entity_count: params.entity_count(),
            relation_count: params.relation_count(),
            arrays: expected_arrays(
                params.kind(),
                params.dim(),
                params.entity_count(),
                params.relation_count(),
                &symmetric,
            ),
            symmetric_relations: symmetric,
            norm,
            seed,
            epoch,
            pair_init: "independent-uniform".into(),
        };
        Checkpoint { manifest, params }
    }

    fn values(&self) -> Vec<&[f64]> {
        let p = &self.params;
        let mut out: Vec<&[f64]> = vec![p.entity_table()];
        if let Some(proj) = p.entity_projection_table() {
            out.push(proj);
        }
        for rel in p.relations() {
            for (_, slot) in rel.slots() {
                out.push(&slot.translation);
                if let Some(w) = &slot.normal {
                    out.push(w);
                }
                if let Some(rp) = &slot.projection {
                    out.push(rp);
                }
            }
        }
        out
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let manifest = serde_json::to_vec(&self.manifest).expect("manifest serialises");
        let floats: usize = self.manifest.arrays.iter().map(|a| a.len).sum();
        let mut out = Vec::with_capacity(CHECKPOINT_MAGIC.len() + 4 + manifest.len() + 4 * floats);
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&(manifest.len() as u32).to_le_bytes());
        out.extend_from_slice(&manifest);
        for array in self.values() {
            for &x in array {
                out.extend_from_slice(&(x as f32).to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, ModelError> {
        let rest = bytes
            .strip_prefix(CHECKPOINT_MAGIC.as_slice())
            .ok_or_else(|| bad("missing KGESYM magic"))?;
        if rest.len() < 4 {
            return Err(bad("truncated manifest length"));
        }
        let (len, rest) = rest.split_at(4);
        let len = u32::from_le_bytes(len.try_into().unwrap()) as usize;
        if rest.len() < len {
            return Err(bad("truncated manifest"));
        }
        let (json, mut data) = rest.split_at(len);
        let manifest: CheckpointManifest =
            serde_json::from_slice(json).map_err(|e| bad(format!("manifest: {e}")))?;
        if manifest
            .symmetric_relations
            .iter()
            .any(|&r| r as usize >= manifest.relation_count)
        {
            return Err(bad("symmetric relation id out of range"));
        }
        let expected = expected_arrays(
            manifest.model_kind,
            manifest.dim,
            manifest.entity_count,
            manifest.relation_count,
            &manifest.symmetric_relations,
        );
        if expected != manifest.arrays {
            return Err(bad("array layout does not match model shape"));
        }

        let mut take = |n: usize| -> Result<Vec<f64>, ModelError> {
            if data.len() < 4 * n {
                return Err(bad("truncated array data"));
            }
            let (head, tail) = data.split_at(4 * n);
            data = tail;
            Ok(head
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
                .collect())
        };
        let kind = manifest.model_kind;
        let dim = manifest.dim;
        let entities = take(manifest.entity_count * dim)?;
        let entity_projections = match kind {
            ModelKind::TransD => Some(take(manifest.entity_count * dim)?),
            _ => None,
        };
        let mut slot = || -> Result<RelationSlot, ModelError> {
            Ok(RelationSlot {
                translation: take(dim)?,
                normal: if kind == ModelKind::TransH {
                    Some(take(dim)?)
                } else {
                    None
                },
                projection: if kind == ModelKind::TransD {
                    Some(take(dim)?)
                } else {
                    None
                },
            })
        };
        let mut relations = Vec::with_capacity(manifest.relation_count);
        for r in 0..manifest.relation_count as RelationId {
            if manifest.symmetric_relations.contains(&r) {
                let plus = slot()?;
                let minus = slot()?;
                relations.push(RelationParams::Pair { plus, minus });
            } else {
                relations.push(RelationParams::Single(slot()?));
            }
        }
        if !data.is_empty() {
            return Err(bad(format!("{} trailing bytes", data.len())));
        }
        let params = ModelParams::from_parts(kind, dim, entities, entity_projections, relations)?;
        if params.entity_count() != manifest.entity_count {
            return Err(bad("entity count does not match data"));
        }
        Ok(Checkpoint { manifest, params })
    }

    pub fn save(&self, path: &Path) -> Result<(), ModelError> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, ModelError> {
        Checkpoint::from_bytes(&fs::read(path)?)
    }
}
