use std::collections::BTreeMap;

use super::score::{dot, Scratch};
use super::{ModelError, ModelKind, ModelParams, Norm, ParamBlock};
use crate::data::Triple;

/// Sparse gradient: one dense vector per touched parameter block.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Gradients {
    blocks: BTreeMap<ParamBlock, Vec<f64>>,
}

impl Gradients {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn get(&self, block: ParamBlock) -> Option<&[f64]> {
        self.blocks.get(&block).map(Vec::as_slice)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&ParamBlock, &[f64])> {
        self.blocks.iter().map(|(b, v)| (b, v.as_slice()))
    }

    pub fn blocks(&self) -> impl Iterator<Item = &ParamBlock> {
        self.blocks.keys()
    }

    pub fn clear(&mut self) {
        self.blocks.clear();
    }

    fn add_scaled(&mut self, block: ParamBlock, scale: f64, v: &[f64]) {
        let acc = self
            .blocks
            .entry(block)
            .or_insert_with(|| vec![0.0; v.len()]);
        for (a, x) in acc.iter_mut().zip(v) {
            *a += scale * x;
        }
    }

    /// `θ ← θ - rate·∇` for every block.
    pub fn apply(&self, params: &mut ModelParams, rate: f64) {
        for (&block, grad) in &self.blocks {
            let target = params
                .block_mut(block)
                .expect("gradient blocks come from the same parameter set");
            for (p, g) in target.iter_mut().zip(grad) {
                *p -= rate * g;
            }
        }
    }
}

/// `∂‖diff‖/∂diff`; zero at L1 kinks and at the L2 zero vector.
fn norm_gradient(diff: &[f64], norm: Norm) -> Vec<f64> {
    match norm {
        Norm::L1 => diff
            .iter()
            .map(|&x| {
                if x > 0.0 {
                    1.0
                } else if x < 0.0 {
                    -1.0
                } else {
                    0.0
                }
            })
            .collect(),
        Norm::L2 => {
            let n = dot(diff, diff).sqrt();
            if n == 0.0 {
                vec![0.0; diff.len()]
            } else {
                diff.iter().map(|x| x / n).collect()
            }
        }
    }
}

/// Adds `sign · ∂f(triple)/∂θ` to `out`, routing through the selected slot.
/// Returns the score.
fn accumulate_score_gradient(
    params: &ModelParams,
    triple: &Triple,
    norm: Norm,
    sign: f64,
    out: &mut Gradients,
    scratch: &mut Scratch,
) -> f64 {
    let selected = params.score_with(triple, norm, scratch);
    let branch = selected.branch;
    let slot = params
        .relation(triple.relation)
        .slot(branch)
        .expect("selected branch exists");
    let (h_id, t_id, r_id) = (triple.head, triple.tail, triple.relation);
    let r = &slot.translation;

    params.project_entity(h_id, slot, &mut scratch.head);
    params.project_entity(t_id, slot, &mut scratch.tail);
    let diff: Vec<f64> = scratch
        .head
        .iter()
        .zip(r)
        .zip(&scratch.tail)
        .map(|((h, r), t)| h + r - t)
        .collect();
    let g = norm_gradient(&diff, norm);

    out.add_scaled(ParamBlock::Translation(r_id, branch), sign, &g);
    let h = params.entity(h_id);
    let t = params.entity(t_id);
    match params.kind() {
        ModelKind::TransE => {
            out.add_scaled(ParamBlock::Entity(h_id), sign, &g);
            out.add_scaled(ParamBlock::Entity(t_id), -sign, &g);
        }
        ModelKind::TransH => {
            let w = slot.normal.as_deref().expect("TransH slot has a normal");
            let u: Vec<f64> = h.iter().zip(t).map(|(h, t)| h - t).collect();
            let gw = dot(&g, w);
            let wu = dot(w, &u);
            let g_entity: Vec<f64> = g.iter().zip(w).map(|(g, w)| g - gw * w).collect();
            let g_normal: Vec<f64> = u
                .iter()
                .zip(&g)
                .map(|(u, g)| -gw * u - wu * g)
                .collect();
            out.add_scaled(ParamBlock::Entity(h_id), sign, &g_entity);
            out.add_scaled(ParamBlock::Entity(t_id), -sign, &g_entity);
            out.add_scaled(ParamBlock::Normal(r_id, branch), sign, &g_normal);
        }
        ModelKind::TransD => {
            let rp = slot.projection.as_deref().expect("TransD slot has a projection");
            let hp = params.entity_projection(h_id).expect("TransD entity projection");
            let tp = params.entity_projection(t_id).expect("TransD entity projection");
            let q = dot(&g, rp);
            let a = dot(hp, h);
            let c = dot(tp, t);
            let g_head: Vec<f64> = g.iter().zip(hp).map(|(g, p)| g + q * p).collect();
            let g_tail: Vec<f64> = g.iter().zip(tp).map(|(g, p)| g + q * p).collect();
            out.add_scaled(ParamBlock::Entity(h_id), sign, &g_head);
            out.add_scaled(ParamBlock::EntityProjection(h_id), sign * q, h);
            out.add_scaled(ParamBlock::Entity(t_id), -sign, &g_tail);
            out.add_scaled(ParamBlock::EntityProjection(t_id), -sign * q, t);
            out.add_scaled(ParamBlock::RelationProjection(r_id, branch), sign * (a - c), &g);
        }
    }
    selected.value
}

pub(crate) fn check_pair(
    params: &ModelParams,
    pos: &Triple,
    neg: &Triple,
    margin: f64,
) -> Result<(), ModelError> {
    if pos.relation != neg.relation {
        return Err(ModelError::RelationMismatch {
            positive: pos.relation,
            negative: neg.relation,
        });
    }
    if margin.is_nan() || margin <= 0.0 {
        return Err(ModelError::InvalidMargin(margin));
    }
    params.check_triple(pos)?;
    params.check_triple(neg)
}

/// Hinge `[margin + f(pos) - f(neg)]₊` and, when positive, its gradient added
/// into `out`. Inputs are assumed validated.
pub(crate) fn accumulate_pair_gradient(
    params: &ModelParams,
    pos: &Triple,
    neg: &Triple,
    margin: f64,
    norm: Norm,
    out: &mut Gradients,
    scratch: &mut Scratch,
) -> f64 {
    let f_pos = params.score_with(pos, norm, scratch).value;
    let f_neg = params.score_with(neg, norm, scratch).value;
    let loss = margin + f_pos - f_neg;
    if loss <= 0.0 {
        return 0.0;
    }
    accumulate_score_gradient(params, pos, norm, 1.0, out, scratch);
    accumulate_score_gradient(params, neg, norm, -1.0, out, scratch);
    loss
}

/// Margin ranking loss of one (positive, negative) pair and its gradient with
/// respect to exactly the parameters it touches. The gradient set is empty
/// when the hinge is inactive. For pair relations only the selected slot of
/// each triple receives gradient.
pub fn gradients(
    params: &ModelParams,
    pos: &Triple,
    neg: &Triple,
    margin: f64,
    norm: Norm,
) -> Result<(f64, Gradients), ModelError> {
    check_pair(params, pos, neg, margin)?;
    let mut out = Gradients::new();
    let mut scratch = Scratch::new(params.dim());
    let loss = accumulate_pair_gradient(params, pos, neg, margin, norm, &mut out, &mut scratch);
    Ok((loss, out))
}

#[cfg(test)]
mod tests {
    use std::collections::BTreeSet;

    use super::*;
    use crate::models::{Branch, RelationParams, RelationSlot};

    fn touched_branch(grads: &Gradients) -> Vec<Branch> {
        grads
            .blocks()
            .filter_map(|b| match b {
                ParamBlock::Translation(_, br) => Some(*br),
                _ => None,
            })
            .collect()
    }

    fn transe(entities: Vec<f64>, r: Vec<f64>) -> ModelParams {
        ModelParams::from_parts(
            ModelKind::TransE,
            2,
            entities,
            None,
            vec![RelationParams::Single(RelationSlot {
                translation: r,
                normal: None,
                projection: None,
            })],
        )
        .unwrap()
    }

    #[test]
    fn satisfied_margin_gives_empty_gradient() {
        let p = transe(vec![0.0, 0.0, 5.0, 5.0], vec![0.0, 0.0]);
        let (loss, g) = gradients(&p, &Triple::new(0, 0, 0), &Triple::new(0, 0, 1), 1.0, Norm::L2)
            .unwrap();
        assert_eq!(loss, 0.0);
        assert!(g.is_empty());
    }

    #[test]
    fn translation_example_loss_and_gradient() {
        // h = t = (0,0), r = (1,0), corrupted tail (1,0): f(pos) = 1, f(neg) = 0.
        let p = transe(vec![0.0, 0.0, 1.0, 0.0], vec![1.0, 0.0]);
        let (loss, g) = gradients(&p, &Triple::new(0, 0, 0), &Triple::new(0, 0, 1), 1.0, Norm::L2)
            .unwrap();
        assert_eq!(loss, 2.0);
        // Positive diff (1,0) -> unit (1,0); negative diff is the zero vector -> 0.
        assert_eq!(g.get(ParamBlock::Translation(0, Branch::Single)), Some(&[1.0, 0.0][..]));
        // Head and tail of the positive are the same entity: contributions cancel.
        assert_eq!(g.get(ParamBlock::Entity(0)), Some(&[0.0, 0.0][..]));
        assert_eq!(g.get(ParamBlock::Entity(1)), Some(&[0.0, 0.0][..]));
    }

    #[test]
    fn relation_mismatch_and_bad_margin_rejected() {
        let p = ModelParams::init(3, 2, &BTreeSet::new(), ModelKind::TransE, 2, 0).unwrap();
        assert!(matches!(
            gradients(&p, &Triple::new(0, 0, 1), &Triple::new(0, 1, 1), 1.0, Norm::L1),
            Err(ModelError::RelationMismatch { .. })
        ));
        assert!(matches!(
            gradients(&p, &Triple::new(0, 0, 1), &Triple::new(0, 0, 2), 0.0, Norm::L1),
            Err(ModelError::InvalidMargin(_))
        ));
    }

    #[test]
    fn pair_routes_gradient_to_selected_branch_only() {
        let p = ModelParams::from_parts(
            ModelKind::TransE,
            2,
            vec![0.0, 0.0, 0.0, 0.2, 0.9, 0.9],
            None,
            vec![RelationParams::Pair {
                plus: RelationSlot {
                    translation: vec![0.0, 0.7],
                    normal: None,
                    projection: None,
                },
                minus: RelationSlot {
                    translation: vec![0.0, 0.25],
                    normal: None,
                    projection: None,
                },
            }],
        )
        .unwrap();
        // pos (0,r,1) selects minus; neg (0,r,2) selects plus (closer to (0.9,0.9)).
        let (loss, g) =
            gradients(&p, &Triple::new(0, 0, 1), &Triple::new(0, 0, 2), 5.0, Norm::L1).unwrap();
        assert!(loss > 0.0);
        assert_eq!(touched_branch(&g), vec![Branch::Plus, Branch::Minus]);

        let (_, g) =
            gradients(&p, &Triple::new(0, 0, 1), &Triple::new(0, 0, 0), 5.0, Norm::L1).unwrap();
        assert_eq!(touched_branch(&g), vec![Branch::Minus]);
    }
}
