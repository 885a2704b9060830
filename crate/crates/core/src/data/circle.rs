use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{DataError, RelationId, Triple, TripleStore};

/// Draws `n` reflexive probes `(e, r_s, e)` with `e` uniform over entities and
/// `r_s` uniform over `symmetric`, with replacement.
pub fn generate_circle_set(
    store: &TripleStore,
    symmetric: &BTreeSet<RelationId>,
    n: usize,
    seed: u64,
) -> Result<Vec<Triple>, DataError> {
    if symmetric.is_empty() {
        return Err(DataError::EmptySymmetricSet);
    }
    if n == 0 {
        return Err(DataError::EmptyCircleRequest);
    }
    if store.entity_count() == 0 {
        return Err(DataError::NoEntities);
    }
    if let Some(&bad) = symmetric
        .iter()
        .find(|&&r| r as usize >= store.relation_count())
    {
        return Err(DataError::UnknownRelation(bad));
    }
    let relations: Vec<RelationId> = symmetric.iter().copied().collect();
    let entities = store.entity_count() as u32;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..n)
        .map(|_| {
            let e = rng.gen_range(0..entities);
            let r = relations[rng.gen_range(0..relations.len())];
            Triple::new(e, r, e)
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store() -> TripleStore {
        TripleStore::from_named(
            &[("a", "r", "b"), ("b", "r", "a"), ("c", "q", "a"), ("d", "s", "d")],
            &[],
            &[],
        )
        .unwrap()
    }

    #[test]
    fn single_entity_single_relation_is_forced() {
        let s = TripleStore::from_named(&[("e0", "r0", "e0")], &[], &[]).unwrap();
        let set = generate_circle_set(&s, &BTreeSet::from([0]), 1, 7).unwrap();
        assert_eq!(set, vec![Triple::new(0, 0, 0)]);
    }

    #[test]
    fn draws_are_reflexive_over_requested_relations() {
        let s = store();
        let rels = BTreeSet::from([0, 2]);
        let set = generate_circle_set(&s, &rels, 500, 1).unwrap();
        assert_eq!(set.len(), 500);
        assert!(set.iter().all(|t| t.is_reflexive() && rels.contains(&t.relation)));
        let used: BTreeSet<_> = set.iter().map(|t| t.relation).collect();
        assert_eq!(used, rels);
        let heads: BTreeSet<_> = set.iter().map(|t| t.head).collect();
        assert_eq!(heads.len(), s.entity_count());
    }

    #[test]
    fn deterministic_in_seed() {
        let s = store();
        let rels = BTreeSet::from([0, 1]);
        let a = generate_circle_set(&s, &rels, 100, 42).unwrap();
        let b = generate_circle_set(&s, &rels, 100, 42).unwrap();
        let c = generate_circle_set(&s, &rels, 100, 43).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn rejects_empty_requests() {
        let s = store();
        assert!(matches!(
            generate_circle_set(&s, &BTreeSet::new(), 5, 0),
            Err(DataError::EmptySymmetricSet)
        ));
        assert!(matches!(
            generate_circle_set(&s, &BTreeSet::from([0]), 0, 0),
            Err(DataError::EmptyCircleRequest)
        ));
        assert!(matches!(
            generate_circle_set(&s, &BTreeSet::from([9]), 3, 0),
            Err(DataError::UnknownRelation(9))
        ));
    }
}
