//! Small generated datasets for tests and demonstrations.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{DataError, Triple, TripleStore, Vocab};

/// A two-sided symmetric relation ("spouse"-like): every fact links a left
/// entity to a right entity and holds in both directions.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SymmetricFixture {
    pub left: usize,
    pub right: usize,
    /// Unordered pairs; each contributes a forward and a reverse triple.
    pub pairs: usize,
    /// Fraction of pairs whose reverse triple is moved to the test split.
    pub holdout: f64,
    pub seed: u64,
}

impl Default for SymmetricFixture {
    fn default() -> Self {
        SymmetricFixture {
            left: 20,
            right: 20,
            pairs: 200,
            holdout: 0.0,
            seed: 17,
        }
    }
}

impl SymmetricFixture {
    pub fn held_out_pairs(&self) -> usize {
        (self.holdout * self.pairs as f64).round() as usize
    }

    /// Builds the store. Entities are named `l0..` and `r0..`, the relation `spouse`.
    pub fn build(&self) -> Result<TripleStore, DataError> {
        let mut names: Vec<String> = (0..self.left).map(|i| format!("l{i}")).collect();
        names.extend((0..self.right).map(|i| format!("r{i}")));
        let entities = Vocab::from_names(names);
        let relations = Vocab::from_names(["spouse"]);

        let offset = self.left as u32;
        let mut candidates: Vec<(u32, u32)> = (0..self.left as u32)
            .flat_map(|l| (0..self.right as u32).map(move |r| (l, offset + r)))
            .collect();
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        candidates.shuffle(&mut rng);
        let chosen = &candidates[..self.pairs.min(candidates.len())];
        let holdout = self.held_out_pairs().min(chosen.len());

        let mut train = Vec::with_capacity(2 * chosen.len());
        let mut test = Vec::with_capacity(holdout);
        for (i, &(l, r)) in chosen.iter().enumerate() {
            let forward = Triple::new(l, 0, r);
            train.push(forward);
            if i < holdout {
                test.push(forward.reversed());
            } else {
                train.push(forward.reversed());
            }
        }
        TripleStore::new(entities, relations, train, Vec::new(), test)
    }
}
