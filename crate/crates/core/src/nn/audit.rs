use std::ops::Add;

use crate::nn::store::ParamStore;
use crate::tensor::ParamId;

/// Parameter counts split by whether the optimizer may touch them.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ParamAudit {
    pub total: usize,
    pub trainable: usize,
    pub non_trainable: usize,
}

impl ParamAudit {
    /// Counts each listed tensor once; duplicates in `ids` are ignored.
    pub fn of(store: &ParamStore, ids: &[ParamId]) -> Self {
        let mut seen = ids.to_vec();
        seen.sort();
        seen.dedup();
        seen.into_iter().fold(Self::default(), |acc, id| {
            let n = store.value(id).len();
            if store.trainable(id) {
                acc + Self { total: n, trainable: n, non_trainable: 0 }
            } else {
                acc + Self { total: n, trainable: 0, non_trainable: n }
            }
        })
    }

    pub fn of_store(store: &ParamStore) -> Self {
        let ids: Vec<_> = store.ids().collect();
        Self::of(store, &ids)
    }

    pub fn is_consistent(&self) -> bool {
        self.trainable + self.non_trainable == self.total
    }
}

impl Add for ParamAudit {
    type Output = Self;

    fn add(self, rhs: Self) -> Self {
        Self {
            total: self.total + rhs.total,
            trainable: self.trainable + rhs.trainable,
            non_trainable: self.non_trainable + rhs.non_trainable,
        }
    }
}
