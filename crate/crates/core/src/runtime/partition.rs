use std::ops::Range;

use crate::transport::LocalityId;

/// Block distribution of `n` indices over `L` localities: locality `k` owns
/// `[k*block, min((k+1)*block, n))` with `block = ceil(n / L)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PartitionMap {
    n: usize,
    localities: usize,
    block: usize,
    // log2(block) when block is a power of two, to avoid a division per lookup.
    shift: Option<u32>,
}

impl PartitionMap {
    /// Panics if `localities` is zero.
    pub fn new(n: usize, localities: usize) -> Self {
        assert!(localities > 0, "partition over zero localities");
        let block = n.div_ceil(localities);
        PartitionMap {
            n,
            localities,
            block,
            shift: block.is_power_of_two().then(|| block.trailing_zeros()),
        }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn localities(&self) -> usize {
        self.localities
    }

    pub fn block(&self) -> usize {
        self.block
    }

    #[inline]
    pub fn owner(&self, i: usize) -> LocalityId {
        debug_assert!(i < self.n);
        let k = match self.shift {
            Some(s) => i >> s,
            None => i / self.block,
        };
        LocalityId(k.min(self.localities - 1) as u32)
    }

    /// Indices owned by `k`; empty for trailing localities when `n` is small.
    pub fn range(&self, k: LocalityId) -> Range<usize> {
        let k = k.index();
        let start = (k * self.block).min(self.n);
        let end = if k + 1 == self.localities {
            self.n
        } else {
            ((k + 1) * self.block).min(self.n)
        };
        start..end
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn ten_over_four() {
        let p = PartitionMap::new(10, 4);
        assert_eq!(p.block(), 3);
        let owners: Vec<u32> = (0..10).map(|i| p.owner(i).0).collect();
        assert_eq!(owners, [0, 0, 0, 1, 1, 1, 2, 2, 2, 3]);
        assert_eq!(p.range(LocalityId(3)), 9..10);
    }

    #[test]
    fn fewer_indices_than_localities() {
        let p = PartitionMap::new(3, 8);
        assert_eq!(p.block(), 1);
        assert_eq!((0..3).map(|i| p.owner(i).0).collect::<Vec<_>>(), [0, 1, 2]);
        for k in 3..8 {
            assert!(p.range(LocalityId(k)).is_empty());
        }
    }

    #[test]
    fn single_locality_owns_all() {
        let p = PartitionMap::new(17, 1);
        assert_eq!(p.range(LocalityId(0)), 0..17);
        assert!((0..17).all(|i| p.owner(i) == LocalityId(0)));
    }

    proptest! {
        #[test]
        fn ranges_tile_and_agree_with_owner(n in 0usize..5000, l in 1usize..65) {
            let p = PartitionMap::new(n, l);
            let mut next = 0;
            for k in 0..l {
                let r = p.range(LocalityId(k as u32));
                prop_assert_eq!(r.start, next);
                for i in r.clone() {
                    prop_assert_eq!(p.owner(i).index(), k);
                }
                next = r.end;
            }
            prop_assert_eq!(next, n);
        }
    }
}
