use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::rng;

/// Seeded shuffle followed by `k` contiguous, near-equal folds.
#[derive(Debug, Clone)]
pub struct KFold {
    order: Vec<usize>,
    k: usize,
}

impl KFold {
    pub fn new(len: usize, k: usize, seed: u64) -> Result<Self> {
        if k == 0 || k > len {
            return Err(Error::Config(format!(
                "fold count {k} must lie in 1..={len}"
            )));
        }
        let mut order: Vec<usize> = (0..len).collect();
        order.shuffle(&mut rng::child(seed, 0x6b66));
        Ok(KFold { order, k })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    fn bounds(&self, fold: usize) -> (usize, usize) {
        let n = self.order.len();
        (fold * n / self.k, (fold + 1) * n / self.k)
    }

    /// `(train, test)` indices for `fold`.
    pub fn split(&self, fold: usize) -> Result<(Vec<usize>, Vec<usize>)> {
        if fold >= self.k {
            return Err(Error::OutOfRange {
                index: fold,
                limit: self.k,
            });
        }
        let (lo, hi) = self.bounds(fold);
        let test = self.order[lo..hi].to_vec();
        let train = self.order[..lo]
            .iter()
            .chain(&self.order[hi..])
            .copied()
            .collect();
        Ok((train, test))
    }
}

/// Splits `items` into `(train, test)` for fold `fold` of `k`.
pub fn kfold<T: Clone>(items: &[T], k: usize, fold: usize, seed: u64) -> Result<(Vec<T>, Vec<T>)> {
    let (train, test) = KFold::new(items.len(), k, seed)?.split(fold)?;
    let pick = |ix: Vec<usize>| ix.into_iter().map(|i| items[i].clone()).collect();
    Ok((pick(train), pick(test)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn folds_partition_the_data() {
        let kf = KFold::new(103, 10, 1).unwrap();
        let mut seen = vec![0usize; 103];
        for f in 0..10 {
            let (train, test) = kf.split(f).unwrap();
            assert_eq!(train.len() + test.len(), 103);
            assert!((10..=11).contains(&test.len()));
            for &i in &test {
                seen[i] += 1;
                assert!(!train.contains(&i));
            }
        }
        assert!(seen.iter().all(|&c| c == 1));
    }

    #[test]
    fn hundred_into_ten() {
        let data: Vec<u32> = (0..100).collect();
        for f in 0..10 {
            let (train, test) = kfold(&data, 10, f, 3).unwrap();
            assert_eq!(test.len(), 10);
            assert_eq!(train.len(), 90);
        }
        assert_eq!(kfold(&data, 10, 4, 3).unwrap(), kfold(&data, 10, 4, 3).unwrap());
        assert_ne!(kfold(&data, 10, 4, 3).unwrap().1, kfold(&data, 10, 4, 4).unwrap().1);
    }

    #[test]
    fn out_of_range() {
        assert!(matches!(
            KFold::new(10, 10, 0).unwrap().split(10),
            Err(Error::OutOfRange { index: 10, limit: 10 })
        ));
        assert!(KFold::new(5, 6, 0).is_err());
        assert!(KFold::new(5, 0, 0).is_err());
    }
}
