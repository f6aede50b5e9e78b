//! Seeded split of a dataset into a large and a small, annotated part.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::scenario::AgentType;

use super::{AgentKey, PropagationError};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetItem {
    pub key: AgentKey,
    pub agent_type: AgentType,
}

/// `t1` is propagated to, `t2` is annotated. Both keep input order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub t1: Vec<AgentKey>,
    pub t2: Vec<AgentKey>,
}

/// Relative share of vehicles, pedestrians and cyclists in the small split.
pub const DEFAULT_TYPE_RATIO: [u32; 3] = [9, 3, 3];

/// Splits off `round(fraction * n)` items, at least one. With `type_ratio` the small split
/// is drawn per agent type with quotas apportioned by largest remainder;
/// a type that runs short hands its leftover quota to the others.
pub fn split_dataset(
    items: &[DatasetItem],
    fraction: f64,
    seed: u64,
    type_ratio: Option<[u32; 3]>,
) -> Result<DatasetSplit, PropagationError> {
    if items.is_empty() {
        return Err(PropagationError::EmptyDataset);
    }
    if !(fraction > 0.0 && fraction < 0.5) {
        return Err(PropagationError::InvalidFraction(fraction));
    }
    let n2 = ((fraction * items.len() as f64).round() as usize).max(1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut chosen = vec![false; items.len()];

    match type_ratio {
        None => {
            let mut idx: Vec<usize> = (0..items.len()).collect();
            idx.shuffle(&mut rng);
            for &i in &idx[..n2] {
                chosen[i] = true;
            }
        }
        Some(ratio) => {
            let mut pools: Vec<Vec<usize>> = AgentType::ALL
                .iter()
                .map(|t| (0..items.len()).filter(|&i| items[i].agent_type == *t).collect())
                .collect();
            let avail: Vec<usize> = pools.iter().map(Vec::len).collect();
            let quotas = apportion(n2, ratio, &avail);
            for (pool, q) in pools.iter_mut().zip(quotas) {
                pool.shuffle(&mut rng);
                for &i in &pool[..q] {
                    chosen[i] = true;
                }
            }
        }
    }

    let mut split = DatasetSplit { t1: Vec::new(), t2: Vec::new() };
    for (item, c) in items.iter().zip(chosen) {
        if c {
            split.t2.push(item.key.clone());
        } else {
            split.t1.push(item.key.clone());
        }
    }
    Ok(split)
}

/// Largest-remainder apportionment of `total` by `weights`, capped by
/// availability. Ties in remainder go to the earlier type.
pub fn apportion(total: usize, weights: [u32; 3], avail: &[usize]) -> Vec<usize> {
    let mut quota = vec![0usize; 3];
    let mut remaining = total.min(avail.iter().sum());
    let mut open: Vec<usize> = (0..3).filter(|&i| avail[i] > 0 && weights[i] > 0).collect();
    if open.is_empty() {
        open = (0..3).filter(|&i| avail[i] > 0).collect();
    }
    while remaining > 0 && !open.is_empty() {
        let wsum: f64 = open.iter().map(|&i| weights[i].max(1) as f64).sum();
        let mut share: Vec<(usize, usize, f64)> = open
            .iter()
            .map(|&i| {
                let exact = remaining as f64 * weights[i].max(1) as f64 / wsum;
                (i, exact.floor() as usize, exact - exact.floor())
            })
            .collect();
        let mut left = remaining - share.iter().map(|s| s.1).sum::<usize>();
        let mut by_rem: Vec<usize> = (0..share.len()).collect();
        by_rem.sort_by(|&a, &b| share[b].2.total_cmp(&share[a].2).then(share[a].0.cmp(&share[b].0)));
        for k in by_rem {
            if left == 0 {
                break;
            }
            share[k].1 += 1;
            left -= 1;
        }
        for (i, want, _) in share {
            let take = want.min(avail[i] - quota[i]);
            quota[i] += take;
            remaining -= take;
        }
        open.retain(|&i| quota[i] < avail[i]);
    }
    quota
}

#[cfg(test)]
mod tests {
    use super::*;

    fn items(counts: [usize; 3]) -> Vec<DatasetItem> {
        let mut v = Vec::new();
        for (t, &c) in AgentType::ALL.iter().zip(&counts) {
            for i in 0..c {
                v.push(DatasetItem { key: AgentKey::new(format!("{t}-{i}"), "ego"), agent_type: *t });
            }
        }
        v
    }

    #[test]
    fn seven_of_a_thousand() {
        let s = split_dataset(&items([1000, 0, 0]), 0.007, 1, None).unwrap();
        assert_eq!((s.t1.len(), s.t2.len()), (993, 7));
        assert_eq!(s, split_dataset(&items([1000, 0, 0]), 0.007, 1, None).unwrap());
        assert_ne!(s.t2, split_dataset(&items([1000, 0, 0]), 0.007, 2, None).unwrap().t2);
    }

    #[test]
    fn stratified_counts_follow_ratio() {
        let data = items([900, 300, 300]);
        let s = split_dataset(&data, 0.007, 5, Some(DEFAULT_TYPE_RATIO)).unwrap();
        let n2 = s.t2.len();
        assert_eq!(n2, 11);
        for (ti, w) in [9.0, 3.0, 3.0].iter().enumerate() {
            let prefix = AgentType::ALL[ti].to_string();
            let got = s.t2.iter().filter(|k| k.scenario_id.starts_with(&format!("{prefix}-"))).count() as f64;
            assert!((got - n2 as f64 * w / 15.0).abs() <= 1.0, "{prefix}: {got}");
        }
    }

    #[test]
    fn apportion_caps_and_redistributes() {
        assert_eq!(apportion(15, [9, 3, 3], &[100, 100, 100]), vec![9, 3, 3]);
        assert_eq!(apportion(15, [9, 3, 3], &[100, 1, 100]), vec![11, 1, 3]);
        assert_eq!(apportion(5, [9, 3, 3], &[0, 0, 2]), vec![0, 0, 2]);
        assert_eq!(apportion(4, [9, 3, 3], &[10, 10, 10]).iter().sum::<usize>(), 4);
    }

    #[test]
    fn bad_inputs() {
        assert!(matches!(split_dataset(&[], 0.1, 0, None), Err(PropagationError::EmptyDataset)));
        assert!(matches!(split_dataset(&items([10, 0, 0]), 0.5, 0, None), Err(PropagationError::InvalidFraction(_))));
    }
}
