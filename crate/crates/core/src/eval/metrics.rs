//! Per-query ranking metrics.

use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Mean of precision@k over the ranks k holding a relevant document,
/// normalized by the number of relevant documents present in the ranking.
pub fn average_precision(ranking: &[String], relevant: &BTreeSet<String>) -> f64 {
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (i, d) in ranking.iter().enumerate() {
        if relevant.contains(d) {
            hits += 1;
            sum += hits as f64 / (i + 1) as f64;
        }
    }
    if hits == 0 {
        0.0
    } else {
        sum / hits as f64
    }
}

pub fn reciprocal_rank(ranking: &[String], relevant: &BTreeSet<String>) -> f64 {
    ranking
        .iter()
        .position(|d| relevant.contains(d))
        .map_or(0.0, |i| 1.0 / (i + 1) as f64)
}

pub fn p_at_1(ranking: &[String], relevant: &BTreeSet<String>) -> f64 {
    match ranking.first() {
        Some(d) if relevant.contains(d) => 1.0,
        _ => 0.0,
    }
}

/// Pair counts behind P-imp for one query.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairCounts {
    /// Inverse pairs put in the right order by the new ranking.
    pub improved: usize,
    /// Correct pairs put in the wrong order by the new ranking.
    pub degraded: usize,
    /// Pairs (relevant, non-relevant) with the relevant one ranked lower
    /// originally.
    pub total_inverse: usize,
    pub total_correct: usize,
}

impl PairCounts {
    pub fn add(&mut self, other: PairCounts) {
        self.improved += other.improved;
        self.degraded += other.degraded;
        self.total_inverse += other.total_inverse;
        self.total_correct += other.total_correct;
    }

    /// `improved / total_inverse`, zero without inverse pairs.
    pub fn ratio(&self) -> f64 {
        if self.total_inverse == 0 {
            0.0
        } else {
            self.improved as f64 / self.total_inverse as f64
        }
    }
}

/// Compares two orderings of the same candidates over every
/// (relevant, non-relevant) pair.
pub fn p_improve(original: &[String], new: &[String], relevant: &BTreeSet<String>) -> Result<PairCounts> {
    let pos_new: HashMap<&str, usize> = new.iter().enumerate().map(|(i, d)| (d.as_str(), i)).collect();
    let same_set = original.len() == new.len()
        && pos_new.len() == new.len()
        && original.iter().all(|d| pos_new.contains_key(d.as_str()));
    if !same_set {
        return Err(Error::Data(
            "p_improve needs two orderings of the same candidates".into(),
        ));
    }
    let mut counts = PairCounts::default();
    for (i, pos) in original.iter().enumerate() {
        if !relevant.contains(pos) {
            continue;
        }
        for (j, neg) in original.iter().enumerate() {
            if relevant.contains(neg) {
                continue;
            }
            let new_order_right = pos_new[pos.as_str()] < pos_new[neg.as_str()];
            if i > j {
                counts.total_inverse += 1;
                if new_order_right {
                    counts.improved += 1;
                }
            } else {
                counts.total_correct += 1;
                if !new_order_right {
                    counts.degraded += 1;
                }
            }
        }
    }
    Ok(counts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::seq::SliceRandom;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn ids(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    fn rel(v: &[&str]) -> BTreeSet<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    /// Definitional oracles written over a 0/1 relevance vector.
    fn oracle_ap(flags: &[bool]) -> f64 {
        let r = flags.iter().filter(|&&f| f).count();
        if r == 0 {
            return 0.0;
        }
        let mut s = 0.0;
        for k in 1..=flags.len() {
            if flags[k - 1] {
                let prec = flags[..k].iter().filter(|&&f| f).count() as f64 / k as f64;
                s += prec;
            }
        }
        s / r as f64
    }

    fn oracle_rr(flags: &[bool]) -> f64 {
        for k in 1..=flags.len() {
            if flags[k - 1] {
                return 1.0 / k as f64;
            }
        }
        0.0
    }

    #[test]
    fn hand_examples() {
        let r = ids(&["a", "b", "c", "d", "e"]);
        assert_eq!(average_precision(&r, &rel(&["a"])), 1.0);
        let ap = average_precision(&r, &rel(&["a", "c"]));
        assert!((ap - (1.0 + 2.0 / 3.0) / 2.0).abs() < 1e-12);
        assert_eq!(average_precision(&r, &rel(&["z"])), 0.0);
        assert_eq!(reciprocal_rank(&r, &rel(&["b"])), 0.5);
        assert_eq!(p_at_1(&r, &rel(&["b"])), 0.0);
        assert_eq!((reciprocal_rank(&r, &rel(&["a"])), p_at_1(&r, &rel(&["a"]))), (1.0, 1.0));
        assert_eq!((reciprocal_rank(&r, &rel(&[])), p_at_1(&r, &rel(&[]))), (0.0, 0.0));
    }

    #[test]
    fn metrics_match_the_oracle_on_random_instances() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..1000 {
            let n = rng.gen_range(1..=20);
            let mut r: Vec<String> = (0..n).map(|i| format!("d{i}")).collect();
            r.shuffle(&mut rng);
            let relevant: BTreeSet<String> = (0..n).filter(|_| rng.gen_bool(0.3)).map(|i| format!("d{i}")).collect();
            let flags: Vec<bool> = r.iter().map(|d| relevant.contains(d)).collect();
            assert!((average_precision(&r, &relevant) - oracle_ap(&flags)).abs() < 1e-9);
            assert!((reciprocal_rank(&r, &relevant) - oracle_rr(&flags)).abs() < 1e-9);
            assert_eq!(p_at_1(&r, &relevant), if flags[0] { 1.0 } else { 0.0 });
        }
    }

    #[test]
    fn p_improve_examples() {
        let o = ids(&["n", "p"]);
        let c = p_improve(&o, &o, &rel(&["p"])).unwrap();
        assert_eq!((c.improved, c.degraded, c.total_inverse), (0, 0, 1));
        let c = p_improve(&o, &ids(&["p", "n"]), &rel(&["p"])).unwrap();
        assert_eq!((c.improved, c.total_inverse), (1, 1));
        // relevant at original rank 3 moved to rank 1: both pairs fixed
        let c = p_improve(&ids(&["a", "b", "r"]), &ids(&["r", "a", "b"]), &rel(&["r"])).unwrap();
        assert_eq!((c.improved, c.total_inverse), (2, 2));
        let c = p_improve(&ids(&["r", "a"]), &ids(&["a", "r"]), &rel(&["r"])).unwrap();
        assert_eq!((c.degraded, c.total_correct, c.total_inverse), (1, 1, 0));
        assert_eq!(c.ratio(), 0.0);
    }

    #[test]
    fn mismatched_candidates_are_rejected() {
        assert!(p_improve(&ids(&["a", "b"]), &ids(&["a", "c"]), &rel(&["a"])).is_err());
        assert!(p_improve(&ids(&["a", "b"]), &ids(&["a"]), &rel(&["a"])).is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn instance() -> impl Strategy<Value = (Vec<String>, BTreeSet<String>)> {
            (1usize..20).prop_flat_map(|n| {
                let ids: Vec<String> = (0..n).map(|i| format!("d{i}")).collect();
                (Just(ids.clone()).prop_shuffle(), proptest::sample::subsequence(ids, 0..=n))
                    .prop_map(|(r, rel)| (r, rel.into_iter().collect()))
            })
        }

        proptest! {
            #[test]
            fn metrics_stay_in_unit_interval((r, relevant) in instance()) {
                for v in [average_precision(&r, &relevant), reciprocal_rank(&r, &relevant), p_at_1(&r, &relevant)] {
                    prop_assert!((0.0..=1.0).contains(&v));
                }
            }

            #[test]
            fn identity_improves_nothing((r, relevant) in instance()) {
                let c = p_improve(&r, &r, &relevant).unwrap();
                prop_assert_eq!(c.improved, 0);
                prop_assert_eq!(c.degraded, 0);
                let n_rel = r.iter().filter(|d| relevant.contains(*d)).count();
                prop_assert_eq!(c.total_inverse + c.total_correct, n_rel * (r.len() - n_rel));
            }
        }
    }
}
