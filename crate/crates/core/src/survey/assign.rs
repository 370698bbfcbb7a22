use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{ItemPool, JudgmentTask, SurveyError};
use crate::bt::AbilityDimension;

/// Order-independent key for an agent pair.
pub fn pair_key(a: &str, b: &str) -> String {
    if a <= b {
        format!("{a}|{b}")
    } else {
        format!("{b}|{a}")
    }
}

/// Assignment counts per item and agent pair. Counts only grow.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CoverageLedger {
    counts: BTreeMap<String, BTreeMap<String, u64>>,
}

impl CoverageLedger {
    pub fn item_coverage(&self, item_id: &str) -> u64 {
        self.counts.get(item_id).map_or(0, |m| m.values().sum())
    }

    pub fn pair_coverage(&self, item_id: &str, a: &str, b: &str) -> u64 {
        self.counts
            .get(item_id)
            .and_then(|m| m.get(&pair_key(a, b)))
            .copied()
            .unwrap_or(0)
    }

    pub fn record(&mut self, task: &JudgmentTask) {
        if task.calibration {
            return;
        }
        *self
            .counts
            .entry(task.item_id.clone())
            .or_default()
            .entry(pair_key(&task.left.agent, &task.right.agent))
            .or_default() += 1;
    }

    /// (min, max) item coverage over the given items.
    pub fn spread<'a>(&self, items: impl IntoIterator<Item = &'a str>) -> (u64, u64) {
        let mut lo = u64::MAX;
        let mut hi = 0;
        for id in items {
            let c = self.item_coverage(id);
            lo = lo.min(c);
            hi = hi.max(c);
        }
        if lo == u64::MAX {
            (0, 0)
        } else {
            (lo, hi)
        }
    }
}

/// Picks `session_size` least-covered items, one least-covered agent pair
/// per item and a random presentation order. Ties fall to a shuffle seeded
/// by `seed`. The ledger is not modified.
pub fn assign_tasks(
    pool: &ItemPool,
    ledger: &CoverageLedger,
    session_size: usize,
    seed: u64,
) -> Result<Vec<JudgmentTask>, SurveyError> {
    if pool.len() < session_size {
        return Err(SurveyError::PoolTooSmall {
            required: session_size,
            available: pool.len(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..pool.len()).collect();
    order.shuffle(&mut rng);
    order.sort_by_key(|&i| ledger.item_coverage(&pool.items()[i].item.item_id));
    order.truncate(session_size);
    order.shuffle(&mut rng);

    let pairs = pool.agent_pairs();
    let mut tasks = Vec::with_capacity(session_size);
    for i in order {
        let item = &pool.items()[i];
        let id = &item.item.item_id;
        let mut cand: Vec<usize> = (0..pairs.len()).collect();
        cand.shuffle(&mut rng);
        cand.sort_by_key(|&k| ledger.pair_coverage(id, pairs[k].0, pairs[k].1));
        let (mut a, mut b) = pairs[cand[0]];
        if rng.random_bool(0.5) {
            std::mem::swap(&mut a, &mut b);
        }
        tasks.push(JudgmentTask {
            item_id: id.clone(),
            context: item.item.context.clone(),
            student_utterance: item.item.student_utterance.clone(),
            left: item.replies[a].clone(),
            right: item.replies[b].clone(),
            abilities: AbilityDimension::ALL,
            calibration: false,
        });
    }
    Ok(tasks)
}

#[cfg(test)]
mod tests {
    use super::super::pool::tests::synthetic_pool;
    use super::*;
    use proptest::prelude::*;

    fn run_sessions(pool: &ItemPool, n: usize, size: usize, seed: u64) -> (CoverageLedger, Vec<JudgmentTask>) {
        let mut ledger = CoverageLedger::default();
        let mut all = Vec::new();
        for s in 0..n {
            let tasks = assign_tasks(pool, &ledger, size, seed.wrapping_add(s as u64)).unwrap();
            for t in &tasks {
                ledger.record(t);
            }
            all.extend(tasks);
        }
        (ledger, all)
    }

    #[test]
    fn single_item_pool() {
        let pool = synthetic_pool(1, &["teacher", "b", "c"]);
        let tasks = assign_tasks(&pool, &CoverageLedger::default(), 1, 3).unwrap();
        assert_eq!(tasks.len(), 1);
        assert_eq!(tasks[0].item_id, "item-000");
        assert_ne!(tasks[0].left.agent, tasks[0].right.agent);
    }

    #[test]
    fn too_small() {
        let pool = synthetic_pool(3, &["teacher", "b"]);
        assert!(matches!(
            assign_tasks(&pool, &CoverageLedger::default(), 4, 0),
            Err(SurveyError::PoolTooSmall {
                required: 4,
                available: 3
            })
        ));
    }

    #[test]
    fn deterministic() {
        let pool = synthetic_pool(20, &["teacher", "b", "c"]);
        let (ledger, _) = run_sessions(&pool, 3, 15, 1);
        assert_eq!(
            assign_tasks(&pool, &ledger, 15, 99).unwrap(),
            assign_tasks(&pool, &ledger, 15, 99).unwrap()
        );
    }

    #[test]
    fn distinct_items_within_session() {
        let pool = synthetic_pool(52, &["teacher", "b", "c"]);
        let tasks = assign_tasks(&pool, &CoverageLedger::default(), 15, 5).unwrap();
        let mut ids: Vec<_> = tasks.iter().map(|t| &t.item_id).collect();
        ids.sort();
        ids.dedup();
        assert_eq!(ids.len(), 15);
    }

    #[test]
    fn calibration_not_counted() {
        let pool = synthetic_pool(2, &["teacher", "b"]);
        let mut ledger = CoverageLedger::default();
        ledger.record(pool.calibration());
        assert_eq!(ledger, CoverageLedger::default());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn spread_bounded(n_items in 1usize..30, size_frac in 0.0f64..1.0, sessions in 0usize..25, seed in any::<u64>()) {
            let size = ((n_items as f64 * size_frac) as usize).max(1);
            let pool = synthetic_pool(n_items, &["teacher", "b", "c"]);
            let (ledger, tasks) = run_sessions(&pool, sessions, size, seed);
            let (lo, hi) = ledger.spread(pool.items().iter().map(|i| i.item.item_id.as_str()));
            prop_assert!(hi - lo <= 1);
            prop_assert!(hi - lo <= size as u64);
            for t in &tasks {
                prop_assert_ne!(&t.left.agent, &t.right.agent);
            }
        }
    }
}
