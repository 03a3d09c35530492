use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::RegionIndex;

pub const DEFAULT_QUOTA: u64 = 200;

/// Which per-agent counter orders agents from least to most trained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RankBy {
    /// Iterations granted so far. Independent of worker timing, so grants
    /// are reproducible under the threaded scheduler.
    #[default]
    Granted,
    /// Iterations actually completed.
    Trained,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BudgetPolicy {
    /// Iterations handed out per fed frame.
    pub quota: u64,
    pub rank_by: RankBy,
}

impl Default for BudgetPolicy {
    fn default() -> Self {
        BudgetPolicy {
            quota: DEFAULT_QUOTA,
            rank_by: RankBy::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BudgetCandidate {
    pub region: RegionIndex,
    /// Training progress under the policy's [`RankBy`].
    pub progress: u64,
    /// Whether this agent received data in the current feed.
    pub touched: bool,
}

/// Splits `quota` among touched agents, favouring the least trained.
///
/// Touched agents strictly below the median progress of all agents are
/// eligible; when there are none, the least-trained touched agents are.
/// Eligible agents are dense-ranked by progress (rank 1 = least trained)
/// and weighted `R + 1 − rank`. Grants are floored and the remainder goes
/// to the heaviest agent, ties broken by lowest region index.
pub fn assign_budgets(candidates: &[BudgetCandidate], quota: u64) -> BTreeMap<RegionIndex, u64> {
    let touched: Vec<&BudgetCandidate> = candidates.iter().filter(|c| c.touched).collect();
    if touched.is_empty() || quota == 0 {
        return BTreeMap::new();
    }
    let mut all: Vec<u64> = candidates.iter().map(|c| c.progress).collect();
    all.sort_unstable();
    let n = all.len();
    // Twice the median, to stay in integers.
    let median2 = if n % 2 == 1 {
        2 * all[n / 2]
    } else {
        all[n / 2 - 1] + all[n / 2]
    };

    let mut eligible: Vec<&BudgetCandidate> = touched
        .iter()
        .copied()
        .filter(|c| 2 * c.progress < median2)
        .collect();
    if eligible.is_empty() {
        let min = touched.iter().map(|c| c.progress).min().expect("non-empty");
        eligible = touched.into_iter().filter(|c| c.progress == min).collect();
    }

    let mut levels: Vec<u64> = eligible.iter().map(|c| c.progress).collect();
    levels.sort_unstable();
    levels.dedup();
    let r = levels.len() as u64;
    let weight = |c: &BudgetCandidate| {
        r + 1 - (levels.binary_search(&c.progress).expect("present") as u64 + 1)
    };
    let total_weight: u64 = eligible.iter().map(|c| weight(c)).sum();

    let mut grants: BTreeMap<RegionIndex, u64> = eligible
        .iter()
        .map(|c| (c.region, quota * weight(c) / total_weight))
        .collect();
    let remainder = quota - grants.values().sum::<u64>();
    if remainder > 0 {
        let first = eligible
            .iter()
            .max_by(|a, b| weight(a).cmp(&weight(b)).then(b.region.cmp(&a.region)))
            .expect("non-empty");
        *grants.get_mut(&first.region).expect("granted") += remainder;
    }
    grants
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cand(x: u32, progress: u64, touched: bool) -> BudgetCandidate {
        BudgetCandidate {
            region: RegionIndex::new(x, 0, 0),
            progress,
            touched,
        }
    }

    #[test]
    fn single_agent_takes_quota() {
        let g = assign_budgets(&[cand(0, 12345, true)], 200);
        assert_eq!(g[&RegionIndex::new(0, 0, 0)], 200);
    }

    #[test]
    fn lagging_agent_takes_all() {
        let g = assign_budgets(&[cand(0, 1000, true), cand(1, 0, true)], 200);
        assert_eq!(g.get(&RegionIndex::new(0, 0, 0)), None);
        assert_eq!(g[&RegionIndex::new(1, 0, 0)], 200);
    }

    #[test]
    fn equal_agents_split_with_remainder_to_lowest_index() {
        let g = assign_budgets(
            &[cand(2, 50, true), cand(0, 50, true), cand(1, 50, true)],
            200,
        );
        assert_eq!(g[&RegionIndex::new(0, 0, 0)], 68);
        assert_eq!(g[&RegionIndex::new(1, 0, 0)], 66);
        assert_eq!(g[&RegionIndex::new(2, 0, 0)], 66);
    }

    #[test]
    fn untouched_agents_get_nothing() {
        let g = assign_budgets(&[cand(0, 0, false), cand(1, 10, true)], 200);
        assert_eq!(g.len(), 1);
        assert_eq!(g[&RegionIndex::new(1, 0, 0)], 200);
        assert!(assign_budgets(&[cand(0, 0, false)], 200).is_empty());
    }

    #[test]
    fn less_trained_get_more() {
        let c = [
            cand(0, 0, true),
            cand(1, 10, true),
            cand(2, 20, true),
            cand(3, 500, true),
            cand(4, 900, true),
        ];
        let g = assign_budgets(&c, 200);
        assert!(g[&RegionIndex::new(0, 0, 0)] > g[&RegionIndex::new(1, 0, 0)]);
        assert!(!g.contains_key(&RegionIndex::new(2, 0, 0)));
        assert!(!g.contains_key(&RegionIndex::new(3, 0, 0)));
        assert_eq!(g.values().sum::<u64>(), 200);
    }
}
