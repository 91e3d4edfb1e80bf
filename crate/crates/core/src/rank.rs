//! Component ranking: the dual-list round-robin merge plus two baseline
//! rankers used for comparison runs.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{ComponentGraph, ComponentId, SignificanceRecord};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RankStrategy {
    Rrft,
    FtcloudLike,
    RocloudLike,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankEntry {
    pub component_id: ComponentId,
    pub omega: f64,
    pub app_failure_prob: f64,
    /// Baseline score the rank was derived from; absent for the dual-list merge.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub score: Option<f64>,
    /// Dense rank, 1 is the highest priority.
    pub rank: u32,
}

/// Ranks for every component of one application, in the input order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankTable {
    pub strategy: RankStrategy,
    pub entries: Vec<RankEntry>,
}

impl RankTable {
    pub fn rank_of(&self, id: &ComponentId) -> Option<u32> {
        self.entries.iter().find(|e| &e.component_id == id).map(|e| e.rank)
    }

    pub fn max_rank(&self) -> u32 {
        self.entries.iter().map(|e| e.rank).max().unwrap_or(0)
    }

    /// Component ids grouped by rank, highest priority first.
    pub fn classes(&self) -> BTreeMap<u32, Vec<ComponentId>> {
        let mut out: BTreeMap<u32, Vec<ComponentId>> = BTreeMap::new();
        for e in &self.entries {
            out.entry(e.rank).or_default().push(e.component_id.clone());
        }
        for ids in out.values_mut() {
            ids.sort();
        }
        out
    }

    /// Every rank from 1 to the maximum is used and ids are unique.
    pub fn is_dense(&self) -> bool {
        let used: BTreeSet<u32> = self.entries.iter().map(|e| e.rank).collect();
        let ids: BTreeSet<&ComponentId> = self.entries.iter().map(|e| &e.component_id).collect();
        ids.len() == self.entries.len() && used.iter().copied().eq(1..=self.max_rank())
    }
}

/// Order of `idx` by descending `key`, ties by ascending id.
fn sorted_desc(records: &[SignificanceRecord], key: impl Fn(&SignificanceRecord) -> f64) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..records.len()).collect();
    idx.sort_by(|&a, &b| {
        key(&records[b])
            .partial_cmp(&key(&records[a]))
            .unwrap_or(Ordering::Equal)
            .then_with(|| records[a].component_id.cmp(&records[b].component_id))
    });
    idx
}

/// Merges the Ω-sorted and P̈-sorted lists round by round: each round takes
/// the best unranked component of each list and gives both the round number.
pub fn rank_components(records: &[SignificanceRecord]) -> Result<RankTable> {
    rank_components_ordered(records, false)
}

pub(crate) fn rank_components_ordered(records: &[SignificanceRecord], app_list_first: bool) -> Result<RankTable> {
    for r in records {
        if !r.most_significant_value.is_finite() || !r.app_failure_prob.is_finite() {
            return Err(Error::Validation(format!("non-finite score for component {}", r.component_id)));
        }
    }
    let by_omega = sorted_desc(records, |r| r.most_significant_value);
    let by_app = sorted_desc(records, |r| r.app_failure_prob);
    let lists = if app_list_first { [&by_app, &by_omega] } else { [&by_omega, &by_app] };

    let mut rank = vec![0u32; records.len()];
    let mut cursor = [0usize; 2];
    let mut remaining = records.len();
    let mut round = 0u32;
    while remaining > 0 {
        round += 1;
        let mut picks = Vec::with_capacity(2);
        for (list, pos) in lists.iter().zip(cursor.iter_mut()) {
            while *pos < list.len() && rank[list[*pos]] != 0 {
                *pos += 1;
            }
            if let Some(&c) = list.get(*pos) {
                picks.push(c);
            }
        }
        for c in picks {
            if rank[c] == 0 {
                rank[c] = round;
                remaining -= 1;
            }
        }
    }

    Ok(RankTable {
        strategy: RankStrategy::Rrft,
        entries: records
            .iter()
            .zip(rank)
            .map(|(r, rank)| RankEntry {
                component_id: r.component_id.clone(),
                omega: r.most_significant_value,
                app_failure_prob: r.app_failure_prob,
                score: None,
                rank,
            })
            .collect(),
    })
}

/// Dense ranks by descending key; equal keys share a rank.
pub fn dense_rank_desc<K: PartialOrd + Copy>(keys: &[K]) -> Vec<u32> {
    let mut distinct: Vec<K> = Vec::new();
    for &k in keys {
        if !distinct.iter().any(|d| d.partial_cmp(&k) == Some(Ordering::Equal)) {
            distinct.push(k);
        }
    }
    distinct.sort_by(|a, b| b.partial_cmp(a).unwrap_or(Ordering::Equal));
    keys.iter()
        .map(|k| {
            distinct
                .iter()
                .position(|d| d.partial_cmp(k) == Some(Ordering::Equal))
                .map_or(0, |p| p as u32 + 1)
        })
        .collect()
}

/// Structure-only baseline: components invoked (transitively) by more
/// components rank higher; `critical` components are promoted ahead of all
/// others.
pub fn rank_ftcloud_like(graph: &ComponentGraph, critical: &BTreeSet<ComponentId>) -> RankTable {
    let reach = graph.reachability_in_degree();
    let keys: Vec<(u8, usize)> = graph
        .components()
        .iter()
        .zip(&reach)
        .map(|(c, &r)| (u8::from(critical.contains(&c.id)), r))
        .collect();
    let ranks = dense_rank_desc(&keys);
    RankTable {
        strategy: RankStrategy::FtcloudLike,
        entries: graph
            .components()
            .iter()
            .zip(reach.iter().zip(ranks))
            .map(|(c, (&r, rank))| RankEntry {
                component_id: c.id.clone(),
                omega: 0.0,
                app_failure_prob: 0.0,
                score: Some(r as f64),
                rank,
            })
            .collect(),
    }
}

/// Baseline by accumulated failure impact (failure rate × failure impact).
pub fn rank_rocloud_like(records: &[SignificanceRecord]) -> RankTable {
    let keys: Vec<f64> = records.iter().map(|r| r.acc_failure_impact).collect();
    let ranks = dense_rank_desc(&keys);
    RankTable {
        strategy: RankStrategy::RocloudLike,
        entries: records
            .iter()
            .zip(ranks)
            .map(|(r, rank)| RankEntry {
                component_id: r.component_id.clone(),
                omega: r.most_significant_value,
                app_failure_prob: r.app_failure_prob,
                score: Some(r.acc_failure_impact),
                rank,
            })
            .collect(),
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::graph::tests::graph;

    pub(crate) fn record(id: &str, omega: f64, app: f64) -> SignificanceRecord {
        SignificanceRecord {
            component_id: id.into(),
            psi: 0.0,
            failure_impact: 0.0,
            acc_failure_impact: 0.0,
            failure_prob: 0.0,
            mean_app_failure: 0.0,
            app_failure_prob: app,
            most_significant_value: omega,
            no_failure_history: false,
        }
    }

    pub(crate) fn ranking_example() -> Vec<SignificanceRecord> {
        vec![
            record("c1", 0.023, 0.455),
            record("c2", 0.115, 0.617),
            record("c3", 0.008, 0.922),
            record("c4", 0.0674, 0.514),
        ]
    }

    fn ranks(t: &RankTable) -> Vec<u32> {
        t.entries.iter().map(|e| e.rank).collect()
    }

    #[test]
    fn reproduces_worked_ranking_example() {
        let t = rank_components(&ranking_example()).unwrap();
        assert_eq!(ranks(&t), vec![3, 1, 1, 2]);
        assert!(t.is_dense());
    }

    #[test]
    fn list_order_within_round_is_irrelevant() {
        let recs = ranking_example();
        assert_eq!(
            ranks(&rank_components_ordered(&recs, false).unwrap()),
            ranks(&rank_components_ordered(&recs, true).unwrap())
        );
    }

    #[test]
    fn singleton_and_empty() {
        assert_eq!(ranks(&rank_components(&[record("x", 0.1, 0.1)]).unwrap()), vec![1]);
        assert!(rank_components(&[]).unwrap().entries.is_empty());
    }

    #[test]
    fn dominant_component_ranks_first() {
        let t = rank_components(&[record("a", 0.1, 0.01), record("b", 0.5, 0.05)]).unwrap();
        assert_eq!(ranks(&t), vec![2, 1]);
    }

    #[test]
    fn ties_break_by_id() {
        let t = rank_components(&[record("b", 0.1, 0.1), record("a", 0.1, 0.1), record("c", 0.0, 0.0)]).unwrap();
        assert_eq!(ranks(&t), vec![2, 1, 3]);
    }

    #[test]
    fn rejects_non_finite_scores() {
        assert!(rank_components(&[record("a", f64::NAN, 0.1)]).is_err());
    }

    #[test]
    fn ftcloud_chain() {
        let g = graph(&["A", "B", "C"], &[("A", "B"), ("B", "C")]);
        assert_eq!(ranks(&rank_ftcloud_like(&g, &BTreeSet::new())), vec![3, 2, 1]);
        let crit = BTreeSet::from([ComponentId::from("A")]);
        assert_eq!(ranks(&rank_ftcloud_like(&g, &crit)), vec![1, 3, 2]);
    }

    #[test]
    fn dense_rank_total_tie() {
        assert_eq!(dense_rank_desc(&[2.0, 2.0, 2.0]), vec![1, 1, 1]);
        assert_eq!(dense_rank_desc(&[1.0, 3.0, 1.0, 2.0]), vec![3, 1, 3, 2]);
    }

    #[test]
    fn rocloud_orders_by_accumulated_impact() {
        let mut a = record("a", 0.0, 0.0);
        a.acc_failure_impact = 3.0;
        let mut b = record("b", 0.0, 0.0);
        b.acc_failure_impact = 1.0;
        let sink = record("s", 0.0, 0.0);
        let t = rank_rocloud_like(&[a.clone(), b, sink]);
        assert_eq!(ranks(&t), vec![1, 2, 3]);
        let t = rank_rocloud_like(&[a.clone(), a]);
        assert_eq!(ranks(&t), vec![1, 1]);
    }
}
