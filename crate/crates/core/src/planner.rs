//! Replica planning: how many instances each component gets, whether its
//! replicas run concurrently or one after another, and the decision chain
//! that justifies the count.
//!
//! A component with failure probability `p` keeps creating backups while the
//! residual failure probability of the chain stays above the permissible
//! threshold `nabla`, so the total instance count `k` (primary included) is
//! the smallest integer with `p^k <= nabla`, floored at `mu` and at 1.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{ComponentGraph, ComponentId};
use crate::rank::RankTable;

/// Execution order of a component's replicas.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExecOrder {
    Parallel,
    Sequential,
}

impl ExecOrder {
    pub fn as_str(self) -> &'static str {
        match self {
            ExecOrder::Parallel => "parallel",
            ExecOrder::Sequential => "sequential",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Running,
    Rejected,
    Finished,
}

impl Status {
    pub fn code(self) -> u8 {
        match self {
            Status::Running => 1,
            Status::Rejected => 2,
            Status::Finished => 3,
        }
    }
}

/// Order dimension of a state; `Root` marks the primary of a component with
/// no predecessors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StateOrder {
    Root,
    Parallel,
    Sequential,
}

impl StateOrder {
    pub fn code(self) -> i8 {
        match self {
            StateOrder::Root => -1,
            StateOrder::Parallel => 0,
            StateOrder::Sequential => 1,
        }
    }
}

impl From<ExecOrder> for StateOrder {
    fn from(o: ExecOrder) -> Self {
        match o {
            ExecOrder::Parallel => StateOrder::Parallel,
            ExecOrder::Sequential => StateOrder::Sequential,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MdpState {
    pub component_id: ComponentId,
    /// 0 for the primary, `j` for the j-th backup.
    pub backup_index: u32,
    pub status: Status,
    pub exec_order: StateOrder,
    pub backup_count: u32,
}

impl MdpState {
    /// `(status, order, backups)` as the integer triple used in diagrams.
    pub fn triple(&self) -> (u8, i8, u32) {
        (self.status.code(), self.exec_order.code(), self.backup_count)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MdpAction {
    CreateBackup,
    Reject,
    Execute,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    /// Index into [`MdpChain::states`].
    pub from: usize,
    pub action: MdpAction,
    pub to: MdpState,
    pub probability: f64,
    /// The backup exists only because of the `mu` floor, not the threshold.
    #[serde(default)]
    pub forced_by_floor: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MdpChain {
    pub component_id: ComponentId,
    /// Success probability of a single instance.
    pub success_prob: f64,
    pub states: Vec<MdpState>,
    pub transitions: Vec<Transition>,
}

impl MdpChain {
    /// Product of the create-backup transition probabilities.
    pub fn backup_path_probability(&self) -> f64 {
        self.transitions
            .iter()
            .filter(|t| t.action == MdpAction::CreateBackup)
            .map(|t| t.probability)
            .product()
    }

    /// Terminal chain for a component that cannot be served at all.
    pub fn rejected(component_id: ComponentId, is_root: bool, order: ExecOrder) -> Self {
        let start = MdpState {
            component_id: component_id.clone(),
            backup_index: 0,
            status: Status::Running,
            exec_order: if is_root { StateOrder::Root } else { order.into() },
            backup_count: 0,
        };
        let end = MdpState {
            status: Status::Rejected,
            ..start.clone()
        };
        MdpChain {
            component_id,
            success_prob: 0.0,
            states: vec![start],
            transitions: vec![Transition {
                from: 0,
                action: MdpAction::Reject,
                to: end,
                probability: 1.0,
                forced_by_floor: false,
            }],
        }
    }
}

/// Smallest `k >= max(mu, 1)` with `failure_prob^k <= nabla`.
pub fn replica_count(failure_prob: f64, nabla: f64, mu: u32) -> Result<u32> {
    if !(nabla > 0.0 && nabla < 1.0) {
        return Err(Error::Validation(format!("permissible failure probability {nabla} outside (0,1)")));
    }
    if failure_prob == 0.0 {
        return Err(Error::DegenerateProbability {
            prob: failure_prob,
            guidance: "a component that never fails needs no backups; use k = max(mu, 1)",
        });
    }
    if failure_prob == 1.0 {
        return Err(Error::DegenerateProbability {
            prob: failure_prob,
            guidance: "a component that always fails cannot meet any threshold; reject it",
        });
    }
    if !(failure_prob > 0.0 && failure_prob < 1.0) {
        return Err(Error::Validation(format!("failure probability {failure_prob} outside (0,1)")));
    }
    let estimate = (nabla.ln() / failure_prob.ln()).ceil().max(1.0);
    let mut k = estimate as i32;
    // The log ratio can land one off at exact powers.
    while failure_prob.powi(k) > nabla {
        k += 1;
    }
    while k > 1 && failure_prob.powi(k - 1) <= nabla {
        k -= 1;
    }
    Ok((k as u32).max(mu).max(1))
}

/// Chain with `k` states for a component; `k` is taken as given.
pub fn chain_with_count(
    component_id: &ComponentId,
    failure_prob: f64,
    k: u32,
    is_root: bool,
    order: ExecOrder,
    nabla: f64,
) -> MdpChain {
    let states: Vec<MdpState> = (0..k)
        .map(|j| MdpState {
            component_id: component_id.clone(),
            backup_index: j,
            status: Status::Running,
            exec_order: if j == 0 && is_root { StateOrder::Root } else { order.into() },
            backup_count: j,
        })
        .collect();
    let mut transitions = Vec::with_capacity(2 * k as usize);
    for (j, state) in states.iter().enumerate() {
        transitions.push(Transition {
            from: j,
            action: MdpAction::Execute,
            to: MdpState {
                status: Status::Finished,
                ..state.clone()
            },
            probability: 1.0 - failure_prob,
            forced_by_floor: false,
        });
        if let Some(next) = states.get(j + 1) {
            transitions.push(Transition {
                from: j,
                action: MdpAction::CreateBackup,
                to: next.clone(),
                probability: failure_prob,
                forced_by_floor: failure_prob.powi(j as i32 + 1) <= nabla,
            });
        }
    }
    MdpChain {
        component_id: component_id.clone(),
        success_prob: 1.0 - failure_prob,
        states,
        transitions,
    }
}

/// Builds the backup chain for one component, sizing it with
/// [`replica_count`].
pub fn build_mdp_chain(
    component_id: &ComponentId,
    failure_prob: f64,
    is_root: bool,
    order: ExecOrder,
    nabla: f64,
    mu: u32,
) -> Result<MdpChain> {
    let k = replica_count(failure_prob, nabla, mu)?;
    Ok(chain_with_count(component_id, failure_prob, k, is_root, order, nabla))
}

/// Assigns parallel execution to the smallest prefix of whole rank classes
/// (best rank first) covering at least `parallel_fraction` of the
/// components; the rest run sequentially. Result is aligned with
/// `ranks.entries`.
pub fn assign_execution_order(ranks: &RankTable, parallel_fraction: f64) -> Vec<ExecOrder> {
    let n = ranks.entries.len();
    let target = parallel_fraction.clamp(0.0, 1.0) * n as f64 - 1e-9;
    let mut class_sizes: BTreeMap<u32, usize> = BTreeMap::new();
    for e in &ranks.entries {
        *class_sizes.entry(e.rank).or_default() += 1;
    }
    let mut covered = 0usize;
    let mut cutoff = 0u32;
    for (&rank, &size) in &class_sizes {
        if covered as f64 >= target {
            break;
        }
        covered += size;
        cutoff = rank;
    }
    ranks
        .entries
        .iter()
        .map(|e| {
            if e.rank <= cutoff {
                ExecOrder::Parallel
            } else {
                ExecOrder::Sequential
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlannerParams {
    pub nabla: f64,
    pub mu: u32,
    pub parallel_fraction: f64,
}

impl Default for PlannerParams {
    fn default() -> Self {
        PlannerParams {
            nabla: 0.007,
            mu: 0,
            parallel_fraction: 0.5,
        }
    }
}

/// How the instance count of each component is chosen.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CountPolicy {
    /// Minimal count meeting the threshold.
    Threshold,
    /// The same total instance count for every component.
    Fixed(u32),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OrderPolicy {
    RankPrefix(f64),
    AllParallel,
    AllSequential,
}

/// Per-component objective terms: resources for parallel replicas, restart
/// time for sequential ones, plus the residual failure probability.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Objective {
    pub cpu: f64,
    pub mem: f64,
    pub time: f64,
    pub residual_failure: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComponentPlan {
    pub component_id: ComponentId,
    pub rank: u32,
    pub failure_prob: f64,
    /// Total execution instances, primary included.
    pub k_total: u32,
    pub backups: u32,
    pub theta_p: u8,
    pub theta_s: u8,
    pub order: ExecOrder,
    pub is_root: bool,
    pub cpu_demand: u32,
    pub mem_demand: u32,
    pub restart_delay: f64,
    pub objective: Objective,
    pub chain: MdpChain,
}

impl ComponentPlan {
    /// VMs held while running: every instance when parallel, only the active
    /// one when sequential.
    pub fn vms_required(&self) -> u32 {
        match self.order {
            ExecOrder::Parallel => self.k_total,
            ExecOrder::Sequential => 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicaPlan {
    pub app_id: String,
    pub params: PlannerParams,
    /// Whether counts come from the threshold rule (minimality is checked).
    pub threshold_sized: bool,
    pub components: Vec<ComponentPlan>,
    /// Sum of `k_total`.
    pub total_instances: u32,
}

impl ReplicaPlan {
    pub fn component(&self, id: &ComponentId) -> Option<&ComponentPlan> {
        self.components.iter().find(|c| &c.component_id == id)
    }

    pub fn vms_required(&self) -> u32 {
        self.components.iter().map(ComponentPlan::vms_required).sum()
    }

    pub fn backups_by_order(&self, order: ExecOrder) -> u32 {
        self.components.iter().filter(|c| c.order == order).map(|c| c.backups).sum()
    }

    /// Checks the ordering and count constraints; returns one message per
    /// violation.
    pub fn constraint_violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        let p = &self.params;
        for c in &self.components {
            if c.theta_p + c.theta_s != 1 {
                out.push(format!("{}: theta_p + theta_s != 1", c.component_id));
            }
            if (c.theta_p == 1) != (c.order == ExecOrder::Parallel) {
                out.push(format!("{}: order flags disagree with order", c.component_id));
            }
            if c.k_total < p.mu.max(1) {
                out.push(format!("{}: k = {} below floor {}", c.component_id, c.k_total, p.mu.max(1)));
            }
            if c.backups + 1 != c.k_total || c.chain.states.len() != c.k_total as usize {
                out.push(format!("{}: chain length disagrees with k", c.component_id));
            }
            if self.threshold_sized {
                if c.failure_prob.powi(c.k_total as i32) > p.nabla {
                    out.push(format!("{}: residual failure above threshold", c.component_id));
                }
                if c.k_total > p.mu.max(1) && c.failure_prob.powi(c.k_total as i32 - 1) <= p.nabla {
                    out.push(format!("{}: k = {} is not minimal", c.component_id, c.k_total));
                }
            }
        }
        for a in &self.components {
            for b in &self.components {
                if a.rank == b.rank && a.order != b.order {
                    out.push(format!("{} and {} share rank {} but differ in order", a.component_id, b.component_id, a.rank));
                }
                if a.rank < b.rank && b.order == ExecOrder::Parallel && a.order == ExecOrder::Sequential {
                    out.push(format!(
                        "{} (rank {}) is sequential while lower-priority {} (rank {}) is parallel",
                        a.component_id, a.rank, b.component_id, b.rank
                    ));
                }
            }
        }
        let total: u32 = self.components.iter().map(|c| c.k_total).sum();
        if total != self.total_instances {
            out.push("total_instances != sum of k".into());
        }
        out
    }
}

/// Plans every component with the threshold rule and rank-prefix ordering,
/// using the Poisson failure probability of each component.
pub fn build_plan(graph: &ComponentGraph, ranks: &RankTable, params: &PlannerParams) -> Result<ReplicaPlan> {
    let probs: Vec<f64> = graph.components().iter().map(|c| c.failure_probability()).collect();
    plan_with(
        graph,
        ranks,
        &probs,
        params,
        CountPolicy::Threshold,
        OrderPolicy::RankPrefix(params.parallel_fraction),
    )
}

/// General planner; `failure_probs` is aligned with the graph's components.
pub fn plan_with(
    graph: &ComponentGraph,
    ranks: &RankTable,
    failure_probs: &[f64],
    params: &PlannerParams,
    count: CountPolicy,
    order: OrderPolicy,
) -> Result<ReplicaPlan> {
    if failure_probs.len() != graph.len() {
        return Err(Error::Validation("failure probabilities do not match component count".into()));
    }
    let orders_by_entry = match order {
        OrderPolicy::RankPrefix(f) => {
            if !(0.0..=1.0).contains(&f) {
                return Err(Error::Validation(format!("parallel fraction {f} outside [0,1]")));
            }
            assign_execution_order(ranks, f)
        }
        OrderPolicy::AllParallel => vec![ExecOrder::Parallel; ranks.entries.len()],
        OrderPolicy::AllSequential => vec![ExecOrder::Sequential; ranks.entries.len()],
    };
    let lookup: BTreeMap<&ComponentId, (u32, ExecOrder)> = ranks
        .entries
        .iter()
        .zip(&orders_by_entry)
        .map(|(e, &o)| (&e.component_id, (e.rank, o)))
        .collect();

    let mut components = Vec::with_capacity(graph.len());
    for (idx, c) in graph.components().iter().enumerate() {
        let &(rank, order) = lookup
            .get(&c.id)
            .ok_or_else(|| Error::Validation(format!("component {} missing from rank table", c.id)))?;
        let p = failure_probs[idx];
        let k = match count {
            CountPolicy::Threshold => replica_count(p, params.nabla, params.mu)?,
            CountPolicy::Fixed(k) => k.max(params.mu).max(1),
        };
        let is_root = graph.is_root(idx);
        let chain = chain_with_count(&c.id, p, k, is_root, order, params.nabla);
        let residual_failure = p.powi(k as i32);
        let objective = match order {
            ExecOrder::Parallel => Objective {
                cpu: k as f64 * c.cpu_demand as f64,
                mem: k as f64 * c.mem_demand as f64,
                time: 0.0,
                residual_failure,
            },
            ExecOrder::Sequential => Objective {
                cpu: 0.0,
                mem: 0.0,
                time: k as f64 * c.restart_delay,
                residual_failure,
            },
        };
        components.push(ComponentPlan {
            component_id: c.id.clone(),
            rank,
            failure_prob: p,
            k_total: k,
            backups: k - 1,
            theta_p: u8::from(order == ExecOrder::Parallel),
            theta_s: u8::from(order == ExecOrder::Sequential),
            order,
            is_root,
            cpu_demand: c.cpu_demand,
            mem_demand: c.mem_demand,
            restart_delay: c.restart_delay,
            objective,
            chain,
        });
    }
    let plan = ReplicaPlan {
        app_id: graph.app_id().to_owned(),
        params: *params,
        threshold_sized: count == CountPolicy::Threshold,
        total_instances: components.iter().map(|c| c.k_total).sum(),
        components,
    };
    let violations = plan.constraint_violations();
    if !violations.is_empty() {
        let msg = format!("plan for {}: {}", plan.app_id, violations.join("; "));
        debug_assert!(false, "{msg}");
        return Err(Error::Invariant(msg));
    }
    Ok(plan)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::tests::graph;
    use crate::rank::tests::record;
    use crate::rank::{rank_components, RankEntry, RankStrategy};

    #[test]
    fn worked_example_counts() {
        assert_eq!(replica_count(0.19, 0.007, 0).unwrap(), 3);
        assert_eq!(replica_count(0.08, 0.007, 0).unwrap(), 2);
        assert_eq!(replica_count(0.5, 0.5, 0).unwrap(), 1);
        assert_eq!(replica_count(0.05, 0.007, 0).unwrap(), 2);
    }

    #[test]
    fn floor_applies() {
        assert_eq!(replica_count(0.001, 0.007, 0).unwrap(), 1);
        assert_eq!(replica_count(0.001, 0.007, 2).unwrap(), 2);
        assert_eq!(replica_count(0.19, 0.007, 5).unwrap(), 5);
    }

    #[test]
    fn degenerate_probabilities_rejected() {
        assert!(matches!(replica_count(0.0, 0.007, 0), Err(Error::DegenerateProbability { .. })));
        assert!(matches!(replica_count(1.0, 0.007, 0), Err(Error::DegenerateProbability { .. })));
        assert!(replica_count(0.3, 0.0, 0).is_err());
        assert!(replica_count(0.3, 1.0, 0).is_err());
        assert!(replica_count(f64::NAN, 0.1, 0).is_err());
    }

    #[test]
    fn worked_example_chain() {
        let chain = build_mdp_chain(&"c1".into(), 0.19, true, ExecOrder::Parallel, 0.007, 0).unwrap();
        let triples: Vec<_> = chain.states.iter().map(MdpState::triple).collect();
        assert_eq!(triples, vec![(1, -1, 0), (1, 0, 1), (1, 0, 2)]);
        let first = chain
            .transitions
            .iter()
            .find(|t| t.from == 0 && t.action == MdpAction::CreateBackup)
            .unwrap();
        assert_eq!(first.probability, 0.19);
        assert_eq!(first.to.triple(), (1, 0, 1));

        let chain = build_mdp_chain(&"c2".into(), 0.08, false, ExecOrder::Sequential, 0.007, 0).unwrap();
        assert_eq!(chain.states.len(), 2);
        assert_eq!(chain.states[1].triple(), (1, 1, 1));
    }

    #[test]
    fn low_probability_chain_is_primary_only() {
        let chain = build_mdp_chain(&"x".into(), 0.005, true, ExecOrder::Parallel, 0.007, 0).unwrap();
        assert_eq!(chain.states.len(), 1);
        assert!(chain.transitions.iter().all(|t| t.action == MdpAction::Execute));
        let exec = &chain.transitions[0];
        assert_eq!(exec.to.status, Status::Finished);
        assert!((exec.probability - 0.995).abs() < 1e-15);
    }

    #[test]
    fn floor_forced_backups_are_marked() {
        let chain = build_mdp_chain(&"x".into(), 0.005, true, ExecOrder::Parallel, 0.007, 2).unwrap();
        let create: Vec<_> = chain
            .transitions
            .iter()
            .filter(|t| t.action == MdpAction::CreateBackup)
            .collect();
        assert_eq!(create.len(), 1);
        assert!(create[0].forced_by_floor);
    }

    #[test]
    fn rejected_chain() {
        let chain = MdpChain::rejected("x".into(), false, ExecOrder::Sequential);
        assert_eq!(chain.transitions[0].action, MdpAction::Reject);
        assert_eq!(chain.transitions[0].to.status.code(), 2);
    }

    fn table(ranks: &[u32]) -> RankTable {
        RankTable {
            strategy: RankStrategy::Rrft,
            entries: ranks
                .iter()
                .enumerate()
                .map(|(i, &rank)| RankEntry {
                    component_id: format!("c{i}").as_str().into(),
                    omega: 0.0,
                    app_failure_prob: 0.0,
                    score: None,
                    rank,
                })
                .collect(),
        }
    }

    #[test]
    fn execution_order_prefix() {
        use ExecOrder::*;
        let t = table(&[1, 1, 2, 3]);
        assert_eq!(assign_execution_order(&t, 0.5), vec![Parallel, Parallel, Sequential, Sequential]);
        assert_eq!(assign_execution_order(&t, 1.0), vec![Parallel; 4]);
        assert_eq!(assign_execution_order(&t, 0.0), vec![Sequential; 4]);
        // 0.6 * 4 = 2.4 needs the second class too
        assert_eq!(assign_execution_order(&t, 0.6), vec![Parallel, Parallel, Parallel, Sequential]);
        assert_eq!(assign_execution_order(&table(&[1, 1, 1]), 0.1), vec![Parallel; 3]);
    }

    #[test]
    fn plan_totals_and_floor() {
        let g = graph(&["A", "B", "C"], &[("A", "B"), ("B", "C")]);
        let recs = g.significance_values();
        let ranks = rank_components(&recs).unwrap();
        let params = PlannerParams::default();
        let plan = plan_with(&g, &ranks, &[0.19, 0.08, 0.05], &params, CountPolicy::Threshold, OrderPolicy::RankPrefix(0.5))
            .unwrap();
        let ks: Vec<u32> = plan.components.iter().map(|c| c.k_total).collect();
        assert_eq!(ks, vec![3, 2, 2]);
        assert_eq!(plan.total_instances, 7);

        let low = plan_with(&g, &ranks, &[0.001, 0.002, 0.003], &params, CountPolicy::Threshold, OrderPolicy::AllParallel)
            .unwrap();
        assert_eq!(low.total_instances, 3);

        let floored = PlannerParams { mu: 2, ..params };
        let plan = plan_with(&g, &ranks, &[0.001, 0.002, 0.003], &floored, CountPolicy::Threshold, OrderPolicy::AllParallel)
            .unwrap();
        assert!(plan.components.iter().all(|c| c.k_total == 2));
    }

    #[test]
    fn objective_terms_follow_order() {
        let g = graph(&["A", "B"], &[("A", "B")]);
        let ranks = rank_components(&[record("A", 0.5, 0.5), record("B", 0.1, 0.1)]).unwrap();
        let plan = plan_with(&g, &ranks, &[0.19, 0.19], &PlannerParams::default(), CountPolicy::Threshold, OrderPolicy::RankPrefix(0.5))
            .unwrap();
        let a = &plan.components[0];
        assert_eq!(a.order, ExecOrder::Parallel);
        assert_eq!(a.objective.cpu, 3.0 * a.cpu_demand as f64);
        assert_eq!(a.vms_required(), 3);
        let b = &plan.components[1];
        assert_eq!(b.order, ExecOrder::Sequential);
        assert_eq!(b.objective.time, 3.0 * b.restart_delay);
        assert_eq!(b.vms_required(), 1);
        assert_eq!(plan.vms_required(), 4);
    }
}
