//! The end-to-end algorithm for one application: rank, plan, place. Errors
//! carry the number of the step that raised them.

use serde::{Deserialize, Serialize};

use crate::datacenter::Datacenter;
use crate::error::{Error, Result};
use crate::graph::{ComponentGraph, SignificanceRecord};
use crate::placement::{audit_rules, place_application, PlacementMap, PlacementMode};
use crate::planner::{build_plan, PlannerParams, ReplicaPlan};
use crate::rank::{rank_components, RankTable};

fn at<T>(line: u8, step: &'static str, r: Result<T>) -> Result<T> {
    r.map_err(|e| Error::Pipeline {
        line,
        step,
        source: Box::new(e),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ranking {
    pub distance: Vec<Vec<u32>>,
    pub significance: Vec<SignificanceRecord>,
    pub ranks: RankTable,
    /// Component indices by rank, ties by id.
    pub sorted: Vec<usize>,
}

/// Steps 1 to 8: distances, impact and probability terms, rank, sort.
pub fn rank_application(app: &ComponentGraph) -> Result<Ranking> {
    let distance = app.distance_matrix();
    let significance = app.significance_values();
    for r in &significance {
        let finite = [r.failure_impact, r.acc_failure_impact, r.failure_prob, r.most_significant_value, r.app_failure_prob]
            .iter()
            .all(|v| v.is_finite());
        if !finite {
            let line = if !r.acc_failure_impact.is_finite() { 3 } else { 4 };
            return at(
                line,
                "failure terms",
                Err(Error::Validation(format!("component {} has non-finite failure terms", r.component_id))),
            );
        }
    }
    let ranks = at(7, "rank components", rank_components(&significance))?;
    let mut sorted: Vec<usize> = (0..app.len()).collect();
    sorted.sort_by(|&a, &b| {
        let (ea, eb) = (&ranks.entries[a], &ranks.entries[b]);
        ea.rank.cmp(&eb.rank).then_with(|| ea.component_id.cmp(&eb.component_id))
    });
    Ok(Ranking {
        distance,
        significance,
        ranks,
        sorted,
    })
}

/// Step 9: backup counts and execution order for each component.
pub fn plan_application(app: &ComponentGraph, ranking: &Ranking, params: &PlannerParams) -> Result<ReplicaPlan> {
    at(9, "backup count and order", build_plan(app, &ranking.ranks, params))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineOutput {
    pub ranking: Ranking,
    pub plan: ReplicaPlan,
    pub placement: PlacementMap,
}

/// Runs every step on `app` and places its instances on `dc`. On error the
/// datacenter is left unchanged.
pub fn run_pipeline(
    app: &ComponentGraph,
    params: &PlannerParams,
    mode: PlacementMode,
    dc: &mut Datacenter,
) -> Result<PipelineOutput> {
    let ranking = rank_application(app)?;
    let plan = plan_application(app, &ranking, params)?;
    let mut placement = PlacementMap::new(mode);
    at(11, "placement", place_application(&mut placement, &plan, dc))?;
    let violations = audit_rules(&placement, std::slice::from_ref(&plan));
    if let Some(v) = violations.first() {
        return at(11, "placement", Err(Error::Invariant(format!("placement breaks {:?} at {}", v.rule, v.first))));
    }
    Ok(PipelineOutput {
        ranking,
        plan,
        placement,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datacenter::DatacenterConfig;
    use crate::graph::tests::{comp, graph};
    use crate::graph::ComponentGraph;

    fn dc() -> Datacenter {
        Datacenter::build(&DatacenterConfig::default()).unwrap()
    }

    #[test]
    fn three_component_example() {
        // exposures chosen so the failure probabilities are 0.19, 0.08, 0.08
        let mut comps = vec![comp("c1"), comp("c2"), comp("c3")];
        for (c, x) in comps.iter_mut().zip([0.2326, 0.0877, 0.0877]) {
            c.active_duration = 1.0;
            c.failure_rate = x;
        }
        let g = ComponentGraph::new("app", comps, &[("c1".into(), "c2".into()), ("c1".into(), "c3".into())]).unwrap();
        let out = run_pipeline(&g, &PlannerParams::default(), PlacementMode::Strict, &mut dc()).unwrap();
        let backups: Vec<u32> = out.plan.components.iter().map(|c| c.backups).collect();
        assert_eq!(backups, vec![2, 1, 1]);
        assert_eq!(out.placement.len(), 3 + 2 + 2);
        assert_eq!(out.ranking.sorted.len(), 3);
    }

    #[test]
    fn negligible_failure_gets_primaries_only() {
        let mut g = graph(&["a", "b", "c"], &[("a", "b"), ("b", "c")]).to_document();
        for c in &mut g.components {
            c.failure_rate = 1e-6;
        }
        let g = ComponentGraph::try_from(g).unwrap();
        let out = run_pipeline(&g, &PlannerParams::default(), PlacementMode::Strict, &mut dc()).unwrap();
        assert!(out.plan.components.iter().all(|c| c.k_total == 1));
    }

    #[test]
    fn errors_carry_the_step() {
        let mut d = graph(&["a", "b"], &[("a", "b")]).to_document();
        d.components[0].failure_rate = 0.0;
        let g = ComponentGraph::try_from(d).unwrap();
        let err = run_pipeline(&g, &PlannerParams::default(), PlacementMode::Strict, &mut dc()).unwrap_err();
        assert!(matches!(err, Error::Pipeline { line: 9, .. }), "{err}");
        assert_eq!(err.exit_code(), 2);

        let g = graph(&["a", "b"], &[("a", "b")]);
        let mut tiny = Datacenter::build(&DatacenterConfig {
            num_pods: 1,
            machines_per_pod: 1,
            ..Default::default()
        })
        .unwrap();
        let before = tiny.clone();
        let err = run_pipeline(&g, &PlannerParams::default(), PlacementMode::Strict, &mut tiny).unwrap_err();
        assert!(matches!(err, Error::Pipeline { line: 11, .. }));
        assert_eq!(err.exit_code(), 3);
        assert_eq!(tiny, before);
    }
}
