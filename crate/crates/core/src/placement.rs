//! Rule-based placement of primaries and replicas onto physical machines,
//! a random baseline, and an exhaustive rule auditor.
//!
//! Rules:
//! 1. strict mode: a machine hosts at most one instance of an application;
//!    relaxed mode drops this except as implied by rules 2 and 3.
//! 2. a replica never shares a machine with its primary.
//! 3. two replicas of one primary never share a machine.
//! 4. a primary and all its replicas live in one pod.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::IndexedRandom;
use serde::{Deserialize, Serialize};

use crate::datacenter::{Datacenter, InstanceId};
use crate::error::{Error, Result};
use crate::planner::{ExecOrder, ReplicaPlan};
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlacementMode {
    #[default]
    Strict,
    Relaxed,
}

impl std::str::FromStr for PlacementMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "strict" => Ok(PlacementMode::Strict),
            "relaxed" => Ok(PlacementMode::Relaxed),
            other => Err(Error::Validation(format!("unknown placement mode {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Assignment {
    pub instance: InstanceId,
    pub pm: usize,
    pub pod: usize,
    /// False for sequential standbys, which hold a slot but no capacity.
    pub reserved: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct PlacementDocument {
    mode: PlacementMode,
    assignments: Vec<Assignment>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(from = "PlacementDocument", into = "PlacementDocument")]
pub struct PlacementMap {
    pub mode: PlacementMode,
    assignments: BTreeMap<InstanceId, Assignment>,
}

impl From<PlacementDocument> for PlacementMap {
    fn from(doc: PlacementDocument) -> Self {
        PlacementMap {
            mode: doc.mode,
            assignments: doc.assignments.into_iter().map(|a| (a.instance.clone(), a)).collect(),
        }
    }
}

impl From<PlacementMap> for PlacementDocument {
    fn from(map: PlacementMap) -> Self {
        PlacementDocument {
            mode: map.mode,
            assignments: map.assignments.into_values().collect(),
        }
    }
}

impl PlacementMap {
    pub fn new(mode: PlacementMode) -> Self {
        PlacementMap {
            mode,
            assignments: BTreeMap::new(),
        }
    }

    pub fn get(&self, instance: &InstanceId) -> Option<&Assignment> {
        self.assignments.get(instance)
    }

    pub fn assignments(&self) -> impl Iterator<Item = &Assignment> {
        self.assignments.values()
    }

    pub fn len(&self) -> usize {
        self.assignments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.assignments.is_empty()
    }

    /// Inserts or overwrites an assignment without touching any datacenter.
    pub fn insert(&mut self, a: Assignment) {
        self.assignments.insert(a.instance.clone(), a);
    }

    /// Reserved VMs per application.
    pub fn vms_per_app(&self) -> BTreeMap<&str, usize> {
        let mut out: BTreeMap<&str, usize> = BTreeMap::new();
        for a in self.assignments.values().filter(|a| a.reserved) {
            *out.entry(a.instance.app.as_str()).or_default() += 1;
        }
        out
    }

    /// Distinct machines hosting reserved VMs, per application.
    pub fn pms_per_app(&self) -> BTreeMap<&str, usize> {
        let mut sets: BTreeMap<&str, BTreeSet<usize>> = BTreeMap::new();
        for a in self.assignments.values().filter(|a| a.reserved) {
            sets.entry(a.instance.app.as_str()).or_default().insert(a.pm);
        }
        sets.into_iter().map(|(k, v)| (k, v.len())).collect()
    }
}

fn family_instances(plan: &ReplicaPlan) -> Vec<(usize, Vec<(InstanceId, bool)>)> {
    let mut order: Vec<usize> = (0..plan.components.len()).collect();
    order.sort_by(|&a, &b| {
        let (ca, cb) = (&plan.components[a], &plan.components[b]);
        ca.rank.cmp(&cb.rank).then_with(|| ca.component_id.cmp(&cb.component_id))
    });
    order
        .into_iter()
        .map(|i| {
            let c = &plan.components[i];
            let members = (0..c.k_total)
                .map(|j| {
                    let reserved = j == 0 || c.order == ExecOrder::Parallel;
                    (InstanceId::new(&plan.app_id, c.component_id.clone(), j), reserved)
                })
                .collect();
            (i, members)
        })
        .collect()
}

fn undo(map: &mut PlacementMap, dc: &mut Datacenter, placed: &[(usize, InstanceId)]) {
    for (pm, inst) in placed {
        map.assignments.remove(inst);
        dc.release(*pm, inst);
    }
}

/// Places every instance of `plan` under the four rules. Families are placed
/// in priority order; each family goes to the pod with the most feasible
/// machines and, inside it, to the machines with the most free capacity
/// (ties by id). On error the datacenter and map are left unchanged.
pub fn place_application(map: &mut PlacementMap, plan: &ReplicaPlan, dc: &mut Datacenter) -> Result<()> {
    let app = plan.app_id.as_str();
    let mut placed: Vec<(usize, InstanceId)> = Vec::new();
    for (ci, members) in family_instances(plan) {
        let c = &plan.components[ci];
        let k = members.len();
        let feasible = |pod: usize, dc: &Datacenter| -> Vec<usize> {
            dc.pod(pod)
                .iter()
                .filter(|m| m.fits(c.cpu_demand, c.mem_demand))
                .filter(|m| map.mode == PlacementMode::Relaxed || !m.hosts_app(app))
                .map(|m| m.id)
                .collect()
        };
        let best_pod = (0..dc.num_pods)
            .map(|p| (feasible(p, dc).len(), p))
            .max_by(|a, b| a.0.cmp(&b.0).then(b.1.cmp(&a.1)));
        let Some((count, pod)) = best_pod.filter(|&(count, _)| count >= k) else {
            let count = best_pod.map_or(0, |b| b.0);
            undo(map, dc, &placed);
            return Err(Error::Infeasible {
                app: app.to_owned(),
                component: c.component_id.to_string(),
                reason: format!("needs {k} distinct machines in one pod, best pod offers {count}"),
            });
        };
        debug_assert!(count >= k);
        let mut candidates = feasible(pod, dc);
        candidates.sort_by(|&a, &b| {
            let (ma, mb) = (&dc.machines()[a], &dc.machines()[b]);
            mb.cpu_free
                .cmp(&ma.cpu_free)
                .then(mb.mem_free.cmp(&ma.mem_free))
                .then(a.cmp(&b))
        });
        for ((inst, reserved), &pm) in members.into_iter().zip(&candidates) {
            let (cpu, mem) = if reserved { (c.cpu_demand, c.mem_demand) } else { (0, 0) };
            dc.allocate(pm, inst.clone(), cpu, mem)?;
            placed.push((pm, inst.clone()));
            map.insert(Assignment {
                instance: inst,
                pm,
                pod,
                reserved,
            });
        }
    }
    Ok(())
}

/// Baseline: every instance goes to a uniformly random machine that can hold
/// it, ignoring the placement rules.
pub fn place_random(map: &mut PlacementMap, plan: &ReplicaPlan, dc: &mut Datacenter, seed: u64) -> Result<()> {
    let mut rng = seed::rng(seed, &[seed::PLACE_RANDOM, seed::key(&plan.app_id)]);
    let mut placed: Vec<(usize, InstanceId)> = Vec::new();
    for (ci, members) in family_instances(plan) {
        let c = &plan.components[ci];
        for (inst, reserved) in members {
            let candidates: Vec<usize> = dc
                .machines()
                .iter()
                .filter(|m| m.fits(c.cpu_demand, c.mem_demand))
                .map(|m| m.id)
                .collect();
            let Some(&pm) = candidates.choose(&mut rng) else {
                undo(map, dc, &placed);
                return Err(Error::Infeasible {
                    app: plan.app_id.clone(),
                    component: c.component_id.to_string(),
                    reason: "no machine has enough free capacity".into(),
                });
            };
            let (cpu, mem) = if reserved { (c.cpu_demand, c.mem_demand) } else { (0, 0) };
            dc.allocate(pm, inst.clone(), cpu, mem)?;
            placed.push((pm, inst.clone()));
            let pod = dc.machines()[pm].pod_id;
            map.insert(Assignment {
                instance: inst,
                pm,
                pod,
                reserved,
            });
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Rule {
    OneInstancePerPm,
    ReplicaAwayFromPrimary,
    ReplicasApart,
    SamePod,
    Unplaced,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub rule: Rule,
    pub first: InstanceId,
    pub second: Option<InstanceId>,
}

/// Every rule violation in `map` for the instances of `plans`. Rule 1 is
/// checked only in strict mode and only across different components, since
/// same-family collisions are already rule 2 or 3.
pub fn audit_rules(map: &PlacementMap, plans: &[ReplicaPlan]) -> Vec<Violation> {
    let mut out = Vec::new();
    for plan in plans {
        let mut by_pm: BTreeMap<usize, Vec<&Assignment>> = BTreeMap::new();
        for c in &plan.components {
            let fam: Vec<(InstanceId, Option<&Assignment>)> = (0..c.k_total)
                .map(|j| {
                    let id = InstanceId::new(&plan.app_id, c.component_id.clone(), j);
                    let a = map.get(&id);
                    (id, a)
                })
                .collect();
            for (id, a) in &fam {
                match a {
                    None => out.push(Violation {
                        rule: Rule::Unplaced,
                        first: id.clone(),
                        second: None,
                    }),
                    Some(a) => by_pm.entry(a.pm).or_default().push(a),
                }
            }
            let Some(primary) = fam[0].1 else { continue };
            for (x, (id_x, ax)) in fam.iter().enumerate().skip(1) {
                let Some(ax) = ax else { continue };
                if ax.pm == primary.pm {
                    out.push(Violation {
                        rule: Rule::ReplicaAwayFromPrimary,
                        first: fam[0].0.clone(),
                        second: Some(id_x.clone()),
                    });
                }
                if ax.pod != primary.pod {
                    out.push(Violation {
                        rule: Rule::SamePod,
                        first: fam[0].0.clone(),
                        second: Some(id_x.clone()),
                    });
                }
                for (id_y, ay) in fam.iter().skip(x + 1) {
                    if ay.is_some_and(|ay| ay.pm == ax.pm) {
                        out.push(Violation {
                            rule: Rule::ReplicasApart,
                            first: id_x.clone(),
                            second: Some(id_y.clone()),
                        });
                    }
                }
            }
        }
        if map.mode == PlacementMode::Strict {
            for hosted in by_pm.values() {
                for (i, a) in hosted.iter().enumerate() {
                    for b in &hosted[i + 1..] {
                        if a.instance.component != b.instance.component {
                            out.push(Violation {
                                rule: Rule::OneInstancePerPm,
                                first: a.instance.clone(),
                                second: Some(b.instance.clone()),
                            });
                        }
                    }
                }
            }
        }
    }
    out
}
