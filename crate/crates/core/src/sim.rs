//! Seeded fault injection over planned and placed applications.
//!
//! Failure draws are keyed by `(seed, app, component, instance index)`, so
//! the fate of a given instance is the same whatever the replica counts of
//! the plan. Changing a threshold only truncates or extends each chain,
//! which makes sweeps directly comparable.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::datacenter::{Datacenter, InstanceId};
use crate::error::{Error, Result};
use crate::graph::{ComponentGraph, ComponentId};
use crate::placement::PlacementMap;
use crate::planner::{ExecOrder, ReplicaPlan};
use crate::seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    /// Seconds to promote a concurrently running replica.
    pub failover_latency: (f64, f64),
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            failover_latency: (0.0, 2.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComponentFailure {
    pub instance: InstanceId,
    /// Seconds into the instance's own execution.
    pub elapsed: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PmFailure {
    pub pm: usize,
    /// Absolute simulation time.
    pub time: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExecDuration {
    pub app: String,
    pub component: ComponentId,
    pub seconds: f64,
}

/// Pre-drawn failures for one run. Components without an execution duration
/// run for their full active duration.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct FaultScript {
    pub seed: u64,
    pub component_failures: Vec<ComponentFailure>,
    pub pm_failures: Vec<PmFailure>,
    pub exec_durations: Vec<ExecDuration>,
}

impl FaultScript {
    /// No failures at all.
    pub fn empty(seed: u64) -> Self {
        FaultScript {
            seed,
            ..Default::default()
        }
    }

    /// Draws an execution duration for each component (uniform over its
    /// active duration) and an independent failure for each planned
    /// instance with the component's failure probability. With a
    /// datacenter, also kills `pm_failures` distinct live machines at
    /// uniform times in `[0, horizon]`.
    pub fn generate(
        apps: &[ComponentGraph],
        plans: &[ReplicaPlan],
        datacenter: Option<&Datacenter>,
        pm_failures: usize,
        horizon: f64,
        seed_value: u64,
    ) -> Result<Self> {
        let mut script = FaultScript::empty(seed_value);
        for (g, plan) in apps.iter().zip(plans) {
            let app_key = seed::key(g.app_id());
            for (c, cp) in g.components().iter().zip(&plan.components) {
                let comp_key = seed::key(c.id.as_str());
                let mut rng = seed::rng(seed_value, &[seed::FAULTS, app_key, comp_key, 0]);
                let d = c.active_duration * (1.0 - rng.random::<f64>());
                script.exec_durations.push(ExecDuration {
                    app: g.app_id().to_owned(),
                    component: c.id.clone(),
                    seconds: d,
                });
                for j in 0..cp.k_total {
                    let mut rng = seed::rng(seed_value, &[seed::FAULTS, app_key, comp_key, j as u64 + 1]);
                    if rng.random_bool(cp.failure_prob.clamp(0.0, 1.0)) {
                        script.component_failures.push(ComponentFailure {
                            instance: InstanceId::new(g.app_id(), c.id.clone(), j),
                            elapsed: d * rng.random::<f64>(),
                        });
                    }
                }
            }
        }
        if pm_failures > 0 {
            let dc = datacenter.ok_or_else(|| Error::Validation("machine failures need a datacenter".into()))?;
            let alive: Vec<usize> = dc.machines().iter().filter(|m| m.alive).map(|m| m.id).collect();
            if pm_failures > alive.len() {
                return Err(Error::Validation(format!(
                    "{pm_failures} machine failures requested but only {} machines are alive",
                    alive.len()
                )));
            }
            let mut rng = seed::rng(seed_value, &[seed::PM_FAILURES]);
            let mut events: Vec<PmFailure> = index::sample(&mut rng, alive.len(), pm_failures)
                .into_iter()
                .map(|i| PmFailure {
                    pm: alive[i],
                    time: horizon * rng.random::<f64>(),
                })
                .collect();
            events.sort_by(|a, b| a.time.total_cmp(&b.time).then(a.pm.cmp(&b.pm)));
            script.pm_failures = events;
        }
        Ok(script)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecoveryRecord {
    pub app: String,
    pub component: ComponentId,
    pub order: ExecOrder,
    pub seconds: f64,
    /// Failed instances before the one that finished.
    pub failures: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlastRecord {
    pub pm: usize,
    pub app: String,
    pub lost_vms: usize,
    pub total_vms: usize,
    pub pct: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SimulationReport {
    /// Instances provisioned, primaries and every backup.
    pub total_vms: u32,
    /// VMs held while running (all parallel instances, one per sequential
    /// component).
    pub vms_required: u32,
    pub parallel_vms: u32,
    pub sequential_vms: u32,
    pub avg_pms_per_app: f64,
    pub recovery_times: Vec<RecoveryRecord>,
    pub pct_resource_affected: Vec<BlastRecord>,
    pub parallel_backup_success_pct: f64,
    pub sequential_backup_success_pct: f64,
    pub instances_finished: u32,
    pub instances_failed: u32,
    pub instances_never_needed: u32,
    pub components_failed: u32,
    pub apps_failed: u32,
}

fn mean(xs: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    (n > 0).then(|| sum / n as f64)
}

impl SimulationReport {
    pub fn mean_recovery(&self, order: Option<ExecOrder>) -> Option<f64> {
        mean(
            self.recovery_times
                .iter()
                .filter(|r| order.is_none_or(|o| r.order == o))
                .map(|r| r.seconds),
        )
    }

    pub fn mean_pct_affected(&self) -> Option<f64> {
        mean(self.pct_resource_affected.iter().map(|b| b.pct))
    }

    /// One row per measurement: `kind,app,component,order,pm,value`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("kind,app,component,order,pm,value\n");
        for r in &self.recovery_times {
            out.push_str(&format!(
                "recovery_seconds,{},{},{},,{}\n",
                r.app,
                r.component,
                r.order.as_str(),
                r.seconds
            ));
        }
        for b in &self.pct_resource_affected {
            out.push_str(&format!("pct_resource_affected,{},,,{},{}\n", b.app, b.pm, b.pct));
        }
        out
    }
}

/// Everything a run needs besides the script.
pub struct Deployment<'a> {
    pub apps: &'a [ComponentGraph],
    /// Start time of each application.
    pub start_times: &'a [f64],
    pub plans: &'a [ReplicaPlan],
    pub placement: Option<&'a PlacementMap>,
}

struct Tally {
    par_activated: u32,
    par_finished: u32,
    seq_activated: u32,
    seq_finished: u32,
}

/// Executes every application in dependency order under `script`.
///
/// Parallel components run all instances at once; when the primary fails
/// the next surviving replica is promoted, each promotion attempt costing a
/// failover latency. Sequential components start the next backup after the
/// restart delay and redo the work from scratch, so each failure costs the
/// restart delay plus the work lost. A component whose whole chain fails
/// marks its application failed. Machine failures kill every instance they
/// host from their failure time on.
pub fn run_simulation(
    deployment: &Deployment<'_>,
    datacenter: Option<&mut Datacenter>,
    script: &FaultScript,
    config: &SimConfig,
) -> Result<SimulationReport> {
    let Deployment {
        apps,
        start_times,
        plans,
        placement,
    } = *deployment;
    if apps.len() != plans.len() || apps.len() != start_times.len() {
        return Err(Error::Validation("apps, plans and start times differ in length".into()));
    }
    let (lo, hi) = config.failover_latency;
    if !(lo.is_finite() && hi.is_finite() && 0.0 <= lo && lo <= hi) {
        return Err(Error::Validation("failover latency range must satisfy 0 <= lo <= hi".into()));
    }

    let mut known: BTreeMap<(&str, &ComponentId), u32> = BTreeMap::new();
    for plan in plans {
        for c in &plan.components {
            known.insert((plan.app_id.as_str(), &c.component_id), c.k_total);
        }
    }
    let mut own_failure: BTreeMap<&InstanceId, f64> = BTreeMap::new();
    for f in &script.component_failures {
        let k = known
            .get(&(f.instance.app.as_str(), &f.instance.component))
            .ok_or_else(|| Error::Validation(format!("fault script references unknown instance {}", f.instance)))?;
        if f.instance.index >= *k || !(f.elapsed >= 0.0) {
            return Err(Error::Validation(format!("fault script references invalid instance {}", f.instance)));
        }
        own_failure.insert(&f.instance, f.elapsed);
    }
    let durations: BTreeMap<(&str, &ComponentId), f64> = script
        .exec_durations
        .iter()
        .map(|d| ((d.app.as_str(), &d.component), d.seconds))
        .collect();

    let mut report = SimulationReport::default();

    // Machine failures.
    let mut pm_death: BTreeMap<usize, f64> = BTreeMap::new();
    if !script.pm_failures.is_empty() {
        let (Some(map), Some(dc)) = (placement, datacenter) else {
            return Err(Error::Validation("machine failures need a placement and datacenter".into()));
        };
        let vms = map.vms_per_app();
        let mut events = script.pm_failures.clone();
        events.sort_by(|a, b| a.time.total_cmp(&b.time).then(a.pm.cmp(&b.pm)));
        for ev in &events {
            let hosted = dc.fail_pm(ev.pm)?;
            pm_death.insert(ev.pm, ev.time);
            let mut lost: BTreeMap<&str, usize> = BTreeMap::new();
            for inst in &hosted {
                if map.get(inst).is_some_and(|a| a.reserved) {
                    *lost.entry(inst.app.as_str()).or_default() += 1;
                }
            }
            for (app, n) in lost {
                let total = vms.get(app).copied().unwrap_or(n).max(n);
                report.pct_resource_affected.push(BlastRecord {
                    pm: ev.pm,
                    app: app.to_owned(),
                    lost_vms: n,
                    total_vms: total,
                    pct: 100.0 * n as f64 / total as f64,
                });
            }
        }
    }

    let mut tally = Tally {
        par_activated: 0,
        par_finished: 0,
        seq_activated: 0,
        seq_finished: 0,
    };

    for ((g, plan), &app_start) in apps.iter().zip(plans).zip(start_times) {
        if g.app_id() != plan.app_id || g.len() != plan.components.len() {
            return Err(Error::Validation(format!("plan does not match application {}", g.app_id())));
        }
        let app = g.app_id();
        let app_key = seed::key(app);
        let mut finish = vec![app_start; g.len()];
        let mut app_failed = false;
        for ci in g.topological_order() {
            let c = g.component(ci);
            let cp = &plan.components[ci];
            if cp.component_id != c.id {
                return Err(Error::Validation(format!("plan component order differs for {app}")));
            }
            let start = g.predecessors(ci).iter().map(|&p| finish[p]).fold(app_start, f64::max);
            let d = durations.get(&(app, &c.id)).copied().unwrap_or(c.active_duration);
            let k = cp.k_total;
            let instance = |j: u32| InstanceId::new(app, c.id.clone(), j);
            // elapsed time at which instance j fails when activated at `t`
            let fails_at = |j: u32, t: f64| -> Option<f64> {
                let id = instance(j);
                let own = own_failure.get(&id).copied().filter(|&e| e < d);
                let pm = placement
                    .and_then(|m| m.get(&id))
                    .and_then(|a| pm_death.get(&a.pm))
                    .map(|&td| (td - t).max(0.0))
                    .filter(|&e| e < d);
                match (own, pm) {
                    (Some(a), Some(b)) => Some(a.min(b)),
                    (a, b) => a.or(b),
                }
            };

            match cp.order {
                ExecOrder::Parallel => {
                    let outcomes: Vec<Option<f64>> = (0..k).map(|j| fails_at(j, start)).collect();
                    report.instances_finished += outcomes.iter().filter(|o| o.is_none()).count() as u32;
                    report.instances_failed += outcomes.iter().filter(|o| o.is_some()).count() as u32;
                    tally.par_activated += k - 1;
                    tally.par_finished += outcomes[1..].iter().filter(|o| o.is_none()).count() as u32;
                    match outcomes[0] {
                        None => finish[ci] = start + d,
                        Some(e0) => {
                            let mut latency = 0.0;
                            let mut recovered = false;
                            for (j, outcome) in outcomes.iter().enumerate().skip(1) {
                                let mut rng =
                                    seed::rng(script.seed, &[seed::FAILOVER, app_key, seed::key(c.id.as_str()), j as u64]);
                                latency += if lo == hi { lo } else { rng.random_range(lo..=hi) };
                                if outcome.is_none() {
                                    report.recovery_times.push(RecoveryRecord {
                                        app: app.to_owned(),
                                        component: c.id.clone(),
                                        order: ExecOrder::Parallel,
                                        seconds: latency,
                                        failures: j as u32,
                                    });
                                    finish[ci] = (start + d).max(start + e0 + latency);
                                    recovered = true;
                                    break;
                                }
                            }
                            if !recovered {
                                let last = outcomes.iter().flatten().fold(0.0, |a: f64, &b| a.max(b));
                                finish[ci] = start + last;
                                report.components_failed += 1;
                                app_failed = true;
                            }
                        }
                    }
                }
                ExecOrder::Sequential => {
                    let mut t = start;
                    let mut recovery = 0.0;
                    let mut done = false;
                    for j in 0..k {
                        if j > 0 {
                            tally.seq_activated += 1;
                        }
                        match fails_at(j, t) {
                            None => {
                                report.instances_finished += 1;
                                if j > 0 {
                                    tally.seq_finished += 1;
                                    report.recovery_times.push(RecoveryRecord {
                                        app: app.to_owned(),
                                        component: c.id.clone(),
                                        order: ExecOrder::Sequential,
                                        seconds: recovery,
                                        failures: j,
                                    });
                                }
                                finish[ci] = t + d;
                                report.instances_never_needed += k - j - 1;
                                done = true;
                                break;
                            }
                            Some(e) => {
                                report.instances_failed += 1;
                                recovery += cp.restart_delay + e;
                                t += e + cp.restart_delay;
                            }
                        }
                    }
                    if !done {
                        finish[ci] = t - cp.restart_delay;
                        report.components_failed += 1;
                        app_failed = true;
                    }
                }
            }
        }
        if app_failed {
            report.apps_failed += 1;
        }
    }

    report.total_vms = plans.iter().map(|p| p.total_instances).sum();
    for plan in plans {
        for c in &plan.components {
            match c.order {
                ExecOrder::Parallel => report.parallel_vms += c.vms_required(),
                ExecOrder::Sequential => report.sequential_vms += c.vms_required(),
            }
        }
    }
    report.vms_required = report.parallel_vms + report.sequential_vms;
    report.avg_pms_per_app = placement
        .and_then(|m| {
            let pms = m.pms_per_app();
            mean(pms.values().map(|&v| v as f64))
        })
        .unwrap_or(0.0);
    let pct = |ok: u32, all: u32| if all == 0 { 100.0 } else { 100.0 * ok as f64 / all as f64 };
    report.parallel_backup_success_pct = pct(tally.par_finished, tally.par_activated);
    report.sequential_backup_success_pct = pct(tally.seq_finished, tally.seq_activated);
    Ok(report)
}

/// One machine failure in a blast-radius measurement.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlastSample {
    pub pm: usize,
    pub affected_apps: usize,
    /// Mean over affected applications of the share of their VMs lost; 0
    /// when the machine hosted no VM.
    pub mean_pct: f64,
}

/// Kills `num_pm_failures` distinct live machines chosen uniformly and
/// reports, for each, the mean share of VMs lost by the applications it
/// hosted.
pub fn measure_blast_radius(
    placement: &PlacementMap,
    dc: &mut Datacenter,
    num_pm_failures: usize,
    seed_value: u64,
) -> Result<Vec<BlastSample>> {
    let alive: Vec<usize> = dc.machines().iter().filter(|m| m.alive).map(|m| m.id).collect();
    if num_pm_failures > alive.len() {
        return Err(Error::Validation(format!(
            "{num_pm_failures} machine failures requested but only {} machines are alive",
            alive.len()
        )));
    }
    let vms = placement.vms_per_app();
    let mut rng = seed::rng(seed_value, &[seed::BLAST]);
    let victims = index::sample(&mut rng, alive.len(), num_pm_failures);
    let mut out = Vec::with_capacity(num_pm_failures);
    for i in victims {
        let pm = alive[i];
        let hosted = dc.fail_pm(pm)?;
        let mut lost: BTreeMap<&str, usize> = BTreeMap::new();
        for inst in &hosted {
            if placement.get(inst).is_some_and(|a| a.reserved) {
                *lost.entry(inst.app.as_str()).or_default() += 1;
            }
        }
        let pcts: Vec<f64> = lost
            .iter()
            .map(|(app, &n)| 100.0 * n as f64 / vms.get(app).copied().unwrap_or(n).max(n) as f64)
            .collect();
        out.push(BlastSample {
            pm,
            affected_apps: pcts.len(),
            mean_pct: mean(pcts.into_iter()).unwrap_or(0.0),
        });
    }
    Ok(out)
}

/// Mean of the per-failure means over failures that hit at least one VM.
pub fn mean_blast(samples: &[BlastSample]) -> f64 {
    mean(samples.iter().filter(|s| s.affected_apps > 0).map(|s| s.mean_pct)).unwrap_or(0.0)
}

/// Apps that own at least one VM on each machine.
pub fn apps_by_pm(placement: &PlacementMap) -> BTreeMap<usize, BTreeSet<&str>> {
    let mut out: BTreeMap<usize, BTreeSet<&str>> = BTreeMap::new();
    for a in placement.assignments().filter(|a| a.reserved) {
        out.entry(a.pm).or_default().insert(a.instance.app.as_str());
    }
    out
}
