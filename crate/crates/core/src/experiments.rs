//! Experiment driver: strategies, datacenter sizing, figure datasets,
//! strategy comparison and the manifest-indexed output directory.

use std::collections::BTreeSet;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::datacenter::{Datacenter, DatacenterConfig};
use crate::error::{Error, Result};
use crate::graph::{ComponentGraph, ComponentId};
use crate::placement::{audit_rules, place_application, place_random, PlacementMap, PlacementMode};
use crate::planner::{build_plan, plan_with, replica_count, CountPolicy, ExecOrder, OrderPolicy, PlannerParams, ReplicaPlan};
use crate::rank::{rank_components, rank_ftcloud_like, rank_rocloud_like};
use crate::seed;
use crate::sim::{mean_blast, measure_blast_radius, run_simulation, Deployment, FaultScript, SimConfig, SimulationReport};
use crate::workload::{generate_arrivals, generate_workload, WorkloadConfig};

/// Label written into every manifest: the protocol is reproduced, the
/// original random distributions are not.
pub const SUITE_LABEL: &str = "protocol-faithful, distribution-approximate";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Strategy {
    Rrft,
    RocloudLike,
    FtcloudLike,
    /// Every component gets this many backups, all run in parallel.
    UniformK(u32),
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Strategy::Rrft => f.write_str("rrft"),
            Strategy::RocloudLike => f.write_str("rocloud_like"),
            Strategy::FtcloudLike => f.write_str("ftcloud_like"),
            Strategy::UniformK(k) => write!(f, "uniform_k({k})"),
        }
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rrft" => Ok(Strategy::Rrft),
            "rocloud_like" => Ok(Strategy::RocloudLike),
            "ftcloud_like" => Ok(Strategy::FtcloudLike),
            "uniform_k" => Ok(Strategy::UniformK(5)),
            _ => s
                .strip_prefix("uniform_k(")
                .and_then(|r| r.strip_suffix(')'))
                .and_then(|k| k.trim().parse().ok())
                .map(Strategy::UniformK)
                .ok_or_else(|| Error::Validation(format!("unknown strategy {s:?}"))),
        }
    }
}

impl Serialize for Strategy {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Strategy {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Components whose failures brought the application down at least half
/// the time; the structure-only baseline promotes them.
pub fn critical_components(app: &ComponentGraph) -> BTreeSet<ComponentId> {
    app.components()
        .iter()
        .filter(|c| c.fail_count > 0 && 2 * c.app_fail_count >= c.fail_count)
        .map(|c| c.id.clone())
        .collect()
}

/// Instance count the baselines give every component: enough to meet the
/// threshold at the worst possible failure probability, 1/e.
pub fn baseline_count(params: &PlannerParams) -> Result<u32> {
    replica_count(std::f64::consts::E.recip(), params.nabla, params.mu)
}

pub fn plan_strategy(app: &ComponentGraph, strategy: Strategy, params: &PlannerParams) -> Result<ReplicaPlan> {
    let records = app.significance_values();
    let probs: Vec<f64> = records.iter().map(|r| r.failure_prob).collect();
    let prefix = OrderPolicy::RankPrefix(params.parallel_fraction);
    match strategy {
        Strategy::Rrft => build_plan(app, &rank_components(&records)?, params),
        Strategy::RocloudLike => plan_with(
            app,
            &rank_rocloud_like(&records),
            &probs,
            params,
            CountPolicy::Fixed(baseline_count(params)?),
            prefix,
        ),
        Strategy::FtcloudLike => plan_with(
            app,
            &rank_ftcloud_like(app, &critical_components(app)),
            &probs,
            params,
            CountPolicy::Fixed(baseline_count(params)?),
            prefix,
        ),
        Strategy::UniformK(b) => plan_with(
            app,
            &rank_components(&records)?,
            &probs,
            params,
            CountPolicy::Fixed(b + 1),
            OrderPolicy::AllParallel,
        ),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DatacenterSection {
    pub num_pods: usize,
    pub machines_per_pod: usize,
    pub cpu_range: (u32, u32),
    pub mem_range: (u32, u32),
    /// Grow the pod count to fit the planned demand.
    pub auto_size: bool,
    /// Capacity over demand when auto-sizing.
    pub headroom: f64,
}

impl Default for DatacenterSection {
    fn default() -> Self {
        let d = DatacenterConfig::default();
        DatacenterSection {
            num_pods: d.num_pods,
            machines_per_pod: d.machines_per_pod,
            cpu_range: d.cpu_range,
            mem_range: d.mem_range,
            auto_size: true,
            headroom: 1.5,
        }
    }
}

impl DatacenterSection {
    /// Datacenter configuration for hosting `plans`.
    pub fn sized_for(&self, plans: &[ReplicaPlan], seed_value: u64) -> DatacenterConfig {
        let mut num_pods = self.num_pods;
        if self.auto_size {
            let (mut cpu, mut mem) = (0.0, 0.0);
            // strict placement can always give each family of an
            // application its own pod
            let mut widest = 0;
            for p in plans {
                for c in &p.components {
                    cpu += (c.vms_required() * c.cpu_demand) as f64;
                    mem += c.vms_required() as f64 * c.mem_demand as f64;
                }
                widest = widest.max(p.components.len());
            }
            let mean_cpu = (self.cpu_range.0 + self.cpu_range.1) as f64 / 2.0;
            let mean_mem = (self.mem_range.0 + self.mem_range.1) as f64 / 2.0;
            let machines = ((cpu / mean_cpu).max(mem / mean_mem) * self.headroom).ceil() as usize;
            num_pods = machines.div_ceil(self.machines_per_pod.max(1)).max(widest).max(1);
        }
        DatacenterConfig {
            num_pods,
            machines_per_pod: self.machines_per_pod,
            cpu_range: self.cpu_range,
            mem_range: self.mem_range,
            seed: seed_value,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlannerSection {
    pub nabla: f64,
    pub nabla_grid: Vec<f64>,
    pub mu: u32,
    pub parallel_fraction: f64,
}

impl Default for PlannerSection {
    fn default() -> Self {
        let p = PlannerParams::default();
        PlannerSection {
            nabla: p.nabla,
            nabla_grid: vec![0.001, 0.005, 0.01, 0.05, 0.1],
            mu: p.mu,
            parallel_fraction: p.parallel_fraction,
        }
    }
}

impl PlannerSection {
    pub fn params(&self) -> PlannerParams {
        self.params_at(self.nabla)
    }

    pub fn params_at(&self, nabla: f64) -> PlannerParams {
        PlannerParams {
            nabla,
            mu: self.mu,
            parallel_fraction: self.parallel_fraction,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FaultSection {
    pub pm_failure_counts: Vec<usize>,
    pub failover_latency: (f64, f64),
}

impl Default for FaultSection {
    fn default() -> Self {
        FaultSection {
            pm_failure_counts: vec![10, 25, 50, 100],
            failover_latency: SimConfig::default().failover_latency,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FigureSection {
    /// x-axis of the application-count sweeps.
    pub app_counts: Vec<usize>,
    /// Components in the threshold sweeps.
    pub sweep_components: usize,
    /// Backups per component in the execution-order comparison.
    pub fixed_backups: u32,
    /// Applications in the machine-failure sweep.
    pub blast_apps: usize,
    /// Replications of every stochastic figure.
    pub seeds: u32,
}

impl Default for FigureSection {
    fn default() -> Self {
        FigureSection {
            app_counts: (1..=10).map(|i| i * 100).collect(),
            sweep_components: 500,
            fixed_backups: 5,
            blast_apps: 1000,
            seeds: 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Format {
    #[default]
    Csv,
    Json,
}

impl FromStr for Format {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(Format::Csv),
            "json" => Ok(Format::Json),
            other => Err(Error::Validation(format!("unknown format {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct OutputSection {
    pub dir: Option<PathBuf>,
    pub format: Format,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub workload: WorkloadConfig,
    pub datacenter: DatacenterSection,
    pub planner: PlannerSection,
    pub placement_mode: PlacementMode,
    pub strategies: Vec<Strategy>,
    pub fault: FaultSection,
    pub figures: FigureSection,
    pub output: OutputSection,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seed: 0,
            workload: WorkloadConfig::default(),
            datacenter: DatacenterSection::default(),
            planner: PlannerSection::default(),
            placement_mode: PlacementMode::Strict,
            strategies: vec![
                Strategy::Rrft,
                Strategy::RocloudLike,
                Strategy::FtcloudLike,
                Strategy::UniformK(5),
            ],
            fault: FaultSection::default(),
            figures: FigureSection::default(),
            output: OutputSection::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Validation(m));
        if self.strategies.is_empty() {
            return bad("strategy list is empty".into());
        }
        self.workload.validate()?;
        let p = &self.planner;
        if let Some(n) = std::iter::once(&p.nabla)
            .chain(&p.nabla_grid)
            .find(|n| !(**n > 0.0 && **n < 1.0))
        {
            return bad(format!("threshold {n} outside (0,1)"));
        }
        if !(0.0..=1.0).contains(&p.parallel_fraction) {
            return bad(format!("parallel fraction {} outside [0,1]", p.parallel_fraction));
        }
        let d = &self.datacenter;
        if d.machines_per_pod == 0 || (!d.auto_size && d.num_pods == 0) || !(d.headroom >= 1.0) {
            return bad("datacenter needs machines per pod, pods and headroom >= 1".into());
        }
        let (lo, hi) = self.fault.failover_latency;
        if !(lo >= 0.0 && lo <= hi && hi.is_finite()) {
            return bad("failover latency range must satisfy 0 <= lo <= hi".into());
        }
        if self.figures.seeds == 0 {
            return bad("figures need at least one seed".into());
        }
        Ok(())
    }

    fn sim_config(&self) -> SimConfig {
        SimConfig {
            failover_latency: self.fault.failover_latency,
        }
    }

    /// Workload of `num_apps` applications under `seed_value`.
    pub fn workload_with(&self, num_apps: usize, seed_value: u64) -> WorkloadConfig {
        WorkloadConfig {
            num_apps,
            seed: seed_value,
            ..self.workload.clone()
        }
    }
}

/// A generated set of applications with their arrival times.
#[derive(Debug, Clone)]
pub struct Workload {
    pub apps: Vec<ComponentGraph>,
    pub start_times: Vec<f64>,
}

impl Workload {
    pub fn generate(config: &WorkloadConfig) -> Result<Self> {
        Ok(Workload {
            apps: generate_workload(config)?,
            start_times: generate_arrivals(config)?.into_iter().map(|(_, t)| t).collect(),
        })
    }

    pub fn component_count(&self) -> usize {
        self.apps.iter().map(ComponentGraph::len).sum()
    }

    /// Shortest prefix holding at least `components` components.
    pub fn prefix_with_components(&self, components: usize) -> usize {
        let mut total = 0;
        for (i, a) in self.apps.iter().enumerate() {
            total += a.len();
            if total >= components {
                return i + 1;
            }
        }
        self.apps.len()
    }
}

pub fn plan_all(apps: &[ComponentGraph], strategy: Strategy, params: &PlannerParams) -> Result<Vec<ReplicaPlan>> {
    apps.iter().map(|a| plan_strategy(a, strategy, params)).collect()
}

pub fn plan_all_with(
    apps: &[ComponentGraph],
    params: &PlannerParams,
    count: CountPolicy,
    order: OrderPolicy,
) -> Result<Vec<ReplicaPlan>> {
    apps.iter()
        .map(|a| {
            let records = a.significance_values();
            let probs: Vec<f64> = records.iter().map(|r| r.failure_prob).collect();
            plan_with(a, &rank_components(&records)?, &probs, params, count, order)
        })
        .collect()
}

/// How instances are put on machines.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Placer {
    Rules(PlacementMode),
    /// Uniform over machines with room, keyed by this seed.
    Random(u64),
}

/// Places every plan, in order, onto one datacenter.
pub fn deploy(plans: &[ReplicaPlan], config: &DatacenterConfig, placer: Placer) -> Result<(Datacenter, PlacementMap)> {
    let mut dc = Datacenter::build(config)?;
    let mut map = PlacementMap::new(match placer {
        Placer::Rules(m) => m,
        Placer::Random(_) => PlacementMode::Relaxed,
    });
    for plan in plans {
        match placer {
            Placer::Rules(_) => place_application(&mut map, plan, &mut dc)?,
            Placer::Random(s) => place_random(&mut map, plan, &mut dc, s)?,
        }
    }
    if let Placer::Rules(_) = placer {
        if let Some(v) = audit_rules(&map, plans).first() {
            return Err(Error::Invariant(format!("placement breaks {:?} at {}", v.rule, v.first)));
        }
    }
    let audit = dc.capacity_audit();
    if let Some(msg) = audit.first() {
        return Err(Error::Invariant(msg.clone()));
    }
    Ok((dc, map))
}

/// A dataset: named columns and rows of JSON scalars.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Table {
    pub name: String,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Value>>,
}

impl Table {
    pub fn new(name: &str, columns: &[&str]) -> Self {
        Table {
            name: name.into(),
            columns: columns.iter().map(|c| c.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<Value>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    pub fn column(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == name)
    }

    pub fn to_csv(&self) -> String {
        let cell = |v: &Value| match v {
            Value::String(s) if s.contains([',', '"', '\n']) => format!("\"{}\"", s.replace('"', "\"\"")),
            Value::String(s) => s.clone(),
            Value::Null => String::new(),
            other => other.to_string(),
        };
        let mut out = self.columns.join(",");
        out.push('\n');
        for row in &self.rows {
            out.push_str(&row.iter().map(cell).collect::<Vec<_>>().join(","));
            out.push('\n');
        }
        out
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("tables serialize");
        s.push('\n');
        s
    }

    pub fn render(&self, format: Format) -> (String, String) {
        match format {
            Format::Csv => (format!("{}.csv", self.name), self.to_csv()),
            Format::Json => (format!("{}.json", self.name), self.to_json()),
        }
    }
}

fn num(x: f64) -> Value {
    json!(x)
}

fn opt(x: Option<f64>) -> Value {
    x.map_or(Value::Null, num)
}

/// Per-strategy simulation under the configured workload: plans, places,
/// draws faults (with the first machine-failure count) and runs.
pub fn simulate(config: &ExperimentConfig) -> Result<Vec<(Strategy, SimulationReport)>> {
    config.validate()?;
    let workload = Workload::generate(&config.workload_with(config.workload.num_apps, config.seed))?;
    let params = config.planner.params();
    let pm_failures = config.fault.pm_failure_counts.first().copied().unwrap_or(0);
    let mut out = Vec::new();
    for &strategy in &config.strategies {
        let plans = plan_all(&workload.apps, strategy, &params)?;
        let dc_cfg = config.datacenter.sized_for(&plans, config.seed);
        let (mut dc, map) = deploy(&plans, &dc_cfg, Placer::Rules(config.placement_mode))?;
        let horizon = workload.start_times.last().copied().unwrap_or(0.0);
        let script = FaultScript::generate(&workload.apps, &plans, Some(&dc), pm_failures, horizon, config.seed)?;
        let deployment = Deployment {
            apps: &workload.apps,
            start_times: &workload.start_times,
            plans: &plans,
            placement: Some(&map),
        };
        let report = run_simulation(&deployment, Some(&mut dc), &script, &config.sim_config())?;
        out.push((strategy, report));
    }
    Ok(out)
}

pub fn simulation_summary(reports: &[(Strategy, SimulationReport)]) -> Table {
    let mut t = Table::new(
        "simulation_summary",
        &[
            "strategy",
            "total_vms",
            "vms_required",
            "parallel_vms",
            "sequential_vms",
            "avg_pms_per_app",
            "recoveries",
            "mean_recovery_s",
            "mean_pct_resource_affected",
            "parallel_backup_success_pct",
            "sequential_backup_success_pct",
            "components_failed",
            "apps_failed",
        ],
    );
    for (s, r) in reports {
        t.push(vec![
            json!(s.to_string()),
            json!(r.total_vms),
            json!(r.vms_required),
            json!(r.parallel_vms),
            json!(r.sequential_vms),
            num(r.avg_pms_per_app),
            json!(r.recovery_times.len()),
            opt(r.mean_recovery(None)),
            opt(r.mean_pct_affected()),
            num(r.parallel_backup_success_pct),
            num(r.sequential_backup_success_pct),
            json!(r.components_failed),
            json!(r.apps_failed),
        ]);
    }
    t
}

/// Rule-based versus random placement of the same plans on the same
/// datacenter, killing the same machines.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlastRow {
    pub pm_failures: usize,
    pub placement: String,
    /// Mean over failures of the per-failure mean share of VMs lost.
    pub mean_pct: f64,
    /// Mean over applications hit by any failure of their share of VMs lost
    /// after all failures.
    pub cumulative_pct: f64,
}

pub fn blast_comparison(config: &ExperimentConfig, num_apps: usize, seed_value: u64) -> Result<Vec<BlastRow>> {
    let workload = Workload::generate(&config.workload_with(num_apps, seed_value))?;
    let plans = plan_all(&workload.apps, Strategy::Rrft, &config.planner.params())?;
    let dc_cfg = config.datacenter.sized_for(&plans, seed_value);
    let placers = [
        ("rules", Placer::Rules(config.placement_mode)),
        ("random", Placer::Random(seed_value)),
    ];
    let mut rows = Vec::new();
    for (name, placer) in placers {
        let (dc, map) = deploy(&plans, &dc_cfg, placer)?;
        let vms = map.vms_per_app();
        for &count in &config.fault.pm_failure_counts {
            let mut probe = dc.clone();
            let samples = measure_blast_radius(&map, &mut probe, count, seed_value)?;
            let failed: BTreeSet<usize> = samples.iter().map(|s| s.pm).collect();
            let mut lost: std::collections::BTreeMap<&str, usize> = Default::default();
            for a in map.assignments().filter(|a| a.reserved && failed.contains(&a.pm)) {
                *lost.entry(a.instance.app.as_str()).or_default() += 1;
            }
            let cumulative: Vec<f64> = lost.iter().map(|(app, &n)| 100.0 * n as f64 / vms[app] as f64).collect();
            rows.push(BlastRow {
                pm_failures: count,
                placement: name.into(),
                mean_pct: mean_blast(&samples),
                cumulative_pct: if cumulative.is_empty() {
                    0.0
                } else {
                    cumulative.iter().sum::<f64>() / cumulative.len() as f64
                },
            });
        }
    }
    Ok(rows)
}

/// Output of the figure suite. A figure that fails is recorded and the
/// remaining figures still run.
#[derive(Debug, Clone, Default)]
pub struct FigureSuite {
    pub tables: Vec<Table>,
    pub errors: Vec<(String, String)>,
}

type FigureFn = fn(&ExperimentConfig, &Workload) -> Result<Table>;

pub fn run_figure_suite(config: &ExperimentConfig) -> Result<FigureSuite> {
    config.validate()?;
    let max_apps = config
        .figures
        .app_counts
        .iter()
        .copied()
        .chain([config.workload.num_apps])
        .max()
        .unwrap_or(0);
    let workload = Workload::generate(&config.workload_with(max_apps, config.seed))?;
    let figures: [(&str, FigureFn); 10] = [
        ("fig3", fig3_total_vms),
        ("fig4", fig4_pms_per_app),
        ("fig5", fig5_vms_by_order),
        ("fig6", fig6_recovery_by_order),
        ("fig7", fig7_replicas_by_threshold),
        ("fig8", fig8_recovery_by_threshold),
        ("fig9", fig9_backup_split),
        ("fig10", fig10_blast_radius),
        ("fig11", fig11_parallel_success),
        ("fig12", fig12_sequential_success),
    ];
    let mut suite = FigureSuite::default();
    for (name, f) in figures {
        match f(config, &workload) {
            Ok(t) => suite.tables.push(t),
            Err(e) => suite.errors.push((name.to_owned(), e.to_string())),
        }
    }
    Ok(suite)
}

fn replicate_seeds(config: &ExperimentConfig) -> impl Iterator<Item = u64> + '_ {
    (0..config.figures.seeds as u64).map(move |i| seed::derive(config.seed, &[seed::FAULTS, i]))
}

pub fn fig3_total_vms(config: &ExperimentConfig, w: &Workload) -> Result<Table> {
    let params = config.planner.params();
    let mut t = Table::new("fig3", &["apps", "strategy", "total_vms", "vms_required"]);
    for &s in &config.strategies {
        let plans = plan_all(&w.apps, s, &params)?;
        for &n in &config.figures.app_counts {
            let n = n.min(plans.len());
            let total: u32 = plans[..n].iter().map(|p| p.total_instances).sum();
            let required: u32 = plans[..n].iter().map(ReplicaPlan::vms_required).sum();
            t.push(vec![json!(n), json!(s.to_string()), json!(total), json!(required)]);
        }
    }
    Ok(t)
}

pub fn fig4_pms_per_app(config: &ExperimentConfig, w: &Workload) -> Result<Table> {
    let params = config.planner.params();
    let mut t = Table::new("fig4", &["apps", "strategy", "avg_pms_per_app", "pms_in_use"]);
    for &s in &config.strategies {
        for &n in &config.figures.app_counts {
            let n = n.min(w.apps.len());
            let plans = plan_all(&w.apps[..n], s, &params)?;
            let dc_cfg = config.datacenter.sized_for(&plans, config.seed);
            let (_, map) = deploy(&plans, &dc_cfg, Placer::Rules(config.placement_mode))?;
            let pms = map.pms_per_app();
            let avg = pms.values().sum::<usize>() as f64 / pms.len().max(1) as f64;
            let used: BTreeSet<usize> = map.assignments().map(|a| a.pm).collect();
            t.push(vec![json!(n), json!(s.to_string()), num(avg), json!(used.len())]);
        }
    }
    Ok(t)
}

const ORDERS: [(&str, fn(f64) -> OrderPolicy); 3] = [
    ("parallel", |_| OrderPolicy::AllParallel),
    ("sequential", |_| OrderPolicy::AllSequential),
    ("hybrid", OrderPolicy::RankPrefix),
];

/// Per application: VMs held with a fixed backup count under each order.
pub fn fig5_vms_by_order(config: &ExperimentConfig, w: &Workload) -> Result<Table> {
    let params = config.planner.params();
    let k = CountPolicy::Fixed(config.figures.fixed_backups + 1);
    let apps = &w.apps[..config.workload.num_apps.min(w.apps.len())];
    let by_order: Vec<Vec<ReplicaPlan>> = ORDERS
        .iter()
        .map(|(_, o)| plan_all_with(apps, &params, k, o(params.parallel_fraction)))
        .collect::<Result<_>>()?;
    let mut t = Table::new("fig5", &["app", "components", "parallel_vms", "sequential_vms", "hybrid_vms"]);
    for (i, a) in apps.iter().enumerate() {
        t.push(vec![
            json!(a.app_id()),
            json!(a.len()),
            json!(by_order[0][i].vms_required()),
            json!(by_order[1][i].vms_required()),
            json!(by_order[2][i].vms_required()),
        ]);
    }
    Ok(t)
}

/// Runs the workload without machine failures under `plans` and the given
/// fault seed.
pub fn simulate_plans(config: &ExperimentConfig, w: &Workload, plans: &[ReplicaPlan], fault_seed: u64) -> Result<SimulationReport> {
    let apps = &w.apps[..plans.len()];
    let script = FaultScript::generate(apps, plans, None, 0, 0.0, fault_seed)?;
    let deployment = Deployment {
        apps,
        start_times: &w.start_times[..plans.len()],
        plans,
        placement: None,
    };
    run_simulation(&deployment, None, &script, &config.sim_config())
}

/// Recovery times with a fixed backup count under each execution order.
pub fn fig6_recovery_by_order(config: &ExperimentConfig, w: &Workload) -> Result<Table> {
    let params = config.planner.params();
    let k = CountPolicy::Fixed(config.figures.fixed_backups + 1);
    let apps = &w.apps[..config.workload.num_apps.min(w.apps.len())];
    let mut t = Table::new("fig6", &["seed", "order", "recoveries", "mean_recovery_s", "min_recovery_s", "max_recovery_s"]);
    let plans: Vec<Vec<ReplicaPlan>> = ORDERS
        .iter()
        .map(|(_, o)| plan_all_with(apps, &params, k, o(params.parallel_fraction)))
        .collect::<Result<_>>()?;
    for s in replicate_seeds(config) {
        for ((name, _), p) in ORDERS.iter().zip(&plans) {
            let r = simulate_plans(config, w, p, s)?;
            let secs: Vec<f64> = r.recovery_times.iter().map(|x| x.seconds).collect();
            t.push(vec![
                json!(s.to_string()),
                json!(name),
                json!(secs.len()),
                opt(r.mean_recovery(None)),
                opt(secs.iter().copied().reduce(f64::min)),
                opt(secs.iter().copied().reduce(f64::max)),
            ]);
        }
    }
    Ok(t)
}

pub fn fig7_replicas_by_threshold(config: &ExperimentConfig, w: &Workload) -> Result<Table> {
    let apps = &w.apps[..w.prefix_with_components(config.figures.sweep_components)];
    let components: usize = apps.iter().map(ComponentGraph::len).sum();
    let mut t = Table::new(
        "fig7",
        &["nabla", "components", "total_replicas", "backups", "parallel_backups", "sequential_backups"],
    );
    for &nabla in &config.planner.nabla_grid {
        let plans = plan_all(apps, Strategy::Rrft, &config.planner.params_at(nabla))?;
        let total: u32 = plans.iter().map(|p| p.total_instances).sum();
        let par: u32 = plans.iter().map(|p| p.backups_by_order(ExecOrder::Parallel)).sum();
        let seq: u32 = plans.iter().map(|p| p.backups_by_order(ExecOrder::Sequential)).sum();
        t.push(vec![num(nabla), json!(components), json!(total), json!(total as usize - components), json!(par), json!(seq)]);
    }
    Ok(t)
}

pub fn fig8_recovery_by_threshold(config: &ExperimentConfig, w: &Workload) -> Result<Table> {
    let apps = &w.apps[..w.prefix_with_components(config.figures.sweep_components)];
    let mut t = Table::new("fig8", &["seed", "nabla", "recoveries", "mean_recovery_s"]);
    let plans: Vec<Vec<ReplicaPlan>> = config
        .planner
        .nabla_grid
        .iter()
        .map(|&n| plan_all(apps, Strategy::Rrft, &config.planner.params_at(n)))
        .collect::<Result<_>>()?;
    for s in replicate_seeds(config) {
        for (&nabla, p) in config.planner.nabla_grid.iter().zip(&plans) {
            let r = simulate_plans(config, w, p, s)?;
            t.push(vec![json!(s.to_string()), num(nabla), json!(r.recovery_times.len()), opt(r.mean_recovery(None))]);
        }
    }
    Ok(t)
}

pub fn fig9_backup_split(config: &ExperimentConfig, w: &Workload) -> Result<Table> {
    let plans = plan_all(&w.apps, Strategy::Rrft, &config.planner.params())?;
    let mut t = Table::new("fig9", &["apps", "parallel_backups", "sequential_backups"]);
    for &n in &config.figures.app_counts {
        let n = n.min(plans.len());
        let par: u32 = plans[..n].iter().map(|p| p.backups_by_order(ExecOrder::Parallel)).sum();
        let seq: u32 = plans[..n].iter().map(|p| p.backups_by_order(ExecOrder::Sequential)).sum();
        t.push(vec![json!(n), json!(par), json!(seq)]);
    }
    Ok(t)
}

pub fn fig10_blast_radius(config: &ExperimentConfig, _w: &Workload) -> Result<Table> {
    let mut t = Table::new("fig10", &["seed", "pm_failures", "placement", "mean_pct_affected", "cumulative_pct_affected"]);
    for s in (0..config.figures.seeds as u64).map(|i| seed::derive(config.seed, &[seed::BLAST, i])) {
        for row in blast_comparison(config, config.figures.blast_apps, s)? {
            t.push(vec![
                json!(s.to_string()),
                json!(row.pm_failures),
                json!(row.placement),
                num(row.mean_pct),
                num(row.cumulative_pct),
            ]);
        }
    }
    Ok(t)
}

fn success_table(config: &ExperimentConfig, w: &Workload, name: &str, order: ExecOrder) -> Result<Table> {
    let plans = plan_all(&w.apps, Strategy::Rrft, &config.planner.params())?;
    let mut t = Table::new(name, &["seed", "apps", "components", "success_pct"]);
    for s in replicate_seeds(config) {
        for &n in &config.figures.app_counts {
            let n = n.min(plans.len());
            let r = simulate_plans(config, w, &plans[..n], s)?;
            let pct = match order {
                ExecOrder::Parallel => r.parallel_backup_success_pct,
                ExecOrder::Sequential => r.sequential_backup_success_pct,
            };
            let comps: usize = w.apps[..n].iter().map(ComponentGraph::len).sum();
            t.push(vec![json!(s.to_string()), json!(n), json!(comps), num(pct)]);
        }
    }
    Ok(t)
}

pub fn fig11_parallel_success(config: &ExperimentConfig, w: &Workload) -> Result<Table> {
    success_table(config, w, "fig11", ExecOrder::Parallel)
}

pub fn fig12_sequential_success(config: &ExperimentConfig, w: &Workload) -> Result<Table> {
    success_table(config, w, "fig12", ExecOrder::Sequential)
}

/// Totals per strategy with percentage deltas against the threshold
/// planner, plus a row for the threshold planner under random placement.
pub fn compare_strategies(config: &ExperimentConfig) -> Result<Table> {
    config.validate()?;
    if config.strategies.len() < 2 {
        return Err(Error::Validation("comparison needs at least two strategies".into()));
    }
    let workload = Workload::generate(&config.workload_with(config.workload.num_apps, config.seed))?;
    let params = config.planner.params();
    let pm_failures = config.fault.pm_failure_counts.first().copied().unwrap_or(10);

    let measure = |plans: &[ReplicaPlan], placer: Placer, dc_cfg: &DatacenterConfig| -> Result<[f64; 4]> {
        let (dc, map) = deploy(plans, dc_cfg, placer)?;
        let pms = map.pms_per_app();
        let avg = pms.values().sum::<usize>() as f64 / pms.len().max(1) as f64;
        let mut probe = dc.clone();
        let blast = mean_blast(&measure_blast_radius(&map, &mut probe, pm_failures.min(dc.alive_count()), config.seed)?);
        let total: u32 = plans.iter().map(|p| p.total_instances).sum();
        let required: u32 = plans.iter().map(ReplicaPlan::vms_required).sum();
        Ok([total as f64, required as f64, avg, blast])
    };

    let rrft_plans = plan_all(&workload.apps, Strategy::Rrft, &params)?;
    let rrft_dc = config.datacenter.sized_for(&rrft_plans, config.seed);
    let reference = measure(&rrft_plans, Placer::Rules(config.placement_mode), &rrft_dc)?;

    let mut rows: Vec<(String, [f64; 4])> = Vec::new();
    for &s in &config.strategies {
        if s == Strategy::Rrft {
            rows.push((s.to_string(), reference));
            continue;
        }
        let plans = plan_all(&workload.apps, s, &params)?;
        let dc_cfg = config.datacenter.sized_for(&plans, config.seed);
        rows.push((s.to_string(), measure(&plans, Placer::Rules(config.placement_mode), &dc_cfg)?));
    }
    rows.push((
        "rrft+random_placement".into(),
        measure(&rrft_plans, Placer::Random(config.seed), &rrft_dc)?,
    ));

    let mut t = Table::new(
        "compare",
        &[
            "strategy",
            "total_vms",
            "vms_required",
            "avg_pms_per_app",
            "blast_pct",
            "delta_total_vms_pct",
            "delta_vms_required_pct",
            "delta_avg_pms_pct",
            "delta_blast_pct",
        ],
    );
    for (name, v) in rows {
        let delta = |i: usize| {
            if reference[i] == 0.0 {
                num(0.0)
            } else {
                num(100.0 * (v[i] - reference[i]) / reference[i])
            }
        };
        t.push(vec![
            json!(name),
            num(v[0]),
            num(v[1]),
            num(v[2]),
            num(v[3]),
            delta(0),
            delta(1),
            delta(2),
            delta(3),
        ]);
    }
    Ok(t)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub path: String,
    pub bytes: usize,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub seed: Option<u64>,
    pub label: String,
    pub files: Vec<ManifestEntry>,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub errors: Vec<String>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Writes `files` (relative name, contents) under `dir` together with a
/// `manifest.json` listing their sizes and digests.
pub fn write_artifacts(
    dir: &Path,
    command: &str,
    seed_value: Option<u64>,
    files: &[(String, String)],
    errors: &[String],
) -> Result<Manifest> {
    std::fs::create_dir_all(dir)?;
    let mut entries = Vec::new();
    for (name, contents) in files {
        std::fs::write(dir.join(name), contents)?;
        entries.push(ManifestEntry {
            path: name.clone(),
            bytes: contents.len(),
            sha256: sha256_hex(contents.as_bytes()),
        });
    }
    entries.sort_by(|a, b| a.path.cmp(&b.path));
    let manifest = Manifest {
        tool: "rrft".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        command: command.into(),
        seed: seed_value,
        label: SUITE_LABEL.into(),
        files: entries,
        errors: errors.to_vec(),
    };
    let mut text = serde_json::to_string_pretty(&manifest)?;
    text.push('\n');
    std::fs::write(dir.join("manifest.json"), text)?;
    Ok(manifest)
}
