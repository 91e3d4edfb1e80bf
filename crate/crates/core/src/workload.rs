//! Random application generator and Poisson arrival sequences.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Component, ComponentGraph, ComponentId};
use crate::seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WorkloadConfig {
    pub num_apps: usize,
    pub components_range: (u32, u32),
    pub edge_probability_range: (f64, f64),
    pub mem_demand_range: (u32, u32),
    pub cpu_demand_range: (u32, u32),
    /// Range of `failure_rate × active_duration`; the lower end is open.
    pub exposure_range: (f64, f64),
    pub active_duration_range: (f64, f64),
    pub fail_count_range: (u32, u32),
    pub restart_delay_range: (f64, f64),
    /// Applications per second.
    pub arrival_rate: f64,
    pub seed: u64,
}

impl Default for WorkloadConfig {
    fn default() -> Self {
        WorkloadConfig {
            num_apps: 100,
            components_range: (4, 16),
            edge_probability_range: (0.5, 0.8),
            mem_demand_range: (1000, 2000),
            cpu_demand_range: (1, 4),
            exposure_range: (0.0, 2.0),
            active_duration_range: (1.0, 10.0),
            fail_count_range: (1, 50),
            restart_delay_range: (1.0, 3.0),
            arrival_rate: 1.0,
            seed: 0,
        }
    }
}

impl WorkloadConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Validation(format!("workload: {m}")));
        let (n0, n1) = self.components_range;
        if n0 < 2 || n0 > n1 {
            return bad("components_range must satisfy 2 <= lo <= hi");
        }
        let (q0, q1) = self.edge_probability_range;
        if !(0.0..=1.0).contains(&q0) || !(0.0..=1.0).contains(&q1) || q0 > q1 {
            return bad("edge_probability_range must lie in [0,1] with lo <= hi");
        }
        if self.mem_demand_range.0 == 0 || self.mem_demand_range.0 > self.mem_demand_range.1 {
            return bad("mem_demand_range must be positive and non-empty");
        }
        if self.cpu_demand_range.0 == 0 || self.cpu_demand_range.0 > self.cpu_demand_range.1 {
            return bad("cpu_demand_range must be positive and non-empty");
        }
        let finite = |r: (f64, f64)| r.0.is_finite() && r.1.is_finite() && r.0 <= r.1;
        if !finite(self.exposure_range) || self.exposure_range.0 < 0.0 || self.exposure_range.1 <= 0.0 {
            return bad("exposure_range must satisfy 0 <= lo <= hi, hi > 0");
        }
        if !finite(self.active_duration_range) || self.active_duration_range.0 <= 0.0 {
            return bad("active_duration_range must be positive");
        }
        if self.fail_count_range.0 > self.fail_count_range.1 {
            return bad("fail_count_range is empty");
        }
        if !finite(self.restart_delay_range) || self.restart_delay_range.0 < 0.0 {
            return bad("restart_delay_range must be non-negative");
        }
        if !(self.arrival_rate.is_finite() && self.arrival_rate > 0.0) {
            return bad("arrival_rate must be positive");
        }
        Ok(())
    }
}

fn uniform(rng: &mut impl Rng, (lo, hi): (f64, f64)) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.random_range(lo..=hi)
    }
}

/// Application `app_index` of the workload. Edges follow a random
/// topological order; any vertex left isolated gets one edge to a random
/// other vertex, directed along that order.
pub fn generate_application(config: &WorkloadConfig, app_index: usize) -> Result<ComponentGraph> {
    config.validate()?;
    let mut rng = seed::rng(config.seed, &[seed::APPLICATION, app_index as u64]);
    let n = rng.random_range(config.components_range.0..=config.components_range.1) as usize;
    let edge_p = uniform(&mut rng, config.edge_probability_range);

    let mut position: Vec<usize> = (0..n).collect();
    position.shuffle(&mut rng);
    // by_pos[p] is the component at topological position p
    let mut by_pos = vec![0; n];
    for (c, &p) in position.iter().enumerate() {
        by_pos[p] = c;
    }
    let mut edges = Vec::new();
    let mut degree = vec![0usize; n];
    for a in 0..n {
        for b in a + 1..n {
            if rng.random_bool(edge_p) {
                edges.push((by_pos[a], by_pos[b]));
                degree[by_pos[a]] += 1;
                degree[by_pos[b]] += 1;
            }
        }
    }
    for v in 0..n {
        if degree[v] == 0 {
            let mut u = rng.random_range(0..n - 1);
            if u >= v {
                u += 1;
            }
            let e = if position[u] < position[v] { (u, v) } else { (v, u) };
            edges.push(e);
            degree[u] += 1;
            degree[v] += 1;
        }
    }

    let (e0, e1) = config.exposure_range;
    let components: Vec<Component> = (0..n)
        .map(|i| {
            let h = uniform(&mut rng, config.active_duration_range);
            let exposure = e1 - (e1 - e0) * rng.random::<f64>();
            let fail_count = rng.random_range(config.fail_count_range.0..=config.fail_count_range.1);
            Component {
                id: ComponentId(format!("c{i:02}")),
                failure_rate: exposure / h,
                active_duration: h,
                fail_count,
                app_fail_count: rng.random_range(0..=fail_count),
                cpu_demand: rng.random_range(config.cpu_demand_range.0..=config.cpu_demand_range.1),
                mem_demand: rng.random_range(config.mem_demand_range.0..=config.mem_demand_range.1),
                restart_delay: uniform(&mut rng, config.restart_delay_range),
            }
        })
        .collect();
    let edge_ids: Vec<(ComponentId, ComponentId)> = edges
        .into_iter()
        .map(|(a, b)| (components[a].id.clone(), components[b].id.clone()))
        .collect();
    ComponentGraph::new(format!("app{app_index:04}"), components, &edge_ids)
}

/// All `num_apps` applications of the workload.
pub fn generate_workload(config: &WorkloadConfig) -> Result<Vec<ComponentGraph>> {
    (0..config.num_apps).map(|i| generate_application(config, i)).collect()
}

/// `(app_index, arrival_time)` with exponential inter-arrival times.
pub fn generate_arrivals(config: &WorkloadConfig) -> Result<Vec<(usize, f64)>> {
    config.validate()?;
    let mut rng = seed::rng(config.seed, &[seed::ARRIVALS]);
    let exp = Exp::new(config.arrival_rate).map_err(|e| Error::Validation(e.to_string()))?;
    let mut t = 0.0;
    Ok((0..config.num_apps)
        .map(|i| {
            t += exp.sample(&mut rng);
            (i, t)
        })
        .collect())
}
