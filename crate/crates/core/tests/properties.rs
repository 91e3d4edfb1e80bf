use proptest::prelude::*;

use rrft::experiments::{deploy, plan_all, DatacenterSection, Placer, Strategy as Planner};
use rrft::sim::{apps_by_pm, run_simulation, Deployment, FaultScript, SimConfig};
use rrft::workload::{generate_arrivals, generate_workload};
use rrft::{
    rank_components, replica_count, Component, ComponentGraph, ComponentId, PlacementMode, PlannerParams,
    SignificanceRecord, WorkloadConfig,
};

fn component(i: usize) -> Component {
    Component {
        id: ComponentId(format!("n{i}")),
        failure_rate: 0.3,
        active_duration: 1.5,
        fail_count: 3,
        app_fail_count: 1,
        cpu_demand: 1,
        mem_demand: 1000,
        restart_delay: 1.0,
    }
}

/// DAG over `n` vertices from upper-triangle bits; vertices left alone are
/// linked to their neighbour.
fn dag() -> impl Strategy<Value = ComponentGraph> {
    (2usize..=10)
        .prop_flat_map(|n| (Just(n), proptest::collection::vec(any::<bool>(), n * (n - 1) / 2)))
        .prop_map(|(n, bits)| {
            let mut edges = Vec::new();
            let mut k = 0;
            for a in 0..n {
                for b in a + 1..n {
                    if bits[k] {
                        edges.push((a, b));
                    }
                    k += 1;
                }
            }
            for v in 0..n {
                if !edges.iter().any(|&(a, b)| a == v || b == v) {
                    edges.push(if v + 1 < n { (v, v + 1) } else { (v - 1, v) });
                }
            }
            let name = |i: usize| ComponentId(format!("n{i}"));
            let edges: Vec<_> = edges.into_iter().map(|(a, b)| (name(a), name(b))).collect();
            ComponentGraph::new("g", (0..n).map(component).collect(), &edges).unwrap()
        })
}

fn record(i: usize, omega: f64, app: f64) -> SignificanceRecord {
    SignificanceRecord {
        component_id: ComponentId(format!("r{i:02}")),
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

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn distances_respect_edges(g in dag()) {
        let d = g.distance_matrix();
        let n = g.len();
        for i in 0..n {
            prop_assert_eq!(d[i][i], 0);
            for j in 0..n {
                // acyclic: never reachable both ways
                prop_assert!(d[i][j] == 0 || d[j][i] == 0);
                for &s in g.successors(j) {
                    if i != s && (d[i][j] > 0 || i == j) {
                        prop_assert!(d[i][s] >= 1 && d[i][s] <= d[i][j] + 1);
                    }
                }
            }
        }
    }

    #[test]
    fn ranks_are_dense_and_order_free(
        scores in proptest::collection::vec((0.0f64..1.0, 0.0f64..0.2), 1..20),
        rotate in 0usize..20,
    ) {
        let records: Vec<_> = scores.iter().enumerate().map(|(i, &(o, a))| record(i, o, a)).collect();
        let table = rank_components(&records).unwrap();
        prop_assert!(table.is_dense());
        prop_assert_eq!(table.entries.iter().map(|e| e.rank).min(), Some(1));

        let mut shuffled = records.clone();
        let r = rotate % shuffled.len();
        shuffled.rotate_left(r);
        let other = rank_components(&shuffled).unwrap();
        for e in &table.entries {
            prop_assert_eq!(other.rank_of(&e.component_id), Some(e.rank));
        }
    }

    #[test]
    fn replica_count_is_minimal_and_monotone(p in 0.001f64..0.999, a in 1e-5f64..0.9, b in 1e-5f64..0.9, mu in 0u32..4) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let k_lo = replica_count(p, lo, mu).unwrap();
        let k_hi = replica_count(p, hi, mu).unwrap();
        prop_assert!(k_hi <= k_lo);
        let k = replica_count(p, lo, 0).unwrap() as i32;
        prop_assert!(p.powi(k) <= lo);
        prop_assert!(k == 1 || p.powi(k - 1) > lo);
        prop_assert_eq!(k_lo, (k as u32).max(mu));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn plans_and_placements_hold_their_rules(
        seed in any::<u64>(),
        nabla in 1e-4f64..0.5,
        mu in 0u32..3,
        fraction in 0.0f64..=1.0,
        relaxed in any::<bool>(),
    ) {
        let cfg = WorkloadConfig { num_apps: 8, seed, ..Default::default() };
        let apps = generate_workload(&cfg).unwrap();
        let params = PlannerParams { nabla, mu, parallel_fraction: fraction };
        let plans = plan_all(&apps, Planner::Rrft, &params).unwrap();
        for p in &plans {
            prop_assert!(p.constraint_violations().is_empty(), "{:?}", p.constraint_violations());
        }
        let mode = if relaxed { PlacementMode::Relaxed } else { PlacementMode::Strict };
        let section = DatacenterSection::default();
        let (dc, map) = deploy(&plans, &section.sized_for(&plans, seed), Placer::Rules(mode)).unwrap();
        prop_assert!(dc.capacity_audit().is_empty());
        let placed = map.len() as u32;
        prop_assert_eq!(placed, plans.iter().map(|p| p.total_instances).sum::<u32>());

        if mode == PlacementMode::Strict {
            // one machine never holds two instances of the same application
            let mut seen = std::collections::BTreeSet::new();
            for a in map.assignments() {
                prop_assert!(seen.insert((a.pm, a.instance.app.clone())));
            }
            prop_assert!(apps_by_pm(&map).values().all(|s| !s.is_empty()));
        }
    }

    #[test]
    fn simulation_conserves_instances(seed in any::<u64>(), fault_seed in any::<u64>(), nabla in 1e-3f64..0.2) {
        let cfg = WorkloadConfig { num_apps: 6, seed, ..Default::default() };
        let apps = generate_workload(&cfg).unwrap();
        let starts: Vec<f64> = generate_arrivals(&cfg).unwrap().into_iter().map(|(_, t)| t).collect();
        let params = PlannerParams { nabla, ..Default::default() };
        let plans = plan_all(&apps, Planner::Rrft, &params).unwrap();
        let (mut dc, map) = deploy(&plans, &DatacenterSection::default().sized_for(&plans, seed), Placer::Rules(PlacementMode::Strict)).unwrap();
        let horizon = starts.last().copied().unwrap_or(0.0) + 10.0;
        let script = FaultScript::generate(&apps, &plans, Some(&dc), 5, horizon, fault_seed).unwrap();
        let deployment = Deployment { apps: &apps, start_times: &starts, plans: &plans, placement: Some(&map) };
        let r = run_simulation(&deployment, Some(&mut dc), &script, &SimConfig::default()).unwrap();

        prop_assert_eq!(r.total_vms, r.instances_finished + r.instances_failed + r.instances_never_needed);
        for pct in [r.parallel_backup_success_pct, r.sequential_backup_success_pct] {
            prop_assert!((0.0..=100.0).contains(&pct));
        }
        for b in &r.pct_resource_affected {
            prop_assert!(b.pct > 0.0 && b.pct <= 100.0);
            // strict placement: one machine holds at most one instance per app
            prop_assert_eq!(b.lost_vms, 1);
        }
        prop_assert!(r.recovery_times.iter().all(|x| x.seconds >= 0.0));
        prop_assert!(r.apps_failed as usize <= apps.len());
    }

    #[test]
    fn raising_the_threshold_never_adds_replicas(seed in any::<u64>()) {
        let apps = generate_workload(&WorkloadConfig { num_apps: 5, seed, ..Default::default() }).unwrap();
        let mut last = u32::MAX;
        for nabla in [0.001, 0.005, 0.01, 0.05, 0.1] {
            let params = PlannerParams { nabla, ..Default::default() };
            let total: u32 = plan_all(&apps, Planner::Rrft, &params).unwrap().iter().map(|p| p.total_instances).sum();
            prop_assert!(total <= last);
            last = total;
        }
    }
}
