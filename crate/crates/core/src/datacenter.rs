//! Pods of physical machines with CPU/memory capacity and the instances
//! they host.

use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::ComponentId;
use crate::seed;

/// One execution instance: the primary (`index == 0`) or a backup of a
/// component. Each instance runs in its own VM.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct InstanceId {
    pub app: String,
    pub component: ComponentId,
    pub index: u32,
}

impl InstanceId {
    pub fn new(app: impl Into<String>, component: ComponentId, index: u32) -> Self {
        InstanceId {
            app: app.into(),
            component,
            index,
        }
    }

    pub fn is_primary(&self) -> bool {
        self.index == 0
    }
}

impl fmt::Display for InstanceId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}#{}", self.app, self.component, self.index)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hosted {
    pub instance: InstanceId,
    /// Reserved vCPU; 0 for a standby that only holds a slot.
    pub cpu: u32,
    pub mem: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhysicalMachine {
    pub id: usize,
    pub pod_id: usize,
    pub cpu_capacity: u32,
    pub mem_capacity: u32,
    pub cpu_free: u32,
    pub mem_free: u32,
    pub alive: bool,
    pub hosted: Vec<Hosted>,
}

impl PhysicalMachine {
    pub fn fits(&self, cpu: u32, mem: u32) -> bool {
        self.alive && self.cpu_free >= cpu && self.mem_free >= mem
    }

    pub fn hosts_app(&self, app: &str) -> bool {
        self.hosted.iter().any(|h| h.instance.app == app)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DatacenterConfig {
    pub num_pods: usize,
    pub machines_per_pod: usize,
    pub cpu_range: (u32, u32),
    pub mem_range: (u32, u32),
    pub seed: u64,
}

impl Default for DatacenterConfig {
    fn default() -> Self {
        DatacenterConfig {
            num_pods: 4,
            machines_per_pod: 10,
            cpu_range: (16, 32),
            mem_range: (16000, 32000),
            seed: 0,
        }
    }
}

/// Fat-tree datacenter reduced to its pod partition. Machine ids are
/// contiguous per pod: `id = pod * machines_per_pod + slot`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Datacenter {
    pub num_pods: usize,
    pub machines_per_pod: usize,
    machines: Vec<PhysicalMachine>,
}

impl Datacenter {
    /// Capacities are drawn uniformly from the configured inclusive ranges.
    pub fn build(config: &DatacenterConfig) -> Result<Self> {
        if config.num_pods == 0 || config.machines_per_pod == 0 {
            return Err(Error::Validation("datacenter needs at least one pod and one machine per pod".into()));
        }
        let (c0, c1) = config.cpu_range;
        let (m0, m1) = config.mem_range;
        if c0 == 0 || c0 > c1 || m0 == 0 || m0 > m1 {
            return Err(Error::Validation("capacity ranges must be non-empty and positive".into()));
        }
        let mut rng = seed::rng(config.seed, &[seed::DATACENTER]);
        let mut machines = Vec::with_capacity(config.num_pods * config.machines_per_pod);
        for pod in 0..config.num_pods {
            for _ in 0..config.machines_per_pod {
                let cpu = rng.random_range(c0..=c1);
                let mem = rng.random_range(m0..=m1);
                machines.push(PhysicalMachine {
                    id: machines.len(),
                    pod_id: pod,
                    cpu_capacity: cpu,
                    mem_capacity: mem,
                    cpu_free: cpu,
                    mem_free: mem,
                    alive: true,
                    hosted: Vec::new(),
                });
            }
        }
        Ok(Datacenter {
            num_pods: config.num_pods,
            machines_per_pod: config.machines_per_pod,
            machines,
        })
    }

    pub fn machines(&self) -> &[PhysicalMachine] {
        &self.machines
    }

    pub fn machine(&self, pm: usize) -> Result<&PhysicalMachine> {
        self.machines.get(pm).ok_or(Error::UnknownPm(pm))
    }

    pub fn pod(&self, pod: usize) -> &[PhysicalMachine] {
        let start = pod * self.machines_per_pod;
        &self.machines[start..start + self.machines_per_pod]
    }

    pub fn alive_count(&self) -> usize {
        self.machines.iter().filter(|m| m.alive).count()
    }

    fn machine_mut(&mut self, pm: usize) -> Result<&mut PhysicalMachine> {
        self.machines.get_mut(pm).ok_or(Error::UnknownPm(pm))
    }

    /// Reserves `cpu`/`mem` on `pm` for `instance`. On failure nothing
    /// changes.
    pub fn allocate(&mut self, pm: usize, instance: InstanceId, cpu: u32, mem: u32) -> Result<()> {
        let m = self.machine_mut(pm)?;
        if !m.alive {
            return Err(Error::PmAlreadyFailed(pm));
        }
        if m.cpu_free < cpu || m.mem_free < mem {
            return Err(Error::InsufficientCapacity { pm });
        }
        m.cpu_free -= cpu;
        m.mem_free -= mem;
        m.hosted.push(Hosted { instance, cpu, mem });
        Ok(())
    }

    /// Records a standby instance on `pm` without reserving capacity.
    pub fn assign_standby(&mut self, pm: usize, instance: InstanceId) -> Result<()> {
        self.allocate(pm, instance, 0, 0)
    }

    /// Removes `instance` from `pm` and returns its reservation. No-op when
    /// it is not hosted there.
    pub fn release(&mut self, pm: usize, instance: &InstanceId) {
        if let Some(m) = self.machines.get_mut(pm) {
            if let Some(pos) = m.hosted.iter().position(|h| &h.instance == instance) {
                let h = m.hosted.remove(pos);
                m.cpu_free += h.cpu;
                m.mem_free += h.mem;
            }
        }
    }

    /// Marks `pm` dead and returns every instance it hosted. Residuals of a
    /// dead machine are left as they were.
    pub fn fail_pm(&mut self, pm: usize) -> Result<Vec<InstanceId>> {
        let m = self.machine_mut(pm)?;
        if !m.alive {
            return Err(Error::PmAlreadyFailed(pm));
        }
        m.alive = false;
        Ok(m.hosted.iter().map(|h| h.instance.clone()).collect())
    }

    /// Machines whose free capacity disagrees with capacity minus hosted
    /// demand.
    pub fn capacity_audit(&self) -> Vec<String> {
        let mut out = Vec::new();
        for m in &self.machines {
            let cpu: u64 = m.hosted.iter().map(|h| h.cpu as u64).sum();
            let mem: u64 = m.hosted.iter().map(|h| h.mem as u64).sum();
            if cpu + m.cpu_free as u64 != m.cpu_capacity as u64 || mem + m.mem_free as u64 != m.mem_capacity as u64 {
                out.push(format!("PM {}: hosted + free != capacity", m.id));
            }
            if m.cpu_free > m.cpu_capacity || m.mem_free > m.mem_capacity {
                out.push(format!("PM {}: free exceeds capacity", m.id));
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_pm(cpu: u32, mem: u32) -> Datacenter {
        Datacenter::build(&DatacenterConfig {
            num_pods: 1,
            machines_per_pod: 1,
            cpu_range: (cpu, cpu),
            mem_range: (mem, mem),
            seed: 99,
        })
        .unwrap()
    }

    fn inst(i: u32) -> InstanceId {
        InstanceId::new("a", "c".into(), i)
    }

    #[test]
    fn degenerate_ranges_are_exact() {
        let dc = one_pm(16, 16000);
        let m = &dc.machines()[0];
        assert_eq!((m.cpu_capacity, m.mem_capacity), (16, 16000));
    }

    #[test]
    fn deterministic_and_in_range() {
        let cfg = DatacenterConfig {
            seed: 7,
            ..Default::default()
        };
        let a = Datacenter::build(&cfg).unwrap();
        assert_eq!(a, Datacenter::build(&cfg).unwrap());
        assert_eq!(a.machines().len(), 40);
        for m in a.machines() {
            assert!((16..=32).contains(&m.cpu_capacity));
            assert!((16000..=32000).contains(&m.mem_capacity));
            assert_eq!(m.pod_id, m.id / 10);
        }
        assert!(a.pod(3).iter().all(|m| m.pod_id == 3));
    }

    #[test]
    fn rejects_empty() {
        let cfg = DatacenterConfig {
            num_pods: 0,
            ..Default::default()
        };
        assert!(Datacenter::build(&cfg).is_err());
    }

    #[test]
    fn allocation_arithmetic() {
        let mut dc = one_pm(16, 16000);
        dc.allocate(0, inst(0), 1, 1000).unwrap();
        assert_eq!((dc.machines()[0].cpu_free, dc.machines()[0].mem_free), (15, 15000));
        let err = dc.allocate(0, inst(1), 1, 15001).unwrap_err();
        assert!(matches!(err, Error::InsufficientCapacity { pm: 0 }));
        assert_eq!((dc.machines()[0].cpu_free, dc.machines()[0].mem_free), (15, 15000));
        dc.allocate(0, inst(2), 10, 10000).unwrap();
        dc.allocate(0, inst(3), 5, 5000).unwrap();
        assert_eq!((dc.machines()[0].cpu_free, dc.machines()[0].mem_free), (0, 0));
        assert!(dc.capacity_audit().is_empty());
    }

    #[test]
    fn failing_a_machine() {
        let mut dc = one_pm(16, 16000);
        assert!(dc.fail_pm(0).unwrap().is_empty());
        assert!(matches!(dc.fail_pm(0), Err(Error::PmAlreadyFailed(0))));
        assert!(matches!(dc.fail_pm(5), Err(Error::UnknownPm(5))));

        let mut dc = Datacenter::build(&DatacenterConfig::default()).unwrap();
        for i in 0..3 {
            dc.allocate(4, inst(i), 1, 100).unwrap();
        }
        dc.assign_standby(5, inst(9)).unwrap();
        let before = dc.machines()[5].clone();
        let lost = dc.fail_pm(4).unwrap();
        assert_eq!(lost, vec![inst(0), inst(1), inst(2)]);
        assert_eq!(dc.machines()[5], before);
        assert!(dc.allocate(4, inst(7), 1, 1).is_err());
        assert!(dc.capacity_audit().is_empty());
    }
}
