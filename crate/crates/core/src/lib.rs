//! Rank-based resource-aware fault tolerance for cloud applications.
//!
//! The pipeline ranks the components of an application DAG, sizes and
//! orders their replicas, places every instance onto a pod-structured
//! datacenter, and measures the outcome with seeded fault injection.

pub mod datacenter;
pub mod error;
pub mod experiments;
pub mod graph;
pub mod pipeline;
pub mod placement;
pub mod planner;
pub mod rank;
pub mod seed;
pub mod sim;
pub mod workload;

pub use datacenter::{Datacenter, DatacenterConfig, InstanceId, PhysicalMachine};
pub use error::{Error, Result};
pub use graph::{Component, ComponentGraph, ComponentId, SignificanceRecord};
pub use placement::{audit_rules, place_application, place_random, PlacementMap, PlacementMode, Rule, Violation};
pub use planner::{
    assign_execution_order, build_mdp_chain, build_plan, replica_count, ExecOrder, MdpAction, MdpChain, MdpState,
    PlannerParams, ReplicaPlan,
};
pub use rank::{rank_components, rank_ftcloud_like, rank_rocloud_like, RankStrategy, RankTable};
pub use sim::{FaultScript, SimConfig, SimulationReport};
pub use workload::WorkloadConfig;
