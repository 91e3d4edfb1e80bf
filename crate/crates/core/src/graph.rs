//! Application DAGs and the per-component significance quantities used for
//! ranking.
//!
//! A [`ComponentGraph`] is validated on construction (acyclic, no isolated
//! vertices, sane reliability statistics) and immutable afterwards, so every
//! derived quantity here is a pure function of the graph.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Opaque component identifier. Ordering is lexicographic and is used as the
/// deterministic tie-breaker throughout ranking and placement.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ComponentId(pub String);

impl ComponentId {
    pub fn new(id: impl Into<String>) -> Self {
        ComponentId(id.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for ComponentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for ComponentId {
    fn from(s: &str) -> Self {
        ComponentId(s.to_owned())
    }
}

/// One vertex of an application DAG with its reliability history and
/// resource demand.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Component {
    pub id: ComponentId,
    /// Failures per time unit.
    pub failure_rate: f64,
    /// Time units the component stays active.
    pub active_duration: f64,
    /// Historical component failures.
    pub fail_count: u32,
    /// Historical application failures attributed to this component.
    pub app_fail_count: u32,
    /// vCPU units.
    pub cpu_demand: u32,
    /// Memory in MB.
    pub mem_demand: u32,
    /// Seconds needed to start a replica after a failure.
    pub restart_delay: f64,
}

impl Component {
    /// Failure probability of one activation under the Poisson model:
    /// `λh·e^(−λh)`.
    pub fn failure_probability(&self) -> f64 {
        let x = self.failure_rate * self.active_duration;
        x * (-x).exp()
    }

    fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::Validation(format!("component {}: {what}", self.id)));
        if self.id.0.is_empty() {
            return Err(Error::Validation("component with empty id".into()));
        }
        if !self.failure_rate.is_finite() || self.failure_rate < 0.0 {
            return bad("failure_rate must be finite and >= 0");
        }
        if !self.active_duration.is_finite() || self.active_duration <= 0.0 {
            return bad("active_duration must be finite and > 0");
        }
        if self.app_fail_count > self.fail_count {
            return bad("app_fail_count exceeds fail_count");
        }
        if self.cpu_demand < 1 {
            return bad("cpu_demand must be >= 1");
        }
        if self.mem_demand == 0 {
            return bad("mem_demand must be > 0");
        }
        if !self.restart_delay.is_finite() || self.restart_delay < 0.0 {
            return bad("restart_delay must be finite and >= 0");
        }
        Ok(())
    }
}

/// Serialized form of a graph: the JSON document read and written by the
/// CLI.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GraphDocument {
    pub app_id: String,
    pub components: Vec<Component>,
    pub edges: Vec<(ComponentId, ComponentId)>,
}

/// A validated application DAG. Edge `i → j` means component `j` depends on
/// component `i`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "GraphDocument", into = "GraphDocument")]
pub struct ComponentGraph {
    app_id: String,
    components: Vec<Component>,
    successors: Vec<Vec<usize>>,
    predecessors: Vec<Vec<usize>>,
}

impl ComponentGraph {
    /// Builds and validates a graph. Duplicate edges are merged.
    pub fn new(
        app_id: impl Into<String>,
        components: Vec<Component>,
        edges: &[(ComponentId, ComponentId)],
    ) -> Result<Self> {
        let app_id = app_id.into();
        let mut index = BTreeMap::new();
        for (i, c) in components.iter().enumerate() {
            c.validate()?;
            if index.insert(c.id.clone(), i).is_some() {
                return Err(Error::InvalidGraph(format!("duplicate component id {}", c.id)));
            }
        }
        let n = components.len();
        if n == 0 {
            return Err(Error::InvalidGraph("application has no components".into()));
        }
        let mut succ: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); n];
        for (from, to) in edges {
            let lookup = |id: &ComponentId| {
                index
                    .get(id)
                    .copied()
                    .ok_or_else(|| Error::InvalidGraph(format!("edge references unknown component {id}")))
            };
            let (i, j) = (lookup(from)?, lookup(to)?);
            if i == j {
                return Err(Error::InvalidGraph(format!("self-loop on {from}")));
            }
            succ[i].insert(j);
        }
        let successors: Vec<Vec<usize>> = succ.into_iter().map(|s| s.into_iter().collect()).collect();
        let mut predecessors = vec![Vec::new(); n];
        for (i, out) in successors.iter().enumerate() {
            for &j in out {
                predecessors[j].push(i);
            }
        }

        if let Some(cycle) = find_cycle(&successors) {
            let names: Vec<&str> = cycle.iter().map(|&i| components[i].id.as_str()).collect();
            return Err(Error::InvalidGraph(format!("cycle detected: {}", names.join(" -> "))));
        }
        let isolated: Vec<&str> = (0..n)
            .filter(|&i| successors[i].is_empty() && predecessors[i].is_empty())
            .map(|i| components[i].id.as_str())
            .collect();
        if !isolated.is_empty() {
            return Err(Error::InvalidGraph(format!("isolated components: {}", isolated.join(", "))));
        }

        Ok(ComponentGraph {
            app_id,
            components,
            successors,
            predecessors,
        })
    }

    pub fn app_id(&self) -> &str {
        &self.app_id
    }

    pub fn len(&self) -> usize {
        self.components.len()
    }

    pub fn is_empty(&self) -> bool {
        self.components.is_empty()
    }

    pub fn components(&self) -> &[Component] {
        &self.components
    }

    pub fn component(&self, idx: usize) -> &Component {
        &self.components[idx]
    }

    pub fn index_of(&self, id: &ComponentId) -> Option<usize> {
        self.components.iter().position(|c| &c.id == id)
    }

    pub fn successors(&self, idx: usize) -> &[usize] {
        &self.successors[idx]
    }

    pub fn predecessors(&self, idx: usize) -> &[usize] {
        &self.predecessors[idx]
    }

    pub fn is_root(&self, idx: usize) -> bool {
        self.predecessors[idx].is_empty()
    }

    pub fn edges(&self) -> Vec<(ComponentId, ComponentId)> {
        let mut out = Vec::new();
        for (i, succ) in self.successors.iter().enumerate() {
            for &j in succ {
                out.push((self.components[i].id.clone(), self.components[j].id.clone()));
            }
        }
        out
    }

    pub fn edge_count(&self) -> usize {
        self.successors.iter().map(Vec::len).sum()
    }

    /// `adj[i][j] == 1` iff component `j` depends on component `i`.
    pub fn adjacency(&self) -> Vec<Vec<u8>> {
        let n = self.len();
        let mut adj = vec![vec![0u8; n]; n];
        for (i, succ) in self.successors.iter().enumerate() {
            for &j in succ {
                adj[i][j] = 1;
            }
        }
        adj
    }

    /// Kahn order with ties resolved by component index.
    pub fn topological_order(&self) -> Vec<usize> {
        let n = self.len();
        let mut indeg: Vec<usize> = self.predecessors.iter().map(Vec::len).collect();
        let mut ready: BTreeSet<usize> = (0..n).filter(|&i| indeg[i] == 0).collect();
        let mut order = Vec::with_capacity(n);
        while let Some(i) = ready.pop_first() {
            order.push(i);
            for &j in &self.successors[i] {
                indeg[j] -= 1;
                if indeg[j] == 0 {
                    ready.insert(j);
                }
            }
        }
        order
    }

    /// Hop distances of shortest directed paths; 0 on the diagonal and for
    /// unreachable pairs.
    pub fn distance_matrix(&self) -> Vec<Vec<u32>> {
        let n = self.len();
        let mut dist = vec![vec![0u32; n]; n];
        for (src, row) in dist.iter_mut().enumerate() {
            let mut seen = vec![false; n];
            seen[src] = true;
            let mut queue = VecDeque::from([(src, 0u32)]);
            while let Some((v, d)) = queue.pop_front() {
                for &w in &self.successors[v] {
                    if !seen[w] {
                        seen[w] = true;
                        row[w] = d + 1;
                        queue.push_back((w, d + 1));
                    }
                }
            }
        }
        dist
    }

    /// Number of components that reach each component through some directed
    /// path.
    pub fn reachability_in_degree(&self) -> Vec<usize> {
        let dist = self.distance_matrix();
        let n = self.len();
        (0..n).map(|j| (0..n).filter(|&i| dist[i][j] > 0).count()).collect()
    }

    /// Computes every per-component significance quantity in component order.
    pub fn significance_values(&self) -> Vec<SignificanceRecord> {
        let dist = self.distance_matrix();
        let n = self.len();
        let psi: Vec<f64> = (0..n)
            .map(|j| (0..n).fold(0.0, |acc, i| acc + dist[i][j] as f64))
            .collect();

        self.components
            .iter()
            .enumerate()
            .map(|(i, c)| {
                let failure_impact = (0..n)
                    .filter(|&j| j != i && dist[i][j] > 0)
                    .fold(0.0, |acc, j| acc + psi[j]);
                let acc_failure_impact = c.failure_rate * failure_impact;
                let failure_prob = c.failure_probability();
                let no_failure_history = c.fail_count == 0;
                let mean_app_failure = if no_failure_history {
                    0.0
                } else {
                    c.app_fail_count as f64 / c.fail_count as f64
                };
                let h = c.active_duration;
                let app_failure_prob =
                    h * h * mean_app_failure * c.failure_rate * (-h * (c.failure_rate + mean_app_failure)).exp();
                SignificanceRecord {
                    component_id: c.id.clone(),
                    psi: psi[i],
                    failure_impact,
                    acc_failure_impact,
                    failure_prob,
                    mean_app_failure,
                    app_failure_prob,
                    most_significant_value: acc_failure_impact * failure_prob,
                    no_failure_history,
                }
            })
            .collect()
    }

    pub fn to_document(&self) -> GraphDocument {
        GraphDocument {
            app_id: self.app_id.clone(),
            components: self.components.clone(),
            edges: self.edges(),
        }
    }
}

impl TryFrom<GraphDocument> for ComponentGraph {
    type Error = Error;

    fn try_from(doc: GraphDocument) -> Result<Self> {
        ComponentGraph::new(doc.app_id, doc.components, &doc.edges)
    }
}

impl From<ComponentGraph> for GraphDocument {
    fn from(g: ComponentGraph) -> Self {
        g.to_document()
    }
}

/// Per-component ranking inputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignificanceRecord {
    pub component_id: ComponentId,
    /// Column sum of the distance matrix.
    pub psi: f64,
    /// Sum of `psi` over every component reachable from this one.
    pub failure_impact: f64,
    /// `failure_rate × failure_impact`.
    pub acc_failure_impact: f64,
    /// In `[0, 1/e]`.
    pub failure_prob: f64,
    /// `app_fail_count / fail_count`, or 0 without history.
    pub mean_app_failure: f64,
    /// In `[0, 1/e²]`.
    pub app_failure_prob: f64,
    /// `acc_failure_impact × failure_prob`.
    pub most_significant_value: f64,
    /// Set when `fail_count == 0` and `mean_app_failure` was defaulted to 0.
    pub no_failure_history: bool,
}

/// Returns the vertices of some directed cycle, closed (first == last), if any.
fn find_cycle(succ: &[Vec<usize>]) -> Option<Vec<usize>> {
    #[derive(Clone, Copy, PartialEq)]
    enum Mark {
        New,
        Active,
        Done,
    }
    let n = succ.len();
    let mut mark = vec![Mark::New; n];
    let mut parent = vec![usize::MAX; n];
    for start in 0..n {
        if mark[start] != Mark::New {
            continue;
        }
        let mut stack = vec![(start, 0usize)];
        mark[start] = Mark::Active;
        while let Some(&mut (v, ref mut next)) = stack.last_mut() {
            if *next < succ[v].len() {
                let w = succ[v][*next];
                *next += 1;
                match mark[w] {
                    Mark::New => {
                        mark[w] = Mark::Active;
                        parent[w] = v;
                        stack.push((w, 0));
                    }
                    Mark::Active => {
                        let mut cycle = vec![w];
                        let mut cur = v;
                        while cur != w {
                            cycle.push(cur);
                            cur = parent[cur];
                        }
                        cycle.push(w);
                        cycle.reverse();
                        return Some(cycle);
                    }
                    Mark::Done => {}
                }
            } else {
                mark[v] = Mark::Done;
                stack.pop();
            }
        }
    }
    None
}
