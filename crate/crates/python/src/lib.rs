//! Python bindings: graphs, ranking, planning, placement and the
//! experiment driver.

use pyo3::create_exception;
use pyo3::exceptions::{PyException, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use rrft::experiments::{self, ExperimentConfig};
use rrft::pipeline::rank_application;
use rrft::workload::generate_workload;
use rrft::{Error, PlacementMode, PlannerParams};

create_exception!(rrft_py, RrftError, PyException);
create_exception!(rrft_py, InfeasiblePlacement, RrftError);
create_exception!(rrft_py, InvariantBreach, RrftError);

fn to_py(err: Error) -> PyErr {
    match err.exit_code() {
        3 => InfeasiblePlacement::new_err(err.to_string()),
        4 => InvariantBreach::new_err(err.to_string()),
        _ => match err {
            Error::Io(_) => RrftError::new_err(err.to_string()),
            _ => PyValueError::new_err(err.to_string()),
        },
    }
}

fn json_err(err: serde_json::Error) -> PyErr {
    PyValueError::new_err(err.to_string())
}

#[pyclass(name = "ComponentGraph", module = "rrft_py", frozen, from_py_object)]
#[derive(Clone)]
struct PyGraph(rrft::ComponentGraph);

#[pymethods]
impl PyGraph {
    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        serde_json::from_str(text).map(PyGraph).map_err(json_err)
    }

    fn to_json(&self) -> PyResult<String> {
        serde_json::to_string(&self.0).map_err(json_err)
    }

    #[getter]
    fn app_id(&self) -> &str {
        self.0.app_id()
    }

    #[getter]
    fn component_ids(&self) -> Vec<String> {
        self.0.components().iter().map(|c| c.id.to_string()).collect()
    }

    fn __len__(&self) -> usize {
        self.0.len()
    }

    fn __repr__(&self) -> String {
        format!("ComponentGraph({:?}, {} components, {} edges)", self.0.app_id(), self.0.len(), self.0.edge_count())
    }

    fn distance_matrix(&self) -> Vec<Vec<u32>> {
        self.0.distance_matrix()
    }

    /// One dict per component with the ranking inputs.
    fn significance<'py>(&self, py: Python<'py>) -> PyResult<Vec<Bound<'py, PyDict>>> {
        self.0
            .significance_values()
            .into_iter()
            .map(|r| {
                let d = PyDict::new(py);
                d.set_item("component", r.component_id.as_str())?;
                d.set_item("psi", r.psi)?;
                d.set_item("failure_impact", r.failure_impact)?;
                d.set_item("acc_failure_impact", r.acc_failure_impact)?;
                d.set_item("failure_prob", r.failure_prob)?;
                d.set_item("omega", r.most_significant_value)?;
                d.set_item("app_failure_prob", r.app_failure_prob)?;
                d.set_item("no_failure_history", r.no_failure_history)?;
                Ok(d)
            })
            .collect()
    }

    /// `{component: rank}`.
    fn rank(&self) -> PyResult<Vec<(String, u32)>> {
        let ranking = rank_application(&self.0).map_err(to_py)?;
        Ok(ranking
            .ranks
            .entries
            .into_iter()
            .map(|e| (e.component_id.0, e.rank))
            .collect())
    }

    #[pyo3(signature = (nabla = 0.007, mu = 0, parallel_fraction = 0.5))]
    fn plan(&self, nabla: f64, mu: u32, parallel_fraction: f64) -> PyResult<PyPlan> {
        let params = PlannerParams {
            nabla,
            mu,
            parallel_fraction,
        };
        let ranking = rank_application(&self.0).map_err(to_py)?;
        rrft::pipeline::plan_application(&self.0, &ranking, &params)
            .map(PyPlan)
            .map_err(to_py)
    }
}

#[pyclass(name = "ReplicaPlan", module = "rrft_py", frozen, from_py_object)]
#[derive(Clone)]
struct PyPlan(rrft::ReplicaPlan);

#[pymethods]
impl PyPlan {
    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        serde_json::from_str(text).map(PyPlan).map_err(json_err)
    }

    fn to_json(&self) -> PyResult<String> {
        serde_json::to_string(&self.0).map_err(json_err)
    }

    #[getter]
    fn app_id(&self) -> &str {
        &self.0.app_id
    }

    #[getter]
    fn total_instances(&self) -> u32 {
        self.0.total_instances
    }

    fn vms_required(&self) -> u32 {
        self.0.vms_required()
    }

    fn constraint_violations(&self) -> Vec<String> {
        self.0.constraint_violations()
    }

    fn components<'py>(&self, py: Python<'py>) -> PyResult<Vec<Bound<'py, PyDict>>> {
        self.0
            .components
            .iter()
            .map(|c| {
                let d = PyDict::new(py);
                d.set_item("component", c.component_id.as_str())?;
                d.set_item("rank", c.rank)?;
                d.set_item("failure_prob", c.failure_prob)?;
                d.set_item("k_total", c.k_total)?;
                d.set_item("backups", c.backups)?;
                d.set_item("order", c.order.as_str())?;
                d.set_item("chain_states", c.chain.states.iter().map(|s| s.triple()).collect::<Vec<_>>())?;
                Ok(d)
            })
            .collect()
    }

    fn __repr__(&self) -> String {
        format!("ReplicaPlan({:?}, {} instances)", self.0.app_id, self.0.total_instances)
    }
}

#[pyclass(name = "Datacenter", module = "rrft_py")]
struct PyDatacenter(rrft::Datacenter);

#[pymethods]
impl PyDatacenter {
    #[new]
    #[pyo3(signature = (num_pods = 4, machines_per_pod = 10, cpu_range = (16, 32), mem_range = (16000, 32000), seed = 0))]
    fn new(num_pods: usize, machines_per_pod: usize, cpu_range: (u32, u32), mem_range: (u32, u32), seed: u64) -> PyResult<Self> {
        let cfg = rrft::DatacenterConfig {
            num_pods,
            machines_per_pod,
            cpu_range,
            mem_range,
            seed,
        };
        rrft::Datacenter::build(&cfg).map(PyDatacenter).map_err(to_py)
    }

    fn __len__(&self) -> usize {
        self.0.machines().len()
    }

    fn alive_count(&self) -> usize {
        self.0.alive_count()
    }

    /// `(pm, pod, cpu_free, mem_free, alive)` per machine.
    fn machines(&self) -> Vec<(usize, usize, u32, u32, bool)> {
        self.0
            .machines()
            .iter()
            .map(|m| (m.id, m.pod_id, m.cpu_free, m.mem_free, m.alive))
            .collect()
    }

    /// Kills a machine and returns the instances it hosted.
    fn fail_pm(&mut self, pm: usize) -> PyResult<Vec<String>> {
        self.0
            .fail_pm(pm)
            .map(|v| v.iter().map(ToString::to_string).collect())
            .map_err(to_py)
    }
}

#[pyclass(name = "PlacementMap", module = "rrft_py", frozen)]
struct PyPlacement(rrft::PlacementMap);

#[pymethods]
impl PyPlacement {
    fn to_json(&self) -> PyResult<String> {
        serde_json::to_string(&self.0).map_err(json_err)
    }

    fn __len__(&self) -> usize {
        self.0.len()
    }

    /// `(instance, pm, pod, reserved)` per placed instance.
    fn assignments(&self) -> Vec<(String, usize, usize, bool)> {
        self.0
            .assignments()
            .map(|a| (a.instance.to_string(), a.pm, a.pod, a.reserved))
            .collect()
    }

    /// Rule violations against `plans`, empty for a valid placement.
    fn audit(&self, plans: Vec<PyPlan>) -> Vec<String> {
        let plans: Vec<rrft::ReplicaPlan> = plans.into_iter().map(|p| p.0).collect();
        rrft::audit_rules(&self.0, &plans)
            .into_iter()
            .map(|v| match v.second {
                Some(b) => format!("{:?}: {} / {}", v.rule, v.first, b),
                None => format!("{:?}: {}", v.rule, v.first),
            })
            .collect()
    }
}

/// Places every plan in order; all-or-nothing per plan.
#[pyfunction]
#[pyo3(signature = (plans, datacenter, mode = "strict"))]
fn place(plans: Vec<PyPlan>, datacenter: &mut PyDatacenter, mode: &str) -> PyResult<PyPlacement> {
    let mode: PlacementMode = mode.parse().map_err(to_py)?;
    let mut map = rrft::PlacementMap::new(mode);
    for p in &plans {
        rrft::place_application(&mut map, &p.0, &mut datacenter.0).map_err(to_py)?;
    }
    Ok(PyPlacement(map))
}

#[pyfunction]
#[pyo3(signature = (failure_prob, nabla, mu = 0))]
fn replica_count(failure_prob: f64, nabla: f64, mu: u32) -> PyResult<u32> {
    rrft::replica_count(failure_prob, nabla, mu).map_err(to_py)
}

#[pyfunction]
#[pyo3(signature = (num_apps, seed = 0))]
fn generate_apps(num_apps: usize, seed: u64) -> PyResult<Vec<PyGraph>> {
    let cfg = rrft::WorkloadConfig {
        num_apps,
        seed,
        ..Default::default()
    };
    generate_workload(&cfg)
        .map(|v| v.into_iter().map(PyGraph).collect())
        .map_err(to_py)
}

fn config(text: &str) -> PyResult<ExperimentConfig> {
    ExperimentConfig::from_json(text).map_err(to_py)
}

/// `{figure: csv}` for every figure that ran.
#[pyfunction]
fn figure_suite(config_json: &str) -> PyResult<Vec<(String, String)>> {
    let suite = experiments::run_figure_suite(&config(config_json)?).map_err(to_py)?;
    if let Some((fig, e)) = suite.errors.first() {
        return Err(RrftError::new_err(format!("{fig}: {e}")));
    }
    Ok(suite.tables.iter().map(|t| (t.name.clone(), t.to_csv())).collect())
}

#[pyfunction]
fn compare_strategies(config_json: &str) -> PyResult<String> {
    experiments::compare_strategies(&config(config_json)?)
        .map(|t| t.to_csv())
        .map_err(to_py)
}

#[pyfunction]
fn simulate(config_json: &str) -> PyResult<String> {
    let reports = experiments::simulate(&config(config_json)?).map_err(to_py)?;
    Ok(experiments::simulation_summary(&reports).to_csv())
}

#[pymodule]
fn rrft_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("RrftError", m.py().get_type::<RrftError>())?;
    m.add("InfeasiblePlacement", m.py().get_type::<InfeasiblePlacement>())?;
    m.add("InvariantBreach", m.py().get_type::<InvariantBreach>())?;
    m.add_class::<PyGraph>()?;
    m.add_class::<PyPlan>()?;
    m.add_class::<PyDatacenter>()?;
    m.add_class::<PyPlacement>()?;
    m.add_function(wrap_pyfunction!(replica_count, m)?)?;
    m.add_function(wrap_pyfunction!(generate_apps, m)?)?;
    m.add_function(wrap_pyfunction!(place, m)?)?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(figure_suite, m)?)?;
    m.add_function(wrap_pyfunction!(compare_strategies, m)?)?;
    Ok(())
}
