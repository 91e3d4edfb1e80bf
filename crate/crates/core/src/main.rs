use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde_json::json;

use rrft::experiments::{
    compare_strategies, run_figure_suite, simulate, simulation_summary, write_artifacts, ExperimentConfig, Format, Table,
};
use rrft::pipeline::{plan_application, rank_application};
use rrft::{audit_rules, place_application, ComponentGraph, Datacenter, DatacenterConfig, Error, PlacementMap, PlacementMode, PlannerParams, ReplicaPlan, Result};

#[derive(Parser)]
#[command(name = "rrft", version, about = "Rank-based replica planning, placement and fault simulation")]
struct Cli {
    /// Master seed; overrides the seed in a config file.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Format of the tabular outputs.
    #[arg(long, global = true, value_parser = parse_format)]
    format: Option<Format>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Rank the components of an application graph.
    Rank { graph: PathBuf },
    /// Size and order the replicas of every component.
    Plan {
        graph: PathBuf,
        #[arg(long, default_value_t = 0.007)]
        nabla: f64,
        #[arg(long, default_value_t = 0)]
        mu: u32,
        #[arg(long, default_value_t = 0.5)]
        parallel_fraction: f64,
    },
    /// Place a plan onto a datacenter.
    Place {
        plan: PathBuf,
        #[arg(long, default_value = "strict", value_parser = parse_mode)]
        mode: PlacementMode,
        /// Datacenter configuration (JSON); defaults to 4 pods of 10 machines.
        #[arg(long)]
        datacenter: Option<PathBuf>,
    },
    /// Run the fault simulation for every configured strategy.
    Simulate { config: PathBuf },
    /// Produce the figure datasets.
    Figures { config: PathBuf },
    /// Compare strategies against the rank-based planner.
    Compare { config: PathBuf },
}

fn parse_format(s: &str) -> std::result::Result<Format, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_mode(s: &str) -> std::result::Result<PlacementMode, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::Validation(format!("cannot read {}: {e}", path.display())))
}

fn load_config(path: &Path, seed: Option<u64>) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::from_json(&read(path)?)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn json_file(name: &str, value: &impl serde::Serialize) -> Result<(String, String)> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    Ok((name.to_owned(), text))
}

struct Run {
    command: &'static str,
    seed: Option<u64>,
    out: PathBuf,
    files: Vec<(String, String)>,
    errors: Vec<String>,
}

fn rank_table(app: &ComponentGraph) -> Result<Table> {
    let ranking = rank_application(app)?;
    let mut t = Table::new(
        "ranks",
        &[
            "component",
            "psi",
            "failure_impact",
            "acc_failure_impact",
            "failure_prob",
            "omega",
            "app_failure_prob",
            "rank",
            "no_failure_history",
        ],
    );
    for &i in &ranking.sorted {
        let r = &ranking.significance[i];
        t.push(vec![
            json!(r.component_id.as_str()),
            json!(r.psi),
            json!(r.failure_impact),
            json!(r.acc_failure_impact),
            json!(r.failure_prob),
            json!(r.most_significant_value),
            json!(r.app_failure_prob),
            json!(ranking.ranks.entries[i].rank),
            json!(r.no_failure_history),
        ]);
    }
    Ok(t)
}

fn plan_table(plan: &ReplicaPlan) -> Table {
    let mut t = Table::new(
        "plan",
        &["component", "rank", "failure_prob", "k_total", "backups", "order", "vms_required", "residual_failure"],
    );
    for c in &plan.components {
        t.push(vec![
            json!(c.component_id.as_str()),
            json!(c.rank),
            json!(c.failure_prob),
            json!(c.k_total),
            json!(c.backups),
            json!(c.order.as_str()),
            json!(c.vms_required()),
            json!(c.objective.residual_failure),
        ]);
    }
    t
}

fn placement_table(map: &PlacementMap) -> Table {
    let mut t = Table::new("placement", &["app", "component", "index", "pm", "pod", "reserved"]);
    for a in map.assignments() {
        t.push(vec![
            json!(a.instance.app),
            json!(a.instance.component.as_str()),
            json!(a.instance.index),
            json!(a.pm),
            json!(a.pod),
            json!(a.reserved),
        ]);
    }
    t
}

fn execute(cli: &Cli) -> Result<Run> {
    let fmt = cli.format;
    let render = |t: &Table, f: Option<Format>| t.render(f.unwrap_or_default());
    let default_out = || cli.out.clone().unwrap_or_else(|| PathBuf::from("rrft-out"));
    match &cli.command {
        Command::Rank { graph } => {
            let app: ComponentGraph = serde_json::from_str(&read(graph)?)?;
            Ok(Run {
                command: "rank",
                seed: None,
                out: default_out(),
                files: vec![render(&rank_table(&app)?, fmt)],
                errors: vec![],
            })
        }
        Command::Plan {
            graph,
            nabla,
            mu,
            parallel_fraction,
        } => {
            let app: ComponentGraph = serde_json::from_str(&read(graph)?)?;
            let params = PlannerParams {
                nabla: *nabla,
                mu: *mu,
                parallel_fraction: *parallel_fraction,
            };
            let plan = plan_application(&app, &rank_application(&app)?, &params)?;
            let mut files = vec![json_file("plan.json", &plan)?];
            if fmt.unwrap_or_default() == Format::Csv {
                files.push(render(&plan_table(&plan), fmt));
            }
            Ok(Run {
                command: "plan",
                seed: None,
                out: default_out(),
                files,
                errors: vec![],
            })
        }
        Command::Place { plan, mode, datacenter } => {
            let text = read(plan)?;
            let plans: Vec<ReplicaPlan> = match serde_json::from_str::<ReplicaPlan>(&text) {
                Ok(p) => vec![p],
                Err(_) => serde_json::from_str(&text)?,
            };
            let mut dc_cfg: DatacenterConfig = match datacenter {
                Some(p) => serde_json::from_str(&read(p)?)?,
                None => DatacenterConfig::default(),
            };
            if let Some(s) = cli.seed {
                dc_cfg.seed = s;
            }
            let mut dc = Datacenter::build(&dc_cfg)?;
            let mut map = PlacementMap::new(*mode);
            for p in &plans {
                place_application(&mut map, p, &mut dc)?;
            }
            if let Some(v) = audit_rules(&map, &plans).first() {
                return Err(Error::Invariant(format!("placement breaks {:?} at {}", v.rule, v.first)));
            }
            if let Some(msg) = dc.capacity_audit().first() {
                return Err(Error::Invariant(msg.clone()));
            }
            let mut files = vec![json_file("placement.json", &map)?];
            if fmt.unwrap_or_default() == Format::Csv {
                files.push(render(&placement_table(&map), fmt));
            }
            Ok(Run {
                command: "place",
                seed: Some(dc_cfg.seed),
                out: default_out(),
                files,
                errors: vec![],
            })
        }
        Command::Simulate { config } => {
            let cfg = load_config(config, cli.seed)?;
            let fmt = fmt.or(Some(cfg.output.format));
            let reports = simulate(&cfg)?;
            let mut files = vec![render(&simulation_summary(&reports), fmt)];
            for (s, r) in &reports {
                let name = format!("simulation_{}", s.to_string().replace(['(', ')'], ""));
                files.push(match fmt.unwrap_or_default() {
                    Format::Csv => (format!("{name}.csv"), r.to_csv()),
                    Format::Json => json_file(&format!("{name}.json"), r)?,
                });
            }
            Ok(Run {
                command: "simulate",
                seed: Some(cfg.seed),
                out: cli.out.clone().or(cfg.output.dir.clone()).unwrap_or_else(default_out),
                files,
                errors: vec![],
            })
        }
        Command::Figures { config } => {
            let cfg = load_config(config, cli.seed)?;
            let fmt = fmt.or(Some(cfg.output.format));
            let suite = run_figure_suite(&cfg)?;
            Ok(Run {
                command: "figures",
                seed: Some(cfg.seed),
                out: cli.out.clone().or(cfg.output.dir.clone()).unwrap_or_else(default_out),
                files: suite.tables.iter().map(|t| render(t, fmt)).collect(),
                errors: suite.errors.iter().map(|(f, e)| format!("{f}: {e}")).collect(),
            })
        }
        Command::Compare { config } => {
            let cfg = load_config(config, cli.seed)?;
            let fmt = fmt.or(Some(cfg.output.format));
            Ok(Run {
                command: "compare",
                seed: Some(cfg.seed),
                out: cli.out.clone().or(cfg.output.dir.clone()).unwrap_or_else(default_out),
                files: vec![render(&compare_strategies(&cfg)?, fmt)],
                errors: vec![],
            })
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = execute(&cli).and_then(|run| {
        for e in &run.errors {
            eprintln!("warning: {e}");
        }
        write_artifacts(&run.out, run.command, run.seed, &run.files, &run.errors)?;
        println!("wrote {} file(s) to {}", run.files.len() + 1, run.out.display());
        Ok(())
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
