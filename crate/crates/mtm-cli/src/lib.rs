//! Command-line front end: run simulations, compare methods, emit CSV
//! traces and SVG plots, print run statistics.
//!
//! ```text
//! mtm run <netlist> -o DIR [--step S] [--stop S] [--plot]
//! mtm mtm <netlist> -o DIR [--transport inproc|tcp] [--step S] [--stop S] [--plot]
//! mtm wr  <netlist> -o DIR [--transport inproc|tcp] [--step S] [--stop S] [--plot]
//! mtm compare <netlist> -o DIR [--wr] [--threshold X] [--transport inproc|tcp]
//! mtm counts --method mtm|wr|dnr --t1 S --t2 S --step S [-K N] [-k N]
//! ```
//!
//! Exit codes: 0 success, 1 parse/validate/usage failure, 2 solver
//! non-convergence, 3 compare-threshold violation. `MTM_LOG=info|debug`
//! raises log verbosity.

pub mod output;

use mtm::engine::{run_monolithic, run_mtm, run_mtm_lossy, run_wr_baseline, MtmConfig, MtmError};
use mtm::{predict_counts, CountMethod, MtmOutcome, RunStats, TransportKind};
use mtm_core::netlist::{parse_netlist, validate, Netlist, PrintVar, Severity};
use mtm_core::partition::{plan_step, tear_by_wires, Partition};
use mtm_core::solver::{run_transient, NewtonOptions, SolverError, TransientResult};
use output::{fmt_f64, write_output, TraceTable};
use std::path::PathBuf;

const USAGE: &str = "usage: mtm <run|mtm|wr|compare|counts> [args]; see README";

/// Parsed command line.
#[derive(Debug, Clone, Default)]
pub struct CliConfig {
    pub subcommand: String,
    pub netlist: Option<PathBuf>,
    pub out_dir: PathBuf,
    pub transport: TransportKind,
    pub step: Option<f64>,
    pub stop: Option<f64>,
    pub plot: bool,
    pub with_wr: bool,
    pub threshold: Option<f64>,
    // counts arguments
    pub method: Option<String>,
    pub t1: f64,
    pub t2: f64,
    pub k_window: u32,
    pub k_iter: u32,
}

fn parse_args(args: &[String]) -> Result<CliConfig, String> {
    let mut cfg = CliConfig {
        out_dir: PathBuf::from("."),
        k_window: 1,
        k_iter: 1,
        ..CliConfig::default()
    };
    let mut it = args.iter();
    cfg.subcommand = it.next().cloned().ok_or(USAGE)?;
    let need = |it: &mut std::slice::Iter<String>, flag: &str| -> Result<String, String> {
        it.next()
            .cloned()
            .ok_or_else(|| format!("missing value for {flag}"))
    };
    while let Some(arg) = it.next() {
        match arg.as_str() {
            "-o" | "--out" => cfg.out_dir = PathBuf::from(need(&mut it, arg)?),
            "--transport" => {
                cfg.transport = match need(&mut it, arg)?.as_str() {
                    "inproc" => TransportKind::InProcess,
                    "tcp" => TransportKind::Tcp,
                    other => return Err(format!("unknown transport `{other}`")),
                }
            }
            "--step" => cfg.step = Some(parse_num(&need(&mut it, arg)?)?),
            "--stop" => cfg.stop = Some(parse_num(&need(&mut it, arg)?)?),
            "--plot" => cfg.plot = true,
            "--wr" => cfg.with_wr = true,
            "--threshold" => cfg.threshold = Some(parse_num(&need(&mut it, arg)?)?),
            "--seed" => {
                // Reserved for future stochastic features.
                let _ = need(&mut it, arg)?;
            }
            "--method" => cfg.method = Some(need(&mut it, arg)?),
            "--t1" => cfg.t1 = parse_num(&need(&mut it, arg)?)?,
            "--t2" => cfg.t2 = parse_num(&need(&mut it, arg)?)?,
            "-K" => cfg.k_window = need(&mut it, arg)?.parse().map_err(|_| "bad -K")?,
            "-k" => cfg.k_iter = need(&mut it, arg)?.parse().map_err(|_| "bad -k")?,
            other if !other.starts_with('-') && cfg.netlist.is_none() => {
                cfg.netlist = Some(PathBuf::from(other));
            }
            other => return Err(format!("unknown argument `{other}`")),
        }
    }
    Ok(cfg)
}

fn parse_num(s: &str) -> Result<f64, String> {
    mtm_core::netlist::parse_value(s)
}

/// Entry point; returns the process exit code.
pub fn cli_main(args: &[String]) -> i32 {
    let cfg = match parse_args(args) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            eprintln!("{USAGE}");
            return 1;
        }
    };
    let run = match cfg.subcommand.as_str() {
        "run" => cmd_run(&cfg),
        "mtm" => cmd_mtm(&cfg, false),
        "wr" => cmd_mtm(&cfg, true),
        "compare" => cmd_compare(&cfg),
        "counts" => cmd_counts(&cfg),
        other => {
            eprintln!("error: unknown subcommand `{other}`");
            eprintln!("{USAGE}");
            return 1;
        }
    };
    match run {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {}", e.message);
            e.code
        }
    }
}

#[derive(Debug)]
struct CmdError {
    code: i32,
    message: String,
}

fn fail(code: i32, message: impl Into<String>) -> CmdError {
    CmdError {
        code,
        message: message.into(),
    }
}

fn mtm_exit_code(e: &MtmError) -> i32 {
    match e {
        MtmError::Worker { .. } | MtmError::WrNoConvergence { .. } => 2,
        _ => 1,
    }
}

fn load_netlist(cfg: &CliConfig) -> Result<Netlist, CmdError> {
    let path = cfg
        .netlist
        .as_ref()
        .ok_or_else(|| fail(1, "missing netlist path"))?;
    let text = std::fs::read_to_string(path)
        .map_err(|e| fail(1, format!("cannot read {}: {e}", path.display())))?;
    let netlist = parse_netlist(&text).map_err(|e| fail(1, e.to_string()))?;
    let mut errors = false;
    for d in validate(&netlist) {
        eprintln!("{d}");
        errors |= d.severity == Severity::Error;
    }
    if errors {
        return Err(fail(1, "netlist validation failed"));
    }
    Ok(netlist)
}

fn tran_params(cfg: &CliConfig, netlist: &Netlist) -> Result<(f64, f64), CmdError> {
    let (step, stop) = match netlist.directives.tran {
        Some((s, e)) => (cfg.step.unwrap_or(s), cfg.stop.unwrap_or(e)),
        None => (
            cfg.step.ok_or_else(|| fail(1, "no .tran and no --step"))?,
            cfg.stop.ok_or_else(|| fail(1, "no .tran and no --stop"))?,
        ),
    };
    if step <= 0.0 || stop <= step {
        return Err(fail(1, "need 0 < step < stop"));
    }
    Ok((step, stop))
}

/// Node/branch trace lookup shared by monolithic and distributed results.
trait TraceSource {
    fn dt(&self) -> f64;
    fn rows(&self) -> usize;
    fn node_trace(&self, name: &str) -> Option<&[f64]>;
    fn branch_trace(&self, name: &str) -> Option<&[f64]>;
    fn all_node_names(&self) -> Vec<String>;
}

impl TraceSource for TransientResult {
    fn dt(&self) -> f64 {
        self.dt
    }
    fn rows(&self) -> usize {
        self.steps + 1
    }
    fn node_trace(&self, name: &str) -> Option<&[f64]> {
        self.node(name)
    }
    fn branch_trace(&self, name: &str) -> Option<&[f64]> {
        self.branch(name)
    }
    fn all_node_names(&self) -> Vec<String> {
        self.node_names.clone()
    }
}

impl TraceSource for MtmOutcome {
    fn dt(&self) -> f64 {
        self.results[0].dt
    }
    fn rows(&self) -> usize {
        self.results[0].steps + 1
    }
    fn node_trace(&self, name: &str) -> Option<&[f64]> {
        self.node(name)
    }
    fn branch_trace(&self, name: &str) -> Option<&[f64]> {
        self.results.iter().find_map(|r| r.branch(name))
    }
    fn all_node_names(&self) -> Vec<String> {
        let mut names: Vec<String> = self
            .results
            .iter()
            .flat_map(|r| r.node_names.iter().cloned())
            .collect();
        names.sort();
        names
    }
}

/// Columns in `.print` order, or every node voltage when none is given.
fn trace_table(netlist: &Netlist, source: &dyn TraceSource) -> Result<TraceTable, CmdError> {
    let mut columns = Vec::new();
    if netlist.directives.prints.is_empty() {
        let mut names = source.all_node_names();
        names.sort();
        for name in names {
            let data = source.node_trace(&name).unwrap().to_vec();
            columns.push((format!("v({name})"), data));
        }
    } else {
        for p in &netlist.directives.prints {
            match p {
                PrintVar::NodeVoltage(n) => {
                    let data = source
                        .node_trace(n)
                        .ok_or_else(|| fail(1, format!("no trace for node `{n}`")))?;
                    columns.push((format!("v({n})"), data.to_vec()));
                }
                PrintVar::PortCurrent(line, port) => {
                    let key = format!("i({line}.{port})");
                    let data = source
                        .branch_trace(&key)
                        .ok_or_else(|| fail(1, format!("no trace for `{key}`")))?;
                    columns.push((key, data.to_vec()));
                }
            }
        }
    }
    Ok(TraceTable {
        dt: source.dt(),
        rows: source.rows(),
        columns,
    })
}

fn write_trace(cfg: &CliConfig, table: &TraceTable) -> Result<(), CmdError> {
    write_output(&cfg.out_dir, "trace.csv", &table.to_csv())
        .map_err(|e| fail(1, format!("cannot write trace.csv: {e}")))?;
    if cfg.plot {
        write_output(&cfg.out_dir, "trace.svg", &table.to_svg())
            .map_err(|e| fail(1, format!("cannot write trace.svg: {e}")))?;
    }
    Ok(())
}

fn stats_csv(rows: &[(&str, &RunStats)]) -> String {
    let mut out = String::from("method,windows,k_distri,messages\n");
    for (name, s) in rows {
        out.push_str(&format!(
            "{name},{},{},{}\n",
            s.windows, s.k_distri, s.messages
        ));
    }
    out
}

/// `run`: monolithic transient over the whole netlist.
fn cmd_run(cfg: &CliConfig) -> Result<i32, CmdError> {
    let netlist = load_netlist(cfg)?;
    let (step, stop) = tran_params(cfg, &netlist)?;
    let steps = ((stop / step) - 1e-9).ceil().max(1.0) as usize;
    let result = run_transient(&netlist, step, steps, &NewtonOptions::default()).map_err(
        |e| match e {
            SolverError::Model(m) => fail(1, m),
            other => fail(2, other.to_string()),
        },
    )?;
    let table = trace_table(&netlist, &result)?;
    write_trace(cfg, &table)?;
    mtm::log_info!("run: {} points written", table.rows);
    Ok(0)
}

fn partition_and_config(
    cfg: &CliConfig,
    netlist: &Netlist,
) -> Result<(Partition, MtmConfig), CmdError> {
    if netlist.directives.partition_wires.is_empty() {
        return Err(fail(1, "netlist has no .partition directive"));
    }
    let partition = tear_by_wires(netlist, &netlist.directives.partition_wires)
        .map_err(|e| fail(1, e.to_string()))?;
    for d in &partition.diagnostics {
        eprintln!("{d}");
    }
    let (step, stop) = tran_params(cfg, netlist)?;
    let tau_min = partition
        .tau_min()
        .ok_or_else(|| fail(1, "partition has no interfacial wires"))?;
    let plan = plan_step(step, tau_min).map_err(|e| fail(1, e.to_string()))?;
    for d in mtm_core::partition::delay_snap_warnings(&partition.wires, plan.dt) {
        eprintln!("{d}");
    }
    let mut config = MtmConfig::new(plan, stop);
    config.transport = cfg.transport;
    Ok((partition, config))
}

fn any_lossy_wire(partition: &Partition) -> bool {
    partition.wires.iter().any(|w| !w.line.params.is_lossless())
}

/// `mtm` and `wr`: distributed runs over the torn netlist.
fn cmd_mtm(cfg: &CliConfig, relaxation: bool) -> Result<i32, CmdError> {
    let netlist = load_netlist(cfg)?;
    let (partition, config) = partition_and_config(cfg, &netlist)?;
    let outcome = if relaxation {
        run_wr_baseline(&partition, &config)
    } else if any_lossy_wire(&partition) {
        run_mtm_lossy(&partition, &config)
    } else {
        run_mtm(&partition, &config)
    }
    .map_err(|e| fail(mtm_exit_code(&e), e.to_string()))?;
    let table = trace_table(&netlist, &outcome)?;
    write_trace(cfg, &table)?;
    let label = if relaxation { "wr" } else { "mtm" };
    write_output(
        &cfg.out_dir,
        "stats.csv",
        &stats_csv(&[(label, &outcome.stats)]),
    )
    .map_err(|e| fail(1, format!("cannot write stats.csv: {e}")))?;
    mtm::log_info!(
        "{label}: {} windows, {} computations, {} messages",
        outcome.stats.windows,
        outcome.stats.k_distri,
        outcome.stats.messages
    );
    Ok(0)
}

/// `compare`: monolithic vs MTM (and optionally WR) with a diff table.
fn cmd_compare(cfg: &CliConfig) -> Result<i32, CmdError> {
    let netlist = load_netlist(cfg)?;
    let (partition, config) = partition_and_config(cfg, &netlist)?;
    let mono = run_monolithic(&netlist, &config)
        .map_err(|e| fail(mtm_exit_code(&e), e.to_string()))?;
    let mtm_out = if any_lossy_wire(&partition) {
        run_mtm_lossy(&partition, &config)
    } else {
        run_mtm(&partition, &config)
    }
    .map_err(|e| fail(mtm_exit_code(&e), e.to_string()))?;

    let mut vmax: f64 = 0.0;
    for t in &mono.node_traces {
        for &v in t {
            vmax = vmax.max(v.abs());
        }
    }
    let threshold = cfg.threshold.unwrap_or(1e-6 * vmax.max(f64::MIN_POSITIVE));

    let mut diff = String::from("node,max_abs_diff\n");
    let mut worst: f64 = 0.0;
    for result in &mtm_out.results {
        for (name, trace) in result.node_names.iter().zip(result.node_traces.iter()) {
            let reference = mono
                .node(name)
                .ok_or_else(|| fail(1, format!("node `{name}` missing from reference")))?;
            let mut d: f64 = 0.0;
            for (a, b) in trace.iter().zip(reference.iter()) {
                d = d.max((a - b).abs());
            }
            worst = worst.max(d);
            diff.push_str(&format!("{name},{}\n", fmt_f64(d)));
        }
    }
    write_output(&cfg.out_dir, "diff.csv", &diff)
        .map_err(|e| fail(1, format!("cannot write diff.csv: {e}")))?;

    let mono_stats = RunStats {
        windows: config.windows(),
        k_distri: config.windows(),
        messages: 0,
        ..RunStats::default()
    };
    let mut stats_rows: Vec<(&str, &RunStats)> =
        vec![("monolithic", &mono_stats), ("mtm", &mtm_out.stats)];
    let wr_out;
    if cfg.with_wr {
        wr_out = run_wr_baseline(&partition, &config)
            .map_err(|e| fail(mtm_exit_code(&e), e.to_string()))?;
        stats_rows.push(("wr", &wr_out.stats));
    }
    write_output(&cfg.out_dir, "stats.csv", &stats_csv(&stats_rows))
        .map_err(|e| fail(1, format!("cannot write stats.csv: {e}")))?;

    println!(
        "max |mtm - monolithic| = {} (threshold {})",
        fmt_f64(worst),
        fmt_f64(threshold)
    );
    if worst > threshold {
        return Err(fail(
            3,
            format!(
                "difference {} exceeds threshold {}",
                fmt_f64(worst),
                fmt_f64(threshold)
            ),
        ));
    }
    Ok(0)
}

/// `counts`: closed-form distributed-computation counts.
fn cmd_counts(cfg: &CliConfig) -> Result<i32, CmdError> {
    let method = match cfg.method.as_deref() {
        Some("mtm") => CountMethod::Mtm,
        Some("wr") => CountMethod::Wr,
        Some("dnr") => CountMethod::DistributedNewton,
        other => return Err(fail(1, format!("bad --method {other:?}"))),
    };
    let step = cfg.step.ok_or_else(|| fail(1, "counts needs --step"))?;
    let valid = cfg.t2 > cfg.t1 && step > 0.0;
    if !valid {
        return Err(fail(1, "need t2 > t1 and step > 0"));
    }
    let k = predict_counts(method, cfg.t1, cfg.t2, step, cfg.k_window, cfg.k_iter);
    println!("{k}");
    Ok(0)
}
