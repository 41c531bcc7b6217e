//! Windowed distributed runs over a torn netlist.
//!
//! Every worker owns one subcircuit and advances it window by window; a
//! window is the smallest interfacial delay. Within a window each worker
//! needs nothing newer than the peer samples it already holds, so one
//! solve-and-exchange round per window reproduces the monolithic result.
//! The orchestrator routes each port's waveform to the wire's other side
//! and releases the next window only after every round has arrived.
//!
//! The waveform-relaxation baseline runs the same partition and windows
//! but re-solves each window until two consecutive iterates agree, which
//! costs at least one extra round per window.

use crate::message::{PortWaveformMessage, ProtocolError, StreamOrder};
use crate::transport::{
    in_process_pair, tcp_connect, Decision, InProcWorkerLink, OrchestratorLink, TcpAcceptor,
    TransportError, TransportKind, WorkerLink,
};
use mtm_core::netlist::Netlist;
use mtm_core::partition::{Partition, StepPlan};
use mtm_core::solver::{
    BoundaryPort, Circuit, CompileOptions, LineModelMode, NewtonOptions, Solver, SolverError,
    TransientResult,
};
use std::collections::BTreeMap;
use std::time::{Duration, Instant};

/// Waveform-relaxation settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WrOptions {
    pub max_iterations: u32,
    /// Convergence bound on max |Δu| + Z·|Δi| between consecutive window
    /// iterates; +∞ accepts the first iterate.
    pub tolerance: f64,
}

impl Default for WrOptions {
    fn default() -> Self {
        WrOptions {
            max_iterations: 50,
            tolerance: 1e-6,
        }
    }
}

/// Distributed-run configuration.
#[derive(Debug, Clone)]
pub struct MtmConfig {
    pub transport: TransportKind,
    pub plan: StepPlan,
    /// Stop time (s); extended upward to whole windows.
    pub stop: f64,
    pub newton: NewtonOptions,
    pub wr: WrOptions,
    /// Test hook: before each window solve, park this value in every
    /// remote stream beyond the validity horizon. Outputs must not change.
    pub tamper_future: Option<f64>,
}

impl MtmConfig {
    pub fn new(plan: StepPlan, stop: f64) -> Self {
        MtmConfig {
            transport: TransportKind::InProcess,
            plan,
            stop,
            newton: NewtonOptions::default(),
            wr: WrOptions::default(),
            tamper_future: None,
        }
    }

    /// Number of windows covering the stop time.
    pub fn windows(&self) -> u64 {
        let w = self.plan.window;
        ((self.stop / w) - 1e-9).ceil().max(1.0) as u64
    }

    /// Total solved time points.
    pub fn total_steps(&self) -> usize {
        self.windows() as usize * self.plan.samples_per_window
    }
}

/// Counters of one distributed run.
///
/// `k_distri` counts synchronized solve-and-exchange rounds; `messages`
/// counts port-waveform messages accepted by the exchange, two per
/// interfacial wire per round.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunStats {
    pub windows: u64,
    pub k_distri: u64,
    pub messages: u64,
    /// Local Newton updates summed over workers, per window (WR: over all
    /// iterations of the window).
    pub nr_iterations_per_window: Vec<u64>,
    /// Solve-and-exchange rounds per window: 1 for the direct method,
    /// the iteration count for waveform relaxation.
    pub rounds_per_window: Vec<u32>,
    pub solve_time: Duration,
    pub exchange_time: Duration,
}

/// Traces per subcircuit plus the run counters.
#[derive(Debug, Clone)]
pub struct MtmOutcome {
    pub results: Vec<TransientResult>,
    pub stats: RunStats,
}

impl MtmOutcome {
    /// Node trace looked up across all subcircuits.
    pub fn node(&self, name: &str) -> Option<&[f64]> {
        self.results.iter().find_map(|r| r.node(name))
    }
}

/// Distributed-run failure.
#[derive(Debug)]
pub enum MtmError {
    /// A worker's local solve failed.
    Worker {
        subcircuit: usize,
        window: u64,
        source: SolverError,
    },
    /// Waveform relaxation hit its iteration cap.
    WrNoConvergence {
        window: u64,
        iterations: u32,
        change: f64,
    },
    Transport(TransportError),
    Protocol(ProtocolError),
    /// Configuration or compilation problem.
    Model(String),
}

impl std::fmt::Display for MtmError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            MtmError::Worker {
                subcircuit,
                window,
                source,
            } => write!(f, "subcircuit {subcircuit} failed in window {window}: {source}"),
            MtmError::WrNoConvergence {
                window,
                iterations,
                change,
            } => write!(
                f,
                "waveform relaxation did not converge in window {window} \
                 ({iterations} iterations, last change {change:.3e})"
            ),
            MtmError::Transport(e) => write!(f, "{e}"),
            MtmError::Protocol(e) => write!(f, "{e}"),
            MtmError::Model(m) => write!(f, "{m}"),
        }
    }
}

impl std::error::Error for MtmError {}

impl From<TransportError> for MtmError {
    fn from(e: TransportError) -> Self {
        MtmError::Transport(e)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Scheme {
    Direct,
    Relaxation,
}

/// Run the lossless Mimic Transmission Method over a partition.
///
/// Every interfacial wire must be lossless; each window costs exactly one
/// distributed computation and two messages per wire.
pub fn run_mtm(partition: &Partition, config: &MtmConfig) -> Result<MtmOutcome, MtmError> {
    for w in &partition.wires {
        if !w.line.params.is_lossless() {
            return Err(MtmError::Model(format!(
                "interfacial wire `{}` is lossy; use the lossy engine",
                w.line.name
            )));
        }
    }
    run_windows(partition, config, LineModelMode::Auto, Scheme::Direct)
}

/// MTM with every line modeled by the discrete lossy port relation.
///
/// With R = G = 0 the kernels vanish and this reproduces [`run_mtm`]
/// sample for sample.
pub fn run_mtm_lossy(partition: &Partition, config: &MtmConfig) -> Result<MtmOutcome, MtmError> {
    run_windows(partition, config, LineModelMode::ForceLossy, Scheme::Direct)
}

/// Gauss–Jacobi waveform relaxation over the same partition and windows.
///
/// Within each window, full-window exchanges repeat until the largest
/// waveform change is below tolerance (always at least two rounds, since a
/// change needs two iterates) or the iteration cap is hit.
pub fn run_wr_baseline(partition: &Partition, config: &MtmConfig) -> Result<MtmOutcome, MtmError> {
    run_windows(partition, config, LineModelMode::Auto, Scheme::Relaxation)
}

/// Single-solver reference: the whole netlist in one MNA system, lines
/// modeled by the same delay-equation stamps.
pub fn run_monolithic(netlist: &Netlist, config: &MtmConfig) -> Result<TransientResult, MtmError> {
    let circuit = Circuit::compile(
        netlist,
        &[],
        CompileOptions {
            dt: config.plan.dt,
            line_mode: LineModelMode::Auto,
        },
    )
    .map_err(MtmError::Model)?;
    let mut solver = Solver::new(circuit);
    solver
        .run_steps(config.total_steps(), &config.newton)
        .map_err(|e| MtmError::Worker {
            subcircuit: 0,
            window: match &e {
                SolverError::NoConvergence { time, .. } => (time / config.plan.window) as u64,
                _ => 0,
            },
            source: e,
        })?;
    Ok(solver.result())
}

struct WorkerSetup {
    id: usize,
    solver: Solver,
    /// wire id -> (line index in this solver, owned port).
    wires: BTreeMap<u16, (usize, usize)>,
}

struct WorkerConfig {
    k: usize,
    windows: u64,
    newton: NewtonOptions,
    relaxation: bool,
    tamper: Option<f64>,
}

type WorkerResult = Result<Option<TransientResult>, (u64, SolverError)>;

fn worker_main(
    setup: WorkerSetup,
    cfg: &WorkerConfig,
    mut link: Box<dyn WorkerLink>,
) -> WorkerResult {
    let mut solver = setup.solver;
    let k = cfg.k;
    for window in 0..cfg.windows {
        let checkpoint = if cfg.relaxation {
            Some(solver.snapshot())
        } else {
            None
        };
        loop {
            if let Some(v) = cfg.tamper {
                solver.tamper_beyond_horizon(v, 2 * k);
            }
            let mut nr_total = 0u64;
            let mut failure = None;
            for _ in 0..k {
                match solver.step(&cfg.newton) {
                    Ok(iters) => nr_total += iters as u64,
                    Err(e) => {
                        failure = Some(e);
                        break;
                    }
                }
            }
            if let Some(e) = failure {
                let _ = link.send_error();
                return Err((window, e));
            }

            let first = window as usize * k + 1;
            let messages: Vec<PortWaveformMessage> = setup
                .wires
                .iter()
                .map(|(&wire, &(line, port))| PortWaveformMessage {
                    window: window as u32,
                    wire,
                    port: port as u8 + 1,
                    samples: solver.port_window(line, port, first, k),
                })
                .collect();
            // A dead link means the orchestrator already failed; just stop.
            if link.send_round(&messages, nr_total).is_err() {
                return Ok(None);
            }
            match link.recv_decision() {
                Ok(Decision::Accept(deliveries)) => {
                    for msg in deliveries {
                        let &(line, owned) = &setup.wires[&msg.wire];
                        // The peer owns the other port; its samples extend
                        // that port's remote stream.
                        let remote = (msg.port - 1) as usize;
                        debug_assert_ne!(remote, owned);
                        solver.deliver_peer_window(line, remote, first, &msg.samples);
                    }
                    break;
                }
                Ok(Decision::Iterate) => {
                    solver.restore(checkpoint.as_ref().expect("iterate without checkpoint"));
                }
                Ok(Decision::Abort) | Err(_) => return Ok(None),
            }
        }
    }
    Ok(Some(solver.result()))
}

fn join_first_failure(
    handles: Vec<std::thread::ScopedJoinHandle<'_, WorkerResult>>,
) -> Option<(usize, u64, SolverError)> {
    let mut first: Option<(usize, u64, SolverError)> = None;
    for (i, h) in handles.into_iter().enumerate() {
        match h.join() {
            Ok(Err((window, e))) => {
                if first.is_none() {
                    first = Some((i, window, e));
                }
            }
            Ok(_) => {}
            Err(p) => std::panic::resume_unwind(p),
        }
    }
    first
}

fn run_windows(
    partition: &Partition,
    config: &MtmConfig,
    line_mode: LineModelMode,
    scheme: Scheme,
) -> Result<MtmOutcome, MtmError> {
    let n_workers = partition.subcircuits.len();
    let k = config.plan.samples_per_window;
    let windows = config.windows();

    // Degenerate partition: no interfacial wires, one computation total.
    if partition.wires.is_empty() {
        let mut results = Vec::new();
        let start = Instant::now();
        let mut nr_total = 0u64;
        for (i, sub) in partition.subcircuits.iter().enumerate() {
            let circuit = Circuit::compile(
                sub,
                &[],
                CompileOptions {
                    dt: config.plan.dt,
                    line_mode,
                },
            )
            .map_err(MtmError::Model)?;
            let mut solver = Solver::new(circuit);
            solver
                .run_steps(config.total_steps(), &config.newton)
                .map_err(|e| MtmError::Worker {
                    subcircuit: i,
                    window: 0,
                    source: e,
                })?;
            let result = solver.result();
            nr_total += result.nr_iterations.iter().map(|&x| x as u64).sum::<u64>();
            results.push(result);
        }
        return Ok(MtmOutcome {
            results,
            stats: RunStats {
                windows: 1,
                k_distri: 1,
                messages: 0,
                nr_iterations_per_window: vec![nr_total],
                rounds_per_window: vec![1],
                solve_time: start.elapsed(),
                exchange_time: Duration::ZERO,
            },
        });
    }

    // Boundary bindings and the routing table.
    let mut boundaries: Vec<Vec<BoundaryPort>> = vec![Vec::new(); n_workers];
    for wire in &partition.wires {
        boundaries[wire.side_a.subcircuit].push(BoundaryPort {
            line: wire.line.clone(),
            port: 0,
            node: wire.side_a.node.clone(),
        });
        boundaries[wire.side_b.subcircuit].push(BoundaryPort {
            line: wire.line.clone(),
            port: 1,
            node: wire.side_b.node.clone(),
        });
    }

    let mut setups = Vec::with_capacity(n_workers);
    for (i, sub) in partition.subcircuits.iter().enumerate() {
        let circuit = Circuit::compile(
            sub,
            &boundaries[i],
            CompileOptions {
                dt: config.plan.dt,
                line_mode,
            },
        )
        .map_err(MtmError::Model)?;
        let mut wires = BTreeMap::new();
        for (w_idx, wire) in partition.wires.iter().enumerate() {
            if wire.side_a.subcircuit == i {
                let line = circuit.line_index(&wire.line.name).unwrap();
                wires.insert(w_idx as u16, (line, 0usize));
            }
            if wire.side_b.subcircuit == i {
                let line = circuit.line_index(&wire.line.name).unwrap();
                wires.insert(w_idx as u16, (line, 1usize));
            }
        }
        setups.push(WorkerSetup {
            id: i,
            solver: Solver::new(circuit),
            wires,
        });
    }

    // Destination worker per (wire, sending port).
    let dest: Vec<[usize; 2]> = partition
        .wires
        .iter()
        .map(|w| [w.side_b.subcircuit, w.side_a.subcircuit])
        .collect();
    let z_of_wire: Vec<f64> = partition
        .wires
        .iter()
        .map(|w| w.line.params.char_impedance())
        .collect();

    let worker_cfg = WorkerConfig {
        k,
        windows,
        newton: config.newton,
        relaxation: scheme == Scheme::Relaxation,
        tamper: config.tamper_future,
    };

    let mut stats = RunStats {
        nr_iterations_per_window: Vec::with_capacity(windows as usize),
        ..RunStats::default()
    };

    let outcome: Result<Vec<TransientResult>, MtmError> = std::thread::scope(|scope| {
        // Build links and spawn workers.
        let mut orch_links: Vec<Box<dyn OrchestratorLink>> = Vec::with_capacity(n_workers);
        let mut handles = Vec::with_capacity(n_workers);
        match config.transport {
            TransportKind::InProcess => {
                for setup in setups.drain(..) {
                    let (orch, worker): (_, InProcWorkerLink) = in_process_pair();
                    orch_links.push(Box::new(orch));
                    let cfg = &worker_cfg;
                    handles.push(
                        scope.spawn(move || worker_main(setup, cfg, Box::new(worker))),
                    );
                }
            }
            TransportKind::Tcp => {
                let (addr, acceptor) = TcpAcceptor::bind()?;
                for setup in setups.drain(..) {
                    let cfg = &worker_cfg;
                    let id = setup.id;
                    handles.push(scope.spawn(move || {
                        let link = match tcp_connect(addr, id) {
                            Ok(l) => l,
                            Err(_) => return Ok(None),
                        };
                        worker_main(setup, cfg, Box::new(link))
                    }));
                }
                for link in acceptor.accept_workers(n_workers)? {
                    orch_links.push(Box::new(link));
                }
            }
        }

        let mut order = StreamOrder::new(partition.wires.len(), k);
        let abort_all = |links: &mut [Box<dyn OrchestratorLink>]| {
            for l in links.iter_mut() {
                let _ = l.send_decision(&Decision::Abort);
            }
        };

        for window in 0..windows {
            let mut prev_round: Option<Vec<PortWaveformMessage>> = None;
            let mut iteration = 0u32;
            loop {
                iteration += 1;
                let t0 = Instant::now();
                let mut rounds = Vec::with_capacity(n_workers);
                let mut any_failed = false;
                for link in orch_links.iter_mut() {
                    let round = link.recv_round()?;
                    any_failed |= round.failed;
                    rounds.push(round);
                }
                stats.solve_time += t0.elapsed();
                if any_failed {
                    abort_all(&mut orch_links);
                    drop(orch_links);
                    let (subcircuit, window, source) =
                        join_first_failure(handles).expect("a worker reported failure");
                    return Err(MtmError::Worker {
                        subcircuit,
                        window,
                        source,
                    });
                }

                let t1 = Instant::now();
                stats.k_distri += 1;
                if stats.nr_iterations_per_window.len() <= window as usize {
                    stats.nr_iterations_per_window.push(0);
                }
                let mut all_messages: Vec<PortWaveformMessage> = Vec::new();
                for round in &rounds {
                    stats.nr_iterations_per_window[window as usize] += round.nr_iterations;
                    all_messages.extend(round.messages.iter().cloned());
                }
                // Deterministic stream order for validation and delivery.
                all_messages.sort_by_key(|m| (m.wire, m.port));
                stats.messages += all_messages.len() as u64;

                // Relaxation verdict before the messages are consumed.
                let accept = match scheme {
                    Scheme::Direct => true,
                    Scheme::Relaxation => {
                        if config.wr.tolerance.is_infinite() {
                            true
                        } else if let Some(prev) = &prev_round {
                            let change = waveform_change(prev, &all_messages, &z_of_wire);
                            if change <= config.wr.tolerance {
                                true
                            } else if iteration >= config.wr.max_iterations {
                                abort_all(&mut orch_links);
                                drop(orch_links);
                                let _ = join_first_failure(handles);
                                return Err(MtmError::WrNoConvergence {
                                    window,
                                    iterations: iteration,
                                    change,
                                });
                            } else {
                                false
                            }
                        } else if config.wr.max_iterations <= 1 {
                            abort_all(&mut orch_links);
                            drop(orch_links);
                            let _ = join_first_failure(handles);
                            return Err(MtmError::WrNoConvergence {
                                window,
                                iterations: iteration,
                                change: f64::INFINITY,
                            });
                        } else {
                            false
                        }
                    }
                };

                if accept {
                    let deliveries = match exchange(&mut order, all_messages, &dest, n_workers)
                    {
                        Ok(d) => d,
                        Err(e) => {
                            abort_all(&mut orch_links);
                            drop(orch_links);
                            let _ = join_first_failure(handles);
                            return Err(MtmError::Protocol(e));
                        }
                    };
                    for (link, msgs) in orch_links.iter_mut().zip(deliveries) {
                        link.send_decision(&Decision::Accept(msgs))?;
                    }
                    stats.exchange_time += t1.elapsed();
                    stats.rounds_per_window.push(iteration);
                    crate::log_debug!(
                        "window {window} accepted after {iteration} round(s)"
                    );
                    break;
                } else {
                    prev_round = Some(all_messages);
                    for link in orch_links.iter_mut() {
                        link.send_decision(&Decision::Iterate)?;
                    }
                    stats.exchange_time += t1.elapsed();
                }
            }
            stats.windows += 1;
        }

        // Collect results in worker order.
        let mut results = Vec::with_capacity(n_workers);
        for h in handles {
            match h.join() {
                Ok(Ok(Some(r))) => results.push(r),
                Ok(Ok(None)) => {
                    return Err(MtmError::Model(
                        "worker aborted without a failure record".to_string(),
                    ))
                }
                Ok(Err((window, e))) => {
                    return Err(MtmError::Worker {
                        subcircuit: results.len(),
                        window,
                        source: e,
                    })
                }
                Err(p) => std::panic::resume_unwind(p),
            }
        }
        Ok(results)
    });

    crate::log_info!(
        "{} windows, {} distributed computations, {} messages",
        stats.windows,
        stats.k_distri,
        stats.messages
    );
    Ok(MtmOutcome {
        results: outcome?,
        stats,
    })
}

/// Validate one round of port-waveform messages and route each to the
/// wire's other side.
///
/// Every message is delivered exactly once; streams must advance one
/// window at a time with the configured sample count. `dest[wire][port-1]`
/// names the receiving worker for a message sent by `port`.
pub fn exchange(
    order: &mut StreamOrder,
    messages: Vec<PortWaveformMessage>,
    dest: &[[usize; 2]],
    n_workers: usize,
) -> Result<Vec<Vec<PortWaveformMessage>>, ProtocolError> {
    for msg in &messages {
        order.check(msg)?;
    }
    let mut deliveries: Vec<Vec<PortWaveformMessage>> = vec![Vec::new(); n_workers];
    for msg in messages {
        let to = dest[msg.wire as usize][(msg.port - 1) as usize];
        deliveries[to].push(msg);
    }
    Ok(deliveries)
}

/// Largest |Δu| + Z·|Δi| between two message sets sorted by (wire, port).
fn waveform_change(
    prev: &[PortWaveformMessage],
    next: &[PortWaveformMessage],
    z_of_wire: &[f64],
) -> f64 {
    let mut worst: f64 = 0.0;
    for (p, n) in prev.iter().zip(next.iter()) {
        debug_assert_eq!((p.wire, p.port), (n.wire, n.port));
        let z = z_of_wire[p.wire as usize];
        for (&(u0, i0), &(u1, i1)) in p.samples.iter().zip(n.samples.iter()) {
            worst = worst.max((u1 - u0).abs() + z * (i1 - i0).abs());
        }
    }
    worst
}
