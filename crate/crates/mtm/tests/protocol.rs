//! End-to-end windowed runs: equivalence with the monolithic reference,
//! counters, transports, relaxation, and the causality guarantee.

use mtm::engine::{run_monolithic, run_mtm, run_mtm_lossy, run_wr_baseline, MtmConfig, MtmError};
use mtm::{predict_counts, CountMethod, TransportKind};
use mtm_core::netlist::parse_netlist;
use mtm_core::partition::{plan_step, tear_by_wires, Partition};
use mtm_core::solver::{run_transient, NewtonOptions, SolverError};

const PI: f64 = std::f64::consts::PI;

fn wire_l() -> f64 {
    4.0 * PI * 1e-7
}

fn wire_c() -> f64 {
    1e-7 / (9.0 * PI)
}

fn wire_tau() -> f64 {
    1e-3 * (wire_l() * wire_c()).sqrt()
}

/// Two nonlinear subcircuits joined by the 1 mm lossless wire: a pulsed
/// driver with a series diode on side A, a common-source MOSFET stage on
/// side B.
fn nonlinear_netlist(r_per_m: f64) -> String {
    let line_extra = if r_per_m > 0.0 {
        format!(" R={r_per_m:e}")
    } else {
        String::new()
    };
    format!(
        "* two-sided nonlinear test bench\n\
         V1 vin 0 PULSE(0 1 0 50p 50p 400p 1n)\n\
         Rdrv vin a1 20\n\
         D1 a1 n1 IS=1e-14 VT=0.025852\n\
         Rsh n1 0 100\n\
         C1 n1 0 20f\n\
         T1 n1 0 n2 0 L={l:e} C={c:e} LEN=1m{line_extra}\n\
         Rt n2 0 25\n\
         M1 out n2 0 KP=2m VTO=0.3\n\
         V2 vdd 0 DC 1\n\
         R2 vdd out 500\n\
         C2 out 0 50f\n\
         .partition wire T1\n\
         .print v(n1) v(n2) v(out)\n",
        l = wire_l(),
        c = wire_c(),
    )
}

fn partition_of(text: &str) -> (mtm_core::netlist::Netlist, Partition) {
    let netlist = parse_netlist(text).unwrap();
    let partition = tear_by_wires(&netlist, &netlist.directives.partition_wires).unwrap();
    (netlist, partition)
}

fn config_for(partition: &Partition, requested_dt: f64, stop: f64) -> MtmConfig {
    let plan = plan_step(requested_dt, partition.tau_min().unwrap()).unwrap();
    MtmConfig::new(plan, stop)
}

#[test]
fn mtm_matches_the_monolithic_reference() {
    let (netlist, partition) = partition_of(&nonlinear_netlist(0.0));
    let tau = wire_tau();
    let config = config_for(&partition, tau / 8.0, 20.0 * tau);
    let mtm = run_mtm(&partition, &config).unwrap();
    let mono = run_monolithic(&netlist, &config).unwrap();
    assert_eq!(mtm.stats.windows, 20);
    let mut worst: f64 = 0.0;
    let mut compared = 0;
    for result in &mtm.results {
        for (name, trace) in result.node_names.iter().zip(result.node_traces.iter()) {
            let reference = mono.node(name).unwrap();
            assert_eq!(trace.len(), reference.len());
            for (a, b) in trace.iter().zip(reference.iter()) {
                worst = worst.max((a - b).abs());
            }
            compared += 1;
        }
    }
    assert!(compared >= 5);
    assert!(worst <= 1e-6, "max node divergence {worst:.3e}");
}

#[test]
fn degenerate_partition_equals_a_plain_transient_run() {
    let text = "V1 in 0 PULSE(0 1 0 1n 1n 4n 10n)\nR1 in d 100\n\
                D1 d 0 IS=1e-14 VT=0.025\nC1 d 0 10p\n";
    let netlist = parse_netlist(text).unwrap();
    let partition = tear_by_wires(&netlist, &[]).unwrap();
    let plan = plan_step(1e-10, 1e-10).unwrap();
    let config = MtmConfig::new(plan, 2e-8);
    let outcome = run_mtm(&partition, &config).unwrap();
    assert_eq!(outcome.stats.k_distri, 1);
    assert_eq!(outcome.stats.messages, 0);
    let direct = run_transient(
        &netlist,
        config.plan.dt,
        config.total_steps(),
        &NewtonOptions::default(),
    )
    .unwrap();
    assert_eq!(outcome.results[0], direct);
}

/// Linear two-sided circuit for counter checks; K = 1 (dt = τ).
fn linear_pair() -> (mtm_core::netlist::Netlist, Partition) {
    let z = (wire_l() / wire_c()).sqrt();
    partition_of(&format!(
        "V1 vin 0 DC 1\nRs vin n1 {z:e}\n\
         T1 n1 0 n2 0 L={l:e} C={c:e} LEN=1m\n\
         RL n2 0 {z:e}\n\
         .partition wire T1\n",
        l = wire_l(),
        c = wire_c(),
    ))
}

#[test]
fn counters_match_the_closed_forms() {
    let (_, partition) = partition_of(&nonlinear_netlist(0.0));
    let tau = wire_tau();
    let config = config_for(&partition, tau, 10.0 * tau);
    assert_eq!(config.plan.samples_per_window, 1);
    let outcome = run_mtm(&partition, &config).unwrap();
    assert_eq!(outcome.stats.windows, 10);
    assert_eq!(outcome.stats.k_distri, 10);
    assert_eq!(outcome.stats.messages, 20);
    assert_eq!(outcome.stats.nr_iterations_per_window.len(), 10);
    let predicted = predict_counts(CountMethod::Mtm, 0.0, 10.0 * tau, config.plan.dt, 1, 1);
    assert_eq!(predicted, outcome.stats.k_distri);
}

#[test]
fn wr_with_infinite_tolerance_degenerates_to_mtm() {
    let (_, partition) = linear_pair();
    let tau = wire_tau();
    let mut config = config_for(&partition, tau / 2.0, 10.0 * tau);
    config.wr.tolerance = f64::INFINITY;
    let wr = run_wr_baseline(&partition, &config).unwrap();
    let mtm = run_mtm(&partition, &config).unwrap();
    assert_eq!(wr.stats.k_distri, mtm.stats.k_distri);
    assert_eq!(wr.stats.messages, mtm.stats.messages);
    assert_eq!(wr.results, mtm.results);
}

#[test]
fn wr_confirms_convergence_and_never_beats_mtm() {
    let (_, partition) = linear_pair();
    let tau = wire_tau();
    let config = config_for(&partition, tau / 2.0, 10.0 * tau);
    let wr = run_wr_baseline(&partition, &config).unwrap();
    let mtm = run_mtm(&partition, &config).unwrap();
    // Within a window no peer data newer than the previous window is
    // reachable, so iterate 2 reproduces iterate 1 exactly and the change
    // hits zero: two rounds per window.
    assert_eq!(wr.stats.windows, 10);
    assert_eq!(wr.stats.k_distri, 20);
    assert!(wr.stats.k_distri >= mtm.stats.k_distri);
    // Accepted waveforms are the same solves MTM performs.
    assert_eq!(wr.results, mtm.results);
    // Σ per-window iteration counts equals k_distri (k = 2 per window), and
    // the closed form with constant k agrees.
    let k_sum: u64 = 2 * wr.stats.windows;
    assert_eq!(wr.stats.k_distri, k_sum);
    assert_eq!(
        predict_counts(
            CountMethod::Wr,
            0.0,
            10.0 * tau,
            config.plan.dt,
            config.plan.samples_per_window as u32,
            2
        ),
        wr.stats.k_distri
    );
}

#[test]
fn wr_iteration_cap_of_one_cannot_confirm_convergence() {
    let (_, partition) = linear_pair();
    let tau = wire_tau();
    let mut config = config_for(&partition, tau, 5.0 * tau);
    config.wr.max_iterations = 1;
    match run_wr_baseline(&partition, &config) {
        Err(MtmError::WrNoConvergence {
            window, iterations, ..
        }) => {
            assert_eq!(window, 0);
            assert_eq!(iterations, 1);
        }
        other => panic!("expected WrNoConvergence, got {other:?}"),
    }
}

#[test]
fn tcp_and_in_process_transports_agree_bitwise() {
    let (_, partition) = partition_of(&nonlinear_netlist(0.0));
    let tau = wire_tau();
    let mut config = config_for(&partition, tau / 4.0, 12.0 * tau);
    let inproc = run_mtm(&partition, &config).unwrap();
    config.transport = TransportKind::Tcp;
    let tcp = run_mtm(&partition, &config).unwrap();
    assert_eq!(inproc.results, tcp.results);
    assert_eq!(inproc.stats.windows, tcp.stats.windows);
    assert_eq!(inproc.stats.k_distri, tcp.stats.k_distri);
    assert_eq!(inproc.stats.messages, tcp.stats.messages);
    assert_eq!(
        inproc.stats.nr_iterations_per_window,
        tcp.stats.nr_iterations_per_window
    );
}

#[test]
fn future_sample_tampering_never_reaches_a_window_solve() {
    let (_, partition) = partition_of(&nonlinear_netlist(0.0));
    let tau = wire_tau();
    let mut config = config_for(&partition, tau / 4.0, 12.0 * tau);
    let clean = run_mtm(&partition, &config).unwrap();
    config.tamper_future = Some(1e6);
    let tampered = run_mtm(&partition, &config).unwrap();
    assert_eq!(clean.results, tampered.results);
}

#[test]
fn lossy_engine_with_zero_loss_matches_the_lossless_engine() {
    let (_, partition) = partition_of(&nonlinear_netlist(0.0));
    let tau = wire_tau();
    let config = config_for(&partition, tau / 4.0, 12.0 * tau);
    let lossless = run_mtm(&partition, &config).unwrap();
    let lossy = run_mtm_lossy(&partition, &config).unwrap();
    for (a, b) in lossless.results.iter().zip(lossy.results.iter()) {
        for (ta, tb) in a.node_traces.iter().zip(b.node_traces.iter()) {
            for (x, y) in ta.iter().zip(tb.iter()) {
                assert!((x - y).abs() <= 1e-12);
            }
        }
    }
}

#[test]
fn lossless_engine_rejects_lossy_wires() {
    let (_, partition) = partition_of(&nonlinear_netlist(1000.0));
    let tau = wire_tau();
    let config = config_for(&partition, tau / 4.0, 4.0 * tau);
    match run_mtm(&partition, &config) {
        Err(MtmError::Model(m)) => assert!(m.contains("lossy"), "{m}"),
        other => panic!("expected Model error, got {other:?}"),
    }
}

#[test]
fn worker_failure_names_the_subcircuit_and_window() {
    let (_, partition) = partition_of(&nonlinear_netlist(0.0));
    let tau = wire_tau();
    let mut config = config_for(&partition, tau / 4.0, 8.0 * tau);
    config.newton.maxiter = 1;
    match run_mtm(&partition, &config) {
        Err(MtmError::Worker {
            subcircuit,
            window,
            source: SolverError::NoConvergence { .. },
        }) => {
            assert_eq!(window, 0);
            assert!(subcircuit < partition.subcircuits.len());
        }
        other => panic!("expected worker NoConvergence, got {other:?}"),
    }
}

#[test]
fn first_window_solve_sees_a_matched_termination() {
    // With zero incident waveforms the port relation u + Z·i = 0 is exactly
    // a Z resistor to ground, so window 0 of the distributed run must equal
    // a standalone solve of the subcircuit terminated that way.
    let (_, partition) = partition_of(&nonlinear_netlist(0.0));
    let tau = wire_tau();
    let config = config_for(&partition, tau / 8.0, tau);
    assert_eq!(config.windows(), 1);
    let outcome = run_mtm(&partition, &config).unwrap();

    let z = (wire_l() / wire_c()).sqrt();
    let driver_side = format!(
        "V1 vin 0 PULSE(0 1 0 50p 50p 400p 1n)\n\
         Rdrv vin a1 20\n\
         D1 a1 n1 IS=1e-14 VT=0.025852\n\
         Rsh n1 0 100\n\
         C1 n1 0 20f\n\
         Rline n1 0 {z:e}\n"
    );
    let standalone = run_transient(
        &parse_netlist(&driver_side).unwrap(),
        config.plan.dt,
        config.plan.samples_per_window,
        &NewtonOptions::default(),
    )
    .unwrap();
    let side = outcome
        .results
        .iter()
        .find(|r| r.node("n1").is_some())
        .unwrap();
    let a = side.node("n1").unwrap();
    let b = standalone.node("n1").unwrap();
    for (x, y) in a.iter().zip(b.iter()) {
        // The Z termination is stamped as A/B rather than a literal 1/R
        // conductance, so agreement is to rounding, not bitwise.
        assert!((x - y).abs() < 1e-12, "{x} vs {y}");
    }
}

#[test]
fn heterogeneous_delays_read_further_back() {
    // Chain of three subcircuits; the second wire is twice as long, so its
    // delay spans two windows and its lookups reach one extra window back.
    let z = (wire_l() / wire_c()).sqrt();
    let text = format!(
        "V1 vin 0 PULSE(0 1 0 100p 100p 500p 2n)\n\
         Rs vin n1 {z:e}\n\
         C1 n1 0 10f\n\
         T1 n1 0 n2 0 L={l:e} C={c:e} LEN=1m\n\
         Rm n2 n3 5\n\
         C2 n3 0 10f\n\
         T2 n3 0 n4 0 L={l:e} C={c:e} LEN=2m\n\
         RL n4 0 {z:e}\n\
         C3 n4 0 10f\n\
         .partition wire T1,T2\n",
        l = wire_l(),
        c = wire_c(),
    );
    let netlist = parse_netlist(&text).unwrap();
    let partition = tear_by_wires(&netlist, &netlist.directives.partition_wires).unwrap();
    assert_eq!(partition.subcircuits.len(), 3);
    assert_eq!(partition.wires.len(), 2);
    let tau_min = partition.tau_min().unwrap();
    assert!((tau_min - wire_tau()).abs() < 1e-22);

    let config = config_for(&partition, tau_min / 4.0, 24.0 * tau_min);
    let mtm = run_mtm(&partition, &config).unwrap();
    let mono = run_monolithic(&netlist, &config).unwrap();
    let mut worst: f64 = 0.0;
    for result in &mtm.results {
        for (name, trace) in result.node_names.iter().zip(result.node_traces.iter()) {
            let reference = mono.node(name).unwrap();
            for (a, b) in trace.iter().zip(reference.iter()) {
                worst = worst.max((a - b).abs());
            }
        }
    }
    assert!(worst <= 1e-6, "three-worker chain diverged by {worst:.3e}");
    assert_eq!(mtm.stats.messages, 2 * 2 * mtm.stats.windows);
}

#[test]
fn wr_over_a_lossy_wire_matches_the_lossy_direct_run() {
    let (_, partition) = partition_of(&nonlinear_netlist(500.0));
    let tau = wire_tau();
    let config = config_for(&partition, tau / 4.0, 10.0 * tau);
    let wr = run_wr_baseline(&partition, &config).unwrap();
    let direct = run_mtm_lossy(&partition, &config).unwrap();
    assert_eq!(wr.results, direct.results);
    assert_eq!(wr.stats.k_distri, 2 * direct.stats.k_distri);
}

#[test]
fn exchange_routes_each_message_to_the_other_side() {
    use mtm::message::StreamOrder;
    let mut order = StreamOrder::new(1, 2);
    // Wire 0: port 1 owned by worker 0, port 2 by worker 1.
    let dest = [[1usize, 0usize]];
    let msg = |port: u8| mtm::PortWaveformMessage {
        window: 0,
        wire: 0,
        port,
        samples: vec![(0.1, 0.2); 2],
    };
    let deliveries = mtm::exchange(&mut order, vec![msg(1), msg(2)], &dest, 2).unwrap();
    assert_eq!(deliveries[0], vec![msg(2)]);
    assert_eq!(deliveries[1], vec![msg(1)]);
    // A second delivery of window 0 violates the per-stream order.
    let err = mtm::exchange(&mut order, vec![msg(1)], &dest, 2).unwrap_err();
    assert!(err.0.contains("expected window 1"), "{err}");
}
