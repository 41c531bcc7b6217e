//! Acceptance suite: one test per criterion, each printing a PASS line.
//!
//! Oracles here are independent of the implementation paths they check:
//! fixed-term power series, bisection, closed forms, the 1000-segment
//! lumped ladder, and hand-evaluated reflection formulas.

use mtm::engine::{run_monolithic, run_mtm, run_mtm_lossy, run_wr_baseline, MtmConfig};
use mtm::{predict_counts, CountMethod};
use mtm_core::netlist::{parse_netlist, Element, ElementKind, Netlist, Waveform};
use mtm_core::partition::{plan_step, tear_by_wires, Partition, StepPlan};
use mtm_core::solver::{dc_operating_point, run_transient, NewtonOptions};
use mtm_core::tline::{bessel_i0, bessel_i1, lossy_kernels, lumped_rlgc_expand, LineParams};
use std::collections::BTreeMap;
use std::time::Instant;

const PI: f64 = std::f64::consts::PI;
const VDD: f64 = 1.0;

fn wire_l() -> f64 {
    4.0 * PI * 1e-7
}

fn wire_c() -> f64 {
    1e-7 / (9.0 * PI)
}

fn wire_z() -> f64 {
    (wire_l() / wire_c()).sqrt()
}

fn wire_tau() -> f64 {
    1e-3 * (wire_l() * wire_c()).sqrt()
}

/// The two-sided nonlinear circuit: pulsed driver with a series diode on
/// one side of the 1 mm wire, a common-source MOSFET stage on the other.
fn two_stage_netlist() -> String {
    format!(
        "V1 vin 0 PULSE(0 {VDD} 0 50p 50p 400p 1n)\n\
         Rdrv vin a1 20\n\
         D1 a1 n1 IS=1e-14 VT=0.025852\n\
         Rsh n1 0 100\n\
         C1 n1 0 20f\n\
         T1 n1 0 n2 0 L={l:e} C={c:e} LEN=1m\n\
         Rt n2 0 25\n\
         M1 out n2 0 KP=2m VTO=0.3\n\
         V2 vdd 0 DC {VDD}\n\
         R2 vdd out 500\n\
         C2 out 0 50f\n\
         .partition wire T1\n\
         .print v(n1) v(n2) v(out)\n",
        l = wire_l(),
        c = wire_c(),
    )
}

fn tear(text: &str) -> (Netlist, Partition) {
    let netlist = parse_netlist(text).unwrap();
    let partition = tear_by_wires(&netlist, &netlist.directives.partition_wires).unwrap();
    (netlist, partition)
}

fn plan(partition: &Partition, requested_dt: f64) -> StepPlan {
    plan_step(requested_dt, partition.tau_min().unwrap()).unwrap()
}

#[test]
fn criterion_01_mtm_monolithic_equivalence() {
    let started = Instant::now();
    let tau = wire_tau();
    let (netlist, partition) = tear(&two_stage_netlist());
    let config = MtmConfig::new(plan(&partition, tau / 8.0), 60.0 * tau);
    assert!(config.windows() >= 50);
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
    assert!(
        worst <= 1e-6 * VDD,
        "max node divergence {worst:.3e} over {} windows",
        config.windows()
    );
    let elapsed = started.elapsed();
    assert!(elapsed.as_secs_f64() < 10.0, "took {elapsed:?}");
    println!(
        "acceptance 1 (mtm vs monolithic, {} windows): PASS (max diff {worst:.3e}, {elapsed:?})",
        config.windows()
    );
}

#[test]
fn criterion_02_lossless_delay_shift_identity() {
    let started = Instant::now();
    let tau = wire_tau();
    let m = 4usize;
    let dt = tau / m as f64;
    // Termination matched against the solver's always-on gmin.
    let r_load = 1.0 / (1.0 / wire_z() - mtm_core::solver::GMIN);
    let text = format!(
        "V1 n1 0 DC {VDD}\nT1 n1 0 n2 0 L={:e} C={:e} LEN=1m\nRL n2 0 {r_load:e}\n",
        wire_l(),
        wire_c()
    );
    let netlist = parse_netlist(&text).unwrap();
    let steps = 16 * m;
    let result = run_transient(&netlist, dt, steps, &NewtonOptions::default()).unwrap();
    let near = result.node("n1").unwrap();
    let far = result.node("n2").unwrap();
    let mut worst: f64 = 0.0;
    for j in 0..=steps {
        let expect = if j >= m { near[j - m] } else { 0.0 };
        worst = worst.max((far[j] - expect).abs());
    }
    assert!(worst <= 1e-12, "max |far - delayed near| = {worst:.3e}");
    assert!(started.elapsed().as_secs_f64() < 1.0);
    println!("acceptance 2 (delay-shift identity): PASS (max err {worst:.3e})");
}

#[test]
fn criterion_03_reflection_coefficients() {
    let z = wire_z();
    let tau = wire_tau();
    let m = 8usize;
    let dt = tau / m as f64;
    let measure = |termination: &str| -> f64 {
        let text = format!(
            "V1 src 0 DC {VDD}\nRs src n1 {z:e}\nT1 n1 0 n2 0 L={:e} C={:e} LEN=1m\n{termination}",
            wire_l(),
            wire_c()
        );
        let netlist = parse_netlist(&text).unwrap();
        let r = run_transient(&netlist, dt, 4 * m, &NewtonOptions::default()).unwrap();
        // After the reflection returns (t > 2τ) and before anything else
        // happens (matched source), u1 = (1 + Γ)·V/2.
        2.0 * r.node("n1").unwrap()[3 * m] / VDD - 1.0
    };
    let mut cases: Vec<(String, f64)> = vec![
        (String::new(), 1.0),                                  // open
        ("V2 n2 0 DC 0\n".to_string(), -1.0),                 // short
    ];
    for r in [3.0 * z, z / 3.0, 2.0 * z] {
        cases.push((format!("RL n2 0 {r:e}\n"), (r - z) / (r + z)));
    }
    let mut worst: f64 = 0.0;
    for (termination, gamma) in &cases {
        let measured = measure(termination);
        let rel = (measured - gamma).abs() / gamma.abs().max(1.0);
        worst = worst.max(rel);
        assert!(
            rel <= 1e-9,
            "termination {termination:?}: Γ = {measured:.12} vs {gamma:.12}"
        );
    }
    println!(
        "acceptance 3 (reflection coefficients, {} cases): PASS (worst rel err {worst:.3e})",
        cases.len()
    );
}

#[test]
fn criterion_04_lossy_degenerates_to_lossless() {
    let tau = wire_tau();
    let (_, partition) = tear(&two_stage_netlist());
    let config = MtmConfig::new(plan(&partition, tau / 8.0), 50.0 * tau);
    let lossless = run_mtm(&partition, &config).unwrap();
    let lossy = run_mtm_lossy(&partition, &config).unwrap();
    let mut worst: f64 = 0.0;
    for (a, b) in lossless.results.iter().zip(lossy.results.iter()) {
        for (ta, tb) in a.node_traces.iter().zip(b.node_traces.iter()) {
            for (x, y) in ta.iter().zip(tb.iter()) {
                worst = worst.max((x - y).abs());
            }
        }
    }
    assert!(worst <= 1e-12, "max divergence {worst:.3e}");
    println!("acceptance 4 (lossy degeneracy R=G=0): PASS (max diff {worst:.3e})");
}

fn push_element(
    nl: &mut Netlist,
    kind: ElementKind,
    name: &str,
    terminals: &[&str],
    value: Option<f64>,
    waveform: Option<Waveform>,
) {
    let mut params = BTreeMap::new();
    if let Some(v) = value {
        params.insert("value".to_string(), v);
    }
    for t in terminals {
        nl.nodes.insert(t.to_string());
    }
    nl.elements.push(Element {
        kind,
        name: name.to_string(),
        terminals: terminals.iter().map(|s| s.to_string()).collect(),
        params,
        waveform,
    });
}

#[test]
fn criterion_05_lossy_model_vs_lumped_ladder() {
    let started = Instant::now();
    let z = wire_z();
    let tau = wire_tau();
    let r_per_m = 0.1 * z / 1e-3; // R·l = 0.1·Z, G = 0
    let k = 20usize;
    let dt = tau / k as f64;
    let stop = 8.0 * tau;

    // Discrete lossy port-relation model, two workers.
    let text = format!(
        "V1 src 0 DC {VDD}\nRs src n1 {z:e}\n\
         T1 n1 0 n2 0 L={l:e} C={c:e} LEN=1m R={r_per_m:e}\n\
         RL n2 0 {z:e}\n\
         .partition wire T1\n",
        l = wire_l(),
        c = wire_c(),
    );
    let (_, partition) = tear(&text);
    let config = MtmConfig::new(plan(&partition, dt), stop);
    let mtm = run_mtm_lossy(&partition, &config).unwrap();
    let far_model = mtm.node("n2").unwrap();

    // Oracle: 1000-segment lumped ladder in one monolithic solve.
    let params = LineParams::new(r_per_m, wire_l(), 0.0, wire_c(), 1e-3).unwrap();
    let mut lumped = Netlist::empty();
    push_element(
        &mut lumped,
        ElementKind::Vsource,
        "V1",
        &["src", "0"],
        None,
        Some(Waveform::Dc(VDD)),
    );
    push_element(&mut lumped, ElementKind::Resistor, "Rs", &["src", "n1"], Some(z), None);
    for el in lumped_rlgc_expand(&params, 1000, "n1", "n2", "t1") {
        for t in &el.terminals {
            lumped.nodes.insert(t.clone());
        }
        lumped.elements.push(el);
    }
    push_element(&mut lumped, ElementKind::Resistor, "RL", &["n2", "0"], Some(z), None);
    let steps = config.total_steps();
    let reference = run_transient(&lumped, config.plan.dt, steps, &NewtonOptions::default())
        .unwrap();
    let far_lumped = reference.node("n2").unwrap();

    let mut worst: f64 = 0.0;
    for j in 0..=steps {
        let t = j as f64 * config.plan.dt;
        if t > 3.0 * tau {
            worst = worst.max((far_model[j] - far_lumped[j]).abs());
        }
    }
    let elapsed = started.elapsed();
    assert!(
        worst <= 0.02 * VDD,
        "kernel model vs 1000-segment ladder: max diff {worst:.4e} after 3τ"
    );
    assert!(elapsed.as_secs_f64() < 60.0, "took {elapsed:?}");
    println!(
        "acceptance 5 (lossy vs lumped oracle): PASS (max diff {worst:.3e} after 3τ, {elapsed:?})"
    );
}

#[test]
fn criterion_06_distributed_computation_counters() {
    let z = wire_z();
    let tau = wire_tau();
    let text = format!(
        "V1 vin 0 DC {VDD}\nRs vin n1 {z:e}\n\
         T1 n1 0 n2 0 L={l:e} C={c:e} LEN=1m\n\
         RL n2 0 {z:e}\n\
         .partition wire T1\n",
        l = wire_l(),
        c = wire_c(),
    );
    let (_, partition) = tear(&text);
    // W = τ (K = 1), stop = 10τ.
    let config = MtmConfig::new(plan(&partition, tau), 10.0 * tau);
    assert_eq!(config.plan.samples_per_window, 1);
    let mtm = run_mtm(&partition, &config).unwrap();
    assert_eq!(mtm.stats.windows, 10);
    assert_eq!(mtm.stats.k_distri, 10);
    assert_eq!(mtm.stats.messages, 20);
    let predicted = predict_counts(CountMethod::Mtm, 0.0, 10.0 * tau, config.plan.dt, 1, 1);
    assert_eq!(predicted, mtm.stats.k_distri);

    let wr = run_wr_baseline(&partition, &config).unwrap();
    assert!(wr.stats.k_distri >= 10);
    let per_window_sum: u64 = wr.stats.rounds_per_window.iter().map(|&r| r as u64).sum();
    assert_eq!(wr.stats.k_distri, per_window_sum);
    println!(
        "acceptance 6 (counters): PASS (mtm k={}, wr k={})",
        mtm.stats.k_distri, wr.stats.k_distri
    );
}

#[test]
fn criterion_07_step_constraint_enforcement() {
    let tau = wire_tau();
    let err = plan_step(2.0 * tau, tau).unwrap_err();
    assert_eq!(err.max_step, tau);
    let plan = plan_step(0.4 * tau, tau).unwrap();
    assert_eq!(plan.samples_per_window, 3);
    assert!((plan.window - tau).abs() <= 1e-12 * tau);
    println!("acceptance 7 (step constraint): PASS (K = {})", plan.samples_per_window);
}

#[test]
fn criterion_08_bessel_and_kernel_limits() {
    // 60-term series oracle, evaluated independently.
    let i0_oracle = |x: f64| {
        let mut sum = 0.0;
        let mut term = 1.0;
        for k in 0..60 {
            if k > 0 {
                term *= (x * x / 4.0) / ((k * k) as f64);
            }
            sum += term;
        }
        sum
    };
    let i1_oracle = |x: f64| {
        let mut sum = 0.0;
        let mut term = 1.0;
        for k in 0..60 {
            if k > 0 {
                term *= (x * x / 4.0) / ((k * (k + 1)) as f64);
            }
            sum += term;
        }
        0.5 * x * sum
    };
    let mut worst: f64 = 0.0;
    for i in 0..1000 {
        let x = 15.0 * (i as f64 + 0.5) / 1000.0;
        let r0 = (bessel_i0(x) - i0_oracle(x)).abs() / i0_oracle(x);
        let r1 = (bessel_i1(x) - i1_oracle(x)).abs() / i1_oracle(x).max(1e-300);
        worst = worst.max(r0).max(r1);
        assert!(r0 <= 1e-10, "I0({x}): rel err {r0:.3e}");
        assert!(r1 <= 1e-10, "I1({x}): rel err {r1:.3e}");
    }

    // Kernel limits, exact: h(0) = -α, f(0+) = α²τ/2, g(0+) = α²τ/2 - α.
    let params = LineParams::new(1884.9555921538758, wire_l(), 0.0, wire_c(), 1e-3).unwrap();
    let alpha = params.alpha();
    let tau = params.prop_delay();
    let (h0, g0, f0) = lossy_kernels(&params, 0.0);
    assert_eq!(h0, -alpha);
    assert_eq!(f0, alpha * alpha * tau / 2.0);
    assert_eq!(g0, alpha * alpha * tau / 2.0 - alpha);
    println!("acceptance 8 (Bessel + kernel limits): PASS (worst rel err {worst:.3e})");
}

#[test]
fn criterion_09_solver_baselines() {
    // RC step response against the closed form.
    let text = "V1 in 0 DC 1\nR1 in out 1k\nC1 out 0 1n\n";
    let netlist = parse_netlist(text).unwrap();
    let max_err = |dt: f64| {
        let steps = (1e-5 / dt).round() as usize;
        let r = run_transient(&netlist, dt, steps, &NewtonOptions::default()).unwrap();
        let v = r.node("out").unwrap();
        let mut worst: f64 = 0.0;
        for (j, vj) in v.iter().enumerate() {
            let t = j as f64 * dt;
            worst = worst.max((vj - (1.0 - (-t / 1e-6).exp())).abs());
        }
        worst
    };
    let e1 = max_err(1e-8);
    let e2 = max_err(5e-9);
    assert!(e1 < 1e-3, "RC error {e1:.3e}");
    assert!(e2 <= e1 / 3.5, "convergence factor {:.2}", e1 / e2);

    // Diode/resistor operating point against a scalar bisection oracle.
    let diode = parse_netlist("V1 in 0 DC 1\nR1 in d 1k\nD1 d 0 IS=1e-14 VT=0.025\n").unwrap();
    let op = dc_operating_point(&diode, &NewtonOptions::default()).unwrap();
    let vd = op.iter().find(|(n, _)| n == "d").unwrap().1;
    let f = |v: f64| (1.0 - v) / 1000.0 - 1e-14 * ((v / 0.025).exp() - 1.0);
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        if f(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let oracle = 0.5 * (lo + hi);
    assert!(
        (vd - oracle).abs() <= 1e-9,
        "diode op {vd:.12} vs bisection {oracle:.12}"
    );
    println!(
        "acceptance 9 (solver baselines): PASS (RC err {e1:.3e}, factor {:.2}, diode gap {:.2e})",
        e1 / e2,
        (vd - oracle).abs()
    );
}

#[test]
fn criterion_10_transport_independent_csv() {
    let bin = env!("CARGO_BIN_EXE_mtm");
    let circuit = std::path::Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../..")
        .join("circuits/two_stage.cir");
    let run = |transport: &str| -> Vec<u8> {
        let out = std::env::temp_dir().join(format!(
            "mtm-acceptance-{}-{transport}",
            std::process::id()
        ));
        let _ = std::fs::remove_dir_all(&out);
        let status = std::process::Command::new(bin)
            .arg("mtm")
            .arg(&circuit)
            .arg("-o")
            .arg(&out)
            .args(["--transport", transport])
            .status()
            .unwrap();
        assert!(status.success());
        std::fs::read(out.join("trace.csv")).unwrap()
    };
    let inproc = run("inproc");
    let tcp = run("tcp");
    assert_eq!(inproc, tcp, "transport changed the CSV bytes");
    println!(
        "acceptance 10 (transport independence): PASS ({} identical bytes)",
        inproc.len()
    );
}

#[test]
fn criterion_11_causality_under_future_tampering() {
    let tau = wire_tau();
    let (_, partition) = tear(&two_stage_netlist());
    let mut config = MtmConfig::new(plan(&partition, tau / 8.0), 30.0 * tau);
    let clean = run_mtm(&partition, &config).unwrap();
    config.tamper_future = Some(1e9);
    let tampered = run_mtm(&partition, &config).unwrap();
    assert_eq!(
        clean.results, tampered.results,
        "future-sample tampering leaked into a window solve"
    );
    println!("acceptance 11 (causality/black-box): PASS");
}
