//! Companion-model stamps and nonlinear device evaluation.
//!
//! Reactive elements are replaced per step by a conductance plus history
//! source under the selected integration rule; nonlinear devices are
//! linearized about the current Newton iterate. Stamps are expressed in
//! element-local coordinates (terminal positions and branch slots) so the
//! assembler owns the node mapping and drops ground rows and columns.

use crate::netlist::{Element, ElementKind};

/// Discrete integration rule for reactive companion models.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IntegrationRule {
    BackwardEuler,
    Trapezoidal,
}

/// Per-element memory carried between time points.
///
/// Everything starts at zero: all voltages and currents are zero for t < 0
/// and the sources switch on at t = 0⁺.
#[derive(Debug, Clone, Copy, Default)]
pub struct DeviceState {
    /// Branch voltage at the previous accepted time point.
    pub v_prev: f64,
    /// Branch current at the previous accepted time point.
    pub i_prev: f64,
    /// Time of the point being stamped (used by source waveforms).
    pub time: f64,
}

/// Row/column in element-local coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Slot {
    /// Index into the element's terminal list.
    Terminal(usize),
    /// Extra branch-current unknown owned by this element.
    Branch(usize),
}

/// Linear contribution of one element to the MNA system.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Stamp {
    /// (row, col, siemens-or-unit) matrix entries.
    pub conductance: Vec<(Slot, Slot, f64)>,
    /// (row, amperes-or-volts) right-hand-side entries (current into the node
    /// for terminal rows, source value for branch rows).
    pub rhs: Vec<(Slot, f64)>,
    /// Number of branch-current unknowns this element owns.
    pub branches: usize,
}

impl Stamp {
    fn conductance_pair(&mut self, a: Slot, b: Slot, g: f64) {
        self.conductance.push((a, a, g));
        self.conductance.push((b, b, g));
        self.conductance.push((a, b, -g));
        self.conductance.push((b, a, -g));
    }
}

/// Build the linear stamp of `element` for one step of size `dt`.
///
/// Capacitor under backward Euler: G = C/dt with history current G·v_prev;
/// trapezoidal: G = 2C/dt with history G·v_prev + i_prev. Inductors and
/// voltage sources stamp through an extra branch-current unknown; the
/// inductor branch row also carries any series resistance.
pub fn stamp_linear(
    element: &Element,
    dt: f64,
    state: &DeviceState,
    rule: IntegrationRule,
) -> Stamp {
    debug_assert!(dt > 0.0);
    let t0 = Slot::Terminal(0);
    let t1 = Slot::Terminal(1);
    let b0 = Slot::Branch(0);
    let mut stamp = Stamp::default();
    match element.kind {
        ElementKind::Resistor => {
            stamp.conductance_pair(t0, t1, 1.0 / element.value());
        }
        ElementKind::Capacitor => {
            let c = element.value();
            let (geq, hist) = match rule {
                IntegrationRule::BackwardEuler => {
                    let g = c / dt;
                    (g, g * state.v_prev)
                }
                IntegrationRule::Trapezoidal => {
                    let g = 2.0 * c / dt;
                    (g, g * state.v_prev + state.i_prev)
                }
            };
            stamp.conductance_pair(t0, t1, geq);
            stamp.rhs.push((t0, hist));
            stamp.rhs.push((t1, -hist));
        }
        ElementKind::Inductor => {
            let l = element.value();
            let rs = element.param_or("r", 0.0);
            stamp.branches = 1;
            stamp.conductance.push((t0, b0, 1.0));
            stamp.conductance.push((t1, b0, -1.0));
            stamp.conductance.push((b0, t0, -1.0));
            stamp.conductance.push((b0, t1, 1.0));
            match rule {
                IntegrationRule::BackwardEuler => {
                    stamp.conductance.push((b0, b0, l / dt + rs));
                    stamp.rhs.push((b0, l / dt * state.i_prev));
                }
                IntegrationRule::Trapezoidal => {
                    let x = 2.0 * l / dt;
                    stamp.conductance.push((b0, b0, x + rs));
                    stamp
                        .rhs
                        .push((b0, state.v_prev + (x - rs) * state.i_prev));
                }
            }
        }
        ElementKind::Vsource => {
            stamp.branches = 1;
            stamp.conductance.push((t0, b0, 1.0));
            stamp.conductance.push((t1, b0, -1.0));
            stamp.conductance.push((b0, t0, 1.0));
            stamp.conductance.push((b0, t1, -1.0));
            let e = element
                .waveform
                .as_ref()
                .map(|w| w.value_at(state.time))
                .unwrap_or(0.0);
            stamp.rhs.push((b0, e));
        }
        ElementKind::Isource => {
            let j = element
                .waveform
                .as_ref()
                .map(|w| w.value_at(state.time))
                .unwrap_or(0.0);
            stamp.rhs.push((t0, -j));
            stamp.rhs.push((t1, j));
        }
        ElementKind::Vccs => {
            let gm = element.value();
            let (c0, c1) = (Slot::Terminal(2), Slot::Terminal(3));
            stamp.conductance.push((t0, c0, gm));
            stamp.conductance.push((t0, c1, -gm));
            stamp.conductance.push((t1, c0, -gm));
            stamp.conductance.push((t1, c1, gm));
        }
        ElementKind::Diode | ElementKind::Mosfet => {
            unreachable!("nonlinear elements are linearized by eval_nonlinear")
        }
    }
    stamp
}

/// Branch current of a reactive element after the step solved to `v_new`.
pub fn reactive_current_after(
    element: &Element,
    dt: f64,
    state: &DeviceState,
    rule: IntegrationRule,
    v_new: f64,
) -> f64 {
    match element.kind {
        ElementKind::Capacitor => {
            let c = element.value();
            match rule {
                IntegrationRule::BackwardEuler => c / dt * (v_new - state.v_prev),
                IntegrationRule::Trapezoidal => {
                    2.0 * c / dt * (v_new - state.v_prev) - state.i_prev
                }
            }
        }
        _ => unreachable!("only capacitors update current from voltage"),
    }
}

/// Linearization of a nonlinear device about the given terminal voltages.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NonlinearEval {
    Diode {
        /// Junction current at the iterate (A).
        current: f64,
        /// dI/dV at the iterate (S).
        conductance: f64,
        /// Companion source I − g·v (A).
        eq_current: f64,
    },
    Mosfet {
        /// Drain-to-source current at the iterate (A).
        drain_current: f64,
        /// dId/dVgs (S).
        gm: f64,
        /// dId/dVds (S).
        gds: f64,
        /// Companion source Id − gm·Vgs − gds·Vds (A).
        eq_current: f64,
    },
}

/// Junction voltage beyond which the diode I–V continues linearly
/// (C1-continuous), expressed in multiples of the thermal voltage.
pub const DIODE_EXP_LIMIT: f64 = 40.0;

fn diode_iv(is: f64, vt: f64, v: f64) -> (f64, f64) {
    let vmax = DIODE_EXP_LIMIT * vt;
    if v <= vmax {
        let e = (v / vt).exp();
        (is * (e - 1.0), is / vt * e)
    } else {
        let e = DIODE_EXP_LIMIT.exp();
        let g = is / vt * e;
        (is * (e - 1.0) + g * (v - vmax), g)
    }
}

/// Quadratic level-1 MOSFET current and partial derivatives for
/// normalized (NMOS, vds >= 0) operation.
fn mosfet_forward(beta: f64, vto: f64, lambda: f64, vgs: f64, vds: f64) -> (f64, f64, f64) {
    let vov = vgs - vto;
    if vov <= 0.0 {
        return (0.0, 0.0, 0.0);
    }
    let chan = 1.0 + lambda * vds;
    if vds >= vov {
        let id0 = 0.5 * beta * vov * vov;
        (id0 * chan, beta * vov * chan, id0 * lambda)
    } else {
        let id0 = beta * (vov * vds - 0.5 * vds * vds);
        (
            id0 * chan,
            beta * vds * chan,
            beta * (vov - vds) * chan + id0 * lambda,
        )
    }
}

/// Evaluate and linearize a nonlinear device.
///
/// `v` holds the junction voltages: `[v_anode − v_cathode]` for a diode,
/// `[vgs, vds]` for a MOSFET (drain, gate, source terminal order).
pub fn eval_nonlinear(element: &Element, v: &[f64]) -> NonlinearEval {
    match element.kind {
        ElementKind::Diode => {
            let is = element.param_or("is", 1e-14);
            let vt = element.param_or("vt", 0.025852);
            let vj = v[0];
            let (i, g) = diode_iv(is, vt, vj);
            NonlinearEval::Diode {
                current: i,
                conductance: g,
                eq_current: i - g * vj,
            }
        }
        ElementKind::Mosfet => {
            let beta = element.param_or("kp", 2e-5) * element.param_or("w", 1.0)
                / element.param_or("l", 1.0);
            let vto = element.param_or("vto", 1.0);
            let lambda = element.param_or("lambda", 0.0);
            let pmos = element.param_or("pmos", 0.0) != 0.0;
            let (mut vgs, mut vds) = (v[0], v[1]);
            if pmos {
                vgs = -vgs;
                vds = -vds;
            }
            // The device is symmetric: operate in reverse by swapping
            // drain and source.
            let (id_n, gm_n, gds_n) = if vds >= 0.0 {
                mosfet_forward(beta, vto, lambda, vgs, vds)
            } else {
                let (f, fa, fb) = mosfet_forward(beta, vto, lambda, vgs - vds, -vds);
                (-f, -fa, fa + fb)
            };
            let (id, gm, gds) = if pmos { (-id_n, gm_n, gds_n) } else { (id_n, gm_n, gds_n) };
            NonlinearEval::Mosfet {
                drain_current: id,
                gm,
                gds,
                eq_current: id - gm * v[0] - gds * v[1],
            }
        }
        _ => unreachable!("eval_nonlinear takes diode or mosfet elements"),
    }
}

/// Terminal-index pairs whose voltage steps are damped during Newton
/// iterations (junctions of exponential or quadratic devices).
pub fn junction_pairs(element: &Element) -> &'static [(usize, usize)] {
    match element.kind {
        ElementKind::Diode => &[(0, 1)],
        ElementKind::Mosfet => &[(1, 2), (0, 2)],
        _ => &[],
    }
}
