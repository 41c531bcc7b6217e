//! Wire tearing: split a netlist into subcircuits along named transmission
//! lines and plan the shared step/window grid.
//!
//! Tearing removes the named wires from the element graph; the remaining
//! connected components (through non-ground nodes) become subcircuits and
//! each torn wire binds one port to each side. No artificial sources are
//! inserted. The window is the smallest interfacial delay, every worker
//! shares it, and wires with larger delays simply read further back into
//! history.

use crate::netlist::{Diagnostic, Element, Netlist, Severity, Tline};
use std::collections::BTreeMap;

/// One side of an interfacial wire.
#[derive(Debug, Clone, PartialEq)]
pub struct PortBinding {
    pub subcircuit: usize,
    pub node: String,
}

/// A torn wire with its two port bindings (side A is port 1).
#[derive(Debug, Clone, PartialEq)]
pub struct InterfacialWire {
    pub line: Tline,
    pub side_a: PortBinding,
    pub side_b: PortBinding,
}

/// Result of tearing a netlist.
#[derive(Debug, Clone)]
pub struct Partition {
    pub subcircuits: Vec<Netlist>,
    pub wires: Vec<InterfacialWire>,
    /// Non-fatal findings (e.g. a named wire whose removal splits nothing).
    pub diagnostics: Vec<Diagnostic>,
}

impl Partition {
    /// Smallest propagation delay over the interfacial wires.
    pub fn tau_min(&self) -> Option<f64> {
        self.wires
            .iter()
            .map(|w| w.line.params.prop_delay())
            .fold(None, |acc: Option<f64>, tau| {
                Some(acc.map_or(tau, |a| a.min(tau)))
            })
    }
}

/// Tearing failure: a named wire does not exist.
#[derive(Debug, Clone, PartialEq)]
pub struct UnknownWire(pub String);

impl std::fmt::Display for UnknownWire {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "unknown partition wire `{}`", self.0)
    }
}

impl std::error::Error for UnknownWire {}

struct UnionFind {
    parent: Vec<usize>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        UnionFind {
            parent: (0..n).collect(),
        }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            self.parent[ra.max(rb)] = ra.min(rb);
        }
    }
}

/// Split `netlist` along the named transmission lines.
///
/// Wires whose two ports end up in the same component are reported and kept
/// internal to that subcircuit; they do not become interfacial.
pub fn tear_by_wires(netlist: &Netlist, wire_names: &[String]) -> Result<Partition, UnknownWire> {
    for w in wire_names {
        if netlist.tline(w).is_none() {
            return Err(UnknownWire(w.clone()));
        }
    }
    let torn = |t: &Tline| {
        wire_names
            .iter()
            .any(|w| w.eq_ignore_ascii_case(&t.name))
    };

    // Deterministic node numbering: first appearance across elements, then
    // line ports, then any remaining declared nodes.
    let mut node_ids: BTreeMap<&str, usize> = BTreeMap::new();
    let mut node_order: Vec<&str> = Vec::new();
    fn intern<'a>(
        name: &'a str,
        ids: &mut BTreeMap<&'a str, usize>,
        order: &mut Vec<&'a str>,
    ) -> usize {
        *ids.entry(name).or_insert_with(|| {
            order.push(name);
            order.len() - 1
        })
    }
    for el in &netlist.elements {
        for t in &el.terminals {
            if t != "0" {
                intern(t, &mut node_ids, &mut node_order);
            }
        }
    }
    for t in &netlist.tlines {
        for p in &t.ports {
            intern(p, &mut node_ids, &mut node_order);
        }
    }
    for n in &netlist.nodes {
        if n != "0" {
            intern(n, &mut node_ids, &mut node_order);
        }
    }

    let mut uf = UnionFind::new(node_order.len());
    for el in &netlist.elements {
        let ids: Vec<usize> = el
            .terminals
            .iter()
            .filter(|t| *t != "0")
            .map(|t| node_ids[t.as_str()])
            .collect();
        for w in ids.windows(2) {
            uf.union(w[0], w[1]);
        }
    }
    for t in &netlist.tlines {
        if !torn(t) {
            uf.union(node_ids[t.ports[0].as_str()], node_ids[t.ports[1].as_str()]);
        }
    }

    // Component ids in node order.
    let mut comp_of_root: BTreeMap<usize, usize> = BTreeMap::new();
    let mut comp_count = 0usize;
    let mut node_comp: Vec<usize> = vec![0; node_order.len()];
    for (i, slot) in node_comp.iter_mut().enumerate() {
        let root = uf.find(i);
        let comp = *comp_of_root.entry(root).or_insert_with(|| {
            comp_count += 1;
            comp_count - 1
        });
        *slot = comp;
    }
    if comp_count == 0 {
        comp_count = 1;
    }

    let mut diagnostics = Vec::new();
    let mut subs: Vec<Netlist> = (0..comp_count)
        .map(|_| {
            let mut n = Netlist::empty();
            n.directives.tran = netlist.directives.tran;
            n
        })
        .collect();
    for (name, &id) in &node_ids {
        subs[node_comp[id]].nodes.insert((*name).to_string());
    }

    let comp_of_element = |el: &Element| -> usize {
        el.terminals
            .iter()
            .find(|t| *t != "0")
            .map(|t| node_comp[node_ids[t.as_str()]])
            .unwrap_or(0)
    };
    for el in &netlist.elements {
        subs[comp_of_element(el)].elements.push(el.clone());
    }

    let mut wires = Vec::new();
    for t in &netlist.tlines {
        let ca = node_comp[node_ids[t.ports[0].as_str()]];
        let cb = node_comp[node_ids[t.ports[1].as_str()]];
        if torn(t) {
            if ca == cb {
                diagnostics.push(Diagnostic {
                    severity: Severity::Warning,
                    message: format!(
                        "tearing wire `{}` splits nothing; it stays internal",
                        t.name
                    ),
                });
                subs[ca].tlines.push(t.clone());
            } else {
                wires.push(InterfacialWire {
                    line: t.clone(),
                    side_a: PortBinding {
                        subcircuit: ca,
                        node: t.ports[0].clone(),
                    },
                    side_b: PortBinding {
                        subcircuit: cb,
                        node: t.ports[1].clone(),
                    },
                });
            }
        } else {
            debug_assert_eq!(ca, cb);
            subs[ca].tlines.push(t.clone());
        }
    }

    Ok(Partition {
        subcircuits: subs,
        wires,
        diagnostics,
    })
}

/// Shared step/window plan for a partitioned run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepPlan {
    /// Step (s); `window = samples_per_window · dt` exactly.
    pub dt: f64,
    /// Window length (s), equal to the smallest interfacial delay.
    pub window: f64,
    pub samples_per_window: usize,
}

/// Step/window constraint violation: the requested step exceeds the
/// smallest interfacial delay.
#[derive(Debug, Clone, PartialEq)]
pub struct StepTooLarge {
    /// Largest admissible step, l·√(LC) of the shortest wire (s).
    pub max_step: f64,
}

impl std::fmt::Display for StepTooLarge {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "step exceeds the smallest interfacial delay; maximum admissible step is {:.6e} s",
            self.max_step
        )
    }
}

impl std::error::Error for StepTooLarge {}

/// Choose the step and window for a given smallest delay.
///
/// The step is adjusted downward to τ_min/K with K = ⌈τ_min/requested⌉, so
/// the window is exactly τ_min and the delay is an integer number of steps.
pub fn plan_step(requested_dt: f64, tau_min: f64) -> Result<StepPlan, StepTooLarge> {
    assert!(requested_dt > 0.0 && tau_min > 0.0);
    if requested_dt > tau_min * (1.0 + 1e-9) {
        return Err(StepTooLarge { max_step: tau_min });
    }
    let ratio = tau_min / requested_dt;
    let k = if (ratio - ratio.round()).abs() < 1e-9 * ratio.max(1.0) {
        ratio.round()
    } else {
        ratio.ceil()
    } as usize;
    let k = k.max(1);
    let dt = tau_min / k as f64;
    Ok(StepPlan {
        dt,
        window: dt * k as f64,
        samples_per_window: k,
    })
}

/// Warnings for wires whose delay is perturbed by grid snapping.
pub fn delay_snap_warnings(wires: &[InterfacialWire], dt: f64) -> Vec<Diagnostic> {
    let mut out = Vec::new();
    for w in wires {
        let tau = w.line.params.prop_delay();
        let ratio = tau / dt;
        let m = ratio.round().max(1.0);
        let rel = (ratio - m).abs() / ratio;
        if rel > 1e-9 {
            out.push(Diagnostic {
                severity: Severity::Warning,
                message: format!(
                    "wire `{}`: delay snapped to {m} samples (relative perturbation {rel:.2e})",
                    w.line.name
                ),
            });
        }
    }
    out
}

/// Smallest interfacial wire length usable at working frequency `f` with
/// `n` steps per period: l_min = 1/(N·f·√(LC)).
pub fn min_wire_length(f: f64, n: u32, l_per_m: f64, c_per_m: f64) -> f64 {
    assert!(f > 0.0 && n > 0 && l_per_m > 0.0 && c_per_m > 0.0);
    1.0 / (n as f64 * f * (l_per_m * c_per_m).sqrt())
}

/// Wires ranked by propagation delay, longest first — the reported
/// heuristic for choosing interfacial wires.
pub fn rank_wires(netlist: &Netlist) -> Vec<(String, f64)> {
    let mut out: Vec<(String, f64)> = netlist
        .tlines
        .iter()
        .map(|t| (t.name.clone(), t.params.prop_delay()))
        .collect();
    out.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
    out
}
