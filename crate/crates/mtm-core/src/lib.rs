//! Transient circuit simulation core: netlist parsing, companion-model
//! device stamps, a dense-MNA Newton–Raphson solver, transmission-line
//! delay-equation models (lossless and lossy), and wire-tearing
//! partitioning for windowed distributed runs.

pub mod devices;
pub mod linalg;
pub mod netlist;
pub mod partition;
pub mod solver;
pub mod tline;

pub use netlist::{parse_netlist, unparse_netlist, validate, Element, ElementKind, Netlist};
pub use partition::{plan_step, tear_by_wires, Partition, StepPlan};
pub use solver::{Circuit, NewtonOptions, TransientResult};
pub use tline::LineParams;
