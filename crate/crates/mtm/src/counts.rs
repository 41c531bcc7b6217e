//! Closed-form distributed-computation counts for the three schemes.

/// Scheme whose cost is being predicted.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CountMethod {
    /// One computation per window: (t2−t1)/(K·step).
    Mtm,
    /// k waveform iterations per window: (t2−t1)/(K·step)·k.
    Wr,
    /// k nonlinear iterations per step, two rounds each to solve the
    /// nonsymmetric system: (t2−t1)/step·2k.
    DistributedNewton,
}

/// Total number of distributed computations over [t1, t2].
///
/// `k_window` is the samples-per-window K; `k_iter` is the per-window (WR)
/// or per-step (distributed NR) iteration count k.
pub fn predict_counts(
    method: CountMethod,
    t1: f64,
    t2: f64,
    step: f64,
    k_window: u32,
    k_iter: u32,
) -> u64 {
    assert!(t2 > t1 && step > 0.0 && k_window >= 1 && k_iter >= 1);
    let steps = (t2 - t1) / step;
    let count = match method {
        CountMethod::Mtm => steps / k_window as f64,
        CountMethod::Wr => steps / k_window as f64 * k_iter as f64,
        CountMethod::DistributedNewton => steps * 2.0 * k_iter as f64,
    };
    count.round() as u64
}
