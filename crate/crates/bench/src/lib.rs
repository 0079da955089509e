//! Benchmark fixtures shared by the criterion suites.

use bubble_reduction_core::{build_spikes, mu_of, ProblemParams, SpikeConfig};

/// Default parameters with `k` spikes on the balance point `(μr₀, 0.31)`.
pub fn fixture(k: usize) -> (ProblemParams, SpikeConfig) {
    let params = ProblemParams::default();
    let config = build_spikes(&params, k, mu_of(&params, k) * params.r0(), 0.31).expect("valid default spikes");
    (params, config)
}
