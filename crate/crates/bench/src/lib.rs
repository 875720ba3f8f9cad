//! Shared inputs for the benchmarks.

use harbor_core::surrogate::Observation;
use harbor_core::{FlagSpace, SimSpec, Simulator};

pub fn harness9() -> FlagSpace {
    FlagSpace::parse(include_str!("../../core/tests/fixtures/harness9.toml")).expect("fixture parses")
}

pub fn sim9() -> Simulator {
    let spec = SimSpec::parse(include_str!("../../core/tests/fixtures/sim9.toml")).expect("fixture parses");
    Simulator::new(spec, &harness9()).expect("fixture binds")
}

/// `n` observations at Sobol points, scored by the simulator's warm truth.
pub fn observations(sim: &Simulator, n: usize) -> Vec<Observation> {
    let design = sim.space().sobol_init(n, 7).expect("n > 0").configs;
    design
        .into_iter()
        .map(|c| {
            let t = sim.truth(&c, u64::MAX).mean;
            Observation { config: c, target: t, variance: t * (1.0 - t) / 22.0 + 1e-4 }
        })
        .collect()
}
