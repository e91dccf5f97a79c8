//! Fixtures shared by the benchmarks.

use xaihealth_core::sab::{generate_sab, Region, SabConfig};
use xaihealth_core::{Dataset, Model};

/// A SAB dataset with its transparent model.
pub fn sab_fixture(side: usize, num_cases: usize) -> (Dataset, Model) {
    let config = SabConfig {
        side,
        region: Region {
            top: side / 4,
            left: side / 4,
            height: side / 4,
            width: side / 4,
        },
        num_cases,
        noise_std: 0.2,
        pattern_amplitude: 1.0,
        seed: 1,
        name: "bench".into(),
    };
    let (dataset, spec) = generate_sab(&config).expect("valid bench config");
    (dataset, Model::from_spec(&spec).expect("valid model"))
}
