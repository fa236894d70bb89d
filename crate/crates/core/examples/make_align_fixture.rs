//! Trains the two small SAEs used by `tests/align_oracle.rs`.
//!
//! cargo run --release -p saeoverlap-core --example make_align_fixture -- tests/fixtures

use saeoverlap::io::{gen_synthetic, write_checkpoint, SyntheticSpec};
use saeoverlap::sae::{train, Arch, TrainConfig};

fn main() -> saeoverlap::Result<()> {
    let out = std::env::args().nth(1).unwrap_or_else(|| "tests/fixtures".into());
    let data = gen_synthetic(&SyntheticSpec {
        n_true: 48,
        d: 16,
        n_samples: 20_000,
        p_active: 0.06,
        seed: 5,
        ..SyntheticSpec::default()
    });
    for seed in [1, 2] {
        let cfg = TrainConfig {
            seed,
            arch: Arch::TopK { k: 4 },
            latents: 64,
            steps: 1500,
            batch_size: 128,
            learning_rate: 3e-3,
            ..TrainConfig::default()
        };
        let run = train(&data.dataset, &cfg)?;
        write_checkpoint(format!("{out}/align_seed{seed}.saec"), &run.params, &cfg)?;
    }
    Ok(())
}
