//! Fixtures shared by the criterion benches.

use sjd_core::{Categorical, ModelSpec, RandomSource, TabularModel};

/// The flat toy model used throughout the NFE experiments.
pub fn flat_model(vocab_size: usize, flatness: f64) -> TabularModel {
    TabularModel::from_spec(&ModelSpec {
        vocab_size,
        flatness,
        seed: 1,
        ..Default::default()
    })
    .expect("valid bench model")
}

/// A pair of random laws over `vocab_size` tokens.
pub fn random_pair(vocab_size: usize, seed: u64) -> (Categorical, Categorical) {
    let mut rng = RandomSource::new(seed);
    let mut draw = || {
        let w: Vec<f64> = (0..vocab_size)
            .map(|_| rng.draw_uniform01() + 1e-3)
            .collect();
        Categorical::from_weights(w).expect("positive weights")
    };
    (draw(), draw())
}
