//! Fixtures shared by the pipeline benchmarks.

use aggloc_core::attack::Standardization;
use aggloc_core::data::{generate_synthetic, ArchetypeRates, PopulationMix};
use aggloc_core::{Dataset, GameConfig, LrParams, SlotRange, SynthConfig};

fn rates(events_per_day: f64, anchor_rois: usize, noise_probability: f64) -> ArchetypeRates {
    ArchetypeRates {
        events_per_day,
        anchor_rois,
        noise_probability,
    }
}

/// A mixed synthetic population over one week of hourly slots.
pub fn population(n_users: usize, n_rois: usize, seed: u64) -> Dataset {
    generate_synthetic(&SynthConfig {
        n_users,
        n_rois,
        n_slots: 168,
        slot_seconds: 3600,
        time_origin: 0,
        mix: PopulationMix {
            commuter: 0.4,
            roamer: 0.2,
            sparse: 0.4,
        },
        commuter: rates(8.0, 3, 0.1),
        roamer: rates(14.0, 8, 0.4),
        sparse: rates(2.0, 3, 0.5),
        seed,
    })
    .expect("fixture config is valid")
}

/// Game over the full week with groups of ten.
pub fn week_game(n_samples: usize, seed: u64) -> GameConfig {
    GameConfig {
        m: 10,
        observation: SlotRange::new(0, 168),
        inference: SlotRange::new(0, 168),
        n_samples,
        train_fraction: 0.8,
        pca_variance_target: 0.99,
        pca_max_components: 150,
        standardization: Standardization::ZScore,
        lr: LrParams::default(),
        seed,
    }
}
