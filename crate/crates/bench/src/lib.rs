//! Shared fixtures for the benchmarks.

use setref_core::data::{generate_scene, CorruptionConfig, Interaction, SkeletonTemplate};
use setref_core::Scene;

/// A corrupted handshake/line scene of `persons` people.
pub fn scene(persons: usize, seed: u64) -> Scene {
    generate_scene(
        &SkeletonTemplate::standard(),
        persons,
        Interaction::Handshake,
        &CorruptionConfig::default(),
        seed,
    )
    .expect("standard template is valid")
    .scene
}
