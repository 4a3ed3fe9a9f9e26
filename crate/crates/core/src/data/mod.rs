//! Synthetic scenes, scene files, and cross-validation splits.

mod generate;
mod io;
mod kfold;
pub mod skeleton;

pub use generate::{
    generate_dataset, generate_scene, wrist_gap, CorruptionConfig, DatasetConfig, Generated,
    Interaction, InteractionMix,
};
pub use io::{read_scenes, read_scenes_from, write_scenes, write_scenes_to};
pub use kfold::{kfold, KFold};
pub use skeleton::SkeletonTemplate;
