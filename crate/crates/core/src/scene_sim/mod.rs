//! Synthetic datasets: textured ground-truth scenes, hover-error homographies,
//! gain/offset corruption profiles, and noisy observations.

pub mod dataset;
pub mod hover;
pub mod profile;
pub mod scene;

pub use dataset::{
    build_dataset, corrupt, simulate, synthetic_mosaic, Dataset, GroundTruth, ObservationSet, SimulationConfig,
};
pub use hover::{pose_homography, sample_homography, HoverModel, HoverPose, Intrinsics};
pub use profile::{make_radial_profile, make_sine_profile, CorruptionProfile, ProfileKind, DEFAULT_SNR};
pub use scene::textured_scene;
