//! Plate physics, synthetic sand patterns, the attention classifier, the UDP
//! mapping service and audio rendering for the Chladni recognition system.

pub mod audio;
pub mod physics;
pub mod registry;
pub mod service;
pub mod model;
pub mod synth;

pub use physics::{ModeOrder, PlateSpec};
pub use registry::{map_mode_to_frequency, ModeEntry, ModeRegistry};
