//! Calibration-free focal depth estimation from short binocular gaze
//! sequences.
//!
//! The crate covers the whole chain: recordings in a fixed CSV schema
//! ([`dataset`]), a synthetic binocular simulator with exact geometric
//! ground truth ([`synth`]), 54 engineered gaze features ([`features`]),
//! cleaning / balancing / splitting / normalization / sequencing
//! ([`preprocess`]), an LSTM regression network with hand-written gradients
//! ([`nn`]), leave-one-subject-out training ([`train`]) and the evaluation
//! suite ([`eval`]). [`cli`] ties them together behind one binary.

pub mod cli;
pub mod dataset;
pub mod eval;
pub mod features;
pub mod kv;
pub mod nn;
pub mod preprocess;
pub mod rng;
pub mod stats;
pub mod synth;
pub mod train;
pub mod vec3;

pub use dataset::{GazeSample, SubjectRecording};
pub use features::{FeatureFrame, FeatureName, FEATURE_COUNT};
pub use vec3::Vec3;
