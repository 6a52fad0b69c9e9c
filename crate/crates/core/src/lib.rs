//! Blind video denoising by fine-tuning a frame-recurrent denoiser on the
//! input sequence itself, using optical-flow twins as self-supervised targets.

pub mod correspondence;
pub mod dae;
pub mod denoiser;
pub mod error;
pub mod experiment;
pub mod fixtures;
pub mod flow;
pub mod frame_io;
pub mod metrics;
pub mod noise;
pub mod par;
pub mod tensor;
pub mod twin_sampler;

pub use correspondence::{CorrespondenceConfig, CorrespondenceParams, OcclusionMask, OcclusionMode, PairMaps, WeightMap};
pub use dae::{DaeConfig, DaeDecision, DaeModel, ModelChoice};
pub use denoiser::{Denoise, DenoiserArch, DenoiserModel, IdentityDenoiser};
pub use error::{Error, Result};
pub use experiment::{run_experiment, ExperimentConfig, RunReport};
pub use fixtures::{Fixture, FixtureKind, FixtureSpec};
pub use flow::{estimate_flow, FlowField, FlowParams, RefineParams};
pub use frame_io::{CropWindow, Frame, FrameSequence};
pub use noise::{apply_noise, NoiseKind, NoiseModel};
pub use tensor::{ParamSet, Tensor4};
pub use twin_sampler::{SamplerConfig, SamplerMode, TwinPair};
