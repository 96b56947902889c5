//! Few-shot detection back end operating on precomputed proposal and feature data.
//!
//! The numerical modules ([`geometry`], [`features`], [`diffusion`], [`postproc`], [`eval`])
//! are generic over a floating-point [`Scalar`]; the I/O and orchestration layers
//! ([`synthio`], [`pipeline`]) work in `f64`. Concrete aliases for both precisions are
//! exported below. The `twofloat` feature adds a double-double scalar, useful for checking
//! numerical properties below `f64` resolution.

pub mod diffusion;
pub mod error;
pub mod eval;
pub mod features;
pub mod geometry;
pub mod pipeline;
pub mod postproc;
pub mod scalar;
pub mod synthio;

pub use error::{Error, Result};
pub use scalar::Scalar;
#[cfg(feature = "twofloat")]
pub use twofloat::TwoFloat;

pub use diffusion::{ClassGraph, DiffusionParams, DiffusionResult, Proposal};
pub use eval::{Detection, EvalReport, GroundTruthBox};
pub use features::{ClassPrototype, FeatureMap, FeatureVector, GridBox, SupportAnnotation};
pub use geometry::{BinaryMask, BoundingBox, SoftMask};
pub use pipeline::{Method, PipelineConfig};
pub use postproc::ScoredDetection;

pub type BBox = BoundingBox<f64>;
pub type BBox32 = BoundingBox<f32>;
pub type Soft = SoftMask<f64>;
pub type Soft32 = SoftMask<f32>;
pub type Feature = FeatureVector<f64>;
pub type Feature32 = FeatureVector<f32>;
pub type FMap = FeatureMap<f64>;
pub type FMap32 = FeatureMap<f32>;
pub type Prototype = ClassPrototype<f64>;
pub type Prototype32 = ClassPrototype<f32>;
pub type Prop = Proposal<f64>;
pub type Prop32 = Proposal<f32>;
pub type Params = DiffusionParams<f64>;
pub type Params32 = DiffusionParams<f32>;
pub type Graph = ClassGraph<f64>;
pub type Graph32 = ClassGraph<f32>;
pub type Scored = ScoredDetection<f64>;
pub type Scored32 = ScoredDetection<f32>;
pub type Det = Detection<f64>;
pub type Det32 = Detection<f32>;
pub type Gt = GroundTruthBox<f64>;
pub type Gt32 = GroundTruthBox<f32>;
