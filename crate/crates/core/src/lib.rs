//! Rare-class active search over synthetic feature spaces.
//!
//! A classifier trained on a heavily imbalanced set still ranks unlabeled
//! samples of a rare class near the top when sorted by that class's
//! (small) softmax probability. This crate provides the pieces to test
//! that: Gaussian-cluster datasets and splits ([`synthdata`]), a small
//! softmax classifier with ADAM ([`netcore`]), selection strategies
//! ([`strategies`]), episodic few-shot models ([`fewshot`]), the active
//! loop itself ([`active_loop`]), metrics ([`metrics`]) and feature-space
//! dissection by uncentered PCA ([`dissect`]).
//!
//! All numeric code is generic over [`Scalar`] (`f32` or `f64`); the
//! aliases below fix the scalar to `f64`, which is what the experiments use.

pub mod active_loop;
pub mod benchmarks;
pub mod dissect;
pub mod error;
pub mod fewshot;
pub mod linalg;
pub mod metrics;
pub mod netcore;
pub mod scalar;
pub mod seeding;
pub mod strategies;
pub mod synthdata;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Sample = synthdata::Sample<f64>;
pub type Dataset = synthdata::Dataset<f64>;
pub type ClusterSpec = synthdata::ClusterSpec<f64>;
pub type SplitBundle = synthdata::SplitBundle<f64>;
pub type Classifier = netcore::Classifier<f64>;
pub type Embedder = netcore::Embedder<f64>;
pub type TrainConfig = netcore::TrainConfig<f64>;
pub type RelationModel = fewshot::RelationModel<f64>;
pub type LoopConfig = active_loop::LoopConfig<f64>;
pub type RunReport = active_loop::RunReport<f64>;
pub type ScoredPool = strategies::ScoredPool<f64>;
pub type Projection = dissect::Projection<f64>;

pub type SampleF32 = synthdata::Sample<f32>;
pub type ClassifierF32 = netcore::Classifier<f32>;
