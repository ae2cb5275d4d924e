//! Identity-document authentication through forgery detection of the
//! guilloche background pattern.
//!
//! The crate is organised as a pipeline:
//!
//! * [`imaging`] holds the pixel-level primitives (grayscale rasters, block
//!   grids, copy-move tampering, synthetic guilloche rendering).
//! * [`dataset`] builds corpora: ingestion, forged-set generation, stratified
//!   splits, labelled pair sampling and network-ready tensors.
//! * [`network`] is the twin-branch convolutional embedding network, its
//!   contrastive objective, Adam training loop, finite-difference gradient
//!   check and checkpoint archive.
//! * [`calibration`] turns per-country distance distributions into decision
//!   thresholds.
//! * [`evaluation`] classifies pairs and measures TAR/FRR/FAR and ROC curves.
//!
//! The numerical core is generic over the scalar type through [`Real`]
//! (`f32` for training throughput, `f64` for gradient checks). Counting
//! metrics are additionally available as exact rationals.

pub mod calibration;
pub mod dataset;
pub mod evaluation;
pub mod imaging;
pub mod network;

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

/// Floating point scalar the network and the distance analysis run on: `f32` or `f64`.
pub trait Real:
    num_traits::Float
    + num_traits::FromPrimitive
    + num_traits::ToPrimitive
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Sum
    + Debug
    + Display
    + Default
    + Send
    + Sync
    + 'static
{
    /// Lossless-enough conversion from `f64` used for constants and pixel data.
    fn of(v: f64) -> Self {
        <Self as num_traits::FromPrimitive>::from_f64(v).expect("f64 is representable")
    }

    fn as_f64(self) -> f64 {
        num_traits::ToPrimitive::to_f64(&self).expect("scalar converts to f64")
    }
}

impl Real for f32 {}
impl Real for f64 {}


pub use dataset::{Country, DocClass, DocumentRecord, InputTensor, Manifest, PairSample, Source};

pub use imaging::{BlockGrid, GrayImage, GuillocheParams, Region};

pub use network::{ArchitectureConfig, FeatureVector, LossTrace, Mode, SiameseParams, TrainConfig};

pub type SiameseParams32 = SiameseParams<f32>;
pub type SiameseParams64 = SiameseParams<f64>;
pub type FeatureVector32 = FeatureVector<f32>;
pub type FeatureVector64 = FeatureVector<f64>;
pub use calibration::{DistanceStats, ThresholdRecord, ThresholdTable};
pub use evaluation::{MetricsReport, RocPoint};

pub type ThresholdRecord64 = ThresholdRecord<f64>;
pub type DistanceStats64 = DistanceStats<f64>;
pub type RocPoint64 = RocPoint<f64>;
