//! Evolutionary loss-weight search for infrared/visible image fusion.
//!
//! The crate holds the numerical building blocks (gradients, Gaussian
//! filtering, bilinear resampling, histograms), the discriminative enhancer,
//! cross-dimensional attention, the seven loss components, fusion quality
//! metrics, the genetic engine that tunes loss coefficients, and a small
//! fusion pipeline whose inner optimizer is driven by those coefficients.

pub mod attention;
pub mod enhancer;
pub mod error;
pub mod evo;
pub mod grid;
pub mod io;
pub mod losses;
pub mod metrics;
pub mod pipeline;
pub mod sample;

pub use error::{Error, Result};
pub use evo::{EvalRecord, EvoConfig, EvoOutcome, Evolver, GeneBounds, Genome, Origin};
pub use grid::{FeatureMap, GradientField, Image};
pub use losses::{BBox, DecoLoss, DecoSlot, DetectionSample, LossBreakdown};
pub use metrics::MetricReport;
pub use pipeline::{CoopRunReport, FusionPair, FusionParams, InnerConfig};
