//! Herbage biomass estimation toolkit.
//!
//! The crate covers the data side of a semi-supervised biomass pipeline:
//! synthetic canopy scenes with height-aware ground truth, reduction of
//! segmentation score maps to coverage features, ridge-regression automatic
//! labeling, noise-robust training scaffolding and the evaluation metrics.

pub mod assets;
pub mod cli;
pub mod dataio;
pub mod losses;
pub mod metrics;
pub mod raster;
pub mod refseg;
pub mod ridge;
pub mod rng;
pub mod scoremap;
pub mod robust;
pub mod segfeat;
pub mod species;
pub mod synth;

pub use raster::{Raster, Rgb, RgbImage};
pub use scoremap::ScoreMap;
pub use species::{SpeciesId, SpeciesSet};
