//! Crop-sample library: plant cutouts with alpha masks plus bare-soil
//! backgrounds, loaded from a JSON manifest.
//!
//! Manifest layout (`manifest.json`):
//!
//! ```json
//! {
//!   "assets": {
//!     "grass_001": { "file": "grass/001.png", "species": "grass" },
//!     "clover_004": { "file": "clover/004.jpg", "species": "clover", "mask": "clover/004_mask.png" },
//!     "soil_a": { "file": "soil/a.jpg", "species": "soil" }
//!   }
//! }
//! ```
//!
//! Paths are relative to the manifest. Entries tagged `soil` are
//! backgrounds. A cutout's alpha comes from the `mask` file when given,
//! else from a sibling `<stem>_mask.png` when one exists, else from the
//! image's own alpha channel. Opaque images without any alpha source are
//! taken as fully opaque cutouts.

pub mod procedural;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::raster::{Raster, RgbImage};
use crate::rng::RngState;
use crate::species::{SpeciesId, SpeciesSet};

/// Alpha values above this count as "inside" the cutout.
pub const ALPHA_THRESHOLD: u8 = 127;

#[derive(Debug, Error)]
pub enum AssetError {
    #[error("cannot read manifest {path}: {source}")]
    Manifest {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed manifest {path}: {source}")]
    ManifestFormat {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error("asset {id}: missing file {path}")]
    MissingFile { id: String, path: PathBuf },
    #[error("asset {id}: cannot decode {path}: {reason}")]
    Undecodable {
        id: String,
        path: PathBuf,
        reason: String,
    },
    #[error("asset {id}: unknown species {species:?}")]
    UnknownSpecies { id: String, species: String },
    #[error("asset {id}: alpha mask has no pixel above {ALPHA_THRESHOLD}")]
    EmptyAlpha { id: String },
    #[error("asset {id}: mask is {mask_w}x{mask_h} but image is {img_w}x{img_h}")]
    MaskSize {
        id: String,
        img_w: usize,
        img_h: usize,
        mask_w: usize,
        mask_h: usize,
    },
    #[error("no backgrounds")]
    NoBackgrounds,
    #[error("species {0:?} has no samples")]
    NoSamples(String),
    #[error("species index {0} cannot be drawn (soil or outside the species set)")]
    NotPasteable(u8),
}

/// A plant cutout used as a paste source.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleAsset {
    pub id: String,
    pub species: SpeciesId,
    pub rgb: RgbImage,
    pub alpha: Raster<u8>,
}

impl SampleAsset {
    /// Checks the cutout invariants: species is not soil, rgb and alpha agree
    /// in size and the mask is non-empty.
    pub fn new(
        id: impl Into<String>,
        species: SpeciesId,
        rgb: RgbImage,
        alpha: Raster<u8>,
    ) -> Result<Self, AssetError> {
        let id = id.into();
        if species.is_soil() {
            return Err(AssetError::NotPasteable(species.0));
        }
        if !rgb.same_dims(&alpha) {
            return Err(AssetError::MaskSize {
                id,
                img_w: rgb.width(),
                img_h: rgb.height(),
                mask_w: alpha.width(),
                mask_h: alpha.height(),
            });
        }
        if !alpha.as_slice().iter().any(|&a| a > ALPHA_THRESHOLD) {
            return Err(AssetError::EmptyAlpha { id });
        }
        Ok(Self {
            id,
            species,
            rgb,
            alpha,
        })
    }

    pub fn width(&self) -> usize {
        self.rgb.width()
    }

    pub fn height(&self) -> usize {
        self.rgb.height()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Background {
    pub id: String,
    pub rgb: RgbImage,
}

/// Immutable after construction; share freely between workers.
#[derive(Debug, Clone)]
pub struct AssetLibrary {
    species: SpeciesSet,
    /// Indexed by species id; slot 0 (soil) stays empty.
    samples: Vec<Vec<SampleAsset>>,
    backgrounds: Vec<Background>,
}

impl AssetLibrary {
    pub fn new(
        species: SpeciesSet,
        samples: Vec<SampleAsset>,
        backgrounds: Vec<Background>,
    ) -> Result<Self, AssetError> {
        if backgrounds.is_empty() {
            return Err(AssetError::NoBackgrounds);
        }
        let mut grouped = vec![Vec::new(); species.n_classes()];
        for s in samples {
            let slot = grouped
                .get_mut(s.species.index())
                .filter(|_| !s.species.is_soil())
                .ok_or(AssetError::NotPasteable(s.species.0))?;
            slot.push(s);
        }
        for id in species.species_ids() {
            if grouped[id.index()].is_empty() {
                return Err(AssetError::NoSamples(
                    species.name(id).unwrap_or_default().to_string(),
                ));
            }
        }
        Ok(Self {
            species,
            samples: grouped,
            backgrounds,
        })
    }

    pub fn species(&self) -> &SpeciesSet {
        &self.species
    }

    pub fn backgrounds(&self) -> &[Background] {
        &self.backgrounds
    }

    pub fn samples_of(&self, species: SpeciesId) -> &[SampleAsset] {
        self.samples
            .get(species.index())
            .map(Vec::as_slice)
            .unwrap_or(&[])
    }

    pub fn n_samples(&self) -> usize {
        self.samples.iter().map(Vec::len).sum()
    }

    /// Per-species sample counts, in species order (soil excluded).
    pub fn counts(&self) -> Vec<(String, usize)> {
        self.species
            .species_ids()
            .map(|id| {
                (
                    self.species.name(id).unwrap_or_default().to_string(),
                    self.samples_of(id).len(),
                )
            })
            .collect()
    }

    /// Uniform draw among the samples of `species`.
    pub fn pick_sample(
        &self,
        species: SpeciesId,
        rng: &mut RngState,
    ) -> Result<&SampleAsset, AssetError> {
        if species.is_soil() {
            return Err(AssetError::NotPasteable(species.0));
        }
        let pool = self
            .samples
            .get(species.index())
            .filter(|p| !p.is_empty())
            .ok_or(AssetError::NotPasteable(species.0))?;
        Ok(&pool[rng.random_range(0..pool.len())])
    }

    pub fn pick_background(&self, rng: &mut RngState) -> &Background {
        &self.backgrounds[rng.random_range(0..self.backgrounds.len())]
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub assets: BTreeMap<String, ManifestEntry>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub file: PathBuf,
    pub species: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask: Option<PathBuf>,
}

/// Reads `manifest_path` and decodes every referenced image.
///
/// Assets are ordered by id, so the same manifest always yields the same
/// library layout.
pub fn load_library(manifest_path: &Path, species: &SpeciesSet) -> Result<AssetLibrary, AssetError> {
    let text = std::fs::read_to_string(manifest_path).map_err(|source| AssetError::Manifest {
        path: manifest_path.to_path_buf(),
        source,
    })?;
    let manifest: Manifest =
        serde_json::from_str(&text).map_err(|source| AssetError::ManifestFormat {
            path: manifest_path.to_path_buf(),
            source,
        })?;
    let base = manifest_path.parent().unwrap_or(Path::new("."));

    let mut samples = Vec::new();
    let mut backgrounds = Vec::new();
    for (id, entry) in &manifest.assets {
        let sid = species
            .lookup(&entry.species)
            .ok_or_else(|| AssetError::UnknownSpecies {
                id: id.clone(),
                species: entry.species.clone(),
            })?;
        let path = base.join(&entry.file);
        let img = decode(id, &path)?;
        if sid.is_soil() {
            backgrounds.push(Background {
                id: id.clone(),
                rgb: to_rgb(&img.to_rgb8()),
            });
            continue;
        }
        let rgba = img.to_rgba8();
        let rgb = to_rgb(&img.to_rgb8());
        let mask_path = entry.mask.as_ref().map(|m| base.join(m)).or_else(|| {
            let stem = path.file_stem()?.to_string_lossy().into_owned();
            let sibling = path.with_file_name(format!("{stem}_mask.png"));
            sibling.exists().then_some(sibling)
        });
        let alpha = match mask_path {
            Some(mp) => {
                let m = decode(id, &mp)?.to_luma8();
                Raster::from_vec(m.width() as usize, m.height() as usize, m.into_raw())
                    .expect("luma buffer matches its dimensions")
            }
            None => Raster::from_fn(rgb.width(), rgb.height(), |x, y| {
                rgba.get_pixel(x as u32, y as u32).0[3]
            }),
        };
        samples.push(SampleAsset::new(id.clone(), sid, rgb, alpha)?);
    }
    AssetLibrary::new(species.clone(), samples, backgrounds)
}

fn decode(id: &str, path: &Path) -> Result<image::DynamicImage, AssetError> {
    if !path.is_file() {
        return Err(AssetError::MissingFile {
            id: id.to_string(),
            path: path.to_path_buf(),
        });
    }
    image::ImageReader::open(path)
        .and_then(|r| r.with_guessed_format())
        .map_err(|e| e.to_string())
        .and_then(|r| r.decode().map_err(|e| e.to_string()))
        .map_err(|reason| AssetError::Undecodable {
            id: id.to_string(),
            path: path.to_path_buf(),
            reason,
        })
}

pub(crate) fn to_rgb(img: &image::RgbImage) -> RgbImage {
    let (w, h) = (img.width() as usize, img.height() as usize);
    let data = img.pixels().map(|p| p.0).collect();
    Raster::from_vec(w, h, data).expect("rgb buffer matches its dimensions")
}
