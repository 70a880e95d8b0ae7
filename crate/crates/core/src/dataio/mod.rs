//! Readers and writers for every pipeline artifact.

pub mod binary;
pub mod tables;

use std::path::{Path, PathBuf};

use image::codecs::jpeg::JpegEncoder;
use thiserror::Error;

use crate::raster::{Raster, RgbImage};
use crate::scoremap::ScoreMap;
use crate::synth::SyntheticScene;

pub use binary::{decode_hht, decode_smp, encode_hht, encode_smp};
pub use tables::{
    read_feature_table, read_label_table, write_feature_table, write_label_table, FeatureRow,
    FeatureTable, LabelRow, LabelSource, LabelTable,
};

pub const JPEG_QUALITY: u8 = 95;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("file too short: need {needed} bytes, got {got}")]
    Truncated { needed: usize, got: usize },
    #[error("bad magic: expected {expected:?}, found {found:?}")]
    Magic { expected: String, found: Vec<u8> },
    #[error("malformed data: {0}")]
    Format(String),
    #[error("score map pixel {pixel} sums to {sum}")]
    ScoreSum { pixel: usize, sum: f64 },
    #[error("row {image_id}: {reason}")]
    Row { image_id: String, reason: String },
    #[error("{path}: image codec: {reason}")]
    Image { path: PathBuf, reason: String },
    #[error("{path}: csv: {reason}")]
    Csv { path: PathBuf, reason: String },
}

impl DataError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        DataError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    pub(crate) fn csv(path: &Path, e: csv::Error) -> Self {
        DataError::Csv {
            path: path.to_path_buf(),
            reason: e.to_string(),
        }
    }

    pub(crate) fn image(path: &Path, e: impl std::fmt::Display) -> Self {
        DataError::Image {
            path: path.to_path_buf(),
            reason: e.to_string(),
        }
    }
}

/// File names written for one scene.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScenePaths {
    pub rgb: PathBuf,
    pub labels: PathBuf,
    pub height: PathBuf,
}

impl ScenePaths {
    pub fn new(dir: &Path, image_id: &str) -> Self {
        Self {
            rgb: dir.join(format!("{image_id}.jpg")),
            labels: dir.join(format!("{image_id}_labels.png")),
            height: dir.join(format!("{image_id}_height.hht")),
        }
    }
}

/// Writes `{id}.jpg` (quality 95), `{id}_labels.png` (8-bit class indices)
/// and `{id}_height.hht`.
pub fn write_scene(
    scene: &SyntheticScene,
    normalized_height: &Raster<f32>,
    dir: &Path,
    image_id: &str,
) -> Result<ScenePaths, DataError> {
    let paths = ScenePaths::new(dir, image_id);
    write_jpeg(&scene.rgb, &paths.rgb)?;
    write_labels_png(&scene.labels, &paths.labels)?;
    write_hht(normalized_height, &paths.height)?;
    Ok(paths)
}

pub fn write_jpeg(rgb: &RgbImage, path: &Path) -> Result<(), DataError> {
    let file = std::fs::File::create(path).map_err(|e| DataError::io(path, e))?;
    let mut out = std::io::BufWriter::new(file);
    let raw: Vec<u8> = rgb.as_slice().iter().flatten().copied().collect();
    JpegEncoder::new_with_quality(&mut out, JPEG_QUALITY)
        .encode(&raw, rgb.width() as u32, rgb.height() as u32, image::ExtendedColorType::Rgb8)
        .map_err(|e| DataError::image(path, e))
}

/// Decodes any RGB-capable image file (JPEG, PNG).
pub fn read_rgb(path: &Path) -> Result<RgbImage, DataError> {
    let img = image::open(path).map_err(|e| DataError::image(path, e))?.to_rgb8();
    Ok(crate::assets::to_rgb(&img))
}

pub fn write_rgb_png(rgb: &RgbImage, path: &Path) -> Result<(), DataError> {
    let raw: Vec<u8> = rgb.as_slice().iter().flatten().copied().collect();
    image::save_buffer(path, &raw, rgb.width() as u32, rgb.height() as u32, image::ColorType::Rgb8)
        .map_err(|e| DataError::image(path, e))
}

pub fn write_labels_png(labels: &Raster<u8>, path: &Path) -> Result<(), DataError> {
    image::save_buffer(
        path,
        labels.as_slice(),
        labels.width() as u32,
        labels.height() as u32,
        image::ColorType::L8,
    )
    .map_err(|e| DataError::image(path, e))
}

pub fn read_labels_png(path: &Path) -> Result<Raster<u8>, DataError> {
    let img = image::open(path).map_err(|e| DataError::image(path, e))?;
    if !matches!(img, image::DynamicImage::ImageLuma8(_)) {
        return Err(DataError::Image {
            path: path.to_path_buf(),
            reason: format!("expected 8-bit grayscale, got {:?}", img.color()),
        });
    }
    let g = img.to_luma8();
    Ok(Raster::from_vec(g.width() as usize, g.height() as usize, g.into_raw()).expect("luma dims"))
}

pub fn write_hht(raster: &Raster<f32>, path: &Path) -> Result<(), DataError> {
    std::fs::write(path, encode_hht(raster)).map_err(|e| DataError::io(path, e))
}

pub fn read_hht(path: &Path) -> Result<Raster<f32>, DataError> {
    decode_hht(&std::fs::read(path).map_err(|e| DataError::io(path, e))?)
}

pub fn write_score_map(map: &ScoreMap, path: &Path) -> Result<(), DataError> {
    std::fs::write(path, encode_smp(map)).map_err(|e| DataError::io(path, e))
}

pub fn read_score_map(path: &Path) -> Result<ScoreMap, DataError> {
    decode_smp(&std::fs::read(path).map_err(|e| DataError::io(path, e))?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scene_files_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut scene = SyntheticScene::from_background(Raster::from_fn(9, 7, |x, y| [x as u8 * 20, y as u8 * 30, 90]));
        *scene.labels.get_mut(2, 3) = 3;
        *scene.labels.get_mut(8, 6) = 1;
        let height = Raster::from_fn(9, 7, |x, y| (x * y) as f32 / 48.0);
        let paths = write_scene(&scene, &height, dir.path(), "img_0001").unwrap();
        assert!(paths.rgb.ends_with("img_0001.jpg"));
        assert_eq!(read_labels_png(&paths.labels).unwrap(), scene.labels);
        assert_eq!(read_hht(&paths.height).unwrap(), height);
        let rgb = read_rgb(&paths.rgb).unwrap();
        assert_eq!(rgb.dims(), (9, 7));
    }

    #[test]
    fn rgb_png_is_not_a_label_map() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.png");
        write_rgb_png(&Raster::filled(2, 2, [1, 2, 3]), &p).unwrap();
        assert!(read_labels_png(&p).is_err());
    }
}
