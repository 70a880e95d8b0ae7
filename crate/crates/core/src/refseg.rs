//! Colour-prototype segmenter: one mean RGB colour per class, soft scores
//! from a softmax over negative Euclidean distances.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::raster::{Raster, RgbImage};
use crate::scoremap::ScoreMap;

pub const DEFAULT_TEMPERATURE: f64 = 25.0;

#[derive(Debug, Error, PartialEq)]
pub enum SegError {
    #[error("class {index} ({name}) has no labelled pixels")]
    ClassAbsent { index: usize, name: String },
    #[error("image is {img:?} but label map is {labels:?}")]
    ShapeMismatch {
        img: (usize, usize),
        labels: (usize, usize),
    },
    #[error("temperature must be positive, got {0}")]
    Temperature(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrototypeModel {
    pub classes: Vec<String>,
    /// Mean RGB per class, 0..=255 scale.
    pub prototypes: Vec<[f64; 3]>,
    pub temperature: f64,
}

/// Per-class colour sums; scenes can be accumulated one at a time.
#[derive(Debug, Clone)]
pub struct PrototypeAccumulator {
    sums: Vec<[f64; 3]>,
    counts: Vec<u64>,
}

impl PrototypeAccumulator {
    pub fn new(n_classes: usize) -> Self {
        Self {
            sums: vec![[0.0; 3]; n_classes],
            counts: vec![0; n_classes],
        }
    }

    pub fn add(&mut self, img: &RgbImage, labels: &Raster<u8>) -> Result<(), SegError> {
        if !img.same_dims(labels) {
            return Err(SegError::ShapeMismatch {
                img: img.dims(),
                labels: labels.dims(),
            });
        }
        for (px, &l) in img.as_slice().iter().zip(labels.as_slice()) {
            let Some(sum) = self.sums.get_mut(l as usize) else {
                continue;
            };
            for c in 0..3 {
                sum[c] += px[c] as f64;
            }
            self.counts[l as usize] += 1;
        }
        Ok(())
    }

    pub fn finish(self, classes: &[String], temperature: f64) -> Result<PrototypeModel, SegError> {
        if !(temperature.is_finite() && temperature > 0.0) {
            return Err(SegError::Temperature(temperature));
        }
        let prototypes = self
            .sums
            .iter()
            .zip(&self.counts)
            .enumerate()
            .map(|(i, (s, &n))| {
                if n == 0 {
                    Err(SegError::ClassAbsent {
                        index: i,
                        name: classes.get(i).cloned().unwrap_or_default(),
                    })
                } else {
                    Ok(s.map(|v| v / n as f64))
                }
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(PrototypeModel {
            classes: classes.to_vec(),
            prototypes,
            temperature,
        })
    }
}

/// Mean colour of each class over all labelled scenes.
pub fn fit_prototypes<'a>(
    scenes: impl IntoIterator<Item = (&'a RgbImage, &'a Raster<u8>)>,
    classes: &[String],
    temperature: f64,
) -> Result<PrototypeModel, SegError> {
    let mut acc = PrototypeAccumulator::new(classes.len());
    for (img, labels) in scenes {
        acc.add(img, labels)?;
    }
    acc.finish(classes, temperature)
}

impl PrototypeModel {
    pub fn n_classes(&self) -> usize {
        self.prototypes.len()
    }

    /// Softmax over classes of `-distance / temperature`.
    pub fn pixel_scores(&self, px: [u8; 3], out: &mut [f32]) {
        let mut logits = [0f64; 256];
        let logits = &mut logits[..self.prototypes.len()];
        for (l, p) in logits.iter_mut().zip(&self.prototypes) {
            let d2: f64 = (0..3).map(|c| (px[c] as f64 - p[c]).powi(2)).sum();
            *l = -d2.sqrt() / self.temperature;
        }
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut z = 0.0;
        for l in logits.iter_mut() {
            *l = (*l - max).exp();
            z += *l;
        }
        for (o, l) in out.iter_mut().zip(logits.iter()) {
            *o = (l / z) as f32;
        }
    }

    pub fn segment(&self, img: &RgbImage) -> ScoreMap {
        let c = self.n_classes();
        let n = img.len();
        let mut pixel_major = vec![0f32; n * c];
        pixel_major
            .par_chunks_mut(c)
            .zip(img.as_slice().par_iter())
            .for_each(|(out, &px)| self.pixel_scores(px, out));
        let mut planes = vec![0f32; n * c];
        for (p, scores) in pixel_major.chunks_exact(c).enumerate() {
            for (k, &s) in scores.iter().enumerate() {
                planes[k * n + p] = s;
            }
        }
        ScoreMap::from_planes(img.width(), img.height(), c, planes).expect("shape by construction")
    }
}

pub fn segment(img: &RgbImage, model: &PrototypeModel) -> ScoreMap {
    model.segment(img)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn names(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("c{i}")).collect()
    }

    fn model(protos: Vec<[f64; 3]>, t: f64) -> PrototypeModel {
        PrototypeModel {
            classes: names(protos.len()),
            prototypes: protos,
            temperature: t,
        }
    }

    #[test]
    fn constant_class_prototype() {
        let img = Raster::from_fn(4, 1, |x, _| if x < 2 { [0, 255, 0] } else { [100, 50, 0] });
        let labels = Raster::from_vec(4, 1, vec![1, 1, 0, 0]).unwrap();
        let m = fit_prototypes([(&img, &labels)], &names(2), 25.0).unwrap();
        assert_eq!(m.prototypes[1], [0.0, 255.0, 0.0]);
    }

    #[test]
    fn prototype_is_the_mean() {
        let img = Raster::from_vec(3, 1, vec![[0, 0, 0], [2, 2, 2], [9, 9, 9]]).unwrap();
        let labels = Raster::from_vec(3, 1, vec![1, 1, 0]).unwrap();
        let m = fit_prototypes([(&img, &labels)], &names(2), 25.0).unwrap();
        assert_eq!(m.prototypes[1], [1.0, 1.0, 1.0]);
    }

    #[test]
    fn absent_class_is_named() {
        let img = Raster::filled(2, 1, [0u8; 3]);
        let labels = Raster::filled(2, 1, 0u8);
        let e = fit_prototypes([(&img, &labels)], &["soil".into(), "grass".into()], 25.0).unwrap_err();
        assert_eq!(e, SegError::ClassAbsent { index: 1, name: "grass".into() });
    }

    #[test]
    fn exact_prototype_wins() {
        let m = model(vec![[0.0; 3], [255.0, 0.0, 0.0], [0.0, 0.0, 255.0]], 25.0);
        let s = m.segment(&Raster::filled(1, 1, [255, 0, 0]));
        let p = s.pixel(0);
        assert!(p[1] > p[0] && p[1] > p[2]);
        assert!(p[1] > 0.99);
    }

    #[test]
    fn equidistant_prototypes_give_uniform_scores() {
        let m = model(vec![[10.0, 0.0, 0.0], [0.0, 10.0, 0.0], [0.0, 0.0, 10.0]], 25.0);
        let p = m.segment(&Raster::filled(1, 1, [0, 0, 0])).pixel(0);
        for v in p {
            assert!((v - 1.0 / 3.0).abs() < 1e-6);
        }
    }

    #[test]
    fn hot_softmax_tends_to_uniform() {
        let m = model(vec![[0.0; 3], [255.0, 255.0, 255.0]], 1e9);
        let p = m.segment(&Raster::filled(1, 1, [0, 0, 0])).pixel(0);
        assert!((p[0] - 0.5).abs() < 1e-6 && (p[1] - 0.5).abs() < 1e-6);
    }

    #[test]
    fn rejects_bad_temperature() {
        let acc = PrototypeAccumulator::new(1);
        assert!(matches!(acc.finish(&names(1), 0.0), Err(SegError::Temperature(_))));
    }
}
