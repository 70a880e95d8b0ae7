//! Per-pixel class-probability rasters, stored plane by plane.

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreMap {
    width: usize,
    height: usize,
    n_classes: usize,
    /// `n_classes` planes of `width * height` values, row-major.
    data: Vec<f32>,
}

impl ScoreMap {
    /// `None` when the buffer length disagrees with the shape or the shape is empty.
    pub fn from_planes(width: usize, height: usize, n_classes: usize, data: Vec<f32>) -> Option<Self> {
        (n_classes > 0 && data.len() == width * height * n_classes).then_some(Self {
            width,
            height,
            n_classes,
            data,
        })
    }

    /// Builds from per-pixel score vectors in row-major pixel order.
    pub fn from_pixels(width: usize, height: usize, pixels: &[Vec<f32>]) -> Option<Self> {
        let c = pixels.first()?.len();
        if pixels.len() != width * height || pixels.iter().any(|p| p.len() != c) {
            return None;
        }
        let n = width * height;
        let mut data = vec![0.0; n * c];
        for (i, p) in pixels.iter().enumerate() {
            for (k, &v) in p.iter().enumerate() {
                data[k * n + i] = v;
            }
        }
        Self::from_planes(width, height, c, data)
    }

    /// Every pixel gets probability 1 on its label.
    pub fn one_hot(labels: &crate::raster::Raster<u8>, n_classes: usize) -> Self {
        let n = labels.len();
        let mut data = vec![0.0; n * n_classes];
        for (i, &l) in labels.as_slice().iter().enumerate() {
            data[(l as usize).min(n_classes - 1) * n + i] = 1.0;
        }
        Self {
            width: labels.width(),
            height: labels.height(),
            n_classes,
            data,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn n_pixels(&self) -> usize {
        self.width * self.height
    }

    pub fn plane(&self, class: usize) -> &[f32] {
        let n = self.n_pixels();
        &self.data[class * n..(class + 1) * n]
    }

    pub fn plane_mut(&mut self, class: usize) -> &mut [f32] {
        let n = self.n_pixels();
        &mut self.data[class * n..(class + 1) * n]
    }

    #[inline]
    pub fn score(&self, class: usize, pixel: usize) -> f32 {
        self.data[class * self.n_pixels() + pixel]
    }

    pub fn pixel(&self, pixel: usize) -> Vec<f32> {
        (0..self.n_classes).map(|c| self.score(c, pixel)).collect()
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f32] {
        &mut self.data
    }

    /// Reorders class planes: plane `k` of the result is plane `perm[k]` of `self`.
    pub fn permute_classes(&self, perm: &[usize]) -> Self {
        assert_eq!(perm.len(), self.n_classes);
        let data = perm.iter().flat_map(|&c| self.plane(c).iter().copied()).collect();
        Self {
            width: self.width,
            height: self.height,
            n_classes: self.n_classes,
            data,
        }
    }
}
