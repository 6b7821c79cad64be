use serde::{Deserialize, Serialize};

/// Per-channel affine map from `[min, max]` onto `[-1, 1]`.
///
/// Channels with `max == min` are constant: they map to 0 and invert to `min`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

impl Normalizer {
    /// Fits on row-major data of the given width.
    pub fn fit(data: &[f64], width: usize) -> Self {
        let mut min = vec![f64::INFINITY; width];
        let mut max = vec![f64::NEG_INFINITY; width];
        for row in data.chunks_exact(width) {
            for (c, &v) in row.iter().enumerate() {
                min[c] = min[c].min(v);
                max[c] = max[c].max(v);
            }
        }
        for c in 0..width {
            if !min[c].is_finite() {
                min[c] = 0.0;
                max[c] = 0.0;
            }
        }
        Normalizer { min, max }
    }

    /// Identity map on `width` channels.
    pub fn identity(width: usize) -> Self {
        Normalizer { min: vec![-1.0; width], max: vec![1.0; width] }
    }

    pub fn width(&self) -> usize {
        self.min.len()
    }

    pub fn is_constant(&self, c: usize) -> bool {
        !(self.max[c] > self.min[c])
    }

    pub fn constant_channels(&self) -> Vec<usize> {
        (0..self.width()).filter(|&c| self.is_constant(c)).collect()
    }

    /// Half-range of channel `c`: d(denormalized)/d(normalized).
    pub fn scale(&self, c: usize) -> f64 {
        if self.is_constant(c) {
            0.0
        } else {
            0.5 * (self.max[c] - self.min[c])
        }
    }

    pub fn apply_one(&self, c: usize, v: f64) -> f64 {
        if self.is_constant(c) {
            0.0
        } else {
            2.0 * (v - self.min[c]) / (self.max[c] - self.min[c]) - 1.0
        }
    }

    pub fn invert_one(&self, c: usize, v: f64) -> f64 {
        if self.is_constant(c) {
            self.min[c]
        } else {
            self.min[c] + 0.5 * (v + 1.0) * (self.max[c] - self.min[c])
        }
    }

    pub fn apply(&self, x: &[f64], out: &mut [f64]) {
        for (c, (o, &v)) in out.iter_mut().zip(x).enumerate() {
            *o = self.apply_one(c, v);
        }
    }

    pub fn invert(&self, y: &[f64], out: &mut [f64]) {
        for (c, (o, &v)) in out.iter_mut().zip(y).enumerate() {
            *o = self.invert_one(c, v);
        }
    }

    pub(crate) fn is_valid(&self) -> bool {
        self.min.len() == self.max.len()
            && self.min.iter().zip(&self.max).all(|(lo, hi)| lo.is_finite() && hi.is_finite() && hi >= lo)
    }
}
