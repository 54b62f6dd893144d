//! Binary segmentation masks.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Row-major binary mask. Construction enforces binarity, so every consumer
/// can rely on 0/1 values.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    height: usize,
    width: usize,
    data: Vec<bool>,
}

impl Mask {
    pub fn new(height: usize, width: usize) -> Mask {
        Mask {
            height,
            width,
            data: vec![false; height * width],
        }
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> bool) -> Mask {
        let mut m = Mask::new(height, width);
        for y in 0..height {
            for x in 0..width {
                m.data[y * width + x] = f(y, x);
            }
        }
        m
    }

    pub fn from_bools(height: usize, width: usize, data: Vec<bool>) -> Result<Mask> {
        if data.len() != height * width {
            return Err(Error::InvalidShape {
                op: "mask",
                shape: vec![height, width],
                detail: format!("expected {} values, got {}", height * width, data.len()),
            });
        }
        Ok(Mask {
            height,
            width,
            data,
        })
    }

    /// Threshold a probability map: foreground where `p > threshold`.
    pub fn from_probs(probs: &[f64], height: usize, width: usize, threshold: f64) -> Result<Mask> {
        if probs.len() != height * width {
            return Err(Error::InvalidShape {
                op: "mask",
                shape: vec![height, width],
                detail: format!("expected {} values, got {}", height * width, probs.len()),
            });
        }
        Ok(Mask {
            height,
            width,
            data: probs.iter().map(|&p| p > threshold).collect(),
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn get(&self, y: usize, x: usize) -> bool {
        self.data[y * self.width + x]
    }

    pub fn set(&mut self, y: usize, x: usize, v: bool) {
        self.data[y * self.width + x] = v;
    }

    pub fn values(&self) -> &[bool] {
        &self.data
    }

    pub fn count_foreground(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        self.count_foreground() == 0
    }

    pub fn same_shape(&self, other: &Mask) -> bool {
        self.height == other.height && self.width == other.width
    }

    /// `[1, H, W]` tensor of 0/1 values.
    pub fn to_tensor(&self) -> Tensor {
        let data: Vec<f64> = self
            .data
            .iter()
            .map(|&b| if b { 1.0 } else { 0.0 })
            .collect();
        Tensor::from_vec(&[1, self.height, self.width], data).expect("mask dims")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn threshold_is_strict() {
        let m = Mask::from_probs(&[0.5, 0.500001, 0.4, 1.0], 2, 2, 0.5).unwrap();
        assert_eq!(m.values(), &[false, true, false, true]);
    }

    #[test]
    fn tensor_round_trip_values() {
        let m = Mask::from_fn(3, 2, |y, x| (y + x) % 2 == 0);
        let t = m.to_tensor();
        assert_eq!(t.shape(), vec![1, 3, 2]);
        let back: Vec<bool> = t.data().iter().map(|&v| v > 0.5).collect();
        assert_eq!(back, m.values());
    }
}
