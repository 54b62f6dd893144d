//! Dense displacement fields and their color-wheel encoding.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Per-pixel displacement field: `u` is the x component, `v` the y
/// component, both in pixels.
#[derive(Debug, Clone)]
pub struct FlowField {
    pub height: usize,
    pub width: usize,
    pub u: Vec<f64>,
    pub v: Vec<f64>,
}

impl FlowField {
    pub fn zeros(height: usize, width: usize) -> FlowField {
        FlowField {
            height,
            width,
            u: vec![0.0; height * width],
            v: vec![0.0; height * width],
        }
    }

    pub fn get(&self, y: usize, x: usize) -> (f64, f64) {
        let i = y * self.width + x;
        (self.u[i], self.v[i])
    }

    pub fn set(&mut self, y: usize, x: usize, u: f64, v: f64) {
        let i = y * self.width + x;
        self.u[i] = u;
        self.v[i] = v;
    }

    pub fn max_magnitude(&self) -> f64 {
        self.u
            .iter()
            .zip(&self.v)
            .map(|(u, v)| (u * u + v * v).sqrt())
            .fold(0.0, f64::max)
    }
}

/// HSV → RGB, h in degrees [0, 360), s and v in [0, 1].
fn hsv_to_rgb(h: f64, s: f64, v: f64) -> [f64; 3] {
    let c = v * s;
    let hp = h / 60.0;
    let x = c * (1.0 - (hp % 2.0 - 1.0).abs());
    let (r1, g1, b1) = match hp as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = v - c;
    [r1 + m, g1 + m, b1 + m]
}

/// Color-wheel encoding of a flow field into a `[3, H, W]` tensor in [0, 1]:
/// hue from atan2(v, u), saturation from min(magnitude/max_mag, 1), value 1.
/// Zero flow maps to white.
pub fn flow_to_color(flow: &FlowField, max_mag: f64) -> Result<Tensor> {
    if max_mag <= 0.0 {
        return Err(Error::Config("flow max_mag must be positive".into()));
    }
    let (h, w) = (flow.height, flow.width);
    let mut data = vec![0.0; 3 * h * w];
    for y in 0..h {
        for x in 0..w {
            let (u, v) = flow.get(y, x);
            let mag = (u * u + v * v).sqrt();
            let sat = (mag / max_mag).min(1.0);
            let mut hue = v.atan2(u).to_degrees();
            if hue < 0.0 {
                hue += 360.0;
            }
            let rgb = hsv_to_rgb(hue, sat, 1.0);
            for (c, val) in rgb.iter().enumerate() {
                data[(c * h + y) * w + x] = *val;
            }
        }
    }
    Tensor::from_vec(&[3, h, w], data)
}
