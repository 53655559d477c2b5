use serde::{Deserialize, Serialize};

/// An 8-bit planar (channel, row, column) image.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ImageTensor {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<u8>,
}

/// Resampling used by geometric transforms.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Interpolation {
    Nearest,
    #[default]
    Bilinear,
}

impl ImageTensor {
    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Self { channels, height, width, data: vec![0; channels * height * width] }
    }

    pub fn from_planar(channels: usize, height: usize, width: usize, data: Vec<u8>) -> Self {
        assert_eq!(data.len(), channels * height * width, "planar buffer size");
        Self { channels, height, width, data }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn index(&self, c: usize, y: usize, x: usize) -> usize {
        (c * self.height + y) * self.width + x
    }

    #[inline]
    pub fn get(&self, c: usize, y: usize, x: usize) -> u8 {
        self.data[self.index(c, y, x)]
    }

    #[inline]
    pub fn set(&mut self, c: usize, y: usize, x: usize, v: u8) {
        let i = self.index(c, y, x);
        self.data[i] = v;
    }

    pub fn channel(&self, c: usize) -> &[u8] {
        let plane = self.height * self.width;
        &self.data[c * plane..(c + 1) * plane]
    }

    pub fn channel_mut(&mut self, c: usize) -> &mut [u8] {
        let plane = self.height * self.width;
        &mut self.data[c * plane..(c + 1) * plane]
    }

    /// Intensities divided by 255.
    pub fn to_unit(&self) -> Vec<f64> {
        self.data.iter().map(|&v| f64::from(v) / 255.0).collect()
    }

    pub fn flip_horizontal(&self) -> Self {
        let mut out = self.clone();
        for c in 0..self.channels {
            for y in 0..self.height {
                for x in 0..self.width {
                    out.set(c, y, x, self.get(c, y, self.width - 1 - x));
                }
            }
        }
        out
    }

    /// Zero-pad by `pad` on every side, then take the original-size window whose
    /// top-left corner sits at `(top, left)` in the padded frame.
    pub fn pad_crop(&self, pad: usize, top: usize, left: usize) -> Self {
        assert!(top <= 2 * pad && left <= 2 * pad, "crop offset outside padded frame");
        let mut out = Self::zeros(self.channels, self.height, self.width);
        for c in 0..self.channels {
            for y in 0..self.height {
                let sy = (y + top) as isize - pad as isize;
                if sy < 0 || sy >= self.height as isize {
                    continue;
                }
                for x in 0..self.width {
                    let sx = (x + left) as isize - pad as isize;
                    if sx < 0 || sx >= self.width as isize {
                        continue;
                    }
                    out.set(c, y, x, self.get(c, sy as usize, sx as usize));
                }
            }
        }
        out
    }

    /// Rotate about the image centre by `degrees` (positive = counterclockwise as
    /// displayed, row 0 at the top). Samples falling outside the source are black.
    pub fn rotate(&self, degrees: f64, interp: Interpolation) -> Self {
        let (sin, cos) = exact_sin_cos(degrees);
        let cx = (self.width as f64 - 1.0) / 2.0;
        let cy = (self.height as f64 - 1.0) / 2.0;
        let mut out = Self::zeros(self.channels, self.height, self.width);
        for y in 0..self.height {
            for x in 0..self.width {
                // Destination in an upward-pointing frame, rotated back by -degrees.
                let u = x as f64 - cx;
                let v = cy - y as f64;
                let su = u * cos + v * sin;
                let sv = -u * sin + v * cos;
                let sx = su + cx;
                let sy = cy - sv;
                for c in 0..self.channels {
                    let val = match interp {
                        Interpolation::Nearest => self.sample_nearest(c, sy, sx),
                        Interpolation::Bilinear => self.sample_bilinear(c, sy, sx),
                    };
                    out.set(c, y, x, val);
                }
            }
        }
        out
    }

    fn pixel_or_zero(&self, c: usize, y: isize, x: isize) -> f64 {
        if y < 0 || x < 0 || y >= self.height as isize || x >= self.width as isize {
            0.0
        } else {
            f64::from(self.get(c, y as usize, x as usize))
        }
    }

    fn sample_nearest(&self, c: usize, sy: f64, sx: f64) -> u8 {
        self.pixel_or_zero(c, sy.round() as isize, sx.round() as isize) as u8
    }

    fn sample_bilinear(&self, c: usize, sy: f64, sx: f64) -> u8 {
        // Snap coordinates that are integral up to rounding noise so exact
        // quarter turns copy pixels instead of blending with zero fill.
        let snap = |v: f64| if (v - v.round()).abs() < 1e-9 { v.round() } else { v };
        let (sy, sx) = (snap(sy), snap(sx));
        let y0 = sy.floor();
        let x0 = sx.floor();
        let fy = sy - y0;
        let fx = sx - x0;
        let (y0, x0) = (y0 as isize, x0 as isize);
        let v = self.pixel_or_zero(c, y0, x0) * (1.0 - fy) * (1.0 - fx)
            + self.pixel_or_zero(c, y0, x0 + 1) * (1.0 - fy) * fx
            + self.pixel_or_zero(c, y0 + 1, x0) * fy * (1.0 - fx)
            + self.pixel_or_zero(c, y0 + 1, x0 + 1) * fy * fx;
        v.round().clamp(0.0, 255.0) as u8
    }

    /// Average-pool by an integer factor (each output pixel is the rounded mean of a
    /// `factor x factor` patch).
    pub fn downscale(&self, factor: usize) -> Self {
        assert!(factor >= 1 && self.height.is_multiple_of(factor) && self.width.is_multiple_of(factor));
        if factor == 1 {
            return self.clone();
        }
        let (h, w) = (self.height / factor, self.width / factor);
        let mut out = Self::zeros(self.channels, h, w);
        let area = (factor * factor) as u32;
        for c in 0..self.channels {
            for y in 0..h {
                for x in 0..w {
                    let mut acc = 0u32;
                    for dy in 0..factor {
                        for dx in 0..factor {
                            acc += u32::from(self.get(c, y * factor + dy, x * factor + dx));
                        }
                    }
                    out.set(c, y, x, ((acc + area / 2) / area) as u8);
                }
            }
        }
        out
    }
}

/// `sin`/`cos` of an angle in degrees, exact at multiples of 90.
pub fn exact_sin_cos(degrees: f64) -> (f64, f64) {
    let quarter = degrees / 90.0;
    if (quarter - quarter.round()).abs() < 1e-12 {
        match (quarter.round() as i64).rem_euclid(4) {
            0 => (0.0, 1.0),
            1 => (1.0, 0.0),
            2 => (0.0, -1.0),
            _ => (-1.0, 0.0),
        }
    } else {
        degrees.to_radians().sin_cos()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(size: usize) -> ImageTensor {
        let mut img = ImageTensor::zeros(3, size, size);
        for c in 0..3 {
            for y in 0..size {
                for x in 0..size {
                    img.set(c, y, x, ((x * 7 + y * 3 + c * 40) % 256) as u8);
                }
            }
        }
        img
    }

    #[test]
    fn flip_is_an_involution() {
        let img = ramp(32);
        assert_eq!(img.flip_horizontal().flip_horizontal(), img);
        assert_ne!(img.flip_horizontal(), img);
    }

    #[test]
    fn centre_crop_is_identity() {
        let img = ramp(32);
        assert_eq!(img.pad_crop(4, 4, 4), img);
    }

    #[test]
    fn crop_shifts_content_and_fills_black() {
        let img = ramp(8);
        let out = img.pad_crop(4, 0, 0);
        assert_eq!(out.get(0, 0, 0), 0);
        assert_eq!(out.get(0, 4, 4), img.get(0, 0, 0));
    }

    #[test]
    fn quarter_turn_moves_top_right_to_top_left() {
        let mut img = ImageTensor::zeros(3, 32, 32);
        for c in 0..3 {
            img.set(c, 0, 31, 255);
        }
        let out = img.rotate(90.0, Interpolation::Bilinear);
        for c in 0..3 {
            assert_eq!(out.get(c, 0, 0), 255);
        }
        assert_eq!(out.data.iter().filter(|&&v| v != 0).count(), 3);
        let nearest = img.rotate(90.0, Interpolation::Nearest);
        assert_eq!(nearest, out);
    }

    #[test]
    fn full_turn_is_identity() {
        let img = ramp(32);
        let out = img.rotate(360.0, Interpolation::Bilinear);
        let max_diff = img.data.iter().zip(&out.data).map(|(&a, &b)| (i16::from(a) - i16::from(b)).abs()).max().unwrap();
        assert!(max_diff < 2);
    }

    #[test]
    fn thirty_degrees_blackens_corners() {
        let img = ImageTensor::from_planar(3, 32, 32, vec![200; 3 * 32 * 32]);
        let out = img.rotate(30.0, Interpolation::Bilinear);
        for &(y, x) in &[(0, 0), (0, 31), (31, 0), (31, 31)] {
            for c in 0..3 {
                assert_eq!(out.get(c, y, x), 0);
            }
        }
        assert_eq!(out.get(0, 16, 16), 200);
    }

    #[test]
    fn downscale_averages_patches() {
        let mut img = ImageTensor::zeros(1, 4, 4);
        img.set(0, 0, 0, 4);
        img.set(0, 0, 1, 8);
        let out = img.downscale(2);
        assert_eq!((out.height, out.width), (2, 2));
        assert_eq!(out.get(0, 0, 0), 3);
        assert_eq!(out.get(0, 1, 1), 0);
    }
}
