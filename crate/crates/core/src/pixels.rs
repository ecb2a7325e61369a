//! Image storage and the float preprocessing used by detection and description.
//!
//! [`Image`] holds 8-bit samples exactly as they come from disk. All filtering
//! happens on [`Plane`], an interleaved `f32` buffer of the same layout. Every
//! operation replicates the border row/column when it reads outside the image.

use alloc::vec;
use alloc::vec::Vec;
use core::f32::consts::PI;

use crate::error::{Error, Result};
use crate::fmath;

/// 8-bit image, row-major, channels interleaved. One or three channels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Image {
    width: u32,
    height: u32,
    channels: u8,
    data: Vec<u8>,
}

impl Image {
    pub fn new(width: u32, height: u32, channels: u8, data: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidImage(alloc::format!(
                "empty image {width}x{height}"
            )));
        }
        if channels != 1 && channels != 3 {
            return Err(Error::InvalidImage(alloc::format!(
                "unsupported channel count {channels}"
            )));
        }
        let expected = width as usize * height as usize * channels as usize;
        if data.len() != expected {
            return Err(Error::InvalidImage(alloc::format!(
                "data length {} does not match {width}x{height}x{channels}",
                data.len()
            )));
        }
        Ok(Image {
            width,
            height,
            channels,
            data,
        })
    }

    pub fn filled(width: u32, height: u32, channels: u8, value: u8) -> Result<Self> {
        let len = width as usize * height as usize * channels as usize;
        Image::new(width, height, channels, vec![value; len])
    }

    /// Builds a grayscale image from a per-pixel function.
    pub fn from_fn(width: u32, height: u32, mut f: impl FnMut(u32, u32) -> u8) -> Result<Self> {
        let mut data = Vec::with_capacity(width as usize * height as usize);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Image::new(width, height, 1, data)
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn channels(&self) -> u8 {
        self.channels
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn into_data(self) -> Vec<u8> {
        self.data
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32, c: u8) -> u8 {
        let idx =
            (y as usize * self.width as usize + x as usize) * self.channels as usize + c as usize;
        self.data[idx]
    }

    #[inline]
    pub fn get_f32(&self, x: u32, y: u32, c: u8) -> f32 {
        self.get(x, y, c) as f32
    }

    /// Float copy with values in `[0, 255]`.
    pub fn to_plane(&self) -> Plane {
        Plane {
            width: self.width as usize,
            height: self.height as usize,
            channels: self.channels as usize,
            data: self.data.iter().map(|&v| v as f32).collect(),
        }
    }
}

/// Interleaved `f32` image used for all arithmetic.
#[derive(Debug, Clone, PartialEq)]
pub struct Plane {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<f32>,
}

impl Plane {
    pub fn new(width: usize, height: usize, channels: usize, data: Vec<f32>) -> Result<Self> {
        if width == 0 || height == 0 || channels == 0 {
            return Err(Error::InvalidImage(alloc::format!(
                "empty plane {width}x{height}x{channels}"
            )));
        }
        if data.len() != width * height * channels {
            return Err(Error::InvalidImage("plane data length mismatch".into()));
        }
        Ok(Plane {
            width,
            height,
            channels,
            data,
        })
    }

    pub fn zeros(width: usize, height: usize, channels: usize) -> Self {
        Plane {
            width,
            height,
            channels,
            data: vec![0.0; width * height * channels],
        }
    }

    /// Single-channel plane from a per-pixel function.
    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f32) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Plane {
            width,
            height,
            channels: 1,
            data,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, c: usize) -> f32 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, c: usize, v: f32) {
        self.data[(y * self.width + x) * self.channels + c] = v;
    }

    /// Reads with border replication.
    #[inline]
    pub fn at_clamped(&self, x: isize, y: isize, c: usize) -> f32 {
        let xc = x.clamp(0, self.width as isize - 1) as usize;
        let yc = y.clamp(0, self.height as isize - 1) as usize;
        self.get(xc, yc, c)
    }

    /// Bilinear sample at a continuous position (pixel centres on integers).
    pub fn sample_bilinear(&self, x: f32, y: f32, c: usize) -> f32 {
        let x0 = fmath::floorf(x);
        let y0 = fmath::floorf(y);
        let fx = x - x0;
        let fy = y - y0;
        let xi = x0 as isize;
        let yi = y0 as isize;
        let a = self.at_clamped(xi, yi, c);
        let b = self.at_clamped(xi + 1, yi, c);
        let d = self.at_clamped(xi, yi + 1, c);
        let e = self.at_clamped(xi + 1, yi + 1, c);
        let top = a + (b - a) * fx;
        let bottom = d + (e - d) * fx;
        top + (bottom - top) * fy
    }

    pub fn map(&self, f: impl Fn(f32) -> f32) -> Plane {
        Plane {
            width: self.width,
            height: self.height,
            channels: self.channels,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Element-wise `self - other`. Shapes must agree.
    pub fn sub(&self, other: &Plane) -> Plane {
        debug_assert_eq!(self.data.len(), other.data.len());
        Plane {
            width: self.width,
            height: self.height,
            channels: self.channels,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(a, b)| a - b)
                .collect(),
        }
    }

    /// Luminance for three-channel planes, identity for one channel.
    pub fn to_gray(&self) -> Plane {
        if self.channels == 1 {
            return self.clone();
        }
        let data = self
            .data
            .chunks_exact(self.channels)
            .map(|px| 0.299 * px[0] + 0.587 * px[1] + 0.114 * px[2])
            .collect();
        Plane {
            width: self.width,
            height: self.height,
            channels: 1,
            data,
        }
    }

    /// Rounds and clamps into an 8-bit image.
    pub fn to_image(&self) -> Result<Image> {
        let data = self.data.iter().map(|&v| quantize_u8(v)).collect();
        Image::new(
            self.width as u32,
            self.height as u32,
            self.channels as u8,
            data,
        )
    }

    pub fn gaussian_blur(&self, sigma: f32) -> Result<Plane> {
        if !(sigma >= 0.0) {
            return Err(Error::param(
                "sigma",
                alloc::format!("must be >= 0, got {sigma}"),
            ));
        }
        if sigma == 0.0 {
            return Ok(self.clone());
        }
        let kernel = gaussian_kernel(sigma);
        let horizontal = self.convolve_rows(&kernel);
        Ok(horizontal.convolve_cols(&kernel))
    }

    fn convolve_rows(&self, kernel: &[f32]) -> Plane {
        let r = kernel.len() / 2;
        let (w, ch) = (self.width, self.channels);
        let mut out = Plane::zeros(self.width, self.height, ch);
        let mut padded = vec![0.0f32; w + 2 * r];
        let mut acc = vec![0.0f32; w];
        for y in 0..self.height {
            for c in 0..ch {
                let row = |x: usize| self.data[(y * w + x) * ch + c];
                for (i, slot) in padded.iter_mut().enumerate() {
                    let x = (i as isize - r as isize).clamp(0, w as isize - 1) as usize;
                    *slot = row(x);
                }
                acc.iter_mut().for_each(|a| *a = 0.0);
                for (ki, &k) in kernel.iter().enumerate() {
                    for (a, &v) in acc.iter_mut().zip(&padded[ki..ki + w]) {
                        *a += k * v;
                    }
                }
                for (x, &a) in acc.iter().enumerate() {
                    out.data[(y * w + x) * ch + c] = a;
                }
            }
        }
        out
    }

    fn convolve_cols(&self, kernel: &[f32]) -> Plane {
        let r = kernel.len() as isize / 2;
        let stride = self.width * self.channels;
        let mut out = Plane::zeros(self.width, self.height, self.channels);
        for y in 0..self.height {
            let dst = &mut out.data[y * stride..(y + 1) * stride];
            for (ki, &k) in kernel.iter().enumerate() {
                let sy = (y as isize + ki as isize - r).clamp(0, self.height as isize - 1) as usize;
                let src = &self.data[sy * stride..(sy + 1) * stride];
                for (d, s) in dst.iter_mut().zip(src) {
                    *d += k * s;
                }
            }
        }
        out
    }

    /// Bilinear resize to `round(dim / phi)`; `phi = 1` returns an exact copy.
    pub fn downsample(&self, phi: f32) -> Result<Plane> {
        if !(phi >= 1.0) {
            return Err(Error::param(
                "phi",
                alloc::format!("must be >= 1, got {phi}"),
            ));
        }
        if phi == 1.0 {
            return Ok(self.clone());
        }
        let ow = (fmath::roundf(self.width as f32 / phi) as usize).max(1);
        let oh = (fmath::roundf(self.height as f32 / phi) as usize).max(1);
        Ok(self.resize(ow, oh))
    }

    /// Bilinear resize aligning pixel centres.
    pub fn resize(&self, ow: usize, oh: usize) -> Plane {
        let sx = self.width as f32 / ow as f32;
        let sy = self.height as f32 / oh as f32;
        let mut out = Plane::zeros(ow, oh, self.channels);
        for y in 0..oh {
            let fy = (y as f32 + 0.5) * sy - 0.5;
            for x in 0..ow {
                let fx = (x as f32 + 0.5) * sx - 0.5;
                for c in 0..self.channels {
                    out.set(x, y, c, self.sample_bilinear(fx, fy, c));
                }
            }
        }
        out
    }

    /// Keeps every second pixel in both directions.
    pub fn decimate2(&self) -> Plane {
        let ow = self.width.div_ceil(2);
        let oh = self.height.div_ceil(2);
        let mut out = Plane::zeros(ow, oh, self.channels);
        for y in 0..oh {
            for x in 0..ow {
                for c in 0..self.channels {
                    out.set(x, y, c, self.get(2 * x, 2 * y, c));
                }
            }
        }
        out
    }
}

#[inline]
fn quantize_u8(v: f32) -> u8 {
    fmath::roundf(v).clamp(0.0, 255.0) as u8
}

/// Normalised 1-D Gaussian kernel with radius `ceil(3 sigma)`.
pub fn gaussian_kernel(sigma: f32) -> Vec<f32> {
    let radius = fmath::ceilf(3.0 * sigma).max(1.0) as isize;
    let denom = 2.0 * sigma * sigma;
    let mut kernel: Vec<f32> = (-radius..=radius)
        .map(|i| fmath::expf(-((i * i) as f32) / denom))
        .collect();
    let sum: f32 = kernel.iter().sum();
    kernel.iter_mut().for_each(|k| *k /= sum);
    kernel
}

pub fn to_grayscale(img: &Image) -> Image {
    if img.channels == 1 {
        return img.clone();
    }
    let data = img
        .data
        .chunks_exact(3)
        .map(|px| quantize_u8(0.299 * px[0] as f32 + 0.587 * px[1] as f32 + 0.114 * px[2] as f32))
        .collect();
    Image {
        width: img.width,
        height: img.height,
        channels: 1,
        data,
    }
}

pub fn gaussian_blur(img: &Image, sigma: f32) -> Result<Image> {
    if sigma == 0.0 {
        return Ok(img.clone());
    }
    img.to_plane().gaussian_blur(sigma)?.to_image()
}

pub fn downsample(img: &Image, phi: f32) -> Result<Image> {
    if phi == 1.0 {
        return Ok(img.clone());
    }
    img.to_plane().downsample(phi)?.to_image()
}

/// Per-pixel gradient magnitude and orientation in `[0, 2pi)`.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientField {
    pub width: usize,
    pub height: usize,
    pub magnitude: Vec<f32>,
    pub orientation: Vec<f32>,
}

impl GradientField {
    pub fn magnitude_at(&self, x: usize, y: usize) -> f32 {
        self.magnitude[y * self.width + x]
    }

    pub fn orientation_at(&self, x: usize, y: usize) -> f32 {
        self.orientation[y * self.width + x]
    }
}

/// Central-difference gradient of a grayscale plane at an integer position,
/// with border replication. Returns `(dx, dy)`.
#[inline]
pub fn central_difference(plane: &Plane, x: isize, y: isize) -> (f32, f32) {
    let dx = (plane.at_clamped(x + 1, y, 0) - plane.at_clamped(x - 1, y, 0)) * 0.5;
    let dy = (plane.at_clamped(x, y + 1, 0) - plane.at_clamped(x, y - 1, 0)) * 0.5;
    (dx, dy)
}

/// Maps `atan2` output into `[0, 2pi)`.
#[inline]
pub fn wrap_angle(theta: f32) -> f32 {
    let two_pi = 2.0 * PI;
    let mut t = theta % two_pi;
    if t < 0.0 {
        t += two_pi;
    }
    if t >= two_pi {
        t = 0.0;
    }
    t
}

pub fn gradients(plane: &Plane) -> Result<GradientField> {
    if plane.channels != 1 {
        return Err(Error::InvalidImage(
            "gradients need a grayscale plane".into(),
        ));
    }
    let (w, h) = (plane.width, plane.height);
    let mut magnitude = Vec::with_capacity(w * h);
    let mut orientation = Vec::with_capacity(w * h);
    for y in 0..h as isize {
        for x in 0..w as isize {
            let (dx, dy) = central_difference(plane, x, y);
            magnitude.push(fmath::sqrtf(dx * dx + dy * dy));
            orientation.push(wrap_angle(fmath::atan2f(dy, dx)));
        }
    }
    Ok(GradientField {
        width: w,
        height: h,
        magnitude,
        orientation,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn rgb(w: u32, h: u32, px: [u8; 3]) -> Image {
        let data = (0..w * h).flat_map(|_| px).collect();
        Image::new(w, h, 3, data).unwrap()
    }

    #[test]
    fn image_rejects_bad_shapes() {
        assert!(Image::new(0, 4, 1, vec![]).is_err());
        assert!(Image::new(2, 2, 2, vec![0; 8]).is_err());
        assert!(Image::new(2, 2, 1, vec![0; 3]).is_err());
    }

    #[test]
    fn grayscale_fixed_points() {
        let white = to_grayscale(&rgb(2, 2, [255, 255, 255]));
        assert_eq!(white.channels(), 1);
        assert!(white.data().iter().all(|&v| v == 255));
        // round(0.299 * 255) = round(76.245)
        let red = to_grayscale(&rgb(1, 1, [255, 0, 0]));
        assert_eq!(red.data(), &[76]);
        let gray = Image::from_fn(3, 2, |x, y| (x * 10 + y) as u8).unwrap();
        assert_eq!(to_grayscale(&gray), gray);
    }

    #[test]
    fn blur_identity_and_constants() {
        let img = Image::from_fn(9, 7, |x, y| (x * 17 + y * 5) as u8).unwrap();
        assert_eq!(gaussian_blur(&img, 0.0).unwrap(), img);
        let flat = Image::filled(12, 9, 1, 93).unwrap();
        for sigma in [0.5, 1.0, 2.5, 6.0] {
            assert_eq!(gaussian_blur(&flat, sigma).unwrap(), flat);
        }
        assert!(gaussian_blur(&img, -1.0).is_err());
    }

    #[test]
    fn blur_impulse_peak_matches_kernel() {
        let mut plane = Plane::zeros(21, 21, 1);
        plane.set(10, 10, 0, 1.0);
        let blurred = plane.gaussian_blur(1.0).unwrap();
        // Direct evaluation of the normalised 2-D kernel at its centre.
        let norm: f64 = (-3..=3).map(|i: i32| (-(i * i) as f64 / 2.0).exp()).sum();
        let peak = 1.0 / (norm * norm);
        assert!((blurred.get(10, 10, 0) as f64 - peak).abs() < 1e-6);
    }

    /// Dense 2-D convolution with replicated borders, computed in f64.
    fn dense_blur(plane: &Plane, sigma: f32) -> Vec<f64> {
        let r = (3.0 * sigma as f64).ceil().max(1.0) as isize;
        let s2 = 2.0 * (sigma as f64) * (sigma as f64);
        let k1: Vec<f64> = (-r..=r).map(|i| (-((i * i) as f64) / s2).exp()).collect();
        let total: f64 = k1.iter().sum::<f64>().powi(2);
        let mut out = Vec::new();
        for y in 0..plane.height() as isize {
            for x in 0..plane.width() as isize {
                let mut acc = 0.0;
                for dy in -r..=r {
                    for dx in -r..=r {
                        let w = k1[(dy + r) as usize] * k1[(dx + r) as usize];
                        acc += w * plane.at_clamped(x + dx, y + dy, 0) as f64;
                    }
                }
                out.push(acc / total);
            }
        }
        out
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn blur_matches_dense_oracle(
            w in 1usize..40, h in 1usize..40, sigma in 0.3f32..4.0, seed in any::<u64>()
        ) {
            let mut state = seed | 1;
            let plane = Plane::from_fn(w, h, |_, _| {
                state ^= state << 13; state ^= state >> 7; state ^= state << 17;
                (state % 1000) as f32 / 1000.0
            });
            let fast = plane.gaussian_blur(sigma).unwrap();
            let oracle = dense_blur(&plane, sigma);
            for (a, b) in fast.data().iter().zip(&oracle) {
                prop_assert!((*a as f64 - b).abs() < 1e-6, "{} vs {}", a, b);
            }
        }

        #[test]
        fn downsample_composes(w in 8usize..300, h in 8usize..300, a in 1.0f32..3.0, b in 1.0f32..3.0) {
            let plane = Plane::zeros(w, h, 1);
            let twice = plane.downsample(a).unwrap().downsample(b).unwrap();
            let once = plane.downsample(a * b).unwrap();
            prop_assert!((twice.width() as isize - once.width() as isize).abs() <= 1);
            prop_assert!((twice.height() as isize - once.height() as isize).abs() <= 1);
        }

        #[test]
        fn gradients_are_shift_invariant(seed in any::<u32>(), shift in -50.0f32..50.0) {
            // Dyadic values keep the shifted differences exact.
            let plane = Plane::from_fn(12, 9, |x, y| ((x as u32 * 7 + y as u32 * 13 + seed) % 64) as f32 * 0.25);
            let shifted = plane.map(|v| v + shift.round());
            prop_assert_eq!(gradients(&plane).unwrap(), gradients(&shifted).unwrap());
        }
    }

    #[test]
    fn downsample_dims_and_identity() {
        let img = Image::from_fn(100, 200, |x, y| (x ^ y) as u8).unwrap();
        assert_eq!(downsample(&img, 1.0).unwrap(), img);
        let half = downsample(&img, 2.0).unwrap();
        assert_eq!((half.width(), half.height()), (50, 100));
        assert!(downsample(&img, 0.5).is_err());
    }

    #[test]
    fn downsample_checkerboard_averages() {
        let board = Image::new(2, 2, 1, vec![0, 255, 255, 0]).unwrap();
        let px = downsample(&board, 2.0).unwrap();
        assert_eq!((px.width(), px.height()), (1, 1));
        // 127.5 rounds half away from zero.
        assert!(px.data()[0] == 127 || px.data()[0] == 128);
        let plane = board.to_plane().downsample(2.0).unwrap();
        assert_eq!(plane.get(0, 0, 0), 127.5);
    }

    #[test]
    fn gradient_analytic_cases() {
        let flat = Plane::from_fn(8, 8, |_, _| 3.0);
        assert!(gradients(&flat)
            .unwrap()
            .magnitude
            .iter()
            .all(|&m| m == 0.0));

        let ramp_x = Plane::from_fn(10, 10, |x, _| x as f32);
        let g = gradients(&ramp_x).unwrap();
        for y in 0..10 {
            for x in 1..9 {
                assert_eq!(g.magnitude_at(x, y), 1.0);
                assert_eq!(g.orientation_at(x, y), 0.0);
            }
        }

        let ramp_y = Plane::from_fn(10, 10, |_, y| y as f32);
        let g = gradients(&ramp_y).unwrap();
        for y in 1..9 {
            for x in 0..10 {
                assert!((g.orientation_at(x, y) - PI / 2.0).abs() < 1e-6);
            }
        }
        assert!(g.orientation.iter().all(|&o| (0.0..2.0 * PI).contains(&o)));
    }

    #[test]
    fn gradients_reject_colour() {
        assert!(gradients(&Plane::zeros(4, 4, 3)).is_err());
    }
}
