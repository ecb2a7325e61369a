//! Difference-of-Gaussians keypoint detector.
//!
//! The input is converted to grayscale, downsized by `phi`, optionally
//! blurred, and pushed through a Gaussian scale space. Extrema of adjacent
//! DoG levels are refined to sub-pixel accuracy, filtered by contrast and
//! edge response, and given one or more dominant gradient orientations.
//! Coordinates are reported in the downsized frame.

use alloc::vec;
use alloc::vec::Vec;
use core::cmp::Ordering;
use core::f32::consts::PI;

use crate::error::{Error, Result};
use crate::fmath;
use crate::pixels::{central_difference, wrap_angle, Image, Plane};

/// Blur of the first scale-space level, in pixels of the octave.
pub const BASE_SIGMA: f32 = 1.6;
/// Blur assumed to be present in a freshly captured image.
const ASSUMED_BLUR: f32 = 0.5;
/// Pixels skipped at each octave border when searching for extrema.
const BORDER: usize = 5;
const REFINE_STEPS: usize = 5;
const ORIENTATION_BINS: usize = 36;
const PEAK_RATIO: f32 = 0.8;

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Keypoint {
    pub x: f32,
    pub y: f32,
    /// Sigma of the detection level, in pixels.
    pub scale: f32,
    /// Radians in `[0, 2pi)`.
    pub orientation: f32,
    /// Absolute DoG value at the refined extremum.
    pub response: f32,
}

impl Keypoint {
    pub fn new(x: f32, y: f32, scale: f32, orientation: f32, response: f32) -> Self {
        Keypoint {
            x,
            y,
            scale,
            orientation,
            response,
        }
    }

    /// Maps a keypoint from the downsized frame back to original pixels.
    pub fn to_original(&self, phi: f32) -> Keypoint {
        Keypoint {
            x: self.x * phi,
            y: self.y * phi,
            scale: self.scale * phi,
            ..*self
        }
    }

    /// Inverse of [`Keypoint::to_original`].
    pub fn to_downsized(&self, phi: f32) -> Keypoint {
        Keypoint {
            x: self.x / phi,
            y: self.y / phi,
            scale: self.scale / phi,
            ..*self
        }
    }
}

/// Canonical keypoint order: response descending, then `(y, x)`, then orientation.
pub fn keypoint_order(a: &Keypoint, b: &Keypoint) -> Ordering {
    b.response
        .total_cmp(&a.response)
        .then(a.y.total_cmp(&b.y))
        .then(a.x.total_cmp(&b.x))
        .then(a.orientation.total_cmp(&b.orientation))
        .then(a.scale.total_cmp(&b.scale))
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct DetectorConfig {
    /// Maximum number of keypoints returned.
    pub gamma: usize,
    /// Downsizing factor applied before detection.
    pub phi: f32,
    /// Blur applied after downsizing.
    pub sigma_blur: f32,
    pub octaves: usize,
    pub scales_per_octave: usize,
    /// Minimum `|DoG|` on `[0, 1]` intensities.
    pub contrast_threshold: f32,
    /// Maximum ratio of principal curvatures.
    pub edge_ratio_threshold: f32,
}

impl DetectorConfig {
    /// Settings used with the built-in gradient-histogram descriptor.
    pub fn builtin() -> Self {
        DetectorConfig {
            gamma: 500,
            phi: 2.0,
            sigma_blur: 3.0,
            octaves: 4,
            scales_per_octave: 3,
            contrast_threshold: 0.03,
            edge_ratio_threshold: 10.0,
        }
    }

    /// Settings used with externally learned descriptors (no pre-blur).
    pub fn learned() -> Self {
        DetectorConfig {
            sigma_blur: 0.0,
            ..Self::builtin()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.gamma < 1 {
            return Err(Error::param("gamma", "must be >= 1"));
        }
        if !(self.phi >= 1.0) || !self.phi.is_finite() {
            return Err(Error::param("phi", "must be >= 1"));
        }
        if !(self.sigma_blur >= 0.0) || !self.sigma_blur.is_finite() {
            return Err(Error::param("sigma_blur", "must be >= 0"));
        }
        if self.octaves < 1 || self.scales_per_octave < 1 {
            return Err(Error::param(
                "octaves",
                "octaves and scales_per_octave must be >= 1",
            ));
        }
        if !(self.contrast_threshold >= 0.0) {
            return Err(Error::param("contrast_threshold", "must be >= 0"));
        }
        if !(self.edge_ratio_threshold >= 1.0) {
            return Err(Error::param("edge_ratio_threshold", "must be >= 1"));
        }
        Ok(())
    }
}

impl Default for DetectorConfig {
    fn default() -> Self {
        Self::builtin()
    }
}

/// The two grayscale views of an image used downstream of detection.
#[derive(Debug, Clone)]
pub struct PreparedImage {
    /// Downsized, unblurred, intensities in `[0, 1]`.
    pub unblurred: Plane,
    /// `unblurred` after the configured pre-detection blur.
    pub blurred: Plane,
    pub phi: f32,
}

pub fn prepare(img: &Image, cfg: &DetectorConfig) -> Result<PreparedImage> {
    cfg.validate()?;
    let gray = img.to_plane().to_gray().map(|v| v / 255.0);
    let unblurred = gray.downsample(cfg.phi)?;
    let blurred = unblurred.gaussian_blur(cfg.sigma_blur)?;
    Ok(PreparedImage {
        unblurred,
        blurred,
        phi: cfg.phi,
    })
}

pub fn detect(img: &Image, cfg: &DetectorConfig) -> Result<Vec<Keypoint>> {
    let prepared = prepare(img, cfg)?;
    Ok(detect_prepared(&prepared, cfg))
}

/// Runs the scale-space search on an already prepared image.
pub fn detect_prepared(prepared: &PreparedImage, cfg: &DetectorConfig) -> Vec<Keypoint> {
    let mut keypoints = scale_space_keypoints(&prepared.blurred, cfg);
    keypoints.sort_by(keypoint_order);
    keypoints.dedup_by(|a, b| a == b);
    keypoints.truncate(cfg.gamma);
    keypoints
}

struct Octave {
    gauss: Vec<Plane>,
    dog: Vec<Plane>,
    /// Size of one octave pixel in downsized-frame pixels.
    step: f32,
}

fn min_octave_side() -> usize {
    2 * BORDER + 3
}

fn build_scale_space(base: &Plane, cfg: &DetectorConfig) -> Vec<Octave> {
    let s = cfg.scales_per_octave;
    let present = fmath::sqrtf(ASSUMED_BLUR * ASSUMED_BLUR + cfg.sigma_blur * cfg.sigma_blur);
    let first = if present < BASE_SIGMA {
        let extra = fmath::sqrtf(BASE_SIGMA * BASE_SIGMA - present * present);
        base.gaussian_blur(extra).expect("positive sigma")
    } else {
        base.clone()
    };
    let k = fmath::powf(2.0, 1.0 / s as f32);
    // Incremental blur taking level i-1 to level i (octave-relative sigmas).
    let increments: Vec<f32> = (1..s + 3)
        .map(|i| {
            let prev = BASE_SIGMA * fmath::powf(k, (i - 1) as f32);
            let cur = prev * k;
            fmath::sqrtf(cur * cur - prev * prev)
        })
        .collect();

    let mut octaves: Vec<Octave> = Vec::new();
    let mut seed = first;
    let mut step = 1.0f32;
    for _ in 0..cfg.octaves {
        if seed.width().min(seed.height()) < min_octave_side() {
            break;
        }
        let mut gauss = Vec::with_capacity(s + 3);
        gauss.push(seed);
        for inc in &increments {
            let next = gauss
                .last()
                .unwrap()
                .gaussian_blur(*inc)
                .expect("positive sigma");
            gauss.push(next);
        }
        let dog = gauss.windows(2).map(|pair| pair[1].sub(&pair[0])).collect();
        seed = gauss[s].decimate2();
        octaves.push(Octave { gauss, dog, step });
        step *= 2.0;
    }
    octaves
}

fn scale_space_keypoints(base: &Plane, cfg: &DetectorConfig) -> Vec<Keypoint> {
    let octaves = build_scale_space(base, cfg);
    let s = cfg.scales_per_octave;
    let prefilter = 0.5 * cfg.contrast_threshold;
    let mut out = Vec::new();
    for octave in &octaves {
        let (w, h) = (octave.dog[0].width(), octave.dog[0].height());
        for layer in 1..=s {
            let (below, cur, above) = (
                &octave.dog[layer - 1],
                &octave.dog[layer],
                &octave.dog[layer + 1],
            );
            for y in BORDER..h - BORDER {
                for x in BORDER..w - BORDER {
                    let v = cur.get(x, y, 0);
                    if fmath::fabsf(v) <= prefilter || !is_extremum(below, cur, above, x, y, v) {
                        continue;
                    }
                    if let Some(candidate) = refine(octave, x, y, layer, cfg) {
                        assign_orientations(octave, &candidate, s, &mut out);
                    }
                }
            }
        }
    }
    let (bw, bh) = (base.width() as f32, base.height() as f32);
    out.retain(|kp| kp.x >= 0.0 && kp.y >= 0.0 && kp.x < bw && kp.y < bh);
    out
}

fn is_extremum(below: &Plane, cur: &Plane, above: &Plane, x: usize, y: usize, v: f32) -> bool {
    let is_max = v > 0.0;
    for plane in [below, cur, above] {
        for dy in 0..3 {
            for dx in 0..3 {
                let n = plane.get(x + dx - 1, y + dy - 1, 0);
                if is_max && n > v || !is_max && n < v {
                    return false;
                }
            }
        }
    }
    true
}

struct Candidate {
    /// Integer octave position and layer after refinement.
    x: usize,
    y: usize,
    layer: usize,
    offset: [f32; 3],
    response: f32,
}

fn refine(
    octave: &Octave,
    x0: usize,
    y0: usize,
    layer0: usize,
    cfg: &DetectorConfig,
) -> Option<Candidate> {
    let dog = &octave.dog;
    let s = cfg.scales_per_octave;
    let (w, h) = (dog[0].width(), dog[0].height());
    let (mut x, mut y, mut layer) = (x0 as isize, y0 as isize, layer0 as isize);
    let mut offset = [0.0f32; 3];
    let mut converged = false;
    for _ in 0..REFINE_STEPS {
        let (grad, hess) = derivatives(dog, x as usize, y as usize, layer as usize);
        offset = solve3(&hess, &grad)?;
        if offset.iter().all(|o| fmath::fabsf(*o) < 0.5) {
            converged = true;
            break;
        }
        if offset.iter().any(|o| fmath::fabsf(*o) > 1e6) {
            return None;
        }
        x += fmath::roundf(offset[0]) as isize;
        y += fmath::roundf(offset[1]) as isize;
        layer += fmath::roundf(offset[2]) as isize;
        if layer < 1
            || layer > s as isize
            || x < BORDER as isize
            || y < BORDER as isize
            || x >= (w - BORDER) as isize
            || y >= (h - BORDER) as isize
        {
            return None;
        }
    }
    if !converged {
        return None;
    }
    let (x, y, layer) = (x as usize, y as usize, layer as usize);
    let (grad, hess) = derivatives(dog, x, y, layer);
    let value = dog[layer].get(x, y, 0);
    let contrast = value + 0.5 * (grad[0] * offset[0] + grad[1] * offset[1] + grad[2] * offset[2]);
    if fmath::fabsf(contrast) < cfg.contrast_threshold {
        return None;
    }
    let (dxx, dyy, dxy) = (hess[0][0], hess[1][1], hess[0][1]);
    let trace = dxx + dyy;
    let det = dxx * dyy - dxy * dxy;
    let r = cfg.edge_ratio_threshold;
    if det <= 0.0 || trace * trace * r >= (r + 1.0) * (r + 1.0) * det {
        return None;
    }
    Some(Candidate {
        x,
        y,
        layer,
        offset,
        response: fmath::fabsf(contrast),
    })
}

/// Gradient and Hessian of the DoG stack in `(x, y, layer)`.
fn derivatives(dog: &[Plane], x: usize, y: usize, l: usize) -> ([f32; 3], [[f32; 3]; 3]) {
    let at = |dl: isize, dy: isize, dx: isize| {
        dog[(l as isize + dl) as usize].get(
            (x as isize + dx) as usize,
            (y as isize + dy) as usize,
            0,
        )
    };
    let v2 = 2.0 * at(0, 0, 0);
    let dx = 0.5 * (at(0, 0, 1) - at(0, 0, -1));
    let dy = 0.5 * (at(0, 1, 0) - at(0, -1, 0));
    let ds = 0.5 * (at(1, 0, 0) - at(-1, 0, 0));
    let dxx = at(0, 0, 1) + at(0, 0, -1) - v2;
    let dyy = at(0, 1, 0) + at(0, -1, 0) - v2;
    let dss = at(1, 0, 0) + at(-1, 0, 0) - v2;
    let dxy = 0.25 * (at(0, 1, 1) - at(0, 1, -1) - at(0, -1, 1) + at(0, -1, -1));
    let dxs = 0.25 * (at(1, 0, 1) - at(1, 0, -1) - at(-1, 0, 1) + at(-1, 0, -1));
    let dys = 0.25 * (at(1, 1, 0) - at(1, -1, 0) - at(-1, 1, 0) + at(-1, -1, 0));
    (
        [dx, dy, ds],
        [[dxx, dxy, dxs], [dxy, dyy, dys], [dxs, dys, dss]],
    )
}

/// Solves `hess * offset = -grad` by Cramer's rule.
fn solve3(m: &[[f32; 3]; 3], g: &[f32; 3]) -> Option<[f32; 3]> {
    let det3 = |a: &[[f32; 3]; 3]| {
        a[0][0] * (a[1][1] * a[2][2] - a[1][2] * a[2][1])
            - a[0][1] * (a[1][0] * a[2][2] - a[1][2] * a[2][0])
            + a[0][2] * (a[1][0] * a[2][1] - a[1][1] * a[2][0])
    };
    let det = det3(m);
    if det == 0.0 || !det.is_finite() {
        return None;
    }
    let rhs = [-g[0], -g[1], -g[2]];
    let mut out = [0.0; 3];
    for (col, slot) in out.iter_mut().enumerate() {
        let mut a = *m;
        for row in 0..3 {
            a[row][col] = rhs[row];
        }
        *slot = det3(&a) / det;
    }
    Some(out)
}

fn assign_orientations(octave: &Octave, c: &Candidate, s: usize, out: &mut Vec<Keypoint>) {
    let scale_oct = BASE_SIGMA * fmath::powf(2.0, (c.layer as f32 + c.offset[2]) / s as f32);
    let xo = c.x as f32 + c.offset[0];
    let yo = c.y as f32 + c.offset[1];
    let plane = &octave.gauss[c.layer];
    let hist = orientation_histogram(
        plane,
        fmath::roundf(xo) as isize,
        fmath::roundf(yo) as isize,
        scale_oct,
    );
    let template = Keypoint {
        x: xo * octave.step,
        y: yo * octave.step,
        scale: scale_oct * octave.step,
        orientation: 0.0,
        response: c.response,
    };
    for orientation in dominant_orientations(&hist) {
        out.push(Keypoint {
            orientation,
            ..template
        });
    }
}

/// Smoothed 36-bin histogram of gradient orientations in a disc of radius
/// `3 * scale`, Gaussian-weighted with sigma `1.5 * scale`.
fn orientation_histogram(
    plane: &Plane,
    cx: isize,
    cy: isize,
    scale: f32,
) -> [f32; ORIENTATION_BINS] {
    let radius = fmath::roundf(3.0 * scale).max(1.0) as isize;
    let sigma_w = 1.5 * scale;
    let denom = 2.0 * sigma_w * sigma_w;
    let mut raw = [0.0f32; ORIENTATION_BINS];
    let bins_per_radian = ORIENTATION_BINS as f32 / (2.0 * PI);
    for dy in -radius..=radius {
        for dx in -radius..=radius {
            let d2 = (dx * dx + dy * dy) as f32;
            if d2 > (radius * radius) as f32 {
                continue;
            }
            let (gx, gy) = central_difference(plane, cx + dx, cy + dy);
            let mag = fmath::sqrtf(gx * gx + gy * gy);
            if mag == 0.0 {
                continue;
            }
            let theta = wrap_angle(fmath::atan2f(gy, gx));
            let bin = fmath::roundf(theta * bins_per_radian) as usize % ORIENTATION_BINS;
            raw[bin] += fmath::expf(-d2 / denom) * mag;
        }
    }
    let n = ORIENTATION_BINS;
    let mut smooth = [0.0f32; ORIENTATION_BINS];
    for (i, slot) in smooth.iter_mut().enumerate() {
        let at = |o: isize| raw[((i as isize + o).rem_euclid(n as isize)) as usize];
        *slot = (at(-2) + at(2)) / 16.0 + (at(-1) + at(1)) * 4.0 / 16.0 + at(0) * 6.0 / 16.0;
    }
    smooth
}

fn dominant_orientations(hist: &[f32; ORIENTATION_BINS]) -> Vec<f32> {
    let n = ORIENTATION_BINS;
    let max = hist.iter().copied().fold(0.0f32, f32::max);
    if max <= 0.0 {
        return vec![0.0];
    }
    let mut peaks = Vec::new();
    for i in 0..n {
        let left = hist[(i + n - 1) % n];
        let right = hist[(i + 1) % n];
        let c = hist[i];
        if c > left && c > right && c >= PEAK_RATIO * max {
            let denom = left - 2.0 * c + right;
            let shift = if denom != 0.0 {
                0.5 * (left - right) / denom
            } else {
                0.0
            };
            let bin = i as f32 + shift;
            peaks.push(wrap_angle(bin * 2.0 * PI / n as f32));
        }
    }
    if peaks.is_empty() {
        let first_max = hist.iter().position(|&v| v == max).unwrap_or(0);
        peaks.push(first_max as f32 * 2.0 * PI / n as f32);
    }
    peaks
}

/// Regular grid of keypoints, one per `spacing`-sized cell, for images where
/// detection is unavailable or degenerate.
pub fn grid_fallback(img: &Image, spacing: u32) -> Result<Vec<Keypoint>> {
    if spacing < 8 {
        return Err(Error::param("spacing", "must be >= 8"));
    }
    let axis = |len: u32| -> Vec<f32> {
        let cells = len / spacing;
        if cells == 0 {
            vec![len as f32 / 2.0]
        } else {
            (0..cells)
                .map(|i| (i * spacing + spacing / 2) as f32)
                .collect()
        }
    };
    let xs = axis(img.width());
    let ys = axis(img.height());
    let scale = spacing as f32 / 4.0;
    Ok(ys
        .iter()
        .flat_map(|&y| {
            xs.iter()
                .map(move |&x| Keypoint::new(x, y, scale, 0.0, 0.0))
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn blob(size: u32, cx: f32, cy: f32, sigma: f32) -> Image {
        Image::from_fn(size, size, |x, y| {
            let d2 = (x as f32 - cx).powi(2) + (y as f32 - cy).powi(2);
            (255.0 * (-d2 / (2.0 * sigma * sigma)).exp()).round() as u8
        })
        .unwrap()
    }

    fn unit_cfg() -> DetectorConfig {
        DetectorConfig {
            phi: 1.0,
            sigma_blur: 0.0,
            ..DetectorConfig::builtin()
        }
    }

    fn noise(w: u32, h: u32, seed: u64) -> Image {
        let mut state = seed | 1;
        let raw = Plane::from_fn(w as usize, h as usize, |_, _| {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            (state % 256) as f32
        });
        raw.gaussian_blur(1.5)
            .unwrap()
            .map(|v| (v - 128.0) * 4.0 + 128.0)
            .to_image()
            .unwrap()
    }

    /// Scale of the DoG level whose normalised response to a Gaussian blob
    /// peaks: evaluated in closed form as the blob sigma itself.
    fn blob_oracle_scale(sigma: f32) -> f32 {
        // D(t) ~ (k-1) t^2 laplacian(G_{sqrt(sigma^2+t^2)}) at the centre is
        // proportional to t^2 / (sigma^2 + t^2)^2, maximised at t = sigma.
        let mut best = (0.0f32, 0.0f32);
        let mut t = 0.5f32;
        while t < 20.0 {
            let v = t * t / (sigma * sigma + t * t).powi(2);
            if v > best.1 {
                best = (t, v);
            }
            t += 0.01;
        }
        best.0
    }

    #[test]
    fn flat_image_has_no_keypoints() {
        let img = Image::filled(96, 96, 1, 120).unwrap();
        assert!(detect(&img, &DetectorConfig::builtin()).unwrap().is_empty());
        assert!(detect(&img, &unit_cfg()).unwrap().is_empty());
    }

    #[test]
    fn tiny_image_yields_empty_list() {
        let img = Image::from_fn(6, 6, |x, y| (x * 40 + y) as u8).unwrap();
        assert!(detect(&img, &unit_cfg()).unwrap().is_empty());
    }

    #[test]
    fn single_blob_found_at_centre() {
        let img = blob(128, 64.0, 64.0, 4.0);
        let kps = detect(&img, &unit_cfg()).unwrap();
        assert!(!kps.is_empty());
        // Orientation duplicates share one location.
        let first = kps[0];
        for kp in &kps {
            assert_eq!((kp.x, kp.y, kp.scale), (first.x, first.y, first.scale));
        }
        assert!(
            (first.x - 64.0).abs() <= 1.0 && (first.y - 64.0).abs() <= 1.0,
            "{first:?}"
        );
        let expected = blob_oracle_scale(4.0);
        assert!((expected - 4.0).abs() < 0.05);
        assert!(
            first.scale > expected / 2.0 && first.scale < expected * 2.0,
            "{first:?}"
        );
    }

    #[test]
    fn blob_detection_is_translation_equivariant() {
        let a = detect(&blob(128, 50.0, 56.0, 4.0), &unit_cfg()).unwrap();
        let b = detect(&blob(128, 67.0, 44.0, 4.0), &unit_cfg()).unwrap();
        assert!(!a.is_empty() && !b.is_empty());
        assert!((b[0].x - a[0].x - 17.0).abs() <= 1.0);
        assert!((b[0].y - a[0].y + 12.0).abs() <= 1.0);
    }

    #[test]
    fn cap_and_order_on_texture() {
        let img = noise(400, 400, 7);
        let cfg = DetectorConfig {
            gamma: 500,
            ..unit_cfg()
        };
        let kps = detect(&img, &cfg).unwrap();
        assert!(kps.len() <= 500);
        assert!(kps.windows(2).all(|p| p[0].response >= p[1].response));
        for kp in &kps {
            assert!(kp.x >= 0.0 && kp.x < 400.0 && kp.y >= 0.0 && kp.y < 400.0);
            assert!(kp.scale > 0.0 && kp.response >= 0.0);
            assert!((0.0..2.0 * PI).contains(&kp.orientation));
        }
        // The capped set is exactly the best prefix of the uncapped set.
        let all = detect(
            &img,
            &DetectorConfig {
                gamma: usize::MAX,
                ..cfg
            },
        )
        .unwrap();
        assert!(all.len() > 500);
        assert_eq!(&all[..500], &kps[..]);
        // Determinism.
        assert_eq!(kps, detect(&img, &cfg).unwrap());
    }

    #[test]
    fn downsized_coordinates_map_back() {
        let img = blob(128, 64.0, 64.0, 6.0);
        let cfg = DetectorConfig {
            phi: 2.0,
            sigma_blur: 0.0,
            ..DetectorConfig::builtin()
        };
        let kps = detect(&img, &cfg).unwrap();
        assert!(!kps.is_empty());
        let orig = kps[0].to_original(cfg.phi);
        assert!(
            (orig.x - 64.0).abs() <= 2.0 && (orig.y - 64.0).abs() <= 2.0,
            "{orig:?}"
        );
    }

    #[test]
    fn invalid_configs_rejected() {
        let img = Image::filled(32, 32, 1, 0).unwrap();
        for cfg in [
            DetectorConfig {
                gamma: 0,
                ..DetectorConfig::builtin()
            },
            DetectorConfig {
                phi: 0.5,
                ..DetectorConfig::builtin()
            },
            DetectorConfig {
                sigma_blur: -1.0,
                ..DetectorConfig::builtin()
            },
        ] {
            assert!(detect(&img, &cfg).is_err());
        }
    }

    #[test]
    fn grid_fallback_layouts() {
        let img = Image::filled(64, 64, 1, 0).unwrap();
        let kps = grid_fallback(&img, 32).unwrap();
        let pos: Vec<(f32, f32)> = kps.iter().map(|k| (k.x, k.y)).collect();
        assert_eq!(
            pos,
            vec![(16.0, 16.0), (48.0, 16.0), (16.0, 48.0), (48.0, 48.0)]
        );
        assert!(kps
            .iter()
            .all(|k| k.orientation == 0.0 && k.scale == 8.0 && k.response == 0.0));

        let small = Image::filled(20, 12, 1, 0).unwrap();
        let kps = grid_fallback(&small, 32).unwrap();
        assert_eq!(kps.len(), 1);
        assert_eq!((kps[0].x, kps[0].y), (10.0, 6.0));

        let wide = Image::filled(128, 64, 1, 0).unwrap();
        assert_eq!(grid_fallback(&wide, 32).unwrap().len(), 8);
        assert!(grid_fallback(&wide, 4).is_err());
    }
}
