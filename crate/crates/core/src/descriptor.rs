//! 128-d local descriptors.
//!
//! Two sources are supported: the built-in gradient-histogram descriptor
//! (4x4 spatial cells of 8 orientation bins, rotated to the keypoint
//! orientation) and externally computed vectors looked up by
//! `(image_id, keypoint index)`. Both produce unit vectors; a window without
//! any gradient yields an all-zero vector flagged as degenerate.

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::f32::consts::PI;

use crate::detector::{Keypoint, PreparedImage, BASE_SIGMA};
use crate::error::{Error, Result};
use crate::fmath;
use crate::pixels::{central_difference, wrap_angle, Image, Plane};

pub const DESCRIPTOR_DIM: usize = 128;
/// Side of the square patches handed to learned descriptors.
pub const PATCH_SIZE: u32 = 64;
/// Tolerance of the unit-norm invariant.
pub const NORM_TOLERANCE: f32 = 1e-5;

const SPATIAL_CELLS: usize = 4;
const ORIENTATION_BINS: usize = 8;
const BIN_CLAMP: f32 = 0.2;

#[derive(Debug, Clone, PartialEq)]
pub struct Descriptor {
    values: [f32; DESCRIPTOR_DIM],
    degenerate: bool,
}

impl Descriptor {
    pub fn degenerate() -> Self {
        Descriptor {
            values: [0.0; DESCRIPTOR_DIM],
            degenerate: true,
        }
    }

    /// Normalises `values`; an all-zero input becomes the degenerate descriptor.
    pub fn normalized(mut values: [f32; DESCRIPTOR_DIM]) -> Self {
        let norm = norm(&values);
        if !(norm > 1e-12) || !norm.is_finite() {
            return Descriptor::degenerate();
        }
        values.iter_mut().for_each(|v| *v /= norm);
        Descriptor {
            values,
            degenerate: false,
        }
    }

    /// Accepts a vector already on the unit sphere, bit for bit.
    pub fn from_unit(values: [f32; DESCRIPTOR_DIM]) -> Result<Self> {
        let n = norm(&values);
        if !((n - 1.0).abs() <= NORM_TOLERANCE) {
            return Err(Error::param(
                "descriptor",
                alloc::format!("norm {n} is not 1"),
            ));
        }
        Ok(Descriptor {
            values,
            degenerate: false,
        })
    }

    pub fn values(&self) -> &[f32; DESCRIPTOR_DIM] {
        &self.values
    }

    pub fn is_degenerate(&self) -> bool {
        self.degenerate
    }

    pub fn norm(&self) -> f32 {
        norm(&self.values)
    }

    /// Squared euclidean distance, see [`l2_sq`].
    #[inline]
    pub fn distance_sq(&self, other: &Descriptor) -> f32 {
        l2_sq(&self.values, &other.values)
    }
}

fn norm(values: &[f32; DESCRIPTOR_DIM]) -> f32 {
    let sum: f64 = values.iter().map(|&v| (v as f64) * (v as f64)).sum();
    fmath::sqrt(sum) as f32
}

/// Squared euclidean distance between two descriptors.
///
/// Eight lane accumulators combined in a fixed order: the result is
/// deterministic and identical for every SIMD path.
#[inline(always)]
pub fn l2_sq(a: &[f32; DESCRIPTOR_DIM], b: &[f32; DESCRIPTOR_DIM]) -> f32 {
    crate::simd::l2_sq(a, b)
}

/// Nearest and second nearest of `q` among `candidates` as
/// `(position, d1, d2)`; ties keep the earlier candidate and a missing
/// second neighbour is `INFINITY`.
pub fn nearest_two(
    q: &[f32; DESCRIPTOR_DIM],
    candidates: &[&[f32; DESCRIPTOR_DIM]],
) -> (usize, f32, f32) {
    crate::simd::nearest_two(q, candidates)
}

/// [`nearest_two`] for a batch of queries; faster than one call per query.
pub fn nearest_two_batch(
    queries: &[&[f32; DESCRIPTOR_DIM]],
    candidates: &[&[f32; DESCRIPTOR_DIM]],
) -> Vec<(usize, f32, f32)> {
    crate::simd::nearest_two_batch(queries, candidates)
}

/// Nearest of `q` among `candidates` as `(position, distance)`, lowest
/// position on ties.
pub fn nearest_one(
    q: &[f32; DESCRIPTOR_DIM],
    candidates: &[[f32; DESCRIPTOR_DIM]],
) -> (usize, f32) {
    crate::simd::nearest_one(q, candidates)
}

/// Built-in descriptor over a pyramid of the blurred detection image.
///
/// Level `j` holds the image at resolution `2^-j`, blurred to
/// [`BASE_SIGMA`] in its own pixels; a keypoint of scale `s` is described on
/// the level where `s / 2^j` falls in `[BASE_SIGMA, 2 BASE_SIGMA)`.
#[derive(Debug, Clone)]
pub struct BuiltinDescriber {
    levels: Vec<Plane>,
}

impl BuiltinDescriber {
    pub fn new(blurred: &Plane) -> Self {
        let gray = blurred.to_gray();
        let mut levels = alloc::vec![gray];
        let step = BASE_SIGMA * fmath::sqrtf(3.0);
        while levels.len() < 8 {
            let last = levels.last().unwrap();
            if last.width().min(last.height()) < 32 {
                break;
            }
            let next = last
                .gaussian_blur(step)
                .expect("positive sigma")
                .decimate2();
            levels.push(next);
        }
        BuiltinDescriber { levels }
    }

    pub fn describe(&self, kp: &Keypoint) -> Descriptor {
        let ratio = (kp.scale / BASE_SIGMA).max(1.0);
        let level = (fmath::floorf(fmath::log2f(ratio)) as usize).min(self.levels.len() - 1);
        let factor = (1u32 << level) as f32;
        let plane = &self.levels[level];
        let cx = kp.x / factor;
        let cy = kp.y / factor;
        let scale = kp.scale / factor;

        let window = 16.0 * scale / BASE_SIGMA;
        let cell = window / SPATIAL_CELLS as f32;
        let half = window / 2.0;
        let weight_denom = 2.0 * half * half;
        let reach = fmath::ceilf(half * core::f32::consts::SQRT_2 + 1.0) as isize;
        let (sin_t, cos_t) = (fmath::sinf(kp.orientation), fmath::cosf(kp.orientation));
        let bins_per_radian = ORIENTATION_BINS as f32 / (2.0 * PI);

        let mut hist = [0.0f32; DESCRIPTOR_DIM];
        let x0 = fmath::roundf(cx) as isize;
        let y0 = fmath::roundf(cy) as isize;
        for iy in y0 - reach..=y0 + reach {
            for ix in x0 - reach..=x0 + reach {
                let dx = ix as f32 - cx;
                let dy = iy as f32 - cy;
                let u = (cos_t * dx + sin_t * dy) / cell;
                let v = (-sin_t * dx + cos_t * dy) / cell;
                let bu = u + SPATIAL_CELLS as f32 / 2.0 - 0.5;
                let bv = v + SPATIAL_CELLS as f32 / 2.0 - 0.5;
                if bu <= -1.0
                    || bu >= SPATIAL_CELLS as f32
                    || bv <= -1.0
                    || bv >= SPATIAL_CELLS as f32
                {
                    continue;
                }
                let (gx, gy) = central_difference(plane, ix, iy);
                let mag = fmath::sqrtf(gx * gx + gy * gy);
                if mag == 0.0 {
                    continue;
                }
                let rel = wrap_angle(fmath::atan2f(gy, gx) - kp.orientation);
                let bo = rel * bins_per_radian;
                let w = mag * fmath::expf(-(dx * dx + dy * dy) / weight_denom);
                accumulate_trilinear(&mut hist, bu, bv, bo, w);
            }
        }
        finish(hist)
    }
}

fn accumulate_trilinear(hist: &mut [f32; DESCRIPTOR_DIM], bu: f32, bv: f32, bo: f32, w: f32) {
    let u0 = fmath::floorf(bu);
    let v0 = fmath::floorf(bv);
    let o0 = fmath::floorf(bo);
    let (fu, fv, fo) = (bu - u0, bv - v0, bo - o0);
    let (u0, v0, o0) = (u0 as isize, v0 as isize, o0 as isize);
    for (dv, wv) in [(0, 1.0 - fv), (1, fv)] {
        let vi = v0 + dv;
        if vi < 0 || vi >= SPATIAL_CELLS as isize {
            continue;
        }
        for (du, wu) in [(0, 1.0 - fu), (1, fu)] {
            let ui = u0 + du;
            if ui < 0 || ui >= SPATIAL_CELLS as isize {
                continue;
            }
            for (d_o, wo) in [(0, 1.0 - fo), (1, fo)] {
                let oi = (o0 + d_o).rem_euclid(ORIENTATION_BINS as isize) as usize;
                let idx = (vi as usize * SPATIAL_CELLS + ui as usize) * ORIENTATION_BINS + oi;
                hist[idx] += w * wv * wu * wo;
            }
        }
    }
}

/// Normalise, clamp large bins, renormalise.
fn finish(hist: [f32; DESCRIPTOR_DIM]) -> Descriptor {
    let first = Descriptor::normalized(hist);
    if first.is_degenerate() {
        return first;
    }
    let mut clamped = first.values;
    clamped.iter_mut().for_each(|v| *v = v.min(BIN_CLAMP));
    Descriptor::normalized(clamped)
}

/// Describes a single keypoint; builds the pyramid each call, so prefer
/// [`BuiltinDescriber`] for many keypoints on one image.
pub fn describe_builtin(img_blurred: &Plane, kp: &Keypoint) -> Descriptor {
    BuiltinDescriber::new(img_blurred).describe(kp)
}

/// 64x64 crop centred on a keypoint, in the frame of the image it was cut from.
#[derive(Debug, Clone, PartialEq)]
pub struct Patch {
    pub pixels: Image,
    pub source_keypoint: Keypoint,
    pub source_image_id: String,
}

/// Axis-aligned crop centred at `(round(x), round(y))`, border replicated.
/// The keypoint's scale and orientation are ignored.
pub fn crop_patch(img_unblurred: &Image, kp: &Keypoint, image_id: &str) -> Patch {
    let size = PATCH_SIZE as isize;
    let cx = fmath::roundf(kp.x) as isize;
    let cy = fmath::roundf(kp.y) as isize;
    let (w, h, ch) = (
        img_unblurred.width() as isize,
        img_unblurred.height() as isize,
        img_unblurred.channels(),
    );
    let mut data = Vec::with_capacity((size * size) as usize * ch as usize);
    for y in cy - size / 2..cy + size / 2 {
        let sy = y.clamp(0, h - 1) as u32;
        for x in cx - size / 2..cx + size / 2 {
            let sx = x.clamp(0, w - 1) as u32;
            for c in 0..ch {
                data.push(img_unblurred.get(sx, sy, c));
            }
        }
    }
    Patch {
        pixels: Image::new(PATCH_SIZE, PATCH_SIZE, ch, data).expect("patch shape"),
        source_keypoint: *kp,
        source_image_id: image_id.to_string(),
    }
}

/// Externally computed descriptors keyed by `(image_id, keypoint index)`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ExternalDescriptors {
    map: BTreeMap<(String, u32), Descriptor>,
}

impl ExternalDescriptors {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, image_id: impl Into<String>, index: u32, descriptor: Descriptor) {
        self.map.insert((image_id.into(), index), descriptor);
    }

    pub fn get(&self, image_id: &str, index: u32) -> Option<&Descriptor> {
        // BTreeMap lookups need an owned key of the same type.
        self.map.get(&(image_id.to_string(), index))
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    /// Records in `(image_id, index)` order.
    pub fn iter(&self) -> impl Iterator<Item = (&str, u32, &Descriptor)> {
        self.map.iter().map(|((id, idx), d)| (id.as_str(), *idx, d))
    }
}

/// Validates a raw vector read from a descriptor file. Vectors within
/// `1e-3` of unit norm are accepted and snapped onto the sphere when they
/// miss it by more than [`NORM_TOLERANCE`].
pub fn validate_external(record: usize, values: [f32; DESCRIPTOR_DIM]) -> Result<Descriptor> {
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::DescriptorValidation {
            record,
            reason: "non-finite component".into(),
        });
    }
    let n = norm(&values);
    if (n - 1.0).abs() > 1e-3 {
        return Err(Error::DescriptorValidation {
            record,
            reason: alloc::format!("norm {n} is not 1"),
        });
    }
    if (n - 1.0).abs() <= NORM_TOLERANCE {
        Ok(Descriptor {
            values,
            degenerate: false,
        })
    } else {
        Ok(Descriptor::normalized(values))
    }
}

/// Where descriptors come from during signature extraction.
#[derive(Debug, Clone)]
pub enum DescriptorProvider {
    Builtin,
    External(ExternalDescriptors),
}

impl DescriptorProvider {
    /// One descriptor per keypoint, in keypoint order.
    pub fn describe_all(
        &self,
        image_id: &str,
        prepared: &PreparedImage,
        keypoints: &[Keypoint],
    ) -> Result<Vec<Descriptor>> {
        match self {
            DescriptorProvider::Builtin => {
                let describer = BuiltinDescriber::new(&prepared.blurred);
                Ok(keypoints.iter().map(|kp| describer.describe(kp)).collect())
            }
            DescriptorProvider::External(table) => (0..keypoints.len() as u32)
                .map(|index| {
                    table
                        .get(image_id, index)
                        .cloned()
                        .ok_or_else(|| Error::MissingDescriptor {
                            image_id: image_id.to_string(),
                            index,
                        })
                })
                .collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Smooth pseudo-random texture in `[0, 1]`.
    fn texture(size: usize, seed: u64) -> Plane {
        let mut state = seed | 1;
        let raw = Plane::from_fn(size, size, |_, _| {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            (state % 1024) as f32 / 1024.0
        });
        raw.gaussian_blur(1.2).unwrap()
    }

    /// Rotates a square plane by 90 degrees: `(x, y) -> (n - 1 - y, x)`.
    fn rotate90(p: &Plane) -> Plane {
        let n = p.width();
        let mut out = Plane::zeros(n, n, 1);
        for y in 0..n {
            for x in 0..n {
                out.set(n - 1 - y, x, 0, p.get(x, y, 0));
            }
        }
        out
    }

    fn cosine(a: &Descriptor, b: &Descriptor) -> f32 {
        a.values().iter().zip(b.values()).map(|(x, y)| x * y).sum()
    }

    #[test]
    fn flat_window_is_degenerate() {
        let flat = Plane::from_fn(64, 64, |_, _| 0.4);
        let d = describe_builtin(&flat, &Keypoint::new(32.0, 32.0, 2.0, 0.0, 1.0));
        assert!(d.is_degenerate());
        assert!(d.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn rotated_patch_gives_similar_descriptor() {
        let tex = texture(65, 3);
        let rot = rotate90(&tex);
        let kp = Keypoint::new(32.0, 32.0, 2.0, 0.7, 1.0);
        let kp_rot = Keypoint::new(32.0, 32.0, 2.0, wrap_angle(0.7 + PI / 2.0), 1.0);
        let a = describe_builtin(&tex, &kp);
        let b = describe_builtin(&rot, &kp_rot);
        assert!(cosine(&a, &b) >= 0.9, "cosine {}", cosine(&a, &b));
    }

    #[test]
    fn brightness_scaling_is_absorbed() {
        let tex = texture(96, 11).map(|v| 40.0 + 120.0 * v);
        let brighter = tex.map(|v| (v * 1.3).min(255.0));
        let describer_a = BuiltinDescriber::new(&tex);
        let describer_b = BuiltinDescriber::new(&brighter);
        for (i, &(x, y)) in [(30.0, 30.0), (48.0, 50.0), (70.0, 40.0)]
            .iter()
            .enumerate()
        {
            let kp = Keypoint::new(x, y, 1.6 + i as f32, 0.3 * i as f32, 1.0);
            let d = describer_a
                .describe(&kp)
                .distance_sq(&describer_b.describe(&kp))
                .sqrt();
            assert!(d <= 0.3, "distance {d}");
        }
    }

    #[test]
    fn off_image_window_uses_replicated_border() {
        let tex = texture(40, 5);
        let d = describe_builtin(&tex, &Keypoint::new(1.0, 2.0, 3.0, 1.0, 1.0));
        assert!(!d.is_degenerate());
        assert!((d.norm() - 1.0).abs() <= NORM_TOLERANCE);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn builtin_output_is_unit_or_degenerate(
            seed in any::<u64>(), x in 0.0f32..48.0, y in 0.0f32..48.0,
            scale in 1.0f32..12.0, ori in 0.0f32..6.28
        ) {
            let tex = texture(48, seed);
            let describer = BuiltinDescriber::new(&tex);
            let d = describer.describe(&Keypoint::new(x, y, scale, ori, 1.0));
            prop_assert!(d.is_degenerate() || (d.norm() - 1.0).abs() <= NORM_TOLERANCE);
            prop_assert_eq!(d.clone(), describer.describe(&Keypoint::new(x, y, scale, ori, 1.0)));
        }

        #[test]
        fn l2_sq_matches_naive_sum(a in proptest::array::uniform32(-1.0f32..1.0), b in proptest::array::uniform32(-1.0f32..1.0)) {
            let mut va = [0.0f32; DESCRIPTOR_DIM];
            let mut vb = [0.0f32; DESCRIPTOR_DIM];
            for i in 0..DESCRIPTOR_DIM {
                va[i] = a[i % 32] * (1.0 + i as f32 / 200.0);
                vb[i] = b[(i * 7) % 32];
            }
            let naive: f64 = va.iter().zip(&vb).map(|(x, y)| ((x - y) as f64).powi(2)).sum();
            prop_assert!((l2_sq(&va, &vb) as f64 - naive).abs() <= 1e-5 * naive.max(1.0));
        }
    }

    #[test]
    fn crop_at_centre_matches_subimage() {
        let img = Image::from_fn(128, 128, |x, y| ((x * 3 + y * 7) % 251) as u8).unwrap();
        let patch = crop_patch(&img, &Keypoint::new(64.0, 64.0, 2.0, 1.0, 1.0), "a");
        assert_eq!((patch.pixels.width(), patch.pixels.height()), (64, 64));
        for y in 0..64 {
            for x in 0..64 {
                assert_eq!(patch.pixels.get(x, y, 0), img.get(x + 32, y + 32, 0));
            }
        }
        assert_eq!(patch.source_image_id, "a");
    }

    #[test]
    fn crop_at_origin_replicates_border() {
        let img = Image::from_fn(80, 80, |x, y| (x + 2 * y) as u8).unwrap();
        let patch = crop_patch(&img, &Keypoint::new(0.0, 0.0, 1.0, 0.0, 0.0), "a");
        for y in 0..32 {
            for x in 0..32 {
                assert_eq!(patch.pixels.get(x, y, 0), img.get(0, 0, 0));
            }
            assert_eq!(patch.pixels.get(40, y, 0), img.get(8, 0, 0));
        }
        assert_eq!(patch.pixels.get(40, 40, 0), img.get(8, 8, 0));
    }

    #[test]
    fn neighbouring_crops_are_shifted() {
        let img = Image::from_fn(128, 128, |x, y| ((x * 13) ^ (y * 5)) as u8).unwrap();
        let a = crop_patch(&img, &Keypoint::new(60.0, 60.0, 1.0, 0.0, 0.0), "a");
        let b = crop_patch(&img, &Keypoint::new(61.0, 60.0, 1.0, 0.0, 0.0), "a");
        for y in 0..64 {
            for x in 0..63 {
                assert_eq!(a.pixels.get(x + 1, y, 0), b.pixels.get(x, y, 0));
            }
        }
    }

    #[test]
    fn crop_keeps_colour() {
        let data: Vec<u8> = (0..100 * 100 * 3).map(|i| (i % 251) as u8).collect();
        let img = Image::new(100, 100, 3, data).unwrap();
        let patch = crop_patch(&img, &Keypoint::new(50.0, 50.0, 1.0, 0.0, 0.0), "c");
        assert_eq!(patch.pixels.channels(), 3);
        assert_eq!(patch.pixels.get(0, 0, 2), img.get(18, 18, 2));
    }

    #[test]
    fn external_validation() {
        let mut v = [0.0f32; DESCRIPTOR_DIM];
        v[3] = 0.5;
        match validate_external(7, v) {
            Err(Error::DescriptorValidation { record, .. }) => assert_eq!(record, 7),
            other => panic!("unexpected {other:?}"),
        }
        v[3] = 1.0005;
        let d = validate_external(0, v).unwrap();
        assert!((d.norm() - 1.0).abs() <= NORM_TOLERANCE);
        v[3] = 1.0;
        assert_eq!(validate_external(0, v).unwrap().values(), &v);
    }

    #[test]
    fn external_provider_requires_every_keypoint() {
        let mut table = ExternalDescriptors::new();
        let mut v = [0.0f32; DESCRIPTOR_DIM];
        v[0] = 1.0;
        table.insert("img", 0, Descriptor::from_unit(v).unwrap());
        let prepared = PreparedImage {
            unblurred: Plane::zeros(8, 8, 1),
            blurred: Plane::zeros(8, 8, 1),
            phi: 1.0,
        };
        let provider = DescriptorProvider::External(table);
        let one = [Keypoint::new(1.0, 1.0, 1.0, 0.0, 0.0)];
        assert_eq!(
            provider.describe_all("img", &prepared, &one).unwrap().len(),
            1
        );
        let two = [one[0], one[0]];
        assert_eq!(
            provider.describe_all("img", &prepared, &two).unwrap_err(),
            Error::MissingDescriptor {
                image_id: "img".into(),
                index: 1
            }
        );
    }
}
