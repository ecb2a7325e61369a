//! Seeded synthetic surfaces with known geometry.
//!
//! Every surface is a band-pass value-noise texture with slightly elongated
//! vertical structure. A view is a square window of the texture seen through
//! a random homography (each window corner moves by at most
//! `warp_magnitude * size` pixels), followed by a gain, gamma and offset
//! change and additive noise scaled by `illum_jitter`. View 0 of a surface is
//! the undistorted window and defines the reference frame.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::fmath;
use crate::pixels::{Image, Plane};
use crate::registration::{Correspondence, Homography, Point2, SurfaceImage, SurfaceManifest};

/// Query image id -> ids of the other views of the same surface.
pub type GroundTruth = BTreeMap<String, BTreeSet<String>>;

/// Lattice spacing of each noise octave, in pixels, and its amplitude.
const OCTAVES: [(f32, f32); 3] = [(8.0, 1.0), (16.0, 1.0), (32.0, 0.7)];
/// Vertical stretch of the lattice.
const ELONGATION: f32 = 1.25;
/// Standard deviation of the texture around mid-grey.
const CONTRAST: f64 = 0.32;
const DISTRACTOR_STREAM: u64 = 1 << 40;

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SynthParams {
    pub seed: u64,
    pub surfaces: usize,
    pub views: usize,
    pub warp_magnitude: f64,
    pub illum_jitter: f64,
    /// Side of the square views.
    pub size: u32,
}

impl SynthParams {
    pub fn new(
        seed: u64,
        surfaces: usize,
        views: usize,
        warp_magnitude: f64,
        illum_jitter: f64,
    ) -> Self {
        SynthParams {
            seed,
            surfaces,
            views,
            warp_magnitude,
            illum_jitter,
            size: 768,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.surfaces < 2 {
            return Err(Error::param("surfaces", "must be >= 2"));
        }
        if self.views < 2 {
            return Err(Error::param("views", "must be >= 2"));
        }
        if !(0.0..=0.25).contains(&self.warp_magnitude) {
            return Err(Error::param("warp_magnitude", "must lie in [0, 0.25]"));
        }
        if !(0.0..=0.9).contains(&self.illum_jitter) {
            return Err(Error::param("illum_jitter", "must lie in [0, 0.9]"));
        }
        if self.size < 32 {
            return Err(Error::param("size", "must be >= 32"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthView {
    pub image_id: String,
    pub surface_id: String,
    pub image: Image,
    /// Generating map from view pixels to the reference frame.
    pub to_reference: Homography,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthCorpus {
    pub views: Vec<SynthView>,
    pub manifests: Vec<SurfaceManifest>,
    pub ground_truth: GroundTruth,
}

pub fn view_id(surface: usize, view: usize) -> String {
    format!("s{surface:03}_v{view:02}")
}

pub fn synth_corpus(
    seed: u64,
    surfaces: usize,
    views: usize,
    warp_magnitude: f64,
    illum_jitter: f64,
) -> Result<SynthCorpus> {
    synth_corpus_with(&SynthParams::new(
        seed,
        surfaces,
        views,
        warp_magnitude,
        illum_jitter,
    ))
}

pub fn synth_corpus_with(p: &SynthParams) -> Result<SynthCorpus> {
    p.validate()?;
    let mut out = SynthCorpus {
        views: Vec::new(),
        manifests: Vec::new(),
        ground_truth: GroundTruth::new(),
    };
    for s in 0..p.surfaces {
        let surface_id = format!("s{s:03}");
        let mut rng = stream(p.seed, s as u64);
        let (texture, margin) = texture(&mut rng, p.size, p.warp_magnitude);
        let window = Homography::translation(margin, margin);
        let from_window = window.inverse()?;
        let size = p.size as f64;
        let fiducials = [
            Point2::new(size / 8.0, size / 8.0),
            Point2::new(size * 7.0 / 8.0, size / 8.0),
            Point2::new(size * 7.0 / 8.0, size * 7.0 / 8.0),
            Point2::new(size / 8.0, size * 7.0 / 8.0),
        ];
        let mut images = Vec::new();
        for v in 0..p.views {
            let to_texture = if v == 0 {
                window
            } else {
                random_warp(&mut rng, p.size, margin, p.warp_magnitude)?
            };
            let to_reference = to_texture.then(&from_window)?;
            let image = render(&mut rng, &texture, &to_texture, p.size, p.illum_jitter)?;
            let back = to_reference.inverse()?;
            let correspondences = fiducials
                .iter()
                .map(|&r| {
                    Ok(Correspondence {
                        image: back.project(r)?,
                        reference: r,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            let image_id = view_id(s, v);
            images.push(SurfaceImage {
                image_id: image_id.clone(),
                path: format!("images/{image_id}.png"),
                correspondences,
                crop: None,
            });
            out.views.push(SynthView {
                image_id,
                surface_id: surface_id.clone(),
                image,
                to_reference,
            });
        }
        let ids: BTreeSet<String> = images.iter().map(|i| i.image_id.clone()).collect();
        for id in &ids {
            let mut rel = ids.clone();
            rel.remove(id);
            out.ground_truth.insert(id.clone(), rel);
        }
        out.manifests.push(SurfaceManifest {
            surface_id,
            reference_image_id: view_id(s, 0),
            images,
        });
    }
    Ok(out)
}

/// Single views of unrelated surfaces, ids `d0000`, `d0001`, ...
pub fn synth_distractors(
    seed: u64,
    count: usize,
    size: u32,
    illum_jitter: f64,
) -> Result<Vec<(String, Image)>> {
    (0..count)
        .map(|i| synth_distractor(seed, i, size, illum_jitter))
        .collect()
}

/// Distractor `index` of [`synth_distractors`], rendered on its own.
pub fn synth_distractor(
    seed: u64,
    index: usize,
    size: u32,
    illum_jitter: f64,
) -> Result<(String, Image)> {
    let mut rng = stream(seed, DISTRACTOR_STREAM + index as u64);
    let (texture, margin) = texture(&mut rng, size, 0.0);
    let image = render(
        &mut rng,
        &texture,
        &Homography::translation(margin, margin),
        size,
        illum_jitter,
    )?;
    Ok((format!("d{index:04}"), image))
}

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

/// Texture in `[0, 1]` large enough for every warped window, and the offset
/// of the undistorted window inside it.
fn texture(rng: &mut ChaCha8Rng, size: u32, warp: f64) -> (Plane, f64) {
    let margin = fmath::ceil(warp * size as f64) + 8.0;
    let side = size as usize + 2 * margin as usize;
    let mut acc = Plane::zeros(side, side, 1);
    for &(cell, amp) in &OCTAVES {
        let (cx, cy) = (cell, cell * ELONGATION);
        let gw = (side as f32 / cx) as usize + 3;
        let gh = (side as f32 / cy) as usize + 3;
        let lattice: Vec<f32> = (0..gw * gh)
            .map(|_| rng.random_range(-1.0f32..1.0))
            .collect();
        let (ox, oy) = (rng.random_range(0.0..cx), rng.random_range(0.0..cy));
        let cols: Vec<(usize, f32)> = (0..side)
            .map(|x| {
                let fx = (x as f32 + ox) / cx;
                (fx as usize, smooth(fx - fmath::floorf(fx)))
            })
            .collect();
        let mut row = vec![0.0f32; gw];
        let data = acc.data_mut();
        for y in 0..side {
            let fy = (y as f32 + oy) / cy;
            let (iy, ty) = (fy as usize, smooth(fy - fmath::floorf(fy)));
            let (upper, lower) = (
                &lattice[iy * gw..(iy + 1) * gw],
                &lattice[(iy + 1) * gw..(iy + 2) * gw],
            );
            for ((r, &a), &b) in row.iter_mut().zip(upper).zip(lower) {
                *r = a + (b - a) * ty;
            }
            for (out, &(ix, tx)) in data[y * side..(y + 1) * side].iter_mut().zip(&cols) {
                *out += amp * (row[ix] + (row[ix + 1] - row[ix]) * tx);
            }
        }
    }
    let n = acc.data().len() as f64;
    let mean = acc.data().iter().map(|&v| v as f64).sum::<f64>() / n;
    let var = acc
        .data()
        .iter()
        .map(|&v| {
            let d = v as f64 - mean;
            d * d
        })
        .sum::<f64>()
        / n;
    let std = fmath::sqrt(var).max(1e-9);
    let plane = acc.map(|v| (0.5 + CONTRAST * ((v as f64 - mean) / std)).clamp(0.0, 1.0) as f32);
    (plane, margin)
}

fn smooth(t: f32) -> f32 {
    t * t * (3.0 - 2.0 * t)
}

/// View-to-texture homography moving each window corner by at most
/// `warp * size` pixels.
fn random_warp(rng: &mut ChaCha8Rng, size: u32, margin: f64, warp: f64) -> Result<Homography> {
    let s = size as f64 - 1.0;
    let reach = warp * size as f64;
    if reach == 0.0 {
        return Ok(Homography::translation(margin, margin));
    }
    let corners = [(0.0, 0.0), (s, 0.0), (s, s), (0.0, s)];
    let mut pairs = Vec::with_capacity(4);
    for &(x, y) in &corners {
        let (dx, dy) = (
            rng.random_range(-reach..=reach),
            rng.random_range(-reach..=reach),
        );
        pairs.push((
            Point2::new(x, y),
            Point2::new(x + margin + dx, y + margin + dy),
        ));
    }
    Ok(crate::registration::estimate_homography(&pairs)?.homography)
}

fn render(
    rng: &mut ChaCha8Rng,
    texture: &Plane,
    to_texture: &Homography,
    size: u32,
    jitter: f64,
) -> Result<Image> {
    let gain = 1.0 + jitter * rng.random_range(-1.0..=1.0);
    let gamma = fmath::exp(jitter * rng.random_range(-1.0..=1.0));
    let offset = 0.2 * jitter * rng.random_range(-1.0..=1.0);
    let noise_sigma = (8.0 * jitter) as f32;
    let tone = ToneCurve::new(gain, gamma, offset);
    let n = size as usize;
    let m = to_texture.rows();
    let mut data = Vec::with_capacity(n * n);
    for y in 0..n {
        let yf = y as f64;
        for x in 0..n {
            let xf = x as f64;
            let z = m[2][0] * xf + m[2][1] * yf + m[2][2];
            if z.abs() <= 1e-12 {
                return Err(Error::Projection);
            }
            let tx = (m[0][0] * xf + m[0][1] * yf + m[0][2]) / z;
            let ty = (m[1][0] * xf + m[1][1] * yf + m[1][2]) / z;
            let mut level = tone.apply(texture.sample_bilinear(tx as f32, ty as f32, 0));
            if noise_sigma > 0.0 {
                let z: f32 = rng.sample(StandardNormal);
                level += noise_sigma * z;
            }
            data.push(fmath::roundf(level).clamp(0.0, 255.0) as u8);
        }
    }
    Image::new(size, size, 1, data)
}

/// `255 * (gain * v^gamma + offset)` tabulated over `[0, 1]`, linearly
/// interpolated.
struct ToneCurve {
    table: Vec<f32>,
}

impl ToneCurve {
    const STEPS: usize = 4096;

    fn new(gain: f64, gamma: f64, offset: f64) -> Self {
        let table = (0..=Self::STEPS)
            .map(|i| {
                let v = i as f64 / Self::STEPS as f64;
                (255.0 * (gain * fmath::pow(v, gamma) + offset)) as f32
            })
            .collect();
        ToneCurve { table }
    }

    fn apply(&self, v: f32) -> f32 {
        let t = v.clamp(0.0, 1.0) * Self::STEPS as f32;
        let i = (t as usize).min(Self::STEPS - 1);
        let f = t - i as f32;
        self.table[i] + (self.table[i + 1] - self.table[i]) * f
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::registration::estimate_homography;

    fn small(seed: u64, warp: f64, jitter: f64) -> SynthCorpus {
        synth_corpus_with(&SynthParams {
            size: 96,
            ..SynthParams::new(seed, 2, 3, warp, jitter)
        })
        .unwrap()
    }

    #[test]
    fn noiseless_views_are_identical() {
        let c = small(1, 0.0, 0.0);
        assert_eq!(c.views.len(), 6);
        assert_eq!(c.views[0].image, c.views[1].image);
        assert_eq!(c.views[0].image, c.views[2].image);
        assert_ne!(c.views[0].image, c.views[3].image);
    }

    #[test]
    fn seeded_corpus_is_reproducible() {
        assert_eq!(small(5, 0.1, 0.25), small(5, 0.1, 0.25));
        assert_ne!(
            small(5, 0.1, 0.25).views[1].image,
            small(6, 0.1, 0.25).views[1].image
        );
    }

    #[test]
    fn fiducials_recover_generating_warp() {
        let c = small(9, 0.12, 0.2);
        for (m, chunk) in c.manifests.iter().zip(c.views.chunks(3)) {
            m.validate().unwrap();
            for (img, view) in m.images.iter().zip(chunk) {
                let pairs: Vec<(Point2, Point2)> = img
                    .correspondences
                    .iter()
                    .map(|c| (c.image, c.reference))
                    .collect();
                let fit = estimate_homography(&pairs).unwrap();
                assert!(fit.homography.max_entry_diff(&view.to_reference) < 1e-6);
            }
        }
    }

    #[test]
    fn ground_truth_excludes_query() {
        let c = small(2, 0.05, 0.1);
        assert_eq!(c.ground_truth.len(), 6);
        for (q, rel) in &c.ground_truth {
            assert_eq!(rel.len(), 2);
            assert!(!rel.contains(q));
            assert!(rel.iter().all(|r| r[..4] == q[..4]));
        }
    }

    #[test]
    fn texture_uses_the_dynamic_range() {
        let c = small(3, 0.0, 0.0);
        let data = c.views[0].image.data();
        let mean = data.iter().map(|&v| v as f64).sum::<f64>() / data.len() as f64;
        assert!((100.0..156.0).contains(&mean), "{mean}");
        assert!(data.iter().any(|&v| v < 90) && data.iter().any(|&v| v > 166));
    }

    #[test]
    fn distractors_differ() {
        let d = synth_distractors(4, 3, 64, 0.1).unwrap();
        assert_eq!(d[2].0, "d0002");
        assert_ne!(d[0].1, d[1].1);
        assert!(synth_corpus(0, 1, 3, 0.0, 0.0).is_err());
    }
}
