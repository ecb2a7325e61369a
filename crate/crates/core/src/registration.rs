//! Registration of a surface's images to a common reference frame and
//! construction of keypoint-aligned patch sets.
//!
//! Each image carries at least four fiducial correspondences to the
//! reference frame. From them a homography `H^r` (image -> reference) is
//! fitted by normalised DLT. Keypoints of every image are pooled in the
//! reference frame, thinned to a minimum spacing, and projected back into
//! each image through `H^i = (H^r)^-1`.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::cmp::Ordering;

use nalgebra::DMatrix;

use crate::descriptor::{crop_patch, PATCH_SIZE};
use crate::detector::Keypoint;
use crate::error::{Error, Result};
use crate::fmath;
use crate::pixels::Image;

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Point2 {
    pub x: f64,
    pub y: f64,
}

impl Point2 {
    pub fn new(x: f64, y: f64) -> Self {
        Point2 { x, y }
    }

    pub fn distance_sq(&self, other: &Point2) -> f64 {
        let dx = self.x - other.x;
        let dy = self.y - other.y;
        dx * dx + dy * dy
    }
}

/// Minimum column-normalised determinant of an invertible homography.
const MIN_NORMALIZED_DET: f64 = 1e-9;
const MIN_PROJECTIVE_DEPTH: f64 = 1e-12;

/// 3x3 projective map, scaled so `m[2][2] = 1` whenever that entry is nonzero.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Homography {
    m: [[f64; 3]; 3],
}

impl Homography {
    pub fn identity() -> Self {
        Homography {
            m: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
        }
    }

    pub fn translation(tx: f64, ty: f64) -> Self {
        Homography {
            m: [[1.0, 0.0, tx], [0.0, 1.0, ty], [0.0, 0.0, 1.0]],
        }
    }

    pub fn scaling(s: f64) -> Self {
        Homography {
            m: [[s, 0.0, 0.0], [0.0, s, 0.0], [0.0, 0.0, 1.0]],
        }
    }

    /// Validates invertibility and normalises the scale.
    pub fn from_rows(mut m: [[f64; 3]; 3]) -> Result<Self> {
        if m.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::Estimation("non-finite matrix entry".into()));
        }
        let s = m[2][2];
        if s.abs() > f64::EPSILON {
            m.iter_mut().flatten().for_each(|v| *v /= s);
        }
        let h = Homography { m };
        if h.normalized_det().abs() <= MIN_NORMALIZED_DET {
            return Err(Error::Estimation("singular homography".into()));
        }
        Ok(h)
    }

    pub fn from_row_major(v: [f64; 9]) -> Result<Self> {
        Self::from_rows([[v[0], v[1], v[2]], [v[3], v[4], v[5]], [v[6], v[7], v[8]]])
    }

    pub fn rows(&self) -> &[[f64; 3]; 3] {
        &self.m
    }

    pub fn to_row_major(&self) -> [f64; 9] {
        let m = &self.m;
        [
            m[0][0], m[0][1], m[0][2], m[1][0], m[1][1], m[1][2], m[2][0], m[2][1], m[2][2],
        ]
    }

    fn det(&self) -> f64 {
        let m = &self.m;
        m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
            - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
    }

    /// Determinant divided by the product of column norms, in `[-1, 1]`.
    fn normalized_det(&self) -> f64 {
        let mut denom = 1.0;
        for c in 0..3 {
            let n2: f64 = (0..3).map(|r| self.m[r][c] * self.m[r][c]).sum();
            denom *= fmath::sqrt(n2);
        }
        if denom == 0.0 {
            0.0
        } else {
            self.det() / denom
        }
    }

    pub fn project(&self, p: Point2) -> Result<Point2> {
        let m = &self.m;
        let x = m[0][0] * p.x + m[0][1] * p.y + m[0][2];
        let y = m[1][0] * p.x + m[1][1] * p.y + m[1][2];
        let z = m[2][0] * p.x + m[2][1] * p.y + m[2][2];
        if z.abs() <= MIN_PROJECTIVE_DEPTH {
            return Err(Error::Projection);
        }
        Ok(Point2::new(x / z, y / z))
    }

    pub fn inverse(&self) -> Result<Homography> {
        let m = &self.m;
        let det = self.det();
        if det == 0.0 {
            return Err(Error::Estimation("singular homography".into()));
        }
        let cof = |r0: usize, r1: usize, c0: usize, c1: usize| {
            m[r0][c0] * m[r1][c1] - m[r0][c1] * m[r1][c0]
        };
        let adj = [
            [cof(1, 2, 1, 2), -cof(0, 2, 1, 2), cof(0, 1, 1, 2)],
            [-cof(1, 2, 0, 2), cof(0, 2, 0, 2), -cof(0, 1, 0, 2)],
            [cof(1, 2, 0, 1), -cof(0, 2, 0, 1), cof(0, 1, 0, 1)],
        ];
        let mut inv = [[0.0; 3]; 3];
        for r in 0..3 {
            for c in 0..3 {
                inv[r][c] = adj[r][c] / det;
            }
        }
        Homography::from_rows(inv)
    }

    /// `next ∘ self`: apply `self`, then `next`.
    pub fn then(&self, next: &Homography) -> Result<Homography> {
        let (a, b) = (&next.m, &self.m);
        let mut out = [[0.0; 3]; 3];
        for (r, row) in out.iter_mut().enumerate() {
            for (c, slot) in row.iter_mut().enumerate() {
                *slot = (0..3).map(|k| a[r][k] * b[k][c]).sum();
            }
        }
        Homography::from_rows(out)
    }

    /// Largest absolute entry difference.
    pub fn max_entry_diff(&self, other: &Homography) -> f64 {
        self.to_row_major()
            .iter()
            .zip(other.to_row_major().iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HomographyFit {
    pub homography: Homography,
    /// Mean distance between projected sources and their targets.
    pub mean_reprojection_error: f64,
}

/// Similarity moving the centroid to the origin with mean radius sqrt(2).
fn hartley(points: &[Point2]) -> Result<[[f64; 3]; 3]> {
    let n = points.len() as f64;
    let cx = points.iter().map(|p| p.x).sum::<f64>() / n;
    let cy = points.iter().map(|p| p.y).sum::<f64>() / n;
    let mean_r = points
        .iter()
        .map(|p| fmath::sqrt((p.x - cx) * (p.x - cx) + (p.y - cy) * (p.y - cy)))
        .sum::<f64>()
        / n;
    if !(mean_r > 0.0) || !mean_r.is_finite() {
        return Err(Error::Estimation("points are coincident".into()));
    }
    let s = core::f64::consts::SQRT_2 / mean_r;
    Ok([[s, 0.0, -s * cx], [0.0, s, -s * cy], [0.0, 0.0, 1.0]])
}

fn apply(t: &[[f64; 3]; 3], p: Point2) -> Point2 {
    Point2::new(t[0][0] * p.x + t[0][2], t[1][1] * p.y + t[1][2])
}

fn has_collinear_triple(points: &[Point2]) -> bool {
    let n = points.len();
    for i in 0..n {
        for j in i + 1..n {
            for k in j + 1..n {
                let (a, b, c) = (points[i], points[j], points[k]);
                let cross = (b.x - a.x) * (c.y - a.y) - (b.y - a.y) * (c.x - a.x);
                let scale = a
                    .distance_sq(&b)
                    .max(a.distance_sq(&c))
                    .max(b.distance_sq(&c));
                if cross.abs() <= 1e-9 * scale {
                    return true;
                }
            }
        }
    }
    false
}

/// Fits `H` with `dst ~ H src` by normalised DLT (least squares beyond four pairs).
pub fn estimate_homography(pairs: &[(Point2, Point2)]) -> Result<HomographyFit> {
    let n = pairs.len();
    if n < 4 {
        return Err(Error::Estimation(format!(
            "need at least 4 correspondences, got {n}"
        )));
    }
    if pairs
        .iter()
        .any(|(a, b)| !(a.x.is_finite() && a.y.is_finite() && b.x.is_finite() && b.y.is_finite()))
    {
        return Err(Error::Estimation("non-finite correspondence".into()));
    }
    let src: Vec<Point2> = pairs.iter().map(|p| p.0).collect();
    let dst: Vec<Point2> = pairs.iter().map(|p| p.1).collect();
    let ts = hartley(&src)?;
    let td = hartley(&dst)?;
    let src_n: Vec<Point2> = src.iter().map(|&p| apply(&ts, p)).collect();
    let dst_n: Vec<Point2> = dst.iter().map(|&p| apply(&td, p)).collect();
    if n == 4 && (has_collinear_triple(&src_n) || has_collinear_triple(&dst_n)) {
        return Err(Error::Estimation(
            "three correspondences are collinear".into(),
        ));
    }

    let rows = (2 * n).max(9);
    let mut a = DMatrix::<f64>::zeros(rows, 9);
    for (i, (s, d)) in src_n.iter().zip(&dst_n).enumerate() {
        let (x, y, u, v) = (s.x, s.y, d.x, d.y);
        let r = 2 * i;
        a[(r, 0)] = -x;
        a[(r, 1)] = -y;
        a[(r, 2)] = -1.0;
        a[(r, 6)] = u * x;
        a[(r, 7)] = u * y;
        a[(r, 8)] = u;
        a[(r + 1, 3)] = -x;
        a[(r + 1, 4)] = -y;
        a[(r + 1, 5)] = -1.0;
        a[(r + 1, 6)] = v * x;
        a[(r + 1, 7)] = v * y;
        a[(r + 1, 8)] = v;
    }
    let svd = a.svd(false, true);
    let v_t = svd
        .v_t
        .ok_or_else(|| Error::Estimation("SVD did not converge".into()))?;
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&i, &j| svd.singular_values[i].total_cmp(&svd.singular_values[j]));
    let largest = svd.singular_values[order[order.len() - 1]];
    if svd.singular_values[order[1]] <= 1e-9 * largest {
        return Err(Error::Estimation(
            "degenerate correspondence configuration".into(),
        ));
    }
    let h = v_t.row(order[0]);
    let hn = [[h[0], h[1], h[2]], [h[3], h[4], h[5]], [h[6], h[7], h[8]]];

    // H = Td^-1 * Hn * Ts
    let td_inv = Homography { m: td }.inverse()?;
    let composed = Homography { m: ts }
        .then(&Homography::from_rows(hn)?)?
        .then(&td_inv)?;
    let err = src
        .iter()
        .zip(&dst)
        .map(|(s, d)| composed.project(*s).map(|p| fmath::sqrt(p.distance_sq(d))))
        .collect::<Result<Vec<f64>>>()?;
    let mean_reprojection_error = err.iter().sum::<f64>() / n as f64;
    Ok(HomographyFit {
        homography: composed,
        mean_reprojection_error,
    })
}

pub fn project(h: &Homography, p: Point2) -> Result<Point2> {
    h.project(p)
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Correspondence {
    /// Fiducial position in the image.
    pub image: Point2,
    /// The same fiducial in the reference frame.
    pub reference: Point2,
}

/// Region of an image that shows the surface, in image pixels.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct CropRect {
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
}

impl CropRect {
    pub fn contains(&self, p: Point2) -> bool {
        p.x >= self.x0 && p.x < self.x1 && p.y >= self.y0 && p.y < self.y1
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SurfaceImage {
    pub image_id: String,
    pub path: String,
    pub correspondences: Vec<Correspondence>,
    #[cfg_attr(
        feature = "serde",
        serde(default, skip_serializing_if = "Option::is_none")
    )]
    pub crop: Option<CropRect>,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SurfaceManifest {
    pub surface_id: String,
    /// Image whose pixel frame is the reference frame.
    pub reference_image_id: String,
    pub images: Vec<SurfaceImage>,
}

impl SurfaceManifest {
    pub fn validate(&self) -> Result<()> {
        if self.images.len() < 2 {
            return Err(Error::Manifest(format!(
                "surface `{}` needs at least 2 images",
                self.surface_id
            )));
        }
        let mut seen = BTreeSet::new();
        for img in &self.images {
            if !seen.insert(img.image_id.as_str()) {
                return Err(Error::Manifest(format!(
                    "duplicate image id `{}`",
                    img.image_id
                )));
            }
            if img.correspondences.len() < 4 {
                return Err(Error::Manifest(format!(
                    "image `{}` has {} correspondences, need 4",
                    img.image_id,
                    img.correspondences.len()
                )));
            }
        }
        if !seen.contains(self.reference_image_id.as_str()) {
            return Err(Error::Manifest(format!(
                "unknown reference image `{}`",
                self.reference_image_id
            )));
        }
        Ok(())
    }

    /// `H^r` for every image, in manifest order.
    pub fn register(&self) -> Result<Vec<HomographyFit>> {
        self.validate()?;
        self.images
            .iter()
            .map(|img| {
                let pairs: Vec<(Point2, Point2)> = img
                    .correspondences
                    .iter()
                    .map(|c| (c.image, c.reference))
                    .collect();
                estimate_homography(&pairs).map_err(|e| Error::Registration {
                    image_id: img.image_id.clone(),
                    reason: format!("{e}"),
                })
            })
            .collect()
    }
}

/// Keypoints and size of one image, in original pixels.
#[derive(Debug, Clone, Copy)]
pub struct ImageObservation<'a> {
    pub keypoints: &'a [Keypoint],
    pub width: u32,
    pub height: u32,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConsolidateParams {
    pub min_spacing: f64,
    /// Downsizing factor of the frame patches are cut from.
    pub phi: f32,
    pub patch_size: u32,
}

impl Default for ConsolidateParams {
    fn default() -> Self {
        ConsolidateParams {
            min_spacing: 32.0,
            phi: 2.0,
            patch_size: PATCH_SIZE,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReferenceKeypoint {
    pub position: Point2,
    pub response: f32,
}

fn reference_order(a: &ReferenceKeypoint, b: &ReferenceKeypoint) -> Ordering {
    b.response
        .total_cmp(&a.response)
        .then(a.position.y.total_cmp(&b.position.y))
        .then(a.position.x.total_cmp(&b.position.x))
}

/// Greedy thinning: visit by descending response (ties by `(y, x)`), keep a
/// point iff it is at least `min_spacing` from every point kept so far.
pub fn select_spaced(candidates: &[ReferenceKeypoint], min_spacing: f64) -> Vec<ReferenceKeypoint> {
    let mut sorted = candidates.to_vec();
    sorted.sort_by(reference_order);
    if !(min_spacing > 0.0) {
        return sorted;
    }
    let limit = min_spacing * min_spacing;
    let cell_of = |p: &Point2| {
        (
            fmath::floor(p.x / min_spacing) as i64,
            fmath::floor(p.y / min_spacing) as i64,
        )
    };
    let mut grid: BTreeMap<(i64, i64), Vec<usize>> = BTreeMap::new();
    let mut kept: Vec<ReferenceKeypoint> = Vec::new();
    for cand in sorted {
        let (cx, cy) = cell_of(&cand.position);
        let clash = (-1..=1).any(|dy| {
            (-1..=1).any(|dx| {
                grid.get(&(cx + dx, cy + dy)).is_some_and(|ids| {
                    ids.iter()
                        .any(|&i| kept[i].position.distance_sq(&cand.position) < limit)
                })
            })
        });
        if !clash {
            grid.entry((cx, cy)).or_default().push(kept.len());
            kept.push(cand);
        }
    }
    kept
}

/// Reference keypoints of one surface and where each lands in every image.
#[derive(Debug, Clone, PartialEq)]
pub struct AlignedKeypointSet {
    pub surface_id: String,
    pub image_ids: Vec<String>,
    /// `H^r` per image.
    pub to_reference: Vec<Homography>,
    pub keypoints: Vec<ReferenceKeypoint>,
    /// `positions[k][i]`: keypoint `k` in image `i` (original pixels), or
    /// `None` when its patch would not fit inside the image.
    pub positions: Vec<Vec<Option<Point2>>>,
}

impl AlignedKeypointSet {
    pub fn present_pairs(&self) -> usize {
        self.positions
            .iter()
            .map(|row| row.iter().filter(|p| p.is_some()).count())
            .sum()
    }
}

/// Whether a full patch centred on `p` fits in the downsized frame of a
/// `width x height` image without touching replicated border pixels.
fn patch_fits(p: Point2, width: u32, height: u32, params: &ConsolidateParams) -> bool {
    let phi = params.phi as f64;
    let dw = (fmath::round(width as f64 / phi) as i64).max(1);
    let dh = (fmath::round(height as f64 / phi) as i64).max(1);
    let cx = fmath::round(p.x / phi) as i64;
    let cy = fmath::round(p.y / phi) as i64;
    let half = params.patch_size as i64 / 2;
    cx - half >= 0 && cy - half >= 0 && cx + half - 1 < dw && cy + half - 1 < dh
}

pub fn consolidate_keypoints(
    manifest: &SurfaceManifest,
    observations: &[ImageObservation<'_>],
    params: &ConsolidateParams,
) -> Result<AlignedKeypointSet> {
    if observations.len() != manifest.images.len() {
        return Err(Error::Manifest(format!(
            "{} keypoint lists for {} images",
            observations.len(),
            manifest.images.len()
        )));
    }
    let fits = manifest.register()?;
    let to_reference: Vec<Homography> = fits.iter().map(|f| f.homography).collect();
    let from_reference = to_reference
        .iter()
        .zip(&manifest.images)
        .map(|(h, img)| {
            h.inverse().map_err(|e| Error::Registration {
                image_id: img.image_id.clone(),
                reason: format!("{e}"),
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let mut pooled = Vec::new();
    for ((obs, h), img) in observations.iter().zip(&to_reference).zip(&manifest.images) {
        for kp in obs.keypoints {
            let p = Point2::new(kp.x as f64, kp.y as f64);
            if img.crop.is_some_and(|c| !c.contains(p)) {
                continue;
            }
            if let Ok(r) = h.project(p) {
                pooled.push(ReferenceKeypoint {
                    position: r,
                    response: kp.response,
                });
            }
        }
    }
    let keypoints = select_spaced(&pooled, params.min_spacing);
    let positions = keypoints
        .iter()
        .map(|kp| {
            from_reference
                .iter()
                .zip(observations)
                .zip(&manifest.images)
                .map(|((h, obs), img)| {
                    let p = h.project(kp.position).ok()?;
                    let inside_crop = img.crop.is_none_or(|c| c.contains(p));
                    (inside_crop && patch_fits(p, obs.width, obs.height, params)).then_some(p)
                })
                .collect()
        })
        .collect();
    Ok(AlignedKeypointSet {
        surface_id: manifest.surface_id.clone(),
        image_ids: manifest.images.iter().map(|i| i.image_id.clone()).collect(),
        to_reference,
        keypoints,
        positions,
    })
}

/// One row of the patch manifest.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct PatchRow {
    pub surface_id: String,
    pub keypoint_id: u32,
    pub image_id: String,
    /// Patch centre in original image pixels.
    pub x: f64,
    pub y: f64,
    /// `<surface>/<keypoint>/<image>.png`, relative to the archive root.
    pub path: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PatchArchive {
    pub rows: Vec<PatchRow>,
    /// Pixels for `rows[i]`.
    pub patches: Vec<Image>,
}

/// Cuts a patch for every present `(keypoint, image)` pair of keypoints seen
/// in at least two images. `downsized` holds the unblurred images after
/// downsizing by `phi`, in manifest order.
pub fn build_patch_dataset(
    aligned: &AlignedKeypointSet,
    downsized: &[Image],
    phi: f32,
) -> Result<PatchArchive> {
    if downsized.len() != aligned.image_ids.len() {
        return Err(Error::Manifest(format!(
            "{} images supplied for {} manifest entries",
            downsized.len(),
            aligned.image_ids.len()
        )));
    }
    let mut rows = Vec::new();
    let mut patches = Vec::new();
    for (k, row) in aligned.positions.iter().enumerate() {
        if row.iter().filter(|p| p.is_some()).count() < 2 {
            continue;
        }
        for (i, pos) in row.iter().enumerate() {
            let Some(p) = pos else { continue };
            let image_id = &aligned.image_ids[i];
            let kp = Keypoint::new(
                (p.x / phi as f64) as f32,
                (p.y / phi as f64) as f32,
                1.0,
                0.0,
                aligned.keypoints[k].response,
            );
            let patch = crop_patch(&downsized[i], &kp, image_id);
            rows.push(PatchRow {
                surface_id: aligned.surface_id.clone(),
                keypoint_id: k as u32,
                image_id: image_id.clone(),
                x: p.x,
                y: p.y,
                path: format!("{}/{}/{}.png", aligned.surface_id, k, image_id),
            });
            patches.push(patch.pixels);
        }
    }
    Ok(PatchArchive { rows, patches })
}
