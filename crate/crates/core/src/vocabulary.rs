//! Visual vocabulary, TF-IDF bag-of-words vectors and the inverted index.
//!
//! Term frequency is the relative word count of an image, and the inverse
//! document frequency is `ln(N / n_w)` over the `N` training images (`n_w`
//! of which contain word `w`). Words absent from training, or present in
//! every training image, get weight zero. BoW vectors are l2-normalised once;
//! two vectors are compared with the squared euclidean distance, which ranks
//! exactly like cosine distance.

use alloc::collections::BTreeSet;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::cmp::Ordering;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::descriptor::{l2_sq, nearest_one, Descriptor, DESCRIPTOR_DIM};
use crate::error::{Error, Result};
use crate::fmath;

pub const DEFAULT_VOCAB_SIZE: usize = 1000;

pub type Center = [f32; DESCRIPTOR_DIM];

/// Index of the nearest center, lowest index on ties, and its distance.
pub fn nearest_center(centers: &[Center], v: &Center) -> (usize, f32) {
    nearest_one(v, centers)
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TrainingMeta {
    /// Non-degenerate descriptors offered for training.
    pub descriptor_count: usize,
    /// Descriptors actually clustered (after sub-sampling).
    pub clustered_count: usize,
    pub image_count: usize,
    pub iterations: usize,
    pub inertia: f64,
    /// Inertia after each assignment step.
    pub inertia_history: Vec<f64>,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Vocabulary {
    centers: Vec<Center>,
    idf: Vec<f32>,
    meta: Option<TrainingMeta>,
}

impl Vocabulary {
    pub fn from_parts(centers: Vec<Center>, idf: Vec<f32>) -> Result<Self> {
        if centers.is_empty() {
            return Err(Error::Training("vocabulary has no centers".into()));
        }
        if idf.len() != centers.len() {
            return Err(Error::Training(
                "idf length differs from center count".into(),
            ));
        }
        if idf.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::Training(
                "idf weights must be finite and non-negative".into(),
            ));
        }
        if centers.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::Training("non-finite center".into()));
        }
        Ok(Vocabulary {
            centers,
            idf,
            meta: None,
        })
    }

    pub fn k(&self) -> usize {
        self.centers.len()
    }

    pub fn centers(&self) -> &[Center] {
        &self.centers
    }

    pub fn idf(&self) -> &[f32] {
        &self.idf
    }

    pub fn meta(&self) -> Option<&TrainingMeta> {
        self.meta.as_ref()
    }

    pub fn nearest(&self, v: &Center) -> usize {
        nearest_center(&self.centers, v).0
    }

    pub fn quantize(&self, descriptors: &[Descriptor]) -> BowVector {
        quantize(self, descriptors)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KMeansParams {
    pub k: usize,
    pub seed: u64,
    pub max_iterations: usize,
    /// Stop once no center moves by this much (l2).
    pub tolerance: f32,
    /// Cluster a seeded uniform sample of at most this many descriptors.
    pub sample_limit: Option<usize>,
}

impl Default for KMeansParams {
    fn default() -> Self {
        KMeansParams {
            k: DEFAULT_VOCAB_SIZE,
            seed: 0,
            max_iterations: 100,
            tolerance: 1e-4,
            sample_limit: None,
        }
    }
}

/// Learns `k` centers from the descriptors of a set of training images and
/// the matching IDF table. Degenerate descriptors are ignored.
pub fn train_vocab(training: &[Vec<Descriptor>], params: &KMeansParams) -> Result<Vocabulary> {
    if params.k == 0 {
        return Err(Error::param("k", "must be >= 1"));
    }
    let pool: Vec<&Center> = training
        .iter()
        .flatten()
        .filter(|d| !d.is_degenerate())
        .map(|d| d.values())
        .collect();
    if pool.len() < params.k {
        return Err(Error::Training(alloc::format!(
            "{} descriptors for k = {}",
            pool.len(),
            params.k
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let points: Vec<&Center> = match params.sample_limit {
        Some(limit) if limit < pool.len() => {
            if limit < params.k {
                return Err(Error::param("sample_limit", "must be >= k"));
            }
            let mut idx = rand::seq::index::sample(&mut rng, pool.len(), limit).into_vec();
            idx.sort_unstable();
            idx.into_iter().map(|i| pool[i]).collect()
        }
        _ => pool.clone(),
    };

    let mut centers = kmeans_plus_plus(&points, params.k, &mut rng)?;
    let mut assignment = vec![0usize; points.len()];
    let mut dist = vec![0.0f32; points.len()];
    let mut history = Vec::new();
    let mut iterations = 0;
    for _ in 0..params.max_iterations {
        iterations += 1;
        let mut inertia = 0.0f64;
        for (i, p) in points.iter().enumerate() {
            let (c, d) = nearest_center(&centers, p);
            assignment[i] = c;
            dist[i] = d;
            inertia += d as f64;
        }
        history.push(inertia);

        let mut sums = vec![[0.0f64; DESCRIPTOR_DIM]; params.k];
        let mut counts = vec![0usize; params.k];
        for (p, &c) in points.iter().zip(&assignment) {
            counts[c] += 1;
            for (s, v) in sums[c].iter_mut().zip(p.iter()) {
                *s += *v as f64;
            }
        }
        let mut next = centers.clone();
        for c in 0..params.k {
            if counts[c] > 0 {
                for (dst, s) in next[c].iter_mut().zip(&sums[c]) {
                    *dst = (*s / counts[c] as f64) as f32;
                }
            }
        }
        // Empty clusters take the point farthest from its own center.
        for c in (0..params.k).filter(|&c| counts[c] == 0) {
            let far = dist
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.total_cmp(b.1).then(b.0.cmp(&a.0)))
                .map(|(i, _)| i)
                .expect("non-empty pool");
            next[c] = *points[far];
            dist[far] = 0.0;
        }
        let shift = centers
            .iter()
            .zip(&next)
            .map(|(a, b)| fmath::sqrtf(l2_sq(a, b)))
            .fold(0.0f32, f32::max);
        centers = next;
        if shift < params.tolerance {
            break;
        }
    }

    let idf = idf_table(&centers, training);
    let inertia = *history.last().unwrap_or(&0.0);
    Ok(Vocabulary {
        centers,
        idf,
        meta: Some(TrainingMeta {
            descriptor_count: pool.len(),
            clustered_count: points.len(),
            image_count: training.len(),
            iterations,
            inertia,
            inertia_history: history,
            seed: params.seed,
        }),
    })
}

fn kmeans_plus_plus(points: &[&Center], k: usize, rng: &mut ChaCha8Rng) -> Result<Vec<Center>> {
    let mut centers: Vec<Center> = Vec::with_capacity(k);
    centers.push(*points[rng.random_range(0..points.len())]);
    let mut min_d: Vec<f32> = points.iter().map(|p| l2_sq(p, &centers[0])).collect();
    while centers.len() < k {
        let total: f64 = min_d.iter().map(|&d| d as f64).sum();
        if !(total > 0.0) {
            return Err(Error::Training(alloc::format!(
                "fewer than {k} distinct descriptors"
            )));
        }
        let target = rng.random::<f64>() * total;
        let mut acc = 0.0f64;
        let mut chosen = None;
        for (i, &d) in min_d.iter().enumerate() {
            if d <= 0.0 {
                continue;
            }
            acc += d as f64;
            chosen = Some(i);
            if acc > target {
                break;
            }
        }
        let chosen = chosen.expect("positive total has a positive entry");
        let c = *points[chosen];
        for (m, p) in min_d.iter_mut().zip(points) {
            let d = l2_sq(p, &c);
            if d < *m {
                *m = d;
            }
        }
        centers.push(c);
    }
    Ok(centers)
}

fn idf_table(centers: &[Center], training: &[Vec<Descriptor>]) -> Vec<f32> {
    let n_images = training.len();
    let mut containing = vec![0usize; centers.len()];
    for image in training {
        let words: BTreeSet<usize> = image
            .iter()
            .filter(|d| !d.is_degenerate())
            .map(|d| nearest_center(centers, d.values()).0)
            .collect();
        for w in words {
            containing[w] += 1;
        }
    }
    containing
        .iter()
        .map(|&n_w| {
            if n_w == 0 || n_w == n_images {
                0.0
            } else {
                fmath::ln(n_images as f64 / n_w as f64) as f32
            }
        })
        .collect()
}

/// Sparse, l2-normalised BoW vector. Entries are sorted by word and all
/// weights are positive; the empty vector stands for "no words".
#[derive(Debug, Clone, PartialEq, Default)]
pub struct BowVector {
    entries: Vec<(u32, f64)>,
}

impl BowVector {
    pub fn empty() -> Self {
        BowVector {
            entries: Vec::new(),
        }
    }

    /// Normalises positive weights; zero weights are dropped. Words must be
    /// strictly increasing.
    pub fn from_weights(weights: Vec<(u32, f64)>) -> Result<Self> {
        if weights.windows(2).any(|w| w[0].0 >= w[1].0) {
            return Err(Error::param("bow", "words must be strictly increasing"));
        }
        if weights.iter().any(|(_, v)| !v.is_finite() || *v < 0.0) {
            return Err(Error::param(
                "bow",
                "weights must be finite and non-negative",
            ));
        }
        let mut entries: Vec<(u32, f64)> = weights.into_iter().filter(|(_, v)| *v > 0.0).collect();
        let norm = fmath::sqrt(entries.iter().map(|(_, v)| v * v).sum());
        if norm > 0.0 {
            entries.iter_mut().for_each(|(_, v)| *v /= norm);
        }
        Ok(BowVector { entries })
    }

    /// Takes already-normalised entries verbatim (used when loading).
    pub fn from_normalized(entries: Vec<(u32, f64)>) -> Result<Self> {
        if entries.windows(2).any(|w| w[0].0 >= w[1].0) || entries.iter().any(|(_, v)| !(*v > 0.0))
        {
            return Err(Error::param(
                "bow",
                "entries must be sorted with positive weights",
            ));
        }
        let v = BowVector { entries };
        if !v.is_empty() && (v.norm() - 1.0).abs() > 1e-6 {
            return Err(Error::param("bow", "vector is not normalised"));
        }
        Ok(v)
    }

    pub fn entries(&self) -> &[(u32, f64)] {
        &self.entries
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn nnz(&self) -> usize {
        self.entries.len()
    }

    pub fn norm(&self) -> f64 {
        fmath::sqrt(self.entries.iter().map(|(_, v)| v * v).sum())
    }

    pub fn dot(&self, other: &BowVector) -> f64 {
        let (mut i, mut j, mut acc) = (0, 0, 0.0);
        let (a, b) = (&self.entries, &other.entries);
        while i < a.len() && j < b.len() {
            match a[i].0.cmp(&b[j].0) {
                Ordering::Less => i += 1,
                Ordering::Greater => j += 1,
                Ordering::Equal => {
                    acc += a[i].1 * b[j].1;
                    i += 1;
                    j += 1;
                }
            }
        }
        acc
    }
}

/// Nearest-word histogram of `descriptors`, TF-IDF weighted and normalised.
pub fn quantize(voc: &Vocabulary, descriptors: &[Descriptor]) -> BowVector {
    let live: Vec<&Descriptor> = descriptors.iter().filter(|d| !d.is_degenerate()).collect();
    if live.is_empty() {
        return BowVector::empty();
    }
    let mut counts = vec![0u32; voc.k()];
    for d in &live {
        counts[voc.nearest(d.values())] += 1;
    }
    let total = live.len() as f64;
    let weights = counts
        .iter()
        .enumerate()
        .filter(|(_, &c)| c > 0)
        .map(|(w, &c)| (w as u32, (c as f64 / total) * voc.idf[w] as f64))
        .collect();
    BowVector::from_weights(weights).expect("histogram words are increasing")
}

/// Squared l2 distance of two unit vectors, `2 - 2 a.b`, clamped at zero.
/// One empty side gives 2, two empty sides give 0.
///
/// The dot product is accumulated in word order, exactly as the inverted
/// index does, so both paths produce identical values.
pub fn bow_distance(a: &BowVector, b: &BowVector) -> f64 {
    match (a.is_empty(), b.is_empty()) {
        (true, true) => 0.0,
        (true, false) | (false, true) => 2.0,
        _ => (2.0 - 2.0 * a.dot(b)).max(0.0),
    }
}

/// Word -> posting list of `(image ordinal, weight)`.
#[derive(Debug, Clone, PartialEq)]
pub struct InvertedIndex {
    postings: Vec<Vec<(u32, f64)>>,
    image_ids: Vec<String>,
    empty: Vec<bool>,
}

/// Builds postings for `bows`; word ids must be below `vocab_size`.
pub fn index_build(bows: &[(String, BowVector)], vocab_size: usize) -> Result<InvertedIndex> {
    let mut seen = BTreeSet::new();
    let mut postings = vec![Vec::new(); vocab_size];
    for (ordinal, (id, bow)) in bows.iter().enumerate() {
        if !seen.insert(id.as_str()) {
            return Err(Error::DuplicateId(id.clone()));
        }
        for &(w, v) in bow.entries() {
            let list = postings.get_mut(w as usize).ok_or_else(|| {
                Error::param(
                    "bow",
                    alloc::format!("word {w} outside vocabulary of {vocab_size}"),
                )
            })?;
            list.push((ordinal as u32, v));
        }
    }
    Ok(InvertedIndex {
        postings,
        image_ids: bows.iter().map(|(id, _)| id.clone()).collect(),
        empty: bows.iter().map(|(_, b)| b.is_empty()).collect(),
    })
}

impl InvertedIndex {
    pub fn len(&self) -> usize {
        self.image_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.image_ids.is_empty()
    }

    pub fn vocab_size(&self) -> usize {
        self.postings.len()
    }

    pub fn image_ids(&self) -> &[String] {
        &self.image_ids
    }

    pub fn postings(&self, word: usize) -> &[(u32, f64)] {
        &self.postings[word]
    }

    /// Rebuilds the stored vector of one image from the postings.
    pub fn reconstruct(&self, ordinal: usize) -> BowVector {
        let entries = self
            .postings
            .iter()
            .enumerate()
            .filter_map(|(w, list)| {
                list.binary_search_by_key(&(ordinal as u32), |p| p.0)
                    .ok()
                    .map(|pos| (w as u32, list[pos].1))
            })
            .collect();
        BowVector { entries }
    }

    /// Fraction of zero entries over the dense `images x words` matrix.
    pub fn sparsity(&self) -> f64 {
        let cells = (self.len() * self.vocab_size()) as f64;
        if cells == 0.0 {
            return 1.0;
        }
        let nnz: usize = self.postings.iter().map(Vec::len).sum();
        1.0 - nnz as f64 / cells
    }

    /// Distance from `q` to every indexed image, by ordinal.
    pub fn distances(&self, q: &BowVector) -> Vec<f64> {
        if q.is_empty() {
            return self
                .empty
                .iter()
                .map(|&e| if e { 0.0 } else { 2.0 })
                .collect();
        }
        let mut dots = vec![0.0f64; self.len()];
        for &(w, qv) in q.entries() {
            if let Some(list) = self.postings.get(w as usize) {
                for &(img, v) in list {
                    dots[img as usize] += qv * v;
                }
            }
        }
        dots.iter()
            .zip(&self.empty)
            .map(|(&d, &e)| if e { 2.0 } else { (2.0 - 2.0 * d).max(0.0) })
            .collect()
    }

    /// The `top_t` smallest distances as `(ordinal, distance)`, ties broken by
    /// image id. `exclude` removes one ordinal (the query itself).
    pub fn rank(&self, q: &BowVector, top_t: usize, exclude: Option<usize>) -> Vec<(usize, f64)> {
        let dist = self.distances(q);
        let mut ranked: Vec<(usize, f64)> = dist
            .into_iter()
            .enumerate()
            .filter(|(i, _)| Some(*i) != exclude)
            .collect();
        let order = |a: &(usize, f64), b: &(usize, f64)| {
            a.1.total_cmp(&b.1)
                .then_with(|| self.image_ids[a.0].cmp(&self.image_ids[b.0]))
        };
        if top_t < ranked.len() {
            ranked.select_nth_unstable_by(top_t, order);
            ranked.truncate(top_t);
        }
        ranked.sort_by(order);
        ranked
    }
}

/// Ranked `(image_id, distance)` pairs for the `top_t` nearest images.
pub fn index_score(idx: &InvertedIndex, q: &BowVector, top_t: usize) -> Result<Vec<(String, f64)>> {
    if top_t < 1 {
        return Err(Error::param("top_t", "must be >= 1"));
    }
    Ok(idx
        .rank(q, top_t, None)
        .into_iter()
        .map(|(i, d)| (idx.image_ids[i].clone(), d))
        .collect())
}
