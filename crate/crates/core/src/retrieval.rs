//! Signature extraction, the signature database and the query pipelines.
//!
//! A full scan scores every database signature with one method. The two-stage
//! pipeline ranks everything by BoW distance through the inverted index and
//! rescores only the best `top_t` candidates with a match filter; the rest
//! follow in BoW order.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;
use core::cmp::Ordering;

use crate::descriptor::{Descriptor, DescriptorProvider};
use crate::detector::{detect_prepared, prepare, DetectorConfig, Keypoint};
use crate::error::{Error, Result};
use crate::matching::{
    gv_filter_with, lr_filter, putative_matches, MatchMethod, MatchParams, NeighborTable,
};
use crate::pixels::Image;
use crate::vocabulary::{
    bow_distance, index_build, quantize, BowVector, InvertedIndex, Vocabulary,
};

pub const DEFAULT_TOP_T: usize = 200;

/// Keypoints are kept in the downsized detection frame, where the
/// descriptors were computed.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageSignature {
    pub image_id: String,
    pub surface_id: Option<String>,
    pub keypoints: Vec<Keypoint>,
    pub descriptors: Vec<Descriptor>,
    pub bow: BowVector,
}

impl ImageSignature {
    pub fn new(
        image_id: String,
        surface_id: Option<String>,
        keypoints: Vec<Keypoint>,
        descriptors: Vec<Descriptor>,
        bow: BowVector,
    ) -> Result<Self> {
        if keypoints.len() != descriptors.len() {
            return Err(Error::param(
                "signature",
                alloc::format!(
                    "{} keypoints but {} descriptors",
                    keypoints.len(),
                    descriptors.len()
                ),
            ));
        }
        Ok(ImageSignature {
            image_id,
            surface_id,
            keypoints,
            descriptors,
            bow,
        })
    }

    /// Descriptors usable for matching.
    pub fn live_descriptors(&self) -> usize {
        self.descriptors
            .iter()
            .filter(|d| !d.is_degenerate())
            .count()
    }
}

/// Detect, describe and quantize one image.
pub fn extract_signature(
    image_id: &str,
    img: &Image,
    cfg: &DetectorConfig,
    provider: &DescriptorProvider,
    voc: &Vocabulary,
) -> Result<ImageSignature> {
    let (keypoints, descriptors) = describe_image(image_id, img, cfg, provider)?;
    let bow = quantize(voc, &descriptors);
    ImageSignature::new(image_id.into(), None, keypoints, descriptors, bow)
}

/// The vocabulary-independent half of extraction.
pub fn describe_image(
    image_id: &str,
    img: &Image,
    cfg: &DetectorConfig,
    provider: &DescriptorProvider,
) -> Result<(Vec<Keypoint>, Vec<Descriptor>)> {
    let prepared = prepare(img, cfg)?;
    let keypoints = detect_prepared(&prepared, cfg);
    let descriptors = provider.describe_all(image_id, &prepared, &keypoints)?;
    Ok((keypoints, descriptors))
}

#[derive(Debug, Clone)]
pub struct SignatureDb {
    signatures: Vec<ImageSignature>,
    index: InvertedIndex,
    by_id: BTreeMap<String, usize>,
    vocab_hash: [u8; 32],
    config_hash: [u8; 32],
    neighbor_cache: Option<(usize, Vec<NeighborTable>)>,
}

impl PartialEq for SignatureDb {
    fn eq(&self, other: &Self) -> bool {
        self.signatures == other.signatures
            && self.vocab_hash == other.vocab_hash
            && self.config_hash == other.config_hash
    }
}

impl SignatureDb {
    /// Indexes `signatures`; ids must be unique and BoW words below `vocab_size`.
    pub fn new(
        signatures: Vec<ImageSignature>,
        vocab_size: usize,
        vocab_hash: [u8; 32],
        config_hash: [u8; 32],
    ) -> Result<Self> {
        let bows: Vec<(String, BowVector)> = signatures
            .iter()
            .map(|s| (s.image_id.clone(), s.bow.clone()))
            .collect();
        let index = index_build(&bows, vocab_size)?;
        let by_id = signatures
            .iter()
            .enumerate()
            .map(|(i, s)| (s.image_id.clone(), i))
            .collect();
        Ok(SignatureDb {
            signatures,
            index,
            by_id,
            vocab_hash,
            config_hash,
            neighbor_cache: None,
        })
    }

    pub fn signatures(&self) -> &[ImageSignature] {
        &self.signatures
    }

    pub fn index(&self) -> &InvertedIndex {
        &self.index
    }

    pub fn vocab_hash(&self) -> &[u8; 32] {
        &self.vocab_hash
    }

    pub fn config_hash(&self) -> &[u8; 32] {
        &self.config_hash
    }

    pub fn len(&self) -> usize {
        self.signatures.len()
    }

    pub fn is_empty(&self) -> bool {
        self.signatures.is_empty()
    }

    pub fn get(&self, image_id: &str) -> Option<&ImageSignature> {
        self.by_id.get(image_id).map(|&i| &self.signatures[i])
    }

    /// Precomputes the spatial neighbour tables used by GV scoring for the
    /// given `alpha`. Queries with another `alpha` build their own.
    pub fn cache_neighbors(&mut self, alpha: usize) {
        if self.neighbor_cache.as_ref().is_some_and(|c| c.0 == alpha) {
            return;
        }
        let tables = self
            .signatures
            .iter()
            .map(|s| NeighborTable::build(&s.keypoints, alpha))
            .collect();
        self.neighbor_cache = Some((alpha, tables));
    }

    fn cached_neighbors(&self, ordinal: usize, alpha: usize) -> Option<&NeighborTable> {
        match &self.neighbor_cache {
            Some((a, tables)) if *a == alpha => Some(&tables[ordinal]),
            _ => None,
        }
    }

    /// Position of `image_id` in the database.
    pub fn ordinal(&self, image_id: &str) -> Option<usize> {
        self.by_id.get(image_id).copied()
    }

    /// Checks that the postings reproduce every stored BoW vector exactly.
    pub fn verify_index(&self) -> Result<()> {
        for (i, s) in self.signatures.iter().enumerate() {
            if self.index.reconstruct(i) != s.bow {
                return Err(Error::Database(alloc::format!(
                    "index disagrees with `{}`",
                    s.image_id
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum ScoreMethod {
    Bow,
    Lr,
    Gv,
}

impl ScoreMethod {
    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "bow" => Ok(ScoreMethod::Bow),
            "lr" => Ok(ScoreMethod::Lr),
            "gv" => Ok(ScoreMethod::Gv),
            other => Err(Error::param(
                "method",
                alloc::format!("unknown method `{other}`"),
            )),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            ScoreMethod::Bow => "bow",
            ScoreMethod::Lr => "lr",
            ScoreMethod::Gv => "gv",
        }
    }

    /// Smaller is better for BoW distances, larger for match counts.
    pub fn ascending(&self) -> bool {
        matches!(self, ScoreMethod::Bow)
    }

    fn match_method(&self) -> Option<MatchMethod> {
        match self {
            ScoreMethod::Bow => None,
            ScoreMethod::Lr => Some(MatchMethod::Lr),
            ScoreMethod::Gv => Some(MatchMethod::Gv),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct RankedImage {
    pub image_id: String,
    pub score: f64,
    /// Method that produced `score`.
    pub method: ScoreMethod,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct StageTimings {
    pub prefilter_ms: f64,
    pub rerank_ms: f64,
    pub total_ms: f64,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct RetrievalResult {
    pub ranking: Vec<RankedImage>,
    pub timings: StageTimings,
}

impl RetrievalResult {
    pub fn ids(&self) -> Vec<&str> {
        self.ranking.iter().map(|r| r.image_id.as_str()).collect()
    }
}

/// Millisecond clock used for stage timings.
pub trait Clock {
    fn now_ms(&self) -> f64;
}

/// Reports zero for every stage.
#[derive(Debug, Clone, Copy, Default)]
pub struct NoClock;

impl Clock for NoClock {
    fn now_ms(&self) -> f64 {
        0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct QueryParams {
    pub matching: MatchParams,
    pub top_t: usize,
}

impl Default for QueryParams {
    fn default() -> Self {
        QueryParams {
            matching: MatchParams::default(),
            top_t: DEFAULT_TOP_T,
        }
    }
}

/// Query-side state reused across all candidates of one query.
pub struct PreparedQuery<'a> {
    signature: &'a ImageSignature,
    neighbors: Option<NeighborTable>,
    params: MatchParams,
}

impl<'a> PreparedQuery<'a> {
    pub fn new(signature: &'a ImageSignature, method: ScoreMethod, params: &MatchParams) -> Self {
        let neighbors = (method == ScoreMethod::Gv)
            .then(|| NeighborTable::build(&signature.keypoints, params.gv.alpha));
        PreparedQuery {
            signature,
            neighbors,
            params: *params,
        }
    }

    /// Match count against one candidate under `method` (LR or GV).
    pub fn match_count(&self, candidate: &ImageSignature, method: MatchMethod) -> usize {
        self.match_count_with(candidate, None, method)
    }

    /// As [`match_count`](Self::match_count), reusing the candidate's
    /// neighbour table when one is supplied.
    pub fn match_count_with(
        &self,
        candidate: &ImageSignature,
        candidate_neighbors: Option<&NeighborTable>,
        method: MatchMethod,
    ) -> usize {
        let m = putative_matches(&self.signature.descriptors, &candidate.descriptors);
        match method {
            MatchMethod::Lr => lr_filter(&m, self.params.ratio).len(),
            MatchMethod::Gv => {
                let own;
                let nq = match &self.neighbors {
                    Some(t) => t,
                    None => {
                        own = NeighborTable::build(&self.signature.keypoints, self.params.gv.alpha);
                        &own
                    }
                };
                let built;
                let ni = match candidate_neighbors {
                    Some(t) => t,
                    None => {
                        built = NeighborTable::build(&candidate.keypoints, self.params.gv.alpha);
                        &built
                    }
                };
                gv_filter_with(&m, nq, ni, &self.params.gv).len()
            }
        }
    }

    /// Score of one candidate; BoW distance or match count.
    pub fn score(&self, candidate: &ImageSignature, method: ScoreMethod) -> f64 {
        self.score_with(candidate, None, method)
    }

    fn score_with(
        &self,
        candidate: &ImageSignature,
        neighbors: Option<&NeighborTable>,
        method: ScoreMethod,
    ) -> f64 {
        match method.match_method() {
            None => bow_distance(&self.signature.bow, &candidate.bow),
            Some(m) => self.match_count_with(candidate, neighbors, m) as f64,
        }
    }
}

fn sort_ranking(ranking: &mut [RankedImage], ascending: bool) {
    ranking.sort_by(|a, b| {
        let by_score = if ascending {
            a.score.total_cmp(&b.score)
        } else {
            b.score.total_cmp(&a.score)
        };
        by_score.then_with(|| a.image_id.cmp(&b.image_id))
    });
}

/// Scores every database signature except the query's own id.
pub fn query_full(
    db: &SignatureDb,
    query: &ImageSignature,
    method: ScoreMethod,
    params: &QueryParams,
    clock: &dyn Clock,
) -> Result<RetrievalResult> {
    if db.is_empty() {
        return Err(Error::Database("database is empty".into()));
    }
    params.matching.validate()?;
    let start = clock.now_ms();
    let prepared = PreparedQuery::new(query, method, &params.matching);
    let mut ranking: Vec<RankedImage> = db
        .signatures
        .iter()
        .enumerate()
        .filter(|(_, s)| s.image_id != query.image_id)
        .map(|(i, s)| {
            let cached = db.cached_neighbors(i, params.matching.gv.alpha);
            RankedImage {
                image_id: s.image_id.clone(),
                score: prepared.score_with(s, cached, method),
                method,
            }
        })
        .collect();
    sort_ranking(&mut ranking, method.ascending());
    let total = clock.now_ms() - start;
    let timings = match method {
        ScoreMethod::Bow => StageTimings {
            prefilter_ms: total,
            rerank_ms: 0.0,
            total_ms: total,
        },
        _ => StageTimings {
            prefilter_ms: 0.0,
            rerank_ms: total,
            total_ms: total,
        },
    };
    Ok(RetrievalResult { ranking, timings })
}

/// BoW prefilter through the inverted index, then `rerank` on the best
/// `top_t` candidates. The reranked block comes first.
pub fn query_two_stage(
    db: &SignatureDb,
    query: &ImageSignature,
    rerank: MatchMethod,
    params: &QueryParams,
    clock: &dyn Clock,
) -> Result<RetrievalResult> {
    if params.top_t < 1 {
        return Err(Error::param("top_t", "must be >= 1"));
    }
    if db.is_empty() {
        return Err(Error::Database("database is empty".into()));
    }
    params.matching.validate()?;
    let method = match rerank {
        MatchMethod::Lr => ScoreMethod::Lr,
        MatchMethod::Gv => ScoreMethod::Gv,
    };
    let start = clock.now_ms();
    let own = db.ordinal(&query.image_id);
    let bow_order = db.index.rank(&query.bow, db.len(), own);
    let split = clock.now_ms();

    let prepared = PreparedQuery::new(query, method, &params.matching);
    let cut = params.top_t.min(bow_order.len());
    let mut head: Vec<RankedImage> = bow_order[..cut]
        .iter()
        .map(|&(i, _)| {
            let s = &db.signatures[i];
            let cached = db.cached_neighbors(i, params.matching.gv.alpha);
            let score = prepared.match_count_with(s, cached, rerank) as f64;
            RankedImage {
                image_id: s.image_id.clone(),
                score,
                method,
            }
        })
        .collect();
    sort_ranking(&mut head, false);
    let done = clock.now_ms();

    head.extend(bow_order[cut..].iter().map(|&(i, d)| RankedImage {
        image_id: db.signatures[i].image_id.clone(),
        score: d,
        method: ScoreMethod::Bow,
    }));
    Ok(RetrievalResult {
        ranking: head,
        timings: StageTimings {
            prefilter_ms: split - start,
            rerank_ms: done - split,
            total_ms: done - start,
        },
    })
}

/// Orders `(score, id)` pairs the way a ranking for `method` would.
pub fn compare_scored(method: ScoreMethod, a: (f64, &str), b: (f64, &str)) -> Ordering {
    let by_score = if method.ascending() {
        a.0.total_cmp(&b.0)
    } else {
        b.0.total_cmp(&a.0)
    };
    by_score.then_with(|| a.1.cmp(b.1))
}
