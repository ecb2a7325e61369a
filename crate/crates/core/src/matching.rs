//! Putative descriptor matching and the two false-match filters.
//!
//! Every non-degenerate query descriptor is matched to its nearest database
//! descriptor. The ratio filter keeps matches whose nearest neighbour is
//! clearly closer than the second one. The neighbour-consistency filter keeps
//! a match `x -> y` when enough of the spatial neighbours of `x` are matched
//! into the spatial neighbours of `y`. The match score is the number of
//! surviving matches.

use alloc::vec;
use alloc::vec::Vec;

use crate::descriptor::{nearest_two_batch, Descriptor, DESCRIPTOR_DIM};
use crate::detector::Keypoint;
use crate::error::{Error, Result};
use crate::fmath;

pub const DEFAULT_RATIO: f32 = 0.8;

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Match {
    pub query_index: u32,
    pub db_index: u32,
    /// Squared distance to the nearest database descriptor.
    pub d1: f32,
    /// Squared distance to the second nearest, `INFINITY` if there is none.
    pub d2: f32,
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct GvParams {
    /// Spatial neighbours examined around each matched keypoint.
    pub alpha: usize,
    /// Fraction of those neighbours that must be matched consistently.
    pub rho: f64,
}

impl Default for GvParams {
    fn default() -> Self {
        GvParams {
            alpha: 15,
            rho: 0.33,
        }
    }
}

impl GvParams {
    pub fn validate(&self) -> Result<()> {
        if self.alpha < 1 {
            return Err(Error::param("alpha", "must be >= 1"));
        }
        if !(0.0..=1.0).contains(&self.rho) {
            return Err(Error::param(
                "rho",
                alloc::format!("must lie in [0, 1], got {}", self.rho),
            ));
        }
        Ok(())
    }

    /// Consistent neighbours required when `available` neighbours exist.
    pub fn threshold(&self, available: usize) -> usize {
        // The small slack keeps exact products such as 0.2 * 15 from rounding up.
        let need = self.rho * available as f64 - 1e-9;
        fmath::ceil(need).max(0.0) as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum MatchMethod {
    Lr,
    Gv,
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct MatchParams {
    pub ratio: f32,
    pub gv: GvParams,
}

impl Default for MatchParams {
    fn default() -> Self {
        MatchParams {
            ratio: DEFAULT_RATIO,
            gv: GvParams::default(),
        }
    }
}

impl MatchParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.ratio > 0.0 && self.ratio <= 1.0) {
            return Err(Error::param(
                "ratio",
                alloc::format!("must lie in (0, 1], got {}", self.ratio),
            ));
        }
        self.gv.validate()
    }
}

/// Nearest and second nearest database descriptor for every non-degenerate
/// query descriptor. Ties go to the lowest database index.
pub fn putative_matches(query: &[Descriptor], db: &[Descriptor]) -> Vec<Match> {
    let (positions, live): (Vec<u32>, Vec<&[f32; DESCRIPTOR_DIM]>) = db
        .iter()
        .enumerate()
        .filter(|(_, d)| !d.is_degenerate())
        .map(|(i, d)| (i as u32, d.values()))
        .unzip();
    if live.is_empty() {
        return Vec::new();
    }
    let (query_index, queries): (Vec<u32>, Vec<&[f32; DESCRIPTOR_DIM]>) = query
        .iter()
        .enumerate()
        .filter(|(_, q)| !q.is_degenerate())
        .map(|(i, q)| (i as u32, q.values()))
        .unzip();
    nearest_two_batch(&queries, &live)
        .into_iter()
        .zip(query_index)
        .map(|((best, d1, d2), qi)| Match {
            query_index: qi,
            db_index: positions[best],
            d1,
            d2,
        })
        .collect()
}

/// Ratio test on squared distances: keeps `d1 < ratio^2 * d2`.
pub fn lr_filter(matches: &[Match], ratio: f32) -> Vec<Match> {
    let r2 = ratio * ratio;
    matches
        .iter()
        .filter(|m| m.d2 == f32::INFINITY || m.d1 < r2 * m.d2)
        .copied()
        .collect()
}

/// The `alpha` spatially nearest other keypoints of every keypoint, closest
/// first, ties by index.
#[derive(Debug, Clone, PartialEq)]
pub struct NeighborTable {
    lists: Vec<Vec<u32>>,
}

impl NeighborTable {
    pub fn build(keypoints: &[Keypoint], alpha: usize) -> Self {
        let n = keypoints.len();
        let take = alpha.min(n.saturating_sub(1));
        let mut scratch: Vec<(f32, u32)> = Vec::with_capacity(n);
        let lists = keypoints
            .iter()
            .enumerate()
            .map(|(i, a)| {
                scratch.clear();
                scratch.extend(keypoints.iter().enumerate().filter(|(j, _)| *j != i).map(
                    |(j, b)| {
                        let (dx, dy) = (a.x - b.x, a.y - b.y);
                        (dx * dx + dy * dy, j as u32)
                    },
                ));
                let order =
                    |p: &(f32, u32), q: &(f32, u32)| p.0.total_cmp(&q.0).then(p.1.cmp(&q.1));
                if take < scratch.len() {
                    scratch.select_nth_unstable_by(take, order);
                    scratch.truncate(take);
                }
                scratch.sort_unstable_by(order);
                scratch.iter().map(|p| p.1).collect()
            })
            .collect();
        NeighborTable { lists }
    }

    pub fn neighbors(&self, i: usize) -> &[u32] {
        &self.lists[i]
    }

    pub fn len(&self) -> usize {
        self.lists.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lists.is_empty()
    }
}

/// Neighbour-consistency filter. `matches` is the full putative set and is
/// both filtered and used as the consistency reference.
pub fn gv_filter(
    matches: &[Match],
    query_kps: &[Keypoint],
    db_kps: &[Keypoint],
    params: &GvParams,
) -> Vec<Match> {
    let nq = NeighborTable::build(query_kps, params.alpha);
    let ni = NeighborTable::build(db_kps, params.alpha);
    gv_filter_with(matches, &nq, &ni, params)
}

/// [`gv_filter`] with precomputed neighbour tables.
pub fn gv_filter_with(
    matches: &[Match],
    query: &NeighborTable,
    db: &NeighborTable,
    params: &GvParams,
) -> Vec<Match> {
    let mut target = vec![u32::MAX; query.len()];
    for m in matches {
        target[m.query_index as usize] = m.db_index;
    }
    // stamp[y'] == s marks y' as a neighbour of the current db keypoint.
    let mut stamp = vec![0u32; db.len()];
    let mut kept = Vec::new();
    for (s, m) in matches.iter().enumerate() {
        let tag = s as u32 + 1;
        for &y in db.neighbors(m.db_index as usize) {
            stamp[y as usize] = tag;
        }
        let nx = query.neighbors(m.query_index as usize);
        let consistent = nx
            .iter()
            .filter(|&&x| {
                let t = target[x as usize];
                t != u32::MAX && stamp[t as usize] == tag
            })
            .count();
        if consistent >= params.threshold(nx.len()) {
            kept.push(*m);
        }
    }
    kept
}

/// Number of matches surviving the chosen filter.
pub fn match_score(
    query_kps: &[Keypoint],
    query_desc: &[Descriptor],
    db_kps: &[Keypoint],
    db_desc: &[Descriptor],
    method: MatchMethod,
    params: &MatchParams,
) -> usize {
    let m = putative_matches(query_desc, db_desc);
    match method {
        MatchMethod::Lr => lr_filter(&m, params.ratio).len(),
        MatchMethod::Gv => gv_filter(&m, query_kps, db_kps, &params.gv).len(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::descriptor::{l2_sq, DESCRIPTOR_DIM};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn unit(rng: &mut ChaCha8Rng) -> Descriptor {
        let mut v = [0.0f32; DESCRIPTOR_DIM];
        v.iter_mut().for_each(|x| *x = rng.random_range(-1.0..1.0));
        Descriptor::normalized(v)
    }

    fn basis(i: usize) -> Descriptor {
        let mut v = [0.0f32; DESCRIPTOR_DIM];
        v[i] = 1.0;
        Descriptor::from_unit(v).unwrap()
    }

    fn kp(x: f32, y: f32) -> Keypoint {
        Keypoint::new(x, y, 2.0, 0.0, 1.0)
    }

    #[test]
    fn self_match_on_basis() {
        let v = [basis(0), basis(1)];
        let m = putative_matches(&v, &v);
        assert_eq!(m.len(), 2);
        assert_eq!((m[0].db_index, m[0].d1), (0, 0.0));
        assert_eq!((m[1].db_index, m[1].d1), (1, 0.0));
        assert_eq!(m[0].d2, 2.0);
    }

    #[test]
    fn single_db_descriptor_has_no_second() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let q: Vec<Descriptor> = (0..5).map(|_| unit(&mut rng)).collect();
        let m = putative_matches(&q, &[unit(&mut rng)]);
        assert!(m.iter().all(|m| m.d2 == f32::INFINITY && m.db_index == 0));
        assert!(putative_matches(&q, &[]).is_empty());
        assert!(putative_matches(&q, &[Descriptor::degenerate()]).is_empty());
    }

    #[test]
    fn degenerate_descriptors_are_skipped() {
        let q = [basis(0), Descriptor::degenerate(), basis(2)];
        let db = [Descriptor::degenerate(), basis(2), basis(0)];
        let m = putative_matches(&q, &db);
        assert_eq!(m.len(), 2);
        assert_eq!((m[0].query_index, m[0].db_index), (0, 2));
        assert_eq!((m[1].query_index, m[1].db_index), (2, 1));
    }

    #[test]
    fn ties_go_to_lowest_index() {
        let q = [basis(0)];
        let db = [basis(1), basis(2), basis(0), basis(0)];
        let m = putative_matches(&q, &db);
        assert_eq!((m[0].db_index, m[0].d1, m[0].d2), (2, 0.0, 0.0));
    }

    fn brute_force(query: &[Descriptor], db: &[Descriptor]) -> Vec<Match> {
        let mut out = Vec::new();
        for (qi, q) in query.iter().enumerate() {
            if q.is_degenerate() {
                continue;
            }
            let mut dists: Vec<(f32, u32)> = db
                .iter()
                .enumerate()
                .filter(|(_, d)| !d.is_degenerate())
                .map(|(i, d)| (l2_sq(q.values(), d.values()), i as u32))
                .collect();
            if dists.is_empty() {
                return Vec::new();
            }
            dists.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            let d2 = dists.get(1).map_or(f32::INFINITY, |p| p.0);
            out.push(Match {
                query_index: qi as u32,
                db_index: dists[0].1,
                d1: dists[0].0,
                d2,
            });
        }
        out
    }

    #[test]
    fn putative_matches_equal_double_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let q: Vec<Descriptor> = (0..200).map(|_| unit(&mut rng)).collect();
        let db: Vec<Descriptor> = (0..200).map(|_| unit(&mut rng)).collect();
        assert_eq!(putative_matches(&q, &db), brute_force(&q, &db));
    }

    #[test]
    fn ratio_boundaries() {
        let m = |d1, d2| Match {
            query_index: 0,
            db_index: 0,
            d1,
            d2,
        };
        assert_eq!(lr_filter(&[m(0.0, 0.5)], 0.8).len(), 1);
        assert!(lr_filter(&[m(0.7, 0.7)], 0.8).is_empty());
        assert_eq!(lr_filter(&[m(0.7, f32::INFINITY)], 0.8).len(), 1);
    }

    proptest! {
        #[test]
        fn ratio_equals_unsquared_test(pairs in proptest::collection::vec((0.0f32..4.0, 0.0f32..4.0), 0..50)) {
            let matches: Vec<Match> = pairs
                .iter()
                .enumerate()
                .map(|(i, &(a, b))| Match { query_index: i as u32, db_index: 0, d1: a.min(b), d2: a.max(b) })
                .collect();
            let kept = lr_filter(&matches, 0.8);
            let oracle: Vec<Match> = matches
                .iter()
                .filter(|m| (m.d1 as f64).sqrt() < 0.8f32 as f64 * (m.d2 as f64).sqrt())
                .copied()
                .collect();
            prop_assert_eq!(kept, oracle);
        }
    }

    #[test]
    fn thresholds() {
        let p = GvParams::default();
        assert_eq!(p.threshold(15), 5);
        assert_eq!(p.threshold(3), 1);
        assert_eq!(p.threshold(0), 0);
        assert_eq!(
            GvParams {
                alpha: 15,
                rho: 0.2
            }
            .threshold(15),
            3
        );
        assert_eq!(
            GvParams {
                alpha: 15,
                rho: 1.0
            }
            .threshold(15),
            15
        );
        assert_eq!(
            GvParams {
                alpha: 15,
                rho: 0.0
            }
            .threshold(15),
            0
        );
        assert!(GvParams { alpha: 0, rho: 0.3 }.validate().is_err());
        assert!(GvParams { alpha: 3, rho: 1.5 }.validate().is_err());
    }

    #[test]
    fn neighbor_table_equals_sorted_scan() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        // Integer grid positions force many distance ties.
        let kps: Vec<Keypoint> = (0..80)
            .map(|_| {
                kp(
                    rng.random_range(0..12) as f32,
                    rng.random_range(0..12) as f32,
                )
            })
            .collect();
        let table = NeighborTable::build(&kps, 15);
        for i in 0..kps.len() {
            let mut all: Vec<(f32, u32)> = (0..kps.len())
                .filter(|&j| j != i)
                .map(|j| {
                    let (dx, dy) = (kps[i].x - kps[j].x, kps[i].y - kps[j].y);
                    (dx * dx + dy * dy, j as u32)
                })
                .collect();
            all.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            let expect: Vec<u32> = all.iter().take(15).map(|p| p.1).collect();
            assert_eq!(table.neighbors(i), &expect[..]);
        }
        assert_eq!(NeighborTable::build(&kps[..4], 15).neighbors(0).len(), 3);
    }

    #[test]
    fn identical_images_keep_everything() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let kps: Vec<Keypoint> = (0..60)
            .map(|_| kp(rng.random_range(0.0..200.0), rng.random_range(0.0..200.0)))
            .collect();
        let desc: Vec<Descriptor> = (0..60).map(|_| unit(&mut rng)).collect();
        let m = putative_matches(&desc, &desc);
        assert_eq!(gv_filter(&m, &kps, &kps, &GvParams::default()).len(), 60);
        assert_eq!(
            gv_filter(
                &m,
                &kps,
                &kps,
                &GvParams {
                    alpha: 15,
                    rho: 1.0
                }
            )
            .len(),
            60
        );
        assert_eq!(
            match_score(
                &kps,
                &desc,
                &kps,
                &desc,
                MatchMethod::Gv,
                &MatchParams::default()
            ),
            60
        );
    }

    #[test]
    fn rho_zero_keeps_all() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let kq: Vec<Keypoint> = (0..30)
            .map(|_| kp(rng.random_range(0.0..50.0), rng.random_range(0.0..50.0)))
            .collect();
        let ki: Vec<Keypoint> = (0..30)
            .map(|_| kp(rng.random_range(0.0..50.0), rng.random_range(0.0..50.0)))
            .collect();
        let m: Vec<Match> = (0..30)
            .map(|i| Match {
                query_index: i,
                db_index: rng.random_range(0..30),
                d1: 0.1,
                d2: 0.2,
            })
            .collect();
        assert_eq!(
            gv_filter(
                &m,
                &kq,
                &ki,
                &GvParams {
                    alpha: 15,
                    rho: 0.0
                }
            ),
            m
        );
    }

    #[test]
    fn incoherent_matches_are_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut kept = 0usize;
        let trials = 100;
        for _ in 0..trials {
            let kq: Vec<Keypoint> = (0..200)
                .map(|_| kp(rng.random_range(0.0..500.0), rng.random_range(0.0..500.0)))
                .collect();
            let mut perm: Vec<u32> = (0..200).collect();
            for i in (1..perm.len()).rev() {
                perm.swap(i, rng.random_range(0..=i));
            }
            let m: Vec<Match> = (0..200)
                .map(|i| Match {
                    query_index: i,
                    db_index: perm[i as usize],
                    d1: 0.1,
                    d2: 0.5,
                })
                .collect();
            kept += gv_filter(&m, &kq, &kq, &GvParams::default()).len();
        }
        let fraction = kept as f64 / (trials * 200) as f64;
        assert!(fraction < 0.10, "{fraction}");
    }

    #[test]
    fn disjoint_signatures_score_low() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let kq: Vec<Keypoint> = (0..200)
            .map(|_| kp(rng.random_range(0.0..500.0), rng.random_range(0.0..500.0)))
            .collect();
        let ki: Vec<Keypoint> = (0..200)
            .map(|_| kp(rng.random_range(0.0..500.0), rng.random_range(0.0..500.0)))
            .collect();
        let vq: Vec<Descriptor> = (0..200).map(|_| unit(&mut rng)).collect();
        let vi: Vec<Descriptor> = (0..200).map(|_| unit(&mut rng)).collect();
        let g = match_score(&kq, &vq, &ki, &vi, MatchMethod::Gv, &MatchParams::default());
        assert!(g <= 10, "{g}");
        let lr = match_score(&kq, &vq, &ki, &vi, MatchMethod::Lr, &MatchParams::default());
        assert!(lr <= 200);
    }

    #[test]
    fn hand_built_scenario() {
        // Query: a tight cluster of four plus two far points.
        let kq = [
            kp(0.0, 0.0),
            kp(1.0, 0.0),
            kp(0.0, 1.0),
            kp(1.0, 1.0),
            kp(50.0, 50.0),
            kp(90.0, 0.0),
        ];
        // Database: the cluster shifted; the far points swapped around.
        let ki = [
            kp(10.0, 10.0),
            kp(11.0, 10.0),
            kp(10.0, 11.0),
            kp(11.0, 11.0),
            kp(90.0, 0.0),
            kp(50.0, 50.0),
        ];
        let m: Vec<Match> = [(0, 0), (1, 1), (2, 2), (3, 3), (4, 4), (5, 5)]
            .iter()
            .map(|&(q, d)| Match {
                query_index: q,
                db_index: d,
                d1: 0.0,
                d2: 1.0,
            })
            .collect();
        let p = GvParams {
            alpha: 3,
            rho: 0.66,
        };
        // Cluster points see their three mates matched into the shifted
        // cluster. Query point 4 has neighbours {5, 3, 1}, all matched into
        // the neighbours {5, 1, 3} of db point 4. Query point 5 has {4, 1, 3}
        // against db neighbours {3, 1, 2}: two of three.
        let kept = gv_filter(&m, &kq, &ki, &p);
        assert_eq!(kept.len(), 6);
        let strict = gv_filter(&m, &kq, &ki, &GvParams { alpha: 3, rho: 1.0 });
        assert_eq!(
            strict.iter().map(|m| m.query_index).collect::<Vec<_>>(),
            vec![0, 1, 2, 3, 4]
        );
    }
}
