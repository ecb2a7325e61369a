use std::collections::BTreeSet;

use barkid_core::descriptor::Descriptor;
use barkid_core::detector::{detect, DetectorConfig, Keypoint};
use barkid_core::matching::{gv_filter, lr_filter, putative_matches, GvParams, Match};
use barkid_core::pixels::Image;
use barkid_core::vocabulary::{bow_distance, BowVector};
use proptest::prelude::*;

/// Exhaustive neighbour-consistency check with integer thresholds.
fn gv_oracle(matches: &[Match], kq: &[Keypoint], ki: &[Keypoint], alpha: usize, rho_percent: usize) -> Vec<Match> {
    let nearest = |kps: &[Keypoint], i: usize| -> Vec<usize> {
        let mut others: Vec<(f32, usize)> = (0..kps.len())
            .filter(|&j| j != i)
            .map(|j| {
                let (dx, dy) = (kps[i].x - kps[j].x, kps[i].y - kps[j].y);
                (dx * dx + dy * dy, j)
            })
            .collect();
        others.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        others.into_iter().take(alpha).map(|p| p.1).collect()
    };
    matches
        .iter()
        .filter(|m| {
            let nx = nearest(kq, m.query_index as usize);
            let ny: BTreeSet<usize> = nearest(ki, m.db_index as usize).into_iter().collect();
            let n = nx
                .iter()
                .filter(|&&x| matches.iter().any(|o| o.query_index as usize == x && ny.contains(&(o.db_index as usize))))
                .count();
            let need = (rho_percent * nx.len()).div_ceil(100);
            n >= need
        })
        .copied()
        .collect()
}

fn keypoints(coords: &[(u8, u8)]) -> Vec<Keypoint> {
    coords.iter().map(|&(x, y)| Keypoint::new(x as f32 / 4.0, y as f32 / 4.0, 2.0, 0.0, 1.0)).collect()
}

fn gv_instance() -> impl Strategy<Value = (Vec<(u8, u8)>, Vec<(u8, u8)>, Vec<(usize, usize)>, usize, usize)> {
    (2usize..=50, 2usize..=50).prop_flat_map(|(nq, ni)| {
        (
            proptest::collection::vec((0u8..64, 0u8..64), nq),
            proptest::collection::vec((0u8..64, 0u8..64), ni),
            proptest::collection::vec((0..nq, 0..ni), 0..=nq),
            1usize..=20,
            0usize..=100,
        )
    })
}

fn unit_descriptor(raw: &[f32]) -> Descriptor {
    let mut v = [0.0f32; 128];
    for (slot, r) in v.iter_mut().zip(raw.iter().cycle()) {
        *slot = *r;
    }
    Descriptor::normalized(v)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn gv_keeps_exactly_the_consistent_matches((q, i, pairs, alpha, rho) in gv_instance()) {
        let (kq, ki) = (keypoints(&q), keypoints(&i));
        let mut seen = BTreeSet::new();
        let matches: Vec<Match> = pairs
            .into_iter()
            .filter(|(a, _)| seen.insert(*a))
            .map(|(a, b)| Match { query_index: a as u32, db_index: b as u32, d1: 0.0, d2: 1.0 })
            .collect();
        let params = GvParams { alpha, rho: rho as f64 / 100.0 };
        prop_assert_eq!(gv_filter(&matches, &kq, &ki, &params), gv_oracle(&matches, &kq, &ki, alpha, rho));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn ratio_filter_keeps_a_subset_of_putative_matches(
        q in proptest::collection::vec(proptest::collection::vec(0.0f32..1.0, 8), 1..20),
        d in proptest::collection::vec(proptest::collection::vec(0.0f32..1.0, 8), 1..20),
        ratio in 0.1f32..1.0,
    ) {
        let q: Vec<Descriptor> = q.iter().map(|r| unit_descriptor(r)).collect();
        let d: Vec<Descriptor> = d.iter().map(|r| unit_descriptor(r)).collect();
        let all = putative_matches(&q, &d);
        let kept = lr_filter(&all, ratio);
        prop_assert!(kept.iter().all(|m| all.contains(m)));
        prop_assert!(all.iter().all(|m| m.d1 <= m.d2));
        prop_assert!(lr_filter(&all, 1.0).len() >= kept.len());
    }

    #[test]
    fn bow_distance_is_a_bounded_symmetric_dissimilarity(
        a in proptest::collection::btree_map(0u32..50, 0.01f64..1.0, 0..12),
        b in proptest::collection::btree_map(0u32..50, 0.01f64..1.0, 0..12),
    ) {
        let a = BowVector::from_weights(a.into_iter().collect()).unwrap();
        let b = BowVector::from_weights(b.into_iter().collect()).unwrap();
        let d = bow_distance(&a, &b);
        prop_assert_eq!(d, bow_distance(&b, &a));
        prop_assert!((0.0..=2.0 + 1e-12).contains(&d));
        prop_assert!(bow_distance(&a, &a) < 1e-12);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn detection_is_deterministic_capped_and_ordered(seed in any::<u64>(), gamma in 1usize..200) {
        let mut state = seed | 1;
        let img = Image::from_fn(96, 96, |_, _| {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            (state >> 56) as u8
        })
        .unwrap();
        let cfg = DetectorConfig { gamma, phi: 1.0, sigma_blur: 0.0, ..DetectorConfig::builtin() };
        let first = detect(&img, &cfg).unwrap();
        prop_assert_eq!(&first, &detect(&img, &cfg).unwrap());
        prop_assert!(first.len() <= gamma);
        prop_assert!(first.windows(2).all(|w| w[0].response >= w[1].response));
    }
}
