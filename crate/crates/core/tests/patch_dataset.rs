use barkid_core::detector::{detect, DetectorConfig};
use barkid_core::pixels::{downsample, Image};
use barkid_core::registration::{
    build_patch_dataset, consolidate_keypoints, select_spaced, ConsolidateParams, ImageObservation, Point2,
    ReferenceKeypoint,
};
use barkid_core::synth::{synth_corpus_with, SynthParams};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn ncc(a: &Image, b: &Image) -> f64 {
    let mean = |img: &Image| img.data().iter().map(|&v| v as f64).sum::<f64>() / img.data().len() as f64;
    let (ma, mb) = (mean(a), mean(b));
    let (mut ab, mut aa, mut bb) = (0.0, 0.0, 0.0);
    for (&x, &y) in a.data().iter().zip(b.data()) {
        let (x, y) = (x as f64 - ma, y as f64 - mb);
        ab += x * y;
        aa += x * x;
        bb += y * y;
    }
    ab / (aa * bb).sqrt()
}

fn greedy_oracle(points: &[ReferenceKeypoint], spacing: f64) -> Vec<ReferenceKeypoint> {
    let mut order: Vec<&ReferenceKeypoint> = points.iter().collect();
    order.sort_by(|a, b| {
        b.response
            .total_cmp(&a.response)
            .then(a.position.y.total_cmp(&b.position.y))
            .then(a.position.x.total_cmp(&b.position.x))
    });
    let mut kept: Vec<ReferenceKeypoint> = Vec::new();
    for p in order {
        if kept.iter().all(|k| k.position.distance_sq(&p.position).sqrt() >= spacing) {
            kept.push(*p);
        }
    }
    kept
}

#[test]
fn patches_of_one_keypoint_look_alike() {
    // Crops are not rectified, so the warp has to stay mild: corners move by
    // at most 10 px on a 512 px view.
    let params = SynthParams { size: 512, ..SynthParams::new(21, 2, 12, 0.02, 0.0) };
    let corpus = synth_corpus_with(&params).unwrap();
    let cfg = DetectorConfig { gamma: 5000, ..DetectorConfig::learned() };
    let consolidate = ConsolidateParams::default();

    for (manifest, views) in corpus.manifests.iter().zip(corpus.views.chunks(12)) {
        let keypoints: Vec<Vec<_>> = views
            .iter()
            .map(|v| detect(&v.image, &cfg).unwrap().iter().map(|k| k.to_original(cfg.phi)).collect())
            .collect();
        let observations: Vec<ImageObservation> = keypoints
            .iter()
            .zip(views)
            .map(|(k, v)| ImageObservation { keypoints: k, width: v.image.width(), height: v.image.height() })
            .collect();
        let aligned = consolidate_keypoints(manifest, &observations, &consolidate).unwrap();
        assert!(aligned.keypoints.len() > 20, "{} keypoints", aligned.keypoints.len());

        for (i, a) in aligned.keypoints.iter().enumerate() {
            for b in &aligned.keypoints[i + 1..] {
                assert!(a.position.distance_sq(&b.position).sqrt() >= consolidate.min_spacing);
            }
        }

        let downsized: Vec<Image> = views.iter().map(|v| downsample(&v.image, cfg.phi).unwrap()).collect();
        let archive = build_patch_dataset(&aligned, &downsized, cfg.phi).unwrap();
        let multi_view: usize = aligned
            .positions
            .iter()
            .map(|row| row.iter().flatten().count())
            .filter(|&n| n >= 2)
            .sum();
        assert_eq!(archive.rows.len(), multi_view);
        assert!(archive.rows.len() <= 12 * aligned.keypoints.len());

        let mut worst = f64::INFINITY;
        let mut start = 0;
        while start < archive.rows.len() {
            let id = archive.rows[start].keypoint_id;
            let end = start + archive.rows[start..].iter().take_while(|r| r.keypoint_id == id).count();
            for i in start..end {
                for j in i + 1..end {
                    worst = worst.min(ncc(&archive.patches[i], &archive.patches[j]));
                }
            }
            start = end;
        }
        assert!(worst >= 0.7, "lowest pairwise NCC {worst}");
    }
}

#[test]
fn spacing_selection_equals_greedy_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    for round in 0..3 {
        let points: Vec<ReferenceKeypoint> = (0..2000)
            .map(|_| ReferenceKeypoint {
                position: Point2::new(rng.random_range(0.0..1200.0), rng.random_range(0.0..900.0)),
                // Coarse responses force plenty of ties.
                response: rng.random_range(0..40) as f32 / 4.0,
            })
            .collect();
        let spacing = [32.0, 10.0, 57.5][round];
        assert_eq!(select_spaced(&points, spacing), greedy_oracle(&points, spacing));
    }
}
