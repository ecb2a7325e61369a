use std::collections::BTreeSet;

use barkid_core::descriptor::DescriptorProvider;
use barkid_core::detector::DetectorConfig;
use barkid_core::matching::MatchMethod;
use barkid_core::metrics::recall_at_k;
use barkid_core::pixels::Image;
use barkid_core::retrieval::{
    describe_image, extract_signature, query_full, query_two_stage, ImageSignature, NoClock, QueryParams,
    ScoreMethod, SignatureDb,
};
use barkid_core::synth::{synth_corpus_with, synth_distractors, SynthParams};
use barkid_core::vocabulary::{train_vocab, KMeansParams, Vocabulary};

const SIZE: u32 = 256;

fn vocabulary(seed: u64) -> Vocabulary {
    let train = synth_corpus_with(&SynthParams { size: SIZE, ..SynthParams::new(seed, 3, 3, 0.05, 0.2) }).unwrap();
    let descriptors: Vec<_> = train
        .views
        .iter()
        .map(|v| describe_image(&v.image_id, &v.image, &DetectorConfig::builtin(), &DescriptorProvider::Builtin).unwrap().1)
        .collect();
    train_vocab(&descriptors, &KMeansParams { k: 64, seed, ..Default::default() }).unwrap()
}

fn signatures(images: &[(String, Image)], voc: &Vocabulary) -> Vec<ImageSignature> {
    images
        .iter()
        .map(|(id, img)| extract_signature(id, img, &DetectorConfig::builtin(), &DescriptorProvider::Builtin, voc).unwrap())
        .collect()
}

#[test]
fn noiseless_surface_fills_the_top_of_a_hundred_image_database() {
    let voc = vocabulary(1);
    let corpus = synth_corpus_with(&SynthParams { size: SIZE, ..SynthParams::new(2, 2, 12, 0.0, 0.0) }).unwrap();
    let mut images: Vec<(String, Image)> =
        corpus.views.iter().take(12).map(|v| (v.image_id.clone(), v.image.clone())).collect();
    images.extend(synth_distractors(3, 88, SIZE, 0.0).unwrap());
    let db = SignatureDb::new(signatures(&images, &voc), voc.k(), [0; 32], [0; 32]).unwrap();
    assert_eq!(db.len(), 100);

    let query = &db.signatures()[0];
    let relevant = &corpus.ground_truth[&query.image_id];
    for method in [ScoreMethod::Gv, ScoreMethod::Lr, ScoreMethod::Bow] {
        let result = query_full(&db, query, method, &QueryParams::default(), &NoClock).unwrap();
        let top: BTreeSet<String> = result.ids()[..11].iter().map(|s| s.to_string()).collect();
        assert_eq!(&top, relevant, "{}", method.name());
    }
}

#[test]
fn two_stage_recall_tracks_full_scan() {
    let voc = vocabulary(4);
    let corpus = synth_corpus_with(&SynthParams { size: SIZE, ..SynthParams::new(5, 6, 4, 0.05, 0.25) }).unwrap();
    let mut images: Vec<(String, Image)> = corpus.views.iter().map(|v| (v.image_id.clone(), v.image.clone())).collect();
    images.extend(synth_distractors(6, 40, SIZE, 0.25).unwrap());
    let mut db = SignatureDb::new(signatures(&images, &voc), voc.k(), [0; 32], [0; 32]).unwrap();
    db.cache_neighbors(QueryParams::default().matching.gv.alpha);
    let params = QueryParams { top_t: 12, ..QueryParams::default() };

    let (mut full, mut staged) = (0.0, 0.0);
    for q in db.signatures().iter().take(24).step_by(2) {
        let relevant = &corpus.ground_truth[&q.image_id];
        let a = query_full(&db, q, ScoreMethod::Gv, &params, &NoClock).unwrap();
        let b = query_two_stage(&db, q, MatchMethod::Gv, &params, &NoClock).unwrap();
        assert_eq!(a.ranking.len(), b.ranking.len());
        let ids = |r: &barkid_core::retrieval::RetrievalResult| r.ids().iter().map(|s| s.to_string()).collect::<Vec<_>>();
        full += recall_at_k(&ids(&a), relevant, 3).unwrap().unwrap();
        staged += recall_at_k(&ids(&b), relevant, 3).unwrap().unwrap();
    }
    assert!(full > 0.0);
    assert!(staged >= 0.95 * full, "two-stage {staged} vs full {full}");
}
