//! Patch archives for descriptor training, and the per-keypoint patch
//! requests an external descriptor file must answer.
//!
//! Layout under the archive root:
//! `<surface>/<keypoint>/<image>.png` with `manifest.jsonl`,
//! `requests/<image>/<index>.png` with `requests.jsonl`,
//! `keypoints/<image>.jsonl` and `homographies.json`.

use std::collections::BTreeMap;
use std::path::Path;

use barkid_core::descriptor::crop_patch;
use barkid_core::detector::{detect, DetectorConfig};
use barkid_core::pixels::downsample;
use barkid_core::registration::{build_patch_dataset, consolidate_keypoints, ConsolidateParams, ImageObservation, PatchRow};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::Corpus;
use crate::error::Result;
use crate::formats::keypoints::to_jsonl;
use crate::formats::write_file;
use crate::imageio::{load_image, save_png};
use crate::pipeline::pool;

/// A keypoint of a corpus image whose descriptor is requested, by its
/// index in that image's detection order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatchRequest {
    pub image_id: String,
    pub keypoint_index: u32,
    pub path: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ArchiveSummary {
    pub surfaces: usize,
    pub keypoints: usize,
    pub patches: usize,
    pub requests: usize,
}

fn jsonl<T: Serialize>(rows: &[T]) -> String {
    rows.iter().map(|r| serde_json::to_string(r).expect("row serializes") + "\n").collect()
}

pub fn write_archive(corpus: &Corpus, cfg: &DetectorConfig, min_spacing: f64, out: &Path) -> Result<ArchiveSummary> {
    cfg.validate()?;
    let params = ConsolidateParams { min_spacing, phi: cfg.phi, ..ConsolidateParams::default() };
    let mut summary = ArchiveSummary::default();
    let mut rows: Vec<PatchRow> = Vec::new();
    let mut homographies: BTreeMap<String, BTreeMap<String, [f64; 9]>> = BTreeMap::new();

    for manifest in &corpus.manifest.surfaces {
        let (images, keypoints): (Vec<_>, Vec<_>) = pool().install(|| {
            manifest
                .images
                .par_iter()
                .map(|entry| {
                    let img = load_image(&corpus.root.join(&entry.path))?;
                    let kps: Vec<_> = detect(&img, cfg)?.iter().map(|k| k.to_original(cfg.phi)).collect();
                    Ok((img, kps))
                })
                .collect::<Result<Vec<_>>>()
        })?
        .into_iter()
        .unzip();
        let observations: Vec<ImageObservation> = keypoints
            .iter()
            .zip(&images)
            .map(|(k, img)| ImageObservation { keypoints: k, width: img.width(), height: img.height() })
            .collect();
        let aligned = consolidate_keypoints(manifest, &observations, &params)?;
        let downsized = images.iter().map(|img| downsample(img, cfg.phi)).collect::<barkid_core::Result<Vec<_>>>()?;
        let archive = build_patch_dataset(&aligned, &downsized, cfg.phi)?;
        for (row, patch) in archive.rows.iter().zip(&archive.patches) {
            save_png(&out.join(&row.path), patch)?;
        }
        summary.surfaces += 1;
        summary.keypoints += archive.rows.iter().map(|r| r.keypoint_id).collect::<std::collections::BTreeSet<_>>().len();
        summary.patches += archive.rows.len();
        rows.extend(archive.rows);
        homographies.insert(
            manifest.surface_id.clone(),
            aligned.image_ids.iter().cloned().zip(aligned.to_reference.iter().map(|h| h.to_row_major())).collect(),
        );
    }
    write_file(&out.join("manifest.jsonl"), jsonl(&rows).as_bytes())?;
    write_file(&out.join("homographies.json"), &serde_json::to_vec_pretty(&homographies).expect("serializes"))?;

    let requests: Vec<Vec<PatchRequest>> = pool().install(|| {
        corpus
            .images()
            .par_iter()
            .map(|entry| {
                let img = load_image(&entry.path)?;
                let kps = detect(&img, cfg)?;
                let original: Vec<_> = kps.iter().map(|k| k.to_original(cfg.phi)).collect();
                write_file(&out.join("keypoints").join(format!("{}.jsonl", entry.image_id)), to_jsonl(&original).as_bytes())?;
                let small = downsample(&img, cfg.phi)?;
                kps.iter()
                    .enumerate()
                    .map(|(i, kp)| {
                        let path = format!("requests/{}/{i}.png", entry.image_id);
                        save_png(&out.join(&path), &crop_patch(&small, kp, &entry.image_id).pixels)?;
                        Ok(PatchRequest { image_id: entry.image_id.clone(), keypoint_index: i as u32, path })
                    })
                    .collect()
            })
            .collect::<Result<Vec<_>>>()
    })?;
    let requests: Vec<PatchRequest> = requests.into_iter().flatten().collect();
    summary.requests = requests.len();
    write_file(&out.join("requests.jsonl"), jsonl(&requests).as_bytes())?;
    Ok(summary)
}
