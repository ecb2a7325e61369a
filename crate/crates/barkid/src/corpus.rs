//! Corpus manifests: surfaces with their registration data, distractor
//! images and the ground truth, with image paths relative to the manifest.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use barkid_core::registration::SurfaceManifest;
use barkid_core::synth::{synth_corpus_with, synth_distractors, SynthParams};
use barkid_core::Image;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::formats::{read_file, write_file};
use crate::imageio::{load_image, save_png};

pub const MANIFEST_NAME: &str = "corpus.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DistractorEntry {
    pub image_id: String,
    pub path: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusManifest {
    pub surfaces: Vec<SurfaceManifest>,
    #[serde(default)]
    pub distractors: Vec<DistractorEntry>,
    /// Relevant images per query id. Derived from `surfaces` when absent.
    #[serde(default)]
    pub ground_truth: BTreeMap<String, BTreeSet<String>>,
}

/// One image of the corpus.
#[derive(Debug, Clone, PartialEq)]
pub struct CorpusImage {
    pub image_id: String,
    pub surface_id: Option<String>,
    pub path: PathBuf,
}

#[derive(Debug, Clone)]
pub struct Corpus {
    pub manifest: CorpusManifest,
    pub root: PathBuf,
}

impl Corpus {
    /// Accepts the manifest file or the directory holding `corpus.json`.
    pub fn load(path: &Path) -> Result<Self> {
        let file = if path.is_dir() { path.join(MANIFEST_NAME) } else { path.to_path_buf() };
        let bytes = read_file(&file)?;
        let mut manifest: CorpusManifest =
            serde_json::from_slice(&bytes).map_err(|e| Error::format(&file, e.to_string()))?;
        for s in &manifest.surfaces {
            s.validate()?;
        }
        if manifest.ground_truth.is_empty() {
            manifest.ground_truth = surface_ground_truth(&manifest.surfaces);
        }
        let root = file.parent().map(Path::to_path_buf).unwrap_or_default();
        let corpus = Corpus { manifest, root };
        let mut seen = BTreeSet::new();
        for img in corpus.images() {
            if !seen.insert(img.image_id.clone()) {
                return Err(Error::format(&file, format!("duplicate image id `{}`", img.image_id)));
            }
        }
        Ok(corpus)
    }

    /// Surface views in manifest order, then distractors.
    pub fn images(&self) -> Vec<CorpusImage> {
        let mut out = Vec::new();
        for s in &self.manifest.surfaces {
            for img in &s.images {
                out.push(CorpusImage {
                    image_id: img.image_id.clone(),
                    surface_id: Some(s.surface_id.clone()),
                    path: self.root.join(&img.path),
                });
            }
        }
        for d in &self.manifest.distractors {
            out.push(CorpusImage { image_id: d.image_id.clone(), surface_id: None, path: self.root.join(&d.path) });
        }
        out
    }

    pub fn ground_truth(&self) -> &BTreeMap<String, BTreeSet<String>> {
        &self.manifest.ground_truth
    }
}

pub fn surface_ground_truth(surfaces: &[SurfaceManifest]) -> BTreeMap<String, BTreeSet<String>> {
    let mut gt = BTreeMap::new();
    for s in surfaces {
        let ids: BTreeSet<String> = s.images.iter().map(|i| i.image_id.clone()).collect();
        for id in &ids {
            let mut rel = ids.clone();
            rel.remove(id);
            gt.insert(id.clone(), rel);
        }
    }
    gt
}

pub fn load_images(images: &[CorpusImage]) -> Result<Vec<Image>> {
    crate::pipeline::pool().install(|| {
        use rayon::prelude::*;
        images.par_iter().map(|i| load_image(&i.path)).collect()
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SynthRequest {
    pub params: SynthParams,
    pub distractors: usize,
}

/// Renders a synthetic corpus into `dir`: `images/`, `distractors/` and
/// `corpus.json`. Returns the manifest path.
pub fn write_synth(dir: &Path, req: &SynthRequest) -> Result<PathBuf> {
    let corpus = synth_corpus_with(&req.params)?;
    for v in &corpus.views {
        save_png(&dir.join("images").join(format!("{}.png", v.image_id)), &v.image)?;
    }
    let mut distractors = Vec::new();
    let rendered = synth_distractors(req.params.seed, req.distractors, req.params.size, req.params.illum_jitter)?;
    for (id, img) in rendered {
        let path = format!("distractors/{id}.png");
        save_png(&dir.join(&path), &img)?;
        distractors.push(DistractorEntry { image_id: id, path });
    }
    let manifest = CorpusManifest { surfaces: corpus.manifests, distractors, ground_truth: corpus.ground_truth };
    let file = dir.join(MANIFEST_NAME);
    write_file(&file, &serde_json::to_vec_pretty(&manifest).expect("manifest serializes"))?;
    Ok(file)
}
