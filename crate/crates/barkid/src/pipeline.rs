//! Parallel signature extraction shared by the commands and the test suites.

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;
use std::sync::OnceLock;

use barkid_core::descriptor::{Descriptor, DescriptorProvider};
use barkid_core::detector::{DetectorConfig, Keypoint};
use barkid_core::retrieval::{describe_image, ImageSignature, SignatureDb};
use barkid_core::vocabulary::{quantize, train_vocab, BowVector, KMeansParams, Vocabulary};
use barkid_core::Image;
use rayon::prelude::*;
use serde_json::json;

use crate::corpus::CorpusImage;
use crate::error::{Error, Result};
use crate::formats::{descriptors, read_file, sha256};
use crate::imageio::load_image;

pub const THREADS_ENV: &str = "BARKID_THREADS";

/// Worker pool sized by `BARKID_THREADS` when set.
pub fn pool() -> &'static rayon::ThreadPool {
    static POOL: OnceLock<rayon::ThreadPool> = OnceLock::new();
    POOL.get_or_init(|| {
        let threads = std::env::var(THREADS_ENV).ok().and_then(|v| v.parse::<usize>().ok()).unwrap_or(0);
        rayon::ThreadPoolBuilder::new().num_threads(threads).build().expect("thread pool")
    })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DescriptorSource {
    Builtin,
    External(PathBuf),
}

impl FromStr for DescriptorSource {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "builtin" => Ok(DescriptorSource::Builtin),
            _ => match s.strip_prefix("external:") {
                Some(p) if !p.is_empty() => Ok(DescriptorSource::External(PathBuf::from(p))),
                _ => Err(Error::Config(format!("descriptor must be `builtin` or `external:<path>`, got `{s}`"))),
            },
        }
    }
}

impl fmt::Display for DescriptorSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DescriptorSource::Builtin => f.write_str("builtin"),
            DescriptorSource::External(p) => write!(f, "external:{}", p.display()),
        }
    }
}

/// A loaded descriptor provider and the hash identifying its contents.
pub struct Provider {
    pub provider: DescriptorProvider,
    pub identity: String,
}

impl Provider {
    pub fn load(source: &DescriptorSource) -> Result<Self> {
        match source {
            DescriptorSource::Builtin => Ok(Provider { provider: DescriptorProvider::Builtin, identity: "builtin".into() }),
            DescriptorSource::External(path) => {
                let bytes = read_file(path)?;
                let table = descriptors::decode(&bytes, path)?;
                Ok(Provider {
                    provider: DescriptorProvider::External(table),
                    identity: format!("external:{}", hex::encode(sha256(&bytes))),
                })
            }
        }
    }

    /// Identifies the detector settings and descriptor contents that
    /// produced a database.
    pub fn config_hash(&self, cfg: &DetectorConfig) -> [u8; 32] {
        let canonical = json!({ "detector": cfg, "descriptor": self.identity });
        sha256(&serde_json::to_vec(&canonical).expect("config serializes"))
    }
}

/// Keypoints and descriptors of one image, before quantization.
#[derive(Debug, Clone, PartialEq)]
pub struct Described {
    pub image_id: String,
    pub surface_id: Option<String>,
    pub keypoints: Vec<Keypoint>,
    pub descriptors: Vec<Descriptor>,
}

/// Describes images produced by `load(i)` for every entry of `ids`
/// (`(image_id, surface_id)` pairs), in parallel, keeping input order.
pub fn describe_with<F>(
    ids: &[(String, Option<String>)],
    load: F,
    cfg: &DetectorConfig,
    provider: &DescriptorProvider,
) -> Result<Vec<Described>>
where
    F: Fn(usize) -> Result<Image> + Sync,
{
    cfg.validate()?;
    pool().install(|| {
        ids.par_iter()
            .enumerate()
            .map(|(i, (image_id, surface_id))| {
                let img = load(i)?;
                let (keypoints, descriptors) = describe_image(image_id, &img, cfg, provider)?;
                Ok(Described { image_id: image_id.clone(), surface_id: surface_id.clone(), keypoints, descriptors })
            })
            .collect()
    })
}

/// Loads and describes corpus images.
pub fn describe_corpus(images: &[CorpusImage], cfg: &DetectorConfig, provider: &DescriptorProvider) -> Result<Vec<Described>> {
    let ids: Vec<_> = images.iter().map(|i| (i.image_id.clone(), i.surface_id.clone())).collect();
    describe_with(&ids, |i| load_image(&images[i].path), cfg, provider)
}

pub fn train_vocabulary(described: &[Described], params: &KMeansParams) -> Result<Vocabulary> {
    let training: Vec<Vec<Descriptor>> = described.iter().map(|d| d.descriptors.clone()).collect();
    Ok(train_vocab(&training, params)?)
}

/// Quantizes every image against `voc` (or leaves BoW empty when `voc` is
/// `None`) and indexes the result.
pub fn build_db(
    described: Vec<Described>,
    voc: Option<&Vocabulary>,
    vocab_hash: [u8; 32],
    config_hash: [u8; 32],
) -> Result<SignatureDb> {
    let signatures = pool().install(|| {
        described
            .into_par_iter()
            .map(|d| {
                let bow = voc.map(|v| quantize(v, &d.descriptors)).unwrap_or_else(BowVector::empty);
                ImageSignature::new(d.image_id, d.surface_id, d.keypoints, d.descriptors, bow)
            })
            .collect::<barkid_core::Result<Vec<_>>>()
    })?;
    let vocab_size = voc.map_or(1, Vocabulary::k);
    Ok(SignatureDb::new(signatures, vocab_size, vocab_hash, config_hash)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn descriptor_source_parsing() {
        assert_eq!("builtin".parse::<DescriptorSource>().unwrap(), DescriptorSource::Builtin);
        let ext: DescriptorSource = "external:/tmp/a.bkd".parse().unwrap();
        assert_eq!(ext, DescriptorSource::External("/tmp/a.bkd".into()));
        assert_eq!(ext.to_string(), "external:/tmp/a.bkd");
        assert!("external:".parse::<DescriptorSource>().is_err());
        assert!("sift".parse::<DescriptorSource>().is_err());
    }

    #[test]
    fn config_hash_tracks_settings() {
        let p = Provider::load(&DescriptorSource::Builtin).unwrap();
        let a = p.config_hash(&DetectorConfig::builtin());
        assert_eq!(a, p.config_hash(&DetectorConfig::builtin()));
        assert_ne!(a, p.config_hash(&DetectorConfig::learned()));
    }
}
