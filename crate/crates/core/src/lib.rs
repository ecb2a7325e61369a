//! Core algorithms for re-identifying textured surfaces from photographs.
//!
//! Every image is reduced to a signature made of keypoints, 128-d unit
//! descriptors and a TF-IDF weighted bag-of-visual-words vector. Signatures
//! are ranked against a query either by BoW distance or by counting
//! descriptor matches that survive a Lowe ratio test or a neighbour
//! consistency check.
//!
//! The crate is `no_std` (it needs `alloc`). The `std` feature only enables
//! runtime selection of wider SIMD kernels. File formats, image codecs and
//! the command line live in the `barkid` crate.
#![cfg_attr(not(any(test, feature = "std")), no_std)]

extern crate alloc;

mod error;
mod fmath;
mod simd;

pub mod descriptor;
pub mod detector;
pub mod matching;
pub mod metrics;
pub mod pixels;
pub mod registration;
pub mod retrieval;
pub mod synth;
pub mod vocabulary;

pub use descriptor::{Descriptor, DescriptorProvider, ExternalDescriptors, Patch, DESCRIPTOR_DIM};
pub use detector::{DetectorConfig, Keypoint};
pub use error::{Error, Result};
pub use matching::{GvParams, Match, MatchMethod};
pub use pixels::{GradientField, Image, Plane};
pub use registration::{Homography, Point2, SurfaceManifest};
pub use retrieval::{ImageSignature, RetrievalResult, ScoreMethod, SignatureDb};
pub use vocabulary::{BowVector, InvertedIndex, Vocabulary};
