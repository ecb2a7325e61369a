//! Detector parameter sweeps scored by full-scan GV mAP, reported in the
//! shape of a parameter-search table.

use std::collections::{BTreeMap, BTreeSet};

use barkid_core::retrieval::{QueryParams, ScoreMethod};
use barkid_core::DetectorConfig;
use serde::Serialize;

use crate::error::Result;
use crate::pipeline::{build_db, Described};
use crate::report::{evaluate, pick_queries, query_ordinals, restrict_ground_truth, std_dev, Run};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub descriptor: String,
    pub phi: f32,
    pub sigma: f32,
    pub map_gv: Option<f64>,
    /// Mean and standard deviation of keypoints per image (capped by gamma).
    pub keypoints_mean: f64,
    pub keypoints_std: f64,
    pub queries: usize,
}

/// Scores one grid point from already described images. BoW plays no part,
/// so no vocabulary is needed.
pub fn sweep_point(
    descriptor: &str,
    cfg: &DetectorConfig,
    described: Vec<Described>,
    ground_truth: &BTreeMap<String, BTreeSet<String>>,
    queries: Option<usize>,
    params: &QueryParams,
    seed: u64,
) -> Result<SweepRow> {
    let counts: Vec<f64> = described.iter().map(|d| d.keypoints.len() as f64).collect();
    let mut db = build_db(described, None, [0; 32], [0; 32])?;
    db.cache_neighbors(params.matching.gv.alpha);
    let gt = restrict_ground_truth(&db, ground_truth);
    let picked = pick_queries(&query_ordinals(&db, &gt), queries, seed);
    let report = evaluate(&db, &picked, &Run::full(ScoreMethod::Gv, *params), &gt, false)?;
    Ok(SweepRow {
        descriptor: descriptor.to_string(),
        phi: cfg.phi,
        sigma: cfg.sigma_blur,
        map_gv: report.map,
        keypoints_mean: counts.iter().sum::<f64>() / counts.len().max(1) as f64,
        keypoints_std: std_dev(&counts).unwrap_or(0.0),
        queries: picked.len(),
    })
}

pub fn to_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from("descriptor,phi,sigma,map_gv,keypoints_mean,keypoints_std,queries\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{:.1},{:.1},{}\n",
            r.descriptor,
            r.phi,
            r.sigma,
            r.map_gv.map(|v| format!("{v:.4}")).unwrap_or_default(),
            r.keypoints_mean,
            r.keypoints_std,
            r.queries
        ));
    }
    out
}
