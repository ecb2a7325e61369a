//! Running query sets against a database and summarizing them into
//! evaluation reports (JSON, CSV and an SVG precision/recall plot).

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::time::Instant;

use barkid_core::matching::MatchMethod;
use barkid_core::metrics::{average_precision, mean_average_precision, pr_curve, r_precision, recall_at_k, relevant_in_top};
use barkid_core::retrieval::{query_full, ImageSignature, query_two_stage, Clock, NoClock, QueryParams, RetrievalResult, ScoreMethod, SignatureDb, StageTimings};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pipeline::pool;

/// Cut-offs reported in the R@K table, when the ranking is long enough.
pub const RECALL_KS: [usize; 8] = [1, 5, 10, 11, 20, 50, 100, 200];

/// Wall-clock milliseconds since construction.
pub struct WallClock(Instant);

impl WallClock {
    pub fn new() -> Self {
        WallClock(Instant::now())
    }
}

impl Default for WallClock {
    fn default() -> Self {
        Self::new()
    }
}

impl Clock for WallClock {
    fn now_ms(&self) -> f64 {
        self.0.elapsed().as_secs_f64() * 1e3
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Pipeline {
    Full,
    /// BoW prefilter, then the match method on the best `top_t`.
    TwoStage,
}

/// What one evaluation run scores with.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Run {
    pub method: ScoreMethod,
    pub pipeline: Pipeline,
    pub params: QueryParams,
}

impl Run {
    pub fn full(method: ScoreMethod, params: QueryParams) -> Self {
        Run { method, pipeline: Pipeline::Full, params }
    }

    pub fn label(&self) -> String {
        match (self.pipeline, self.method) {
            (Pipeline::TwoStage, m) if m != ScoreMethod::Bow => format!("bow+{}@{}", m.name(), self.params.top_t),
            (_, m) => m.name().to_string(),
        }
    }

    pub fn query(&self, db: &SignatureDb, ordinal: usize, clock: &dyn Clock) -> Result<RetrievalResult> {
        self.query_signature(db, &db.signatures()[ordinal], clock)
    }

    /// Ranks `db` against `q`, which need not belong to it.
    pub fn query_signature(&self, db: &SignatureDb, q: &ImageSignature, clock: &dyn Clock) -> Result<RetrievalResult> {
        let rerank = match self.method {
            ScoreMethod::Bow => None,
            ScoreMethod::Lr => Some(MatchMethod::Lr),
            ScoreMethod::Gv => Some(MatchMethod::Gv),
        };
        Ok(match (self.pipeline, rerank) {
            (Pipeline::TwoStage, Some(m)) => query_two_stage(db, q, m, &self.params, clock)?,
            _ => query_full(db, q, self.method, &self.params, clock)?,
        })
    }
}

/// Runs `run` for every query ordinal. Timed runs execute one query at a
/// time on the calling thread; untimed runs use the worker pool and report
/// zero timings.
pub fn run_queries(db: &SignatureDb, queries: &[usize], run: &Run, timed: bool) -> Result<Vec<RetrievalResult>> {
    if timed {
        let clock = WallClock::new();
        queries.iter().map(|&q| run.query(db, q, &clock)).collect()
    } else {
        pool().install(|| queries.par_iter().map(|&q| run.query(db, q, &NoClock)).collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryOutcome {
    pub query: String,
    pub relevant: usize,
    pub average_precision: f64,
    pub p_at_1: f64,
    pub r_precision: f64,
    /// One `(recall, precision)` point per relevant image.
    pub pr: Vec<(f64, f64)>,
    pub timings: StageTimings,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodReport {
    pub method: String,
    pub pipeline: Pipeline,
    pub top_t: Option<usize>,
    /// Mean average precision; `None` when no query had relevant images.
    pub map: Option<f64>,
    /// Standard deviation of per-query average precision.
    pub ap_std: Option<f64>,
    pub p_at_1: Option<f64>,
    pub r_precision: Option<f64>,
    /// Mean recall at each cut-off.
    pub recall_at_k: BTreeMap<usize, f64>,
    pub mean_timings: StageTimings,
    pub queries: usize,
    /// Queries without relevant images, left out of every mean.
    pub excluded: usize,
    pub per_query: Vec<QueryOutcome>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub corpus_size: usize,
    pub query_count: usize,
    pub methods: Vec<MethodReport>,
}

fn mean(v: &[f64]) -> Option<f64> {
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

/// Population standard deviation.
pub fn std_dev(v: &[f64]) -> Option<f64> {
    let m = mean(v)?;
    Some((v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / v.len() as f64).sqrt())
}

/// Summarizes `(query id, result)` pairs against the ground truth.
pub fn summarize(
    run: &Run,
    results: &[(String, RetrievalResult)],
    ground_truth: &BTreeMap<String, BTreeSet<String>>,
) -> Result<MethodReport> {
    let empty = BTreeSet::new();
    let mut per_query = Vec::new();
    let mut rankings = Vec::new();
    let mut recall_sums: BTreeMap<usize, (f64, usize)> = BTreeMap::new();
    let mut timing_sum = StageTimings::default();
    for (query, result) in results {
        let ids: Vec<String> = result.ranking.iter().map(|r| r.image_id.clone()).collect();
        let relevant = ground_truth.get(query).unwrap_or(&empty);
        timing_sum.prefilter_ms += result.timings.prefilter_ms;
        timing_sum.rerank_ms += result.timings.rerank_ms;
        timing_sum.total_ms += result.timings.total_ms;
        rankings.push((ids, relevant));
        let (ids, relevant) = rankings.last().expect("just pushed");
        let Some(ap) = average_precision(ids, relevant) else { continue };
        for k in RECALL_KS.into_iter().filter(|&k| k <= ids.len()) {
            let r = recall_at_k(ids, relevant, k)?.expect("relevant is non-empty");
            let e = recall_sums.entry(k).or_insert((0.0, 0));
            e.0 += r;
            e.1 += 1;
        }
        per_query.push(QueryOutcome {
            query: query.clone(),
            relevant: relevant.len(),
            average_precision: ap,
            p_at_1: relevant_in_top(ids, relevant, 1) as f64,
            r_precision: r_precision(ids, relevant)?,
            pr: pr_curve(ids, relevant),
            timings: result.timings,
        });
    }
    let pairs: Vec<(&[String], &BTreeSet<String>)> = rankings.iter().map(|(r, rel)| (r.as_slice(), *rel)).collect();
    let map = mean_average_precision(&pairs);
    let aps: Vec<f64> = per_query.iter().map(|q| q.average_precision).collect();
    let n = results.len().max(1) as f64;
    Ok(MethodReport {
        method: run.label(),
        pipeline: run.pipeline,
        top_t: (run.pipeline == Pipeline::TwoStage).then_some(run.params.top_t),
        map: map.value,
        ap_std: std_dev(&aps),
        p_at_1: mean(&per_query.iter().map(|q| q.p_at_1).collect::<Vec<_>>()),
        r_precision: mean(&per_query.iter().map(|q| q.r_precision).collect::<Vec<_>>()),
        recall_at_k: recall_sums.into_iter().map(|(k, (s, c))| (k, s / c as f64)).collect(),
        mean_timings: StageTimings {
            prefilter_ms: timing_sum.prefilter_ms / n,
            rerank_ms: timing_sum.rerank_ms / n,
            total_ms: timing_sum.total_ms / n,
        },
        queries: results.len(),
        excluded: map.excluded,
        per_query,
    })
}

/// Runs and summarizes one method over the given query ordinals.
pub fn evaluate(
    db: &SignatureDb,
    queries: &[usize],
    run: &Run,
    ground_truth: &BTreeMap<String, BTreeSet<String>>,
    timed: bool,
) -> Result<MethodReport> {
    let results = run_queries(db, queries, run, timed)?;
    let named: Vec<(String, RetrievalResult)> = queries
        .iter()
        .zip(results)
        .map(|(&q, r)| (db.signatures()[q].image_id.clone(), r))
        .collect();
    summarize(run, &named, ground_truth)
}

/// Ordinals of database images that have ground truth, in database order.
pub fn query_ordinals(db: &SignatureDb, ground_truth: &BTreeMap<String, BTreeSet<String>>) -> Vec<usize> {
    db.signatures()
        .iter()
        .enumerate()
        .filter(|(_, s)| ground_truth.get(&s.image_id).is_some_and(|r| !r.is_empty()))
        .map(|(i, _)| i)
        .collect()
}

/// Restricts each relevant set to images present in the database.
pub fn restrict_ground_truth(
    db: &SignatureDb,
    ground_truth: &BTreeMap<String, BTreeSet<String>>,
) -> BTreeMap<String, BTreeSet<String>> {
    ground_truth
        .iter()
        .filter(|(q, _)| db.get(q).is_some())
        .map(|(q, rel)| (q.clone(), rel.iter().filter(|r| db.get(r).is_some()).cloned().collect()))
        .collect()
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.6}")).unwrap_or_default()
}

impl EvalReport {
    pub fn to_json(&self) -> Vec<u8> {
        serde_json::to_vec_pretty(self).expect("report serializes")
    }

    /// One row per method.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("method,pipeline,top_t,queries,excluded,map,ap_std,p_at_1,r_precision");
        for k in RECALL_KS {
            let _ = write!(out, ",r_at_{k}");
        }
        out.push_str(",prefilter_ms,rerank_ms,total_ms\n");
        for m in &self.methods {
            let pipeline = match m.pipeline {
                Pipeline::Full => "full",
                Pipeline::TwoStage => "two-stage",
            };
            let top_t = m.top_t.map(|t| t.to_string()).unwrap_or_default();
            let _ = write!(
                out,
                "{},{pipeline},{top_t},{},{},{},{},{},{}",
                m.method,
                m.queries,
                m.excluded,
                opt(m.map),
                opt(m.ap_std),
                opt(m.p_at_1),
                opt(m.r_precision)
            );
            for k in RECALL_KS {
                let _ = write!(out, ",{}", opt(m.recall_at_k.get(&k).copied()));
            }
            let t = m.mean_timings;
            let _ = writeln!(out, ",{:.6},{:.6},{:.6}", t.prefilter_ms, t.rerank_ms, t.total_ms);
        }
        out
    }

    /// Mean precision at each recall level, one line per method.
    pub fn to_svg(&self) -> String {
        const W: f64 = 480.0;
        const H: f64 = 360.0;
        const PAD: f64 = 48.0;
        const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];
        let x = |r: f64| PAD + r * (W - 2.0 * PAD);
        let y = |p: f64| H - PAD - p * (H - 2.0 * PAD);
        let mut s = format!(
            "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" viewBox=\"0 0 {W} {H}\" font-family=\"sans-serif\" font-size=\"12\">\n"
        );
        let _ = writeln!(s, "<rect width=\"{W}\" height=\"{H}\" fill=\"white\"/>");
        let _ = writeln!(
            s,
            "<path d=\"M{:.1} {:.1} V{:.1} H{:.1}\" fill=\"none\" stroke=\"black\"/>",
            x(0.0),
            y(1.0),
            y(0.0),
            x(1.0)
        );
        for t in 0..=4 {
            let v = t as f64 / 4.0;
            let _ = writeln!(s, "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"middle\">{v}</text>", x(v), y(0.0) + 16.0);
            let _ = writeln!(s, "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"end\">{v}</text>", x(0.0) - 6.0, y(v) + 4.0);
        }
        let _ = writeln!(s, "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"middle\">recall</text>", W / 2.0, H - 10.0);
        let _ = writeln!(s, "<text x=\"14\" y=\"{:.1}\" transform=\"rotate(-90 14 {:.1})\" text-anchor=\"middle\">precision</text>", H / 2.0, H / 2.0);
        for (i, m) in self.methods.iter().enumerate() {
            let color = COLORS[i % COLORS.len()];
            let curve = mean_curve(&m.per_query);
            if !curve.is_empty() {
                let pts: Vec<String> = curve.iter().map(|&(r, p)| format!("{:.1},{:.1}", x(r), y(p))).collect();
                let _ = writeln!(s, "<polyline points=\"{}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"2\"/>", pts.join(" "));
            }
            let ly = PAD + 16.0 * i as f64;
            let _ = writeln!(
                s,
                "<text x=\"{:.1}\" y=\"{ly:.1}\" fill=\"{color}\">{} (mAP {})</text>",
                x(0.55),
                xml_escape(&m.method),
                m.map.map(|v| format!("{v:.3}")).unwrap_or_else(|| "n/a".into())
            );
        }
        s.push_str("</svg>\n");
        s
    }
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Mean precision over queries in 20 recall bins, ordered by recall.
fn mean_curve(per_query: &[QueryOutcome]) -> Vec<(f64, f64)> {
    let mut bins = [(0.0f64, 0.0f64, 0usize); 20];
    for q in per_query {
        for &(r, p) in &q.pr {
            let b = ((r * 20.0).ceil() as usize).clamp(1, 20) - 1;
            bins[b].0 += r;
            bins[b].1 += p;
            bins[b].2 += 1;
        }
    }
    bins.iter().filter(|b| b.2 > 0).map(|b| (b.0 / b.2 as f64, b.1 / b.2 as f64)).collect()
}

/// Fails unless every query of `queries` is a database image.
pub fn resolve_queries(db: &SignatureDb, ids: &[String]) -> Result<Vec<usize>> {
    ids.iter()
        .map(|id| {
            db.ordinal(id)
                .ok_or_else(|| Error::Config(format!("query `{id}` is not in the database")))
        })
        .collect()
}

/// A seeded sample of `n` entries of `candidates` (all of them when `n` is
/// `None` or too large), in their original order.
pub fn pick_queries(candidates: &[usize], n: Option<usize>, seed: u64) -> Vec<usize> {
    use rand::seq::index::sample;
    use rand::SeedableRng;
    match n {
        Some(n) if n < candidates.len() => {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let mut picked = sample(&mut rng, candidates.len(), n).into_vec();
            picked.sort_unstable();
            picked.into_iter().map(|i| candidates[i]).collect()
        }
        _ => candidates.to_vec(),
    }
}
