//! Single-threaded timing of signature comparisons.

use std::time::Instant;

use barkid_core::matching::MatchParams;
use barkid_core::retrieval::{PreparedQuery, ScoreMethod, SignatureDb};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MIN_COMPARISONS: usize = 100;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub method: ScoreMethod,
    pub comparisons: usize,
    pub mean_ms: f64,
    pub median_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchTable {
    pub rows: Vec<BenchRow>,
    /// Mean descriptor count over the signatures involved.
    pub mean_descriptors: f64,
}

impl BenchTable {
    pub fn row(&self, method: ScoreMethod) -> Option<&BenchRow> {
        self.rows.iter().find(|r| r.method == method)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("method,comparisons,mean_ms,median_ms,mean_descriptors\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{:.6},{:.6},{:.1}\n",
                r.method.name(),
                r.comparisons,
                r.mean_ms,
                r.median_ms,
                self.mean_descriptors
            ));
        }
        out
    }
}

/// The `(query, candidate)` ordinal pairs timed for every method: each
/// query against the database in order, skipping itself, until `count`
/// pairs are collected.
pub fn comparison_pairs(db: &SignatureDb, queries: &[usize], count: usize) -> Vec<(usize, usize)> {
    let mut pairs = Vec::with_capacity(count);
    'outer: for offset in 1..db.len().max(1) {
        for &q in queries {
            pairs.push((q, (q + offset) % db.len()));
            if pairs.len() == count {
                break 'outer;
            }
        }
    }
    pairs
}

/// Times one comparison per pair for each method on the calling thread. A
/// comparison covers all per-pair work, including the query-side
/// neighbour table for GV. The first `warmup` pairs are run untimed.
pub fn bench_compare(
    db: &SignatureDb,
    queries: &[usize],
    methods: &[ScoreMethod],
    comparisons: usize,
    warmup: usize,
    params: &MatchParams,
) -> Result<BenchTable> {
    if comparisons < MIN_COMPARISONS {
        return Err(Error::Config(format!("bench needs at least {MIN_COMPARISONS} comparisons, got {comparisons}")));
    }
    if queries.is_empty() || db.len() < 2 {
        return Err(Error::Config("bench needs a query and a database of at least two images".into()));
    }
    params.validate()?;
    let pairs = comparison_pairs(db, queries, comparisons + warmup);
    if pairs.len() < comparisons + warmup {
        return Err(Error::Config(format!("only {} distinct comparisons available", pairs.len())));
    }
    let sigs = db.signatures();
    let mut rows = Vec::new();
    for &method in methods {
        let mut sink = 0.0;
        let mut times = Vec::with_capacity(comparisons);
        for (i, &(q, c)) in pairs.iter().enumerate() {
            let start = Instant::now();
            let prepared = PreparedQuery::new(&sigs[q], method, params);
            sink += prepared.score(&sigs[c], method);
            let ms = start.elapsed().as_secs_f64() * 1e3;
            if i >= warmup {
                times.push(ms);
            }
        }
        std::hint::black_box(sink);
        let mean_ms = times.iter().sum::<f64>() / times.len() as f64;
        times.sort_by(f64::total_cmp);
        let mid = times.len() / 2;
        let median_ms = if times.len() % 2 == 1 { times[mid] } else { (times[mid - 1] + times[mid]) / 2.0 };
        rows.push(BenchRow { method, comparisons, mean_ms, median_ms });
    }
    let involved: Vec<usize> = pairs.iter().flat_map(|&(q, c)| [q, c]).collect();
    let mean_descriptors =
        involved.iter().map(|&i| sigs[i].descriptors.len() as f64).sum::<f64>() / involved.len() as f64;
    Ok(BenchTable { rows, mean_descriptors })
}
