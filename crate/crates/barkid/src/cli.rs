//! Command-line surface. Every command writes its artifact plus a
//! run-manifest (`run.json` inside output directories, `<file>.run.json`
//! next to output files) holding the resolved settings and input hashes.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use barkid_core::retrieval::{NoClock, ScoreMethod};
use barkid_core::synth::SynthParams;
use barkid_core::vocabulary::{quantize, KMeansParams, DEFAULT_VOCAB_SIZE};
use barkid_core::ImageSignature;
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};

use crate::bench::bench_compare;
use crate::config::{RunConfig, Settings};
use crate::corpus::{Corpus, SynthRequest, MANIFEST_NAME};
use crate::error::{Error, Result};
use crate::formats::{self, read_file, sha256, write_file};
use crate::imageio::load_image;
use crate::pipeline::{build_db, describe_corpus, describe_with, train_vocabulary, DescriptorSource, Provider};
use crate::report::{evaluate, pick_queries, query_ordinals, resolve_queries, restrict_ground_truth, EvalReport, Pipeline, Run};
use crate::sweep::{sweep_point, to_csv};

#[derive(Debug, Parser)]
#[command(name = "barkid", version, about = "Re-identify textured surfaces from photographs")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args, Clone, Default)]
pub struct Common {
    /// JSON file with any of the settings below; flags override it.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Maximum keypoints per image.
    #[arg(long, global = true)]
    pub gamma: Option<usize>,
    /// Downsizing factor applied before detection.
    #[arg(long, global = true)]
    pub phi: Option<f32>,
    /// Gaussian blur sigma applied before detection.
    #[arg(long, global = true)]
    pub sigma: Option<f32>,
    /// `builtin` or `external:<descriptor file>`.
    #[arg(long, global = true)]
    pub descriptor: Option<String>,
    /// Scoring method: bow, lr or gv.
    #[arg(long, global = true)]
    pub method: Option<String>,
    /// Lowe ratio threshold.
    #[arg(long, global = true)]
    pub ratio: Option<f32>,
    /// Neighbours examined per match by GV.
    #[arg(long, global = true)]
    pub alpha: Option<usize>,
    /// Fraction of neighbours GV requires to agree.
    #[arg(long, global = true)]
    pub rho: Option<f64>,
    /// Candidates reranked after the BoW prefilter.
    #[arg(long, global = true)]
    pub top_t: Option<usize>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
}

impl Common {
    fn flags(&self) -> RunConfig {
        RunConfig {
            gamma: self.gamma,
            phi: self.phi,
            sigma: self.sigma,
            descriptor: self.descriptor.clone(),
            method: self.method.clone(),
            ratio: self.ratio,
            alpha: self.alpha,
            rho: self.rho,
            top_t: self.top_t,
            seed: self.seed,
        }
    }

    pub fn run_config(&self) -> Result<RunConfig> {
        let base = match &self.config {
            Some(p) => RunConfig::from_file(p)?,
            None => RunConfig::default(),
        };
        Ok(base.overlay(self.flags()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PipelineArg {
    Full,
    TwoStage,
}

impl From<PipelineArg> for Pipeline {
    fn from(p: PipelineArg) -> Self {
        match p {
            PipelineArg::Full => Pipeline::Full,
            PipelineArg::TwoStage => Pipeline::TwoStage,
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Render a synthetic corpus with ground truth.
    Synth {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 20)]
        surfaces: usize,
        #[arg(long, default_value_t = 12)]
        views: usize,
        /// Maximum corner displacement as a fraction of the view size.
        #[arg(long, default_value_t = 0.15)]
        warp: f64,
        /// Maximum relative brightness, contrast and gamma change.
        #[arg(long, default_value_t = 0.25)]
        jitter: f64,
        #[arg(long, default_value_t = 0)]
        distractors: usize,
        #[arg(long, default_value_t = 768)]
        size: u32,
        #[arg(long)]
        out: PathBuf,
    },
    /// Build the training patch archive and the patch requests of a corpus.
    Patches {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, default_value_t = 32.0)]
        min_spacing: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a visual vocabulary on the images of a corpus.
    Vocab {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, default_value_t = DEFAULT_VOCAB_SIZE)]
        k: usize,
        /// Cluster a seeded sample of at most this many descriptors.
        #[arg(long)]
        sample: Option<usize>,
        #[arg(long, default_value_t = 100)]
        iterations: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Describe, quantize and index a corpus into a signature database.
    Index {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        vocab: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Rank the database against database images or new image files.
    Query {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        db: PathBuf,
        /// Required with --image, and checked against the database.
        #[arg(long)]
        vocab: Option<PathBuf>,
        /// Database image ids to use as queries; all images when omitted.
        #[arg(long = "id")]
        ids: Vec<String>,
        /// Image files to use as queries.
        #[arg(long = "image")]
        images: Vec<PathBuf>,
        #[arg(long, value_enum, default_value = "full")]
        pipeline: PipelineArg,
        /// Keep only this many ranks per query in the output.
        #[arg(long)]
        limit: Option<usize>,
        /// Ranking JSON; standard output when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Evaluate methods against the corpus ground truth.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        db: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        /// Comma-separated methods; defaults to --method.
        #[arg(long, value_delimiter = ',')]
        methods: Vec<String>,
        #[arg(long, value_enum, default_value = "full")]
        pipeline: PipelineArg,
        /// Evaluate a seeded sample of this many queries.
        #[arg(long)]
        queries: Option<usize>,
        /// Record wall-clock stage timings (runs queries one at a time).
        #[arg(long)]
        timed: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Time single-threaded signature comparisons.
    Bench {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        db: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "bow,lr,gv")]
        methods: Vec<String>,
        #[arg(long, default_value_t = 500)]
        comparisons: usize,
        #[arg(long, default_value_t = 20)]
        warmup: usize,
        /// Number of seeded query images the comparisons start from.
        #[arg(long, default_value_t = 10)]
        queries: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Grid search over downsizing and blur, scored by GV mAP.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "1,2,3")]
        phis: Vec<f32>,
        #[arg(long, value_delimiter = ',', default_value = "0,1,3")]
        sigmas: Vec<f32>,
        #[arg(long, default_value_t = 36)]
        queries: usize,
        /// Table CSV.
        #[arg(long)]
        out: PathBuf,
    },
}

struct Record {
    command: &'static str,
    settings: Settings,
    options: Value,
    inputs: BTreeMap<String, String>,
}

impl Record {
    fn new(command: &'static str, settings: Settings, options: Value) -> Self {
        Record { command, settings, options, inputs: BTreeMap::new() }
    }

    fn input(&mut self, path: &Path) -> Result<()> {
        let file = if path.is_dir() { path.join(MANIFEST_NAME) } else { path.to_path_buf() };
        self.inputs.insert(path.display().to_string(), hex::encode(sha256(&read_file(&file)?)));
        Ok(())
    }

    fn write(&self, manifest: &Path) -> Result<()> {
        let body = json!({
            "command": self.command,
            "version": env!("CARGO_PKG_VERSION"),
            "settings": self.settings,
            "options": self.options,
            "inputs": self.inputs,
        });
        write_file(manifest, &serde_json::to_vec_pretty(&body).expect("manifest serializes"))
    }
}

fn beside(file: &Path) -> PathBuf {
    let mut name = file.file_name().unwrap_or_default().to_os_string();
    name.push(".run.json");
    file.with_file_name(name)
}

fn parse_methods(names: &[String], fallback: ScoreMethod) -> Result<Vec<ScoreMethod>> {
    if names.is_empty() {
        return Ok(vec![fallback]);
    }
    names.iter().map(|n| Ok(ScoreMethod::parse(n.trim())?)).collect()
}

fn write_json(path: &Path, v: &impl serde::Serialize) -> Result<()> {
    write_file(path, &serde_json::to_vec_pretty(v).expect("serializes"))
}

/// Executes one command. Human-readable progress goes to standard error.
pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth { common, surfaces, views, warp, jitter, distractors, size, out } => {
            let settings = common.run_config()?.resolve()?;
            let params = SynthParams { size, ..SynthParams::new(settings.seed, surfaces, views, warp, jitter) };
            let req = SynthRequest { params, distractors };
            let manifest = crate::corpus::write_synth(&out, &req)?;
            Record::new("synth", settings, json!(req)).write(&out.join("run.json"))?;
            eprintln!("wrote {}", manifest.display());
        }
        Command::Patches { common, corpus, min_spacing, out } => {
            let mut cfg = common.run_config()?;
            // Patches feed descriptor training, which works on unblurred images.
            cfg.sigma = cfg.sigma.or(Some(0.0));
            let settings = cfg.resolve()?;
            let c = Corpus::load(&corpus)?;
            let summary = crate::patches::write_archive(&c, &settings.detector, min_spacing, &out)?;
            let mut rec = Record::new("patches", settings, json!({ "min_spacing": min_spacing, "summary": summary }));
            rec.input(&corpus)?;
            rec.write(&out.join("run.json"))?;
            eprintln!("{} patches of {} keypoints, {} requests", summary.patches, summary.keypoints, summary.requests);
        }
        Command::Vocab { common, corpus, k, sample, iterations, out } => {
            let settings = common.run_config()?.resolve()?;
            let provider = Provider::load(&settings.descriptor)?;
            let c = Corpus::load(&corpus)?;
            let described = describe_corpus(&c.images(), &settings.detector, &provider.provider)?;
            let params = KMeansParams { k, seed: settings.seed, max_iterations: iterations, sample_limit: sample, ..Default::default() };
            let voc = train_vocabulary(&described, &params)?;
            let hash = formats::vocab::save(&out, &voc)?;
            let mut side = out.clone().into_os_string();
            side.push(".json");
            write_json(Path::new(&side), &json!({ "hash": hex::encode(hash), "k": voc.k(), "training": voc.meta() }))?;
            let mut rec = Record::new("vocab", settings, json!({ "k": k, "sample": sample, "iterations": iterations }));
            rec.input(&corpus)?;
            external_input(&mut rec)?;
            rec.write(&beside(&out))?;
            eprintln!("vocabulary {} ({} words)", hex::encode(hash), voc.k());
        }
        Command::Index { common, corpus, vocab, out } => {
            let settings = common.run_config()?.resolve()?;
            let provider = Provider::load(&settings.descriptor)?;
            let (voc, vocab_hash) = formats::vocab::load(&vocab)?;
            let c = Corpus::load(&corpus)?;
            let described = describe_corpus(&c.images(), &settings.detector, &provider.provider)?;
            let db = build_db(described, Some(&voc), vocab_hash, provider.config_hash(&settings.detector))?;
            formats::db::save(&out, &db)?;
            let mut rec = Record::new("index", settings, json!({}));
            rec.input(&corpus)?;
            rec.input(&vocab)?;
            external_input(&mut rec)?;
            rec.write(&beside(&out))?;
            eprintln!("indexed {} images", db.len());
        }
        Command::Query { common, db, vocab, ids, images, pipeline, limit, out } => {
            let settings = common.run_config()?.resolve()?;
            let voc = vocab.as_deref().map(formats::vocab::load).transpose()?;
            let mut database = formats::db::load(&db, voc.as_ref().map(|v| &v.1))?;
            database.cache_neighbors(settings.query.matching.gv.alpha);
            let run = Run { method: settings.method, pipeline: pipeline.into(), params: settings.query };
            let mut results = Vec::new();
            let ordinals = if ids.is_empty() && images.is_empty() {
                (0..database.len()).collect()
            } else {
                resolve_queries(&database, &ids)?
            };
            for q in ordinals {
                let r = run.query(&database, q, &NoClock)?;
                results.push((database.signatures()[q].image_id.clone(), r));
            }
            if !images.is_empty() {
                let Some((voc, _)) = &voc else {
                    return Err(Error::Config("--image queries need --vocab".into()));
                };
                let provider = Provider::load(&settings.descriptor)?;
                let config_hash = provider.config_hash(&settings.detector);
                if &config_hash != database.config_hash() {
                    return Err(Error::HashMismatch {
                        path: db.clone(),
                        what: "detector/descriptor config",
                        expected: hex::encode(config_hash),
                        found: hex::encode(database.config_hash()),
                    });
                }
                let names: Vec<_> = images.iter().map(|p| (p.display().to_string(), None)).collect();
                let described = describe_with(&names, |i| load_image(&images[i]), &settings.detector, &provider.provider)?;
                for d in described {
                    let bow = quantize(voc, &d.descriptors);
                    let q = ImageSignature::new(d.image_id, None, d.keypoints, d.descriptors, bow)?;
                    let r = run.query_signature(&database, &q, &NoClock)?;
                    results.push((q.image_id, r));
                }
            }
            let body: Vec<Value> = results
                .into_iter()
                .map(|(query, mut r)| {
                    if let Some(n) = limit {
                        r.ranking.truncate(n);
                    }
                    json!({ "query": query, "ranking": r.ranking })
                })
                .collect();
            let body = json!({ "method": run.label(), "queries": body });
            match &out {
                Some(path) => {
                    write_json(path, &body)?;
                    let mut rec = Record::new("query", settings, json!({ "pipeline": run.pipeline, "limit": limit }));
                    rec.input(&db)?;
                    if let Some(v) = &vocab {
                        rec.input(v)?;
                    }
                    for img in &images {
                        rec.input(img)?;
                    }
                    rec.write(&beside(path))?;
                }
                None => println!("{}", serde_json::to_string_pretty(&body).expect("serializes")),
            }
        }
        Command::Eval { common, db, corpus, methods, pipeline, queries, timed, out } => {
            let settings = common.run_config()?.resolve()?;
            let mut database = formats::db::load(&db, None)?;
            database.cache_neighbors(settings.query.matching.gv.alpha);
            let c = Corpus::load(&corpus)?;
            let gt = restrict_ground_truth(&database, c.ground_truth());
            let picked = pick_queries(&query_ordinals(&database, &gt), queries, settings.seed);
            let mut report = EvalReport { corpus_size: database.len(), query_count: picked.len(), methods: Vec::new() };
            for method in parse_methods(&methods, settings.method)? {
                let run = Run { method, pipeline: pipeline.into(), params: settings.query };
                report.methods.push(evaluate(&database, &picked, &run, &gt, timed)?);
                let m = report.methods.last().expect("pushed");
                eprintln!("{}: mAP {:?} P@1 {:?}", m.method, m.map, m.p_at_1);
            }
            write_file(&out.join("report.json"), &report.to_json())?;
            write_file(&out.join("report.csv"), report.to_csv().as_bytes())?;
            write_file(&out.join("pr.svg"), report.to_svg().as_bytes())?;
            let mut rec = Record::new("eval", settings, json!({ "methods": methods, "pipeline": Pipeline::from(pipeline), "queries": queries, "timed": timed }));
            rec.input(&db)?;
            rec.input(&corpus)?;
            rec.write(&out.join("run.json"))?;
        }
        Command::Bench { common, db, methods, comparisons, warmup, queries, out } => {
            let settings = common.run_config()?.resolve()?;
            let database = formats::db::load(&db, None)?;
            let all: Vec<usize> = (0..database.len()).collect();
            let picked = pick_queries(&all, Some(queries), settings.seed);
            let methods = parse_methods(&methods, settings.method)?;
            let table = bench_compare(&database, &picked, &methods, comparisons, warmup, &settings.query.matching)?;
            write_json(&out.join("bench.json"), &table)?;
            write_file(&out.join("bench.csv"), table.to_csv().as_bytes())?;
            let mut rec = Record::new("bench", settings, json!({ "comparisons": comparisons, "warmup": warmup, "queries": queries }));
            rec.input(&db)?;
            rec.write(&out.join("run.json"))?;
            eprint!("{}", table.to_csv());
        }
        Command::Sweep { common, corpus, phis, sigmas, queries, out } => {
            let base = common.run_config()?;
            let settings = base.resolve()?;
            let provider = Provider::load(&settings.descriptor)?;
            let c = Corpus::load(&corpus)?;
            let images = c.images();
            let mut rows = Vec::new();
            for &phi in &phis {
                for &sigma in &sigmas {
                    let point = RunConfig { phi: Some(phi), sigma: Some(sigma), ..base.clone() }.resolve()?;
                    let described = describe_corpus(&images, &point.detector, &provider.provider)?;
                    let row = sweep_point(
                        &settings.descriptor.to_string(),
                        &point.detector,
                        described,
                        c.ground_truth(),
                        Some(queries),
                        &point.query,
                        point.seed,
                    )?;
                    eprintln!("phi {phi} sigma {sigma}: mAP {:?}", row.map_gv);
                    rows.push(row);
                }
            }
            write_file(&out, to_csv(&rows).as_bytes())?;
            let mut rec = Record::new("sweep", settings, json!({ "phis": phis, "sigmas": sigmas, "queries": queries }));
            rec.input(&corpus)?;
            external_input(&mut rec)?;
            rec.write(&beside(&out))?;
        }
    }
    Ok(())
}

fn external_input(rec: &mut Record) -> Result<()> {
    if let DescriptorSource::External(p) = rec.settings.descriptor.clone() {
        rec.input(&p)?;
    }
    Ok(())
}
