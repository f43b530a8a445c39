//! The `psa` command-line tool.
//!
//! Exit codes: 0 success, 1 usage error, 2 data or format error, 3 internal
//! invariant violation. Results go to stdout and files, diagnostics to
//! stderr. `PSA_THREADS` caps the worker pool.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Duration;

use clap::{Parser, Subcommand, ValueEnum};

use crate::bench::{self, BenchReport};
use crate::error::{FormatError, PsaError};
use crate::io::{self, EmbeddingFile};
use crate::metrics::{self, MaskPair};
use crate::model::{Corpus, EmbeddingVector, PsaConfig};
use crate::query::{respond, respond_batch, QueryResponse};
use crate::space::{build_space, space_summary, PrototypeSpace};
use crate::synth::{self, SynthSpec};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_INVARIANT: i32 = 3;

/// Tolerance on the sum of printed `--explain` weights.
const WEIGHT_SUM_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Parser)]
#[command(name = "psa", version, about = "Prototype space construction and querying")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Build a prototype space from a corpus manifest.
    Build {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        params: BuildParams,
    },
    /// Answer image-embedding queries from a prototype space.
    Query {
        #[arg(long)]
        space: PathBuf,
        #[arg(long)]
        queries: PathBuf,
        /// Defaults to the value stored in the space.
        #[arg(long)]
        topk: Option<usize>,
        #[arg(long)]
        out: PathBuf,
        /// Print the selected prototypes of every query as tab-separated rows.
        #[arg(long)]
        explain: bool,
    },
    /// Summarize a prototype space.
    Inspect {
        #[arg(long)]
        space: PathBuf,
    },
    /// Time queries, scaling across corpus sizes, and a simulated generator.
    Bench {
        #[arg(long)]
        space: PathBuf,
        #[arg(long)]
        queries: PathBuf,
        #[arg(long)]
        topk: Option<usize>,
        #[arg(long, default_value_t = 100)]
        repetitions: usize,
        /// Synthesize and build one extra space per size with the same
        /// configuration, and compare their latencies.
        #[arg(long, value_delimiter = ',')]
        corpus_sizes: Vec<usize>,
        #[arg(long)]
        per_token_cost_us: Option<u64>,
        #[arg(long, value_delimiter = ',', default_value = "1,2,4,8,16,32")]
        tokens: Vec<usize>,
        #[arg(long, default_value_t = 0)]
        llm_overhead_us: u64,
        /// Also measure multi-threaded batch throughput.
        #[arg(long)]
        throughput: bool,
        /// Write the report as key=value lines.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Generate a synthetic corpus of Gaussian blobs.
    Synth {
        #[arg(long)]
        blobs: usize,
        #[arg(long)]
        per_blob: usize,
        #[arg(long)]
        dim: usize,
        #[arg(long)]
        sep: f64,
        #[arg(long)]
        sigma: f64,
        #[arg(long)]
        paired_fraction: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Dice and mIoU between predicted and ground-truth mask directories.
    Eval {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gt: PathBuf,
    },
    /// Retrieval quality on a labelled corpus across one parameter.
    Sweep {
        #[arg(long, value_enum)]
        param: SweepParam,
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<usize>,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        labels: PathBuf,
        #[command(flatten)]
        params: BuildParams,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum SweepParam {
    Topk,
    Subclusters,
}

#[derive(Debug, clap::Args)]
struct BuildParams {
    #[arg(long, default_value_t = PsaConfig::DEFAULT_TAU)]
    tau: f64,
    #[arg(long, default_value_t = PsaConfig::DEFAULT_MIN_CLUSTER_SIZE)]
    min_cluster_size: usize,
    #[arg(long, default_value_t = PsaConfig::DEFAULT_SUBCLUSTERS)]
    subclusters: usize,
    #[arg(long, default_value_t = PsaConfig::DEFAULT_TOP_K)]
    topk: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

impl BuildParams {
    fn config(&self) -> Result<PsaConfig, CliError> {
        let cfg = PsaConfig {
            tau: self.tau,
            min_cluster_size: self.min_cluster_size,
            subclusters_per_label: self.subclusters,
            top_k: self.topk,
            seed: self.seed,
        };
        cfg.validate().map_err(|e| CliError::Usage(e.to_string()))?;
        Ok(cfg)
    }
}

#[derive(Debug)]
enum CliError {
    Usage(String),
    Data(PsaError),
}

impl CliError {
    fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Data(PsaError::Invariant(_)) => EXIT_INVARIANT,
            CliError::Data(_) => EXIT_DATA,
        }
    }
}

impl From<PsaError> for CliError {
    fn from(e: PsaError) -> Self {
        CliError::Data(e)
    }
}

impl From<FormatError> for CliError {
    fn from(e: FormatError) -> Self {
        CliError::Data(e.into())
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage: {m}"),
            CliError::Data(PsaError::Format(e)) => write!(f, "[{}] {e}", e.code()),
            CliError::Data(e) => write!(f, "{e}"),
        }
    }
}

/// Parses `argv` (including the program name), runs the command, and
/// returns the process exit code.
pub fn run<I, S>(argv: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    if let Err(e) = configure_threads() {
        eprintln!("psa: {e}");
        return e.exit_code();
    }
    match execute(cli.command) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("psa: {e}");
            e.exit_code()
        }
    }
}

/// Writes to stdout; a reader that closed the pipe early is not an error.
fn emit(text: &str) {
    use std::io::Write;
    let _ = std::io::stdout().lock().write_all(text.as_bytes());
}

fn configure_threads() -> Result<(), CliError> {
    let Ok(raw) = std::env::var("PSA_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| CliError::Usage(format!("PSA_THREADS = {raw:?} is not a positive integer")))?;
    // A pool configured earlier in the same process stays in effect.
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(())
}

fn execute(command: Command) -> Result<(), CliError> {
    match command {
        Command::Build { manifest, out, params } => cmd_build(&manifest, &out, &params),
        Command::Query {
            space,
            queries,
            topk,
            out,
            explain,
        } => cmd_query(&space, &queries, topk, &out, explain),
        Command::Inspect { space } => {
            let space: PrototypeSpace<f64> = io::read_space(&space)?;
            emit(&space_summary(&space).to_string());
            Ok(())
        }
        Command::Bench {
            space,
            queries,
            topk,
            repetitions,
            corpus_sizes,
            per_token_cost_us,
            tokens,
            llm_overhead_us,
            throughput,
            report,
        } => {
            let opts = BenchOptions {
                topk,
                repetitions,
                corpus_sizes,
                per_token_cost_us,
                tokens,
                llm_overhead_us,
                throughput,
            };
            cmd_bench(&space, &queries, &opts, report.as_deref())
        }
        Command::Synth {
            blobs,
            per_blob,
            dim,
            sep,
            sigma,
            paired_fraction,
            seed,
            out,
        } => {
            let spec = SynthSpec {
                num_blobs: blobs,
                samples_per_blob: per_blob,
                dimension: dim,
                blob_separation: sep,
                noise_sigma: sigma,
                paired_fraction,
                seed,
            };
            cmd_synth(&spec, &out)
        }
        Command::Eval { pred, gt } => cmd_eval(&pred, &gt),
        Command::Sweep {
            param,
            values,
            manifest,
            labels,
            params,
        } => cmd_sweep(param, &values, &manifest, &labels, &params),
    }
}

fn cmd_build(manifest: &Path, out: &Path, params: &BuildParams) -> Result<(), CliError> {
    let cfg = params.config()?;
    let corpus: Corpus<f64> = io::read_corpus(manifest)?;
    let space = build_space(&corpus, &cfg)?;
    io::write_space(out, &space)?;
    emit(&space_summary(&space).to_string());
    Ok(())
}

fn read_queries(path: &Path) -> Result<Vec<EmbeddingVector<f64>>, CliError> {
    Ok(io::read_embeddings::<f64>(path)?.rows)
}

fn cmd_query(space_path: &Path, queries: &Path, topk: Option<usize>, out: &Path, explain: bool) -> Result<(), CliError> {
    if topk == Some(0) {
        return Err(CliError::Usage("--topk must be at least 1".into()));
    }
    let space: PrototypeSpace<f64> = io::read_space(space_path)?;
    let k = topk.unwrap_or(space.build_config().top_k);
    if k > space.len() {
        return Err(CliError::Usage(format!(
            "--topk {k} exceeds the {} prototypes in the space",
            space.len()
        )));
    }
    let queries = read_queries(queries)?;
    let responses = respond_batch(&space, &queries, k)
        .into_iter()
        .enumerate()
        .map(|(i, r)| r.map_err(|e| PsaError::InvalidArgument(format!("query {i}: {e}"))))
        .collect::<Result<Vec<_>, _>>()?;

    if explain {
        let mut text = String::from("query\trank\tlabel\tsub\tsource\tsimilarity\tweight\n");
        for (i, r) in responses.iter().enumerate() {
            check_weights(i, r)?;
            for (rank, s) in r.selected.iter().enumerate() {
                let c = &s.candidate;
                let source = &space.prototypes()[c.index].source_sample_id;
                let _ = writeln!(
                    text,
                    "{i}\t{rank}\t{}\t{}\t{source}\t{:.9}\t{:.9}",
                    c.label_index, c.sub_index, c.similarity, s.weight
                );
            }
        }
        emit(&text);
    }

    let rows = responses.into_iter().map(|r| r.response).collect();
    io::write_embeddings(out, &EmbeddingFile::new(space.dimension(), rows)?)?;
    Ok(())
}

fn check_weights(query: usize, r: &QueryResponse<f64>) -> Result<(), CliError> {
    let sum: f64 = r.selected.iter().map(|s| s.weight).sum();
    if (sum - 1.0).abs() > WEIGHT_SUM_TOLERANCE {
        return Err(PsaError::Invariant(format!("query {query}: weights sum to {sum}")).into());
    }
    Ok(())
}

struct BenchOptions {
    topk: Option<usize>,
    repetitions: usize,
    corpus_sizes: Vec<usize>,
    per_token_cost_us: Option<u64>,
    tokens: Vec<usize>,
    llm_overhead_us: u64,
    throughput: bool,
}

/// Synthetic blobs sized to reproduce `reference`'s configuration at a
/// given corpus size.
fn scaling_spec(reference: &PrototypeSpace<f64>, corpus_size: usize) -> SynthSpec {
    let dim = reference.dimension();
    let blobs = reference.num_labels().clamp(1, 2 * dim);
    SynthSpec {
        num_blobs: blobs,
        samples_per_blob: (corpus_size / blobs).max(1),
        dimension: dim,
        blob_separation: 8.0,
        noise_sigma: 1.0,
        paired_fraction: 1.0,
        seed: reference.build_config().seed,
    }
}

fn cmd_bench(space_path: &Path, queries: &Path, opts: &BenchOptions, report_path: Option<&Path>) -> Result<(), CliError> {
    if opts.repetitions < bench::MIN_REPETITIONS {
        return Err(CliError::Usage(format!(
            "--repetitions must be at least {}",
            bench::MIN_REPETITIONS
        )));
    }
    if opts.per_token_cost_us == Some(0) {
        return Err(CliError::Usage("--per-token-cost-us must be positive".into()));
    }
    let space: PrototypeSpace<f64> = io::read_space(space_path)?;
    let k = opts.topk.unwrap_or(space.build_config().top_k);
    if k == 0 || k > space.len() {
        return Err(CliError::Usage(format!("--topk must be in 1..={}", space.len())));
    }
    let queries = read_queries(queries)?;

    let mut report = BenchReport {
        top_k: k,
        space_size: space.len(),
        query: Some(bench::bench_query(&space, &queries, k, opts.repetitions)?),
        ..BenchReport::default()
    };

    if !opts.corpus_sizes.is_empty() {
        let mut built = Vec::with_capacity(opts.corpus_sizes.len());
        for &size in &opts.corpus_sizes {
            eprintln!("psa: building space from {size} synthetic samples");
            let (corpus, _) = synth::generate::<f64>(&scaling_spec(&space, size))?;
            built.push((corpus.len(), build_space(&corpus, space.build_config())?));
        }
        let refs: Vec<(usize, &PrototypeSpace<f64>)> = built.iter().map(|(n, s)| (*n, s)).collect();
        let kk = refs.iter().map(|(_, s)| s.len()).min().unwrap_or(k).min(k);
        report.scaling = Some(bench::bench_scaling(&refs, &queries, kk, opts.repetitions, space.build_config().seed)?);
    }

    if let Some(cost) = opts.per_token_cost_us {
        report.per_token_cost_us = Some(cost as f64);
        report.llm = Some(bench::bench_simulated_llm(
            &opts.tokens,
            Duration::from_micros(cost),
            Duration::from_micros(opts.llm_overhead_us),
            5,
        )?);
    }

    if opts.throughput {
        report.threads = Some(rayon::current_num_threads());
        report.throughput_qps = Some(bench::bench_throughput(&space, &queries, k, opts.repetitions)?);
    }

    emit(&report.to_table());
    if let Some(path) = report_path {
        io::write_atomic(path, report.to_key_values().as_bytes())?;
    }
    Ok(())
}

pub const LABELS_FILE: &str = "labels.csv";
pub const QUERIES_FILE: &str = "queries.psae";

fn cmd_synth(spec: &SynthSpec, out: &Path) -> Result<(), CliError> {
    spec.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    let (corpus, blobs) = synth::generate::<f64>(spec)?;
    let manifest = io::write_corpus(out, &corpus)?;
    let labels: Vec<(String, usize)> = corpus.samples().map(|s| s.id.clone()).zip(blobs).collect();
    io::write_labels(&out.join(LABELS_FILE), &labels)?;
    let queries = corpus.image_only.iter().map(|s| s.image_embedding.clone()).collect();
    io::write_embeddings(&out.join(QUERIES_FILE), &EmbeddingFile::new(spec.dimension, queries)?)?;
    emit(&format!(
        "wrote {} ({} paired, {} image-only)\n",
        manifest.display(),
        corpus.paired.len(),
        corpus.image_only.len()
    ));
    Ok(())
}

fn mask_files(dir: &Path) -> Result<Vec<String>, CliError> {
    let entries = fs::read_dir(dir).map_err(|e| FormatError::Io {
        path: dir.to_path_buf(),
        source: e,
    })?;
    let mut names = Vec::new();
    for entry in entries {
        let entry = entry.map_err(|e| FormatError::Io {
            path: dir.to_path_buf(),
            source: e,
        })?;
        if entry.path().is_file() {
            names.push(entry.file_name().to_string_lossy().into_owned());
        }
    }
    names.sort();
    Ok(names)
}

fn cmd_eval(pred: &Path, gt: &Path) -> Result<(), CliError> {
    let names = mask_files(gt)?;
    if names.is_empty() {
        return Err(PsaError::EmptyInput("ground-truth masks").into());
    }
    let mut pairs = Vec::with_capacity(names.len());
    for name in &names {
        let p = io::read_mask(&pred.join(name))?;
        let g = io::read_mask(&gt.join(name))?;
        pairs.push(MaskPair::new(p, g));
    }
    let counts = metrics::overlap_counts(&pairs)?;
    let mut text = String::from("mask\tdice\tiou\n");
    for (name, c) in names.iter().zip(&counts) {
        let _ = writeln!(text, "{name}\t{:.6}\t{:.6}", c.dice(), c.iou());
    }
    let _ = writeln!(text, "mean\t{:.6}\t{:.6}", metrics::dice(&pairs)?, metrics::miou(&pairs)?);
    emit(&text);
    Ok(())
}

/// Top-1 source-label accuracy, weight mass on prototypes of the query's
/// label, and cosine between the response and that label's mean text
/// embedding, averaged over image-only samples.
#[derive(Debug, Clone, Copy)]
struct RetrievalQuality {
    top1: f64,
    weight_purity: f64,
    response_cosine: f64,
}

fn retrieval_quality(
    space: &PrototypeSpace<f64>,
    corpus: &Corpus<f64>,
    labels: &HashMap<String, usize>,
    k: usize,
) -> Result<RetrievalQuality, CliError> {
    let label_of = |id: &str| {
        labels
            .get(id)
            .copied()
            .ok_or_else(|| PsaError::InvalidCorpus(format!("sample {id:?} missing from labels")))
    };
    let mut text_means: HashMap<usize, (Vec<f64>, usize)> = HashMap::new();
    for s in &corpus.paired {
        let Some(t) = &s.text_embedding else { continue };
        let entry = text_means
            .entry(label_of(&s.id)?)
            .or_insert_with(|| (vec![0.0; corpus.dimension], 0));
        for (acc, x) in entry.0.iter_mut().zip(t.as_slice()) {
            *acc += x;
        }
        entry.1 += 1;
    }
    let source_labels = space
        .prototypes()
        .iter()
        .map(|p| label_of(&p.source_sample_id))
        .collect::<Result<Vec<_>, _>>()?;

    if corpus.image_only.is_empty() {
        return Err(PsaError::EmptyInput("image-only samples to evaluate").into());
    }
    let (mut top1, mut purity, mut cosine) = (0.0, 0.0, 0.0);
    for s in &corpus.image_only {
        let truth = label_of(&s.id)?;
        let r = respond(space, &s.image_embedding, k)?;
        if source_labels[r.selected[0].candidate.index] == truth {
            top1 += 1.0;
        }
        purity += r
            .selected
            .iter()
            .filter(|x| source_labels[x.candidate.index] == truth)
            .map(|x| x.weight)
            .sum::<f64>();
        if let Some((sum, _)) = text_means.get(&truth) {
            let reference = EmbeddingVector::from_raw(sum.clone());
            cosine += crate::query::cosine_similarity(&r.response, &reference).unwrap_or(0.0);
        }
    }
    let n = corpus.image_only.len() as f64;
    Ok(RetrievalQuality {
        top1: top1 / n,
        weight_purity: purity / n,
        response_cosine: cosine / n,
    })
}

fn cmd_sweep(
    param: SweepParam,
    values: &[usize],
    manifest: &Path,
    labels_path: &Path,
    params: &BuildParams,
) -> Result<(), CliError> {
    let base = params.config()?;
    if values.contains(&0) {
        return Err(CliError::Usage("sweep values must be at least 1".into()));
    }
    let corpus: Corpus<f64> = io::read_corpus(manifest)?;
    let labels = io::read_labels(labels_path)?;

    let mut text = format!(
        "{}\tprototypes\ttop1_accuracy\tweight_purity\tresponse_cosine\n",
        match param {
            SweepParam::Topk => "topk",
            SweepParam::Subclusters => "subclusters",
        }
    );
    let fixed = match param {
        SweepParam::Topk => Some(build_space(&corpus, &base)?),
        SweepParam::Subclusters => None,
    };
    for &value in values {
        let (space, k) = match &fixed {
            Some(space) => (space.clone(), value),
            None => {
                let cfg = PsaConfig {
                    subclusters_per_label: value,
                    ..base
                };
                (build_space(&corpus, &cfg)?, base.top_k)
            }
        };
        let k = k.min(space.len());
        let q = retrieval_quality(&space, &corpus, &labels, k)?;
        let _ = writeln!(
            text,
            "{value}\t{}\t{:.4}\t{:.4}\t{:.4}",
            space.len(),
            q.top1,
            q.weight_purity,
            q.response_cosine
        );
    }
    emit(&text);
    Ok(())
}
