//! `analogylab` command-line front end.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use analogylab::metrics::{self, MetricOptions};
use analogylab::pipeline::{self, ModelSpec, RunConfig};
use analogylab::synth::{self, SynthConfig};
use analogylab::{EmbeddingStore, Error, ErrorClass, LoadOptions, Result, RuleKind, RuleOptions};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

#[derive(Parser)]
#[command(
    name = "analogylab",
    version,
    about = "Evaluate four-term word analogies (A:B::C:D) in embedding spaces",
    after_help = "Exit codes: 0 ok, 1 usage, 2 data error, 3 numeric error.\n\
                  ANALOGYLAB_THREADS caps the number of worker threads."
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Load an embedding file, build its binary cache and print store statistics.
    Ingest(IngestArgs),
    /// Rank every observed completion under one rule (JSONL output).
    Rank(RankArgs),
    /// Cumulative proportion retrieved per rule and system.
    Cpr(CprArgs),
    /// Centroid convergence between the baseline and every other system.
    Centroids(AnalysisArgs),
    /// Per-completion predictors, plus per-stem deltas when ratings are given.
    Predictors(AnalysisArgs),
    /// Standardized regression of rating deltas on predictor deltas.
    Regress(RegressArgs),
    /// Paired t-test of system vs baseline weighted ratings.
    Ttest(TtestArgs),
    /// Run every analysis and write the full report bundle.
    Report(ReportArgs),
    /// Generate a synthetic dataset with planted parallelogram completions.
    Synth(SynthArgs),
}

#[derive(Args, Clone)]
struct StoreArgs {
    /// Embedding file: GloVe-style text or the binary cache (sniffed by magic bytes).
    #[arg(long)]
    embeddings: PathBuf,
    /// Lowercase words on load (first occurrence wins on collisions).
    #[arg(long)]
    lowercase: bool,
    /// Do not read or write the binary cache next to a text embedding file.
    #[arg(long)]
    no_cache: bool,
}

#[derive(Args, Clone)]
struct InputArgs {
    #[command(flatten)]
    store: StoreArgs,
    /// Stems CSV (stem_id,a,b,c[,relation_category,relation_subtype]).
    #[arg(long)]
    stems: PathBuf,
    /// Responses CSV (stem_id,system,d_term[,count]).
    #[arg(long)]
    responses: PathBuf,
    /// Ratings CSV (stem_id,d_term,rating[,rater_id]); ratings lie in [1, 7].
    #[arg(long)]
    ratings: Option<PathBuf>,
    /// Word frequency TSV (word<TAB>relative frequency).
    #[arg(long)]
    wordfreq: Option<PathBuf>,
    /// Drop completions produced fewer than N times.
    #[arg(long, default_value_t = 2)]
    min_count: u64,
    /// Per-system minimum count override, as SYSTEM=N (repeatable).
    #[arg(long, value_parser = parse_system_count)]
    min_count_system: Vec<(String, u64)>,
    /// Keep only each distribution's modal completion(s).
    #[arg(long)]
    modal_only: bool,
    /// Relative frequency assigned to words missing from the frequency table.
    #[arg(long, default_value_t = analogylab::dataset::DEFAULT_OOV_FLOOR)]
    oov_floor: f64,
    /// System that the others are compared against.
    #[arg(long, default_value = pipeline::DEFAULT_BASELINE)]
    baseline: String,
    /// Average constituent vectors of multi-word completions (centroids and predictors only).
    #[arg(long)]
    multiword: bool,
    /// Build the parallelogram offset from unnormalized vectors (text embeddings only).
    #[arg(long)]
    raw_offset: bool,
}

#[derive(Args)]
struct IngestArgs {
    #[command(flatten)]
    store: StoreArgs,
    /// Write the binary cache here instead of next to the embedding file.
    #[arg(long)]
    cache: Option<PathBuf>,
}

#[derive(Args)]
struct RankArgs {
    #[command(flatten)]
    inputs: InputArgs,
    /// Completion rule.
    #[arg(long, value_parser = parse_rule)]
    rule: RuleKind,
    /// Exclude the stem words A, B and C from the candidate set.
    #[arg(long)]
    exclude_stem: bool,
    /// Also emit the N best candidates for each stem.
    #[arg(long)]
    top_k: Option<usize>,
    /// Output file (stdout when omitted).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct CprArgs {
    #[command(flatten)]
    analysis: AnalysisArgs,
    /// Comma-separated percentile thresholds in (0, 100].
    #[arg(long, value_delimiter = ',', default_values_t = metrics::DEFAULT_TAUS)]
    taus: Vec<f64>,
    /// Exclude the stem words A, B and C from the candidate set.
    #[arg(long)]
    exclude_stem: bool,
}

#[derive(Args)]
struct AnalysisArgs {
    #[command(flatten)]
    inputs: InputArgs,
    /// Output directory for the CSV; the JSON summary goes to stdout.
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModelChoice {
    A,
    B,
    Custom,
    /// Both A and B.
    Both,
}

#[derive(Args)]
struct ModelArgs {
    /// Regression model: A (parallelogram, cd, log_freq), B (parallelogram, nn, log_freq) or custom.
    #[arg(long, value_enum, default_value = "both")]
    model: ModelChoice,
    /// Predictors of the custom model (comma-separated from parallelogram, cd, nn, log_freq).
    #[arg(long, value_delimiter = ',')]
    predictors: Vec<String>,
}

impl ModelArgs {
    fn specs(&self) -> Result<Vec<ModelSpec>> {
        if !self.predictors.is_empty() && !matches!(self.model, ModelChoice::Custom) {
            return Err(Error::InvalidArgument(
                "--predictors requires --model custom".into(),
            ));
        }
        Ok(match self.model {
            ModelChoice::A => vec![ModelSpec::model_a()],
            ModelChoice::B => vec![ModelSpec::model_b()],
            ModelChoice::Both => vec![ModelSpec::model_a(), ModelSpec::model_b()],
            ModelChoice::Custom => vec![ModelSpec::custom(self.predictors.clone())?],
        })
    }
}

#[derive(Args)]
#[group(id = "source", required = true, multiple = false)]
struct DeltaSource {
    /// A deltas.csv written by `predictors` or `report`.
    #[arg(long, group = "source")]
    deltas: Option<PathBuf>,
    /// Compute deltas from raw inputs instead (requires --stems, --responses, --ratings, --wordfreq).
    #[arg(long, group = "source", requires_all = ["stems", "responses"])]
    embeddings: Option<PathBuf>,
    /// Stems CSV (raw-input mode).
    #[arg(long)]
    stems: Option<PathBuf>,
    /// Responses CSV (raw-input mode).
    #[arg(long)]
    responses: Option<PathBuf>,
    /// Ratings CSV (raw-input mode).
    #[arg(long)]
    ratings: Option<PathBuf>,
    /// Word frequency TSV (raw-input mode).
    #[arg(long)]
    wordfreq: Option<PathBuf>,
    /// Lowercase words on load.
    #[arg(long)]
    lowercase: bool,
    /// Do not read or write the binary embedding cache.
    #[arg(long)]
    no_cache: bool,
    /// Drop completions produced fewer than N times.
    #[arg(long, default_value_t = 2)]
    min_count: u64,
    /// Keep only each distribution's modal completion(s).
    #[arg(long)]
    modal_only: bool,
    /// Relative frequency assigned to words missing from the frequency table.
    #[arg(long, default_value_t = analogylab::dataset::DEFAULT_OOV_FLOOR)]
    oov_floor: f64,
    /// System that the others are compared against.
    #[arg(long, default_value = pipeline::DEFAULT_BASELINE)]
    baseline: String,
    /// Average constituent vectors of multi-word completions.
    #[arg(long)]
    multiword: bool,
}

#[derive(Args)]
struct RegressArgs {
    #[command(flatten)]
    source: DeltaSource,
    #[command(flatten)]
    model: ModelArgs,
}

#[derive(Args)]
struct TtestArgs {
    #[command(flatten)]
    source: DeltaSource,
    /// One test per system instead of pooling all systems.
    #[arg(long)]
    by_system: bool,
}

#[derive(Args)]
struct ReportArgs {
    #[command(flatten)]
    inputs: InputArgs,
    /// Output directory for the report bundle.
    #[arg(long)]
    out_dir: PathBuf,
    /// Comma-separated percentile thresholds in (0, 100].
    #[arg(long, value_delimiter = ',', default_values_t = metrics::DEFAULT_TAUS)]
    taus: Vec<f64>,
    #[command(flatten)]
    model: ModelArgs,
    /// Omit the timestamp so repeated runs are byte-identical.
    #[arg(long)]
    deterministic: bool,
}

#[derive(Args)]
struct SynthArgs {
    /// Random seed.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Number of analogy stems.
    #[arg(long, default_value_t = 100)]
    n_stems: usize,
    /// Number of background words (planted completions come on top).
    #[arg(long, default_value_t = 500)]
    vocab_size: usize,
    /// Embedding dimensionality.
    #[arg(long, default_value_t = 16)]
    dim: usize,
    /// Target share of human productions going to modal completions.
    #[arg(long, default_value_t = 0.64)]
    human_modal_share: f64,
    /// Target share of LLM productions going to modal completions.
    #[arg(long, default_value_t = 0.85)]
    llm_modal_share: f64,
    /// Productions per stem and system.
    #[arg(long, default_value_t = 100)]
    responses_per_stem: u64,
    /// Output directory.
    #[arg(long)]
    out_dir: PathBuf,
}

fn parse_rule(s: &str) -> std::result::Result<RuleKind, String> {
    s.parse::<RuleKind>().map_err(|e| e.to_string())
}

fn parse_system_count(s: &str) -> std::result::Result<(String, u64), String> {
    let (sys, n) = s
        .split_once('=')
        .ok_or_else(|| format!("expected SYSTEM=N, got {s:?}"))?;
    let n = n.parse().map_err(|_| format!("{n:?} is not a count"))?;
    Ok((sys.to_string(), n))
}

impl InputArgs {
    fn config(&self, out_dir: PathBuf) -> RunConfig {
        let mut c = RunConfig::new(
            self.store.embeddings.clone(),
            self.stems.clone(),
            self.responses.clone(),
            out_dir,
        );
        c.ratings = self.ratings.clone();
        c.wordfreq = self.wordfreq.clone();
        c.lowercase = self.store.lowercase;
        c.use_cache = !self.store.no_cache;
        c.min_count = self.min_count;
        c.min_count_by_system = self.min_count_system.iter().cloned().collect();
        c.modal_only = self.modal_only;
        c.oov_floor = self.oov_floor;
        c.baseline = self.baseline.clone();
        c.multiword = self.multiword;
        c.raw_offset = self.raw_offset;
        c
    }
}

fn metric_options(c: &RunConfig) -> MetricOptions {
    MetricOptions {
        multiword: c.multiword,
    }
}

fn stdout_json(v: &serde_json::Value) -> Result<()> {
    let mut out = io::stdout().lock();
    serde_json::to_writer_pretty(&mut out, v)?;
    out.write_all(b"\n")?;
    Ok(())
}

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>> {
    fs::create_dir_all(dir)?;
    Ok(BufWriter::new(File::create(dir.join(name))?))
}

fn ingest(a: IngestArgs) -> Result<()> {
    let opts = LoadOptions {
        expected_dim: None,
        lowercase: a.store.lowercase,
    };
    let store = match (&a.cache, a.store.no_cache) {
        (Some(path), _) => {
            let s = EmbeddingStore::open(&a.store.embeddings, opts)?;
            s.write_cache_file(path)?;
            s
        }
        (None, true) => EmbeddingStore::open(&a.store.embeddings, opts)?,
        (None, false) => EmbeddingStore::open_cached(&a.store.embeddings, opts)?,
    };
    stdout_json(&json!({
        "vocabulary": store.len(),
        "dim": store.dim(),
        "dropped": store.dropped(),
    }))
}

fn rank(a: RankArgs) -> Result<()> {
    let config = a.inputs.config(PathBuf::new());
    config.validate_inputs(false, false)?;
    if a.top_k == Some(0) {
        return Err(Error::InvalidArgument("--top-k must be positive".into()));
    }
    let inputs = pipeline::load_inputs(&config)?;
    let stage = pipeline::rank_stage(
        &inputs.store,
        &inputs.stems,
        &inputs.prepared.dists,
        &[a.rule],
        &[a.exclude_stem],
        RuleOptions {
            raw_offset: config.raw_offset,
        },
        a.top_k,
    );
    match &a.out {
        Some(p) => pipeline::write_ranks_jsonl(
            BufWriter::new(File::create(p)?),
            &stage.records,
            &stage.top_k,
        )?,
        None => pipeline::write_ranks_jsonl(
            BufWriter::new(io::stdout().lock()),
            &stage.records,
            &stage.top_k,
        )?,
    }
    let tallies: Vec<_> = stage
        .tallies
        .iter()
        .map(|((_, system, _), t)| json!({"system": system, "counts": t}))
        .collect();
    eprintln!("{}", json!({ "rank_counts": tallies }));
    Ok(())
}

fn cpr(a: CprArgs) -> Result<()> {
    let mut config = a.analysis.inputs.config(a.analysis.out_dir.clone());
    config.taus = a.taus;
    config.validate_inputs(false, false)?;
    let inputs = pipeline::load_inputs(&config)?;
    let stage = pipeline::rank_stage(
        &inputs.store,
        &inputs.stems,
        &inputs.prepared.dists,
        &RuleKind::ALL,
        &[a.exclude_stem],
        RuleOptions {
            raw_offset: config.raw_offset,
        },
        None,
    );
    let groups = pipeline::cpr_stage(&stage, &config.taus)?;
    pipeline::write_cpr_csv(create(&config.out_dir, "cpr.csv")?, &groups)?;
    let tallies: Vec<_> = stage
        .tallies
        .iter()
        .map(|((rule, system, mode), t)| {
            json!({"rule": rule, "system": system, "exclude_stem": mode, "counts": t})
        })
        .collect();
    let summary: Vec<_> = groups
        .iter()
        .map(|g| {
            json!({
                "rule": g.curve.rule,
                "system": g.curve.system,
                "mean_rank": g.mean_rank,
                "mean_percentile": g.mean_percentile,
            })
        })
        .collect();
    stdout_json(&json!({
        "schema_version": pipeline::SCHEMA_VERSION,
        "preparation": inputs.prepared.stats,
        "counts": tallies,
        "groups": summary,
    }))
}

fn centroids(a: AnalysisArgs) -> Result<()> {
    let config = a.inputs.config(a.out_dir);
    config.validate_inputs(false, false)?;
    let inputs = pipeline::load_inputs(&config)?;
    let rows = pipeline::centroid_stage(
        &inputs.store,
        &inputs.stems,
        &inputs.prepared.dists,
        &config.baseline,
        metric_options(&config),
    );
    pipeline::write_centroids_csv(create(&config.out_dir, "centroids.csv")?, &rows)?;
    let mut status: BTreeMap<&str, usize> = BTreeMap::new();
    for r in &rows {
        *status.entry(r.status).or_default() += 1;
    }
    stdout_json(&json!({
        "schema_version": pipeline::SCHEMA_VERSION,
        "preparation": inputs.prepared.stats,
        "status": status,
        "summary": pipeline::summarize_centroids(&rows),
    }))
}

fn predictors(a: AnalysisArgs) -> Result<()> {
    let config = a.inputs.config(a.out_dir);
    config.validate_inputs(false, false)?;
    let inputs = pipeline::load_inputs(&config)?;
    let opts = metric_options(&config);
    let stage = pipeline::predictor_stage(
        &inputs.store,
        &inputs.freq,
        &inputs.stems,
        &inputs.prepared.dists,
        opts,
    );
    pipeline::write_predictors_csv(
        create(&config.out_dir, "predictors.csv")?,
        &stage.rows,
        inputs.ratings.as_ref(),
    )?;
    let mut summary = json!({
        "schema_version": pipeline::SCHEMA_VERSION,
        "preparation": inputs.prepared.stats,
        "counts": stage.tally,
    });
    if let Some(ratings) = &inputs.ratings {
        let report = metrics::delta_rows(
            &inputs.store,
            &inputs.freq,
            ratings,
            &inputs.stems,
            &inputs.prepared.dists,
            &config.baseline,
            opts,
        );
        pipeline::write_deltas_csv(create(&config.out_dir, "deltas.csv")?, &report.rows)?;
        summary["deltas"] = json!({
            "candidates": report.candidates,
            "rows": report.rows.len(),
            "skipped": report.skipped,
        });
    }
    stdout_json(&summary)
}

fn load_delta_rows(s: &DeltaSource) -> Result<Vec<metrics::AnalysisRow>> {
    if let Some(path) = &s.deltas {
        if !path.is_file() {
            return Err(Error::InvalidArgument(format!(
                "deltas file not found: {}",
                path.display()
            )));
        }
        return pipeline::read_deltas_csv(File::open(path)?);
    }
    let (Some(emb), Some(stems), Some(responses)) = (&s.embeddings, &s.stems, &s.responses) else {
        return Err(Error::InvalidArgument(
            "either --deltas or --embeddings/--stems/--responses is required".into(),
        ));
    };
    let mut c = RunConfig::new(
        emb.clone(),
        stems.clone(),
        responses.clone(),
        PathBuf::new(),
    );
    c.ratings = s.ratings.clone();
    c.wordfreq = s.wordfreq.clone();
    c.lowercase = s.lowercase;
    c.use_cache = !s.no_cache;
    c.min_count = s.min_count;
    c.modal_only = s.modal_only;
    c.oov_floor = s.oov_floor;
    c.baseline = s.baseline.clone();
    c.multiword = s.multiword;
    c.validate_for_report()?;
    let inputs = pipeline::load_inputs(&c)?;
    let report = metrics::delta_rows(
        &inputs.store,
        &inputs.freq,
        inputs.ratings.as_ref().expect("validated"),
        &inputs.stems,
        &inputs.prepared.dists,
        &c.baseline,
        metric_options(&c),
    );
    Ok(report.rows)
}

fn regress(a: RegressArgs) -> Result<()> {
    let specs = a.model.specs()?;
    let rows = load_delta_rows(&a.source)?;
    let entries = pipeline::regression_stage(&rows, &specs);
    stdout_json(&json!({
        "schema_version": pipeline::SCHEMA_VERSION,
        "outcome": "delta_rating",
        "n_rows": rows.len(),
        "models": entries,
    }))
}

fn ttest(a: TtestArgs) -> Result<()> {
    let rows = load_delta_rows(&a.source)?;
    stdout_json(&json!({
        "schema_version": pipeline::SCHEMA_VERSION,
        "measure": "weighted_rating",
        "tests": pipeline::ttest_stage(&rows, a.by_system),
    }))
}

fn report(a: ReportArgs) -> Result<()> {
    let mut config = a.inputs.config(a.out_dir);
    config.taus = a.taus;
    config.models = a.model.specs()?;
    config.deterministic = a.deterministic;
    let summary = pipeline::run_report(&config)?;
    stdout_json(&json!({
        "out_dir": config.out_dir,
        "files": summary.files,
        "delta_rows": summary.deltas.rows,
    }))
}

fn synth_cmd(a: SynthArgs) -> Result<()> {
    let cfg = SynthConfig {
        seed: a.seed,
        n_stems: a.n_stems,
        vocab_size: a.vocab_size,
        dim: a.dim,
        human_modal_share: a.human_modal_share,
        llm_modal_share: a.llm_modal_share,
        responses_per_stem: a.responses_per_stem,
    };
    let data = synth::generate(&cfg)?;
    data.write_to_dir(&a.out_dir)?;
    stdout_json(&json!({
        "out_dir": a.out_dir,
        "config": cfg,
        "stems": data.stems.len(),
        "vocabulary": data.vectors.len(),
    }))
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Ingest(a) => ingest(a),
        Command::Rank(a) => rank(a),
        Command::Cpr(a) => cpr(a),
        Command::Centroids(a) => centroids(a),
        Command::Predictors(a) => predictors(a),
        Command::Regress(a) => regress(a),
        Command::Ttest(a) => ttest(a),
        Command::Report(a) => report(a),
        Command::Synth(a) => synth_cmd(a),
    }
}

fn emit_error(kind: &str, class: &str, message: &str) {
    eprintln!(
        "{}",
        json!({"error": {"kind": kind, "class": class, "message": message}})
    );
}

fn configure_threads() -> Result<()> {
    let Ok(raw) = std::env::var("ANALOGYLAB_THREADS") else {
        return Ok(());
    };
    let n: usize = raw.trim().parse().ok().filter(|n| *n > 0).ok_or_else(|| {
        Error::InvalidArgument(format!(
            "ANALOGYLAB_THREADS={raw:?} is not a positive integer"
        ))
    })?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Error::InvalidArgument(e.to_string()))
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = e.print();
                return ExitCode::SUCCESS;
            }
            emit_error("usage", "usage", e.to_string().trim_end());
            return ExitCode::from(1);
        }
    };
    let result = configure_threads().and_then(|_| run(cli));
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let (class, code) = match e.class() {
                ErrorClass::Usage => ("usage", 1),
                ErrorClass::Data => ("data", 2),
                ErrorClass::Numeric => ("numeric", 3),
            };
            emit_error(e.kind(), class, &e.to_string());
            ExitCode::from(code)
        }
    }
}
