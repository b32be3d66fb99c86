//! The `kdcode` command-line tool.
//!
//! Every subcommand first echoes its fully resolved configuration as
//! `config<TAB>key<TAB>value` lines, then runs. Output goes to the supplied
//! writer; the binary maps errors to a single `error: …` line on stderr.

use std::collections::HashMap;
use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::codec::{min_code_dim, KdSpec, ScheduleMode, TemperatureSchedule};
use crate::composer::ComposerVariant;
use crate::data::{self, Checkpoint, EmbeddingMatrix, Report, SyntheticSpec};
use crate::error::Error;
use crate::eval::{self, NmiNorm, Similarity};
use crate::trainer::{self, CodeAssignment, CodeMode, TrainConfig};

#[derive(Debug, Parser)]
#[command(name = "kdcode", version, about = "Learn K-way D-dimensional codes for embedding tables")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic clustered embedding file and its cluster labels.
    GenSynthetic(GenSyntheticArgs),
    /// Learn codes for an embedding file.
    LearnCodes(LearnCodesArgs),
    /// Re-learn code embeddings and composer for a fixed codebook.
    Retrain(RetrainArgs),
    /// Reconstruction loss, neighbor preservation, parameter counts, NMI.
    Evaluate(EvaluateArgs),
    /// List symbols grouped by shared code.
    Inspect(InspectArgs),
    /// Parameter accounting without touching any data.
    ParamCount(ParamCountArgs),
}

#[derive(Debug, Args)]
pub struct GenSyntheticArgs {
    #[arg(long, default_value_t = 10_000)]
    pub num_points: usize,
    #[arg(long, default_value_t = 100)]
    pub num_clusters: usize,
    #[arg(long, default_value_t = 10)]
    pub dim: usize,
    #[arg(long, default_value_t = 10.0)]
    pub center_scale: f64,
    #[arg(long, default_value_t = 0.1)]
    pub noise_sigma: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Embedding text file to write.
    #[arg(long)]
    pub out: PathBuf,
    /// Cluster label file to write.
    #[arg(long)]
    pub labels_out: PathBuf,
}

/// Optimization flags shared by learning and retraining.
#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long, default_value_t = 0.01)]
    pub lr: f64,
    #[arg(long, default_value_t = 10)]
    pub epochs: usize,
    #[arg(long, default_value_t = 1)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = ComposerVariant::Linear)]
    pub composer: ComposerVariant,
    /// Code embedding width d′ (default: the embedding width d).
    #[arg(long)]
    pub dprime: Option<usize>,
    /// Visit symbols in file order instead of a shuffled order.
    #[arg(long)]
    pub no_shuffle: bool,
}

#[derive(Debug, Args)]
pub struct LearnCodesArgs {
    #[arg(long)]
    pub embeddings: PathBuf,
    /// Optional cluster labels; adds NMI of the learned codes to the report.
    #[arg(long)]
    pub labels: Option<PathBuf>,
    #[arg(long)]
    pub out_dir: PathBuf,
    #[arg(long = "K", default_value_t = 50)]
    pub k: usize,
    #[arg(long = "D", default_value_t = 10)]
    pub d: usize,
    #[arg(long, default_value_t = 1.0)]
    pub t0: f64,
    #[arg(long, default_value_t = 1.0)]
    pub decay_rate: f64,
    #[arg(long, default_value_t = ScheduleMode::Scheduled)]
    pub schedule: ScheduleMode,
    #[arg(long, default_value_t = CodeMode::Ste)]
    pub code_mode: CodeMode,
    /// Accept K^D < N; symbols then share codes, as in clustering.
    #[arg(long)]
    pub allow_collisions: bool,
    #[command(flatten)]
    pub train: TrainArgs,
}

#[derive(Debug, Args)]
pub struct RetrainArgs {
    #[arg(long)]
    pub embeddings: PathBuf,
    #[arg(long)]
    pub codebook: PathBuf,
    #[arg(long)]
    pub out_dir: PathBuf,
    #[command(flatten)]
    pub train: TrainArgs,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub embeddings: PathBuf,
    #[arg(long)]
    pub codebook: PathBuf,
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Cluster labels used for `--nmi`.
    #[arg(long)]
    pub labels: Option<PathBuf>,
    /// Report NMI between codes and the labels file.
    #[arg(long)]
    pub nmi: bool,
    #[arg(long, default_value_t = 10)]
    pub nn_k: usize,
    #[arg(long, default_value_t = NmiNorm::Geometric)]
    pub nmi_norm: NmiNorm,
    #[arg(long, default_value = "cosine", value_parser = parse_similarity)]
    pub similarity: Similarity,
    /// Also write the metrics as a report file.
    #[arg(long)]
    pub report_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct InspectArgs {
    #[arg(long)]
    pub codebook: PathBuf,
    #[arg(long, default_value_t = 1)]
    pub min_group_size: usize,
}

#[derive(Debug, Args)]
pub struct ParamCountArgs {
    #[arg(long = "N")]
    pub n: u64,
    #[arg(long = "d")]
    pub d: u64,
    #[arg(long = "K")]
    pub k: u64,
    /// Defaults to the smallest D with K^D >= N.
    #[arg(long = "D")]
    pub code_dims: Option<u64>,
    #[arg(long)]
    pub dprime: u64,
    #[arg(long)]
    pub composer: ComposerVariant,
}

impl clap::ValueEnum for ComposerVariant {
    fn value_variants<'a>() -> &'a [Self] {
        &[ComposerVariant::Linear, ComposerVariant::Lstm]
    }

    fn to_possible_value(&self) -> Option<clap::builder::PossibleValue> {
        Some(clap::builder::PossibleValue::new(match self {
            ComposerVariant::Linear => "linear",
            ComposerVariant::Lstm => "lstm",
        }))
    }
}

impl clap::ValueEnum for CodeMode {
    fn value_variants<'a>() -> &'a [Self] {
        &[CodeMode::Ste, CodeMode::Soft, CodeMode::Random]
    }

    fn to_possible_value(&self) -> Option<clap::builder::PossibleValue> {
        Some(clap::builder::PossibleValue::new(match self {
            CodeMode::Ste => "ste",
            CodeMode::Soft => "soft",
            CodeMode::Random => "random",
        }))
    }
}

impl clap::ValueEnum for ScheduleMode {
    fn value_variants<'a>() -> &'a [Self] {
        &[ScheduleMode::Scheduled, ScheduleMode::Constant]
    }

    fn to_possible_value(&self) -> Option<clap::builder::PossibleValue> {
        Some(clap::builder::PossibleValue::new(match self {
            ScheduleMode::Scheduled => "scheduled",
            ScheduleMode::Constant => "constant",
        }))
    }
}

impl clap::ValueEnum for NmiNorm {
    fn value_variants<'a>() -> &'a [Self] {
        &[NmiNorm::Geometric, NmiNorm::Arithmetic, NmiNorm::Max]
    }

    fn to_possible_value(&self) -> Option<clap::builder::PossibleValue> {
        Some(clap::builder::PossibleValue::new(match self {
            NmiNorm::Geometric => "geometric",
            NmiNorm::Arithmetic => "arithmetic",
            NmiNorm::Max => "max",
        }))
    }
}

fn parse_similarity(s: &str) -> Result<Similarity, String> {
    match s {
        "cosine" => Ok(Similarity::Cosine),
        "euclidean" => Ok(Similarity::Euclidean),
        other => Err(format!("unknown similarity {other:?} (expected cosine|euclidean)")),
    }
}

/// Failure of a CLI invocation.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(#[from] clap::Error),
    #[error(transparent)]
    Run(#[from] Error),
    #[error("{0}")]
    Output(#[from] std::io::Error),
}

impl CliError {
    /// Process exit status: 2 for usage errors, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(e) if !e.use_stderr() => 0,
            CliError::Usage(_) => 2,
            _ => 1,
        }
    }

    /// Single-line rendering for stderr.
    pub fn one_line(&self) -> String {
        let text = match self {
            CliError::Usage(e) => e.kind().to_string() + ": " + e.to_string().lines().next().unwrap_or("").trim_start_matches("error: "),
            other => other.to_string(),
        };
        format!("error: {}", text.replace('\n', " "))
    }
}

type CliResult = Result<(), CliError>;

/// Parses `args` (including the program name) and runs the subcommand.
pub fn run<I, T>(args: I, out: &mut dyn Write) -> CliResult
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = Cli::try_parse_from(args)?;
    match cli.command {
        Command::GenSynthetic(a) => gen_synthetic(&a, out),
        Command::LearnCodes(a) => learn_codes(&a, out),
        Command::Retrain(a) => retrain(&a, out),
        Command::Evaluate(a) => evaluate(&a, out),
        Command::Inspect(a) => inspect(&a, out),
        Command::ParamCount(a) => param_count(&a, out),
    }
}

fn echo(out: &mut dyn Write, entries: &[(&str, String)]) -> std::io::Result<()> {
    for (k, v) in entries {
        writeln!(out, "config\t{k}\t{v}")?;
    }
    Ok(())
}

fn create_dir(dir: &Path) -> Result<(), Error> {
    std::fs::create_dir_all(dir).map_err(|e| Error::Io {
        path: dir.to_path_buf(),
        source: e,
    })
}

fn gen_synthetic(a: &GenSyntheticArgs, out: &mut dyn Write) -> CliResult {
    let spec = SyntheticSpec {
        num_points: a.num_points,
        num_clusters: a.num_clusters,
        dim: a.dim,
        center_scale: a.center_scale,
        noise_sigma: a.noise_sigma,
        seed: a.seed,
    };
    echo(
        out,
        &[
            ("command", "gen-synthetic".into()),
            ("num_points", spec.num_points.to_string()),
            ("num_clusters", spec.num_clusters.to_string()),
            ("dim", spec.dim.to_string()),
            ("center_scale", format!("{:?}", spec.center_scale)),
            ("noise_sigma", format!("{:?}", spec.noise_sigma)),
            ("seed", spec.seed.to_string()),
            ("out", a.out.display().to_string()),
            ("labels_out", a.labels_out.display().to_string()),
        ],
    )?;
    let synth = data::generate_clusters(&spec)?;
    data::save_embeddings_text(&a.out, &synth.embeddings)?;
    let header = format!(
        "clusters={} separation_ratio={:?}",
        spec.num_clusters, synth.separation_ratio
    );
    data::save_cluster_labels(
        &a.labels_out,
        synth.embeddings.labels.as_deref().unwrap_or_default(),
        &synth.clusters,
        &header,
    )?;
    writeln!(out, "N\t{}", synth.embeddings.n())?;
    writeln!(out, "d\t{}", synth.embeddings.d())?;
    writeln!(out, "clusters\t{}", spec.num_clusters)?;
    writeln!(out, "separation_ratio\t{:?}", synth.separation_ratio)?;
    Ok(())
}

fn train_config(t: &TrainArgs, schedule: TemperatureSchedule, code_mode: CodeMode) -> Result<TrainConfig, Error> {
    let config = TrainConfig {
        learning_rate: t.lr,
        epochs: t.epochs,
        batch_size: t.batch_size,
        seed: t.seed,
        schedule,
        composer: t.composer,
        code_mode,
        code_width: t.dprime,
        shuffle: !t.no_shuffle,
    };
    config.validate()?;
    Ok(config)
}

fn config_entries(c: &TrainConfig, d: usize) -> Vec<(&'static str, String)> {
    vec![
        ("lr", format!("{:?}", c.learning_rate)),
        ("epochs", c.epochs.to_string()),
        ("batch_size", c.batch_size.to_string()),
        ("seed", c.seed.to_string()),
        ("composer", c.composer.to_string()),
        ("dprime", c.code_width.unwrap_or(d).to_string()),
        ("shuffle", c.shuffle.to_string()),
    ]
}

/// Cluster ids aligned with the embedding rows, matched by label.
fn aligned_clusters(emb: &EmbeddingMatrix, path: &Path) -> Result<Vec<String>, Error> {
    let pairs = data::load_cluster_labels(path)?;
    let map: HashMap<String, String> = pairs.into_iter().collect();
    emb.labels_or_indices()
        .iter()
        .map(|l| {
            map.get(l).cloned().ok_or_else(|| Error::Format {
                path: path.to_path_buf(),
                message: format!("no cluster label for symbol {l:?}"),
            })
        })
        .collect()
}

fn learn_codes(a: &LearnCodesArgs, out: &mut dyn Write) -> CliResult {
    let emb = data::load_embeddings_text(&a.embeddings)?;
    let schedule = TemperatureSchedule::new(a.t0, a.decay_rate, a.schedule)?;
    let config = train_config(&a.train, schedule, a.code_mode)?;
    let mut entries = vec![
        ("command", "learn-codes".to_string()),
        ("embeddings", a.embeddings.display().to_string()),
        ("labels", a.labels.as_ref().map_or("-".into(), |p| p.display().to_string())),
        ("out_dir", a.out_dir.display().to_string()),
        ("N", emb.n().to_string()),
        ("d", emb.d().to_string()),
        ("K", a.k.to_string()),
        ("D", a.d.to_string()),
        ("t0", format!("{:?}", a.t0)),
        ("decay_rate", format!("{:?}", a.decay_rate)),
        ("schedule", a.schedule.to_string()),
        ("code_mode", a.code_mode.to_string()),
        ("allow_collisions", a.allow_collisions.to_string()),
    ];
    entries.extend(config_entries(&config, emb.d()));
    echo(out, &entries)?;

    let spec = if a.allow_collisions {
        KdSpec::allowing_collisions(a.k, a.d, emb.n())?
    } else {
        KdSpec::new(a.k, a.d, emb.n())?
    };
    let clusters = a.labels.as_deref().map(|p| aligned_clusters(&emb, p)).transpose()?;

    let mut report = Report::default();
    for (k, v) in &entries {
        report.push(format!("config.{k}"), v);
    }
    let mut io_result = Ok(());
    let result = trainer::learn_codes_with(&emb.vectors, spec, &config, |s| {
        if io_result.is_ok() {
            io_result = writeln!(
                out,
                "epoch\t{}\tloss\t{:?}\thard_loss\t{:?}\ttemperature\t{:?}\tcodes_changed\t{:?}",
                s.epoch, s.loss, s.hard_loss, s.temperature, s.changed_fraction
            );
        }
    })?;
    io_result?;

    report.push("initial_loss", format!("{:?}", result.initial_loss));
    for s in &result.epochs {
        report.push(format!("epoch.{}.loss", s.epoch), format!("{:?}", s.loss));
        report.push(format!("epoch.{}.hard_loss", s.epoch), format!("{:?}", s.hard_loss));
        report.push(format!("epoch.{}.temperature", s.epoch), format!("{:?}", s.temperature));
        report.push(format!("epoch.{}.codes_changed", s.epoch), format!("{:?}", s.changed_fraction));
    }
    let final_loss = result.final_loss();
    if !final_loss.is_finite() {
        return Err(Error::NonFinite(format!("final loss {final_loss}")).into());
    }
    report.push("final_loss", format!("{final_loss:?}"));
    let distinct = eval::group_indices(&result.codebook).len();
    report.push("distinct_codes", distinct);
    if let Some(clusters) = &clusters {
        let ids: Vec<u128> = (0..result.codebook.len()).map(|i| result.codebook.code_id(i)).collect();
        let score = eval::nmi(&ids, clusters)?;
        report.push("nmi", format!("{score:?}"));
    }

    create_dir(&a.out_dir)?;
    let codebook = result.codebook.clone().with_labels(emb.labels_or_indices())?;
    let codebook_path = a.out_dir.join("codebook.tsv");
    let checkpoint_path = a.out_dir.join("checkpoint.kdc");
    let report_path = a.out_dir.join("report.tsv");
    data::save_codebook(&codebook_path, &codebook)?;
    data::save_checkpoint(
        &checkpoint_path,
        &Checkpoint {
            model: result.model.clone(),
            logits: Some(result.logits.clone()),
        },
    )?;
    report.save(&report_path)?;

    for key in ["initial_loss", "final_loss", "distinct_codes", "nmi"] {
        if let Some(v) = report.get(key) {
            writeln!(out, "{key}\t{v}")?;
        }
    }
    writeln!(out, "codebook\t{}", codebook_path.display())?;
    writeln!(out, "checkpoint\t{}", checkpoint_path.display())?;
    writeln!(out, "report\t{}", report_path.display())?;
    Ok(())
}

fn check_alignment(emb: &EmbeddingMatrix, book: &crate::codec::CodeBook, path: &Path) -> Result<(), Error> {
    if emb.n() != book.len() {
        return Err(Error::Format {
            path: path.to_path_buf(),
            message: format!("codebook has {} symbols, embeddings have {}", book.len(), emb.n()),
        });
    }
    if let (Some(a), Some(b)) = (&emb.labels, book.labels()) {
        if let Some(i) = (0..a.len()).find(|&i| a[i] != b[i]) {
            return Err(Error::Format {
                path: path.to_path_buf(),
                message: format!("symbol {i} is {:?} in the codebook but {:?} in the embeddings", b[i], a[i]),
            });
        }
    }
    Ok(())
}

fn retrain(a: &RetrainArgs, out: &mut dyn Write) -> CliResult {
    let emb = data::load_embeddings_text(&a.embeddings)?;
    let book = data::load_codebook(&a.codebook)?;
    let config = train_config(&a.train, TemperatureSchedule::default(), CodeMode::Ste)?;
    let spec = book.spec();
    let mut entries = vec![
        ("command", "retrain".to_string()),
        ("embeddings", a.embeddings.display().to_string()),
        ("codebook", a.codebook.display().to_string()),
        ("out_dir", a.out_dir.display().to_string()),
        ("N", spec.n().to_string()),
        ("d", emb.d().to_string()),
        ("K", spec.k().to_string()),
        ("D", spec.d().to_string()),
    ];
    entries.extend(config_entries(&config, emb.d()));
    echo(out, &entries)?;
    check_alignment(&emb, &book, &a.codebook)?;

    let mut io_result = Ok(());
    let result = trainer::retrain_code_embeddings_with(&emb.vectors, &book, &config, |epoch, loss| {
        if io_result.is_ok() {
            io_result = writeln!(out, "epoch\t{epoch}\tloss\t{loss:?}");
        }
    })?;
    io_result?;
    if !result.final_loss.is_finite() {
        return Err(Error::NonFinite(format!("final loss {}", result.final_loss)).into());
    }

    let mut report = Report::default();
    for (k, v) in &entries {
        report.push(format!("config.{k}"), v);
    }
    report.push("initial_loss", format!("{:?}", result.initial_loss));
    for (e, l) in result.losses.iter().enumerate() {
        report.push(format!("epoch.{e}.loss"), format!("{l:?}"));
    }
    report.push("final_loss", format!("{:?}", result.final_loss));

    create_dir(&a.out_dir)?;
    let checkpoint_path = a.out_dir.join("retrain_checkpoint.kdc");
    let report_path = a.out_dir.join("retrain_report.tsv");
    data::save_checkpoint(
        &checkpoint_path,
        &Checkpoint {
            model: result.model,
            logits: None,
        },
    )?;
    report.save(&report_path)?;
    writeln!(out, "initial_loss\t{:?}", result.initial_loss)?;
    writeln!(out, "final_loss\t{:?}", result.final_loss)?;
    writeln!(out, "checkpoint\t{}", checkpoint_path.display())?;
    writeln!(out, "report\t{}", report_path.display())?;
    Ok(())
}

fn evaluate(a: &EvaluateArgs, out: &mut dyn Write) -> CliResult {
    echo(
        out,
        &[
            ("command", "evaluate".into()),
            ("embeddings", a.embeddings.display().to_string()),
            ("codebook", a.codebook.display().to_string()),
            ("checkpoint", a.checkpoint.display().to_string()),
            ("labels", a.labels.as_ref().map_or("-".into(), |p| p.display().to_string())),
            ("nmi", a.nmi.to_string()),
            ("nn_k", a.nn_k.to_string()),
            ("nmi_norm", a.nmi_norm.to_string()),
            (
                "similarity",
                match a.similarity {
                    Similarity::Cosine => "cosine".into(),
                    Similarity::Euclidean => "euclidean".into(),
                },
            ),
        ],
    )?;
    if a.nmi && a.labels.is_none() {
        return Err(Error::InvalidArgument("--nmi requires --labels".into()).into());
    }
    let emb = data::load_embeddings_text(&a.embeddings)?;
    let book = data::load_codebook(&a.codebook)?;
    let ckpt = data::load_checkpoint(&a.checkpoint)?;
    check_alignment(&emb, &book, &a.codebook)?;
    let model = ckpt.model;
    let spec = book.spec();
    if model.tables.dims() != spec.d() || model.tables.k() != spec.k() || model.output_dim() != emb.d() {
        return Err(Error::Format {
            path: a.checkpoint.clone(),
            message: format!(
                "checkpoint is D={} K={} d={}, codebook/embeddings are D={} K={} d={}",
                model.tables.dims(),
                model.tables.k(),
                model.output_dim(),
                spec.d(),
                spec.k(),
                emb.d()
            ),
        }
        .into());
    }

    let loss = trainer::reconstruction_loss(&emb.vectors, CodeAssignment::Hard(&book), &model)?;
    let recon = model.reconstruct(&book)?;
    let preservation = eval::neighbor_preservation_with(&emb.vectors, &recon, a.nn_k, a.similarity)?;
    let count = eval::param_count(spec, model.tables.width() as u64, emb.d() as u64, model.composer.variant());

    let mut report = Report::default();
    report.push("N", spec.n());
    report.push("d", emb.d());
    report.push("K", spec.k());
    report.push("D", spec.d());
    report.push("dprime", model.tables.width());
    report.push("composer", model.composer.variant());
    report.push("reconstruction_loss", format!("{loss:?}"));
    report.push("mean_reconstruction_loss", format!("{:?}", loss / spec.n() as f64));
    report.push(format!("neighbor_preservation@{}", a.nn_k), format!("{preservation:?}"));
    report.push("distinct_codes", eval::group_indices(&book).len());
    push_counts(&mut report, &count);
    if a.nmi {
        let labels_path = a.labels.as_deref().expect("checked above");
        let clusters = aligned_clusters(&emb, labels_path)?;
        let ids: Vec<u128> = (0..book.len()).map(|i| book.code_id(i)).collect();
        let score = eval::nmi_with(&ids, &clusters, a.nmi_norm)?;
        report.push("nmi", format!("{score:?}"));
    }
    if !loss.is_finite() || !preservation.is_finite() {
        return Err(Error::NonFinite("evaluation metrics".into()).into());
    }
    write!(out, "{}", report.render())?;
    if let Some(path) = &a.report_out {
        report.save(path)?;
    }
    Ok(())
}

fn push_counts(report: &mut Report, count: &eval::ParamCount) {
    report.push("conventional_baseline", count.conventional_baseline);
    report.push("code_embedding_params", count.code_embedding_params);
    report.push("composer_params", count.composer_params);
    report.push("total_params", count.total);
    report.push("rate_code_only", format!("{:?}", eval::compression_rate(count, false)));
    report.push("rate_with_composer", format!("{:?}", eval::compression_rate(count, true)));
}

fn inspect(a: &InspectArgs, out: &mut dyn Write) -> CliResult {
    echo(
        out,
        &[
            ("command", "inspect".into()),
            ("codebook", a.codebook.display().to_string()),
            ("min_group_size", a.min_group_size.to_string()),
        ],
    )?;
    let book = data::load_codebook(&a.codebook)?;
    let labels = book.labels().ok_or_else(|| Error::Format {
        path: a.codebook.clone(),
        message: "codebook has no symbol labels".into(),
    })?;
    let report = eval::code_groups(&book, labels)?;
    write!(out, "{}", report.render(a.min_group_size))?;
    Ok(())
}

fn param_count(a: &ParamCountArgs, out: &mut dyn Write) -> CliResult {
    let code_dims = match a.code_dims {
        Some(d) => d,
        None => min_code_dim(a.n, a.k)? as u64,
    };
    echo(
        out,
        &[
            ("command", "param-count".into()),
            ("N", a.n.to_string()),
            ("d", a.d.to_string()),
            ("K", a.k.to_string()),
            (
                "D",
                if a.code_dims.is_some() {
                    code_dims.to_string()
                } else {
                    format!("{code_dims} (min_code_dim)")
                },
            ),
            ("dprime", a.dprime.to_string()),
            ("composer", a.composer.to_string()),
        ],
    )?;
    let as_usize = |v: u64, name: &str| {
        usize::try_from(v).map_err(|_| Error::InvalidArgument(format!("{name} = {v} is too large")))
    };
    let spec = KdSpec::new(as_usize(a.k, "K")?, as_usize(code_dims, "D")?, as_usize(a.n, "N")?)?;
    let count = eval::param_count(spec, a.dprime, a.d, a.composer);
    let mut report = Report::default();
    push_counts(&mut report, &count);
    write!(out, "{}", report.render())?;
    Ok(())
}
