//! `sagrade`: ingest a short-answer dataset, cluster and grade it, write
//! reports, and serve the review API.

mod config;

use std::fmt::Write as _;
use std::io::Write;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use sagrade::corpus::{parse_dataset, Dataset};
use sagrade::pipeline::{AnalysisConfig, KChoice, Pipeline};
use sagrade::raw::adapt_raw_layout_with_notes;
use sagrade::report::write_report;
use sagrade::store::{QuestionStages, RunArtifact, RunStore};
use sagrade_review::{FlagThresholds, ServiceConfig};

use config::{Resolved, RunArgs, Source};

#[derive(Debug, Parser)]
#[command(name = "sagrade", version, about = "Cluster and grade short student answers")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Parse a dataset and store it as a new run.
    Ingest(RunArgs),
    /// Preprocess, vectorize and cluster each question.
    Cluster(RunArgs),
    /// Score answers against the model answer and fit the mark model.
    Grade(RunArgs),
    /// Run every missing stage and write the report bundle to --out.
    Report(RunArgs),
    /// Serve the review API over a run store.
    Serve(ServeArgs),
}

#[derive(Debug, Args)]
struct ServeArgs {
    /// Run store directory [env: SAGRADE_STORE] [default: sagrade-runs].
    #[arg(long, value_name = "DIR")]
    store: Option<PathBuf>,
    #[arg(long, default_value = "127.0.0.1:8080")]
    addr: SocketAddr,
    /// Built review UI to serve at /.
    #[arg(long, value_name = "DIR")]
    static_dir: Option<PathBuf>,
    /// Flag answers farther from their centroid than this percentile of their cluster.
    #[arg(long, default_value_t = FlagThresholds::default().distance_percentile)]
    distance_percentile: f64,
    /// Flag answers whose model mark differs from the teachers' average by more than this.
    #[arg(long, default_value_t = FlagThresholds::default().mark_gap)]
    mark_gap: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Stages {
    None,
    Cluster,
    Grade,
    All,
}

impl Stages {
    fn clusters(self) -> bool {
        matches!(self, Self::Cluster | Self::All)
    }

    fn grades(self) -> bool {
        matches!(self, Self::Grade | Self::All)
    }

    /// Failed stages that this command is answerable for.
    fn owns(self, stage: &str) -> bool {
        let clustering = matches!(stage, "vocabulary" | "elbow" | "clusters");
        (clustering && self.clusters()) || (!clustering && self.grades())
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Ingest(a) => run(a, Stages::None),
        Command::Cluster(a) => run(a, Stages::Cluster),
        Command::Grade(a) => run(a, Stages::Grade),
        Command::Report(a) => run(a, Stages::All),
        Command::Serve(a) => serve(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

/// Opens or creates the run, computes the stages `todo` asks for, stores
/// them and prints one summary per question.
fn run(args: RunArgs, todo: Stages) -> Result<()> {
    let resolved = Resolved::new(args)?;
    if todo == Stages::All && resolved.out.is_none() {
        bail!("report needs --out");
    }
    let store = RunStore::new(&resolved.store);

    let (mut run, pipeline) = match &resolved.source {
        Source::Run(id) => {
            let run = store.load(id).with_context(|| format!("opening run {id}"))?;
            let stored: AnalysisConfig = serde_json::from_value(run.config.clone())
                .with_context(|| format!("run {id} has an unreadable config"))?;
            let (config, pre) = resolved.analysis(stored.clone())?;
            if config != stored {
                bail!("options differ from the configuration run {id} was created with; start a new run from the dataset instead");
            }
            (run, Pipeline::new(pre, config)?)
        }
        source => {
            let (dataset, notes) = match source {
                Source::Dataset(path, format) => (
                    parse_dataset(path, *format).with_context(|| format!("reading dataset {}", path.display()))?,
                    Vec::new(),
                ),
                Source::Raw(dir) => adapt_raw_layout_with_notes(dir).with_context(|| format!("reading raw layout {}", dir.display()))?,
                Source::Run(_) => unreachable!(),
            };
            let (config, pre) = resolved.analysis(AnalysisConfig::default())?;
            let fresh = RunArtifact::new(dataset, serde_json::to_value(&config)?, notes);
            let run = if store.exists(&fresh.run_id) {
                store.load(&fresh.run_id)?
            } else {
                fresh
            };
            (run, Pipeline::new(pre, config)?)
        }
    };

    if todo.clusters() {
        pipeline.cluster_all(&mut run)?;
    }
    if todo.grades() {
        pipeline.grade_all(&mut run)?;
    }
    let id = store.save(&run)?;

    let mut written = Vec::new();
    if let Some(out) = &resolved.out {
        if todo == Stages::None {
            run.dataset.write_csv(out)?;
            written = vec!["questions.csv".to_string(), "answers.csv".to_string()];
        } else {
            written = write_report(&run, out)?;
        }
    }

    let selected: Vec<&str> = pipeline.config.selected(&run.dataset)?;
    let mut text = format!("run {id} in {}\n", store.root().display());
    let mut failed = Vec::new();
    for q in &selected {
        let n = run.dataset.answers_for(q).count();
        match run.stages(q) {
            Some(stages) => {
                summarize(&mut text, &run.dataset, pipeline.config.k, stages, todo);
                for (stage, msg) in stages.failures() {
                    if todo.owns(stage) {
                        failed.push(format!("question {q}: {stage}: {msg}"));
                    }
                }
            }
            None => writeln!(text, "question {q}: {n} answers").unwrap(),
        }
    }
    if let Some(out) = &resolved.out {
        writeln!(text, "wrote {} files to {}", written.len(), out.display()).unwrap();
    }
    let mut stdout = std::io::stdout().lock();
    stdout.write_all(text.as_bytes())?;
    stdout.flush()?;

    if !failed.is_empty() {
        for f in &failed {
            eprintln!("error: {f}");
        }
        bail!("{} stage(s) failed; results for the other questions were stored", failed.len());
    }
    Ok(())
}

fn summarize(out: &mut String, dataset: &Dataset, k: KChoice, s: &QuestionStages, todo: Stages) {
    let q = &s.question_id;
    let n = dataset.answers_for(q).count();
    if todo.clusters() {
        let mut line = format!("question {q}: {n} answers");
        if let Some(v) = s.vocabulary.as_ref().and_then(|v| v.ok()) {
            let _ = write!(line, ", {} terms after filter ({} dropped)", v.len(), v.removed.len());
        }
        match s.clusters() {
            Some(c) => {
                let how = if k == KChoice::Auto { "selected by elbow" } else { "fixed" };
                let sizes: Vec<String> = c.sizes().iter().map(usize::to_string).collect();
                let labels: Vec<String> = c.labels.iter().map(ToString::to_string).collect();
                let _ = write!(line, "; k={} {how}; sizes {}; labels {}", c.k, sizes.join("/"), labels.join("/"));
            }
            None => {
                let why = s.failures().into_iter().find(|(st, _)| todo.owns(st)).map_or("", |(_, m)| m);
                let _ = write!(line, "; clustering failed: {why}");
            }
        }
        let _ = writeln!(out, "{line}");
    }
    if todo.grades() {
        if let Some(scores) = &s.scores {
            let _ = writeln!(out, "question {q}: answer_id h tm");
            for sc in scores {
                let tm = dataset.answer(&sc.answer_id).map_or(f64::NAN, |a| a.tm());
                let _ = writeln!(out, "  {} {} {tm}", sc.answer_id, sc.hamming);
            }
        }
        let mut line = format!("question {q}:");
        if let Some(v) = s.model_vocabulary.as_ref().and_then(|v| v.ok()) {
            let _ = write!(line, " V={}", v.size());
        }
        match s.fit() {
            Some(f) => {
                let mut verdict = if f.reliable { "reliable" } else { "unreliable" }.to_string();
                if !f.fit_diagnostics.converged {
                    verdict.push_str("; optimizer budget exhausted, best so far");
                }
                let _ = write!(
                    line,
                    " mark model {:.5} + {:.5}*h^{:.5}; mse_mm {:.4}; mse_tm {:.4}; {verdict}",
                    f.beta0, f.beta1, f.beta2, f.mse_mm, f.mse_tm
                );
            }
            None => {
                let why = s.fit.as_ref().and_then(|f| f.error()).unwrap_or("not computed");
                let _ = write!(line, " fit failed: {why}");
            }
        }
        let _ = writeln!(out, "{line}");
    }
    if todo == Stages::None {
        let _ = writeln!(out, "question {q}: {n} answers");
    }
}

fn serve(args: ServeArgs) -> Result<()> {
    let mut cfg = ServiceConfig::new(config::store_dir(args.store.as_ref(), None));
    cfg.static_dir = args.static_dir;
    cfg.thresholds = FlagThresholds {
        distance_percentile: args.distance_percentile,
        mark_gap: args.mark_gap,
    };
    if !(0.0..=1.0).contains(&cfg.thresholds.distance_percentile) {
        bail!("--distance-percentile must lie in [0, 1]");
    }
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(sagrade_review::serve(cfg, args.addr))?;
    Ok(())
}
