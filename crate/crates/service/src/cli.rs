//! The `treewalk` operator commands.

use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand, ValueEnum};
use treewalk_core::eval::{
    aggregate, barnard_exact_with, faq_question_set, read_report, recall_at_k, write_report, Alternative,
    ControllabilityAudit, ReportFormat, Table2x2, DEFAULT_GRID_STEP,
};
use treewalk_core::graph::{parse_graph, tree_depth, validate_graph, DialogGraph};
use treewalk_core::nlu::{ModeLabel, OracleNlu};
use treewalk_core::policy::{transcript_records, write_transcript, Engine, PolicyConfig};
use treewalk_core::retrieval::{candidate_nodes, RetrievalConfig, Retriever};
use treewalk_core::simulator::{run_batch, ModeSplit, SimConfig, SimReport};

use crate::backends::{build_embedder, build_nlu, SharedNlu};
use crate::config::{BackendKind, Overrides, ServiceConfig};
use crate::server::{router, sweep_loop, AppState};

/// `println!` that reports a closed stdout as an error instead of panicking.
macro_rules! out {
    ($($t:tt)*) => {
        writeln!(std::io::stdout(), $($t)*)?
    };
}

#[derive(Debug, Parser)]
#[command(name = "treewalk", version, about = "Controllable dialog over authored dialog graphs")]
pub struct Cli {
    /// Log more (repeat for debug output).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SimBackend {
    /// Perfect mode and intent, goal set = the true goal.
    Oracle,
    /// Offline keyword heuristics.
    Lexical,
    /// The configured chat-completions endpoint.
    HttpLlm,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeChoice {
    Uniform,
    Guided,
    Free,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum AltChoice {
    Greater,
    Less,
    TwoSided,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Check a graph document; nonzero exit on any error or diagnostic.
    Validate { graph: PathBuf },
    /// Run simulated dialogs and write a metrics report.
    Simulate {
        graph: PathBuf,
        #[arg(long = "n", default_value_t = 500)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, value_enum, default_value_t = SimBackend::Oracle)]
        backend: SimBackend,
        /// Report path; `.csv` writes CSV, anything else JSON.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 3)]
        patience: usize,
        #[arg(long, default_value_t = 4)]
        turn_cap_multiplier: usize,
        #[arg(long, value_enum, default_value_t = ModeChoice::Uniform)]
        mode: ModeChoice,
        /// Also write every dialog as JSON lines.
        #[arg(long)]
        transcripts: Option<PathBuf>,
        /// Endpoint settings for the http-llm backend.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Interactive session in the terminal.
    Chat {
        graph: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Start the HTTP session service.
    Serve {
        config: Option<PathBuf>,
        /// Dialog graph document.
        #[arg(long)]
        graph: Option<PathBuf>,
        /// Print the resolved configuration and exit.
        #[arg(long)]
        dry_run: bool,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Pre-filter recall@k over the graph's FAQ questions.
    Recall {
        graph: PathBuf,
        #[arg(long, value_delimiter = ',', default_values_t = [1usize, 5, 10, 15])]
        ks: Vec<usize>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Barnard exact test on the success rates of two reports.
    Compare {
        report_a: PathBuf,
        report_b: PathBuf,
        #[arg(long, value_enum, default_value_t = AltChoice::Greater)]
        alternative: AltChoice,
    },
}

pub fn load_graph(path: &Path) -> anyhow::Result<DialogGraph> {
    let bytes = std::fs::read(path).with_context(|| format!("cannot read {}", path.display()))?;
    parse_graph(&bytes).map_err(|errs| {
        let lines: Vec<String> = errs.iter().map(|e| format!("  {e}")).collect();
        anyhow::anyhow!("{} is not a valid graph:\n{}", path.display(), lines.join("\n"))
    })
}

pub fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Validate { graph } => validate(&graph),
        Command::Simulate {
            graph,
            n,
            seed,
            backend,
            out,
            patience,
            turn_cap_multiplier,
            mode,
            transcripts,
            config,
        } => {
            let sim = SimConfig {
                num_dialogs: n,
                seed,
                patience,
                turn_cap_multiplier,
                mode_split: match mode {
                    ModeChoice::Uniform => ModeSplit::Uniform,
                    ModeChoice::Guided => ModeSplit::Fixed(ModeLabel::Guided),
                    ModeChoice::Free => ModeSplit::Fixed(ModeLabel::Free),
                },
            };
            simulate(&graph, backend, &sim, &out, transcripts.as_deref(), config.as_deref())
        }
        Command::Chat {
            graph,
            config,
            overrides,
        } => {
            let overrides = Overrides {
                graph: Some(graph),
                ..overrides
            };
            let config = ServiceConfig::resolve(config.as_deref(), &overrides)?;
            chat(&config, std::io::stdin().lock(), std::io::stdout().lock())
        }
        Command::Serve {
            config,
            graph,
            dry_run,
            overrides,
        } => serve(config.as_deref(), &Overrides { graph, ..overrides }, dry_run),
        Command::Recall {
            graph,
            ks,
            config,
            overrides,
        } => {
            let overrides = Overrides {
                graph: Some(graph),
                ..overrides
            };
            let config = ServiceConfig::resolve(config.as_deref(), &overrides)?;
            recall(&config, &ks)
        }
        Command::Compare {
            report_a,
            report_b,
            alternative,
        } => compare(&report_a, &report_b, alternative),
    }
}

fn validate(path: &Path) -> anyhow::Result<()> {
    let graph = load_graph(path)?;
    let diagnostics = validate_graph(&graph);
    for d in &diagnostics {
        out!("{d}");
    }
    out!(
        "{}: {} nodes, tree depth {}, {} diagnostic(s)",
        path.display(),
        graph.len(),
        tree_depth(&graph),
        diagnostics.len()
    );
    if !diagnostics.is_empty() {
        bail!("{} diagnostic(s) in {}", diagnostics.len(), path.display());
    }
    Ok(())
}

/// Oracle batch on `graph`, as used by `simulate --backend oracle`.
pub fn oracle_batch(graph: &DialogGraph, sim: &SimConfig) -> anyhow::Result<SimReport> {
    let report = run_batch(
        graph,
        |goal| {
            let nlu = OracleNlu::new(goal.mode, [goal.goal.clone()].into_iter().collect());
            Box::new(Engine::new(graph, nlu, PolicyConfig::default()))
        },
        sim,
    )?;
    Ok(report)
}

fn shared_batch(graph: &DialogGraph, nlu: SharedNlu, sim: &SimConfig) -> anyhow::Result<SimReport> {
    let report = run_batch(
        graph,
        |_| Box::new(Engine::new(graph, Arc::clone(&nlu), PolicyConfig::default())),
        sim,
    )?;
    Ok(report)
}

fn simulate(
    graph_path: &Path,
    backend: SimBackend,
    sim: &SimConfig,
    out: &Path,
    transcripts: Option<&Path>,
    config: Option<&Path>,
) -> anyhow::Result<()> {
    let graph = load_graph(graph_path)?;
    let report = match backend {
        SimBackend::Oracle => oracle_batch(&graph, sim)?,
        SimBackend::Lexical | SimBackend::HttpLlm => {
            let overrides = Overrides {
                graph: Some(graph_path.to_path_buf()),
                backend: Some(if backend == SimBackend::Lexical {
                    BackendKind::Oracle
                } else {
                    BackendKind::HttpLlm
                }),
                ..Default::default()
            };
            let mut service = ServiceConfig::resolve(config, &overrides)?;
            if backend == SimBackend::Lexical {
                service.oracle_fixture = None;
            }
            shared_batch(&graph, build_nlu(&service)?, sim)?
        }
    };
    let metrics = aggregate(&report.outcomes)?;
    write_report(&metrics, out, ReportFormat::from_path(out))
        .with_context(|| format!("writing report {}", out.display()))?;

    let mut audit = ControllabilityAudit::new(&graph);
    let mut violations = 0;
    let mut records = Vec::new();
    for o in &report.outcomes {
        let r = transcript_records(&format!("dialog-{}", o.index), &o.transcript, None);
        violations += audit.records(&r).len();
        if transcripts.is_some() {
            records.extend(r);
        }
    }
    if let Some(path) = transcripts {
        let file = std::fs::File::create(path).with_context(|| format!("creating {}", path.display()))?;
        write_transcript(std::io::BufWriter::new(file), &records)?;
    }
    let fmt_len = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.2}"));
    out!(
        "dialogs {}  success {:.2}%  avg length guided {} free {}  mode F1 {:.3}  degraded {:.2}%",
        metrics.dialogs,
        metrics.success_rate,
        fmt_len(metrics.avg_length_guided),
        fmt_len(metrics.avg_length_free),
        metrics.mode_f1,
        metrics.degraded_rate
    );
    out!("tree depth {}  turn cap {}  audit violations {}", report.tree_depth, report.turn_cap, violations);
    Ok(())
}

/// Terminal dialog loop. A number picks the matching suggestion.
pub fn chat(config: &ServiceConfig, input: impl BufRead, mut out: impl Write) -> anyhow::Result<()> {
    use treewalk_core::policy::{handle_user_input, start_session, Awaiting};

    let graph = load_graph(&config.graph)?;
    let nlu = build_nlu(config)?;
    let policy = PolicyConfig::default();
    let (mut state, first) = start_session(&graph, &policy);
    let mut suggestions = first.suggestions.clone();
    let show = |out: &mut dyn Write, text: &str, sugg: &[String]| -> std::io::Result<()> {
        writeln!(out, "> {text}")?;
        for (i, s) in sugg.iter().enumerate() {
            writeln!(out, "    [{}] {s}", i + 1)?;
        }
        Ok(())
    };
    show(&mut out, first.rendered_text.as_deref().unwrap_or_default(), &suggestions)?;
    for line in input.lines() {
        if state.done {
            break;
        }
        let line = line?;
        let line = line.trim();
        if line == "/quit" {
            break;
        }
        if line.is_empty() {
            continue;
        }
        let text = match line.parse::<usize>() {
            Ok(i) if (1..=suggestions.len()).contains(&i) && state.awaiting == Awaiting::Intent => {
                suggestions[i - 1].clone()
            }
            _ => line.to_string(),
        };
        match handle_user_input(&mut state, &graph, &text, &*nlu, &policy) {
            Ok(turn) => {
                for a in turn.asks() {
                    suggestions = a.suggestions.clone();
                    show(&mut out, a.rendered_text.as_deref().unwrap_or_default(), &suggestions)?;
                }
            }
            Err(e) => writeln!(out, "! {e}")?,
        }
    }
    if state.done {
        writeln!(out, "(dialog finished, length {})", state.dialog_length())?;
    }
    Ok(())
}

fn serve(config_path: Option<&Path>, overrides: &Overrides, dry_run: bool) -> anyhow::Result<()> {
    let config = ServiceConfig::resolve(config_path, overrides)?;
    let graph = load_graph(&config.graph)?;
    if dry_run {
        out!("{}", serde_json::to_string_pretty(&config.redacted())?);
        return Ok(());
    }
    tracing::info!(
        k = config.retrieval_k,
        backend = ?config.nlu_backend,
        embedding = ?config.embedding,
        idle_secs = config.session_idle_secs,
        "configuration"
    );
    // blocking HTTP clients must be built outside the async runtime
    let nlu = build_nlu(&config)?;
    let state = Arc::new(AppState::new(graph, nlu, PolicyConfig::default(), config.idle_timeout()));
    let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
    let result: anyhow::Result<()> = rt.block_on(async {
        let listener = tokio::net::TcpListener::bind(&config.listen)
            .await
            .with_context(|| format!("cannot listen on {}", config.listen))?;
        let addr = listener.local_addr()?;
        out!("listening on http://{addr}");
        tracing::info!(%addr, "listening");
        let every = config.idle_timeout().min(Duration::from_secs(60));
        let sweeper = tokio::spawn(sweep_loop(Arc::clone(&state), every));
        let served = axum::serve(listener, router(Arc::clone(&state)))
            .with_graceful_shutdown(async {
                let _ = tokio::signal::ctrl_c().await;
            })
            .await;
        sweeper.abort();
        let _ = sweeper.await;
        served.context("server error")
    });
    drop(rt);
    drop(state);
    result
}

fn recall(config: &ServiceConfig, ks: &[usize]) -> anyhow::Result<()> {
    if ks.iter().any(|&k| k == 0) {
        bail!("k values must be at least 1");
    }
    let graph = load_graph(&config.graph)?;
    let questions = faq_question_set(&graph);
    if questions.is_empty() {
        bail!("{} has no FAQ questions", config.graph.display());
    }
    let retriever = Retriever::new(build_embedder(config)?);
    let types = RetrievalConfig::with_k(config.retrieval_k);
    let curve = recall_at_k(&graph, &questions, &retriever, &types, ks)?;
    out!(
        "# {} questions, {} candidate nodes",
        questions.len(),
        candidate_nodes(&graph, &types).count()
    );
    out!("k\trecall");
    for (k, r) in curve {
        out!("{k}\t{r:.4}");
    }
    Ok(())
}

fn compare(a: &Path, b: &Path, alternative: AltChoice) -> anyhow::Result<()> {
    let ma = read_report(a).with_context(|| format!("reading {}", a.display()))?;
    let mb = read_report(b).with_context(|| format!("reading {}", b.display()))?;
    let table = Table2x2::new(
        u32::try_from(ma.successes)?,
        u32::try_from(ma.dialogs)?,
        u32::try_from(mb.successes)?,
        u32::try_from(mb.dialogs)?,
    )?;
    let (alt, label) = match alternative {
        AltChoice::Greater => (Alternative::Greater, "b > a"),
        AltChoice::Less => (Alternative::Less, "b < a"),
        AltChoice::TwoSided => (Alternative::TwoSided, "b != a"),
    };
    let p: f64 = barnard_exact_with(&table, alt, DEFAULT_GRID_STEP);
    out!("a: {}/{} ({:.2}%)", ma.successes, ma.dialogs, ma.success_rate);
    out!("b: {}/{} ({:.2}%)", mb.successes, mb.dialogs, mb.success_rate);
    out!("barnard p-value ({label}): {p}");
    Ok(())
}
