use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use atlas_core::grading::{grade, ScoringSpec};
use atlas_core::leak_audit::{run_audit_with, AuditConfig, LeakRegistry, MediaFiles, Table, TabularDataset};
use atlas_core::orchestrator::{SubprocessExecutor, SystemClock};
use atlas_core::router::{run_episode, CostLedger, EpisodeTask};
use atlas_core::scene_graph::{build_graph, parse_entity_manifest, SpatialConstraint};
use atlas_gateway::backend::{build_backends, scripted_backends};
use atlas_gateway::config::{GatewayConfig, ENV_CONFIG, ENV_LISTEN};
use atlas_gateway::{router, Engine, Gateway, TaskStore};
use clap::{Parser, Subcommand};
use serde_json::json;

#[derive(Parser)]
#[command(name = "atlas", version, about = "Compute-grounded reasoning server and local tools")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Start the task server.
    Serve {
        #[arg(long, env = ENV_CONFIG)]
        config: Option<PathBuf>,
        #[arg(long, env = ENV_LISTEN)]
        listen: Option<String>,
    },
    /// Score a prediction against a scoring spec.
    Grade {
        /// Spec as JSON, or `@path` to read it from a file.
        #[arg(long)]
        spec: String,
        #[arg(long)]
        pred: String,
    },
    /// Build a scene graph from an entity manifest and query it.
    Graph {
        manifest: PathBuf,
        /// Manifest units per meter.
        #[arg(long)]
        scale: Option<f64>,
        /// Entity id to search around (with --radius).
        #[arg(long, requires = "radius")]
        near: Option<String>,
        #[arg(long)]
        radius: Option<f64>,
        /// Interpret --radius in meters (needs --scale).
        #[arg(long)]
        meters: bool,
        #[arg(long)]
        count: Option<String>,
        /// JSON file holding a list of constraints to check.
        #[arg(long)]
        constraints: Option<PathBuf>,
    },
    /// Audit a train/test split for leakage and print the preamble.
    Audit {
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        test: PathBuf,
        #[arg(long)]
        target: Option<String>,
        #[arg(long)]
        time_column: Option<String>,
        #[arg(long, default_value = "")]
        competition: String,
        #[arg(long)]
        registry: Option<PathBuf>,
        #[arg(long, requires = "test_media")]
        train_media: Option<PathBuf>,
        #[arg(long, requires = "train_media")]
        test_media: Option<PathBuf>,
        #[arg(long, default_value_t = atlas_core::leak_audit::DEFAULT_FLAG_THRESHOLD)]
        threshold: f64,
    },
    /// Answer one question through the tier cascade.
    Route {
        #[arg(long)]
        question: String,
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long)]
        scale: Option<f64>,
        /// Canned per-tier answers instead of live endpoints.
        #[arg(long)]
        script: Option<PathBuf>,
        #[arg(long, env = ENV_CONFIG)]
        config: Option<PathBuf>,
    },
}

fn load_config(path: Option<&Path>) -> Result<GatewayConfig> {
    match path {
        Some(p) => GatewayConfig::from_path(p).with_context(|| p.display().to_string()),
        None => Ok(GatewayConfig::default()),
    }
}

fn print_json(v: &impl serde::Serialize) {
    println!("{}", serde_json::to_string_pretty(v).expect("serializable"));
}

fn serve(config: Option<PathBuf>, listen: Option<String>) -> Result<()> {
    let mut cfg = load_config(config.as_deref())?;
    if let Some(l) = listen {
        cfg.listen = l;
    }
    cfg.validate().context("config")?;
    let addr = cfg.listen_addr().context("config")?;
    let store = match &cfg.journal {
        Some(p) => TaskStore::with_journal(p).context("journal")?,
        None => TaskStore::in_memory(),
    };
    let engine = Engine {
        backends: build_backends(&cfg.backend, &cfg.policy).map_err(anyhow::Error::msg)?,
        policy: cfg.policy.clone(),
        executor: Arc::new(SubprocessExecutor::new(cfg.python.clone())),
        clock: Arc::new(SystemClock::new()),
        limits: cfg.limits,
        registry: LeakRegistry::builtin().clone(),
        workspace_root: cfg.workspace_root.clone(),
        keep_workspaces: cfg.keep_workspaces,
        max_unpacked_bytes: cfg.max_unpacked_bytes,
    };
    let gw = Gateway::new(&cfg.agent, engine, store).context("config")?;

    let rt = tokio::runtime::Runtime::new().context("runtime")?;
    rt.block_on(async move {
        let listener = tokio::net::TcpListener::bind(addr).await.with_context(|| addr.to_string())?;
        tracing::info!(%addr, agent = %cfg.agent.name, "listening");
        let drain = gw.clone();
        axum::serve(listener, router(gw))
            .with_graceful_shutdown(async move {
                let _ = tokio::signal::ctrl_c().await;
                drain.begin_drain();
                tracing::info!(active = drain.store().active_count(), "draining; interrupt again to stop now");
                loop {
                    if drain.store().active_count() == 0 {
                        break;
                    }
                    tokio::select! {
                        _ = tokio::time::sleep(Duration::from_millis(500)) => {}
                        _ = tokio::signal::ctrl_c() => break,
                    }
                }
            })
            .await
            .context("server")
    })
}

fn read_arg(text: &str) -> Result<String> {
    match text.strip_prefix('@') {
        Some(path) => std::fs::read_to_string(path).with_context(|| path.to_string()),
        None => Ok(text.to_string()),
    }
}

fn grade_cmd(spec: &str, pred: &str) -> Result<()> {
    let spec: ScoringSpec = serde_json::from_str(&read_arg(spec)?).context("spec")?;
    match grade(&spec, pred) {
        Ok(r) => print_json(&json!({"score": r.score(), "detail": r.detail})),
        Err(e) => print_json(&json!({"score": null, "error": e.kind(), "detail": e.to_string()})),
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn graph_cmd(
    manifest: &Path,
    scale: Option<f64>,
    near: Option<String>,
    radius: Option<f64>,
    meters: bool,
    count: Option<String>,
    constraints: Option<PathBuf>,
) -> Result<()> {
    let text = std::fs::read_to_string(manifest).with_context(|| manifest.display().to_string())?;
    let mut g = build_graph(&parse_entity_manifest(&text).context("manifest")?);
    if let Some(s) = scale {
        g = g.with_scale(s).context("scale")?;
    }
    let queried = near.is_some() || count.is_some() || constraints.is_some();
    if let (Some(center), Some(r)) = (near, radius) {
        let hits: Vec<_> = if meters {
            g.query_near_meters(&center, r).context("query")?.into_iter().map(|e| json!({"id": e.id})).collect()
        } else {
            g.query_near_with_distance(&center, r)
                .context("query")?
                .into_iter()
                .map(|(e, d)| json!({"id": e.id, "distance": d}))
                .collect()
        };
        print_json(&json!({"near": center, "radius": r, "hits": hits}));
    }
    if let Some(label) = count {
        print_json(&json!({"label": label, "count": g.count_by_label(&label)}));
    }
    if let Some(path) = constraints {
        let text = std::fs::read_to_string(&path).with_context(|| path.display().to_string())?;
        let cs: Vec<SpatialConstraint> = serde_json::from_str(&text).context("constraints")?;
        for c in &cs {
            c.validate().context("constraint")?;
        }
        print_json(&g.check_constraints(&cs));
    }
    if !queried {
        print!("{}", g.to_fact_sheet().render());
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn audit_cmd(
    train: &Path,
    test: &Path,
    target: Option<String>,
    time_column: Option<String>,
    competition: &str,
    registry: Option<PathBuf>,
    media: Option<(PathBuf, PathBuf)>,
    threshold: f64,
) -> Result<()> {
    let load = |p: &Path| Table::from_csv_path(p).with_context(|| p.display().to_string());
    let data = TabularDataset::new(load(train)?, load(test)?, target, time_column).context("dataset")?;
    let registry = match registry {
        Some(p) => LeakRegistry::from_path(&p).with_context(|| p.display().to_string())?,
        None => LeakRegistry::builtin().clone(),
    };
    let media = match media {
        Some((a, b)) => Some(MediaFiles {
            train: atlas_core::leak_audit::list_files(&a).with_context(|| a.display().to_string())?,
            test: atlas_core::leak_audit::list_files(&b).with_context(|| b.display().to_string())?,
        }),
        None => None,
    };
    if !(0.0..=1.0).contains(&threshold) {
        bail!("threshold must be within [0, 1]");
    }
    let report = run_audit_with(&data, media.as_ref(), competition, &registry, AuditConfig { flag_threshold: threshold });
    print_json(&json!({"findings": report.findings, "matchedHint": report.matched_hint}));
    println!();
    print!("{}", report.preamble);
    Ok(())
}

fn route_cmd(question: String, manifest: Option<PathBuf>, scale: Option<f64>, script: Option<PathBuf>, config: Option<PathBuf>) -> Result<()> {
    let cfg = load_config(config.as_deref())?;
    let backends = match script {
        Some(p) => scripted_backends(&p).map_err(anyhow::Error::msg)?,
        None => build_backends(&cfg.backend, &cfg.policy).map_err(anyhow::Error::msg)?,
    };
    let sheet = match manifest {
        Some(p) => {
            let text = std::fs::read_to_string(&p).with_context(|| p.display().to_string())?;
            let mut g = build_graph(&parse_entity_manifest(&text).context("manifest")?);
            if let Some(s) = scale {
                g = g.with_scale(s).context("scale")?;
            }
            Some(g.to_fact_sheet())
        }
        None => None,
    };
    let ledger = CostLedger::with_default_budget(cfg.policy.tiers.clone());
    let out = run_episode(&EpisodeTask::new(question), &backends, sheet.as_ref(), &cfg.policy, ledger).context("route")?;
    print_json(&json!({
        "answer": out.answer,
        "confidence": out.confidence,
        "tiers": out.tiers,
        "reflections": out.reflections,
        "budgetExhausted": out.budget_exhausted,
        "tokensUsed": out.ledger.tokens_used(),
        "cost": out.ledger.total_cost(),
    }));
    Ok(())
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()))
        .with_writer(std::io::stderr)
        .init();
    let result = match Cli::parse().command {
        Command::Serve { config, listen } => serve(config, listen),
        Command::Grade { spec, pred } => grade_cmd(&spec, &pred),
        Command::Graph {
            manifest,
            scale,
            near,
            radius,
            meters,
            count,
            constraints,
        } => graph_cmd(&manifest, scale, near, radius, meters, count, constraints),
        Command::Audit {
            train,
            test,
            target,
            time_column,
            competition,
            registry,
            train_media,
            test_media,
            threshold,
        } => audit_cmd(&train, &test, target, time_column, &competition, registry, train_media.zip(test_media), threshold),
        Command::Route {
            question,
            manifest,
            scale,
            script,
            config,
        } => route_cmd(question, manifest, scale, script, config),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
