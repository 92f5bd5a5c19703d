use std::fs;
use std::io::{IsTerminal, Write};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::Command as Process;
use std::sync::Arc;

use anyhow::{Context, Result};
use chrono::{DateTime, Utc};
use clap::{Args, Parser, Subcommand, ValueEnum};
use linddun_core::dfd::{DotOptions, EdgeId, RankDir};
use linddun_core::elicitation::ProviderMode;
use linddun_core::gateway::{MockProvider, ProviderConfig};
use linddun_core::model::{
    ApplicationProfile, LinddunCategory, Methodology, ReportMeta, SessionId, ThreatId,
};
use linddun_service::api::router;
use linddun_service::app::{App, AppError, DfdSource, GenerateDfdRequest, GenerateMode, GoRequest, ProRequest, ThreatPatch};
use linddun_service::config::ServiceConfig;
use serde::Serialize;

/// LINDDUN privacy threat modeling: profile, DFD, elicitation, assessment
/// and report, driven from the command line or over HTTP.
///
/// The sessions directory and knowledge-base directory default to the
/// PILLAR_SESSIONS_DIR and PILLAR_KB_DIR environment variables.
#[derive(Parser)]
#[command(name = "linddun", version)]
struct Cli {
    /// JSON service config file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Directory holding one JSON document per session.
    #[arg(long, global = true)]
    sessions_dir: Option<PathBuf>,
    /// Knowledge-base directory; the bundled knowledge base when omitted.
    #[arg(long, global = true)]
    kb_dir: Option<PathBuf>,
    /// LLM provider to enable (repeatable). Replaces the providers of the config file.
    #[arg(long = "provider", global = true, value_enum)]
    providers: Vec<ProviderArg>,
    /// Model name for the non-mock providers given with --provider.
    #[arg(long, global = true)]
    model: Option<String>,
    /// Mock replies keyed by purpose tag (see README). Unscripted calls are synthesized.
    #[arg(long, global = true)]
    mock_script: Option<PathBuf>,
    /// Seed for card draws and provider selection.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum ProviderArg {
    Mock,
    Openai,
    Gemini,
    Mistral,
}

#[derive(Subcommand)]
enum Command {
    /// Create, list and inspect sessions.
    #[command(subcommand)]
    Session(SessionCmd),
    /// Set or show the application profile.
    #[command(subcommand)]
    Profile(ProfileCmd),
    /// Import, export, render or generate the data flow diagram.
    #[command(subcommand)]
    Dfd(DfdCmd),
    /// Elicit threats with zero-shot, LINDDUN GO or LINDDUN PRO.
    #[command(subcommand)]
    Elicit(ElicitCmd),
    /// Choose the working set, assess impact and select controls.
    #[command(subcommand)]
    Assess(AssessCmd),
    /// Edit report metadata and build the report.
    #[command(subcommand)]
    Report(ReportCmd),
    /// Run the HTTP API.
    Serve {
        /// Overrides the configured bind address.
        #[arg(long)]
        bind: Option<SocketAddr>,
    },
}

#[derive(Args)]
struct Sid {
    /// Session id.
    session: String,
}

#[derive(Subcommand)]
enum SessionCmd {
    /// Create a session and print its id.
    New {
        #[arg(long)]
        name: Option<String>,
    },
    /// Print the session document.
    Show(Sid),
    /// List sessions, newest first.
    List,
}

#[derive(Subcommand)]
enum ProfileCmd {
    /// Replace the application profile with a JSON file.
    Set {
        #[command(flatten)]
        sid: Sid,
        file: PathBuf,
    },
    /// Print the application profile.
    Show(Sid),
}

#[derive(Subcommand)]
enum DfdCmd {
    /// Replace the DFD with an edge-table CSV file.
    Import {
        #[command(flatten)]
        sid: Sid,
        file: PathBuf,
    },
    /// Write the DFD as CSV.
    Export {
        #[command(flatten)]
        sid: Sid,
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
    /// Write the DFD as Graphviz DOT.
    Render {
        #[command(flatten)]
        sid: Sid,
        #[arg(long, default_value = "LR")]
        rankdir: String,
        /// Edge id to highlight.
        #[arg(long)]
        highlight: Option<String>,
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
    /// Generate a DFD from the profile description or from a PNG/JPEG image.
    Generate {
        #[command(flatten)]
        sid: Sid,
        #[arg(long)]
        image: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "replace")]
        mode: ModeArg,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Replace,
    Merge,
    Preview,
}

#[derive(Subcommand)]
enum ElicitCmd {
    /// Ask for threats across all categories from the profile and DFD.
    Zeroshot(Sid),
    /// Draw LINDDUN GO cards and evaluate them.
    Go {
        #[command(flatten)]
        sid: Sid,
        #[arg(long)]
        cards: usize,
        #[arg(long)]
        multi_agent: bool,
        /// Debate rounds; the configured default when omitted.
        #[arg(long)]
        rounds: Option<usize>,
        /// Pick a random enabled provider for every agent call.
        #[arg(long)]
        random_providers: bool,
        /// Run the agents of a round concurrently.
        #[arg(long)]
        parallel: bool,
    },
    /// Analyze one DFD edge with LINDDUN PRO.
    Pro {
        #[command(flatten)]
        sid: Sid,
        #[arg(long)]
        edge: String,
        /// What happens along the flow.
        #[arg(long)]
        flow: String,
        /// Category to analyze (repeatable); all seven when omitted.
        #[arg(long = "category")]
        categories: Vec<String>,
    },
}

#[derive(Subcommand)]
enum AssessCmd {
    /// Make one methodology's results the assessment working set.
    Import {
        #[command(flatten)]
        sid: Sid,
        /// zero-shot, go or pro.
        #[arg(long)]
        from: String,
    },
    /// Generate an impact assessment, or set it with --text.
    Impact {
        #[command(flatten)]
        sid: Sid,
        threat: String,
        #[arg(long)]
        text: Option<String>,
    },
    /// Select control measures from the privacy-pattern catalog.
    Controls {
        #[command(flatten)]
        sid: Sid,
        threat: String,
    },
    /// Include a threat in the report, or exclude it with --exclude.
    Include {
        #[command(flatten)]
        sid: Sid,
        threat: String,
        #[arg(long)]
        exclude: bool,
    },
}

#[derive(Subcommand)]
enum ReportCmd {
    /// Set the report's general information.
    Meta {
        #[command(flatten)]
        sid: Sid,
        #[arg(long)]
        app_name: Option<String>,
        #[arg(long)]
        author: Option<String>,
        #[arg(long)]
        organization: Option<String>,
        #[arg(long)]
        date: Option<String>,
        #[arg(long)]
        scope: Option<String>,
        #[arg(long)]
        include_dfd: bool,
    },
    /// Write report.md (and dfd.dot), then try pandoc for a PDF.
    Build {
        #[command(flatten)]
        sid: Sid,
        #[arg(long, default_value = ".")]
        out: PathBuf,
        /// Fixed report timestamp (RFC 3339), for reproducible output.
        #[arg(long)]
        generated_at: Option<DateTime<Utc>>,
    },
}

/// Write to stdout; a closed pipe (`| head`) is not an error.
fn emit(text: &str) -> Result<()> {
    let mut stdout = std::io::stdout().lock();
    let res = stdout.write_all(text.as_bytes()).and_then(|_| {
        if text.ends_with('\n') {
            Ok(())
        } else {
            stdout.write_all(b"\n")
        }
    });
    match res {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(e.into()),
        _ => Ok(()),
    }
}

fn print_json<T: Serialize>(v: &T) -> Result<()> {
    emit(&serde_json::to_string_pretty(v)?)
}

fn write_or_print(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => emit(text),
    }
}

fn provider_config(p: ProviderArg, model: Option<&str>) -> ProviderConfig {
    match p {
        ProviderArg::Mock => ProviderConfig::mock("mock"),
        ProviderArg::Openai => ProviderConfig::openai(model.unwrap_or("gpt-4o")),
        ProviderArg::Gemini => ProviderConfig::gemini(model.unwrap_or("gemini-1.5-pro")),
        ProviderArg::Mistral => ProviderConfig::mistral(model.unwrap_or("mistral-large-latest")),
    }
}

fn build_app(cli: &Cli) -> Result<App> {
    let mut config = match &cli.config {
        Some(p) => ServiceConfig::from_file(p)?,
        None => ServiceConfig::default(),
    };
    config.apply_env();
    if let Some(d) = &cli.sessions_dir {
        config.sessions_dir = d.clone();
    }
    if let Some(d) = &cli.kb_dir {
        config.kb_dir = Some(d.clone());
    }
    if !cli.providers.is_empty() {
        config.providers = cli
            .providers
            .iter()
            .map(|p| provider_config(*p, cli.model.as_deref()))
            .collect();
    }
    if cli.config.is_none() && cli.sessions_dir.is_none() && !config.sessions_dir.exists() {
        // first run with the default location
        fs::create_dir_all(&config.sessions_dir)?;
    }
    let mock = match &cli.mock_script {
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            let script = serde_json::from_str(&text).with_context(|| format!("parsing {}", p.display()))?;
            Some(Arc::new(
                MockProvider::from_script_json(&script, true).map_err(anyhow::Error::msg)?,
            ))
        }
        None => None,
    };
    let mut app = App::from_config(config, mock)?;
    if let Some(seed) = cli.seed {
        app.gateway = app.gateway.with_selection_seed(seed);
    }
    Ok(app)
}

fn parse_categories(raw: &[String]) -> Result<Vec<LinddunCategory>> {
    if raw.is_empty() {
        return Ok(LinddunCategory::ALL.to_vec());
    }
    raw.iter()
        .map(|c| c.parse::<LinddunCategory>().map_err(anyhow::Error::from))
        .collect()
}

fn run(cli: Cli) -> Result<()> {
    let app = build_app(&cli)?;
    let sid = |s: &Sid| SessionId(s.session.clone());
    match cli.command {
        Command::Session(cmd) => match cmd {
            SessionCmd::New { name } => emit(app.create_session(name)?.id.as_str())?,
            SessionCmd::Show(s) => emit(&app.load(&sid(&s))?.to_document())?,
            SessionCmd::List => print_json(&app.list_sessions()?)?,
        },
        Command::Profile(cmd) => match cmd {
            ProfileCmd::Set { sid: s, file } => {
                let text = fs::read_to_string(&file).with_context(|| format!("reading {}", file.display()))?;
                let profile: ApplicationProfile =
                    serde_json::from_str(&text).with_context(|| format!("parsing {}", file.display()))?;
                print_json(&app.set_profile(&sid(&s), profile)?)?;
            }
            ProfileCmd::Show(s) => print_json(&app.profile(&sid(&s))?)?,
        },
        Command::Dfd(cmd) => match cmd {
            DfdCmd::Import { sid: s, file } => {
                let text = fs::read_to_string(&file).with_context(|| format!("reading {}", file.display()))?;
                print_json(&app.import_csv(&sid(&s), &text)?)?;
            }
            DfdCmd::Export { sid: s, out } => write_or_print(out.as_deref(), &app.export_csv(&sid(&s))?)?,
            DfdCmd::Render {
                sid: s,
                rankdir,
                highlight,
                out,
            } => {
                let options = DotOptions {
                    rankdir: rankdir.parse::<RankDir>()?,
                    highlight_edge: highlight.map(EdgeId),
                };
                write_or_print(out.as_deref(), &app.dot(&sid(&s), &options)?)?;
            }
            DfdCmd::Generate { sid: s, image, mode } => {
                let mut req = GenerateDfdRequest {
                    mode: match mode {
                        ModeArg::Replace => GenerateMode::Replace,
                        ModeArg::Merge => GenerateMode::Merge,
                        ModeArg::Preview => GenerateMode::Preview,
                    },
                    ..GenerateDfdRequest::default()
                };
                if let Some(path) = image {
                    use base64::Engine as _;
                    let bytes = fs::read(&path).with_context(|| format!("reading {}", path.display()))?;
                    let ext = path.extension().and_then(|e| e.to_str()).unwrap_or("");
                    req.source = DfdSource::Image;
                    req.media_type = Some(ext.to_string());
                    req.image_base64 = Some(base64::engine::general_purpose::STANDARD.encode(bytes));
                }
                print_json(&app.generate_dfd(&sid(&s), req)?)?;
            }
        },
        Command::Elicit(cmd) => match cmd {
            ElicitCmd::Zeroshot(s) => print_json(&app.elicit_zero_shot(&sid(&s))?)?,
            ElicitCmd::Go {
                sid: s,
                cards,
                multi_agent,
                rounds,
                random_providers,
                parallel,
            } => {
                let req = GoRequest {
                    n_cards: cards,
                    multi_agent,
                    rounds,
                    seed: cli.seed,
                    provider_mode: if random_providers {
                        ProviderMode::RandomEnabled
                    } else {
                        ProviderMode::Default
                    },
                    parallel,
                };
                let report = app.elicit_go(&sid(&s), req)?;
                for f in &report.failures {
                    eprintln!("card {} failed: {} {}", f.card_id, f.code, f.message);
                }
                print_json(&report)?;
            }
            ElicitCmd::Pro {
                sid: s,
                edge,
                flow,
                categories,
            } => {
                let req = ProRequest {
                    edge_id: EdgeId(edge),
                    flow_description: flow,
                    categories: parse_categories(&categories)?,
                };
                let run = app.elicit_pro(&sid(&s), req)?;
                for f in &run.failures {
                    eprintln!("{} at {} failed: {} {}", f.category, f.location, f.code, f.message);
                }
                print_json(&run)?;
            }
        },
        Command::Assess(cmd) => match cmd {
            AssessCmd::Import { sid: s, from } => {
                let m: Methodology = from.parse()?;
                print_json(&app.import_threats(&sid(&s), m)?)?;
            }
            AssessCmd::Impact { sid: s, threat, text } => {
                let t = match text {
                    Some(text) => app.patch_threat(
                        &sid(&s),
                        &ThreatId(threat),
                        ThreatPatch {
                            included: None,
                            impact: Some(text),
                        },
                    )?,
                    None => app.generate_impact(&sid(&s), &ThreatId(threat))?,
                };
                print_json(&t)?;
            }
            AssessCmd::Controls { sid: s, threat } => {
                print_json(&app.select_controls(&sid(&s), &ThreatId(threat))?)?
            }
            AssessCmd::Include { sid: s, threat, exclude } => {
                let patch = ThreatPatch {
                    included: Some(!exclude),
                    impact: None,
                };
                print_json(&app.patch_threat(&sid(&s), &ThreatId(threat), patch)?)?;
            }
        },
        Command::Report(cmd) => match cmd {
            ReportCmd::Meta {
                sid: s,
                app_name,
                author,
                organization,
                date,
                scope,
                include_dfd,
            } => {
                let id = sid(&s);
                let mut meta: ReportMeta = app.load(&id)?.report_meta;
                let set = |field: &mut String, v: Option<String>| {
                    if let Some(v) = v {
                        *field = v;
                    }
                };
                set(&mut meta.app_name, app_name);
                set(&mut meta.author, author);
                set(&mut meta.organization, organization);
                set(&mut meta.date, date);
                set(&mut meta.scope_notes, scope);
                meta.include_dfd = include_dfd;
                print_json(&app.set_report_meta(&id, meta)?)?;
            }
            ReportCmd::Build {
                sid: s,
                out,
                generated_at,
            } => build_report(&app, &sid(&s), &out, generated_at)?,
        },
        Command::Serve { bind } => serve(app, bind)?,
    }
    Ok(())
}

#[derive(Serialize)]
struct BuildOutput {
    markdown: PathBuf,
    dot: Option<PathBuf>,
    pdf: Option<PathBuf>,
    threat_count: usize,
    notice: Option<String>,
}

fn tool_ok(cmd: &mut Process) -> bool {
    cmd.output().map(|o| o.status.success()).unwrap_or(false)
}

fn build_report(app: &App, id: &SessionId, out: &Path, generated_at: Option<DateTime<Utc>>) -> Result<()> {
    let artifacts = app.build_report(id, generated_at)?;
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let md = out.join("report.md");
    fs::write(&md, &artifacts.markdown)?;
    let dot = match &artifacts.dot {
        Some(text) => {
            let p = out.join("dfd.dot");
            fs::write(&p, text)?;
            // the report links dfd.png; rasterize when Graphviz is installed
            let _ = tool_ok(Process::new("dot").arg("-Tpng").arg("-o").arg(out.join("dfd.png")).arg(&p));
            Some(p)
        }
        None => None,
    };
    let pdf = out.join("report.pdf");
    let pdf = if tool_ok(
        Process::new("pandoc")
            .current_dir(out)
            .args(["report.md", "-o", "report.pdf"]),
    ) {
        Some(pdf)
    } else {
        eprintln!("note: PDF not produced (pandoc with a PDF engine is not available); report.md is complete");
        None
    };
    print_json(&BuildOutput {
        markdown: md,
        dot,
        pdf,
        threat_count: artifacts.threat_count,
        notice: artifacts.notice,
    })
}

fn serve(app: App, bind: Option<SocketAddr>) -> Result<()> {
    let addr = bind.unwrap_or(app.config.bind);
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(async move {
        let listener = tokio::net::TcpListener::bind(addr)
            .await
            .with_context(|| format!("binding {addr}"))?;
        tracing::info!(%addr, "listening");
        eprintln!("listening on http://{}", listener.local_addr()?);
        axum::serve(listener, router(Arc::new(app)))
            .with_graceful_shutdown(async {
                let _ = tokio::signal::ctrl_c().await;
            })
            .await?;
        Ok(())
    })
}

fn main() {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_env("LINDDUN_LOG")
                .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new("warn")),
        )
        .with_writer(std::io::stderr)
        .with_ansi(std::io::stderr().is_terminal())
        .init();
    let cli = Cli::parse();
    if let Err(e) = run(cli) {
        match e.downcast_ref::<AppError>() {
            Some(app_err) => {
                eprintln!("error: {app_err}");
                if !app_err.detail.is_null() {
                    eprintln!("{}", app_err.detail);
                }
            }
            None => eprintln!("error: {e:#}"),
        }
        std::process::exit(1);
    }
}
