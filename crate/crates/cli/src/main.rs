// SPDX-License-Identifier: Apache-2.0

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use reprosvc_core::gateway::config::CONFIG_ENV;
use reprosvc_core::gateway::evaluate::{self, EvaluateOptions, EXIT_INTERNAL};
use reprosvc_core::gateway::{http, Service, ServiceConfig};
use reprosvc_core::harness::MatrixOptions;
use reprosvc_core::registry::{PublicationLink, SubmissionMeta};
use reprosvc_core::Assertion;

#[derive(Parser)]
#[command(name = "reprosvc", version, about = "Per-commit reproducibility service")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct ServerArg {
    /// Base URL of a running service.
    #[arg(long, env = "REPROSVC_URL", default_value = "http://127.0.0.1:8080")]
    server: String,
}

#[derive(Subcommand)]
enum Command {
    /// Run the HTTP service until SIGTERM or SIGINT.
    Serve {
        #[arg(long, env = CONFIG_ENV)]
        config: PathBuf,
    },
    /// Build, test and benchmark a local source tree once, without a server.
    /// Exits 0 for GREEN, 1 for AMBER, 2 for RED and 3 on errors.
    Evaluate {
        #[arg(long)]
        source: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        /// Directory of benchmark metadata documents and model files.
        #[arg(long)]
        benchmarks: PathBuf,
        #[arg(long, default_value = "report.json")]
        report: PathBuf,
        /// Workspaces and transcripts.
        #[arg(long, default_value = "reprosvc-work")]
        work_dir: PathBuf,
    },
    /// Submit a benchmark model to a project.
    SubmitBenchmark {
        #[arg(long)]
        project: String,
        #[arg(long)]
        model: PathBuf,
        /// Expected output key, as key=value. Repeatable.
        #[arg(long = "assert", value_name = "KEY=VALUE", required = true)]
        assertions: Vec<String>,
        /// Comma-separated algorithms. All declared algorithms when absent.
        #[arg(long, value_delimiter = ',')]
        algs: Vec<String>,
        #[arg(long)]
        doi: Option<String>,
        #[arg(long)]
        id: Option<String>,
        #[arg(long, default_value = "")]
        format_tag: String,
        #[arg(long, env = "USER", default_value = "anonymous")]
        submitter: String,
        #[arg(long, env = "REPROSVC_TOKEN", hide_env_values = true)]
        token: Option<String>,
        #[command(flatten)]
        server: ServerArg,
    },
    /// Print the badge document of a commit.
    Badge {
        #[arg(long)]
        project: String,
        #[arg(long)]
        commit: String,
        #[command(flatten)]
        server: ServerArg,
    },
    /// Print the ranked entries of a venue.
    Rank {
        #[arg(long)]
        venue: String,
        #[command(flatten)]
        server: ServerArg,
    },
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()),
        )
        .with_writer(std::io::stderr)
        .init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Serve { config } => serve(&config).map(|()| 0),
        Command::Evaluate { source, manifest, benchmarks, report, work_dir } => {
            run_evaluate(source, manifest, benchmarks, &report, work_dir)
        }
        Command::SubmitBenchmark { project, model, assertions, algs, doi, id, format_tag, submitter, token, server } => {
            submit(&server.server, &project, &model, &assertions, algs, doi, id, format_tag, submitter, token)
                .map(|()| 0)
        }
        Command::Badge { project, commit, server } => {
            let url = format!("{}/projects/{project}/badge", server.server.trim_end_matches('/'));
            get_json(&url, &[("commit", &commit)]).map(|()| 0)
        }
        Command::Rank { venue, server } => {
            let url = format!("{}/venues/{venue}/ranking", server.server.trim_end_matches('/'));
            get_json(&url, &[]).map(|()| 0)
        }
    };
    match result {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_INTERNAL as u8)
        }
    }
}

fn host_env() -> BTreeMap<String, String> {
    std::env::vars().collect()
}

fn serve(config_path: &Path) -> Result<()> {
    let config = ServiceConfig::load(config_path)?;
    let service = Service::open(config, host_env())?;
    let runtime = tokio::runtime::Runtime::new().context("starting runtime")?;
    runtime.block_on(async move {
        let server = http::start(service, true).await?;
        tracing::info!(address = %server.addr(), "listening");
        wait_for_signal().await?;
        tracing::info!("shutting down after in-flight jobs");
        server.shutdown().await;
        Ok(())
    })
}

async fn wait_for_signal() -> Result<()> {
    use tokio::signal::unix::{signal, SignalKind};
    let mut term = signal(SignalKind::terminate()).context("installing SIGTERM handler")?;
    let mut int = signal(SignalKind::interrupt()).context("installing SIGINT handler")?;
    tokio::select! {
        _ = term.recv() => {}
        _ = int.recv() => {}
    }
    Ok(())
}

fn run_evaluate(
    source: PathBuf,
    manifest: PathBuf,
    benchmarks: PathBuf,
    report_path: &Path,
    work_dir: PathBuf,
) -> Result<i32> {
    let opts = EvaluateOptions {
        source,
        manifest,
        benchmarks,
        work_dir,
        matrix: MatrixOptions::default(),
        service_env: host_env(),
    };
    let report = evaluate::evaluate(&opts)?;
    print!("{}", evaluate::render_text(&report));
    let json = serde_json::to_vec_pretty(&report)?;
    std::fs::write(report_path, json).with_context(|| format!("writing {}", report_path.display()))?;
    Ok(report.exit_code)
}

fn parse_assertions(items: &[String]) -> Result<Vec<(String, String)>> {
    items
        .iter()
        .map(|item| match item.split_once('=') {
            Some((k, v)) if !k.is_empty() => Ok((k.to_string(), v.to_string())),
            _ => bail!("--assert {item:?} is not key=value"),
        })
        .collect()
}

#[allow(clippy::too_many_arguments)]
fn submit(
    server: &str,
    project: &str,
    model: &Path,
    assertions: &[String],
    algs: Vec<String>,
    doi: Option<String>,
    id: Option<String>,
    format_tag: String,
    submitter: String,
    token: Option<String>,
) -> Result<()> {
    let mut meta = SubmissionMeta::new(submitter, Assertion::key_equals(parse_assertions(assertions)?));
    meta.algorithm_tags = algs;
    meta.benchmark_id = id;
    meta.format_tag = format_tag;
    meta.publication = doi.map(|d| PublicationLink::new(d, ""));
    let bytes = std::fs::read(model).with_context(|| format!("reading {}", model.display()))?;
    let form = reqwest::blocking::multipart::Form::new()
        .part("metadata", reqwest::blocking::multipart::Part::bytes(serde_json::to_vec(&meta)?))
        .part("model", reqwest::blocking::multipart::Part::bytes(bytes));
    let url = format!("{}/projects/{project}/benchmarks", server.trim_end_matches('/'));
    let mut req = client()?.post(&url).multipart(form);
    if let Some(t) = token {
        req = req.bearer_auth(t);
    }
    print_response(req.send().with_context(|| format!("POST {url}"))?)
}

fn client() -> Result<reqwest::blocking::Client> {
    // Benchmark validation runs inline and may take a while.
    Ok(reqwest::blocking::Client::builder().timeout(None).build()?)
}

fn get_json(url: &str, query: &[(&str, &str)]) -> Result<()> {
    let resp = client()?.get(url).query(query).send().with_context(|| format!("GET {url}"))?;
    print_response(resp)
}

fn print_response(resp: reqwest::blocking::Response) -> Result<()> {
    let status = resp.status();
    let body: serde_json::Value = resp.json().context("response is not JSON")?;
    if !status.is_success() {
        let code = body["error"].as_str().unwrap_or("ERROR");
        let message = body["message"].as_str().unwrap_or("");
        bail!("{code} ({status}): {message}");
    }
    println!("{}", serde_json::to_string_pretty(&body)?);
    Ok(())
}
