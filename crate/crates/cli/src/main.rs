use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use discourse_core::config::PartialServerConfig;
use discourse_core::dataset::{load_dataset, validate_dataset, DatasetFormat};
use discourse_core::gateway::{ClockMode, Gateway, GatewayConfig};
use discourse_core::moderator::{generate_feedback_for, Transcript, DEFAULT_MAX_OUTPUT_TOKENS};
use discourse_core::provider::ProviderConfig;
use discourse_core::sim::{run_simulation, write_report, SimConfig, REPORT_FILE};
use discourse_core::{EngineConfig, ServerConfig};

#[derive(Parser)]
#[command(name = "discourse", version, about = "Moderated group reading discussions")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the realtime discussion server.
    Serve(ServeArgs),
    /// Run a persona simulation and write its report.
    Simulate(SimulateArgs),
    /// Load a dataset and print its validation report.
    ValidateDataset(ValidateArgs),
    /// Regenerate per-student feedback from an archived transcript.
    Feedback(FeedbackArgs),
}

#[derive(Args)]
struct ServeArgs {
    /// TOML config file; flags and DISCOURSE_* variables override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    max_students: Option<usize>,
    #[arg(long)]
    max_tokens: Option<usize>,
    #[arg(long)]
    min_qa_pairs: Option<usize>,
    #[arg(long)]
    max_questions: Option<usize>,
    #[arg(long)]
    dataset: Option<PathBuf>,
    #[arg(long)]
    dataset_format: Option<DatasetFormat>,
    #[arg(long)]
    listen: Option<String>,
    #[arg(long)]
    port: Option<u16>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    turn_timeout_secs: Option<f64>,
}

#[derive(Args)]
struct SimulateArgs {
    /// Simulation config (TOML).
    config: PathBuf,
    /// Connect to this server instead of starting an embedded one.
    #[arg(long)]
    server: Option<String>,
    /// Comma-separated per-call delays in seconds for the moderator backend.
    #[arg(long, value_delimiter = ',')]
    inject_delays: Option<Vec<f64>>,
    /// Report directory; overrides `output` in the config.
    #[arg(long)]
    output: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Permit model-backed toxic personas.
    #[arg(long)]
    allow_unsafe_persona: bool,
}

#[derive(Args)]
struct ValidateArgs {
    path: PathBuf,
    #[arg(long, default_value = "canonical")]
    dataset_format: DatasetFormat,
    /// Print the report as JSON.
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct FeedbackArgs {
    /// Transcript archive (TSV).
    transcript: PathBuf,
    /// Provider table (TOML); the built-in scripted moderator when absent.
    #[arg(long)]
    provider_config: Option<PathBuf>,
    /// Where to write the feedback report; stdout when absent.
    #[arg(long)]
    output: Option<PathBuf>,
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "warn".into()))
        .with_writer(std::io::stderr)
        .init();
    let cli = Cli::parse();
    let runtime = tokio::runtime::Runtime::new().expect("tokio runtime");
    let result = runtime.block_on(async {
        match cli.command {
            Command::Serve(args) => serve(args).await,
            Command::Simulate(args) => simulate(args).await,
            Command::ValidateDataset(args) => validate(args),
            Command::Feedback(args) => feedback(args).await,
        }
    });
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

async fn serve(args: ServeArgs) -> anyhow::Result<ExitCode> {
    let flags = PartialServerConfig {
        max_students: args.max_students,
        max_tokens: args.max_tokens,
        min_qa_pairs: args.min_qa_pairs,
        max_questions: args.max_questions,
        dataset_path: args.dataset,
        dataset_format: args.dataset_format,
        provider: None,
        listen: args.listen,
        port: args.port,
        seed: args.seed,
        turn_timeout_secs: args.turn_timeout_secs,
        heartbeat_secs: None,
    };
    let env = PartialServerConfig::from_env(|k| std::env::var(k).ok())?;
    let file = args.config.as_deref().map(PartialServerConfig::from_file).transpose()?;
    let config = ServerConfig::layered(flags, env, file)?;
    let provider = config.build_provider_with_env(|k| std::env::var(k).ok())?;
    let dataset = load_dataset(&config.dataset_path, config.dataset_format)
        .with_context(|| format!("config field `dataset_path`: {}", config.dataset_path.display()))?;
    let name = dataset.name.clone();
    let eligible = dataset.eligible(config.min_qa_pairs).count();
    let gateway = Gateway::new(
        Arc::new(dataset),
        provider,
        GatewayConfig {
            engine: EngineConfig {
                capacity: config.max_students,
                max_tokens: config.max_tokens,
                max_questions: config.max_questions,
                max_output_tokens: DEFAULT_MAX_OUTPUT_TOKENS,
                turn_timeout: config.turn_timeout(),
            },
            min_qa_pairs: config.min_qa_pairs,
            heartbeat: config.heartbeat(),
            seed: config.seed.unwrap_or_else(rand_seed),
            clock: ClockMode::System,
        },
    )?;
    let addr = format!("{}:{}", config.listen, config.port);
    let running = gateway
        .bind(&addr)
        .await
        .with_context(|| format!("cannot bind {addr}"))?;
    println!(
        "ready: listening on {} port {} dataset {name} ({eligible} eligible passages)",
        running.url(),
        running.local_addr().port()
    );
    tokio::signal::ctrl_c().await.context("waiting for interrupt")?;
    eprintln!("shutting down");
    running.shutdown().await;
    Ok(ExitCode::SUCCESS)
}

fn rand_seed() -> u64 {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_nanos() as u64)
        .unwrap_or(0)
}

async fn simulate(args: SimulateArgs) -> anyhow::Result<ExitCode> {
    let mut config = SimConfig::from_file(&args.config)?;
    if let Some(server) = args.server {
        config.server = Some(server);
    }
    if let Some(delays) = args.inject_delays {
        config.inject_delays = Some(delays);
    }
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    config.allow_unsafe_persona |= args.allow_unsafe_persona;
    let output = args
        .output
        .or_else(|| config.output.clone())
        .unwrap_or_else(|| PathBuf::from("sim-out"));
    let report = run_simulation(&config).await?;
    write_report(&report, &output)?;
    println!(
        "room {} on {:?}: {} interactions, mean latency {:.3} s, std {:.3} s; report at {}",
        report.room_id,
        report.passage_title,
        report.latency.len(),
        report.mean_latency,
        report.std_latency,
        output.join(REPORT_FILE).display()
    );
    Ok(if report.reached_feedback {
        ExitCode::SUCCESS
    } else {
        eprintln!("session ended before feedback");
        ExitCode::FAILURE
    })
}

fn validate(args: ValidateArgs) -> anyhow::Result<ExitCode> {
    let dataset = load_dataset(&args.path, args.dataset_format)?;
    let report = validate_dataset(&dataset);
    if args.json {
        println!("{}", serde_json::to_string_pretty(&report)?);
    } else {
        print!("{report}");
    }
    Ok(ExitCode::SUCCESS)
}

async fn feedback(args: FeedbackArgs) -> anyhow::Result<ExitCode> {
    let text =
        std::fs::read_to_string(&args.transcript).with_context(|| format!("reading {}", args.transcript.display()))?;
    let archive = Transcript::parse(&text).with_context(|| args.transcript.display().to_string())?;
    let provider_config = match &args.provider_config {
        Some(path) => ProviderConfig::from_file(path)?,
        None => ProviderConfig::default(),
    };
    let provider = provider_config.build()?;
    let names = archive.participants();
    anyhow::ensure!(!names.is_empty(), "transcript has no participants");
    let report = generate_feedback_for(&names, &archive, provider.as_ref()).await;
    let json = serde_json::to_string_pretty(&report)?;
    match &args.output {
        Some(path) => write_file(path, &json)?,
        None => println!("{json}"),
    }
    let failures = report.failures().count();
    if failures > 0 {
        eprintln!("{failures} feedback call(s) failed");
        return Ok(ExitCode::FAILURE);
    }
    Ok(ExitCode::SUCCESS)
}

fn write_file(path: &Path, contents: &str) -> anyhow::Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}
