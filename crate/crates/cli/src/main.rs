//! `art-arena`: run fitness trials and motif-duel tournaments, and derive
//! reports from finished runs.

use std::io::{self, BufReader, Write};
use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use arena_core::analysis::{self, AnalysisError};
use arena_core::arena::{self, ArenaContext, ArenaError, Ledger};
use arena_core::backend::BackendError;
use arena_core::catalog::{load_catalog, Catalog, CatalogError};
use arena_core::config::{load_config, ConfigError, TournamentConfig};
use arena_core::metric::MetricError;
use arena_core::mock::MockBackend;
use arena_core::prompting::{BlendingManifest, PromptError};
use arena_core::protocol::{self, BackendSpec, Connection, MockWorker, ProtocolError};
use arena_core::report;
use arena_core::runner::{self, RunError, RunOptions};
use arena_core::store::{RunStore, StoreError};

const EXIT_FAILURE: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_BACKEND: u8 = 3;
const EXIT_VALIDATION: u8 = 4;
const EXIT_INTERRUPTED: u8 = 130;

#[derive(Parser)]
#[command(
    name = "art-arena",
    version,
    about = "Fitness trials, motif duels and influence ledgers for text-to-image style audits"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run entry trials only, into a run directory.
    Trials(RunArgs),
    /// Play a single duel and print its record as JSON.
    Duel(DuelArgs),
    /// Run trials, admission and the full round robin, then write reports.
    Tournament(RunArgs),
    /// Print the ledger of a run.
    Ledger(LedgerArgs),
    /// Recompute every report of a run from its logs.
    Analyze(AnalyzeArgs),
    /// Sweep the round-award margin over a run's stored scores.
    Sensitivity(SensitivityArgs),
    /// Compare ledger ranks of two runs.
    RankDelta(RankDeltaArgs),
    /// Check a catalog and blending manifests.
    ValidateManifest(ValidateArgs),
    /// Serve the built-in mock backend over the wire protocol.
    MockWorker(MockWorkerArgs),
}

#[derive(Args, Clone)]
struct InputArgs {
    /// Tournament config (TOML). Defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Artwork catalog (JSON).
    #[arg(long)]
    catalog: Option<PathBuf>,
    /// Overrides the config's proximity metric.
    #[arg(long)]
    metric: Option<String>,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    input: InputArgs,
    /// mock, worker:CMD or tcp:ADDR.
    #[arg(long, default_value = "mock")]
    backend: String,
    /// Run directory.
    #[arg(long)]
    run: PathBuf,
    /// Maximum concurrent trials or duels.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    /// Continue an existing run directory.
    #[arg(long)]
    resume: bool,
    /// Stop after writing this many duel records (crash simulation).
    #[arg(long, hide = true)]
    stop_after: Option<usize>,
}

#[derive(Args)]
struct DuelArgs {
    #[command(flatten)]
    input: InputArgs,
    #[arg(long, default_value = "mock")]
    backend: String,
    #[arg(long)]
    challenger: String,
    #[arg(long)]
    defender: String,
    /// Write the record here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Text,
    Csv,
    Json,
}

#[derive(Args)]
struct LedgerArgs {
    #[arg(long)]
    run: PathBuf,
    #[arg(long, value_enum, default_value = "text")]
    format: Format,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct AnalyzeArgs {
    #[arg(long)]
    run: PathBuf,
    /// Report directory; defaults to the run's own `reports/`.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SensitivityArgs {
    #[arg(long)]
    run: PathBuf,
    /// Comma-separated, strictly ascending margins.
    #[arg(long, value_delimiter = ',', required = true)]
    grid: Vec<f64>,
    #[arg(long, value_enum, default_value = "csv")]
    format: Format,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct RankDeltaArgs {
    /// Run directory or ledger JSON before fine-tuning.
    #[arg(long)]
    before: PathBuf,
    /// Run directory or ledger JSON after fine-tuning.
    #[arg(long)]
    after: PathBuf,
    #[arg(long, value_enum, default_value = "text")]
    format: Format,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ValidateArgs {
    #[arg(long)]
    catalog: PathBuf,
    /// Blending manifests; a file named `<artwork id>.json` is also checked
    /// against that artwork.
    #[arg(long)]
    blending: Vec<PathBuf>,
    /// With a config, also checks every artwork can supply a prompt set.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct MockWorkerArgs {
    #[arg(long)]
    catalog: PathBuf,
    /// Serve TCP on this address instead of stdio.
    #[arg(long)]
    listen: Option<String>,
    #[arg(long, default_value_t = 0.0)]
    jitter: f64,
}

fn main() -> ExitCode {
    init_logging();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn init_logging() {
    let filter = tracing_subscriber::EnvFilter::try_from_env("ARENA_LOG_LEVEL")
        .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new("warn"));
    tracing_subscriber::fmt()
        .with_env_filter(filter)
        .with_writer(io::stderr)
        .init();
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Trials(a) => cmd_run(a, false),
        Command::Tournament(a) => cmd_run(a, true),
        Command::Duel(a) => cmd_duel(a),
        Command::Ledger(a) => cmd_ledger(a),
        Command::Analyze(a) => cmd_analyze(a),
        Command::Sensitivity(a) => cmd_sensitivity(a),
        Command::RankDelta(a) => cmd_rank_delta(a),
        Command::ValidateManifest(a) => cmd_validate(a),
        Command::MockWorker(a) => cmd_mock_worker(a),
    }
}

/// Loads the config, applying `--metric` and resolving a relative
/// blending directory against the config file's directory.
fn config_from(input: &InputArgs) -> Result<Option<TournamentConfig>> {
    let mut cfg = match &input.config {
        Some(path) => {
            let mut c = load_config(path)?;
            if let Some(dir) = c.prompting.blending_dir.as_mut() {
                if dir.is_relative() {
                    *dir = path.parent().unwrap_or(Path::new(".")).join(&*dir);
                }
            }
            Some(c)
        }
        None => None,
    };
    if let Some(m) = &input.metric {
        let c = cfg.get_or_insert_with(TournamentConfig::default);
        c.metric = m.clone();
        c.validate()?;
    }
    Ok(cfg)
}

fn catalog_from(input: &InputArgs) -> Result<Option<Catalog>> {
    input
        .catalog
        .as_deref()
        .map(load_catalog)
        .transpose()
        .map_err(Into::into)
}

fn connect(spec: &str, catalog: &Catalog, config: &TournamentConfig) -> Result<(BackendSpec, Connection)> {
    let spec: BackendSpec = spec.parse()?;
    let conn = protocol::connect(
        &spec,
        catalog,
        &config.registry()?,
        config.backend.handshake_timeout(),
        config.backend.mock_jitter,
    )?;
    if !conn.handshake.advertises(&config.metric) {
        return Err(ProtocolError::MissingCapability(format!("metric `{}`", config.metric)).into());
    }
    Ok((spec, conn))
}

fn cmd_run(a: RunArgs, tournament: bool) -> Result<()> {
    let catalog = catalog_from(&a.input)?;
    let store = if a.resume {
        let desired = match (&a.input.config, &a.input.metric) {
            (None, Some(metric)) => {
                let mut c = RunStore::open(&a.run)?.config().clone();
                c.metric = metric.clone();
                Some(c)
            }
            _ => config_from(&a.input)?,
        };
        RunStore::resume(&a.run, desired.as_ref(), catalog.as_ref())?
    } else {
        let catalog = catalog.ok_or_else(|| anyhow!("--catalog is required for a new run"))?;
        let cfg = config_from(&a.input)?.unwrap_or_default();
        cfg.validate_for_catalog(catalog.len())?;
        RunStore::create(&a.run, &cfg, &catalog)?
    };
    let (spec, conn) = connect(&a.backend, store.catalog(), store.config())?;
    let meta = store.begin_session(&spec.to_string(), Some(&conn.handshake))?;
    let cancel = Arc::new(AtomicBool::new(false));
    {
        let cancel = cancel.clone();
        let _ = ctrlc::set_handler(move || cancel.store(true, Ordering::Relaxed));
    }
    let opts = RunOptions {
        jobs: a.jobs.max(1),
        stop_after_duels: a.stop_after,
        cancel: Some(cancel),
    };
    if tournament {
        let summary = runner::run_tournament(&store, conn.backend.as_ref(), &opts)?;
        store.finish_session(meta)?;
        eprintln!(
            "trials: {} run, {} reused; duels: {} run, {} reused",
            summary.trials_run, summary.trials_reused, summary.duels_run, summary.duels_reused
        );
        if let Some(l) = &summary.ledger {
            print!("{}", report::ledger_text(l, store.catalog()));
        }
    } else {
        let (trials, run, reused) = runner::run_trials(&store, conn.backend.as_ref(), &opts)?;
        let bundle = runner::compute_reports(&store)?;
        store.write_reports(&bundle.files)?;
        store.finish_session(meta)?;
        eprintln!("trials: {run} run, {reused} reused");
        print!("{}", report::fitset_csv(&bundle.fitset));
        let failed = trials.iter().filter(|t| t.result().is_none()).count();
        if failed > 0 {
            eprintln!("{failed} entry trials failed and were excluded from admission");
        }
    }
    Ok(())
}

fn cmd_duel(a: DuelArgs) -> Result<()> {
    let cfg = config_from(&a.input)?.unwrap_or_default();
    let catalog = catalog_from(&a.input)?.ok_or_else(|| anyhow!("--catalog is required"))?;
    let get = |id: &str| {
        catalog.get(id).ok_or_else(|| CatalogError::Validation {
            record: id.to_string(),
            reason: "not in catalog".into(),
        })
    };
    let (c, d) = (get(&a.challenger)?, get(&a.defender)?);
    let set = runner::prompt_set_for(&cfg, c)?;
    let (_, conn) = connect(&a.backend, &catalog, &cfg)?;
    let ctx = ArenaContext {
        config: &cfg,
        metric: cfg.metric_spec()?,
        backend: conn.backend.as_ref(),
        retry: cfg.backend.retry_policy(),
    };
    let outcome = arena::run_duel(c, d, &set, &ctx).map_err(RunError::from)?;
    emit(a.out.as_deref(), &report::to_json(&outcome))?;
    if let arena::DuelOutcome::Aborted { error, .. } = &outcome {
        return Err(BackendError::Transport(error.clone()).into());
    }
    Ok(())
}

fn emit(out: Option<&Path>, body: &str) -> Result<()> {
    match out {
        Some(p) => std::fs::write(p, body).with_context(|| format!("writing {}", p.display())),
        None => {
            io::stdout().write_all(body.as_bytes())?;
            Ok(())
        }
    }
}

fn ledger_of(store: &RunStore) -> Result<Ledger> {
    runner::compute_reports(store)?
        .ledger
        .ok_or_else(|| anyhow!("{}: run has no duels yet", store.dir().display()))
}

fn cmd_ledger(a: LedgerArgs) -> Result<()> {
    let store = RunStore::open(&a.run)?;
    let ledger = ledger_of(&store)?;
    let body = match a.format {
        Format::Text => report::ledger_text(&ledger, store.catalog()),
        Format::Csv => report::ledger_csv(&ledger, store.catalog()),
        Format::Json => report::to_json(&ledger),
    };
    emit(a.out.as_deref(), &body)
}

fn cmd_analyze(a: AnalyzeArgs) -> Result<()> {
    let store = RunStore::open(&a.run)?;
    let bundle = runner::compute_reports(&store)?;
    let dir = a.out.unwrap_or_else(|| store.reports_dir());
    arena_core::store::write_reports_to(&dir, &bundle.files)?;
    for name in bundle.files.keys() {
        println!("{}", dir.join(name).display());
    }
    Ok(())
}

fn cmd_sensitivity(a: SensitivityArgs) -> Result<()> {
    let store = RunStore::open(&a.run)?;
    let spec = store.config().metric_spec()?;
    let bundle = runner::compute_reports(&store)?;
    let curve = analysis::sweep_delta(&spec.key, spec.orientation, &bundle.duels, &a.grid)?;
    let body = match a.format {
        Format::Json => report::to_json(&curve),
        _ => report::sensitivity_csv(&curve),
    };
    emit(a.out.as_deref(), &body)
}

/// A run directory or a ledger JSON file, with the catalog when known.
fn load_ledger(path: &Path) -> Result<(Ledger, Option<Catalog>)> {
    if path.is_dir() {
        let store = RunStore::open(path)?;
        Ok((ledger_of(&store)?, Some(store.catalog().clone())))
    } else {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let ledger = serde_json::from_str(&text).with_context(|| format!("{}: not a ledger", path.display()))?;
        Ok((ledger, None))
    }
}

fn cmd_rank_delta(a: RankDeltaArgs) -> Result<()> {
    let (before, _) = load_ledger(&a.before)?;
    let (after, catalog) = load_ledger(&a.after)?;
    if before.metric != after.metric {
        tracing::warn!(before = %before.metric, after = %after.metric, "comparing ledgers of different metrics");
    }
    let r = analysis::rank_deltas(&before, &after);
    let body = match a.format {
        Format::Text => report::rank_delta_text(&r, catalog.as_ref()),
        Format::Csv => report::rank_delta_csv(&r),
        Format::Json => report::to_json(&r),
    };
    emit(a.out.as_deref(), &body)?;
    if !r.only_before.is_empty() || !r.only_after.is_empty() {
        eprintln!(
            "ledgers cover different artworks: {} only before, {} only after",
            r.only_before.len(),
            r.only_after.len()
        );
    }
    Ok(())
}

fn cmd_validate(a: ValidateArgs) -> Result<()> {
    let catalog = load_catalog(&a.catalog)?;
    println!("{}: {} artworks ok", a.catalog.display(), catalog.len());
    for path in &a.blending {
        let m = BlendingManifest::load(path)?;
        let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or_default();
        if let Some(artwork) = catalog.get(stem) {
            m.validate_for(artwork).map_err(|e| match e {
                PromptError::InvalidBlending { reason, .. } => PromptError::InvalidBlending {
                    origin: Some(path.display().to_string()),
                    reason,
                },
                other => other,
            })?;
        }
        println!("{}: {} combinations ok", path.display(), m.items.len());
    }
    if let Some(cfg) = config_from(&InputArgs {
        config: a.config.clone(),
        catalog: None,
        metric: None,
    })? {
        cfg.validate_for_catalog(catalog.len())?;
        for artwork in catalog.records() {
            runner::prompt_set_for(&cfg, artwork)?;
        }
        println!("every artwork supplies {} challenger prompts", cfg.rounds);
    }
    Ok(())
}

fn cmd_mock_worker(a: MockWorkerArgs) -> Result<()> {
    if !a.jitter.is_finite() || a.jitter < 0.0 {
        bail!("--jitter must be a non-negative number");
    }
    let catalog = load_catalog(&a.catalog)?;
    let worker = MockWorker::new(MockBackend::with_jitter(&catalog, a.jitter));
    match a.listen {
        None => {
            let stdin = io::stdin();
            protocol::serve(&worker, stdin.lock(), io::stdout().lock())?;
        }
        Some(addr) => {
            let listener = TcpListener::bind(&addr).with_context(|| format!("binding {addr}"))?;
            println!("listening on {}", listener.local_addr()?);
            io::stdout().flush()?;
            std::thread::scope(|scope| {
                for stream in listener.incoming() {
                    let stream = match stream {
                        Ok(s) => s,
                        Err(e) => {
                            tracing::warn!("accept failed: {e}");
                            continue;
                        }
                    };
                    let worker = &worker;
                    scope.spawn(move || {
                        let reader = match stream.try_clone() {
                            Ok(r) => BufReader::new(r),
                            Err(e) => return tracing::warn!("connection setup failed: {e}"),
                        };
                        if let Err(e) = protocol::serve(worker, reader, stream) {
                            tracing::warn!("connection closed: {e}");
                        }
                    });
                }
            });
        }
    }
    Ok(())
}

/// Maps an error to its exit status by the first recognised cause.
fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(code) = classify(cause) {
            return code;
        }
    }
    EXIT_FAILURE
}

fn classify(e: &(dyn std::error::Error + 'static)) -> Option<u8> {
    if let Some(e) = e.downcast_ref::<RunError>() {
        return Some(match e {
            RunError::Store(s) => store_code(s),
            RunError::Arena(a) => arena_code(a),
            RunError::Prompt(_) | RunError::Analysis(_) => EXIT_VALIDATION,
            RunError::Metric(_) => EXIT_CONFIG,
            RunError::Interrupted { .. } => EXIT_INTERRUPTED,
        });
    }
    if let Some(s) = e.downcast_ref::<StoreError>() {
        return Some(store_code(s));
    }
    if let Some(a) = e.downcast_ref::<ArenaError>() {
        return Some(arena_code(a));
    }
    if e.is::<ConfigError>() || e.is::<MetricError>() {
        return Some(EXIT_CONFIG);
    }
    if e.is::<ProtocolError>() || e.is::<BackendError>() {
        return Some(EXIT_BACKEND);
    }
    if e.is::<CatalogError>() || e.is::<PromptError>() || e.is::<AnalysisError>() {
        return Some(EXIT_VALIDATION);
    }
    None
}

fn store_code(e: &StoreError) -> u8 {
    match e {
        StoreError::Config(_) => EXIT_CONFIG,
        StoreError::Io { .. } => EXIT_FAILURE,
        _ => EXIT_VALIDATION,
    }
}

fn arena_code(e: &ArenaError) -> u8 {
    match e {
        ArenaError::ContractViolation { .. } | ArenaError::Protocol { .. } => EXIT_BACKEND,
        ArenaError::TopNTooLarge { .. } => EXIT_CONFIG,
        ArenaError::Interrupted => EXIT_INTERRUPTED,
        ArenaError::NoTrials | ArenaError::FitSetTooSmall(_) | ArenaError::UnknownArtwork(_) => EXIT_VALIDATION,
        _ => EXIT_FAILURE,
    }
}
