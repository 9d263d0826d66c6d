use std::fs;
use std::io::{self, Write};
use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::thread;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use polqkd::channel::{connect_bob_tcp, encode_message, serve_alice_tcp, ExchangeOutcome};
use polqkd::config::{load_config, Scenario, ScenarioConfig};
use polqkd::protocol::{bob_run_stream, run_session, Decision};
use polqkd::report::Summary;
use polqkd::scenario::{run_scenario, scenario_dir};
use polqkd::tagfile;

/// Polarization-encoding QKD link simulator.
#[derive(Debug, Parser)]
#[command(name = "polqkd", version)]
struct Cli {
    #[command(flatten)]
    global: Global,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Global {
    /// Configuration file (flat dotted key = value, TOML syntax).
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Overrides `seed` from the file.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Overrides `output_dir` from the file.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Gated pulse train at two fiber lengths.
    PulseTrain,
    /// H/V intensity against phase-modulator voltage.
    VoltageSweep,
    /// CW light through the phase modulator driven by random bits.
    PhaseModCw,
    /// Clock start-up followed by gated random-bit pulses.
    PulsedRandom,
    /// Tag stream, binning and MCSS gating over a short span.
    GatingDemo,
    /// Full key-distribution session with per-cycle log.
    KeyRun,
    /// Full session with the QBER time series.
    QberRun,
    /// Every scenario, each in its own directory.
    All,
    /// Classify a recorded tag stream (`.csv` or `.bin`).
    Analyze { tags: PathBuf },
    /// One end of the classical QBER exchange over TCP.
    Peer(PeerArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum PeerRole {
    Alice,
    Bob,
}

#[derive(Debug, Args)]
struct PeerArgs {
    role: PeerRole,

    /// Address Alice listens on; port 0 picks a free one.
    #[arg(long, default_value = "127.0.0.1:0")]
    listen: String,

    /// Address Bob connects to.
    #[arg(long, required_if_eq("role", "bob"))]
    connect: Option<String>,

    /// Revealed indices per request.
    #[arg(long, default_value_t = 100)]
    chunk: usize,

    /// Receive timeout in milliseconds.
    #[arg(long, default_value_t = 5000)]
    timeout_ms: u64,

    /// Flip Bob's bit at this index before the exchange (fault injection).
    #[arg(long)]
    flip: Vec<usize>,

    /// Write every frame sent and received, in order, to this file.
    #[arg(long)]
    transcript: Option<PathBuf>,
}

fn load(global: &Global) -> Result<ScenarioConfig> {
    let mut cfg = match &global.config {
        Some(path) => load_config(path)?,
        None => ScenarioConfig::default(),
    };
    if let Some(seed) = global.seed {
        cfg.session.seed = seed;
    }
    if let Some(out) = &global.out {
        cfg.output_dir = out.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn print_summary(out: &mut impl Write, summary: &Summary) -> io::Result<()> {
    summary.write(out)
}

fn run_one(cfg: &ScenarioConfig, scenario: Scenario) -> Result<(Summary, PathBuf)> {
    let cfg = ScenarioConfig {
        scenario,
        ..cfg.clone()
    };
    let out = run_scenario(&cfg).with_context(|| format!("scenario {scenario}"))?;
    Ok((out.summary, scenario_dir(&cfg.output_dir, scenario)))
}

fn scenario_of(cmd: &Command) -> Option<Scenario> {
    Some(match cmd {
        Command::PulseTrain => Scenario::PulseTrain,
        Command::VoltageSweep => Scenario::VoltageSweep,
        Command::PhaseModCw => Scenario::PhaseModCw,
        Command::PulsedRandom => Scenario::PulsedRandom,
        Command::GatingDemo => Scenario::GatingDemo,
        Command::KeyRun => Scenario::KeyRun,
        Command::QberRun => Scenario::QberRun,
        _ => return None,
    })
}

fn read_tags(path: &Path) -> Result<Vec<polqkd::timing::TagEvent>> {
    let file = fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let reader = io::BufReader::new(file);
    let events = match path.extension().and_then(|e| e.to_str()) {
        Some("bin") => tagfile::read_binary(reader)?,
        Some("csv") => tagfile::read_csv(reader)?,
        _ => bail!("{}: expected a .csv or .bin tag file", path.display()),
    };
    Ok(events)
}

fn analyze(cfg: &ScenarioConfig, path: &Path, out: &mut impl Write) -> Result<()> {
    let tags = read_tags(path)?;
    let analysis = bob_run_stream(&tags, &cfg.session)?;
    let decisions: String = analysis
        .classified
        .iter()
        .map(|c| match c.decision {
            Decision::H => '0',
            Decision::V => '1',
            Decision::Erasure => '-',
        })
        .collect();
    let errors = analysis
        .classified
        .iter()
        .zip(&analysis.sender_bits)
        .filter(|(c, &b)| c.decision.bit().is_some_and(|x| x != b))
        .count();
    let mut s = Summary::new();
    s.push("tag_events", tags.len())
        .push("cycles", analysis.gated.len())
        .push("retained", analysis.gated.iter().filter(|g| g.sample.is_some()).count())
        .push(
            "erasures",
            analysis
                .classified
                .iter()
                .filter(|c| c.decision == Decision::Erasure)
                .count(),
        )
        .push("key_errors", errors)
        .push("decisions", decisions);
    print_summary(out, &s)?;
    Ok(())
}

fn write_transcript(path: &Path, outcome: &ExchangeOutcome) -> Result<()> {
    let mut bytes = Vec::new();
    for (_, msg) in &outcome.transcript {
        bytes.extend(encode_message(msg));
    }
    fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
}

fn peer(cfg: &ScenarioConfig, args: &PeerArgs, out: &mut impl Write) -> Result<()> {
    // Both ends simulate the same session; each keeps only its own half.
    let report = run_session(&cfg.session)?;
    let timeout = Duration::from_millis(args.timeout_ms);
    let session_id = cfg.session.seed;
    let outcome = match args.role {
        PeerRole::Alice => {
            let listener = TcpListener::bind(&args.listen).with_context(|| format!("binding {}", args.listen))?;
            writeln!(out, "listening={}", listener.local_addr()?)?;
            out.flush()?;
            serve_alice_tcp(&listener, session_id, &report.alice_key, timeout)?
        }
        PeerRole::Bob => {
            let mut bob_key = report.bob_key.clone();
            for &i in &args.flip {
                let d = bob_key
                    .get_mut(i)
                    .with_context(|| format!("--flip {i} beyond the key"))?;
                *d = match *d {
                    Decision::H => Decision::V,
                    Decision::V => Decision::H,
                    Decision::Erasure => Decision::Erasure,
                };
            }
            let addr = args.connect.as_deref().expect("clap requires --connect for bob");
            connect_bob_tcp(addr, session_id, &bob_key, &report.revealed, args.chunk, timeout)?
        }
    };
    if let Some(path) = &args.transcript {
        write_transcript(path, &outcome)?;
    }
    let mut s = Summary::new();
    s.push("role", format!("{:?}", args.role).to_lowercase())
        .push("compared", outcome.total.compared)
        .push("mismatches", outcome.total.mismatches)
        .push("skipped_erasures", outcome.total.skipped_erasures)
        .push("qber", outcome.total.value())
        .push("frames", outcome.transcript.len());
    print_summary(out, &s)?;
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let cfg = load(&cli.global)?;
    let stdout = io::stdout();
    let mut out = stdout.lock();
    if let Some(sc) = scenario_of(&cli.command) {
        let (summary, dir) = run_one(&cfg, sc)?;
        print_summary(&mut out, &summary)?;
        writeln!(out, "output_dir={}", dir.display())?;
        return Ok(());
    }
    match &cli.command {
        Command::All => {
            // Seed-isolated scenarios writing to distinct directories.
            let cfg = &cfg;
            let results: Vec<Result<(Summary, PathBuf)>> = thread::scope(|s| {
                let handles: Vec<_> = Scenario::ALL
                    .iter()
                    .map(|&sc| s.spawn(move || run_one(cfg, sc)))
                    .collect();
                handles
                    .into_iter()
                    .map(|h| h.join().expect("scenario thread panicked"))
                    .collect()
            });
            for r in results {
                let (summary, dir) = r?;
                print_summary(&mut out, &summary)?;
                writeln!(out, "output_dir={}", dir.display())?;
            }
        }
        Command::Analyze { tags } => analyze(&cfg, tags, &mut out)?,
        Command::Peer(args) => peer(&cfg, args, &mut out)?,
        _ => unreachable!("scenario commands handled above"),
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
