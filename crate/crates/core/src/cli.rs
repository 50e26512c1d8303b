//! Command-line front end.

use std::io::{self, Write};
use std::net::{SocketAddr, TcpListener, UdpSocket};
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use clap::{Parser, ValueEnum};
use thiserror::Error;

use crate::planner::{
    PlannerConfig, DEFAULT_EVE_BER_FLOOR, DEFAULT_FINAL_KEY_BER, DEFAULT_LEAKAGE_BUDGET,
};
use crate::privacyamp::FinalKey;
use crate::session::{run_session, Role, SessionConfig, SessionError, SessionOutcome};
use crate::sim::{simulate_chain, simulate_session, ChainTopology, SimSessionConfig, SimSessionError, TopologyError};
use crate::transcript::{Transcript, TranscriptError, TranscriptSource};
use crate::transport::{
    run_udp_rally, ChannelError, Initiator, RallyConfig, RallyEndpoint, Responder, SessionId, StreamChannel,
    UdpRallyError,
};

pub const DEFAULT_ROUNDS: u32 = 30_000;
pub const DEFAULT_TIMEOUT_MS: u64 = 2_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Mode {
    KeygenInitiator,
    KeygenResponder,
    Simulate,
    Analyze,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Default)]
pub enum KeyFormat {
    /// 4-byte big-endian bit count followed by the packed key bytes.
    #[default]
    Raw,
    /// Lowercase hex of the packed key bytes.
    Hex,
}

fn parse_session_id(s: &str) -> Result<SessionId, String> {
    let bytes = hex::decode(s).map_err(|e| format!("not hex: {e}"))?;
    bytes
        .try_into()
        .map_err(|b: Vec<u8>| format!("expected 32 hex digits, got {}", 2 * b.len()))
}

/// Key agreement from round-trip-time randomness.
#[derive(Debug, Clone, Parser)]
#[command(name = "rttkey", version, about)]
pub struct Cli {
    #[arg(long, value_enum)]
    pub mode: Mode,
    /// Responder's UDP address (initiator).
    #[arg(long)]
    pub peer: Option<SocketAddr>,
    /// Local UDP address to bind (required for the responder).
    #[arg(long)]
    pub listen: Option<SocketAddr>,
    /// Shared session id, 32 hex digits, agreed out of band.
    #[arg(long, value_parser = parse_session_id)]
    pub session_id: Option<SessionId>,
    #[arg(long, default_value_t = DEFAULT_ROUNDS, value_parser = clap::value_parser!(u32).range(100..))]
    pub rounds: u32,
    #[arg(long, default_value_t = DEFAULT_TIMEOUT_MS)]
    pub timeout_ms: u64,
    #[arg(long, default_value_t = DEFAULT_EVE_BER_FLOOR)]
    pub eve_ber_floor: f64,
    #[arg(long, default_value_t = DEFAULT_FINAL_KEY_BER)]
    pub final_ber: f64,
    #[arg(long, default_value_t = DEFAULT_LEAKAGE_BUDGET)]
    pub leakage_budget: f64,
    #[arg(long, default_value_t = crate::stats::DEFAULT_Z)]
    pub z: f64,
    /// Key file (keygen) or CSV output (analyze, simulate).
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = KeyFormat::Raw)]
    pub format: KeyFormat,
    /// Transcript to write (keygen, simulate) or read (analyze).
    #[arg(long)]
    pub transcript: Option<PathBuf>,
    /// Seed for the simulated chain. In keygen modes this replaces the
    /// UDP rally with the simulator.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Chain description file for the simulator.
    #[arg(long)]
    pub topology: Option<PathBuf>,
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Session(#[from] SessionError),
    #[error("{0}")]
    Simulation(#[from] SimSessionError),
    #[error("{0}")]
    Transcript(#[from] TranscriptError),
    #[error("topology: {0}")]
    Topology(#[from] TopologyError),
    #[error("rally: {0}")]
    Rally(#[from] UdpRallyError),
    #[error("{0}")]
    Channel(#[from] ChannelError),
    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: io::Error,
    },
}

impl CliError {
    pub fn cause(&self) -> &'static str {
        match self {
            CliError::Usage(_) => "usage",
            CliError::Session(e) => e.cause(),
            CliError::Simulation(_) => "simulation",
            CliError::Transcript(_) => "transcript",
            CliError::Topology(_) => "topology",
            CliError::Rally(_) | CliError::Channel(_) => "channel-loss",
            CliError::Io { .. } => "io",
        }
    }
}

fn io_err(context: impl Into<String>) -> impl FnOnce(io::Error) -> CliError {
    let context = context.into();
    move |source| CliError::Io { context, source }
}

impl Cli {
    pub fn planner(&self) -> PlannerConfig {
        PlannerConfig {
            eve_ber_floor: self.eve_ber_floor,
            final_key_ber_target: self.final_ber,
            per_bit_leakage_budget: self.leakage_budget,
            z: self.z,
            ..PlannerConfig::default()
        }
    }

    fn session_id(&self) -> Result<SessionId, CliError> {
        self.session_id
            .ok_or_else(|| CliError::Usage("--session-id is required".into()))
    }

    fn topology(&self) -> Result<ChainTopology, CliError> {
        match &self.topology {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(io_err(format!("read {}", p.display())))?;
                Ok(ChainTopology::parse(&text)?)
            }
            None => Ok(ChainTopology::default()),
        }
    }

    fn rally_config(&self, sid: SessionId) -> RallyConfig {
        let mut cfg = RallyConfig::new(sid, self.rounds);
        cfg.timeout_ns = self.timeout_ms.saturating_mul(1_000_000);
        cfg
    }

    /// How long to wait for the framed connection.
    fn patience(&self) -> Duration {
        Duration::from_millis(self.timeout_ms.saturating_mul(10).max(10_000))
    }
}

fn plus_one(addr: SocketAddr) -> Result<SocketAddr, CliError> {
    let port = addr
        .port()
        .checked_add(1)
        .ok_or_else(|| CliError::Usage(format!("no port above {addr} for the frame channel")))?;
    Ok(SocketAddr::new(addr.ip(), port))
}

/// Encodes a key for the chosen file format.
pub fn encode_key(key: &FinalKey, format: KeyFormat) -> Vec<u8> {
    let bytes = key.key().to_bytes();
    match format {
        KeyFormat::Raw => {
            let mut out = (key.len() as u32).to_be_bytes().to_vec();
            out.extend_from_slice(&bytes);
            out
        }
        KeyFormat::Hex => format!("{}\n", hex::encode(bytes)).into_bytes(),
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    let result = std::fs::write(path, bytes);
    if result.is_err() {
        let _ = std::fs::remove_file(path);
    }
    result.map_err(io_err(format!("write {}", path.display())))
}

fn write_output(path: Option<&Path>, text: &str, stdout: &mut dyn Write) -> Result<(), CliError> {
    match path {
        Some(p) => write_file(p, text.as_bytes()),
        None => stdout.write_all(text.as_bytes()).map_err(io_err("write stdout")),
    }
}

fn keygen(cli: &Cli, role: Role, stdout: &mut dyn Write) -> Result<(), CliError> {
    let sid = cli.session_id()?;
    let out = cli
        .out
        .clone()
        .ok_or_else(|| CliError::Usage("--out is required for key generation".into()))?;
    let (peer, listen) = match role {
        Role::Initiator => (
            Some(cli.peer.ok_or_else(|| CliError::Usage("--peer is required for the initiator".into()))?),
            cli.listen,
        ),
        Role::Responder => (
            None,
            Some(cli.listen.ok_or_else(|| CliError::Usage("--listen is required for the responder".into()))?),
        ),
    };
    let planner = cli.planner();
    planner.validate().map_err(SessionError::from)?;
    let started = Instant::now();

    // Bind the frame listener first so the initiator never races it.
    let listener = match listen.filter(|_| role == Role::Responder) {
        Some(addr) => {
            let frame_addr = plus_one(addr)?;
            Some(TcpListener::bind(frame_addr).map_err(io_err(format!("bind {frame_addr}")))?)
        }
        None => None,
    };

    let simulated = cli.seed.is_some() || cli.topology.is_some();
    let (samples, audit) = if simulated {
        let topo = cli.topology()?;
        let (rally, truth) = simulate_chain(&topo, sid, cli.rounds, cli.seed.unwrap_or(0), false)?;
        let samples = match role {
            Role::Initiator => rally.alice,
            Role::Responder => rally.bob,
        };
        (samples, truth.audit())
    } else {
        let bind = listen.unwrap_or_else(|| match peer {
            Some(SocketAddr::V6(_)) => "[::]:0".parse().unwrap(),
            _ => "0.0.0.0:0".parse().unwrap(),
        });
        let socket = UdpSocket::bind(bind).map_err(io_err(format!("bind {bind}")))?;
        let cfg = cli.rally_config(sid);
        let samples = match role {
            Role::Initiator => run_rally(&socket, peer, Initiator::new(cfg))?,
            Role::Responder => run_rally(&socket, None, Responder::new(cfg))?,
        };
        (samples, None)
    };

    let mut channel = match (role, listener) {
        (Role::Responder, Some(l)) => StreamChannel::accept(&l, cli.patience())?,
        _ => StreamChannel::connect(plus_one(peer.expect("initiator has a peer"))?, cli.patience())?,
    };
    let cfg = SessionConfig {
        session_id: sid,
        planner,
        audit,
    };
    let SessionOutcome { key, mut report, .. } = run_session(role, &samples, &cfg, &mut channel)?;
    report.elapsed_ns = started.elapsed().as_nanos() as u64;

    write_file(&out, &encode_key(&key, cli.format))?;
    if let Some(path) = &cli.transcript {
        let t = Transcript {
            source: TranscriptSource::Live,
            iterations: report.iterations.clone(),
            ber_ab: None,
            ber_eve: None,
            report: Some(report.clone()),
        };
        write_file(path, t.to_json().as_bytes())?;
    }
    stdout.write_all(report.to_csv().as_bytes()).map_err(io_err("write stdout"))
}

fn run_rally<E: RallyEndpoint>(
    socket: &UdpSocket,
    peer: Option<SocketAddr>,
    mut endpoint: E,
) -> Result<Vec<crate::extraction::RttSample>, CliError> {
    Ok(run_udp_rally(socket, peer, &mut endpoint)?.0)
}

fn simulate(cli: &Cli, stdout: &mut dyn Write) -> Result<(), CliError> {
    let sid = cli.session_id.unwrap_or([0; 16]);
    let mut cfg = SimSessionConfig::new(sid, cli.rounds, cli.seed.unwrap_or(0));
    cfg.planner = cli.planner();
    let result = simulate_session(&cli.topology()?, &cfg)?;
    let transcript = match result.transcript() {
        Some(t) => t,
        None => {
            let err = result.alice.err().expect("no transcript only on failure");
            return Err(err.into());
        }
    };
    if let Some(path) = &cli.transcript {
        write_file(path, transcript.to_json().as_bytes())?;
    }
    write_output(cli.out.as_deref(), &transcript.to_csv()?, stdout)?;
    if !result.keys_agree() {
        if let Err(e) = result.bob {
            return Err(e.into());
        }
    }
    Ok(())
}

fn analyze(cli: &Cli, stdout: &mut dyn Write) -> Result<(), CliError> {
    let path = cli
        .transcript
        .as_ref()
        .ok_or_else(|| CliError::Usage("--transcript is required for analyze".into()))?;
    let csv = Transcript::load(path)?.to_csv()?;
    write_output(cli.out.as_deref(), &csv, stdout)
}

/// Runs one invocation. Key material reaches disk only after both sides
/// have confirmed the digest.
pub fn run(cli: &Cli, stdout: &mut dyn Write) -> Result<(), CliError> {
    match cli.mode {
        Mode::KeygenInitiator => keygen(cli, Role::Initiator, stdout),
        Mode::KeygenResponder => keygen(cli, Role::Responder, stdout),
        Mode::Simulate => simulate(cli, stdout),
        Mode::Analyze => analyze(cli, stdout),
    }
}
