//! Orchestration of a full run: simulation thread, protocol roles over an
//! in-memory or TCP transport, post-processing and artifact files.
//!
//! Artifacts are named `<session-id>.<role>.<artifact>.<ext>` and contain
//! nothing that depends on wall-clock time, so loopback runs with the same
//! seed reproduce them byte for byte.

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::mpsc::{sync_channel, Receiver, SyncSender};
use std::thread;
use std::time::{Duration, Instant};

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::analyze::{analyze_files, AnalyzeError, AnalyzeReport};
use crate::calibrate::{calibrate, Calibration, CalibrationError};
use crate::config::{ConfigError, Mode, RunConfig};
use crate::detection::{ChannelMap, TagFileError, TagWriter};
use crate::postproc::{distill_alice, distill_bob, DistillError, DistillOutcome, KeyMaterial, KeyStage};
use crate::scheme::Party;
use crate::session::{
    connect, listen, memory_pair, run_session, write_metrics_csv, AbortReason, Packet, SessionError, SessionFailure,
    SessionOutcome, SessionParams, Transport, TransportError,
};
use crate::sim::{World, WorldError};

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error("configuration: {0}")]
    Config(#[from] ConfigError),
    #[error("simulation setup: {0}")]
    World(#[from] WorldError),
    #[error("calibration: {0}")]
    Calibration(#[from] CalibrationError),
    #[error("transport: {0}")]
    Transport(#[from] TransportError),
    #[error("{role} session: {failure}")]
    Session { role: Party, failure: SessionFailure },
    #[error("{role} post-processing: {error}")]
    Distill { role: Party, error: DistillError },
    #[error("analysis: {0}")]
    Analyze(#[from] AnalyzeError),
    #[error("writing tags: {0}")]
    Tags(#[from] TagFileError),
    #[error("i/o: {0}")]
    Io(#[from] io::Error),
    #[error("{0}")]
    Internal(String),
}

impl RunError {
    /// 2 for configuration problems, 3 for classical-channel failures, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Config(_) | RunError::World(_) => 2,
            RunError::Calibration(CalibrationError::Unreachable { .. } | CalibrationError::Target(_)) => 2,
            RunError::Transport(_) => 3,
            RunError::Session { failure, .. } => match failure.error {
                SessionError::Transport(_) | SessionError::Handshake(_) | SessionError::Protocol(_) => 3,
            },
            RunError::Distill {
                error: DistillError::Transport(_) | DistillError::Protocol(_),
                ..
            } => 3,
            _ => 1,
        }
    }
}

#[derive(Debug)]
pub struct RoleReport {
    pub role: Party,
    pub outcome: SessionOutcome,
    pub distill: Option<DistillOutcome>,
    pub files: Vec<PathBuf>,
}

#[derive(Debug, Default)]
pub struct RunReport {
    pub alice: Option<RoleReport>,
    pub bob: Option<RoleReport>,
    pub analysis: Option<AnalyzeReport>,
    pub calibration: Option<Calibration>,
    pub files: Vec<PathBuf>,
}

impl RunReport {
    pub fn abort(&self) -> Option<AbortReason> {
        [&self.alice, &self.bob].into_iter().flatten().find_map(|r| r.outcome.abort)
    }

    /// 4 after a security abort, else 0.
    pub fn exit_code(&self) -> i32 {
        if self.abort().is_some() {
            4
        } else {
            0
        }
    }
}

/// Independent seed for one consumer of the run seed.
pub fn derive_seed(seed: u64, purpose: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(purpose);
    rng.next_u64()
}

const SEED_SAMPLING: u64 = 1;
const SEED_EXTRACTOR: u64 = 2;
const SEED_PERMUTATION: u64 = 3;

pub fn artifact_path(cfg: &RunConfig, role: &str, artifact: &str, ext: &str) -> PathBuf {
    cfg.out_dir.join(format!("{}.{role}.{artifact}.{ext}", cfg.session_id))
}

fn role_name(role: Party) -> &'static str {
    match role {
        Party::Alice => "alice",
        Party::Bob => "bob",
    }
}

pub fn session_params(cfg: &RunConfig) -> SessionParams {
    SessionParams {
        session_id: cfg.session_id.clone(),
        scheme: cfg.scheme.clone(),
        config: cfg.session.clone(),
        map: ChannelMap::standard(),
        seed: derive_seed(cfg.seed, SEED_SAMPLING),
    }
}

pub fn run(cfg: &RunConfig) -> Result<RunReport, RunError> {
    cfg.validate()?;
    std::fs::create_dir_all(&cfg.out_dir)?;
    match cfg.mode {
        Mode::Loopback => run_loopback(cfg),
        Mode::Alice => run_networked(cfg, Party::Alice),
        Mode::Bob => run_networked(cfg, Party::Bob),
        Mode::Analyze => run_analyze(cfg),
        Mode::Calibrate => run_calibrate(cfg),
    }
}

struct Feed {
    party: Party,
    tx: SyncSender<Packet>,
    tags: Option<(TagWriter<File>, PathBuf)>,
}

/// The world thread yields the tag files it wrote.
type WorldThread = thread::JoinHandle<Result<Vec<PathBuf>, RunError>>;

/// Run the world on its own thread, handing each party's packets to `parties`.
fn spawn_world(cfg: &RunConfig, parties: &[Party]) -> Result<(WorldThread, Vec<Receiver<Packet>>), RunError> {
    let mut world = World::new(cfg.world(), cfg.seed)?;
    let map = ChannelMap::standard();
    let mut feeds = Vec::new();
    let mut receivers = Vec::new();
    for &party in parties {
        let (tx, rx) = sync_channel(2);
        let tags = if cfg.write_tags {
            let path = artifact_path(cfg, role_name(party), "tags", "qtag");
            Some((TagWriter::new(File::create(&path)?, map.channel_count())?, path))
        } else {
            None
        };
        feeds.push(Feed { party, tx, tags });
        receivers.push(rx);
    }
    let pace = (cfg.accel > 0.0).then(|| Duration::from_secs_f64(cfg.session.packet_duration_s / cfg.accel));
    let handle = thread::spawn(move || {
        let start = Instant::now();
        let mut k = 0u32;
        while let Some((a, b)) = world.next_packets() {
            if let Some(p) = pace {
                k += 1;
                if let Some(wait) = (start + p * k).checked_duration_since(Instant::now()) {
                    thread::sleep(wait);
                }
            }
            let mut open = false;
            for feed in &mut feeds {
                let packet = match feed.party {
                    Party::Alice => a.clone(),
                    Party::Bob => b.clone(),
                };
                if let Some((w, _)) = &mut feed.tags {
                    w.extend(&packet.tags)?;
                }
                open |= feed.tx.send(packet).is_ok();
            }
            if !open {
                break;
            }
        }
        let mut files = Vec::new();
        for feed in feeds {
            if let Some((w, path)) = feed.tags {
                w.finish()?;
                files.push(path);
            }
        }
        Ok(files)
    });
    Ok((handle, receivers))
}

fn join_world(h: thread::JoinHandle<Result<Vec<PathBuf>, RunError>>) -> Result<Vec<PathBuf>, RunError> {
    h.join().map_err(|_| RunError::Internal("simulation thread panicked".into()))?
}

fn run_role<T: Transport>(cfg: &RunConfig, role: Party, packets: Receiver<Packet>, mut t: T) -> Result<RoleReport, RunError> {
    let params = session_params(cfg);
    let outcome = match run_session(role, &params, packets, &mut t) {
        Ok(o) => o,
        Err(failure) => {
            // keep what was measured before the failure
            write_metrics(cfg, role, &failure.partial)?;
            return Err(RunError::Session { role, failure });
        }
    };
    let distill = if cfg.postprocess && outcome.abort.is_none() && !outcome.key.bits.is_empty() {
        let key = outcome.key.bits.clone();
        let result = match role {
            Party::Alice => distill_alice(key, outcome.qber_estimate, derive_seed(cfg.seed, SEED_EXTRACTOR), &cfg.distill, &mut t),
            Party::Bob => distill_bob(key, outcome.qber_estimate, derive_seed(cfg.seed, SEED_PERMUTATION), &cfg.distill, &mut t),
        };
        Some(result.map_err(|error| RunError::Distill { role, error })?)
    } else {
        None
    };
    let files = write_role_artifacts(cfg, role, &outcome, distill.as_ref())?;
    Ok(RoleReport {
        role,
        outcome,
        distill,
        files,
    })
}

fn run_loopback(cfg: &RunConfig) -> Result<RunReport, RunError> {
    let (world, mut rx) = spawn_world(cfg, &[Party::Alice, Party::Bob])?;
    let (rx_b, rx_a) = (rx.pop().expect("two feeds"), rx.pop().expect("two feeds"));
    let (ta, tb) = memory_pair();
    let (alice, bob) = thread::scope(|s| {
        let alice = s.spawn(|| run_role(cfg, Party::Alice, rx_a, ta));
        let bob = run_role(cfg, Party::Bob, rx_b, tb);
        (alice.join(), bob)
    });
    let alice = alice.map_err(|_| RunError::Internal("alice thread panicked".into()))?;
    let tag_files = join_world(world)?;
    // a transport error on one side is usually the echo of a real failure on the other
    let (alice, bob) = match (alice, bob) {
        (Ok(a), Ok(b)) => (a, b),
        (Err(e), Ok(_)) | (Ok(_), Err(e)) => return Err(e),
        (Err(ea), Err(eb)) => return Err(if ea.exit_code() == 3 { eb } else { ea }),
    };
    let mut files = tag_files;
    files.extend(alice.files.iter().cloned());
    files.extend(bob.files.iter().cloned());
    Ok(RunReport {
        alice: Some(alice),
        bob: Some(bob),
        files,
        ..RunReport::default()
    })
}

fn run_networked(cfg: &RunConfig, role: Party) -> Result<RunReport, RunError> {
    let transport = match (&cfg.listen, &cfg.connect) {
        (Some(addr), _) => listen(addr.as_str())?,
        (None, Some(addr)) => connect(addr.as_str(), Duration::from_secs_f64(cfg.connect_timeout_s))?,
        (None, None) => return Err(ConfigError::Invalid("no peer address".into()).into()),
    };
    let (world, mut rx) = spawn_world(cfg, &[role])?;
    let result = run_role(cfg, role, rx.pop().expect("one feed"), transport);
    let tag_files = join_world(world)?;
    let report = result?;
    let mut files = tag_files;
    files.extend(report.files.iter().cloned());
    let mut out = RunReport {
        files,
        ..RunReport::default()
    };
    match role {
        Party::Alice => out.alice = Some(report),
        Party::Bob => out.bob = Some(report),
    }
    Ok(out)
}

fn run_analyze(cfg: &RunConfig) -> Result<RunReport, RunError> {
    let input = &cfg.analyze;
    let a = input.alice_tags.as_deref().ok_or_else(|| ConfigError::Invalid("analyze.alice_tags is required".into()))?;
    let report = analyze_files(a, input.bob_tags.as_deref(), &ChannelMap::standard(), &input.config)?;
    let json = artifact_path(cfg, "analysis", "report", "json");
    write_json(&json, &report)?;
    let mut files = vec![json];
    if let Some(h) = &report.histogram {
        let path = artifact_path(cfg, "analysis", "histogram", "csv");
        let mut w = BufWriter::new(File::create(&path)?);
        writeln!(w, "delay_ps,counts")?;
        for (i, c) in h.counts.iter().enumerate() {
            writeln!(w, "{},{c}", h.bin_center(i))?;
        }
        w.flush()?;
        files.push(path);
    }
    Ok(RunReport {
        analysis: Some(report),
        files,
        ..RunReport::default()
    })
}

fn run_calibrate(cfg: &RunConfig) -> Result<RunReport, RunError> {
    let c = &cfg.calibrate;
    let cal = calibrate(c.target_cps, &cfg.emitter, c.max_pair_prob, c.verify_s, cfg.seed)?;
    let path = artifact_path(cfg, "source", "calibration", "json");
    write_json(&path, &cal)?;
    Ok(RunReport {
        calibration: Some(cal),
        files: vec![path],
        ..RunReport::default()
    })
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), RunError> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value).map_err(io::Error::from)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

fn write_metrics(cfg: &RunConfig, role: Party, outcome: &SessionOutcome) -> Result<Vec<PathBuf>, RunError> {
    let name = role_name(role);
    let csv = artifact_path(cfg, name, "metrics", "csv");
    let mut w = BufWriter::new(File::create(&csv)?);
    write_metrics_csv(&outcome.metrics, &mut w)?;
    w.flush()?;
    let json = artifact_path(cfg, name, "metrics", "json");
    write_json(&json, &outcome.metrics)?;
    Ok(vec![csv, json])
}

#[derive(Serialize)]
struct Summary<'a> {
    role: &'a str,
    packets: usize,
    abort: Option<AbortReason>,
    qber_estimate: Option<f64>,
    sifted_bits: usize,
    reconciled_bits: Option<usize>,
    final_bits: Option<usize>,
    leaked_bits: Option<u64>,
    corrections: Option<u64>,
    min_entropy: Option<f64>,
}

fn write_role_artifacts(cfg: &RunConfig, role: Party, outcome: &SessionOutcome, distill: Option<&DistillOutcome>) -> Result<Vec<PathBuf>, RunError> {
    let name = role_name(role);
    let mut files = write_metrics(cfg, role, outcome)?;
    if outcome.abort.is_none() {
        let sifted = KeyMaterial::new(KeyStage::Sifted, outcome.key.bits.clone());
        let mut keys = vec![&sifted];
        if let Some(d) = distill {
            keys.push(&d.reconciled);
            keys.push(&d.extracted);
        }
        for k in keys {
            let path = artifact_path(cfg, name, k.stage.name(), "key");
            k.save(&path)?;
            files.push(path);
        }
    }
    let summary = Summary {
        role: name,
        packets: outcome.metrics.len(),
        abort: outcome.abort,
        qber_estimate: outcome.qber_estimate,
        sifted_bits: outcome.key.bits.len(),
        reconciled_bits: distill.map(|d| d.reconciled.bits.len()),
        final_bits: distill.map(|d| d.extracted.bits.len()),
        leaked_bits: distill.map(|d| d.report.total_disclosed()),
        corrections: distill.map(|d| d.report.corrections),
        min_entropy: distill.map(|d| d.min_entropy),
    };
    let path = artifact_path(cfg, name, "summary", "json");
    write_json(&path, &summary)?;
    files.push(path);
    Ok(files)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::ChannelPreset;

    fn ideal(dir: &Path, packets: u64) -> RunConfig {
        let mut c = RunConfig::preset(ChannelPreset::Ideal);
        c.session.packet_duration_s = 0.1;
        c.duration_s = packets as f64 * 0.1;
        c.out_dir = dir.to_path_buf();
        c
    }

    #[test]
    fn ideal_loopback_gives_identical_keys() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = ideal(dir.path(), 10);
        let r = run(&cfg).unwrap();
        assert_eq!(r.exit_code(), 0);
        let (a, b) = (r.alice.unwrap(), r.bob.unwrap());
        assert_eq!(a.outcome.metrics.len(), 10);
        assert!(a.outcome.metrics.iter().all(|m| m.qber == Some(0.0) || m.qber.is_none()));
        assert_eq!(a.outcome.qber_estimate, Some(0.0));
        assert!(a.outcome.key.bits.len() > 1000);
        assert_eq!(a.outcome.key.bits, b.outcome.key.bits);
        let (da, db) = (a.distill.unwrap(), b.distill.unwrap());
        assert_eq!(da.report.corrections, 0);
        assert_eq!(da.extracted.bits, db.extracted.bits);
        assert!(!da.extracted.bits.is_empty());
        for stage in ["sifted", "reconciled", "final"] {
            let ka = std::fs::read(artifact_path(&cfg, "alice", stage, "key")).unwrap();
            let kb = std::fs::read(artifact_path(&cfg, "bob", stage, "key")).unwrap();
            assert_eq!(ka, kb, "{stage}");
        }
        let csv = std::fs::read_to_string(artifact_path(&cfg, "alice", "metrics", "csv")).unwrap();
        assert_eq!(csv.lines().count(), 11);
        assert!(csv.starts_with("t,qber,S,S_err,raw_rate,key_rate\n"));
    }

    #[test]
    fn tags_written_and_analyzable() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = ideal(dir.path(), 3);
        cfg.write_tags = true;
        cfg.postprocess = false;
        run(&cfg).unwrap();
        let mut an = cfg.clone();
        an.mode = Mode::Analyze;
        an.analyze.alice_tags = Some(artifact_path(&cfg, "alice", "tags", "qtag"));
        an.analyze.bob_tags = Some(artifact_path(&cfg, "bob", "tags", "qtag"));
        let r = run(&an).unwrap();
        let rep = r.analysis.unwrap();
        assert_eq!(rep.qber, Some(0.0));
        assert!(rep.chsh.unwrap().s > 2.7);
        assert!(artifact_path(&cfg, "analysis", "histogram", "csv").exists());
    }

    #[test]
    fn networked_roles_over_tcp() {
        let dir = tempfile::tempdir().unwrap();
        let port = std::net::TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
        let mut bob = ideal(dir.path(), 3);
        bob.mode = Mode::Bob;
        bob.listen = Some(format!("127.0.0.1:{port}"));
        let mut alice = bob.clone();
        alice.mode = Mode::Alice;
        alice.listen = None;
        alice.connect = bob.listen.clone();
        let h = thread::spawn(move || run(&bob));
        let ra = run(&alice).unwrap();
        let rb = h.join().unwrap().unwrap();
        assert_eq!(
            ra.alice.unwrap().distill.unwrap().extracted.bits,
            rb.bob.unwrap().distill.unwrap().extracted.bits
        );
    }

    #[test]
    fn mismatched_session_id_is_transport_class() {
        let dir = tempfile::tempdir().unwrap();
        let port = std::net::TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
        let mut bob = ideal(dir.path(), 1);
        bob.mode = Mode::Bob;
        bob.listen = Some(format!("127.0.0.1:{port}"));
        let mut alice = bob.clone();
        alice.mode = Mode::Alice;
        alice.session_id = "other".into();
        alice.listen = None;
        alice.connect = bob.listen.clone();
        let h = thread::spawn(move || run(&bob));
        let ea = run(&alice).unwrap_err();
        let eb = h.join().unwrap().unwrap_err();
        assert_eq!(ea.exit_code(), 3, "{ea}");
        assert_eq!(eb.exit_code(), 3, "{eb}");
    }

    #[test]
    fn unreachable_peer_and_bad_config_codes() {
        let dir = tempfile::tempdir().unwrap();
        let mut c = ideal(dir.path(), 1);
        c.mode = Mode::Alice;
        c.connect = Some("127.0.0.1:1".into());
        c.connect_timeout_s = 0.2;
        assert_eq!(run(&c).unwrap_err().exit_code(), 3);
        c.connect = None;
        assert_eq!(run(&c).unwrap_err().exit_code(), 2);
    }

    #[test]
    fn calibrate_mode_writes_fit() {
        let dir = tempfile::tempdir().unwrap();
        let mut c = ideal(dir.path(), 1);
        c.mode = Mode::Calibrate;
        c.calibrate.verify_s = 0.05;
        let r = run(&c).unwrap();
        assert!((r.calibration.unwrap().efficiency_product - 1.94e-3).abs() < 1e-5);
        c.calibrate.target_cps = 1e9;
        assert_eq!(run(&c).unwrap_err().exit_code(), 2);
    }
}
