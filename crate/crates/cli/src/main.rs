use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use ekert_core::channel::ChannelPreset;
use ekert_core::config::{Mode, RunConfig};
use ekert_core::postproc::{Ciphertext, KeyMaterial, KeyPad, KeyStage};
use ekert_core::runner::{self, RoleReport, RunReport};

/// Entanglement-based QKD simulator: loopback and networked sessions,
/// tag-file analysis, source calibration and one-time-pad use of keys.
#[derive(Parser, Debug)]
#[command(name = "ekert", version, args_conflicts_with_subcommands = true)]
struct Cli {
    #[command(subcommand)]
    command: Option<Command>,
    #[command(flatten)]
    run: RunArgs,
}

#[derive(Args, Debug)]
struct RunArgs {
    /// loopback, alice, bob, analyze or calibrate
    #[arg(long)]
    mode: Option<Mode>,
    /// JSON run configuration layered over the preset
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Address to accept the peer on (alice/bob)
    #[arg(long, conflicts_with = "connect")]
    listen: Option<String>,
    /// Address of a listening peer (alice/bob)
    #[arg(long)]
    connect: Option<String>,
    /// Simulated acquisition time, s
    #[arg(long)]
    duration: Option<f64>,
    /// Simulated seconds per wall-clock second; 0 runs unpaced
    #[arg(long)]
    accel: Option<f64>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// fiber-250m, freespace-270m or ideal
    #[arg(long)]
    preset: Option<ChannelPreset>,
    #[arg(long)]
    session_id: Option<String>,
    /// Also write each party's QTAG stream
    #[arg(long)]
    write_tags: bool,
    /// Stop after sifting
    #[arg(long)]
    no_postprocess: bool,
    /// Alice's tag file (analyze)
    #[arg(long)]
    alice_tags: Option<PathBuf>,
    /// Bob's tag file (analyze)
    #[arg(long)]
    bob_tags: Option<PathBuf>,
    /// Singles rate at the first fiber, cps (calibrate)
    #[arg(long)]
    target_cps: Option<f64>,
    /// Print the effective configuration and exit
    #[arg(long)]
    print_config: bool,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// One-time pad with a final key file
    Otp {
        #[command(subcommand)]
        op: OtpOp,
    },
}

#[derive(Args, Debug)]
struct OtpArgs {
    /// Final-stage key file
    #[arg(long)]
    key: PathBuf,
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    output: PathBuf,
    /// Consumed-range ledger; defaults to `<key>.ledger.json`
    #[arg(long)]
    ledger: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum OtpOp {
    Encrypt(OtpArgs),
    Decrypt(OtpArgs),
}

fn build_config(a: &RunArgs) -> Result<RunConfig, String> {
    let mut cfg = match &a.config {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
            RunConfig::from_json(&text, a.preset).map_err(|e| format!("{}: {e}", path.display()))?
        }
        None => RunConfig::preset(a.preset.unwrap_or(ChannelPreset::Fiber250m)),
    };
    if let Some(m) = a.mode {
        cfg.mode = m;
    }
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if a.listen.is_some() || a.connect.is_some() {
        cfg.listen = a.listen.clone();
        cfg.connect = a.connect.clone();
    }
    if let Some(d) = a.duration {
        cfg.duration_s = d;
    }
    if let Some(x) = a.accel {
        cfg.accel = x;
    }
    if let Some(d) = &a.out_dir {
        cfg.out_dir = d.clone();
    }
    if let Some(s) = &a.session_id {
        cfg.session_id = s.clone();
    }
    cfg.write_tags |= a.write_tags;
    cfg.postprocess &= !a.no_postprocess;
    if a.alice_tags.is_some() {
        cfg.analyze.alice_tags = a.alice_tags.clone();
    }
    if a.bob_tags.is_some() {
        cfg.analyze.bob_tags = a.bob_tags.clone();
    }
    if let Some(t) = a.target_cps {
        cfg.calibrate.target_cps = t;
    }
    Ok(cfg)
}

fn opt(v: Option<f64>, digits: usize) -> String {
    v.map_or_else(|| "n/a".into(), |x| format!("{x:.digits$}"))
}

fn print_role(r: &RoleReport) {
    let o = &r.outcome;
    let duration: f64 = o.metrics.iter().map(|m| m.duration_s).sum();
    let sifted = o.key.bits.len();
    let s = o.metrics.last().and_then(|m| m.cumulative_s);
    println!(
        "{}: packets={} qber={} S={} sifted_bits={} key_rate={:.1} bit/s",
        r.role,
        o.metrics.len(),
        opt(o.qber_estimate, 4),
        opt(s, 3),
        sifted,
        if duration > 0.0 { sifted as f64 / duration } else { 0.0 },
    );
    if let Some(d) = &r.distill {
        println!(
            "{}: reconciled_bits={} disclosed={} corrections={} final_bits={}",
            r.role,
            d.reconciled.bits.len(),
            d.report.total_disclosed(),
            d.report.corrections,
            d.extracted.bits.len()
        );
    }
    if let Some(reason) = o.abort {
        println!("{}: session aborted ({reason})", r.role);
    }
}

fn print_report(r: &RunReport) {
    for role in [&r.alice, &r.bob].into_iter().flatten() {
        print_role(role);
    }
    if let Some(a) = &r.analysis {
        if let Some(g) = &a.g2 {
            println!("g2(0) = {:.4} ± {:.4} (centre {}, side mean {:.1})", g.g2, g.g2_err, g.center, g.side_mean);
        }
        if let Some(off) = a.offset_ps {
            println!("offset = {off:.0} ps, coincidences = {}", a.coincidences);
        }
        println!(
            "qber = {}, S = {}",
            opt(a.qber, 4),
            a.chsh.map_or_else(|| "n/a".into(), |c| format!("{:.3} ± {:.3}", c.s, c.s_err))
        );
    }
    if let Some(c) = &r.calibration {
        println!(
            "pair_prob = {:.4e}, efficiency product = {:.4e}, simulated {:.0} cps over {} s",
            c.pair_prob, c.efficiency_product, c.simulated_cps, c.simulated_s
        );
    }
    for f in &r.files {
        println!("wrote {}", f.display());
    }
}

#[derive(Serialize, Deserialize, Default)]
struct Ledger {
    used: Vec<(usize, usize)>,
}

fn ledger_path(a: &OtpArgs) -> PathBuf {
    a.ledger.clone().unwrap_or_else(|| {
        let mut p = a.key.clone().into_os_string();
        p.push(".ledger.json");
        PathBuf::from(p)
    })
}

fn load_pad(a: &OtpArgs) -> Result<KeyPad, (u8, String)> {
    let key = KeyMaterial::load(&a.key).map_err(|e| (2, format!("{}: {e}", a.key.display())))?;
    if key.stage != KeyStage::Extracted {
        return Err((2, format!("{} holds a {} key; the pad needs a final key", a.key.display(), key.stage.name())));
    }
    let path = ledger_path(a);
    let ledger: Ledger = match fs::read_to_string(&path) {
        Ok(text) => serde_json::from_str(&text).map_err(|e| (2, format!("{}: {e}", path.display())))?,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ledger::default(),
        Err(e) => return Err((1, format!("{}: {e}", path.display()))),
    };
    KeyPad::restore(key.key_bytes(), ledger.used.into_iter().map(|(s, e)| s..e).collect()).map_err(|e| (2, e.to_string()))
}

fn save_ledger(a: &OtpArgs, pad: &KeyPad) -> Result<(), (u8, String)> {
    let ledger = Ledger {
        used: pad.used().iter().map(|r| (r.start, r.end)).collect(),
    };
    let path = ledger_path(a);
    let text = serde_json::to_string_pretty(&ledger).expect("ledger serializes");
    fs::write(&path, text + "\n").map_err(|e| (1, format!("{}: {e}", path.display())))
}

fn read(path: &Path) -> Result<Vec<u8>, (u8, String)> {
    fs::read(path).map_err(|e| (1, format!("{}: {e}", path.display())))
}

fn otp(op: &OtpOp) -> Result<(), (u8, String)> {
    match op {
        OtpOp::Encrypt(a) => {
            let mut pad = load_pad(a)?;
            let c = pad.encrypt(&read(&a.input)?).map_err(|e| (1, e.to_string()))?;
            fs::write(&a.output, c.to_bytes()).map_err(|e| (1, format!("{}: {e}", a.output.display())))?;
            save_ledger(a, &pad)?;
            println!("encrypted {} bytes at key offset {}; {} key bytes left", c.data.len(), c.key_offset, pad.remaining());
        }
        OtpOp::Decrypt(a) => {
            let mut pad = load_pad(a)?;
            let c = Ciphertext::from_bytes(&read(&a.input)?).map_err(|e| (2, e.to_string()))?;
            let plain = pad.decrypt(&c).map_err(|e| (1, e.to_string()))?;
            fs::write(&a.output, plain).map_err(|e| (1, format!("{}: {e}", a.output.display())))?;
            save_ledger(a, &pad)?;
            println!("decrypted {} bytes; {} key bytes left", c.data.len(), pad.remaining());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if let Some(Command::Otp { op }) = &cli.command {
        return match otp(op) {
            Ok(()) => ExitCode::SUCCESS,
            Err((code, msg)) => {
                eprintln!("error: {msg}");
                ExitCode::from(code)
            }
        };
    }
    let cfg = match build_config(&cli.run) {
        Ok(c) => c,
        Err(msg) => {
            eprintln!("error: {msg}");
            return ExitCode::from(2);
        }
    };
    if cli.run.print_config {
        println!("{}", serde_json::to_string_pretty(&cfg).expect("config serializes"));
        return ExitCode::SUCCESS;
    }
    match runner::run(&cfg) {
        Ok(report) => {
            print_report(&report);
            ExitCode::from(report.exit_code() as u8)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
