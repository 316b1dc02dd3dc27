use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn ekert(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ekert")).args(args).output().expect("spawn ekert")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn loopback(dir: &Path, seed: &str) -> Output {
    let out = dir.to_str().unwrap();
    ekert(&["--preset", "ideal", "--duration", "4", "--seed", seed, "--out-dir", out])
}

#[test]
fn loopback_then_otp_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let o = loopback(dir.path(), "5");
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(stdout.contains("alice: packets="), "{stdout}");
    assert!(stdout.contains("final_bits="), "{stdout}");

    let p = |name: &str| dir.path().join(name);
    let alice_key = p("ekert.alice.final.key");
    let bob_key = p("ekert.bob.final.key");
    assert_eq!(fs::read(&alice_key).unwrap(), fs::read(&bob_key).unwrap());

    let message: Vec<u8> = (0..64u8).collect();
    fs::write(p("msg.bin"), &message).unwrap();
    let s = |x: &Path| x.to_str().unwrap().to_owned();
    let enc = ekert(&["otp", "encrypt", "--key", &s(&alice_key), "--input", &s(&p("msg.bin")), "--output", &s(&p("msg.otp"))]);
    assert_eq!(code(&enc), 0, "{}", String::from_utf8_lossy(&enc.stderr));
    assert!(p("ekert.alice.final.key.ledger.json").exists());
    assert_ne!(fs::read(p("msg.otp")).unwrap()[..], message[..]);

    let dec_args = ["otp", "decrypt", "--key", &s(&bob_key), "--input", &s(&p("msg.otp")), "--output", &s(&p("back.bin"))];
    let dec = ekert(&dec_args);
    assert_eq!(code(&dec), 0, "{}", String::from_utf8_lossy(&dec.stderr));
    assert_eq!(fs::read(p("back.bin")).unwrap(), message);

    // the ledger now covers that range
    let again = ekert(&dec_args);
    assert_eq!(code(&again), 1);
    assert!(String::from_utf8_lossy(&again.stderr).contains("already used"), "{}", String::from_utf8_lossy(&again.stderr));
}

#[test]
fn otp_rejects_sifted_key_and_oversized_message() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&loopback(dir.path(), "6")), 0);
    let p = |name: &str| dir.path().join(name).to_str().unwrap().to_owned();
    let sifted = ekert(&["otp", "encrypt", "--key", &p("ekert.alice.sifted.key"), "--input", &p("ekert.alice.summary.json"), "--output", &p("x")]);
    assert_eq!(code(&sifted), 2);

    let key_len = fs::metadata(p("ekert.alice.final.key")).unwrap().len() as usize;
    fs::write(p("big.bin"), vec![7u8; key_len + 1]).unwrap();
    let big = ekert(&["otp", "encrypt", "--key", &p("ekert.alice.final.key"), "--input", &p("big.bin"), "--output", &p("big.otp")]);
    assert_eq!(code(&big), 1);
    assert!(!Path::new(&p("big.otp")).exists());
}

#[test]
fn same_seed_same_artifacts() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    assert_eq!(code(&loopback(a.path(), "11")), 0);
    assert_eq!(code(&loopback(b.path(), "11")), 0);
    for name in ["ekert.alice.final.key", "ekert.bob.final.key", "ekert.alice.metrics.csv", "ekert.bob.metrics.json"] {
        assert_eq!(fs::read(a.path().join(name)).unwrap(), fs::read(b.path().join(name)).unwrap(), "{name}");
    }
}

#[test]
fn config_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.json");
    fs::write(&cfg, r#"{"duration_s": 1.0, "no_such_key": 3}"#).unwrap();
    let o = ekert(&["--config", cfg.to_str().unwrap()]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("no_such_key"));

    assert_eq!(code(&ekert(&["--mode", "teleport"])), 2);
    assert_eq!(code(&ekert(&["--mode", "alice"])), 2, "networked role without an address");
    assert_eq!(code(&ekert(&["--preset", "ideal", "--duration=-1"])), 2);
}

#[test]
fn config_file_layers_over_preset() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.json");
    fs::write(&cfg, r#"{"session_id": "layered", "channel": {"length_m": 500.0}}"#).unwrap();
    let o = ekert(&["--config", cfg.to_str().unwrap(), "--preset", "fiber-250m", "--seed", "9", "--print-config"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["session_id"], "layered");
    assert_eq!(v["seed"], 9);
    assert_eq!(v["channel"]["length_m"], 500.0);
    assert_eq!(v["emitter"]["g2_x"], 0.0034);
}

#[test]
fn unreachable_peer_exits_3() {
    let o = ekert(&["--mode", "bob", "--preset", "ideal", "--connect", "127.0.0.1:1", "--duration", "1.2"]);
    assert_eq!(code(&o), 3, "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn calibrate_reports_pair_probability() {
    let dir = tempfile::tempdir().unwrap();
    let o = ekert(&["--mode", "calibrate", "--target-cps", "620000", "--out-dir", dir.path().to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let c: serde_json::Value = serde_json::from_slice(&fs::read(dir.path().join("ekert.source.calibration.json")).unwrap()).unwrap();
    assert!((c["efficiency_product"].as_f64().unwrap() - 1.94e-3).abs() < 1e-5, "{c}");
    let o = ekert(&["--mode", "calibrate", "--target-cps", "1e12", "--out-dir", dir.path().to_str().unwrap()]);
    assert_ne!(code(&o), 0);
    assert!(String::from_utf8_lossy(&o.stderr).contains("rep_rate_hz"));
}
