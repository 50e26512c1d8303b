use std::path::Path;
use std::process::{Command, Output};

use rttkey::sim::{simulate_bsc_reconciliation, ChainTopology, DelayModel};
use rttkey::stats::pair_iteration_ber;

const SID: &str = "000102030405060708090a0b0c0d0e0f";

fn rttkey() -> Command {
    Command::new(env!("CARGO_BIN_EXE_rttkey"))
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// A port whose successor is free too: UDP on the port, frames on the next.
fn free_port_pair() -> u16 {
    loop {
        let probe = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
        let port = probe.local_addr().unwrap().port();
        drop(probe);
        if port < u16::MAX && std::net::TcpListener::bind(("127.0.0.1", port + 1)).is_ok() {
            return port;
        }
    }
}

/// Runs responder and initiator as two processes; returns (responder, initiator).
fn keygen_pair(dir: &Path, extra: &[&str]) -> (Output, Output) {
    let addr = format!("127.0.0.1:{}", free_port_pair());
    let run = |mode: &str, flag: &str, key: &str| {
        rttkey()
            .args(["--mode", mode, flag, &addr, "--session-id", SID, "--format", "hex"])
            .args(["--out", dir.join(key).to_str().unwrap()])
            .args(extra)
            .output()
            .unwrap()
    };
    std::thread::scope(|s| {
        let resp = s.spawn(|| run("keygen-responder", "--listen", "bob.key"));
        let init = run("keygen-initiator", "--peer", "alice.key");
        (resp.join().unwrap(), init)
    })
}

fn report_field(o: &Output, field: &str) -> String {
    let out = String::from_utf8_lossy(&o.stdout);
    out.lines()
        .find_map(|l| l.strip_prefix(&format!("{field},")).map(str::to_owned))
        .unwrap_or_else(|| panic!("no {field} in report:\n{out}"))
}

#[test]
fn simulated_chain_keygen_agrees() {
    let dir = tempfile::tempdir().unwrap();
    let (resp, init) = keygen_pair(dir.path(), &["--seed", "7"]);
    assert!(resp.status.success(), "{}", stderr(&resp));
    assert!(init.status.success(), "{}", stderr(&init));
    let a = std::fs::read_to_string(dir.path().join("alice.key")).unwrap();
    let b = std::fs::read_to_string(dir.path().join("bob.key")).unwrap();
    assert_eq!(a, b);
    assert!(a.ends_with('\n') && a.trim().chars().all(|c| c.is_ascii_hexdigit() && !c.is_ascii_uppercase()));
    let len: usize = report_field(&init, "key_length").parse().unwrap();
    assert!(len > 0);
    assert_eq!(report_field(&init, "key_digest"), report_field(&resp, "key_digest"));
    assert_eq!(report_field(&init, "role"), "initiator");
    assert_eq!(report_field(&resp, "role"), "responder");
}

#[test]
fn live_loopback_keygen_agrees() {
    let dir = tempfile::tempdir().unwrap();
    let (resp, init) = keygen_pair(dir.path(), &["--rounds", "2000", "--eve-ber-floor", "0.2"]);
    assert!(resp.status.success(), "{}", stderr(&resp));
    assert!(init.status.success(), "{}", stderr(&init));
    let a = std::fs::read(dir.path().join("alice.key")).unwrap();
    let b = std::fs::read(dir.path().join("bob.key")).unwrap();
    assert_eq!(a, b);
    assert_eq!(report_field(&init, "rounds"), "2000");
}

#[test]
fn absent_responder_is_channel_loss() {
    let dir = tempfile::tempdir().unwrap();
    let key = dir.path().join("k");
    let port = free_port_pair();
    let o = rttkey()
        .args(["--mode", "keygen-initiator", "--peer", &format!("127.0.0.1:{port}"), "--session-id", SID])
        .args(["--timeout-ms", "50", "--rounds", "100", "--out", key.to_str().unwrap()])
        .output()
        .unwrap();
    assert!(!o.status.success());
    assert!(stderr(&o).contains("channel-loss"), "{}", stderr(&o));
    assert!(!key.exists());
}

#[test]
fn impossible_topology_is_refused() {
    let dir = tempfile::tempdir().unwrap();
    let topo = ChainTopology {
        eve_position: 0,
        eve_jitter: DelayModel::Constant { value: 0.0 },
        ..ChainTopology::default()
    };
    let path = dir.path().join("chain.txt");
    std::fs::write(&path, topo.to_text()).unwrap();
    let (resp, init) = keygen_pair(dir.path(), &["--topology", path.to_str().unwrap()]);
    for o in [&resp, &init] {
        assert!(!o.status.success());
        assert!(stderr(o).contains("secrecy-impossible"), "{}", stderr(o));
    }
    assert!(!dir.path().join("alice.key").exists());
    assert!(!dir.path().join("bob.key").exists());
}

#[test]
fn usage_errors() {
    let o = rttkey().args(["--mode", "keygen-initiator", "--session-id", SID]).output().unwrap();
    assert!(!o.status.success());
    assert!(stderr(&o).contains("usage"), "{}", stderr(&o));
    let o = rttkey().args(["--mode", "analyze"]).output().unwrap();
    assert!(stderr(&o).contains("--transcript"), "{}", stderr(&o));
    let o = rttkey().args(["--mode", "simulate", "--rounds", "99"]).output().unwrap();
    assert!(!o.status.success());
}

#[test]
fn simulate_then_analyze() {
    let dir = tempfile::tempdir().unwrap();
    let transcript = dir.path().join("t.json");
    let sim = rttkey()
        .args(["--mode", "simulate", "--seed", "3", "--session-id", SID])
        .args(["--transcript", transcript.to_str().unwrap()])
        .output()
        .unwrap();
    assert!(sim.status.success(), "{}", stderr(&sim));
    let json: serde_json::Value = serde_json::from_slice(&std::fs::read(&transcript).unwrap()).unwrap();
    let iterations = json["iterations"].as_array().unwrap().len();
    assert!(iterations >= 4);

    let csv_path = dir.path().join("fig.csv");
    let an = rttkey()
        .args(["--mode", "analyze", "--transcript", transcript.to_str().unwrap()])
        .args(["--out", csv_path.to_str().unwrap()])
        .output()
        .unwrap();
    assert!(an.status.success(), "{}", stderr(&an));
    let csv = std::fs::read_to_string(&csv_path).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("iteration,ber_ab,ber_eve"));
    let rows: Vec<Vec<f64>> = lines
        .map(|l| l.split(',').map(|f| f.parse().unwrap()).collect())
        .collect();
    assert_eq!(rows.len(), iterations + 1);
    assert!((rows[0][1] - 1.0 / 3.0).abs() < 0.02);
    assert_eq!(rows.last().unwrap()[1], 0.0);
    assert!(rows.last().unwrap()[2] >= 0.01);
    // simulate mode prints the same table
    assert_eq!(String::from_utf8_lossy(&sim.stdout), csv);
}

#[test]
fn analyze_rejects_empty_transcript() {
    let dir = tempfile::tempdir().unwrap();
    let transcript = dir.path().join("empty.json");
    std::fs::write(&transcript, r#"{"source":"live","iterations":[]}"#).unwrap();
    let out = dir.path().join("out.csv");
    let o = rttkey()
        .args(["--mode", "analyze", "--transcript", transcript.to_str().unwrap()])
        .args(["--out", out.to_str().unwrap()])
        .output()
        .unwrap();
    assert!(!o.status.success());
    assert!(stderr(&o).contains("no iterations"), "{}", stderr(&o));
    assert!(!out.exists());
}

#[test]
fn bsc_analysis_tracks_pair_recursion() {
    let n = 200_000;
    let t = simulate_bsc_reconciliation(n, 1.0 / 3.0, 4, 11).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bsc.json");
    std::fs::write(&path, t.to_json()).unwrap();
    let o = rttkey()
        .args(["--mode", "analyze", "--transcript", path.to_str().unwrap()])
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = String::from_utf8(o.stdout).unwrap();
    let mut expected = 1.0 / 3.0;
    let mut bits = n as f64;
    for (j, line) in csv.lines().skip(1).enumerate() {
        let ber: f64 = line.split(',').nth(1).unwrap().parse().unwrap();
        let sigma = (expected * (1.0 - expected) / bits).sqrt();
        assert!((ber - expected).abs() <= 3.0 * sigma, "row {j}: {ber} vs {expected}");
        // kept fraction of pairs is the agreement rate
        bits *= (1.0 - 2.0 * expected * (1.0 - expected)) / 2.0;
        expected = pair_iteration_ber(expected).unwrap();
    }
    assert_eq!(csv.lines().count(), 6);
}
