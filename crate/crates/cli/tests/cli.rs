//! End-to-end tests of the `pufauth` binary: file outputs, exit codes, and
//! the PIN-never-persisted guarantee.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_pufauth"))
}

fn tmp_dir(tag: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("pufauth-cli-{tag}-{}", std::process::id()));
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

/// Compact geometry shared by the tests; the statistical behavior they
/// exercise is geometry-independent.
fn small_geometry(cmd: &mut Command) -> &mut Command {
    cmd.args([
        "--n",
        "32",
        "--n-out",
        "512",
        "--n-in",
        "16",
        "--pin-key-len",
        "42",
    ])
}

fn run(cmd: &mut Command) -> Output {
    cmd.output().expect("binary runs")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn extract_pin(out: &Output) -> String {
    let text = stdout(out);
    let line = text
        .lines()
        .find(|l| l.starts_with("PIN: "))
        .expect("PIN line printed");
    line.trim_start_matches("PIN: ").trim().to_string()
}

fn enroll(dir: &Path, user: &str, rows: u32, seed: u64) -> Output {
    let mut cmd = bin();
    cmd.args([
        "enroll",
        "--user",
        user,
        "--out-dir",
        dir.to_str().unwrap(),
        "--rows",
        &rows.to_string(),
        "--seed",
        &seed.to_string(),
    ]);
    small_geometry(&mut cmd);
    run(&mut cmd)
}

fn verify(dir: &Path, user: &str, pin: &str, seed: u64) -> Output {
    let mut cmd = bin();
    cmd.args([
        "verify",
        "--token",
        dir.join(format!("{user}.token")).to_str().unwrap(),
        "--db",
        dir.join(format!("{user}.db")).to_str().unwrap(),
        "--verifier-token",
        dir.join(format!("{user}.verifier-token")).to_str().unwrap(),
        "--helper",
        dir.join(format!("{user}.helper")).to_str().unwrap(),
        "--pin",
        pin,
        "--seed",
        &seed.to_string(),
    ]);
    small_geometry(&mut cmd);
    run(&mut cmd)
}

#[test]
fn enroll_writes_files_and_prints_pin_exactly_once() {
    let dir = tmp_dir("enroll");
    let out = enroll(&dir, "alice", 4, 11);
    assert_eq!(out.status.code(), Some(0), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    let text = stdout(&out);
    assert_eq!(text.matches("PIN: ").count(), 1);
    let pin = extract_pin(&out);
    assert_eq!(pin.len(), 4);

    for ext in ["token", "db", "verifier-token", "helper"] {
        assert!(dir.join(format!("alice.{ext}")).exists(), "missing .{ext}");
    }
    let db_text = std::fs::read_to_string(dir.join("alice.db")).unwrap();
    assert!(db_text.starts_with("PUFAUTH-DB v1 n=32 token_b="));
    assert_eq!(db_text.lines().count(), 5); // header + 4 rows

    // The PIN appears in no written file. Files hold whitespace/comma
    // separated decimal and hex tokens; compare token-wise so a 4-digit
    // PIN cannot hide as a standalone value (hex blobs have different
    // lengths, decimal positions here are < 512).
    for ext in ["token", "db", "verifier-token", "helper"] {
        let content = std::fs::read_to_string(dir.join(format!("alice.{ext}"))).unwrap();
        for token in content.split(|c: char| c.is_whitespace() || c == ',' || c == '\t') {
            assert_ne!(token, pin, "PIN persisted in alice.{ext}");
            assert_ne!(
                token,
                pin.trim_start_matches('0'),
                "PIN persisted in alice.{ext}"
            );
        }
    }
}

#[test]
fn enrollment_is_deterministic_under_a_seed() {
    let dir_a = tmp_dir("det-a");
    let dir_b = tmp_dir("det-b");
    let out_a = enroll(&dir_a, "bob", 3, 42);
    let out_b = enroll(&dir_b, "bob", 3, 42);
    assert_eq!(extract_pin(&out_a), extract_pin(&out_b));
    for ext in ["token", "db", "verifier-token", "helper"] {
        let a = std::fs::read(dir_a.join(format!("bob.{ext}"))).unwrap();
        let b = std::fs::read(dir_b.join(format!("bob.{ext}"))).unwrap();
        assert_eq!(a, b, "file .{ext} differs across identical enrollments");
    }
}

#[test]
fn verify_lifecycle_accept_reject_exhaust() {
    let dir = tmp_dir("lifecycle");
    let out = enroll(&dir, "carol", 2, 7);
    let pin = extract_pin(&out);
    let wrong_pin = format!("{:04}", (pin.parse::<u16>().unwrap() + 1) % 10_000);
    let db_path = dir.join("carol.db");

    // wrong PIN: local abort, database untouched
    let before = std::fs::read(&db_path).unwrap();
    let out = verify(&dir, "carol", &wrong_pin, 1);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(std::fs::read(&db_path).unwrap(), before, "V1 abort must not touch the db");

    // two honest sessions consume the two rows
    for attempt in 0..2u64 {
        let out = verify(&dir, "carol", &pin, 100 + attempt);
        assert_eq!(out.status.code(), Some(0), "attempt {attempt}: {}", stdout(&out));
    }
    let remaining = std::fs::read_to_string(&db_path).unwrap();
    assert_eq!(remaining.lines().count(), 1); // header only

    // exhausted database is its own exit code
    let out = verify(&dir, "carol", &pin, 200);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn verify_rejects_a_strangers_token() {
    let dir = tmp_dir("stranger");
    let out = enroll(&dir, "dave", 2, 5);
    let pin = extract_pin(&out);
    // a second user's token in dave's terminal session
    enroll(&dir, "mallory", 2, 6);
    let mut cmd = bin();
    cmd.args([
        "verify",
        "--token",
        dir.join("mallory.token").to_str().unwrap(),
        "--db",
        dir.join("dave.db").to_str().unwrap(),
        "--verifier-token",
        dir.join("dave.verifier-token").to_str().unwrap(),
        "--helper",
        dir.join("dave.helper").to_str().unwrap(),
        "--pin",
        &pin,
        "--seed",
        "9",
    ]);
    small_geometry(&mut cmd);
    let out = run(&mut cmd);
    // the stranger's token reproduces an unrelated PIN: V1 aborts locally
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn attack_exit_codes_follow_the_envelope() {
    // replay with reuse is deterministic: 100% success, within [1, 1]
    let out = run(bin().args([
        "attack", "replay", "--reuse", "--trials", "30", "--n", "64", "--n-out", "512",
        "--n-in", "16", "--seed", "4",
    ]));
    assert_eq!(out.status.code(), Some(0), "{}", stdout(&out));
    assert!(stdout(&out).contains("verdict         : WITHIN"));

    // deletion blocks replay completely at n=64
    let out = run(bin().args([
        "attack", "replay", "--trials", "30", "--n", "64", "--n-out", "512", "--n-in", "16",
        "--seed", "4",
    ]));
    assert_eq!(out.status.code(), Some(0), "{}", stdout(&out));
    assert!(stdout(&out).contains("successes       : 0"));

    // pin-guess at small trials: expect ~0 successes, inside the band
    let out = run(bin().args([
        "attack", "pin-guess", "--trials", "2000", "--n", "32", "--n-out", "512", "--n-in",
        "16", "--seed", "2",
    ]));
    assert_eq!(out.status.code(), Some(0), "{}", stdout(&out));

    // unknown scenario is a usage error
    let out = run(bin().args(["attack", "nonsense", "--trials", "10"]));
    assert_eq!(out.status.code(), Some(64));
}

#[test]
fn stats_suite_passes_on_sane_geometry_and_fails_under_stress() {
    // full-quality geometry, fast input modes
    let out = run(bin().args([
        "stats", "--n", "128", "--n-out", "4096", "--n-in", "16", "--sigma", "0.02", "--seed",
        "3",
    ]));
    assert_eq!(out.status.code(), Some(0), "{}", stdout(&out));
    let text = stdout(&out);
    assert_eq!(text.matches(" PASS ").count(), 5, "{text}");

    // stress noise breaks stability and nothing else
    let out = run(bin().args([
        "stats", "--n", "128", "--n-out", "4096", "--n-in", "16", "--sigma", "0.5", "--seed",
        "3",
    ]));
    assert_eq!(out.status.code(), Some(1));
    let text = stdout(&out);
    assert!(text.contains("key-stability          FAIL"), "{text}");
    assert_eq!(text.matches(" FAIL ").count(), 1, "{text}");
}

#[test]
fn stats_small_pattern_widens_contrast_band_and_skips_key_checks() {
    let out = run(bin().args([
        "stats", "--n", "8", "--n-out", "64", "--n-in", "16", "--pin-key-len", "42", "--seed",
        "3",
    ]));
    let text = stdout(&out);
    assert_eq!(out.status.code(), Some(0), "{text}");
    assert!(text.contains("speckle-contrast       PASS"), "{text}");
    // pin checks cannot run: 3 * 42 > 64
    assert_eq!(text.matches(" SKIP ").count(), 2, "{text}");
}

#[test]
fn verify_can_record_a_transcript() {
    let dir = tmp_dir("transcript");
    let out = enroll(&dir, "frank", 2, 15);
    let pin = extract_pin(&out);
    let transcript_path = dir.join("session.transcript");
    let mut cmd = bin();
    cmd.args([
        "verify",
        "--token",
        dir.join("frank.token").to_str().unwrap(),
        "--db",
        dir.join("frank.db").to_str().unwrap(),
        "--verifier-token",
        dir.join("frank.verifier-token").to_str().unwrap(),
        "--helper",
        dir.join("frank.helper").to_str().unwrap(),
        "--pin",
        &pin,
        "--transcript",
        transcript_path.to_str().unwrap(),
        "--seed",
        "21",
    ]);
    small_geometry(&mut cmd);
    let out = run(&mut cmd);
    assert_eq!(out.status.code(), Some(0));
    let text = std::fs::read_to_string(&transcript_path).unwrap();
    // auth request, challenge, response, decision: four frames
    assert_eq!(text.lines().count(), 4, "{text}");
    assert!(text.lines().next().unwrap().starts_with("t2v\t01\t"));
    assert!(text.lines().nth(1).unwrap().starts_with("v2t\t02\t"));
    assert!(text.lines().nth(3).unwrap().starts_with("v2t\t04\t"));
}

#[test]
fn enroll_supports_thousand_row_databases() {
    let dir = tmp_dir("bigdb");
    let out = enroll(&dir, "grace", 1000, 23);
    assert_eq!(out.status.code(), Some(0));
    let out = run(bin().args([
        "inspect-db",
        "--db",
        dir.join("grace.db").to_str().unwrap(),
    ]));
    assert!(stdout(&out).contains("rows remaining  : 1000"), "{}", stdout(&out));
}

#[test]
fn inspect_db_summarizes_the_file() {
    let dir = tmp_dir("inspect");
    enroll(&dir, "erin", 5, 8);
    let out = run(bin().args([
        "inspect-db",
        "--db",
        dir.join("erin.db").to_str().unwrap(),
    ]));
    assert_eq!(out.status.code(), Some(0));
    let text = stdout(&out);
    assert!(text.contains("key length n    : 32"));
    assert!(text.contains("rows remaining  : 5"));
}

#[test]
fn malformed_inputs_use_distinct_exit_codes() {
    let dir = tmp_dir("bad-input");
    // bad pin string
    let out = run(bin().args([
        "verify", "--token", "x", "--db", "y", "--verifier-token", "z", "--helper", "h",
        "--pin", "12ab",
    ]));
    assert_eq!(out.status.code(), Some(64));
    // missing file
    let out = run(bin().args([
        "verify",
        "--token",
        dir.join("nope.token").to_str().unwrap(),
        "--db",
        dir.join("nope.db").to_str().unwrap(),
        "--verifier-token",
        dir.join("nope.vt").to_str().unwrap(),
        "--helper",
        dir.join("nope.helper").to_str().unwrap(),
        "--pin",
        "1234",
    ]));
    assert_eq!(out.status.code(), Some(74));
    // corrupt database
    std::fs::write(dir.join("bad.db"), "NOT-A-DB\n").unwrap();
    std::fs::write(dir.join("t.token"), format!("{}\n", "0".repeat(64))).unwrap();
    std::fs::write(dir.join("t.helper"), "0 1 2\n").unwrap();
    let out = run(bin().args([
        "verify",
        "--token",
        dir.join("t.token").to_str().unwrap(),
        "--db",
        dir.join("bad.db").to_str().unwrap(),
        "--verifier-token",
        dir.join("t.token").to_str().unwrap(),
        "--helper",
        dir.join("t.helper").to_str().unwrap(),
        "--pin",
        "1234",
    ]));
    assert_eq!(out.status.code(), Some(65));
}
