//! End-to-end runs of the `osvs` binary in scratch workspaces.

use std::io::{BufRead, BufReader};
use std::path::Path;
use std::process::{Command, Output, Stdio};
use std::{fs, thread};

use osvs_cli::workspace::{Workspace, MANIFEST};
use osvs_core::protocol::{HandCondition, PlanConfig, SessionPlan, TimingConfig};
use osvs_core::runtime::wire::{encode, WireClient};
use osvs_core::runtime::{check_conformance, ClientMessage, Event, EventLog, ServerMessage};
use osvs_core::simulate::CohortSpec;

fn osvs(ws: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_osvs"))
        .args(args)
        .env("OSVS_WORKSPACE", ws)
        .output()
        .expect("binary runs")
}

#[track_caller]
fn ok(ws: &Path, args: &[&str]) -> String {
    let out = osvs(ws, args);
    assert!(
        out.status.success(),
        "osvs {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

/// Exit code and the single stderr line of a failing run.
#[track_caller]
fn fails(ws: &Path, args: &[&str]) -> (i32, String) {
    let out = osvs(ws, args);
    assert!(!out.status.success(), "osvs {args:?} unexpectedly succeeded");
    let err = String::from_utf8(out.stderr).unwrap();
    let lines: Vec<&str> = err.lines().filter(|l| !l.starts_with("note:")).collect();
    assert_eq!(lines.len(), 1, "expected one error line, got {err:?}");
    assert!(lines[0].starts_with("error: "), "{err}");
    (out.status.code().unwrap(), lines[0].to_string())
}

fn small_cohort(dir: &Path, n: usize) -> String {
    let spec = CohortSpec {
        n_young: n,
        n_elderly: n,
        ..CohortSpec::default()
    };
    let path = dir.join("small.toml");
    fs::write(&path, spec.to_text()).unwrap();
    path.to_string_lossy().into_owned()
}

fn snapshot(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(dir).unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn plan_is_reproducible() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    ok(a.path(), &["plan", "--seed", "7"]);
    let first = fs::read(a.path().join("plans/plan.toml")).unwrap();
    ok(a.path(), &["plan", "--seed", "7"]);
    ok(b.path(), &["plan", "--seed", "7"]);
    assert_eq!(fs::read(a.path().join("plans/plan.toml")).unwrap(), first);
    assert_eq!(snapshot(a.path()), snapshot(b.path()));
    let plan = SessionPlan::from_text(std::str::from_utf8(&first).unwrap()).unwrap();
    assert_eq!(plan.seed, 7);
}

#[test]
fn default_cohort_report_has_tp_row_and_provenance() {
    let dir = tempfile::tempdir().unwrap();
    let ws = dir.path();
    for stage in [&["simulate", "--cohort", "default"][..], &["score"], &["stats"], &["report"]] {
        ok(ws, stage);
    }
    let summary = fs::read_to_string(ws.join("reports/summary.txt")).unwrap();
    let tp = summary.lines().find(|l| l.starts_with("TP young: ")).unwrap();
    assert!(tp.starts_with("TP young: 96, "), "{tp}");
    for name in ["table2", "table3", "table4", "table5", "table6", "table7"] {
        assert!(ws.join(format!("reports/{name}.txt")).is_file());
        assert!(ws.join(format!("reports/{name}.csv")).is_file());
    }

    let w = Workspace::new(ws);
    assert!(w.verify().unwrap().is_empty());
    let manifest = w.manifest().unwrap();
    let trace = manifest.trace("reports/table3.csv");
    let logs = trace.iter().filter(|p| p.starts_with("logs/")).count();
    let plans = trace.iter().filter(|p| p.starts_with("plans/")).count();
    assert_eq!((logs, plans), (25, 25), "{trace:?}");
    assert!(trace.contains(&"cohort.toml".to_string()));
    for e in &manifest.files {
        if e.path.starts_with("scored/") && e.path.ends_with(".toml") {
            assert!(e.sources.iter().any(|s| s.starts_with("logs/")));
            assert!(e.sources.iter().any(|s| s.starts_with("plans/")));
        }
    }
}

#[test]
fn plan_hash_mismatch_is_a_conformance_error() {
    let dir = tempfile::tempdir().unwrap();
    let ws = dir.path();
    let cohort = small_cohort(ws, 2);
    ok(ws, &["simulate", "--cohort", &cohort, "--seed", "4"]);
    // replace y1's plan with a different one; its log now has no plan
    ok(ws, &["plan", "--seed", "99", "--name", "y1"]);
    let (code, line) = fails(ws, &["score"]);
    assert_eq!(code, 3, "{line}");
    assert!(line.starts_with("error: conformance: logs/y1.jsonl"), "{line}");
    assert!(line.contains("sha256"));
    assert!(snapshot(ws).iter().all(|(p, _)| !p.starts_with("scored")));
}

#[test]
fn edited_files_are_caught_by_the_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let ws = dir.path();
    let cohort = small_cohort(ws, 1);
    ok(ws, &["simulate", "--cohort", &cohort, "--seed", "4"]);
    let log = ws.join("logs/e1.jsonl");
    let mut text = fs::read_to_string(&log).unwrap();
    text = text.replacen("\"pre_stimulus\":false", "\"pre_stimulus\":true", 1);
    fs::write(&log, text).unwrap();
    let (code, line) = fails(ws, &["score"]);
    assert_eq!(code, 3);
    assert!(line.contains("logs/e1.jsonl changed"), "{line}");
}

#[test]
fn failed_stage_leaves_previous_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let ws = dir.path();
    let cohort = small_cohort(ws, 2);
    ok(ws, &["simulate", "--cohort", &cohort, "--seed", "5"]);
    ok(ws, &["score"]);
    let before = snapshot(ws);
    // the last log in name order becomes unreadable; earlier ones score fine
    let w = Workspace::new(ws);
    let mut b = w.batch();
    b.add("logs/y2.jsonl", "not a log\n", "log", Some("y2"), &[]).unwrap();
    b.commit().unwrap();
    let manifest_before = fs::read(ws.join(MANIFEST)).unwrap();
    let (code, line) = fails(ws, &["score"]);
    assert_eq!(code, 2, "{line}");
    let after = snapshot(ws);
    let scored = |s: &[(String, Vec<u8>)]| -> Vec<(String, Vec<u8>)> {
        s.iter().filter(|(p, _)| p.starts_with("scored")).cloned().collect()
    };
    assert_eq!(scored(&before), scored(&after));
    assert_eq!(fs::read(ws.join(MANIFEST)).unwrap(), manifest_before);
}

#[test]
fn exit_codes_by_error_kind() {
    let dir = tempfile::tempdir().unwrap();
    let ws = dir.path();
    assert_eq!(fails(ws, &["score"]).0, 2);
    assert_eq!(fails(ws, &["plan"]).0, 2);
    assert_eq!(fails(ws, &["plan", "--seed", "1", "--name", "../x"]).0, 2);
    let (code, line) = fails(ws, &["plan", "--seed", "1", "--config", "/nonexistent/cfg.toml"]);
    assert_eq!(code, 4);
    assert!(line.starts_with("error: io: /nonexistent/cfg.toml"), "{line}");
    assert_eq!(fails(ws, &["stats"]).0, 2);
    assert_eq!(fails(ws, &["simulate", "--cohort", "/nonexistent.toml"]).0, 4);
}

#[test]
fn erp_stage_feeds_erp_tables() {
    let dir = tempfile::tempdir().unwrap();
    let ws = dir.path();
    let cohort = small_cohort(ws, 3);
    for stage in [&["simulate", "--cohort", &cohort, "--seed", "3", "--eeg"][..], &["score"], &["erp"], &["stats"], &["report"]] {
        ok(ws, stage);
    }
    let table6 = fs::read_to_string(ws.join("reports/table6.txt")).unwrap();
    assert!(table6.lines().any(|l| l.starts_with("Age")), "{table6}");
    let table7 = fs::read_to_string(ws.join("reports/table7.txt")).unwrap();
    assert!(table7.lines().any(|l| l.starts_with("TN (P1)")), "{table7}");
    let fig7 = fs::read_to_string(ws.join("reports/figure7.csv")).unwrap();
    assert_eq!(fig7.lines().count(), 1 + 6 * 3);
    let summary = fs::read_to_string(ws.join("reports/summary.txt")).unwrap();
    assert!(summary.contains("ERP amplitude young (uV): "));
    let doc = osvs_core::erp::ErpDocument::from_text(&fs::read_to_string(ws.join("scored/y1.erp.toml")).unwrap()).unwrap();
    assert_eq!(doc.channel, "Pz");
    assert!(doc.conditions.iter().all(|c| c.n_epochs_used + c.n_rejected == 96));
}

fn fast_config() -> PlanConfig {
    PlanConfig {
        timing: TimingConfig {
            display_duration_ms: 20,
            soa_min_ms: 40,
            soa_max_ms: 80,
            post_response_delay_min_ms: 20,
            post_response_delay_max_ms: 60,
            cue_lead_ms: 20,
            inter_block_rest_s: 0,
        },
        ..PlanConfig::default()
    }
}

/// Headless client: syncs on every cue with a skewed clock, presses on
/// every third display, and records every frame it receives.
fn headless_client(addr: &str) -> (usize, Vec<Vec<u8>>) {
    let origin = std::time::Instant::now();
    let now = || origin.elapsed().as_micros() as i64 + 3_000_000;
    let mut c = WireClient::connect(addr).unwrap();
    let mut shows = 0;
    let mut frames = Vec::new();
    while let Some(msg) = c.recv().unwrap() {
        frames.push(encode(&msg));
        match msg {
            ServerMessage::Cue { .. } => {
                c.send(&ClientMessage::Sync { t0: now(), t1: None, t2: None, t3: None }).unwrap();
                let Some(ServerMessage::Sync { t0, t1, t2 }) = c.recv().unwrap() else {
                    panic!("expected a sync reply");
                };
                c.send(&ClientMessage::Sync { t0, t1: Some(t1), t2: Some(t2), t3: Some(now()) }).unwrap();
                c.send(&ClientMessage::Ready).unwrap();
            }
            ServerMessage::Show { .. } => {
                shows += 1;
                if shows % 3 == 0 {
                    c.send(&ClientMessage::Response { client_t_us: now(), hand: HandCondition::Right }).unwrap();
                }
            }
            ServerMessage::End { .. } => break,
            _ => {}
        }
    }
    (shows, frames)
}

#[test]
fn serve_runs_a_block_for_a_headless_client() {
    let dir = tempfile::tempdir().unwrap();
    let ws = dir.path();
    let cfg = ws.join("fast.toml");
    fs::write(&cfg, fast_config().to_text()).unwrap();
    ok(ws, &["plan", "--seed", "5", "--config", cfg.to_str().unwrap(), "--name", "fast"]);

    let mut child = Command::new(env!("CARGO_BIN_EXE_osvs"))
        .args(["serve", "--plan", "fast", "--participant", "live", "--bind", "127.0.0.1:0", "--blocks", "1"])
        .env("OSVS_WORKSPACE", ws)
        .stdout(Stdio::piped())
        .spawn()
        .unwrap();
    let mut stdout = BufReader::new(child.stdout.take().unwrap());
    let mut line = String::new();
    stdout.read_line(&mut line).unwrap();
    let addr = line.trim().strip_prefix("listening ").expect("address line").to_string();
    let (shows, frames) = thread::spawn(move || headless_client(&addr)).join().unwrap();
    assert!(child.wait().unwrap().success());

    assert_eq!(shows, 40);
    let plan = SessionPlan::from_text(&fs::read_to_string(ws.join("plans/fast.toml")).unwrap()).unwrap();
    let log = EventLog::from_jsonl(&fs::read_to_string(ws.join("logs/live.jsonl")).unwrap()).unwrap();
    assert!(!log.aborted());
    assert_eq!(log.count(|e| matches!(e, Event::StimOn { .. })), 40);
    assert_eq!(log.count(|e| matches!(e, Event::Response { .. })), 40 / 3);
    check_conformance(&plan, &log).unwrap();
    for r in log.records() {
        if let Event::Response { press_t_us, .. } = r.event {
            assert!((r.t_us - press_t_us).abs() < 5_000, "sync error {} us", r.t_us - press_t_us);
        }
    }
    // nothing the client receives may tell targets from nontargets
    for f in &frames {
        let text = String::from_utf8_lossy(f).to_lowercase();
        assert!(!text.contains("target"), "{text}");
    }
}
