//! One function per subcommand. Each reads its inputs from the workspace,
//! computes everything, and commits its outputs as a single batch.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::net::TcpListener;
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use osvs_core::erp::{analyze_participant, EegRecording, SearchWindow};
use osvs_core::protocol::{
    build_session_plan, read_profiles, validate_plan, write_profiles, Group, ParticipantProfile, PlanConfig,
    SessionPlan,
};
use osvs_core::runtime::wire::TcpPort;
use osvs_core::runtime::{run_session, CueMode, EventLog, SessionOptions, SystemClock};
use osvs_core::scoring::{cohort_rows, read_cohort_csv, score_participant, write_cohort_csv, CohortRow, Metric, ScoringError};
use osvs_core::seed;
use osvs_core::simulate::{build_cohort, simulate_participant, synthesize_eeg, CohortSpec};
use osvs_core::stats::PosthocMethod;

use crate::analysis::{compute_stats, StatsDocument};
use crate::error::{CliError, Result};
use crate::report::build_report;
use crate::workspace::{Workspace, PARTICIPANTS};
use crate::{ErpArgs, PlanArgs, Posthoc, ServeArgs, SimulateArgs, StatsArgs};

pub const COHORT_SPEC: &str = "cohort.toml";
pub const BEHAVIOUR_CSV: &str = "scored/behaviour.csv";
pub const ERP_CSV: &str = "scored/erp.csv";
pub const STATS_DOC: &str = "reports/stats.toml";

/// Names used as file stems: letters, digits, `-` and `_`.
fn check_name(what: &str, name: &str) -> Result<()> {
    if !name.is_empty() && name.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_') {
        Ok(())
    } else {
        Err(CliError::validation(format!("{what} {name:?} must be letters, digits, '-' or '_'")))
    }
}

fn read_external(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| CliError::io(path, e))
}

fn load_plan(ws: &Workspace, rel: &str) -> Result<SessionPlan> {
    let bytes = ws.read_verified(rel)?;
    let text = String::from_utf8(bytes).map_err(|_| CliError::validation(format!("{rel}: not UTF-8")))?;
    SessionPlan::from_text(&text).map_err(|e| CliError::validation(format!("{rel}: {e}")))
}

/// Every plan in plans/, keyed by its hash.
fn load_plans(ws: &Workspace) -> Result<BTreeMap<String, (String, SessionPlan)>> {
    let mut out = BTreeMap::new();
    for rel in ws.list("plans", ".toml")? {
        let plan = load_plan(ws, &rel)?;
        out.insert(plan.hash(), (rel, plan));
    }
    Ok(out)
}

fn load_log(ws: &Workspace, rel: &str) -> Result<EventLog> {
    let bytes = ws.read_verified(rel)?;
    let text = String::from_utf8(bytes).map_err(|_| CliError::validation(format!("{rel}: not UTF-8")))?;
    EventLog::from_jsonl(&text).map_err(|e| CliError::validation(format!("{rel}: {e}")))
}

fn load_profiles(ws: &Workspace) -> Result<Vec<ParticipantProfile>> {
    if !ws.exists(PARTICIPANTS) {
        return Err(CliError::validation(format!("{PARTICIPANTS} is missing")));
    }
    let bytes = ws.read_verified(PARTICIPANTS)?;
    read_profiles(&bytes[..]).map_err(|e| CliError::validation(format!("{PARTICIPANTS}: {e}")))
}

fn load_rows(ws: &Workspace, rel: &str) -> Result<Vec<CohortRow>> {
    let bytes = ws.read_verified(rel)?;
    read_cohort_csv(&bytes[..]).map_err(|e| CliError::validation(format!("{rel}: {e}")))
}

fn rows_csv(rows: &[CohortRow]) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    write_cohort_csv(rows, &mut buf).map_err(|e| CliError::validation(e.to_string()))?;
    Ok(buf)
}

fn group_of(groups: &BTreeMap<String, Group>, id: &str, origin: &str) -> Result<Group> {
    groups
        .get(id)
        .copied()
        .ok_or_else(|| CliError::validation(format!("{origin}: participant {id} is not in {PARTICIPANTS}")))
}

pub fn plan(ws: &Workspace, a: &PlanArgs) -> Result<()> {
    check_name("plan name", &a.name)?;
    let config = match &a.config {
        Some(p) => PlanConfig::from_text(&read_external(p)?)
            .map_err(|e| CliError::validation(format!("{}: {e}", p.display())))?,
        None => PlanConfig::default(),
    };
    let plan = build_session_plan(&config, a.seed).map_err(CliError::validation)?;
    let report = validate_plan(&plan);
    if !report.is_valid() {
        return Err(CliError::validation(report));
    }
    let rel = format!("plans/{}.toml", a.name);
    let mut batch = ws.batch();
    batch.add(&rel, plan.to_text(), "plan", None, &[])?;
    batch.commit()?;
    println!("{rel} sha256 {}", plan.hash());
    Ok(())
}

pub fn serve(ws: &Workspace, a: &ServeArgs) -> Result<()> {
    check_name("plan name", &a.plan)?;
    check_name("participant id", &a.participant)?;
    let plan_rel = format!("plans/{}.toml", a.plan);
    let plan = load_plan(ws, &plan_rel)?;
    let listener = TcpListener::bind(&a.bind).map_err(|e| CliError::io(&a.bind, e))?;
    let addr = listener.local_addr().map_err(|e| CliError::io(&a.bind, e))?;
    println!("listening {addr}");
    let _ = std::io::stdout().flush();
    let (stream, peer) = listener.accept().map_err(|e| CliError::io(addr.to_string(), e))?;
    let mut port = TcpPort::new(stream).map_err(|e| CliError::io(peer.to_string(), e))?;
    let mut clock = SystemClock::new();
    let mut opts = SessionOptions::new(&a.participant);
    opts.start_unix_us = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0, |d| d.as_micros() as i64);
    if let Some(ms) = a.cue_fixed_ms {
        opts.cue_mode = CueMode::Fixed { duration_ms: ms };
    }
    opts.block_limit = a.blocks;
    let log = run_session(&plan, &mut port, &mut clock, &opts).map_err(CliError::validation)?;
    let rel = format!("logs/{}.jsonl", a.participant);
    let mut batch = ws.batch();
    batch.add(&rel, log.to_jsonl(), "log", Some(&a.participant), &[plan_rel])?;
    batch.commit()?;
    println!("{rel} {} records{}", log.len(), if log.aborted() { " (aborted)" } else { "" });
    Ok(())
}

pub fn simulate(ws: &Workspace, a: &SimulateArgs) -> Result<()> {
    let spec = if a.cohort == "default" {
        CohortSpec::default()
    } else {
        let p = Path::new(&a.cohort);
        CohortSpec::from_text(&read_external(p)?).map_err(|e| CliError::validation(format!("{}: {e}", p.display())))?
    };
    let members = build_cohort(&spec, a.seed).map_err(CliError::validation)?;
    let shared = match &a.plan {
        Some(name) => {
            check_name("plan name", name)?;
            let rel = format!("plans/{name}.toml");
            Some((load_plan(ws, &rel)?, rel))
        }
        None => None,
    };

    let mut batch = ws.batch();
    let spec_text = format!("# cohort seed {}\n{}", a.seed, spec.to_text());
    batch.add(COHORT_SPEC, spec_text, "cohort", None, &[])?;
    let profiles: Vec<ParticipantProfile> = members.iter().map(|m| m.profile.clone()).collect();
    let mut buf = Vec::new();
    write_profiles(&profiles, &mut buf).map_err(CliError::validation)?;
    batch.add(PARTICIPANTS, buf, "participants", None, &[COHORT_SPEC.to_string()])?;

    for m in &members {
        let id = &m.profile.id;
        let (plan, plan_rel) = match &shared {
            Some((p, rel)) => (p.clone(), rel.clone()),
            None => {
                let p = build_session_plan(&PlanConfig::default(), seed::child(m.seed, 0))
                    .map_err(CliError::validation)?;
                let rel = format!("plans/{id}.toml");
                batch.add(&rel, p.to_text(), "plan", Some(id), &[COHORT_SPEC.to_string()])?;
                (p, rel)
            }
        };
        let log = simulate_participant(&plan, &m.behavior, m.seed, id).map_err(CliError::validation)?;
        let log_rel = format!("logs/{id}.jsonl");
        batch.add(&log_rel, log.to_jsonl(), "log", Some(id), &[plan_rel, COHORT_SPEC.to_string()])?;
        if a.eeg {
            let eeg = synthesize_eeg(&log, &m.erp, m.seed).map_err(CliError::validation)?;
            let bytes = eeg.to_bytes().map_err(CliError::validation)?;
            batch.add(format!("eeg/{id}.eeg"), bytes, "eeg", Some(id), &[log_rel, COHORT_SPEC.to_string()])?;
        }
    }
    let n = members.len();
    batch.commit()?;
    println!("simulated {n} participants (seed {}){}", a.seed, if a.eeg { " with EEG" } else { "" });
    Ok(())
}

pub fn score(ws: &Workspace) -> Result<()> {
    let profiles = load_profiles(ws)?;
    let groups: BTreeMap<String, Group> = profiles.iter().map(|p| (p.id.clone(), p.group)).collect();
    let plans = load_plans(ws)?;
    let logs = ws.list("logs", ".jsonl")?;
    if logs.is_empty() {
        return Err(CliError::validation("no logs in logs/"));
    }
    let mut batch = ws.batch();
    let mut rows = Vec::new();
    let mut scored_paths = Vec::new();
    for rel in &logs {
        let log = load_log(ws, rel)?;
        let hash = &log.header().plan_sha256;
        let (plan_rel, plan) = plans
            .get(hash)
            .ok_or_else(|| CliError::Conformance(format!("{rel}: no plan in plans/ has sha256 {hash}")))?;
        let scored = score_participant(&log, plan).map_err(|e| match e {
            ScoringError::Conformance(c) => CliError::Conformance(format!("{rel}: {c}")),
            other => CliError::validation(format!("{rel}: {other}")),
        })?;
        let id = scored.participant.clone();
        check_name("participant id", &id)?;
        let group = group_of(&groups, &id, rel)?;
        let out = format!("scored/{id}.toml");
        batch.add(&out, scored.to_text(), "scored", Some(&id), &[rel.clone(), plan_rel.clone()])?;
        if scored.aborted {
            eprintln!("note: {rel} is an aborted session; left out of {BEHAVIOUR_CSV}");
        } else {
            rows.extend(cohort_rows(&scored, group));
            scored_paths.push(out);
        }
    }
    batch.add(BEHAVIOUR_CSV, rows_csv(&rows)?, "cohort-table", None, &scored_paths)?;
    batch.commit()?;
    println!("scored {} logs", logs.len());
    Ok(())
}

pub fn erp(ws: &Workspace, a: &ErpArgs) -> Result<()> {
    let profiles = load_profiles(ws)?;
    let groups: BTreeMap<String, Group> = profiles.iter().map(|p| (p.id.clone(), p.group)).collect();
    let recordings = ws.list("eeg", ".eeg")?;
    if recordings.is_empty() {
        return Err(CliError::validation("no recordings in eeg/"));
    }
    let search = SearchWindow {
        start_ms: a.search_start_ms,
        end_ms: a.search_end_ms,
    };
    let mut batch = ws.batch();
    let mut rows = Vec::new();
    let mut docs = Vec::new();
    for rel in &recordings {
        let id = rel.trim_start_matches("eeg/").trim_end_matches(".eeg").to_string();
        let log_rel = format!("logs/{id}.jsonl");
        if !ws.exists(&log_rel) {
            return Err(CliError::validation(format!("{rel}: no matching {log_rel}")));
        }
        let log = load_log(ws, &log_rel)?;
        let eeg = EegRecording::read_from(&ws.read_verified(rel)?[..])
            .map_err(|e| CliError::validation(format!("{rel}: {e}")))?;
        let doc = analyze_participant(&eeg, &log, &a.channel, a.threshold_uv, search)
            .map_err(|e| CliError::validation(format!("{rel}: {e}")))?;
        let group = group_of(&groups, &doc.participant, rel)?;
        for c in &doc.conditions {
            for (metric, value) in [(Metric::ErpAmplitude, c.amplitude_uv), (Metric::ErpLatency, c.latency_s)] {
                rows.push(CohortRow {
                    participant: doc.participant.clone(),
                    group,
                    condition: c.condition,
                    metric,
                    value: Some(value),
                });
            }
        }
        let out = format!("scored/{id}.erp.toml");
        batch.add(&out, doc.to_text(), "erp", Some(&id), &[rel.clone(), log_rel])?;
        docs.push(out);
    }
    batch.add(ERP_CSV, rows_csv(&rows)?, "cohort-table", None, &docs)?;
    batch.commit()?;
    println!("measured {} recordings on {}", recordings.len(), a.channel);
    Ok(())
}

pub fn stats(ws: &Workspace, a: &StatsArgs) -> Result<()> {
    let (rows, sources) = cohort_inputs(ws)?;
    let profiles = load_profiles(ws)?;
    let method = match a.posthoc {
        Posthoc::Normal => PosthocMethod::NormalApprox,
        Posthoc::Exact => PosthocMethod::Exact,
    };
    let doc = compute_stats(&rows, &profiles, method).map_err(CliError::validation)?;
    let mut batch = ws.batch();
    batch.add(STATS_DOC, doc.to_text(), "stats", None, &sources)?;
    batch.commit()?;
    println!("{STATS_DOC}: {} Friedman tests, {} correlation tables", doc.friedman.len(), doc.correlations.len());
    Ok(())
}

/// Behavioural rows plus ERP rows when present, checked against the
/// profiles, and the files they came from.
fn cohort_inputs(ws: &Workspace) -> Result<(Vec<CohortRow>, Vec<String>)> {
    if !ws.exists(BEHAVIOUR_CSV) {
        return Err(CliError::validation(format!("{BEHAVIOUR_CSV} is missing; run `score` first")));
    }
    let mut rows = load_rows(ws, BEHAVIOUR_CSV)?;
    let mut sources = vec![BEHAVIOUR_CSV.to_string(), PARTICIPANTS.to_string()];
    if ws.exists(ERP_CSV) {
        rows.extend(load_rows(ws, ERP_CSV)?);
        sources.push(ERP_CSV.to_string());
    }
    let profiles = load_profiles(ws)?;
    let groups: BTreeMap<String, Group> = profiles.iter().map(|p| (p.id.clone(), p.group)).collect();
    for r in &rows {
        let g = group_of(&groups, &r.participant, "cohort table")?;
        if g != r.group {
            return Err(CliError::validation(format!(
                "participant {} is {} in the cohort table but {} in {PARTICIPANTS}",
                r.participant, r.group, g
            )));
        }
    }
    Ok((rows, sources))
}

pub fn report(ws: &Workspace) -> Result<()> {
    if !ws.exists(STATS_DOC) {
        return Err(CliError::validation(format!("{STATS_DOC} is missing; run `stats` first")));
    }
    let text = String::from_utf8(ws.read_verified(STATS_DOC)?)
        .map_err(|_| CliError::validation(format!("{STATS_DOC}: not UTF-8")))?;
    let doc = StatsDocument::from_text(&text).map_err(|e| CliError::validation(format!("{STATS_DOC}: {e}")))?;
    let (rows, mut sources) = cohort_inputs(ws)?;
    sources.push(STATS_DOC.to_string());
    let profiles = load_profiles(ws)?;
    let files = build_report(&rows, &profiles, &doc).map_err(CliError::validation)?;
    let mut batch = ws.batch();
    for (name, contents) in &files {
        batch.add(format!("reports/{name}"), contents, "report", None, &sources)?;
    }
    batch.commit()?;
    println!("wrote {} report files to reports/", files.len());
    Ok(())
}
