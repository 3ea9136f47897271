//! Real-time session over TCP against a headless client.

use std::net::TcpListener;
use std::thread;
use std::time::Instant;

use osvs_core::protocol::{build_session_plan, PlanConfig, TimingConfig};
use osvs_core::runtime::wire::{TcpPort, WireClient};
use osvs_core::runtime::{
    check_conformance, run_session, ClientMessage, Event, ServerMessage, SessionOptions, SystemClock,
};

fn fast_plan() -> osvs_core::protocol::SessionPlan {
    let config = PlanConfig {
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
    };
    build_session_plan(&config, 5).unwrap()
}

/// Client clock runs 7 s ahead of the server's and is synced on every cue.
fn client(addr: std::net::SocketAddr, origin: Instant) -> (usize, usize) {
    const SKEW_US: i64 = 7_000_000;
    let now = || origin.elapsed().as_micros() as i64 + SKEW_US;
    let mut c = WireClient::connect(addr).unwrap();
    let (mut shows, mut presses) = (0, 0);
    while let Some(msg) = c.recv().unwrap() {
        match msg {
            ServerMessage::Cue { hand, .. } => {
                let t0 = now();
                c.send(&ClientMessage::Sync {
                    t0,
                    t1: None,
                    t2: None,
                    t3: None,
                })
                .unwrap();
                let Some(ServerMessage::Sync { t0, t1, t2 }) = c.recv().unwrap() else {
                    panic!("expected sync reply");
                };
                c.send(&ClientMessage::Sync {
                    t0,
                    t1: Some(t1),
                    t2: Some(t2),
                    t3: Some(now()),
                })
                .unwrap();
                c.send(&ClientMessage::Ready).unwrap();
                let _ = hand;
            }
            ServerMessage::Show { directions } => {
                assert!(!directions.is_empty());
                shows += 1;
                if shows % 3 == 0 {
                    c.send(&ClientMessage::Response {
                        client_t_us: now(),
                        hand: osvs_core::protocol::HandCondition::Right,
                    })
                    .unwrap();
                    presses += 1;
                }
            }
            ServerMessage::End { .. } => break,
            _ => {}
        }
    }
    (shows, presses)
}

#[test]
fn headless_client_completes_a_block() {
    let plan = fast_plan();
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    let origin = Instant::now();
    let handle = thread::spawn(move || client(addr, origin));
    let (stream, _) = listener.accept().unwrap();
    let mut port = TcpPort::new(stream).unwrap();
    let mut clock = SystemClock::new();
    let server_origin = clock.origin();
    let mut opts = SessionOptions::new("loop");
    opts.block_limit = Some(1);
    let log = run_session(&plan, &mut port, &mut clock, &opts).unwrap();
    let (shows, presses) = handle.join().unwrap();

    assert_eq!(shows, 40);
    assert!(!log.aborted());
    assert_eq!(log.count(|e| matches!(e, Event::StimOn { .. })), 40);
    assert_eq!(log.count(|e| matches!(e, Event::Response { .. })), presses);
    let c = check_conformance(&plan, &log).unwrap();
    assert_eq!(c.displays_presented, 40);

    // origins differ by the spawn latency only; bound the sync error with it
    let origin_gap = server_origin.duration_since(origin).as_micros() as i64;
    assert!(origin_gap < 50_000);
    for r in log.records() {
        if let Event::Response { press_t_us, .. } = r.event {
            let err = (r.t_us - press_t_us).abs();
            assert!(err < 5_000, "sync error {err} us");
        }
    }
}

#[test]
fn client_disconnect_aborts_session() {
    let plan = fast_plan();
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    let handle = thread::spawn(move || {
        let mut c = WireClient::connect(addr).unwrap();
        // confirm the first cue, watch three displays, then hang up
        let mut shows = 0;
        while let Some(msg) = c.recv().unwrap() {
            match msg {
                ServerMessage::Cue { .. } => c.send(&ClientMessage::Ready).unwrap(),
                ServerMessage::Show { .. } => {
                    shows += 1;
                    if shows == 3 {
                        break;
                    }
                }
                _ => {}
            }
        }
    });
    let (stream, _) = listener.accept().unwrap();
    let mut port = TcpPort::new(stream).unwrap();
    let mut clock = SystemClock::new();
    let log = run_session(&plan, &mut port, &mut clock, &SessionOptions::new("gone")).unwrap();
    handle.join().unwrap();
    assert!(log.aborted());
    assert!(matches!(log.records().last().unwrap().event, Event::SessionEnd { aborted: true }));
    check_conformance(&plan, &log).unwrap();
}
