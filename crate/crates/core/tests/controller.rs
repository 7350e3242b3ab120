use std::sync::atomic::{AtomicI64, Ordering};
use std::sync::Arc;
use std::time::Duration;

use chrono::{DateTime, Utc};
use serde_json::{json, Value};
use tpcbed::config::TestbedConfig;
use tpcbed::controller::log::ExperimentLog;
use tpcbed::controller::server::{handle, Command, ControlClient, ControlServer, Request, Response};
use tpcbed::controller::session::{SessionError, SessionManager, Token};
use tpcbed::controller::{ControlError, Testbed};
use tpcbed::rf::{AntennaId, TagId};
use tpcbed::tag::{ApplicationBehavior, Mode};
use tpcbed::wisent::{FirmwareImage, TransferOutcome};

const T: Duration = Duration::from_secs(60);

fn small_image(behavior: ApplicationBehavior) -> FirmwareImage {
    FirmwareImage::synthetic(0x4400, 64, behavior)
}

fn ok(resp: Response) -> Value {
    assert!(resp.ok, "{:?}", resp.error);
    resp.result.unwrap()
}

fn err_kind(resp: &Response) -> &str {
    assert!(!resp.ok);
    &resp.error.as_ref().unwrap().kind
}

fn token(v: &Value) -> Token {
    serde_json::from_value(v["token"].clone()).unwrap()
}

#[test]
fn zero_duration_inventory_is_empty() {
    let tb = Testbed::new(TestbedConfig::default()).unwrap();
    let s = tb.sessions().acquire("a", None).unwrap();
    let mut log = ExperimentLog::new(Vec::new());
    let rows = tb.inventory(s.token, &[AntennaId(2)], 0.0, 0, &mut log).unwrap();
    assert!(rows.is_empty());
}

#[test]
fn experiments_need_the_current_token() {
    let tb = Testbed::new(TestbedConfig::default()).unwrap();
    let s = tb.sessions().acquire("a", None).unwrap();
    tb.sessions().release(s.token).unwrap();
    let mut log = ExperimentLog::new(Vec::new());
    let e = tb.inventory(s.token, &[AntennaId(2)], 1.0, 0, &mut log).unwrap_err();
    assert!(matches!(e, ControlError::Session(SessionError::InvalidToken)));
    let s = tb.sessions().acquire("b", None).unwrap();
    let e = tb.inventory(s.token, &[AntennaId(7)], 1.0, 0, &mut log).unwrap_err();
    assert!(matches!(e, ControlError::Invalid(_)));
}

#[test]
fn lease_lapses_after_idle_timeout() {
    let now = Arc::new(AtomicI64::new(1_459_555_200_000));
    let clock = Arc::clone(&now);
    let sessions = SessionManager::with_time_source(
        Duration::from_secs(300),
        None,
        Arc::new(move || DateTime::<Utc>::from_timestamp_millis(clock.load(Ordering::SeqCst)).unwrap()),
    );
    let tb = Testbed::with_sessions(TestbedConfig::default(), sessions).unwrap();
    let a = tb.sessions().acquire("a", None).unwrap();
    now.fetch_add(299_000, Ordering::SeqCst);
    match tb.sessions().acquire("b", None) {
        Err(SessionError::Busy { lease_expiry }) => assert_eq!(lease_expiry, a.lease_expiry),
        other => panic!("{other:?}"),
    }
    // Using the lease extends it.
    let mut log = ExperimentLog::new(Vec::new());
    tb.inventory(a.token, &[AntennaId(1)], 1.0, 0, &mut log).unwrap();
    now.fetch_add(299_000, Ordering::SeqCst);
    assert!(tb.sessions().acquire("b", None).is_err());
    now.fetch_add(2_000, Ordering::SeqCst);
    let b = tb.sessions().acquire("b", None).unwrap();
    assert_eq!(tb.status().session.unwrap().user, "b");
    assert!(tb.sessions().touch(a.token).is_err());
    assert!(tb.sessions().touch(b.token).is_ok());
}

#[test]
fn shared_secret_is_checked() {
    let mut config = TestbedConfig::default();
    config.controller.shared_secret = Some("s3cret".into());
    let tb = Testbed::new(config).unwrap();
    let bad = handle(
        &tb,
        Request {
            id: Some(1),
            command: Command::Acquire {
                user: "a".into(),
                secret: Some("guess".into()),
            },
        },
    );
    assert_eq!(err_kind(&bad), "auth");
    assert_eq!(bad.id, Some(1));
    assert!(tb.sessions().acquire("a", Some("s3cret")).is_ok());
}

#[test]
fn control_server_end_to_end() {
    let tb = Arc::new(Testbed::new(TestbedConfig::default()).unwrap());
    let (addr, _) = ControlServer::bind("127.0.0.1:0", Arc::clone(&tb)).unwrap().spawn().unwrap();
    let mut alice = ControlClient::connect(addr, T).unwrap();
    let mut bob = ControlClient::connect(addr, T).unwrap();

    let lease = ok(alice.call(Command::Acquire { user: "alice".into(), secret: None }).unwrap());
    let t = token(&lease);
    let busy = bob.call(Command::Acquire { user: "bob".into(), secret: None }).unwrap();
    assert_eq!(err_kind(&busy), "busy");
    assert_eq!(busy.error.as_ref().unwrap().lease_expiry.as_deref(), lease["lease_expiry"].as_str());

    let status = ok(bob.call(Command::Status).unwrap());
    assert_eq!(status["session"]["user"], "alice");
    assert!(status["session"].get("token").is_none(), "status must not leak the token");
    assert_eq!(status["tags"].as_array().unwrap().len(), 7);

    let inv = ok(alice
        .call(Command::Inventory {
            token: t,
            antenna: Some(2),
            selection: None,
            duration_s: 5.0,
            seed: 3,
        })
        .unwrap());
    let csv = inv["csv"].as_str().unwrap();
    assert!(csv.starts_with("tag,antenna,epc,read_count,mean_rssi_dbm\n"), "{csv}");
    assert_eq!(csv.lines().count(), 1 + inv["rows"].as_array().unwrap().len());
    assert!(inv["log"].as_str().unwrap().lines().all(|l| serde_json::from_str::<Value>(l).is_ok()));

    let stolen = bob
        .call(Command::Inventory {
            token: Token(uuid::Uuid::nil()),
            antenna: Some(2),
            selection: None,
            duration_s: 1.0,
            seed: 0,
        })
        .unwrap();
    assert_eq!(err_kind(&stolen), "auth");

    let both = alice
        .call(Command::Inventory {
            token: t,
            antenna: Some(2),
            selection: Some(tpcbed::controller::experiments::EnvironmentSelection::Dual),
            duration_s: 1.0,
            seed: 0,
        })
        .unwrap();
    assert_eq!(err_kind(&both), "invalid");

    ok(alice.call(Command::Release { token: t }).unwrap());
    let lease = ok(bob.call(Command::Acquire { user: "bob".into(), secret: None }).unwrap());
    assert_ne!(token(&lease), t);
}

#[test]
fn malformed_request_lines_get_invalid() {
    use std::io::{BufRead, BufReader, Write};
    let tb = Arc::new(Testbed::new(TestbedConfig::default()).unwrap());
    let (addr, _) = ControlServer::bind("127.0.0.1:0", tb).unwrap().spawn().unwrap();
    let s = std::net::TcpStream::connect(addr).unwrap();
    s.set_read_timeout(Some(T)).unwrap();
    let mut w = s.try_clone().unwrap();
    let mut r = BufReader::new(s);
    for line in ["{not json", r#"{"cmd":"launch"}"#, r#"{"id":4,"cmd":"release"}"#] {
        writeln!(w, "{line}").unwrap();
        let mut resp = String::new();
        r.read_line(&mut resp).unwrap();
        let resp: Response = serde_json::from_str(&resp).unwrap();
        assert_eq!(err_kind(&resp), "invalid", "{line}");
    }
    writeln!(w, "{}", json!({"id": 9, "cmd": "status"})).unwrap();
    let mut resp = String::new();
    r.read_line(&mut resp).unwrap();
    let resp: Response = serde_json::from_str(&resp).unwrap();
    assert_eq!(resp.id, Some(9));
    assert!(resp.ok);
}

#[test]
fn installed_firmware_persists_between_experiments() {
    let tb = Testbed::new(TestbedConfig::default()).unwrap();
    let s = tb.sessions().acquire("a", None).unwrap();
    let mut log = ExperimentLog::new(Vec::new());
    let locked = ApplicationBehavior {
        obeys_goto_bios: false,
        responds_to_inventory: true,
    };
    let rows = tb.reprogram(s.token, &[TagId(6)], &small_image(locked), 1, &mut log).unwrap();
    assert_eq!(rows[0].outcome, TransferOutcome::Success);
    let st = tb.status();
    let t6 = st.tags.iter().find(|t| t.tag == TagId(6)).unwrap();
    assert_eq!(t6.behavior, locked);
    assert_eq!(t6.mode, Mode::Application);

    // The new application ignores goto-bios, so the tag is stuck with it.
    let rows = tb.reprogram(s.token, &[TagId(6)], &small_image(Default::default()), 1, &mut log).unwrap();
    assert_eq!(rows[0].outcome, TransferOutcome::AbortTimeout);
    assert_eq!(rows[0].duration_s, 60.0);
}

#[test]
fn bootloader_overlap_is_rejected_without_sending() {
    let tb = Testbed::new(TestbedConfig::default()).unwrap();
    let s = tb.sessions().acquire("a", None).unwrap();
    let mut log = ExperimentLog::new(Vec::new());
    let image = FirmwareImage::synthetic(0xFB00, 0x200, Default::default());
    let rows = tb.reprogram(s.token, &[TagId(1), TagId(6)], &image, 0, &mut log).unwrap();
    for r in &rows {
        assert_eq!(r.outcome, TransferOutcome::RegionViolation);
        assert_eq!(r.messages_sent, 0);
    }
}

fn run_both(seed: u64) -> (String, String, String, String) {
    let tb = Testbed::new(TestbedConfig::default()).unwrap();
    let s = tb.sessions().acquire("a", None).unwrap();
    let mut inv_log = ExperimentLog::new(Vec::new());
    let inv = tb.inventory(s.token, &[AntennaId(2), AntennaId(3)], 10.0, seed, &mut inv_log).unwrap();
    let mut inv_csv = Vec::new();
    tpcbed::controller::experiments::write_inventory_csv(&inv, &mut inv_csv).unwrap();
    let mut rep_log = ExperimentLog::new(Vec::new());
    let rep = tb
        .reprogram(s.token, &[TagId(1), TagId(6)], &small_image(Default::default()), seed, &mut rep_log)
        .unwrap();
    let mut rep_csv = Vec::new();
    tpcbed::controller::experiments::write_reprogram_csv(&rep, &mut rep_csv).unwrap();
    let strip = |v: Vec<u8>| String::from_utf8(v).unwrap().replace(&s.token.0.to_string(), "<token>");
    (
        strip(inv_csv),
        strip(inv_log.into_inner()),
        strip(rep_csv),
        strip(rep_log.into_inner()),
    )
}

#[test]
fn same_seed_same_bytes() {
    let a = run_both(11);
    let b = run_both(11);
    assert_eq!(a, b);
    assert!(a.1.contains("<token>"));
    let c = run_both(12);
    assert_ne!(a.1, c.1);
}
