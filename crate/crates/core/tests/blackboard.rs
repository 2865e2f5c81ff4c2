use std::io::{ErrorKind, Write};
use std::net::{Shutdown, SocketAddr, TcpStream};
use std::sync::{Arc, Barrier};
use std::thread;
use std::time::Duration;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use fedsplit::blackboard::{Blackboard, BlackboardConfig, BlackboardHandle};
use fedsplit::federation::crypto::encode_delta;
use fedsplit::federation::frame::{read_frame, write_frame};
use fedsplit::federation::{seal, GradientFrame, MsgType, SenderId, SharedKey};
use fedsplit::nn::{Matrix, ParamTensors};

fn start(agents: usize) -> BlackboardHandle {
    Blackboard::bind(BlackboardConfig::new("127.0.0.1:0", agents))
        .unwrap()
        .spawn()
        .unwrap()
}

fn id(name: &str) -> SenderId {
    SenderId::from_name(name).unwrap()
}

fn connect(addr: SocketAddr, name: &str) -> TcpStream {
    let mut s = TcpStream::connect(addr).unwrap();
    s.set_read_timeout(Some(Duration::from_secs(10))).unwrap();
    write_frame(&mut s, &GradientFrame::hello(id(name)).encode()).unwrap();
    s
}

fn delta(v: f64) -> ParamTensors {
    ParamTensors {
        weights: Matrix::from_vec(2, 2, vec![v, -v, 2.0 * v, 0.5]).unwrap(),
        bias: vec![v; 2],
    }
}

fn send_delta(s: &mut TcpStream, key: &SharedKey, name: &str, epoch: u32, v: f64) {
    write_frame(s, &seal(&delta(v), "2", key, epoch, id(name)).encode()).unwrap();
}

fn recv(s: &mut TcpStream) -> GradientFrame {
    GradientFrame::decode(&read_frame(s).unwrap().unwrap()).unwrap()
}

fn assert_silent(s: &mut TcpStream) {
    s.set_read_timeout(Some(Duration::from_millis(200)))
        .unwrap();
    match read_frame(s) {
        Err(e) => assert!(matches!(
            e.kind(),
            ErrorKind::WouldBlock | ErrorKind::TimedOut
        )),
        Ok(other) => panic!("expected no frame, got {other:?}"),
    }
    s.set_read_timeout(Some(Duration::from_secs(10))).unwrap();
}

/// Closes our side and waits for the forwarder to acknowledge the departure.
fn leave(mut s: TcpStream) {
    s.shutdown(Shutdown::Write).unwrap();
    while let Ok(Some(_)) = read_frame(&mut s) {}
}

#[test]
fn delta_reaches_other_agent_with_seq_one_and_is_not_echoed() {
    let bb = start(2);
    let key = SharedKey::generate();
    let mut a = connect(bb.addr(), "A");
    let mut b = connect(bb.addr(), "B");
    send_delta(&mut a, &key, "A", 0, 0.25);
    let f = recv(&mut b);
    assert_eq!(
        (f.seq, f.sender_id, f.msg_type),
        (1, id("A"), MsgType::Delta)
    );
    assert_silent(&mut a);
    let audit = bb.audit();
    assert_eq!(audit.len(), 1);
    assert_eq!(
        audit[0].to_string(),
        format!("1 0 {} DELTA {}", id("A"), f.payload_len())
    );
}

#[test]
fn frames_are_held_until_every_agent_has_joined() {
    let bb = start(3);
    let key = SharedKey::generate();
    let mut a = connect(bb.addr(), "A");
    let mut b = connect(bb.addr(), "B");
    send_delta(&mut a, &key, "A", 0, 1.0);
    assert_silent(&mut b);
    let mut c = connect(bb.addr(), "C");
    assert_eq!(recv(&mut b).seq, 1);
    assert_eq!(recv(&mut c).seq, 1);
}

#[test]
fn concurrent_senders_see_one_global_order() {
    const AGENTS: [&str; 3] = ["A", "B", "C"];
    const PER_AGENT: u32 = 25;
    let bb = start(AGENTS.len());
    let key = SharedKey::generate();
    let streams: Vec<TcpStream> = AGENTS.iter().map(|n| connect(bb.addr(), n)).collect();
    let start_line = Arc::new(Barrier::new(AGENTS.len()));

    let handles: Vec<_> = streams
        .into_iter()
        .zip(AGENTS)
        .enumerate()
        .map(|(i, (stream, name))| {
            let key = key.clone();
            let start_line = Arc::clone(&start_line);
            thread::spawn(move || {
                let mut reader = stream.try_clone().unwrap();
                let mut writer = stream;
                let expected = PER_AGENT as usize * (AGENTS.len() - 1);
                let rx = thread::spawn(move || {
                    (0..expected)
                        .map(|_| {
                            let f = recv(&mut reader);
                            (f.seq, f.sender_id, f.epoch)
                        })
                        .collect::<Vec<_>>()
                });
                let mut rng = ChaCha8Rng::seed_from_u64(i as u64);
                start_line.wait();
                for epoch in 0..PER_AGENT {
                    if rng.gen_bool(0.5) {
                        thread::sleep(Duration::from_micros(rng.gen_range(0..500)));
                    }
                    send_delta(&mut writer, &key, name, epoch, epoch as f64);
                }
                rx.join().unwrap()
            })
        })
        .collect();
    let received: Vec<Vec<(u64, SenderId, u32)>> =
        handles.into_iter().map(|h| h.join().unwrap()).collect();

    let audit = bb.audit();
    let total = PER_AGENT as usize * AGENTS.len();
    assert_eq!(audit.len(), total);
    let seqs: Vec<u64> = audit.iter().map(|r| r.seq).collect();
    assert_eq!(seqs, (1..=total as u64).collect::<Vec<_>>());
    for (name, got) in AGENTS.iter().zip(&received) {
        let want: Vec<(u64, SenderId, u32)> = audit
            .iter()
            .filter(|r| r.sender != id(name))
            .map(|r| (r.seq, r.sender, r.epoch))
            .collect();
        assert_eq!(got, &want, "agent {name} saw a different order");
    }
    // Each sender's own frames keep their send order.
    for name in AGENTS {
        let epochs: Vec<u32> = audit
            .iter()
            .filter(|r| r.sender == id(name))
            .map(|r| r.epoch)
            .collect();
        assert_eq!(epochs, (0..PER_AGENT).collect::<Vec<_>>());
    }
}

#[test]
fn duplicate_sender_is_rejected() {
    let bb = start(2);
    let _a = connect(bb.addr(), "A");
    let mut dup = connect(bb.addr(), "A");
    assert!(matches!(read_frame(&mut dup), Ok(None) | Err(_)));
}

#[test]
fn malformed_frame_drops_only_the_offender() {
    let bb = start(3);
    let key = SharedKey::generate();
    let mut a = connect(bb.addr(), "A");
    let mut b = connect(bb.addr(), "B");
    let mut c = connect(bb.addr(), "C");
    // Valid length prefix, unknown version byte.
    let mut junk = vec![40, 0, 0, 0];
    junk.extend(std::iter::repeat_n(9u8, 40));
    c.write_all(&junk).unwrap();
    assert!(matches!(read_frame(&mut c), Ok(None) | Err(_)));

    send_delta(&mut a, &key, "A", 0, 1.0);
    assert_eq!(recv(&mut b).sender_id, id("A"));
    send_delta(&mut b, &key, "B", 0, 2.0);
    assert_eq!(recv(&mut a).seq, 2);
}

#[test]
fn spoofed_sender_is_dropped() {
    let bb = start(2);
    let key = SharedKey::generate();
    let mut a = connect(bb.addr(), "A");
    let mut b = connect(bb.addr(), "B");
    send_delta(&mut a, &key, "B", 0, 1.0);
    assert!(matches!(read_frame(&mut a), Ok(None) | Err(_)));
    assert_silent(&mut b);
    assert!(bb.audit().is_empty());
}

#[test]
fn audit_file_holds_headers_only() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("audit.log");
    let config = BlackboardConfig {
        audit_path: Some(path.clone()),
        ..BlackboardConfig::new("127.0.0.1:0", 2)
    };
    let bb = Blackboard::bind(config).unwrap().spawn().unwrap();
    let key = SharedKey::generate();
    let mut a = connect(bb.addr(), "A");
    let mut b = connect(bb.addr(), "B");
    let values = [0.125, -7.5, 3.0e-3];
    for (epoch, v) in values.iter().enumerate() {
        send_delta(&mut a, &key, "A", epoch as u32, *v);
        recv(&mut b);
    }
    leave(a);
    leave(b);
    bb.shutdown().unwrap();

    let audit = std::fs::read(&path).unwrap();
    let text = String::from_utf8(audit.clone()).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 3);
    for (i, line) in lines.iter().enumerate() {
        let f: Vec<&str> = line.split(' ').collect();
        assert_eq!(f.len(), 5);
        assert_eq!(f[0], (i + 1).to_string());
        assert_eq!(f[1], i.to_string());
        assert_eq!(f[2], id("A").to_hex());
        assert_eq!(f[3], "DELTA");
    }
    for v in values {
        let pt = encode_delta(&delta(v));
        assert!(!audit
            .windows(8)
            .any(|w| pt.chunks(8).any(|c| c == w && c != [0u8; 8])));
    }
}

#[test]
fn sessions_can_follow_each_other() {
    let bb = start(2);
    let key = SharedKey::generate();
    for round in 0..3 {
        let mut a = connect(bb.addr(), "A");
        let mut b = connect(bb.addr(), "B");
        send_delta(&mut b, &key, "B", round, 1.0);
        assert_eq!(recv(&mut a).seq, 1, "seq restarts with every session");
        leave(a);
        leave(b);
    }
    assert_eq!(bb.audit().len(), 3);
}

#[test]
fn max_sessions_stops_the_server() {
    let config = BlackboardConfig {
        max_sessions: Some(1),
        ..BlackboardConfig::new("127.0.0.1:0", 2)
    };
    let bb = Blackboard::bind(config).unwrap();
    let addr = bb.local_addr().unwrap();
    let server = thread::spawn(move || bb.serve());
    let mut a = connect(addr, "A");
    let mut b = connect(addr, "B");
    // A delivered frame proves both agents joined before either leaves.
    send_delta(&mut a, &SharedKey::generate(), "A", 0, 1.0);
    recv(&mut b);
    leave(a);
    leave(b);
    server.join().unwrap().unwrap();
}
