//! End-to-end tests over real sockets: three backend services, the gateway
//! server, a subscriber callback listener, and a recording proxy on the
//! gateway->backend leg that lets us audit every byte for plaintext.

use std::collections::BTreeSet;
use std::io::{BufReader, BufWriter, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::Duration;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use privloc::backend::BackendService;
use privloc::crypto::KeySet;
use privloc::gateway::{
    BackendHandle, Gateway, GatewayConfig, GatewayServer, TcpBackend, TcpNotifySink,
};
use privloc::geometry::{Point, Rect};
use privloc::wire::{self, Envelope, Message};
use privloc::{CipherOptions, SystemParams};

struct TestBackend {
    addr: String,
    service: Arc<BackendService>,
    thread: JoinHandle<()>,
}

fn spawn_backend(token: Option<String>, slot_width: u64) -> TestBackend {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap().to_string();
    let service = BackendService::new(slot_width, token, None).unwrap();
    let thread = {
        let service = Arc::clone(&service);
        std::thread::spawn(move || service.serve(listener).unwrap())
    };
    TestBackend { addr, service, thread }
}

/// Byte-level TCP forwarder; records everything the client (the gateway)
/// sends toward the backend.
fn spawn_proxy(target: String, captured: Arc<Mutex<Vec<u8>>>) -> String {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap().to_string();
    std::thread::spawn(move || {
        for conn in listener.incoming() {
            let Ok(client) = conn else { return };
            let Ok(server) = TcpStream::connect(&target) else { return };
            let captured = Arc::clone(&captured);
            let mut c2s_src = client.try_clone().unwrap();
            let mut c2s_dst = server.try_clone().unwrap();
            std::thread::spawn(move || {
                let mut buf = [0u8; 4096];
                while let Ok(n) = c2s_src.read(&mut buf) {
                    if n == 0 {
                        return;
                    }
                    captured.lock().unwrap().extend_from_slice(&buf[..n]);
                    if c2s_dst.write_all(&buf[..n]).is_err() {
                        return;
                    }
                }
            });
            let mut s2c_src = server;
            let mut s2c_dst = client;
            std::thread::spawn(move || {
                let mut buf = [0u8; 4096];
                while let Ok(n) = s2c_src.read(&mut buf) {
                    if n == 0 || s2c_dst.write_all(&buf[..n]).is_err() {
                        return;
                    }
                }
            });
        }
    });
    addr
}

struct Stack {
    gateway_addr: String,
    server: Arc<GatewayServer>,
    gateway_thread: JoinHandle<()>,
    backends: Vec<TestBackend>,
    captured: [Arc<Mutex<Vec<u8>>>; 3],
}

fn spawn_stack(token: Option<String>) -> Stack {
    let params = SystemParams::default();
    let backends: Vec<TestBackend> =
        (0..3).map(|_| spawn_backend(token.clone(), params.ope_range)).collect();
    let captured: [Arc<Mutex<Vec<u8>>>; 3] = Default::default();
    let handles: [Arc<dyn BackendHandle>; 3] = std::array::from_fn(|i| {
        let proxy_addr = spawn_proxy(backends[i].addr.clone(), Arc::clone(&captured[i]));
        Arc::new(TcpBackend::connect(proxy_addr, token.clone())) as Arc<dyn BackendHandle>
    });
    let mut rng = ChaCha8Rng::seed_from_u64(4242);
    let keys = KeySet::generate(&mut rng, params.lambda);
    let config = GatewayConfig::default_for(&params);
    let gateway = Arc::new(
        Gateway::new(
            params,
            config,
            keys,
            CipherOptions::default(),
            handles,
            Some(Arc::new(TcpNotifySink)),
            Some(4242),
        )
        .unwrap(),
    );
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let gateway_addr = listener.local_addr().unwrap().to_string();
    let server = GatewayServer::new(gateway, token, privloc::gateway::LogLevel::Info);
    let gateway_thread = {
        let server = Arc::clone(&server);
        std::thread::spawn(move || server.serve(listener).unwrap())
    };
    Stack { gateway_addr, server, gateway_thread, backends, captured }
}

impl Stack {
    fn shutdown(self) {
        self.server.stop();
        self.gateway_thread.join().unwrap();
        for b in self.backends {
            b.service.stop();
            b.thread.join().unwrap();
        }
    }
}

struct Client {
    reader: BufReader<TcpStream>,
    writer: BufWriter<TcpStream>,
    next_id: u64,
}

impl Client {
    fn connect(addr: &str) -> Client {
        let stream = TcpStream::connect(addr).unwrap();
        stream.set_read_timeout(Some(Duration::from_secs(10))).unwrap();
        Client {
            reader: BufReader::new(stream.try_clone().unwrap()),
            writer: BufWriter::new(stream),
            next_id: 1,
        }
    }

    fn call(&mut self, auth: Option<String>, msg: Message) -> Envelope {
        let id = self.next_id;
        self.next_id += 1;
        wire::write_msg(&mut self.writer, &Envelope::new(id, auth, msg)).unwrap();
        wire::read_msg(&mut self.reader).unwrap().expect("reply")
    }
}

fn publish(node: &str, start: (u64, u64), end: (u64, u64), ts: u64) -> Message {
    Message::Publish {
        node_id: node.into(),
        start: Point::new(start.0, start.1),
        end: Point::new(end.0, end.1),
        ts,
    }
}

fn subscribe(sub_id: &str, sw: (u64, u64), ne: (u64, u64), callback: &str) -> Message {
    Message::Subscribe {
        sub_id: sub_id.into(),
        area: Rect::new(Point::new(sw.0, sw.1), Point::new(ne.0, ne.1)).unwrap(),
        callback: callback.into(),
    }
}

#[test]
fn full_stack_over_tcp() {
    let stack = spawn_stack(None);
    let mut client = Client::connect(&stack.gateway_addr);

    // A listener standing in for the subscriber's callback endpoint.
    let cb_listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let cb_addr = cb_listener.local_addr().unwrap().to_string();
    let notify = std::thread::spawn(move || -> Envelope {
        let (stream, _) = cb_listener.accept().unwrap();
        let mut reader = BufReader::new(stream);
        wire::read_msg(&mut reader).unwrap().expect("notification")
    });

    // Distinctive plaintext values for the later wire audit.
    let reply = client.call(None, subscribe("sub-alpha", (611, 233), (653, 271), &cb_addr));
    assert!(matches!(reply.msg, Message::Ack { .. }), "{:?}", reply.msg);

    // A movement crossing the geofence must produce exactly one notified id
    // and deliver a callback notification.
    let reply = client.call(None, publish("node-zeta", (607, 251), (637, 251), 1));
    let Message::Ack { data } = reply.msg else { panic!("publish failed") };
    let notified: Vec<String> = serde_json::from_value(data["notified"].clone()).unwrap();
    assert_eq!(notified, vec!["sub-alpha".to_string()]);
    let env = notify.join().unwrap();
    match env.msg {
        Message::Notify { sub_id, node_id, ts } => {
            assert_eq!((sub_id.as_str(), node_id.as_str(), ts), ("sub-alpha", "node-zeta", 1));
        }
        other => panic!("expected notify, got {:?}", other),
    }

    // A quiet movement notifies nobody.
    let reply = client.call(None, publish("node-zeta", (101, 907), (121, 907), 2));
    let Message::Ack { data } = reply.msg else { panic!("publish failed") };
    assert_eq!(data["notified"].as_array().unwrap().len(), 0);

    // Over-long movements are rejected with the distance code.
    let reply = client.call(None, publish("node-zeta", (100, 100), (140, 100), 3));
    match reply.msg {
        Message::Error { code, .. } => assert_eq!(code, "distance_violation"),
        other => panic!("expected error, got {:?}", other),
    }

    // Unsubscribe removes the geofence end to end.
    let reply = client.call(None, Message::Unsubscribe { sub_id: "sub-alpha".into() });
    assert!(matches!(reply.msg, Message::Ack { .. }));
    let reply = client.call(None, publish("node-zeta", (607, 251), (637, 251), 4));
    let Message::Ack { data } = reply.msg else { panic!("publish failed") };
    assert_eq!(data["notified"].as_array().unwrap().len(), 0);
    let reply = client.call(None, Message::Unsubscribe { sub_id: "sub-alpha".into() });
    match reply.msg {
        Message::Error { code, .. } => assert_eq!(code, "not_found"),
        other => panic!("expected error, got {:?}", other),
    }

    // Wire audit: nothing the gateway sent to any backend may carry the
    // plaintext schema or raw input values.
    let raw_numbers: BTreeSet<u64> =
        [611, 233, 653, 271, 607, 251, 637, 101, 907, 121, 100, 140].into();
    let raw_strings = ["sub-alpha", "node-zeta", &cb_addr];
    let allowed_keys: BTreeSet<&str> = [
        "id", "auth", "type", "body", "parts", "part_ids", "part_id", "sw", "ne", "ex", "ey",
        "ex0", "ey0", "ex1", "ey1",
    ]
    .into();
    let mut audited_lines = 0usize;
    for captured in &stack.captured {
        let bytes = captured.lock().unwrap().clone();
        for line in String::from_utf8(bytes).unwrap().lines() {
            audited_lines += 1;
            for s in &raw_strings {
                assert!(!line.contains(*s), "plaintext {:?} escaped: {}", s, line);
            }
            let v: serde_json::Value = serde_json::from_str(line).unwrap();
            audit(&v, &allowed_keys, &raw_numbers, line);
        }
    }
    assert!(audited_lines >= 4, "proxy captured too little traffic");

    stack.shutdown();
}

fn audit(
    v: &serde_json::Value,
    allowed_keys: &BTreeSet<&str>,
    raw_numbers: &BTreeSet<u64>,
    line: &str,
) {
    match v {
        serde_json::Value::Object(map) => {
            for (k, val) in map {
                assert!(allowed_keys.contains(k.as_str()), "forbidden key {:?} in {}", k, line);
                audit(val, allowed_keys, raw_numbers, line);
            }
        }
        serde_json::Value::Array(items) => {
            for item in items {
                audit(item, allowed_keys, raw_numbers, line);
            }
        }
        serde_json::Value::Number(n) => {
            // Envelope ids are small counters; coordinates are the risk.
            if let Some(u) = n.as_u64() {
                assert!(
                    !raw_numbers.contains(&u) || u < 16,
                    "raw coordinate {} escaped: {}",
                    u,
                    line
                );
            }
        }
        _ => {}
    }
}

#[test]
fn auth_is_enforced_on_both_legs() {
    let stack = spawn_stack(Some("secret".into()));

    // Wrong client token -> auth error from the gateway.
    let mut client = Client::connect(&stack.gateway_addr);
    let reply = client.call(Some("wrong".into()), publish("n", (10, 10), (20, 10), 1));
    match reply.msg {
        Message::Error { code, .. } => assert_eq!(code, "auth"),
        other => panic!("expected auth error, got {:?}", other),
    }

    // Correct token flows through gateway and backends.
    let mut client = Client::connect(&stack.gateway_addr);
    let reply = client.call(Some("secret".into()), subscribe("s", (10, 10), (20, 20), "nowhere:1"));
    assert!(matches!(reply.msg, Message::Ack { .. }), "{:?}", reply.msg);

    // Direct backend access without the token is refused too.
    let mut direct = Client::connect(&stack.backends[0].addr);
    let reply = direct.call(None, Message::DeleteParts { part_ids: vec!["x".into()] });
    match reply.msg {
        Message::Error { code, .. } => assert_eq!(code, "auth"),
        other => panic!("expected auth error, got {:?}", other),
    }

    stack.shutdown();
}

#[test]
fn malformed_and_unsupported_inputs() {
    let stack = spawn_stack(None);

    // Unsupported message type at the gateway.
    let mut client = Client::connect(&stack.gateway_addr);
    let reply = client.call(None, Message::DeleteParts { part_ids: vec![] });
    match reply.msg {
        Message::Error { code, .. } => assert_eq!(code, "protocol"),
        other => panic!("expected protocol error, got {:?}", other),
    }

    // Garbage bytes get a protocol error, not a hang or crash.
    let stream = TcpStream::connect(&stack.gateway_addr).unwrap();
    stream.set_read_timeout(Some(Duration::from_secs(10))).unwrap();
    let mut w = BufWriter::new(stream.try_clone().unwrap());
    w.write_all(b"this is not json\n").unwrap();
    w.flush().unwrap();
    let mut reader = BufReader::new(stream);
    let env = wire::read_msg(&mut reader).unwrap().expect("error reply");
    assert!(matches!(env.msg, Message::Error { .. }));

    stack.shutdown();
}
