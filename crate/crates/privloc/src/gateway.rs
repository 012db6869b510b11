//! The trusted server: accepts plaintext publishes and subscribes, runs the
//! encryption pipeline, splits and batches subscriptions, routes movement
//! queries to a backend whose tiling fits the movement, and translates
//! matched part ids back into subscriber notifications. This is the only
//! component that ever holds key material.

use std::collections::{BTreeSet, HashMap};
use std::io::{BufReader, BufWriter};
use std::net::{TcpListener, TcpStream};
use std::path::Path;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::crypto::{EncryptedPoint, EncryptedRect, KeySet, TileCipher};
use crate::error::{Error, Result};
use crate::geometry::{self, Point, Rect, Segment};
use crate::params::{CipherOptions, SystemParams};
use crate::wire::{self, Envelope, Message};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MovementReport {
    pub node_id: String,
    pub start: Point,
    pub end: Point,
    /// Monotonic milliseconds.
    pub ts: u64,
}

impl MovementReport {
    pub fn segment(&self) -> Segment {
        Segment::new(self.start, self.end)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Subscription {
    pub sub_id: String,
    #[serde(rename = "box")]
    pub area: Rect,
    pub callback: String,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Notification {
    pub sub_id: String,
    pub node_id: String,
    pub ts: u64,
}

/// How the gateway picks among the tilings that fit a movement. First-fit
/// follows the lookup order of the server-choice routine; random choice
/// spreads queries evenly across the three backends. Both are correct: the
/// subscriptions are stored on every backend.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Routing {
    #[default]
    Random,
    FirstFit,
}

#[derive(Debug, Clone)]
pub struct GatewayConfig {
    /// Maximum subscription box side length; defaults to tile_len.
    pub max_sub_side: u64,
    pub routing: Routing,
    /// Optional liveness deadline for partial batches. None = strict
    /// threshold, partial batches only leave on an explicit admin flush.
    pub flush_timeout: Option<Duration>,
}

impl GatewayConfig {
    pub fn default_for(params: &SystemParams) -> Self {
        GatewayConfig { max_sub_side: params.tile_len, routing: Routing::Random, flush_timeout: None }
    }
}

/// One backend as seen from the gateway.
pub trait BackendHandle: Send + Sync {
    fn insert_parts(&self, parts: Vec<EncryptedRect>) -> Result<usize>;
    fn query_segment(&self, p0: EncryptedPoint, p1: EncryptedPoint) -> Result<Vec<String>>;
    fn delete_parts(&self, part_ids: &[String]) -> Result<usize>;
}

impl BackendHandle for crate::backend::BackendService {
    fn insert_parts(&self, parts: Vec<EncryptedRect>) -> Result<usize> {
        crate::backend::BackendService::insert_parts(self, parts)
    }
    fn query_segment(&self, p0: EncryptedPoint, p1: EncryptedPoint) -> Result<Vec<String>> {
        crate::backend::BackendService::query_segment(self, p0, p1)
    }
    fn delete_parts(&self, part_ids: &[String]) -> Result<usize> {
        crate::backend::BackendService::delete_parts(self, part_ids)
    }
}

/// Wire client for a remote backend. One connection, lazily established,
/// re-established after failures.
pub struct TcpBackend {
    addr: String,
    token: Option<String>,
    conn: Mutex<Option<(BufReader<TcpStream>, BufWriter<TcpStream>)>>,
    next_id: AtomicU64,
}

impl TcpBackend {
    pub fn connect(addr: String, token: Option<String>) -> Self {
        TcpBackend { addr, token, conn: Mutex::new(None), next_id: AtomicU64::new(1) }
    }

    fn round_trip(&self, msg: Message) -> Result<serde_json::Value> {
        let mut guard = self.conn.lock().unwrap();
        if guard.is_none() {
            let stream = TcpStream::connect(&self.addr)
                .map_err(|e| Error::BackendUnreachable(format!("{}: {}", self.addr, e)))?;
            let reader = BufReader::new(stream.try_clone()?);
            *guard = Some((reader, BufWriter::new(stream)));
        }
        let id = self.next_id.fetch_add(1, Ordering::Relaxed);
        let env = Envelope::new(id, self.token.clone(), msg);
        let (reader, writer) = guard.as_mut().unwrap();
        let result = (|| -> Result<Envelope> {
            wire::write_msg(writer, &env)?;
            wire::read_msg(reader)?
                .ok_or_else(|| Error::BackendUnreachable(format!("{}: connection closed", self.addr)))
        })();
        let reply = match result {
            Ok(r) => r,
            Err(e) => {
                *guard = None; // force reconnect next time
                return Err(e);
            }
        };
        match reply.msg {
            Message::Ack { data } => Ok(data),
            Message::Error { code, message } => {
                Err(Error::Protocol(format!("backend error {}: {}", code, message)))
            }
            _ => Err(Error::Protocol("unexpected backend reply".into())),
        }
    }
}

impl BackendHandle for TcpBackend {
    fn insert_parts(&self, parts: Vec<EncryptedRect>) -> Result<usize> {
        let data = self.round_trip(Message::InsertParts { parts })?;
        Ok(data.get("inserted").and_then(|v| v.as_u64()).unwrap_or(0) as usize)
    }

    fn query_segment(&self, p0: EncryptedPoint, p1: EncryptedPoint) -> Result<Vec<String>> {
        let data = self.round_trip(Message::QuerySegment {
            ex0: p0.ex,
            ey0: p0.ey,
            ex1: p1.ex,
            ey1: p1.ey,
        })?;
        Ok(data
            .get("matches")
            .and_then(|v| v.as_array())
            .map(|a| a.iter().filter_map(|v| v.as_str().map(String::from)).collect())
            .unwrap_or_default())
    }

    fn delete_parts(&self, part_ids: &[String]) -> Result<usize> {
        let data = self.round_trip(Message::DeleteParts { part_ids: part_ids.to_vec() })?;
        Ok(data.get("deleted").and_then(|v| v.as_u64()).unwrap_or(0) as usize)
    }
}

/// Asynchronous delivery of notifications to subscriber callbacks.
pub trait NotifySink: Send + Sync {
    fn deliver(&self, callback: &str, notification: &Notification);
}

/// Delivers each notification over a fresh TCP connection; best effort.
pub struct TcpNotifySink;

impl NotifySink for TcpNotifySink {
    fn deliver(&self, callback: &str, notification: &Notification) {
        let callback = callback.to_string();
        let n = notification.clone();
        std::thread::spawn(move || {
            if let Ok(stream) = TcpStream::connect(&callback) {
                let mut w = BufWriter::new(stream);
                let env = Envelope::new(
                    0,
                    None,
                    Message::Notify { sub_id: n.sub_id, node_id: n.node_id, ts: n.ts },
                );
                let _ = wire::write_msg(&mut w, &env);
            }
        });
    }
}

struct SubEntry {
    callback: String,
    parts: [Vec<String>; 3],
    uploaded: bool,
}

struct PendingPart {
    sub_id: String,
    rect: EncryptedRect,
}

#[derive(Default)]
struct GwState {
    subs: HashMap<String, SubEntry>,
    /// (backend index, part_id) -> sub_id.
    part_map: HashMap<(usize, String), String>,
    pending: [Vec<PendingPart>; 3],
    pending_subs: usize,
    first_pending_at: Option<Instant>,
}

pub struct Gateway {
    params: SystemParams,
    config: GatewayConfig,
    ciphers: [TileCipher; 3],
    backends: [Arc<dyn BackendHandle>; 3],
    state: Mutex<GwState>,
    rng: Mutex<ChaCha20Rng>,
    sink: Option<Arc<dyn NotifySink>>,
}

impl Gateway {
    pub fn new(
        params: SystemParams,
        config: GatewayConfig,
        keys: KeySet,
        opts: CipherOptions,
        backends: [Arc<dyn BackendHandle>; 3],
        sink: Option<Arc<dyn NotifySink>>,
        shuffle_seed: Option<u64>,
    ) -> Result<Self> {
        params.validate()?;
        let [k1, k2, k3] = keys.keys;
        let ciphers = [
            TileCipher::with_options(k1, params.clone(), opts),
            TileCipher::with_options(k2, params.clone(), opts),
            TileCipher::with_options(k3, params.clone(), opts),
        ];
        let rng = match shuffle_seed {
            Some(s) => ChaCha20Rng::seed_from_u64(s),
            None => ChaCha20Rng::from_rng(rand::rngs::OsRng)
                .map_err(|e| Error::Config(format!("rng init: {}", e)))?,
        };
        Ok(Gateway {
            params,
            config,
            ciphers,
            backends,
            state: Mutex::new(GwState::default()),
            rng: Mutex::new(rng),
            sink,
        })
    }

    pub fn params(&self) -> &SystemParams {
        &self.params
    }

    /// Width of one encrypted tile slot; backends need this (and only this)
    /// piece of configuration.
    pub fn slot_width(&self) -> u64 {
        self.ciphers[0].slot_width()
    }

    fn validate_report(&self, r: &MovementReport) -> Result<()> {
        for p in [r.start, r.end] {
            if !p.in_bounds(&self.params) {
                return Err(Error::OutOfBounds(p.x, p.y));
            }
        }
        let dx = r.start.x.abs_diff(r.end.x) as u128;
        let dy = r.start.y.abs_diff(r.end.y) as u128;
        let max = self.params.max_move as u128;
        if dx * dx + dy * dy > max * max {
            return Err(Error::DistanceViolation {
                got: ((dx * dx + dy * dy) as f64).sqrt(),
                max: self.params.max_move,
            });
        }
        Ok(())
    }

    fn route(&self, seg: &Segment) -> Result<usize> {
        match self.config.routing {
            Routing::FirstFit => geometry::choose_server(seg, &self.params)?.ok_or(Error::NoServerFits),
            Routing::Random => {
                let mut fitting = Vec::with_capacity(3);
                for (i, &z) in self.params.offsets.iter().enumerate() {
                    let a = geometry::coordinates_on_tile(seg.p0, z, &self.params)?;
                    let b = geometry::coordinates_on_tile(seg.p1, z, &self.params)?;
                    if a.num == b.num {
                        fitting.push(i);
                    }
                }
                match fitting.len() {
                    0 => Err(Error::NoServerFits),
                    n => Ok(fitting[self.rng.lock().unwrap().gen_range(0..n)]),
                }
            }
        }
    }

    /// Process one movement report: route, encrypt, query, resolve matched
    /// part ids to subscriptions, deduplicate, notify.
    pub fn handle_publish(&self, r: &MovementReport) -> Result<Vec<Notification>> {
        self.validate_report(r)?;
        let seg = r.segment();
        let i = self.route(&seg)?;
        let z = self.params.offsets[i];
        let p0 = self.ciphers[i].encrypt_point(seg.p0, z)?;
        let p1 = self.ciphers[i].encrypt_point(seg.p1, z)?;
        let matches = self.backends[i].query_segment(p0, p1)?;

        let mut hits: BTreeSet<(String, String)> = BTreeSet::new();
        {
            let state = self.state.lock().unwrap();
            for part_id in matches {
                if let Some(sub_id) = state.part_map.get(&(i, part_id)) {
                    if let Some(sub) = state.subs.get(sub_id) {
                        hits.insert((sub_id.clone(), sub.callback.clone()));
                    }
                }
            }
        }
        let notifications: Vec<Notification> = hits
            .iter()
            .map(|(sub_id, _)| Notification {
                sub_id: sub_id.clone(),
                node_id: r.node_id.clone(),
                ts: r.ts,
            })
            .collect();
        if let Some(sink) = &self.sink {
            for ((_, callback), n) in hits.iter().zip(&notifications) {
                sink.deliver(callback, n);
            }
        }
        Ok(notifications)
    }

    /// Split, encrypt and buffer a subscription for all three backends.
    /// Parts are uploaded once batch_k genuine subscriptions accumulate,
    /// in shuffled order.
    pub fn handle_subscribe(&self, s: &Subscription) -> Result<()> {
        if !s.area.sw.in_bounds(&self.params) || !s.area.ne.in_bounds(&self.params) {
            return Err(Error::OutOfBounds(s.area.ne.x, s.area.ne.y));
        }
        let side_x = s.area.ne.x - s.area.sw.x;
        let side_y = s.area.ne.y - s.area.sw.y;
        if side_x > self.config.max_sub_side || side_y > self.config.max_sub_side {
            return Err(Error::Validation(format!(
                "subscription box {}x{} exceeds maximum side {}",
                side_x, side_y, self.config.max_sub_side
            )));
        }

        let mut per_backend: [Vec<EncryptedRect>; 3] = Default::default();
        for (i, &z) in self.params.offsets.iter().enumerate() {
            for (num, local) in geometry::split_rect(&s.area, z, &self.params)? {
                per_backend[i].push(self.ciphers[i].encrypt_rect(num, &local)?);
            }
        }

        let mut state = self.state.lock().unwrap();
        if state.subs.contains_key(&s.sub_id) {
            return Err(Error::Validation(format!("duplicate sub_id {}", s.sub_id)));
        }
        let mut entry = SubEntry {
            callback: s.callback.clone(),
            parts: Default::default(),
            uploaded: false,
        };
        for (i, parts) in per_backend.into_iter().enumerate() {
            for rect in parts {
                state.part_map.insert((i, rect.part_id.clone()), s.sub_id.clone());
                entry.parts[i].push(rect.part_id.clone());
                state.pending[i].push(PendingPart { sub_id: s.sub_id.clone(), rect });
            }
        }
        state.subs.insert(s.sub_id.clone(), entry);
        state.pending_subs += 1;
        if state.first_pending_at.is_none() {
            state.first_pending_at = Some(Instant::now());
        }
        if state.pending_subs >= self.params.batch_k {
            self.flush_locked(&mut state)?;
        }
        Ok(())
    }

    fn flush_locked(&self, state: &mut GwState) -> Result<()> {
        for i in 0..3 {
            if state.pending[i].is_empty() {
                continue;
            }
            let mut batch: Vec<PendingPart> = std::mem::take(&mut state.pending[i]);
            batch.shuffle(&mut *self.rng.lock().unwrap());
            let sub_ids: Vec<String> = batch.iter().map(|p| p.sub_id.clone()).collect();
            let rects: Vec<EncryptedRect> = batch.into_iter().map(|p| p.rect).collect();
            self.backends[i].insert_parts(rects)?;
            for sub_id in sub_ids {
                if let Some(sub) = state.subs.get_mut(&sub_id) {
                    sub.uploaded = true;
                }
            }
        }
        state.pending_subs = 0;
        state.first_pending_at = None;
        Ok(())
    }

    /// Administrative flush: uploads whatever is pending, even a partial
    /// batch. Used on shutdown and by the optional liveness timer.
    pub fn flush(&self) -> Result<()> {
        let mut state = self.state.lock().unwrap();
        self.flush_locked(&mut state)
    }

    /// Flush a partial batch whose deadline has passed, if a flush timeout
    /// is configured.
    pub fn maybe_flush_expired(&self) -> Result<()> {
        let Some(timeout) = self.config.flush_timeout else {
            return Ok(());
        };
        let mut state = self.state.lock().unwrap();
        if let Some(at) = state.first_pending_at {
            if at.elapsed() >= timeout {
                self.flush_locked(&mut state)?;
            }
        }
        Ok(())
    }

    /// Which subscription owns a stored part, if any.
    pub fn sub_of_part(&self, backend: usize, part_id: &str) -> Option<String> {
        self.state
            .lock()
            .unwrap()
            .part_map
            .get(&(backend, part_id.to_string()))
            .cloned()
    }

    pub fn unsubscribe(&self, sub_id: &str) -> Result<()> {
        let mut state = self.state.lock().unwrap();
        let entry = state
            .subs
            .remove(sub_id)
            .ok_or_else(|| Error::NotFound(sub_id.to_string()))?;
        for i in 0..3 {
            for part_id in &entry.parts[i] {
                state.part_map.remove(&(i, part_id.clone()));
            }
        }
        if entry.uploaded {
            for i in 0..3 {
                self.backends[i].delete_parts(&entry.parts[i])?;
            }
        } else {
            // Still buffered: remove before any upload happens.
            for i in 0..3 {
                state.pending[i].retain(|p| p.sub_id != sub_id);
            }
            state.pending_subs = state.pending_subs.saturating_sub(1);
        }
        Ok(())
    }
}

/// Generate three independent master keys and persist them to the key file.
pub fn setup_keys(params: &SystemParams, path: &Path) -> Result<KeySet> {
    params.validate()?;
    let mut rng = rand::rngs::OsRng;
    let mut seed = [0u8; 32];
    rng.fill_bytes(&mut seed);
    let mut chacha = ChaCha20Rng::from_seed(seed);
    let keys = KeySet::generate(&mut chacha, params.lambda);
    keys.save(path)?;
    Ok(keys)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LogLevel {
    Debug,
    Info,
}

/// Gateway TCP front end: speaks the wire protocol to clients and emits
/// structured JSON log lines. Plaintext coordinates are redacted at info
/// level and above.
pub struct GatewayServer {
    pub gateway: Arc<Gateway>,
    token: Option<String>,
    log_level: LogLevel,
    shutdown: AtomicBool,
}

impl GatewayServer {
    pub fn new(gateway: Arc<Gateway>, token: Option<String>, log_level: LogLevel) -> Arc<Self> {
        Arc::new(GatewayServer { gateway, token, log_level, shutdown: AtomicBool::new(false) })
    }

    pub fn stop(&self) {
        self.shutdown.store(true, Ordering::SeqCst);
    }

    fn log(&self, event: &str, detail: serde_json::Value) {
        eprintln!(
            "{}",
            serde_json::json!({ "event": event, "detail": detail })
        );
    }

    pub fn serve(self: &Arc<Self>, listener: TcpListener) -> Result<()> {
        listener.set_nonblocking(true)?;
        loop {
            if self.shutdown.load(Ordering::SeqCst) {
                self.gateway.flush()?;
                return Ok(());
            }
            self.gateway.maybe_flush_expired()?;
            match listener.accept() {
                Ok((stream, _)) => {
                    stream.set_nonblocking(false)?;
                    let srv = Arc::clone(self);
                    std::thread::spawn(move || {
                        let _ = srv.handle_conn(stream);
                    });
                }
                Err(ref e) if e.kind() == std::io::ErrorKind::WouldBlock => {
                    std::thread::sleep(Duration::from_millis(10));
                }
                Err(e) => return Err(e.into()),
            }
        }
    }

    fn handle_conn(&self, stream: TcpStream) -> Result<()> {
        let mut reader = BufReader::new(stream.try_clone()?);
        let mut writer = stream;
        loop {
            let env = match wire::read_msg(&mut reader) {
                Ok(Some(env)) => env,
                Ok(None) => return Ok(()),
                Err(e) => {
                    let _ = wire::write_msg(&mut writer, &Envelope::error(0, "protocol", e.to_string()));
                    return Ok(());
                }
            };
            if self.token.is_some() && env.auth != self.token {
                wire::write_msg(&mut writer, &Envelope::error(env.id, "auth", "bad token".into()))?;
                return Ok(());
            }
            let reply = self.dispatch(env.id, env.msg);
            wire::write_msg(&mut writer, &reply)?;
        }
    }

    fn dispatch(&self, id: u64, msg: Message) -> Envelope {
        match msg {
            Message::Publish { node_id, start, end, ts } => {
                let report = MovementReport { node_id: node_id.clone(), start, end, ts };
                let detail = if self.log_level >= LogLevel::Info {
                    serde_json::json!({ "node_id": node_id, "coords": "<redacted>", "ts": ts })
                } else {
                    serde_json::json!({ "node_id": node_id, "start": start, "end": end, "ts": ts })
                };
                self.log("publish", detail);
                match self.gateway.handle_publish(&report) {
                    Ok(notifications) => {
                        for n in &notifications {
                            self.log("notify", serde_json::json!({ "sub_id": n.sub_id }));
                        }
                        let notified: Vec<&str> = notifications.iter().map(|n| n.sub_id.as_str()).collect();
                        Envelope::ack(id, serde_json::json!({ "notified": notified }))
                    }
                    Err(e) => Envelope::error(id, error_code(&e), e.to_string()),
                }
            }
            Message::Subscribe { sub_id, area, callback } => {
                let detail = if self.log_level >= LogLevel::Info {
                    serde_json::json!({ "sub_id": sub_id, "box": "<redacted>" })
                } else {
                    serde_json::json!({ "sub_id": sub_id, "box": area })
                };
                self.log("subscribe", detail);
                let sub = Subscription { sub_id, area, callback };
                match self.gateway.handle_subscribe(&sub) {
                    Ok(()) => Envelope::ack(id, serde_json::Value::Null),
                    Err(e) => Envelope::error(id, error_code(&e), e.to_string()),
                }
            }
            Message::Unsubscribe { sub_id } => match self.gateway.unsubscribe(&sub_id) {
                Ok(()) => Envelope::ack(id, serde_json::Value::Null),
                Err(e) => Envelope::error(id, error_code(&e), e.to_string()),
            },
            _ => Envelope::error(id, "protocol", "unsupported message type".into()),
        }
    }
}

fn error_code(e: &Error) -> &'static str {
    match e {
        Error::DistanceViolation { .. } => "distance_violation",
        Error::NotFound(_) => "not_found",
        Error::OutOfBounds(_, _) => "out_of_bounds",
        Error::Validation(_) => "invalid",
        Error::BackendUnreachable(_) => "retriable",
        Error::NoServerFits => "internal",
        _ => "internal",
    }
}
