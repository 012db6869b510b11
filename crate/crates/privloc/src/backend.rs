//! One untrusted spatial database server: stores encrypted rectangles in a
//! slot-hashed index and answers encrypted segment-intersection queries.
//! This module never touches plaintext coordinate types; everything it sees
//! is already in the encrypted coordinate space, and the slot width arrives
//! as an opaque integer in its configuration.

use std::collections::HashMap;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::net::{TcpListener, TcpStream};
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex, RwLock};

use serde::{Deserialize, Serialize};

use crate::crypto::{EncryptedPoint, EncryptedRect};
use crate::error::{Error, Result};
use crate::geometry::segment_intersects_box;
use crate::wire::{self, Envelope, Message};

type Slot = (u64, u64);

#[derive(Debug, Clone)]
struct StoredBox {
    sw: (u64, u64),
    ne: (u64, u64),
}

/// Two-level structure: hash map from encrypted tile slot to the per-slot
/// rectangle list. Queries never span slots by construction, so lookups
/// only ever touch one slot's entries.
pub struct SpatialIndex {
    slot_width: u64,
    slots: HashMap<Slot, HashMap<String, StoredBox>>,
    part_slot: HashMap<String, Slot>,
}

impl SpatialIndex {
    pub fn new(slot_width: u64) -> Self {
        assert!(slot_width > 0, "slot width must be positive");
        SpatialIndex { slot_width, slots: HashMap::new(), part_slot: HashMap::new() }
    }

    fn slot_of(&self, p: &EncryptedPoint) -> Slot {
        (p.ex / self.slot_width, p.ey / self.slot_width)
    }

    /// Insert a batch; malformed entries are rejected individually and the
    /// rest proceed. A duplicate part_id replaces the old box.
    pub fn insert_parts(&mut self, entries: Vec<EncryptedRect>) -> usize {
        let mut inserted = 0;
        for e in entries {
            if e.sw.ex > e.ne.ex || e.sw.ey > e.ne.ey {
                continue;
            }
            let slot = self.slot_of(&e.sw);
            if slot != self.slot_of(&e.ne) {
                continue;
            }
            if let Some(old) = self.part_slot.insert(e.part_id.clone(), slot) {
                if let Some(m) = self.slots.get_mut(&old) {
                    m.remove(&e.part_id);
                }
            }
            self.slots
                .entry(slot)
                .or_default()
                .insert(e.part_id, StoredBox { sw: (e.sw.ex, e.sw.ey), ne: (e.ne.ex, e.ne.ey) });
            inserted += 1;
        }
        inserted
    }

    /// Part ids of all stored boxes intersecting the closed segment. Both
    /// endpoints must share a slot; the gateway's routing guarantees that.
    pub fn query_segment(&self, p0: EncryptedPoint, p1: EncryptedPoint) -> Result<Vec<String>> {
        let slot = self.slot_of(&p0);
        if slot != self.slot_of(&p1) {
            return Err(Error::Protocol(
                "segment endpoints fall in different slots".into(),
            ));
        }
        let mut out = Vec::new();
        if let Some(entries) = self.slots.get(&slot) {
            for (part_id, b) in entries {
                if segment_intersects_box((p0.ex, p0.ey), (p1.ex, p1.ey), b.sw, b.ne) {
                    out.push(part_id.clone());
                }
            }
        }
        out.sort();
        Ok(out)
    }

    pub fn delete_parts(&mut self, part_ids: &[String]) -> usize {
        let mut deleted = 0;
        for id in part_ids {
            if let Some(slot) = self.part_slot.remove(id) {
                if let Some(m) = self.slots.get_mut(&slot) {
                    if m.remove(id).is_some() {
                        deleted += 1;
                    }
                }
            }
        }
        deleted
    }

    pub fn len(&self) -> usize {
        self.part_slot.len()
    }

    pub fn is_empty(&self) -> bool {
        self.part_slot.is_empty()
    }

    /// Linear scan over every stored entry, slot structure ignored. Used as
    /// the equivalence oracle for `query_segment`.
    pub fn brute_force_query(&self, p0: EncryptedPoint, p1: EncryptedPoint) -> Vec<String> {
        let mut out = Vec::new();
        for entries in self.slots.values() {
            for (part_id, b) in entries {
                if segment_intersects_box((p0.ex, p0.ey), (p1.ex, p1.ey), b.sw, b.ne) {
                    out.push(part_id.clone());
                }
            }
        }
        out.sort();
        out
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
enum LogRecord {
    Insert { parts: Vec<EncryptedRect> },
    Delete { part_ids: Vec<String> },
}

/// TCP-served backend with an optional append-only persistence log.
pub struct BackendService {
    index: RwLock<SpatialIndex>,
    token: Option<String>,
    log: Option<Mutex<BufWriter<std::fs::File>>>,
    shutdown: AtomicBool,
}

impl BackendService {
    pub fn new(slot_width: u64, token: Option<String>, data_dir: Option<PathBuf>) -> Result<Arc<Self>> {
        let mut index = SpatialIndex::new(slot_width);
        let log = match data_dir {
            Some(dir) => {
                std::fs::create_dir_all(&dir)?;
                let path = dir.join("backend.log");
                if path.exists() {
                    let f = std::fs::File::open(&path)?;
                    for line in BufReader::new(f).lines() {
                        let line = line?;
                        if line.trim().is_empty() {
                            continue;
                        }
                        match serde_json::from_str::<LogRecord>(&line)? {
                            LogRecord::Insert { parts } => {
                                index.insert_parts(parts);
                            }
                            LogRecord::Delete { part_ids } => {
                                index.delete_parts(&part_ids);
                            }
                        }
                    }
                }
                let f = std::fs::OpenOptions::new().create(true).append(true).open(&path)?;
                Some(Mutex::new(BufWriter::new(f)))
            }
            None => None,
        };
        Ok(Arc::new(BackendService {
            index: RwLock::new(index),
            token,
            log,
            shutdown: AtomicBool::new(false),
        }))
    }

    fn log_record(&self, rec: &LogRecord) -> Result<()> {
        if let Some(log) = &self.log {
            let mut w = log.lock().unwrap();
            serde_json::to_writer(&mut *w, rec)?;
            w.write_all(b"\n")?;
            w.flush()?;
        }
        Ok(())
    }

    pub fn insert_parts(&self, parts: Vec<EncryptedRect>) -> Result<usize> {
        self.log_record(&LogRecord::Insert { parts: parts.clone() })?;
        Ok(self.index.write().unwrap().insert_parts(parts))
    }

    pub fn query_segment(&self, p0: EncryptedPoint, p1: EncryptedPoint) -> Result<Vec<String>> {
        let index = self.index.read().unwrap();
        let got = index.query_segment(p0, p1)?;
        // Continuous brute-force equivalence in debug builds.
        debug_assert_eq!(got, index.brute_force_query(p0, p1));
        Ok(got)
    }

    pub fn delete_parts(&self, part_ids: &[String]) -> Result<usize> {
        self.log_record(&LogRecord::Delete { part_ids: part_ids.to_vec() })?;
        Ok(self.index.write().unwrap().delete_parts(part_ids))
    }

    pub fn stored_parts(&self) -> usize {
        self.index.read().unwrap().len()
    }

    pub fn stop(&self) {
        self.shutdown.store(true, Ordering::SeqCst);
    }

    /// Serve connections on the listener until `stop` is called. Blocks.
    pub fn serve(self: &Arc<Self>, listener: TcpListener) -> Result<()> {
        listener.set_nonblocking(true)?;
        loop {
            if self.shutdown.load(Ordering::SeqCst) {
                return Ok(());
            }
            match listener.accept() {
                Ok((stream, _)) => {
                    stream.set_nonblocking(false)?;
                    let svc = Arc::clone(self);
                    std::thread::spawn(move || {
                        let _ = svc.handle_conn(stream);
                    });
                }
                Err(ref e) if e.kind() == std::io::ErrorKind::WouldBlock => {
                    std::thread::sleep(std::time::Duration::from_millis(10));
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
                    // One error reply, then close.
                    let _ = wire::write_msg(&mut writer, &Envelope::error(0, "protocol", e.to_string()));
                    return Ok(());
                }
            };
            if self.token.is_some() && env.auth != self.token {
                wire::write_msg(&mut writer, &Envelope::error(env.id, "auth", "bad token".into()))?;
                return Ok(());
            }
            let reply = match env.msg {
                Message::InsertParts { parts } => match self.insert_parts(parts) {
                    Ok(n) => Envelope::ack(env.id, serde_json::json!({ "inserted": n })),
                    Err(e) => Envelope::error(env.id, "internal", e.to_string()),
                },
                Message::QuerySegment { ex0, ey0, ex1, ey1 } => {
                    let p0 = EncryptedPoint { ex: ex0, ey: ey0 };
                    let p1 = EncryptedPoint { ex: ex1, ey: ey1 };
                    match self.query_segment(p0, p1) {
                        Ok(matches) => Envelope::ack(env.id, serde_json::json!({ "matches": matches })),
                        Err(e) => Envelope::error(env.id, "protocol", e.to_string()),
                    }
                }
                Message::DeleteParts { part_ids } => match self.delete_parts(&part_ids) {
                    Ok(n) => Envelope::ack(env.id, serde_json::json!({ "deleted": n })),
                    Err(e) => Envelope::error(env.id, "internal", e.to_string()),
                },
                _ => Envelope::error(env.id, "protocol", "unsupported message type".into()),
            };
            wire::write_msg(&mut writer, &reply)?;
        }
    }
}
