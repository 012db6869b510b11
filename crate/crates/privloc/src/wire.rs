//! Newline-delimited JSON protocol used on both legs: clients <-> gateway
//! and gateway <-> backends. One UTF-8 JSON object per line; integers as
//! decimal numbers. Unknown fields are ignored on decode.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::crypto::EncryptedRect;
use crate::error::{Error, Result};
use crate::geometry::{Point, Rect};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", content = "body", rename_all = "snake_case")]
pub enum Message {
    Publish {
        node_id: String,
        start: Point,
        end: Point,
        ts: u64,
    },
    Subscribe {
        sub_id: String,
        #[serde(rename = "box")]
        area: Rect,
        callback: String,
    },
    Unsubscribe {
        sub_id: String,
    },
    Notify {
        sub_id: String,
        node_id: String,
        ts: u64,
    },
    /// Gateway -> backend. Carries only encrypted coordinates, never an
    /// identity or a plaintext coordinate field.
    InsertParts {
        parts: Vec<EncryptedRect>,
    },
    QuerySegment {
        ex0: u64,
        ey0: u64,
        ex1: u64,
        ey1: u64,
    },
    DeleteParts {
        part_ids: Vec<String>,
    },
    Ack {
        #[serde(default, skip_serializing_if = "serde_json::Value::is_null")]
        data: serde_json::Value,
    },
    Error {
        code: String,
        message: String,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Envelope {
    pub id: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub auth: Option<String>,
    #[serde(flatten)]
    pub msg: Message,
}

impl Envelope {
    pub fn new(id: u64, auth: Option<String>, msg: Message) -> Self {
        Envelope { id, auth, msg }
    }

    pub fn ack(id: u64, data: serde_json::Value) -> Self {
        Envelope { id, auth: None, msg: Message::Ack { data } }
    }

    pub fn error(id: u64, code: &str, message: String) -> Self {
        Envelope { id, auth: None, msg: Message::Error { code: code.into(), message } }
    }
}

pub fn encode(env: &Envelope) -> Result<Vec<u8>> {
    let mut bytes = serde_json::to_vec(env)?;
    bytes.push(b'\n');
    Ok(bytes)
}

pub fn decode(line: &str) -> Result<Envelope> {
    serde_json::from_str(line).map_err(|e| Error::Protocol(format!("malformed message: {}", e)))
}

pub fn write_msg<W: Write>(w: &mut W, env: &Envelope) -> Result<()> {
    w.write_all(&encode(env)?)?;
    w.flush()?;
    Ok(())
}

/// Read one message; `Ok(None)` on clean EOF.
pub fn read_msg<R: BufRead>(r: &mut R) -> Result<Option<Envelope>> {
    let mut line = String::new();
    if r.read_line(&mut line)? == 0 {
        return Ok(None);
    }
    decode(line.trim_end()).map(Some)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::EncryptedPoint;

    fn samples() -> Vec<Envelope> {
        vec![
            Envelope::new(
                1,
                Some("tok".into()),
                Message::Publish {
                    node_id: "n1".into(),
                    start: Point::new(10, 20),
                    end: Point::new(15, 25),
                    ts: 42,
                },
            ),
            Envelope::new(
                2,
                None,
                Message::Subscribe {
                    sub_id: "s1".into(),
                    area: Rect::new(Point::new(0, 0), Point::new(5, 5)).unwrap(),
                    callback: "127.0.0.1:9000".into(),
                },
            ),
            Envelope::new(3, None, Message::QuerySegment { ex0: 1, ey0: 2, ex1: 3, ey1: 4 }),
            Envelope::new(
                4,
                None,
                Message::InsertParts {
                    parts: vec![EncryptedRect {
                        part_id: "abc".into(),
                        sw: EncryptedPoint { ex: 1, ey: 2 },
                        ne: EncryptedPoint { ex: 3, ey: 4 },
                    }],
                },
            ),
            Envelope::ack(5, serde_json::json!({"matches": ["abc"]})),
            Envelope::error(6, "protocol", "bad".into()),
        ]
    }

    #[test]
    fn round_trip_canonical_bytes() {
        for env in samples() {
            let bytes = encode(&env).unwrap();
            let decoded = decode(std::str::from_utf8(&bytes).unwrap().trim_end()).unwrap();
            assert_eq!(decoded, env);
            // encode(decode(b)) = b for our canonical encoding
            assert_eq!(encode(&decoded).unwrap(), bytes);
        }
    }

    #[test]
    fn unknown_fields_ignored() {
        let line = r#"{"id":1,"type":"unsubscribe","body":{"sub_id":"s","future_field":17},"extra":true}"#;
        let env = decode(line).unwrap();
        assert_eq!(env.msg, Message::Unsubscribe { sub_id: "s".into() });
    }

    #[test]
    fn malformed_is_protocol_error() {
        assert!(decode("not json").is_err());
        assert!(decode(r#"{"id":1,"type":"publish","body":{}}"#).is_err());
    }

    #[test]
    fn backend_leg_schema_has_no_identity_or_plaintext_fields() {
        let envs = vec![
            Envelope::new(1, Some("t".into()), Message::QuerySegment { ex0: 9, ey0: 9, ex1: 9, ey1: 9 }),
            Envelope::new(
                2,
                Some("t".into()),
                Message::InsertParts {
                    parts: vec![EncryptedRect {
                        part_id: "p".into(),
                        sw: EncryptedPoint { ex: 1, ey: 2 },
                        ne: EncryptedPoint { ex: 3, ey: 4 },
                    }],
                },
            ),
            Envelope::new(3, Some("t".into()), Message::DeleteParts { part_ids: vec!["p".into()] }),
        ];
        for env in envs {
            let v: serde_json::Value = serde_json::from_slice(&encode(&env).unwrap()).unwrap();
            let mut keys = Vec::new();
            collect_keys(&v, &mut keys);
            for forbidden in ["node_id", "x", "y", "start", "end", "callback", "sub_id"] {
                assert!(!keys.iter().any(|k| k == forbidden), "leaked field {:?} in {:?}", forbidden, v);
            }
        }
    }

    #[test]
    fn query_segment_body_is_exactly_the_four_encrypted_coords() {
        let env = Envelope::new(1, None, Message::QuerySegment { ex0: 1, ey0: 2, ex1: 3, ey1: 4 });
        let v: serde_json::Value = serde_json::from_slice(&encode(&env).unwrap()).unwrap();
        let body = v.get("body").unwrap().as_object().unwrap();
        let mut keys: Vec<_> = body.keys().cloned().collect();
        keys.sort();
        assert_eq!(keys, vec!["ex0", "ex1", "ey0", "ey1"]);
    }

    fn collect_keys(v: &serde_json::Value, out: &mut Vec<String>) {
        match v {
            serde_json::Value::Object(map) => {
                for (k, val) in map {
                    out.push(k.clone());
                    collect_keys(val, out);
                }
            }
            serde_json::Value::Array(items) => {
                for it in items {
                    collect_keys(it, out);
                }
            }
            _ => {}
        }
    }
}
