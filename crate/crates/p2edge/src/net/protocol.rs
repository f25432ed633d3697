//! Newline-delimited JSON frames over TCP.
//!
//! Only sample indices and class ids cross the wire — tensors never do — so
//! text framing stays adequate and debuggable. Every session starts with a
//! `hello` frame carrying the protocol version and the node's dataset
//! fingerprint, which the master verifies before sending work.

use std::io::{BufRead, Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const PROTOCOL_VERSION: u32 = 1;

/// Upper bound on one frame; anything longer is a protocol error.
pub const MAX_FRAME_BYTES: u64 = 1 << 20;

/// Error codes carried by `error` frames.
pub mod codes {
    pub const BAD_INDEX: &str = "E_BAD_INDEX";
    pub const PROTOCOL: &str = "E_PROTOCOL";
    pub const NODE_TIMEOUT: &str = "E_NODE_TIMEOUT";
    pub const SHARD_MISMATCH: &str = "E_SHARD_MISMATCH";
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum WireMessage {
    Hello {
        node_id: String,
        model_ids: Vec<String>,
        protocol_version: u32,
        dataset_fingerprint: String,
    },
    Predict {
        request_id: u64,
        sample_indices: Vec<u32>,
    },
    Result {
        request_id: u64,
        /// Node-level vote per requested sample.
        predicted_classes: Vec<u16>,
        /// Wall clock around model execution on the node.
        node_latency_ms: f64,
    },
    Metrics {
        request_id: u64,
        per_model_ms: Vec<f64>,
    },
    Error {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        request_id: Option<u64>,
        code: String,
        message: String,
    },
    Bye,
}

pub fn write_frame<W: Write>(writer: &mut W, msg: &WireMessage) -> Result<()> {
    let mut line = serde_json::to_vec(msg)?;
    line.push(b'\n');
    writer.write_all(&line)?;
    writer.flush()?;
    Ok(())
}

/// Reads one frame. `Ok(None)` is a clean EOF; a malformed or oversized
/// line is a protocol error (the reader stays aligned on newlines).
pub fn read_frame<R: BufRead>(reader: &mut R) -> Result<Option<WireMessage>> {
    let mut buf = Vec::new();
    let n = reader
        .by_ref()
        .take(MAX_FRAME_BYTES)
        .read_until(b'\n', &mut buf)?;
    if n == 0 {
        return Ok(None);
    }
    if buf.last() != Some(&b'\n') {
        return Err(Error::Protocol(if n as u64 == MAX_FRAME_BYTES {
            format!("frame exceeds {MAX_FRAME_BYTES} bytes")
        } else {
            "unterminated frame".into()
        }));
    }
    serde_json::from_slice(&buf)
        .map(Some)
        .map_err(|e| Error::Protocol(format!("malformed frame: {e}")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::BufReader;

    #[test]
    fn frames_round_trip() {
        let msgs = [
            WireMessage::Hello {
                node_id: "node1".into(),
                model_ids: vec!["m000".into(), "m001".into()],
                protocol_version: PROTOCOL_VERSION,
                dataset_fingerprint: "abc".into(),
            },
            WireMessage::Predict {
                request_id: 1,
                sample_indices: vec![0, 1, 2],
            },
            WireMessage::Result {
                request_id: 1,
                predicted_classes: vec![3, 0, 1],
                node_latency_ms: 1.25,
            },
            WireMessage::Metrics {
                request_id: 1,
                per_model_ms: vec![0.5, 0.75],
            },
            WireMessage::Error {
                request_id: None,
                code: codes::PROTOCOL.into(),
                message: "nope".into(),
            },
            WireMessage::Bye,
        ];
        let mut wire = Vec::new();
        for m in &msgs {
            write_frame(&mut wire, m).unwrap();
        }
        let mut reader = BufReader::new(wire.as_slice());
        for m in &msgs {
            assert_eq!(read_frame(&mut reader).unwrap().as_ref(), Some(m));
        }
        assert_eq!(read_frame(&mut reader).unwrap(), None);
    }

    #[test]
    fn type_tags_match_the_wire_names() {
        let json = serde_json::to_string(&WireMessage::Bye).unwrap();
        assert_eq!(json, r#"{"type":"bye"}"#);
        let json = serde_json::to_string(&WireMessage::Predict {
            request_id: 9,
            sample_indices: vec![],
        })
        .unwrap();
        assert!(json.starts_with(r#"{"type":"predict""#));
    }

    #[test]
    fn malformed_lines_are_protocol_errors() {
        let mut reader = BufReader::new(&b"{\"type\":\"nope\"}\n"[..]);
        assert!(matches!(read_frame(&mut reader), Err(Error::Protocol(_))));
        let mut reader = BufReader::new(&b"not json at all\n"[..]);
        assert!(matches!(read_frame(&mut reader), Err(Error::Protocol(_))));
        let mut reader = BufReader::new(&b"{\"type\":\"bye\""[..]);
        assert!(matches!(read_frame(&mut reader), Err(Error::Protocol(_))));
    }
}
