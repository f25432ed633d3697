//! Master coordinator: verifies every node's handshake, requests
//! predictions on `[0, n_samples)` from all nodes concurrently, combines the
//! node votes per sample and reports accuracy plus latency.

use std::io::BufReader;
use std::net::TcpStream;
use std::path::PathBuf;
use std::sync::mpsc;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::data::Split;
use crate::error::{Error, Result};
use crate::net::protocol::{read_frame, write_frame, WireMessage, PROTOCOL_VERSION};
use crate::store;
use crate::vote::{max_vote, VoteBallot};

pub const DEFAULT_NODE_TIMEOUT: Duration = Duration::from_secs(30);

#[derive(Debug, Clone)]
pub struct MasterConfig {
    pub nodes: Vec<String>,
    pub n_samples: usize,
    /// The master's own dataset copy: labels for accuracy, fingerprint for
    /// the handshake.
    pub dataset_path: PathBuf,
    pub timeout: Duration,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeReport {
    pub node_id: String,
    pub addr: String,
    pub model_ids: Vec<String>,
    /// Model execution time reported by the node.
    pub node_latency_ms: f64,
    /// Wall clock around this node's request/response, measured here.
    pub request_ms: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub per_model_ms: Option<Vec<f64>>,
    pub predicted_classes: Vec<u16>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MasterReport {
    pub n_samples: usize,
    pub accuracy: f64,
    pub final_predictions: Vec<u16>,
    /// Wall clock around the whole fan-out, join and combination.
    pub end_to_end_ms: f64,
    pub nodes: Vec<NodeReport>,
}

/// Runs one distributed prediction round. Any node failure — handshake
/// mismatch, malformed reply, timeout — aborts the round.
pub fn run_master(config: &MasterConfig) -> Result<MasterReport> {
    if config.nodes.is_empty() {
        return Err(Error::Parameter("master needs at least one node".into()));
    }
    let (dataset, fingerprint) = store::load_dataset(&config.dataset_path)?;
    let n_test = dataset.split_len(Split::Test);
    if config.n_samples > n_test {
        return Err(Error::Parameter(format!(
            "{} samples requested but the test split has {n_test}",
            config.n_samples
        )));
    }
    let labels = dataset.split_labels(Split::Test);
    let n_classes = dataset.n_classes;
    let indices: Vec<u32> = (0..config.n_samples as u32).collect();

    let started = Instant::now();
    let (tx, rx) = mpsc::channel();
    for (slot, addr) in config.nodes.iter().enumerate() {
        let tx = tx.clone();
        let addr = addr.clone();
        let indices = indices.clone();
        let fingerprint = fingerprint.clone();
        let timeout = config.timeout;
        std::thread::spawn(move || {
            let outcome = query_node(&addr, &indices, &fingerprint, timeout);
            let _ = tx.send((slot, outcome));
        });
    }
    drop(tx);

    let deadline = started + config.timeout;
    let mut reports: Vec<Option<NodeReport>> = vec![None; config.nodes.len()];
    for _ in 0..config.nodes.len() {
        let remaining = deadline
            .checked_duration_since(Instant::now())
            .unwrap_or(Duration::ZERO);
        match rx.recv_timeout(remaining) {
            Ok((slot, Ok(report))) => reports[slot] = Some(report),
            Ok((slot, Err(e))) => {
                // A socket-level timeout is still a node timeout.
                return Err(match e {
                    Error::Io(io)
                        if matches!(
                            io.kind(),
                            std::io::ErrorKind::TimedOut | std::io::ErrorKind::WouldBlock
                        ) =>
                    {
                        Error::NodeTimeout(format!("{}: {io}", config.nodes[slot]))
                    }
                    other => other,
                });
            }
            Err(_) => {
                let missing: Vec<&str> = reports
                    .iter()
                    .zip(&config.nodes)
                    .filter(|(r, _)| r.is_none())
                    .map(|(_, a)| a.as_str())
                    .collect();
                return Err(Error::NodeTimeout(format!(
                    "no result from {} within {:?}",
                    missing.join(", "),
                    config.timeout
                )));
            }
        }
    }
    let nodes: Vec<NodeReport> = reports
        .into_iter()
        .map(|r| r.expect("all slots were filled"))
        .collect();

    for node in &nodes {
        if node.predicted_classes.len() != config.n_samples {
            return Err(Error::Protocol(format!(
                "node {} returned {} predictions for {} samples",
                node.node_id,
                node.predicted_classes.len(),
                config.n_samples
            )));
        }
        if let Some(&bad) = node
            .predicted_classes
            .iter()
            .find(|&&c| c as usize >= n_classes)
        {
            return Err(Error::Protocol(format!(
                "node {} voted for class {bad}, dataset has {n_classes}",
                node.node_id
            )));
        }
    }

    // Stage-2 vote over the node-level results, per sample.
    let mut final_predictions = Vec::with_capacity(config.n_samples);
    let mut correct = 0usize;
    for s in 0..config.n_samples {
        let ballot = VoteBallot::new(
            n_classes,
            nodes.iter().map(|n| n.predicted_classes[s] as usize).collect(),
        )?;
        let class = max_vote(&ballot)? as u16;
        if class == labels[s] {
            correct += 1;
        }
        final_predictions.push(class);
    }
    let accuracy = if config.n_samples == 0 {
        0.0
    } else {
        correct as f64 / config.n_samples as f64
    };
    let end_to_end_ms = started.elapsed().as_secs_f64() * 1e3;

    Ok(MasterReport {
        n_samples: config.n_samples,
        accuracy,
        final_predictions,
        end_to_end_ms,
        nodes,
    })
}

fn query_node(
    addr: &str,
    indices: &[u32],
    fingerprint: &str,
    timeout: Duration,
) -> Result<NodeReport> {
    let request_started = Instant::now();
    let sock_addr = addr
        .parse()
        .map_err(|e| Error::Parameter(format!("bad node address {addr}: {e}")))?;
    let stream = TcpStream::connect_timeout(&sock_addr, timeout)?;
    stream.set_read_timeout(Some(timeout))?;
    stream.set_write_timeout(Some(timeout))?;
    let mut writer = stream.try_clone()?;
    let mut reader = BufReader::new(stream);

    let (node_id, model_ids) = match read_frame(&mut reader)? {
        Some(WireMessage::Hello {
            node_id,
            model_ids,
            protocol_version,
            dataset_fingerprint,
        }) => {
            if protocol_version != PROTOCOL_VERSION {
                return Err(Error::Protocol(format!(
                    "node {addr} speaks protocol {protocol_version}, expected {PROTOCOL_VERSION}"
                )));
            }
            if dataset_fingerprint != fingerprint {
                return Err(Error::ShardMismatch(format!(
                    "node {addr} holds shard {dataset_fingerprint}, master holds {fingerprint}"
                )));
            }
            (node_id, model_ids)
        }
        Some(other) => {
            return Err(Error::Protocol(format!(
                "node {addr} opened with {other:?} instead of hello"
            )))
        }
        None => {
            return Err(Error::Protocol(format!(
                "node {addr} closed before the handshake"
            )))
        }
    };

    write_frame(
        &mut writer,
        &WireMessage::Predict {
            request_id: 1,
            sample_indices: indices.to_vec(),
        },
    )?;

    let (predicted_classes, node_latency_ms) = match read_frame(&mut reader)? {
        Some(WireMessage::Result {
            request_id: 1,
            predicted_classes,
            node_latency_ms,
        }) => (predicted_classes, node_latency_ms),
        Some(WireMessage::Error { code, message, .. }) => {
            return Err(Error::Protocol(format!("node {addr}: {code}: {message}")))
        }
        Some(other) => {
            return Err(Error::Protocol(format!(
                "node {addr} answered predict with {other:?}"
            )))
        }
        None => return Err(Error::Protocol(format!("node {addr} closed mid-request"))),
    };

    let per_model_ms = match read_frame(&mut reader)? {
        Some(WireMessage::Metrics {
            request_id: 1,
            per_model_ms,
        }) => Some(per_model_ms),
        _ => None,
    };

    let _ = write_frame(&mut writer, &WireMessage::Bye);

    Ok(NodeReport {
        node_id,
        addr: addr.to_string(),
        model_ids,
        node_latency_ms,
        request_ms: request_started.elapsed().as_secs_f64() * 1e3,
        per_model_ms,
        predicted_classes,
    })
}
