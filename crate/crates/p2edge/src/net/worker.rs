//! Worker node: hosts a model subset, answers predict requests with its
//! local max vote over the hosted models.

use std::io::BufReader;
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::path::Path;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::data::Split;
use crate::error::{Error, Result};
use crate::net::protocol::{codes, read_frame, write_frame, WireMessage, PROTOCOL_VERSION};
use crate::nn::Model;
use crate::store;
use crate::tensor::Tensor;
use crate::vote::{argmax, max_vote, VoteBallot};

fn default_max_batch() -> usize {
    256
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeConfig {
    /// `host:port`; port 0 binds an ephemeral port.
    pub listen_addr: String,
    #[serde(default)]
    pub node_id: Option<String>,
    pub model_paths: Vec<String>,
    /// Full dataset copy held by this node; predict indices address its
    /// test split.
    pub dataset_path: String,
    #[serde(default = "default_max_batch")]
    pub max_batch: usize,
}

struct WorkerState {
    node_id: String,
    models: Vec<(String, Model)>,
    test_features: Tensor,
    n_test: usize,
    dataset_fingerprint: String,
    max_batch: usize,
}

/// A running worker; drop or call [`Worker::shutdown`] to stop accepting.
pub struct Worker {
    addr: SocketAddr,
    shutdown: Arc<AtomicBool>,
    accept_thread: Option<JoinHandle<()>>,
}

impl Worker {
    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn shutdown(mut self) {
        self.stop();
    }

    /// Blocks until the accept loop exits (i.e. forever, for a long-running
    /// worker process).
    pub fn join(mut self) {
        if let Some(handle) = self.accept_thread.take() {
            let _ = handle.join();
        }
    }

    fn stop(&mut self) {
        self.shutdown.store(true, Ordering::SeqCst);
        if let Some(handle) = self.accept_thread.take() {
            let _ = handle.join();
        }
    }
}

impl Drop for Worker {
    fn drop(&mut self) {
        self.stop();
    }
}

/// Loads models and the dataset shard, binds the listen address and starts
/// accepting connections. A model that fails validation refuses the whole
/// worker; hosted models must agree on the class count.
pub fn serve_worker(config: &NodeConfig) -> Result<Worker> {
    if config.model_paths.is_empty() {
        return Err(Error::Config("worker needs at least one model".into()));
    }
    if config.max_batch == 0 {
        return Err(Error::Config("max_batch must be >= 1".into()));
    }
    let models: Vec<(String, Model)> = config
        .model_paths
        .iter()
        .map(|p| {
            let path = Path::new(p);
            let id = path
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| p.clone());
            Ok((id, store::load_model(path)?))
        })
        .collect::<Result<_>>()?;
    let n_classes = models[0].1.n_classes();
    if models.iter().any(|(_, m)| m.n_classes() != n_classes) {
        return Err(Error::Config("hosted models disagree on class count".into()));
    }

    let dataset_path = Path::new(&config.dataset_path);
    let (dataset, fingerprint) = store::load_dataset(dataset_path)?;
    if dataset.n_features() != models[0].1.in_dim() {
        return Err(Error::Config(
            "dataset feature width does not match the hosted models".into(),
        ));
    }

    let state = Arc::new(WorkerState {
        node_id: config
            .node_id
            .clone()
            .unwrap_or_else(|| config.listen_addr.clone()),
        test_features: dataset.split_features(Split::Test),
        n_test: dataset.split_len(Split::Test),
        models,
        dataset_fingerprint: fingerprint,
        max_batch: config.max_batch,
    });

    let listener = TcpListener::bind(&config.listen_addr)?;
    let addr = listener.local_addr()?;
    listener.set_nonblocking(true)?;
    let shutdown = Arc::new(AtomicBool::new(false));

    let accept_thread = {
        let shutdown = Arc::clone(&shutdown);
        let state = Arc::clone(&state);
        std::thread::spawn(move || {
            while !shutdown.load(Ordering::SeqCst) {
                match listener.accept() {
                    Ok((stream, _)) => {
                        let state = Arc::clone(&state);
                        std::thread::spawn(move || {
                            let _ = handle_connection(stream, &state);
                        });
                    }
                    Err(e) if e.kind() == std::io::ErrorKind::WouldBlock => {
                        std::thread::sleep(Duration::from_millis(2));
                    }
                    Err(_) => break,
                }
            }
        })
    };

    log::info!("worker {} listening on {addr}", state.node_id);
    Ok(Worker {
        addr,
        shutdown,
        accept_thread: Some(accept_thread),
    })
}

/// Sessions are independent; each starts with our hello. Any malformed
/// frame gets an error response and the session continues at the next
/// newline — never a silent drop, never a crash.
fn handle_connection(stream: TcpStream, state: &WorkerState) -> Result<()> {
    stream.set_nonblocking(false)?;
    let mut writer = stream.try_clone()?;
    let mut reader = BufReader::new(stream);

    write_frame(
        &mut writer,
        &WireMessage::Hello {
            node_id: state.node_id.clone(),
            model_ids: state.models.iter().map(|(id, _)| id.clone()).collect(),
            protocol_version: PROTOCOL_VERSION,
            dataset_fingerprint: state.dataset_fingerprint.clone(),
        },
    )?;

    loop {
        match read_frame(&mut reader) {
            Ok(None) => return Ok(()),
            Ok(Some(WireMessage::Predict {
                request_id,
                sample_indices,
            })) => match predict(state, &sample_indices) {
                Ok((classes, latency_ms, per_model_ms)) => {
                    write_frame(
                        &mut writer,
                        &WireMessage::Result {
                            request_id,
                            predicted_classes: classes,
                            node_latency_ms: latency_ms,
                        },
                    )?;
                    write_frame(
                        &mut writer,
                        &WireMessage::Metrics {
                            request_id,
                            per_model_ms,
                        },
                    )?;
                }
                Err(e) => {
                    let code = match e {
                        Error::BadIndex(_) => codes::BAD_INDEX,
                        _ => codes::PROTOCOL,
                    };
                    write_frame(
                        &mut writer,
                        &WireMessage::Error {
                            request_id: Some(request_id),
                            code: code.into(),
                            message: e.to_string(),
                        },
                    )?;
                }
            },
            Ok(Some(WireMessage::Bye)) => return Ok(()),
            Ok(Some(other)) => {
                write_frame(
                    &mut writer,
                    &WireMessage::Error {
                        request_id: None,
                        code: codes::PROTOCOL.into(),
                        message: format!("unexpected frame: {other:?}"),
                    },
                )?;
            }
            Err(Error::Protocol(msg)) => {
                write_frame(
                    &mut writer,
                    &WireMessage::Error {
                        request_id: None,
                        code: codes::PROTOCOL.into(),
                        message: msg,
                    },
                )?;
            }
            Err(_) => return Ok(()), // connection-level failure, drop session
        }
    }
}

/// Runs every hosted model on the referenced samples and votes per sample.
fn predict(state: &WorkerState, indices: &[u32]) -> Result<(Vec<u16>, f64, Vec<f64>)> {
    if let Some(&bad) = indices.iter().find(|&&i| i as usize >= state.n_test) {
        return Err(Error::BadIndex(format!(
            "sample index {bad} outside the test split of {} samples",
            state.n_test
        )));
    }
    let n = indices.len();
    let d = state.test_features.shape()[1];
    let n_classes = state.models[0].1.n_classes();
    if n == 0 {
        return Ok((Vec::new(), 0.0, vec![0.0; state.models.len()]));
    }

    let mut batch = Vec::with_capacity(n * d);
    for &i in indices {
        batch.extend_from_slice(state.test_features.row(i as usize));
    }
    let batch = Tensor::new(vec![n, d], batch)?;

    let started = Instant::now();
    let mut votes: Vec<Vec<usize>> = Vec::with_capacity(state.models.len());
    let mut per_model_ms = Vec::with_capacity(state.models.len());
    for (_, model) in &state.models {
        let model_started = Instant::now();
        let mut model_votes = Vec::with_capacity(n);
        let mut row = 0;
        while row < n {
            let end = (row + state.max_batch).min(n);
            let chunk = batch_rows(&batch, row, end, d)?;
            let out = model.forward(&chunk)?;
            for r in 0..end - row {
                model_votes.push(argmax(out.row(r)));
            }
            row = end;
        }
        per_model_ms.push(model_started.elapsed().as_secs_f64() * 1e3);
        votes.push(model_votes);
    }

    let mut classes = Vec::with_capacity(n);
    for s in 0..n {
        let ballot = VoteBallot::new(n_classes, votes.iter().map(|v| v[s]).collect())?;
        classes.push(max_vote(&ballot)? as u16);
    }
    let latency_ms = started.elapsed().as_secs_f64() * 1e3;
    Ok((classes, latency_ms, per_model_ms))
}

fn batch_rows(batch: &Tensor, start: usize, end: usize, d: usize) -> Result<Tensor> {
    Tensor::new(
        vec![end - start, d],
        batch.data()[start * d..end * d].to_vec(),
    )
}
