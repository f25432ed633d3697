//! Distributed inference: worker nodes host model subsets and vote locally;
//! a master fans a sample request out to every node, combines the node
//! votes, and reports latency.

mod master;
mod protocol;
mod worker;

pub use master::{run_master, MasterConfig, MasterReport, NodeReport, DEFAULT_NODE_TIMEOUT};
pub use protocol::{codes, read_frame, write_frame, WireMessage, MAX_FRAME_BYTES, PROTOCOL_VERSION};
pub use worker::{serve_worker, NodeConfig, Worker};
