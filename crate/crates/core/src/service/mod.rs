//! The real-time recognition link: chunked frames in over UDP, recognised
//! modes and their frequencies back out, plus a JSON bridge over TCP.

mod bench;
mod bridge;
mod queue;
mod reassembly;
mod server;
pub mod wire;

use std::net::{IpAddr, Ipv4Addr};
use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use self::bench::{full_link_latency, send_frame, LinkStats};
pub use self::bridge::{BridgeReply, BridgeRequest};
pub use self::queue::{FreshestQueue, Pop};
pub use self::reassembly::{Completion, Reassembler};
pub use self::server::{serve, Recognition, Recognizer, ServiceHandle};
pub use self::wire::{encode_frame, FrameChunk, ResultMessage, Status, WireError};

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error("invalid service config: {0}")]
    Config(String),
    #[error("cannot bind {role} socket on {addr}: {source}")]
    Bind { role: &'static str, addr: String, source: std::io::Error },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Wire(#[from] WireError),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ServiceConfig {
    pub bind_addr: IpAddr,
    pub listen_port: u16,
    pub reply_port: u16,
    pub bridge_port: u16,
    pub reassembly_timeout_ms: u64,
    pub confidence_floor: f32,
    pub queue_capacity: usize,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            bind_addr: IpAddr::V4(Ipv4Addr::LOCALHOST),
            listen_port: 9000,
            reply_port: 9001,
            bridge_port: 9002,
            reassembly_timeout_ms: 200,
            confidence_floor: 0.5,
            queue_capacity: 4,
        }
    }
}

impl ServiceConfig {
    /// Port 0 asks the OS for an ephemeral port and is exempt from the
    /// distinctness check.
    pub fn validate(&self) -> Result<(), ServiceError> {
        let ports = [("listen", self.listen_port), ("reply", self.reply_port), ("bridge", self.bridge_port)];
        for (i, (a, pa)) in ports.iter().enumerate() {
            for (b, pb) in &ports[i + 1..] {
                if *pa != 0 && pa == pb {
                    return Err(ServiceError::Config(format!("{a} and {b} ports are both {pa}")));
                }
            }
        }
        if self.reply_port == 0 {
            return Err(ServiceError::Config("reply_port must be set".into()));
        }
        if self.reassembly_timeout_ms == 0 {
            return Err(ServiceError::Config("reassembly_timeout_ms must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.confidence_floor) {
            return Err(ServiceError::Config(format!("confidence_floor must lie in [0, 1], got {}", self.confidence_floor)));
        }
        if self.queue_capacity == 0 {
            return Err(ServiceError::Config("queue_capacity must be positive".into()));
        }
        Ok(())
    }
}

/// Live counters shared by the service threads.
#[derive(Debug, Default)]
pub struct ServiceStats {
    pub datagrams: AtomicU64,
    pub malformed: AtomicU64,
    pub frames_completed: AtomicU64,
    pub decode_errors: AtomicU64,
    pub timeouts: AtomicU64,
    pub evicted: AtomicU64,
    pub inferences: AtomicU64,
    pub low_confidence: AtomicU64,
    pub replies_sent: AtomicU64,
    pub bridge_requests: AtomicU64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StatsSnapshot {
    pub datagrams: u64,
    pub malformed: u64,
    pub frames_completed: u64,
    pub decode_errors: u64,
    pub timeouts: u64,
    pub evicted: u64,
    pub inferences: u64,
    pub low_confidence: u64,
    pub replies_sent: u64,
    pub bridge_requests: u64,
}

impl ServiceStats {
    pub fn snapshot(&self) -> StatsSnapshot {
        let get = |c: &AtomicU64| c.load(Ordering::Relaxed);
        StatsSnapshot {
            datagrams: get(&self.datagrams),
            malformed: get(&self.malformed),
            frames_completed: get(&self.frames_completed),
            decode_errors: get(&self.decode_errors),
            timeouts: get(&self.timeouts),
            evicted: get(&self.evicted),
            inferences: get(&self.inferences),
            low_confidence: get(&self.low_confidence),
            replies_sent: get(&self.replies_sent),
            bridge_requests: get(&self.bridge_requests),
        }
    }
}

pub(crate) fn bump(counter: &AtomicU64) {
    counter.fetch_add(1, Ordering::Relaxed);
}
