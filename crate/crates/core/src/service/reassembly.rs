use std::collections::HashMap;
use std::net::SocketAddr;
use std::time::{Duration, Instant};

use super::wire::{parse_frame_bytes, FrameChunk, WireError};
use crate::synth::SandImage;

/// Outcome of the chunk that finished a frame.
#[derive(Clone, Debug, PartialEq)]
pub enum Completion {
    Frame { source: SocketAddr, frame_id: u32, image: SandImage },
    DecodeError { source: SocketAddr, frame_id: u32, error: WireError },
}

struct Partial {
    started: Instant,
    chunks: Vec<Option<Vec<u8>>>,
    received: usize,
}

type Key = (SocketAddr, u32);

/// Collects chunks per `(source, frame_id)` until a frame is whole.
///
/// Chunks may arrive in any order and more than once. A frame that is not
/// complete `timeout` after its first chunk arrived is dropped. Stragglers
/// of a finished frame are ignored for one further timeout period.
pub struct Reassembler {
    timeout: Duration,
    pending: HashMap<Key, Partial>,
    finished: HashMap<Key, Instant>,
    timeouts: u64,
}

impl Reassembler {
    pub fn new(timeout: Duration) -> Self {
        Self { timeout, pending: HashMap::new(), finished: HashMap::new(), timeouts: 0 }
    }

    /// Frames dropped for timing out so far.
    pub fn timeouts(&self) -> u64 {
        self.timeouts
    }

    /// Frames with at least one chunk but not yet complete.
    pub fn pending(&self) -> usize {
        self.pending.len()
    }

    pub fn insert(&mut self, source: SocketAddr, chunk: FrameChunk, now: Instant) -> Option<Completion> {
        self.expire(now);
        let key = (source, chunk.frame_id);
        if self.finished.contains_key(&key) {
            return None;
        }
        let count = usize::from(chunk.chunk_count);
        let partial = self.pending.entry(key).or_insert_with(|| Partial {
            started: now,
            chunks: vec![None; count],
            received: 0,
        });
        if partial.chunks.len() != count || chunk.chunk_index >= chunk.chunk_count {
            self.pending.remove(&key);
            self.finished.insert(key, now);
            let error = WireError::ChunkIndex { index: chunk.chunk_index, count: chunk.chunk_count };
            return Some(Completion::DecodeError { source, frame_id: chunk.frame_id, error });
        }
        let slot = &mut partial.chunks[usize::from(chunk.chunk_index)];
        if slot.is_none() {
            *slot = Some(chunk.payload);
            partial.received += 1;
        }
        if partial.received < count {
            return None;
        }
        let partial = self.pending.remove(&key).expect("entry exists");
        self.finished.insert(key, now);
        let bytes: Vec<u8> = partial.chunks.into_iter().flatten().flatten().collect();
        Some(match parse_frame_bytes(&bytes) {
            Ok(image) => Completion::Frame { source, frame_id: chunk.frame_id, image },
            Err(error) => Completion::DecodeError { source, frame_id: chunk.frame_id, error },
        })
    }

    /// Drops incomplete frames older than the timeout; returns how many.
    pub fn expire(&mut self, now: Instant) -> usize {
        let timeout = self.timeout;
        let before = self.pending.len();
        self.pending.retain(|_, p| now.saturating_duration_since(p.started) <= timeout);
        let dropped = before - self.pending.len();
        self.timeouts += dropped as u64;
        self.finished.retain(|_, &mut t| now.saturating_duration_since(t) <= timeout);
        dropped
    }
}
