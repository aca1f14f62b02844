//! Newline-delimited JSON over TCP for the studio front end.

use std::io::{BufRead, BufReader, ErrorKind, Write};
use std::net::{TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{mpsc, Arc};
use std::thread;
use std::time::Duration;

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use serde::{Deserialize, Serialize};

use super::queue::FreshestQueue;
use super::server::{Job, Recognition, Recognizer, ReplyTo, POLL};
use super::wire::{ResultMessage, Status, MAX_IMAGE_SIDE};
use super::{bump, ServiceStats};
use crate::physics::NodalSettings;
use crate::synth::{render_mode, SandImage};

/// Longest request line accepted; a 512² frame in base64 is about 1 MiB.
const MAX_LINE: usize = 4 << 20;
const RESULT_WAIT: Duration = Duration::from_secs(10);
const MIN_PATTERN_SIZE: usize = 32;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum BridgeRequest {
    Ping,
    Frame { frame_id: u32, width: usize, height: usize, pixels_b64: String },
    PatternRequest { mode_id: usize, seed: u64, size: usize },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum BridgeReply {
    Pong,
    Result {
        frame_id: u32,
        status: u8,
        mode_id: u8,
        n: u8,
        m: u8,
        frequency_hz: f64,
        confidence: f64,
        nodal_lines: u8,
        inference_ms: f64,
    },
    Pattern { mode_id: usize, png_b64: String, frequency_hz: f64 },
    Error { code: String, message: String },
}

impl BridgeReply {
    fn error(code: &str, message: impl Into<String>) -> Self {
        Self::Error { code: code.into(), message: message.into() }
    }

    /// Mirrors a wire reply, with the frequency at full precision.
    pub fn from_recognition(r: &Recognition) -> Self {
        let m = &r.message;
        Self::Result {
            frame_id: m.frame_id,
            status: m.status as u8,
            mode_id: m.mode_id,
            n: m.n,
            m: m.m,
            frequency_hz: r.frequency_hz,
            confidence: f64::from(m.confidence),
            nodal_lines: m.nodal_lines,
            inference_ms: f64::from(m.inference_ms),
        }
    }
}

pub(crate) fn run_bridge(
    listener: TcpListener,
    queue: Arc<FreshestQueue<Job>>,
    recognizer: Arc<Recognizer>,
    stats: Arc<ServiceStats>,
    shutdown: Arc<AtomicBool>,
) {
    let mut clients = Vec::new();
    while !shutdown.load(Ordering::Relaxed) {
        match listener.accept() {
            Ok((stream, peer)) => {
                log::info!("bridge client {peer} connected");
                let session = Session {
                    queue: Arc::clone(&queue),
                    recognizer: Arc::clone(&recognizer),
                    stats: Arc::clone(&stats),
                    shutdown: Arc::clone(&shutdown),
                };
                clients.push(thread::spawn(move || {
                    if let Err(e) = session.run(stream) {
                        log::info!("bridge client {peer}: {e}");
                    }
                }));
            }
            Err(e) if e.kind() == ErrorKind::WouldBlock => thread::sleep(POLL),
            Err(e) => {
                log::warn!("bridge accept failed: {e}");
                thread::sleep(POLL);
            }
        }
        clients.retain(|c| !c.is_finished());
    }
    for c in clients {
        let _ = c.join();
    }
}

struct Session {
    queue: Arc<FreshestQueue<Job>>,
    recognizer: Arc<Recognizer>,
    stats: Arc<ServiceStats>,
    shutdown: Arc<AtomicBool>,
}

impl Session {
    fn run(&self, stream: TcpStream) -> std::io::Result<()> {
        stream.set_nonblocking(false)?;
        stream.set_read_timeout(Some(POLL))?;
        let mut writer = stream.try_clone()?;
        let mut reader = BufReader::new(stream);
        let mut line = Vec::new();
        while !self.shutdown.load(Ordering::Relaxed) {
            match reader.read_until(b'\n', &mut line) {
                Ok(0) => return Ok(()),
                Ok(_) if line.ends_with(b"\n") => {}
                Ok(_) => return Ok(()),
                Err(e) if matches!(e.kind(), ErrorKind::WouldBlock | ErrorKind::TimedOut) => {
                    if line.len() > MAX_LINE {
                        line.clear();
                        self.send(&mut writer, &BridgeReply::error("too_long", format!("request exceeds {MAX_LINE} bytes")))?;
                    }
                    continue;
                }
                Err(e) => return Err(e),
            }
            let text = String::from_utf8_lossy(&line).trim().to_string();
            line.clear();
            if text.is_empty() {
                continue;
            }
            bump(&self.stats.bridge_requests);
            let reply = self.handle(&text);
            self.send(&mut writer, &reply)?;
        }
        Ok(())
    }

    fn send(&self, writer: &mut TcpStream, reply: &BridgeReply) -> std::io::Result<()> {
        let mut out = serde_json::to_vec(reply).expect("reply serialises");
        out.push(b'\n');
        writer.write_all(&out)
    }

    fn handle(&self, text: &str) -> BridgeReply {
        let value: serde_json::Value = match serde_json::from_str(text) {
            Ok(v) => v,
            Err(e) => return BridgeReply::error("malformed_json", e.to_string()),
        };
        let request: BridgeRequest = match serde_json::from_value(value) {
            Ok(r) => r,
            Err(e) => return BridgeReply::error("invalid_request", e.to_string()),
        };
        match request {
            BridgeRequest::Ping => BridgeReply::Pong,
            BridgeRequest::Frame { frame_id, width, height, pixels_b64 } => self.frame(frame_id, width, height, &pixels_b64),
            BridgeRequest::PatternRequest { mode_id, seed, size } => self.pattern(mode_id, seed, size),
        }
    }

    fn frame(&self, frame_id: u32, width: usize, height: usize, pixels_b64: &str) -> BridgeReply {
        let decode_error =
            || BridgeReply::from_recognition(&Recognition { message: ResultMessage::bare(frame_id, Status::DecodeError), frequency_hz: 0.0 });
        let Ok(pixels) = B64.decode(pixels_b64) else {
            return decode_error();
        };
        if width > MAX_IMAGE_SIDE {
            return decode_error();
        }
        let Ok(image) = SandImage::new(width, height, pixels) else {
            return decode_error();
        };
        let (tx, rx) = mpsc::channel();
        if self.queue.push(Job { frame_id, image, reply: ReplyTo::Bridge(tx) }).is_some() {
            bump(&self.stats.evicted);
        }
        match rx.recv_timeout(RESULT_WAIT) {
            Ok(r) => BridgeReply::from_recognition(&r),
            Err(_) => BridgeReply::error("dropped", format!("frame {frame_id} was superseded or timed out")),
        }
    }

    fn pattern(&self, mode_id: usize, seed: u64, size: usize) -> BridgeReply {
        let registry = self.recognizer.registry();
        let Some(entry) = registry.get(mode_id) else {
            return BridgeReply::error("unknown_mode", format!("no mode {mode_id} in a registry of {}", registry.len()));
        };
        if !(MIN_PATTERN_SIZE..=MAX_IMAGE_SIDE).contains(&size) {
            return BridgeReply::error("bad_size", format!("size must lie in [{MIN_PATTERN_SIZE}, {MAX_IMAGE_SIDE}], got {size}"));
        }
        let settings = NodalSettings::for_plate(registry.plate());
        let png = render_mode(entry.order, size, seed, &settings).and_then(|img| img.to_png_bytes());
        match png {
            Ok(png) => BridgeReply::Pattern { mode_id, png_b64: B64.encode(png), frequency_hz: entry.frequency_hz },
            Err(e) => BridgeReply::error("render_failed", e.to_string()),
        }
    }
}
