use std::net::{SocketAddr, TcpListener, UdpSocket};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc::{self, Sender};
use std::sync::Arc;
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use super::bridge::run_bridge;
use super::queue::{FreshestQueue, Pop};
use super::reassembly::{Completion, Reassembler};
use super::wire::{FrameChunk, ResultMessage, Status};
use super::{bump, ServiceConfig, ServiceError, ServiceStats};
use crate::model::Model;
use crate::registry::{map_mode_to_frequency, ModeRegistry};
use crate::synth::SandImage;

/// How often blocked threads wake to check for shutdown.
pub(crate) const POLL: Duration = Duration::from_millis(20);

/// The inference step: image in, wire reply out.
pub struct Recognizer {
    model: Model<f32>,
    registry: ModeRegistry,
    confidence_floor: f32,
}

/// A reply plus the exact registry frequency behind its f32 wire field.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Recognition {
    pub message: ResultMessage,
    pub frequency_hz: f64,
}

impl Recognizer {
    pub fn new(model: Model<f32>, registry: ModeRegistry, confidence_floor: f32) -> Result<Self, ServiceError> {
        let classes = model.config().num_classes;
        if classes != registry.len() {
            return Err(ServiceError::Config(format!(
                "model predicts {classes} classes but the registry holds {} modes",
                registry.len()
            )));
        }
        if classes > usize::from(u8::MAX) + 1 {
            return Err(ServiceError::Config(format!("{classes} modes do not fit the one-byte mode id")));
        }
        Ok(Self { model, registry, confidence_floor })
    }

    pub fn registry(&self) -> &ModeRegistry {
        &self.registry
    }

    /// Classifies `image`. Below the confidence floor the reply keeps the
    /// guess but carries status 2 and frequency 0.
    pub fn recognize(&self, frame_id: u32, image: &SandImage) -> Recognition {
        let prediction = match self.model.classify(image) {
            Ok(p) => p,
            Err(e) => {
                log::warn!("frame {frame_id}: inference failed: {e}");
                return Recognition { message: ResultMessage::bare(frame_id, Status::DecodeError), frequency_hz: 0.0 };
            }
        };
        let mapping = map_mode_to_frequency(prediction.mode_id, &self.registry).expect("class count matches registry");
        let confident = prediction.confidence >= self.confidence_floor;
        let frequency_hz = if confident { mapping.frequency_hz } else { 0.0 };
        let message = ResultMessage {
            frame_id,
            status: if confident { Status::Ok } else { Status::LowConfidence },
            mode_id: prediction.mode_id as u8,
            n: mapping.order.n().min(255) as u8,
            m: mapping.order.m().min(255) as u8,
            frequency_hz: frequency_hz as f32,
            confidence: prediction.confidence,
            nodal_lines: mapping.nodal_lines.min(255) as u8,
            inference_ms: prediction.inference_ms as f32,
        };
        Recognition { message, frequency_hz }
    }
}

pub(crate) enum ReplyTo {
    Udp(SocketAddr),
    Bridge(Sender<Recognition>),
}

pub(crate) struct Job {
    pub frame_id: u32,
    pub image: SandImage,
    pub reply: ReplyTo,
}

/// Running service. Dropping it shuts every thread down.
pub struct ServiceHandle {
    udp_addr: SocketAddr,
    bridge_addr: SocketAddr,
    stats: Arc<ServiceStats>,
    shutdown: Arc<AtomicBool>,
    queue: Arc<FreshestQueue<Job>>,
    threads: Vec<JoinHandle<()>>,
}

impl ServiceHandle {
    /// Where frame datagrams are received.
    pub fn udp_addr(&self) -> SocketAddr {
        self.udp_addr
    }

    pub fn bridge_addr(&self) -> SocketAddr {
        self.bridge_addr
    }

    pub fn stats(&self) -> &ServiceStats {
        &self.stats
    }

    /// Blocks for the lifetime of the service threads.
    pub fn wait(mut self) {
        for t in self.threads.drain(..) {
            let _ = t.join();
        }
    }

    pub fn shutdown(mut self) {
        self.stop();
    }

    fn stop(&mut self) {
        self.shutdown.store(true, Ordering::SeqCst);
        self.queue.close();
        for t in self.threads.drain(..) {
            let _ = t.join();
        }
    }
}

impl Drop for ServiceHandle {
    fn drop(&mut self) {
        self.stop();
    }
}

/// Binds the UDP and bridge sockets and starts the receiver, inference
/// worker, reply sender and bridge threads.
pub fn serve(config: &ServiceConfig, model: Model<f32>, registry: ModeRegistry) -> Result<ServiceHandle, ServiceError> {
    config.validate()?;
    let recognizer = Recognizer::new(model, registry, config.confidence_floor)?;

    let udp_bind = SocketAddr::new(config.bind_addr, config.listen_port);
    let socket = UdpSocket::bind(udp_bind).map_err(|source| ServiceError::Bind {
        role: "frame",
        addr: udp_bind.to_string(),
        source,
    })?;
    socket.set_read_timeout(Some(POLL))?;
    let bridge_bind = SocketAddr::new(config.bind_addr, config.bridge_port);
    let listener = TcpListener::bind(bridge_bind).map_err(|source| ServiceError::Bind {
        role: "bridge",
        addr: bridge_bind.to_string(),
        source,
    })?;
    listener.set_nonblocking(true)?;

    let udp_addr = socket.local_addr()?;
    let bridge_addr = listener.local_addr()?;
    let stats = Arc::new(ServiceStats::default());
    let shutdown = Arc::new(AtomicBool::new(false));
    let queue = Arc::new(FreshestQueue::<Job>::new(config.queue_capacity));
    let (reply_tx, reply_rx) = mpsc::channel::<(SocketAddr, ResultMessage)>();
    let recognizer = Arc::new(recognizer);
    let mut threads = Vec::new();

    let sender_socket = socket.try_clone()?;
    let sender_stats = Arc::clone(&stats);
    threads.push(spawn("chladni-sender", move || {
        for (dest, message) in reply_rx {
            match sender_socket.send_to(&message.encode(), dest) {
                Ok(_) => bump(&sender_stats.replies_sent),
                Err(e) => log::warn!("reply to {dest} failed: {e}"),
            }
        }
    }));

    let worker = {
        let (queue, stats, shutdown, reply_tx) = (Arc::clone(&queue), Arc::clone(&stats), Arc::clone(&shutdown), reply_tx.clone());
        let recognizer = Arc::clone(&recognizer);
        move || loop {
            let job = match queue.pop_timeout(POLL) {
                Pop::Item(job) => job,
                Pop::TimedOut if !shutdown.load(Ordering::Relaxed) => continue,
                _ => break,
            };
            let recognition = recognizer.recognize(job.frame_id, &job.image);
            bump(&stats.inferences);
            if recognition.message.status == Status::LowConfidence {
                bump(&stats.low_confidence);
            }
            match job.reply {
                ReplyTo::Udp(dest) => {
                    let _ = reply_tx.send((dest, recognition.message));
                }
                ReplyTo::Bridge(tx) => {
                    let _ = tx.send(recognition);
                }
            }
        }
    };
    threads.push(spawn("chladni-worker", worker));

    let receiver = {
        let (queue, stats, shutdown) = (Arc::clone(&queue), Arc::clone(&stats), Arc::clone(&shutdown));
        let reply_port = config.reply_port;
        let mut reassembler = Reassembler::new(Duration::from_millis(config.reassembly_timeout_ms));
        move || {
            let mut buf = vec![0u8; 65536];
            while !shutdown.load(Ordering::Relaxed) {
                let received = socket.recv_from(&mut buf);
                let now = Instant::now();
                if let Ok((len, src)) = received {
                    bump(&stats.datagrams);
                    let reply_to = SocketAddr::new(src.ip(), reply_port);
                    match FrameChunk::decode(&buf[..len]) {
                        Err(e) => {
                            log::debug!("dropping datagram from {src}: {e}");
                            bump(&stats.malformed);
                        }
                        Ok(chunk) => match reassembler.insert(src, chunk, now) {
                            None => {}
                            Some(Completion::Frame { frame_id, image, .. }) => {
                                bump(&stats.frames_completed);
                                let job = Job { frame_id, image, reply: ReplyTo::Udp(reply_to) };
                                if queue.push(job).is_some() {
                                    bump(&stats.evicted);
                                }
                            }
                            Some(Completion::DecodeError { frame_id, error, .. }) => {
                                log::debug!("frame {frame_id} from {src}: {error}");
                                bump(&stats.decode_errors);
                                let _ = reply_tx.send((reply_to, ResultMessage::bare(frame_id, Status::DecodeError)));
                            }
                        },
                    }
                }
                reassembler.expire(now);
                stats.timeouts.store(reassembler.timeouts(), Ordering::Relaxed);
            }
        }
    };
    threads.push(spawn("chladni-receiver", receiver));

    let bridge = {
        let (queue, stats, shutdown) = (Arc::clone(&queue), Arc::clone(&stats), Arc::clone(&shutdown));
        move || run_bridge(listener, queue, recognizer, stats, shutdown)
    };
    threads.push(spawn("chladni-bridge", bridge));

    log::info!("serving frames on {udp_addr}, bridge on {bridge_addr}");
    Ok(ServiceHandle { udp_addr, bridge_addr, stats, shutdown, queue, threads })
}

fn spawn(name: &str, f: impl FnOnce() + Send + 'static) -> JoinHandle<()> {
    thread::Builder::new().name(name.into()).spawn(f).expect("spawn service thread")
}
