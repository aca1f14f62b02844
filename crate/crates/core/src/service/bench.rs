use std::io::ErrorKind;
use std::net::{SocketAddr, UdpSocket};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use super::wire::{encode_frame, ResultMessage};
use super::ServiceError;
use crate::synth::SandImage;

/// Round-trip timings of a loopback run. `mean_ms` and `max_ms` cover the
/// frames that got a reply.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinkStats {
    pub frames: usize,
    pub received: usize,
    pub dropped: usize,
    pub mean_ms: f64,
    pub max_ms: f64,
}

pub fn send_frame(socket: &UdpSocket, target: SocketAddr, image: &SandImage, frame_id: u32) -> Result<(), ServiceError> {
    for datagram in encode_frame(image, frame_id)? {
        socket.send_to(&datagram, target)?;
    }
    Ok(())
}

/// Streams `frames` frames, cycling through `images`, to the service at
/// `target` one at a time and times each from encoding until its reply
/// arrives on `client`, which must be bound to the service's reply port.
/// A frame with no reply within `reply_timeout` counts as dropped.
pub fn full_link_latency(
    client: &UdpSocket,
    target: SocketAddr,
    images: &[SandImage],
    frames: usize,
    reply_timeout: Duration,
) -> Result<LinkStats, ServiceError> {
    if images.is_empty() || frames == 0 {
        return Err(ServiceError::Config("the link bench needs at least one image and one frame".into()));
    }
    let mut buf = [0u8; 64];
    let mut times = Vec::with_capacity(frames);
    for i in 0..frames {
        let frame_id = i as u32;
        let start = Instant::now();
        send_frame(client, target, &images[i % images.len()], frame_id)?;
        let deadline = start + reply_timeout;
        loop {
            let left = deadline.saturating_duration_since(Instant::now());
            if left.is_zero() {
                break;
            }
            client.set_read_timeout(Some(left))?;
            match client.recv_from(&mut buf) {
                Ok((len, _)) => {
                    if matches!(ResultMessage::decode(&buf[..len]), Ok(r) if r.frame_id == frame_id) {
                        times.push(start.elapsed().as_secs_f64() * 1e3);
                        break;
                    }
                }
                Err(e) if matches!(e.kind(), ErrorKind::WouldBlock | ErrorKind::TimedOut) => break,
                Err(e) => return Err(e.into()),
            }
        }
    }
    let received = times.len();
    let mean_ms = if received > 0 { times.iter().sum::<f64>() / received as f64 } else { f64::NAN };
    let max_ms = times.iter().copied().fold(f64::NAN, f64::max);
    Ok(LinkStats { frames, received, dropped: frames - received, mean_ms, max_ms })
}
