//! UDP datagram layouts. All multi-byte integers are little-endian.
//!
//! ```text
//! frame chunk: "CHLF" | version u8 | frame_id u32 | chunk_index u16 | chunk_count u16 | payload_len u16 | payload
//! result:      "CHLR" | version u8 | frame_id u32 | status u8 | mode_id u8 | n u8 | m u8
//!              | frequency_hz f32 | confidence f32 | nodal_lines u8 | inference_ms f32
//! ```
//!
//! The concatenated chunk payloads of one frame hold `width u16 | height u16 |
//! channels u8` followed by row-major RGB8 pixels.

use thiserror::Error;

use crate::synth::SandImage;

pub const FRAME_MAGIC: &[u8; 4] = b"CHLF";
pub const RESULT_MAGIC: &[u8; 4] = b"CHLR";
pub const WIRE_VERSION: u8 = 1;
pub const MAX_PAYLOAD: usize = 1400;
pub const CHUNK_HEADER_LEN: usize = 15;
pub const IMAGE_HEADER_LEN: usize = 5;
pub const RESULT_LEN: usize = 26;
pub const MAX_IMAGE_SIDE: usize = 512;
pub const CHANNELS: u8 = 3;

/// Largest chunk count a valid frame can need.
pub const MAX_CHUNKS: usize = (IMAGE_HEADER_LEN + MAX_IMAGE_SIDE * MAX_IMAGE_SIDE * 3).div_ceil(MAX_PAYLOAD);

#[derive(Clone, Debug, Error, PartialEq, Eq)]
pub enum WireError {
    #[error("bad magic")]
    BadMagic,
    #[error("unsupported wire version {0}")]
    Version(u8),
    #[error("datagram is {got} bytes, expected {expected}")]
    Length { got: usize, expected: usize },
    #[error("chunk payload of {0} bytes exceeds {MAX_PAYLOAD}")]
    PayloadTooLarge(usize),
    #[error("chunk {index} of {count} is out of range")]
    ChunkIndex { index: u16, count: u16 },
    #[error("unknown status {0}")]
    Status(u8),
    #[error("image is {width}x{height}x{channels}; frames carry square RGB images up to {MAX_IMAGE_SIDE} pixels wide")]
    ImageShape { width: usize, height: usize, channels: usize },
    #[error("frame holds {got} bytes but its header declares {expected}")]
    FrameLength { got: usize, expected: usize },
}

/// One datagram of a chunked frame.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FrameChunk {
    pub frame_id: u32,
    pub chunk_index: u16,
    pub chunk_count: u16,
    pub payload: Vec<u8>,
}

impl FrameChunk {
    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(CHUNK_HEADER_LEN + self.payload.len());
        out.extend_from_slice(FRAME_MAGIC);
        out.push(WIRE_VERSION);
        out.extend_from_slice(&self.frame_id.to_le_bytes());
        out.extend_from_slice(&self.chunk_index.to_le_bytes());
        out.extend_from_slice(&self.chunk_count.to_le_bytes());
        out.extend_from_slice(&(self.payload.len() as u16).to_le_bytes());
        out.extend_from_slice(&self.payload);
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, WireError> {
        if bytes.len() < 4 || &bytes[..4] != FRAME_MAGIC {
            return Err(WireError::BadMagic);
        }
        if bytes.len() < CHUNK_HEADER_LEN {
            return Err(WireError::Length { got: bytes.len(), expected: CHUNK_HEADER_LEN });
        }
        if bytes[4] != WIRE_VERSION {
            return Err(WireError::Version(bytes[4]));
        }
        let u16_at = |i: usize| u16::from_le_bytes([bytes[i], bytes[i + 1]]);
        let frame_id = u32::from_le_bytes(bytes[5..9].try_into().unwrap());
        let (chunk_index, chunk_count, len) = (u16_at(9), u16_at(11), usize::from(u16_at(13)));
        if len > MAX_PAYLOAD {
            return Err(WireError::PayloadTooLarge(len));
        }
        if bytes.len() != CHUNK_HEADER_LEN + len {
            return Err(WireError::Length { got: bytes.len(), expected: CHUNK_HEADER_LEN + len });
        }
        if chunk_index >= chunk_count || usize::from(chunk_count) > MAX_CHUNKS {
            return Err(WireError::ChunkIndex { index: chunk_index, count: chunk_count });
        }
        Ok(Self { frame_id, chunk_index, chunk_count, payload: bytes[CHUNK_HEADER_LEN..].to_vec() })
    }
}

fn check_shape(width: usize, height: usize, channels: usize) -> Result<(), WireError> {
    if width == 0 || width != height || width > MAX_IMAGE_SIDE || channels != usize::from(CHANNELS) {
        return Err(WireError::ImageShape { width, height, channels });
    }
    Ok(())
}

/// Image header plus pixels, the byte string that gets chunked.
pub fn frame_bytes(image: &SandImage) -> Result<Vec<u8>, WireError> {
    let (w, h) = (image.width(), image.height());
    check_shape(w, h, 3)?;
    let mut out = Vec::with_capacity(IMAGE_HEADER_LEN + image.pixels().len());
    out.extend_from_slice(&(w as u16).to_le_bytes());
    out.extend_from_slice(&(h as u16).to_le_bytes());
    out.push(CHANNELS);
    out.extend_from_slice(image.pixels());
    Ok(out)
}

/// Inverse of [`frame_bytes`].
pub fn parse_frame_bytes(bytes: &[u8]) -> Result<SandImage, WireError> {
    if bytes.len() < IMAGE_HEADER_LEN {
        return Err(WireError::FrameLength { got: bytes.len(), expected: IMAGE_HEADER_LEN });
    }
    let width = usize::from(u16::from_le_bytes([bytes[0], bytes[1]]));
    let height = usize::from(u16::from_le_bytes([bytes[2], bytes[3]]));
    let channels = usize::from(bytes[4]);
    check_shape(width, height, channels)?;
    let expected = IMAGE_HEADER_LEN + width * height * channels;
    if bytes.len() != expected {
        return Err(WireError::FrameLength { got: bytes.len(), expected });
    }
    Ok(SandImage::new(width, height, bytes[IMAGE_HEADER_LEN..].to_vec()).expect("shape checked above"))
}

/// Splits `image` into `⌈(5 + w·h·3) / 1400⌉` encoded datagrams.
pub fn encode_frame(image: &SandImage, frame_id: u32) -> Result<Vec<Vec<u8>>, WireError> {
    let bytes = frame_bytes(image)?;
    let count = bytes.len().div_ceil(MAX_PAYLOAD);
    Ok(bytes
        .chunks(MAX_PAYLOAD)
        .enumerate()
        .map(|(i, payload)| {
            FrameChunk { frame_id, chunk_index: i as u16, chunk_count: count as u16, payload: payload.to_vec() }.encode()
        })
        .collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum Status {
    Ok = 0,
    DecodeError = 1,
    LowConfidence = 2,
}

impl TryFrom<u8> for Status {
    type Error = WireError;

    fn try_from(v: u8) -> Result<Self, WireError> {
        match v {
            0 => Ok(Self::Ok),
            1 => Ok(Self::DecodeError),
            2 => Ok(Self::LowConfidence),
            other => Err(WireError::Status(other)),
        }
    }
}

/// Recognition reply for one frame.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ResultMessage {
    pub frame_id: u32,
    pub status: Status,
    pub mode_id: u8,
    pub n: u8,
    pub m: u8,
    pub frequency_hz: f32,
    pub confidence: f32,
    pub nodal_lines: u8,
    pub inference_ms: f32,
}

impl ResultMessage {
    /// A reply carrying nothing but the status.
    pub fn bare(frame_id: u32, status: Status) -> Self {
        Self { frame_id, status, mode_id: 0, n: 0, m: 0, frequency_hz: 0.0, confidence: 0.0, nodal_lines: 0, inference_ms: 0.0 }
    }

    pub fn encode(&self) -> [u8; RESULT_LEN] {
        let mut out = [0u8; RESULT_LEN];
        out[..4].copy_from_slice(RESULT_MAGIC);
        out[4] = WIRE_VERSION;
        out[5..9].copy_from_slice(&self.frame_id.to_le_bytes());
        out[9] = self.status as u8;
        out[10] = self.mode_id;
        out[11] = self.n;
        out[12] = self.m;
        out[13..17].copy_from_slice(&self.frequency_hz.to_le_bytes());
        out[17..21].copy_from_slice(&self.confidence.to_le_bytes());
        out[21] = self.nodal_lines;
        out[22..26].copy_from_slice(&self.inference_ms.to_le_bytes());
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, WireError> {
        if bytes.len() < 4 || &bytes[..4] != RESULT_MAGIC {
            return Err(WireError::BadMagic);
        }
        if bytes.len() != RESULT_LEN {
            return Err(WireError::Length { got: bytes.len(), expected: RESULT_LEN });
        }
        if bytes[4] != WIRE_VERSION {
            return Err(WireError::Version(bytes[4]));
        }
        let f32_at = |i: usize| f32::from_le_bytes(bytes[i..i + 4].try_into().unwrap());
        Ok(Self {
            frame_id: u32::from_le_bytes(bytes[5..9].try_into().unwrap()),
            status: Status::try_from(bytes[9])?,
            mode_id: bytes[10],
            n: bytes[11],
            m: bytes[12],
            frequency_hz: f32_at(13),
            confidence: f32_at(17),
            nodal_lines: bytes[21],
            inference_ms: f32_at(22),
        })
    }
}
