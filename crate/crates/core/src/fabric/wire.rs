//! Loopback channel framing.
//!
//! Every frame is a fixed 36-byte little-endian header followed by the
//! payload:
//!
//! ```text
//! context_id:u32 src_rank:u32 src_idx:i32 dst_idx:i32 tag:i32 seq:u64 payload_len:u64
//! ```

/// Index value carried on the wire when a message has no stream index.
pub const NO_INDEX: i32 = -1;

pub const HEADER_LEN: usize = 4 + 4 + 4 + 4 + 4 + 8 + 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Envelope {
    pub context_id: u32,
    pub src_rank: u32,
    pub src_idx: i32,
    pub dst_idx: i32,
    pub tag: i32,
    pub seq: u64,
    pub payload_len: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum FrameError {
    #[error("frame of {0} bytes is shorter than the header")]
    Short(usize),
    #[error("header announces {announced} payload bytes but frame carries {actual}")]
    LengthMismatch { announced: u64, actual: usize },
}

impl Envelope {
    pub fn encode_header(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.context_id.to_le_bytes());
        out.extend_from_slice(&self.src_rank.to_le_bytes());
        out.extend_from_slice(&self.src_idx.to_le_bytes());
        out.extend_from_slice(&self.dst_idx.to_le_bytes());
        out.extend_from_slice(&self.tag.to_le_bytes());
        out.extend_from_slice(&self.seq.to_le_bytes());
        out.extend_from_slice(&self.payload_len.to_le_bytes());
    }

    /// Builds a complete frame. `payload_len` is taken from `payload`.
    pub fn frame(mut self, payload: &[u8]) -> Vec<u8> {
        self.payload_len = payload.len() as u64;
        let mut out = Vec::with_capacity(HEADER_LEN + payload.len());
        self.encode_header(&mut out);
        out.extend_from_slice(payload);
        out
    }

    pub fn decode_header(bytes: &[u8]) -> Result<Self, FrameError> {
        if bytes.len() < HEADER_LEN {
            return Err(FrameError::Short(bytes.len()));
        }
        let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
        let i32_at = |o: usize| i32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
        let u64_at = |o: usize| u64::from_le_bytes(bytes[o..o + 8].try_into().unwrap());
        Ok(Self {
            context_id: u32_at(0),
            src_rank: u32_at(4),
            src_idx: i32_at(8),
            dst_idx: i32_at(12),
            tag: i32_at(16),
            seq: u64_at(20),
            payload_len: u64_at(28),
        })
    }

    /// Splits a frame into its envelope and payload.
    pub fn decode_frame(mut frame: Vec<u8>) -> Result<(Self, Vec<u8>), FrameError> {
        let env = Self::decode_header(&frame)?;
        let actual = frame.len() - HEADER_LEN;
        if env.payload_len != actual as u64 {
            return Err(FrameError::LengthMismatch {
                announced: env.payload_len,
                actual,
            });
        }
        frame.drain(..HEADER_LEN);
        Ok((env, frame))
    }
}
