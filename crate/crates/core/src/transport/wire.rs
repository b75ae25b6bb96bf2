//! Byte-level frame codec.
//!
//! ```text
//! offset  size  field (little-endian)
//! 0       4     u32 frame_length   bytes after this field = 24 + payload_len
//! 4       1     u8  version = 1
//! 5       1     u8  tag
//! 6       2     u16 reserved = 0
//! 8       4     u32 src
//! 12      4     u32 dst
//! 16      8     u64 request_id
//! 24      4     u32 payload_len
//! 28      n     payload
//! ```

use std::io::Read;

use thiserror::Error;

use super::{ActionTag, Envelope, LocalityId};

pub const WIRE_VERSION: u8 = 1;
/// Bytes following the length prefix, excluding the payload.
pub const HEADER_AFTER_LEN: usize = 24;
/// Total frame size for an empty payload.
pub const MIN_FRAME_LEN: usize = 4 + HEADER_AFTER_LEN;
pub const MAX_PAYLOAD_LEN: usize = u32::MAX as usize - HEADER_AFTER_LEN;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("frame decode error at byte {offset}: {kind}")]
pub struct DecodeError {
    pub offset: usize,
    pub kind: DecodeErrorKind,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DecodeErrorKind {
    #[error("truncated frame: need {needed} bytes, have {available}")]
    Truncated { needed: usize, available: usize },
    #[error("unknown wire version {0}")]
    UnknownVersion(u8),
    #[error("reserved field must be zero, got {0:#06x}")]
    ReservedNonZero(u16),
    #[error("frame length {frame_len} inconsistent with payload length {payload_len}")]
    LengthMismatch { frame_len: u32, payload_len: u32 },
    #[error("{0} trailing bytes after frame")]
    TrailingBytes(usize),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("payload of {0} bytes exceeds the frame limit")]
pub struct PayloadTooLarge(pub usize);

/// Encodes one frame.
pub fn encode(env: &Envelope) -> Result<Vec<u8>, PayloadTooLarge> {
    let mut out = Vec::with_capacity(MIN_FRAME_LEN + env.payload.len());
    encode_into(env, &mut out)?;
    Ok(out)
}

/// Appends one frame to `out`.
pub fn encode_into(env: &Envelope, out: &mut Vec<u8>) -> Result<(), PayloadTooLarge> {
    let payload_len = env.payload.len();
    if payload_len > MAX_PAYLOAD_LEN {
        return Err(PayloadTooLarge(payload_len));
    }
    out.reserve(MIN_FRAME_LEN + payload_len);
    out.extend_from_slice(&((HEADER_AFTER_LEN + payload_len) as u32).to_le_bytes());
    out.push(WIRE_VERSION);
    out.push(env.tag.0);
    out.extend_from_slice(&0u16.to_le_bytes());
    out.extend_from_slice(&env.src.0.to_le_bytes());
    out.extend_from_slice(&env.dst.0.to_le_bytes());
    out.extend_from_slice(&env.request_id.to_le_bytes());
    out.extend_from_slice(&(payload_len as u32).to_le_bytes());
    out.extend_from_slice(&env.payload);
    Ok(())
}

/// Decodes exactly one frame occupying all of `bytes`.
pub fn decode(bytes: &[u8]) -> Result<Envelope, DecodeError> {
    let (env, used) = decode_frame(bytes)?;
    if used != bytes.len() {
        return Err(DecodeError {
            offset: used,
            kind: DecodeErrorKind::TrailingBytes(bytes.len() - used),
        });
    }
    Ok(env)
}

/// Decodes the frame at the start of `bytes`, returning it with the number
/// of bytes consumed.
pub fn decode_frame(bytes: &[u8]) -> Result<(Envelope, usize), DecodeError> {
    let truncated = |needed: usize| DecodeError {
        offset: bytes.len(),
        kind: DecodeErrorKind::Truncated {
            needed,
            available: bytes.len(),
        },
    };
    if bytes.len() < 4 {
        return Err(truncated(4));
    }
    let frame_len = u32::from_le_bytes(bytes[0..4].try_into().unwrap());
    let total = 4 + frame_len as usize;
    if bytes.len() < total {
        return Err(truncated(total));
    }
    decode_body(frame_len, &bytes[4..total]).map(|env| (env, total))
}

/// Decodes the bytes following a length prefix of value `frame_len`.
/// Offsets in errors are relative to the start of the frame.
fn decode_body(frame_len: u32, body: &[u8]) -> Result<Envelope, DecodeError> {
    let err = |offset: usize, kind| DecodeError { offset, kind };
    if body.len() < HEADER_AFTER_LEN {
        return Err(err(
            4 + body.len(),
            DecodeErrorKind::Truncated {
                needed: MIN_FRAME_LEN,
                available: 4 + body.len(),
            },
        ));
    }
    let version = body[0];
    if version != WIRE_VERSION {
        return Err(err(4, DecodeErrorKind::UnknownVersion(version)));
    }
    let tag = ActionTag(body[1]);
    let reserved = u16::from_le_bytes(body[2..4].try_into().unwrap());
    if reserved != 0 {
        return Err(err(6, DecodeErrorKind::ReservedNonZero(reserved)));
    }
    let src = u32::from_le_bytes(body[4..8].try_into().unwrap());
    let dst = u32::from_le_bytes(body[8..12].try_into().unwrap());
    let request_id = u64::from_le_bytes(body[12..20].try_into().unwrap());
    let payload_len = u32::from_le_bytes(body[20..24].try_into().unwrap());
    if payload_len as usize + HEADER_AFTER_LEN != frame_len as usize {
        return Err(err(24, DecodeErrorKind::LengthMismatch { frame_len, payload_len }));
    }
    Ok(Envelope {
        src: LocalityId(src),
        dst: LocalityId(dst),
        tag,
        request_id,
        payload: body[HEADER_AFTER_LEN..].to_vec(),
    })
}

/// Reads one frame from a stream. `Ok(None)` on clean EOF before the first
/// byte of a frame.
pub fn read_frame<R: Read>(reader: &mut R) -> std::io::Result<Option<Envelope>> {
    let mut len = [0u8; 4];
    let mut filled = 0;
    while filled < 4 {
        match reader.read(&mut len[filled..]) {
            Ok(0) if filled == 0 => return Ok(None),
            Ok(0) => return Err(std::io::ErrorKind::UnexpectedEof.into()),
            Ok(k) => filled += k,
            Err(e) if e.kind() == std::io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e),
        }
    }
    let frame_len = u32::from_le_bytes(len);
    let mut body = vec![0u8; frame_len as usize];
    reader.read_exact(&mut body)?;
    decode_body(frame_len, &body)
        .map(Some)
        .map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))
}
