//! Byte-level codecs. All integers and floats are little-endian; every
//! length prefix is a `u32`.

mod control;
mod envelope;
mod full;

use thiserror::Error;

pub use control::{data_instances, decode_control, encode_control, encode_control_with_lengths, ControlImage};
pub use envelope::{decode_envelope, encode_envelope, ControlEnvelope, ENVELOPE_VERSION, PROTOCOL_MAGIC};
pub use full::{full_deserialize, full_serialize};

use crate::schema::LayoutError;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum WireError {
    #[error("input truncated: need {needed} more bytes at offset {offset}")]
    Truncated { offset: usize, needed: usize },
    #[error("{0} trailing bytes after message")]
    TrailingBytes(usize),
    #[error("value at `{path}` does not match schema type {expected}")]
    TypeMismatch { path: String, expected: String },
    #[error("packed array `{path}` has {len} bytes, not a multiple of element size {element_size}")]
    PackedLength { path: String, len: usize, element_size: u64 },
    #[error("length {0} does not fit a u32 prefix")]
    LengthOverflow(u64),
    #[error("invalid UTF-8 in string at offset {0}")]
    InvalidUtf8(usize),
    #[error("bad protocol magic {0:02x?}")]
    BadMagic([u8; 4]),
    #[error("unsupported envelope version {0}")]
    UnsupportedVersion(u8),
    #[error("data part is {actual} bytes but the control image describes {expected}")]
    LayoutMismatch { expected: u64, actual: u64 },
    #[error("expected {expected} data lengths, got {actual}")]
    LengthCount { expected: usize, actual: usize },
    #[error(transparent)]
    Layout(#[from] LayoutError),
}

pub(crate) fn put_u32_len(out: &mut Vec<u8>, len: usize) -> Result<(), WireError> {
    let n = u32::try_from(len).map_err(|_| WireError::LengthOverflow(len as u64))?;
    out.extend_from_slice(&n.to_le_bytes());
    Ok(())
}

/// Forward-only cursor over a byte slice.
pub(crate) struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub(crate) fn new(buf: &'a [u8]) -> Self {
        Reader { buf, pos: 0 }
    }

    pub(crate) fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }

    pub(crate) fn take(&mut self, n: usize) -> Result<&'a [u8], WireError> {
        if self.remaining() < n {
            return Err(WireError::Truncated { offset: self.pos, needed: n - self.remaining() });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub(crate) fn array<const N: usize>(&mut self) -> Result<[u8; N], WireError> {
        Ok(self.take(N)?.try_into().expect("length checked"))
    }

    pub(crate) fn u8(&mut self) -> Result<u8, WireError> {
        Ok(self.array::<1>()?[0])
    }

    pub(crate) fn u32(&mut self) -> Result<u32, WireError> {
        Ok(u32::from_le_bytes(self.array()?))
    }

    pub(crate) fn u64(&mut self) -> Result<u64, WireError> {
        Ok(u64::from_le_bytes(self.array()?))
    }

    pub(crate) fn string(&mut self) -> Result<String, WireError> {
        let len = self.u32()? as usize;
        let at = self.pos;
        let bytes = self.take(len)?;
        String::from_utf8(bytes.to_vec()).map_err(|_| WireError::InvalidUtf8(at))
    }

    pub(crate) fn finish(&self) -> Result<(), WireError> {
        match self.remaining() {
            0 => Ok(()),
            n => Err(WireError::TrailingBytes(n)),
        }
    }
}
