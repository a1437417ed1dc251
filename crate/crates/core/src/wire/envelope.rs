//! The per-message record sent over the local socket.
//!
//! ```text
//! "TZC1" | u8 version | topic (u32 len + bytes) | u64 sequence
//!        | region name (u32 len + bytes) | u64 block offset
//!        | u64 message magic | u64 payload bytes | control (u32 len + bytes)
//! ```

use super::{put_u32_len, Reader, WireError};

pub const PROTOCOL_MAGIC: [u8; 4] = *b"TZC1";
pub const ENVELOPE_VERSION: u8 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ControlEnvelope {
    pub topic: String,
    pub sequence: u64,
    /// Empty when the message travels entirely inline.
    pub region_name: String,
    pub block_offset: u64,
    pub message_magic: u64,
    pub payload_bytes: u64,
    pub control: Vec<u8>,
}

impl ControlEnvelope {
    /// An envelope with no shared-memory part; `control` holds the full
    /// serialization.
    pub fn is_inline(&self) -> bool {
        self.region_name.is_empty()
    }

    pub fn encoded_len(&self) -> usize {
        4 + 1 + 4 + self.topic.len() + 8 + 4 + self.region_name.len() + 8 + 8 + 8 + 4 + self.control.len()
    }
}

pub fn encode_envelope(env: &ControlEnvelope) -> Result<Vec<u8>, WireError> {
    let mut out = Vec::with_capacity(env.encoded_len());
    out.extend_from_slice(&PROTOCOL_MAGIC);
    out.push(ENVELOPE_VERSION);
    put_u32_len(&mut out, env.topic.len())?;
    out.extend_from_slice(env.topic.as_bytes());
    out.extend_from_slice(&env.sequence.to_le_bytes());
    put_u32_len(&mut out, env.region_name.len())?;
    out.extend_from_slice(env.region_name.as_bytes());
    out.extend_from_slice(&env.block_offset.to_le_bytes());
    out.extend_from_slice(&env.message_magic.to_le_bytes());
    out.extend_from_slice(&env.payload_bytes.to_le_bytes());
    put_u32_len(&mut out, env.control.len())?;
    out.extend_from_slice(&env.control);
    Ok(out)
}

pub fn decode_envelope(bytes: &[u8]) -> Result<ControlEnvelope, WireError> {
    let mut r = Reader::new(bytes);
    let magic = r.array::<4>()?;
    if magic != PROTOCOL_MAGIC {
        return Err(WireError::BadMagic(magic));
    }
    let version = r.u8()?;
    if version != ENVELOPE_VERSION {
        return Err(WireError::UnsupportedVersion(version));
    }
    let topic = r.string()?;
    let sequence = r.u64()?;
    let region_name = r.string()?;
    let block_offset = r.u64()?;
    let message_magic = r.u64()?;
    let payload_bytes = r.u64()?;
    let len = r.u32()? as usize;
    let control = r.take(len)?.to_vec();
    r.finish()?;
    Ok(ControlEnvelope { topic, sequence, region_name, block_offset, message_magic, payload_bytes, control })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sample() -> ControlEnvelope {
        ControlEnvelope {
            topic: "/cam".into(),
            sequence: 3,
            region_name: "r".into(),
            block_offset: 64,
            message_magic: 0x1122,
            payload_bytes: 16,
            control: vec![9, 8],
        }
    }

    #[test]
    fn exact_layout() {
        let bytes = encode_envelope(&sample()).unwrap();
        let mut expected = b"TZC1\x01".to_vec();
        expected.extend_from_slice(&4u32.to_le_bytes());
        expected.extend_from_slice(b"/cam");
        expected.extend_from_slice(&3u64.to_le_bytes());
        expected.extend_from_slice(&1u32.to_le_bytes());
        expected.extend_from_slice(b"r");
        expected.extend_from_slice(&64u64.to_le_bytes());
        expected.extend_from_slice(&0x1122u64.to_le_bytes());
        expected.extend_from_slice(&16u64.to_le_bytes());
        expected.extend_from_slice(&2u32.to_le_bytes());
        expected.extend_from_slice(&[9, 8]);
        assert_eq!(bytes, expected);
        assert_eq!(bytes.len(), sample().encoded_len());
    }

    #[test]
    fn rejects_bad_magic_and_version() {
        let mut bytes = encode_envelope(&sample()).unwrap();
        bytes[4] = 2;
        assert_eq!(decode_envelope(&bytes), Err(WireError::UnsupportedVersion(2)));
        bytes[0] = b'X';
        assert_eq!(decode_envelope(&bytes), Err(WireError::BadMagic(*b"XZC1")));
    }

    #[test]
    fn rejects_truncation_and_trailing() {
        let bytes = encode_envelope(&sample()).unwrap();
        for cut in 0..bytes.len() {
            assert!(decode_envelope(&bytes[..cut]).is_err());
        }
        let mut long = bytes.clone();
        long.push(0);
        assert_eq!(decode_envelope(&long), Err(WireError::TrailingBytes(1)));
    }

    proptest! {
        #[test]
        fn round_trip(
            topic in "[ -~]{0,40}",
            sequence: u64,
            region_name in "[a-z0-9.]{0,60}",
            block_offset: u64,
            message_magic: u64,
            payload_bytes: u64,
            control in proptest::collection::vec(any::<u8>(), 0..512),
        ) {
            let env = ControlEnvelope { topic, sequence, region_name, block_offset, message_magic, payload_bytes, control };
            let bytes = encode_envelope(&env).unwrap();
            prop_assert_eq!(decode_envelope(&bytes).unwrap(), env);
        }
    }
}
