//! Length-prefixed framing shared by the wire protocol and the entry log.
//!
//! ```text
//! [u32 BE: payload length][payload bytes]
//! ```
//!
//! Zero-length frames are invalid and lengths above [`MAX_FRAME_LEN`] are
//! rejected before any payload is buffered.

use super::ProtocolError;

/// Upper bound on a single frame payload (16 MiB).
pub const MAX_FRAME_LEN: usize = 16 * 1024 * 1024;

pub const HEADER_LEN: usize = 4;

/// Result of looking for one frame at the start of a buffer.
#[derive(Debug, PartialEq, Eq)]
pub enum Split<'a> {
    /// The buffer holds less than one full frame; nothing was consumed.
    NeedMore,
    /// A full frame: its payload and the total number of bytes it occupies.
    Frame { payload: &'a [u8], consumed: usize },
}

/// Prefix `payload` with its big-endian length.
pub fn encode_payload(payload: &[u8]) -> Result<Vec<u8>, ProtocolError> {
    check_len(payload.len())?;
    let mut out = Vec::with_capacity(HEADER_LEN + payload.len());
    out.extend_from_slice(&(payload.len() as u32).to_be_bytes());
    out.extend_from_slice(payload);
    Ok(out)
}

pub fn check_len(len: usize) -> Result<(), ProtocolError> {
    if len == 0 {
        return Err(ProtocolError::EmptyFrame);
    }
    if len > MAX_FRAME_LEN {
        return Err(ProtocolError::FrameTooLarge { len: len as u64 });
    }
    Ok(())
}

/// Locate the first frame in `buf` without copying.
pub fn split_frame(buf: &[u8]) -> Result<Split<'_>, ProtocolError> {
    if buf.len() < HEADER_LEN {
        return Ok(Split::NeedMore);
    }
    let len = u32::from_be_bytes([buf[0], buf[1], buf[2], buf[3]]) as usize;
    check_len(len)?;
    let end = HEADER_LEN + len;
    if buf.len() < end {
        return Ok(Split::NeedMore);
    }
    Ok(Split::Frame {
        payload: &buf[HEADER_LEN..end],
        consumed: end,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ping_payload_layout() {
        let payload = br#"{"type":"ping"}"#;
        assert_eq!(payload.len(), 15);
        let bytes = encode_payload(payload).unwrap();
        assert_eq!(&bytes[..4], &[0x00, 0x00, 0x00, 0x0F]);
        assert_eq!(&bytes[4..], payload);
    }

    #[test]
    fn empty_payload_rejected() {
        assert!(matches!(
            encode_payload(b""),
            Err(ProtocolError::EmptyFrame)
        ));
        assert!(matches!(
            split_frame(&[0, 0, 0, 0]),
            Err(ProtocolError::EmptyFrame)
        ));
    }

    #[test]
    fn max_length_header_rejected() {
        assert!(matches!(
            split_frame(&[0xFF, 0xFF, 0xFF, 0xFF]),
            Err(ProtocolError::FrameTooLarge { len: 0xFFFF_FFFF })
        ));
    }

    #[test]
    fn cap_is_inclusive() {
        assert!(check_len(MAX_FRAME_LEN).is_ok());
        assert!(check_len(MAX_FRAME_LEN + 1).is_err());
    }

    #[test]
    fn partial_prefix_needs_more() {
        let bytes = encode_payload(b"abc").unwrap();
        for cut in 0..bytes.len() {
            assert_eq!(split_frame(&bytes[..cut]).unwrap(), Split::NeedMore);
        }
        assert_eq!(
            split_frame(&bytes).unwrap(),
            Split::Frame {
                payload: b"abc",
                consumed: 7
            }
        );
    }
}
