//! Device frame codec.
//!
//! ```text
//! "WBF1" | device_id u64 | seq u32 | sample_rate u32 | payload_len u32 | payload | crc32 u32
//! ```
//!
//! Integers are little-endian, the payload is 16-bit little-endian PCM and the
//! CRC covers every byte before it.

use std::io::{self, Read};

use crate::crc::{crc32, Crc32};

pub const FRAME_MAGIC: &[u8; 4] = b"WBF1";
pub const HEADER_LEN: usize = 24;
pub const TRAILER_LEN: usize = 4;
/// Largest payload a reader accepts (about 4 minutes of 16 kHz audio).
pub const MAX_PAYLOAD: usize = 8 << 20;

#[derive(Debug, thiserror::Error)]
pub enum FrameError {
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("truncated frame: {0}")]
    Truncated(String),
    #[error("checksum mismatch: frame says {expected:#010x}, computed {actual:#010x}")]
    Integrity { expected: u32, actual: u32 },
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DeviceFrame {
    pub device_id: u64,
    pub seq: u32,
    pub sample_rate: u32,
    /// 16-bit little-endian PCM; always of even length.
    pub payload: Vec<u8>,
}

impl DeviceFrame {
    pub fn from_samples(device_id: u64, seq: u32, sample_rate: u32, samples: &[i16]) -> Self {
        Self { device_id, seq, sample_rate, payload: samples.iter().flat_map(|s| s.to_le_bytes()).collect() }
    }

    pub fn samples(&self) -> Vec<i16> {
        self.payload.chunks_exact(2).map(|c| i16::from_le_bytes([c[0], c[1]])).collect()
    }

    pub fn n_samples(&self) -> usize {
        self.payload.len() / 2
    }

    pub fn encoded_len(&self) -> usize {
        HEADER_LEN + self.payload.len() + TRAILER_LEN
    }
}

pub fn encode_frame(frame: &DeviceFrame) -> Result<Vec<u8>, FrameError> {
    if frame.payload.len() % 2 != 0 {
        return Err(FrameError::Protocol(format!("odd payload length {}", frame.payload.len())));
    }
    let len = u32::try_from(frame.payload.len())
        .map_err(|_| FrameError::Protocol(format!("payload of {} bytes is too long", frame.payload.len())))?;
    let mut out = Vec::with_capacity(frame.encoded_len());
    out.extend_from_slice(FRAME_MAGIC);
    out.extend_from_slice(&frame.device_id.to_le_bytes());
    out.extend_from_slice(&frame.seq.to_le_bytes());
    out.extend_from_slice(&frame.sample_rate.to_le_bytes());
    out.extend_from_slice(&len.to_le_bytes());
    out.extend_from_slice(&frame.payload);
    let crc = crc32(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    Ok(out)
}

struct Header {
    device_id: u64,
    seq: u32,
    sample_rate: u32,
    payload_len: usize,
}

fn parse_header(h: &[u8; HEADER_LEN]) -> Result<Header, FrameError> {
    if &h[0..4] != FRAME_MAGIC {
        return Err(FrameError::Protocol(format!("bad magic {:02x?}", &h[0..4])));
    }
    let u32_at = |i: usize| u32::from_le_bytes(h[i..i + 4].try_into().expect("4 bytes"));
    let header = Header {
        device_id: u64::from_le_bytes(h[4..12].try_into().expect("8 bytes")),
        seq: u32_at(12),
        sample_rate: u32_at(16),
        payload_len: u32_at(20) as usize,
    };
    if header.payload_len % 2 != 0 {
        return Err(FrameError::Protocol(format!("odd payload length {}", header.payload_len)));
    }
    Ok(header)
}

fn finish(header: &[u8; HEADER_LEN], h: Header, payload: Vec<u8>, trailer: [u8; 4]) -> Result<DeviceFrame, FrameError> {
    let mut crc = Crc32::new();
    crc.update(header);
    crc.update(&payload);
    let actual = crc.finish();
    let expected = u32::from_le_bytes(trailer);
    if actual != expected {
        return Err(FrameError::Integrity { expected, actual });
    }
    Ok(DeviceFrame { device_id: h.device_id, seq: h.seq, sample_rate: h.sample_rate, payload })
}

/// Decodes exactly one frame occupying all of `bytes`.
pub fn decode_frame(bytes: &[u8]) -> Result<DeviceFrame, FrameError> {
    let header: &[u8; HEADER_LEN] = bytes
        .get(..HEADER_LEN)
        .and_then(|h| h.try_into().ok())
        .ok_or_else(|| FrameError::Truncated(format!("{} bytes is shorter than a header", bytes.len())))?;
    let h = parse_header(header)?;
    let want = HEADER_LEN + h.payload_len + TRAILER_LEN;
    if bytes.len() != want {
        return Err(FrameError::Truncated(format!(
            "header announces {} payload bytes ({want} total), got {} bytes",
            h.payload_len,
            bytes.len()
        )));
    }
    let payload = bytes[HEADER_LEN..want - TRAILER_LEN].to_vec();
    let trailer = bytes[want - TRAILER_LEN..].try_into().expect("4 bytes");
    finish(header, h, payload, trailer)
}

/// Reads the next frame from a stream. `Ok(None)` means a clean end of stream
/// at a frame boundary.
pub fn read_frame<R: Read>(reader: &mut R) -> Result<Option<DeviceFrame>, FrameError> {
    let mut header = [0u8; HEADER_LEN];
    let mut got = 0;
    while got < HEADER_LEN {
        match reader.read(&mut header[got..]) {
            Ok(0) if got == 0 => return Ok(None),
            Ok(0) => return Err(FrameError::Truncated(format!("stream ended after {got} header bytes"))),
            Ok(n) => got += n,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e.into()),
        }
    }
    let h = parse_header(&header)?;
    if h.payload_len > MAX_PAYLOAD {
        return Err(FrameError::Protocol(format!("payload length {} exceeds {MAX_PAYLOAD}", h.payload_len)));
    }
    let mut payload = vec![0u8; h.payload_len];
    let mut trailer = [0u8; TRAILER_LEN];
    let eof = |e: io::Error| {
        if e.kind() == io::ErrorKind::UnexpectedEof {
            FrameError::Truncated("stream ended inside a frame".into())
        } else {
            FrameError::Io(e)
        }
    };
    reader.read_exact(&mut payload).map_err(eof)?;
    reader.read_exact(&mut trailer).map_err(eof)?;
    finish(&header, h, payload, trailer).map(Some)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_payload_roundtrip() {
        let f = DeviceFrame { device_id: 7, seq: 0, sample_rate: 16000, payload: vec![] };
        let bytes = encode_frame(&f).unwrap();
        assert_eq!(bytes.len(), 28);
        assert_eq!(decode_frame(&bytes).unwrap(), f);
    }

    #[test]
    fn error_kinds() {
        let f = DeviceFrame::from_samples(1, 2, 16000, &[1, -2, 3]);
        let bytes = encode_frame(&f).unwrap();
        assert_eq!(bytes.len(), 24 + 6 + 4);
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(decode_frame(&bad), Err(FrameError::Protocol(_))));
        assert!(matches!(decode_frame(&bytes[..bytes.len() - 1]), Err(FrameError::Truncated(_))));
        let mut long = bytes.clone();
        long.push(0);
        assert!(matches!(decode_frame(&long), Err(FrameError::Truncated(_))));
        let mut flipped = bytes.clone();
        flipped[26] ^= 1;
        assert!(matches!(decode_frame(&flipped), Err(FrameError::Integrity { .. })));
        let odd = DeviceFrame { payload: vec![1, 2, 3], ..f };
        assert!(matches!(encode_frame(&odd), Err(FrameError::Protocol(_))));
    }

    #[test]
    fn stream_reading() {
        let a = DeviceFrame::from_samples(1, 0, 16000, &[5; 10]);
        let b = DeviceFrame::from_samples(1, 1, 16000, &[-5; 3]);
        let mut bytes = encode_frame(&a).unwrap();
        bytes.extend(encode_frame(&b).unwrap());
        let mut cur = io::Cursor::new(bytes.clone());
        assert_eq!(read_frame(&mut cur).unwrap(), Some(a));
        assert_eq!(read_frame(&mut cur).unwrap(), Some(b));
        assert_eq!(read_frame(&mut cur).unwrap(), None);
        let mut cut = io::Cursor::new(bytes[..30].to_vec());
        assert!(matches!(read_frame(&mut cut), Err(FrameError::Truncated(_))));
    }
}
