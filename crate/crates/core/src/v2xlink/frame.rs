//! Wire format of one roadside frame, all integers little-endian:
//!
//! ```text
//! offset  size  field
//!      0     4  magic "V2XF"
//!      4     1  version (1)
//!      5     8  frame_id
//!     13     8  timestamp_us
//!     21     2  scale_milli (s × 1000, rounded)
//!     23     2  width
//!     25     2  height
//!     27     1  channels
//!     28     4  payload_len = width × height × channels
//!     32     n  payload, row-major interleaved u8
//!   32+n     4  crc32 (IEEE) of the payload
//! ```

use std::io::Read;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::raster::RasterImage;

pub const FRAME_MAGIC: [u8; 4] = *b"V2XF";
pub const FRAME_VERSION: u8 = 1;
pub const HEADER_LEN: usize = 32;
const CRC_LEN: usize = 4;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FrameError {
    #[error("bad frame magic {0:?}")]
    BadMagic([u8; 4]),
    #[error("unsupported frame version {0}")]
    UnsupportedVersion(u8),
    #[error("frame truncated: need {needed} bytes, have {have}")]
    TruncatedFrame { needed: usize, have: usize },
    #[error("malformed header: {0}")]
    MalformedHeader(String),
    #[error("payload crc {actual:#010x} does not match {expected:#010x}")]
    CrcMismatch { expected: u32, actual: u32 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrameMeta {
    pub frame_id: u64,
    pub timestamp_us: u64,
    pub scale_milli: u16,
}

impl FrameMeta {
    pub fn new(frame_id: u64, timestamp_us: u64, scale: f64) -> Self {
        Self {
            frame_id,
            timestamp_us,
            scale_milli: (scale * 1000.0).round().clamp(0.0, u16::MAX as f64) as u16,
        }
    }

    pub fn scale(&self) -> f64 {
        self.scale_milli as f64 / 1000.0
    }
}

pub fn encode_frame(img: &RasterImage, meta: &FrameMeta) -> Result<Vec<u8>, FrameError> {
    let too_big = |what: &str, v: usize| FrameError::MalformedHeader(format!("{what} {v} does not fit the header"));
    let w = u16::try_from(img.width()).map_err(|_| too_big("width", img.width()))?;
    let h = u16::try_from(img.height()).map_err(|_| too_big("height", img.height()))?;
    let c = u8::try_from(img.channels()).map_err(|_| too_big("channels", img.channels()))?;
    let payload = img.data();
    let len = u32::try_from(payload.len()).map_err(|_| too_big("payload", payload.len()))?;
    let mut out = Vec::with_capacity(HEADER_LEN + payload.len() + CRC_LEN);
    out.extend_from_slice(&FRAME_MAGIC);
    out.push(FRAME_VERSION);
    out.extend_from_slice(&meta.frame_id.to_le_bytes());
    out.extend_from_slice(&meta.timestamp_us.to_le_bytes());
    out.extend_from_slice(&meta.scale_milli.to_le_bytes());
    out.extend_from_slice(&w.to_le_bytes());
    out.extend_from_slice(&h.to_le_bytes());
    out.push(c);
    out.extend_from_slice(&len.to_le_bytes());
    out.extend_from_slice(payload);
    out.extend_from_slice(&crc32fast::hash(payload).to_le_bytes());
    Ok(out)
}

struct Header {
    meta: FrameMeta,
    width: usize,
    height: usize,
    channels: usize,
    payload_len: usize,
}

fn le<const N: usize>(b: &[u8], at: usize) -> [u8; N] {
    b[at..at + N].try_into().expect("slice of length N")
}

fn parse_header(b: &[u8]) -> Result<Header, FrameError> {
    if b.len() < HEADER_LEN {
        return Err(FrameError::TruncatedFrame {
            needed: HEADER_LEN,
            have: b.len(),
        });
    }
    let magic: [u8; 4] = le(b, 0);
    if magic != FRAME_MAGIC {
        return Err(FrameError::BadMagic(magic));
    }
    if b[4] != FRAME_VERSION {
        return Err(FrameError::UnsupportedVersion(b[4]));
    }
    let h = Header {
        meta: FrameMeta {
            frame_id: u64::from_le_bytes(le(b, 5)),
            timestamp_us: u64::from_le_bytes(le(b, 13)),
            scale_milli: u16::from_le_bytes(le(b, 21)),
        },
        width: u16::from_le_bytes(le(b, 23)) as usize,
        height: u16::from_le_bytes(le(b, 25)) as usize,
        channels: b[27] as usize,
        payload_len: u32::from_le_bytes(le(b, 28)) as usize,
    };
    if h.payload_len != h.width * h.height * h.channels {
        return Err(FrameError::MalformedHeader(format!(
            "payload_len {} but {}x{}x{} image",
            h.payload_len, h.width, h.height, h.channels
        )));
    }
    Ok(h)
}

pub fn decode_frame(bytes: &[u8]) -> Result<(RasterImage, FrameMeta), FrameError> {
    let h = parse_header(bytes)?;
    let needed = HEADER_LEN + h.payload_len + CRC_LEN;
    if bytes.len() < needed {
        return Err(FrameError::TruncatedFrame {
            needed,
            have: bytes.len(),
        });
    }
    if bytes.len() > needed {
        return Err(FrameError::MalformedHeader(format!(
            "{} trailing bytes after frame",
            bytes.len() - needed
        )));
    }
    let payload = &bytes[HEADER_LEN..HEADER_LEN + h.payload_len];
    let expected = u32::from_le_bytes(le(bytes, HEADER_LEN + h.payload_len));
    let actual = crc32fast::hash(payload);
    if expected != actual {
        return Err(FrameError::CrcMismatch { expected, actual });
    }
    let img = RasterImage::new(h.height, h.width, h.channels, payload.to_vec())
        .map_err(|e| FrameError::MalformedHeader(e.to_string()))?;
    Ok((img, h.meta))
}

/// Reads exactly one frame from a byte stream. A malformed header is
/// reported as `InvalidData` wrapping the [`FrameError`].
pub fn read_frame<R: Read>(r: &mut R) -> Result<Vec<u8>, std::io::Error> {
    let mut buf = vec![0u8; HEADER_LEN];
    r.read_exact(&mut buf)?;
    let total = match parse_header(&buf) {
        Ok(h) => HEADER_LEN + h.payload_len + CRC_LEN,
        Err(e) => return Err(std::io::Error::new(std::io::ErrorKind::InvalidData, e)),
    };
    buf.resize(total, 0);
    r.read_exact(&mut buf[HEADER_LEN..])?;
    Ok(buf)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn image(h: usize, w: usize, c: usize, data: &[u8]) -> RasterImage {
        RasterImage::new(h, w, c, data[..h * w * c].to_vec()).unwrap()
    }

    #[test]
    fn layout_is_bit_exact() {
        let img = image(2, 2, 3, &(0..12).collect::<Vec<u8>>());
        let meta = FrameMeta::new(7, 1_000_001, 0.5);
        let b = encode_frame(&img, &meta).unwrap();
        assert_eq!(b.len(), 32 + 12 + 4);
        assert_eq!(&b[0..4], b"V2XF");
        assert_eq!(b[4], 1);
        assert_eq!(&b[5..13], &7u64.to_le_bytes());
        assert_eq!(&b[13..21], &1_000_001u64.to_le_bytes());
        assert_eq!(&b[21..23], &500u16.to_le_bytes());
        assert_eq!(&b[23..25], &2u16.to_le_bytes());
        assert_eq!(&b[25..27], &2u16.to_le_bytes());
        assert_eq!(b[27], 3);
        assert_eq!(&b[28..32], &12u32.to_le_bytes());
        assert_eq!(&b[32..44], img.data());
        assert_eq!(decode_frame(&b).unwrap(), (img, meta));
    }

    #[test]
    fn corruption_detected() {
        let img = image(2, 2, 3, &[9; 12]);
        let b = encode_frame(&img, &FrameMeta::new(1, 2, 1.0)).unwrap();
        let mut bad = b.clone();
        bad[40] ^= 1;
        assert!(matches!(decode_frame(&bad), Err(FrameError::CrcMismatch { .. })));
        let mut bad = b.clone();
        bad[0] = b'X';
        assert!(matches!(decode_frame(&bad), Err(FrameError::BadMagic(_))));
        let mut bad = b.clone();
        bad[4] = 2;
        assert_eq!(decode_frame(&bad), Err(FrameError::UnsupportedVersion(2)));
        let mut bad = b.clone();
        bad[28] = 11;
        assert!(matches!(decode_frame(&bad), Err(FrameError::MalformedHeader(_))));
        assert!(matches!(decode_frame(&b[..40]), Err(FrameError::TruncatedFrame { .. })));
        assert!(matches!(decode_frame(&b[..10]), Err(FrameError::TruncatedFrame { .. })));
    }

    #[test]
    fn stream_reader_splits_frames() {
        let a = encode_frame(&image(1, 2, 3, &[1; 6]), &FrameMeta::new(1, 0, 1.0)).unwrap();
        let b = encode_frame(&image(2, 1, 3, &[2; 6]), &FrameMeta::new(2, 0, 1.0)).unwrap();
        let joined = [a.clone(), b.clone()].concat();
        let mut cur = std::io::Cursor::new(joined);
        assert_eq!(read_frame(&mut cur).unwrap(), a);
        assert_eq!(read_frame(&mut cur).unwrap(), b);
        assert!(read_frame(&mut cur).is_err());
    }

    proptest! {
        #[test]
        fn round_trip_and_single_flip(h in 1usize..9, w in 1usize..9, data in prop::collection::vec(any::<u8>(), 192),
                                      id in any::<u64>(), flip in any::<prop::sample::Index>(), bit in 0u8..8) {
            let img = image(h, w, 3, &data);
            let meta = FrameMeta { frame_id: id, timestamp_us: id ^ 0xabc, scale_milli: 250 };
            let b = encode_frame(&img, &meta).unwrap();
            prop_assert_eq!(b.len(), 32 + h * w * 3 + 4);
            prop_assert_eq!(decode_frame(&b).unwrap(), (img, meta));
            let mut bad = b.clone();
            let at = 32 + flip.index(h * w * 3);
            bad[at] ^= 1 << bit;
            prop_assert!(matches!(decode_frame(&bad), Err(FrameError::CrcMismatch { .. })), "flip at {} undetected", at);
        }
    }
}
