//! 8-bit interleaved raster images and the raw dump format used on disk.
//!
//! Raw dump layout (all integers little-endian):
//!
//! | offset | size | field                     |
//! |--------|------|---------------------------|
//! | 0      | 4    | magic `b"V2XR"`           |
//! | 4      | 2    | height                    |
//! | 6      | 2    | width                     |
//! | 8      | 1    | channels                  |
//! | 9      | h·w·c| row-major interleaved u8  |

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const RAW_MAGIC: &[u8; 4] = b"V2XR";
const RAW_HEADER_LEN: usize = 9;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RasterError {
    #[error("pixel buffer has {found} bytes, expected {expected}")]
    BufferSize { expected: usize, found: usize },
    #[error("raw dump does not start with V2XR")]
    BadMagic,
    #[error("raw dump truncated")]
    Truncated,
    #[error("image dimensions {0}x{1} do not fit the raw header")]
    TooLarge(usize, usize),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RasterImage {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<u8>,
}

impl RasterImage {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<u8>) -> Result<Self, RasterError> {
        let expected = height * width * channels;
        if data.len() != expected {
            return Err(RasterError::BufferSize {
                expected,
                found: data.len(),
            });
        }
        Ok(Self {
            height,
            width,
            channels,
            data,
        })
    }

    pub fn filled(height: usize, width: usize, channels: usize, value: u8) -> Self {
        Self {
            height,
            width,
            channels,
            data: vec![value; height * width * channels],
        }
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn channels(&self) -> usize {
        self.channels
    }

    #[inline]
    pub fn data(&self) -> &[u8] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [u8] {
        &mut self.data
    }

    #[inline]
    pub fn pixel(&self, row: usize, col: usize) -> &[u8] {
        let i = (row * self.width + col) * self.channels;
        &self.data[i..i + self.channels]
    }

    #[inline]
    pub fn put(&mut self, row: usize, col: usize, rgb: &[u8]) {
        let i = (row * self.width + col) * self.channels;
        self.data[i..i + self.channels].copy_from_slice(&rgb[..self.channels]);
    }

    pub fn to_raw(&self) -> Result<Vec<u8>, RasterError> {
        if self.height > u16::MAX as usize || self.width > u16::MAX as usize || self.channels > u8::MAX as usize {
            return Err(RasterError::TooLarge(self.height, self.width));
        }
        let mut out = Vec::with_capacity(RAW_HEADER_LEN + self.data.len());
        out.extend_from_slice(RAW_MAGIC);
        out.extend_from_slice(&(self.height as u16).to_le_bytes());
        out.extend_from_slice(&(self.width as u16).to_le_bytes());
        out.push(self.channels as u8);
        out.extend_from_slice(&self.data);
        Ok(out)
    }

    pub fn from_raw(bytes: &[u8]) -> Result<Self, RasterError> {
        if bytes.len() < RAW_HEADER_LEN {
            return Err(RasterError::Truncated);
        }
        if &bytes[..4] != RAW_MAGIC {
            return Err(RasterError::BadMagic);
        }
        let height = u16::from_le_bytes([bytes[4], bytes[5]]) as usize;
        let width = u16::from_le_bytes([bytes[6], bytes[7]]) as usize;
        let channels = bytes[8] as usize;
        let body = &bytes[RAW_HEADER_LEN..];
        if body.len() != height * width * channels {
            return Err(RasterError::Truncated);
        }
        Self::new(height, width, channels, body.to_vec())
    }
}
