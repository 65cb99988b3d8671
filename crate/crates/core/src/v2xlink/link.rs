use serde::{Deserialize, Serialize};

use super::LinkError;
use crate::raster::RasterImage;

/// Roadside camera stream parameters: frame size, rate and downsampling factor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinkConfig {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    /// Frames per second.
    pub freq: f64,
    pub scale: f64,
}

impl LinkConfig {
    pub fn new(width: usize, height: usize, channels: usize, freq: f64, scale: f64) -> Result<Self, LinkError> {
        check_scale(scale)?;
        if width == 0 || height == 0 || channels == 0 || !(freq.is_finite() && freq > 0.0) {
            return Err(LinkError::InvalidConfig(format!(
                "{width}x{height}x{channels} at {freq} Hz"
            )));
        }
        Ok(Self {
            width,
            height,
            channels,
            freq,
            scale,
        })
    }

    /// 1920×1080 RGB at 2 Hz.
    pub fn full_hd(scale: f64) -> Result<Self, LinkError> {
        Self::new(1920, 1080, 3, 2.0, scale)
    }

    /// `s²·W·H·C·f` before rounding.
    pub fn bps_exact(&self) -> f64 {
        self.scale * self.scale * (self.width * self.height * self.channels) as f64 * self.freq
    }

    /// Transmitted frame size `(⌊sH⌋, ⌊sW⌋)`.
    pub fn frame_dims(&self) -> (usize, usize) {
        (scaled_dim(self.height, self.scale), scaled_dim(self.width, self.scale))
    }

    pub fn payload_bytes(&self) -> usize {
        let (h, w) = self.frame_dims();
        h * w * self.channels
    }
}

/// Required link bandwidth in bytes per second, rounded to an integer.
pub fn bps(cfg: &LinkConfig) -> u64 {
    cfg.bps_exact().round() as u64
}

/// Three significant figures in `1.24e7` style.
pub fn format_sci3(v: f64) -> String {
    if v == 0.0 {
        return "0".to_string();
    }
    format!("{v:.2e}")
}

pub(crate) fn check_scale(scale: f64) -> Result<(), LinkError> {
    if scale.is_finite() && scale > 0.0 && scale <= 1.0 {
        Ok(())
    } else {
        Err(LinkError::InvalidScale(scale))
    }
}

fn scaled_dim(n: usize, s: f64) -> usize {
    // Guard against 0.1·1080 landing a hair under 108.
    (n as f64 * s + 1e-9).floor() as usize
}

/// Overlap weights of each output cell with the input cells on one axis.
fn area_weights(n_in: usize, n_out: usize) -> Vec<Vec<(usize, f64)>> {
    let ratio = n_in as f64 / n_out as f64;
    (0..n_out)
        .map(|o| {
            let (lo, hi) = (o as f64 * ratio, (o + 1) as f64 * ratio);
            let first = lo.floor() as usize;
            let last = (hi.ceil() as usize).min(n_in);
            (first..last)
                .filter_map(|i| {
                    let w = (hi.min(i as f64 + 1.0) - lo.max(i as f64)).max(0.0);
                    (w > 0.0).then_some((i, w))
                })
                .collect()
        })
        .collect()
}

/// Area-average resampling to `(⌊sH⌋, ⌊sW⌋)`; `s = 1` returns the input unchanged.
pub fn downsample(img: &RasterImage, scale: f64) -> Result<RasterImage, LinkError> {
    check_scale(scale)?;
    if scale == 1.0 {
        return Ok(img.clone());
    }
    let (h, w) = (scaled_dim(img.height(), scale), scaled_dim(img.width(), scale));
    if h == 0 || w == 0 {
        return Err(LinkError::DegenerateDimensions { height: h, width: w });
    }
    let rows = area_weights(img.height(), h);
    let cols = area_weights(img.width(), w);
    let c = img.channels();
    let mut out = RasterImage::filled(h, w, c, 0);
    let mut acc = vec![0.0; c];
    for (r, rw) in rows.iter().enumerate() {
        for (col, cw) in cols.iter().enumerate() {
            acc.iter_mut().for_each(|a| *a = 0.0);
            let mut total = 0.0;
            for &(i, wi) in rw {
                for &(j, wj) in cw {
                    let wt = wi * wj;
                    total += wt;
                    for (a, &p) in acc.iter_mut().zip(img.pixel(i, j)) {
                        *a += wt * p as f64;
                    }
                }
            }
            let px: Vec<u8> = acc.iter().map(|a| (a / total).round().clamp(0.0, 255.0) as u8).collect();
            out.put(r, col, &px);
        }
    }
    Ok(out)
}

/// Bilinear resampling with half-pixel centers to `height × width`.
pub fn upsample(img: &RasterImage, height: usize, width: usize) -> Result<RasterImage, LinkError> {
    if height == 0 || width == 0 || img.height() == 0 || img.width() == 0 {
        return Err(LinkError::DegenerateDimensions { height, width });
    }
    if (height, width) == (img.height(), img.width()) {
        return Ok(img.clone());
    }
    let taps = |n_in: usize, n_out: usize| -> Vec<(usize, usize, f64)> {
        let ratio = n_in as f64 / n_out as f64;
        (0..n_out)
            .map(|o| {
                let src = ((o as f64 + 0.5) * ratio - 0.5).clamp(0.0, (n_in - 1) as f64);
                let i0 = src.floor() as usize;
                let i1 = (i0 + 1).min(n_in - 1);
                (i0, i1, src - i0 as f64)
            })
            .collect()
    };
    let rt = taps(img.height(), height);
    let ct = taps(img.width(), width);
    let c = img.channels();
    let mut out = RasterImage::filled(height, width, c, 0);
    let mut px = vec![0u8; c];
    for (r, &(r0, r1, fr)) in rt.iter().enumerate() {
        for (col, &(c0, c1, fc)) in ct.iter().enumerate() {
            for (k, p) in px.iter_mut().enumerate() {
                let v = |i: usize, j: usize| img.pixel(i, j)[k] as f64;
                let top = v(r0, c0) * (1.0 - fc) + v(r0, c1) * fc;
                let bottom = v(r1, c0) * (1.0 - fc) + v(r1, c1) * fc;
                *p = (top * (1.0 - fr) + bottom * fr).round().clamp(0.0, 255.0) as u8;
            }
            out.put(r, col, &px);
        }
    }
    Ok(out)
}
