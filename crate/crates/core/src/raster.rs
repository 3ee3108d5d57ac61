//! Minimal 8-bit raster model: crop, bilinear resize, zero padding, GSD
//! normalization and file IO (PNG or headerless raw with a JSON sidecar).

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geo::{GeoError, GeoTransform};

/// Ground sample distance the detectors expect.
pub const DEFAULT_TARGET_GSD: f64 = 0.3;
/// Imagery coarser than this is upsampled before detection.
pub const DEFAULT_UPSAMPLE_TRIGGER_GSD: f64 = 0.4;
/// Upsampling factors above this are refused.
pub const MAX_UPSAMPLE: f64 = 8.0;

#[derive(Debug, Error)]
pub enum RasterError {
    #[error("raster shape {width}x{height}x{channels} does not match {len} bytes")]
    ShapeMismatch {
        width: usize,
        height: usize,
        channels: usize,
        len: usize,
    },
    #[error("unsupported channel count {0}")]
    UnsupportedChannels(usize),
    #[error("crop window does not intersect the raster")]
    EmptyCrop,
    #[error("resize by {scale} gives a degenerate {width}x{height} raster")]
    DegenerateResize { scale: f64, width: i64, height: i64 },
    #[error("upsampling by {0:.3} exceeds the limit of {MAX_UPSAMPLE}")]
    ExcessiveUpsample(f64),
    #[error("non-square pixels (gsd_x={gsd_x}, gsd_y={gsd_y})")]
    NonSquarePixels { gsd_x: f64, gsd_y: f64 },
    #[error("invalid target gsd {0}")]
    InvalidTarget(f64),
    #[error(transparent)]
    Geo(#[from] GeoError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },
}

#[derive(Clone, PartialEq, Eq)]
pub struct Raster {
    width: usize,
    height: usize,
    channels: usize,
    pixels: Vec<u8>,
}

impl std::fmt::Debug for Raster {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Raster")
            .field("width", &self.width)
            .field("height", &self.height)
            .field("channels", &self.channels)
            .finish_non_exhaustive()
    }
}

impl Raster {
    pub fn new(width: usize, height: usize, channels: usize, pixels: Vec<u8>) -> Result<Self, RasterError> {
        if channels != 1 && channels != 3 {
            return Err(RasterError::UnsupportedChannels(channels));
        }
        if width == 0 || height == 0 || pixels.len() != width * height * channels {
            return Err(RasterError::ShapeMismatch {
                width,
                height,
                channels,
                len: pixels.len(),
            });
        }
        Ok(Self {
            width,
            height,
            channels,
            pixels,
        })
    }

    pub fn filled(width: usize, height: usize, channels: usize, value: u8) -> Result<Self, RasterError> {
        Self::new(width, height, channels, vec![value; width * height * channels])
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn into_pixels(self) -> Vec<u8> {
        self.pixels
    }

    pub fn pixel(&self, x: usize, y: usize) -> &[u8] {
        let i = (y * self.width + x) * self.channels;
        &self.pixels[i..i + self.channels]
    }

    /// Fill the half-open window `[x1, x2) x [y1, y2)` (clamped) with `color`.
    pub fn fill_rect(&mut self, x1: usize, y1: usize, x2: usize, y2: usize, color: &[u8]) {
        let (x2, y2) = (x2.min(self.width), y2.min(self.height));
        for y in y1..y2 {
            for x in x1..x2 {
                let i = (y * self.width + x) * self.channels;
                for c in 0..self.channels {
                    self.pixels[i + c] = color[c % color.len()];
                }
            }
        }
    }

    /// Copy the half-open window `[x1, x2) x [y1, y2)` after clamping it to
    /// the raster bounds.
    pub fn crop(&self, x1: i64, y1: i64, x2: i64, y2: i64) -> Result<Raster, RasterError> {
        let cx = |v: i64| v.clamp(0, self.width as i64) as usize;
        let cy = |v: i64| v.clamp(0, self.height as i64) as usize;
        let (x1, x2, y1, y2) = (cx(x1), cx(x2), cy(y1), cy(y2));
        if x2 <= x1 || y2 <= y1 {
            return Err(RasterError::EmptyCrop);
        }
        let (w, h) = (x2 - x1, y2 - y1);
        let row = w * self.channels;
        let mut pixels = Vec::with_capacity(row * h);
        for y in y1..y2 {
            let start = (y * self.width + x1) * self.channels;
            pixels.extend_from_slice(&self.pixels[start..start + row]);
        }
        Ok(Raster {
            width: w,
            height: h,
            channels: self.channels,
            pixels,
        })
    }

    /// Zero-pad on the right and bottom up to `width x height`. Dimensions
    /// already at least that large are kept.
    pub fn pad_to(&self, width: usize, height: usize) -> Raster {
        let (w, h) = (width.max(self.width), height.max(self.height));
        if (w, h) == (self.width, self.height) {
            return self.clone();
        }
        let mut pixels = vec![0u8; w * h * self.channels];
        let row = self.width * self.channels;
        for y in 0..self.height {
            let dst = y * w * self.channels;
            pixels[dst..dst + row].copy_from_slice(&self.pixels[y * row..(y + 1) * row]);
        }
        Raster {
            width: w,
            height: h,
            channels: self.channels,
            pixels,
        }
    }

    /// Extract a `block x block` window at `(x, y)`, zero-padding whatever
    /// falls outside the raster.
    pub fn block(&self, x: usize, y: usize, block: usize) -> Result<Raster, RasterError> {
        let window = self.crop(x as i64, y as i64, (x + block) as i64, (y + block) as i64)?;
        Ok(window.pad_to(block, block))
    }

    /// Bilinear resize with half-pixel-center alignment. Output dimensions are
    /// `round(width * scale)` by `round(height * scale)`.
    pub fn resize(&self, scale: f64) -> Result<Raster, RasterError> {
        let out_w = (self.width as f64 * scale).round();
        let out_h = (self.height as f64 * scale).round();
        if !scale.is_finite() || scale <= 0.0 || out_w < 1.0 || out_h < 1.0 {
            return Err(RasterError::DegenerateResize {
                scale,
                width: out_w as i64,
                height: out_h as i64,
            });
        }
        let (out_w, out_h) = (out_w as usize, out_h as usize);
        if (out_w, out_h) == (self.width, self.height) {
            return Ok(self.clone());
        }
        let fx = self.width as f64 / out_w as f64;
        let fy = self.height as f64 / out_h as f64;
        let taps = |dst: usize, ratio: f64, len: usize| {
            let src = ((dst as f64 + 0.5) * ratio - 0.5).clamp(0.0, (len - 1) as f64);
            let i0 = src.floor() as usize;
            let i1 = (i0 + 1).min(len - 1);
            (i0, i1, src - i0 as f64)
        };
        let xs: Vec<_> = (0..out_w).map(|x| taps(x, fx, self.width)).collect();
        let ch = self.channels;
        let mut pixels = Vec::with_capacity(out_w * out_h * ch);
        for y in 0..out_h {
            let (y0, y1, wy) = taps(y, fy, self.height);
            let r0 = &self.pixels[y0 * self.width * ch..(y0 + 1) * self.width * ch];
            let r1 = &self.pixels[y1 * self.width * ch..(y1 + 1) * self.width * ch];
            for &(x0, x1, wx) in &xs {
                for c in 0..ch {
                    let top = r0[x0 * ch + c] as f64 * (1.0 - wx) + r0[x1 * ch + c] as f64 * wx;
                    let bottom = r1[x0 * ch + c] as f64 * (1.0 - wx) + r1[x1 * ch + c] as f64 * wx;
                    let v = top * (1.0 - wy) + bottom * wy;
                    pixels.push(v.round().clamp(0.0, 255.0) as u8);
                }
            }
        }
        Ok(Raster {
            width: out_w,
            height: out_h,
            channels: ch,
            pixels,
        })
    }
}

/// A georeferenced ROI crop taken at one acquisition time.
#[derive(Debug, Clone, PartialEq)]
pub struct RoiImage {
    pub roi_id: String,
    pub raster: Raster,
    pub transform: GeoTransform,
    pub timestamp: String,
}

/// Scale factor that brings a transform's GSD to `target_gsd`, or `1.0`
/// when they are within 1% of each other.
pub fn gsd_scale(transform: &GeoTransform, target_gsd: f64) -> Result<f64, RasterError> {
    transform.validate()?;
    if !target_gsd.is_finite() || target_gsd <= 0.0 {
        return Err(RasterError::InvalidTarget(target_gsd));
    }
    let (gx, gy) = (transform.gsd_x, transform.gsd_y);
    if (gx - gy).abs() > 1e-9 * gx.max(gy) {
        return Err(RasterError::NonSquarePixels { gsd_x: gx, gsd_y: gy });
    }
    let scale = gx / target_gsd;
    if scale > MAX_UPSAMPLE {
        return Err(RasterError::ExcessiveUpsample(scale));
    }
    Ok(if (scale - 1.0).abs() < 0.01 { 1.0 } else { scale })
}

/// Resample an ROI so its pixels cover `target_gsd` meters. Returns the new
/// image and the applied scale.
pub fn upsample_to_gsd(img: &RoiImage, target_gsd: f64) -> Result<(RoiImage, f64), RasterError> {
    let scale = gsd_scale(&img.transform, target_gsd)?;
    let mut out = img.clone();
    if scale != 1.0 {
        out.raster = img.raster.resize(scale)?;
        // the first output pixel center sits at this source coordinate
        let shift = 0.5 / scale - 0.5;
        out.transform.origin = img.transform.pixel_to_geo(shift, shift);
    }
    out.transform.gsd_x = target_gsd;
    out.transform.gsd_y = target_gsd;
    Ok((out, scale))
}

/// Decides when imagery is coarse enough to be upsampled.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct UpsamplePolicy {
    pub target_gsd: f64,
    pub trigger_gsd: f64,
}

impl Default for UpsamplePolicy {
    fn default() -> Self {
        Self {
            target_gsd: DEFAULT_TARGET_GSD,
            trigger_gsd: DEFAULT_UPSAMPLE_TRIGGER_GSD,
        }
    }
}

impl UpsamplePolicy {
    /// Scale to apply to an image with this transform (1.0 when the image is
    /// fine enough already).
    pub fn scale_for(&self, transform: &GeoTransform) -> Result<f64, RasterError> {
        if transform.gsd_x.max(transform.gsd_y) > self.trigger_gsd {
            gsd_scale(transform, self.target_gsd)
        } else {
            Ok(1.0)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawHeader {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> RasterError + '_ {
    move |source| RasterError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn format_err(path: &Path, message: impl ToString) -> RasterError {
    RasterError::Format {
        path: path.to_path_buf(),
        message: message.to_string(),
    }
}

/// Sidecar for a raw raster: same path with a `.json` extension.
pub fn raw_sidecar(path: &Path) -> PathBuf {
    path.with_extension("json")
}

pub fn read_raw(path: &Path) -> Result<Raster, RasterError> {
    let side = raw_sidecar(path);
    let header: RawHeader = serde_json::from_slice(&std::fs::read(&side).map_err(io_err(&side))?)
        .map_err(|e| format_err(&side, e))?;
    let pixels = std::fs::read(path).map_err(io_err(path))?;
    Raster::new(header.width, header.height, header.channels, pixels)
}

pub fn write_raw(path: &Path, r: &Raster) -> Result<(), RasterError> {
    let header = RawHeader {
        width: r.width,
        height: r.height,
        channels: r.channels,
    };
    let side = raw_sidecar(path);
    std::fs::write(&side, serde_json::to_vec(&header).expect("header serializes")).map_err(io_err(&side))?;
    std::fs::write(path, &r.pixels).map_err(io_err(path))
}

pub fn read_png(path: &Path) -> Result<Raster, RasterError> {
    let file = File::open(path).map_err(io_err(path))?;
    let mut decoder = png::Decoder::new(BufReader::new(file));
    decoder.set_transformations(png::Transformations::EXPAND | png::Transformations::STRIP_16);
    let mut reader = decoder.read_info().map_err(|e| format_err(path, e))?;
    let size = reader.output_buffer_size().ok_or_else(|| format_err(path, "image too large"))?;
    let mut buf = vec![0; size];
    let info = reader.next_frame(&mut buf).map_err(|e| format_err(path, e))?;
    buf.truncate(info.buffer_size());
    let (w, h) = (info.width as usize, info.height as usize);
    let pixels = match info.color_type {
        png::ColorType::Grayscale => return Raster::new(w, h, 1, buf),
        png::ColorType::Rgb => return Raster::new(w, h, 3, buf),
        png::ColorType::GrayscaleAlpha => buf.chunks_exact(2).map(|p| p[0]).collect(),
        png::ColorType::Rgba => buf.chunks_exact(4).flat_map(|p| [p[0], p[1], p[2]]).collect(),
        png::ColorType::Indexed => return Err(format_err(path, "unexpanded palette image")),
    };
    let channels = if info.color_type == png::ColorType::GrayscaleAlpha { 1 } else { 3 };
    Raster::new(w, h, channels, pixels)
}

pub fn write_png(path: &Path, r: &Raster) -> Result<(), RasterError> {
    let file = File::create(path).map_err(io_err(path))?;
    let mut enc = png::Encoder::new(BufWriter::new(file), r.width as u32, r.height as u32);
    enc.set_color(if r.channels == 1 {
        png::ColorType::Grayscale
    } else {
        png::ColorType::Rgb
    });
    enc.set_depth(png::BitDepth::Eight);
    let mut w = enc.write_header().map_err(|e| format_err(path, e))?;
    w.write_image_data(&r.pixels).map_err(|e| format_err(path, e))?;
    w.finish().map_err(|e| format_err(path, e))
}

/// Read a PNG or, for any other extension, a raw raster with its sidecar.
pub fn read_raster(path: &Path) -> Result<Raster, RasterError> {
    match path.extension().and_then(|e| e.to_str()) {
        Some(ext) if ext.eq_ignore_ascii_case("png") => read_png(path),
        _ => read_raw(path),
    }
}

pub fn write_raster(path: &Path, r: &Raster) -> Result<(), RasterError> {
    match path.extension().and_then(|e| e.to_str()) {
        Some(ext) if ext.eq_ignore_ascii_case("png") => write_png(path, r),
        _ => write_raw(path, r),
    }
}
